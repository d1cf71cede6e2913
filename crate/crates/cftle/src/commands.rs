//! One function per subcommand. Each returns the files it produced plus
//! warnings; `run` wraps a command with timing and the run manifest.

use std::path::{Path, PathBuf};
use std::time::Instant;

use cftle_core::diagnostics::{
    accumulated_state_error_field, advect_patches, check_grad_jf, check_hjb_relation, energy_field, field_distance,
    interior_argmax, lowest_sigma_site, ridge_normal, terminal_cost_field, PatchSpec, PatchTrack,
};
use cftle_core::ftle::{extract_ridges, ftle_field, quality_warning, quantile, ridge_centroid};
use cftle_core::ocp::Ocp;
use cftle_core::odeint::StepSpec;
use cftle_core::policy::{
    controlled_field, generate_mpc_policy, reverse_policy_periodic, GenerationReport, MpcPolicySpec, PolicyGrid,
    ReversedControlledField, PERIOD_TOLERANCE,
};
use cftle_core::{AnalyticFlow, Executor, GridSpec, ScalarField, Vec2, VelocityField};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{OcpParts, RunConfig};
use crate::error::{CliError, CliResult};
use crate::exec::RayonExecutor;
use crate::fieldfile::{mask_to_field, read_field, field_to_mask, write_field, FieldHeader};
use crate::io::{write_atomic, write_json};
use crate::manifest::{unix_now, versions, write_manifest, Manifest};
use crate::policyfile::{read_policy, write_policy};
use crate::render::render_pgm;

pub struct Context {
    pub out_dir: PathBuf,
    pub exec: RayonExecutor,
    pub config_hash: String,
    /// `--policy` flag; overrides `policy.path` from the config.
    pub policy_path: Option<PathBuf>,
    pub seedless: bool,
}

#[derive(Debug, Default)]
pub struct Outcome {
    pub outputs: Vec<PathBuf>,
    pub warnings: Vec<String>,
    /// Set when a requested output could not be produced; the others were
    /// still written.
    pub failure: Option<CliError>,
}

impl Outcome {
    fn fail(&mut self, err: CliError) {
        self.warnings.push(err.to_string());
        if self.failure.is_none() {
            self.failure = Some(err);
        }
    }
}

impl Context {
    pub fn new(out_dir: PathBuf, threads: usize, config_hash: String) -> CliResult<Self> {
        Ok(Context { out_dir, exec: RayonExecutor::new(threads)?, config_hash, policy_path: None, seedless: false })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn save_field(
        &self,
        out: &mut Outcome,
        name: &str,
        quantity: &str,
        field: &ScalarField,
        t0: Option<f64>,
        t_a: Option<f64>,
    ) -> CliResult<()> {
        let path = self.path(&format!("{name}.field"));
        write_field(&path, &FieldHeader::new(quantity, field, t0, t_a, &self.config_hash), field)?;
        out.outputs.push(path);
        Ok(())
    }

    fn save_json(&self, out: &mut Outcome, name: &str, value: &impl Serialize) -> CliResult<()> {
        let path = self.path(name);
        write_json(&path, value)?;
        out.outputs.push(path);
        Ok(())
    }
}

/// Runs `f`, then writes `<command>.manifest.json` whatever the result.
/// Returns the process exit code.
pub fn run(
    command: &str,
    cfg: &RunConfig,
    config_path: Option<&Path>,
    ctx: &Context,
    f: impl FnOnce(&RunConfig, &Context) -> CliResult<Outcome>,
) -> i32 {
    let started = unix_now();
    let clock = Instant::now();
    let (outcome, err) = match f(cfg, ctx) {
        Ok(mut o) => {
            let e = o.failure.take();
            (o, e)
        }
        Err(e) => (Outcome::default(), Some(e)),
    };
    let code = err.as_ref().map_or(0, CliError::exit_code);
    let manifest = Manifest {
        command,
        config_path,
        config_hash: &ctx.config_hash,
        config: cfg,
        versions: versions(),
        threads: ctx.exec.threads(),
        seedless: ctx.seedless,
        random_sources: Vec::new(),
        started_unix_s: started,
        wall_time_s: clock.elapsed().as_secs_f64(),
        status: if code == 0 { "ok" } else { "failed" },
        exit_code: code,
        error: err.as_ref().map(ToString::to_string),
        warnings: &outcome.warnings,
        outputs: &outcome.outputs,
    };
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(e) = &err {
        eprintln!("error: {e}");
    }
    match write_manifest(&ctx.out_dir, &manifest) {
        Ok(_) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if code == 0 {
                e.exit_code()
            } else {
                code
            }
        }
    }
}

/// σ of the passive flow, or of flow plus policy when one is given.
///
/// Negative `t_a` with a policy integrates the time-reversed controlled
/// field over the periodic extension of the reversed policy. Also returns
/// how many policy lookups fell outside the policy box.
pub fn sigma<E: Executor>(
    flow: &AnalyticFlow,
    policy: Option<&PolicyGrid>,
    grid: &GridSpec,
    t0: f64,
    t_a: f64,
    spec: &StepSpec,
    exec: &E,
) -> CliResult<(ScalarField, usize)> {
    match policy {
        None => Ok((ftle_field(flow, grid, t0, t_a, spec, exec)?, 0)),
        Some(p) if t_a > 0.0 => {
            let field = controlled_field(flow, p);
            let s = ftle_field(&field, grid, t0, t_a, spec, exec)?;
            Ok((s, field.clamp_events()))
        }
        Some(p) => {
            let period = p.period.ok_or_else(|| {
                CliError::Config(format!(
                    "backward controlled FTLE needs a policy marked periodic over exactly one period; this policy spans {} and is not periodic",
                    p.span()
                ))
            })?;
            let reversed = reverse_policy_periodic(p, period)?;
            let field = ReversedControlledField { background: flow, reversed: &reversed };
            Ok((ftle_field(&field, grid, -t0, -t_a, spec, exec)?, 0))
        }
    }
}

pub fn check_policy_flow(policy: &PolicyGrid, flow: &AnalyticFlow) -> CliResult<()> {
    let expected = flow.descriptor();
    if policy.meta.flow != expected {
        return Err(CliError::Config(format!(
            "policy was generated for flow `{}` but the config describes flow `{}`",
            policy.meta.flow, expected
        )));
    }
    Ok(())
}

fn policy_path(cfg: &RunConfig, ctx: &Context) -> Option<PathBuf> {
    ctx.policy_path.clone().or_else(|| cfg.policy.path.clone())
}

/// Loads the policy named by `--policy` or the config, if any.
pub fn load_policy(cfg: &RunConfig, ctx: &Context, flow: &AnalyticFlow) -> CliResult<Option<PolicyGrid>> {
    let Some(path) = policy_path(cfg, ctx) else {
        return Ok(None);
    };
    let p = read_policy(&path)?.with_time_interp(cfg.policy.time_interp.into());
    check_policy_flow(&p, flow)?;
    Ok(Some(p))
}

fn direction_name(prefix: &str, t_a: f64) -> String {
    format!("{prefix}_{}", if t_a > 0.0 { "forward" } else { "backward" })
}

fn advection_times(cfg: &RunConfig) -> Vec<f64> {
    let t_a = cfg.time.t_a;
    if cfg.ftle.backward {
        vec![t_a, -t_a]
    } else {
        vec![t_a]
    }
}

fn write_sigma_outputs(
    cfg: &RunConfig,
    ctx: &Context,
    out: &mut Outcome,
    name: &str,
    quantity: &str,
    sigma: &ScalarField,
    t_a: f64,
) -> CliResult<()> {
    let t0 = cfg.time.t0;
    if quality_warning(sigma) {
        out.warnings.push(format!("{name}: {:.1}% of nodes are invalid", 100.0 * sigma.invalid_fraction()));
    }
    ctx.save_field(out, name, quantity, sigma, Some(t0), Some(t_a))?;
    let mask = if cfg.ftle.write_mask || cfg.render.overlay_mask {
        Some(extract_ridges(sigma, cfg.ftle.ridge_percentile)?)
    } else {
        None
    };
    if let (true, Some(m)) = (cfg.ftle.write_mask, &mask) {
        ctx.save_field(out, &format!("{name}_ridges"), "ridge_mask", &mask_to_field(sigma.grid, m), Some(t0), Some(t_a))?;
    }
    if cfg.ftle.render {
        let overlay = if cfg.render.overlay_mask { mask.as_deref() } else { None };
        let img = render_pgm(sigma, cfg.render.range.map(|[a, b]| (a, b)), overlay);
        let path = ctx.path(&format!("{name}.pgm"));
        write_atomic(&path, &img)?;
        out.outputs.push(path);
    }
    Ok(())
}

pub fn passive_ftle(cfg: &RunConfig, ctx: &Context) -> CliResult<Outcome> {
    let flow = cfg.flow.build()?;
    let grid = cfg.grid.build()?;
    let spec = cfg.time.step_spec()?;
    let mut out = Outcome::default();
    for t_a in advection_times(cfg) {
        let (s, _) = sigma(&flow, None, &grid, cfg.time.t0, t_a, &spec, &ctx.exec)?;
        write_sigma_outputs(cfg, ctx, &mut out, &direction_name("ftle", t_a), "ftle", &s, t_a)?;
    }
    Ok(out)
}

pub fn cftle(cfg: &RunConfig, ctx: &Context) -> CliResult<Outcome> {
    let flow = cfg.flow.build()?;
    let grid = cfg.grid.build()?;
    let spec = cfg.time.step_spec()?;
    let policy = load_policy(cfg, ctx, &flow)?
        .ok_or_else(|| CliError::config("policy.path", "the cftle command needs a policy (--policy or policy.path)"))?;
    let mut out = Outcome::default();
    for t_a in advection_times(cfg) {
        let (s, clamped) = sigma(&flow, Some(&policy), &grid, cfg.time.t0, t_a, &spec, &ctx.exec)?;
        if clamped > 0 {
            out.warnings.push(format!("{clamped} policy lookups fell outside the policy box and were clamped"));
        }
        write_sigma_outputs(cfg, ctx, &mut out, &direction_name("cftle", t_a), "cftle", &s, t_a)?;
    }
    Ok(out)
}

/// Generation settings for the policy described by `cfg` with OCP block `parts`.
pub fn policy_spec(cfg: &RunConfig, flow: &AnalyticFlow, parts: &OcpParts) -> CliResult<MpcPolicySpec> {
    let grid = cfg.policy_grid()?;
    let fine = cfg.grid.build()?;
    if grid.dx() + 1e-12 < fine.dx() || grid.dy() + 1e-12 < fine.dy() {
        return Err(CliError::config("policy.nx/policy.ny", "policy grid must not be finer than the FTLE grid"));
    }
    let span = cfg.policy.span();
    let period = if !cfg.policy.periodic {
        None
    } else if let Some(p) = flow.period() {
        if (span - p).abs() > PERIOD_TOLERANCE {
            return Err(CliError::config(
                "policy.n_times/policy.dt_policy",
                format!("a periodic policy must span the flow period {p}, but spans {span}"),
            ));
        }
        Some(p)
    } else {
        Some(span)
    };
    Ok(MpcPolicySpec {
        grid,
        t_start: cfg.policy.t_start,
        dt_policy: cfg.policy.dt_policy,
        n_times: cfg.policy.n_times,
        weights: parts.weights,
        goal: parts.goal,
        horizon: parts.horizon,
        bounds: parts.bounds,
        options: parts.options,
        period,
        flow_descriptor: flow.descriptor(),
    })
}

pub fn generation_summary(policy: &PolicyGrid, report: &GenerationReport, wall_time_s: f64) -> Value {
    let u_max = policy.meta.u_max;
    let max_abs = policy.controls.iter().map(|u| u.max_abs()).fold(0.0, f64::max);
    let violations = policy.controls.iter().filter(|u| u.max_abs() > u_max).count();
    json!({
        "solves": report.solves,
        "nonconverged_count": report.nonconverged.len(),
        "nonconverged_first": report.nonconverged.iter().take(50).collect::<Vec<_>>(),
        "total_iterations": report.total_iterations,
        "max_abs_u": max_abs,
        "bound_violations": violations,
        "wall_time_s": wall_time_s,
        "periodic": policy.period.is_some(),
        "period": policy.period,
    })
}

pub fn gen_policy(cfg: &RunConfig, ctx: &Context) -> CliResult<Outcome> {
    let flow = cfg.flow.build()?;
    let parts = cfg.ocp.build()?;
    let spec = policy_spec(cfg, &flow, &parts)?;
    let clock = Instant::now();
    let (policy, report) = generate_mpc_policy(&flow, &spec, &ctx.exec)?;
    let mut out = Outcome::default();
    if !report.nonconverged.is_empty() {
        out.warnings.push(format!("{} of {} solves hit the iteration cap or stalled", report.nonconverged.len(), report.solves));
    }
    let path = ctx.policy_path.clone().unwrap_or_else(|| ctx.path("policy.pol"));
    write_policy(&path, &policy)?;
    out.outputs.push(path);
    let summary = generation_summary(&policy, &report, clock.elapsed().as_secs_f64());
    ctx.save_json(&mut out, "policy_report.json", &summary)?;
    Ok(out)
}

fn hjb_samples(cfg: &RunConfig) -> CliResult<Vec<Vec2>> {
    let g = cfg.policy_grid()?;
    let s = cfg.diagnostics.hjb_stride;
    let mut pts = Vec::new();
    for j in (1..g.ny.saturating_sub(1)).step_by(s) {
        for i in (1..g.nx.saturating_sub(1)).step_by(s) {
            pts.push(g.node(i, j));
        }
    }
    Ok(pts)
}

fn median_or_null(values: &[f64]) -> Value {
    quantile(values, 0.5).map_or(Value::Null, |m| json!(m))
}

pub fn diagnostics(cfg: &RunConfig, ctx: &Context) -> CliResult<Outcome> {
    let flow = cfg.flow.build()?;
    let grid = cfg.grid.build()?;
    let spec = cfg.time.step_spec()?;
    let parts = cfg.ocp.build()?;
    let policy = load_policy(cfg, ctx, &flow)?;
    let (t0, t_a) = (cfg.time.t0, cfg.time.t_a);
    let goal = parts.goal.x_goal;
    let d = &cfg.diagnostics;
    let mut out = Outcome::default();
    let mut report = serde_json::Map::new();
    report.insert("controlled".into(), json!(policy.is_some()));

    let controlled = policy.as_ref().map(|p| controlled_field(&flow, p));
    let field: &dyn VelocityField = match &controlled {
        Some(c) => c,
        None => &flow,
    };

    let mut section = |name: &str, out: &mut Outcome, res: CliResult<Value>| {
        let v = match res {
            Ok(v) => v,
            Err(e) => {
                let v = json!({"status": "failed", "error": e.to_string()});
                out.fail(e);
                v
            }
        };
        report.insert(name.into(), v);
    };

    if d.terminal_cost {
        let res = (|| {
            let jf = terminal_cost_field(field, &grid, t0, t_a, goal, &spec, &ctx.exec)?;
            ctx.save_field(&mut out, "terminal_cost", "terminal_cost", &jf, Some(t0), Some(t_a))?;
            let mean_dist = jf.values.iter().map(|v| v.sqrt()).sum::<f64>() / jf.values.len() as f64;
            Ok(json!({"status": "ok", "mean": jf.values.iter().sum::<f64>() / jf.values.len() as f64, "mean_distance": mean_dist}))
        })();
        section("terminal_cost", &mut out, res);
    }
    if d.energy {
        let res = match &policy {
            None => Ok(json!({"status": "skipped", "reason": "no policy given"})),
            Some(p) => (|| {
                let t = d.energy_time.unwrap_or(t0);
                let e = energy_field(p, &grid, t);
                ctx.save_field(&mut out, "energy", "energy", &e, Some(t), None)?;
                let (lo, hi) = e.range().unwrap_or((0.0, 0.0));
                Ok(json!({"status": "ok", "time": t, "min": lo, "max": hi}))
            })(),
        };
        section("energy", &mut out, res);
    }
    let ocp = Ocp::new(&flow, parts.weights, parts.goal, parts.horizon, parts.bounds).with_options(parts.options);
    if d.state_error {
        let res = (|| {
            let pg = GridSpec::new(cfg.grid.domain()?, cfg.policy.nx, cfg.policy.ny)
                .map_err(|e| CliError::config("policy.nx/policy.ny", e))?;
            let (f, failed) = accumulated_state_error_field(&ocp, &pg, t0, &ctx.exec)?;
            ctx.save_field(&mut out, "state_error", "state_error", &f, Some(t0), None)?;
            Ok(json!({"status": "ok", "grid": [pg.nx, pg.ny], "masked_nodes": failed}))
        })();
        section("state_error", &mut out, res);
    }
    if d.grad_jf {
        let res = (|| {
            let chk = check_grad_jf(field, &grid, t0, t_a, goal, &spec, &ctx.exec)?;
            ctx.save_field(&mut out, "grad_jf_residual", "grad_jf_residual", &chk.residual, Some(t0), Some(t_a))?;
            Ok(json!({
                "status": "ok",
                "max_residual": chk.max_residual,
                "median_residual": chk.median_residual,
                "median_relative_residual": chk.median_relative,
            }))
        })();
        section("grad_jf", &mut out, res);
    }
    if d.hjb {
        let res = (|| {
            let samples = hjb_samples(cfg)?;
            let rep = check_hjb_relation(&ocp, &samples, t0, d.hjb_h, &ctx.exec)?;
            if rep.is_empty() {
                out.warnings.push("value-gradient check: no strictly interior samples".into());
            }
            let r = parts.weights.r;
            let rows: Vec<Value> = rep
                .samples
                .iter()
                .map(|s| {
                    // The same check against -(1/r)∇V, without the factor 1/2.
                    let unhalved = (-1.0 / r) * s.grad_value;
                    json!({
                        "x0": [s.x0.x, s.x0.y],
                        "control": [s.control.x, s.control.y],
                        "grad_value": [s.grad_value.x, s.grad_value.y],
                        "predicted": [s.predicted.x, s.predicted.y],
                        "angle_deg": s.angle_deg,
                        "magnitude_rel_error": s.magnitude_rel_error,
                        "ill_conditioned": s.magnitude_rel_error.is_none(),
                        "magnitude_rel_error_unhalved": s.magnitude_rel_error.map(|_| (unhalved.norm() - s.control.norm()).abs() / s.control.norm()),
                    })
                })
                .collect();
            let angles: Vec<f64> = rep.samples.iter().map(|s| s.angle_deg).collect();
            Ok(json!({
                "status": "ok",
                "relation": "u* = -grad V / (2 r)",
                "h": d.hjb_h,
                "candidates": samples.len(),
                "interior_samples": rep.samples.len(),
                "excluded_saturated": rep.excluded_saturated,
                "excluded_unconverged": rep.excluded_unconverged,
                "warning": rep.is_empty().then_some("no strictly interior samples"),
                "max_angle_deg": rep.max_angle_deg(),
                "median_angle_deg": median_or_null(&angles),
                "max_magnitude_rel_error": rep.max_magnitude_error(),
                "samples": rows,
            }))
        })();
        section("hjb", &mut out, res);
    }
    ctx.save_json(&mut out, "diagnostics_report.json", &Value::Object(report))?;
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub param: String,
    pub value: String,
    pub status: String,
    pub field: Option<String>,
    pub policy: Option<String>,
    pub distance_to_passive: Option<f64>,
    pub ridge_centroid_x: Option<f64>,
    pub nonconverged: Option<usize>,
}

struct SweepItem {
    param: &'static str,
    label: String,
    cfg: RunConfig,
}

fn sweep_items(cfg: &RunConfig) -> CliResult<Vec<SweepItem>> {
    let s = &cfg.sweep;
    let mut items = Vec::new();
    let empty = |key: &str| CliError::config(key, "sweep list is empty");
    if let Some(list) = &s.rq {
        if list.is_empty() {
            return Err(empty("sweep.rq"));
        }
        for &v in list {
            let mut c = cfg.clone();
            c.ocp.r = v * c.ocp.q;
            items.push(SweepItem { param: "rq", label: format!("{v}"), cfg: c });
        }
    }
    if let Some(list) = &s.t_h {
        if list.is_empty() {
            return Err(empty("sweep.t_h"));
        }
        for &v in list {
            let mut c = cfg.clone();
            c.ocp.t_h = v;
            items.push(SweepItem { param: "t_h", label: format!("{v}"), cfg: c });
        }
    }
    if let Some(list) = &s.goals {
        if list.is_empty() {
            return Err(empty("sweep.goals"));
        }
        for &g in list {
            let mut c = cfg.clone();
            c.ocp.goal = g;
            items.push(SweepItem { param: "goal", label: format!("{},{}", g[0], g[1]), cfg: c });
        }
    }
    if items.is_empty() {
        return Err(CliError::config("sweep", "no sweep list given (rq, t_h or goals)"));
    }
    for it in &items {
        it.cfg.ocp.build().map_err(|e| CliError::Config(format!("sweep.{}={}: {e}", it.param, it.label)))?;
    }
    Ok(items)
}

pub fn sweep(cfg: &RunConfig, ctx: &Context) -> CliResult<Outcome> {
    let items = sweep_items(cfg)?;
    let flow = cfg.flow.build()?;
    let grid = cfg.grid.build()?;
    let spec = cfg.time.step_spec()?;
    let (t0, t_a) = (cfg.time.t0, cfg.time.t_a);
    let mut out = Outcome::default();
    let (passive, _) = sigma(&flow, None, &grid, t0, t_a, &spec, &ctx.exec)?;
    ctx.save_field(&mut out, "ftle__passive", "ftle", &passive, Some(t0), Some(t_a))?;

    let mut rows = Vec::new();
    let mut failures = 0;
    for it in &items {
        let mut row = SweepRow {
            param: it.param.into(),
            value: it.label.clone(),
            status: "ok".into(),
            field: None,
            policy: None,
            distance_to_passive: None,
            ridge_centroid_x: None,
            nonconverged: None,
        };
        let tag = format!("{}={}", it.param, it.label);
        let res = (|| -> CliResult<()> {
            let parts = it.cfg.ocp.build()?;
            let pspec = policy_spec(&it.cfg, &flow, &parts)?;
            let (policy, report) = generate_mpc_policy(&flow, &pspec, &ctx.exec)?;
            let policy = policy.with_time_interp(cfg.policy.time_interp.into());
            row.nonconverged = Some(report.nonconverged.len());
            if cfg.sweep.write_policies {
                let p = ctx.path(&format!("policy__{tag}.pol"));
                write_policy(&p, &policy)?;
                row.policy = Some(file_name(&p));
                out.outputs.push(p);
            }
            let (s, _) = sigma(&flow, Some(&policy), &grid, t0, t_a, &spec, &ctx.exec)?;
            let name = format!("cftle__{tag}");
            ctx.save_field(&mut out, &name, "cftle", &s, Some(t0), Some(t_a))?;
            row.field = Some(format!("{name}.field"));
            row.distance_to_passive = Some(field_distance(&s, &passive)?);
            let mask = extract_ridges(&s, cfg.ftle.ridge_percentile)?;
            row.ridge_centroid_x = ridge_centroid(&s, &mask).map(|c| c.x);
            Ok(())
        })();
        if let Err(e) = res {
            failures += 1;
            out.warnings.push(format!("sweep item {tag}: {e}"));
            row.status = format!("failed: {e}");
        }
        rows.push(row);
    }

    let index = json!({
        "quantity": "cftle",
        "passive_field": "ftle__passive.field",
        "t0": t0,
        "t_a": t_a,
        "ridge_percentile": cfg.ftle.ridge_percentile,
        "items": rows,
    });
    ctx.save_json(&mut out, "sweep_index.json", &index)?;
    let csv_path = ctx.path("sweep_summary.csv");
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r).map_err(|e| CliError::io(&csv_path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::io(&csv_path, e))?;
    write_atomic(&csv_path, &bytes)?;
    out.outputs.push(csv_path);
    if failures > 0 {
        out.failure = Some(CliError::Numerical(format!("{failures} of {} sweep items failed", rows.len())));
    }
    Ok(out)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn render(cfg: &RunConfig, ctx: &Context, input: &Path, mask: Option<&Path>) -> CliResult<Outcome> {
    let (_, field) = read_field(input)?;
    let mask = match mask {
        Some(p) => {
            let (_, m) = read_field(p)?;
            if m.grid != field.grid {
                return Err(CliError::Config(format!("mask {} is on a different grid than {}", p.display(), input.display())));
            }
            Some(field_to_mask(&m))
        }
        None if cfg.render.overlay_mask => Some(extract_ridges(&field, cfg.render.percentile)?),
        None => None,
    };
    let img = render_pgm(&field, cfg.render.range.map(|[a, b]| (a, b)), mask.as_deref());
    let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "field".into());
    let path = ctx.path(&format!("{stem}.pgm"));
    write_atomic(&path, &img)?;
    Ok(Outcome { outputs: vec![path], ..Outcome::default() })
}

/// Placement of the automatic patch pairs.
#[derive(Debug, Clone, Serialize)]
pub struct BarrierPlacement {
    pub sigma_max_node: [usize; 2],
    pub sigma_max: f64,
    pub normal: [f64; 2],
    pub median_sigma: f64,
    pub control_center: Option<[f64; 2]>,
    pub control_mean_sigma: Option<f64>,
}

/// Two patches straddling the interior σ maximum along the cross-ridge
/// direction, and optionally a second pair at the lowest-σ site.
pub fn barrier_pairs(
    sigma: &ScalarField,
    offset: f64,
    radius: f64,
    n_particles: usize,
    control_pair: bool,
) -> CliResult<(Vec<PatchSpec>, BarrierPlacement)> {
    let (i, j) = interior_argmax(sigma, offset + radius).ok_or(cftle_core::Error::NoValidNodes)?;
    let normal = ridge_normal(sigma, i, j)
        .ok_or_else(|| CliError::Numerical("cannot estimate the ridge direction at the σ maximum".into()))?;
    let c = sigma.grid.node(i, j);
    let mut patches = vec![
        PatchSpec::new(c + offset * normal, radius, n_particles, "barrier_a")?,
        PatchSpec::new(c + (-offset) * normal, radius, n_particles, "barrier_b")?,
    ];
    let median_sigma = quantile(&sigma.values, 0.5)?;
    let mut placement = BarrierPlacement {
        sigma_max_node: [i, j],
        sigma_max: sigma.get(i, j),
        normal: [normal.x, normal.y],
        median_sigma,
        control_center: None,
        control_mean_sigma: None,
    };
    if control_pair {
        let (site, mean) = lowest_sigma_site(sigma, offset + radius)
            .ok_or_else(|| CliError::Numerical("no site for the control pair fits inside the grid".into()))?;
        patches.push(PatchSpec::new(site + offset * normal, radius, n_particles, "control_a")?);
        patches.push(PatchSpec::new(site + (-offset) * normal, radius, n_particles, "control_b")?);
        placement.control_center = Some([site.x, site.y]);
        placement.control_mean_sigma = Some(mean);
    }
    Ok((patches, placement))
}

pub fn centroid_distance_ratio(a: &PatchTrack, b: &PatchTrack) -> (f64, f64) {
    let last = a.times.len() - 1;
    let d0 = (a.centroid(0) - b.centroid(0)).norm();
    let d1 = (a.centroid(last) - b.centroid(last)).norm();
    (d0, d1)
}

pub fn patches(cfg: &RunConfig, ctx: &Context) -> CliResult<Outcome> {
    let flow = cfg.flow.build()?;
    let spec = cfg.time.step_spec()?;
    let policy = load_policy(cfg, ctx, &flow)?;
    let t0 = cfg.time.t0;
    let mut out = Outcome::default();
    let mut list: Vec<PatchSpec> = cfg
        .patches
        .items
        .iter()
        .map(|p| PatchSpec::new(Vec2::new(p.center[0], p.center[1]), p.radius, p.n_particles, p.label.clone()))
        .collect::<Result<_, _>>()?;
    let mut placement = None;
    if let Some(b) = &cfg.patches.barrier_pair {
        let grid = cfg.grid.build()?;
        let (s, _) = sigma(&flow, policy.as_ref(), &grid, t0, cfg.time.t_a, &spec, &ctx.exec)?;
        ctx.save_field(&mut out, "patches_sigma", if policy.is_some() { "cftle" } else { "ftle" }, &s, Some(t0), Some(cfg.time.t_a))?;
        let (auto, pl) = barrier_pairs(&s, b.offset, b.radius, b.n_particles, b.control_pair)?;
        if let Some(m) = pl.control_mean_sigma {
            if m >= pl.median_sigma {
                out.warnings.push(format!("control pair site has mean σ {m} >= median σ {}", pl.median_sigma));
            }
        }
        list.extend(auto);
        placement = Some(pl);
    }
    if list.is_empty() {
        return Err(CliError::config("patches", "no patches configured (items or barrier_pair)"));
    }
    let domain = cfg.grid.domain()?;
    for p in &list {
        if !domain.contains(p.center) {
            return Err(CliError::config("patches", format!("patch {} is centred outside the domain", p.label)));
        }
    }
    let snapshots = cfg.patches.snapshots.clone().unwrap_or_else(|| vec![t0, t0 + cfg.time.t_a]);
    let window = snapshots.last().copied().unwrap_or(t0) - t0;
    if snapshots.first() != Some(&t0) || window == 0.0 {
        return Err(CliError::config("patches.snapshots", "must start at time.t0 and end at a different time"));
    }
    let tracks = match &policy {
        Some(p) => {
            if window < 0.0 {
                return Err(CliError::config("patches.snapshots", "controlled patches advect forward in time only"));
            }
            advect_patches(&controlled_field(&flow, p), &list, t0, window, &spec, &snapshots, &ctx.exec)?
        }
        None => advect_patches(&flow, &list, t0, window, &spec, &snapshots, &ctx.exec)?,
    };
    let mut pairs = Vec::new();
    for (a, b) in [("barrier_a", "barrier_b"), ("control_a", "control_b")] {
        let ta = tracks.iter().find(|t| t.label == a);
        let tb = tracks.iter().find(|t| t.label == b);
        if let (Some(ta), Some(tb)) = (ta, tb) {
            let (d0, d1) = centroid_distance_ratio(ta, tb);
            pairs.push(json!({"patches": [a, b], "distance_start": d0, "distance_end": d1, "growth": d1 / d0}));
        }
    }
    let patches_json: Vec<Value> = list
        .iter()
        .zip(&tracks)
        .map(|(p, t)| {
            json!({
                "label": p.label,
                "center": [p.center.x, p.center.y],
                "radius": p.radius,
                "n_particles": p.n_particles,
                "times": t.times,
                "centroids": (0..t.times.len()).map(|s| { let c = t.centroid(s); [c.x, c.y] }).collect::<Vec<_>>(),
                "positions": t.snapshots.iter().map(|snap| snap.iter().map(|q| [q.x, q.y]).collect::<Vec<_>>()).collect::<Vec<_>>(),
            })
        })
        .collect();
    let doc = json!({
        "layout": "sunflower",
        "controlled": policy.is_some(),
        "t0": t0,
        "snapshots": snapshots,
        "placement": placement,
        "pairs": pairs,
        "patches": patches_json,
    });
    ctx.save_json(&mut out, "patches.json", &doc)?;
    Ok(out)
}
