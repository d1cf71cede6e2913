//! The run configuration: one JSON document, unknown keys rejected.

use std::path::{Path, PathBuf};

use cftle_core::ocp::{ActuationBounds, CostWeights, GoalSpec, HorizonSpec, SolverOptions};
use cftle_core::odeint::{Scheme, StepSpec};
use cftle_core::policy::TimeInterp;
use cftle_core::{AnalyticFlow, DomainBox, DoubleGyreParams, GridSpec, Vec2};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum FlowConfig {
    DoubleGyre {
        #[serde(rename = "A", default = "default_a")]
        a: f64,
        #[serde(default = "default_epsilon")]
        epsilon: f64,
        #[serde(default = "default_omega")]
        omega: f64,
    },
    Saddle {
        #[serde(default = "one")]
        lambda: f64,
    },
    Rotation {
        #[serde(default = "one")]
        omega: f64,
    },
    Zero,
}

fn default_a() -> f64 {
    DoubleGyreParams::standard().a
}
fn default_epsilon() -> f64 {
    DoubleGyreParams::standard().epsilon
}
fn default_omega() -> f64 {
    DoubleGyreParams::standard().omega
}
fn one() -> f64 {
    1.0
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig::DoubleGyre { a: default_a(), epsilon: default_epsilon(), omega: default_omega() }
    }
}

impl FlowConfig {
    pub fn build(&self) -> CliResult<AnalyticFlow> {
        let finite = |key: &str, v: f64| {
            if v.is_finite() {
                Ok(v)
            } else {
                Err(CliError::config(key, "must be finite"))
            }
        };
        Ok(match *self {
            FlowConfig::DoubleGyre { a, epsilon, omega } => AnalyticFlow::DoubleGyre(
                DoubleGyreParams::new(a, epsilon, omega).map_err(|e| CliError::config("flow", e))?,
            ),
            FlowConfig::Saddle { lambda } => AnalyticFlow::Saddle { lambda: finite("flow.lambda", lambda)? },
            FlowConfig::Rotation { omega } => AnalyticFlow::Rotation { omega: finite("flow.omega", omega)? },
            FlowConfig::Zero => AnalyticFlow::Zero,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub nx: usize,
    pub ny: usize,
    /// `[x_min, x_max, y_min, y_max]`
    pub domain: [f64; 4],
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { nx: 401, ny: 201, domain: [0.0, 2.0, 0.0, 1.0] }
    }
}

impl GridConfig {
    pub fn domain(&self) -> CliResult<DomainBox> {
        let [a, b, c, d] = self.domain;
        DomainBox::new(a, b, c, d).map_err(|e| CliError::config("grid.domain", e))
    }

    pub fn build(&self) -> CliResult<GridSpec> {
        GridSpec::new(self.domain()?, self.nx, self.ny).map_err(|e| CliError::config("grid", e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SchemeConfig {
    #[default]
    Rk4,
    Euler,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimeConfig {
    pub t0: f64,
    pub t_a: f64,
    pub dt: f64,
    pub scheme: SchemeConfig,
}

impl Default for TimeConfig {
    fn default() -> Self {
        TimeConfig { t0: 0.0, t_a: 15.0, dt: 0.1, scheme: SchemeConfig::Rk4 }
    }
}

impl TimeConfig {
    pub fn step_spec(&self) -> CliResult<StepSpec> {
        let scheme = match self.scheme {
            SchemeConfig::Rk4 => Scheme::Rk4,
            SchemeConfig::Euler => Scheme::Euler,
        };
        StepSpec::new(self.dt, scheme).map_err(|e| CliError::config("time.dt", e))
    }

    pub fn validate(&self) -> CliResult<()> {
        if !self.t0.is_finite() {
            return Err(CliError::config("time.t0", "must be finite"));
        }
        if !self.t_a.is_finite() || self.t_a == 0.0 {
            return Err(CliError::config("time.t_a", "advection time must be nonzero"));
        }
        self.step_spec().map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FtleConfig {
    /// Also compute the field for `-|t_a|`.
    pub backward: bool,
    pub ridge_percentile: f64,
    pub write_mask: bool,
    pub render: bool,
}

impl Default for FtleConfig {
    fn default() -> Self {
        FtleConfig { backward: false, ridge_percentile: 0.9, write_mask: true, render: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OcpConfig {
    pub q: f64,
    pub r: f64,
    pub t_h: f64,
    pub dt: f64,
    pub goal: [f64; 2],
    pub u_max: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub initial_step: f64,
    pub backtrack: f64,
    pub sufficient_decrease: f64,
    pub min_step: f64,
}

impl Default for OcpConfig {
    fn default() -> Self {
        let s = SolverOptions::default();
        OcpConfig {
            q: 1.0,
            r: 80.0,
            t_h: 3.0,
            dt: 0.1,
            goal: [0.5, 0.5],
            u_max: 0.1,
            tol: s.tol,
            max_iter: s.max_iter,
            initial_step: s.initial_step,
            backtrack: s.backtrack,
            sufficient_decrease: s.sufficient_decrease,
            min_step: s.min_step,
        }
    }
}

/// Validated optimal-control settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OcpParts {
    pub weights: CostWeights,
    pub goal: GoalSpec,
    pub horizon: HorizonSpec,
    pub bounds: ActuationBounds,
    pub options: SolverOptions,
}

impl OcpConfig {
    pub fn build(&self) -> CliResult<OcpParts> {
        let weights = CostWeights::new(self.q, self.r).map_err(|e| CliError::config("ocp.q/ocp.r", e))?;
        let goal = GoalSpec::new(Vec2::new(self.goal[0], self.goal[1])).map_err(|e| CliError::config("ocp.goal", e))?;
        let horizon = HorizonSpec::new(self.t_h, self.dt).map_err(|e| CliError::config("ocp.t_h/ocp.dt", e))?;
        let bounds = ActuationBounds::new(self.u_max).map_err(|e| CliError::config("ocp.u_max", e))?;
        let options = SolverOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            initial_step: self.initial_step,
            backtrack: self.backtrack,
            sufficient_decrease: self.sufficient_decrease,
            min_step: self.min_step,
        };
        options.validate().map_err(|e| CliError::config("ocp (solver options)", e))?;
        Ok(OcpParts { weights, goal, horizon, bounds, options })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TimeInterpConfig {
    #[default]
    Linear,
    Nearest,
}

impl From<TimeInterpConfig> for TimeInterp {
    fn from(t: TimeInterpConfig) -> Self {
        match t {
            TimeInterpConfig::Linear => TimeInterp::Linear,
            TimeInterpConfig::Nearest => TimeInterp::Nearest,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub nx: usize,
    pub ny: usize,
    pub t_start: f64,
    pub dt_policy: f64,
    pub n_times: usize,
    /// Mark the generated policy as one period of a periodic policy.
    pub periodic: bool,
    /// Policy file read by `cftle`, `diagnostics` and `patches` when no
    /// `--policy` flag is given.
    pub path: Option<PathBuf>,
    pub time_interp: TimeInterpConfig,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            nx: 41,
            ny: 21,
            t_start: 0.0,
            dt_policy: 0.1,
            n_times: 101,
            periodic: true,
            path: None,
            time_interp: TimeInterpConfig::Linear,
        }
    }
}

impl PolicyConfig {
    pub fn span(&self) -> f64 {
        self.n_times.saturating_sub(1) as f64 * self.dt_policy
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsConfig {
    pub terminal_cost: bool,
    pub energy: bool,
    /// Time at which the energy field is sampled; defaults to `time.t0`.
    pub energy_time: Option<f64>,
    pub state_error: bool,
    pub grad_jf: bool,
    pub hjb: bool,
    /// Every `hjb_stride`-th interior policy node is a candidate sample.
    pub hjb_stride: usize,
    pub hjb_h: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            terminal_cost: true,
            energy: true,
            energy_time: None,
            state_error: true,
            grad_jf: true,
            hjb: true,
            hjb_stride: 4,
            hjb_h: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub rq: Option<Vec<f64>>,
    pub t_h: Option<Vec<f64>>,
    pub goals: Option<Vec<[f64; 2]>>,
    /// Keep the generated policy of every sweep item.
    pub write_policies: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchConfig {
    pub center: [f64; 2],
    pub radius: f64,
    pub n_particles: usize,
    pub label: String,
}

/// Automatic placement of a ridge-straddling pair and a low-σ control pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BarrierPairConfig {
    pub offset: f64,
    pub radius: f64,
    pub n_particles: usize,
    pub control_pair: bool,
}

impl Default for BarrierPairConfig {
    fn default() -> Self {
        BarrierPairConfig { offset: 0.1, radius: 0.05, n_particles: 64, control_pair: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PatchesConfig {
    pub items: Vec<PatchConfig>,
    pub barrier_pair: Option<BarrierPairConfig>,
    /// Snapshot times; defaults to `t0` and `t0 + t_a`.
    pub snapshots: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    pub colormap: String,
    pub range: Option<[f64; 2]>,
    pub percentile: f64,
    pub overlay_mask: bool,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig { colormap: "gray".into(), range: None, percentile: 0.9, overlay_mask: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub flow: FlowConfig,
    pub grid: GridConfig,
    pub time: TimeConfig,
    pub ftle: FtleConfig,
    pub ocp: OcpConfig,
    pub policy: PolicyConfig,
    pub diagnostics: DiagnosticsConfig,
    pub sweep: SweepConfig,
    pub patches: PatchesConfig,
    pub render: RenderConfig,
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    /// Parses and validates a JSON document.
    pub fn from_json(text: &str) -> CliResult<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<(Self, String)> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let cfg = Self::from_json(&text)?;
        Ok((cfg, text))
    }

    /// Checks every block that all commands share.
    pub fn validate(&self) -> CliResult<()> {
        self.flow.build()?;
        self.grid.build()?;
        self.time.validate()?;
        let p = self.ftle.ridge_percentile;
        if !(p > 0.0 && p < 1.0) {
            return Err(CliError::config("ftle.ridge_percentile", "must lie strictly between 0 and 1"));
        }
        self.ocp.build()?;
        let pol = &self.policy;
        if pol.nx < 2 || pol.ny < 2 {
            return Err(CliError::config("policy.nx/policy.ny", "policy grids need at least 2 nodes per axis"));
        }
        if pol.n_times < 1 {
            return Err(CliError::config("policy.n_times", "must be at least 1"));
        }
        if !(pol.dt_policy > 0.0 && pol.dt_policy.is_finite()) || !pol.t_start.is_finite() {
            return Err(CliError::config("policy.dt_policy", "must be positive and finite"));
        }
        if pol.periodic && pol.n_times < 2 {
            return Err(CliError::config("policy.periodic", "a periodic policy needs at least two time samples"));
        }
        let d = &self.diagnostics;
        if d.hjb_stride < 1 || !(d.hjb_h > 0.0) {
            return Err(CliError::config("diagnostics.hjb_stride/hjb_h", "must be positive"));
        }
        if let Some(t) = d.energy_time {
            if !t.is_finite() {
                return Err(CliError::config("diagnostics.energy_time", "must be finite"));
            }
        }
        for p in &self.patches.items {
            if !(p.radius > 0.0) || p.n_particles < 1 {
                return Err(CliError::config(&format!("patches.items[{}]", p.label), "radius must be positive and n_particles >= 1"));
            }
        }
        if let Some(b) = &self.patches.barrier_pair {
            if !(b.offset > 0.0 && b.radius > 0.0) || b.n_particles < 1 {
                return Err(CliError::config("patches.barrier_pair", "offset and radius must be positive, n_particles >= 1"));
            }
        }
        let r = &self.render;
        if r.colormap != "gray" {
            return Err(CliError::config("render.colormap", format!("unsupported colormap {:?} (only \"gray\")", r.colormap)));
        }
        if let Some([lo, hi]) = r.range {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(CliError::config("render.range", "must be finite with lo < hi"));
            }
        }
        if !(r.percentile > 0.0 && r.percentile < 1.0) {
            return Err(CliError::config("render.percentile", "must lie strictly between 0 and 1"));
        }
        Ok(())
    }

    /// Policy grid over the FTLE domain.
    pub fn policy_grid(&self) -> CliResult<GridSpec> {
        GridSpec::new_coarse(self.grid.domain()?, self.policy.nx, self.policy.ny).map_err(|e| CliError::config("policy", e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.grid.nx, 401);
        assert_eq!(cfg.policy.span(), 10.0);
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let err = RunConfig::from_json("{\n  \"time\": {\"t_a\": 5, \"tA\": 3}\n}").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("tA") && msg.contains("line 2"), "{msg}");
        assert_eq!(err.exit_code(), 2);
        assert!(RunConfig::from_json(r#"{"flow": {"name": "saddle", "lambda": 1, "omega": 2}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn zero_advection_time_rejected() {
        let err = RunConfig::from_json(r#"{"time": {"t_a": 0}}"#).unwrap_err();
        assert!(err.to_string().contains("advection time must be nonzero"));
        assert!(err.to_string().contains("time.t_a"));
    }

    #[test]
    fn flow_variants_parse() {
        let cfg = RunConfig::from_json(r#"{"flow": {"name": "double_gyre", "A": 0.2, "epsilon": 0}}"#).unwrap();
        let f = cfg.flow.build().unwrap();
        assert_eq!(f, AnalyticFlow::DoubleGyre(DoubleGyreParams::new(0.2, 0.0, default_omega()).unwrap()));
        let cfg = RunConfig::from_json(r#"{"flow": {"name": "zero"}}"#).unwrap();
        assert_eq!(cfg.flow.build().unwrap(), AnalyticFlow::Zero);
        assert!(RunConfig::from_json(r#"{"flow": {"name": "vortex"}}"#).is_err());
    }

    #[test]
    fn invalid_values_name_their_key() {
        for (doc, key) in [
            (r#"{"ocp": {"u_max": -1}}"#, "ocp.u_max"),
            (r#"{"grid": {"nx": 2}}"#, "grid"),
            (r#"{"ftle": {"ridge_percentile": 1.5}}"#, "ftle.ridge_percentile"),
            (r#"{"render": {"colormap": "viridis"}}"#, "render.colormap"),
            (r#"{"policy": {"n_times": 0}}"#, "policy.n_times"),
        ] {
            let msg = RunConfig::from_json(doc).unwrap_err().to_string();
            assert!(msg.contains(key), "{doc}: {msg}");
        }
    }

    #[test]
    fn serialization_round_trips() {
        let cfg = RunConfig::from_json(r#"{"sweep": {"rq": [20, 40]}, "flow": {"name": "saddle"}}"#).unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
    }
}
