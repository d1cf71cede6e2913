use std::path::{Path, PathBuf};
use std::process::Command;

use cftle::fieldfile::{read_field, write_field, FieldHeader};
use cftle::policyfile::{read_policy, write_policy};
use cftle_core::policy::{Generator, PolicyGrid, PolicyMeta};
use cftle_core::{AnalyticFlow, DomainBox, DoubleGyreParams, GridSpec, ScalarField, Vec2};
use serde_json::Value;

struct Run {
    code: i32,
    stderr: String,
}

fn cftle(dir: &Path, config: &str, args: &[&str]) -> Run {
    let cfg = dir.join("config.json");
    std::fs::write(&cfg, config).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_cftle"))
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .args(args)
        .output()
        .unwrap();
    Run { code: out.status.code().unwrap(), stderr: String::from_utf8_lossy(&out.stderr).into_owned() }
}

fn out(dir: &Path, name: &str) -> PathBuf {
    dir.join("out").join(name)
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn zero_policy(dir: &Path, flow: &AnalyticFlow, period: Option<f64>) -> PathBuf {
    let g = GridSpec::new_coarse(DomainBox::double_gyre(), 11, 6).unwrap();
    let meta = PolicyMeta { weights: None, t_horizon: None, goal: None, u_max: 0.1, flow: flow.descriptor(), generator: Generator::External };
    let n_times = 11;
    let p = PolicyGrid::new(g, 0.0, 1.0, n_times, vec![Vec2::ZERO; g.len() * n_times], meta, period).unwrap();
    let path = dir.join("zero.pol");
    write_policy(&path, &p).unwrap();
    path
}

const TOY: &str = r#"{"grid": {"nx": 21, "ny": 11}, "time": {"t_a": 5}, "policy": {"nx": 11, "ny": 6, "n_times": 3, "periodic": false}}"#;

#[test]
fn passive_ftle_writes_field_image_and_manifest() {
    let d = tempfile::tempdir().unwrap();
    let r = cftle(d.path(), TOY, &["passive-ftle"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let (h, f) = read_field(&out(d.path(), "ftle_forward.field")).unwrap();
    assert_eq!((h.nx, h.ny, h.quantity.as_str()), (21, 11, "ftle"));
    assert!(f.values.iter().all(|v| v.is_finite()));
    let pgm = std::fs::read(out(d.path(), "ftle_forward.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n21 11\n255\n"));
    assert!(out(d.path(), "ftle_forward_ridges.field").exists());
    let m = json(&out(d.path(), "passive-ftle.manifest.json"));
    assert_eq!(m["status"], "ok");
    assert_eq!(m["config_hash"].as_str().unwrap(), h.config_hash);
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    assert!(m["wall_time_s"].as_f64().unwrap() >= 0.0);
    assert!(m["versions"]["cftle_core"].is_string());
}

#[test]
fn saddle_passive_field_is_unit() {
    let d = tempfile::tempdir().unwrap();
    let cfg = r#"{"flow": {"name": "saddle"}, "grid": {"nx": 21, "ny": 21, "domain": [-1, 1, -1, 1]},
                 "time": {"t_a": 1, "dt": 0.001}, "ftle": {"backward": true}}"#;
    assert_eq!(cftle(d.path(), cfg, &["passive-ftle"]).code, 0);
    for name in ["ftle_forward.field", "ftle_backward.field"] {
        let (_, f) = read_field(&out(d.path(), name)).unwrap();
        assert!(f.values.iter().all(|v| (v - 1.0).abs() < 1e-3), "{name}");
    }
}

#[test]
fn config_errors_exit_2() {
    let d = tempfile::tempdir().unwrap();
    let r = cftle(d.path(), r#"{"time": {"t_a": 0}}"#, &["passive-ftle"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("advection time must be nonzero"), "{}", r.stderr);
    let r = cftle(d.path(), "{\n \"grid\": {\"nx\": 21, \"nyy\": 3}\n}", &["passive-ftle"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("nyy") && r.stderr.contains("line 2"), "{}", r.stderr);
    let r = cftle(d.path(), r#"{"sweep": {"rq": []}}"#, &["sweep"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("sweep.rq"));
}

#[test]
fn missing_policy_is_io_error() {
    let d = tempfile::tempdir().unwrap();
    let r = cftle(d.path(), TOY, &["cftle", "--policy", "/nonexistent/p.pol"]);
    assert_eq!(r.code, 4);
    assert!(r.stderr.contains("/nonexistent/p.pol"));
    let m = json(&out(d.path(), "cftle.manifest.json"));
    assert_eq!(m["status"], "failed");
    assert_eq!(m["exit_code"], 4);
}

#[test]
fn zero_policy_matches_passive_bit_for_bit() {
    let d = tempfile::tempdir().unwrap();
    let flow = AnalyticFlow::DoubleGyre(DoubleGyreParams::standard());
    let pol = zero_policy(d.path(), &flow, None);
    assert_eq!(cftle(d.path(), TOY, &["passive-ftle"]).code, 0);
    assert_eq!(cftle(d.path(), TOY, &["cftle", "--policy", pol.to_str().unwrap()]).code, 0);
    let (_, a) = read_field(&out(d.path(), "ftle_forward.field")).unwrap();
    let (_, b) = read_field(&out(d.path(), "cftle_forward.field")).unwrap();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.values), bits(&b.values));
}

#[test]
fn flow_mismatch_names_both_descriptors() {
    let d = tempfile::tempdir().unwrap();
    let pol = zero_policy(d.path(), &AnalyticFlow::Zero, None);
    let r = cftle(d.path(), TOY, &["cftle", "--policy", pol.to_str().unwrap()]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("`zero`") && r.stderr.contains("double_gyre(A=0.1"), "{}", r.stderr);
}

#[test]
fn backward_cftle_needs_periodic_policy() {
    let d = tempfile::tempdir().unwrap();
    let flow = AnalyticFlow::Saddle { lambda: 1.0 };
    let cfg = r#"{"flow": {"name": "saddle"}, "grid": {"nx": 21, "ny": 11}, "time": {"t_a": -1, "dt": 0.001}}"#;
    let pol = zero_policy(d.path(), &flow, None);
    let r = cftle(d.path(), cfg, &["cftle", "--policy", pol.to_str().unwrap()]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("periodic"), "{}", r.stderr);

    let pol = zero_policy(d.path(), &flow, Some(10.0));
    let r = cftle(d.path(), cfg, &["cftle", "--policy", pol.to_str().unwrap()]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let (h, f) = read_field(&out(d.path(), "cftle_backward.field")).unwrap();
    assert_eq!(h.t_a, Some(-1.0));
    assert!(f.values.iter().all(|v| (v - 1.0).abs() < 1e-3));
}

#[test]
fn gen_policy_toy_and_passive_limit() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(cftle(d.path(), TOY, &["gen-policy"]).code, 0);
    let rep = json(&out(d.path(), "policy_report.json"));
    assert_eq!(rep["bound_violations"], 0);
    assert_eq!(rep["solves"], 66 * 3);
    assert!(rep["wall_time_s"].is_number() && rep["nonconverged_count"].is_number());
    let p = read_policy(&out(d.path(), "policy.pol")).unwrap();
    assert_eq!((p.grid.nx, p.grid.ny, p.n_times), (11, 6, 3));

    let timid = r#"{"grid": {"nx": 21, "ny": 11}, "ocp": {"r": 1e6}, "policy": {"nx": 11, "ny": 6, "n_times": 3, "periodic": false}}"#;
    let d = tempfile::tempdir().unwrap();
    assert_eq!(cftle(d.path(), timid, &["gen-policy"]).code, 0);
    assert!(json(&out(d.path(), "policy_report.json"))["max_abs_u"].as_f64().unwrap() < 1e-3);
}

#[test]
fn periodic_policy_must_span_flow_period() {
    let d = tempfile::tempdir().unwrap();
    let cfg = r#"{"grid": {"nx": 21, "ny": 11}, "policy": {"nx": 11, "ny": 6, "n_times": 3}}"#;
    let r = cftle(d.path(), cfg, &["gen-policy"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("flow period"), "{}", r.stderr);
}

#[test]
fn diagnostics_zero_field_terminal_cost_exact() {
    let d = tempfile::tempdir().unwrap();
    let pol = zero_policy(d.path(), &AnalyticFlow::Zero, None);
    let cfg = r#"{"flow": {"name": "zero"}, "grid": {"nx": 21, "ny": 11}, "time": {"t_a": 2},
                 "ocp": {"goal": [0.7, 0.3]}, "policy": {"nx": 11, "ny": 6},
                 "diagnostics": {"state_error": false, "hjb": false}}"#;
    let r = cftle(d.path(), cfg, &["diagnostics", "--policy", pol.to_str().unwrap()]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let (_, jf) = read_field(&out(d.path(), "terminal_cost.field")).unwrap();
    for k in 0..jf.grid.len() {
        assert_eq!(jf.values[k], (jf.grid.node_at(k) - Vec2::new(0.7, 0.3)).norm_sq());
    }
    let (_, e) = read_field(&out(d.path(), "energy.field")).unwrap();
    assert!(e.values.iter().all(|&v| v == 0.0));
    let rep = json(&out(d.path(), "diagnostics_report.json"));
    assert!(rep["grad_jf"]["max_residual"].as_f64().unwrap() < 1e-12);
}

#[test]
fn diagnostics_saddle_and_saturated_hjb() {
    let d = tempfile::tempdir().unwrap();
    let cfg = r#"{"flow": {"name": "saddle"}, "grid": {"nx": 11, "ny": 11, "domain": [-1, 1, -1, 1]},
                 "time": {"t_a": 1, "dt": 0.01}, "ocp": {"r": 0.01, "goal": [0.9, 0.9]},
                 "policy": {"nx": 5, "ny": 5}, "diagnostics": {"hjb_stride": 1, "state_error": false}}"#;
    let r = cftle(d.path(), cfg, &["diagnostics"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rep = json(&out(d.path(), "diagnostics_report.json"));
    assert!(rep["grad_jf"]["median_relative_residual"].as_f64().unwrap() < 1e-3);
    assert_eq!(rep["energy"]["status"], "skipped");
    assert_eq!(rep["hjb"]["interior_samples"], 0);
    assert_eq!(rep["hjb"]["warning"], "no strictly interior samples");
    assert!(rep["hjb"]["excluded_saturated"].as_u64().unwrap() > 0);
}

#[test]
fn diagnostics_failure_is_marked_and_partial() {
    let d = tempfile::tempdir().unwrap();
    let cfg = r#"{"grid": {"nx": 21, "ny": 11}, "time": {"t_a": -2}, "policy": {"nx": 11, "ny": 6},
                 "diagnostics": {"state_error": false, "hjb": false}}"#;
    let r = cftle(d.path(), cfg, &["diagnostics"]);
    assert_ne!(r.code, 0);
    let rep = json(&out(d.path(), "diagnostics_report.json"));
    assert_eq!(rep["terminal_cost"]["status"], "failed");
    assert_eq!(rep["grad_jf"]["status"], "failed");
}

#[test]
fn sweep_layout_and_index() {
    let d = tempfile::tempdir().unwrap();
    let cfg = r#"{"grid": {"nx": 21, "ny": 11}, "time": {"t_a": 3}, "policy": {"nx": 11, "ny": 6, "n_times": 3, "periodic": false},
                 "sweep": {"rq": [20, 1e6], "goals": [[0.5, 0.5]], "write_policies": true}}"#;
    let r = cftle(d.path(), cfg, &["sweep"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    for name in ["cftle__rq=20.field", "cftle__rq=1000000.field", "cftle__goal=0.5,0.5.field", "policy__rq=20.pol", "ftle__passive.field"] {
        assert!(out(d.path(), name).exists(), "{name}");
    }
    let idx = json(&out(d.path(), "sweep_index.json"));
    let items = idx["items"].as_array().unwrap();
    assert_eq!(items.len(), 3);
    let dist = |k: usize| items[k]["distance_to_passive"].as_f64().unwrap();
    assert!(dist(1) < dist(0));
    assert!(items[2]["ridge_centroid_x"].is_number());
    let csv = std::fs::read_to_string(out(d.path(), "sweep_summary.csv")).unwrap();
    assert!(csv.starts_with("param,value,status,field,policy,distance_to_passive,ridge_centroid_x,nonconverged"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn render_constant_deterministic_and_sized() {
    let d = tempfile::tempdir().unwrap();
    let grid = GridSpec::new(DomainBox::double_gyre(), 9, 7).unwrap();
    let constant = ScalarField::from_fn(grid, |_| 0.37);
    let field = d.path().join("flat.field");
    write_field(&field, &FieldHeader::new("ftle", &constant, None, None, ""), &constant).unwrap();
    assert_eq!(cftle(d.path(), "{}", &["render", "--input", field.to_str().unwrap()]).code, 0);
    let a = std::fs::read(out(d.path(), "flat.pgm")).unwrap();
    assert_eq!(cftle(d.path(), "{}", &["render", "--input", field.to_str().unwrap()]).code, 0);
    let b = std::fs::read(out(d.path(), "flat.pgm")).unwrap();
    assert_eq!(a, b);
    assert!(a.starts_with(b"P5\n9 7\n255\n"));
    assert_eq!(a.len(), b"P5\n9 7\n255\n".len() + 63);
    assert!(a[a.len() - 63..].iter().all(|&p| p == 128));

    let r = cftle(d.path(), "{}", &["render", "--input", d.path().join("config.json").to_str().unwrap()]);
    assert_eq!(r.code, 4);
}

#[test]
fn patches_zero_field_unchanged_and_thread_invariant() {
    let d = tempfile::tempdir().unwrap();
    let cfg = r#"{"flow": {"name": "zero"}, "grid": {"nx": 21, "ny": 11}, "time": {"t_a": 2},
                 "patches": {"items": [{"center": [0.5, 0.5], "radius": 0.05, "n_particles": 30, "label": "p"}]}}"#;
    assert_eq!(cftle(d.path(), cfg, &["patches"]).code, 0);
    let doc = json(&out(d.path(), "patches.json"));
    let pos = &doc["patches"][0]["positions"];
    assert_eq!(pos[0], pos[1]);

    let gyre = r#"{"grid": {"nx": 41, "ny": 21}, "time": {"t_a": 5}, "patches": {"barrier_pair": {"n_particles": 20}, "snapshots": [0, 2, 4]}}"#;
    let mut docs = Vec::new();
    for threads in ["1", "8"] {
        let d = tempfile::tempdir().unwrap();
        let r = cftle(d.path(), gyre, &["--threads", threads, "patches"]);
        assert_eq!(r.code, 0, "{}", r.stderr);
        docs.push(std::fs::read(out(d.path(), "patches.json")).unwrap());
    }
    assert_eq!(docs[0], docs[1]);
}

#[test]
fn thread_count_does_not_change_fields() {
    let mut files = Vec::new();
    for threads in ["1", "3", "8"] {
        let d = tempfile::tempdir().unwrap();
        assert_eq!(cftle(d.path(), TOY, &["--threads", threads, "passive-ftle"]).code, 0);
        files.push(std::fs::read(out(d.path(), "ftle_forward.field")).unwrap());
    }
    assert!(files.windows(2).all(|w| w[0] == w[1]));
}
