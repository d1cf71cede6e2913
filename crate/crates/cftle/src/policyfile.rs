//! Policy grids on disk.

use std::path::Path;

use cftle_core::ocp::CostWeights;
use cftle_core::policy::{Generator, PolicyGrid, PolicyMeta};
use cftle_core::{DomainBox, GridSpec, Vec2};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::io;

pub const POLICY_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsHeader {
    pub q: f64,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyHeader {
    pub format_version: u32,
    pub nx: usize,
    pub ny: usize,
    pub n_times: usize,
    pub domain: [f64; 4],
    pub t_start: f64,
    pub dt_policy: f64,
    pub u_max: f64,
    pub goal: Option<[f64; 2]>,
    pub weights: Option<WeightsHeader>,
    pub t_horizon: Option<f64>,
    pub generator: String,
    pub flow: String,
    pub periodic: bool,
    pub period: Option<f64>,
}

impl PolicyHeader {
    pub fn of(p: &PolicyGrid) -> Self {
        let d = p.grid.domain;
        PolicyHeader {
            format_version: POLICY_FORMAT_VERSION,
            nx: p.grid.nx,
            ny: p.grid.ny,
            n_times: p.n_times,
            domain: [d.x_min, d.x_max, d.y_min, d.y_max],
            t_start: p.t_start,
            dt_policy: p.dt_policy,
            u_max: p.meta.u_max,
            goal: p.meta.goal.map(|g| [g.x, g.y]),
            weights: p.meta.weights.map(|w| WeightsHeader { q: w.q, r: w.r }),
            t_horizon: p.meta.t_horizon,
            generator: p.meta.generator.tag().to_owned(),
            flow: p.meta.flow.clone(),
            periodic: p.period.is_some(),
            period: p.period,
        }
    }
}

pub fn encode_policy(p: &PolicyGrid) -> Vec<u8> {
    let json = serde_json::to_string(&PolicyHeader::of(p)).expect("policy header serializes");
    io::encode(&json, p.controls.iter().flat_map(|u| [u.x, u.y]))
}

pub fn write_policy(path: &Path, p: &PolicyGrid) -> CliResult<()> {
    io::write_atomic(path, &encode_policy(p))
}

pub fn decode_policy(path: &Path, bytes: &[u8]) -> CliResult<PolicyGrid> {
    let bad = |msg: String| CliError::io(path, msg);
    let (text, values) = io::decode(path, bytes)?;
    let h: PolicyHeader = serde_json::from_str(text).map_err(|e| bad(format!("malformed policy header: {e}")))?;
    if h.format_version != POLICY_FORMAT_VERSION {
        return Err(bad(format!("unsupported policy format version {}", h.format_version)));
    }
    let [a, b, c, d] = h.domain;
    let grid = DomainBox::new(a, b, c, d)
        .and_then(|dom| GridSpec::new_coarse(dom, h.nx, h.ny))
        .map_err(|e| bad(format!("invalid grid in header: {e}")))?;
    let expected = 2 * h.n_times * grid.len();
    if values.len() != expected {
        return Err(bad(format!(
            "payload holds {} values but the header declares {} ({}x{}x{} controls, 2 components)",
            values.len(),
            expected,
            h.n_times,
            h.ny,
            h.nx
        )));
    }
    if let Some(k) = values.iter().position(|v| !v.is_finite()) {
        return Err(bad(format!("non-finite control component at index {k}")));
    }
    let generator = Generator::from_tag(&h.generator).ok_or_else(|| bad(format!("unknown generator tag {:?}", h.generator)))?;
    let weights = h
        .weights
        .map(|w| CostWeights::new(w.q, w.r))
        .transpose()
        .map_err(|e| bad(format!("invalid weights: {e}")))?;
    let meta = PolicyMeta {
        weights,
        t_horizon: h.t_horizon,
        goal: h.goal.map(|g| Vec2::new(g[0], g[1])),
        u_max: h.u_max,
        flow: h.flow.clone(),
        generator,
    };
    let controls = values.chunks_exact(2).map(|c| Vec2::new(c[0], c[1])).collect();
    let period = match (h.periodic, h.period) {
        (true, Some(p)) => Some(p),
        (false, None) => None,
        _ => return Err(bad("`periodic` and `period` disagree".into())),
    };
    PolicyGrid::new(grid, h.t_start, h.dt_policy, h.n_times, controls, meta, period).map_err(|e| bad(e.to_string()))
}

pub fn read_policy(path: &Path) -> CliResult<PolicyGrid> {
    decode_policy(path, &io::read(path)?)
}
