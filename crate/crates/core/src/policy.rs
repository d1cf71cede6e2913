//! Space-time control policies sampled on a coarse grid.
//!
//! A [`PolicyGrid`] stores one control per spatial node per time sample and
//! answers arbitrary `(x, t)` queries by bilinear interpolation in space and
//! linear interpolation in time. Added to a background flow it yields the
//! controlled field whose FTLE is the controlled FTLE.

use alloc::string::String;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::flowfield::VelocityField;
use crate::grid::GridSpec;
use crate::math;
use crate::ocp::{first_action, ActuationBounds, CostWeights, GoalSpec, HorizonSpec, Ocp, SolverOptions};
use crate::vec2::Vec2;

/// Period spans must match to this absolute tolerance.
pub const PERIOD_TOLERANCE: f64 = 1e-9;

const SNAP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimeInterp {
    #[default]
    Linear,
    Nearest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Generator {
    Mpc,
    External,
}

impl Generator {
    pub fn tag(&self) -> &'static str {
        match self {
            Generator::Mpc => "mpc",
            Generator::External => "external",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "mpc" => Some(Generator::Mpc),
            "external" => Some(Generator::External),
            _ => None,
        }
    }
}

/// Provenance of a policy. Optimisation settings are absent for external policies.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyMeta {
    pub weights: Option<CostWeights>,
    pub t_horizon: Option<f64>,
    pub goal: Option<Vec2>,
    pub u_max: f64,
    pub flow: String,
    pub generator: Generator,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGrid {
    pub grid: GridSpec,
    pub t_start: f64,
    pub dt_policy: f64,
    pub n_times: usize,
    /// `n_times × ny × nx` controls, time-major then y then x.
    pub controls: Vec<Vec2>,
    pub meta: PolicyMeta,
    /// When set, queries wrap in time with this period (equal to the span).
    pub period: Option<f64>,
    pub time_interp: TimeInterp,
}

impl PolicyGrid {
    /// Builds a policy and checks every invariant.
    pub fn new(
        grid: GridSpec,
        t_start: f64,
        dt_policy: f64,
        n_times: usize,
        controls: Vec<Vec2>,
        meta: PolicyMeta,
        period: Option<f64>,
    ) -> Result<Self> {
        let p = PolicyGrid { grid, t_start, dt_policy, n_times, controls, meta, period, time_interp: TimeInterp::Linear };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_times < 1 {
            return Err(Error::Config("policy needs at least one time sample"));
        }
        if !(self.dt_policy > 0.0 && self.dt_policy.is_finite()) || !self.t_start.is_finite() {
            return Err(Error::Config("policy time axis must be finite with positive spacing"));
        }
        if self.grid.nx < 2 || self.grid.ny < 2 {
            return Err(Error::Config("policy grids need at least 2 nodes per axis"));
        }
        if !(self.meta.u_max > 0.0 && self.meta.u_max.is_finite()) {
            return Err(Error::Config("actuation bound must be positive"));
        }
        let expected = self.n_times * self.grid.len();
        if self.controls.len() != expected {
            return Err(Error::Shape { expected, found: self.controls.len() });
        }
        for (k, u) in self.controls.iter().enumerate() {
            for (c, v) in [(0, u.x), (1, u.y)] {
                if !v.is_finite() || v.abs() > self.meta.u_max {
                    return Err(Error::BoundViolation { index: 2 * k + c, value: v, bound: self.meta.u_max });
                }
            }
        }
        if let Some(period) = self.period {
            self.check_span(period)?;
        }
        Ok(())
    }

    pub fn span(&self) -> f64 {
        (self.n_times - 1) as f64 * self.dt_policy
    }

    pub fn t_end(&self) -> f64 {
        self.t_start + self.span()
    }

    fn check_span(&self, period: f64) -> Result<()> {
        if (self.span() - period).abs() > PERIOD_TOLERANCE || period <= 0.0 {
            return Err(Error::PeriodSpan { span: self.span(), period });
        }
        Ok(())
    }

    /// Marks the policy as one period of a periodic policy.
    pub fn with_period(mut self, period: f64) -> Result<Self> {
        self.check_span(period)?;
        self.period = Some(period);
        Ok(self)
    }

    pub fn with_time_interp(mut self, mode: TimeInterp) -> Self {
        self.time_interp = mode;
        self
    }

    /// Spacing check against the FTLE grid the policy will be sampled on.
    pub fn check_coarser_than(&self, fine: &GridSpec) -> Result<()> {
        if self.grid.dx() + 1e-12 < fine.dx() || self.grid.dy() + 1e-12 < fine.dy() {
            return Err(Error::Config("policy grid must not be finer than the FTLE grid"));
        }
        Ok(())
    }

    #[inline]
    pub fn at(&self, k: usize, i: usize, j: usize) -> Vec2 {
        self.controls[k * self.grid.len() + self.grid.index(i, j)]
    }

    /// Cell index and weight along one axis, with the position clamped.
    #[inline]
    fn locate(pos: f64, n: usize) -> (usize, f64) {
        let pos = pos.clamp(0.0, (n - 1) as f64);
        let mut i = math::floor(pos);
        let mut w = pos - i;
        if w > 1.0 - SNAP {
            i += 1.0;
            w = 0.0;
        } else if w < SNAP {
            w = 0.0;
        }
        let mut i = i as usize;
        if i >= n - 1 {
            // Right edge: weight 1 on the last node.
            i = n - 2;
            w = 1.0;
            if n == 1 {
                return (0, 0.0);
            }
        }
        (i, w)
    }

    fn spatial(&self, k: usize, i: usize, j: usize, wx: f64, wy: f64) -> Vec2 {
        let base = k * self.grid.len();
        let nx = self.grid.nx;
        let c = |ii: usize, jj: usize| self.controls[base + jj * nx + ii];
        let lower = if wx == 0.0 { c(i, j) } else { lerp(c(i, j), c(i + 1, j), wx) };
        if wy == 0.0 {
            return lower;
        }
        let upper = if wx == 0.0 { c(i, j + 1) } else { lerp(c(i, j + 1), c(i + 1, j + 1), wx) };
        lerp(lower, upper, wy)
    }

    /// `true` if `x` lies outside the policy box and the query clamps.
    pub fn is_clamped(&self, x: Vec2) -> bool {
        !self.grid.domain.contains(x)
    }

    /// Fractional time index for `t`, wrapped or clamped.
    fn time_position(&self, t: f64) -> f64 {
        let rel = match self.period {
            Some(period) => math::rem_euclid(t - self.t_start, period),
            None => t - self.t_start,
        };
        rel / self.dt_policy
    }

    /// Policy value at an arbitrary point.
    pub fn interpolate(&self, x: Vec2, t: f64) -> Vec2 {
        let d = &self.grid.domain;
        let (i, wx) = Self::locate((x.x - d.x_min) / self.grid.dx(), self.grid.nx);
        let (j, wy) = Self::locate((x.y - d.y_min) / self.grid.dy(), self.grid.ny);
        if self.n_times == 1 {
            return self.spatial(0, i, j, wx, wy);
        }
        let (mut k, mut wt) = Self::locate(self.time_position(t), self.n_times);
        if self.time_interp == TimeInterp::Nearest && wt != 0.0 {
            if wt >= 0.5 {
                k += 1;
            }
            wt = 0.0;
        }
        let a = self.spatial(k, i, j, wx, wy);
        if wt == 0.0 {
            return a;
        }
        let b = self.spatial(k + 1, i, j, wx, wy);
        lerp(a, b, wt)
    }
}

/// Componentwise `a + w (b - a)`, exact when `a == b` and never leaving `[a, b]`.
#[inline]
fn lerp(a: Vec2, b: Vec2, w: f64) -> Vec2 {
    #[inline]
    fn one(a: f64, b: f64, w: f64) -> f64 {
        if a == b {
            return a;
        }
        (a + w * (b - a)).clamp(a.min(b), a.max(b))
    }
    Vec2::new(one(a.x, b.x, w), one(a.y, b.y, w))
}

/// Time reversal of a one-period policy.
///
/// The result stores the samples in reverse order on the mirrored time
/// axis, so `reversed.interpolate(x, τ) == policy.interpolate(x, -τ)`.
/// Integrating forward in `τ` through the reversed controlled field is
/// integrating backward in `t` through the original.
pub fn reverse_policy_periodic(policy: &PolicyGrid, period: f64) -> Result<PolicyGrid> {
    if policy.period.is_none() {
        return Err(Error::PeriodSpan { span: policy.span(), period });
    }
    policy.check_span(period)?;
    let m = policy.grid.len();
    let mut controls = Vec::with_capacity(policy.controls.len());
    for k in (0..policy.n_times).rev() {
        controls.extend_from_slice(&policy.controls[k * m..(k + 1) * m]);
    }
    Ok(PolicyGrid {
        t_start: -(policy.t_start + policy.span()),
        controls,
        ..policy.clone()
    })
}

/// Background flow plus interpolated policy.
pub struct ControlledField<'a, F: ?Sized> {
    pub background: &'a F,
    pub policy: &'a PolicyGrid,
    clamp_events: AtomicUsize,
}

/// `v(x, t) + û(x, t)`.
pub fn controlled_field<'a, F: VelocityField + ?Sized>(background: &'a F, policy: &'a PolicyGrid) -> ControlledField<'a, F> {
    ControlledField { background, policy, clamp_events: AtomicUsize::new(0) }
}

impl<F: ?Sized> ControlledField<'_, F> {
    /// Number of evaluations whose position fell outside the policy box.
    pub fn clamp_events(&self) -> usize {
        self.clamp_events.load(Ordering::Relaxed)
    }
}

impl<F: VelocityField + ?Sized> VelocityField for ControlledField<'_, F> {
    #[inline]
    fn velocity(&self, p: Vec2, t: f64) -> Vec2 {
        if self.policy.is_clamped(p) {
            self.clamp_events.fetch_add(1, Ordering::Relaxed);
        }
        self.background.velocity(p, t) + self.policy.interpolate(p, t)
    }

    fn period(&self) -> Option<f64> {
        self.policy.period
    }
}

/// `h(x, τ) = -g(x, -τ)`: integrating `h` forward is integrating `g` backward.
pub struct TimeReversed<F>(pub F);

impl<F: VelocityField> VelocityField for TimeReversed<F> {
    #[inline]
    fn velocity(&self, p: Vec2, t: f64) -> Vec2 {
        -self.0.velocity(p, -t)
    }

    fn jacobian(&self, p: Vec2, t: f64) -> crate::vec2::Mat2 {
        let j = self.0.jacobian(p, -t);
        crate::vec2::Mat2::new(-j.a, -j.b, -j.c, -j.d)
    }

    fn period(&self) -> Option<f64> {
        self.0.period()
    }

    fn is_steady(&self) -> bool {
        self.0.is_steady()
    }
}

/// Background flow reversed in time plus a reversed policy:
/// `h(x, τ) = -(v(x, -τ) + û_rev(x, τ))`.
pub struct ReversedControlledField<'a, F: ?Sized> {
    pub background: &'a F,
    pub reversed: &'a PolicyGrid,
}

impl<F: VelocityField + ?Sized> VelocityField for ReversedControlledField<'_, F> {
    #[inline]
    fn velocity(&self, p: Vec2, t: f64) -> Vec2 {
        -(self.background.velocity(p, -t) + self.reversed.interpolate(p, t))
    }
}

/// Outcome of one policy generation run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GenerationReport {
    /// `(flat spatial node index, time sample)` of every unconverged solve.
    pub nonconverged: Vec<(usize, usize)>,
    pub total_iterations: usize,
    pub solves: usize,
}

/// Everything needed to fill a policy grid with receding-horizon first actions.
#[derive(Debug, Clone)]
pub struct MpcPolicySpec {
    pub grid: GridSpec,
    pub t_start: f64,
    pub dt_policy: f64,
    pub n_times: usize,
    pub weights: CostWeights,
    pub goal: GoalSpec,
    pub horizon: HorizonSpec,
    pub bounds: ActuationBounds,
    pub options: SolverOptions,
    /// Mark the result periodic with this period (must equal the span).
    pub period: Option<f64>,
    pub flow_descriptor: String,
}

/// First actions, unconverged time samples and iteration count of one node.
type NodeChain = (Vec<Vec2>, Vec<usize>, usize);

/// Solves one OCP per node and time sample and keeps the first action.
///
/// Nodes run independently; along each node's time axis the solve at
/// `t_{k+1}` is warm-started from the solution at `t_k` shifted by one step.
pub fn generate_mpc_policy<F, E>(field: &F, spec: &MpcPolicySpec, exec: &E) -> Result<(PolicyGrid, GenerationReport)>
where
    F: VelocityField + ?Sized,
    E: Executor,
{
    if spec.n_times < 1 || !(spec.dt_policy > 0.0) {
        return Err(Error::Config("policy time axis needs n_times >= 1 and dt_policy > 0"));
    }
    spec.options.validate()?;
    let ocp = Ocp::new(field, spec.weights, spec.goal, spec.horizon, spec.bounds).with_options(spec.options);
    let shift = (math::round(spec.dt_policy / spec.horizon.dt) as usize).max(1);
    let per_node: Vec<Result<NodeChain>> = exec.map(spec.grid.len(), |node| {
        let x0 = spec.grid.node_at(node);
        let mut actions = Vec::with_capacity(spec.n_times);
        let mut failed = Vec::new();
        let mut iters = 0;
        let mut warm: Option<Vec<Vec2>> = None;
        for k in 0..spec.n_times {
            let t = spec.t_start + k as f64 * spec.dt_policy;
            let sol = ocp.solve(x0, t, warm.as_deref())?;
            if !sol.converged {
                failed.push(k);
            }
            iters += sol.iterations;
            actions.push(first_action(&sol));
            let mut next = sol.controls;
            let s = shift.min(next.len());
            next.rotate_left(s);
            let len = next.len();
            for u in &mut next[len - s..] {
                *u = Vec2::ZERO;
            }
            warm = Some(next);
        }
        Ok((actions, failed, iters))
    });

    let m = spec.grid.len();
    let mut controls = alloc::vec![Vec2::ZERO; m * spec.n_times];
    let mut report = GenerationReport::default();
    for (node, res) in per_node.into_iter().enumerate() {
        let (actions, failed, iters) = res?;
        for (k, u) in actions.into_iter().enumerate() {
            controls[k * m + node] = u;
        }
        report.nonconverged.extend(failed.into_iter().map(|k| (node, k)));
        report.total_iterations += iters;
        report.solves += spec.n_times;
    }
    report.nonconverged.sort_unstable_by_key(|&(node, k)| (k, node));
    let meta = PolicyMeta {
        weights: Some(spec.weights),
        t_horizon: Some(spec.horizon.t_h),
        goal: Some(spec.goal.x_goal),
        u_max: spec.bounds.u_max,
        flow: spec.flow_descriptor.clone(),
        generator: Generator::Mpc,
    };
    let policy = PolicyGrid::new(spec.grid, spec.t_start, spec.dt_policy, spec.n_times, controls, meta, spec.period)?;
    Ok((policy, report))
}
