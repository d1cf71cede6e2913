//! Fixed-step integration of trajectories and particle grids.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::flowfield::VelocityField;
use crate::grid::{GridSpec, VectorField};
use crate::math;
use crate::vec2::Vec2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    #[default]
    Rk4,
    Euler,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSpec {
    pub dt: f64,
    pub scheme: Scheme,
}

impl StepSpec {
    pub fn new(dt: f64, scheme: Scheme) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Config("time step must be positive"));
        }
        Ok(StepSpec { dt, scheme })
    }

    pub fn rk4(dt: f64) -> Self {
        StepSpec { dt, scheme: Scheme::Rk4 }
    }
}

impl Default for StepSpec {
    fn default() -> Self {
        StepSpec::rk4(0.1)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec2>,
    pub controls: Option<Vec<Vec2>>,
}

impl Trajectory {
    pub fn last(&self) -> Vec2 {
        *self.states.last().expect("trajectory has at least one state")
    }
}

#[inline]
fn eval<F: VelocityField + ?Sized>(field: &F, x: Vec2, t: f64) -> Result<Vec2> {
    let v = field.velocity(x, t);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Integration { position: x, time: t })
    }
}

/// One step of `dx/dt = field(x, t)` with signed step `dt`.
pub fn step<F: VelocityField + ?Sized>(field: &F, x: Vec2, t: f64, dt: f64, scheme: Scheme) -> Result<Vec2> {
    debug_assert!(dt != 0.0);
    let next = match scheme {
        Scheme::Euler => x + dt * eval(field, x, t)?,
        Scheme::Rk4 => {
            let h2 = 0.5 * dt;
            let k1 = eval(field, x, t)?;
            let k2 = eval(field, x + h2 * k1, t + h2)?;
            let k3 = eval(field, x + h2 * k2, t + h2)?;
            let k4 = eval(field, x + dt * k3, t + dt)?;
            x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        }
    };
    if next.is_finite() {
        Ok(next)
    } else {
        Err(Error::Integration { position: x, time: t })
    }
}

/// Splits `|t_a|` into full steps plus an optional remainder step.
fn step_plan(t_a: f64, dt: f64) -> (usize, f64) {
    let span = t_a.abs();
    let n = math::round(span / dt);
    if (n * dt - span).abs() <= 1e-9 * span.max(dt) {
        return (n as usize, 0.0);
    }
    let n = math::floor(span / dt);
    (n as usize, span - n * dt)
}

/// Shared integration loop; `visit` sees every (time, state) pair including the start.
fn integrate<F, V>(field: &F, x0: Vec2, t0: f64, t_a: f64, spec: &StepSpec, mut visit: V) -> Result<Vec2>
where
    F: VelocityField + ?Sized,
    V: FnMut(f64, Vec2),
{
    if t_a == 0.0 || !t_a.is_finite() {
        return Err(Error::Config("advection time must be nonzero"));
    }
    let sign = if t_a > 0.0 { 1.0 } else { -1.0 };
    let h = sign * spec.dt;
    let (n, rem) = step_plan(t_a, spec.dt);
    let mut x = x0;
    visit(t0, x);
    for k in 0..n {
        let t = t0 + k as f64 * h;
        x = step(field, x, t, h, spec.scheme)?;
        if rem == 0.0 && k + 1 == n {
            visit(t0 + t_a, x);
        } else {
            visit(t0 + (k + 1) as f64 * h, x);
        }
    }
    if rem > 0.0 {
        x = step(field, x, t0 + n as f64 * h, sign * rem, spec.scheme)?;
        visit(t0 + t_a, x);
    }
    Ok(x)
}

/// Final position after advecting from `t0` for signed time `t_a`.
pub fn advect_endpoint<F: VelocityField + ?Sized>(field: &F, x0: Vec2, t0: f64, t_a: f64, spec: &StepSpec) -> Result<Vec2> {
    integrate(field, x0, t0, t_a, spec, |_, _| {})
}

/// Full trajectory from `t0` to `t0 + t_a`; negative `t_a` integrates backward.
pub fn advect<F: VelocityField + ?Sized>(field: &F, x0: Vec2, t0: f64, t_a: f64, spec: &StepSpec) -> Result<Trajectory> {
    let mut traj = Trajectory::default();
    integrate(field, x0, t0, t_a, spec, |t, x| {
        traj.times.push(t);
        traj.states.push(x);
    })?;
    Ok(traj)
}

/// Positions at each requested time (sorted in the direction of `t_a`).
///
/// Snapshot times must lie between `t0` and `t0 + t_a`; each is hit exactly
/// by splitting the integration into segments.
pub fn advect_snapshots<F: VelocityField + ?Sized>(
    field: &F,
    x0: Vec2,
    t0: f64,
    snapshot_times: &[f64],
    spec: &StepSpec,
) -> Result<Vec<Vec2>> {
    let mut out = Vec::with_capacity(snapshot_times.len());
    let (mut x, mut t) = (x0, t0);
    for &ts in snapshot_times {
        if ts != t {
            x = advect_endpoint(field, x, t, ts - t, spec)?;
            t = ts;
        }
        out.push(x);
    }
    Ok(out)
}

/// Flow map sampled on a grid. Nodes that fail to integrate are NaN.
pub fn flow_map_grid<F, E>(field: &F, grid: &GridSpec, t0: f64, t_a: f64, spec: &StepSpec, exec: &E) -> Result<VectorField>
where
    F: VelocityField + ?Sized,
    E: Executor,
{
    if t_a == 0.0 || !t_a.is_finite() {
        return Err(Error::Config("advection time must be nonzero"));
    }
    let values = exec.map(grid.len(), |k| {
        advect_endpoint(field, grid.node_at(k), t0, t_a, spec).unwrap_or(Vec2::new(f64::NAN, f64::NAN))
    });
    VectorField::new(*grid, values)
}
