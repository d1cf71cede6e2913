//! Cost-landscape fields and the identities that tie controlled FTLE to the
//! optimal-control value function, plus patch-advection experiments.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::flowfield::VelocityField;
use crate::ftle::{flow_map_jacobian, quantile};
use crate::grid::{GridSpec, ScalarField};
use crate::math;
use crate::ocp::{first_action, Ocp};
use crate::odeint::{advect_snapshots, flow_map_grid, StepSpec};
use crate::policy::PolicyGrid;
use crate::vec2::Vec2;

/// Squared distance to the goal after advection, per starting node.
pub fn terminal_cost_field<F, E>(
    field: &F,
    grid: &GridSpec,
    t0: f64,
    t_a: f64,
    goal: Vec2,
    spec: &StepSpec,
    exec: &E,
) -> Result<ScalarField>
where
    F: VelocityField + ?Sized,
    E: Executor,
{
    if !(t_a > 0.0) {
        return Err(Error::Config("terminal cost needs a positive advection time"));
    }
    let map = flow_map_grid(field, grid, t0, t_a, spec, exec)?;
    ScalarField::new(*grid, map.values.iter().map(|&x| (x - goal).norm_sq()).collect())
}

/// `|û(x, t)|²` at every node.
pub fn energy_field(policy: &PolicyGrid, grid: &GridSpec, t: f64) -> ScalarField {
    ScalarField::from_fn(*grid, |x| policy.interpolate(x, t).norm_sq())
}

/// State-error part of the optimal cost at every node, with unconverged
/// solves masked (NaN) and listed.
pub fn accumulated_state_error_field<F, E>(ocp: &Ocp<'_, F>, grid: &GridSpec, t0: f64, exec: &E) -> Result<(ScalarField, Vec<usize>)>
where
    F: VelocityField + ?Sized,
    E: Executor,
{
    let solved = exec.map(grid.len(), |k| ocp.solve(grid.node_at(k), t0, None).map(|s| (s.converged, s.cost_state)));
    let mut values = Vec::with_capacity(grid.len());
    let mut failed = Vec::new();
    for (k, res) in solved.into_iter().enumerate() {
        match res {
            Ok((true, c)) => values.push(c),
            Ok((false, _)) | Err(Error::Rollout { .. }) => {
                failed.push(k);
                values.push(f64::NAN);
            }
            Err(e) => return Err(e),
        }
    }
    Ok((ScalarField::new(*grid, values)?, failed))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradJfCheck {
    /// `|∇J_F(fd) − 2 eᵀ DΦ|` on interior nodes, NaN elsewhere.
    pub residual: ScalarField,
    /// Residual over `|2 eᵀ DΦ|`, NaN where that vanishes.
    pub relative: ScalarField,
    pub max_residual: f64,
    pub median_residual: f64,
    pub median_relative: f64,
}

/// Compares the finite-difference gradient of the terminal-cost field with
/// `2 (x(T_A) - x_goal)ᵀ DΦ` built from the flow-map Jacobian.
pub fn check_grad_jf<F, E>(
    field: &F,
    grid: &GridSpec,
    t0: f64,
    t_a: f64,
    goal: Vec2,
    spec: &StepSpec,
    exec: &E,
) -> Result<GradJfCheck>
where
    F: VelocityField + ?Sized,
    E: Executor,
{
    if !(t_a > 0.0) {
        return Err(Error::Config("terminal cost needs a positive advection time"));
    }
    let map = flow_map_grid(field, grid, t0, t_a, spec, exec)?;
    let jac = flow_map_jacobian(&map, grid)?;
    let cost: Vec<f64> = map.values.iter().map(|&x| (x - goal).norm_sq()).collect();
    let mut residual = alloc::vec![f64::NAN; grid.len()];
    let mut relative = alloc::vec![f64::NAN; grid.len()];
    for j in 1..grid.ny - 1 {
        for i in 1..grid.nx - 1 {
            let k = grid.index(i, j);
            let fd = Vec2::new(
                (cost[grid.index(i + 1, j)] - cost[grid.index(i - 1, j)]) / (grid.x(i + 1) - grid.x(i - 1)),
                (cost[grid.index(i, j + 1)] - cost[grid.index(i, j - 1)]) / (grid.y(j + 1) - grid.y(j - 1)),
            );
            let analytic = 2.0 * jac.values[k].tr_mul_vec(map.values[k] - goal);
            let r = (fd - analytic).norm();
            residual[k] = r;
            let scale = analytic.norm();
            if scale > 0.0 && r.is_finite() {
                relative[k] = r / scale;
            }
        }
    }
    let residual = ScalarField::new(*grid, residual)?;
    let relative = ScalarField::new(*grid, relative)?;
    let max_residual = residual.range().map(|r| r.1).ok_or(Error::NoValidNodes)?;
    let median_residual = quantile(&residual.values, 0.5)?;
    // Every interior relative residual may be undefined (zero gradient everywhere).
    let median_relative = quantile(&relative.values, 0.5).unwrap_or(0.0);
    Ok(GradJfCheck { residual, relative, max_residual, median_residual, median_relative })
}

/// Controls below this magnitude make the magnitude comparison meaningless.
pub const HJB_ILL_CONDITIONED: f64 = 1e-4;

/// A sample counts as interior if both components are below this fraction of the bound.
pub const HJB_INTERIOR_FRACTION: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct HjbSample {
    pub x0: Vec2,
    pub value: f64,
    pub control: Vec2,
    pub grad_value: Vec2,
    /// `-∇V / (2r)`, the control implied by the value gradient.
    pub predicted: Vec2,
    pub angle_deg: f64,
    /// `None` when the control is too small to compare magnitudes.
    pub magnitude_rel_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct HjbReport {
    pub samples: Vec<HjbSample>,
    /// Samples dropped because a control component was near saturation.
    pub excluded_saturated: usize,
    /// Samples dropped because a solve failed to converge.
    pub excluded_unconverged: usize,
}

impl HjbReport {
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn max_angle_deg(&self) -> f64 {
        self.samples.iter().map(|s| s.angle_deg).fold(0.0, f64::max)
    }

    pub fn max_magnitude_error(&self) -> f64 {
        self.samples.iter().filter_map(|s| s.magnitude_rel_error).fold(0.0, f64::max)
    }
}

fn angle_deg(a: Vec2, b: Vec2) -> f64 {
    let c = (a.dot(b) / (a.norm() * b.norm())).clamp(-1.0, 1.0);
    math::acos(c) * 180.0 / math::PI
}

/// Checks the stationarity relation between the optimal first control and
/// the spatial gradient of the optimal cost.
///
/// For the cost `∫ q|e|² + r|u|²` and dynamics `ẋ = v + u`, minimising the
/// Hamiltonian over an unconstrained `u` gives `u* = -∇V / (2r)`. `∇V` comes
/// from central differences of re-solved optimal costs (warm-started from
/// the unperturbed optimum) with step `h`.
pub fn check_hjb_relation<F, E>(ocp: &Ocp<'_, F>, samples: &[Vec2], t0: f64, h: f64, exec: &E) -> Result<HjbReport>
where
    F: VelocityField + ?Sized,
    E: Executor,
{
    if !(ocp.weights.r > 0.0) {
        return Err(Error::Config("value-gradient check needs a positive control weight"));
    }
    if !(h > 0.0) {
        return Err(Error::Config("perturbation step must be positive"));
    }
    let u_max = ocp.bounds.u_max;
    let r = ocp.weights.r;
    enum Outcome {
        Sample(HjbSample),
        Saturated,
        Unconverged,
    }
    let outcomes = exec.map(samples.len(), |n| -> Result<Outcome> {
        let x0 = samples[n];
        let base = ocp.solve(x0, t0, None)?;
        if !base.converged {
            return Ok(Outcome::Unconverged);
        }
        let u = first_action(&base);
        if u.max_abs() >= HJB_INTERIOR_FRACTION * u_max {
            return Ok(Outcome::Saturated);
        }
        let mut vals = [0.0; 4];
        let offsets = [Vec2::new(h, 0.0), Vec2::new(-h, 0.0), Vec2::new(0.0, h), Vec2::new(0.0, -h)];
        for (v, d) in vals.iter_mut().zip(offsets) {
            let s = ocp.solve(x0 + d, t0, Some(&base.controls))?;
            if !s.converged {
                return Ok(Outcome::Unconverged);
            }
            *v = s.cost_total;
        }
        let grad = Vec2::new((vals[0] - vals[1]) / (2.0 * h), (vals[2] - vals[3]) / (2.0 * h));
        let predicted = (-0.5 / r) * grad;
        let magnitude_rel_error =
            (u.norm() >= HJB_ILL_CONDITIONED).then(|| (predicted.norm() - u.norm()).abs() / u.norm());
        Ok(Outcome::Sample(HjbSample {
            x0,
            value: base.cost_total,
            control: u,
            grad_value: grad,
            predicted,
            angle_deg: angle_deg(u, predicted),
            magnitude_rel_error,
        }))
    });
    let mut report = HjbReport::default();
    for o in outcomes {
        match o? {
            Outcome::Sample(s) => report.samples.push(s),
            Outcome::Saturated => report.excluded_saturated += 1,
            Outcome::Unconverged => report.excluded_unconverged += 1,
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchSpec {
    pub center: Vec2,
    pub radius: f64,
    pub n_particles: usize,
    pub label: String,
}

impl PatchSpec {
    pub fn new(center: Vec2, radius: f64, n_particles: usize, label: impl Into<String>) -> Result<Self> {
        if !(radius > 0.0) || n_particles < 1 || !center.is_finite() {
            return Err(Error::Config("patches need a finite center, positive radius and at least one particle"));
        }
        Ok(PatchSpec { center, radius, n_particles, label: label.into() })
    }

    /// Golden-angle (sunflower) layout of the particles on the disk.
    pub fn particles(&self) -> Vec<Vec2> {
        let golden = math::PI * (3.0 - math::sqrt(5.0));
        let n = self.n_particles as f64;
        (0..self.n_particles)
            .map(|i| {
                let rho = self.radius * math::sqrt((i as f64 + 0.5) / n);
                let th = i as f64 * golden;
                self.center + Vec2::new(rho * math::cos(th), rho * math::sin(th))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchTrack {
    pub label: String,
    pub times: Vec<f64>,
    /// `snapshots[s][p]`: particle `p` at `times[s]`; NaN if it failed to integrate.
    pub snapshots: Vec<Vec<Vec2>>,
}

impl PatchTrack {
    pub fn centroid(&self, s: usize) -> Vec2 {
        let pts: Vec<&Vec2> = self.snapshots[s].iter().filter(|p| p.is_finite()).collect();
        let n = pts.len() as f64;
        let sum = pts.into_iter().fold(Vec2::ZERO, |a, &b| a + b);
        (1.0 / n) * sum
    }
}

/// Advects each patch's particles and records them at `snapshot_times`
/// (which must run monotonically from `t0` toward `t0 + t_a`).
pub fn advect_patches<F, E>(
    field: &F,
    patches: &[PatchSpec],
    t0: f64,
    t_a: f64,
    spec: &StepSpec,
    snapshot_times: &[f64],
    exec: &E,
) -> Result<Vec<PatchTrack>>
where
    F: VelocityField + ?Sized,
    E: Executor,
{
    if t_a == 0.0 {
        return Err(Error::Config("advection time must be nonzero"));
    }
    let (lo, hi) = if t_a > 0.0 { (t0, t0 + t_a) } else { (t0 + t_a, t0) };
    let in_range = snapshot_times.iter().all(|&t| t >= lo - 1e-12 && t <= hi + 1e-12);
    let sign = t_a.signum();
    let ordered = snapshot_times.windows(2).all(|w| sign * (w[1] - w[0]) >= 0.0);
    if !in_range || !ordered {
        return Err(Error::Config("snapshot times must be ordered and lie within the advection window"));
    }
    let mut tracks = Vec::with_capacity(patches.len());
    for patch in patches {
        let particles = patch.particles();
        let paths = exec.map(particles.len(), |p| {
            advect_snapshots(field, particles[p], t0, snapshot_times, spec)
                .unwrap_or_else(|_| alloc::vec![Vec2::new(f64::NAN, f64::NAN); snapshot_times.len()])
        });
        let snapshots = (0..snapshot_times.len()).map(|s| paths.iter().map(|path| path[s]).collect()).collect();
        tracks.push(PatchTrack { label: patch.label.clone(), times: snapshot_times.to_vec(), snapshots });
    }
    Ok(tracks)
}

/// Root-mean-square difference over jointly valid nodes.
pub fn field_distance(a: &ScalarField, b: &ScalarField) -> Result<f64> {
    if a.grid != b.grid {
        return Err(Error::GridMismatch);
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for (x, y) in a.values.iter().zip(&b.values) {
        if x.is_finite() && y.is_finite() {
            sum += (x - y) * (x - y);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::NoValidNodes);
    }
    Ok(math::sqrt(sum / n as f64))
}

/// Interior node with the largest valid σ among nodes at least `margin`
/// away from every wall.
pub fn interior_argmax(sigma: &ScalarField, margin: f64) -> Option<(usize, usize)> {
    let g = &sigma.grid;
    let d = &g.domain;
    let mut best: Option<((usize, usize), f64)> = None;
    for j in 1..g.ny - 1 {
        for i in 1..g.nx - 1 {
            let c = g.node(i, j);
            if c.x - margin < d.x_min || c.x + margin > d.x_max || c.y - margin < d.y_min || c.y + margin > d.y_max {
                continue;
            }
            let v = sigma.get(i, j);
            if v.is_finite() && best.is_none_or(|(_, b)| v > b) {
                best = Some(((i, j), v));
            }
        }
    }
    best.map(|b| b.0)
}

/// Unit direction across the ridge at an interior node: the eigenvector of
/// the finite-difference Hessian of σ with the most negative curvature.
pub fn ridge_normal(sigma: &ScalarField, i: usize, j: usize) -> Option<Vec2> {
    let g = &sigma.grid;
    if !g.is_interior(i, j) {
        return None;
    }
    let (dx, dy) = (g.dx(), g.dy());
    let f = |a: usize, b: usize| sigma.get(a, b);
    let fxx = (f(i + 1, j) - 2.0 * f(i, j) + f(i - 1, j)) / (dx * dx);
    let fyy = (f(i, j + 1) - 2.0 * f(i, j) + f(i, j - 1)) / (dy * dy);
    let fxy = (f(i + 1, j + 1) - f(i + 1, j - 1) - f(i - 1, j + 1) + f(i - 1, j - 1)) / (4.0 * dx * dy);
    if !(fxx.is_finite() && fyy.is_finite() && fxy.is_finite()) {
        return None;
    }
    // Smallest eigenvalue of [[fxx, fxy], [fxy, fyy]] and its eigenvector.
    let mean = 0.5 * (fxx + fyy);
    let rad = math::hypot(0.5 * (fxx - fyy), fxy);
    let lambda = mean - rad;
    let v = if fxy.abs() > 1e-300 {
        Vec2::new(lambda - fyy, fxy)
    } else if fxx <= fyy {
        Vec2::new(1.0, 0.0)
    } else {
        Vec2::new(0.0, 1.0)
    };
    let n = v.norm();
    (n > 0.0).then(|| (1.0 / n) * v)
}

/// Interior site whose disk of radius `extent` has the lowest mean σ,
/// keeping the whole disk inside the grid. Returns the site and its mean.
pub fn lowest_sigma_site(sigma: &ScalarField, extent: f64) -> Option<(Vec2, f64)> {
    let g = &sigma.grid;
    let d = &g.domain;
    let ri = (extent / g.dx()).ceil_div();
    let rj = (extent / g.dy()).ceil_div();
    let mut best: Option<(Vec2, f64)> = None;
    for j in 0..g.ny {
        for i in 0..g.nx {
            let c = g.node(i, j);
            if c.x - extent < d.x_min || c.x + extent > d.x_max || c.y - extent < d.y_min || c.y + extent > d.y_max {
                continue;
            }
            let (mut sum, mut n) = (0.0, 0usize);
            for b in j.saturating_sub(rj)..(j + rj + 1).min(g.ny) {
                for a in i.saturating_sub(ri)..(i + ri + 1).min(g.nx) {
                    let v = sigma.get(a, b);
                    if (g.node(a, b) - c).norm() <= extent && v.is_finite() {
                        sum += v;
                        n += 1;
                    }
                }
            }
            if n > 0 {
                let m = sum / n as f64;
                if best.is_none_or(|(_, b)| m < b) {
                    best = Some((c, m));
                }
            }
        }
    }
    best
}

trait CeilDiv {
    fn ceil_div(self) -> usize;
}

impl CeilDiv for f64 {
    fn ceil_div(self) -> usize {
        let f = math::floor(self);
        (if f < self { f + 1.0 } else { f }) as usize
    }
}
