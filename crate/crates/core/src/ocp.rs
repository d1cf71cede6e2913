//! Finite-horizon, box-constrained, quadratic-cost optimal control of a
//! kinematic agent `dx/dt = v(x, t) + u`.
//!
//! The horizon is discretised into `n` steps of `dt` with the control held
//! constant over each step and the state propagated by RK4. The cost is the
//! left-rectangle sum
//!
//! ```text
//! J = Σ_{k<n} dt · ( q |x_k - x_goal|² + r |u_k|² )
//! ```
//!
//! Its exact gradient comes from reverse accumulation through the RK4
//! stages; the solver is projected gradient descent with Armijo
//! backtracking along the projection arc.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::flowfield::VelocityField;
use crate::math;
use crate::vec2::Vec2;

/// Relative cost differences below this are treated as roundoff.
const ROUNDOFF_BAND: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostWeights {
    pub q: f64,
    pub r: f64,
}

impl CostWeights {
    pub fn new(q: f64, r: f64) -> Result<Self> {
        if !(q > 0.0 && q.is_finite()) {
            return Err(Error::Config("state weight q must be positive"));
        }
        if !(r >= 0.0 && r.is_finite()) {
            return Err(Error::Config("control weight r must be non-negative"));
        }
        Ok(CostWeights { q, r })
    }

    /// `q = 1`, `r = ratio`.
    pub fn from_ratio(ratio: f64) -> Result<Self> {
        Self::new(1.0, ratio)
    }

    pub fn ratio(&self) -> f64 {
        self.r / self.q
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HorizonSpec {
    pub t_h: f64,
    pub dt: f64,
    pub n_steps: usize,
}

impl HorizonSpec {
    pub fn new(t_h: f64, dt: f64) -> Result<Self> {
        if !(t_h > 0.0 && t_h.is_finite() && dt > 0.0 && dt.is_finite()) {
            return Err(Error::Config("horizon and step must be positive"));
        }
        let n = math::round(t_h / dt);
        if n < 1.0 {
            return Err(Error::Config("horizon must contain at least one step"));
        }
        Ok(HorizonSpec { t_h, dt, n_steps: n as usize })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoalSpec {
    pub x_goal: Vec2,
}

impl GoalSpec {
    pub fn new(x_goal: Vec2) -> Result<Self> {
        if !x_goal.is_finite() {
            return Err(Error::Config("goal must be finite"));
        }
        Ok(GoalSpec { x_goal })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActuationBounds {
    pub u_max: f64,
}

impl ActuationBounds {
    pub fn new(u_max: f64) -> Result<Self> {
        if !(u_max > 0.0 && u_max.is_finite()) {
            return Err(Error::Config("actuation bound must be positive"));
        }
        Ok(ActuationBounds { u_max })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Convergence threshold on the infinity norm of the projected gradient.
    pub tol: f64,
    pub max_iter: usize,
    pub initial_step: f64,
    pub backtrack: f64,
    pub sufficient_decrease: f64,
    pub min_step: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-6,
            max_iter: 2000,
            initial_step: 1.0,
            backtrack: 0.5,
            sufficient_decrease: 1e-4,
            min_step: 1e-12,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.tol > 0.0
            && self.initial_step > 0.0
            && self.backtrack > 0.0
            && self.backtrack < 1.0
            && self.sufficient_decrease > 0.0
            && self.sufficient_decrease < 1.0
            && self.min_step > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config("invalid solver options"))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpSolution {
    pub controls: Vec<Vec2>,
    pub states: Vec<Vec2>,
    pub cost_total: f64,
    pub cost_state: f64,
    pub cost_control: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Infinity norm of the projected gradient at the returned controls.
    pub kkt_residual: f64,
    /// Cost after each accepted iterate, starting with the initial guess.
    pub cost_trace: Vec<f64>,
}

/// First control of a solution, the one a receding-horizon controller applies.
pub fn first_action(solution: &OcpSolution) -> Vec2 {
    solution.controls[0]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub states: Vec<Vec2>,
    pub cost_state: f64,
    pub cost_control: f64,
}

impl Rollout {
    pub fn cost_total(&self) -> f64 {
        self.cost_state + self.cost_control
    }
}

/// One optimal-control problem family: everything except the initial condition.
#[derive(Debug, Clone, Copy)]
pub struct Ocp<'a, F: ?Sized> {
    pub field: &'a F,
    pub weights: CostWeights,
    pub goal: GoalSpec,
    pub horizon: HorizonSpec,
    pub bounds: ActuationBounds,
    pub options: SolverOptions,
}

#[inline]
fn rk4_controlled<F: VelocityField + ?Sized>(field: &F, x: Vec2, u: Vec2, t: f64, h: f64) -> Vec2 {
    let h2 = 0.5 * h;
    let k1 = field.velocity(x, t) + u;
    let k2 = field.velocity(x + h2 * k1, t + h2) + u;
    let k3 = field.velocity(x + h2 * k2, t + h2) + u;
    let k4 = field.velocity(x + h * k3, t + h) + u;
    x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// Reverse pass of one RK4 step: given `λ = ∂C/∂x_{k+1}`, returns
/// `(∂C/∂x_k, ∂C/∂u_k)` through the step map only.
fn rk4_adjoint<F: VelocityField + ?Sized>(field: &F, x: Vec2, u: Vec2, t: f64, h: f64, lambda: Vec2) -> (Vec2, Vec2) {
    let h2 = 0.5 * h;
    let y1 = x;
    let k1 = field.velocity(y1, t) + u;
    let y2 = x + h2 * k1;
    let k2 = field.velocity(y2, t + h2) + u;
    let y3 = x + h2 * k2;
    let k3 = field.velocity(y3, t + h2) + u;
    let y4 = x + h * k3;

    let w = h / 6.0;
    let kb4 = w * lambda;
    let yb4 = field.jacobian(y4, t + h).tr_mul_vec(kb4);
    let kb3 = (2.0 * w) * lambda + h * yb4;
    let yb3 = field.jacobian(y3, t + h2).tr_mul_vec(kb3);
    let kb2 = (2.0 * w) * lambda + h2 * yb3;
    let yb2 = field.jacobian(y2, t + h2).tr_mul_vec(kb2);
    let kb1 = w * lambda + h2 * yb2;
    let yb1 = field.jacobian(y1, t).tr_mul_vec(kb1);

    let xbar = lambda + yb1 + yb2 + yb3 + yb4;
    let ubar = kb1 + kb2 + kb3 + kb4;
    (xbar, ubar)
}

impl<'a, F: VelocityField + ?Sized> Ocp<'a, F> {
    pub fn new(
        field: &'a F,
        weights: CostWeights,
        goal: GoalSpec,
        horizon: HorizonSpec,
        bounds: ActuationBounds,
    ) -> Self {
        Ocp { field, weights, goal, horizon, bounds, options: SolverOptions::default() }
    }

    pub fn with_options(mut self, options: SolverOptions) -> Self {
        self.options = options;
        self
    }

    fn check_len(&self, controls: &[Vec2]) -> Result<()> {
        if controls.len() != self.horizon.n_steps {
            return Err(Error::Shape { expected: self.horizon.n_steps, found: controls.len() });
        }
        Ok(())
    }

    /// Propagates `x0` under `controls` and evaluates the two cost terms.
    pub fn rollout(&self, x0: Vec2, t0: f64, controls: &[Vec2]) -> Result<Rollout> {
        self.check_len(controls)?;
        let dt = self.horizon.dt;
        let CostWeights { q, r } = self.weights;
        let mut states = Vec::with_capacity(controls.len() + 1);
        states.push(x0);
        let (mut cs, mut cu) = (0.0, 0.0);
        let mut x = x0;
        for (k, &u) in controls.iter().enumerate() {
            cs += dt * q * (x - self.goal.x_goal).norm_sq();
            cu += dt * r * u.norm_sq();
            x = rk4_controlled(self.field, x, u, t0 + k as f64 * dt, dt);
            if !x.is_finite() {
                return Err(Error::Rollout { step: k + 1 });
            }
            states.push(x);
        }
        Ok(Rollout { states, cost_state: cs, cost_control: cu })
    }

    /// Exact gradient of the discrete cost with respect to every control.
    pub fn gradient(&self, x0: Vec2, t0: f64, controls: &[Vec2]) -> Result<Vec<Vec2>> {
        let ro = self.rollout(x0, t0, controls)?;
        Ok(self.gradient_from(&ro, t0, controls))
    }

    fn gradient_from(&self, ro: &Rollout, t0: f64, controls: &[Vec2]) -> Vec<Vec2> {
        let dt = self.horizon.dt;
        let CostWeights { q, r } = self.weights;
        let mut grad = vec![Vec2::ZERO; controls.len()];
        // No terminal term: the final state does not enter the cost.
        let mut lambda = Vec2::ZERO;
        for k in (0..controls.len()).rev() {
            let x = ro.states[k];
            let (xbar, ubar) = rk4_adjoint(self.field, x, controls[k], t0 + k as f64 * dt, dt, lambda);
            grad[k] = ubar + (2.0 * r * dt) * controls[k];
            lambda = xbar + (2.0 * q * dt) * (x - self.goal.x_goal);
        }
        grad
    }

    /// Gradient of the optimal cost with respect to the initial state,
    /// holding `controls` fixed.
    pub fn state_sensitivity(&self, x0: Vec2, t0: f64, controls: &[Vec2]) -> Result<Vec2> {
        let ro = self.rollout(x0, t0, controls)?;
        let dt = self.horizon.dt;
        let mut lambda = Vec2::ZERO;
        for k in (0..controls.len()).rev() {
            let x = ro.states[k];
            let (xbar, _) = rk4_adjoint(self.field, x, controls[k], t0 + k as f64 * dt, dt, lambda);
            lambda = xbar + (2.0 * self.weights.q * dt) * (x - self.goal.x_goal);
        }
        Ok(lambda)
    }

    fn project(&self, u: Vec2) -> Vec2 {
        u.clamp_box(self.bounds.u_max)
    }

    fn projected_gradient_norm(&self, controls: &[Vec2], grad: &[Vec2]) -> f64 {
        controls
            .iter()
            .zip(grad)
            .map(|(&u, &g)| (self.project(u - g) - u).max_abs())
            .fold(0.0, f64::max)
    }

    /// Projected gradient descent with Armijo backtracking.
    ///
    /// Starts from `warm_start` (projected onto the box) or from zero.
    /// Hitting the iteration cap or a vanishing step returns the current
    /// iterate with `converged = false`.
    pub fn solve(&self, x0: Vec2, t0: f64, warm_start: Option<&[Vec2]>) -> Result<OcpSolution> {
        self.options.validate()?;
        let n = self.horizon.n_steps;
        let mut u: Vec<Vec2> = match warm_start {
            Some(w) => {
                self.check_len(w)?;
                w.iter().map(|&v| self.project(v)).collect()
            }
            None => vec![Vec2::ZERO; n],
        };
        let opts = &self.options;
        let mut ro = self.rollout(x0, t0, &u)?;
        let mut cost = ro.cost_total();
        let mut trace = vec![cost];
        let mut iterations = 0;
        let mut converged = false;
        let mut kkt;
        let mut cand = vec![Vec2::ZERO; n];
        loop {
            let grad = self.gradient_from(&ro, t0, &u);
            kkt = self.projected_gradient_norm(&u, &grad);
            if kkt < opts.tol {
                converged = true;
                break;
            }
            if iterations >= opts.max_iter {
                break;
            }
            let mut alpha = opts.initial_step;
            let mut accepted = None;
            while alpha >= opts.min_step {
                let mut slope = 0.0;
                for k in 0..n {
                    cand[k] = self.project(u[k] - alpha * grad[k]);
                    slope += grad[k].dot(cand[k] - u[k]);
                }
                if let Ok(next) = self.rollout(x0, t0, &cand) {
                    let c = next.cost_total();
                    if c <= cost + opts.sufficient_decrease * slope {
                        accepted = Some((next, c));
                        break;
                    }
                    // Near the optimum of a stiff problem the decrease drops below
                    // cost roundoff; fall back to the derivative form of the test.
                    if c <= cost && (c - cost).abs() <= ROUNDOFF_BAND * cost.abs() {
                        let g_next = self.gradient_from(&next, t0, &cand);
                        let d_next: f64 = g_next.iter().zip(cand.iter().zip(&u)).map(|(g, (a, b))| g.dot(*a - *b)).sum();
                        if d_next <= -(1.0 - 2.0 * opts.sufficient_decrease) * slope {
                            accepted = Some((next, c));
                            break;
                        }
                    }
                }
                alpha *= opts.backtrack;
            }
            match accepted {
                Some((next, c)) => {
                    core::mem::swap(&mut u, &mut cand);
                    ro = next;
                    cost = c;
                    trace.push(c);
                    iterations += 1;
                }
                None => break,
            }
        }
        Ok(OcpSolution {
            controls: u,
            states: ro.states,
            cost_total: cost,
            cost_state: ro.cost_state,
            cost_control: ro.cost_control,
            iterations,
            converged,
            kkt_residual: kkt,
            cost_trace: trace,
        })
    }
}
