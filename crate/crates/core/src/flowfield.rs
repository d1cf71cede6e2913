//! Analytic unsteady velocity fields.
//!
//! Everything downstream (integration, FTLE, optimal control) sees a field
//! only through [`VelocityField`], so passive flows, verification flows and
//! policy-controlled flows are interchangeable.

use alloc::format;
use alloc::string::String;

use crate::error::{Error, Result};
use crate::math::{self, PI};
use crate::vec2::{Mat2, Vec2};

/// A velocity field `v(x, t)` on the plane.
pub trait VelocityField: Sync {
    fn velocity(&self, p: Vec2, t: f64) -> Vec2;

    /// Spatial velocity gradient `∂v/∂x`. Defaults to central differences.
    fn jacobian(&self, p: Vec2, t: f64) -> Mat2 {
        let h = 1e-6;
        let dx = self.velocity(p + Vec2::new(h, 0.0), t) - self.velocity(p - Vec2::new(h, 0.0), t);
        let dy = self.velocity(p + Vec2::new(0.0, h), t) - self.velocity(p - Vec2::new(0.0, h), t);
        let s = 0.5 / h;
        Mat2::new(s * dx.x, s * dy.x, s * dx.y, s * dy.y)
    }

    /// Temporal period, if the field is periodic in time.
    fn period(&self) -> Option<f64> {
        None
    }

    /// `true` if the field does not depend on time.
    fn is_steady(&self) -> bool {
        false
    }
}

impl<F: VelocityField + ?Sized> VelocityField for &F {
    fn velocity(&self, p: Vec2, t: f64) -> Vec2 {
        (**self).velocity(p, t)
    }
    fn jacobian(&self, p: Vec2, t: f64) -> Mat2 {
        (**self).jacobian(p, t)
    }
    fn period(&self) -> Option<f64> {
        (**self).period()
    }
    fn is_steady(&self) -> bool {
        (**self).is_steady()
    }
}

/// Axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainBox {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl DomainBox {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self> {
        let finite = [x_min, x_max, y_min, y_max].iter().all(|v| v.is_finite());
        if !finite || x_min >= x_max || y_min >= y_max {
            return Err(Error::Config("domain box must satisfy x_min < x_max and y_min < y_max"));
        }
        Ok(DomainBox { x_min, x_max, y_min, y_max })
    }

    /// The double-gyre domain `[0, 2] × [0, 1]`.
    pub const fn double_gyre() -> Self {
        DomainBox { x_min: 0.0, x_max: 2.0, y_min: 0.0, y_max: 1.0 }
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.x_min && p.x <= self.x_max && p.y >= self.y_min && p.y <= self.y_max
    }

    pub fn clamp(&self, p: Vec2) -> Vec2 {
        Vec2::new(p.x.clamp(self.x_min, self.x_max), p.y.clamp(self.y_min, self.y_max))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoubleGyreParams {
    pub a: f64,
    pub epsilon: f64,
    pub omega: f64,
}

impl DoubleGyreParams {
    pub fn new(a: f64, epsilon: f64, omega: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::Config("double gyre A must be positive"));
        }
        if !(0.0..0.5).contains(&epsilon) {
            return Err(Error::Config("double gyre epsilon must lie in [0, 0.5)"));
        }
        if !(omega > 0.0 && omega.is_finite()) {
            return Err(Error::Config("double gyre omega must be positive"));
        }
        Ok(DoubleGyreParams { a, epsilon, omega })
    }

    /// `A = 0.1`, `ε = 0.25`, `ω = 2π/10`.
    pub fn standard() -> Self {
        DoubleGyreParams { a: 0.1, epsilon: 0.25, omega: 2.0 * PI / 10.0 }
    }

    pub fn steady() -> Self {
        DoubleGyreParams { epsilon: 0.0, ..Self::standard() }
    }

    pub fn period(&self) -> f64 {
        2.0 * PI / self.omega
    }
}

/// Double-gyre velocity with forcing `f(x,t) = ε sin(ωt) x² + (1 - 2ε sin(ωt)) x`.
#[inline]
pub fn double_gyre_velocity(p: Vec2, t: f64, params: &DoubleGyreParams) -> Vec2 {
    let s = params.epsilon * math::sin(params.omega * t);
    let f = s * p.x * p.x + (1.0 - 2.0 * s) * p.x;
    let pa = PI * params.a;
    let (sf, cf) = (math::sin(PI * f), math::cos(PI * f));
    let (sy, cy) = (math::sin(PI * p.y), math::cos(PI * p.y));
    Vec2::new(-pa * sf * cy, pa * cf * sy)
}

fn double_gyre_jacobian(p: Vec2, t: f64, params: &DoubleGyreParams) -> Mat2 {
    let s = params.epsilon * math::sin(params.omega * t);
    let f = s * p.x * p.x + (1.0 - 2.0 * s) * p.x;
    let df = 2.0 * s * p.x + 1.0 - 2.0 * s;
    let ppa = PI * PI * params.a;
    let (sf, cf) = (math::sin(PI * f), math::cos(PI * f));
    let (sy, cy) = (math::sin(PI * p.y), math::cos(PI * p.y));
    Mat2::new(-ppa * cf * df * cy, ppa * sf * sy, -ppa * sf * df * sy, ppa * cf * cy)
}

/// Linear saddle `(λx, -λy)`.
#[inline]
pub fn saddle_velocity(p: Vec2, _t: f64, lambda: f64) -> Vec2 {
    Vec2::new(lambda * p.x, -lambda * p.y)
}

/// Rigid rotation `(-ωy, ωx)`.
#[inline]
pub fn rotation_velocity(p: Vec2, _t: f64, omega: f64) -> Vec2 {
    Vec2::new(-omega * p.y, omega * p.x)
}

/// The built-in analytic flows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnalyticFlow {
    DoubleGyre(DoubleGyreParams),
    Saddle { lambda: f64 },
    Rotation { omega: f64 },
    Zero,
}

impl AnalyticFlow {
    pub fn name(&self) -> &'static str {
        match self {
            AnalyticFlow::DoubleGyre(_) => "double_gyre",
            AnalyticFlow::Saddle { .. } => "saddle",
            AnalyticFlow::Rotation { .. } => "rotation",
            AnalyticFlow::Zero => "zero",
        }
    }

    /// Canonical text descriptor; two flows match iff their descriptors match.
    pub fn descriptor(&self) -> String {
        match self {
            AnalyticFlow::DoubleGyre(p) => {
                format!("double_gyre(A={:?},epsilon={:?},omega={:?})", p.a, p.epsilon, p.omega)
            }
            AnalyticFlow::Saddle { lambda } => format!("saddle(lambda={lambda:?})"),
            AnalyticFlow::Rotation { omega } => format!("rotation(omega={omega:?})"),
            AnalyticFlow::Zero => "zero".into(),
        }
    }
}

impl VelocityField for AnalyticFlow {
    #[inline]
    fn velocity(&self, p: Vec2, t: f64) -> Vec2 {
        match self {
            AnalyticFlow::DoubleGyre(params) => double_gyre_velocity(p, t, params),
            AnalyticFlow::Saddle { lambda } => saddle_velocity(p, t, *lambda),
            AnalyticFlow::Rotation { omega } => rotation_velocity(p, t, *omega),
            AnalyticFlow::Zero => Vec2::ZERO,
        }
    }

    fn jacobian(&self, p: Vec2, t: f64) -> Mat2 {
        match self {
            AnalyticFlow::DoubleGyre(params) => double_gyre_jacobian(p, t, params),
            AnalyticFlow::Saddle { lambda } => Mat2::new(*lambda, 0.0, 0.0, -*lambda),
            AnalyticFlow::Rotation { omega } => Mat2::new(0.0, -*omega, *omega, 0.0),
            AnalyticFlow::Zero => Mat2::ZERO,
        }
    }

    fn period(&self) -> Option<f64> {
        match self {
            AnalyticFlow::DoubleGyre(p) if p.epsilon > 0.0 => Some(p.period()),
            _ => None,
        }
    }

    fn is_steady(&self) -> bool {
        !matches!(self, AnalyticFlow::DoubleGyre(p) if p.epsilon > 0.0)
    }
}

/// Adapts a closure into a [`VelocityField`].
pub struct FnField<F>(pub F);

impl<F: Fn(Vec2, f64) -> Vec2 + Sync> VelocityField for FnField<F> {
    fn velocity(&self, p: Vec2, t: f64) -> Vec2 {
        (self.0)(p, t)
    }
}
