//! Equations of motion of the inverted pendulum with Coulomb friction and a
//! horizontally moving pivot.
//!
//! The phase point is `(q, p)`: `q` is the angle between the rod and the
//! horizontal line, `p = dq/dt`. Off the plane `p = 0` the motion is an
//! ordinary differential equation
//!
//! ```text
//! dq/dt = p
//! dp/dt = (a/l) sin q - (mu/l) |a cos q - l p^2 + g sin q| sign(p) - (g/l) cos q
//! ```
//!
//! with `a = accel(t)` the pivot acceleration. On `p = 0` the right-hand side
//! is replaced by the closed convex hull of its one-sided limits, which makes
//! the system a differential inclusion.

mod pivot;

pub use pivot::PivotLaw;
pub(crate) use pivot::{poly_abs_max, poly_derivative, poly_eval};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid parameter {name}: {reason}")]
    InvalidParams { name: &'static str, reason: String },
    #[error("invalid pivot law: {0}")]
    InvalidPivot(String),
    #[error("p = 0 lies on the discontinuity set; use the Filippov set there")]
    OnSwitchingSurface,
    #[error("p_star is undefined for mu = 0")]
    FrictionlessBound,
    #[error("empty time interval [{t0}, {t1}]")]
    EmptyInterval { t0: f64, t1: f64 },
}

fn default_mass() -> f64 {
    1.0
}

fn default_gravity() -> f64 {
    9.8
}

/// Physical constants: rod length `l` (m), point mass `m` (kg), gravity `g`
/// (m/s²) and the dry friction coefficient `mu`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub l: f64,
    #[serde(default = "default_mass")]
    pub m: f64,
    #[serde(default = "default_gravity")]
    pub g: f64,
    pub mu: f64,
}

impl Params {
    pub fn new(l: f64, m: f64, g: f64, mu: f64) -> Result<Self, ModelError> {
        let p = Params { l, m, g, mu };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = |name: &'static str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(ModelError::InvalidParams { name, reason: format!("must be > 0, got {v}") })
            }
        };
        positive("l", self.l)?;
        positive("m", self.m)?;
        positive("g", self.g)?;
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            return Err(ModelError::InvalidParams {
                name: "mu",
                reason: format!("must be >= 0, got {}", self.mu),
            });
        }
        Ok(())
    }
}

impl Default for Params {
    fn default() -> Self {
        Params { l: 1.0, m: 1.0, g: 9.8, mu: 0.5 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "slip")]
    Slipping,
    #[serde(rename = "stuck")]
    Stuck,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Slipping => "slip",
            Mode::Stuck => "stuck",
        }
    }
}

/// Phase point. `q` is kept unwrapped.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub q: f64,
    pub p: f64,
    pub t: f64,
    pub mode: Mode,
}

impl State {
    pub fn slipping(q: f64, p: f64, t: f64) -> Self {
        State { q, p, t, mode: Mode::Slipping }
    }

    pub fn stuck(q: f64, t: f64) -> Self {
        State { q, p: 0.0, t, mode: Mode::Stuck }
    }

    /// `q` reduced to `[0, 2 pi)`, for display only.
    pub fn q_wrapped(&self) -> f64 {
        self.q.rem_euclid(std::f64::consts::TAU)
    }
}

/// Value of the set-valued right-hand side at a phase point: `dq/dt` is
/// single-valued, `dp/dt` ranges over `[p_dot_lo, p_dot_hi]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilippovSet {
    pub q_dot: f64,
    pub p_dot_lo: f64,
    pub p_dot_hi: f64,
}

impl FilippovSet {
    pub fn is_singleton(&self) -> bool {
        self.p_dot_lo == self.p_dot_hi
    }

    pub fn contains_p_dot(&self, v: f64) -> bool {
        self.p_dot_lo <= v && v <= self.p_dot_hi
    }

    /// Euclidean distance from the point `(q_dot, p_dot)` to this set.
    pub fn distance_to(&self, q_dot: f64, p_dot: f64) -> f64 {
        let dq = q_dot - self.q_dot;
        let dp = if p_dot < self.p_dot_lo {
            self.p_dot_lo - p_dot
        } else if p_dot > self.p_dot_hi {
            p_dot - self.p_dot_hi
        } else {
            0.0
        };
        dq.hypot(dp)
    }

    /// One-sided Hausdorff excess `sup_{a in self} dist(a, other)`.
    pub fn excess_over(&self, other: &FilippovSet) -> f64 {
        // The sup of a convex distance over a segment is attained at an end.
        other
            .distance_to(self.q_dot, self.p_dot_lo)
            .max(other.distance_to(self.q_dot, self.p_dot_hi))
    }
}

/// Parameters and pivot law bundled together; all the right-hand-side
/// evaluations hang off this.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pendulum {
    pub params: Params,
    pub pivot: PivotLaw,
}

impl Pendulum {
    pub fn new(params: Params, pivot: PivotLaw) -> Result<Self, ModelError> {
        params.validate()?;
        pivot.validate()?;
        Ok(Pendulum { params, pivot })
    }

    /// `|N| = m |a cos q - l p^2 + g sin q|`
    pub fn normal_force_mag(&self, q: f64, p: f64, t: f64) -> f64 {
        self.params.m * self.normal_term(q, p, t).abs()
    }

    /// `a cos q - l p^2 + g sin q`, the signed normal force per unit mass.
    #[inline]
    pub fn normal_term(&self, q: f64, p: f64, t: f64) -> f64 {
        let Params { l, g, .. } = self.params;
        let (s, c) = q.sin_cos();
        self.pivot.accel(t) * c - l * p * p + g * s
    }

    /// Friction-free part of `dp/dt`: `(a sin q - g cos q) / l`.
    #[inline]
    pub fn drift(&self, q: f64, t: f64) -> f64 {
        let Params { l, g, .. } = self.params;
        let (s, c) = q.sin_cos();
        (self.pivot.accel(t) * s - g * c) / l
    }

    /// Largest friction contribution to `dp/dt` at rest: `(mu/l) |a cos q + g sin q|`.
    #[inline]
    pub fn friction_bound(&self, q: f64, t: f64) -> f64 {
        let Params { l, g, mu, .. } = self.params;
        let (s, c) = q.sin_cos();
        mu / l * (self.pivot.accel(t) * c + g * s).abs()
    }

    /// `dp/dt` on the branch where friction opposes motion with sign `side`
    /// (`+1` for `p > 0`, `-1` for `p < 0`). Defined for every `p`, so the
    /// branch can be continued smoothly across `p = 0` for event location.
    #[inline]
    pub fn branch_accel(&self, side: f64, q: f64, p: f64, t: f64) -> f64 {
        let Params { l, g, mu, .. } = self.params;
        let a = self.pivot.accel(t);
        let (s, c) = q.sin_cos();
        let n = a * c - l * p * p + g * s;
        (a * s - g * c) / l - side * mu / l * n.abs()
    }

    pub fn accel_slipping(&self, q: f64, p: f64, t: f64) -> Result<f64, ModelError> {
        if p == 0.0 {
            return Err(ModelError::OnSwitchingSurface);
        }
        Ok(self.branch_accel(p.signum(), q, p, t))
    }

    /// One-sided limits of `dp/dt` on `p = 0`: `(from p > 0, from p < 0)`.
    /// The first never exceeds the second.
    pub fn limit_fields(&self, q: f64, t: f64) -> (f64, f64) {
        let d = self.drift(q, t);
        let b = self.friction_bound(q, t);
        (d - b, d + b)
    }

    pub fn filippov_set(&self, state: &State) -> FilippovSet {
        if state.p != 0.0 {
            let a = self.branch_accel(state.p.signum(), state.q, state.p, state.t);
            FilippovSet { q_dot: state.p, p_dot_lo: a, p_dot_hi: a }
        } else {
            let (lo, hi) = self.limit_fields(state.q, state.t);
            FilippovSet { q_dot: 0.0, p_dot_lo: lo, p_dot_hi: hi }
        }
    }

    /// Static friction can hold the rod at angle `q` at time `t`.
    pub fn stiction_holds(&self, q: f64, t: f64) -> bool {
        self.stiction_margin(q, t) <= 0.0
    }

    /// `|drift| - friction_bound`; stiction holds iff this is `<= 0`.
    #[inline]
    pub fn stiction_margin(&self, q: f64, t: f64) -> f64 {
        self.drift(q, t).abs() - self.friction_bound(q, t)
    }

    /// Velocity above which `|p|` strictly decreases on `[t0, t1]`.
    pub fn p_star(&self, t0: f64, t1: f64) -> Result<f64, ModelError> {
        let Params { l, g, mu, .. } = self.params;
        if mu <= 0.0 {
            return Err(ModelError::FrictionlessBound);
        }
        if !(t1 > t0) {
            return Err(ModelError::EmptyInterval { t0, t1 });
        }
        let amax = self.pivot.sup_bound(t0, t1);
        Ok(((g + amax) * (1.0 + 1.0 / mu) / l).sqrt())
    }

    /// `E = l^2 p^2 / 2 + g l sin q` (per unit mass), conserved when `mu = 0`
    /// and the pivot does not accelerate.
    pub fn energy(&self, q: f64, p: f64) -> f64 {
        let Params { l, g, .. } = self.params;
        0.5 * l * l * p * p + g * l * q.sin()
    }
}
