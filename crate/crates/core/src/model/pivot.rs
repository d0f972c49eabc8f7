//! Prescribed horizontal acceleration of the pivot point.
//!
//! Every law shipped here is Lipschitz in `t` (piecewise-linear tables
//! included), and each one can report an upper bound of `|accel|` over a
//! closed time interval. For closed-form laws that bound is exact; for tables
//! it is the maximum over the knots and the interval endpoints, which is also
//! exact for linear interpolation.

use serde::{Deserialize, Serialize};

use super::ModelError;

/// Pivot acceleration law `t -> accel(t)` in m/s².
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PivotLaw {
    Constant {
        a: f64,
    },
    /// `amp * sin(omega * t + phase)`
    Sine {
        amp: f64,
        omega: f64,
        #[serde(default)]
        phase: f64,
    },
    /// `coeffs[0] + coeffs[1] t + coeffs[2] t^2 + ...`
    Poly {
        coeffs: Vec<f64>,
    },
    /// Linear interpolation between `(t, a)` knots, held constant outside.
    Table {
        knots: Vec<[f64; 2]>,
    },
}

impl Default for PivotLaw {
    fn default() -> Self {
        PivotLaw::Constant { a: 0.0 }
    }
}

impl PivotLaw {
    pub fn constant(a: f64) -> Self {
        PivotLaw::Constant { a }
    }

    pub fn sine(amp: f64, omega: f64, phase: f64) -> Self {
        PivotLaw::Sine { amp, omega, phase }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(ModelError::InvalidPivot(format!("{name} must be finite")))
            }
        };
        match self {
            PivotLaw::Constant { a } => finite("a", *a),
            PivotLaw::Sine { amp, omega, phase } => {
                finite("amp", *amp)?;
                finite("omega", *omega)?;
                finite("phase", *phase)
            }
            PivotLaw::Poly { coeffs } => {
                if coeffs.is_empty() {
                    return Err(ModelError::InvalidPivot(
                        "poly needs at least one coefficient".into(),
                    ));
                }
                coeffs.iter().try_for_each(|c| finite("coeffs", *c))
            }
            PivotLaw::Table { knots } => {
                if knots.is_empty() {
                    return Err(ModelError::InvalidPivot(
                        "table needs at least one knot".into(),
                    ));
                }
                for k in knots {
                    finite("knot t", k[0])?;
                    finite("knot a", k[1])?;
                }
                if knots.windows(2).any(|w| w[1][0] <= w[0][0]) {
                    return Err(ModelError::InvalidPivot(
                        "table knot times must be strictly increasing".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// Pivot acceleration at time `t`.
    pub fn accel(&self, t: f64) -> f64 {
        match self {
            PivotLaw::Constant { a } => *a,
            PivotLaw::Sine { amp, omega, phase } => amp * (omega * t + phase).sin(),
            PivotLaw::Poly { coeffs } => poly_eval(coeffs, t),
            PivotLaw::Table { knots } => table_eval(knots, t),
        }
    }

    /// Global Lipschitz constant of `accel`, when one exists.
    ///
    /// Polynomials of degree two or more are only Lipschitz on bounded
    /// intervals; use [`PivotLaw::lipschitz_on`] for those.
    pub fn lipschitz_bound(&self) -> Option<f64> {
        match self {
            PivotLaw::Constant { .. } => Some(0.0),
            PivotLaw::Sine { amp, omega, .. } => Some((amp * omega).abs()),
            PivotLaw::Poly { coeffs } => match trimmed_degree(coeffs) {
                0 => Some(0.0),
                1 => Some(coeffs[1].abs()),
                _ => None,
            },
            PivotLaw::Table { knots } => Some(
                knots
                    .windows(2)
                    .map(|w| ((w[1][1] - w[0][1]) / (w[1][0] - w[0][0])).abs())
                    .fold(0.0, f64::max),
            ),
        }
    }

    /// Lipschitz constant of `accel` restricted to `[t0, t1]`.
    pub fn lipschitz_on(&self, t0: f64, t1: f64) -> f64 {
        match self {
            PivotLaw::Poly { coeffs } => {
                let d = poly_derivative(coeffs);
                poly_abs_max(&d, t0.min(t1), t0.max(t1))
            }
            other => other.lipschitz_bound().unwrap_or(f64::INFINITY),
        }
    }

    /// Upper bound of `|accel(t)|` for `t` in `[t0, t1]`.
    pub fn sup_bound(&self, t0: f64, t1: f64) -> f64 {
        let (a, b) = (t0.min(t1), t0.max(t1));
        match self {
            PivotLaw::Constant { a: c } => c.abs(),
            PivotLaw::Sine { amp, omega, phase } => sine_abs_max(*amp, *omega, *phase, a, b),
            PivotLaw::Poly { coeffs } => poly_abs_max(coeffs, a, b),
            PivotLaw::Table { knots } => {
                let mut m = table_eval(knots, a).abs().max(table_eval(knots, b).abs());
                for k in knots {
                    if k[0] > a && k[0] < b {
                        m = m.max(k[1].abs());
                    }
                }
                m
            }
        }
    }

    /// True when the law does not depend on time.
    pub fn is_time_invariant(&self) -> bool {
        match self {
            PivotLaw::Constant { .. } => true,
            PivotLaw::Sine { amp, omega, .. } => *amp == 0.0 || *omega == 0.0,
            PivotLaw::Poly { coeffs } => trimmed_degree(coeffs) == 0,
            PivotLaw::Table { knots } => knots.windows(2).all(|w| w[0][1] == w[1][1]),
        }
    }
}

fn sine_abs_max(amp: f64, omega: f64, phase: f64, a: f64, b: f64) -> f64 {
    let ends = (amp * (omega * a + phase).sin())
        .abs()
        .max((amp * (omega * b + phase).sin()).abs());
    if omega == 0.0 {
        return ends;
    }
    // Extrema of sin(x) sit at x = pi/2 + k pi.
    let (xa, xb) = {
        let (u, v) = (omega * a + phase, omega * b + phase);
        (u.min(v), v.max(u))
    };
    let k = ((xa - std::f64::consts::FRAC_PI_2) / std::f64::consts::PI).ceil();
    let x_ext = std::f64::consts::FRAC_PI_2 + k * std::f64::consts::PI;
    if x_ext <= xb {
        amp.abs()
    } else {
        ends
    }
}

fn table_eval(knots: &[[f64; 2]], t: f64) -> f64 {
    let first = knots[0];
    let last = knots[knots.len() - 1];
    if t <= first[0] {
        return first[1];
    }
    if t >= last[0] {
        return last[1];
    }
    let i = knots.partition_point(|k| k[0] <= t);
    let (k0, k1) = (knots[i - 1], knots[i]);
    let w = (t - k0[0]) / (k1[0] - k0[0]);
    k0[1] + w * (k1[1] - k0[1])
}

fn trimmed_degree(coeffs: &[f64]) -> usize {
    coeffs.iter().rposition(|c| *c != 0.0).unwrap_or(0)
}

pub(crate) fn poly_eval(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c)
}

pub(crate) fn poly_derivative(coeffs: &[f64]) -> Vec<f64> {
    if coeffs.len() <= 1 {
        return vec![0.0];
    }
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .map(|(k, c)| k as f64 * c)
        .collect()
}

/// Real roots of the polynomial inside `[a, b]`.
///
/// Critical points are found recursively from the derivative; between two
/// consecutive critical points the polynomial is monotone, so each sign change
/// there holds exactly one root, found by bisection.
pub(crate) fn poly_roots_in(coeffs: &[f64], a: f64, b: f64) -> Vec<f64> {
    let deg = trimmed_degree(coeffs);
    let coeffs = &coeffs[..=deg];
    if deg == 0 {
        return Vec::new();
    }
    if deg == 1 {
        let r = -coeffs[0] / coeffs[1];
        return if r >= a && r <= b { vec![r] } else { Vec::new() };
    }
    let mut breaks = vec![a];
    breaks.extend(poly_roots_in(&poly_derivative(coeffs), a, b));
    breaks.push(b);

    let mut roots: Vec<f64> = Vec::new();
    for w in breaks.windows(2) {
        let (mut lo, mut hi) = (w[0], w[1]);
        let (flo, fhi) = (poly_eval(coeffs, lo), poly_eval(coeffs, hi));
        if flo == 0.0 {
            roots.push(lo);
            continue;
        }
        if flo * fhi > 0.0 {
            continue;
        }
        if fhi == 0.0 {
            roots.push(hi);
            continue;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if poly_eval(coeffs, mid) * flo > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        roots.push(0.5 * (lo + hi));
    }
    roots.dedup_by(|x, y| (*x - *y).abs() <= f64::EPSILON * (1.0 + x.abs()));
    roots
}

pub(crate) fn poly_abs_max(coeffs: &[f64], a: f64, b: f64) -> f64 {
    let mut m = poly_eval(coeffs, a).abs().max(poly_eval(coeffs, b).abs());
    for r in poly_roots_in(&poly_derivative(coeffs), a, b) {
        m = m.max(poly_eval(coeffs, r).abs());
    }
    m
}
