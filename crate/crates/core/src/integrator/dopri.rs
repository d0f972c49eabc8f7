//! Dormand–Prince 5(4) embedded pair with its free 4th-order interpolant.

use super::Tolerances;

pub(crate) type Vec2 = [f64; 2];

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Continuous extension over one accepted step.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Dense {
    t0: f64,
    h: f64,
    r: [Vec2; 5],
}

impl Dense {
    pub(crate) fn eval(&self, t: f64) -> Vec2 {
        let s = (t - self.t0) / self.h;
        let s1 = 1.0 - s;
        let mut out = [0.0; 2];
        for (i, o) in out.iter_mut().enumerate() {
            let r = |k: usize| self.r[k][i];
            *o = r(0) + s * (r(1) + s1 * (r(2) + s * (r(3) + s1 * r(4))));
        }
        out
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct RawStep {
    pub y1: Vec2,
    /// Right-hand side at the end point (first stage of the next step).
    pub k7: Vec2,
    /// Scaled RMS error estimate; the step is acceptable when `<= 1`.
    pub err: f64,
    pub dense: Dense,
}

#[inline]
fn axpy(y: Vec2, h: f64, terms: &[(f64, Vec2)]) -> Vec2 {
    let mut out = y;
    for (c, k) in terms {
        out[0] += h * c * k[0];
        out[1] += h * c * k[1];
    }
    out
}

pub(crate) fn dopri_step<F>(f: &F, t: f64, y: Vec2, k1: Vec2, h: f64, tol: &Tolerances) -> RawStep
where
    F: Fn(f64, Vec2) -> Vec2,
{
    let k2 = f(t + C2 * h, axpy(y, h, &[(A21, k1)]));
    let k3 = f(t + C3 * h, axpy(y, h, &[(A31, k1), (A32, k2)]));
    let k4 = f(t + C4 * h, axpy(y, h, &[(A41, k1), (A42, k2), (A43, k3)]));
    let k5 = f(t + C5 * h, axpy(y, h, &[(A51, k1), (A52, k2), (A53, k3), (A54, k4)]));
    let k6 = f(
        t + h,
        axpy(y, h, &[(A61, k1), (A62, k2), (A63, k3), (A64, k4), (A65, k5)]),
    );
    let y1 = axpy(y, h, &[(A71, k1), (A73, k3), (A74, k4), (A75, k5), (A76, k6)]);
    let k7 = f(t + h, y1);

    let mut sq = 0.0;
    for i in 0..2 {
        let e = h
            * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        let sk = tol.abs_tol.max(tol.rel_tol * y[i].abs().max(y1[i].abs()));
        sq += (e / sk).powi(2);
    }
    let err = (sq / 2.0).sqrt();

    let mut r = [[0.0; 2]; 5];
    for i in 0..2 {
        let ydiff = y1[i] - y[i];
        let bspl = h * k1[i] - ydiff;
        r[0][i] = y[i];
        r[1][i] = ydiff;
        r[2][i] = bspl;
        r[3][i] = ydiff - h * k7[i] - bspl;
        r[4][i] = h
            * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
    }

    RawStep { y1, k7, err, dense: Dense { t0: t, h, r } }
}

/// Step-size factor from an error estimate.
pub(crate) fn step_factor(err: f64, rejected: bool) -> f64 {
    let fac = if err == 0.0 { 5.0 } else { 0.9 * err.powf(-0.2) };
    let hi = if rejected { 1.0 } else { 5.0 };
    fac.clamp(0.2, hi)
}

/// Starting step from the local scale of the solution and its derivatives.
pub(crate) fn initial_step<F>(f: &F, t: f64, y: Vec2, k1: Vec2, tol: &Tolerances) -> f64
where
    F: Fn(f64, Vec2) -> Vec2,
{
    let sk = |v: f64| tol.abs_tol.max(tol.rel_tol * v.abs());
    let norm = |v: Vec2| (((v[0] / sk(y[0])).powi(2) + (v[1] / sk(y[1])).powi(2)) / 2.0).sqrt();
    let d0 = norm(y);
    let d1 = norm(k1);
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h0 = h0.min(tol.max_dt);
    let y1 = [y[0] + h0 * k1[0], y[1] + h0 * k1[1]];
    let k2 = f(t + h0, y1);
    let d2 = norm([k2[0] - k1[0], k2[1] - k1[1]]) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(tol.max_dt)
}
