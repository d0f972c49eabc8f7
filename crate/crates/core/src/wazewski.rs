//! Shooting along a curve of initial conditions for a motion that never
//! leaves the strip `0 < q < pi` (or its closure).
//!
//! Starting points `(q, sigma(q))` with `sigma(0) < 0 < sigma(pi)` leave
//! through `q = 0` at one end of the curve and through `q = pi` at the other.
//! Exit sides depend continuously on the starting point, so bisection on the
//! curve parameter closes in on a point whose motion stays inside; the
//! search stops at the first one that survives the horizon.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fingerprint::fingerprint;
use crate::integrator::{
    integrate, Event, EventKind, IntegrateError, RegionGuard, Side, Tolerances, Trajectory,
};
use crate::model::{poly_abs_max, poly_derivative, poly_eval, Mode, Pendulum, State};

/// Smallest bracket width the bisection works down to.
pub const MIN_BRACKET_WIDTH: f64 = 1e-12;
/// Grid used to probe curves for continuity and for intersections.
pub const CURVE_PROBE_POINTS: usize = 1001;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ShootError {
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
    #[error("starting angle {0} is outside [0, pi]")]
    InvalidQ0(f64),
    #[error("invalid curve: {0}")]
    InvalidCurve(String),
    #[error("precondition failed: the curve start classifies {at_zero} and its end {at_pi} (need exit_low and exit_high)")]
    PreconditionFailed { at_zero: String, at_pi: String },
    #[error("curves {a} and {b} intersect near q = {q}")]
    CurvesIntersect { a: usize, b: usize, q: f64 },
}

/// Curve of starting velocities `p = sigma(q)` over `q` in `[0, pi]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SigmaCurve {
    /// `sigma(q) = slope * q + offset`.
    Linear { slope: f64, offset: f64 },
    /// `sigma(q) = sum c_k q^k`.
    Poly { coeffs: Vec<f64> },
    /// Piecewise linear through `(q, p)` knots covering `[0, pi]`.
    Table { knots: Vec<[f64; 2]> },
}

impl Default for SigmaCurve {
    fn default() -> Self {
        SigmaCurve::Linear { slope: 1.0, offset: -PI / 2.0 }
    }
}

impl SigmaCurve {
    pub fn shifted(&self, dp: f64) -> Self {
        match self {
            SigmaCurve::Linear { slope, offset } => SigmaCurve::Linear { slope: *slope, offset: offset + dp },
            SigmaCurve::Poly { coeffs } => {
                let mut c = coeffs.clone();
                c[0] += dp;
                SigmaCurve::Poly { coeffs: c }
            }
            SigmaCurve::Table { knots } => {
                SigmaCurve::Table { knots: knots.iter().map(|[q, p]| [*q, p + dp]).collect() }
            }
        }
    }

    pub fn eval(&self, q: f64) -> f64 {
        match self {
            SigmaCurve::Linear { slope, offset } => slope * q + offset,
            SigmaCurve::Poly { coeffs } => poly_eval(coeffs, q),
            SigmaCurve::Table { knots } => {
                let i = knots.partition_point(|k| k[0] <= q).clamp(1, knots.len() - 1);
                let ([q0, p0], [q1, p1]) = (knots[i - 1], knots[i]);
                p0 + (p1 - p0) * (q - q0) / (q1 - q0)
            }
        }
    }

    /// Lipschitz constant of the curve over `[0, pi]`.
    pub fn lipschitz(&self) -> f64 {
        match self {
            SigmaCurve::Linear { slope, .. } => slope.abs(),
            SigmaCurve::Poly { coeffs } => poly_abs_max(&poly_derivative(coeffs), 0.0, PI),
            SigmaCurve::Table { knots } => knots
                .windows(2)
                .map(|w| ((w[1][1] - w[0][1]) / (w[1][0] - w[0][0])).abs())
                .fold(0.0, f64::max),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            SigmaCurve::Linear { slope, offset } => format!("linear(slope={slope}, offset={offset})"),
            SigmaCurve::Poly { coeffs } => format!("poly{coeffs:?}"),
            SigmaCurve::Table { knots } => format!("table({} knots)", knots.len()),
        }
    }

    /// Shape checks plus the endpoint signs `sigma(0) < 0 < sigma(pi)`.
    pub fn validate(&self) -> Result<(), ShootError> {
        self.validate_shape()?;
        if !(self.eval(0.0) < 0.0 && self.eval(PI) > 0.0) {
            return Err(ShootError::InvalidCurve(format!(
                "sigma endpoint sign: need sigma(0) < 0 < sigma(pi), got {} and {}",
                self.eval(0.0),
                self.eval(PI)
            )));
        }
        Ok(())
    }

    /// Finite coefficients, ordered knots covering `[0, pi]`, and sampled
    /// continuity against [`SigmaCurve::lipschitz`].
    pub fn validate_shape(&self) -> Result<(), ShootError> {
        let bad = |m: &str| Err(ShootError::InvalidCurve(m.to_string()));
        match self {
            SigmaCurve::Linear { slope, offset } => {
                if !(slope.is_finite() && offset.is_finite()) {
                    return bad("non-finite coefficient");
                }
            }
            SigmaCurve::Poly { coeffs } => {
                if coeffs.is_empty() || coeffs.iter().any(|c| !c.is_finite()) {
                    return bad("polynomial needs finite coefficients");
                }
            }
            SigmaCurve::Table { knots } => {
                if knots.len() < 2 || knots.iter().flatten().any(|v| !v.is_finite()) {
                    return bad("table needs at least two finite knots");
                }
                if knots.windows(2).any(|w| w[1][0] <= w[0][0]) {
                    return bad("table knots must have strictly increasing q");
                }
                if knots[0][0] > 0.0 || knots[knots.len() - 1][0] < PI {
                    return bad("table must cover [0, pi]");
                }
            }
        }
        let c = self.lipschitz();
        if !c.is_finite() {
            return bad("unbounded slope");
        }
        // Sampled continuity against the documented constant.
        let dq = PI / (CURVE_PROBE_POINTS - 1) as f64;
        for k in 1..CURVE_PROBE_POINTS {
            let (a, b) = ((k - 1) as f64 * dq, k as f64 * dq);
            let jump = (self.eval(b) - self.eval(a)).abs();
            if jump > c * dq * (1.0 + 1e-9) + 1e-12 {
                return bad(&format!("slope exceeds {c} near q = {a}"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    ExitLow,
    ExitHigh,
    /// Stayed in the region up to the absolute time `horizon`.
    NonFalling { horizon: f64 },
    /// Closed region only: held by friction on a boundary line (`q = 0` or
    /// `q = pi`) at the horizon.
    StuckInside { q_stick: f64 },
}

impl Outcome {
    pub fn name(&self) -> &'static str {
        match self {
            Outcome::ExitLow => "exit_low",
            Outcome::ExitHigh => "exit_high",
            Outcome::NonFalling { .. } => "non_falling",
            Outcome::StuckInside { .. } => "stuck_inside",
        }
    }

    pub fn is_exit(&self) -> bool {
        matches!(self, Outcome::ExitLow | Outcome::ExitHigh)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExitReport {
    pub q0: f64,
    pub p0: f64,
    pub outcome: Outcome,
    pub exit_event: Option<Event>,
    /// Fingerprint of the trajectory behind this report.
    pub trajectory_ref: String,
    /// Smallest `min(q, pi - q)` over the trajectory samples.
    pub min_boundary_distance: f64,
    /// Time the motion ends: exit time or horizon.
    pub end_time: f64,
    /// `p` at the exit point.
    pub exit_p: Option<f64>,
    /// The exit happened with `|p|` inside the stick band at `q = 0` or `pi`.
    pub corner_exit: bool,
    /// Visits of a boundary corner that ended with the motion going back
    /// inside.
    pub corner_touches: usize,
}

/// Options shared by all classifications of one search.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShootConfig {
    pub t0: f64,
    /// Absolute end time.
    pub horizon: f64,
    pub tol: Tolerances,
    /// Strict: the region is the open strip. Otherwise its closure, with
    /// friction deciding at the corners.
    pub strict: bool,
}

impl ShootConfig {
    pub fn guard(&self) -> RegionGuard {
        if self.strict {
            RegionGuard::open(0.0, PI)
        } else {
            RegionGuard::closed(0.0, PI)
        }
    }
}

pub fn classify_exit(
    q0: f64,
    curve: &SigmaCurve,
    pend: &Pendulum,
    cfg: &ShootConfig,
) -> Result<ExitReport, ShootError> {
    classify_exit_traced(q0, curve, pend, cfg).map(|(r, _)| r)
}

/// [`classify_exit`] that also hands back the trajectory.
pub fn classify_exit_traced(
    q0: f64,
    curve: &SigmaCurve,
    pend: &Pendulum,
    cfg: &ShootConfig,
) -> Result<(ExitReport, Trajectory), ShootError> {
    if !(0.0..=PI).contains(&q0) {
        return Err(ShootError::InvalidQ0(q0));
    }
    let p0 = curve.eval(q0);
    let traj = integrate(State::slipping(q0, p0, cfg.t0), pend, cfg.horizon, &cfg.tol, Some(cfg.guard()))?;
    Ok((report_for(q0, p0, &traj, cfg), traj))
}

fn report_for(q0: f64, p0: f64, traj: &Trajectory, cfg: &ShootConfig) -> ExitReport {
    let exit = traj.exit_event().copied();
    let last = traj.final_state();
    let outcome = match exit.map(|e| e.kind) {
        Some(EventKind::RegionExit { side: Side::Low }) => Outcome::ExitLow,
        Some(EventKind::RegionExit { side: Side::High }) => Outcome::ExitHigh,
        _ if !cfg.strict && last.mode == Mode::Stuck && (last.q <= 0.0 || last.q >= PI) => {
            Outcome::StuckInside { q_stick: last.q }
        }
        _ => Outcome::NonFalling { horizon: last.t },
    };
    let exit_p = exit.map(|_| last.p);
    let corner_exit = match (exit, exit_p) {
        (Some(e), Some(p)) => {
            p.abs() <= cfg.tol.stick_band && (e.q.abs() <= 1e-9 || (e.q - PI).abs() <= 1e-9)
        }
        _ => false,
    };
    let min_boundary_distance = traj
        .samples
        .iter()
        .map(|s| s.q.min(PI - s.q))
        .fold(f64::INFINITY, f64::min);
    ExitReport {
        q0,
        p0,
        outcome,
        exit_event: exit,
        trajectory_ref: fingerprint(&traj.samples),
        min_boundary_distance,
        end_time: last.t,
        exit_p,
        corner_exit,
        corner_touches: traj.corner_reentries,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BisectStatus {
    Witness,
    /// Bracket narrowed to the resolution limit without a surviving point.
    InconclusiveWidth,
    InconclusiveIterations,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BisectResult {
    pub bracket: (f64, f64),
    pub witness: Option<ExitReport>,
    pub status: BisectStatus,
    pub iterations: usize,
    /// Every classification made, endpoints first.
    pub history: Vec<ExitReport>,
    /// Latest exit time seen among the final bracket endpoints: how long
    /// the best available starting points stay inside.
    pub survival_time: f64,
}

impl BisectResult {
    pub fn is_inconclusive(&self) -> bool {
        self.status != BisectStatus::Witness
    }
}

pub fn bisect_curve(
    curve: &SigmaCurve,
    pend: &Pendulum,
    cfg: &ShootConfig,
    max_iters: usize,
) -> Result<BisectResult, ShootError> {
    // The endpoint signs are not required here: the exit classification
    // of both ends is the actual precondition and is checked directly.
    curve.validate_shape()?;
    let (at_lo, at_hi) = rayon::join(
        || classify_exit(0.0, curve, pend, cfg),
        || classify_exit(PI, curve, pend, cfg),
    );
    let (mut lo, mut hi) = (at_lo?, at_hi?);
    if lo.outcome != Outcome::ExitLow || hi.outcome != Outcome::ExitHigh {
        return Err(ShootError::PreconditionFailed {
            at_zero: lo.outcome.name().into(),
            at_pi: hi.outcome.name().into(),
        });
    }
    let mut history = vec![lo.clone(), hi.clone()];
    let mut iterations = 0;
    let mut witness = None;
    let status = loop {
        if hi.q0 - lo.q0 <= MIN_BRACKET_WIDTH {
            break BisectStatus::InconclusiveWidth;
        }
        if iterations >= max_iters {
            break BisectStatus::InconclusiveIterations;
        }
        let mid = 0.5 * (lo.q0 + hi.q0);
        if mid <= lo.q0 || mid >= hi.q0 {
            break BisectStatus::InconclusiveWidth;
        }
        iterations += 1;
        let r = classify_exit(mid, curve, pend, cfg)?;
        history.push(r.clone());
        match r.outcome {
            Outcome::ExitLow => lo = r,
            Outcome::ExitHigh => hi = r,
            Outcome::NonFalling { .. } | Outcome::StuckInside { .. } => {
                witness = Some(r);
                break BisectStatus::Witness;
            }
        }
    };
    Ok(BisectResult {
        bracket: (lo.q0, hi.q0),
        survival_time: lo.end_time.max(hi.end_time),
        witness,
        status,
        iterations,
        history,
    })
}

/// Rejects families in which two curves meet (or swap order) on the probe
/// grid.
pub fn check_non_intersecting(curves: &[SigmaCurve]) -> Result<(), ShootError> {
    let qs: Vec<f64> = (0..CURVE_PROBE_POINTS)
        .map(|k| PI * k as f64 / (CURVE_PROBE_POINTS - 1) as f64)
        .collect();
    for a in 0..curves.len() {
        for b in a + 1..curves.len() {
            let mut sign = 0.0;
            for &q in &qs {
                let d = curves[a].eval(q) - curves[b].eval(q);
                if d == 0.0 || (sign != 0.0 && d.signum() != sign) {
                    return Err(ShootError::CurvesIntersect { a, b, q });
                }
                sign = d.signum();
            }
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepEntry {
    pub curve_id: usize,
    pub result: Result<BisectResult, ShootError>,
}

/// Bisects every curve of a non-intersecting family in parallel. Results
/// are in input order; a failing curve does not stop the others.
pub fn family_sweep(
    curves: &[SigmaCurve],
    pend: &Pendulum,
    cfg: &ShootConfig,
    max_iters: usize,
) -> Result<Vec<SweepEntry>, ShootError> {
    for c in curves {
        c.validate()?;
    }
    check_non_intersecting(curves)?;
    Ok(curves
        .par_iter()
        .enumerate()
        .map(|(curve_id, c)| SweepEntry { curve_id, result: bisect_curve(c, pend, cfg, max_iters) })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Params, PivotLaw};

    const ATAN2: f64 = 1.1071487177940904;

    fn pend(mu: f64, pivot: PivotLaw) -> Pendulum {
        Pendulum::new(Params::new(1.0, 1.0, 9.8, mu).unwrap(), pivot).unwrap()
    }

    fn cfg(horizon: f64, strict: bool) -> ShootConfig {
        ShootConfig { t0: 0.0, horizon, tol: Tolerances::default(), strict }
    }

    #[test]
    fn curve_validation() {
        assert!(SigmaCurve::default().validate().is_ok());
        let zero_start = SigmaCurve::Linear { slope: 1.0, offset: 0.0 };
        let err = zero_start.validate().unwrap_err().to_string();
        assert!(err.contains("sigma endpoint sign"), "{err}");
        let table = SigmaCurve::Table { knots: vec![[0.0, -1.0], [1.0, 0.5], [PI, 2.0]] };
        assert!(table.validate().is_ok());
        assert_eq!(table.eval(1.0), 0.5);
        assert_eq!(table.lipschitz(), 1.5);
        let short = SigmaCurve::Table { knots: vec![[0.0, -1.0], [3.0, 1.0]] };
        assert!(short.validate().is_err());
        let poly = SigmaCurve::Poly { coeffs: vec![-1.0, 0.0, 0.2] };
        assert!(poly.validate().is_ok());
        assert!((poly.lipschitz() - 0.4 * PI).abs() < 1e-12);
    }

    #[test]
    fn classify_examples() {
        let p = pend(0.5, PivotLaw::constant(0.0));
        let c = SigmaCurve::default();
        for strict in [false, true] {
            let cfg = cfg(50.0, strict);
            let mid = classify_exit(PI / 2.0, &c, &p, &cfg).unwrap();
            assert_eq!(mid.outcome, Outcome::NonFalling { horizon: 50.0 });
            assert_eq!(mid.p0, 0.0);
            assert_eq!(classify_exit(0.0, &c, &p, &cfg).unwrap().outcome, Outcome::ExitLow);
            assert_eq!(classify_exit(PI, &c, &p, &cfg).unwrap().outcome, Outcome::ExitHigh);
        }
        assert!(matches!(classify_exit(-0.1, &c, &p, &cfg(1.0, true)), Err(ShootError::InvalidQ0(_))));
    }

    #[test]
    fn corner_stick_counts_as_inside_for_the_closure() {
        // A strong constant push holds the rod lying flat at q = 0 with p = 0.
        let p = pend(0.5, PivotLaw::constant(-25.0));
        assert!(p.stiction_holds(0.0, 0.0));
        let c = SigmaCurve::Linear { slope: 1.0, offset: 0.0 };
        // Bypass validation: sigma(0) = 0 on purpose.
        let closed = classify_exit(0.0, &c, &p, &cfg(5.0, false)).unwrap();
        assert_eq!(closed.outcome, Outcome::StuckInside { q_stick: 0.0 });
        let strict = classify_exit(0.0, &c, &p, &cfg(5.0, true)).unwrap();
        assert_eq!(strict.outcome, Outcome::ExitLow);
    }

    #[test]
    fn bisection_finds_stiction_witness() {
        let p = pend(0.5, PivotLaw::constant(0.0));
        let r = bisect_curve(&SigmaCurve::default(), &p, &cfg(50.0, false), 60).unwrap();
        assert_eq!(r.status, BisectStatus::Witness);
        let w = r.witness.unwrap();
        assert!(w.q0 >= ATAN2 && w.q0 <= PI - ATAN2);
        assert!(r.bracket.0 < w.q0 && w.q0 < r.bracket.1);
    }

    #[test]
    fn bisection_precondition() {
        // A curve that is negative at both ends: from q = pi the motion swings
        // over the top and leaves at q = 0 as well.
        let p = pend(0.0, PivotLaw::constant(0.0));
        let c = SigmaCurve::Linear { slope: 0.0, offset: -8.0 };
        assert!(c.validate().is_err());
        match bisect_curve(&c, &p, &cfg(10.0, false), 10) {
            Err(ShootError::PreconditionFailed { at_zero, at_pi }) => {
                assert_eq!((at_zero.as_str(), at_pi.as_str()), ("exit_low", "exit_low"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bracket_endpoints_reclassify_identically() {
        let p = pend(0.0, PivotLaw::sine(2.0, 1.0, 0.0));
        let cfg = cfg(4.0, true);
        let r = bisect_curve(&SigmaCurve::default(), &p, &cfg, 12).unwrap();
        let c = SigmaCurve::default();
        let lo = r.history.iter().rev().find(|h| h.q0 == r.bracket.0).unwrap();
        let hi = r.history.iter().rev().find(|h| h.q0 == r.bracket.1).unwrap();
        assert_eq!(&classify_exit(r.bracket.0, &c, &p, &cfg).unwrap(), lo);
        assert_eq!(&classify_exit(r.bracket.1, &c, &p, &cfg).unwrap(), hi);
    }

    #[test]
    fn sweep_gives_distinct_witnesses() {
        let p = pend(0.5, PivotLaw::constant(0.0));
        let base = SigmaCurve::default();
        let curves: Vec<_> = [-0.1, 0.0, 0.1].iter().map(|&k| base.shifted(k)).collect();
        let out = family_sweep(&curves, &p, &cfg(20.0, false), 60).unwrap();
        let ws: Vec<_> = out.iter().map(|e| e.result.clone().unwrap().witness.unwrap()).collect();
        for i in 0..3 {
            for j in i + 1..3 {
                assert!(ws[i].q0 != ws[j].q0 || ws[i].p0 != ws[j].p0);
            }
        }
        let single = family_sweep(&curves[1..2], &p, &cfg(20.0, false), 60).unwrap();
        assert_eq!(single[0].result, bisect_curve(&base, &p, &cfg(20.0, false), 60));
    }

    #[test]
    fn sweep_rejects_crossing_curves() {
        let p = pend(0.5, PivotLaw::constant(0.0));
        let a = SigmaCurve::default();
        let b = SigmaCurve::Linear { slope: 2.0, offset: -PI };
        let err = family_sweep(&[a, b], &p, &cfg(1.0, false), 5).unwrap_err();
        assert!(matches!(err, ShootError::CurvesIntersect { a: 0, b: 1, .. }));
    }
}
