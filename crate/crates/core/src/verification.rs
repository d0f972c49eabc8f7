//! Empirical checks of the structural properties of the right-hand side and
//! of the solutions: one-sided Lipschitz bound, jump direction on `p = 0`,
//! continuous dependence on initial data, upper semicontinuity of the
//! set-valued field, and the escape-speed trap.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::integrator::{integrate, IntegrateError, Tolerances};
use crate::model::{FilippovSet, Pendulum, State};

/// Relative agreement demanded between computed and closed-form jumps.
pub const JUMP_REL_TOL: f64 = 1e-12;
/// Slack allowed when checking that `eps(delta)` decreases.
pub const MONOTONE_SLACK: f64 = 0.1;

/// Sample points shared by the checks. The `p` points never contain 0;
/// pairs for the Lipschitz check are drawn from the bounding box of the
/// points and alternate between same-side and straddling pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleGrid {
    pub q_points: Vec<f64>,
    pub p_points: Vec<f64>,
    pub t_points: Vec<f64>,
    pub pair_count: usize,
    pub seed: u64,
}

/// Radical inverse of `i` in base `b`.
fn halton(mut i: u64, b: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= b as f64;
        r += f * (i % b) as f64;
        i /= b;
    }
    r
}

const HALTON_BASES: [u64; 5] = [2, 3, 5, 7, 11];

/// Shifted Halton sequence: the `k`-th point in `[0, 1)^5`.
fn rotated_halton(k: usize, shift: &[f64; 5]) -> [f64; 5] {
    let mut u = [0.0; 5];
    for (d, b) in HALTON_BASES.iter().enumerate() {
        u[d] = (halton(k as u64 + 1, *b) + shift[d]).fract();
    }
    u
}

fn lerp((lo, hi): (f64, f64), u: f64) -> f64 {
    lo + (hi - lo) * u
}

fn span(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(*x), b.max(*x)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pair {
    pub t: f64,
    pub x: [f64; 2],
    pub y: [f64; 2],
}

impl SampleGrid {
    /// Low-discrepancy grid over the box `q x p x t` with a random shift
    /// derived from `seed`.
    pub fn halton(
        q: (f64, f64),
        p_max: f64,
        t: (f64, f64),
        n: usize,
        pair_count: usize,
        seed: u64,
    ) -> Self {
        let shift = Self::shift(seed);
        let mut q_points = Vec::with_capacity(n);
        let mut p_points = Vec::with_capacity(n);
        let mut t_points = Vec::with_capacity(n);
        for k in 0..n.max(1) {
            let u = rotated_halton(k, &shift);
            q_points.push(lerp(q, u[0]));
            let pm = lerp((0.0, p_max), u[1]).max(f64::MIN_POSITIVE);
            p_points.push(if k % 2 == 0 { pm } else { -pm });
            t_points.push(lerp(t, u[2]));
        }
        SampleGrid { q_points, p_points, t_points, pair_count, seed }
    }

    /// Grid from explicit points.
    pub fn from_points(
        q_points: Vec<f64>,
        p_points: Vec<f64>,
        t_points: Vec<f64>,
        pair_count: usize,
        seed: u64,
    ) -> Self {
        SampleGrid { q_points, p_points, t_points, pair_count, seed }
    }

    fn shift(seed: u64) -> [f64; 5] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        std::array::from_fn(|_| rng.gen::<f64>())
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.q_points.is_empty() || self.p_points.is_empty() || self.t_points.is_empty() {
            return Err("sample grid must not be empty".into());
        }
        if self.p_points.contains(&0.0) {
            return Err("p points must exclude 0".into());
        }
        Ok(())
    }

    /// Deterministic pairs: even indices on the same side of `p = 0`, odd
    /// indices straddling it.
    pub fn pairs(&self) -> Vec<Pair> {
        let shift = Self::shift(self.seed ^ 0x9e37_79b9_7f4a_7c15);
        let qb = span(&self.q_points);
        let tb = span(&self.t_points);
        let pmax = self.p_points.iter().fold(0.0f64, |m, p| m.max(p.abs()));
        (0..self.pair_count)
            .map(|k| {
                let u = rotated_halton(k, &shift);
                let mag = |v: f64| lerp((0.0, pmax), v).max(f64::MIN_POSITIVE);
                let s1 = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
                let s2 = if k % 2 == 0 { s1 } else { -s1 };
                Pair {
                    t: lerp(tb, u[4]),
                    x: [lerp(qb, u[0]), s1 * mag(u[1])],
                    y: [lerp(qb, u[2]), s2 * mag(u[3])],
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorstCase {
    pub inputs: BTreeMap<String, f64>,
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub passed: bool,
    pub worst_case: WorstCase,
    pub estimated_constant: Option<f64>,
    pub violations: usize,
    pub samples: usize,
    /// Per-step data for sequence checks (columns named in `notes`).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub series: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

fn inputs(kv: &[(&str, f64)]) -> BTreeMap<String, f64> {
    kv.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

/// Field value at a point off `p = 0`, or a chosen element of the set on it.
fn field(pend: &Pendulum, side: f64, q: f64, p: f64, t: f64) -> [f64; 2] {
    [p, pend.branch_accel(side, q, p, t)]
}

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Analytic one-sided Lipschitz constant of the field on the box
/// `|p| <= p_max`, `t` in `[t0, t1]`: the Frobenius norm of the Jacobian
/// bound of the smooth branches, `sqrt(1 + A^2 + B^2)` with
/// `A = (1 + mu) sqrt(a_max^2 + g^2) / l` and `B = 2 mu p_max`. The jump
/// across `p = 0` only adds a non-positive term.
pub fn analytic_lipschitz(pend: &Pendulum, p_max: f64, t0: f64, t1: f64) -> f64 {
    let pr = &pend.params;
    let amax = pend.pivot.sup_bound(t0, t1);
    let a = (1.0 + pr.mu) * (amax * amax + pr.g * pr.g).sqrt() / pr.l;
    let b = 2.0 * pr.mu * p_max;
    (1.0 + a * a + b * b).sqrt()
}

/// Terms of the straddling decomposition: with `m` the point where the
/// segment from `x` (with `p > 0`) to `y` meets `p = 0`,
/// `(x - y).(f(x) - f(y)) = T1 + T2 + T3` with
/// `T1 = (x - y).(f+(x) - f+(m))`, `T2 = (x - y).(f+(m) - f-(m)) <= 0`,
/// `T3 = (x - y).(f-(m) - f-(y))`.
pub fn straddle_terms(pend: &Pendulum, pr: &Pair) -> (f64, f64, f64, [f64; 2]) {
    let (x, y) = if pr.x[1] > 0.0 { (pr.x, pr.y) } else { (pr.y, pr.x) };
    let s = x[1] / (x[1] - y[1]);
    let m = [x[0] + s * (y[0] - x[0]), 0.0];
    let d = sub(x, y);
    let fpx = field(pend, 1.0, x[0], x[1], pr.t);
    let fpm = field(pend, 1.0, m[0], 0.0, pr.t);
    let fmm = field(pend, -1.0, m[0], 0.0, pr.t);
    let fmy = field(pend, -1.0, y[0], y[1], pr.t);
    (dot(d, sub(fpx, fpm)), dot(d, sub(fpm, fmm)), dot(d, sub(fmm, fmy)), m)
}

/// `l |x - y|^2 - (x - y).(f(x) - f(y))` for one pair.
pub fn lipschitz_margin(pend: &Pendulum, pr: &Pair, l_est: f64) -> f64 {
    let fx = field(pend, pr.x[1].signum(), pr.x[0], pr.x[1], pr.t);
    let fy = field(pend, pr.y[1].signum(), pr.y[0], pr.y[1], pr.t);
    let d = sub(pr.x, pr.y);
    l_est * dot(d, d) - dot(d, sub(fx, fy))
}

pub fn check_one_sided_lipschitz(pend: &Pendulum, grid: &SampleGrid, l_est: f64) -> CheckReport {
    let pairs = grid.pairs();
    let rows: Vec<(f64, f64, Option<(f64, f64, f64)>)> = pairs
        .par_iter()
        .map(|pr| {
            let d = sub(pr.x, pr.y);
            let n2 = dot(d, d);
            let margin = lipschitz_margin(pend, pr, l_est);
            let needed = if n2 > 0.0 { (l_est * n2 - margin) / n2 } else { f64::NEG_INFINITY };
            let straddle = (pr.x[1] * pr.y[1] < 0.0).then(|| {
                let (t1, t2, t3, _) = straddle_terms(pend, pr);
                (t1, t2, t3)
            });
            (margin, needed, straddle)
        })
        .collect();

    let mut worst = (f64::INFINITY, 0usize);
    let mut violations = 0;
    let mut same_side_needed = f64::NEG_INFINITY;
    let mut overall_needed = f64::NEG_INFINITY;
    let mut positive_jumps = 0;
    let mut smooth_excess = 0;
    for (k, (margin, needed, straddle)) in rows.iter().enumerate() {
        let pr = &pairs[k];
        let d = sub(pr.x, pr.y);
        // Rounding allowance relative to the size of the terms.
        let scale = l_est.abs().max(1.0) * dot(d, d) + 1e-300;
        if *margin < -1e-12 * scale {
            violations += 1;
        }
        if *margin < worst.0 {
            worst = (*margin, k);
        }
        overall_needed = overall_needed.max(*needed);
        match straddle {
            None => same_side_needed = same_side_needed.max(*needed),
            Some((t1, t2, t3)) => {
                if *t2 > 0.0 {
                    positive_jumps += 1;
                }
                if t1 + t3 > l_est * dot(d, d) + 1e-12 * scale {
                    smooth_excess += 1;
                }
            }
        }
    }
    let pr = pairs.get(worst.1).copied().unwrap_or(Pair { t: 0.0, x: [0.0; 2], y: [0.0; 2] });
    let mut notes = vec![
        format!("smallest sufficient constant on same-side pairs: {same_side_needed}"),
        format!("smallest sufficient constant over all pairs: {overall_needed}"),
    ];
    let straddling = rows.iter().filter(|r| r.2.is_some()).count();
    notes.push(format!(
        "{straddling} straddling pairs: {positive_jumps} with a positive jump term, {smooth_excess} with smooth terms above l|x-y|^2"
    ));
    CheckReport {
        name: "one_sided_lipschitz".into(),
        passed: violations == 0 && positive_jumps == 0 && !pairs.is_empty(),
        worst_case: WorstCase {
            inputs: inputs(&[
                ("t", pr.t),
                ("q1", pr.x[0]),
                ("p1", pr.x[1]),
                ("q2", pr.y[0]),
                ("p2", pr.y[1]),
                ("l_est", l_est),
            ]),
            margin: worst.0,
        },
        estimated_constant: Some(overall_needed),
        violations,
        samples: pairs.len(),
        series: Vec::new(),
        notes,
    }
}

/// Closed form of `f-_p - f+_p`: `(2 mu / l) |a cos q + g sin q|`.
pub fn jump_closed_form(pend: &Pendulum, q: f64, t: f64) -> f64 {
    let pr = &pend.params;
    2.0 * pr.mu / pr.l * (pend.pivot.accel(t) * q.cos() + pr.g * q.sin()).abs()
}

/// Jump at one point: `(f-_p - f+_p, relative deviation from the closed
/// form)`. The deviation is normalized by the size of the limit fields so
/// that cancellation in the difference is not counted as an error.
pub fn jump_at(pend: &Pendulum, q: f64, t: f64) -> (f64, f64) {
    let (fp, fm) = pend.limit_fields(q, t);
    let jump = fm - fp;
    let exact = jump_closed_form(pend, q, t);
    let scale = fp.abs().max(fm.abs()).max(exact);
    let rel = if scale == 0.0 { 0.0 } else { (jump - exact).abs() / scale };
    (jump, rel)
}

pub fn check_jump_inequality(pend: &Pendulum, grid: &SampleGrid) -> CheckReport {
    let rows: Vec<(f64, f64, f64, f64)> = grid
        .t_points
        .par_iter()
        .flat_map_iter(|&t| {
            grid.q_points.iter().map(move |&q| {
                let (j, rel) = jump_at(pend, q, t);
                (q, t, j, rel)
            })
        })
        .collect();
    let mut worst = (f64::INFINITY, 0.0, 0.0);
    let mut worst_rel = 0.0f64;
    let mut violations = 0;
    for &(q, t, j, rel) in &rows {
        if j < 0.0 || rel > JUMP_REL_TOL {
            violations += 1;
        }
        worst_rel = worst_rel.max(rel);
        if j < worst.0 {
            worst = (j, q, t);
        }
    }
    CheckReport {
        name: "jump_inequality".into(),
        passed: violations == 0 && !rows.is_empty(),
        worst_case: WorstCase { inputs: inputs(&[("q", worst.1), ("t", worst.2)]), margin: worst.0 },
        estimated_constant: None,
        violations,
        samples: rows.len(),
        series: Vec::new(),
        notes: vec![format!("largest relative deviation from the closed form: {worst_rel:e}")],
    }
}

/// Perturbation directions: `k pi / 4`, `k = 0..8`.
pub fn directions() -> [[f64; 2]; 8] {
    std::array::from_fn(|k| {
        let a = k as f64 * PI / 4.0;
        [a.cos(), a.sin()]
    })
}

/// Largest sup-distance, over the fixed directions, between the base
/// trajectory and trajectories started `delta` away from `base`.
pub fn dependence_eps(
    pend: &Pendulum,
    base: &State,
    horizon: f64,
    delta: f64,
    tol: &Tolerances,
) -> Result<f64, IntegrateError> {
    let reference = integrate(*base, pend, horizon, tol, None)?;
    let eps: Result<Vec<f64>, IntegrateError> = directions()
        .par_iter()
        .map(|d| {
            let mut s = State::slipping(base.q + delta * d[0], base.p + delta * d[1], base.t);
            if s.p == 0.0 && base.p == 0.0 && delta == 0.0 {
                s.mode = base.mode;
            }
            let tr = integrate(s, pend, horizon, tol, None)?;
            Ok(tr.sup_distance(&reference).unwrap_or(f64::INFINITY))
        })
        .collect();
    Ok(eps?.into_iter().fold(0.0, f64::max))
}

pub fn check_continuous_dependence(
    pend: &Pendulum,
    base: &State,
    horizon: f64,
    deltas: &[f64],
    tol: &Tolerances,
) -> Result<CheckReport, IntegrateError> {
    let decreasing = deltas.windows(2).all(|w| w[1] < w[0]) && deltas.iter().all(|d| *d >= 0.0);
    let mut series = Vec::new();
    for &d in deltas {
        let e = dependence_eps(pend, base, horizon, d, tol)?;
        series.push(vec![d, e, if d > 0.0 { e / d } else { 0.0 }]);
    }
    let mut violations = 0;
    let mut worst = (f64::INFINITY, 0.0);
    for w in series.windows(2) {
        // Margin of eps(delta_next) below the allowed (1 + slack) eps(delta).
        let m = (1.0 + MONOTONE_SLACK) * w[0][1] - w[1][1];
        if m < 0.0 {
            violations += 1;
        }
        if m < worst.0 {
            worst = (m, w[1][0]);
        }
    }
    let ratio = series.iter().filter(|r| r[0] > 0.0).map(|r| r[2]).fold(0.0, f64::max);
    let zero_ok = series.iter().all(|r| r[0] > 0.0 || r[1] == 0.0);
    Ok(CheckReport {
        name: "continuous_dependence".into(),
        passed: decreasing && violations == 0 && zero_ok && !series.is_empty(),
        worst_case: WorstCase {
            inputs: inputs(&[("q0", base.q), ("p0", base.p), ("t0", base.t), ("horizon", horizon), ("delta", worst.1)]),
            margin: if series.len() > 1 { worst.0 } else { 0.0 },
        },
        estimated_constant: Some(ratio),
        violations,
        samples: deltas.len() * directions().len(),
        series,
        notes: vec!["columns: delta, eps, eps/delta".into()],
    })
}

/// Excess of the field at `(q, p, t)` over the field on the surface below.
pub fn usc_excess(pend: &Pendulum, q: f64, p: f64, t: f64) -> f64 {
    let near = pend.filippov_set(&State::slipping(q, p, t));
    let on: FilippovSet = pend.filippov_set(&State::slipping(q, 0.0, t));
    near.excess_over(&on)
}

/// Checks that `beta(F(q, p_k, t), F(q, 0, t)) -> 0`: the excess must be
/// bounded by a line `C |p|` fitted through the sequence (with 50% slack) on
/// the second half of the sequence, and must shrink overall.
pub fn check_upper_semicontinuity(pend: &Pendulum, q: f64, t: f64, p_sequence: &[f64]) -> CheckReport {
    let ok_seq = !p_sequence.is_empty()
        && p_sequence.iter().all(|p| *p != 0.0)
        && p_sequence.windows(2).all(|w| w[1].abs() < w[0].abs());
    let series: Vec<Vec<f64>> =
        p_sequence.iter().map(|&p| vec![p, usc_excess(pend, q, p, t)]).collect();
    // Least squares through the origin: beta ~ C |p|.
    let (num, den) = series
        .iter()
        .fold((0.0, 0.0), |(n, d), r| (n + r[0].abs() * r[1], d + r[0] * r[0]));
    let c = if den > 0.0 { num / den } else { 0.0 };
    let mut violations = 0;
    let mut worst = (f64::INFINITY, 0.0);
    for r in series.iter().skip(series.len() / 2) {
        let m = 1.5 * c * r[0].abs() + 1e-15 - r[1];
        if m < 0.0 {
            violations += 1;
        }
        if m < worst.0 {
            worst = (m, r[0]);
        }
    }
    let shrinks = series.len() < 2 || series.last().unwrap()[1] < series[0][1];
    CheckReport {
        name: "upper_semicontinuity".into(),
        passed: ok_seq && violations == 0 && shrinks,
        worst_case: WorstCase { inputs: inputs(&[("q", q), ("t", t), ("p", worst.1)]), margin: worst.0 },
        estimated_constant: Some(c),
        violations,
        samples: series.len(),
        series,
        notes: vec!["columns: p, beta".into()],
    }
}

/// Starts at `|p| = 2 p_star` from each `(q, sign)` and checks that the
/// motion enters `|p| <= p_star` and stays below `p_star + slack` after.
pub fn check_escape_trap(
    pend: &Pendulum,
    starts: &[(f64, f64)],
    t0: f64,
    horizon: f64,
    tol: &Tolerances,
    slack: f64,
) -> Result<CheckReport, IntegrateError> {
    let p_star = match pend.p_star(t0, horizon) {
        Ok(v) => v,
        Err(e) => {
            return Ok(CheckReport {
                name: "escape_trap".into(),
                passed: true,
                worst_case: WorstCase { inputs: BTreeMap::new(), margin: 0.0 },
                estimated_constant: None,
                violations: 0,
                samples: 0,
                series: Vec::new(),
                notes: vec![format!("skipped: {e}")],
            })
        }
    };
    let runs: Result<Vec<(f64, f64, f64, f64)>, IntegrateError> = starts
        .par_iter()
        .map(|&(q, sign)| {
            let tr = integrate(State::slipping(q, sign * 2.0 * p_star, t0), pend, horizon, tol, None)?;
            let entry = tr.samples.iter().position(|s| s.p.abs() <= p_star);
            let (t_in, after) = match entry {
                Some(i) => (
                    tr.samples[i].t,
                    tr.samples[i..].iter().map(|s| s.p.abs()).fold(0.0, f64::max),
                ),
                None => (f64::INFINITY, f64::INFINITY),
            };
            Ok((q, sign, t_in, after))
        })
        .collect();
    let runs = runs?;
    let mut violations = 0;
    let mut worst = (f64::INFINITY, 0.0, 0.0);
    let mut series = Vec::new();
    for &(q, sign, t_in, after) in &runs {
        let m = p_star + slack - after;
        if !(m >= 0.0) {
            violations += 1;
        }
        if !(m >= worst.0) {
            worst = (m, q, sign);
        }
        series.push(vec![q, sign, t_in, after]);
    }
    Ok(CheckReport {
        name: "escape_trap".into(),
        passed: violations == 0 && !runs.is_empty(),
        worst_case: WorstCase { inputs: inputs(&[("q0", worst.1), ("sign", worst.2)]), margin: worst.0 },
        estimated_constant: Some(p_star),
        violations,
        samples: runs.len(),
        series,
        notes: vec!["columns: q0, sign of p0, entry time, max |p| after entry".into()],
    })
}

/// Recomputes the margin of a one-sided Lipschitz worst case from its
/// recorded inputs.
pub fn replay_lipschitz(pend: &Pendulum, w: &WorstCase) -> Option<f64> {
    let g = |k: &str| w.inputs.get(k).copied();
    let pr = Pair { t: g("t")?, x: [g("q1")?, g("p1")?], y: [g("q2")?, g("p2")?] };
    Some(lipschitz_margin(pend, &pr, g("l_est")?))
}

/// Recomputes the margin of a jump-inequality worst case.
pub fn replay_jump(pend: &Pendulum, w: &WorstCase) -> Option<f64> {
    Some(jump_at(pend, *w.inputs.get("q")?, *w.inputs.get("t")?).0)
}

/// Fixed-width plain-text table of reports.
pub fn summary_table(reports: &[CheckReport]) -> String {
    let mut out = format!("{:<24} {:<6} {:>10} {:>14} {:>14}\n", "check", "result", "samples", "worst margin", "constant");
    for r in reports {
        out.push_str(&format!(
            "{:<24} {:<6} {:>10} {:>14.6e} {:>14}\n",
            r.name,
            if r.passed { "PASS" } else { "FAIL" },
            r.samples,
            r.worst_case.margin,
            r.estimated_constant.map_or("-".to_string(), |c| format!("{c:.6e}")),
        ));
    }
    out
}
