//! Operations on and near the switching surface `p = 0`.

use super::dopri::{dopri_step, initial_step, step_factor};
use super::{
    bisect_dense, branch_field, locate, Crossed, Event, EventKind, IntegrateError, Tolerances,
    MIN_STEP, SCAN_POINTS,
};
use crate::model::{Mode, Pendulum, State};

/// What happens to a state arriving on `p = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SwitchKind {
    Stick,
    /// Both one-sided fields point to the same side; `direction` is the sign
    /// of `p` just after the passage.
    Crossing(i8),
}

/// Stick exactly when static friction can hold the rod (the boundary of the
/// stiction set included); otherwise cross to the side of the drift.
pub fn classify_switch(pend: &Pendulum, q: f64, t: f64) -> SwitchKind {
    if pend.stiction_holds(q, t) {
        SwitchKind::Stick
    } else if pend.drift(q, t) > 0.0 {
        SwitchKind::Crossing(1)
    } else {
        SwitchKind::Crossing(-1)
    }
}

/// Release time of a rod stuck at angle `q` from time `t`, or the horizon
/// when static friction holds throughout. The second value is the release
/// direction.
///
/// The stiction margin `|drift| - bound` is Lipschitz in time with constant
/// `L * (|sin q| + mu |cos q|) / l`, where `L` bounds the pivot jerk, so
/// jumping by `-margin / L` never steps over a root. Jumps are floored at
/// `max(event_tol, 1e-3 max_dt)`; the first point with a positive margin is
/// then bisected down to `event_tol`, keeping the side where the margin is
/// positive.
pub(crate) fn release_time(
    pend: &Pendulum,
    q: f64,
    t: f64,
    horizon: f64,
    tol: &Tolerances,
) -> (f64, Option<i8>) {
    let dir = |s: f64| if pend.drift(q, s) > 0.0 { 1 } else { -1 };
    if t >= horizon {
        return (t, None);
    }
    if pend.stiction_margin(q, t) > 0.0 {
        return (t, Some(dir(t)));
    }
    let p = &pend.params;
    let slope = pend.pivot.lipschitz_on(t, horizon) * (q.sin().abs() + p.mu * q.cos().abs()) / p.l;
    let floor = tol.event_tol.max(1e-3 * tol.max_dt);
    let mut prev = t;
    loop {
        let m = pend.stiction_margin(q, prev);
        let jump = if slope == 0.0 { f64::INFINITY } else { (-m / slope).max(floor) };
        let next = (prev + jump).min(horizon);
        if pend.stiction_margin(q, next) > 0.0 {
            let (mut a, mut b) = (prev, next);
            while b - a > tol.event_tol {
                let mid = 0.5 * (a + b);
                if mid <= a || mid >= b {
                    break;
                }
                if pend.stiction_margin(q, mid) > 0.0 {
                    b = mid;
                } else {
                    a = mid;
                }
            }
            return (b, Some(dir(b)));
        }
        if next >= horizon {
            return (horizon, None);
        }
        prev = next;
    }
}

/// Holds a stuck state until static friction fails or the horizon is
/// reached.
pub fn slide_until_release(
    pend: &Pendulum,
    state: &State,
    horizon: f64,
    tol: &Tolerances,
) -> Result<(State, Event), IntegrateError> {
    tol.validate()?;
    if state.mode != Mode::Stuck || state.p != 0.0 {
        return Err(IntegrateError::InvalidState("sliding needs a stuck state with p = 0".into()));
    }
    if !(horizon > state.t) {
        return Err(IntegrateError::InvalidHorizon { t0: state.t, horizon });
    }
    let (t, released) = release_time(pend, state.q, state.t, horizon, tol);
    let kind = match released {
        Some(direction) => EventKind::StickRelease { direction },
        None => EventKind::HorizonReached,
    };
    Ok((State::stuck(state.q, t), Event { t, q: state.q, kind }))
}

/// Outcome of one accepted step of a smooth branch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmoothStep {
    pub state: State,
    /// Scaled error estimate of the accepted step (`<= 1`).
    pub err: f64,
    /// Proposal for the next step size.
    pub h_next: f64,
    /// The step was cut short at a zero of `p`; `state.p` is then exactly 0.
    pub on_switch: bool,
}

/// One adaptive step of the branch selected by the sign of `p`. A trial step
/// `h` may be given; otherwise one is chosen from the local scale of the
/// field. The step is shortened to end on `p = 0` when `p` changes sign
/// inside it.
pub fn step_smooth(
    pend: &Pendulum,
    state: &State,
    h: Option<f64>,
    tol: &Tolerances,
) -> Result<SmoothStep, IntegrateError> {
    tol.validate()?;
    if state.mode != Mode::Slipping || state.p == 0.0 || !state.p.is_finite() {
        return Err(IntegrateError::InvalidState("smooth step needs a slipping state with p != 0".into()));
    }
    let side = state.p.signum();
    let field = branch_field(pend, side);
    let (t, y) = (state.t, [state.q, state.p]);
    let k1 = field(t, y);
    let mut h = h.unwrap_or_else(|| initial_step(&field, t, y, k1, tol)).min(tol.max_dt);
    let mut rejected = false;
    let st = loop {
        if h < MIN_STEP {
            return Err(IntegrateError::StepUnderflow { t, h });
        }
        let st = dopri_step(&field, t, y, k1, h, tol);
        if st.err <= 1.0 {
            break st;
        }
        rejected = true;
        h *= step_factor(st.err, true);
    };
    let h_next = h * step_factor(st.err, rejected);
    let t_end = t + h;
    let mut ta = t;
    for k in 1..=SCAN_POINTS {
        let tk = if k == SCAN_POINTS { t_end } else { t + h * k as f64 / SCAN_POINTS as f64 };
        let pk = if k == SCAN_POINTS { st.y1[1] } else { st.dense.eval(tk)[1] };
        if side * pk <= 0.0 {
            let tb = bisect_dense(&st.dense, ta, tk, Crossed::Velocity, side, None, tol.event_tol);
            let (ts, ys) =
                locate(&field, t, y, k1, (ta, tb, t_end), Crossed::Velocity, side, None, tol);
            return Ok(SmoothStep {
                state: State { q: ys[0], p: 0.0, t: ts, mode: Mode::Slipping },
                err: st.err,
                h_next,
                on_switch: true,
            });
        }
        ta = tk;
    }
    Ok(SmoothStep {
        state: State::slipping(st.y1[0], st.y1[1], t_end),
        err: st.err,
        h_next,
        on_switch: false,
    })
}

/// Finds where `p` reaches zero between two slipping states. The bracket is
/// valid when `p` changes sign across it or the end lies inside the stick
/// band; the motion is integrated from `start` and `end` only supplies the
/// end time. The returned state has `p = 0` and is `Stuck` when static
/// friction holds there.
pub fn locate_switch(
    pend: &Pendulum,
    start: &State,
    end: &State,
    tol: &Tolerances,
) -> Result<State, IntegrateError> {
    tol.validate()?;
    let s = start.p.signum();
    let sign_change = s * end.p <= 0.0;
    let in_band = end.p.abs() < tol.stick_band;
    if start.p == 0.0 || !(end.t > start.t) || !(sign_change || in_band) {
        return Err(IntegrateError::BracketInvalid);
    }
    let settle = |q: f64, t: f64| match classify_switch(pend, q, t) {
        SwitchKind::Stick => State::stuck(q, t),
        SwitchKind::Crossing(_) => State { q, p: 0.0, t, mode: Mode::Slipping },
    };
    let mut cur = *start;
    let mut h = None;
    loop {
        let room = end.t - cur.t;
        if room <= 0.0 {
            break;
        }
        let trial = h.map_or(room.min(tol.max_dt), |v: f64| v.min(room));
        let step = step_smooth(pend, &cur, Some(trial), tol)?;
        if step.on_switch {
            return Ok(settle(step.state.q, step.state.t));
        }
        cur = step.state;
        h = Some(step.h_next);
        if end.t - cur.t <= 1e-13 {
            break;
        }
        if cur.p.abs() < tol.stick_band && pend.stiction_holds(cur.q, cur.t) {
            return Ok(State::stuck(cur.q, cur.t));
        }
    }
    if cur.p.abs() < tol.stick_band {
        Ok(settle(cur.q, cur.t))
    } else {
        Err(IntegrateError::BracketInvalid)
    }
}
