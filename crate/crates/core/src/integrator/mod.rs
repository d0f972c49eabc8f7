//! Event-driven integration of the differential inclusion.
//!
//! Off `p = 0` the solution follows one smooth branch of the field and is
//! advanced by an adaptive Dormand–Prince 5(4) pair. Arrivals on `p = 0` are
//! located on the dense interpolant and refined with exact re-steps, then
//! classified from the one-sided limit fields: either the motion crosses
//! (both limits share a sign) or static friction holds the rod and the state
//! slides along `p = 0` until the stiction inequality fails.

mod dopri;
mod switching;

pub use switching::{
    classify_switch, locate_switch, slide_until_release, step_smooth, SmoothStep, SwitchKind,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fingerprint::fingerprint;
use crate::model::{Mode, Pendulum, State};
use dopri::{dopri_step, initial_step, step_factor, Dense, RawStep, Vec2};

/// Smallest step the error controller may ask for.
pub const MIN_STEP: f64 = 1e-14;
/// Upper limit on switching events in one trajectory.
pub const MAX_EVENTS: usize = 1_000_000;

/// Interior sample count used to look for sign changes inside a step.
const SCAN_POINTS: usize = 16;
/// Times closer than this are treated as equal when landing on stops.
const SNAP: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntegrateError {
    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },
    #[error("more than {limit} events before t = {t}; tolerances are probably misconfigured")]
    ChatterLimit { limit: usize, t: f64 },
    #[error("bracket does not contain a switch of p")]
    BracketInvalid,
    #[error("invalid tolerances: {0}")]
    InvalidTolerances(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("horizon {horizon} is not after the initial time {t0}")]
    InvalidHorizon { t0: f64, horizon: f64 },
}

/// Error targets and event resolution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Width (s) to which switching times are localized.
    pub event_tol: f64,
    /// `|p|` below which a step end is captured into sticking when static
    /// friction can hold.
    pub stick_band: f64,
    /// Largest step, and spacing of the output grid.
    pub max_dt: f64,
    /// First trial step; picked from the local scale of the field when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_step: Option<f64>,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            rel_tol: 1e-9,
            abs_tol: 1e-11,
            event_tol: 1e-10,
            stick_band: 1e-8,
            max_dt: 0.01,
            initial_step: None,
        }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<(), IntegrateError> {
        let fields = [
            ("rel_tol", self.rel_tol),
            ("abs_tol", self.abs_tol),
            ("event_tol", self.event_tol),
            ("stick_band", self.stick_band),
            ("max_dt", self.max_dt),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(IntegrateError::InvalidTolerances(format!(
                    "{name} must be > 0, got {v}"
                )));
            }
        }
        // Slack so that decimal inputs such as 1e-14 vs 1e-15 pass despite
        // the product rounding up.
        if self.stick_band < 10.0 * self.abs_tol * (1.0 - 1e-12) {
            return Err(IntegrateError::InvalidTolerances(format!(
                "stick_band {:e} must be at least 10 * abs_tol ({:e})",
                self.stick_band,
                10.0 * self.abs_tol
            )));
        }
        if let Some(h) = self.initial_step {
            if !(h.is_finite() && h > 0.0) {
                return Err(IntegrateError::InvalidTolerances(format!(
                    "initial_step must be > 0, got {h}"
                )));
            }
        }
        Ok(())
    }

    /// Every error target divided by `factor`; grid spacing is kept.
    pub fn tightened(&self, factor: f64) -> Self {
        Tolerances {
            rel_tol: self.rel_tol / factor,
            abs_tol: self.abs_tol / factor,
            event_tol: self.event_tol / factor,
            stick_band: self.stick_band / factor,
            ..*self
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Low,
    High,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventKind {
    /// Transversal passage through `p = 0`; `direction` is the sign of `p`
    /// afterwards.
    Crossing { direction: i8 },
    StickEntry,
    StickRelease { direction: i8 },
    HorizonReached,
    RegionExit { side: Side },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::Crossing { .. } => "crossing",
            EventKind::StickEntry => "stick_entry",
            EventKind::StickRelease { .. } => "stick_release",
            EventKind::HorizonReached => "horizon_reached",
            EventKind::RegionExit { side: Side::Low } => "region_exit_low",
            EventKind::RegionExit { side: Side::High } => "region_exit_high",
        }
    }

    pub fn direction(&self) -> Option<i8> {
        match self {
            EventKind::Crossing { direction } | EventKind::StickRelease { direction } => {
                Some(*direction)
            }
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub t: f64,
    pub q: f64,
    pub kind: EventKind,
}

/// Flat JSON form: `{t, q, kind, direction?}`.
#[derive(Serialize, Deserialize)]
struct EventRecord {
    t: f64,
    q: f64,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    direction: Option<i8>,
}

impl Serialize for Event {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        EventRecord {
            t: self.t,
            q: self.q,
            kind: self.kind.name().to_string(),
            direction: self.kind.direction(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Event {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let r = EventRecord::deserialize(d)?;
        let dir = || r.direction.ok_or_else(|| D::Error::missing_field("direction"));
        let kind = match r.kind.as_str() {
            "crossing" => EventKind::Crossing { direction: dir()? },
            "stick_entry" => EventKind::StickEntry,
            "stick_release" => EventKind::StickRelease { direction: dir()? },
            "horizon_reached" => EventKind::HorizonReached,
            "region_exit_low" => EventKind::RegionExit { side: Side::Low },
            "region_exit_high" => EventKind::RegionExit { side: Side::High },
            other => return Err(D::Error::unknown_variant(other, &["crossing", "stick_entry"])),
        };
        Ok(Event { t: r.t, q: r.q, kind })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub q: f64,
    pub p: f64,
    pub mode: Mode,
}

impl From<Sample> for State {
    fn from(s: Sample) -> Self {
        State { q: s.q, p: s.p, t: s.t, mode: s.mode }
    }
}

/// Interval of angles the trajectory must stay in.
///
/// With `closed == false` reaching either end is an exit. With `closed ==
/// true` the ends belong to the region: arriving there with `|p|` inside the
/// stick band is a corner visit, which is resolved by the friction law
/// (stick, bounce back inside, or leave).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionGuard {
    pub lo: f64,
    pub hi: f64,
    pub closed: bool,
}

impl RegionGuard {
    pub fn open(lo: f64, hi: f64) -> Self {
        RegionGuard { lo, hi, closed: false }
    }

    pub fn closed(lo: f64, hi: f64) -> Self {
        RegionGuard { lo, hi, closed: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub events: Vec<Event>,
    pub params_fingerprint: String,
    /// Number of corner visits (closed guard) after which the motion went
    /// back inside the region.
    #[serde(default)]
    pub corner_reentries: usize,
}

impl Trajectory {
    pub fn final_state(&self) -> State {
        (*self.samples.last().expect("trajectory has samples")).into()
    }

    pub fn last_event(&self) -> Option<&Event> {
        self.events.last()
    }

    pub fn exit_event(&self) -> Option<&Event> {
        self.events.iter().find(|e| matches!(e.kind, EventKind::RegionExit { .. }))
    }

    pub fn count(&self, pred: impl Fn(&EventKind) -> bool) -> usize {
        self.events.iter().filter(|e| pred(&e.kind)).count()
    }

    /// Largest Euclidean `(q, p)` distance over sample times present in both
    /// trajectories. `None` when they share no sample time.
    pub fn sup_distance(&self, other: &Trajectory) -> Option<f64> {
        let (mut i, mut j) = (0, 0);
        let mut best: Option<f64> = None;
        while i < self.samples.len() && j < other.samples.len() {
            let (a, b) = (&self.samples[i], &other.samples[j]);
            if a.t == b.t {
                let d = (a.q - b.q).hypot(a.p - b.p);
                best = Some(best.map_or(d, |m: f64| m.max(d)));
                i += 1;
                j += 1;
            } else if a.t < b.t {
                i += 1;
            } else {
                j += 1;
            }
        }
        best
    }

    pub fn q_range(&self) -> (f64, f64) {
        self.samples
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s.q), hi.max(s.q)))
    }

    /// Structural checks: time ordering, grid density, and mode/phase
    /// consistency. Returns a list of violations (empty when sound).
    pub fn check_invariants(&self, pend: &Pendulum, tol: &Tolerances) -> Vec<String> {
        let mut bad = Vec::new();
        for w in self.samples.windows(2) {
            if w[1].t < w[0].t {
                bad.push(format!("samples out of order at t = {}", w[1].t));
            }
            if w[1].t - w[0].t > tol.max_dt * (1.0 + 1e-9) + 1e-12 {
                bad.push(format!("sample gap {} > max_dt at t = {}", w[1].t - w[0].t, w[0].t));
            }
        }
        for w in self.events.windows(2) {
            if w[1].t < w[0].t {
                bad.push(format!("events out of order at t = {}", w[1].t));
            }
            if matches!(w[0].kind, EventKind::Crossing { .. })
                && matches!(w[1].kind, EventKind::Crossing { .. })
                && w[1].t - w[0].t <= tol.event_tol
                && (w[1].q - w[0].q).abs() <= tol.event_tol
            {
                bad.push(format!("chattering crossings at t = {}", w[1].t));
            }
            if matches!(w[1].kind, EventKind::StickRelease { .. })
                && w[0].kind != EventKind::StickEntry
            {
                bad.push(format!("release at t = {} without a preceding stick entry", w[1].t));
            }
        }
        if let Some(EventKind::StickRelease { .. }) = self.events.first().map(|e| e.kind) {
            bad.push("trajectory starts with a release".into());
        }
        for s in self.samples.iter().skip(1) {
            match s.mode {
                Mode::Stuck => {
                    if s.p != 0.0 {
                        bad.push(format!("stuck sample with p = {} at t = {}", s.p, s.t));
                    }
                    let releasing = self.events.iter().any(|e| {
                        e.t == s.t && matches!(e.kind, EventKind::StickRelease { .. })
                    });
                    if !releasing && !pend.stiction_holds(s.q, s.t) {
                        bad.push(format!("stuck sample outside stiction at t = {}", s.t));
                    }
                }
                Mode::Slipping => {
                    if s.p == 0.0 && pend.params.mu > 0.0 {
                        bad.push(format!("slipping sample with p = 0 at t = {}", s.t));
                    }
                }
            }
        }
        if let (Some(first), Some(last)) = (self.samples.first(), self.samples.last()) {
            if let Ok(p_star) = pend.p_star(first.t, last.t.max(first.t + 1e-9)) {
                let slack = 1e-6 * (1.0 + p_star);
                let mut trapped = false;
                for s in &self.samples {
                    if trapped && s.p.abs() > p_star + slack {
                        bad.push(format!("|p| = {} left the trap |p| <= {p_star} at t = {}", s.p.abs(), s.t));
                        break;
                    }
                    trapped |= s.p.abs() <= p_star;
                }
            }
        }
        bad
    }

    /// Largest deviation between consecutive slipping samples and a fresh
    /// integration started at the earlier one with tolerances tightened by
    /// `factor`. Pairs separated by an event are skipped.
    pub fn residual(&self, pend: &Pendulum, tol: &Tolerances, factor: f64) -> Result<f64, IntegrateError> {
        let fine = tol.tightened(factor);
        let mut worst: f64 = 0.0;
        let mut ev = 0;
        for w in self.samples.windows(2) {
            let (a, b) = (w[0], w[1]);
            while ev < self.events.len() && self.events[ev].t <= a.t {
                ev += 1;
            }
            let event_between = ev < self.events.len() && self.events[ev].t <= b.t;
            if event_between || a.mode != Mode::Slipping || b.mode != Mode::Slipping || a.p == 0.0 || b.t <= a.t {
                continue;
            }
            let traj = integrate(a.into(), pend, b.t, &fine, None)?;
            let end = traj.final_state();
            worst = worst.max((end.q - b.q).hypot(end.p - b.p));
        }
        Ok(worst)
    }
}

fn check_state(s: &State) -> Result<(), IntegrateError> {
    if !(s.q.is_finite() && s.p.is_finite() && s.t.is_finite()) {
        return Err(IntegrateError::InvalidState(format!("non-finite state {s:?}")));
    }
    if s.mode == Mode::Stuck && s.p != 0.0 {
        return Err(IntegrateError::InvalidState(format!("stuck state with p = {}", s.p)));
    }
    Ok(())
}

/// Integrates from `initial` up to the absolute time `horizon`, or until `q`
/// leaves the guard interval when one is given.
pub fn integrate(
    initial: State,
    pend: &Pendulum,
    horizon: f64,
    tol: &Tolerances,
    guard: Option<RegionGuard>,
) -> Result<Trajectory, IntegrateError> {
    tol.validate()?;
    check_state(&initial)?;
    if !(horizon > initial.t) {
        return Err(IntegrateError::InvalidHorizon { t0: initial.t, horizon });
    }
    let mut run = Run {
        pend,
        tol,
        horizon,
        guard,
        t0: initial.t,
        next_grid: 1,
        h: tol.initial_step.unwrap_or(0.0),
        samples: vec![Sample { t: initial.t, q: initial.q, p: initial.p, mode: initial.mode }],
        events: Vec::new(),
        corner_reentries: 0,
    };
    run.drive(initial)?;
    Ok(Trajectory {
        samples: run.samples,
        events: run.events,
        params_fingerprint: fingerprint(&(&pend.params, &pend.pivot, tol)),
        corner_reentries: run.corner_reentries,
    })
}

enum Phase {
    Slip { t: f64, y: Vec2, side: f64 },
    Stuck { t: f64, q: f64 },
    Done,
}

/// Result of scanning one step for sign changes.
enum Scan {
    Clear,
    /// Started on `p = 0` and immediately went the wrong way.
    Degenerate,
    Hit { which: Crossed, ta: f64, tb: f64 },
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Crossed {
    Velocity,
    Low,
    High,
}

struct Run<'a> {
    pend: &'a Pendulum,
    tol: &'a Tolerances,
    horizon: f64,
    guard: Option<RegionGuard>,
    t0: f64,
    next_grid: u64,
    /// Step-size proposal carried between steps (0 = not yet chosen).
    h: f64,
    samples: Vec<Sample>,
    events: Vec<Event>,
    corner_reentries: usize,
}

pub(crate) fn branch_field(pend: &Pendulum, side: f64) -> impl Fn(f64, Vec2) -> Vec2 + '_ {
    move |t, y| [y[1], pend.branch_accel(side, y[0], y[1], t)]
}

fn side_of(d: i8) -> f64 {
    if d >= 0 {
        1.0
    } else {
        -1.0
    }
}

impl<'a> Run<'a> {
    fn grid_time(&self, k: u64) -> f64 {
        self.t0 + k as f64 * self.tol.max_dt
    }

    fn skip_grid_through(&mut self, t: f64) {
        while self.grid_time(self.next_grid) <= t + SNAP {
            self.next_grid += 1;
        }
    }

    fn push_event(&mut self, t: f64, q: f64, kind: EventKind) -> Result<(), IntegrateError> {
        if self.events.len() >= MAX_EVENTS {
            return Err(IntegrateError::ChatterLimit { limit: MAX_EVENTS, t });
        }
        self.events.push(Event { t, q, kind });
        Ok(())
    }

    fn push_sample(&mut self, t: f64, q: f64, p: f64, mode: Mode) {
        if let Some(last) = self.samples.last() {
            if last.t == t && last.q == q && last.p == p && last.mode == mode {
                return;
            }
        }
        self.samples.push(Sample { t, q, p, mode });
    }

    fn drive(&mut self, initial: State) -> Result<(), IntegrateError> {
        let mut phase = self.start(initial)?;
        loop {
            phase = match phase {
                Phase::Slip { t, y, side } => self.slip(t, y, side)?,
                Phase::Stuck { t, q } => self.stuck(t, q)?,
                Phase::Done => return Ok(()),
            };
        }
    }

    fn exit(&mut self, t: f64, q: f64, p: f64, side: Side) -> Result<Phase, IntegrateError> {
        self.push_sample(t, q, p, if p == 0.0 { Mode::Stuck } else { Mode::Slipping });
        self.push_event(t, q, EventKind::RegionExit { side })?;
        Ok(Phase::Done)
    }

    fn start(&mut self, s: State) -> Result<Phase, IntegrateError> {
        if let Some(g) = self.guard {
            if s.q < g.lo {
                return self.exit(s.t, s.q, s.p, Side::Low);
            }
            if s.q > g.hi {
                return self.exit(s.t, s.q, s.p, Side::High);
            }
            let at_lo = s.q == g.lo;
            let at_hi = s.q == g.hi;
            if at_lo || at_hi {
                let side = if at_lo { Side::Low } else { Side::High };
                let outward = if at_lo { s.p < 0.0 } else { s.p > 0.0 };
                if outward || (!g.closed && s.p == 0.0) {
                    return self.exit(s.t, s.q, s.p, side);
                }
                if s.p == 0.0 {
                    return self.corner(s.t, s.q, side);
                }
            }
        }
        if s.p == 0.0 {
            return self.on_surface(s.t, s.q, false);
        }
        let mu = self.pend.params.mu;
        if mu > 0.0 && s.p.abs() < self.tol.stick_band && self.pend.stiction_holds(s.q, s.t) {
            return self.enter_stick(s.t, s.q);
        }
        Ok(Phase::Slip { t: s.t, y: [s.q, s.p], side: s.p.signum() })
    }

    fn enter_stick(&mut self, t: f64, q: f64) -> Result<Phase, IntegrateError> {
        self.push_sample(t, q, 0.0, Mode::Stuck);
        self.push_event(t, q, EventKind::StickEntry)?;
        Ok(Phase::Stuck { t, q })
    }

    /// The state sits on `p = 0`: stick, or cross to the side both limit
    /// fields point to.
    fn on_surface(&mut self, t: f64, q: f64, record: bool) -> Result<Phase, IntegrateError> {
        match classify_switch(self.pend, q, t) {
            SwitchKind::Stick => self.enter_stick(t, q),
            SwitchKind::Crossing(d) => {
                if record && self.pend.params.mu > 0.0 {
                    self.push_event(t, q, EventKind::Crossing { direction: d })?;
                }
                Ok(Phase::Slip { t, y: [q, 0.0], side: side_of(d) })
            }
        }
    }

    /// Closed guard, arrival at an end of the interval with `p` at rest.
    fn corner(&mut self, t: f64, q: f64, side: Side) -> Result<Phase, IntegrateError> {
        match classify_switch(self.pend, q, t) {
            SwitchKind::Stick => self.enter_stick(t, q),
            SwitchKind::Crossing(d) => {
                let outward = match side {
                    Side::Low => d < 0,
                    Side::High => d > 0,
                };
                if outward {
                    self.exit(t, q, 0.0, side)
                } else {
                    self.corner_reentries += 1;
                    if self.pend.params.mu > 0.0 {
                        self.push_event(t, q, EventKind::Crossing { direction: d })?;
                    }
                    Ok(Phase::Slip { t, y: [q, 0.0], side: side_of(d) })
                }
            }
        }
    }

    fn stuck(&mut self, t: f64, q: f64) -> Result<Phase, IntegrateError> {
        let (t_end, released) = switching::release_time(self.pend, q, t, self.horizon, self.tol);
        self.skip_grid_through(t);
        while self.grid_time(self.next_grid) < t_end - SNAP {
            let tg = self.grid_time(self.next_grid);
            self.push_sample(tg, q, 0.0, Mode::Stuck);
            self.next_grid += 1;
        }
        self.skip_grid_through(t_end);
        self.push_sample(t_end, q, 0.0, Mode::Stuck);
        let Some(direction) = released else {
            self.push_event(t_end, q, EventKind::HorizonReached)?;
            return Ok(Phase::Done);
        };
        self.push_event(t_end, q, EventKind::StickRelease { direction })?;
        if let Some(g) = self.guard {
            let at_lo = q <= g.lo;
            let at_hi = q >= g.hi;
            if (at_lo && direction < 0) || (at_hi && direction > 0) {
                let side = if at_lo { Side::Low } else { Side::High };
                self.push_event(t_end, q, EventKind::RegionExit { side })?;
                return Ok(Phase::Done);
            }
            if at_lo || at_hi {
                self.corner_reentries += 1;
            }
        }
        Ok(Phase::Slip { t: t_end, y: [q, 0.0], side: side_of(direction) })
    }

    fn slip(&mut self, mut t: f64, mut y: Vec2, side: f64) -> Result<Phase, IntegrateError> {
        let pend = self.pend;
        let tol = self.tol;
        let field = branch_field(pend, side);
        let mut k1 = field(t, y);
        if self.h <= 0.0 {
            self.h = initial_step(&field, t, y, k1, tol);
        }
        let track_velocity = pend.params.mu > 0.0;
        loop {
            self.skip_grid_through(t);
            if self.horizon - t <= SNAP {
                self.push_sample(t, y[0], y[1], Mode::Slipping);
                self.push_event(t, y[0], EventKind::HorizonReached)?;
                return Ok(Phase::Done);
            }
            let t_stop = self.grid_time(self.next_grid).min(self.horizon);
            let room = t_stop - t;
            let mut h = self.h.min(tol.max_dt);
            let mut landing = false;
            let mut rejected = false;
            let step = loop {
                // Steps ending within SNAP of the stop land on it exactly.
                if h >= room - SNAP {
                    h = room;
                    landing = true;
                }
                let st = dopri_step(&field, t, y, k1, h, tol);
                if st.err <= 1.0 {
                    break st;
                }
                rejected = true;
                landing = false;
                h *= step_factor(st.err, true);
                if h < MIN_STEP {
                    return Err(IntegrateError::StepUnderflow { t, h });
                }
            };
            let t_new = if landing { t_stop } else { t + h };
            let h_next = h * step_factor(step.err, rejected);

            match self.scan(&step, t, y, t_new, side, track_velocity) {
                Scan::Clear => {}
                Scan::Degenerate => {
                    if h > tol.event_tol {
                        self.h = h / SCAN_POINTS as f64;
                        continue;
                    }
                    // Resolution limit: settle the switch at the end of this
                    // tiny step.
                    self.h = h_next;
                    return self.on_surface(t_new, step.y1[0], true);
                }
                Scan::Hit { which, ta, tb } => {
                    let (ts, ys) =
                        locate(&field, t, y, k1, (ta, tb, t_new), which, side, self.guard, tol);
                    self.h = h_next.min(tol.max_dt);
                    return match which {
                        Crossed::Velocity => self.on_surface(ts, ys[0], true),
                        Crossed::Low | Crossed::High => {
                            let side = if which == Crossed::Low { Side::Low } else { Side::High };
                            let g = self.guard.expect("guard event without guard");
                            // The located angle agrees with the boundary to
                            // rounding; report the boundary itself.
                            let qb = if which == Crossed::Low { g.lo } else { g.hi };
                            if g.closed && ys[1].abs() <= tol.stick_band {
                                self.corner(ts, qb, side)
                            } else {
                                self.exit(ts, qb, ys[1], side)
                            }
                        }
                    };
                }
            }

            t = t_new;
            y = step.y1;
            k1 = step.k7;
            self.h = h_next;
            if track_velocity && y[1].abs() < tol.stick_band && pend.stiction_holds(y[0], t) {
                return self.enter_stick(t, y[0]);
            }
            self.push_sample(t, y[0], y[1], Mode::Slipping);
        }
    }

    /// Looks for the first sign change of the active event functions over a
    /// step, using the dense interpolant at `SCAN_POINTS` interior nodes.
    fn scan(&self, st: &RawStep, t: f64, y: Vec2, t_new: f64, side: f64, vel: bool) -> Scan {
        let guard = self.guard;
        let values = |v: Vec2| -> [f64; 3] {
            let (lo, hi) = match guard {
                Some(g) => (v[0] - g.lo, g.hi - v[0]),
                None => (1.0, 1.0),
            };
            [if vel { side * v[1] } else { 1.0 }, lo, hi]
        };
        let mut prev_t = t;
        let mut prev = values(y);
        for k in 1..=SCAN_POINTS {
            let (tk, vk) = if k == SCAN_POINTS {
                (t_new, st.y1)
            } else {
                let tk = t + (t_new - t) * k as f64 / SCAN_POINTS as f64;
                (tk, st.dense.eval(tk))
            };
            let cur = values(vk);
            if k == 1 && vel && prev[0] == 0.0 && cur[0] <= 0.0 {
                return Scan::Degenerate;
            }
            let mut hit: Option<Crossed> = None;
            for (i, which) in [Crossed::Velocity, Crossed::Low, Crossed::High].into_iter().enumerate()
            {
                let fired = if prev[i] > 0.0 {
                    cur[i] <= 0.0
                } else {
                    // Guard functions start at zero only on a boundary; a
                    // move outward from there counts immediately.
                    i > 0 && prev[i] == 0.0 && cur[i] < 0.0
                };
                if fired {
                    hit = match hit {
                        None => Some(which),
                        // Several in one sub-interval: keep the earliest.
                        Some(other) => Some(earliest(&st.dense, prev_t, tk, other, which, side, guard)),
                    };
                }
            }
            if let Some(which) = hit {
                return Scan::Hit { which, ta: prev_t, tb: tk };
            }
            prev = cur;
            prev_t = tk;
        }
        Scan::Clear
    }
}

fn event_value(which: Crossed, v: Vec2, side: f64, guard: Option<RegionGuard>) -> f64 {
    match which {
        Crossed::Velocity => side * v[1],
        Crossed::Low => v[0] - guard.map_or(f64::NEG_INFINITY, |g| g.lo),
        Crossed::High => guard.map_or(f64::INFINITY, |g| g.hi) - v[0],
    }
}

/// Bisection on the interpolant: first time in `(ta, tb]` where the event
/// function is `<= 0`, to within `width`.
fn bisect_dense(
    dense: &Dense,
    mut ta: f64,
    mut tb: f64,
    which: Crossed,
    side: f64,
    guard: Option<RegionGuard>,
    width: f64,
) -> f64 {
    while tb - ta > width {
        let mid = 0.5 * (ta + tb);
        if mid <= ta || mid >= tb {
            break;
        }
        if event_value(which, dense.eval(mid), side, guard) > 0.0 {
            ta = mid;
        } else {
            tb = mid;
        }
    }
    tb
}

fn earliest(
    dense: &Dense,
    ta: f64,
    tb: f64,
    a: Crossed,
    b: Crossed,
    side: f64,
    guard: Option<RegionGuard>,
) -> Crossed {
    let w = (tb - ta) * 1e-6;
    let ta_ = bisect_dense(dense, ta, tb, a, side, guard, w);
    let tb_ = bisect_dense(dense, ta, tb, b, side, guard, w);
    if ta_ <= tb_ {
        a
    } else {
        b
    }
}

/// Localizes an event bracketed in `(ta, tb]` inside the step that starts
/// at `(t, y)` and ends at `t_end`, and returns the time and an accurate
/// state there. The state comes from a fresh step of the pair from `(t, y)`,
/// followed by Newton corrections on the event function.
#[allow(clippy::too_many_arguments)]
fn locate<F>(
    field: &F,
    t: f64,
    y: Vec2,
    k1: Vec2,
    (ta, tb, t_end): (f64, f64, f64),
    which: Crossed,
    side: f64,
    guard: Option<RegionGuard>,
    tol: &Tolerances,
) -> (f64, Vec2)
where
    F: Fn(f64, Vec2) -> Vec2,
{
    let probe = dopri_step(field, t, y, k1, t_end - t, tol);
    let mut ts = bisect_dense(&probe.dense, ta, tb, which, side, guard, tol.event_tol);
    let at = |s: f64| -> Vec2 {
        if s <= t {
            y
        } else {
            dopri_step(field, t, y, k1, s - t, tol).y1
        }
    };
    let mut ys = at(ts);
    for _ in 0..8 {
        let (g, dg) = match which {
            Crossed::Velocity => (ys[1], field(ts, ys)[1]),
            Crossed::Low => (ys[0] - guard.map_or(0.0, |g| g.lo), ys[1]),
            Crossed::High => (ys[0] - guard.map_or(0.0, |g| g.hi), ys[1]),
        };
        let small = match which {
            // Refine to time resolution: the restart time feeds straight
            // into everything that follows.
            Crossed::Velocity => g == 0.0 || (g / dg).abs() <= 1e-15 * (1.0 + ts.abs()),
            _ => g.abs() <= 1e-14 * (1.0 + ys[0].abs()),
        };
        if small || dg == 0.0 || !dg.is_finite() {
            break;
        }
        let next = (ts - g / dg).clamp(t, t_end);
        if next == ts {
            break;
        }
        ts = next;
        ys = at(ts);
    }
    (ts, ys)
}
