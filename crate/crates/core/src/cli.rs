//! Command-line front end: `simulate`, `shoot`, `sweep` and `verify`.

use std::ffi::OsString;
use std::f64::consts::PI;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::integrator::{integrate, Trajectory};
use crate::model::{PivotLaw, State};
use crate::output::{phase_svg, to_json, trajectory_csv, write_atomic};
use crate::scenario::{load_scenario, RegionMode, Scenario};
use crate::verification::{
    analytic_lipschitz, check_continuous_dependence, check_escape_trap, check_jump_inequality,
    check_one_sided_lipschitz, check_upper_semicontinuity, summary_table, CheckReport, SampleGrid,
};
use crate::wazewski::{
    bisect_curve, classify_exit_traced, family_sweep, BisectResult, BisectStatus, ShootError,
    SigmaCurve,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_ERROR: i32 = 2;
pub const EXIT_INCONCLUSIVE: i32 = 3;

/// Names accepted by `verify --checks`.
pub const CHECKS: [&str; 5] = ["lipschitz", "jump", "continuity", "usc", "trap"];

#[derive(Parser, Debug)]
#[command(name = "pendulum", version, about = "Inverted pendulum with dry friction: simulation, shooting and property checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate from a point initial condition.
    Simulate(Common),
    /// Bisect along the scenario curve for a motion that never falls.
    Shoot(Common),
    /// Shoot along every curve of a family in parallel.
    Sweep(Common),
    /// Run the property checks.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Comma-separated subset of: lipschitz, jump, continuity, usc, trap.
        #[arg(long, value_delimiter = ',')]
        checks: Option<Vec<String>>,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// Scenario file (JSON).
    scenario: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the scenario horizon (s).
    #[arg(long)]
    horizon: Option<f64>,
    /// Use the open strip 0 < q < pi.
    #[arg(long)]
    strict: bool,
    /// Skip SVG phase portraits.
    #[arg(long)]
    no_svg: bool,
}

struct Ctx<'a> {
    scenario: Scenario,
    fp: String,
    out: PathBuf,
    svg: bool,
    stdout: &'a mut dyn Write,
    written: Vec<String>,
}

impl Ctx<'_> {
    fn write(&mut self, name: &str, content: &str) -> Result<(), String> {
        let path = self.out.join(name);
        write_atomic(&path, content.as_bytes()).map_err(|e| format!("writing {}: {e}", path.display()))?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn say(&mut self, line: impl AsRef<str>) {
        let _ = writeln!(self.stdout, "{}", line.as_ref());
    }

    fn write_trajectory(&mut self, stem: &str, traj: &Trajectory, title: &str) -> Result<(), String> {
        self.write(&format!("{stem}.csv"), &trajectory_csv(traj))?;
        if self.svg {
            self.write(&format!("{stem}.svg"), &phase_svg(traj, title))?;
        }
        Ok(())
    }

    fn manifest(&mut self, command: &str, extra: Value) -> Result<(), String> {
        let mut files = self.written.clone();
        files.push("manifest.json".into());
        let m = json!({
            "command": command,
            "scenario": self.fp,
            "files": files,
            "details": extra,
        });
        self.write("manifest.json", &to_json(&m))
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Reports go to `stdout`, diagnostics to standard error.
pub fn run<I, T>(args: I, stdout: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let (name, common, checks) = match cli.command {
        Command::Simulate(c) => ("simulate", c, None),
        Command::Shoot(c) => ("shoot", c, None),
        Command::Sweep(c) => ("sweep", c, None),
        Command::Verify { common, checks } => ("verify", common, checks),
    };
    let scenario = match prepare(&common) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_ERROR;
        }
    };
    let mut ctx = Ctx {
        fp: scenario.fingerprint(),
        scenario,
        out: common.out.clone(),
        svg: !common.no_svg,
        stdout,
        written: Vec::new(),
    };
    let result = match name {
        "simulate" => cmd_simulate(&mut ctx),
        "shoot" => cmd_shoot(&mut ctx),
        "sweep" => cmd_sweep(&mut ctx),
        _ => cmd_verify(&mut ctx, checks),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

fn prepare(common: &Common) -> Result<Scenario, String> {
    let mut sc = load_scenario(&common.scenario).map_err(|e| e.to_string())?;
    if let Some(h) = common.horizon {
        sc.horizon = h;
    }
    if common.strict {
        sc.mode = RegionMode::Strict;
    }
    sc.validate().map_err(|e| e.to_string())?;
    Ok(sc)
}

fn is_conservative(sc: &Scenario) -> bool {
    sc.params.mu == 0.0 && matches!(sc.pivot, PivotLaw::Constant { a } if a == 0.0)
}

fn cmd_simulate(ctx: &mut Ctx) -> Result<i32, String> {
    let sc = ctx.scenario.clone();
    let Some(state) = sc.initial_state() else {
        return Err("simulate needs a point initial condition".into());
    };
    ctx.write("scenario.json", &sc.normalized())?;
    let pend = sc.pendulum();
    let traj = integrate(state, &pend, sc.t_end(), &sc.tolerances, sc.region_guard())
        .map_err(|e| format!("integration failed: {e}"))?;
    ctx.write_trajectory("trajectory", &traj, &format!("simulate {}", ctx.fp))?;
    ctx.write("events.json", &to_json(&traj.events))?;
    let end = traj.final_state();
    ctx.say(format!("samples: {}  events: {}", traj.samples.len(), traj.events.len()));
    if let Some(e) = traj.last_event() {
        ctx.say(format!("last event: {} at t = {} (q = {})", e.kind.name(), e.t, e.q));
    }
    ctx.say(format!("final state: t = {}, q = {}, p = {}, mode = {}", end.t, end.q, end.p, end.mode.as_str()));
    let mut details = json!({
        "trajectory": traj.params_fingerprint,
        "samples": traj.samples.len(),
        "events": traj.events.len(),
        "final_state": {"t": end.t, "q": end.q, "p": end.p, "mode": end.mode.as_str()},
    });
    if is_conservative(&sc) {
        let e0 = pend.energy(state.q, state.p);
        let e1 = pend.energy(end.q, end.p);
        let drift = if e0 != 0.0 { ((e1 - e0) / e0).abs() } else { (e1 - e0).abs() };
        ctx.say(format!("energy drift (relative): {drift:e}"));
        details["energy_drift"] = json!(drift);
    }
    ctx.manifest("simulate", details)?;
    Ok(EXIT_OK)
}

fn witness_json(r: &BisectResult) -> Value {
    match &r.witness {
        None => Value::Null,
        Some(w) => json!({
            "q0": w.q0,
            "p0": w.p0,
            "horizon": w.end_time,
            "outcome": w.outcome,
            "min_boundary_distance": w.min_boundary_distance,
            "corner_touches": w.corner_touches,
            "trajectory": w.trajectory_ref,
        }),
    }
}

fn bisect_json(fp: &str, curve: &SigmaCurve, r: &BisectResult) -> Value {
    json!({
        "scenario": fp,
        "curve": curve,
        "bracket": [r.bracket.0, r.bracket.1],
        "witness": witness_json(r),
        "iterations": r.iterations,
        "status": r.status,
        "survival_time": r.survival_time,
        "corner_exits": r.history.iter().filter(|h| h.corner_exit).count(),
        "classifications": r.history.len(),
    })
}

fn status_line(curve: &SigmaCurve, r: &BisectResult) -> String {
    match (&r.witness, r.status) {
        (Some(w), _) => format!(
            "{}: witness q0 = {}, p0 = {} ({}), min boundary distance {}, after {} iterations",
            curve.describe(),
            w.q0,
            w.p0,
            w.outcome.name(),
            w.min_boundary_distance,
            r.iterations
        ),
        (None, s) => format!(
            "{}: inconclusive ({}) with bracket [{}, {}]; best points stay inside until t = {}",
            curve.describe(),
            if s == BisectStatus::InconclusiveWidth { "bracket width limit" } else { "iteration limit" },
            r.bracket.0,
            r.bracket.1,
            r.survival_time
        ),
    }
}

fn cmd_shoot(ctx: &mut Ctx) -> Result<i32, String> {
    let sc = ctx.scenario.clone();
    let Some(curves) = sc.initial.curves() else {
        return Err("shoot needs a curve initial condition".into());
    };
    if curves.len() > 1 {
        return cmd_sweep(ctx);
    }
    ctx.write("scenario.json", &sc.normalized())?;
    let pend = sc.pendulum();
    let cfg = sc.shoot_config();
    let curve = &curves[0];
    let r = match bisect_curve(curve, &pend, &cfg, sc.max_iters) {
        Ok(r) => r,
        Err(e @ ShootError::PreconditionFailed { .. }) => return Err(e.to_string()),
        Err(e) => return Err(format!("shooting failed: {e}")),
    };
    ctx.say(status_line(curve, &r));
    ctx.write("witness.json", &to_json(&bisect_json(&ctx.fp, curve, &r)))?;
    if let Some(w) = &r.witness {
        let (_, traj) = classify_exit_traced(w.q0, curve, &pend, &cfg).map_err(|e| e.to_string())?;
        ctx.write_trajectory("witness_trajectory", &traj, &format!("witness q0 = {}", w.q0))?;
    }
    ctx.manifest("shoot", json!({"status": r.status}))?;
    Ok(if r.witness.is_some() { EXIT_OK } else { EXIT_INCONCLUSIVE })
}

fn cmd_sweep(ctx: &mut Ctx) -> Result<i32, String> {
    let sc = ctx.scenario.clone();
    let Some(curves) = sc.initial.curves() else {
        return Err("sweep needs a curve or family initial condition".into());
    };
    ctx.write("scenario.json", &sc.normalized())?;
    let pend = sc.pendulum();
    let entries = family_sweep(&curves, &pend, &sc.shoot_config(), sc.max_iters)
        .map_err(|e| e.to_string())?;
    let mut rows = Vec::new();
    let (mut errors, mut inconclusive) = (0, 0);
    for e in &entries {
        let curve = &curves[e.curve_id];
        match &e.result {
            Ok(r) => {
                ctx.say(format!("[{}] {}", e.curve_id, status_line(curve, r)));
                if r.witness.is_none() {
                    inconclusive += 1;
                }
                let mut v = bisect_json(&ctx.fp, curve, r);
                v["curve_id"] = json!(e.curve_id);
                rows.push(v);
            }
            Err(err) => {
                errors += 1;
                ctx.say(format!("[{}] {}: error: {err}", e.curve_id, curve.describe()));
                rows.push(json!({"curve_id": e.curve_id, "curve": curve, "error": err.to_string()}));
            }
        }
    }
    ctx.write("sweep.json", &to_json(&json!({"scenario": ctx.fp, "results": rows})))?;
    ctx.manifest("sweep", json!({"curves": entries.len(), "errors": errors, "inconclusive": inconclusive}))?;
    Ok(if errors > 0 {
        EXIT_ERROR
    } else if inconclusive > 0 {
        EXIT_INCONCLUSIVE
    } else {
        EXIT_OK
    })
}

/// Runs the named checks with settings derived from the scenario.
pub fn run_checks(sc: &Scenario, names: &[String]) -> Result<Vec<CheckReport>, String> {
    let pend = sc.pendulum();
    let (t0, t1) = (sc.t0(), sc.t_end());
    let base = sc.initial_state().unwrap_or(State::slipping(PI / 2.0, 0.0, t0));
    let amax = pend.pivot.sup_bound(t0, t1);
    let p_max = match pend.p_star(t0, t1) {
        Ok(p) => p.max(base.p.abs()),
        Err(_) => (2.0 * (sc.params.g + amax) / sc.params.l).sqrt() + base.p.abs(),
    };
    let seed = crate::fingerprint::seed_from(sc);
    let grid = SampleGrid::halton((0.0, PI), p_max, (t0, t1), 200, 20_000, seed);
    let tol = sc.tolerances;
    let mut out = Vec::new();
    for name in names {
        let r = match name.as_str() {
            "lipschitz" => check_one_sided_lipschitz(&pend, &grid, analytic_lipschitz(&pend, p_max, t0, t1)),
            "jump" => check_jump_inequality(&pend, &grid),
            "continuity" => {
                let h = t0 + sc.horizon.min(1.0);
                check_continuous_dependence(&pend, &base, h, &[1e-6, 1e-8, 1e-10, 1e-12], &tol)
                    .map_err(|e| format!("continuity: {e}"))?
            }
            "usc" => {
                let seq: Vec<f64> = (1..=30).map(|k| 0.5f64.powi(k)).collect();
                check_upper_semicontinuity(&pend, base.q, t0, &seq)
            }
            "trap" => {
                let starts: Vec<(f64, f64)> =
                    (0..5).flat_map(|k| [(k as f64 * PI / 4.0, 1.0), (k as f64 * PI / 4.0, -1.0)]).collect();
                check_escape_trap(&pend, &starts, t0, t0 + sc.horizon.min(10.0), &tol, 1e-6)
                    .map_err(|e| format!("trap: {e}"))?
            }
            other => return Err(format!("unknown check {other:?}; choose from {}", CHECKS.join(", "))),
        };
        out.push(r);
    }
    Ok(out)
}

fn cmd_verify(ctx: &mut Ctx, checks: Option<Vec<String>>) -> Result<i32, String> {
    let names = checks.unwrap_or_else(|| CHECKS.iter().map(|s| s.to_string()).collect());
    if let Some(bad) = names.iter().find(|n| !CHECKS.contains(&n.as_str())) {
        return Err(format!("unknown check {bad:?}; choose from {}", CHECKS.join(", ")));
    }
    let sc = ctx.scenario.clone();
    ctx.write("scenario.json", &sc.normalized())?;
    let reports = run_checks(&sc, &names)?;
    let table = summary_table(&reports);
    let _ = write!(ctx.stdout, "{table}");
    ctx.write("reports.json", &to_json(&json!({"scenario": ctx.fp, "reports": reports})))?;
    ctx.write("summary.txt", &table)?;
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    ctx.manifest("verify", json!({"failed": failed}))?;
    if failed.is_empty() {
        Ok(EXIT_OK)
    } else {
        eprintln!("failed checks: {}", failed.join(", "));
        Ok(EXIT_CHECK_FAILED)
    }
}
