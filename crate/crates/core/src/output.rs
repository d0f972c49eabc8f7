//! File formats: trajectory CSV, JSON documents, SVG phase portraits, and
//! atomic writes.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::integrator::{Sample, Trajectory};
use crate::model::Mode;

pub const CSV_HEADER: &str = "t,q,p,mode";
/// Longest polyline written to an SVG; longer trajectories are thinned.
pub const SVG_MAX_POINTS: usize = 4000;

/// Writes `bytes` to `path` through a temporary file in the same directory
/// and a rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp: PathBuf = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path).inspect_err(|_| {
        let _ = std::fs::remove_file(&tmp);
    })
}

/// Samples as CSV. Floats use the shortest representation that parses back
/// to the same value.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let mut out = String::with_capacity(48 * traj.samples.len() + 16);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for s in &traj.samples {
        let _ = writeln!(out, "{:?},{:?},{:?},{}", s.t, s.q, s.p, s.mode.as_str());
    }
    out
}

pub fn parse_csv(text: &str) -> Result<Vec<Sample>, String> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(format!("expected header {CSV_HEADER}"));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 4 {
                return Err(format!("line {}: expected 4 columns", i + 2));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| format!("line {}: {e}", i + 2));
            let mode = match cols[3] {
                "slip" => Mode::Slipping,
                "stuck" => Mode::Stuck,
                other => return Err(format!("line {}: unknown mode {other}", i + 2)),
            };
            Ok(Sample { t: num(cols[0])?, q: num(cols[1])?, p: num(cols[2])?, mode })
        })
        .collect()
}

pub fn to_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable output");
    s.push('\n');
    s
}

/// Phase portrait `q` against `p`: slipping motion as polylines, stuck
/// samples as dots. Axes are drawn through the origin when it is in view.
pub fn phase_svg(traj: &Trajectory, title: &str) -> String {
    let (w, h, pad) = (640.0, 480.0, 48.0);
    let samples = &traj.samples;
    let step = samples.len().div_ceil(SVG_MAX_POINTS).max(1);
    let (qlo, qhi) = traj.q_range();
    let (plo, phi) = samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), s| (a.min(s.p), b.max(s.p)));
    let widen = |lo: f64, hi: f64| if hi - lo < 1e-9 { (lo - 0.5, hi + 0.5) } else { (lo, hi) };
    let (qlo, qhi) = widen(qlo, qhi);
    let (plo, phi) = widen(plo, phi);
    let x = |q: f64| pad + (q - qlo) / (qhi - qlo) * (w - 2.0 * pad);
    let y = |p: f64| h - pad - (p - plo) / (phi - plo) * (h - 2.0 * pad);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{pad}" y="24" font-family="sans-serif" font-size="14">{}</text>"#, escape(title));
    // Axes.
    let _ = writeln!(
        out,
        r##"<g stroke="#888" stroke-width="1"><line x1="{pad}" y1="{}" x2="{}" y2="{}"/><line x1="{pad}" y1="{pad}" x2="{pad}" y2="{}"/></g>"##,
        h - pad,
        w - pad,
        h - pad,
        h - pad
    );
    if plo < 0.0 && phi > 0.0 {
        let _ = writeln!(
            out,
            r##"<line stroke="#ccc" stroke-dasharray="4 3" x1="{pad}" y1="{0:.2}" x2="{1}" y2="{0:.2}"/>"##,
            y(0.0),
            w - pad
        );
    }
    let _ = writeln!(
        out,
        r#"<g font-family="sans-serif" font-size="11"><text x="{}" y="{}">q [rad] {qlo:.3} .. {qhi:.3}</text><text x="4" y="{}">p [rad/s] {plo:.3} .. {phi:.3}</text></g>"#,
        w / 2.0 - 60.0,
        h - 12.0,
        pad - 8.0
    );

    let mut path = String::new();
    let flush = |path: &mut String, out: &mut String| {
        if !path.is_empty() {
            let _ = writeln!(out, r##"<path fill="none" stroke="#1f5fbf" stroke-width="1.2" d="{}"/>"##, path.trim_end());
            path.clear();
        }
    };
    let mut dots = String::new();
    for (i, s) in samples.iter().enumerate() {
        let keep = i % step == 0 || i + 1 == samples.len() || s.mode == Mode::Stuck;
        if !keep {
            continue;
        }
        match s.mode {
            Mode::Slipping => {
                let cmd = if path.is_empty() { 'M' } else { 'L' };
                let _ = write!(path, "{cmd}{:.2} {:.2} ", x(s.q), y(s.p));
            }
            Mode::Stuck => {
                flush(&mut path, &mut out);
                if dots.len() < 64 * SVG_MAX_POINTS {
                    let _ = write!(dots, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5"/>"#, x(s.q), y(s.p));
                }
                // Keep the polyline connected through the stuck point.
                let _ = write!(path, "M{:.2} {:.2} ", x(s.q), y(s.p));
            }
        }
    }
    flush(&mut path, &mut out);
    if !dots.is_empty() {
        let _ = writeln!(out, r##"<g fill="#c0392b">{dots}</g>"##);
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::{integrate, Tolerances};
    use crate::model::{Params, Pendulum, PivotLaw, State};

    fn traj() -> Trajectory {
        let p = Pendulum::new(Params::default(), PivotLaw::sine(6.0, 2.0, 0.0)).unwrap();
        integrate(State::slipping(1.0, 1.5, 0.0), &p, 4.0, &Tolerances::default(), None).unwrap()
    }

    #[test]
    fn csv_round_trips_exactly() {
        let tr = traj();
        let text = trajectory_csv(&tr);
        assert!(text.starts_with("t,q,p,mode\n"));
        assert_eq!(parse_csv(&text).unwrap(), tr.samples);
    }

    #[test]
    fn svg_is_well_formed() {
        let svg = phase_svg(&traj(), "a <test>");
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("<path"));
        assert!(svg.contains("a &lt;test&gt;"));
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/out.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "two");
        let leftovers = std::fs::read_dir(path.parent().unwrap()).unwrap().count();
        assert_eq!(leftovers, 1);
    }
}
