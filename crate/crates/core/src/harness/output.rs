//! Experiment artifacts: CSV tables for every run, the aggregate learning
//! curve, per-seed evaluation traces and policy snapshots, and a
//! self-contained SVG plot of the curve.
//!
//! Floats are written with Rust's shortest-round-trip formatting, so the
//! CSV files parse back to bit-identical values.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use super::runner::{CurvePoint, ExperimentResult, RunResult};
use super::HarnessError;
use crate::mdp::EpisodeLog;

/// Writes the full artifact set for one experiment into `dir` (creating
/// it): `runs.csv`, `curve.csv`, `curve.svg`, and per seed
/// `trace_<seed>.csv` plus `policy_<seed>.txt`.
pub fn write_experiment(dir: &Path, result: &ExperimentResult) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    write_runs_csv(&dir.join("runs.csv"), &result.runs)?;
    write_curve_csv(&dir.join("curve.csv"), &result.curve)?;
    let title = format!("{} / shield: {}", result.env, result.shield_mode);
    fs::write(dir.join("curve.svg"), render_curve_svg(&result.curve, &title))?;
    for run in &result.runs {
        write_trace_csv(&dir.join(format!("trace_{}.csv", run.seed)), &run.trace)?;
        let mut w = BufWriter::new(File::create(dir.join(format!("policy_{}.txt", run.seed)))?);
        run.policy.save_snapshot(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

/// One row per training episode per seed.
pub fn write_runs_csv(path: &Path, runs: &[RunResult]) -> Result<(), HarnessError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "seed,episode,reward,unsafe_actions,interventions")?;
    for run in runs {
        for ep in &run.episodes {
            writeln!(
                w,
                "{},{},{},{},{}",
                run.seed, ep.episode, ep.reward, ep.unsafe_actions, ep.interventions
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

/// The aggregate learning curve: per-episode mean and standard deviation
/// across seeds.
pub fn write_curve_csv(path: &Path, curve: &[CurvePoint]) -> Result<(), HarnessError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "episode,mean,std")?;
    for point in curve {
        writeln!(w, "{},{},{}", point.episode, point.mean, point.std)?;
    }
    w.flush()?;
    Ok(())
}

/// A step-by-step evaluation episode: the state each action was taken in,
/// the executed action, and the audit flags (1/0).
pub fn write_trace_csv(path: &Path, trace: &EpisodeLog) -> Result<(), HarnessError> {
    let mut w = BufWriter::new(File::create(path)?);
    let names = trace
        .transitions
        .first()
        .map(|t| t.state.names())
        .unwrap_or(&[]);
    write!(w, "step")?;
    for name in names {
        write!(w, ",{name}")?;
    }
    writeln!(w, ",action,unsafe,intervened")?;
    for (i, t) in trace.transitions.iter().enumerate() {
        write!(w, "{}", i + 1)?;
        for v in t.state.values() {
            write!(w, ",{v}")?;
        }
        writeln!(
            w,
            ",{},{},{}",
            t.action.as_f64(),
            u8::from(trace.unsafe_executed[i]),
            u8::from(trace.interventions[i]),
        )?;
    }
    w.flush()?;
    Ok(())
}

const SVG_WIDTH: f64 = 800.0;
const SVG_HEIGHT: f64 = 500.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 25.0;
const MARGIN_TOP: f64 = 45.0;
const MARGIN_BOTTOM: f64 = 55.0;

/// Renders the learning curve as a standalone SVG: the mean as a line and
/// a shaded ±1 standard deviation band around it.
pub fn render_curve_svg(curve: &[CurvePoint], title: &str) -> String {
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {SVG_WIDTH} {SVG_HEIGHT}\" \
         font-family=\"sans-serif\" font-size=\"14\">"
    );
    let _ = writeln!(
        svg,
        "<rect width=\"{SVG_WIDTH}\" height=\"{SVG_HEIGHT}\" fill=\"white\"/>"
    );
    let _ = writeln!(
        svg,
        "<text x=\"{:.1}\" y=\"25\" text-anchor=\"middle\" font-size=\"17\">{}</text>",
        SVG_WIDTH / 2.0,
        escape_xml(title)
    );

    if !curve.is_empty() {
        let x_min = curve.first().expect("non-empty").episode as f64;
        let x_max = curve.last().expect("non-empty").episode as f64;
        let mut y_min = f64::INFINITY;
        let mut y_max = f64::NEG_INFINITY;
        for p in curve {
            y_min = y_min.min(p.mean - p.std);
            y_max = y_max.max(p.mean + p.std);
        }
        let pad = (0.05 * (y_max - y_min)).max(1e-9);
        let (y_min, y_max) = (y_min - pad, y_max + pad);
        let x_span = (x_max - x_min).max(1.0);

        let plot_w = SVG_WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
        let plot_h = SVG_HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
        let to_x = |e: f64| MARGIN_LEFT + (e - x_min) / x_span * plot_w;
        let to_y = |v: f64| MARGIN_TOP + (y_max - v) / (y_max - y_min) * plot_h;

        // ±1 std band: upper edge left to right, lower edge back.
        let mut band = String::new();
        for p in curve {
            let _ = write!(
                band,
                "{:.2},{:.2} ",
                to_x(p.episode as f64),
                to_y(p.mean + p.std)
            );
        }
        for p in curve.iter().rev() {
            let _ = write!(
                band,
                "{:.2},{:.2} ",
                to_x(p.episode as f64),
                to_y(p.mean - p.std)
            );
        }
        let _ = writeln!(
            svg,
            "<polygon points=\"{}\" fill=\"#4477aa\" fill-opacity=\"0.25\" stroke=\"none\"/>",
            band.trim_end()
        );

        let mut line = String::new();
        for p in curve {
            let _ = write!(line, "{:.2},{:.2} ", to_x(p.episode as f64), to_y(p.mean));
        }
        let _ = writeln!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#4477aa\" stroke-width=\"2\"/>",
            line.trim_end()
        );

        // Axes with min/max labels.
        let x0 = MARGIN_LEFT;
        let x1 = SVG_WIDTH - MARGIN_RIGHT;
        let y0 = SVG_HEIGHT - MARGIN_BOTTOM;
        let y1 = MARGIN_TOP;
        let _ = writeln!(
            svg,
            "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>"
        );
        let _ = writeln!(
            svg,
            "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>"
        );
        let _ = writeln!(
            svg,
            "<text x=\"{x0}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
            y0 + 20.0,
            x_min
        );
        let _ = writeln!(
            svg,
            "<text x=\"{x1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
            y0 + 20.0,
            x_max
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{:.1}</text>",
            x0 - 8.0,
            y0 + 5.0,
            y_min
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{:.1}</text>",
            x0 - 8.0,
            y1 + 5.0,
            y_max
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">episode</text>",
            (x0 + x1) / 2.0,
            SVG_HEIGHT - 12.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"18\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {:.1})\">episode reward</text>",
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0
        );
    }

    svg.push_str("</svg>\n");
    svg
}

fn escape_xml(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
