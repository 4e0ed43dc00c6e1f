//! CSV and SVG renderings of a solution path.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use crate::error::Result;
use crate::homotopy::PathRecord;
use crate::nlp::ParametricNlp;

pub const SOLUTION_HEADER: [&str; 5] = ["theta", "time_index", "time_seconds", "variable", "value"];
pub const DIAGNOSTICS_HEADER: [&str; 5] =
    ["theta", "mu", "kkt_residual_inf", "min_singular_value", "newton_iters"];

fn io_error(e: csv::Error) -> std::io::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => e,
        other => std::io::Error::other(format!("{other:?}")),
    }
}

pub fn format_theta(theta: f64) -> String {
    format!("{theta:.6}")
}

/// One row per frame, time index `1..=T` and node, nodes in channel order.
pub fn write_solution<W: Write>(out: W, nlp: &ParametricNlp, path: &PathRecord) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SOLUTION_HEADER).map_err(io_error)?;
    let dt = nlp.params().dt;
    for entry in &path.entries {
        let traj = nlp.trajectory(&entry.x);
        let theta = format_theta(entry.theta);
        for j in 1..=nlp.params().steps {
            for (node, spec) in nlp.topology().nodes().iter().enumerate() {
                w.write_record([
                    theta.as_str(),
                    &j.to_string(),
                    &(j as f64 * dt).to_string(),
                    &spec.name,
                    &traj.values[node][j].to_string(),
                ])
                .map_err(io_error)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// One row per barrier subproblem of every frame.
pub fn write_diagnostics<W: Write>(out: W, path: &PathRecord) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(DIAGNOSTICS_HEADER).map_err(io_error)?;
    for entry in &path.entries {
        let theta = format_theta(entry.theta);
        for stage in &entry.stages {
            w.write_record([
                theta.clone(),
                format!("{:.6e}", stage.mu),
                format!("{:e}", stage.kkt_residual_inf),
                stage.min_singular_value.map_or(String::new(), |v| format!("{v:e}")),
                stage.newton_iters.to_string(),
            ])
            .map_err(io_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

const PANEL_WIDTH: f64 = 420.0;
const PANEL_HEIGHT: f64 = 220.0;
const MARGIN: f64 = 50.0;

fn frame_color(theta: f64) -> String {
    let t = theta.clamp(0.0, 1.0);
    let r = (40.0 + 200.0 * t).round() as u8;
    let b = (220.0 - 190.0 * t).round() as u8;
    format!("#{r:02x}40{b:02x}")
}

/// One panel per node with one curve per frame, coloured from blue (`θ = 0`)
/// to red (`θ = 1`).
pub fn render_svg(nlp: &ParametricNlp, path: &PathRecord) -> String {
    let nodes = nlp.topology().nodes();
    let steps = nlp.params().steps;
    let dt = nlp.params().dt;
    let trajectories: Vec<_> = path.entries.iter().map(|e| nlp.trajectory(&e.x)).collect();
    let height = nodes.len() as f64 * (PANEL_HEIGHT + MARGIN) + MARGIN;
    let width = PANEL_WIDTH + 2.0 * MARGIN;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (node, spec) in nodes.iter().enumerate() {
        let top = MARGIN + node as f64 * (PANEL_HEIGHT + MARGIN);
        let points = |traj: &crate::hydraulics::StateTrajectory| -> Vec<(f64, f64)> {
            (0..=steps)
                .filter(|&j| traj.values[node][j].is_finite())
                .map(|j| (j as f64 * dt, traj.values[node][j]))
                .collect()
        };
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for traj in &trajectories {
            for (_, v) in points(traj) {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        if !lo.is_finite() {
            lo = 0.0;
            hi = 1.0;
        }
        if hi - lo < 1e-9 {
            lo -= 0.5;
            hi += 0.5;
        }
        let t_end = steps as f64 * dt;
        let sx = |t: f64| MARGIN + PANEL_WIDTH * t / t_end;
        let sy = |v: f64| top + PANEL_HEIGHT * (hi - v) / (hi - lo);

        let _ = writeln!(svg, r#"<g id="panel-{}">"#, spec.name);
        let _ = writeln!(
            svg,
            r#"<rect x="{MARGIN}" y="{top}" width="{PANEL_WIDTH}" height="{PANEL_HEIGHT}" fill="none" stroke="black"/>"#
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-weight="bold">{}</text>"#,
            MARGIN,
            top - 8.0,
            spec.name
        );
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{hi:.3}</text>"#, 4.0, top + 10.0);
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{lo:.3}</text>"#, 4.0, top + PANEL_HEIGHT);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end">t = {t_end} s</text>"#,
            MARGIN + PANEL_WIDTH,
            top + PANEL_HEIGHT + 14.0
        );
        for (entry, traj) in path.entries.iter().zip(&trajectories) {
            let coords: Vec<String> = points(traj)
                .into_iter()
                .map(|(t, v)| format!("{:.2},{:.2}", sx(t), sy(v)))
                .collect();
            let _ = writeln!(
                svg,
                r#"<polyline data-theta="{}" fill="none" stroke="{}" stroke-width="1.2" points="{}"/>"#,
                format_theta(entry.theta),
                frame_color(entry.theta),
                coords.join(" ")
            );
        }
        let _ = writeln!(svg, "</g>");
    }
    let _ = writeln!(svg, "</svg>");
    svg
}

pub fn write_solution_file(file: &Path, nlp: &ParametricNlp, path: &PathRecord) -> Result<()> {
    write_solution(std::fs::File::create(file)?, nlp, path)
}

pub fn write_diagnostics_file(file: &Path, path: &PathRecord) -> Result<()> {
    write_diagnostics(std::fs::File::create(file)?, path)
}

pub fn write_svg_file(file: &Path, nlp: &ParametricNlp, path: &PathRecord) -> Result<()> {
    std::fs::write(file, render_svg(nlp, path))?;
    Ok(())
}
