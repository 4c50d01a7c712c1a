//! Self-contained SVG renderings of a tube: per state dimension, the band
//! between lower and upper faces over time, with the reference trajectory
//! drawn on top. Output is plain text built deterministically, so identical
//! inputs yield byte-identical files.

use crate::boundprop::ReachTube;
use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;

struct Frame {
    t_max: f64,
    y_min: f64,
    y_span: f64,
}

impl Frame {
    fn x(&self, t: f64) -> f64 {
        MARGIN + t / self.t_max * (WIDTH - 2.0 * MARGIN)
    }

    fn y(&self, v: f64) -> f64 {
        HEIGHT - MARGIN - (v - self.y_min) / self.y_span * (HEIGHT - 2.0 * MARGIN)
    }
}

fn push_point(out: &mut String, x: f64, y: f64) {
    if !out.is_empty() {
        out.push(' ');
    }
    let _ = write!(out, "{x:.2},{y:.2}");
}

/// One dimension of a tube as an SVG figure.
///
/// Every face of that dimension must be finite; a reference, when given,
/// must share the tube's horizon.
pub fn tube_svg(tube: &ReachTube, reference: Option<&Trajectory>, dim: usize) -> Result<String> {
    tube.validate()?;
    if dim >= tube.state_dim() {
        return Err(Error::dimension(format!(
            "dimension {dim} out of range for a {}-dimensional tube",
            tube.state_dim()
        )));
    }
    let lows: Vec<f64> = tube.boxes.iter().map(|b| b.lower()[dim]).collect();
    let highs: Vec<f64> = tube.boxes.iter().map(|b| b.upper()[dim]).collect();
    if lows.iter().chain(highs.iter()).any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!(
            "dimension {dim} has unbounded faces and cannot be drawn"
        )));
    }
    let ref_values: Option<Vec<f64>> = match reference {
        Some(traj) => {
            if traj.states.len() != tube.boxes.len() || dim >= traj.state_dim() {
                return Err(Error::dimension(
                    "reference does not match the tube's horizon and dimension".to_string(),
                ));
            }
            Some(traj.states.iter().map(|s| s[dim]).collect())
        }
        None => None,
    };

    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for v in lows.iter().chain(highs.iter()).chain(ref_values.iter().flatten()) {
        y_min = y_min.min(*v);
        y_max = y_max.max(*v);
    }
    let pad = 0.05 * (y_max - y_min).max(1e-9);
    let frame = Frame {
        t_max: (tube.boxes.len() - 1).max(1) as f64,
        y_min: y_min - pad,
        y_span: (y_max - y_min) + 2.0 * pad,
    };

    let mut band = String::new();
    for (t, v) in highs.iter().enumerate() {
        push_point(&mut band, frame.x(t as f64), frame.y(*v));
    }
    for (t, v) in lows.iter().enumerate().rev() {
        push_point(&mut band, frame.x(t as f64), frame.y(*v));
    }

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r##"<polygon points="{band}" fill="#a6cbe3" stroke="#5b8db8" stroke-width="1" fill-opacity="0.75"/>"##
    );
    if let Some(values) = &ref_values {
        let mut line = String::new();
        for (t, v) in values.iter().enumerate() {
            push_point(&mut line, frame.x(t as f64), frame.y(*v));
        }
        let _ = writeln!(
            svg,
            r##"<polyline points="{line}" fill="none" stroke="#c44e52" stroke-width="1.5"/>"##
        );
    }
    let _ = writeln!(
        svg,
        r##"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="#444" stroke-width="1"/>"##,
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    );
    let label = |svg: &mut String, x: f64, y: f64, anchor: &str, text: String| {
        let _ = writeln!(
            svg,
            r##"<text x="{x:.2}" y="{y:.2}" font-family="sans-serif" font-size="12" text-anchor="{anchor}" fill="#222">{text}</text>"##
        );
    };
    label(&mut svg, MARGIN - 6.0, frame.y(y_min) + 4.0, "end", format!("{y_min:.3}"));
    label(&mut svg, MARGIN - 6.0, frame.y(y_max) + 4.0, "end", format!("{y_max:.3}"));
    label(&mut svg, MARGIN, HEIGHT - MARGIN + 16.0, "middle", "t=0".to_string());
    label(
        &mut svg,
        WIDTH - MARGIN,
        HEIGHT - MARGIN + 16.0,
        "middle",
        format!("t={}", tube.boxes.len() - 1),
    );
    label(&mut svg, MARGIN, MARGIN - 10.0, "start", format!("x{dim}"));
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Writes one figure per drawable dimension into `dir` as `tube_x<j>.svg`,
/// skipping dimensions with unbounded faces. Returns the written paths.
pub fn write_tube_plots(
    dir: &Path,
    tube: &ReachTube,
    reference: Option<&Trajectory>,
) -> Result<Vec<PathBuf>> {
    tube.validate()?;
    let mut written = Vec::new();
    for dim in 0..tube.state_dim() {
        let drawable = tube
            .boxes
            .iter()
            .all(|b| b.lower()[dim].is_finite() && b.upper()[dim].is_finite());
        if !drawable {
            continue;
        }
        let svg = tube_svg(tube, reference, dim)?;
        let path = dir.join(format!("tube_x{dim}.svg"));
        std::fs::write(&path, svg)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        written.push(path);
    }
    Ok(written)
}
