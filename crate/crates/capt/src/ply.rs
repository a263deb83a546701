//! ASCII PLY export: the point cloud colored by segment label, plus axis
//! line segments (predicted joints red, ground-truth joints green).

use crate::error::{CaptError, Result};
use crate::geometry::{Line3, Vec3};
use std::fmt::Write as _;
use std::path::Path;

/// Fixed palette cycled by segment label (base link first).
const SEGMENT_COLORS: [[u8; 3]; 6] = [
    [120, 120, 120],
    [66, 133, 244],
    [244, 180, 0],
    [15, 157, 88],
    [171, 71, 188],
    [255, 112, 67],
];

const PRED_COLOR: [u8; 3] = [220, 30, 30];
const GT_COLOR: [u8; 3] = [30, 180, 30];

/// An axis to draw as a segment of `half_extent` on both sides of the pivot.
#[derive(Clone, Debug)]
pub struct AxisMarker {
    pub axis: Line3,
    pub half_extent: f64,
}

/// Renders the PLY text for a labeled cloud with predicted and ground-truth
/// axis markers.
pub fn render_ply(
    points: &[Vec3],
    labels: &[u8],
    predicted: &[AxisMarker],
    ground_truth: &[AxisMarker],
) -> Result<String> {
    if points.len() != labels.len() {
        return Err(CaptError::Config(format!(
            "points ({}) and labels ({}) differ in length",
            points.len(),
            labels.len()
        )));
    }
    let n_axis_vertices = 2 * (predicted.len() + ground_truth.len());
    let n_vertices = points.len() + n_axis_vertices;
    let n_edges = predicted.len() + ground_truth.len();

    let mut out = String::new();
    out.push_str("ply\n");
    out.push_str("format ascii 1.0\n");
    let _ = writeln!(out, "element vertex {n_vertices}");
    out.push_str("property float x\n");
    out.push_str("property float y\n");
    out.push_str("property float z\n");
    out.push_str("property uchar red\n");
    out.push_str("property uchar green\n");
    out.push_str("property uchar blue\n");
    let _ = writeln!(out, "element edge {n_edges}");
    out.push_str("property int vertex1\n");
    out.push_str("property int vertex2\n");
    out.push_str("end_header\n");

    for (p, &l) in points.iter().zip(labels) {
        let c = SEGMENT_COLORS[l as usize % SEGMENT_COLORS.len()];
        let _ = writeln!(out, "{} {} {} {} {} {}", p.x, p.y, p.z, c[0], c[1], c[2]);
    }
    let mut edges = Vec::with_capacity(n_edges);
    let mut cursor = points.len();
    for (markers, color) in [(predicted, PRED_COLOR), (ground_truth, GT_COLOR)] {
        for m in markers {
            let a = m.axis.at(-m.half_extent);
            let b = m.axis.at(m.half_extent);
            for p in [a, b] {
                let _ = writeln!(
                    out,
                    "{} {} {} {} {} {}",
                    p.x, p.y, p.z, color[0], color[1], color[2]
                );
            }
            edges.push((cursor, cursor + 1));
            cursor += 2;
        }
    }
    for (a, b) in edges {
        let _ = writeln!(out, "{a} {b}");
    }
    Ok(out)
}

/// Writes the PLY to disk.
pub fn write_ply(
    path: &Path,
    points: &[Vec3],
    labels: &[u8],
    predicted: &[AxisMarker],
    ground_truth: &[AxisMarker],
) -> Result<()> {
    let text = render_ply(points, labels, predicted, ground_truth)?;
    std::fs::write(path, text).map_err(|e| CaptError::io(path, e))
}
