//! Single-sample inference: read a cloud, run the model, vote, and emit a
//! JSON joint record plus an optional PLY visualization.

use super::config::RunConfig;
use crate::error::{CaptError, Result};
use crate::geometry::Line3;
use crate::model::Model;
use crate::ply::{write_ply, AxisMarker};
use crate::synthdata::{category, read_sample, JointSpec};
use crate::voting::{double_vote, DoubleVote};
use std::path::Path;

/// Minimum input cloud size for inference.
pub const MIN_INFER_POINTS: usize = 64;

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct InferRecord {
    pub category: String,
    pub n_points: usize,
    /// Per joint: coarse and fine votes, each with direction / pivot / state
    /// / participant_count / fallback.
    pub joints: Vec<DoubleVote>,
    /// Ground-truth joints when the input file provides them.
    pub ground_truth: Vec<JointSpec>,
    /// Points per predicted segment label.
    pub segment_sizes: Vec<usize>,
}

/// Runs inference on one stored sample.
pub fn infer(cfg: &RunConfig, input: &Path, ply_out: Option<&Path>) -> Result<InferRecord> {
    cfg.validate()?;
    let spec = category(&cfg.category)?;
    let (rec, _targets) = read_sample(input, spec)?;
    if rec.n() < MIN_INFER_POINTS {
        return Err(CaptError::Config(format!(
            "input cloud has {} points; inference requires at least {}",
            rec.n(),
            MIN_INFER_POINTS
        )));
    }
    if !cfg.checkpoint.exists() {
        return Err(CaptError::Config(format!(
            "checkpoint {} does not exist",
            cfg.checkpoint.display()
        )));
    }
    let model = Model::load(&cfg.checkpoint)?;
    let pred = model.predict(&rec.points)?;
    let votes = double_vote(&rec.points, &pred, &cfg.voting)?;
    let labels = pred.labels();
    let mut segment_sizes = vec![0usize; model.cfg.n_links];
    for &l in &labels {
        if (l as usize) < segment_sizes.len() {
            segment_sizes[l as usize] += 1;
        }
    }

    if let Some(ply_path) = ply_out {
        // Axis segments sized to the cloud extent.
        let (mut lo, mut hi) = (rec.points[0], rec.points[0]);
        for p in &rec.points {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            lo.z = lo.z.min(p.z);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
            hi.z = hi.z.max(p.z);
        }
        let half_extent = 0.5 * (hi - lo).norm().max(1e-6);
        let predicted: Vec<AxisMarker> = votes
            .iter()
            .map(|v| AxisMarker { axis: v.fine.axis(), half_extent })
            .collect();
        let gt: Vec<AxisMarker> = rec
            .joints
            .iter()
            .map(|j| AxisMarker {
                axis: Line3::new(j.direction, j.pivot),
                half_extent,
            })
            .collect();
        write_ply(ply_path, &rec.points, &labels, &predicted, &gt)?;
    }

    Ok(InferRecord {
        category: cfg.category.clone(),
        n_points: rec.n(),
        joints: votes,
        ground_truth: rec.joints.clone(),
        segment_sizes,
    })
}
