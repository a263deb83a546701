//! Split evaluation: forward + double voting on every sample, aggregated
//! into coarse and fine reports (the coarse column is the voting ablation).

use super::config::RunConfig;
use crate::error::{CaptError, Result};
use crate::metrics::{
    aggregate, direction_error_deg, position_error, seg_metrics, state_error_deg, ApThresholds,
    EvalReport, JointErrors, SampleEval,
};
use crate::model::Model;
use crate::synthdata::{load_split, read_manifest, SampleRecord};
use crate::voting::{double_vote, VotedJoint};
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct SplitEval {
    pub split: String,
    pub coarse: EvalReport,
    pub fine: EvalReport,
    /// Fine votes that fell back to coarse, across all samples and joints.
    pub fallbacks: usize,
    /// Wall-clock timing for the split; shown in the text table but kept out
    /// of the JSON report so repeated runs stay byte-identical.
    #[serde(skip)]
    pub wall_seconds: f64,
}

fn joint_errors(vote: &VotedJoint, gt: &crate::synthdata::JointSpec) -> JointErrors {
    JointErrors {
        dir_deg: direction_error_deg(vote.direction, gt.direction),
        pos: position_error(&vote.axis(), &crate::geometry::Line3::new(gt.direction, gt.pivot)),
        state_deg: state_error_deg(vote.state, gt.state),
    }
}

/// Evaluates the checkpoint on one split of the dataset.
pub fn evaluate(cfg: &RunConfig, split: &str) -> Result<SplitEval> {
    cfg.validate()?;
    if !cfg.checkpoint.exists() {
        return Err(CaptError::Config(format!(
            "checkpoint {} does not exist",
            cfg.checkpoint.display()
        )));
    }
    let manifest = read_manifest(&cfg.dataset_dir.join("manifest.json"))?;
    if manifest.category != cfg.category {
        return Err(CaptError::Config(format!(
            "dataset is category '{}' but run config says '{}'",
            manifest.category, cfg.category
        )));
    }
    let set = load_split(&cfg.dataset_dir, &manifest, split)?;
    if set.is_empty() {
        return Err(CaptError::Config(format!("split '{split}' is empty")));
    }
    let model = Model::load(&cfg.checkpoint)?;
    evaluate_set(&model, cfg, split, &set.iter().map(|(r, _)| r.clone()).collect::<Vec<_>>())
}

/// Evaluates a model over records already in memory.
pub fn evaluate_set(
    model: &Model,
    cfg: &RunConfig,
    split: &str,
    records: &[SampleRecord],
) -> Result<SplitEval> {
    if records.is_empty() {
        return Err(CaptError::Config("cannot evaluate zero records".to_string()));
    }
    let started = std::time::Instant::now();
    let mut coarse_rows = Vec::with_capacity(records.len());
    let mut fine_rows = Vec::with_capacity(records.len());
    let mut fallbacks = 0usize;
    for rec in records {
        let pred = model.predict(&rec.points)?;
        let votes = double_vote(&rec.points, &pred, &cfg.voting)?;
        let labels = pred.labels();
        let (pa, miou) = seg_metrics(&labels, &rec.labels)?;
        let n_joints = votes.len().min(rec.joints.len());
        let mut coarse_j = Vec::with_capacity(n_joints);
        let mut fine_j = Vec::with_capacity(n_joints);
        for k in 0..n_joints {
            coarse_j.push(joint_errors(&votes[k].coarse, &rec.joints[k]));
            fine_j.push(joint_errors(&votes[k].fine, &rec.joints[k]));
            if votes[k].fine.fallback {
                fallbacks += 1;
            }
        }
        coarse_rows.push(SampleEval { pa, miou, joints: coarse_j });
        fine_rows.push(SampleEval { pa, miou, joints: fine_j });
    }
    let th = ApThresholds::default();
    Ok(SplitEval {
        split: split.to_string(),
        coarse: aggregate(&coarse_rows, &th)?,
        fine: aggregate(&fine_rows, &th)?,
        fallbacks,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

impl SplitEval {
    pub fn to_table(&self) -> String {
        let per_sample = self.wall_seconds / self.coarse.samples.max(1) as f64;
        format!(
            "split: {}   ({:.2} s total, {:.3} s/sample, {} fine-vote fallbacks)\n\n\
             coarse voting\n{}\nfine voting\n{}",
            self.split,
            self.wall_seconds,
            per_sample,
            self.fallbacks,
            self.coarse.to_table(),
            self.fine.to_table()
        )
    }
}

/// Writes `<split>_eval.json` and `<split>_eval.txt` under `report_dir`.
pub fn write_reports(report_dir: &Path, eval: &SplitEval) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(report_dir).map_err(|e| CaptError::io(report_dir, e))?;
    let json_path = report_dir.join(format!("{}_eval.json", eval.split));
    let txt_path = report_dir.join(format!("{}_eval.txt", eval.split));
    let mut json = serde_json::to_string_pretty(eval)
        .map_err(|e| CaptError::Format(format!("report serialization: {e}")))?;
    json.push('\n');
    std::fs::write(&json_path, json).map_err(|e| CaptError::io(&json_path, e))?;
    std::fs::write(&txt_path, eval.to_table()).map_err(|e| CaptError::io(&txt_path, e))?;
    Ok((json_path, txt_path))
}
