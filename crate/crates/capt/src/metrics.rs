//! Evaluation metrics: per-point segmentation accuracy and mean IoU, joint
//! direction / position / state errors, and threshold-based AP aggregation.

use crate::error::{CaptError, Result};
use crate::geometry::{line_to_line_distance, Line3, UnitVec3};

/// AP thresholds. Direction and state are in degrees; position in scene
/// units. Position thresholds are named AP1 (0.01) and AP5 (0.05).
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct ApThresholds {
    pub dir_deg: (f64, f64),
    pub state_deg: (f64, f64),
    pub pos: (f64, f64),
}

impl Default for ApThresholds {
    fn default() -> Self {
        ApThresholds { dir_deg: (5.0, 10.0), state_deg: (5.0, 10.0), pos: (0.01, 0.05) }
    }
}

/// Errors of one predicted joint against ground truth.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct JointErrors {
    /// Directed angle between predicted and ground-truth direction, degrees.
    pub dir_deg: f64,
    /// Distance between the predicted and ground-truth axis lines.
    pub pos: f64,
    /// Absolute state error in degrees.
    pub state_deg: f64,
}

/// Per-sample evaluation row.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct SampleEval {
    pub pa: f64,
    pub miou: f64,
    pub joints: Vec<JointErrors>,
}

/// Aggregated metrics for one joint slot (or the pooled mean).
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct JointReport {
    pub med_dir_deg: f64,
    pub ap5_dir: f64,
    pub ap10_dir: f64,
    pub aed: f64,
    pub ap1_pos: f64,
    pub ap5_pos: f64,
    pub med_state_deg: f64,
    pub ap5_state: f64,
    pub ap10_state: f64,
    pub count: usize,
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct EvalReport {
    pub pa: f64,
    pub miou: f64,
    /// One row per joint slot.
    pub per_joint: Vec<JointReport>,
    /// Pooled over every (sample, joint) pair.
    pub mean: JointReport,
    pub samples: usize,
}

/// Per-point accuracy and mean IoU over the classes present in ground truth.
pub fn seg_metrics(pred: &[u8], gt: &[u8]) -> Result<(f64, f64)> {
    if pred.len() != gt.len() {
        return Err(CaptError::Config(format!(
            "label lengths differ: {} vs {}",
            pred.len(),
            gt.len()
        )));
    }
    if gt.is_empty() {
        return Err(CaptError::Config("empty label arrays".to_string()));
    }
    let n = gt.len();
    let correct = pred.iter().zip(gt).filter(|(p, g)| p == g).count();
    let pa = correct as f64 / n as f64;
    let mut classes: Vec<u8> = gt.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut iou_sum = 0.0;
    for &c in &classes {
        let mut inter = 0usize;
        let mut union = 0usize;
        for i in 0..n {
            let p = pred[i] == c;
            let g = gt[i] == c;
            if p && g {
                inter += 1;
            }
            if p || g {
                union += 1;
            }
        }
        iou_sum += inter as f64 / union as f64;
    }
    Ok((pa, iou_sum / classes.len() as f64))
}

/// Directed angle between unit vectors, in degrees. Axes carry a convention
/// of their own, so antiparallel counts as 180 degrees, not zero.
pub fn direction_error_deg(pred: UnitVec3, gt: UnitVec3) -> f64 {
    pred.get().dot(gt.get()).clamp(-1.0, 1.0).acos().to_degrees()
}

/// Minimum distance between the two (infinite) axis lines.
pub fn position_error(pred: &Line3, gt: &Line3) -> f64 {
    line_to_line_distance(pred, gt)
}

/// Absolute state error in degrees (states are stored in radians).
pub fn state_error_deg(pred: f64, gt: f64) -> f64 {
    (pred - gt).abs().to_degrees()
}

/// Fraction of errors strictly below the threshold.
pub fn fraction_below(errors: &[f64], threshold: f64) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    errors.iter().filter(|&&e| e < threshold).count() as f64 / errors.len() as f64
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn joint_report(rows: &[JointErrors], th: &ApThresholds) -> JointReport {
    let dir: Vec<f64> = rows.iter().map(|r| r.dir_deg).collect();
    let pos: Vec<f64> = rows.iter().map(|r| r.pos).collect();
    let state: Vec<f64> = rows.iter().map(|r| r.state_deg).collect();
    JointReport {
        med_dir_deg: mean(&dir),
        ap5_dir: fraction_below(&dir, th.dir_deg.0),
        ap10_dir: fraction_below(&dir, th.dir_deg.1),
        aed: mean(&pos),
        ap1_pos: fraction_below(&pos, th.pos.0),
        ap5_pos: fraction_below(&pos, th.pos.1),
        med_state_deg: mean(&state),
        ap5_state: fraction_below(&state, th.state_deg.0),
        ap10_state: fraction_below(&state, th.state_deg.1),
        count: rows.len(),
    }
}

/// Aggregate per-sample rows into a report. Per-joint columns use each
/// sample's joint at that slot; the mean row pools all (sample, joint) pairs.
pub fn aggregate(rows: &[SampleEval], th: &ApThresholds) -> Result<EvalReport> {
    if rows.is_empty() {
        return Err(CaptError::Config("cannot aggregate zero samples".to_string()));
    }
    let n_joints = rows.iter().map(|r| r.joints.len()).max().unwrap_or(0);
    let mut per_joint = Vec::with_capacity(n_joints);
    let mut pooled = Vec::new();
    for k in 0..n_joints {
        let slot: Vec<JointErrors> = rows
            .iter()
            .filter_map(|r| r.joints.get(k).copied())
            .collect();
        pooled.extend_from_slice(&slot);
        per_joint.push(joint_report(&slot, th));
    }
    let mean_row = if pooled.is_empty() {
        JointReport {
            med_dir_deg: 0.0,
            ap5_dir: 0.0,
            ap10_dir: 0.0,
            aed: 0.0,
            ap1_pos: 0.0,
            ap5_pos: 0.0,
            med_state_deg: 0.0,
            ap5_state: 0.0,
            ap10_state: 0.0,
            count: 0,
        }
    } else {
        joint_report(&pooled, th)
    };
    Ok(EvalReport {
        pa: mean(&rows.iter().map(|r| r.pa).collect::<Vec<_>>()),
        miou: mean(&rows.iter().map(|r| r.miou).collect::<Vec<_>>()),
        per_joint,
        mean: mean_row,
        samples: rows.len(),
    })
}

impl EvalReport {
    /// Aligned plain-text table: segmentation header plus one row per joint
    /// and a pooled mean row.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "samples: {}   PA: {:.4}   mIoU: {:.4}\n",
            self.samples, self.pa, self.miou
        ));
        out.push_str(&format!(
            "{:<6} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>10} {:>9} {:>9}\n",
            "joint",
            "MEDdir",
            "AP5dir",
            "AP10dir",
            "AED",
            "AP1pos",
            "AP5pos",
            "MEDstate",
            "AP5state",
            "AP10state"
        ));
        let mut row = |name: &str, r: &JointReport| {
            out.push_str(&format!(
                "{:<6} {:>8.3} {:>8.3} {:>8.3} {:>8.4} {:>8.3} {:>8.3} {:>10.3} {:>9.3} {:>9.3}\n",
                name,
                r.med_dir_deg,
                r.ap5_dir,
                r.ap10_dir,
                r.aed,
                r.ap1_pos,
                r.ap5_pos,
                r.med_state_deg,
                r.ap5_state,
                r.ap10_state
            ));
        };
        for (k, r) in self.per_joint.iter().enumerate() {
            row(&format!("{k}"), r);
        }
        row("mean", &self.mean);
        out
    }
}
