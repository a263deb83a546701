//! Training objective: segmentation cross entropy, per-joint field losses
//! masked to each joint's child-link points, and a motion-consistency term
//! that rotates ground-truth child points about the predicted axis and
//! penalizes the displacement from the ground-truth rotation.

use crate::error::{CaptError, Result};
use crate::geometry::Vec3;
use crate::model::ForwardVars;
use crate::synthdata::{PointwiseTargets, SampleRecord};
use capt_tensor::{Tape, Tensor, TensorError, Var};

/// Term weights in loss order (seg, dir, pdir, dist, state, motion).
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub seg: f64,
    pub dir: f64,
    pub pdir: f64,
    pub dist: f64,
    pub state: f64,
    pub motion: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { seg: 1.0, dir: 1.0, pdir: 1.0, dist: 1.0, state: 1.0, motion: 0.1 }
    }
}

impl LossWeights {
    pub fn without_motion(mut self) -> Self {
        self.motion = 0.0;
        self
    }
}

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct MotionConfig {
    /// Probe rotation angle in radians.
    pub alpha: f64,
}

impl Default for MotionConfig {
    fn default() -> Self {
        MotionConfig { alpha: std::f64::consts::FRAC_PI_2 }
    }
}

#[derive(Debug)]
pub struct LossVars {
    pub seg: Var,
    pub dir: Var,
    pub pdir: Var,
    pub dist: Var,
    pub state: Var,
    pub motion: Var,
    pub total: Var,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LossValues {
    pub seg: f64,
    pub dir: f64,
    pub pdir: f64,
    pub dist: f64,
    pub state: f64,
    pub motion: f64,
    pub total: f64,
}

impl LossValues {
    pub fn extract(tape: &Tape, vars: &LossVars) -> LossValues {
        let get = |v: Var| tape.value(v).data()[0];
        LossValues {
            seg: get(vars.seg),
            dir: get(vars.dir),
            pdir: get(vars.pdir),
            dist: get(vars.dist),
            state: get(vars.state),
            motion: get(vars.motion),
            total: get(vars.total),
        }
    }
}

/// Tags tensor faults (NaN/Inf surfacing mid-term) with the loss term name.
fn in_term<T>(term: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        CaptError::Tensor(TensorError::NonFinite { op }) => CaptError::TrainingFault {
            term: term.to_string(),
            what: format!("non-finite value in op {op}"),
        },
        other => other,
    })
}

/// Mean of `per_point` over the rows where mask is 1; None when the mask is
/// empty.
pub(crate) fn masked_mean(tape: &mut Tape, per_point: Var, mask: &[f64]) -> Result<Option<Var>> {
    let count: f64 = mask.iter().sum();
    if count == 0.0 {
        return Ok(None);
    }
    let m = tape.constant(Tensor::from_vec(vec![mask.len()], mask.to_vec())?)?;
    let picked = tape.mul(per_point, m)?;
    let s = tape.sum(picked)?;
    Ok(Some(tape.scale(s, 1.0 / count)?))
}

/// Per-point (1 - cos) between unit rows of pred and gt, as a [n] vector.
fn one_minus_cos(tape: &mut Tape, pred: Var, gt: Var) -> Result<Var> {
    let prod = tape.mul(pred, gt)?;
    let dots = tape.sum_axis(prod, 1)?;
    let n = tape.value(dots).numel();
    let ones = tape.constant(Tensor::from_vec(vec![n], vec![1.0; n])?)?;
    Ok(tape.sub(ones, dots)?)
}

/// Mean displacement between rotating `child` (constant, m x 3) about the
/// predicted axis vs the ground-truth axis, both by `alpha` radians.
/// Distances are per-point Euclidean norms, not squared.
/// Mean displacement between the child cloud rotated a quarter-turn (or any
/// fixed alpha) about the predicted axis vs the reference axis. Zero iff both
/// rotations agree on every child point.
pub fn motion_term(
    tape: &mut Tape,
    child: Var,
    dir: Var,
    pivot: Var,
    gt_dir: Var,
    gt_pivot: Var,
    alpha: f64,
) -> Result<Var> {
    let pred_rot = tape.rodrigues(child, dir, pivot, alpha)?;
    let gt_rot = tape.rodrigues(child, gt_dir, gt_pivot, alpha)?;
    let diff = tape.sub(pred_rot, gt_rot)?;
    let norms = tape.l2norm_rows(diff)?;
    Ok(tape.mean(norms)?)
}

/// Average scalar terms and divide by the contributing-joint count; zero
/// constant when nothing contributes.
fn average_terms(tape: &mut Tape, terms: Vec<Var>) -> Result<Var> {
    if terms.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0))?);
    }
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    Ok(tape.scale(acc, 1.0 / terms.len() as f64)?)
}

fn vec3_const(tape: &mut Tape, v: Vec3) -> Result<Var> {
    Ok(tape.constant(Tensor::from_vec(vec![3], vec![v.x, v.y, v.z])?)?)
}

/// Normalizes a [3] vector on the tape (via a 1 x 3 row detour).
fn normalize3(tape: &mut Tape, v: Var) -> Result<Var> {
    let row = tape.reshape(v, vec![1, 3])?;
    let unit = tape.normalize_rows(row)?;
    Ok(tape.reshape(unit, vec![3])?)
}

/// Builds every loss term on the tape. Field losses cover each joint's
/// child-link points (pdir and dist additionally require the validity mask);
/// terms average over the joints that have any supervised points. The motion
/// term aggregates each predicted field over all n points into a single axis
/// (mean direction renormalized; pivot as the mean of per-point pivot
/// reconstructions) and compares probe rotations of the ground-truth child
/// points. A zero motion weight skips that branch entirely.
pub fn build_losses(
    tape: &mut Tape,
    fv: &ForwardVars,
    rec: &SampleRecord,
    targets: &PointwiseTargets,
    weights: &LossWeights,
    motion_cfg: &MotionConfig,
) -> Result<LossVars> {
    let n = rec.n();
    if targets.n != n || rec.labels.len() != n {
        return Err(CaptError::Config("targets/labels do not match cloud size".to_string()));
    }
    if rec.active_joint_count > fv.dir.len() || rec.active_joint_count > targets.joints.len() {
        return Err(CaptError::Config(format!(
            "record has {} joints, model/targets provide {}/{}",
            rec.active_joint_count,
            fv.dir.len(),
            targets.joints.len()
        )));
    }

    let seg = in_term("seg", {
        let labels: Vec<usize> = rec.labels.iter().map(|&l| l as usize).collect();
        (|| {
            let ce = tape.cross_entropy_rows(fv.seg_logits, &labels)?;
            Ok(tape.mean(ce)?)
        })()
    })?;

    let mut dir_terms = Vec::new();
    let mut pdir_terms = Vec::new();
    let mut dist_terms = Vec::new();
    let mut state_terms = Vec::new();
    let mut motion_terms = Vec::new();

    for k in 0..rec.active_joint_count {
        let jt = &targets.joints[k];
        // Every point votes for every joint at inference, so every point's
        // fields are supervised; pdir alone excludes points where the target
        // is undefined (on the axis).
        let all: Vec<f64> = vec![1.0; n];
        let valid: Vec<f64> = jt.valid.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();

        let dir_gt = tape.constant(Tensor::matrix(n, 3, jt.dir.clone())?)?;
        let t = in_term("dir", {
            (|| {
                let omc = one_minus_cos(tape, fv.dir[k], dir_gt)?;
                masked_mean(tape, omc, &all)
            })()
        })?;
        if let Some(t) = t {
            dir_terms.push(t);
        }

        let pdir_gt = tape.constant(Tensor::matrix(n, 3, jt.pdir.clone())?)?;
        let t = in_term("pdir", {
            (|| {
                let omc = one_minus_cos(tape, fv.pdir[k], pdir_gt)?;
                masked_mean(tape, omc, &valid)
            })()
        })?;
        if let Some(t) = t {
            pdir_terms.push(t);
        }

        let dist_gt = tape.constant(Tensor::from_vec(vec![n], jt.dist.clone())?)?;
        let t = in_term("dist", {
            (|| {
                let diff = tape.sub(fv.dist[k], dist_gt)?;
                let sq = tape.mul(diff, diff)?;
                masked_mean(tape, sq, &all)
            })()
        })?;
        if let Some(t) = t {
            dist_terms.push(t);
        }

        let state_gt = tape.constant(Tensor::from_vec(vec![n], jt.state.clone())?)?;
        let t = in_term("state", {
            (|| {
                let diff = tape.sub(fv.state[k], state_gt)?;
                let a = tape.abs(diff)?;
                masked_mean(tape, a, &all)
            })()
        })?;
        if let Some(t) = t {
            state_terms.push(t);
        }

        if weights.motion != 0.0 {
            let child_pts: Vec<Vec3> = rec
                .points
                .iter()
                .zip(&rec.labels)
                .filter(|(_, &l)| l as usize == k + 1)
                .map(|(&p, _)| p - fv.centroid)
                .collect();
            if !child_pts.is_empty() {
                let t = in_term("motion", {
                    (|| {
                        let mut data = Vec::with_capacity(child_pts.len() * 3);
                        for p in &child_pts {
                            data.extend_from_slice(&[p.x, p.y, p.z]);
                        }
                        let child_var =
                            tape.constant(Tensor::matrix(child_pts.len(), 3, data)?)?;
                        let dir_mean = tape.mean_axis(fv.dir[k], 0)?;
                        let dir_unit = normalize3(tape, dir_mean)?;
                        let offsets = tape.mul_col(fv.pdir[k], fv.dist[k])?;
                        let pivots = tape.add(fv.points, offsets)?;
                        let pivot = tape.mean_axis(pivots, 0)?;
                        let gt_dir = vec3_const(tape, rec.joints[k].direction.get())?;
                        let gt_pivot = vec3_const(tape, rec.joints[k].pivot - fv.centroid)?;
                        motion_term(tape, child_var, dir_unit, pivot, gt_dir, gt_pivot, motion_cfg.alpha)
                    })()
                })?;
                motion_terms.push(t);
            }
        }
    }

    let dir = average_terms(tape, dir_terms)?;
    let pdir = average_terms(tape, pdir_terms)?;
    let dist = average_terms(tape, dist_terms)?;
    let state = average_terms(tape, state_terms)?;
    let motion = average_terms(tape, motion_terms)?;

    let mut total = tape.scale(seg, weights.seg)?;
    for (v, w) in [
        (dir, weights.dir),
        (pdir, weights.pdir),
        (dist, weights.dist),
        (state, weights.state),
        (motion, weights.motion),
    ] {
        let scaled = tape.scale(v, w)?;
        total = tape.add(total, scaled)?;
    }

    Ok(LossVars { seg, dir, pdir, dist, state, motion, total })
}
