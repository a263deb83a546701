//! Coarse-to-fine double voting: per-point joint fields are averaged into a
//! single axis estimate, then re-averaged over the subset of points whose
//! distance to the coarse axis lies within a median-scaled band.

use crate::error::{CaptError, Result};
use crate::geometry::{point_to_line_distance, v3, Line3, UnitVec3, Vec3};
use crate::model::{JointFields, Prediction};

/// Minimum norm of the averaged direction; below this the vote is treated as
/// antipodal cancellation.
pub const DIRECTION_VOTE_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct VotingConfig {
    /// Lower multiplier of the median axis distance.
    pub omega0: f64,
    /// Upper multiplier of the median axis distance (may be infinite).
    pub omega1: f64,
}

impl Default for VotingConfig {
    fn default() -> Self {
        VotingConfig { omega0: 0.5, omega1: 1.5 }
    }
}

impl VotingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega0 >= 0.0 && self.omega0 < self.omega1) {
            return Err(CaptError::Config(format!(
                "voting band requires 0 <= omega0 < omega1, got [{}, {}]",
                self.omega0, self.omega1
            )));
        }
        Ok(())
    }
}

/// Aggregated joint estimate.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct VotedJoint {
    pub direction: UnitVec3,
    pub pivot: Vec3,
    pub state: f64,
    /// Number of points that contributed to the averages.
    pub participant_count: usize,
    /// True when the fine vote found no points in the band and fell back to
    /// the coarse result.
    pub fallback: bool,
}

impl VotedJoint {
    pub fn axis(&self) -> Line3 {
        Line3::new(self.direction, self.pivot)
    }
}

/// Coarse and fine estimates for one joint.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct DoubleVote {
    pub coarse: VotedJoint,
    pub fine: VotedJoint,
}

/// Lower median: for even counts the smaller of the two middle elements.
pub(crate) fn lower_median(values: &[f64]) -> f64 {
    debug_assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    sorted[(sorted.len() - 1) / 2]
}

/// Average the fields over `idx`, renormalizing the direction; pivot is the
/// mean of per-point reconstructions p + dist * pdir.
fn vote_subset(points: &[Vec3], fields: &JointFields, idx: &[usize]) -> Result<VotedJoint> {
    debug_assert!(!idx.is_empty());
    let inv = 1.0 / idx.len() as f64;
    let mut dir_sum = Vec3::ZERO;
    let mut pivot_sum = Vec3::ZERO;
    let mut state_sum = 0.0;
    for &i in idx {
        let d = fields.dir.row(i);
        dir_sum = dir_sum + v3(d[0], d[1], d[2]);
        let pd = fields.pdir.row(i);
        let dist = fields.dist.data()[i];
        pivot_sum = pivot_sum + points[i] + v3(pd[0], pd[1], pd[2]).scale(dist);
        state_sum += fields.state.data()[i];
    }
    let dir_mean = dir_sum.scale(inv);
    if dir_mean.norm() < DIRECTION_VOTE_EPS {
        return Err(CaptError::Degenerate(format!(
            "direction votes cancel (mean norm {:.3e})",
            dir_mean.norm()
        )));
    }
    Ok(VotedJoint {
        direction: UnitVec3::normalize(dir_mean)?,
        pivot: pivot_sum.scale(inv),
        state: state_sum * inv,
        participant_count: idx.len(),
        fallback: false,
    })
}

fn check_sizes(points: &[Vec3], fields: &JointFields) -> Result<()> {
    let n = points.len();
    if n == 0 {
        return Err(CaptError::Config("cannot vote on an empty cloud".to_string()));
    }
    if fields.dir.rows() != n
        || fields.pdir.rows() != n
        || fields.dist.numel() != n
        || fields.state.numel() != n
    {
        return Err(CaptError::Config(format!(
            "field sizes do not match cloud of {n} points"
        )));
    }
    Ok(())
}

/// Mean of every per-point field over the whole cloud.
pub fn coarse_vote(points: &[Vec3], fields: &JointFields) -> Result<VotedJoint> {
    check_sizes(points, fields)?;
    let idx: Vec<usize> = (0..points.len()).collect();
    vote_subset(points, fields, &idx)
}

/// Re-vote over the points whose distance to the coarse axis lies in
/// [omega0 * m, omega1 * m], m the lower median of those distances. An empty
/// band falls back to the coarse result with the fallback flag set.
pub fn fine_vote(
    points: &[Vec3],
    fields: &JointFields,
    coarse: &VotedJoint,
    cfg: &VotingConfig,
) -> Result<VotedJoint> {
    check_sizes(points, fields)?;
    cfg.validate()?;
    let dists: Vec<f64> = points
        .iter()
        .map(|&p| point_to_line_distance(p, coarse.pivot, coarse.direction))
        .collect();
    let m = lower_median(&dists);
    let lo = cfg.omega0 * m;
    let hi = cfg.omega1 * m;
    let idx: Vec<usize> = (0..points.len())
        .filter(|&i| dists[i] >= lo && dists[i] <= hi)
        .collect();
    if idx.is_empty() {
        let mut fallen = coarse.clone();
        fallen.fallback = true;
        return Ok(fallen);
    }
    vote_subset(points, fields, &idx)
}

/// Coarse then fine vote for every joint channel in the prediction.
pub fn double_vote(
    points: &[Vec3],
    pred: &Prediction,
    cfg: &VotingConfig,
) -> Result<Vec<DoubleVote>> {
    cfg.validate()?;
    pred.joints
        .iter()
        .map(|fields| {
            let coarse = coarse_vote(points, fields)?;
            let fine = fine_vote(points, fields, &coarse, cfg)?;
            Ok(DoubleVote { coarse, fine })
        })
        .collect()
}
