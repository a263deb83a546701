use super::SampleRecord;
use crate::error::{CaptError, Result};
use crate::geometry::{project_point_to_line, Line3, Vec3};

/// Points closer than this to the joint axis get no pdir supervision.
pub const PDIR_VALID_EPS: f64 = 1e-9;

/// Per-point supervision for one joint channel; vectors flattened row-major.
#[derive(Clone, Debug)]
pub struct JointTargets {
    /// Joint direction broadcast to every point, n x 3.
    pub dir: Vec<f64>,
    /// Perpendicular point-to-axis distance, n.
    pub dist: Vec<f64>,
    /// Unit vector from the point toward its projection on the axis, n x 3.
    pub pdir: Vec<f64>,
    /// Joint state broadcast to every point, n.
    pub state: Vec<f64>,
    /// False where pdir is undefined (point on the axis) or the joint is
    /// inactive padding.
    pub valid: Vec<bool>,
}

impl JointTargets {
    fn zeros(n: usize) -> Self {
        JointTargets {
            dir: vec![0.0; 3 * n],
            dist: vec![0.0; n],
            pdir: vec![0.0; 3 * n],
            state: vec![0.0; n],
            valid: vec![false; n],
        }
    }
}

/// Supervision for all joint channels, padded with zeroed targets up to the
/// category maximum so decoder output shapes stay fixed.
#[derive(Clone, Debug)]
pub struct PointwiseTargets {
    pub n: usize,
    pub active_joints: usize,
    pub joints: Vec<JointTargets>,
}

/// Deterministic unit vector perpendicular to `d`, for points where the
/// projection direction is undefined.
fn fallback_pdir(d: Vec3) -> Vec3 {
    let e = if d.x.abs() < 0.9 {
        Vec3 { x: 1.0, y: 0.0, z: 0.0 }
    } else {
        Vec3 { x: 0.0, y: 1.0, z: 0.0 }
    };
    let c = d.cross(e);
    c.scale(1.0 / c.norm())
}

pub fn compute_pointwise_targets(rec: &SampleRecord, n_joints_max: usize) -> Result<PointwiseTargets> {
    if rec.active_joint_count > n_joints_max {
        return Err(CaptError::Config(format!(
            "record has {} active joints, channel budget is {n_joints_max}",
            rec.active_joint_count
        )));
    }
    let n = rec.n();
    let mut joints = Vec::with_capacity(n_joints_max);
    for k in 0..n_joints_max {
        if k >= rec.active_joint_count {
            joints.push(JointTargets::zeros(n));
            continue;
        }
        let spec = &rec.joints[k];
        let axis = Line3 { direction: spec.direction, pivot: spec.pivot };
        let d = spec.direction.get();
        let mut t = JointTargets::zeros(n);
        for (i, &p) in rec.points.iter().enumerate() {
            t.dir[3 * i] = d.x;
            t.dir[3 * i + 1] = d.y;
            t.dir[3 * i + 2] = d.z;
            t.state[i] = spec.state;
            match project_point_to_line(p, &axis) {
                Ok((_, pdir, dist)) if dist >= PDIR_VALID_EPS => {
                    let u = pdir.get();
                    t.pdir[3 * i] = u.x;
                    t.pdir[3 * i + 1] = u.y;
                    t.pdir[3 * i + 2] = u.z;
                    t.dist[i] = dist;
                    t.valid[i] = true;
                }
                _ => {
                    let u = fallback_pdir(d);
                    t.pdir[3 * i] = u.x;
                    t.pdir[3 * i + 1] = u.y;
                    t.pdir[3 * i + 2] = u.z;
                    t.dist[i] = 0.0;
                    t.valid[i] = false;
                }
            }
        }
        joints.push(t);
    }
    Ok(PointwiseTargets { n, active_joints: rec.active_joint_count, joints })
}
