use super::categories::CategorySpec;
use crate::error::{CaptError, Result};
use crate::geometry::{Line3, Vec3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Axis-aligned box in the instance rest frame.
#[derive(Clone, Copy, Debug)]
pub struct Box3 {
    pub min: Vec3,
    pub max: Vec3,
}

impl Box3 {
    pub fn new(min: Vec3, max: Vec3) -> Result<Self> {
        if !(min.x < max.x && min.y < max.y && min.z < max.z) {
            return Err(CaptError::Degenerate(format!(
                "box has non-positive extent: min {min:?} max {max:?}"
            )));
        }
        Ok(Box3 { min, max })
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    /// Six rectangular faces as (origin, edge_u, edge_v, outward normal).
    pub fn faces(&self) -> [(Vec3, Vec3, Vec3, Vec3); 6] {
        let (lo, hi) = (self.min, self.max);
        let e = self.extent();
        let ex = Vec3 { x: e.x, y: 0.0, z: 0.0 };
        let ey = Vec3 { x: 0.0, y: e.y, z: 0.0 };
        let ez = Vec3 { x: 0.0, y: 0.0, z: e.z };
        [
            (lo, ey, ez, Vec3 { x: -1.0, y: 0.0, z: 0.0 }),
            (Vec3 { x: hi.x, ..lo }, ey, ez, Vec3 { x: 1.0, y: 0.0, z: 0.0 }),
            (lo, ex, ez, Vec3 { x: 0.0, y: -1.0, z: 0.0 }),
            (Vec3 { y: hi.y, ..lo }, ex, ez, Vec3 { x: 0.0, y: 1.0, z: 0.0 }),
            (lo, ex, ey, Vec3 { x: 0.0, y: 0.0, z: -1.0 }),
            (Vec3 { z: hi.z, ..lo }, ex, ey, Vec3 { x: 0.0, y: 0.0, z: 1.0 }),
        ]
    }
}

/// Joint in the instance rest frame; states pose child links relative to this.
#[derive(Clone, Copy, Debug)]
pub struct JointDef {
    pub axis: Line3,
    pub limits: (f64, f64),
}

/// One concrete object: rest-pose link boxes plus joint definitions.
#[derive(Clone, Debug)]
pub struct Instance {
    pub category: &'static CategorySpec,
    pub links: Vec<Box3>,
    pub joints: Vec<JointDef>,
}

impl Instance {
    /// The generator poses each non-base link by exactly one joint, so the
    /// kinematic tree must be depth 1 (every joint's parent is link 0).
    pub fn validate(&self) -> Result<()> {
        if self.links.len() != self.category.n_links {
            return Err(CaptError::Config(format!(
                "instance has {} links, category {} declares {}",
                self.links.len(),
                self.category.name,
                self.category.n_links
            )));
        }
        if self.joints.len() != self.category.n_joints {
            return Err(CaptError::Config(format!(
                "instance has {} joints, category {} declares {}",
                self.joints.len(),
                self.category.name,
                self.category.n_joints
            )));
        }
        for (k, &p) in self.category.parent_link.iter().enumerate() {
            if p != 0 {
                return Err(CaptError::Config(format!(
                    "joint {k} has parent link {p}; generator supports depth-1 trees only"
                )));
            }
        }
        Ok(())
    }
}

/// Uniform dimension jitter of +-30% around a nominal value.
pub(crate) fn vary(rng: &mut ChaCha8Rng, nominal: f64) -> f64 {
    nominal * (1.0 + 0.3 * rng.gen_range(-1.0..1.0))
}

/// Deterministic instance construction: same (category, seed) gives the same
/// geometry bit for bit.
pub fn build_instance(spec: &'static CategorySpec, seed: u64) -> Result<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inst = (spec.builder)(spec, &mut rng)?;
    inst.validate()?;
    Ok(inst)
}
