use super::instance::{vary, Box3, Instance, JointDef};
use crate::error::{CaptError, Result};
use crate::geometry::{v3, Line3, UnitVec3, Vec3};
use rand_chacha::ChaCha8Rng;

/// Category-level prior: topology, limits, and a procedural instance builder.
///
/// Link 0 is always the base. Joint k articulates child link k+1 relative to
/// `parent_link[k]`. States are radians away from the category's zero pose.
pub struct CategorySpec {
    pub name: &'static str,
    pub n_links: usize,
    pub n_joints: usize,
    pub parent_link: &'static [usize],
    pub state_limits: &'static [(f64, f64)],
    pub(crate) builder: fn(&'static CategorySpec, &mut ChaCha8Rng) -> Result<Instance>,
}

impl CategorySpec {
    /// Kinematic tree must be acyclic and rooted at link 0: joint k's child is
    /// link k+1, so `parent_link[k] < k + 1` guarantees both.
    pub fn validate(&self) -> Result<()> {
        if self.n_joints + 1 != self.n_links {
            return Err(CaptError::Config(format!(
                "category {}: {} joints cannot connect {} links into a tree",
                self.name, self.n_joints, self.n_links
            )));
        }
        if self.parent_link.len() != self.n_joints || self.state_limits.len() != self.n_joints {
            return Err(CaptError::Config(format!(
                "category {}: per-joint table lengths do not match joint count",
                self.name
            )));
        }
        for (k, &p) in self.parent_link.iter().enumerate() {
            if p >= k + 1 {
                return Err(CaptError::Config(format!(
                    "category {}: joint {k} parent {p} not earlier than child {}",
                    self.name,
                    k + 1
                )));
            }
        }
        for (k, &(lo, hi)) in self.state_limits.iter().enumerate() {
            if !(lo < hi) {
                return Err(CaptError::Config(format!(
                    "category {}: joint {k} has empty limit range [{lo}, {hi}]",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

impl std::fmt::Debug for CategorySpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CategorySpec")
            .field("name", &self.name)
            .field("n_links", &self.n_links)
            .field("n_joints", &self.n_joints)
            .finish()
    }
}

fn axis(dir: Vec3, pivot: Vec3) -> Result<Line3> {
    Ok(Line3 { direction: UnitVec3::new(dir)?, pivot })
}

/// Base slab extending -y, lid resting flat extending +y, hinge along +x at
/// the base's top rear edge. Positive state lifts the lid toward +z. The lid
/// is deliberately thinner than the base so the two links stay separable
/// under +-30% jitter.
fn build_laptop(spec: &'static CategorySpec, rng: &mut ChaCha8Rng) -> Result<Instance> {
    let w = vary(rng, 1.0);
    let depth = vary(rng, 0.8);
    let lid_depth = vary(rng, 0.75);
    let base_t = vary(rng, 0.08);
    let lid_t = vary(rng, 0.03);
    let base = Box3::new(v3(-w / 2.0, -depth, 0.0), v3(w / 2.0, 0.0, base_t))?;
    let lid = Box3::new(v3(-w / 2.0, 0.0, base_t), v3(w / 2.0, lid_depth, base_t + lid_t))?;
    Ok(Instance {
        category: spec,
        links: vec![base, lid],
        joints: vec![JointDef {
            axis: axis(v3(1.0, 0.0, 0.0), v3(0.0, 0.0, base_t))?,
            limits: spec.state_limits[0],
        }],
    })
}

/// Body with front face at y = 0; door closed flush against the front,
/// hinged along its bottom edge. Positive state tips the door top outward.
fn build_oven(spec: &'static CategorySpec, rng: &mut ChaCha8Rng) -> Result<Instance> {
    let w = vary(rng, 0.9);
    let depth = vary(rng, 0.8);
    let h = vary(rng, 0.9);
    let door_t = vary(rng, 0.04);
    let sill = 0.06 * h;
    let body = Box3::new(v3(-w / 2.0, -depth, 0.0), v3(w / 2.0, 0.0, h))?;
    let door = Box3::new(v3(-w / 2.0, 0.0, sill), v3(w / 2.0, door_t, h))?;
    Ok(Instance {
        category: spec,
        links: vec![body, door],
        joints: vec![JointDef {
            axis: axis(v3(-1.0, 0.0, 0.0), v3(0.0, 0.0, sill))?,
            limits: spec.state_limits[0],
        }],
    })
}

/// Front-loading drum door on a vertical hinge at its left edge; positive
/// state swings the door's free edge away from the body (+y).
fn build_washing_machine(spec: &'static CategorySpec, rng: &mut ChaCha8Rng) -> Result<Instance> {
    let w = vary(rng, 0.8);
    let depth = vary(rng, 0.7);
    let h = vary(rng, 0.9);
    let door_w = 0.6 * w;
    let door_t = vary(rng, 0.05);
    let door_lo = 0.25 * h;
    let door_hi = 0.75 * h;
    let body = Box3::new(v3(-w / 2.0, -depth, 0.0), v3(w / 2.0, 0.0, h))?;
    let door = Box3::new(
        v3(-door_w / 2.0, 0.0, door_lo),
        v3(door_w / 2.0, door_t, door_hi),
    )?;
    Ok(Instance {
        category: spec,
        links: vec![body, door],
        joints: vec![JointDef {
            axis: axis(v3(0.0, 0.0, 1.0), v3(-door_w / 2.0, 0.0, 0.0))?,
            limits: spec.state_limits[0],
        }],
    })
}

/// Front bar with two temples extending -y from its ends; positive state
/// folds a temple inward across the frame. The temples get mirrored axes
/// (+z left, -z right) and deliberately disjoint length ranges so the two
/// joints stay distinguishable under jitter.
fn build_eyeglasses(spec: &'static CategorySpec, rng: &mut ChaCha8Rng) -> Result<Instance> {
    let w = vary(rng, 1.0);
    let bar_t = vary(rng, 0.06);
    let h = vary(rng, 0.12);
    let temple_t = 0.06 * w;
    let len_left = vary(rng, 0.8);
    let len_right = vary(rng, 0.4);
    let frame = Box3::new(v3(-w / 2.0, 0.0, -h), v3(w / 2.0, bar_t, 0.0))?;
    let left = Box3::new(v3(-w / 2.0, -len_left, -h), v3(-w / 2.0 + temple_t, 0.0, 0.0))?;
    let right = Box3::new(v3(w / 2.0 - temple_t, -len_right, -h), v3(w / 2.0, 0.0, 0.0))?;
    let left_pivot = v3(-w / 2.0 + temple_t / 2.0, 0.0, -h / 2.0);
    let right_pivot = v3(w / 2.0 - temple_t / 2.0, 0.0, -h / 2.0);
    Ok(Instance {
        category: spec,
        links: vec![frame, left, right],
        joints: vec![
            JointDef {
                axis: axis(v3(0.0, 0.0, 1.0), left_pivot)?,
                limits: spec.state_limits[0],
            },
            JointDef {
                axis: axis(v3(0.0, 0.0, -1.0), right_pivot)?,
                limits: spec.state_limits[1],
            },
        ],
    })
}

/// Central boss with one long and one short arm on opposite sides of the
/// shared pin; the two joints share the pin location but spin in opposite
/// senses (+z vs -z), so positive states open the arms into an X.
fn build_scissors(spec: &'static CategorySpec, rng: &mut ChaCha8Rng) -> Result<Instance> {
    let boss_w = vary(rng, 0.15);
    let boss_d = vary(rng, 0.2);
    let boss_t = vary(rng, 0.05);
    let arm_w = 0.4 * boss_w;
    let len_blade = vary(rng, 0.9);
    let len_handle = vary(rng, 0.45);
    let arm_t = 0.4 * boss_t;
    let boss = Box3::new(
        v3(-boss_w / 2.0, -boss_d / 2.0, -boss_t / 2.0),
        v3(boss_w / 2.0, boss_d / 2.0, boss_t / 2.0),
    )?;
    let blade = Box3::new(v3(-arm_w / 2.0, 0.0, 0.0), v3(arm_w / 2.0, len_blade, arm_t))?;
    let handle = Box3::new(v3(-arm_w / 2.0, -len_handle, -arm_t), v3(arm_w / 2.0, 0.0, 0.0))?;
    Ok(Instance {
        category: spec,
        links: vec![boss, blade, handle],
        joints: vec![
            JointDef {
                axis: axis(v3(0.0, 0.0, 1.0), v3(0.0, 0.0, arm_t / 2.0))?,
                limits: spec.state_limits[0],
            },
            JointDef {
                axis: axis(v3(0.0, 0.0, -1.0), v3(0.0, 0.0, -arm_t / 2.0))?,
                limits: spec.state_limits[1],
            },
        ],
    })
}

static CATEGORIES: [CategorySpec; 5] = [
    CategorySpec {
        name: "laptop",
        n_links: 2,
        n_joints: 1,
        parent_link: &[0],
        state_limits: &[(0.3, 2.8)],
        builder: build_laptop,
    },
    CategorySpec {
        name: "oven",
        n_links: 2,
        n_joints: 1,
        parent_link: &[0],
        state_limits: &[(0.2, 1.5)],
        builder: build_oven,
    },
    CategorySpec {
        name: "washing_machine",
        n_links: 2,
        n_joints: 1,
        parent_link: &[0],
        state_limits: &[(0.2, 2.0)],
        builder: build_washing_machine,
    },
    CategorySpec {
        name: "eyeglasses",
        n_links: 3,
        n_joints: 2,
        parent_link: &[0, 0],
        state_limits: &[(0.1, 1.5), (0.1, 1.5)],
        builder: build_eyeglasses,
    },
    CategorySpec {
        name: "scissors",
        n_links: 3,
        n_joints: 2,
        parent_link: &[0, 0],
        state_limits: &[(0.1, 0.9), (0.1, 0.9)],
        builder: build_scissors,
    },
];

pub fn all_categories() -> &'static [CategorySpec] {
    &CATEGORIES
}

pub fn category(name: &str) -> Result<&'static CategorySpec> {
    CATEGORIES
        .iter()
        .find(|c| c.name == name)
        .ok_or_else(|| CaptError::Config(format!("unknown category '{name}'")))
}
