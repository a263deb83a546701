//! Procedural articulated-object dataset: box-link categories with exact
//! ground truth, single-view partiality via back-face culling, augmentation,
//! per-point supervision targets, and binary serialization.

mod augment;
mod categories;
mod dataset;
mod instance;
mod io;
mod sample;
mod targets;

pub use augment::{augment, pose_jitter, AugmentParams, DATASET_MAX_ANGLE, DATASET_MAX_SHIFT};
pub use categories::{all_categories, category, CategorySpec};
pub use dataset::{generate_dataset, load_split, GenConfig, GENERATOR_VERSION};
pub use instance::{build_instance, Box3, Instance, JointDef};
pub use io::{read_manifest, read_sample, write_manifest, write_sample};
pub use sample::{sample_view, MIN_SAMPLE_POINTS};
pub use targets::{compute_pointwise_targets, JointTargets, PointwiseTargets, PDIR_VALID_EPS};

use crate::geometry::{UnitVec3, Vec3};
use serde::{Deserialize, Serialize};

/// Ground-truth revolute joint attached to a sample.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct JointSpec {
    pub direction: UnitVec3,
    pub pivot: Vec3,
    /// Radians relative to the category's zero pose.
    pub state: f64,
    /// Motion limits in radians, inherited from the category.
    pub limits: (f64, f64),
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub category: String,
    pub instance_id: u64,
    pub sample_index: u64,
}

/// One observation: a partial cloud with labels and posed ground truth.
#[derive(Clone, Debug)]
pub struct SampleRecord {
    pub points: Vec<Vec3>,
    pub labels: Vec<u8>,
    pub joints: Vec<JointSpec>,
    pub active_link_count: usize,
    pub active_joint_count: usize,
    pub provenance: Provenance,
}

impl SampleRecord {
    pub fn n(&self) -> usize {
        self.points.len()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplitFiles {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub category: String,
    pub seed: u64,
    pub n_points: usize,
    pub splits: SplitFiles,
    pub generator_version: u32,
}

/// SplitMix64; decorrelates derived seeds from small consecutive inputs.
pub(crate) fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
