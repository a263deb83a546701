use super::categories::{category, CategorySpec};
use super::io::{sample_file_name, write_manifest, write_sample};
use super::targets::compute_pointwise_targets;
use super::{build_instance, mix_seed, pose_jitter, sample_view, DatasetManifest, SplitFiles};
use super::{Provenance, MIN_SAMPLE_POINTS};
use crate::error::{CaptError, Result};
use crate::geometry::{v3, UnitVec3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fs;
use std::path::{Path, PathBuf};

pub const GENERATOR_VERSION: u32 = 1;

/// Train/val/test proportions in tenths.
const SPLIT_RATIO: (usize, usize, usize) = (7, 2, 1);

/// Redraws of (states, camera) before giving up on a sample.
const VIEW_RETRIES: usize = 64;

/// One dropped sample per this many target samples within a split's pool.
const SAMPLES_PER_INSTANCE: usize = 5;

#[derive(Clone, Debug)]
pub struct GenConfig {
    pub category: String,
    pub count: usize,
    pub n_points: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
}

fn random_camera(rng: &mut ChaCha8Rng) -> UnitVec3 {
    loop {
        let c = v3(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = c.norm();
        if (0.1..=1.0).contains(&n) {
            return UnitVec3::normalize(c).expect("norm checked");
        }
    }
}

struct Split {
    name: &'static str,
    n_samples: usize,
    instance_ids: std::ops::Range<u64>,
}

fn plan_splits(count: usize) -> [Split; 3] {
    let t = count * SPLIT_RATIO.0 / 10;
    let v = count * SPLIT_RATIO.1 / 10;
    let te = count - t - v;
    let pool = |size: usize| (size / SAMPLES_PER_INSTANCE).max(2) as u64;
    let (pt, pv, pe) = (pool(t), pool(v), pool(te));
    [
        Split { name: "train", n_samples: t, instance_ids: 0..pt },
        Split { name: "val", n_samples: v, instance_ids: pt..pt + pv },
        Split { name: "test", n_samples: te, instance_ids: pt + pv..pt + pv + pe },
    ]
}

fn generate_one(
    spec: &'static CategorySpec,
    global_seed: u64,
    instance_id: u64,
    sample_index: u64,
    n_points: usize,
) -> Result<(super::SampleRecord, super::PointwiseTargets)> {
    let instance = build_instance(spec, mix_seed(global_seed, 0x1000_0000 + instance_id))?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(global_seed, 0x2000_0000 + sample_index));
    for attempt in 0.. {
        let states: Vec<f64> = instance
            .joints
            .iter()
            .map(|j| rng.gen_range(j.limits.0..j.limits.1))
            .collect();
        let camera = random_camera(&mut rng);
        match sample_view(&instance, &states, camera, n_points, &mut rng) {
            Ok(mut rec) => {
                let (aug, _params) = pose_jitter(&rec, &mut rng)?;
                rec = aug;
                rec.provenance = Provenance {
                    category: spec.name.to_string(),
                    instance_id,
                    sample_index,
                };
                let targets = compute_pointwise_targets(&rec, spec.n_joints)?;
                return Ok((rec, targets));
            }
            Err(CaptError::ViewDegenerate { .. }) if attempt + 1 < VIEW_RETRIES => continue,
            Err(e) => return Err(e),
        }
    }
    unreachable!("retry loop returns or errors")
}

/// Generates a complete dataset under `out_dir`: split subdirectories of
/// sample files plus `manifest.json`. Instance pools are disjoint across
/// splits, so evaluation always sees unseen objects. Every byte is a pure
/// function of the config; regeneration reproduces files identically.
pub fn generate_dataset(cfg: &GenConfig) -> Result<DatasetManifest> {
    if cfg.count < 10 {
        return Err(CaptError::Config(format!(
            "dataset count {} too small to split 7:2:1 (need at least 10)",
            cfg.count
        )));
    }
    if cfg.n_points < MIN_SAMPLE_POINTS {
        return Err(CaptError::Config(format!(
            "n_points {} below minimum {MIN_SAMPLE_POINTS}",
            cfg.n_points
        )));
    }
    let spec = category(&cfg.category)?;
    let splits = plan_splits(cfg.count);
    let mut lists: [Vec<String>; 3] = Default::default();
    let mut global_sample: u64 = 0;
    for (si, split) in splits.iter().enumerate() {
        let dir = cfg.out_dir.join(split.name);
        fs::create_dir_all(&dir).map_err(|e| CaptError::io(&dir, e))?;
        for _ in 0..split.n_samples {
            let mut pick = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0x3000_0000 + global_sample));
            let instance_id = pick.gen_range(split.instance_ids.clone());
            let (rec, targets) =
                generate_one(spec, cfg.seed, instance_id, global_sample, cfg.n_points)?;
            let name = sample_file_name(spec.name, instance_id, global_sample);
            write_sample(&dir.join(&name), &rec, &targets)?;
            lists[si].push(format!("{}/{name}", split.name));
            global_sample += 1;
        }
    }
    let manifest = DatasetManifest {
        category: spec.name.to_string(),
        seed: cfg.seed,
        n_points: cfg.n_points,
        splits: SplitFiles {
            train: lists[0].clone(),
            val: lists[1].clone(),
            test: lists[2].clone(),
        },
        generator_version: GENERATOR_VERSION,
    };
    write_manifest(&cfg.out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Loads every sample listed in a manifest split.
pub fn load_split(
    root: &Path,
    manifest: &DatasetManifest,
    split: &str,
) -> Result<Vec<(super::SampleRecord, super::PointwiseTargets)>> {
    let spec = category(&manifest.category)?;
    let files = match split {
        "train" => &manifest.splits.train,
        "val" => &manifest.splits.val,
        "test" => &manifest.splits.test,
        other => return Err(CaptError::Config(format!("unknown split '{other}'"))),
    };
    files
        .iter()
        .map(|rel| super::io::read_sample(&root.join(rel), spec))
        .collect()
}
