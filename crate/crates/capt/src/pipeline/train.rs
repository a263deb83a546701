//! Training loop: one optimizer step per sample, per-step loss logging,
//! best-validation checkpointing.

use super::config::RunConfig;
use crate::error::{CaptError, Result};
use crate::losses::{build_losses, LossValues};
use crate::model::Model;
use crate::synthdata::{load_split, read_manifest, PointwiseTargets, SampleRecord};
use capt_tensor::{Adam, Tape, Tensor};
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write as _;
use std::path::Path;

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub steps: u64,
    /// Mean total training loss of the first and last epoch.
    pub first_epoch_loss: f64,
    pub last_epoch_loss: f64,
    pub best_val_loss: f64,
    /// Epoch (1-based) whose validation loss produced the saved checkpoint.
    pub best_epoch: usize,
}

fn mean_losses(sum: &LossValues, count: usize) -> LossValues {
    let inv = 1.0 / count as f64;
    LossValues {
        seg: sum.seg * inv,
        dir: sum.dir * inv,
        pdir: sum.pdir * inv,
        dist: sum.dist * inv,
        state: sum.state * inv,
        motion: sum.motion * inv,
        total: sum.total * inv,
    }
}

fn accumulate(into: &mut LossValues, v: &LossValues) {
    into.seg += v.seg;
    into.dir += v.dir;
    into.pdir += v.pdir;
    into.dist += v.dist;
    into.state += v.state;
    into.motion += v.motion;
    into.total += v.total;
}

fn csv_row(step: u64, split: &str, v: &LossValues) -> String {
    format!(
        "{step},{split},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
        v.seg, v.dir, v.pdir, v.dist, v.state, v.motion, v.total
    )
}

/// Forward + losses for one sample; no parameter update.
fn sample_losses(
    model: &Model,
    cfg: &RunConfig,
    rec: &SampleRecord,
    targets: &PointwiseTargets,
) -> Result<LossValues> {
    let mut tape = Tape::new();
    let fv = model.forward(&mut tape, &rec.points, false)?;
    let lv = build_losses(&mut tape, &fv, rec, targets, &cfg.loss, &cfg.motion)?;
    Ok(LossValues::extract(&tape, &lv))
}

fn validation_losses(
    model: &Model,
    cfg: &RunConfig,
    set: &[(SampleRecord, PointwiseTargets)],
) -> Result<LossValues> {
    let mut sum = LossValues::default();
    for (rec, targets) in set {
        let v = sample_losses(model, cfg, rec, targets)?;
        accumulate(&mut sum, &v);
    }
    Ok(mean_losses(&sum, set.len()))
}

/// Trains per `cfg`, writing the best-validation checkpoint to
/// `cfg.checkpoint` and a per-step loss log to `csv_path`.
pub fn train(cfg: &RunConfig, csv_path: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    let manifest = read_manifest(&cfg.dataset_dir.join("manifest.json"))?;
    if manifest.category != cfg.category {
        return Err(CaptError::Config(format!(
            "dataset is category '{}' but run config says '{}'",
            manifest.category, cfg.category
        )));
    }
    let train_set = load_split(&cfg.dataset_dir, &manifest, "train")?;
    let val_set = load_split(&cfg.dataset_dir, &manifest, "val")?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(CaptError::Config(
            "training requires non-empty train and val splits".to_string(),
        ));
    }

    let mut model = Model::new(cfg.resolved_model()?, cfg.seed)?;
    let mut opt = Adam::new(cfg.optim.lr);
    if let Some(parent) = csv_path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| CaptError::io(parent, e))?;
        }
    }
    if let Some(parent) = cfg.checkpoint.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| CaptError::io(parent, e))?;
        }
    }
    let mut csv = std::io::BufWriter::new(
        std::fs::File::create(csv_path).map_err(|e| CaptError::io(csv_path, e))?,
    );
    csv.write_all(b"step,split,seg,dir,pdir,dist,state,motion,total\n")
        .map_err(|e| CaptError::io(csv_path, e))?;

    let mut step = 0u64;
    let mut first_epoch_loss = f64::NAN;
    let mut last_epoch_loss = f64::NAN;
    let mut best_val_loss = f64::INFINITY;
    let mut best_epoch = 0usize;

    for epoch in 0..cfg.optim.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(crate::synthdata::mix_seed(
            cfg.seed,
            0x4000_0000 + epoch as u64,
        ));
        order.shuffle(&mut rng);

        let mut epoch_sum = LossValues::default();
        for &idx in &order {
            let (rec, targets) = &train_set[idx];
            let mut tape = Tape::new();
            let fv = model.forward(&mut tape, &rec.points, true)?;
            let lv = build_losses(&mut tape, &fv, rec, targets, &cfg.loss, &cfg.motion)?;
            let vals = LossValues::extract(&tape, &lv);
            if !vals.total.is_finite() {
                return Err(CaptError::TrainingFault {
                    term: "total".to_string(),
                    what: format!("loss became {} at step {step}", vals.total),
                });
            }
            let grads = tape.backward(lv.total)?;
            // Missing gradients (parameters untouched by this sample) count
            // as zero.
            let zeros: Vec<Option<Tensor>> = fv
                .leaves
                .iter()
                .zip(model.params())
                .map(|(leaf, (_, p))| match grads.get(*leaf) {
                    Some(_) => None,
                    None => Some(Tensor::zeros(p.shape().to_vec())),
                })
                .collect();
            let grad_refs: Vec<&Tensor> = fv
                .leaves
                .iter()
                .zip(&zeros)
                .map(|(leaf, z)| match z {
                    Some(t) => t,
                    None => grads.get(*leaf).expect("checked above"),
                })
                .collect();
            opt.step(&mut model.param_tensors_mut(), &grad_refs)?;
            csv.write_all(csv_row(step, "train", &vals).as_bytes())
                .map_err(|e| CaptError::io(csv_path, e))?;
            accumulate(&mut epoch_sum, &vals);
            step += 1;
        }
        let epoch_mean = mean_losses(&epoch_sum, order.len());
        if epoch == 0 {
            first_epoch_loss = epoch_mean.total;
        }
        last_epoch_loss = epoch_mean.total;

        let val = validation_losses(&model, cfg, &val_set)?;
        csv.write_all(csv_row(step, "val", &val).as_bytes())
            .map_err(|e| CaptError::io(csv_path, e))?;
        if val.total < best_val_loss {
            best_val_loss = val.total;
            best_epoch = epoch + 1;
            model.save(&cfg.checkpoint)?;
        }
    }
    csv.flush().map_err(|e| CaptError::io(csv_path, e))?;

    Ok(TrainOutcome {
        steps: step,
        first_epoch_loss,
        last_epoch_loss,
        best_val_loss,
        best_epoch,
    })
}
