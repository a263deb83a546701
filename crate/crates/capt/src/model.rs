//! Per-point transformer: kNN relative-position embedding, four offset-style
//! self-attention layers whose outputs concatenate into the point feature,
//! and two decoder branches (segmentation logits; per-joint axis fields).

use crate::error::{CaptError, Result};
use crate::geometry::Vec3;
use capt_tensor::{checkpoint, Tape, Tensor, Var};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Fixed number of self-attention layers; the point feature concatenates all
/// of their outputs.
pub const N_ATTN_LAYERS: usize = 4;

/// Per-joint decoder channels: dir 3 + dist 1 + pdir 3 + state 1.
pub const JOINT_CHANNELS: usize = 8;

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    /// Embedding width; attention queries/keys use d_e / 4.
    pub d_e: usize,
    /// Segmentation classes (category link budget).
    pub n_links: usize,
    /// Joint channel budget (category joint maximum).
    pub n_joints: usize,
    /// Neighborhood size for the relative-position embedding.
    pub neighbors: usize,
    /// Hidden width of each decoder branch.
    pub decoder_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { d_e: 128, n_links: 2, n_joints: 1, neighbors: 16, decoder_hidden: 128 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_e < 8 || self.d_e % 4 != 0 {
            return Err(CaptError::Config(format!(
                "d_e must be a multiple of 4 and at least 8, got {}",
                self.d_e
            )));
        }
        if self.n_links < 2 || self.n_joints < 1 || self.n_links != self.n_joints + 1 {
            return Err(CaptError::Config(format!(
                "link/joint budget ({}, {}) must satisfy links = joints + 1 >= 2",
                self.n_links, self.n_joints
            )));
        }
        if self.neighbors < 1 {
            return Err(CaptError::Config("neighbors must be at least 1".to_string()));
        }
        if self.decoder_hidden < 4 {
            return Err(CaptError::Config(format!(
                "decoder_hidden {} too small",
                self.decoder_hidden
            )));
        }
        Ok(())
    }

    fn d_a(&self) -> usize {
        self.d_e / 4
    }

    /// Registry of parameter names and shapes, in registration order. This
    /// order is the contract for checkpoints and optimizer state.
    fn registry(&self) -> Vec<(String, Vec<usize>)> {
        let (d_e, d_a, h) = (self.d_e, self.d_a(), self.decoder_hidden);
        let f = N_ATTN_LAYERS * d_e;
        let mut r = vec![
            ("embed.wp".to_string(), vec![3, d_e]),
            ("embed.bp".to_string(), vec![d_e]),
            ("embed.wn".to_string(), vec![3, d_e]),
            ("embed.bn".to_string(), vec![d_e]),
            ("embed.we".to_string(), vec![d_e, d_e]),
            ("embed.be".to_string(), vec![d_e]),
        ];
        for l in 0..N_ATTN_LAYERS {
            r.push((format!("enc{l}.wq"), vec![d_e, d_a]));
            r.push((format!("enc{l}.wk"), vec![d_e, d_a]));
            r.push((format!("enc{l}.wv"), vec![d_e, d_e]));
            r.push((format!("enc{l}.wo"), vec![d_e, d_e]));
            r.push((format!("enc{l}.bo"), vec![d_e]));
        }
        r.push(("seg.w1".to_string(), vec![f, h]));
        r.push(("seg.b1".to_string(), vec![h]));
        r.push(("seg.w2".to_string(), vec![h, self.n_links]));
        r.push(("seg.b2".to_string(), vec![self.n_links]));
        r.push(("arti.w1".to_string(), vec![f, h]));
        r.push(("arti.b1".to_string(), vec![h]));
        r.push(("arti.w2".to_string(), vec![h, JOINT_CHANNELS * self.n_joints]));
        r.push(("arti.b2".to_string(), vec![JOINT_CHANNELS * self.n_joints]));
        r
    }
}

pub struct Model {
    pub cfg: ModelConfig,
    /// (name, tensor) pairs in registry order.
    params: Vec<(String, Tensor)>,
}

/// Tape handles for one forward pass. `leaves` parallels the parameter
/// registry; per-joint field vectors are indexed by joint channel.
pub struct ForwardVars {
    pub leaves: Vec<Var>,
    /// Centroid-centered input cloud, [n x 3] constant.
    pub points: Var,
    pub seg_logits: Var,
    pub dir: Vec<Var>,
    pub dist: Vec<Var>,
    pub pdir: Vec<Var>,
    pub state: Vec<Var>,
    pub centroid: Vec3,
}

/// Extracted per-point fields for one joint channel.
#[derive(Clone, Debug)]
pub struct JointFields {
    /// Unit rows, n x 3.
    pub dir: Tensor,
    /// Non-negative, [n].
    pub dist: Tensor,
    /// Unit rows, n x 3.
    pub pdir: Tensor,
    /// Radians, [n].
    pub state: Tensor,
}

#[derive(Clone, Debug)]
pub struct Prediction {
    pub seg_logits: Tensor,
    pub joints: Vec<JointFields>,
    pub centroid: Vec3,
}

impl Prediction {
    /// Argmax segmentation labels.
    pub fn labels(&self) -> Vec<u8> {
        (0..self.seg_logits.rows())
            .map(|i| {
                let row = self.seg_logits.row(i);
                let mut best = 0;
                for (j, &x) in row.iter().enumerate() {
                    if x > row[best] {
                        best = j;
                    }
                }
                best as u8
            })
            .collect()
    }
}

fn xavier(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    if shape.len() == 1 {
        return Tensor::zeros(shape.to_vec());
    }
    let (fan_in, fan_out) = (shape[0], shape[1]);
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.gen_range(-limit..limit))
        .collect();
    Tensor::from_vec(shape.to_vec(), data).expect("positive dims")
}

impl Model {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Model> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = cfg
            .registry()
            .into_iter()
            .map(|(name, shape)| {
                let t = xavier(&mut rng, &shape);
                (name, t)
            })
            .collect();
        Ok(Model { cfg, params })
    }

    pub fn params(&self) -> &[(String, Tensor)] {
        &self.params
    }

    pub fn param_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.params.iter_mut().map(|(_, t)| t).collect()
    }

    pub fn n_params(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Exact k-nearest neighbors under squared Euclidean distance, ties
    /// broken by (distance, index) so the result is total-order stable.
    fn knn_rel(&self, points: &[Vec3]) -> Vec<f64> {
        let n = points.len();
        let k = self.cfg.neighbors;
        let mut rel = Vec::with_capacity(n * k * 3);
        let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
        for (i, &p) in points.iter().enumerate() {
            cand.clear();
            for (j, &q) in points.iter().enumerate() {
                if j != i {
                    let d = q - p;
                    cand.push((d.dot(d), j));
                }
            }
            cand.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            for &(_, j) in cand.iter().take(k) {
                let d = points[j] - p;
                rel.extend_from_slice(&[d.x, d.y, d.z]);
            }
        }
        rel
    }

    /// Embedding pathways, split for inspection: (pointwise, neighbor, fused).
    pub(crate) fn embed_parts(
        &self,
        tape: &mut Tape,
        pts: Var,
        rel: Var,
        leaf: &dyn Fn(&str) -> Var,
    ) -> Result<(Var, Var, Var)> {
        let pw = {
            let m = tape.matmul(pts, leaf("embed.wp"))?;
            tape.add_row(m, leaf("embed.bp"))?
        };
        let nb = {
            let m = tape.matmul(rel, leaf("embed.wn"))?;
            let b = tape.add_row(m, leaf("embed.bn"))?;
            let r = tape.relu(b)?;
            tape.mean_group_rows(r, self.cfg.neighbors)?
        };
        let both = tape.add(pw, nb)?;
        let a0 = tape.relu(both)?;
        let m = tape.matmul(a0, leaf("embed.we"))?;
        let b = tape.add_row(m, leaf("embed.be"))?;
        let x = tape.relu(b)?;
        Ok((pw, nb, x))
    }

    fn attention_layer(
        &self,
        tape: &mut Tape,
        x: Var,
        l: usize,
        leaf: &dyn Fn(&str) -> Var,
    ) -> Result<Var> {
        let get = |name: &str| leaf(&format!("enc{l}.{name}"));
        let q = tape.matmul(x, get("wq"))?;
        let k = tape.matmul(x, get("wk"))?;
        let v = tape.matmul(x, get("wv"))?;
        let kt = tape.transpose(k)?;
        let s = tape.matmul(q, kt)?;
        let s = tape.scale(s, 1.0 / (self.cfg.d_a() as f64).sqrt())?;
        let a = tape.softmax_rows(s)?;
        let av = tape.matmul(a, v)?;
        // Offset form: the layer transforms the residual between each point's
        // feature and its attention-pooled context.
        let off = tape.sub(x, av)?;
        let t = tape.matmul(off, get("wo"))?;
        let t = tape.add_row(t, get("bo"))?;
        let t = tape.relu(t)?;
        Ok(tape.add(x, t)?)
    }

    /// Builds the whole network on `tape`. When `trainable` is set the
    /// parameters become gradient leaves (in registry order); the input cloud
    /// is always a constant. The cloud is centered on its centroid first, so
    /// every output field is translation-invariant; `points` holds the
    /// centered coordinates for downstream pivot reconstruction.
    pub fn forward(&self, tape: &mut Tape, cloud: &[Vec3], trainable: bool) -> Result<ForwardVars> {
        let n = cloud.len();
        if n < self.cfg.neighbors + 1 {
            return Err(CaptError::Config(format!(
                "cloud of {n} points too small for {} neighbors",
                self.cfg.neighbors
            )));
        }
        let mut centroid = Vec3::ZERO;
        for p in cloud {
            centroid = centroid + *p;
        }
        let centroid = centroid.scale(1.0 / n as f64);
        let centered: Vec<Vec3> = cloud.iter().map(|&p| p - centroid).collect();

        let mut leaves = Vec::with_capacity(self.params.len());
        for (_, t) in &self.params {
            leaves.push(tape.leaf(t.clone(), trainable)?);
        }
        let index: std::collections::HashMap<&str, usize> = self
            .params
            .iter()
            .enumerate()
            .map(|(i, (name, _))| (name.as_str(), i))
            .collect();
        let leaf = |name: &str| leaves[index[name]];

        let mut pts_data = Vec::with_capacity(n * 3);
        for p in &centered {
            pts_data.extend_from_slice(&[p.x, p.y, p.z]);
        }
        let pts = tape.constant(Tensor::matrix(n, 3, pts_data)?)?;
        let rel = tape.constant(Tensor::matrix(
            n * self.cfg.neighbors,
            3,
            self.knn_rel(&centered),
        )?)?;

        let (_, _, mut x) = self.embed_parts(tape, pts, rel, &leaf)?;
        let mut layer_outs = Vec::with_capacity(N_ATTN_LAYERS);
        for l in 0..N_ATTN_LAYERS {
            x = self.attention_layer(tape, x, l, &leaf)?;
            layer_outs.push(x);
        }
        let c01 = tape.concat(layer_outs[0], layer_outs[1], 1)?;
        let c23 = tape.concat(layer_outs[2], layer_outs[3], 1)?;
        let f_e = tape.concat(c01, c23, 1)?;

        let seg_logits = {
            let h = tape.matmul(f_e, leaf("seg.w1"))?;
            let h = tape.add_row(h, leaf("seg.b1"))?;
            let h = tape.relu(h)?;
            let o = tape.matmul(h, leaf("seg.w2"))?;
            tape.add_row(o, leaf("seg.b2"))?
        };
        let raw = {
            let h = tape.matmul(f_e, leaf("arti.w1"))?;
            let h = tape.add_row(h, leaf("arti.b1"))?;
            let h = tape.relu(h)?;
            let o = tape.matmul(h, leaf("arti.w2"))?;
            tape.add_row(o, leaf("arti.b2"))?
        };

        let (mut dir, mut dist, mut pdir, mut state) =
            (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for j in 0..self.cfg.n_joints {
            let base = JOINT_CHANNELS * j;
            let d = tape.slice_cols(raw, base, base + 3)?;
            dir.push(tape.normalize_rows(d)?);
            let dm = tape.slice_cols(raw, base + 3, base + 4)?;
            let dm = tape.softplus(dm)?;
            dist.push(tape.reshape(dm, vec![n])?);
            let pd = tape.slice_cols(raw, base + 4, base + 7)?;
            pdir.push(tape.normalize_rows(pd)?);
            let st = tape.slice_cols(raw, base + 7, base + 8)?;
            state.push(tape.reshape(st, vec![n])?);
        }

        Ok(ForwardVars { leaves, points: pts, seg_logits, dir, dist, pdir, state, centroid })
    }

    /// Inference-only forward on a fresh tape, extracting plain tensors.
    pub fn predict(&self, cloud: &[Vec3]) -> Result<Prediction> {
        let mut tape = Tape::new();
        let fv = self.forward(&mut tape, cloud, false)?;
        let joints = (0..self.cfg.n_joints)
            .map(|j| JointFields {
                dir: tape.value(fv.dir[j]).clone(),
                dist: tape.value(fv.dist[j]).clone(),
                pdir: tape.value(fv.pdir[j]).clone(),
                state: tape.value(fv.state[j]).clone(),
            })
            .collect();
        Ok(Prediction {
            seg_logits: tape.value(fv.seg_logits).clone(),
            joints,
            centroid: fv.centroid,
        })
    }

    /// Writes the parameter checkpoint plus a JSON config sidecar at
    /// `<path>.json`.
    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.params)?;
        let side = sidecar(path);
        let text = serde_json::to_string_pretty(&self.cfg)
            .map_err(|e| CaptError::Format(format!("config serialization: {e}")))?;
        std::fs::write(&side, text + "\n").map_err(|e| CaptError::io(&side, e))
    }

    pub fn load(path: &Path) -> Result<Model> {
        let side = sidecar(path);
        let text = std::fs::read_to_string(&side).map_err(|e| CaptError::io(&side, e))?;
        let cfg: ModelConfig = serde_json::from_str(&text)
            .map_err(|e| CaptError::Format(format!("{}: bad model config: {e}", side.display())))?;
        cfg.validate()?;
        let params = checkpoint::load(path)?;
        let expected = cfg.registry();
        if params.len() != expected.len() {
            return Err(CaptError::Format(format!(
                "checkpoint has {} tensors, config expects {}",
                params.len(),
                expected.len()
            )));
        }
        for ((name, tensor), (want_name, want_shape)) in params.iter().zip(&expected) {
            if name != want_name || tensor.shape() != &want_shape[..] {
                return Err(CaptError::Format(format!(
                    "checkpoint tensor {name} {:?} does not match registry {want_name} {want_shape:?}",
                    tensor.shape()
                )));
            }
        }
        Ok(Model { cfg, params })
    }
}

fn sidecar(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".json");
    std::path::PathBuf::from(s)
}
