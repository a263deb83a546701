//! Release-gate acceptance suite: one test per shipping criterion, each
//! printing a `criterion N (...): PASS/FAIL` line with the measured numbers.
//!
//! Run `cargo test -p capt-cli --test acceptance -- --nocapture --test-threads 1`
//! to see every verdict line in order. The two training criteria (5 and 6)
//! train real models from scratch and dominate the runtime.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use capt::geometry::{
    line_to_line_distance, point_to_line_distance, rodrigues_rotate, v3, Line3, UnitVec3, Vec3,
};
use capt::losses::{build_losses, motion_term, LossValues, LossWeights, MotionConfig};
use capt::metrics::{aggregate, fraction_below, seg_metrics, ApThresholds, JointErrors, SampleEval};
use capt::model::{JointFields, Model, ModelConfig};
use capt::pipeline::{evaluate, train, OptimConfig, RunConfig};
use capt::synthdata::{
    compute_pointwise_targets, generate_dataset, GenConfig, JointSpec, PointwiseTargets,
    Provenance, SampleRecord,
};
use capt::voting::{coarse_vote, fine_vote, VotingConfig};
use capt_tensor::check::{finite_diff_grad, max_rel_err};
use capt_tensor::{Tape, Tensor, Var};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

const FD_STEP: f64 = 1e-5;

/// Prints the verdict line for one criterion and fails the test if it did
/// not hold.
fn verdict(n: usize, name: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("criterion {n} ({name}): {tag} — {detail}");
    assert!(pass, "criterion {n} ({name}) failed: {detail}");
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn randt(r: &mut ChaCha8Rng, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| r.gen_range(lo..hi)).collect()).unwrap()
}

/// Random tensor with every entry at least `min_abs` from zero, for probing
/// ops with kinks (relu, abs) or poles (sqrt) away from them.
fn randt_away(r: &mut ChaCha8Rng, shape: Vec<usize>, min_abs: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let mag = r.gen_range(min_abs..1.0);
            if r.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn rand_unit3(r: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = v3(
            r.gen_range(-1.0..1.0),
            r.gen_range(-1.0..1.0),
            r.gen_range(-1.0..1.0),
        );
        let n = v.norm();
        if (0.2..=1.0).contains(&n) {
            return v.scale(1.0 / n);
        }
    }
}

// ---------------------------------------------------------------------------
// criterion 1: gradients of every differentiable op and every loss term
// ---------------------------------------------------------------------------

/// Max relative error between analytic and central-FD gradients for one op,
/// probed through a random weighted-sum scalar head.
fn op_max_err<F>(seed: u64, inputs: &[Tensor], build: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let probe = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs
            .iter()
            .map(|t| tape.leaf(t.clone(), true).unwrap())
            .collect();
        let out = build(&mut tape, &vars);
        tape.value(out).clone()
    };
    let mut wrng = rng(seed ^ 0xa5a5);
    let weights = Tensor::from_vec(
        probe.shape().to_vec(),
        (0..probe.numel()).map(|_| wrng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap();

    let eval = |replaced: Option<(usize, &[f64])>, track: bool| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs
            .iter()
            .enumerate()
            .map(|(j, tj)| {
                let t = match replaced {
                    Some((i, x)) if i == j => {
                        Tensor::from_vec(tj.shape().to_vec(), x.to_vec()).unwrap()
                    }
                    _ => tj.clone(),
                };
                tape.leaf(t, track).unwrap()
            })
            .collect();
        let out = build(&mut tape, &vars);
        let w = tape.constant(weights.clone()).unwrap();
        let prod = tape.mul(out, w).unwrap();
        let loss = tape.sum(prod).unwrap();
        let value = tape.value(loss).data()[0];
        let grads = if track { Some(tape.backward(loss).unwrap()) } else { None };
        (value, grads, vars)
    };

    let (_, grads, vars) = eval(None, true);
    let grads = grads.unwrap();
    let mut worst: f64 = 0.0;
    for (i, t) in inputs.iter().enumerate() {
        let fd = finite_diff_grad(|x| eval(Some((i, x)), false).0, t.data(), FD_STEP);
        let analytic = grads
            .get(vars[i])
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; t.numel()]);
        worst = worst.max(max_rel_err(&analytic, &fd));
    }
    worst
}

/// Hand-built two-joint record for probing loss-term gradients without the
/// dataset generator in the loop.
fn loss_record(seed: u64) -> (SampleRecord, PointwiseTargets) {
    let mut r = rng(seed);
    let n = 16;
    let joint = |r: &mut ChaCha8Rng| JointSpec {
        direction: UnitVec3::normalize(rand_unit3(r)).unwrap(),
        pivot: v3(
            r.gen_range(-0.5..0.5),
            r.gen_range(-0.5..0.5),
            r.gen_range(-0.5..0.5),
        ),
        state: r.gen_range(0.2..1.2),
        limits: (0.0, 1.6),
    };
    let joints = vec![joint(&mut r), joint(&mut r)];
    let points: Vec<Vec3> = (0..n)
        .map(|_| {
            v3(
                r.gen_range(-1.0..1.0),
                r.gen_range(-1.0..1.0),
                r.gen_range(-1.0..1.0),
            )
        })
        .collect();
    let mut labels = vec![0u8; n];
    for (i, l) in labels.iter_mut().enumerate() {
        *l = match i % 3 {
            0 => 1,
            1 => 2,
            _ => 0,
        };
    }
    let rec = SampleRecord {
        points,
        labels,
        joints,
        active_link_count: 3,
        active_joint_count: 2,
        provenance: Provenance::default(),
    };
    let targets = compute_pointwise_targets(&rec, 2).unwrap();
    (rec, targets)
}

const TERM_NAMES: [&str; 6] = ["seg", "dir", "pdir", "dist", "state", "motion"];

fn term_array(v: &LossValues) -> [f64; 6] {
    [v.seg, v.dir, v.pdir, v.dist, v.state, v.motion]
}

/// Worst relative gradient error per loss term, differentiating through every
/// decoder field that feeds the losses.
fn loss_term_errors(seed: u64) -> [f64; 6] {
    let (rec, targets) = loss_record(seed);
    let n = rec.n();
    let model = Model::new(
        ModelConfig { d_e: 8, n_links: 3, n_joints: 2, neighbors: 4, decoder_hidden: 8 },
        777,
    )
    .unwrap();
    let mut r = rng(seed ^ 0x51ed);

    // Field leaves: noisy offsets of the exact targets, away from the kinks
    // of |.| (state) and the zero of the motion displacement.
    let mut datas: Vec<(Vec<usize>, Vec<f64>)> = Vec::new();
    datas.push((
        vec![n, 3],
        (0..n * 3).map(|_| r.gen_range(-1.0..1.0)).collect(),
    ));
    for jt in &targets.joints {
        let noise3 = |r: &mut ChaCha8Rng, base: &[f64]| {
            base.iter().map(|x| x + r.gen_range(-0.05..0.05)).collect::<Vec<f64>>()
        };
        datas.push((vec![n, 3], noise3(&mut r, &jt.dir)));
        datas.push((vec![n, 3], noise3(&mut r, &jt.pdir)));
        datas.push((
            vec![n],
            jt.dist.iter().map(|x| x + r.gen_range(0.05..0.15)).collect(),
        ));
        datas.push((
            vec![n],
            jt.state.iter().map(|x| x + r.gen_range(0.05..0.2)).collect(),
        ));
    }

    let build = |datas: &[(Vec<usize>, Vec<f64>)], track: bool| {
        let mut tape = Tape::new();
        let mut fv = model.forward(&mut tape, &rec.points, false).unwrap();
        let mut leaves = Vec::new();
        let leaf = |tape: &mut Tape, shape: &[usize], data: &[f64]| {
            let t = Tensor::from_vec(shape.to_vec(), data.to_vec()).unwrap();
            tape.leaf(t, track).unwrap()
        };
        fv.seg_logits = leaf(&mut tape, &datas[0].0, &datas[0].1);
        leaves.push(fv.seg_logits);
        for j in 0..2 {
            fv.dir[j] = leaf(&mut tape, &datas[1 + 4 * j].0, &datas[1 + 4 * j].1);
            fv.pdir[j] = leaf(&mut tape, &datas[2 + 4 * j].0, &datas[2 + 4 * j].1);
            fv.dist[j] = leaf(&mut tape, &datas[3 + 4 * j].0, &datas[3 + 4 * j].1);
            fv.state[j] = leaf(&mut tape, &datas[4 + 4 * j].0, &datas[4 + 4 * j].1);
            leaves.extend([fv.dir[j], fv.pdir[j], fv.dist[j], fv.state[j]]);
        }
        let lv = build_losses(
            &mut tape,
            &fv,
            &rec,
            &targets,
            &LossWeights::default(),
            &MotionConfig::default(),
        )
        .unwrap();
        (tape, lv, leaves)
    };

    // Central differences of all six terms at once per coordinate probe.
    let mut fd: Vec<Vec<Vec<f64>>> = vec![vec![Vec::new(); datas.len()]; 6];
    let mut probe = datas.clone();
    for l in 0..datas.len() {
        for c in 0..datas[l].1.len() {
            probe[l].1[c] = datas[l].1[c] + FD_STEP;
            let (tape_p, lv_p, _) = build(&probe, false);
            let vp = term_array(&LossValues::extract(&tape_p, &lv_p));
            probe[l].1[c] = datas[l].1[c] - FD_STEP;
            let (tape_m, lv_m, _) = build(&probe, false);
            let vm = term_array(&LossValues::extract(&tape_m, &lv_m));
            probe[l].1[c] = datas[l].1[c];
            for t in 0..6 {
                fd[t][l].push((vp[t] - vm[t]) / (2.0 * FD_STEP));
            }
        }
    }

    let mut errs = [0.0f64; 6];
    for t in 0..6 {
        let (mut tape, lv, leaves) = build(&datas, true);
        let term = [lv.seg, lv.dir, lv.pdir, lv.dist, lv.state, lv.motion][t];
        let grads = tape.backward(term).unwrap();
        for (l, leaf) in leaves.iter().enumerate() {
            let analytic = grads
                .get(*leaf)
                .map(|g| g.data().to_vec())
                .unwrap_or_else(|| vec![0.0; datas[l].1.len()]);
            errs[t] = errs[t].max(max_rel_err(&analytic, &fd[t][l]));
        }
    }
    errs
}

#[test]
fn criterion_1_gradient_suite() {
    let start = Instant::now();
    let seeds = 20u64;
    let mut worst_op: (f64, String) = (0.0, String::new());

    for s in 0..seeds {
        let mut r = rng(900 + s);
        let cases: Vec<(&str, Vec<Tensor>, Box<dyn Fn(&mut Tape, &[Var]) -> Var>)> = vec![
            (
                "add",
                vec![randt(&mut r, vec![3, 4], -1.0, 1.0), randt(&mut r, vec![3, 4], -1.0, 1.0)],
                Box::new(|t, v| t.add(v[0], v[1]).unwrap()),
            ),
            (
                "sub",
                vec![randt(&mut r, vec![3, 4], -1.0, 1.0), randt(&mut r, vec![3, 4], -1.0, 1.0)],
                Box::new(|t, v| t.sub(v[0], v[1]).unwrap()),
            ),
            (
                "mul",
                vec![randt(&mut r, vec![3, 4], -1.0, 1.0), randt(&mut r, vec![3, 4], -1.0, 1.0)],
                Box::new(|t, v| t.mul(v[0], v[1]).unwrap()),
            ),
            (
                "scale",
                vec![randt(&mut r, vec![3, 4], -1.0, 1.0)],
                Box::new(|t, v| t.scale(v[0], -1.7).unwrap()),
            ),
            (
                "add_row",
                vec![randt(&mut r, vec![4, 3], -1.0, 1.0), randt(&mut r, vec![3], -1.0, 1.0)],
                Box::new(|t, v| t.add_row(v[0], v[1]).unwrap()),
            ),
            (
                "mul_col",
                vec![randt(&mut r, vec![4, 3], -1.0, 1.0), randt(&mut r, vec![4], -1.0, 1.0)],
                Box::new(|t, v| t.mul_col(v[0], v[1]).unwrap()),
            ),
            (
                "relu",
                vec![randt_away(&mut r, vec![4, 4], 0.05)],
                Box::new(|t, v| t.relu(v[0]).unwrap()),
            ),
            (
                "softplus",
                vec![randt(&mut r, vec![4, 4], -2.0, 2.0)],
                Box::new(|t, v| t.softplus(v[0]).unwrap()),
            ),
            (
                "sqrt",
                vec![randt(&mut r, vec![4, 4], 0.1, 2.0)],
                Box::new(|t, v| t.sqrt(v[0]).unwrap()),
            ),
            (
                "abs",
                vec![randt_away(&mut r, vec![4, 4], 0.05)],
                Box::new(|t, v| t.abs(v[0]).unwrap()),
            ),
            (
                "sum",
                vec![randt(&mut r, vec![3, 5], -1.0, 1.0)],
                Box::new(|t, v| t.sum(v[0]).unwrap()),
            ),
            (
                "mean",
                vec![randt(&mut r, vec![3, 5], -1.0, 1.0)],
                Box::new(|t, v| t.mean(v[0]).unwrap()),
            ),
            (
                "sum_axis0",
                vec![randt(&mut r, vec![4, 3], -1.0, 1.0)],
                Box::new(|t, v| t.sum_axis(v[0], 0).unwrap()),
            ),
            (
                "sum_axis1",
                vec![randt(&mut r, vec![4, 3], -1.0, 1.0)],
                Box::new(|t, v| t.sum_axis(v[0], 1).unwrap()),
            ),
            (
                "mean_axis0",
                vec![randt(&mut r, vec![4, 3], -1.0, 1.0)],
                Box::new(|t, v| t.mean_axis(v[0], 0).unwrap()),
            ),
            (
                "mean_axis1",
                vec![randt(&mut r, vec![4, 3], -1.0, 1.0)],
                Box::new(|t, v| t.mean_axis(v[0], 1).unwrap()),
            ),
            (
                "l2norm_rows",
                vec![randt_away(&mut r, vec![4, 3], 0.2)],
                Box::new(|t, v| t.l2norm_rows(v[0]).unwrap()),
            ),
            (
                "concat_axis0",
                vec![randt(&mut r, vec![3, 2], -1.0, 1.0), randt(&mut r, vec![4, 2], -1.0, 1.0)],
                Box::new(|t, v| t.concat(v[0], v[1], 0).unwrap()),
            ),
            (
                "concat_axis1",
                vec![randt(&mut r, vec![3, 2], -1.0, 1.0), randt(&mut r, vec![3, 3], -1.0, 1.0)],
                Box::new(|t, v| t.concat(v[0], v[1], 1).unwrap()),
            ),
            (
                "softmax_rows",
                vec![randt(&mut r, vec![4, 5], -2.0, 2.0)],
                Box::new(|t, v| t.softmax_rows(v[0]).unwrap()),
            ),
            (
                "normalize_rows",
                vec![randt_away(&mut r, vec![4, 3], 0.3)],
                Box::new(|t, v| t.normalize_rows(v[0]).unwrap()),
            ),
            (
                "slice_cols",
                vec![randt(&mut r, vec![4, 6], -1.0, 1.0)],
                Box::new(|t, v| t.slice_cols(v[0], 1, 4).unwrap()),
            ),
            (
                "mean_group_rows",
                vec![randt(&mut r, vec![6, 2], -1.0, 1.0)],
                Box::new(|t, v| t.mean_group_rows(v[0], 3).unwrap()),
            ),
            (
                "matmul",
                vec![randt(&mut r, vec![3, 4], -1.0, 1.0), randt(&mut r, vec![4, 2], -1.0, 1.0)],
                Box::new(|t, v| t.matmul(v[0], v[1]).unwrap()),
            ),
            (
                "transpose",
                vec![randt(&mut r, vec![3, 4], -1.0, 1.0)],
                Box::new(|t, v| t.transpose(v[0]).unwrap()),
            ),
            (
                "reshape",
                vec![randt(&mut r, vec![3, 4], -1.0, 1.0)],
                Box::new(|t, v| t.reshape(v[0], vec![4, 3]).unwrap()),
            ),
            (
                "cross_entropy_rows",
                vec![randt(&mut r, vec![5, 3], -2.0, 2.0)],
                Box::new(|t, v| t.cross_entropy_rows(v[0], &[0, 1, 2, 0, 1]).unwrap()),
            ),
            (
                "rodrigues",
                vec![
                    randt(&mut r, vec![4, 3], -1.0, 1.0),
                    {
                        let u = rand_unit3(&mut r);
                        Tensor::from_vec(vec![3], vec![u.x, u.y, u.z]).unwrap()
                    },
                    randt(&mut r, vec![3], -0.5, 0.5),
                ],
                Box::new(|t, v| t.rodrigues(v[0], v[1], v[2], 1.1).unwrap()),
            ),
        ];
        for (name, inputs, build) in cases {
            let err = op_max_err(900 + s, &inputs, build);
            if err > worst_op.0 {
                worst_op = (err, format!("{name} seed {s}"));
            }
        }
    }

    let mut worst_terms = [0.0f64; 6];
    for s in 0..seeds {
        let errs = loss_term_errors(1300 + s);
        for t in 0..6 {
            worst_terms[t] = worst_terms[t].max(errs[t]);
        }
    }

    let elapsed = start.elapsed().as_secs_f64();
    let ops_ok = worst_op.0 < 1e-6;
    let terms_ok = (0..6).all(|t| {
        let tol = if TERM_NAMES[t] == "motion" { 1e-5 } else { 1e-6 };
        worst_terms[t] < tol
    });
    let time_ok = elapsed < 60.0;
    let detail = format!(
        "ops worst {:.2e} ({}); terms worst [{}]; {:.1}s (budget 60s)",
        worst_op.0,
        worst_op.1,
        TERM_NAMES
            .iter()
            .zip(worst_terms)
            .map(|(n, e)| format!("{n} {e:.1e}"))
            .collect::<Vec<_>>()
            .join(", "),
        elapsed
    );
    verdict(1, "gradient suite", ops_ok && terms_ok && time_ok, &detail);
}

// ---------------------------------------------------------------------------
// criterion 2: geometry kernels vs independent oracles
// ---------------------------------------------------------------------------

/// Axis-angle rotation via the quaternion-derived rotation matrix: an
/// implementation path disjoint from the sin/cos expansion under test.
fn quat_rotate(p: Vec3, axis: &Line3, alpha: f64) -> Vec3 {
    let u = axis.direction.get();
    let (s, w) = (alpha / 2.0).sin_cos();
    let (x, y, z) = (u.x * s, u.y * s, u.z * s);
    let m = [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ];
    let v = p - axis.pivot;
    axis.pivot
        + v3(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
}

#[test]
fn criterion_2_geometry_suite() {
    let start = Instant::now();
    let mut worst_rot: f64 = 0.0;
    let mut worst_dist: f64 = 0.0;
    let mut worst_rigid: f64 = 0.0;
    let mut worst_inv: f64 = 0.0;

    for s in 0..20u64 {
        let mut r = rng(2100 + s);
        let axis = Line3::new(
            UnitVec3::normalize(rand_unit3(&mut r)).unwrap(),
            v3(
                r.gen_range(-1.0..1.0),
                r.gen_range(-1.0..1.0),
                r.gen_range(-1.0..1.0),
            ),
        );
        let alpha = r.gen_range(-PI..PI);
        let points: Vec<Vec3> = (0..30)
            .map(|_| {
                v3(
                    r.gen_range(-2.0..2.0),
                    r.gen_range(-2.0..2.0),
                    r.gen_range(-2.0..2.0),
                )
            })
            .collect();

        let rotated = rodrigues_rotate(&points, &axis, alpha).unwrap();
        for (p, q) in points.iter().zip(&rotated) {
            worst_rot = worst_rot.max(q.dist(quat_rotate(*p, &axis, alpha)));
        }

        // Rigidity: pairwise distances survive the rotation.
        for i in 0..points.len() {
            for j in (i + 1)..points.len() {
                worst_rigid = worst_rigid
                    .max((rotated[i].dist(rotated[j]) - points[i].dist(points[j])).abs());
            }
        }

        // Inverse rotation restores the original cloud.
        let back = rodrigues_rotate(&rotated, &axis, -alpha).unwrap();
        for (p, q) in points.iter().zip(&back) {
            worst_inv = worst_inv.max(p.dist(*q));
        }

        // Point-to-line distance vs the cross-product formula |(p-q) x u|.
        for _ in 0..50 {
            let p = v3(
                r.gen_range(-3.0..3.0),
                r.gen_range(-3.0..3.0),
                r.gen_range(-3.0..3.0),
            );
            let got = point_to_line_distance(p, axis.pivot, axis.direction);
            let oracle = (p - axis.pivot).cross(axis.direction.get()).norm();
            worst_dist = worst_dist.max((got - oracle).abs());
        }
    }

    let elapsed = start.elapsed().as_secs_f64();
    let pass = worst_rot < 1e-10
        && worst_dist < 1e-12
        && worst_rigid < 1e-10
        && worst_inv < 1e-10
        && elapsed < 10.0;
    let detail = format!(
        "rotation vs quaternion oracle {worst_rot:.2e} (<1e-10), distance vs cross oracle \
         {worst_dist:.2e} (<1e-12), rigidity {worst_rigid:.2e}, inverse {worst_inv:.2e}, \
         {elapsed:.2}s (budget 10s)"
    );
    verdict(2, "geometry suite", pass, &detail);
}

// ---------------------------------------------------------------------------
// criterion 3: motion-loss closed-form analytics
// ---------------------------------------------------------------------------

/// Motion term of a predicted axis vs a reference axis over a fixed child
/// cloud, evaluated on a fresh tape.
fn motion_value(child: &[Vec3], pred: &Line3, gt: &Line3, alpha: f64) -> f64 {
    let mut tape = Tape::new();
    let n = child.len();
    let mut data = Vec::with_capacity(3 * n);
    for p in child {
        data.extend_from_slice(&[p.x, p.y, p.z]);
    }
    let child_v = tape.constant(Tensor::matrix(n, 3, data).unwrap()).unwrap();
    let vec3_c = |tape: &mut Tape, v: Vec3| {
        tape.constant(Tensor::from_vec(vec![3], vec![v.x, v.y, v.z]).unwrap())
            .unwrap()
    };
    let d = vec3_c(&mut tape, pred.direction.get());
    let q = vec3_c(&mut tape, pred.pivot);
    let gd = vec3_c(&mut tape, gt.direction.get());
    let gq = vec3_c(&mut tape, gt.pivot);
    let m = motion_term(&mut tape, child_v, d, q, gd, gq, alpha).unwrap();
    tape.value(m).data()[0]
}

#[test]
fn criterion_3_motion_loss_analytics() {
    let mut worst_zero: f64 = 0.0;
    let mut worst_offset: f64 = 0.0;
    let mut worst_slide: f64 = 0.0;

    for s in 0..20u64 {
        let mut r = rng(3300 + s);
        let gt = Line3::new(
            UnitVec3::normalize(rand_unit3(&mut r)).unwrap(),
            v3(
                r.gen_range(-0.5..0.5),
                r.gen_range(-0.5..0.5),
                r.gen_range(-0.5..0.5),
            ),
        );
        let child: Vec<Vec3> = (0..25)
            .map(|_| {
                gt.pivot
                    + v3(
                        r.gen_range(-1.0..1.0),
                        r.gen_range(-1.0..1.0),
                        r.gen_range(-1.0..1.0),
                    )
            })
            .collect();

        // Exactly the reference axis: loss must vanish.
        worst_zero = worst_zero.max(motion_value(&child, &gt, &gt, FRAC_PI_2).abs());

        // Parallel axis offset by t perpendicular to the direction, alpha =
        // pi/2: every point moves by |(I - R) t| = sqrt(2) |t|.
        let u = gt.direction.get();
        let raw = rand_unit3(&mut r);
        let perp = raw - u.scale(raw.dot(u));
        let t = perp.scale(r.gen_range(0.2..0.8) / perp.norm());
        let offset_axis = Line3::new(gt.direction, gt.pivot + t);
        let got = motion_value(&child, &offset_axis, &gt, FRAC_PI_2);
        worst_offset = worst_offset.max((got - (2.0f64).sqrt() * t.norm()).abs());

        // Sliding the predicted pivot along the predicted direction leaves
        // the rotation, hence the loss, unchanged.
        let tilted = UnitVec3::normalize(u + rand_unit3(&mut r).scale(0.2)).unwrap();
        let pred = Line3::new(tilted, gt.pivot + t);
        let slid = Line3::new(tilted, pred.pivot + tilted.get().scale(r.gen_range(-3.0..3.0)));
        let a = motion_value(&child, &pred, &gt, FRAC_PI_2);
        let b = motion_value(&child, &slid, &gt, FRAC_PI_2);
        worst_slide = worst_slide.max((a - b).abs());
    }

    let pass = worst_zero < 1e-12 && worst_offset < 1e-9 && worst_slide < 1e-10;
    let detail = format!(
        "zero at reference {worst_zero:.2e} (<1e-12), perpendicular offset vs sqrt(2)|t| \
         {worst_offset:.2e} (<1e-9), pivot slide {worst_slide:.2e} (<1e-10)"
    );
    verdict(3, "motion-loss analytics", pass, &detail);
}

// ---------------------------------------------------------------------------
// criterion 4: voting oracle and robustness ordering
// ---------------------------------------------------------------------------

/// Points around `axis` with exact per-point fields (direction, distance,
/// foot direction, state).
fn exact_fields(
    axis: &Line3,
    state: f64,
    radii: &[f64],
    r: &mut ChaCha8Rng,
) -> (Vec<Vec3>, JointFields) {
    let n = radii.len();
    let u = axis.direction.get();
    let seed = if u.x.abs() < 0.9 { v3(1.0, 0.0, 0.0) } else { v3(0.0, 1.0, 0.0) };
    let e1 = UnitVec3::normalize(u.cross(seed)).unwrap().get();
    let e2 = u.cross(e1);
    let mut points = Vec::with_capacity(n);
    let mut dir = Vec::with_capacity(3 * n);
    let mut dist = Vec::with_capacity(n);
    let mut pdir = Vec::with_capacity(3 * n);
    let mut states = Vec::with_capacity(n);
    for (i, &rad) in radii.iter().enumerate() {
        let theta = r.gen_range(0.0..TAU);
        let along = -1.0 + 2.0 * (i as f64) / (n as f64);
        let foot = axis.pivot + u.scale(along);
        let p = foot + e1.scale(rad * theta.cos()) + e2.scale(rad * theta.sin());
        points.push(p);
        dir.extend_from_slice(&[u.x, u.y, u.z]);
        dist.push(rad);
        let pd = (foot - p).scale(1.0 / rad);
        pdir.extend_from_slice(&[pd.x, pd.y, pd.z]);
        states.push(state);
    }
    let fields = JointFields {
        dir: Tensor::matrix(n, 3, dir).unwrap(),
        dist: Tensor::from_vec(vec![n], dist).unwrap(),
        pdir: Tensor::matrix(n, 3, pdir).unwrap(),
        state: Tensor::from_vec(vec![n], states).unwrap(),
    };
    (points, fields)
}

/// Angle via atan2 of the cross and dot products: unlike acos(dot), this
/// keeps full relative precision for angles near zero, which the sub-1e-7-
/// degree oracle bound requires.
fn angle_deg(a: UnitVec3, b: UnitVec3) -> f64 {
    let (av, bv) = (a.get(), b.get());
    av.cross(bv).norm().atan2(av.dot(bv)).to_degrees()
}

#[test]
fn criterion_4_voting_oracle() {
    // Exact fields: both voting stages recover the axis to numerical noise.
    let mut worst_dir: f64 = 0.0;
    let mut worst_axis: f64 = 0.0;
    for s in 0..20u64 {
        let mut r = rng(4400 + s);
        let axis = Line3::new(
            UnitVec3::normalize(rand_unit3(&mut r)).unwrap(),
            v3(
                r.gen_range(-0.5..0.5),
                r.gen_range(-0.5..0.5),
                r.gen_range(-0.5..0.5),
            ),
        );
        let radii: Vec<f64> = (0..60).map(|_| r.gen_range(0.5..1.5)).collect();
        let (points, fields) = exact_fields(&axis, 0.8, &radii, &mut r);
        let coarse = coarse_vote(&points, &fields).unwrap();
        let fine = fine_vote(&points, &fields, &coarse, &VotingConfig::default()).unwrap();
        for v in [&coarse, &fine] {
            worst_dir = worst_dir.max(angle_deg(v.direction, axis.direction));
            worst_axis = worst_axis.max(line_to_line_distance(&v.axis(), &axis));
        }
    }

    // Far-point corruption: the banded fine vote must beat the coarse vote
    // in at least 95% of 200 random trials.
    let trials = 200;
    let mut fine_wins = 0;
    for trial in 0..trials {
        let mut r = rng(5000 + trial);
        let axis = Line3::new(
            UnitVec3::normalize(v3(
                r.gen_range(-0.3..0.3),
                r.gen_range(-0.3..0.3),
                1.0,
            ))
            .unwrap(),
            v3(r.gen_range(-0.5..0.5), r.gen_range(-0.5..0.5), 0.0),
        );
        let near: Vec<f64> = (0..40).map(|_| r.gen_range(0.8..1.2)).collect();
        let (mut points, fields) = exact_fields(&axis, 0.5, &near, &mut r);
        let far: Vec<f64> = (0..8).map(|_| r.gen_range(5.0..6.0)).collect();
        let (far_pts, far_fields) = exact_fields(&axis, 0.5, &far, &mut r);
        points.extend_from_slice(&far_pts);
        let n = points.len();
        let mut dir = fields.dir.data().to_vec();
        let mut dist = fields.dist.data().to_vec();
        let mut pdir = fields.pdir.data().to_vec();
        let mut state = fields.state.data().to_vec();
        for i in 0..far_pts.len() {
            let noisy = UnitVec3::normalize(v3(
                far_fields.dir.row(i)[0] + r.gen_range(-0.6..0.6),
                far_fields.dir.row(i)[1] + r.gen_range(-0.6..0.6),
                far_fields.dir.row(i)[2] + r.gen_range(-0.6..0.6),
            ))
            .unwrap()
            .get();
            dir.extend_from_slice(&[noisy.x, noisy.y, noisy.z]);
            dist.push(far_fields.dist.data()[i] + r.gen_range(-1.0..1.0));
            let pd = UnitVec3::normalize(v3(
                far_fields.pdir.row(i)[0] + r.gen_range(-0.6..0.6),
                far_fields.pdir.row(i)[1] + r.gen_range(-0.6..0.6),
                far_fields.pdir.row(i)[2] + r.gen_range(-0.6..0.6),
            ))
            .unwrap()
            .get();
            pdir.extend_from_slice(&[pd.x, pd.y, pd.z]);
            state.push(0.5 + r.gen_range(-1.0..1.0));
        }
        let all = JointFields {
            dir: Tensor::matrix(n, 3, dir).unwrap(),
            dist: Tensor::from_vec(vec![n], dist).unwrap(),
            pdir: Tensor::matrix(n, 3, pdir).unwrap(),
            state: Tensor::from_vec(vec![n], state).unwrap(),
        };
        let coarse = coarse_vote(&points, &all).unwrap();
        let fine = fine_vote(&points, &all, &coarse, &VotingConfig::default()).unwrap();
        let err = |v: &capt::voting::VotedJoint| {
            angle_deg(v.direction, axis.direction) + line_to_line_distance(&v.axis(), &axis)
        };
        if err(&fine) < err(&coarse) {
            fine_wins += 1;
        }
    }

    let frac = fine_wins as f64 / trials as f64;
    let pass = worst_dir < 1e-7 && worst_axis < 1e-9 && frac >= 0.95;
    let detail = format!(
        "exact fields: direction {worst_dir:.2e} deg (<1e-7), axis distance {worst_axis:.2e} \
         (<1e-9); corruption: fine beats coarse in {fine_wins}/{trials} trials ({:.0}%, need 95%)",
        frac * 100.0
    );
    verdict(4, "voting oracle", pass, &detail);
}

// ---------------------------------------------------------------------------
// criterion 5: desk-scale training surrogate (toy laptop)
// ---------------------------------------------------------------------------

fn surrogate_config(dir: &Path, category: &str, count: usize, n_points: usize, seed: u64) -> RunConfig {
    RunConfig {
        category: category.to_string(),
        dataset_dir: dir.join("data"),
        checkpoint: dir.join("model.capt"),
        report_dir: dir.join("reports"),
        seed,
        count,
        n_points,
        ..RunConfig::default()
    }
}

#[test]
fn criterion_5_training_surrogate() {
    let start = Instant::now();
    let tmp = TempDir::new().unwrap();
    let mut cfg = surrogate_config(tmp.path(), "laptop", 286, 512, 7);
    cfg.model.d_e = 64;
    cfg.model.neighbors = 16;
    cfg.model.decoder_hidden = 128;
    cfg.optim = OptimConfig { lr: 2e-3, epochs: 20 };

    generate_dataset(&GenConfig {
        category: cfg.category.clone(),
        count: cfg.count,
        n_points: cfg.n_points,
        seed: cfg.seed,
        out_dir: cfg.dataset_dir.clone(),
    })
    .unwrap();
    let outcome = train(&cfg, &tmp.path().join("train.csv")).unwrap();
    let eval = evaluate(&cfg, "test").unwrap();
    let elapsed = start.elapsed().as_secs_f64();

    let report = &eval.fine;
    let pass = report.pa >= 0.90
        && report.mean.med_dir_deg <= 15.0
        && report.mean.aed <= 0.10
        && report.mean.med_state_deg <= 20.0
        && elapsed <= 1800.0;
    let detail = format!(
        "held-out PA {:.3} (>=0.90), direction MED {:.2} deg (<=15), AED {:.4} (<=0.10), state \
         MED {:.2} deg (<=20); best val epoch {}, {:.0}s total (budget 1800s)",
        report.pa,
        report.mean.med_dir_deg,
        report.mean.aed,
        report.mean.med_state_deg,
        outcome.best_epoch,
        elapsed
    );
    verdict(5, "training surrogate", pass, &detail);
}

// ---------------------------------------------------------------------------
// criterion 6: ablation ordering on the eyeglasses surrogate
// ---------------------------------------------------------------------------

#[test]
fn criterion_6_ablation_direction() {
    let seeds = [11u64, 12, 13, 14, 15];
    let mut wins = 0;
    let mut rows = Vec::new();
    for &seed in &seeds {
        let tmp = TempDir::new().unwrap();
        let mut base = surrogate_config(tmp.path(), "eyeglasses", 100, 192, seed);
        base.model.d_e = 48;
        base.model.neighbors = 12;
        base.model.decoder_hidden = 96;
        base.optim = OptimConfig { lr: 2e-3, epochs: 10 };
        generate_dataset(&GenConfig {
            category: base.category.clone(),
            count: base.count,
            n_points: base.n_points,
            seed,
            out_dir: base.dataset_dir.clone(),
        })
        .unwrap();

        // Full estimator: motion loss on, banded fine vote.
        let mut full = base.clone();
        full.checkpoint = tmp.path().join("full.capt");
        train(&full, &tmp.path().join("full.csv")).unwrap();
        let full_med = evaluate(&full, "test").unwrap().fine.mean.med_dir_deg;

        // Plain estimator: no motion loss, coarse vote only.
        let mut plain = base.clone();
        plain.checkpoint = tmp.path().join("plain.capt");
        plain.loss = LossWeights::default().without_motion();
        train(&plain, &tmp.path().join("plain.csv")).unwrap();
        let plain_med = evaluate(&plain, "test").unwrap().coarse.mean.med_dir_deg;

        if full_med <= plain_med {
            wins += 1;
        }
        rows.push(format!("seed {seed}: full {full_med:.2} vs plain {plain_med:.2}"));
    }
    let pass = wins >= 3;
    let detail = format!(
        "direction MED ordering holds for {wins}/5 seeds (need >=3): {}",
        rows.join("; ")
    );
    verdict(6, "ablation direction", pass, &detail);
}

// ---------------------------------------------------------------------------
// criterion 7: permutation equivariance and CLI determinism
// ---------------------------------------------------------------------------

fn run_capt(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_capt"))
        .args(args)
        .output()
        .expect("spawn capt")
}

#[test]
fn criterion_7_equivariance_and_determinism() {
    // Permutation equivariance of the full forward pass.
    let model = Model::new(
        ModelConfig { d_e: 16, n_links: 2, n_joints: 1, neighbors: 6, decoder_hidden: 16 },
        11,
    )
    .unwrap();
    let mut r = rng(7700);
    let n = 64;
    let cloud: Vec<Vec3> = (0..n)
        .map(|_| {
            v3(
                r.gen_range(-1.0..1.0),
                r.gen_range(-1.0..1.0),
                r.gen_range(-1.0..1.0),
            )
        })
        .collect();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut r);
    let permuted: Vec<Vec3> = perm.iter().map(|&i| cloud[i]).collect();

    let base = model.predict(&cloud).unwrap();
    let shuf = model.predict(&permuted).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let j = perm[i];
        for c in 0..base.seg_logits.cols() {
            worst = worst.max((shuf.seg_logits.row(i)[c] - base.seg_logits.row(j)[c]).abs());
        }
        for k in 0..base.joints.len() {
            for c in 0..3 {
                worst = worst
                    .max((shuf.joints[k].dir.row(i)[c] - base.joints[k].dir.row(j)[c]).abs());
                worst = worst
                    .max((shuf.joints[k].pdir.row(i)[c] - base.joints[k].pdir.row(j)[c]).abs());
            }
            worst = worst
                .max((shuf.joints[k].dist.data()[i] - base.joints[k].dist.data()[j]).abs());
            worst = worst
                .max((shuf.joints[k].state.data()[i] - base.joints[k].state.data()[j]).abs());
        }
    }

    // CLI determinism: every command repeated under --threads 1 produces
    // byte-identical outputs.
    let tmp = TempDir::new().unwrap();
    let cfg = serde_json::json!({
        "category": "laptop",
        "count": 12,
        "n_points": 72,
        "seed": 9,
        "model": {"d_e": 16, "n_links": 2, "n_joints": 1, "neighbors": 6, "decoder_hidden": 16},
        "optim": {"lr": 0.001, "epochs": 1},
        "dataset_dir": tmp.path().join("data"),
        "checkpoint": tmp.path().join("m.capt"),
        "report_dir": tmp.path().join("reports"),
    });
    let cfg_path = tmp.path().join("cfg.json");
    std::fs::write(&cfg_path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    let cstr = cfg_path.to_str().unwrap();

    let mut deterministic = true;
    let mut notes = Vec::new();

    // gen twice into separate roots.
    for (out, tag) in [(tmp.path().join("g1"), "g1"), (tmp.path().join("g2"), "g2")] {
        let o = run_capt(&[
            "--config", cstr, "--threads", "1",
            "gen", "--out", out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "gen {tag} failed: {}", String::from_utf8_lossy(&o.stderr));
    }
    let m1 = std::fs::read(tmp.path().join("g1/manifest.json")).unwrap();
    let m2 = std::fs::read(tmp.path().join("g2/manifest.json")).unwrap();
    if m1 != m2 {
        deterministic = false;
        notes.push("gen manifests differ");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&m1).unwrap();
    let first = manifest["splits"]["train"][0].as_str().unwrap();
    if std::fs::read(tmp.path().join("g1").join(first)).unwrap()
        != std::fs::read(tmp.path().join("g2").join(first)).unwrap()
    {
        deterministic = false;
        notes.push("gen samples differ");
    }

    // train twice against the first generated dataset.
    let data = tmp.path().join("g1");
    for (ck, csv) in [("t1.capt", "t1.csv"), ("t2.capt", "t2.csv")] {
        let o = run_capt(&[
            "--config", cstr, "--threads", "1",
            "train",
            "--dataset", data.to_str().unwrap(),
            "--checkpoint", tmp.path().join(ck).to_str().unwrap(),
            "--csv", tmp.path().join(csv).to_str().unwrap(),
        ]);
        assert!(o.status.success(), "train failed: {}", String::from_utf8_lossy(&o.stderr));
    }
    if std::fs::read(tmp.path().join("t1.capt")).unwrap()
        != std::fs::read(tmp.path().join("t2.capt")).unwrap()
        || std::fs::read(tmp.path().join("t1.csv")).unwrap()
            != std::fs::read(tmp.path().join("t2.csv")).unwrap()
    {
        deterministic = false;
        notes.push("train outputs differ");
    }

    // eval twice.
    let mut evals = Vec::new();
    for rep in ["r1", "r2"] {
        let o = run_capt(&[
            "--config", cstr, "--threads", "1",
            "eval",
            "--dataset", data.to_str().unwrap(),
            "--checkpoint", tmp.path().join("t1.capt").to_str().unwrap(),
            "--report-dir", tmp.path().join(rep).to_str().unwrap(),
        ]);
        assert!(o.status.success(), "eval failed: {}", String::from_utf8_lossy(&o.stderr));
        evals.push(std::fs::read(tmp.path().join(rep).join("test_eval.json")).unwrap());
    }
    if evals[0] != evals[1] {
        deterministic = false;
        notes.push("eval reports differ");
    }

    // infer twice on the same sample.
    let sample = tmp.path().join("g1").join(manifest["splits"]["test"][0].as_str().unwrap());
    let mut infers = Vec::new();
    for _ in 0..2 {
        let o = run_capt(&[
            "--config", cstr, "--threads", "1",
            "infer",
            "--input", sample.to_str().unwrap(),
            "--checkpoint", tmp.path().join("t1.capt").to_str().unwrap(),
        ]);
        assert!(o.status.success(), "infer failed: {}", String::from_utf8_lossy(&o.stderr));
        infers.push(o.stdout);
    }
    if infers[0] != infers[1] {
        deterministic = false;
        notes.push("infer outputs differ");
    }

    let pass = worst < 1e-5 && deterministic;
    let detail = format!(
        "permutation equivariance max deviation {worst:.2e} (<1e-5); CLI determinism {}",
        if deterministic { "byte-identical for gen/train/eval/infer".to_string() } else { notes.join(", ") }
    );
    verdict(7, "equivariance and determinism", pass, &detail);
}

// ---------------------------------------------------------------------------
// criterion 8: metric suite
// ---------------------------------------------------------------------------

#[test]
fn criterion_8_metric_suite() {
    // PA / mIoU vs an independent confusion-matrix oracle.
    let mut worst_pa: f64 = 0.0;
    let mut worst_miou: f64 = 0.0;
    for s in 0..50u64 {
        let mut r = rng(8800 + s);
        let classes = r.gen_range(2..5usize);
        let n = r.gen_range(10..200usize);
        let gt: Vec<u8> = (0..n).map(|_| r.gen_range(0..classes) as u8).collect();
        let pred: Vec<u8> = (0..n).map(|_| r.gen_range(0..classes) as u8).collect();
        let (pa, miou) = seg_metrics(&pred, &gt).unwrap();

        let mut confusion = vec![vec![0usize; classes]; classes];
        for (&p, &g) in pred.iter().zip(&gt) {
            confusion[g as usize][p as usize] += 1;
        }
        let trace: usize = (0..classes).map(|c| confusion[c][c]).sum();
        let pa_oracle = trace as f64 / n as f64;
        let mut ious = Vec::new();
        for c in 0..classes {
            let row: usize = confusion[c].iter().sum();
            if row == 0 {
                continue; // class absent from ground truth
            }
            let col: usize = (0..classes).map(|g| confusion[g][c]).sum();
            let inter = confusion[c][c];
            let union = row + col - inter;
            ious.push(if union == 0 { 0.0 } else { inter as f64 / union as f64 });
        }
        let miou_oracle = ious.iter().sum::<f64>() / ious.len() as f64;
        worst_pa = worst_pa.max((pa - pa_oracle).abs());
        worst_miou = worst_miou.max((miou - miou_oracle).abs());
    }

    // AP monotonicity in the threshold.
    let mut monotone = true;
    for s in 0..100u64 {
        let mut r = rng(9900 + s);
        let errors: Vec<f64> = (0..40).map(|_| r.gen_range(0.0..20.0)).collect();
        let mut prev = 0.0;
        for th in [0.01, 0.05, 0.5, 1.0, 5.0, 10.0, 25.0] {
            let f = fraction_below(&errors, th);
            if f < prev {
                monotone = false;
            }
            prev = f;
        }
    }

    // Threshold mapping: the two position AP columns are exactly the 0.01 and
    // 0.05 cutoffs, and the degree columns the 5/10 cutoffs.
    let mk = |dir_deg: f64, pos: f64, state_deg: f64| SampleEval {
        pa: 1.0,
        miou: 1.0,
        joints: vec![JointErrors { dir_deg, pos, state_deg }],
    };
    let rows = vec![
        mk(3.0, 0.005, 2.0),
        mk(7.0, 0.02, 8.0),
        mk(20.0, 0.08, 30.0),
    ];
    let report = aggregate(&rows, &ApThresholds::default()).unwrap();
    let third = 1.0 / 3.0;
    let mapping_ok = (report.mean.ap1_pos - third).abs() < 1e-12
        && (report.mean.ap5_pos - 2.0 * third).abs() < 1e-12
        && (report.mean.ap5_dir - third).abs() < 1e-12
        && (report.mean.ap10_dir - 2.0 * third).abs() < 1e-12
        && (report.mean.ap5_state - third).abs() < 1e-12
        && (report.mean.ap10_state - 2.0 * third).abs() < 1e-12;

    let pass = worst_pa < 1e-12 && worst_miou < 1e-12 && monotone && mapping_ok;
    let detail = format!(
        "PA vs oracle {worst_pa:.2e} (<1e-12), mIoU vs oracle {worst_miou:.2e} (<1e-12), AP \
         monotone {monotone}, threshold mapping {}",
        if mapping_ok { "exact" } else { "broken" }
    );
    verdict(8, "metric suite", pass, &detail);
}
