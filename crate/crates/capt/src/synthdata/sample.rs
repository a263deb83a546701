use super::instance::Instance;
use super::{JointSpec, Provenance, SampleRecord};
use crate::error::{CaptError, Result};
use crate::geometry::{rodrigues_rotate, Line3, UnitVec3, Vec3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const MIN_SAMPLE_POINTS: usize = 16;

/// Oversampling factor for view candidates before back-face culling.
const CANDIDATE_FACTOR: usize = 4;

struct PosedFace {
    origin: Vec3,
    eu: Vec3,
    ev: Vec3,
    normal: Vec3,
    link: u8,
    area: f64,
}

fn rotate_point(p: Vec3, axis: &Line3, angle: f64) -> Vec3 {
    rodrigues_rotate(std::slice::from_ref(&p), axis, angle).expect("axis is unit")[0]
}

fn rotate_dir(d: Vec3, axis: &Line3, angle: f64) -> Vec3 {
    let free = Line3 { direction: axis.direction, pivot: Vec3::ZERO };
    rodrigues_rotate(std::slice::from_ref(&d), &free, angle).expect("axis is unit")[0]
}

/// All faces of all links, posed by the given joint states. Non-base link l
/// is articulated by joint l-1 (depth-1 trees; see Instance::validate).
fn posed_faces(instance: &Instance, states: &[f64]) -> Vec<PosedFace> {
    let mut out = Vec::with_capacity(instance.links.len() * 6);
    for (l, link) in instance.links.iter().enumerate() {
        let pose = if l == 0 { None } else { Some((instance.joints[l - 1].axis, states[l - 1])) };
        for (origin, eu, ev, normal) in link.faces() {
            let (origin, eu, ev, normal) = match &pose {
                None => (origin, eu, ev, normal),
                Some((axis, angle)) => (
                    rotate_point(origin, axis, *angle),
                    rotate_dir(eu, axis, *angle),
                    rotate_dir(ev, axis, *angle),
                    rotate_dir(normal, axis, *angle),
                ),
            };
            out.push(PosedFace {
                origin,
                eu,
                ev,
                normal,
                link: l as u8,
                area: eu.norm() * ev.norm(),
            });
        }
    }
    out
}

/// Single-view observation of a posed instance.
///
/// Draws `4n` area-weighted candidates over all faces, drops candidates on
/// faces whose outward normal points away from the camera (orthographic
/// back-face culling; links do not occlude each other), then resamples the
/// survivors to exactly `n` points. Fewer than `n/4` survivors is a
/// degenerate view.
pub fn sample_view(
    instance: &Instance,
    states: &[f64],
    camera: UnitVec3,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<SampleRecord> {
    instance.validate()?;
    if n < MIN_SAMPLE_POINTS {
        return Err(CaptError::Config(format!(
            "sample size {n} below minimum {MIN_SAMPLE_POINTS}"
        )));
    }
    if states.len() != instance.joints.len() {
        return Err(CaptError::Config(format!(
            "got {} states for {} joints",
            states.len(),
            instance.joints.len()
        )));
    }
    for (k, (&s, joint)) in states.iter().zip(&instance.joints).enumerate() {
        let (lo, hi) = joint.limits;
        if !(lo..=hi).contains(&s) {
            return Err(CaptError::Config(format!(
                "state {s} for joint {k} outside limits [{lo}, {hi}]"
            )));
        }
    }

    let faces = posed_faces(instance, states);
    let total_area: f64 = faces.iter().map(|f| f.area).sum();
    let mut cumulative = Vec::with_capacity(faces.len());
    let mut acc = 0.0;
    for f in &faces {
        acc += f.area;
        cumulative.push(acc);
    }

    let cam = camera.get();
    let n_candidates = CANDIDATE_FACTOR * n;
    let mut kept: Vec<(Vec3, u8)> = Vec::with_capacity(n_candidates);
    for _ in 0..n_candidates {
        let u = rng.gen_range(0.0..total_area);
        let idx = cumulative.partition_point(|&c| c <= u);
        let f = &faces[idx.min(faces.len() - 1)];
        let (a, b) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
        let p = f.origin + f.eu.scale(a) + f.ev.scale(b);
        if f.normal.dot(cam) > 0.0 {
            kept.push((p, f.link));
        }
    }

    let needed = n / 4;
    if kept.len() < needed {
        return Err(CaptError::ViewDegenerate { kept: kept.len(), needed });
    }

    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    if kept.len() >= n {
        // Partial Fisher-Yates: first n entries become a uniform subset.
        for i in 0..n {
            let j = rng.gen_range(i..kept.len());
            kept.swap(i, j);
            points.push(kept[i].0);
            labels.push(kept[i].1);
        }
    } else {
        for &(p, l) in &kept {
            points.push(p);
            labels.push(l);
        }
        for _ in kept.len()..n {
            let (p, l) = kept[rng.gen_range(0..kept.len())];
            points.push(p);
            labels.push(l);
        }
    }

    let joints = instance
        .joints
        .iter()
        .zip(states)
        .map(|(j, &s)| JointSpec {
            direction: j.axis.direction,
            pivot: j.axis.pivot,
            state: s,
            limits: j.limits,
        })
        .collect();

    Ok(SampleRecord {
        points,
        labels,
        joints,
        active_link_count: instance.links.len(),
        active_joint_count: instance.joints.len(),
        provenance: Provenance::default(),
    })
}
