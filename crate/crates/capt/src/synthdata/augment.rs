use super::SampleRecord;
use crate::error::Result;
use crate::geometry::{UnitVec3, Vec3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Similarity transform drawn for one sample: scale, then rotate, then
/// translate. Rotation composes per-axis turns as Rz * Ry * Rx.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AugmentParams {
    pub angles: [f64; 3],
    pub translation: Vec3,
    pub scale: f64,
}

#[derive(Clone, Copy)]
struct Mat3([[f64; 3]; 3]);

impl Mat3 {
    fn mul_vec(&self, v: Vec3) -> Vec3 {
        let m = &self.0;
        Vec3 {
            x: m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            y: m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            z: m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        }
    }

    fn mul(&self, o: &Mat3) -> Mat3 {
        let mut r = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for (k, ok) in o.0.iter().enumerate() {
                    r[i][j] += self.0[i][k] * ok[j];
                }
            }
        }
        Mat3(r)
    }
}

fn rot_x(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    Mat3([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
}

fn rot_y(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    Mat3([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
}

fn rot_z(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    Mat3([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
}

impl AugmentParams {
    pub fn draw(rng: &mut ChaCha8Rng) -> AugmentParams {
        Self::draw_bounded(rng, PI, 1.0)
    }

    /// Similarity draw with per-axis rotations in [-max_angle, max_angle),
    /// translations in [-max_shift, max_shift)^3, and isotropic scale in
    /// [0.8, 1.2). Zero bounds pin the corresponding component to zero.
    pub fn draw_bounded(rng: &mut ChaCha8Rng, max_angle: f64, max_shift: f64) -> AugmentParams {
        let mut angle = || if max_angle > 0.0 { rng.gen_range(-max_angle..max_angle) } else { 0.0 };
        let angles = [angle(), angle(), angle()];
        let mut shift = || if max_shift > 0.0 { rng.gen_range(-max_shift..max_shift) } else { 0.0 };
        let translation = Vec3 { x: shift(), y: shift(), z: shift() };
        AugmentParams {
            angles,
            translation,
            scale: rng.gen_range(0.8..1.2),
        }
    }

    fn rotation(&self) -> Mat3 {
        rot_z(self.angles[2]).mul(&rot_y(self.angles[1])).mul(&rot_x(self.angles[0]))
    }

    /// Rotate a free vector by this transform's rotation (no scale, no shift).
    pub fn rotate_vec(&self, v: Vec3) -> Vec3 {
        self.rotation().mul_vec(v)
    }

    /// p -> R * (s * p) + t for points and pivots; directions rotate only;
    /// states and limits are pose-intrinsic and untouched.
    pub fn apply(&self, rec: &SampleRecord) -> Result<SampleRecord> {
        let r = self.rotation();
        let map_point = |p: Vec3| r.mul_vec(p.scale(self.scale)) + self.translation;
        let mut out = rec.clone();
        for p in &mut out.points {
            *p = map_point(*p);
        }
        for j in &mut out.joints {
            j.direction = UnitVec3::new(r.mul_vec(j.direction.get()))?;
            j.pivot = map_point(j.pivot);
        }
        Ok(out)
    }
}

/// Full augmentation set from the given stream: per-axis rotations in
/// [-pi, pi), translation in [-1, 1)^3, isotropic scale in [0.8, 1.2).
pub fn augment(rec: &SampleRecord, rng: &mut ChaCha8Rng) -> Result<(SampleRecord, AugmentParams)> {
    let params = AugmentParams::draw(rng);
    Ok((params.apply(rec)?, params))
}

/// Pose jitter used when materializing datasets: keeps objects near the
/// category-canonical frame so category-level cues stay learnable from a few
/// hundred samples, while viewpoint and articulation state still vary freely.
/// Full-strength similarity augmentation remains available via [`augment`].
pub fn pose_jitter(rec: &SampleRecord, rng: &mut ChaCha8Rng) -> Result<(SampleRecord, AugmentParams)> {
    let params = AugmentParams::draw_bounded(rng, DATASET_MAX_ANGLE, DATASET_MAX_SHIFT);
    Ok((params.apply(rec)?, params))
}

/// Per-axis rotation bound for stored datasets (radians).
pub const DATASET_MAX_ANGLE: f64 = 0.25;

/// Per-axis translation bound for stored datasets.
pub const DATASET_MAX_SHIFT: f64 = 0.5;
