//! Pure 3D kernels shared by losses, voting, data generation, and metrics.

use crate::error::{CaptError, Result};
use serde::{Deserialize, Serialize};

/// Norm slack for a vector to count as unit.
pub const UNIT_TOL: f64 = 1e-9;

/// Distance below which a point counts as lying on an axis.
pub const DEGENERACY_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

pub const fn v3(x: f64, y: f64, z: f64) -> Vec3 {
    Vec3 { x, y, z }
}

impl Vec3 {
    pub const ZERO: Vec3 = v3(0.0, 0.0, 0.0);

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        v3(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale(self, s: f64) -> Vec3 {
        v3(self.x * s, self.y * s, self.z * s)
    }

    pub fn dist(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        v3(a[0], a[1], a[2])
    }
}

impl std::ops::Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        v3(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl std::ops::Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        v3(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl std::ops::Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        v3(-self.x, -self.y, -self.z)
    }
}

/// Vector whose Euclidean norm is within UNIT_TOL of 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec3", into = "Vec3")]
pub struct UnitVec3(Vec3);

impl UnitVec3 {
    pub fn new(v: Vec3) -> Result<Self> {
        let n = v.norm();
        if (n - 1.0).abs() > UNIT_TOL {
            return Err(CaptError::Degenerate(format!(
                "expected unit vector, norm is {n}"
            )));
        }
        Ok(UnitVec3(v))
    }

    /// Normalize an arbitrary nonzero vector.
    pub fn normalize(v: Vec3) -> Result<Self> {
        let n = v.norm();
        if n < DEGENERACY_EPS {
            return Err(CaptError::Degenerate(
                "cannot normalize a near-zero vector".into(),
            ));
        }
        Ok(UnitVec3(v.scale(1.0 / n)))
    }

    pub fn get(self) -> Vec3 {
        self.0
    }
}

impl TryFrom<Vec3> for UnitVec3 {
    type Error = CaptError;
    fn try_from(v: Vec3) -> Result<Self> {
        UnitVec3::new(v)
    }
}

impl From<UnitVec3> for Vec3 {
    fn from(u: UnitVec3) -> Vec3 {
        u.0
    }
}

/// Infinite line: every point is pivot + t * direction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Line3 {
    pub direction: UnitVec3,
    pub pivot: Vec3,
}

impl Line3 {
    pub fn new(direction: UnitVec3, pivot: Vec3) -> Self {
        Line3 { direction, pivot }
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.pivot + self.direction.get().scale(t)
    }
}

/// Rotate points rigidly about the axis by alpha radians (axis-angle form).
pub fn rodrigues_rotate(points: &[Vec3], axis: &Line3, alpha: f64) -> Result<Vec<Vec3>> {
    if !alpha.is_finite() {
        return Err(CaptError::Degenerate("rotation angle must be finite".into()));
    }
    let u = axis.direction.get();
    let q = axis.pivot;
    let (s, c) = alpha.sin_cos();
    Ok(points
        .iter()
        .map(|&p| {
            let v = p - q;
            q + v.scale(c) + u.cross(v).scale(s) + u.scale((1.0 - c) * u.dot(v))
        })
        .collect())
}

/// Perpendicular distance from p to the line through q with unit direction u:
/// norm of ((p-q).u) u - (p-q).
pub fn point_to_line_distance(p: Vec3, q: Vec3, u: UnitVec3) -> f64 {
    let w = p - q;
    let t = w.dot(u.get());
    (u.get().scale(t) - w).norm()
}

/// Cosine similarity of two nonzero vectors of any dimension, clamped to
/// [-1, 1] against rounding.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(CaptError::Degenerate(format!(
            "cosine similarity of {} vs {} dims",
            u.len(),
            v.len()
        )));
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(CaptError::Degenerate(
            "cosine similarity of a zero vector".into(),
        ));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Foot of the perpendicular from p to the axis, the unit direction from p
/// toward the foot, and the distance. Errors when p lies on the axis.
pub fn project_point_to_line(p: Vec3, axis: &Line3) -> Result<(Vec3, UnitVec3, f64)> {
    let u = axis.direction.get();
    let w = p - axis.pivot;
    let foot = axis.pivot + u.scale(w.dot(u));
    let perp = foot - p;
    let dist = perp.norm();
    if dist < DEGENERACY_EPS {
        return Err(CaptError::Degenerate(format!(
            "point within {DEGENERACY_EPS} of the axis has no perpendicular direction"
        )));
    }
    Ok((foot, UnitVec3(perp.scale(1.0 / dist)), dist))
}

/// Minimum distance between two infinite lines; for (near-)parallel lines,
/// the perpendicular offset between them.
pub fn line_to_line_distance(a: &Line3, b: &Line3) -> f64 {
    let u = a.direction.get();
    let v = b.direction.get();
    let w = b.pivot - a.pivot;
    let n = u.cross(v);
    let nn = n.norm();
    if nn < DEGENERACY_EPS {
        // parallel: offset of b.pivot from line a
        return point_to_line_distance(b.pivot, a.pivot, a.direction);
    }
    (w.dot(n) / nn).abs()
}
