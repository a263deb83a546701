use super::categories::CategorySpec;
use super::targets::{JointTargets, PointwiseTargets};
use super::{DatasetManifest, JointSpec, Provenance, SampleRecord};
use crate::error::{CaptError, Result};
use crate::geometry::{v3, UnitVec3};
use std::fs;
use std::path::Path;

/// Sample file magic; little-endian throughout.
const MAGIC: &[u8; 4] = b"CPTS";
const VERSION: u32 = 1;

fn put_f32(buf: &mut Vec<u8>, x: f64) {
    buf.extend_from_slice(&(x as f32).to_le_bytes());
}

/// Binary layout: magic, version u32, n u32, n_L u8, n_J u8, points n*3 f32,
/// labels n u8, per active joint (dir 3 f32, pivot 3 f32, state f32), then
/// per active joint the target block (dir n*3 f32, dist n f32, pdir n*3 f32,
/// state n f32, valid n u8).
pub fn write_sample(path: &Path, rec: &SampleRecord, targets: &PointwiseTargets) -> Result<()> {
    if targets.n != rec.n() || targets.active_joints != rec.active_joint_count {
        return Err(CaptError::Config(
            "targets do not belong to this record".to_string(),
        ));
    }
    let n = rec.n();
    let n_j = rec.active_joint_count;
    let mut buf = Vec::with_capacity(14 + n * 13 + n_j * (28 + n * 33));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&u32::try_from(n).expect("sample size fits u32").to_le_bytes());
    buf.push(rec.active_link_count as u8);
    buf.push(n_j as u8);
    for p in &rec.points {
        put_f32(&mut buf, p.x);
        put_f32(&mut buf, p.y);
        put_f32(&mut buf, p.z);
    }
    buf.extend_from_slice(&rec.labels);
    for j in &rec.joints {
        let d = j.direction.get();
        for c in [d.x, d.y, d.z, j.pivot.x, j.pivot.y, j.pivot.z, j.state] {
            put_f32(&mut buf, c);
        }
    }
    for jt in targets.joints.iter().take(n_j) {
        for &x in &jt.dir {
            put_f32(&mut buf, x);
        }
        for &x in &jt.dist {
            put_f32(&mut buf, x);
        }
        for &x in &jt.pdir {
            put_f32(&mut buf, x);
        }
        for &x in &jt.state {
            put_f32(&mut buf, x);
        }
        buf.extend(jt.valid.iter().map(|&v| v as u8));
    }
    fs::write(path, &buf).map_err(|e| CaptError::io(path, e))
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.data.len());
        match end {
            Some(end) => {
                let s = &self.data[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(CaptError::Format("sample file truncated".to_string())),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f32(&mut self) -> Result<f64> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()) as f64)
    }

    fn f32_vec(&mut self, len: usize) -> Result<Vec<f64>> {
        let raw = self.take(4 * len)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }
}

/// Reads a sample written by `write_sample`. Joint motion limits are not
/// stored in the file; they are reattached from the category registry, and
/// target blocks are padded back up to the category's joint budget.
pub fn read_sample(path: &Path, category: &CategorySpec) -> Result<(SampleRecord, PointwiseTargets)> {
    let data = fs::read(path).map_err(|e| CaptError::io(path, e))?;
    let mut c = Cursor { data: &data, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(CaptError::Format(format!("{}: bad sample magic", path.display())));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(CaptError::Format(format!(
            "{}: unsupported sample version {version}",
            path.display()
        )));
    }
    let n = c.u32()? as usize;
    let n_l = c.u8()? as usize;
    let n_j = c.u8()? as usize;
    if n_j + 1 != n_l || n_j > category.n_joints {
        return Err(CaptError::Format(format!(
            "{}: {n_l} links / {n_j} joints inconsistent with category {}",
            path.display(),
            category.name
        )));
    }
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let (x, y, z) = (c.f32()?, c.f32()?, c.f32()?);
        points.push(v3(x, y, z));
    }
    let labels = c.take(n)?.to_vec();
    if labels.iter().any(|&l| l as usize >= n_l) {
        return Err(CaptError::Format(format!(
            "{}: label outside link range",
            path.display()
        )));
    }
    let mut joints = Vec::with_capacity(n_j);
    for k in 0..n_j {
        let dir = v3(c.f32()?, c.f32()?, c.f32()?);
        let pivot = v3(c.f32()?, c.f32()?, c.f32()?);
        let state = c.f32()?;
        // f32 storage perturbs the norm past the strict unit gate; renormalize.
        let direction = UnitVec3::normalize(dir).map_err(|_| {
            CaptError::Format(format!("{}: zero joint direction", path.display()))
        })?;
        joints.push(JointSpec { direction, pivot, state, limits: category.state_limits[k] });
    }
    let mut jts = Vec::with_capacity(category.n_joints);
    for _ in 0..n_j {
        let dir = c.f32_vec(3 * n)?;
        let dist = c.f32_vec(n)?;
        let pdir = c.f32_vec(3 * n)?;
        let state = c.f32_vec(n)?;
        let valid_raw = c.take(n)?;
        let mut valid = Vec::with_capacity(n);
        for &b in valid_raw {
            match b {
                0 => valid.push(false),
                1 => valid.push(true),
                _ => {
                    return Err(CaptError::Format(format!(
                        "{}: validity byte {b} is not 0/1",
                        path.display()
                    )))
                }
            }
        }
        jts.push(JointTargets { dir, dist, pdir, state, valid });
    }
    while jts.len() < category.n_joints {
        jts.push(JointTargets {
            dir: vec![0.0; 3 * n],
            dist: vec![0.0; n],
            pdir: vec![0.0; 3 * n],
            state: vec![0.0; n],
            valid: vec![false; n],
        });
    }
    if c.pos != data.len() {
        return Err(CaptError::Format(format!(
            "{}: {} trailing bytes",
            path.display(),
            data.len() - c.pos
        )));
    }
    let provenance = provenance_from_name(path, category.name);
    Ok((
        SampleRecord {
            points,
            labels,
            joints,
            active_link_count: n_l,
            active_joint_count: n_j,
            provenance,
        },
        PointwiseTargets { n, active_joints: n_j, joints: jts },
    ))
}

/// File names encode provenance as {category}_i{instance}_s{sample}.cpts.
pub(crate) fn sample_file_name(category: &str, instance_id: u64, sample_index: u64) -> String {
    format!("{category}_i{instance_id:04}_s{sample_index:05}.cpts")
}

fn provenance_from_name(path: &Path, category: &str) -> Provenance {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
    let mut instance_id = 0;
    let mut sample_index = 0;
    for part in stem.split('_') {
        if let Some(v) = part.strip_prefix('i').and_then(|v| v.parse().ok()) {
            instance_id = v;
        }
        if let Some(v) = part.strip_prefix('s').and_then(|v| v.parse().ok()) {
            sample_index = v;
        }
    }
    Provenance { category: category.to_string(), instance_id, sample_index }
}

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest)
        .map_err(|e| CaptError::Format(format!("manifest serialization: {e}")))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CaptError::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| CaptError::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| CaptError::Format(format!("{}: bad manifest: {e}", path.display())))
}
