//! Binary scene dataset: `TDPD` magic, u16 version, u32 count, then
//! length-prefixed little-endian records.

use std::path::Path;

use super::{DrivableMask, Obstacle, RouteIntent, Scene};
use crate::error::{Error, Result};
use crate::io_util::{write_atomic, Reader};
use crate::trajectory::Trajectory;

pub const DATASET_MAGIC: &[u8; 4] = b"TDPD";
pub const DATASET_VERSION: u16 = 1;

fn encode_record(scene: &Scene, out: &mut Vec<u8>) {
    out.push(scene.intent.code());
    out.extend_from_slice(&scene.seed.to_le_bytes());
    out.extend_from_slice(&(scene.drivable.rows as u32).to_le_bytes());
    out.extend_from_slice(&(scene.drivable.cols as u32).to_le_bytes());
    let mut packed = vec![0u8; scene.drivable.cells.len().div_ceil(8)];
    for (i, &cell) in scene.drivable.cells.iter().enumerate() {
        if cell {
            packed[i / 8] |= 1 << (i % 8);
        }
    }
    out.extend_from_slice(&packed);
    out.extend_from_slice(&(scene.obstacles.len() as u32).to_le_bytes());
    for o in &scene.obstacles {
        for v in o.center.iter().chain(&o.half_extent).chain(&o.velocity) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&(scene.gt_trajectory.horizon() as u32).to_le_bytes());
    for v in scene.gt_trajectory.flat() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_dataset(scenes: &[Scene]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&(scenes.len() as u32).to_le_bytes());
    let mut rec = Vec::new();
    for s in scenes {
        rec.clear();
        encode_record(s, &mut rec);
        out.extend_from_slice(&(rec.len() as u32).to_le_bytes());
        out.extend_from_slice(&rec);
    }
    out
}

fn decode_record(bytes: &[u8], record: usize) -> Result<Scene> {
    let truncated = |what: &str| Error::Parse { record, reason: format!("truncated while reading {what}") };
    let mut r = Reader::new(bytes);
    let code = r.u8().ok_or_else(|| truncated("intent"))?;
    let intent = RouteIntent::from_code(code)
        .ok_or_else(|| Error::Parse { record, reason: format!("unknown intent code {code}") })?;
    let seed = r.u64().ok_or_else(|| truncated("seed"))?;
    let rows = r.u32().ok_or_else(|| truncated("grid rows"))? as usize;
    let cols = r.u32().ok_or_else(|| truncated("grid cols"))? as usize;
    let n_cells = rows
        .checked_mul(cols)
        .filter(|&n| n <= bytes.len() * 8)
        .ok_or_else(|| Error::Parse { record, reason: format!("implausible grid {rows}x{cols}") })?;
    let packed = r.take(n_cells.div_ceil(8)).ok_or_else(|| truncated("drivable mask"))?;
    let cells = (0..n_cells).map(|i| packed[i / 8] & (1 << (i % 8)) != 0).collect();
    let n_obs = r.u32().ok_or_else(|| truncated("obstacle count"))? as usize;
    if n_obs * 48 > r.remaining() {
        return Err(truncated("obstacles"));
    }
    let mut obstacles = Vec::with_capacity(n_obs);
    for _ in 0..n_obs {
        let mut v = [0.0; 6];
        for x in &mut v {
            *x = r.f64().ok_or_else(|| truncated("obstacle"))?;
        }
        obstacles.push(Obstacle { center: [v[0], v[1]], half_extent: [v[2], v[3]], velocity: [v[4], v[5]] });
    }
    let n_wp = r.u32().ok_or_else(|| truncated("waypoint count"))? as usize;
    if n_wp * 16 > r.remaining() {
        return Err(truncated("waypoints"));
    }
    let mut waypoints = Vec::with_capacity(n_wp);
    for _ in 0..n_wp {
        let x = r.f64().ok_or_else(|| truncated("waypoint"))?;
        let y = r.f64().ok_or_else(|| truncated("waypoint"))?;
        waypoints.push([x, y]);
    }
    if r.remaining() != 0 {
        return Err(Error::Parse { record, reason: format!("{} trailing bytes", r.remaining()) });
    }
    Ok(Scene {
        intent,
        seed,
        drivable: DrivableMask { rows, cols, cells },
        obstacles,
        gt_trajectory: Trajectory::new(waypoints),
    })
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Vec<Scene>> {
    let mut r = Reader::new(bytes);
    let header = |reason: &str| Error::Parse { record: 0, reason: format!("header: {reason}") };
    if r.take(4) != Some(DATASET_MAGIC.as_slice()) {
        return Err(header("bad magic"));
    }
    let version = r.u16().ok_or_else(|| header("truncated"))?;
    if version != DATASET_VERSION {
        return Err(Error::Version { found: version, expected: DATASET_VERSION });
    }
    let count = r.u32().ok_or_else(|| header("truncated"))? as usize;
    let mut scenes = Vec::with_capacity(count.min(1 << 16));
    for record in 0..count {
        let len = r
            .u32()
            .ok_or_else(|| Error::Parse { record, reason: "missing record length".into() })?
            as usize;
        let body = r
            .take(len)
            .ok_or_else(|| Error::Parse { record, reason: format!("record truncated (need {len} bytes)") })?;
        scenes.push(decode_record(body, record)?);
    }
    if r.remaining() != 0 {
        return Err(Error::Parse { record: count, reason: "unexpected bytes after last record".into() });
    }
    Ok(scenes)
}

pub fn write_dataset(path: &Path, scenes: &[Scene]) -> Result<()> {
    write_atomic(path, &encode_dataset(scenes))
}

pub fn read_dataset(path: &Path) -> Result<Vec<Scene>> {
    decode_dataset(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::generate_dataset;

    #[test]
    fn round_trip_hundred_scenes() {
        let (scenes, _) = generate_dataset(100, 0.7, 3, None).unwrap();
        let decoded = decode_dataset(&encode_dataset(&scenes)).unwrap();
        assert_eq!(decoded, scenes);
    }

    #[test]
    fn empty_dataset() {
        assert!(decode_dataset(&encode_dataset(&[])).unwrap().is_empty());
    }

    #[test]
    fn truncated_file_names_record() {
        let (scenes, _) = generate_dataset(3, 0.5, 1, None).unwrap();
        let bytes = encode_dataset(&scenes);
        let cut = &bytes[..bytes.len() - 10];
        match decode_dataset(cut) {
            Err(Error::Parse { record, .. }) => assert_eq!(record, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn version_mismatch() {
        let mut bytes = encode_dataset(&[]);
        bytes[4] = 9;
        assert!(matches!(decode_dataset(&bytes), Err(Error::Version { found: 9, .. })));
        assert!(matches!(decode_dataset(b"XXXX"), Err(Error::Parse { .. })));
    }
}
