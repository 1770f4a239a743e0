//! Dataset container and its on-disk format.
//!
//! Binary layout (little endian):
//!
//! | field            | size |
//! |------------------|------|
//! | magic `TRDS`     | 4    |
//! | version          | u32  |
//! | rig fingerprint  | 32   |
//! | seed             | u64  |
//! | landmark count   | u32  |
//! | param count      | u32  |
//! | sample count     | u64  |
//! | dropped count    | u64  |
//! | canvas size      | u32  |
//!
//! followed by one record per sample: `2 * landmarks` f32 coordinates, then
//! `params` f32 weights. A JSON sidecar at `<path>.json` repeats the header
//! and adds the landmark schema and template.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Point;
use crate::landmarks::LandmarkSet;
use crate::raster::read_existing;
use crate::rig::Rig;

const MAGIC: &[u8; 4] = b"TRDS";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 32 + 8 + 4 + 4 + 8 + 8 + 4;

/// Everything about a dataset except the records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub version: u32,
    pub rig_fingerprint: String,
    pub seed: u64,
    pub canvas_size: u32,
    /// Samples drawn, including dropped ones.
    pub requested: usize,
    pub dropped: usize,
    pub sample_count: usize,
    pub landmark_ids: Vec<String>,
    pub landmark_groups: Vec<String>,
    /// Normalized template positions, in landmark order.
    pub template: Vec<Point>,
    /// Component order of the parameter columns (x, y, scale each).
    pub component_ids: Vec<String>,
}

impl DatasetMeta {
    pub fn for_rig(rig: &Rig, seed: u64, requested: usize, dropped: usize) -> DatasetMeta {
        let t = rig.template_set();
        DatasetMeta {
            version: VERSION,
            rig_fingerprint: rig.fingerprint(),
            seed,
            canvas_size: rig.canvas_size,
            requested,
            dropped,
            sample_count: requested - dropped,
            landmark_ids: t.ids().to_vec(),
            landmark_groups: t.groups().to_vec(),
            template: t.points().to_vec(),
            component_ids: rig.feature_ids().iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn landmark_count(&self) -> usize {
        self.landmark_ids.len()
    }

    pub fn param_count(&self) -> usize {
        self.component_ids.len() * 3
    }

    /// The template as a landmark set.
    pub fn template_set(&self) -> Result<LandmarkSet> {
        LandmarkSet::new(
            self.landmark_ids.clone(),
            self.template.clone(),
            self.landmark_groups.clone(),
        )
    }
}

/// Landmark/weight training pairs stored as flat f32 rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    meta: DatasetMeta,
    landmarks: Vec<f32>,
    params: Vec<f32>,
}

impl Dataset {
    /// Builds a dataset from row-major records. `meta.sample_count` is set
    /// from the record count.
    pub fn new(mut meta: DatasetMeta, landmarks: Vec<f32>, params: Vec<f32>) -> Result<Dataset> {
        let ld = meta.landmark_count() * 2;
        let pd = meta.param_count();
        if meta.template.len() != meta.landmark_count()
            || meta.landmark_groups.len() != meta.landmark_count()
        {
            return Err(Error::SchemaMismatch(
                "template, ids and groups differ in length".into(),
            ));
        }
        if ld == 0
            || pd == 0
            || !landmarks.len().is_multiple_of(ld)
            || !params.len().is_multiple_of(pd)
        {
            return Err(Error::SchemaMismatch(format!(
                "record buffers ({} landmark values, {} weights) do not match dims {ld}/{pd}",
                landmarks.len(),
                params.len()
            )));
        }
        let n = landmarks.len() / ld;
        if params.len() / pd != n {
            return Err(Error::SchemaMismatch(format!(
                "{n} landmark rows but {} weight rows",
                params.len() / pd
            )));
        }
        meta.sample_count = n;
        Ok(Dataset {
            meta,
            landmarks,
            params,
        })
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.meta.sample_count
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn landmark_dim(&self) -> usize {
        self.meta.landmark_count() * 2
    }

    pub fn param_dim(&self) -> usize {
        self.meta.param_count()
    }

    /// Interleaved normalized coordinates of sample `i`.
    pub fn landmarks_row(&self, i: usize) -> &[f32] {
        let d = self.landmark_dim();
        &self.landmarks[i * d..(i + 1) * d]
    }

    /// Weights of sample `i` in rig component order.
    pub fn params_row(&self, i: usize) -> &[f32] {
        let d = self.param_dim();
        &self.params[i * d..(i + 1) * d]
    }

    /// Sample `i` as a landmark set plus weights.
    pub fn sample(&self, i: usize) -> Result<(LandmarkSet, Vec<f64>)> {
        let pts = self
            .landmarks_row(i)
            .chunks_exact(2)
            .map(|c| Point::new(c[0] as f64, c[1] as f64))
            .collect();
        let set = self.meta.template_set()?.with_points(pts)?;
        Ok((set, self.params_row(i).iter().map(|&v| v as f64).collect()))
    }

    /// Rejects a rig other than the one that generated the data.
    pub fn check_rig(&self, rig: &Rig) -> Result<()> {
        let found = rig.fingerprint();
        if found != self.meta.rig_fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: self.meta.rig_fingerprint.clone(),
                found,
            });
        }
        Ok(())
    }

    pub fn sidecar_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".json");
        PathBuf::from(s)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let fp = hex::decode(&self.meta.rig_fingerprint)
            .ok()
            .filter(|b| b.len() == 32)
            .ok_or_else(|| Error::invalid("rig_fingerprint", "must be 64 hex digits (sha-256)"))?;
        let mut out =
            Vec::with_capacity(HEADER_LEN + 4 * (self.landmarks.len() + self.params.len()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&fp);
        out.extend_from_slice(&self.meta.seed.to_le_bytes());
        out.extend_from_slice(&(self.meta.landmark_count() as u32).to_le_bytes());
        out.extend_from_slice(&(self.param_dim() as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.meta.dropped as u64).to_le_bytes());
        out.extend_from_slice(&self.meta.canvas_size.to_le_bytes());
        for i in 0..self.len() {
            for v in self.landmarks_row(i).iter().chain(self.params_row(i)) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Decodes records against a sidecar's metadata, checking the header
    /// agrees with it.
    pub fn from_bytes(bytes: &[u8], meta: DatasetMeta, origin: &Path) -> Result<Dataset> {
        let bad = |message: String| Error::Format {
            file: origin.display().to_string(),
            message,
        };
        if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
            return Err(bad("missing TRDS header".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let version = u32_at(4);
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let fingerprint = hex::encode(&bytes[8..40]);
        let seed = u64_at(40);
        let landmark_count = u32_at(48) as usize;
        let param_count = u32_at(52) as usize;
        let sample_count = u64_at(56) as usize;
        let dropped = u64_at(64) as usize;
        let canvas_size = u32_at(72);
        if fingerprint != meta.rig_fingerprint
            || seed != meta.seed
            || landmark_count != meta.landmark_count()
            || param_count != meta.param_count()
            || sample_count != meta.sample_count
            || dropped != meta.dropped
            || canvas_size != meta.canvas_size
        {
            return Err(bad("header disagrees with the JSON sidecar".into()));
        }
        let row = 2 * landmark_count + param_count;
        let body = &bytes[HEADER_LEN..];
        if body.len() != sample_count * row * 4 {
            return Err(bad(format!(
                "expected {} record bytes, found {}",
                sample_count * row * 4,
                body.len()
            )));
        }
        let mut landmarks = Vec::with_capacity(sample_count * 2 * landmark_count);
        let mut params = Vec::with_capacity(sample_count * param_count);
        for (k, c) in body.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(c.try_into().unwrap());
            if k % row < 2 * landmark_count {
                landmarks.push(v);
            } else {
                params.push(v);
            }
        }
        Dataset::new(meta, landmarks, params)
    }

    /// Writes the binary file and its JSON sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))?;
        let side = Dataset::sidecar_path(path);
        let json = serde_json::to_string_pretty(&self.meta).expect("meta serializes");
        std::fs::write(&side, json).map_err(|e| Error::io(&side, e))
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        let side = Dataset::sidecar_path(path);
        let text = read_existing(&side)?;
        let meta: DatasetMeta = serde_json::from_slice(&text).map_err(|e| Error::Parse {
            file: side.display().to_string(),
            message: e.to_string(),
        })?;
        let bytes = read_existing(path)?;
        Dataset::from_bytes(&bytes, meta, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::template::default_rig;

    fn tiny() -> Dataset {
        let rig = default_rig(128);
        let meta = DatasetMeta::for_rig(&rig, 5, 2, 0);
        let ld = meta.landmark_count() * 2;
        let pd = meta.param_count();
        let lm = (0..2 * ld).map(|k| k as f32 / 1000.0).collect();
        let pm = (0..2 * pd).map(|k| k as f32 - 10.0).collect();
        Dataset::new(meta, lm, pm).unwrap()
    }

    #[test]
    fn bytes_round_trip() {
        let d = tiny();
        let bytes = d.to_bytes().unwrap();
        let back = Dataset::from_bytes(&bytes, d.meta().clone(), Path::new("x")).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn header_mismatch_is_rejected() {
        let d = tiny();
        let bytes = d.to_bytes().unwrap();
        let mut meta = d.meta().clone();
        meta.seed += 1;
        assert!(Dataset::from_bytes(&bytes, meta, Path::new("x")).is_err());
    }

    #[test]
    fn truncated_body_is_rejected() {
        let d = tiny();
        let bytes = d.to_bytes().unwrap();
        let r = Dataset::from_bytes(&bytes[..bytes.len() - 1], d.meta().clone(), Path::new("x"));
        assert!(matches!(r, Err(Error::Format { .. })));
    }

    #[test]
    fn fingerprint_guards_rig() {
        let d = tiny();
        d.check_rig(&default_rig(128)).unwrap();
        assert!(matches!(
            d.check_rig(&default_rig(256)),
            Err(Error::FingerprintMismatch { .. })
        ));
    }
}
