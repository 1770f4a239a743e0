//! Model file: `TRMD` magic, u32 version, u32 header length, a JSON header
//! (dims, activation, input scale, schema) and then every parameter as a
//! little-endian f32 in flattening order.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Activation, MlpModel, ModelSchema, PARAM_SCALE};
use crate::error::{Error, Result};
use crate::raster::read_existing;

const MAGIC: &[u8; 4] = b"TRMD";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    dims: Vec<usize>,
    activation: Activation,
    input_scale: f64,
    param_scale: f64,
    schema: Option<ModelSchema>,
}

impl MlpModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&Header {
            dims: self.dims.clone(),
            activation: self.activation,
            input_scale: self.input_scale,
            param_scale: PARAM_SCALE,
            schema: self.schema.clone(),
        })
        .expect("header serializes");
        let mut out = Vec::with_capacity(12 + header.len() + 4 * self.parameter_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for v in self.parameters() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<MlpModel> {
        let bad = |message: String| Error::Format {
            file: origin.display().to_string(),
            message,
        };
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(bad("missing TRMD header".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = bytes
            .get(12..12 + hlen)
            .ok_or_else(|| bad("truncated header".into()))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| Error::Parse {
            file: origin.display().to_string(),
            message: e.to_string(),
        })?;
        if header.dims.len() != 5 {
            return Err(bad(format!(
                "expected 5 layer widths, found {}",
                header.dims.len()
            )));
        }
        if header.param_scale != PARAM_SCALE {
            return Err(bad(format!(
                "unsupported param scale {}",
                header.param_scale
            )));
        }
        let mut values = bytes[12 + hlen..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
        let expected: usize = header.dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        if bytes.len() - 12 - hlen != expected * 4 {
            return Err(bad(format!(
                "expected {expected} parameters, found {} bytes",
                bytes.len() - 12 - hlen
            )));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in header.dims.windows(2) {
            let wv: Vec<f64> = values.by_ref().take(w[0] * w[1]).collect();
            weights.push(Array2::from_shape_vec((w[0], w[1]), wv).expect("sized"));
            biases.push(Array1::from_iter(values.by_ref().take(w[1])));
        }
        MlpModel::from_parts(weights, biases, header.input_scale, header.schema)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<MlpModel> {
        MlpModel::from_bytes(&read_existing(path)?, path)
    }
}

#[cfg(test)]
mod tests {
    use super::super::init_model;
    use super::*;

    #[test]
    fn round_trip_rounds_to_f32() {
        let m = init_model(6, 3, [5, 4, 3], 9);
        let back = MlpModel::from_bytes(&m.to_bytes(), Path::new("m")).unwrap();
        let mut rounded = m.clone();
        rounded.round_to_f32();
        assert_eq!(back.parameters(), rounded.parameters());
        assert_eq!(back.dims(), m.dims());
    }

    #[test]
    fn truncated_file_is_rejected() {
        let bytes = init_model(6, 3, [5, 4, 3], 9).to_bytes();
        assert!(MlpModel::from_bytes(&bytes[..bytes.len() - 2], Path::new("m")).is_err());
        assert!(MlpModel::from_bytes(b"nope", Path::new("m")).is_err());
    }
}
