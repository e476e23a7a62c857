//! `NCAE` weight files.
//!
//! ```text
//! b"NCAE" | u32 version = 1 | u32 n_points | u32 z_dim
//! per layer (enc1, enc2, bottleneck, dec1, dec2, dec_out):
//!     u32 rows | u32 cols | rows*cols f64 weights, row-major | rows f64 biases
//! ```
//!
//! Little-endian throughout.

use std::io::Read;
use std::path::Path;

use super::{AutoencoderModel, Dense, N_LAYERS};
use crate::corpus::ByteReader;
use crate::error::{Error, Result};

const MODEL_MAGIC: &[u8; 4] = b"NCAE";
const MODEL_VERSION: u32 = 1;

impl AutoencoderModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(16 + 8 * self.param_count() + 8 * N_LAYERS);
        buf.extend_from_slice(MODEL_MAGIC);
        buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.n_points as u32).to_le_bytes());
        buf.extend_from_slice(&(self.z_dim as u32).to_le_bytes());
        for l in &self.layers {
            buf.extend_from_slice(&(l.rows as u32).to_le_bytes());
            buf.extend_from_slice(&(l.cols as u32).to_le_bytes());
            for x in l.weights.iter().chain(&l.biases) {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "weight file");
        if r.take(4)? != MODEL_MAGIC {
            return Err(Error::Format("weight file: bad magic (expected NCAE)".into()));
        }
        let version = r.u32()?;
        if version != MODEL_VERSION {
            return Err(Error::UnsupportedVersion {
                what: "weight file",
                version,
            });
        }
        let n_points = r.u32()? as usize;
        let z_dim = r.u32()? as usize;
        let mut layers = Vec::with_capacity(N_LAYERS);
        for _ in 0..N_LAYERS {
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let mut layer = Dense::zeros(0, 0);
            layer.rows = rows;
            layer.cols = cols;
            let n_weights = rows
                .checked_mul(cols)
                .ok_or_else(|| Error::Format("weight file: layer too large".into()))?;
            layer.weights = (0..n_weights).map(|_| r.f64()).collect::<Result<_>>()?;
            layer.biases = (0..rows).map(|_| r.f64()).collect::<Result<_>>()?;
            layers.push(layer);
        }
        if !r.is_empty() {
            return Err(Error::Format("weight file: trailing bytes".into()));
        }
        AutoencoderModel::from_layers(n_points, z_dim, layers)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| Error::input(path, e.to_string()))
    }
}
