//! Binary checkpoints: a JSON manifest followed by a little-endian `f32` payload.
//!
//! ```text
//! "PSTNCKPT" | u32 LE format version | u64 LE manifest length | manifest JSON | payload
//! ```

use std::path::Path;

use pstn_core::data::NormStats;
use pstn_core::model::ModelSpec;
use pstn_core::{rng_from_seed, Model32};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::CliError;

pub const MAGIC: &[u8; 8] = b"PSTNCKPT";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config: ExperimentConfig,
    pub spec: ModelSpec,
    pub norm: Option<NormStats>,
    pub params: Vec<ParamEntry>,
    pub payload_len: usize,
    pub payload_sha256: String,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub model: Model32,
}

fn corrupt(msg: impl Into<String>) -> CliError {
    CliError::Data(format!("checkpoint: {}", msg.into()))
}

impl Checkpoint {
    pub fn new(config: ExperimentConfig, model: Model32, norm: Option<NormStats>) -> Self {
        let mut params = Vec::new();
        let mut offset = 0;
        for (name, p) in model.param_names().into_iter().zip(model.params()) {
            params.push(ParamEntry {
                name,
                shape: p.shape().to_vec(),
                offset,
            });
            offset += 4 * p.len();
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            config,
            spec: model.spec().clone(),
            norm,
            params,
            payload_len: offset,
            payload_sha256: String::new(),
        };
        Self { manifest, model }
    }

    fn payload(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.manifest.payload_len);
        for p in self.model.params() {
            for v in p.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload = self.payload();
        let mut manifest = self.manifest.clone();
        manifest.payload_len = payload.len();
        manifest.payload_sha256 = hex::encode(Sha256::digest(&payload));
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(HEADER_LEN + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CliError> {
        if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(corrupt(format!("unsupported format version {version}")));
        }
        let json_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
        let json_end = usize::try_from(json_len)
            .ok()
            .and_then(|n| HEADER_LEN.checked_add(n))
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| corrupt("truncated manifest"))?;
        let manifest: Manifest =
            serde_json::from_slice(&bytes[HEADER_LEN..json_end]).map_err(|e| corrupt(format!("manifest: {e}")))?;
        let payload = &bytes[json_end..];
        if payload.len() != manifest.payload_len {
            return Err(corrupt(format!("payload is {} bytes, manifest says {}", payload.len(), manifest.payload_len)));
        }
        if hex::encode(Sha256::digest(payload)) != manifest.payload_sha256 {
            return Err(corrupt("payload hash mismatch"));
        }

        let mut model = Model32::new(manifest.spec.clone(), &mut rng_from_seed(0)).map_err(|e| corrupt(e.to_string()))?;
        let names = model.param_names();
        if names.len() != manifest.params.len() {
            return Err(corrupt(format!("{} parameters stored, model has {}", manifest.params.len(), names.len())));
        }
        for ((entry, name), p) in manifest.params.iter().zip(&names).zip(model.params_mut()) {
            if &entry.name != name || entry.shape != p.shape() {
                return Err(corrupt(format!("parameter {} {:?} does not match {name} {:?}", entry.name, entry.shape, p.shape())));
            }
            let end = entry.offset + 4 * p.len();
            let raw = payload.get(entry.offset..end).ok_or_else(|| corrupt(format!("{name} overruns the payload")))?;
            for (v, b) in p.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
                *v = f32::from_le_bytes(b.try_into().expect("4 bytes"));
            }
        }
        Ok(Self { manifest, model })
    }

    pub fn save(&self, path: &Path) -> anyhow::Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        Ok(Self::from_bytes(&bytes)?)
    }
}
