//! Binary checkpoints: `MDXC`, a little-endian `u32` version, a `u64`
//! manifest length, the JSON manifest, then every parameter value and the
//! batch-norm running statistics as little-endian `f64`.

use std::path::Path;

use mdx_autodiff::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdx::{MdxConfig, MdxParams};

pub const MAGIC: &[u8; 4] = b"MDXC";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Byte offset of the tensor within the payload.
    pub offset: usize,
}

fn entries(p: &MdxParams) -> Vec<TensorEntry> {
    let mut offset = 0;
    p.names
        .iter()
        .zip(&p.tensors)
        .map(|(n, t)| {
            let e = TensorEntry {
                name: n.clone(),
                shape: t.shape().to_vec(),
                dtype: "f64".into(),
                offset,
            };
            offset += 8 * t.len();
            e
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub model: MdxConfig,
    pub tensors: Vec<TensorEntry>,
    /// Channels of each block's running statistics and whether they hold data.
    pub bn_channels: Vec<usize>,
    pub bn_initialized: Vec<bool>,
    pub iteration: usize,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub params: MdxParams,
    pub iteration: usize,
    pub seed: u64,
    pub config_hash: String,
}

fn fmt_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Format(msg.into()))
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let p = &self.params;
        let manifest = Manifest {
            model: p.config.clone(),
            tensors: entries(p),
            bn_channels: p.bn_stats.iter().map(|s| s.mean.len()).collect(),
            bn_initialized: p.bn_stats.iter().map(|s| s.initialized).collect(),
            iteration: self.iteration,
            seed: self.seed,
            config_hash: self.config_hash.clone(),
        };
        let json = serde_json::to_vec(&manifest)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let values = p
            .tensors
            .iter()
            .flat_map(|t| t.data().iter())
            .chain(p.bn_stats.iter().flat_map(|s| s.mean.iter().chain(&s.var)));
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return fmt_err("not a checkpoint (bad magic)");
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return fmt_err(format!("unsupported checkpoint version {}", version));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let Some(json) = bytes.get(16..16usize.saturating_add(len)) else {
            return fmt_err("truncated manifest");
        };
        let manifest: Manifest = serde_json::from_slice(json)?;
        let mut params = MdxParams::init(&manifest.model, 0).map_err(|e| Error::Format(e.to_string()))?;
        let expected = entries(&params);
        if expected != manifest.tensors {
            return fmt_err("tensor list does not match the model architecture");
        }
        let bn_expected: Vec<usize> = params.bn_stats.iter().map(|s| s.mean.len()).collect();
        if bn_expected != manifest.bn_channels || manifest.bn_initialized.len() != bn_expected.len() {
            return fmt_err("batch-norm statistics do not match the model architecture");
        }
        let payload = &bytes[16 + len..];
        let n_values = params.param_count() + 2 * bn_expected.iter().sum::<usize>();
        if payload.len() != 8 * n_values {
            return fmt_err(format!(
                "payload holds {} bytes, expected {}",
                payload.len(),
                8 * n_values
            ));
        }
        let mut vals = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut tensors = Vec::with_capacity(params.tensors.len());
        for t in &params.tensors {
            let data: Vec<f64> = vals.by_ref().take(t.len()).collect();
            tensors.push(Tensor::new(t.shape(), data)?);
        }
        params.set_values(tensors)?;
        for (s, &init) in params.bn_stats.iter_mut().zip(&manifest.bn_initialized) {
            let c = s.mean.len();
            s.mean = vals.by_ref().take(c).collect();
            s.var = vals.by_ref().take(c).collect();
            s.initialized = init;
        }
        Ok(Self {
            params,
            iteration: manifest.iteration,
            seed: manifest.seed,
            config_hash: manifest.config_hash,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::Format(format!("{}: {}", path.display(), e)))?;
        Self::from_bytes(&bytes)
    }
}
