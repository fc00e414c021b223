//! Binary named-tensor archive.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "CPIR"  u16 version
//! u32 entry_count
//! per entry: u32 name_len, name (UTF-8), u8 dtype (0 = f32, 1 = f64, 2 = bytes),
//!            u32 rank, rank × u64 dims, payload
//! u32 CRC32 of everything between the version and the checksum
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{CodecParams, PatchConfig, Pooling};
use crate::data::NormalizationStats;
use crate::error::{Error, Result};
use crate::eval::baseline::{ContrastBaselineParams, ContrastConfig};
use crate::numerics::{Dtype, Parameterized, Tensor};
use crate::pipeline::{CpiriModel, Interaction};
use crate::spatial::{SpatialBlockParams, SpatialConfig};

pub const MAGIC: &[u8; 4] = b"CPIR";
pub const CHECKPOINT_VERSION: u16 = 1;

const TAG_F32: u8 = 0;
const TAG_F64: u8 = 1;
const TAG_BYTES: u8 = 2;

#[derive(Debug, Clone, PartialEq)]
pub enum Entry {
    Tensor(Tensor),
    Bytes(Vec<u8>),
}

/// Ordered entries; order is preserved on disk so identical content gives identical bytes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    entries: Vec<(String, Entry)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_tensor(&mut self, name: impl Into<String>, t: &Tensor) {
        self.entries.push((name.into(), Entry::Tensor(t.clone())));
    }

    pub fn push_bytes(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.entries.push((name.into(), Entry::Bytes(bytes)));
    }

    pub fn entries(&self) -> &[(String, Entry)] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, e)| e)
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        match self.get(name) {
            Some(Entry::Tensor(t)) => Ok(t),
            Some(Entry::Bytes(_)) => {
                Err(Error::Corruption(format!("entry {name} is not a tensor")))
            }
            None => Err(Error::Corruption(format!("checkpoint has no entry {name}"))),
        }
    }

    pub fn bytes(&self, name: &str) -> Result<&[u8]> {
        match self.get(name) {
            Some(Entry::Bytes(b)) => Ok(b),
            Some(Entry::Tensor(_)) => Err(Error::Corruption(format!(
                "entry {name} is not a byte blob"
            ))),
            None => Err(Error::Corruption(format!("checkpoint has no entry {name}"))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut body = Vec::new();
        body.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, e) in &self.entries {
            body.extend_from_slice(&(name.len() as u32).to_le_bytes());
            body.extend_from_slice(name.as_bytes());
            match e {
                Entry::Tensor(t) => {
                    body.push(if t.dtype() == Dtype::F32 {
                        TAG_F32
                    } else {
                        TAG_F64
                    });
                    body.extend_from_slice(&(t.rank() as u32).to_le_bytes());
                    for d in t.shape() {
                        body.extend_from_slice(&(*d as u64).to_le_bytes());
                    }
                    body.extend_from_slice(&t.to_le_bytes());
                }
                Entry::Bytes(b) => {
                    body.push(TAG_BYTES);
                    body.extend_from_slice(&1u32.to_le_bytes());
                    body.extend_from_slice(&(b.len() as u64).to_le_bytes());
                    body.extend_from_slice(b);
                }
            }
        }
        let mut out = Vec::with_capacity(body.len() + 10);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&body);
        out.extend_from_slice(&crc32fast::hash(&body).to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 10 || &bytes[..4] != MAGIC {
            return Err(Error::Corruption("not a checkpoint (bad magic)".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Corruption(format!(
                "checkpoint format version {version}, this build reads version {CHECKPOINT_VERSION}"
            )));
        }
        let body = &bytes[6..bytes.len() - 4];
        let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(Error::Corruption("checksum mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: 0 };
        let n = r.u32()? as usize;
        let mut entries = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Corruption("entry name is not UTF-8".into()))?;
            let tag = r.take(1)?[0];
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(16));
            for _ in 0..rank {
                shape.push(
                    usize::try_from(r.u64()?)
                        .map_err(|_| Error::Corruption("dimension overflow".into()))?,
                );
            }
            let count = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Corruption("dimension overflow".into()))?;
            let entry = match tag {
                TAG_F32 => {
                    let raw = r.take(
                        count
                            .checked_mul(4)
                            .ok_or_else(|| Error::Corruption("size overflow".into()))?,
                    )?;
                    let data = raw
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().expect("4")) as f64)
                        .collect();
                    Entry::Tensor(Tensor::new(shape, data)?.with_dtype(Dtype::F32))
                }
                TAG_F64 => {
                    let raw = r.take(
                        count
                            .checked_mul(8)
                            .ok_or_else(|| Error::Corruption("size overflow".into()))?,
                    )?;
                    let data = raw
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8")))
                        .collect();
                    Entry::Tensor(Tensor::new(shape, data)?)
                }
                TAG_BYTES if rank == 1 => Entry::Bytes(r.take(count)?.to_vec()),
                other => {
                    return Err(Error::Corruption(format!(
                        "entry {name} has unknown dtype tag {other}"
                    )))
                }
            };
            entries.push((name, entry));
        }
        if r.pos != body.len() {
            return Err(Error::Corruption(
                "trailing bytes after the last entry".into(),
            ));
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes =
            std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes).map_err(|e| e.context(path.display()))
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Corruption("checkpoint is truncated".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8")))
    }
}

/// Architecture description stored alongside the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Codec {
        codec: PatchConfig,
    },
    Cpiri {
        codec: PatchConfig,
        spatial: SpatialConfig,
        interaction: Interaction,
        pooling: Pooling,
    },
    Contrast {
        config: ContrastConfig,
        n_channels: usize,
        input_len: usize,
        horizon: usize,
    },
}

/// Any model a checkpoint can hold.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Codec(CodecParams),
    Cpiri(CpiriModel),
    Contrast {
        params: ContrastBaselineParams,
        norm_stats: NormalizationStats,
    },
}

impl TrainedModel {
    pub fn spec(&self) -> ModelSpec {
        match self {
            TrainedModel::Codec(c) => ModelSpec::Codec {
                codec: c.config.clone(),
            },
            TrainedModel::Cpiri(m) => ModelSpec::Cpiri {
                codec: m.codec.config.clone(),
                spatial: m.spatial.config.clone(),
                interaction: m.interaction,
                pooling: m.pooling,
            },
            TrainedModel::Contrast { params, .. } => ModelSpec::Contrast {
                config: params.config.clone(),
                n_channels: params.n_channels(),
                input_len: params.input_len(),
                horizon: params.horizon(),
            },
        }
    }

    fn params(&self) -> &dyn Parameterized {
        match self {
            TrainedModel::Codec(c) => c,
            TrainedModel::Cpiri(m) => m,
            TrainedModel::Contrast { params, .. } => params,
        }
    }

    fn norm_stats(&self) -> Option<&NormalizationStats> {
        match self {
            TrainedModel::Codec(_) => None,
            TrainedModel::Cpiri(m) => Some(&m.norm_stats),
            TrainedModel::Contrast { norm_stats, .. } => Some(norm_stats),
        }
    }

    /// Archives weights, freeze flags, normalization statistics and the config digest.
    pub fn to_checkpoint(&self, config_digest: &str) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.push_bytes("meta.config_digest", config_digest.as_bytes().to_vec());
        ck.push_bytes(
            "meta.model",
            serde_json::to_vec(&self.spec()).expect("spec serializes"),
        );
        let mut flags = BTreeMap::new();
        self.params().visit_params(&mut |n, t| {
            flags.insert(n.to_string(), t.requires_grad());
        });
        ck.push_bytes(
            "meta.trainable",
            serde_json::to_vec(&flags).expect("flags serialize"),
        );
        if let Some(s) = self.norm_stats() {
            ck.push_tensor("norm.mean", &Tensor::vector(s.mean.clone()));
            ck.push_tensor("norm.std", &Tensor::vector(s.std.clone()));
        }
        self.params().visit_params(&mut |n, t| ck.push_tensor(n, t));
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let spec: ModelSpec = serde_json::from_slice(ck.bytes("meta.model")?)
            .map_err(|e| Error::Corruption(format!("model description: {e}")))?;
        let flags: BTreeMap<String, bool> = serde_json::from_slice(ck.bytes("meta.trainable")?)
            .map_err(|e| Error::Corruption(format!("freeze flags: {e}")))?;
        let stats = || -> Result<NormalizationStats> {
            Ok(NormalizationStats {
                mean: ck.tensor("norm.mean")?.data().to_vec(),
                std: ck.tensor("norm.std")?.data().to_vec(),
            })
        };
        let mut model = match spec {
            ModelSpec::Codec { codec } => TrainedModel::Codec(CodecParams::init(&codec, 0)?),
            ModelSpec::Cpiri {
                codec,
                spatial,
                interaction,
                pooling,
            } => TrainedModel::Cpiri(CpiriModel {
                codec: CodecParams::init(&codec, 0)?,
                spatial: SpatialBlockParams::init(&spatial, 0)?,
                norm_stats: stats()?,
                interaction,
                pooling,
            }),
            ModelSpec::Contrast {
                config,
                n_channels,
                input_len,
                horizon,
            } => TrainedModel::Contrast {
                params: ContrastBaselineParams::init(&config, n_channels, input_len, horizon, 0)?,
                norm_stats: stats()?,
            },
        };
        let mut failure = None;
        let target: &mut dyn Parameterized = match &mut model {
            TrainedModel::Codec(c) => c,
            TrainedModel::Cpiri(m) => m,
            TrainedModel::Contrast { params, .. } => params,
        };
        target.visit_params_mut(&mut |name, t| {
            if failure.is_some() {
                return;
            }
            match ck.tensor(name) {
                Ok(stored) if stored.shape() == t.shape() => {
                    let trainable = flags.get(name).copied().unwrap_or(false);
                    *t = stored.clone().with_requires_grad(trainable);
                }
                Ok(stored) => {
                    failure = Some(Error::Corruption(format!(
                        "{name} has shape {:?}, model expects {:?}",
                        stored.shape(),
                        t.shape()
                    )))
                }
                Err(e) => failure = Some(e),
            }
        });
        match failure {
            Some(e) => Err(e),
            None => Ok(model),
        }
    }

    pub fn config_digest(ck: &Checkpoint) -> Result<String> {
        String::from_utf8(ck.bytes("meta.config_digest")?.to_vec())
            .map_err(|_| Error::Corruption("config digest is not UTF-8".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.push_bytes("meta", b"hello".to_vec());
        ck.push_tensor("a", &Tensor::from_fn(vec![2, 3], |i| i as f64 * 0.1));
        ck.push_tensor(
            "b",
            &Tensor::vector(vec![1.5, -2.25]).with_dtype(Dtype::F32),
        );
        ck.push_tensor("s", &Tensor::scalar(7.0));
        ck
    }

    #[test]
    fn roundtrip_is_exact() {
        let ck = sample();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn header_layout() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[..4], b"CPIR");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), CHECKPOINT_VERSION);
        assert_eq!(u32::from_le_bytes(bytes[6..10].try_into().unwrap()), 4);
    }

    #[test]
    fn detects_corruption_and_version() {
        let mut bytes = sample().to_bytes();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::Corruption(_))
        ));
        let mut bytes = sample().to_bytes();
        bytes[4] = 9;
        match Checkpoint::from_bytes(&bytes) {
            Err(Error::Corruption(m)) => assert!(m.contains("version")),
            other => panic!("{other:?}"),
        }
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 7]).is_err());
    }

    #[test]
    fn model_roundtrip_preserves_flags() {
        let cfg = PatchConfig {
            patch_len: 4,
            input_len: 8,
            horizon: 4,
            hidden_dim: 8,
            n_layers: 1,
            n_heads: 2,
        };
        let sp = SpatialConfig {
            dim: 8,
            n_heads: 2,
            ..SpatialConfig::default()
        };
        let m = CpiriModel::new(
            CodecParams::init(&cfg, 4).unwrap(),
            &sp,
            NormalizationStats::identity(2),
            5,
        )
        .unwrap();
        let tm = TrainedModel::Cpiri(m);
        let ck = tm.to_checkpoint("abc");
        let back = TrainedModel::from_checkpoint(&Checkpoint::from_bytes(&ck.to_bytes()).unwrap())
            .unwrap();
        assert_eq!(back, tm);
        assert_eq!(TrainedModel::config_digest(&ck).unwrap(), "abc");
    }
}
