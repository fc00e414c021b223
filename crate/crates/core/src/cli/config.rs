use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::{PatchConfig, Pooling, PretrainCorpusSpec, PretrainSchedule};
use crate::data::{SplitRatios, SyntheticSpec, WindowConfig};
use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::eval::{AuditConfig, ContrastConfig};
use crate::numerics::graph::splitmix64;
use crate::numerics::OptimizerConfig;
use crate::pipeline::Interaction;
use crate::spatial::SpatialConfig;
use crate::train::TrainConfig;

/// One experiment, parsed strictly: unknown keys anywhere are rejected.
///
/// The master `seed` drives model initialization, pretraining, training and auditing.
/// Dataset seeds live in the data section because they define the data itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    /// Run directory. Excluded from the digest so a run can be reproduced elsewhere.
    #[serde(default = "default_output", skip_serializing)]
    pub output: PathBuf,
    pub data: DataSection,
    #[serde(default)]
    pub codec: CodecSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub spatial: SpatialConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub audit: AuditSection,
    #[serde(default)]
    pub subset: SubsetSection,
    /// Directory of the config file; relative data paths resolve against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("runs/default")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    /// Wide CSV; relative paths resolve against the config file's directory.
    Csv(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub source: DataSource,
    #[serde(default)]
    pub splits: SplitRatios,
    #[serde(default = "default_input_len")]
    pub input_len: usize,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
}

fn default_input_len() -> usize {
    96
}
fn default_horizon() -> usize {
    96
}
fn default_stride() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodecSection {
    pub patch_len: usize,
    pub hidden_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub corpus: PretrainCorpusSpec,
    pub pretrain: PretrainSection,
    /// Pretrained codec to load instead of pretraining.
    pub checkpoint: Option<PathBuf>,
}

impl Default for CodecSection {
    fn default() -> Self {
        let p = PatchConfig::default();
        Self {
            patch_len: p.patch_len,
            hidden_dim: p.hidden_dim,
            n_layers: p.n_layers,
            n_heads: p.n_heads,
            corpus: PretrainCorpusSpec::default(),
            pretrain: PretrainSection::default(),
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainSection {
    pub epochs: usize,
    pub windows_per_epoch: usize,
    pub batch_size: usize,
    pub validation_series: usize,
    pub validation_windows: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for PretrainSection {
    fn default() -> Self {
        let s = PretrainSchedule::default();
        Self {
            epochs: s.epochs,
            windows_per_epoch: s.windows_per_epoch,
            batch_size: s.batch_size,
            validation_series: s.validation_series,
            validation_windows: s.validation_windows,
            optimizer: s.optimizer,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Cpiri,
    Contrast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub interaction: Interaction,
    pub pooling: Pooling,
    pub contrast: ContrastConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub shuffle_channels: bool,
    pub unfreeze_last_epochs: usize,
    pub channel_fraction: f64,
    pub patience: usize,
    pub optimizer: OptimizerConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            shuffle_channels: t.shuffle_channels,
            unfreeze_last_epochs: t.unfreeze_last_epochs,
            channel_fraction: t.channel_fraction,
            patience: t.patience,
            optimizer: t.optimizer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuditSection {
    pub fractions: Vec<f64>,
    pub n_repeats: usize,
}

impl Default for AuditSection {
    fn default() -> Self {
        let a = AuditConfig::default();
        Self {
            fractions: a.fractions,
            n_repeats: a.n_repeats,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SubsetSection {
    pub fractions: Vec<f64>,
}

impl Default for SubsetSection {
    fn default() -> Self {
        Self {
            fractions: vec![0.25, 0.5, 1.0],
        }
    }
}

// Independent streams per consumer of the master seed.
const STREAM_INIT: u64 = 0x696e_6974;
const STREAM_PRETRAIN: u64 = 0x7072_6574;
const STREAM_TRAIN: u64 = 0x7472_6169;
const STREAM_AUDIT: u64 = 0x6175_6469;

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file; relative CSV paths are anchored to its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text).map_err(|e| e.context(path.display().to_string()))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_relative() {
            self.base_dir.join(p)
        } else {
            p.to_path_buf()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.patch_config().validate().map_err(as_config)?;
        if self.data.stride == 0 {
            return Err(Error::Config("data.stride must be positive".into()));
        }
        self.data.splits.validate().map_err(as_config)?;
        if let DataSource::Synthetic(s) = &self.data.source {
            s.validate().map_err(as_config)?;
        }
        if self.model.kind == ModelKind::Cpiri && self.spatial.dim != self.codec.hidden_dim {
            return Err(Error::Config(format!(
                "spatial.dim {} must equal codec.hidden_dim {}",
                self.spatial.dim, self.codec.hidden_dim
            )));
        }
        self.train_config().validate().map_err(as_config)?;
        if self.audit.n_repeats == 0 {
            return Err(Error::Config("audit.n_repeats must be at least 1".into()));
        }
        for &f in &self.audit.fractions {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Config(format!("audit fraction {f} outside [0, 1]")));
            }
        }
        for &f in &self.subset.fractions {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("subset fraction {f} outside (0, 1]")));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form (output directory excluded).
    pub fn digest(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }

    pub fn patch_config(&self) -> PatchConfig {
        PatchConfig {
            patch_len: self.codec.patch_len,
            input_len: self.data.input_len,
            horizon: self.data.horizon,
            hidden_dim: self.codec.hidden_dim,
            n_layers: self.codec.n_layers,
            n_heads: self.codec.n_heads,
        }
    }

    pub fn window_config(&self) -> WindowConfig {
        WindowConfig {
            input_len: self.data.input_len,
            horizon: self.data.horizon,
            stride: self.data.stride,
        }
    }

    pub fn pretrain_schedule(&self) -> PretrainSchedule {
        let p = &self.codec.pretrain;
        PretrainSchedule {
            epochs: p.epochs,
            windows_per_epoch: p.windows_per_epoch,
            batch_size: p.batch_size,
            validation_series: p.validation_series,
            validation_windows: p.validation_windows,
            optimizer: p.optimizer.clone(),
            seed: self.stream(STREAM_PRETRAIN),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            shuffle_channels: t.shuffle_channels,
            unfreeze_last_epochs: t.unfreeze_last_epochs,
            channel_fraction: t.channel_fraction,
            patience: t.patience,
            master_seed: self.stream(STREAM_TRAIN),
            optimizer: t.optimizer.clone(),
        }
    }

    pub fn audit_config(&self) -> AuditConfig {
        AuditConfig {
            fractions: self.audit.fractions.clone(),
            n_repeats: self.audit.n_repeats,
            seed: self.stream(STREAM_AUDIT),
        }
    }

    pub fn init_seed(&self) -> u64 {
        self.stream(STREAM_INIT)
    }

    fn stream(&self, tag: u64) -> u64 {
        splitmix64(self.seed ^ splitmix64(tag))
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"data": {"source": {"synthetic": {"channels": 3, "length": 400}}, "input_len": 16, "horizon": 4},
        "codec": {"patch_len": 4, "hidden_dim": 8, "n_layers": 1, "n_heads": 2},
        "spatial": {"dim": 8, "n_heads": 2}}"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.model.kind, ModelKind::Cpiri);
        assert_eq!(cfg.patch_config().n_patches(), 4);
    }

    #[test]
    fn unknown_keys_are_rejected_at_any_depth() {
        let top = MINIMAL.replacen('{', r#"{"sede": 1,"#, 1);
        assert!(
            matches!(ExperimentConfig::from_json(&top), Err(Error::Config(m)) if m.contains("sede"))
        );
        let nested = MINIMAL.replace(r#""length": 400"#, r#""length": 400, "couplng": 0.5"#);
        assert!(
            matches!(ExperimentConfig::from_json(&nested), Err(Error::Config(m)) if m.contains("couplng"))
        );
    }

    #[test]
    fn digest_ignores_output_but_tracks_seed() {
        let a = ExperimentConfig::from_json(MINIMAL).unwrap();
        let mut b = a.clone();
        b.output = PathBuf::from("elsewhere");
        assert_eq!(a.digest(), b.digest());
        b.seed = 1;
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let bad = MINIMAL.replace(r#""spatial": {"dim": 8"#, r#""spatial": {"dim": 16"#);
        assert!(matches!(
            ExperimentConfig::from_json(&bad),
            Err(Error::Config(_))
        ));
    }
}
