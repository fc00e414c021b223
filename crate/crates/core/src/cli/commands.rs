use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{DataSource, ExperimentConfig, ModelKind};
use crate::codec::{pretrain_codec, CodecParams};
use crate::data::{
    generate, lag1_cross_correlation, load_csv, split_and_window, write_csv_to, SeriesDataset,
    Splits,
};
use crate::digest::sha256_hex;
use crate::error::{Error, Result};
use crate::eval::{
    cpi_audit, evaluate, ContrastBaselineParams, Forecaster, MetricReport, PermutationMap,
    ShuffleMode,
};
use crate::pipeline::{CpiriModel, Interaction};
use crate::spatial::{attention_weights, ChannelFeatureSet};
use crate::train::checkpoint::{Checkpoint, TrainedModel};
use crate::train::{train, train_subset_protocol, TrainReport};

pub(crate) const DATA_CSV: &str = "data.csv";
pub(crate) const CODEC_CKPT: &str = "codec.ckpt";
pub(crate) const PRETRAIN_LOSS: &str = "pretrain_loss.csv";
pub(crate) const MODEL_CKPT: &str = "model.ckpt";
pub(crate) const LOSS_CSV: &str = "loss.csv";
pub(crate) const MANIFEST: &str = "manifest.json";
pub(crate) const METRICS: &str = "metrics.json";
pub(crate) const AUDIT_CSV: &str = "audit.csv";
pub(crate) const AUDIT_MD: &str = "audit.md";
pub(crate) const SUBSET_CSV: &str = "subset.csv";
pub(crate) const EMBEDDINGS_CSV: &str = "embeddings.csv";
pub(crate) const ATTENTION_CSV: &str = "attention.csv";

/// Prefixes CSV text with the comment line that carries the config digest.
pub(crate) fn with_digest(digest: &str, body: &str) -> String {
    format!("# config_digest: {digest}\n{body}")
}

/// Written by `train`; the only artifact that records wall time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_digest: String,
    pub model: ModelKind,
    pub seed: u64,
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
    pub checkpoint_sha256: String,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub config_digest: String,
    pub model: ModelKind,
    pub n_channels: usize,
    pub test: MetricReport,
    pub test_shuffled: MetricReport,
    /// The model with its spatial stage bypassed.
    pub ci_only: Option<MetricReport>,
}

pub(super) struct Context {
    cfg: ExperimentConfig,
    digest: String,
    dir: PathBuf,
}

fn forecaster(m: &TrainedModel) -> Result<&dyn Forecaster> {
    match m {
        TrainedModel::Cpiri(m) => Ok(m),
        TrainedModel::Contrast { params, .. } => Ok(params),
        TrainedModel::Codec(_) => Err(Error::arg(
            "checkpoint holds only a codec; run `train` first",
        )),
    }
}

impl Context {
    pub(super) fn new(cfg: ExperimentConfig) -> Result<Self> {
        let dir = cfg.output.clone();
        fs::create_dir_all(&dir)
            .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        Ok(Self {
            digest: cfg.digest(),
            cfg,
            dir,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let p = self.path(name);
        fs::write(&p, contents).map_err(|e| Error::io(format!("writing {}", p.display()), e))?;
        Ok(p)
    }

    fn dataset(&self) -> Result<SeriesDataset> {
        match &self.cfg.data.source {
            DataSource::Synthetic(spec) => generate(spec),
            DataSource::Csv(p) => load_csv(&self.cfg.resolve(p)),
        }
    }

    fn splits(&self, ds: &SeriesDataset) -> Result<Splits> {
        split_and_window(ds, &self.cfg.data.splits, &self.cfg.window_config())
    }

    fn pretrain(&self, out: &mut dyn Write) -> Result<CodecParams> {
        let (codec, report) = pretrain_codec(
            &self.cfg.codec.corpus,
            &self.cfg.patch_config(),
            &self.cfg.pretrain_schedule(),
        )?;
        let ck = TrainedModel::Codec(codec.clone()).to_checkpoint(&self.digest);
        let path = self.path(CODEC_CKPT);
        ck.save(&path)?;
        let mut loss = String::from("epoch,train_loss\n");
        for (i, l) in report.train_loss.iter().enumerate() {
            loss.push_str(&format!("{i},{l}\n"));
        }
        self.write(PRETRAIN_LOSS, with_digest(&self.digest, &loss))?;
        writeln!(
            out,
            "pretrained codec for {} epochs -> {}",
            report.train_loss.len(),
            path.display()
        )
        .ok();
        if let (Some(v), Some(p)) = (report.val_mae, report.persistence_mae) {
            writeln!(out, "validation MAE {v:.6} (last-value baseline {p:.6})").ok();
        }
        Ok(codec)
    }

    /// The configured codec checkpoint, this run's own codec.ckpt, or a fresh pretraining run.
    fn codec(&self, out: &mut dyn Write) -> Result<CodecParams> {
        let load = |path: &Path| -> Result<CodecParams> {
            match TrainedModel::from_checkpoint(&Checkpoint::load(path)?)? {
                TrainedModel::Codec(c) if c.config == self.cfg.patch_config() => Ok(c),
                TrainedModel::Codec(_) => Err(Error::Config(format!(
                    "{} was built for a different patch configuration",
                    path.display()
                ))),
                _ => Err(Error::Config(format!(
                    "{} does not hold a codec",
                    path.display()
                ))),
            }
        };
        if let Some(p) = &self.cfg.codec.checkpoint {
            let p = self.cfg.resolve(p);
            if !p.exists() {
                return Err(Error::MissingArtifacts {
                    dir: p.parent().map(Path::to_path_buf).unwrap_or_default(),
                    names: vec![p
                        .file_name()
                        .map(|n| n.to_string_lossy().into_owned())
                        .unwrap_or_default()],
                });
            }
            return load(&p);
        }
        let own = self.path(CODEC_CKPT);
        if own.exists() && TrainedModel::config_digest(&Checkpoint::load(&own)?)? == self.digest {
            return load(&own);
        }
        writeln!(
            out,
            "no codec checkpoint for this config; pretraining inline"
        )
        .ok();
        self.pretrain(out)
    }

    fn load_model(&self, checkpoint: Option<&Path>) -> Result<TrainedModel> {
        let path = checkpoint
            .map(Path::to_path_buf)
            .unwrap_or_else(|| self.path(MODEL_CKPT));
        if !path.exists() {
            return Err(Error::MissingArtifacts {
                dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
                names: vec![path
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default()],
            });
        }
        TrainedModel::from_checkpoint(&Checkpoint::load(&path)?)
    }

    fn require_cpiri(&self, what: &str) -> Result<()> {
        if self.cfg.model.kind != ModelKind::Cpiri {
            return Err(Error::Config(format!(
                "{what} needs model.kind = \"cpiri\""
            )));
        }
        Ok(())
    }

    fn new_cpiri(&self, codec: CodecParams, splits: &Splits) -> Result<CpiriModel> {
        Ok(CpiriModel::new(
            codec,
            &self.cfg.spatial,
            splits.stats.clone(),
            self.cfg.init_seed(),
        )?
        .with_interaction(self.cfg.model.interaction)
        .with_pooling(self.cfg.model.pooling))
    }

    pub(super) fn gen_data(&self, out: &mut dyn Write) -> Result<()> {
        let ds = self.dataset()?;
        let mut body = Vec::new();
        write_csv_to(&ds, &mut body).map_err(|e| Error::io("formatting CSV", e))?;
        let path = self.write(
            DATA_CSV,
            with_digest(&self.digest, &String::from_utf8_lossy(&body)),
        )?;
        writeln!(out, "wrote {}", path.display()).ok();
        writeln!(out, "channels {}", ds.n_channels()).ok();
        writeln!(out, "length {}", ds.len()).ok();
        if ds.n_channels() > 1 {
            writeln!(
                out,
                "lag-1 cross-correlation {:.4}",
                lag1_cross_correlation(&ds.values)?
            )
            .ok();
        }
        Ok(())
    }

    pub(super) fn pretrain_codec(&self, out: &mut dyn Write) -> Result<()> {
        self.pretrain(out).map(|_| ())
    }

    pub(super) fn train(&self, out: &mut dyn Write) -> Result<()> {
        let started = Instant::now();
        let ds = self.dataset()?;
        let splits = self.splits(&ds)?;
        writeln!(
            out,
            "{} channels; {} train / {} val / {} test windows",
            ds.n_channels(),
            splits.train.len(),
            splits.val.len(),
            splits.test.len()
        )
        .ok();
        let tc = self.cfg.train_config();
        let (model, report): (TrainedModel, TrainReport) = match self.cfg.model.kind {
            ModelKind::Cpiri => {
                let mut m = self.new_cpiri(self.codec(out)?, &splits)?;
                let r = train(&mut m, &splits.train, &splits.val, &splits.stats, &tc)?;
                (TrainedModel::Cpiri(m), r)
            }
            ModelKind::Contrast => {
                let mut p = ContrastBaselineParams::init(
                    &self.cfg.model.contrast,
                    ds.n_channels(),
                    self.cfg.data.input_len,
                    self.cfg.data.horizon,
                    self.cfg.init_seed(),
                )?;
                let r = train(&mut p, &splits.train, &splits.val, &splits.stats, &tc)?;
                let norm_stats = splits.stats.clone();
                (
                    TrainedModel::Contrast {
                        params: p,
                        norm_stats,
                    },
                    r,
                )
            }
        };
        let bytes = model.to_checkpoint(&self.digest).to_bytes();
        let ck_path = self.write(MODEL_CKPT, &bytes)?;
        self.write(LOSS_CSV, with_digest(&self.digest, &report.loss_csv()))?;
        let manifest = Manifest {
            config_digest: self.digest.clone(),
            model: self.cfg.model.kind,
            seed: self.cfg.seed,
            epochs_run: report.epochs.len(),
            best_epoch: report.best_epoch,
            stopped_early: report.stopped_early,
            checkpoint_sha256: sha256_hex(&bytes),
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        self.write(
            MANIFEST,
            serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
        )?;
        write!(out, "trained {} epochs", manifest.epochs_run).ok();
        if let (Some(b), Some(last)) = (report.best_epoch, report.epochs.last()) {
            write!(
                out,
                " (best epoch {b}, last validation WAPE {:.4}%)",
                last.val_wape
            )
            .ok();
        }
        writeln!(out).ok();
        writeln!(
            out,
            "checkpoint {} sha256 {}",
            ck_path.display(),
            manifest.checkpoint_sha256
        )
        .ok();
        Ok(())
    }

    pub(super) fn eval(&self, checkpoint: Option<&Path>, out: &mut dyn Write) -> Result<()> {
        let model = self.load_model(checkpoint)?;
        let f = forecaster(&model)?;
        let splits = self.splits(&self.dataset()?)?;
        let c = splits.stats.n_channels();
        let test = evaluate(f, &splits.test, &splits.stats, None, ShuffleMode::None)?;
        let pi = PermutationMap::random(c, self.cfg.audit_config().seed);
        let test_shuffled = evaluate(f, &splits.test, &splits.stats, Some(&pi), ShuffleMode::Full)?;
        let ci_only = match &model {
            TrainedModel::Cpiri(m) if m.interaction != Interaction::None => Some(evaluate(
                &|x: &crate::numerics::Tensor| m.ci_forward(x),
                &splits.test,
                &splits.stats,
                None,
                ShuffleMode::None,
            )?),
            _ => None,
        };
        let metrics = Metrics {
            config_digest: self.digest.clone(),
            model: match model {
                TrainedModel::Contrast { .. } => ModelKind::Contrast,
                _ => ModelKind::Cpiri,
            },
            n_channels: c,
            test,
            test_shuffled,
            ci_only,
        };
        self.write(
            METRICS,
            serde_json::to_string_pretty(&metrics).expect("metrics serialize"),
        )?;
        writeln!(
            out,
            "test WAPE {:.4}%  MAE {:.6}",
            metrics.test.wape, metrics.test.mae
        )
        .ok();
        writeln!(
            out,
            "shuffled WAPE {:.4}%  MAE {:.6}",
            metrics.test_shuffled.wape, metrics.test_shuffled.mae
        )
        .ok();
        if let Some(ci) = &metrics.ci_only {
            writeln!(
                out,
                "without spatial stage WAPE {:.4}%  MAE {:.6}",
                ci.wape, ci.mae
            )
            .ok();
        }
        Ok(())
    }

    pub(super) fn audit(&self, checkpoint: Option<&Path>, out: &mut dyn Write) -> Result<()> {
        let model = self.load_model(checkpoint)?;
        let f = forecaster(&model)?;
        let splits = self.splits(&self.dataset()?)?;
        let table = cpi_audit(f, &splits.test, &splits.stats, &self.cfg.audit_config())?;
        self.write(AUDIT_CSV, with_digest(&self.digest, &table.to_csv()))?;
        let md = table.to_markdown();
        self.write(
            AUDIT_MD,
            format!("<!-- config_digest: {} -->\n{md}", self.digest),
        )?;
        write!(out, "{md}").ok();
        Ok(())
    }

    pub(super) fn subset_protocol(&self, out: &mut dyn Write) -> Result<()> {
        self.require_cpiri("subset-protocol")?;
        let splits = self.splits(&self.dataset()?)?;
        let codec = self.codec(out)?;
        let make = || self.new_cpiri(codec.clone(), &splits);
        let (grid, _) = train_subset_protocol(
            &make,
            &splits.train,
            &splits.val,
            &splits.test,
            &splits.stats,
            &self.cfg.subset.fractions,
            &self.cfg.train_config(),
        )?;
        self.write(SUBSET_CSV, with_digest(&self.digest, &grid.to_csv()))?;
        for c in &grid.cells {
            writeln!(
                out,
                "fraction {:.2} shuffle {:5}: {} channels, WAPE {:.4}%, trained in {:.1}s",
                c.fraction, c.shuffle, c.trained_channels, c.wape_pct, c.train_seconds
            )
            .ok();
        }
        Ok(())
    }

    pub(super) fn export_embeddings(
        &self,
        checkpoint: Option<&Path>,
        window: usize,
        out: &mut dyn Write,
    ) -> Result<()> {
        let model = match self.load_model(checkpoint)? {
            TrainedModel::Cpiri(m) => m,
            _ => return Err(Error::arg("export-embeddings needs a CPiRi checkpoint")),
        };
        let splits = self.splits(&self.dataset()?)?;
        let w = splits.test.get(window).ok_or_else(|| {
            Error::arg(format!(
                "window {window} out of range ({} test windows)",
                splits.test.len()
            ))
        })?;
        let (_, h, h_post) = model.forward_with_embeddings(&w.x)?;
        let d = h.shape()[1];
        let mut csv = String::from("channel_id,stage");
        for k in 0..d {
            csv.push_str(&format!(",d{k}"));
        }
        csv.push('\n');
        for (stage, t) in [("pre", &h), ("post", &h_post)] {
            for (i, id) in w.channel_ids.iter().enumerate() {
                csv.push_str(&format!("{id},{stage}"));
                for v in t.row(i) {
                    csv.push_str(&format!(",{v}"));
                }
                csv.push('\n');
            }
        }
        let p = self.write(EMBEDDINGS_CSV, with_digest(&self.digest, &csv))?;
        writeln!(
            out,
            "wrote {} ({} channels x {d})",
            p.display(),
            w.channel_ids.len()
        )
        .ok();
        if model.interaction == Interaction::Attention {
            let maps = attention_weights(&ChannelFeatureSet::from_tensor(h)?, &model.spatial)?;
            let heads = model.spatial.config.n_heads;
            let mut csv = String::from("block,head,query,key,weight\n");
            for (m, a) in maps.iter().enumerate() {
                let c = a.shape()[0];
                for q in 0..c {
                    for k in 0..c {
                        csv.push_str(&format!(
                            "{},{},{},{},{}\n",
                            m / heads,
                            m % heads,
                            w.channel_ids[q],
                            w.channel_ids[k],
                            a.data()[q * c + k]
                        ));
                    }
                }
            }
            let p = self.write(ATTENTION_CSV, with_digest(&self.digest, &csv))?;
            writeln!(out, "wrote {}", p.display()).ok();
        }
        Ok(())
    }
}
