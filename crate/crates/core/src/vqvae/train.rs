use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{normalize, VqvaeModel, VqvaeShape};
use crate::dataprep::{DatasetManifest, DualImage, Palette, Role};
use crate::error::{Error, Result};
use crate::metrics::csv_writer;
use crate::tensor::{Adam, Tensor};

pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const VALIDATION_LOG: &str = "validation_log.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VqvaeConfig {
    pub num_codes: usize,
    pub code_dim: usize,
    pub hidden: [usize; 2],
    pub beta: f64,
    pub decay: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub updates: usize,
    pub learning_rate: f32,
    pub checkpoint_interval: usize,
    pub seed: u64,
}

impl Default for VqvaeConfig {
    fn default() -> Self {
        let shape = VqvaeShape::default();
        VqvaeConfig {
            num_codes: shape.num_codes,
            code_dim: shape.code_dim,
            hidden: shape.hidden,
            beta: shape.beta,
            decay: shape.decay,
            epsilon: shape.epsilon,
            batch_size: 8,
            updates: 3000,
            learning_rate: 3e-4,
            checkpoint_interval: 100,
            seed: 0,
        }
    }
}

impl VqvaeConfig {
    pub fn shape(&self) -> VqvaeShape {
        VqvaeShape {
            num_codes: self.num_codes,
            code_dim: self.code_dim,
            hidden: self.hidden,
            beta: self.beta,
            decay: self.decay,
            epsilon: self.epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.shape().validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.checkpoint_interval == 0 {
            return Err(Error::Config("checkpoint interval must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub step: usize,
    pub recon: f64,
    pub commitment: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    pub step: usize,
    pub recon: f64,
    pub saved: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VqvaeTrainReport {
    pub checkpoint: PathBuf,
    pub log: Vec<TrainLogRow>,
    pub validation: Vec<ValidationRow>,
    pub initial_error: f64,
    pub best_error: f64,
    pub best_step: usize,
}

fn check_images(images: &[DualImage], what: &str) -> Result<(usize, usize)> {
    let first = images
        .first()
        .ok_or_else(|| Error::invalid(format!("{what} set is empty")))?;
    let dims = (first.width(), first.height());
    for (i, img) in images.iter().enumerate() {
        if (img.width(), img.height()) != dims {
            return Err(Error::invalid(format!(
                "{what} image {i} is {}x{}, expected {}x{}",
                img.width(),
                img.height(),
                dims.0,
                dims.1
            )));
        }
    }
    Ok(dims)
}

/// Mean reconstruction error over a set, evaluated in chunks.
fn mean_error(model: &VqvaeModel, set: &[Tensor], chunk: usize) -> Result<f64> {
    let mut total = 0.0;
    for group in set.chunks(chunk) {
        let x = Tensor::concat_batch(group)?;
        total += model.reconstruction_error(&x)? * group.len() as f64;
    }
    Ok(total / set.len() as f64)
}

fn save_atomically(model: &VqvaeModel, dir: &Path, step: usize, error: f64) -> Result<()> {
    let staging = dir.with_extension("tmp");
    if staging.exists() {
        std::fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }
    model.save(&staging, step, Some(error))?;
    if dir.exists() {
        std::fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::rename(&staging, dir).map_err(|e| Error::io(dir, e))
}

fn write_logs(out_dir: &Path, log: &[TrainLogRow], validation: &[ValidationRow]) -> Result<()> {
    let mut w = csv_writer(&out_dir.join(TRAIN_LOG))?;
    for row in log {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(out_dir.join(TRAIN_LOG), e))?;
    let mut w = csv_writer(&out_dir.join(VALIDATION_LOG))?;
    for row in validation {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(out_dir.join(VALIDATION_LOG), e))
}

/// Trains for `config.updates` Adam steps over reshuffled batches. The
/// validation error is measured at step 0, every `checkpoint_interval`
/// steps and after the last step, and the model is persisted under
/// `out_dir/checkpoint` whenever that error is the lowest so far. An empty
/// validation set falls back to the training set.
///
/// A non-finite loss aborts the run; the last persisted checkpoint and the
/// logs up to that point stay on disk.
pub fn train_vqvae(
    train: &[DualImage],
    validation: &[DualImage],
    config: &VqvaeConfig,
    out_dir: &Path,
) -> Result<VqvaeTrainReport> {
    config.validate()?;
    let dims = check_images(train, "training")?;
    let validation = if validation.is_empty() { train } else { validation };
    if check_images(validation, "validation")? != dims {
        return Err(Error::invalid("validation images differ in size from training images"));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut model = VqvaeModel::new(&config.shape(), config.seed)?;
    let adam = Adam::new(config.learning_rate);
    let train_x: Vec<Tensor> = train.iter().map(normalize).collect();
    let val_x: Vec<Tensor> = validation.iter().map(normalize).collect();
    let checkpoint = out_dir.join(CHECKPOINT_DIR);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train_x.len()).collect();
    let mut cursor = order.len();

    let mut log = Vec::with_capacity(config.updates);
    let mut val_log = Vec::new();
    let initial_error = mean_error(&model, &val_x, config.batch_size)?;
    save_atomically(&model, &checkpoint, 0, initial_error)?;
    val_log.push(ValidationRow {
        step: 0,
        recon: initial_error,
        saved: true,
    });
    let (mut best_error, mut best_step) = (initial_error, 0);

    for step in 1..=config.updates {
        let mut batch = Vec::with_capacity(config.batch_size);
        while batch.len() < config.batch_size.min(train_x.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(train_x[order[cursor]].clone());
            cursor += 1;
        }
        let x = Tensor::concat_batch(&batch)?;
        let stats = match model.train_step(&x, &adam, true) {
            Ok(s) => s,
            Err(e) => {
                write_logs(out_dir, &log, &val_log)?;
                return Err(match e {
                    Error::Numeric(msg) => Error::Numeric(format!("step {step}: {msg}; checkpoint from step {best_step} kept")),
                    other => other,
                });
            }
        };
        log.push(TrainLogRow {
            step,
            recon: stats.reconstruction,
            commitment: stats.commitment,
        });
        if step % config.checkpoint_interval == 0 || step == config.updates {
            let error = mean_error(&model, &val_x, config.batch_size)?;
            let saved = error < best_error;
            if saved {
                save_atomically(&model, &checkpoint, step, error)?;
                best_error = error;
                best_step = step;
            }
            log::debug!("vqvae step {step}: validation recon {error:.6}{}", if saved { " (saved)" } else { "" });
            val_log.push(ValidationRow {
                step,
                recon: error,
                saved,
            });
        }
    }
    write_logs(out_dir, &log, &val_log)?;
    Ok(VqvaeTrainReport {
        checkpoint,
        log,
        validation: val_log,
        initial_error,
        best_error,
        best_step,
    })
}

/// Loads the train and validation roles of a manifest (paths relative to
/// `base`) and trains on them.
pub fn train_vqvae_from_manifest(
    manifest: &DatasetManifest,
    base: &Path,
    palette: &Palette,
    config: &VqvaeConfig,
    out_dir: &Path,
) -> Result<VqvaeTrainReport> {
    let load = |role| {
        manifest
            .role(role)
            .map(|e| e.load_dual(base, palette))
            .collect::<Result<Vec<_>>>()
    };
    let train = load(Role::Train)?;
    if train.is_empty() {
        return Err(Error::invalid(format!("manifest {} has no training entries", manifest.name)));
    }
    train_vqvae(&train, &load(Role::Validation)?, config, out_dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataprep::generate_toy_dual_images;

    fn tiny_config(updates: usize) -> VqvaeConfig {
        VqvaeConfig {
            hidden: [8, 8],
            code_dim: 4,
            batch_size: 4,
            updates,
            checkpoint_interval: 5,
            learning_rate: 1e-3,
            seed: 3,
            ..VqvaeConfig::default()
        }
    }

    fn duals(count: usize, seed: u64) -> Vec<DualImage> {
        generate_toy_dual_images(count, 16, 4, seed)
            .unwrap()
            .into_iter()
            .map(|s| s.dual)
            .collect()
    }

    #[test]
    fn zero_updates_checkpoints_initialization() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(0);
        let report = train_vqvae(&duals(4, 0), &[], &cfg, dir.path()).unwrap();
        assert_eq!(report.best_step, 0);
        assert!(report.log.is_empty());
        let (loaded, step, _) = VqvaeModel::load(&report.checkpoint).unwrap();
        let fresh = VqvaeModel::new(&cfg.shape(), cfg.seed).unwrap();
        assert_eq!(step, 0);
        let x = normalize(&duals(1, 9)[0]);
        assert_eq!(loaded.forward(&x).unwrap().x_hat, fresh.forward(&x).unwrap().x_hat);
        assert_eq!(loaded.codebook, fresh.codebook);
    }

    #[test]
    fn same_seed_same_logs() {
        let data = duals(6, 1);
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ra = train_vqvae(&data[..4], &data[4..], &tiny_config(12), a.path()).unwrap();
        let rb = train_vqvae(&data[..4], &data[4..], &tiny_config(12), b.path()).unwrap();
        assert_eq!(ra.log, rb.log);
        assert_eq!(
            std::fs::read(a.path().join(TRAIN_LOG)).unwrap(),
            std::fs::read(b.path().join(TRAIN_LOG)).unwrap()
        );
        let header = std::fs::read_to_string(a.path().join(TRAIN_LOG)).unwrap();
        assert!(header.starts_with("step,recon,commitment\n"));
    }

    #[test]
    fn checkpoint_is_best_validation() {
        let data = duals(6, 2);
        let dir = tempfile::tempdir().unwrap();
        let report = train_vqvae(&data[..4], &data[4..], &tiny_config(20), dir.path()).unwrap();
        let min = report.validation.iter().map(|r| r.recon).fold(f64::INFINITY, f64::min);
        assert_eq!(report.best_error, min);
        let (_, step, best) = VqvaeModel::load(&report.checkpoint).unwrap();
        assert_eq!((step, best), (report.best_step, Some(min)));
    }

    #[test]
    fn diverging_run_keeps_last_good_checkpoint() {
        let data = duals(4, 3);
        let dir = tempfile::tempdir().unwrap();
        let cfg = VqvaeConfig {
            learning_rate: 1e30,
            ..tiny_config(50)
        };
        let err = train_vqvae(&data, &[], &cfg, dir.path()).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)), "{err}");
        assert!(VqvaeModel::load(&dir.path().join(CHECKPOINT_DIR)).is_ok());
        assert!(dir.path().join(TRAIN_LOG).exists());
    }

    #[test]
    fn rejects_empty_training_set() {
        let dir = tempfile::tempdir().unwrap();
        assert!(train_vqvae(&[], &[], &tiny_config(1), dir.path()).is_err());
    }
}
