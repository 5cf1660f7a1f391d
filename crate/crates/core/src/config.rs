//! Pipeline configuration: one JSON document with every stage's settings.
//! Missing keys take defaults, unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::maskproc::{Connectivity, DEFAULT_MIN_AREA, DEFAULT_RESTARTS};
use crate::metrics::EvalMode;
use crate::pixelcnn::PixelcnnConfig;
use crate::vqvae::VqvaeConfig;

pub const DEFAULT_PERCENTS: [u32; 7] = [50, 75, 100, 150, 200, 250, 300];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub data_root: String,
    pub checkpoint_dir: String,
    pub report_dir: String,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            data_root: "data".into(),
            checkpoint_dir: "checkpoints".into(),
            report_dir: "reports".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskprocConfig {
    /// Minimum region area at the 256-pixel reference patch size; smaller
    /// patches scale it by area.
    pub min_area: usize,
    /// Number of gray clusters, which equals the number of classes.
    pub k: usize,
    pub connectivity: u32,
    pub restarts: usize,
}

impl Default for MaskprocConfig {
    fn default() -> Self {
        MaskprocConfig {
            min_area: DEFAULT_MIN_AREA,
            k: 4,
            connectivity: 8,
            restarts: DEFAULT_RESTARTS,
        }
    }
}

/// Sizes of the generated toy corpora used by `demo`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemoConfig {
    pub image_count: usize,
    pub image_size: usize,
    pub validation_count: usize,
    pub samples: usize,
    pub seg_train: usize,
    pub seg_validation: usize,
    pub seg_test: usize,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            image_count: 64,
            image_size: 32,
            validation_count: 8,
            samples: 16,
            seg_train: 16,
            seg_validation: 8,
            seg_test: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub vqvae: VqvaeConfig,
    pub pixelcnn: PixelcnnConfig,
    pub maskproc: MaskprocConfig,
    pub percents: Vec<u32>,
    pub seed: u64,
    pub temperature: f64,
    pub eval_mode: EvalMode,
    pub demo: DemoConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            paths: Paths::default(),
            vqvae: VqvaeConfig::default(),
            pixelcnn: PixelcnnConfig::default(),
            maskproc: MaskprocConfig::default(),
            percents: DEFAULT_PERCENTS.to_vec(),
            seed: 0,
            temperature: 1.0,
            eval_mode: EvalMode::PerImageMean,
            demo: DemoConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Parses a config document; blank text means all defaults.
    pub fn from_json(text: &str) -> Result<Self> {
        if text.trim().is_empty() {
            return Ok(PipelineConfig::default().normalized());
        }
        let cfg: PipelineConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        let cfg = cfg.normalized();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::Config(format!("config file {} not found", path.display()))
            } else {
                Error::io(path, e)
            }
        })?;
        PipelineConfig::from_json(&text)
    }

    /// Applies the global seed to every stage and sorts the percents. The
    /// per-stage seeds are derived from `seed`, so values set for them in a
    /// config file are overwritten.
    pub fn normalized(mut self) -> Self {
        self.vqvae.seed = self.seed;
        self.pixelcnn.seed = self.seed.wrapping_add(1);
        self.percents.sort_unstable();
        self.percents.dedup();
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.normalized()
    }

    pub fn validate(&self) -> Result<()> {
        self.vqvae.validate()?;
        self.pixelcnn.validate()?;
        if self.percents.contains(&0) {
            return Err(Error::Config("composition percents must be positive".into()));
        }
        let m = &self.maskproc;
        if m.k < 2 || m.k > 255 {
            return Err(Error::Config(format!("maskproc.k={} must be in 2..=255", m.k)));
        }
        if m.min_area == 0 || m.restarts == 0 {
            return Err(Error::Config("maskproc min_area and restarts must be positive".into()));
        }
        Connectivity::from_count(m.connectivity).map_err(|e| Error::Config(e.to_string()))?;
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature {} must be positive", self.temperature)));
        }
        for (name, p) in [
            ("data_root", &self.paths.data_root),
            ("checkpoint_dir", &self.paths.checkpoint_dir),
            ("report_dir", &self.paths.report_dir),
        ] {
            if p.is_empty() {
                return Err(Error::Config(format!("paths.{name} is empty")));
            }
        }
        let d = &self.demo;
        if d.image_size == 0 || !d.image_size.is_multiple_of(crate::vqvae::DOWNSAMPLING) {
            return Err(Error::Config(format!("demo.image_size={} must be a positive multiple of 4", d.image_size)));
        }
        if d.validation_count >= d.image_count {
            return Err(Error::Config("demo.validation_count must leave some training images".into()));
        }
        if d.samples == 0 || d.seg_train == 0 || d.seg_test == 0 {
            return Err(Error::Config("demo samples, seg_train and seg_test must be positive".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config always serializes") + "\n"
    }

    /// SHA-256 over the compact JSON form.
    pub fn hash(&self) -> String {
        let compact = serde_json::to_string(self).expect("config always serializes");
        hex(&Sha256::digest(compact.as_bytes()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_defaults() {
        for text in ["", "{}", "  \n"] {
            let cfg = PipelineConfig::from_json(text).unwrap();
            assert_eq!(cfg.percents, vec![50, 75, 100, 150, 200, 250, 300]);
            assert_eq!(cfg.maskproc.min_area, 200);
            assert_eq!(cfg.vqvae.num_codes, 10);
            assert_eq!(cfg.vqvae.batch_size, 8);
        }
    }

    #[test]
    fn zero_codes_rejected() {
        let err = PipelineConfig::from_json(r#"{"vqvae": {"num_codes": 0}}"#).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        for text in [r#"{"sed": 3}"#, r#"{"vqvae": {"codes": 3}}"#, r#"{"maskproc": {"area": 3}}"#] {
            assert!(matches!(PipelineConfig::from_json(text).unwrap_err(), Error::Config(_)), "{text}");
        }
    }

    #[test]
    fn out_of_range_values_rejected() {
        for text in [
            r#"{"percents": [0, 50]}"#,
            r#"{"temperature": 0}"#,
            r#"{"maskproc": {"connectivity": 6}}"#,
            r#"{"pixelcnn": {"kernel": 4}}"#,
            r#"{"demo": {"image_size": 30}}"#,
        ] {
            assert!(matches!(PipelineConfig::from_json(text).unwrap_err(), Error::Config(_)), "{text}");
        }
    }

    #[test]
    fn seed_propagates_and_hash_tracks_content() {
        let a = PipelineConfig::from_json(r#"{"seed": 7}"#).unwrap();
        assert_eq!((a.vqvae.seed, a.pixelcnn.seed), (7, 8));
        let b = PipelineConfig::default().with_seed(7);
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), PipelineConfig::default().with_seed(8).hash());
        assert_eq!(PipelineConfig::from_json(&a.to_json()).unwrap(), a);
    }
}
