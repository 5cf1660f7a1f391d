//! Stage drivers shared by the command-line tool and the end-to-end demo.
//!
//! Every path stored in a manifest or a provenance record is relative to the
//! work directory, so a finished work directory can be moved as a whole.

use std::fs::OpenOptions;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codegrid::CodeGrid;
use crate::config::PipelineConfig;
use crate::dataprep::{
    compose_dataset, generate_toy_dual_images, join_dual, split_dual, synthetic_count, ClassMask, DatasetManifest,
    DualImage, ManifestEntry, Palette, Role, Source,
};
use crate::error::{Error, Result};
use crate::maskproc::{label_components, postprocess_mask_with, scaled_min_area, Connectivity, RegionReport};
use crate::metrics::{evaluate_dataset, write_aggregate_csv, write_per_image_csv, DatasetEvaluation, EvalPair};
use crate::pixelcnn::{sample_many, train_pixelcnn, PixelcnnModel, PixelcnnTrainReport};
use crate::report::{
    cross_check, read_metrics_csv, render_per_class_svgs, write_metrics_csv, write_sweep_svg, SweepResult, YRange,
};
use crate::vqvae::{self, train_vqvae_from_manifest, VqvaeModel, VqvaeTrainReport};

pub const LOCK_FILE: &str = ".microseg.lock";
pub const PROVENANCE_DIR: &str = "provenance";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const REGIONS_FILE: &str = "regions.json";
pub const SUMMARY_FILE: &str = "demo_summary.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SWEEP_METRICS: [&str; 3] = ["accuracy", "miou", "missing_class_iou"];

/// Exclusive claim on a work directory, released on drop.
#[derive(Debug)]
pub struct WorkDir {
    root: PathBuf,
    lock: PathBuf,
}

impl WorkDir {
    pub fn acquire(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let lock = root.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(_) => Ok(WorkDir {
                root: root.to_path_buf(),
                lock,
            }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::invalid(format!(
                "work directory {} is in use by another run (delete {} if that run died)",
                root.display(),
                lock.display()
            ))),
            Err(e) => Err(Error::io(&lock, e)),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.root.join(rel)
    }

    pub fn rel(&self, path: &Path) -> String {
        relative(&self.root, path)
    }
}

impl Drop for WorkDir {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.lock);
    }
}

/// `path` relative to `root` with forward slashes; paths outside `root` are
/// kept as given.
pub fn relative(root: &Path, path: &Path) -> String {
    let Ok(p) = path.strip_prefix(root) else {
        return path.to_string_lossy().into_owned();
    };
    p.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

/// What one subcommand read and wrote. Contains nothing time-dependent, so
/// identical runs produce identical records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub subcommand: String,
    pub config_hash: String,
    pub seed: u64,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    #[serde(default)]
    pub flagged: Vec<String>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl Provenance {
    pub fn new(subcommand: &str, config: &PipelineConfig) -> Self {
        Provenance {
            subcommand: subcommand.to_string(),
            config_hash: config.hash(),
            seed: config.seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            flagged: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn input(&mut self, work: &WorkDir, path: &Path) {
        self.inputs.push(work.rel(path));
    }

    pub fn output(&mut self, work: &WorkDir, path: &Path) {
        self.outputs.push(work.rel(path));
    }

    /// Writes `provenance/<subcommand>.json` under the work directory.
    pub fn write(&self, work: &WorkDir) -> Result<PathBuf> {
        let path = work.path(PROVENANCE_DIR).join(format!("{}.json", self.subcommand));
        write_json(&path, self)?;
        Ok(path)
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => std::fs::create_dir_all(p).map_err(|e| Error::io(p, e)),
        _ => Ok(()),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            what: what.to_string(),
        })
    }
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    require(path, "manifest not found")?;
    DatasetManifest::load(path)
}

/// Toy dual images under `out_dir/duals`, listed in `out_dir/manifest.json`.
/// The last `test_count` images take the test role and the
/// `validation_count` before them the validation role.
#[allow(clippy::too_many_arguments)]
pub fn toygen(
    root: &Path,
    out_dir: &Path,
    count: usize,
    size: usize,
    num_classes: usize,
    validation_count: usize,
    test_count: usize,
    seed: u64,
) -> Result<(PathBuf, DatasetManifest)> {
    if validation_count + test_count > count {
        return Err(Error::invalid(format!(
            "{validation_count} validation and {test_count} test images requested out of {count}"
        )));
    }
    let samples = generate_toy_dual_images(count, size, num_classes, seed)?;
    let duals = out_dir.join("duals");
    ensure_dir(&duals)?;
    let entries = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let name = format!("toy_{i:04}");
            let path = duals.join(format!("{name}.png"));
            s.dual.save_png(&path)?;
            let rel = relative(root, &path);
            Ok(ManifestEntry {
                name,
                role: if i + test_count >= count {
                    Role::Test
                } else if i + test_count + validation_count >= count {
                    Role::Validation
                } else {
                    Role::Train
                },
                source: Source::Real,
                image: rel.clone(),
                mask: rel,
                provenance: format!("toy dual image {i} (seed {seed})"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut manifest = DatasetManifest::new("toy", entries)?;
    manifest
        .provenance
        .push(format!("toygen count={count} size={size} classes={num_classes} seed={seed}"));
    let path = out_dir.join(MANIFEST_FILE);
    manifest.save(&path)?;
    Ok((path, manifest))
}

/// A small real-style segmentation set: separate RGB and mask PNGs under
/// `out_dir/images` and `out_dir/masks`, with train, validation and test roles.
#[allow(clippy::too_many_arguments)]
pub fn toy_segmentation_set(
    root: &Path,
    out_dir: &Path,
    name: &str,
    counts: [usize; 3],
    size: usize,
    num_classes: usize,
    seed: u64,
) -> Result<(PathBuf, DatasetManifest)> {
    let total: usize = counts.iter().sum();
    let samples = generate_toy_dual_images(total, size, num_classes, seed)?;
    let (images, masks) = (out_dir.join("images"), out_dir.join("masks"));
    ensure_dir(&images)?;
    ensure_dir(&masks)?;
    let entries = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let role = if i < counts[0] {
                Role::Train
            } else if i < counts[0] + counts[1] {
                Role::Validation
            } else {
                Role::Test
            };
            let stem = format!("{name}_{i:04}");
            let (rgb, _) = split_dual(&s.dual);
            let image = images.join(format!("{stem}.png"));
            let mask = masks.join(format!("{stem}.png"));
            rgb.save_png(&image)?;
            s.mask.save_png(&mask)?;
            Ok(ManifestEntry {
                name: stem,
                role,
                source: Source::Real,
                image: relative(root, &image),
                mask: relative(root, &mask),
                provenance: format!("toy segmentation pair {i} (seed {seed})"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut manifest = DatasetManifest::new(name, entries)?;
    manifest
        .provenance
        .push(format!("toy segmentation set counts={counts:?} size={size} classes={num_classes} seed={seed}"));
    let path = out_dir.join(MANIFEST_FILE);
    manifest.save(&path)?;
    Ok((path, manifest))
}

pub fn train_vqvae_stage(
    root: &Path,
    manifest_path: &Path,
    config: &PipelineConfig,
    out_dir: &Path,
) -> Result<VqvaeTrainReport> {
    let manifest = load_manifest(manifest_path)?;
    let palette = Palette::evenly_spaced(config.maskproc.k)?;
    train_vqvae_from_manifest(&manifest, root, &palette, &config.vqvae, out_dir)
}

pub fn load_vqvae(checkpoint: &Path) -> Result<VqvaeModel> {
    require(checkpoint, "VQ-VAE checkpoint not found; run train-vqvae first")?;
    Ok(VqvaeModel::load(checkpoint)?.0)
}

pub fn load_pixelcnn(checkpoint: &Path) -> Result<PixelcnnModel> {
    require(checkpoint, "PixelCNN checkpoint not found; run train-pixelcnn first")?;
    Ok(PixelcnnModel::load(checkpoint)?.0)
}

/// Encodes the train and validation entries of a manifest into
/// `out_dir/<name>.mszg`, one grid per image.
pub fn encode_stage(root: &Path, checkpoint: &Path, manifest_path: &Path, palette: &Palette, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let model = load_vqvae(checkpoint)?;
    let manifest = load_manifest(manifest_path)?;
    ensure_dir(out_dir)?;
    let entries: Vec<&ManifestEntry> = manifest.entries.iter().filter(|e| e.role != Role::Test).collect();
    if entries.is_empty() {
        return Err(Error::invalid(format!("manifest {} has no train or validation entries", manifest.name)));
    }
    entries
        .par_iter()
        .map(|e| {
            let grid = model.encode_to_codes(&e.load_dual(root, palette)?)?;
            let path = out_dir.join(format!("{}.mszg", e.name));
            grid.save(&path)?;
            Ok(path)
        })
        .collect()
}

/// Every `.mszg` file of a directory, in file-name order.
pub fn load_grids(dir: &Path) -> Result<Vec<(PathBuf, CodeGrid)>> {
    require(dir, "code grid directory not found; run encode first")?;
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|entry| entry.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|x| x == "mszg"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::MissingArtifact {
            path: dir.to_path_buf(),
            what: "no .mszg code grids".into(),
        });
    }
    paths
        .into_iter()
        .map(|p| {
            let g = CodeGrid::load(&p)?;
            Ok((p, g))
        })
        .collect()
}

pub fn train_pixelcnn_stage(grid_dir: &Path, config: &PipelineConfig, out_dir: &Path) -> Result<PixelcnnTrainReport> {
    let grids: Vec<CodeGrid> = load_grids(grid_dir)?.into_iter().map(|(_, g)| g).collect();
    train_pixelcnn(&grids, &config.pixelcnn, out_dir)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledItem {
    pub name: String,
    pub grid: PathBuf,
    pub dual: PathBuf,
}

/// Draws `count` code grids and decodes each to a dual image, under
/// `out_dir/grids` and `out_dir/duals`.
#[allow(clippy::too_many_arguments)]
pub fn sample_stage(
    pixelcnn_checkpoint: &Path,
    vqvae_checkpoint: &Path,
    count: usize,
    grid_dims: (usize, usize),
    seed: u64,
    temperature: f64,
    out_dir: &Path,
) -> Result<Vec<SampledItem>> {
    let prior = load_pixelcnn(pixelcnn_checkpoint)?;
    let vq = load_vqvae(vqvae_checkpoint)?;
    if prior.num_codes() != vq.shape().num_codes {
        return Err(Error::invalid(format!(
            "PixelCNN has K={} but the VQ-VAE codebook has K={}",
            prior.num_codes(),
            vq.shape().num_codes
        )));
    }
    let grids = sample_many(&prior, count, grid_dims.0, grid_dims.1, seed, temperature)?;
    let (grid_dir, dual_dir) = (out_dir.join("grids"), out_dir.join("duals"));
    ensure_dir(&grid_dir)?;
    ensure_dir(&dual_dir)?;
    grids
        .par_iter()
        .enumerate()
        .map(|(i, g)| {
            let name = format!("sample_{i:04}");
            let grid = grid_dir.join(format!("{name}.mszg"));
            let dual = dual_dir.join(format!("{name}.png"));
            g.save(&grid)?;
            vq.decode_codes(g)?.save_png(&dual)?;
            Ok(SampledItem { name, grid, dual })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CleanedSample {
    pub name: String,
    pub input: String,
    pub dual: String,
    pub mask: String,
    pub report: RegionReport,
    /// True when no foreground class survived post-processing.
    pub flagged: bool,
}

/// Clusters the mask plane of each dual image, removes regions below the
/// size-scaled minimum area and writes the cleaned dual image and mask
/// under `out_dir/duals` and `out_dir/masks`, plus `out_dir/regions.json`.
pub fn postprocess_stage(
    root: &Path,
    inputs: &[PathBuf],
    config: &PipelineConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<Vec<CleanedSample>> {
    let m = &config.maskproc;
    let palette = Palette::evenly_spaced(m.k)?;
    let connectivity = Connectivity::from_count(m.connectivity)?;
    let (dual_dir, mask_dir) = (out_dir.join("duals"), out_dir.join("masks"));
    ensure_dir(&dual_dir)?;
    ensure_dir(&mask_dir)?;
    let cleaned = inputs
        .par_iter()
        .enumerate()
        .map(|(i, input)| {
            require(input, "dual image not found")?;
            let dual = DualImage::load_png(input)?;
            let name = input
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| format!("image_{i:04}"));
            let min_area = scaled_min_area(m.min_area, dual.width().max(dual.height()));
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let (rgb, plane) = split_dual(&dual);
            let out = postprocess_mask_with(&plane, m.k, min_area, rng.gen(), connectivity, m.restarts)?;
            let mask = ClassMask::new(out.mask.width(), out.mask.height(), out.mask.classes().to_vec(), palette.clone())?;
            let dual_path = dual_dir.join(format!("{name}.png"));
            let mask_path = mask_dir.join(format!("{name}.png"));
            join_dual(&rgb, &mask)?.save_png(&dual_path)?;
            mask.save_png(&mask_path)?;
            let report = out.report(min_area);
            let flagged = report.class_areas.iter().skip(1).all(|&a| a == 0);
            if flagged {
                log::warn!("{name}: no foreground class left after post-processing");
            }
            Ok(CleanedSample {
                name,
                input: relative(root, input),
                dual: relative(root, &dual_path),
                mask: relative(root, &mask_path),
                report,
                flagged,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_json(&out_dir.join(REGIONS_FILE), &cleaned)?;
    Ok(cleaned)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComposeOutcome {
    pub written: Vec<ComposedManifest>,
    /// Percents whose synthetic count exceeds the pool, with the reason.
    pub skipped: Vec<(u32, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComposedManifest {
    pub percent: u32,
    pub path: String,
    pub added: usize,
}

/// One manifest per percent, `out_dir/manifest_<p>.json`. With
/// `skip_unfit` a percent that needs more synthetic images than the pool
/// holds is logged and skipped instead of failing the stage.
pub fn compose_stage(
    root: &Path,
    base_path: &Path,
    pool: &[String],
    percents: &[u32],
    seed: u64,
    skip_unfit: bool,
    out_dir: &Path,
) -> Result<ComposeOutcome> {
    let base = load_manifest(base_path)?;
    ensure_dir(out_dir)?;
    let mut outcome = ComposeOutcome {
        written: Vec::new(),
        skipped: Vec::new(),
    };
    for &percent in percents {
        match compose_dataset(&base, pool, percent, seed) {
            Ok(m) => {
                let path = out_dir.join(format!("manifest_{percent}.json"));
                m.save(&path)?;
                outcome.written.push(ComposedManifest {
                    percent,
                    path: relative(root, &path),
                    added: synthetic_count(base.count(Role::Train), percent),
                });
            }
            Err(e @ Error::PoolTooSmall { .. }) if skip_unfit => {
                log::info!("compose {percent}% skipped: {e}");
                outcome.skipped.push((percent, e.to_string()));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(outcome)
}

fn load_gt_mask(root: &Path, entry: &ManifestEntry, palette: &Palette) -> Result<ClassMask> {
    if entry.source == Source::Synthetic || entry.image == entry.mask {
        let dual = DualImage::load_png(&root.join(&entry.image))?;
        ClassMask::from_gray_plane(&dual.mask_plane(), palette.clone())
    } else {
        ClassMask::load_png(&root.join(&entry.mask), palette.clone())
    }
}

/// Scores the test role of a manifest. Predictions are read from
/// `predictions/<name>.png`; without a prediction directory the ground
/// truth is scored against itself.
pub fn evaluate_manifest(
    root: &Path,
    manifest: &DatasetManifest,
    palette: &Palette,
    predictions: Option<&Path>,
    dataset: &str,
    percent: u32,
) -> Result<DatasetEvaluation> {
    let test: Vec<&ManifestEntry> = manifest.role(Role::Test).collect();
    if test.is_empty() {
        return Err(Error::invalid(format!("manifest {} has no test entries", manifest.name)));
    }
    let masks = test
        .par_iter()
        .map(|e| {
            let gt = load_gt_mask(root, e, palette)?;
            let pred = match predictions {
                Some(dir) => {
                    let path = dir.join(format!("{}.png", e.name));
                    require(&path, &format!("prediction for {}", e.name))?;
                    ClassMask::load_png(&path, palette.clone())?
                }
                None => gt.clone(),
            };
            Ok((gt, pred))
        })
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<EvalPair<'_>> = test
        .iter()
        .zip(&masks)
        .map(|(e, (gt, pred))| EvalPair {
            image: e.name.clone(),
            gt,
            pred,
        })
        .collect();
    evaluate_dataset(&pairs, palette.num_classes(), dataset, percent)
}

/// Writes the sweep plots for the three headline metrics and one plot per
/// class. Returns the written files and any warnings.
pub fn report_stage(
    results: &[SweepResult],
    metrics: &[&str],
    y_override: Option<YRange>,
    num_classes: usize,
    out_dir: &Path,
) -> Result<(Vec<PathBuf>, Vec<String>)> {
    let mut files = Vec::new();
    let mut warnings = Vec::new();
    for &metric in metrics {
        let y = y_override.unwrap_or_else(|| YRange::default_for(metric));
        let path = out_dir.join(format!("{metric}.svg"));
        let plot = write_sweep_svg(results, metric, y, &path)?;
        warnings.extend(plot.warnings);
        files.push(path);
    }
    let per_class = render_per_class_svgs(results, num_classes, y_override, &out_dir.join("per_class"))?;
    files.extend(per_class.files);
    warnings.extend(per_class.warnings);
    Ok((files, warnings))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemoSummary {
    pub seed: u64,
    pub config_hash: String,
    pub vqvae_initial_error: f64,
    pub vqvae_best_error: f64,
    pub vqvae_best_step: usize,
    pub pixelcnn_best_loss: f64,
    pub pixelcnn_best_step: usize,
    pub pixelcnn_train_count: usize,
    pub pixelcnn_validation_count: usize,
    pub min_area: usize,
    pub samples: Vec<CleanedSample>,
    pub flagged: Vec<String>,
    pub composed: Vec<ComposedManifest>,
    pub skipped_percents: Vec<u32>,
    pub verify_problems: Vec<String>,
}

/// Where each demo artifact lives, relative to the work directory.
#[derive(Debug, Clone)]
pub struct DemoLayout {
    pub toy: PathBuf,
    pub codes: PathBuf,
    pub samples: PathBuf,
    pub cleaned: PathBuf,
    pub segbase: PathBuf,
    pub composed: PathBuf,
    pub vqvae: PathBuf,
    pub pixelcnn: PathBuf,
    pub reports: PathBuf,
}

impl DemoLayout {
    pub fn new(root: &Path, config: &PipelineConfig) -> Self {
        let data = root.join(&config.paths.data_root);
        let ckpt = root.join(&config.paths.checkpoint_dir);
        DemoLayout {
            toy: data.join("toy"),
            codes: data.join("codes"),
            samples: data.join("samples"),
            cleaned: data.join("cleaned"),
            segbase: data.join("segbase"),
            composed: data.join("composed"),
            vqvae: ckpt.join("vqvae"),
            pixelcnn: ckpt.join("pixelcnn"),
            reports: root.join(&config.paths.report_dir),
        }
    }
}

/// Toy data through every stage: VQ-VAE, code grids, PixelCNN, sampling,
/// post-processing, composition, evaluation and plots, followed by a verify
/// pass over the artifacts. Writes `demo_summary.json` and the provenance
/// record; the caller holds the work-directory lock.
pub fn demo(work: &WorkDir, config: &PipelineConfig) -> Result<DemoSummary> {
    config.validate()?;
    let root = work.root();
    let d = &config.demo;
    let k = config.maskproc.k;
    let palette = Palette::evenly_spaced(k)?;
    let layout = DemoLayout::new(root, config);
    let seed = config.seed;
    let mut prov = Provenance::new("demo", config);
    let started = Instant::now();

    let (toy_manifest, _) = toygen(root, &layout.toy, d.image_count, d.image_size, k, d.validation_count, 0, seed)?;
    prov.output(work, &toy_manifest);
    log::info!("toy data: {} images", d.image_count);

    let vq = train_vqvae_stage(root, &toy_manifest, config, &layout.vqvae)?;
    prov.output(work, &vq.checkpoint);
    log::info!(
        "vqvae: recon {:.5} -> {:.5} (step {}) after {:.0?}",
        vq.initial_error,
        vq.best_error,
        vq.best_step,
        started.elapsed()
    );

    let codes = encode_stage(root, &vq.checkpoint, &toy_manifest, &palette, &layout.codes)?;
    prov.output(work, &layout.codes);
    let grid_dims = (d.image_size / vqvae::DOWNSAMPLING, d.image_size / vqvae::DOWNSAMPLING);
    log::info!("encoded {} grids of {}x{}", codes.len(), grid_dims.0, grid_dims.1);

    let px = train_pixelcnn_stage(&layout.codes, config, &layout.pixelcnn)?;
    prov.output(work, &px.checkpoint);
    log::info!("pixelcnn: validation nll {:.4} (step {}) after {:.0?}", px.best_loss, px.best_step, started.elapsed());

    let sampled = sample_stage(
        &px.checkpoint,
        &vq.checkpoint,
        d.samples,
        grid_dims,
        seed.wrapping_add(2),
        config.temperature,
        &layout.samples,
    )?;
    prov.output(work, &layout.samples);

    let inputs: Vec<PathBuf> = sampled.iter().map(|s| s.dual.clone()).collect();
    let cleaned = postprocess_stage(root, &inputs, config, seed.wrapping_add(3), &layout.cleaned)?;
    prov.output(work, &layout.cleaned);
    let flagged: Vec<String> = cleaned.iter().filter(|c| c.flagged).map(|c| c.name.clone()).collect();
    prov.flagged = flagged.clone();

    let (seg_manifest_path, seg_manifest) = toy_segmentation_set(
        root,
        &layout.segbase,
        "segbase",
        [d.seg_train, d.seg_validation, d.seg_test],
        d.image_size,
        k,
        seed.wrapping_add(4),
    )?;
    prov.output(work, &seg_manifest_path);

    let pool: Vec<String> = cleaned.iter().map(|c| c.dual.clone()).collect();
    let composed = compose_stage(
        root,
        &seg_manifest_path,
        &pool,
        &config.percents,
        seed.wrapping_add(5),
        true,
        &layout.composed,
    )?;
    for c in &composed.written {
        prov.outputs.push(c.path.clone());
    }
    for (p, reason) in &composed.skipped {
        prov.notes.push(format!("percent {p} skipped: {reason}"));
    }

    ensure_dir(&layout.reports)?;
    let base_train = seg_manifest.count(Role::Train);
    let mut evaluations = vec![evaluate_manifest(root, &seg_manifest, &palette, None, "segbase", 0)?];
    for c in &composed.written {
        let m = load_manifest(&root.join(&c.path))?;
        evaluations.push(evaluate_manifest(root, &m, &palette, None, "segbase", c.percent)?);
    }
    let mut results = Vec::new();
    for e in &evaluations {
        write_per_image_csv(&layout.reports.join(format!("per_image_{}.csv", e.percent)), &e.records)?;
        results.extend(SweepResult::from_evaluation(e, "segbase", base_train, config.eval_mode));
    }
    let refs: Vec<&DatasetEvaluation> = evaluations.iter().collect();
    write_aggregate_csv(&layout.reports.join("aggregate.csv"), &refs, config.eval_mode)?;
    let metrics_path = layout.reports.join(METRICS_FILE);
    write_metrics_csv(&results, &metrics_path)?;
    let (plots, warnings) = report_stage(&results, &SWEEP_METRICS, None, k, &layout.reports)?;
    prov.output(work, &metrics_path);
    for p in &plots {
        prov.output(work, p);
    }
    prov.notes.extend(warnings);

    let min_area = scaled_min_area(config.maskproc.min_area, d.image_size);
    let verify_problems = verify_demo(root, config, &layout, &cleaned, &evaluations, &composed)?;
    for p in &verify_problems {
        log::error!("verify: {p}");
    }
    let summary = DemoSummary {
        seed,
        config_hash: config.hash(),
        vqvae_initial_error: vq.initial_error,
        vqvae_best_error: vq.best_error,
        vqvae_best_step: vq.best_step,
        pixelcnn_best_loss: px.best_loss,
        pixelcnn_best_step: px.best_step,
        pixelcnn_train_count: px.train_count,
        pixelcnn_validation_count: px.validation_count,
        min_area,
        samples: cleaned,
        flagged,
        composed: composed.written,
        skipped_percents: composed.skipped.iter().map(|(p, _)| *p).collect(),
        verify_problems,
    };
    let summary_path = work.path(SUMMARY_FILE);
    write_json(&summary_path, &summary)?;
    prov.output(work, &summary_path);
    prov.write(work)?;
    log::info!("demo finished in {:.0?}", started.elapsed());
    Ok(summary)
}

/// Re-reads the demo's artifacts and checks each against its invariants.
/// Returns the problems found; an empty list means everything holds.
pub fn verify_demo(
    root: &Path,
    config: &PipelineConfig,
    layout: &DemoLayout,
    cleaned: &[CleanedSample],
    evaluations: &[DatasetEvaluation],
    composed: &ComposeOutcome,
) -> Result<Vec<String>> {
    let mut problems = Vec::new();
    let d = &config.demo;
    let k_codes = config.vqvae.num_codes;
    let grid_side = d.image_size / vqvae::DOWNSAMPLING;
    let palette = Palette::evenly_spaced(config.maskproc.k)?;
    let connectivity = Connectivity::from_count(config.maskproc.connectivity)?;
    let min_area = scaled_min_area(config.maskproc.min_area, d.image_size);

    if let Err(e) = VqvaeModel::load(&layout.vqvae.join(vqvae::CHECKPOINT_DIR)) {
        problems.push(format!("VQ-VAE checkpoint does not load: {e}"));
    }
    match PixelcnnModel::load(&layout.pixelcnn.join(crate::pixelcnn::CHECKPOINT_DIR)) {
        Ok((m, _, _)) if m.num_codes() != k_codes => problems.push(format!("PixelCNN K={} differs from codebook", m.num_codes())),
        Ok(_) => {}
        Err(e) => problems.push(format!("PixelCNN checkpoint does not load: {e}")),
    }

    for dir in [layout.codes.clone(), layout.samples.join("grids")] {
        match load_grids(&dir) {
            Ok(grids) => {
                for (p, g) in grids {
                    if (g.height(), g.width(), g.num_codes()) != (grid_side, grid_side, k_codes) {
                        problems.push(format!("{}: unexpected grid {}x{} K={}", relative(root, &p), g.height(), g.width(), g.num_codes()));
                    }
                }
            }
            Err(e) => problems.push(format!("grids in {}: {e}", relative(root, &dir))),
        }
    }
    if cleaned.len() != d.samples {
        problems.push(format!("{} cleaned samples, expected {}", cleaned.len(), d.samples));
    }

    for c in cleaned {
        match ClassMask::load_png(&root.join(&c.mask), palette.clone()) {
            Ok(mask) => {
                if (mask.width(), mask.height()) != (d.image_size, d.image_size) {
                    problems.push(format!("{}: mask is {}x{}", c.name, mask.width(), mask.height()));
                }
                let regions = label_components(&mask, connectivity);
                if regions.len() > 1 {
                    if let Some(r) = regions.iter().find(|r| r.area < min_area) {
                        problems.push(format!("{}: region of {} px below min area {min_area}", c.name, r.area));
                    }
                }
            }
            Err(e) => problems.push(format!("{}: mask does not load: {e}", c.name)),
        }
    }

    let seg = load_manifest(&layout.segbase.join(MANIFEST_FILE))?;
    let base_train = seg.count(Role::Train);
    for c in &composed.written {
        match load_manifest(&root.join(&c.path)) {
            Ok(m) => {
                if let Err(e) = m.validate() {
                    problems.push(format!("{}: {e}", c.path));
                }
                let expected = base_train + synthetic_count(base_train, c.percent);
                if m.count(Role::Train) != expected {
                    problems.push(format!("{}: {} train entries, expected {expected}", c.path, m.count(Role::Train)));
                }
                if m.count(Role::Test) != seg.count(Role::Test) || m.count(Role::Validation) != seg.count(Role::Validation) {
                    problems.push(format!("{}: validation or test role changed", c.path));
                }
            }
            Err(e) => problems.push(format!("{}: {e}", c.path)),
        }
    }

    for e in evaluations {
        if let Some(r) = e.records.iter().find(|r| !r.is_consistent()) {
            problems.push(format!("{} {}%: record {} is inconsistent with its matrix", e.dataset, e.percent, r.image));
        }
    }

    let results = read_metrics_csv(&layout.reports.join(METRICS_FILE))?;
    for metric in SWEEP_METRICS {
        let path = layout.reports.join(format!("{metric}.svg"));
        match std::fs::read_to_string(&path) {
            Ok(svg) => problems.extend(
                cross_check(&svg, &results, metric, YRange::default_for(metric))?
                    .into_iter()
                    .map(|p| format!("{metric}.svg: {p}")),
            ),
            Err(e) => problems.push(format!("{}: {e}", relative(root, &path))),
        }
    }
    Ok(problems)
}
