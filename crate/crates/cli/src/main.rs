use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use microseg_core::config::PipelineConfig;
use microseg_core::dataprep::{join_dual, patchify, split_dual, ClassMask, DualImage, Palette, RgbImage, Role};
use microseg_core::metrics::{write_aggregate_csv, write_per_image_csv};
use microseg_core::pipeline::{self, Provenance, WorkDir, MANIFEST_FILE, METRICS_FILE, SWEEP_METRICS};
use microseg_core::report::{read_metrics_csv, write_metrics_csv, SweepResult, YRange};
use microseg_core::{pixelcnn, vqvae, Error};

const EXIT_USAGE: u8 = 1;

#[derive(Parser)]
#[command(name = "microseg-forge", version, about = "Synthetic dual-image generation and segmentation evaluation")]
struct Cli {
    /// Pipeline config (JSON). Flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed; every stage derives its own seed from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Work directory. Relative paths in flags and manifests resolve against it.
    #[arg(long, global = true, default_value = ".")]
    work_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cut an image/mask pair into square patches
    Patchify(PatchifyArgs),
    /// Combine an RGB image and its mask into a 4-channel dual image
    Join(JoinArgs),
    /// Split a dual image into its RGB image and mask plane
    Split(SplitArgs),
    /// Generate toy dual images and their manifest
    Toygen(ToygenArgs),
    /// Train the VQ-VAE on the train role of a manifest
    TrainVqvae(TrainVqvaeArgs),
    /// Encode dual images into code grids
    Encode(EncodeArgs),
    /// Train the PixelCNN prior on code grids
    TrainPixelcnn(TrainPixelcnnArgs),
    /// Sample code grids and decode them into dual images
    Sample(SampleArgs),
    /// Turn the mask plane of dual images into clean class masks
    Postprocess(PostprocessArgs),
    /// Add synthetic images to a base manifest at each percent
    Compose(ComposeArgs),
    /// Score predicted masks against the test role of a manifest
    Evaluate(EvaluateArgs),
    /// Render sweep plots from the metrics table
    Report(ReportArgs),
    /// Run the whole pipeline on toy data
    Demo,
}

#[derive(Args)]
struct PatchifyArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long, default_value_t = 256)]
    size: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct JoinArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    dual: PathBuf,
    #[arg(long)]
    image_out: PathBuf,
    #[arg(long)]
    mask_out: PathBuf,
}

#[derive(Args)]
struct ToygenArgs {
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    validation: Option<usize>,
    /// Images given the test role, taken from the end.
    #[arg(long, default_value_t = 0)]
    test: usize,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct TrainVqvaeArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    updates: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct TrainPixelcnnArgs {
    #[arg(long)]
    codes: Option<PathBuf>,
    #[arg(long)]
    updates: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    vqvae: Option<PathBuf>,
    #[arg(long)]
    count: Option<usize>,
    /// Grid height in cells; defaults to the demo image size / 4.
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct PostprocessArgs {
    /// Dual image PNGs; defaults to every PNG in the samples directory.
    #[arg(long = "input")]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    input_dir: Option<PathBuf>,
    /// Minimum region area at the 256-pixel reference size.
    #[arg(long)]
    min_area: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ComposeArgs {
    #[arg(long)]
    base: PathBuf,
    /// Directory of synthetic dual images to draw from.
    #[arg(long)]
    pool_dir: Option<PathBuf>,
    /// Repeatable; defaults to the configured percents.
    #[arg(long = "percent")]
    percents: Vec<u32>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory of predicted masks named `<entry>.png`; without it the
    /// ground truth is scored against itself.
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long, default_value = "dataset")]
    dataset: String,
    #[arg(long, default_value_t = 0)]
    percent: u32,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Repeatable; defaults to accuracy, miou and missing_class_iou.
    #[arg(long = "metric")]
    metrics_names: Vec<String>,
    #[arg(long, allow_hyphen_values = true)]
    y_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    y_max: Option<f64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

struct Ctx {
    work: WorkDir,
    config: PipelineConfig,
    prov: Provenance,
}

impl Ctx {
    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.work.path(p)
        }
    }

    fn or_default(&self, flag: &Option<PathBuf>, default: PathBuf) -> PathBuf {
        flag.as_deref().map_or(default, |p| self.resolve(p))
    }

    fn data(&self, sub: &str) -> PathBuf {
        self.work.path(&self.config.paths.data_root).join(sub)
    }

    fn checkpoints(&self, sub: &str) -> PathBuf {
        self.work.path(&self.config.paths.checkpoint_dir).join(sub)
    }

    fn reports(&self) -> PathBuf {
        self.work.path(&self.config.paths.report_dir)
    }

    fn palette(&self) -> Result<Palette, Error> {
        Palette::evenly_spaced(self.config.maskproc.k)
    }

    fn input(&mut self, p: &Path) {
        self.prov.inputs.push(self.work.rel(p));
    }

    fn output(&mut self, p: &Path) {
        self.prov.outputs.push(self.work.rel(p));
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        "config" => 2,
        "missing_artifact" => 3,
        "numeric" => 4,
        _ => 5,
    }
}

fn fail(kind: &str, code: u8, message: &str) -> ExitCode {
    let line = json!({ "error": kind, "exit_code": code, "message": message });
    let _ = writeln!(std::io::stderr(), "{line}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.to_string();
            let first = message.lines().next().unwrap_or("usage error").trim_start_matches("error: ");
            return fail("usage", EXIT_USAGE, first);
        }
    };
    if let Err(e) = configure_threads() {
        return fail(e.kind(), exit_code(&e), &e.to_string());
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), exit_code(&e), &e.to_string()),
    }
}

fn configure_threads() -> Result<(), Error> {
    let Ok(value) = std::env::var("MSF_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("MSF_THREADS={value} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Error> {
    let config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default().normalized(),
    };
    let config = match cli.seed {
        Some(seed) => config.with_seed(seed),
        None => config,
    };
    config.validate()?;
    Ok(config)
}

fn subcommand_name(c: &Command) -> &'static str {
    match c {
        Command::Patchify(_) => "patchify",
        Command::Join(_) => "join",
        Command::Split(_) => "split",
        Command::Toygen(_) => "toygen",
        Command::TrainVqvae(_) => "train-vqvae",
        Command::Encode(_) => "encode",
        Command::TrainPixelcnn(_) => "train-pixelcnn",
        Command::Sample(_) => "sample",
        Command::Postprocess(_) => "postprocess",
        Command::Compose(_) => "compose",
        Command::Evaluate(_) => "evaluate",
        Command::Report(_) => "report",
        Command::Demo => "demo",
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut config = load_config(&cli)?;
    let name = subcommand_name(&cli.command);
    // Flag overrides go into the config first so the recorded hash covers them.
    match &cli.command {
        Command::TrainVqvae(a) => {
            if let Some(u) = a.updates {
                config.vqvae.updates = u;
            }
        }
        Command::TrainPixelcnn(a) => {
            if let Some(u) = a.updates {
                config.pixelcnn.updates = u;
            }
        }
        Command::Sample(a) => {
            if let Some(t) = a.temperature {
                config.temperature = t;
            }
            if let Some(c) = a.count {
                config.demo.samples = c;
            }
        }
        Command::Postprocess(a) => {
            if let Some(m) = a.min_area {
                config.maskproc.min_area = m;
            }
        }
        Command::Toygen(a) => {
            if let Some(c) = a.count {
                config.demo.image_count = c;
            }
            if let Some(s) = a.size {
                config.demo.image_size = s;
            }
            if let Some(v) = a.validation {
                config.demo.validation_count = v;
            }
        }
        _ => {}
    }
    config.validate()?;
    let work = WorkDir::acquire(&cli.work_dir)?;
    let prov = Provenance::new(name, &config);
    let mut ctx = Ctx { work, config, prov };
    match cli.command {
        Command::Patchify(a) => cmd_patchify(&mut ctx, a)?,
        Command::Join(a) => cmd_join(&mut ctx, a)?,
        Command::Split(a) => cmd_split(&mut ctx, a)?,
        Command::Toygen(a) => cmd_toygen(&mut ctx, a)?,
        Command::TrainVqvae(a) => cmd_train_vqvae(&mut ctx, a)?,
        Command::Encode(a) => cmd_encode(&mut ctx, a)?,
        Command::TrainPixelcnn(a) => cmd_train_pixelcnn(&mut ctx, a)?,
        Command::Sample(a) => cmd_sample(&mut ctx, a)?,
        Command::Postprocess(a) => cmd_postprocess(&mut ctx, a)?,
        Command::Compose(a) => cmd_compose(&mut ctx, a)?,
        Command::Evaluate(a) => cmd_evaluate(&mut ctx, a)?,
        Command::Report(a) => cmd_report(&mut ctx, a)?,
        Command::Demo => {
            // The demo records its own provenance.
            let summary = pipeline::demo(&ctx.work, &ctx.config)?;
            println!("{}", serde_json::to_string(&summary_line(&summary))?);
            if !summary.verify_problems.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "verify pass found {} problem(s): {}",
                    summary.verify_problems.len(),
                    summary.verify_problems.join("; ")
                )));
            }
            return Ok(());
        }
    }
    ctx.prov.write(&ctx.work)?;
    Ok(())
}

fn summary_line(s: &pipeline::DemoSummary) -> serde_json::Value {
    json!({
        "seed": s.seed,
        "vqvae_initial_error": s.vqvae_initial_error,
        "vqvae_best_error": s.vqvae_best_error,
        "pixelcnn_best_loss": s.pixelcnn_best_loss,
        "samples": s.samples.len(),
        "flagged": s.flagged,
        "composed": s.composed.iter().map(|c| c.percent).collect::<Vec<_>>(),
        "verify_problems": s.verify_problems.len(),
    })
}

fn cmd_patchify(ctx: &mut Ctx, a: PatchifyArgs) -> Result<(), Error> {
    let (image_path, mask_path, out) = (ctx.resolve(&a.image), ctx.resolve(&a.mask), ctx.resolve(&a.out_dir));
    let image = RgbImage::load_png(&image_path)?;
    let mask = ClassMask::load_png(&mask_path, ctx.palette()?)?;
    ctx.input(&image_path);
    ctx.input(&mask_path);
    let stem = image_path.file_stem().map_or("patch".into(), |s| s.to_string_lossy().into_owned());
    let patches = patchify(&image, &mask, a.size)?;
    for (i, (img, m)) in patches.iter().enumerate() {
        let ip = out.join("images").join(format!("{stem}_{i:04}.png"));
        let mp = out.join("masks").join(format!("{stem}_{i:04}.png"));
        img.save_png(&ip)?;
        m.save_png(&mp)?;
        ctx.output(&ip);
        ctx.output(&mp);
    }
    log::info!("{} patches of {}px", patches.len(), a.size);
    Ok(())
}

fn cmd_join(ctx: &mut Ctx, a: JoinArgs) -> Result<(), Error> {
    let (image_path, mask_path, out) = (ctx.resolve(&a.image), ctx.resolve(&a.mask), ctx.resolve(&a.out));
    let dual = join_dual(&RgbImage::load_png(&image_path)?, &ClassMask::load_png(&mask_path, ctx.palette()?)?)?;
    dual.save_png(&out)?;
    ctx.input(&image_path);
    ctx.input(&mask_path);
    ctx.output(&out);
    Ok(())
}

fn cmd_split(ctx: &mut Ctx, a: SplitArgs) -> Result<(), Error> {
    let dual_path = ctx.resolve(&a.dual);
    let (image, plane) = split_dual(&DualImage::load_png(&dual_path)?);
    let (io, mo) = (ctx.resolve(&a.image_out), ctx.resolve(&a.mask_out));
    image.save_png(&io)?;
    plane.save_png(&mo)?;
    ctx.input(&dual_path);
    ctx.output(&io);
    ctx.output(&mo);
    Ok(())
}

fn cmd_toygen(ctx: &mut Ctx, a: ToygenArgs) -> Result<(), Error> {
    let out = ctx.or_default(&a.out_dir, ctx.data("toy"));
    let d = &ctx.config.demo;
    let (path, manifest) = pipeline::toygen(
        ctx.work.root(),
        &out,
        d.image_count,
        d.image_size,
        ctx.config.maskproc.k,
        d.validation_count,
        a.test,
        ctx.config.seed,
    )?;
    log::info!("{} toy images, manifest {}", manifest.entries.len(), path.display());
    ctx.output(&path);
    Ok(())
}

fn cmd_train_vqvae(ctx: &mut Ctx, a: TrainVqvaeArgs) -> Result<(), Error> {
    let manifest = ctx.or_default(&a.manifest, ctx.data("toy").join(MANIFEST_FILE));
    let out = ctx.or_default(&a.out_dir, ctx.checkpoints("vqvae"));
    let report = pipeline::train_vqvae_stage(ctx.work.root(), &manifest, &ctx.config, &out)?;
    log::info!(
        "validation recon {:.6} -> {:.6} (best at step {})",
        report.initial_error,
        report.best_error,
        report.best_step
    );
    ctx.input(&manifest);
    for p in [report.checkpoint.clone(), out.join(vqvae::TRAIN_LOG), out.join(vqvae::VALIDATION_LOG)] {
        ctx.output(&p);
    }
    Ok(())
}

fn cmd_encode(ctx: &mut Ctx, a: EncodeArgs) -> Result<(), Error> {
    let checkpoint = ctx.or_default(&a.checkpoint, ctx.checkpoints("vqvae").join(vqvae::CHECKPOINT_DIR));
    let manifest = ctx.or_default(&a.manifest, ctx.data("toy").join(MANIFEST_FILE));
    let out = ctx.or_default(&a.out_dir, ctx.data("codes"));
    let written = pipeline::encode_stage(ctx.work.root(), &checkpoint, &manifest, &ctx.palette()?, &out)?;
    ctx.input(&checkpoint);
    ctx.input(&manifest);
    for p in &written {
        ctx.output(p);
    }
    log::info!("{} grids written", written.len());
    Ok(())
}

fn cmd_train_pixelcnn(ctx: &mut Ctx, a: TrainPixelcnnArgs) -> Result<(), Error> {
    let codes = ctx.or_default(&a.codes, ctx.data("codes"));
    let out = ctx.or_default(&a.out_dir, ctx.checkpoints("pixelcnn"));
    let report = pipeline::train_pixelcnn_stage(&codes, &ctx.config, &out)?;
    log::info!(
        "validation nll {:.4} at step {} ({} train / {} validation grids)",
        report.best_loss,
        report.best_step,
        report.train_count,
        report.validation_count
    );
    ctx.input(&codes);
    for p in [report.checkpoint.clone(), out.join(pixelcnn::TRAIN_LOG), out.join(pixelcnn::VALIDATION_LOG)] {
        ctx.output(&p);
    }
    Ok(())
}

fn cmd_sample(ctx: &mut Ctx, a: SampleArgs) -> Result<(), Error> {
    let checkpoint = ctx.or_default(&a.checkpoint, ctx.checkpoints("pixelcnn").join(pixelcnn::CHECKPOINT_DIR));
    let vq = ctx.or_default(&a.vqvae, ctx.checkpoints("vqvae").join(vqvae::CHECKPOINT_DIR));
    let out = ctx.or_default(&a.out_dir, ctx.data("samples"));
    let side = ctx.config.demo.image_size / vqvae::DOWNSAMPLING;
    let dims = (a.height.unwrap_or(side), a.width.unwrap_or(side));
    let items = pipeline::sample_stage(
        &checkpoint,
        &vq,
        ctx.config.demo.samples,
        dims,
        ctx.config.seed.wrapping_add(2),
        ctx.config.temperature,
        &out,
    )?;
    ctx.input(&checkpoint);
    ctx.input(&vq);
    for item in &items {
        ctx.output(&item.grid);
        ctx.output(&item.dual);
    }
    Ok(())
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>, Error> {
    if !dir.exists() {
        return Err(Error::MissingArtifact {
            path: dir.to_path_buf(),
            what: "input directory not found".into(),
        });
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "png"))
        .collect();
    files.sort();
    Ok(files)
}

fn cmd_postprocess(ctx: &mut Ctx, a: PostprocessArgs) -> Result<(), Error> {
    let inputs: Vec<PathBuf> = if a.inputs.is_empty() {
        let dir = ctx.or_default(&a.input_dir, ctx.data("samples").join("duals"));
        png_files(&dir)?
    } else {
        a.inputs.iter().map(|p| ctx.resolve(p)).collect()
    };
    if inputs.is_empty() {
        return Err(Error::InvalidInput("no dual images to post-process".into()));
    }
    let out = ctx.or_default(&a.out_dir, ctx.data("cleaned"));
    let cleaned = pipeline::postprocess_stage(ctx.work.root(), &inputs, &ctx.config, ctx.config.seed.wrapping_add(3), &out)?;
    for p in &inputs {
        ctx.input(p);
    }
    for c in &cleaned {
        ctx.prov.outputs.push(c.dual.clone());
        ctx.prov.outputs.push(c.mask.clone());
        if c.flagged {
            ctx.prov.flagged.push(c.name.clone());
        }
    }
    ctx.output(&out.join(pipeline::REGIONS_FILE));
    if let Some(first) = cleaned.first() {
        log::info!("min area {} px; {} flagged", first.report.min_area, ctx.prov.flagged.len());
    }
    Ok(())
}

fn cmd_compose(ctx: &mut Ctx, a: ComposeArgs) -> Result<(), Error> {
    let base = ctx.resolve(&a.base);
    let pool_dir = ctx.or_default(&a.pool_dir, ctx.data("cleaned").join("duals"));
    let pool: Vec<String> = png_files(&pool_dir)?.iter().map(|p| ctx.work.rel(p)).collect();
    let percents = if a.percents.is_empty() { ctx.config.percents.clone() } else { a.percents.clone() };
    let out = ctx.or_default(&a.out_dir, ctx.data("composed"));
    let outcome = pipeline::compose_stage(ctx.work.root(), &base, &pool, &percents, ctx.config.seed.wrapping_add(5), false, &out)?;
    ctx.input(&base);
    ctx.input(&pool_dir);
    for c in outcome.written {
        log::info!("{}%: {} synthetic entries -> {}", c.percent, c.added, c.path);
        ctx.prov.outputs.push(c.path);
    }
    Ok(())
}

fn cmd_evaluate(ctx: &mut Ctx, a: EvaluateArgs) -> Result<(), Error> {
    let manifest_path = ctx.resolve(&a.manifest);
    let manifest = pipeline::load_manifest(&manifest_path)?;
    let predictions = a.predictions.as_deref().map(|p| ctx.resolve(p));
    let eval = pipeline::evaluate_manifest(
        ctx.work.root(),
        &manifest,
        &ctx.palette()?,
        predictions.as_deref(),
        &a.dataset,
        a.percent,
    )?;
    let out = ctx.or_default(&a.out_dir, ctx.reports());
    let stem = format!("{}_{}", a.dataset, a.percent);
    let per_image = out.join(format!("per_image_{stem}.csv"));
    let aggregate = out.join(format!("aggregate_{stem}.csv"));
    write_per_image_csv(&per_image, &eval.records)?;
    write_aggregate_csv(&aggregate, &[&eval], ctx.config.eval_mode)?;

    // Synthetic entries sit in the train role, so the real ones give the base size.
    let base_train = manifest
        .role(Role::Train)
        .filter(|e| e.source == microseg_core::dataprep::Source::Real)
        .count();
    let metrics_path = out.join(METRICS_FILE);
    let mut rows = if metrics_path.exists() { read_metrics_csv(&metrics_path)? } else { Vec::new() };
    rows.retain(|r| !(r.dataset == a.dataset && r.percent == a.percent));
    rows.extend(SweepResult::from_evaluation(&eval, &a.dataset, base_train, ctx.config.eval_mode));
    rows.sort_by(|x, y| (&x.dataset, x.percent).cmp(&(&y.dataset, y.percent)));
    write_metrics_csv(&rows, &metrics_path)?;

    let agg = eval.aggregate(ctx.config.eval_mode);
    log::info!(
        "{} {}%: accuracy {:.4}, mIoU {:.4}, missing class IoU {:.4}",
        a.dataset,
        a.percent,
        agg.accuracy,
        agg.miou,
        agg.missing_class_iou
    );
    ctx.input(&manifest_path);
    if let Some(p) = &predictions {
        ctx.input(p);
    }
    for p in [per_image, aggregate, metrics_path] {
        ctx.output(&p);
    }
    Ok(())
}

fn cmd_report(ctx: &mut Ctx, a: ReportArgs) -> Result<(), Error> {
    let metrics_path = ctx.or_default(&a.metrics, ctx.reports().join(METRICS_FILE));
    let results = read_metrics_csv(&metrics_path)?;
    let y = match (a.y_min, a.y_max) {
        (None, None) => None,
        (Some(lo), Some(hi)) => Some(YRange::new(lo, hi).map_err(|e| Error::Config(e.to_string()))?),
        _ => return Err(Error::Config("--y-min and --y-max must be given together".into())),
    };
    let names: Vec<&str> = if a.metrics_names.is_empty() {
        SWEEP_METRICS.to_vec()
    } else {
        a.metrics_names.iter().map(String::as_str).collect()
    };
    let out = ctx.or_default(&a.out_dir, ctx.reports());
    let (files, warnings) = pipeline::report_stage(&results, &names, y, ctx.config.maskproc.k, &out)?;
    ctx.input(&metrics_path);
    for f in &files {
        ctx.output(f);
    }
    ctx.prov.notes.extend(warnings);
    Ok(())
}
