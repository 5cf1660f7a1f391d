//! Autoregressive prior over code grids: a stack of masked convolutions
//! whose logits at each cell see only cells earlier in raster order.
//!
//! Plain (ungated) PixelCNN. Stacked 3×3 masks leave the usual blind spot
//! up and to the right; it drops dependencies but never adds acausal ones.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, TensorReader};
use crate::codegrid::CodeGrid;
use crate::error::{Error, Result};
use crate::metrics::csv_writer;
use crate::tensor::{relu, relu_backward, softmax_cross_entropy, Adam, Conv2d, Parameter, Tensor};

pub const CHECKPOINT_KIND: &str = "pixelcnn";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const VALIDATION_LOG: &str = "validation_log.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskKind {
    /// Center excluded; used only by the first layer.
    A,
    /// Center included.
    B,
}

/// The kh×kw causal mask, row-major: rows above the center and cells left of
/// it on the center row are 1, the center is 1 only for kind B.
pub fn build_mask(kind: MaskKind, kh: usize, kw: usize) -> Result<Vec<f32>> {
    if kh.is_multiple_of(2) || kw.is_multiple_of(2) {
        return Err(Error::invalid(format!("masked kernels must be odd, got {kh}x{kw}")));
    }
    let (cy, cx) = (kh / 2, kw / 2);
    let mut mask = vec![0.0; kh * kw];
    for y in 0..kh {
        for x in 0..kw {
            let open = y < cy || (y == cy && x < cx) || (y == cy && x == cx && kind == MaskKind::B);
            if open {
                mask[y * kw + x] = 1.0;
            }
        }
    }
    Ok(mask)
}

fn masked_conv<R: Rng + ?Sized>(
    kind: MaskKind,
    in_c: usize,
    out_c: usize,
    k: usize,
    rng: &mut R,
) -> Result<Conv2d> {
    let plane = build_mask(kind, k, k)?;
    let mask: Vec<f32> = std::iter::repeat_n(plane.iter().copied(), in_c * out_c)
        .flatten()
        .collect();
    Conv2d::new(in_c, out_c, (k, k), 1, k / 2, rng).with_mask(Tensor::new(vec![out_c, in_c, k, k], mask)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PixelcnnShape {
    pub num_codes: usize,
    /// Number of kind-B hidden layers after the kind-A input layer.
    pub layers: usize,
    pub first_kernel: usize,
    pub kernel: usize,
    pub hidden: usize,
}

impl PixelcnnShape {
    pub fn validate(&self) -> Result<()> {
        if self.num_codes == 0 || self.num_codes > u16::MAX as usize + 1 {
            return Err(Error::Config(format!("K={} must be in 1..=65536", self.num_codes)));
        }
        if self.hidden == 0 {
            return Err(Error::Config("hidden width must be positive".into()));
        }
        for k in [self.first_kernel, self.kernel] {
            if k % 2 == 0 {
                return Err(Error::Config(format!("masked kernels must be odd, got {k}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    shape: PixelcnnShape,
    input_encoding: String,
    step: usize,
    best_validation_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct PixelcnnModel {
    shape: PixelcnnShape,
    pub first: Conv2d,
    pub hidden: Vec<Conv2d>,
    pub output: Conv2d,
}

struct Trace {
    /// Input to each conv layer, first layer included.
    inputs: Vec<Tensor>,
    /// Pre-activation output of the first and every hidden layer.
    pre: Vec<Tensor>,
}

/// Stacks grids as one-hot N×K×H×W planes.
pub fn one_hot(grids: &[CodeGrid], num_codes: usize) -> Result<Tensor> {
    let first = grids.first().ok_or_else(|| Error::invalid("no code grids given"))?;
    let (h, w) = (first.height(), first.width());
    let area = h * w;
    let mut data = vec![0.0f32; grids.len() * num_codes * area];
    for (b, g) in grids.iter().enumerate() {
        if (g.height(), g.width()) != (h, w) {
            return Err(Error::invalid(format!(
                "grid {b} is {}x{}, expected {h}x{w}",
                g.height(),
                g.width()
            )));
        }
        if g.num_codes() != num_codes {
            return Err(Error::invalid(format!("grid {b} has K={}, model has K={num_codes}", g.num_codes())));
        }
        for (p, &k) in g.indices().iter().enumerate() {
            data[b * num_codes * area + k as usize * area + p] = 1.0;
        }
    }
    Tensor::new(vec![grids.len(), num_codes, h, w], data)
}

fn targets(grids: &[CodeGrid]) -> Vec<usize> {
    grids.iter().flat_map(|g| g.indices().iter().map(|&k| k as usize)).collect()
}

impl PixelcnnModel {
    /// Masked layers use the usual uniform init; the output layer starts at
    /// zero so an untrained model predicts the uniform distribution.
    pub fn new(shape: &PixelcnnShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let first = masked_conv(MaskKind::A, shape.num_codes, shape.hidden, shape.first_kernel, &mut rng)?;
        let hidden = (0..shape.layers)
            .map(|_| masked_conv(MaskKind::B, shape.hidden, shape.hidden, shape.kernel, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let mut output = masked_conv(MaskKind::B, shape.hidden, shape.num_codes, 1, &mut rng)?;
        output.weight = Parameter::new(Tensor::zeros(output.weight.dims()));
        Ok(PixelcnnModel {
            shape: shape.clone(),
            first,
            hidden,
            output,
        })
    }

    pub fn shape(&self) -> &PixelcnnShape {
        &self.shape
    }

    pub fn num_codes(&self) -> usize {
        self.shape.num_codes
    }

    fn layers(&self) -> impl Iterator<Item = &Conv2d> {
        std::iter::once(&self.first).chain(&self.hidden).chain(std::iter::once(&self.output))
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = Vec::new();
        out.extend(self.first.params_mut());
        for layer in &mut self.hidden {
            out.extend(layer.params_mut());
        }
        out.extend(self.output.params_mut());
        out
    }

    fn run(&self, x: &Tensor, keep: bool) -> Result<(Tensor, Option<Trace>)> {
        let mut trace = Trace {
            inputs: Vec::new(),
            pre: Vec::new(),
        };
        let mut act = x.clone();
        for layer in std::iter::once(&self.first).chain(&self.hidden) {
            let pre = layer.forward(&act)?;
            let next = relu(&pre);
            if keep {
                trace.inputs.push(act);
                trace.pre.push(pre);
            }
            act = next;
        }
        let logits = self.output.forward(&act)?;
        if keep {
            trace.inputs.push(act);
        }
        Ok((logits, keep.then_some(trace)))
    }

    /// N×K×H×W logits for a batch of grids.
    pub fn forward_batch(&self, grids: &[CodeGrid]) -> Result<Tensor> {
        Ok(self.run(&one_hot(grids, self.shape.num_codes)?, false)?.0)
    }

    pub fn forward_logits(&self, grid: &CodeGrid) -> Result<Tensor> {
        self.forward_batch(std::slice::from_ref(grid))
    }

    /// Mean per-cell negative log-likelihood of the grids under the model.
    pub fn nll(&self, grids: &[CodeGrid]) -> Result<f64> {
        let logits = self.forward_batch(grids)?;
        Ok(softmax_cross_entropy(&logits, &targets(grids))?.value)
    }

    /// One teacher-forced optimizer step; returns the batch loss. A
    /// non-finite loss aborts before any parameter changes.
    pub fn train_step(&mut self, grids: &[CodeGrid], adam: &Adam) -> Result<f64> {
        let x = one_hot(grids, self.shape.num_codes)?;
        let (logits, trace) = self.run(&x, true)?;
        let trace = trace.expect("trace requested");
        let loss = softmax_cross_entropy(&logits, &targets(grids))?;
        if !loss.value.is_finite() {
            return Err(Error::Numeric(format!("non-finite cross-entropy {}", loss.value)));
        }
        let n = trace.inputs.len();
        let mut g = self
            .output
            .backward(&trace.inputs[n - 1], &loss.grad, true)?
            .expect("input grad requested");
        for i in (0..self.hidden.len()).rev() {
            g = relu_backward(&trace.pre[i + 1], &g)?;
            g = self.hidden[i].backward(&trace.inputs[i + 1], &g, true)?.expect("input grad requested");
        }
        g = relu_backward(&trace.pre[0], &g)?;
        self.first.backward(&trace.inputs[0], &g, false)?;
        if let Err(e) = adam.step(&mut self.params_mut()) {
            self.params_mut().into_iter().for_each(Parameter::zero_grad);
            return Err(e);
        }
        Ok(loss.value)
    }

    pub fn save(&self, dir: &Path, step: usize, best_validation_loss: Option<f64>) -> Result<()> {
        let header = Header {
            shape: self.shape.clone(),
            input_encoding: "one-hot over K channels".into(),
            step,
            best_validation_loss,
        };
        let names = param_names(self.hidden.len());
        let tensors: Vec<(&str, &Tensor)> = names
            .iter()
            .map(String::as_str)
            .zip(self.layers().flat_map(|l| l.params()).map(|p| &p.value))
            .collect();
        checkpoint::save(dir, CHECKPOINT_KIND, &header, &tensors)
    }

    pub fn load(dir: &Path) -> Result<(Self, usize, Option<f64>)> {
        let (header, tensors): (Header, _) = checkpoint::load(dir, CHECKPOINT_KIND)?;
        header
            .shape
            .validate()
            .map_err(|e| checkpoint::format_error(dir.join(checkpoint::HEADER_FILE), e.to_string()))?;
        let mut model = PixelcnnModel::new(&header.shape, 0)?;
        let names = param_names(model.hidden.len());
        let mut reader = TensorReader::new(dir, tensors);
        for (name, param) in names.iter().zip(model.params_mut()) {
            let dims = param.dims().to_vec();
            *param = Parameter::new(reader.take(name, &dims)?);
        }
        Ok((model, header.step, header.best_validation_loss))
    }
}

fn param_names(hidden: usize) -> Vec<String> {
    let mut layers = vec!["first".to_string()];
    layers.extend((0..hidden).map(|i| format!("hidden{i}")));
    layers.push("output".into());
    layers
        .iter()
        .flat_map(|l| [format!("{l}.weight"), format!("{l}.bias")])
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PixelcnnConfig {
    pub layers: usize,
    pub first_kernel: usize,
    pub kernel: usize,
    pub hidden: usize,
    pub batch_size: usize,
    pub updates: usize,
    pub learning_rate: f32,
    pub checkpoint_interval: usize,
    pub seed: u64,
}

impl Default for PixelcnnConfig {
    fn default() -> Self {
        PixelcnnConfig {
            layers: 6,
            first_kernel: 7,
            kernel: 3,
            hidden: 64,
            batch_size: 16,
            updates: 400,
            learning_rate: 3e-4,
            checkpoint_interval: 50,
            seed: 0,
        }
    }
}

impl PixelcnnConfig {
    pub fn shape(&self, num_codes: usize) -> PixelcnnShape {
        PixelcnnShape {
            num_codes,
            layers: self.layers,
            first_kernel: self.first_kernel,
            kernel: self.kernel,
            hidden: self.hidden,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.checkpoint_interval == 0 {
            return Err(Error::Config("checkpoint interval must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        self.shape(1).validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    pub step: usize,
    pub loss: f64,
    pub saved: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelcnnTrainReport {
    pub checkpoint: PathBuf,
    pub log: Vec<LossRow>,
    pub validation: Vec<ValidationRow>,
    pub train_count: usize,
    pub validation_count: usize,
    pub best_loss: f64,
    pub best_step: usize,
}

/// Seeded shuffle, then the last 10% (rounded half up) is held out. With
/// fewer than two grids the training set doubles as validation.
pub fn split_grids(grids: &[CodeGrid], seed: u64) -> (Vec<CodeGrid>, Vec<CodeGrid>) {
    let mut shuffled = grids.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    shuffled.shuffle(&mut rng);
    let held = (grids.len() + 5) / 10;
    if held == 0 || held >= grids.len() {
        return (shuffled.clone(), shuffled);
    }
    let validation = shuffled.split_off(grids.len() - held);
    (shuffled, validation)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_logs(out_dir: &Path, log: &[LossRow], validation: &[ValidationRow]) -> Result<()> {
    write_csv(&out_dir.join(TRAIN_LOG), log)?;
    write_csv(&out_dir.join(VALIDATION_LOG), validation)
}

fn save_atomically(model: &PixelcnnModel, dir: &Path, step: usize, loss: f64) -> Result<()> {
    let staging = dir.with_extension("tmp");
    if staging.exists() {
        std::fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }
    model.save(&staging, step, Some(loss))?;
    if dir.exists() {
        std::fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::rename(&staging, dir).map_err(|e| Error::io(dir, e))
}

fn mean_nll(model: &PixelcnnModel, grids: &[CodeGrid], chunk: usize) -> Result<f64> {
    let mut total = 0.0;
    for group in grids.chunks(chunk) {
        total += model.nll(group)? * group.len() as f64;
    }
    Ok(total / grids.len() as f64)
}

/// Teacher-forced training on the grids, keeping the checkpoint with the
/// lowest held-out loss under `out_dir/checkpoint`.
pub fn train_pixelcnn(grids: &[CodeGrid], config: &PixelcnnConfig, out_dir: &Path) -> Result<PixelcnnTrainReport> {
    config.validate()?;
    let first = grids.first().ok_or_else(|| Error::invalid("no code grids to train on"))?;
    let num_codes = first.num_codes();
    for (i, g) in grids.iter().enumerate() {
        if (g.height(), g.width(), g.num_codes()) != (first.height(), first.width(), num_codes) {
            return Err(Error::invalid(format!("grid {i} differs in dims or K from grid 0")));
        }
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let (train, validation) = split_grids(grids, config.seed);
    let mut model = PixelcnnModel::new(&config.shape(num_codes), config.seed)?;
    let adam = Adam::new(config.learning_rate);
    let checkpoint = out_dir.join(CHECKPOINT_DIR);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut cursor = order.len();

    let mut log = Vec::with_capacity(config.updates);
    let initial = mean_nll(&model, &validation, config.batch_size)?;
    save_atomically(&model, &checkpoint, 0, initial)?;
    let mut val_log = vec![ValidationRow {
        step: 0,
        loss: initial,
        saved: true,
    }];
    let (mut best_loss, mut best_step) = (initial, 0);

    for step in 1..=config.updates {
        let mut batch = Vec::with_capacity(config.batch_size);
        while batch.len() < config.batch_size.min(train.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(train[order[cursor]].clone());
            cursor += 1;
        }
        let loss = match model.train_step(&batch, &adam) {
            Ok(l) => l,
            Err(e) => {
                write_logs(out_dir, &log, &val_log)?;
                return Err(match e {
                    Error::Numeric(msg) => Error::Numeric(format!("step {step}: {msg}; checkpoint from step {best_step} kept")),
                    other => other,
                });
            }
        };
        log.push(LossRow { step, loss });
        if step % config.checkpoint_interval == 0 || step == config.updates {
            let v = mean_nll(&model, &validation, config.batch_size)?;
            let saved = v < best_loss;
            if saved {
                save_atomically(&model, &checkpoint, step, v)?;
                best_loss = v;
                best_step = step;
            }
            log::debug!("pixelcnn step {step}: validation loss {v:.5}");
            val_log.push(ValidationRow { step, loss: v, saved });
        }
    }
    write_logs(out_dir, &log, &val_log)?;
    Ok(PixelcnnTrainReport {
        checkpoint,
        log,
        validation: val_log,
        train_count: train.len(),
        validation_count: validation.len(),
        best_loss,
        best_step,
    })
}

fn check_dims(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::invalid(format!("grid dims must be positive, got {height}x{width}")));
    }
    Ok(())
}

/// Fills an all-zero grid cell by cell in raster order, each cell drawn
/// from the model's logits divided by `temperature`.
pub fn sample_codes(model: &PixelcnnModel, height: usize, width: usize, seed: u64, temperature: f64) -> Result<CodeGrid> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::invalid(format!("temperature {temperature} must be positive and finite")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    raster_fill(model, height, width, |logits| {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logits.iter().map(|&l| ((l - max) / temperature).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut u = rng.gen::<f64>() * total;
        for (k, &w) in weights.iter().enumerate() {
            if u < w {
                return k;
            }
            u -= w;
        }
        // Rounding left u just past the end; take the last non-zero weight.
        weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
    })
}

/// The zero-temperature limit: each cell takes its most likely code, the
/// lowest index on ties. Independent of any seed.
pub fn argmax_codes(model: &PixelcnnModel, height: usize, width: usize) -> Result<CodeGrid> {
    raster_fill(model, height, width, |logits| {
        let mut best = 0;
        for (k, &l) in logits.iter().enumerate() {
            if l > logits[best] {
                best = k;
            }
        }
        best
    })
}

fn raster_fill(
    model: &PixelcnnModel,
    height: usize,
    width: usize,
    mut pick: impl FnMut(&[f64]) -> usize,
) -> Result<CodeGrid> {
    check_dims(height, width)?;
    let k = model.num_codes();
    let area = height * width;
    let mut grid = CodeGrid::filled(height, width, k, 0)?;
    let mut logits = vec![0.0f64; k];
    for y in 0..height {
        for x in 0..width {
            let out = model.forward_logits(&grid)?;
            if !out.is_finite() {
                return Err(Error::Numeric(format!("non-finite logits at cell ({y}, {x})")));
            }
            for (c, l) in logits.iter_mut().enumerate() {
                *l = out.data()[c * area + y * width + x] as f64;
            }
            grid.set(y, x, pick(&logits) as u16)?;
        }
    }
    Ok(grid)
}

/// Draws `count` grids concurrently; grid i uses stream i of `seed`.
pub fn sample_many(
    model: &PixelcnnModel,
    count: usize,
    height: usize,
    width: usize,
    seed: u64,
    temperature: f64,
) -> Result<Vec<CodeGrid>> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            sample_codes(model, height, width, rng.gen(), temperature)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_shape(layers: usize) -> PixelcnnShape {
        PixelcnnShape {
            num_codes: 10,
            layers,
            first_kernel: 5,
            kernel: 3,
            hidden: 8,
        }
    }

    fn randomize_output(model: &mut PixelcnnModel, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = model.output.weight.dims().to_vec();
        model.output.weight = Parameter::new(Tensor::uniform(&dims, 0.5, &mut rng));
        let k = model.num_codes();
        model.output.bias = Parameter::new(Tensor::uniform(&[k], 0.5, &mut rng));
    }

    fn random_grid(h: usize, w: usize, rng: &mut ChaCha8Rng) -> CodeGrid {
        CodeGrid::new(h, w, 10, (0..h * w).map(|_| rng.gen_range(0..10)).collect()).unwrap()
    }

    #[test]
    fn mask_definitions() {
        assert_eq!(
            build_mask(MaskKind::A, 3, 3).unwrap(),
            vec![1., 1., 1., 1., 0., 0., 0., 0., 0.]
        );
        assert_eq!(
            build_mask(MaskKind::B, 3, 3).unwrap(),
            vec![1., 1., 1., 1., 1., 0., 0., 0., 0.]
        );
        assert_eq!(build_mask(MaskKind::B, 1, 1).unwrap(), vec![1.]);
        assert_eq!(build_mask(MaskKind::A, 1, 1).unwrap(), vec![0.]);
        assert!(build_mask(MaskKind::A, 4, 3).is_err());
        assert!(build_mask(MaskKind::B, 3, 2).is_err());
    }

    #[test]
    fn zero_output_layer_gives_uniform_logits() {
        let model = PixelcnnModel::new(&small_shape(2), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let logits = model.forward_logits(&random_grid(6, 6, &mut rng)).unwrap();
        assert!(logits.data().iter().all(|&v| v == 0.0));
        let nll = model.nll(&[random_grid(6, 6, &mut rng)]).unwrap();
        assert!((nll - 10f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn perturbation_never_reaches_earlier_cells() {
        let mut model = PixelcnnModel::new(&small_shape(3), 2).unwrap();
        randomize_output(&mut model, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..40 {
            let grid = random_grid(7, 7, &mut rng);
            let p = rng.gen_range(0..49);
            let mut moved = grid.clone();
            let old = grid.indices()[p];
            moved.set(p / 7, p % 7, (old + rng.gen_range(1..10)) % 10).unwrap();
            let (a, b) = (model.forward_logits(&grid).unwrap(), model.forward_logits(&moved).unwrap());
            for c in 0..10 {
                for q in 0..=p {
                    assert_eq!(a.data()[c * 49 + q].to_bits(), b.data()[c * 49 + q].to_bits());
                }
            }
        }
    }

    #[test]
    fn single_kind_a_layer_receptive_field() {
        let shape = PixelcnnShape {
            layers: 0,
            first_kernel: 3,
            ..small_shape(0)
        };
        let mut model = PixelcnnModel::new(&shape, 5).unwrap();
        randomize_output(&mut model, 6);
        let base = CodeGrid::filled(5, 5, 10, 0).unwrap();
        let mut probe = base.clone();
        probe.set(2, 2, 4).unwrap();
        let (a, b) = (model.forward_logits(&base).unwrap(), model.forward_logits(&probe).unwrap());
        // Cells whose kind-A window contains (2,2): the right neighbour and
        // the three cells of the row below centred on column 2.
        let reached = [(2, 3), (3, 1), (3, 2), (3, 3)];
        for y in 0..5 {
            for x in 0..5 {
                let differs = (0..10).any(|c| a.data()[c * 25 + y * 5 + x] != b.data()[c * 25 + y * 5 + x]);
                assert_eq!(differs, reached.contains(&(y, x)), "cell ({y},{x})");
            }
        }
    }

    #[test]
    fn constant_grids_are_learned() {
        let grids = vec![CodeGrid::filled(4, 4, 10, 7).unwrap(); 10];
        let cfg = PixelcnnConfig {
            layers: 1,
            first_kernel: 3,
            hidden: 8,
            batch_size: 4,
            updates: 150,
            learning_rate: 2e-2,
            checkpoint_interval: 50,
            ..PixelcnnConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let report = train_pixelcnn(&grids, &cfg, dir.path()).unwrap();
        let (model, _, _) = PixelcnnModel::load(&report.checkpoint).unwrap();
        let logits = model.forward_logits(&grids[0]).unwrap();
        for p in 0..16 {
            let col: Vec<f64> = (0..10).map(|c| logits.data()[c * 16 + p] as f64).collect();
            let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = col.iter().map(|l| (l - max).exp()).sum();
            assert!((col[7] - max).exp() / z >= 0.99, "cell {p}");
        }
        for seed in 0..5 {
            assert_eq!(sample_codes(&model, 4, 4, seed, 1.0).unwrap(), grids[0]);
        }
    }

    #[test]
    fn argmax_ignores_seed_and_temperature_validated() {
        let mut model = PixelcnnModel::new(&small_shape(1), 8).unwrap();
        randomize_output(&mut model, 9);
        assert_eq!(argmax_codes(&model, 3, 3).unwrap(), argmax_codes(&model, 3, 3).unwrap());
        assert!(sample_codes(&model, 3, 3, 0, 0.0).is_err());
        assert!(sample_codes(&model, 3, 3, 0, f64::NAN).is_err());
        // A tiny temperature collapses onto the argmax path.
        assert_eq!(sample_codes(&model, 3, 3, 11, 1e-6).unwrap(), argmax_codes(&model, 3, 3).unwrap());
    }

    #[test]
    fn samples_stay_in_range_and_are_seeded() {
        let mut model = PixelcnnModel::new(&small_shape(1), 10).unwrap();
        randomize_output(&mut model, 12);
        let many = sample_many(&model, 1000, 2, 2, 3, 1.0).unwrap();
        assert!(many.iter().all(|g| g.indices().iter().all(|&i| i < 10)));
        assert_eq!(many, sample_many(&model, 1000, 2, 2, 3, 1.0).unwrap());
        assert_eq!(sample_codes(&model, 4, 4, 5, 1.0).unwrap(), sample_codes(&model, 4, 4, 5, 1.0).unwrap());
    }

    #[test]
    fn split_holds_out_a_tenth() {
        let grids: Vec<_> = (0..64).map(|i| CodeGrid::filled(1, 1, 64, i).unwrap()).collect();
        let (train, val) = split_grids(&grids, 1);
        assert_eq!((train.len(), val.len()), (58, 6));
        assert_eq!(split_grids(&grids, 1), (train, val));
        let (t1, v1) = split_grids(&grids[..1], 0);
        assert_eq!((t1.len(), v1.len()), (1, 1));
    }

    #[test]
    fn training_log_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let grids: Vec<_> = (0..12).map(|_| random_grid(4, 4, &mut rng)).collect();
        let cfg = PixelcnnConfig {
            layers: 1,
            hidden: 8,
            first_kernel: 3,
            updates: 10,
            checkpoint_interval: 5,
            ..PixelcnnConfig::default()
        };
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ra = train_pixelcnn(&grids, &cfg, a.path()).unwrap();
        let rb = train_pixelcnn(&grids, &cfg, b.path()).unwrap();
        assert_eq!(ra.log, rb.log);
        assert_eq!(
            std::fs::read(a.path().join(TRAIN_LOG)).unwrap(),
            std::fs::read(b.path().join(TRAIN_LOG)).unwrap()
        );
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut model = PixelcnnModel::new(&small_shape(2), 14).unwrap();
        randomize_output(&mut model, 15);
        let dir = tempfile::tempdir().unwrap();
        model.save(dir.path(), 3, Some(1.5)).unwrap();
        let (loaded, step, best) = PixelcnnModel::load(dir.path()).unwrap();
        assert_eq!((step, best), (3, Some(1.5)));
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let g = random_grid(5, 5, &mut rng);
        assert_eq!(model.forward_logits(&g).unwrap(), loaded.forward_logits(&g).unwrap());
    }

    #[test]
    fn rejects_foreign_k() {
        let model = PixelcnnModel::new(&small_shape(0), 0).unwrap();
        assert!(model.forward_logits(&CodeGrid::filled(2, 2, 9, 0).unwrap()).is_err());
    }
}
