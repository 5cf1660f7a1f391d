//! Vector-quantized autoencoder over 4-channel dual images.
//!
//! The encoder downsamples by exactly 4 with two stride-2 convolutions, so a
//! 32×32 input yields an 8×8 code grid. The codebook learns by exponential
//! moving averages; only the commitment term pulls the encoder toward it.

mod codebook;
mod train;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, TensorReader};
use crate::codegrid::CodeGrid;
use crate::dataprep::DualImage;
use crate::error::{Error, Result};
use crate::tensor::{mse, relu, relu_backward, upsample_nearest, upsample_nearest_backward, Adam, Conv2d, Parameter, Tensor};

pub use codebook::{quantize, Codebook, Quantized};
pub use train::{
    train_vqvae, train_vqvae_from_manifest, TrainLogRow, ValidationRow, VqvaeConfig, VqvaeTrainReport, CHECKPOINT_DIR,
    TRAIN_LOG, VALIDATION_LOG,
};

pub const CHECKPOINT_KIND: &str = "vqvae";
pub const DOWNSAMPLING: usize = 4;
const NORMALIZATION: &str = "channel value v in [0,255] maps to 2v/255 - 1";

/// Maps 8-bit channels affinely onto [-1, 1]; output is 1×4×H×W.
pub fn normalize(dual: &DualImage) -> Tensor {
    let (w, h) = (dual.width(), dual.height());
    let mut data = vec![0.0f32; 4 * w * h];
    for (p, px) in dual.data().chunks_exact(4).enumerate() {
        for (c, &v) in px.iter().enumerate() {
            data[c * w * h + p] = normalize_value(v);
        }
    }
    Tensor::new(vec![1, 4, h, w], data).expect("dims come from a valid dual image")
}

pub fn normalize_value(v: u8) -> f32 {
    2.0 * v as f32 / 255.0 - 1.0
}

/// Inverse of `normalize_value`, clamped to [0, 255] and rounded half up.
pub fn denormalize_value(x: f32) -> u8 {
    let v = ((x as f64 + 1.0) * 127.5).clamp(0.0, 255.0);
    (v + 0.5).floor() as u8
}

/// Converts a 1×4×H×W tensor back to a dual image.
pub fn denormalize(tensor: &Tensor) -> Result<DualImage> {
    let (n, c, h, w) = tensor.dims4()?;
    if n != 1 {
        return Err(Error::shape("batch", 1, n));
    }
    if c != 4 {
        return Err(Error::shape("channels", 4, c));
    }
    let plane = h * w;
    let src = tensor.data();
    let mut data = Vec::with_capacity(4 * plane);
    for p in 0..plane {
        for ch in 0..4 {
            data.push(denormalize_value(src[ch * plane + p]));
        }
    }
    DualImage::new(w, h, data)
}

/// Stacks normalized images into one batch; all must share dims.
pub fn normalize_batch(images: &[&DualImage]) -> Result<Tensor> {
    let items: Vec<Tensor> = images.iter().map(|d| normalize(d)).collect();
    Tensor::concat_batch(&items)
}

#[derive(Debug, Clone)]
pub struct VqLosses {
    pub reconstruction: f64,
    pub commitment: f64,
    pub total: f64,
    /// Gradient of the reconstruction term with respect to `x_hat`.
    pub grad_x_hat: Tensor,
    /// Gradient of the commitment term with respect to `z_e`; `z_q` is
    /// treated as a constant.
    pub grad_z_e: Tensor,
}

pub fn vq_losses(x: &Tensor, x_hat: &Tensor, z_e: &Tensor, z_q: &Tensor, beta: f64) -> Result<VqLosses> {
    let recon = mse(x_hat, x)?;
    let commit = mse(z_e, z_q)?;
    let commitment = beta * commit.value;
    Ok(VqLosses {
        reconstruction: recon.value,
        commitment,
        total: recon.value + commitment,
        grad_x_hat: recon.grad,
        grad_z_e: commit.grad.scale(beta as f32),
    })
}

/// Architecture and codebook hyperparameters, fixed at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VqvaeShape {
    pub num_codes: usize,
    pub code_dim: usize,
    /// Encoder channel widths after the first and second stride-2 stage.
    pub hidden: [usize; 2],
    pub beta: f64,
    pub decay: f64,
    pub epsilon: f64,
}

impl Default for VqvaeShape {
    fn default() -> Self {
        VqvaeShape {
            num_codes: 10,
            code_dim: 16,
            hidden: [32, 64],
            beta: 0.25,
            decay: 0.99,
            epsilon: 1e-5,
        }
    }
}

impl VqvaeShape {
    pub fn validate(&self) -> Result<()> {
        if self.num_codes == 0 || self.num_codes > u16::MAX as usize + 1 {
            return Err(Error::Config(format!("K={} must be in 1..=65536", self.num_codes)));
        }
        if self.code_dim == 0 {
            return Err(Error::Config("D must be positive".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta {} must be finite and non-negative", self.beta)));
        }
        if !(self.decay >= 0.0 && self.decay < 1.0) {
            return Err(Error::Config(format!("decay {} must be in [0, 1)", self.decay)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon {} must be positive", self.epsilon)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    shape: VqvaeShape,
    downsampling: usize,
    normalization: String,
    step: usize,
    best_validation_error: Option<f64>,
}

/// Every intermediate of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct VqForward {
    pub x: Tensor,
    enc1_out: Tensor,
    enc1_act: Tensor,
    enc2_out: Tensor,
    enc2_act: Tensor,
    pub z_e: Tensor,
    pub codes: Vec<CodeGrid>,
    pub z_q: Tensor,
    dec0_out: Tensor,
    dec0_up: Tensor,
    dec1_out: Tensor,
    dec1_up: Tensor,
    pub x_hat: Tensor,
}

/// Gradients at the quantizer boundary. With the straight-through estimator
/// `z_e` receives the decoder-input gradient plus the commitment gradient.
#[derive(Debug, Clone)]
pub struct BoundaryGrads {
    pub z_q: Tensor,
    pub z_e: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub reconstruction: f64,
    pub commitment: f64,
}

#[derive(Debug, Clone)]
pub struct VqvaeModel {
    shape: VqvaeShape,
    pub enc1: Conv2d,
    pub enc2: Conv2d,
    pub enc_proj: Conv2d,
    pub dec_proj: Conv2d,
    pub dec1: Conv2d,
    pub dec2: Conv2d,
    pub codebook: Codebook,
}

const PARAM_NAMES: [&str; 12] = [
    "enc1.weight",
    "enc1.bias",
    "enc2.weight",
    "enc2.bias",
    "enc_proj.weight",
    "enc_proj.bias",
    "dec_proj.weight",
    "dec_proj.bias",
    "dec1.weight",
    "dec1.bias",
    "dec2.weight",
    "dec2.bias",
];

impl VqvaeModel {
    pub fn new(shape: &VqvaeShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [h0, h1] = shape.hidden;
        let d = shape.code_dim;
        let enc1 = Conv2d::new(4, h0, (4, 4), 2, 1, &mut rng);
        let enc2 = Conv2d::new(h0, h1, (4, 4), 2, 1, &mut rng);
        let enc_proj = Conv2d::new(h1, d, (1, 1), 1, 0, &mut rng);
        let dec_proj = Conv2d::new(d, h1, (1, 1), 1, 0, &mut rng);
        let dec1 = Conv2d::new(h1, h0, (3, 3), 1, 1, &mut rng);
        let dec2 = Conv2d::new(h0, 4, (3, 3), 1, 1, &mut rng);
        let codebook = Codebook::new(shape.num_codes, d, shape.decay, shape.epsilon, &mut rng)?;
        Ok(VqvaeModel {
            shape: shape.clone(),
            enc1,
            enc2,
            enc_proj,
            dec_proj,
            dec1,
            dec2,
            codebook,
        })
    }

    pub fn shape(&self) -> &VqvaeShape {
        &self.shape
    }

    pub fn beta(&self) -> f64 {
        self.shape.beta
    }

    /// Encoder and decoder parameters in checkpoint order. The codebook is
    /// not among them: it learns by EMA, not by gradient.
    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = Vec::with_capacity(12);
        for conv in [
            &mut self.enc1,
            &mut self.enc2,
            &mut self.enc_proj,
            &mut self.dec_proj,
            &mut self.dec1,
            &mut self.dec2,
        ] {
            out.extend(conv.params_mut());
        }
        out
    }

    fn params(&self) -> Vec<&Parameter> {
        let mut out = Vec::with_capacity(12);
        for conv in [&self.enc1, &self.enc2, &self.enc_proj, &self.dec_proj, &self.dec1, &self.dec2] {
            out.extend(conv.params());
        }
        out
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (_, c, h, w) = x.dims4()?;
        if c != 4 {
            return Err(Error::shape("input channels", 4, c));
        }
        if h % DOWNSAMPLING != 0 {
            return Err(Error::shape("input height (multiple of 4)", h - h % DOWNSAMPLING, h));
        }
        if w % DOWNSAMPLING != 0 {
            return Err(Error::shape("input width (multiple of 4)", w - w % DOWNSAMPLING, w));
        }
        Ok(())
    }

    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let a1 = relu(&self.enc1.forward(x)?);
        let a2 = relu(&self.enc2.forward(&a1)?);
        self.enc_proj.forward(&a2)
    }

    pub fn decode(&self, z_q: &Tensor) -> Result<Tensor> {
        let u0 = upsample_nearest(&relu(&self.dec_proj.forward(z_q)?), 2)?;
        let u1 = upsample_nearest(&relu(&self.dec1.forward(&u0)?), 2)?;
        self.dec2.forward(&u1)
    }

    pub fn forward(&self, x: &Tensor) -> Result<VqForward> {
        self.check_input(x)?;
        let enc1_out = self.enc1.forward(x)?;
        let enc1_act = relu(&enc1_out);
        let enc2_out = self.enc2.forward(&enc1_act)?;
        let enc2_act = relu(&enc2_out);
        let z_e = self.enc_proj.forward(&enc2_act)?;
        let Quantized { codes, z_q } = quantize(&z_e, &self.codebook)?;
        let dec0_out = self.dec_proj.forward(&z_q)?;
        let dec0_up = upsample_nearest(&relu(&dec0_out), 2)?;
        let dec1_out = self.dec1.forward(&dec0_up)?;
        let dec1_up = upsample_nearest(&relu(&dec1_out), 2)?;
        let x_hat = self.dec2.forward(&dec1_up)?;
        Ok(VqForward {
            x: x.clone(),
            enc1_out,
            enc1_act,
            enc2_out,
            enc2_act,
            z_e,
            codes,
            z_q,
            dec0_out,
            dec0_up,
            dec1_out,
            dec1_up,
            x_hat,
        })
    }

    /// Accumulates parameter gradients. `grad_x_hat` flows through the
    /// decoder to `z_q`, is copied across the quantizer unchanged, and is
    /// joined there by `commit_grad_z_e` before entering the encoder.
    pub fn backward(
        &mut self,
        fwd: &VqForward,
        grad_x_hat: &Tensor,
        commit_grad_z_e: &Tensor,
    ) -> Result<BoundaryGrads> {
        let g = self.dec2.backward(&fwd.dec1_up, grad_x_hat, true)?.expect("input grad requested");
        let g = upsample_nearest_backward(&g, 2)?;
        let g = relu_backward(&fwd.dec1_out, &g)?;
        let g = self.dec1.backward(&fwd.dec0_up, &g, true)?.expect("input grad requested");
        let g = upsample_nearest_backward(&g, 2)?;
        let g = relu_backward(&fwd.dec0_out, &g)?;
        let grad_z_q = self.dec_proj.backward(&fwd.z_q, &g, true)?.expect("input grad requested");

        let grad_z_e = grad_z_q.add(commit_grad_z_e)?;
        let g = self.enc_proj.backward(&fwd.enc2_act, &grad_z_e, true)?.expect("input grad requested");
        let g = relu_backward(&fwd.enc2_out, &g)?;
        let g = self.enc2.backward(&fwd.enc1_act, &g, true)?.expect("input grad requested");
        let g = relu_backward(&fwd.enc1_out, &g)?;
        self.enc1.backward(&fwd.x, &g, false)?;
        Ok(BoundaryGrads {
            z_q: grad_z_q,
            z_e: grad_z_e,
        })
    }

    /// One optimizer step on batch `x`. The codebook moves by EMA only when
    /// `update_codebook` is set. A non-finite loss aborts before any
    /// parameter changes.
    pub fn train_step(&mut self, x: &Tensor, adam: &Adam, update_codebook: bool) -> Result<StepStats> {
        let fwd = self.forward(x)?;
        let losses = vq_losses(x, &fwd.x_hat, &fwd.z_e, &fwd.z_q, self.shape.beta)?;
        if !losses.total.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss (reconstruction {}, commitment {})",
                losses.reconstruction, losses.commitment
            )));
        }
        self.backward(&fwd, &losses.grad_x_hat, &losses.grad_z_e)?;
        if let Err(e) = adam.step(&mut self.params_mut()) {
            self.params_mut().into_iter().for_each(Parameter::zero_grad);
            return Err(e);
        }
        if update_codebook {
            self.codebook.ema_update(&fwd.z_e, &fwd.codes)?;
        }
        Ok(StepStats {
            reconstruction: losses.reconstruction,
            commitment: losses.commitment,
        })
    }

    /// Mean squared reconstruction error of `x` without touching any state.
    pub fn reconstruction_error(&self, x: &Tensor) -> Result<f64> {
        let z_e = self.encode(x)?;
        let q = quantize(&z_e, &self.codebook)?;
        Ok(mse(&self.decode(&q.z_q)?, x)?.value)
    }

    pub fn encode_to_codes(&self, dual: &DualImage) -> Result<CodeGrid> {
        let z_e = self.encode(&normalize(dual))?;
        let mut q = quantize(&z_e, &self.codebook)?;
        Ok(q.codes.remove(0))
    }

    pub fn decode_codes(&self, grid: &CodeGrid) -> Result<DualImage> {
        if grid.num_codes() != self.shape.num_codes {
            return Err(Error::invalid(format!(
                "grid was built for K={}, model has K={}",
                grid.num_codes(),
                self.shape.num_codes
            )));
        }
        let z_q = self.codebook.lookup(grid)?;
        denormalize(&self.decode(&z_q)?)
    }

    pub fn save(&self, dir: &Path, step: usize, best_validation_error: Option<f64>) -> Result<()> {
        let header = Header {
            shape: self.shape.clone(),
            downsampling: DOWNSAMPLING,
            normalization: NORMALIZATION.into(),
            step,
            best_validation_error,
        };
        let cb = self.codebook.to_tensors();
        let mut tensors: Vec<(&str, &Tensor)> = PARAM_NAMES
            .iter()
            .zip(self.params())
            .map(|(n, p)| (*n, &p.value))
            .collect();
        tensors.push(("codebook.vectors", &cb[0]));
        tensors.push(("codebook.cluster_sizes", &cb[1]));
        tensors.push(("codebook.sums", &cb[2]));
        checkpoint::save(dir, CHECKPOINT_KIND, &header, &tensors)
    }

    /// Loads a checkpoint along with the step it was taken at and its
    /// validation error.
    pub fn load(dir: &Path) -> Result<(Self, usize, Option<f64>)> {
        let (header, tensors): (Header, _) = checkpoint::load(dir, CHECKPOINT_KIND)?;
        header
            .shape
            .validate()
            .map_err(|e| checkpoint::format_error(dir.join(checkpoint::HEADER_FILE), e.to_string()))?;
        let mut model = VqvaeModel::new(&header.shape, 0)?;
        let mut reader = TensorReader::new(dir, tensors);
        for (name, param) in PARAM_NAMES.iter().zip(model.params_mut()) {
            let dims = param.dims().to_vec();
            *param = Parameter::new(reader.take(name, &dims)?);
        }
        let (k, d) = (header.shape.num_codes, header.shape.code_dim);
        let vectors = reader.take("codebook.vectors", &[k, d])?;
        let sizes = reader.take("codebook.cluster_sizes", &[k])?;
        let sums = reader.take("codebook.sums", &[k, d])?;
        model.codebook = Codebook::from_parts(vectors, sizes, sums, header.shape.decay, header.shape.epsilon)
            .map_err(|e| checkpoint::format_error(dir.join(checkpoint::WEIGHTS_FILE), e.to_string()))?;
        Ok((model, header.step, header.best_validation_error))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataprep::generate_toy_dual_images;

    fn small_shape() -> VqvaeShape {
        VqvaeShape {
            hidden: [8, 8],
            code_dim: 4,
            ..VqvaeShape::default()
        }
    }

    #[test]
    fn normalize_endpoints_and_midpoint() {
        assert_eq!(normalize_value(0), -1.0);
        assert_eq!(normalize_value(255), 1.0);
        let expected = 2.0 * 128.0 / 255.0 - 1.0;
        assert!((normalize_value(128) as f64 - expected).abs() < 1e-7);
        assert!((normalize_value(128) - 0.003_921_6).abs() < 1e-6);
    }

    #[test]
    fn denormalize_inverts_every_byte() {
        for v in 0..=255u8 {
            assert_eq!(denormalize_value(normalize_value(v)), v);
        }
    }

    #[test]
    fn denormalize_clamps_and_rounds_half_up() {
        assert_eq!(denormalize_value(-3.0), 0);
        assert_eq!(denormalize_value(7.0), 255);
        assert_eq!(denormalize_value(f32::NEG_INFINITY), 0);
        // 0.5 above 127 after scaling.
        assert_eq!(denormalize_value((127.5f64 / 127.5 - 1.0) as f32), 128);
    }

    #[test]
    fn dual_round_trip_through_tensor() {
        let dual = generate_toy_dual_images(1, 8, 4, 3).unwrap().remove(0).dual;
        assert_eq!(denormalize(&normalize(&dual)).unwrap(), dual);
    }

    #[test]
    fn losses_zero_for_perfect_case() {
        let x = Tensor::full(&[1, 4, 4, 4], 0.3);
        let z = Tensor::full(&[1, 2, 1, 1], -0.2);
        let l = vq_losses(&x, &x, &z, &z, 0.25).unwrap();
        assert_eq!((l.reconstruction, l.commitment, l.total), (0.0, 0.0, 0.0));
    }

    #[test]
    fn zero_beta_total_is_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::uniform(&[1, 4, 4, 4], 1.0, &mut rng);
        let xh = Tensor::uniform(&[1, 4, 4, 4], 1.0, &mut rng);
        let ze = Tensor::uniform(&[1, 3, 1, 1], 1.0, &mut rng);
        let zq = Tensor::uniform(&[1, 3, 1, 1], 1.0, &mut rng);
        let l = vq_losses(&x, &xh, &ze, &zq, 0.0).unwrap();
        assert_eq!(l.total, l.reconstruction);
        assert!(l.grad_z_e.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn losses_match_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::uniform(&[2, 4, 4, 4], 1.0, &mut rng);
        let xh = Tensor::uniform(&[2, 4, 4, 4], 1.0, &mut rng);
        let ze = Tensor::uniform(&[2, 3, 1, 1], 1.0, &mut rng);
        let zq = Tensor::uniform(&[2, 3, 1, 1], 1.0, &mut rng);
        let mean_sq = |a: &Tensor, b: &Tensor| {
            let mut s = 0.0f64;
            for i in 0..a.len() {
                let d = a.data()[i] as f64 - b.data()[i] as f64;
                s += d * d;
            }
            s / a.len() as f64
        };
        let oracle = mean_sq(&x, &xh) + 0.25 * mean_sq(&ze, &zq);
        let l = vq_losses(&x, &xh, &ze, &zq, 0.25).unwrap();
        assert!((l.total - oracle).abs() <= 1e-5);
    }

    #[test]
    fn code_grid_is_quarter_size() {
        let model = VqvaeModel::new(&small_shape(), 0).unwrap();
        let dual = generate_toy_dual_images(1, 32, 4, 0).unwrap().remove(0).dual;
        let grid = model.encode_to_codes(&dual).unwrap();
        assert_eq!((grid.height(), grid.width()), (8, 8));
        assert!(grid.indices().iter().all(|&i| (i as usize) < 10));
        let decoded = model.decode_codes(&grid).unwrap();
        assert_eq!((decoded.width(), decoded.height()), (32, 32));
    }

    #[test]
    fn full_scale_patch_gives_64_cell_grid() {
        let shape = VqvaeShape {
            hidden: [4, 4],
            code_dim: 2,
            ..VqvaeShape::default()
        };
        let model = VqvaeModel::new(&shape, 0).unwrap();
        let dual = DualImage::new(256, 256, vec![90; 256 * 256 * 4]).unwrap();
        let grid = model.encode_to_codes(&dual).unwrap();
        assert_eq!((grid.height(), grid.width()), (64, 64));
    }

    #[test]
    fn rejects_dims_not_divisible_by_four() {
        let model = VqvaeModel::new(&small_shape(), 0).unwrap();
        let dual = DualImage::new(30, 32, vec![0; 30 * 32 * 4]).unwrap();
        let msg = model.encode_to_codes(&dual).unwrap_err().to_string();
        assert!(msg.contains("width"), "{msg}");
    }

    #[test]
    fn decode_rejects_foreign_k() {
        let model = VqvaeModel::new(&small_shape(), 0).unwrap();
        let grid = CodeGrid::filled(2, 2, 12, 11).unwrap();
        assert!(model.decode_codes(&grid).is_err());
    }

    #[test]
    fn straight_through_copies_decoder_gradient() {
        let shape = VqvaeShape {
            beta: 0.0,
            ..small_shape()
        };
        let mut model = VqvaeModel::new(&shape, 4).unwrap();
        let x = normalize_batch(
            &generate_toy_dual_images(2, 16, 4, 1)
                .unwrap()
                .iter()
                .map(|s| &s.dual)
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let fwd = model.forward(&x).unwrap();
        let l = vq_losses(&x, &fwd.x_hat, &fwd.z_e, &fwd.z_q, 0.0).unwrap();
        let g = model.backward(&fwd, &l.grad_x_hat, &l.grad_z_e).unwrap();
        assert!(g.z_q.data().iter().any(|&v| v != 0.0));
        for (a, b) in g.z_e.data().iter().zip(g.z_q.data()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn plain_autoencoder_smoke() {
        let shape = VqvaeShape {
            beta: 0.0,
            ..small_shape()
        };
        let mut model = VqvaeModel::new(&shape, 9).unwrap();
        let samples = generate_toy_dual_images(4, 16, 4, 2).unwrap();
        let x = normalize_batch(&samples.iter().map(|s| &s.dual).collect::<Vec<_>>()).unwrap();
        let adam = Adam::new(3e-3);
        let before = model.reconstruction_error(&x).unwrap();
        for _ in 0..100 {
            model.train_step(&x, &adam, false).unwrap();
        }
        let after = model.reconstruction_error(&x).unwrap();
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let model = VqvaeModel::new(&small_shape(), 5).unwrap();
        model.save(dir.path(), 7, Some(0.5)).unwrap();
        let (loaded, step, best) = VqvaeModel::load(dir.path()).unwrap();
        assert_eq!((step, best), (7, Some(0.5)));
        let dual = generate_toy_dual_images(1, 16, 4, 0).unwrap().remove(0).dual;
        let x = normalize(&dual);
        assert_eq!(model.forward(&x).unwrap().x_hat, loaded.forward(&x).unwrap().x_hat);
        assert_eq!(model.codebook, loaded.codebook);
    }

    #[test]
    fn load_missing_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            VqvaeModel::load(&dir.path().join("none")).unwrap_err(),
            Error::MissingArtifact { .. }
        ));
    }
}
