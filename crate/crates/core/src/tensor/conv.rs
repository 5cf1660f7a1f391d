use rand::Rng;
use rayon::prelude::*;

use super::{Parameter, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
struct Geometry {
    batch: usize,
    in_c: usize,
    in_h: usize,
    in_w: usize,
    out_c: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn col_rows(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    fn out_area(&self) -> usize {
        self.out_h * self.out_w
    }
}

fn geometry(
    input: &Tensor,
    weight: &Tensor,
    stride: usize,
    padding: usize,
    mask: Option<&Tensor>,
) -> Result<Geometry> {
    let (batch, in_c, in_h, in_w) = input.dims4()?;
    let (out_c, w_in_c, kh, kw) = weight.dims4()?;
    if stride == 0 {
        return Err(Error::invalid("convolution stride must be positive"));
    }
    if w_in_c != in_c {
        return Err(Error::shape("input channels", w_in_c, in_c));
    }
    if let Some(mask) = mask {
        let (mo, mi, mh, mw) = mask.dims4()?;
        for (axis, expected, actual) in [
            ("mask output channels", out_c, mo),
            ("mask input channels", in_c, mi),
            ("mask kernel height", kh, mh),
            ("mask kernel width", kw, mw),
        ] {
            if expected != actual {
                return Err(Error::shape(axis, expected, actual));
            }
        }
        if mask.data().iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(Error::invalid("convolution mask entries must be 0 or 1"));
        }
    }
    if in_h + 2 * padding < kh {
        return Err(Error::shape("kernel height", in_h + 2 * padding, kh));
    }
    if in_w + 2 * padding < kw {
        return Err(Error::shape("kernel width", in_w + 2 * padding, kw));
    }
    Ok(Geometry {
        batch,
        in_c,
        in_h,
        in_w,
        out_c,
        kh,
        kw,
        stride,
        padding,
        out_h: (in_h + 2 * padding - kh) / stride + 1,
        out_w: (in_w + 2 * padding - kw) / stride + 1,
    })
}

fn effective_weight(weight: &Tensor, mask: Option<&Tensor>) -> Vec<f32> {
    match mask {
        Some(mask) => weight.data().iter().zip(mask.data()).map(|(w, m)| w * m).collect(),
        None => weight.data().to_vec(),
    }
}

/// `c (m×n) = a (m×k) · b (k×n) [+ c]` with arbitrary row/column strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    c: &mut [f32],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(k == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() >= m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above bound every index sgemm touches, and the
    // three slices are distinct borrows.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(g: &Geometry, x: &[f32], col: &mut [f32]) {
    let area = g.out_area();
    for ci in 0..g.in_c {
        let plane = &x[ci * g.in_h * g.in_w..(ci + 1) * g.in_h * g.in_w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut col[row * area..(row + 1) * area];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.in_h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                        *v = if ix < 0 || ix >= g.in_w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im(g: &Geometry, col: &[f32], dx: &mut [f32]) {
    let area = g.out_area();
    for ci in 0..g.in_c {
        let plane = &mut dx[ci * g.in_h * g.in_w..(ci + 1) * g.in_h * g.in_w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &col[row * area..(row + 1) * area];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.in_h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                        if ix >= 0 && (ix as usize) < g.in_w {
                            dst[ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation of a batch with `weight` (out×in×kh×kw) plus a
/// per-output-channel bias. With a mask the effective kernel is `weight ⊙ mask`.
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: usize,
    mask: Option<&Tensor>,
) -> Result<Tensor> {
    let g = geometry(input, weight, stride, padding, mask)?;
    if bias.len() != g.out_c {
        return Err(Error::shape("bias length", g.out_c, bias.len()));
    }
    let w_eff = effective_weight(weight, mask);
    let rows = g.col_rows();
    let area = g.out_area();
    let in_stride = g.in_c * g.in_h * g.in_w;
    let mut out = vec![0.0f32; g.batch * g.out_c * area];
    out.par_chunks_mut(g.out_c * area)
        .enumerate()
        .for_each(|(n, y)| {
            let x = &input.data()[n * in_stride..(n + 1) * in_stride];
            let mut col = vec![0.0f32; rows * area];
            im2col(&g, x, &mut col);
            for (oc, chunk) in y.chunks_mut(area).enumerate() {
                chunk.fill(bias.data()[oc]);
            }
            gemm(g.out_c, rows, area, &w_eff, (rows, 1), &col, (area, 1), y, true);
        });
    Tensor::new(vec![g.batch, g.out_c, g.out_h, g.out_w], out)
}

/// Gradients of a convolution with respect to its input, weight and bias.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    /// `None` when the caller did not ask for it.
    pub input: Option<Tensor>,
    pub weight: Tensor,
    pub bias: Tensor,
}

pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    stride: usize,
    padding: usize,
    mask: Option<&Tensor>,
    grad_out: &Tensor,
    need_input_grad: bool,
) -> Result<ConvGrads> {
    let g = geometry(input, weight, stride, padding, mask)?;
    let (gn, gc, gh, gw) = grad_out.dims4()?;
    for (axis, expected, actual) in [
        ("gradient batch", g.batch, gn),
        ("gradient channels", g.out_c, gc),
        ("gradient height", g.out_h, gh),
        ("gradient width", g.out_w, gw),
    ] {
        if expected != actual {
            return Err(Error::shape(axis, expected, actual));
        }
    }
    let w_eff = effective_weight(weight, mask);
    let rows = g.col_rows();
    let area = g.out_area();
    let in_stride = g.in_c * g.in_h * g.in_w;
    let out_stride = g.out_c * area;

    let per_item: Vec<(Vec<f32>, Vec<f32>, Option<Vec<f32>>)> = (0..g.batch)
        .into_par_iter()
        .map(|n| {
            let x = &input.data()[n * in_stride..(n + 1) * in_stride];
            let dy = &grad_out.data()[n * out_stride..(n + 1) * out_stride];
            let mut col = vec![0.0f32; rows * area];
            im2col(&g, x, &mut col);
            let mut dw = vec![0.0f32; g.out_c * rows];
            // dW = dY · colᵀ
            gemm(g.out_c, area, rows, dy, (area, 1), &col, (1, area), &mut dw, false);
            let db: Vec<f32> = dy.chunks(area).map(|c| c.iter().sum()).collect();
            let dx = need_input_grad.then(|| {
                // dcol = W_effᵀ · dY
                gemm(rows, g.out_c, area, &w_eff, (1, rows), dy, (area, 1), &mut col, false);
                let mut dx = vec![0.0f32; in_stride];
                col2im(&g, &col, &mut dx);
                dx
            });
            (dw, db, dx)
        })
        .collect();

    let mut dw = vec![0.0f32; g.out_c * rows];
    let mut db = vec![0.0f32; g.out_c];
    let mut dx = need_input_grad.then(|| Vec::with_capacity(g.batch * in_stride));
    for (item_dw, item_db, item_dx) in per_item {
        dw.iter_mut().zip(&item_dw).for_each(|(a, b)| *a += b);
        db.iter_mut().zip(&item_db).for_each(|(a, b)| *a += b);
        if let (Some(dx), Some(item_dx)) = (dx.as_mut(), item_dx) {
            dx.extend_from_slice(&item_dx);
        }
    }
    if let Some(mask) = mask {
        dw.iter_mut().zip(mask.data()).for_each(|(d, m)| *d *= m);
    }
    Ok(ConvGrads {
        input: dx
            .map(|dx| Tensor::new(input.dims().to_vec(), dx))
            .transpose()?,
        weight: Tensor::new(weight.dims().to_vec(), dw)?,
        bias: Tensor::new(vec![g.out_c], db)?,
    })
}

/// A convolution layer owning its parameters and optional fixed weight mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub weight: Parameter,
    pub bias: Parameter,
    pub stride: usize,
    pub padding: usize,
    pub mask: Option<Tensor>,
}

impl Conv2d {
    /// Weights uniform in ±sqrt(1/fan_in), bias zero.
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let (kh, kw) = kernel;
        let bound = (1.0 / (in_channels * kh * kw) as f32).sqrt();
        Conv2d {
            weight: Parameter::new(Tensor::uniform(&[out_channels, in_channels, kh, kw], bound, rng)),
            bias: Parameter::new(Tensor::zeros(&[out_channels])),
            stride,
            padding,
            mask: None,
        }
    }

    pub fn with_mask(mut self, mask: Tensor) -> Result<Self> {
        if mask.dims() != self.weight.dims() {
            return Err(Error::invalid(format!(
                "mask dims {:?} differ from weight dims {:?}",
                mask.dims(),
                self.weight.dims()
            )));
        }
        self.mask = Some(mask);
        Ok(self)
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        conv2d(
            input,
            &self.weight.value,
            &self.bias.value,
            self.stride,
            self.padding,
            self.mask.as_ref(),
        )
    }

    /// Accumulates parameter gradients and returns the input gradient if requested.
    pub fn backward(
        &mut self,
        input: &Tensor,
        grad_out: &Tensor,
        need_input_grad: bool,
    ) -> Result<Option<Tensor>> {
        let grads = conv2d_backward(
            input,
            &self.weight.value,
            self.stride,
            self.padding,
            self.mask.as_ref(),
            grad_out,
            need_input_grad,
        )?;
        self.weight.accumulate_grad(&grads.weight)?;
        self.bias.accumulate_grad(&grads.bias)?;
        Ok(grads.input)
    }

    pub fn params_mut(&mut self) -> [&mut Parameter; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> [&Parameter; 2] {
        [&self.weight, &self.bias]
    }
}
