use super::Tensor;
use crate::error::{Error, Result};

/// A scalar loss (accumulated in f64) and its gradient with respect to the
/// first operand.
#[derive(Debug, Clone)]
pub struct Loss {
    pub value: f64,
    pub grad: Tensor,
}

pub fn relu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

/// Gradient is passed through where the forward input was strictly positive.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    input.zip_with(grad_out, |x, g| if x > 0.0 { g } else { 0.0 })
}

pub fn upsample_nearest(input: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 0 {
        return Err(Error::invalid("upsample factor must be at least 1"));
    }
    let (n, c, h, w) = input.dims4()?;
    if factor == 1 {
        return Ok(input.clone());
    }
    let (oh, ow) = (h * factor, w * factor);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in input.data().chunks(h * w) {
        for oy in 0..oh {
            let row = &plane[(oy / factor) * w..(oy / factor + 1) * w];
            for ox in 0..ow {
                out.push(row[ox / factor]);
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out)
}

/// Sums the gradient over each replicated `factor×factor` block.
pub fn upsample_nearest_backward(grad_out: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 0 {
        return Err(Error::invalid("upsample factor must be at least 1"));
    }
    let (n, c, oh, ow) = grad_out.dims4()?;
    if oh % factor != 0 {
        return Err(Error::shape("gradient height", oh - oh % factor, oh));
    }
    if ow % factor != 0 {
        return Err(Error::shape("gradient width", ow - ow % factor, ow));
    }
    let (h, w) = (oh / factor, ow / factor);
    let mut out = vec![0.0f32; n * c * h * w];
    for (plane_in, plane_out) in grad_out.data().chunks(oh * ow).zip(out.chunks_mut(h * w)) {
        for oy in 0..oh {
            for ox in 0..ow {
                plane_out[(oy / factor) * w + ox / factor] += plane_in[oy * ow + ox];
            }
        }
    }
    Tensor::new(vec![n, c, h, w], out)
}

/// Mean over all batch×height×width positions of `-log softmax(logits)[target]`.
///
/// `targets` is row-major over (batch, y, x). The softmax is stabilized by
/// subtracting the per-position maximum.
pub fn softmax_cross_entropy(logits: &Tensor, targets: &[usize]) -> Result<Loss> {
    let (n, k, h, w) = logits.dims4()?;
    let area = h * w;
    if targets.len() != n * area {
        return Err(Error::shape("target count", n * area, targets.len()));
    }
    if let Some((i, &t)) = targets.iter().enumerate().find(|(_, &t)| t >= k) {
        return Err(Error::invalid(format!(
            "target {t} at position {i} is outside [0, {k})"
        )));
    }
    let positions = (n * area) as f64;
    let data = logits.data();
    let mut grad = vec![0.0f32; data.len()];
    let mut total = 0.0f64;
    let mut probs = vec![0.0f64; k];
    for b in 0..n {
        let base = b * k * area;
        for p in 0..area {
            let at = |c: usize| base + c * area + p;
            let max = (0..k).map(|c| data[at(c)] as f64).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (c, prob) in probs.iter_mut().enumerate() {
                *prob = (data[at(c)] as f64 - max).exp();
                sum += *prob;
            }
            let target = targets[b * area + p];
            total += sum.ln() - (data[at(target)] as f64 - max);
            for (c, prob) in probs.iter().enumerate() {
                let indicator = if c == target { 1.0 } else { 0.0 };
                grad[at(c)] = ((prob / sum - indicator) / positions) as f32;
            }
        }
    }
    Ok(Loss {
        value: total / positions,
        grad: Tensor::new(logits.dims().to_vec(), grad)?,
    })
}

/// Mean squared difference; the gradient is with respect to `a`.
pub fn mse(a: &Tensor, b: &Tensor) -> Result<Loss> {
    a.check_same_dims(b)?;
    let count = a.len() as f64;
    let mut total = 0.0f64;
    let grad: Vec<f32> = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            total += d * d;
            (2.0 * d / count) as f32
        })
        .collect();
    Ok(Loss {
        value: total / count,
        grad: Tensor::new(a.dims().to_vec(), grad)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn relu_clamps_negatives() {
        let x = Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn relu_all_negative_has_zero_gradient() {
        let x = Tensor::full(&[2, 3], -0.5);
        assert!(relu(&x).data().iter().all(|&v| v == 0.0));
        let g = relu_backward(&x, &Tensor::full(&[2, 3], 1.0)).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn upsample_factor_one_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::uniform(&[2, 3, 4, 5], 1.0, &mut rng);
        assert_eq!(upsample_nearest(&x, 1).unwrap(), x);
    }

    #[test]
    fn upsample_single_value() {
        let x = Tensor::full(&[1, 1, 1, 1], 3.0);
        let y = upsample_nearest(&x, 2).unwrap();
        assert_eq!(y.dims(), &[1, 1, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn upsample_backward_sums_blocks() {
        let g = Tensor::new(vec![1, 1, 2, 4], (1..=8).map(|v| v as f32).collect()).unwrap();
        let back = upsample_nearest_backward(&g, 2).unwrap();
        assert_eq!(back.data(), &[1.0 + 2.0 + 5.0 + 6.0, 3.0 + 4.0 + 7.0 + 8.0]);
    }

    #[test]
    fn uniform_logits_give_ln_k() {
        let logits = Tensor::full(&[2, 10, 3, 3], 0.7);
        let targets: Vec<usize> = (0..18).map(|i| i % 10).collect();
        let loss = softmax_cross_entropy(&logits, &targets).unwrap();
        assert!((loss.value - 10f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn confident_correct_logit_gives_zero_loss() {
        let mut logits = Tensor::zeros(&[1, 10, 1, 1]);
        logits.data_mut()[4] = 1000.0;
        let loss = softmax_cross_entropy(&logits, &[4]).unwrap();
        assert!(loss.value.abs() < 1e-9);
        assert!(loss.value.is_finite());
    }

    #[test]
    fn target_out_of_range_rejected() {
        let logits = Tensor::zeros(&[1, 3, 1, 2]);
        assert!(softmax_cross_entropy(&logits, &[0, 3]).is_err());
    }

    #[test]
    fn mse_basic_values() {
        let a = Tensor::zeros(&[2, 2]);
        assert_eq!(mse(&a, &a).unwrap().value, 0.0);
        assert_eq!(mse(&a, &Tensor::full(&[2, 2], 1.0)).unwrap().value, 1.0);
        assert!(mse(&a, &Tensor::zeros(&[4])).is_err());
    }

    #[test]
    fn mse_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = Tensor::uniform(&[3, 7], 1.0, &mut rng);
        let b = Tensor::uniform(&[3, 7], 1.0, &mut rng);
        let mut acc = 0.0f64;
        for i in 0..21 {
            let d = a.data()[i] as f64 - b.data()[i] as f64;
            acc += d * d;
        }
        assert!((mse(&a, &b).unwrap().value - acc / 21.0).abs() <= 1e-6);
    }
}
