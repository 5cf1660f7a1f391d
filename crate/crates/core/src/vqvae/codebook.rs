use rand::Rng;

use crate::codegrid::CodeGrid;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// K embedding vectors of dimension D, learned by exponential moving
/// averages of the encoder outputs assigned to them.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    num_codes: usize,
    dim: usize,
    /// K×D, row-major.
    vectors: Vec<f32>,
    cluster_sizes: Vec<f32>,
    sums: Vec<f32>,
    decay: f64,
    epsilon: f64,
}

impl Codebook {
    /// Vectors i.i.d. uniform in ±1/K.
    pub fn new<R: Rng + ?Sized>(num_codes: usize, dim: usize, decay: f64, epsilon: f64, rng: &mut R) -> Result<Self> {
        if num_codes == 0 || dim == 0 {
            return Err(Error::invalid(format!("codebook needs K, D > 0, got {num_codes}, {dim}")));
        }
        let bound = 1.0 / num_codes as f32;
        let vectors = Tensor::uniform(&[num_codes, dim], bound, rng).into_data();
        Codebook::from_vectors(num_codes, dim, vectors, decay, epsilon)
    }

    /// EMA statistics start at the vectors themselves with unit cluster
    /// sizes, so a code that never receives an assignment stays put.
    pub fn from_vectors(num_codes: usize, dim: usize, vectors: Vec<f32>, decay: f64, epsilon: f64) -> Result<Self> {
        if vectors.len() != num_codes * dim {
            return Err(Error::shape("codebook entries", num_codes * dim, vectors.len()));
        }
        if !(0.0..1.0).contains(&decay) {
            return Err(Error::invalid(format!("decay {decay} must be in [0, 1)")));
        }
        if !(epsilon > 0.0) {
            return Err(Error::invalid(format!("epsilon {epsilon} must be positive")));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("codebook vectors must be finite".into()));
        }
        Ok(Codebook {
            num_codes,
            dim,
            sums: vectors.clone(),
            vectors,
            cluster_sizes: vec![1.0; num_codes],
            decay,
            epsilon,
        })
    }

    pub(crate) fn from_parts(vectors: Tensor, sizes: Tensor, sums: Tensor, decay: f64, epsilon: f64) -> Result<Self> {
        let (k, d) = (vectors.dims()[0], vectors.dims()[1]);
        let mut cb = Codebook::from_vectors(k, d, vectors.into_data(), decay, epsilon)?;
        let sizes = sizes.into_data();
        if sizes.iter().any(|&s| !(s >= 0.0 && s.is_finite())) {
            return Err(Error::Numeric("EMA cluster sizes must be finite and non-negative".into()));
        }
        cb.cluster_sizes = sizes;
        cb.sums = sums.into_data();
        Ok(cb)
    }

    pub(crate) fn to_tensors(&self) -> [Tensor; 3] {
        let t = |dims: Vec<usize>, data: &[f32]| Tensor::new(dims, data.to_vec()).expect("codebook dims are consistent");
        [
            t(vec![self.num_codes, self.dim], &self.vectors),
            t(vec![self.num_codes], &self.cluster_sizes),
            t(vec![self.num_codes, self.dim], &self.sums),
        ]
    }

    pub fn num_codes(&self) -> usize {
        self.num_codes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vector(&self, k: usize) -> &[f32] {
        &self.vectors[k * self.dim..(k + 1) * self.dim]
    }

    pub fn cluster_sizes(&self) -> &[f32] {
        &self.cluster_sizes
    }

    /// Index of the closest vector by squared Euclidean distance; the lowest
    /// index wins ties.
    pub fn nearest(&self, v: &[f32]) -> usize {
        let mut best = (0, f64::INFINITY);
        for k in 0..self.num_codes {
            let d: f64 = self
                .vector(k)
                .iter()
                .zip(v)
                .map(|(&a, &b)| {
                    let diff = a as f64 - b as f64;
                    diff * diff
                })
                .sum();
            if d < best.1 {
                best = (k, d);
            }
        }
        best.0
    }

    /// Replaces every cell of a grid by its code vector: 1×D×H×W.
    pub fn lookup(&self, grid: &CodeGrid) -> Result<Tensor> {
        if grid.num_codes() > self.num_codes {
            return Err(Error::invalid(format!(
                "grid K={} exceeds codebook K={}",
                grid.num_codes(),
                self.num_codes
            )));
        }
        let area = grid.height() * grid.width();
        let mut data = vec![0.0f32; self.dim * area];
        for (p, &k) in grid.indices().iter().enumerate() {
            for (c, &v) in self.vector(k as usize).iter().enumerate() {
                data[c * area + p] = v;
            }
        }
        Tensor::new(vec![1, self.dim, grid.height(), grid.width()], data)
    }

    /// Decays the statistics, folds in this batch's assignments, and resets
    /// each vector to its Laplace-smoothed running mean.
    pub fn ema_update(&mut self, z_e: &Tensor, codes: &[CodeGrid]) -> Result<()> {
        let (n, d, h, w) = z_e.dims4()?;
        if d != self.dim {
            return Err(Error::shape("encoder channels", self.dim, d));
        }
        if codes.len() != n {
            return Err(Error::shape("code grids", n, codes.len()));
        }
        let area = h * w;
        let mut counts = vec![0.0f64; self.num_codes];
        let mut batch_sums = vec![0.0f64; self.num_codes * d];
        for (b, grid) in codes.iter().enumerate() {
            if (grid.height(), grid.width()) != (h, w) {
                return Err(Error::shape("code grid cells", area, grid.height() * grid.width()));
            }
            let base = b * d * area;
            for (p, &k) in grid.indices().iter().enumerate() {
                let k = k as usize;
                if k >= self.num_codes {
                    return Err(Error::invalid(format!("code {k} is not below K={}", self.num_codes)));
                }
                counts[k] += 1.0;
                for c in 0..d {
                    batch_sums[k * d + c] += z_e.data()[base + c * area + p] as f64;
                }
            }
        }
        let (decay, keep) = (self.decay, 1.0 - self.decay);
        let mut sizes = vec![0.0f64; self.num_codes];
        for k in 0..self.num_codes {
            sizes[k] = decay * self.cluster_sizes[k] as f64 + keep * counts[k];
        }
        let total: f64 = sizes.iter().sum();
        let smoothing = total / (total + self.num_codes as f64 * self.epsilon);
        let mut vectors = self.vectors.clone();
        let mut sums = self.sums.clone();
        for k in 0..self.num_codes {
            let smoothed = (sizes[k] + self.epsilon) * smoothing;
            for c in 0..d {
                let i = k * d + c;
                let s = decay * self.sums[i] as f64 + keep * batch_sums[i];
                sums[i] = s as f32;
                vectors[i] = (s / smoothed) as f32;
            }
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("EMA update produced a non-finite codebook vector".into()));
        }
        self.vectors = vectors;
        self.sums = sums;
        self.cluster_sizes = sizes.into_iter().map(|s| s as f32).collect();
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Quantized {
    /// One grid per batch item.
    pub codes: Vec<CodeGrid>,
    /// The selected vectors, same dims as the encoder output.
    pub z_q: Tensor,
}

/// Snaps every D-vector of an N×D×H×W encoder output onto its nearest
/// codebook vector.
pub fn quantize(z_e: &Tensor, codebook: &Codebook) -> Result<Quantized> {
    let (n, d, h, w) = z_e.dims4()?;
    if d != codebook.dim() {
        return Err(Error::shape("encoder channels", codebook.dim(), d));
    }
    if !z_e.is_finite() {
        return Err(Error::Numeric("encoder output is not finite".into()));
    }
    let area = h * w;
    let mut z_q = vec![0.0f32; z_e.len()];
    let mut codes = Vec::with_capacity(n);
    let mut cell = vec![0.0f32; d];
    for b in 0..n {
        let base = b * d * area;
        let mut indices = Vec::with_capacity(area);
        for p in 0..area {
            for (c, v) in cell.iter_mut().enumerate() {
                *v = z_e.data()[base + c * area + p];
            }
            let k = codebook.nearest(&cell);
            for (c, &v) in codebook.vector(k).iter().enumerate() {
                z_q[base + c * area + p] = v;
            }
            indices.push(k as u16);
        }
        codes.push(CodeGrid::new(h, w, codebook.num_codes(), indices)?);
    }
    Ok(Quantized {
        codes,
        z_q: Tensor::new(z_e.dims().to_vec(), z_q)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn column(values: &[f32]) -> Tensor {
        Tensor::new(vec![1, values.len(), 1, 1], values.to_vec()).unwrap()
    }

    fn book(vectors: &[&[f32]]) -> Codebook {
        let dim = vectors[0].len();
        Codebook::from_vectors(vectors.len(), dim, vectors.concat(), 0.99, 1e-5).unwrap()
    }

    #[test]
    fn exact_match_selects_that_code() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cb = Codebook::new(10, 4, 0.99, 1e-5, &mut rng).unwrap();
        let q = quantize(&column(cb.vector(3)), &cb).unwrap();
        assert_eq!(q.codes[0].indices(), &[3]);
        assert_eq!(q.z_q.data(), cb.vector(3));
    }

    #[test]
    fn equidistant_tie_goes_to_lower_index() {
        let cb = book(&[&[5.0, 0.0], &[1.0, 0.0], &[-1.0, 0.0]]);
        let q = quantize(&column(&[0.0, 0.0]), &cb).unwrap();
        assert_eq!(q.codes[0].indices(), &[1]);
    }

    #[test]
    fn init_within_inverse_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cb = Codebook::new(10, 16, 0.99, 1e-5, &mut rng).unwrap();
        assert!(cb.vectors.iter().all(|v| v.abs() <= 0.1));
    }

    #[test]
    fn matches_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cb = Codebook::new(10, 8, 0.99, 1e-5, &mut rng).unwrap();
        let z_e = Tensor::uniform(&[2, 8, 5, 5], 0.2, &mut rng);
        let q = quantize(&z_e, &cb).unwrap();
        for b in 0..2 {
            for p in 0..25 {
                let mut best = (usize::MAX, f64::INFINITY);
                for k in 0..10 {
                    let mut dist = 0.0;
                    for c in 0..8 {
                        let diff = z_e.data()[b * 200 + c * 25 + p] as f64 - cb.vector(k)[c] as f64;
                        dist += diff * diff;
                    }
                    if dist < best.1 {
                        best = (k, dist);
                    }
                }
                assert_eq!(q.codes[b].indices()[p] as usize, best.0);
            }
        }
    }

    #[test]
    fn idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cb = Codebook::new(10, 4, 0.99, 1e-5, &mut rng).unwrap();
        let z_e = Tensor::uniform(&[1, 4, 3, 3], 0.5, &mut rng);
        let q = quantize(&z_e, &cb).unwrap();
        let again = quantize(&q.z_q, &cb).unwrap();
        assert_eq!(again.codes, q.codes);
        assert_eq!(again.z_q, q.z_q);
    }

    #[test]
    fn rejects_non_finite_input() {
        let cb = book(&[&[0.0], &[1.0]]);
        let err = quantize(&column(&[f32::NAN]), &cb).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }

    #[test]
    fn unassigned_code_keeps_position() {
        let mut cb = book(&[&[0.3, -0.2], &[2.0, 2.0]]);
        let z = column(&[1.9, 2.1]);
        let grid = CodeGrid::new(1, 1, 2, vec![1]).unwrap();
        for _ in 0..50 {
            cb.ema_update(&z, std::slice::from_ref(&grid)).unwrap();
        }
        for (a, b) in cb.vector(0).iter().zip([0.3, -0.2]) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_decay_replaces_vector() {
        let mut cb = Codebook::from_vectors(3, 2, vec![0.0; 6], 0.0, 1e-5).unwrap();
        let z = Tensor::new(vec![1, 2, 1, 3], vec![0.7, 0.7, 0.7, -0.4, -0.4, -0.4]).unwrap();
        let grid = CodeGrid::new(1, 3, 3, vec![2, 2, 2]).unwrap();
        cb.ema_update(&z, &[grid]).unwrap();
        assert!((cb.vector(2)[0] - 0.7).abs() < 1e-4);
        assert!((cb.vector(2)[1] + 0.4).abs() < 1e-4);
    }

    #[test]
    fn two_cluster_stream_converges() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let means = [[0.5f32, -0.3, 0.2], [-0.6, 0.4, 0.1]];
        let mut cb = Codebook::from_vectors(2, 3, vec![0.1, 0.0, 0.0, -0.1, 0.0, 0.0], 0.99, 1e-5).unwrap();
        for _ in 0..500 {
            let mut data = vec![0.0f32; 3 * 16];
            for p in 0..16 {
                let m = means[p % 2];
                for c in 0..3 {
                    data[c * 16 + p] = m[c] + rng.gen_range(-0.05..0.05);
                }
            }
            let z = Tensor::new(vec![1, 3, 4, 4], data).unwrap();
            let q = quantize(&z, &cb).unwrap();
            cb.ema_update(&z, &q.codes).unwrap();
        }
        for (k, m) in means.iter().enumerate() {
            for c in 0..3 {
                assert!((cb.vector(k)[c] - m[c]).abs() < 1e-2, "code {k}: {:?}", cb.vector(k));
            }
        }
    }
}
