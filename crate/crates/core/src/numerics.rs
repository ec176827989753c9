//! Dense linear algebra, activation functions, Adam and seeded randomness.
//!
//! Everything here runs in 64-bit floating point with a fixed summation
//! order, so results are bit-reproducible across runs and thread counts.
//! Vectors are plain `Vec<f64>` / `&[f64]`; matrices are row-major
//! [`Tensor2D`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_input, Error, Result};

/// Dense vector of reals.
pub type Vector = Vec<f64>;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2D {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor2D {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        ensure_input!(
            data.len() == rows * cols,
            "tensor data length {} does not match {rows}x{cols}",
            data.len()
        );
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from row slices, which must all share one length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        ensure_input!(
            rows.iter().all(|r| r.len() == cols),
            "ragged rows passed to Tensor2D::from_rows"
        );
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    /// Draws every entry from N(0, std²).
    pub fn random_normal(rows: usize, cols: usize, std: f64, rng: &mut RngState) -> Self {
        let data = (0..rows * cols).map(|_| rng.normal() * std).collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn col(&self, c: usize) -> Vector {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn set_col(&mut self, c: usize, values: &[f64]) {
        for (r, &v) in values.iter().enumerate().take(self.rows) {
            self.set(r, c, v);
        }
    }

    /// Euclidean norm of column `c`.
    pub fn col_norm(&self, c: usize) -> f64 {
        (0..self.rows)
            .map(|r| {
                let v = self.get(r, c);
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    /// `self · x`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vector> {
        ensure_input!(
            x.len() == self.cols,
            "matvec: vector has dim {} but matrix has {} columns",
            x.len(),
            self.cols
        );
        Ok((0..self.rows).map(|r| dot(self.row(r), x)).collect())
    }

    /// `selfᵀ · y`, summed over rows in ascending order.
    pub fn matvec_t(&self, y: &[f64]) -> Result<Vector> {
        ensure_input!(
            y.len() == self.rows,
            "matvec_t: vector has dim {} but matrix has {} rows",
            y.len(),
            self.rows
        );
        let mut out = vec![0.0; self.cols];
        for (r, &yr) in y.iter().enumerate() {
            axpy(yr, self.row(r), &mut out);
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map_inplace(&mut self, f: impl Fn(f64) -> f64) {
        for v in &mut self.data {
            *v = f(*v);
        }
    }
}

/// Matrix product with the inner sum taken left to right over `k`.
pub fn matmul(a: &Tensor2D, b: &Tensor2D) -> Result<Tensor2D> {
    ensure_input!(
        a.cols == b.rows,
        "matmul: {}x{} times {}x{}",
        a.rows,
        a.cols,
        b.rows,
        b.cols
    );
    let mut out = Tensor2D::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for j in 0..b.cols {
            let mut acc = 0.0;
            for k in 0..a.cols {
                acc += a.data[i * a.cols + k] * b.data[k * b.cols + j];
            }
            out.data[i * b.cols + j] = acc;
        }
    }
    Ok(out)
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha · x`.
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn relu(x: &[f64]) -> Vector {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vector {
    if logits.is_empty() {
        return Vec::new();
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Cosine similarity; zero when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

/// Rounds every value through `f32`, so that it survives a 32-bit file round trip.
pub fn round_to_f32(values: &mut [f64]) {
    for v in values {
        *v = *v as f32 as f64;
    }
}

// ---------------------------------------------------------------------------
// Randomness
// ---------------------------------------------------------------------------

/// Seeded generator. Same seed and call sequence give the same stream, bit for bit.
#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    inner: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Random unit vector in `dim` dimensions.
    pub fn unit_vector(&mut self, dim: usize) -> Vector {
        loop {
            let v: Vector = (0..dim).map(|_| self.normal()).collect();
            let n = norm(&v);
            if n > 1e-12 {
                return v.into_iter().map(|x| x / n).collect();
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators for a list of parameter blocks.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    /// Creates zeroed moments for blocks of the given sizes.
    pub fn new(config: AdamConfig, block_sizes: &[usize]) -> Self {
        Self {
            config,
            step: 0,
            first_moment: block_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: block_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[Vec<f64>] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[Vec<f64>] {
        &self.second_moment
    }
}

/// One bias-corrected Adam update applied in place to every parameter block.
pub fn adam_step(params: &mut [&mut [f64]], grads: &[&[f64]], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::InvalidInput(format!(
            "adam_step: {} parameter blocks, {} gradient blocks, {} moment blocks",
            params.len(),
            grads.len(),
            state.first_moment.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        ensure_input!(
            p.len() == g.len() && p.len() == state.first_moment[i].len(),
            "adam_step: block {i} has {} params, {} grads, {} moments",
            p.len(),
            g.len(),
            state.first_moment[i].len()
        );
    }
    state.step += 1;
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        eps,
    } = state.config;
    let t = state.step as i32;
    let correction1 = 1.0 - beta1.powi(t);
    let correction2 = 1.0 - beta2.powi(t);
    for (block, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut state.first_moment[block];
        let v = &mut state.second_moment[block];
        for j in 0..p.len() {
            m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
            v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
            let m_hat = m[j] / correction1;
            let v_hat = v[j] / correction2;
            p[j] -= learning_rate * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &Tensor2D, b: &Tensor2D) -> Tensor2D {
        let mut out = Tensor2D::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    #[test]
    fn identity_and_zero_products() {
        let mut rng = RngState::new(1);
        let b = Tensor2D::random_normal(3, 5, 1.0, &mut rng);
        assert_eq!(matmul(&Tensor2D::identity(3), &b).unwrap(), b);
        let b2 = Tensor2D::random_normal(2, 2, 1.0, &mut rng);
        assert_eq!(matmul(&Tensor2D::zeros(2, 2), &b2).unwrap(), Tensor2D::zeros(2, 2));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = RngState::new(7);
        let a = Tensor2D::random_normal(4, 5, 1.0, &mut rng);
        let b = Tensor2D::random_normal(5, 3, 1.0, &mut rng);
        let got = matmul(&a, &b).unwrap();
        let want = naive_matmul(&a, &b);
        for (x, y) in got.data().iter().zip(want.data()) {
            assert!((x - y).abs() <= 1e-14 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let a = Tensor2D::zeros(2, 3);
        let b = Tensor2D::zeros(2, 3);
        assert!(matches!(matmul(&a, &b), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn matvec_transpose_agree_with_matmul() {
        let mut rng = RngState::new(3);
        let a = Tensor2D::random_normal(4, 6, 1.0, &mut rng);
        let x: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
        let y: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
        let ax = a.matvec(&x).unwrap();
        let ax_ref = matmul(&a, &Tensor2D::from_vec(6, 1, x.clone()).unwrap()).unwrap();
        assert_eq!(ax, ax_ref.data());
        let aty = a.matvec_t(&y).unwrap();
        let aty_ref = a.transpose().matvec(&y).unwrap();
        for (p, q) in aty.iter().zip(&aty_ref) {
            assert!((p - q).abs() < 1e-14);
        }
    }

    #[test]
    fn relu_cases() {
        assert_eq!(relu(&[0.0, 0.0, 0.0]), vec![0.0, 0.0, 0.0]);
        assert_eq!(relu(&[-1.0, 2.0]), vec![0.0, 2.0]);
        let mut rng = RngState::new(11);
        let x: Vec<f64> = (0..50).map(|_| rng.normal()).collect();
        let r = relu(&x);
        for (a, b) in x.iter().zip(&r) {
            assert_eq!(*b, a.max(0.0));
        }
    }

    #[test]
    fn softmax_cases() {
        for c in [-3.0, 0.0, 17.5] {
            assert_eq!(softmax(&[c; 4]), vec![0.25; 4]);
        }
        let p = softmax(&[1000.0, 0.0]);
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1] < 1e-300);

        let mut rng = RngState::new(5);
        let logits: Vec<f64> = (0..20).map(|_| rng.normal() * 3.0).collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        let naive: Vec<f64> = logits.iter().map(|l| l.exp() / z).collect();
        for (a, b) in softmax(&logits).iter().zip(&naive) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point() {
        let mut params = vec![1.5, -2.0, 0.25];
        let grads = vec![0.0; 3];
        let mut state = AdamState::new(AdamConfig::default(), &[3]);
        for _ in 0..5 {
            adam_step(&mut [&mut params[..]], &[&grads[..]], &mut state).unwrap();
        }
        assert_eq!(params, vec![1.5, -2.0, 0.25]);
        assert!(state.first_moment()[0].iter().all(|&m| m == 0.0));
        assert!(state.second_moment()[0].iter().all(|&v| v == 0.0));
        assert_eq!(state.step_count(), 5);
    }

    /// Adam recurrence written out by hand for a scalar parameter.
    fn adam_oracle(mut x: f64, grads: &[f64], lr: f64) -> f64 {
        let (b1, b2, eps) = (0.9_f64, 0.999_f64, 1e-8);
        let (mut m, mut v) = (0.0, 0.0);
        for (i, g) in grads.iter().enumerate() {
            let t = (i + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x -= lr * mh / (vh.sqrt() + eps);
        }
        x
    }

    #[test]
    fn adam_single_step_matches_recurrence() {
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        let mut p = vec![2.0];
        let mut st = AdamState::new(cfg, &[1]);
        adam_step(&mut [&mut p[..]], &[&[0.5][..]], &mut st).unwrap();
        // First step: m̂ = g, v̂ = g², so the update is lr·g/(|g|+eps).
        let expected = adam_oracle(2.0, &[0.5], 0.1);
        assert_eq!(p[0], expected);
        assert!((p[0] - (2.0 - 0.1 * 0.5 / (0.5 + 1e-8))).abs() < 1e-15);

        adam_step(&mut [&mut p[..]], &[&[0.5][..]], &mut st).unwrap();
        assert_eq!(p[0], adam_oracle(2.0, &[0.5, 0.5], 0.1));
    }

    #[test]
    fn adam_rejects_shape_mismatch() {
        let mut p = vec![0.0; 2];
        let mut st = AdamState::new(AdamConfig::default(), &[2]);
        assert!(adam_step(&mut [&mut p[..]], &[&[1.0][..]], &mut st).is_err());
        assert_eq!(st.step_count(), 0);
    }

    #[test]
    fn rng_is_reproducible() {
        let mut a = RngState::new(42);
        let mut b = RngState::new(42);
        for _ in 0..100 {
            assert_eq!(a.normal().to_bits(), b.normal().to_bits());
            assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
        }
    }
}
