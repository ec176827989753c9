//! Paired sparse crosscoder over base (B) and reasoning (R) residual streams.
//!
//! ```text
//! f      = ReLU(W_enc_B·a_B + W_enc_R·a_R + b_enc)
//! a'_i   = W_dec_i·f + b_dec_i                          i ∈ {B, R}
//! L      = Σ_i ‖a'_i − a_i‖² + λ Σ_k f_k (‖W_dec_B[:,k]‖ + ‖W_dec_R[:,k]‖)
//! ```
//!
//! Gradients are derived by hand. The ReLU subgradient at exactly zero is
//! zero, as is the norm subgradient of an all-zero decoder column.
//!
//! # Checkpoint layout
//!
//! ```text
//! 0   4   magic "XCCK"
//! 4   4   version       u32 LE (= 1)
//! 8   4   d_model       u32 LE
//! 12  4   d_crosscoder  u32 LE
//! 16  ..  f32 LE blocks in this order:
//!         W_enc_B [d_c × d_m], W_enc_R [d_c × d_m], b_enc [d_c],
//!         W_dec_B [d_m × d_c], W_dec_R [d_m × d_c], b_dec_B [d_m], b_dec_R [d_m]
//! ```

use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation_store::{ActivationDataset, Batch, DatasetManifest, Stream};
use crate::error::{ensure_input, Error, Result};
use crate::numerics::{adam_step, dot, AdamConfig, AdamState, RngState, Tensor2D, Vector};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"XCCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_HEADER_LEN: usize = 16;

/// Examples per gradient chunk. Chunks are summed in index order, so the
/// result does not depend on the number of worker threads.
const GRAD_CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct CrosscoderParams {
    /// `d_crosscoder × d_model`
    pub enc_base: Tensor2D,
    /// `d_crosscoder × d_model`
    pub enc_reasoning: Tensor2D,
    /// Shared encoder bias (the per-model biases only appear summed).
    pub enc_bias: Vector,
    /// `d_model × d_crosscoder`
    pub dec_base: Tensor2D,
    /// `d_model × d_crosscoder`
    pub dec_reasoning: Tensor2D,
    pub dec_bias_base: Vector,
    pub dec_bias_reasoning: Vector,
}

/// Loss split into its components. `sparsity` already includes λ.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub mse_base: f64,
    pub mse_reasoning: f64,
    pub sparsity: f64,
}

impl LossParts {
    fn add(&mut self, o: &LossParts) {
        self.total += o.total;
        self.mse_base += o.mse_base;
        self.mse_reasoning += o.mse_reasoning;
        self.sparsity += o.sparsity;
    }

    fn scale(&mut self, s: f64) {
        self.total *= s;
        self.mse_base *= s;
        self.mse_reasoning *= s;
        self.sparsity *= s;
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
            && self.mse_base.is_finite()
            && self.mse_reasoning.is_finite()
            && self.sparsity.is_finite()
    }
}

impl CrosscoderParams {
    pub fn zeros(d_model: usize, d_crosscoder: usize) -> Self {
        Self {
            enc_base: Tensor2D::zeros(d_crosscoder, d_model),
            enc_reasoning: Tensor2D::zeros(d_crosscoder, d_model),
            enc_bias: vec![0.0; d_crosscoder],
            dec_base: Tensor2D::zeros(d_model, d_crosscoder),
            dec_reasoning: Tensor2D::zeros(d_model, d_crosscoder),
            dec_bias_base: vec![0.0; d_model],
            dec_bias_reasoning: vec![0.0; d_model],
        }
    }

    /// Decoder columns drawn from N(0, 1/d_model); encoder rows start as the
    /// transposed decoder; all biases zero.
    pub fn init_random(d_model: usize, d_crosscoder: usize, rng: &mut RngState) -> Self {
        let std = 1.0 / (d_model as f64).sqrt();
        let dec_base = Tensor2D::random_normal(d_model, d_crosscoder, std, rng);
        let dec_reasoning = Tensor2D::random_normal(d_model, d_crosscoder, std, rng);
        Self {
            enc_base: dec_base.transpose(),
            enc_reasoning: dec_reasoning.transpose(),
            enc_bias: vec![0.0; d_crosscoder],
            dec_base,
            dec_reasoning,
            dec_bias_base: vec![0.0; d_model],
            dec_bias_reasoning: vec![0.0; d_model],
        }
    }

    pub fn d_model(&self) -> usize {
        self.enc_base.cols()
    }

    pub fn d_crosscoder(&self) -> usize {
        self.enc_base.rows()
    }

    pub fn decoder(&self, stream: Stream) -> &Tensor2D {
        match stream {
            Stream::Base => &self.dec_base,
            Stream::Reasoning => &self.dec_reasoning,
        }
    }

    pub fn decoder_bias(&self, stream: Stream) -> &[f64] {
        match stream {
            Stream::Base => &self.dec_bias_base,
            Stream::Reasoning => &self.dec_bias_reasoning,
        }
    }

    /// Column `k` of the given decoder: feature `k`'s direction in that model.
    pub fn feature_direction(&self, stream: Stream, k: usize) -> Vector {
        self.decoder(stream).col(k)
    }

    /// Checks shapes and finiteness.
    pub fn validate(&self) -> Result<()> {
        let (dc, dm) = self.enc_base.shape();
        ensure_input!(dc >= 1 && dm >= 1, "crosscoder must have d_crosscoder ≥ 1 and d_model ≥ 1");
        ensure_input!(
            self.enc_reasoning.shape() == (dc, dm)
                && self.enc_bias.len() == dc
                && self.dec_base.shape() == (dm, dc)
                && self.dec_reasoning.shape() == (dm, dc)
                && self.dec_bias_base.len() == dm
                && self.dec_bias_reasoning.len() == dm,
            "inconsistent crosscoder parameter shapes"
        );
        if !self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite())) {
            return Err(Error::Numerical("crosscoder parameters contain NaN or Inf".into()));
        }
        Ok(())
    }

    /// Parameter blocks in checkpoint order.
    pub fn blocks(&self) -> [&[f64]; 7] {
        [
            self.enc_base.data(),
            self.enc_reasoning.data(),
            &self.enc_bias,
            self.dec_base.data(),
            self.dec_reasoning.data(),
            &self.dec_bias_base,
            &self.dec_bias_reasoning,
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut [f64]; 7] {
        [
            self.enc_base.data_mut(),
            self.enc_reasoning.data_mut(),
            &mut self.enc_bias,
            self.dec_base.data_mut(),
            self.dec_reasoning.data_mut(),
            &mut self.dec_bias_base,
            &mut self.dec_bias_reasoning,
        ]
    }

    /// The same crosscoder with the roles of B and R exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            enc_base: self.enc_reasoning.clone(),
            enc_reasoning: self.enc_base.clone(),
            enc_bias: self.enc_bias.clone(),
            dec_base: self.dec_reasoning.clone(),
            dec_reasoning: self.dec_base.clone(),
            dec_bias_base: self.dec_bias_reasoning.clone(),
            dec_bias_reasoning: self.dec_bias_base.clone(),
        }
    }

    /// Encoder pre-activations `W_enc_B·a_B + W_enc_R·a_R + b_enc`.
    pub fn pre_activations(&self, a_base: &[f64], a_reasoning: &[f64]) -> Result<Vector> {
        let dm = self.d_model();
        ensure_input!(
            a_base.len() == dm && a_reasoning.len() == dm,
            "encode: activations have dims ({}, {}), expected {dm}",
            a_base.len(),
            a_reasoning.len()
        );
        Ok((0..self.d_crosscoder())
            .map(|k| {
                dot(self.enc_base.row(k), a_base)
                    + dot(self.enc_reasoning.row(k), a_reasoning)
                    + self.enc_bias[k]
            })
            .collect())
    }

    /// Latent code `f = ReLU(...)`; every entry is ≥ 0.
    pub fn encode(&self, a_base: &[f64], a_reasoning: &[f64]) -> Result<Vector> {
        let mut f = self.pre_activations(a_base, a_reasoning)?;
        for v in &mut f {
            if *v <= 0.0 {
                *v = 0.0;
            }
        }
        Ok(f)
    }

    /// Reconstruction `W_dec·f + b_dec` for one model.
    pub fn decode(&self, f: &[f64], stream: Stream) -> Result<Vector> {
        ensure_input!(
            f.len() == self.d_crosscoder(),
            "decode: latent dim {} but d_crosscoder is {}",
            f.len(),
            self.d_crosscoder()
        );
        let mut out = self.decoder(stream).matvec(f)?;
        for (o, b) in out.iter_mut().zip(self.decoder_bias(stream)) {
            *o += b;
        }
        Ok(out)
    }

    /// Per-feature decoder column norms `(‖W_dec_B[:,k]‖, ‖W_dec_R[:,k]‖)`.
    pub fn decoder_norms(&self) -> (Vector, Vector) {
        let dc = self.d_crosscoder();
        (
            (0..dc).map(|k| self.dec_base.col_norm(k)).collect(),
            (0..dc).map(|k| self.dec_reasoning.col_norm(k)).collect(),
        )
    }

    /// Loss for one paired example.
    pub fn loss(&self, a_base: &[f64], a_reasoning: &[f64], lambda: f64) -> Result<LossParts> {
        check_lambda(lambda)?;
        let norms = self.decoder_norms();
        Ok(self.example_pass(a_base, a_reasoning, lambda, &norms, None)?)
    }

    /// Mean loss over a batch.
    pub fn batch_loss(&self, batch: &Batch, lambda: f64) -> Result<LossParts> {
        check_lambda(lambda)?;
        ensure_input!(!batch.is_empty(), "empty batch");
        let norms = self.decoder_norms();
        let mut acc = LossParts::default();
        for r in 0..batch.len() {
            let l = self.example_pass(batch.base.row(r), batch.reasoning.row(r), lambda, &norms, None)?;
            acc.add(&l);
        }
        acc.scale(1.0 / batch.len() as f64);
        Ok(acc)
    }

    /// Forward pass for one example; when `grads` is given, accumulates the
    /// example's (unaveraged) gradient into it.
    fn example_pass(
        &self,
        a_base: &[f64],
        a_reasoning: &[f64],
        lambda: f64,
        norms: &(Vector, Vector),
        grads: Option<&mut CrosscoderParams>,
    ) -> Result<LossParts> {
        let pre = self.pre_activations(a_base, a_reasoning)?;
        let f: Vector = pre.iter().map(|&z| if z > 0.0 { z } else { 0.0 }).collect();
        let rec_b = self.decode(&f, Stream::Base)?;
        let rec_r = self.decode(&f, Stream::Reasoning)?;
        let res_b: Vector = rec_b.iter().zip(a_base).map(|(x, a)| x - a).collect();
        let res_r: Vector = rec_r.iter().zip(a_reasoning).map(|(x, a)| x - a).collect();
        let mse_base = dot(&res_b, &res_b);
        let mse_reasoning = dot(&res_r, &res_r);
        let (nb, nr) = norms;
        let sparsity = lambda
            * f.iter()
                .enumerate()
                .map(|(k, fk)| fk * (nb[k] + nr[k]))
                .sum::<f64>();
        let parts = LossParts {
            total: mse_base + mse_reasoning + sparsity,
            mse_base,
            mse_reasoning,
            sparsity,
        };

        if let Some(g) = grads {
            let dm = self.d_model();
            let dc = self.d_crosscoder();
            // dL/dres = 2·res
            let d_res_b: Vector = res_b.iter().map(|r| 2.0 * r).collect();
            let d_res_r: Vector = res_r.iter().map(|r| 2.0 * r).collect();
            for i in 0..dm {
                g.dec_bias_base[i] += d_res_b[i];
                g.dec_bias_reasoning[i] += d_res_r[i];
            }
            let mut d_pre = vec![0.0; dc];
            for k in 0..dc {
                if f[k] == 0.0 {
                    continue;
                }
                // Decoder gradients: reconstruction + sparsity (∂‖w‖/∂w = w/‖w‖).
                let sb = if nb[k] > 0.0 { lambda * f[k] / nb[k] } else { 0.0 };
                let sr = if nr[k] > 0.0 { lambda * f[k] / nr[k] } else { 0.0 };
                let mut df = lambda * (nb[k] + nr[k]);
                for i in 0..dm {
                    let wb = self.dec_base.get(i, k);
                    let wr = self.dec_reasoning.get(i, k);
                    let gb = g.dec_base.get(i, k) + d_res_b[i] * f[k] + sb * wb;
                    let gr = g.dec_reasoning.get(i, k) + d_res_r[i] * f[k] + sr * wr;
                    g.dec_base.set(i, k, gb);
                    g.dec_reasoning.set(i, k, gr);
                    df += d_res_b[i] * wb + d_res_r[i] * wr;
                }
                // ReLU gate: f > 0 iff pre > 0.
                d_pre[k] = df;
            }
            for k in 0..dc {
                if d_pre[k] == 0.0 {
                    continue;
                }
                g.enc_bias[k] += d_pre[k];
                for (gw, a) in g.enc_base.row_mut(k).iter_mut().zip(a_base) {
                    *gw += d_pre[k] * a;
                }
                for (gw, a) in g.enc_reasoning.row_mut(k).iter_mut().zip(a_reasoning) {
                    *gw += d_pre[k] * a;
                }
            }
        }
        Ok(parts)
    }

    /// Gradients of the mean batch loss with respect to every parameter,
    /// returned in a params-shaped container together with the mean loss.
    pub fn gradients(&self, batch: &Batch, lambda: f64) -> Result<(CrosscoderParams, LossParts)> {
        check_lambda(lambda)?;
        ensure_input!(!batch.is_empty(), "empty batch");
        ensure_input!(
            batch.base.cols() == self.d_model() && batch.reasoning.cols() == self.d_model(),
            "batch d_model {} does not match crosscoder d_model {}",
            batch.base.cols(),
            self.d_model()
        );
        let norms = self.decoder_norms();
        let n = batch.len();
        let chunks: Vec<(usize, usize)> = (0..n)
            .step_by(GRAD_CHUNK)
            .map(|s| (s, (s + GRAD_CHUNK).min(n)))
            .collect();
        let partials: Vec<Result<(CrosscoderParams, LossParts)>> = chunks
            .par_iter()
            .map(|&(s, e)| {
                let mut g = CrosscoderParams::zeros(self.d_model(), self.d_crosscoder());
                let mut l = LossParts::default();
                for r in s..e {
                    let parts = self.example_pass(
                        batch.base.row(r),
                        batch.reasoning.row(r),
                        lambda,
                        &norms,
                        Some(&mut g),
                    )?;
                    l.add(&parts);
                }
                Ok((g, l))
            })
            .collect();
        let mut grads = CrosscoderParams::zeros(self.d_model(), self.d_crosscoder());
        let mut loss = LossParts::default();
        for p in partials {
            let (g, l) = p?;
            for (dst, src) in grads.blocks_mut().into_iter().zip(g.blocks()) {
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
            loss.add(&l);
        }
        let inv = 1.0 / n as f64;
        for block in grads.blocks_mut() {
            for v in block {
                *v *= inv;
            }
        }
        loss.scale(inv);
        Ok((grads, loss))
    }

    /// Rescales the input space: the returned crosscoder applied to raw
    /// activations computes what `self` computes on `scale_i · a_i`, with
    /// reconstructions mapped back to raw units.
    pub fn fold_input_scales(&self, scale_base: f64, scale_reasoning: f64) -> Self {
        let mut p = self.clone();
        p.enc_base.map_inplace(|w| w * scale_base);
        p.enc_reasoning.map_inplace(|w| w * scale_reasoning);
        p.dec_base.map_inplace(|w| w / scale_base);
        p.dec_reasoning.map_inplace(|w| w / scale_reasoning);
        for b in &mut p.dec_bias_base {
            *b /= scale_base;
        }
        for b in &mut p.dec_bias_reasoning {
            *b /= scale_reasoning;
        }
        p
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "sparsity coefficient must be finite and ≥ 0, got {lambda}"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub d_crosscoder: usize,
    /// Sparsity coefficient λ.
    pub lambda: f64,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    /// Divide each stream by its mean calibration-batch norm before training.
    pub normalize: bool,
    pub holdout_fraction: f64,
    pub calibration_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            d_crosscoder: 128,
            lambda: 5.0,
            adam: AdamConfig::default(),
            batch_size: 64,
            steps: 2000,
            seed: 0,
            normalize: false,
            holdout_fraction: 0.1,
            calibration_size: 256,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        check_lambda(self.lambda)?;
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.d_crosscoder == 0 {
            return bad("d_crosscoder must be ≥ 1");
        }
        if self.steps == 0 {
            return bad("step budget must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return bad("holdout_fraction must lie in [0, 1)");
        }
        if !(self.adam.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean batch loss at every optimizer step.
    pub step_losses: Vec<LossParts>,
    pub initial_holdout: LossParts,
    pub final_holdout: LossParts,
    /// Fraction of features never active over the training split after training.
    pub dead_fraction: f64,
    pub scale_base: f64,
    pub scale_reasoning: f64,
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

/// Trains on every token listed in a manifest.
pub fn train(config: &TrainConfig, manifest: &DatasetManifest) -> Result<(CrosscoderParams, TrainReport)> {
    let dataset = ActivationDataset::load(manifest)?;
    train_on_dataset(config, &dataset)
}

fn mean_loss(p: &CrosscoderParams, ds: &ActivationDataset, idx: &[usize], scales: (f64, f64), lambda: f64) -> Result<LossParts> {
    let mut acc = LossParts::default();
    if idx.is_empty() {
        return Ok(acc);
    }
    for chunk in idx.chunks(256) {
        let mut batch = ds.gather(chunk);
        scale_batch(&mut batch, scales);
        let mut l = p.batch_loss(&batch, lambda)?;
        l.scale(chunk.len() as f64);
        acc.add(&l);
    }
    acc.scale(1.0 / idx.len() as f64);
    Ok(acc)
}

fn scale_batch(batch: &mut Batch, (sb, sr): (f64, f64)) {
    if sb != 1.0 {
        batch.base.map_inplace(|v| v * sb);
    }
    if sr != 1.0 {
        batch.reasoning.map_inplace(|v| v * sr);
    }
}

/// Trains a crosscoder with seeded Adam on an in-memory dataset.
pub fn train_on_dataset(config: &TrainConfig, ds: &ActivationDataset) -> Result<(CrosscoderParams, TrainReport)> {
    config.validate()?;
    ensure_input!(ds.len() >= 2, "need at least two tokens to train");
    let started = Instant::now();
    let dm = ds.d_model;
    let mut rng = RngState::new(config.seed);

    let mut order: Vec<usize> = (0..ds.len()).collect();
    rng.shuffle(&mut order);
    let n_holdout = ((ds.len() as f64) * config.holdout_fraction).ceil() as usize;
    let n_holdout = n_holdout.min(ds.len() - 1);
    let (train_idx, holdout_idx) = order.split_at(ds.len() - n_holdout);
    let train_idx = train_idx.to_vec();
    let holdout_idx = holdout_idx.to_vec();

    let calib: Vec<usize> = train_idx
        .iter()
        .copied()
        .take(config.calibration_size.max(1))
        .collect();
    let calib_batch = ds.gather(&calib);
    let mean_norm = |t: &Tensor2D| {
        (0..t.rows()).map(|r| crate::numerics::norm(t.row(r))).sum::<f64>() / t.rows() as f64
    };
    let scales = if config.normalize {
        let nb = mean_norm(&calib_batch.base);
        let nr = mean_norm(&calib_batch.reasoning);
        (
            if nb > 0.0 { 1.0 / nb } else { 1.0 },
            if nr > 0.0 { 1.0 / nr } else { 1.0 },
        )
    } else {
        (1.0, 1.0)
    };

    let mut params = CrosscoderParams::init_random(dm, config.d_crosscoder, &mut rng);
    {
        let mut cb = calib_batch.clone();
        scale_batch(&mut cb, scales);
        for i in 0..dm {
            let n = cb.len() as f64;
            params.dec_bias_base[i] = (0..cb.len()).map(|r| cb.base.get(r, i)).sum::<f64>() / n;
            params.dec_bias_reasoning[i] =
                (0..cb.len()).map(|r| cb.reasoning.get(r, i)).sum::<f64>() / n;
        }
    }

    let initial_holdout = mean_loss(&params, ds, &holdout_idx, scales, config.lambda)?;
    let sizes: Vec<usize> = params.blocks().iter().map(|b| b.len()).collect();
    let mut adam = AdamState::new(config.adam, &sizes);
    let mut step_losses = Vec::with_capacity(config.steps);

    let mut epoch: Vec<usize> = Vec::new();
    let mut cursor = 0;
    for step in 0..config.steps {
        if cursor >= epoch.len() {
            epoch = train_idx.clone();
            rng.shuffle(&mut epoch);
            cursor = 0;
        }
        let end = (cursor + config.batch_size).min(epoch.len());
        let mut batch = ds.gather(&epoch[cursor..end]);
        cursor = end;
        scale_batch(&mut batch, scales);

        let (grads, loss) = params.gradients(&batch, config.lambda)?;
        if !loss.is_finite() {
            return Err(Error::Training {
                step,
                msg: format!("non-finite loss {:?}", loss.total),
            });
        }
        step_losses.push(loss);
        let grad_blocks = grads.blocks();
        let mut blocks = params.blocks_mut();
        adam_step(&mut blocks, &grad_blocks, &mut adam)?;
    }
    if params.validate().is_err() {
        return Err(Error::Training {
            step: config.steps,
            msg: "parameters became non-finite".into(),
        });
    }

    let final_holdout = mean_loss(&params, ds, &holdout_idx, scales, config.lambda)?;
    let mut ever_active = vec![false; config.d_crosscoder];
    for &j in &train_idx {
        let a_b: Vec<f64> = ds.row(Stream::Base, j).iter().map(|&v| v as f64 * scales.0).collect();
        let a_r: Vec<f64> = ds
            .row(Stream::Reasoning, j)
            .iter()
            .map(|&v| v as f64 * scales.1)
            .collect();
        for (k, fk) in params.encode(&a_b, &a_r)?.into_iter().enumerate() {
            if fk > 0.0 {
                ever_active[k] = true;
            }
        }
    }
    let dead = ever_active.iter().filter(|a| !**a).count();

    let params = if config.normalize {
        params.fold_input_scales(scales.0, scales.1)
    } else {
        params
    };
    Ok((
        params,
        TrainReport {
            step_losses,
            initial_holdout,
            final_holdout,
            dead_fraction: dead as f64 / config.d_crosscoder as f64,
            scale_base: scales.0,
            scale_reasoning: scales.1,
            wall_clock_secs: started.elapsed().as_secs_f64(),
        },
    ))
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

pub fn checkpoint_bytes(p: &CrosscoderParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(p.d_model() as u32).to_le_bytes());
    out.extend_from_slice(&(p.d_crosscoder() as u32).to_le_bytes());
    for block in p.blocks() {
        for &v in block {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn write_checkpoint(path: &Path, p: &CrosscoderParams) -> Result<()> {
    p.validate()?;
    fs::write(path, checkpoint_bytes(p)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<CrosscoderParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < CHECKPOINT_HEADER_LEN {
        return Err(Error::Corruption {
            path: path.to_path_buf(),
            expected: CHECKPOINT_HEADER_LEN as u64,
            actual: bytes.len() as u64,
        });
    }
    if bytes[0..4] != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "bad crosscoder checkpoint magic"));
    }
    let word = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    if word(4) != CHECKPOINT_VERSION {
        return Err(Error::format(path, format!("unsupported version {}", word(4))));
    }
    let dm = word(8) as usize;
    let dc = word(12) as usize;
    if dm == 0 || dc == 0 {
        return Err(Error::format(path, "zero dimension in checkpoint header"));
    }
    let mut p = CrosscoderParams::zeros(dm, dc);
    let n_values: usize = p.blocks().iter().map(|b| b.len()).sum();
    let expected = CHECKPOINT_HEADER_LEN + 4 * n_values;
    if bytes.len() != expected {
        return Err(Error::Corruption {
            path: path.to_path_buf(),
            expected: expected as u64,
            actual: bytes.len() as u64,
        });
    }
    let mut values = bytes[CHECKPOINT_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
    for block in p.blocks_mut() {
        for v in block.iter_mut() {
            *v = values.next().unwrap();
        }
    }
    p.validate()?;
    Ok(p)
}
