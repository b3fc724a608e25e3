//! Unsupervised end-to-end training on the sum-rate.

use num_complex::Complex64;
use rand::{Rng, RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use super::head::{power_head, power_head_backward};
use super::{local_block, pooled_rows, scl_messages, ClConfig, ClModel};
use crate::error::{Error, Result};
use crate::netenv::rng::StreamRng;
use crate::netenv::{sample_channel, sample_deployment, ChannelRealization};
use crate::neuralcore::{AdamConfig, AdamState, MlpCache, MlpGrads, Tensor2D};
use crate::objective::{beam_phase, sum_rate, sum_rate_amplitude_grad};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training sum-rate over the epoch's mini-batches.
    pub mean_objective: f64,
    /// Exponential moving average of `mean_objective` (weight 0.3 on the newest).
    pub smoothed_objective: f64,
    /// Mean sum-rate on the fixed validation set, inference mode.
    pub validation_objective: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<EpochRecord>,
    pub steps: usize,
}

struct Grads {
    v: Option<MlpGrads>,
    f: Option<MlpGrads>,
    d: MlpGrads,
}

impl Grads {
    fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for g in [self.v.as_ref(), self.f.as_ref()].into_iter().flatten() {
            out.extend(g.slices());
        }
        out.extend(self.d.slices());
        out
    }
}

/// Training-mode forward and backward pass over `batch`. Returns the mean
/// sum-rate and the gradient of the loss `-mean sum-rate`. Running
/// statistics of `model` are updated.
fn forward_backward(model: &mut ClModel, batch: &[ChannelRealization]) -> Result<(f64, Grads)> {
    let cfg = model.config.clone();
    let (power, k) = (cfg.power, cfg.k);
    let m = batch.first().map(ChannelRealization::m).ok_or_else(|| Error::InvalidInput("empty batch".into()))?;
    if batch.iter().any(|c| c.m() != m || c.k() != k) {
        return Err(Error::shape(format!("every batch sample must be {m}x{k}")));
    }
    let rows = batch.len() * m;

    let mut locals = Vec::with_capacity(batch.len());
    for c in batch {
        locals.push(local_block(&c.rho, c.h_hat(), power, cfg.encoding)?);
    }
    let local = vstack(&locals, 3 * k)?;

    let mut vf_caches: Option<(MlpCache, MlpCache)> = None;
    let msg = match (&mut model.v, &mut model.f) {
        (Some(v), Some(f)) => {
            let rho_prime = local.slice_cols(0, k);
            let (up, cv) = v.forward_train(&rho_prime)?;
            let (latent, cf) = f.forward_train(&up)?;
            vf_caches = Some((cv, cf));
            pooled_rows(&latent, m)
        }
        _ if cfg.message_dim() > 0 => {
            let mut blocks = Vec::with_capacity(batch.len());
            for c in batch {
                blocks.push(scl_messages(&c.rho, power)?.1);
            }
            vstack(&blocks, k)?
        }
        _ => Tensor2D::zeros(rows, 0),
    };
    let x = Tensor2D::hcat(&[&msg, &local])?;
    let (raw, cd) = model.d.forward_train(&x)?;

    let scale = -1.0 / batch.len() as f64;
    let mut grad_raw = Tensor2D::zeros(rows, k + 1);
    let mut total = 0.0;
    let z = Complex64::new(0.0, 0.0);
    let mut gains = vec![z; k * k];
    let mut grad_q = vec![0.0; m * k];
    for (s, chan) in batch.iter().enumerate() {
        let mut amps = Vec::with_capacity(m * k);
        for i in 0..m {
            let out = power_head(raw.row(s * m + i), power, cfg.nonneg);
            amps.extend(out.p.iter().map(|p| p.sqrt()));
        }
        let actual = chan.actual();
        let phases: Vec<_> = chan.h_hat().iter().map(|h| beam_phase(*h)).collect();
        total += sum_rate_amplitude_grad(m, k, &actual, &phases, &amps, &mut gains, &mut grad_q);
        for i in 0..m {
            let r = s * m + i;
            let grad_p: Vec<f64> = (0..k)
                .map(|ue| {
                    let q = amps[i * k + ue];
                    if q > 0.0 {
                        scale * grad_q[i * k + ue] / (2.0 * q)
                    } else {
                        0.0
                    }
                })
                .collect();
            let g = power_head_backward(raw.row(r), power, cfg.nonneg, &grad_p);
            grad_raw.row_mut(r).copy_from_slice(&g);
        }
    }
    let mean = total / batch.len() as f64;

    let (grad_x, gd) = model.d.backward(&cd, &grad_raw)?;
    let (gv, gf) = match (&model.v, &model.f, vf_caches) {
        (Some(v), Some(f), Some((cv, cf))) => {
            // Each F(m_i) enters f with weight 1/M.
            let g_pooled = pooled_rows(&grad_x.slice_cols(0, cfg.d_d), m);
            let (g_up, gf) = f.backward(&cf, &g_pooled)?;
            let (_, gv) = v.backward(&cv, &g_up)?;
            (Some(gv), Some(gf))
        }
        _ => (None, None),
    };
    Ok((mean, Grads { v: gv, f: gf, d: gd }))
}

fn vstack(blocks: &[Tensor2D], cols: usize) -> Result<Tensor2D> {
    let rows = blocks.iter().map(Tensor2D::rows).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for b in blocks {
        data.extend_from_slice(b.data());
    }
    Tensor2D::from_vec(rows, cols, data)
}

/// Training-mode mean sum-rate of `batch` (batch statistics), leaving
/// `model` untouched.
pub fn batch_sum_rate(model: &ClModel, batch: &[ChannelRealization]) -> Result<f64> {
    Ok(forward_backward(&mut model.clone(), batch)?.0)
}

/// Training-mode mean sum-rate of `batch` and its gradient with respect to
/// [`ClModel::parameters`].
pub fn batch_gradient(model: &ClModel, batch: &[ChannelRealization]) -> Result<(f64, Vec<f64>)> {
    let (mean, grads) = forward_backward(&mut model.clone(), batch)?;
    Ok((mean, grads.slices().iter().flat_map(|s| s.iter().map(|g| -g)).collect()))
}

fn draw_sample<R: Rng + ?Sized>(cfg: &ClConfig, rng: &mut R) -> Result<ChannelRealization> {
    let rho = sample_deployment(&cfg.geometry, cfg.m_train, cfg.k, rng)?;
    let phi = cfg.phi_sampling.sample(rng);
    sample_channel(&rho, phi, rng)
}

fn validation_score(model: &ClModel, set: &[ChannelRealization]) -> Result<f64> {
    let mut total = 0.0;
    for c in set {
        total += sum_rate(c, &model.forward_pass(&c.rho, c.h_hat(), model.config.power)?)?;
    }
    Ok(total / set.len() as f64)
}

/// Trains a model from scratch. A validation set of
/// `config.validation_samples` realizations is drawn from its own stream.
pub fn train_cl<R: RngCore + ?Sized>(config: &ClConfig, rng: &mut R) -> Result<(ClModel, TrainTrace)> {
    config.validate()?;
    let mut val_rng = StreamRng::seed_from_u64(rng.next_u64());
    let validation = (0..config.validation_samples)
        .map(|_| draw_sample(config, &mut val_rng))
        .collect::<Result<Vec<_>>>()?;
    train_cl_with_validation(config, &validation, rng)
}

pub fn train_cl_with_validation<R: RngCore + ?Sized>(
    config: &ClConfig,
    validation: &[ChannelRealization],
    rng: &mut R,
) -> Result<(ClModel, TrainTrace)> {
    let mut model = ClModel::new(config.clone(), rng)?;
    let mut adam = AdamState::new(AdamConfig {
        learning_rate: config.learning_rate,
        ..AdamConfig::default()
    });
    let mut trace = TrainTrace::default();
    let mut smoothed: Option<f64> = None;
    for epoch in 0..config.epochs {
        let mut epoch_total = 0.0;
        for _ in 0..config.steps_per_epoch {
            let batch = (0..config.batch_size)
                .map(|_| draw_sample(config, rng))
                .collect::<Result<Vec<_>>>()?;
            let (mean, grads) = forward_backward(&mut model, &batch)?;
            let slices = grads.slices();
            if !mean.is_finite() || slices.iter().any(|s| s.iter().any(|g| !g.is_finite())) {
                return Err(Error::Diverged { epoch });
            }
            adam.update(&mut model.trainable_mut(), &slices)?;
            epoch_total += mean;
            trace.steps += 1;
        }
        let mean_objective = epoch_total / config.steps_per_epoch.max(1) as f64;
        let s = smoothed.map_or(mean_objective, |prev| 0.7 * prev + 0.3 * mean_objective);
        smoothed = Some(s);
        let validation_objective = if validation.is_empty() {
            None
        } else {
            let v = validation_score(&model, validation)?;
            if !v.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            Some(v)
        };
        trace.records.push(EpochRecord {
            epoch,
            mean_objective,
            smoothed_objective: s,
            validation_objective,
        });
    }
    Ok((model, trace))
}
