use serde::{Deserialize, Serialize};

use super::tensor::Tensor2D;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Per-feature batch normalization.
///
/// Running statistics follow `r ← momentum · r + (1 - momentum) · batch`;
/// the running variance uses the unbiased batch estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormGrads {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

/// What the backward pass needs from a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    normalized: Tensor2D,
    inv_std: Vec<f64>,
}

impl BatchNormParams {
    pub fn new(features: usize) -> Self {
        Self::with_hyper(features, 0.9, 1e-5)
    }

    pub fn with_hyper(features: usize, momentum: f64, epsilon: f64) -> Self {
        Self {
            gamma: vec![1.0; features],
            beta: vec![0.0; features],
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            momentum,
            epsilon,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.len()
    }
}

fn check(params: &BatchNormParams, x: &Tensor2D) -> Result<()> {
    if x.cols() != params.features() {
        return Err(Error::shape(format!(
            "batch-norm over {} features got {} columns",
            params.features(),
            x.cols()
        )));
    }
    Ok(())
}

pub fn batchnorm_infer(params: &BatchNormParams, x: &Tensor2D) -> Result<Tensor2D> {
    check(params, x)?;
    let scale: Vec<f64> = params
        .gamma
        .iter()
        .zip(&params.running_var)
        .map(|(g, v)| g / (v + params.epsilon).sqrt())
        .collect();
    let mut y = x.clone();
    for r in 0..y.rows() {
        for (c, v) in y.row_mut(r).iter_mut().enumerate() {
            *v = (*v - params.running_mean[c]) * scale[c] + params.beta[c];
        }
    }
    Ok(y)
}

/// Training-mode forward pass: normalizes with batch statistics and updates
/// the running statistics in place.
pub fn batchnorm_train(params: &mut BatchNormParams, x: &Tensor2D) -> Result<(Tensor2D, BatchNormCache)> {
    check(params, x)?;
    let n = x.rows();
    if n < 2 {
        return Err(Error::InvalidInput(
            "batch-norm training needs a batch of at least 2".into(),
        ));
    }
    let f = x.cols();
    let mut mean = vec![0.0; f];
    for r in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; f];
    for r in 0..n {
        for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|s| *s /= n as f64);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + params.epsilon).sqrt()).collect();

    let mut normalized = x.clone();
    let mut y = x.clone();
    for r in 0..n {
        let xr = normalized.row_mut(r);
        let yr = y.row_mut(r);
        for c in 0..f {
            xr[c] = (xr[c] - mean[c]) * inv_std[c];
            yr[c] = params.gamma[c] * xr[c] + params.beta[c];
        }
    }

    let mom = params.momentum;
    let unbias = n as f64 / (n - 1) as f64;
    for c in 0..f {
        params.running_mean[c] = mom * params.running_mean[c] + (1.0 - mom) * mean[c];
        params.running_var[c] = mom * params.running_var[c] + (1.0 - mom) * var[c] * unbias;
    }
    Ok((y, BatchNormCache { normalized, inv_std }))
}

pub fn batchnorm_forward(params: &mut BatchNormParams, x: &Tensor2D, mode: Mode) -> Result<Tensor2D> {
    match mode {
        Mode::Train => batchnorm_train(params, x).map(|(y, _)| y),
        Mode::Infer => batchnorm_infer(params, x),
    }
}

pub fn batchnorm_backward(
    params: &BatchNormParams,
    cache: &BatchNormCache,
    grad_y: &Tensor2D,
) -> Result<(Tensor2D, BatchNormGrads)> {
    let xhat = &cache.normalized;
    if grad_y.shape() != xhat.shape() {
        return Err(Error::shape("batch-norm backward shape mismatch"));
    }
    let (n, f) = xhat.shape();
    let mut gamma = vec![0.0; f];
    let mut beta = vec![0.0; f];
    for r in 0..n {
        for c in 0..f {
            let g = grad_y.get(r, c);
            gamma[c] += g * xhat.get(r, c);
            beta[c] += g;
        }
    }
    // dx = γ · inv_std / N · (N·dy - Σdy - x̂ · Σ(dy·x̂))
    let mut grad_x = Tensor2D::zeros(n, f);
    let nf = n as f64;
    for r in 0..n {
        let out = grad_x.row_mut(r);
        for c in 0..f {
            let g = grad_y.get(r, c);
            out[c] = params.gamma[c] * cache.inv_std[c] / nf
                * (nf * g - beta[c] - xhat.get(r, c) * gamma[c]);
        }
    }
    Ok((grad_x, BatchNormGrads { gamma, beta }))
}
