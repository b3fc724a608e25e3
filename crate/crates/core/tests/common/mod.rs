//! Reference oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use cellfree::coplearn::{ClConfig, ClModel, Method};
use cellfree::csgd::{saa_gradient, saa_sum_rate, sample_minibatch, BeamformerReading};
use cellfree::netenv::rng::StreamRng;
use cellfree::netenv::{sample_channel, sample_deployment, ChannelRealization, GeometryConfig};
use cellfree::neuralcore::batchnorm::batchnorm_train;
use cellfree::neuralcore::layers::DenseParams;
use cellfree::neuralcore::{
    activation_backward, batchnorm_backward, dense_backward, dense_forward, Activation, BatchNormParams, Mlp,
    MlpArch, Tensor2D,
};
use cellfree::objective::PowerAllocation;
use rand::{Rng, SeedableRng};

pub fn rng(seed: u64) -> StreamRng {
    StreamRng::seed_from_u64(seed)
}

pub fn channel<R: Rng>(m: usize, k: usize, phi: f64, rng: &mut R) -> ChannelRealization {
    let rho = sample_deployment(&GeometryConfig::default(), m, k, rng).unwrap();
    sample_channel(&rho, phi, rng).unwrap()
}

/// `‖a - b‖₂ / ‖b‖₂`, with the denominator floored at `floor`.
pub fn rel_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(floor)
}

/// Central differences of `f` at `x` with per-coordinate step `h(x_j)`.
pub fn central_diff(x: &[f64], h: impl Fn(f64) -> f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    let mut probe = x.to_vec();
    for j in 0..x.len() {
        let step = h(x[j]);
        probe[j] = x[j] + step;
        let up = f(&probe);
        probe[j] = x[j] - step;
        let down = f(&probe);
        probe[j] = x[j];
        out.push((up - down) / (2.0 * step));
    }
    out
}

/// One random SAA gradient instance. Returns the relative error of the
/// analytic gradient against central differences.
pub fn saa_gradient_instance<R: Rng>(rng: &mut R) -> f64 {
    let m = rng.random_range(1..=8);
    let k = rng.random_range(1..=4);
    let phi = [0.0, 0.1, 0.5][rng.random_range(0..3)];
    let power = 100.0;
    let chan = channel(m, k, phi, rng);
    let ap = rng.random_range(0..m);
    let reading = if rng.random::<bool>() {
        BeamformerReading::LocalKnown
    } else {
        BeamformerReading::BatchSampled
    };
    let batch = sample_minibatch(&chan.rho, phi, ap, rng.random_range(1..=8), reading, rng).unwrap();
    let rows: Vec<f64> = (0..m * k).map(|_| rng.random_range(0.05..1.0) * power / k as f64).collect();
    let p = PowerAllocation::new(m, k, rows).unwrap();
    let h_i = chan.h_hat_row(ap).to_vec();
    let analytic = saa_gradient(&h_i, &batch, &p, 1e-12).unwrap();
    let fd = central_diff(p.row(ap), |v| 1e-5 * v, |row| {
        let mut q = p.clone();
        q.row_mut(ap).copy_from_slice(row);
        saa_sum_rate(&h_i, &batch, &q).unwrap()
    });
    rel_error(&analytic, &fd, 1e-12)
}

/// Euclidean projection onto `{x ≥ 0, Σx ≤ budget}` by enumerating every
/// face: each support set with the budget constraint either slack or tight.
pub fn brute_force_projection(v: &[f64], budget: f64) -> Vec<f64> {
    let n = v.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << n) {
        let support: Vec<usize> = (0..n).filter(|j| mask & (1 << j) != 0).collect();
        let mut candidates = Vec::new();
        let mut slack = vec![0.0; n];
        for &j in &support {
            slack[j] = v[j];
        }
        candidates.push(slack);
        if !support.is_empty() {
            let shift = (support.iter().map(|j| v[*j]).sum::<f64>() - budget) / support.len() as f64;
            let mut tight = vec![0.0; n];
            for &j in &support {
                tight[j] = v[j] - shift;
            }
            candidates.push(tight);
        }
        for x in candidates {
            let feasible = x.iter().all(|e| *e >= -1e-12) && x.iter().sum::<f64>() <= budget + 1e-12;
            if !feasible {
                continue;
            }
            let d: f64 = x.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum();
            if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                best = Some((d, x));
            }
        }
    }
    best.expect("the origin is always feasible").1
}

/// Upstream-weighted loss `Σ w ⊙ y` used by the layer checks.
fn weighted(y: &Tensor2D, w: &Tensor2D) -> f64 {
    y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
}

fn random_tensor<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor2D {
    Tensor2D::from_fn(rows, cols, |_, _| rng.random_range(-1.5..1.5))
}

/// Worst relative error of the dense layer's input, weight and bias gradients.
pub fn dense_fd_error<R: Rng>(rng: &mut R) -> f64 {
    let (n, i, o) = (5, 4, 3);
    let mut params = DenseParams::init(i, o, 2.0, rng);
    params.bias = (0..o).map(|_| rng.random_range(-1.0..1.0)).collect();
    let x = random_tensor(n, i, rng);
    let w = random_tensor(n, o, rng);
    let (gx, gp) = dense_backward(&params, &x, &w).unwrap();
    let h = |_| 1e-6;
    let fx = central_diff(x.data(), h, |d| {
        weighted(&dense_forward(&params, &Tensor2D::from_vec(n, i, d.to_vec()).unwrap()).unwrap(), &w)
    });
    let fw = central_diff(params.weight.data(), h, |d| {
        let mut p = params.clone();
        p.weight = Tensor2D::from_vec(o, i, d.to_vec()).unwrap();
        weighted(&dense_forward(&p, &x).unwrap(), &w)
    });
    let fb = central_diff(&params.bias, h, |d| {
        let mut p = params.clone();
        p.bias = d.to_vec();
        weighted(&dense_forward(&p, &x).unwrap(), &w)
    });
    rel_error(gx.data(), &fx, 1e-12)
        .max(rel_error(gp.weight.data(), &fw, 1e-12))
        .max(rel_error(&gp.bias, &fb, 1e-12))
}

/// Worst relative error of the ReLU and ReLU6 backward passes, with inputs
/// kept away from the kinks.
pub fn activation_fd_error<R: Rng>(rng: &mut R) -> f64 {
    let mut worst: f64 = 0.0;
    for act in [Activation::Relu, Activation::Relu6] {
        let x = Tensor2D::from_fn(4, 5, |_, _| loop {
            let v: f64 = rng.random_range(-3.0..9.0);
            if [0.0, 6.0].iter().all(|kink| (v - kink).abs() > 1e-3) {
                break v;
            }
        });
        let w = random_tensor(4, 5, rng);
        let an = activation_backward(act, &x, &w);
        let fd = central_diff(x.data(), |_| 1e-6, |d| {
            d.iter().zip(w.data()).map(|(v, g)| act.apply(*v) * g).sum()
        });
        worst = worst.max(rel_error(an.data(), &fd, 1e-12));
    }
    worst
}

/// Worst relative error of training-mode batch-norm gradients on a 4×3 batch.
pub fn batchnorm_fd_error<R: Rng>(rng: &mut R) -> f64 {
    let (n, f) = (4, 3);
    let mut params = BatchNormParams::new(f);
    params.gamma = (0..f).map(|_| rng.random_range(0.5..1.5)).collect();
    params.beta = (0..f).map(|_| rng.random_range(-0.5..0.5)).collect();
    let x = random_tensor(n, f, rng);
    let w = random_tensor(n, f, rng);
    let (_, cache) = batchnorm_train(&mut params.clone(), &x).unwrap();
    let (gx, gp) = batchnorm_backward(&params, &cache, &w).unwrap();
    let eval = |p: &BatchNormParams, x: &Tensor2D| weighted(&batchnorm_train(&mut p.clone(), x).unwrap().0, &w);
    let h = |_| 1e-5;
    let fx = central_diff(x.data(), h, |d| eval(&params, &Tensor2D::from_vec(n, f, d.to_vec()).unwrap()));
    let fg = central_diff(&params.gamma, h, |d| {
        let mut p = params.clone();
        p.gamma = d.to_vec();
        eval(&p, &x)
    });
    let fb = central_diff(&params.beta, h, |d| {
        let mut p = params.clone();
        p.beta = d.to_vec();
        eval(&p, &x)
    });
    rel_error(gx.data(), &fx, 1e-12)
        .max(rel_error(&gp.gamma, &fg, 1e-12))
        .max(rel_error(&gp.beta, &fb, 1e-12))
}

/// Relative error of a whole MLP's parameter and input gradients in training
/// mode (dense → ReLU → batch-norm blocks).
pub fn mlp_fd_error<R: Rng>(rng: &mut R) -> f64 {
    let arch = MlpArch::new(3, 2, 6, 2);
    let net = Mlp::new(arch.clone(), rng);
    let x = random_tensor(8, 3, rng);
    let w = random_tensor(8, 2, rng);
    let (_, cache) = net.clone().forward_train(&x).unwrap();
    let (gx, grads) = net.backward(&cache, &w).unwrap();
    let params: Vec<f64> = {
        let mut n = net.clone();
        n.trainable_mut().iter().flat_map(|s| s.to_vec()).collect()
    };
    let with = |values: &[f64]| {
        let mut n = net.clone();
        let mut pos = 0;
        for s in n.trainable_mut() {
            s.copy_from_slice(&values[pos..pos + s.len()]);
            pos += s.len();
        }
        n
    };
    let h = |_| 1e-6;
    let fp = central_diff(&params, h, |d| weighted(&with(d).forward_train(&x).unwrap().0, &w));
    let fx = central_diff(x.data(), h, |d| {
        weighted(&net.clone().forward_train(&Tensor2D::from_vec(8, 3, d.to_vec()).unwrap()).unwrap().0, &w)
    });
    rel_error(&grads.flatten(), &fp, 1e-12).max(rel_error(gx.data(), &fx, 1e-12))
}

/// Randomly initialized model whose output biases are shifted so that the
/// head sees both saturated and vanishing budgets.
pub fn random_model<R: Rng>(method: Method, k: usize, rng: &mut R) -> ClModel {
    let mut cfg = ClConfig::new(method, k, 100.0);
    cfg.hidden_width = 16;
    cfg.hidden_depth = 2;
    let mut model = ClModel::new(cfg, rng).unwrap();
    let mut params = model.parameters();
    let n = params.len();
    let shift = rng.random_range(-4.0..8.0);
    // The last K + 1 parameters are D's output bias.
    for v in &mut params[n - (k + 1)..] {
        *v += shift * rng.random_range(0.0..1.0);
    }
    model.set_parameters(&params).unwrap();
    model
}
