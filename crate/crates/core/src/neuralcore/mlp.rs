use rand::Rng;
use serde::{Deserialize, Serialize};

use super::batchnorm::{batchnorm_backward, batchnorm_infer, batchnorm_train, BatchNormCache, BatchNormGrads, BatchNormParams};
use super::layers::{activation_backward, dense_backward, dense_forward, Activation, DenseGrads, DenseParams};
use super::tensor::Tensor2D;
use crate::error::{Error, Result};

/// Layer sizes and options of an [`Mlp`]. Every hidden block is
/// dense → ReLU → batch-norm; the output layer is a bare dense layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpArch {
    pub in_dim: usize,
    pub hidden: Vec<usize>,
    pub out_dim: usize,
    pub batchnorm: bool,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
}

impl MlpArch {
    pub fn new(in_dim: usize, depth: usize, width: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            hidden: vec![width; depth],
            out_dim,
            batchnorm: true,
            bn_momentum: 0.9,
            bn_epsilon: 1e-5,
        }
    }

    /// Activation tags per layer, as recorded in checkpoints.
    pub fn activation_tags(&self) -> Vec<String> {
        let mut tags: Vec<String> = self
            .hidden
            .iter()
            .map(|_| {
                let act = Activation::Relu.tag();
                if self.batchnorm {
                    format!("{act}+batchnorm")
                } else {
                    act.to_string()
                }
            })
            .collect();
        tags.push("linear".into());
        tags
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenBlock {
    pub dense: DenseParams,
    pub norm: Option<BatchNormParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    arch: MlpArch,
    blocks: Vec<HiddenBlock>,
    output: DenseParams,
}

#[derive(Debug, Clone)]
struct BlockCache {
    input: Tensor2D,
    pre_activation: Tensor2D,
    norm: Option<BatchNormCache>,
}

#[derive(Debug, Clone)]
pub struct MlpCache {
    blocks: Vec<BlockCache>,
    last_hidden: Tensor2D,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    blocks: Vec<(DenseGrads, Option<BatchNormGrads>)>,
    output: DenseGrads,
}

impl MlpGrads {
    /// Gradient slices in the same order as [`Mlp::trainable_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for (d, n) in &self.blocks {
            out.push(d.weight.data());
            out.push(&d.bias[..]);
            if let Some(n) = n {
                out.push(&n.gamma[..]);
                out.push(&n.beta[..]);
            }
        }
        out.push(self.output.weight.data());
        out.push(&self.output.bias[..]);
        out
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.slices().concat()
    }
}

impl Mlp {
    /// He-initialized hidden layers; the output layer uses variance `1/fan_in`.
    pub fn new<R: Rng + ?Sized>(arch: MlpArch, rng: &mut R) -> Self {
        let mut blocks = Vec::with_capacity(arch.hidden.len());
        let mut fan_in = arch.in_dim;
        for &w in &arch.hidden {
            blocks.push(HiddenBlock {
                dense: DenseParams::init(fan_in, w, 2.0, rng),
                norm: arch
                    .batchnorm
                    .then(|| BatchNormParams::with_hyper(w, arch.bn_momentum, arch.bn_epsilon)),
            });
            fan_in = w;
        }
        let output = DenseParams::init(fan_in, arch.out_dim, 1.0, rng);
        Self { arch, blocks, output }
    }

    pub fn arch(&self) -> &MlpArch {
        &self.arch
    }

    pub fn in_dim(&self) -> usize {
        self.arch.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.arch.out_dim
    }

    pub fn output_layer_mut(&mut self) -> &mut DenseParams {
        &mut self.output
    }

    fn check_input(&self, x: &Tensor2D) -> Result<()> {
        if x.cols() != self.arch.in_dim {
            return Err(Error::shape(format!(
                "network expects {} input features, got {}",
                self.arch.in_dim,
                x.cols()
            )));
        }
        Ok(())
    }

    /// Inference pass (batch-norm uses running statistics).
    pub fn forward(&self, x: &Tensor2D) -> Result<Tensor2D> {
        self.check_input(x)?;
        let mut h = x.clone();
        for block in &self.blocks {
            let z = dense_forward(&block.dense, &h)?;
            let a = z.map(|v| Activation::Relu.apply(v));
            h = match &block.norm {
                Some(n) => batchnorm_infer(n, &a)?,
                None => a,
            };
        }
        dense_forward(&self.output, &h)
    }

    /// Training pass: batch statistics, running statistics updated.
    pub fn forward_train(&mut self, x: &Tensor2D) -> Result<(Tensor2D, MlpCache)> {
        self.check_input(x)?;
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut h = x.clone();
        for block in &mut self.blocks {
            let z = dense_forward(&block.dense, &h)?;
            let a = z.map(|v| Activation::Relu.apply(v));
            let (out, norm) = match &mut block.norm {
                Some(n) => {
                    let (y, c) = batchnorm_train(n, &a)?;
                    (y, Some(c))
                }
                None => (a, None),
            };
            caches.push(BlockCache {
                input: std::mem::replace(&mut h, out),
                pre_activation: z,
                norm,
            });
        }
        let y = dense_forward(&self.output, &h)?;
        Ok((
            y,
            MlpCache {
                blocks: caches,
                last_hidden: h,
            },
        ))
    }

    pub fn backward(&self, cache: &MlpCache, grad_y: &Tensor2D) -> Result<(Tensor2D, MlpGrads)> {
        let (mut g, output) = dense_backward(&self.output, &cache.last_hidden, grad_y)?;
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (block, c) in self.blocks.iter().zip(&cache.blocks).rev() {
            let norm_grads = match (&block.norm, &c.norm) {
                (Some(n), Some(nc)) => {
                    let (gx, ng) = batchnorm_backward(n, nc, &g)?;
                    g = gx;
                    Some(ng)
                }
                _ => None,
            };
            let g_pre = activation_backward(Activation::Relu, &c.pre_activation, &g);
            let (gx, dg) = dense_backward(&block.dense, &c.input, &g_pre)?;
            g = gx;
            blocks.push((dg, norm_grads));
        }
        blocks.reverse();
        Ok((g, MlpGrads { blocks, output }))
    }

    /// Trainable parameter slices (weights, biases, γ, β), in a fixed order.
    pub fn trainable_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for b in &mut self.blocks {
            out.push(b.dense.weight.data_mut());
            out.push(&mut b.dense.bias[..]);
            if let Some(n) = &mut b.norm {
                out.push(&mut n.gamma[..]);
                out.push(&mut n.beta[..]);
            }
        }
        out.push(self.output.weight.data_mut());
        out.push(&mut self.output.bias[..]);
        out
    }

    pub fn trainable_count(&self) -> usize {
        let mut n = 0;
        for b in &self.blocks {
            n += b.dense.weight.data().len() + b.dense.bias.len();
            if let Some(bn) = &b.norm {
                n += 2 * bn.features();
            }
        }
        n + self.output.weight.data().len() + self.output.bias.len()
    }

    /// Full state (trainable parameters plus running statistics), flattened.
    pub fn state_vec(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.extend_from_slice(b.dense.weight.data());
            out.extend_from_slice(&b.dense.bias);
            if let Some(n) = &b.norm {
                out.extend_from_slice(&n.gamma);
                out.extend_from_slice(&n.beta);
                out.extend_from_slice(&n.running_mean);
                out.extend_from_slice(&n.running_var);
            }
        }
        out.extend_from_slice(self.output.weight.data());
        out.extend_from_slice(&self.output.bias);
        out
    }

    pub fn state_len(arch: &MlpArch) -> usize {
        let mut n = 0;
        let mut fan_in = arch.in_dim;
        for &w in &arch.hidden {
            n += w * fan_in + w;
            if arch.batchnorm {
                n += 4 * w;
            }
            fan_in = w;
        }
        n + arch.out_dim * fan_in + arch.out_dim
    }

    /// Rebuilds a network from [`Mlp::state_vec`] output.
    pub fn from_state(arch: MlpArch, state: &[f64]) -> Result<Self> {
        if state.len() != Self::state_len(&arch) {
            return Err(Error::shape(format!(
                "state has {} values, architecture needs {}",
                state.len(),
                Self::state_len(&arch)
            )));
        }
        let mut pos = 0;
        let mut take = |n: usize| {
            let s = state[pos..pos + n].to_vec();
            pos += n;
            s
        };
        let mut blocks = Vec::with_capacity(arch.hidden.len());
        let mut fan_in = arch.in_dim;
        for &w in &arch.hidden {
            let weight = Tensor2D::from_vec(w, fan_in, take(w * fan_in))?;
            let bias = take(w);
            let norm = if arch.batchnorm {
                Some(BatchNormParams {
                    gamma: take(w),
                    beta: take(w),
                    running_mean: take(w),
                    running_var: take(w),
                    momentum: arch.bn_momentum,
                    epsilon: arch.bn_epsilon,
                })
            } else {
                None
            };
            blocks.push(HiddenBlock {
                dense: DenseParams { weight, bias },
                norm,
            });
            fan_in = w;
        }
        let weight = Tensor2D::from_vec(arch.out_dim, fan_in, take(arch.out_dim * fan_in))?;
        let bias = take(arch.out_dim);
        Ok(Self {
            arch,
            blocks,
            output: DenseParams { weight, bias },
        })
    }
}
