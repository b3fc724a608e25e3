use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor2D;
use crate::error::{Error, Result};

/// Fully-connected layer `y = x Wᵀ + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseParams {
    /// `out × in`.
    pub weight: Tensor2D,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub weight: Tensor2D,
    pub bias: Vec<f64>,
}

impl DenseParams {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: Tensor2D::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
        }
    }

    /// Gaussian weights with variance `gain / fan_in`, zero bias
    /// (`gain = 2` is He initialization).
    pub fn init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, gain: f64, rng: &mut R) -> Self {
        let std = (gain / in_dim.max(1) as f64).sqrt();
        let weight = Tensor2D::from_fn(out_dim, in_dim, |_, _| std * rng.sample::<f64, _>(StandardNormal));
        Self {
            weight,
            bias: vec![0.0; out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

pub fn dense_forward(params: &DenseParams, x: &Tensor2D) -> Result<Tensor2D> {
    if x.cols() != params.in_dim() {
        return Err(Error::shape(format!(
            "dense layer expects {} inputs, got {}",
            params.in_dim(),
            x.cols()
        )));
    }
    let mut y = x.matmul_t(&params.weight)?;
    for r in 0..y.rows() {
        for (v, b) in y.row_mut(r).iter_mut().zip(&params.bias) {
            *v += b;
        }
    }
    Ok(y)
}

/// Returns `(∂L/∂x, parameter gradients)` for upstream gradient `grad_y`.
pub fn dense_backward(params: &DenseParams, x: &Tensor2D, grad_y: &Tensor2D) -> Result<(Tensor2D, DenseGrads)> {
    if grad_y.cols() != params.out_dim() || grad_y.rows() != x.rows() {
        return Err(Error::shape(format!(
            "dense backward: grad {:?} for input {:?} and {} outputs",
            grad_y.shape(),
            x.shape(),
            params.out_dim()
        )));
    }
    let grad_x = grad_y.matmul(&params.weight)?;
    let weight = grad_y.t_matmul(x)?;
    let mut bias = vec![0.0; params.out_dim()];
    for r in 0..grad_y.rows() {
        for (b, g) in bias.iter_mut().zip(grad_y.row(r)) {
            *b += g;
        }
    }
    Ok((grad_x, DenseGrads { weight, bias }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Relu6,
}

impl Activation {
    pub fn tag(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Relu6 => "relu6",
        }
    }

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Relu6 => x.clamp(0.0, 6.0),
        }
    }

    /// Derivative at `x`, taking 0 at the kinks.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => (x > 0.0) as u8 as f64,
            Activation::Relu6 => (x > 0.0 && x < 6.0) as u8 as f64,
        }
    }
}

pub fn relu_forward(x: &Tensor2D) -> Tensor2D {
    x.map(|v| Activation::Relu.apply(v))
}

pub fn relu6_forward(x: &Tensor2D) -> Tensor2D {
    x.map(|v| Activation::Relu6.apply(v))
}

/// Masks `grad_y` by the activation derivative at the pre-activation `x`.
pub fn activation_backward(act: Activation, x: &Tensor2D, grad_y: &Tensor2D) -> Tensor2D {
    let data = x
        .data()
        .iter()
        .zip(grad_y.data())
        .map(|(xv, g)| g * act.derivative(*xv))
        .collect();
    Tensor2D::from_vec(x.rows(), x.cols(), data).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_and_bias() {
        let mut p = DenseParams::zeros(3, 3);
        p.weight = Tensor2D::identity(3);
        let x = Tensor2D::from_fn(2, 3, |r, c| (r * 3 + c) as f64 - 2.5);
        assert_eq!(dense_forward(&p, &x).unwrap(), x);
        p.bias = vec![1.0, -2.0, 0.5];
        let y = dense_forward(&p, &Tensor2D::zeros(4, 3)).unwrap();
        for r in 0..4 {
            assert_eq!(y.row(r), &[1.0, -2.0, 0.5]);
        }
        assert!(dense_forward(&p, &Tensor2D::zeros(1, 2)).is_err());
    }

    #[test]
    fn relu6_values() {
        let x = Tensor2D::from_vec(1, 3, vec![7.0, -1.0, 3.0]).unwrap();
        assert_eq!(relu6_forward(&x).data(), &[6.0, 0.0, 3.0]);
        assert_eq!(relu_forward(&x).data(), &[7.0, 0.0, 3.0]);
        let g = Tensor2D::from_vec(1, 3, vec![1.0; 3]).unwrap();
        assert_eq!(activation_backward(Activation::Relu6, &x, &g).data(), &[0.0, 0.0, 1.0]);
        let kinks = Tensor2D::from_vec(1, 2, vec![0.0, 6.0]).unwrap();
        let g2 = Tensor2D::from_vec(1, 2, vec![1.0; 2]).unwrap();
        assert_eq!(activation_backward(Activation::Relu6, &kinks, &g2).data(), &[0.0, 0.0]);
        // Budget scaling of the power head: P · relu6(δ) / 6.
        assert_eq!(10.0 * Activation::Relu6.apply(3.0) / 6.0, 5.0);
    }

    #[test]
    fn he_init_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = DenseParams::init(200, 300, 2.0, &mut rng);
        let n = p.weight.data().len() as f64;
        let var = p.weight.data().iter().map(|w| w * w).sum::<f64>() / n;
        assert!((var / 0.01 - 1.0).abs() < 0.05, "{var}");
    }
}
