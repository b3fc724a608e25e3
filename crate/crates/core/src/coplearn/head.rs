//! Feasibility-enforcing output head of the decision network.
//!
//! A raw output row `[d_1 … d_K, δ]` becomes
//!
//! ```text
//! d_k ← g(d_k)                 (softplus or ReLU)
//! δ   ← P · min(max(δ, 0), 6) / 6
//! p_k = δ · d_k / Σ_l d_l
//! ```
//!
//! so `Σ_k p_k = δ ≤ P` for any raw values.

use serde::{Deserialize, Serialize};

/// Below this the ratio split is undefined and the AP stays silent.
pub const DEGENERATE_SUM: f64 = 1e-12;

/// Map that makes the first `K` head outputs nonnegative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NonNegMap {
    #[default]
    Softplus,
    Relu,
}

impl NonNegMap {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            NonNegMap::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
            NonNegMap::Relu => x.max(0.0),
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            NonNegMap::Softplus => {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            }
            NonNegMap::Relu => (x > 0.0) as u8 as f64,
        }
    }
}

/// Budget used by an AP: `P · relu6(δ_raw) / 6`.
#[inline]
pub fn budget_fraction(raw_delta: f64, power: f64) -> f64 {
    power * raw_delta.clamp(0.0, 6.0) / 6.0
}

/// Power row `p_i` and the budget `δ_i` it spends.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    pub p: Vec<f64>,
    pub delta: f64,
}

/// Applies the head to one raw row of length `K + 1`.
pub fn power_head(raw: &[f64], power: f64, map: NonNegMap) -> HeadOutput {
    let k = raw.len() - 1;
    let delta = budget_fraction(raw[k], power);
    let d: Vec<f64> = raw[..k].iter().map(|v| map.apply(*v)).collect();
    let s: f64 = d.iter().sum();
    let p = if s > DEGENERATE_SUM {
        d.iter().map(|v| delta * v / s).collect()
    } else {
        vec![0.0; k]
    };
    HeadOutput { p, delta }
}

/// Gradient with respect to the raw row given `∂L/∂p` for that row.
pub fn power_head_backward(raw: &[f64], power: f64, map: NonNegMap, grad_p: &[f64]) -> Vec<f64> {
    let k = raw.len() - 1;
    let mut out = vec![0.0; k + 1];
    let delta = budget_fraction(raw[k], power);
    let d: Vec<f64> = raw[..k].iter().map(|v| map.apply(*v)).collect();
    let s: f64 = d.iter().sum();
    if s <= DEGENERATE_SUM {
        return out;
    }
    // ∂L/∂δ = Σ_k g_k d_k / S, ∂L/∂d_j = δ/S · (g_j - Σ_k g_k d_k / S)
    let weighted: f64 = grad_p.iter().zip(&d).map(|(g, v)| g * v).sum::<f64>() / s;
    for j in 0..k {
        out[j] = delta / s * (grad_p[j] - weighted) * map.derivative(raw[j]);
    }
    if raw[k] > 0.0 && raw[k] < 6.0 {
        out[k] = weighted * power / 6.0;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_evaluated_split() {
        // Identity-like map: ReLU on already-positive entries.
        let out = power_head(&[1.0, 3.0, 3.0], 10.0, NonNegMap::Relu);
        assert_eq!(out.delta, 5.0);
        assert!((out.p[0] - 1.25).abs() < 1e-15 && (out.p[1] - 3.75).abs() < 1e-15);
    }

    #[test]
    fn saturation_and_floor() {
        let out = power_head(&[0.7, 0.7, 0.7, 0.7, 9.0], 8.0, NonNegMap::Softplus);
        assert!(out.p.iter().all(|v| (v - 2.0).abs() < 1e-14));
        let off = power_head(&[0.2, 5.0, -0.1], 8.0, NonNegMap::Softplus);
        assert_eq!(off.p, vec![0.0, 0.0]);
        let dead = power_head(&[-1.0, -2.0, 3.0], 8.0, NonNegMap::Relu);
        assert_eq!(dead.p, vec![0.0, 0.0]);
        assert_eq!(power_head_backward(&[-1.0, -2.0, 3.0], 8.0, NonNegMap::Relu, &[1.0, 1.0]), vec![0.0; 3]);
    }

    #[test]
    fn softplus_is_stable() {
        let m = NonNegMap::Softplus;
        assert!((m.apply(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(m.apply(800.0), 800.0);
        assert!(m.apply(-800.0) >= 0.0 && m.apply(-800.0) < 1e-300);
        assert!((m.derivative(0.0) - 0.5).abs() < 1e-15);
        assert!(m.derivative(-800.0).is_finite() && m.derivative(800.0) == 1.0);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let raw = [0.3, -1.2, 2.0, 2.5];
        let g = [0.7, -0.4, 1.1];
        let loss = |r: &[f64]| -> f64 {
            power_head(r, 10.0, NonNegMap::Softplus).p.iter().zip(&g).map(|(p, w)| p * w).sum()
        };
        let an = power_head_backward(&raw, 10.0, NonNegMap::Softplus, &g);
        for j in 0..raw.len() {
            let h = 1e-6;
            let mut a = raw;
            let mut b = raw;
            a[j] += h;
            b[j] -= h;
            let fd = (loss(&a) - loss(&b)) / (2.0 * h);
            assert!((fd - an[j]).abs() <= 1e-7 * (1.0 + fd.abs()), "{j}: {fd} vs {}", an[j]);
        }
    }
}
