//! SINR and sum-rate under per-AP conjugate beamforming.
//!
//! AP `i` transmits the stream of UE `l` with power `p_{l,i}` along the unit
//! phase `u_{l,i} = ĥ*_{l,i} / |ĥ_{l,i}|`. UE `k` therefore receives stream
//! `l` with complex gain
//!
//! ```text
//! a_{k,l} = Σ_i h_{k,i} · u_{l,i} · √p_{l,i}
//! ```
//!
//! and `γ_k = |a_{k,k}|² / (1 + Σ_{l≠k} |a_{k,l}|²)` with unit noise power.

use std::f64::consts::LN_2;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netenv::{sample_channel, validate_phi, ChannelRealization, LongTermCsi};

/// Below this magnitude an estimate is treated as zero and the AP does not
/// transmit on that link.
pub const ZERO_ESTIMATE: f64 = 1e-30;

/// Default absolute slack for [`check_feasible`], scaled by the budget.
pub const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerAllocation {
    m: usize,
    k: usize,
    p: Vec<f64>,
}

impl PowerAllocation {
    pub fn new(m: usize, k: usize, p: Vec<f64>) -> Result<Self> {
        if p.len() != m * k {
            return Err(Error::shape(format!(
                "power matrix has {} entries, expected {m}x{k}",
                p.len()
            )));
        }
        Ok(Self { m, k, p })
    }

    pub fn zeros(m: usize, k: usize) -> Self {
        Self {
            m,
            k,
            p: vec![0.0; m * k],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::shape("ragged power rows"));
        }
        Ok(Self {
            m: rows.len(),
            k,
            p: rows.concat(),
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, ap: usize, ue: usize) -> f64 {
        self.p[ap * self.k + ue]
    }

    pub fn row(&self, ap: usize) -> &[f64] {
        &self.p[ap * self.k..(ap + 1) * self.k]
    }

    pub fn row_mut(&mut self, ap: usize) -> &mut [f64] {
        &mut self.p[ap * self.k..(ap + 1) * self.k]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.p
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.m).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn permute_aps(&self, perm: &[usize]) -> Self {
        let mut p = Vec::with_capacity(self.p.len());
        for &src in perm {
            p.extend_from_slice(self.row(src));
        }
        Self {
            m: perm.len(),
            k: self.k,
            p,
        }
    }
}

/// Unit conjugate-beamforming phase `ĥ* / |ĥ|`, or 0 for a vanishing estimate.
#[inline]
pub fn beam_phase(h_hat: Complex64) -> Complex64 {
    let mag = h_hat.norm_sqr().sqrt();
    if mag < ZERO_ESTIMATE {
        Complex64::new(0.0, 0.0)
    } else {
        h_hat.conj() * mag.recip()
    }
}

/// Stream gains `a_{k,l}` as a `K × K` row-major matrix (row = receiving UE).
///
/// `actual` and `phases` are `M × K`; `amplitudes` holds `√p`.
pub fn stream_gains(
    m: usize,
    k: usize,
    actual: &[Complex64],
    phases: &[Complex64],
    amplitudes: &[f64],
    out: &mut [Complex64],
) {
    out.iter_mut().for_each(|a| *a = Complex64::new(0.0, 0.0));
    for i in 0..m {
        let h = &actual[i * k..(i + 1) * k];
        let u = &phases[i * k..(i + 1) * k];
        let q = &amplitudes[i * k..(i + 1) * k];
        for (ue, hk) in h.iter().enumerate() {
            let row = &mut out[ue * k..(ue + 1) * k];
            for l in 0..k {
                row[l] += hk * u[l] * q[l];
            }
        }
    }
}

/// Per-UE SINR from the stream-gain matrix.
pub fn sinr_from_gains(k: usize, gains: &[Complex64]) -> Vec<f64> {
    (0..k)
        .map(|ue| {
            let row = &gains[ue * k..(ue + 1) * k];
            let interference: f64 = row
                .iter()
                .enumerate()
                .filter(|(l, _)| *l != ue)
                .map(|(_, a)| a.norm_sqr())
                .sum();
            row[ue].norm_sqr() / (1.0 + interference)
        })
        .collect()
}

fn check_dims(chan: &ChannelRealization, p: &PowerAllocation) -> Result<()> {
    if chan.m() != p.m() || chan.k() != p.k() {
        return Err(Error::shape(format!(
            "channel is {}x{} but power allocation is {}x{}",
            chan.m(),
            chan.k(),
            p.m(),
            p.k()
        )));
    }
    if let Some(v) = p.as_slice().iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::InvalidInput(format!("negative or non-finite power {v}")));
    }
    Ok(())
}

/// SINR of every UE.
pub fn sinr_all(chan: &ChannelRealization, p: &PowerAllocation) -> Result<Vec<f64>> {
    check_dims(chan, p)?;
    let (m, k) = (chan.m(), chan.k());
    let actual = chan.actual();
    let phases: Vec<_> = chan.h_hat().iter().map(|h| beam_phase(*h)).collect();
    let amps: Vec<_> = p.as_slice().iter().map(|v| v.sqrt()).collect();
    let mut gains = vec![Complex64::new(0.0, 0.0); k * k];
    stream_gains(m, k, &actual, &phases, &amps, &mut gains);
    Ok(sinr_from_gains(k, &gains))
}

pub fn sinr(chan: &ChannelRealization, p: &PowerAllocation, ue: usize) -> Result<f64> {
    if ue >= chan.k() {
        return Err(Error::InvalidInput(format!(
            "UE index {ue} out of range (K={})",
            chan.k()
        )));
    }
    Ok(sinr_all(chan, p)?[ue])
}

pub fn per_ue_rates(chan: &ChannelRealization, p: &PowerAllocation) -> Result<Vec<f64>> {
    Ok(sinr_all(chan, p)?.into_iter().map(|g| (1.0 + g).log2()).collect())
}

pub fn sum_rate(chan: &ChannelRealization, p: &PowerAllocation) -> Result<f64> {
    Ok(per_ue_rates(chan, p)?.iter().sum())
}

/// Sum-rate and its gradient with respect to the amplitudes `q = √p`.
///
/// Uses `log2(1+γ_k) = log2(T_k) - log2(1+I_k)` with
/// `T_k = 1 + Σ_l |a_{k,l}|²`, so every `|a_{k,l}|²` enters through at most
/// two logarithms. The gradient is written into `grad` (`M × K`).
pub fn sum_rate_amplitude_grad(
    m: usize,
    k: usize,
    actual: &[Complex64],
    phases: &[Complex64],
    amplitudes: &[f64],
    gains: &mut [Complex64],
    grad: &mut [f64],
) -> f64 {
    stream_gains(m, k, actual, phases, amplitudes, gains);
    let mut weights = vec![0.0; k * k];
    let mut total = 0.0;
    for ue in 0..k {
        let row = &gains[ue * k..(ue + 1) * k];
        let signal = row[ue].norm_sqr();
        let interference: f64 = row
            .iter()
            .enumerate()
            .filter(|(l, _)| *l != ue)
            .map(|(_, a)| a.norm_sqr())
            .sum();
        let t = 1.0 + signal + interference;
        total += (1.0 + signal / (1.0 + interference)).log2();
        for l in 0..k {
            let mut w = 1.0 / t;
            if l != ue {
                w -= 1.0 / (1.0 + interference);
            }
            weights[ue * k + l] = w / LN_2;
        }
    }
    for i in 0..m {
        let h = &actual[i * k..(i + 1) * k];
        let u = &phases[i * k..(i + 1) * k];
        let g = &mut grad[i * k..(i + 1) * k];
        for l in 0..k {
            let mut acc = 0.0;
            for ue in 0..k {
                // d|a|²/dq = 2 Re(conj(a) · h · u)
                let a = gains[ue * k + l];
                acc += weights[ue * k + l] * 2.0 * (a.conj() * h[ue] * u[l]).re;
            }
            g[l] = acc;
        }
    }
    total
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub per_ue_rates: Vec<f64>,
    pub sum_rate: f64,
    pub std_error: f64,
    pub sample_count: usize,
}

impl RateReport {
    /// Builds a report from per-sample per-UE rates.
    pub fn from_samples(rates: &[Vec<f64>]) -> Self {
        let n = rates.len();
        let k = rates.first().map_or(0, Vec::len);
        let mut per_ue = vec![0.0; k];
        let sums: Vec<f64> = rates
            .iter()
            .map(|r| {
                for (acc, v) in per_ue.iter_mut().zip(r) {
                    *acc += v;
                }
                r.iter().sum()
            })
            .collect();
        per_ue.iter_mut().for_each(|v| *v /= n.max(1) as f64);
        let (mean, se) = mean_and_std_error(&sums);
        Self {
            per_ue_rates: per_ue,
            sum_rate: mean,
            std_error: se,
            sample_count: n,
        }
    }
}

/// Sample mean and standard error of the mean (0 for fewer than two values).
pub fn mean_and_std_error(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// A power-control rule. It observes the long-term CSI and the channel
/// estimates only, never the estimation error.
pub trait PowerPolicy {
    fn allocate(&mut self, rho: &LongTermCsi, h_hat: &[Complex64]) -> Result<PowerAllocation>;
}

impl<F> PowerPolicy for F
where
    F: FnMut(&LongTermCsi, &[Complex64]) -> Result<PowerAllocation>,
{
    fn allocate(&mut self, rho: &LongTermCsi, h_hat: &[Complex64]) -> Result<PowerAllocation> {
        self(rho, h_hat)
    }
}

/// Monte-Carlo ergodic sum-rate over fresh channel draws for a fixed `ρ`.
pub fn ergodic_sum_rate<P, R>(
    rho: &LongTermCsi,
    policy: &mut P,
    phi: f64,
    n_samples: usize,
    rng: &mut R,
) -> Result<RateReport>
where
    P: PowerPolicy + ?Sized,
    R: Rng + ?Sized,
{
    validate_phi(phi)?;
    if n_samples == 0 {
        return Err(Error::InvalidInput("n_samples must be at least 1".into()));
    }
    let mut rates = Vec::with_capacity(n_samples);
    for index in 0..n_samples {
        let chan = sample_channel(rho, phi, rng)?;
        let p = policy
            .allocate(rho, chan.h_hat())
            .map_err(|e| Error::Policy {
                index,
                source: Box::new(e),
            })?;
        rates.push(per_ue_rates(&chan, &p)?);
    }
    Ok(RateReport::from_samples(&rates))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Feasibility {
    pub feasible: bool,
    /// `P - Σ_k p_{k,i}` per AP.
    pub slack: Vec<f64>,
}

pub fn check_feasible(p: &PowerAllocation, budget: f64, tol: f64) -> Feasibility {
    let slack: Vec<f64> = p.row_sums().iter().map(|s| budget - s).collect();
    let feasible = p.as_slice().iter().all(|v| *v >= -tol) && slack.iter().all(|s| *s >= -tol);
    Feasibility { feasible, slack }
}
