//! Network environment: deployments, long-term path-loss and imperfect CSI.
//!
//! Channel coefficients follow `h = ĥ + e` with `ĥ ~ CN(0, (1-φ)ρ)` and an
//! uncorrelated error `e ~ CN(0, φρ)`. All matrices are stored row-major with
//! one row per AP, so entry `(i, k)` is the link between AP `i` and UE `k`.

pub mod dataset;
pub mod rng;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distances below this are clamped before evaluating the path-loss law.
pub const MIN_DISTANCE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeometryConfig {
    /// Radius of the circular deployment area in meters.
    pub radius: f64,
    /// Path-loss at the reference distance.
    pub p0: f64,
    /// Reference distance in meters.
    pub q0: f64,
    /// Path-loss exponent.
    pub eta: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            radius: 300.0,
            p0: 10.0,
            q0: 30.0,
            eta: 3.0,
        }
    }
}

impl GeometryConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !(ok(self.radius) && ok(self.p0) && ok(self.q0) && ok(self.eta)) {
            return Err(Error::config(format!(
                "geometry parameters must be positive and finite: {self:?}"
            )));
        }
        Ok(())
    }

    /// `P0 · (q / q0)^(-η)` with `q` floored at [`MIN_DISTANCE`].
    pub fn path_loss(&self, distance: f64) -> f64 {
        let q = distance.max(MIN_DISTANCE);
        self.p0 * (q / self.q0).powf(-self.eta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub m: usize,
    pub k: usize,
    /// Per-AP power budget (linear). With unit noise power this is the SNR.
    pub power: f64,
    /// Error ratio φ in `[0, 1]`.
    pub phi: f64,
}

impl NetworkConfig {
    pub fn new(m: usize, k: usize, power: f64, phi: f64) -> Result<Self> {
        let cfg = Self { m, k, power, phi };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_snr_db(m: usize, k: usize, snr_db: f64, phi: f64) -> Result<Self> {
        Self::new(m, k, db_to_linear(snr_db), phi)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.k == 0 {
            return Err(Error::config(format!(
                "need at least one AP and one UE (M={}, K={})",
                self.m, self.k
            )));
        }
        if !(self.power.is_finite() && self.power > 0.0) {
            return Err(Error::config(format!(
                "power budget must be positive, got {}",
                self.power
            )));
        }
        validate_phi(self.phi)
    }
}

pub fn validate_phi(phi: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&phi) {
        return Err(Error::config(format!("error ratio φ must lie in [0,1], got {phi}")));
    }
    Ok(())
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// Long-term path-loss `ρ`, stored as an `M × K` row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongTermCsi {
    m: usize,
    k: usize,
    rho: Vec<f64>,
}

impl LongTermCsi {
    pub fn new(m: usize, k: usize, rho: Vec<f64>) -> Result<Self> {
        if rho.len() != m * k {
            return Err(Error::shape(format!(
                "rho has {} entries, expected {m}x{k}",
                rho.len()
            )));
        }
        if let Some(bad) = rho.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::InvalidInput(format!(
                "long-term CSI entries must be positive, found {bad}"
            )));
        }
        Ok(Self { m, k, rho })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, ap: usize, ue: usize) -> f64 {
        self.rho[ap * self.k + ue]
    }

    /// Long-term CSI seen by AP `ap` (one entry per UE).
    pub fn row(&self, ap: usize) -> &[f64] {
        &self.rho[ap * self.k..(ap + 1) * self.k]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.rho
    }

    /// Rows reordered so that new row `r` is old row `perm[r]`.
    pub fn permute_aps(&self, perm: &[usize]) -> Self {
        let mut rho = Vec::with_capacity(self.rho.len());
        for &src in perm {
            rho.extend_from_slice(self.row(src));
        }
        Self {
            m: perm.len(),
            k: self.k,
            rho,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deployment {
    pub aps: Vec<[f64; 2]>,
    pub ues: Vec<[f64; 2]>,
}

fn uniform_disk<R: Rng + ?Sized>(radius: f64, rng: &mut R) -> [f64; 2] {
    let r = radius * rng.random::<f64>().sqrt();
    let theta = std::f64::consts::TAU * rng.random::<f64>();
    [r * theta.cos(), r * theta.sin()]
}

/// Drops `m` APs and `k` UEs uniformly on the disk and returns the path-loss
/// matrix together with the positions.
pub fn sample_deployment_with_positions<R: Rng + ?Sized>(
    geometry: &GeometryConfig,
    m: usize,
    k: usize,
    rng: &mut R,
) -> Result<(LongTermCsi, Deployment)> {
    if m == 0 || k == 0 {
        return Err(Error::config(format!("need M, K >= 1 (M={m}, K={k})")));
    }
    geometry.validate()?;
    let aps: Vec<_> = (0..m).map(|_| uniform_disk(geometry.radius, rng)).collect();
    let ues: Vec<_> = (0..k).map(|_| uniform_disk(geometry.radius, rng)).collect();
    let mut rho = Vec::with_capacity(m * k);
    for ap in &aps {
        for ue in &ues {
            let d = ((ap[0] - ue[0]).powi(2) + (ap[1] - ue[1]).powi(2)).sqrt();
            rho.push(geometry.path_loss(d));
        }
    }
    Ok((LongTermCsi { m, k, rho }, Deployment { aps, ues }))
}

pub fn sample_deployment<R: Rng + ?Sized>(
    geometry: &GeometryConfig,
    m: usize,
    k: usize,
    rng: &mut R,
) -> Result<LongTermCsi> {
    sample_deployment_with_positions(geometry, m, k, rng).map(|(rho, _)| rho)
}

/// Circularly-symmetric complex Gaussian with total variance `variance`.
pub fn complex_gaussian<R: Rng + ?Sized>(variance: f64, rng: &mut R) -> Complex64 {
    let s = (0.5 * variance).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

/// Estimated channel `ĥ` and estimation error `e` for one realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    m: usize,
    k: usize,
    pub phi: f64,
    pub rho: LongTermCsi,
    h_hat: Vec<Complex64>,
    err: Vec<Complex64>,
}

impl ChannelRealization {
    pub fn from_parts(
        rho: LongTermCsi,
        phi: f64,
        h_hat: Vec<Complex64>,
        err: Vec<Complex64>,
    ) -> Result<Self> {
        let (m, k) = (rho.m(), rho.k());
        if h_hat.len() != m * k || err.len() != m * k {
            return Err(Error::shape(format!(
                "channel arrays must be {m}x{k}, got {} and {}",
                h_hat.len(),
                err.len()
            )));
        }
        validate_phi(phi)?;
        Ok(Self {
            m,
            k,
            phi,
            rho,
            h_hat,
            err,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn h_hat(&self) -> &[Complex64] {
        &self.h_hat
    }

    pub fn err(&self) -> &[Complex64] {
        &self.err
    }

    pub fn h_hat_row(&self, ap: usize) -> &[Complex64] {
        &self.h_hat[ap * self.k..(ap + 1) * self.k]
    }

    pub fn err_row(&self, ap: usize) -> &[Complex64] {
        &self.err[ap * self.k..(ap + 1) * self.k]
    }

    /// Actual channel `h = ĥ + e`.
    pub fn actual(&self) -> Vec<Complex64> {
        reconstruct_actual(self)
    }

    pub fn permute_aps(&self, perm: &[usize]) -> Self {
        let mut h_hat = Vec::with_capacity(self.h_hat.len());
        let mut err = Vec::with_capacity(self.err.len());
        for &src in perm {
            h_hat.extend_from_slice(self.h_hat_row(src));
            err.extend_from_slice(self.err_row(src));
        }
        Self {
            m: perm.len(),
            k: self.k,
            phi: self.phi,
            rho: self.rho.permute_aps(perm),
            h_hat,
            err,
        }
    }
}

/// Draws `ĥ` from `est_rng` and `e` from `err_rng`. Both streams are always
/// consumed in full, so the same seeds give realizations that differ only by
/// the variance split when φ changes.
pub fn sample_channel_streams<R1, R2>(
    rho: &LongTermCsi,
    phi: f64,
    est_rng: &mut R1,
    err_rng: &mut R2,
) -> Result<ChannelRealization>
where
    R1: Rng + ?Sized,
    R2: Rng + ?Sized,
{
    validate_phi(phi)?;
    let h_hat = rho
        .as_slice()
        .iter()
        .map(|&r| complex_gaussian((1.0 - phi) * r, est_rng))
        .collect();
    let err = rho
        .as_slice()
        .iter()
        .map(|&r| complex_gaussian(phi * r, err_rng))
        .collect();
    Ok(ChannelRealization {
        m: rho.m(),
        k: rho.k(),
        phi,
        rho: rho.clone(),
        h_hat,
        err,
    })
}

pub fn sample_channel<R: Rng + ?Sized>(
    rho: &LongTermCsi,
    phi: f64,
    rng: &mut R,
) -> Result<ChannelRealization> {
    validate_phi(phi)?;
    let mut h_hat = Vec::with_capacity(rho.as_slice().len());
    let mut err = Vec::with_capacity(rho.as_slice().len());
    for &r in rho.as_slice() {
        h_hat.push(complex_gaussian((1.0 - phi) * r, rng));
    }
    for &r in rho.as_slice() {
        err.push(complex_gaussian(phi * r, rng));
    }
    Ok(ChannelRealization {
        m: rho.m(),
        k: rho.k(),
        phi,
        rho: rho.clone(),
        h_hat,
        err,
    })
}

/// `ρ'_k = √P · √ρ_k / Σ_l √ρ_l` for the long-term CSI of one AP.
pub fn normalize_longterm(rho_i: &[f64], power: f64) -> Result<Vec<f64>> {
    if rho_i.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidInput(
            "long-term CSI must be finite and nonnegative".into(),
        ));
    }
    let total: f64 = rho_i.iter().map(|v| v.sqrt()).sum();
    if total <= 0.0 {
        return Err(Error::InvalidInput(
            "cannot normalize an all-zero long-term CSI vector".into(),
        ));
    }
    let scale = power.sqrt() / total;
    Ok(rho_i.iter().map(|v| v.sqrt() * scale).collect())
}

pub fn reconstruct_actual(chan: &ChannelRealization) -> Vec<Complex64> {
    chan.h_hat
        .iter()
        .zip(&chan.err)
        .map(|(h, e)| h + e)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn path_loss_reference_points() {
        let g = GeometryConfig::default();
        assert!((g.path_loss(30.0) - 10.0).abs() < 1e-12);
        // 10 · (300/30)^-3
        assert!((g.path_loss(300.0) - 0.01).abs() < 1e-15);
        assert_eq!(g.path_loss(0.0), g.path_loss(1.0));
        assert!(g.path_loss(50.0) > g.path_loss(51.0));
    }

    #[test]
    fn deployment_is_deterministic_and_inside_disk() {
        let g = GeometryConfig::default();
        let mut a = ChaCha8Rng::seed_from_u64(11);
        let mut b = ChaCha8Rng::seed_from_u64(11);
        let (ra, da) = sample_deployment_with_positions(&g, 5, 3, &mut a).unwrap();
        let (rb, _) = sample_deployment_with_positions(&g, 5, 3, &mut b).unwrap();
        assert_eq!(ra, rb);
        for p in da.aps.iter().chain(&da.ues) {
            assert!(p[0].hypot(p[1]) <= 300.0);
        }
        // rho recomputed from positions
        for (i, ap) in da.aps.iter().enumerate() {
            for (k, ue) in da.ues.iter().enumerate() {
                let d = (ap[0] - ue[0]).hypot(ap[1] - ue[1]);
                assert!((ra.get(i, k) / g.path_loss(d) - 1.0).abs() < 1e-12);
            }
        }
        assert!(sample_deployment(&g, 0, 3, &mut a).is_err());
    }

    #[test]
    fn channel_extremes() {
        let rho = LongTermCsi::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c0 = sample_channel(&rho, 0.0, &mut rng).unwrap();
        assert!(c0.err().iter().all(|e| e.norm() == 0.0));
        let c1 = sample_channel(&rho, 1.0, &mut rng).unwrap();
        assert!(c1.h_hat().iter().all(|h| h.norm() == 0.0));
        assert!(sample_channel(&rho, 1.5, &mut rng).is_err());
    }

    #[test]
    fn empirical_variances_match_split() {
        let rho = LongTermCsi::new(1, 2, vec![0.5, 4.0]).unwrap();
        let phi = 0.3;
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut var_h = [0.0; 2];
        let mut var_e = [0.0; 2];
        for _ in 0..n {
            let c = sample_channel(&rho, phi, &mut rng).unwrap();
            for k in 0..2 {
                var_h[k] += c.h_hat()[k].norm_sqr();
                var_e[k] += c.err()[k].norm_sqr();
            }
        }
        for k in 0..2 {
            let r = rho.get(0, k);
            let vh = var_h[k] / n as f64;
            let ve = var_e[k] / n as f64;
            assert!((vh / ((1.0 - phi) * r) - 1.0).abs() < 0.02, "ĥ var {vh}");
            assert!((ve / (phi * r) - 1.0).abs() < 0.02, "e var {ve}");
        }
    }

    #[test]
    fn normalization_examples() {
        let one = normalize_longterm(&[0.7], 9.0).unwrap();
        assert!((one[0] - 3.0).abs() < 1e-14);
        let eq = normalize_longterm(&[2.0; 4], 4.0).unwrap();
        assert!(eq.iter().all(|v| (v - 0.5).abs() < 1e-14));
        assert!(normalize_longterm(&[0.0, 0.0], 1.0).is_err());
        assert!(normalize_longterm(&[1.0, -1.0], 1.0).is_err());
    }

    #[test]
    fn reconstruct_adds_error() {
        let rho = LongTermCsi::new(3, 2, vec![1.0; 6]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = sample_channel(&rho, 0.4, &mut rng).unwrap();
        let h = reconstruct_actual(&c);
        for j in 0..6 {
            assert!((h[j] - c.h_hat()[j] - c.err()[j]).norm() <= 1e-15 * h[j].norm().max(1.0));
        }
        let c0 = sample_channel(&rho, 0.0, &mut rng).unwrap();
        assert_eq!(reconstruct_actual(&c0), c0.h_hat().to_vec());
        let c1 = sample_channel(&rho, 1.0, &mut rng).unwrap();
        assert_eq!(reconstruct_actual(&c1), c1.err().to_vec());
    }

    proptest! {
        #[test]
        fn normalization_sums_and_is_scale_invariant(
            rho in prop::collection::vec(1e-6f64..1e3, 1..8),
            power in 0.1f64..1000.0,
            c in 1e-3f64..1e3,
        ) {
            let out = normalize_longterm(&rho, power).unwrap();
            let s: f64 = out.iter().sum();
            prop_assert!((s - power.sqrt()).abs() < 1e-12 * power.sqrt().max(1.0));
            prop_assert!(out.iter().all(|v| *v >= 0.0 && *v <= power.sqrt() + 1e-12));
            let scaled: Vec<f64> = rho.iter().map(|v| v * c).collect();
            let out2 = normalize_longterm(&scaled, power).unwrap();
            for (a, b) in out.iter().zip(&out2) {
                prop_assert!((a - b).abs() < 1e-10 * power.sqrt().max(1.0));
            }
        }
    }
}
