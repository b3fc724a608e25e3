//! Cooperative learning: uplink message network `V`, pooled CP network `F`
//! and decision network `D`, with the NCL, SCL and equal-power baselines.
//!
//! Per AP `i`:
//!
//! ```text
//! m_i = V(ρ'_i)                 uplink message, d_U reals
//! f   = mean_i F(m_i)           downlink message, d_D reals
//! p_i = head(D([f, ρ'_i, ĥ_i])) power row, always feasible
//! ```
//!
//! `V` and `D` are shared by every AP, so nothing depends on `M`. `ĥ_i`
//! enters as `Re ĥ_{1,i}, Im ĥ_{1,i}, Re ĥ_{2,i}, …`, optionally rescaled
//! (see [`EstimateEncoding`]).

pub mod head;
mod train;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use head::{power_head, power_head_backward, HeadOutput, NonNegMap};
pub use train::{batch_gradient, batch_sum_rate, train_cl, train_cl_with_validation, EpochRecord, TrainTrace};

use crate::error::{Error, Result};
use crate::neuralcore::{Checkpoint, Mlp, MlpArch, Tensor2D};
use crate::netenv::{normalize_longterm, validate_phi, GeometryConfig, LongTermCsi};
use crate::objective::PowerAllocation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Cl,
    Ncl,
    Scl,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Cl => "CL",
            Method::Ncl => "NCL",
            Method::Scl => "SCL",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cl" => Ok(Method::Cl),
            "ncl" => Ok(Method::Ncl),
            "scl" => Ok(Method::Scl),
            _ => Err(Error::config(format!("unknown learned method {s:?}"))),
        }
    }
}

/// How the error ratio of each training sample is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PhiSampling {
    Fixed(f64),
    /// `φ ~ U(0, 1)`.
    Uniform,
}

impl PhiSampling {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            PhiSampling::Fixed(v) => v,
            PhiSampling::Uniform => rng.random::<f64>(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            PhiSampling::Fixed(v) => validate_phi(v),
            PhiSampling::Uniform => Ok(()),
        }
    }
}

impl fmt::Display for PhiSampling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PhiSampling::Fixed(v) => write!(f, "fixed:{v}"),
            PhiSampling::Uniform => f.write_str("uniform"),
        }
    }
}

impl FromStr for PhiSampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("uniform") {
            return Ok(PhiSampling::Uniform);
        }
        let value = s
            .strip_prefix("fixed:")
            .ok_or_else(|| Error::config(format!("φ policy must be fixed:<v> or uniform, got {s:?}")))?;
        let v: f64 = value
            .parse()
            .map_err(|_| Error::config(format!("bad φ value {value:?}")))?;
        validate_phi(v)?;
        Ok(PhiSampling::Fixed(v))
    }
}

impl TryFrom<String> for PhiSampling {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<PhiSampling> for String {
    fn from(p: PhiSampling) -> Self {
        p.to_string()
    }
}

/// How `ĥ_i` is presented to the decision network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EstimateEncoding {
    /// The estimates as they are.
    Raw,
    /// `ĥ_{k,i} · √P / Σ_l √ρ_{l,i}`, the factor that produces `ρ'_i`,
    /// so `|ĥ_{k,i}| / ρ'_{k,i}` is the small-scale fading magnitude.
    #[default]
    Scaled,
}

impl FromStr for EstimateEncoding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "raw" => Ok(EstimateEncoding::Raw),
            "scaled" => Ok(EstimateEncoding::Scaled),
            _ => Err(Error::config(format!("estimate encoding must be raw or scaled, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClConfig {
    pub method: Method,
    pub k: usize,
    /// Uplink message length. Zero for NCL.
    pub d_u: usize,
    /// Downlink message length. Zero for NCL.
    pub d_d: usize,
    pub hidden_depth: usize,
    pub hidden_width: usize,
    /// AP count of every training deployment.
    pub m_train: usize,
    pub phi_sampling: PhiSampling,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    /// Network realizations per mini-batch.
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Per-AP budget `P` (linear).
    pub power: f64,
    pub geometry: GeometryConfig,
    pub nonneg: NonNegMap,
    pub encoding: EstimateEncoding,
    /// Size of the fixed validation set scored after every epoch.
    pub validation_samples: usize,
}

impl Default for ClConfig {
    fn default() -> Self {
        Self::new(Method::Cl, 4, 100.0)
    }
}

impl ClConfig {
    /// Desk-scale defaults: `d_U = d_D = K`, 4 hidden layers of width `32K`.
    pub fn new(method: Method, k: usize, power: f64) -> Self {
        let msg = if method == Method::Ncl { 0 } else { k };
        Self {
            method,
            k,
            d_u: msg,
            d_d: msg,
            hidden_depth: 4,
            hidden_width: 32 * k,
            m_train: 4,
            phi_sampling: PhiSampling::Uniform,
            epochs: 100,
            steps_per_epoch: 25,
            batch_size: 32,
            learning_rate: 1e-3,
            power,
            geometry: GeometryConfig::default(),
            nonneg: NonNegMap::Softplus,
            encoding: EstimateEncoding::Scaled,
            validation_samples: 128,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("K must be at least 1"));
        }
        if self.m_train == 0 || self.batch_size == 0 || self.hidden_width == 0 {
            return Err(Error::config("m_train, batch_size and hidden_width must be >= 1"));
        }
        if self.m_train * self.batch_size < 2 {
            return Err(Error::config("batch-norm training needs at least two AP rows per batch"));
        }
        if !(self.power.is_finite() && self.power > 0.0) {
            return Err(Error::config(format!("power budget must be positive, got {}", self.power)));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::config(format!("learning rate must be >= 0, got {}", self.learning_rate)));
        }
        self.phi_sampling.validate()?;
        self.geometry.validate()?;
        match self.method {
            Method::Cl if (self.d_u == 0) != (self.d_d == 0) => Err(Error::config(format!(
                "d_U and d_D must both be zero or both positive (got {}, {})",
                self.d_u, self.d_d
            ))),
            Method::Ncl if self.d_u != 0 || self.d_d != 0 => {
                Err(Error::config("NCL exchanges no messages: d_U = d_D = 0"))
            }
            Method::Scl if self.d_u != self.k || self.d_d != self.k => {
                Err(Error::config("SCL messages have fixed length d_U = d_D = K"))
            }
            _ => Ok(()),
        }
    }

    /// Whether the model has message networks.
    pub fn cooperative(&self) -> bool {
        self.method == Method::Cl && self.d_d > 0
    }

    /// Width of the message part of the decision network's input.
    pub fn message_dim(&self) -> usize {
        match self.method {
            Method::Cl => self.d_d,
            Method::Ncl => 0,
            Method::Scl => self.k,
        }
    }

    fn arch(&self, in_dim: usize, out_dim: usize) -> MlpArch {
        MlpArch::new(in_dim, self.hidden_depth, self.hidden_width, out_dim)
    }
}

/// Messages of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageSet {
    /// `M × d_U`, row `i` is `m_i`.
    pub uplink: Tensor2D,
    /// `M × d_D`, row `i` is `F(m_i)`.
    pub latent: Tensor2D,
    /// Row mean of `latent`.
    pub downlink: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClModel {
    config: ClConfig,
    v: Option<Mlp>,
    f: Option<Mlp>,
    d: Mlp,
}

/// Local decision features `[ρ'_i, Re ĥ_{1,i}, Im ĥ_{1,i}, …]` of one AP.
pub fn local_features(rho_i: &[f64], h_hat_i: &[Complex64], power: f64, encoding: EstimateEncoding) -> Result<Vec<f64>> {
    if rho_i.len() != h_hat_i.len() {
        return Err(Error::shape(format!(
            "{} long-term entries but {} estimates",
            rho_i.len(),
            h_hat_i.len()
        )));
    }
    let mut out = normalize_longterm(rho_i, power)?;
    let scale = match encoding {
        EstimateEncoding::Raw => 1.0,
        EstimateEncoding::Scaled => power.sqrt() / rho_i.iter().map(|v| v.sqrt()).sum::<f64>(),
    };
    for h in h_hat_i {
        out.push(h.re * scale);
        out.push(h.im * scale);
    }
    Ok(out)
}

/// `M × 3K` block of [`local_features`], one row per AP.
fn local_block(rho: &LongTermCsi, h_hat: &[Complex64], power: f64, encoding: EstimateEncoding) -> Result<Tensor2D> {
    let (m, k) = (rho.m(), rho.k());
    if h_hat.len() != m * k {
        return Err(Error::shape(format!(
            "estimates have {} entries, expected {m}x{k}",
            h_hat.len()
        )));
    }
    let mut data = Vec::with_capacity(m * 3 * k);
    for i in 0..m {
        data.extend(local_features(rho.row(i), &h_hat[i * k..(i + 1) * k], power, encoding)?);
    }
    Tensor2D::from_vec(m, 3 * k, data)
}

/// Row means of `latent` over consecutive groups of `group` rows, each
/// repeated `group` times.
fn pooled_rows(latent: &Tensor2D, group: usize) -> Tensor2D {
    let mut out = Tensor2D::zeros(latent.rows(), latent.cols());
    for start in (0..latent.rows()).step_by(group) {
        let mut mean = vec![0.0; latent.cols()];
        for r in start..start + group {
            for (acc, v) in mean.iter_mut().zip(latent.row(r)) {
                *acc += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= group as f64);
        for r in start..start + group {
            out.row_mut(r).copy_from_slice(&mean);
        }
    }
    out
}

impl ClModel {
    pub fn new<R: Rng + ?Sized>(config: ClConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let k = config.k;
        let (v, f) = if config.cooperative() {
            (
                Some(Mlp::new(config.arch(k, config.d_u), rng)),
                Some(Mlp::new(config.arch(config.d_u, config.d_d), rng)),
            )
        } else {
            (None, None)
        };
        let d = Mlp::new(config.arch(config.message_dim() + 3 * k, k + 1), rng);
        Ok(Self { config, v, f, d })
    }

    pub fn config(&self) -> &ClConfig {
        &self.config
    }

    pub fn method(&self) -> Method {
        self.config.method
    }

    pub fn message_network(&self) -> Option<&Mlp> {
        self.v.as_ref()
    }

    pub fn aggregation_network(&self) -> Option<&Mlp> {
        self.f.as_ref()
    }

    pub fn decision_network(&self) -> &Mlp {
        &self.d
    }

    /// Trainable reals across `V`, `F` and `D`.
    pub fn parameter_count(&self) -> usize {
        self.v.as_ref().map_or(0, Mlp::trainable_count)
            + self.f.as_ref().map_or(0, Mlp::trainable_count)
            + self.d.trainable_count()
    }

    /// Trainable parameter slices of `V`, `F`, `D` in that order.
    pub fn trainable_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for net in [self.v.as_mut(), self.f.as_mut()].into_iter().flatten() {
            out.extend(net.trainable_mut());
        }
        out.extend(self.d.trainable_mut());
        out
    }

    pub fn parameters(&self) -> Vec<f64> {
        self.clone().trainable_mut().iter().flat_map(|s| s.iter().copied()).collect()
    }

    pub fn set_parameters(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.parameter_count() {
            return Err(Error::shape(format!(
                "{} values for {} parameters",
                values.len(),
                self.parameter_count()
            )));
        }
        let mut pos = 0;
        for s in self.trainable_mut() {
            s.copy_from_slice(&values[pos..pos + s.len()]);
            pos += s.len();
        }
        Ok(())
    }

    fn check_k(&self, k: usize) -> Result<()> {
        if k != self.config.k {
            return Err(Error::shape(format!("model serves K={} UEs, input has K={k}", self.config.k)));
        }
        Ok(())
    }

    /// `ρ'_i` for every AP, `M × K`.
    fn normalized_block(&self, rho: &LongTermCsi, power: f64) -> Result<Tensor2D> {
        self.check_k(rho.k())?;
        let mut data = Vec::with_capacity(rho.m() * rho.k());
        for i in 0..rho.m() {
            data.extend(normalize_longterm(rho.row(i), power)?);
        }
        Tensor2D::from_vec(rho.m(), rho.k(), data)
    }

    /// `m_i = V(ρ'_i)` for every AP (`M × d_U`; zero columns without `V`).
    pub fn uplink_messages(&self, rho: &LongTermCsi, power: f64) -> Result<Tensor2D> {
        let x = self.normalized_block(rho, power)?;
        match &self.v {
            Some(v) => v.forward(&x),
            None => Ok(Tensor2D::zeros(rho.m(), 0)),
        }
    }

    /// `f = (1/M) Σ_i F(m_i)`.
    pub fn aggregate_downlink(&self, uplink: &Tensor2D) -> Result<Vec<f64>> {
        Ok(self.aggregate(uplink)?.1)
    }

    fn aggregate(&self, uplink: &Tensor2D) -> Result<(Tensor2D, Vec<f64>)> {
        if uplink.rows() == 0 {
            return Err(Error::InvalidInput("need at least one AP".into()));
        }
        let Some(f) = &self.f else {
            return Ok((Tensor2D::zeros(uplink.rows(), 0), Vec::new()));
        };
        let latent = f.forward(uplink)?;
        let mut mean = vec![0.0; latent.cols()];
        for r in 0..latent.rows() {
            for (acc, v) in mean.iter_mut().zip(latent.row(r)) {
                *acc += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= latent.rows() as f64);
        Ok((latent, mean))
    }

    pub fn messages(&self, rho: &LongTermCsi, power: f64) -> Result<MessageSet> {
        let uplink = self.uplink_messages(rho, power)?;
        let (latent, downlink) = self.aggregate(&uplink)?;
        Ok(MessageSet {
            uplink,
            latent,
            downlink,
        })
    }

    /// Power row of one AP from its message and local CSI (`ρ_i` is the
    /// raw long-term row; `ρ'_i` is formed inside). For SCL `f` is that AP's
    /// own synthetic downlink vector; for NCL it is empty.
    pub fn decide_power(&self, f: &[f64], rho_i: &[f64], h_hat_i: &[Complex64], power: f64) -> Result<Vec<f64>> {
        Ok(self.decide_with_budget(f, rho_i, h_hat_i, power)?.p)
    }

    fn decide_with_budget(&self, f: &[f64], rho_i: &[f64], h_hat_i: &[Complex64], power: f64) -> Result<HeadOutput> {
        self.check_k(rho_i.len())?;
        if f.len() != self.config.message_dim() {
            return Err(Error::shape(format!(
                "decision network expects a {}-long message, got {}",
                self.config.message_dim(),
                f.len()
            )));
        }
        let mut x = f.to_vec();
        x.extend(local_features(rho_i, h_hat_i, power, self.config.encoding)?);
        let n = x.len();
        let raw = self.d.forward(&Tensor2D::from_vec(1, n, x)?)?;
        Ok(power_head(raw.row(0), power, self.config.nonneg))
    }

    /// Message part of the decision input, one row per AP.
    fn message_rows(&self, rho: &LongTermCsi, power: f64) -> Result<Tensor2D> {
        match self.config.method {
            Method::Scl => Ok(scl_messages(rho, power)?.1),
            _ if self.config.cooperative() => {
                let (latent, _) = self.aggregate(&self.uplink_messages(rho, power)?)?;
                Ok(pooled_rows(&latent, rho.m()))
            }
            _ => Ok(Tensor2D::zeros(rho.m(), 0)),
        }
    }

    /// End-to-end map `(ρ, ĥ) ↦ p` together with the budget `δ_i` of
    /// every AP. Works for any `M`.
    pub fn forward_with_budgets(&self, rho: &LongTermCsi, h_hat: &[Complex64], power: f64) -> Result<(PowerAllocation, Vec<f64>)> {
        self.check_k(rho.k())?;
        let local = local_block(rho, h_hat, power, self.config.encoding)?;
        let msg = self.message_rows(rho, power)?;
        let raw = self.d.forward(&Tensor2D::hcat(&[&msg, &local])?)?;
        let (m, k) = (rho.m(), rho.k());
        let mut p = Vec::with_capacity(m * k);
        let mut budgets = Vec::with_capacity(m);
        for i in 0..m {
            let out = power_head(raw.row(i), power, self.config.nonneg);
            p.extend(out.p);
            budgets.push(out.delta);
        }
        Ok((PowerAllocation::new(m, k, p)?, budgets))
    }

    pub fn forward_pass(&self, rho: &LongTermCsi, h_hat: &[Complex64], power: f64) -> Result<PowerAllocation> {
        Ok(self.forward_with_budgets(rho, h_hat, power)?.0)
    }

    /// The message-free decision of one AP.
    pub fn ncl_forward(&self, rho_i: &[f64], h_hat_i: &[Complex64], power: f64) -> Result<Vec<f64>> {
        if self.config.message_dim() != 0 {
            return Err(Error::config(format!("{} model needs messages", self.config.method)));
        }
        self.decide_power(&[], rho_i, h_hat_i, power)
    }

    pub fn to_checkpoint(&self, seed: u64) -> Result<Checkpoint> {
        let c = &self.config;
        let mut tags = BTreeMap::new();
        tags.insert("method".to_string(), c.method.to_string());
        tags.insert("k".to_string(), c.k.to_string());
        tags.insert("d_u".to_string(), c.d_u.to_string());
        tags.insert("d_d".to_string(), c.d_d.to_string());
        tags.insert("m_train".to_string(), c.m_train.to_string());
        tags.insert("phi_policy".to_string(), c.phi_sampling.to_string());
        tags.insert("seed".to_string(), seed.to_string());
        tags.insert("config".to_string(), serde_json::to_string(c)?);
        let mut named = Vec::new();
        if let (Some(v), Some(f)) = (&self.v, &self.f) {
            named.push(("V".to_string(), v.clone()));
            named.push(("F".to_string(), f.clone()));
        }
        named.push(("D".to_string(), self.d.clone()));
        Ok(Checkpoint::new(tags, named))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let text = ck
            .meta
            .tags
            .get("config")
            .ok_or_else(|| Error::InvalidInput("checkpoint carries no model config".into()))?;
        let config: ClConfig = serde_json::from_str(text)?;
        config.validate()?;
        let get = |name: &str| {
            ck.network(name)
                .cloned()
                .ok_or_else(|| Error::InvalidInput(format!("checkpoint lacks network {name}")))
        };
        let (v, f) = if config.cooperative() {
            (Some(get("V")?), Some(get("F")?))
        } else {
            (None, None)
        };
        let d = get("D")?;
        let expect_d = config.message_dim() + 3 * config.k;
        if d.in_dim() != expect_d || d.out_dim() != config.k + 1 {
            return Err(Error::shape("decision network does not match the stored config"));
        }
        Ok(Self { config, v, f, d })
    }
}

/// Hand-crafted SCL messages: uplink `m_i = ρ_i` and per-AP downlink
/// `f_{k,i} = √(P ρ_{k,i} / Σ_j ρ_{k,j})`. Both are `M × K`.
pub fn scl_messages(rho: &LongTermCsi, power: f64) -> Result<(Tensor2D, Tensor2D)> {
    let (m, k) = (rho.m(), rho.k());
    let uplink = Tensor2D::from_vec(m, k, rho.as_slice().to_vec())?;
    let totals: Vec<f64> = (0..k).map(|ue| (0..m).map(|i| rho.get(i, ue)).sum()).collect();
    let downlink = Tensor2D::from_fn(m, k, |i, ue| (power * rho.get(i, ue) / totals[ue]).sqrt());
    Ok((uplink, downlink))
}

/// `p_{k,i} = P / K` everywhere.
pub fn equal_power(m: usize, k: usize, power: f64) -> PowerAllocation {
    PowerAllocation::new(m, k, vec![power / k as f64; m * k]).expect("consistent shape")
}
