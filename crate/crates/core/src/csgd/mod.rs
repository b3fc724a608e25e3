//! Cooperative stochastic gradient descent (CSGD).
//!
//! Every AP keeps its own power row `p_i`. Per iteration the rows are
//! exchanged, each AP draws a mini-batch of the quantities it cannot observe
//! (its own estimation error, other APs' estimates and errors), evaluates
//! the sample-average sum-rate `R̄_i` and takes one projected gradient ascent
//! step on `p_i` with `p_{-i}` held fixed. Updates are Jacobi-style: all APs
//! step from the same exchanged matrix.

mod projection;

use std::io::Write;

use num_complex::Complex64;
use rand::{Rng, RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

pub use projection::project_feasible;

use crate::error::{Error, Result};
use crate::netenv::rng::StreamRng;
use crate::netenv::{complex_gaussian, validate_phi, ChannelRealization, LongTermCsi};
use crate::objective::{beam_phase, check_feasible, sum_rate, PowerAllocation, FEASIBILITY_TOL};

/// How AP `i` forms its beam towards interfering UEs inside `R̄_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum BeamformerReading {
    /// AP `i` always uses its known local estimates `ĥ_{l,i}`.
    #[default]
    LocalKnown,
    /// The interference terms of AP `i` use a sampled estimate `ĥ^{(n)}_{l,i}`
    /// while the intended-UE term keeps the local one.
    BatchSampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub enum StepSchedule {
    Constant,
    /// `α / √t` at iteration `t` (1-based).
    #[default]
    InvSqrt,
}

/// Direction scaling of the ascent step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub enum StepRule {
    /// `p_i + α ∇R̄_i`.
    Plain,
    /// `p_i + α P ∇R̄_i / ‖∇R̄_i‖_∞`: no entry moves by more than `αP`.
    #[default]
    Normalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsgdConfig {
    /// Step size α. `None` selects the default of the chosen rule.
    pub alpha: Option<f64>,
    pub rule: StepRule,
    pub max_iters: usize,
    pub batch_size: usize,
    /// Relative change of the windowed objective below which the run stops.
    pub tol: f64,
    pub window: usize,
    /// Lower clamp for `p_i` before gradient evaluation, relative to `P`.
    pub power_floor: f64,
    pub schedule: StepSchedule,
    pub reading: BeamformerReading,
}

impl Default for CsgdConfig {
    fn default() -> Self {
        Self {
            alpha: None,
            rule: StepRule::Normalized,
            max_iters: 500,
            batch_size: 32,
            tol: 1e-5,
            window: 10,
            power_floor: 1e-8,
            schedule: StepSchedule::InvSqrt,
            reading: BeamformerReading::LocalKnown,
        }
    }
}

impl CsgdConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(a) = self.alpha {
            if !(a.is_finite() && a > 0.0) {
                return Err(Error::config(format!("CSGD step size must be positive, got {a}")));
            }
        }
        if self.max_iters == 0 || self.batch_size == 0 || self.window == 0 {
            return Err(Error::config("CSGD needs max_iters, batch_size, window >= 1"));
        }
        if !(self.tol >= 0.0) || !(self.power_floor > 0.0) {
            return Err(Error::config("CSGD tol must be >= 0 and power_floor > 0"));
        }
        Ok(())
    }

    /// The step size for budget `power` with `k` UEs.
    pub fn step_size(&self, power: f64, k: usize) -> f64 {
        self.alpha.unwrap_or_else(|| match self.rule {
            StepRule::Plain => default_step_size(power, k),
            StepRule::Normalized => DEFAULT_NORMALIZED_STEP,
        })
    }
}

pub const DEFAULT_NORMALIZED_STEP: f64 = 0.3;

/// Default plain step size. The sum-rate gradient scales like `1/p`, so a
/// step of `c · (P/K)²` moves a row by a fixed fraction of its equal-power
/// level regardless of the SNR.
pub fn default_step_size(power: f64, k: usize) -> f64 {
    let level = power / k as f64;
    0.05 * level * level
}

/// One sample `b_i^{(n)}` of the unknowns at AP `ap`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchSample {
    /// `e_i^{(n)}`, one entry per UE.
    pub own_err: Vec<Complex64>,
    /// Sampled `ĥ^{(n)}_i`, only drawn for [`BeamformerReading::BatchSampled`].
    pub own_h_hat: Option<Vec<Complex64>>,
    /// `ĥ^{(n)}_{-i}`: rows for every AP except `ap`, in index order.
    pub other_h_hat: Vec<Complex64>,
    /// `e^{(n)}_{-i}`, same layout as `other_h_hat`.
    pub other_err: Vec<Complex64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiniBatch {
    pub ap: usize,
    pub m: usize,
    pub k: usize,
    pub samples: Vec<BatchSample>,
}

pub fn sample_minibatch<R: Rng + ?Sized>(
    rho: &LongTermCsi,
    phi: f64,
    ap: usize,
    batch_size: usize,
    reading: BeamformerReading,
    rng: &mut R,
) -> Result<MiniBatch> {
    validate_phi(phi)?;
    let (m, k) = (rho.m(), rho.k());
    if ap >= m {
        return Err(Error::InvalidInput(format!("AP index {ap} out of range (M={m})")));
    }
    let mut samples = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let own_err = rho.row(ap).iter().map(|&r| complex_gaussian(phi * r, rng)).collect();
        let own_h_hat = match reading {
            BeamformerReading::LocalKnown => None,
            BeamformerReading::BatchSampled => Some(
                rho.row(ap)
                    .iter()
                    .map(|&r| complex_gaussian((1.0 - phi) * r, rng))
                    .collect(),
            ),
        };
        let mut other_h_hat = Vec::with_capacity((m - 1) * k);
        let mut other_err = Vec::with_capacity((m - 1) * k);
        for j in (0..m).filter(|j| *j != ap) {
            for &r in rho.row(j) {
                other_h_hat.push(complex_gaussian((1.0 - phi) * r, rng));
                other_err.push(complex_gaussian(phi * r, rng));
            }
        }
        samples.push(BatchSample {
            own_err,
            own_h_hat,
            other_h_hat,
            other_err,
        });
    }
    Ok(MiniBatch { ap, m, k, samples })
}

/// Working buffers for evaluating one batch sample.
struct SampleEval {
    /// `√p` for every AP, `M × K`.
    amps: Vec<f64>,
    /// `h_{k,j}` of the AP being accumulated.
    actual_row: Vec<Complex64>,
    /// Gains accumulated from the other APs, `K × K` stored by column
    /// (`other[l * K + k]` is `a_{k,l}`).
    other: Vec<Complex64>,
    /// Full gains including AP `i`, `K × K`.
    gains: Vec<Complex64>,
    /// `h_{k,i}` for the own AP.
    own_actual: Vec<Complex64>,
    /// Own beam phases for the intended-UE term and for interference terms.
    own_sig: Vec<Complex64>,
    own_int: Vec<Complex64>,
}

impl SampleEval {
    fn new(k: usize, p: &PowerAllocation) -> Self {
        let z = Complex64::new(0.0, 0.0);
        Self {
            amps: p.as_slice().iter().map(|v| v.sqrt()).collect(),
            actual_row: vec![z; k],
            other: vec![z; k * k],
            gains: vec![z; k * k],
            own_actual: vec![z; k],
            own_sig: vec![z; k],
            own_int: vec![z; k],
        }
    }

    /// Fills the gain matrix for one sample and returns per-UE
    /// `(signal, interference)` powers through `gains`.
    fn load(
        &mut self,
        batch: &MiniBatch,
        sample: &BatchSample,
        h_hat_i: &[Complex64],
        own_amp: &[f64],
    ) {
        let k = batch.k;
        self.other.iter_mut().for_each(|a| *a = Complex64::new(0.0, 0.0));
        for (row, j) in (0..batch.m).filter(|j| *j != batch.ap).enumerate() {
            let hh = &sample.other_h_hat[row * k..(row + 1) * k];
            let ee = &sample.other_err[row * k..(row + 1) * k];
            for ((a, h), e) in self.actual_row.iter_mut().zip(hh).zip(ee) {
                *a = h + e;
            }
            let amp = &self.amps[j * k..(j + 1) * k];
            for l in 0..k {
                let w = beam_phase(hh[l]) * amp[l];
                let col = &mut self.other[l * k..(l + 1) * k];
                for (o, a) in col.iter_mut().zip(&self.actual_row) {
                    *o += a * w;
                }
            }
        }
        for ue in 0..k {
            self.own_actual[ue] = h_hat_i[ue] + sample.own_err[ue];
            self.own_sig[ue] = beam_phase(h_hat_i[ue]);
            self.own_int[ue] = match &sample.own_h_hat {
                Some(draw) => beam_phase(draw[ue]),
                None => self.own_sig[ue],
            };
        }
        for ue in 0..k {
            for l in 0..k {
                let u = if ue == l { self.own_sig[l] } else { self.own_int[l] };
                self.gains[ue * k + l] = self.other[l * k + ue] + self.own_actual[ue] * u * own_amp[l];
            }
        }
    }
}

fn check_batch(h_hat_i: &[Complex64], batch: &MiniBatch, p: &PowerAllocation) -> Result<()> {
    if h_hat_i.len() != batch.k || p.m() != batch.m || p.k() != batch.k {
        return Err(Error::shape(format!(
            "batch is {}x{}, estimates have {} entries, powers are {}x{}",
            batch.m,
            batch.k,
            h_hat_i.len(),
            p.m(),
            p.k()
        )));
    }
    if batch.samples.is_empty() {
        return Err(Error::InvalidInput("empty mini-batch".into()));
    }
    Ok(())
}

/// `R̄_i`: the batch mean of the sum-rate seen from AP `batch.ap`, whose row
/// of `p` is `p_i` and whose other rows are `p_{-i}`.
pub fn saa_sum_rate(h_hat_i: &[Complex64], batch: &MiniBatch, p: &PowerAllocation) -> Result<f64> {
    check_batch(h_hat_i, batch, p)?;
    let k = batch.k;
    let own_amp: Vec<f64> = p.row(batch.ap).iter().map(|v| v.sqrt()).collect();
    let mut ev = SampleEval::new(k, p);
    let mut total = 0.0;
    for sample in &batch.samples {
        ev.load(batch, sample, h_hat_i, &own_amp);
        for ue in 0..k {
            let row = &ev.gains[ue * k..(ue + 1) * k];
            let interference: f64 = (0..k).filter(|l| *l != ue).map(|l| row[l].norm_sqr()).sum();
            total += (1.0 + row[ue].norm_sqr() / (1.0 + interference)).log2();
        }
    }
    Ok(total / batch.samples.len() as f64)
}

/// Analytic `∇_{p_i} R̄_i` with `p_{-i}` constant. Costs `O(|B| M K²)`.
///
/// Every entry of `p_i` must be at least `power_floor` (absolute), since the
/// gains depend on `√p` and its derivative is unbounded at zero.
pub fn saa_gradient(
    h_hat_i: &[Complex64],
    batch: &MiniBatch,
    p: &PowerAllocation,
    power_floor: f64,
) -> Result<Vec<f64>> {
    check_batch(h_hat_i, batch, p)?;
    let k = batch.k;
    let row = p.row(batch.ap);
    if let Some(v) = row.iter().find(|v| !(**v >= power_floor)) {
        return Err(Error::InvalidInput(format!(
            "power {v} below the gradient floor {power_floor}"
        )));
    }
    let own_amp: Vec<f64> = row.iter().map(|v| v.sqrt()).collect();
    let mut ev = SampleEval::new(k, p);
    let mut grad_q = vec![0.0; k];
    let mut weights = vec![0.0; k * k];
    for sample in &batch.samples {
        ev.load(batch, sample, h_hat_i, &own_amp);
        for ue in 0..k {
            let r = &ev.gains[ue * k..(ue + 1) * k];
            let signal = r[ue].norm_sqr();
            let interference: f64 = (0..k).filter(|l| *l != ue).map(|l| r[l].norm_sqr()).sum();
            let t = 1.0 + signal + interference;
            for l in 0..k {
                let mut w = 1.0 / t;
                if l != ue {
                    w -= 1.0 / (1.0 + interference);
                }
                weights[ue * k + l] = w;
            }
        }
        for l in 0..k {
            let mut acc = 0.0;
            for ue in 0..k {
                let u = if ue == l { ev.own_sig[l] } else { ev.own_int[l] };
                let a = ev.gains[ue * k + l];
                acc += weights[ue * k + l] * 2.0 * (a.conj() * ev.own_actual[ue] * u).re;
            }
            grad_q[l] += acc;
        }
    }
    let scale = 1.0 / (batch.samples.len() as f64 * std::f64::consts::LN_2);
    Ok(grad_q
        .iter()
        .zip(&own_amp)
        .map(|(g, q)| g * scale / (2.0 * q))
        .collect())
}

/// Mutable CSGD state shared by [`csgd_step`] and [`run_csgd`].
#[derive(Debug, Clone)]
pub struct CsgdState {
    pub rho: LongTermCsi,
    pub h_hat: Vec<Complex64>,
    pub phi: f64,
    pub power: f64,
    pub p: PowerAllocation,
    pub iteration: usize,
    /// Reals moved over the fronthaul so far. Every iteration each AP
    /// receives the full `M × K` power matrix.
    pub exchanged_reals: u64,
    ap_rngs: Vec<StreamRng>,
}

impl CsgdState {
    /// Starts from the interior point `p_{k,i} = P / (2K)`.
    pub fn new<R: RngCore + ?Sized>(
        rho: &LongTermCsi,
        h_hat: &[Complex64],
        phi: f64,
        power: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let (m, k) = (rho.m(), rho.k());
        if h_hat.len() != m * k {
            return Err(Error::shape(format!(
                "estimates have {} entries, expected {m}x{k}",
                h_hat.len()
            )));
        }
        validate_phi(phi)?;
        let ap_rngs = (0..m).map(|_| StreamRng::seed_from_u64(rng.next_u64())).collect();
        Ok(Self {
            rho: rho.clone(),
            h_hat: h_hat.to_vec(),
            phi,
            power,
            p: PowerAllocation::new(m, k, vec![power / (2.0 * k as f64); m * k])?,
            iteration: 0,
            exchanged_reals: 0,
            ap_rngs,
        })
    }
}

/// One synchronous CSGD iteration. Returns the SAA value `R̄_i` each AP saw
/// before its update.
pub fn csgd_step(state: &mut CsgdState, config: &CsgdConfig) -> Result<Vec<f64>> {
    let (m, k) = (state.rho.m(), state.rho.k());
    state.iteration += 1;
    state.exchanged_reals += (m * m * k) as u64;
    let mut alpha = config.step_size(state.power, k);
    if config.schedule == StepSchedule::InvSqrt {
        alpha /= (state.iteration as f64).sqrt();
    }
    let floor = config.power_floor * state.power;
    let exchanged = state.p.clone();
    let mut next = exchanged.clone();
    let mut saa = Vec::with_capacity(m);
    for ap in 0..m {
        let batch = sample_minibatch(
            &state.rho,
            state.phi,
            ap,
            config.batch_size,
            config.reading,
            &mut state.ap_rngs[ap],
        )?;
        let h_hat_i = &state.h_hat[ap * k..(ap + 1) * k];
        saa.push(saa_sum_rate(h_hat_i, &batch, &exchanged)?);
        let mut clamped = exchanged.clone();
        clamped.row_mut(ap).iter_mut().for_each(|v| *v = v.max(floor));
        let grad = saa_gradient(h_hat_i, &batch, &clamped, floor)?;
        let scale = match config.rule {
            StepRule::Plain => alpha,
            StepRule::Normalized => {
                let top = grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
                if top > 0.0 {
                    alpha * state.power / top
                } else {
                    0.0
                }
            }
        };
        let stepped: Vec<f64> = exchanged
            .row(ap)
            .iter()
            .zip(&grad)
            .map(|(p, g)| p + scale * g)
            .collect();
        next.row_mut(ap).copy_from_slice(&project_feasible(&stepped, state.power));
    }
    state.p = next;
    Ok(saa)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    /// Sum-rate of the current iterate on the true channel, when known.
    pub exact_sum_rate: Option<f64>,
    pub saa: Vec<f64>,
    pub exchanged_reals: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsgdOutcome {
    pub allocation: PowerAllocation,
    pub trace: Vec<TraceRow>,
    pub converged: bool,
}

/// Runs CSGD until `max_iters` or until the mean SAA objective, averaged
/// over consecutive windows, changes by less than `tol` (relative).
///
/// `truth` is only used to annotate the trace with exact sum-rates; it never
/// influences the iterates.
pub fn run_csgd<R: RngCore + ?Sized>(
    rho: &LongTermCsi,
    h_hat: &[Complex64],
    phi: f64,
    power: f64,
    config: &CsgdConfig,
    rng: &mut R,
    truth: Option<&ChannelRealization>,
) -> Result<CsgdOutcome> {
    config.validate()?;
    let mut state = CsgdState::new(rho, h_hat, phi, power, rng)?;
    let mut trace = Vec::with_capacity(config.max_iters);
    let mut history = Vec::with_capacity(config.max_iters);
    let mut converged = false;
    let w = config.window;
    for _ in 0..config.max_iters {
        let saa = csgd_step(&mut state, config)?;
        history.push(saa.iter().sum::<f64>() / saa.len() as f64);
        let exact_sum_rate = truth.map(|c| sum_rate(c, &state.p)).transpose()?;
        trace.push(TraceRow {
            iteration: state.iteration,
            exact_sum_rate,
            saa,
            exchanged_reals: state.exchanged_reals,
        });
        if history.len() >= 2 * w {
            let n = history.len();
            let recent: f64 = history[n - w..].iter().sum::<f64>() / w as f64;
            let before: f64 = history[n - 2 * w..n - w].iter().sum::<f64>() / w as f64;
            if (recent - before).abs() <= config.tol * before.abs().max(f64::MIN_POSITIVE) {
                converged = true;
                break;
            }
        }
    }
    debug_assert!(check_feasible(&state.p, power, FEASIBILITY_TOL * power.max(1.0)).feasible);
    Ok(CsgdOutcome {
        allocation: state.p,
        trace,
        converged,
    })
}

/// Trace CSV: `iteration,exact_sum_rate,saa_0..saa_{M-1},exchanged_reals`.
pub fn write_trace_csv<W: Write>(out: &mut W, trace: &[TraceRow]) -> std::io::Result<()> {
    let m = trace.first().map_or(0, |r| r.saa.len());
    let mut header = String::from("iteration,exact_sum_rate");
    for i in 0..m {
        header.push_str(&format!(",saa_{i}"));
    }
    header.push_str(",exchanged_reals");
    writeln!(out, "{header}")?;
    for row in trace {
        let exact = row.exact_sum_rate.map_or(String::new(), |v| format!("{v:.9}"));
        write!(out, "{},{exact}", row.iteration)?;
        for v in &row.saa {
            write!(out, ",{v:.9}")?;
        }
        writeln!(out, ",{}", row.exchanged_reals)?;
    }
    Ok(())
}
