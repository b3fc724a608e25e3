//! Reproducible experiments: common test sets, model training or loading,
//! paired evaluation of every method and CSV/JSON output.
//!
//! All randomness descends from `spec.seed`:
//!
//! * test set for `M_test = m` uses `SeedTree(seed).seed("test", m)`, shared by
//!   every method, SNR and φ point,
//! * CSGD's SAA draws for test sample `j` use stream `("csgd", j)`,
//! * each learned model trains from `child("train").seed(<model key>, 0)`.

pub mod spec;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rayon::prelude::*;
use serde::Serialize;

use crate::coplearn::{equal_power, train_cl, ClConfig, ClModel, Method, PhiSampling};
use crate::csgd::{run_csgd, write_trace_csv, CsgdOutcome};
use crate::error::{Error, Result};
use crate::netenv::dataset::{Dataset, DatasetManifest};
use crate::netenv::db_to_linear;
use crate::netenv::rng::{SeedTree, StreamRng};
use crate::neuralcore::Checkpoint;
use crate::objective::{mean_and_std_error, sum_rate};

pub use spec::{ExperimentSpec, MethodKind, MethodSpec, TrainingSpec};

pub const CSV_HEADER: &str = "config_hash,M,K,P_dB,phi,method,mean_sum_rate,std_error,n_samples,seed";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub method: String,
    pub m: usize,
    pub k: usize,
    pub p_db: f64,
    pub phi: f64,
    pub mean_sum_rate: f64,
    pub std_error: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub wall_time_s: f64,
    /// Per-sample sum-rates in test-set order.
    #[serde(skip)]
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub config_hash: String,
    pub rows: Vec<ResultRow>,
}

impl ExperimentResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{},{},{},{:.9},{:.9},{},{}",
                self.config_hash, r.m, r.k, r.p_db, r.phi, r.method, r.mean_sum_rate, r.std_error, r.n_samples, r.seed
            )
            .expect("writing to a String");
        }
        s
    }

    pub fn find(&self, method: &str, p_db: f64, phi: f64) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.method == method && r.p_db == p_db && r.phi == phi)
    }
}

/// Mean and standard error of the per-sample difference `a - b`.
pub fn paired_difference(a: &ResultRow, b: &ResultRow) -> Result<(f64, f64)> {
    if a.samples.len() != b.samples.len() || a.samples.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{} and {} were not evaluated on one common test set",
            a.method, b.method
        )));
    }
    let d: Vec<f64> = a.samples.iter().zip(&b.samples).map(|(x, y)| x - y).collect();
    Ok(mean_and_std_error(&d))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalabilityCell {
    pub method: String,
    pub m_train: usize,
    pub m_test: usize,
    pub learned_sum_rate: f64,
    pub csgd_sum_rate: f64,
    pub relative_sum_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalabilityTable {
    pub cells: Vec<ScalabilityCell>,
    pub result: ExperimentResult,
}

impl ScalabilityTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("config_hash,method,M_train,M_test,learned_sum_rate,csgd_sum_rate,relative_sum_rate\n");
        for c in &self.cells {
            writeln!(
                s,
                "{},{},{},{},{:.9},{:.9},{:.9}",
                self.result.config_hash, c.method, c.m_train, c.m_test, c.learned_sum_rate, c.csgd_sum_rate, c.relative_sum_rate
            )
            .expect("writing to a String");
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointMode {
    /// Load a matching checkpoint, otherwise train and save one.
    LoadOrTrain,
    LoadOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainingRecord {
    pub key: String,
    pub seed: u64,
    pub epochs: usize,
    pub final_validation: Option<f64>,
    pub wall_time_s: f64,
}

/// Learned models by key, backed by a checkpoint directory.
#[derive(Debug)]
pub struct ModelStore {
    dir: Option<PathBuf>,
    mode: CheckpointMode,
    cache: BTreeMap<String, ClModel>,
    pub trained: Vec<TrainingRecord>,
}

impl ModelStore {
    pub fn new(dir: Option<PathBuf>, mode: CheckpointMode) -> Self {
        Self {
            dir,
            mode,
            cache: BTreeMap::new(),
            trained: Vec::new(),
        }
    }

    /// Purely in-memory; always trains.
    pub fn in_memory() -> Self {
        Self::new(None, CheckpointMode::LoadOrTrain)
    }

    pub fn for_spec(spec: &ExperimentSpec, mode: CheckpointMode) -> Self {
        Self::new(Some(spec.checkpoint_dir()), mode)
    }

    pub fn checkpoint_path(&self, key: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{}.cfnn", file_stem(key))))
    }

    pub fn get(
        &mut self,
        spec: &ExperimentSpec,
        method: Method,
        policy: PhiSampling,
        m_train: usize,
        snr_db: f64,
    ) -> Result<&ClModel> {
        let key = model_key(method, policy, spec.k, m_train, snr_db);
        let config = spec.cl_config(method, policy, m_train, snr_db);
        if self.cache.get(&key).is_none_or(|m| m.config() != &config) {
            let model = self.load_or_train(spec, &key, config)?;
            self.cache.insert(key.clone(), model);
        }
        Ok(&self.cache[&key])
    }

    fn load_or_train(&mut self, spec: &ExperimentSpec, key: &str, config: ClConfig) -> Result<ClModel> {
        let path = self.checkpoint_path(key);
        if let Some(p) = path.as_ref().filter(|p| p.exists()) {
            let model = ClModel::from_checkpoint(&Checkpoint::load(p)?)?;
            if model.config() == &config {
                return Ok(model);
            }
            if self.mode == CheckpointMode::LoadOnly {
                return Err(Error::Format {
                    path: p.clone(),
                    reason: "checkpoint was trained with a different configuration".into(),
                });
            }
        } else if self.mode == CheckpointMode::LoadOnly {
            return Err(Error::MissingCheckpoint {
                method: key.to_string(),
                path: path.unwrap_or_default(),
            });
        }
        let seed = SeedTree::new(spec.seed).child("train").seed(key, 0);
        let start = Instant::now();
        let (model, trace) = train_cl(&config, &mut StreamRng::seed_from_u64(seed))?;
        self.trained.push(TrainingRecord {
            key: key.to_string(),
            seed,
            epochs: trace.records.len(),
            final_validation: trace.records.last().and_then(|r| r.validation_objective),
            wall_time_s: start.elapsed().as_secs_f64(),
        });
        if let Some(p) = path {
            model.to_checkpoint(seed)?.save(&p)?;
        }
        Ok(model)
    }
}

pub fn model_key(method: Method, policy: PhiSampling, k: usize, m_train: usize, snr_db: f64) -> String {
    format!("{method}@{policy}_m{m_train}_k{k}_snr{snr_db}")
}

fn file_stem(key: &str) -> String {
    key.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' }).collect()
}

/// The common test set for `M_test = m` at error ratio `phi`.
pub fn test_set(spec: &ExperimentSpec, m: usize, phi: f64) -> Result<Dataset> {
    let seed = SeedTree::new(spec.seed).seed("test", m as u64);
    Dataset::generate(&spec.geometry, m, spec.k, phi, spec.n_test_samples, seed)
}

fn csgd_on_sample(spec: &ExperimentSpec, test: &Dataset, j: usize, power: f64, truth: bool) -> Result<CsgdOutcome> {
    let c = &test.samples[j];
    let mut rng = SeedTree::new(spec.seed).stream("csgd", j as u64);
    run_csgd(&c.rho, c.h_hat(), test.phi, power, &spec.csgd, &mut rng, truth.then_some(c))
}

/// Sum-rate of `method` on every test sample, in order.
fn evaluate(
    spec: &ExperimentSpec,
    store: &mut ModelStore,
    method: &MethodSpec,
    m_train: usize,
    snr_db: f64,
    test: &Dataset,
) -> Result<Vec<f64>> {
    let power = db_to_linear(snr_db);
    let (m, k) = (test.m, test.k);
    match method.kind {
        MethodKind::EqualPower => {
            let p = equal_power(m, k, power);
            test.samples.par_iter().map(|c| sum_rate(c, &p)).collect()
        }
        MethodKind::Csgd => (0..test.len())
            .into_par_iter()
            .map(|j| sum_rate(&test.samples[j], &csgd_on_sample(spec, test, j, power, false)?.allocation))
            .collect(),
        MethodKind::Learned(l) => {
            let model = store.get(spec, l, method.policy.unwrap_or(spec.phi_policy), m_train, snr_db)?;
            test.samples
                .par_iter()
                .map(|c| sum_rate(c, &model.forward_pass(&c.rho, c.h_hat(), power)?))
                .collect()
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn row(
    spec: &ExperimentSpec,
    store: &mut ModelStore,
    method: &MethodSpec,
    label: String,
    m_train: usize,
    snr_db: f64,
    test: &Dataset,
) -> Result<ResultRow> {
    let start = Instant::now();
    let samples = evaluate(spec, store, method, m_train, snr_db, test)?;
    let (mean, se) = mean_and_std_error(&samples);
    Ok(ResultRow {
        method: label,
        m: test.m,
        k: test.k,
        p_db: snr_db,
        phi: test.phi,
        mean_sum_rate: mean,
        std_error: se,
        n_samples: samples.len(),
        seed: spec.seed,
        wall_time_s: start.elapsed().as_secs_f64(),
        samples,
    })
}

/// Every method at every SNR point, at `M_test = m_test[0]` and `φ = phi[0]`.
pub fn run_snr_sweep(spec: &ExperimentSpec, store: &mut ModelStore) -> Result<ExperimentResult> {
    spec.validate()?;
    let test = test_set(spec, spec.m_test[0], spec.phi[0])?;
    let mut rows = Vec::new();
    for &snr in &spec.snr_db {
        for method in &spec.methods {
            rows.push(row(spec, store, method, method.to_string(), spec.m_train[0], snr, &test)?);
        }
    }
    Ok(ExperimentResult {
        config_hash: spec.config_hash(),
        rows,
    })
}

/// Every method at every φ point, at `M_test = m_test[0]` and `snr_db[0]`.
/// Test sets for different φ share deployments and fading draws.
pub fn run_error_ratio_sweep(spec: &ExperimentSpec, store: &mut ModelStore) -> Result<ExperimentResult> {
    spec.validate()?;
    let snr = spec.snr_db[0];
    let mut rows = Vec::new();
    for &phi in &spec.phi {
        let test = test_set(spec, spec.m_test[0], phi)?;
        for method in &spec.methods {
            rows.push(row(spec, store, method, method.to_string(), spec.m_train[0], snr, &test)?);
        }
    }
    Ok(ExperimentResult {
        config_hash: spec.config_hash(),
        rows,
    })
}

/// Learned sum-rate divided by CSGD sum-rate on the same test set, for every
/// learned method, `M_train` and `M_test`, at `snr_db[0]` and `phi[0]`.
pub fn run_scalability_table(spec: &ExperimentSpec, store: &mut ModelStore) -> Result<ScalabilityTable> {
    spec.validate()?;
    let (snr, phi) = (spec.snr_db[0], spec.phi[0]);
    let mut rows = Vec::new();
    let mut cells = Vec::new();
    for &m_test in &spec.m_test {
        let test = test_set(spec, m_test, phi)?;
        let csgd = row(spec, store, &MethodSpec::csgd(), "CSGD".into(), m_test, snr, &test)?;
        for method in spec.methods.iter().filter(|m| m.learned_method().is_some()) {
            for &m_train in &spec.m_train {
                let label = format!("{method}[m_train={m_train}]");
                let r = row(spec, store, method, label, m_train, snr, &test)?;
                cells.push(ScalabilityCell {
                    method: method.to_string(),
                    m_train,
                    m_test,
                    learned_sum_rate: r.mean_sum_rate,
                    csgd_sum_rate: csgd.mean_sum_rate,
                    relative_sum_rate: r.mean_sum_rate / csgd.mean_sum_rate,
                });
                rows.push(r);
            }
        }
        rows.push(csgd);
    }
    Ok(ScalabilityTable {
        cells,
        result: ExperimentResult {
            config_hash: spec.config_hash(),
            rows,
        },
    })
}

/// Trains (or loads) every learned model the SNR and φ sweeps need.
pub fn train_models(spec: &ExperimentSpec, store: &mut ModelStore) -> Result<Vec<String>> {
    spec.validate()?;
    let mut keys = Vec::new();
    for (method, policy) in spec.learned_methods() {
        for &m_train in &spec.m_train {
            for &snr in &spec.snr_db {
                store.get(spec, method, policy, m_train, snr)?;
                keys.push(model_key(method, policy, spec.k, m_train, snr));
            }
        }
    }
    Ok(keys)
}

/// Writes the test set of every `(M_test, φ)` pair to `<out>/data`.
pub fn generate_dataset(spec: &ExperimentSpec) -> Result<Vec<DatasetManifest>> {
    spec.validate()?;
    let dir = spec.out.join("data");
    let mut out = Vec::new();
    for &m in &spec.m_test {
        for &phi in &spec.phi {
            let stem = format!("test_m{m}_k{}_phi{phi}", spec.k);
            out.push(test_set(spec, m, phi)?.persist(&dir, &stem, &spec.geometry)?);
        }
    }
    Ok(out)
}

/// CSGD iteration trace on test sample `index` at the first sweep point.
pub fn csgd_trace(spec: &ExperimentSpec, index: usize) -> Result<String> {
    spec.validate()?;
    let mut small = spec.clone();
    small.n_test_samples = index + 1;
    let test = test_set(&small, spec.m_test[0], spec.phi[0])?;
    let outcome = csgd_on_sample(spec, &test, index, db_to_linear(spec.snr_db[0]), true)?;
    let mut buf = Vec::new();
    write_trace_csv(&mut buf, &outcome.trace).map_err(|e| Error::io("<trace>", e))?;
    Ok(String::from_utf8(buf).expect("trace CSV is ASCII"))
}

#[derive(Serialize)]
struct Sidecar<'a, T: Serialize> {
    config_hash: &'a str,
    seed: u64,
    spec: &'a ExperimentSpec,
    result: &'a T,
    training: &'a [TrainingRecord],
    total_wall_time_s: f64,
}

/// Writes `<dir>/<stem>.csv` and the `<stem>.json` sidecar.
pub fn write_outputs<T: Serialize>(
    dir: &Path,
    stem: &str,
    csv: &str,
    spec: &ExperimentSpec,
    result: &T,
    store: &ModelStore,
    total_wall_time_s: f64,
) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(format!("{stem}.csv"));
    fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    let hash = spec.config_hash();
    let sidecar = Sidecar {
        config_hash: &hash,
        seed: spec.seed,
        spec,
        result,
        training: &store.trained,
        total_wall_time_s,
    };
    let json = dir.join(format!("{stem}.json"));
    fs::write(&json, serde_json::to_string_pretty(&sidecar)?).map_err(|e| Error::io(&json, e))?;
    Ok(path)
}
