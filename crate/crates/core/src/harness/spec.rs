//! Experiment description, loaded from a TOML file and patched from the
//! command line.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coplearn::{ClConfig, EstimateEncoding, Method, NonNegMap, PhiSampling};
use crate::csgd::CsgdConfig;
use crate::error::{Error, Result};
use crate::netenv::{db_to_linear, validate_phi, GeometryConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodKind {
    Learned(Method),
    Csgd,
    EqualPower,
}

/// One evaluated method. Learned methods may pin their own training
/// φ policy, written `CL@fixed:0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct MethodSpec {
    pub kind: MethodKind,
    pub policy: Option<PhiSampling>,
}

impl MethodSpec {
    pub const fn learned(method: Method) -> Self {
        Self {
            kind: MethodKind::Learned(method),
            policy: None,
        }
    }

    pub const fn csgd() -> Self {
        Self {
            kind: MethodKind::Csgd,
            policy: None,
        }
    }

    pub const fn equal_power() -> Self {
        Self {
            kind: MethodKind::EqualPower,
            policy: None,
        }
    }

    pub fn with_policy(mut self, policy: PhiSampling) -> Self {
        self.policy = Some(policy);
        self
    }

    pub fn learned_method(&self) -> Option<Method> {
        match self.kind {
            MethodKind::Learned(m) => Some(m),
            _ => None,
        }
    }
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            MethodKind::Learned(m) => write!(f, "{m}")?,
            MethodKind::Csgd => f.write_str("CSGD")?,
            MethodKind::EqualPower => f.write_str("EP")?,
        }
        if let Some(p) = self.policy {
            write!(f, "@{p}")?;
        }
        Ok(())
    }
}

impl FromStr for MethodSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, policy) = match s.trim().split_once('@') {
            Some((n, p)) => (n, Some(p.parse::<PhiSampling>()?)),
            None => (s.trim(), None),
        };
        let kind = match name.to_ascii_lowercase().as_str() {
            "csgd" => MethodKind::Csgd,
            "ep" | "equal" | "equal-power" => MethodKind::EqualPower,
            other => MethodKind::Learned(other.parse()?),
        };
        if policy.is_some() && !matches!(kind, MethodKind::Learned(_)) {
            return Err(Error::config(format!("only learned methods take a φ policy: {s:?}")));
        }
        Ok(Self { kind, policy })
    }
}

impl TryFrom<String> for MethodSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<MethodSpec> for String {
    fn from(m: MethodSpec) -> Self {
        m.to_string()
    }
}

/// Training budget and architecture shared by every learned method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSpec {
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden_depth: usize,
    /// `None` means `32 K`.
    pub hidden_width: Option<usize>,
    pub encoding: EstimateEncoding,
    pub nonneg: NonNegMap,
    pub validation_samples: usize,
}

impl Default for TrainingSpec {
    fn default() -> Self {
        let c = ClConfig::default();
        Self {
            epochs: c.epochs,
            steps_per_epoch: c.steps_per_epoch,
            batch_size: c.batch_size,
            learning_rate: c.learning_rate,
            hidden_depth: c.hidden_depth,
            hidden_width: None,
            encoding: c.encoding,
            nonneg: c.nonneg,
            validation_samples: c.validation_samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub methods: Vec<MethodSpec>,
    /// Training AP counts. Only the scalability table uses more than the first.
    pub m_train: Vec<usize>,
    /// Test AP counts. SNR and φ sweeps use the first.
    pub m_test: Vec<usize>,
    pub k: usize,
    /// `10 log10 P` with unit noise.
    pub snr_db: Vec<f64>,
    pub phi: Vec<f64>,
    /// Training φ policy of learned methods without their own.
    pub phi_policy: PhiSampling,
    pub n_test_samples: usize,
    pub seed: u64,
    pub out: PathBuf,
    /// Defaults to `<out>/checkpoints`.
    pub checkpoint_dir: Option<PathBuf>,
    pub geometry: GeometryConfig,
    pub training: TrainingSpec,
    pub csgd: CsgdConfig,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            methods: vec![
                MethodSpec::learned(Method::Cl),
                MethodSpec::learned(Method::Ncl),
                MethodSpec::learned(Method::Scl),
                MethodSpec::csgd(),
                MethodSpec::equal_power(),
            ],
            m_train: vec![4],
            m_test: vec![4],
            k: 4,
            snr_db: vec![20.0],
            phi: vec![0.1],
            phi_policy: PhiSampling::Uniform,
            n_test_samples: 5000,
            seed: 0,
            out: PathBuf::from("results"),
            checkpoint_dir: None,
            geometry: GeometryConfig::default(),
            training: TrainingSpec::default(),
            csgd: CsgdConfig::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let empty = |name: &str, len: usize| {
            if len == 0 {
                Err(Error::config(format!("{name} must not be empty")))
            } else {
                Ok(())
            }
        };
        empty("methods", self.methods.len())?;
        empty("m_train", self.m_train.len())?;
        empty("m_test", self.m_test.len())?;
        empty("snr_db", self.snr_db.len())?;
        empty("phi", self.phi.len())?;
        if self.n_test_samples == 0 {
            return Err(Error::config("n_test_samples must be at least 1"));
        }
        if self.k == 0 || self.m_train.contains(&0) || self.m_test.contains(&0) {
            return Err(Error::config("M and K must be at least 1"));
        }
        if let Some(s) = self.snr_db.iter().find(|s| !s.is_finite()) {
            return Err(Error::config(format!("SNR must be finite, got {s}")));
        }
        for phi in &self.phi {
            validate_phi(*phi)?;
        }
        self.phi_policy.validate()?;
        for m in &self.methods {
            if let Some(p) = m.policy {
                p.validate()?;
            }
        }
        self.geometry.validate()?;
        self.csgd.validate()?;
        for m in self.learned_methods() {
            self.cl_config(m.0, m.1, self.m_train[0], self.snr_db[0]).validate()?;
        }
        Ok(())
    }

    /// Learned entries with their effective training policy.
    pub fn learned_methods(&self) -> Vec<(Method, PhiSampling)> {
        self.methods
            .iter()
            .filter_map(|m| m.learned_method().map(|l| (l, m.policy.unwrap_or(self.phi_policy))))
            .collect()
    }

    pub fn cl_config(&self, method: Method, policy: PhiSampling, m_train: usize, snr_db: f64) -> ClConfig {
        let t = &self.training;
        let mut c = ClConfig::new(method, self.k, db_to_linear(snr_db));
        c.m_train = m_train;
        c.phi_sampling = policy;
        c.epochs = t.epochs;
        c.steps_per_epoch = t.steps_per_epoch;
        c.batch_size = t.batch_size;
        c.learning_rate = t.learning_rate;
        c.hidden_depth = t.hidden_depth;
        if let Some(w) = t.hidden_width {
            c.hidden_width = w;
        }
        c.encoding = t.encoding;
        c.nonneg = t.nonneg;
        c.validation_samples = t.validation_samples;
        c.geometry = self.geometry;
        c
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.checkpoint_dir.clone().unwrap_or_else(|| self.out.join("checkpoints"))
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form,
    /// ignoring output locations.
    pub fn config_hash(&self) -> String {
        let mut canon = self.clone();
        canon.out = PathBuf::new();
        canon.checkpoint_dir = None;
        let json = serde_json::to_string(&canon).expect("spec serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }
}
