//! On-disk channel datasets.
//!
//! Binary layout (`.cfds`), all integers and floats little-endian:
//!
//! ```text
//! magic    4 bytes   "CFDS"
//! version  u32       1
//! m        u64
//! k        u64
//! n        u64       number of samples
//! seed     u64
//! phi      f64
//! then, per sample, five row-major M×K f64 blocks:
//!   rho, h_hat.re, h_hat.im, err.re, err.im
//! ```
//!
//! The JSON mirror carries the same arrays under the same names, and the
//! manifest sidecar records the SHA-256 of the binary file.

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::rng::{self, SeedTree};
use super::{
    sample_channel_streams, sample_deployment, validate_phi, ChannelRealization,
    GeometryConfig, LongTermCsi,
};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CFDS";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 48;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub m: usize,
    pub k: usize,
    pub phi: f64,
    pub seed: u64,
    pub samples: Vec<ChannelRealization>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub m: usize,
    pub k: usize,
    pub phi: f64,
    pub seed: u64,
    pub n_samples: usize,
    pub geometry: GeometryConfig,
    pub sha256: String,
}

#[derive(Serialize, Deserialize)]
struct JsonSample {
    rho: Vec<f64>,
    h_hat_re: Vec<f64>,
    h_hat_im: Vec<f64>,
    err_re: Vec<f64>,
    err_im: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct JsonDataset {
    version: u32,
    m: usize,
    k: usize,
    phi: f64,
    seed: u64,
    samples: Vec<JsonSample>,
}

impl Dataset {
    /// Draws `n` independent (deployment, channel) pairs. Sample `j` uses
    /// substreams indexed by `j`, so a longer dataset extends a shorter one.
    pub fn generate(
        geometry: &GeometryConfig,
        m: usize,
        k: usize,
        phi: f64,
        n: usize,
        seed: u64,
    ) -> Result<Self> {
        validate_phi(phi)?;
        let tree = SeedTree::new(seed);
        let mut samples = Vec::with_capacity(n);
        for j in 0..n as u64 {
            let rho = sample_deployment(geometry, m, k, &mut tree.stream(rng::DEPLOYMENT, j))?;
            let chan = sample_channel_streams(
                &rho,
                phi,
                &mut tree.stream(rng::CHANNEL, j),
                &mut tree.stream(rng::ERROR, j),
            )?;
            samples.push(chan);
        }
        Ok(Self {
            m,
            k,
            phi,
            seed,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mk = self.m * self.k;
        let mut out = Vec::with_capacity(HEADER_LEN + self.samples.len() * mk * 5 * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for v in [self.m as u64, self.k as u64, self.samples.len() as u64, self.seed] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.phi.to_le_bytes());
        let mut put = |v: f64| out.extend_from_slice(&v.to_le_bytes());
        for s in &self.samples {
            s.rho.as_slice().iter().for_each(|v| put(*v));
            s.h_hat().iter().for_each(|c| put(c.re));
            s.h_hat().iter().for_each(|c| put(c.im));
            s.err().iter().for_each(|c| put(c.re));
            s.err().iter().for_each(|c| put(c.im));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err("bad magic".into());
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let m = r.u64()? as usize;
        let k = r.u64()? as usize;
        let n = r.u64()? as usize;
        let seed = r.u64()?;
        let phi = r.f64()?;
        let mk = m * k;
        let expected = HEADER_LEN + n * mk * 5 * 8;
        if bytes.len() != expected {
            return Err(format!("length {} does not match header ({expected})", bytes.len()));
        }
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let rho = r.block(mk)?;
            let (hr, hi) = (r.block(mk)?, r.block(mk)?);
            let (er, ei) = (r.block(mk)?, r.block(mk)?);
            samples.push(assemble(m, k, phi, rho, &hr, &hi, &er, &ei)?);
        }
        Ok(Self {
            m,
            k,
            phi,
            seed,
            samples,
        })
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|reason| Error::Format {
            path: path.to_path_buf(),
            reason,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let samples = self
            .samples
            .iter()
            .map(|s| JsonSample {
                rho: s.rho.as_slice().to_vec(),
                h_hat_re: s.h_hat().iter().map(|c| c.re).collect(),
                h_hat_im: s.h_hat().iter().map(|c| c.im).collect(),
                err_re: s.err().iter().map(|c| c.re).collect(),
                err_im: s.err().iter().map(|c| c.im).collect(),
            })
            .collect();
        let doc = JsonDataset {
            version: VERSION,
            m: self.m,
            k: self.k,
            phi: self.phi,
            seed: self.seed,
            samples,
        };
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: JsonDataset = serde_json::from_str(text)?;
        let samples = doc
            .samples
            .into_iter()
            .map(|s| {
                assemble(
                    doc.m, doc.k, doc.phi, s.rho, &s.h_hat_re, &s.h_hat_im, &s.err_re, &s.err_im,
                )
                .map_err(Error::InvalidInput)
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            m: doc.m,
            k: doc.k,
            phi: doc.phi,
            seed: doc.seed,
            samples,
        })
    }

    /// Writes `<stem>.cfds`, `<stem>.json` and `<stem>.manifest.json` into
    /// `dir` and returns the manifest.
    pub fn persist(&self, dir: &Path, stem: &str, geometry: &GeometryConfig) -> Result<DatasetManifest> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let bytes = self.to_bytes();
        let bin = dir.join(format!("{stem}.cfds"));
        fs::write(&bin, &bytes).map_err(|e| Error::io(&bin, e))?;
        let json = dir.join(format!("{stem}.json"));
        fs::write(&json, self.to_json()?).map_err(|e| Error::io(&json, e))?;
        let manifest = DatasetManifest {
            version: VERSION,
            m: self.m,
            k: self.k,
            phi: self.phi,
            seed: self.seed,
            n_samples: self.samples.len(),
            geometry: *geometry,
            sha256: hex::encode(Sha256::digest(&bytes)),
        };
        let mpath = manifest_path(dir, stem);
        fs::write(&mpath, serde_json::to_string_pretty(&manifest)?)
            .map_err(|e| Error::io(&mpath, e))?;
        Ok(manifest)
    }
}

pub fn manifest_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}.manifest.json"))
}

/// Checks that the binary file hashes to the value recorded in its manifest.
pub fn verify_manifest(dir: &Path, stem: &str) -> Result<bool> {
    let mpath = manifest_path(dir, stem);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    let bin = dir.join(format!("{stem}.cfds"));
    let bytes = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)) == manifest.sha256)
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    m: usize,
    k: usize,
    phi: f64,
    rho: Vec<f64>,
    hr: &[f64],
    hi: &[f64],
    er: &[f64],
    ei: &[f64],
) -> std::result::Result<ChannelRealization, String> {
    let zip = |re: &[f64], im: &[f64]| -> Vec<Complex64> {
        re.iter().zip(im).map(|(a, b)| Complex64::new(*a, *b)).collect()
    };
    let rho = LongTermCsi::new(m, k, rho).map_err(|e| e.to_string())?;
    ChannelRealization::from_parts(rho, phi, zip(hr, hi), zip(er, ei)).map_err(|e| e.to_string())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos + n;
        let out = self.bytes.get(self.pos..end).ok_or("truncated file")?;
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn block(&mut self, n: usize) -> std::result::Result<Vec<f64>, String> {
        (0..n).map(|_| self.f64()).collect()
    }
}
