//! Datasets: synthetic spectrogram-like regression data and the
//! `RRTN-FEAT` feature file format.
//!
//! File layout: one ASCII header line `RRTN-FEAT v1 <N> <T> <F> <K>\n`,
//! then `N` records of `T·F` little-endian `f32` feature values (row-major,
//! frames outer) followed by `K` little-endian `f32` targets.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;
use crate::tensor::Tensor;

pub const FEAT_MAGIC: &str = "RRTN-FEAT";
pub const FEAT_VERSION: &str = "v1";

/// Fraction of samples (by leading index) assigned to the training split.
const TRAIN_FRACTION: (usize, usize) = (4, 5);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub frames: usize,
    pub bins: usize,
    pub targets: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_samples: 512,
            frames: 32,
            bins: 16,
            targets: 10,
            noise_sigma: 0.05,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 || self.frames == 0 || self.bins == 0 || self.targets == 0 {
            return Err(Error::Config("data extents must all be positive".into()));
        }
        if self.targets > self.bins {
            return Err(Error::Config(format!(
                "data.targets ({}) cannot exceed data.bins ({}): each target owns a frequency band",
                self.targets, self.bins
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(
                "data.noise_sigma must be a finite non-negative number".into(),
            ));
        }
        Ok(())
    }
}

/// Features `N×1×T×F`, targets `N×K` in `[0, 1]`, and a split tag per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Tensor,
    targets: Tensor,
    split: Vec<Split>,
}

fn split_for(n: usize) -> Vec<Split> {
    let n_train = n * TRAIN_FRACTION.0 / TRAIN_FRACTION.1;
    (0..n)
        .map(|i| if i < n_train { Split::Train } else { Split::Dev })
        .collect()
}

impl Dataset {
    /// Wraps features and targets, assigning the index-based 80/20 split.
    pub fn new(features: Tensor, targets: Tensor) -> Result<Self> {
        let fs = features.shape();
        let ts = targets.shape();
        if fs.len() != 4 || fs[1] != 1 || ts.len() != 2 || fs[0] != ts[0] {
            return Err(Error::dim(format!(
                "dataset needs N×1×T×F features and N×K targets, got {fs:?} and {ts:?}"
            )));
        }
        if !features.is_finite() || !targets.is_finite() {
            return Err(Error::NonFinite("dataset values".into()));
        }
        if targets.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Usage("targets must lie in [0, 1]".into()));
        }
        let split = split_for(fs[0]);
        Ok(Dataset {
            features,
            targets,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.split.len()
    }

    pub fn is_empty(&self) -> bool {
        self.split.is_empty()
    }

    pub fn frames(&self) -> usize {
        self.features.shape()[2]
    }

    pub fn bins(&self) -> usize {
        self.features.shape()[3]
    }

    pub fn n_targets(&self) -> usize {
        self.targets.shape()[1]
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn targets(&self) -> &Tensor {
        &self.targets
    }

    pub fn split_of(&self, index: usize) -> Split {
        self.split[index]
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.split[i] == split).collect()
    }

    /// Features `B×1×T×F` and targets `B×K` of the given samples, in order.
    pub fn gather(&self, indices: &[usize]) -> (Tensor, Tensor) {
        (self.features.select_rows(indices), self.targets.select_rows(indices))
    }

    /// Copy with every value rounded through `f32`, as stored on disk.
    pub fn to_f32_precision(&self) -> Dataset {
        let round = |t: &Tensor| t.map(|v| v as f32 as f64);
        Dataset {
            features: round(&self.features),
            targets: round(&self.targets),
            split: self.split.clone(),
        }
    }
}

/// Index range of frequency band `k` out of `k_total` over `bins` bins.
pub fn band_range(k: usize, k_total: usize, bins: usize) -> std::ops::Range<usize> {
    (k * bins / k_total)..((k + 1) * bins / k_total)
}

/// Positive, smooth time envelope in `(0.5, 1]`.
pub fn envelope(t: usize, frames: usize) -> f64 {
    0.5 + 0.5 * (std::f64::consts::PI * (t as f64 + 0.5) / frames as f64).sin()
}

/// Synthetic multi-output regression data: each target scales the energy
/// of its own contiguous frequency band under a shared time envelope.
pub fn gen_synth(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let (n, t_len, f_len, k_len) = (cfg.n_samples, cfg.frames, cfg.bins, cfg.targets);
    let mut rng = seeding::stream(cfg.seed, &[seeding::tag::DATA]);
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let band_of: Vec<usize> = (0..f_len)
        .map(|f| {
            (0..k_len)
                .find(|&k| band_range(k, k_len, f_len).contains(&f))
                .unwrap_or(k_len - 1)
        })
        .collect();

    let mut features = Vec::with_capacity(n * t_len * f_len);
    let mut targets = Vec::with_capacity(n * k_len);
    for _ in 0..n {
        let u: Vec<f64> = (0..k_len).map(|_| rng.random::<f64>()).collect();
        for t in 0..t_len {
            let env = envelope(t, t_len);
            for &band in &band_of {
                let clean = u[band] * env;
                let eps = if cfg.noise_sigma > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                features.push(clean + eps);
            }
        }
        targets.extend_from_slice(&u);
    }
    Dataset::new(
        Tensor::new(vec![n, 1, t_len, f_len], features)?,
        Tensor::new(vec![n, k_len], targets)?,
    )
}

/// Tail-crops or tail-zero-pads a row-major `frames_in×bins` sample to
/// `frames_out` frames.
pub fn crop_or_pad(sample: &[f64], bins: usize, frames_out: usize) -> Vec<f64> {
    let mut out = sample[..sample.len().min(frames_out * bins)].to_vec();
    out.resize(frames_out * bins, 0.0);
    out
}

pub fn to_feat_bytes(ds: &Dataset) -> Vec<u8> {
    let (n, t, f, k) = (ds.len(), ds.frames(), ds.bins(), ds.n_targets());
    let mut out = format!("{FEAT_MAGIC} {FEAT_VERSION} {n} {t} {f} {k}\n").into_bytes();
    out.reserve(n * (t * f + k) * 4);
    for i in 0..n {
        let feats = &ds.features.data()[i * t * f..(i + 1) * t * f];
        let targs = &ds.targets.data()[i * k..(i + 1) * k];
        for &v in feats.iter().chain(targs) {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn save_features(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut file = std::fs::File::create(path)?;
    file.write_all(&to_feat_bytes(ds))?;
    Ok(())
}

/// Parses an `RRTN-FEAT` buffer, fitting every sample to `frames` frames
/// when given (the file's own frame count otherwise).
pub fn from_feat_bytes(bytes: &[u8], frames: Option<usize>) -> Result<Dataset> {
    let header_end = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format(0, "missing header line"))?;
    let header = std::str::from_utf8(&bytes[..header_end]).map_err(|_| Error::format(0, "header is not ASCII"))?;
    let mut fields = header.split(' ');
    if fields.next() != Some(FEAT_MAGIC) {
        return Err(Error::format(0, format!("bad magic, expected {FEAT_MAGIC}")));
    }
    let version_at = FEAT_MAGIC.len() as u64 + 1;
    match fields.next() {
        Some(FEAT_VERSION) => {}
        other => {
            return Err(Error::format(
                version_at,
                format!("unsupported version {other:?}, expected {FEAT_VERSION}"),
            ))
        }
    }
    let mut dims = [0usize; 4];
    let mut offset = version_at as usize + FEAT_VERSION.len() + 1;
    for (slot, name) in dims.iter_mut().zip(["N", "T", "F", "K"]) {
        let field = fields
            .next()
            .ok_or_else(|| Error::format(offset as u64, format!("missing {name} in header")))?;
        *slot = field
            .parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::format(offset as u64, format!("bad {name} value {field:?}")))?;
        offset += field.len() + 1;
    }
    if fields.next().is_some() {
        return Err(Error::format(offset as u64, "trailing header fields"));
    }
    let [n, t, f, k] = dims;
    let body = header_end + 1;
    let record = (t * f + k) * 4;
    let expected = body + n * record;
    if bytes.len() != expected {
        return Err(Error::format(
            bytes.len().min(expected) as u64,
            format!("expected {expected} bytes for {n} records, found {}", bytes.len()),
        ));
    }

    let t_out = frames.unwrap_or(t);
    let mut features = Vec::with_capacity(n * t_out * f);
    let mut targets = Vec::with_capacity(n * k);
    for i in 0..n {
        let start = body + i * record;
        let values: Vec<f64> = bytes[start..start + record]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::format((start + bad * 4) as u64, "non-finite value"));
        }
        let (feats, targs) = values.split_at(t * f);
        if let Some(bad) = targs.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::format(
                (start + (t * f + bad) * 4) as u64,
                "target outside [0, 1]",
            ));
        }
        features.extend(crop_or_pad(feats, f, t_out));
        targets.extend_from_slice(targs);
    }
    Dataset::new(
        Tensor::new(vec![n, 1, t_out, f], features)?,
        Tensor::new(vec![n, k], targets)?,
    )
}

pub fn load_features(path: impl AsRef<Path>, frames: Option<usize>) -> Result<Dataset> {
    from_feat_bytes(&std::fs::read(path)?, frames)
}
