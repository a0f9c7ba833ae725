//! Time/frequency stripe masking for spectrogram-like inputs.
//!
//! The distorted view of a sample is produced by blanking a few random
//! runs of time frames and a few random runs of frequency bins. View A of
//! a twin batch is always the untouched original.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Largest number of frames one time stripe may cover.
    pub time_drop_width: usize,
    pub time_stripes: usize,
    /// Largest number of bins one frequency stripe may cover.
    pub freq_drop_width: usize,
    pub freq_stripes: usize,
    pub mask_value: f64,
}

impl Default for AugmentConfig {
    /// Settings sized for 32-frame, 16-bin inputs.
    fn default() -> Self {
        AugmentConfig {
            time_drop_width: 8,
            time_stripes: 2,
            freq_drop_width: 2,
            freq_stripes: 2,
            mask_value: 0.0,
        }
    }
}

impl AugmentConfig {
    /// Settings for full-size 250-frame, 64-bin log-Mel inputs.
    pub fn full_scale() -> Self {
        AugmentConfig {
            time_drop_width: 64,
            time_stripes: 2,
            freq_drop_width: 8,
            freq_stripes: 2,
            mask_value: 0.0,
        }
    }

    /// No stripes: the augmented view equals the input.
    pub fn disabled() -> Self {
        AugmentConfig {
            time_stripes: 0,
            freq_stripes: 0,
            ..Self::default()
        }
    }

    pub fn validate(&self, frames: usize, bins: usize) -> Result<()> {
        if self.time_stripes > 0 && self.time_drop_width >= frames {
            return Err(Error::Config(format!(
                "augment.time_drop_width {} must be below the frame count {frames}",
                self.time_drop_width
            )));
        }
        if self.freq_stripes > 0 && self.freq_drop_width >= bins {
            return Err(Error::Config(format!(
                "augment.freq_drop_width {} must be below the bin count {bins}",
                self.freq_drop_width
            )));
        }
        if !self.mask_value.is_finite() {
            return Err(Error::Config("augment.mask_value must be finite".into()));
        }
        Ok(())
    }
}

/// Frame and bin ranges chosen for one sample.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Masks {
    pub time: Vec<Range<usize>>,
    pub freq: Vec<Range<usize>>,
}

impl Masks {
    pub fn sample<R: Rng + ?Sized>(cfg: &AugmentConfig, frames: usize, bins: usize, rng: &mut R) -> Self {
        let mut stripes = |count: usize, max_width: usize, extent: usize| -> Vec<Range<usize>> {
            (0..count)
                .map(|_| {
                    let w = rng.random_range(0..=max_width.min(extent));
                    let start = rng.random_range(0..=extent - w);
                    start..start + w
                })
                .collect()
        };
        let time = stripes(cfg.time_stripes, cfg.time_drop_width, frames);
        let freq = stripes(cfg.freq_stripes, cfg.freq_drop_width, bins);
        Masks { time, freq }
    }

    /// Writes `value` into every masked cell of a row-major `frames×bins` plane.
    pub fn apply(&self, plane: &mut [f64], bins: usize, value: f64) {
        for r in &self.time {
            plane[r.start * bins..r.end * bins].fill(value);
        }
        let frames = plane.len() / bins;
        for r in &self.freq {
            for t in 0..frames {
                plane[t * bins + r.start..t * bins + r.end].fill(value);
            }
        }
    }
}

fn plane_dims(shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [1, t, f] => Ok((*t, *f)),
        _ => Err(Error::dim(format!("expected a 1×T×F sample, got {shape:?}"))),
    }
}

/// Returns a masked copy of a `1×T×F` sample.
pub fn spec_augment<R: Rng + ?Sized>(x: &Tensor, cfg: &AugmentConfig, rng: &mut R) -> Result<Tensor> {
    let (frames, bins) = plane_dims(x.shape())?;
    cfg.validate(frames, bins)?;
    let masks = Masks::sample(cfg, frames, bins, rng);
    let mut out = x.clone();
    masks.apply(out.data_mut(), bins, cfg.mask_value);
    Ok(out)
}

/// Masks every sample of a `B×1×T×F` batch, each from its own stream
/// derived from `(seed, stream, item)`.
pub fn augment_batch(batch: &Tensor, cfg: &AugmentConfig, seed: u64, stream: u64) -> Result<Tensor> {
    let shape = batch.shape();
    if shape.len() != 4 || shape[1] != 1 {
        return Err(Error::dim(format!("expected a B×1×T×F batch, got {shape:?}")));
    }
    let (frames, bins) = (shape[2], shape[3]);
    cfg.validate(frames, bins)?;
    let mut out = batch.clone();
    for (item, plane) in out.data_mut().chunks_mut(frames * bins).enumerate() {
        let mut rng = seeding::stream(seed, &[seeding::tag::AUGMENT, stream, item as u64]);
        Masks::sample(cfg, frames, bins, &mut rng).apply(plane, bins, cfg.mask_value);
    }
    Ok(out)
}
