//! Bernoulli dropout masks.
//!
//! A mask entry `d_k` is 1 with keep probability `p = 1 - p_d` and 0 otherwise.
//! The default [`Scaling::None`] multiplies activations by the raw mask, which is
//! the formulation the closed-form moments in [`crate::theory`] are derived for.
//!
//! Randomness comes from a counter-based [`MaskSource`]: every draw is produced by a
//! ChaCha8 stream addressed by `(key, draw index)`, and [`MaskSource::split`]
//! derives independent child sources. Results therefore depend only on seeds and
//! indices, never on how work is scheduled.

use ndarray::Array2;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scaling {
    /// Multiply by the raw 0/1 mask at train and test time.
    #[default]
    None,
    /// Divide kept activations by the keep probability.
    Inverted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropoutSpec {
    /// Drop probability `P(d_k = 0)`.
    pub p_d: f64,
    #[serde(default)]
    pub scaling: Scaling,
}

impl DropoutSpec {
    pub fn new(p_d: f64, scaling: Scaling) -> Result<Self> {
        let spec = Self { p_d, scaling };
        spec.validate()?;
        Ok(spec)
    }

    /// Unscaled dropout with drop rate `p_d`.
    pub fn unscaled(p_d: f64) -> Result<Self> {
        Self::new(p_d, Scaling::None)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.p_d) {
            return Err(Error::invalid(
                "dropout rate",
                format!("p_d = {} is outside [0, 1)", self.p_d),
            ));
        }
        Ok(())
    }

    /// Keep probability `p = 1 - p_d`.
    pub fn keep_prob(&self) -> f64 {
        1.0 - self.p_d
    }

    /// Multiplier applied to a kept unit.
    pub fn kept_factor(&self) -> f64 {
        match self.scaling {
            Scaling::None => 1.0,
            Scaling::Inverted => 1.0 / self.keep_prob(),
        }
    }

    /// Threshold `t` such that a uniform `u32` below `t` means "keep".
    fn keep_threshold(&self) -> u64 {
        let t = (self.keep_prob() * 4_294_967_296.0).round() as u64;
        t.min(1 << 32)
    }
}

/// Seeded, splittable source of dropout masks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSource {
    key: u64,
    counter: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl MaskSource {
    pub fn new(seed: u64) -> Self {
        Self {
            key: seed,
            counter: 0,
        }
    }

    /// Starts at an explicit draw index; `draw_*` calls then continue from it.
    pub fn at(seed: u64, draw_index: u64) -> Self {
        Self {
            key: seed,
            counter: draw_index,
        }
    }

    /// Index of the next draw.
    pub fn draw_index(&self) -> u64 {
        self.counter
    }

    /// Independent child source for sub-stream `index`. Does not advance `self`.
    pub fn split(&self, index: u64) -> MaskSource {
        MaskSource {
            key: splitmix64(self.key ^ splitmix64(index.wrapping_add(0xA076_1D64_78BD_642F))),
            counter: 0,
        }
    }

    fn next_stream(&mut self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.key);
        rng.set_stream(self.counter);
        self.counter += 1;
        rng
    }

    /// Draws one 0/1 mask of `width` entries.
    pub fn draw_mask(&mut self, spec: &DropoutSpec, width: usize) -> Result<Vec<u8>> {
        spec.validate()?;
        if width == 0 {
            return Err(Error::invalid("mask width", "must be at least 1"));
        }
        let threshold = spec.keep_threshold();
        let mut rng = self.next_stream();
        Ok((0..width)
            .map(|_| u8::from(u64::from(rng.next_u32()) < threshold))
            .collect())
    }

    /// Draws a `rows x width` matrix of mask factors (0 or the kept factor)
    /// in a single draw. Row `r` is an independent mask.
    pub fn draw_factors(&mut self, spec: &DropoutSpec, rows: usize, width: usize) -> Array2<f64> {
        let mut out = Array2::zeros((rows, width));
        let mut rng = self.next_stream();
        fill_factors(&mut rng, spec, out.as_slice_mut().expect("standard layout"));
        out
    }

    /// Fills `out` with mask factors from one draw.
    pub fn fill_factors(&mut self, spec: &DropoutSpec, out: &mut [f64]) {
        let mut rng = self.next_stream();
        fill_factors(&mut rng, spec, out);
    }
}

fn fill_factors(rng: &mut ChaCha8Rng, spec: &DropoutSpec, out: &mut [f64]) {
    let threshold = spec.keep_threshold();
    let kept = spec.kept_factor();
    if threshold == 1 << 32 {
        out.fill(kept);
        return;
    }
    for v in out.iter_mut() {
        *v = if u64::from(rng.next_u32()) < threshold {
            kept
        } else {
            0.0
        };
    }
}

/// Convenience wrapper over [`MaskSource::draw_mask`].
pub fn draw_mask(spec: &DropoutSpec, width: usize, source: &mut MaskSource) -> Result<Vec<u8>> {
    source.draw_mask(spec, width)
}

/// Multiplies `x` by `mask`, scaled per `spec.scaling`.
pub fn apply_mask(x: &[f64], mask: &[u8], spec: &DropoutSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    if x.len() != mask.len() {
        return Err(Error::invalid(
            "mask",
            format!("length {} does not match input length {}", mask.len(), x.len()),
        ));
    }
    if let Some(bad) = mask.iter().find(|&&m| m > 1) {
        return Err(Error::invalid("mask", format!("entry {bad} is not binary")));
    }
    let kept = spec.kept_factor();
    Ok(x.iter()
        .zip(mask)
        .map(|(&v, &m)| if m == 1 { v * kept } else { 0.0 })
        .collect())
}
