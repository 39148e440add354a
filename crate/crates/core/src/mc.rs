//! Monte-Carlo estimation of the predictive distribution under dropout.
//!
//! Sample `s` at evaluation point `j` draws its masks from
//! `source.split(j).split(s)`, so every output is a pure function of the root
//! seed and its indices. Samples are processed in fixed-size chunks; per-chunk
//! moments are merged in chunk order, which keeps results bit-identical no
//! matter how many worker threads run the chunks.

use std::fmt::Write as _;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dropout::MaskSource;
use crate::error::{Error, Result};
use crate::nn::{forward_batch, NetworkDef, NetworkState};

const CHUNK: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bands {
    pub sigma: f64,
    pub two_sigma: f64,
    pub three_sigma: f64,
}

impl Bands {
    pub fn from_variance(variance: f64) -> Self {
        let s = variance.sqrt();
        Self {
            sigma: s,
            two_sigma: 2.0 * s,
            three_sigma: 3.0 * s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McRecord {
    /// Scalar input, when the network takes one.
    pub x: Option<f64>,
    pub sample_mean: f64,
    /// Unbiased (`S - 1`) sample variance.
    pub sample_variance: f64,
    pub bands: Bands,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McResult {
    pub records: Vec<McRecord>,
    pub samples: usize,
    pub seed: u64,
}

/// Streaming mean / sum of squared deviations.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub count: usize,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    pub fn push(&mut self, v: f64) {
        self.count += 1;
        let delta = v - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (v - self.mean);
    }

    pub fn merge(self, other: Moments) -> Moments {
        if self.count == 0 {
            return other;
        }
        if other.count == 0 {
            return self;
        }
        let count = self.count + other.count;
        let (na, nb) = (self.count as f64, other.count as f64);
        let delta = other.mean - self.mean;
        Moments {
            count,
            mean: self.mean + delta * nb / count as f64,
            m2: self.m2 + other.m2 + delta * delta * na * nb / count as f64,
        }
    }

    pub fn sample_variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / (self.count - 1) as f64).max(0.0)
        }
    }
}

impl FromIterator<f64> for Moments {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut m = Moments::default();
        iter.into_iter().for_each(|v| m.push(v));
        m
    }
}

impl McRecord {
    /// Summarizes explicit output samples.
    pub fn from_samples(x: Option<f64>, outputs: &[f64]) -> Result<Self> {
        check_samples(outputs.len())?;
        Ok(Self::from_moments(x, outputs.iter().copied().collect()))
    }

    fn from_moments(x: Option<f64>, m: Moments) -> Self {
        let v = m.sample_variance();
        Self {
            x,
            sample_mean: m.mean,
            sample_variance: v,
            bands: Bands::from_variance(v),
        }
    }
}

fn check_samples(samples: usize) -> Result<()> {
    if samples < 2 {
        return Err(Error::invalid("sample count", format!("S = {samples}; at least 2 are required")));
    }
    Ok(())
}

fn check_network(def: &NetworkDef, state: &NetworkState, input: &[f64]) -> Result<()> {
    def.validate()?;
    state.check_against(def)?;
    if def.output_dim != 1 {
        return Err(Error::invalid("network", "Monte-Carlo estimation expects a scalar output"));
    }
    if input.len() != def.input_dim {
        return Err(Error::invalid(
            "input",
            format!("length {} does not match input_dim {}", input.len(), def.input_dim),
        ));
    }
    Ok(())
}

/// Outputs of samples `start..start + len` for one input, each with masks from
/// `source.split(sample_index)`.
pub fn sample_outputs(
    def: &NetworkDef,
    state: &NetworkState,
    input: &[f64],
    source: &MaskSource,
    start: usize,
    len: usize,
) -> Result<Vec<f64>> {
    let widths = def.dropout_widths();
    let mut factors: Vec<Array2<f64>> = widths.iter().map(|(_, w)| Array2::zeros((len, *w))).collect();
    for r in 0..len {
        let mut stream = source.split((start + r) as u64);
        for ((spec, _), f) in widths.iter().zip(factors.iter_mut()) {
            let mut row = f.row_mut(r);
            stream.fill_factors(spec, row.as_slice_mut().expect("contiguous row"));
        }
    }
    let x = Array2::from_shape_fn((len, input.len()), |(_, c)| input[c]);
    let tape = forward_batch(state, def, x.view(), factors)?;
    Ok(tape.output().column(0).to_vec())
}

fn sample_moments(
    def: &NetworkDef,
    state: &NetworkState,
    input: &[f64],
    samples: usize,
    source: &MaskSource,
) -> Result<Moments> {
    let chunks: Vec<Moments> = (0..samples.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let start = c * CHUNK;
            let len = CHUNK.min(samples - start);
            sample_outputs(def, state, input, source, start, len).map(|v| v.into_iter().collect())
        })
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().fold(Moments::default(), Moments::merge))
}

/// `S` independent dropout forward passes at one input.
pub fn mc_sample(
    def: &NetworkDef,
    state: &NetworkState,
    input: &[f64],
    samples: usize,
    source: &MaskSource,
) -> Result<McRecord> {
    check_samples(samples)?;
    check_network(def, state, input)?;
    let moments = sample_moments(def, state, input, samples, source)?;
    let x = (def.input_dim == 1).then(|| input[0]);
    Ok(McRecord::from_moments(x, moments))
}

/// One [`mc_sample`] record per grid point of a scalar-input network.
pub fn mc_curve(
    def: &NetworkDef,
    state: &NetworkState,
    xs: &[f64],
    samples: usize,
    source: &MaskSource,
    seed: u64,
) -> Result<McResult> {
    if xs.is_empty() {
        return Err(Error::invalid("evaluation grid", "at least one point is required"));
    }
    if def.input_dim != 1 {
        return Err(Error::invalid("network", "curves need a scalar-input network"));
    }
    let records = xs
        .iter()
        .enumerate()
        .map(|(j, &x)| mc_sample(def, state, &[x], samples, &source.split(j as u64)))
        .collect::<Result<_>>()?;
    Ok(McResult { records, samples, seed })
}

/// Histogram of the sampled outputs at one input over `bins` equal bins of
/// `[lo, hi]`, as densities. Draws the same samples as [`mc_sample`].
pub fn mc_histogram(
    def: &NetworkDef,
    state: &NetworkState,
    input: &[f64],
    samples: usize,
    source: &MaskSource,
    (lo, hi): (f64, f64),
    bins: usize,
) -> Result<Vec<(f64, f64)>> {
    check_samples(samples)?;
    check_network(def, state, input)?;
    if bins == 0 || hi.is_nan() || lo.is_nan() || hi <= lo {
        return Err(Error::invalid("histogram", "need bins >= 1 and hi > lo"));
    }
    let width = (hi - lo) / bins as f64;
    let counts: Vec<Vec<usize>> = (0..samples.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let start = c * CHUNK;
            let len = CHUNK.min(samples - start);
            let mut counts = vec![0usize; bins];
            for v in sample_outputs(def, state, input, source, start, len)? {
                if v >= lo && v <= hi {
                    counts[(((v - lo) / width) as usize).min(bins - 1)] += 1;
                }
            }
            Ok(counts)
        })
        .collect::<Result<_>>()?;
    let mut total = vec![0usize; bins];
    for c in counts {
        total.iter_mut().zip(c).for_each(|(t, v)| *t += v);
    }
    Ok(total
        .iter()
        .enumerate()
        .map(|(i, &c)| (lo + (i as f64 + 0.5) * width, c as f64 / (samples as f64 * width)))
        .collect())
}

impl McResult {
    /// `x,mean,sigma` rows; `x` is empty for networks without a scalar input.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,mean,sigma\n");
        for r in &self.records {
            let x = r.x.map(|v| v.to_string()).unwrap_or_default();
            writeln!(out, "{x},{},{}", r.sample_mean, r.bands.sigma).expect("writing to a String");
        }
        out
    }

    pub fn sigmas(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.bands.sigma).collect()
    }

    pub fn means(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.sample_mean).collect()
    }
}

/// `n` equally spaced points covering `[0, 1]`.
pub fn unit_grid(n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![0.5],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}
