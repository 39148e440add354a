//! Seeded synthetic datasets.
//!
//! Two families: constant-target Gaussian samples (no inputs), and 1-D function
//! datasets with `x ~ U[0, 1]`. The function shapes are fixed as
//!
//! | shape    | `y(x)`                                            |
//! |----------|---------------------------------------------------|
//! | diamond  | `0.5 + (0.5 - |x - 0.5|) * u`, `u ~ U(-1, 1)`     |
//! | saw      | `frac(3x)`                                        |
//! | triangle | `1 - 2|x - 0.5|`                                  |
//! | line     | `x`                                               |
//! | square   | `1` if `frac(2x) < 0.5`, else `0`                 |
//!
//! Only `diamond` is noisy; its conditional mean is 0.5 everywhere.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bumped whenever a generator's output for a given seed changes.
pub const GENERATOR_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Diamond,
    Saw,
    Triangle,
    Line,
    Square,
}

impl Shape {
    pub const ALL: [Shape; 5] = [
        Shape::Diamond,
        Shape::Saw,
        Shape::Triangle,
        Shape::Line,
        Shape::Square,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Shape::Diamond => "diamond",
            Shape::Saw => "saw",
            Shape::Triangle => "triangle",
            Shape::Line => "line",
            Shape::Square => "square",
        }
    }

    pub fn is_noisy(&self) -> bool {
        matches!(self, Shape::Diamond)
    }

    /// `E[y | x]`.
    pub fn mean(&self, x: f64) -> f64 {
        match self {
            Shape::Diamond => 0.5,
            _ => self.sample(x, 0.0),
        }
    }

    /// Target at `x`; `u` in `[-1, 1]` is the noise variate (ignored by noise-free shapes).
    pub fn sample(&self, x: f64, u: f64) -> f64 {
        match self {
            Shape::Diamond => 0.5 + (0.5 - (x - 0.5).abs()) * u,
            Shape::Saw => (3.0 * x).fract(),
            Shape::Triangle => 1.0 - 2.0 * (x - 0.5).abs(),
            Shape::Line => x,
            Shape::Square => {
                if (2.0 * x).fract() < 0.5 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Shape::ALL
            .into_iter()
            .find(|shape| shape.name() == s)
            .ok_or_else(|| {
                Error::invalid(
                    "shape",
                    format!("unknown shape {s:?}; expected one of diamond, saw, triangle, line, square"),
                )
            })
    }
}

/// Recipe for a dataset; regenerating it yields identical samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSpec {
    Gaussian { mu: f64, sigma: f64, n: usize, seed: u64 },
    Function { shape: Shape, n: usize, seed: u64 },
}

impl DatasetSpec {
    pub fn generate(&self) -> Result<Dataset> {
        match *self {
            DatasetSpec::Gaussian { mu, sigma, n, seed } => gen_gaussian(mu, sigma, n, seed),
            DatasetSpec::Function { shape, n, seed } => gen_function(shape, n, seed),
        }
    }

    /// Short human label, e.g. `N(10,1)` or `diamond`.
    pub fn label(&self) -> String {
        match self {
            DatasetSpec::Gaussian { mu, sigma, .. } => format!("N({mu},{sigma})"),
            DatasetSpec::Function { shape, .. } => shape.to_string(),
        }
    }

    pub fn n(&self) -> usize {
        match self {
            DatasetSpec::Gaussian { n, .. } | DatasetSpec::Function { n, .. } => *n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub spec: DatasetSpec,
    pub generator_version: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Absent for constant-target datasets.
    pub xs: Option<Vec<f64>>,
    pub ys: Vec<f64>,
    pub provenance: Provenance,
    y_bar: f64,
}

impl Dataset {
    fn new(xs: Option<Vec<f64>>, ys: Vec<f64>, spec: DatasetSpec) -> Self {
        let y_bar = ys.iter().sum::<f64>() / ys.len() as f64;
        Self {
            xs,
            ys,
            provenance: Provenance {
                spec,
                generator_version: GENERATOR_VERSION,
            },
            y_bar,
        }
    }

    pub fn n(&self) -> usize {
        self.ys.len()
    }

    /// Mean target `ȳ`.
    pub fn y_bar(&self) -> f64 {
        self.y_bar
    }

    /// Unbiased sample variance of the targets.
    pub fn y_variance(&self) -> f64 {
        let n = self.n() as f64;
        if self.n() < 2 {
            return 0.0;
        }
        self.ys.iter().map(|y| (y - self.y_bar).powi(2)).sum::<f64>() / (n - 1.0)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["x", "y"])?;
        for (i, y) in self.ys.iter().enumerate() {
            let x = self
                .xs
                .as_ref()
                .map(|xs| xs[i].to_string())
                .unwrap_or_default();
            w.write_record([x, y.to_string()])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::invalid("csv", e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Writes `<stem>.csv` and the `<stem>.json` provenance sidecar into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv_path = dir.join(format!("{stem}.csv"));
        let json_path = dir.join(format!("{stem}.json"));
        fs::write(&csv_path, self.to_csv()?).map_err(|e| Error::io(&csv_path, e))?;
        let sidecar = serde_json::json!({
            "provenance": self.provenance,
            "n": self.n(),
            "y_bar": self.y_bar,
        });
        fs::write(&json_path, serde_json::to_string_pretty(&sidecar)? + "\n")
            .map_err(|e| Error::io(&json_path, e))?;
        Ok((csv_path, json_path))
    }
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("dataset size", "n must be at least 1"));
    }
    Ok(())
}

/// `n` i.i.d. draws from `N(mu, sigma^2)`.
pub fn gen_gaussian(mu: f64, sigma: f64, n: usize, seed: u64) -> Result<Dataset> {
    check_n(n)?;
    if !sigma.is_finite() || sigma < 0.0 || !mu.is_finite() {
        return Err(Error::invalid(
            "gaussian parameters",
            format!("need finite mu and sigma >= 0, got mu = {mu}, sigma = {sigma}"),
        ));
    }
    let dist = Normal::new(mu, sigma).map_err(|e| Error::invalid("gaussian parameters", e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ys = (0..n).map(|_| rng.sample(dist)).collect();
    Ok(Dataset::new(None, ys, DatasetSpec::Gaussian { mu, sigma, n, seed }))
}

/// `n` points of `shape` with `x ~ U[0, 1]`.
pub fn gen_function(shape: Shape, n: usize, seed: u64) -> Result<Dataset> {
    check_n(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x: f64 = rng.random_range(0.0..=1.0);
        let u = if shape.is_noisy() {
            rng.random_range(-1.0..=1.0)
        } else {
            0.0
        };
        xs.push(x);
        ys.push(shape.sample(x, u));
    }
    Ok(Dataset::new(Some(xs), ys, DatasetSpec::Function { shape, n, seed }))
}
