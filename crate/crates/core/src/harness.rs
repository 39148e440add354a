//! Experiment configs, runners and reports.
//!
//! A run reads an [`ExperimentConfig`] (TOML), generates its dataset, trains the
//! network, draws Monte-Carlo samples and writes everything into the run's output
//! directory:
//!
//! | file                | contents                                          |
//! |---------------------|---------------------------------------------------|
//! | `dataset.csv/.json` | training data and its provenance                  |
//! | `loss_trace.csv`    | `epoch,mean_loss`                                 |
//! | `network.json`      | trained [`NetworkDocument`]                       |
//! | `mc.csv`            | `x,mean,sigma` per evaluation point               |
//! | `mc.json`           | full [`McResult`]                                 |
//! | `histogram.csv`     | `output,density` of the sampled outputs (single)  |
//! | `report.json`       | [`RunReport`]                                     |
//! | `run_metadata.json` | config, config hash and code version              |
//!
//! CSV files depend only on the config, so identical configs give byte-identical
//! CSV output. Timing lives in the JSON report only.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datasets::{Dataset, DatasetSpec, Shape};
use crate::dropout::{DropoutSpec, MaskSource, Scaling};
use crate::error::{Error, Result};
use crate::mc::{self, McResult};
use crate::nn::{init_network, NetworkDef, NetworkState};
use crate::optim::{train, AdamConfig, LossTrace, TrainConfig};
use crate::theory::{predict_moments, SingleLayerSpec};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Default hidden widths of the non-linear network.
pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];
pub const DEFAULT_UNITS: usize = 500;
pub const DEFAULT_GRID_POINTS: usize = 101;
const HISTOGRAM_BINS: usize = 100;

/// Adam step size for the single-layer scenario. At 1e-3 the minibatch noise of
/// `N(10, 10^2)` targets keeps the 500 weights from settling near a common value.
pub const SINGLE_LEARNING_RATE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// `K` parallel units with constant input and one dropout layer.
    Single,
    /// Scalar-in, scalar-out ReLU network.
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    /// Unit count `K` of the single-layer model.
    #[serde(default = "default_units")]
    pub units: usize,
    /// Hidden widths of the mlp.
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    /// Bias on the final dense layer (mlp only).
    #[serde(default)]
    pub last_bias: bool,
}

fn default_units() -> usize {
    DEFAULT_UNITS
}

fn default_hidden() -> Vec<usize> {
    DEFAULT_HIDDEN.to_vec()
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self {
            units: DEFAULT_UNITS,
            hidden: DEFAULT_HIDDEN.to_vec(),
            last_bias: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub init: u64,
    pub train_masks: u64,
    pub shuffle: u64,
    pub mc: u64,
}

impl Seeds {
    /// Distinct seeds derived from one master seed.
    pub fn from_master(seed: u64) -> Self {
        let src = MaskSource::new(seed);
        let pick = |i| {
            let mut s = src.split(i);
            // first 64 mask bits of the child stream, as a seed
            let bits = s.draw_mask(&DropoutSpec { p_d: 0.5, scaling: Scaling::None }, 64).expect("valid spec");
            bits.iter().fold(0u64, |acc, &b| (acc << 1) | u64::from(b))
        };
        Self {
            init: pick(0),
            train_masks: pick(1),
            shuffle: pick(2),
            mc: pick(3),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub scenario: Scenario,
    pub p_d: f64,
    #[serde(default)]
    pub scaling: Scaling,
    /// Monte-Carlo samples per evaluation point.
    pub samples: usize,
    /// Evaluation grid size (mlp only).
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    pub out_dir: PathBuf,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub network: NetworkSpec,
    pub train: TrainConfig,
    #[serde(default)]
    pub adam: AdamConfig,
    pub seeds: Seeds,
}

fn default_grid_points() -> usize {
    DEFAULT_GRID_POINTS
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is representable as TOML")
    }

    /// One row of the single-layer table: `K = 500`, `n = 3200`, 600 epochs,
    /// `10^6` samples, targets `N(10, sigma^2)`, Adam at [`SINGLE_LEARNING_RATE`].
    pub fn single_preset(p_d: f64, sigma: f64, seed: u64) -> Self {
        Self {
            name: Some(format!("single_{p_d}_{sigma}")),
            scenario: Scenario::Single,
            p_d,
            scaling: Scaling::None,
            samples: 1_000_000,
            grid_points: DEFAULT_GRID_POINTS,
            out_dir: PathBuf::from(format!("runs/single_{p_d}_{sigma}")),
            dataset: DatasetSpec::Gaussian {
                mu: 10.0,
                sigma,
                n: 3200,
                seed,
            },
            network: NetworkSpec::default(),
            train: TrainConfig::new(600, 32, 0),
            adam: AdamConfig {
                learning_rate: SINGLE_LEARNING_RATE,
                ..AdamConfig::default()
            },
            seeds: Seeds::from_master(seed),
        }
        .with_shuffle_seed()
    }

    /// Non-linear run: 32000 samples of `shape`, 1000 epochs, 300 samples on a
    /// 101-point grid.
    pub fn mlp_preset(shape: Shape, p_d: f64, last_bias: bool, seed: u64) -> Self {
        let tag = if last_bias { "bias" } else { "nobias" };
        Self {
            name: Some(format!("{shape}_{p_d}_{tag}")),
            scenario: Scenario::Mlp,
            p_d,
            scaling: Scaling::None,
            samples: 300,
            grid_points: DEFAULT_GRID_POINTS,
            out_dir: PathBuf::from(format!("runs/{shape}_{p_d}_{tag}")),
            dataset: DatasetSpec::Function {
                shape,
                n: 32_000,
                seed,
            },
            network: NetworkSpec {
                last_bias,
                ..NetworkSpec::default()
            },
            train: TrainConfig::new(1000, 32, 0),
            adam: AdamConfig::default(),
            seeds: Seeds::from_master(seed),
        }
        .with_shuffle_seed()
    }

    fn with_shuffle_seed(mut self) -> Self {
        self.train.shuffle_seed = self.seeds.shuffle;
        self
    }

    /// Replaces every seed (dataset included) with ones derived from `seed`.
    pub fn reseed(&mut self, seed: u64) {
        self.seeds = Seeds::from_master(seed);
        self.train.shuffle_seed = self.seeds.shuffle;
        match &mut self.dataset {
            DatasetSpec::Gaussian { seed: s, .. } | DatasetSpec::Function { seed: s, .. } => *s = seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        DropoutSpec::new(self.p_d, self.scaling)?;
        self.train.validate()?;
        self.adam.validate()?;
        if self.samples < 2 {
            return Err(Error::invalid("samples", "at least 2 Monte-Carlo samples are required"));
        }
        if self.dataset.n() == 0 {
            return Err(Error::invalid("dataset", "n must be at least 1"));
        }
        match (self.scenario, &self.dataset) {
            (Scenario::Single, DatasetSpec::Function { .. }) => {
                return Err(Error::invalid("config", "scenario single needs a gaussian dataset"))
            }
            (Scenario::Mlp, DatasetSpec::Gaussian { .. }) => {
                return Err(Error::invalid("config", "scenario mlp needs a function dataset"))
            }
            _ => {}
        }
        if self.scenario == Scenario::Mlp && self.grid_points == 0 {
            return Err(Error::invalid("grid_points", "must be at least 1"));
        }
        self.network_def().map(|_| ())
    }

    pub fn network_def(&self) -> Result<NetworkDef> {
        let dropout = DropoutSpec::new(self.p_d, self.scaling)?;
        match self.scenario {
            Scenario::Single => NetworkDef::single_layer(self.network.units, dropout),
            Scenario::Mlp => NetworkDef::mlp(&self.network.hidden, dropout, self.network.last_bias),
        }
    }

    /// SHA-256 of the config's canonical JSON form, leaving out `out_dir`
    /// (where results go does not change them).
    pub fn config_hash(&self) -> String {
        let mut canonical = serde_json::to_value(self).expect("config serializes");
        canonical.as_object_mut().expect("config is a struct").remove("out_dir");
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        Sha256::digest(&bytes).iter().fold(String::with_capacity(64), |mut s, b| {
            write!(s, "{b:02x}").expect("writing to a String");
            s
        })
    }

    pub fn display_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            format!("{:?}_{}_{}", self.scenario, self.dataset.label(), self.p_d).to_lowercase()
        })
    }
}

/// Network definition plus trained parameters, as stored in `network.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkDocument {
    pub def: NetworkDef,
    pub state: NetworkState,
}

impl NetworkDocument {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc: Self = serde_json::from_str(&text)?;
        doc.def.validate()?;
        doc.state.check_against(&doc.def)?;
        Ok(doc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryColumns {
    /// `ȳ` the prediction is evaluated at (the generating mean).
    pub y_bar: f64,
    pub w: f64,
    pub mean_f: f64,
    pub var_f: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleSummary {
    /// Mean of the `K` learned weights.
    pub mean_weight: f64,
    /// `std(w_k) / |mean(w_k)|`.
    pub weight_cv: f64,
    pub mc_mean: f64,
    pub mc_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub grid_points: usize,
    /// Grid average of `σ(x)`.
    pub mean_sigma: f64,
    /// Coefficient of variation of `σ(x)` over the grid.
    pub sigma_cv: Option<f64>,
    /// Pearson correlation of `σ(x)` with `|mean(x)|`.
    pub sigma_output_correlation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunFiles {
    pub dataset: Option<String>,
    pub loss_trace: Option<String>,
    pub network: Option<String>,
    pub mc_csv: Option<String>,
    pub mc_json: Option<String>,
    pub histogram: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub scenario: Scenario,
    pub status: RunStatus,
    pub error: Option<String>,
    pub p_d: f64,
    pub dataset: String,
    pub dataset_y_bar: Option<f64>,
    pub dataset_variance: Option<f64>,
    pub last_bias: Option<bool>,
    pub theory: Option<TheoryColumns>,
    pub single: Option<SingleSummary>,
    pub curve: Option<CurveSummary>,
    pub final_loss: Option<f64>,
    pub samples: usize,
    pub seeds: Seeds,
    /// File names relative to the run directory.
    pub files: RunFiles,
    pub config_hash: String,
    pub code_version: String,
    pub wall_clock_secs: f64,
}

impl RunReport {
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() { path.join("report.json") } else { path.to_path_buf() };
        let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<String> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(name.to_string())
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<String> {
    write_file(dir, name, &(serde_json::to_string_pretty(value)? + "\n"))
}

/// Output of the training phase of a run.
#[derive(Debug, Clone)]
pub struct Trained {
    pub def: NetworkDef,
    pub dataset: Dataset,
    pub state: NetworkState,
    pub trace: LossTrace,
}

/// Generates the dataset and trains the configured network. Writes nothing.
pub fn train_phase(cfg: &ExperimentConfig) -> Result<Trained> {
    cfg.validate()?;
    let def = cfg.network_def()?;
    let dataset = cfg.dataset.generate()?;
    let init = init_network(&def, cfg.seeds.init)?;
    let mut masks = MaskSource::new(cfg.seeds.train_masks);
    let (state, trace) = train(&def, &init, &dataset, &cfg.train, &cfg.adam, &mut masks)?;
    Ok(Trained {
        def,
        dataset,
        state,
        trace,
    })
}

struct RunContext {
    dir: PathBuf,
    started: Instant,
    report: RunReport,
}

impl RunContext {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let dir = cfg.out_dir.clone();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let metadata = serde_json::json!({
            "config": cfg,
            "config_hash": cfg.config_hash(),
            "code_version": CODE_VERSION,
        });
        write_json(&dir, "run_metadata.json", &metadata)?;
        let report = RunReport {
            name: cfg.display_name(),
            scenario: cfg.scenario,
            status: RunStatus::Failed,
            error: None,
            p_d: cfg.p_d,
            dataset: cfg.dataset.label(),
            dataset_y_bar: None,
            dataset_variance: None,
            last_bias: (cfg.scenario == Scenario::Mlp).then_some(cfg.network.last_bias),
            theory: None,
            single: None,
            curve: None,
            final_loss: None,
            samples: cfg.samples,
            seeds: cfg.seeds,
            files: RunFiles::default(),
            config_hash: cfg.config_hash(),
            code_version: CODE_VERSION.to_string(),
            wall_clock_secs: 0.0,
        };
        Ok(Self {
            dir,
            started: Instant::now(),
            report,
        })
    }

    fn record_training(&mut self, trained: &Trained) -> Result<()> {
        let r = &mut self.report;
        r.dataset_y_bar = Some(trained.dataset.y_bar());
        r.dataset_variance = Some(trained.dataset.y_variance());
        r.final_loss = trained.trace.last();
        trained.dataset.write(&self.dir, "dataset")?;
        r.files.dataset = Some("dataset.csv".into());
        r.files.loss_trace = Some(write_file(&self.dir, "loss_trace.csv", &trained.trace.to_csv())?);
        let doc = NetworkDocument {
            def: trained.def.clone(),
            state: trained.state.clone(),
        };
        r.files.network = Some(write_json(&self.dir, "network.json", &doc)?);
        Ok(())
    }

    fn record_mc(&mut self, result: &McResult) -> Result<()> {
        self.report.files.mc_csv = Some(write_file(&self.dir, "mc.csv", &result.to_csv())?);
        self.report.files.mc_json = Some(write_json(&self.dir, "mc.json", result)?);
        Ok(())
    }

    /// Writes `report.json`; on failure the error is recorded and returned.
    fn finish(mut self, outcome: Result<()>) -> Result<RunReport> {
        self.report.wall_clock_secs = self.started.elapsed().as_secs_f64();
        let err = match outcome {
            Ok(()) => {
                self.report.status = RunStatus::Ok;
                None
            }
            Err(e) => {
                self.report.status = RunStatus::Failed;
                self.report.error = Some(e.to_string());
                Some(e)
            }
        };
        write_json(&self.dir, "report.json", &self.report)?;
        match err {
            None => Ok(self.report),
            Some(e) => Err(e),
        }
    }
}

fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Pearson correlation; `None` when either side has zero spread.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ma, sa) = mean_and_std(a);
    let (mb, sb) = mean_and_std(b);
    if sa == 0.0 || sb == 0.0 {
        return None;
    }
    let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / a.len() as f64;
    Some(cov / (sa * sb))
}

/// Coefficient of variation `std / |mean|`; `None` for a zero mean.
pub fn coefficient_of_variation(values: &[f64]) -> Option<f64> {
    let (m, s) = mean_and_std(values);
    (m != 0.0).then(|| s / m.abs())
}

pub fn summarize_curve(result: &McResult) -> CurveSummary {
    let sigmas = result.sigmas();
    let abs_means: Vec<f64> = result.means().iter().map(|m| m.abs()).collect();
    CurveSummary {
        grid_points: sigmas.len(),
        mean_sigma: mean_and_std(&sigmas).0,
        sigma_cv: coefficient_of_variation(&sigmas),
        sigma_output_correlation: pearson(&sigmas, &abs_means),
    }
}

/// Single-layer run: train `K` units on constant-target data, sample the output
/// distribution, and set the result beside the closed-form prediction.
pub fn run_single(cfg: &ExperimentConfig) -> Result<RunReport> {
    if cfg.scenario != Scenario::Single {
        return Err(Error::invalid("scenario", "run_single needs scenario = single"));
    }
    let mut ctx = RunContext::new(cfg)?;
    let y_nominal = match cfg.dataset {
        DatasetSpec::Gaussian { mu, .. } => mu,
        DatasetSpec::Function { .. } => unreachable!("validated"),
    };
    let theory = predict_moments(&SingleLayerSpec::new(cfg.network.units, cfg.p_d, y_nominal)?)?;
    ctx.report.theory = Some(TheoryColumns {
        y_bar: y_nominal,
        w: theory.w_opt,
        mean_f: theory.mean_f,
        var_f: theory.var_f,
    });
    let outcome = (|| {
        let trained = train_phase(cfg)?;
        ctx.record_training(&trained)?;
        let input = vec![1.0; cfg.network.units];
        let source = MaskSource::new(cfg.seeds.mc);
        let record = mc::mc_sample(&trained.def, &trained.state, &input, cfg.samples, &source)?;
        let result = McResult {
            records: vec![record],
            samples: cfg.samples,
            seed: cfg.seeds.mc,
        };
        ctx.record_mc(&result)?;

        let sigma = record.bands.sigma;
        let range = if sigma > 0.0 {
            (record.sample_mean - 5.0 * sigma, record.sample_mean + 5.0 * sigma)
        } else {
            (record.sample_mean - 0.5, record.sample_mean + 0.5)
        };
        let hist = mc::mc_histogram(&trained.def, &trained.state, &input, cfg.samples, &source, range, HISTOGRAM_BINS)?;
        let mut csv = String::from("output,density\n");
        for (c, d) in hist {
            writeln!(csv, "{c},{d}").expect("writing to a String");
        }
        ctx.report.files.histogram = Some(write_file(&ctx.dir, "histogram.csv", &csv)?);

        let weights: Vec<f64> = trained.state.layers[0].weight.iter().copied().collect();
        let (mean_w, std_w) = mean_and_std(&weights);
        ctx.report.single = Some(SingleSummary {
            mean_weight: mean_w,
            weight_cv: std_w / mean_w.abs(),
            mc_mean: record.sample_mean,
            mc_variance: record.sample_variance,
        });
        Ok(())
    })();
    ctx.finish(outcome)
}

/// Non-linear run: train the mlp on a function dataset and record the MC
/// mean and σ bands over an evenly spaced grid on `[0, 1]`.
pub fn run_mlp(cfg: &ExperimentConfig) -> Result<RunReport> {
    if cfg.scenario != Scenario::Mlp {
        return Err(Error::invalid("scenario", "run_mlp needs scenario = mlp"));
    }
    let mut ctx = RunContext::new(cfg)?;
    let outcome = (|| {
        let trained = train_phase(cfg)?;
        ctx.record_training(&trained)?;
        let grid = mc::unit_grid(cfg.grid_points);
        let source = MaskSource::new(cfg.seeds.mc);
        let result = mc::mc_curve(&trained.def, &trained.state, &grid, cfg.samples, &source, cfg.seeds.mc)?;
        ctx.record_mc(&result)?;
        ctx.report.curve = Some(summarize_curve(&result));
        Ok(())
    })();
    ctx.finish(outcome)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    match cfg.scenario {
        Scenario::Single => run_single(cfg),
        Scenario::Mlp => run_mlp(cfg),
    }
}

/// Tabulated reports as CSV and aligned text.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub csv: String,
    pub text: String,
}

fn fmt3(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into())
}

/// Single-layer reports give `p_d, dataset, w_theory, var_theory, w_exp, var_exp`;
/// mlp reports give the curve summary. Scenarios cannot be mixed.
pub fn report_table(reports: &[RunReport]) -> Result<Table> {
    let first = reports
        .first()
        .ok_or_else(|| Error::invalid("reports", "at least one report is required"))?;
    if reports.iter().any(|r| r.scenario != first.scenario) {
        return Err(Error::invalid("reports", "cannot tabulate single and mlp runs together"));
    }
    let (header, rows): (Vec<&str>, Vec<Vec<String>>) = match first.scenario {
        Scenario::Single => (
            vec!["p_d", "dataset", "w_theory", "var_theory", "w_exp", "var_exp"],
            reports
                .iter()
                .map(|r| {
                    vec![
                        r.p_d.to_string(),
                        r.dataset.clone(),
                        fmt3(r.theory.as_ref().map(|t| t.w)),
                        fmt3(r.theory.as_ref().map(|t| t.var_f)),
                        fmt3(r.single.as_ref().map(|s| s.mean_weight)),
                        fmt3(r.single.as_ref().map(|s| s.mc_variance)),
                    ]
                })
                .collect(),
        ),
        Scenario::Mlp => (
            vec!["p_d", "dataset", "last_bias", "mean_sigma", "sigma_cv", "sigma_output_corr"],
            reports
                .iter()
                .map(|r| {
                    let c = r.curve.as_ref();
                    vec![
                        r.p_d.to_string(),
                        r.dataset.clone(),
                        r.last_bias.map(|b| b.to_string()).unwrap_or_else(|| "-".into()),
                        fmt3(c.map(|c| c.mean_sigma)),
                        fmt3(c.and_then(|c| c.sigma_cv)),
                        fmt3(c.and_then(|c| c.sigma_output_correlation)),
                    ]
                })
                .collect(),
        ),
    };

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header)?;
    for row in &rows {
        w.write_record(row)?;
    }
    let csv = String::from_utf8(w.into_inner().map_err(|e| Error::invalid("csv", e.to_string()))?)
        .expect("csv output is utf-8");

    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let mut text = String::new();
    let line = |cells: Vec<&str>, text: &mut String| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        writeln!(text, "{}", padded.join("  ").trim_end()).expect("writing to a String");
    };
    line(header.clone(), &mut text);
    writeln!(text, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)))
        .expect("writing to a String");
    for row in &rows {
        line(row.iter().map(String::as_str).collect(), &mut text);
    }
    Ok(Table { csv, text })
}
