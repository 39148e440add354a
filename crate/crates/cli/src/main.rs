//! `mcdlab`: generate data, train dropout networks, sample their predictive
//! distributions and tabulate experiment reports.
//!
//! Every subcommand prints a JSON summary on success. On failure it exits with
//! status 1 (2 for usage errors) and prints `{"error": {"kind", "message"}}` to
//! stderr.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use mcd_core::harness::{self, ExperimentConfig, NetworkDocument, RunReport};
use mcd_core::mc::{self, McResult};
use mcd_core::theory::{predict_moments, SingleLayerSpec};
use mcd_core::{gen_function, gen_gaussian, Error, MaskSource, Shape};

#[derive(Parser)]
#[command(name = "mcdlab", version, about = "Monte-Carlo dropout uncertainty laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset as CSV plus a JSON provenance sidecar.
    GenData(GenDataArgs),
    /// Print the closed-form single-layer prediction as JSON.
    Theory(TheoryArgs),
    /// Train the network described by an experiment config.
    Train(RunArgs),
    /// Monte-Carlo evaluation of a trained network.
    McEval(McEvalArgs),
    /// Run a full experiment from a TOML config.
    Run(RunArgs),
    /// Tabulate the reports of finished runs.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Function dataset shape (diamond, saw, triangle, line, square).
    #[arg(long, conflicts_with = "gaussian")]
    shape: Option<String>,
    /// Constant-target Gaussian dataset instead of a function dataset.
    #[arg(long)]
    gaussian: bool,
    #[arg(long, default_value_t = 10.0)]
    mu: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 3200)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// File stem of the outputs.
    #[arg(long, default_value = "dataset")]
    name: String,
}

#[derive(Args)]
struct TheoryArgs {
    /// Unit count K.
    #[arg(short = 'k', long = "units")]
    units: usize,
    /// Dropout rate p_d.
    #[arg(long = "p-d")]
    p_d: f64,
    /// Target mean ȳ.
    #[arg(long = "y-bar")]
    y_bar: f64,
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
    /// Master seed; replaces every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Monte-Carlo samples per evaluation point.
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Args)]
struct McEvalArgs {
    /// `network.json` written by `train` or `run`.
    network: PathBuf,
    #[arg(long, default_value_t = 300)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Evenly spaced grid on [0, 1] (scalar-input networks).
    #[arg(long, conflicts_with = "x")]
    grid: Option<usize>,
    /// Explicit evaluation points (scalar-input networks).
    #[arg(long, num_args = 1..)]
    x: Vec<f64>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directories (or report.json files).
    #[arg(required = true)]
    dirs: Vec<PathBuf>,
    /// Also write table.csv and table.txt here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn write(path: &Path, contents: &str) -> Result<(), Error> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.into(), source: e })?;
    }
    fs::write(path, contents).map_err(|e| Error::Io { path: path.into(), source: e })
}

fn load_config(args: &RunArgs) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.reseed(seed);
    }
    if let Some(dir) = &args.out_dir {
        cfg.out_dir = dir.clone();
    }
    if let Some(s) = args.samples {
        cfg.samples = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn gen_data(args: GenDataArgs) -> Result<Value, Error> {
    let dataset = match (&args.shape, args.gaussian) {
        (Some(shape), _) => gen_function(shape.parse::<Shape>()?, args.n, args.seed)?,
        (None, true) => gen_gaussian(args.mu, args.sigma, args.n, args.seed)?,
        (None, false) => {
            return Err(Error::Validation {
                what: "gen-data".into(),
                reason: "pass --shape <name> or --gaussian".into(),
            })
        }
    };
    let (csv, sidecar) = dataset.write(&args.out_dir, &args.name)?;
    Ok(json!({
        "csv": csv,
        "provenance": sidecar,
        "n": dataset.n(),
        "y_bar": dataset.y_bar(),
    }))
}

fn theory(args: TheoryArgs) -> Result<Value, Error> {
    let spec = SingleLayerSpec::new(args.units, args.p_d, args.y_bar)?;
    let pred = predict_moments(&spec)?;
    Ok(json!({
        "units": spec.units,
        "p_d": spec.p_d,
        "y_bar": spec.y_bar,
        "w_opt": pred.w_opt,
        "mean_f": pred.mean_f,
        "var_f": pred.var_f,
    }))
}

fn train(args: RunArgs) -> Result<Value, Error> {
    let cfg = load_config(&args)?;
    let trained = harness::train_phase(&cfg)?;
    let dir = &cfg.out_dir;
    trained.dataset.write(dir, "dataset")?;
    write(&dir.join("loss_trace.csv"), &trained.trace.to_csv())?;
    let doc = NetworkDocument {
        def: trained.def,
        state: trained.state,
    };
    write(&dir.join("network.json"), &(serde_json::to_string_pretty(&doc)? + "\n"))?;
    Ok(json!({
        "out_dir": dir,
        "epochs": trained.trace.epoch_losses.len(),
        "final_loss": trained.trace.last(),
        "config_hash": cfg.config_hash(),
    }))
}

fn mc_eval(args: McEvalArgs) -> Result<Value, Error> {
    let doc = NetworkDocument::load(&args.network)?;
    let source = MaskSource::new(args.seed);
    let result = if doc.def.input_dim == 1 {
        let xs = if args.x.is_empty() {
            mc::unit_grid(args.grid.unwrap_or(harness::DEFAULT_GRID_POINTS))
        } else {
            args.x.clone()
        };
        mc::mc_curve(&doc.def, &doc.state, &xs, args.samples, &source, args.seed)?
    } else {
        if args.grid.is_some() || !args.x.is_empty() {
            return Err(Error::Validation {
                what: "mc-eval".into(),
                reason: "--grid/--x need a scalar-input network; multi-input networks are fed constant ones".into(),
            });
        }
        let input = vec![1.0; doc.def.input_dim];
        let record = mc::mc_sample(&doc.def, &doc.state, &input, args.samples, &source)?;
        McResult {
            records: vec![record],
            samples: args.samples,
            seed: args.seed,
        }
    };
    write(&args.out_dir.join("mc.csv"), &result.to_csv())?;
    write(&args.out_dir.join("mc.json"), &(serde_json::to_string_pretty(&result)? + "\n"))?;
    Ok(json!({
        "out_dir": args.out_dir,
        "points": result.records.len(),
        "samples": result.samples,
        "summary": harness::summarize_curve(&result),
    }))
}

fn run(args: RunArgs) -> Result<Value, Error> {
    let cfg = load_config(&args)?;
    let report = harness::run_experiment(&cfg)?;
    Ok(serde_json::to_value(report)?)
}

fn report(args: ReportArgs) -> Result<Value, Error> {
    let reports = args
        .dirs
        .iter()
        .map(|d| RunReport::load(d))
        .collect::<Result<Vec<_>, _>>()?;
    let table = harness::report_table(&reports)?;
    eprint!("{}", table.text);
    if let Some(dir) = &args.out_dir {
        write(&dir.join("table.csv"), &table.csv)?;
        write(&dir.join("table.txt"), &table.text)?;
    }
    Ok(json!({ "rows": reports.len(), "csv": table.csv }))
}

fn fail(kind: &str, message: &str, code: u8) -> ExitCode {
    eprintln!("{}", json!({ "error": { "kind": kind, "message": message } }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.to_string().trim(), 2),
    };
    let outcome = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Theory(a) => theory(a),
        Command::Train(a) => train(a),
        Command::McEval(a) => mc_eval(a),
        Command::Run(a) => run(a),
        Command::Report(a) => report(a),
    };
    match outcome {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("json value serializes"));
            ExitCode::SUCCESS
        }
        Err(e) => fail(e.kind(), &e.to_string(), 1),
    }
}
