//! End-to-end acceptance checks at full experiment scale.
//!
//! Each test prints one `[PASS]`/`[FAIL]` line; run with `--nocapture` to see
//! them. The single-layer runs take about half a minute each and the mlp runs
//! several minutes each, so the whole target takes a while on one core.
//! Expensive runs are shared between tests and written under the cargo target
//! tmp directory, next to a `summary.txt` of all verdict lines.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::sync::{Mutex, OnceLock};

use mcd_core::harness::{run_experiment, ExperimentConfig, RunReport};
use mcd_core::mc::{mc_sample, McRecord};
use mcd_core::nn::{backward_batch, forward_batch, init_network, LayerDef, MaskSet};
use mcd_core::theory::{enumerate_with_target, expected_mse, predict_moments, SingleLayerSpec};
use mcd_core::{DropoutSpec, MaskSource, NetworkDef, Shape};
use ndarray::ArrayView2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 1;

fn verdict(n: u32, ok: bool, detail: String) {
    let tag = if ok { "PASS" } else { "FAIL" };
    let line = format!("[{tag}] criterion {n}: {detail}");
    println!("{line}");
    append_summary(&line);
    assert!(ok, "criterion {n} failed: {detail}");
}

/// Verdict lines are also collected in `summary.txt`, since the test harness
/// hides the output of passing tests unless run with `--nocapture`.
fn append_summary(line: &str) {
    static FRESH: OnceLock<()> = OnceLock::new();
    let root = run_root();
    fs::create_dir_all(&root).unwrap();
    FRESH.get_or_init(|| {
        let _ = fs::remove_file(root.join("summary.txt"));
    });
    let mut f = fs::OpenOptions::new().create(true).append(true).open(root.join("summary.txt")).unwrap();
    writeln!(f, "{line}").unwrap();
}

fn run_root() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

/// Runs `cfg` once per process, keyed by its name.
fn shared_run(mut cfg: ExperimentConfig) -> RunReport {
    static RUNS: OnceLock<Mutex<HashMap<String, RunReport>>> = OnceLock::new();
    let runs = RUNS.get_or_init(Default::default);
    // Holding the lock while running serializes the heavy runs, which is what
    // we want on a small machine anyway.
    let mut guard = runs.lock().unwrap_or_else(|e| e.into_inner());
    let name = cfg.display_name();
    if let Some(r) = guard.get(&name) {
        return r.clone();
    }
    cfg.out_dir = run_root().join(&name);
    let report = run_experiment(&cfg).unwrap_or_else(|e| panic!("run {name} failed: {e}"));
    guard.insert(name, report.clone());
    report
}

fn single(p_d: f64, sigma: f64) -> RunReport {
    shared_run(ExperimentConfig::single_preset(p_d, sigma, SEED))
}

fn mlp(shape: Shape, p_d: f64, last_bias: bool) -> RunReport {
    shared_run(ExperimentConfig::mlp_preset(shape, p_d, last_bias, SEED))
}

fn mc_variance(r: &RunReport) -> f64 {
    r.single.as_ref().expect("single summary").mc_variance
}

fn mean_sigma(r: &RunReport) -> f64 {
    r.curve.as_ref().expect("curve summary").mean_sigma
}

fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

#[test]
fn criterion_01_theory_table() {
    let mut ok = true;
    let mut parts = vec![];
    for (p_d, w_exp, var_exp) in [(0.2, 0.025, 0.050), (0.5, 0.040, 0.199)] {
        let pred = predict_moments(&SingleLayerSpec::new(500, p_d, 10.0).unwrap()).unwrap();
        ok &= (round3(pred.w_opt) - w_exp).abs() <= 0.0005 && (round3(pred.var_f) - var_exp).abs() <= 0.0005;
        parts.push(format!("p_d={p_d}: w={:.5} var={:.5}", pred.w_opt, pred.var_f));
    }
    verdict(1, ok, parts.join("; "));
}

#[test]
fn criterion_02_enumeration_matches_closed_form() {
    let y_bar = 10.0;
    let mut worst = 0.0f64;
    for k in 1..=12 {
        for p_d in [0.1, 0.2, 0.5, 0.9] {
            let spec = SingleLayerSpec::new(k, p_d, y_bar).unwrap();
            let pred = predict_moments(&spec).unwrap();
            let weights = vec![pred.w_opt; k];
            let e = enumerate_with_target(p_d, &weights, Some(y_bar)).unwrap();
            let mse = expected_mse(&spec, pred.w_opt).unwrap();
            worst = worst
                .max((e.mean - pred.mean_f).abs())
                .max((e.variance - pred.var_f).abs())
                .max((e.mse.unwrap() - mse).abs());
        }
    }
    verdict(2, worst <= 1e-12, format!("max abs error {worst:.2e} over K 1..12 x 4 rates"));
}

#[test]
fn criterion_03_table_reproduction() {
    let mut ok = true;
    let mut parts = vec![];
    for p_d in [0.2, 0.5] {
        for sigma in [1.0, 10.0] {
            let r = single(p_d, sigma);
            let th = r.theory.as_ref().unwrap();
            let s = r.single.as_ref().unwrap();
            let w_rel = s.mean_weight / th.w - 1.0;
            let var_ratio = s.mc_variance / th.var_f;
            ok &= w_rel.abs() <= 0.05 && (0.9..=1.8).contains(&var_ratio);
            parts.push(format!(
                "p_d={p_d} sigma={sigma}: w={:.4} ({:+.1}%) var={:.4} ({var_ratio:.2}x)",
                s.mean_weight,
                100.0 * w_rel,
                s.mc_variance
            ));
        }
    }
    verdict(3, ok, parts.join("; "));
}

#[test]
fn criterion_04_variance_ignores_data_spread() {
    let mut ok = true;
    let mut parts = vec![];
    for p_d in [0.2, 0.5] {
        let low = single(p_d, 1.0);
        let high = single(p_d, 10.0);
        let ratio = mc_variance(&high) / mc_variance(&low);
        let data_ratio = high.dataset_variance.unwrap() / low.dataset_variance.unwrap();
        ok &= (0.7..=1.7).contains(&ratio);
        parts.push(format!("p_d={p_d}: Var[f] ratio {ratio:.2} (data variance ratio {data_ratio:.0})"));
    }
    verdict(4, ok, parts.join("; "));
}

#[test]
fn criterion_05_bias_collapses_variance() {
    let with_bias = mean_sigma(&mlp(Shape::Diamond, 0.5, true));
    let without = mean_sigma(&mlp(Shape::Diamond, 0.5, false));
    let ok = with_bias <= 0.02 && with_bias <= 0.1 * without;
    verdict(
        5,
        ok,
        format!("diamond p_d=0.5 mean sigma {with_bias:.4} with bias vs {without:.4} without ({:.1}%)", 100.0 * with_bias / without),
    );
}

#[test]
fn criterion_06_constant_variance_and_rate_order() {
    let low = mlp(Shape::Diamond, 0.2, false);
    let high = mlp(Shape::Diamond, 0.5, false);
    let cv = |r: &RunReport| r.curve.as_ref().unwrap().sigma_cv.unwrap_or(f64::INFINITY);
    let ok = cv(&low) < 0.25 && cv(&high) < 0.25 && mean_sigma(&high) > mean_sigma(&low);
    verdict(
        6,
        ok,
        format!(
            "sigma CV {:.3} (p_d=0.2), {:.3} (p_d=0.5); mean sigma {:.4} < {:.4}",
            cv(&low),
            cv(&high),
            mean_sigma(&low),
            mean_sigma(&high)
        ),
    );
}

#[test]
fn criterion_07_sigma_tracks_output_magnitude() {
    let mut ok = true;
    let mut parts = vec![];
    for shape in [Shape::Line, Shape::Triangle] {
        let r = mlp(shape, 0.2, false);
        let corr = r.curve.as_ref().unwrap().sigma_output_correlation.unwrap_or(f64::NAN);
        ok &= corr > 0.8;
        parts.push(format!("{shape}: pearson {corr:.3}"));
    }
    verdict(7, ok, parts.join("; "));
}

/// Random network with ReLU hidden blocks and dropout at random places.
fn random_network(rng: &mut ChaCha8Rng) -> NetworkDef {
    let input_dim = rng.random_range(1..=8);
    let blocks = rng.random_range(1..=3);
    let mut layers = vec![];
    let mut dim = input_dim;
    for b in 0..blocks {
        if rng.random_bool(0.5) {
            let p_d = rng.random_range(0.0..0.8);
            layers.push(LayerDef::Dropout(DropoutSpec::unscaled(p_d).unwrap()));
        }
        let last = b + 1 == blocks;
        let width = if last { rng.random_range(1..=3) } else { rng.random_range(1..=12) };
        layers.push(LayerDef::Dense {
            in_dim: dim,
            out_dim: width,
            has_bias: rng.random_bool(0.5),
        });
        if !last {
            layers.push(LayerDef::Relu);
        }
        dim = width;
    }
    NetworkDef::new(input_dim, layers).unwrap()
}

#[test]
fn criterion_08_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut probes = 0;
    let mut skipped = 0;
    while probes < 100 {
        let def = random_network(&mut rng);
        let mut state = init_network(&def, rng.random()).unwrap();
        let params: Vec<f64> = (0..state.num_params()).map(|_| rng.random_range(-1.0..1.0)).collect();
        state.set_flat(&params).unwrap();
        let x: Vec<f64> = (0..def.input_dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let up: Vec<f64> = (0..def.output_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let masks = MaskSet::draw(&def, &mut MaskSource::new(rng.random())).unwrap();
        let x_view = ArrayView2::from_shape((1, x.len()), &x[..]).unwrap();
        let up_view = ArrayView2::from_shape((1, up.len()), &up[..]).unwrap();
        let objective = |s: &mcd_core::NetworkState| -> f64 {
            let tape = forward_batch(s, &def, x_view, masks.to_factors(&def).unwrap()).unwrap();
            tape.output().iter().zip(&up).map(|(a, b)| a * b).sum()
        };
        let tape = forward_batch(&state, &def, x_view, masks.to_factors(&def).unwrap()).unwrap();
        // Finite differences are meaningless across a ReLU kink.
        let kink = def
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, LayerDef::Relu))
            .flat_map(|(i, _)| tape.layer_input(i).iter().map(|v| v.abs()).collect::<Vec<_>>())
            .fold(f64::INFINITY, f64::min);
        if kink < 1e-3 {
            skipped += 1;
            continue;
        }
        let grad = backward_batch(&state, &def, &tape, up_view).unwrap().to_flat();
        for i in 0..params.len() {
            let mut s = state.clone();
            let mut p = params.clone();
            p[i] += h;
            s.set_flat(&p).unwrap();
            let plus = objective(&s);
            p[i] -= 2.0 * h;
            s.set_flat(&p).unwrap();
            let minus = objective(&s);
            let fd = (plus - minus) / (2.0 * h);
            let rel = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-3);
            worst = worst.max(rel);
        }
        probes += 1;
    }
    verdict(
        8,
        worst < 1e-4,
        format!("max relative error {worst:.2e} over {probes} probes ({skipped} near-kink draws skipped)"),
    );
}

#[test]
fn criterion_09_mc_consistency() {
    let (k, p_d, w) = (500, 0.5, 0.04);
    let def = NetworkDef::single_layer(k, DropoutSpec::unscaled(p_d).unwrap()).unwrap();
    let mut state = init_network(&def, 0).unwrap();
    state.layers[0].weight.fill(w);
    let p = 1.0 - p_d;
    let q = p_d;
    let kf = k as f64;
    let mean = w * kf * p;
    let var = w * w * kf * p * q;
    // Fourth central moment of w * Binomial(K, p).
    let mu4 = w.powi(4) * kf * p * q * (1.0 + 3.0 * (kf - 2.0) * p * q);
    let input = vec![1.0; k];
    let source = MaskSource::new(9);
    let mut ok = true;
    let mut parts = vec![];
    let mut last: Option<McRecord> = None;
    for s in [1_000usize, 10_000, 100_000, 1_000_000] {
        let r = mc_sample(&def, &state, &input, s, &source).unwrap();
        let z_mean = (r.sample_mean - mean) / (var / s as f64).sqrt();
        ok &= z_mean.abs() < 4.0;
        parts.push(format!("S={s}: z_mean {z_mean:+.2}"));
        last = Some(r);
    }
    let r = last.unwrap();
    let s = 1e6;
    let se_var = ((mu4 - var * var * (s - 3.0) / (s - 1.0)) / s).sqrt();
    let z_var = (r.sample_variance - var) / se_var;
    ok &= z_var.abs() < 4.0;
    parts.push(format!("S=1e6: z_var {z_var:+.2}"));
    verdict(9, ok, parts.join("; "));
}

#[test]
fn criterion_10_reruns_are_byte_identical() {
    let mut cfgs = vec![ExperimentConfig::single_preset(0.2, 1.0, SEED)];
    let mut small_mlp = ExperimentConfig::mlp_preset(Shape::Triangle, 0.2, false, SEED);
    small_mlp.train.epochs = 5;
    small_mlp.name = Some("triangle_short".into());
    cfgs.push(small_mlp);
    let mut compared = 0;
    let mut mismatched = vec![];
    for cfg in cfgs {
        let name = cfg.display_name();
        let first = shared_run(cfg.clone());
        let mut again = cfg;
        again.out_dir = run_root().join(format!("{name}_rerun"));
        let second = run_experiment(&again).unwrap();
        let dir_a = run_root().join(&name);
        for file in [&first.files.dataset, &first.files.loss_trace, &first.files.mc_csv, &first.files.histogram]
            .into_iter()
            .flatten()
        {
            compared += 1;
            let a = fs::read(dir_a.join(file)).unwrap();
            let b = fs::read(again.out_dir.join(file)).unwrap();
            if a != b {
                mismatched.push(format!("{name}/{file}"));
            }
        }
        if first.config_hash != second.config_hash {
            mismatched.push(format!("{name} config hash"));
        }
    }
    verdict(
        10,
        mismatched.is_empty() && compared >= 7,
        format!("{compared} CSV files compared, mismatches: {mismatched:?}"),
    );
}

#[test]
fn single_layer_weights_homogenize_on_low_noise_data() {
    let mut parts = vec![];
    let mut ok = true;
    for p_d in [0.2, 0.5] {
        let cv = single(p_d, 1.0).single.unwrap().weight_cv;
        ok &= cv < 0.15;
        parts.push(format!("p_d={p_d}: weight CV {cv:.3}"));
    }
    let tag = if ok { "PASS" } else { "FAIL" };
    let line = format!("[{tag}] weight homogenization (sigma=1): {}", parts.join("; "));
    println!("{line}");
    append_summary(&line);
    assert!(ok);
}
