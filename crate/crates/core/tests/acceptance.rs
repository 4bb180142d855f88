//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Runs without the libtest harness so every criterion reports even when an
//! earlier one fails. Pass criterion numbers as arguments to run a subset:
//! `cargo test -p wsram --test acceptance -- 3 4`. Criterion 5 needs
//! `WSRAM_MNIST_DIR` (see README) and is skipped otherwise.

use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use rand::Rng;

use wsram::diffnet::{finite_difference_gradient, Activation, Layer, LayerKind, LayerSpec, LayoutBuilder};
use wsram::estimators::{estimate_example, EstimatorSettings, EstimatorTag};
use wsram::glimpse::{ActionSpace, Environment, GlimpseSensor, Image, ToyWorld};
use wsram::model::checkpoint::Checkpoint;
use wsram::model::{AttentionModel, GlimpseModel, ModelShape, Sampler, ThetaCoefficients};
use wsram::oracle::run_identity_suite;
use wsram::rng::{rollout_index, substream};
use wsram::training::{
    diagnose, evaluate, model_shape, read_metrics, DataKind, ExampleSource, ExperimentConfig, ExperimentData, Trainer,
};

type Outcome = Result<String, String>;

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit_secs: u64, detail: String) -> Outcome {
    if elapsed.as_secs_f64() < limit_secs as f64 {
        Ok(detail)
    } else {
        Err(format!(
            "{detail}; took {:.0}s, limit {limit_secs}s",
            elapsed.as_secs_f64()
        ))
    }
}

// ---------------------------------------------------------------- 1

fn oracle_suite() -> Outcome {
    let start = Instant::now();
    let report = run_identity_suite(50, 0, None).map_err(|e| e.to_string())?;
    let failed: Vec<_> = report.results.iter().filter(|r| !r.passed).collect();
    let identities = report.identities().len();
    let detail = format!("{identities} identities × 50 worlds, {} failures", failed.len());
    if !failed.is_empty() || identities < 8 {
        let first = failed
            .first()
            .map(|r| format!(" (first: {} at world seed {})", r.identity, r.world_seed));
        return Err(detail + &first.unwrap_or_default());
    }
    within(start.elapsed(), 120, detail)
}

// ---------------------------------------------------------------- 2

const FD_POINTS: u64 = 100;
const FD_STEP: f64 = 1e-6;
const FD_TOL: f64 = 1e-4;

/// `‖analytic − numeric‖∞ / max(‖numeric‖∞, 1e-6)`.
fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = numeric.iter().map(|n| n.abs()).fold(0.0, f64::max).max(1e-6);
    diff / scale
}

fn layer_fd(spec: LayerSpec, point: u64) -> f64 {
    let mut b = LayoutBuilder::new();
    let layer = Layer::new(spec, b.push("layer", spec.param_count())).unwrap();
    let mut p = b.build();
    let mut rng = substream(point, "fd-layer", spec.param_count() as u64);
    p.values_mut().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    let x: Vec<f64> = (0..spec.input_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let s: Vec<f64> = (0..spec.output_dim).map(|_| rng.random_range(0.0..1.0)).collect();
    let probe: Vec<f64> = (0..spec.output_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let state = (spec.kind == LayerKind::RecurrentCell).then_some(s.as_slice());
    let loss = |v: &[f64]| {
        let (out, _, _) = layer.forward(v, &x, state).unwrap();
        out.iter().zip(&probe).map(|(o, w)| o * w).sum::<f64>()
    };
    let numeric = finite_difference_gradient(loss, &p, FD_STEP).unwrap();
    let (_, _, tape) = layer.forward(p.values(), &x, state).unwrap();
    let (v, g) = p.split_mut();
    layer.backward(&tape, &probe, v, g).unwrap();
    relative_error(p.grads(), &numeric)
}

fn image_env_parts(grid: Option<usize>, seed: u64) -> (GlimpseSensor, Image) {
    let mut rng = substream(seed, "fd-image", 0);
    let pixels = (0..20 * 20).map(|_| rng.random::<f64>()).collect();
    let sensor = GlimpseSensor {
        scales: vec![4, 8],
        retina: 3,
        low_res_side: 4,
        grid,
    };
    (sensor, Image::new(20, 20, pixels).unwrap())
}

fn shape_for<E: Environment>(env: &E, classes: usize) -> ModelShape {
    ModelShape {
        action_space: env.action_space(),
        context_dim: env.context_dim(),
        glimpse_dim: env.glimpse_dim(),
        bottom_width: 5,
        top_width: 4,
        inference_width: 4,
        classes,
        glimpses: 3,
        location_log_std: 0.4f64.ln(),
    }
}

/// Relative error of one backward pass of a random model at one random point:
/// θ against a random combination of every term it differentiates, or η
/// against `log q(a | y)`.
fn model_fd<E: Environment>(env: &E, shape: ModelShape, point: u64, eta_side: bool) -> f64 {
    let mut rng = substream(point, "fd-model", eta_side as u64);
    let mut model = AttentionModel::new(shape.clone(), point).unwrap();
    for v in GlimpseModel::<E>::theta_mut(&mut model).values_mut() {
        *v += rng.random_range(-0.3..0.3);
    }
    for v in GlimpseModel::<E>::eta_mut(&mut model).values_mut() {
        *v += rng.random_range(-0.3..0.3);
    }
    let label = rng.random_range(0..shape.classes);
    let sampler = if rng.random::<bool>() {
        Sampler::Prior
    } else {
        Sampler::Inference
    };
    let traj = model.rollout(env, label, sampler, 1.0, &mut rng).unwrap();
    let actions = traj.actions.clone();
    let continuous = matches!(shape.action_space, ActionSpace::Continuous { .. });
    let coefs = ThetaCoefficients {
        likelihood: rng.random_range(-1.0..1.0),
        prior: rng.random_range(-1.0..1.0),
        entropy: rng.random_range(-1.0..1.0),
        location_mean: continuous.then(|| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]),
    };
    let theta0 = GlimpseModel::<E>::theta(&model).clone();
    let eta0 = GlimpseModel::<E>::eta(&model).clone();
    let replay = |theta: &[f64], eta: &[f64]| {
        let m = AttentionModel::from_parts(shape.clone(), theta, eta).unwrap();
        m.evaluate(env, label, &actions, Sampler::Prior, 1.0).unwrap()
    };
    if eta_side {
        let numeric = finite_difference_gradient(|v| replay(theta0.values(), v).log_inference, &eta0, FD_STEP).unwrap();
        let mut grads = vec![0.0; eta0.len()];
        model.backward_eta(env, &traj, 1.0, &mut grads).unwrap();
        relative_error(&grads, &numeric)
    } else {
        let objective = |v: &[f64]| {
            let t = replay(v, eta0.values());
            let mean_term: f64 = match coefs.location_mean {
                Some(m) => t
                    .location_means
                    .iter()
                    .flatten()
                    .map(|mu| m[0] * mu[0] + m[1] * mu[1])
                    .sum(),
                None => 0.0,
            };
            coefs.likelihood * t.log_likelihood
                + coefs.prior * t.log_prior
                + coefs.entropy * t.policy_entropies.iter().sum::<f64>()
                + mean_term
        };
        let numeric = finite_difference_gradient(objective, &theta0, FD_STEP).unwrap();
        let mut grads = vec![0.0; theta0.len()];
        model.backward_theta(env, &traj, &coefs, &mut grads).unwrap();
        relative_error(&grads, &numeric)
    }
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut worst: Vec<(String, f64)> = Vec::new();
    let mut record =
        |name: &str, errors: Vec<f64>| worst.push((name.to_string(), errors.into_iter().fold(0.0, f64::max)));

    let layers = [
        ("dense-relu", LayerSpec::dense(6, 4, Activation::Relu)),
        ("dense-identity", LayerSpec::dense(6, 4, Activation::Identity)),
        ("dense-softmax", LayerSpec::dense(6, 4, Activation::Softmax)),
        ("recurrent", LayerSpec::recurrent(5, 4)),
        ("categorical-head", LayerSpec::categorical_head(5, 3)),
        ("gaussian-head", LayerSpec::gaussian_head(5, 2)),
    ];
    for (name, spec) in layers {
        record(name, (0..FD_POINTS).map(|p| layer_fd(spec, p)).collect());
    }
    for eta_side in [false, true] {
        let side = if eta_side { "η" } else { "θ" };
        let errors = (0..FD_POINTS)
            .map(|p| {
                let (sensor, image) = image_env_parts(None, p);
                let env = sensor.env(&image).unwrap();
                model_fd(&env, shape_for(&env, 4), p, eta_side)
            })
            .collect();
        record(&format!("attention-continuous-{side}"), errors);
        let errors = (0..FD_POINTS)
            .map(|p| {
                let (sensor, image) = image_env_parts(Some(3), p);
                let env = sensor.env(&image).unwrap();
                model_fd(&env, shape_for(&env, 4), p, eta_side)
            })
            .collect();
        record(&format!("attention-grid-{side}"), errors);
        let errors = (0..FD_POINTS)
            .map(|p| {
                let world = ToyWorld::random(3, 2, 3, 3, 1.0, p).unwrap();
                model_fd(&world, shape_for(&world, 3), p, eta_side)
            })
            .collect();
        record(&format!("attention-toy-{side}"), errors);
    }
    let bad: Vec<String> = worst
        .iter()
        .filter(|(_, e)| !(*e <= FD_TOL))
        .map(|(n, e)| format!("{n} {e:.2e}"))
        .collect();
    let max = worst.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    let detail = format!(
        "{} configurations × {FD_POINTS} points, worst relative error {max:.2e}",
        worst.len()
    );
    if !bad.is_empty() {
        return Err(format!("{detail}; over {FD_TOL:e}: {}", bad.join(", ")));
    }
    within(start.elapsed(), 60, detail)
}

// ---------------------------------------------------------------- 3 & 4

struct Fixture {
    config: ExperimentConfig,
    model: AttentionModel,
    train: wsram::training::ImageSource,
}

fn load_fixture() -> Result<Fixture, String> {
    let dir = fixture_dir();
    let config = ExperimentConfig::load(&dir.join("glyph-fixture.toml"), &[]).map_err(|e| e.to_string())?;
    let ExperimentData::Images { train, .. } = ExperimentData::load(&config).map_err(|e| e.to_string())? else {
        return Err("fixture is not an image dataset".into());
    };
    let ck = Checkpoint::load(&dir.join("checkpoint-glyph-fixture.bin")).map_err(|e| e.to_string())?;
    ck.check_shape(&model_shape(&config, &train))
        .map_err(|e| e.to_string())?;
    let model = ck.model().map_err(|e| e.to_string())?;
    Ok(Fixture { config, model, train })
}

fn variance_reduction(fx: &Fixture) -> Outcome {
    let start = Instant::now();
    let tags = [
        EstimatorTag::Var,
        EstimatorTag::VarCv,
        EstimatorTag::Wsram,
        EstimatorTag::WsramCv,
    ];
    let report = diagnose(&fx.model, &fx.train, &fx.config, &tags, 10_000).map_err(|e| e.to_string())?;
    let v = |t| report.row(t).map(|r| r.variance).unwrap_or(f64::NAN);
    let wsram = v(EstimatorTag::WsramCv) / v(EstimatorTag::Wsram);
    let var = v(EstimatorTag::VarCv) / v(EstimatorTag::Var);
    let detail = format!("R=10⁴: WSRAM+c/WSRAM = {wsram:.3}, VAR+c/VAR = {var:.3}");
    if !(wsram <= 0.9 && var <= 0.9) {
        return Err(detail);
    }
    within(start.elapsed(), 600, detail)
}

fn ess_behaviour(fx: &Fixture) -> Outcome {
    const RESAMPLES: u64 = 500;
    let m = 5;
    let seed = fx.config.seed;
    let mut batch_rng = substream(seed, "probe-batch", 0);
    let batch: Vec<usize> = (0..fx.config.train.batch_size)
        .map(|_| batch_rng.random_range(0..fx.train.len()))
        .collect();
    let ess_of = |tag: EstimatorTag| -> Result<Vec<f64>, String> {
        let settings = EstimatorSettings::new(tag, m);
        let mut out = Vec::new();
        for r in 0..RESAMPLES {
            for (slot, &i) in batch.iter().enumerate() {
                let env = fx.train.env(i).map_err(|e| e.to_string())?;
                let mut rng = substream(seed, "probe", rollout_index(r, slot as u64));
                let e = estimate_example(&fx.model, &env, fx.train.label(i), &settings, &mut rng)
                    .map_err(|e| e.to_string())?;
                out.push(e.diagnostics.ess);
            }
        }
        Ok(out)
    };
    let cv = ess_of(EstimatorTag::WsramQCv)?;
    let plain = ess_of(EstimatorTag::WsramQ)?;
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    let max = cv.iter().copied().fold(f64::MIN, f64::max);
    let min = cv.iter().copied().fold(f64::MAX, f64::min);
    // the +c variant changes the θ update only, so its weights (and ESS)
    // coincide with WSRAM+q here; logged, not gated
    let detail = format!(
        "M=5 WSRAM+q+c mean ESS {:.3} (range {min:.3}–{max:.3}); WSRAM+q {:.3} [observational]",
        mean(&cv),
        mean(&plain)
    );
    check(mean(&cv) > 1.5 && max <= 5.0 + 1e-9 && min >= 1.0 - 1e-12, detail)
}

// ---------------------------------------------------------------- 5

fn mnist_config(dir: &Path, mnist: &Path, tag: EstimatorTag) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.seed = 1;
    c.output_dir = dir.to_path_buf();
    c.data.kind = DataKind::Mnist;
    c.data.mnist_dir = Some(mnist.to_path_buf());
    c.data.canvas = 60;
    c.model.glimpses = 4;
    c.train.samples = 5;
    c.train.estimator = tag;
    c.train.updates = std::env::var("WSRAM_MNIST_UPDATES")
        .ok()
        .and_then(|u| u.parse().ok())
        .unwrap_or(50_000);
    c.metrics.flush_every = 500;
    c.metrics.probe_resamples = 0;
    c
}

fn first_below(rows: &[wsram::training::TrainingMetrics], level: f64) -> Option<u64> {
    rows.iter().find(|r| r.train_error <= level).map(|r| r.update)
}

fn desk_scale_learning(mnist: &Path) -> Outcome {
    // WSRAM_MNIST_OUT keeps the metrics and checkpoints for inspection
    let scratch = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = std::env::var_os("WSRAM_MNIST_OUT").map_or_else(|| scratch.path().to_path_buf(), PathBuf::from);
    let mut summary = Vec::new();
    let mut crossings = Vec::new();
    let mut wsram_error = f64::NAN;
    for tag in [EstimatorTag::WsramQCv, EstimatorTag::Var] {
        let c = mnist_config(&dir, mnist, tag);
        let ExperimentData::Images { train, test } = ExperimentData::load(&c).map_err(|e| e.to_string())? else {
            return Err("expected image data".into());
        };
        // a split missing classes makes the test error meaningless
        for (name, split) in [("train", &train), ("test", &test)] {
            let mut seen = [false; 10];
            (0..split.len()).for_each(|i| seen[split.label(i)] = true);
            if seen.contains(&false) {
                return Err(format!("{name} split lacks some classes: {seen:?}"));
            }
        }
        let mut trainer = Trainer::new(c.clone(), &train).map_err(|e| e.to_string())?;
        let rows = trainer.run(None).map_err(|e| e.to_string())?;
        let crossing = first_below(&rows, 0.5);
        crossings.push(crossing);
        if tag == EstimatorTag::WsramQCv {
            wsram_error = evaluate(trainer.model(), &test, c.eval.rollouts, c.seed, 0).map_err(|e| e.to_string())?;
            summary.push(format!("{tag} test error {wsram_error:.4}"));
        }
        summary.push(format!("{tag} train error ≤ 0.5 at {crossing:?}"));
    }
    let earlier = match (crossings[0], crossings[1]) {
        (Some(a), Some(b)) => a < b,
        (Some(_), None) => true,
        _ => false,
    };
    check(wsram_error <= 0.15 && earlier, summary.join("; "))
}

// ---------------------------------------------------------------- 6

fn entropy_series() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut report = Vec::new();
    for tag in [EstimatorTag::Var, EstimatorTag::WsramQ] {
        let mut finals = Vec::new();
        for seed in 1..=5 {
            let mut c = ExperimentConfig::default();
            c.seed = seed;
            c.output_dir = dir.path().to_path_buf();
            c.run_id = Some(format!("{}-{seed}", tag.as_str()));
            c.data.kind = DataKind::Toy;
            c.data.toy.scales = 3;
            c.model.glimpses = 2;
            c.model.bottom_width = 8;
            c.model.top_width = 8;
            c.model.inference_width = 8;
            c.exploration.temperature = 1.0;
            c.train.estimator = tag;
            c.train.batch_size = 8;
            c.train.updates = 2000;
            c.train.lr = 0.01;
            c.metrics.flush_every = 250;
            c.metrics.probe_resamples = 0;
            let ExperimentData::Toy { train, .. } = ExperimentData::load(&c).map_err(|e| e.to_string())? else {
                return Err("expected toy data".into());
            };
            Trainer::new(c.clone(), &train)
                .and_then(|mut t| t.run(None))
                .map_err(|e| e.to_string())?;
            let rows = read_metrics(&c.metrics_path()).map_err(|e| e.to_string())?;
            let expected = 1 + c.train.updates / c.metrics.flush_every;
            if rows.len() as u64 != expected
                || rows
                    .iter()
                    .any(|r| !r.scale_entropy.is_finite() || r.scale_entropy < 0.0)
            {
                return Err(format!("{tag} seed {seed}: malformed scale-entropy series"));
            }
            finals.push(rows.last().map(|r| r.scale_entropy).unwrap_or(f64::NAN));
        }
        let fmt: Vec<String> = finals.iter().map(|e| format!("{e:.2}")).collect();
        report.push(format!("{tag} final [{}]", fmt.join(" ")));
    }
    Ok(format!(
        "series emitted for 10 runs; {} nats [observational]",
        report.join("; ")
    ))
}

// ---------------------------------------------------------------- 7

fn strip_wall_clock(text: &str) -> Result<String, String> {
    text.lines()
        .map(|line| {
            let start = line.find("\"wall_clock_secs\":").ok_or("row without wall clock")?;
            let end = line[start..]
                .find([',', '}'])
                .map(|e| start + e)
                .ok_or("unterminated field")?;
            Ok(format!("{}{}", &line[..start], &line[end..]))
        })
        .collect::<Result<Vec<_>, &str>>()
        .map(|l| l.join("\n"))
        .map_err(str::to_string)
}

fn determinism() -> Outcome {
    let start = Instant::now();
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = root.path().join("toy.toml");
    std::fs::write(
        &config,
        "seed = 5\nthreads = 2\n[data]\nkind = \"toy\"\n[model]\nglimpses = 2\nbottom_width = 8\ntop_width = 8\n\
         inference_width = 8\n[train]\nbatch_size = 8\nupdates = 300\nlr = 0.01\n[metrics]\nflush_every = 25\n\
         probe_resamples = 8\n",
    )
    .map_err(|e| e.to_string())?;
    let mut files = Vec::new();
    for run in ["a", "b"] {
        let out = root.path().join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_wsram"))
            .args(["train", "-c"])
            .arg(&config)
            .arg("-s")
            .arg(format!("output_dir=\"{}\"", out.display()))
            .env("RUST_LOG", "warn")
            .stdout(Stdio::null())
            .status()
            .map_err(|e| e.to_string())?;
        if !status.success() {
            return Err(format!("train exited with {status}"));
        }
        let metrics = std::fs::read_dir(&out)
            .map_err(|e| e.to_string())?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .find(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .ok_or("no metrics file")?;
        files.push(strip_wall_clock(
            &std::fs::read_to_string(metrics).map_err(|e| e.to_string())?,
        )?);
    }
    let rows = files[0].lines().count();
    let detail = format!("two train invocations, {rows} metrics rows each");
    if files[0] != files[1] || rows == 0 {
        return Err(detail + ", files differ");
    }
    within(start.elapsed(), 300, detail)
}

// ----------------------------------------------------------------

fn main() {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: u32| selected.is_empty() || selected.contains(&n);
    let mut failures = 0;
    let mut report = |n: u32, name: &str, outcome: Option<Outcome>| {
        let line = match outcome {
            Some(Ok(d)) => format!("PASS  {n}. {name}: {d}"),
            Some(Err(d)) => {
                failures += 1;
                format!("FAIL  {n}. {name}: {d}")
            }
            None => format!("SKIP  {n}. {name}: set WSRAM_MNIST_DIR to run"),
        };
        println!("{line}");
    };

    if wanted(1) {
        report(1, "oracle identity suite", Some(oracle_suite()));
    }
    if wanted(2) {
        report(2, "gradient correctness", Some(gradient_correctness()));
    }
    if wanted(3) || wanted(4) {
        match load_fixture() {
            Ok(fx) => {
                if wanted(3) {
                    report(3, "variance reduction", Some(variance_reduction(&fx)));
                }
                if wanted(4) {
                    report(4, "ESS behaviour", Some(ess_behaviour(&fx)));
                }
            }
            Err(e) => {
                for (n, name) in [(3, "variance reduction"), (4, "ESS behaviour")] {
                    if wanted(n) {
                        report(n, name, Some(Err(format!("fixture: {e}"))));
                    }
                }
            }
        }
    }
    if wanted(5) {
        let dir = std::env::var_os("WSRAM_MNIST_DIR").map(PathBuf::from);
        report(5, "desk-scale learning", dir.map(|d| desk_scale_learning(&d)));
    }
    if wanted(6) {
        report(6, "exploration entropy series", Some(entropy_series()));
    }
    if wanted(7) {
        report(7, "determinism", Some(determinism()));
    }
    if failures > 0 {
        println!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
