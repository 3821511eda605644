//! Subcommand implementations. Output layout:
//!
//! ```text
//! <out>/
//!   manifest.json                      resolved experiment parameters
//!   <policy-tag>/<seed>/trajectory.csv one file per (policy, seed) run
//!   summary.json                       per-run utility metrics (train)
//!   exposure.csv, exposure_table.txt   (exposure)
//!   sweep.csv, sweep.json              (sweep)
//!   gradcheck.csv                      (gradcheck)
//! ```
//!
//! Every emitted file is a pure function of (config, seeds); reruns are
//! byte-identical.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use clipgrain_core::memorization::{run_secret_sharer, ExposureReport};
use clipgrain_core::models::format::parse_dataset;
use clipgrain_core::models::synth::generate;
use clipgrain_core::models::{
    batch_gradient, example_loss, init_params, mean_score, Example, Model, ModelKind, Target,
};
use clipgrain_core::numerics::finite_diff_gradient;
use clipgrain_core::trainer::train;
use clipgrain_core::{ClippingPolicy, Dataset, RealVector, SeededRng, Vector};

use crate::config::{DataSource, ExperimentConfig};
use crate::CliError;

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: PathBuf,
    pub force: bool,
    pub parallel: Option<usize>,
}

fn with_pool<R: Send>(parallel: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    match parallel {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .expect("worker pool")
            .install(f),
        None => f(),
    }
}

/// Refuses to reuse an existing output directory unless `--force` is given.
fn prepare_out_dir(out: &Path, force: bool) -> Result<(), CliError> {
    if out.exists() && !force {
        return Err(CliError::Config(format!(
            "output directory {} already exists; pass --force to overwrite",
            out.display()
        )));
    }
    fs::create_dir_all(out)?;
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

/// Resolved experiment parameters, written as `manifest.json`. The output
/// location itself is deliberately not part of the manifest so identical
/// configs produce identical trees wherever they land.
#[derive(Serialize)]
struct Manifest<'a> {
    model: &'a ModelKind,
    data: &'a crate::config::DataSection,
    train: &'a crate::config::TrainSection,
    policies: &'a [ClippingPolicy<f64>],
    secret_sharer: &'a clipgrain_core::SecretSharerSettings<f64>,
    sweep: &'a crate::config::SweepSection,
    seeds: &'a [u64],
}

fn write_manifest(config: &ExperimentConfig, out: &Path) -> Result<(), CliError> {
    let manifest = Manifest {
        model: &config.model,
        data: &config.data,
        train: &config.train,
        policies: &config.policies,
        secret_sharer: &config.secret_sharer,
        sweep: &config.sweep,
        seeds: &config.seeds,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CliError::Config(format!("manifest serialization: {e}")))?;
    write_file(&out.join("manifest.json"), &format!("{json}\n"))
}

pub struct LoadedData {
    pub model: Model,
    pub train: Dataset<f64>,
    pub test: Dataset<f64>,
}

/// Builds the model and (train, test) datasets from the config, either by
/// generating synthetic data or by reading dataset files. Input datasets are
/// never written back.
pub fn load_data(config: &ExperimentConfig) -> Result<LoadedData, CliError> {
    match config.data.source {
        DataSource::Synthetic => {
            let spec = config
                .data
                .synthetic
                .as_ref()
                .ok_or_else(|| CliError::Config("data.synthetic: missing".into()))?;
            let (train, test) =
                generate::<f64>(spec).map_err(|e| CliError::Config(e.to_string()))?;
            let model = Model::new(config.model, spec.dim)
                .map_err(|e| CliError::Config(format!("model: {e}")))?;
            Ok(LoadedData { model, train, test })
        }
        DataSource::File => {
            let file = config
                .data
                .file
                .as_ref()
                .ok_or_else(|| CliError::Config("data.file: missing".into()))?;
            let read = |path: &Path| -> Result<Dataset<f64>, CliError> {
                let text = fs::read_to_string(path).map_err(|e| {
                    CliError::Config(format!("cannot read dataset {}: {e}", path.display()))
                })?;
                let (dataset, _task) =
                    parse_dataset(&text).map_err(|e| CliError::Config(e.to_string()))?;
                Ok(dataset)
            };
            let train = read(&file.train_path)?;
            let test = read(&file.test_path)?;
            if train.dim() != test.dim() {
                return Err(CliError::Config(format!(
                    "data.file: train dim {} != test dim {}",
                    train.dim(),
                    test.dim()
                )));
            }
            let model = Model::new(config.model, train.dim())
                .map_err(|e| CliError::Config(format!("model: {e}")))?;
            Ok(LoadedData { model, train, test })
        }
    }
}

// ---------------------------------------------------------------------------
// gradcheck

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckRow {
    pub model: String,
    pub max_rel_error: f64,
    pub pass: bool,
}

fn reference_suite() -> Vec<(String, Model)> {
    vec![
        (
            "linear_regression".into(),
            Model::new(ModelKind::LinearRegression, 5).expect("valid model"),
        ),
        (
            "logistic_regression".into(),
            Model::new(ModelKind::LogisticRegression, 4).expect("valid model"),
        ),
        (
            "mlp1".into(),
            Model::new(ModelKind::Mlp1 { hidden: 5, classes: 3 }, 4).expect("valid model"),
        ),
    ]
}

fn random_example(model: &Model, id: u64, rng: &mut SeededRng) -> Example<f64> {
    let features = Vector::new(
        (0..model.input_dim).map(|_| rng.standard_normal()).collect(),
    )
    .expect("gaussian features are finite");
    let target = match model.kind {
        ModelKind::LinearRegression => Target::Real(rng.standard_normal()),
        ModelKind::LogisticRegression => Target::Class(rng.index(2)),
        ModelKind::Mlp1 { classes, .. } => Target::Class(rng.index(classes)),
    };
    Example::new(id, features, target)
}

fn rel_error(analytic: &RealVector, numeric: &RealVector) -> f64 {
    let mut diff = 0.0;
    for i in 0..analytic.len() {
        let d = analytic[i] - numeric[i];
        diff += d * d;
    }
    diff.sqrt() / analytic.l2_norm().max(numeric.l2_norm()).max(1e-12)
}

/// Compares each model's analytic batch gradient against central finite
/// differences over `draws` random (w, batch) pairs. `corruption` is a test
/// fixture: it offsets one analytic gradient coordinate so the failure path
/// can be exercised end to end.
pub fn gradcheck_rows(
    draws: usize,
    tolerance: f64,
    corruption: Option<f64>,
) -> Result<Vec<GradcheckRow>, CliError> {
    let mut rows = Vec::new();
    for (name, model) in reference_suite() {
        let mut rng = SeededRng::new(0xC0FFEE ^ name.len() as u64);
        let mut max_err = 0.0f64;
        for draw in 0..draws {
            let w = init_params(&model, &mut rng);
            let batch: Vec<Example<f64>> = (0..3)
                .map(|i| random_example(&model, draw as u64 * 3 + i, &mut rng))
                .collect();
            let mut analytic = batch_gradient(&model, &w, &batch)
                .map_err(|e| CliError::Gradcheck(format!("{name}: {e}")))?;
            if let Some(offset) = corruption {
                let mut raw = analytic.into_vec();
                raw[0] += offset;
                analytic = Vector::new(raw)
                    .map_err(|e| CliError::Gradcheck(format!("{name}: {e}")))?;
            }
            let numeric = finite_diff_gradient(
                |probe| {
                    let mut acc = 0.0;
                    for ex in &batch {
                        acc += example_loss(&model, probe, ex).unwrap_or(f64::NAN);
                    }
                    acc / batch.len() as f64
                },
                &w,
                1e-5,
            )
            .map_err(|e| CliError::Gradcheck(format!("{name}: oracle failure: {e}")))?;
            max_err = max_err.max(rel_error(&analytic, &numeric));
        }
        rows.push(GradcheckRow {
            model: name,
            max_rel_error: max_err,
            pass: max_err <= tolerance,
        });
    }
    Ok(rows)
}

fn gradcheck_csv(rows: &[GradcheckRow]) -> String {
    let mut out = String::from("# clipgrain gradcheck v1\nmodel,max_rel_error,pass\n");
    for row in rows {
        out.push_str(&format!(
            "{},{:.16e},{}\n",
            row.model,
            row.max_rel_error,
            u8::from(row.pass)
        ));
    }
    out
}

/// Finite-difference validation of every model kind; writes per-model max
/// relative error and fails (exit 2) if any model is off.
pub fn cmd_gradcheck(
    opts: &RunOptions,
    corruption: Option<f64>,
) -> Result<Vec<GradcheckRow>, CliError> {
    let rows = gradcheck_rows(100, 1e-5, corruption)?;
    prepare_out_dir(&opts.out, opts.force)?;
    write_file(&opts.out.join("gradcheck.csv"), &gradcheck_csv(&rows))?;
    for row in &rows {
        println!(
            "gradcheck {}: max rel error {:.3e} [{}]",
            row.model,
            row.max_rel_error,
            if row.pass { "ok" } else { "FAIL" }
        );
    }
    if let Some(bad) = rows.iter().find(|r| !r.pass) {
        return Err(CliError::Gradcheck(format!(
            "{} exceeded tolerance: {:.3e}",
            bad.model, bad.max_rel_error
        )));
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// train

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub policy: String,
    pub seed: u64,
    pub train_metric: f64,
    pub test_metric: f64,
    pub gap: f64,
    pub final_step_loss: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainOutcome {
    pub runs: Vec<RunSummary>,
}

fn run_single(
    data: &LoadedData,
    config: &ExperimentConfig,
    policy: &ClippingPolicy<f64>,
    seed: u64,
) -> Result<(String, RunSummary), CliError> {
    let train_config = config.train.to_train_config(policy.clone(), seed);
    let trajectory = train(&data.model, &data.train, &train_config)
        .map_err(|e| CliError::Training(format!("policy `{}`, seed {seed}: {e}", policy.tag())))?;
    let w = &trajectory.final_params;
    let train_metric = mean_score(&data.model, w, data.train.examples())
        .map_err(|e| CliError::Training(e.to_string()))?;
    let test_metric = mean_score(&data.model, w, data.test.examples())
        .map_err(|e| CliError::Training(e.to_string()))?;
    let summary = RunSummary {
        policy: policy.tag(),
        seed,
        train_metric,
        test_metric,
        gap: test_metric - train_metric,
        final_step_loss: trajectory.steps.last().map_or(f64::NAN, |s| s.minibatch_loss),
    };
    Ok((trajectory.to_csv(), summary))
}

/// One training run per (policy, seed) pair; trajectory CSVs land under
/// `<out>/<policy-tag>/<seed>/trajectory.csv`.
pub fn cmd_train(config: &ExperimentConfig, opts: &RunOptions) -> Result<TrainOutcome, CliError> {
    config.validate()?;
    let data = load_data(config)?;
    prepare_out_dir(&opts.out, opts.force)?;
    write_manifest(config, &opts.out)?;

    let jobs: Vec<(&ClippingPolicy<f64>, u64)> = config
        .policies
        .iter()
        .flat_map(|p| config.seeds.iter().map(move |&s| (p, s)))
        .collect();
    let results: Vec<Result<(String, RunSummary), CliError>> = with_pool(opts.parallel, || {
        use rayon::prelude::*;
        jobs.par_iter()
            .map(|(policy, seed)| run_single(&data, config, policy, *seed))
            .collect()
    });

    let mut runs = Vec::with_capacity(jobs.len());
    for ((policy, seed), result) in jobs.iter().zip(results) {
        let (csv, summary) = result?;
        let dir = opts.out.join(policy.tag()).join(seed.to_string());
        write_file(&dir.join("trajectory.csv"), &csv)?;
        runs.push(summary);
    }
    let outcome = TrainOutcome { runs };
    let json = serde_json::to_string_pretty(&outcome)
        .map_err(|e| CliError::Config(format!("summary serialization: {e}")))?;
    write_file(&opts.out.join("summary.json"), &format!("{json}\n"))?;
    Ok(outcome)
}

// ---------------------------------------------------------------------------
// exposure

/// Runs the secret-sharer audit over the configured policies and seeds;
/// writes the exposure CSV and a pretty table. Completing the measurement is
/// success regardless of the exposure values.
pub fn cmd_exposure(
    config: &ExperimentConfig,
    opts: &RunOptions,
) -> Result<ExposureReport<f64>, CliError> {
    config.validate()?;
    let data = load_data(config)?;
    prepare_out_dir(&opts.out, opts.force)?;
    write_manifest(config, &opts.out)?;

    let base_config = config
        .train
        .to_train_config(ClippingPolicy::None, config.seeds[0]);
    let report = with_pool(opts.parallel, || {
        run_secret_sharer(
            &data.model,
            &data.train,
            &data.test,
            &base_config,
            &config.policies,
            &config.secret_sharer,
            &config.seeds,
        )
    })
    .map_err(|e| match e {
        clipgrain_core::memorization::MemorizationError::Training { .. } => {
            CliError::Training(e.to_string())
        }
        other => CliError::Config(other.to_string()),
    })?;

    write_file(&opts.out.join("exposure.csv"), &report.to_csv())?;
    let table = report.pretty_table();
    write_file(&opts.out.join("exposure_table.txt"), &table)?;
    print!("{table}");
    Ok(report)
}

// ---------------------------------------------------------------------------
// sweep

#[derive(Debug, Clone, Serialize)]
pub struct SweepArm {
    pub policy: String,
    pub bound: Option<f64>,
    pub mean_train_metric: f64,
    pub mean_test_metric: f64,
    pub selected: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepOutcome {
    pub selected_bound: f64,
    pub arms: Vec<SweepArm>,
}

/// Trains `PerCore(b)` for each bound plus an unclipped baseline, ranks the
/// bounds by mean final test metric across seeds, and marks the winner.
/// The baseline arm is reported for reference but never selected.
pub fn cmd_sweep(
    config: &ExperimentConfig,
    opts: &RunOptions,
    bounds: &[f64],
) -> Result<SweepOutcome, CliError> {
    config.validate()?;
    if bounds.is_empty() {
        return Err(CliError::Config("sweep.bounds: must be non-empty".into()));
    }
    if let Some(b) = bounds.iter().find(|b| !(**b > 0.0 && b.is_finite())) {
        return Err(CliError::Config(format!(
            "sweep.bounds: bound {b} must be positive and finite"
        )));
    }
    let data = load_data(config)?;
    prepare_out_dir(&opts.out, opts.force)?;
    write_manifest(config, &opts.out)?;

    let mut arms: Vec<(ClippingPolicy<f64>, Option<f64>)> =
        vec![(ClippingPolicy::None, None)];
    arms.extend(bounds.iter().map(|&b| (ClippingPolicy::PerCore { bound: b }, Some(b))));

    let jobs: Vec<(usize, u64)> = (0..arms.len())
        .flat_map(|a| config.seeds.iter().map(move |&s| (a, s)))
        .collect();
    let results: Vec<Result<(String, RunSummary), CliError>> = with_pool(opts.parallel, || {
        use rayon::prelude::*;
        jobs.par_iter()
            .map(|&(arm, seed)| run_single(&data, config, &arms[arm].0, seed))
            .collect()
    });

    let mut per_arm_train: Vec<Vec<f64>> = vec![Vec::new(); arms.len()];
    let mut per_arm_test: Vec<Vec<f64>> = vec![Vec::new(); arms.len()];
    for (&(arm, seed), result) in jobs.iter().zip(results) {
        let (csv, summary) = result?;
        let dir = opts.out.join(arms[arm].0.tag()).join(seed.to_string());
        write_file(&dir.join("trajectory.csv"), &csv)?;
        per_arm_train[arm].push(summary.train_metric);
        per_arm_test[arm].push(summary.test_metric);
    }

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    // skip the baseline arm (index 0); ties go to the earliest bound listed
    let mut best = 1;
    for arm in 2..arms.len() {
        if mean(&per_arm_test[arm]) < mean(&per_arm_test[best]) {
            best = arm;
        }
    }
    let selected_bound = arms[best].1.expect("selected arm carries a bound");

    let arm_rows: Vec<SweepArm> = arms
        .iter()
        .enumerate()
        .map(|(i, (policy, bound))| SweepArm {
            policy: policy.tag(),
            bound: *bound,
            mean_train_metric: mean(&per_arm_train[i]),
            mean_test_metric: mean(&per_arm_test[i]),
            selected: i == best,
        })
        .collect();

    let mut csv = String::from("# clipgrain sweep v1\npolicy,bound,mean_train_metric,mean_test_metric,selected\n");
    for arm in &arm_rows {
        csv.push_str(&format!(
            "{},{},{:.16e},{:.16e},{}\n",
            arm.policy,
            arm.bound.map_or(String::new(), |b| format!("{b:.16e}")),
            arm.mean_train_metric,
            arm.mean_test_metric,
            u8::from(arm.selected)
        ));
    }
    write_file(&opts.out.join("sweep.csv"), &csv)?;
    let outcome = SweepOutcome { selected_bound, arms: arm_rows };
    let json = serde_json::to_string_pretty(&outcome)
        .map_err(|e| CliError::Config(format!("sweep serialization: {e}")))?;
    write_file(&opts.out.join("sweep.json"), &format!("{json}\n"))?;
    println!("sweep selected per-core bound {selected_bound}");
    Ok(outcome)
}
