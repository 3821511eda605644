//! Acceptance suite: one test per release criterion, each printing a
//! `acceptance NN PASS` line with the measured values.
//!
//! Run with `cargo test -p clipgrain-cli --test acceptance -- --nocapture`
//! to see the per-criterion lines.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use clipgrain_cli::commands::{cmd_exposure, cmd_sweep, cmd_train, gradcheck_rows, RunOptions};
use clipgrain_cli::config::ExperimentConfig;
use clipgrain_core::clipping::{apply_policy, PerCoreGradient};
use clipgrain_core::memorization::{edit_distance, exposure, generate_canaries, LabelSpace};
use clipgrain_core::models::synth::{generate, SyntheticSpec};
use clipgrain_core::models::{batch_gradient, example_score, init_params};
use clipgrain_core::trainer::{sample_minibatch, train, train_step, TrainTrajectory};
use clipgrain_core::{
    ClippingPolicy, Dataset, Model, ModelKind, SeededRng, TrainConfig, Vector,
};

// ---------------------------------------------------------------------------
// helpers

fn replication_config() -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/replication.toml");
    ExperimentConfig::from_path(&path).expect("replication config parses")
}

fn opts(dir: &Path) -> RunOptions {
    RunOptions { out: dir.to_path_buf(), force: true, parallel: None }
}

fn assert_bits(a: &Vector<f64>, b: &Vector<f64>, what: &str) {
    assert_eq!(a.len(), b.len(), "{what}: length");
    for i in 0..a.len() {
        assert_eq!(a[i].to_bits(), b[i].to_bits(), "{what}: slot {i}");
    }
}

fn random_gradients(rng: &mut SeededRng, cores: usize, dim: usize) -> Vec<PerCoreGradient<f64>> {
    (0..cores)
        .map(|c| {
            let scale = 10f64.powf(rng.uniform(-1.0, 1.5));
            let grad = Vector::new(
                (0..dim)
                    .map(|_| rng.standard_normal::<f64>() * scale)
                    .collect(),
            )
            .unwrap();
            PerCoreGradient::new(c, grad)
        })
        .collect()
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for i in 0..xs.len() {
        cov += (rx[i] - mx) * (ry[i] - my);
        vx += (rx[i] - mx).powi(2);
        vy += (ry[i] - my).powi(2);
    }
    cov / (vx.sqrt() * vy.sqrt())
}

/// Dynamics fields of a trajectory (everything except the configured-bound
/// echo), compared bit for bit.
fn assert_same_dynamics(a: &TrainTrajectory<f64>, b: &TrainTrajectory<f64>, what: &str) {
    assert_eq!(a.steps.len(), b.steps.len(), "{what}: step count");
    for (sa, sb) in a.steps.iter().zip(&b.steps) {
        assert_eq!(
            sa.minibatch_loss.to_bits(),
            sb.minibatch_loss.to_bits(),
            "{what}: loss at step {}",
            sa.step
        );
        assert_eq!(sa.per_core_norms.len(), sb.per_core_norms.len());
        for (na, nb) in sa.per_core_norms.iter().zip(&sb.per_core_norms) {
            assert_eq!(na.to_bits(), nb.to_bits(), "{what}: core norm at step {}", sa.step);
        }
        assert_eq!(
            sa.agg_grad_norm.to_bits(),
            sb.agg_grad_norm.to_bits(),
            "{what}: aggregate norm at step {}",
            sa.step
        );
        assert_eq!(sa.canary_ids, sb.canary_ids, "{what}: canaries at step {}", sa.step);
    }
    assert_eq!(a.evals, b.evals, "{what}: eval snapshots");
    assert_bits(&a.final_params, &b.final_params, what);
}

fn two_cluster_dataset(classes: usize, seed: u64) -> Dataset<f64> {
    let spec = SyntheticSpec {
        dim: 6,
        classes,
        train_size: 48,
        test_size: 1,
        cluster_separation: 2.0,
        label_noise: 0.05,
        outlier_fraction: 0.05,
        outlier_scale: 6.0,
        noise_std: 0.1,
        seed,
        ..SyntheticSpec::default()
    };
    generate::<f64>(&spec).unwrap().0
}

// ---------------------------------------------------------------------------
// criteria

#[test]
fn c01_gradient_oracle() {
    let start = Instant::now();
    let rows = gradcheck_rows(100, 1e-5, None).unwrap();
    let elapsed = start.elapsed();
    assert_eq!(rows.len(), 3, "one row per model kind");
    for row in &rows {
        assert!(
            row.pass,
            "{}: max rel error {} exceeds 1e-5",
            row.model, row.max_rel_error
        );
    }
    assert!(elapsed.as_secs_f64() < 10.0, "gradcheck took {elapsed:?}");
    let worst = rows.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    println!(
        "acceptance 01 PASS: gradient oracle, 3 models x 100 draws, max rel err {worst:.2e}, {:.2}s",
        elapsed.as_secs_f64()
    );
}

#[test]
fn c02_per_core_clipping_bound() {
    let mut rng = SeededRng::new(0x0A11);
    for trial in 0..1000 {
        let cores = 1 + rng.index(8);
        let dim = 1 + rng.index(8);
        let grads = random_gradients(&mut rng, cores, dim);
        let bound = rng.uniform(0.05, 20.0);
        let out = apply_policy(&ClippingPolicy::PerCore { bound }, &grads, None).unwrap();
        for (g, clipped) in grads.iter().zip(&out.grads) {
            let norm = clipped.l2_norm();
            assert!(
                norm <= bound + 1e-9 * bound.max(1.0),
                "trial {trial}: norm {norm} exceeds bound {bound}"
            );
            if g.norm <= bound {
                assert_bits(&g.grad, clipped, "under-bound core must be untouched");
            }
        }
    }
    println!("acceptance 02 PASS: per-core clipping bound enforced over 1000 randomized calls");
}

#[test]
fn c03_adaptive_per_core_contract() {
    let mut rng = SeededRng::new(0x0A22);
    for trial in 0..1000 {
        let cores = 1 + rng.index(8);
        let dim = 1 + rng.index(8);
        let grads = random_gradients(&mut rng, cores, dim);
        let out = apply_policy(&ClippingPolicy::AdaptivePerCore, &grads, None).unwrap();
        let b_t = grads.iter().map(|g| g.norm).fold(f64::INFINITY, f64::min);
        assert_eq!(out.applied_bound, Some(b_t));
        for clipped in &out.grads {
            let norm = clipped.l2_norm();
            assert!(
                (norm - b_t).abs() <= 1e-9 * b_t,
                "trial {trial}: norm {norm} vs adaptive bound {b_t}"
            );
        }
        let argmin = grads.iter().position(|g| g.norm == b_t).unwrap();
        assert_bits(&grads[argmin].grad, &out.grads[argmin], "lowest-index argmin core");
    }
    println!("acceptance 03 PASS: adaptive bound equals min norm over 1000 randomized calls");
}

#[test]
fn c04_pec_equivalence_at_unit_batch() {
    let models = [
        (Model::new(ModelKind::LogisticRegression, 6).unwrap(), 2usize),
        (Model::new(ModelKind::Mlp1 { hidden: 6, classes: 3 }, 6).unwrap(), 3usize),
    ];
    for (model, classes) in models {
        let dataset = two_cluster_dataset(classes, 42);
        for seed in [1, 2, 3] {
            let pcc = TrainConfig {
                iterations: 150,
                cores: 4,
                per_core_batch: 1,
                learning_rate: 0.05,
                policy: ClippingPolicy::PerCore { bound: 0.5 },
                seed,
                eval_every: 50,
            };
            let mut pec = pcc.clone();
            pec.policy = ClippingPolicy::PerExample { bound: 0.5 };
            let a = train(&model, &dataset, &pcc).unwrap();
            let b = train(&model, &dataset, &pec).unwrap();
            assert_eq!(a, b, "{:?} seed {seed}: B=1 trajectories differ", model.kind);
            assert_eq!(a.to_csv(), b.to_csv());
        }
    }
    println!("acceptance 04 PASS: B=1 per-core and per-example trainings bitwise identical, 3 seeds x 2 models");
}

#[test]
fn c05_single_core_learning_rate_scaling() {
    let model = Model::new(ModelKind::LogisticRegression, 6).unwrap();
    let dataset = two_cluster_dataset(2, 7);
    let config = TrainConfig {
        iterations: 500,
        cores: 1,
        per_core_batch: 4,
        learning_rate: 0.05,
        policy: ClippingPolicy::PerCore { bound: 0.15 },
        seed: 11,
        eval_every: 1000,
    };
    let mut rng = SeededRng::new(config.seed);
    let mut w = init_params(&model, &mut rng);
    let mut binding_steps = 0;
    for step in 1..=config.iterations {
        let minibatch = sample_minibatch(&dataset, 4, 1, &mut rng, None, step);
        let unclipped = batch_gradient(&model, &w, &minibatch).unwrap();
        let (next, _) = train_step(&model, &w, &minibatch, &config, step).unwrap();
        // update direction = w - w_next = r * clipped gradient
        let mut dot = 0.0;
        let mut norm_update_sq = 0.0;
        for i in 0..w.len() {
            let u = w[i] - next[i];
            dot += u * unclipped[i];
            norm_update_sq += u * u;
        }
        let norm_update = norm_update_sq.sqrt();
        let norm_grad = unclipped.l2_norm();
        if norm_update > 0.0 && norm_grad > 0.0 {
            let cosine = dot / (norm_update * norm_grad);
            assert!(
                cosine >= 1.0 - 1e-12,
                "step {step}: clipped update not a nonnegative multiple (cos {cosine})"
            );
        }
        if norm_grad > 0.15 {
            binding_steps += 1;
        }
        w = next;
    }
    assert!(binding_steps > 50, "bound should bind often, bound {binding_steps} steps");
    println!(
        "acceptance 05 PASS: single-core clipping is pure learning-rate scaling across 500 steps ({binding_steps} binding)"
    );
}

#[test]
fn c06_baseline_recovery_with_infinite_bound() {
    let model = Model::new(ModelKind::Mlp1 { hidden: 5, classes: 2 }, 6).unwrap();
    let dataset = two_cluster_dataset(2, 13);
    for seed in [1, 2, 3] {
        let baseline = TrainConfig {
            iterations: 200,
            cores: 4,
            per_core_batch: 2,
            learning_rate: 0.05,
            policy: ClippingPolicy::None,
            seed,
            eval_every: 50,
        };
        let mut clipped = baseline.clone();
        clipped.policy = ClippingPolicy::PerCore { bound: f64::INFINITY };
        let a = train(&model, &dataset, &baseline).unwrap();
        let b = train(&model, &dataset, &clipped).unwrap();
        assert_same_dynamics(&a, &b, &format!("seed {seed}"));
    }
    println!("acceptance 06 PASS: never-binding bound reproduces the unclipped trajectory bitwise, 3 seeds");
}

#[test]
fn c07_exposure_calibration_untrained_scorer() {
    let model = Model::new(ModelKind::Mlp1 { hidden: 8, classes: 2 }, 8).unwrap();
    let mut rng = SeededRng::new(0xCA11);
    let w = init_params::<f64>(&model, &mut rng);
    let labels = LabelSpace::for_model(&model);
    let canaries = generate_canaries(8, 500, 5.0, labels, 0, None, &mut rng);
    let holdout = generate_canaries(8, 1024, 5.0, labels, 100_000, None, &mut rng);
    let holdout_scores: Vec<f64> = holdout
        .iter()
        .map(|ex| example_score(&model, &w, ex).unwrap())
        .collect();
    let mut total = 0.0;
    let mut max_seen = 0.0f64;
    for canary in &canaries {
        let score = example_score(&model, &w, canary).unwrap();
        let e = exposure(score, &holdout_scores).unwrap();
        total += e;
        max_seen = max_seen.max(e);
    }
    let mean = total / canaries.len() as f64;
    assert!(
        (mean - 1.44).abs() <= 0.15,
        "mean exposure {mean} outside 1.44 +/- 0.15"
    );
    assert!(max_seen <= 10.0, "exposure {max_seen} exceeds log2(1024)");
    println!(
        "acceptance 07 PASS: untrained-scorer mean exposure {mean:.3} (expected 1.44 +/- 0.15), max {max_seen:.2} <= 10"
    );
}

#[test]
fn c08_exposure_replication_directional() {
    let start = Instant::now();
    let config = replication_config();
    let tmp = tempfile::tempdir().unwrap();

    // the bound under test comes from the utility sweep, not from us
    let sweep = cmd_sweep(&config, &opts(&tmp.path().join("sweep")), &config.sweep.bounds).unwrap();
    let b_star = sweep.selected_bound;

    let mut audit = config.clone();
    audit.policies = vec![
        ClippingPolicy::None,
        ClippingPolicy::PerCore { bound: b_star },
        ClippingPolicy::AdaptivePerCore,
    ];
    let report = cmd_exposure(&audit, &opts(&tmp.path().join("exposure"))).unwrap();

    let cell = |policy: &str, k: u32| report.pooled_cell(policy, k).0;
    let baseline_means: Vec<f64> = report
        .cohort_counts
        .iter()
        .map(|&k| cell("none", k))
        .collect();
    let ks: Vec<f64> = report.cohort_counts.iter().map(|&k| k as f64).collect();
    let rho = spearman(&ks, &baseline_means);
    assert!(
        rho > 0.8,
        "baseline exposure not increasing in insertion count: means {baseline_means:?}, spearman {rho}"
    );

    let pcc_tag = ClippingPolicy::PerCore { bound: b_star }.tag();
    for &k in report.cohort_counts.iter().filter(|&&k| k >= 4) {
        let base = cell("none", k);
        let pcc = cell(&pcc_tag, k);
        let apcc = cell("adaptive_per_core", k);
        assert!(pcc < base, "k={k}: per-core@{b_star} exposure {pcc} !< baseline {base}");
        assert!(apcc < base, "k={k}: adaptive exposure {apcc} !< baseline {base}");
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 600.0, "replication took {elapsed:?}");
    println!(
        "acceptance 08 PASS: baseline exposure rises with insertions (spearman {rho:.2}, means {:?}); per-core@{b_star} and adaptive stay below baseline for k>=4; {:.1}s",
        baseline_means
            .iter()
            .map(|m| (m * 100.0).round() / 100.0)
            .collect::<Vec<_>>(),
        elapsed.as_secs_f64()
    );
}

#[test]
fn c09_generalization_gap_replication_directional() {
    let config = replication_config();
    let tmp = tempfile::tempdir().unwrap();
    let sweep = cmd_sweep(&config, &opts(&tmp.path().join("sweep")), &config.sweep.bounds).unwrap();
    let b_star = sweep.selected_bound;

    let mut paired = config.clone();
    paired.policies = vec![ClippingPolicy::None, ClippingPolicy::PerCore { bound: b_star }];
    paired.seeds = (1..=10).collect();
    let outcome = cmd_train(&paired, &opts(&tmp.path().join("train"))).unwrap();

    let mut by_policy: BTreeMap<(String, u64), (f64, f64)> = BTreeMap::new();
    for run in &outcome.runs {
        by_policy.insert((run.policy.clone(), run.seed), (run.train_metric, run.gap));
    }
    let pcc_tag = ClippingPolicy::PerCore { bound: b_star }.tag();
    let mut train_wins = 0;
    let mut gap_wins = 0;
    for seed in 1..=10u64 {
        let (base_train, base_gap) = by_policy[&("none".to_string(), seed)];
        let (pcc_train, pcc_gap) = by_policy[&(pcc_tag.clone(), seed)];
        if pcc_train >= base_train {
            train_wins += 1;
        }
        if pcc_gap <= base_gap {
            gap_wins += 1;
        }
    }
    assert!(train_wins >= 7, "higher train metric in only {train_wins}/10 seeds");
    assert!(gap_wins >= 7, "smaller generalization gap in only {gap_wins}/10 seeds");
    println!(
        "acceptance 09 PASS: per-core@{b_star} vs baseline over 10 paired seeds: train metric higher in {train_wins}/10, gap smaller in {gap_wins}/10"
    );
}

fn collect_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(dir: &Path, root: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(&path, root, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn c10_train_outputs_byte_identical() {
    let mut config = replication_config();
    config.seeds = vec![1, 2];
    let tmp = tempfile::tempdir().unwrap();
    let (dir_a, dir_b) = (tmp.path().join("a"), tmp.path().join("b"));
    cmd_train(&config, &opts(&dir_a)).unwrap();
    cmd_train(&config, &opts(&dir_b)).unwrap();
    let tree_a = collect_tree(&dir_a);
    let tree_b = collect_tree(&dir_b);
    assert_eq!(
        tree_a.keys().collect::<Vec<_>>(),
        tree_b.keys().collect::<Vec<_>>(),
        "output file sets differ"
    );
    assert!(!tree_a.is_empty());
    for (name, bytes) in &tree_a {
        assert_eq!(bytes, &tree_b[name], "{name} differs between runs");
    }
    println!(
        "acceptance 10 PASS: two identical train invocations produced byte-identical trees ({} files)",
        tree_a.len()
    );
}

#[test]
fn c11_edit_distance_exhaustive() {
    // independent oracle: memoized recursion on index pairs
    fn oracle(a: &[u8], b: &[u8]) -> usize {
        fn go(a: &[u8], b: &[u8], memo: &mut [Vec<Option<usize>>], i: usize, j: usize) -> usize {
            if i == a.len() {
                return b.len() - j;
            }
            if j == b.len() {
                return a.len() - i;
            }
            if let Some(v) = memo[i][j] {
                return v;
            }
            let cost = usize::from(a[i] != b[j]);
            let v = (go(a, b, memo, i + 1, j + 1) + cost)
                .min(go(a, b, memo, i + 1, j) + 1)
                .min(go(a, b, memo, i, j + 1) + 1);
            memo[i][j] = Some(v);
            v
        }
        let mut memo = vec![vec![None; b.len()]; a.len()];
        go(a, b, &mut memo, 0, 0)
    }

    let mut strings: Vec<Vec<u8>> = vec![Vec::new()];
    let mut frontier: Vec<Vec<u8>> = vec![Vec::new()];
    for _ in 0..5 {
        let mut next = Vec::new();
        for s in &frontier {
            for c in [b'a', b'b', b'c'] {
                let mut t = s.clone();
                t.push(c);
                next.push(t);
            }
        }
        strings.extend(next.iter().cloned());
        frontier = next;
    }
    assert_eq!(strings.len(), 364);
    let mut checked = 0usize;
    for a in &strings {
        for b in &strings {
            assert_eq!(
                edit_distance(a, b),
                oracle(a, b),
                "mismatch on {:?} vs {:?}",
                String::from_utf8_lossy(a),
                String::from_utf8_lossy(b)
            );
            checked += 1;
        }
    }
    let kitten: Vec<char> = "kitten".chars().collect();
    let sitting: Vec<char> = "sitting".chars().collect();
    assert_eq!(edit_distance(&kitten, &sitting), 3);
    println!(
        "acceptance 11 PASS: edit distance matches brute-force oracle on {checked} pairs; kitten/sitting = 3"
    );
}
