//! Canary-based memorization audit.
//!
//! Out-of-distribution canaries are injected into training at scheduled
//! steps with controlled repetition counts. After training, each canary's
//! per-example score is ranked against a holdout population drawn from the
//! same canary distribution but never seen during training; the exposure of
//! a canary is `log2(N) - log2(rank)`. High exposure means the model fits
//! the inserted canary far better than it fits unseen canaries, which a
//! model that merely generalizes cannot do.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clipping::ClippingPolicy;
use crate::models::{example_score, mean_score, Dataset, Example, Model, ModelError, ModelKind, Target};
use crate::numerics::Vector;
use crate::trainer::{train_with_schedule, CanarySchedule, TrainConfig, TrainError, TrainTrajectory};
use crate::{Scalar, SeededRng};

#[derive(Debug, Error)]
pub enum MemorizationError {
    #[error("holdout set needs at least 2 examples, got {0}")]
    HoldoutTooSmall(usize),
    #[error("reference sequence must be non-empty")]
    EmptyReference,
    #[error("cohort insertion counts must be non-empty, positive, and distinct")]
    BadCohorts,
    #[error("need at least one canary per cohort")]
    NoCanaries,
    #[error("no seeds supplied")]
    NoSeeds,
    #[error("no policies supplied")]
    NoPolicies,
    #[error("canary offset must be finite")]
    BadOffset,
    #[error("schedule needs {required} placements but the run only has {capacity} (step, slot) pairs")]
    ScheduleTooDense { required: usize, capacity: usize },
    #[error("canary {canary_id} appeared {found} times in training, expected {expected}")]
    InsertionAudit { canary_id: u64, expected: usize, found: usize },
    #[error("holdout id {id} collides with a training canary")]
    HoldoutIdCollision { id: u64 },
    #[error("training failed under policy `{policy}`: {source}")]
    Training { policy: String, source: TrainError },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

// ---------------------------------------------------------------------------
// edit distance and character error rate

/// Levenshtein distance: minimum insertions + deletions + substitutions
/// turning `a` into `b`. Token-generic, so it serves both character- and
/// word-level error rates.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut curr = vec![0usize; b.len() + 1];
    for i in 1..=a.len() {
        curr[0] = i;
        for j in 1..=b.len() {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            curr[j] = (prev[j] + 1).min(curr[j - 1] + 1).min(prev[j - 1] + cost);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// Character error rate: edit distance over the reference length.
pub fn cer<F: Scalar>(hypothesis: &str, reference: &str) -> Result<F, MemorizationError> {
    let r: Vec<char> = reference.chars().collect();
    if r.is_empty() {
        return Err(MemorizationError::EmptyReference);
    }
    let h: Vec<char> = hypothesis.chars().collect();
    let dist = F::from_usize(edit_distance(&h, &r)).expect("distance fits scalar");
    Ok(dist / F::from_usize(r.len()).expect("length fits scalar"))
}

// ---------------------------------------------------------------------------
// exposure

/// Exposure of a canary score against a holdout population, with lower
/// scores meaning stronger memorization.
///
/// `rank = 1 + |{r : score(r) < canary_score}|`, clamped to `[1, N]`; ties
/// with holdout scores do not raise the rank. Returns
/// `log2(N) - log2(rank)`, so the value lies in `[0, log2 N]`.
pub fn exposure<F: Scalar>(canary_score: F, holdout_scores: &[F]) -> Result<F, MemorizationError> {
    let n = holdout_scores.len();
    if n < 2 {
        return Err(MemorizationError::HoldoutTooSmall(n));
    }
    let better = holdout_scores.iter().filter(|&&s| s < canary_score).count();
    let rank = (1 + better).min(n);
    let n = F::from_usize(n).expect("holdout size fits scalar");
    let rank = F::from_usize(rank).expect("rank fits scalar");
    Ok(n.log2() - rank.log2())
}

// ---------------------------------------------------------------------------
// canary generation

/// Target space canaries draw their random labels from.
#[derive(Debug, Clone, Copy)]
pub enum LabelSpace {
    Classes(usize),
    Real,
}

impl LabelSpace {
    pub fn for_model(model: &Model) -> LabelSpace {
        match model.kind {
            ModelKind::LinearRegression => LabelSpace::Real,
            ModelKind::LogisticRegression => LabelSpace::Classes(2),
            ModelKind::Mlp1 { classes, .. } => LabelSpace::Classes(classes),
        }
    }
}

/// Synthesizes out-of-distribution canaries: every feature is a unit
/// Gaussian shifted by `offset` (in training-distribution standard
/// deviations), and labels are assigned uniformly at random, so the task is
/// unlearnable in the canary region and fitting a canary requires
/// memorizing it.
pub fn generate_canaries<F: Scalar>(
    dim: usize,
    count: usize,
    offset: F,
    labels: LabelSpace,
    start_id: u64,
    cohort_id: Option<u32>,
    rng: &mut SeededRng,
) -> Vec<Example<F>> {
    (0..count)
        .map(|i| {
            let features = Vector::new(
                (0..dim)
                    .map(|_| offset + rng.standard_normal::<F>())
                    .collect(),
            )
            .expect("canary features are finite");
            let target = match labels {
                LabelSpace::Classes(k) => Target::Class(rng.index(k)),
                LabelSpace::Real => Target::Real(rng.uniform(-F::one(), F::one())),
            };
            Example {
                id: start_id + i as u64,
                features,
                target,
                is_canary: true,
                cohort_id,
            }
        })
        .collect()
}

/// A cohort of canaries that each appear `insertion_count` times over the
/// whole training run, at the recorded (step, slot) placements.
#[derive(Debug, Clone)]
pub struct CanaryCohort<F> {
    pub cohort_id: u32,
    pub insertion_count: u32,
    pub canaries: Vec<Example<F>>,
    pub schedule: Vec<ScheduledInsertion>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduledInsertion {
    pub canary_id: u64,
    pub step: usize,
    pub slot: usize,
}

/// Canary-distribution examples never inserted into training; the ranking
/// population for exposure.
#[derive(Debug, Clone)]
pub struct HoldoutSet<F> {
    examples: Vec<Example<F>>,
}

impl<F: Scalar> HoldoutSet<F> {
    pub fn new(examples: Vec<Example<F>>) -> Result<Self, MemorizationError> {
        if examples.len() < 2 {
            return Err(MemorizationError::HoldoutTooSmall(examples.len()));
        }
        Ok(HoldoutSet { examples })
    }

    pub fn examples(&self) -> &[Example<F>] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn check_disjoint_from<G>(&self, cohorts: &[CanaryCohort<G>]) -> Result<(), MemorizationError> {
        let trained: std::collections::HashSet<u64> = cohorts
            .iter()
            .flat_map(|c| c.canaries.iter().map(|e| e.id))
            .collect();
        for ex in &self.examples {
            if trained.contains(&ex.id) {
                return Err(MemorizationError::HoldoutIdCollision { id: ex.id });
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// secret-sharer harness

/// Audit-wide knobs: insertion counts per cohort, cohort size, holdout size,
/// and the canary feature offset in training-distribution sigmas.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SecretSharerSettings<F> {
    pub cohort_counts: Vec<u32>,
    pub canaries_per_cohort: usize,
    pub holdout_size: usize,
    pub canary_offset: F,
}

impl<F: Scalar> Default for SecretSharerSettings<F> {
    fn default() -> Self {
        SecretSharerSettings {
            cohort_counts: vec![1, 2, 4, 8, 16],
            canaries_per_cohort: 20,
            holdout_size: 1024,
            canary_offset: F::from_f64(5.0).expect("offset representable"),
        }
    }
}

impl<F: Scalar> SecretSharerSettings<F> {
    pub fn validate(&self) -> Result<(), MemorizationError> {
        if self.cohort_counts.is_empty() || self.cohort_counts.iter().any(|&k| k == 0) {
            return Err(MemorizationError::BadCohorts);
        }
        let mut sorted = self.cohort_counts.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(MemorizationError::BadCohorts);
        }
        if self.canaries_per_cohort == 0 {
            return Err(MemorizationError::NoCanaries);
        }
        if self.holdout_size < 2 {
            return Err(MemorizationError::HoldoutTooSmall(self.holdout_size));
        }
        if !self.canary_offset.is_finite() {
            return Err(MemorizationError::BadOffset);
        }
        Ok(())
    }
}

/// One (policy, cohort, seed) cell of the audit, with raw per-canary
/// exposures kept for pooled aggregation.
#[derive(Debug, Clone)]
pub struct ExposureRow<F> {
    pub policy: String,
    pub cohort_k: u32,
    pub seed: u64,
    pub exposures: Vec<F>,
    pub mean_exposure: F,
    pub std_exposure: F,
    pub train_metric: F,
    pub test_metric: F,
    pub gap: F,
}

#[derive(Debug, Clone)]
pub struct ExposureReport<F> {
    pub rows: Vec<ExposureRow<F>>,
    pub policies: Vec<String>,
    pub cohort_counts: Vec<u32>,
    pub seeds: Vec<u64>,
    pub holdout_size: usize,
}

pub(crate) fn mean_std<F: Scalar>(values: &[F]) -> (F, F) {
    if values.is_empty() {
        return (F::zero(), F::zero());
    }
    let n = F::from_usize(values.len()).expect("count fits scalar");
    let mean = values.iter().fold(F::zero(), |a, &b| a + b) / n;
    if values.len() < 2 {
        return (mean, F::zero());
    }
    let var = values
        .iter()
        .fold(F::zero(), |a, &b| a + (b - mean) * (b - mean))
        / (n - F::one());
    (mean, var.sqrt())
}

impl<F: Scalar> ExposureReport<F> {
    /// All per-canary exposures for a (policy, cohort) cell, pooled over
    /// seeds.
    pub fn pooled_exposures(&self, policy: &str, cohort_k: u32) -> Vec<F> {
        self.rows
            .iter()
            .filter(|r| r.policy == policy && r.cohort_k == cohort_k)
            .flat_map(|r| r.exposures.iter().copied())
            .collect()
    }

    pub fn pooled_cell(&self, policy: &str, cohort_k: u32) -> (F, F) {
        mean_std(&self.pooled_exposures(policy, cohort_k))
    }

    /// Mean (train metric, test metric, gap) across seeds for a policy.
    pub fn utility(&self, policy: &str) -> (F, F, F) {
        let mut train = Vec::new();
        let mut test = Vec::new();
        let mut gap = Vec::new();
        for row in self.rows.iter().filter(|r| r.policy == policy) {
            // utility repeats across a policy's cohort rows within a seed
            if row.cohort_k == self.cohort_counts[0] {
                train.push(row.train_metric);
                test.push(row.test_metric);
                gap.push(row.gap);
            }
        }
        (mean_std(&train).0, mean_std(&test).0, mean_std(&gap).0)
    }

    /// CSV export with 17-significant-digit floats.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("# clipgrain exposure v1\n");
        out.push_str("policy,cohort_k,seed,mean_exposure,std_exposure,train_metric,test_metric,gap\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
                r.policy, r.cohort_k, r.seed, r.mean_exposure, r.std_exposure,
                r.train_metric, r.test_metric, r.gap
            ));
        }
        out
    }

    /// Human-readable table: one row per policy, one column per insertion
    /// count, cells pooled over every seed's canaries.
    pub fn pretty_table(&self) -> String {
        let name_width = self
            .policies
            .iter()
            .map(String::len)
            .max()
            .unwrap_or(6)
            .max(6);
        let mut out = format!(
            "exposure by canary insertion count (mean +/- std over {} seeds x {} canaries, holdout N={})\n",
            self.seeds.len(),
            self.rows
                .first()
                .map_or(0, |r| r.exposures.len()),
            self.holdout_size
        );
        out.push_str(&format!("{:<name_width$}", "policy"));
        for k in &self.cohort_counts {
            out.push_str(&format!(" | {:>13}", format!("k={k}")));
        }
        out.push('\n');
        for policy in &self.policies {
            out.push_str(&format!("{policy:<name_width$}"));
            for &k in &self.cohort_counts {
                let (mean, std) = self.pooled_cell(policy, k);
                out.push_str(&format!(" | {:>13}", format!("{mean:.2} +/- {std:.2}")));
            }
            out.push('\n');
        }
        out.push('\n');
        out.push_str(&format!(
            "{:<name_width$} | {:>12} | {:>12} | {:>12}\n",
            "policy", "train_metric", "test_metric", "gen_gap"
        ));
        for policy in &self.policies {
            let (train, test, gap) = self.utility(policy);
            out.push_str(&format!(
                "{policy:<name_width$} | {train:>12.4} | {test:>12.4} | {gap:>12.4}\n"
            ));
        }
        out
    }
}

/// Mean score on the training set, and test-minus-train score difference.
pub fn generalization_gap<F: Scalar>(
    model: &Model,
    w: &Vector<F>,
    train_set: &[Example<F>],
    test_set: &[Example<F>],
) -> Result<(F, F), MemorizationError> {
    let train = mean_score(model, w, train_set)?;
    let test = mean_score(model, w, test_set)?;
    Ok((train, test - train))
}

/// Builds the per-seed cohorts, their non-colliding insertion schedule, and
/// the holdout population. Canary ids start above every id in `taken_below`.
pub fn build_cohorts<F: Scalar>(
    dim: usize,
    labels: LabelSpace,
    settings: &SecretSharerSettings<F>,
    iterations: usize,
    minibatch_size: usize,
    taken_below: u64,
    seed: u64,
) -> Result<(Vec<CanaryCohort<F>>, CanarySchedule<F>, HoldoutSet<F>), MemorizationError> {
    settings.validate()?;
    let required: usize = settings
        .cohort_counts
        .iter()
        .map(|&k| k as usize * settings.canaries_per_cohort)
        .sum();
    let capacity = iterations * minibatch_size;
    if required * 2 > capacity {
        return Err(MemorizationError::ScheduleTooDense { required, capacity });
    }

    let root = SeededRng::new(seed);
    let mut canary_rng = root.child(1);
    let mut holdout_rng = root.child(2);
    let mut schedule_rng = root.child(3);

    let mut next_id = taken_below;
    let mut cohorts = Vec::with_capacity(settings.cohort_counts.len());
    let mut occupied = std::collections::HashSet::new();
    let mut placements = Vec::with_capacity(required);
    for &k in &settings.cohort_counts {
        let canaries = generate_canaries(
            dim,
            settings.canaries_per_cohort,
            settings.canary_offset,
            labels,
            next_id,
            Some(k),
            &mut canary_rng,
        );
        next_id += settings.canaries_per_cohort as u64;
        let mut schedule = Vec::with_capacity(k as usize * canaries.len());
        for canary in &canaries {
            for _ in 0..k {
                // density guard above keeps this retry loop short
                let (step, slot) = loop {
                    let step = schedule_rng.bounded(iterations as u64) as usize + 1;
                    let slot = schedule_rng.index(minibatch_size);
                    if occupied.insert((step, slot)) {
                        break (step, slot);
                    }
                };
                schedule.push(ScheduledInsertion { canary_id: canary.id, step, slot });
                placements.push((step, slot, canary.clone()));
            }
        }
        cohorts.push(CanaryCohort {
            cohort_id: k,
            insertion_count: k,
            canaries,
            schedule,
        });
    }

    let holdout = HoldoutSet::new(generate_canaries(
        dim,
        settings.holdout_size,
        settings.canary_offset,
        labels,
        next_id,
        None,
        &mut holdout_rng,
    ))?;
    holdout.check_disjoint_from(&cohorts)?;
    let schedule = CanarySchedule::new(placements)?;
    Ok((cohorts, schedule, holdout))
}

/// Confirms every canary landed in sampled minibatches exactly its cohort's
/// insertion count, by replaying the trajectory's per-step canary ids.
pub fn audit_insertions<F: Scalar>(
    trajectory: &TrainTrajectory<F>,
    cohorts: &[CanaryCohort<F>],
) -> Result<(), MemorizationError> {
    let mut counts: std::collections::HashMap<u64, usize> = std::collections::HashMap::new();
    for step in &trajectory.steps {
        for &id in &step.canary_ids {
            *counts.entry(id).or_default() += 1;
        }
    }
    for cohort in cohorts {
        for canary in &cohort.canaries {
            let found = counts.get(&canary.id).copied().unwrap_or(0);
            let expected = cohort.insertion_count as usize;
            if found != expected {
                return Err(MemorizationError::InsertionAudit {
                    canary_id: canary.id,
                    expected,
                    found,
                });
            }
        }
    }
    Ok(())
}

/// Full secret-sharer audit: for each seed, build cohorts and a holdout,
/// train once per policy with the canaries injected, then score, rank, and
/// aggregate. Per-(seed, policy) trainings run concurrently; the report is
/// assembled in (seed, policy, cohort) order.
#[allow(clippy::too_many_arguments)]
pub fn run_secret_sharer<F: Scalar>(
    model: &Model,
    train_set: &Dataset<F>,
    test_set: &Dataset<F>,
    base_config: &TrainConfig<F>,
    policies: &[ClippingPolicy<F>],
    settings: &SecretSharerSettings<F>,
    seeds: &[u64],
) -> Result<ExposureReport<F>, MemorizationError> {
    settings.validate()?;
    if seeds.is_empty() {
        return Err(MemorizationError::NoSeeds);
    }
    if policies.is_empty() {
        return Err(MemorizationError::NoPolicies);
    }
    let labels = LabelSpace::for_model(model);
    let taken_below = train_set.max_id().max(test_set.max_id()) + 1;

    let mut artifacts = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        artifacts.push(build_cohorts(
            train_set.dim(),
            labels,
            settings,
            base_config.iterations,
            base_config.minibatch_size(),
            taken_below,
            seed,
        )?);
    }

    let jobs: Vec<(usize, usize)> = (0..seeds.len())
        .flat_map(|s| (0..policies.len()).map(move |p| (s, p)))
        .collect();
    let runs: Vec<Result<Vec<ExposureRow<F>>, MemorizationError>> = jobs
        .par_iter()
        .map(|&(seed_idx, policy_idx)| {
            let seed = seeds[seed_idx];
            let policy = &policies[policy_idx];
            let (cohorts, schedule, holdout) = &artifacts[seed_idx];
            let mut config = base_config.clone();
            config.seed = seed;
            config.policy = policy.clone();
            let trajectory = train_with_schedule(model, train_set, &config, Some(schedule))
                .map_err(|source| MemorizationError::Training {
                    policy: policy.tag(),
                    source,
                })?;
            audit_insertions(&trajectory, cohorts)?;
            let w = &trajectory.final_params;
            let holdout_scores: Vec<F> = holdout
                .examples()
                .iter()
                .map(|ex| example_score(model, w, ex))
                .collect::<Result<_, _>>()?;
            let (train_metric, gap) =
                generalization_gap(model, w, train_set.examples(), test_set.examples())?;
            let test_metric = train_metric + gap;
            let mut rows = Vec::with_capacity(cohorts.len());
            for cohort in cohorts {
                let exposures: Vec<F> = cohort
                    .canaries
                    .iter()
                    .map(|canary| {
                        let score = example_score(model, w, canary)?;
                        exposure(score, &holdout_scores)
                    })
                    .collect::<Result<_, _>>()?;
                let (mean_exposure, std_exposure) = mean_std(&exposures);
                rows.push(ExposureRow {
                    policy: policy.tag(),
                    cohort_k: cohort.insertion_count,
                    seed,
                    exposures,
                    mean_exposure,
                    std_exposure,
                    train_metric,
                    test_metric,
                    gap,
                });
            }
            Ok(rows)
        })
        .collect();

    let mut rows = Vec::new();
    for run in runs {
        rows.extend(run?);
    }
    Ok(ExposureReport {
        rows,
        policies: policies.iter().map(ClippingPolicy::tag).collect(),
        cohort_counts: settings.cohort_counts.clone(),
        seeds: seeds.to_vec(),
        holdout_size: settings.holdout_size,
    })
}
