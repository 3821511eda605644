//! Data-parallel minibatch SGD: uniform sampling with replacement, contiguous
//! sharding across C logical cores, parallel per-core gradient evaluation,
//! policy application, and a fixed-order cross-core reduction.
//!
//! Cores are logical tasks over immutable inputs; the reduction always runs
//! in ascending core-index order, so trajectories are bit-for-bit
//! reproducible regardless of task scheduling. Cross-core aggregation is a
//! sum of the clipped per-core gradients, not a mean.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clipping::{apply_policy, ClipError, ClippingPolicy, PerCoreGradient};
use crate::models::{
    batch_gradient, init_params, mean_in_id_order, mean_score, per_example_gradients, Dataset,
    Example, Model, ModelError,
};
use crate::numerics::{axpy, NumericsError, Vector};
use crate::{Scalar, SeededRng};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid train config: {field}: {message}")]
    BadConfig { field: String, message: String },
    #[error("dataset must be non-empty for training")]
    EmptyDataset,
    #[error("minibatch has {found} examples, expected B*C = {expected}")]
    ShardSize { expected: usize, found: usize },
    #[error("gradient evaluation failed on core {core}: {source}")]
    CoreGradient { core: usize, source: ModelError },
    #[error("clipping failed: {0}")]
    Clip(#[from] ClipError),
    #[error("canary schedule invalid: {0}")]
    BadSchedule(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Inputs of one training run: iterations T, cores C, per-core batch size B,
/// learning rate r, clipping policy, seed, and evaluation cadence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig<F> {
    pub iterations: usize,
    pub cores: usize,
    pub per_core_batch: usize,
    pub learning_rate: F,
    pub policy: ClippingPolicy<F>,
    pub seed: u64,
    pub eval_every: usize,
}

impl<F: Scalar> TrainConfig<F> {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |field: &str, message: &str| TrainError::BadConfig {
            field: field.into(),
            message: message.into(),
        };
        if self.cores == 0 {
            return Err(bad("cores", "must be >= 1"));
        }
        if self.per_core_batch == 0 {
            return Err(bad("per_core_batch", "must be >= 1"));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= F::zero() {
            return Err(bad("learning_rate", "must be positive and finite"));
        }
        if self.eval_every == 0 {
            return Err(bad("eval_every", "must be >= 1"));
        }
        self.policy
            .validate(self.per_core_batch)
            .map_err(|e| bad("policy", &e.to_string()))
    }

    pub fn minibatch_size(&self) -> usize {
        self.per_core_batch * self.cores
    }
}

/// Canary placements keyed by training step. Slots index into the flat
/// minibatch of size B*C; each (step, slot) pair is used at most once.
#[derive(Debug, Clone)]
pub struct CanarySchedule<F> {
    by_step: BTreeMap<usize, Vec<(usize, Example<F>)>>,
    insertions: usize,
}

impl<F: Scalar> CanarySchedule<F> {
    pub fn new(placements: Vec<(usize, usize, Example<F>)>) -> Result<Self, TrainError> {
        let mut seen = std::collections::HashSet::new();
        let mut by_step: BTreeMap<usize, Vec<(usize, Example<F>)>> = BTreeMap::new();
        let insertions = placements.len();
        for (step, slot, example) in placements {
            if step == 0 {
                return Err(TrainError::BadSchedule("steps are 1-based".into()));
            }
            if !seen.insert((step, slot)) {
                return Err(TrainError::BadSchedule(format!(
                    "duplicate placement at step {step}, slot {slot}"
                )));
            }
            by_step.entry(step).or_default().push((slot, example));
        }
        Ok(CanarySchedule { by_step, insertions })
    }

    pub fn empty() -> Self {
        CanarySchedule { by_step: BTreeMap::new(), insertions: 0 }
    }

    pub fn insertions(&self) -> usize {
        self.insertions
    }

    pub fn placements_at(&self, step: usize) -> &[(usize, Example<F>)] {
        self.by_step.get(&step).map_or(&[], Vec::as_slice)
    }

    fn validate_for(&self, iterations: usize, minibatch: usize) -> Result<(), TrainError> {
        for (&step, slots) in &self.by_step {
            if step > iterations {
                return Err(TrainError::BadSchedule(format!(
                    "placement at step {step} beyond T = {iterations}"
                )));
            }
            if let Some((slot, _)) = slots.iter().find(|(slot, _)| *slot >= minibatch) {
                return Err(TrainError::BadSchedule(format!(
                    "slot {slot} beyond minibatch size {minibatch}"
                )));
            }
        }
        Ok(())
    }
}

/// Per-step observables plus the canary ids that landed in this minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord<F> {
    pub step: usize,
    pub minibatch_loss: F,
    pub per_core_norms: Vec<F>,
    pub applied_bound: Option<F>,
    pub agg_grad_norm: F,
    pub canary_ids: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSnapshot<F> {
    pub step: usize,
    pub dataset_loss: F,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrajectory<F> {
    pub steps: Vec<StepRecord<F>>,
    pub final_params: Vector<F>,
    pub evals: Vec<EvalSnapshot<F>>,
}

impl<F: Scalar> TrainTrajectory<F> {
    /// CSV export; all floats carry 17 significant digits so the file
    /// round-trips exactly.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("# clipgrain trajectory v1\n");
        out.push_str("step,loss,min_core_norm,max_core_norm,applied_bound,agg_grad_norm\n");
        for rec in &self.steps {
            let min = rec
                .per_core_norms
                .iter()
                .copied()
                .fold(F::infinity(), F::min);
            let max = rec
                .per_core_norms
                .iter()
                .copied()
                .fold(F::neg_infinity(), F::max);
            let bound = rec
                .applied_bound
                .map_or(String::new(), |b| format!("{b:.16e}"));
            out.push_str(&format!(
                "{},{:.16e},{:.16e},{:.16e},{},{:.16e}\n",
                rec.step, rec.minibatch_loss, min, max, bound, rec.agg_grad_norm
            ));
        }
        out
    }
}

/// Draws `B*C` examples uniformly with replacement, then substitutes any
/// canaries scheduled for this step into their slots.
///
/// Canary substitution consumes no randomness, so runs that differ only in
/// their schedule (or policy) sample identically.
pub fn sample_minibatch<F: Scalar>(
    dataset: &Dataset<F>,
    per_core_batch: usize,
    cores: usize,
    rng: &mut SeededRng,
    schedule: Option<&CanarySchedule<F>>,
    step: usize,
) -> Vec<Example<F>> {
    let n = per_core_batch * cores;
    let mut minibatch = Vec::with_capacity(n);
    for _ in 0..n {
        let idx = rng.index(dataset.len());
        minibatch.push(dataset.examples()[idx].clone());
    }
    if let Some(schedule) = schedule {
        for (slot, canary) in schedule.placements_at(step) {
            minibatch[*slot] = canary.clone();
        }
    }
    minibatch
}

/// Splits the minibatch into C contiguous shards of B examples; shard `c`
/// holds positions `[B*c, B*(c+1))`.
pub fn shard<F>(
    minibatch: &[Example<F>],
    per_core_batch: usize,
    cores: usize,
) -> Result<Vec<&[Example<F>]>, TrainError> {
    let expected = per_core_batch * cores;
    if minibatch.len() != expected {
        return Err(TrainError::ShardSize { expected, found: minibatch.len() });
    }
    Ok(minibatch.chunks(per_core_batch).collect())
}

/// One SGD step: per-core shard-mean gradients (evaluated in parallel),
/// policy application, sum aggregation in core-index order, and the update
/// `w - r * g_t`.
pub fn train_step<F: Scalar>(
    model: &Model,
    w: &Vector<F>,
    minibatch: &[Example<F>],
    config: &TrainConfig<F>,
    step: usize,
) -> Result<(Vector<F>, StepRecord<F>), TrainError> {
    let shards = shard(minibatch, config.per_core_batch, config.cores)?;
    let needs_sub = config.policy.needs_per_example_gradients();

    // Evaluate cores in parallel, then surface the lowest failing core so
    // the abort diagnostic is deterministic.
    let evaluated: Vec<Result<(PerCoreGradient<F>, Option<Vec<Vector<F>>>), ModelError>> = shards
        .par_iter()
        .enumerate()
        .map(|(core, shard)| {
            if needs_sub {
                let subs = per_example_gradients(model, w, shard)?;
                let mean = mean_in_id_order(shard, &subs)?;
                Ok((PerCoreGradient::new(core, mean), Some(subs)))
            } else {
                let mean = batch_gradient(model, w, shard)?;
                Ok((PerCoreGradient::new(core, mean), None))
            }
        })
        .collect();
    let mut per_core = Vec::with_capacity(shards.len());
    let mut sub_grads = Vec::with_capacity(if needs_sub { shards.len() } else { 0 });
    for (core, item) in evaluated.into_iter().enumerate() {
        let (grad, subs) = item.map_err(|source| TrainError::CoreGradient { core, source })?;
        per_core.push(grad);
        if let Some(subs) = subs {
            sub_grads.push(subs);
        }
    }

    let clipped = apply_policy(
        &config.policy,
        &per_core,
        if needs_sub { Some(&sub_grads) } else { None },
    )?;

    // cross-core aggregation: sum in ascending core-index order
    let mut acc = vec![F::zero(); w.len()];
    for g in &clipped.grads {
        for (a, &x) in acc.iter_mut().zip(g.iter()) {
            *a = *a + x;
        }
    }
    let aggregated = Vector::new(acc)?;
    let new_w = axpy(-config.learning_rate, &aggregated, w)?;

    let record = StepRecord {
        step,
        minibatch_loss: mean_score(model, w, minibatch)?,
        per_core_norms: per_core.iter().map(|g| g.norm).collect(),
        applied_bound: clipped.applied_bound,
        agg_grad_norm: aggregated.l2_norm(),
        canary_ids: minibatch.iter().filter(|e| e.is_canary).map(|e| e.id).collect(),
    };
    Ok((new_w, record))
}

/// Runs T steps from freshly initialized parameters. Deterministic given
/// `(config.seed, dataset, schedule)`.
pub fn train_with_schedule<F: Scalar>(
    model: &Model,
    dataset: &Dataset<F>,
    config: &TrainConfig<F>,
    schedule: Option<&CanarySchedule<F>>,
) -> Result<TrainTrajectory<F>, TrainError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if let Some(schedule) = schedule {
        schedule.validate_for(config.iterations, config.minibatch_size())?;
    }
    let mut rng = SeededRng::new(config.seed);
    let mut w = init_params(model, &mut rng);
    let mut steps = Vec::with_capacity(config.iterations);
    let mut evals = Vec::new();
    for step in 1..=config.iterations {
        let minibatch = sample_minibatch(
            dataset,
            config.per_core_batch,
            config.cores,
            &mut rng,
            schedule,
            step,
        );
        let (next, record) = train_step(model, &w, &minibatch, config, step)?;
        w = next;
        steps.push(record);
        if step % config.eval_every == 0 {
            evals.push(EvalSnapshot {
                step,
                dataset_loss: mean_score(model, &w, dataset.examples())?,
            });
        }
    }
    Ok(TrainTrajectory { steps, final_params: w, evals })
}

pub fn train<F: Scalar>(
    model: &Model,
    dataset: &Dataset<F>,
    config: &TrainConfig<F>,
) -> Result<TrainTrajectory<F>, TrainError> {
    train_with_schedule(model, dataset, config, None)
}
