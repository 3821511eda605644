//! Clipping-policy algebra over per-core gradients.
//!
//! Per-core clipping rescales each core's shard-mean gradient to at most a
//! fixed L2 bound before cross-core aggregation. The adaptive variant uses
//! the minimum per-core norm of the current step as the bound, which removes
//! the hyperparameter. Per-example and micro-batch clipping apply the same
//! rescaling below the core level and average the clipped pieces back into a
//! per-core gradient, keeping all policies commensurable under the
//! shard-mean convention.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{NumericsError, Vector};
use crate::Scalar;

#[derive(Debug, Error)]
pub enum ClipError {
    #[error("clipping bound must be positive")]
    NonPositiveBound,
    #[error("adaptive bound needs at least one per-core gradient")]
    EmptyGradientSet,
    #[error("policy requires per-example gradients but none were supplied")]
    MissingPerExampleGradients,
    #[error("per-example gradients supplied but the policy does not use them")]
    UnexpectedPerExampleGradients,
    #[error("per-example gradients cover {found} cores, expected {expected}")]
    CoreCountMismatch { expected: usize, found: usize },
    #[error("micro-batch size {micro_size} does not divide per-core batch size {batch}")]
    MicroSizeMismatch { micro_size: usize, batch: usize },
    #[error("core {core} has an empty sub-gradient list")]
    EmptySubGradients { core: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Where in the minibatch the clipping bound is enforced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClippingPolicy<F> {
    /// Pass-through; gradients aggregate unmodified.
    None,
    /// Clip each core's shard-mean gradient to `bound`.
    PerCore { bound: F },
    /// Clip every core to the step's minimum per-core norm.
    AdaptivePerCore,
    /// Clip each example's gradient to `bound`, then average per core.
    PerExample { bound: F },
    /// Clip each micro-batch mean (groups of `micro_size` examples inside a
    /// core) to `bound`, then average per core.
    MicroBatch { bound: F, micro_size: usize },
}

impl<F: Scalar> ClippingPolicy<F> {
    /// Config-time validation. `per_core_batch` is the B the policy will run
    /// under; micro-batch sizes must divide it.
    pub fn validate(&self, per_core_batch: usize) -> Result<(), ClipError> {
        match *self {
            ClippingPolicy::None | ClippingPolicy::AdaptivePerCore => Ok(()),
            ClippingPolicy::PerCore { bound } | ClippingPolicy::PerExample { bound } => {
                check_bound(bound)
            }
            ClippingPolicy::MicroBatch { bound, micro_size } => {
                check_bound(bound)?;
                if micro_size == 0 || per_core_batch % micro_size != 0 {
                    return Err(ClipError::MicroSizeMismatch {
                        micro_size,
                        batch: per_core_batch,
                    });
                }
                Ok(())
            }
        }
    }

    pub fn needs_per_example_gradients(&self) -> bool {
        matches!(
            self,
            ClippingPolicy::PerExample { .. } | ClippingPolicy::MicroBatch { .. }
        )
    }

    /// Filesystem-safe identifier used for output directories and reports.
    pub fn tag(&self) -> String {
        match self {
            ClippingPolicy::None => "none".into(),
            ClippingPolicy::PerCore { bound } => format!("per_core_{bound}"),
            ClippingPolicy::AdaptivePerCore => "adaptive_per_core".into(),
            ClippingPolicy::PerExample { bound } => format!("per_example_{bound}"),
            ClippingPolicy::MicroBatch { bound, micro_size } => {
                format!("micro_batch_{bound}_m{micro_size}")
            }
        }
    }
}

impl<F: Scalar> std::fmt::Display for ClippingPolicy<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ClippingPolicy::None => write!(f, "none"),
            ClippingPolicy::PerCore { bound } => write!(f, "per-core@{bound}"),
            ClippingPolicy::AdaptivePerCore => write!(f, "adaptive-per-core"),
            ClippingPolicy::PerExample { bound } => write!(f, "per-example@{bound}"),
            ClippingPolicy::MicroBatch { bound, micro_size } => {
                write!(f, "micro-batch@{bound}/{micro_size}")
            }
        }
    }
}

/// A positive bound may be `+inf` (the never-binding sentinel) but not NaN.
fn check_bound<F: Scalar>(bound: F) -> Result<(), ClipError> {
    if bound.is_nan() || bound <= F::zero() {
        return Err(ClipError::NonPositiveBound);
    }
    Ok(())
}

/// One core's shard-mean gradient with its cached L2 norm.
#[derive(Debug, Clone, PartialEq)]
pub struct PerCoreGradient<F> {
    pub core_index: usize,
    pub grad: Vector<F>,
    pub norm: F,
}

impl<F: Scalar> PerCoreGradient<F> {
    pub fn new(core_index: usize, grad: Vector<F>) -> Self {
        let norm = grad.l2_norm();
        PerCoreGradient { core_index, grad, norm }
    }

    /// Recomputable check of the cached norm.
    pub fn norm_is_consistent(&self) -> bool {
        self.norm == self.grad.l2_norm()
    }
}

/// Per-core clipped gradients in core-index order, plus the bound that was
/// enforced this step (absent for the pass-through policy).
#[derive(Debug, Clone, PartialEq)]
pub struct ClippedGradientSet<F> {
    pub grads: Vec<Vector<F>>,
    pub applied_bound: Option<F>,
}

/// Rescales `v` to L2 norm at most `b`.
///
/// Vectors already within the bound (including the zero vector) are returned
/// bit-for-bit unchanged.
pub fn clip_to_bound<F: Scalar>(v: &Vector<F>, b: F) -> Result<Vector<F>, ClipError> {
    check_bound(b)?;
    let norm = v.l2_norm();
    if norm <= b {
        Ok(v.clone())
    } else {
        Ok(v.scale(b / norm)?)
    }
}

/// Minimum cached norm across the per-core gradients.
pub fn adaptive_bound<F: Scalar>(grads: &[PerCoreGradient<F>]) -> Result<F, ClipError> {
    grads
        .iter()
        .map(|g| g.norm)
        .fold(None, |acc: Option<F>, n| {
            Some(match acc {
                Some(a) => a.min(n),
                None => n,
            })
        })
        .ok_or(ClipError::EmptyGradientSet)
}

/// Mean of sub-gradient vectors, summed in the order given.
fn mean_vectors<F: Scalar>(vectors: &[Vector<F>]) -> Result<Vector<F>, ClipError> {
    let first = vectors.first().ok_or(ClipError::EmptyGradientSet)?;
    let mut acc = vec![F::zero(); first.len()];
    for v in vectors {
        for (a, &x) in acc.iter_mut().zip(v.iter()) {
            *a = *a + x;
        }
    }
    let n = F::from_usize(vectors.len()).expect("sub-gradient count fits scalar");
    Ok(Vector::new(acc.into_iter().map(|a| a / n).collect())?)
}

/// Applies a clipping policy to one step's per-core gradients.
///
/// `per_example` must be supplied exactly when the policy operates below the
/// core level: one list of per-example gradients per core, in shard position
/// order. Micro-batches are contiguous position groups within a core and
/// never span cores.
pub fn apply_policy<F: Scalar>(
    policy: &ClippingPolicy<F>,
    grads: &[PerCoreGradient<F>],
    per_example: Option<&[Vec<Vector<F>>]>,
) -> Result<ClippedGradientSet<F>, ClipError> {
    if policy.needs_per_example_gradients() {
        let per_example = per_example.ok_or(ClipError::MissingPerExampleGradients)?;
        if per_example.len() != grads.len() {
            return Err(ClipError::CoreCountMismatch {
                expected: grads.len(),
                found: per_example.len(),
            });
        }
        let (bound, micro_size) = match *policy {
            ClippingPolicy::PerExample { bound } => (bound, 1),
            ClippingPolicy::MicroBatch { bound, micro_size } => (bound, micro_size),
            _ => unreachable!(),
        };
        check_bound(bound)?;
        let mut out = Vec::with_capacity(grads.len());
        for (core, subs) in per_example.iter().enumerate() {
            if subs.is_empty() {
                return Err(ClipError::EmptySubGradients { core });
            }
            if micro_size == 0 || subs.len() % micro_size != 0 {
                return Err(ClipError::MicroSizeMismatch {
                    micro_size,
                    batch: subs.len(),
                });
            }
            let mut clipped = Vec::with_capacity(subs.len() / micro_size);
            for group in subs.chunks(micro_size) {
                let micro_mean = mean_vectors(group)?;
                clipped.push(clip_to_bound(&micro_mean, bound)?);
            }
            out.push(mean_vectors(&clipped)?);
        }
        return Ok(ClippedGradientSet { grads: out, applied_bound: Some(bound) });
    }
    if per_example.is_some() {
        return Err(ClipError::UnexpectedPerExampleGradients);
    }
    match *policy {
        ClippingPolicy::None => Ok(ClippedGradientSet {
            grads: grads.iter().map(|g| g.grad.clone()).collect(),
            applied_bound: None,
        }),
        ClippingPolicy::PerCore { bound } => {
            let clipped: Result<Vec<_>, _> =
                grads.iter().map(|g| clip_to_bound(&g.grad, bound)).collect();
            Ok(ClippedGradientSet { grads: clipped?, applied_bound: Some(bound) })
        }
        ClippingPolicy::AdaptivePerCore => {
            let bound = adaptive_bound(grads)?;
            // all norms must be known before any core is scaled; the lowest-
            // index argmin is the canonical unchanged core
            let argmin = grads
                .iter()
                .position(|g| g.norm == bound)
                .expect("minimum comes from the list");
            let mut out = Vec::with_capacity(grads.len());
            for (i, g) in grads.iter().enumerate() {
                if i == argmin {
                    out.push(g.grad.clone());
                } else if g.norm == F::zero() {
                    out.push(Vector::zeros(g.grad.len()));
                } else {
                    out.push(g.grad.scale(bound / g.norm)?);
                }
            }
            Ok(ClippedGradientSet { grads: out, applied_bound: Some(bound) })
        }
        _ => unreachable!("per-example variants handled above"),
    }
}
