//! Fixed suite of differentiable toy models: linear regression, binary
//! logistic regression, and a one-hidden-layer tanh MLP with softmax output.
//!
//! Each model exposes a per-example loss and its analytic gradient over a
//! flat parameter vector, which is everything the trainer needs. Losses use
//! log-sum-exp / softplus stabilization so extreme logits stay finite.

pub mod format;
pub mod synth;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{NumericsError, Vector};
use crate::{Scalar, SeededRng};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("feature dimension {found} does not match model input dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("parameter vector has length {found}, model needs {expected}")]
    ParamLength { expected: usize, found: usize },
    #[error("target {0} is incompatible with the model task")]
    BadTarget(String),
    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },
    #[error("batch must be non-empty")]
    EmptyBatch,
    #[error("invalid model configuration: {0}")]
    BadConfig(String),
    #[error("dataset line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("dataset invariant violated: {0}")]
    BadDataset(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Supervised target; the variant must match the model task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Target<F> {
    Real(F),
    Class(usize),
}

/// One training or evaluation example.
#[derive(Debug, Clone, PartialEq)]
pub struct Example<F> {
    pub id: u64,
    pub features: Vector<F>,
    pub target: Target<F>,
    pub is_canary: bool,
    pub cohort_id: Option<u32>,
}

impl<F: Scalar> Example<F> {
    pub fn new(id: u64, features: Vector<F>, target: Target<F>) -> Self {
        Example {
            id,
            features,
            target,
            is_canary: false,
            cohort_id: None,
        }
    }
}

/// Ordered collection of examples with a consistent feature dimension.
#[derive(Debug, Clone)]
pub struct Dataset<F> {
    examples: Vec<Example<F>>,
    dim: usize,
}

impl<F: Scalar> Dataset<F> {
    /// Validates dimension consistency and id uniqueness.
    pub fn new(examples: Vec<Example<F>>) -> Result<Self, ModelError> {
        let dim = examples.first().map_or(0, |e| e.features.len());
        let mut ids: Vec<u64> = examples.iter().map(|e| e.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(ModelError::BadDataset("duplicate example id".into()));
        }
        if let Some(e) = examples.iter().find(|e| e.features.len() != dim) {
            return Err(ModelError::DimensionMismatch {
                expected: dim,
                found: e.features.len(),
            });
        }
        Ok(Dataset { examples, dim })
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

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn max_id(&self) -> u64 {
        self.examples.iter().map(|e| e.id).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    LinearRegression,
    LogisticRegression,
    Mlp1 { hidden: usize, classes: usize },
}

/// Named slice of the flat parameter vector.
///
/// `fan_in == 0` marks a bias segment, initialized to zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub name: &'static str,
    pub offset: usize,
    pub len: usize,
    pub fan_in: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Model {
    pub kind: ModelKind,
    pub input_dim: usize,
}

impl Model {
    pub fn new(kind: ModelKind, input_dim: usize) -> Result<Self, ModelError> {
        if input_dim == 0 {
            return Err(ModelError::BadConfig("input_dim must be >= 1".into()));
        }
        if let ModelKind::Mlp1 { hidden, classes } = kind {
            if hidden == 0 {
                return Err(ModelError::BadConfig("hidden width must be >= 1".into()));
            }
            if classes < 2 {
                return Err(ModelError::BadConfig("need at least 2 classes".into()));
            }
        }
        Ok(Model { kind, input_dim })
    }

    /// Disjoint segments covering the full parameter vector, in order.
    pub fn layout(&self) -> Vec<Segment> {
        let d = self.input_dim;
        match self.kind {
            ModelKind::LinearRegression | ModelKind::LogisticRegression => vec![
                Segment { name: "weights", offset: 0, len: d, fan_in: d },
                Segment { name: "bias", offset: d, len: 1, fan_in: 0 },
            ],
            ModelKind::Mlp1 { hidden: h, classes: k } => vec![
                Segment { name: "w1", offset: 0, len: h * d, fan_in: d },
                Segment { name: "b1", offset: h * d, len: h, fan_in: 0 },
                Segment { name: "w2", offset: h * d + h, len: k * h, fan_in: h },
                Segment { name: "b2", offset: h * d + h + k * h, len: k, fan_in: 0 },
            ],
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().iter().map(|s| s.len).sum()
    }

    fn check_example<F: Scalar>(&self, ex: &Example<F>) -> Result<(), ModelError> {
        if ex.features.len() != self.input_dim {
            return Err(ModelError::DimensionMismatch {
                expected: self.input_dim,
                found: ex.features.len(),
            });
        }
        match (self.kind, &ex.target) {
            (ModelKind::LinearRegression, Target::Real(_)) => Ok(()),
            (ModelKind::LogisticRegression, Target::Class(c)) => {
                if *c < 2 {
                    Ok(())
                } else {
                    Err(ModelError::ClassOutOfRange { index: *c, classes: 2 })
                }
            }
            (ModelKind::Mlp1 { classes, .. }, Target::Class(c)) => {
                if *c < classes {
                    Ok(())
                } else {
                    Err(ModelError::ClassOutOfRange { index: *c, classes })
                }
            }
            (_, t) => Err(ModelError::BadTarget(format!("{t:?}"))),
        }
    }

    fn check_params<F: Scalar>(&self, w: &Vector<F>) -> Result<(), ModelError> {
        if w.len() != self.param_count() {
            return Err(ModelError::ParamLength {
                expected: self.param_count(),
                found: w.len(),
            });
        }
        Ok(())
    }
}

/// Weights drawn uniform in `[-1/sqrt(fan_in), +1/sqrt(fan_in)]`, biases zero.
pub fn init_params<F: Scalar>(model: &Model, rng: &mut SeededRng) -> Vector<F> {
    let mut values = vec![F::zero(); model.param_count()];
    for seg in model.layout() {
        if seg.fan_in == 0 {
            continue;
        }
        let bound = 1.0 / (seg.fan_in as f64).sqrt();
        let (lo, hi) = (
            F::from_f64(-bound).expect("init bound representable"),
            F::from_f64(bound).expect("init bound representable"),
        );
        for slot in &mut values[seg.offset..seg.offset + seg.len] {
            *slot = rng.uniform(lo, hi);
        }
    }
    Vector::new(values).expect("init draws are finite")
}

fn sigmoid<F: Scalar>(z: F) -> F {
    if z >= F::zero() {
        F::one() / (F::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (F::one() + e)
    }
}

/// `ln(1 + exp(z))` without overflow.
fn softplus<F: Scalar>(z: F) -> F {
    z.max(F::zero()) + (-z.abs()).exp().ln_1p()
}

struct MlpForward<F> {
    hidden: Vec<F>,
    logits: Vec<F>,
}

fn mlp_forward<F: Scalar>(
    d: usize,
    h: usize,
    k: usize,
    w: &[F],
    x: &[F],
) -> MlpForward<F> {
    let (w1, rest) = w.split_at(h * d);
    let (b1, rest) = rest.split_at(h);
    let (w2, b2) = rest.split_at(k * h);
    let mut hidden = Vec::with_capacity(h);
    for j in 0..h {
        let mut a = b1[j];
        for i in 0..d {
            a = a + w1[j * d + i] * x[i];
        }
        hidden.push(a.tanh());
    }
    let mut logits = Vec::with_capacity(k);
    for c in 0..k {
        let mut z = b2[c];
        for j in 0..h {
            z = z + w2[c * h + j] * hidden[j];
        }
        logits.push(z);
    }
    MlpForward { hidden, logits }
}

fn log_sum_exp<F: Scalar>(z: &[F]) -> F {
    let m = z.iter().copied().fold(F::neg_infinity(), F::max);
    let mut acc = F::zero();
    for &v in z {
        acc = acc + (v - m).exp();
    }
    m + acc.ln()
}

/// Per-example loss: squared error for regression, stabilized cross-entropy
/// for the classifiers. Always finite and non-negative for finite inputs.
pub fn example_loss<F: Scalar>(
    model: &Model,
    w: &Vector<F>,
    ex: &Example<F>,
) -> Result<F, ModelError> {
    model.check_params(w)?;
    model.check_example(ex)?;
    let x = ex.features.as_slice();
    let p = w.as_slice();
    let d = model.input_dim;
    let half = F::from_f64(0.5).expect("0.5 representable");
    match (model.kind, &ex.target) {
        (ModelKind::LinearRegression, Target::Real(y)) => {
            let mut pred = p[d];
            for i in 0..d {
                pred = pred + p[i] * x[i];
            }
            let r = pred - *y;
            Ok(half * r * r)
        }
        (ModelKind::LogisticRegression, Target::Class(y)) => {
            let mut z = p[d];
            for i in 0..d {
                z = z + p[i] * x[i];
            }
            let y = F::from_usize(*y).expect("class fits scalar");
            Ok(softplus(z) - z * y)
        }
        (ModelKind::Mlp1 { hidden: h, classes: k }, Target::Class(y)) => {
            let fwd = mlp_forward(d, h, k, p, x);
            Ok(log_sum_exp(&fwd.logits) - fwd.logits[*y])
        }
        _ => unreachable!("target checked above"),
    }
}

/// Analytic gradient of [`example_loss`] with respect to `w`.
pub fn example_gradient<F: Scalar>(
    model: &Model,
    w: &Vector<F>,
    ex: &Example<F>,
) -> Result<Vector<F>, ModelError> {
    model.check_params(w)?;
    model.check_example(ex)?;
    let x = ex.features.as_slice();
    let p = w.as_slice();
    let d = model.input_dim;
    let mut g = vec![F::zero(); w.len()];
    match (model.kind, &ex.target) {
        (ModelKind::LinearRegression, Target::Real(y)) => {
            let mut pred = p[d];
            for i in 0..d {
                pred = pred + p[i] * x[i];
            }
            let r = pred - *y;
            for i in 0..d {
                g[i] = r * x[i];
            }
            g[d] = r;
        }
        (ModelKind::LogisticRegression, Target::Class(y)) => {
            let mut z = p[d];
            for i in 0..d {
                z = z + p[i] * x[i];
            }
            let dz = sigmoid(z) - F::from_usize(*y).expect("class fits scalar");
            for i in 0..d {
                g[i] = dz * x[i];
            }
            g[d] = dz;
        }
        (ModelKind::Mlp1 { hidden: h, classes: k }, Target::Class(y)) => {
            let fwd = mlp_forward(d, h, k, p, x);
            let lse = log_sum_exp(&fwd.logits);
            // dz = softmax(z) - one_hot(y)
            let mut dz: Vec<F> = fwd.logits.iter().map(|&z| (z - lse).exp()).collect();
            dz[*y] = dz[*y] - F::one();
            let w1_off = 0;
            let b1_off = h * d;
            let w2_off = h * d + h;
            let b2_off = h * d + h + k * h;
            for c in 0..k {
                for j in 0..h {
                    g[w2_off + c * h + j] = dz[c] * fwd.hidden[j];
                }
                g[b2_off + c] = dz[c];
            }
            for j in 0..h {
                let mut dh = F::zero();
                for c in 0..k {
                    dh = dh + p[w2_off + c * h + j] * dz[c];
                }
                let da = dh * (F::one() - fwd.hidden[j] * fwd.hidden[j]);
                for i in 0..d {
                    g[w1_off + j * d + i] = da * x[i];
                }
                g[b1_off + j] = da;
            }
        }
        _ => unreachable!("target checked above"),
    }
    Ok(Vector::new(g)?)
}

/// Analytic gradients for each example, in input order.
pub fn per_example_gradients<F: Scalar>(
    model: &Model,
    w: &Vector<F>,
    batch: &[Example<F>],
) -> Result<Vec<Vector<F>>, ModelError> {
    batch.iter().map(|ex| example_gradient(model, w, ex)).collect()
}

/// Mean of per-example gradients, accumulated in ascending example-id order
/// regardless of input order, so permuting the batch cannot change the
/// result even in the last bit.
pub fn batch_gradient<F: Scalar>(
    model: &Model,
    w: &Vector<F>,
    batch: &[Example<F>],
) -> Result<Vector<F>, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let grads = per_example_gradients(model, w, batch)?;
    Ok(mean_in_id_order(batch, &grads)?)
}

/// Sums `grads` in ascending id order of the owning examples and divides by
/// the count. `grads[i]` must belong to `batch[i]`.
pub(crate) fn mean_in_id_order<F: Scalar>(
    batch: &[Example<F>],
    grads: &[Vector<F>],
) -> Result<Vector<F>, NumericsError> {
    debug_assert_eq!(batch.len(), grads.len());
    let mut order: Vec<usize> = (0..batch.len()).collect();
    order.sort_by_key(|&i| batch[i].id);
    let mut acc = vec![F::zero(); grads[0].len()];
    for &i in &order {
        for (a, &g) in acc.iter_mut().zip(grads[i].iter()) {
            *a = *a + g;
        }
    }
    let n = F::from_usize(batch.len()).expect("batch size fits scalar");
    Vector::new(acc.into_iter().map(|a| a / n).collect())
}

/// Per-example metric used for exposure ranking; lower means better fit.
///
/// Defined as [`example_loss`].
pub fn example_score<F: Scalar>(
    model: &Model,
    w: &Vector<F>,
    ex: &Example<F>,
) -> Result<F, ModelError> {
    example_loss(model, w, ex)
}

/// Mean [`example_score`] over a set, accumulated in ascending id order.
pub fn mean_score<F: Scalar>(
    model: &Model,
    w: &Vector<F>,
    examples: &[Example<F>],
) -> Result<F, ModelError> {
    if examples.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.sort_by_key(|&i| examples[i].id);
    let mut acc = F::zero();
    for &i in &order {
        acc = acc + example_score(model, w, &examples[i])?;
    }
    Ok(acc / F::from_usize(examples.len()).expect("set size fits scalar"))
}
