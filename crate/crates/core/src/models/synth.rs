//! Synthetic dataset generation for the experiment harness.
//!
//! Classification data comes from Gaussian class clusters with optional
//! label noise and feature outliers; regression data from a random linear
//! teacher. Outliers and label noise are what give a binding clipping bound
//! something to earn its keep on.

use serde::{Deserialize, Serialize};

use super::{Dataset, Example, Model, ModelError, ModelKind, Target};
use crate::numerics::Vector;
use crate::{Scalar, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthTask {
    Regression,
    Classification,
}

/// Generator settings; all randomness derives from `seed` alone, so a spec
/// always produces the same (train, test) pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub task: SynthTask,
    pub dim: usize,
    pub classes: usize,
    pub train_size: usize,
    pub test_size: usize,
    /// Distance of each class center from the origin (classification).
    pub cluster_separation: f64,
    /// Fraction of training labels resampled uniformly at random.
    pub label_noise: f64,
    /// Fraction of training examples with features scaled by `outlier_scale`.
    pub outlier_fraction: f64,
    pub outlier_scale: f64,
    /// Observation noise std (regression).
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            task: SynthTask::Classification,
            dim: 10,
            classes: 2,
            train_size: 256,
            test_size: 512,
            cluster_separation: 1.5,
            label_noise: 0.1,
            outlier_fraction: 0.05,
            outlier_scale: 8.0,
            noise_std: 0.1,
            seed: 1_234,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.dim == 0 {
            return Err(ModelError::BadConfig("synthetic dim must be >= 1".into()));
        }
        if self.train_size == 0 || self.test_size == 0 {
            return Err(ModelError::BadConfig("synthetic sizes must be >= 1".into()));
        }
        if self.classes < 2 && self.task == SynthTask::Classification {
            return Err(ModelError::BadConfig("classification needs >= 2 classes".into()));
        }
        for (name, v) in [("label_noise", self.label_noise), ("outlier_fraction", self.outlier_fraction)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ModelError::BadConfig(format!("{name} must be in [0, 1]")));
            }
        }
        Ok(())
    }

    /// Whether the spec's task matches a model's expected target type.
    pub fn matches_model(&self, model: &Model) -> bool {
        match (self.task, model.kind) {
            (SynthTask::Regression, ModelKind::LinearRegression) => true,
            (SynthTask::Classification, ModelKind::LogisticRegression) => self.classes == 2,
            (SynthTask::Classification, ModelKind::Mlp1 { classes, .. }) => self.classes == classes,
            _ => false,
        }
    }
}

fn gaussian_vector<F: Scalar>(dim: usize, rng: &mut SeededRng) -> Vec<F> {
    (0..dim).map(|_| rng.standard_normal()).collect()
}

/// Generates the (train, test) pair described by `spec`.
///
/// Test features are clean draws (no outliers, no label noise); train ids
/// start at 0 and test ids follow contiguously.
pub fn generate<F: Scalar>(spec: &SyntheticSpec) -> Result<(Dataset<F>, Dataset<F>), ModelError> {
    spec.validate()?;
    let root = SeededRng::new(spec.seed);
    let mut structure_rng = root.child(0);
    let mut train_rng = root.child(1);
    let mut test_rng = root.child(2);

    match spec.task {
        SynthTask::Classification => {
            // class centers at distance cluster_separation from the origin
            let centers: Vec<Vec<f64>> = (0..spec.classes)
                .map(|_| {
                    let raw: Vec<f64> = gaussian_vector(spec.dim, &mut structure_rng);
                    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                    raw.iter().map(|v| v / norm * spec.cluster_separation).collect()
                })
                .collect();
            let make = |id: u64, rng: &mut SeededRng, corrupt: bool| -> Example<F> {
                let mut label = rng.index(spec.classes);
                let mut features: Vec<f64> = gaussian_vector(spec.dim, rng);
                for (f, c) in features.iter_mut().zip(&centers[label]) {
                    *f += c;
                }
                if corrupt {
                    if rng.unit_f64() < spec.label_noise {
                        label = rng.index(spec.classes);
                    }
                    if rng.unit_f64() < spec.outlier_fraction {
                        for f in &mut features {
                            *f *= spec.outlier_scale;
                        }
                    }
                }
                let features = Vector::new(
                    features
                        .into_iter()
                        .map(|f| F::from_f64(f).expect("feature representable"))
                        .collect(),
                )
                .expect("gaussian features are finite");
                Example::new(id, features, Target::Class(label))
            };
            let train: Vec<Example<F>> = (0..spec.train_size)
                .map(|i| make(i as u64, &mut train_rng, true))
                .collect();
            let test: Vec<Example<F>> = (0..spec.test_size)
                .map(|i| make((spec.train_size + i) as u64, &mut test_rng, false))
                .collect();
            Ok((Dataset::new(train)?, Dataset::new(test)?))
        }
        SynthTask::Regression => {
            let scale = 1.0 / (spec.dim as f64).sqrt();
            let teacher: Vec<f64> = gaussian_vector::<f64>(spec.dim, &mut structure_rng)
                .into_iter()
                .map(|v| v * scale)
                .collect();
            let make = |id: u64, rng: &mut SeededRng, corrupt: bool| -> Example<F> {
                let mut features: Vec<f64> = gaussian_vector(spec.dim, rng);
                let clean_y: f64 = features.iter().zip(&teacher).map(|(x, t)| x * t).sum::<f64>()
                    + spec.noise_std * rng.standard_normal::<f64>();
                if corrupt && rng.unit_f64() < spec.outlier_fraction {
                    for f in &mut features {
                        *f *= spec.outlier_scale;
                    }
                }
                let features = Vector::new(
                    features
                        .into_iter()
                        .map(|f| F::from_f64(f).expect("feature representable"))
                        .collect(),
                )
                .expect("gaussian features are finite");
                Example::new(
                    id,
                    features,
                    Target::Real(F::from_f64(clean_y).expect("target representable")),
                )
            };
            let train: Vec<Example<F>> = (0..spec.train_size)
                .map(|i| make(i as u64, &mut train_rng, true))
                .collect();
            let test: Vec<Example<F>> = (0..spec.test_size)
                .map(|i| make((spec.train_size + i) as u64, &mut test_rng, false))
                .collect();
            Ok((Dataset::new(train)?, Dataset::new(test)?))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let spec = SyntheticSpec::default();
        let (a_train, a_test) = generate::<f64>(&spec).unwrap();
        let (b_train, b_test) = generate::<f64>(&spec).unwrap();
        assert_eq!(a_train.examples(), b_train.examples());
        assert_eq!(a_test.examples(), b_test.examples());
    }

    #[test]
    fn sizes_and_ids_are_disjoint() {
        let spec = SyntheticSpec { train_size: 20, test_size: 30, ..SyntheticSpec::default() };
        let (train, test) = generate::<f64>(&spec).unwrap();
        assert_eq!(train.len(), 20);
        assert_eq!(test.len(), 30);
        let train_max = train.max_id();
        assert!(test.examples().iter().all(|e| e.id > train_max));
    }

    #[test]
    fn regression_targets_are_real() {
        let spec = SyntheticSpec {
            task: SynthTask::Regression,
            ..SyntheticSpec::default()
        };
        let (train, _) = generate::<f64>(&spec).unwrap();
        assert!(train
            .examples()
            .iter()
            .all(|e| matches!(e.target, Target::Real(_))));
    }

    #[test]
    fn invalid_fraction_rejected() {
        let spec = SyntheticSpec { label_noise: 1.5, ..SyntheticSpec::default() };
        assert!(generate::<f64>(&spec).is_err());
    }
}
