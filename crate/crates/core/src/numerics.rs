//! Deterministic vector math, seeded pseudo-randomness, and a
//! finite-difference gradient oracle.
//!
//! Randomness is produced by an in-repo implementation of xoshiro256++
//! (Blackman & Vigna) seeded through the splitmix64 finalizer, so a given
//! seed yields the same draw sequence on every platform. Nothing here
//! delegates to a platform default generator.

use thiserror::Error;

use crate::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum NumericsError {
    /// A vector entry or a loss evaluation was NaN or infinite.
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("finite-difference step must be positive and finite")]
    InvalidStep,
    #[error("finite-difference oracle saw a non-finite loss at coordinate {coord}")]
    OracleFailure { coord: usize },
}

/// Flat vector of finite scalars.
///
/// Every public constructor and operation validates that entries stay
/// finite, so downstream code can treat a `Vector` as NaN/Inf-free.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector<F>(Vec<F>);

impl<F: Scalar> Vector<F> {
    /// Builds a vector, rejecting NaN/Inf entries.
    pub fn new(values: Vec<F>) -> Result<Self, NumericsError> {
        for (index, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(NumericsError::NonFinite { index });
            }
        }
        Ok(Vector(values))
    }

    pub fn zeros(n: usize) -> Self {
        Vector(vec![F::zero(); n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[F] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, F> {
        self.0.iter()
    }

    pub fn into_vec(self) -> Vec<F> {
        self.0
    }

    /// Euclidean norm; 0 for the empty vector.
    ///
    /// Entries are summed left to right so the result is reproducible.
    pub fn l2_norm(&self) -> F {
        let mut acc = F::zero();
        for &v in &self.0 {
            acc = acc + v * v;
        }
        acc.sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == F::zero())
    }

    /// Element-wise scaling, validating the result stays finite.
    pub fn scale(&self, s: F) -> Result<Self, NumericsError> {
        Vector::new(self.0.iter().map(|&v| v * s).collect())
    }
}

impl<F> std::ops::Index<usize> for Vector<F> {
    type Output = F;
    fn index(&self, i: usize) -> &F {
        &self.0[i]
    }
}

/// Returns `a*x + y` element-wise.
pub fn axpy<F: Scalar>(a: F, x: &Vector<F>, y: &Vector<F>) -> Result<Vector<F>, NumericsError> {
    if x.len() != y.len() {
        return Err(NumericsError::DimensionMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    Vector::new(
        x.iter()
            .zip(y.iter())
            .map(|(&xi, &yi)| a * xi + yi)
            .collect(),
    )
}

/// Central-difference gradient of `loss` at `w`:
/// `(loss(w + eps*e_i) - loss(w - eps*e_i)) / (2*eps)` per coordinate.
///
/// Callers that can fail loss evaluation should surface the failure as NaN;
/// any non-finite evaluation is reported as [`NumericsError::OracleFailure`].
pub fn finite_diff_gradient<F, L>(
    loss: L,
    w: &Vector<F>,
    eps: F,
) -> Result<Vector<F>, NumericsError>
where
    F: Scalar,
    L: Fn(&Vector<F>) -> F,
{
    if !eps.is_finite() || eps <= F::zero() {
        return Err(NumericsError::InvalidStep);
    }
    let two = F::from_f64(2.0).expect("2 representable");
    let mut grad = Vec::with_capacity(w.len());
    let mut probe = w.as_slice().to_vec();
    for coord in 0..w.len() {
        let orig = probe[coord];
        probe[coord] = orig + eps;
        let plus = loss(&Vector(probe.clone()));
        probe[coord] = orig - eps;
        let minus = loss(&Vector(probe.clone()));
        probe[coord] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(NumericsError::OracleFailure { coord });
        }
        grad.push((plus - minus) / (two * eps));
    }
    Vector::new(grad)
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// splitmix64 output finalizer (Steele, Lea & Flood), used both to expand a
/// 64-bit seed into generator state and to derive child-stream seeds.
fn splitmix64_mix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Portable seeded generator: xoshiro256++ with splitmix64 seeding.
///
/// A `SeededRng` is single-owner. Parallel work never shares one; it gets
/// child streams via [`SeededRng::child`], which derive deterministically
/// from `(seed, stream_index)`.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    state: [u64; 4],
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        let mut z = seed;
        let mut state = [0u64; 4];
        for slot in &mut state {
            z = z.wrapping_add(GOLDEN_GAMMA);
            let mut t = z;
            t = (t ^ (t >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            t = (t ^ (t >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            *slot = t ^ (t >> 31);
        }
        SeededRng { seed, state }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child stream derived from the originating seed and a stream index.
    pub fn child(&self, stream_index: u64) -> SeededRng {
        let derived = splitmix64_mix(self.seed ^ splitmix64_mix(stream_index.wrapping_add(GOLDEN_GAMMA)));
        SeededRng::new(derived)
    }

    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.state;
        let result = s[0]
            .wrapping_add(s[3])
            .rotate_left(23)
            .wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn unit_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `(0, 1]`, safe to pass through `ln`.
    fn open_unit_f64(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[0, n)` by 128-bit multiply-shift.
    pub fn bounded(&mut self, n: u64) -> u64 {
        assert!(n > 0, "bounded draw needs n > 0");
        ((u128::from(self.next_u64()) * u128::from(n)) >> 64) as u64
    }

    pub fn index(&mut self, n: usize) -> usize {
        self.bounded(n as u64) as usize
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform<F: Scalar>(&mut self, lo: F, hi: F) -> F {
        let u = F::from_f64(self.unit_f64()).expect("unit draw representable");
        lo + (hi - lo) * u
    }

    /// Standard normal draw via the Box-Muller transform (cosine branch).
    pub fn standard_normal<F: Scalar>(&mut self) -> F {
        let u1 = self.open_unit_f64();
        let u2 = self.unit_f64();
        let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        F::from_f64(z).expect("normal draw representable")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(values: &[f64]) -> Vector<f64> {
        Vector::new(values.to_vec()).unwrap()
    }

    #[test]
    fn l2_norm_three_four_five() {
        assert_eq!(v(&[3.0, 4.0]).l2_norm(), 5.0);
    }

    #[test]
    fn l2_norm_zero_vector() {
        assert_eq!(v(&[0.0, 0.0, 0.0]).l2_norm(), 0.0);
        assert_eq!(Vector::<f64>::zeros(0).l2_norm(), 0.0);
    }

    #[test]
    fn l2_norm_all_ones() {
        assert_eq!(v(&[1.0, 1.0, 1.0, 1.0]).l2_norm(), 2.0);
    }

    #[test]
    fn l2_norm_generic_f32() {
        let w = Vector::<f32>::new(vec![3.0, 4.0]).unwrap();
        assert_eq!(w.l2_norm(), 5.0f32);
    }

    #[test]
    fn non_finite_entries_rejected() {
        assert_eq!(
            Vector::new(vec![1.0, f64::NAN]),
            Err(NumericsError::NonFinite { index: 1 })
        );
        assert!(Vector::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn axpy_basic() {
        let r = axpy(2.0, &v(&[1.0, 2.0]), &v(&[3.0, 4.0])).unwrap();
        assert_eq!(r.as_slice(), &[5.0, 8.0]);
    }

    #[test]
    fn axpy_zero_scale_is_identity() {
        let y = v(&[3.0, 4.0]);
        let r = axpy(0.0, &v(&[9.0, 9.0]), &y).unwrap();
        assert_eq!(r, y);
    }

    #[test]
    fn axpy_cancellation() {
        let x = v(&[3.0, 4.0]);
        let r = axpy(-1.0, &x, &x).unwrap();
        assert_eq!(r.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn axpy_length_mismatch() {
        let err = axpy(1.0, &v(&[1.0]), &v(&[1.0, 2.0])).unwrap_err();
        assert_eq!(err, NumericsError::DimensionMismatch { left: 1, right: 2 });
    }

    #[test]
    fn finite_diff_quadratic() {
        let g = finite_diff_gradient(|w| w[0] * w[0], &v(&[3.0]), 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn finite_diff_constant_is_zero() {
        let g = finite_diff_gradient(|_| 7.25, &v(&[1.0, -2.0, 0.5]), 1e-5).unwrap();
        for i in 0..3 {
            assert!(g[i].abs() < 1e-9);
        }
    }

    #[test]
    fn finite_diff_product_rule() {
        let g = finite_diff_gradient(|w| w[0] * w[1], &v(&[2.0, 5.0]), 1e-5).unwrap();
        assert!((g[0] - 5.0).abs() < 1e-6);
        assert!((g[1] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn finite_diff_rejects_bad_step() {
        assert_eq!(
            finite_diff_gradient(|w| w[0], &v(&[1.0]), 0.0).unwrap_err(),
            NumericsError::InvalidStep
        );
        assert_eq!(
            finite_diff_gradient(|w| w[0], &v(&[1.0]), -1e-3).unwrap_err(),
            NumericsError::InvalidStep
        );
    }

    #[test]
    fn finite_diff_reports_oracle_failure() {
        let err = finite_diff_gradient(|w| (w[0] - 1e-5).ln(), &v(&[0.0]), 1e-5).unwrap_err();
        assert!(matches!(err, NumericsError::OracleFailure { .. }));
    }

    // Known-answer vectors computed from an independent implementation of
    // the published splitmix64/xoshiro256++ algorithms.
    #[test]
    fn xoshiro_known_answer_seed_42() {
        let mut rng = SeededRng::new(42);
        let expected = [
            0xd076_4d4f_4476_689f_u64,
            0x519e_4174_576f_3791,
            0xfbe0_7cfb_0c24_ed8c,
            0xb37d_9f60_0cd8_35b8,
            0xcb23_1c38_7484_6a73,
            0x968d_9f00_4e50_de7d,
        ];
        for e in expected {
            assert_eq!(rng.next_u64(), e);
        }
    }

    #[test]
    fn unit_f64_known_answer() {
        let mut rng = SeededRng::new(42);
        let expected = [
            0.8143051451229099,
            0.3188210400616611,
            0.9838941681774888,
            0.7011355981347556,
        ];
        for e in expected {
            assert_eq!(rng.unit_f64(), e);
        }
    }

    #[test]
    fn child_streams_known_answer() {
        let rng = SeededRng::new(7);
        assert_eq!(rng.child(0).seed(), 0x4e33_eab9_3279_ff1a);
        assert_eq!(rng.child(1).seed(), 0xfb0d_a064_af8d_aae6);
        assert_eq!(rng.child(1).next_u64(), 0x79eb_345c_9978_ded8);
    }

    #[test]
    fn bounded_known_answer() {
        let mut rng = SeededRng::new(123);
        let draws: Vec<u64> = (0..8).map(|_| rng.bounded(10)).collect();
        assert_eq!(draws, vec![6, 8, 6, 5, 0, 6, 7, 9]);
    }

    #[test]
    fn normal_known_answer() {
        let mut rng = SeededRng::new(9);
        let expected = [
            -0.9152994889589317,
            1.339710012495933,
            1.5409506592992448,
            0.2820187576158861,
        ];
        for e in expected {
            assert_eq!(rng.standard_normal::<f64>(), e);
        }
    }

    #[test]
    fn same_seed_same_sequence() {
        let mut a = SeededRng::new(0xDEAD_BEEF);
        let mut b = SeededRng::new(0xDEAD_BEEF);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn child_streams_are_distinct() {
        let root = SeededRng::new(5);
        let mut a = root.child(0);
        let mut b = root.child(1);
        let mut root = root;
        let first: Vec<u64> = (0..4).map(|_| root.next_u64()).collect();
        let ca: Vec<u64> = (0..4).map(|_| a.next_u64()).collect();
        let cb: Vec<u64> = (0..4).map(|_| b.next_u64()).collect();
        assert_ne!(ca, cb);
        assert_ne!(ca, first);
        assert_ne!(cb, first);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn norm_absolute_homogeneity(
                values in proptest::collection::vec(-1e3f64..1e3, 0..16),
                s in -100.0f64..100.0,
            ) {
                let x = Vector::new(values).unwrap();
                let scaled = x.scale(s).unwrap();
                let lhs = scaled.l2_norm();
                let rhs = s.abs() * x.l2_norm();
                let tol = 1e-12 * rhs.max(1.0);
                prop_assert!((lhs - rhs).abs() <= tol, "lhs={lhs} rhs={rhs}");
            }

            #[test]
            fn norm_zero_iff_zero_vector(
                values in proptest::collection::vec(-1e6f64..1e6, 0..16),
            ) {
                let x = Vector::new(values).unwrap();
                prop_assert_eq!(x.l2_norm() == 0.0, x.is_zero());
            }

            #[test]
            fn axpy_preserves_length(
                pairs in proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 0..16),
                a in -10.0f64..10.0,
            ) {
                let (xs, ys): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
                let x = Vector::new(xs).unwrap();
                let y = Vector::new(ys).unwrap();
                let r = axpy(a, &x, &y).unwrap();
                prop_assert_eq!(r.len(), x.len());
            }
        }
    }
}
