//! Dense vector and matrix kernels.
//!
//! Vectors are plain `f64` slices. All reductions sum left to right so that
//! results are bit-stable across runs.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Inner product of two equal-length vectors.
pub fn dot(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim(a.len(), b.len()));
    }
    Ok(dot_unchecked(a, b))
}

#[inline]
pub(crate) fn dot_unchecked(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

pub fn norm(a: &[f64]) -> f64 {
    dot_unchecked(a, a).sqrt()
}

/// Returns `a / ‖a‖₂`.
pub fn l2_normalize(a: &[f64]) -> Result<Vec<f64>> {
    ensure_finite(a, "l2_normalize input")?;
    // Scale first so that huge or tiny inputs do not overflow the square sum.
    let peak = a.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if peak == 0.0 {
        return Err(Error::Degenerate("cannot normalize a zero vector".into()));
    }
    let scaled: Vec<f64> = a.iter().map(|x| x / peak).collect();
    let n = norm(&scaled);
    Ok(scaled.into_iter().map(|x| x / n).collect())
}

/// Numerically stable log-softmax.
pub fn log_softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::dim(1, 0));
    }
    ensure_finite(logits, "logits")?;
    let lse = log_sum_exp(logits);
    Ok(logits.iter().map(|x| x - lse).collect())
}

/// Softmax probabilities; assumes a non-empty finite input.
pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut acc = 0.0;
    for x in xs {
        acc += (x - max).exp();
    }
    max + acc.ln()
}

/// `y += alpha * x`
#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn ensure_finite(a: &[f64], what: &'static str) -> Result<()> {
    if a.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows * cols != values.len() {
            return Err(Error::dim(rows * cols, values.len()));
        }
        Ok(Self { rows, cols, values })
    }

    /// Stacks equal-length vectors as rows.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut values = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::dim(cols, r.len()));
            }
            values.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    /// `self · x`
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::dim(self.cols, x.len()));
        }
        Ok((0..self.rows).map(|r| dot_unchecked(self.row(r), x)).collect())
    }

    /// `selfᵀ · y`
    pub fn matvec_t(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.rows {
            return Err(Error::dim(self.rows, y.len()));
        }
        let mut out = vec![0.0; self.cols];
        for (r, yr) in y.iter().enumerate() {
            axpy(*yr, self.row(r), &mut out);
        }
        Ok(out)
    }

    /// `self · selfᵀ`
    pub fn gram(&self) -> Matrix {
        let mut g = Matrix::zeros(self.rows, self.rows);
        for i in 0..self.rows {
            for j in 0..=i {
                let v = dot_unchecked(self.row(i), self.row(j));
                g.set(i, j, v);
                g.set(j, i, v);
            }
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-5.0..5.0)).collect()
    }

    #[test]
    fn dot_examples() {
        assert_eq!(dot(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(dot(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 14.0);
        assert!(matches!(
            dot(&[1.0], &[1.0, 2.0]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn dot_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_vec(&mut rng, 50);
        let b = random_vec(&mut rng, 50);
        let mut naive = 0.0;
        for i in 0..50 {
            naive += a[i] * b[i];
        }
        assert_abs_diff_eq!(dot(&a, &b).unwrap(), naive, epsilon = 1e-12);
    }

    #[test]
    fn normalize_examples() {
        let v = l2_normalize(&[3.0, 4.0]).unwrap();
        assert_abs_diff_eq!(v[0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(v[1], 0.8, epsilon = 1e-15);
        assert_eq!(l2_normalize(&[0.0, 1.0, 0.0]).unwrap(), vec![0.0, 1.0, 0.0]);
        assert!(matches!(
            l2_normalize(&[0.0, 0.0]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn normalize_extreme_magnitudes() {
        let v = l2_normalize(&[1e300, 1e300]).unwrap();
        assert_abs_diff_eq!(norm(&v), 1.0, epsilon = 1e-12);
        let v = l2_normalize(&[1e-300, 0.0]).unwrap();
        assert_abs_diff_eq!(v[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn log_softmax_examples() {
        let out = log_softmax(&[0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(out[0], 0.5_f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(out[1], 0.5_f64.ln(), epsilon = 1e-15);

        let out = log_softmax(&[1000.0, 0.0]).unwrap();
        assert!(out.iter().all(|x| x.is_finite()));
        assert_abs_diff_eq!(out[0], 0.0, epsilon = 1e-12);

        assert!(log_softmax(&[]).is_err());
    }

    /// Compensated (Neumaier) summation of exp terms as a higher-precision
    /// reference for log-sum-exp.
    fn lse_oracle(xs: &[f64]) -> f64 {
        let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (mut sum, mut comp) = (0.0_f64, 0.0_f64);
        for x in xs {
            let term = (x - max).exp();
            let t = sum + term;
            if sum.abs() >= term.abs() {
                comp += (sum - t) + term;
            } else {
                comp += (term - t) + sum;
            }
            sum = t;
        }
        max + (sum + comp).ln()
    }

    #[test]
    fn log_softmax_matches_compensated_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let n = rng.random_range(1..40);
            let logits: Vec<f64> = (0..n).map(|_| rng.random_range(-30.0..30.0)).collect();
            let out = log_softmax(&logits).unwrap();
            let lse = lse_oracle(&logits);
            for (o, l) in out.iter().zip(&logits) {
                assert_abs_diff_eq!(*o, l - lse, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn matrix_shapes() {
        let m = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(m.matvec(&[1.0, 0.0, 1.0]).unwrap(), vec![4.0, 10.0]);
        assert_eq!(m.matvec_t(&[1.0, 1.0]).unwrap(), vec![5.0, 7.0, 9.0]);
        assert_eq!(m.gram().values(), &[14.0, 32.0, 32.0, 77.0]);
        assert!(Matrix::from_vec(2, 2, vec![1.0]).is_err());
        assert!(m.matvec(&[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn dot_symmetric_and_bilinear(
            a in prop::collection::vec(-10.0..10.0f64, 8),
            b in prop::collection::vec(-10.0..10.0f64, 8),
            c in prop::collection::vec(-10.0..10.0f64, 8),
            s in -3.0..3.0f64,
        ) {
            let ab = dot(&a, &b).unwrap();
            prop_assert!((ab - dot(&b, &a).unwrap()).abs() <= 1e-10);
            let sa_c: Vec<f64> = a.iter().zip(&c).map(|(x, y)| s * x + y).collect();
            let lhs = dot(&sa_c, &b).unwrap();
            let rhs = s * ab + dot(&c, &b).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-10);
        }

        #[test]
        fn normalize_is_unit_and_idempotent(v in prop::collection::vec(-1e3..1e3f64, 1..20)) {
            prop_assume!(v.iter().any(|x| *x != 0.0));
            let n = l2_normalize(&v).unwrap();
            prop_assert!((norm(&n) - 1.0).abs() <= 1e-12);
            let nn = l2_normalize(&n).unwrap();
            for (x, y) in n.iter().zip(&nn) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn log_softmax_normalized_and_shift_invariant(
            v in prop::collection::vec(-50.0..50.0f64, 1..20),
            shift in -100.0..100.0f64,
        ) {
            let out = log_softmax(&v).unwrap();
            let total: f64 = out.iter().map(|x| x.exp()).sum();
            prop_assert!((total - 1.0).abs() <= 1e-10);
            let shifted: Vec<f64> = v.iter().map(|x| x + shift).collect();
            let out2 = log_softmax(&shifted).unwrap();
            for (x, y) in out.iter().zip(&out2) {
                prop_assert!((x - y).abs() <= 1e-10);
            }
        }
    }
}
