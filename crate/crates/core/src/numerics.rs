//! Dense vectors and matrices, activations, entropy and the seeded generator
//! shared by every model component.
//!
//! Everything here works in `f64`. Vectors are plain `[f64]` slices; the
//! [`Matrix`] type is row-major with an immutable shape.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `Σp = 1` accepted by [`entropy`].
pub const PROPORTION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::from_vec",
                format!("({rows}, {cols})"),
                format!("{} values", data.len()),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::shape(
                    "Matrix::from_rows",
                    format!("row 0 has {cols} columns"),
                    format!("row {i} has {}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on 0; a zero-width matrix still has `rows` empty rows
        (0..self.rows).map(move |i| self.row(i))
    }

    /// Returns a copy with every entry multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    /// `self · x`.
    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::shape(
                "matrix-vector product",
                format!("matrix ({}, {})", self.rows, self.cols),
                format!("vector of length {}", x.len()),
            ));
        }
        Ok(self.iter_rows().map(|r| dot(r, x)).collect())
    }

    /// `selfᵀ · y`.
    pub fn tr_mul_vec(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.rows {
            return Err(Error::shape(
                "transposed matrix-vector product",
                format!("matrix ({}, {})", self.rows, self.cols),
                format!("vector of length {}", y.len()),
            ));
        }
        let mut out = vec![0.0; self.cols];
        for (r, &yi) in self.iter_rows().zip(y) {
            for (o, &w) in out.iter_mut().zip(r) {
                *o += w * yi;
            }
        }
        Ok(out)
    }

    /// `self += scale · u vᵀ`.
    pub fn add_outer(&mut self, u: &[f64], v: &[f64], scale: f64) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        for (i, &ui) in u.iter().enumerate() {
            let s = scale * ui;
            if s == 0.0 {
                continue;
            }
            for (w, &vj) in self.row_mut(i).iter_mut().zip(v) {
                *w += s * vj;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `W·x + b`.
pub fn affine(x: &[f64], w: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != w.rows() {
        return Err(Error::shape(
            "affine",
            format!("weights ({}, {})", w.rows(), w.cols()),
            format!("bias of length {}", b.len()),
        ));
    }
    let mut out = w.mul_vec(x)?;
    for (o, bi) in out.iter_mut().zip(b) {
        *o += bi;
    }
    Ok(out)
}

pub fn sigmoid(x: f64) -> f64 {
    // split by sign so exp never overflows
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_vec(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| sigmoid(v)).collect()
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Argument("softmax of an empty vector".into()));
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Shannon entropy in nats of a vector of proportions, with `0·ln 0 = 0`.
pub fn entropy(p: &[f64]) -> Result<f64> {
    if p.iter().any(|&x| x < 0.0 || !x.is_finite()) {
        return Err(Error::Argument(
            "entropy needs non-negative finite proportions".into(),
        ));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > PROPORTION_TOLERANCE {
        return Err(Error::Argument(format!(
            "proportions sum to {total}, expected 1"
        )));
    }
    Ok(entropy_unchecked(p))
}

fn entropy_unchecked(p: &[f64]) -> f64 {
    // sorted summation makes the result independent of input order
    let mut terms: Vec<f64> = p
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| -x * x.ln())
        .collect();
    terms.sort_by(f64::total_cmp);
    terms.iter().sum::<f64>().max(0.0)
}

/// Entropy of the empirical distribution given by non-negative counts.
/// An all-zero histogram has entropy 0.
pub fn entropy_of_counts(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let p: Vec<f64> = counts
        .iter()
        .map(|&c| c as f64 / total as f64)
        .collect();
    entropy_unchecked(&p)
}

/// Deterministic generator (ChaCha8) seeded from a single `u64`.
///
/// The stream depends only on the seed, not on platform or word size.
#[derive(Debug, Clone)]
pub struct SeededRng {
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn inner(&mut self) -> &mut ChaCha8Rng {
        &mut self.inner
    }

    /// Matrix with i.i.d. `N(0, scale²)` entries.
    pub fn normal_matrix(&mut self, rows: usize, cols: usize, scale: f64) -> Result<Matrix> {
        let data = self.normal_vec(rows * cols, scale)?;
        Matrix::from_vec(rows, cols, data)
    }

    pub fn normal_vec(&mut self, len: usize, scale: f64) -> Result<Vec<f64>> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Argument(format!(
                "normal init scale must be positive, got {scale}"
            )));
        }
        let dist = Normal::new(0.0, scale)
            .map_err(|e| Error::Argument(format!("normal init: {e}")))?;
        Ok((0..len).map(|_| dist.sample(&mut self.inner)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn affine_examples() {
        let id = Matrix::identity(2);
        assert_eq!(affine(&[3.0, 4.0], &id, &[0.0, 0.0]).unwrap(), vec![3.0, 4.0]);

        let zero = Matrix::zeros(2, 2);
        assert_eq!(
            affine(&[123.0, -9.0], &zero, &[7.0, -1.0]).unwrap(),
            vec![7.0, -1.0]
        );

        let w = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(affine(&[1.0, 1.0], &w, &[1.0, 1.0]).unwrap(), vec![4.0, 8.0]);
    }

    #[test]
    fn affine_shape_errors_name_both_shapes() {
        let w = Matrix::zeros(2, 3);
        let err = affine(&[1.0, 2.0], &w, &[0.0, 0.0]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(2, 3)") && msg.contains("length 2"), "{msg}");
        assert!(affine(&[1.0, 2.0, 3.0], &w, &[0.0]).is_err());
    }

    #[test]
    fn sigmoid_examples() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(3f64.ln()) - 0.75).abs() < 1e-15);
        for x in [-2.0, 0.5, 10.0] {
            assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-15);
        }
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
    }

    #[test]
    fn softmax_examples() {
        let u = softmax(&[2.5, 2.5, 2.5]).unwrap();
        for p in u {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = softmax(&[0.0, 3f64.ln()]).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-15 && (p[1] - 0.75).abs() < 1e-15);

        let v = [1.0, -2.0, 0.3];
        let shifted: Vec<f64> = v.iter().map(|x| x + 100.0).collect();
        let (a, b) = (softmax(&v).unwrap(), softmax(&shifted).unwrap());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(softmax(&[]).is_err());
    }

    #[test]
    fn entropy_examples() {
        let h = entropy(&[0.2; 5]).unwrap();
        assert!((h - 5f64.ln()).abs() < 1e-12);
        assert_eq!(entropy(&[1.0, 0.0, 0.0, 0.0, 0.0]).unwrap(), 0.0);
        let h = entropy(&[0.5, 0.25, 0.25]).unwrap();
        assert!((h - 1.5 * 2f64.ln()).abs() < 1e-12);
        assert!(entropy(&[0.5, 0.4]).is_err());
        assert!(entropy(&[1.5, -0.5]).is_err());
    }

    #[test]
    fn entropy_of_counts_matches_proportions() {
        assert_eq!(entropy_of_counts(&[]), 0.0);
        assert_eq!(entropy_of_counts(&[0, 4, 0]), 0.0);
        assert!((entropy_of_counts(&[2, 1, 1]) - 1.5 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn normal_init_is_deterministic_and_shaped() {
        let a = SeededRng::new(42).normal_matrix(2, 3, 0.1).unwrap();
        let b = SeededRng::new(42).normal_matrix(2, 3, 0.1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), (2, 3));
        assert_eq!(a.as_slice().len(), 6);

        let big = SeededRng::new(7).normal_vec(10_000, 0.1).unwrap();
        let mean = big.iter().sum::<f64>() / big.len() as f64;
        assert!(mean.abs() < 0.01, "sample mean {mean}");

        assert!(SeededRng::new(1).normal_vec(3, 0.0).is_err());
        assert!(SeededRng::new(1).normal_vec(3, -1.0).is_err());
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(v in prop::collection::vec(-700.0f64..700.0, 1..20)) {
            let p = softmax(&v).unwrap();
            let s: f64 = p.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
        }

        #[test]
        fn entropy_is_permutation_invariant(
            counts in prop::collection::vec(0usize..50, 1..10),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            prop_assume!(counts.iter().sum::<usize>() > 0);
            let total = counts.iter().sum::<usize>() as f64;
            let p: Vec<f64> = counts.iter().map(|&c| c as f64 / total).collect();
            let mut q = p.clone();
            q.shuffle(SeededRng::new(seed).inner());
            let (hp, hq) = (entropy(&p).unwrap(), entropy(&q).unwrap());
            prop_assert_eq!(hp, hq);
            prop_assert!(hp >= 0.0 && hp <= (p.len() as f64).ln() + 1e-12);
        }

        #[test]
        fn affine_is_linear(seed in any::<u64>(), rows in 1usize..5, cols in 1usize..5) {
            let mut rng = SeededRng::new(seed);
            let w = rng.normal_matrix(rows, cols, 1.0).unwrap();
            let b = rng.normal_vec(rows, 1.0).unwrap();
            let x = rng.normal_vec(cols, 1.0).unwrap();
            let y = rng.normal_vec(cols, 1.0).unwrap();
            let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
            let lhs = affine(&xy, &w, &b).unwrap();
            let ax = affine(&x, &w, &b).unwrap();
            let ay = affine(&y, &w, &b).unwrap();
            for i in 0..rows {
                prop_assert!((lhs[i] - (ax[i] + ay[i] - b[i])).abs() < 1e-12);
            }
        }
    }
}
