//! Self-contained dense linear algebra, regression and probability
//! primitives. Problem sizes throughout the crate are tiny (a handful of
//! coefficients, at most a few thousand rows), so everything here favours
//! clarity over BLAS-grade performance.

use crate::error::{Error, Result};

pub type Vector = Vec<f64>;

/// Relative pivot threshold below which a linear system is declared singular.
pub const SINGULARITY_EPS: f64 = 1e-12;

/// Dense row-major matrix of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "matrix data length {} does not match {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "matrix entries must be finite".into(),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

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
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map(|row| row.len()).unwrap_or(0);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Dimension("ragged rows in matrix".into()));
        }
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            data.extend_from_slice(row);
        }
        Matrix::new(r, c, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row_slice(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..rhs.cols {
                    let v = out.get(i, j) + a * rhs.get(k, j);
                    out.set(i, j, v);
                }
            }
        }
        Ok(out)
    }

    pub fn mul_vec(&self, v: &[f64]) -> Result<Vector> {
        if self.cols != v.len() {
            return Err(Error::Dimension(format!(
                "cannot apply {}x{} to vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        Ok((0..self.rows)
            .map(|i| dot(self.row_slice(i), v))
            .collect())
    }

    /// Computes `self^T v` without materialising the transpose.
    pub fn tr_mul_vec(&self, v: &[f64]) -> Result<Vector> {
        if self.rows != v.len() {
            return Err(Error::Dimension(format!(
                "cannot apply transpose of {}x{} to vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            let row = self.row_slice(i);
            for j in 0..self.cols {
                out[j] += row[j] * v[i];
            }
        }
        Ok(out)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn scale(v: &[f64], k: f64) -> Vector {
    v.iter().map(|x| x * k).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vector {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vector {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let (na, nb) = (norm2(a), norm2(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InvalidArgument(
            "cosine undefined for zero vector".into(),
        ));
    }
    Ok(dot(a, b) / (na * nb))
}

/// LU factorisation with partial pivoting of a square matrix.
struct Lu {
    lu: Matrix,
    perm: Vec<usize>,
    max_pivot: f64,
    min_pivot: f64,
}

fn lu_factor(a: &Matrix) -> Result<Lu> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::Dimension(format!(
            "LU factorisation needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let mut lu = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let scale_ref = a.max_abs().max(f64::MIN_POSITIVE);
    let mut max_pivot: f64 = 0.0;
    let mut min_pivot = f64::INFINITY;
    for col in 0..n {
        // pick pivot row
        let mut best = col;
        let mut best_abs = lu.get(col, col).abs();
        for r in (col + 1)..n {
            let v = lu.get(r, col).abs();
            if v > best_abs {
                best = r;
                best_abs = v;
            }
        }
        if best_abs <= SINGULARITY_EPS * scale_ref {
            let cond = scale_ref / best_abs.max(f64::MIN_POSITIVE);
            return Err(Error::Singular(format!(
                "pivot {:.3e} at column {} below threshold (condition estimate {:.3e})",
                best_abs, col, cond
            )));
        }
        if best != col {
            for j in 0..n {
                let tmp = lu.get(col, j);
                lu.set(col, j, lu.get(best, j));
                lu.set(best, j, tmp);
            }
            perm.swap(col, best);
        }
        let pivot = lu.get(col, col);
        max_pivot = max_pivot.max(pivot.abs());
        min_pivot = min_pivot.min(pivot.abs());
        for r in (col + 1)..n {
            let factor = lu.get(r, col) / pivot;
            lu.set(r, col, factor);
            for j in (col + 1)..n {
                let v = lu.get(r, j) - factor * lu.get(col, j);
                lu.set(r, j, v);
            }
        }
    }
    Ok(Lu {
        lu,
        perm,
        max_pivot,
        min_pivot,
    })
}

impl Lu {
    fn solve(&self, b: &[f64]) -> Vector {
        let n = self.perm.len();
        let mut x: Vector = self.perm.iter().map(|&i| b[i]).collect();
        for i in 1..n {
            let mut acc = x[i];
            for j in 0..i {
                acc -= self.lu.get(i, j) * x[j];
            }
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in (i + 1)..n {
                acc -= self.lu.get(i, j) * x[j];
            }
            x[i] = acc / self.lu.get(i, i);
        }
        x
    }

    fn condition_estimate(&self) -> f64 {
        self.max_pivot / self.min_pivot.max(f64::MIN_POSITIVE)
    }
}

/// Solves `A x = b` for square nonsingular `A` by partial-pivot LU.
pub fn solve_linear(a: &Matrix, b: &[f64]) -> Result<Vector> {
    if a.rows() != b.len() {
        return Err(Error::Dimension(format!(
            "system is {}x{} but right-hand side has length {}",
            a.rows(),
            a.cols(),
            b.len()
        )));
    }
    let lu = lu_factor(a)?;
    // Extreme pivot ratios are allowed through; the caller sees residual
    // guarantees degrade only for conditioning far beyond our tiny systems.
    let _ = lu.condition_estimate();
    Ok(lu.solve(b))
}

/// Least-squares fit of `targets` (T x K) on `design` (T x p), optionally
/// appending an intercept column of ones. Returns the coefficient matrix
/// with one row per design column; when an intercept is requested its row
/// comes last, matching the block layout `[B; c^T]`.
pub fn ols_fit(design: &Matrix, targets: &Matrix, with_intercept: bool) -> Result<Matrix> {
    let t = design.rows();
    let p = design.cols();
    let k = targets.cols();
    if targets.rows() != t {
        return Err(Error::Dimension(format!(
            "design has {} rows but targets has {}",
            t,
            targets.rows()
        )));
    }
    let p_aug = p + usize::from(with_intercept);
    if t < p_aug {
        return Err(Error::InsufficientData(format!(
            "need at least {} observations for {} coefficients, got {}",
            p_aug, p_aug, t
        )));
    }
    // normal equations on the augmented design
    let mut xtx = Matrix::zeros(p_aug, p_aug);
    let mut xty = Matrix::zeros(p_aug, k);
    let mut xrow = vec![0.0; p_aug];
    for r in 0..t {
        xrow[..p].copy_from_slice(design.row_slice(r));
        if with_intercept {
            xrow[p] = 1.0;
        }
        for i in 0..p_aug {
            let xi = xrow[i];
            if xi == 0.0 {
                continue;
            }
            for j in 0..p_aug {
                let v = xtx.get(i, j) + xi * xrow[j];
                xtx.set(i, j, v);
            }
            let yrow = targets.row_slice(r);
            for j in 0..k {
                let v = xty.get(i, j) + xi * yrow[j];
                xty.set(i, j, v);
            }
        }
    }
    let lu = lu_factor(&xtx).map_err(|e| match e {
        Error::Singular(msg) => Error::Singular(format!("rank-deficient design: {msg}")),
        other => other,
    })?;
    let mut coef = Matrix::zeros(p_aug, k);
    let mut col = vec![0.0; p_aug];
    for j in 0..k {
        for i in 0..p_aug {
            col[i] = xty.get(i, j);
        }
        let x = lu.solve(&col);
        for i in 0..p_aug {
            coef.set(i, j, x[i]);
        }
    }
    Ok(coef)
}

/// Frobenius norm of the fit residual for a coefficient matrix produced by
/// [`ols_fit`].
pub fn ols_residual_norm(
    design: &Matrix,
    targets: &Matrix,
    coef: &Matrix,
    with_intercept: bool,
) -> f64 {
    let p = design.cols();
    let mut acc = 0.0;
    for r in 0..design.rows() {
        let xrow = design.row_slice(r);
        for j in 0..targets.cols() {
            let mut pred = 0.0;
            for i in 0..p {
                pred += xrow[i] * coef.get(i, j);
            }
            if with_intercept {
                pred += coef.get(p, j);
            }
            let res = targets.get(r, j) - pred;
            acc += res * res;
        }
    }
    acc.sqrt()
}

/// Fraction of sample entries weakly below `q`.
pub fn empirical_cdf(sample: &[f64], q: f64) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    let count = sample.iter().filter(|&&v| v <= q).count();
    Ok(count as f64 / sample.len() as f64)
}

/// Strict variant: fraction of sample entries strictly below `q`. Used by
/// the deterministic top-fraction selection rule.
pub fn empirical_cdf_strict(sample: &[f64], q: f64) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    let count = sample.iter().filter(|&&v| v < q).count();
    Ok(count as f64 / sample.len() as f64)
}

/// Standard normal CDF via Cody's rational approximations for erf/erfc,
/// accurate to well below 1e-12 over the double range.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * std::f64::consts::FRAC_1_SQRT_2)
}

/// Two-sample Kolmogorov-Smirnov statistic: the supremum gap between the
/// empirical CDFs.
pub fn two_sample_ks(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).expect("finite samples"));
    sb.sort_by(|x, y| x.partial_cmp(y).expect("finite samples"));
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut sup: f64 = 0.0;
    while i < sa.len() && j < sb.len() {
        let (va, vb) = (sa[i], sb[j]);
        if va <= vb {
            i += 1;
        }
        if vb <= va {
            j += 1;
        }
        sup = sup.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(sup)
}

/// Complementary error function, Cody (1969) three-regime rational fit.
fn erfc(x: f64) -> f64 {
    const A: [f64; 5] = [
        3.16112374387056560e0,
        1.13864154151050156e2,
        3.77485237685302021e2,
        3.20937758913846947e3,
        1.85777706184603153e-1,
    ];
    const B: [f64; 4] = [
        2.36012909523441209e1,
        2.44024637934444173e2,
        1.28261652607737228e3,
        2.84423683343917062e3,
    ];
    const C: [f64; 9] = [
        5.64188496988670089e-1,
        8.88314979438837594e0,
        6.61191906371416295e1,
        2.98635138197400131e2,
        8.81952221241769090e2,
        1.71204761263407058e3,
        2.05107837782607147e3,
        1.23033935479799725e3,
        2.15311535474403846e-8,
    ];
    const D: [f64; 8] = [
        1.57449261107098347e1,
        1.17693950891312499e2,
        5.37181101862009858e2,
        1.62138957456669019e3,
        3.29079923573345963e3,
        4.36261909014324716e3,
        3.43936767414372164e3,
        1.23033935480374942e3,
    ];
    const P: [f64; 6] = [
        3.05326634961232344e-1,
        3.60344899949804439e-1,
        1.25781726111229246e-1,
        1.60837851487422766e-2,
        6.58749161529837803e-4,
        1.63153871373020978e-2,
    ];
    const Q: [f64; 5] = [
        2.56852019228982242e0,
        1.87295284992346047e0,
        5.27905102951428412e-1,
        6.05183413124413191e-2,
        2.33520497626869185e-3,
    ];
    const SQRPI: f64 = 5.6418958354775628695e-1;

    let y = x.abs();
    if y <= 0.46875 {
        let z = if y > 1.11e-16 { y * y } else { 0.0 };
        let mut num = A[4] * z;
        let mut den = z;
        for i in 0..3 {
            num = (num + A[i]) * z;
            den = (den + B[i]) * z;
        }
        let erf = x * (num + A[3]) / (den + B[3]);
        return 1.0 - erf;
    }
    let result = if y <= 4.0 {
        let mut num = C[8] * y;
        let mut den = y;
        for i in 0..7 {
            num = (num + C[i]) * y;
            den = (den + D[i]) * y;
        }
        let r = (num + C[7]) / (den + D[7]);
        scaled_exp(y) * r
    } else {
        let z = 1.0 / (y * y);
        let mut num = P[5] * z;
        let mut den = z;
        for i in 0..4 {
            num = (num + P[i]) * z;
            den = (den + Q[i]) * z;
        }
        let mut r = z * (num + P[4]) / (den + Q[4]);
        r = (SQRPI - r) / y;
        scaled_exp(y) * r
    };
    if x < 0.0 {
        2.0 - result
    } else {
        result
    }
}

/// exp(-y^2) evaluated with the split trick that preserves relative accuracy
/// for large arguments.
fn scaled_exp(y: f64) -> f64 {
    let ysq = (y * 16.0).trunc() / 16.0;
    let del = (y - ysq) * (y + ysq);
    (-ysq * ysq).exp() * (-del).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ols_exact_proportionality() {
        let x = Matrix::new(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        let y = Matrix::new(3, 1, vec![2.0, 4.0, 6.0]).unwrap();
        let b = ols_fit(&x, &y, false).unwrap();
        assert_abs_diff_eq!(b.get(0, 0), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn ols_identity_case() {
        let x = Matrix::identity(2);
        let y = Matrix::identity(2);
        let b = ols_fit(&x, &y, false).unwrap();
        assert_abs_diff_eq!(b.get(0, 0), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b.get(0, 1), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b.get(1, 0), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b.get(1, 1), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ols_intercept_by_hand() {
        // normal equations solved by hand: slope 2, intercept 1
        let x = Matrix::new(3, 1, vec![0.0, 1.0, 2.0]).unwrap();
        let y = Matrix::new(3, 1, vec![1.0, 3.0, 5.0]).unwrap();
        let b = ols_fit(&x, &y, true).unwrap();
        assert_abs_diff_eq!(b.get(0, 0), 2.0, epsilon = 1e-10);
        assert_abs_diff_eq!(b.get(1, 0), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn ols_rank_deficient_errors() {
        let x = Matrix::new(3, 2, vec![1.0, 2.0, 2.0, 4.0, 3.0, 6.0]).unwrap();
        let y = Matrix::new(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(ols_fit(&x, &y, false), Err(Error::Singular(_))));
    }

    #[test]
    fn ols_insufficient_rows_errors() {
        let x = Matrix::new(1, 2, vec![1.0, 2.0]).unwrap();
        let y = Matrix::new(1, 1, vec![1.0]).unwrap();
        assert!(matches!(
            ols_fit(&x, &y, false),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn ols_recovers_noiseless_multitarget_with_intercept() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let t = 40;
            let p = 3;
            let k = 2;
            let xdata: Vec<f64> = (0..t * p).map(|_| rng.random_range(-2.0..2.0)).collect();
            let x = Matrix::new(t, p, xdata).unwrap();
            let bdata: Vec<f64> = (0..p * k).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b = Matrix::new(p, k, bdata).unwrap();
            let c: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut y = x.matmul(&b).unwrap();
            for r in 0..t {
                for j in 0..k {
                    let v = y.get(r, j) + c[j];
                    y.set(r, j, v);
                }
            }
            let fit = ols_fit(&x, &y, true).unwrap();
            for i in 0..p {
                for j in 0..k {
                    let denom = b.get(i, j).abs().max(1.0);
                    assert!((fit.get(i, j) - b.get(i, j)).abs() / denom < 1e-9);
                }
            }
            for j in 0..k {
                assert!((fit.get(p, j) - c[j]).abs() / c[j].abs().max(1.0) < 1e-9);
            }
        }
    }

    #[test]
    fn empirical_cdf_examples() {
        let sample = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(empirical_cdf(&sample, 4.0).unwrap(), 1.0);
        assert_eq!(empirical_cdf(&sample, 0.0).unwrap(), 0.0);
        assert_eq!(empirical_cdf(&sample, 2.5).unwrap(), 0.5);
        assert!(matches!(empirical_cdf(&[], 1.0), Err(Error::EmptySample)));
    }

    #[test]
    fn empirical_cdf_weak_vs_strict_at_sample_points() {
        let sample = [1.0, 2.0, 2.0, 3.0];
        assert_eq!(empirical_cdf(&sample, 2.0).unwrap(), 0.75);
        assert_eq!(empirical_cdf_strict(&sample, 2.0).unwrap(), 0.25);
    }

    #[test]
    fn empirical_cdf_monotone_in_q() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sample: Vec<f64> = (0..50).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mut prev = 0.0;
        for i in -60..=60 {
            let q = i as f64 * 0.1;
            let v = empirical_cdf(&sample, q).unwrap();
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn normal_cdf_center_and_tail() {
        assert_abs_diff_eq!(std_normal_cdf(0.0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(std_normal_cdf(40.0), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(std_normal_cdf(-40.0), 0.0, epsilon = 1e-12);
    }

    /// High-precision oracle: Taylor series for erf on small arguments.
    fn erf_series(x: f64) -> f64 {
        let mut term = x;
        let mut sum = x;
        for n in 1..200 {
            term *= -x * x / n as f64;
            sum += term / (2.0 * n as f64 + 1.0);
            if term.abs() < 1e-20 {
                break;
            }
        }
        sum * 2.0 / std::f64::consts::PI.sqrt()
    }

    #[test]
    fn normal_cdf_quantile_against_series_oracle() {
        let z = -1.959964f64;
        let oracle = 0.5 * (1.0 + erf_series(z * std::f64::consts::FRAC_1_SQRT_2));
        assert_abs_diff_eq!(std_normal_cdf(z), 0.025, epsilon = 1e-6);
        assert_abs_diff_eq!(std_normal_cdf(z), oracle, epsilon = 1e-13);
    }

    #[test]
    fn normal_cdf_symmetry() {
        for i in 0..=100 {
            let z = -10.0 + 0.2 * i as f64;
            let s = std_normal_cdf(z) + std_normal_cdf(-z);
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn normal_cdf_monotone() {
        let mut prev = 0.0;
        for i in -400..=400 {
            let v = std_normal_cdf(i as f64 * 0.025);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn ks_statistic_basics() {
        // identical samples give zero, disjoint supports give one
        let a = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(two_sample_ks(&a, &a).unwrap(), 0.0);
        let b = [10.0, 11.0, 12.0];
        assert_eq!(two_sample_ks(&a, &b).unwrap(), 1.0);
        // hand-computed mixed case
        let c = [1.0, 3.0];
        let d = [2.0, 4.0];
        assert!((two_sample_ks(&c, &d).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn solve_identity_and_diagonal() {
        let a = Matrix::identity(2);
        assert_eq!(solve_linear(&a, &[3.0, 4.0]).unwrap(), vec![3.0, 4.0]);
        let d = Matrix::new(2, 2, vec![2.0, 0.0, 0.0, 4.0]).unwrap();
        assert_eq!(solve_linear(&d, &[2.0, 8.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn solve_singular_reports_condition() {
        let a = Matrix::new(2, 2, vec![1.0, 2.0, 2.0, 4.0]).unwrap();
        match solve_linear(&a, &[1.0, 2.0]) {
            Err(Error::Singular(msg)) => assert!(msg.contains("condition")),
            other => panic!("expected singularity error, got {other:?}"),
        }
    }

    #[test]
    fn solve_residual_bound_on_random_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let n = 5;
            let mut data: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
            // diagonal boost keeps the systems comfortably nonsingular
            for i in 0..n {
                data[i * n + i] += 4.0;
            }
            let a = Matrix::new(n, n, data).unwrap();
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let x = solve_linear(&a, &b).unwrap();
            let ax = a.mul_vec(&x).unwrap();
            let resid = norm2(&sub(&ax, &b));
            let bound = 1e-9 * (a.max_abs() * norm2(&x) + norm2(&b));
            assert!(resid <= bound, "residual {resid} exceeds bound {bound}");
        }
    }
}
