//! Dense linear algebra for the optimizer: a row-major matrix type, a cyclic
//! Jacobi eigensolver for symmetric matrices, and matrix square roots built
//! from eigenpairs.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Eigenvalues below this are treated as this value wherever an inverse or
/// square root is taken.
pub const EIGEN_FLOOR: f64 = 1e-30;

const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;
const PSD_SLACK: f64 = 1e-12;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    /// Builds a matrix from row vectors. Panics on ragged input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self {
            rows: r,
            cols: c,
            data,
        }
    }

    pub fn from_row_slice(rows: usize, cols: usize, data: &[f64]) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self {
            rows,
            cols,
            data: data.to_vec(),
        }
    }

    /// `u vᵀ`
    pub fn outer(u: &[f64], v: &[f64]) -> Self {
        let mut m = Self::zeros(u.len(), v.len());
        for (i, &ui) in u.iter().enumerate() {
            let row = m.row_mut(i);
            for (r, &vj) in row.iter_mut().zip(v) {
                *r = ui * vj;
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).collect()
    }

    pub fn trace(&self) -> f64 {
        self.diagonal().iter().sum()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Self {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `A v`
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "mul_vec shape mismatch");
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    /// `Aᵀ v`
    pub fn tr_mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, v.len(), "tr_mul_vec shape mismatch");
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(i)) {
                *o += a * vi;
            }
        }
        out
    }

    /// `bᵀ A b`
    pub fn quad_form(&self, b: &[f64]) -> f64 {
        dot(b, &self.mul_vec(b))
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|x| *x *= factor);
    }

    /// `self += factor * other`
    pub fn add_scaled(&mut self, factor: f64, other: &Matrix) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += factor * b;
        }
    }

    /// Replaces the matrix with `(A + Aᵀ)/2` so that it is exactly symmetric.
    pub fn symmetrize(&mut self) {
        assert!(self.is_square());
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let avg = 0.5 * (self[(i, j)] + self[(j, i)]);
                self[(i, j)] = avg;
                self[(j, i)] = avg;
            }
        }
    }

    pub fn is_symmetric(&self) -> bool {
        self.is_square()
            && (0..self.rows).all(|i| ((i + 1)..self.cols).all(|j| self[(i, j)] == self[(j, i)]))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Orthonormal eigenbasis and eigenvalues of a symmetric matrix.
///
/// Columns of `basis` are eigenvectors. Eigenvalues are sorted descending and
/// each column's largest-magnitude entry is positive (first such entry on
/// ties), so the pair is a deterministic function of the decomposed matrix.
/// `values` are the raw eigenvalues; `degenerate` is set when any of them is
/// below [`EIGEN_FLOOR`].
#[derive(Clone, Debug)]
pub struct EigenPair {
    pub basis: Matrix,
    pub values: Vec<f64>,
    pub degenerate: bool,
}

impl EigenPair {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn identity(n: usize) -> Self {
        Self {
            basis: Matrix::identity(n),
            values: vec![1.0; n],
            degenerate: false,
        }
    }

    /// Eigenvalues clamped below at [`EIGEN_FLOOR`].
    pub fn floored_values(&self) -> Vec<f64> {
        self.values.iter().map(|&l| l.max(EIGEN_FLOOR)).collect()
    }

    /// `λ_max / λ_min` on the raw eigenvalues; infinite when `λ_min ≤ 0`.
    pub fn condition_number(&self) -> f64 {
        let max = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        if min <= 0.0 {
            f64::INFINITY
        } else {
            max / min
        }
    }

    /// `B diag(d) Bᵀ v` without forming the matrix.
    pub fn apply_spectral(&self, diag: &[f64], v: &[f64]) -> Vec<f64> {
        let mut rotated = self.basis.tr_mul_vec(v);
        for (r, d) in rotated.iter_mut().zip(diag) {
            *r *= d;
        }
        self.basis.mul_vec(&rotated)
    }

    /// `B diag(d) Bᵀ`
    pub fn compose(&self, diag: &[f64]) -> Matrix {
        let n = self.dim();
        let mut scaled = self.basis.clone();
        for i in 0..n {
            for (x, d) in scaled.row_mut(i).iter_mut().zip(diag) {
                *x *= d;
            }
        }
        let mut m = scaled.matmul(&self.basis.transpose());
        m.symmetrize();
        m
    }
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
pub fn sym_eigendecompose(m: &Matrix) -> Result<EigenPair> {
    check_input(m)?;
    let mut a = m.clone();
    let mut vt = Matrix::identity(m.rows());
    jacobi_sweeps(&mut a, &mut vt);
    Ok(finish(a, vt))
}

/// Same contract as [`sym_eigendecompose`], starting the rotations from an
/// orthonormal `guess` (typically the previous iteration's basis). When the
/// matrix is nearly diagonal in that basis a sweep or two suffices.
pub fn sym_eigendecompose_from(m: &Matrix, guess: &Matrix) -> Result<EigenPair> {
    check_input(m)?;
    if guess.rows() != m.rows() || !guess.is_square() {
        return Err(Error::DimensionMismatch {
            expected: m.rows(),
            got: guess.rows(),
        });
    }
    let mut a = guess.transpose().matmul(m).matmul(guess);
    a.symmetrize();
    let mut vt = guess.transpose();
    jacobi_sweeps(&mut a, &mut vt);
    Ok(finish(a, vt))
}

fn check_input(m: &Matrix) -> Result<()> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            expected: m.rows(),
            got: m.cols(),
        });
    }
    if !m.is_finite() {
        return Err(Error::NonFiniteMatrix);
    }
    Ok(())
}

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut sum = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            sum += 2.0 * a[(i, j)] * a[(i, j)];
        }
    }
    sum.sqrt()
}

/// Rotates `a` towards diagonal form, accumulating rotations into the rows
/// of `vt` (eigenvectors stored as rows). Returns the number of sweeps.
fn jacobi_sweeps(a: &mut Matrix, vt: &mut Matrix) -> usize {
    let n = a.rows();
    let scale = a.frobenius_norm();
    if scale == 0.0 {
        return 0;
    }
    // Entries below this can all stay and the sweep still meets the
    // tolerance, so rotating them is wasted work.
    let negligible = JACOBI_TOL * scale / n as f64;
    for sweep in 0..JACOBI_MAX_SWEEPS {
        if off_diagonal_norm(a) <= JACOBI_TOL * scale {
            return sweep;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() <= negligible {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                // Entry too small to matter relative to both diagonal entries.
                let g = 100.0 * apq.abs();
                if sweep > 3 && app.abs() + g == app.abs() && aqq.abs() + g == aqq.abs() {
                    a[(p, q)] = 0.0;
                    a[(q, p)] = 0.0;
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate_rows(&mut a.data, n, p, q, c, s);
                a[(p, p)] = app - t * apq;
                a[(q, q)] = aqq + t * apq;
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    if k != p && k != q {
                        a.data[k * n + p] = a.data[p * n + k];
                        a.data[k * n + q] = a.data[q * n + k];
                    }
                }
                rotate_rows(&mut vt.data, n, p, q, c, s);
            }
        }
    }
    JACOBI_MAX_SWEEPS
}

/// `row_p ← c row_p − s row_q`, `row_q ← s row_p + c row_q` for `p < q`.
fn rotate_rows(data: &mut [f64], n: usize, p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = data.split_at_mut(q * n);
    let row_p = &mut lo[p * n..(p + 1) * n];
    let row_q = &mut hi[..n];
    for (xp, xq) in row_p.iter_mut().zip(row_q.iter_mut()) {
        let x = *xp;
        let y = *xq;
        *xp = c * x - s * y;
        *xq = s * x + c * y;
    }
}

/// Sorts eigenpairs descending and fixes eigenvector signs.
fn finish(a: Matrix, vt: Matrix) -> EigenPair {
    let n = a.rows();
    let raw = a.diagonal();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| raw[j].total_cmp(&raw[i]).then(i.cmp(&j)));

    let mut basis = Matrix::zeros(n, n);
    let mut values = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        values.push(raw[src]);
        let col = vt.row(src);
        let mut pivot = 0;
        for (k, x) in col.iter().enumerate() {
            if x.abs() > col[pivot].abs() {
                pivot = k;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for (k, x) in col.iter().enumerate() {
            basis[(k, dst)] = sign * x;
        }
    }
    let degenerate = values.iter().any(|&l| l < EIGEN_FLOOR);
    EigenPair {
        basis,
        values,
        degenerate,
    }
}

/// `B Λ^{1/2} Bᵀ`. Eigenvalues in `[-1e-12, 0)` are treated as zero; anything
/// more negative is rejected.
pub fn sqrt_from_eigen(e: &EigenPair) -> Result<Matrix> {
    let roots = sqrt_eigenvalues(e)?;
    Ok(e.compose(&roots))
}

pub(crate) fn sqrt_eigenvalues(e: &EigenPair) -> Result<Vec<f64>> {
    e.values
        .iter()
        .map(|&l| {
            if l < -PSD_SLACK {
                Err(Error::NotPsd(l))
            } else {
                Ok(l.max(0.0).sqrt())
            }
        })
        .collect()
}

/// `B Λ^{-1/2} Bᵀ` on floored eigenvalues. The returned flag is set when any
/// eigenvalue sat at the floor.
pub fn inv_sqrt_from_eigen(e: &EigenPair) -> (Matrix, bool) {
    let inv: Vec<f64> = e.floored_values().iter().map(|l| 1.0 / l.sqrt()).collect();
    (e.compose(&inv), e.degenerate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn spd3() -> Matrix {
        // A Aᵀ + I for a fixed A; condition number well below 1e3.
        let a = Matrix::from_rows(&[
            vec![1.0, 0.5, -0.3],
            vec![0.2, 1.5, 0.7],
            vec![-0.4, 0.1, 2.0],
        ]);
        let mut m = a.matmul(&a.transpose());
        m.add_scaled(1.0, &Matrix::identity(3));
        m.symmetrize();
        m
    }

    #[test]
    fn identity_decomposes_trivially() {
        let e = sym_eigendecompose(&Matrix::identity(2)).unwrap();
        assert_eq!(e.values, vec![1.0, 1.0]);
        assert_eq!(e.basis, Matrix::identity(2));
        assert!(!e.degenerate);
    }

    #[test]
    fn diagonal_input_is_sorted_descending() {
        let e = sym_eigendecompose(&Matrix::from_diag(&[1.0, 4.0])).unwrap();
        assert_eq!(e.values, vec![4.0, 1.0]);
        assert_eq!(e.basis, Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]));
    }

    #[test]
    fn two_by_two_hand_solution() {
        let m = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        let e = sym_eigendecompose(&m).unwrap();
        assert_abs_diff_eq!(e.values[0], 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(e.values[1], 1.0, epsilon = 1e-14);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let b0 = e.basis.column(0);
        let b1 = e.basis.column(1);
        assert_abs_diff_eq!(b0[0].abs(), h, epsilon = 1e-14);
        assert_abs_diff_eq!(b0[0], b0[1], epsilon = 1e-14);
        assert_abs_diff_eq!(b1[0].abs(), h, epsilon = 1e-14);
        assert_abs_diff_eq!(b1[0], -b1[1], epsilon = 1e-14);
    }

    #[test]
    fn rejects_non_finite() {
        let m = Matrix::from_rows(&[vec![1.0, f64::NAN], vec![f64::NAN, 1.0]]);
        assert!(matches!(sym_eigendecompose(&m), Err(Error::NonFiniteMatrix)));
    }

    #[test]
    fn sqrt_examples() {
        let e = sym_eigendecompose(&Matrix::identity(3)).unwrap();
        assert_eq!(sqrt_from_eigen(&e).unwrap(), Matrix::identity(3));

        let e = sym_eigendecompose(&Matrix::from_diag(&[4.0, 1.0])).unwrap();
        let s = sqrt_from_eigen(&e).unwrap();
        assert_abs_diff_eq!(s.max_abs_diff(&Matrix::from_diag(&[2.0, 1.0])), 0.0, epsilon = 1e-15);

        let m = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        let s = sqrt_from_eigen(&sym_eigendecompose(&m).unwrap()).unwrap();
        assert!(s.is_symmetric());
        assert!(s.matmul(&s).max_abs_diff(&m) < 1e-12);
    }

    #[test]
    fn sqrt_rejects_negative_and_clamps_tiny() {
        let bad = EigenPair {
            basis: Matrix::identity(2),
            values: vec![1.0, -1e-6],
            degenerate: true,
        };
        assert!(matches!(sqrt_from_eigen(&bad), Err(Error::NotPsd(_))));
        let tiny = EigenPair {
            basis: Matrix::identity(2),
            values: vec![1.0, -1e-13],
            degenerate: true,
        };
        let s = sqrt_from_eigen(&tiny).unwrap();
        assert_eq!(s[(1, 1)], 0.0);
    }

    #[test]
    fn inv_sqrt_examples() {
        let (m, flag) = inv_sqrt_from_eigen(&sym_eigendecompose(&Matrix::identity(2)).unwrap());
        assert_eq!(m, Matrix::identity(2));
        assert!(!flag);

        let (m, _) = inv_sqrt_from_eigen(&sym_eigendecompose(&Matrix::from_diag(&[4.0, 1.0])).unwrap());
        assert!(m.max_abs_diff(&Matrix::from_diag(&[0.5, 1.0])) < 1e-15);

        let e = sym_eigendecompose(&spd3()).unwrap();
        let (inv, _) = inv_sqrt_from_eigen(&e);
        let sq = sqrt_from_eigen(&e).unwrap();
        assert!(inv.matmul(&sq).max_abs_diff(&Matrix::identity(3)) < 1e-9);
    }

    #[test]
    fn floor_sets_degeneracy_flag() {
        let e = sym_eigendecompose(&Matrix::from_diag(&[1.0, 0.0])).unwrap();
        assert!(e.degenerate);
        let (inv, flag) = inv_sqrt_from_eigen(&e);
        assert!(flag);
        assert!(inv.is_finite());
        assert_eq!(e.condition_number(), f64::INFINITY);
    }

    #[test]
    fn warm_start_agrees_with_cold() {
        let m = spd3();
        let cold = sym_eigendecompose(&m).unwrap();
        let mut perturbed = m.clone();
        perturbed[(0, 1)] += 0.01;
        perturbed[(1, 0)] += 0.01;
        let warm = sym_eigendecompose_from(&perturbed, &cold.basis).unwrap();
        let direct = sym_eigendecompose(&perturbed).unwrap();
        for (a, b) in warm.values.iter().zip(&direct.values) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        assert!(warm.basis.max_abs_diff(&direct.basis) < 1e-10);
    }

    #[test]
    fn condition_number_scales_invariantly() {
        let e = sym_eigendecompose(&spd3()).unwrap();
        let mut scaled = spd3();
        scaled.scale(7.0);
        let e2 = sym_eigendecompose(&scaled).unwrap();
        assert_abs_diff_eq!(e.condition_number(), e2.condition_number(), epsilon = 1e-9);
    }
}
