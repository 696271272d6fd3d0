//! Dense real-matrix kernels: products, Frobenius norms and singular values.
//!
//! Matrices are small (a few hundred rows at most), so everything here is
//! plain row-major `f64` storage with straightforward loops.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative threshold below which a singular value counts as zero.
pub const RANK_TOL: f64 = 1e-10;

const JACOBI_MAX_SWEEPS: usize = 80;

/// A real `rows × cols` matrix stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    /// Builds a matrix from row-major entries, rejecting empty shapes,
    /// length mismatches and non-finite values.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::shape(format!("empty matrix {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("non-finite entry at flat index {pos}")));
        }
        Ok(Self { rows, cols, data })
    }

    /// Internal constructor for results of finite arithmetic on valid matrices.
    pub(crate) fn from_parts(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::shape("ragged rows"));
        }
        Self::new(r, c, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "empty matrix");
        Self::from_parts(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diag(&vec![1.0; n])
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut out = vec![0.0; self.data.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        Self::from_parts(self.cols, self.rows, out)
    }

    pub fn scale(&self, alpha: f64) -> Self {
        Self::from_parts(
            self.rows,
            self.cols,
            self.data.iter().map(|v| v * alpha).collect(),
        )
    }

    /// Entrywise `self - other`.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::shape(format!(
                "cannot subtract {:?} from {:?}",
                other.shape(),
                self.shape()
            )));
        }
        Ok(Self::from_parts(
            self.rows,
            self.cols,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        ))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_parts(self.rows, self.cols, self.data.iter().copied().map(f).collect())
    }

    /// Copy of the column range `[start, end)`.
    pub fn columns(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.cols {
            return Err(Error::shape(format!(
                "column range {start}..{end} outside 0..{}",
                self.cols
            )));
        }
        let width = end - start;
        let mut out = Vec::with_capacity(self.rows * width);
        for r in 0..self.rows {
            out.extend_from_slice(&self.row(r)[start..end]);
        }
        Ok(Self::from_parts(self.rows, width, out))
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }
}

/// Standard matrix product `a · b`.
pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.rows {
        return Err(Error::shape(format!(
            "cannot multiply {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let (n, m) = (a.rows, b.cols);
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let out_row = &mut out[i * m..(i + 1) * m];
        for (k, &aik) in a.row(i).iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            for (o, &bkj) in out_row.iter_mut().zip(b.row(k)) {
                *o += aik * bkj;
            }
        }
    }
    Ok(DenseMatrix::from_parts(n, m, out))
}

/// Squared Frobenius norm, the sum of squared entries.
pub fn frob_norm_sq(m: &DenseMatrix) -> f64 {
    m.data.iter().map(|v| v * v).sum()
}

/// All singular values in descending order.
///
/// One-sided (Hestenes) cyclic Jacobi on the narrower orientation of `m`:
/// each plane rotation zeroes one off-diagonal entry of the Gram matrix
/// without forming it, so tiny singular values keep their relative accuracy.
pub fn singular_values(m: &DenseMatrix) -> Vec<f64> {
    // Columns of the working matrix are the vectors we orthogonalise.
    let work = if m.cols <= m.rows { m.clone() } else { m.transpose() };
    let (len, ncols) = (work.rows, work.cols);
    let mut cols: Vec<Vec<f64>> = (0..ncols)
        .map(|c| (0..len).map(|r| work.get(r, c)).collect())
        .collect();

    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..ncols {
            for q in (p + 1)..ncols {
                let (alpha, beta, gamma) = {
                    let (cp, cq) = (&cols[p], &cols[q]);
                    let mut a = 0.0;
                    let mut b = 0.0;
                    let mut g = 0.0;
                    for (x, y) in cp.iter().zip(cq) {
                        a += x * x;
                        b += y * y;
                        g += x * y;
                    }
                    (a, b, g)
                };
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                if gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (left, right) = cols.split_at_mut(q);
                let (cp, cq) = (&mut left[p], &mut right[0]);
                for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
                    let (xp, yq) = (*x, *y);
                    *x = c * xp - s * yq;
                    *y = s * xp + c * yq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut sv: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Smallest singular value above `RANK_TOL × σ_max`.
pub fn sigma_min(m: &DenseMatrix) -> Result<f64> {
    let sv = singular_values(m);
    let largest = sv.first().copied().unwrap_or(0.0);
    if largest == 0.0 {
        return Err(Error::domain("smallest non-zero singular value of a zero matrix"));
    }
    let tol = RANK_TOL * largest;
    Ok(sv
        .into_iter()
        .filter(|&s| s > tol)
        .fold(f64::INFINITY, f64::min))
}

/// Numerical rank with the same threshold as [`sigma_min`].
pub fn rank(m: &DenseMatrix) -> usize {
    let sv = singular_values(m);
    let tol = RANK_TOL * sv.first().copied().unwrap_or(0.0);
    sv.into_iter().filter(|&s| s > tol && s > 0.0).count()
}

/// Both sides of the product lower bound `‖AB‖²_F ≥ σ_min²(A)·‖B‖²_F`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProductBound {
    pub lhs: f64,
    pub rhs: f64,
}

impl ProductBound {
    pub fn holds(&self, tol: f64) -> bool {
        self.lhs >= self.rhs - tol
    }
}

pub fn lemma1_gap(a: &DenseMatrix, b: &DenseMatrix) -> Result<ProductBound> {
    let prod = matmul(a, b)?;
    let smin = sigma_min(a)?;
    Ok(ProductBound {
        lhs: frob_norm_sq(&prod),
        rhs: smin * smin * frob_norm_sq(b),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn random(rows: usize, cols: usize, rng: &mut SplitMix64) -> DenseMatrix {
        DenseMatrix::new(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(matches!(DenseMatrix::new(2, 2, vec![1.0; 3]), Err(Error::Shape(_))));
        assert!(matches!(DenseMatrix::new(0, 2, vec![]), Err(Error::Shape(_))));
        assert!(matches!(
            DenseMatrix::new(1, 2, vec![1.0, f64::NAN]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let b = DenseMatrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        assert_eq!(matmul(&DenseMatrix::identity(2), &b).unwrap(), b);

        let a = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let ones = DenseMatrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        let p = matmul(&a, &ones).unwrap();
        assert_eq!(p.as_slice(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_error() {
        let a = DenseMatrix::zeros(2, 3);
        assert!(matches!(matmul(&a, &a), Err(Error::Shape(_))));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = SplitMix64::new(11);
        let a = random(5, 4, &mut rng);
        let b = random(4, 3, &mut rng);
        let p = matmul(&a, &b).unwrap();
        for i in 0..5 {
            for j in 0..3 {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += a.get(i, k) * b.get(k, j);
                }
                assert!((p.get(i, j) - acc).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn frobenius_cases() {
        assert_eq!(frob_norm_sq(&DenseMatrix::zeros(3, 4)), 0.0);
        assert_eq!(frob_norm_sq(&DenseMatrix::identity(3)), 3.0);
        let mut rng = SplitMix64::new(5);
        let m = random(6, 6, &mut rng);
        let mut acc = 0.0;
        for i in 0..6 {
            for j in 0..6 {
                acc += m.get(i, j) * m.get(i, j);
            }
        }
        assert!((frob_norm_sq(&m) - acc).abs() <= 1e-12 * acc);
    }

    #[test]
    fn sigma_min_simple_cases() {
        assert!((sigma_min(&DenseMatrix::identity(4)).unwrap() - 1.0).abs() < 1e-14);
        let d = DenseMatrix::from_diag(&[3.0, 2.0, 1.0]);
        assert!((sigma_min(&d).unwrap() - 1.0).abs() < 1e-14);
        let neg = DenseMatrix::from_diag(&[-3.0, 0.5]);
        assert!((sigma_min(&neg).unwrap() - 0.5).abs() < 1e-14);
        assert!(matches!(sigma_min(&DenseMatrix::zeros(3, 3)), Err(Error::Domain(_))));
    }

    #[test]
    fn sigma_min_skips_zero_singular_values() {
        // diag(2, 1, 0): rank two, smallest non-zero singular value is 1.
        let d = DenseMatrix::from_diag(&[2.0, 1.0, 0.0]);
        assert!((sigma_min(&d).unwrap() - 1.0).abs() < 1e-14);
        assert_eq!(rank(&d), 2);

        // Rank-one matrix of all ones.
        let ones = DenseMatrix::new(3, 3, vec![1.0; 9]).unwrap();
        assert!((sigma_min(&ones).unwrap() - 3.0).abs() < 1e-12);
        assert_eq!(rank(&ones), 1);
    }

    #[test]
    fn lemma1_identity_and_scaling() {
        let mut rng = SplitMix64::new(3);
        let b = random(3, 5, &mut rng);
        let g = lemma1_gap(&DenseMatrix::identity(3), &b).unwrap();
        assert!((g.lhs - g.rhs).abs() <= 1e-12 * g.lhs);

        let b2 = random(2, 4, &mut rng);
        let g = lemma1_gap(&DenseMatrix::from_diag(&[2.0, 2.0]), &b2).unwrap();
        assert!((g.lhs - 4.0 * frob_norm_sq(&b2)).abs() <= 1e-12 * g.lhs);
        assert!((g.lhs - g.rhs).abs() <= 1e-12 * g.lhs);
    }

    #[test]
    fn wide_and_tall_agree() {
        let mut rng = SplitMix64::new(8);
        let m = random(3, 7, &mut rng);
        let a = singular_values(&m);
        let b = singular_values(&m.transpose());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12 * a[0]);
        }
    }
}
