//! Dense row-major matrices, a one-sided Jacobi SVD with relative rank
//! truncation, and orthogonal projection onto the row space of a concept
//! matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default relative threshold for numerical rank: singular values at or
/// below `tol * sigma_max` are discarded.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

const MAX_SWEEPS: usize = 80;

/// A `rows x cols` matrix of token embeddings, stored row-major.
///
/// Every constructor rejects empty shapes and non-finite entries, so any
/// value of this type can be fed to the operators without further checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix", into = "RawMatrix")]
pub struct EmbeddingMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<RawMatrix> for EmbeddingMatrix {
    type Error = Error;

    fn try_from(raw: RawMatrix) -> Result<Self> {
        EmbeddingMatrix::new(raw.rows, raw.cols, raw.data)
    }
}

impl From<EmbeddingMatrix> for RawMatrix {
    fn from(m: EmbeddingMatrix) -> Self {
        RawMatrix {
            rows: m.rows,
            cols: m.cols,
            data: m.data,
        }
    }
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidMatrix(format!(
                "shape {rows}x{cols} is empty"
            )));
        }
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(Error::InvalidMatrix(format!(
                "shape {rows}x{cols} needs {} values, got {}",
                rows.saturating_mul(cols),
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidMatrix(format!(
                "non-finite value {} at row {}, col {}",
                data[pos],
                pos / cols,
                pos % cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from a list of equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::InvalidMatrix(format!(
                    "row {i} has {} values, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut m = Self::zeros(n, n)?;
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        Ok(m)
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.cols)
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm(&self.data)
    }

    /// Frobenius inner product.
    pub fn inner(&self, other: &Self) -> Result<f64> {
        self.require_same_shape(other, "inner product")?;
        Ok(dot(&self.data, &other.data))
    }

    /// Largest absolute entry-wise difference.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.require_same_shape(other, "difference")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn transpose(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..self.cols {
            data.extend(self.row_iter().map(|r| r[c]));
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }

    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(Error::ShapeMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut data = vec![0.0; self.rows * rhs.cols];
        for (out, lhs_row) in data.chunks_exact_mut(rhs.cols).zip(self.row_iter()) {
            for (&a, rhs_row) in lhs_row.iter().zip(rhs.row_iter()) {
                axpy(a, rhs_row, out);
            }
        }
        Self::new(self.rows, rhs.cols, data)
    }

    /// Entry-wise `self - scale * other`.
    pub fn sub_scaled(&self, scale: f64, other: &Self) -> Result<Self> {
        self.require_same_shape(other, "subtraction")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - scale * b)
            .collect();
        Self::new(self.rows, self.cols, data)
    }

    pub fn scaled(&self, scale: f64) -> Result<Self> {
        Self::new(
            self.rows,
            self.cols,
            self.data.iter().map(|v| v * scale).collect(),
        )
    }

    /// Multiplies rows `start..end` by `factor` in place.
    pub(crate) fn scale_rows(&mut self, start: usize, end: usize, factor: f64) {
        for v in &mut self.data[start * self.cols..end * self.cols] {
            *v *= factor;
        }
    }

    pub(crate) fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub(crate) fn from_parts_unchecked(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(rows * cols, data.len());
        Self { rows, cols, data }
    }

    fn require_same_shape(&self, other: &Self, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch(format!(
                "{what} of {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }
}

/// Truncated singular value decomposition `m = u * diag(sigma) * v^T`.
///
/// `u` is stored as `rows x rank`, `v` as `cols x rank`, both row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    pub u: Vec<f64>,
    pub sigma: Vec<f64>,
    pub v: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    pub rank: usize,
}

impl SvdResult {
    /// Column `k` of `v`, i.e. the `k`-th right singular vector.
    pub fn right_vector(&self, k: usize) -> Vec<f64> {
        (0..self.cols).map(|i| self.v[i * self.rank + k]).collect()
    }

    pub fn left_vector(&self, k: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.u[i * self.rank + k]).collect()
    }

    /// Rebuilds `u * diag(sigma) * v^T`. A rank-0 result reconstructs to zero.
    pub fn reconstruct(&self) -> EmbeddingMatrix {
        let mut data = vec![0.0; self.rows * self.cols];
        for (i, out) in data.chunks_exact_mut(self.cols).enumerate() {
            for k in 0..self.rank {
                let coef = self.u[i * self.rank + k] * self.sigma[k];
                for (j, o) in out.iter_mut().enumerate() {
                    *o += coef * self.v[j * self.rank + k];
                }
            }
        }
        EmbeddingMatrix::from_parts_unchecked(self.rows, self.cols, data)
    }
}

/// Computes the SVD of `m` by one-sided (Hestenes) Jacobi rotations applied to
/// its rows, keeping only the triplets with `sigma_i > tol * sigma_max`.
pub fn svd(m: &EmbeddingMatrix, tol: f64) -> Result<SvdResult> {
    check_tol(tol)?;
    let (k, d) = m.shape();

    // Rotated rows converge to sigma_i * v_i^T; `q` accumulates the rotations
    // so that q * m = w at every step.
    let mut w = m.as_slice().to_vec();
    let mut q = vec![0.0; k * k];
    for i in 0..k {
        q[i * k + i] = 1.0;
    }

    // Rows whose norm falls to rounding level relative to the whole matrix are
    // numerically zero; rotating them against large rows only churns noise.
    let floor = {
        let f = (k.max(d) as f64) * f64::EPSILON * m.frobenius_norm();
        f * f
    };

    let mut converged = k < 2;
    for _ in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        for p in 0..k - 1 {
            for r in p + 1..k {
                let (wp, wr) = row_pair(&mut w, d, p, r);
                let alpha = dot(wp, wp);
                let beta = dot(wr, wr);
                let gamma = dot(wp, wr);
                if alpha <= floor
                    || beta <= floor
                    || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt()
                {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(wp, wr, c, s);
                let (qp, qr) = row_pair(&mut q, k, p, r);
                rotate(qp, qr, c, s);
            }
        }
        if !rotated {
            converged = true;
        }
    }
    if !converged {
        return Err(Error::NumericalFailure(format!(
            "Jacobi SVD of a {k}x{d} matrix did not converge in {MAX_SWEEPS} sweeps"
        )));
    }

    let norms: Vec<f64> = w.chunks_exact(d).map(norm).collect();
    if norms.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure(
            "non-finite singular value".to_string(),
        ));
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));

    let sigma_max = norms[order[0]];
    let kept: Vec<usize> = if sigma_max > 0.0 {
        order
            .into_iter()
            .take_while(|&i| norms[i] > tol * sigma_max)
            .collect()
    } else {
        Vec::new()
    };
    let rank = kept.len();

    let mut u = vec![0.0; k * rank];
    let mut v = vec![0.0; d * rank];
    let mut sigma = Vec::with_capacity(rank);
    for (slot, &i) in kept.iter().enumerate() {
        let s = norms[i];
        sigma.push(s);
        for (j, &val) in w[i * d..(i + 1) * d].iter().enumerate() {
            v[j * rank + slot] = val / s;
        }
        // m = q^T w, so column `slot` of u is row i of q.
        for (row, &val) in q[i * k..(i + 1) * k].iter().enumerate() {
            u[row * rank + slot] = val;
        }
    }

    Ok(SvdResult {
        u,
        sigma,
        v,
        rows: k,
        cols: d,
        rank,
    })
}

/// Orthonormal basis of the row space of a concept matrix, together with the
/// projector it induces.
///
/// The basis vectors are the retained right singular vectors of the concept
/// matrix. A rank-0 basis (all-zero or empty concept) projects everything to
/// zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionBasis {
    basis: Vec<f64>,
    norm_sq: Vec<f64>,
    dim: usize,
    rank: usize,
    tol: f64,
}

impl ProjectionBasis {
    pub fn from_concept(concept: &EmbeddingMatrix, tol: f64) -> Result<Self> {
        let svd = svd(concept, tol)?;
        let dim = concept.cols();
        let mut basis = Vec::with_capacity(svd.rank * dim);
        for k in 0..svd.rank {
            basis.extend(svd.right_vector(k));
        }
        Ok(Self::from_rows_unchecked(basis, dim, svd.rank, tol))
    }

    /// The zero-dimensional subspace of `R^dim`.
    pub fn empty(dim: usize, tol: f64) -> Self {
        Self::from_rows_unchecked(Vec::new(), dim, 0, tol)
    }

    fn from_rows_unchecked(basis: Vec<f64>, dim: usize, rank: usize, tol: f64) -> Self {
        // Dividing by the computed squared norm instead of assuming exactly 1
        // keeps projections onto a single exactly representable direction
        // exact, e.g. (1, 1) onto span{(1, 1)}.
        let norm_sq = if dim == 0 {
            Vec::new()
        } else {
            basis.chunks_exact(dim).map(|b| dot(b, b)).collect()
        };
        Self {
            basis,
            norm_sq,
            dim,
            rank,
            tol,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn basis_vector(&self, k: usize) -> &[f64] {
        &self.basis[k * self.dim..(k + 1) * self.dim]
    }

    pub fn basis_vectors(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.basis.chunks_exact(self.dim.max(1)).take(self.rank)
    }

    /// Materializes the `dim x dim` projector `P = V V^T`.
    pub fn projector(&self) -> EmbeddingMatrix {
        let d = self.dim;
        let mut p = vec![0.0; d * d];
        for (b, &nsq) in self.basis_vectors().zip(&self.norm_sq) {
            for i in 0..d {
                for j in 0..d {
                    p[i * d + j] += b[i] * b[j] / nsq;
                }
            }
        }
        EmbeddingMatrix::from_parts_unchecked(d, d, p)
    }

    /// Projects a single row onto the subspace, writing into `out`.
    pub fn project_row_into(&self, row: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (b, &nsq) in self.basis_vectors().zip(&self.norm_sq) {
            let coef = dot(row, b);
            for (o, bi) in out.iter_mut().zip(b) {
                *o += bi * coef / nsq;
            }
        }
    }

    /// Row-wise projection `m * P`.
    pub fn project(&self, m: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        self.require_dim(m)?;
        let mut data = vec![0.0; m.rows() * m.cols()];
        for (out, row) in data.chunks_exact_mut(m.cols()).zip(m.row_iter()) {
            self.project_row_into(row, out);
        }
        Ok(EmbeddingMatrix::from_parts_unchecked(
            m.rows(),
            m.cols(),
            data,
        ))
    }

    /// Row-wise projection onto the orthogonal complement, `m * (I - P)`.
    pub fn project_complement(&self, m: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        let p = self.project(m)?;
        m.sub_scaled(1.0, &p)
    }

    /// Frobenius norm of `m * P`.
    pub fn energy(&self, m: &EmbeddingMatrix) -> Result<f64> {
        Ok(self.project(m)?.frobenius_norm())
    }

    fn require_dim(&self, m: &EmbeddingMatrix) -> Result<()> {
        if m.cols() != self.dim {
            return Err(Error::ShapeMismatch(format!(
                "matrix has {} columns but the basis lives in dimension {}",
                m.cols(),
                self.dim
            )));
        }
        Ok(())
    }
}

pub fn projection_basis(concept: &EmbeddingMatrix, tol: f64) -> Result<ProjectionBasis> {
    ProjectionBasis::from_concept(concept, tol)
}

pub fn project(m: &EmbeddingMatrix, basis: &ProjectionBasis) -> Result<EmbeddingMatrix> {
    basis.project(m)
}

pub fn project_complement(m: &EmbeddingMatrix, basis: &ProjectionBasis) -> Result<EmbeddingMatrix> {
    basis.project_complement(m)
}

fn check_tol(tol: f64) -> Result<()> {
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "rank tolerance must lie in (0, 1), got {tol}"
        )));
    }
    Ok(())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn row_pair(data: &mut [f64], width: usize, p: usize, r: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(p < r);
    let (head, tail) = data.split_at_mut(r * width);
    (&mut head[p * width..(p + 1) * width], &mut tail[..width])
}

fn rotate(a: &mut [f64], b: &mut [f64], c: f64, s: f64) {
    for (x, y) in a.iter_mut().zip(b.iter_mut()) {
        let (xa, yb) = (*x, *y);
        *x = c * xa - s * yb;
        *y = s * xa + c * yb;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn rejects_bad_matrices() {
        assert!(matches!(
            EmbeddingMatrix::new(0, 3, vec![]),
            Err(Error::InvalidMatrix(_))
        ));
        assert!(matches!(
            EmbeddingMatrix::new(1, 2, vec![1.0, f64::NAN]),
            Err(Error::InvalidMatrix(_))
        ));
        assert!(matches!(
            EmbeddingMatrix::new(2, 2, vec![1.0; 3]),
            Err(Error::InvalidMatrix(_))
        ));
        assert!(EmbeddingMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
    }

    #[test]
    fn svd_of_orthonormal_rows() {
        let r = svd(&m(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]), 1e-10).unwrap();
        assert_eq!(r.rank, 2);
        assert_eq!(r.sigma, vec![1.0, 1.0]);
        let p = ProjectionBasis::from_concept(&m(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]), 1e-10)
            .unwrap()
            .projector();
        let expected = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(p.as_slice(), &expected);
    }

    #[test]
    fn svd_of_collinear_rows() {
        let r = svd(&m(&[&[2.0, 0.0], &[4.0, 0.0]]), 1e-10).unwrap();
        assert_eq!(r.rank, 1);
        assert!((r.sigma[0] - 20f64.sqrt()).abs() < 1e-12);
        let v = r.right_vector(0);
        assert!((v[0].abs() - 1.0).abs() < 1e-12 && v[1].abs() < 1e-12);
        let rec = r.reconstruct();
        assert!(rec.max_abs_diff(&m(&[&[2.0, 0.0], &[4.0, 0.0]])).unwrap() < 1e-12);
    }

    #[test]
    fn collinear_concept_projects_onto_e1() {
        let b = ProjectionBasis::from_concept(&m(&[&[3.0, 0.0], &[6.0, 0.0]]), 1e-10).unwrap();
        assert_eq!(b.rank(), 1);
        let p = b.projector();
        assert!(p.max_abs_diff(&m(&[&[1.0, 0.0], &[0.0, 0.0]])).unwrap() < 1e-12);
    }

    #[test]
    fn zero_concept_is_rank_zero() {
        let b =
            ProjectionBasis::from_concept(&EmbeddingMatrix::zeros(3, 4).unwrap(), 1e-10).unwrap();
        assert_eq!(b.rank(), 0);
        let x = m(&[&[1.0, 2.0, 3.0, 4.0]]);
        assert_eq!(
            b.project(&x).unwrap(),
            EmbeddingMatrix::zeros(1, 4).unwrap()
        );
        assert_eq!(b.projector(), EmbeddingMatrix::zeros(4, 4).unwrap());
    }

    #[test]
    fn projects_onto_coordinate_plane() {
        let b = ProjectionBasis::from_concept(&m(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]]), 1e-10)
            .unwrap();
        let out = b.project(&m(&[&[3.0, 4.0, 5.0]])).unwrap();
        assert_eq!(out.as_slice(), &[3.0, 4.0, 0.0]);
        let comp = b.project_complement(&m(&[&[3.0, 4.0, 5.0]])).unwrap();
        assert_eq!(comp.as_slice(), &[0.0, 0.0, 5.0]);
    }

    #[test]
    fn diagonal_direction_projection_is_exact() {
        let b = ProjectionBasis::from_concept(&m(&[&[1.0, 1.0]]), 1e-10).unwrap();
        let out = b.project(&m(&[&[1.0, 1.0]])).unwrap();
        assert_eq!(out.as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let b = ProjectionBasis::empty(3, 1e-10);
        assert!(matches!(
            b.project(&m(&[&[1.0, 2.0]])),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn tolerance_is_validated() {
        let x = m(&[&[1.0]]);
        assert!(matches!(svd(&x, 0.0), Err(Error::InvalidConfig(_))));
        assert!(matches!(svd(&x, 1.0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn truncation_drops_small_singular_values() {
        let x = m(&[&[1.0, 0.0], &[0.0, 1e-12]]);
        assert_eq!(svd(&x, 1e-10).unwrap().rank, 1);
        assert_eq!(svd(&x, 1e-13).unwrap().rank, 2);
    }

    #[test]
    fn matmul_and_transpose() {
        let a = m(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        let ata = a.transpose().matmul(&a).unwrap();
        assert_eq!(ata.shape(), (3, 3));
        assert_eq!(ata.get(0, 0), 17.0);
        assert_eq!(ata.get(1, 2), 2.0 * 3.0 + 5.0 * 6.0);
        assert!(a.matmul(&a).is_err());
    }

    #[test]
    fn serde_validates() {
        let bad = RawMatrix {
            rows: 1,
            cols: 2,
            data: vec![1.0],
        };
        assert!(EmbeddingMatrix::try_from(bad).is_err());
    }
}
