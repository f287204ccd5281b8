//! Independent reference computations for the integration tests.
//!
//! Nothing in here calls the SVD or projection code under test. Projectors
//! are built from the normal equations with a pseudoinverse obtained by
//! classical two-sided Jacobi eigendecomposition of the Gram matrix.

#![allow(dead_code)]

use orthoprompt::EmbeddingMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> EmbeddingMatrix {
    let data = (0..rows * cols)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    EmbeddingMatrix::new(rows, cols, data).unwrap()
}

/// Gaussian matrix of the given rank, built as a product of two factors.
pub fn low_rank(rng: &mut ChaCha8Rng, rows: usize, cols: usize, rank: usize) -> EmbeddingMatrix {
    let a = gaussian(rng, rows, rank);
    let b = gaussian(rng, rank, cols);
    a.matmul(&b).unwrap()
}

/// Random concept matrix with `rows <= 77`, `dim <= 64`; roughly a quarter of
/// the instances are rank deficient.
pub fn random_concept(rng: &mut ChaCha8Rng) -> EmbeddingMatrix {
    let rows = rng.random_range(1..=77);
    let dim = rng.random_range(2..=64);
    if rng.random_bool(0.25) {
        let rank = rng.random_range(1..=rows.min(dim));
        low_rank(rng, rows, dim, rank)
    } else {
        gaussian(rng, rows, dim)
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
/// Returns eigenvalues and eigenvectors as columns of a row-major `n x n`.
pub fn jacobi_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        let scale: f64 = a.iter().map(|x| x * x).sum();
        if off <= 1e-30 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i * n + i]).collect(), v)
}

/// Singular values of `x` as square roots of the eigenvalues of `x^T x`,
/// sorted descending.
pub fn gram_singular_values(x: &EmbeddingMatrix) -> Vec<f64> {
    let gram = x.transpose().matmul(x).unwrap();
    let (vals, _) = jacobi_eigen(gram.as_slice(), gram.rows());
    let mut s: Vec<f64> = vals.into_iter().map(|v| v.max(0.0).sqrt()).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// `x^T (x x^T)^+ x`, with the pseudoinverse dropping eigenvalues at or below
/// `rel * lambda_max`.
pub fn normal_equations_projector(x: &EmbeddingMatrix, rel: f64) -> EmbeddingMatrix {
    let k = x.rows();
    let gram = x.matmul(&x.transpose()).unwrap();
    let (vals, vecs) = jacobi_eigen(gram.as_slice(), k);
    let max = vals.iter().cloned().fold(0.0, f64::max);
    let mut pinv = vec![0.0; k * k];
    for (m, &lambda) in vals.iter().enumerate() {
        if lambda <= rel * max || lambda <= 0.0 {
            continue;
        }
        for i in 0..k {
            for j in 0..k {
                pinv[i * k + j] += vecs[i * k + m] * vecs[j * k + m] / lambda;
            }
        }
    }
    let pinv = EmbeddingMatrix::new(k, k, pinv).unwrap();
    x.transpose().matmul(&pinv).unwrap().matmul(x).unwrap()
}

/// Row-wise Gram-Schmidt rejection written straight from the formula.
pub fn reject_rows(s: &EmbeddingMatrix, e: &EmbeddingMatrix, eps: f64) -> EmbeddingMatrix {
    let mut rows = Vec::new();
    for i in 0..s.rows() {
        let (sr, er) = (s.row(i), e.row(i));
        let se: f64 = sr.iter().zip(er).map(|(a, b)| a * b).sum();
        let ee: f64 = er.iter().map(|a| a * a).sum();
        let row: Vec<f64> = if ee > eps {
            sr.iter().zip(er).map(|(a, b)| a - se / ee * b).collect()
        } else {
            sr.to_vec()
        };
        rows.push(row);
    }
    EmbeddingMatrix::from_rows(&rows).unwrap()
}

pub fn row_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn row_norm(a: &[f64]) -> f64 {
    row_dot(a, a).sqrt()
}

/// A random refinement problem: an embedding plus express and suppress
/// concept matrices sharing its dimension.
pub struct Instance {
    pub x: EmbeddingMatrix,
    pub express: EmbeddingMatrix,
    pub suppress: EmbeddingMatrix,
}

pub fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let dim = rng.random_range(8..=64);
    let rows = rng.random_range(2..=20);
    let k_exp = rng.random_range(1..=dim / 3);
    let k_sup = rng.random_range(1..=dim / 3);
    Instance {
        x: gaussian(rng, rows, dim),
        express: gaussian(rng, k_exp, dim),
        suppress: gaussian(rng, k_sup, dim),
    }
}

/// Like [`random_instance`], but the suppress concept shares directions with
/// the express concept, so `<S_i, E_i>` is far from zero.
pub fn overlapping_instance(rng: &mut ChaCha8Rng) -> Instance {
    let mut inst = random_instance(rng);
    let shared = inst.express.rows().min(inst.suppress.rows());
    let mut rows: Vec<Vec<f64>> = inst.suppress.row_iter().map(|r| r.to_vec()).collect();
    for (i, row) in rows.iter_mut().enumerate().take(shared) {
        for (v, e) in row.iter_mut().zip(inst.express.row(i)) {
            *v = 0.5 * *v + 2.0 * e;
        }
    }
    inst.suppress = EmbeddingMatrix::from_rows(&rows).unwrap();
    inst
}
