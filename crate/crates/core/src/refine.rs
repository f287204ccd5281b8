//! Refinement operators.
//!
//! The full prompt embedding `X` is split into an express component
//! `E = X P_exp` and a suppress component `S = X P_sup`. The dual-subspace
//! operator first rejects `S` against `E`,
//!
//! ```text
//! S' = S - (<S, E> / |E|^2) E
//! X' = X - alpha S'
//! ```
//!
//! so that removing `S'` cannot change any inner product with `E`. The other
//! modes are comparison operators: plain subtraction of `S`, dual followed by
//! downscaling of suppress-span rows, and rescaling of spans without any
//! projection.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, EmbeddingMatrix, ProjectionBasis, DEFAULT_RANK_TOL};
use crate::prompt::{slice, FramePartition, Span};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// `X - alpha S'` with `S'` purified against `E`.
    Dual,
    /// `X - alpha S`.
    Single,
    /// Dual, then suppress-span rows multiplied by `1 - alpha (1 - beta)`,
    /// which is `beta` at full strength and the identity at `alpha = 0`.
    DualRescale,
    /// No projection: express-span rows scaled by `1 / beta`, suppress-span
    /// rows by `beta`.
    RescaleOnly,
}

impl Mode {
    pub const ALL: [Mode; 4] = [
        Mode::Dual,
        Mode::Single,
        Mode::DualRescale,
        Mode::RescaleOnly,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Dual => "dual",
            Mode::Single => "single",
            Mode::DualRescale => "dual-rescale",
            Mode::RescaleOnly => "rescale-only",
        }
    }

    pub fn needs_spans(&self) -> bool {
        matches!(self, Mode::DualRescale | Mode::RescaleOnly)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('_', "-").as_str() {
            "dual" => Ok(Mode::Dual),
            "single" => Ok(Mode::Single),
            "dual-rescale" => Ok(Mode::DualRescale),
            "rescale-only" => Ok(Mode::RescaleOnly),
            other => Err(Error::InvalidConfig(format!("unknown mode {other:?}"))),
        }
    }
}

/// How the rejection of `S` against `E` is applied.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    /// Each token row is rejected against the matching row of `E`.
    #[default]
    PerToken,
    /// `S` and `E` are treated as single vectors under the Frobenius product.
    Flattened,
}

impl Granularity {
    pub fn as_str(&self) -> &'static str {
        match self {
            Granularity::PerToken => "per-token",
            Granularity::Flattened => "flattened",
        }
    }
}

impl FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('_', "-").as_str() {
            "per-token" => Ok(Granularity::PerToken),
            "flattened" => Ok(Granularity::Flattened),
            other => Err(Error::InvalidConfig(format!(
                "unknown granularity {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinementConfig {
    /// Suppression strength in `[0, 1]`.
    pub alpha: f64,
    pub mode: Mode,
    pub granularity: Granularity,
    /// `beta` for the rescaling modes.
    pub rescale_factor: f64,
    /// Rows of `E` with squared norm at or below this are left alone.
    pub epsilon: f64,
    /// Relative rank tolerance used when bases are built from concepts.
    pub tol: f64,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            mode: Mode::Dual,
            granularity: Granularity::PerToken,
            rescale_factor: 0.5,
            epsilon: 1e-12,
            tol: DEFAULT_RANK_TOL,
        }
    }
}

impl RefinementConfig {
    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_granularity(mut self, granularity: Granularity) -> Self {
        self.granularity = granularity;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.rescale_factor > 0.0 && self.rescale_factor.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "rescale factor must be positive, got {}",
                self.rescale_factor
            )));
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "rank tolerance must lie in (0, 1), got {}",
                self.tol
            )));
        }
        Ok(())
    }
}

/// Express and suppress bases for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptBases {
    pub express: ProjectionBasis,
    pub suppress: ProjectionBasis,
}

impl ConceptBases {
    /// Builds both bases from separately obtained concept matrices. A missing
    /// suppress concept (single-frame story) yields a rank-0 suppress basis.
    pub fn from_concepts(
        express: &EmbeddingMatrix,
        suppress: Option<&EmbeddingMatrix>,
        tol: f64,
    ) -> Result<Self> {
        let express_basis = ProjectionBasis::from_concept(express, tol)?;
        let suppress_basis = match suppress {
            Some(s) => {
                if s.cols() != express.cols() {
                    return Err(Error::ShapeMismatch(format!(
                        "express concept has dimension {} but suppress concept has {}",
                        express.cols(),
                        s.cols()
                    )));
                }
                ProjectionBasis::from_concept(s, tol)?
            }
            None => ProjectionBasis::empty(express.cols(), tol),
        };
        Ok(Self {
            express: express_basis,
            suppress: suppress_basis,
        })
    }

    /// Builds both bases from row slices of the already encoded prompt.
    pub fn from_slices(x: &EmbeddingMatrix, partition: &FramePartition, tol: f64) -> Result<Self> {
        let express = slice(x, &partition.express_spans)?;
        let suppress = if partition.suppress_spans.is_empty() {
            None
        } else {
            Some(slice(x, &partition.suppress_spans)?)
        };
        Self::from_concepts(&express, suppress.as_ref(), tol)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    /// Row-wise `<S'_i, E_i>`.
    pub inner_products: Vec<f64>,
    /// Rows where `|E_i|^2 <= epsilon` and `S` passed through unchanged. In
    /// flattened mode this is every row or none.
    pub guarded_rows: Vec<usize>,
    pub express_rank: usize,
    pub suppress_rank: usize,
}

/// Everything one refinement run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinementDecomposition {
    pub e: EmbeddingMatrix,
    pub s: EmbeddingMatrix,
    pub s_pure: EmbeddingMatrix,
    pub x_refined: EmbeddingMatrix,
    pub diagnostics: Diagnostics,
}

impl RefinementDecomposition {
    /// Largest `|<S'_i, E_i>| / (|S'_i| |E_i| + epsilon)` over all rows.
    pub fn max_orthogonality_residual(&self, epsilon: f64) -> f64 {
        orthogonality_residual(&self.s_pure, &self.e, epsilon)
    }
}

/// Largest normalized row-wise inner product between `a` and `b`.
pub fn orthogonality_residual(a: &EmbeddingMatrix, b: &EmbeddingMatrix, epsilon: f64) -> f64 {
    a.row_iter()
        .zip(b.row_iter())
        .map(|(ar, br)| {
            let ip = dot(ar, br).abs();
            ip / (dot(ar, ar).sqrt() * dot(br, br).sqrt() + epsilon)
        })
        .fold(0.0, f64::max)
}

pub fn decompose(
    x: &EmbeddingMatrix,
    exp_basis: &ProjectionBasis,
    sup_basis: &ProjectionBasis,
) -> Result<(EmbeddingMatrix, EmbeddingMatrix)> {
    Ok((exp_basis.project(x)?, sup_basis.project(x)?))
}

/// Orthogonal rejection of `s` against `e`.
pub fn purify(
    s: &EmbeddingMatrix,
    e: &EmbeddingMatrix,
    granularity: Granularity,
    epsilon: f64,
) -> Result<EmbeddingMatrix> {
    Ok(purify_guarded(s, e, granularity, epsilon)?.0)
}

fn purify_guarded(
    s: &EmbeddingMatrix,
    e: &EmbeddingMatrix,
    granularity: Granularity,
    epsilon: f64,
) -> Result<(EmbeddingMatrix, Vec<usize>)> {
    if s.shape() != e.shape() {
        return Err(Error::ShapeMismatch(format!(
            "suppress component is {}x{} but express component is {}x{}",
            s.rows(),
            s.cols(),
            e.rows(),
            e.cols()
        )));
    }
    let mut out = s.clone();
    let mut guarded = Vec::new();
    match granularity {
        Granularity::PerToken => {
            for i in 0..s.rows() {
                let er = e.row(i);
                let e_sq = dot(er, er);
                if e_sq > epsilon {
                    let coef = dot(s.row(i), er) / e_sq;
                    for (o, ev) in out.row_mut(i).iter_mut().zip(er) {
                        *o -= coef * ev;
                    }
                } else {
                    guarded.push(i);
                }
            }
        }
        Granularity::Flattened => {
            let e_sq = dot(e.as_slice(), e.as_slice());
            if e_sq > epsilon {
                let coef = dot(s.as_slice(), e.as_slice()) / e_sq;
                out = s.sub_scaled(coef, e)?;
            } else {
                guarded.extend(0..s.rows());
            }
        }
    }
    Ok((out, guarded))
}

/// Runs one refinement. `partition` supplies token spans and is required by
/// the rescaling modes.
pub fn refine(
    x: &EmbeddingMatrix,
    exp_basis: &ProjectionBasis,
    sup_basis: &ProjectionBasis,
    cfg: &RefinementConfig,
    partition: Option<&FramePartition>,
) -> Result<RefinementDecomposition> {
    cfg.validate()?;
    if cfg.mode.needs_spans() && partition.is_none() {
        return Err(Error::MissingSpans(cfg.mode.as_str()));
    }
    if let Some(p) = partition {
        check_spans(x, p)?;
    }

    let (e, s) = decompose(x, exp_basis, sup_basis)?;
    let (s_pure, guarded_rows) = purify_guarded(&s, &e, cfg.granularity, cfg.epsilon)?;

    let x_refined = match cfg.mode {
        Mode::Dual => subtract(x, cfg.alpha, &s_pure)?,
        Mode::Single => subtract(x, cfg.alpha, &s)?,
        Mode::DualRescale => {
            let mut out = subtract(x, cfg.alpha, &s_pure)?;
            if cfg.alpha != 0.0 {
                let factor = 1.0 - cfg.alpha * (1.0 - cfg.rescale_factor);
                for span in &partition.expect("checked above").suppress_spans {
                    out.scale_rows(span.start, span.end, factor);
                }
            }
            out
        }
        Mode::RescaleOnly => {
            let p = partition.expect("checked above");
            let mut out = x.clone();
            for span in &p.express_spans {
                out.scale_rows(span.start, span.end, 1.0 / cfg.rescale_factor);
            }
            for span in &p.suppress_spans {
                out.scale_rows(span.start, span.end, cfg.rescale_factor);
            }
            out
        }
    };
    if x_refined.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure(
            "refined embedding contains non-finite values".to_string(),
        ));
    }

    let inner_products = s_pure
        .row_iter()
        .zip(e.row_iter())
        .map(|(a, b)| dot(a, b))
        .collect();
    Ok(RefinementDecomposition {
        e,
        s,
        s_pure,
        x_refined,
        diagnostics: Diagnostics {
            inner_products,
            guarded_rows,
            express_rank: exp_basis.rank(),
            suppress_rank: sup_basis.rank(),
        },
    })
}

fn subtract(
    x: &EmbeddingMatrix,
    alpha: f64,
    component: &EmbeddingMatrix,
) -> Result<EmbeddingMatrix> {
    // alpha = 0 must return X bit for bit, including signed zeros.
    if alpha == 0.0 {
        return Ok(x.clone());
    }
    x.sub_scaled(alpha, component)
}

fn check_spans(x: &EmbeddingMatrix, p: &FramePartition) -> Result<()> {
    let bad = p
        .express_spans
        .iter()
        .chain(&p.suppress_spans)
        .find(|s: &&Span| s.end > x.rows());
    match bad {
        Some(span) => Err(Error::ShapeMismatch(format!(
            "span {span} does not fit an embedding with {} rows",
            x.rows()
        ))),
        None => Ok(()),
    }
}
