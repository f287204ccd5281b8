//! Entanglement and refinement-quality metrics.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, EmbeddingMatrix};
use crate::prompt::{slice, FramePartition, PromptLayout};
use crate::refine::{orthogonality_residual, refine, ConceptBases, Mode, RefinementConfig};

/// Relative tolerance for the express-preservation check.
pub const EXPRESS_PRESERVATION_TOL: f64 = 1e-5;

/// How a span of token rows is reduced to one vector.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    #[default]
    Mean,
    LastToken,
}

impl Pooling {
    pub fn as_str(&self) -> &'static str {
        match self {
            Pooling::Mean => "mean",
            Pooling::LastToken => "last-token",
        }
    }
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('_', "-").as_str() {
            "mean" => Ok(Pooling::Mean),
            "last-token" | "last" => Ok(Pooling::LastToken),
            other => Err(Error::InvalidConfig(format!("unknown pooling {other:?}"))),
        }
    }
}

pub fn pool(m: &EmbeddingMatrix, pooling: Pooling) -> Vec<f64> {
    match pooling {
        Pooling::Mean => {
            let mut acc = vec![0.0; m.cols()];
            for row in m.row_iter() {
                for (a, v) in acc.iter_mut().zip(row) {
                    *a += v;
                }
            }
            let n = m.rows() as f64;
            acc.iter_mut().for_each(|a| *a /= n);
            acc
        }
        Pooling::LastToken => m.row(m.rows() - 1).to_vec(),
    }
}

/// Cosine similarity of two vectors, clamped to `[-1, 1]`.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateInput("pooled vector is zero".to_string()));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

pub fn pooled_cosine(a: &EmbeddingMatrix, b: &EmbeddingMatrix, pooling: Pooling) -> Result<f64> {
    if a.cols() != b.cols() {
        return Err(Error::ShapeMismatch(format!(
            "embedding dimensions {} and {} differ",
            a.cols(),
            b.cols()
        )));
    }
    cosine(&pool(a, pooling), &pool(b, pooling))
}

/// Pairwise pooled cosine similarity between all prompt segments.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntanglementReport {
    pub labels: Vec<String>,
    pub pooling: Pooling,
    /// `None` where either segment pools to the zero vector.
    pub pairwise: Vec<Vec<Option<f64>>>,
    pub per_segment_norms: Vec<f64>,
}

impl EntanglementReport {
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.pairwise[i][j]
    }
}

pub fn entanglement_report(
    x: &EmbeddingMatrix,
    layout: &PromptLayout,
    pooling: Pooling,
) -> Result<EntanglementReport> {
    if layout.total_tokens() != x.rows() {
        return Err(Error::ShapeMismatch(format!(
            "layout covers {} tokens but the embedding has {} rows",
            layout.total_tokens(),
            x.rows()
        )));
    }
    let pooled: Vec<Vec<f64>> = layout
        .spans()
        .iter()
        .map(|s| slice(x, &[*s]).map(|m| pool(&m, pooling)))
        .collect::<Result<_>>()?;
    let per_segment_norms = pooled.iter().map(|p| dot(p, p).sqrt()).collect();
    let pairwise = pooled
        .iter()
        .map(|a| pooled.iter().map(|b| cosine(a, b).ok()).collect())
        .collect();
    Ok(EntanglementReport {
        labels: layout.labels().iter().map(|s| s.to_string()).collect(),
        pooling,
        pairwise,
        per_segment_norms,
    })
}

/// Operator selection for a report row. `None` leaves `X` untouched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportMode {
    None,
    Dual,
    Single,
    DualRescale,
    RescaleOnly,
}

impl ReportMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ReportMode::None => "none",
            ReportMode::Dual => "dual",
            ReportMode::Single => "single",
            ReportMode::DualRescale => "dual-rescale",
            ReportMode::RescaleOnly => "rescale-only",
        }
    }

    pub fn operator(&self) -> Option<Mode> {
        match self {
            ReportMode::None => None,
            ReportMode::Dual => Some(Mode::Dual),
            ReportMode::Single => Some(Mode::Single),
            ReportMode::DualRescale => Some(Mode::DualRescale),
            ReportMode::RescaleOnly => Some(Mode::RescaleOnly),
        }
    }
}

impl From<Mode> for ReportMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Dual => ReportMode::Dual,
            Mode::Single => ReportMode::Single,
            Mode::DualRescale => ReportMode::DualRescale,
            Mode::RescaleOnly => ReportMode::RescaleOnly,
        }
    }
}

impl FromStr for ReportMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "none" {
            return Ok(ReportMode::None);
        }
        s.parse::<Mode>().map(ReportMode::from)
    }
}

impl fmt::Display for ReportMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One report row. Field names are a fixed serialization contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub mode: ReportMode,
    pub alpha: f64,
    pub suppress_energy_before: f64,
    pub suppress_energy_after: f64,
    pub express_energy_before: f64,
    pub express_energy_after: f64,
    /// Every row-wise `<X'_i, E_i>` within relative tolerance of `<X_i, E_i>`.
    pub express_preserved: bool,
    /// Largest normalized row-wise inner product between the subtracted
    /// component and `E`. Zero for modes that subtract nothing.
    pub orthogonality_max_residual: f64,
}

/// Energies of the refined embedding under each requested operator.
///
/// Energies are Frobenius norms of the projection of the whole embedding
/// onto the suppress or express basis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefinementReport {
    pub frame_index: Option<usize>,
    pub rows: Vec<ModeReport>,
}

impl RefinementReport {
    pub fn row(&self, mode: ReportMode) -> Option<&ModeReport> {
        self.rows.iter().find(|r| r.mode == mode)
    }
}

/// Builds a report with a leading `none` row followed by one row per entry in
/// `modes` (duplicates of `none` are skipped). Every row uses `base` with the
/// mode overridden.
pub fn refinement_report(
    x: &EmbeddingMatrix,
    partition: Option<&FramePartition>,
    bases: &ConceptBases,
    base: &RefinementConfig,
    modes: &[ReportMode],
) -> Result<RefinementReport> {
    base.validate()?;
    let suppress_before = bases.suppress.energy(x)?;
    let express_before = bases.express.energy(x)?;
    let e = bases.express.project(x)?;
    let baseline_inner: Vec<f64> = x
        .row_iter()
        .zip(e.row_iter())
        .map(|(a, b)| dot(a, b))
        .collect();

    let mut rows = vec![ModeReport {
        mode: ReportMode::None,
        alpha: base.alpha,
        suppress_energy_before: suppress_before,
        suppress_energy_after: suppress_before,
        express_energy_before: express_before,
        express_energy_after: express_before,
        express_preserved: true,
        orthogonality_max_residual: 0.0,
    }];

    for &mode in modes {
        let Some(op) = mode.operator() else {
            continue;
        };
        let cfg = base.with_mode(op);
        let d = refine(x, &bases.express, &bases.suppress, &cfg, partition)?;
        let x_after = &d.x_refined;
        let residual = match op {
            Mode::Dual | Mode::DualRescale => d.max_orthogonality_residual(cfg.epsilon),
            Mode::Single => orthogonality_residual(&d.s, &d.e, cfg.epsilon),
            Mode::RescaleOnly => 0.0,
        };
        rows.push(ModeReport {
            mode,
            alpha: cfg.alpha,
            suppress_energy_before: suppress_before,
            suppress_energy_after: bases.suppress.energy(x_after)?,
            express_energy_before: express_before,
            express_energy_after: bases.express.energy(x_after)?,
            express_preserved: express_preserved(x_after, &d.e, &baseline_inner, cfg.epsilon),
            orthogonality_max_residual: residual,
        });
    }

    Ok(RefinementReport {
        frame_index: partition.map(|p| p.frame_index),
        rows,
    })
}

/// Row-wise check `|<X'_i, E_i> - <X_i, E_i>| <= tol * (|<X_i, E_i>| + epsilon)`.
pub fn express_preserved(
    x_after: &EmbeddingMatrix,
    e: &EmbeddingMatrix,
    baseline_inner: &[f64],
    epsilon: f64,
) -> bool {
    x_after
        .row_iter()
        .zip(e.row_iter())
        .zip(baseline_inner)
        .all(|((xr, er), &before)| {
            let after = dot(xr, er);
            (after - before).abs() <= EXPRESS_PRESERVATION_TOL * (before.abs() + epsilon)
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::build_layout_unlabeled;

    fn m(rows: &[&[f64]]) -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let a = m(&[&[1.0, 2.0], &[3.0, -1.0]]);
        assert!((pooled_cosine(&a, &a, Pooling::Mean).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(
            pooled_cosine(&m(&[&[1.0, 0.0]]), &m(&[&[0.0, 1.0]]), Pooling::Mean).unwrap(),
            0.0
        );
        let c = pooled_cosine(&m(&[&[1.0, 0.0]]), &m(&[&[1.0, 1.0]]), Pooling::Mean).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-8);
    }

    #[test]
    fn pooling_variants() {
        let a = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(pool(&a, Pooling::Mean), vec![0.5, 0.5]);
        assert_eq!(pool(&a, Pooling::LastToken), vec![0.0, 1.0]);
        assert_eq!("last-token".parse::<Pooling>().unwrap(), Pooling::LastToken);
    }

    #[test]
    fn zero_pool_is_degenerate() {
        let z = m(&[&[1.0, 0.0], &[-1.0, 0.0]]);
        assert!(matches!(
            pooled_cosine(&z, &m(&[&[1.0, 0.0]]), Pooling::Mean),
            Err(Error::DegenerateInput(_))
        ));
        assert!(pooled_cosine(&z, &m(&[&[1.0, 0.0, 0.0]]), Pooling::Mean).is_err());
    }

    #[test]
    fn report_identical_segments() {
        let layout = build_layout_unlabeled(&[1, 1]).unwrap();
        let x = m(&[&[0.3, 0.4], &[0.3, 0.4]]);
        let r = entanglement_report(&x, &layout, Pooling::Mean).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((r.get(i, j).unwrap() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn report_orthogonal_and_missing_segments() {
        let layout = build_layout_unlabeled(&[1, 1, 2]).unwrap();
        let x = m(&[&[1.0, 0.0], &[0.0, 2.0], &[1.0, 1.0], &[-1.0, -1.0]]);
        let r = entanglement_report(&x, &layout, Pooling::Mean).unwrap();
        assert_eq!(r.get(0, 1), Some(0.0));
        assert_eq!(r.get(1, 0), Some(0.0));
        assert_eq!(r.get(0, 2), None);
        assert_eq!(r.get(2, 2), None);
        assert_eq!(r.per_segment_norms, vec![1.0, 2.0, 0.0]);
    }

    #[test]
    fn report_checks_rows() {
        let layout = build_layout_unlabeled(&[1, 1]).unwrap();
        assert!(entanglement_report(&m(&[&[1.0]]), &layout, Pooling::Mean).is_err());
    }

    #[test]
    fn none_row_reproduces_baseline() {
        let layout = build_layout_unlabeled(&[1, 1, 1]).unwrap();
        let p = layout.partition(1).unwrap();
        let x = m(&[&[1.0, 0.2, 0.0], &[0.1, 1.0, 0.3], &[0.5, 0.5, 1.0]]);
        let bases = ConceptBases::from_slices(&x, &p, 1e-10).unwrap();
        let r = refinement_report(
            &x,
            Some(&p),
            &bases,
            &RefinementConfig::default(),
            &[
                ReportMode::Dual,
                ReportMode::Single,
                ReportMode::RescaleOnly,
            ],
        )
        .unwrap();
        assert_eq!(r.rows.len(), 4);
        let none = r.row(ReportMode::None).unwrap();
        assert_eq!(none.suppress_energy_after, none.suppress_energy_before);
        assert_eq!(none.express_energy_after, none.express_energy_before);
        let dual = r.row(ReportMode::Dual).unwrap();
        assert!(dual.express_preserved);
        assert!(dual.suppress_energy_after < dual.suppress_energy_before);
        assert!(dual.orthogonality_max_residual < 1e-12);
    }
}
