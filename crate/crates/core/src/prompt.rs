//! Layout of a concatenated prompt `[P0; P1; ...; PN]` and the per-frame
//! express/suppress split.
//!
//! Tokenization happens elsewhere. This module only sees token counts.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::EmbeddingMatrix;

/// Half-open token range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, index: usize) -> bool {
        (self.start..self.end).contains(&index)
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub label: String,
    pub span: Span,
}

/// Contiguous segments covering `[0, total_tokens)`. Segment 0 is the
/// identity prompt, the rest are frames.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PromptLayout {
    segments: Vec<Segment>,
    total_tokens: usize,
}

impl PromptLayout {
    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total_tokens(&self) -> usize {
        self.total_tokens
    }

    /// Number of frame prompts `N`.
    pub fn frame_count(&self) -> usize {
        self.segments.len() - 1
    }

    pub fn identity(&self) -> Span {
        self.segments[0].span
    }

    /// Span of frame `j` (1-based).
    pub fn frame(&self, j: usize) -> Result<Span> {
        self.check_frame(j)?;
        Ok(self.segments[j].span)
    }

    pub fn spans(&self) -> Vec<Span> {
        self.segments.iter().map(|s| s.span).collect()
    }

    pub fn labels(&self) -> Vec<&str> {
        self.segments.iter().map(|s| s.label.as_str()).collect()
    }

    pub fn partition(&self, j: usize) -> Result<FramePartition> {
        partition(self, j)
    }

    fn check_frame(&self, j: usize) -> Result<()> {
        if j == 0 || j > self.frame_count() {
            return Err(Error::InvalidFrame {
                index: j,
                frames: self.frame_count(),
            });
        }
        Ok(())
    }
}

/// Express set `[P0; Pj]` and suppress set `{Pk : k != j}` for one frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FramePartition {
    pub frame_index: usize,
    pub express_spans: Vec<Span>,
    pub suppress_spans: Vec<Span>,
}

impl FramePartition {
    pub fn express_tokens(&self) -> usize {
        self.express_spans.iter().map(Span::len).sum()
    }

    pub fn suppress_tokens(&self) -> usize {
        self.suppress_spans.iter().map(Span::len).sum()
    }

    /// The current frame's own span (the second express span).
    pub fn frame_span(&self) -> Span {
        self.express_spans[1]
    }
}

pub fn build_layout<S: AsRef<str>>(
    segment_lengths: &[usize],
    labels: &[S],
) -> Result<PromptLayout> {
    if segment_lengths.len() != labels.len() {
        return Err(Error::InvalidConfig(format!(
            "{} segment lengths but {} labels",
            segment_lengths.len(),
            labels.len()
        )));
    }
    if segment_lengths.len() < 2 {
        return Err(Error::MissingFrames(segment_lengths.len()));
    }
    let mut seen = HashSet::new();
    let mut segments = Vec::with_capacity(labels.len());
    let mut cursor = 0;
    for (index, (&len, label)) in segment_lengths.iter().zip(labels).enumerate() {
        let label = label.as_ref();
        if len == 0 {
            return Err(Error::EmptySegment {
                index,
                label: label.to_string(),
            });
        }
        if !seen.insert(label) {
            return Err(Error::DuplicateLabel(label.to_string()));
        }
        segments.push(Segment {
            label: label.to_string(),
            span: Span::new(cursor, cursor + len),
        });
        cursor += len;
    }
    Ok(PromptLayout {
        segments,
        total_tokens: cursor,
    })
}

/// Layout with generated labels `P0, P1, ...`.
pub fn build_layout_unlabeled(segment_lengths: &[usize]) -> Result<PromptLayout> {
    let labels: Vec<String> = (0..segment_lengths.len())
        .map(|i| format!("P{i}"))
        .collect();
    build_layout(segment_lengths, &labels)
}

pub fn partition(layout: &PromptLayout, j: usize) -> Result<FramePartition> {
    layout.check_frame(j)?;
    let spans = layout.spans();
    let suppress_spans = spans[1..]
        .iter()
        .enumerate()
        .filter(|(k, _)| k + 1 != j)
        .map(|(_, s)| *s)
        .collect();
    Ok(FramePartition {
        frame_index: j,
        express_spans: vec![spans[0], spans[j]],
        suppress_spans,
    })
}

/// Concatenates the rows covered by `spans`, in span order.
pub fn slice(m: &EmbeddingMatrix, spans: &[Span]) -> Result<EmbeddingMatrix> {
    let mut data = Vec::new();
    for span in spans {
        if span.is_empty() || span.end > m.rows() {
            return Err(Error::ShapeMismatch(format!(
                "span {span} does not fit a matrix with {} rows",
                m.rows()
            )));
        }
        for i in span.start..span.end {
            data.extend_from_slice(m.row(i));
        }
    }
    if data.is_empty() {
        return Err(Error::ShapeMismatch("no spans to slice".to_string()));
    }
    EmbeddingMatrix::new(data.len() / m.cols(), m.cols(), data)
}

/// Gathers token ids covered by `spans`, in span order.
pub fn gather_tokens(tokens: &[u32], spans: &[Span]) -> Result<Vec<u32>> {
    let mut out = Vec::new();
    for span in spans {
        if span.end > tokens.len() {
            return Err(Error::ShapeMismatch(format!(
                "span {span} does not fit {} tokens",
                tokens.len()
            )));
        }
        out.extend_from_slice(&tokens[span.start..span.end]);
    }
    Ok(out)
}
