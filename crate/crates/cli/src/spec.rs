//! Partition files describing how a prompt splits into segments.
//!
//! ```json
//! {"segments": [{"label": "identity", "tokens": 7}, {"label": "beach", "tokens": 4}],
//!  "frame": 1, "mode": "reencode"}
//! ```
//!
//! `mode` says where concept embeddings come from: `reencode` expects them as
//! separate files (each concept encoded on its own), `slice` takes them as
//! rows of the full embedding.

use std::fs;
use std::path::Path;

use orthoprompt::{build_layout, FramePartition, PromptLayout};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Context};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConceptSource {
    #[default]
    Reencode,
    Slice,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentSpec {
    pub label: String,
    pub tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSpec {
    pub segments: Vec<SegmentSpec>,
    pub frame: usize,
    #[serde(default)]
    pub mode: ConceptSource,
}

impl PartitionSpec {
    pub fn from_layout(layout: &PromptLayout, frame: usize, mode: ConceptSource) -> Self {
        let segments = layout
            .segments()
            .iter()
            .map(|s| SegmentSpec {
                label: s.label.clone(),
                tokens: s.span.len(),
            })
            .collect();
        Self {
            segments,
            frame,
            mode,
        }
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_slice(&bytes)
            .map_err(|e| CliError::format(path, format!("invalid partition file: {e}")))
    }

    pub fn layout(&self, path: &Path) -> Result<PromptLayout, CliError> {
        let lengths: Vec<usize> = self.segments.iter().map(|s| s.tokens).collect();
        let labels: Vec<&str> = self.segments.iter().map(|s| s.label.as_str()).collect();
        build_layout(&lengths, &labels).context(path.display().to_string())
    }

    pub fn partition(&self, path: &Path) -> Result<(PromptLayout, FramePartition), CliError> {
        let layout = self.layout(path)?;
        let partition = layout
            .partition(self.frame)
            .context(path.display().to_string())?;
        Ok((layout, partition))
    }
}
