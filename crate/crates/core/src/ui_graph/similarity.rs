//! Appearance similarity between UI nodes.

use serde::{Deserialize, Serialize};

use super::{GraphError, NodeKind, UiNode};

/// Length-adaptive edit forgiveness for OCR'd text.
///
/// Strings whose longer side has at most `short_len` characters get
/// `short_edits` free edits, those up to `medium_len` get `medium_edits`,
/// longer strings fall back to the plain Levenshtein ratio. The allowance
/// never exceeds `(len - 1) / 2` so that one- and two-character labels
/// cannot be forgiven into each other.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FuzzyTolerance {
    pub short_len: usize,
    pub short_edits: usize,
    pub medium_len: usize,
    pub medium_edits: usize,
}

impl Default for FuzzyTolerance {
    fn default() -> Self {
        Self {
            short_len: 5,
            short_edits: 1,
            medium_len: 12,
            medium_edits: 2,
        }
    }
}

impl FuzzyTolerance {
    /// Number of edits forgiven for a comparison whose longer side has `len` chars.
    pub fn allowance(&self, len: usize) -> usize {
        let schedule = if len <= self.short_len {
            self.short_edits
        } else if len <= self.medium_len {
            self.medium_edits
        } else {
            0
        };
        schedule.min(len.saturating_sub(1) / 2)
    }
}

/// Fuzzy text similarity in `[0, 1]`.
///
/// Exact matches (including two empty strings) score 1. Otherwise the
/// Levenshtein distance `d` is reduced by the forgiven allowance `a` and
/// normalised over the remaining budget: `1 - (d - a) / (L - a)`, held at 1
/// while `d <= a`.
pub fn text_similarity(a: &str, b: &str, tol: &FuzzyTolerance) -> f64 {
    if a == b {
        return 1.0;
    }
    let len = a.chars().count().max(b.chars().count());
    let dist = strsim::levenshtein(a, b);
    let allowed = tol.allowance(len);
    if dist <= allowed {
        return 1.0;
    }
    let excess = (dist - allowed) as f64;
    let budget = (len - allowed) as f64;
    (1.0 - excess / budget).clamp(0.0, 1.0)
}

/// Cosine similarity of two embeddings, clipped to `[0, 1]`.
pub fn clipped_cosine(a: &[f64], b: &[f64]) -> Result<f64, GraphError> {
    if a.len() != b.len() {
        return Err(GraphError::FeatureMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(0.0, 1.0))
}

/// Similarity of a runtime candidate to a demonstration node.
///
/// Textual demo nodes mix fuzzy text and icon-embedding similarity 0.9/0.1;
/// icon nodes use the embedding cosine alone.
pub fn node_similarity(
    demo: &UiNode,
    cand: &UiNode,
    tol: &FuzzyTolerance,
) -> Result<f64, GraphError> {
    let cos = clipped_cosine(&demo.icon_emb, &cand.icon_emb)?;
    Ok(match demo.kind {
        NodeKind::Text => 0.9 * text_similarity(&demo.content, &cand.content, tol) + 0.1 * cos,
        NodeKind::Icon => cos,
    })
}
