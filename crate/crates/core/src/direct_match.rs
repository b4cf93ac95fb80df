//! Appearance-only fast path.
//!
//! The demo target is ranked against every runtime node. The best candidate
//! is accepted when its score clears `s_min` and the softmax over the top-k
//! scores has low normalised entropy; otherwise grounding falls through to
//! the SMC localizer.

use serde::{Deserialize, Serialize};

use crate::ui_graph::{node_similarity, FuzzyTolerance, GraphError, NodeId, StepSubgraph, UiGraph, UiNode};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GateConfig {
    /// Softmax temperature.
    pub tau: f64,
    pub top_k: usize,
    pub s_min: f64,
    pub h_thr: f64,
    /// Probability mass a candidate needs to count towards `k_eff`.
    pub mass_floor: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            tau: 0.02,
            top_k: 5,
            s_min: 0.9,
            h_thr: 0.5,
            mass_floor: 0.01,
        }
    }
}

/// Runtime candidates for one demo node, best first.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CandidateRanking {
    pub entries: Vec<(NodeId, f64)>,
}

impl CandidateRanking {
    pub fn scores(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.1).collect()
    }

    pub fn best(&self) -> Option<(NodeId, f64)> {
        self.entries.first().copied()
    }
}

/// Score every runtime node against `target` and keep the `top_k` best.
/// Equal scores are ordered by node id.
pub fn rank_candidates(
    target: &UiNode,
    runtime: &UiGraph,
    top_k: usize,
    tol: &FuzzyTolerance,
) -> Result<CandidateRanking, GraphError> {
    let mut entries = runtime
        .nodes
        .iter()
        .map(|n| node_similarity(target, n, tol).map(|s| (n.id, s)))
        .collect::<Result<Vec<_>, _>>()?;
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    entries.truncate(top_k.max(1));
    Ok(CandidateRanking { entries })
}

/// Normalised entropy in `[0, 1]` of the temperature-`tau` softmax over the
/// top-k scores, normalised by `ln k_eff` where `k_eff` counts candidates
/// above the mass floor (at least 2). A single score is unambiguous (0).
pub fn normalized_entropy(scores: &[f64], cfg: &GateConfig) -> f64 {
    let mut top: Vec<f64> = scores.to_vec();
    top.sort_by(|a, b| b.total_cmp(a));
    top.truncate(cfg.top_k.max(1));
    if top.len() < 2 {
        return 0.0;
    }
    let max = top[0];
    let logits: Vec<f64> = top.iter().map(|s| (s - max) / cfg.tau).collect();
    let log_z = logits.iter().map(|l| l.exp()).sum::<f64>().ln();
    let mut h = 0.0;
    let mut significant = 0usize;
    for l in &logits {
        let log_p = l - log_z;
        let p = log_p.exp();
        if p > 0.0 {
            h -= p * log_p;
        }
        if p > cfg.mass_floor {
            significant += 1;
        }
    }
    let k_eff = significant.max(2) as f64;
    (h / k_eff.ln()).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectMatch {
    pub node_id: NodeId,
    pub score: f64,
    pub entropy: f64,
}

/// Full gate evaluation, kept even when the match is declined.
#[derive(Debug, Clone, PartialEq)]
pub struct GateOutcome {
    pub ranking: CandidateRanking,
    pub entropy: f64,
    pub accepted: Option<DirectMatch>,
}

pub fn evaluate_gate(
    sub: &StepSubgraph,
    runtime: &UiGraph,
    cfg: &GateConfig,
    tol: &FuzzyTolerance,
) -> Result<GateOutcome, GraphError> {
    let ranking = rank_candidates(sub.target(), runtime, cfg.top_k, tol)?;
    let entropy = normalized_entropy(&ranking.scores(), cfg);
    let accepted = ranking.best().and_then(|(node_id, score)| {
        (score > cfg.s_min && entropy < cfg.h_thr).then_some(DirectMatch {
            node_id,
            score,
            entropy,
        })
    });
    Ok(GateOutcome {
        ranking,
        entropy,
        accepted,
    })
}

/// The top candidate iff it is both high-scoring and unambiguous.
pub fn direct_match(
    sub: &StepSubgraph,
    runtime: &UiGraph,
    cfg: &GateConfig,
    tol: &FuzzyTolerance,
) -> Result<Option<DirectMatch>, GraphError> {
    Ok(evaluate_gate(sub, runtime, cfg, tol)?.accepted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Point, Rect};
    use crate::ui_graph::{build_graph, extract_step_subgraph, NodeKind};
    use proptest::prelude::*;

    fn node(id: NodeId, x: f64, kind: NodeKind, content: &str, emb: Vec<f64>) -> UiNode {
        UiNode::new(id, Rect::new(x, 100.0, 20.0, 20.0), kind, content, emb, None).unwrap()
    }

    fn h(scores: &[f64]) -> f64 {
        normalized_entropy(scores, &GateConfig::default())
    }

    #[test]
    fn reported_entropy_values() {
        assert!(h(&[0.95, 0.40, 0.30]).abs() < 0.02);
        assert!((h(&[0.92, 0.90, 0.30]) - 0.84).abs() < 0.02);
        assert!((h(&[0.85, 0.84, 0.83, 0.82]) - 0.90).abs() < 0.02);
    }

    #[test]
    fn single_score_is_unambiguous() {
        assert_eq!(h(&[0.7]), 0.0);
        assert_eq!(h(&[]), 0.0);
    }

    #[test]
    fn two_equal_scores_with_negligible_tail() {
        assert!((h(&[0.9, 0.9, 0.1, 0.05]) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn exact_copy_ranks_first() {
        let nodes = vec![
            node(0, 0.0, NodeKind::Text, "Compose", vec![1.0, 0.0, 0.0]),
            node(1, 50.0, NodeKind::Text, "Inbox", vec![0.0, 1.0, 0.0]),
            node(2, 100.0, NodeKind::Icon, "", vec![0.0, 0.0, 1.0]),
        ];
        let g = build_graph(nodes.clone(), 2).unwrap();
        let r = rank_candidates(&nodes[0], &g, 5, &FuzzyTolerance::default()).unwrap();
        assert_eq!(r.entries[0], (0, 1.0));
        assert!(r.entries.windows(2).all(|w| w[0].1 >= w[1].1));

        let single = build_graph(vec![nodes[1].clone()], 2).unwrap();
        let r = rank_candidates(&nodes[0], &single, 5, &FuzzyTolerance::default()).unwrap();
        assert_eq!(r.entries.len(), 1);
    }

    fn checkbox_scene() -> UiGraph {
        let check = vec![1.0, 0.0, 0.0];
        let nodes = vec![
            node(0, 0.0, NodeKind::Icon, "", check.clone()),
            node(1, 30.0, NodeKind::Text, "Edit", vec![0.0, 1.0, 0.0]),
            node(2, 200.0, NodeKind::Icon, "", check),
            node(3, 230.0, NodeKind::Text, "View", vec![0.0, 0.0, 1.0]),
        ];
        build_graph(nodes, 2).unwrap()
    }

    #[test]
    fn identical_duplicates_tie_and_decline() {
        let g = checkbox_scene();
        let sub = extract_step_subgraph(&g, Point::new(10.0, 110.0), Rect::new(0.0, 0.0, 400.0, 300.0), 3).unwrap();
        let out = evaluate_gate(&sub, &g, &GateConfig::default(), &FuzzyTolerance::default()).unwrap();
        assert_eq!(out.ranking.entries[0].1, out.ranking.entries[1].1);
        assert!(out.accepted.is_none());
    }

    #[test]
    fn unchanged_screen_matches_original_target() {
        let nodes = vec![
            node(0, 0.0, NodeKind::Text, "Mail", vec![1.0, 0.0, 0.0]),
            node(1, 50.0, NodeKind::Text, "Compose", vec![0.0, 1.0, 0.0]),
            node(2, 100.0, NodeKind::Icon, "", vec![0.0, 0.0, 1.0]),
        ];
        let g = build_graph(nodes, 2).unwrap();
        let sub = extract_step_subgraph(&g, Point::new(60.0, 110.0), Rect::new(0.0, 0.0, 400.0, 300.0), 3).unwrap();
        let m = direct_match(&sub, &g, &GateConfig::default(), &FuzzyTolerance::default())
            .unwrap()
            .unwrap();
        assert_eq!(m.node_id, 1);
        assert_eq!(m.score, 1.0);
    }

    #[test]
    fn clear_but_weak_best_fails_s_min() {
        let demo = vec![node(0, 0.0, NodeKind::Icon, "", vec![1.0, 0.0])];
        let g = build_graph(demo, 1).unwrap();
        let sub = extract_step_subgraph(&g, Point::new(10.0, 110.0), Rect::new(0.0, 0.0, 400.0, 300.0), 3).unwrap();
        // cos = 0.85 for the best, well separated from the rest
        let c = 0.85f64;
        let rt = build_graph(
            vec![
                node(5, 0.0, NodeKind::Icon, "", vec![c, (1.0 - c * c).sqrt()]),
                node(6, 60.0, NodeKind::Icon, "", vec![0.2, (1.0 - 0.04f64).sqrt()]),
            ],
            1,
        )
        .unwrap();
        let out = evaluate_gate(&sub, &rt, &GateConfig::default(), &FuzzyTolerance::default()).unwrap();
        assert!((out.ranking.entries[0].1 - 0.85).abs() < 1e-12);
        assert!(out.entropy < 0.5);
        assert!(out.accepted.is_none());
    }

    proptest! {
        #[test]
        fn entropy_bounded_and_permutation_invariant(
            mut scores in prop::collection::vec(0.0f64..1.0, 1..12),
            seed in any::<u64>(),
        ) {
            let cfg = GateConfig::default();
            let a = normalized_entropy(&scores, &cfg);
            prop_assert!((0.0..=1.0).contains(&a));
            // deterministic shuffle
            let n = scores.len();
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                scores.swap(i, (s >> 33) as usize % (i + 1));
            }
            prop_assert_eq!(a, normalized_entropy(&scores, &cfg));
        }

        #[test]
        fn duplicating_the_top_never_creates_a_match(
            scores in prop::collection::vec(0.0f64..1.0, 1..10),
        ) {
            let cfg = GateConfig::default();
            let gate = |s: &[f64]| {
                let top = s.iter().cloned().fold(f64::MIN, f64::max);
                top > cfg.s_min && normalized_entropy(s, &cfg) < cfg.h_thr
            };
            let top = scores.iter().cloned().fold(f64::MIN, f64::max);
            let mut dup = scores.clone();
            dup.push(top);
            if !gate(&scores) {
                prop_assert!(!gate(&dup));
            }
            // duplicated tops are never accepted at the default config
            prop_assert!(!gate(&dup));
        }
    }
}
