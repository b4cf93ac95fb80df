//! Per-step grounding: the direct-match fast path, then the SMC localizer.

use serde::{Deserialize, Serialize};

use crate::config::EngineConfig;
use crate::confidence::{likelihood_confidence, ConfidenceBreakdown, Readiness};
use crate::direct_match::{evaluate_gate, DirectMatch};
use crate::geometry::{Point, Rect};
use crate::smc::model::{build_evidence, Hypothesis};
use crate::smc::{smc_localize, LocalizationResult, ParticleSummary, SmcError};
use crate::ui_graph::{StepSubgraph, UiGraph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grounding {
    pub result: LocalizationResult,
    /// Accepted direct match, if the fast path fired.
    pub direct: Option<DirectMatch>,
    /// Gate entropy over the top candidates.
    pub entropy: f64,
}

impl Grounding {
    pub fn point(&self) -> Point {
        self.result.point
    }

    pub fn confidence(&self) -> f64 {
        self.result.confidence.combined
    }

    pub fn readiness(&self, c_min: f64) -> Readiness {
        Readiness::from_score(self.confidence(), c_min)
    }
}

/// Click point on a matched element: the demo click's offset inside the
/// target box, rescaled to the matched box.
pub fn transfer_click(sub: &StepSubgraph, matched: &Rect) -> Point {
    let t = sub.target().bbox;
    let off = sub.click_point - t.center();
    let c = matched.center();
    Point::new(c.x + off.x * matched.w / t.w, c.y + off.y * matched.h / t.h)
}

fn fast_path_result(
    sub: &StepSubgraph,
    runtime: &UiGraph,
    live_window: &Rect,
    m: &DirectMatch,
    cfg: &EngineConfig,
) -> Result<LocalizationResult, SmcError> {
    let node = runtime.node(m.node_id).expect("matched node comes from the runtime graph");
    let point = transfer_click(sub, &node.bbox);
    let t = sub.target().bbox;
    let (lo, hi) = (cfg.smc.prior.lo, cfg.smc.prior.hi);
    let scale = ((node.bbox.w / t.w).clamp(lo, hi), (node.bbox.h / t.h).clamp(lo, hi));
    let evidence = build_evidence(sub, runtime, live_window, &cfg.smc, &cfg.similarity)?;
    let theta = Hypothesis::new(point.x, point.y, scale.0, scale.1);
    let (likelihood, node_scores) = likelihood_confidence(&evidence, &theta);
    let radius = crate::confidence::acceptance_radius(evidence.sigma_loc, &cfg.smc.confidence);
    Ok(LocalizationResult {
        point,
        scale,
        confidence: ConfidenceBreakdown::new(node_scores, likelihood, 1.0, radius, 0.0),
        summary: ParticleSummary {
            mean: point,
            cov_trace: 0.0,
            cluster_fraction: 1.0,
        },
        stages: 0,
        fast_path: true,
        sigma_loc: evidence.sigma_loc,
        trace: Vec::new(),
    })
}

/// Ground the demo target on the live screen.
pub fn ground(
    sub: &StepSubgraph,
    runtime: &UiGraph,
    live_window: &Rect,
    cfg: &EngineConfig,
    seed: u64,
) -> Result<Grounding, SmcError> {
    if runtime.is_empty() {
        return Err(SmcError::EmptyRuntime);
    }
    let gate = evaluate_gate(sub, runtime, &cfg.gate, &cfg.similarity)?;
    let result = match (&gate.accepted, cfg.fast_path) {
        (Some(m), true) => fast_path_result(sub, runtime, live_window, m, cfg)?,
        _ => smc_localize(sub, runtime, live_window, &cfg.smc, &cfg.similarity, seed)?,
    };
    Ok(Grounding {
        direct: if result.fast_path { gate.accepted } else { None },
        entropy: gate.entropy,
        result,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ui_graph::{build_graph, extract_step_subgraph, NodeKind, UiNode};

    fn scene(dx: f64) -> UiGraph {
        let labels = ["File", "Edit", "View", "Insert", "Format", "Tools"];
        let nodes = labels
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let mut e = vec![0.0; 8];
                e[i] = 1.0;
                UiNode::new(i, Rect::new(100.0 + dx + 80.0 * i as f64, 50.0, 60.0, 20.0), NodeKind::Text, *l, e, None)
                    .unwrap()
            })
            .collect();
        build_graph(nodes, 4).unwrap()
    }

    #[test]
    fn click_offset_transfers_with_box_size() {
        let g = scene(0.0);
        let sub = extract_step_subgraph(&g, Point::new(270.0, 55.0), Rect::new(0.0, 0.0, 800.0, 600.0), 3).unwrap();
        let p = transfer_click(&sub, &Rect::new(500.0, 500.0, 120.0, 40.0));
        // demo offset (-20, -5) doubled
        assert_eq!(p, Point::new(520.0, 510.0));
    }

    #[test]
    fn fast_path_on_translated_screen() {
        let demo = scene(0.0);
        let live = scene(200.0);
        let win = Rect::new(0.0, 0.0, 1200.0, 600.0);
        let click = Point::new(270.0, 60.0);
        let sub = extract_step_subgraph(&demo, click, win, 4).unwrap();
        let g = ground(&sub, &live, &win, &EngineConfig::default(), 1).unwrap();
        assert!(g.result.fast_path);
        assert_eq!(g.direct.unwrap().node_id, 2);
        assert_eq!(g.point(), Point::new(470.0, 60.0));
        assert!(g.readiness(0.6).is_ready());
    }

    #[test]
    fn disabled_fast_path_runs_smc() {
        let demo = scene(0.0);
        let win = Rect::new(0.0, 0.0, 1200.0, 600.0);
        let click = Point::new(270.0, 60.0);
        let sub = extract_step_subgraph(&demo, click, win, 4).unwrap();
        let cfg = EngineConfig {
            fast_path: false,
            ..EngineConfig::default()
        };
        let g = ground(&sub, &demo, &win, &cfg, 1).unwrap();
        assert!(!g.result.fast_path && g.direct.is_none());
        // one row of labels pins y only to a few px; stay within the posterior spread
        let spread = g.result.confidence.spread;
        assert!(g.point().dist(click) < spread.max(2.0), "{:?} spread {spread}", g.point());
        assert!(g.readiness(0.6).is_ready());
    }
}
