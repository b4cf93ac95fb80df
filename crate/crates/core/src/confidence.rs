//! Readiness score: likelihood confidence at the reported hypothesis times
//! a Rayleigh-CDF spatial confidence over the particle cloud.

use serde::{Deserialize, Serialize};

use crate::smc::model::{Evidence, EvidenceRecord, Hypothesis};
use crate::smc::particles::ParticleSet;
use crate::ui_graph::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConfidenceConfig {
    pub r_base: f64,
    /// Radius growth per pixel of locality bandwidth.
    pub r_alpha: f64,
    /// Readiness threshold; a step is ready only strictly above it.
    pub c_min: f64,
}

impl Default for ConfidenceConfig {
    fn default() -> Self {
        Self {
            r_base: 50.0,
            r_alpha: 0.2,
            c_min: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConfidenceBreakdown {
    pub node_scores: Vec<(NodeId, f64)>,
    pub likelihood: f64,
    pub spatial: f64,
    pub combined: f64,
    /// Acceptance radius in pixels.
    pub radius: f64,
    /// Posterior position spread in pixels.
    pub spread: f64,
}

impl ConfidenceBreakdown {
    pub fn new(node_scores: Vec<(NodeId, f64)>, likelihood: f64, spatial: f64, radius: f64, spread: f64) -> Self {
        Self {
            node_scores,
            likelihood,
            spatial,
            combined: likelihood * spatial,
            radius,
            spread,
        }
    }
}

/// Match quality of one node at `theta`, normalised between the
/// missing-node baseline (0) and the winner's appearance ceiling (1).
pub fn node_confidence(record: &EvidenceRecord, theta: &Hypothesis, p_miss: f64) -> f64 {
    let c_hat = theta.predict(record.displacement);
    let two_var = 2.0 * record.sigma * record.sigma;
    let winner = record
        .candidates
        .iter()
        .map(|c| (-c.center.dist_sq(c_hat) / two_var + c.w_app.ln(), c.w_app))
        .max_by(|a, b| a.0.total_cmp(&b.0));
    let Some((log_match, w_app)) = winner else {
        return 0.0;
    };
    let log_miss = p_miss.ln();
    let denom = w_app.ln() - log_miss;
    if denom <= 0.0 {
        return 0.0;
    }
    ((log_match - log_miss) / denom).clamp(0.0, 1.0)
}

/// Locality-weighted average of the per-node scores.
pub fn likelihood_confidence(evidence: &Evidence, theta: &Hypothesis) -> (f64, Vec<(NodeId, f64)>) {
    let scores: Vec<(NodeId, f64)> = evidence
        .records
        .iter()
        .map(|r| (r.node_id, node_confidence(r, theta, evidence.p_miss)))
        .collect();
    let (mut num, mut den) = (0.0, 0.0);
    for (r, (_, c)) in evidence.records.iter().zip(&scores) {
        num += r.w_loc * c;
        den += r.w_loc;
    }
    let score = if den > 0.0 { (num / den).clamp(0.0, 1.0) } else { 0.0 };
    (score, scores)
}

pub fn acceptance_radius(sigma_loc: f64, cfg: &ConfidenceConfig) -> f64 {
    cfg.r_base + cfg.r_alpha * sigma_loc
}

/// Rayleigh CDF `1 - exp(-r^2 / (2 spread^2))`; a zero spread is certain.
pub fn rayleigh_confidence(radius: f64, spread: f64) -> f64 {
    if spread <= 0.0 {
        return 1.0;
    }
    1.0 - (-radius * radius / (2.0 * spread * spread)).exp()
}

/// `sqrt(trace(cov) / 2)` of the weighted particle positions.
pub fn posterior_spread(ps: &ParticleSet) -> f64 {
    let (xx, _, yy) = ps.position_covariance();
    (0.5 * (xx + yy)).max(0.0).sqrt()
}

/// `(score, radius, spread)`.
pub fn spatial_confidence(ps: &ParticleSet, sigma_loc: f64, cfg: &ConfidenceConfig) -> (f64, f64, f64) {
    let r = acceptance_radius(sigma_loc, cfg);
    let spread = posterior_spread(ps);
    (rayleigh_confidence(r, spread), r, spread)
}

/// Both factors at the reported hypothesis `theta`.
pub fn assess(evidence: &Evidence, theta: &Hypothesis, ps: &ParticleSet, cfg: &ConfidenceConfig) -> ConfidenceBreakdown {
    let (likelihood, node_scores) = likelihood_confidence(evidence, theta);
    let (spatial, radius, spread) = spatial_confidence(ps, evidence.sigma_loc, cfg);
    ConfidenceBreakdown::new(node_scores, likelihood, spatial, radius, spread)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readiness {
    Ready,
    NotReady,
}

impl Readiness {
    pub fn from_score(combined: f64, c_min: f64) -> Self {
        if combined > c_min {
            Readiness::Ready
        } else {
            Readiness::NotReady
        }
    }

    pub fn is_ready(self) -> bool {
        self == Readiness::Ready
    }
}

pub fn readiness(result: &crate::smc::LocalizationResult, c_min: f64) -> Readiness {
    Readiness::from_score(result.confidence.combined, c_min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Point, Rect};
    use crate::smc::model::Candidate;
    use proptest::prelude::*;

    fn record(cands: &[(f64, f64, f64)], sigma: f64, w_loc: f64) -> EvidenceRecord {
        EvidenceRecord {
            node_id: 0,
            is_target: false,
            displacement: Point::new(0.0, 0.0),
            candidates: cands
                .iter()
                .enumerate()
                .map(|(i, &(x, y, w))| Candidate {
                    node_id: i,
                    center: Point::new(x, y),
                    w_app: w,
                })
                .collect(),
            sigma,
            w_loc,
        }
    }

    fn particles(points: &[(f64, f64)]) -> ParticleSet {
        ParticleSet::uniform(
            points.iter().map(|&(x, y)| Hypothesis::new(x, y, 1.0, 1.0)).collect(),
            0,
        )
    }

    #[test]
    fn node_score_cases() {
        let theta = Hypothesis::new(50.0, 50.0, 1.0, 1.0);
        assert_eq!(node_confidence(&record(&[(50.0, 50.0, 0.8)], 12.0, 1.0), &theta, 1e-4), 1.0);
        // appearance ceiling below the missing baseline
        assert_eq!(node_confidence(&record(&[(50.0, 50.0, 1e-5)], 12.0, 1.0), &theta, 1e-4), 0.0);
        assert_eq!(node_confidence(&record(&[], 12.0, 1.0), &theta, 1e-4), 0.0);
        // one sigma off: 1 - 0.5 / (ln w - ln p_miss)
        let c = node_confidence(&record(&[(62.0, 50.0, 1.0)], 12.0, 1.0), &theta, 1e-4);
        assert!((c - (1.0 - 0.5 / (-(1e-4f64).ln()))).abs() < 1e-12);
    }

    #[test]
    fn node_score_decreases_with_distance() {
        let theta = Hypothesis::new(0.0, 0.0, 1.0, 1.0);
        let mut last = f64::INFINITY;
        for i in 0..60 {
            let c = node_confidence(&record(&[(i as f64 * 2.0, 0.0, 0.7)], 12.0, 1.0), &theta, 1e-4);
            assert!(c <= last);
            last = c;
        }
        assert_eq!(last, 0.0);
    }

    #[test]
    fn aggregate_is_locality_weighted() {
        let theta = Hypothesis::new(0.0, 0.0, 1.0, 1.0);
        let ev = Evidence {
            records: vec![record(&[(0.0, 0.0, 1.0)], 12.0, 1.0), record(&[], 12.0, 0.25)],
            sigma_loc: 100.0,
            screen: Rect::new(-100.0, -100.0, 200.0, 200.0),
            demo_window: Rect::new(0.0, 0.0, 10.0, 10.0),
            live_window: Rect::new(0.0, 0.0, 10.0, 10.0),
            p_miss: 1e-4,
        };
        let (s, nodes) = likelihood_confidence(&ev, &theta);
        assert!((s - 1.0 / 1.25).abs() < 1e-12);
        assert_eq!(nodes.len(), 2);
        let empty = Evidence { records: vec![], ..ev };
        assert_eq!(likelihood_confidence(&empty, &theta), (0.0, vec![]));
    }

    #[test]
    fn spatial_reported_values() {
        assert!(rayleigh_confidence(50.0, 5.0) >= 0.99);
        assert!((rayleigh_confidence(50.0, 100.0) - 0.12).abs() < 0.01);
        let ps = particles(&[(10.0, 20.0); 8]);
        let cfg = ConfidenceConfig::default();
        assert_eq!(spatial_confidence(&ps, 300.0, &cfg).0, 1.0);
        for (s, r) in [(40.0, 58.0), (200.0, 90.0), (500.0, 150.0)] {
            assert!((acceptance_radius(s, &cfg) - r).abs() < 0.5);
        }
    }

    #[test]
    fn spread_matches_direct_covariance() {
        let pts = [(0.0, 0.0), (10.0, 0.0), (0.0, 20.0), (10.0, 20.0)];
        // var_x = 25, var_y = 100
        assert!((posterior_spread(&particles(&pts)) - (62.5f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn readiness_is_strict() {
        assert_eq!(Readiness::from_score(0.95, 0.6), Readiness::Ready);
        assert_eq!(Readiness::from_score(0.6, 0.6), Readiness::NotReady);
        let b = ConfidenceBreakdown::new(vec![], 1.0, 0.1, 50.0, 100.0);
        assert!((b.combined - 0.1).abs() < 1e-15);
        assert_eq!(Readiness::from_score(b.combined, 0.6), Readiness::NotReady);
    }

    proptest! {
        #[test]
        fn spatial_strictly_decreasing(a in 0.5f64..500.0, b in 0.5f64..500.0, r in 1.0f64..200.0) {
            prop_assume!((a - b).abs() > 1e-6);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let cl = rayleigh_confidence(r, lo);
            let ch = rayleigh_confidence(r, hi);
            // strict where the CDF is not saturated at 1 in floating point
            if cl < 1.0 {
                prop_assert!(ch < cl);
            } else {
                prop_assert!(ch <= cl);
            }
        }

        #[test]
        fn product_bounded_and_translation_invariant(
            pts in prop::collection::vec((0.0f64..400.0, 0.0f64..400.0), 1..30),
            cands in prop::collection::vec((0.0f64..400.0, 0.0f64..400.0, 0.05f64..1.0), 0..5),
            tx in -300.0f64..300.0, ty in -300.0f64..300.0,
        ) {
            let cfg = ConfidenceConfig::default();
            let ev = Evidence {
                records: vec![record(&cands, 15.0, 1.0), record(&cands[..cands.len() / 2], 20.0, 0.5)],
                sigma_loc: 120.0,
                screen: Rect::new(-400.0, -400.0, 1200.0, 1200.0),
                demo_window: Rect::new(0.0, 0.0, 10.0, 10.0),
                live_window: Rect::new(0.0, 0.0, 10.0, 10.0),
                p_miss: 1e-4,
            };
            let ps = particles(&pts);
            let theta = Hypothesis::new(pts[0].0, pts[0].1, 1.0, 1.0);
            let b = assess(&ev, &theta, &ps, &cfg);
            for v in [b.likelihood, b.spatial, b.combined] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert!(b.combined <= b.likelihood.min(b.spatial) + 1e-15);

            let shift = |r: &EvidenceRecord| EvidenceRecord {
                candidates: r.candidates.iter().map(|c| Candidate { center: Point::new(c.center.x + tx, c.center.y + ty), ..*c }).collect(),
                ..r.clone()
            };
            let ev2 = Evidence { records: ev.records.iter().map(shift).collect(), ..ev.clone() };
            let moved: Vec<_> = pts.iter().map(|&(x, y)| (x + tx, y + ty)).collect();
            let theta2 = Hypothesis::new(theta.x + tx, theta.y + ty, 1.0, 1.0);
            let b2 = assess(&ev2, &theta2, &particles(&moved), &cfg);
            prop_assert!((b.likelihood - b2.likelihood).abs() < 1e-9);
            prop_assert!((b.spatial - b2.spatial).abs() < 1e-9);
        }
    }
}
