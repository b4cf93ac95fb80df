//! Posterior over the target hypothesis: per-node likelihood with a
//! missing-node floor, locality weighting and the log-normal scale prior.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::SmcConfig;
use crate::geometry::{Point, Rect};
use crate::ui_graph::{node_similarity, FuzzyTolerance, GraphError, NodeId, StepSubgraph, UiGraph};

/// Target location and per-axis scale relative to the demonstration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub x: f64,
    pub y: f64,
    pub sx: f64,
    pub sy: f64,
}

impl Hypothesis {
    pub const fn new(x: f64, y: f64, sx: f64, sy: f64) -> Self {
        Self { x, y, sx, sy }
    }

    pub fn position(&self) -> Point {
        Point::new(self.x, self.y)
    }

    /// Where a node displaced by `r` from the target should appear.
    pub fn predict(&self, r: Point) -> Point {
        Point::new(self.x + self.sx * r.x, self.y + self.sy * r.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BandwidthConfig {
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Used when fewer than two displacements are available.
    pub fallback: f64,
}

impl Default for BandwidthConfig {
    fn default() -> Self {
        Self {
            sigma_min: 30.0,
            sigma_max: 2000.0,
            fallback: 1000.0,
        }
    }
}

/// Silverman bandwidth on the RMS target distance,
/// `clamp(1.06 * rms * n^(-1/5), sigma_min, sigma_max)`.
pub fn locality_bandwidth(displacements: &[Point], cfg: &BandwidthConfig) -> f64 {
    let n = displacements.len();
    if n < 2 {
        return cfg.fallback;
    }
    let rms = (displacements.iter().map(|r| r.norm_sq()).sum::<f64>() / n as f64).sqrt();
    (1.06 * rms * (n as f64).powf(-0.2)).clamp(cfg.sigma_min, cfg.sigma_max)
}

pub fn locality_weight(r: Point, sigma_loc: f64) -> f64 {
    (-r.norm_sq() / (2.0 * sigma_loc * sigma_loc)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToleranceConfig {
    pub sigma_base: f64,
    /// Growth per pixel of demo distance to the target.
    pub alpha: f64,
    /// Growth per pixel of the element's smaller side.
    pub beta: f64,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        Self {
            sigma_base: 12.0,
            alpha: 0.05,
            beta: 0.1,
        }
    }
}

/// Size-aware positional tolerance `sigma_base + alpha * d + beta * min(w, h)`.
pub fn geometric_tolerance(w: f64, h: f64, distance: f64, cfg: &ToleranceConfig) -> f64 {
    cfg.sigma_base + cfg.alpha * distance.max(0.0) + cfg.beta * w.min(h).max(0.0)
}

/// One log-normal mixture axis: identity component at 0 with weight
/// `weight`, ratio component at `mu` with weight `1 - weight`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisPrior {
    pub weight: f64,
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalePriorParams {
    pub x: AxisPrior,
    pub y: AxisPrior,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScalePriorConfig {
    pub weight: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Default for ScalePriorConfig {
    fn default() -> Self {
        Self {
            weight: 0.5,
            sigma_x: 0.4,
            sigma_y: 0.2,
            lo: 0.33,
            hi: 3.0,
        }
    }
}

impl ScalePriorParams {
    /// Prior whose ratio component sits at the live/demo window size ratio.
    pub fn from_windows(demo: &Rect, live: &Rect, cfg: &ScalePriorConfig) -> Self {
        let ratio = |a: f64, b: f64| {
            if a > 0.0 && b > 0.0 {
                (b / a).ln()
            } else {
                0.0
            }
        };
        Self {
            x: AxisPrior {
                weight: cfg.weight,
                mu: ratio(demo.w, live.w),
                sigma: cfg.sigma_x,
            },
            y: AxisPrior {
                weight: cfg.weight,
                mu: ratio(demo.h, live.h),
                sigma: cfg.sigma_y,
            },
            lo: cfg.lo,
            hi: cfg.hi,
        }
    }

    pub fn in_bounds(&self, s: f64) -> bool {
        s >= self.lo && s <= self.hi
    }
}

/// Log of the two-component mixture as quadratic penalties on `ln s`; the
/// `1/s` Jacobian is left out so shrinking and growing by the same factor
/// cost the same. Outside `[lo, hi]` the value is `-inf`.
pub fn scale_log_prior(s: f64, axis: &AxisPrior, lo: f64, hi: f64) -> f64 {
    if !(s >= lo && s <= hi) {
        return f64::NEG_INFINITY;
    }
    let u = s.ln();
    let two_var = 2.0 * axis.sigma * axis.sigma;
    let a = axis.weight.ln() - u * u / two_var;
    let b = (1.0 - axis.weight).ln() - (u - axis.mu) * (u - axis.mu) / two_var;
    log_add(a, b) - (axis.sigma * (2.0 * PI).sqrt()).ln()
}

pub(crate) fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// A runtime element that may correspond to a demo node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub node_id: NodeId,
    pub center: Point,
    /// Appearance similarity in `[0, 1]`.
    pub w_app: f64,
}

/// Likelihood evidence contributed by one demo node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceRecord {
    pub node_id: NodeId,
    pub is_target: bool,
    /// Demo displacement from the click point.
    pub displacement: Point,
    pub candidates: Vec<Candidate>,
    /// Positional tolerance in pixels.
    pub sigma: f64,
    pub w_loc: f64,
}

impl EvidenceRecord {
    /// Best weighted Gaussian density over candidates at `theta`, 0 when empty.
    pub fn best_density(&self, theta: &Hypothesis) -> f64 {
        let c_hat = theta.predict(self.displacement);
        let two_var = 2.0 * self.sigma * self.sigma;
        let norm = 1.0 / (PI * two_var);
        self.candidates
            .iter()
            .map(|c| c.w_app * norm * (-c.center.dist_sq(c_hat) / two_var).exp())
            .fold(0.0, f64::max)
    }
}

/// Everything the sampler needs to evaluate the posterior for one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub records: Vec<EvidenceRecord>,
    pub sigma_loc: f64,
    /// Uniform position prior support.
    pub screen: Rect,
    pub demo_window: Rect,
    pub live_window: Rect,
    /// Missing-node density floor per px^2.
    pub p_miss: f64,
}

/// `log(p_miss + max_c w_app * N(p_c | c_hat(theta), sigma^2 I))`.
pub fn node_log_likelihood(record: &EvidenceRecord, theta: &Hypothesis, p_miss: f64) -> f64 {
    (p_miss + record.best_density(theta)).ln()
}

impl Evidence {
    /// Locality-weighted log-likelihood, without the prior.
    pub fn log_likelihood(&self, theta: &Hypothesis) -> f64 {
        self.records
            .iter()
            .map(|r| r.w_loc * node_log_likelihood(r, theta, self.p_miss))
            .sum()
    }

    pub fn contains(&self, theta: &Hypothesis) -> bool {
        self.screen.contains(theta.position())
    }

    /// Scale prior plus the (constant, omitted) uniform position prior;
    /// `-inf` outside the screen or the scale bounds.
    pub fn log_prior(&self, theta: &Hypothesis, prior: &ScalePriorParams) -> f64 {
        if !self.contains(theta) {
            return f64::NEG_INFINITY;
        }
        scale_log_prior(theta.sx, &prior.x, prior.lo, prior.hi)
            + scale_log_prior(theta.sy, &prior.y, prior.lo, prior.hi)
    }

    pub fn log_posterior(&self, theta: &Hypothesis, prior: &ScalePriorParams) -> f64 {
        let lp = self.log_prior(theta, prior);
        if lp == f64::NEG_INFINITY {
            return lp;
        }
        self.log_likelihood(theta) + lp
    }

    pub fn has_candidates(&self) -> bool {
        self.records.iter().any(|r| !r.candidates.is_empty())
    }
}

/// Match every subgraph node against the runtime graph and assemble the
/// evidence: appearance-filtered candidates, tolerances and locality weights.
/// The target's own record always carries `w_loc = 1`.
pub fn build_evidence(
    sub: &StepSubgraph,
    runtime: &UiGraph,
    live_window: &Rect,
    cfg: &SmcConfig,
    tol: &FuzzyTolerance,
) -> Result<Evidence, GraphError> {
    let neighbor_disps: Vec<Point> = sub.neighbors().map(|(_, r)| r).collect();
    let sigma_loc = locality_bandwidth(&neighbor_disps, &cfg.bandwidth);
    let target_index = sub.target_index();
    let mut records = Vec::with_capacity(sub.nodes.len());
    for (i, (node, &r)) in sub.nodes.iter().zip(sub.displacements()).enumerate() {
        let mut candidates = Vec::new();
        for cand in &runtime.nodes {
            let w_app = node_similarity(node, cand, tol)?;
            if w_app >= cfg.app_threshold {
                candidates.push(Candidate {
                    node_id: cand.id,
                    center: cand.center(),
                    w_app,
                });
            }
        }
        candidates.sort_by(|a, b| b.w_app.total_cmp(&a.w_app).then(a.node_id.cmp(&b.node_id)));
        candidates.truncate(cfg.app_cap);
        let is_target = i == target_index;
        let distance = if is_target { 0.0 } else { r.norm() };
        records.push(EvidenceRecord {
            node_id: node.id,
            is_target,
            displacement: r,
            candidates,
            sigma: geometric_tolerance(node.bbox.w, node.bbox.h, distance, &cfg.tolerance),
            w_loc: if is_target { 1.0 } else { locality_weight(r, sigma_loc) },
        });
    }
    Ok(Evidence {
        records,
        sigma_loc,
        screen: runtime.screen_bounds(),
        demo_window: sub.window_bounds,
        live_window: *live_window,
        p_miss: cfg.p_miss,
    })
}
