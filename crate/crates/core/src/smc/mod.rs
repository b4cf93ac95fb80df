//! Tempered sequential Monte Carlo over the target hypothesis.
//!
//! The likelihood is faded in from the scale prior (`beta = 0`) to the full
//! posterior (`beta = 1`). Each stage picks the next temperature by bisection
//! on the effective sample size, reweights, resamples when the ESS drops
//! below target and rejuvenates with random-walk Metropolis moves.

pub mod model;
pub mod particles;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::confidence::{self, ConfidenceBreakdown, ConfidenceConfig};
use crate::geometry::{Point, Rect};
use crate::rng;
use crate::ui_graph::{FuzzyTolerance, GraphError, StepSubgraph, UiGraph};
use model::{build_evidence, BandwidthConfig, Evidence, Hypothesis, ScalePriorConfig, ScalePriorParams, ToleranceConfig};
use particles::{densest_cluster, init_particles, systematic_resample, ParticleSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmcConfig {
    pub n_particles: usize,
    /// ESS target as a fraction of `n_particles`.
    pub ess_frac: f64,
    pub max_dbeta: f64,
    pub min_dbeta: f64,
    pub bisection_iters: usize,
    /// Temperature is forced to 1 at this stage.
    pub max_stages: usize,
    /// MH-only stages run at `beta = 1` after tempering ends.
    pub refine_stages: usize,
    pub mh_steps: usize,
    pub top_k_init: usize,
    pub init_fraction: f64,
    /// Jitter in pixels around back-projected proposals.
    pub jitter: f64,
    pub p_miss: f64,
    pub app_threshold: f64,
    pub app_cap: usize,
    pub cluster_cell: f64,
    pub intensity_decay: f64,
    pub intensity_floor: f64,
    pub pos_step_floor: f64,
    pub scale_step_floor: f64,
    pub bandwidth: BandwidthConfig,
    pub tolerance: ToleranceConfig,
    pub prior: ScalePriorConfig,
    pub confidence: ConfidenceConfig,
}

impl Default for SmcConfig {
    fn default() -> Self {
        Self {
            n_particles: 600,
            ess_frac: 0.5,
            max_dbeta: 0.25,
            min_dbeta: 1e-4,
            bisection_iters: 30,
            max_stages: 60,
            refine_stages: 3,
            mh_steps: 3,
            top_k_init: 30,
            init_fraction: 0.8,
            jitter: 10.0,
            p_miss: 1e-4,
            app_threshold: 0.3,
            app_cap: 12,
            cluster_cell: 25.0,
            intensity_decay: 0.9,
            intensity_floor: 0.5,
            pos_step_floor: 1.0,
            scale_step_floor: 0.005,
            bandwidth: BandwidthConfig::default(),
            tolerance: ToleranceConfig::default(),
            prior: ScalePriorConfig::default(),
            confidence: ConfidenceConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SmcError {
    #[error("all particle weights vanished at stage {stage}")]
    DegenerateLikelihood { stage: usize },
    #[error("runtime graph has no nodes")]
    EmptyRuntime,
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    pub stage: usize,
    pub beta: f64,
    /// ESS after reweighting, before any resampling.
    pub ess: f64,
    /// Log of the unnormalised incremental weight mass.
    pub log_weight_sum: f64,
    pub resampled: bool,
    pub acceptance: f64,
    pub cluster_fraction: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParticleSummary {
    pub mean: Point,
    pub cov_trace: f64,
    pub cluster_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationResult {
    pub point: Point,
    pub scale: (f64, f64),
    pub confidence: ConfidenceBreakdown,
    pub summary: ParticleSummary,
    pub stages: usize,
    pub fast_path: bool,
    pub sigma_loc: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<StageTrace>,
}

/// Normalise log-weights in place and return `log(sum(exp(lw)))`,
/// or `None` when no weight is finite.
fn normalize_log(lw: &mut [f64], w: &mut [f64]) -> Option<f64> {
    let m = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return None;
    }
    let s: f64 = lw.iter().map(|l| (l - m).exp()).sum();
    if !(s > 0.0 && s.is_finite()) {
        return None;
    }
    let log_z = m + s.ln();
    for (wi, li) in w.iter_mut().zip(lw.iter_mut()) {
        *li -= log_z;
        *wi = li.exp();
    }
    Some(log_z)
}

/// ESS of the weights `exp(lw + d * ll)`.
fn ess_after(lw: &[f64], ll: &[f64], d: f64) -> f64 {
    let x: Vec<f64> = lw.iter().zip(ll).map(|(a, b)| a + d * b).collect();
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return 0.0;
    }
    let (mut s1, mut s2) = (0.0, 0.0);
    for v in x {
        let a = (v - m).exp();
        s1 += a;
        s2 += a * a;
    }
    s1 * s1 / s2
}

/// Largest increment in `(0, cap]` keeping the ESS at or above `target`.
pub fn choose_dbeta(lw: &[f64], ll: &[f64], target: f64, cap: f64, iters: usize) -> f64 {
    if ess_after(lw, ll, cap) >= target {
        return cap;
    }
    let (mut lo, mut hi) = (0.0, cap);
    for _ in 0..iters {
        let mid = 0.5 * (lo + hi);
        if ess_after(lw, ll, mid) >= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Random-walk proposal scales per coordinate.
pub type StepScale = Hypothesis;

/// One Metropolis step on `beta * loglik + log_prior`. `state` holds the
/// current hypothesis with its cached log-likelihood and log-prior.
/// Returns whether the move was accepted.
pub fn mh_step<R: Rng>(
    state: &mut (Hypothesis, f64, f64),
    evidence: &Evidence,
    prior: &ScalePriorParams,
    beta: f64,
    step: &StepScale,
    rng: &mut R,
) -> bool {
    let mut z = [0.0; 4];
    for v in z.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
    let u: f64 = rng.random();
    let cur = state.0;
    let prop = Hypothesis::new(
        cur.x + step.x * z[0],
        cur.y + step.y * z[1],
        cur.sx + step.sx * z[2],
        cur.sy + step.sy * z[3],
    );
    let lp = evidence.log_prior(&prop, prior);
    if lp == f64::NEG_INFINITY {
        return false;
    }
    let ll = evidence.log_likelihood(&prop);
    let log_ratio = beta * (ll - state.1) + (lp - state.2);
    if u.ln() < log_ratio {
        *state = (prop, ll, lp);
        true
    } else {
        false
    }
}

struct Sampler<'a> {
    evidence: &'a Evidence,
    prior: ScalePriorParams,
    cfg: &'a SmcConfig,
    seed: u64,
    ps: ParticleSet,
    loglik: Vec<f64>,
    logprior: Vec<f64>,
    logw: Vec<f64>,
    intensity: f64,
}

const MH_STREAM: u64 = 0x3a11;
const RESAMPLE_STREAM: u64 = 0x5e5a;

impl<'a> Sampler<'a> {
    fn new(evidence: &'a Evidence, prior: ScalePriorParams, cfg: &'a SmcConfig, seed: u64) -> Self {
        let ps = init_particles(evidence, &prior, cfg, seed);
        let loglik: Vec<f64> = ps.particles.par_iter().map(|p| evidence.log_likelihood(p)).collect();
        let logprior: Vec<f64> = ps.particles.iter().map(|p| evidence.log_prior(p, &prior)).collect();
        let n = ps.len() as f64;
        Self {
            evidence,
            prior,
            cfg,
            seed,
            logw: vec![-n.ln(); ps.len()],
            ps,
            loglik,
            logprior,
            intensity: 1.0,
        }
    }

    fn target_ess(&self) -> f64 {
        self.cfg.ess_frac * self.ps.len() as f64
    }

    /// Bisection lands the ESS a hair above its target, so the gate allows a
    /// small relative slack instead of deferring the resample a stage.
    fn needs_resample(&self, ess: f64) -> bool {
        ess < self.target_ess() * (1.0 + 1e-6)
    }

    fn resample(&mut self, stage: usize) {
        let mut r = rng::stream(self.seed, &[RESAMPLE_STREAM, stage as u64]);
        let idx = systematic_resample(&self.ps.weights, r.random());
        self.ps.particles = idx.iter().map(|&i| self.ps.particles[i]).collect();
        self.loglik = idx.iter().map(|&i| self.loglik[i]).collect();
        self.logprior = idx.iter().map(|&i| self.logprior[i]).collect();
        let n = self.ps.len() as f64;
        self.ps.weights = vec![1.0 / n; self.ps.len()];
        self.logw = vec![-n.ln(); self.ps.len()];
    }

    /// Rejuvenate every particle; returns the acceptance rate.
    fn rejuvenate(&mut self, stage: usize) -> f64 {
        let spread = self.ps.spread();
        let (pf, sf) = (self.cfg.pos_step_floor, self.cfg.scale_step_floor);
        let k = self.intensity;
        let step = Hypothesis::new(
            k * spread.x.max(pf),
            k * spread.y.max(pf),
            k * spread.sx.max(sf),
            k * spread.sy.max(sf),
        );
        let (evidence, prior, beta, seed, l) = (self.evidence, &self.prior, self.ps.beta, self.seed, self.cfg.mh_steps);
        let moved: Vec<((Hypothesis, f64, f64), usize)> = (0..self.ps.len())
            .into_par_iter()
            .map(|j| {
                let mut r = rng::stream(seed, &[MH_STREAM, stage as u64, j as u64]);
                let mut state = (self.ps.particles[j], self.loglik[j], self.logprior[j]);
                let acc = (0..l)
                    .filter(|_| mh_step(&mut state, evidence, prior, beta, &step, &mut r))
                    .count();
                (state, acc)
            })
            .collect();
        let mut accepted = 0;
        for (j, ((h, ll, lp), acc)) in moved.into_iter().enumerate() {
            self.ps.particles[j] = h;
            self.loglik[j] = ll;
            self.logprior[j] = lp;
            accepted += acc;
        }
        let total = self.ps.len() * l;
        if total == 0 {
            0.0
        } else {
            accepted as f64 / total as f64
        }
    }

    fn assess(&self) -> (particles::Cluster, ConfidenceBreakdown) {
        let cluster = densest_cluster(&self.ps, self.cfg.cluster_cell);
        let theta = Hypothesis::new(cluster.point.x, cluster.point.y, cluster.scale.0, cluster.scale.1);
        let b = confidence::assess(self.evidence, &theta, &self.ps, &self.cfg.confidence);
        (cluster, b)
    }

    fn record(
        &self,
        trace: &mut Vec<StageTrace>,
        stage: usize,
        ess: f64,
        log_weight_sum: f64,
        resampled: bool,
        acceptance: f64,
    ) -> (particles::Cluster, ConfidenceBreakdown) {
        let (cluster, b) = self.assess();
        log::trace!(
            "stage={stage} beta={:.4} ess={ess:.1} accept={acceptance:.3} cluster={:.3} conf={:.3}",
            self.ps.beta,
            cluster.fraction,
            b.combined
        );
        trace.push(StageTrace {
            stage,
            beta: self.ps.beta,
            ess,
            log_weight_sum,
            resampled,
            acceptance,
            cluster_fraction: cluster.fraction,
            confidence: b.combined,
        });
        (cluster, b)
    }

    fn run(mut self) -> Result<(LocalizationResult, ParticleSet), SmcError> {
        let cfg = self.cfg;
        let c_min = cfg.confidence.c_min;
        let mut trace = Vec::new();
        let mut stage = 0;
        let mut jump = false;
        loop {
            stage += 1;
            let beta = self.ps.beta;
            let remaining = 1.0 - beta;
            let dbeta = if jump || stage >= cfg.max_stages {
                remaining
            } else {
                let cap = cfg.max_dbeta.min(remaining);
                choose_dbeta(&self.logw, &self.loglik, self.target_ess(), cap, cfg.bisection_iters)
                    .max(cfg.min_dbeta)
                    .min(remaining)
            };
            let next = if 1.0 - (beta + dbeta) < 1e-12 { 1.0 } else { beta + dbeta };
            let d = next - beta;
            for (lw, ll) in self.logw.iter_mut().zip(&self.loglik) {
                *lw += d * ll;
            }
            let log_sum = normalize_log(&mut self.logw, &mut self.ps.weights)
                .ok_or(SmcError::DegenerateLikelihood { stage })?;
            self.ps.beta = next;
            let ess = self.ps.ess();
            let resampled = self.needs_resample(ess);
            if resampled {
                self.resample(stage);
            }
            if next >= 1.0 {
                self.intensity = self.intensity.max(cfg.intensity_floor);
            } else {
                self.intensity *= cfg.intensity_decay;
            }
            let acc = self.rejuvenate(stage);
            let (_, b) = self.record(&mut trace, stage, ess, log_sum, resampled, acc);
            if next < 1.0 {
                jump = b.combined > c_min;
                continue;
            }
            break;
        }
        // refinement at full temperature tightens the cloud around the mode
        for _ in 0..cfg.refine_stages {
            stage += 1;
            let ess = self.ps.ess();
            let resampled = self.needs_resample(ess);
            if resampled {
                self.resample(stage);
            }
            let acc = self.rejuvenate(stage);
            self.record(&mut trace, stage, ess, 0.0, resampled, acc);
        }
        let (cluster, breakdown) = self.assess();
        let mean = self.ps.mean_position();
        let (xx, _, yy) = self.ps.position_covariance();
        let result = LocalizationResult {
            point: cluster.point,
            scale: cluster.scale,
            confidence: breakdown,
            summary: ParticleSummary {
                mean,
                cov_trace: xx + yy,
                cluster_fraction: cluster.fraction,
            },
            stages: stage,
            fast_path: false,
            sigma_loc: self.evidence.sigma_loc,
            trace,
        };
        Ok((result, self.ps))
    }
}

/// Run the sampler on prepared evidence. Also returns the final population.
pub fn run_sampler(
    evidence: &Evidence,
    prior: &ScalePriorParams,
    cfg: &SmcConfig,
    seed: u64,
) -> Result<(LocalizationResult, ParticleSet), SmcError> {
    Sampler::new(evidence, *prior, cfg, seed).run()
}

/// Localize the demo target of `sub` on the runtime screen.
pub fn smc_localize(
    sub: &StepSubgraph,
    runtime: &UiGraph,
    live_window: &Rect,
    cfg: &SmcConfig,
    tol: &FuzzyTolerance,
    seed: u64,
) -> Result<LocalizationResult, SmcError> {
    if runtime.is_empty() {
        return Err(SmcError::EmptyRuntime);
    }
    let evidence = build_evidence(sub, runtime, live_window, cfg, tol)?;
    let prior = ScalePriorParams::from_windows(&sub.window_bounds, live_window, &cfg.prior);
    Ok(run_sampler(&evidence, &prior, cfg, seed)?.0)
}
