use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::model::{AxisPrior, Evidence, Hypothesis, ScalePriorParams};
use super::SmcConfig;
use crate::geometry::Point;
use crate::rng;

/// Weighted particle population at inverse temperature `beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleSet {
    pub particles: Vec<Hypothesis>,
    pub weights: Vec<f64>,
    pub beta: f64,
    pub seed: u64,
}

impl ParticleSet {
    pub fn uniform(particles: Vec<Hypothesis>, seed: u64) -> Self {
        let n = particles.len();
        Self {
            particles,
            weights: vec![1.0 / n as f64; n],
            beta: 0.0,
            seed,
        }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn ess(&self) -> f64 {
        effective_sample_size(&self.weights)
    }

    pub fn mean_position(&self) -> Point {
        let (mut x, mut y) = (0.0, 0.0);
        for (p, w) in self.particles.iter().zip(&self.weights) {
            x += w * p.x;
            y += w * p.y;
        }
        Point::new(x, y)
    }

    /// Weighted position covariance `(cxx, cxy, cyy)`.
    pub fn position_covariance(&self) -> (f64, f64, f64) {
        let mu = self.mean_position();
        let (mut xx, mut xy, mut yy) = (0.0, 0.0, 0.0);
        for (p, w) in self.particles.iter().zip(&self.weights) {
            let dx = p.x - mu.x;
            let dy = p.y - mu.y;
            xx += w * dx * dx;
            xy += w * dx * dy;
            yy += w * dy * dy;
        }
        (xx, xy, yy)
    }

    /// Weighted standard deviation of each hypothesis coordinate.
    pub fn spread(&self) -> Hypothesis {
        let mut mean = [0.0; 4];
        for (p, w) in self.particles.iter().zip(&self.weights) {
            for (m, v) in mean.iter_mut().zip([p.x, p.y, p.sx, p.sy]) {
                *m += w * v;
            }
        }
        let mut var = [0.0; 4];
        for (p, w) in self.particles.iter().zip(&self.weights) {
            for ((acc, m), v) in var.iter_mut().zip(&mean).zip([p.x, p.y, p.sx, p.sy]) {
                *acc += w * (v - m) * (v - m);
            }
        }
        Hypothesis::new(var[0].sqrt(), var[1].sqrt(), var[2].sqrt(), var[3].sqrt())
    }
}

/// `1 / sum(w^2)` for normalised weights.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let s2: f64 = weights.iter().map(|w| w * w).sum();
    if s2 > 0.0 {
        1.0 / s2
    } else {
        0.0
    }
}

/// Systematic resampling with a single uniform offset `u` in `[0, 1)`.
/// Returns the selected parent index for each of the `n` offspring.
pub fn systematic_resample(weights: &[f64], u: f64) -> Vec<usize> {
    let n = weights.len();
    let total: f64 = weights.iter().sum();
    let step = total / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut cum = weights[0];
    let mut i = 0;
    for k in 0..n {
        let target = (u + k as f64) * step;
        while cum <= target && i + 1 < n {
            i += 1;
            cum += weights[i];
        }
        out.push(i);
    }
    out
}

fn sample_scale<R: Rng>(axis: &AxisPrior, lo: f64, hi: f64, rng: &mut R) -> f64 {
    for _ in 0..16 {
        let mu = if rng.random::<f64>() < axis.weight { 0.0 } else { axis.mu };
        let z: f64 = StandardNormal.sample(rng);
        let s = (mu + axis.sigma * z).exp();
        if s >= lo && s <= hi {
            return s;
        }
    }
    axis.mu.exp().clamp(lo, hi)
}

fn sample_uniform<R: Rng>(evidence: &Evidence, prior: &ScalePriorParams, rng: &mut R) -> Hypothesis {
    let scr = evidence.screen;
    let x = scr.x + rng.random::<f64>() * scr.w;
    let y = scr.y + rng.random::<f64>() * scr.h;
    Hypothesis::new(
        x,
        y,
        sample_scale(&prior.x, prior.lo, prior.hi, rng),
        sample_scale(&prior.y, prior.lo, prior.hi, rng),
    )
}

/// Initial population. The `top_k_init` (node, candidate) pairs with the
/// highest appearance weight (closer nodes first on ties) are back-projected
/// into target proposals `p_c - s * r` under scales drawn from the prior and
/// jittered; they take `init_fraction` of the particles round-robin. The rest,
/// or all particles when no candidate exists, are uniform over the screen.
pub fn init_particles(
    evidence: &Evidence,
    prior: &ScalePriorParams,
    cfg: &SmcConfig,
    seed: u64,
) -> ParticleSet {
    let n = cfg.n_particles.max(1);
    let mut pairs: Vec<(usize, usize)> = evidence
        .records
        .iter()
        .enumerate()
        .flat_map(|(ri, r)| (0..r.candidates.len()).map(move |ci| (ri, ci)))
        .collect();
    pairs.sort_by(|&(ra, ca), &(rb, cb)| {
        let a = &evidence.records[ra];
        let b = &evidence.records[rb];
        b.candidates[cb]
            .w_app
            .total_cmp(&a.candidates[ca].w_app)
            .then(b.w_loc.total_cmp(&a.w_loc))
            .then((ra, ca).cmp(&(rb, cb)))
    });
    pairs.truncate(cfg.top_k_init);

    let n_prop = if pairs.is_empty() {
        0
    } else {
        ((cfg.init_fraction * n as f64).round() as usize).min(n)
    };
    let scr = evidence.screen;
    let particles = (0..n)
        .map(|j| {
            let mut rng = rng::stream(seed, &[0x1417, j as u64]);
            if j >= n_prop {
                return sample_uniform(evidence, prior, &mut rng);
            }
            let (ri, ci) = pairs[j % pairs.len()];
            let rec = &evidence.records[ri];
            let c = rec.candidates[ci].center;
            let sx = sample_scale(&prior.x, prior.lo, prior.hi, &mut rng);
            let sy = sample_scale(&prior.y, prior.lo, prior.hi, &mut rng);
            let jx: f64 = StandardNormal.sample(&mut rng);
            let jy: f64 = StandardNormal.sample(&mut rng);
            let x = c.x - sx * rec.displacement.x + cfg.jitter * jx;
            let y = c.y - sy * rec.displacement.y + cfg.jitter * jy;
            Hypothesis::new(
                x.clamp(scr.x, scr.right()),
                y.clamp(scr.y, scr.bottom()),
                sx,
                sy,
            )
        })
        .collect();
    ParticleSet::uniform(particles, seed)
}

/// Densest region of the particle cloud and its summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub point: Point,
    pub scale: (f64, f64),
    /// Share of total weight inside the region.
    pub fraction: f64,
}

fn cell_of(p: &Hypothesis, cell: f64) -> (i64, i64) {
    ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64)
}

/// Bucket positions into a `cell`-sized grid, pick the cell whose 3x3
/// neighbourhood holds the most weight, and return the weighted mean of the
/// particles in that neighbourhood.
pub fn densest_cluster(ps: &ParticleSet, cell: f64) -> Cluster {
    let mut mass: BTreeMap<(i64, i64), f64> = BTreeMap::new();
    for (p, w) in ps.particles.iter().zip(&ps.weights) {
        *mass.entry(cell_of(p, cell)).or_insert(0.0) += w;
    }
    let mut best: Option<((i64, i64), f64)> = None;
    for &(cx, cy) in mass.keys() {
        let mut m = 0.0;
        for dx in -1..=1 {
            for dy in -1..=1 {
                m += mass.get(&(cx + dx, cy + dy)).copied().unwrap_or(0.0);
            }
        }
        if best.is_none_or(|(_, bm)| m > bm) {
            best = Some(((cx, cy), m));
        }
    }
    let ((bx, by), _) = best.expect("non-empty particle set");
    let (mut wsum, mut x, mut y, mut sx, mut sy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (p, w) in ps.particles.iter().zip(&ps.weights) {
        let (cx, cy) = cell_of(p, cell);
        if (cx - bx).abs() <= 1 && (cy - by).abs() <= 1 {
            wsum += w;
            x += w * p.x;
            y += w * p.y;
            sx += w * p.sx;
            sy += w * p.sy;
        }
    }
    let total: f64 = ps.weights.iter().sum();
    if wsum <= 0.0 {
        // every weight in the region is zero: fall back to an unweighted mean
        let n = ps.len() as f64;
        let m = ps.particles.iter().fold((0.0, 0.0), |a, p| (a.0 + p.x / n, a.1 + p.y / n));
        return Cluster {
            point: Point::new(m.0, m.1),
            scale: (1.0, 1.0),
            fraction: 0.0,
        };
    }
    Cluster {
        point: Point::new(x / wsum, y / wsum),
        scale: (sx / wsum, sy / wsum),
        fraction: wsum / total,
    }
}

/// `(point, population fraction)` of the densest cluster.
pub fn densest_cluster_mean(ps: &ParticleSet, cell: f64) -> (Point, f64) {
    let c = densest_cluster(ps, cell);
    (c.point, c.fraction)
}
