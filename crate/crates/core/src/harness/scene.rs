//! Synthetic screens with known ground truth.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point, Rect};
use crate::rng::{derive_seed, stream};
use crate::ui_graph::{build_graph, extract_step_subgraph, GraphError, NodeId, NodeKind, StepSubgraph, UiGraph, UiNode};

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("invalid scene spec: {0}")]
    Invalid(String),
    #[error("{duplicates} duplicate targets need more than {nodes} nodes")]
    TooManyDuplicates { duplicates: usize, nodes: usize },
    #[error("could only place {placed} of {wanted} nodes")]
    Crowded { placed: usize, wanted: usize },
    #[error("target leaves the screen under the perturbation")]
    TargetOffScreen,
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    Grid,
    Cluster,
    Sparse,
}

const WORDS: &[&str] = &[
    "Open", "Save", "Close", "Export", "Import", "Delete", "Archive", "Share", "Print", "Rename", "Search", "Filter",
    "Refresh", "Upload", "Download", "Settings", "Profile", "Calendar", "Contacts", "Messages", "Reports", "Invoice",
    "Project", "Folder", "Document", "Template", "Gallery", "Network", "Account", "Billing", "Security", "Display",
    "Keyboard", "History", "Bookmark", "Library", "Schedule", "Summary", "Preview", "Options",
];

/// Demo screen description. Same spec and seed give the same scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub nodes: usize,
    pub layout: Layout,
    /// Fraction of nodes that carry text; the rest are icons.
    pub text_fraction: f64,
    /// Extra copies of the target elsewhere on the screen.
    pub duplicates: usize,
    /// Words combined pairwise into labels. Empty means a built-in list.
    pub corpus: Vec<String>,
    pub embed_dim: usize,
    /// Seed of the pseudo-embedding model, shared by demo and runtime screens.
    pub embed_seed: u64,
    pub screen: [f64; 2],
    pub window: Rect,
    pub knn_k: usize,
    pub neighbor_budget: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            nodes: 40,
            layout: Layout::Grid,
            text_fraction: 0.7,
            duplicates: 0,
            corpus: Vec::new(),
            embed_dim: 32,
            embed_seed: 7,
            screen: [2560.0, 1600.0],
            window: Rect::new(320.0, 260.0, 1200.0, 800.0),
            knn_k: 8,
            neighbor_budget: 12,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SpecError> {
        let bad = |m: &str| Err(SpecError::Invalid(m.to_string()));
        if self.nodes < 2 {
            return bad("need at least two nodes");
        }
        if self.duplicates + 1 >= self.nodes {
            return Err(SpecError::TooManyDuplicates {
                duplicates: self.duplicates,
                nodes: self.nodes,
            });
        }
        if !(0.0..=1.0).contains(&self.text_fraction) {
            return bad("text_fraction must lie in [0, 1]");
        }
        if self.embed_dim == 0 {
            return bad("embed_dim must be positive");
        }
        let w = self.window;
        if !(w.w > 100.0 && w.h > 100.0 && w.x >= 0.0 && w.y >= 0.0)
            || w.right() > self.screen[0]
            || w.bottom() > self.screen[1]
        {
            return bad("window must be at least 100x100 and lie on the screen");
        }
        if !self.corpus.is_empty() && self.corpus.len() < 2 {
            return bad("corpus needs at least two words");
        }
        Ok(())
    }

    fn words(&self) -> Vec<String> {
        if self.corpus.is_empty() {
            WORDS.iter().map(|w| w.to_string()).collect()
        } else {
            self.corpus.clone()
        }
    }
}

/// Screen change between demonstration and replay. Positions and sizes map
/// through `p -> origin + (dx, dy) + s * (p - origin)` with `origin` the demo
/// window's top-left corner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Perturbation {
    pub dx: f64,
    pub dy: f64,
    pub sx: f64,
    pub sy: f64,
    /// Probability of removing each non-target node.
    pub dropout: f64,
    /// Dropout never leaves fewer of the demo neighbours than this.
    pub min_surviving: usize,
    /// Per-character substitution rate on runtime text.
    pub text_noise: f64,
    /// Look-alike copies of the target injected at random places.
    pub decoys: usize,
    /// Cosine between a decoy's embedding and the target's.
    pub decoy_cosine: f64,
    /// Live window size relative to the demo window, as reported to the engine.
    pub window_ratio: [f64; 2],
    pub delete_target: bool,
}

impl Default for Perturbation {
    fn default() -> Self {
        Self {
            dx: 0.0,
            dy: 0.0,
            sx: 1.0,
            sy: 1.0,
            dropout: 0.0,
            min_surviving: 3,
            text_noise: 0.0,
            decoys: 0,
            decoy_cosine: 0.8,
            window_ratio: [1.0, 1.0],
            delete_target: false,
        }
    }
}

impl Perturbation {
    pub fn map_point(&self, origin: Point, p: Point) -> Point {
        Point::new(
            // written so the identity map returns `p` bit for bit
            p.x + self.dx + (self.sx - 1.0) * (p.x - origin.x),
            p.y + self.dy + (self.sy - 1.0) * (p.y - origin.y),
        )
    }

    pub fn map_rect(&self, origin: Point, r: &Rect) -> Rect {
        let p = self.map_point(origin, Point::new(r.x, r.y));
        Rect::new(p.x, p.y, r.w * self.sx, r.h * self.sy)
    }

    fn validate(&self) -> Result<(), SpecError> {
        let ok = self.sx > 0.0
            && self.sy > 0.0
            && (0.0..=1.0).contains(&self.dropout)
            && (0.0..=1.0).contains(&self.text_noise)
            && (-1.0..=1.0).contains(&self.decoy_cosine)
            && self.window_ratio.iter().all(|r| *r > 0.0);
        if ok {
            Ok(())
        } else {
            Err(SpecError::Invalid("perturbation parameters out of range".into()))
        }
    }
}

/// One generated grounding problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub name: String,
    pub seed: u64,
    pub demo: StepSubgraph,
    pub runtime: UiGraph,
    pub live_window: Rect,
    /// Where the target's click lands on the runtime screen; `None` when the
    /// target was deleted.
    pub truth: Option<Point>,
}

fn fnv1a(s: &str) -> u64 {
    s.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Deterministic unit vector for `key`.
pub fn pseudo_embedding(key: &str, embed_seed: u64, dim: usize) -> Vec<f64> {
    let mut r = stream(embed_seed, &[fnv1a(key)]);
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut r)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// Unit vector at cosine `c` to the unit vector `base`.
pub fn vector_at_cosine(base: &[f64], c: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut u: Vec<f64> = (0..base.len()).map(|_| StandardNormal.sample(rng)).collect();
    let dot: f64 = u.iter().zip(base).map(|(a, b)| a * b).sum();
    u.iter_mut().zip(base).for_each(|(a, b)| *a -= dot * b);
    let n = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 || base.len() < 2 {
        return base.to_vec();
    }
    let s = (1.0 - c * c).max(0.0).sqrt();
    base.iter().zip(&u).map(|(b, a)| c * b + s * a / n).collect()
}

#[derive(Debug, Clone)]
struct Proto {
    kind: NodeKind,
    content: String,
    /// Appearance key hashed into the embeddings.
    key: String,
    w: f64,
    h: f64,
}

impl Proto {
    fn node(&self, id: NodeId, at: Point, spec: &SceneSpec) -> Result<UiNode, GraphError> {
        let icon = pseudo_embedding(&format!("look:{}", self.key), spec.embed_seed, spec.embed_dim);
        let text = (self.kind == NodeKind::Text)
            .then(|| pseudo_embedding(&format!("text:{}", self.content), spec.embed_seed, spec.embed_dim));
        let bbox = Rect::new(at.x - self.w / 2.0, at.y - self.h / 2.0, self.w, self.h);
        UiNode::new(id, bbox, self.kind, self.content.clone(), icon, text)
    }
}

fn protos(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Vec<Proto> {
    let words = spec.words();
    let mut pairs: Vec<(usize, usize)> = (0..words.len())
        .flat_map(|a| (0..words.len()).filter(move |&b| b != a).map(move |b| (a, b)))
        .collect();
    pairs.shuffle(rng);
    let mut icon_class = 0;
    let mut out = Vec::with_capacity(spec.nodes);
    for i in 0..spec.nodes {
        if rng.random::<f64>() < spec.text_fraction {
            let (a, b) = pairs[i % pairs.len()];
            let mut content = format!("{} {}", words[a], words[b]);
            if i >= pairs.len() {
                content = format!("{content} {}", i / pairs.len());
            }
            let w = (7.0 * content.chars().count() as f64 + 16.0).min(200.0);
            out.push(Proto {
                kind: NodeKind::Text,
                key: content.clone(),
                content,
                w,
                h: 22.0,
            });
        } else {
            icon_class += 1;
            let side = if rng.random::<bool>() { 24.0 } else { 32.0 };
            out.push(Proto {
                kind: NodeKind::Icon,
                content: String::new(),
                key: format!("icon-{icon_class}"),
                w: side,
                h: side,
            });
        }
    }
    out
}

fn overlaps(a: &Rect, b: &Rect, gap: f64) -> bool {
    a.x < b.right() + gap && b.x < a.right() + gap && a.y < b.bottom() + gap && b.y < a.bottom() + gap
}

fn box_at(c: Point, p: &Proto) -> Rect {
    Rect::new(c.x - p.w / 2.0, c.y - p.h / 2.0, p.w, p.h)
}

/// Centers for every proto inside the window, or `Crowded`.
fn place(spec: &SceneSpec, protos: &[Proto], rng: &mut ChaCha8Rng) -> Result<Vec<Point>, SpecError> {
    let win = spec.window;
    let margin = 20.0;
    let inner = Rect::new(win.x + margin, win.y + margin, win.w - 2.0 * margin, win.h - 2.0 * margin);
    let fits = |c: Point, p: &Proto| {
        c.x - p.w / 2.0 >= inner.x && c.x + p.w / 2.0 <= inner.right() && c.y - p.h / 2.0 >= inner.y && c.y + p.h / 2.0 <= inner.bottom()
    };
    let n = protos.len();
    match spec.layout {
        Layout::Grid => {
            let widest = protos.iter().map(|p| p.w).fold(0.0, f64::max);
            let fit = ((inner.w / (widest + 8.0)).floor() as usize).max(1);
            let cols = ((n as f64 * inner.w / inner.h).sqrt().ceil() as usize).clamp(1, fit);
            let rows = n.div_ceil(cols);
            let (cw, ch) = (inner.w / cols as f64, inner.h / rows as f64);
            let mut cells: Vec<usize> = (0..rows * cols).collect();
            cells.shuffle(rng);
            let mut out = Vec::with_capacity(n);
            for (p, &cell) in protos.iter().zip(&cells) {
                let (r, c) = (cell / cols, cell % cols);
                let slack_x = ((cw - p.w) / 2.0 - 4.0).max(0.0);
                let slack_y = ((ch - p.h) / 2.0 - 4.0).max(0.0);
                let jx = if slack_x > 0.0 { rng.random_range(-slack_x..slack_x) } else { 0.0 };
                let jy = if slack_y > 0.0 { rng.random_range(-slack_y..slack_y) } else { 0.0 };
                let center = Point::new(inner.x + (c as f64 + 0.5) * cw + jx, inner.y + (r as f64 + 0.5) * ch + jy);
                // labels wider than their cell are squeezed back inside the window
                let half = p.w / 2.0;
                out.push(Point::new(center.x.clamp(inner.x + half, inner.right() - half), center.y));
            }
            // wide labels in narrow cells may still touch a neighbour
            for i in 0..n {
                for j in 0..i {
                    if overlaps(&box_at(out[i], &protos[i]), &box_at(out[j], &protos[j]), 0.0) {
                        return Err(SpecError::Crowded { placed: i, wanted: n });
                    }
                }
            }
            Ok(out)
        }
        Layout::Cluster | Layout::Sparse => {
            let gap = if spec.layout == Layout::Sparse { 30.0 } else { 6.0 };
            let centers: Vec<Point> = (0..rng.random_range(3..=5))
                .map(|_| {
                    Point::new(
                        rng.random_range(inner.x + 100.0..inner.right() - 100.0),
                        rng.random_range(inner.y + 80.0..inner.bottom() - 80.0),
                    )
                })
                .collect();
            let spread = Normal::new(0.0, 90.0).expect("positive std");
            let mut boxes: Vec<Rect> = Vec::with_capacity(n);
            let mut out = Vec::with_capacity(n);
            for (i, p) in protos.iter().enumerate() {
                let mut placed = false;
                for _ in 0..400 {
                    let c = if spec.layout == Layout::Cluster {
                        let k = centers[rng.random_range(0..centers.len())];
                        Point::new(k.x + spread.sample(rng), k.y + spread.sample(rng))
                    } else {
                        Point::new(rng.random_range(inner.x..inner.right()), rng.random_range(inner.y..inner.bottom()))
                    };
                    let b = box_at(c, p);
                    if fits(c, p) && boxes.iter().all(|o| !overlaps(&b, o, gap)) {
                        boxes.push(b);
                        out.push(c);
                        placed = true;
                        break;
                    }
                }
                if !placed {
                    return Err(SpecError::Crowded { placed: i, wanted: n });
                }
            }
            Ok(out)
        }
    }
}

fn noisy_text(s: &str, rate: f64, rng: &mut ChaCha8Rng) -> String {
    if rate <= 0.0 {
        return s.to_string();
    }
    let out: String = s
        .chars()
        .map(|c| {
            if c != ' ' && rng.random::<f64>() < rate {
                (b'a' + rng.random_range(0..26u8)) as char
            } else {
                c
            }
        })
        .collect();
    if out.trim().is_empty() {
        s.to_string()
    } else {
        out
    }
}

/// Build the demo scene for `spec`, then the runtime scene under `pert`.
pub fn generate_case(spec: &SceneSpec, pert: &Perturbation, seed: u64) -> Result<Case, SpecError> {
    spec.validate()?;
    pert.validate()?;
    let mut rng = stream(seed, &[0x5ce7e]);
    let mut protos = protos(spec, &mut rng);
    let target = rng.random_range(0..protos.len());
    // duplicates take over other slots and look exactly like the target
    let mut others: Vec<usize> = (0..protos.len()).filter(|&i| i != target).collect();
    others.shuffle(&mut rng);
    for &i in others.iter().take(spec.duplicates) {
        protos[i] = protos[target].clone();
    }
    let centers = place(spec, &protos, &mut rng)?;

    let demo_nodes = protos
        .iter()
        .zip(&centers)
        .enumerate()
        .map(|(id, (p, &c))| p.node(id, c, spec))
        .collect::<Result<Vec<_>, _>>()?;
    let mut demo_graph = build_graph(demo_nodes.clone(), spec.knn_k)?;
    demo_graph.image_size = (spec.screen[0], spec.screen[1]);
    let t = &demo_nodes[target];
    let click = Point::new(
        t.center().x + rng.random_range(-0.25..0.25) * t.bbox.w,
        t.center().y + rng.random_range(-0.25..0.25) * t.bbox.h,
    );
    let demo = extract_step_subgraph(&demo_graph, click, spec.window, spec.neighbor_budget)?;

    // runtime screen
    let origin = Point::new(spec.window.x, spec.window.y);
    let screen = Rect::new(0.0, 0.0, spec.screen[0], spec.screen[1]);
    let neighbors: Vec<NodeId> = demo.neighbors().map(|(n, _)| n.id).collect();
    let mut keep: Vec<bool> = (0..demo_nodes.len())
        .map(|i| i == target || rng.random::<f64>() >= pert.dropout)
        .collect();
    let surviving = neighbors.iter().filter(|&&id| keep[id]).count();
    if surviving < pert.min_surviving.min(neighbors.len()) {
        let mut dropped: Vec<NodeId> = neighbors.iter().copied().filter(|&id| !keep[id]).collect();
        dropped.shuffle(&mut rng);
        for id in dropped.into_iter().take(pert.min_surviving.min(neighbors.len()) - surviving) {
            keep[id] = true;
        }
    }
    if pert.delete_target {
        keep[target] = false;
    }

    let mut runtime_nodes = Vec::with_capacity(demo_nodes.len() + pert.decoys);
    for (n, _) in demo_nodes.iter().zip(&keep).filter(|(_, &k)| k) {
        let bbox = pert.map_rect(origin, &n.bbox);
        if !screen.contains(bbox.center()) {
            if n.id == target {
                return Err(SpecError::TargetOffScreen);
            }
            continue;
        }
        let content = if n.kind == NodeKind::Text {
            noisy_text(&n.content, pert.text_noise, &mut rng)
        } else {
            n.content.clone()
        };
        runtime_nodes.push(UiNode::new(n.id, bbox, n.kind, content, n.icon_emb.clone(), n.text_emb.clone())?);
    }

    let live_window = Rect::new(
        origin.x + pert.dx,
        origin.y + pert.dy,
        spec.window.w * pert.window_ratio[0],
        spec.window.h * pert.window_ratio[1],
    );
    let words = spec.words();
    let tp = &protos[target];
    for k in 0..pert.decoys {
        // same kind and size as the target, one word swapped, embedding at the set cosine
        let content = match tp.kind {
            NodeKind::Text => {
                let mut parts: Vec<String> = tp.content.split(' ').map(str::to_string).collect();
                let j = rng.random_range(0..parts.len());
                let choices: Vec<&String> = words.iter().filter(|w| **w != parts[j]).collect();
                parts[j] = choices[rng.random_range(0..choices.len())].clone();
                parts.join(" ")
            }
            NodeKind::Icon => String::new(),
        };
        let base = &t.icon_emb;
        let icon = vector_at_cosine(base, pert.decoy_cosine, &mut rng);
        let text = t.text_emb.as_ref().map(|e| vector_at_cosine(e, pert.decoy_cosine, &mut rng));
        let (w, h) = (tp.w * pert.sx, tp.h * pert.sy);
        let mut placed = None;
        for _ in 0..400 {
            let c = Point::new(
                rng.random_range(live_window.x + w..live_window.right().min(screen.w) - w),
                rng.random_range(live_window.y + h..live_window.bottom().min(screen.h) - h),
            );
            let b = Rect::new(c.x - w / 2.0, c.y - h / 2.0, w, h);
            if runtime_nodes.iter().all(|n| !overlaps(&b, &n.bbox, 4.0)) {
                placed = Some(b);
                break;
            }
        }
        let Some(bbox) = placed else { continue };
        runtime_nodes.push(UiNode::new(demo_nodes.len() + k, bbox, tp.kind, content, icon, text)?);
    }

    let mut runtime = build_graph(runtime_nodes, spec.knn_k)?;
    runtime.image_size = (spec.screen[0], spec.screen[1]);
    let truth = (!pert.delete_target).then(|| pert.map_point(origin, click));
    Ok(Case {
        name: format!("case-{seed:016x}"),
        seed,
        demo,
        runtime,
        live_window,
        truth,
    })
}

/// Named families of perturbations used by the benchmark suites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Identity,
    /// Shift by up to 300 px.
    Translation,
    /// Uniform rescale in [0.75, 1.4] with the window ratio reported.
    Rescale,
    /// Two to four identical targets.
    Duplicates,
    /// 30% neighbour dropout.
    Dropout,
    /// Target removed, no duplicates.
    Deleted,
}

impl Regime {
    pub const ALL: [Regime; 6] = [
        Regime::Identity,
        Regime::Translation,
        Regime::Rescale,
        Regime::Duplicates,
        Regime::Dropout,
        Regime::Deleted,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Regime::Identity => "identity",
            Regime::Translation => "translation",
            Regime::Rescale => "rescale",
            Regime::Duplicates => "duplicates",
            Regime::Dropout => "dropout",
            Regime::Deleted => "deleted",
        }
    }

    pub fn parse(s: &str) -> Option<Regime> {
        Regime::ALL.into_iter().find(|r| r.name() == s)
    }

    /// Scene spec and perturbation for one case of this regime.
    pub fn sample(self, base: &SceneSpec, rng: &mut ChaCha8Rng) -> (SceneSpec, Perturbation) {
        let mut spec = base.clone();
        let mut pert = Perturbation::default();
        let screen = Rect::new(0.0, 0.0, spec.screen[0], spec.screen[1]);
        match self {
            Regime::Identity => {}
            Regime::Translation => loop {
                let (dx, dy) = (rng.random_range(-300.0..300.0), rng.random_range(-300.0..300.0));
                let moved = spec.window.translated(dx, dy);
                let on_screen = moved.x >= 0.0 && moved.y >= 0.0 && moved.right() <= screen.w && moved.bottom() <= screen.h;
                if f64::hypot(dx, dy) <= 300.0 && on_screen {
                    pert.dx = dx;
                    pert.dy = dy;
                    break;
                }
            },
            Regime::Rescale => {
                let s = rng.random_range(0.75..1.4);
                pert.sx = s;
                pert.sy = s;
                pert.window_ratio = [s, s];
            }
            Regime::Duplicates => spec.duplicates = rng.random_range(1..=3),
            Regime::Dropout => pert.dropout = 0.3,
            Regime::Deleted => pert.delete_target = true,
        }
        (spec, pert)
    }
}

/// `n` cases of `regime`; case `i` uses seed `derive_seed(seed, [i])`.
pub fn generate_suite(regime: Regime, base: &SceneSpec, n: usize, seed: u64) -> Result<Vec<Case>, SpecError> {
    (0..n)
        .map(|i| {
            let case_seed = derive_seed(seed, &[i as u64]);
            let (spec, pert) = regime.sample(base, &mut stream(case_seed, &[0x4e61]));
            let mut case = generate_case(&spec, &pert, case_seed)?;
            case.name = format!("{}-{i:04}", regime.name());
            Ok(case)
        })
        .collect()
}
