//! UI graphs: detected screen elements linked by spatial k-nearest-neighbour
//! edges, plus the per-step subgraphs captured at demonstration time.

mod io;
mod similarity;

pub use io::{GraphFile, NodeAttrs, NodeRecord, SubgraphFile};
pub use similarity::{clipped_cosine, node_similarity, text_similarity, FuzzyTolerance};

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point, Rect};

pub type NodeId = usize;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GraphError {
    #[error("screen contains no UI elements")]
    EmptyScreen,
    #[error("embedding dimension mismatch ({left} vs {right})")]
    FeatureMismatch { left: usize, right: usize },
    #[error("node {id}: {reason}")]
    InvalidNode { id: NodeId, reason: String },
    #[error("duplicate node id {0}")]
    DuplicateId(NodeId),
    #[error("edge ({0}, {1}) references an unknown node or is a self-loop")]
    InvalidEdge(NodeId, NodeId),
    #[error("target node {0} is not part of the subgraph")]
    MissingTarget(NodeId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Text,
    Icon,
}

/// One detected element on a screen.
#[derive(Debug, Clone, PartialEq)]
pub struct UiNode {
    pub id: NodeId,
    pub bbox: Rect,
    pub kind: NodeKind,
    /// OCR text; empty for pure icons.
    pub content: String,
    /// Unit-norm icon embedding supplied by the feature provider.
    pub icon_emb: Vec<f64>,
    pub text_emb: Option<Vec<f64>>,
}

/// Rescale `v` to unit L2 norm unless it already is one (to 1e-12), so that
/// normalising twice never perturbs the stored values.
fn normalize(v: &mut [f64]) -> Option<()> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !norm.is_finite() || norm == 0.0 {
        return None;
    }
    if (norm - 1.0).abs() > 1e-12 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    Some(())
}

impl UiNode {
    /// Validates the element and normalises its embeddings.
    pub fn new(
        id: NodeId,
        bbox: Rect,
        kind: NodeKind,
        content: impl Into<String>,
        mut icon_emb: Vec<f64>,
        mut text_emb: Option<Vec<f64>>,
    ) -> Result<Self, GraphError> {
        let invalid = |reason: &str| GraphError::InvalidNode {
            id,
            reason: reason.to_string(),
        };
        let content = content.into();
        if !(bbox.w > 0.0 && bbox.h > 0.0) {
            return Err(invalid("bounding box must have positive width and height"));
        }
        if kind == NodeKind::Text && content.is_empty() {
            return Err(invalid("text node without content"));
        }
        normalize(&mut icon_emb).ok_or_else(|| invalid("icon embedding has zero or non-finite norm"))?;
        if let Some(t) = text_emb.as_mut() {
            normalize(t).ok_or_else(|| invalid("text embedding has zero or non-finite norm"))?;
        }
        Ok(Self {
            id,
            bbox,
            kind,
            content,
            icon_emb,
            text_emb,
        })
    }

    pub fn center(&self) -> Point {
        self.bbox.center()
    }
}

/// Elements of one screen with their symmetrised kNN edges.
#[derive(Debug, Clone, PartialEq)]
pub struct UiGraph {
    pub nodes: Vec<UiNode>,
    /// Undirected edges stored as `(lower id, higher id)`, sorted.
    pub edges: Vec<(NodeId, NodeId)>,
    pub knn_k: usize,
    /// Screen size `(W, H)` in pixels.
    pub image_size: (f64, f64),
}

impl UiGraph {
    pub fn node(&self, id: NodeId) -> Option<&UiNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn screen_bounds(&self) -> Rect {
        Rect::new(0.0, 0.0, self.image_size.0, self.image_size.1)
    }

    /// Adjacency lists keyed by node index.
    fn adjacency(&self) -> Vec<Vec<usize>> {
        let index = self.index();
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for &(a, b) in &self.edges {
            if let (Some(&ia), Some(&ib)) = (index.get(&a), index.get(&b)) {
                adj[ia].push(ib);
                adj[ib].push(ia);
            }
        }
        adj
    }

    fn index(&self) -> HashMap<NodeId, usize> {
        self.nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect()
    }

    /// Checks edge endpoints and id uniqueness.
    pub fn validate(&self) -> Result<(), GraphError> {
        let mut seen = BTreeSet::new();
        for n in &self.nodes {
            if !seen.insert(n.id) {
                return Err(GraphError::DuplicateId(n.id));
            }
        }
        let mut edges = BTreeSet::new();
        for &(a, b) in &self.edges {
            if a == b || !seen.contains(&a) || !seen.contains(&b) || !edges.insert((a.min(b), a.max(b))) {
                return Err(GraphError::InvalidEdge(a, b));
            }
        }
        Ok(())
    }
}

/// Smallest extent `(W, H)` covering every element, used when a caller has
/// no better notion of the screen size.
fn covering_extent(nodes: &[UiNode]) -> (f64, f64) {
    nodes.iter().fold((0.0f64, 0.0f64), |(w, h), n| {
        (w.max(n.bbox.right()), h.max(n.bbox.bottom()))
    })
}

/// Connect every element to its `k` nearest neighbours by center distance and
/// symmetrise. Ties go to the lower node id.
pub fn build_graph(elements: Vec<UiNode>, k: usize) -> Result<UiGraph, GraphError> {
    if elements.is_empty() {
        return Err(GraphError::EmptyScreen);
    }
    let k = k.max(1);
    let centers: Vec<Point> = elements.iter().map(UiNode::center).collect();
    let mut edges = BTreeSet::new();
    let mut order: Vec<usize> = Vec::with_capacity(elements.len());
    for (i, ci) in centers.iter().enumerate() {
        order.clear();
        order.extend((0..elements.len()).filter(|&j| j != i));
        order.sort_by(|&a, &b| {
            ci.dist_sq(centers[a])
                .total_cmp(&ci.dist_sq(centers[b]))
                .then(elements[a].id.cmp(&elements[b].id))
        });
        for &j in order.iter().take(k) {
            let (a, b) = (elements[i].id, elements[j].id);
            edges.insert((a.min(b), a.max(b)));
        }
    }
    let image_size = covering_extent(&elements);
    let graph = UiGraph {
        nodes: elements,
        edges: edges.into_iter().collect(),
        knn_k: k,
        image_size,
    };
    graph.validate()?;
    Ok(graph)
}

/// Evidence for one workflow step captured at demonstration time: the target
/// element, nearby context elements and the recorded click.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSubgraph {
    pub target_id: NodeId,
    /// Target and neighbour nodes; neighbours follow the target in
    /// increasing distance from the click when produced by extraction.
    pub nodes: Vec<UiNode>,
    pub edges: Vec<(NodeId, NodeId)>,
    pub click_point: Point,
    pub window_bounds: Rect,
    pub image_size: (f64, f64),
    pub knn_k: usize,
    /// Capture DPI scale.
    pub scale_factor: f64,
    /// Capture-to-screen correction `(offset_x, offset_y)`.
    pub offsets: (f64, f64),
    target_index: usize,
    displacements: Vec<Point>,
}

impl StepSubgraph {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        target_id: NodeId,
        nodes: Vec<UiNode>,
        edges: Vec<(NodeId, NodeId)>,
        click_point: Point,
        window_bounds: Rect,
        image_size: (f64, f64),
        knn_k: usize,
        scale_factor: f64,
        offsets: (f64, f64),
    ) -> Result<Self, GraphError> {
        let target_index = nodes
            .iter()
            .position(|n| n.id == target_id)
            .ok_or(GraphError::MissingTarget(target_id))?;
        let displacements = nodes.iter().map(|n| n.center() - click_point).collect();
        Ok(Self {
            target_id,
            nodes,
            edges,
            click_point,
            window_bounds,
            image_size,
            knn_k,
            scale_factor,
            offsets,
            target_index,
            displacements,
        })
    }

    pub fn target(&self) -> &UiNode {
        &self.nodes[self.target_index]
    }

    pub fn target_index(&self) -> usize {
        self.target_index
    }

    /// `center(node_i) - click_point` for every node, in `nodes` order. The
    /// target's entry is its (usually small) offset from the click.
    pub fn displacements(&self) -> &[Point] {
        &self.displacements
    }

    /// Neighbour nodes with their displacement vectors.
    pub fn neighbors(&self) -> impl Iterator<Item = (&UiNode, Point)> {
        let t = self.target_index;
        self.nodes
            .iter()
            .zip(self.displacements.iter().copied())
            .enumerate()
            .filter(move |(i, _)| *i != t)
            .map(|(_, pair)| pair)
    }

    /// Click location corrected into screen coordinates.
    pub fn screen_click_point(&self) -> Point {
        Point::new(self.click_point.x + self.offsets.0, self.click_point.y + self.offsets.1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Frontier {
    dist: f64,
    id: NodeId,
    index: usize,
}

impl Eq for Frontier {}

impl Ord for Frontier {
    // reversed: BinaryHeap pops the nearest, lowest-id entry first
    fn cmp(&self, other: &Self) -> Ordering {
        other.dist.total_cmp(&self.dist).then(other.id.cmp(&self.id))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Node whose box contains `point` with the smallest area, else the node with
/// the nearest center. Ties go to the lower id.
pub fn locate_target(nodes: &[UiNode], point: Point) -> Option<usize> {
    let containing = nodes
        .iter()
        .enumerate()
        .filter(|(_, n)| n.bbox.contains(point))
        .min_by(|(_, a), (_, b)| a.bbox.area().total_cmp(&b.bbox.area()).then(a.id.cmp(&b.id)));
    if let Some((i, _)) = containing {
        return Some(i);
    }
    nodes
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| {
            a.center()
                .dist_sq(point)
                .total_cmp(&b.center().dist_sq(point))
                .then(a.id.cmp(&b.id))
        })
        .map(|(i, _)| i)
}

/// Build the step subgraph for a click: pick the target, then walk the kNN
/// graph outward from it, always expanding the discovered node nearest the
/// click, until `neighbor_budget` neighbours are collected.
pub fn extract_step_subgraph(
    graph: &UiGraph,
    click_point: Point,
    window_bounds: Rect,
    neighbor_budget: usize,
) -> Result<StepSubgraph, GraphError> {
    let target = locate_target(&graph.nodes, click_point).ok_or(GraphError::EmptyScreen)?;
    let adj = graph.adjacency();
    let mut visited = vec![false; graph.nodes.len()];
    let mut heap = BinaryHeap::new();
    let mut picked: Vec<usize> = Vec::new();
    visited[target] = true;
    let push = |heap: &mut BinaryHeap<Frontier>, visited: &mut [bool], from: usize| {
        for &j in &adj[from] {
            if !visited[j] {
                visited[j] = true;
                heap.push(Frontier {
                    dist: graph.nodes[j].center().dist_sq(click_point),
                    id: graph.nodes[j].id,
                    index: j,
                });
            }
        }
    };
    push(&mut heap, &mut visited, target);
    while picked.len() < neighbor_budget {
        let Some(next) = heap.pop() else { break };
        picked.push(next.index);
        push(&mut heap, &mut visited, next.index);
    }
    picked.sort_by(|&a, &b| {
        let na = &graph.nodes[a];
        let nb = &graph.nodes[b];
        na.center()
            .dist_sq(click_point)
            .total_cmp(&nb.center().dist_sq(click_point))
            .then(na.id.cmp(&nb.id))
    });

    let mut nodes = Vec::with_capacity(picked.len() + 1);
    nodes.push(graph.nodes[target].clone());
    nodes.extend(picked.iter().map(|&i| graph.nodes[i].clone()));
    let members: BTreeSet<NodeId> = nodes.iter().map(|n| n.id).collect();
    let edges = graph
        .edges
        .iter()
        .copied()
        .filter(|(a, b)| members.contains(a) && members.contains(b))
        .collect();

    StepSubgraph::new(
        graph.nodes[target].id,
        nodes,
        edges,
        click_point,
        window_bounds,
        graph.image_size,
        graph.knn_k,
        1.0,
        (0.0, 0.0),
    )
}

/// Keep only elements whose center lies inside the scroll container.
pub fn mask_outside_container(elements: &[UiNode], container: &Rect) -> Vec<UiNode> {
    elements
        .iter()
        .filter(|n| container.contains(n.center()))
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn icon(id: NodeId, x: f64, y: f64, w: f64, h: f64) -> UiNode {
        UiNode::new(id, Rect::new(x, y, w, h), NodeKind::Icon, "", vec![1.0, 0.0], None).unwrap()
    }

    /// Node centered at (cx, cy) with a 2x2 box.
    fn at(id: NodeId, cx: f64, cy: f64) -> UiNode {
        icon(id, cx - 1.0, cy - 1.0, 2.0, 2.0)
    }

    /// Brute-force directed kNN selections, used as an oracle.
    fn brute_knn(nodes: &[UiNode], k: usize) -> BTreeSet<(NodeId, NodeId)> {
        let mut out = BTreeSet::new();
        for a in nodes {
            let mut all: Vec<(f64, NodeId)> = nodes
                .iter()
                .filter(|b| b.id != a.id)
                .map(|b| (a.center().dist(b.center()), b.id))
                .collect();
            all.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap().then(x.1.cmp(&y.1)));
            for (_, b) in all.into_iter().take(k) {
                out.insert((a.id.min(b), a.id.max(b)));
            }
        }
        out
    }

    #[test]
    fn collinear_nodes() {
        let nodes = vec![at(0, 0.0, 0.0), at(1, 10.0, 0.0), at(2, 100.0, 0.0)];
        let g = build_graph(nodes.clone(), 1).unwrap();
        assert_eq!(g.edges, vec![(0, 1), (1, 2)]);
        assert_eq!(g.edges.iter().copied().collect::<BTreeSet<_>>(), brute_knn(&nodes, 1));
    }

    #[test]
    fn single_node_has_no_edges() {
        let g = build_graph(vec![at(3, 5.0, 5.0)], 5).unwrap();
        assert_eq!(g.len(), 1);
        assert!(g.edges.is_empty());
    }

    #[test]
    fn unit_square_never_links_diagonal() {
        let nodes = vec![at(0, 0.0, 0.0), at(1, 1.0, 0.0), at(2, 1.0, 1.0), at(3, 0.0, 1.0)];
        let g = build_graph(nodes.clone(), 2).unwrap();
        assert_eq!(g.edges, vec![(0, 1), (0, 3), (1, 2), (2, 3)]);
        assert_eq!(g.edges.iter().copied().collect::<BTreeSet<_>>(), brute_knn(&nodes, 2));
    }

    #[test]
    fn empty_screen_is_an_error() {
        assert_eq!(build_graph(Vec::new(), 3), Err(GraphError::EmptyScreen));
    }

    #[test]
    fn invalid_nodes_are_rejected() {
        let r = UiNode::new(0, Rect::new(0.0, 0.0, 0.0, 5.0), NodeKind::Icon, "", vec![1.0], None);
        assert!(matches!(r, Err(GraphError::InvalidNode { .. })));
        let r = UiNode::new(0, Rect::new(0.0, 0.0, 5.0, 5.0), NodeKind::Text, "", vec![1.0], None);
        assert!(matches!(r, Err(GraphError::InvalidNode { .. })));
        let r = UiNode::new(0, Rect::new(0.0, 0.0, 5.0, 5.0), NodeKind::Icon, "", vec![0.0, 0.0], None);
        assert!(matches!(r, Err(GraphError::InvalidNode { .. })));
    }

    #[test]
    fn embeddings_are_normalized_once() {
        let n = UiNode::new(0, Rect::new(0.0, 0.0, 1.0, 1.0), NodeKind::Icon, "", vec![3.0, 4.0], None).unwrap();
        assert_eq!(n.icon_emb, vec![0.6, 0.8]);
        let again = UiNode::new(0, n.bbox, n.kind, "", n.icon_emb.clone(), None).unwrap();
        assert_eq!(again.icon_emb, n.icon_emb);
    }

    #[test]
    fn click_inside_one_box_selects_it() {
        let nodes = vec![icon(0, 0.0, 0.0, 10.0, 10.0), icon(1, 50.0, 0.0, 10.0, 10.0)];
        let g = build_graph(nodes, 1).unwrap();
        let sub = extract_step_subgraph(&g, Point::new(55.0, 5.0), Rect::new(0.0, 0.0, 100.0, 100.0), 4).unwrap();
        assert_eq!(sub.target_id, 1);
        assert_eq!(sub.target().id, 1);
    }

    #[test]
    fn nested_boxes_pick_smaller_area() {
        // 0 is a panel, 1 a button inside it
        let nodes = vec![icon(0, 0.0, 0.0, 200.0, 100.0), icon(1, 20.0, 20.0, 30.0, 20.0)];
        let click = Point::new(30.0, 30.0);
        let containing: Vec<_> = nodes.iter().filter(|n| n.bbox.contains(click)).collect();
        assert_eq!(containing.len(), 2);
        let smallest = containing
            .iter()
            .min_by(|a, b| a.bbox.area().partial_cmp(&b.bbox.area()).unwrap())
            .unwrap();
        let g = build_graph(nodes.clone(), 1).unwrap();
        let sub = extract_step_subgraph(&g, click, Rect::new(0.0, 0.0, 300.0, 300.0), 4).unwrap();
        assert_eq!(sub.target_id, smallest.id);
        assert_eq!(sub.target_id, 1);
    }

    #[test]
    fn background_click_falls_back_to_nearest_center() {
        let nodes: Vec<UiNode> = (0..10).map(|i| at(i, 50.0 * i as f64, 0.0)).collect();
        let g = build_graph(nodes, 2).unwrap();
        let sub = extract_step_subgraph(&g, Point::new(352.0, 30.0), Rect::new(0.0, 0.0, 600.0, 100.0), 3).unwrap();
        assert_eq!(sub.target_id, 7);
    }

    #[test]
    fn subgraph_neighbors_are_reachable_and_sorted() {
        let nodes: Vec<UiNode> = (0..20).map(|i| at(i, 30.0 * (i % 5) as f64, 30.0 * (i / 5) as f64)).collect();
        let g = build_graph(nodes, 3).unwrap();
        let click = g.node(6).unwrap().center();
        let sub = extract_step_subgraph(&g, click, Rect::new(0.0, 0.0, 200.0, 200.0), 6).unwrap();
        assert_eq!(sub.target_id, 6);
        assert_eq!(sub.nodes.len(), 7);
        let d: Vec<f64> = sub.neighbors().map(|(_, r)| r.norm()).collect();
        assert!(d.windows(2).all(|w| w[0] <= w[1]));
        for (n, r) in sub.neighbors() {
            assert_eq!(r, n.center() - click);
        }
        // the six nearest grid points are within one diagonal step
        assert!(d.iter().all(|&x| x <= 30.0 * 2f64.sqrt() + 1e-9));
    }

    #[test]
    fn masking_uses_centers() {
        let nodes = vec![icon(0, 10.0, 10.0, 10.0, 10.0), icon(1, 90.0, 10.0, 30.0, 10.0)];
        let container = Rect::new(0.0, 0.0, 100.0, 100.0);
        // node 1 overlaps the right edge but its center (105, 15) is outside
        let kept = mask_outside_container(&nodes, &container);
        assert_eq!(kept.iter().map(|n| n.id).collect::<Vec<_>>(), vec![0]);
        let all_inside = mask_outside_container(&nodes[..1], &container);
        assert_eq!(all_inside, nodes[..1].to_vec());
        assert!(mask_outside_container(&[], &container).is_empty());
    }
}
