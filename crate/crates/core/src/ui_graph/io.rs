//! Node-link serialization of UI graphs and step subgraphs.
//!
//! Nodes are written as
//! `{"pos": [x, y, w, h], "icon_emb": [...], "text_emb": [...] | null,
//!   "attrs": {"type": "icon" | "text", "content": "..."}, "id": n}`
//! and edges as `{"source": a, "target": b}` inside a `"G"` object.

use serde::{Deserialize, Serialize};

use super::{GraphError, NodeId, NodeKind, StepSubgraph, UiGraph, UiNode};
use crate::geometry::{Point, Rect};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeAttrs {
    #[serde(rename = "type")]
    pub kind: NodeKind,
    #[serde(default)]
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub pos: Rect,
    pub icon_emb: Vec<f64>,
    #[serde(default)]
    pub text_emb: Option<Vec<f64>>,
    pub attrs: NodeAttrs,
    pub id: NodeId,
}

impl TryFrom<NodeRecord> for UiNode {
    type Error = GraphError;

    fn try_from(r: NodeRecord) -> Result<Self, GraphError> {
        UiNode::new(r.id, r.pos, r.attrs.kind, r.attrs.content, r.icon_emb, r.text_emb)
    }
}

impl From<UiNode> for NodeRecord {
    fn from(n: UiNode) -> Self {
        NodeRecord {
            pos: n.bbox,
            icon_emb: n.icon_emb,
            text_emb: n.text_emb,
            attrs: NodeAttrs {
                kind: n.kind,
                content: n.content,
            },
            id: n.id,
        }
    }
}

impl Serialize for UiNode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        NodeRecord::from(self.clone()).serialize(s)
    }
}

impl<'de> Deserialize<'de> for UiNode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = NodeRecord::deserialize(d)?;
        UiNode::try_from(r).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub source: NodeId,
    pub target: NodeId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphBody {
    #[serde(default)]
    pub directed: bool,
    pub nodes: Vec<UiNode>,
    #[serde(default)]
    pub links: Vec<Link>,
}

impl GraphBody {
    fn new(nodes: Vec<UiNode>, edges: &[(NodeId, NodeId)]) -> Self {
        GraphBody {
            directed: false,
            nodes,
            links: edges
                .iter()
                .map(|&(source, target)| Link { source, target })
                .collect(),
        }
    }

    fn edges(&self) -> Vec<(NodeId, NodeId)> {
        let mut e: Vec<_> = self
            .links
            .iter()
            .map(|l| (l.source.min(l.target), l.source.max(l.target)))
            .collect();
        e.sort_unstable();
        e
    }
}

/// A standalone screen: the runtime graph plus the live window bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    pub image_size: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_bounds: Option<Rect>,
    #[serde(default = "default_knn_k")]
    pub knn_k: usize,
    #[serde(rename = "G")]
    pub graph: GraphBody,
}

fn default_knn_k() -> usize {
    8
}

impl GraphFile {
    pub fn from_graph(g: &UiGraph, window_bounds: Option<Rect>) -> Self {
        GraphFile {
            image_size: [g.image_size.0, g.image_size.1],
            window_bounds,
            knn_k: g.knn_k,
            graph: GraphBody::new(g.nodes.clone(), &g.edges),
        }
    }

    pub fn to_graph(&self) -> Result<UiGraph, GraphError> {
        let g = UiGraph {
            nodes: self.graph.nodes.clone(),
            edges: self.graph.edges(),
            knn_k: self.knn_k,
            image_size: (self.image_size[0], self.image_size[1]),
        };
        g.validate()?;
        Ok(g)
    }

    /// Live window, defaulting to the whole screen.
    pub fn window(&self) -> Rect {
        self.window_bounds
            .unwrap_or(Rect::new(0.0, 0.0, self.image_size[0], self.image_size[1]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UiGraphWrapper {
    #[serde(rename = "G")]
    pub graph: GraphBody,
}

/// On-disk form of a step subgraph, as stored under `"step_subgraph"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgraphFile {
    pub target_element_id: NodeId,
    pub image_size: [f64; 2],
    pub click_coordinates: Point,
    pub ui_graph: UiGraphWrapper,
    pub window_bounds: Rect,
    pub knn_k: usize,
    pub scale_factor: f64,
    #[serde(default)]
    pub offset_x: f64,
    #[serde(default)]
    pub offset_y: f64,
}

impl From<&StepSubgraph> for SubgraphFile {
    fn from(s: &StepSubgraph) -> Self {
        SubgraphFile {
            target_element_id: s.target_id,
            image_size: [s.image_size.0, s.image_size.1],
            click_coordinates: s.click_point,
            ui_graph: UiGraphWrapper {
                graph: GraphBody::new(s.nodes.clone(), &s.edges),
            },
            window_bounds: s.window_bounds,
            knn_k: s.knn_k,
            scale_factor: s.scale_factor,
            offset_x: s.offsets.0,
            offset_y: s.offsets.1,
        }
    }
}

impl TryFrom<SubgraphFile> for StepSubgraph {
    type Error = GraphError;

    fn try_from(f: SubgraphFile) -> Result<Self, GraphError> {
        let edges = f.ui_graph.graph.edges();
        let check = UiGraph {
            nodes: f.ui_graph.graph.nodes,
            edges,
            knn_k: f.knn_k,
            image_size: (f.image_size[0], f.image_size[1]),
        };
        check.validate()?;
        StepSubgraph::new(
            f.target_element_id,
            check.nodes,
            check.edges,
            f.click_coordinates,
            f.window_bounds,
            check.image_size,
            f.knn_k,
            f.scale_factor,
            (f.offset_x, f.offset_y),
        )
    }
}

impl Serialize for StepSubgraph {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        SubgraphFile::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for StepSubgraph {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let f = SubgraphFile::deserialize(d)?;
        StepSubgraph::try_from(f).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ui_graph::{build_graph, extract_step_subgraph};

    fn sample_graph() -> UiGraph {
        let nodes = vec![
            UiNode::new(0, Rect::new(10.0, 10.0, 40.0, 20.0), NodeKind::Text, "Mail", vec![0.3, 0.4], None).unwrap(),
            UiNode::new(1, Rect::new(70.0, 12.0, 16.0, 16.0), NodeKind::Icon, "", vec![1.0, 0.0], Some(vec![0.0, 2.0]))
                .unwrap(),
            UiNode::new(2, Rect::new(10.0, 60.0, 60.0, 20.0), NodeKind::Text, "Compose", vec![0.0, 1.0], None).unwrap(),
        ];
        build_graph(nodes, 2).unwrap()
    }

    #[test]
    fn node_record_shape() {
        let g = sample_graph();
        let v = serde_json::to_value(&g.nodes[0]).unwrap();
        assert_eq!(v["pos"], serde_json::json!([10.0, 10.0, 40.0, 20.0]));
        assert_eq!(v["attrs"]["type"], "text");
        assert_eq!(v["attrs"]["content"], "Mail");
        assert!(v["text_emb"].is_null());
        assert_eq!(v["id"], 0);
    }

    #[test]
    fn graph_file_roundtrip() {
        let g = sample_graph();
        let f = GraphFile::from_graph(&g, Some(Rect::new(0.0, 0.0, 100.0, 100.0)));
        let text = serde_json::to_string(&f).unwrap();
        let back: GraphFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back.to_graph().unwrap(), g);
        assert_eq!(serde_json::to_string(&back).unwrap(), text);
    }

    #[test]
    fn bad_links_are_rejected() {
        let text = r#"{"image_size":[10,10],"G":{"nodes":[
            {"pos":[0,0,1,1],"icon_emb":[1],"attrs":{"type":"icon"},"id":0}],
            "links":[{"source":0,"target":4}]}}"#;
        let f: GraphFile = serde_json::from_str(text).unwrap();
        assert_eq!(f.to_graph(), Err(GraphError::InvalidEdge(0, 4)));
    }

    #[test]
    fn subgraph_roundtrip_recomputes_displacements() {
        let g = sample_graph();
        let sub = extract_step_subgraph(&g, Point::new(30.0, 18.0), Rect::new(0.0, 0.0, 100.0, 100.0), 2).unwrap();
        let text = serde_json::to_string(&sub).unwrap();
        let back: StepSubgraph = serde_json::from_str(&text).unwrap();
        assert_eq!(back, sub);
        for (n, r) in back.displacements().iter().zip(&back.nodes) {
            let expect = r.center() - back.click_point;
            assert!((n.x - expect.x).abs() < 1e-6 && (n.y - expect.y).abs() < 1e-6);
        }
    }
}
