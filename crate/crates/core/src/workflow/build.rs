//! Compile a recorded demonstration into a template.
//!
//! A demo trace is a JSON document:
//!
//! ```json
//! {
//!   "workflow_id": "...", "workflow_name": "...", "workflow_title": "...",
//!   "description": "...", "created_at": "...",
//!   "variables": [{"name": "subject", "default_value": "...", "description": "..."}],
//!   "builder": {"scale_factor": 1.0, "knn_k": 8, "ui_parser_config": {}},
//!   "neighbor_budget": 12,
//!   "keyframes": [{
//!     "action_type": "click", "description": "Click on Mail icon",
//!     "elements": [<node>, ...], "image_size": [W, H], "window_bounds": [x, y, w, h],
//!     "click": [x, y], "container": [x, y, w, h] | null,
//!     "pause_duration": 1.0, "active_app_name": "Mail", "id": "<uuid>" | null
//!   }]
//! }
//! ```
//!
//! Nodes use the same record shape as graph files. `container` on a scroll
//! keyframe names the scrollable region; the next grounded keyframe keeps
//! only the elements inside it.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use super::{placeholders, ActionType, BuilderMetadata, Step, Variable, WorkflowError, WorkflowTemplate};
use crate::geometry::{Point, Rect};
use crate::ui_graph::{build_graph, extract_step_subgraph, mask_outside_container, UiNode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub action_type: ActionType,
    pub description: String,
    #[serde(default)]
    pub elements: Vec<UiNode>,
    #[serde(default)]
    pub image_size: Option<[f64; 2]>,
    #[serde(default)]
    pub window_bounds: Option<Rect>,
    #[serde(default)]
    pub click: Option<Point>,
    #[serde(default)]
    pub container: Option<Rect>,
    #[serde(default)]
    pub pause_duration: f64,
    #[serde(default)]
    pub active_app_name: String,
    #[serde(default)]
    pub id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub workflow_id: String,
    pub workflow_name: String,
    #[serde(default)]
    pub workflow_title: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub category: String,
    #[serde(default)]
    pub created_at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoTrace {
    #[serde(flatten)]
    pub header: TraceHeader,
    #[serde(default)]
    pub variables: Vec<Variable>,
    #[serde(default)]
    pub builder: BuilderMetadata,
    #[serde(default = "default_budget")]
    pub neighbor_budget: usize,
    pub keyframes: Vec<Keyframe>,
}

fn default_budget() -> usize {
    12
}

/// Deterministic step id from the workflow id and step number.
pub fn step_uuid(workflow_id: &str, step_number: usize) -> String {
    Uuid::new_v5(&Uuid::NAMESPACE_OID, format!("{workflow_id}/{step_number}").as_bytes()).to_string()
}

pub fn build_workflow(trace: &DemoTrace) -> Result<WorkflowTemplate, WorkflowError> {
    let mut variables: Vec<Variable> = Vec::new();
    for v in &trace.variables {
        if !variables.iter().any(|w| w.name == v.name) {
            variables.push(v.clone());
        }
    }

    let mut steps: Vec<Step> = Vec::with_capacity(trace.keyframes.len());
    let mut container: Option<Rect> = None;
    for (i, kf) in trace.keyframes.iter().enumerate() {
        let step_number = i + 1;
        let invalid = |reason: &str| WorkflowError::InvalidStep {
            step: step_number,
            reason: reason.to_string(),
        };
        let used = placeholders(&kf.description);
        for name in &used {
            if !variables.iter().any(|v| &v.name == name) {
                return Err(WorkflowError::UndeclaredVariable {
                    name: name.clone(),
                    step: step_number,
                });
            }
        }
        let mut vars: Vec<String> = Vec::new();
        for name in used {
            if !vars.contains(&name) {
                vars.push(name);
            }
        }

        let step_subgraph = if kf.action_type.is_grounded() {
            let click = kf.click.ok_or_else(|| invalid("grounded keyframe without a click point"))?;
            let elements = match container {
                Some(c) if kf.action_type == ActionType::Click => mask_outside_container(&kf.elements, &c),
                _ => kf.elements.clone(),
            };
            let mut g = build_graph(elements, trace.builder.knn_k)?;
            if let Some([w, h]) = kf.image_size {
                g.image_size = (w, h);
            }
            let window = kf
                .window_bounds
                .unwrap_or(Rect::new(0.0, 0.0, g.image_size.0, g.image_size.1));
            let mut sub = extract_step_subgraph(&g, click, window, trace.neighbor_budget)?;
            sub.scale_factor = trace.builder.scale_factor;
            Some(sub)
        } else {
            None
        };

        match kf.action_type {
            ActionType::Scroll | ActionType::ScrollToFind => container = kf.container.or(container),
            ActionType::Click => container = None,
            _ => {}
        }

        steps.push(Step {
            step_number,
            id: kf.id.clone().unwrap_or_else(|| step_uuid(&trace.header.workflow_id, step_number)),
            action_type: kf.action_type,
            description: kf.description.clone(),
            step_subgraph,
            variables: vars,
            values: IndexMap::new(),
            pause_duration: kf.pause_duration,
            active_app_name: kf.active_app_name.clone(),
            scroll_target: None,
        });
    }

    // a scroll-to-find step reveals the target of the next click
    for i in 0..steps.len() {
        if steps[i].action_type == ActionType::ScrollToFind {
            steps[i].scroll_target = steps[i + 1..]
                .iter()
                .find(|s| s.action_type == ActionType::Click)
                .map(|s| s.id.clone());
        }
    }

    let h = &trace.header;
    let t = WorkflowTemplate {
        workflow_id: h.workflow_id.clone(),
        workflow_name: h.workflow_name.clone(),
        workflow_title: h.workflow_title.clone(),
        description: h.description.clone(),
        category: h.category.clone(),
        variables,
        steps,
        builder: trace.builder.clone(),
        injected_steps: Vec::new(),
        created_at: h.created_at.clone(),
        config_file: "workflow.yaml".into(),
        data_file: "steps_data.json".into(),
    };
    t.validate()?;
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ui_graph::NodeKind;

    fn text(id: usize, x: f64, y: f64, label: &str) -> UiNode {
        let mut e = vec![0.1; 6];
        e[id % 6] = 1.0;
        UiNode::new(id, Rect::new(x, y, 50.0, 20.0), NodeKind::Text, label, e, None).unwrap()
    }

    fn header() -> TraceHeader {
        TraceHeader {
            workflow_id: "t1".into(),
            workflow_name: "demo".into(),
            workflow_title: "Demo".into(),
            description: String::new(),
            category: String::new(),
            created_at: String::new(),
        }
    }

    fn keyframe(action_type: ActionType, description: &str) -> Keyframe {
        Keyframe {
            action_type,
            description: description.into(),
            elements: vec![],
            image_size: None,
            window_bounds: None,
            click: None,
            container: None,
            pause_duration: 0.0,
            active_app_name: String::new(),
            id: None,
        }
    }

    #[test]
    fn single_click_trace() {
        let mut kf = keyframe(ActionType::Click, "Click on Send button");
        kf.elements = vec![text(0, 0.0, 0.0, "Send"), text(1, 100.0, 0.0, "Cancel")];
        kf.click = Some(Point::new(20.0, 10.0));
        let trace = DemoTrace {
            header: header(),
            variables: vec![],
            builder: BuilderMetadata::default(),
            neighbor_budget: 12,
            keyframes: vec![kf],
        };
        let t = build_workflow(&trace).unwrap();
        assert_eq!(t.steps.len(), 1);
        assert!(t.variables.is_empty());
        assert_eq!(t.steps[0].id, step_uuid("t1", 1));
        assert_eq!(t.steps[0].step_subgraph.as_ref().unwrap().target_id, 0);
    }

    #[test]
    fn scroll_masks_next_click() {
        let container = Rect::new(0.0, 100.0, 300.0, 300.0);
        let mut scroll = keyframe(ActionType::ScrollToFind, "Scroll: down");
        scroll.elements = vec![text(0, 10.0, 120.0, "Row")];
        scroll.click = Some(Point::new(150.0, 250.0));
        scroll.container = Some(container);
        let mut click = keyframe(ActionType::Click, "Click on Row 7");
        click.elements = vec![
            text(0, 10.0, 120.0, "Row 6"),
            text(1, 10.0, 160.0, "Row 7"),
            text(2, 10.0, 200.0, "Row 8"),
            // decoys outside the scroll area
            text(3, 10.0, 20.0, "Row 7"),
            text(4, 400.0, 160.0, "Row 7"),
        ];
        click.click = Some(Point::new(30.0, 170.0));
        let trace = DemoTrace {
            header: header(),
            variables: vec![],
            builder: BuilderMetadata::default(),
            neighbor_budget: 12,
            keyframes: vec![scroll, click],
        };
        let t = build_workflow(&trace).unwrap();
        let sub = t.steps[1].step_subgraph.as_ref().unwrap();
        assert!(sub.nodes.iter().all(|n| container.contains(n.center())));
        assert_eq!(sub.nodes.len(), 3);
        assert_eq!(t.steps[0].scroll_target.as_deref(), Some(t.steps[1].id.as_str()));
    }

    #[test]
    fn undeclared_placeholder_is_rejected() {
        let trace = DemoTrace {
            header: header(),
            variables: vec![],
            builder: BuilderMetadata::default(),
            neighbor_budget: 12,
            keyframes: vec![keyframe(ActionType::TypeText, "Type text: {{who}}")],
        };
        assert!(matches!(
            build_workflow(&trace),
            Err(WorkflowError::UndeclaredVariable { step: 1, .. })
        ));
    }

    #[test]
    fn variables_deduplicated_and_order_kept() {
        let var = |n: &str| Variable {
            name: n.into(),
            default_value: Some(n.to_uppercase()),
            description: String::new(),
        };
        let trace = DemoTrace {
            header: header(),
            variables: vec![var("a"), var("b"), var("a")],
            builder: BuilderMetadata::default(),
            neighbor_budget: 12,
            keyframes: vec![
                keyframe(ActionType::TypeText, "Type text: {{b}}{{b}}"),
                keyframe(ActionType::PressKey, "Press key: tab"),
                keyframe(ActionType::TypeText, "Type text: {{a}}"),
            ],
        };
        let t = build_workflow(&trace).unwrap();
        assert_eq!(t.variables.len(), 2);
        assert_eq!(t.steps[0].variables, vec!["b"]);
        let numbers: Vec<_> = t.steps.iter().map(|s| s.step_number).collect();
        assert_eq!(numbers, vec![1, 2, 3]);
        assert_eq!(t.steps[2].description, "Type text: {{a}}");
    }
}
