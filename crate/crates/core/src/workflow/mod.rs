//! Workflow templates: ordered steps with grounding evidence and
//! `{{name}}` placeholders, stored as `workflow.yaml`, `metadata.json` and
//! `steps_data.json`.

mod build;
mod files;

use std::collections::BTreeSet;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ui_graph::{GraphError, StepSubgraph};

pub use build::{build_workflow, step_uuid, DemoTrace, Keyframe, TraceHeader};
pub use files::{load_workflow, save_workflow, FORMAT_VERSION};

#[derive(Debug, Error)]
pub enum WorkflowError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Parse { path: String, reason: String },
    #[error("unsupported format version {found:?}")]
    VersionMismatch { found: String },
    #[error("step_count is {declared} but {found} steps were found")]
    StepCountMismatch { declared: usize, found: usize },
    #[error("step {step}: {reason}")]
    InvalidStep { step: usize, reason: String },
    #[error("placeholder {{{{{name}}}}} in step {step} is not a declared variable")]
    UndeclaredVariable { name: String, step: usize },
    #[error("no value and no default for variable {0:?}")]
    MissingVariable(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionType {
    Click,
    TypeText,
    PressKey,
    Hotkey,
    Scroll,
    ScrollToFind,
}

impl ActionType {
    /// Whether the action needs a screen location.
    pub fn is_grounded(self) -> bool {
        matches!(self, ActionType::Click | ActionType::Scroll | ActionType::ScrollToFind)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub default_value: Option<String>,
    #[serde(default)]
    pub description: String,
}

/// Build-time settings recorded alongside the template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuilderMetadata {
    pub scale_factor: f64,
    pub knn_k: usize,
    /// Parser settings, kept as written.
    #[serde(default)]
    pub ui_parser_config: serde_json::Value,
}

impl Default for BuilderMetadata {
    fn default() -> Self {
        Self {
            scale_factor: 1.0,
            knn_k: 8,
            ui_parser_config: serde_json::Value::Object(Default::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub step_number: usize,
    pub id: String,
    pub action_type: ActionType,
    /// Natural-language action, e.g. `Type text: {{subject}}`.
    pub description: String,
    pub step_subgraph: Option<StepSubgraph>,
    /// Placeholders referenced by `description`.
    pub variables: Vec<String>,
    pub values: IndexMap<String, serde_json::Value>,
    /// Minimum settle time in seconds before the first readiness check.
    pub pause_duration: f64,
    pub active_app_name: String,
    /// For scroll-to-find steps, the id of the step whose target the scroll reveals.
    pub scroll_target: Option<String>,
}

impl Step {
    /// Text after the first `": "` of the description, e.g. the string to type.
    pub fn payload(&self) -> Option<&str> {
        self.description.split_once(": ").map(|(_, p)| p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkflowTemplate {
    pub workflow_id: String,
    pub workflow_name: String,
    pub workflow_title: String,
    pub description: String,
    pub category: String,
    pub variables: Vec<Variable>,
    pub steps: Vec<Step>,
    pub builder: BuilderMetadata,
    /// Opaque entries carried through from `running_config.injected_steps`.
    pub injected_steps: Vec<serde_yaml::Value>,
    pub created_at: String,
    pub config_file: String,
    pub data_file: String,
}

/// Names of all `{{name}}` tokens in `text`, in order of appearance.
pub fn placeholders(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find("{{") {
        let after = &rest[start + 2..];
        match after.find("}}") {
            Some(end) => {
                out.push(after[..end].trim().to_string());
                rest = &after[end + 2..];
            }
            None => break,
        }
    }
    out
}

/// Replace declared `{{name}}` tokens in one pass; inserted values are not
/// rescanned and undeclared tokens are left in place.
fn substitute(text: &str, resolved: &IndexMap<&str, &str>) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let Some(end) = after.find("}}") else {
            out.push_str(&rest[start..]);
            return out;
        };
        let token = &rest[start..start + end + 4];
        match resolved.get(after[..end].trim()) {
            Some(v) => out.push_str(v),
            None => out.push_str(token),
        }
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    out
}

impl WorkflowTemplate {
    pub fn variable(&self, name: &str) -> Option<&Variable> {
        self.variables.iter().find(|v| v.name == name)
    }

    pub fn step(&self, id: &str) -> Option<&Step> {
        self.steps.iter().find(|s| s.id == id)
    }

    /// Check numbering, id uniqueness, grounding presence and that every
    /// placeholder is declared.
    pub fn validate(&self) -> Result<(), WorkflowError> {
        let declared: BTreeSet<&str> = self.variables.iter().map(|v| v.name.as_str()).collect();
        if declared.len() != self.variables.len() {
            return Err(WorkflowError::Parse {
                path: "variables".into(),
                reason: "duplicate variable name".into(),
            });
        }
        let mut ids = BTreeSet::new();
        for (i, s) in self.steps.iter().enumerate() {
            let invalid = |reason: &str| WorkflowError::InvalidStep {
                step: s.step_number,
                reason: reason.to_string(),
            };
            if s.step_number != i + 1 {
                return Err(invalid(&format!("expected step_number {}", i + 1)));
            }
            if !ids.insert(s.id.as_str()) {
                return Err(invalid("duplicate step id"));
            }
            if s.action_type.is_grounded() && s.step_subgraph.is_none() {
                return Err(invalid("grounded action without a step subgraph"));
            }
            for name in placeholders(&s.description) {
                if !declared.contains(name.as_str()) {
                    return Err(WorkflowError::UndeclaredVariable {
                        name,
                        step: s.step_number,
                    });
                }
            }
        }
        for s in &self.steps {
            if let Some(t) = &s.scroll_target {
                if !ids.contains(t.as_str()) {
                    return Err(WorkflowError::InvalidStep {
                        step: s.step_number,
                        reason: format!("scroll target {t} is not a step of this workflow"),
                    });
                }
            }
        }
        Ok(())
    }

    /// Keys in `values` that are not declared variables.
    pub fn unknown_keys<'a>(&self, values: &'a IndexMap<String, String>) -> Vec<&'a str> {
        values
            .keys()
            .filter(|k| self.variable(k).is_none())
            .map(String::as_str)
            .collect()
    }
}

/// Resolve every declared placeholder from `values`, falling back to the
/// variable's default. Unknown keys are ignored with a warning.
pub fn substitute_variables(
    template: &WorkflowTemplate,
    values: &IndexMap<String, String>,
) -> Result<Vec<Step>, WorkflowError> {
    for k in template.unknown_keys(values) {
        log::warn!("ignoring value for undeclared variable {k:?}");
    }
    let mut resolved: IndexMap<&str, &str> = IndexMap::new();
    for v in &template.variables {
        let value = values
            .get(&v.name)
            .map(String::as_str)
            .or(v.default_value.as_deref())
            .ok_or_else(|| WorkflowError::MissingVariable(v.name.clone()))?;
        resolved.insert(v.name.as_str(), value);
    }
    Ok(template
        .steps
        .iter()
        .map(|s| Step {
            description: substitute(&s.description, &resolved),
            ..s.clone()
        })
        .collect())
}
