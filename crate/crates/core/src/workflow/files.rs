use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{ActionType, BuilderMetadata, Step, Variable, WorkflowError, WorkflowTemplate};
use crate::ui_graph::StepSubgraph;

pub const FORMAT_VERSION: &str = "2.0";
const WORKFLOW_FILE: &str = "workflow.yaml";
const METADATA_FILE: &str = "metadata.json";

#[derive(Debug, Serialize, Deserialize)]
struct RunningConfig {
    #[serde(default)]
    variable_values: IndexMap<String, String>,
    #[serde(default)]
    injected_steps: Vec<serde_yaml::Value>,
}

#[derive(Debug, Serialize, Deserialize)]
struct YamlStep {
    step_number: usize,
    #[serde(rename = "Action")]
    action: String,
    id: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct WorkflowYaml {
    workflow_id: String,
    workflow_name: String,
    #[serde(default)]
    workflow_title: String,
    #[serde(default)]
    description: String,
    running_config: RunningConfig,
    #[serde(default)]
    category: String,
    steps: Vec<YamlStep>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BuilderConfig {
    #[serde(default)]
    ui_parser_config: serde_json::Value,
    knn_k: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct BuildInfo {
    scale_factor: f64,
    builder_config: BuilderConfig,
}

#[derive(Debug, Serialize, Deserialize)]
struct WorkflowMetadata {
    variables: Vec<Variable>,
    metadata: BuildInfo,
}

#[derive(Debug, Serialize, Deserialize)]
struct MetadataFile {
    format_version: String,
    workflow_id: String,
    config_file: String,
    data_file: String,
    step_count: usize,
    #[serde(default)]
    created_at: String,
    workflow_metadata: WorkflowMetadata,
}

#[derive(Debug, Serialize, Deserialize)]
struct StepData {
    step_id: String,
    step_number: usize,
    action_type: ActionType,
    description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    step_subgraph: Option<StepSubgraph>,
    #[serde(default)]
    variables: Vec<String>,
    #[serde(default)]
    values: IndexMap<String, serde_json::Value>,
    #[serde(default)]
    pause_duration: f64,
    #[serde(default)]
    active_app_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scroll_target: Option<String>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> WorkflowError + '_ {
    move |source| WorkflowError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(path: &Path, reason: impl ToString) -> WorkflowError {
    WorkflowError::Parse {
        path: path.display().to_string(),
        reason: reason.to_string(),
    }
}

fn write(path: &Path, text: &str) -> Result<(), WorkflowError> {
    fs::write(path, text).map_err(io_err(path))
}

fn to_json<T: Serialize>(v: &T, path: &Path) -> Result<String, WorkflowError> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| parse_err(path, e))?;
    s.push('\n');
    Ok(s)
}

/// Write the template trio into `dir`, creating it if needed.
pub fn save_workflow(t: &WorkflowTemplate, dir: &Path) -> Result<(), WorkflowError> {
    t.validate()?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;

    let yaml = WorkflowYaml {
        workflow_id: t.workflow_id.clone(),
        workflow_name: t.workflow_name.clone(),
        workflow_title: t.workflow_title.clone(),
        description: t.description.clone(),
        running_config: RunningConfig {
            variable_values: t
                .variables
                .iter()
                .filter_map(|v| v.default_value.clone().map(|d| (v.name.clone(), d)))
                .collect(),
            injected_steps: t.injected_steps.clone(),
        },
        category: t.category.clone(),
        steps: t
            .steps
            .iter()
            .map(|s| YamlStep {
                step_number: s.step_number,
                action: s.description.clone(),
                id: s.id.clone(),
            })
            .collect(),
    };
    let yaml_path = dir.join(WORKFLOW_FILE);
    let text = serde_yaml::to_string(&yaml).map_err(|e| parse_err(&yaml_path, e))?;
    write(&yaml_path, &text)?;

    let meta = MetadataFile {
        format_version: FORMAT_VERSION.to_string(),
        workflow_id: t.workflow_id.clone(),
        config_file: t.config_file.clone(),
        data_file: t.data_file.clone(),
        step_count: t.steps.len(),
        created_at: t.created_at.clone(),
        workflow_metadata: WorkflowMetadata {
            variables: t.variables.clone(),
            metadata: BuildInfo {
                scale_factor: t.builder.scale_factor,
                builder_config: BuilderConfig {
                    ui_parser_config: t.builder.ui_parser_config.clone(),
                    knn_k: t.builder.knn_k,
                },
            },
        },
    };
    let meta_path = dir.join(METADATA_FILE);
    write(&meta_path, &to_json(&meta, &meta_path)?)?;

    let data: IndexMap<&str, StepData> = t
        .steps
        .iter()
        .map(|s| {
            (
                s.id.as_str(),
                StepData {
                    step_id: s.id.clone(),
                    step_number: s.step_number,
                    action_type: s.action_type,
                    description: s.description.clone(),
                    step_subgraph: s.step_subgraph.clone(),
                    variables: s.variables.clone(),
                    values: s.values.clone(),
                    pause_duration: s.pause_duration,
                    active_app_name: s.active_app_name.clone(),
                    scroll_target: s.scroll_target.clone(),
                },
            )
        })
        .collect();
    let data_path = dir.join(&t.data_file);
    write(&data_path, &to_json(&data, &data_path)?)
}

fn read(path: &Path) -> Result<String, WorkflowError> {
    fs::read_to_string(path).map_err(io_err(path))
}

/// Read a template written by [`save_workflow`] (or by hand in the same format).
pub fn load_workflow(dir: &Path) -> Result<WorkflowTemplate, WorkflowError> {
    let yaml_path = dir.join(WORKFLOW_FILE);
    let yaml: WorkflowYaml = serde_yaml::from_str(&read(&yaml_path)?).map_err(|e| parse_err(&yaml_path, e))?;

    let meta_path = dir.join(METADATA_FILE);
    let meta: MetadataFile = serde_json::from_str(&read(&meta_path)?).map_err(|e| parse_err(&meta_path, e))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(WorkflowError::VersionMismatch {
            found: meta.format_version,
        });
    }
    if meta.workflow_id != yaml.workflow_id {
        return Err(parse_err(&meta_path, "workflow_id differs from workflow.yaml"));
    }
    if meta.step_count != yaml.steps.len() {
        return Err(WorkflowError::StepCountMismatch {
            declared: meta.step_count,
            found: yaml.steps.len(),
        });
    }

    let data_path = dir.join(&meta.data_file);
    let mut data: IndexMap<String, StepData> =
        serde_json::from_str(&read(&data_path)?).map_err(|e| parse_err(&data_path, e))?;
    if data.len() != meta.step_count {
        return Err(WorkflowError::StepCountMismatch {
            declared: meta.step_count,
            found: data.len(),
        });
    }

    let mut steps = Vec::with_capacity(yaml.steps.len());
    for ys in &yaml.steps {
        let invalid = |reason: String| WorkflowError::InvalidStep {
            step: ys.step_number,
            reason,
        };
        let d = data
            .swap_remove(&ys.id)
            .ok_or_else(|| invalid(format!("no entry for id {} in {}", ys.id, meta.data_file)))?;
        if d.step_id != ys.id || d.step_number != ys.step_number {
            return Err(invalid("step data does not match workflow.yaml".into()));
        }
        if d.description != ys.action {
            return Err(invalid(format!("action {:?} differs from step data {:?}", ys.action, d.description)));
        }
        steps.push(Step {
            step_number: ys.step_number,
            id: ys.id.clone(),
            action_type: d.action_type,
            description: d.description,
            step_subgraph: d.step_subgraph,
            variables: d.variables,
            values: d.values,
            pause_duration: d.pause_duration,
            active_app_name: d.active_app_name,
            scroll_target: d.scroll_target,
        });
    }

    let variables = meta
        .workflow_metadata
        .variables
        .into_iter()
        .map(|v| Variable {
            default_value: v
                .default_value
                .or_else(|| yaml.running_config.variable_values.get(&v.name).cloned()),
            ..v
        })
        .collect();
    let build = meta.workflow_metadata.metadata;
    let t = WorkflowTemplate {
        workflow_id: yaml.workflow_id,
        workflow_name: yaml.workflow_name,
        workflow_title: yaml.workflow_title,
        description: yaml.description,
        category: yaml.category,
        variables,
        steps,
        builder: BuilderMetadata {
            scale_factor: build.scale_factor,
            knn_k: build.builder_config.knn_k,
            ui_parser_config: build.builder_config.ui_parser_config,
        },
        injected_steps: yaml.running_config.injected_steps,
        created_at: meta.created_at,
        config_file: meta.config_file,
        data_file: meta.data_file,
    };
    t.validate()?;
    Ok(t)
}
