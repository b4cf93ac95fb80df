mod common;

use common::*;
use gpa::workflow::{load_workflow, save_workflow, substitute_variables, ActionType, WorkflowError};
use indexmap::IndexMap;

#[test]
fn fixture_shape() {
    let t = draft_email();
    assert_eq!(t.workflow_name, "draft_email");
    assert_eq!(t.steps.len(), 10);
    assert_eq!(t.variables.len(), 3);
    assert_eq!(t.builder.scale_factor, 2.0);
    assert_eq!(t.builder.knn_k, 8);
    let kinds: Vec<ActionType> = t.steps.iter().map(|s| s.action_type).collect();
    use ActionType::*;
    assert_eq!(
        kinds,
        vec![Click, Click, TypeText, PressKey, PressKey, TypeText, PressKey, TypeText, Hotkey, Click]
    );
    assert_eq!(t.steps[0].step_subgraph.as_ref().unwrap().offsets, (-9.0, -2.59));
}

#[test]
fn values_override_defaults() {
    let t = draft_email();
    let mut v = IndexMap::new();
    v.insert("recipient_email".to_string(), "ana@example.com".to_string());
    let steps = substitute_variables(&t, &v).unwrap();
    assert_eq!(steps[2].description, "Type text: ana@example.com");
    assert_eq!(steps[5].description, "Type text: email subject");
    assert_eq!(steps[7].description, "Type text: email content");
    // the template itself is untouched
    assert_eq!(t.steps[2].description, "Type text: {{recipient_email}}");
}

#[test]
fn missing_default_is_reported() {
    let mut t = draft_email();
    t.variables[1].default_value = None;
    assert!(matches!(
        substitute_variables(&t, &IndexMap::new()),
        Err(WorkflowError::MissingVariable(name)) if name == "subject"
    ));
}

#[test]
fn save_load_save_is_byte_stable() {
    let t = draft_email();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    save_workflow(&t, a.path()).unwrap();
    let back = load_workflow(a.path()).unwrap();
    assert_eq!(back, t);
    save_workflow(&back, b.path()).unwrap();
    for f in ["workflow.yaml", "metadata.json", "steps_data.json"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}
