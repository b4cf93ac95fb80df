#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use gpa::runner::{Scenario, ScriptedEnv};
use gpa::ui_graph::GraphFile;
use gpa::workflow::{load_workflow, ActionType, Step, WorkflowTemplate};

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/draft_email")
}

pub fn draft_email() -> WorkflowTemplate {
    load_workflow(&fixture_dir()).expect("draft_email fixture loads")
}

pub fn scenario(file: &str) -> Scenario {
    let text = std::fs::read_to_string(fixture_dir().join(file)).unwrap();
    serde_json::from_str(&text).unwrap()
}

/// Environment replaying the named fixture screens in `script` order.
pub fn env_with(script: &[&str]) -> ScriptedEnv {
    let full = scenario("scenario.json");
    let screens: BTreeMap<String, GraphFile> = full.screens;
    ScriptedEnv::new(Scenario {
        screens,
        script: script.iter().map(|s| s.to_string()).collect(),
        fail_on_call: None,
    })
    .unwrap()
}

/// "Click on Compose button" from the fixture.
pub fn compose_step() -> Step {
    draft_email().steps[1].clone()
}

/// A scroll-to-find step whose downstream target is the Compose button; the
/// scroll itself is aimed at the Dock's Mail icon.
pub fn scroll_step() -> Step {
    let mail_icon = draft_email().steps[0].clone();
    Step {
        step_number: 1,
        id: "scroll".into(),
        action_type: ActionType::ScrollToFind,
        description: "Scroll: down".into(),
        scroll_target: Some(compose_step().id),
        ..mail_icon
    }
}
