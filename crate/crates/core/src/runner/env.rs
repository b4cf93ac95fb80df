use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point, Rect};
use crate::ui_graph::{GraphFile, UiGraph};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("environment failure at call {0}")]
    Failure(usize),
}

/// One captured screen state.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub ui: UiGraph,
    pub window_bounds: Rect,
    pub timestamp: f64,
    fingerprint: u64,
}

impl Observation {
    pub fn new(ui: UiGraph, window_bounds: Rect, timestamp: f64) -> Self {
        let mut h = DefaultHasher::new();
        for n in &ui.nodes {
            n.id.hash(&mut h);
            for v in [n.bbox.x, n.bbox.y, n.bbox.w, n.bbox.h] {
                v.to_bits().hash(&mut h);
            }
            n.kind.hash(&mut h);
            n.content.hash(&mut h);
            for v in n.icon_emb.iter().chain(n.text_emb.iter().flatten()) {
                v.to_bits().hash(&mut h);
            }
        }
        for v in [window_bounds.x, window_bounds.y, window_bounds.w, window_bounds.h] {
            v.to_bits().hash(&mut h);
        }
        Self {
            ui,
            window_bounds,
            timestamp,
            fingerprint: h.finish(),
        }
    }

    /// Content hash of the screen, independent of the timestamp.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Click,
    Type,
    Key,
    Hotkey,
    Scroll,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub kind: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<Point>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<String>,
}

pub trait Environment {
    fn observe(&mut self) -> Result<Observation, EnvError>;
    /// Perform `action` and return the settled post-action observation.
    fn step(&mut self, action: &Action) -> Result<Observation, EnvError>;
    /// Wait for the UI to settle.
    fn settle(&mut self, _seconds: f64) {}
}

/// Scenario file for [`ScriptedEnv`]:
///
/// ```json
/// {"screens": {"home": <graph file>, "compose": <graph file>},
///  "script": ["home", "home", "compose"],
///  "fail_on_call": null}
/// ```
///
/// The n-th call to `observe` or `step` (counted together, from 0) returns
/// the screen named at `script[n]`; the last entry repeats forever.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub screens: BTreeMap<String, GraphFile>,
    pub script: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fail_on_call: Option<usize>,
}

/// Deterministic environment that replays a scenario and records actions.
#[derive(Debug, Clone)]
pub struct ScriptedEnv {
    screens: BTreeMap<String, (UiGraph, Rect)>,
    script: Vec<String>,
    fail_on_call: Option<usize>,
    calls: usize,
    pub observe_calls: usize,
    pub actions: Vec<Action>,
    pub settled: f64,
}

impl ScriptedEnv {
    pub fn new(scenario: Scenario) -> Result<Self, EnvError> {
        if scenario.script.is_empty() {
            return Err(EnvError::Scenario("script is empty".into()));
        }
        let mut screens = BTreeMap::new();
        for (name, f) in &scenario.screens {
            let g = f
                .to_graph()
                .map_err(|e| EnvError::Scenario(format!("screen {name}: {e}")))?;
            screens.insert(name.clone(), (g, f.window()));
        }
        if let Some(missing) = scenario.script.iter().find(|s| !screens.contains_key(*s)) {
            return Err(EnvError::Scenario(format!("unknown screen {missing:?}")));
        }
        Ok(Self {
            screens,
            script: scenario.script,
            fail_on_call: scenario.fail_on_call,
            calls: 0,
            observe_calls: 0,
            actions: Vec::new(),
            settled: 0.0,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, EnvError> {
        let text = std::fs::read_to_string(path).map_err(|source| EnvError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let scenario: Scenario = serde_json::from_str(&text).map_err(|e| EnvError::Scenario(e.to_string()))?;
        Self::new(scenario)
    }

    /// Total calls to `observe` and `step` so far.
    pub fn calls(&self) -> usize {
        self.calls
    }

    fn next(&mut self) -> Result<Observation, EnvError> {
        let n = self.calls;
        self.calls += 1;
        if self.fail_on_call == Some(n) {
            return Err(EnvError::Failure(n));
        }
        let name = &self.script[n.min(self.script.len() - 1)];
        let (g, w) = &self.screens[name];
        Ok(Observation::new(g.clone(), *w, n as f64))
    }
}

impl Environment for ScriptedEnv {
    fn observe(&mut self) -> Result<Observation, EnvError> {
        self.observe_calls += 1;
        self.next()
    }

    fn step(&mut self, action: &Action) -> Result<Observation, EnvError> {
        self.actions.push(action.clone());
        self.next()
    }

    fn settle(&mut self, seconds: f64) {
        self.settled += seconds.max(0.0);
    }
}
