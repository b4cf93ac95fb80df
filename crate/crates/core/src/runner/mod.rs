//! Workflow execution: a bounded-retry Execute/Decide loop per step, with
//! optional speculative grounding of the next steps.

mod env;
mod precheck;

use std::sync::Arc;
use std::time::{Duration, Instant};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::EngineConfig;
use crate::confidence::ConfidenceBreakdown;
use crate::geometry::Point;
use crate::grounding::{ground, Grounding};
use crate::rng::derive_seed;
use crate::smc::SmcError;
use crate::ui_graph::StepSubgraph;
use crate::workflow::{substitute_variables, ActionType, Step, WorkflowError, WorkflowTemplate};

pub use env::{Action, ActionKind, EnvError, Environment, Observation, Scenario, ScriptedEnv};
pub use precheck::{CachedResult, Handler, PrecheckPipeline};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunnerConfig {
    /// Execute/Decide cycles allowed per step.
    pub retry_budget: usize,
    /// Seconds to wait before re-observing after a retry.
    pub retry_delay: f64,
    pub precheck: bool,
    /// How many steps ahead to ground speculatively (1 or 2).
    pub precheck_depth: usize,
    /// Confidence a cached result needs to be reused; defaults to the readiness threshold.
    pub reuse_threshold: Option<f64>,
    /// Longest wait for outstanding speculative work, in milliseconds.
    pub precheck_wait_ms: u64,
}

impl Default for RunnerConfig {
    fn default() -> Self {
        Self {
            retry_budget: 5,
            retry_delay: 0.5,
            precheck: true,
            precheck_depth: 1,
            reuse_threshold: None,
            precheck_wait_ms: 5000,
        }
    }
}

#[derive(Debug, Error)]
pub enum StepError {
    #[error("step {step_id}, attempt {attempt}: {source}")]
    Env {
        step_id: String,
        attempt: usize,
        source: EnvError,
    },
    #[error("step {step_id}, attempt {attempt}: {source}")]
    Grounding {
        step_id: String,
        attempt: usize,
        source: SmcError,
    },
    #[error("step {step_id}: {reason}")]
    Invalid { step_id: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Finished,
    Failed,
    SkippedScroll,
    NotExecuted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Finish,
    /// Scroll-to-find: the scroll was performed, look again.
    Scrolled,
    Skip,
    Retry,
    Fail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FsmState {
    Execute,
    Decide(Decision),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub status: StepStatus,
    pub attempts: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<ConfidenceBreakdown>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<Point>,
    pub fast_path: bool,
    /// Actions sent to the environment.
    pub actions: usize,
    /// Groundings computed in the foreground.
    pub parse_count: usize,
    pub precheck_hit: bool,
    pub states: Vec<FsmState>,
    pub wall_ms: f64,
}

impl StepOutcome {
    fn new(status: StepStatus) -> Self {
        Self {
            status,
            attempts: 0,
            confidence: None,
            point: None,
            fast_path: false,
            actions: 0,
            parse_count: 0,
            precheck_hit: false,
            states: Vec::new(),
            wall_ms: 0.0,
        }
    }
}

fn action_for(step: &Step, point: Option<Point>) -> Action {
    let payload = step.payload().map(str::to_string);
    let kind = match step.action_type {
        ActionType::Click => ActionKind::Click,
        ActionType::TypeText => ActionKind::Type,
        ActionType::PressKey => ActionKind::Key,
        ActionType::Hotkey => ActionKind::Hotkey,
        ActionType::Scroll | ActionType::ScrollToFind => ActionKind::Scroll,
    };
    Action { kind, point, payload }
}

/// Readiness threshold for a step: a numeric `c_min` in its values overrides the default.
pub fn step_c_min(step: &Step, cfg: &EngineConfig) -> f64 {
    step.values
        .get("c_min")
        .and_then(serde_json::Value::as_f64)
        .unwrap_or(cfg.c_min())
}

/// Seed for grounding `step_index` on attempt `attempt` (`role` separates the
/// two groundings of a scroll-to-find cycle).
pub fn grounding_seed(seed: u64, step_index: usize, attempt: usize, role: u64) -> u64 {
    derive_seed(seed, &[step_index as u64, attempt as u64, role])
}

/// Everything `run_step` needs beyond the step itself.
pub struct StepContext<'a> {
    pub cfg: &'a EngineConfig,
    pub seed: u64,
    pub index: usize,
    /// Downstream step for scroll-to-find.
    pub scroll_target: Option<&'a StepSubgraph>,
    /// Observation to use for the first attempt instead of calling `observe`.
    pub first_observation: Option<Observation>,
    pub precheck: Option<&'a mut PrecheckPipeline>,
    /// Consult the pipeline's cache on the first attempt.
    pub lookup: bool,
    /// Step indices handed to the pipeline just before this step's action is sent.
    pub speculate: Vec<usize>,
}

impl<'a> StepContext<'a> {
    pub fn new(cfg: &'a EngineConfig, seed: u64, index: usize) -> Self {
        Self {
            cfg,
            seed,
            index,
            scroll_target: None,
            first_observation: None,
            precheck: None,
            lookup: false,
            speculate: Vec::new(),
        }
    }

    fn speculate_on(&mut self, obs: &Observation) {
        if let Some(p) = self.precheck.as_deref_mut() {
            let shared = Arc::new(obs.clone());
            for &j in &self.speculate {
                p.submit(j, Arc::clone(&shared));
            }
        }
    }
}

/// Run one resolved step. Returns the outcome and the latest observation.
pub fn run_step<E: Environment + ?Sized>(
    step: &Step,
    env: &mut E,
    mut ctx: StepContext<'_>,
) -> Result<(StepOutcome, Option<Observation>), StepError> {
    let started = Instant::now();
    let cfg = ctx.cfg;
    let budget = cfg.runner.retry_budget.max(1);
    let c_min = step_c_min(step, cfg);
    let reuse = cfg.runner.reuse_threshold.unwrap_or(c_min);
    let mut out = StepOutcome::new(StepStatus::Failed);
    let env_err = |attempt: usize| {
        let step_id = step.id.clone();
        move |source| StepError::Env {
            step_id,
            attempt,
            source,
        }
    };
    let ground_err = |attempt: usize| {
        let step_id = step.id.clone();
        move |source| StepError::Grounding {
            step_id,
            attempt,
            source,
        }
    };

    env.settle(step.pause_duration);
    let mut obs = ctx.first_observation.take();
    for attempt in 1..=budget {
        out.attempts = attempt;
        if obs.is_none() {
            if attempt > 1 {
                env.settle(cfg.runner.retry_delay);
            }
            obs = Some(env.observe().map_err(env_err(attempt))?);
        }
        let current = obs.as_ref().expect("observation present");
        out.states.push(FsmState::Execute);

        if !step.action_type.is_grounded() {
            out.states.push(FsmState::Decide(Decision::Finish));
            ctx.speculate_on(current);
            let next = env.step(&action_for(step, None)).map_err(env_err(attempt))?;
            out.actions += 1;
            out.status = StepStatus::Finished;
            out.wall_ms = started.elapsed().as_secs_f64() * 1e3;
            return Ok((out, Some(next)));
        }
        let sub = step.step_subgraph.as_ref().ok_or_else(|| StepError::Invalid {
            step_id: step.id.clone(),
            reason: "grounded action without a step subgraph".into(),
        })?;

        if step.action_type == ActionType::ScrollToFind {
            let target = ctx.scroll_target.ok_or_else(|| StepError::Invalid {
                step_id: step.id.clone(),
                reason: "scroll-to-find step has no downstream target".into(),
            })?;
            let seed = grounding_seed(ctx.seed, ctx.index, attempt, 1);
            let found = ground(target, &current.ui, &current.window_bounds, cfg, seed).map_err(ground_err(attempt))?;
            out.parse_count += 1;
            if found.readiness(c_min).is_ready() {
                out.states.push(FsmState::Decide(if out.actions == 0 { Decision::Skip } else { Decision::Finish }));
                out.status = if out.actions == 0 {
                    StepStatus::SkippedScroll
                } else {
                    StepStatus::Finished
                };
                out.confidence = Some(found.result.confidence.clone());
                out.point = Some(found.point());
                out.fast_path = found.result.fast_path;
                out.wall_ms = started.elapsed().as_secs_f64() * 1e3;
                return Ok((out, obs));
            }
            let seed = grounding_seed(ctx.seed, ctx.index, attempt, 2);
            let scroll = ground(sub, &current.ui, &current.window_bounds, cfg, seed).map_err(ground_err(attempt))?;
            out.parse_count += 1;
            out.confidence = Some(scroll.result.confidence.clone());
            if scroll.readiness(c_min).is_ready() && attempt < budget {
                out.states.push(FsmState::Decide(Decision::Scrolled));
                let next = env
                    .step(&action_for(step, Some(scroll.point())))
                    .map_err(env_err(attempt))?;
                out.actions += 1;
                obs = Some(next);
                continue;
            }
        } else {
            let mut grounding: Option<Grounding> = None;
            if attempt == 1 && ctx.lookup {
                if let Some(p) = ctx.precheck.as_deref_mut() {
                    p.collect_wait(Duration::from_millis(cfg.runner.precheck_wait_ms));
                    grounding = p.try_get(ctx.index, current.fingerprint(), reuse);
                    out.precheck_hit = grounding.is_some();
                }
            }
            let g = match grounding {
                Some(g) => g,
                None => {
                    out.parse_count += 1;
                    let seed = grounding_seed(ctx.seed, ctx.index, attempt, 0);
                    ground(sub, &current.ui, &current.window_bounds, cfg, seed).map_err(ground_err(attempt))?
                }
            };
            out.confidence = Some(g.result.confidence.clone());
            out.point = Some(g.point());
            out.fast_path = g.result.fast_path;
            if g.readiness(c_min).is_ready() {
                out.states.push(FsmState::Decide(Decision::Finish));
                ctx.speculate_on(current);
                let next = env
                    .step(&action_for(step, Some(g.point())))
                    .map_err(env_err(attempt))?;
                out.actions += 1;
                out.status = StepStatus::Finished;
                out.wall_ms = started.elapsed().as_secs_f64() * 1e3;
                return Ok((out, Some(next)));
            }
        }

        if attempt < budget {
            out.states.push(FsmState::Decide(Decision::Retry));
            obs = None;
        } else {
            out.states.push(FsmState::Decide(Decision::Fail));
        }
    }
    out.status = StepStatus::Failed;
    out.wall_ms = started.elapsed().as_secs_f64() * 1e3;
    Ok((out, obs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step_number: usize,
    pub id: String,
    pub action_type: ActionType,
    pub description: String,
    pub outcome: StepOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub workflow_id: String,
    pub seed: u64,
    pub precheck: bool,
    pub steps: Vec<StepRecord>,
    pub finished: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
    pub precheck_hits: usize,
    pub precheck_misses: usize,
    pub parse_count: usize,
    pub wall_ms: f64,
}

impl RunReport {
    /// Points grounded for each executed step, in order.
    pub fn grounded_points(&self) -> Vec<(usize, Option<Point>)> {
        self.steps
            .iter()
            .filter(|s| s.outcome.status != StepStatus::NotExecuted)
            .map(|s| (s.step_number, s.outcome.point))
            .collect()
    }

    pub fn statuses(&self) -> Vec<StepStatus> {
        self.steps.iter().map(|s| s.outcome.status).collect()
    }
}

fn speculative_steps(steps: &[Step], from: usize, depth: usize) -> impl Iterator<Item = usize> + '_ {
    (from..steps.len().min(from + depth)).filter(|&i| {
        matches!(steps[i].action_type, ActionType::Click | ActionType::Scroll)
    })
}

/// Execute the template step by step. The first failing step aborts the run
/// and every later step is reported as not executed.
pub fn run_workflow<E: Environment + ?Sized>(
    template: &WorkflowTemplate,
    values: &IndexMap<String, String>,
    env: &mut E,
    cfg: &EngineConfig,
    seed: u64,
) -> Result<RunReport, WorkflowError> {
    let started = Instant::now();
    let steps = Arc::new(substitute_variables(template, values)?);
    let mut pipeline = cfg.runner.precheck.then(|| {
        let steps = Arc::clone(&steps);
        let cfg = cfg.clone();
        let handler: Arc<Handler> = Arc::new(move |idx: usize, obs: &Observation| {
            let sub = steps[idx]
                .step_subgraph
                .as_ref()
                .ok_or_else(|| "step has no subgraph".to_string())?;
            ground(sub, &obs.ui, &obs.window_bounds, &cfg, grounding_seed(seed, idx, 1, 0)).map_err(|e| e.to_string())
        });
        PrecheckPipeline::start(handler)
    });

    let mut report = RunReport {
        workflow_id: template.workflow_id.clone(),
        seed,
        precheck: pipeline.is_some(),
        steps: Vec::with_capacity(steps.len()),
        finished: false,
        aborted: None,
        precheck_hits: 0,
        precheck_misses: 0,
        parse_count: 0,
        wall_ms: 0.0,
    };
    let mut obs: Option<Observation> = None;
    for (i, step) in steps.iter().enumerate() {
        let record = |outcome| StepRecord {
            step_number: step.step_number,
            id: step.id.clone(),
            action_type: step.action_type,
            description: step.description.clone(),
            outcome,
        };
        if report.aborted.is_some() {
            report.steps.push(record(StepOutcome::new(StepStatus::NotExecuted)));
            continue;
        }
        let scroll_target = step
            .scroll_target
            .as_deref()
            .and_then(|id| steps.iter().find(|s| s.id == id))
            .and_then(|s| s.step_subgraph.as_ref());
        let lookup = pipeline.is_some() && speculative_steps(&steps, i, 1).next().is_some();
        let speculate = if pipeline.is_some() {
            speculative_steps(&steps, i + 1, cfg.runner.precheck_depth.clamp(1, 2)).collect()
        } else {
            Vec::new()
        };
        let ctx = StepContext {
            cfg,
            seed,
            index: i,
            scroll_target,
            first_observation: obs.take(),
            precheck: pipeline.as_mut(),
            lookup,
            speculate,
        };
        match run_step(step, env, ctx) {
            Ok((outcome, next)) => {
                if lookup {
                    if outcome.precheck_hit {
                        report.precheck_hits += 1;
                    } else {
                        report.precheck_misses += 1;
                    }
                }
                report.parse_count += outcome.parse_count;
                let status = outcome.status;
                report.steps.push(record(outcome));
                if status == StepStatus::Failed {
                    report.aborted = Some(format!("step {} failed after exhausting its retries", step.step_number));
                    continue;
                }
                obs = next;
            }
            Err(e) => {
                report.steps.push(record(StepOutcome::new(StepStatus::Failed)));
                report.aborted = Some(e.to_string());
            }
        }
    }
    report.finished = report.aborted.is_none();
    report.wall_ms = started.elapsed().as_secs_f64() * 1e3;
    Ok(report)
}
