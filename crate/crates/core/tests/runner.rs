mod common;

use common::*;
use gpa::config::EngineConfig;
use gpa::runner::{run_step, run_workflow, Decision, FsmState, StepContext, StepStatus};
use indexmap::IndexMap;

fn cfg(budget: usize) -> EngineConfig {
    let mut c = EngineConfig::default();
    c.runner.retry_budget = budget;
    c
}

/// States must read `(Execute Decide(Retry))* Execute Decide(terminal)`.
fn well_formed(states: &[FsmState]) -> bool {
    let Some((last, body)) = states.split_last() else { return false };
    let terminal = matches!(last, FsmState::Decide(Decision::Finish | Decision::Fail | Decision::Skip));
    let pairs_ok = body.len() % 2 == 1
        && body.chunks(2).enumerate().all(|(i, c)| match c {
            [FsmState::Execute, FsmState::Decide(Decision::Retry | Decision::Scrolled)] => true,
            [FsmState::Execute] => i * 2 + 1 == body.len(),
            _ => false,
        });
    terminal && pairs_ok
}

#[test]
fn ready_on_first_look() {
    let c = cfg(5);
    let mut env = env_with(&["mail"]);
    let (out, _) = run_step(&compose_step(), &mut env, StepContext::new(&c, 1, 1)).unwrap();
    assert_eq!(out.status, StepStatus::Finished);
    assert_eq!(out.attempts, 1);
    assert_eq!(env.actions.len(), 1);
    assert!(well_formed(&out.states), "{:?}", out.states);
}

#[test]
fn target_revealed_on_third_observation() {
    let c = cfg(5);
    let mut env = env_with(&["desktop", "desktop", "mail"]);
    let (out, _) = run_step(&compose_step(), &mut env, StepContext::new(&c, 1, 1)).unwrap();
    assert_eq!(out.status, StepStatus::Finished);
    assert_eq!(out.attempts, 3);
    assert_eq!(env.observe_calls, 3);
    assert_eq!(env.actions.len(), 1);
    // two retries waited for the configured delay, plus the step's own pause
    assert!((env.settled - (compose_step().pause_duration + 2.0 * c.runner.retry_delay)).abs() < 1e-12);
    assert!(well_formed(&out.states), "{:?}", out.states);
}

#[test]
fn budget_exhaustion_fails_without_acting() {
    let c = cfg(4);
    let mut env = env_with(&["desktop"]);
    let (out, _) = run_step(&compose_step(), &mut env, StepContext::new(&c, 1, 1)).unwrap();
    assert_eq!(out.status, StepStatus::Failed);
    assert_eq!(out.attempts, 4);
    assert!(env.actions.is_empty());
    assert_eq!(out.states.last(), Some(&FsmState::Decide(Decision::Fail)));
    assert!(well_formed(&out.states), "{:?}", out.states);
}

#[test]
fn scroll_skipped_when_target_visible() {
    let c = cfg(5);
    let target = compose_step();
    let mut env = env_with(&["mail"]);
    let mut ctx = StepContext::new(&c, 1, 0);
    ctx.scroll_target = target.step_subgraph.as_ref();
    let (out, _) = run_step(&scroll_step(), &mut env, ctx).unwrap();
    assert_eq!(out.status, StepStatus::SkippedScroll);
    assert!(env.actions.is_empty());
    assert_eq!(out.attempts, 1);
    assert!(well_formed(&out.states), "{:?}", out.states);
}

#[test]
fn scroll_until_target_appears() {
    let c = cfg(5);
    let target = compose_step();
    // the scroll on the desktop reveals the mail window
    let mut env = env_with(&["desktop", "mail"]);
    let mut ctx = StepContext::new(&c, 1, 0);
    ctx.scroll_target = target.step_subgraph.as_ref();
    let scroll = scroll_step();
    let (out, _) = run_step(&scroll, &mut env, ctx).unwrap();
    assert_eq!(out.status, StepStatus::Finished);
    assert_eq!(out.attempts, 2);
    assert_eq!(env.actions.len(), 1);
    assert_eq!(env.actions[0].kind, gpa::runner::ActionKind::Scroll);
    // the post-scroll screen is used directly, never re-observed
    assert_eq!(env.observe_calls, 1);
    assert!(well_formed(&out.states), "{:?}", out.states);
}

#[test]
fn non_grounded_steps_send_payload() {
    let c = cfg(5);
    let t = draft_email();
    let mut values = IndexMap::new();
    values.insert("subject".to_string(), "Quarterly report".to_string());
    let steps = gpa::workflow::substitute_variables(&t, &values).unwrap();
    let mut env = env_with(&["compose"]);
    let (out, _) = run_step(&steps[5], &mut env, StepContext::new(&c, 1, 5)).unwrap();
    assert_eq!(out.status, StepStatus::Finished);
    assert_eq!(env.actions[0].payload.as_deref(), Some("Quarterly report"));
    assert_eq!(out.parse_count, 0);
}

#[test]
fn environment_failure_is_an_error() {
    let c = cfg(5);
    let mut s = scenario("scenario.json");
    s.fail_on_call = Some(0);
    let mut env = gpa::runner::ScriptedEnv::new(s).unwrap();
    assert!(run_step(&compose_step(), &mut env, StepContext::new(&c, 1, 1)).is_err());
}

#[test]
fn full_replay_of_draft_email() {
    let t = draft_email();
    let mut env = gpa::runner::ScriptedEnv::new(scenario("scenario.json")).unwrap();
    let report = run_workflow(&t, &IndexMap::new(), &mut env, &EngineConfig::default(), 3).unwrap();
    assert!(report.finished, "{:?}", report.aborted);
    assert!(report.statuses().iter().all(|s| *s == StepStatus::Finished));
    assert_eq!(env.actions.len(), 10);
    assert_eq!(env.actions[2].payload.as_deref(), Some("email address"));
    assert_eq!(env.observe_calls, 1);
}

#[test]
fn failed_step_aborts_the_rest() {
    let t = draft_email();
    let mut c = EngineConfig::default();
    c.runner.retry_budget = 2;
    // the mail window never opens
    let mut env = env_with(&["desktop"]);
    let report = run_workflow(&t, &IndexMap::new(), &mut env, &c, 3).unwrap();
    assert!(!report.finished);
    let s = report.statuses();
    assert_eq!(s[0], StepStatus::Finished);
    assert_eq!(s[1], StepStatus::Failed);
    assert!(s[2..].iter().all(|x| *x == StepStatus::NotExecuted));
    assert!(env.actions.len() == 1);
}
