use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use indexmap::IndexMap;
use serde::Serialize;

use gpa::config::EngineConfig;
use gpa::grounding::ground;
use gpa::harness::{
    generate_case, generate_suite, read_json, read_subgraph, read_suite, run_bench, write_case, BenchConfig,
    Perturbation, Regime, SceneSpec,
};
use gpa::runner::{run_workflow, ScriptedEnv};
use gpa::ui_graph::GraphFile;
use gpa::workflow::{build_workflow, load_workflow, save_workflow, DemoTrace};

type CliResult = Result<(), Box<dyn std::error::Error>>;

#[derive(Parser)]
#[command(name = "gpa", version, about = "Ground, benchmark and replay demonstrated GUI workflows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct EngineArgs {
    /// Engine configuration (TOML); unset fields keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Softmax temperature of the direct-match gate.
    #[arg(long)]
    tau: Option<f64>,
    /// Minimum similarity for a direct match.
    #[arg(long = "s-min")]
    s_min: Option<f64>,
    /// Maximum normalized entropy for a direct match.
    #[arg(long = "h-thr")]
    h_thr: Option<f64>,
    /// Always run the SMC localizer.
    #[arg(long)]
    no_fast_path: bool,
}

impl EngineArgs {
    fn load(&self) -> Result<EngineConfig, Box<dyn std::error::Error>> {
        let mut cfg = match &self.config {
            Some(p) => EngineConfig::load(p)?,
            None => EngineConfig::default(),
        };
        if let Some(v) = self.tau {
            cfg.gate.tau = v;
        }
        if let Some(v) = self.s_min {
            cfg.gate.s_min = v;
        }
        if let Some(v) = self.h_thr {
            cfg.gate.h_thr = v;
        }
        if self.no_fast_path {
            cfg.fast_path = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic cases with ground truth.
    Gen {
        /// Scene spec (JSON); defaults apply when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Perturbation (JSON); identity when omitted.
        #[arg(long)]
        pert: Option<PathBuf>,
        /// Sample `count` cases from a named regime instead of a fixed perturbation.
        #[arg(long, value_parser = parse_regime)]
        regime: Option<Regime>,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ground one step subgraph on a runtime graph.
    Ground {
        #[arg(long)]
        demo: PathBuf,
        #[arg(long)]
        runtime: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Print the full result, including the sampler trace, as JSON.
        #[arg(long)]
        json: bool,
        #[command(flatten)]
        engine: EngineArgs,
    },
    /// Score every case of a suite directory.
    Bench {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fixed success radius in px instead of each case's acceptance radius.
        #[arg(long)]
        tolerance: Option<f64>,
        /// Write per-stage sampler lines (JSON per line) to this file.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[command(flatten)]
        engine: EngineArgs,
    },
    /// Compile a demo trace into a workflow directory.
    Build {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay a workflow against a scripted environment.
    Replay {
        #[arg(long)]
        workflow: PathBuf,
        /// Scenario file for the scripted environment.
        #[arg(long)]
        env: PathBuf,
        /// Variable values as name=value.
        #[arg(long = "values", value_parser = parse_kv, num_args = 1..)]
        values: Vec<(String, String)>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        no_precheck: bool,
        #[command(flatten)]
        engine: EngineArgs,
    },
}

fn parse_regime(s: &str) -> Result<Regime, String> {
    Regime::parse(s).ok_or_else(|| {
        let names: Vec<&str> = Regime::ALL.iter().map(|r| r.name()).collect();
        format!("unknown regime {s:?}; expected one of {}", names.join(", "))
    })
}

fn parse_kv(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .ok_or_else(|| format!("expected name=value, got {s:?}"))
}

fn write_pretty<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn gen(
    spec: Option<PathBuf>,
    pert: Option<PathBuf>,
    regime: Option<Regime>,
    count: usize,
    seed: u64,
    out: &Path,
) -> CliResult {
    let spec: SceneSpec = match spec {
        Some(p) => read_json(&p)?,
        None => SceneSpec::default(),
    };
    std::fs::create_dir_all(out)?;
    let cases = match regime {
        Some(r) => generate_suite(r, &spec, count, seed)?,
        None => {
            let pert: Perturbation = match pert {
                Some(p) => read_json(&p)?,
                None => Perturbation::default(),
            };
            let mut cases = Vec::with_capacity(count);
            for i in 0..count {
                let case_seed = if count == 1 { seed } else { gpa::rng::derive_seed(seed, &[i as u64]) };
                let mut c = generate_case(&spec, &pert, case_seed)?;
                c.name = format!("case-{i:04}");
                cases.push(c);
            }
            cases
        }
    };
    for c in &cases {
        write_case(c, out)?;
    }
    println!("wrote {} case(s) to {}", cases.len(), out.display());
    Ok(())
}

fn ground_cmd(demo: &Path, runtime: &Path, seed: u64, json: bool, cfg: &EngineConfig) -> CliResult {
    let sub = read_subgraph(demo)?;
    let screen: GraphFile = read_json(runtime)?;
    let graph = screen.to_graph()?;
    let g = ground(&sub, &graph, &screen.window(), cfg, seed)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&g)?);
    } else {
        let c = &g.result.confidence;
        println!(
            "point {:.1} {:.1} scale {:.3} {:.3} confidence {:.3} (likelihood {:.3} spatial {:.3}) {} {}",
            g.point().x,
            g.point().y,
            g.result.scale.0,
            g.result.scale.1,
            c.combined,
            c.likelihood,
            c.spatial,
            if g.result.fast_path { "direct" } else { "smc" },
            if g.readiness(cfg.c_min()).is_ready() { "ready" } else { "not-ready" },
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct TraceLine<'a> {
    case: &'a str,
    stage: usize,
    beta: f64,
    ess: f64,
    acceptance: f64,
    cluster_fraction: f64,
    confidence: f64,
}

fn bench_cmd(
    suite: &Path,
    out: &Path,
    seed: u64,
    tolerance: Option<f64>,
    trace: Option<PathBuf>,
    cfg: &EngineConfig,
) -> CliResult {
    let cases = read_suite(suite)?;
    let bench = BenchConfig {
        tolerance,
        keep_trace: trace.is_some(),
        ..BenchConfig::default()
    };
    let mut report = run_bench(&cases, cfg, &bench, seed)?;
    if let Some(path) = trace {
        let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
        for c in &report.cases {
            for t in &c.trace {
                let line = TraceLine {
                    case: &c.name,
                    stage: t.stage,
                    beta: t.beta,
                    ess: t.ess,
                    acceptance: t.acceptance,
                    cluster_fraction: t.cluster_fraction,
                    confidence: t.confidence,
                };
                writeln!(f, "{}", serde_json::to_string(&line)?)?;
            }
        }
        f.flush()?;
        report.cases.iter_mut().for_each(|c| c.trace.clear());
    }
    write_pretty(out, &report)?;
    println!(
        "{} cases: success {:.3}, fast path {:.3}, ready {:.3}, mean error {}",
        report.n_cases,
        report.success_rate,
        report.fast_path_rate,
        report.ready_rate,
        report.mean_error_px.map_or("n/a".to_string(), |e| format!("{e:.1} px")),
    );
    Ok(())
}

fn build_cmd(trace: &Path, out: &Path) -> CliResult {
    let demo: DemoTrace = read_json(trace)?;
    let t = build_workflow(&demo)?;
    save_workflow(&t, out)?;
    println!("built {} step(s) into {}", t.steps.len(), out.display());
    Ok(())
}

fn replay_cmd(
    workflow: &Path,
    env: &Path,
    values: Vec<(String, String)>,
    seed: u64,
    report: &Path,
    cfg: EngineConfig,
) -> CliResult {
    let t = load_workflow(workflow)?;
    let mut env = ScriptedEnv::from_file(env)?;
    let values: IndexMap<String, String> = values.into_iter().collect();
    let r = run_workflow(&t, &values, &mut env, &cfg, seed)?;
    write_pretty(report, &r)?;
    println!(
        "{}: {} of {} steps finished, precheck hits {}",
        if r.finished { "finished" } else { "aborted" },
        r.statuses().iter().filter(|s| **s == gpa::runner::StepStatus::Finished).count(),
        r.steps.len(),
        r.precheck_hits,
    );
    if let Some(why) = &r.aborted {
        println!("{why}");
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Gen {
            spec,
            pert,
            regime,
            count,
            seed,
            out,
        } => gen(spec, pert, regime, count, seed, &out),
        Command::Ground {
            demo,
            runtime,
            seed,
            json,
            engine,
        } => ground_cmd(&demo, &runtime, seed, json, &engine.load()?),
        Command::Bench {
            suite,
            out,
            seed,
            tolerance,
            trace,
            engine,
        } => bench_cmd(&suite, &out, seed, tolerance, trace, &engine.load()?),
        Command::Build { trace, out } => build_cmd(&trace, &out),
        Command::Replay {
            workflow,
            env,
            values,
            seed,
            report,
            no_precheck,
            engine,
        } => {
            let mut cfg = engine.load()?;
            if no_precheck {
                cfg.runner.precheck = false;
            }
            replay_cmd(&workflow, &env, values, seed, &report, cfg)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
