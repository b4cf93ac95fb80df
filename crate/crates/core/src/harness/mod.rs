//! Synthetic benchmark: scene generation, perturbation and scoring, plus the
//! on-disk layout used by the command line.
//!
//! A suite directory holds one sub-directory per case with `demo.json` (a
//! step subgraph file), `runtime.json` (a graph file whose `window_bounds`
//! is the live window) and `truth.json` (`{"truth": [x, y] | null}`).

mod bench;
mod scene;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bench::{run_bench, BenchConfig, BenchError, BenchReport, CalibrationBin, CaseResult};
pub use scene::{
    generate_case, generate_suite, pseudo_embedding, vector_at_cosine, Case, Layout, Perturbation, Regime, SceneSpec,
    SpecError,
};

use crate::geometry::Point;
use crate::ui_graph::{GraphError, GraphFile, StepSubgraph, SubgraphFile};

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {source}")]
    Graph { path: PathBuf, source: GraphError },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TruthFile {
    truth: Option<Point>,
    seed: u64,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), SuiteError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| SuiteError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|source| SuiteError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, SuiteError> {
    let text = fs::read_to_string(path).map_err(|source| SuiteError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| SuiteError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Write `case` under `dir/<case name>/`.
pub fn write_case(case: &Case, dir: &Path) -> Result<PathBuf, SuiteError> {
    let out = dir.join(&case.name);
    fs::create_dir_all(&out).map_err(|source| SuiteError::Io {
        path: out.clone(),
        source,
    })?;
    write_json(&out.join("demo.json"), &SubgraphFile::from(&case.demo))?;
    write_json(&out.join("runtime.json"), &GraphFile::from_graph(&case.runtime, Some(case.live_window)))?;
    write_json(
        &out.join("truth.json"),
        &TruthFile {
            truth: case.truth,
            seed: case.seed,
        },
    )?;
    Ok(out)
}

pub fn read_subgraph(path: &Path) -> Result<StepSubgraph, SuiteError> {
    let file: SubgraphFile = read_json(path)?;
    StepSubgraph::try_from(file).map_err(|source| SuiteError::Graph {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_case(dir: &Path) -> Result<Case, SuiteError> {
    let demo = read_subgraph(&dir.join("demo.json"))?;
    let runtime_path = dir.join("runtime.json");
    let screen: GraphFile = read_json(&runtime_path)?;
    let runtime = screen.to_graph().map_err(|source| SuiteError::Graph {
        path: runtime_path,
        source,
    })?;
    let truth: TruthFile = read_json(&dir.join("truth.json"))?;
    Ok(Case {
        name: dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        seed: truth.seed,
        demo,
        live_window: screen.window(),
        runtime,
        truth: truth.truth,
    })
}

/// Every case directory under `dir`, in name order.
pub fn read_suite(dir: &Path) -> Result<Vec<Case>, SuiteError> {
    let io = |source| SuiteError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("demo.json").is_file())
        .collect();
    dirs.sort();
    dirs.iter().map(|d| read_case(d)).collect()
}
