//! Per-episode JSONL traces.
//!
//! A trace is one `start` record, one `decision` record per step, and one
//! `final` record. Traces are sufficient to replay an episode exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clients::ViewParams;
use crate::env::{EnvConfig, EpisodeStatus, Observation};
use crate::geo::Compass;
use crate::graph::NodeId;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("malformed trace: {0}")]
    Structure(String),
    #[error("trace io error at {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartRecord {
    pub task_id: String,
    pub city: String,
    pub policy: String,
    pub origin: NodeId,
    pub env: EnvConfig,
    pub view: ViewParams,
    /// Nodes entered before the first observation.
    pub path: Vec<NodeId>,
    pub node_transitions_used: u32,
    pub traveled_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceOption {
    pub option_id: String,
    pub toward: NodeId,
    pub heading: f64,
    pub compass: Compass,
}

impl TraceOption {
    pub fn from_observation(obs: &Observation) -> Vec<Self> {
        obs.options
            .iter()
            .map(|o| Self {
                option_id: o.option_id.clone(),
                toward: o.toward.clone(),
                heading: o.heading,
                compass: o.compass,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub step_index: u32,
    pub node: NodeId,
    pub options: Vec<TraceOption>,
    pub chosen: String,
    pub analysis: Option<String>,
    pub memory_after: Option<String>,
    pub position_estimate: Option<String>,
    /// A localization call was made at this step.
    pub self_positioned: bool,
    /// Times this node has served as a decision point, this one included.
    pub visit_count: Option<u32>,
    pub attempts: u32,
    pub fallback: bool,
    /// Nodes entered by this step, ending at the next stop.
    pub path: Vec<NodeId>,
    pub decision_points_used: u32,
    pub node_transitions_used: u32,
    pub traveled_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalRecord {
    pub status: EpisodeStatus,
    pub decision_points_used: u32,
    pub node_transitions_used: u32,
    pub traveled_m: f64,
    pub fallback_decisions: u32,
    /// Reason the run stopped early because of infrastructure failure.
    pub aborted: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum TraceRecord {
    Start(StartRecord),
    Decision(DecisionRecord),
    Final(FinalRecord),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub start: StartRecord,
    pub decisions: Vec<DecisionRecord>,
    pub final_record: FinalRecord,
}

impl EpisodeTrace {
    pub fn is_aborted(&self) -> bool {
        self.final_record.aborted.is_some()
    }

    /// Origin followed by every node entered, in order.
    pub fn node_sequence(&self) -> Vec<NodeId> {
        let mut seq = vec![self.start.origin.clone()];
        seq.extend(self.start.path.iter().cloned());
        for d in &self.decisions {
            seq.extend(d.path.iter().cloned());
        }
        seq
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut push = |r: TraceRecord| {
            out.push_str(&serde_json::to_string(&r).expect("trace records serialize"));
            out.push('\n');
        };
        push(TraceRecord::Start(self.start.clone()));
        for d in &self.decisions {
            push(TraceRecord::Decision(d.clone()));
        }
        push(TraceRecord::Final(self.final_record.clone()));
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, TraceError> {
        let mut start = None;
        let mut decisions = Vec::new();
        let mut final_record = None;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: TraceRecord =
                serde_json::from_str(line).map_err(|e| TraceError::Parse { line: i + 1, message: e.to_string() })?;
            if final_record.is_some() {
                return Err(TraceError::Structure(format!("record after final record on line {}", i + 1)));
            }
            match rec {
                TraceRecord::Start(s) if start.is_none() => start = Some(s),
                TraceRecord::Start(_) => return Err(TraceError::Structure("duplicate start record".into())),
                TraceRecord::Decision(_) if start.is_none() => {
                    return Err(TraceError::Structure("decision before start record".into()))
                }
                TraceRecord::Decision(d) => decisions.push(d),
                TraceRecord::Final(f) => final_record = Some(f),
            }
        }
        Ok(Self {
            start: start.ok_or_else(|| TraceError::Structure("missing start record".into()))?,
            decisions,
            final_record: final_record.ok_or_else(|| TraceError::Structure("missing final record".into()))?,
        })
    }

    pub fn write_to(&self, path: &Path) -> Result<(), TraceError> {
        std::fs::write(path, self.to_jsonl())
            .map_err(|source| TraceError::Io { path: path.display().to_string(), source })
    }

    pub fn read_from(path: &Path) -> Result<Self, TraceError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| TraceError::Io { path: path.display().to_string(), source })?;
        Self::from_jsonl(&text)
    }
}
