//! Per-episode agent state carried between decision points.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::geo::Compass;
use crate::graph::NodeId;

pub const DEFAULT_MEMORY_CAP_CHARS: usize = 4000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub step_index: u32,
    pub node: NodeId,
    pub option_id: String,
    pub compass: Compass,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriorDecision {
    pub step_index: u32,
    pub compass: Compass,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositionEstimate {
    pub text: String,
    pub evidence: String,
}

impl PositionEstimate {
    pub fn unknown() -> Self {
        Self { text: "unknown".into(), evidence: String::new() }
    }

    /// Splits `"<location> (evidence: <cue>)"`; the evidence part is optional.
    /// Returns `None` for an empty reply.
    pub fn parse(reply: &str) -> Option<Self> {
        let line = reply.lines().map(str::trim).find(|l| !l.is_empty())?;
        let (text, evidence) = match line.find("(evidence:") {
            Some(at) => {
                let rest = &line[at + "(evidence:".len()..];
                let ev = rest.rfind(')').map_or(rest, |end| &rest[..end]);
                (line[..at].trim(), ev.trim())
            }
            None => (line, ""),
        };
        if text.is_empty() {
            return None;
        }
        Some(Self { text: text.to_string(), evidence: evidence.to_string() })
    }
}

impl fmt::Display for PositionEstimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (evidence: {})", self.text, self.evidence)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMemory {
    pub markovian: String,
    pub decision_history: Vec<HistoryEntry>,
    pub visit_counts: BTreeMap<NodeId, u32>,
    pub prior_decisions_at: BTreeMap<NodeId, Vec<PriorDecision>>,
    pub last_position_estimate: Option<PositionEstimate>,
    cap_chars: usize,
}

impl Default for AgentMemory {
    fn default() -> Self {
        Self::new(DEFAULT_MEMORY_CAP_CHARS)
    }
}

impl AgentMemory {
    pub fn new(cap_chars: usize) -> Self {
        Self {
            markovian: String::new(),
            decision_history: Vec::new(),
            visit_counts: BTreeMap::new(),
            prior_decisions_at: BTreeMap::new(),
            last_position_estimate: None,
            cap_chars,
        }
    }

    pub fn cap_chars(&self) -> usize {
        self.cap_chars
    }

    /// Replaces the carried memory, dropping the oldest characters past the cap.
    pub fn set_markovian(&mut self, text: &str) {
        let n = text.chars().count();
        self.markovian =
            if n > self.cap_chars { text.chars().skip(n - self.cap_chars).collect() } else { text.to_string() };
    }

    /// Counts a decision point at `node`; returns the updated count.
    pub fn record_visit(&mut self, node: &NodeId) -> u32 {
        let c = self.visit_counts.entry(node.clone()).or_insert(0);
        *c += 1;
        *c
    }

    pub fn visits(&self, node: &NodeId) -> u32 {
        self.visit_counts.get(node).copied().unwrap_or(0)
    }

    pub fn record_decision(&mut self, step_index: u32, node: &NodeId, option_id: &str, compass: Compass) {
        self.decision_history.push(HistoryEntry {
            step_index,
            node: node.clone(),
            option_id: option_id.to_string(),
            compass,
        });
        self.prior_decisions_at.entry(node.clone()).or_default().push(PriorDecision { step_index, compass });
    }

    pub fn prior_decisions(&self, node: &NodeId) -> &[PriorDecision] {
        self.prior_decisions_at.get(node).map_or(&[], Vec::as_slice)
    }
}
