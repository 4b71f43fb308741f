//! Navigation policies: the LLM navigator, its memoryless ablation, and the
//! oracle and random baselines.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::clients::ClientError;
use crate::env::{landing, EnvConfig, EpisodeState, Observation};
use crate::graph::{NavGraph, NodeId};
use crate::sampler::NavTask;

pub mod llm;
pub mod memory;
pub mod parse;
pub mod prompt;

pub use llm::{agentnav_decide, self_position, AgentConfig, LlmPolicy, PromptMode};
pub use memory::{AgentMemory, PositionEstimate};
pub use parse::{parse_response, AgentResponse, ParseError};
pub use prompt::{
    build_base_prompt, build_self_position_prompt, build_vop_prompt, PromptBundle, PromptTemplates, VOP_SENTENCES,
};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("chat client unavailable: {0}")]
    ClientUnavailable(String),
    #[error("chat client error: {0}")]
    Client(ClientError),
    #[error("imagery error: {0}")]
    Imagery(ClientError),
    #[error("no option leads to the destination from {0}")]
    Stuck(NodeId),
    #[error("observation offers no options")]
    NoOptions,
    #[error("agent configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
}

/// Everything a policy may look at when choosing.
#[derive(Debug, Clone, Copy)]
pub struct DecisionContext<'a> {
    pub graph: &'a NavGraph,
    pub task: &'a NavTask,
    pub observation: &'a Observation,
    pub state: &'a EpisodeState,
    pub env: &'a EnvConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub option_id: String,
    pub analysis: Option<String>,
    pub memory_after: Option<String>,
    pub position_estimate: Option<String>,
    pub self_positioned: bool,
    pub visit_count: Option<u32>,
    /// Chat calls spent on the decision itself, retries included.
    pub attempts: u32,
    pub fallback: bool,
}

impl Decision {
    pub fn plain(option_id: String) -> Self {
        Self {
            option_id,
            analysis: None,
            memory_after: None,
            position_estimate: None,
            self_positioned: false,
            visit_count: None,
            attempts: 0,
            fallback: false,
        }
    }
}

pub trait Policy {
    fn name(&self) -> &str;

    /// Called once before the first decision of an episode.
    fn begin_episode(&mut self, _graph: &NavGraph, _task: &NavTask) {}

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<Decision, AgentError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolicyKind {
    AgentNav,
    Base,
    Oracle,
    Random,
}

impl PolicyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::AgentNav => "agentnav",
            PolicyKind::Base => "base",
            PolicyKind::Oracle => "oracle",
            PolicyKind::Random => "random",
        }
    }

    pub fn needs_chat(self) -> bool {
        matches!(self, PolicyKind::AgentNav | PolicyKind::Base)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = AgentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "agentnav" => Ok(PolicyKind::AgentNav),
            "base" => Ok(PolicyKind::Base),
            "oracle" => Ok(PolicyKind::Oracle),
            "random" => Ok(PolicyKind::Random),
            other => Err(AgentError::Config(format!("unknown policy {other:?}"))),
        }
    }
}

/// Per-episode RNG seed so parallel runs do not depend on scheduling.
pub fn episode_seed(base: u64, task_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(task_id.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

pub fn random_decide(obs: &Observation, rng: &mut ChaCha8Rng) -> Result<String, AgentError> {
    if obs.options.is_empty() {
        return Err(AgentError::NoOptions);
    }
    Ok(obs.options[rng.gen_range(0..obs.options.len())].option_id.clone())
}

const ORACLE_TIE_EPS_M: f64 = 1e-9;

/// Picks the option with the least total remaining walk: the corridor it
/// commits to plus the shortest distance from where that corridor stops.
/// Near-ties go to the lower option index.
pub fn oracle_choice(
    obs: &Observation,
    g: &NavGraph,
    destination: &[bool],
    remaining: &[f64],
) -> Result<String, AgentError> {
    let at = g.require(&obs.node)?;
    let mut best: Option<(f64, &str)> = None;
    for o in &obs.options {
        let to = g.require(&o.toward)?;
        let l = landing(g, at, to, destination);
        let rest = if l.reached_destination { 0.0 } else { remaining[l.end()] };
        let cost = l.length_m + rest;
        if !cost.is_finite() {
            continue;
        }
        if best.is_none_or(|(b, _)| cost < b - ORACLE_TIE_EPS_M) {
            best = Some((cost, &o.option_id));
        }
    }
    best.map(|(_, id)| id.to_string()).ok_or_else(|| AgentError::Stuck(obs.node.clone()))
}

pub fn oracle_decide(obs: &Observation, g: &NavGraph, task: &NavTask) -> Result<String, AgentError> {
    let mask = task.destination_mask(g);
    let remaining = g.distances_to(&mask);
    oracle_choice(obs, g, &mask, &remaining)
}

/// Shortest-path oracle. Caches the distance field for the current task.
#[derive(Debug, Default)]
pub struct OraclePolicy {
    cache: Option<(String, Vec<bool>, Vec<f64>)>,
}

impl OraclePolicy {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Policy for OraclePolicy {
    fn name(&self) -> &str {
        "oracle"
    }

    fn begin_episode(&mut self, graph: &NavGraph, task: &NavTask) {
        if self.cache.as_ref().is_some_and(|(id, ..)| *id == task.task_id) {
            return;
        }
        let mask = task.destination_mask(graph);
        let remaining = graph.distances_to(&mask);
        self.cache = Some((task.task_id.clone(), mask, remaining));
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<Decision, AgentError> {
        if self.cache.as_ref().is_none_or(|(id, ..)| *id != ctx.task.task_id) {
            self.begin_episode(ctx.graph, ctx.task);
        }
        let (_, mask, remaining) = self.cache.as_ref().expect("cache filled above");
        oracle_choice(ctx.observation, ctx.graph, mask, remaining).map(Decision::plain)
    }
}

/// Uniform choice among the offered options.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self { seed, rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl Policy for RandomPolicy {
    fn name(&self) -> &str {
        "random"
    }

    fn begin_episode(&mut self, _graph: &NavGraph, task: &NavTask) {
        self.rng = ChaCha8Rng::seed_from_u64(episode_seed(self.seed, &task.task_id));
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<Decision, AgentError> {
        random_decide(ctx.observation, &mut self.rng).map(Decision::plain)
    }
}
