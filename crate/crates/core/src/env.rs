//! Decision-point navigation environment.
//!
//! The agent is observed only at decision points. Between them it is carried
//! along corridors (nodes with exactly one onward link) without observations.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clients::{ImageRef, ViewParams};
use crate::geo::{compass_label, Compass};
use crate::graph::{GraphError, NavGraph, NodeId};
use crate::sampler::{NavTask, SamplerError};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
    #[error("origin {0} already lies inside the destination")]
    DegenerateTask(NodeId),
    #[error("invalid task: {0}")]
    InvalidTask(#[from] SamplerError),
    #[error("invalid action {choice:?}; valid options are {valid:?}")]
    InvalidAction { choice: String, valid: Vec<String> },
    #[error("episode already finished with status {0:?}")]
    EpisodeOver(EpisodeStatus),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub max_decision_points: u32,
    pub max_steps: u32,
    pub self_position_period: u32,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self { max_decision_points: 150, max_steps: 2000, self_position_period: 3 }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        for (name, v) in [
            ("max_decision_points", self.max_decision_points),
            ("max_steps", self.max_steps),
            ("self_position_period", self.self_position_period),
        ] {
            if v < 1 {
                return Err(EnvError::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeStatus {
    Running,
    Success,
    BudgetExhausted,
    Stuck,
}

impl EpisodeStatus {
    pub fn is_terminal(self) -> bool {
        self != EpisodeStatus::Running
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeState {
    pub current: NodeId,
    pub arrived_from: Option<NodeId>,
    pub decision_points_used: u32,
    pub node_transitions_used: u32,
    pub traveled_m: f64,
    pub status: EpisodeStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationOption {
    pub option_id: String,
    pub toward: NodeId,
    pub heading: f64,
    pub compass: Compass,
    pub image: ImageRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub step_index: u32,
    pub node: NodeId,
    pub options: Vec<ObservationOption>,
}

impl Observation {
    pub fn option_ids(&self) -> Vec<String> {
        self.options.iter().map(|o| o.option_id.clone()).collect()
    }

    pub fn option(&self, id: &str) -> Option<&ObservationOption> {
        self.options.iter().find(|o| o.option_id == id)
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.options.iter().position(|o| o.option_id == id)
    }
}

pub fn option_id(step_index: u32, j: usize) -> String {
    format!("step{step_index}_option{j}")
}

/// One option per incident link (the way back included), ordered by heading
/// and then by neighbor id.
pub fn decision_point_options(
    g: &NavGraph,
    at: &NodeId,
    step_index: u32,
    view: &ViewParams,
) -> Result<Observation, GraphError> {
    let v = g.require(at)?;
    let mut opts: Vec<(f64, usize)> = Vec::with_capacity(g.degree(v));
    for l in g.links(v) {
        opts.push((g.link_heading_ix(v, l.to), l.to));
    }
    opts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let here = g.point(v);
    let options = opts
        .into_iter()
        .enumerate()
        .map(|(j, (heading, to))| ObservationOption {
            option_id: option_id(step_index, j),
            toward: g.id(to).clone(),
            heading,
            compass: compass_label(heading),
            image: ImageRef::new(at.clone(), here, heading, view),
        })
        .collect();
    Ok(Observation { step_index, node: at.clone(), options })
}

/// The single onward neighbor when `cur` is a corridor node for an arrival
/// from `prev`.
pub fn corridor_successor(g: &NavGraph, cur: usize, prev: Option<usize>) -> Option<usize> {
    let prev = prev?;
    let mut onward = g.links(cur).iter().filter(|l| l.to != prev);
    match (onward.next(), onward.next()) {
        (Some(l), None) => Some(l.to),
        _ => None,
    }
}

/// Where a move from `from` to `toward` ends after corridor following.
#[derive(Debug, Clone, PartialEq)]
pub struct Landing {
    /// Nodes entered, `toward` first.
    pub path: Vec<usize>,
    pub length_m: f64,
    pub reached_destination: bool,
}

impl Landing {
    pub fn end(&self) -> usize {
        *self.path.last().expect("landing path is never empty")
    }
}

/// Follows the corridor starting with the link `from -> toward`, ignoring
/// budgets. Stops at a decision point, a destination node, or when a closed
/// loop of corridor nodes is detected.
pub fn landing(g: &NavGraph, from: usize, toward: usize, destination: &[bool]) -> Landing {
    let mut path = vec![toward];
    let mut length_m = g.link_length(from, toward).unwrap_or(0.0);
    let (mut prev, mut cur) = (from, toward);
    let limit = g.node_count() + 1;
    while !destination[cur] && path.len() <= limit {
        let Some(next) = corridor_successor(g, cur, Some(prev)) else { break };
        length_m += g.link_length(cur, next).unwrap_or(0.0);
        prev = cur;
        cur = next;
        path.push(cur);
    }
    Landing { reached_destination: destination[cur], path, length_m }
}

/// Result of one `step` call.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// Nodes entered during this step, in order.
    pub path: Vec<NodeId>,
    pub observation: Option<Observation>,
}

/// One episode of one task. Owns its state; borrows the shared graph.
#[derive(Debug, Clone)]
pub struct Environment<'g> {
    graph: &'g NavGraph,
    cfg: EnvConfig,
    view: ViewParams,
    destination: Vec<bool>,
    cur: usize,
    prev: Option<usize>,
    state: EpisodeState,
    observation: Option<Observation>,
    start_path: Vec<NodeId>,
}

impl<'g> Environment<'g> {
    /// Places the agent at the task origin. An origin with a single link is
    /// carried to the first decision point before anything is observed.
    pub fn reset(graph: &'g NavGraph, task: &NavTask, cfg: EnvConfig, view: ViewParams) -> Result<Self, EnvError> {
        cfg.validate()?;
        if task.destination_nodes.contains(&task.origin) {
            return Err(EnvError::DegenerateTask(task.origin.clone()));
        }
        task.validate(graph)?;
        let destination = task.destination_mask(graph);
        let cur = graph.require(&task.origin)?;
        let mut env = Self {
            graph,
            cfg,
            view,
            destination,
            cur,
            prev: None,
            state: EpisodeState {
                current: task.origin.clone(),
                arrived_from: None,
                decision_points_used: 0,
                node_transitions_used: 0,
                traveled_m: 0.0,
                status: EpisodeStatus::Running,
            },
            observation: None,
            start_path: Vec::new(),
        };
        let mut path = Vec::new();
        if graph.degree(cur) == 1 {
            let only = graph.links(cur)[0].to;
            env.traverse(only, &mut path);
            env.advance(&mut path);
        }
        env.start_path = path;
        env.settle()?;
        Ok(env)
    }

    pub fn graph(&self) -> &'g NavGraph {
        self.graph
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn state(&self) -> &EpisodeState {
        &self.state
    }

    pub fn observation(&self) -> Option<&Observation> {
        self.observation.as_ref()
    }

    pub fn destination_mask(&self) -> &[bool] {
        &self.destination
    }

    /// Nodes entered while reset carried the agent off a corridor origin.
    pub fn start_path(&self) -> &[NodeId] {
        &self.start_path
    }

    pub fn is_done(&self) -> bool {
        self.state.status.is_terminal()
    }

    /// Takes the option `choice` of the current observation. Invalid ids
    /// leave the episode untouched.
    pub fn step(&mut self, choice: &str) -> Result<StepOutcome, EnvError> {
        if self.is_done() {
            return Err(EnvError::EpisodeOver(self.state.status));
        }
        let obs = self.observation.as_ref().expect("running episode has an observation");
        let toward = match obs.option(choice) {
            Some(o) => self.graph.require(&o.toward)?,
            None => {
                return Err(EnvError::InvalidAction { choice: choice.to_string(), valid: obs.option_ids() });
            }
        };
        self.state.decision_points_used += 1;
        self.observation = None;
        let mut path = Vec::new();
        self.traverse(toward, &mut path);
        self.advance(&mut path);
        self.settle()?;
        Ok(StepOutcome { path, observation: self.observation.clone() })
    }

    fn traverse(&mut self, next: usize, path: &mut Vec<NodeId>) {
        let len = self.graph.link_length(self.cur, next).expect("traversal follows a link");
        self.prev = Some(self.cur);
        self.cur = next;
        self.state.node_transitions_used += 1;
        self.state.traveled_m += len;
        self.state.arrived_from = Some(self.graph.id(self.cur_prev()).clone());
        self.state.current = self.graph.id(next).clone();
        path.push(self.state.current.clone());
        if self.destination[next] {
            self.state.status = EpisodeStatus::Success;
        }
    }

    fn cur_prev(&self) -> usize {
        self.prev.expect("set by traverse")
    }

    fn advance(&mut self, path: &mut Vec<NodeId>) {
        while !self.is_done() {
            let Some(next) = corridor_successor(self.graph, self.cur, self.prev) else { break };
            if self.state.node_transitions_used >= self.cfg.max_steps {
                self.state.status = EpisodeStatus::BudgetExhausted;
                break;
            }
            self.traverse(next, path);
        }
    }

    /// Applies budget and dead-end checks at a stop, then observes.
    fn settle(&mut self) -> Result<(), EnvError> {
        if self.is_done() {
            return Ok(());
        }
        if self.state.decision_points_used >= self.cfg.max_decision_points
            || self.state.node_transitions_used >= self.cfg.max_steps
        {
            self.state.status = EpisodeStatus::BudgetExhausted;
            return Ok(());
        }
        if self.graph.degree(self.cur) == 0 {
            self.state.status = EpisodeStatus::Stuck;
            return Ok(());
        }
        self.observation =
            Some(decision_point_options(self.graph, &self.state.current, self.state.decision_points_used, &self.view)?);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{GeoPoint, GeoPolygon};
    use crate::graph::GraphBuilder;
    use crate::synth::{grid, grid_node_id, GridSpec};
    use std::collections::BTreeSet;

    fn task(origin: &str, dest: &[&str], g: &NavGraph) -> NavTask {
        let dest: BTreeSet<NodeId> = dest.iter().map(|d| NodeId::from(*d)).collect();
        let p = g.point_of(dest.iter().next().unwrap()).unwrap();
        NavTask {
            city: "test".into(),
            destination_name: "Goal".into(),
            destination_nodes: dest,
            destination_polygon: GeoPolygon::square_around(p, 5.0).unwrap(),
            origin: NodeId::from(origin),
            task_id: "t".into(),
        }
    }

    /// Junction j with a 5-node corridor heading east to z and a 2-node spur
    /// ending at a corridor origin.
    fn corridor_fixture() -> NavGraph {
        let o = GeoPoint::new(40.0, -74.0).unwrap();
        let mut b = GraphBuilder::new();
        b.node("j", o);
        b.node("n", o.offset_m(0.0, 80.0));
        b.node("s", o.offset_m(0.0, -80.0));
        b.node("w1", o.offset_m(-50.0, 0.0));
        b.node("w2", o.offset_m(-100.0, 0.0));
        for k in 1..=5 {
            b.node(format!("e{k}").as_str(), o.offset_m(40.0 * k as f64, 0.0));
        }
        b.edge("j", "n");
        b.edge("j", "s");
        b.edge("j", "w1");
        b.edge("w1", "w2");
        b.edge("j", "e1");
        for k in 1..5 {
            b.edge(format!("e{k}").as_str(), format!("e{}", k + 1).as_str());
        }
        b.build().unwrap()
    }

    #[test]
    fn four_way_origin_has_four_options() {
        let g = grid(&GridSpec::new(5, 5, 100.0)).unwrap();
        let t = task(&grid_node_id(2, 2), &[&grid_node_id(4, 4)], &g);
        let env = Environment::reset(&g, &t, EnvConfig::default(), ViewParams::default()).unwrap();
        let obs = env.observation().unwrap();
        assert_eq!(obs.option_ids(), (0..4).map(|j| format!("step0_option{j}")).collect::<Vec<_>>());
        let headings: Vec<f64> = obs.options.iter().map(|o| o.heading).collect();
        assert!(headings.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(env.state().node_transitions_used, 0);
    }

    #[test]
    fn corridor_origin_advances() {
        let g = corridor_fixture();
        let t = task("w2", &["e5"], &g);
        let env = Environment::reset(&g, &t, EnvConfig::default(), ViewParams::default()).unwrap();
        assert_eq!(env.state().current, NodeId::from("j"));
        assert_eq!(env.state().node_transitions_used, 2);
        assert_eq!(env.start_path(), &[NodeId::from("w1"), NodeId::from("j")]);
        assert_eq!(env.observation().unwrap().step_index, 0);
        assert_eq!(env.observation().unwrap().options.len(), 4);
    }

    #[test]
    fn corridor_to_destination_succeeds() {
        let g = corridor_fixture();
        let t = task("j", &["e5"], &g);
        let mut env = Environment::reset(&g, &t, EnvConfig::default(), ViewParams::default()).unwrap();
        let east =
            env.observation().unwrap().options.iter().find(|o| o.toward.as_str() == "e1").unwrap().option_id.clone();
        let out = env.step(&east).unwrap();
        assert!(out.observation.is_none());
        assert_eq!(env.state().status, EpisodeStatus::Success);
        assert_eq!(out.path.len(), 5);
        let expected: f64 = ["j", "e1", "e2", "e3", "e4", "e5"]
            .windows(2)
            .map(|w| g.link_length(g.index_of(&w[0].into()).unwrap(), g.index_of(&w[1].into()).unwrap()).unwrap())
            .sum();
        assert!((env.state().traveled_m - expected).abs() < 1e-9);
        assert!(matches!(env.step(&east), Err(EnvError::EpisodeOver(EpisodeStatus::Success))));
    }

    #[test]
    fn pass_through_destination_counts() {
        let g = corridor_fixture();
        let t = task("j", &["e2"], &g);
        let mut env = Environment::reset(&g, &t, EnvConfig::default(), ViewParams::default()).unwrap();
        let east =
            env.observation().unwrap().options.iter().find(|o| o.toward.as_str() == "e1").unwrap().option_id.clone();
        env.step(&east).unwrap();
        assert_eq!(env.state().status, EpisodeStatus::Success);
        assert_eq!(env.state().current, NodeId::from("e2"));
    }

    #[test]
    fn invalid_action_leaves_state() {
        let g = corridor_fixture();
        let t = task("j", &["e5"], &g);
        let mut env = Environment::reset(&g, &t, EnvConfig::default(), ViewParams::default()).unwrap();
        let before = env.state().clone();
        assert!(matches!(env.step("step0_option9"), Err(EnvError::InvalidAction { .. })));
        assert_eq!(env.state(), &before);
        assert!(env.observation().is_some());
    }

    #[test]
    fn degenerate_task() {
        let g = corridor_fixture();
        let t = task("j", &["j"], &g);
        assert!(matches!(
            Environment::reset(&g, &t, EnvConfig::default(), ViewParams::default()),
            Err(EnvError::DegenerateTask(_))
        ));
    }

    #[test]
    fn decision_budget_exhausts() {
        let g = grid(&GridSpec::new(3, 3, 100.0)).unwrap();
        let t = task(&grid_node_id(0, 0), &[&grid_node_id(2, 2)], &g);
        let cfg = EnvConfig { max_decision_points: 4, ..EnvConfig::default() };
        let mut env = Environment::reset(&g, &t, cfg, ViewParams::default()).unwrap();
        let mut observations = 1;
        // bounce between r0c0 and its west-most neighbor
        while let Some(obs) = env.observation().cloned() {
            let back = obs.options.iter().find(|o| o.toward.as_str() == "r0c0" || o.toward.as_str() == "r0c1").unwrap();
            if env.step(&back.option_id).unwrap().observation.is_some() {
                observations += 1;
            }
        }
        assert_eq!(env.state().status, EpisodeStatus::BudgetExhausted);
        assert_eq!(env.state().decision_points_used, 4);
        assert_eq!(observations, 4);
    }

    #[test]
    fn step_budget_cuts_corridor() {
        let g = corridor_fixture();
        let t = task("j", &["e5"], &g);
        let cfg = EnvConfig { max_steps: 3, ..EnvConfig::default() };
        let mut env = Environment::reset(&g, &t, cfg, ViewParams::default()).unwrap();
        let east =
            env.observation().unwrap().options.iter().find(|o| o.toward.as_str() == "e1").unwrap().option_id.clone();
        env.step(&east).unwrap();
        assert_eq!(env.state().status, EpisodeStatus::BudgetExhausted);
        assert_eq!(env.state().node_transitions_used, 3);
        assert_eq!(env.state().current, NodeId::from("e3"));
    }

    #[test]
    fn t_junction_headings() {
        let o = GeoPoint::new(40.0, -74.0).unwrap();
        let mut b = GraphBuilder::new();
        b.node("c", o);
        b.node("east", o.offset_m(60.0, 0.0));
        b.node("south", o.offset_m(0.0, -60.0));
        b.node("west", o.offset_m(-60.0, 0.0));
        for x in ["east", "south", "west"] {
            b.edge("c", x);
        }
        let g = b.build().unwrap();
        let obs = decision_point_options(&g, &"c".into(), 0, &ViewParams::default()).unwrap();
        let h: Vec<f64> = obs.options.iter().map(|o| o.heading).collect();
        for (got, want) in h.iter().zip([90.0, 180.0, 270.0]) {
            assert!((got - want).abs() < 1.0, "{h:?}");
        }
        let labels: Vec<Compass> = obs.options.iter().map(|o| o.compass).collect();
        assert_eq!(labels, vec![Compass::East, Compass::South, Compass::West]);
    }

    #[test]
    fn dead_end_offers_way_back() {
        let g = corridor_fixture();
        let obs = decision_point_options(&g, &"e5".into(), 7, &ViewParams::default()).unwrap();
        assert_eq!(obs.option_ids(), vec!["step7_option0"]);
        assert_eq!(obs.options[0].toward, NodeId::from("e4"));
    }

    #[test]
    fn landing_follows_corridor() {
        let g = corridor_fixture();
        let mask = vec![false; g.node_count()];
        let j = g.index_of(&"j".into()).unwrap();
        let e1 = g.index_of(&"e1".into()).unwrap();
        let l = landing(&g, j, e1, &mask);
        assert_eq!(g.id(l.end()).as_str(), "e5");
        assert_eq!(l.path.len(), 5);
        assert!(!l.reached_destination);
    }
}
