//! Origin/destination task generation.
//!
//! Starting points are found by a crawler that walks away from a seed node
//! (the destination) until it reaches a target straight-line distance. It
//! first follows the corridor the seed sits on, then runs a depth-first
//! search over junctions. At each junction the next street is drawn from a
//! softmax over how well it points away from the seed, with a temperature
//! that cools as the crawler gets further out and a geometric penalty on
//! already-visited nodes.

use std::collections::{BTreeSet, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geo::{angular_difference, haversine_distance, initial_bearing, point_in_polygon, GeoError, GeoPolygon};
use crate::graph::{GraphError, NavGraph, NodeId};

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("invalid sampler config: {0}")]
    InvalidConfig(String),
    #[error("candidate list is empty")]
    NoCandidates,
    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),
    #[error("search exhausted before reaching {d_target_m} m from {seed} (max reached {max_reached_m:.1} m)")]
    TargetUnreachable { seed: NodeId, d_target_m: f64, max_reached_m: f64 },
    #[error("no graph node inside the destination polygon")]
    EmptyDestination,
    #[error("start node {0} lies inside the destination polygon")]
    DegenerateTask(NodeId),
    #[error("task {task_id}: {message}")]
    InvalidTask { task_id: String, message: String },
    #[error("task file line {line}: {message}")]
    TaskFile { line: usize, message: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Geo(#[from] GeoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub d_target_m: f64,
    pub t_max: f64,
    pub t_min: f64,
    pub gamma: f64,
    pub d_min_final: usize,
    pub max_extra_steps: usize,
    pub rng_seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            d_target_m: 2000.0,
            t_max: 10.0,
            t_min: 0.5,
            gamma: 0.5,
            d_min_final: 3,
            max_extra_steps: 10,
            rng_seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        let bad = |m: &str| Err(SamplerError::InvalidConfig(m.to_string()));
        if !(self.d_target_m > 0.0) {
            return bad("d_target_m must be positive");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.t_min > 0.0 && self.t_min <= self.t_max) {
            return bad("temperatures must satisfy 0 < t_min <= t_max");
        }
        if self.d_min_final < 1 {
            return bad("d_min_final must be at least 1");
        }
        Ok(())
    }
}

/// One outgoing street considered by the crawler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    /// Deviation from the desired heading, degrees.
    pub theta_deg: f64,
    /// Visit count of the node the street leads to.
    pub visits: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateDistribution {
    pub probabilities: Vec<f64>,
    /// Set when every weight underflowed and the uniform distribution was used instead.
    pub uniform_fallback: bool,
}

/// Unnormalized weights `exp(cos(theta) / T) * gamma^visits`.
pub fn candidate_weights(candidates: &[Candidate], temperature: f64, gamma: f64) -> Vec<f64> {
    candidates
        .iter()
        .map(|c| (c.theta_deg.to_radians().cos() / temperature).exp() * gamma.powi(c.visits as i32))
        .collect()
}

pub fn candidate_distribution(
    candidates: &[Candidate],
    temperature: f64,
    gamma: f64,
) -> Result<CandidateDistribution, SamplerError> {
    if candidates.is_empty() {
        return Err(SamplerError::NoCandidates);
    }
    if !(temperature > 0.0) {
        return Err(SamplerError::InvalidTemperature(temperature));
    }
    let weights = candidate_weights(candidates, temperature, gamma);
    let total: f64 = weights.iter().sum();
    if total > 0.0 && total.is_finite() {
        return Ok(CandidateDistribution {
            probabilities: weights.iter().map(|w| w / total).collect(),
            uniform_fallback: false,
        });
    }
    if total == 0.0 {
        let p = 1.0 / candidates.len() as f64;
        return Ok(CandidateDistribution { probabilities: vec![p; candidates.len()], uniform_fallback: true });
    }
    // Overflow at very low temperature: normalize in log space instead.
    let logs: Vec<f64> = candidates
        .iter()
        .map(|c| c.theta_deg.to_radians().cos() / temperature + c.visits as f64 * gamma.ln())
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(CandidateDistribution { probabilities: exps.iter().map(|e| e / sum).collect(), uniform_fallback: false })
}

/// Linear cooling from `t_max` at the seed to `t_min` at `d_target_m` and beyond.
pub fn anneal_temperature(d_from_seed_m: f64, cfg: &SamplerConfig) -> f64 {
    let frac = (1.0 - d_from_seed_m.max(0.0) / cfg.d_target_m).max(0.0);
    cfg.t_min + (cfg.t_max - cfg.t_min) * frac
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WalkStepKind {
    Seed,
    /// Deterministic corridor following before the first junction.
    Corridor,
    /// Move chosen by the depth-first search.
    Explore,
    /// Jump back to a junction popped off the stack; not adjacent to the previous step.
    Backtrack,
    /// Move made after the target distance was reached, looking for a well-connected end node.
    Extra,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkStep {
    pub node: NodeId,
    pub kind: WalkStepKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrawlResult {
    pub seed: NodeId,
    pub start: NodeId,
    pub radial_m: f64,
    pub walk: Vec<WalkStep>,
    pub uniform_fallbacks: usize,
}

struct Frame {
    node: usize,
    prev: Option<usize>,
}

struct Crawler<'g> {
    g: &'g NavGraph,
    cfg: SamplerConfig,
    seed: usize,
    rng: ChaCha8Rng,
    random_heading: f64,
    visits: Vec<u32>,
    tried: HashSet<(usize, usize)>,
    stack: Vec<Frame>,
    cur: usize,
    prev: Option<usize>,
    walk: Vec<WalkStep>,
    uniform_fallbacks: usize,
    max_reached_m: f64,
}

impl<'g> Crawler<'g> {
    fn radial(&self, v: usize) -> f64 {
        haversine_distance(self.g.point(self.seed), self.g.point(v))
    }

    fn arrive(&mut self, next: usize, kind: WalkStepKind) {
        self.tried.insert((self.cur, next));
        self.prev = Some(self.cur);
        self.cur = next;
        self.visits[next] += 1;
        self.max_reached_m = self.max_reached_m.max(self.radial(next));
        self.walk.push(WalkStep { node: self.g.id(next).clone(), kind });
    }

    fn untried(&self, v: usize, prev: Option<usize>) -> Vec<usize> {
        self.g.links(v).iter().map(|l| l.to).filter(|&w| Some(w) != prev && !self.tried.contains(&(v, w))).collect()
    }

    fn follow_corridor(&mut self) {
        let mut seen = HashSet::from([self.cur]);
        loop {
            if self.radial(self.cur) >= self.cfg.d_target_m {
                return;
            }
            let degree = self.g.degree(self.cur);
            let next = match self.prev {
                // At the seed there is no arrival edge: a node with at most two streets is
                // a corridor, followed toward its lexicographically smaller neighbor.
                None if (1..=2).contains(&degree) => self.g.links(self.cur)[0].to,
                Some(p) => {
                    let onward: Vec<usize> = self.g.links(self.cur).iter().map(|l| l.to).filter(|&w| w != p).collect();
                    if onward.len() != 1 {
                        return;
                    }
                    onward[0]
                }
                None => return,
            };
            if !seen.insert(next) {
                return;
            }
            self.arrive(next, WalkStepKind::Corridor);
        }
    }

    /// One depth-first move or backtrack. Returns false once the junction stack is exhausted.
    fn advance(&mut self, kind: WalkStepKind) -> bool {
        let candidates = self.untried(self.cur, self.prev);
        if candidates.is_empty() {
            while let Some(frame) = self.stack.pop() {
                if !self.untried(frame.node, frame.prev).is_empty() {
                    self.cur = frame.node;
                    self.prev = frame.prev;
                    self.visits[frame.node] += 1;
                    self.walk.push(WalkStep { node: self.g.id(frame.node).clone(), kind: WalkStepKind::Backtrack });
                    return true;
                }
            }
            return false;
        }
        let next = if candidates.len() == 1 {
            candidates[0]
        } else {
            self.stack.push(Frame { node: self.cur, prev: self.prev });
            self.sample(&candidates)
        };
        self.arrive(next, kind);
        true
    }

    fn sample(&mut self, candidates: &[usize]) -> usize {
        let here = self.g.point(self.cur);
        let desired = if self.cur == self.seed {
            self.random_heading
        } else {
            initial_bearing(self.g.point(self.seed), here).unwrap_or(self.random_heading)
        };
        let scored: Vec<Candidate> = candidates
            .iter()
            .map(|&w| Candidate {
                theta_deg: angular_difference(self.g.link_heading_ix(self.cur, w), desired),
                visits: self.visits[w],
            })
            .collect();
        let temperature = anneal_temperature(self.radial(self.cur), &self.cfg);
        let dist = candidate_distribution(&scored, temperature, self.cfg.gamma)
            .expect("non-empty candidates and positive temperature");
        if dist.uniform_fallback {
            self.uniform_fallbacks += 1;
        }
        let mut u: f64 = self.rng.gen();
        for (i, p) in dist.probabilities.iter().enumerate() {
            if u < *p {
                return candidates[i];
            }
            u -= p;
        }
        *candidates.last().expect("non-empty candidates")
    }

    fn finish(&mut self) -> usize {
        let mut best = self.cur;
        let mut extra = 0;
        while self.g.degree(best) < self.cfg.d_min_final && extra < self.cfg.max_extra_steps {
            if !self.advance(WalkStepKind::Extra) {
                break;
            }
            if self.walk.last().map(|s| s.kind) == Some(WalkStepKind::Extra) {
                extra += 1;
            }
            let v = self.cur;
            if self.radial(v) >= self.cfg.d_target_m && self.g.degree(v) > self.g.degree(best) {
                best = v;
            }
        }
        best
    }
}

/// Finds a start node at least `cfg.d_target_m` (straight line) from `seed`.
pub fn crawl_start_point(g: &NavGraph, seed: &NodeId, cfg: &SamplerConfig) -> Result<CrawlResult, SamplerError> {
    cfg.validate()?;
    let seed_ix = g.require(seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let random_heading = rng.gen_range(0.0..360.0);
    let mut c = Crawler {
        g,
        cfg: *cfg,
        seed: seed_ix,
        rng,
        random_heading,
        visits: vec![0; g.node_count()],
        tried: HashSet::new(),
        stack: Vec::new(),
        cur: seed_ix,
        prev: None,
        walk: vec![WalkStep { node: seed.clone(), kind: WalkStepKind::Seed }],
        uniform_fallbacks: 0,
        max_reached_m: 0.0,
    };
    c.visits[seed_ix] = 1;
    c.follow_corridor();
    while c.radial(c.cur) < cfg.d_target_m {
        if !c.advance(WalkStepKind::Explore) {
            return Err(SamplerError::TargetUnreachable {
                seed: seed.clone(),
                d_target_m: cfg.d_target_m,
                max_reached_m: c.max_reached_m,
            });
        }
    }
    let start = c.finish();
    Ok(CrawlResult {
        seed: seed.clone(),
        start: g.id(start).clone(),
        radial_m: c.radial(start),
        walk: c.walk,
        uniform_fallbacks: c.uniform_fallbacks,
    })
}

/// One evaluation instance. Fields are declared in sorted order so serialization is canonical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NavTask {
    pub city: String,
    pub destination_name: String,
    pub destination_nodes: BTreeSet<NodeId>,
    pub destination_polygon: GeoPolygon,
    pub origin: NodeId,
    pub task_id: String,
}

impl NavTask {
    /// Checks the task invariants against a graph.
    pub fn validate(&self, g: &NavGraph) -> Result<(), SamplerError> {
        let err = |m: String| SamplerError::InvalidTask { task_id: self.task_id.clone(), message: m };
        if !g.contains(&self.origin) {
            return Err(err(format!("origin {} not in graph", self.origin)));
        }
        if self.destination_nodes.is_empty() {
            return Err(err("no destination nodes".into()));
        }
        if let Some(missing) = self.destination_nodes.iter().find(|n| !g.contains(n)) {
            return Err(err(format!("destination node {missing} not in graph")));
        }
        if self.destination_nodes.contains(&self.origin) {
            return Err(SamplerError::DegenerateTask(self.origin.clone()));
        }
        Ok(())
    }

    /// Dense membership mask of the destination nodes present in `g`.
    pub fn destination_mask(&self, g: &NavGraph) -> Vec<bool> {
        let mut mask = vec![false; g.node_count()];
        for id in &self.destination_nodes {
            if let Some(i) = g.index_of(id) {
                mask[i] = true;
            }
        }
        mask
    }
}

pub fn task_id_for(city: &str, start: &NodeId, name: &str) -> String {
    let mut h = Sha256::new();
    for part in [city, start.as_str(), name] {
        h.update(part.as_bytes());
        h.update([0x1f]);
    }
    let digest = h.finalize();
    let hex: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
    format!("{}-{hex}", slug(city))
}

fn slug(s: &str) -> String {
    let out: String = s.chars().map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' }).collect();
    let trimmed = out.trim_matches('-');
    if trimmed.is_empty() {
        "city".to_string()
    } else {
        trimmed.to_string()
    }
}

/// Resolves a destination polygon against the graph and assembles a task.
pub fn build_task(
    g: &NavGraph,
    start: &NodeId,
    name: &str,
    polygon: GeoPolygon,
    city: &str,
) -> Result<NavTask, SamplerError> {
    g.require(start)?;
    let mut destination_nodes = BTreeSet::new();
    for (i, id) in g.ids().iter().enumerate() {
        if point_in_polygon(g.point(i), &polygon)? {
            destination_nodes.insert(id.clone());
        }
    }
    if destination_nodes.is_empty() {
        return Err(SamplerError::EmptyDestination);
    }
    if destination_nodes.contains(start) {
        return Err(SamplerError::DegenerateTask(start.clone()));
    }
    Ok(NavTask {
        task_id: task_id_for(city, start, name),
        city: city.to_string(),
        origin: start.clone(),
        destination_name: name.to_string(),
        destination_polygon: polygon,
        destination_nodes,
    })
}

/// Serializes tasks as JSON lines with sorted keys.
pub fn write_tasks(tasks: &[NavTask]) -> String {
    let mut out = String::new();
    for t in tasks {
        let value = serde_json::to_value(t).expect("task serializes");
        out.push_str(&value.to_string());
        out.push('\n');
    }
    out
}

pub fn read_tasks(text: &str) -> Result<Vec<NavTask>, SamplerError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| SamplerError::TaskFile { line: i + 1, message: e.to_string() })
        })
        .collect()
}

/// Generates tasks whose destinations are small squares around random seed nodes.
///
/// Seeds that cannot reach `cfg.d_target_m` are skipped; up to `10 * count` seeds are tried.
pub fn sample_tasks(
    g: &NavGraph,
    city: &str,
    count: usize,
    cfg: &SamplerConfig,
    polygon_half_m: f64,
) -> Result<Vec<NavTask>, SamplerError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut tasks = Vec::with_capacity(count);
    let mut attempts = 0;
    while tasks.len() < count && attempts < 10 * count.max(1) && !g.is_empty() {
        attempts += 1;
        let seed_ix = rng.gen_range(0..g.node_count());
        let crawl_cfg = SamplerConfig { rng_seed: rng.gen(), ..*cfg };
        let crawl = match crawl_start_point(g, g.id(seed_ix), &crawl_cfg) {
            Ok(c) => c,
            Err(SamplerError::TargetUnreachable { .. }) => continue,
            Err(e) => return Err(e),
        };
        let polygon = GeoPolygon::square_around(g.point(seed_ix), polygon_half_m)?;
        let name = format!("Landmark {}", g.id(seed_ix));
        match build_task(g, &crawl.start, &name, polygon, city) {
            Ok(t) if !tasks.iter().any(|x: &NavTask| x.task_id == t.task_id) => tasks.push(t),
            Ok(_) | Err(SamplerError::DegenerateTask(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(tasks)
}
