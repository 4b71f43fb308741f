//! Episode scoring, replay verification, aggregation and GeoJSON export.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::env::{EnvError, Environment, EpisodeStatus};
use crate::graph::{GraphError, NavGraph, NodeId};
use crate::sampler::NavTask;
use crate::trace::EpisodeTrace;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("trace does not match graph or task: {0}")]
    TraceMismatch(String),
    #[error("replay diverged at {}: {message}", step.map_or_else(|| "episode start".to_string(), |s| format!("step {s}")))]
    ReplayDivergence { step: Option<u32>, message: String },
    #[error("no episode results to aggregate")]
    EmptyResults,
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Distances closer than this count as equal when judging progress.
pub const PROGRESS_TOLERANCE_M: f64 = 1e-6;

pub fn compute_spl(success: bool, d_opt_m: f64, d_agent_m: f64) -> Result<f64, EvalError> {
    if !(d_opt_m > 0.0 && d_opt_m.is_finite()) {
        return Err(EvalError::InvalidTask(format!("optimal distance must be positive, got {d_opt_m}")));
    }
    if !(d_agent_m >= 0.0) {
        return Err(EvalError::InvalidTask(format!("agent distance must be non-negative, got {d_agent_m}")));
    }
    if !success {
        return Ok(0.0);
    }
    Ok(d_opt_m / d_agent_m.max(d_opt_m))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionScore {
    pub step_index: u32,
    pub node_before: NodeId,
    pub node_after: NodeId,
    pub remaining_before_m: f64,
    pub remaining_after_m: f64,
    pub correct: bool,
}

fn index(g: &NavGraph, id: &NodeId) -> Result<usize, EvalError> {
    g.index_of(id).ok_or_else(|| EvalError::TraceMismatch(format!("node {id} is not in the graph")))
}

/// Judges each decision by whether it strictly shortened the remaining
/// shortest-path distance, measured where the agent next regains control.
pub fn score_decisions(
    trace: &EpisodeTrace,
    g: &NavGraph,
    task: &NavTask,
) -> Result<(Vec<DecisionScore>, Option<f64>), EvalError> {
    let remaining = g.distances_to(&task.destination_mask(g));
    let mut records = Vec::with_capacity(trace.decisions.len());
    for d in &trace.decisions {
        let after = d.path.last().unwrap_or(&d.node);
        let before_m = remaining[index(g, &d.node)?];
        let after_m = remaining[index(g, after)?];
        records.push(DecisionScore {
            step_index: d.step_index,
            node_before: d.node.clone(),
            node_after: after.clone(),
            remaining_before_m: before_m,
            remaining_after_m: after_m,
            correct: after_m < before_m - PROGRESS_TOLERANCE_M,
        });
    }
    let da = if records.is_empty() {
        None
    } else {
        Some(100.0 * records.iter().filter(|r| r.correct).count() as f64 / records.len() as f64)
    };
    Ok((records, da))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub task_id: String,
    pub city: String,
    pub policy: String,
    pub status: EpisodeStatus,
    pub success: u8,
    pub d_opt_m: f64,
    pub d_agent_m: f64,
    pub spl: f64,
    pub da: Option<f64>,
    pub decisions: usize,
    pub fallback_decisions: u32,
    pub aborted: Option<String>,
    pub decision_records: Vec<DecisionScore>,
}

fn same_m(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(1.0)
}

fn diverge(step: Option<u32>, message: String) -> EvalError {
    EvalError::ReplayDivergence { step, message }
}

/// Re-runs the recorded choices and checks every node and counter, then
/// scores the episode.
pub fn replay_and_verify(trace: &EpisodeTrace, g: &NavGraph, task: &NavTask) -> Result<EpisodeResult, EvalError> {
    if trace.start.task_id != task.task_id {
        return Err(EvalError::TraceMismatch(format!(
            "trace is for task {} but task {} was given",
            trace.start.task_id, task.task_id
        )));
    }
    if trace.start.origin != task.origin {
        return Err(diverge(None, format!("origin {} differs from task origin {}", trace.start.origin, task.origin)));
    }
    for id in trace.node_sequence() {
        index(g, &id)?;
    }
    let mut env = match Environment::reset(g, task, trace.start.env, trace.start.view) {
        Ok(env) => env,
        Err(EnvError::Graph(GraphError::UnknownNode(n))) => {
            return Err(EvalError::TraceMismatch(format!("node {n} is not in the graph")))
        }
        Err(e) => return Err(e.into()),
    };
    if env.start_path() != trace.start.path.as_slice() {
        return Err(diverge(None, "path before the first observation differs".into()));
    }
    if env.state().node_transitions_used != trace.start.node_transitions_used
        || !same_m(env.state().traveled_m, trace.start.traveled_m)
    {
        return Err(diverge(None, "counters before the first observation differ".into()));
    }
    for d in &trace.decisions {
        let step = Some(d.step_index);
        let obs = env
            .observation()
            .ok_or_else(|| diverge(step, format!("episode already ended with {:?}", env.state().status)))?;
        if obs.step_index != d.step_index {
            return Err(diverge(step, format!("environment is at step {}", obs.step_index)));
        }
        if obs.node != d.node {
            return Err(diverge(step, format!("decision at {} but environment is at {}", d.node, obs.node)));
        }
        let offered: Vec<(&str, &NodeId)> = obs.options.iter().map(|o| (o.option_id.as_str(), &o.toward)).collect();
        let recorded: Vec<(&str, &NodeId)> = d.options.iter().map(|o| (o.option_id.as_str(), &o.toward)).collect();
        if offered != recorded {
            return Err(diverge(step, "offered options differ".into()));
        }
        let out = env.step(&d.chosen).map_err(|e| diverge(step, e.to_string()))?;
        if out.path != d.path {
            return Err(diverge(step, "traversed nodes differ".into()));
        }
        let s = env.state();
        if s.decision_points_used != d.decision_points_used
            || s.node_transitions_used != d.node_transitions_used
            || !same_m(s.traveled_m, d.traveled_m)
        {
            return Err(diverge(step, "counters differ".into()));
        }
    }
    let s = env.state();
    let f = &trace.final_record;
    let end = Some(trace.decisions.last().map_or(0, |d| d.step_index + 1));
    if f.aborted.is_none() && !s.status.is_terminal() {
        return Err(diverge(end, "trace ends while the episode is still running".into()));
    }
    if s.status != f.status {
        return Err(diverge(end, format!("final status {:?} but replay gives {:?}", f.status, s.status)));
    }
    if s.decision_points_used != f.decision_points_used
        || s.node_transitions_used != f.node_transitions_used
        || !same_m(s.traveled_m, f.traveled_m)
    {
        return Err(diverge(end, "final counters differ".into()));
    }
    let d_opt = g
        .shortest_path(&task.origin, &task.destination_nodes)
        .map_err(|e| EvalError::InvalidTask(e.to_string()))?
        .length_m;
    let success = s.status == EpisodeStatus::Success;
    let spl = compute_spl(success, d_opt, s.traveled_m)?;
    let (decision_records, da) = score_decisions(trace, g, task)?;
    Ok(EpisodeResult {
        task_id: task.task_id.clone(),
        city: task.city.clone(),
        policy: trace.start.policy.clone(),
        status: s.status,
        success: u8::from(success),
        d_opt_m: d_opt,
        d_agent_m: s.traveled_m,
        spl,
        da,
        decisions: trace.decisions.len(),
        fallback_decisions: trace.final_record.fallback_decisions,
        aborted: f.aborted.clone(),
        decision_records,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    /// All episodes, aborted ones included.
    pub episodes: usize,
    /// Episodes that enter the metrics.
    pub scored_episodes: usize,
    pub success_rate: Option<f64>,
    pub mean_spl: Option<f64>,
    pub mean_da: Option<f64>,
    /// Scored episodes without any decision, left out of `mean_da`.
    pub da_excluded: usize,
    pub fallback_decisions: u64,
    pub aborted_episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub overall: GroupMetrics,
    pub per_city: BTreeMap<String, GroupMetrics>,
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn group(results: &[&EpisodeResult]) -> GroupMetrics {
    let scored: Vec<&&EpisodeResult> = results.iter().filter(|r| r.aborted.is_none()).collect();
    GroupMetrics {
        episodes: results.len(),
        scored_episodes: scored.len(),
        success_rate: mean(scored.iter().map(|r| f64::from(r.success))).map(|m| 100.0 * m),
        mean_spl: mean(scored.iter().map(|r| r.spl)),
        mean_da: mean(scored.iter().filter_map(|r| r.da)),
        da_excluded: scored.iter().filter(|r| r.da.is_none()).count(),
        fallback_decisions: results.iter().map(|r| u64::from(r.fallback_decisions)).sum(),
        aborted_episodes: results.len() - scored.len(),
    }
}

pub fn aggregate(results: &[EpisodeResult]) -> Result<MetricsReport, EvalError> {
    if results.is_empty() {
        return Err(EvalError::EmptyResults);
    }
    let all: Vec<&EpisodeResult> = results.iter().collect();
    let mut by_city: BTreeMap<&str, Vec<&EpisodeResult>> = BTreeMap::new();
    for r in results {
        by_city.entry(r.city.as_str()).or_default().push(r);
    }
    Ok(MetricsReport {
        overall: group(&all),
        per_city: by_city.into_iter().map(|(c, rs)| (c.to_string(), group(&rs))).collect(),
    })
}

const ORIGIN_COLOR: &str = "#2ca02c";
const DESTINATION_COLOR: &str = "#800080";
const PATH_COLOR: &str = "#1f77b4";

fn lon_lat(g: &NavGraph, id: &NodeId) -> Result<Value, EvalError> {
    let p = g.point(index(g, id)?);
    Ok(json!([p.lon(), p.lat()]))
}

/// FeatureCollection with the walked line, origin, destination polygon and
/// one point per decision. Coordinates are `[lon, lat]`.
pub fn export_geojson(trace: &EpisodeTrace, g: &NavGraph, task: &NavTask) -> Result<Value, EvalError> {
    let mut features = Vec::new();
    let seq = trace.node_sequence();
    if seq.len() >= 2 {
        let coords = seq.iter().map(|id| lon_lat(g, id)).collect::<Result<Vec<_>, _>>()?;
        features.push(json!({
            "type": "Feature",
            "geometry": {"type": "LineString", "coordinates": coords},
            "properties": {
                "kind": "path",
                "task_id": trace.start.task_id,
                "policy": trace.start.policy,
                "status": trace.final_record.status,
                "traveled_m": trace.final_record.traveled_m,
                "stroke": PATH_COLOR,
            }
        }));
    }
    features.push(json!({
        "type": "Feature",
        "geometry": {"type": "Point", "coordinates": lon_lat(g, &trace.start.origin)?},
        "properties": {"kind": "origin", "node": trace.start.origin, "marker-color": ORIGIN_COLOR}
    }));
    let mut ring: Vec<[f64; 2]> = task.destination_polygon.vertices().iter().map(|p| [p.lon(), p.lat()]).collect();
    let twice_area: f64 = ring.iter().zip(ring.iter().cycle().skip(1)).map(|(a, b)| a[0] * b[1] - b[0] * a[1]).sum();
    if twice_area < 0.0 {
        ring.reverse();
    }
    ring.push(ring[0]);
    features.push(json!({
        "type": "Feature",
        "geometry": {"type": "Polygon", "coordinates": [ring]},
        "properties": {
            "kind": "destination",
            "name": task.destination_name,
            "fill": DESTINATION_COLOR,
            "stroke": DESTINATION_COLOR,
        }
    }));
    for d in &trace.decisions {
        let compass = d.options.iter().find(|o| o.option_id == d.chosen).map(|o| o.compass);
        features.push(json!({
            "type": "Feature",
            "geometry": {"type": "Point", "coordinates": lon_lat(g, &d.node)?},
            "properties": {
                "kind": "decision_point",
                "step_index": d.step_index,
                "node": d.node,
                "chosen": d.chosen,
                "compass": compass,
                "fallback": d.fallback,
            }
        }));
    }
    Ok(json!({"type": "FeatureCollection", "features": features}))
}
