//! Drives one policy through one episode and records the trace.

use thiserror::Error;

use crate::agent::{AgentError, DecisionContext, Policy};
use crate::clients::ViewParams;
use crate::env::{EnvConfig, EnvError, Environment};
use crate::graph::NavGraph;
use crate::sampler::NavTask;
use crate::trace::{DecisionRecord, EpisodeTrace, FinalRecord, StartRecord, TraceOption};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("policy failed at step {step}: {source}")]
    Agent { step: u32, source: AgentError },
}

/// Runs `policy` on `task` until the episode ends.
///
/// An unavailable chat client does not fail the run: the trace is closed
/// with an `aborted` note so the episode can be excluded from metrics.
pub fn run_episode(
    graph: &NavGraph,
    task: &NavTask,
    env_cfg: EnvConfig,
    view: ViewParams,
    policy: &mut dyn Policy,
) -> Result<EpisodeTrace, RunError> {
    let mut env = Environment::reset(graph, task, env_cfg, view)?;
    policy.begin_episode(graph, task);
    let start = StartRecord {
        task_id: task.task_id.clone(),
        city: task.city.clone(),
        policy: policy.name().to_string(),
        origin: task.origin.clone(),
        env: env_cfg,
        view,
        path: env.start_path().to_vec(),
        node_transitions_used: env.state().node_transitions_used,
        traveled_m: env.state().traveled_m,
    };
    let mut decisions = Vec::new();
    let mut fallback_decisions = 0;
    let mut aborted = None;
    while let Some(obs) = env.observation().cloned() {
        let ctx = DecisionContext { graph, task, observation: &obs, state: env.state(), env: &env_cfg };
        let decision = match policy.decide(&ctx) {
            Ok(d) => d,
            Err(AgentError::ClientUnavailable(why)) => {
                tracing::error!(task = %task.task_id, step = obs.step_index, %why, "aborting episode");
                aborted = Some(format!("client unavailable at step {}: {why}", obs.step_index));
                break;
            }
            Err(source) => return Err(RunError::Agent { step: obs.step_index, source }),
        };
        let outcome = env.step(&decision.option_id)?;
        if decision.fallback {
            fallback_decisions += 1;
        }
        let s = env.state();
        decisions.push(DecisionRecord {
            step_index: obs.step_index,
            node: obs.node.clone(),
            options: TraceOption::from_observation(&obs),
            chosen: decision.option_id,
            analysis: decision.analysis,
            memory_after: decision.memory_after,
            position_estimate: decision.position_estimate,
            self_positioned: decision.self_positioned,
            visit_count: decision.visit_count,
            attempts: decision.attempts,
            fallback: decision.fallback,
            path: outcome.path,
            decision_points_used: s.decision_points_used,
            node_transitions_used: s.node_transitions_used,
            traveled_m: s.traveled_m,
        });
    }
    let s = env.state();
    Ok(EpisodeTrace {
        start,
        decisions,
        final_record: FinalRecord {
            status: s.status,
            decision_points_used: s.decision_points_used,
            node_transitions_used: s.node_transitions_used,
            traveled_m: s.traveled_m,
            fallback_decisions,
            aborted,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{OraclePolicy, RandomPolicy};
    use crate::env::EpisodeStatus;
    use crate::geo::GeoPolygon;
    use crate::graph::NodeId;
    use crate::synth::{grid, grid_node_id, GridSpec};
    use std::collections::BTreeSet;

    fn setup() -> (NavGraph, NavTask) {
        let g = grid(&GridSpec::new(6, 6, 100.0)).unwrap();
        let dest = grid_node_id(5, 4);
        let task = NavTask {
            city: "grid".into(),
            destination_name: "Goal".into(),
            destination_nodes: BTreeSet::from([NodeId::from(dest.as_str())]),
            destination_polygon: GeoPolygon::square_around(g.point_of(&dest.as_str().into()).unwrap(), 5.0).unwrap(),
            origin: grid_node_id(0, 1).as_str().into(),
            task_id: "t".into(),
        };
        (g, task)
    }

    #[test]
    fn oracle_walks_shortest() {
        let (g, task) = setup();
        let trace =
            run_episode(&g, &task, EnvConfig::default(), ViewParams::default(), &mut OraclePolicy::new()).unwrap();
        assert_eq!(trace.final_record.status, EpisodeStatus::Success);
        let d_opt = g.shortest_path(&task.origin, &task.destination_nodes).unwrap().length_m;
        assert!((trace.final_record.traveled_m - d_opt).abs() < 1e-9);
        let seq = trace.node_sequence();
        assert_eq!(seq.first(), Some(&task.origin));
        assert!(task.destination_nodes.contains(seq.last().unwrap()));
    }

    #[test]
    fn random_runs_are_reproducible() {
        let (g, task) = setup();
        let run = |seed| {
            run_episode(&g, &task, EnvConfig::default(), ViewParams::default(), &mut RandomPolicy::new(seed))
                .unwrap()
                .to_jsonl()
        };
        assert_eq!(run(4), run(4));
    }
}
