//! Prompt templates and their rendering.

use std::path::Path;

use serde::Serialize;

use super::memory::AgentMemory;
use super::AgentError;
use crate::clients::ImageRef;
use crate::env::Observation;
use crate::sampler::NavTask;

/// The three path-verbalization instructions of the navigator prompt.
pub const VOP_SENTENCES: [&str; 3] = [
    "Write the exact location of the destination",
    "Write the current estimated exact location",
    "Write the walking directions from the current position to the destination",
];

pub const RESPONSE_SCHEMA: &str = r#"{
  "type": "object",
  "required": ["analysis", "decision", "memory"],
  "properties": {
    "analysis": {"type": "string"},
    "decision": {"type": "string"},
    "memory": {"type": "string"}
  }
}"#;

/// A set of prompt texts with `{{name}}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub version: String,
    pub system: String,
    pub agentnav: String,
    pub base: String,
    pub self_position: String,
    pub retry: String,
}

const TEMPLATE_FILES: [&str; 5] = ["system.txt", "agentnav.txt", "base.txt", "self_position.txt", "retry.txt"];

impl Default for PromptTemplates {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptTemplates {
    pub fn builtin() -> Self {
        Self {
            version: "v1".into(),
            system: include_str!("../../assets/prompts/v1/system.txt").into(),
            agentnav: include_str!("../../assets/prompts/v1/agentnav.txt").into(),
            base: include_str!("../../assets/prompts/v1/base.txt").into(),
            self_position: include_str!("../../assets/prompts/v1/self_position.txt").into(),
            retry: include_str!("../../assets/prompts/v1/retry.txt").into(),
        }
    }

    /// Loads a template directory laid out like the built-in one. Files that
    /// are absent keep their built-in text.
    pub fn from_dir(dir: &Path) -> Result<Self, AgentError> {
        let mut t = Self::builtin();
        t.version = dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
        for name in TEMPLATE_FILES {
            let path = dir.join(name);
            if !path.exists() {
                continue;
            }
            let text = std::fs::read_to_string(&path)
                .map_err(|e| AgentError::Config(format!("cannot read {}: {e}", path.display())))?;
            let slot = match name {
                "system.txt" => &mut t.system,
                "agentnav.txt" => &mut t.agentnav,
                "base.txt" => &mut t.base,
                "self_position.txt" => &mut t.self_position,
                _ => &mut t.retry,
            };
            *slot = text;
        }
        Ok(t)
    }
}

/// Substitutes `{{key}}` placeholders. Unknown placeholders are left as is.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(open) = rest.find("{{") {
        out.push_str(&rest[..open]);
        let after = &rest[open + 2..];
        match after.find("}}") {
            Some(close) => {
                let key = after[..close].trim();
                match vars.iter().find(|(k, _)| *k == key) {
                    Some((_, v)) => out.push_str(v),
                    None => out.push_str(&rest[open..open + 4 + close]),
                }
                rest = &after[close + 2..];
            }
            None => {
                out.push_str(&rest[open..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptBundle {
    pub system: String,
    pub user: String,
    /// One image per option, in option order.
    pub images: Vec<ImageRef>,
    pub option_ids: Vec<String>,
    pub step_index: u32,
    pub retry: u32,
}

impl PromptBundle {
    /// The same prompt with a corrective note appended for attempt `retry`.
    pub fn with_correction(&self, templates: &PromptTemplates, error: &str, retry: u32) -> Self {
        let inline = self.option_ids.join(", ");
        let note = render(&templates.retry, &[("error", error), ("valid_ids_inline", &inline)]);
        Self { user: format!("{}{}", self.user, note), retry, ..self.clone() }
    }
}

pub fn option_legend(obs: &Observation) -> String {
    obs.options
        .iter()
        .map(|o| format!("Option {}: facing {} ({:.0}°)", o.option_id, o.compass, o.heading))
        .collect::<Vec<_>>()
        .join("\n")
}

fn example_json(obs: &Observation) -> String {
    let id = obs.options.first().map_or("step0_option0", |o| o.option_id.as_str());
    format!(
        "{{\n  \"analysis\": \"Your reasoning here\",\n  \"decision\": \"{id}\",\n  \"memory\": \"Any memory to retain for future steps\"\n}}"
    )
}

fn memory_block(mem: &AgentMemory) -> String {
    if mem.markovian.is_empty() {
        "(none yet)".into()
    } else {
        mem.markovian.clone()
    }
}

fn history_block(mem: &AgentMemory) -> String {
    if mem.decision_history.is_empty() {
        return "(no decisions yet)".into();
    }
    mem.decision_history
        .iter()
        .map(|h| format!("- step {}: chose {} facing {}", h.step_index, h.option_id, h.compass))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Advisory shown at a node that already served as a decision point. Its
/// tone hardens with the visit count.
pub fn visit_advisory(mem: &AgentMemory, obs: &Observation) -> Option<String> {
    let prior = mem.prior_decisions(&obs.node);
    if prior.is_empty() {
        return None;
    }
    let visits = mem.visits(&obs.node).max(prior.len() as u32 + 1);
    let choices =
        prior.iter().map(|p| format!("{} at step {}", p.compass, p.step_index)).collect::<Vec<_>>().join(", ");
    let advice = match visits {
        0..=2 => "Do not repeat a direction that did not bring you closer to the destination.",
        3..=4 => "Do not repeat these directions; choose a direction you have not tried from here.",
        _ => {
            "You are going in circles. Do not repeat any of these directions; take an untried direction or turn around."
        }
    };
    Some(format!(
        "\nPREVIOUS VISITS: you have been at this intersection {visits} times (this visit included). Earlier you chose: {choices}. {advice}\n"
    ))
}

fn valid_ids_line(obs: &Observation) -> String {
    obs.option_ids().join(" | ")
}

fn position_line(mem: &AgentMemory) -> String {
    mem.last_position_estimate.as_ref().map_or_else(|| "unknown (evidence: none)".into(), |p| p.to_string())
}

fn bundle(templates: &PromptTemplates, user: String, obs: &Observation) -> PromptBundle {
    PromptBundle {
        system: templates.system.trim_end().to_string(),
        user,
        images: obs.options.iter().map(|o| o.image.clone()).collect(),
        option_ids: obs.option_ids(),
        step_index: obs.step_index,
        retry: 0,
    }
}

pub fn build_vop_prompt(
    obs: &Observation,
    task: &NavTask,
    mem: &AgentMemory,
    templates: &PromptTemplates,
) -> PromptBundle {
    let count = obs.options.len().to_string();
    let legend = option_legend(obs);
    let position = position_line(mem);
    let memory = memory_block(mem);
    let history = history_block(mem);
    let advisory = visit_advisory(mem, obs).unwrap_or_default();
    let ids = valid_ids_line(obs);
    let example = example_json(obs);
    let user = render(
        &templates.agentnav,
        &[
            ("option_count", &count),
            ("destination", &task.destination_name),
            ("option_legend", &legend),
            ("position", &position),
            ("memory", &memory),
            ("history", &history),
            ("visit_advisory", &advisory),
            ("schema", RESPONSE_SCHEMA),
            ("valid_ids", &ids),
            ("example", &example),
        ],
    );
    bundle(templates, user, obs)
}

pub fn build_base_prompt(obs: &Observation, task: &NavTask, templates: &PromptTemplates) -> PromptBundle {
    let count = obs.options.len().to_string();
    let legend = option_legend(obs);
    let ids = valid_ids_line(obs);
    let example = example_json(obs);
    let user = render(
        &templates.base,
        &[
            ("option_count", &count),
            ("destination", &task.destination_name),
            ("option_legend", &legend),
            ("schema", RESPONSE_SCHEMA),
            ("valid_ids", &ids),
            ("example", &example),
        ],
    );
    bundle(templates, user, obs)
}

pub fn build_self_position_prompt(
    obs: &Observation,
    task: &NavTask,
    mem: &AgentMemory,
    templates: &PromptTemplates,
) -> PromptBundle {
    let legend = option_legend(obs);
    let memory = memory_block(mem);
    let user = render(
        &templates.self_position,
        &[("destination", &task.destination_name), ("option_legend", &legend), ("memory", &memory)],
    );
    bundle(templates, user, obs)
}
