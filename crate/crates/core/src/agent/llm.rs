//! The LLM-backed navigator.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::memory::{AgentMemory, PositionEstimate, DEFAULT_MEMORY_CAP_CHARS};
use super::parse::{parse_response, AgentResponse};
use super::prompt::{build_base_prompt, build_self_position_prompt, build_vop_prompt, PromptBundle, PromptTemplates};
use super::{episode_seed, random_decide, AgentError, Decision, DecisionContext, Policy};
use crate::clients::{ChatClient, ChatMessage, ChatRequest, ClientError, ImageAttachment, ImageProvider};
use crate::env::Observation;
use crate::graph::NavGraph;
use crate::sampler::NavTask;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub memory_cap_chars: usize,
    /// Chat calls per decision before falling back to a random option.
    pub max_attempts: u32,
    pub rng_seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self { memory_cap_chars: DEFAULT_MEMORY_CAP_CHARS, max_attempts: 3, rng_seed: 0 }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        if self.memory_cap_chars == 0 {
            return Err(AgentError::Config("memory_cap_chars must be positive".into()));
        }
        if self.max_attempts == 0 {
            return Err(AgentError::Config("max_attempts must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptMode {
    /// Path verbalization, memory, history, visit advisories, self-positioning.
    AgentNav,
    /// Destination, options and schema only.
    Base,
}

pub fn fetch_attachments(obs: &Observation, images: &dyn ImageProvider) -> Result<Vec<ImageAttachment>, AgentError> {
    obs.options.iter().map(|o| images.fetch(&o.image).map(ImageAttachment::jpeg).map_err(AgentError::Imagery)).collect()
}

fn request(bundle: &PromptBundle, client: &dyn ChatClient, attachments: &[ImageAttachment]) -> ChatRequest {
    let mut messages = Vec::with_capacity(2);
    if !bundle.system.is_empty() {
        messages.push(ChatMessage::system(bundle.system.clone()));
    }
    messages.push(ChatMessage::user(bundle.user.clone(), attachments.to_vec()));
    ChatRequest { model: client.model().to_string(), messages, params: client.params() }
}

/// `Ok(None)` marks a reply that failed at the provider level but is worth
/// asking again.
fn call(client: &dyn ChatClient, req: &ChatRequest) -> Result<Option<String>, AgentError> {
    match client.chat(req) {
        Ok(r) => Ok(Some(r.text)),
        Err(ClientError::MalformedReply(why)) => {
            tracing::warn!(%why, "unusable provider reply");
            Ok(None)
        }
        Err(ClientError::Unavailable { message, .. }) => Err(AgentError::ClientUnavailable(message)),
        Err(e) => Err(AgentError::Client(e)),
    }
}

/// Outcome of the ask/parse/retry ladder for one decision.
#[derive(Debug, Clone, PartialEq)]
pub struct Asked {
    pub option_id: String,
    pub response: Option<AgentResponse>,
    pub attempts: u32,
    pub fallback: bool,
}

fn ask_for_decision(
    bundle: &PromptBundle,
    client: &dyn ChatClient,
    attachments: &[ImageAttachment],
    templates: &PromptTemplates,
    max_attempts: u32,
    obs: &Observation,
    rng: &mut ChaCha8Rng,
) -> Result<Asked, AgentError> {
    let mut current = bundle.clone();
    for attempt in 1..=max_attempts {
        let error = match call(client, &request(&current, client, attachments))? {
            Some(raw) => match parse_response(&raw, &bundle.option_ids) {
                Ok(resp) => {
                    return Ok(Asked {
                        option_id: resp.decision.clone(),
                        response: Some(resp),
                        attempts: attempt,
                        fallback: false,
                    })
                }
                Err(e) => e.to_string(),
            },
            None => "the reply was empty or unreadable".to_string(),
        };
        tracing::debug!(step = bundle.step_index, attempt, %error, "retrying decision");
        current = bundle.with_correction(templates, &error, attempt);
    }
    let option_id = random_decide(obs, rng)?;
    tracing::warn!(step = bundle.step_index, %option_id, "falling back to a random option");
    Ok(Asked { option_id, response: None, attempts: max_attempts, fallback: true })
}

/// One navigator decision with the full prompt. Updates `mem` as a side effect.
#[allow(clippy::too_many_arguments)]
pub fn agentnav_decide(
    obs: &Observation,
    task: &NavTask,
    mem: &mut AgentMemory,
    client: &dyn ChatClient,
    attachments: &[ImageAttachment],
    templates: &PromptTemplates,
    max_attempts: u32,
    rng: &mut ChaCha8Rng,
) -> Result<Asked, AgentError> {
    let bundle = build_vop_prompt(obs, task, mem, templates);
    let asked = ask_for_decision(&bundle, client, attachments, templates, max_attempts, obs, rng)?;
    if let Some(resp) = &asked.response {
        mem.set_markovian(&resp.memory);
    }
    let compass = obs.option(&asked.option_id).expect("decision is an offered option").compass;
    mem.record_decision(obs.step_index, &obs.node, &asked.option_id, compass);
    Ok(asked)
}

/// Dedicated localization call. Empty replies are retried; after the last
/// attempt the estimate becomes `unknown`.
pub fn self_position(
    obs: &Observation,
    task: &NavTask,
    mem: &AgentMemory,
    client: &dyn ChatClient,
    attachments: &[ImageAttachment],
    templates: &PromptTemplates,
    max_attempts: u32,
) -> Result<PositionEstimate, AgentError> {
    let bundle = build_self_position_prompt(obs, task, mem, templates);
    for _ in 0..max_attempts {
        if let Some(est) =
            call(client, &request(&bundle, client, attachments))?.and_then(|raw| PositionEstimate::parse(&raw))
        {
            return Ok(est);
        }
    }
    Ok(PositionEstimate::unknown())
}

/// Chat-model policy in either prompt mode.
pub struct LlmPolicy {
    mode: PromptMode,
    client: Arc<dyn ChatClient>,
    images: Arc<dyn ImageProvider>,
    templates: Arc<PromptTemplates>,
    cfg: AgentConfig,
    memory: AgentMemory,
    rng: ChaCha8Rng,
}

impl LlmPolicy {
    pub fn new(
        mode: PromptMode,
        client: Arc<dyn ChatClient>,
        images: Arc<dyn ImageProvider>,
        templates: Arc<PromptTemplates>,
        cfg: AgentConfig,
    ) -> Result<Self, AgentError> {
        cfg.validate()?;
        Ok(Self {
            mode,
            client,
            images,
            templates,
            memory: AgentMemory::new(cfg.memory_cap_chars),
            rng: ChaCha8Rng::seed_from_u64(cfg.rng_seed),
            cfg,
        })
    }

    pub fn memory(&self) -> &AgentMemory {
        &self.memory
    }
}

impl Policy for LlmPolicy {
    fn name(&self) -> &str {
        match self.mode {
            PromptMode::AgentNav => "agentnav",
            PromptMode::Base => "base",
        }
    }

    fn begin_episode(&mut self, _graph: &NavGraph, task: &NavTask) {
        self.memory = AgentMemory::new(self.cfg.memory_cap_chars);
        self.rng = ChaCha8Rng::seed_from_u64(episode_seed(self.cfg.rng_seed, &task.task_id));
    }

    fn decide(&mut self, ctx: &DecisionContext<'_>) -> Result<Decision, AgentError> {
        let obs = ctx.observation;
        if obs.options.is_empty() {
            return Err(AgentError::NoOptions);
        }
        let visit = self.memory.record_visit(&obs.node);
        let attachments = fetch_attachments(obs, self.images.as_ref())?;
        let client = self.client.as_ref();
        match self.mode {
            PromptMode::AgentNav => {
                let period = ctx.env.self_position_period.max(1);
                let self_positioned = obs.step_index.is_multiple_of(period);
                if self_positioned {
                    let est = self_position(
                        obs,
                        ctx.task,
                        &self.memory,
                        client,
                        &attachments,
                        &self.templates,
                        self.cfg.max_attempts,
                    )?;
                    self.memory.last_position_estimate = Some(est);
                }
                let asked = agentnav_decide(
                    obs,
                    ctx.task,
                    &mut self.memory,
                    client,
                    &attachments,
                    &self.templates,
                    self.cfg.max_attempts,
                    &mut self.rng,
                )?;
                Ok(Decision {
                    option_id: asked.option_id,
                    analysis: asked.response.map(|r| r.analysis),
                    memory_after: Some(self.memory.markovian.clone()),
                    position_estimate: self.memory.last_position_estimate.as_ref().map(ToString::to_string),
                    self_positioned,
                    visit_count: Some(visit),
                    attempts: asked.attempts,
                    fallback: asked.fallback,
                })
            }
            PromptMode::Base => {
                let bundle = build_base_prompt(obs, ctx.task, &self.templates);
                let asked = ask_for_decision(
                    &bundle,
                    client,
                    &attachments,
                    &self.templates,
                    self.cfg.max_attempts,
                    obs,
                    &mut self.rng,
                )?;
                let compass = obs.option(&asked.option_id).expect("offered option").compass;
                self.memory.record_decision(obs.step_index, &obs.node, &asked.option_id, compass);
                Ok(Decision {
                    option_id: asked.option_id,
                    analysis: asked.response.map(|r| r.analysis),
                    memory_after: None,
                    position_estimate: None,
                    self_positioned: false,
                    visit_count: Some(visit),
                    attempts: asked.attempts,
                    fallback: asked.fallback,
                })
            }
        }
    }
}
