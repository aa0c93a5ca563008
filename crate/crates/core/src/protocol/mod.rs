//! The agent decision contract: contexts handed to agents each round, prompt
//! construction for remote models, and deterministic parsing of their output.
//!
//! Prompt construction is pure and stateless; every round is a fresh,
//! self-contained prompt. Scripted agents never touch this module's prompt or
//! parser paths, which the telemetry counters make checkable in tests.

mod parse;
mod prompts;

pub use parse::parse_decision;
pub use prompts::{
    build_dyadic_prompt, build_reputation_prompt, build_society_prompt, render_history,
};

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::experiment::ReputationTrial;
use crate::game::Action;
use crate::gateway::{GatewayError, ModelEndpoint};

/// Persona assigned to an agent in the society protocol.
#[derive(Clone, Copy, Debug, Eq, PartialEq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Persona {
    RationalPlayer,
    ResilientCooperator,
}

/// Whether the long-horizon reminder is prepended to prompts.
#[derive(Clone, Copy, Debug, Eq, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Framing {
    Baseline,
    LongHorizon,
}

/// Where the long-horizon reminder goes when framing is on.
#[derive(Clone, Copy, Debug, Eq, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FramingPlacement {
    UserPrompt,
    SystemPrompt,
}

impl Default for FramingPlacement {
    fn default() -> Self {
        FramingPlacement::UserPrompt
    }
}

/// Determines the output-format contract appended to prompts and the parser
/// applied to responses.
#[derive(Clone, Copy, Debug, Eq, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelClass {
    InstructionTuned,
    Reasoning,
}

/// How prior-episode context is rendered in society prompts.
#[derive(Clone, Copy, Debug, Eq, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossEpisodeFormat {
    /// Full anonymized per-co-player round lists.
    FullHistories,
    /// Un-attributed counts of co-player actions per episode.
    ActionCounts,
}

impl Default for CrossEpisodeFormat {
    fn default() -> Self {
        CrossEpisodeFormat::FullHistories
    }
}

/// Prompt options that travel with one agent.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PromptStyle {
    pub persona: Persona,
    pub framing: Framing,
    pub framing_placement: FramingPlacement,
    pub model_class: ModelClass,
}

/// A two-message conversation ready for the wire: system text plus a user
/// text that always ends with the output-format block for the model class.
#[derive(Clone, Debug, Eq, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    pub user_text: String,
}

/// A parsed model decision.
#[derive(Clone, Debug, Eq, PartialEq, Serialize, Deserialize)]
pub struct DecisionOutput {
    pub choice: Action,
    pub reasoning: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub think_trace: Option<String>,
    pub raw: String,
}

impl DecisionOutput {
    /// Renders this decision back into the raw text shape the parser accepts
    /// for the given model class. Parsing the result recovers the decision.
    pub fn to_raw_text(&self, class: ModelClass) -> String {
        let json = serde_json::json!({ "reasoning": self.reasoning, "choice": self.choice });
        match class {
            ModelClass::InstructionTuned => json.to_string(),
            ModelClass::Reasoning => format!(
                "THINKING:\n<think>{}</think>\n{}",
                self.think_trace.as_deref().unwrap_or(""),
                json
            ),
        }
    }
}

/// One completed co-player interaction list from a prior society episode,
/// anonymized: the prompted agent's action comes first in each pair.
#[derive(Clone, Debug, Eq, PartialEq, Serialize, Deserialize)]
pub struct EpisodeHistoryBlock {
    pub episode_index: u32,
    pub partners: Vec<Vec<(Action, Action)>>,
}

/// What an agent sees when asked for a dyadic decision: only rounds already
/// committed in the current episode, plus any prior-episode context the
/// protocol injects.
#[derive(Clone, Copy, Debug)]
pub struct DyadicContext<'a> {
    pub horizon: u32,
    /// 1-based index of the round being decided.
    pub round: u32,
    pub own_history: &'a [Action],
    pub opp_history: &'a [Action],
    /// Present in the society protocol (may be empty in its first episode).
    pub prior_episodes: Option<&'a [EpisodeHistoryBlock]>,
}

/// The decision situations an agent can face.
#[derive(Clone, Copy, Debug)]
pub enum DecisionContext<'a> {
    Dyadic(DyadicContext<'a>),
    Reputation(&'a ReputationTrial),
}

impl DecisionContext<'_> {
    pub fn label(&self) -> String {
        match self {
            DecisionContext::Dyadic(d) => format!("round {}", d.round),
            DecisionContext::Reputation(t) => format!("trial {}", t.trial_id),
        }
    }
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("malformed model output: {0}")]
    MalformedOutput(String),
    #[error("output format violation: {0}")]
    FormatViolation(String),
    #[error("no valid decision after {attempts} attempt(s): {last_error}")]
    DecisionFailure { attempts: u32, last_error: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// One logged model decision, kept by remote agents for transcript-level
/// reporting. `attempts` counts queries issued for this decision, so
/// `attempts - 1` is the number of parse-failure retries.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecisionLogEntry {
    pub context_label: String,
    pub choice: Action,
    pub output: DecisionOutput,
    pub attempts: u32,
    pub request_ids: Vec<u64>,
}

/// The decision contract every agent implements.
///
/// `rng` is the caller-owned stream for this agent's seat; remote agents
/// ignore it, scripted stochastic agents must use it and nothing else.
pub trait Agent {
    fn decide(&mut self, ctx: &DecisionContext, rng: &mut dyn RngCore) -> Result<Action, AgentError>;

    /// Drains decisions logged since the last call. Scripted agents log
    /// nothing.
    fn take_decision_log(&mut self) -> Vec<DecisionLogEntry> {
        Vec::new()
    }
}

/// Which kind of decision source an agent spec describes.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Scripted(crate::strategy::ScriptedStrategy),
    MemoryOne(crate::strategy::MemoryOneStrategy),
    Remote(RemoteSpec),
}

/// A remote model endpoint plus its output-format class.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RemoteSpec {
    pub endpoint: ModelEndpoint,
    pub model_class: ModelClass,
}

/// Full description of an agent: decision source, persona, and framing.
/// Scripted agents ignore persona and framing entirely.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AgentSpec {
    pub kind: AgentKind,
    #[serde(default = "default_persona")]
    pub persona: Persona,
    #[serde(default = "default_framing")]
    pub framing: Framing,
}

fn default_persona() -> Persona {
    Persona::RationalPlayer
}

fn default_framing() -> Framing {
    Framing::Baseline
}

impl AgentSpec {
    pub fn scripted(strategy: crate::strategy::ScriptedStrategy) -> Self {
        AgentSpec { kind: AgentKind::Scripted(strategy), persona: default_persona(), framing: default_framing() }
    }

    pub fn is_remote(&self) -> bool {
        matches!(self.kind, AgentKind::Remote(_))
    }
}

/// Thread-local counters used by tests to assert that scripted runs never
/// touch the prompt or parser paths.
pub mod telemetry {
    use std::cell::Cell;

    thread_local! {
        static PROMPT_BUILDS: Cell<u64> = const { Cell::new(0) };
        static PARSE_CALLS: Cell<u64> = const { Cell::new(0) };
    }

    pub(crate) fn note_prompt_build() {
        PROMPT_BUILDS.with(|c| c.set(c.get() + 1));
    }

    pub(crate) fn note_parse_call() {
        PARSE_CALLS.with(|c| c.set(c.get() + 1));
    }

    /// Prompt bundles built on the current thread since it started.
    pub fn prompt_builds() -> u64 {
        PROMPT_BUILDS.with(Cell::get)
    }

    /// Parser invocations on the current thread since it started.
    pub fn parse_calls() -> u64 {
        PARSE_CALLS.with(Cell::get)
    }
}
