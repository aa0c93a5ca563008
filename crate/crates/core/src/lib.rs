//! Simulation engine, behavioral metrics, and agent-evaluation protocols for
//! the iterated prisoner's dilemma.
//!
//! The crate is organized around three experiment protocols:
//!
//! - **direct reciprocity**: repeated episodes against fixed zero-determinant
//!   opponents ([`experiment::run_direct_reciprocity`]);
//! - **indirect reciprocity**: single-round decisions about strangers with
//!   reputation cues ([`experiment::run_reputation`]);
//! - **group dynamics**: anonymized societies of persona-mixed agents
//!   ([`experiment::run_society`]).
//!
//! Agents are either scripted strategies (for deterministic verification) or
//! remote language models reached over the chat-completion wire protocol via
//! [`gateway::Gateway`]. The [`metrics`] module computes cooperation rates,
//! regime discrimination, conditional cooperation drop, reputation gradient,
//! observability effect, and first-defection rounds; [`analysis`] adds
//! bootstrap contrasts and lexical signatures. Every run is reproducible
//! bit-for-bit from its seed.

pub mod agents;
pub mod analysis;
pub mod experiment;
pub mod game;
pub mod gateway;
pub mod jsonl;
pub mod metrics;
pub mod protocol;
pub mod seed;
pub mod strategy;

pub use game::{Action, EpisodeRecord, PayoffMatrix, RoundRecord, Side};
pub use protocol::{Agent, AgentSpec, DecisionOutput, Framing, ModelClass, Persona, PromptBundle};
pub use strategy::{MemoryOneStrategy, ScriptedStrategy, ZdCondition, ZdTable};
