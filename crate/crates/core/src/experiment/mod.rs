//! The three protocol drivers: direct reciprocity against zero-determinant
//! opponents, single-round reputation trials, and anonymized mixed societies.
//!
//! Each driver accepts either an [`AgentSpec`] (resolved through the ambient
//! [`RunEnv`]) or a caller-supplied agent factory, which is how tests inject
//! custom probes. All randomness flows through streams derived from the run
//! seed, so reruns are bit-identical regardless of parallel scheduling.

mod direct;
mod reputation;
mod society;

pub use direct::{
    run_direct_reciprocity, run_direct_reciprocity_with, DecisionBatch, DirectReciprocityConfig,
    DirectRunOutput,
};
pub use reputation::{
    generate_reputation_trials, level_for_score, run_reputation, run_reputation_with,
    ReputationLevel, ReputationRunOutput, ReputationTrial, TrialOutcome, TrialSet, Visibility,
    CONTROL_TRIALS, TEST_TRIALS, TRIAL_COUNT,
};
pub use society::{
    rc_count, run_society, run_society_with, AgentContextSnapshot, DyadRecord, RcMix,
    SocietyConfig, SocietyDecisionBatch, SocietyEpisode, SocietyLog, SocietyRunOutput,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{instantiate, InstantiateError, ProtocolOptions};
use crate::gateway::Gateway;
use crate::protocol::{Agent, AgentSpec};
use crate::strategy::ZdTable;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Instantiate(#[from] InstantiateError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("trial set violates an invariant: {0}")]
    InvalidTrialSet(String),
}

/// Ambient wiring for spec-driven runs: the gateway (for remote agents),
/// protocol options, and the opponent strategy table.
#[derive(Default)]
pub struct RunEnv<'g> {
    pub gateway: Option<&'g Gateway>,
    pub options: ProtocolOptions,
    pub zd_table: ZdTable,
}

/// Retry and exclusion totals for a run, reported in the manifest.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunTotals {
    /// Model re-queries beyond the first attempt, summed over decisions.
    pub retries: u64,
    /// Episodes or trials aborted and excluded from metrics.
    pub excluded: u64,
}

/// Validates the spec once, then hands back an infallible per-episode factory.
pub(crate) fn spec_factory<'g>(
    spec: &AgentSpec,
    gateway: Option<&'g Gateway>,
    options: ProtocolOptions,
) -> Result<impl Fn() -> Box<dyn Agent + Send + 'g> + Sync + 'g, ExperimentError> {
    instantiate(spec, gateway, &options)?;
    let spec = spec.clone();
    Ok(move || instantiate(&spec, gateway, &options).expect("agent spec validated at run start"))
}
