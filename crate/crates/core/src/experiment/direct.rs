//! Direct reciprocity: repeated episodes of the subject agent (seat A)
//! against a fresh zero-determinant opponent (seat B) per episode.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::ScriptedAgent;
use crate::game::{run_episode, EpisodeParams, EpisodeRecord, PayoffMatrix};
use crate::protocol::{Agent, AgentSpec, DecisionLogEntry, Framing};
use crate::seed::derive_seed;
use crate::strategy::{ZdCondition, ZdTable};

use super::{spec_factory, ExperimentError, RunEnv, RunTotals};

const NS_DIRECT_EPISODE: u64 = 0x01;

/// Protocol parameters. Defaults reproduce the standard setup of four
/// conditions, 50 episodes each, 30 rounds per episode.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DirectReciprocityConfig {
    #[serde(default = "all_conditions")]
    pub conditions: Vec<ZdCondition>,
    #[serde(default = "default_horizon")]
    pub horizon: u32,
    #[serde(default = "default_episodes")]
    pub episodes_per_condition: u32,
    #[serde(default = "default_framing")]
    pub framing: Framing,
    #[serde(default)]
    pub seed: u64,
}

fn all_conditions() -> Vec<ZdCondition> {
    ZdCondition::ALL.to_vec()
}

fn default_horizon() -> u32 {
    30
}

fn default_episodes() -> u32 {
    50
}

fn default_framing() -> Framing {
    Framing::Baseline
}

impl Default for DirectReciprocityConfig {
    fn default() -> Self {
        DirectReciprocityConfig {
            conditions: all_conditions(),
            horizon: default_horizon(),
            episodes_per_condition: default_episodes(),
            framing: default_framing(),
            seed: 0,
        }
    }
}

impl DirectReciprocityConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.conditions.is_empty() {
            return Err(ExperimentError::InvalidConfig("conditions must not be empty".into()));
        }
        if self.horizon == 0 {
            return Err(ExperimentError::InvalidConfig("horizon must be at least 1".into()));
        }
        if self.episodes_per_condition == 0 {
            return Err(ExperimentError::InvalidConfig("episodes_per_condition must be at least 1".into()));
        }
        Ok(())
    }
}

/// The decision log of one episode's subject agent.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecisionBatch {
    pub condition_tag: String,
    pub episode_index: u32,
    pub entries: Vec<DecisionLogEntry>,
}

#[derive(Clone, Debug)]
pub struct DirectRunOutput {
    pub episodes: Vec<EpisodeRecord>,
    pub decisions: Vec<DecisionBatch>,
    pub totals: RunTotals,
}

/// Runs the full protocol for an agent spec. The config's framing overrides
/// the spec's, so one spec can be reused across framing conditions.
pub fn run_direct_reciprocity(
    agent: &AgentSpec,
    config: &DirectReciprocityConfig,
    env: &RunEnv,
) -> Result<DirectRunOutput, ExperimentError> {
    config.validate()?;
    let spec = AgentSpec { framing: config.framing, ..agent.clone() };
    let factory = spec_factory(&spec, env.gateway, env.options)?;
    Ok(run_direct_reciprocity_with(&factory, config, &env.zd_table))
}

/// Runs the protocol with a caller-supplied subject factory. A fresh subject
/// and a fresh opponent are instantiated per episode; no state crosses
/// episodes.
pub fn run_direct_reciprocity_with<'a, F>(
    factory: &F,
    config: &DirectReciprocityConfig,
    zd_table: &ZdTable,
) -> DirectRunOutput
where
    F: Fn() -> Box<dyn Agent + Send + 'a> + Sync,
{
    let per_condition = config.episodes_per_condition;
    let mut episodes = Vec::with_capacity(config.conditions.len() * per_condition as usize);
    let mut decisions = Vec::new();
    let mut totals = RunTotals::default();

    for (condition_index, condition) in config.conditions.iter().enumerate() {
        let opponent_strategy = zd_table.get(*condition);
        let results: Vec<(EpisodeRecord, Vec<DecisionLogEntry>)> = (0..per_condition)
            .into_par_iter()
            .map(|episode_offset| {
                let mut subject = factory();
                let mut opponent = ScriptedAgent::memory_one(opponent_strategy);
                let params = EpisodeParams {
                    episode_index: condition_index as u32 * per_condition + episode_offset + 1,
                    horizon: config.horizon,
                    seed: derive_seed(
                        config.seed,
                        &[NS_DIRECT_EPISODE, condition_index as u64, episode_offset as u64],
                    ),
                    condition_tag: condition.code().to_string(),
                    matrix: PayoffMatrix::default(),
                    prior_a: None,
                    prior_b: None,
                };
                let record = run_episode(subject.as_mut(), &mut opponent, &params);
                let log = subject.take_decision_log();
                (record, log)
            })
            .collect();

        for (record, log) in results {
            totals.retries += log.iter().map(|e| u64::from(e.attempts.saturating_sub(1))).sum::<u64>();
            if record.invalid {
                totals.excluded += 1;
            }
            if !log.is_empty() {
                decisions.push(DecisionBatch {
                    condition_tag: record.condition_tag.clone(),
                    episode_index: record.episode_index,
                    entries: log,
                });
            }
            episodes.push(record);
        }
    }

    DirectRunOutput { episodes, decisions, totals }
}
