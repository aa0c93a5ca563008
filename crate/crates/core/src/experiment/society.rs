//! Group dynamics: an anonymized society of N agents where every unordered
//! pair plays one match per episode and prompts carry only the current dyad
//! history plus identity-free blocks from completed prior episodes.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::game::{run_episode, Action, EpisodeParams, EpisodeRecord, PayoffMatrix};
use crate::protocol::{
    Agent, AgentSpec, DecisionLogEntry, EpisodeHistoryBlock, Framing, Persona,
};
use crate::seed::{derive_seed, stream_rng};

use super::{spec_factory, ExperimentError, RunEnv, RunTotals};

const NS_PERSONA: u64 = 0x20;
const NS_DYAD: u64 = 0x21;
const NS_CONTEXT: u64 = 0x22;

/// Fraction of resilient-cooperator personas in the population.
#[derive(Clone, Copy, Debug, Eq, PartialEq, Hash, Serialize, Deserialize)]
pub enum RcMix {
    #[serde(rename = "0%")]
    Zero,
    #[serde(rename = "40%")]
    Forty,
    #[serde(rename = "100%")]
    Hundred,
}

impl RcMix {
    pub fn fraction(&self) -> f64 {
        match self {
            RcMix::Zero => 0.0,
            RcMix::Forty => 0.4,
            RcMix::Hundred => 1.0,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            RcMix::Zero => "S0",
            RcMix::Forty => "S40",
            RcMix::Hundred => "S100",
        }
    }
}

/// Number of resilient cooperators in a population: round(fraction * N).
pub fn rc_count(n_agents: u32, mix: RcMix) -> u32 {
    (mix.fraction() * f64::from(n_agents)).round() as u32
}

/// Society parameters. Defaults: five agents, ten-round matches, ten
/// episodes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SocietyConfig {
    #[serde(default = "default_agents")]
    pub n_agents: u32,
    #[serde(default = "default_horizon")]
    pub horizon: u32,
    #[serde(default = "default_episodes")]
    pub episodes: u32,
    pub rc_mix: RcMix,
    #[serde(default = "default_framing")]
    pub framing: Framing,
    #[serde(default)]
    pub seed: u64,
}

fn default_agents() -> u32 {
    5
}

fn default_horizon() -> u32 {
    10
}

fn default_episodes() -> u32 {
    10
}

fn default_framing() -> Framing {
    Framing::Baseline
}

impl Default for SocietyConfig {
    fn default() -> Self {
        SocietyConfig {
            n_agents: default_agents(),
            horizon: default_horizon(),
            episodes: default_episodes(),
            rc_mix: RcMix::Zero,
            framing: default_framing(),
            seed: 0,
        }
    }
}

impl SocietyConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.n_agents < 2 {
            return Err(ExperimentError::InvalidConfig("a society needs at least 2 agents".into()));
        }
        if self.horizon == 0 || self.episodes == 0 {
            return Err(ExperimentError::InvalidConfig("horizon and episodes must be at least 1".into()));
        }
        Ok(())
    }
}

/// One dyadic match inside a society episode. Agent indices identify seats
/// in the log only; they never reach a prompt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DyadRecord {
    pub agent_a: u32,
    pub agent_b: u32,
    pub record: EpisodeRecord,
}

/// The anonymized cross-episode context one agent was given for an episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentContextSnapshot {
    pub agent: u32,
    pub blocks: Vec<EpisodeHistoryBlock>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SocietyEpisode {
    pub episode_index: u32,
    pub dyads: Vec<DyadRecord>,
    pub contexts: Vec<AgentContextSnapshot>,
}

/// Full record of a society run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SocietyLog {
    pub n_agents: u32,
    pub horizon: u32,
    pub rc_mix: RcMix,
    pub seed: u64,
    pub personas: Vec<Persona>,
    pub episodes: Vec<SocietyEpisode>,
}

/// Decision log of one agent within one dyad.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SocietyDecisionBatch {
    pub episode_index: u32,
    pub agent: u32,
    pub partner: u32,
    pub entries: Vec<DecisionLogEntry>,
}

#[derive(Clone, Debug)]
pub struct SocietyRunOutput {
    pub log: SocietyLog,
    pub decisions: Vec<SocietyDecisionBatch>,
    pub totals: RunTotals,
}

/// Runs a society where every agent is the same subject model, differing
/// only in persona. The config's framing applies to all agents.
pub fn run_society(
    template: &AgentSpec,
    config: &SocietyConfig,
    env: &RunEnv,
) -> Result<SocietyRunOutput, ExperimentError> {
    config.validate()?;
    let rp_spec = AgentSpec {
        kind: template.kind.clone(),
        persona: Persona::RationalPlayer,
        framing: config.framing,
    };
    let rc_spec = AgentSpec { persona: Persona::ResilientCooperator, ..rp_spec.clone() };
    let rp = spec_factory(&rp_spec, env.gateway, env.options)?;
    let rc = spec_factory(&rc_spec, env.gateway, env.options)?;
    let builder = move |persona: Persona| match persona {
        Persona::RationalPlayer => rp(),
        Persona::ResilientCooperator => rc(),
    };
    Ok(run_society_with(&builder, config))
}

/// Runs a society with a caller-supplied per-persona agent builder.
///
/// Episodes run strictly in order because episode g+1's prompts consume the
/// histories of episode g; dyads within an episode are independent.
pub fn run_society_with<'a, F>(builder: &F, config: &SocietyConfig) -> SocietyRunOutput
where
    F: Fn(Persona) -> Box<dyn Agent + Send + 'a> + Sync,
{
    let n = config.n_agents;
    let personas = assign_personas(n, config.rc_mix, config.seed);
    let pairs: Vec<(u32, u32)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();

    let mut episodes: Vec<SocietyEpisode> = Vec::with_capacity(config.episodes as usize);
    let mut decisions = Vec::new();
    let mut totals = RunTotals::default();

    for episode_index in 1..=config.episodes {
        let contexts: Vec<AgentContextSnapshot> = (0..n)
            .map(|agent| AgentContextSnapshot {
                agent,
                blocks: context_blocks(&episodes, episode_index, agent, config.seed),
            })
            .collect();

        let results: Vec<(DyadRecord, Vec<DecisionLogEntry>, Vec<DecisionLogEntry>)> = pairs
            .par_iter()
            .enumerate()
            .map(|(dyad_index, &(i, j))| {
                let mut agent_i = builder(personas[i as usize]);
                let mut agent_j = builder(personas[j as usize]);
                let params = EpisodeParams {
                    episode_index,
                    horizon: config.horizon,
                    seed: derive_seed(
                        config.seed,
                        &[NS_DYAD, u64::from(episode_index), dyad_index as u64],
                    ),
                    condition_tag: config.rc_mix.label().to_string(),
                    matrix: PayoffMatrix::default(),
                    prior_a: Some(&contexts[i as usize].blocks),
                    prior_b: Some(&contexts[j as usize].blocks),
                };
                let record = run_episode(agent_i.as_mut(), agent_j.as_mut(), &params);
                (
                    DyadRecord { agent_a: i, agent_b: j, record },
                    agent_i.take_decision_log(),
                    agent_j.take_decision_log(),
                )
            })
            .collect();

        let mut dyads = Vec::with_capacity(results.len());
        for (dyad, log_i, log_j) in results {
            if dyad.record.invalid {
                totals.excluded += 1;
            }
            for (agent, partner, log) in [
                (dyad.agent_a, dyad.agent_b, log_i),
                (dyad.agent_b, dyad.agent_a, log_j),
            ] {
                totals.retries += log.iter().map(|e| u64::from(e.attempts.saturating_sub(1))).sum::<u64>();
                if !log.is_empty() {
                    decisions.push(SocietyDecisionBatch { episode_index, agent, partner, entries: log });
                }
            }
            dyads.push(dyad);
        }
        episodes.push(SocietyEpisode { episode_index, dyads, contexts });
    }

    SocietyRunOutput {
        log: SocietyLog {
            n_agents: n,
            horizon: config.horizon,
            rc_mix: config.rc_mix,
            seed: config.seed,
            personas,
            episodes,
        },
        decisions,
        totals,
    }
}

fn assign_personas(n: u32, mix: RcMix, seed: u64) -> Vec<Persona> {
    let mut indices: Vec<u32> = (0..n).collect();
    indices.shuffle(&mut stream_rng(seed, &[NS_PERSONA]));
    let mut personas = vec![Persona::RationalPlayer; n as usize];
    for &index in indices.iter().take(rc_count(n, mix) as usize) {
        personas[index as usize] = Persona::ResilientCooperator;
    }
    personas
}

/// Anonymized blocks for one agent entering episode `current`: one block per
/// completed prior episode, one inner list per completed match of that agent,
/// the agent's own action first in every pair. Inner-list order is shuffled
/// per (episode, agent) so positions cannot act as identities.
fn context_blocks(
    completed: &[SocietyEpisode],
    current: u32,
    agent: u32,
    seed: u64,
) -> Vec<EpisodeHistoryBlock> {
    completed
        .iter()
        .map(|episode| {
            let mut partners: Vec<Vec<(Action, Action)>> = episode
                .dyads
                .iter()
                .filter(|d| !d.record.invalid && (d.agent_a == agent || d.agent_b == agent))
                .map(|d| {
                    d.record
                        .rounds
                        .iter()
                        .map(|r| {
                            if d.agent_a == agent {
                                (r.action_a, r.action_b)
                            } else {
                                (r.action_b, r.action_a)
                            }
                        })
                        .collect()
                })
                .collect();
            partners.shuffle(&mut stream_rng(
                seed,
                &[NS_CONTEXT, u64::from(current), u64::from(agent), u64::from(episode.episode_index)],
            ));
            EpisodeHistoryBlock { episode_index: episode.episode_index, partners }
        })
        .collect()
}
