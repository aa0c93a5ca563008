//! Indirect reciprocity: generation of the fixed balanced trial set and the
//! single-decision runner.
//!
//! A trial set always holds 1010 trials: 10 controls without any cue and
//! 1000 test trials covering public scores -5..=+5. The (score, visibility)
//! composition is fixed, so sets generated from different seeds differ only
//! in history composition and presentation order.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::game::Action;
use crate::protocol::{Agent, AgentError, AgentSpec, DecisionContext, DecisionOutput};
use crate::seed::stream_rng;

use super::{spec_factory, ExperimentError, RunEnv, RunTotals};

pub const TRIAL_COUNT: usize = 1010;
pub const CONTROL_TRIALS: usize = 10;
pub const TEST_TRIALS: usize = 1000;

const NS_HISTORY: u64 = 0x10;
const NS_ORDER: u64 = 0x11;
const NS_DECISION: u64 = 0x12;

/// Whether the subject is told its action will be publicly recorded.
#[derive(Clone, Copy, Debug, Eq, PartialEq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Visibility {
    Public,
    Private,
}

/// Ordinal reputation level derived from the public score.
#[derive(Clone, Copy, Debug, Eq, PartialEq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReputationLevel {
    Low,
    Mid,
    High,
}

/// Bin boundaries: low [-5,-3], mid [-2,+2], high [+3,+5].
pub fn level_for_score(score: i32) -> ReputationLevel {
    debug_assert!((-5..=5).contains(&score));
    match score {
        i32::MIN..=-3 => ReputationLevel::Low,
        -2..=2 => ReputationLevel::Mid,
        _ => ReputationLevel::High,
    }
}

/// One single-round stimulus. Control trials carry no score or history and
/// are always private; for test trials the history's signed sum (C = +1,
/// D = -1) equals the displayed score exactly.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReputationTrial {
    pub trial_id: u32,
    pub is_control: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history: Option<Vec<Action>>,
    pub visibility: Visibility,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub level: Option<ReputationLevel>,
}

/// The full ordered trial list plus the seed that regenerates it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSet {
    pub seed: u64,
    pub trials: Vec<ReputationTrial>,
}

/// Builds the fixed trial set for a seed.
///
/// Trial ids are assigned in a fixed enumeration (controls first, then
/// scores ascending), so the id-to-stimulus mapping is stable; the seed
/// drives only history composition and the final presentation shuffle.
pub fn generate_reputation_trials(seed: u64) -> TrialSet {
    let mut trials = Vec::with_capacity(TRIAL_COUNT);
    let mut next_id = 0u32;

    for _ in 0..CONTROL_TRIALS {
        trials.push(ReputationTrial {
            trial_id: next_id,
            is_control: true,
            score: None,
            history: None,
            visibility: Visibility::Private,
            level: None,
        });
        next_id += 1;
    }

    for score in -5i32..=5 {
        let total = trials_for_score(score);
        // Public gets the odd trial so per-level imbalance is at most one.
        let public_count = total.div_ceil(2);
        for slot in 0..total {
            let visibility = if slot < public_count { Visibility::Public } else { Visibility::Private };
            trials.push(ReputationTrial {
                trial_id: next_id,
                is_control: false,
                score: Some(score),
                history: Some(history_for(seed, next_id, score)),
                visibility,
                level: Some(level_for_score(score)),
            });
            next_id += 1;
        }
    }

    trials.shuffle(&mut stream_rng(seed, &[NS_ORDER]));
    TrialSet { seed, trials }
}

/// Ten score levels receive 91 trials; score 0 receives 90, bringing the
/// test total to exactly 1000 with the smallest possible deviation from
/// uniform.
fn trials_for_score(score: i32) -> usize {
    if score == 0 {
        90
    } else {
        91
    }
}

/// A history window whose signed sum equals the score: 5 rounds for odd
/// scores, 6 for even ones (parity must match), composition shuffled per
/// (seed, trial id).
fn history_for(seed: u64, trial_id: u32, score: i32) -> Vec<Action> {
    let window: i32 = if score.rem_euclid(2) == 0 { 6 } else { 5 };
    let cooperations = ((window + score) / 2) as usize;
    let mut history = vec![Action::C; cooperations];
    history.resize(window as usize, Action::D);
    history.shuffle(&mut stream_rng(seed, &[NS_HISTORY, u64::from(trial_id)]));
    history
}

impl TrialSet {
    /// Checks every structural invariant of the set.
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let fail = |msg: String| Err(ExperimentError::InvalidTrialSet(msg));
        if self.trials.len() != TRIAL_COUNT {
            return fail(format!("expected {TRIAL_COUNT} trials, found {}", self.trials.len()));
        }
        let controls = self.trials.iter().filter(|t| t.is_control).count();
        if controls != CONTROL_TRIALS {
            return fail(format!("expected {CONTROL_TRIALS} control trials, found {controls}"));
        }

        let mut by_score: std::collections::BTreeMap<i32, (usize, usize)> = Default::default();
        for trial in &self.trials {
            if trial.is_control {
                if trial.visibility != Visibility::Private || trial.score.is_some() || trial.history.is_some() {
                    return fail(format!("control trial {} carries a cue or is public", trial.trial_id));
                }
                continue;
            }
            let score = match trial.score {
                Some(s) if (-5..=5).contains(&s) => s,
                other => return fail(format!("trial {} has invalid score {other:?}", trial.trial_id)),
            };
            let history = match &trial.history {
                Some(h) => h,
                None => return fail(format!("trial {} is missing a history", trial.trial_id)),
            };
            let signed: i32 = history.iter().map(|a| if a.is_cooperate() { 1 } else { -1 }).sum();
            if signed != score {
                return fail(format!("trial {}: signed sum {signed} != score {score}", trial.trial_id));
            }
            if trial.level != Some(level_for_score(score)) {
                return fail(format!("trial {}: level does not match score bin", trial.trial_id));
            }
            let slot = by_score.entry(score).or_default();
            match trial.visibility {
                Visibility::Public => slot.0 += 1,
                Visibility::Private => slot.1 += 1,
            }
        }

        let mut test_total = 0usize;
        for score in -5i32..=5 {
            let (public, private) = by_score.get(&score).copied().unwrap_or((0, 0));
            let total = public + private;
            if total != trials_for_score(score) {
                return fail(format!("score {score}: expected {} trials, found {total}", trials_for_score(score)));
            }
            if public.abs_diff(private) > 1 {
                return fail(format!("score {score}: visibility imbalance {public} vs {private}"));
            }
            test_total += total;
        }
        if test_total != TEST_TRIALS {
            return fail(format!("expected {TEST_TRIALS} test trials, found {test_total}"));
        }
        Ok(())
    }
}

/// Outcome of one trial; `action` is absent when the decision failed.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial_id: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<Action>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<DecisionOutput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct ReputationRunOutput {
    pub outcomes: Vec<TrialOutcome>,
    pub totals: RunTotals,
}

pub fn run_reputation(
    agent: &AgentSpec,
    trials: &TrialSet,
    env: &RunEnv,
) -> Result<ReputationRunOutput, ExperimentError> {
    let factory = spec_factory(agent, env.gateway, env.options)?;
    Ok(run_reputation_with(&factory, trials))
}

/// Runs every trial as an independent single decision; nothing crosses
/// trials, and the outcome order matches the trial set order.
pub fn run_reputation_with<'a, F>(factory: &F, trials: &TrialSet) -> ReputationRunOutput
where
    F: Fn() -> Box<dyn Agent + Send + 'a> + Sync,
{
    let results: Vec<(TrialOutcome, u64)> = trials
        .trials
        .par_iter()
        .map(|trial| {
            let mut agent = factory();
            let mut rng = stream_rng(trials.seed, &[NS_DECISION, u64::from(trial.trial_id)]);
            let ctx = DecisionContext::Reputation(trial);
            match agent.decide(&ctx, &mut rng) {
                Ok(action) => {
                    let entry = agent.take_decision_log().pop();
                    let retries = entry.as_ref().map_or(0, |e| u64::from(e.attempts.saturating_sub(1)));
                    (
                        TrialOutcome {
                            trial_id: trial.trial_id,
                            action: Some(action),
                            output: entry.map(|e| e.output),
                            error: None,
                        },
                        retries,
                    )
                }
                Err(err) => {
                    let retries = match &err {
                        AgentError::DecisionFailure { attempts, .. } => u64::from(attempts.saturating_sub(1)),
                        _ => 0,
                    };
                    (
                        TrialOutcome {
                            trial_id: trial.trial_id,
                            action: None,
                            output: None,
                            error: Some(err.to_string()),
                        },
                        retries,
                    )
                }
            }
        })
        .collect();

    let mut outcomes = Vec::with_capacity(results.len());
    let mut totals = RunTotals::default();
    for (outcome, retries) in results {
        totals.retries += retries;
        if outcome.action.is_none() {
            totals.excluded += 1;
        }
        outcomes.push(outcome);
    }
    ReputationRunOutput { outcomes, totals }
}
