//! The iterated prisoner's dilemma engine: actions, payoffs, and
//! simultaneous-move episode execution.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{Agent, AgentError, DecisionContext, DyadicContext, EpisodeHistoryBlock};
use crate::seed::stream_rng;

/// One of the two moves available each round: cooperate or defect.
#[derive(Clone, Copy, Debug, Eq, PartialEq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    C,
    D,
}

impl Action {
    pub fn as_str(&self) -> &'static str {
        match self {
            Action::C => "C",
            Action::D => "D",
        }
    }

    pub fn is_cooperate(&self) -> bool {
        matches!(self, Action::C)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Action {
    type Err = GameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "C" => Ok(Action::C),
            "D" => Ok(Action::D),
            other => Err(GameError::InvalidAction(other.to_string())),
        }
    }
}

#[derive(Debug, Error)]
pub enum GameError {
    #[error("invalid action token {0:?}, expected \"C\" or \"D\"")]
    InvalidAction(String),
    #[error("payoff matrix violates the dilemma ordering: {0}")]
    InvalidMatrix(String),
}

/// Payoff table for a symmetric 2x2 dilemma.
///
/// Construction enforces `T > R > P > S` and `2R > T + S`, so mutual
/// cooperation beats an alternating exploit cycle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix")]
pub struct PayoffMatrix {
    pub temptation: i64,
    pub reward: i64,
    pub punishment: i64,
    pub sucker: i64,
}

#[derive(Deserialize)]
struct RawMatrix {
    temptation: i64,
    reward: i64,
    punishment: i64,
    sucker: i64,
}

impl TryFrom<RawMatrix> for PayoffMatrix {
    type Error = GameError;

    fn try_from(raw: RawMatrix) -> Result<Self, GameError> {
        PayoffMatrix::new(raw.temptation, raw.reward, raw.punishment, raw.sucker)
    }
}

impl PayoffMatrix {
    pub fn new(temptation: i64, reward: i64, punishment: i64, sucker: i64) -> Result<Self, GameError> {
        if !(temptation > reward && reward > punishment && punishment > sucker) {
            return Err(GameError::InvalidMatrix(format!(
                "need T > R > P > S, got T={temptation} R={reward} P={punishment} S={sucker}"
            )));
        }
        if 2 * reward <= temptation + sucker {
            return Err(GameError::InvalidMatrix(format!(
                "need 2R > T + S, got R={reward} T={temptation} S={sucker}"
            )));
        }
        Ok(PayoffMatrix { temptation, reward, punishment, sucker })
    }

    /// Payoff earned by `own` against `other`, from `own`'s perspective.
    pub fn payoff(&self, own: Action, other: Action) -> i64 {
        match (own, other) {
            (Action::C, Action::C) => self.reward,
            (Action::C, Action::D) => self.sucker,
            (Action::D, Action::C) => self.temptation,
            (Action::D, Action::D) => self.punishment,
        }
    }
}

impl Default for PayoffMatrix {
    fn default() -> Self {
        PayoffMatrix::new(5, 3, 1, 0).expect("default matrix satisfies the dilemma ordering")
    }
}

/// The two seats in a dyadic episode.
#[derive(Clone, Copy, Debug, Eq, PartialEq, Hash, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

impl Side {
    pub fn other(&self) -> Side {
        match self {
            Side::A => Side::B,
            Side::B => Side::A,
        }
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Side::A => f.write_str("A"),
            Side::B => f.write_str("B"),
        }
    }
}

/// Previous-round joint action seen from one player's perspective.
///
/// The owner's action is always listed first, so the label `CD` means "I
/// cooperated, the other player defected".
#[derive(Clone, Copy, Debug, Eq, PartialEq, Hash, Serialize, Deserialize)]
pub struct JointState {
    pub own_prev: Action,
    pub other_prev: Action,
}

impl JointState {
    pub fn new(own_prev: Action, other_prev: Action) -> Self {
        JointState { own_prev, other_prev }
    }

    pub fn label(&self) -> &'static str {
        match (self.own_prev, self.other_prev) {
            (Action::C, Action::C) => "CC",
            (Action::C, Action::D) => "CD",
            (Action::D, Action::C) => "DC",
            (Action::D, Action::D) => "DD",
        }
    }

    /// The same round relabeled from the other player's perspective.
    pub fn swapped(&self) -> JointState {
        JointState { own_prev: self.other_prev, other_prev: self.own_prev }
    }
}

/// Joint state of a completed round, from the given seat's perspective.
pub fn joint_state(prev: &RoundRecord, perspective: Side) -> JointState {
    match perspective {
        Side::A => JointState::new(prev.action_a, prev.action_b),
        Side::B => JointState::new(prev.action_b, prev.action_a),
    }
}

/// One simultaneous round with both moves and both payoffs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round_index: u32,
    pub action_a: Action,
    pub action_b: Action,
    pub payoff_a: i64,
    pub payoff_b: i64,
}

/// Why an episode was aborted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeFailure {
    pub side: Side,
    pub round: u32,
    pub message: String,
}

/// One supergame between a fixed pair of agents.
///
/// Serializes to a single JSON object (one line in JSONL output). Aborted
/// episodes keep the rounds completed so far and carry `invalid: true`;
/// they are persisted but excluded from every metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode_index: u32,
    pub horizon: u32,
    pub rounds: Vec<RoundRecord>,
    pub condition_tag: String,
    pub seed: u64,
    pub invalid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<EpisodeFailure>,
}

impl EpisodeRecord {
    /// Actions played by one seat, in round order.
    pub fn actions(&self, side: Side) -> impl Iterator<Item = Action> + '_ {
        self.rounds.iter().map(move |r| match side {
            Side::A => r.action_a,
            Side::B => r.action_b,
        })
    }

    /// Mean per-round payoff for one seat.
    pub fn mean_payoff(&self, side: Side) -> f64 {
        if self.rounds.is_empty() {
            return 0.0;
        }
        let total: i64 = self
            .rounds
            .iter()
            .map(|r| match side {
                Side::A => r.payoff_a,
                Side::B => r.payoff_b,
            })
            .sum();
        total as f64 / self.rounds.len() as f64
    }
}

/// Everything an episode needs besides the two agents.
#[derive(Clone, Debug)]
pub struct EpisodeParams<'a> {
    pub episode_index: u32,
    pub horizon: u32,
    pub seed: u64,
    pub condition_tag: String,
    pub matrix: PayoffMatrix,
    /// Anonymized prior-episode context handed to seat A (society protocol).
    pub prior_a: Option<&'a [EpisodeHistoryBlock]>,
    /// Anonymized prior-episode context handed to seat B.
    pub prior_b: Option<&'a [EpisodeHistoryBlock]>,
}

impl<'a> EpisodeParams<'a> {
    pub fn new(episode_index: u32, horizon: u32, seed: u64, condition_tag: impl Into<String>) -> Self {
        assert!(horizon >= 1, "episodes must have at least one round");
        EpisodeParams {
            episode_index,
            horizon,
            seed,
            condition_tag: condition_tag.into(),
            matrix: PayoffMatrix::default(),
            prior_a: None,
            prior_b: None,
        }
    }
}

// Per-side stream tags under the episode seed.
const STREAM_SIDE_A: u64 = 0;
const STREAM_SIDE_B: u64 = 1;

/// Runs one episode of exactly `horizon` rounds.
///
/// Both decisions of a round are collected before either is revealed, and
/// each seat draws from its own RNG stream derived from the episode seed, so
/// the internal evaluation order cannot leak into outcomes. A decision
/// failure aborts the episode, which is returned marked invalid rather than
/// padded.
pub fn run_episode(agent_a: &mut dyn Agent, agent_b: &mut dyn Agent, params: &EpisodeParams) -> EpisodeRecord {
    run_episode_ordered(agent_a, agent_b, params, false)
}

fn run_episode_ordered(
    agent_a: &mut dyn Agent,
    agent_b: &mut dyn Agent,
    params: &EpisodeParams,
    evaluate_b_first: bool,
) -> EpisodeRecord {
    let mut rng_a = stream_rng(params.seed, &[STREAM_SIDE_A]);
    let mut rng_b = stream_rng(params.seed, &[STREAM_SIDE_B]);
    let mut history_a: Vec<Action> = Vec::with_capacity(params.horizon as usize);
    let mut history_b: Vec<Action> = Vec::with_capacity(params.horizon as usize);
    let mut rounds = Vec::with_capacity(params.horizon as usize);
    let mut failure = None;

    for round in 1..=params.horizon {
        let ctx_a = DecisionContext::Dyadic(DyadicContext {
            horizon: params.horizon,
            round,
            own_history: &history_a,
            opp_history: &history_b,
            prior_episodes: params.prior_a,
        });
        let ctx_b = DecisionContext::Dyadic(DyadicContext {
            horizon: params.horizon,
            round,
            own_history: &history_b,
            opp_history: &history_a,
            prior_episodes: params.prior_b,
        });

        let (result_a, result_b) = if evaluate_b_first {
            let b = agent_b.decide(&ctx_b, &mut rng_b);
            let a = agent_a.decide(&ctx_a, &mut rng_a);
            (a, b)
        } else {
            let a = agent_a.decide(&ctx_a, &mut rng_a);
            let b = agent_b.decide(&ctx_b, &mut rng_b);
            (a, b)
        };

        match (result_a, result_b) {
            (Ok(a), Ok(b)) => {
                rounds.push(RoundRecord {
                    round_index: round,
                    action_a: a,
                    action_b: b,
                    payoff_a: params.matrix.payoff(a, b),
                    payoff_b: params.matrix.payoff(b, a),
                });
                history_a.push(a);
                history_b.push(b);
            }
            (Err(err), _) => {
                failure = Some(describe_failure(Side::A, round, err));
                break;
            }
            (_, Err(err)) => {
                failure = Some(describe_failure(Side::B, round, err));
                break;
            }
        }
    }

    EpisodeRecord {
        episode_index: params.episode_index,
        horizon: params.horizon,
        rounds,
        condition_tag: params.condition_tag.clone(),
        seed: params.seed,
        invalid: failure.is_some(),
        failure,
    }
}

fn describe_failure(side: Side, round: u32, err: AgentError) -> EpisodeFailure {
    EpisodeFailure { side, round, message: err.to_string() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::ScriptedAgent;
    use crate::strategy::ScriptedStrategy;

    fn episode(a: ScriptedStrategy, b: ScriptedStrategy, horizon: u32, seed: u64) -> EpisodeRecord {
        let mut agent_a = ScriptedAgent::new(a);
        let mut agent_b = ScriptedAgent::new(b);
        run_episode(&mut agent_a, &mut agent_b, &EpisodeParams::new(1, horizon, seed, "test"))
    }

    #[test]
    fn payoff_matrix_corners() {
        let m = PayoffMatrix::default();
        assert_eq!(m.payoff(Action::C, Action::C), 3);
        assert_eq!(m.payoff(Action::D, Action::C), 5);
        assert_eq!(m.payoff(Action::D, Action::D), 1);
        assert_eq!(m.payoff(Action::C, Action::D), 0);
    }

    #[test]
    fn matrix_rejects_bad_orderings() {
        assert!(PayoffMatrix::new(3, 5, 1, 0).is_err()); // T < R
        assert!(PayoffMatrix::new(5, 3, 0, 1).is_err()); // P < S
        assert!(PayoffMatrix::new(8, 4, 1, 0).is_err()); // 2R == T + S
    }

    #[test]
    fn action_serialization_round_trips() {
        assert_eq!(serde_json::to_string(&Action::C).unwrap(), "\"C\"");
        assert_eq!(serde_json::from_str::<Action>("\"D\"").unwrap(), Action::D);
        assert_eq!("C".parse::<Action>().unwrap(), Action::C);
        assert!("X".parse::<Action>().is_err());
    }

    #[test]
    fn joint_state_perspectives() {
        let prev = RoundRecord { round_index: 1, action_a: Action::C, action_b: Action::D, payoff_a: 0, payoff_b: 5 };
        assert_eq!(joint_state(&prev, Side::A).label(), "CD");
        assert_eq!(joint_state(&prev, Side::B).label(), "DC");
        let dd = RoundRecord { round_index: 1, action_a: Action::D, action_b: Action::D, payoff_a: 1, payoff_b: 1 };
        assert_eq!(joint_state(&dd, Side::A).label(), "DD");
        assert_eq!(joint_state(&dd, Side::B).label(), "DD");
    }

    #[test]
    fn allc_vs_allc() {
        let rec = episode(ScriptedStrategy::AllC, ScriptedStrategy::AllC, 3, 9);
        assert_eq!(rec.rounds.len(), 3);
        for r in &rec.rounds {
            assert_eq!((r.action_a, r.action_b), (Action::C, Action::C));
            assert_eq!((r.payoff_a, r.payoff_b), (3, 3));
        }
    }

    #[test]
    fn alld_vs_allc_hits_matrix_corners() {
        let rec = episode(ScriptedStrategy::AllD, ScriptedStrategy::AllC, 2, 9);
        for r in &rec.rounds {
            assert_eq!(r.payoff_a, 5);
            assert_eq!(r.payoff_b, 0);
        }
    }

    #[test]
    fn tft_vs_alld_plays_c_then_d() {
        let rec = episode(ScriptedStrategy::TitForTat, ScriptedStrategy::AllD, 3, 9);
        let moves: Vec<Action> = rec.actions(Side::A).collect();
        assert_eq!(moves, vec![Action::C, Action::D, Action::D]);
    }

    #[test]
    fn round_payoff_sums_stay_in_the_feasible_set() {
        let rec = episode(ScriptedStrategy::RandomP(0.5), ScriptedStrategy::RandomP(0.5), 200, 11);
        for r in &rec.rounds {
            let sum = r.payoff_a + r.payoff_b;
            assert!(sum == 6 || sum == 5 || sum == 2, "round sum {sum} outside {{6,5,2}}");
        }
    }

    #[test]
    fn replay_is_bit_identical() {
        let first = episode(ScriptedStrategy::RandomP(0.3), ScriptedStrategy::RandomP(0.7), 50, 1234);
        let second = episode(ScriptedStrategy::RandomP(0.3), ScriptedStrategy::RandomP(0.7), 50, 1234);
        assert_eq!(first, second);
        let json_a = serde_json::to_string(&first).unwrap();
        let json_b = serde_json::to_string(&second).unwrap();
        assert_eq!(json_a, json_b);
    }

    #[test]
    fn evaluation_order_never_changes_outcomes() {
        for seed in 0..20 {
            let params = EpisodeParams::new(1, 40, seed, "order");
            let mut a1 = ScriptedAgent::new(ScriptedStrategy::RandomP(0.5));
            let mut b1 = ScriptedAgent::new(ScriptedStrategy::RandomP(0.5));
            let ab = run_episode_ordered(&mut a1, &mut b1, &params, false);
            let mut a2 = ScriptedAgent::new(ScriptedStrategy::RandomP(0.5));
            let mut b2 = ScriptedAgent::new(ScriptedStrategy::RandomP(0.5));
            let ba = run_episode_ordered(&mut a2, &mut b2, &params, true);
            assert_eq!(ab, ba);
        }
    }

    struct FailingAgent;

    impl Agent for FailingAgent {
        fn decide(
            &mut self,
            _ctx: &DecisionContext,
            _rng: &mut dyn rand::RngCore,
        ) -> Result<Action, AgentError> {
            Err(AgentError::DecisionFailure { attempts: 3, last_error: "no valid action".into() })
        }
    }

    #[test]
    fn decision_failure_aborts_and_marks_invalid() {
        let mut a = ScriptedAgent::new(ScriptedStrategy::AllC);
        let mut b = FailingAgent;
        let rec = run_episode(&mut a, &mut b, &EpisodeParams::new(1, 5, 0, "abort"));
        assert!(rec.invalid);
        assert!(rec.rounds.is_empty());
        let failure = rec.failure.expect("failure recorded");
        assert_eq!(failure.side, Side::B);
        assert_eq!(failure.round, 1);
    }
}
