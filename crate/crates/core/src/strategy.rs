//! Memory-one strategies, the zero-determinant opponent table, and an
//! analytic Markov-chain oracle for long-run cooperation rates and payoffs.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{Action, JointState, PayoffMatrix};

/// State indexing used throughout this module: player-1 perspective,
/// ordered `[CC, CD, DC, DD]` with player 1's action listed first.
pub const STATE_LABELS: [&str; 4] = ["CC", "CD", "DC", "DD"];

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error("probability {value} out of [0, 1] for {field}")]
    InvalidProbability { field: &'static str, value: f64 },
    #[error("long-run averaging did not stabilize within {0} iterations")]
    NonConvergence(usize),
    #[error("unknown condition code {0:?}")]
    UnknownCondition(String),
    #[error("strategy table is missing condition {0}")]
    MissingCondition(ZdCondition),
    #[error("failed to read strategy table: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse strategy table: {0}")]
    Parse(#[from] serde_json::Error),
}

/// A strategy whose cooperation probability depends only on the previous
/// round's joint action, plus an initial probability for round one.
///
/// State labels are read from this strategy's own perspective: `p_cd` is the
/// probability of cooperating after it played C and the opponent played D.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMemoryOne")]
pub struct MemoryOneStrategy {
    #[serde(rename = "p0")]
    pub p0: f64,
    #[serde(rename = "pCC")]
    pub p_cc: f64,
    #[serde(rename = "pCD")]
    pub p_cd: f64,
    #[serde(rename = "pDC")]
    pub p_dc: f64,
    #[serde(rename = "pDD")]
    pub p_dd: f64,
}

#[derive(Deserialize)]
struct RawMemoryOne {
    #[serde(rename = "p0")]
    p0: f64,
    #[serde(rename = "pCC")]
    p_cc: f64,
    #[serde(rename = "pCD")]
    p_cd: f64,
    #[serde(rename = "pDC")]
    p_dc: f64,
    #[serde(rename = "pDD")]
    p_dd: f64,
}

impl TryFrom<RawMemoryOne> for MemoryOneStrategy {
    type Error = StrategyError;

    fn try_from(raw: RawMemoryOne) -> Result<Self, StrategyError> {
        MemoryOneStrategy::new(raw.p0, raw.p_cc, raw.p_cd, raw.p_dc, raw.p_dd)
    }
}

impl MemoryOneStrategy {
    pub fn new(p0: f64, p_cc: f64, p_cd: f64, p_dc: f64, p_dd: f64) -> Result<Self, StrategyError> {
        for (field, value) in [("p0", p0), ("pCC", p_cc), ("pCD", p_cd), ("pDC", p_dc), ("pDD", p_dd)] {
            if !(0.0..=1.0).contains(&value) || value.is_nan() {
                return Err(StrategyError::InvalidProbability { field: match field {
                    "p0" => "p0",
                    "pCC" => "pCC",
                    "pCD" => "pCD",
                    "pDC" => "pDC",
                    _ => "pDD",
                }, value });
            }
        }
        Ok(MemoryOneStrategy { p0, p_cc, p_cd, p_dc, p_dd })
    }

    /// Probability of cooperating given the previous joint state seen from
    /// this strategy's own perspective; `None` means round one.
    pub fn prob_cooperate(&self, prev: Option<JointState>) -> f64 {
        match prev {
            None => self.p0,
            Some(state) => match (state.own_prev, state.other_prev) {
                (Action::C, Action::C) => self.p_cc,
                (Action::C, Action::D) => self.p_cd,
                (Action::D, Action::C) => self.p_dc,
                (Action::D, Action::D) => self.p_dd,
            },
        }
    }
}

/// Samples the next action for a memory-one strategy.
pub fn next_action(strategy: &MemoryOneStrategy, prev: Option<JointState>, rng: &mut dyn RngCore) -> Action {
    let p = strategy.prob_cooperate(prev);
    if rng.gen::<f64>() < p {
        Action::C
    } else {
        Action::D
    }
}

/// The two zero-determinant regimes.
#[derive(Clone, Copy, Debug, Eq, PartialEq, Hash, Serialize, Deserialize)]
pub enum Regime {
    Extortion,
    Generosity,
}

/// The four fixed zero-determinant opponent conditions.
#[derive(Clone, Copy, Debug, Eq, PartialEq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ZdCondition {
    #[serde(rename = "ES")]
    StrongExtortion,
    #[serde(rename = "EM")]
    MildExtortion,
    #[serde(rename = "GM")]
    MildGenerosity,
    #[serde(rename = "GS")]
    StrongGenerosity,
}

impl ZdCondition {
    pub const ALL: [ZdCondition; 4] = [
        ZdCondition::StrongExtortion,
        ZdCondition::MildExtortion,
        ZdCondition::MildGenerosity,
        ZdCondition::StrongGenerosity,
    ];

    pub fn code(&self) -> &'static str {
        match self {
            ZdCondition::StrongExtortion => "ES",
            ZdCondition::MildExtortion => "EM",
            ZdCondition::MildGenerosity => "GM",
            ZdCondition::StrongGenerosity => "GS",
        }
    }

    pub fn regime(&self) -> Regime {
        match self {
            ZdCondition::StrongExtortion | ZdCondition::MildExtortion => Regime::Extortion,
            ZdCondition::MildGenerosity | ZdCondition::StrongGenerosity => Regime::Generosity,
        }
    }
}

impl fmt::Display for ZdCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for ZdCondition {
    type Err = StrategyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ES" => Ok(ZdCondition::StrongExtortion),
            "EM" => Ok(ZdCondition::MildExtortion),
            "GM" => Ok(ZdCondition::MildGenerosity),
            "GS" => Ok(ZdCondition::StrongGenerosity),
            other => Err(StrategyError::UnknownCondition(other.to_string())),
        }
    }
}

/// The built-in parameterization for a condition.
pub fn zd_params(condition: ZdCondition) -> MemoryOneStrategy {
    let (p0, p_cc, p_cd, p_dc, p_dd) = match condition {
        ZdCondition::StrongExtortion => (0.000, 0.692, 0.000, 0.538, 0.000),
        ZdCondition::MildExtortion => (0.000, 0.857, 0.000, 0.786, 0.000),
        ZdCondition::MildGenerosity => (1.000, 1.000, 0.077, 1.000, 0.154),
        ZdCondition::StrongGenerosity => (1.000, 1.000, 0.182, 1.000, 0.364),
    };
    MemoryOneStrategy::new(p0, p_cc, p_cd, p_dc, p_dd).expect("built-in table entries are valid")
}

/// A full condition-to-strategy table, overridable from a JSON config so
/// alternative parameterizations can be swapped in.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ZdTable(BTreeMap<ZdCondition, MemoryOneStrategy>);

impl ZdTable {
    pub fn builtin() -> Self {
        ZdTable(ZdCondition::ALL.iter().map(|c| (*c, zd_params(*c))).collect())
    }

    pub fn from_reader(reader: impl Read) -> Result<Self, StrategyError> {
        let table: ZdTable = serde_json::from_reader(reader)?;
        for condition in ZdCondition::ALL {
            if !table.0.contains_key(&condition) {
                return Err(StrategyError::MissingCondition(condition));
            }
        }
        Ok(table)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, StrategyError> {
        Self::from_reader(File::open(path)?)
    }

    pub fn get(&self, condition: ZdCondition) -> MemoryOneStrategy {
        self.0[&condition]
    }
}

impl Default for ZdTable {
    fn default() -> Self {
        ZdTable::builtin()
    }
}

/// Deterministic baseline strategies for verification runs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ScriptedStrategy {
    #[serde(rename = "ALLC")]
    AllC,
    #[serde(rename = "ALLD")]
    AllD,
    #[serde(rename = "TFT")]
    TitForTat,
    #[serde(rename = "GRIM")]
    GrimTrigger,
    #[serde(rename = "RandomP")]
    RandomP(f64),
}

impl ScriptedStrategy {
    /// The equivalent memory-one vector, where one exists. The grim trigger
    /// is an automaton with memory and is simulated directly instead.
    pub fn as_memory_one(&self) -> Option<MemoryOneStrategy> {
        let (p0, p_cc, p_cd, p_dc, p_dd) = match self {
            ScriptedStrategy::AllC => (1.0, 1.0, 1.0, 1.0, 1.0),
            ScriptedStrategy::AllD => (0.0, 0.0, 0.0, 0.0, 0.0),
            ScriptedStrategy::TitForTat => (1.0, 1.0, 0.0, 1.0, 0.0),
            ScriptedStrategy::RandomP(p) => (*p, *p, *p, *p, *p),
            ScriptedStrategy::GrimTrigger => return None,
        };
        Some(MemoryOneStrategy::new(p0, p_cc, p_cd, p_dc, p_dd).expect("baseline vectors are valid"))
    }
}

/// Exact 4x4 transition matrix of the joint chain induced by two memory-one
/// strategies, rows and columns indexed `[CC, CD, DC, DD]` in player-1
/// perspective.
pub fn transition_matrix(first: &MemoryOneStrategy, second: &MemoryOneStrategy) -> [[f64; 4]; 4] {
    let states = [
        (Action::C, Action::C),
        (Action::C, Action::D),
        (Action::D, Action::C),
        (Action::D, Action::D),
    ];
    let mut matrix = [[0.0; 4]; 4];
    for (i, (a1, a2)) in states.iter().enumerate() {
        let q1 = first.prob_cooperate(Some(JointState::new(*a1, *a2)));
        let q2 = second.prob_cooperate(Some(JointState::new(*a2, *a1)));
        matrix[i] = joint_probs(q1, q2);
    }
    matrix
}

/// Distribution over round-one joint actions, from the initial probabilities.
pub fn round_one_distribution(first: &MemoryOneStrategy, second: &MemoryOneStrategy) -> [f64; 4] {
    joint_probs(first.p0, second.p0)
}

fn joint_probs(q1: f64, q2: f64) -> [f64; 4] {
    [q1 * q2, q1 * (1.0 - q2), (1.0 - q1) * q2, (1.0 - q1) * (1.0 - q2)]
}

const AVERAGING_TOLERANCE: f64 = 1e-10;
const AVERAGING_BUDGET: usize = 1_000_000;

/// Long-run average distribution over joint states `[CC, CD, DC, DD]` from
/// player 1's perspective, seeded from the round-one distribution.
///
/// Iterates the averaged operator `v <- (v + vT) / 2`, whose fixed point is
/// the Cesaro (long-run average) limit of the chain from the same start; the
/// averaging step damps period-two rotation so absorbing, periodic, and
/// reducible chains all stabilize geometrically.
pub fn stationary_distribution(
    first: &MemoryOneStrategy,
    second: &MemoryOneStrategy,
) -> Result<[f64; 4], StrategyError> {
    let matrix = transition_matrix(first, second);
    let mut dist = round_one_distribution(first, second);
    for _ in 0..AVERAGING_BUDGET {
        let stepped = advance(&dist, &matrix);
        let mut next = [0.0; 4];
        let mut delta: f64 = 0.0;
        for i in 0..4 {
            next[i] = 0.5 * (dist[i] + stepped[i]);
            delta = delta.max((next[i] - dist[i]).abs());
        }
        dist = next;
        if delta < AVERAGING_TOLERANCE {
            let total: f64 = dist.iter().sum();
            for value in &mut dist {
                *value /= total;
            }
            return Ok(dist);
        }
    }
    Err(StrategyError::NonConvergence(AVERAGING_BUDGET))
}

fn advance(dist: &[f64; 4], matrix: &[[f64; 4]; 4]) -> [f64; 4] {
    let mut next = [0.0; 4];
    for (i, weight) in dist.iter().enumerate() {
        for j in 0..4 {
            next[j] += weight * matrix[i][j];
        }
    }
    next
}

/// Long-run per-round cooperation rates `(player 1, player 2)` under the
/// stationary distribution.
pub fn stationary_coop_rates(
    first: &MemoryOneStrategy,
    second: &MemoryOneStrategy,
) -> Result<(f64, f64), StrategyError> {
    let dist = stationary_distribution(first, second)?;
    Ok((dist[0] + dist[1], dist[0] + dist[2]))
}

/// Long-run per-round expected payoffs `(player 1, player 2)`.
pub fn expected_payoffs(
    first: &MemoryOneStrategy,
    second: &MemoryOneStrategy,
    matrix: &PayoffMatrix,
) -> Result<(f64, f64), StrategyError> {
    let dist = stationary_distribution(first, second)?;
    Ok(payoffs_under(&dist, matrix))
}

fn payoffs_under(dist: &[f64; 4], matrix: &PayoffMatrix) -> (f64, f64) {
    let states = [
        (Action::C, Action::C),
        (Action::C, Action::D),
        (Action::D, Action::C),
        (Action::D, Action::D),
    ];
    let mut first = 0.0;
    let mut second = 0.0;
    for (weight, (a1, a2)) in dist.iter().zip(states.iter()) {
        first += weight * matrix.payoff(*a1, *a2) as f64;
        second += weight * matrix.payoff(*a2, *a1) as f64;
    }
    (first, second)
}

/// Exact expected per-round cooperation rates over a finite horizon,
/// averaging the transient chain rather than its limit. Used as the oracle
/// for short-episode protocols where the round-one transient still matters.
pub fn expected_coop_over_horizon(
    first: &MemoryOneStrategy,
    second: &MemoryOneStrategy,
    horizon: u32,
) -> (f64, f64) {
    let mut coop = (0.0, 0.0);
    for_each_round_distribution(first, second, horizon, |dist| {
        coop.0 += dist[0] + dist[1];
        coop.1 += dist[0] + dist[2];
    });
    (coop.0 / horizon as f64, coop.1 / horizon as f64)
}

/// Exact expected per-round payoffs over a finite horizon.
pub fn expected_payoffs_over_horizon(
    first: &MemoryOneStrategy,
    second: &MemoryOneStrategy,
    matrix: &PayoffMatrix,
    horizon: u32,
) -> (f64, f64) {
    let mut totals = (0.0, 0.0);
    for_each_round_distribution(first, second, horizon, |dist| {
        let (a, b) = payoffs_under(dist, matrix);
        totals.0 += a;
        totals.1 += b;
    });
    (totals.0 / horizon as f64, totals.1 / horizon as f64)
}

fn for_each_round_distribution(
    first: &MemoryOneStrategy,
    second: &MemoryOneStrategy,
    horizon: u32,
    mut visit: impl FnMut(&[f64; 4]),
) {
    assert!(horizon >= 1);
    let matrix = transition_matrix(first, second);
    let mut dist = round_one_distribution(first, second);
    visit(&dist);
    for _ in 1..horizon {
        dist = advance(&dist, &matrix);
        visit(&dist);
    }
}
