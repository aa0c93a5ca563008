//! Behavioral estimators: cooperation rates at any granularity, regime
//! discrimination, conditional cooperation drop, reputation gradient,
//! observability effect, and first-defection rounds.
//!
//! All estimators ignore invalid records. Rates always travel with their
//! supporting counts, and cells with zero support are reported as undefined
//! rather than zero.

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::experiment::{
    ReputationLevel, SocietyLog, TrialOutcome, TrialSet, Visibility,
};
use crate::game::{joint_state, Action, EpisodeRecord, Side};
use crate::strategy::{Regime, ZdCondition};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty slice: {0}")]
    EmptySlice(String),
    #[error("missing regime data: {0}")]
    MissingRegime(String),
    #[error("conditional cooperation drop undefined: no support in state {0}")]
    UndefinedDrop(&'static str),
    #[error("missing reputation level data: {0}")]
    MissingLevel(String),
    #[error("missing visibility condition data: {0}")]
    MissingCondition(String),
    #[error("granularity {0} is not defined for this series")]
    UnsupportedGranularity(&'static str),
}

/// A cooperation count pair; the building block for every rate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub cooperations: u64,
    pub count: u64,
}

impl Tally {
    pub fn add(&mut self, action: Action) {
        self.count += 1;
        if action.is_cooperate() {
            self.cooperations += 1;
        }
    }

    pub fn merge(&mut self, other: Tally) {
        self.cooperations += other.cooperations;
        self.count += other.count;
    }

    pub fn rate(&self) -> Option<f64> {
        if self.count == 0 {
            None
        } else {
            Some(self.cooperations as f64 / self.count as f64)
        }
    }
}

/// Empirical cooperation rate over a non-empty action collection.
pub fn coop_rate<I>(actions: I) -> Result<f64, MetricsError>
where
    I: IntoIterator<Item = Action>,
{
    let mut tally = Tally::default();
    for action in actions {
        tally.add(action);
    }
    tally.rate().ok_or_else(|| MetricsError::EmptySlice("no actions in slice".into()))
}

fn valid(episodes: &[EpisodeRecord]) -> impl Iterator<Item = &EpisodeRecord> {
    episodes.iter().filter(|e| !e.invalid)
}

fn regime_of(tag: &str) -> Option<Regime> {
    ZdCondition::from_str(tag).ok().map(|c| c.regime())
}

/// Difference in pooled cooperation rates between generosity- and
/// extortion-tagged episodes, pooling all of the given seat's actions across
/// rounds and episodes within each regime.
pub fn regime_discrimination(episodes: &[EpisodeRecord], side: Side) -> Result<f64, MetricsError> {
    let mut generous = Tally::default();
    let mut extortionate = Tally::default();
    for episode in valid(episodes) {
        let tally = match regime_of(&episode.condition_tag) {
            Some(Regime::Generosity) => &mut generous,
            Some(Regime::Extortion) => &mut extortionate,
            None => continue,
        };
        for action in episode.actions(side) {
            tally.add(action);
        }
    }
    let generous_rate = generous
        .rate()
        .ok_or_else(|| MetricsError::MissingRegime("no valid generosity-regime actions".into()))?;
    let extortion_rate = extortionate
        .rate()
        .ok_or_else(|| MetricsError::MissingRegime("no valid extortion-regime actions".into()))?;
    Ok(generous_rate - extortion_rate)
}

/// The unweighted per-episode-mean variant of regime discrimination, emitted
/// alongside the pooled estimator for comparison.
pub fn regime_discrimination_episode_mean(
    episodes: &[EpisodeRecord],
    side: Side,
) -> Result<f64, MetricsError> {
    let mut generous: Vec<f64> = Vec::new();
    let mut extortionate: Vec<f64> = Vec::new();
    for episode in valid(episodes) {
        let bucket = match regime_of(&episode.condition_tag) {
            Some(Regime::Generosity) => &mut generous,
            Some(Regime::Extortion) => &mut extortionate,
            None => continue,
        };
        if let Ok(rate) = coop_rate(episode.actions(side)) {
            bucket.push(rate);
        }
    }
    if generous.is_empty() || extortionate.is_empty() {
        return Err(MetricsError::MissingRegime("a regime has no valid episodes".into()));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(mean(&generous) - mean(&extortionate))
}

/// One prior-state cell of the conditional cooperation table.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConditionalCell {
    pub rate: Option<f64>,
    pub cooperations: u64,
    pub count: u64,
}

/// Cooperation conditioned on the previous joint state, agent's action
/// listed first, over all rounds t >= 2 of valid episodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionalCooperation {
    pub table: BTreeMap<String, ConditionalCell>,
    /// `p(C | CC) - p(C | CD)`; undefined when either state lacks support.
    pub rho_drop: Option<f64>,
}

impl ConditionalCooperation {
    pub fn require_rho_drop(&self) -> Result<f64, MetricsError> {
        match self.rho_drop {
            Some(v) => Ok(v),
            None => {
                let missing = if self.table.get("CC").map_or(0, |c| c.count) == 0 { "CC" } else { "CD" };
                Err(MetricsError::UndefinedDrop(missing))
            }
        }
    }
}

pub fn conditional_cooperation(episodes: &[EpisodeRecord], side: Side) -> ConditionalCooperation {
    let mut tallies: BTreeMap<&'static str, Tally> = BTreeMap::new();
    for label in ["CC", "CD", "DC", "DD"] {
        tallies.insert(label, Tally::default());
    }
    for episode in valid(episodes) {
        for pair in episode.rounds.windows(2) {
            let state = joint_state(&pair[0], side);
            let action = match side {
                Side::A => pair[1].action_a,
                Side::B => pair[1].action_b,
            };
            tallies.get_mut(state.label()).expect("all four states present").add(action);
        }
    }
    let table: BTreeMap<String, ConditionalCell> = tallies
        .iter()
        .map(|(label, tally)| {
            (
                (*label).to_string(),
                ConditionalCell { rate: tally.rate(), cooperations: tally.cooperations, count: tally.count },
            )
        })
        .collect();
    let rho_drop = match (tallies["CC"].rate(), tallies["CD"].rate()) {
        (Some(cc), Some(cd)) => Some(cc - cd),
        _ => None,
    };
    ConditionalCooperation { table, rho_drop }
}

fn joined_outcomes<'a>(
    trials: &'a TrialSet,
    outcomes: &'a [TrialOutcome],
) -> impl Iterator<Item = (&'a crate::experiment::ReputationTrial, Action)> {
    let by_id: BTreeMap<u32, &crate::experiment::ReputationTrial> =
        trials.trials.iter().map(|t| (t.trial_id, t)).collect();
    outcomes
        .iter()
        .filter_map(move |o| Some((*by_id.get(&o.trial_id)?, o.action?)))
}

/// Cooperation toward high-reputation strangers minus cooperation toward
/// low-reputation ones; control and mid-level trials are excluded.
pub fn reputation_gradient(trials: &TrialSet, outcomes: &[TrialOutcome]) -> Result<f64, MetricsError> {
    let mut high = Tally::default();
    let mut low = Tally::default();
    for (trial, action) in joined_outcomes(trials, outcomes) {
        match trial.level {
            Some(ReputationLevel::High) => high.add(action),
            Some(ReputationLevel::Low) => low.add(action),
            _ => {}
        }
    }
    let high_rate = high.rate().ok_or_else(|| MetricsError::MissingLevel("no valid high-level outcomes".into()))?;
    let low_rate = low.rate().ok_or_else(|| MetricsError::MissingLevel("no valid low-level outcomes".into()))?;
    Ok(high_rate - low_rate)
}

/// The observability effect over test trials, with the control-trial
/// baseline reported alongside (`None` when no control outcome is valid).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservabilityEffect {
    pub e_omega: f64,
    pub control_rate: Option<f64>,
}

pub fn observability_effect(
    trials: &TrialSet,
    outcomes: &[TrialOutcome],
) -> Result<ObservabilityEffect, MetricsError> {
    let mut public = Tally::default();
    let mut private = Tally::default();
    let mut control = Tally::default();
    for (trial, action) in joined_outcomes(trials, outcomes) {
        if trial.is_control {
            control.add(action);
        } else {
            match trial.visibility {
                Visibility::Public => public.add(action),
                Visibility::Private => private.add(action),
            }
        }
    }
    let public_rate = public
        .rate()
        .ok_or_else(|| MetricsError::MissingCondition("no valid public test outcomes".into()))?;
    let private_rate = private
        .rate()
        .ok_or_else(|| MetricsError::MissingCondition("no valid private test outcomes".into()))?;
    Ok(ObservabilityEffect { e_omega: public_rate - private_rate, control_rate: control.rate() })
}

/// First round in which the given seat defects, or `horizon + 1` if it never
/// does.
pub fn first_defection(episode: &EpisodeRecord, side: Side) -> u32 {
    for round in &episode.rounds {
        let action = match side {
            Side::A => round.action_a,
            Side::B => round.action_b,
        };
        if action == Action::D {
            return round.round_index;
        }
    }
    episode.horizon + 1
}

/// One directed first-defection observation from a society log.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TauRecord {
    pub episode: u32,
    pub actor: u32,
    pub partner: u32,
    pub tau: u32,
}

/// First-defection rounds for every directed pair of every valid dyad.
pub fn society_tau_records(log: &SocietyLog) -> Vec<TauRecord> {
    let mut records = Vec::new();
    for episode in &log.episodes {
        for dyad in &episode.dyads {
            if dyad.record.invalid {
                continue;
            }
            records.push(TauRecord {
                episode: episode.episode_index,
                actor: dyad.agent_a,
                partner: dyad.agent_b,
                tau: first_defection(&dyad.record, Side::A),
            });
            records.push(TauRecord {
                episode: episode.episode_index,
                actor: dyad.agent_b,
                partner: dyad.agent_a,
                tau: first_defection(&dyad.record, Side::B),
            });
        }
    }
    records
}

/// Slicing granularities for [`aggregate`].
#[derive(Clone, Copy, Debug, Eq, PartialEq)]
pub enum Granularity {
    PerRound,
    PerEpisode,
    PerRole,
    PerComposition,
}

/// What to aggregate over.
pub enum Series<'a> {
    Dyadic { episodes: &'a [EpisodeRecord], side: Side },
    Society(&'a [SocietyLog]),
}

/// One labeled cell of an aggregate table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub label: String,
    pub cooperations: u64,
    pub count: u64,
    pub rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_tau: Option<f64>,
}

fn row(label: String, tally: Tally, mean_tau: Option<f64>) -> Option<RateRow> {
    tally.rate().map(|rate| RateRow {
        label,
        cooperations: tally.cooperations,
        count: tally.count,
        rate,
        mean_tau,
    })
}

/// Labeled rate (and, for societies, mean first-defection) tables.
/// Cells with zero support are omitted; an entirely empty result is an error.
pub fn aggregate(series: &Series, granularity: Granularity) -> Result<Vec<RateRow>, MetricsError> {
    let rows = match series {
        Series::Dyadic { episodes, side } => aggregate_dyadic(episodes, *side, granularity)?,
        Series::Society(logs) => aggregate_society(logs, granularity),
    };
    if rows.is_empty() {
        return Err(MetricsError::EmptySlice("no valid observations for any cell".into()));
    }
    Ok(rows)
}

fn aggregate_dyadic(
    episodes: &[EpisodeRecord],
    side: Side,
    granularity: Granularity,
) -> Result<Vec<RateRow>, MetricsError> {
    match granularity {
        Granularity::PerRound => {
            let max_round = valid(episodes).map(|e| e.rounds.len()).max().unwrap_or(0);
            let mut rows = Vec::new();
            for t in 1..=max_round {
                let mut tally = Tally::default();
                for episode in valid(episodes) {
                    if let Some(round) = episode.rounds.get(t - 1) {
                        tally.add(match side {
                            Side::A => round.action_a,
                            Side::B => round.action_b,
                        });
                    }
                }
                rows.extend(row(format!("t={t}"), tally, None));
            }
            Ok(rows)
        }
        Granularity::PerEpisode => {
            let mut rows = Vec::new();
            for episode in valid(episodes) {
                let mut tally = Tally::default();
                for action in episode.actions(side) {
                    tally.add(action);
                }
                let tau = f64::from(first_defection(episode, side));
                rows.extend(row(format!("g={}", episode.episode_index), tally, Some(tau)));
            }
            Ok(rows)
        }
        Granularity::PerRole => Err(MetricsError::UnsupportedGranularity("per-role (needs a society series)")),
        Granularity::PerComposition => {
            Err(MetricsError::UnsupportedGranularity("per-composition (needs a society series)"))
        }
    }
}

fn aggregate_society(logs: &[SocietyLog], granularity: Granularity) -> Vec<RateRow> {
    match granularity {
        Granularity::PerRound => {
            let max_round = logs.iter().map(|l| l.horizon as usize).max().unwrap_or(0);
            let mut rows = Vec::new();
            for t in 1..=max_round {
                let mut tally = Tally::default();
                for log in logs {
                    for episode in &log.episodes {
                        for dyad in episode.dyads.iter().filter(|d| !d.record.invalid) {
                            if let Some(round) = dyad.record.rounds.get(t - 1) {
                                tally.add(round.action_a);
                                tally.add(round.action_b);
                            }
                        }
                    }
                }
                rows.extend(row(format!("t={t}"), tally, None));
            }
            rows
        }
        Granularity::PerEpisode => {
            let mut rows = Vec::new();
            for log in logs {
                for episode in &log.episodes {
                    let mut tally = Tally::default();
                    let mut taus: Vec<f64> = Vec::new();
                    for dyad in episode.dyads.iter().filter(|d| !d.record.invalid) {
                        for round in &dyad.record.rounds {
                            tally.add(round.action_a);
                            tally.add(round.action_b);
                        }
                        taus.push(f64::from(first_defection(&dyad.record, Side::A)));
                        taus.push(f64::from(first_defection(&dyad.record, Side::B)));
                    }
                    let mean_tau = if taus.is_empty() {
                        None
                    } else {
                        Some(taus.iter().sum::<f64>() / taus.len() as f64)
                    };
                    rows.extend(row(
                        format!("{}/g={}", log.rc_mix.label(), episode.episode_index),
                        tally,
                        mean_tau,
                    ));
                }
            }
            rows
        }
        Granularity::PerRole => {
            let mut rows = Vec::new();
            for role in [crate::protocol::Persona::RationalPlayer, crate::protocol::Persona::ResilientCooperator] {
                let mut tally = Tally::default();
                let mut taus: Vec<f64> = Vec::new();
                for log in logs {
                    for episode in &log.episodes {
                        for dyad in episode.dyads.iter().filter(|d| !d.record.invalid) {
                            for (agent, side) in [(dyad.agent_a, Side::A), (dyad.agent_b, Side::B)] {
                                if log.personas[agent as usize] != role {
                                    continue;
                                }
                                for round in &dyad.record.rounds {
                                    tally.add(match side {
                                        Side::A => round.action_a,
                                        Side::B => round.action_b,
                                    });
                                }
                                taus.push(f64::from(first_defection(&dyad.record, side)));
                            }
                        }
                    }
                }
                let mean_tau = if taus.is_empty() {
                    None
                } else {
                    Some(taus.iter().sum::<f64>() / taus.len() as f64)
                };
                let label = match role {
                    crate::protocol::Persona::RationalPlayer => "RP",
                    crate::protocol::Persona::ResilientCooperator => "RC",
                };
                rows.extend(row(label.to_string(), tally, mean_tau));
            }
            rows
        }
        Granularity::PerComposition => {
            let mut rows = Vec::new();
            for log in logs {
                let mut tally = Tally::default();
                let mut taus: Vec<f64> = Vec::new();
                for episode in &log.episodes {
                    for dyad in episode.dyads.iter().filter(|d| !d.record.invalid) {
                        for round in &dyad.record.rounds {
                            tally.add(round.action_a);
                            tally.add(round.action_b);
                        }
                        taus.push(f64::from(first_defection(&dyad.record, Side::A)));
                        taus.push(f64::from(first_defection(&dyad.record, Side::B)));
                    }
                }
                let mean_tau = if taus.is_empty() {
                    None
                } else {
                    Some(taus.iter().sum::<f64>() / taus.len() as f64)
                };
                rows.extend(row(log.rc_mix.label().to_string(), tally, mean_tau));
            }
            rows
        }
    }
}

/// A rate plus its supporting counts, as exported in reports.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceRate {
    pub rate: f64,
    pub count: u64,
    pub cooperations: u64,
}

impl From<Tally> for Option<SliceRate> {
    fn from(tally: Tally) -> Self {
        tally.rate().map(|rate| SliceRate { rate, count: tally.count, cooperations: tally.cooperations })
    }
}

/// The combined estimator bundle for one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub p_hat_by_slice: BTreeMap<String, SliceRate>,
    pub delta_reg: Option<f64>,
    pub delta_reg_episode_mean: Option<f64>,
    pub rho_drop: Option<f64>,
    pub conditional_table: BTreeMap<String, ConditionalCell>,
    pub g_rep: Option<f64>,
    pub e_omega: Option<f64>,
    pub control_rate: Option<f64>,
    pub tau_records: Vec<TauRecord>,
    pub excluded_count: u64,
}

impl MetricReport {
    fn empty() -> Self {
        MetricReport {
            p_hat_by_slice: BTreeMap::new(),
            delta_reg: None,
            delta_reg_episode_mean: None,
            rho_drop: None,
            conditional_table: BTreeMap::new(),
            g_rep: None,
            e_omega: None,
            control_rate: None,
            tau_records: Vec::new(),
            excluded_count: 0,
        }
    }
}

/// Metric bundle for a direct-reciprocity run (agent on seat A).
pub fn direct_report(episodes: &[EpisodeRecord]) -> Result<MetricReport, MetricsError> {
    let mut report = MetricReport::empty();
    report.excluded_count = episodes.iter().filter(|e| e.invalid).count() as u64;

    let mut pooled = Tally::default();
    let mut by_condition: BTreeMap<String, Tally> = BTreeMap::new();
    let mut by_regime: BTreeMap<&'static str, Tally> = BTreeMap::new();
    for episode in valid(episodes) {
        for action in episode.actions(Side::A) {
            pooled.add(action);
            by_condition.entry(format!("condition:{}", episode.condition_tag)).or_default().add(action);
            if let Some(regime) = regime_of(&episode.condition_tag) {
                let label = match regime {
                    Regime::Generosity => "regime:generosity",
                    Regime::Extortion => "regime:extortion",
                };
                by_regime.entry(label).or_default().add(action);
            }
        }
    }
    if pooled.count == 0 {
        return Err(MetricsError::EmptySlice("no valid episodes".into()));
    }
    if let Some(slice) = Option::<SliceRate>::from(pooled) {
        report.p_hat_by_slice.insert("all".into(), slice);
    }
    for (label, tally) in by_condition.into_iter().chain(by_regime.into_iter().map(|(k, v)| (k.to_string(), v))) {
        if let Some(slice) = Option::<SliceRate>::from(tally) {
            report.p_hat_by_slice.insert(label, slice);
        }
    }

    report.delta_reg = regime_discrimination(episodes, Side::A).ok();
    report.delta_reg_episode_mean = regime_discrimination_episode_mean(episodes, Side::A).ok();
    let conditional = conditional_cooperation(episodes, Side::A);
    report.rho_drop = conditional.rho_drop;
    report.conditional_table = conditional.table;
    Ok(report)
}

/// Metric bundle for a reputation run.
pub fn reputation_report(trials: &TrialSet, outcomes: &[TrialOutcome]) -> Result<MetricReport, MetricsError> {
    let mut report = MetricReport::empty();
    report.excluded_count = outcomes.iter().filter(|o| o.action.is_none()).count() as u64;

    let mut slices: BTreeMap<String, Tally> = BTreeMap::new();
    let mut any = false;
    for (trial, action) in joined_outcomes(trials, outcomes) {
        any = true;
        if trial.is_control {
            slices.entry("control".into()).or_default().add(action);
            continue;
        }
        let visibility = match trial.visibility {
            Visibility::Public => "public",
            Visibility::Private => "private",
        };
        let level = match trial.level {
            Some(ReputationLevel::Low) => "low",
            Some(ReputationLevel::Mid) => "mid",
            Some(ReputationLevel::High) => "high",
            None => continue,
        };
        let score = trial.score.unwrap_or(0);
        slices.entry(format!("visibility:{visibility}")).or_default().add(action);
        slices.entry(format!("level:{level}")).or_default().add(action);
        slices.entry(format!("level:{level}/{visibility}")).or_default().add(action);
        slices.entry(format!("score:{score:+}")).or_default().add(action);
    }
    if !any {
        return Err(MetricsError::EmptySlice("no valid trial outcomes".into()));
    }
    for (label, tally) in slices {
        if let Some(slice) = Option::<SliceRate>::from(tally) {
            report.p_hat_by_slice.insert(label, slice);
        }
    }

    report.g_rep = reputation_gradient(trials, outcomes).ok();
    if let Ok(effect) = observability_effect(trials, outcomes) {
        report.e_omega = Some(effect.e_omega);
        report.control_rate = effect.control_rate;
    }
    Ok(report)
}

/// Metric bundle for a society run.
pub fn society_report(log: &SocietyLog) -> Result<MetricReport, MetricsError> {
    let mut report = MetricReport::empty();
    report.excluded_count = log
        .episodes
        .iter()
        .flat_map(|e| e.dyads.iter())
        .filter(|d| d.record.invalid)
        .count() as u64;

    let logs = std::slice::from_ref(log);
    let mut any = false;
    for (granularity, prefix) in [
        (Granularity::PerEpisode, "episode"),
        (Granularity::PerRound, "round"),
        (Granularity::PerRole, "role"),
    ] {
        if let Ok(rows) = aggregate(&Series::Society(logs), granularity) {
            for r in rows {
                any = true;
                report.p_hat_by_slice.insert(
                    format!("{prefix}:{}", r.label),
                    SliceRate { rate: r.rate, count: r.count, cooperations: r.cooperations },
                );
            }
        }
    }
    if !any {
        return Err(MetricsError::EmptySlice("no valid dyads in the society log".into()));
    }
    report.tau_records = society_tau_records(log);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{PayoffMatrix, RoundRecord};

    fn record(tag: &str, moves: &[(Action, Action)]) -> EpisodeRecord {
        let matrix = PayoffMatrix::default();
        EpisodeRecord {
            episode_index: 1,
            horizon: moves.len() as u32,
            rounds: moves
                .iter()
                .enumerate()
                .map(|(i, (a, b))| RoundRecord {
                    round_index: i as u32 + 1,
                    action_a: *a,
                    action_b: *b,
                    payoff_a: matrix.payoff(*a, *b),
                    payoff_b: matrix.payoff(*b, *a),
                })
                .collect(),
            condition_tag: tag.to_string(),
            seed: 0,
            invalid: false,
            failure: None,
        }
    }

    use Action::{C, D};

    #[test]
    fn coop_rate_counts_directly() {
        assert_eq!(coop_rate([C, C, C]).unwrap(), 1.0);
        assert_eq!(coop_rate([C, D, D, D]).unwrap(), 0.25);
        assert!(matches!(coop_rate([]), Err(MetricsError::EmptySlice(_))));
    }

    #[test]
    fn regime_discrimination_is_the_rate_difference() {
        // 0.8 cooperation under generosity, 0.3 under extortion.
        let episodes = vec![
            record("GM", &[(C, C), (C, C), (C, C), (C, C), (D, C)]),
            record("GS", &[(C, C), (C, C), (C, C), (C, C), (D, C)]),
            record("ES", &[(C, D), (D, D), (D, D), (D, D), (D, D)]),
            record("EM", &[(C, D), (C, D), (D, D), (D, D), (D, D)]),
        ];
        let delta = regime_discrimination(&episodes, Side::A).unwrap();
        assert!((delta - 0.5).abs() < 1e-12);

        let same = vec![record("GM", &[(C, C)]), record("ES", &[(C, D)])];
        assert_eq!(regime_discrimination(&same, Side::A).unwrap(), 0.0);

        let missing = vec![record("GM", &[(C, C)])];
        assert!(matches!(regime_discrimination(&missing, Side::A), Err(MetricsError::MissingRegime(_))));
    }

    #[test]
    fn invalid_episodes_are_excluded_everywhere() {
        let mut bad = record("GM", &[(D, D)]);
        bad.invalid = true;
        let episodes = vec![record("GM", &[(C, C)]), bad, record("ES", &[(D, D)])];
        let delta = regime_discrimination(&episodes, Side::A).unwrap();
        assert_eq!(delta, 1.0);
    }

    #[test]
    fn conditional_table_for_a_tft_trace() {
        // TFT against an alternator: states cover CC, CD, DC, DD.
        let episodes = vec![record(
            "ES",
            &[(C, D), (D, C), (C, D), (D, C), (C, C), (C, D), (D, D), (D, C)],
        )];
        let cc = conditional_cooperation(&episodes, Side::A);
        assert_eq!(cc.table["CC"].rate, Some(1.0));
        assert_eq!(cc.table["CD"].rate, Some(0.0));
        assert_eq!(cc.rho_drop, Some(1.0));
    }

    #[test]
    fn allc_trace_has_zero_drop() {
        let episodes = vec![record("GM", &[(C, C), (C, D), (C, C), (C, D)])];
        let cc = conditional_cooperation(&episodes, Side::A);
        assert_eq!(cc.rho_drop, Some(0.0));
        assert_eq!(cc.table["DC"].rate, None);
        assert_eq!(cc.table["DC"].count, 0);
    }

    #[test]
    fn unreachable_cc_state_leaves_the_drop_undefined() {
        // Against an unconditional defector the prior state is never CC.
        let episodes = vec![record("ES", &[(C, D), (D, D), (C, D), (D, D)])];
        let cc = conditional_cooperation(&episodes, Side::A);
        assert!(cc.table["CC"].count == 0);
        assert!(cc.rho_drop.is_none());
        assert!(matches!(cc.require_rho_drop(), Err(MetricsError::UndefinedDrop("CC"))));
    }

    #[test]
    fn first_defection_examples() {
        let episode = record("S0", &[(C, C), (C, C), (C, C), (D, C)]);
        assert_eq!(first_defection(&episode, Side::A), 4);
        assert_eq!(first_defection(&episode, Side::B), 5); // H + 1, never defected

        let immediate = record("S0", &[(D, D)]);
        assert_eq!(first_defection(&immediate, Side::A), 1);
    }

    #[test]
    fn pooled_rate_equals_count_weighted_round_rates() {
        let episodes = vec![
            record("ES", &[(C, D), (D, D), (C, D)]),
            record("ES", &[(D, D), (D, D)]),
            record("GM", &[(C, C), (C, C), (C, C)]),
        ];
        let rows = aggregate(&Series::Dyadic { episodes: &episodes, side: Side::A }, Granularity::PerRound).unwrap();
        let coops: u64 = rows.iter().map(|r| r.cooperations).sum();
        let counts: u64 = rows.iter().map(|r| r.count).sum();
        let pooled = coop_rate(episodes.iter().flat_map(|e| e.actions(Side::A))).unwrap();
        assert_eq!(coops as f64 / counts as f64, pooled);
    }

    #[test]
    fn metric_values_are_order_invariant() {
        let mut episodes = vec![
            record("GM", &[(C, C), (C, C), (D, C)]),
            record("GS", &[(C, C), (D, C), (C, C)]),
            record("ES", &[(C, D), (D, D), (D, D)]),
            record("EM", &[(D, D), (D, D), (C, D)]),
        ];
        let forward = regime_discrimination(&episodes, Side::A).unwrap();
        let drop_forward = conditional_cooperation(&episodes, Side::A).rho_drop;
        episodes.reverse();
        assert_eq!(regime_discrimination(&episodes, Side::A).unwrap(), forward);
        assert_eq!(conditional_cooperation(&episodes, Side::A).rho_drop, drop_forward);
    }
}
