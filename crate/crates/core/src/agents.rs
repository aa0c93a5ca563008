//! Agent implementations behind the decision contract: scripted strategies
//! for deterministic verification and remote model agents over the gateway.

use rand::{Rng, RngCore};
use thiserror::Error;

use crate::game::{Action, JointState};
use crate::gateway::{Gateway, ModelEndpoint, SamplingConfig};
use crate::protocol::{
    build_dyadic_prompt, build_reputation_prompt, build_society_prompt, parse_decision, Agent,
    AgentError, AgentKind, AgentSpec, CrossEpisodeFormat, DecisionContext, DecisionLogEntry,
    FramingPlacement, PromptBundle, PromptStyle,
};
use crate::strategy::{next_action, MemoryOneStrategy, ScriptedStrategy};

/// Protocol-level options shared by every remote agent in a run.
#[derive(Clone, Copy, Debug)]
pub struct ProtocolOptions {
    pub sampling: SamplingConfig,
    pub framing_placement: FramingPlacement,
    pub cross_episode_format: CrossEpisodeFormat,
    /// Re-queries allowed after a parse failure before giving up.
    pub parse_retries: u32,
}

impl Default for ProtocolOptions {
    fn default() -> Self {
        ProtocolOptions {
            sampling: SamplingConfig::default(),
            framing_placement: FramingPlacement::default(),
            cross_episode_format: CrossEpisodeFormat::default(),
            parse_retries: 2,
        }
    }
}

#[derive(Debug, Error)]
pub enum InstantiateError {
    #[error("remote agents need a gateway handle")]
    GatewayRequired,
}

/// Builds a fresh agent for one episode or trial.
pub fn instantiate<'g>(
    spec: &AgentSpec,
    gateway: Option<&'g Gateway>,
    options: &ProtocolOptions,
) -> Result<Box<dyn Agent + Send + 'g>, InstantiateError> {
    match &spec.kind {
        AgentKind::Scripted(strategy) => Ok(Box::new(ScriptedAgent::new(*strategy))),
        AgentKind::MemoryOne(strategy) => Ok(Box::new(ScriptedAgent::memory_one(*strategy))),
        AgentKind::Remote(remote) => {
            let gateway = gateway.ok_or(InstantiateError::GatewayRequired)?;
            Ok(Box::new(RemoteAgent::new(
                gateway,
                remote.endpoint.clone(),
                PromptStyle {
                    persona: spec.persona,
                    framing: spec.framing,
                    framing_placement: options.framing_placement,
                    model_class: remote.model_class,
                },
                *options,
            )))
        }
    }
}

/// A deterministic (or seeded-stochastic) decision source. Persona and
/// framing have no effect here; scripted agents never render prompts.
#[derive(Clone, Debug)]
pub struct ScriptedAgent {
    kind: ScriptedKind,
}

#[derive(Clone, Debug)]
enum ScriptedKind {
    Scripted(ScriptedStrategy),
    MemoryOne(MemoryOneStrategy),
}

impl ScriptedAgent {
    pub fn new(strategy: ScriptedStrategy) -> Self {
        ScriptedAgent { kind: ScriptedKind::Scripted(strategy) }
    }

    pub fn memory_one(strategy: MemoryOneStrategy) -> Self {
        ScriptedAgent { kind: ScriptedKind::MemoryOne(strategy) }
    }
}

impl Agent for ScriptedAgent {
    fn decide(&mut self, ctx: &DecisionContext, rng: &mut dyn RngCore) -> Result<Action, AgentError> {
        let (own, opp): (&[Action], &[Action]) = match ctx {
            DecisionContext::Dyadic(d) => (d.own_history, d.opp_history),
            // A reputation trial is a fresh single round: no history exists.
            DecisionContext::Reputation(_) => (&[], &[]),
        };
        Ok(match &self.kind {
            ScriptedKind::MemoryOne(strategy) => {
                let prev = own
                    .last()
                    .zip(opp.last())
                    .map(|(o, t)| JointState::new(*o, *t));
                next_action(strategy, prev, rng)
            }
            ScriptedKind::Scripted(strategy) => match strategy {
                ScriptedStrategy::AllC => Action::C,
                ScriptedStrategy::AllD => Action::D,
                ScriptedStrategy::TitForTat => opp.last().copied().unwrap_or(Action::C),
                ScriptedStrategy::GrimTrigger => {
                    if opp.contains(&Action::D) {
                        Action::D
                    } else {
                        Action::C
                    }
                }
                ScriptedStrategy::RandomP(p) => {
                    if rng.gen::<f64>() < *p {
                        Action::C
                    } else {
                        Action::D
                    }
                }
            },
        })
    }
}

/// A remote model agent: builds the context-appropriate prompt, queries the
/// gateway, and parses the response. Parse failures are retried with the
/// same prompt up to the configured budget, then surface as a decision
/// failure; every attempt stays in the gateway transcript.
pub struct RemoteAgent<'g> {
    gateway: &'g Gateway,
    endpoint: ModelEndpoint,
    style: PromptStyle,
    options: ProtocolOptions,
    log: Vec<DecisionLogEntry>,
}

impl<'g> RemoteAgent<'g> {
    pub fn new(gateway: &'g Gateway, endpoint: ModelEndpoint, style: PromptStyle, options: ProtocolOptions) -> Self {
        RemoteAgent { gateway, endpoint, style, options, log: Vec::new() }
    }

    fn build_prompt(&self, ctx: &DecisionContext) -> PromptBundle {
        match ctx {
            DecisionContext::Reputation(trial) => build_reputation_prompt(trial, self.style.model_class),
            DecisionContext::Dyadic(d) => match d.prior_episodes {
                Some(blocks) => build_society_prompt(
                    &self.style,
                    d.horizon,
                    d.own_history,
                    d.opp_history,
                    blocks,
                    self.options.cross_episode_format,
                ),
                None => build_dyadic_prompt(&self.style, d.horizon, d.own_history, d.opp_history),
            },
        }
    }
}

impl Agent for RemoteAgent<'_> {
    fn decide(&mut self, ctx: &DecisionContext, _rng: &mut dyn RngCore) -> Result<Action, AgentError> {
        let bundle = self.build_prompt(ctx);
        let mut request_ids = Vec::new();
        let mut last_error = String::new();
        let max_attempts = 1 + self.options.parse_retries;

        for attempt in 1..=max_attempts {
            let outcome = self
                .gateway
                .chat_complete(&self.endpoint, &bundle, &self.options.sampling)
                .map_err(|err| AgentError::DecisionFailure {
                    attempts: attempt,
                    last_error: err.to_string(),
                })?;
            request_ids.push(outcome.request_id);
            match parse_decision(&outcome.text, self.style.model_class) {
                Ok(output) => {
                    let choice = output.choice;
                    self.log.push(DecisionLogEntry {
                        context_label: ctx.label(),
                        choice,
                        output,
                        attempts: attempt,
                        request_ids: std::mem::take(&mut request_ids),
                    });
                    return Ok(choice);
                }
                Err(err) => last_error = err.to_string(),
            }
        }
        Err(AgentError::DecisionFailure { attempts: max_attempts, last_error })
    }

    fn take_decision_log(&mut self) -> Vec<DecisionLogEntry> {
        std::mem::take(&mut self.log)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{run_episode, EpisodeParams, Side};
    use crate::protocol::{telemetry, Framing, ModelClass, Persona};
    use crate::strategy::zd_params;
    use crate::strategy::ZdCondition;

    fn run_scripted(spec: &AgentSpec, seed: u64) -> Vec<Action> {
        let mut agent = instantiate(spec, None, &ProtocolOptions::default()).unwrap();
        let mut opponent = ScriptedAgent::memory_one(zd_params(ZdCondition::StrongExtortion));
        let record = run_episode(agent.as_mut(), &mut opponent, &EpisodeParams::new(1, 20, seed, "t"));
        record.actions(Side::A).collect()
    }

    #[test]
    fn scripted_agents_ignore_persona_and_framing() {
        for strategy in [ScriptedStrategy::TitForTat, ScriptedStrategy::RandomP(0.4), ScriptedStrategy::GrimTrigger] {
            let plain = AgentSpec::scripted(strategy);
            let dressed = AgentSpec {
                kind: AgentKind::Scripted(strategy),
                persona: Persona::ResilientCooperator,
                framing: Framing::LongHorizon,
            };
            assert_eq!(run_scripted(&plain, 77), run_scripted(&dressed, 77));
        }
    }

    #[test]
    fn scripted_agents_never_build_prompts_or_parse() {
        let before_prompts = telemetry::prompt_builds();
        let before_parses = telemetry::parse_calls();
        let spec = AgentSpec::scripted(ScriptedStrategy::TitForTat);
        let _ = run_scripted(&spec, 5);
        assert_eq!(telemetry::prompt_builds(), before_prompts);
        assert_eq!(telemetry::parse_calls(), before_parses);
    }

    #[test]
    fn grim_defects_forever_after_first_betrayal() {
        let mut grim = ScriptedAgent::new(ScriptedStrategy::GrimTrigger);
        let mut once = OneShotDefector { fired: false };
        let record = run_episode(&mut grim, &mut once, &EpisodeParams::new(1, 6, 3, "grim"));
        let moves: Vec<Action> = record.actions(Side::A).collect();
        assert_eq!(
            moves,
            vec![Action::C, Action::D, Action::D, Action::D, Action::D, Action::D]
        );
    }

    struct OneShotDefector {
        fired: bool,
    }

    impl Agent for OneShotDefector {
        fn decide(&mut self, _ctx: &DecisionContext, _rng: &mut dyn RngCore) -> Result<Action, AgentError> {
            if self.fired {
                Ok(Action::C)
            } else {
                self.fired = true;
                Ok(Action::D)
            }
        }
    }

    #[test]
    fn memory_one_tft_matches_scripted_tft() {
        let vector = ScriptedStrategy::TitForTat.as_memory_one().unwrap();
        for seed in [1u64, 9, 42] {
            let mut scripted = ScriptedAgent::new(ScriptedStrategy::TitForTat);
            let mut opponent = ScriptedAgent::new(ScriptedStrategy::RandomP(0.5));
            let a = run_episode(&mut scripted, &mut opponent, &EpisodeParams::new(1, 30, seed, "m1"));
            let mut encoded = ScriptedAgent::memory_one(vector);
            let mut opponent = ScriptedAgent::new(ScriptedStrategy::RandomP(0.5));
            let b = run_episode(&mut encoded, &mut opponent, &EpisodeParams::new(1, 30, seed, "m1"));
            assert_eq!(a, b);
        }
    }

    #[test]
    fn remote_spec_without_gateway_is_rejected() {
        let spec = AgentSpec {
            kind: AgentKind::Remote(crate::protocol::RemoteSpec {
                endpoint: ModelEndpoint::new("http://127.0.0.1:1", "m").unwrap(),
                model_class: ModelClass::InstructionTuned,
            }),
            persona: Persona::RationalPlayer,
            framing: Framing::Baseline,
        };
        assert!(matches!(
            instantiate(&spec, None, &ProtocolOptions::default()),
            Err(InstantiateError::GatewayRequired)
        ));
    }
}
