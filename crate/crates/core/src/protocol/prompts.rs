//! Prompt construction for the three protocols.
//!
//! Templates are stored as text resources with named placeholders; assembly
//! joins blocks with blank lines and always appends the output-format block
//! for the agent's model class, so the user text ends with it.

use crate::experiment::{ReputationTrial, Visibility};
use crate::game::Action;

use super::telemetry;
use super::{
    CrossEpisodeFormat, EpisodeHistoryBlock, Framing, FramingPlacement, ModelClass, Persona,
    PromptBundle, PromptStyle,
};

const SYSTEM_BASE: &str = include_str!("templates/system_base.txt");
const USER_DYADIC: &str = include_str!("templates/user_dyadic.txt");
const FRAMING_LONG_HORIZON: &str = include_str!("templates/framing_long_horizon.txt");
const PERSONA_RESILIENT_COOPERATOR: &str = include_str!("templates/persona_resilient_cooperator.txt");
const OUTPUT_INSTRUCTION_TUNED: &str = include_str!("templates/output_instruction_tuned.txt");
const OUTPUT_REASONING: &str = include_str!("templates/output_reasoning.txt");
const USER_REPUTATION_BASE: &str = include_str!("templates/user_reputation_base.txt");
const REPUTATION_SITUATION: &str = include_str!("templates/reputation_situation.txt");
const NOTICE_PUBLIC: &str = include_str!("templates/notice_public.txt");
const NOTICE_PRIVATE: &str = include_str!("templates/notice_private.txt");
const SOCIETY_HISTORIES_FULL: &str = include_str!("templates/society_histories_full.txt");
const SOCIETY_HISTORIES_COUNTS: &str = include_str!("templates/society_histories_counts.txt");

fn output_block(class: ModelClass) -> &'static str {
    match class {
        ModelClass::InstructionTuned => OUTPUT_INSTRUCTION_TUNED,
        ModelClass::Reasoning => OUTPUT_REASONING,
    }
}

/// Renders an action list as bracketed space-separated letters, e.g. "[C D C]".
pub fn render_history(actions: &[Action]) -> String {
    let letters: Vec<&str> = actions.iter().map(Action::as_str).collect();
    format!("[{}]", letters.join(" "))
}

/// The standard dyadic prompt: game rules, payoff bullets, goal line, and
/// both history lists, with persona and framing prepends applied.
pub fn build_dyadic_prompt(
    style: &PromptStyle,
    horizon: u32,
    own_history: &[Action],
    opp_history: &[Action],
) -> PromptBundle {
    debug_assert_eq!(own_history.len(), opp_history.len());
    debug_assert!((own_history.len() as u32) < horizon);
    let body = render_dyadic_body(horizon, own_history, opp_history);
    assemble(style, body, None)
}

/// The single-round reputation prompt. The score and history lines appear
/// only for non-control trials; the visibility notice always appears.
pub fn build_reputation_prompt(trial: &ReputationTrial, model_class: ModelClass) -> PromptBundle {
    telemetry::note_prompt_build();
    let mut parts: Vec<String> = vec![USER_REPUTATION_BASE.to_string()];
    if !trial.is_control {
        let score = trial.score.expect("non-control trials carry a score");
        let history = trial.history.as_deref().expect("non-control trials carry a history");
        parts.push(
            REPUTATION_SITUATION
                .replace("{score}", &format!("{score:+}"))
                .replace("{history}", &render_history(history)),
        );
    }
    parts.push(
        match trial.visibility {
            Visibility::Public => NOTICE_PUBLIC,
            Visibility::Private => NOTICE_PRIVATE,
        }
        .to_string(),
    );
    parts.push(format!("[Output Format]\n{}", output_block(model_class)));
    PromptBundle { system_text: SYSTEM_BASE.to_string(), user_text: parts.join("\n\n") }
}

/// The society prompt: the base dyadic prompt for the current match plus the
/// anonymized cross-episode block. The block is absent in the first episode.
///
/// `prior_episodes` must already be anonymized and shuffled by the caller;
/// rendering is deterministic.
pub fn build_society_prompt(
    style: &PromptStyle,
    horizon: u32,
    own_history: &[Action],
    opp_history: &[Action],
    prior_episodes: &[EpisodeHistoryBlock],
    format: CrossEpisodeFormat,
) -> PromptBundle {
    let body = render_dyadic_body(horizon, own_history, opp_history);
    let extra = if prior_episodes.is_empty() {
        None
    } else {
        Some(render_cross_episode_block(prior_episodes, format))
    };
    assemble(style, body, extra)
}

fn render_dyadic_body(horizon: u32, own_history: &[Action], opp_history: &[Action]) -> String {
    USER_DYADIC
        .replace("{H}", &horizon.to_string())
        .replace("{own_history}", &render_history(own_history))
        .replace("{opp_history}", &render_history(opp_history))
}

fn render_cross_episode_block(blocks: &[EpisodeHistoryBlock], format: CrossEpisodeFormat) -> String {
    let lines: Vec<String> = blocks
        .iter()
        .map(|block| match format {
            CrossEpisodeFormat::FullHistories => {
                let inner: Vec<String> = block
                    .partners
                    .iter()
                    .map(|partner| {
                        let tuples: Vec<String> =
                            partner.iter().map(|(x, y)| format!("({x},{y})")).collect();
                        format!("[{}]", tuples.join(","))
                    })
                    .collect();
                format!("(Episode {}): [{}]", block.episode_index, inner.join(", "))
            }
            CrossEpisodeFormat::ActionCounts => {
                let mut coop = 0usize;
                let mut defect = 0usize;
                for partner in &block.partners {
                    for (_, theirs) in partner {
                        match theirs {
                            Action::C => coop += 1,
                            Action::D => defect += 1,
                        }
                    }
                }
                format!("(Episode {}): C: {coop}, D: {defect}", block.episode_index)
            }
        })
        .collect();
    let template = match format {
        CrossEpisodeFormat::FullHistories => SOCIETY_HISTORIES_FULL,
        CrossEpisodeFormat::ActionCounts => SOCIETY_HISTORIES_COUNTS,
    };
    template.replace("{episode_blocks}", &lines.join("\n"))
}

// Prepends are applied in order (framing, then persona), so with both active
// the persona text comes first and with framing alone the user text begins
// with the reminder sentence.
fn assemble(style: &PromptStyle, body: String, extra_block: Option<String>) -> PromptBundle {
    telemetry::note_prompt_build();
    let mut system_text = SYSTEM_BASE.to_string();
    let mut parts: Vec<String> = Vec::new();
    if style.persona == Persona::ResilientCooperator {
        parts.push(PERSONA_RESILIENT_COOPERATOR.to_string());
    }
    if style.framing == Framing::LongHorizon {
        match style.framing_placement {
            FramingPlacement::UserPrompt => parts.push(FRAMING_LONG_HORIZON.to_string()),
            FramingPlacement::SystemPrompt => {
                system_text.push_str("\n\n");
                system_text.push_str(FRAMING_LONG_HORIZON);
            }
        }
    }
    parts.push(body);
    if let Some(block) = extra_block {
        parts.push(block);
    }
    parts.push(output_block(style.model_class).to_string());
    PromptBundle { system_text, user_text: parts.join("\n\n") }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::generate_reputation_trials;

    fn style(persona: Persona, framing: Framing, class: ModelClass) -> PromptStyle {
        PromptStyle { persona, framing, framing_placement: FramingPlacement::UserPrompt, model_class: class }
    }

    #[test]
    fn empty_histories_render_as_empty_brackets() {
        let s = style(Persona::RationalPlayer, Framing::Baseline, ModelClass::InstructionTuned);
        let bundle = build_dyadic_prompt(&s, 30, &[], &[]);
        assert!(bundle.user_text.contains("Your actions: []"));
        assert!(bundle.user_text.contains("Co-player's actions: []"));
        assert!(bundle.user_text.contains("This game will last exactly 30 rounds."));
    }

    #[test]
    fn long_horizon_framing_leads_the_user_text() {
        let s = style(Persona::RationalPlayer, Framing::LongHorizon, ModelClass::InstructionTuned);
        let bundle = build_dyadic_prompt(&s, 30, &[], &[]);
        assert!(bundle.user_text.starts_with("Keep in mind that a strategy maximizing the immediate payoff"));
    }

    #[test]
    fn framing_can_move_to_the_system_prompt() {
        let s = PromptStyle {
            persona: Persona::RationalPlayer,
            framing: Framing::LongHorizon,
            framing_placement: FramingPlacement::SystemPrompt,
            model_class: ModelClass::InstructionTuned,
        };
        let bundle = build_dyadic_prompt(&s, 30, &[], &[]);
        assert!(bundle.system_text.contains("Keep in mind that a strategy"));
        assert!(!bundle.user_text.contains("Keep in mind that a strategy"));
    }

    #[test]
    fn resilient_cooperator_persona_is_prepended() {
        let s = style(Persona::ResilientCooperator, Framing::Baseline, ModelClass::InstructionTuned);
        let bundle = build_dyadic_prompt(&s, 10, &[], &[]);
        assert!(bundle.user_text.starts_with("You should act like a \"Resilient Cooperator\""));
        assert!(bundle.user_text.contains("Avoid end-game defection"));
    }

    #[test]
    fn user_text_always_ends_with_the_output_block() {
        for class in [ModelClass::InstructionTuned, ModelClass::Reasoning] {
            let s = style(Persona::RationalPlayer, Framing::Baseline, class);
            let bundle = build_dyadic_prompt(&s, 5, &[Action::C], &[Action::D]);
            assert!(bundle.user_text.ends_with("The field \"choice\" must be exactly one of \"C\" or \"D\"."));
            if class == ModelClass::Reasoning {
                assert!(bundle.user_text.contains("THINKING:"));
            }
        }
    }

    #[test]
    fn prompt_construction_is_deterministic() {
        let s = style(Persona::ResilientCooperator, Framing::LongHorizon, ModelClass::Reasoning);
        let own = [Action::C, Action::D, Action::C];
        let opp = [Action::D, Action::D, Action::C];
        let a = build_dyadic_prompt(&s, 30, &own, &opp);
        let b = build_dyadic_prompt(&s, 30, &own, &opp);
        assert_eq!(a, b);
    }

    #[test]
    fn reputation_prompt_cue_lines_follow_control_flag() {
        let trials = generate_reputation_trials(5);
        let with_cue = trials.trials.iter().find(|t| !t.is_control && t.visibility == Visibility::Public).unwrap();
        let bundle = build_reputation_prompt(with_cue, ModelClass::InstructionTuned);
        assert!(bundle.user_text.contains("Opponent Public Score:"));
        assert!(bundle.user_text.contains("Opponent Recent History:"));
        assert!(bundle.user_text.contains("(PUBLIC)"));
        assert!(bundle.user_text.contains("reputation +1 for C, -1 for D"));

        let control = trials.trials.iter().find(|t| t.is_control).unwrap();
        let bundle = build_reputation_prompt(control, ModelClass::InstructionTuned);
        assert!(!bundle.user_text.contains("Opponent Public Score:"));
        assert!(!bundle.user_text.contains("Opponent Recent History:"));
        assert!(bundle.user_text.contains("(PRIVATE) Your action is anonymous and will not be recorded."));
    }

    #[test]
    fn reputation_scores_render_signed() {
        let trials = generate_reputation_trials(5);
        let negative = trials.trials.iter().find(|t| t.score == Some(-5)).unwrap();
        let bundle = build_reputation_prompt(negative, ModelClass::InstructionTuned);
        assert!(bundle.user_text.contains("Opponent Public Score: -5"));
        // A -5 score forces an all-defect window.
        assert!(bundle.user_text.contains("Opponent Recent History: [D D D D D]"));

        let positive = trials.trials.iter().find(|t| t.score == Some(3)).unwrap();
        let bundle = build_reputation_prompt(positive, ModelClass::InstructionTuned);
        assert!(bundle.user_text.contains("Opponent Public Score: +3"));
    }

    #[test]
    fn society_block_renders_one_inner_list_per_partner() {
        let s = style(Persona::RationalPlayer, Framing::Baseline, ModelClass::InstructionTuned);
        let blocks = vec![EpisodeHistoryBlock {
            episode_index: 1,
            partners: vec![
                vec![(Action::C, Action::C), (Action::C, Action::D)],
                vec![(Action::D, Action::C)],
                vec![(Action::D, Action::D)],
                vec![(Action::C, Action::C)],
            ],
        }];
        let bundle = build_society_prompt(&s, 10, &[], &[], &blocks, CrossEpisodeFormat::FullHistories);
        assert!(bundle.user_text.contains("(Episode 1): [[(C,C),(C,D)], [(D,C)], [(D,D)], [(C,C)]]"));
        let line = bundle.user_text.lines().find(|l| l.starts_with("(Episode 1):")).unwrap();
        assert_eq!(line.matches("], [").count() + 1, 4);
    }

    #[test]
    fn society_block_absent_in_first_episode() {
        let s = style(Persona::RationalPlayer, Framing::Baseline, ModelClass::InstructionTuned);
        let bundle = build_society_prompt(&s, 10, &[], &[], &[], CrossEpisodeFormat::FullHistories);
        assert!(!bundle.user_text.contains("Previous Episode Histories"));
    }

    #[test]
    fn counts_variant_tallies_co_player_actions() {
        let s = style(Persona::RationalPlayer, Framing::Baseline, ModelClass::InstructionTuned);
        let blocks = vec![EpisodeHistoryBlock {
            episode_index: 2,
            partners: vec![
                vec![(Action::C, Action::C), (Action::C, Action::D)],
                vec![(Action::D, Action::D)],
            ],
        }];
        let bundle = build_society_prompt(&s, 10, &[], &[], &blocks, CrossEpisodeFormat::ActionCounts);
        assert!(bundle.user_text.contains("(Episode 2): C: 1, D: 2"));
        assert!(!bundle.user_text.contains("(C,C)"));
    }
}
