//! Per-turn complaint classification, fact-commons retrieval and prompt assembly.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{ChatMessage, ChatRequest, LlmGateway, Role};
use crate::taxonomy::{find_phrase, normalize_text, AuxiliaryResource, CallPhase, Taxonomy, LACK_OF_INFORMATION};

pub const DEFAULT_HISTORY_WINDOW: usize = 12;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GroundingError {
    #[error("no protocol for lack_of_information; use the generic intake bundle")]
    LackOfInformation,
    #[error("unknown complaint label {0:?}")]
    UnknownLabel(String),
    #[error("unknown prompt template {0:?}")]
    UnknownTemplate(String),
    #[error("prompt library: {0}")]
    Library(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassificationResult {
    pub label: String,
    pub matched_triggers: Vec<String>,
    pub turn_index: u64,
}

impl ClassificationResult {
    pub fn lack(turn_index: u64) -> Self {
        Self {
            label: LACK_OF_INFORMATION.to_string(),
            matched_triggers: Vec::new(),
            turn_index,
        }
    }

    pub fn is_lack(&self) -> bool {
        self.label == LACK_OF_INFORMATION
    }
}

/// What a classifier sees for one turn.
#[derive(Debug, Clone, Copy)]
pub struct ClassifierInput<'a> {
    pub history: &'a [String],
    pub taxonomy: &'a Taxonomy,
    pub turn_index: u64,
    /// Ground truth, visible only to the oracle classifier.
    pub ground_truth: Option<&'a str>,
}

pub trait Classifier: Send + Sync {
    fn id(&self) -> &str;
    fn classify(&self, input: ClassifierInput<'_>) -> ClassificationResult;
}

/// Reference classifier: distinct trigger counts over the normalized history.
#[derive(Debug, Default, Clone, Copy)]
pub struct KeywordClassifier;

/// Per-entry trigger hits: (label, distinct matched triggers, earliest position).
fn trigger_hits(text: &str, taxonomy: &Taxonomy) -> Vec<(String, Vec<String>, usize)> {
    let mut hits = Vec::new();
    for entry in taxonomy.entries() {
        let mut matched = Vec::new();
        let mut first = usize::MAX;
        for trigger in &entry.keyword_triggers {
            let norm = normalize_text(trigger);
            if let Some(pos) = find_phrase(text, &norm) {
                if !matched.contains(trigger) {
                    matched.push(trigger.clone());
                }
                first = first.min(pos);
            }
        }
        if !matched.is_empty() {
            hits.push((entry.id.clone(), matched, first));
        }
    }
    hits
}

impl Classifier for KeywordClassifier {
    fn id(&self) -> &str {
        "keyword"
    }

    fn classify(&self, input: ClassifierInput<'_>) -> ClassificationResult {
        let text = normalize_text(&input.history.join(" \n "));
        let best = trigger_hits(&text, input.taxonomy).into_iter().min_by(|a, b| {
            b.1.len()
                .cmp(&a.1.len())
                .then(a.2.cmp(&b.2))
                .then_with(|| a.0.cmp(&b.0))
        });
        match best {
            Some((label, matched_triggers, _)) => ClassificationResult {
                label,
                matched_triggers,
                turn_index: input.turn_index,
            },
            None => ClassificationResult::lack(input.turn_index),
        }
    }
}

/// Returns the scenario's ground-truth complaint on every turn.
#[derive(Debug, Default, Clone, Copy)]
pub struct OracleClassifier;

impl Classifier for OracleClassifier {
    fn id(&self) -> &str {
        "oracle"
    }

    fn classify(&self, input: ClassifierInput<'_>) -> ClassificationResult {
        match input.ground_truth.filter(|g| input.taxonomy.get(g).is_some()) {
            Some(label) => {
                let text = normalize_text(&input.history.join(" \n "));
                let matched_triggers = trigger_hits(&text, input.taxonomy)
                    .into_iter()
                    .find(|h| h.0 == label)
                    .map(|h| h.1)
                    .unwrap_or_default();
                ClassificationResult {
                    label: label.to_string(),
                    matched_triggers,
                    turn_index: input.turn_index,
                }
            }
            None => ClassificationResult::lack(input.turn_index),
        }
    }
}

/// Model-backed classifier. Any reply outside the label set, and any gateway
/// failure, maps to lack_of_information.
pub struct GatewayClassifier<G> {
    gateway: G,
}

impl<G: LlmGateway> GatewayClassifier<G> {
    pub fn new(gateway: G) -> Self {
        Self { gateway }
    }
}

impl<G: LlmGateway> Classifier for GatewayClassifier<G> {
    fn id(&self) -> &str {
        "gateway"
    }

    fn classify(&self, input: ClassifierInput<'_>) -> ClassificationResult {
        let labels: Vec<&str> = input.taxonomy.ids().collect();
        let mut req = ChatRequest::new(format!(
            "Label the caller's chief complaint with exactly one of: {}, {LACK_OF_INFORMATION}. \
             Answer with the label only.",
            labels.join(", ")
        ))
        .with_tag("agent", "classifier")
        .with_tag("turn", input.turn_index.to_string());
        req.max_tokens = 16;
        req.messages = input
            .history
            .iter()
            .map(|h| ChatMessage::new(Role::Caller, h.clone()))
            .collect();
        let label = self
            .gateway
            .complete(&req)
            .ok()
            .map(|r| r.content.trim().to_lowercase())
            .filter(|l| input.taxonomy.get(l).is_some());
        match label {
            Some(label) => ClassificationResult {
                label,
                matched_triggers: Vec::new(),
                turn_index: input.turn_index,
            },
            None => ClassificationResult::lack(input.turn_index),
        }
    }
}

/// Reference classification of a caller-side history.
pub fn classify_turn(history: &[String], taxonomy: &Taxonomy) -> ClassificationResult {
    KeywordClassifier.classify(ClassifierInput {
        history,
        taxonomy,
        turn_index: history.len().saturating_sub(1) as u64,
        ground_truth: None,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolBundle {
    pub cc_id: String,
    pub phase: CallPhase,
    pub questions: Vec<String>,
    pub red_flags: Vec<String>,
    pub instructions: Vec<String>,
    pub escalation_targets: BTreeSet<AuxiliaryResource>,
}

impl ProtocolBundle {
    /// Empty bundle used while the complaint is still unknown.
    pub fn generic(phase: CallPhase) -> Self {
        Self {
            cc_id: LACK_OF_INFORMATION.to_string(),
            phase,
            questions: Vec::new(),
            red_flags: Vec::new(),
            instructions: Vec::new(),
            escalation_targets: BTreeSet::new(),
        }
    }
}

/// Slices the entry's content down to what the phase needs.
pub fn retrieve_protocol(
    taxonomy: &Taxonomy,
    cc: &ClassificationResult,
    phase: CallPhase,
) -> Result<ProtocolBundle, GroundingError> {
    if cc.is_lack() {
        return Err(GroundingError::LackOfInformation);
    }
    let entry = taxonomy
        .get(&cc.label)
        .ok_or_else(|| GroundingError::UnknownLabel(cc.label.clone()))?;
    let mut bundle = ProtocolBundle::generic(phase);
    bundle.cc_id = entry.id.clone();
    match phase {
        CallPhase::InitialIntake | CallPhase::SceneAssessment => {
            bundle.questions = entry.typical_symptoms.clone();
            bundle.red_flags = entry.red_flags.clone();
        }
        CallPhase::Dispatch => bundle.escalation_targets = entry.auxiliary_resources.clone(),
        CallPhase::PreArrivalInstructions => bundle.instructions = entry.pre_arrival_instructions.clone(),
        CallPhase::RealTimeUpdates => bundle.red_flags = entry.red_flags.clone(),
        CallPhase::CallClosure => {}
    }
    Ok(bundle)
}

/// Prompt template identifier for a phase.
pub fn template_for_phase(phase: CallPhase) -> &'static str {
    match phase {
        CallPhase::InitialIntake => "intake",
        CallPhase::SceneAssessment => "assessment",
        CallPhase::Dispatch => "dispatch",
        CallPhase::RealTimeUpdates => "updates",
        CallPhase::PreArrivalInstructions => "instructions",
        CallPhase::CallClosure => "closure",
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryLine {
    pub speaker: Role,
    pub text: String,
}

impl HistoryLine {
    pub fn new(speaker: Role, text: impl Into<String>) -> Self {
        Self {
            speaker,
            text: text.into(),
        }
    }

    fn render(&self) -> String {
        let who = match self.speaker {
            Role::Caller => "Caller",
            Role::Dispatcher => "Dispatcher",
            Role::Auxiliary => "Auxiliary",
            Role::System => "System",
        };
        format!("{who}: {}", self.text)
    }
}

const TEMPLATE_IDS: [&str; 6] = ["intake", "assessment", "dispatch", "updates", "instructions", "closure"];

/// Prompt templates plus the global constraint block.
#[derive(Debug, Clone)]
pub struct PromptLibrary {
    templates: BTreeMap<String, String>,
    constraints: String,
    window: usize,
}

impl Default for PromptLibrary {
    fn default() -> Self {
        Self::bundled()
    }
}

impl PromptLibrary {
    pub fn bundled() -> Self {
        let templates = [
            ("intake", include_str!("../data/prompts/intake.txt")),
            ("assessment", include_str!("../data/prompts/assessment.txt")),
            ("dispatch", include_str!("../data/prompts/dispatch.txt")),
            ("updates", include_str!("../data/prompts/updates.txt")),
            ("instructions", include_str!("../data/prompts/instructions.txt")),
            ("closure", include_str!("../data/prompts/closure.txt")),
        ];
        Self {
            templates: templates
                .into_iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
            constraints: include_str!("../data/prompts/constraints.txt").trim_end().to_string(),
            window: DEFAULT_HISTORY_WINDOW,
        }
    }

    /// Loads `<id>.txt` for every template id plus `constraints.txt`.
    pub fn from_dir(dir: &Path) -> Result<Self, GroundingError> {
        let read = |name: &str| {
            std::fs::read_to_string(dir.join(format!("{name}.txt")))
                .map_err(|e| GroundingError::Library(format!("{name}.txt: {e}")))
        };
        let mut templates = BTreeMap::new();
        for id in TEMPLATE_IDS {
            templates.insert(id.to_string(), read(id)?);
        }
        Ok(Self {
            templates,
            constraints: read("constraints")?.trim_end().to_string(),
            window: DEFAULT_HISTORY_WINDOW,
        })
    }

    pub fn with_window(mut self, window: usize) -> Self {
        self.window = window;
        self
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn constraints(&self) -> &str {
        &self.constraints
    }

    pub fn template_ids(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    /// Instantiates a template with bundle content and the last K history lines.
    pub fn inject_prompt(
        &self,
        bundle: &ProtocolBundle,
        history: &[HistoryLine],
        template_id: &str,
    ) -> Result<String, GroundingError> {
        let template = self
            .templates
            .get(template_id)
            .ok_or_else(|| GroundingError::UnknownTemplate(template_id.to_string()))?;
        let list = |items: &[String]| {
            if items.is_empty() {
                "- (none)".to_string()
            } else {
                items.iter().map(|i| format!("- {i}")).collect::<Vec<_>>().join("\n")
            }
        };
        let targets: Vec<String> = bundle
            .escalation_targets
            .iter()
            .map(|t| t.spoken().to_string())
            .collect();
        let start = history.len().saturating_sub(self.window);
        let history_text = if history.is_empty() {
            "(the call has just connected; the caller speaks first)".to_string()
        } else {
            history[start..]
                .iter()
                .map(HistoryLine::render)
                .collect::<Vec<_>>()
                .join("\n")
        };
        let complaint = if bundle.cc_id == LACK_OF_INFORMATION {
            "not yet known".to_string()
        } else {
            bundle.cc_id.replace('_', " ")
        };
        // History goes last so caller text cannot inject placeholders.
        Ok(template
            .replace("{{phase}}", bundle.phase.as_str())
            .replace("{{complaint}}", &complaint)
            .replace("{{questions}}", &list(&bundle.questions))
            .replace("{{red_flags}}", &list(&bundle.red_flags))
            .replace("{{instructions}}", &list(&bundle.instructions))
            .replace("{{escalation_targets}}", &list(&targets))
            .replace("{{constraints}}", &self.constraints)
            .replace("{{history}}", &history_text))
    }
}

/// [`PromptLibrary::inject_prompt`] on the bundled library.
pub fn inject_prompt(
    bundle: &ProtocolBundle,
    history: &[HistoryLine],
    template_id: &str,
) -> Result<String, GroundingError> {
    PromptLibrary::bundled().inject_prompt(bundle, history, template_id)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t() -> Taxonomy {
        Taxonomy::bundled()
    }

    #[test]
    fn empty_history_is_lack() {
        let r = classify_turn(&[], &t());
        assert!(r.is_lack());
        assert!(r.matched_triggers.is_empty());
    }

    #[test]
    fn single_trigger() {
        let r = classify_turn(&["my dad has crushing chest pain".into()], &t());
        assert_eq!(r.label, "chest_pain");
        assert_eq!(r.matched_triggers, ["chest pain"]);
    }

    #[test]
    fn tie_broken_by_position_both_orders() {
        let tax = t();
        let a = classify_turn(&["she has chest pain and a headache".into()], &tax);
        assert_eq!(a.label, "chest_pain");
        let b = classify_turn(&["she has a headache and chest pain".into()], &tax);
        assert_eq!(b.label, "severe_headache");
    }

    #[test]
    fn more_triggers_beat_position() {
        let r = classify_turn(&["a headache, chest pain and chest pressure".into()], &t());
        assert_eq!(r.label, "chest_pain");
    }

    #[test]
    fn apostrophes_normalized() {
        let r = classify_turn(&["He CAN'T BREATHE!!".into()], &t());
        assert_eq!(r.label, "breathing_problems");
    }

    #[test]
    fn oracle_returns_ground_truth() {
        let tax = t();
        let r = OracleClassifier.classify(ClassifierInput {
            history: &[],
            taxonomy: &tax,
            turn_index: 0,
            ground_truth: Some("stroke_cva"),
        });
        assert_eq!(r.label, "stroke_cva");
    }

    #[test]
    fn retrieve_by_phase() {
        let tax = t();
        let cc = classify_turn(&["chest pain".into()], &tax);
        let entry = tax.lookup("chest_pain").unwrap();
        let b = retrieve_protocol(&tax, &cc, CallPhase::PreArrivalInstructions).unwrap();
        assert_eq!(b.instructions, entry.pre_arrival_instructions);
        assert!(b.questions.is_empty() && b.red_flags.is_empty());
        let c = retrieve_protocol(&tax, &cc, CallPhase::CallClosure).unwrap();
        assert!(c.questions.is_empty() && c.red_flags.is_empty() && c.instructions.is_empty());
        assert!(c.escalation_targets.is_empty());
        assert_eq!(
            retrieve_protocol(&tax, &ClassificationResult::lack(0), CallPhase::Dispatch),
            Err(GroundingError::LackOfInformation)
        );
        let bogus = ClassificationResult {
            label: "zzz".into(),
            matched_triggers: vec![],
            turn_index: 0,
        };
        assert_eq!(
            retrieve_protocol(&tax, &bogus, CallPhase::Dispatch),
            Err(GroundingError::UnknownLabel("zzz".into()))
        );
    }

    #[test]
    fn police_only_dispatch() {
        let tax = t();
        // assault_injury lists emdprs and police; check the copy rule on every entry.
        for entry in tax.entries() {
            let cc = ClassificationResult {
                label: entry.id.clone(),
                matched_triggers: vec![],
                turn_index: 0,
            };
            let b = retrieve_protocol(&tax, &cc, CallPhase::Dispatch).unwrap();
            assert_eq!(b.escalation_targets, entry.auxiliary_resources);
        }
    }

    #[test]
    fn instructions_included_once_in_order() {
        let mut b = ProtocolBundle::generic(CallPhase::PreArrivalInstructions);
        b.instructions = vec!["Step one.".into(), "Step two.".into(), "Step three.".into()];
        let lib = PromptLibrary::bundled();
        for id in TEMPLATE_IDS {
            let p = lib.inject_prompt(&b, &[], id).unwrap();
            let positions: Vec<_> = b.instructions.iter().map(|i| p.find(i.as_str()).unwrap()).collect();
            assert!(positions.windows(2).all(|w| w[0] < w[1]));
            for i in &b.instructions {
                assert_eq!(p.matches(i.as_str()).count(), 1);
            }
            assert!(p.contains(lib.constraints()));
        }
    }

    #[test]
    fn history_window() {
        let history: Vec<_> = (0..30)
            .map(|i| HistoryLine::new(Role::Caller, format!("utterance number {i:02}")))
            .collect();
        let p = inject_prompt(&ProtocolBundle::generic(CallPhase::InitialIntake), &history, "intake").unwrap();
        for i in 0..30 {
            assert_eq!(p.contains(&format!("utterance number {i:02}")), i >= 18, "{i}");
        }
    }

    #[test]
    fn unknown_template() {
        assert_eq!(
            inject_prompt(&ProtocolBundle::generic(CallPhase::InitialIntake), &[], "nope"),
            Err(GroundingError::UnknownTemplate("nope".into()))
        );
    }
}
