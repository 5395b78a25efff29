//! Rule-based backend: renders caller, dispatcher and auxiliary utterances
//! from request tags. Deterministic; no network.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::llm::{count_tokens, ChatRequest, ChatResponse, GatewayError, LlmGateway, Role, TokenCounts};
use crate::scenario::{conjugate, Person};
use crate::taxonomy::{CriticalEntity, Urgency};

/// Closing line every closed call must contain.
pub const CALLBACK_LINE: &str = "If anything changes, call us back right away.";
/// Caller phrase that reopens real-time updates from the instruction phase.
pub const WORSENING_MARKER: &str = "getting worse";

/// Everything the template caller may say about the patient and scene.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallerPersona {
    pub reference: String,
    pub pronoun: String,
    pub person: PersonTag,
    pub address: String,
    pub callback_number: String,
    pub age_years: u32,
    pub conscious: bool,
    pub breathing: bool,
    pub findings: Vec<String>,
    pub roadway: bool,
    pub vague_opening: bool,
    pub limited_proficiency: bool,
    pub urgency: Urgency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PersonTag {
    First,
    ThirdSingular,
    ThirdPlural,
}

impl From<Person> for PersonTag {
    fn from(p: Person) -> Self {
        match p {
            Person::First => PersonTag::First,
            Person::ThirdSingular => PersonTag::ThirdSingular,
            Person::ThirdPlural => PersonTag::ThirdPlural,
        }
    }
}

impl From<PersonTag> for Person {
    fn from(p: PersonTag) -> Self {
        match p {
            PersonTag::First => Person::First,
            PersonTag::ThirdSingular => Person::ThirdSingular,
            PersonTag::ThirdPlural => Person::ThirdPlural,
        }
    }
}

/// Dispatcher phrasing register, chosen by urgency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Style {
    Terse,
    Standard,
    Warm,
}

impl Style {
    pub fn for_urgency(u: Urgency) -> Self {
        match u {
            Urgency::LifeCritical => Style::Terse,
            Urgency::TraumaticIncident => Style::Standard,
            Urgency::IndividualComplaint => Style::Warm,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Style::Terse => "terse",
            Style::Standard => "standard",
            Style::Warm => "warm",
        }
    }

    pub fn parse(s: &str) -> Self {
        match s {
            "terse" => Style::Terse,
            "warm" => Style::Warm,
            _ => Style::Standard,
        }
    }
}

fn pick<'a>(options: &[&'a str], salt: &str) -> &'a str {
    let digest = Sha256::digest(salt.as_bytes());
    options[digest[0] as usize % options.len()]
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn lower_first(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_lowercase().chain(c).collect(),
        None => String::new(),
    }
}

impl CallerPersona {
    fn person(&self) -> Person {
        self.person.into()
    }

    fn subject(&self) -> String {
        capitalize(&self.pronoun)
    }

    fn be(&self) -> &'static str {
        match self.person {
            PersonTag::First => "am",
            PersonTag::ThirdSingular => "is",
            PersonTag::ThirdPlural => "are",
        }
    }

    fn object_reference(&self) -> String {
        match self.person {
            PersonTag::First => "me".into(),
            _ => lower_first(&self.reference),
        }
    }

    fn finding(&self, i: usize) -> String {
        let f = self
            .findings
            .get(i)
            .or_else(|| self.findings.first())
            .cloned()
            .unwrap_or_else(|| "is not doing well".into());
        conjugate(&f, self.person())
    }

    fn complaint(&self) -> String {
        format!("{} {}.", self.reference, self.finding(0))
    }

    fn opening(&self) -> String {
        let plea = match self.urgency {
            Urgency::LifeCritical => "Please hurry, I'm so scared!",
            Urgency::TraumaticIncident => "Please send help, I'm afraid!",
            Urgency::IndividualComplaint => "I'm really worried.",
        };
        let lp = if self.limited_proficiency {
            "Please, my English is not good. "
        } else {
            ""
        };
        if self.vague_opening {
            format!(
                "{lp}Something is wrong with {}, please come! {plea}",
                self.object_reference()
            )
        } else {
            format!("{lp}{} {plea}", self.complaint())
        }
    }

    fn answer(&self, entity: &str) -> String {
        let we = if self.person == PersonTag::First {
            "I am"
        } else {
            "We are"
        };
        match CriticalEntity::parse(entity) {
            Some(CriticalEntity::Location) => format!("{we} at {}.", self.address),
            Some(CriticalEntity::CallbackNumber) => format!("My number is {}.", self.callback_number),
            Some(CriticalEntity::PatientAge) => {
                format!("{} {} {} years old.", self.subject(), self.be(), self.age_years)
            }
            Some(CriticalEntity::Consciousness) => {
                if self.conscious {
                    format!("Yes, {} {} awake.", self.pronoun, self.be())
                } else {
                    format!("No, {} {} not waking up at all.", self.pronoun, self.be())
                }
            }
            Some(CriticalEntity::Breathing) => {
                if self.breathing {
                    format!("Yes, {} {} breathing.", self.pronoun, self.be())
                } else {
                    format!("No, I don't think {} {} breathing.", self.pronoun, self.be())
                }
            }
            Some(CriticalEntity::ChiefComplaintStated) => self.complaint(),
            Some(CriticalEntity::HazardsPresent) => {
                if self.roadway {
                    "There is traffic going by, but it seems safe where we are.".into()
                } else {
                    "It looks safe here, there is no danger that I can see.".into()
                }
            }
            None => "I'm not sure what you mean.".into(),
        }
    }

    /// Caller utterance for an intent produced by the orchestrator. Some
    /// mid-call replies carry a distress remark chosen by `salt`.
    pub fn render(&self, intent: &str, salt: &str) -> String {
        let base = self.render_base(intent, salt);
        if matches!(intent, "opening" | "closure" | "update") {
            return base;
        }
        let remark = pick(
            &[
                "",
                "",
                "",
                " Please hurry!",
                " I'm so scared.",
                " Oh god, this is awful.",
            ],
            &format!("{salt}:distress"),
        );
        format!("{base}{remark}")
    }

    fn render_base(&self, intent: &str, salt: &str) -> String {
        if let Some(entity) = intent.strip_prefix("answer:") {
            return self.answer(entity);
        }
        match intent {
            "opening" => self.opening(),
            "symptom" => pick(
                &["Yes, I think so.", "No, I don't think so.", "I'm not sure, maybe."],
                salt,
            )
            .into(),
            "watch" => pick(&["Okay, I will watch for that.", "Okay, I understand."], salt).into(),
            "instruction" => pick(
                &["Okay, I'm doing that now.", "Okay, done.", "Alright, I did that."],
                salt,
            )
            .into(),
            "dispatch_ack" => "Okay, thank you. Please hurry.".into(),
            "update" => format!(
                "Wait, {} {}! What do I do?",
                self.pronoun,
                conjugate(&format!("is {WORSENING_MARKER}"), self.person())
            ),
            "describe" => format!("{} {}.", self.subject(), self.finding(1)),
            "hold" => "Okay, I'm still here.".into(),
            "closure" => "Okay, thank you so much.".into(),
            _ => "I'm not sure what you mean.".into(),
        }
    }
}

/// Dispatcher utterance for an intent produced by the orchestrator's planner.
pub fn render_dispatcher(intent: &str, style: Style, text: &str, addressee_is_patient: bool, targets: &str) -> String {
    let core = match intent.strip_prefix("ask:").and_then(CriticalEntity::parse) {
        Some(CriticalEntity::Location) => "What is the address of the emergency?".to_string(),
        Some(CriticalEntity::CallbackNumber) => "What is the phone number you are calling from?".into(),
        Some(CriticalEntity::ChiefComplaintStated) => "Tell me exactly what happened.".into(),
        Some(CriticalEntity::PatientAge) => {
            if addressee_is_patient {
                "How old are you?".into()
            } else {
                "How old is the patient?".into()
            }
        }
        Some(CriticalEntity::Consciousness) => {
            if addressee_is_patient {
                "Are you fully awake?".into()
            } else {
                "Is the patient awake?".into()
            }
        }
        Some(CriticalEntity::Breathing) => {
            if addressee_is_patient {
                "Are you breathing normally?".into()
            } else {
                "Is the patient breathing normally?".into()
            }
        }
        Some(CriticalEntity::HazardsPresent) => "Is the scene safe, is there any danger near you?".into(),
        None => match intent {
            "symptom" => format!("Is there any {}?", lower_first(text).trim_end_matches('.')),
            "red_flag" => format!(
                "Tell me right away if you notice {}.",
                lower_first(text).trim_end_matches('.')
            ),
            "dispatch" => {
                if targets.is_empty() {
                    "I am sending an ambulance now.".into()
                } else {
                    format!("I am sending an ambulance now and notifying {targets}.")
                }
            }
            "generic_dispatch" => "I am sending help to you now.".into(),
            "notify" => format!("I am also notifying {targets}."),
            "instruction" => text.to_string(),
            "update_ack" => "Stay on the line with me. Tell me what changed.".into(),
            "closure" => format!("Help is arriving now and the crew will take over. {CALLBACK_LINE}"),
            _ => "Stay on the line, help is on the way.".into(),
        },
    };
    let prefix = match (style, intent) {
        (_, "closure") | (Style::Terse, _) => "",
        (Style::Standard, "instruction") => "Listen carefully.",
        (Style::Standard, _) => "Okay.",
        (Style::Warm, "instruction") => "You are doing really well.",
        (Style::Warm, _) => "Okay, thank you for telling me.",
    };
    if prefix.is_empty() {
        core
    } else {
        format!("{prefix} {core}")
    }
}

/// Mock acknowledgment from an auxiliary agency.
pub fn render_auxiliary(target_spoken: &str, setting_label: &str, address: &str) -> String {
    format!("This is {target_spoken}, request acknowledged. Units are responding to the {setting_label} at {address}.")
}

/// Deterministic backend driven entirely by request tags.
#[derive(Debug, Default, Clone)]
pub struct TemplateBackend;

impl TemplateBackend {
    pub const ID: &'static str = "template";

    fn render(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let agent = request.tag("agent").unwrap_or_default();
        let intent = request.tag("intent").unwrap_or_default();
        let salt = format!(
            "{}:{}:{}",
            request.tag("seed").unwrap_or_default(),
            request.tag("turn").unwrap_or_default(),
            intent
        );
        match agent {
            "narrator" => Ok(request
                .messages
                .iter()
                .rev()
                .find(|m| m.role == Role::System)
                .map(|m| m.content.clone())
                .unwrap_or_default()),
            "caller" => {
                let persona: CallerPersona =
                    serde_json::from_str(request.tag("persona").unwrap_or("null")).map_err(|e| {
                        GatewayError::Protocol {
                            backend: Self::ID.into(),
                            message: format!("caller persona tag: {e}"),
                        }
                    })?;
                Ok(persona.render(intent, &salt))
            }
            "dispatcher" => Ok(render_dispatcher(
                intent,
                Style::parse(request.tag("style").unwrap_or_default()),
                request.tag("text").unwrap_or_default(),
                request.tag("addressee") == Some("patient"),
                request.tag("targets").unwrap_or_default(),
            )),
            a if a.starts_with("auxiliary:") => Ok(render_auxiliary(
                request.tag("target_spoken").unwrap_or(&a["auxiliary:".len()..]),
                request.tag("setting").unwrap_or_default(),
                request.tag("address").unwrap_or_default(),
            )),
            other => Err(GatewayError::Protocol {
                backend: Self::ID.into(),
                message: format!("unknown agent {other:?}"),
            }),
        }
    }
}

impl LlmGateway for TemplateBackend {
    fn backend_id(&self) -> String {
        Self::ID.to_string()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let content = self.render(request)?;
        Ok(ChatResponse {
            token_counts: TokenCounts {
                prompt: request.prompt_tokens() as u64,
                completion: count_tokens(&content) as u64,
            },
            content,
            backend_id: Self::ID.to_string(),
            latency_ms: 0,
        })
    }
}
