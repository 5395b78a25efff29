//! Case scenario generation: patient profile, caller identity, and context.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::llm::{ChatMessage, ChatRequest, GatewayError, LlmGateway, Role};
use crate::taxonomy::{CallerIdentity, CriticalEntity, Taxonomy};

const BUNDLED_CATALOGS: &str = include_str!("../data/catalogs.json");
const BUNDLED_PRESENTATIONS: &str = include_str!("../data/presentations.json");
const BUNDLED_PROFILES: &str = include_str!("../data/fixture_profiles.jsonl");

/// Seed used to produce `data/fixture_profiles.jsonl`.
pub const FIXTURE_PROFILE_SEED: u64 = 20_260_101;
pub const FIXTURE_PROFILE_COUNT: usize = 100;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("unknown chief complaint {0:?}")]
    UnknownComplaint(String),
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("profile file line {line}: {message}")]
    ProfileParse { line: usize, message: String },
    #[error("catalog error: {0}")]
    Catalog(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sex {
    Female,
    Male,
    Unspecified,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatientProfile {
    pub age_years: u32,
    pub sex: Sex,
    pub conscious: bool,
    pub breathing: bool,
    pub can_speak: bool,
    pub ground_truth_cc: String,
    pub salient_findings: Vec<String>,
}

impl PatientProfile {
    pub fn check(&self, taxonomy: &Taxonomy) -> Result<(), ScenarioError> {
        if taxonomy.get(&self.ground_truth_cc).is_none() {
            return Err(ScenarioError::UnknownComplaint(self.ground_truth_cc.clone()));
        }
        if !self.conscious && self.can_speak {
            return Err(ScenarioError::InvalidProfile(
                "an unconscious patient cannot speak".into(),
            ));
        }
        if self.salient_findings.iter().any(|f| f.trim().is_empty()) {
            return Err(ScenarioError::InvalidProfile("blank salient finding".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Home,
    PublicSpace,
    Workplace,
    Roadway,
    Other,
}

impl Setting {
    pub const ALL: [Setting; 5] = [
        Setting::Home,
        Setting::PublicSpace,
        Setting::Workplace,
        Setting::Roadway,
        Setting::Other,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeOfDay {
    Morning,
    Afternoon,
    Evening,
    Night,
}

impl TimeOfDay {
    pub const ALL: [TimeOfDay; 4] = [
        TimeOfDay::Morning,
        TimeOfDay::Afternoon,
        TimeOfDay::Evening,
        TimeOfDay::Night,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TimeOfDay::Morning => "morning",
            TimeOfDay::Afternoon => "afternoon",
            TimeOfDay::Evening => "evening",
            TimeOfDay::Night => "night",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub id: String,
    pub profile: PatientProfile,
    pub caller_identity: CallerIdentity,
    pub setting: Setting,
    pub time_of_day: TimeOfDay,
    pub relationship: String,
    pub language_mismatch: bool,
    pub rng_seed: u64,
    pub critical_entities_required: BTreeSet<CriticalEntity>,
}

impl Scenario {
    pub fn check(&self, taxonomy: &Taxonomy) -> Result<(), ScenarioError> {
        self.profile.check(taxonomy)?;
        if !eligible_identities(&self.profile).contains(&self.caller_identity) {
            return Err(ScenarioError::InvalidProfile(format!(
                "caller identity {} is not eligible for this profile",
                self.caller_identity.as_str()
            )));
        }
        if self.language_mismatch != (self.caller_identity == CallerIdentity::LimitedProficiency) {
            return Err(ScenarioError::InvalidProfile(
                "language_mismatch must match the limited_proficiency identity".into(),
            ));
        }
        Ok(())
    }
}

/// Identities that are logically consistent with the patient's state.
pub fn eligible_identities(profile: &PatientProfile) -> BTreeSet<CallerIdentity> {
    CallerIdentity::ALL
        .into_iter()
        .filter(|id| *id != CallerIdentity::Patient || (profile.conscious && profile.can_speak))
        .collect()
}

/// Fixed sampling catalogs: street addresses per setting, spoken setting
/// labels, and relationship strings per caller identity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Catalogs {
    pub settings: BTreeMap<Setting, Vec<String>>,
    pub setting_labels: BTreeMap<Setting, String>,
    pub times_of_day: Vec<TimeOfDay>,
    pub relationships: BTreeMap<CallerIdentity, Vec<String>>,
}

impl Catalogs {
    pub fn bundled() -> Self {
        let c: Catalogs = serde_json::from_str(BUNDLED_CATALOGS).expect("bundled catalogs parse");
        c.check().expect("bundled catalogs are complete");
        c
    }

    pub fn check(&self) -> Result<(), ScenarioError> {
        for s in Setting::ALL {
            if self.settings.get(&s).is_none_or(Vec::is_empty) {
                return Err(ScenarioError::Catalog(format!("no addresses for {s:?}")));
            }
            if !self.setting_labels.contains_key(&s) {
                return Err(ScenarioError::Catalog(format!("no label for {s:?}")));
            }
        }
        for id in CallerIdentity::ALL {
            if self.relationships.get(&id).is_none_or(Vec::is_empty) {
                return Err(ScenarioError::Catalog(format!("no relationships for {}", id.as_str())));
            }
        }
        if self.times_of_day.is_empty() {
            return Err(ScenarioError::Catalog("no times of day".into()));
        }
        Ok(())
    }

    pub fn setting_label(&self, setting: Setting) -> &str {
        &self.setting_labels[&setting]
    }
}

fn derive_seed(taxonomy: &Taxonomy, profile: &PatientProfile, seed: u64) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(taxonomy.checksum().as_bytes());
    hasher.update(serde_json::to_vec(profile).expect("profile serializes"));
    hasher.update(seed.to_le_bytes());
    hasher.finalize().into()
}

pub struct ScenarioGenerator {
    catalogs: Catalogs,
}

impl Default for ScenarioGenerator {
    fn default() -> Self {
        Self::new(Catalogs::bundled())
    }
}

impl ScenarioGenerator {
    pub fn new(catalogs: Catalogs) -> Self {
        Self { catalogs }
    }

    pub fn catalogs(&self) -> &Catalogs {
        &self.catalogs
    }

    /// Pure function of (taxonomy checksum, profile, seed).
    pub fn generate(
        &self,
        taxonomy: &Taxonomy,
        profile: &PatientProfile,
        seed: u64,
    ) -> Result<Scenario, ScenarioError> {
        profile.check(taxonomy)?;
        let entry = taxonomy
            .lookup(&profile.ground_truth_cc)
            .map_err(|_| ScenarioError::UnknownComplaint(profile.ground_truth_cc.clone()))?;
        let derived = derive_seed(taxonomy, profile, seed);
        let mut rng = ChaCha8Rng::from_seed(derived);

        let eligible: Vec<_> = eligible_identities(profile).into_iter().collect();
        let caller_identity = eligible[rng.gen_range(0..eligible.len())];
        let setting = Setting::ALL[rng.gen_range(0..Setting::ALL.len())];
        let times = &self.catalogs.times_of_day;
        let time_of_day = times[rng.gen_range(0..times.len())];
        let rels = &self.catalogs.relationships[&caller_identity];
        let relationship = rels[rng.gen_range(0..rels.len())].clone();
        let rng_seed: u64 = rng.gen();

        Ok(Scenario {
            id: format!("sc-{}", hex::encode(&derived[..6])),
            profile: profile.clone(),
            caller_identity,
            setting,
            time_of_day,
            relationship,
            language_mismatch: caller_identity == CallerIdentity::LimitedProficiency,
            rng_seed,
            critical_entities_required: entry.critical_entities.clone(),
        })
    }
}

pub fn generate_scenario(taxonomy: &Taxonomy, profile: &PatientProfile, seed: u64) -> Result<Scenario, ScenarioError> {
    ScenarioGenerator::default().generate(taxonomy, profile, seed)
}

/// Grammatical person used when the caller talks about the patient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Person {
    First,
    ThirdSingular,
    ThirdPlural,
}

/// Concrete, derived facts the caller agent can draw on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallerFacts {
    pub address: String,
    pub callback_number: String,
    /// First mention of the patient at sentence start, e.g. "My husband".
    pub reference: String,
    /// Pronoun for later mentions: "I", "he", "she" or "they".
    pub pronoun: String,
    pub person: Person,
    pub setting_label: String,
}

impl CallerFacts {
    pub fn derive(scenario: &Scenario, catalogs: &Catalogs) -> Self {
        let addresses = &catalogs.settings[&scenario.setting];
        let pick = (scenario.rng_seed % addresses.len() as u64) as usize;
        let digits = scenario.rng_seed / 7 % 10_000_000;
        let callback_number = format!("555-{:03}-{:04}", digits / 10_000 % 1000, digits % 10_000);
        let sex = scenario.profile.sex;
        let gendered = |f: &str, m: &str, n: &str| match sex {
            Sex::Female => f.to_string(),
            Sex::Male => m.to_string(),
            Sex::Unspecified => n.to_string(),
        };
        let (person, pronoun) = match (scenario.caller_identity, sex) {
            (CallerIdentity::Patient, _) => (Person::First, "I".to_string()),
            (_, Sex::Female) => (Person::ThirdSingular, "she".to_string()),
            (_, Sex::Male) => (Person::ThirdSingular, "he".to_string()),
            (_, Sex::Unspecified) => (Person::ThirdPlural, "they".to_string()),
        };
        let rel = scenario.relationship.as_str();
        let reference = match scenario.caller_identity {
            CallerIdentity::Patient => "I".to_string(),
            CallerIdentity::Bystander => match rel {
                "store clerk" => "A customer here".to_string(),
                _ => gendered("A woman here", "A man here", "A person here"),
            },
            CallerIdentity::MultipleCallers => match rel {
                "neighbors" => "Our neighbor".to_string(),
                "coworkers" => "Our coworker".to_string(),
                _ => "Our friend".to_string(),
            },
            CallerIdentity::InvolvedParty => match rel {
                "driver involved" => "The person in the other car".to_string(),
                "coworker on the same shift" => "My coworker".to_string(),
                _ => "My friend".to_string(),
            },
            CallerIdentity::FamilyAssociate | CallerIdentity::LimitedProficiency => match rel {
                "spouse" => gendered("My wife", "My husband", "My partner"),
                "child" => gendered("My mother", "My father", "My parent"),
                "parent" => gendered("My daughter", "My son", "My child"),
                "sibling" => gendered("My sister", "My brother", "My sibling"),
                "grandchild" => gendered("My grandmother", "My grandfather", "My grandparent"),
                "roommate" => "My roommate".to_string(),
                "neighbor" => "My neighbor".to_string(),
                _ => "My friend".to_string(),
            },
        };
        CallerFacts {
            address: addresses[pick].clone(),
            callback_number,
            reference,
            pronoun,
            person,
            setting_label: catalogs.setting_label(scenario.setting).to_string(),
        }
    }
}

/// Conjugates the leading verb of a third-person-singular predicate.
pub fn conjugate(predicate: &str, person: Person) -> String {
    let (head, rest) = predicate.split_once(' ').unwrap_or((predicate, ""));
    let head = match (person, head) {
        (Person::ThirdSingular, h) => h.to_string(),
        (Person::First, "is") => "am".into(),
        (Person::ThirdPlural, "is") => "are".into(),
        (_, "has") => "have".into(),
        (Person::ThirdPlural, "was") => "were".into(),
        (_, "says") => "say".into(),
        (_, "feels") => "feel".into(),
        (_, "keeps") => "keep".into(),
        (_, "thinks") => "think".into(),
        (_, h) => h.to_string(),
    };
    if rest.is_empty() {
        head
    } else {
        format!("{head} {rest}")
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Sentence used when the caller's first language differs from the dispatcher's.
pub const LIMITED_PROFICIENCY_MARKER: &str =
    "Your first language is not English, and you struggle to find the right words.";

/// Deterministic lay-language narrative for a scenario.
///
/// Mentions the setting, time of day, relationship and the salient findings.
/// Structured identifiers never appear.
pub fn narrative_template(scenario: &Scenario, catalogs: &Catalogs) -> String {
    let facts = CallerFacts::derive(scenario, catalogs);
    let p = &scenario.profile;
    let mut out = String::new();
    out.push_str(&format!(
        "It is {} and you are at a {} ({}). ",
        scenario.time_of_day.as_str(),
        facts.setting_label,
        facts.address
    ));
    out.push_str(&format!(
        "Your relationship to the patient: {}. ",
        scenario.relationship
    ));
    let who = match facts.person {
        Person::First => "You".to_string(),
        _ => format!("The patient, aged {},", p.age_years),
    };
    if facts.person == Person::First {
        out.push_str(&format!("You are {} years old. ", p.age_years));
    }
    for (i, finding) in p.salient_findings.iter().enumerate() {
        let pred = match facts.person {
            Person::First => conjugate(finding, Person::ThirdPlural),
            _ => finding.clone(),
        };
        if i == 0 {
            out.push_str(&format!("{who} {pred}. "));
        } else {
            let subject = match facts.person {
                Person::First => "You".to_string(),
                _ => capitalize(&facts.pronoun),
            };
            let pred = match facts.person {
                Person::ThirdPlural => conjugate(finding, Person::ThirdPlural),
                _ => pred,
            };
            out.push_str(&format!("{subject} also {pred}. "));
        }
    }
    if facts.person != Person::First {
        out.push_str(if p.conscious {
            "The patient is awake. "
        } else {
            "The patient is not awake. "
        });
    }
    out.push_str(&format!("Your phone number is {}. ", facts.callback_number));
    if scenario.language_mismatch {
        out.push_str(LIMITED_PROFICIENCY_MARKER);
        out.push(' ');
    }
    out.push_str("Describe only what you can see and hear, in everyday words.");
    out
}

/// Tags handed to the gateway so rule-based backends can render the narrative.
pub fn narrative_request(scenario: &Scenario, catalogs: &Catalogs, session_id: &str) -> ChatRequest {
    let mut req = ChatRequest::new(
        "Write a short second-person background for a person calling emergency services. \
         Use everyday words and never name a diagnosis.",
    );
    req.messages
        .push(ChatMessage::new(Role::System, narrative_template(scenario, catalogs)));
    req.temperature = 0.7;
    req.tags.insert("session".into(), session_id.into());
    req.tags.insert("agent".into(), "narrator".into());
    req.tags.insert("turn".into(), "0".into());
    req
}

/// Renders the caller's background narrative through the gateway.
pub fn render_background(scenario: &Scenario, gateway: &dyn LlmGateway) -> Result<String, GatewayError> {
    let catalogs = Catalogs::bundled();
    let req = narrative_request(scenario, &catalogs, &scenario.id);
    Ok(gateway.complete(&req)?.content)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Presentation {
    pub findings: Vec<String>,
    pub conscious: f64,
    pub breathing: f64,
    pub can_speak: f64,
    pub age_range: [u32; 2],
    #[serde(default)]
    pub sex: Option<Sex>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PresentationFile {
    presentations: BTreeMap<String, Presentation>,
}

/// Synthetic patient profiles standing in for EHR-derived ones.
pub struct ProfileSynthesizer {
    presentations: BTreeMap<String, Presentation>,
}

impl Default for ProfileSynthesizer {
    fn default() -> Self {
        let f: PresentationFile = serde_json::from_str(BUNDLED_PRESENTATIONS).expect("bundled presentations parse");
        Self {
            presentations: f.presentations,
        }
    }
}

impl ProfileSynthesizer {
    pub fn presentation(&self, cc: &str) -> Option<&Presentation> {
        self.presentations.get(cc)
    }

    pub fn synthesize_for(&self, cc: &str, seed: u64) -> Result<PatientProfile, ScenarioError> {
        let pres = self
            .presentations
            .get(cc)
            .ok_or_else(|| ScenarioError::UnknownComplaint(cc.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let age_years = rng.gen_range(pres.age_range[0]..=pres.age_range[1]);
        let sex = pres.sex.unwrap_or_else(|| match rng.gen_range(0..10) {
            0 => Sex::Unspecified,
            1..=4 => Sex::Female,
            _ => Sex::Male,
        });
        let conscious = rng.gen_bool(pres.conscious.clamp(0.0, 1.0));
        let breathing = conscious || rng.gen_bool(pres.breathing.clamp(0.0, 1.0));
        let can_speak = conscious && rng.gen_bool(pres.can_speak.clamp(0.0, 1.0));
        Ok(PatientProfile {
            age_years,
            sex,
            conscious,
            breathing,
            can_speak,
            ground_truth_cc: cc.to_string(),
            salient_findings: pres.findings.clone(),
        })
    }

    /// Profile for a uniformly drawn complaint.
    pub fn synthesize(&self, taxonomy: &Taxonomy, seed: u64) -> Result<PatientProfile, ScenarioError> {
        let ids: Vec<&str> = taxonomy.ids().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_cafe);
        let cc = ids[rng.gen_range(0..ids.len())];
        self.synthesize_for(cc, seed)
    }

    /// Cycles through the taxonomy ids in sorted order.
    pub fn fixture_set(
        &self,
        taxonomy: &Taxonomy,
        count: usize,
        seed: u64,
    ) -> Result<Vec<PatientProfile>, ScenarioError> {
        let ids: Vec<&str> = taxonomy.ids().collect();
        (0..count)
            .map(|i| self.synthesize_for(ids[i % ids.len()], seed.wrapping_add(i as u64)))
            .collect()
    }
}

pub fn load_profiles_jsonl(reader: impl BufRead) -> Result<Vec<PatientProfile>, ScenarioError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| ScenarioError::ProfileParse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| ScenarioError::ProfileParse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn profiles_to_jsonl(profiles: &[PatientProfile]) -> String {
    profiles
        .iter()
        .map(|p| serde_json::to_string(p).expect("profile serializes") + "\n")
        .collect()
}

/// The 100 bundled fixture profiles.
pub fn bundled_profiles() -> Vec<PatientProfile> {
    load_profiles_jsonl(BUNDLED_PROFILES.as_bytes()).expect("bundled profiles parse")
}
