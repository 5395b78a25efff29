//! Chief-complaint taxonomy and fact commons.
//!
//! The taxonomy file is UTF-8 JSON with a top-level `version` string and an
//! `entries` array. Loading parses the document, runs every validation rule,
//! and only then builds an immutable [`Taxonomy`] whose checksum is computed
//! over a normalized serialization (entries sorted by id), so entry order in
//! the file does not affect it.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Read;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Sentinel label used by the classifier when no complaint can be assigned.
pub const LACK_OF_INFORMATION: &str = "lack_of_information";

const BUNDLED_TAXONOMY: &str = include_str!("../data/taxonomy.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Medical,
    Traumatic,
    Environmental,
    Obstetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Urgency {
    LifeCritical,
    TraumaticIncident,
    IndividualComplaint,
}

impl Urgency {
    pub const ALL: [Urgency; 3] = [
        Urgency::LifeCritical,
        Urgency::TraumaticIncident,
        Urgency::IndividualComplaint,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Urgency::LifeCritical => "life_critical",
            Urgency::TraumaticIncident => "traumatic_incident",
            Urgency::IndividualComplaint => "individual_complaint",
        }
    }
}

impl fmt::Display for Urgency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// External agencies and protocol services a dispatcher may escalate to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxiliaryResource {
    Emdprs,
    Police,
    Fire,
    PoisonControl,
}

impl AuxiliaryResource {
    pub const ALL: [AuxiliaryResource; 4] = [
        AuxiliaryResource::Emdprs,
        AuxiliaryResource::Police,
        AuxiliaryResource::Fire,
        AuxiliaryResource::PoisonControl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AuxiliaryResource::Emdprs => "emdprs",
            AuxiliaryResource::Police => "police",
            AuxiliaryResource::Fire => "fire",
            AuxiliaryResource::PoisonControl => "poison_control",
        }
    }

    /// Name used in spoken dispatcher lines and mock acknowledgments.
    pub fn spoken(self) -> &'static str {
        match self {
            AuxiliaryResource::Emdprs => "EMDPRS protocol desk",
            AuxiliaryResource::Police => "police",
            AuxiliaryResource::Fire => "fire",
            AuxiliaryResource::PoisonControl => "poison control",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.as_str() == s)
    }
}

impl fmt::Display for AuxiliaryResource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A required piece of call information whose elicitation drives efficiency scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticalEntity {
    Location,
    CallbackNumber,
    PatientAge,
    Consciousness,
    Breathing,
    ChiefComplaintStated,
    HazardsPresent,
}

impl CriticalEntity {
    pub const ALL: [CriticalEntity; 7] = [
        CriticalEntity::Location,
        CriticalEntity::CallbackNumber,
        CriticalEntity::PatientAge,
        CriticalEntity::Consciousness,
        CriticalEntity::Breathing,
        CriticalEntity::ChiefComplaintStated,
        CriticalEntity::HazardsPresent,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CriticalEntity::Location => "location",
            CriticalEntity::CallbackNumber => "callback_number",
            CriticalEntity::PatientAge => "patient_age",
            CriticalEntity::Consciousness => "consciousness",
            CriticalEntity::Breathing => "breathing",
            CriticalEntity::ChiefComplaintStated => "chief_complaint_stated",
            CriticalEntity::HazardsPresent => "hazards_present",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.as_str() == s)
    }
}

/// The six prototypical caller identities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallerIdentity {
    Patient,
    Bystander,
    FamilyAssociate,
    MultipleCallers,
    InvolvedParty,
    LimitedProficiency,
}

impl CallerIdentity {
    pub const ALL: [CallerIdentity; 6] = [
        CallerIdentity::Patient,
        CallerIdentity::Bystander,
        CallerIdentity::FamilyAssociate,
        CallerIdentity::MultipleCallers,
        CallerIdentity::InvolvedParty,
        CallerIdentity::LimitedProficiency,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CallerIdentity::Patient => "patient",
            CallerIdentity::Bystander => "bystander",
            CallerIdentity::FamilyAssociate => "family_associate",
            CallerIdentity::MultipleCallers => "multiple_callers",
            CallerIdentity::InvolvedParty => "involved_party",
            CallerIdentity::LimitedProficiency => "limited_proficiency",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

/// Six-phase call progression. Declaration order is the forward order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallPhase {
    InitialIntake,
    SceneAssessment,
    Dispatch,
    RealTimeUpdates,
    PreArrivalInstructions,
    CallClosure,
}

impl CallPhase {
    pub const ALL: [CallPhase; 6] = [
        CallPhase::InitialIntake,
        CallPhase::SceneAssessment,
        CallPhase::Dispatch,
        CallPhase::RealTimeUpdates,
        CallPhase::PreArrivalInstructions,
        CallPhase::CallClosure,
    ];

    /// 1-based position in the forward progression.
    pub fn ordinal(self) -> u8 {
        self as u8 + 1
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CallPhase::InitialIntake => "initial_intake",
            CallPhase::SceneAssessment => "scene_assessment",
            CallPhase::Dispatch => "dispatch",
            CallPhase::RealTimeUpdates => "real_time_updates",
            CallPhase::PreArrivalInstructions => "pre_arrival_instructions",
            CallPhase::CallClosure => "call_closure",
        }
    }

    /// Whether `self -> next` is a member of the allowed transition relation.
    pub fn can_transition_to(self, next: CallPhase) -> bool {
        use CallPhase::*;
        matches!(
            (self, next),
            (InitialIntake, SceneAssessment)
                | (SceneAssessment, Dispatch)
                | (Dispatch, RealTimeUpdates)
                | (RealTimeUpdates, PreArrivalInstructions)
                | (PreArrivalInstructions, RealTimeUpdates)
                | (RealTimeUpdates, CallClosure)
                | (PreArrivalInstructions, CallClosure)
        )
    }
}

impl fmt::Display for CallPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One fact-commons record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChiefComplaintEntry {
    pub id: String,
    pub name: String,
    pub category: Category,
    pub urgency: Urgency,
    pub background: String,
    pub typical_symptoms: Vec<String>,
    pub keyword_triggers: Vec<String>,
    pub pre_arrival_instructions: Vec<String>,
    pub red_flags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub special_considerations: Option<String>,
    pub auxiliary_resources: BTreeSet<AuxiliaryResource>,
    pub critical_entities: BTreeSet<CriticalEntity>,
}

/// The file-level representation, before validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaxonomyDocument {
    pub version: String,
    pub entries: Vec<ChiefComplaintEntry>,
}

impl TaxonomyDocument {
    pub fn parse(source: impl Read) -> Result<Self, TaxonomyError> {
        serde_json::from_reader(source).map_err(|e| TaxonomyError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    /// Entry id the finding refers to, or empty for document-level findings.
    pub id: String,
    pub rule: String,
    pub detail: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.id.is_empty() {
            write!(f, "[{}] {}", self.rule, self.detail)
        } else {
            write!(f, "{}: [{}] {}", self.id, self.rule, self.detail)
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn has_rule(&self, rule: &str) -> bool {
        self.findings.iter().any(|f| f.rule == rule)
    }

    fn push(&mut self, id: &str, rule: &str, detail: impl Into<String>) {
        self.findings.push(Finding {
            id: id.to_string(),
            rule: rule.to_string(),
            detail: detail.into(),
        });
    }
}

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("taxonomy parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("taxonomy validation failed with {} finding(s): {}", .0.findings.len(), join_findings(.0))]
    Validation(ValidationReport),
    #[error("unknown chief complaint id {0:?}")]
    NotFound(String),
}

fn join_findings(report: &ValidationReport) -> String {
    report
        .findings
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

/// Lowercases, drops apostrophes, turns every other non-alphanumeric
/// character into a space and collapses whitespace.
///
/// Shared by trigger validation and the reference classifier so both see
/// the same token stream.
pub fn normalize_text(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        if ch == '\'' || ch == '\u{2019}' {
            continue;
        }
        if ch.is_alphanumeric() {
            out.extend(ch.to_lowercase());
        } else {
            out.push(' ');
        }
    }
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// True when `needle` occurs in `haystack` on word boundaries. Both inputs
/// must already be normalized.
pub(crate) fn contains_phrase(haystack: &str, needle: &str) -> bool {
    find_phrase(haystack, needle).is_some()
}

/// Byte offset of the first word-boundary occurrence of `needle`.
pub(crate) fn find_phrase(haystack: &str, needle: &str) -> Option<usize> {
    if needle.is_empty() {
        return None;
    }
    let mut start = 0;
    while let Some(pos) = haystack[start..].find(needle) {
        let at = start + pos;
        let end = at + needle.len();
        let left_ok = at == 0 || haystack.as_bytes()[at - 1] == b' ';
        let right_ok = end == haystack.len() || haystack.as_bytes()[end] == b' ';
        if left_ok && right_ok {
            return Some(at);
        }
        start = at + 1;
    }
    None
}

fn is_snake_case_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
        && !id.starts_with('_')
        && !id.ends_with('_')
        && !id.contains("__")
}

/// Runs every invariant over a parsed document and reports all violations.
pub fn validate_document(doc: &TaxonomyDocument) -> ValidationReport {
    let mut report = ValidationReport::default();
    if doc.version.trim().is_empty() {
        report.push("", "version_nonempty", "version must be a nonempty string");
    }
    if doc.entries.is_empty() {
        report.push("", "taxonomy_nonempty", "taxonomy must be nonempty");
        return report;
    }

    let mut seen: HashMap<&str, usize> = HashMap::new();
    for entry in &doc.entries {
        *seen.entry(entry.id.as_str()).or_default() += 1;
    }
    let mut dups: Vec<_> = seen.iter().filter(|(_, n)| **n > 1).map(|(id, _)| *id).collect();
    dups.sort_unstable();
    for id in dups {
        report.push(id, "id_unique", format!("duplicate id {id:?}"));
    }

    for entry in &doc.entries {
        validate_entry(entry, &mut report);
    }

    // Trigger phrases must not collide across entries, either exactly or by
    // one containing the other on word boundaries.
    let normalized: Vec<(&str, Vec<String>)> = doc
        .entries
        .iter()
        .map(|e| {
            (
                e.id.as_str(),
                e.keyword_triggers.iter().map(|t| normalize_text(t)).collect(),
            )
        })
        .collect();
    for (i, (id_a, trig_a)) in normalized.iter().enumerate() {
        for (id_b, trig_b) in normalized.iter().skip(i + 1) {
            for a in trig_a.iter().filter(|t| !t.is_empty()) {
                for b in trig_b.iter().filter(|t| !t.is_empty()) {
                    if a == b {
                        report.push(
                            id_a,
                            "trigger_disjointness",
                            format!("trigger {a:?} is shared with {id_b}"),
                        );
                    } else if contains_phrase(a, b) || contains_phrase(b, a) {
                        report.push(
                            id_a,
                            "trigger_overlap",
                            format!("trigger {a:?} overlaps {b:?} of {id_b}"),
                        );
                    }
                }
            }
        }
    }
    report
}

fn validate_entry(entry: &ChiefComplaintEntry, report: &mut ValidationReport) {
    let id = entry.id.as_str();
    if !is_snake_case_id(id) {
        report.push(id, "id_format", "id must be nonempty snake_case");
    }
    if id == LACK_OF_INFORMATION {
        report.push(id, "id_reserved", "id collides with the fallback label");
    }
    if entry.name.trim().is_empty() {
        report.push(id, "name_nonempty", "name must be nonempty");
    }
    if entry.background.trim().is_empty() {
        report.push(id, "background_nonempty", "background must be nonempty");
    }
    if entry.pre_arrival_instructions.is_empty() {
        report.push(id, "pre_arrival_nonempty", "pre_arrival_instructions must be nonempty");
    }
    if entry.keyword_triggers.is_empty() {
        report.push(id, "triggers_nonempty", "keyword_triggers must be nonempty");
    }
    if entry.critical_entities.is_empty() {
        report.push(id, "critical_entities_nonempty", "critical_entities must be nonempty");
    }
    for trigger in &entry.keyword_triggers {
        let norm = normalize_text(trigger);
        if norm.is_empty() {
            report.push(id, "trigger_normalized", format!("trigger {trigger:?} is blank"));
        } else if trigger.to_lowercase() != *trigger {
            report.push(
                id,
                "trigger_normalized",
                format!("trigger {trigger:?} is not lowercase"),
            );
        }
    }
    let lists: [(&str, &Vec<String>); 4] = [
        ("typical_symptoms", &entry.typical_symptoms),
        ("keyword_triggers", &entry.keyword_triggers),
        ("pre_arrival_instructions", &entry.pre_arrival_instructions),
        ("red_flags", &entry.red_flags),
    ];
    for (field, items) in lists {
        if items.iter().any(|s| s.trim().is_empty()) {
            report.push(id, "text_nonblank", format!("{field} contains a blank string"));
        }
    }
    if matches!(&entry.special_considerations, Some(s) if s.trim().is_empty()) {
        report.push(id, "text_nonblank", "special_considerations is present but blank");
    }
}

/// Immutable, validated taxonomy. Safe to share across threads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    version: String,
    entries: BTreeMap<String, ChiefComplaintEntry>,
    checksum: String,
}

impl Taxonomy {
    pub fn load(source: impl Read) -> Result<Self, TaxonomyError> {
        Self::from_document(TaxonomyDocument::parse(source)?)
    }

    pub fn from_document(doc: TaxonomyDocument) -> Result<Self, TaxonomyError> {
        let report = validate_document(&doc);
        if !report.is_clean() {
            return Err(TaxonomyError::Validation(report));
        }
        let entries: BTreeMap<_, _> = doc.entries.into_iter().map(|e| (e.id.clone(), e)).collect();
        let mut taxonomy = Taxonomy {
            version: doc.version,
            entries,
            checksum: String::new(),
        };
        taxonomy.checksum = hex::encode(Sha256::digest(taxonomy.normalized_json().as_bytes()));
        Ok(taxonomy)
    }

    /// The canonical 32-entry dataset shipped with the crate.
    pub fn bundled() -> Self {
        Self::load(BUNDLED_TAXONOMY.as_bytes()).expect("bundled taxonomy is valid")
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn checksum(&self) -> &str {
        &self.checksum
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &ChiefComplaintEntry> {
        self.entries.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn lookup(&self, id: &str) -> Result<&ChiefComplaintEntry, TaxonomyError> {
        self.entries
            .get(id)
            .ok_or_else(|| TaxonomyError::NotFound(id.to_string()))
    }

    pub fn get(&self, id: &str) -> Option<&ChiefComplaintEntry> {
        self.entries.get(id)
    }

    pub fn validate(&self) -> ValidationReport {
        validate_document(&self.to_document())
    }

    pub fn to_document(&self) -> TaxonomyDocument {
        TaxonomyDocument {
            version: self.version.clone(),
            entries: self.entries.values().cloned().collect(),
        }
    }

    fn normalized_json(&self) -> String {
        serde_json::to_string(&self.to_document()).expect("taxonomy serializes")
    }

    /// Pretty JSON in the taxonomy file format, entries sorted by id.
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("taxonomy serializes")
    }
}

pub fn validate(taxonomy: &Taxonomy) -> ValidationReport {
    taxonomy.validate()
}
