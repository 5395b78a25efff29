//! The seven-item expert review questionnaire served to rating clients.

use serde::{Deserialize, Serialize};

use crate::stats::Metric;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerType {
    Binary,
    Ordinal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anchor {
    pub value: u8,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionItem {
    /// Rating record field this item fills.
    pub field: Metric,
    pub section: String,
    pub category: String,
    pub question: String,
    pub answer_type: AnswerType,
    /// Empty for binary items.
    pub anchors: Vec<Anchor>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Questionnaire {
    pub version: u32,
    pub items: Vec<QuestionItem>,
}

const ANCHORS: [(u8, &str); 5] = [
    (1, "strongly dissatisfied"),
    (2, "dissatisfied"),
    (3, "acceptable"),
    (4, "satisfied"),
    (5, "very satisfied"),
];

const GUIDANCE: &str = "Guidance Efficacy";
const DISPATCH: &str = "Dispatch Effectiveness";

const ITEMS: [(Metric, &str, &str, &str); 7] = [
    (
        Metric::AdviceGiven,
        GUIDANCE,
        "Advice given",
        "Did the Dispatcher provide advice to the Caller?",
    ),
    (
        Metric::AmountAdvice,
        GUIDANCE,
        "Satisfaction with amount of advice",
        "Was the amount of advice provided by the Dispatcher adequate?",
    ),
    (
        Metric::Helpfulness,
        GUIDANCE,
        "Helpfulness of advice, if given",
        "Was the advice given by the Dispatcher helpful in assisting the Caller during the emergency?",
    ),
    (
        Metric::NumQuestions,
        DISPATCH,
        "Number of questions asked and answered",
        "Was the number of questions asked and answered between the Dispatcher and Caller reasonable?",
    ),
    (
        Metric::Relevance,
        DISPATCH,
        "Relevance of questions asked and answered",
        "Did the Dispatcher ask relevant questions to identify the medical issue?",
    ),
    (
        Metric::ContactedCorrect,
        DISPATCH,
        "Contact the correct potential other agents",
        "Did the Dispatcher successfully contact the correct potential other agents?",
    ),
    (
        Metric::ToldCallback,
        DISPATCH,
        "Told to call back if necessary",
        "Did the Dispatcher advise the Caller to call back if necessary?",
    ),
];

pub fn questionnaire() -> Questionnaire {
    let items = ITEMS
        .iter()
        .map(|&(field, section, category, question)| {
            let answer_type = if field.is_binary() {
                AnswerType::Binary
            } else {
                AnswerType::Ordinal
            };
            let anchors = match answer_type {
                AnswerType::Binary => Vec::new(),
                AnswerType::Ordinal => ANCHORS
                    .iter()
                    .map(|&(value, label)| Anchor {
                        value,
                        label: label.into(),
                    })
                    .collect(),
            };
            QuestionItem {
                field,
                section: section.into(),
                category: category.into(),
                question: question.into(),
                answer_type,
                anchors,
            }
        })
        .collect();
    Questionnaire { version: 1, items }
}
