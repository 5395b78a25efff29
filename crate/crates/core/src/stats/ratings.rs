//! Questionnaire records and their CSV form.

use std::io::Read;

use serde::{Deserialize, Serialize};

use super::StatsError;

/// One rater's answers for one case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatingRecord {
    pub case_id: String,
    pub rater_id: String,
    pub advice_given: bool,
    pub amount_advice: u8,
    pub helpfulness: u8,
    pub num_questions: u8,
    pub relevance: u8,
    pub contacted_correct: bool,
    pub told_callback: bool,
}

pub const RATING_FIELDS: [&str; 9] = [
    "case_id",
    "rater_id",
    "advice_given",
    "amount_advice",
    "helpfulness",
    "num_questions",
    "relevance",
    "contacted_correct",
    "told_callback",
];

impl RatingRecord {
    pub fn validate(&self) -> Result<(), StatsError> {
        let invalid = |field: &'static str, message: String| StatsError::InvalidRecord {
            case_id: self.case_id.clone(),
            rater_id: self.rater_id.clone(),
            field,
            message,
        };
        if self.case_id.trim().is_empty() {
            return Err(invalid("case_id", "must be nonempty".into()));
        }
        if self.rater_id.trim().is_empty() {
            return Err(invalid("rater_id", "must be nonempty".into()));
        }
        for m in Metric::ALL.iter().filter(|m| !m.is_binary()) {
            let v = m.raw(self);
            if !(1..=5).contains(&v) {
                return Err(invalid(m.field(), format!("{v} is outside 1..=5")));
            }
        }
        Ok(())
    }
}

/// The seven questionnaire items.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    AdviceGiven,
    AmountAdvice,
    Helpfulness,
    NumQuestions,
    Relevance,
    ContactedCorrect,
    ToldCallback,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::AdviceGiven,
        Metric::AmountAdvice,
        Metric::Helpfulness,
        Metric::NumQuestions,
        Metric::Relevance,
        Metric::ContactedCorrect,
        Metric::ToldCallback,
    ];

    pub fn field(self) -> &'static str {
        match self {
            Metric::AdviceGiven => "advice_given",
            Metric::AmountAdvice => "amount_advice",
            Metric::Helpfulness => "helpfulness",
            Metric::NumQuestions => "num_questions",
            Metric::Relevance => "relevance",
            Metric::ContactedCorrect => "contacted_correct",
            Metric::ToldCallback => "told_callback",
        }
    }

    pub fn is_binary(self) -> bool {
        matches!(
            self,
            Metric::AdviceGiven | Metric::ContactedCorrect | Metric::ToldCallback
        )
    }

    pub fn n_categories(self) -> usize {
        if self.is_binary() {
            2
        } else {
            5
        }
    }

    /// Binary items as 0/1, ordinal items as the 1..=5 score.
    pub fn raw(self, r: &RatingRecord) -> u8 {
        match self {
            Metric::AdviceGiven => r.advice_given as u8,
            Metric::AmountAdvice => r.amount_advice,
            Metric::Helpfulness => r.helpfulness,
            Metric::NumQuestions => r.num_questions,
            Metric::Relevance => r.relevance,
            Metric::ContactedCorrect => r.contacted_correct as u8,
            Metric::ToldCallback => r.told_callback as u8,
        }
    }

    /// Zero-based category index.
    pub fn category(self, r: &RatingRecord) -> usize {
        if self.is_binary() {
            self.raw(r) as usize
        } else {
            self.raw(r) as usize - 1
        }
    }
}

/// Reads ratings CSV. Lines starting with `#` are provenance comments; the
/// header must list exactly the record fields in order.
pub fn read_ratings_csv(reader: impl Read) -> Result<Vec<RatingRecord>, StatsError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| StatsError::Csv {
        line: 1,
        message: e.to_string(),
    })?;
    let found: Vec<String> = headers.iter().map(str::to_string).collect();
    if found != RATING_FIELDS {
        return Err(StatsError::Header {
            expected: RATING_FIELDS.join(","),
            found: found.join(","),
        });
    }
    let mut out = Vec::new();
    for row in rdr.deserialize::<RatingRecord>() {
        let record = row.map_err(|e| StatsError::Csv {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        record.validate()?;
        out.push(record);
    }
    Ok(out)
}

pub fn ratings_to_csv(records: &[RatingRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r).expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}
