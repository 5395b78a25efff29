//! Frequencies and percentages per questionnaire item.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ratings::{Metric, RatingRecord};
use super::StatsError;

pub const CONSENSUS_RATER: &str = "consensus";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinarySummary {
    pub metric: Metric,
    pub n: usize,
    pub yes: usize,
    pub pct_yes: f64,
    pub pct_no: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrdinalSummary {
    pub metric: Metric,
    pub n: usize,
    pub counts: BTreeMap<u8, usize>,
    /// Proportions over the scores that occur.
    pub distribution: BTreeMap<u8, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptiveSummary {
    pub n_cases: usize,
    pub n_records: usize,
    pub binary: Vec<BinarySummary>,
    pub ordinal: Vec<OrdinalSummary>,
}

/// Majority vote per binary item (ties count as "no") and lower median per
/// ordinal item, one record per case in case-id order.
pub fn consensus(records: &[RatingRecord]) -> Vec<RatingRecord> {
    let mut by_case: BTreeMap<&str, Vec<&RatingRecord>> = BTreeMap::new();
    for r in records {
        by_case.entry(r.case_id.as_str()).or_default().push(r);
    }
    by_case
        .into_iter()
        .map(|(case, rs)| {
            let vote = |m: Metric| 2 * rs.iter().filter(|r| m.raw(r) == 1).count() > rs.len();
            let median = |m: Metric| {
                let mut v: Vec<u8> = rs.iter().map(|r| m.raw(r)).collect();
                v.sort_unstable();
                v[(v.len() - 1) / 2]
            };
            RatingRecord {
                case_id: case.to_string(),
                rater_id: CONSENSUS_RATER.into(),
                advice_given: vote(Metric::AdviceGiven),
                amount_advice: median(Metric::AmountAdvice),
                helpfulness: median(Metric::Helpfulness),
                num_questions: median(Metric::NumQuestions),
                relevance: median(Metric::Relevance),
                contacted_correct: vote(Metric::ContactedCorrect),
                told_callback: vote(Metric::ToldCallback),
            }
        })
        .collect()
}

/// Case-level summary over the per-case consensus.
pub fn descriptive(records: &[RatingRecord]) -> Result<DescriptiveSummary, StatsError> {
    if records.is_empty() {
        return Err(StatsError::Empty);
    }
    let cases = consensus(records);
    let n = cases.len();
    let mut binary = Vec::new();
    let mut ordinal = Vec::new();
    for m in Metric::ALL {
        if m.is_binary() {
            let yes = cases.iter().filter(|r| m.raw(r) == 1).count();
            binary.push(BinarySummary {
                metric: m,
                n,
                yes,
                pct_yes: 100.0 * yes as f64 / n as f64,
                pct_no: 100.0 * (n - yes) as f64 / n as f64,
            });
        } else {
            let mut counts = BTreeMap::new();
            for r in &cases {
                *counts.entry(m.raw(r)).or_insert(0usize) += 1;
            }
            let distribution = counts.iter().map(|(k, v)| (*k, *v as f64 / n as f64)).collect();
            ordinal.push(OrdinalSummary {
                metric: m,
                n,
                counts,
                distribution,
            });
        }
    }
    Ok(DescriptiveSummary {
        n_cases: n,
        n_records: records.len(),
        binary,
        ordinal,
    })
}
