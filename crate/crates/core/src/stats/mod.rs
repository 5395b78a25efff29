//! Inter-rater reliability and between-rater inference.

pub mod agreement;
pub mod descriptive;
pub mod inference;
pub mod ratings;
pub mod special;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use agreement::{gwet_ac1, AgreementResult};
pub use descriptive::{consensus, descriptive, BinarySummary, DescriptiveSummary, OrdinalSummary};
pub use inference::{
    anova_oneway, chi_squared, chi_squared_with, fisher_exact_2x2, pearson_statistic, AnovaResult, ChiMethod,
    ChiSquaredResult, PermutationConfig,
};
pub use ratings::{ratings_to_csv, read_ratings_csv, Metric, RatingRecord, RATING_FIELDS};

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("insufficient data: {0}")]
    Insufficient(String),
    #[error("category {category} outside 0..{k}")]
    InvalidCategory { category: usize, k: usize },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("a row or column total is zero")]
    ZeroMarginal,
    #[error("no records")]
    Empty,
    #[error("need ≥2 raters, found {0}")]
    NeedTwoRaters(usize),
    #[error("ratings header mismatch: expected `{expected}`, found `{found}`")]
    Header { expected: String, found: String },
    #[error("ratings csv line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error("record ({case_id}, {rater_id}): {field} {message}")]
    InvalidRecord {
        case_id: String,
        rater_id: String,
        field: &'static str,
        message: String,
    },
}

/// A between-rater test on one item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetweenRaterRow {
    pub metric: Metric,
    /// `anova` or `chi_squared`.
    pub test: String,
    pub statistic: Option<f64>,
    pub df: Option<Vec<usize>>,
    pub p_value: Option<f64>,
    pub method: Option<ChiMethod>,
    /// Why the test is undefined, when it is.
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatisticsReport {
    pub n_records: usize,
    pub raters: Vec<String>,
    /// Cases rated by two or more raters; AC1 and between-rater tests use only these.
    pub multi_rated_cases: Vec<String>,
    pub agreement: BTreeMap<Metric, AgreementResult>,
    pub between_rater: Vec<BetweenRaterRow>,
    pub descriptive: DescriptiveSummary,
}

fn check_duplicates(records: &[RatingRecord]) -> Result<(), StatsError> {
    let mut seen = BTreeSet::new();
    for r in records {
        if !seen.insert((r.case_id.as_str(), r.rater_id.as_str())) {
            return Err(StatsError::InvalidRecord {
                case_id: r.case_id.clone(),
                rater_id: r.rater_id.clone(),
                field: "case_id",
                message: "duplicate (case, rater) pair".into(),
            });
        }
    }
    Ok(())
}

/// AC1 per item, ANOVA or chi-squared across raters per item, and the
/// descriptive tables.
pub fn analyze_ratings(records: &[RatingRecord], perm: &PermutationConfig) -> Result<StatisticsReport, StatsError> {
    if records.is_empty() {
        return Err(StatsError::Empty);
    }
    for r in records {
        r.validate()?;
    }
    check_duplicates(records)?;
    let raters: Vec<String> = records
        .iter()
        .map(|r| r.rater_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if raters.len() < 2 {
        return Err(StatsError::NeedTwoRaters(raters.len()));
    }
    let mut per_case: BTreeMap<&str, Vec<&RatingRecord>> = BTreeMap::new();
    for r in records {
        per_case.entry(&r.case_id).or_default().push(r);
    }
    per_case.retain(|_, rs| rs.len() >= 2);
    let multi: Vec<&RatingRecord> = per_case.values().flatten().copied().collect();
    let rater_index: BTreeMap<&str, usize> = raters.iter().enumerate().map(|(i, r)| (r.as_str(), i)).collect();

    let mut agreement = BTreeMap::new();
    let mut between_rater = Vec::new();
    for m in Metric::ALL {
        let matrix: Vec<Vec<Option<usize>>> = per_case
            .values()
            .map(|rs| {
                let mut row = vec![None; raters.len()];
                for r in rs {
                    row[rater_index[r.rater_id.as_str()]] = Some(m.category(r));
                }
                row
            })
            .collect();
        if let Ok(a) = gwet_ac1(&matrix, m.n_categories()) {
            agreement.insert(m, a);
        }

        let mut row = BetweenRaterRow {
            metric: m,
            test: if m.is_binary() { "chi_squared" } else { "anova" }.into(),
            statistic: None,
            df: None,
            p_value: None,
            method: None,
            note: None,
        };
        if m.is_binary() {
            let mut table = vec![vec![0u64; 2]; raters.len()];
            for r in &multi {
                table[rater_index[r.rater_id.as_str()]][m.category(r)] += 1;
            }
            table.retain(|r| r.iter().sum::<u64>() > 0);
            match chi_squared_with(&table, perm) {
                Ok(c) => {
                    row.statistic = Some(c.statistic);
                    row.df = Some(vec![c.df]);
                    row.p_value = Some(c.p_value);
                    row.method = Some(c.method);
                }
                Err(e) => row.note = Some(e.to_string()),
            }
        } else {
            let mut groups = vec![Vec::new(); raters.len()];
            for r in &multi {
                groups[rater_index[r.rater_id.as_str()]].push(m.raw(r) as f64);
            }
            groups.retain(|g| !g.is_empty());
            match anova_oneway(&groups) {
                Ok(a) => {
                    row.statistic = Some(a.f_stat);
                    row.df = Some(vec![a.df_between, a.df_within]);
                    row.p_value = Some(a.p_value);
                }
                Err(e) => row.note = Some(e.to_string()),
            }
        }
        between_rater.push(row);
    }

    Ok(StatisticsReport {
        n_records: records.len(),
        raters,
        multi_rated_cases: per_case.keys().map(|s| s.to_string()).collect(),
        agreement,
        between_rater,
        descriptive: descriptive(records)?,
    })
}
