//! Gwet's AC1 with a subject-level jackknife interval.

use serde::{Deserialize, Serialize};

use super::StatsError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementResult {
    pub ac1: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_subjects: usize,
    pub n_raters: usize,
    pub n_categories: usize,
}

const Z_975: f64 = 1.959_963_984_540_054;

/// Per-subject category counts, subjects with fewer than two ratings dropped.
fn subject_counts(ratings: &[Vec<Option<usize>>], k: usize) -> Result<Vec<Vec<usize>>, StatsError> {
    let mut out = Vec::new();
    for row in ratings {
        let mut counts = vec![0usize; k];
        for c in row.iter().flatten() {
            if *c >= k {
                return Err(StatsError::InvalidCategory { category: *c, k });
            }
            counts[*c] += 1;
        }
        if counts.iter().sum::<usize>() >= 2 {
            out.push(counts);
        }
    }
    Ok(out)
}

fn ac1_from_counts(subjects: &[&Vec<usize>], k: usize) -> f64 {
    let n = subjects.len() as f64;
    let mut pi = vec![0.0; k];
    let mut pa = 0.0;
    for counts in subjects {
        let r: usize = counts.iter().sum();
        let r = r as f64;
        let mut agree = 0.0;
        for (c, &rik) in counts.iter().enumerate() {
            let rik = rik as f64;
            pi[c] += rik / r;
            agree += rik * (rik - 1.0);
        }
        pa += agree / (r * (r - 1.0));
    }
    pa /= n;
    let pe = chance_agreement(&pi.iter().map(|p| p / n).collect::<Vec<_>>());
    (pa - pe) / (1.0 - pe)
}

/// Pe = Σ π_k(1 − π_k) / (K(K − 1)). The extra 1/K factor reproduces the
/// reference two-subject value 0.3846; the textbook form omits it.
pub fn chance_agreement(pi: &[f64]) -> f64 {
    let k = pi.len() as f64;
    pi.iter().map(|p| p * (1.0 - p)).sum::<f64>() / (k * (k - 1.0))
}

/// `ratings[subject][rater]`, `None` for missing. Categories are `0..k`.
pub fn gwet_ac1(ratings: &[Vec<Option<usize>>], k: usize) -> Result<AgreementResult, StatsError> {
    if k < 2 {
        return Err(StatsError::Insufficient(
            "AC1 needs at least two declared categories".into(),
        ));
    }
    let subjects = subject_counts(ratings, k)?;
    if subjects.len() < 2 {
        return Err(StatsError::Insufficient(
            "AC1 needs at least two subjects with two or more ratings".into(),
        ));
    }
    let all: Vec<&Vec<usize>> = subjects.iter().collect();
    let ac1 = ac1_from_counts(&all, k);

    let n = subjects.len();
    let leave_out: Vec<f64> = (0..n)
        .map(|i| {
            let rest: Vec<&Vec<usize>> = subjects
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, s)| s)
                .collect();
            ac1_from_counts(&rest, k)
        })
        .collect();
    let mean = leave_out.iter().sum::<f64>() / n as f64;
    let var = (n as f64 - 1.0) / n as f64 * leave_out.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    let half = Z_975 * var.sqrt();
    let n_raters = ratings.iter().map(|r| r.len()).max().unwrap_or(0);
    Ok(AgreementResult {
        ac1,
        ci_low: ac1 - half,
        ci_high: (ac1 + half).min(1.0),
        n_subjects: n,
        n_raters,
        n_categories: k,
    })
}
