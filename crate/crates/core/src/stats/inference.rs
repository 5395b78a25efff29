//! One-way ANOVA and contingency-table tests.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::special::{chi2_sf, f_sf, ln_gamma};
use super::StatsError;
use crate::par::{map_indexed, Execution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub f_stat: f64,
    pub df_between: usize,
    pub df_within: usize,
    pub p_value: f64,
}

pub fn anova_oneway(groups: &[Vec<f64>]) -> Result<AnovaResult, StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::Insufficient("ANOVA needs at least two groups".into()));
    }
    if groups.iter().any(|g| g.is_empty()) {
        return Err(StatsError::Insufficient(
            "every ANOVA group needs an observation".into(),
        ));
    }
    let n: usize = groups.iter().map(Vec::len).sum();
    let k = groups.len();
    if n <= k {
        return Err(StatsError::Insufficient(
            "ANOVA needs more observations than groups".into(),
        ));
    }
    let grand = groups.iter().flatten().sum::<f64>() / n as f64;
    let (mut ss_between, mut ss_within) = (0.0, 0.0);
    for g in groups {
        let mean = g.iter().sum::<f64>() / g.len() as f64;
        ss_between += g.len() as f64 * (mean - grand).powi(2);
        ss_within += g.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
    }
    let scale = groups.iter().flatten().map(|x| x.abs()).fold(1.0, f64::max);
    if ss_within <= 1e-24 * scale * scale * n as f64 {
        return Err(StatsError::Degenerate(
            "zero within-group variance; F is undefined".into(),
        ));
    }
    let df_between = k - 1;
    let df_within = n - k;
    let f_stat = (ss_between / df_between as f64) / (ss_within / df_within as f64);
    Ok(AnovaResult {
        f_stat,
        df_between,
        df_within,
        p_value: f_sf(f_stat, df_between as f64, df_within as f64),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChiMethod {
    Pearson,
    Fisher2x2,
    Permutation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSquaredResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub method: ChiMethod,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PermutationConfig {
    pub draws: usize,
    pub seed: u64,
    pub exec: Execution,
}

pub const DEFAULT_PERMUTATION_DRAWS: usize = 100_000;
pub const DEFAULT_PERMUTATION_SEED: u64 = 0x5EED_AC1D;
/// Draws are split into this many independently seeded streams, so the
/// p-value does not depend on the thread count.
const PERMUTATION_CHUNKS: usize = 64;

impl Default for PermutationConfig {
    fn default() -> Self {
        Self {
            draws: DEFAULT_PERMUTATION_DRAWS,
            seed: DEFAULT_PERMUTATION_SEED,
            exec: Execution::default(),
        }
    }
}

fn margins(table: &[Vec<u64>]) -> Result<(Vec<u64>, Vec<u64>, u64), StatsError> {
    let c = table.first().map_or(0, Vec::len);
    if table.len() < 2 || c < 2 || table.iter().any(|r| r.len() != c) {
        return Err(StatsError::Insufficient(
            "contingency table must be rectangular and at least 2x2".into(),
        ));
    }
    let rows: Vec<u64> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<u64> = (0..c).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    if rows.iter().chain(&cols).any(|&m| m == 0) {
        return Err(StatsError::ZeroMarginal);
    }
    let total = rows.iter().sum();
    Ok((rows, cols, total))
}

fn pearson(table: &[Vec<u64>], rows: &[u64], cols: &[u64], total: u64) -> f64 {
    let mut stat = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &o) in row.iter().enumerate() {
            let e = rows[i] as f64 * cols[j] as f64 / total as f64;
            stat += (o as f64 - e).powi(2) / e;
        }
    }
    stat
}

/// Pearson statistic and the smallest expected count.
pub fn pearson_statistic(table: &[Vec<u64>]) -> Result<(f64, f64), StatsError> {
    let (rows, cols, total) = margins(table)?;
    let min_expected = rows
        .iter()
        .flat_map(|r| cols.iter().map(move |c| *r as f64 * *c as f64 / total as f64))
        .fold(f64::INFINITY, f64::min);
    Ok((pearson(table, &rows, &cols, total), min_expected))
}

fn ln_choose(n: u64, k: u64) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Two-sided Fisher exact p: total probability of tables with the observed
/// margins that are no more likely than the observed one.
pub fn fisher_exact_2x2(table: [[u64; 2]; 2]) -> f64 {
    let r0 = table[0][0] + table[0][1];
    let r1 = table[1][0] + table[1][1];
    let c0 = table[0][0] + table[1][0];
    let n = r0 + r1;
    let ln_p = |a: u64| ln_choose(r0, a) + ln_choose(r1, c0 - a) - ln_choose(n, c0);
    let lo = c0.saturating_sub(r1);
    let hi = c0.min(r0);
    let observed = ln_p(table[0][0]);
    let p: f64 = (lo..=hi)
        .map(ln_p)
        .filter(|lp| *lp <= observed + 1e-7)
        .map(f64::exp)
        .sum();
    p.min(1.0)
}

fn permutation_p(table: &[Vec<u64>], observed: f64, config: &PermutationConfig) -> f64 {
    let c = table[0].len();
    let mut row_of = Vec::new();
    let mut col_of = Vec::new();
    for (i, row) in table.iter().enumerate() {
        for (j, &count) in row.iter().enumerate() {
            for _ in 0..count {
                row_of.push(i);
                col_of.push(j);
            }
        }
    }
    let (rows, cols, total) = margins(table).expect("validated by caller");
    let draws = config.draws.max(1);
    let per_chunk = draws.div_ceil(PERMUTATION_CHUNKS);
    let hits: Vec<usize> = map_indexed(PERMUTATION_CHUNKS, config.exec, |chunk| {
        let start = chunk * per_chunk;
        let end = ((chunk + 1) * per_chunk).min(draws);
        if start >= end {
            return 0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(chunk as u64);
        let mut cols_perm = col_of.clone();
        let mut counts = vec![vec![0u64; c]; table.len()];
        let mut hits = 0;
        for _ in start..end {
            cols_perm.shuffle(&mut rng);
            counts.iter_mut().for_each(|r| r.iter_mut().for_each(|x| *x = 0));
            for (r, col) in row_of.iter().zip(&cols_perm) {
                counts[*r][*col] += 1;
            }
            if pearson(&counts, &rows, &cols, total) >= observed - 1e-9 {
                hits += 1;
            }
        }
        hits
    });
    let k: usize = hits.iter().sum();
    (k as f64 + 1.0) / (draws as f64 + 1.0)
}

/// Pearson chi-squared; Fisher exact (2x2) or a seeded permutation p-value
/// when some expected count is below 5.
pub fn chi_squared_with(table: &[Vec<u64>], config: &PermutationConfig) -> Result<ChiSquaredResult, StatsError> {
    let (statistic, min_expected) = pearson_statistic(table)?;
    let df = (table.len() - 1) * (table[0].len() - 1);
    let (p_value, method) = if min_expected >= 5.0 {
        (chi2_sf(statistic, df as f64), ChiMethod::Pearson)
    } else if table.len() == 2 && table[0].len() == 2 {
        let t = [[table[0][0], table[0][1]], [table[1][0], table[1][1]]];
        (fisher_exact_2x2(t), ChiMethod::Fisher2x2)
    } else {
        (permutation_p(table, statistic, config), ChiMethod::Permutation)
    };
    Ok(ChiSquaredResult {
        statistic,
        df,
        p_value,
        method,
    })
}

pub fn chi_squared(table: &[Vec<u64>]) -> Result<ChiSquaredResult, StatsError> {
    chi_squared_with(table, &PermutationConfig::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anova_examples() {
        let r = anova_oneway(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(r.f_stat, 8.0);
        assert_eq!((r.df_between, r.df_within), (1, 2));
        let same = anova_oneway(&[vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(same.f_stat, 0.0);
        assert_eq!(same.p_value, 1.0);
        assert!(anova_oneway(&[vec![2.0, 2.0], vec![3.0, 3.0]]).is_err());
    }

    #[test]
    fn independence_table() {
        let r = chi_squared(&[vec![10, 10], vec![10, 10]]).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.method, ChiMethod::Pearson);
    }

    #[test]
    fn zero_marginal() {
        assert!(matches!(
            chi_squared(&[vec![0, 3], vec![0, 4]]),
            Err(StatsError::ZeroMarginal)
        ));
    }

    #[test]
    fn permutation_ignores_thread_count() {
        let t = vec![vec![5, 0], vec![4, 1], vec![3, 2], vec![5, 0]];
        let mut cfg = PermutationConfig {
            draws: 5_000,
            ..Default::default()
        };
        let a = chi_squared_with(&t, &cfg).unwrap();
        cfg.exec = Execution::Sequential;
        let b = chi_squared_with(&t, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.method, ChiMethod::Permutation);
    }
}
