//! Digit and coincidence forensics: second-digit frequency tests, a
//! within-cluster homogeneity χ², its exact permutation distribution, and
//! a Monte Carlo test for suspicious count ties.
//!
//! Vote counts that arise from many small independent decisions follow a
//! logarithmic law in their *second* digit. Tabulators who invent numbers
//! tend to break that law, so a χ² distance between observed second-digit
//! frequencies and the law is a cheap screen — and, just as importantly,
//! a screen whose *absence* of signal is informative: a clean second-digit
//! fit does not certify clean totals, because whole-ballot manipulation
//! preserves digit structure.
//!
//! The cluster χ² asks a sharper question: do the notebooks of one center
//! look like random splits of the same electorate? Under the shuffle null
//! the statistic has a known discrete distribution which
//! [`exact_cluster_chi2_distribution`] enumerates outright when the
//! allocation count is affordable; otherwise the shuffle-based Monte
//! Carlo in [`crate::shuffle`] estimates the same distribution — both
//! paths compute the statistic through one shared routine, so their
//! values are bitwise comparable.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use statrs::function::gamma::{gamma_ur, ln_gamma};
use thiserror::Error;

use crate::corpus::{ElectionDataset, Notebook};
use crate::shuffle::{ln_choose, sample_election, SeedSpec};

/// Errors from the digit and coincidence tests.
#[derive(Clone, Debug, Error, PartialEq)]
pub enum DigitError {
    #[error("no counts with at least two digits to test")]
    NoUsableCounts,
    #[error("cluster needs at least two notebooks with valid ballots, got {0}")]
    ClusterTooSmall(usize),
    #[error("every ballot in the cluster went the same way; the statistic is undefined")]
    DegenerateProportion,
    #[error("pool holds {pool} ballots but the notebooks hold {sizes}")]
    PoolSizeMismatch { pool: u64, sizes: u64 },
    #[error("exact distribution needs both YES and NO ballots in the pool")]
    DegeneratePool,
    #[error("more than {budget} allocations to enumerate; use the shuffle-based Monte Carlo instead")]
    BudgetExceeded { budget: u64 },
    #[error("at least two replicates are needed, got {0}")]
    TooFewReplicates(usize),
    #[error("the tie count never varies under the null for this dataset")]
    DegenerateNull,
    #[error("notebook {notebook:?} in center {center:?} has no tie group")]
    MissingGroup { center: String, notebook: String },
}

/// A distribution over the digits `0..=9`.
#[derive(Clone, Debug, PartialEq)]
pub struct DigitDistribution {
    pub probabilities: [f64; 10],
}

impl DigitDistribution {
    pub fn probability(&self, digit: u8) -> f64 {
        self.probabilities[digit as usize]
    }
}

/// The logarithmic law of the second significant digit:
/// `P(d) = Σ_{j=1..9} log10(1 + 1/(10j + d))`.
pub fn second_digit_law() -> DigitDistribution {
    let mut probabilities = [0.0; 10];
    for (d, slot) in probabilities.iter_mut().enumerate() {
        *slot = (1..=9)
            .map(|j| (1.0 + 1.0 / (10 * j + d as u64) as f64).log10())
            .sum();
    }
    DigitDistribution { probabilities }
}

/// Second significant digit of `n`, or `None` for single-digit numbers.
fn second_digit(n: u64) -> Option<u8> {
    if n < 10 {
        return None;
    }
    let mut n = n;
    while n >= 100 {
        n /= 10;
    }
    Some((n % 10) as u8)
}

/// Tally of second digits over a set of counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DigitFrequencies {
    /// How many counts had second digit `d`.
    pub counts: [u64; 10],
    /// Counts that contributed a digit.
    pub sample_size: u64,
    /// Counts below 10, which have no second digit.
    pub skipped: u64,
}

impl DigitFrequencies {
    /// Relative frequencies; errors if nothing was usable.
    pub fn frequencies(&self) -> Result<[f64; 10], DigitError> {
        if self.sample_size == 0 {
            return Err(DigitError::NoUsableCounts);
        }
        let n = self.sample_size as f64;
        let mut out = [0.0; 10];
        for (slot, &count) in out.iter_mut().zip(&self.counts) {
            *slot = count as f64 / n;
        }
        Ok(out)
    }
}

/// Tally the second digits of a stream of counts.
pub fn second_digit_frequencies(values: impl IntoIterator<Item = u64>) -> DigitFrequencies {
    let mut counts = [0u64; 10];
    let mut sample_size = 0;
    let mut skipped = 0;
    for value in values {
        match second_digit(value) {
            Some(d) => {
                counts[d as usize] += 1;
                sample_size += 1;
            }
            None => skipped += 1,
        }
    }
    DigitFrequencies {
        counts,
        sample_size,
        skipped,
    }
}

/// A χ² goodness-of-fit outcome.
///
/// `log10_p` carries the tail into territory where `p_value` itself
/// underflows to zero; for ordinary p-values it is simply `log10(p)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GofTest {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    pub log10_p: f64,
}

/// Upper tail of χ²(dof) at `statistic`, with a log-scale tail that stays
/// finite long after the p-value underflows.
fn chi2_upper_tail(statistic: f64, dof: usize) -> (f64, f64) {
    if statistic <= 0.0 {
        return (1.0, 0.0);
    }
    let a = dof as f64 / 2.0;
    let z = statistic / 2.0;
    let p = gamma_ur(a, z);
    let log10_p = if p >= 1e-290 {
        p.log10()
    } else {
        // Asymptotic expansion of the upper incomplete gamma for z >> a:
        // Q(a,z) ~ z^(a-1) e^(-z) / Γ(a) · Σ_n Π_{k<=n} (a-k)/z.
        let mut series = 1.0;
        let mut term = 1.0;
        for k in 1..30 {
            term *= (a - k as f64) / z;
            series += term;
            if term.abs() < 1e-16 * series.abs() {
                break;
            }
        }
        (-z + (a - 1.0) * z.ln() - ln_gamma(a) + series.ln()) / std::f64::consts::LN_10
    };
    (p, log10_p)
}

/// Pearson χ² of observed second-digit frequencies against the law,
/// compared to χ²(9).
pub fn benford_chi2(frequencies: &DigitFrequencies) -> Result<GofTest, DigitError> {
    let observed = frequencies.frequencies()?;
    let law = second_digit_law();
    let n = frequencies.sample_size as f64;
    let statistic: f64 = observed
        .iter()
        .zip(&law.probabilities)
        .map(|(f, p)| n * (f - p).powi(2) / p)
        .sum();
    let (p_value, log10_p) = chi2_upper_tail(statistic, 9);
    Ok(GofTest {
        statistic,
        dof: 9,
        p_value,
        log10_p,
    })
}

/// Homogeneity χ² over `(yes, valid)` rows with the pooled YES share as
/// the reference proportion. Rows without valid ballots are skipped.
///
/// The exact enumeration and the shuffle-based Monte Carlo both funnel
/// through this routine, so a simulated statistic and an enumerated atom
/// for the same allocation are bitwise identical.
fn chi2_from_counts(rows: &[(u64, u64)]) -> Result<(f64, usize), DigitError> {
    let used: Vec<(f64, f64)> = rows
        .iter()
        .filter(|(_, valid)| *valid > 0)
        .map(|&(yes, valid)| (yes as f64, valid as f64))
        .collect();
    if used.len() < 2 {
        return Err(DigitError::ClusterTooSmall(used.len()));
    }
    let total_yes: f64 = used.iter().map(|(y, _)| y).sum();
    let total_valid: f64 = used.iter().map(|(_, t)| t).sum();
    if total_yes == 0.0 || total_yes == total_valid {
        return Err(DigitError::DegenerateProportion);
    }
    let p = total_yes / total_valid;
    let statistic = used
        .iter()
        .map(|(yes, valid)| {
            let expected_yes = p * valid;
            let expected_no = (1.0 - p) * valid;
            let no = valid - yes;
            (yes - expected_yes).powi(2) / expected_yes + (no - expected_no).powi(2) / expected_no
        })
        .sum();
    Ok((statistic, used.len()))
}

/// Within-cluster homogeneity χ² of a center's notebooks, compared to
/// χ²(k−1) where `k` is the number of notebooks with valid ballots.
///
/// The asymptotic p-value is a rough guide only — notebook counts are
/// small and discrete, so prefer [`exact_cluster_chi2_distribution`] or
/// the shuffle null when the statistic matters.
pub fn cluster_chi2(notebooks: &[Notebook]) -> Result<GofTest, DigitError> {
    let rows: Vec<(u64, u64)> = notebooks.iter().map(|nb| (nb.yes, nb.valid())).collect();
    let (statistic, used) = chi2_from_counts(&rows)?;
    let dof = used - 1;
    let (p_value, log10_p) = chi2_upper_tail(statistic, dof);
    Ok(GofTest {
        statistic,
        dof,
        p_value,
        log10_p,
    })
}

/// Atoms within this distance are merged into one.
const MERGE_TOLERANCE: f64 = 1e-9;

/// Default cap on the number of allocations to enumerate.
pub const DEFAULT_COMPOSITION_BUDGET: u64 = 10_000_000;

/// The exact null distribution of a cluster χ² statistic.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactChi2Distribution {
    /// `(value, probability)` pairs, sorted by value, with values closer
    /// than `1e-9` merged into the smallest representative.
    pub atoms: Vec<(f64, f64)>,
}

impl ExactChi2Distribution {
    /// `P(X >= observed)`, counting atoms within the merge tolerance of
    /// the threshold as inside the tail.
    pub fn upper_tail_p(&self, observed: f64) -> f64 {
        self.atoms
            .iter()
            .filter(|(value, _)| *value >= observed - MERGE_TOLERANCE)
            .map(|(_, probability)| probability)
            .sum()
    }

    /// Total probability across atoms; 1 up to rounding.
    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|(_, p)| p).sum()
    }
}

/// Exact shuffle-null distribution of the cluster χ² for notebooks of the
/// given valid-ballot `sizes` sharing a `(yes, no)` pool, with the
/// default enumeration budget.
pub fn exact_cluster_chi2_distribution(
    sizes: &[u64],
    pool: (u64, u64),
) -> Result<ExactChi2Distribution, DigitError> {
    exact_cluster_chi2_distribution_with_budget(sizes, pool, DEFAULT_COMPOSITION_BUDGET)
}

/// [`exact_cluster_chi2_distribution`] with an explicit budget on the
/// number of allocations enumerated.
pub fn exact_cluster_chi2_distribution_with_budget(
    sizes: &[u64],
    pool: (u64, u64),
    budget: u64,
) -> Result<ExactChi2Distribution, DigitError> {
    let (yes, no) = pool;
    let total = yes + no;
    let capacity: u64 = sizes.iter().sum();
    if capacity != total {
        return Err(DigitError::PoolSizeMismatch {
            pool: total,
            sizes: capacity,
        });
    }
    if sizes.iter().filter(|&&t| t > 0).count() < 2 {
        return Err(DigitError::ClusterTooSmall(
            sizes.iter().filter(|&&t| t > 0).count(),
        ));
    }
    if yes == 0 || no == 0 {
        return Err(DigitError::DegeneratePool);
    }

    // Cheap certificate that the enumeration fits: the box bound. When it
    // does not certify, enumerate with a live counter and abort on excess.
    let mut box_bound = 1.0f64;
    for &t in sizes {
        box_bound *= (t.min(yes) + 1) as f64;
    }
    let counted = box_bound > budget as f64;

    let suffix: Vec<u64> = {
        let mut suffix = vec![0u64; sizes.len() + 1];
        for i in (0..sizes.len()).rev() {
            suffix[i] = suffix[i + 1] + sizes[i];
        }
        suffix
    };
    let ln_total = ln_choose(total, yes);
    let mut rows: Vec<(u64, u64)> = sizes.iter().map(|&t| (0, t)).collect();
    let mut samples: Vec<(f64, f64)> = Vec::new();
    let mut leaves = 0u64;

    fn descend(
        sizes: &[u64],
        suffix: &[u64],
        idx: usize,
        remaining: u64,
        ln_weight: f64,
        ln_total: f64,
        rows: &mut Vec<(u64, u64)>,
        samples: &mut Vec<(f64, f64)>,
        leaves: &mut u64,
        counted: bool,
        budget: u64,
    ) -> Result<(), DigitError> {
        if idx == sizes.len() {
            *leaves += 1;
            if counted && *leaves > budget {
                return Err(DigitError::BudgetExceeded { budget });
            }
            let (statistic, _) = chi2_from_counts(rows).expect("pool validated non-degenerate");
            samples.push((statistic, (ln_weight - ln_total).exp()));
            return Ok(());
        }
        let lo = remaining.saturating_sub(suffix[idx + 1]);
        let hi = sizes[idx].min(remaining);
        for a in lo..=hi {
            rows[idx].0 = a;
            descend(
                sizes,
                suffix,
                idx + 1,
                remaining - a,
                ln_weight + ln_choose(sizes[idx], a),
                ln_total,
                rows,
                samples,
                leaves,
                counted,
                budget,
            )?;
        }
        Ok(())
    }

    descend(
        sizes, &suffix, 0, yes, 0.0, ln_total, &mut rows, &mut samples, &mut leaves, counted,
        budget,
    )?;

    samples.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut atoms: Vec<(f64, f64)> = Vec::new();
    for (value, probability) in samples {
        match atoms.last_mut() {
            Some((last, mass)) if value - *last <= MERGE_TOLERANCE => *mass += probability,
            _ => atoms.push((value, probability)),
        }
    }
    Ok(ExactChi2Distribution { atoms })
}

/// How notebooks are grouped when hunting for tied YES counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TieGrouping {
    /// Each center's notebooks form one group.
    PerCenter,
    /// Explicit `(center_id, notebook_id) → group` assignment; groups may
    /// span centers. Every notebook must be assigned.
    Custom(HashMap<(String, String), String>),
}

/// Outcome of the tie test.
#[derive(Clone, Debug, PartialEq)]
pub struct TieReport {
    /// Groups in which at least two notebooks share a YES count.
    pub observed: usize,
    /// Mean tied-group count across null replicates.
    pub expected: f64,
    /// Sample standard deviation across null replicates.
    pub sd: f64,
    /// `(observed - expected) / sd`.
    pub z: f64,
    pub replicates: usize,
    /// Groups with at least two notebooks — the only ones that can tie.
    pub groups: usize,
}

/// Count `(groups with a tie, groups that could tie)`.
fn tie_count(
    dataset: &ElectionDataset,
    grouping: &TieGrouping,
) -> Result<(usize, usize), DigitError> {
    let mut groups: BTreeMap<(&str, &str), Vec<u64>> = BTreeMap::new();
    match grouping {
        TieGrouping::PerCenter => {
            for center in &dataset.centers {
                let entry = groups.entry((center.id.as_str(), "")).or_default();
                entry.extend(center.notebooks.iter().map(|nb| nb.yes));
            }
        }
        TieGrouping::Custom(map) => {
            for (center, notebook) in dataset.notebooks() {
                let key = (center.id.clone(), notebook.id.clone());
                let group = map.get(&key).ok_or_else(|| DigitError::MissingGroup {
                    center: center.id.clone(),
                    notebook: notebook.id.clone(),
                })?;
                groups
                    .entry((group.as_str(), ""))
                    .or_default()
                    .push(notebook.yes);
            }
        }
    }
    let mut tied = 0;
    let mut eligible = 0;
    for counts in groups.values_mut() {
        if counts.len() < 2 {
            continue;
        }
        eligible += 1;
        counts.sort_unstable();
        if counts.windows(2).any(|w| w[0] == w[1]) {
            tied += 1;
        }
    }
    Ok((tied, eligible))
}

/// Monte Carlo test for an excess (or deficit) of tied YES counts.
///
/// Identical notebook tallies inside one center are sometimes read as
/// evidence of copy-paste bookkeeping, but under the shuffle null ties
/// occur naturally at a rate the null replicates measure directly. The
/// score `z` compares the observed tied-group count to that baseline.
pub fn yes_tie_test(
    dataset: &ElectionDataset,
    replicates: usize,
    seed: SeedSpec,
    grouping: &TieGrouping,
) -> Result<TieReport, DigitError> {
    if replicates < 2 {
        return Err(DigitError::TooFewReplicates(replicates));
    }
    let (observed, groups) = tie_count(dataset, grouping)?;
    let base = seed.replicate_index;
    let counts: Result<Vec<f64>, DigitError> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let shuffled = sample_election(dataset, seed.replicate(base + r as u64));
            tie_count(&shuffled, grouping).map(|(tied, _)| tied as f64)
        })
        .collect();
    let counts = counts?;
    let n = counts.len() as f64;
    let expected = counts.iter().sum::<f64>() / n;
    let variance = counts.iter().map(|c| (c - expected).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = variance.sqrt();
    if sd == 0.0 {
        return Err(DigitError::DegenerateNull);
    }
    Ok(TieReport {
        observed,
        expected,
        sd,
        z: (observed as f64 - expected) / sd,
        replicates,
        groups,
    })
}
