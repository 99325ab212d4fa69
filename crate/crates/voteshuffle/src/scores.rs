//! Standardised notebook scores and the global sum-of-squares test.
//!
//! Fix a center with `ν` voters, an option with center-wide count `t`, and
//! a notebook with `τ` voters holding `x` of those cards. Under the
//! within-center shuffle null, `x` is hypergeometric, so
//!
//! ```text
//! z = (x - p τ) / sqrt( p (1 - p) τ (ν - τ) / (ν - 1) ),    p = t / ν
//! ```
//!
//! has mean 0 and variance exactly 1. The notebook scores of one option,
//! squared and summed over the dataset, give the global statistic `S²`
//! whose null expectation is exactly the number of scored notebooks; its
//! spread is estimated by re-computing `S²` over shuffled elections
//! ([`monte_carlo_null`]), and [`t_statistic`] standardises the observed
//! value against that calibration. Large positive `t` means the notebooks
//! are collectively too far from their center expectations to be an
//! arbitrary deal of the center pools.

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::corpus::{Center, ElectionDataset, Notebook, VoteOption};
use crate::shuffle::{sample_election, SeedSpec};

/// Errors from score computation and null calibration.
#[derive(Clone, Debug, Error, PartialEq)]
pub enum ScoresError {
    #[error(
        "degenerate variance for {option} in center {center:?}, notebook {notebook:?} \
         (option share is 0 or 1, or the notebook is the whole center)"
    )]
    DegenerateVariance {
        center: String,
        notebook: String,
        option: VoteOption,
    },
    #[error("at least two replicates are needed, got {0}")]
    TooFewReplicates(usize),
    #[error("the null statistic has zero spread across replicates")]
    DegenerateNull,
    #[error("no scores to plot")]
    NoScores,
}

/// Standardised score of one notebook for one option.
///
/// Errors when the null variance vanishes: the option share of the center
/// is 0 or 1, the notebook has no voters, or it contains the entire center
/// (`τ = ν`). [`score_table`] records those cases as missing instead.
pub fn z_score(
    notebook: &Notebook,
    center: &Center,
    option: VoteOption,
) -> Result<f64, ScoresError> {
    let nu = center.voters();
    let tau = notebook.voters;
    let total = center.total(option);
    let degenerate = || ScoresError::DegenerateVariance {
        center: center.id.clone(),
        notebook: notebook.id.clone(),
        option,
    };
    if nu < 2 || tau == 0 || tau == nu || total == 0 || total == nu {
        return Err(degenerate());
    }
    let p = total as f64 / nu as f64;
    let variance =
        p * (1.0 - p) * tau as f64 * (nu - tau) as f64 / (nu as f64 - 1.0);
    Ok((notebook.count(option) as f64 - p * tau as f64) / variance.sqrt())
}

/// Null expectation of a notebook's count for one option: `p · τ`.
pub fn expected_count(notebook: &Notebook, center: &Center, option: VoteOption) -> f64 {
    center.proportion(option) * notebook.voters as f64
}

/// Scores of one notebook for all three options; `None` marks a
/// degenerate variance.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRow {
    pub center_id: String,
    pub notebook_id: String,
    pub z_yes: Option<f64>,
    pub z_no: Option<f64>,
    pub z_out: Option<f64>,
}

impl ScoreRow {
    pub fn score(&self, option: VoteOption) -> Option<f64> {
        match option {
            VoteOption::Yes => self.z_yes,
            VoteOption::No => self.z_no,
            VoteOption::Out => self.z_out,
        }
    }
}

/// All notebook scores of a dataset, in dataset order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreTable {
    pub rows: Vec<ScoreRow>,
}

impl ScoreTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// The finite scores of one option, in dataset order.
    pub fn finite_scores(&self, option: VoteOption) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.score(option)).collect()
    }

    /// Notebooks whose score for `option` exists.
    pub fn scored_count(&self, option: VoteOption) -> usize {
        self.rows.iter().filter(|r| r.score(option).is_some()).count()
    }

    /// Notebooks skipped for `option` because their variance degenerates.
    pub fn degenerate_count(&self, option: VoteOption) -> usize {
        self.rows.len() - self.scored_count(option)
    }
}

/// Score every notebook for all three options.
///
/// Degenerate rows (a center unanimous for one option, say) are recorded
/// as missing rather than failing the whole table; they are skipped by the
/// sum-of-squares statistic and counted via
/// [`ScoreTable::degenerate_count`].
pub fn score_table(dataset: &ElectionDataset) -> ScoreTable {
    let rows = dataset
        .notebooks()
        .map(|(center, notebook)| ScoreRow {
            center_id: center.id.clone(),
            notebook_id: notebook.id.clone(),
            z_yes: z_score(notebook, center, VoteOption::Yes).ok(),
            z_no: z_score(notebook, center, VoteOption::No).ok(),
            z_out: z_score(notebook, center, VoteOption::Out).ok(),
        })
        .collect();
    ScoreTable { rows }
}

/// The global statistic `S² = Σ z²` over the finite scores of one option.
///
/// Its null expectation equals [`ScoreTable::scored_count`] exactly,
/// because each score has unit variance under the within-center shuffle.
pub fn s_squared(table: &ScoreTable, option: VoteOption) -> f64 {
    table
        .rows
        .iter()
        .filter_map(|r| r.score(option))
        .map(|z| z * z)
        .sum()
}

/// Monte Carlo distribution of `S²` under the shuffle null.
#[derive(Clone, Debug, PartialEq)]
pub struct NullCalibration {
    pub option: VoteOption,
    pub replicates: usize,
    pub mean: f64,
    /// Sample standard deviation of the replicate values.
    pub sd: f64,
    /// One `S²` per replicate, in replicate order.
    pub values: Vec<f64>,
}

/// Estimate the null distribution of `S²` by scoring shuffled elections.
///
/// Replicate `r` shuffles the dataset with
/// `seed.replicate(seed.replicate_index + r)`, so runs are reproducible
/// and replicates can be processed on any number of threads. Errors if
/// fewer than two replicates are requested or the statistic does not vary
/// (a sign the dataset is too degenerate to calibrate).
pub fn monte_carlo_null(
    dataset: &ElectionDataset,
    option: VoteOption,
    replicates: usize,
    seed: SeedSpec,
) -> Result<NullCalibration, ScoresError> {
    if replicates < 2 {
        return Err(ScoresError::TooFewReplicates(replicates));
    }
    let base = seed.replicate_index;
    let values: Vec<f64> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let world = sample_election(dataset, seed.replicate(base + r));
            s_squared(&score_table(&world), option)
        })
        .collect();
    let mean = values.iter().sum::<f64>() / replicates as f64;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    let sd = (ss / (replicates as f64 - 1.0)).sqrt();
    if sd == 0.0 {
        return Err(ScoresError::DegenerateNull);
    }
    Ok(NullCalibration {
        option,
        replicates,
        mean,
        sd,
        values,
    })
}

/// An observed statistic standardised against a Monte Carlo null.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TailTest {
    pub t: f64,
    /// One-sided upper-tail p-value under a standard normal reference.
    pub p_value: f64,
}

/// Standardise an observed `S²` against its null calibration.
///
/// The replicate averages behind `t` are close to normal for datasets of
/// any real size, so the upper tail of `N(0,1)` serves as the reference;
/// the tail is computed via `erfc`, which stays accurate for the extreme
/// `t` values contaminated elections produce.
pub fn t_statistic(observed: f64, calibration: &NullCalibration) -> TailTest {
    let t = (observed - calibration.mean) / calibration.sd;
    TailTest {
        t,
        p_value: 0.5 * erfc(t / std::f64::consts::SQRT_2),
    }
}

/// One point of a normal probability plot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlotPoint {
    /// Standard normal quantile at rank `i / (n + 1)`.
    pub theoretical: f64,
    /// The `i`-th smallest score.
    pub observed: f64,
}

/// Pair sorted scores with standard normal quantiles.
///
/// Straight-line points mean the scores are compatible with the
/// standardised null; heavy tails bend the ends away from the diagonal.
pub fn normal_plot_points(scores: &[f64]) -> Result<Vec<PlotPoint>, ScoresError> {
    if scores.is_empty() {
        return Err(ScoresError::NoScores);
    }
    let normal = Normal::standard();
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(sorted
        .into_iter()
        .enumerate()
        .map(|(i, observed)| PlotPoint {
            theoretical: normal.inverse_cdf((i as f64 + 1.0) / (n + 1.0)),
            observed,
        })
        .collect())
}

/// Kolmogorov–Smirnov test of a sample against the standard normal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KsTest {
    /// Supremum distance between the empirical and normal CDFs.
    pub statistic: f64,
    /// Asymptotic two-sided p-value (Stephens' small-sample correction).
    pub p_value: f64,
}

/// Compare a sample with `N(0,1)`; used to sanity-check that standardised
/// Monte Carlo statistics really behave like standard normal draws.
pub fn ks_normal_test(values: &[f64]) -> Result<KsTest, ScoresError> {
    if values.is_empty() {
        return Err(ScoresError::NoScores);
    }
    let normal = Normal::standard();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, v) in sorted.iter().enumerate() {
        let cdf = normal.cdf(*v);
        let upper = (i as f64 + 1.0) / n - cdf;
        let lower = cdf - i as f64 / n;
        d = d.max(upper).max(lower);
    }
    let lambda = ((n.sqrt()) + 0.12 + 0.11 / n.sqrt()) * d;
    let mut p = 0.0;
    for j in 1..=100 {
        let j = j as f64;
        let term = 2.0 * (-2.0 * j * j * lambda * lambda).exp();
        p += if (j as u64) % 2 == 1 { term } else { -term };
    }
    Ok(KsTest {
        statistic: d,
        p_value: p.clamp(0.0, 1.0),
    })
}
