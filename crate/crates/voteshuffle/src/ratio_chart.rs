//! Control chart for the vote ratio of the most extreme notebooks.
//!
//! Rank every notebook by how far its abstention count sits from its
//! center's expectation (|z| of the OUT score), and take the `k` most
//! extreme as the *outlier sample*. If those notebooks are merely unlucky
//! draws of an honest process, the ratio of an option's votes to valid
//! votes inside the sample, `r_k`, should track the population ratio `R`.
//! The statistic
//!
//! ```text
//! ζ_k = (r_k - R) / S²_k,
//! S²_k = (1 - k/K) · (1/μ_T²) · (s²_r / k)
//! ```
//!
//! standardises the gap using the finite-population variance of a ratio
//! estimator: `K` is the number of notebooks, `μ_T` the mean valid votes
//! per notebook over the whole population, and
//! `s²_r = Σ (x_i - r_k T_i)² / (k - 1)` the residual spread inside the
//! sample. The default divisor is the variance `S²_k` itself, as the
//! formula above is conventionally printed; dividing instead by the
//! standard error `S_k` ([`ZetaForm::Studentized`]) gives the form that is
//! actually compatible with normal control bands such as ±3.9, and is what
//! the calibration tests in this crate exercise.
//!
//! Charting ζ against growing `k` shows whether the extreme notebooks pull
//! the ratio in one direction; [`prediction_interval`] reflects the
//! excursion `r_k - R` to the uncontaminated side, giving an interval
//! estimate of what the option's share would have been without the
//! contaminated sample.

use std::collections::HashMap;

use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::corpus::{ElectionDataset, VoteOption};
use crate::scores::{ScoreRow, ScoreTable};

/// Smallest outlier sample the chart accepts; below this the ratio
/// estimator's variance formula is too noisy to standardise against.
pub const MIN_SAMPLE: usize = 100;

/// Errors from outlier sampling and the ζ chart.
#[derive(Clone, Debug, Error, PartialEq)]
pub enum RatioError {
    #[error("no valid votes in the population")]
    ZeroValidVotes,
    #[error("outlier sample of {requested} requested but only {available} notebooks have an OUT score")]
    InsufficientScores { requested: usize, available: usize },
    #[error("sample of {k} is below the minimum of {minimum}")]
    SampleTooSmall { k: usize, minimum: usize },
    #[error("sample of {k} exceeds half the population ({maximum})")]
    SampleTooLarge { k: usize, maximum: usize },
    #[error("sample residuals are all zero at k = {k}; the ratio variance is degenerate")]
    DegenerateSample { k: usize },
    #[error("notebook {notebook:?} of center {center:?} is not in the dataset")]
    UnknownNotebook { center: String, notebook: String },
    #[error("population of {population} notebooks cannot host a chart (needs at least {minimum})")]
    PopulationTooSmall { population: usize, minimum: usize },
}

/// Ratio of an option's votes to valid votes over the whole dataset.
pub fn population_ratio(
    dataset: &ElectionDataset,
    option: VoteOption,
) -> Result<f64, RatioError> {
    let mut x = 0u64;
    let mut t = 0u64;
    for (_, nb) in dataset.notebooks() {
        x += nb.count(option);
        t += nb.valid();
    }
    if t == 0 {
        return Err(RatioError::ZeroValidVotes);
    }
    Ok(x as f64 / t as f64)
}

/// One member of the outlier sample.
#[derive(Clone, Debug, PartialEq)]
pub struct OutlierMember {
    pub center_id: String,
    pub notebook_id: String,
    /// The OUT score that earned the notebook its rank.
    pub z_out: f64,
}

/// The `k` notebooks most extreme in |z| of the OUT score.
#[derive(Clone, Debug, PartialEq)]
pub struct OutlierSample {
    /// Members in rank order, most extreme first.
    pub members: Vec<OutlierMember>,
}

impl OutlierSample {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Rows with an OUT score, most extreme |z| first.
///
/// Ties in |z| are broken by `(center_id, notebook_id)` so the ranking —
/// and everything built on it — is a pure function of the table.
fn ranked_rows(table: &ScoreTable) -> Vec<&ScoreRow> {
    let mut rows: Vec<&ScoreRow> = table
        .rows
        .iter()
        .filter(|r| r.z_out.is_some())
        .collect();
    rows.sort_by(|a, b| {
        let za = a.z_out.expect("filtered").abs();
        let zb = b.z_out.expect("filtered").abs();
        zb.total_cmp(&za)
            .then_with(|| a.center_id.cmp(&b.center_id))
            .then_with(|| a.notebook_id.cmp(&b.notebook_id))
    });
    rows
}

/// Take the `k` notebooks with the most extreme OUT scores.
pub fn outlier_sample(table: &ScoreTable, k: usize) -> Result<OutlierSample, RatioError> {
    let ranked = ranked_rows(table);
    if k > ranked.len() {
        return Err(RatioError::InsufficientScores {
            requested: k,
            available: ranked.len(),
        });
    }
    Ok(OutlierSample {
        members: ranked[..k]
            .iter()
            .map(|r| OutlierMember {
                center_id: r.center_id.clone(),
                notebook_id: r.notebook_id.clone(),
                z_out: r.z_out.expect("filtered"),
            })
            .collect(),
    })
}

/// How many notebooks exceed the two-sided normal cut at `confidence`.
///
/// `outlier_count(t, 0.99)` counts |z| > Φ⁻¹(0.995) ≈ 2.576 — the usual
/// choice for how deep an outlier sample is worth charting.
pub fn outlier_count(table: &ScoreTable, confidence: f64) -> usize {
    assert!(
        confidence > 0.0 && confidence < 1.0,
        "confidence must be in (0, 1), got {confidence}"
    );
    let cut = Normal::standard().inverse_cdf(0.5 + confidence / 2.0);
    table
        .rows
        .iter()
        .filter_map(|r| r.z_out)
        .filter(|z| z.abs() > cut)
        .count()
}

/// Which divisor standardises `r_k - R`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ZetaForm {
    /// Divide by the variance `S²_k` (the conventional printed form).
    #[default]
    AsPrinted,
    /// Divide by the standard error `S_k = sqrt(S²_k)`; the resulting ζ is
    /// approximately standard normal under the null, so ±z control bands
    /// apply to this form.
    Studentized,
}

/// One charted point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ZetaPoint {
    pub k: usize,
    /// Option-to-valid ratio inside the top-`k` sample.
    pub ratio: f64,
    /// `S²_k`, the estimated variance of that ratio under the null.
    pub variance: f64,
    pub zeta: f64,
}

/// A ζ chart over a range of sample depths.
#[derive(Clone, Debug, PartialEq)]
pub struct ZetaSeries {
    pub option: VoteOption,
    pub form: ZetaForm,
    /// Notebooks in the population.
    pub population: usize,
    /// Population option-to-valid ratio `R`.
    pub population_ratio: f64,
    pub points: Vec<ZetaPoint>,
}

struct Population {
    ratio: f64,
    size: usize,
    mean_valid: f64,
}

fn population_stats(
    dataset: &ElectionDataset,
    option: VoteOption,
) -> Result<Population, RatioError> {
    let size = dataset.notebook_count();
    let mut x = 0u64;
    let mut t = 0u64;
    for (_, nb) in dataset.notebooks() {
        x += nb.count(option);
        t += nb.valid();
    }
    if t == 0 || size == 0 {
        return Err(RatioError::ZeroValidVotes);
    }
    Ok(Population {
        ratio: x as f64 / t as f64,
        size,
        mean_valid: t as f64 / size as f64,
    })
}

fn notebook_lookup<'a>(
    dataset: &'a ElectionDataset,
    option: VoteOption,
) -> HashMap<(&'a str, &'a str), (u64, u64)> {
    dataset
        .notebooks()
        .map(|(c, nb)| {
            (
                (c.id.as_str(), nb.id.as_str()),
                (nb.count(option), nb.valid()),
            )
        })
        .collect()
}

/// Accumulates the sample sums the ratio statistics are built from.
#[derive(Clone, Copy, Default)]
struct SampleSums {
    k: usize,
    x: f64,
    t: f64,
    xx: f64,
    xt: f64,
    tt: f64,
}

impl SampleSums {
    fn push(&mut self, x: u64, t: u64) {
        let x = x as f64;
        let t = t as f64;
        self.k += 1;
        self.x += x;
        self.t += t;
        self.xx += x * x;
        self.xt += x * t;
        self.tt += t * t;
    }

    fn point(&self, population: &Population, form: ZetaForm) -> Result<ZetaPoint, RatioError> {
        let k = self.k;
        if self.t == 0.0 {
            return Err(RatioError::ZeroValidVotes);
        }
        let ratio = self.x / self.t;
        // Σ (x_i - r T_i)² expanded over the running sums.
        let residual = self.xx - 2.0 * ratio * self.xt + ratio * ratio * self.tt;
        let residual = residual.max(0.0);
        let s2_r = residual / (k as f64 - 1.0);
        if s2_r == 0.0 {
            return Err(RatioError::DegenerateSample { k });
        }
        let fpc = 1.0 - k as f64 / population.size as f64;
        let variance = fpc * s2_r / (k as f64 * population.mean_valid * population.mean_valid);
        let divisor = match form {
            ZetaForm::AsPrinted => variance,
            ZetaForm::Studentized => variance.sqrt(),
        };
        Ok(ZetaPoint {
            k,
            ratio,
            variance,
            zeta: (ratio - population.ratio) / divisor,
        })
    }
}

fn check_depth(k: usize, population: usize) -> Result<(), RatioError> {
    if k < MIN_SAMPLE {
        return Err(RatioError::SampleTooSmall { k, minimum: MIN_SAMPLE });
    }
    let maximum = population / 2;
    if k > maximum {
        return Err(RatioError::SampleTooLarge { k, maximum });
    }
    Ok(())
}

/// ζ of one outlier sample against the population.
///
/// The sample must hold between [`MIN_SAMPLE`] and half the population's
/// notebooks, and every member must exist in the dataset.
pub fn zeta_score(
    dataset: &ElectionDataset,
    sample: &OutlierSample,
    option: VoteOption,
    form: ZetaForm,
) -> Result<ZetaPoint, RatioError> {
    let population = population_stats(dataset, option)?;
    check_depth(sample.len(), population.size)?;
    let lookup = notebook_lookup(dataset, option);
    let mut sums = SampleSums::default();
    for member in &sample.members {
        let (x, t) = lookup
            .get(&(member.center_id.as_str(), member.notebook_id.as_str()))
            .ok_or_else(|| RatioError::UnknownNotebook {
                center: member.center_id.clone(),
                notebook: member.notebook_id.clone(),
            })?;
        sums.push(*x, *t);
    }
    sums.point(&population, form)
}

/// Chart ζ for every sample depth in `k_range` (inclusive).
///
/// Depths walk the ranked notebooks incrementally, so the whole series
/// costs the same as a single deep sample. Each point equals what
/// [`zeta_score`] would return for that depth.
pub fn zeta_series(
    dataset: &ElectionDataset,
    table: &ScoreTable,
    k_range: (usize, usize),
    option: VoteOption,
    form: ZetaForm,
) -> Result<ZetaSeries, RatioError> {
    let (k_min, k_max) = k_range;
    let population = population_stats(dataset, option)?;
    check_depth(k_min, population.size)?;
    check_depth(k_max, population.size)?;
    if k_min > k_max {
        return Err(RatioError::SampleTooSmall { k: k_max, minimum: k_min });
    }
    let ranked = ranked_rows(table);
    if k_max > ranked.len() {
        return Err(RatioError::InsufficientScores {
            requested: k_max,
            available: ranked.len(),
        });
    }
    let lookup = notebook_lookup(dataset, option);
    let mut sums = SampleSums::default();
    let mut points = Vec::with_capacity(k_max - k_min + 1);
    for (i, row) in ranked[..k_max].iter().enumerate() {
        let (x, t) = lookup
            .get(&(row.center_id.as_str(), row.notebook_id.as_str()))
            .ok_or_else(|| RatioError::UnknownNotebook {
                center: row.center_id.clone(),
                notebook: row.notebook_id.clone(),
            })?;
        sums.push(*x, *t);
        if i + 1 >= k_min {
            points.push(sums.point(&population, form)?);
        }
    }
    Ok(ZetaSeries {
        option,
        form,
        population: population.size,
        population_ratio: population.ratio,
        points,
    })
}

/// Interval estimate for an option's uncontaminated share.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionInterval {
    pub option: VoteOption,
    /// Population ratio `R` the excursions are reflected around.
    pub population_ratio: f64,
    pub low: f64,
    pub high: f64,
    /// Sample depths the excursion was scanned over.
    pub k_min: usize,
    pub k_max: usize,
}

/// Reflect the outlier excursion to bound the uncontaminated share.
///
/// If the outlier sample dragged the observed ratio from some honest value
/// toward `r_k`, the honest value sits on the other side of `R` at the
/// mirrored distance, `2R - r_k`. Scanning every admissible depth
/// (`MIN_SAMPLE` up to half the population) and keeping the extremes turns
/// the whole chart into one interval, clamped to [0, 1].
pub fn prediction_interval(
    dataset: &ElectionDataset,
    table: &ScoreTable,
    option: VoteOption,
) -> Result<PredictionInterval, RatioError> {
    let population = population_stats(dataset, option)?;
    let ranked = ranked_rows(table);
    let k_max = (population.size / 2).min(ranked.len());
    if k_max < MIN_SAMPLE {
        return Err(RatioError::PopulationTooSmall {
            population: population.size,
            minimum: 2 * MIN_SAMPLE,
        });
    }
    let lookup = notebook_lookup(dataset, option);
    let mut sum_x = 0.0;
    let mut sum_t = 0.0;
    let mut r_min = f64::INFINITY;
    let mut r_max = f64::NEG_INFINITY;
    for (i, row) in ranked[..k_max].iter().enumerate() {
        let (x, t) = lookup
            .get(&(row.center_id.as_str(), row.notebook_id.as_str()))
            .ok_or_else(|| RatioError::UnknownNotebook {
                center: row.center_id.clone(),
                notebook: row.notebook_id.clone(),
            })?;
        sum_x += *x as f64;
        sum_t += *t as f64;
        if i + 1 >= MIN_SAMPLE && sum_t > 0.0 {
            let r = sum_x / sum_t;
            r_min = r_min.min(r);
            r_max = r_max.max(r);
        }
    }
    Ok(PredictionInterval {
        option,
        population_ratio: population.ratio,
        low: (2.0 * population.ratio - r_max).clamp(0.0, 1.0),
        high: (2.0 * population.ratio - r_min).clamp(0.0, 1.0),
        k_min: MIN_SAMPLE,
        k_max,
    })
}
