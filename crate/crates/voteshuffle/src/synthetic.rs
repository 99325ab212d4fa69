//! Synthetic elections: null worlds, planted irregularities, and a
//! signature-count simulation.
//!
//! [`generate_election`] builds datasets that satisfy the within-center
//! shuffle null *by construction*: per-center margins are drawn from
//! configurable laws and the cards are dealt to notebooks through the same
//! multivariate hypergeometric path the null-model shuffle uses. Such
//! worlds calibrate the test statistics and measure false-alarm rates.
//!
//! [`inject_irregularities`] then plants controlled events into a world.
//! A *neutral* event moves a fraction of one notebook's valid ballots to a
//! sibling notebook inside the same center — the kind of innocent
//! consolidation real processes produce. It distorts notebook-level scores
//! without changing any center's option totals, so option shares stay
//! untouched. A *biased* event moves only the favoured option's cards, and
//! the quantity scales with the donor's count of that option. Per-center
//! option totals are still conserved, but the displacement lands where the
//! favoured option is already strong — so the notebooks that dominate the
//! outlier ranking come disproportionately from that option's strongholds,
//! and the ratio chart drifts in its favour. That concentration is the
//! signature of targeted tampering the chart is designed to catch.
//!
//! [`simulate_signers`] models an independent register (petition
//! signatures, say) where each supporter signs with probability `θ`:
//! center counts are `θ·Y` plus binomial noise `N(0, θ(1-θ)Y)`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Center, CenterKind, ElectionDataset, Notebook, VoteOption};
use crate::shuffle::{allocate_pool, SeedSpec, StreamDomain};

/// Errors from configuration validation and the synthetic operations.
#[derive(Clone, Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid generator configuration: {0}")]
    InvalidGenerator(String),
    #[error("invalid injection configuration: {0}")]
    InvalidInjection(String),
    #[error("no center has at least two notebooks to host an event")]
    NoEligibleCenters,
    #[error("event {event}: no feasible donor/recipient pair after {attempts} attempts")]
    InfeasibleEvent { event: usize, attempts: usize },
    #[error("center {center:?}: no allocation left every notebook a valid ballot after {attempts} attempts")]
    AllocationStuck { center: String, attempts: usize },
    #[error("signer fraction must lie in (0, 1], got {0}")]
    InvalidTheta(f64),
}

/// Distribution of notebooks per center.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum CountLaw {
    Fixed { value: usize },
    /// `(value, weight)` pairs; weights need not be normalised.
    Weighted { weights: Vec<(usize, f64)> },
}

impl CountLaw {
    fn validate(&self) -> Result<(), String> {
        let check = |value: usize| -> Result<(), String> {
            if value < 2 {
                return Err(format!(
                    "notebooks_per_center must be at least 2, got {value}"
                ));
            }
            if value > 99 {
                return Err(format!(
                    "notebooks_per_center must be at most 99, got {value}"
                ));
            }
            Ok(())
        };
        match self {
            CountLaw::Fixed { value } => check(*value),
            CountLaw::Weighted { weights } => {
                if weights.is_empty() {
                    return Err("weighted law needs at least one entry".into());
                }
                let mut total = 0.0;
                for (value, weight) in weights {
                    check(*value)?;
                    if !weight.is_finite() || *weight < 0.0 {
                        return Err(format!("invalid weight {weight} for value {value}"));
                    }
                    total += weight;
                }
                if total <= 0.0 {
                    return Err("weighted law has zero total weight".into());
                }
                Ok(())
            }
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match self {
            CountLaw::Fixed { value } => *value,
            CountLaw::Weighted { weights } => {
                let total: f64 = weights.iter().map(|(_, w)| w).sum();
                let mut u = rng.random::<f64>() * total;
                for (value, weight) in weights {
                    if u < *weight {
                        return *value;
                    }
                    u -= weight;
                }
                weights.last().expect("validated non-empty").0
            }
        }
    }
}

/// Notebook register sizes: a rounded normal clamped to `[min, max]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NotebookSizeLaw {
    pub mean: f64,
    pub sd: f64,
    pub min: u64,
    #[serde(default)]
    pub max: Option<u64>,
}

impl NotebookSizeLaw {
    fn validate(&self) -> Result<(), String> {
        if !self.mean.is_finite() || self.mean <= 0.0 {
            return Err(format!("voters_per_notebook mean must be positive, got {}", self.mean));
        }
        if !self.sd.is_finite() || self.sd < 0.0 {
            return Err(format!("voters_per_notebook sd must be non-negative, got {}", self.sd));
        }
        if self.min == 0 {
            return Err("voters_per_notebook min must be at least 1".into());
        }
        if let Some(max) = self.max {
            if max < self.min {
                return Err(format!("voters_per_notebook max {max} is below min {}", self.min));
            }
        }
        Ok(())
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let normal = Normal::new(self.mean, self.sd).expect("validated");
        let raw = normal.sample(rng).round();
        let raw = raw.max(self.min as f64);
        let raw = match self.max {
            Some(max) => raw.min(max as f64),
            None => raw,
        };
        raw as u64
    }
}

/// Distribution of a per-center share in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum ShareLaw {
    Fixed { value: f64 },
    Uniform { low: f64, high: f64 },
}

impl ShareLaw {
    fn validate(&self, name: &str) -> Result<(), String> {
        let unit = |v: f64| v.is_finite() && (0.0..=1.0).contains(&v);
        match self {
            ShareLaw::Fixed { value } if unit(*value) => Ok(()),
            ShareLaw::Uniform { low, high } if unit(*low) && unit(*high) && low <= high => Ok(()),
            _ => Err(format!("{name} must stay within [0, 1] with low <= high: {self:?}")),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            ShareLaw::Fixed { value } => *value,
            ShareLaw::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
        }
    }
}

/// Recipe for a synthetic election.
///
/// Every per-center quantity is drawn from its own stream (domain
/// `Generate`, ordinal = center position), so worlds are reproducible and
/// thread-count independent like everything else in the crate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    #[serde(default = "default_label")]
    pub label: String,
    pub centers: usize,
    pub notebooks_per_center: CountLaw,
    pub voters_per_notebook: NotebookSizeLaw,
    /// YES share of each center's valid ballots.
    pub yes_share: ShareLaw,
    /// Abstention share of each center's registered voters.
    pub out_share: ShareLaw,
}

fn default_label() -> String {
    "synthetic".to_owned()
}

impl GeneratorConfig {
    /// Profile shaped like a full-scale national vote: two to eighteen
    /// notebooks per center with small centers dominating (3.6 on
    /// average), registers of 635 ± 74 voters clamped to the observed
    /// 347–975 range, and center-level shares spread widely enough to give
    /// every option a non-degenerate score.
    pub fn reference_scale(centers: usize) -> GeneratorConfig {
        GeneratorConfig {
            label: "synthetic".to_owned(),
            centers,
            notebooks_per_center: CountLaw::Weighted {
                weights: vec![
                    (2, 1044.0),
                    (3, 820.0),
                    (4, 665.0),
                    (5, 496.0),
                    (6, 380.0),
                    (7, 300.0),
                    (8, 208.0),
                    (9, 110.0),
                    (10, 54.0),
                    (11, 41.0),
                    (12, 19.0),
                    (13, 12.0),
                    (14, 4.0),
                    (15, 4.0),
                    (16, 2.0),
                    (17, 2.0),
                    (18, 1.0),
                ],
            },
            voters_per_notebook: NotebookSizeLaw {
                mean: 634.6,
                sd: 73.86,
                min: 347,
                max: Some(975),
            },
            yes_share: ShareLaw::Uniform { low: 0.2, high: 0.6 },
            out_share: ShareLaw::Uniform { low: 0.2, high: 0.45 },
        }
    }

    fn validate(&self) -> Result<(), SynthError> {
        let err = SynthError::InvalidGenerator;
        if self.centers == 0 {
            return Err(err("centers must be positive".into()));
        }
        self.notebooks_per_center.validate().map_err(err)?;
        self.voters_per_notebook.validate().map_err(err)?;
        self.yes_share.validate("yes_share").map_err(err)?;
        self.out_share.validate("out_share").map_err(err)?;
        Ok(())
    }
}

const MAX_ALLOCATION_ATTEMPTS: usize = 1000;

/// Generate a synthetic election satisfying the shuffle null.
///
/// Each center draws its notebook count, register sizes, and YES/OUT
/// shares, rounds them into a card pool, and deals the pool to notebooks
/// through the null-model allocation. Abstention is capped so at least one
/// valid ballot per notebook exists, and the deal is redrawn in the
/// (vanishingly rare, for realistic profiles) event a notebook ends up
/// with no valid ballot — generated worlds therefore always pass
/// [`crate::corpus::clean_dataset`] unchanged.
pub fn generate_election(
    config: &GeneratorConfig,
    seed: SeedSpec,
) -> Result<ElectionDataset, SynthError> {
    config.validate()?;
    let centers: Result<Vec<Center>, SynthError> = (0..config.centers)
        .into_par_iter()
        .map(|ordinal| {
            let mut rng = seed.stream(StreamDomain::Generate, ordinal as u64);
            let count = config.notebooks_per_center.sample(&mut rng);
            let sizes: Vec<u64> = (0..count)
                .map(|_| config.voters_per_notebook.sample(&mut rng))
                .collect();
            let voters: u64 = sizes.iter().sum();
            let out_share = config.out_share.sample(&mut rng);
            let yes_share = config.yes_share.sample(&mut rng);
            // Cap abstention so every notebook can hold a valid ballot.
            let out = ((out_share * voters as f64).round() as u64).min(voters - count as u64);
            let valid = voters - out;
            let yes = (yes_share * valid as f64).round() as u64;
            let pool = [yes, valid - yes, out];

            let id = format!("{:06}", ordinal + 1);
            let mut attempts = 0;
            let splits = loop {
                attempts += 1;
                if attempts > MAX_ALLOCATION_ATTEMPTS {
                    return Err(SynthError::AllocationStuck {
                        center: id,
                        attempts: MAX_ALLOCATION_ATTEMPTS,
                    });
                }
                let splits = allocate_pool(&mut rng, pool, &sizes);
                if splits.iter().all(|s| s[0] + s[1] > 0) {
                    break splits;
                }
            };
            let notebooks = sizes
                .iter()
                .zip(splits)
                .enumerate()
                .map(|(i, (&voters, [yes, no, _out]))| Notebook {
                    id: format!("{:02}", i + 1),
                    voters,
                    yes,
                    no,
                })
                .collect();
            Ok(Center {
                id,
                kind: CenterKind::Computerized,
                notebooks,
            })
        })
        .collect();
    Ok(ElectionDataset {
        label: config.label.clone(),
        centers: centers?,
    })
}

/// Distribution of the ballot fraction an event moves.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum FractionLaw {
    Fixed { value: f64 },
    Uniform { low: f64, high: f64 },
}

impl FractionLaw {
    pub fn mean(&self) -> f64 {
        match self {
            FractionLaw::Fixed { value } => *value,
            FractionLaw::Uniform { low, high } => 0.5 * (low + high),
        }
    }

    fn validate(&self) -> Result<(), String> {
        let unit = |v: f64| v.is_finite() && (0.0..=1.0).contains(&v);
        match self {
            FractionLaw::Fixed { value } if unit(*value) => Ok(()),
            FractionLaw::Uniform { low, high } if unit(*low) && unit(*high) && low <= high => {
                Ok(())
            }
            _ => Err(format!("fraction_law must stay within [0, 1]: {self:?}")),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            FractionLaw::Fixed { value } => *value,
            FractionLaw::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
        }
    }
}

/// Whether events move a proportional slice of both options or only the
/// favoured option's cards.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectionMode {
    #[default]
    Neutral,
    Biased,
}

/// Recipe for planting irregularities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectionConfig {
    /// Number of events to apply.
    pub count: usize,
    /// Mean of the moved-ballot fraction.
    pub fraction_mean: f64,
    /// Distribution of the fraction; defaults to
    /// `Uniform(0, 2 · fraction_mean)` and must agree with `fraction_mean`.
    #[serde(default)]
    pub fraction_law: Option<FractionLaw>,
    #[serde(default)]
    pub mode: InjectionMode,
    /// Option favoured by biased events (YES or NO); must be unset in
    /// neutral mode.
    #[serde(default)]
    pub bias_option: Option<VoteOption>,
}

impl InjectionConfig {
    /// Neutral events with the default fraction law.
    pub fn neutral(count: usize, fraction_mean: f64) -> InjectionConfig {
        InjectionConfig {
            count,
            fraction_mean,
            fraction_law: None,
            mode: InjectionMode::Neutral,
            bias_option: None,
        }
    }

    /// Events that displace only `toward`'s ballots, sized by the donor's
    /// count of that option.
    pub fn biased(count: usize, fraction_mean: f64, toward: VoteOption) -> InjectionConfig {
        InjectionConfig {
            count,
            fraction_mean,
            fraction_law: None,
            mode: InjectionMode::Biased,
            bias_option: Some(toward),
        }
    }

    /// The fraction law actually sampled from.
    pub fn resolved_law(&self) -> FractionLaw {
        self.fraction_law.unwrap_or(FractionLaw::Uniform {
            low: 0.0,
            high: 2.0 * self.fraction_mean,
        })
    }

    fn validate(&self) -> Result<(), SynthError> {
        let err = SynthError::InvalidInjection;
        if !self.fraction_mean.is_finite() || !(0.0..1.0).contains(&self.fraction_mean) {
            return Err(err(format!(
                "fraction_mean must lie in [0, 1), got {}",
                self.fraction_mean
            )));
        }
        let law = self.resolved_law();
        law.validate().map_err(err)?;
        if (law.mean() - self.fraction_mean).abs() > 1e-9 {
            return Err(err(format!(
                "fraction_law mean {} does not match fraction_mean {}",
                law.mean(),
                self.fraction_mean
            )));
        }
        match (self.mode, self.bias_option) {
            (InjectionMode::Neutral, None) => Ok(()),
            (InjectionMode::Neutral, Some(option)) => Err(err(format!(
                "bias_option {option} is set but the mode is neutral"
            ))),
            (InjectionMode::Biased, Some(VoteOption::Yes | VoteOption::No)) => Ok(()),
            (InjectionMode::Biased, Some(VoteOption::Out)) => {
                Err(err("biased events must target a valid-vote option".into()))
            }
            (InjectionMode::Biased, None) => {
                Err(err("biased mode needs a bias_option".into()))
            }
        }
    }
}

/// How one attempted event ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventStatus {
    /// Ballots moved.
    Applied,
    /// The sampled fraction rounded to zero ballots; nothing moved.
    Null,
    /// The recipient could not absorb the ballots; the event was redrawn.
    Retried,
}

impl EventStatus {
    pub fn label(self) -> &'static str {
        match self {
            EventStatus::Applied => "applied",
            EventStatus::Null => "null",
            EventStatus::Retried => "retried",
        }
    }
}

/// One line of the injection audit log.
///
/// `moved_yes`/`moved_no` are the ballots moved from donor to recipient
/// per category; `biased_toward` names the favoured option whose cards a
/// biased event moved (`None` for neutral events). Retried attempts keep
/// their event number, so the log shows exactly what was tried and why
/// the final draw looks the way it does.
#[derive(Clone, Debug, PartialEq)]
pub struct InjectionEvent {
    /// 1-based event number.
    pub event: usize,
    pub center_id: String,
    pub donor_id: String,
    pub recipient_id: String,
    pub fraction: f64,
    pub moved_yes: u64,
    pub moved_no: u64,
    pub biased_toward: Option<VoteOption>,
    pub status: EventStatus,
}

/// The contaminated dataset plus its audit log.
#[derive(Clone, Debug, PartialEq)]
pub struct InjectionOutcome {
    pub dataset: ElectionDataset,
    pub log: Vec<InjectionEvent>,
}

const MAX_EVENT_ATTEMPTS: usize = 1000;

/// Plant `config.count` events into a dataset.
///
/// Each event picks a center uniformly — without replacement until every
/// eligible center has hosted an event, then with replacement — plus an
/// ordered donor/recipient pair among its notebooks and a moved fraction.
/// Neutral events move `round(f · yes)` and `round(f · no)` ballots from
/// the donor to the recipient, shrinking the recipient's abstention
/// count; biased events move `round(f · count(bias))` ballots of the
/// favoured option only, so the displacement scales with how strong that
/// option already is where the event lands. Events the recipient cannot
/// absorb are logged and redrawn.
pub fn inject_irregularities(
    dataset: &ElectionDataset,
    config: &InjectionConfig,
    seed: SeedSpec,
) -> Result<InjectionOutcome, SynthError> {
    config.validate()?;
    let law = config.resolved_law();
    let mut world = dataset.clone();
    let eligible: Vec<usize> = world
        .centers
        .iter()
        .enumerate()
        .filter(|(_, c)| c.notebooks.len() >= 2)
        .map(|(i, _)| i)
        .collect();
    if eligible.is_empty() && config.count > 0 {
        return Err(SynthError::NoEligibleCenters);
    }

    let mut rng = seed.stream(StreamDomain::Inject, 0);
    let mut queue = eligible.clone();
    use rand::seq::SliceRandom;
    queue.shuffle(&mut rng);
    let mut cursor = 0usize;
    let mut log = Vec::with_capacity(config.count);

    for event in 1..=config.count {
        let mut attempts = 0;
        loop {
            attempts += 1;
            if attempts > MAX_EVENT_ATTEMPTS {
                return Err(SynthError::InfeasibleEvent {
                    event,
                    attempts: MAX_EVENT_ATTEMPTS,
                });
            }
            let center_idx = if cursor < queue.len() {
                cursor += 1;
                queue[cursor - 1]
            } else {
                eligible[rng.random_range(0..eligible.len())]
            };
            let center = &mut world.centers[center_idx];
            let count = center.notebooks.len();
            let donor_idx = rng.random_range(0..count);
            let mut recipient_idx = rng.random_range(0..count - 1);
            if recipient_idx >= donor_idx {
                recipient_idx += 1;
            }
            let fraction = law.sample(&mut rng);

            let donor = &center.notebooks[donor_idx];
            let recipient = &center.notebooks[recipient_idx];
            let (moved_yes, moved_no, biased_toward) = match config.mode {
                InjectionMode::Neutral => {
                    let dy = (fraction * donor.yes as f64).round() as u64;
                    let dn = (fraction * donor.no as f64).round() as u64;
                    (dy, dn, None)
                }
                InjectionMode::Biased => {
                    let target = config.bias_option.expect("validated");
                    let moved = (fraction * donor.count(target) as f64).round() as u64;
                    match target {
                        VoteOption::Yes => (moved, 0, Some(target)),
                        VoteOption::No => (0, moved, Some(target)),
                        VoteOption::Out => unreachable!("validated"),
                    }
                }
            };
            let entry = InjectionEvent {
                event,
                center_id: center.id.clone(),
                donor_id: donor.id.clone(),
                recipient_id: recipient.id.clone(),
                fraction,
                moved_yes,
                moved_no,
                biased_toward,
                status: EventStatus::Applied,
            };

            // The recipient absorbs the ballots into its abstention slack.
            if moved_yes + moved_no > recipient.out() {
                log.push(InjectionEvent {
                    status: EventStatus::Retried,
                    ..entry
                });
                continue;
            }

            let notebooks = &mut center.notebooks;
            notebooks[donor_idx].yes -= moved_yes;
            notebooks[donor_idx].no -= moved_no;
            notebooks[recipient_idx].yes += moved_yes;
            notebooks[recipient_idx].no += moved_no;
            let status = if moved_yes + moved_no == 0 {
                EventStatus::Null
            } else {
                EventStatus::Applied
            };
            log.push(InjectionEvent { status, ..entry });
            break;
        }
    }
    Ok(InjectionOutcome { dataset: world, log })
}

/// Signature count simulated for one center.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SignerCount {
    pub center_id: String,
    /// The center's YES total the simulation conditioned on.
    pub yes: u64,
    /// Simulated signatures.
    pub signers: u64,
}

/// Simulate an independent supporter register with signing rate `theta`.
///
/// Each center draws `θ·Y + N(0, θ(1-θ)Y)` rounded to a non-negative
/// integer — the normal approximation to "each of the Y supporters signed
/// independently with probability θ". With `θ = 1` the count is exactly
/// `Y` and no randomness is consumed.
pub fn simulate_signers(
    dataset: &ElectionDataset,
    theta: f64,
    seed: SeedSpec,
) -> Result<Vec<SignerCount>, SynthError> {
    if !theta.is_finite() || theta <= 0.0 || theta > 1.0 {
        return Err(SynthError::InvalidTheta(theta));
    }
    Ok(dataset
        .centers
        .par_iter()
        .enumerate()
        .map(|(ordinal, center)| {
            let yes = center.total(VoteOption::Yes);
            let signers = if theta == 1.0 {
                yes
            } else {
                let mut rng = seed.stream(StreamDomain::Signers, ordinal as u64);
                let sd = (theta * (1.0 - theta) * yes as f64).sqrt();
                let noise = Normal::new(0.0, sd).expect("finite sd").sample(&mut rng);
                (theta * yes as f64 + noise).round().max(0.0) as u64
            };
            SignerCount {
                center_id: center.id.clone(),
                yes,
                signers,
            }
        })
        .collect())
}
