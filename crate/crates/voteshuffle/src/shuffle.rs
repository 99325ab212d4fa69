//! The shuffle null model: redistribute each center's cards across its
//! notebooks, keeping every notebook size fixed.
//!
//! Under the null hypothesis the assignment of a center's voters to its
//! notebooks carries no information, so the YES/NO/abstention cards form a
//! pool from which each notebook receives an exchangeable draw of exactly
//! its own size. [`shuffle_center`] produces one such draw — a uniform
//! sample from the space of tables with the observed margins — by splitting
//! the pool notebook-by-notebook with sequential multivariate
//! hypergeometric draws. [`sample_election`] applies this to every center
//! and is the engine behind all Monte Carlo calibration in the crate.
//!
//! # Reproducibility
//!
//! Randomised operations take a [`SeedSpec`]. Each internal generator is a
//! ChaCha stream whose 32-byte seed is a pure function of
//! `(master_seed, replicate_index, domain, ordinal)` — the domain separates
//! the crate's randomised operations from one another, and the ordinal is
//! the center's position in the dataset. Work can therefore be farmed out
//! across any number of threads without changing a single draw: results
//! depend only on the seed specification, never on scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::corpus::{Center, ElectionDataset, Notebook};

/// Identifies which randomised operation a stream feeds.
///
/// Distinct domains guarantee that, say, generating a synthetic world and
/// then shuffling it with the same master seed never reuses a stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StreamDomain {
    /// Null-model resampling ([`sample_election`], [`shuffle_center`]).
    Shuffle = 1,
    /// Synthetic world generation.
    Generate = 2,
    /// Irregularity injection.
    Inject = 3,
    /// Signature-count simulation.
    Signers = 4,
}

/// Seed for one replicate of a randomised operation.
///
/// The master seed names the experiment; the replicate index names the
/// Monte Carlo draw within it. Operations that run many replicates
/// internally (for example [`crate::scores::monte_carlo_null`]) use
/// `replicate_index` as the base and count upward from it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub replicate_index: u64,
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// Standard 64-bit finalizer used to mix seed material.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl SeedSpec {
    /// Replicate 0 of the experiment named by `master_seed`.
    pub fn new(master_seed: u64) -> Self {
        SeedSpec {
            master_seed,
            replicate_index: 0,
        }
    }

    /// The same experiment, different replicate.
    pub fn replicate(self, replicate_index: u64) -> Self {
        SeedSpec {
            master_seed: self.master_seed,
            replicate_index,
        }
    }

    /// Derive the generator for `(domain, ordinal)` under this seed.
    ///
    /// The seed bytes come from absorbing `(master_seed, replicate_index,
    /// domain, ordinal)` into a splitmix-style sponge and squeezing four
    /// words, so any change to any component yields an unrelated stream.
    /// This function is the *entire* reproducibility contract: everything
    /// random in the crate is a pure function of its inputs.
    pub fn stream(&self, domain: StreamDomain, ordinal: u64) -> ChaCha8Rng {
        let mut acc = 0u64;
        for word in [
            self.master_seed,
            self.replicate_index,
            domain as u64,
            ordinal,
        ] {
            acc = mix64(acc.wrapping_add(GOLDEN).wrapping_add(word));
        }
        let mut seed = [0u8; 32];
        for (i, chunk) in seed.chunks_exact_mut(8).enumerate() {
            let word = mix64(acc.wrapping_add(GOLDEN.wrapping_mul(i as u64 + 1)));
            chunk.copy_from_slice(&word.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}

/// Errors from the hypergeometric samplers.
#[derive(Clone, Copy, Debug, Error, PartialEq, Eq)]
pub enum ShuffleError {
    #[error("cannot draw {draw} cards from a pool of {population}")]
    DrawExceedsPopulation { draw: u64, population: u64 },
    #[error("category holds {successes} cards but the pool only has {population}")]
    CategoryExceedsPopulation { successes: u64, population: u64 },
}

pub(crate) fn ln_choose(n: u64, k: u64) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Exact hypergeometric draw: how many of `draw` cards taken without
/// replacement from a pool of `population` cards land in a marked category
/// of `successes` cards.
///
/// This is inversion sampling, but anchored at the distribution's mode and
/// expanded outward by the pmf recurrences, taking the heavier tail first.
/// Anchoring matters: for the pool sizes seen in real datasets the pmf at
/// the support edge underflows `f64` long before the mass near the mode is
/// reached, so a conventional walk from the lower end would never leave
/// zero. Accumulating from the mode keeps every intermediate quantity well
/// above the underflow threshold and makes the draw exact up to `f64`
/// rounding.
pub fn hypergeometric_draw<R: Rng + ?Sized>(
    rng: &mut R,
    population: u64,
    successes: u64,
    draw: u64,
) -> Result<u64, ShuffleError> {
    if successes > population {
        return Err(ShuffleError::CategoryExceedsPopulation {
            successes,
            population,
        });
    }
    if draw > population {
        return Err(ShuffleError::DrawExceedsPopulation { draw, population });
    }
    let lo = (draw + successes).saturating_sub(population);
    let hi = draw.min(successes);
    if lo == hi {
        return Ok(lo);
    }

    let mode = (((draw as u128 + 1) * (successes as u128 + 1)) / (population as u128 + 2)) as u64;
    let mode = mode.clamp(lo, hi);
    let ln_pmf_mode = ln_choose(successes, mode) + ln_choose(population - successes, draw - mode)
        - ln_choose(population, draw);
    let pmf_mode = ln_pmf_mode.exp();

    // pmf(k+1)/pmf(k) and pmf(k-1)/pmf(k); all factors stay far below 2^53.
    // `population - successes + k` comes first so no intermediate value
    // dips below zero (the support bounds guarantee the full term cannot).
    let ratio_up = |k: u64| -> f64 {
        ((successes - k) as f64 * (draw - k) as f64)
            / ((k as f64 + 1.0) * ((population - successes + k + 1 - draw) as f64))
    };
    let ratio_down = |k: u64| -> f64 {
        (k as f64 * ((population - successes + k - draw) as f64))
            / (((successes - k + 1) as f64) * ((draw - k + 1) as f64))
    };

    let mut u = rng.random::<f64>();
    if u < pmf_mode {
        return Ok(mode);
    }
    u -= pmf_mode;

    // (k, pmf(k)) for the next unvisited value on each side of the mode.
    let mut up = (mode < hi).then(|| (mode + 1, pmf_mode * ratio_up(mode)));
    let mut down = (mode > lo).then(|| (mode - 1, pmf_mode * ratio_down(mode)));
    let mut last = mode;
    loop {
        let take_up = match (up, down) {
            (Some((_, pu)), Some((_, pd))) => pu >= pd,
            (Some(_), None) => true,
            (None, Some(_)) => false,
            // Rounding left a sliver of u unaccounted for; every value has
            // been visited, so return the last one.
            (None, None) => return Ok(last),
        };
        let (k, p) = if take_up { up.unwrap() } else { down.unwrap() };
        if u < p {
            return Ok(k);
        }
        u -= p;
        last = k;
        if take_up {
            up = (k < hi).then(|| (k + 1, p * ratio_up(k)));
        } else {
            down = (k > lo).then(|| (k - 1, p * ratio_down(k)));
        }
    }
}

/// Split `draw` cards taken without replacement from a pool with the given
/// category counts, returning how many land in each category.
///
/// The draw is built category-by-category: each count is a univariate
/// hypergeometric draw conditional on the earlier ones, which yields an
/// exact multivariate hypergeometric sample. The result always sums to
/// `draw` and respects every category bound.
pub fn multivariate_hypergeometric_draw<R: Rng + ?Sized>(
    rng: &mut R,
    categories: &[u64],
    draw: u64,
) -> Result<Vec<u64>, ShuffleError> {
    let mut remaining_pool: u64 = categories.iter().sum();
    if draw > remaining_pool {
        return Err(ShuffleError::DrawExceedsPopulation {
            draw,
            population: remaining_pool,
        });
    }
    let mut remaining_draw = draw;
    let mut counts = Vec::with_capacity(categories.len());
    for (i, &category) in categories.iter().enumerate() {
        if i + 1 == categories.len() {
            counts.push(remaining_draw);
            break;
        }
        let taken = hypergeometric_draw(rng, remaining_pool, category, remaining_draw)?;
        counts.push(taken);
        remaining_pool -= category;
        remaining_draw -= taken;
    }
    Ok(counts)
}

/// Split a three-category pool across notebook-sized slots.
///
/// Shared by the null-model shuffle and the synthetic generator so both
/// allocate cards through the identical sampling path.
pub(crate) fn allocate_pool<R: Rng + ?Sized>(
    rng: &mut R,
    mut pool: [u64; 3],
    sizes: &[u64],
) -> Vec<[u64; 3]> {
    debug_assert_eq!(
        pool.iter().sum::<u64>(),
        sizes.iter().sum::<u64>(),
        "pool must match the total slot size"
    );
    let mut out = Vec::with_capacity(sizes.len());
    for (i, &size) in sizes.iter().enumerate() {
        if i + 1 == sizes.len() {
            out.push(pool);
            break;
        }
        let split = multivariate_hypergeometric_draw(rng, &pool, size)
            .expect("slot sizes are consistent with the pool");
        let split = [split[0], split[1], split[2]];
        for (p, s) in pool.iter_mut().zip(split) {
            *p -= s;
        }
        out.push(split);
    }
    out
}

pub(crate) fn shuffle_center_with<R: Rng + ?Sized>(center: &Center, rng: &mut R) -> Center {
    use crate::corpus::VoteOption;
    let pool = [
        center.total(VoteOption::Yes),
        center.total(VoteOption::No),
        center.total(VoteOption::Out),
    ];
    let sizes: Vec<u64> = center.notebooks.iter().map(|nb| nb.voters).collect();
    assert_eq!(
        pool.iter().sum::<u64>(),
        sizes.iter().sum::<u64>(),
        "center {}: ballots exceed voters; clean the dataset before shuffling",
        center.id
    );
    let splits = allocate_pool(rng, pool, &sizes);
    let notebooks = center
        .notebooks
        .iter()
        .zip(splits)
        .map(|(nb, [yes, no, _out])| Notebook {
            id: nb.id.clone(),
            voters: nb.voters,
            yes,
            no,
        })
        .collect();
    Center {
        id: center.id.clone(),
        kind: center.kind,
        notebooks,
    }
}

/// Draw one center from the null model: same notebooks, same sizes, same
/// center-wide totals, with the cards dealt uniformly at random.
///
/// The center must satisfy the cleaning invariants (no notebook with more
/// ballots than voters); violating rows make the card pool inconsistent
/// with the notebook sizes and trigger a panic rather than a silent
/// mis-deal.
pub fn shuffle_center(center: &Center, seed: SeedSpec) -> Center {
    let mut rng = seed.stream(StreamDomain::Shuffle, 0);
    shuffle_center_with(center, &mut rng)
}

/// Draw a full election from the null model, shuffling every center
/// independently.
///
/// Center `j` uses the stream `(seed, Shuffle, j)`, so the draw for a given
/// seed is identical whether the centers are processed serially or across
/// a thread pool. A single-center dataset reproduces [`shuffle_center`]
/// exactly.
pub fn sample_election(dataset: &ElectionDataset, seed: SeedSpec) -> ElectionDataset {
    let centers = dataset
        .centers
        .par_iter()
        .enumerate()
        .map(|(ordinal, center)| {
            let mut rng = seed.stream(StreamDomain::Shuffle, ordinal as u64);
            shuffle_center_with(center, &mut rng)
        })
        .collect();
    ElectionDataset {
        label: dataset.label.clone(),
        centers,
    }
}
