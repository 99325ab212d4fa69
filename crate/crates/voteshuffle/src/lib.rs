//! Forensic statistics for notebook-level vote tallies.
//!
//! The crate analyses two-option elections (YES/NO plus abstention) that are
//! recorded at the resolution of tally *notebooks*: per-machine or per-table
//! counts grouped into polling centers. Everything revolves around one null
//! hypothesis — that within each center the assignment of voters to
//! notebooks is arbitrary, so each notebook's composition behaves like a
//! uniform draw from the center's card pool with the notebook sizes fixed.
//!
//! The modules follow the analysis pipeline:
//!
//! * [`corpus`] — parsing, cleaning, and summarising raw tally files;
//! * [`shuffle`] — exact resampling from the within-center null model;
//! * [`scores`] — per-notebook standardised scores and the global
//!   sum-of-squares test calibrated against the shuffle null;
//! * [`ratio_chart`] — a control chart comparing the vote ratio of the most
//!   extreme notebooks against the rest of the population, with a
//!   prediction interval for the uncontaminated outcome;
//! * [`synthetic`] — generators for null worlds, irregularity injection, and
//!   a signature-count simulation;
//! * [`digit_forensics`] — second-digit law checks, exact conditional
//!   chi-square distributions for small clusters, and a tie-count test;
//! * [`export`] — deterministic CSV/JSON renderings of every result type, so
//!   library users and the CLI produce byte-identical artifacts.
//!
//! Randomised operations take a [`SeedSpec`]; results are reproducible and
//! independent of thread count (see [`shuffle`] for the derivation rules).

pub mod corpus;
pub mod digit_forensics;
pub mod export;
pub mod ratio_chart;
pub mod scores;
pub mod shuffle;
pub mod synthetic;

pub use corpus::{
    clean_dataset, parse_dataset, serialize_dataset, summarize, Center, CenterKind, CleanPolicy,
    CleaningReport, CorpusError, DatasetSummary, ElectionDataset, Notebook, VoteOption,
};
pub use digit_forensics::{
    benford_chi2, cluster_chi2, exact_cluster_chi2_distribution,
    exact_cluster_chi2_distribution_with_budget, second_digit_frequencies, second_digit_law,
    yes_tie_test, DigitDistribution, DigitError, DigitFrequencies, ExactChi2Distribution, GofTest,
    TieGrouping, TieReport,
};
pub use ratio_chart::{
    outlier_count, outlier_sample, population_ratio, prediction_interval, zeta_score, zeta_series,
    OutlierSample, PredictionInterval, RatioError, ZetaForm, ZetaPoint, ZetaSeries,
};
pub use scores::{
    ks_normal_test, monte_carlo_null, normal_plot_points, s_squared, score_table, t_statistic,
    z_score, KsTest, NullCalibration, PlotPoint, ScoreRow, ScoreTable, ScoresError, TailTest,
};
pub use shuffle::{
    hypergeometric_draw, multivariate_hypergeometric_draw, sample_election, shuffle_center,
    SeedSpec, ShuffleError, StreamDomain,
};
pub use synthetic::{
    generate_election, inject_irregularities, simulate_signers, CountLaw, EventStatus,
    FractionLaw, GeneratorConfig, InjectionConfig, InjectionEvent, InjectionMode,
    InjectionOutcome, NotebookSizeLaw, ShareLaw, SignerCount, SynthError,
};
