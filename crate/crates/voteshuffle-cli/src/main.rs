//! Command-line front end for the election-audit toolkit.
//!
//! Every subcommand reads plain CSV tally files, writes its artifacts into
//! `--out`, and finishes with a `manifest.json` recording the invocation,
//! the seed, and SHA-256 digests of every file read and written — enough
//! for anyone to verify an audit trail end to end. Artifacts are rendered
//! by the library's own export functions, so a script and a library user
//! produce byte-identical files.
//!
//! Exit codes: `0` success, `1` usage error, `2` input or computation
//! error.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{ArgGroup, Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use voteshuffle::digit_forensics::DEFAULT_COMPOSITION_BUDGET;
use voteshuffle::export::{self, JsonValue};
use voteshuffle::{
    benford_chi2, clean_dataset, cluster_chi2, exact_cluster_chi2_distribution_with_budget,
    generate_election, inject_irregularities, monte_carlo_null, outlier_count, parse_dataset,
    prediction_interval, s_squared, score_table, second_digit_frequencies, serialize_dataset,
    simulate_signers, summarize, t_statistic, yes_tie_test, zeta_series, CleanPolicy, DigitError,
    ElectionDataset, ExactChi2Distribution, GeneratorConfig, InjectionConfig, InjectionMode,
    NullCalibration, SeedSpec, TieGrouping, VoteOption, ZetaForm,
};

#[derive(Parser)]
#[command(
    name = "voteshuffle",
    version,
    about = "Forensic statistics for notebook-level vote tallies",
    propagate_version = true
)]
struct Cli {
    /// Directory artifacts are written into.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,

    /// Worker threads (defaults to all cores; also via VOTESHUFFLE_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OptionArg {
    Yes,
    No,
    Out,
}

impl From<OptionArg> for VoteOption {
    fn from(option: OptionArg) -> VoteOption {
        match option {
            OptionArg::Yes => VoteOption::Yes,
            OptionArg::No => VoteOption::No,
            OptionArg::Out => VoteOption::Out,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LevelArg {
    /// One count per notebook.
    Notebook,
    /// One count per center.
    Center,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Neutral,
    Biased,
}

#[derive(Subcommand)]
enum Command {
    /// Filter a tally file down to centers the null model can handle.
    Clean {
        input: PathBuf,
        /// Keep manual and mixed centers instead of dropping them.
        #[arg(long)]
        keep_manual: bool,
        /// Drop centers with fewer notebooks than this.
        #[arg(long, default_value_t = 2)]
        min_notebooks: usize,
    },
    /// Totals, option shares, and the center-size histogram.
    Summarize { input: PathBuf },
    /// Standardised per-notebook scores for all three options.
    Zscores {
        input: PathBuf,
        /// Also write a normal probability plot for this option (repeatable).
        #[arg(long, value_enum)]
        plot: Vec<OptionArg>,
    },
    /// Calibrate the global sum-of-squares statistic against the shuffle null.
    GlobalTest {
        input: PathBuf,
        #[arg(long, value_enum, default_value = "yes")]
        option: OptionArg,
        #[arg(long, default_value_t = 1000)]
        replicates: usize,
        /// Master seed; same seed, same result, any thread count.
        #[arg(long)]
        seed: u64,
    },
    /// Ratio control chart over the most extreme notebooks.
    ZetaChart {
        input: PathBuf,
        #[arg(long, value_enum, default_value = "no")]
        option: OptionArg,
        /// Smallest sample depth charted.
        #[arg(long, default_value_t = 100)]
        kmin: usize,
        /// Largest sample depth; defaults to the two-sided 99% outlier
        /// count, clamped to half the population.
        #[arg(long)]
        kmax: Option<usize>,
        /// Divide by the standard deviation instead of the variance,
        /// making the scores comparable to normal control bands.
        #[arg(long)]
        studentized: bool,
    },
    /// Prediction interval for the uncontaminated share.
    Predict {
        input: PathBuf,
        #[arg(long, value_enum, default_value = "no")]
        option: OptionArg,
    },
    /// Second-digit law test on vote counts.
    Benford {
        input: PathBuf,
        #[arg(long, value_enum, default_value = "notebook")]
        level: LevelArg,
        #[arg(long, value_enum, default_value = "yes")]
        option: OptionArg,
    },
    /// Within-center homogeneity test with its exact null distribution.
    ClusterChi2 {
        input: PathBuf,
        /// Center to test.
        #[arg(long)]
        center: String,
        /// Cap on the number of allocations enumerated exactly.
        #[arg(long, default_value_t = DEFAULT_COMPOSITION_BUDGET)]
        budget: u64,
    },
    /// Monte Carlo test for tied YES counts.
    Ties {
        input: PathBuf,
        #[arg(long, default_value_t = 1000)]
        replicates: usize,
        #[arg(long)]
        seed: u64,
        /// Group notebooks by this input column instead of by center.
        #[arg(long)]
        group_by: Option<String>,
    },
    /// Generate a null-model election.
    #[command(group(ArgGroup::new("recipe").required(true).args(["config", "reference_scale"])))]
    Generate {
        /// Generator configuration (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Use the built-in full-scale profile with this many centers.
        #[arg(long)]
        reference_scale: Option<usize>,
        /// Override the dataset label.
        #[arg(long)]
        label: Option<String>,
        #[arg(long)]
        seed: u64,
    },
    /// Plant irregularities into a dataset, with an audit log.
    Inject {
        input: PathBuf,
        /// Injection configuration (JSON); alternative to the flags below.
        #[arg(long, conflicts_with_all = ["count", "fraction_mean", "mode", "bias"])]
        config: Option<PathBuf>,
        #[arg(long)]
        count: Option<usize>,
        /// Mean fraction of the donor's ballots moved per event.
        #[arg(long)]
        fraction_mean: Option<f64>,
        #[arg(long, value_enum, default_value = "neutral")]
        mode: ModeArg,
        /// Option favoured by biased events.
        #[arg(long, value_enum)]
        bias: Option<OptionArg>,
        #[arg(long)]
        seed: u64,
    },
    /// Simulate an independent supporter register signed at rate theta.
    Signers {
        input: PathBuf,
        /// Probability that a YES voter signs, in (0, 1].
        #[arg(long)]
        theta: f64,
        #[arg(long)]
        seed: u64,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            std::process::exit(code);
        }
    };
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(2);
    }
}

/// Records everything the manifest needs while a command runs.
struct Session {
    out_dir: PathBuf,
    command: &'static str,
    seed: Option<u64>,
    inputs: Vec<(String, String)>,
    outputs: Vec<(String, String)>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex::encode(hasher.finalize())
}

impl Session {
    fn new(out_dir: &Path, command: &'static str, seed: Option<u64>) -> Result<Session> {
        std::fs::create_dir_all(out_dir)
            .with_context(|| format!("creating output directory {}", out_dir.display()))?;
        Ok(Session {
            out_dir: out_dir.to_path_buf(),
            command,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    /// Read a file, recording its digest for the manifest.
    fn read_input(&mut self, path: &Path) -> Result<String> {
        let content = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        self.inputs
            .push((path.display().to_string(), sha256_hex(content.as_bytes())));
        Ok(content)
    }

    /// Write an artifact into the output directory, recording its digest.
    fn write_artifact(&mut self, name: &str, content: &str) -> Result<()> {
        let path = self.out_dir.join(name);
        std::fs::write(&path, content).with_context(|| format!("writing {}", path.display()))?;
        self.outputs
            .push((name.to_owned(), sha256_hex(content.as_bytes())));
        Ok(())
    }

    /// Write `manifest.json` describing the whole invocation.
    fn finish(self) -> Result<()> {
        let digests = |entries: &[(String, String)]| {
            JsonValue::object(
                entries
                    .iter()
                    .map(|(name, digest)| (name.clone(), JsonValue::from(digest.as_str()))),
            )
        };
        let created = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let manifest = JsonValue::object([
            ("tool", JsonValue::from("voteshuffle")),
            ("version", JsonValue::from(env!("CARGO_PKG_VERSION"))),
            ("command", JsonValue::from(self.command)),
            (
                "argv",
                JsonValue::array(std::env::args().map(JsonValue::from)),
            ),
            ("threads", JsonValue::from(rayon::current_num_threads())),
            (
                "seed",
                self.seed.map(JsonValue::from).unwrap_or(JsonValue::Null),
            ),
            ("created_unix", JsonValue::from(created)),
            ("inputs", digests(&self.inputs)),
            ("outputs", digests(&self.outputs)),
        ]);
        let path = self.out_dir.join("manifest.json");
        std::fs::write(&path, manifest.render())
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

fn configure_threads(flag: Option<usize>) -> Result<()> {
    let from_env = || -> Option<usize> {
        std::env::var("VOTESHUFFLE_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    };
    if let Some(threads) = flag.or_else(from_env) {
        if threads == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring the thread pool")?;
    }
    Ok(())
}

fn dataset_label(path: &Path) -> String {
    path.file_stem()
        .and_then(|stem| stem.to_str())
        .unwrap_or("dataset")
        .to_owned()
}

fn load_dataset(session: &mut Session, path: &Path) -> Result<ElectionDataset> {
    let content = session.read_input(path)?;
    parse_dataset(&content, dataset_label(path))
        .with_context(|| format!("parsing {}", path.display()))
}

/// Refuse work whose null model the data cannot support.
fn reject_overflow(dataset: &ElectionDataset) -> Result<()> {
    for (center, nb) in dataset.notebooks() {
        if nb.valid() > nb.voters {
            bail!(
                "notebook {} in center {} reports more ballots than voters; run `clean` first",
                nb.id,
                center.id
            );
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads(cli.threads)?;
    let out = cli.out.as_path();
    match cli.command {
        Command::Clean {
            input,
            keep_manual,
            min_notebooks,
        } => {
            let mut session = Session::new(out, "clean", None)?;
            let dataset = load_dataset(&mut session, &input)?;
            let policy = CleanPolicy {
                computerized_only: !keep_manual,
                min_notebooks,
            };
            let (cleaned, report) = clean_dataset(&dataset, &policy);
            session.write_artifact("cleaned.csv", &serialize_dataset(&cleaned))?;
            session.write_artifact("cleaning_report.json", &export::cleaning_report_json(&report))?;
            session.finish()
        }
        Command::Summarize { input } => {
            let mut session = Session::new(out, "summarize", None)?;
            let dataset = load_dataset(&mut session, &input)?;
            let summary = summarize(&dataset)?;
            session.write_artifact("summary.json", &export::summary_json(&dataset.label, &summary))?;
            session.finish()
        }
        Command::Zscores { input, plot } => {
            let mut session = Session::new(out, "zscores", None)?;
            let dataset = load_dataset(&mut session, &input)?;
            reject_overflow(&dataset)?;
            let table = score_table(&dataset);
            session.write_artifact("scores.csv", &export::score_table_csv(&table))?;
            for option in plot {
                let option = VoteOption::from(option);
                let scores = table.finite_scores(option);
                let points = voteshuffle::normal_plot_points(&scores)
                    .with_context(|| format!("no {option} scores to plot"))?;
                let name = format!("plot_{}.csv", option.label());
                session.write_artifact(&name, &export::plot_csv(&points))?;
            }
            session.finish()
        }
        Command::GlobalTest {
            input,
            option,
            replicates,
            seed,
        } => {
            let mut session = Session::new(out, "global-test", Some(seed))?;
            let dataset = load_dataset(&mut session, &input)?;
            reject_overflow(&dataset)?;
            let option = VoteOption::from(option);
            let table = score_table(&dataset);
            let observed = s_squared(&table, option);
            let calibration: NullCalibration =
                monte_carlo_null(&dataset, option, replicates, SeedSpec::new(seed))?;
            let test = t_statistic(observed, &calibration);
            session.write_artifact(
                "calibration.json",
                &export::calibration_json(observed, &calibration, &test),
            )?;
            session.finish()
        }
        Command::ZetaChart {
            input,
            option,
            kmin,
            kmax,
            studentized,
        } => {
            let mut session = Session::new(out, "zeta-chart", None)?;
            let dataset = load_dataset(&mut session, &input)?;
            reject_overflow(&dataset)?;
            let option = VoteOption::from(option);
            let table = score_table(&dataset);
            let half = dataset.notebook_count() / 2;
            let kmax = kmax.unwrap_or_else(|| outlier_count(&table, 0.99).min(half).max(kmin));
            let form = if studentized {
                ZetaForm::Studentized
            } else {
                ZetaForm::AsPrinted
            };
            let series = zeta_series(&dataset, &table, (kmin, kmax), option, form)?;
            session.write_artifact("zeta.csv", &export::zeta_csv(&series))?;
            session.finish()
        }
        Command::Predict { input, option } => {
            let mut session = Session::new(out, "predict", None)?;
            let dataset = load_dataset(&mut session, &input)?;
            reject_overflow(&dataset)?;
            let table = score_table(&dataset);
            let interval = prediction_interval(&dataset, &table, VoteOption::from(option))?;
            session.write_artifact("prediction.json", &export::interval_json(&interval))?;
            session.finish()
        }
        Command::Benford {
            input,
            level,
            option,
        } => {
            let mut session = Session::new(out, "benford", None)?;
            let dataset = load_dataset(&mut session, &input)?;
            let option = VoteOption::from(option);
            let counts: Vec<u64> = match level {
                LevelArg::Notebook => dataset
                    .notebooks()
                    .map(|(_, nb)| nb.count(option))
                    .collect(),
                LevelArg::Center => dataset
                    .centers
                    .iter()
                    .map(|center| center.total(option))
                    .collect(),
            };
            let frequencies = second_digit_frequencies(counts);
            let test = benford_chi2(&frequencies)?;
            session.write_artifact("benford.csv", &export::benford_csv(&frequencies))?;
            session.write_artifact("benford.json", &export::benford_json(&test, &frequencies))?;
            session.finish()
        }
        Command::ClusterChi2 {
            input,
            center,
            budget,
        } => {
            let mut session = Session::new(out, "cluster-chi2", None)?;
            let dataset = load_dataset(&mut session, &input)?;
            let found = dataset
                .center(&center)
                .ok_or_else(|| anyhow!("center {center:?} is not in the dataset"))?;
            let test = cluster_chi2(&found.notebooks)?;
            let sizes: Vec<u64> = found.notebooks.iter().map(|nb| nb.valid()).collect();
            let pool = (
                found.total(VoteOption::Yes),
                found.total(VoteOption::No),
            );
            let exact = match exact_cluster_chi2_distribution_with_budget(&sizes, pool, budget) {
                Ok(distribution) => Some(distribution),
                Err(err @ DigitError::BudgetExceeded { .. }) => {
                    eprintln!("note: {err}; reporting the asymptotic tail only");
                    None
                }
                Err(err) => return Err(err.into()),
            };
            session.write_artifact("cluster.json", &export::cluster_json(&test, exact.as_ref()))?;
            let atoms = exact.unwrap_or(ExactChi2Distribution { atoms: Vec::new() });
            session.write_artifact("atoms.csv", &export::atoms_csv(&atoms))?;
            session.finish()
        }
        Command::Ties {
            input,
            replicates,
            seed,
            group_by,
        } => {
            let mut session = Session::new(out, "ties", Some(seed))?;
            let content = session.read_input(&input)?;
            let dataset = parse_dataset(&content, dataset_label(&input))
                .with_context(|| format!("parsing {}", input.display()))?;
            reject_overflow(&dataset)?;
            let grouping = match group_by {
                None => TieGrouping::PerCenter,
                Some(column) => TieGrouping::Custom(read_group_column(&content, &column)?),
            };
            let report = yes_tie_test(&dataset, replicates, SeedSpec::new(seed), &grouping)?;
            session.write_artifact("ties.json", &export::ties_json(&report))?;
            session.finish()
        }
        Command::Generate {
            config,
            reference_scale,
            label,
            seed,
        } => {
            let mut session = Session::new(out, "generate", Some(seed))?;
            let mut recipe: GeneratorConfig = match (&config, reference_scale) {
                (Some(path), _) => {
                    let content = session.read_input(path)?;
                    serde_json::from_str(&content)
                        .with_context(|| format!("parsing {}", path.display()))?
                }
                (None, Some(centers)) => GeneratorConfig::reference_scale(centers),
                (None, None) => unreachable!("clap enforces the recipe group"),
            };
            if let Some(label) = label {
                recipe.label = label;
            }
            let world = generate_election(&recipe, SeedSpec::new(seed))?;
            session.write_artifact("election.csv", &serialize_dataset(&world))?;
            session.finish()
        }
        Command::Inject {
            input,
            config,
            count,
            fraction_mean,
            mode,
            bias,
            seed,
        } => {
            let mut session = Session::new(out, "inject", Some(seed))?;
            let dataset = load_dataset(&mut session, &input)?;
            let recipe: InjectionConfig = match config {
                Some(path) => {
                    let content = session.read_input(&path)?;
                    serde_json::from_str(&content)
                        .with_context(|| format!("parsing {}", path.display()))?
                }
                None => {
                    let (Some(count), Some(fraction_mean)) = (count, fraction_mean) else {
                        bail!("provide --config, or both --count and --fraction-mean");
                    };
                    InjectionConfig {
                        count,
                        fraction_mean,
                        fraction_law: None,
                        mode: match mode {
                            ModeArg::Neutral => InjectionMode::Neutral,
                            ModeArg::Biased => InjectionMode::Biased,
                        },
                        bias_option: bias.map(VoteOption::from),
                    }
                }
            };
            let outcome = inject_irregularities(&dataset, &recipe, SeedSpec::new(seed))?;
            session.write_artifact("injected.csv", &serialize_dataset(&outcome.dataset))?;
            session.write_artifact("injection_log.csv", &export::injection_log_csv(&outcome.log))?;
            session.finish()
        }
        Command::Signers { input, theta, seed } => {
            let mut session = Session::new(out, "signers", Some(seed))?;
            let dataset = load_dataset(&mut session, &input)?;
            let counts = simulate_signers(&dataset, theta, SeedSpec::new(seed))?;
            session.write_artifact("signers.csv", &export::signers_csv(&counts))?;
            session.finish()
        }
    }
}

/// Build a tie grouping from an extra column of the input CSV.
fn read_group_column(
    content: &str,
    column: &str,
) -> Result<HashMap<(String, String), String>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(content.as_bytes());
    let headers = reader.headers().context("reading the CSV header")?.clone();
    let position = |name: &str| headers.iter().position(|h| h == name);
    let col_group = position(column).ok_or_else(|| {
        anyhow!(
            "column {column:?} not found; the file has: {}",
            headers.iter().collect::<Vec<_>>().join(", ")
        )
    })?;
    let col_center = position("center_id").context("missing center_id column")?;
    let col_notebook = position("notebook_id").context("missing notebook_id column")?;
    let mut map = HashMap::new();
    for record in reader.records() {
        let record = record.context("reading a CSV record")?;
        let get = |idx: usize| record.get(idx).unwrap_or("").to_owned();
        map.insert((get(col_center), get(col_notebook)), get(col_group));
    }
    Ok(map)
}
