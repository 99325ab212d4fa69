//! Parsing, cleaning, and summarising notebook-level tally data.
//!
//! Datasets arrive as CSV with one row per notebook:
//!
//! ```text
//! center_id,notebook_id,voters,yes,no[,kind]
//! ```
//!
//! `voters` is the number of registered voters assigned to the notebook and
//! `yes`/`no` are the two option tallies; the remainder
//! `voters - yes - no` is treated as the abstention count (voters who did
//! not cast a valid ballot). The optional `kind` column flags the tallying
//! technology: `C` (computerized), `M` (manual), `X` (mixed). A missing
//! column or empty field defaults to computerized. Extra columns are
//! ignored by the parser so annotated files can be fed back in unchanged.
//!
//! Parsing is deliberately permissive about content — rows are accepted as
//! long as they are structurally sound — while [`clean_dataset`] applies the
//! audit rules that decide which centers enter the statistical analysis.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::export::csv_field;

/// Tallying technology used by a center.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CenterKind {
    /// Votes recorded by touch-screen machines with printed trails.
    Computerized,
    /// Votes counted by hand.
    Manual,
    /// Mixed technologies, or rows of one center that disagree on kind.
    Mixed,
}

impl CenterKind {
    /// One-letter code used in the CSV `kind` column.
    pub fn letter(self) -> &'static str {
        match self {
            CenterKind::Computerized => "C",
            CenterKind::Manual => "M",
            CenterKind::Mixed => "X",
        }
    }

    fn parse(field: &str) -> Option<CenterKind> {
        match field.trim().to_ascii_uppercase().as_str() {
            "" | "C" => Some(CenterKind::Computerized),
            "M" => Some(CenterKind::Manual),
            "X" => Some(CenterKind::Mixed),
            _ => None,
        }
    }
}

/// The three card categories a voter can end up in.
///
/// `Out` is the abstention remainder `voters - yes - no`: registered voters
/// who did not cast a valid ballot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteOption {
    Yes,
    No,
    Out,
}

impl VoteOption {
    /// All options, in the canonical YES/NO/OUT order.
    pub const ALL: [VoteOption; 3] = [VoteOption::Yes, VoteOption::No, VoteOption::Out];

    /// Lower-case label used in file names and report fields.
    pub fn label(self) -> &'static str {
        match self {
            VoteOption::Yes => "yes",
            VoteOption::No => "no",
            VoteOption::Out => "out",
        }
    }
}

impl fmt::Display for VoteOption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// One tally notebook: the counts recorded for a single machine or table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Notebook {
    pub id: String,
    /// Registered voters assigned to this notebook.
    pub voters: u64,
    pub yes: u64,
    pub no: u64,
}

impl Notebook {
    /// Valid ballots cast: `yes + no`.
    pub fn valid(&self) -> u64 {
        self.yes + self.no
    }

    /// Abstention count `voters - yes - no`.
    ///
    /// Saturates at zero when the ballots exceed the register; such rows are
    /// structural violations that [`clean_dataset`] removes, so downstream
    /// statistics only ever see the exact remainder.
    pub fn out(&self) -> u64 {
        self.voters.saturating_sub(self.valid())
    }

    /// Count for one option category.
    pub fn count(&self, option: VoteOption) -> u64 {
        match option {
            VoteOption::Yes => self.yes,
            VoteOption::No => self.no,
            VoteOption::Out => self.out(),
        }
    }
}

/// A polling center and its notebooks, in file order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Center {
    pub id: String,
    pub kind: CenterKind,
    pub notebooks: Vec<Notebook>,
}

impl Center {
    /// Total registered voters across the center's notebooks.
    pub fn voters(&self) -> u64 {
        self.notebooks.iter().map(|nb| nb.voters).sum()
    }

    /// Total valid ballots (`yes + no`) across the center.
    pub fn valid_votes(&self) -> u64 {
        self.notebooks.iter().map(|nb| nb.valid()).sum()
    }

    /// Center-wide count for one option category.
    pub fn total(&self, option: VoteOption) -> u64 {
        self.notebooks.iter().map(|nb| nb.count(option)).sum()
    }

    /// Share of the center's registered voters in the given category.
    pub fn proportion(&self, option: VoteOption) -> f64 {
        let voters = self.voters();
        if voters == 0 {
            return 0.0;
        }
        self.total(option) as f64 / voters as f64
    }
}

/// A full dataset: an ordered list of centers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ElectionDataset {
    /// Free-form name carried through reports (file stem, usually).
    pub label: String,
    pub centers: Vec<Center>,
}

impl ElectionDataset {
    pub fn center_count(&self) -> usize {
        self.centers.len()
    }

    pub fn notebook_count(&self) -> usize {
        self.centers.iter().map(|c| c.notebooks.len()).sum()
    }

    /// Iterate over `(center, notebook)` pairs in dataset order.
    pub fn notebooks(&self) -> impl Iterator<Item = (&Center, &Notebook)> {
        self.centers
            .iter()
            .flat_map(|c| c.notebooks.iter().map(move |nb| (c, nb)))
    }

    /// Look up a center by id.
    pub fn center(&self, id: &str) -> Option<&Center> {
        self.centers.iter().find(|c| c.id == id)
    }
}

/// Errors raised while reading or summarising a dataset.
#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("missing required column {0:?}")]
    MissingColumn(&'static str),
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("line {line}: duplicate notebook {notebook:?} in center {center:?}")]
    DuplicateNotebook {
        line: u64,
        center: String,
        notebook: String,
    },
    #[error("dataset contains no notebooks")]
    Empty,
}

/// Parse a CSV tally file into a dataset.
///
/// Rows may appear in any order; centers are assembled by id and keep the
/// order of first appearance, notebooks keep file order within their
/// center. Counts must be non-negative integers. Duplicate
/// `(center_id, notebook_id)` pairs are rejected — a notebook tallied twice
/// is a data-integrity failure nothing downstream could repair.
///
/// A center's kind is taken from its rows; rows that disagree mark the
/// whole center as mixed.
pub fn parse_dataset(input: &str, label: impl Into<String>) -> Result<ElectionDataset, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input.as_bytes());

    let headers = reader
        .headers()
        .map_err(|e| csv_error(&e))?
        .clone();
    let column = |name: &'static str| -> Result<usize, CorpusError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or(CorpusError::MissingColumn(name))
    };
    let col_center = column("center_id")?;
    let col_notebook = column("notebook_id")?;
    let col_voters = column("voters")?;
    let col_yes = column("yes")?;
    let col_no = column("no")?;
    let col_kind = headers.iter().position(|h| h == "kind");

    let mut centers: Vec<Center> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut seen: HashMap<(usize, String), ()> = HashMap::new();

    for record in reader.records() {
        let record = record.map_err(|e| csv_error(&e))?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |idx: usize, name: &str| -> Result<&str, CorpusError> {
            record.get(idx).ok_or_else(|| CorpusError::Malformed {
                line,
                message: format!("missing {name} field"),
            })
        };
        let count = |idx: usize, name: &str| -> Result<u64, CorpusError> {
            let raw = field(idx, name)?;
            raw.parse::<u64>().map_err(|_| CorpusError::Malformed {
                line,
                message: format!("invalid {name} count {raw:?}"),
            })
        };

        let center_id = field(col_center, "center_id")?.to_owned();
        let notebook_id = field(col_notebook, "notebook_id")?.to_owned();
        if center_id.is_empty() || notebook_id.is_empty() {
            return Err(CorpusError::Malformed {
                line,
                message: "empty center_id or notebook_id".to_owned(),
            });
        }
        let voters = count(col_voters, "voters")?;
        let yes = count(col_yes, "yes")?;
        let no = count(col_no, "no")?;
        let kind = match col_kind {
            Some(idx) => {
                let raw = field(idx, "kind")?;
                CenterKind::parse(raw).ok_or_else(|| CorpusError::Malformed {
                    line,
                    message: format!("unknown kind {raw:?} (expected C, M, or X)"),
                })?
            }
            None => CenterKind::Computerized,
        };

        let center_idx = *index.entry(center_id.clone()).or_insert_with(|| {
            centers.push(Center {
                id: center_id.clone(),
                kind,
                notebooks: Vec::new(),
            });
            centers.len() - 1
        });
        let center = &mut centers[center_idx];
        if !center.notebooks.is_empty() && center.kind != kind {
            center.kind = CenterKind::Mixed;
        }
        if seen
            .insert((center_idx, notebook_id.clone()), ())
            .is_some()
        {
            return Err(CorpusError::DuplicateNotebook {
                line,
                center: center_id,
                notebook: notebook_id,
            });
        }
        center.notebooks.push(Notebook {
            id: notebook_id,
            voters,
            yes,
            no,
        });
    }

    Ok(ElectionDataset {
        label: label.into(),
        centers,
    })
}

fn csv_error(err: &csv::Error) -> CorpusError {
    let line = err.position().map_or(0, |p| p.line());
    CorpusError::Malformed {
        line,
        message: err.to_string(),
    }
}

/// Render a dataset back to CSV, always including the `kind` column.
///
/// `parse_dataset(serialize_dataset(d)) == d` for every dataset, so cleaned
/// or synthetic data can be written out and re-read without loss.
pub fn serialize_dataset(dataset: &ElectionDataset) -> String {
    let mut out = String::from("center_id,notebook_id,voters,yes,no,kind\n");
    for center in &dataset.centers {
        for nb in &center.notebooks {
            out.push_str(&csv_field(&center.id));
            out.push(',');
            out.push_str(&csv_field(&nb.id));
            out.push(',');
            out.push_str(&nb.voters.to_string());
            out.push(',');
            out.push_str(&nb.yes.to_string());
            out.push(',');
            out.push_str(&nb.no.to_string());
            out.push(',');
            out.push_str(center.kind.letter());
            out.push('\n');
        }
    }
    out
}

/// Which centers survive into the analysis.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CleanPolicy {
    /// Drop centers that are not fully computerized (manual and mixed
    /// centers lack machine-resolution audit trails).
    pub computerized_only: bool,
    /// Minimum notebooks per center; within-center statistics need at
    /// least two.
    pub min_notebooks: usize,
}

impl Default for CleanPolicy {
    fn default() -> Self {
        CleanPolicy {
            computerized_only: true,
            min_notebooks: 2,
        }
    }
}

/// What [`clean_dataset`] removed and why.
///
/// Rules apply in order, and a center is counted under the first rule it
/// trips, so `retained + Σ dropped` always reproduces the input counts.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CleaningReport {
    pub input_centers: usize,
    pub input_notebooks: usize,
    /// Centers dropped by the kind filter (manual or mixed).
    pub dropped_kind_centers: usize,
    pub dropped_kind_notebooks: usize,
    /// Centers where some notebook reports more ballots than voters.
    pub dropped_overflow_centers: usize,
    pub dropped_overflow_notebooks: usize,
    /// Centers containing a notebook with no valid ballots at all.
    pub dropped_empty_centers: usize,
    pub dropped_empty_notebooks: usize,
    /// Centers with fewer notebooks than the policy minimum.
    pub dropped_small_centers: usize,
    pub dropped_small_notebooks: usize,
    pub retained_centers: usize,
    pub retained_notebooks: usize,
}

impl CleaningReport {
    pub fn dropped_centers(&self) -> usize {
        self.dropped_kind_centers
            + self.dropped_overflow_centers
            + self.dropped_empty_centers
            + self.dropped_small_centers
    }

    pub fn dropped_notebooks(&self) -> usize {
        self.dropped_kind_notebooks
            + self.dropped_overflow_notebooks
            + self.dropped_empty_notebooks
            + self.dropped_small_notebooks
    }
}

/// Apply the audit rules, returning the surviving dataset and a report.
///
/// A center is dropped whole — never notebook-by-notebook — when it is the
/// wrong kind, when any notebook reports more ballots than registered
/// voters, when any notebook has zero valid ballots, or when fewer than
/// `policy.min_notebooks` notebooks remain. Cleaning is idempotent.
pub fn clean_dataset(
    dataset: &ElectionDataset,
    policy: &CleanPolicy,
) -> (ElectionDataset, CleaningReport) {
    let mut report = CleaningReport {
        input_centers: dataset.center_count(),
        input_notebooks: dataset.notebook_count(),
        ..CleaningReport::default()
    };
    let mut kept = Vec::new();
    for center in &dataset.centers {
        let notebooks = center.notebooks.len();
        if policy.computerized_only && center.kind != CenterKind::Computerized {
            report.dropped_kind_centers += 1;
            report.dropped_kind_notebooks += notebooks;
        } else if center.notebooks.iter().any(|nb| nb.valid() > nb.voters) {
            report.dropped_overflow_centers += 1;
            report.dropped_overflow_notebooks += notebooks;
        } else if center.notebooks.iter().any(|nb| nb.valid() == 0) {
            report.dropped_empty_centers += 1;
            report.dropped_empty_notebooks += notebooks;
        } else if notebooks < policy.min_notebooks {
            report.dropped_small_centers += 1;
            report.dropped_small_notebooks += notebooks;
        } else {
            kept.push(center.clone());
        }
    }
    report.retained_centers = kept.len();
    report.retained_notebooks = kept.iter().map(|c| c.notebooks.len()).sum();
    (
        ElectionDataset {
            label: dataset.label.clone(),
            centers: kept,
        },
        report,
    )
}

/// Headline numbers for a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSummary {
    pub centers: usize,
    pub notebooks: usize,
    pub voters: u64,
    pub yes: u64,
    pub no: u64,
    pub out: u64,
    /// YES share of valid ballots.
    pub yes_share: f64,
    /// NO share of valid ballots.
    pub no_share: f64,
    /// Abstention share of registered voters.
    pub out_share: f64,
    pub mean_notebook_voters: f64,
    /// Sample standard deviation of notebook sizes.
    pub sd_notebook_voters: f64,
    /// `(notebooks in center, number of such centers)`, ascending.
    pub notebooks_per_center: Vec<(usize, usize)>,
}

/// Compute totals, option shares, and the center-size histogram.
pub fn summarize(dataset: &ElectionDataset) -> Result<DatasetSummary, CorpusError> {
    let notebooks = dataset.notebook_count();
    if notebooks == 0 {
        return Err(CorpusError::Empty);
    }
    let mut voters = 0u64;
    let mut yes = 0u64;
    let mut no = 0u64;
    for (_, nb) in dataset.notebooks() {
        voters += nb.voters;
        yes += nb.yes;
        no += nb.no;
    }
    let out = voters.saturating_sub(yes + no);
    let valid = yes + no;

    let mean = voters as f64 / notebooks as f64;
    let mut ss = 0.0;
    for (_, nb) in dataset.notebooks() {
        let d = nb.voters as f64 - mean;
        ss += d * d;
    }
    let sd = if notebooks > 1 {
        (ss / (notebooks as f64 - 1.0)).sqrt()
    } else {
        0.0
    };

    let mut histogram: BTreeMap<usize, usize> = BTreeMap::new();
    for center in &dataset.centers {
        *histogram.entry(center.notebooks.len()).or_insert(0) += 1;
    }

    Ok(DatasetSummary {
        centers: dataset.center_count(),
        notebooks,
        voters,
        yes,
        no,
        out,
        yes_share: if valid > 0 { yes as f64 / valid as f64 } else { 0.0 },
        no_share: if valid > 0 { no as f64 / valid as f64 } else { 0.0 },
        out_share: if voters > 0 { out as f64 / voters as f64 } else { 0.0 },
        mean_notebook_voters: mean,
        sd_notebook_voters: sd,
        notebooks_per_center: histogram.into_iter().collect(),
    })
}
