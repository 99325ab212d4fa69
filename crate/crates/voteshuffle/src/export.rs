//! Deterministic CSV and JSON renderings of every result type.
//!
//! Audit artifacts get diffed, hashed, and archived, so identical inputs
//! must yield byte-identical files — across runs, thread counts, and
//! entry points. Everything here is therefore hand-rendered: floats are
//! always written as `{:.16e}` (round-trippable and locale-free), JSON
//! objects keep a fixed key order, and no map iteration order leaks into
//! the output. The command-line tool writes artifacts through these same
//! functions, so a library user can reproduce any file it emits.

use crate::corpus::{CleaningReport, DatasetSummary};
use crate::digit_forensics::{DigitFrequencies, ExactChi2Distribution, GofTest, TieReport};
use crate::ratio_chart::{PredictionInterval, ZetaSeries};
use crate::scores::{NullCalibration, PlotPoint, ScoreTable, TailTest};
use crate::synthetic::{InjectionEvent, SignerCount};

/// Render a float for an artifact: full-precision scientific notation.
///
/// Seventeen significant digits round-trip every finite `f64`, and the
/// fixed format keeps artifacts diffable.
pub fn fmt_float(value: f64) -> String {
    debug_assert!(value.is_finite(), "artifacts only carry finite numbers");
    format!("{value:.16e}")
}

/// Quote a CSV field when it contains a comma, quote, or line break.
pub fn csv_field(field: &str) -> String {
    if field.contains([',', '"', '\n', '\r']) {
        let mut out = String::with_capacity(field.len() + 2);
        out.push('"');
        for ch in field.chars() {
            if ch == '"' {
                out.push('"');
            }
            out.push(ch);
        }
        out.push('"');
        out
    } else {
        field.to_owned()
    }
}

/// A JSON document with insertion-ordered object keys.
///
/// The standard serializers order maps however the map iterates; this
/// small model makes key order an explicit property of the document, so
/// artifacts never reorder between releases.
#[derive(Clone, Debug, PartialEq)]
pub enum JsonValue {
    Null,
    Bool(bool),
    UInt(u64),
    Int(i64),
    Float(f64),
    Str(String),
    Array(Vec<JsonValue>),
    Object(Vec<(String, JsonValue)>),
}

impl JsonValue {
    pub fn object<K: Into<String>>(fields: impl IntoIterator<Item = (K, JsonValue)>) -> JsonValue {
        JsonValue::Object(fields.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }

    pub fn array(items: impl IntoIterator<Item = JsonValue>) -> JsonValue {
        JsonValue::Array(items.into_iter().collect())
    }

    /// Render with two-space indentation and a trailing newline.
    pub fn render(&self) -> String {
        let mut out = String::new();
        self.write_into(&mut out, 0);
        out.push('\n');
        out
    }

    fn write_into(&self, out: &mut String, indent: usize) {
        match self {
            JsonValue::Null => out.push_str("null"),
            JsonValue::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
            JsonValue::UInt(v) => out.push_str(&v.to_string()),
            JsonValue::Int(v) => out.push_str(&v.to_string()),
            JsonValue::Float(v) => out.push_str(&fmt_float(*v)),
            JsonValue::Str(s) => write_escaped(out, s),
            JsonValue::Array(items) => {
                if items.is_empty() {
                    out.push_str("[]");
                    return;
                }
                out.push_str("[\n");
                for (i, item) in items.iter().enumerate() {
                    push_indent(out, indent + 2);
                    item.write_into(out, indent + 2);
                    if i + 1 < items.len() {
                        out.push(',');
                    }
                    out.push('\n');
                }
                push_indent(out, indent);
                out.push(']');
            }
            JsonValue::Object(fields) => {
                if fields.is_empty() {
                    out.push_str("{}");
                    return;
                }
                out.push_str("{\n");
                for (i, (key, value)) in fields.iter().enumerate() {
                    push_indent(out, indent + 2);
                    write_escaped(out, key);
                    out.push_str(": ");
                    value.write_into(out, indent + 2);
                    if i + 1 < fields.len() {
                        out.push(',');
                    }
                    out.push('\n');
                }
                push_indent(out, indent);
                out.push('}');
            }
        }
    }
}

impl From<bool> for JsonValue {
    fn from(v: bool) -> JsonValue {
        JsonValue::Bool(v)
    }
}

impl From<u64> for JsonValue {
    fn from(v: u64) -> JsonValue {
        JsonValue::UInt(v)
    }
}

impl From<usize> for JsonValue {
    fn from(v: usize) -> JsonValue {
        JsonValue::UInt(v as u64)
    }
}

impl From<i64> for JsonValue {
    fn from(v: i64) -> JsonValue {
        JsonValue::Int(v)
    }
}

impl From<f64> for JsonValue {
    fn from(v: f64) -> JsonValue {
        JsonValue::Float(v)
    }
}

impl From<&str> for JsonValue {
    fn from(v: &str) -> JsonValue {
        JsonValue::Str(v.to_owned())
    }
}

impl From<String> for JsonValue {
    fn from(v: String) -> JsonValue {
        JsonValue::Str(v)
    }
}

fn push_indent(out: &mut String, indent: usize) {
    for _ in 0..indent {
        out.push(' ');
    }
}

fn write_escaped(out: &mut String, s: &str) {
    out.push('"');
    for ch in s.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => {
                out.push_str(&format!("\\u{:04x}", c as u32));
            }
            c => out.push(c),
        }
    }
    out.push('"');
}

fn float_or_null(value: Option<f64>) -> JsonValue {
    value.map(JsonValue::Float).unwrap_or(JsonValue::Null)
}

/// What the cleaning pass kept and why it dropped the rest.
pub fn cleaning_report_json(report: &CleaningReport) -> String {
    JsonValue::object([
        ("input_centers", JsonValue::from(report.input_centers)),
        ("input_notebooks", JsonValue::from(report.input_notebooks)),
        ("dropped_kind_centers", JsonValue::from(report.dropped_kind_centers)),
        ("dropped_kind_notebooks", JsonValue::from(report.dropped_kind_notebooks)),
        ("dropped_overflow_centers", JsonValue::from(report.dropped_overflow_centers)),
        ("dropped_overflow_notebooks", JsonValue::from(report.dropped_overflow_notebooks)),
        ("dropped_empty_centers", JsonValue::from(report.dropped_empty_centers)),
        ("dropped_empty_notebooks", JsonValue::from(report.dropped_empty_notebooks)),
        ("dropped_small_centers", JsonValue::from(report.dropped_small_centers)),
        ("dropped_small_notebooks", JsonValue::from(report.dropped_small_notebooks)),
        ("retained_centers", JsonValue::from(report.retained_centers)),
        ("retained_notebooks", JsonValue::from(report.retained_notebooks)),
    ])
    .render()
}

/// Dataset totals, shares, and the center-size histogram.
pub fn summary_json(label: &str, summary: &DatasetSummary) -> String {
    let histogram = JsonValue::array(summary.notebooks_per_center.iter().map(
        |&(notebooks, centers)| {
            JsonValue::object([
                ("notebooks", JsonValue::from(notebooks)),
                ("centers", JsonValue::from(centers)),
            ])
        },
    ));
    JsonValue::object([
        ("label", JsonValue::from(label)),
        ("centers", JsonValue::from(summary.centers)),
        ("notebooks", JsonValue::from(summary.notebooks)),
        ("voters", JsonValue::from(summary.voters)),
        ("yes", JsonValue::from(summary.yes)),
        ("no", JsonValue::from(summary.no)),
        ("out", JsonValue::from(summary.out)),
        ("yes_share", JsonValue::from(summary.yes_share)),
        ("no_share", JsonValue::from(summary.no_share)),
        ("out_share", JsonValue::from(summary.out_share)),
        ("mean_notebook_voters", JsonValue::from(summary.mean_notebook_voters)),
        ("sd_notebook_voters", JsonValue::from(summary.sd_notebook_voters)),
        ("notebooks_per_center", histogram),
    ])
    .render()
}

/// Per-notebook scores; degenerate cells are left empty.
pub fn score_table_csv(table: &ScoreTable) -> String {
    let mut out = String::from("center_id,notebook_id,z_yes,z_no,z_out\n");
    for row in &table.rows {
        out.push_str(&csv_field(&row.center_id));
        out.push(',');
        out.push_str(&csv_field(&row.notebook_id));
        for z in [row.z_yes, row.z_no, row.z_out] {
            out.push(',');
            if let Some(z) = z {
                out.push_str(&fmt_float(z));
            }
        }
        out.push('\n');
    }
    out
}

/// Quantile-quantile pairs for a normality plot.
pub fn plot_csv(points: &[PlotPoint]) -> String {
    let mut out = String::from("theoretical,observed\n");
    for point in points {
        out.push_str(&fmt_float(point.theoretical));
        out.push(',');
        out.push_str(&fmt_float(point.observed));
        out.push('\n');
    }
    out
}

/// The global test: observed statistic against its null calibration.
pub fn calibration_json(observed: f64, calibration: &NullCalibration, test: &TailTest) -> String {
    JsonValue::object([
        ("option", JsonValue::from(calibration.option.label())),
        ("replicates", JsonValue::from(calibration.replicates)),
        ("observed_s_squared", JsonValue::from(observed)),
        ("null_mean", JsonValue::from(calibration.mean)),
        ("null_sd", JsonValue::from(calibration.sd)),
        ("t", JsonValue::from(test.t)),
        ("p_value", JsonValue::from(test.p_value)),
        (
            "values",
            JsonValue::array(calibration.values.iter().copied().map(JsonValue::from)),
        ),
    ])
    .render()
}

/// The ζ chart as one row per sample depth.
pub fn zeta_csv(series: &ZetaSeries) -> String {
    let mut out = String::from("k,ratio,variance,zeta\n");
    for point in &series.points {
        out.push_str(&point.k.to_string());
        out.push(',');
        out.push_str(&fmt_float(point.ratio));
        out.push(',');
        out.push_str(&fmt_float(point.variance));
        out.push(',');
        out.push_str(&fmt_float(point.zeta));
        out.push('\n');
    }
    out
}

/// The reflected prediction interval for the uncontaminated share.
pub fn interval_json(interval: &PredictionInterval) -> String {
    JsonValue::object([
        ("option", JsonValue::from(interval.option.label())),
        ("population_ratio", JsonValue::from(interval.population_ratio)),
        ("low", JsonValue::from(interval.low)),
        ("high", JsonValue::from(interval.high)),
        ("k_min", JsonValue::from(interval.k_min)),
        ("k_max", JsonValue::from(interval.k_max)),
    ])
    .render()
}

/// Second-digit frequencies next to the law they are tested against.
pub fn benford_csv(frequencies: &DigitFrequencies) -> String {
    let law = crate::digit_forensics::second_digit_law();
    let n = frequencies.sample_size as f64;
    let mut out = String::from("digit,expected_probability,observed_frequency,count\n");
    for digit in 0..10usize {
        out.push_str(&digit.to_string());
        out.push(',');
        out.push_str(&fmt_float(law.probabilities[digit]));
        out.push(',');
        let observed = if n > 0.0 {
            frequencies.counts[digit] as f64 / n
        } else {
            0.0
        };
        out.push_str(&fmt_float(observed));
        out.push(',');
        out.push_str(&frequencies.counts[digit].to_string());
        out.push('\n');
    }
    out
}

/// The second-digit goodness-of-fit verdict.
pub fn benford_json(test: &GofTest, frequencies: &DigitFrequencies) -> String {
    JsonValue::object([
        ("statistic", JsonValue::from(test.statistic)),
        ("dof", JsonValue::from(test.dof)),
        ("p_value", JsonValue::from(test.p_value)),
        ("log10_p", JsonValue::from(test.log10_p)),
        ("sample_size", JsonValue::from(frequencies.sample_size)),
        ("skipped", JsonValue::from(frequencies.skipped)),
    ])
    .render()
}

/// The cluster homogeneity verdict, with the exact tail when enumerated.
pub fn cluster_json(test: &GofTest, exact: Option<&ExactChi2Distribution>) -> String {
    JsonValue::object([
        ("statistic", JsonValue::from(test.statistic)),
        ("dof", JsonValue::from(test.dof)),
        ("asymptotic_p", JsonValue::from(test.p_value)),
        ("log10_p", JsonValue::from(test.log10_p)),
        (
            "exact_p",
            float_or_null(exact.map(|dist| dist.upper_tail_p(test.statistic))),
        ),
        (
            "atoms",
            exact
                .map(|dist| JsonValue::from(dist.atoms.len()))
                .unwrap_or(JsonValue::Null),
        ),
    ])
    .render()
}

/// The atoms of an exact distribution, one per row.
pub fn atoms_csv(distribution: &ExactChi2Distribution) -> String {
    let mut out = String::from("value,probability\n");
    for &(value, probability) in &distribution.atoms {
        out.push_str(&fmt_float(value));
        out.push(',');
        out.push_str(&fmt_float(probability));
        out.push('\n');
    }
    out
}

/// The tie-count test verdict.
pub fn ties_json(report: &TieReport) -> String {
    JsonValue::object([
        ("observed", JsonValue::from(report.observed)),
        ("expected", JsonValue::from(report.expected)),
        ("sd", JsonValue::from(report.sd)),
        ("z", JsonValue::from(report.z)),
        ("replicates", JsonValue::from(report.replicates)),
        ("groups", JsonValue::from(report.groups)),
    ])
    .render()
}

/// The irregularity audit log, one attempted event per row.
pub fn injection_log_csv(log: &[InjectionEvent]) -> String {
    let mut out = String::from(
        "event,center_id,donor_id,recipient_id,fraction,moved_yes,moved_no,biased_toward,status\n",
    );
    for event in log {
        out.push_str(&event.event.to_string());
        out.push(',');
        out.push_str(&csv_field(&event.center_id));
        out.push(',');
        out.push_str(&csv_field(&event.donor_id));
        out.push(',');
        out.push_str(&csv_field(&event.recipient_id));
        out.push(',');
        out.push_str(&fmt_float(event.fraction));
        out.push(',');
        out.push_str(&event.moved_yes.to_string());
        out.push(',');
        out.push_str(&event.moved_no.to_string());
        out.push(',');
        if let Some(option) = event.biased_toward {
            out.push_str(option.label());
        }
        out.push(',');
        out.push_str(event.status.label());
        out.push('\n');
    }
    out
}

/// Simulated signature counts next to the YES totals they condition on.
pub fn signers_csv(counts: &[SignerCount]) -> String {
    let mut out = String::from("center_id,yes,signers\n");
    for count in counts {
        out.push_str(&csv_field(&count.center_id));
        out.push(',');
        out.push_str(&count.yes.to_string());
        out.push(',');
        out.push_str(&count.signers.to_string());
        out.push('\n');
    }
    out
}
