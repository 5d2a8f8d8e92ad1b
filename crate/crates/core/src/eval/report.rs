//! Plain-text and CSV rendering of evaluation results.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::{Column, ConfusionMatrix2x2, Counts, IntervalMetrics, ManipulationMetrics};
use super::reference::{ReferenceCell, ReferenceTables};
use crate::episodes::ScenarioClass;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    #[default]
    Text,
    Csv,
}

/// One detector's results plus the reference label it is compared against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry<M> {
    pub label: String,
    pub reference: Option<String>,
    pub metrics: M,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Report {
    pub driving: Vec<Entry<IntervalMetrics>>,
    pub manipulation: Vec<Entry<ManipulationMetrics>>,
}

impl Report {
    pub fn is_empty(&self) -> bool {
        self.driving.is_empty() && self.manipulation.is_empty()
    }
}

const MANIP_VARIANTS: [ScenarioClass; 3] =
    [ScenarioClass::ManipBaseline, ScenarioClass::ManipNeutral, ScenarioClass::ManipSemantic];

#[derive(Clone, Copy)]
enum Metric {
    Anomalies,
    Observations,
    Unparseable,
    Skipped,
    Tpr,
    Fnr,
    Tnr,
    Fpr,
}

impl Metric {
    const ALL: [Metric; 8] = [
        Metric::Anomalies,
        Metric::Observations,
        Metric::Unparseable,
        Metric::Skipped,
        Metric::Tpr,
        Metric::Fnr,
        Metric::Tnr,
        Metric::Fpr,
    ];

    fn key(self) -> &'static str {
        match self {
            Metric::Anomalies => "anomalies",
            Metric::Observations => "observations",
            Metric::Unparseable => "unparseable",
            Metric::Skipped => "skipped_intervals",
            Metric::Tpr => "tpr",
            Metric::Fnr => "fnr",
            Metric::Tnr => "tnr",
            Metric::Fpr => "fpr",
        }
    }

    fn title(self) -> &'static str {
        match self {
            Metric::Anomalies => "Semantic Anomalies",
            Metric::Observations => "Nominal Observations",
            Metric::Unparseable => "Unparseable",
            Metric::Skipped => "Skipped Intervals",
            Metric::Tpr => "TPR",
            Metric::Fnr => "FNR",
            Metric::Tnr => "TNR",
            Metric::Fpr => "FPR",
        }
    }

    fn is_rate(self) -> bool {
        matches!(self, Metric::Tpr | Metric::Fnr | Metric::Tnr | Metric::Fpr)
    }

    fn value(self, c: &Counts) -> Option<f64> {
        match self {
            Metric::Anomalies => Some(c.anomalies() as f64),
            Metric::Observations => Some(c.observations() as f64),
            Metric::Unparseable => Some(c.unparseable() as f64),
            Metric::Skipped => Some(c.skipped_intervals as f64),
            Metric::Tpr => c.tpr(),
            Metric::Fnr => c.fnr(),
            Metric::Tnr => c.tnr(),
            Metric::Fpr => c.fpr(),
        }
    }

    fn reference(self, cell: &ReferenceCell) -> Option<f64> {
        match self {
            Metric::Anomalies => cell.anomalies.map(|v| v as f64),
            Metric::Observations => cell.observations.map(|v| v as f64),
            Metric::Unparseable | Metric::Skipped => None,
            Metric::Tpr => cell.tpr,
            Metric::Fnr => cell.fnr,
            Metric::Tnr => cell.tnr,
            Metric::Fpr => cell.fpr,
        }
    }
}

fn rate(v: Option<f64>) -> String {
    v.map_or_else(|| "N/A".to_string(), |v| format!("{v:.2}"))
}

fn count(v: Option<f64>) -> String {
    v.map_or_else(|| "N/A".to_string(), |v| format!("{}", v as u64))
}

fn cell_text(metric: Metric, v: Option<f64>) -> String {
    if metric.is_rate() {
        rate(v)
    } else {
        count(v)
    }
}

fn delta(v: Option<f64>, r: Option<f64>) -> Option<f64> {
    Some(v? - r?)
}

fn signed(v: Option<f64>) -> String {
    v.map_or_else(|| "N/A".to_string(), |v| format!("{:+.2}", if v.abs() < 0.005 { 0.0 } else { v }))
}

/// Left-aligned first column, right-aligned rest, `|` separators.
fn grid(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> =
        (0..cols).map(|i| rows.iter().filter_map(|r| r.get(i)).map(|s| s.chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for row in rows {
        let used = row.iter().rposition(|c| !c.is_empty()).map_or(0, |i| i + 1);
        let cells: Vec<String> = (0..used)
            .map(|i| {
                let s = row.get(i).map(String::as_str).unwrap_or("");
                if i == 0 {
                    format!("{s:<w$}", w = widths[i])
                } else {
                    format!("{s:>w$}", w = widths[i])
                }
            })
            .collect();
        out.push_str(cells.join(" | ").trim_end());
        out.push('\n');
    }
    out
}

fn driving_header() -> Vec<Vec<String>> {
    let mut groups = vec![String::new()];
    let mut titles = vec![String::new()];
    for c in Column::DRIVING {
        groups.push(
            match c {
                Column::Class(k) if k.is_nominal() => "Nominal",
                Column::NominalTotal => "Nominal",
                Column::Total => "",
                _ => "Anomalous",
            }
            .to_string(),
        );
        titles.push(c.title().to_string());
    }
    vec![groups, titles]
}

fn driving_table(
    entry: &Entry<IntervalMetrics>,
    reference: Option<&ReferenceTables>,
) -> String {
    let refd = reference.zip(entry.reference.as_ref()).and_then(|(r, l)| r.driving.get(l));
    let mut rows = driving_header();
    for metric in Metric::ALL {
        let values: Vec<Option<f64>> = Column::DRIVING.iter().map(|c| metric.value(&entry.metrics.column(*c))).collect();
        let mut row = vec![metric.title().to_string()];
        row.extend(values.iter().map(|v| cell_text(metric, *v)));
        rows.push(row);
        if let Some(refd) = refd {
            let refs: Vec<Option<f64>> =
                Column::DRIVING.iter().map(|c| refd.cell(*c).and_then(|cell| metric.reference(cell))).collect();
            if refs.iter().all(Option::is_none) {
                continue;
            }
            let mut r = vec![format!("  reference")];
            r.extend(refs.iter().map(|v| cell_text(metric, *v)));
            rows.push(r);
            if metric.is_rate() {
                let mut d = vec![format!("  delta")];
                d.extend(values.iter().zip(&refs).map(|(v, r)| signed(delta(*v, *r))));
                rows.push(d);
            }
        }
    }
    let mut out = format!("Driving: {}", entry.label);
    if let Some(l) = entry.reference.as_ref().filter(|_| refd.is_some()) {
        let _ = write!(out, " (reference: {l})");
    }
    out.push('\n');
    out.push_str(&grid(&rows));
    out
}

fn driving_side_by_side(entries: &[Entry<IntervalMetrics>]) -> String {
    let mut rows = driving_header();
    rows[0].insert(1, String::new());
    rows[1].insert(1, String::new());
    for entry in entries {
        for (i, metric) in [Metric::Tpr, Metric::Tnr].into_iter().enumerate() {
            let mut row = vec![if i == 0 { entry.label.clone() } else { String::new() }, metric.title().to_string()];
            row.extend(Column::DRIVING.iter().map(|c| rate(metric.value(&entry.metrics.column(*c)))));
            rows.push(row);
        }
    }
    format!("Driving comparison\n{}", grid(&rows))
}

fn manip_variants(report: &Report) -> Vec<ScenarioClass> {
    MANIP_VARIANTS
        .into_iter()
        .filter(|v| report.manipulation.iter().any(|e| e.metrics.rates.contains_key(v)))
        .collect()
}

fn detection_rate_table(report: &Report, reference: Option<&ReferenceTables>) -> String {
    let variants = manip_variants(report);
    let mut header = vec!["Task Variant".to_string()];
    for e in &report.manipulation {
        header.push(e.label.clone());
        if let Some(l) = e.reference.as_ref().filter(|l| reference.is_some_and(|r| r.manipulation.detection_rate.contains_key(*l))) {
            header.push(format!("{l} (reference)"));
        }
    }
    let mut rows = vec![header];
    for v in &variants {
        let mut row = vec![Column::Class(*v).title().to_string()];
        for e in &report.manipulation {
            row.push(rate(e.metrics.rates.get(v).map(|r| r.rate)));
            if let Some(refs) = e.reference.as_ref().and_then(|l| reference?.manipulation.detection_rate.get(l)) {
                row.push(rate(refs.get(v).copied()));
            }
        }
        rows.push(row);
    }
    format!("Anomaly detection rate\n{}", grid(&rows))
}

fn confusion_table(label: &str, confusion: &std::collections::BTreeMap<ScenarioClass, ConfusionMatrix2x2>) -> String {
    let mut rows = vec![vec![String::new(), String::new(), "Anomalies Detected".to_string(), "Anomalies Missed".to_string()]];
    for (variant, m) in confusion {
        rows.push(vec![
            Column::Class(*variant).title().to_string(),
            "Task Success".to_string(),
            m.detected_success.to_string(),
            m.missed_success.to_string(),
        ]);
        rows.push(vec![String::new(), "Task Failure".to_string(), m.detected_failure.to_string(), m.missed_failure.to_string()]);
    }
    format!("Fault confusion: {label}\n{}", grid(&rows))
}

fn render_text(report: &Report, reference: Option<&ReferenceTables>) -> String {
    let mut sections = Vec::new();
    for entry in &report.driving {
        sections.push(driving_table(entry, reference));
    }
    if report.driving.len() > 1 {
        sections.push(driving_side_by_side(&report.driving));
    }
    if !report.manipulation.is_empty() {
        sections.push(detection_rate_table(report, reference));
        for e in report.manipulation.iter().filter(|e| !e.metrics.confusion.is_empty()) {
            sections.push(confusion_table(&e.label, &e.metrics.confusion));
            if let Some(refs) = e.reference.as_ref().and_then(|l| reference?.manipulation.confusion.get(l)) {
                let shown = refs.iter().filter(|(v, _)| e.metrics.confusion.contains_key(v)).map(|(v, m)| (*v, *m)).collect();
                sections.push(confusion_table(&format!("{} (reference)", e.reference.as_deref().unwrap_or_default()), &shown));
            }
        }
    }
    if let Some(r) = reference.filter(|r| !r.perception_errors.is_empty() && !report.driving.is_empty()) {
        let mut rows = vec![vec!["Method".to_string(), "TPR".to_string(), "FPR".to_string()]];
        for (label, pair) in &r.perception_errors {
            rows.push(vec![label.clone(), rate(Some(pair.tpr)), rate(Some(pair.fpr))]);
        }
        sections.push(format!("Perception error detection (reference only)\n{}", grid(&rows)));
    }
    sections.join("\n")
}

fn csv_num(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.6}"))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn render_csv(report: &Report, reference: Option<&ReferenceTables>) -> String {
    let mut out = String::from("section,detector,column,metric,value,reference,delta\n");
    let mut line = |section: &str, detector: &str, column: &str, metric: &str, v: Option<f64>, r: Option<f64>| {
        let _ = writeln!(
            out,
            "{section},{},{column},{metric},{},{},{}",
            csv_field(detector),
            csv_num(v),
            csv_num(r),
            csv_num(delta(v, r))
        );
    };
    for entry in &report.driving {
        let refd = reference.zip(entry.reference.as_ref()).and_then(|(r, l)| r.driving.get(l));
        for column in Column::DRIVING {
            let counts = entry.metrics.column(column);
            let cell = refd.and_then(|d| d.cell(column));
            for metric in Metric::ALL {
                line("driving", &entry.label, column.key(), metric.key(), metric.value(&counts), cell.and_then(|c| metric.reference(c)));
            }
        }
    }
    for entry in &report.manipulation {
        let refs = reference.zip(entry.reference.as_ref());
        for (variant, r) in &entry.metrics.rates {
            let rr = refs.and_then(|(t, l)| t.manipulation.detection_rate.get(l)?.get(variant).copied());
            line("detection_rate", &entry.label, variant.as_str(), "rate", Some(r.rate), rr);
            line("detection_rate", &entry.label, variant.as_str(), "flagged", Some(r.flagged as f64), None);
            line("detection_rate", &entry.label, variant.as_str(), "episodes", Some(r.n as f64), None);
            line("detection_rate", &entry.label, variant.as_str(), "withheld", Some(r.withheld as f64), None);
        }
        for (variant, m) in &entry.metrics.confusion {
            let rm = refs.and_then(|(t, l)| t.manipulation.confusion.get(l)?.get(variant).copied());
            let cells = |m: &ConfusionMatrix2x2| [m.detected_success, m.missed_success, m.detected_failure, m.missed_failure];
            let names = ["detected_success", "missed_success", "detected_failure", "missed_failure"];
            for (i, name) in names.iter().enumerate() {
                line("confusion", &entry.label, variant.as_str(), name, Some(cells(m)[i] as f64), rm.map(|r| cells(&r)[i] as f64));
            }
        }
    }
    out
}

/// Render a report. Reference comparison appears only for entries whose
/// `reference` label exists in `reference`.
pub fn render_report(report: &Report, reference: Option<&ReferenceTables>, format: ReportFormat) -> String {
    match format {
        ReportFormat::Text => render_text(report, reference),
        ReportFormat::Csv => render_csv(report, reference),
    }
}
