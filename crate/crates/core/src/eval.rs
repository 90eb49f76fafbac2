//! Confusion counts, accuracy/precision/recall/F1 and per-concept reports.
//!
//! Unparseable verdicts score as negative but are tallied separately;
//! errored samples are never scored. The overall row pools the counts of
//! every concept (micro-average).

use std::collections::HashMap;
use std::fmt::Write as _;
use std::ops::AddAssign;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Label};
use crate::num::Scalar;
use crate::parse::Verdict;
use crate::pipeline::{RunConfig, RunRecord, SampleResult};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("no scored samples")]
    EmptyCounts,
    #[error("record refers to concept `{0}`, which the corpus does not define")]
    UnknownConcept(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn new(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        Self { tp, fp, tn, fn_ }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn record(&mut self, gold: Label, verdict: Verdict) {
        match (verdict.is_positive(), gold.is_match()) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.tn += o.tn;
        self.fn_ += o.fn_;
    }
}

pub fn confusion(outcomes: impl IntoIterator<Item = (Label, Verdict)>) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for (gold, verdict) in outcomes {
        c.record(gold, verdict);
    }
    c
}

/// Counts over the scored (non-errored) samples.
pub fn confusion_of(results: &[SampleResult]) -> ConfusionCounts {
    confusion(results.iter().filter_map(SampleResult::scored))
}

/// Which metrics had a zero denominator and were set to 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Degenerate {
    pub precision: bool,
    pub recall: bool,
    pub f1: bool,
}

impl Degenerate {
    pub fn any(&self) -> bool {
        self.precision || self.recall || self.f1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics<T> {
    pub accuracy: T,
    pub precision: T,
    pub recall: T,
    pub f1: T,
    pub degenerate: Degenerate,
}

impl<T: Scalar> Metrics<T> {
    pub fn to_f64(&self) -> Metrics<f64> {
        let f = |x: T| x.to_f64().unwrap_or(f64::NAN);
        Metrics {
            accuracy: f(self.accuracy),
            precision: f(self.precision),
            recall: f(self.recall),
            f1: f(self.f1),
            degenerate: self.degenerate,
        }
    }
}

fn ratio<T: Scalar>(num: usize, den: usize) -> (T, bool) {
    if den == 0 {
        (T::zero(), true)
    } else {
        (T::from_count(num) / T::from_count(den), false)
    }
}

pub fn metrics<T: Scalar>(c: &ConfusionCounts) -> Result<Metrics<T>, EvalError> {
    let total = c.total();
    if total == 0 {
        return Err(EvalError::EmptyCounts);
    }
    let (accuracy, _) = ratio::<T>(c.tp + c.tn, total);
    let (precision, p_deg) = ratio::<T>(c.tp, c.tp + c.fp);
    let (recall, r_deg) = ratio::<T>(c.tp, c.tp + c.fn_);
    let sum = precision + recall;
    let f1_deg = sum == T::zero();
    let f1 = if f1_deg { T::zero() } else { T::from_count(2) * precision * recall / sum };
    Ok(Metrics {
        accuracy,
        precision,
        recall,
        f1,
        degenerate: Degenerate { precision: p_deg, recall: r_deg, f1: f1_deg },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub concept_id: String,
    pub name: String,
    pub counts: ConfusionCounts,
    /// `None` when no sample of this concept was scored.
    pub metrics: Option<Metrics<f64>>,
    pub unparseable: usize,
    pub errored: usize,
}

impl ReportRow {
    fn new(concept_id: &str, name: &str) -> Self {
        Self {
            concept_id: concept_id.to_string(),
            name: name.to_string(),
            counts: ConfusionCounts::default(),
            metrics: None,
            unparseable: 0,
            errored: 0,
        }
    }

    fn add(&mut self, s: &SampleResult) {
        match s.scored() {
            Some((gold, verdict)) => {
                self.counts.record(gold, verdict);
                if verdict == Verdict::Unparseable {
                    self.unparseable += 1;
                }
            }
            None => self.errored += 1,
        }
    }

    fn finish(&mut self) {
        self.metrics = metrics::<f64>(&self.counts).ok();
    }

    pub fn questions(&self) -> usize {
        self.counts.total()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    /// Concepts present in the record, in corpus order.
    pub rows: Vec<ReportRow>,
    pub overall: ReportRow,
    pub complete: bool,
    pub config: RunConfig,
}

pub fn build_report(record: &RunRecord, corpus: &Corpus) -> Result<Report, EvalError> {
    report_rows(record, Some(corpus))
}

/// Report from the record alone: concepts are named by id and ordered by
/// first appearance.
pub fn build_record_report(record: &RunRecord) -> Report {
    report_rows(record, None).expect("no corpus lookup to fail")
}

fn report_rows(record: &RunRecord, corpus: Option<&Corpus>) -> Result<Report, EvalError> {
    let mut by_concept: HashMap<&str, ReportRow> = HashMap::new();
    let mut seen: Vec<&str> = Vec::new();
    let mut overall = ReportRow::new("overall", "Overall");
    for s in &record.samples {
        let id = s.pair.concept_id.as_str();
        let name = match corpus {
            Some(c) => c.concept(id).ok_or_else(|| EvalError::UnknownConcept(id.to_string()))?.name.as_str(),
            None => id,
        };
        by_concept
            .entry(id)
            .or_insert_with(|| {
                seen.push(id);
                ReportRow::new(id, name)
            })
            .add(s);
        overall.add(s);
    }
    let order: Vec<&str> = match corpus {
        Some(c) => c.concepts().iter().map(|c| c.id.as_str()).collect(),
        None => seen,
    };
    let mut rows: Vec<ReportRow> = order.iter().filter_map(|id| by_concept.remove(id)).collect();
    for r in &mut rows {
        r.finish();
    }
    overall.finish();
    Ok(Report { rows, overall, complete: record.complete, config: record.config.clone() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "markdown" | "md" | "markdown-table" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown report format `{other}` (expected markdown or csv)")),
        }
    }
}

/// Four decimals, ties to even, no leading zero: `0.90971` → `.9097`.
pub fn format_metric(x: f64) -> String {
    let s = format!("{x:.4}");
    if let Some(rest) = s.strip_prefix("0.") {
        format!(".{rest}")
    } else if let Some(rest) = s.strip_prefix("-0.") {
        if rest.bytes().all(|b| b == b'0') {
            format!(".{rest}")
        } else {
            format!("-.{rest}")
        }
    } else {
        s
    }
}

/// Like [`format_metric`] with an explicit sign.
pub fn format_delta(x: f64) -> String {
    let s = format_metric(x);
    if s.starts_with('-') || s.bytes().all(|b| b == b'.' || b == b'0') {
        s
    } else {
        format!("+{s}")
    }
}

fn cell(value: Option<f64>, degenerate: bool, mark: bool) -> String {
    match value {
        None => "-".to_string(),
        Some(v) if degenerate && mark => format!("{}*", format_metric(v)),
        Some(v) => format_metric(v),
    }
}

fn metric_cells(m: Option<&Metrics<f64>>, mark: bool) -> [String; 4] {
    let d = m.map(|m| m.degenerate).unwrap_or_default();
    [
        cell(m.map(|m| m.accuracy), false, mark),
        cell(m.map(|m| m.precision), d.precision, mark),
        cell(m.map(|m| m.recall), d.recall, mark),
        cell(m.map(|m| m.f1), d.f1, mark),
    ]
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn render_report(report: &Report, format: ReportFormat) -> String {
    let mut out = String::new();
    let all = report.rows.iter().chain(std::iter::once(&report.overall));
    match format {
        ReportFormat::Csv => {
            out.push_str("concept,questions,tp,fp,tn,fn,accuracy,precision,recall,f1,unparseable\n");
            for r in all {
                let [a, p, rc, f] = metric_cells(r.metrics.as_ref(), false);
                let c = r.counts;
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{a},{p},{rc},{f},{}",
                    csv_field(&r.concept_id),
                    r.questions(),
                    c.tp,
                    c.fp,
                    c.tn,
                    c.fn_,
                    r.unparseable
                );
            }
        }
        ReportFormat::Markdown => {
            out.push_str(
                "| Concept | Accuracy | Precision | Recall | F1 | Questions | Unparseable | Errored |\n",
            );
            out.push_str("|---|---|---|---|---|---|---|---|\n");
            let mut any_degenerate = false;
            for r in all {
                any_degenerate |= r.metrics.is_some_and(|m| m.degenerate.any());
                let [a, p, rc, f] = metric_cells(r.metrics.as_ref(), true);
                let name = if r.concept_id == "overall" && r.name == "Overall" {
                    "**Overall**".to_string()
                } else {
                    r.name.replace('|', "\\|")
                };
                let _ = writeln!(
                    out,
                    "| {name} | {a} | {p} | {rc} | {f} | {} | {} | {} |",
                    r.questions(),
                    r.unparseable,
                    r.errored
                );
            }
            if any_degenerate {
                out.push_str("\n\\* zero denominator, reported as 0\n");
            }
            if !report.complete {
                out.push_str("\nRun record is incomplete.\n");
            }
        }
    }
    out
}

/// Paired metrics for one concept across two runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub concept_id: String,
    pub name: String,
    pub a: Option<Metrics<f64>>,
    pub b: Option<Metrics<f64>>,
}

impl ComparisonRow {
    /// `b - a` for accuracy, precision, recall and F1.
    pub fn delta(&self) -> Option<[f64; 4]> {
        let (a, b) = (self.a?, self.b?);
        Some([b.accuracy - a.accuracy, b.precision - a.precision, b.recall - a.recall, b.f1 - a.f1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub overall: ComparisonRow,
}

/// Rows follow `a`'s order, then concepts present only in `b`.
pub fn compare(a: &Report, b: &Report) -> Comparison {
    let b_rows: HashMap<&str, &ReportRow> = b.rows.iter().map(|r| (r.concept_id.as_str(), r)).collect();
    let mut rows: Vec<ComparisonRow> = a
        .rows
        .iter()
        .map(|r| ComparisonRow {
            concept_id: r.concept_id.clone(),
            name: r.name.clone(),
            a: r.metrics,
            b: b_rows.get(r.concept_id.as_str()).and_then(|x| x.metrics),
        })
        .collect();
    for r in &b.rows {
        if !a.rows.iter().any(|x| x.concept_id == r.concept_id) {
            rows.push(ComparisonRow {
                concept_id: r.concept_id.clone(),
                name: r.name.clone(),
                a: None,
                b: r.metrics,
            });
        }
    }
    Comparison {
        rows,
        overall: ComparisonRow {
            concept_id: "overall".into(),
            name: "Overall".into(),
            a: a.overall.metrics,
            b: b.overall.metrics,
        },
    }
}

pub fn render_comparison(cmp: &Comparison, format: ReportFormat) -> String {
    const METRICS: [&str; 4] = ["accuracy", "precision", "recall", "f1"];
    let mut out = String::new();
    let all = cmp.rows.iter().chain(std::iter::once(&cmp.overall));
    let values = |m: Option<Metrics<f64>>| metric_cells(m.as_ref(), false);
    match format {
        ReportFormat::Csv => {
            out.push_str("concept");
            for side in ["a", "b", "delta"] {
                for m in METRICS {
                    let _ = write!(out, ",{m}_{side}");
                }
            }
            out.push('\n');
            for r in all {
                out.push_str(&csv_field(&r.concept_id));
                for v in values(r.a).iter().chain(values(r.b).iter()) {
                    let _ = write!(out, ",{v}");
                }
                match r.delta() {
                    Some(d) => d.iter().for_each(|x| {
                        let _ = write!(out, ",{}", format_delta(*x));
                    }),
                    None => out.push_str(",-,-,-,-"),
                }
                out.push('\n');
            }
        }
        ReportFormat::Markdown => {
            out.push_str("| Concept | Metric | A | B | Δ (B−A) |\n|---|---|---|---|---|\n");
            for r in all {
                let (a, b, d) = (values(r.a), values(r.b), r.delta());
                for (i, m) in METRICS.iter().enumerate() {
                    let delta = d.map_or("-".to_string(), |d| format_delta(d[i]));
                    let _ = writeln!(
                        out,
                        "| {} | {m} | {} | {} | {delta} |",
                        r.name.replace('|', "\\|"),
                        a[i],
                        b[i]
                    );
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;

    #[test]
    fn confusion_cases() {
        use Label::*;
        use Verdict::*;
        assert_eq!(confusion(vec![(Match, Positive); 4]), ConfusionCounts::new(4, 0, 0, 0));
        let c = confusion(vec![(Match, Unparseable), (Mismatch, Unparseable), (Match, Unparseable)]);
        assert_eq!((c.tp, c.fp), (0, 0));
        assert_eq!(c, ConfusionCounts::new(0, 0, 1, 2));
    }

    #[test]
    fn exact_metrics() {
        let m = metrics::<Ratio<i64>>(&ConfusionCounts::new(81, 107, 805, 4)).unwrap();
        assert_eq!(m.precision, Ratio::new(81, 188));
        assert_eq!(m.recall, Ratio::new(81, 85));
        assert_eq!(m.f1, Ratio::new(162, 273));
        assert!(!m.degenerate.any());
    }

    #[test]
    fn degenerate_counts() {
        let m = metrics::<f64>(&ConfusionCounts::new(0, 0, 5, 0)).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        assert_eq!(m.degenerate, Degenerate { precision: true, recall: true, f1: true });
        let m = metrics::<f64>(&ConfusionCounts::new(0, 3, 5, 2)).unwrap();
        assert_eq!(m.degenerate, Degenerate { precision: false, recall: false, f1: true });
        assert_eq!(metrics::<f64>(&ConfusionCounts::default()), Err(EvalError::EmptyCounts));
    }

    #[test]
    fn metric_formatting() {
        assert_eq!(format_metric(0.909729), ".9097");
        assert_eq!(format_metric(0.03125), ".0312");
        assert_eq!(format_metric(0.03135), ".0314");
        assert_eq!(format_metric(1.0), "1.0000");
        assert_eq!(format_metric(0.0), ".0000");
        assert_eq!(format_metric(-0.25), "-.2500");
        assert_eq!(format_metric(-0.00001), ".0000");
        assert_eq!(format_delta(0.1), "+.1000");
        assert_eq!(format_delta(-0.1), "-.1000");
        assert_eq!(format_delta(0.0), ".0000");
    }

    #[test]
    fn counts_serialize_with_fn_key() {
        let json = serde_json::to_string(&ConfusionCounts::new(1, 2, 3, 4)).unwrap();
        assert_eq!(json, r#"{"tp":1,"fp":2,"tn":3,"fn":4}"#);
    }
}
