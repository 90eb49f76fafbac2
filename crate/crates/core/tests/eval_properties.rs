use num_rational::Rational64;
use proptest::prelude::*;

use kctag_core::eval::{build_record_report, confusion, format_metric, metrics, ConfusionCounts};
use kctag_core::{build_report, Corpus, Label, RunRecord, Verdict};

fn outcome() -> impl Strategy<Value = (Label, Verdict)> {
    (
        prop_oneof![Just(Label::Match), Just(Label::Mismatch)],
        prop_oneof![Just(Verdict::Positive), Just(Verdict::Negative), Just(Verdict::Unparseable)],
    )
}

proptest! {
    #[test]
    fn f1_identity(tp in 1usize..2000, fp in 0usize..2000, tn in 0usize..2000, fn_ in 0usize..2000) {
        let m = metrics::<Rational64>(&ConfusionCounts::new(tp, fp, tn, fn_)).unwrap();
        let two_tp = 2 * tp as i64;
        prop_assert_eq!(m.f1, Rational64::new(two_tp, two_tp + fp as i64 + fn_ as i64));
        prop_assert_eq!(m.f1, Rational64::from_integer(2) * m.precision * m.recall / (m.precision + m.recall));
        prop_assert!(!m.degenerate.any());
    }

    #[test]
    fn metrics_are_bounded(tp in 0usize..500, fp in 0usize..500, tn in 0usize..500, fn_ in 0usize..500) {
        let c = ConfusionCounts::new(tp, fp, tn, fn_);
        match metrics::<f64>(&c) {
            Err(_) => prop_assert_eq!(c.total(), 0),
            Ok(m) => {
                for v in [m.accuracy, m.precision, m.recall, m.f1] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
                prop_assert_eq!(m.degenerate.precision, tp + fp == 0);
                prop_assert_eq!(m.degenerate.recall, tp + fn_ == 0);
                prop_assert_eq!(m.degenerate.f1, tp == 0);
                let exact = metrics::<Rational64>(&c).unwrap().to_f64();
                prop_assert!((exact.f1 - m.f1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn confusion_is_additive(a in prop::collection::vec(outcome(), 0..100), b in prop::collection::vec(outcome(), 0..100)) {
        let mut sum = confusion(a.iter().copied());
        sum += confusion(b.iter().copied());
        prop_assert_eq!(sum, confusion(a.iter().chain(&b).copied()));
        prop_assert_eq!(sum.total(), a.len() + b.len());
    }

    #[test]
    fn formatted_metrics_round_half_even(n in 0u32..=10_000) {
        let x = n as f64 / 10_000.0;
        let s = format_metric(x);
        let expected = if n == 10_000 { "1.0000".to_string() } else { format!(".{n:04}") };
        prop_assert_eq!(s, expected);
    }
}

#[test]
fn overall_row_is_the_sum_of_concept_rows() {
    let dir = env!("CARGO_MANIFEST_DIR");
    let record = RunRecord::load(format!("{dir}/tests/fixtures/golden_run.jsonl")).unwrap();
    let corpus = Corpus::load(format!("{dir}/tests/fixtures/tagging_corpus.jsonl")).unwrap();
    for report in [build_report(&record, &corpus).unwrap(), build_record_report(&record)] {
        let mut sum = ConfusionCounts::default();
        for row in &report.rows {
            sum += row.counts;
        }
        assert_eq!(sum, report.overall.counts);
        assert_eq!(sum, record.counts);
    }
}
