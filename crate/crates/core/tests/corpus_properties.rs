use std::collections::HashSet;

use proptest::prelude::*;

use kctag_core::corpus::{KnowledgeConcept, LabeledPair, Question};
use kctag_core::{corpus_stats, Corpus, Label};

fn text() -> impl Strategy<Value = String> {
    "\\PC{0,24}".prop_filter("non-blank", |s| !s.trim().is_empty())
}

prop_compose! {
    fn corpus()(
        names in prop::collection::vec(text(), 1..5),
        texts in prop::collection::vec(text(), 1..8),
        cells in prop::collection::vec(prop::option::of((any::<bool>(), prop::option::of(text()))), 40),
        duplicate_text in any::<bool>(),
    ) -> Corpus {
        let concepts: Vec<KnowledgeConcept> = names
            .iter()
            .enumerate()
            .map(|(i, n)| KnowledgeConcept {
                id: format!("c{i}"),
                name: n.clone(),
                definition: format!("definition {i}"),
                boundary: String::new(),
            })
            .collect();
        let mut questions: Vec<Question> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Question { id: format!("q{i}"), text: t.clone() })
            .collect();
        if duplicate_text && questions.len() > 1 {
            questions[1].text = questions[0].text.clone();
        }
        let mut pairs = Vec::new();
        for (ci, _) in concepts.iter().enumerate() {
            for (qi, _) in questions.iter().enumerate() {
                if let Some(Some((m, explanation))) = cells.get(ci * 8 + qi) {
                    pairs.push(LabeledPair {
                        concept_id: format!("c{ci}"),
                        question_id: format!("q{qi}"),
                        label: if *m { Label::Match } else { Label::Mismatch },
                        explanation: explanation.clone(),
                    });
                }
            }
        }
        Corpus::new(concepts, questions, pairs).expect("generated corpus is valid")
    }
}

proptest! {
    #[test]
    fn write_then_read_is_identity(c in corpus()) {
        let mut buf = Vec::new();
        c.write(&mut buf).unwrap();
        let back = Corpus::read(buf.as_slice()).unwrap();
        prop_assert_eq!(&back, &c);
        let mut again = Vec::new();
        back.write(&mut again).unwrap();
        prop_assert_eq!(again, buf);
    }

    #[test]
    fn stats_rows_sum_to_overall(c in corpus()) {
        let s = corpus_stats(&c);
        prop_assert_eq!(s.rows.len(), c.concepts().len());
        let (mut q, mut m, mut mm) = (0, 0, 0);
        for row in &s.rows {
            prop_assert_eq!(row.counts.matches + row.counts.mismatches, row.counts.questions);
            q += row.counts.questions;
            m += row.counts.matches;
            mm += row.counts.mismatches;
        }
        prop_assert_eq!((q, m, mm), (s.overall.questions, s.overall.matches, s.overall.mismatches));
        prop_assert_eq!(s.overall.questions, c.pairs().len());
    }

    #[test]
    fn pool_excludes_target_and_its_text(c in corpus(), pick in any::<prop::sample::Index>()) {
        prop_assume!(!c.pairs().is_empty());
        let i = pick.index(c.pairs().len());
        let target = c.entry(i);
        let id = target.pair.id();
        let pool = c.pool_for(Some(&id));
        let kept: HashSet<usize> = pool.entries().iter().map(|e| e.index).collect();
        for e in pool.entries() {
            prop_assert_ne!(e.pair.id(), id.clone());
            prop_assert_ne!(&e.question.text, &target.question.text);
        }
        // Everything else stays.
        for j in 0..c.pairs().len() {
            let e = c.entry(j);
            if j != i && e.question.text != target.question.text {
                prop_assert!(kept.contains(&j));
            }
        }
    }
}

#[test]
fn unfiltered_pool_is_the_whole_corpus() {
    let c = kctag_core::synthetic::synthetic_corpus();
    assert_eq!(c.pool_for(None).len(), c.pairs().len());
}

#[test]
fn dangling_and_duplicate_records_are_rejected() {
    let concept = || KnowledgeConcept {
        id: "c".into(),
        name: "n".into(),
        definition: String::new(),
        boundary: String::new(),
    };
    let question = || Question { id: "q".into(), text: "t".into() };
    let pair = |c: &str| LabeledPair {
        concept_id: c.into(),
        question_id: "q".into(),
        label: Label::Match,
        explanation: None,
    };
    assert!(Corpus::new(vec![concept()], vec![question()], vec![pair("x")]).is_err());
    assert!(Corpus::new(vec![concept()], vec![question()], vec![pair("c"), pair("c")]).is_err());
    assert!(Corpus::new(vec![concept(), concept()], vec![question()], vec![]).is_err());
    let bad_label = "{\"kind\":\"pair\",\"concept_id\":\"c\",\"question_id\":\"q\",\"label\":2}";
    assert!(Corpus::read(bad_label.as_bytes()).is_err());
}
