use proptest::prelude::*;

use kctag_core::prompt::{build_few_shot, build_reflection, build_zero_shot, Demonstration};
use kctag_core::PromptVariant;

const BANNED: [&str; 2] = ["please double check", "are you sure"];

fn field() -> impl Strategy<Value = String> {
    "[A-Za-z0-9 ,.()=_+\\-]{1,40}".prop_filter("non-blank", |s| !s.trim().is_empty())
}

fn variant() -> impl Strategy<Value = PromptVariant> {
    prop_oneof![Just(PromptVariant::V1), Just(PromptVariant::V2)]
}

fn demos() -> impl Strategy<Value = Vec<Demonstration>> {
    prop::collection::vec(
        (field(), field(), any::<bool>(), prop::option::of(field())).prop_map(|(k, q, yes, why)| {
            let head = if yes { "Yes." } else { "No." };
            let judgment = match why {
                Some(w) => format!("{head} {w}"),
                None => head.to_string(),
            };
            Demonstration::new(k, q, judgment).unwrap()
        }),
        1..5,
    )
}

proptest! {
    #[test]
    fn builders_are_pure(v in variant(), k in field(), q in field(), d in demos(), prior in field()) {
        let a = build_zero_shot(v, &k, &q).unwrap();
        let b = build_zero_shot(v, &k, &q).unwrap();
        prop_assert_eq!(a.render_flat(), b.render_flat());
        prop_assert_eq!(a.fingerprint(), b.fingerprint());
        let fa = build_few_shot(v, &d, &k, &q).unwrap();
        let fb = build_few_shot(v, &d, &k, &q).unwrap();
        prop_assert_eq!(&fa, &fb);
        let ra = build_reflection(&fa, &format!("Yes. {prior}")).unwrap();
        let rb = build_reflection(&fb, &format!("Yes. {prior}")).unwrap();
        prop_assert_eq!(ra.fingerprint(), rb.fingerprint());
    }

    #[test]
    fn format_request_only_in_v2(k in field(), q in field(), d in demos()) {
        let needle = "start with 'Yes' or 'No'";
        prop_assert!(build_zero_shot(PromptVariant::V2, &k, &q).unwrap().render_flat().contains(needle));
        prop_assert!(!build_zero_shot(PromptVariant::V1, &k, &q).unwrap().render_flat().contains(needle));
        prop_assert!(build_few_shot(PromptVariant::V2, &d, &k, &q).unwrap().render_flat().contains(needle));
        prop_assert!(!build_few_shot(PromptVariant::V1, &d, &k, &q).unwrap().render_flat().contains(needle));
    }

    #[test]
    fn one_question_block_per_demonstration_plus_target(v in variant(), k in field(), q in field(), d in demos()) {
        let flat = build_few_shot(v, &d, &k, &q).unwrap().render_flat();
        prop_assert_eq!(flat.matches("Question:").count(), d.len() + 1);
        let tail = format!("Knowledge: {k}\nQuestion: {q}\nJudgement:");
        prop_assert!(flat.ends_with(&tail));
    }

    #[test]
    fn no_leading_confirmation_phrases(v in variant(), k in field(), q in field(), d in demos(), prior in field()) {
        let first = build_few_shot(v, &d, &k, &q).unwrap();
        let outputs = [
            build_zero_shot(v, &k, &q).unwrap().render_flat(),
            first.render_flat(),
            build_reflection(&first, &format!("No, {prior}")).unwrap().render_flat(),
        ];
        for out in outputs {
            let lower = out.to_lowercase();
            for banned in BANNED {
                prop_assert!(!lower.contains(banned));
            }
        }
    }

    #[test]
    fn reflection_extends_the_first_prompt(v in variant(), k in field(), q in field(), prior in field()) {
        let first = build_zero_shot(v, &k, &q).unwrap();
        let reply = format!("Yes, {prior}");
        let r = build_reflection(&first, &reply).unwrap();
        prop_assert_eq!(&r.messages()[..first.messages().len()], first.messages());
        prop_assert_eq!(r.messages().len(), first.messages().len() + 2);
        let flat = r.render_flat();
        let head = format!("{} {reply}\n", first.render_flat());
        prop_assert!(flat.starts_with(&head));
        prop_assert!(flat.ends_with("\nConfirmation:"));
        prop_assert_ne!(r.fingerprint(), first.fingerprint());
    }
}

#[test]
fn empty_inputs_are_rejected() {
    assert!(build_zero_shot(PromptVariant::V2, " ", "q").is_err());
    assert!(build_zero_shot(PromptVariant::V2, "k", "").is_err());
    assert!(build_few_shot(PromptVariant::V2, &[], "k", "q").is_err());
    assert!(Demonstration::new("k", "q", "Maybe.").is_err());
}
