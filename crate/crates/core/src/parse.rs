//! Turning free-form replies into verdicts.
//!
//! Judgments go through a short cascade, all case-insensitive, applied after
//! stripping outer whitespace and leading markdown or quote characters:
//!
//! 1. a reply starting with `yes` is [`Verdict::Positive`];
//! 2. a reply starting with `no` is [`Verdict::Negative`];
//! 3. otherwise the first standalone word `yes` or `no` decides;
//! 4. otherwise the reply is [`Verdict::Unparseable`].
//!
//! The parser reports what the model said, not whether it was right.

use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Positive,
    Negative,
    Unparseable,
}

impl Verdict {
    pub fn is_positive(self) -> bool {
        self == Verdict::Positive
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Positive => "positive",
            Verdict::Negative => "negative",
            Verdict::Unparseable => "unparseable",
        })
    }
}

/// Which cascade step produced a verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchedRule {
    LeadingYes,
    LeadingNo,
    WordYes,
    WordNo,
}

impl MatchedRule {
    pub fn as_str(self) -> &'static str {
        match self {
            MatchedRule::LeadingYes => "leading-yes",
            MatchedRule::LeadingNo => "leading-no",
            MatchedRule::WordYes => "word-yes",
            MatchedRule::WordNo => "word-no",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub verdict: Verdict,
    pub reason: String,
    pub raw: String,
    pub matched_rule: Option<MatchedRule>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfirmationOutcome {
    Confirmed,
    Overturned,
    Ambiguous,
}

impl fmt::Display for ConfirmationOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConfirmationOutcome::Confirmed => "confirmed",
            ConfirmationOutcome::Overturned => "overturned",
            ConfirmationOutcome::Ambiguous => "ambiguous",
        })
    }
}

static WORD: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\b(yes|no)\b").unwrap());
static SENTENCE_END: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[.!?。](\s|$)").unwrap());
static OVERTURN: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)\b(answer|response|judge?ment)\s+(is|was)\s+(wrong|incorrect|not\s+correct|not\s+right)\b",
    )
    .unwrap()
});
static CONFIRM: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)\b(answer|response|judge?ment)\s+(is|was)\s+(correct|right)\b").unwrap()
});
static NEGATOR: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(not|no|never|neither|nor|cannot)\b|n't\b").unwrap());

fn is_decoration(c: char) -> bool {
    c.is_whitespace() || matches!(c, '*' | '_' | '#' | '>' | '`' | '"' | '\'' | '“' | '”' | '‘' | '’' | '-')
}

/// Strips outer whitespace and leading markdown/quote decoration.
fn strip(raw: &str) -> &str {
    raw.trim_start_matches(is_decoration).trim_end()
}

fn starts_with_word(s: &str, word: &str) -> bool {
    s.get(..word.len()).is_some_and(|p| p.eq_ignore_ascii_case(word))
}

/// Text after the first sentence end following `from`, else everything after `from`.
fn reason_after(text: &str, from: usize) -> String {
    let rest = &text[from..];
    if let Some(m) = SENTENCE_END.find(rest) {
        let after = rest[m.end()..].trim();
        if !after.is_empty() {
            return after.to_string();
        }
    }
    rest.trim_start_matches(|c: char| c.is_whitespace() || matches!(c, ',' | '.' | ':' | ';' | '!' | '-'))
        .trim()
        .to_string()
}

pub fn parse_judgment(raw: &str) -> Judgment {
    let text = strip(raw);
    let (verdict, rule, end) = if starts_with_word(text, "yes") {
        (Verdict::Positive, Some(MatchedRule::LeadingYes), 3)
    } else if starts_with_word(text, "no") {
        (Verdict::Negative, Some(MatchedRule::LeadingNo), 2)
    } else if let Some(m) = WORD.find(text) {
        if m.as_str().eq_ignore_ascii_case("yes") {
            (Verdict::Positive, Some(MatchedRule::WordYes), m.end())
        } else {
            (Verdict::Negative, Some(MatchedRule::WordNo), m.end())
        }
    } else {
        (Verdict::Unparseable, None, 0)
    };
    let reason = if rule.is_some() { reason_after(text, end) } else { String::new() };
    Judgment { verdict, reason, raw: raw.to_string(), matched_rule: rule }
}

fn confirms_without_negation(text: &str) -> bool {
    CONFIRM.find_iter(text).any(|m| {
        let before = &text[..m.start()];
        let sentence_start = SENTENCE_END.find_iter(before).last().map_or(0, |e| e.end());
        !NEGATOR.is_match(&before[sentence_start..])
    })
}

pub fn parse_confirmation(raw: &str) -> ConfirmationOutcome {
    let text = strip(raw);
    if starts_with_word(text, "no") || OVERTURN.is_match(text) {
        ConfirmationOutcome::Overturned
    } else if starts_with_word(text, "yes") || confirms_without_negation(text) {
        ConfirmationOutcome::Confirmed
    } else {
        ConfirmationOutcome::Ambiguous
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leading_tokens() {
        let j = parse_judgment(
            "Yes, the knowledge matches the question. The question is asking for the number of tens and ones.",
        );
        assert_eq!(j.verdict, Verdict::Positive);
        assert_eq!(j.matched_rule, Some(MatchedRule::LeadingYes));
        assert_eq!(j.reason, "The question is asking for the number of tens and ones.");

        let j = parse_judgment("No, the knowledge provided does not match the question.");
        assert_eq!(j.verdict, Verdict::Negative);
        assert_eq!(j.reason, "the knowledge provided does not match the question.");
    }

    #[test]
    fn decoration_and_case() {
        assert_eq!(parse_judgment("  **YES** it does").verdict, Verdict::Positive);
        assert_eq!(parse_judgment("> \"no.\"").verdict, Verdict::Negative);
        assert_eq!(parse_judgment("`Yes`").matched_rule, Some(MatchedRule::LeadingYes));
    }

    #[test]
    fn word_fallback() {
        let j = parse_judgment("After review: no. It is about ratios.");
        assert_eq!(j.verdict, Verdict::Negative);
        assert_eq!(j.matched_rule, Some(MatchedRule::WordNo));
        assert_eq!(j.reason, "It is about ratios.");
        assert_eq!(parse_judgment("The answer is Yes").verdict, Verdict::Positive);
        // Words merely containing the tokens do not count.
        assert_eq!(parse_judgment("The knowledge says nothing yesterday").verdict, Verdict::Unparseable);
    }

    #[test]
    fn unparseable() {
        let j = parse_judgment("It depends on interpretation.");
        assert_eq!(j.verdict, Verdict::Unparseable);
        assert_eq!(j.matched_rule, None);
        assert_eq!(parse_judgment("").verdict, Verdict::Unparseable);
        assert_eq!(parse_judgment("***").verdict, Verdict::Unparseable);
    }

    #[test]
    fn decimals_do_not_end_sentences() {
        let j = parse_judgment("Yes, 1.32m thick. Because.");
        assert_eq!(j.reason, "Because.");
    }

    #[test]
    fn short_reply_keeps_remainder() {
        assert_eq!(parse_judgment("Yes.").reason, "");
        assert_eq!(parse_judgment("No, it covers ratios.").reason, "it covers ratios.");
    }

    #[test]
    fn confirmations() {
        use ConfirmationOutcome::*;
        assert_eq!(
            parse_confirmation("No, the prior answer is incorrect. The numbers in the question are larger."),
            Overturned
        );
        assert_eq!(
            parse_confirmation("The prior answer is wrong. The knowledge does not match."),
            Overturned
        );
        assert_eq!(parse_confirmation("The prior response is not correct."), Overturned);
        assert_eq!(parse_confirmation("The prior answer is correct."), Confirmed);
        assert_eq!(parse_confirmation("Yes, it matches."), Confirmed);
        assert_eq!(parse_confirmation("I do not think the prior answer is correct."), Ambiguous);
        assert_eq!(parse_confirmation("It is hard to say. The answer is correct."), Confirmed);
        assert_eq!(parse_confirmation(""), Ambiguous);
        assert_eq!(parse_confirmation("Perhaps."), Ambiguous);
    }

    #[test]
    fn serde_names() {
        assert_eq!(serde_json::to_string(&MatchedRule::WordYes).unwrap(), "\"word-yes\"");
        assert_eq!(serde_json::to_string(&Verdict::Unparseable).unwrap(), "\"unparseable\"");
        assert_eq!(serde_json::to_string(&ConfirmationOutcome::Overturned).unwrap(), "\"overturned\"");
    }
}
