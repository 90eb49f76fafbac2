//! A deterministic stand-in for the twelve-concept elementary math dataset.
//!
//! Concept names and definitions are the reference ones; question texts are
//! templated, one distinct question per pair, with the reference per-concept
//! question/match/mismatch counts. Matching questions use the concept's own
//! template, mismatching ones borrow another concept's. Matches are spread
//! evenly through each concept's block of pairs.

use crate::corpus::{Corpus, KnowledgeConcept, Label, LabeledPair, Question};

pub struct ConceptSpec {
    pub id: &'static str,
    pub name: &'static str,
    pub definition: &'static str,
    pub boundary: &'static str,
    pub questions: usize,
    pub matches: usize,
}

pub const CONCEPTS: [ConceptSpec; 12] = [
    ConceptSpec {
        id: "composition-within-20",
        name: "The composition of numbers within 20",
        definition: "Directly give a two-digit number within 20 (including 20) and read out how many tens or ones it contains, or give several tens and several ones and fill in the corresponding two-digit number.",
        boundary: "There are no pictures to represent numbers, and numbers above 20 and above are not involved.",
        questions: 117,
        matches: 15,
    },
    ConceptSpec {
        id: "comparison-within-5",
        name: "Comparison of numbers within 5",
        definition: "Comparison between integer numbers within 5, which can be between two numbers or arranged in order of numerical value; the question stem needs to provide specific numbers or present numbers within a situational description; a comparison of numerical values is required.",
        boundary: "Does not include calculations.",
        questions: 116,
        matches: 13,
    },
    ConceptSpec {
        id: "reciprocal",
        name: "Reciprocal",
        definition: "Directly write the reciprocal of a fraction, an integer or a decimal. Otherwise, find the number whose product with a given number is 1.",
        boundary: "no letters involved.",
        questions: 109,
        matches: 26,
    },
    ConceptSpec {
        id: "use-of-reciprocals",
        name: "Use of reciprocals",
        definition: "Given two or three algebraic expressions (where the expressions are in the form of a number multiplied by a single letter) are equal, assuming the value is 1, use the method of finding a number's reciprocal to determine and compare the values of the letters; or if it is known that two algebraic expressions are equal and their value is 1, find the value of the letters and then substitute this value into another expression to calculate its value.",
        boundary: "The problem must include letters. The letter index can only be 1, and does not involve squares and other higher orders.",
        questions: 148,
        matches: 9,
    },
    ConceptSpec {
        id: "simplify-decimals",
        name: "Use the properties of decimals to simplify decimals",
        definition: "Utilize the properties of decimals (adding 0 to the end of a decimal or removing 0 does not change the value of the decimal) to simplify decimals. The requirement is to simplify to the simplest form, meaning there are no longer any zeros at the end of the decimal part.",
        boundary: "Without calculation.",
        questions: 71,
        matches: 13,
    },
    ConceptSpec {
        id: "rewrite-decimals",
        name: "Use the properties of decimals to rewrite decimals",
        definition: "Utilize the properties of decimals (adding 0 to the end or removing 0 from the end of a decimal does not change its value) to rewrite decimals as required. The requirement is to rewrite them as decimals with a specific number of decimal places (one, two, three, etc.) or as decimals in units of one-tenth, one-hundredth, or one-thousandth.",
        boundary: "Without calculation",
        questions: 113,
        matches: 19,
    },
    ConceptSpec {
        id: "decimal-point-movement",
        name: "The rules of decimal point movement-calculation",
        definition: "Obtain the calculation result based on the movement of the decimal point when a decimal is multiplied by 10, 100, 1000, or divided by 10, 100, or 1000; or, given the result of the decimal point movement, determine whether the decimal was multiplied or divided by a certain number (10, 100, or 1000); all calculations are done in one step.",
        boundary: "No two-step calculations or multiple moves",
        questions: 101,
        matches: 17,
    },
    ConceptSpec {
        id: "number-classification",
        name: "Understanding and Classification of Numbers",
        definition: "Understanding of numbers, including the definitions of integers, fractions, decimals, positive numbers, negative numbers, and natural numbers; needing to select numbers of a specified type from a set of numbers; determining whether a number falls within a defined range; judging the truth or falsehood of propositions related to the classification of numbers.",
        boundary: "Does not include number operations and irrational numbers;",
        questions: 95,
        matches: 30,
    },
    ConceptSpec {
        id: "whole-tens-word-problems",
        name: "Adding and subtracting whole tens - word problems",
        definition: "One-step application problems involving the addition of whole tens to whole tens or the subtraction of whole tens from whole tens; the calculation result is less than 100.",
        boundary: "There are no whole hundreds, only two-digit whole tens.",
        questions: 142,
        matches: 4,
    },
    ConceptSpec {
        id: "whole-tens-comparison",
        name: "Adding and subtracting integer tens - Comparison of formulas",
        definition: "Comparing the result of adding two whole tens with another number; or comparing the size of expressions involving the addition or subtraction of two whole tens; the calculation requires a one-step addition or subtraction of two whole tens; there needs to be a step for comparing sizes.",
        boundary: "There are no whole hundreds, only two-digit whole tens.",
        questions: 97,
        matches: 11,
    },
    ConceptSpec {
        id: "whole-tens-two-step",
        name: "Two-step operation of adding and subtracting integer tens",
        definition: "Calculate the result of adding and subtracting three whole tens; or first present the addition and subtraction of three single-digit numbers, then give the result of adding and subtracting the corresponding whole tens of these three single-digit numbers; the result needs to be within 100.",
        boundary: "There are no whole hundreds, only two-digit whole tens.",
        questions: 103,
        matches: 10,
    },
    ConceptSpec {
        id: "area-unit-conversion",
        name: "Area unit--unit conversion",
        definition: "Unit conversion between square meters, square decimeters, square centimeters, and square millimeters; conversions are made directly according to the conversion rate between area units, including conversions from larger units to smaller units and from smaller units to larger units.",
        boundary: "Does not include word problems; does not include square kilometers",
        questions: 147,
        matches: 19,
    },
];

/// Question stem in the style of concept `c`, varied by `n`.
fn template(c: usize, n: usize) -> String {
    let a = 1 + n % 4;
    let b = 1 + (n / 4) % 4;
    match c {
        0 => format!("There are ( ) tens and ( ) ones in {}.", 10 + n % 11),
        1 => format!("Fill in \">\", \"<\" or \"=\": {} ( ) {}", n % 6, (n / 6) % 6),
        2 => format!("The reciprocal of {} is ( ).", 2 + n % 17),
        3 => format!("Known: {a}x = {}y = 1, then x ( ) y.", a + b),
        4 => format!("Simplify {}.{}00 without changing its value.", n % 10, 1 + n % 9),
        5 => format!("Rewrite {}.{} as a decimal with three decimal places: ( ).", n % 10, 1 + n % 9),
        6 => format!("{}.{} × {} = ( )", n % 10, 1 + n % 9, [10, 100, 1000][n % 3]),
        7 => format!(
            "From {}, -{}, 0.{} and {}/7, the natural numbers are ( ).",
            n % 20,
            1 + n % 8,
            1 + n % 9,
            1 + n % 6
        ),
        8 => format!(
            "A shop sold {}0 apples in the morning and {}0 in the afternoon. How many apples were sold?",
            a + 2,
            b
        ),
        9 => format!("Fill in \">\", \"<\" or \"=\": {}0 + {}0 ( ) {}0", a, b, a + b + n % 3),
        10 => format!("{}0 + {}0 - {}0 = ( )", a + 3, b + 1, 1 + n % 3),
        _ => format!("{} square meters = ( ) square decimeters", 1 + n % 50),
    }
}

/// Pair `j` of a block with `matches` positives out of `total` is a match
/// when the running share of matches steps up at `j`.
fn is_match(j: usize, matches: usize, total: usize) -> bool {
    (j + 1) * matches / total > j * matches / total
}

pub fn synthetic_corpus() -> Corpus {
    let concepts: Vec<KnowledgeConcept> = CONCEPTS
        .iter()
        .map(|c| KnowledgeConcept {
            id: c.id.into(),
            name: c.name.into(),
            definition: c.definition.into(),
            boundary: c.boundary.into(),
        })
        .collect();
    let mut questions = Vec::new();
    let mut pairs = Vec::new();
    let mut n = 0;
    for (ci, c) in CONCEPTS.iter().enumerate() {
        let mut mismatch = 0;
        for j in 0..c.questions {
            n += 1;
            let matched = is_match(j, c.matches, c.questions);
            let style = if matched {
                ci
            } else {
                mismatch += 1;
                (ci + 1 + mismatch % 11) % 12
            };
            let id = format!("q{n:04}");
            questions.push(Question { id: id.clone(), text: format!("({n}) {}", template(style, n)) });
            pairs.push(LabeledPair {
                concept_id: c.id.into(),
                question_id: id,
                label: if matched { Label::Match } else { Label::Mismatch },
                explanation: None,
            });
        }
    }
    Corpus::new(concepts, questions, pairs).expect("synthetic corpus is valid")
}
