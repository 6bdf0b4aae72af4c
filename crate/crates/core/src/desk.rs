//! Seeded generator for the bundled synthetic sentiment corpus.
//!
//! Each review is one to three short clauses built from fixed frames. Clause
//! sentiment comes from a keyword slot; a review's label is the sentiment
//! held by the majority of its clauses, so reviews with an opposite-sentiment
//! clause are still unambiguous. Fillers and a long tail of rare words pad the
//! text.

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::data::{Corpus, Example};
use crate::error::Result;
use crate::rng::seeded;

pub const CLASS_NAMES: [&str; 2] = ["negative", "positive"];

const POSITIVE: [&str; 20] = [
    "good", "great", "excellent", "wonderful", "amazing", "superb", "delightful", "brilliant", "enjoyable", "fantastic",
    "charming", "moving", "fun", "beautiful", "gripping", "stunning", "witty", "touching", "memorable", "solid",
];

const NEGATIVE: [&str; 20] = [
    "bad", "awful", "terrible", "boring", "dull", "poor", "horrible", "mediocre", "disappointing", "tedious", "bland",
    "clumsy", "weak", "messy", "predictable", "annoying", "forgettable", "lifeless", "painful", "sloppy",
];

const NOUNS: [&str; 16] = [
    "movie", "film", "plot", "story", "cast", "script", "ending", "soundtrack", "dialogue", "pacing", "acting",
    "direction", "sequel", "premise", "finale", "camera",
];

const ADVERBS: [&str; 10] = [
    "really", "quite", "very", "somewhat", "honestly", "mostly", "truly", "rather", "pretty", "frankly",
];

const FILLERS: [&str; 24] = [
    "i", "we", "watched", "saw", "it", "last", "night", "with", "my", "friends", "at", "the", "theater", "on", "a",
    "weekend", "after", "work", "and", "then", "overall", "also", "just", "so",
];

const SYLLABLES: [&str; 16] = [
    "ka", "ro", "mi", "tesh", "vo", "lun", "dra", "pe", "zor", "qui", "bel", "nax", "fi", "gul", "tor", "ya",
];

/// Shape of a generated corpus.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeskSpec {
    pub n_examples: usize,
    /// Longest review in tokens.
    pub max_len: usize,
    /// Chance that a multi-clause review carries one opposite-sentiment clause.
    pub distractor_rate: f64,
    /// Number of distinct rare words.
    pub rare_words: usize,
    pub seed: u64,
}

impl Default for DeskSpec {
    fn default() -> Self {
        DeskSpec {
            n_examples: 2000,
            max_len: 16,
            distractor_rate: 0.3,
            rare_words: 256,
            seed: 2019,
        }
    }
}

fn rare_word(k: usize) -> String {
    let n = SYLLABLES.len();
    format!("{}{}{}", SYLLABLES[k % n], SYLLABLES[(k / n) % n], SYLLABLES[(k / (n * n) + k) % n])
}

fn clause(positive: bool, rng: &mut impl Rng) -> Vec<String> {
    let adj = if positive { &POSITIVE } else { &NEGATIVE };
    let adj = adj.choose(rng).unwrap().to_string();
    let noun = NOUNS.choose(rng).unwrap().to_string();
    let adv = ADVERBS.choose(rng).unwrap().to_string();
    match rng.random_range(0..4) {
        0 => vec!["the".into(), noun, "was".into(), adv, adj],
        1 => vec!["a".into(), adj, noun],
        2 => vec![adj.clone(), "and".into(), adv, adj],
        _ => vec!["the".into(), noun, "felt".into(), adj],
    }
}

/// Generates a balanced-in-expectation two-class corpus. Deterministic in `spec`.
pub fn generate(spec: &DeskSpec) -> Result<Corpus> {
    let mut rng = seeded(spec.seed);
    let rare: Vec<String> = (0..spec.rare_words.max(1)).map(rare_word).collect();
    let mut examples = Vec::with_capacity(spec.n_examples);
    for _ in 0..spec.n_examples {
        let label = rng.random_range(0..2usize);
        let positive = label == 1;
        let n_main = rng.random_range(1..=2usize);
        let distractor = n_main == 2 && rng.random_bool(spec.distractor_rate);

        let mut clauses: Vec<Vec<String>> = (0..n_main).map(|_| clause(positive, &mut rng)).collect();
        if distractor {
            let at = rng.random_range(0..=clauses.len());
            clauses.insert(at, clause(!positive, &mut rng));
        }
        let mut words: Vec<String> = Vec::new();
        for c in clauses {
            if !words.is_empty() {
                words.push(if rng.random_bool(0.5) { "and".into() } else { "but".into() });
            }
            words.extend(c);
        }
        while words.len() < spec.max_len && rng.random_bool(0.6) {
            let w = if rng.random_bool(0.25) {
                rare.choose(&mut rng).unwrap().clone()
            } else {
                FILLERS.choose(&mut rng).unwrap().to_string()
            };
            let at = rng.random_range(0..=words.len());
            words.insert(at, w);
        }
        // Longest case is three 5-word clauses plus two joiners; trimming from
        // the front keeps the tail the model reads last.
        let start = words.len().saturating_sub(spec.max_len);
        examples.push(Example {
            label,
            text: words[start..].join(" "),
        });
    }
    Corpus::new(examples, CLASS_NAMES.iter().map(|s| s.to_string()).collect())
}
