//! Text conditioning: a deterministic hashed n-gram embedder, condition
//! dropout, and rule-based subject counting.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

pub const DEFAULT_TEXT_DIM: usize = 256;
pub const MAX_SUBJECT_COUNT: usize = 10;

/// The exact question put to an external language model when one is configured.
pub const SUBJECT_COUNT_INSTRUCTION: &str = "how many subjects appear in this description";

/// A text embedding; the all-zero vector encodes "no condition".
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbedding {
    vec: Vec<f32>,
}

impl TextEmbedding {
    pub fn null(dim: usize) -> Self {
        Self { vec: vec![0.0; dim] }
    }

    pub fn from_vec(vec: Vec<f32>) -> Self {
        Self { vec }
    }

    pub fn is_null(&self) -> bool {
        self.vec.iter().all(|&x| x == 0.0)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.vec
    }

    pub fn dim(&self) -> usize {
        self.vec.len()
    }

    pub fn cosine(&self, other: &Self) -> f64 {
        let dot: f64 = self.vec.iter().zip(&other.vec).map(|(a, b)| *a as f64 * *b as f64).sum();
        let na: f64 = self.vec.iter().map(|a| (*a as f64) * (*a as f64)).sum();
        let nb: f64 = other.vec.iter().map(|a| (*a as f64) * (*a as f64)).sum();
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        dot / libm::sqrt(na * nb)
    }
}

/// Anything that can turn a prompt into a fixed-width embedding.
pub trait TextEncoder {
    fn dim(&self) -> usize;
    fn embed(&self, prompt: &str) -> TextEmbedding;
}

/// Hashes lowercased word 1-, 2- and 3-grams into signed buckets and
/// L2-normalizes the counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashedNgramEncoder {
    pub dim: usize,
}

impl Default for HashedNgramEncoder {
    fn default() -> Self {
        Self { dim: DEFAULT_TEXT_DIM }
    }
}

fn fnv1a(parts: &[&str]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for (i, p) in parts.iter().enumerate() {
        if i > 0 {
            h ^= b' ' as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        for b in p.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

/// Lowercases, replaces punctuation with spaces and splits on whitespace.
pub fn tokenize(prompt: &str) -> Vec<String> {
    let cleaned: String = prompt
        .chars()
        .flat_map(char::to_lowercase)
        .map(|c| if c.is_alphanumeric() || c.is_whitespace() { c } else { ' ' })
        .collect();
    cleaned.split_whitespace().map(String::from).collect()
}

impl TextEncoder for HashedNgramEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, prompt: &str) -> TextEmbedding {
        let tokens = tokenize(prompt);
        let words: Vec<&str> = tokens.iter().map(String::as_str).collect();
        let mut acc = vec![0.0f64; self.dim];
        for n in 1..=3 {
            for gram in words.windows(n) {
                let h = fnv1a(gram);
                let bucket = (h % self.dim as u64) as usize;
                let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
                acc[bucket] += sign;
            }
        }
        let norm = libm::sqrt(acc.iter().map(|x| x * x).sum::<f64>());
        if norm == 0.0 {
            return TextEmbedding::null(self.dim);
        }
        TextEmbedding::from_vec(acc.iter().map(|x| (x / norm) as f32).collect())
    }
}

/// Replaces the embedding with the null condition with probability `p`.
pub fn drop_condition<R: Rng + ?Sized>(e: &TextEmbedding, p: f64, rng: &mut R) -> TextEmbedding {
    if rng.random::<f64>() < p {
        TextEmbedding::null(e.dim())
    } else {
        e.clone()
    }
}

const NUMBER_WORDS: [(&str, usize); 14] = [
    ("one", 1),
    ("two", 2),
    ("three", 3),
    ("four", 4),
    ("five", 5),
    ("six", 6),
    ("seven", 7),
    ("eight", 8),
    ("nine", 9),
    ("ten", 10),
    ("couple", 2),
    ("pair", 2),
    ("duo", 2),
    ("trio", 3),
];

const GROUP_WORDS: [&str; 6] = ["group", "crowd", "team", "troupe", "squad", "band"];

const PERSON_NOUNS: [&str; 40] = [
    "person", "people", "persons", "man", "men", "woman", "women", "friend", "friends", "dancer", "dancers",
    "kid", "kids", "child", "children", "player", "players", "boy", "boys", "girl", "girls", "adult",
    "adults", "guy", "guys", "athlete", "athletes", "student", "students", "soldier", "soldiers", "figure",
    "figures", "individual", "individuals", "human", "humans", "couples", "pairs", "subjects",
];

const PLURAL_PERSON_NOUNS: [&str; 19] = [
    "people", "persons", "men", "women", "friends", "dancers", "kids", "children", "players", "boys",
    "girls", "adults", "guys", "athletes", "students", "soldiers", "figures", "individuals", "humans",
];

fn number_value(token: &str) -> Option<usize> {
    if let Ok(n) = token.parse::<usize>() {
        return Some(n);
    }
    NUMBER_WORDS.iter().find(|(w, _)| *w == token).map(|(_, n)| *n)
}

/// Clamps an externally supplied count into `[1, 10]`.
pub fn clamp_subject_count(n: i64) -> usize {
    n.clamp(1, MAX_SUBJECT_COUNT as i64) as usize
}

/// Number of people a prompt describes.
///
/// Numbers attached to a person or group noun within the next two words
/// ("two people", "five dancing friends", "a couple of dancers") are summed;
/// otherwise group words mean 4, plural person nouns mean 2, and anything
/// else is a single person. The result is clamped to `[1, 10]`.
pub fn subject_count(prompt: &str) -> usize {
    let tokens = tokenize(prompt);
    let is_person = |t: &str| PERSON_NOUNS.contains(&t) || GROUP_WORDS.contains(&t);
    let mut total = 0usize;
    let mut i = 0;
    while i < tokens.len() {
        if let Some(n) = number_value(&tokens[i]) {
            // "a couple of dancers": the collective word itself is the count
            let collective = matches!(tokens[i].as_str(), "couple" | "pair" | "duo" | "trio");
            let attached = collective || tokens[i + 1..tokens.len().min(i + 3)].iter().any(|t| is_person(t));
            if attached {
                total += n;
                // skip the noun phrase so "two people" is not counted twice
                i += 1;
                continue;
            }
        }
        i += 1;
    }
    if total > 0 {
        return total.clamp(1, MAX_SUBJECT_COUNT);
    }
    if tokens.iter().any(|t| GROUP_WORDS.contains(&t.as_str())) {
        return 4;
    }
    if tokens.iter().any(|t| PLURAL_PERSON_NOUNS.contains(&t.as_str())) {
        return 2;
    }
    1
}
