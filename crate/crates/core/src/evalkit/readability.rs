//! Flesch Reading Ease with a rule-based syllable counter.

use serde::{Deserialize, Serialize};

use super::EvalError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadabilityResult {
    pub raw_score: f64,
    pub clamped_score: f64,
    pub words: usize,
    pub sentences: usize,
    pub syllables: usize,
}

fn is_vowel(c: u8) -> bool {
    matches!(c, b'a' | b'e' | b'i' | b'o' | b'u' | b'y')
}

/// Vowel pairs read as two syllables, unless the preceding letter makes them a glide.
fn splits_hiatus(w: &[u8], i: usize) -> bool {
    let prev = if i == 0 { None } else { Some(w[i - 1]) };
    match (w[i], w[i + 1]) {
        (b'i', b'a') => !matches!(prev, Some(b'c' | b't' | b's' | b'g')),
        (b'i', b'o') => !matches!(prev, Some(b'c' | b't' | b's' | b'g' | b'x')),
        (b'u', b'a') => !matches!(prev, Some(b'q' | b'g')),
        (b'e', b'a') => i + 2 == w.len(),
        (b'i', b'e') => w.get(i + 2) == Some(&b't'),
        (b'e', b'i') => i > 0 && w.get(i + 2) == Some(&b'n'),
        (b'e', b'o') => i > 0 && (i + 2 == w.len() || w[i + 2] == b'n'),
        (b'o', b'i') | (b'y', b'i') => w[i + 2..].starts_with(b"ng"),
        _ => false,
    }
}

/// Syllables in one word: vowel groups, less a silent final `e`, `-ed` or
/// `-es`, plus hiatus splits. Non-alphabetic characters are ignored; a word
/// with no letters yields 0.
pub fn count_syllables(word: &str) -> usize {
    let w: Vec<u8> = word
        .chars()
        .filter(|c| c.is_ascii_alphabetic())
        .map(|c| c.to_ascii_lowercase() as u8)
        .collect();
    if w.is_empty() {
        return 0;
    }
    let n = w.len();
    let mut count = 0usize;
    let mut i = 0;
    while i < n {
        if is_vowel(w[i]) && !(w[i] == b'y' && i == 0 && n > 1 && is_vowel(w[1])) {
            count += 1;
            let start = i;
            while i + 1 < n && is_vowel(w[i + 1]) {
                i += 1;
            }
            for j in start..i {
                if splits_hiatus(&w, j) {
                    count += 1;
                }
            }
        }
        i += 1;
    }

    let consonant = |k: usize| !is_vowel(w[k]);
    if n >= 2 && w[n - 1] == b'e' && consonant(n - 2) {
        let le = n >= 3 && w[n - 2] == b'l' && consonant(n - 3);
        if !le {
            count = count.saturating_sub(1);
        }
    } else if n >= 3 && w[n - 1] == b'd' && w[n - 2] == b'e' && consonant(n - 3) {
        if !matches!(w[n - 3], b't' | b'd') {
            count = count.saturating_sub(1);
        }
    } else if n >= 4 && w[n - 1] == b's' && w[n - 2] == b'e' && consonant(n - 3) {
        let sibilant = matches!(w[n - 3], b's' | b'x' | b'z' | b'c' | b'g')
            || (w[n - 3] == b'h' && matches!(w[n - 4], b'c' | b's'));
        if !sibilant {
            count = count.saturating_sub(1);
        }
    }
    for suffix in ["ely", "ement", "eful", "efully", "eness", "eless"] {
        if n > suffix.len() + 1 && w.ends_with(suffix.as_bytes()) && consonant(n - suffix.len() - 1) {
            count = count.saturating_sub(1);
            break;
        }
    }
    count.max(1)
}

fn alphabetic_token(token: &str) -> bool {
    token.chars().any(|c| c.is_ascii_alphabetic())
}

pub fn count_words(text: &str) -> usize {
    text.split_whitespace().filter(|t| alphabetic_token(t)).count()
}

/// Segments ending in `.`, `!`, `?` or end of text that hold at least one word.
pub fn count_sentences(text: &str) -> usize {
    text.split(['.', '!', '?'])
        .filter(|seg| seg.split_whitespace().any(alphabetic_token))
        .count()
}

pub fn flesch_reading_ease(text: &str) -> Result<ReadabilityResult, EvalError> {
    let tokens: Vec<&str> = text.split_whitespace().filter(|t| alphabetic_token(t)).collect();
    if tokens.is_empty() {
        return Err(EvalError::EmptyText);
    }
    let words = tokens.len();
    let syllables: usize = tokens.iter().map(|t| count_syllables(t)).sum();
    let sentences = count_sentences(text).max(1);
    let raw_score = 206.835 - 1.015 * (words as f64 / sentences as f64) - 84.6 * (syllables as f64 / words as f64);
    Ok(ReadabilityResult {
        raw_score,
        clamped_score: raw_score.clamp(0.0, 100.0),
        words,
        sentences,
        syllables,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_rules() {
        assert_eq!(count_syllables("cat"), 1);
        assert_eq!(count_syllables("table"), 2);
        assert_eq!(count_syllables("idea"), 3);
        assert_eq!(count_syllables("make"), 1);
        assert_eq!(count_syllables("the"), 1);
        assert_eq!(count_syllables("123"), 0);
        assert_eq!(count_syllables("He's"), 1);
    }

    #[test]
    fn cat_sentence() {
        let r = flesch_reading_ease("The cat sat on the mat.").unwrap();
        assert_eq!((r.words, r.sentences, r.syllables), (6, 1, 6));
        assert!((r.raw_score - 116.145).abs() < 1e-9);
        assert_eq!(r.clamped_score, 100.0);
    }

    #[test]
    fn empty_is_error() {
        assert!(flesch_reading_ease("").is_err());
        assert!(flesch_reading_ease("555-123 42 !").is_err());
    }

    #[test]
    fn sentence_counting() {
        assert_eq!(count_sentences("One. Two! Three? four"), 4);
        assert_eq!(count_sentences("Wait... what?!"), 2);
        assert_eq!(count_sentences("12. 14."), 0);
    }
}
