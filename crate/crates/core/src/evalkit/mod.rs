//! Algorithmic communication-quality metrics.

pub mod affect;
pub mod profile;
pub mod readability;

use thiserror::Error;

pub use affect::{
    classify_affect, AffectClassifier, AffectLabel, Emotion, LexiconClassifier, Politeness, RemoteAffectClassifier,
    Sentiment,
};
pub use profile::{profile_corpus, profile_transcript, CommunicationProfile, ProfileRole};
pub use readability::{count_syllables, flesch_reading_ease, ReadabilityResult};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("text contains no words")]
    EmptyText,
    #[error("{file} lexicon line {line}: {message}")]
    Lexicon { file: String, line: usize, message: String },
    #[error("remote {task} classifier: {message}")]
    Remote { task: &'static str, message: String },
    #[error("transcript has no {0} turns")]
    RoleAbsent(&'static str),
}
