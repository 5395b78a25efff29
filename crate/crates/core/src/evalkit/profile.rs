//! Per-role label distributions and readability means.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::affect::{AffectClassifier, Emotion, Politeness, Sentiment};
use super::readability::flesch_reading_ease;
use super::EvalError;
use crate::transcript::{Speaker, Transcript};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileRole {
    Caller,
    Dispatcher,
}

impl ProfileRole {
    fn speaker(self) -> Speaker {
        match self {
            ProfileRole::Caller => Speaker::Caller,
            ProfileRole::Dispatcher => Speaker::Dispatcher,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            ProfileRole::Caller => "caller",
            ProfileRole::Dispatcher => "dispatcher",
        }
    }
}

/// Distributions list every label of the closed set, zeros included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunicationProfile {
    pub role: ProfileRole,
    pub sentiment_dist: BTreeMap<String, f64>,
    pub emotion_dist: BTreeMap<String, f64>,
    pub politeness_dist: BTreeMap<String, f64>,
    /// Mean clamped score over utterances that contain words.
    pub mean_flesch: f64,
    pub n_utterances: usize,
}

fn distribution<'a>(
    all: impl Iterator<Item = &'a str>,
    counts: &BTreeMap<&'a str, usize>,
    n: usize,
) -> BTreeMap<String, f64> {
    all.map(|l| (l.to_string(), counts.get(l).copied().unwrap_or(0) as f64 / n as f64))
        .collect()
}

fn profile_utterances<'a>(
    role: ProfileRole,
    utterances: impl Iterator<Item = &'a str>,
    backend: &dyn AffectClassifier,
) -> Result<CommunicationProfile, EvalError> {
    let mut sentiment = BTreeMap::new();
    let mut emotion = BTreeMap::new();
    let mut politeness = BTreeMap::new();
    let (mut n, mut flesch_sum, mut flesch_n) = (0usize, 0.0, 0usize);
    for u in utterances {
        let label = backend.classify(u)?;
        *sentiment.entry(label.sentiment.as_str()).or_insert(0) += 1;
        *emotion.entry(label.emotion.as_str()).or_insert(0) += 1;
        *politeness.entry(label.politeness.as_str()).or_insert(0) += 1;
        if let Ok(r) = flesch_reading_ease(u) {
            flesch_sum += r.clamped_score;
            flesch_n += 1;
        }
        n += 1;
    }
    if n == 0 {
        return Err(EvalError::RoleAbsent(role.as_str()));
    }
    Ok(CommunicationProfile {
        role,
        sentiment_dist: distribution(Sentiment::ALL.iter().map(|l| l.as_str()), &sentiment, n),
        emotion_dist: distribution(Emotion::ALL.iter().map(|l| l.as_str()), &emotion, n),
        politeness_dist: distribution(Politeness::ALL.iter().map(|l| l.as_str()), &politeness, n),
        mean_flesch: if flesch_n == 0 {
            0.0
        } else {
            flesch_sum / flesch_n as f64
        },
        n_utterances: n,
    })
}

/// (caller, dispatcher) profiles of one transcript.
pub fn profile_transcript(
    transcript: &Transcript,
    backend: &dyn AffectClassifier,
) -> Result<(CommunicationProfile, CommunicationProfile), EvalError> {
    profile_corpus(std::slice::from_ref(transcript), backend)
}

/// Pools every utterance of each role across the corpus.
pub fn profile_corpus(
    transcripts: &[Transcript],
    backend: &dyn AffectClassifier,
) -> Result<(CommunicationProfile, CommunicationProfile), EvalError> {
    let role = |r: ProfileRole| {
        profile_utterances(
            r,
            transcripts.iter().flat_map(move |t| t.utterances(r.speaker())),
            backend,
        )
    };
    Ok((role(ProfileRole::Caller)?, role(ProfileRole::Dispatcher)?))
}
