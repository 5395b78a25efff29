//! Sentiment, emotion and politeness labels over single utterances.

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::taxonomy::{find_phrase, normalize_text};

macro_rules! label_enum {
    ($name:ident { $($variant:ident => $s:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $s),+
                }
            }

            pub fn parse(s: &str) -> Option<Self> {
                match s {
                    $($s => Some($name::$variant),)+
                    _ => None,
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

label_enum!(Sentiment {
    Positive => "positive",
    Negative => "negative",
    Neutral => "neutral",
});

label_enum!(Emotion {
    Disgust => "disgust",
    Joy => "joy",
    Sadness => "sadness",
    Anger => "anger",
    Fear => "fear",
    Surprise => "surprise",
    Neutral => "neutral",
});

label_enum!(Politeness {
    Polite => "polite",
    SomewhatPolite => "somewhat_polite",
    Neutral => "neutral",
    Impolite => "impolite",
});

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AffectLabel {
    pub sentiment: Sentiment,
    pub emotion: Emotion,
    pub politeness: Politeness,
}

impl AffectLabel {
    pub const NEUTRAL: AffectLabel = AffectLabel {
        sentiment: Sentiment::Neutral,
        emotion: Emotion::Neutral,
        politeness: Politeness::Neutral,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Sentiment,
    Emotion,
    Politeness,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Sentiment => "sentiment",
            Task::Emotion => "emotion",
            Task::Politeness => "politeness",
        }
    }
}

pub trait AffectClassifier: Send + Sync {
    fn id(&self) -> &str;
    fn classify(&self, utterance: &str) -> Result<AffectLabel, EvalError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PolitenessRule {
    Polite,
    Softener,
    Impolite,
}

/// Lexicon and rule classifier loaded from the TSV files under `data/lexicon`.
#[derive(Debug, Clone)]
pub struct LexiconClassifier {
    sentiment: Vec<(String, f64)>,
    emotion: Vec<(String, Emotion)>,
    politeness: Vec<(String, PolitenessRule)>,
    theta: f64,
}

pub const DEFAULT_NEUTRAL_BAND: f64 = 1.0;

fn tsv_rows(source: &str) -> impl Iterator<Item = (usize, &str, &str)> {
    source.lines().enumerate().filter_map(|(i, line)| {
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            return None;
        }
        let (term, value) = line.split_once('\t').unwrap_or((line, ""));
        Some((i + 1, term, value.trim()))
    })
}

fn lexicon_error(file: &str, line: usize, message: impl Into<String>) -> EvalError {
    EvalError::Lexicon {
        file: file.to_string(),
        line,
        message: message.into(),
    }
}

impl LexiconClassifier {
    pub fn bundled() -> Self {
        Self::from_sources(
            include_str!("../../data/lexicon/sentiment.tsv"),
            include_str!("../../data/lexicon/emotion.tsv"),
            include_str!("../../data/lexicon/politeness.tsv"),
        )
        .expect("bundled lexicons are valid")
    }

    pub fn from_sources(sentiment: &str, emotion: &str, politeness: &str) -> Result<Self, EvalError> {
        let mut out = Self {
            sentiment: Vec::new(),
            emotion: Vec::new(),
            politeness: Vec::new(),
            theta: DEFAULT_NEUTRAL_BAND,
        };
        for (line, term, value) in tsv_rows(sentiment) {
            let w: f64 = value
                .parse()
                .map_err(|_| lexicon_error("sentiment", line, format!("bad weight {value:?}")))?;
            out.sentiment.push((normalize_text(term), w));
        }
        for (line, term, value) in tsv_rows(emotion) {
            let e = Emotion::parse(value)
                .filter(|e| *e != Emotion::Neutral)
                .ok_or_else(|| lexicon_error("emotion", line, format!("bad label {value:?}")))?;
            out.emotion.push((normalize_text(term), e));
        }
        for (line, term, value) in tsv_rows(politeness) {
            let rule = match value {
                "polite" => PolitenessRule::Polite,
                "softener" => PolitenessRule::Softener,
                "impolite" => PolitenessRule::Impolite,
                other => return Err(lexicon_error("politeness", line, format!("bad rule {other:?}"))),
            };
            out.politeness.push((normalize_text(term), rule));
        }
        Ok(out)
    }

    pub fn with_neutral_band(mut self, theta: f64) -> Self {
        self.theta = theta;
        self
    }

    /// Signed sum of lexicon weights, one per occurrence.
    pub fn sentiment_score(&self, normalized: &str) -> f64 {
        self.sentiment
            .iter()
            .map(|(term, w)| occurrences(normalized, term) as f64 * w)
            .sum()
    }

    pub fn sentiment(&self, normalized: &str) -> Sentiment {
        let s = self.sentiment_score(normalized);
        if s > self.theta {
            Sentiment::Positive
        } else if s < -self.theta {
            Sentiment::Negative
        } else {
            Sentiment::Neutral
        }
    }

    /// Most frequent emotion; ties go to the label whose term appears first.
    pub fn emotion(&self, normalized: &str) -> Emotion {
        let mut scores: Vec<(Emotion, usize, usize)> = Vec::new();
        for (term, label) in &self.emotion {
            let n = occurrences(normalized, term);
            if n == 0 {
                continue;
            }
            let first = find_phrase(normalized, term).unwrap_or(usize::MAX);
            match scores.iter_mut().find(|s| s.0 == *label) {
                Some(s) => {
                    s.1 += n;
                    s.2 = s.2.min(first);
                }
                None => scores.push((*label, n, first)),
            }
        }
        scores
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then(b.2.cmp(&a.2)))
            .map_or(Emotion::Neutral, |s| s.0)
    }

    pub fn politeness(&self, normalized: &str) -> Politeness {
        let has = |rule| {
            self.politeness
                .iter()
                .any(|(term, r)| *r == rule && find_phrase(normalized, term).is_some())
        };
        if has(PolitenessRule::Impolite) {
            Politeness::Impolite
        } else if has(PolitenessRule::Polite) {
            Politeness::Polite
        } else if has(PolitenessRule::Softener) {
            Politeness::SomewhatPolite
        } else {
            Politeness::Neutral
        }
    }
}

fn occurrences(haystack: &str, needle: &str) -> usize {
    let mut count = 0;
    let mut start = 0;
    while start <= haystack.len() {
        match find_phrase(&haystack[start..], needle) {
            Some(at) => {
                count += 1;
                start += at + needle.len();
            }
            None => break,
        }
    }
    count
}

impl AffectClassifier for LexiconClassifier {
    fn id(&self) -> &str {
        "lexicon"
    }

    fn classify(&self, utterance: &str) -> Result<AffectLabel, EvalError> {
        let text = normalize_text(utterance);
        if text.is_empty() {
            return Ok(AffectLabel::NEUTRAL);
        }
        Ok(AffectLabel {
            sentiment: self.sentiment(&text),
            emotion: self.emotion(&text),
            politeness: self.politeness(&text),
        })
    }
}

pub fn classify_affect(utterance: &str, backend: &dyn AffectClassifier) -> Result<AffectLabel, EvalError> {
    backend.classify(utterance)
}

/// HTTP classifier: POST `{"text", "task"}`, reply `{"label"}`, one call per task.
pub struct RemoteAffectClassifier {
    url: String,
    agent: ureq::Agent,
}

impl RemoteAffectClassifier {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { url: url.into(), agent }
    }

    fn label(&self, text: &str, task: Task) -> Result<String, EvalError> {
        let remote = |message: String| EvalError::Remote {
            task: task.as_str(),
            message,
        };
        let body = serde_json::json!({ "text": text, "task": task.as_str() });
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(&body)
            .map_err(|e| remote(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(remote(format!("status {}", resp.status().as_u16())));
        }
        let value: serde_json::Value = resp.body_mut().read_json().map_err(|e| remote(e.to_string()))?;
        value
            .get("label")
            .and_then(|l| l.as_str())
            .map(str::to_string)
            .ok_or_else(|| remote("reply has no string `label`".into()))
    }
}

impl AffectClassifier for RemoteAffectClassifier {
    fn id(&self) -> &str {
        "remote"
    }

    fn classify(&self, utterance: &str) -> Result<AffectLabel, EvalError> {
        let bad = |task: Task, label: String| EvalError::Remote {
            task: task.as_str(),
            message: format!("label {label:?} outside the closed set"),
        };
        let s = self.label(utterance, Task::Sentiment)?;
        let e = self.label(utterance, Task::Emotion)?;
        let p = self.label(utterance, Task::Politeness)?;
        Ok(AffectLabel {
            sentiment: Sentiment::parse(&s).ok_or_else(|| bad(Task::Sentiment, s.clone()))?,
            emotion: Emotion::parse(&e).ok_or_else(|| bad(Task::Emotion, e.clone()))?,
            politeness: Politeness::parse(&p).ok_or_else(|| bad(Task::Politeness, p.clone()))?,
        })
    }
}
