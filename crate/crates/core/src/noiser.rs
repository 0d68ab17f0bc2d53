//! Social-media style corruption of English source text.
//!
//! Each word goes through up to three edits, in order: article removal, vowel
//! removal, and removal of one character from a doubled-letter pair. Every
//! random decision is keyed by `(seed, record id, word index, edit kind,
//! character position)` so a record corrupts identically no matter where it
//! sits in the corpus or which thread handles it.

use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CorpusSplit;
use crate::metrics::{self, MetricOptions, MetricReport};
use crate::rng;
use crate::text::SpacedWords;

pub const ARTICLES: [&str; 3] = ["a", "an", "the"];
pub const DEFAULT_TARGET_MEAN: f64 = 4.5;
pub const DEFAULT_DECREMENT: f64 = 0.1;
pub const DEFAULT_SAMPLE_SIZE: usize = 20;
/// Probability every operation starts from before naturalness tuning.
pub const TUNING_START_PROBABILITY: f64 = 0.3;

#[derive(Debug, Error, PartialEq)]
pub enum NoiseError {
    #[error("probability {name} = {value} outside [0, 1]")]
    Probability { name: &'static str, value: f64 },
    #[error("rating {0} outside 1..=5")]
    Rating(u8),
    #[error("expected {expected} ratings, got {got}")]
    RatingCount { expected: usize, got: usize },
    #[error("decrement must be positive, got {0}")]
    Decrement(f64),
    #[error("tuning already converged")]
    Converged,
    #[error("sentence pool is empty")]
    EmptyPool,
    #[error("split is empty")]
    EmptySplit,
    #[error("original has {original} records, corrupted has {corrupted}")]
    LengthMismatch { original: usize, corrupted: usize },
    #[error("trace edit {0} does not apply to the original text")]
    BadTrace(usize),
}

pub type Result<T> = std::result::Result<T, NoiseError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub p_article: f64,
    pub p_vowel: f64,
    pub p_dupe: f64,
    /// Whether articles that survive removal still get vowel and doubled-letter edits.
    pub vowel_secondary_pass: bool,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn new(p_article: f64, p_vowel: f64, p_dupe: f64, vowel_secondary_pass: bool, seed: u64) -> Result<Self> {
        let c = Self {
            p_article,
            p_vowel,
            p_dupe,
            vowel_secondary_pass,
            seed,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn low(seed: u64) -> Self {
        Self {
            p_article: 0.2,
            p_vowel: 0.1,
            p_dupe: 0.2,
            vowel_secondary_pass: true,
            seed,
        }
    }

    pub fn high(seed: u64) -> Self {
        Self {
            p_article: 0.3,
            p_vowel: 0.3,
            p_dupe: 0.3,
            vowel_secondary_pass: false,
            seed,
        }
    }

    pub fn zero(seed: u64) -> Self {
        Self {
            p_article: 0.0,
            p_vowel: 0.0,
            p_dupe: 0.0,
            vowel_secondary_pass: true,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("p_article", self.p_article),
            ("p_vowel", self.p_vowel),
            ("p_dupe", self.p_dupe),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(NoiseError::Probability { name, value });
            }
        }
        Ok(())
    }

    pub fn probabilities(&self) -> (f64, f64, f64) {
        (self.p_article, self.p_vowel, self.p_dupe)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditKind {
    DropArticle,
    DropVowel,
    DropDupe,
}

impl EditKind {
    fn key(self) -> u64 {
        match self {
            EditKind::DropArticle => 1,
            EditKind::DropVowel => 2,
            EditKind::DropDupe => 3,
        }
    }
}

/// One applied edit. `char_index` counts characters in the word as it stands
/// when the edit is applied (after earlier edits to the same word).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edit {
    pub word: usize,
    pub kind: EditKind,
    #[serde(rename = "char", skip_serializing_if = "Option::is_none", default)]
    pub char_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorruptionTrace {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_id: Option<u64>,
    pub original: String,
    pub corrupted: String,
    pub edits: Vec<Edit>,
}

impl CorruptionTrace {
    /// Applies `edits` to `original` from scratch.
    pub fn replay(original: &str, edits: &[Edit]) -> Result<String> {
        let sw = SpacedWords::split(original);
        let mut words: Vec<Option<Vec<char>>> = sw.words.iter().map(|(_, w)| Some(w.chars().collect())).collect();
        for (i, e) in edits.iter().enumerate() {
            let slot = words.get_mut(e.word).ok_or(NoiseError::BadTrace(i))?;
            match (e.kind, e.char_index) {
                (EditKind::DropArticle, None) => {
                    if slot.take().is_none() {
                        return Err(NoiseError::BadTrace(i));
                    }
                }
                (EditKind::DropVowel | EditKind::DropDupe, Some(c)) => {
                    let chars = slot.as_mut().ok_or(NoiseError::BadTrace(i))?;
                    if c >= chars.len() {
                        return Err(NoiseError::BadTrace(i));
                    }
                    chars.remove(c);
                }
                _ => return Err(NoiseError::BadTrace(i)),
            }
        }
        let words: Vec<Option<String>> = words
            .into_iter()
            .map(|w| w.filter(|c| !c.is_empty()).map(|c| c.into_iter().collect()))
            .collect();
        Ok(sw.join(&words))
    }

    pub fn verify(&self) -> bool {
        Self::replay(&self.original, &self.edits).is_ok_and(|s| s == self.corrupted)
    }
}

/// The random stream for one record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseStream {
    seed: u64,
    record: u64,
}

impl NoiseStream {
    pub fn new(seed: u64, record: u64) -> Self {
        Self { seed, record }
    }

    fn draw(&self, word: usize, kind: EditKind, pos: usize) -> f64 {
        rng::unit_f64(rng::hash_key(&[self.seed, self.record, word as u64, kind.key(), pos as u64]))
    }

    fn hit(&self, p: f64, word: usize, kind: EditKind, pos: usize) -> bool {
        p > 0.0 && self.draw(word, kind, pos) < p
    }
}

pub fn is_article(word: &str) -> bool {
    ARTICLES.iter().any(|a| word.to_lowercase() == *a)
}

pub fn is_vowel(c: char) -> bool {
    matches!(c.to_ascii_lowercase(), 'a' | 'e' | 'i' | 'o' | 'u')
}

pub fn corrupt_sentence(sentence: &str, config: &NoiseConfig, stream: &NoiseStream) -> CorruptionTrace {
    let sw = SpacedWords::split(sentence);
    let mut edits = Vec::new();
    let mut out: Vec<Option<String>> = Vec::with_capacity(sw.words.len());
    for (wi, (_, word)) in sw.words.iter().enumerate() {
        let article = is_article(word);
        if article && stream.hit(config.p_article, wi, EditKind::DropArticle, 0) {
            edits.push(Edit {
                word: wi,
                kind: EditKind::DropArticle,
                char_index: None,
            });
            out.push(None);
            continue;
        }
        if article && !config.vowel_secondary_pass {
            out.push(Some((*word).to_owned()));
            continue;
        }

        let mut chars: Vec<char> = Vec::with_capacity(word.len());
        for (ci, c) in word.chars().enumerate() {
            if is_vowel(c) && stream.hit(config.p_vowel, wi, EditKind::DropVowel, ci) {
                edits.push(Edit {
                    word: wi,
                    kind: EditKind::DropVowel,
                    char_index: Some(chars.len()),
                });
            } else {
                chars.push(c);
            }
        }

        // single left-to-right pass; after a drop the next comparison starts
        // past the surviving character, so "aaa" loses at most one character
        let mut i = 1;
        let mut pass_pos = 0;
        while i < chars.len() {
            if chars[i] == chars[i - 1] {
                if stream.hit(config.p_dupe, wi, EditKind::DropDupe, pass_pos) {
                    chars.remove(i);
                    edits.push(Edit {
                        word: wi,
                        kind: EditKind::DropDupe,
                        char_index: Some(i),
                    });
                }
                pass_pos += 1;
            }
            i += 1;
        }

        out.push((!chars.is_empty()).then(|| chars.into_iter().collect()));
    }
    let corrupted = if edits.is_empty() {
        sentence.to_owned()
    } else {
        sw.join(&out)
    };
    CorruptionTrace {
        record_id: None,
        original: sentence.to_owned(),
        corrupted,
        edits,
    }
}

/// Corrupts every source sentence; targets and all other fields are untouched.
pub fn corrupt_corpus(split: &CorpusSplit, config: &NoiseConfig) -> Result<(CorpusSplit, Vec<CorruptionTrace>)> {
    config.validate()?;
    if split.is_empty() {
        return Err(NoiseError::EmptySplit);
    }
    let mut out = split.clone();
    let mut traces = Vec::with_capacity(split.len());
    for record in &mut out.records {
        let mut trace = corrupt_sentence(&record.source, config, &NoiseStream::new(config.seed, record.id));
        trace.record_id = Some(record.id);
        record.source = trace.corrupted.clone();
        traces.push(trace);
    }
    Ok((out, traces))
}

/// Scores corrupted sources against the originals.
pub fn characterize_noise(original: &CorpusSplit, corrupted: &CorpusSplit) -> Result<MetricReport> {
    if original.len() != corrupted.len() {
        return Err(NoiseError::LengthMismatch {
            original: original.len(),
            corrupted: corrupted.len(),
        });
    }
    if original.is_empty() {
        return Err(NoiseError::EmptySplit);
    }
    Ok(metrics::evaluate(&corrupted.sources(), &original.sources(), &MetricOptions::default(), false)
        .expect("lengths checked"))
}

// ---------------------------------------------------------------- tuning

/// How much each probability drops after a round that misses the target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decrement {
    Uniform(f64),
    PerType { article: f64, vowel: f64, dupe: f64 },
}

impl Decrement {
    fn amounts(&self) -> [f64; 3] {
        match *self {
            Decrement::Uniform(d) => [d; 3],
            Decrement::PerType { article, vowel, dupe } => [article, vowel, dupe],
        }
    }

    fn validate(&self) -> Result<()> {
        let a = self.amounts();
        // per-type may freeze an operation with 0, but something has to move
        let bad = match self {
            Decrement::Uniform(d) => (*d <= 0.0 || !d.is_finite()).then_some(*d),
            Decrement::PerType { .. } => a
                .iter()
                .find(|d| **d < 0.0 || !d.is_finite())
                .copied()
                .or_else(|| a.iter().all(|d| *d == 0.0).then_some(0.0)),
        };
        match bad {
            Some(d) => Err(NoiseError::Decrement(d)),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningState {
    pub round: u32,
    pub config: NoiseConfig,
    /// `(original, corrupted)` pairs shown to raters this round.
    pub sample: Vec<(String, String)>,
    /// Ratings received for the previous round's sample.
    pub ratings: Vec<u8>,
    pub target_mean: f64,
    pub decrement: Decrement,
    pub sample_size: usize,
    pub converged: bool,
    /// Mean rating of every completed round, oldest first.
    pub history: Vec<f64>,
}

impl TuningState {
    pub fn start(
        config: NoiseConfig,
        pool: &[String],
        sample_size: usize,
        target_mean: f64,
        decrement: Decrement,
    ) -> Result<Self> {
        config.validate()?;
        decrement.validate()?;
        let sample = draw_sample(pool, &config, 0, sample_size)?;
        Ok(Self {
            round: 0,
            config,
            sample,
            ratings: Vec::new(),
            target_mean,
            decrement,
            sample_size,
            converged: false,
            history: Vec::new(),
        })
    }

    /// Default schedule: every probability starts at 0.3, target mean 4.5,
    /// uniform decrements of 0.1, 20 sentences per round.
    pub fn start_default(seed: u64, pool: &[String]) -> Result<Self> {
        let config = NoiseConfig {
            p_article: TUNING_START_PROBABILITY,
            p_vowel: TUNING_START_PROBABILITY,
            p_dupe: TUNING_START_PROBABILITY,
            vowel_secondary_pass: true,
            seed,
        };
        Self::start(
            config,
            pool,
            DEFAULT_SAMPLE_SIZE,
            DEFAULT_TARGET_MEAN,
            Decrement::Uniform(DEFAULT_DECREMENT),
        )
    }
}

pub fn mean_rating(ratings: &[u8]) -> f64 {
    ratings.iter().map(|&r| r as f64).sum::<f64>() / ratings.len() as f64
}

// Probabilities live on a 1e-9 grid so repeated 0.1 steps land on 0.2, 0.1, 0.0.
fn step_down(p: f64, d: f64) -> f64 {
    (((p - d) * 1e9).round() / 1e9).max(0.0)
}

/// Draws `size` distinct sentences (all of them when the pool is smaller)
/// and corrupts them with `config`.
pub fn draw_sample(pool: &[String], config: &NoiseConfig, round: u32, size: usize) -> Result<Vec<(String, String)>> {
    if pool.is_empty() {
        return Err(NoiseError::EmptyPool);
    }
    let mut rng = rng::stream_rng(config.seed, &format!("tuning-sample-{round}"));
    let mut picked = index::sample(&mut rng, pool.len(), size.min(pool.len())).into_vec();
    picked.sort_unstable();
    let stream_seed = rng::derive_seed(config.seed, &format!("tuning-noise-{round}"));
    Ok(picked
        .into_iter()
        .map(|i| {
            let t = corrupt_sentence(&pool[i], config, &NoiseStream::new(stream_seed, i as u64));
            (t.original, t.corrupted)
        })
        .collect())
}

/// Advances the tuning loop with one round of ratings.
pub fn tune_probabilities(state: &TuningState, new_ratings: &[u8], pool: &[String]) -> Result<TuningState> {
    if state.converged {
        return Err(NoiseError::Converged);
    }
    state.decrement.validate()?;
    if let Some(&bad) = new_ratings.iter().find(|r| !(1..=5).contains(*r)) {
        return Err(NoiseError::Rating(bad));
    }
    if new_ratings.len() != state.sample.len() {
        return Err(NoiseError::RatingCount {
            expected: state.sample.len(),
            got: new_ratings.len(),
        });
    }
    let mean = mean_rating(new_ratings);
    let mut next = state.clone();
    next.ratings = new_ratings.to_vec();
    next.history.push(mean);
    if mean >= state.target_mean {
        next.converged = true;
        return Ok(next);
    }
    let [da, dv, dd] = state.decrement.amounts();
    next.config.p_article = step_down(state.config.p_article, da);
    next.config.p_vowel = step_down(state.config.p_vowel, dv);
    next.config.p_dupe = step_down(state.config.p_dupe, dd);
    next.round += 1;
    next.sample = draw_sample(pool, &next.config, next.round, state.sample_size)?;
    Ok(next)
}
