//! Corpus-level BLEU, chrF2 and TER.
//!
//! All three scores are on a 0..100 scale. Corpus scores aggregate sufficient
//! statistics in segment order, so results are reproducible bit for bit.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::Tokenizer;

pub const BLEU_MAX_ORDER: usize = 4;
pub const CHRF_MAX_ORDER: usize = 6;
pub const CHRF_BETA: f64 = 2.0;
/// Value substituted for zero n-gram matches when BLEU smoothing is enabled.
pub const BLEU_SMOOTHING_EPSILON: f64 = 0.1;
/// Longest block a single TER shift may move.
pub const TER_MAX_SHIFT_SPAN: usize = 10;
pub const TER_MAX_SHIFTS: usize = 20;
/// Hypotheses up to this many tokens get an exhaustive shift search; longer
/// ones fall back to the greedy heuristic.
pub const TER_EXACT_MAX_TOKENS: usize = 6;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("hypothesis count {hyps} does not match reference count {refs}")]
    LengthMismatch { hyps: usize, refs: usize },
    #[error("empty corpus")]
    Empty,
}

pub type Result<T> = std::result::Result<T, MetricsError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Bleu,
    Chrf2,
    Ter,
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Metric::Bleu => "BLEU",
            Metric::Chrf2 => "chrF2",
            Metric::Ter => "TER",
        })
    }
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bleu" => Ok(Metric::Bleu),
            "chrf2" | "chrf" => Ok(Metric::Chrf2),
            "ter" => Ok(Metric::Ter),
            other => Err(format!("unknown metric `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MetricOptions {
    pub tokenizer: Tokenizer,
    pub lowercase: bool,
    /// Replace zero BLEU n-gram matches by [`BLEU_SMOOTHING_EPSILON`].
    pub bleu_smoothing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentScore {
    pub bleu: f64,
    pub chrf2: f64,
    pub ter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu: f64,
    pub chrf2: f64,
    pub ter: f64,
    pub segment_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_segment: Option<Vec<SegmentScore>>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub bleu_smoothed: bool,
}

impl MetricReport {
    /// `bleu chrf2 ter n_segments`, tab separated, two decimals.
    pub fn tsv_line(&self) -> String {
        format!(
            "{:.2}\t{:.2}\t{:.2}\t{}",
            self.bleu, self.chrf2, self.ter, self.segment_count
        )
    }
}

fn check_lengths<H, R>(hyps: &[H], refs: &[R]) -> Result<()> {
    if hyps.len() != refs.len() {
        return Err(MetricsError::LengthMismatch {
            hyps: hyps.len(),
            refs: refs.len(),
        });
    }
    if hyps.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

fn normalize<'a>(text: &'a str, opts: &MetricOptions) -> std::borrow::Cow<'a, str> {
    if opts.lowercase {
        text.to_lowercase().into()
    } else {
        text.into()
    }
}

fn tokens(text: &str, opts: &MetricOptions) -> Vec<String> {
    let t = normalize(text, opts);
    opts.tokenizer.tokenize(&t).into_iter().map(|c| c.into_owned()).collect()
}

// ---------------------------------------------------------------- BLEU

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [usize; BLEU_MAX_ORDER],
    pub totals: [usize; BLEU_MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl std::ops::AddAssign for BleuStats {
    fn add_assign(&mut self, o: Self) {
        for n in 0..BLEU_MAX_ORDER {
            self.matches[n] += o.matches[n];
            self.totals[n] += o.totals[n];
        }
        self.hyp_len += o.hyp_len;
        self.ref_len += o.ref_len;
    }
}

fn ngram_counts<T: Eq + std::hash::Hash>(items: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    if items.len() >= n {
        for w in items.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

pub fn bleu_stats<T: Eq + std::hash::Hash>(hyp: &[T], reference: &[T]) -> BleuStats {
    let mut s = BleuStats {
        hyp_len: hyp.len(),
        ref_len: reference.len(),
        ..Default::default()
    };
    for n in 1..=BLEU_MAX_ORDER {
        let h = ngram_counts(hyp, n);
        let r = ngram_counts(reference, n);
        s.totals[n - 1] = hyp.len().saturating_sub(n - 1);
        s.matches[n - 1] = h
            .iter()
            .map(|(g, c)| (*c).min(r.get(g).copied().unwrap_or(0)))
            .sum();
    }
    s
}

impl BleuStats {
    /// Geometric mean over the orders for which the hypothesis side has any
    /// n-grams (effective order), times the brevity penalty. Zero when a
    /// counted order has no matches and smoothing is off.
    pub fn score(&self, smoothing: bool) -> f64 {
        if self.hyp_len == 0 {
            return if self.ref_len == 0 { 100.0 } else { 0.0 };
        }
        let mut log_sum = 0.0;
        let mut orders = 0;
        for n in 0..BLEU_MAX_ORDER {
            if self.totals[n] == 0 {
                break;
            }
            let m = if self.matches[n] == 0 {
                if !smoothing {
                    return 0.0;
                }
                BLEU_SMOOTHING_EPSILON
            } else {
                self.matches[n] as f64
            };
            log_sum += (m / self.totals[n] as f64).ln();
            orders += 1;
        }
        let bp = if self.hyp_len >= self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        };
        (bp * (log_sum / orders as f64).exp() * 100.0).min(100.0)
    }
}

pub fn bleu<H: AsRef<str>, R: AsRef<str>>(hyps: &[H], refs: &[R]) -> Result<f64> {
    bleu_with(hyps, refs, &MetricOptions::default())
}

pub fn bleu_with<H: AsRef<str>, R: AsRef<str>>(hyps: &[H], refs: &[R], opts: &MetricOptions) -> Result<f64> {
    check_lengths(hyps, refs)?;
    let mut total = BleuStats::default();
    for (h, r) in hyps.iter().zip(refs) {
        total += bleu_stats(&tokens(h.as_ref(), opts), &tokens(r.as_ref(), opts));
    }
    Ok(total.score(opts.bleu_smoothing))
}

// ---------------------------------------------------------------- chrF

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ChrfStats {
    pub matches: [usize; CHRF_MAX_ORDER],
    pub hyp_totals: [usize; CHRF_MAX_ORDER],
    pub ref_totals: [usize; CHRF_MAX_ORDER],
}

impl std::ops::AddAssign for ChrfStats {
    fn add_assign(&mut self, o: Self) {
        for n in 0..CHRF_MAX_ORDER {
            self.matches[n] += o.matches[n];
            self.hyp_totals[n] += o.hyp_totals[n];
            self.ref_totals[n] += o.ref_totals[n];
        }
    }
}

/// Character n-gram statistics; whitespace is removed before extraction.
pub fn chrf_stats(hyp: &str, reference: &str) -> ChrfStats {
    let h: Vec<char> = hyp.chars().filter(|c| !c.is_whitespace()).collect();
    let r: Vec<char> = reference.chars().filter(|c| !c.is_whitespace()).collect();
    let mut s = ChrfStats::default();
    for n in 1..=CHRF_MAX_ORDER {
        let hc = ngram_counts(&h, n);
        let rc = ngram_counts(&r, n);
        s.hyp_totals[n - 1] = h.len().saturating_sub(n - 1);
        s.ref_totals[n - 1] = r.len().saturating_sub(n - 1);
        s.matches[n - 1] = hc
            .iter()
            .map(|(g, c)| (*c).min(rc.get(g).copied().unwrap_or(0)))
            .sum();
    }
    s
}

impl ChrfStats {
    /// Averages precision and recall over the orders that occur on either
    /// side, then combines them into F-beta.
    pub fn score(&self, beta: f64) -> f64 {
        let mut p_sum = 0.0;
        let mut r_sum = 0.0;
        let mut orders = 0usize;
        for n in 0..CHRF_MAX_ORDER {
            let (ht, rt) = (self.hyp_totals[n], self.ref_totals[n]);
            if ht == 0 && rt == 0 {
                continue;
            }
            orders += 1;
            if ht > 0 {
                p_sum += self.matches[n] as f64 / ht as f64;
            }
            if rt > 0 {
                r_sum += self.matches[n] as f64 / rt as f64;
            }
        }
        if orders == 0 {
            // both sides empty
            return 100.0;
        }
        let p = p_sum / orders as f64;
        let r = r_sum / orders as f64;
        let b2 = beta * beta;
        let denom = b2 * p + r;
        if denom == 0.0 {
            0.0
        } else {
            ((1.0 + b2) * p * r / denom * 100.0).min(100.0)
        }
    }
}

pub fn chrf2<H: AsRef<str>, R: AsRef<str>>(hyps: &[H], refs: &[R]) -> Result<f64> {
    chrf2_with(hyps, refs, &MetricOptions::default())
}

pub fn chrf2_with<H: AsRef<str>, R: AsRef<str>>(hyps: &[H], refs: &[R], opts: &MetricOptions) -> Result<f64> {
    check_lengths(hyps, refs)?;
    let mut total = ChrfStats::default();
    for (h, r) in hyps.iter().zip(refs) {
        total += chrf_stats(&normalize(h.as_ref(), opts), &normalize(r.as_ref(), opts));
    }
    Ok(total.score(CHRF_BETA))
}

// ---------------------------------------------------------------- TER

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TerStats {
    /// Shifts plus word-level insertions, deletions and substitutions.
    pub edits: usize,
    pub shifts: usize,
    pub ref_len: usize,
}

impl TerStats {
    pub fn score(&self) -> f64 {
        if self.ref_len == 0 {
            return if self.edits == 0 { 0.0 } else { 100.0 };
        }
        self.edits as f64 / self.ref_len as f64 * 100.0
    }
}

/// Word-level Levenshtein distance with unit costs.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = (up + 1).min(row[j] + 1).min(diag + usize::from(x != y));
            diag = up;
        }
    }
    row[b.len()]
}

/// Calls `f` with every sequence obtained by moving one block of at most
/// `max_span` tokens to another position. Duplicates are not filtered.
fn for_each_shift<T: Copy>(seq: &[T], max_span: usize, buf: &mut Vec<T>, mut f: impl FnMut(usize, usize, &[T])) {
    let n = seq.len();
    for start in 0..n {
        for len in 1..=max_span.min(n - start) {
            // destination index in the sequence with the block removed
            for dest in 0..=(n - len) {
                if dest == start {
                    continue;
                }
                buf.clear();
                let block = &seq[start..start + len];
                let rest = seq[..start].iter().chain(&seq[start + len..]);
                let mut rest = rest.copied();
                buf.extend(rest.by_ref().take(dest));
                buf.extend_from_slice(block);
                buf.extend(rest);
                f(start, len, buf);
            }
        }
    }
}

fn intern<'a>(hyp: &[&'a str], reference: &[&'a str]) -> (Vec<u32>, Vec<u32>) {
    let mut ids: HashMap<&str, u32> = HashMap::new();
    let mut id = |w: &'a str| {
        let next = ids.len() as u32;
        *ids.entry(w).or_insert(next)
    };
    let h = hyp.iter().map(|w| id(w)).collect();
    let r = reference.iter().map(|w| id(w)).collect();
    (h, r)
}

/// Lower bound on Levenshtein distance that no reordering can beat: the
/// multiset difference between the two bags of words.
fn bag_lower_bound(hyp: &[u32], reference: &[u32]) -> usize {
    let mut counts: HashMap<u32, isize> = HashMap::new();
    for w in hyp {
        *counts.entry(*w).or_default() += 1;
    }
    let mut common = 0usize;
    for w in reference {
        let c = counts.entry(*w).or_default();
        if *c > 0 {
            *c -= 1;
            common += 1;
        }
    }
    hyp.len().max(reference.len()) - common
}

fn ter_exact(hyp: &[u32], reference: &[u32]) -> (usize, usize) {
    let lower = bag_lower_bound(hyp, reference);
    let mut best = (levenshtein(hyp, reference), 0usize);
    let mut seen: HashSet<Vec<u32>> = HashSet::new();
    seen.insert(hyp.to_vec());
    let mut frontier = vec![hyp.to_vec()];
    let mut buf = Vec::with_capacity(hyp.len());
    let mut depth = 0;
    while !frontier.is_empty() && depth < TER_MAX_SHIFTS && depth + 1 + lower < best.0 {
        depth += 1;
        let mut next = Vec::new();
        for state in &frontier {
            for_each_shift(state, TER_MAX_SHIFT_SPAN, &mut buf, |_, _, cand| {
                if seen.contains(cand) {
                    return;
                }
                let v = cand.to_vec();
                let cost = depth + levenshtein(&v, reference);
                if cost < best.0 {
                    best = (cost, depth);
                }
                seen.insert(v.clone());
                next.push(v);
            });
        }
        frontier = next;
    }
    best
}

fn ter_greedy(hyp: &[u32], reference: &[u32]) -> (usize, usize) {
    let ref_spans: HashSet<&[u32]> = (1..=TER_MAX_SHIFT_SPAN.min(reference.len()))
        .flat_map(|n| reference.windows(n))
        .collect();
    let mut current = hyp.to_vec();
    let mut dist = levenshtein(&current, reference);
    let mut best = (dist, 0usize);
    let mut buf = Vec::with_capacity(hyp.len());
    for shifts in 1..=TER_MAX_SHIFTS {
        let mut step: Option<(usize, Vec<u32>)> = None;
        for_each_shift(&current, TER_MAX_SHIFT_SPAN, &mut buf, |start, len, cand| {
            if !ref_spans.contains(&current[start..start + len]) {
                return;
            }
            let d = levenshtein(cand, reference);
            if d < dist && step.as_ref().is_none_or(|(bd, _)| d < *bd) {
                step = Some((d, cand.to_vec()));
            }
        });
        let Some((d, cand)) = step else { break };
        current = cand;
        dist = d;
        if shifts + dist < best.0 {
            best = (shifts + dist, shifts);
        }
    }
    best
}

/// TER edit statistics for one tokenized segment pair.
pub fn ter_stats<S: AsRef<str>>(hyp: &[S], reference: &[S]) -> TerStats {
    let h: Vec<&str> = hyp.iter().map(AsRef::as_ref).collect();
    let r: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
    let (h, r) = intern(&h, &r);
    let (edits, shifts) = if h.len() <= TER_EXACT_MAX_TOKENS {
        ter_exact(&h, &r)
    } else {
        ter_greedy(&h, &r)
    };
    TerStats {
        edits,
        shifts,
        ref_len: r.len(),
    }
}

/// Plain word-level edit rate without shifts, for comparison.
pub fn ter_without_shifts<S: AsRef<str>>(hyp: &[S], reference: &[S]) -> TerStats {
    let h: Vec<&str> = hyp.iter().map(AsRef::as_ref).collect();
    let r: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
    TerStats {
        edits: levenshtein(&h, &r),
        shifts: 0,
        ref_len: r.len(),
    }
}

pub fn ter<H: AsRef<str>, R: AsRef<str>>(hyps: &[H], refs: &[R]) -> Result<f64> {
    ter_with(hyps, refs, &MetricOptions::default())
}

pub fn ter_with<H: AsRef<str>, R: AsRef<str>>(hyps: &[H], refs: &[R], opts: &MetricOptions) -> Result<f64> {
    check_lengths(hyps, refs)?;
    let (mut edits, mut ref_len) = (0, 0);
    for (h, r) in hyps.iter().zip(refs) {
        let s = ter_stats(&tokens(h.as_ref(), opts), &tokens(r.as_ref(), opts));
        edits += s.edits;
        ref_len += s.ref_len;
    }
    Ok(TerStats {
        edits,
        shifts: 0,
        ref_len,
    }
    .score())
}

/// Scores a corpus with all three metrics in one pass.
pub fn evaluate<H: AsRef<str>, R: AsRef<str>>(
    hyps: &[H],
    refs: &[R],
    opts: &MetricOptions,
    per_segment: bool,
) -> Result<MetricReport> {
    check_lengths(hyps, refs)?;
    let mut bleu_total = BleuStats::default();
    let mut chrf_total = ChrfStats::default();
    let mut ter_total = TerStats::default();
    let mut segments = per_segment.then(Vec::new);
    for (h, r) in hyps.iter().zip(refs) {
        let (hn, rn) = (normalize(h.as_ref(), opts), normalize(r.as_ref(), opts));
        let ht: Vec<_> = opts.tokenizer.tokenize(&hn);
        let rt: Vec<_> = opts.tokenizer.tokenize(&rn);
        let b = bleu_stats(&ht, &rt);
        let c = chrf_stats(&hn, &rn);
        let t = ter_stats(&ht, &rt);
        if let Some(seg) = segments.as_mut() {
            seg.push(SegmentScore {
                bleu: b.score(opts.bleu_smoothing),
                chrf2: c.score(CHRF_BETA),
                ter: t.score(),
            });
        }
        bleu_total += b;
        chrf_total += c;
        ter_total.edits += t.edits;
        ter_total.shifts += t.shifts;
        ter_total.ref_len += t.ref_len;
    }
    Ok(MetricReport {
        bleu: bleu_total.score(opts.bleu_smoothing),
        chrf2: chrf_total.score(CHRF_BETA),
        ter: ter_total.score(),
        segment_count: hyps.len(),
        per_segment: segments,
        bleu_smoothed: opts.bleu_smoothing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn identical_corpus_is_perfect() {
        let c = ["a man rides a horse", "two dogs", "x"];
        let r = evaluate(&c, &c, &MetricOptions::default(), true).unwrap();
        assert_eq!((r.bleu, r.chrf2, r.ter), (100.0, 100.0, 0.0));
    }

    #[test]
    fn bleu_zero_when_no_four_gram_matches() {
        assert_eq!(bleu(&["the the the the"], &["the cat"]).unwrap(), 0.0);
        let s = bleu_stats(&["the"; 4], &["the", "cat"]);
        assert_eq!((s.matches[0], s.totals[0]), (1, 4));
    }

    #[test]
    fn bleu_hand_computed() {
        // precisions 6/7, 5/6, 4/5, 3/4; hypothesis longer so no brevity penalty
        let v = bleu(&["the cat sat on the mat today"], &["the cat sat on the mat"]).unwrap();
        close(v, (3.0f64 / 7.0).powf(0.25) * 100.0, 1e-9);
    }

    #[test]
    fn bleu_brevity_penalty() {
        let v = bleu(&["the cat sat on"], &["the cat sat on the mat"]).unwrap();
        close(v, (1.0f64 - 6.0 / 4.0).exp() * 100.0, 1e-9);
    }

    #[test]
    fn bleu_smoothing_flag() {
        let opts = MetricOptions {
            bleu_smoothing: true,
            ..Default::default()
        };
        let v = bleu_with(&["a b c x"], &["a b c d"], &opts).unwrap();
        // 3/4, 2/3, 1/2, 0.1/1
        let expected = ((0.75f64 * (2.0 / 3.0) * 0.5 * 0.1).ln() / 4.0).exp() * 100.0;
        close(v, expected, 1e-9);
        assert_eq!(bleu(&["a b c x"], &["a b c d"]).unwrap(), 0.0);
    }

    #[test]
    fn chrf_examples() {
        assert_eq!(chrf2(&["aaaa"], &["bbbb"]).unwrap(), 0.0);
        // orders 1..4: 3/4, 2/3, 1/2, 0/1; orders 5 and 6 absent on both sides
        close(chrf2(&["abcd"], &["abce"]).unwrap(), 23.0 / 48.0 * 100.0, 1e-9);
        assert_eq!(chrf2(&["a b"], &["ab"]).unwrap(), 100.0);
    }

    #[test]
    fn ter_examples() {
        assert_eq!(ter(&["b a"], &["a b"]).unwrap(), 50.0);
        assert_eq!(ter(&["a"], &["a b"]).unwrap(), 50.0);
        assert_eq!(ter(&["a b c"], &["a b c"]).unwrap(), 0.0);
        let no_shift = ter_without_shifts(&["b", "a"], &["a", "b"]);
        assert_eq!(no_shift.score(), 100.0);
    }

    #[test]
    fn ter_greedy_long_segment_uses_shifts() {
        let r: Vec<String> = "a b c d e f g h i j".split(' ').map(String::from).collect();
        let mut h = r.clone();
        h.rotate_left(3);
        let s = ter_stats(&h, &r);
        assert_eq!((s.edits, s.shifts), (1, 1));
    }

    #[test]
    fn lowercase_flag() {
        let opts = MetricOptions {
            lowercase: true,
            ..Default::default()
        };
        assert_eq!(ter_with(&["The Dog"], &["the dog"], &opts).unwrap(), 0.0);
        assert_eq!(ter(&["The Dog"], &["the dog"]).unwrap(), 100.0);
    }

    #[test]
    fn errors() {
        assert_eq!(bleu(&["a"], &["a", "b"]), Err(MetricsError::LengthMismatch { hyps: 1, refs: 2 }));
        let empty: [&str; 0] = [];
        assert_eq!(ter(&empty, &empty), Err(MetricsError::Empty));
        assert!(chrf2(&["a", "b"], &["a"]).is_err());
    }

    #[test]
    fn tsv_line_format() {
        let r = evaluate(&["x y"], &["x y"], &MetricOptions::default(), false).unwrap();
        assert_eq!(r.tsv_line(), "100.00\t100.00\t0.00\t1");
    }
}
