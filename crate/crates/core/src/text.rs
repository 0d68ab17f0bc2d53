//! Tokenization shared by the noiser and the metrics.

use serde::{Deserialize, Serialize};

/// How segments are split into word tokens before scoring.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tokenizer {
    /// Runs of Unicode whitespace separate tokens; punctuation stays attached.
    #[default]
    Whitespace,
    /// Whitespace splitting, then every punctuation or symbol character becomes its own token.
    Intl,
}

impl std::str::FromStr for Tokenizer {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "whitespace" | "none" => Ok(Tokenizer::Whitespace),
            "intl" => Ok(Tokenizer::Intl),
            other => Err(format!("unknown tokenizer `{other}`")),
        }
    }
}

impl Tokenizer {
    pub fn tokenize<'a>(&self, text: &'a str) -> Vec<std::borrow::Cow<'a, str>> {
        match self {
            Tokenizer::Whitespace => text.split_whitespace().map(Into::into).collect(),
            Tokenizer::Intl => {
                let mut out = Vec::new();
                for word in text.split_whitespace() {
                    let mut start = 0;
                    for (i, c) in word.char_indices() {
                        if is_punct(c) {
                            if start < i {
                                out.push(word[start..i].into());
                            }
                            out.push(word[i..i + c.len_utf8()].into());
                            start = i + c.len_utf8();
                        }
                    }
                    if start < word.len() {
                        out.push(word[start..].into());
                    }
                }
                out
            }
        }
    }
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || (!c.is_alphanumeric() && !c.is_whitespace() && !is_combining_mark(c))
}

// Indic scripts carry vowel signs and viramas as combining marks; splitting them
// off would shred every word.
fn is_combining_mark(c: char) -> bool {
    matches!(c as u32,
        0x0300..=0x036F | 0x0900..=0x0903 | 0x093A..=0x094F | 0x0951..=0x0957 | 0x0962..=0x0963
        | 0x0981..=0x0983 | 0x09BC..=0x09D7 | 0x09E2..=0x09E3
        | 0x0D00..=0x0D03 | 0x0D3B..=0x0D57 | 0x0D62..=0x0D63
        | 0x200C..=0x200D)
}

/// A sentence split on whitespace, keeping the separators so it can be
/// reassembled byte-for-byte when no word is removed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpacedWords<'a> {
    pub leading: &'a str,
    /// `(separator before the word, word)`; the first separator is empty.
    pub words: Vec<(&'a str, &'a str)>,
    pub trailing: &'a str,
}

impl<'a> SpacedWords<'a> {
    pub fn split(text: &'a str) -> Self {
        let mut words = Vec::new();
        let mut leading = "";
        let mut sep_start = 0;
        let mut word_start: Option<usize> = None;
        for (i, c) in text.char_indices() {
            match (c.is_whitespace(), word_start) {
                (true, Some(ws)) => {
                    push_word(&mut words, &mut leading, text, sep_start, ws, i);
                    sep_start = i;
                    word_start = None;
                }
                (false, None) => word_start = Some(i),
                _ => {}
            }
        }
        if let Some(ws) = word_start {
            push_word(&mut words, &mut leading, text, sep_start, ws, text.len());
            sep_start = text.len();
        }
        if words.is_empty() {
            leading = text;
            sep_start = text.len();
        }
        Self {
            leading,
            words,
            trailing: &text[sep_start..],
        }
    }

    /// Reassembles the sentence from (possibly edited) words. `None` entries
    /// are removed together with the separator in front of them. Returns an
    /// empty string when every word is gone.
    pub fn join<S: AsRef<str>>(&self, words: &[Option<S>]) -> String {
        debug_assert_eq!(words.len(), self.words.len());
        if !self.words.is_empty() && words.iter().all(Option::is_none) {
            return String::new();
        }
        let mut out = String::from(self.leading);
        let mut first = true;
        for ((sep, _), w) in self.words.iter().zip(words) {
            if let Some(w) = w {
                if !first {
                    out.push_str(sep);
                }
                out.push_str(w.as_ref());
                first = false;
            }
        }
        out.push_str(self.trailing);
        out
    }
}

fn push_word<'a>(
    words: &mut Vec<(&'a str, &'a str)>,
    leading: &mut &'a str,
    text: &'a str,
    sep_start: usize,
    word_start: usize,
    end: usize,
) {
    if words.is_empty() {
        *leading = &text[sep_start..word_start];
        words.push(("", &text[word_start..end]));
    } else {
        words.push((&text[sep_start..word_start], &text[word_start..end]));
    }
}
