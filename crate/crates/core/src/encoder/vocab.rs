use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::EncoderError;

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";

/// Special tokens occupy ids 0..4 in this order.
pub const SPECIALS: [&str; 4] = [PAD, UNK, CLS, SEP];

/// Token/id mapping built from a corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

/// Lowercases and splits on whitespace and punctuation boundaries.
///
/// Runs of alphanumeric characters or `_` form one word; every other
/// non-whitespace character is a token of its own.
pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() || c == '_' {
            word.extend(c.to_lowercase());
        } else {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
            if !c.is_whitespace() {
                out.push(c.to_lowercase().collect());
            }
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

impl Vocabulary {
    /// Builds a vocabulary from texts, keeping words with frequency at least
    /// `min_count`. Ordered by frequency descending, then lexicographically.
    pub fn build<'a, I>(texts: I, min_count: usize) -> Result<Self, EncoderError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut total = 0usize;
        for text in texts {
            for w in split_words(text) {
                total += 1;
                *counts.entry(w).or_default() += 1;
            }
        }
        if total == 0 {
            return Err(EncoderError::EmptyCorpus);
        }
        let mut kept: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(w, c)| *c >= min_count.max(1) && !SPECIALS.contains(&w.as_str()))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(Self::from_tokens(
            SPECIALS
                .iter()
                .map(|s| s.to_string())
                .chain(kept.into_iter().map(|(w, _)| w))
                .collect(),
        ))
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self { tokens, ids }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn pad_id(&self) -> u32 {
        0
    }

    pub fn unk_id(&self) -> u32 {
        1
    }

    pub fn cls_id(&self) -> u32 {
        2
    }

    pub fn sep_id(&self) -> u32 {
        3
    }

    pub fn is_special(&self, id: u32) -> bool {
        (id as usize) < SPECIALS.len()
    }

    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        split_words(text)
            .iter()
            .map(|w| self.id(w).unwrap_or(self.unk_id()))
            .collect()
    }

    /// One token per line, line number = id.
    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        fs::write(path, s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EncoderError> {
        let text = fs::read_to_string(path)?;
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        if tokens.len() < SPECIALS.len() || tokens[..4] != SPECIALS.map(String::from) {
            return Err(EncoderError::BadVocab("special tokens missing or out of order".into()));
        }
        let vocab = Self::from_tokens(tokens);
        if vocab.ids.len() != vocab.tokens.len() {
            return Err(EncoderError::BadVocab("duplicate token".into()));
        }
        Ok(vocab)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequency_threshold() {
        let v = Vocabulary::build(["a a b"], 2).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.id("a"), Some(4));
        assert_eq!(v.id("b"), None);
    }

    #[test]
    fn single_token_corpus() {
        let v = Vocabulary::build(["x"], 1).unwrap();
        assert_eq!(v.id("x"), Some(4));
        assert_eq!(v.id(CLS), Some(2));
        assert_eq!(v.token(0), Some(PAD));
    }

    #[test]
    fn empty_corpus_is_rejected() {
        assert!(matches!(Vocabulary::build(["  ", ""], 1), Err(EncoderError::EmptyCorpus)));
    }

    #[test]
    fn ties_sorted_lexicographically() {
        let v = Vocabulary::build(["c b a b c a d"], 1).unwrap();
        let order: Vec<&str> = (4..8).map(|i| v.token(i).unwrap()).collect();
        assert_eq!(order, vec!["a", "b", "c", "d"]);
    }

    #[test]
    fn tokenize_lowercases_and_maps_unknowns() {
        let v = Vocabulary::build(["un fao what is"], 1).unwrap();
        assert_eq!(v.tokenize("UN FAO"), vec![v.id("un").unwrap(), v.id("fao").unwrap()]);
        assert_eq!(v.tokenize("zzzz"), vec![v.unk_id()]);
        assert!(v.tokenize("").is_empty());
    }

    #[test]
    fn tokenize_matches_word_by_word() {
        let v = Vocabulary::build(["what is un fao ?"], 1).unwrap();
        let text = "what is un fao?";
        let whole = v.tokenize(text);
        let pieces: Vec<u32> = text.split_whitespace().flat_map(|w| v.tokenize(w)).collect();
        assert_eq!(whole, pieces);
        assert_eq!(*whole.last().unwrap(), v.id("?").unwrap());
    }

    #[test]
    fn synthetic_words_stay_whole() {
        assert_eq!(split_words("t07_w013, noise_w211."), vec!["t07_w013", ",", "noise_w211", "."]);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let v = Vocabulary::build(["alpha beta beta gamma"], 1).unwrap();
        let p = dir.path().join("vocab.txt");
        v.save(&p).unwrap();
        assert_eq!(Vocabulary::load(&p).unwrap(), v);
    }
}
