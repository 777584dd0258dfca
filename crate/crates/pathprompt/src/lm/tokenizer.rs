//! Word-level tokenizer over a corpus-built vocabulary.

use std::collections::HashMap;
use std::path::Path;

use super::LmError;

pub const BOS: u32 = 0;
pub const EOS: u32 = 1;
pub const UNK: u32 = 2;
pub const GRAPH_SLOT: u32 = 3;

const RESERVED: [&str; 4] = ["<bos>", "<eos>", "<unk>", "<graph>"];

/// Characters that tokenize as standalone single-character tokens.
const PUNCT: &[char] = &['.', ',', ':', ';', '?', '!', '(', ')', '[', ']', '"', '\'', '_', '-'];

/// Whitespace-and-punctuation word tokenizer. Text is lowercased, listed
/// punctuation splits into single-character tokens, and out-of-vocabulary
/// words map to `<unk>`. Encode then decode is the identity on text whose
/// lowercase tokens are in-vocabulary and single-space separated.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

/// Split text into lowercase word and punctuation tokens.
pub fn split_text(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for c in text.to_lowercase().chars() {
        if c.is_whitespace() {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
        } else if PUNCT.contains(&c) {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
            out.push(c.to_string());
        } else {
            word.push(c);
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

impl Tokenizer {
    /// Build a vocabulary from corpus lines: reserved ids first, then every
    /// distinct token in first-appearance order.
    pub fn from_corpus<'a>(lines: impl IntoIterator<Item = &'a str>) -> Self {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, u32> =
            tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        for line in lines {
            for tok in split_text(line) {
                if !index.contains_key(&tok) {
                    index.insert(tok.clone(), tokens.len() as u32);
                    tokens.push(tok);
                }
            }
        }
        Tokenizer { tokens, index }
    }

    pub fn vocab_size(&self) -> usize {
        self.tokens.len()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        split_text(text)
            .into_iter()
            .map(|tok| self.index.get(&tok).copied().unwrap_or(UNK))
            .collect()
    }

    /// Join tokens with single spaces.
    pub fn decode(&self, ids: &[u32]) -> String {
        let parts: Vec<&str> = ids.iter().map(|&id| self.token(id).unwrap_or("<unk>")).collect();
        parts.join(" ")
    }

    /// One token per line, line number = id, reserved ids first.
    pub fn save(&self, path: &Path) -> Result<(), LmError> {
        std::fs::write(path, self.tokens.join("\n") + "\n")
            .map_err(|e| LmError::Io { path: path.display().to_string(), source: e })
    }

    pub fn load(path: &Path) -> Result<Self, LmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LmError::Io { path: path.display().to_string(), source: e })?;
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        for (i, expect) in RESERVED.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*expect) {
                return Err(LmError::BadVocab {
                    path: path.display().to_string(),
                    detail: format!("line {} must be `{}`", i, expect),
                });
            }
        }
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Ok(Tokenizer { tokens, index })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_text_encodes_to_nothing() {
        let t = Tokenizer::from_corpus(["hello world"]);
        assert!(t.encode("").is_empty());
    }

    #[test]
    fn known_word_round_trips() {
        let t = Tokenizer::from_corpus(["hello world"]);
        let ids = t.encode("hello");
        assert_eq!(ids.len(), 1);
        assert_eq!(t.decode(&ids), "hello");
    }

    #[test]
    fn unseen_word_maps_to_unk() {
        let t = Tokenizer::from_corpus(["hello"]);
        assert_eq!(t.encode("goodbye"), vec![UNK]);
    }

    #[test]
    fn punctuation_splits_off() {
        let t = Tokenizer::from_corpus(["base . travel . city visited_by paris ?"]);
        let ids = t.encode("base.travel.city visited_by paris?");
        let decoded = t.decode(&ids);
        assert_eq!(decoded, "base . travel . city visited _ by paris ?");
    }

    #[test]
    fn reserved_ids_come_first() {
        let t = Tokenizer::from_corpus(["alpha"]);
        assert_eq!(t.id("<bos>"), Some(BOS));
        assert_eq!(t.id("<eos>"), Some(EOS));
        assert_eq!(t.id("<unk>"), Some(UNK));
        assert_eq!(t.id("<graph>"), Some(GRAPH_SLOT));
        assert_eq!(t.id("alpha"), Some(4));
    }

    #[test]
    fn vocab_file_round_trips() {
        let t = Tokenizer::from_corpus(["alpha beta . gamma"]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        t.save(&path).unwrap();
        let t2 = Tokenizer::load(&path).unwrap();
        assert_eq!(t.vocab_size(), t2.vocab_size());
        assert_eq!(t2.encode("beta . alpha"), t.encode("beta . alpha"));
        // Reserved header is enforced.
        std::fs::write(&path, "x\ny\nz\nw\n").unwrap();
        assert!(Tokenizer::load(&path).is_err());
    }

    proptest! {
        #[test]
        fn encode_decode_round_trips_canonical_text(words in proptest::collection::vec("[a-z]{1,6}", 1..8)) {
            let corpus = words.join(" ");
            let t = Tokenizer::from_corpus([corpus.as_str()]);
            let ids = t.encode(&corpus);
            prop_assert_eq!(t.decode(&ids), corpus);
        }
    }
}
