use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

/// Ordered word list with the three special tokens at indices 0, 1 and 2.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from explicit words. Special tokens are placed
    /// first; duplicates (including specials) are dropped.
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Self {
            words: Vec::new(),
            index: HashMap::new(),
        };
        for w in [BOS, EOS, UNK] {
            v.push(w);
        }
        for w in words {
            v.push(w.as_ref());
        }
        v
    }

    /// Most frequent words of a corpus, ties broken by first occurrence.
    /// `max_words` counts regular words only.
    pub fn from_corpus(corpus: &[Vec<String>], max_words: Option<usize>) -> Self {
        let mut counts: HashMap<&str, (usize, usize)> = HashMap::new();
        let mut order = 0;
        for w in corpus.iter().flatten() {
            let e = counts.entry(w.as_str()).or_insert_with(|| {
                order += 1;
                (0, order)
            });
            e.0 += 1;
        }
        let mut ranked: Vec<_> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.cmp(&b.1 .1)));
        let keep = max_words.unwrap_or(ranked.len());
        Self::from_words(ranked.into_iter().take(keep).map(|(w, _)| w))
    }

    fn push(&mut self, w: &str) {
        if !self.index.contains_key(w) {
            self.index.insert(w.to_string(), self.words.len());
            self.words.push(w.to_string());
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    /// True when no regular words are present.
    pub fn is_empty(&self) -> bool {
        self.words.len() <= 3
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    /// Index of `word`, or of the unknown token.
    pub fn id(&self, word: &str) -> usize {
        self.get(word).unwrap_or(self.unk())
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.words.get(id).map(String::as_str)
    }

    pub fn bos(&self) -> usize {
        0
    }

    pub fn eos(&self) -> usize {
        1
    }

    pub fn unk(&self) -> usize {
        2
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(words: Vec<String>) -> Result<Self> {
        if words.len() < 3 || words[0] != BOS || words[1] != EOS || words[2] != UNK {
            return Err(Error::Format(
                "vocabulary must start with <s> </s> <unk>".into(),
            ));
        }
        let v = Self::from_words(&words[3..]);
        if v.len() != words.len() {
            return Err(Error::Format("vocabulary contains duplicate words".into()));
        }
        Ok(v)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.words
    }
}

/// Splits text into whitespace-tokenized sentences, one per non-empty line.
pub fn parse_corpus(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(|l| l.split_whitespace().map(str::to_string).collect::<Vec<_>>())
        .filter(|s| !s.is_empty())
        .collect()
}
