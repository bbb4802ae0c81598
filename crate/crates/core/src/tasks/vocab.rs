//! Word vocabulary with letter-by-letter spell-out of rare words.
//!
//! SPACE convention: a SPACE token sits at every word boundary that touches
//! a spelled-out word. Boundaries between two in-vocabulary words are
//! implied.

use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Entry {
    Pad,
    Go,
    Eos,
    Space,
    Char(char),
    Word(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    entries: Vec<Entry>,
    index: HashMap<Entry, usize>,
}

impl Vocabulary {
    pub const PAD: usize = 0;
    pub const GO: usize = 1;
    pub const EOS: usize = 2;
    pub const SPACE: usize = 3;

    /// Reserved symbols, then `chars`, then `words`, in the given order.
    pub fn new(chars: impl IntoIterator<Item = char>, words: impl IntoIterator<Item = String>) -> Self {
        let mut v = Vocabulary {
            entries: Vec::new(),
            index: HashMap::new(),
        };
        for e in [Entry::Pad, Entry::Go, Entry::Eos, Entry::Space] {
            v.push(e);
        }
        for c in chars {
            v.push(Entry::Char(c));
        }
        for w in words {
            v.push(Entry::Word(w));
        }
        v
    }

    fn push(&mut self, e: Entry) {
        if !self.index.contains_key(&e) {
            self.index.insert(e.clone(), self.entries.len());
            self.entries.push(e);
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, id: usize) -> Result<&Entry> {
        self.entries.get(id).ok_or(Error::Token {
            id,
            vocab: self.entries.len(),
        })
    }

    pub fn id(&self, e: &Entry) -> Option<usize> {
        self.index.get(e).copied()
    }

    pub fn word_count(&self) -> usize {
        self.entries.iter().filter(|e| matches!(e, Entry::Word(_))).count()
    }

    /// Whitespace-separated words to ids.
    pub fn encode_text(&self, text: &str) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        let mut prev_spelled = false;
        for (i, word) in text.split_whitespace().enumerate() {
            match self.id(&Entry::Word(word.to_string())) {
                Some(id) => {
                    if prev_spelled {
                        out.push(Self::SPACE);
                    }
                    out.push(id);
                    prev_spelled = false;
                }
                None => {
                    if i > 0 {
                        out.push(Self::SPACE);
                    }
                    for c in word.chars() {
                        out.push(self.id(&Entry::Char(c)).ok_or(Error::UnknownChar(c))?);
                    }
                    prev_spelled = true;
                }
            }
        }
        Ok(out)
    }

    /// Inverse of [`encode_text`](Self::encode_text); words are joined by
    /// single spaces. PAD, GO and EOS are skipped.
    pub fn decode_text(&self, ids: &[usize]) -> Result<String> {
        let mut words: Vec<String> = Vec::new();
        let mut spelled = String::new();
        for &id in ids {
            match self.entry(id)? {
                Entry::Char(c) => spelled.push(*c),
                Entry::Word(w) => {
                    if !spelled.is_empty() {
                        words.push(std::mem::take(&mut spelled));
                    }
                    words.push(w.clone());
                }
                Entry::Space => {
                    if !spelled.is_empty() {
                        words.push(std::mem::take(&mut spelled));
                    }
                }
                Entry::Pad | Entry::Go | Entry::Eos => {}
            }
        }
        if !spelled.is_empty() {
            words.push(spelled);
        }
        Ok(words.join(" "))
    }
}

/// Reserved symbols, every character of the corpus (sorted), and the
/// `word_cap` most frequent words (ties broken alphabetically).
pub fn build_vocab<'a>(corpus: impl IntoIterator<Item = &'a str>, word_cap: usize) -> Vocabulary {
    let mut chars = BTreeSet::new();
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for line in corpus {
        for w in line.split_whitespace() {
            chars.extend(w.chars());
            *counts.entry(w).or_default() += 1;
        }
    }
    let mut words: Vec<(&str, usize)> = counts.into_iter().collect();
    words.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    Vocabulary::new(chars, words.into_iter().take(word_cap).map(|(w, _)| w.to_string()))
}
