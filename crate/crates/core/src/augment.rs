//! Word-level augmentation: each variant applies exactly one drop, swap,
//! replace or insert to the whitespace tokens of a sentence.

use std::collections::BTreeSet;
use std::io::BufRead;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{self, mix, sentence_hash};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentOp {
    Drop,
    Swap,
    Replace,
    Insert,
}

/// A fully specified single edit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Edit {
    Drop(usize),
    Swap(usize, usize),
    Replace(usize, String),
    /// Insert the word so that it ends up at this index.
    Insert(usize, String),
}

impl Edit {
    pub fn op(&self) -> AugmentOp {
        match self {
            Edit::Drop(_) => AugmentOp::Drop,
            Edit::Swap(..) => AugmentOp::Swap,
            Edit::Replace(..) => AugmentOp::Replace,
            Edit::Insert(..) => AugmentOp::Insert,
        }
    }

    pub fn apply(&self, tokens: &mut Vec<String>) {
        match self {
            Edit::Drop(i) => {
                tokens.remove(*i);
            }
            Edit::Swap(i, j) => tokens.swap(*i, *j),
            Edit::Replace(i, w) => tokens[*i] = w.clone(),
            Edit::Insert(i, w) => tokens.insert(*i, w.clone()),
        }
    }
}

/// Non-empty, sorted, de-duplicated word list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab(Vec<String>);

impl Vocab {
    pub fn new<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = words
            .into_iter()
            .map(Into::into)
            .filter(|w: &String| !w.trim().is_empty())
            .collect();
        if set.is_empty() {
            return Err(Error::Argument("augmentation vocabulary is empty".into()));
        }
        Ok(Vocab(set.into_iter().collect()))
    }

    /// The distinct whitespace tokens of a corpus.
    pub fn from_corpus<S: AsRef<str>>(sentences: &[S]) -> Result<Self> {
        Self::new(sentences.iter().flat_map(|s| {
            s.as_ref()
                .split_whitespace()
                .map(str::to_owned)
                .collect::<Vec<_>>()
        }))
    }

    /// One word per line, UTF-8.
    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self> {
        let words = reader.lines().collect::<std::io::Result<Vec<_>>>()?;
        Self::new(words.into_iter().map(|w| w.trim().to_owned()))
    }

    pub fn words(&self) -> &[String] {
        &self.0
    }

    pub fn digest(&self) -> u64 {
        seed::fnv1a(self.0.join("\n").as_bytes())
    }
}

/// Chooses one admissible edit uniformly at random.
///
/// Drop and swap need two tokens. Replace needs a position whose word can be
/// changed to a different vocabulary word. Insert is always admissible.
pub fn choose_edit<R: Rng>(tokens: &[String], vocab: &Vocab, rng: &mut R) -> Edit {
    let words = vocab.words();
    let replaceable: Vec<usize> = (0..tokens.len())
        .filter(|&i| words.iter().any(|w| *w != tokens[i]))
        .collect();
    let mut ops = Vec::with_capacity(4);
    if tokens.len() >= 2 {
        ops.extend([AugmentOp::Drop, AugmentOp::Swap]);
    }
    if !replaceable.is_empty() {
        ops.push(AugmentOp::Replace);
    }
    ops.push(AugmentOp::Insert);

    match ops[rng.random_range(0..ops.len())] {
        AugmentOp::Drop => Edit::Drop(rng.random_range(0..tokens.len())),
        AugmentOp::Swap => {
            let i = rng.random_range(0..tokens.len());
            let mut j = rng.random_range(0..tokens.len() - 1);
            if j >= i {
                j += 1;
            }
            Edit::Swap(i, j)
        }
        AugmentOp::Replace => {
            let i = replaceable[rng.random_range(0..replaceable.len())];
            let choices: Vec<&String> = words.iter().filter(|w| **w != tokens[i]).collect();
            Edit::Replace(i, choices[rng.random_range(0..choices.len())].clone())
        }
        AugmentOp::Insert => {
            let i = rng.random_range(0..=tokens.len());
            Edit::Insert(i, words[rng.random_range(0..words.len())].clone())
        }
    }
}

pub fn augment_once(sentence: &str, seed: u64, vocab: &Vocab) -> String {
    let mut tokens: Vec<String> = sentence.split_whitespace().map(str::to_owned).collect();
    let edit = choose_edit(&tokens, vocab, &mut seed::rng(seed));
    edit.apply(&mut tokens);
    tokens.join(" ")
}

/// Seed of variant `i` of `sentence`.
pub fn variant_seed(sentence: &str, master_seed: u64, i: usize) -> u64 {
    mix(master_seed, sentence_hash(sentence), i as u64)
}

/// `n` augmented variants; variant `i` uses [`variant_seed`].
pub fn augment_n(sentence: &str, n: usize, master_seed: u64, vocab: &Vocab) -> Result<Vec<String>> {
    if n == 0 {
        return Err(Error::Argument("augment_n needs n >= 1".into()));
    }
    Ok((0..n)
        .map(|i| augment_once(sentence, variant_seed(sentence, master_seed, i), vocab))
        .collect())
}
