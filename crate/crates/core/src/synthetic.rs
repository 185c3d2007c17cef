//! Small generated tasks with known structure.
//!
//! - [`synthetic_sts`]: sentences rendered from discrete latent vectors, gold
//!   similarity `1 / (1 + l1(latent_a - latent_b))`.
//! - [`few_shot_task`]: four classes, each marked by one keyword inside
//!   neutral filler.
//! - [`planted_signal`]: embeddings where only the first ten features depend
//!   on the gold variable.

use std::collections::HashSet;

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::distance::from_single;
use crate::error::{Error, Result};
use crate::eval::EmbeddingIndex;
use crate::model::{LabeledSentence, ProbEmbedding, ScoredPair, UncertaintyMode};
use crate::seed;

/// Each latent coordinate `j` at level `l` renders as `l` copies of
/// `HIGH[j]` followed by `4 - l` copies of `LOW[j]`, so token overlap
/// tracks the l1 distance between latents.
const LOW: [&str; LATENT_DIM] = ["small", "pale", "slow", "quiet"];
const HIGH: [&str; LATENT_DIM] = ["big", "dark", "fast", "loud"];
const LEVELS: u8 = 5;

/// Number of latent coordinates, each with 5 ordered levels.
pub const LATENT_DIM: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSts {
    pub corpus: Vec<String>,
    pub latents: Vec<[u8; LATENT_DIM]>,
    pub pairs: Vec<ScoredPair>,
}

fn render(latent: &[u8; LATENT_DIM]) -> String {
    let mut words = vec!["the"];
    for (j, &level) in latent.iter().enumerate() {
        words.extend(std::iter::repeat(HIGH[j]).take(level as usize));
        words.extend(std::iter::repeat(LOW[j]).take((LEVELS - 1 - level) as usize));
    }
    words.join(" ")
}

pub fn latent_l1(a: &[u8; LATENT_DIM], b: &[u8; LATENT_DIM]) -> u32 {
    a.iter().zip(b).map(|(x, y)| x.abs_diff(*y) as u32).sum()
}

/// `n_sentences` distinct sentences and `n_pairs` pairs of distinct sentences.
pub fn synthetic_sts(n_sentences: usize, n_pairs: usize, seed: u64) -> Result<SyntheticSts> {
    let capacity = (LEVELS as usize).pow(LATENT_DIM as u32);
    if n_sentences < 2 || n_sentences > capacity {
        return Err(Error::Argument(format!(
            "n_sentences must lie in 2..={capacity}"
        )));
    }
    let mut rng = seed::named_rng(seed, "synthetic_sts");
    let mut seen = HashSet::new();
    let (mut corpus, mut latents) = (Vec::new(), Vec::new());
    while corpus.len() < n_sentences {
        let latent: [u8; LATENT_DIM] = std::array::from_fn(|_| rng.random_range(0..LEVELS));
        let s = render(&latent);
        if seen.insert(s.clone()) {
            corpus.push(s);
            latents.push(latent);
        }
    }
    let pairs = (0..n_pairs)
        .map(|_| {
            let a = rng.random_range(0..n_sentences);
            let mut b = rng.random_range(0..n_sentences - 1);
            if b >= a {
                b += 1;
            }
            ScoredPair {
                sent_a: corpus[a].clone(),
                sent_b: corpus[b].clone(),
                gold: 1.0 / (1.0 + latent_l1(&latents[a], &latents[b]) as f64),
            }
        })
        .collect();
    Ok(SyntheticSts {
        corpus,
        latents,
        pairs,
    })
}

pub const FEW_SHOT_CLASSES: [(&str, &str); 4] = [
    ("sports", "football"),
    ("music", "guitar"),
    ("weather", "rain"),
    ("finance", "stocks"),
];

const FILLER: [&str; 24] = [
    "the", "a", "people", "today", "said", "about", "new", "week", "city", "some", "very", "many",
    "after", "before", "with", "from", "local", "report", "first", "again", "later", "small",
    "old", "long",
];

#[derive(Debug, Clone, PartialEq)]
pub struct FewShotTask {
    pub train: Vec<LabeledSentence>,
    pub test: Vec<LabeledSentence>,
}

impl FewShotTask {
    pub fn sentences(&self) -> Vec<String> {
        self.train
            .iter()
            .chain(&self.test)
            .map(|l| l.sentence.clone())
            .collect()
    }
}

/// Keyword classification with `train_per_class` / `test_per_class`
/// examples per class. All sentences are distinct.
pub fn few_shot_task(
    train_per_class: usize,
    test_per_class: usize,
    seed: u64,
) -> Result<FewShotTask> {
    if train_per_class == 0 || test_per_class == 0 {
        return Err(Error::Argument(
            "need at least one example per class and split".into(),
        ));
    }
    let mut rng = seed::named_rng(seed, "few_shot");
    let mut seen = HashSet::new();
    let mut make = |per_class: usize| {
        let mut out = Vec::with_capacity(per_class * FEW_SHOT_CLASSES.len());
        for _ in 0..per_class {
            for (label, keyword) in FEW_SHOT_CLASSES {
                let sentence = loop {
                    let len = rng.random_range(4..=8);
                    let mut words: Vec<&str> = (0..len)
                        .map(|_| *FILLER.choose(&mut rng).expect("non-empty"))
                        .collect();
                    let at = rng.random_range(0..=len);
                    words.insert(at, keyword);
                    let s = words.join(" ");
                    if seen.insert(s.clone()) {
                        break s;
                    }
                };
                out.push(LabeledSentence {
                    sentence,
                    label: label.to_string(),
                });
            }
        }
        out
    };
    let train = make(train_per_class);
    let test = make(test_per_class);
    Ok(FewShotTask { train, test })
}

pub const SIGNAL_FEATURES: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedSignal {
    pub pairs: Vec<ScoredPair>,
    pub model_estimates: Vec<ProbEmbedding>,
    pub index: EmbeddingIndex,
}

/// `n_sentences` embeddings of dimension `k`. Features `0..10` carry a
/// scaled copy of a hidden scalar and have variance near 1; the remaining
/// features are small noise with variance near 0.1. Gold similarity of a
/// pair is `1 / (1 + |t_a - t_b|)`.
pub fn planted_signal(
    n_sentences: usize,
    n_pairs: usize,
    k: usize,
    seed: u64,
) -> Result<PlantedSignal> {
    if k < 5 * SIGNAL_FEATURES {
        return Err(Error::Argument(format!(
            "k must be at least {}",
            5 * SIGNAL_FEATURES
        )));
    }
    if n_sentences < 2 {
        return Err(Error::Argument("need at least two sentences".into()));
    }
    let mut rng = seed::named_rng(seed, "planted_signal");
    let weights: Vec<f64> = (0..SIGNAL_FEATURES)
        .map(|_| rng.random_range(2.0..5.0))
        .collect();
    let hidden: Vec<f64> = (0..n_sentences)
        .map(|_| rng.random_range(0.0..1.0))
        .collect();
    let model_estimates = hidden
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let mu = (0..k)
                .map(|j| match weights.get(j) {
                    Some(w) => w * t + rng.random_range(-0.01..0.01),
                    None => rng.random_range(-0.05..0.05),
                })
                .collect();
            let sigma = (0..k)
                .map(|j| {
                    (if j < SIGNAL_FEATURES { 1.0 } else { 0.1 }) + rng.random_range(0.0..0.01)
                })
                .collect();
            ProbEmbedding::new(format!("s{i}"), UncertaintyMode::Model, mu, sigma, 15)
        })
        .collect::<Result<Vec<_>>>()?;
    let pairs = (0..n_pairs)
        .map(|_| {
            let a = rng.random_range(0..n_sentences);
            let mut b = rng.random_range(0..n_sentences - 1);
            if b >= a {
                b += 1;
            }
            ScoredPair {
                sent_a: format!("s{a}"),
                sent_b: format!("s{b}"),
                gold: 1.0 / (1.0 + (hidden[a] - hidden[b]).abs()),
            }
        })
        .collect();
    let index = model_estimates
        .iter()
        .map(|pe| (pe.sentence_id().to_string(), from_single(pe)))
        .collect();
    Ok(PlantedSignal {
        pairs,
        model_estimates,
        index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sts_shape() {
        let d = synthetic_sts(50, 200, 1).unwrap();
        assert_eq!(d.corpus.len(), 50);
        assert_eq!(d.pairs.len(), 200);
        assert_eq!(d.corpus.iter().collect::<HashSet<_>>().len(), 50);
        for p in &d.pairs {
            assert_ne!(p.sent_a, p.sent_b);
            assert!(p.gold > 0.0 && p.gold <= 1.0);
        }
        assert_eq!(d, synthetic_sts(50, 200, 1).unwrap());
    }

    #[test]
    fn rendering_is_ordinal() {
        assert_eq!(
            render(&[0, 4, 1, 2]),
            "the small small small small dark dark dark dark fast slow slow slow loud loud quiet quiet"
        );
    }

    #[test]
    fn gold_follows_latents() {
        let d = synthetic_sts(10, 30, 4).unwrap();
        for p in &d.pairs {
            let a = d.corpus.iter().position(|s| *s == p.sent_a).unwrap();
            let b = d.corpus.iter().position(|s| *s == p.sent_b).unwrap();
            let l1 = latent_l1(&d.latents[a], &d.latents[b]) as f64;
            assert_eq!(p.gold, 1.0 / (1.0 + l1));
        }
    }

    #[test]
    fn few_shot_keywords() {
        let t = few_shot_task(10, 5, 2).unwrap();
        assert_eq!(t.train.len(), 40);
        assert_eq!(t.test.len(), 20);
        for row in t.train.iter().chain(&t.test) {
            let (_, kw) = FEW_SHOT_CLASSES
                .iter()
                .find(|(l, _)| *l == row.label)
                .unwrap();
            assert!(row.sentence.split(' ').any(|w| w == *kw));
        }
        assert_eq!(t.sentences().iter().collect::<HashSet<_>>().len(), 60);
    }

    #[test]
    fn planted_signal_shape() {
        let p = planted_signal(40, 100, 50, 0).unwrap();
        assert_eq!(p.model_estimates.len(), 40);
        assert_eq!(p.index.len(), 40);
        assert!(planted_signal(40, 100, 20, 0).is_err());
    }
}
