use std::collections::HashMap;

use log::warn;
use serde::{Deserialize, Serialize};

use super::vocab::{BOS, EOS, UNK};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectConfig {
    pub order: usize,
    /// Pseudo-count added at every order.
    pub k: f64,
}

impl Default for SelectConfig {
    fn default() -> Self {
        Self { order: 5, k: 0.1 }
    }
}

/// Interpolated add-k n-gram estimated from a small in-domain corpus:
/// `P(w|h) = (c(h w) + k·V·P(w|h')) / (c(h) + k·V)` with an add-k unigram at
/// the bottom. Words outside the corpus share the `<unk>` slot.
#[derive(Debug, Clone)]
pub struct AddKLm {
    order: usize,
    k: f64,
    ids: HashMap<String, u32>,
    gram_counts: HashMap<Vec<u32>, f64>,
    context_counts: HashMap<Vec<u32>, f64>,
    total: f64,
}

impl AddKLm {
    pub fn estimate(corpus: &[Vec<String>], cfg: &SelectConfig) -> Result<Self> {
        if cfg.order == 0 || !(cfg.k > 0.0) {
            return Err(Error::Config(
                "selection LM needs order ≥ 1 and k > 0".into(),
            ));
        }
        if corpus.is_empty() {
            return Err(Error::Data("development corpus is empty".into()));
        }
        let mut ids: HashMap<String, u32> = HashMap::new();
        for w in [BOS, EOS, UNK] {
            let n = ids.len() as u32;
            ids.insert(w.into(), n);
        }
        for w in corpus.iter().flatten() {
            let n = ids.len() as u32;
            ids.entry(w.clone()).or_insert(n);
        }
        let mut lm = Self {
            order: cfg.order,
            k: cfg.k,
            ids,
            gram_counts: HashMap::new(),
            context_counts: HashMap::new(),
            total: 0.0,
        };
        for s in corpus {
            let toks = lm.encode(s);
            for i in 1..toks.len() {
                lm.total += 1.0;
                for n in 1..=lm.order.min(i + 1) {
                    let gram = &toks[i + 1 - n..=i];
                    *lm.gram_counts.entry(gram.to_vec()).or_default() += 1.0;
                    if n > 1 {
                        *lm.context_counts.entry(gram[..n - 1].to_vec()).or_default() += 1.0;
                    }
                }
            }
        }
        Ok(lm)
    }

    /// Vocabulary size used for smoothing; `<s>` is never predicted.
    fn v(&self) -> f64 {
        (self.ids.len() - 1) as f64
    }

    fn encode(&self, s: &[String]) -> Vec<u32> {
        let unk = self.ids[UNK];
        std::iter::once(self.ids[BOS])
            .chain(s.iter().map(|w| self.ids.get(w).copied().unwrap_or(unk)))
            .chain(std::iter::once(self.ids[EOS]))
            .collect()
    }

    fn prob(&self, history: &[u32], w: u32) -> f64 {
        let kv = self.k * self.v();
        let c1 = self.gram_counts.get(&vec![w]).copied().unwrap_or(0.0);
        let mut p = (c1 + self.k) / (self.total + kv);
        let keep = history.len().min(self.order - 1);
        let mut gram = Vec::with_capacity(keep + 1);
        for n in 1..=keep {
            let h = &history[history.len() - n..];
            let ch = self.context_counts.get(h).copied().unwrap_or(0.0);
            gram.clear();
            gram.extend_from_slice(h);
            gram.push(w);
            let c = self.gram_counts.get(&gram).copied().unwrap_or(0.0);
            p = (c + kv * p) / (ch + kv);
        }
        p
    }

    /// Per-token perplexity of one sentence, `</s>` included.
    pub fn sentence_perplexity(&self, sentence: &[String]) -> f64 {
        let toks = self.encode(sentence);
        let lp: f64 = (1..toks.len())
            .map(|i| self.prob(&toks[..i], toks[i]).ln())
            .sum();
        (-lp / (toks.len() - 1) as f64).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Chosen sentence indices in corpus order.
    pub indices: Vec<usize>,
    /// All indices sorted by ascending perplexity, ties by position.
    pub ranking: Vec<usize>,
    pub perplexities: Vec<f64>,
}

/// Ranks `train` sentences by their perplexity under an add-k model of
/// `dev` and keeps the `top_k` best.
pub fn select_data(
    train: &[Vec<String>],
    dev: &[Vec<String>],
    top_k: usize,
    cfg: &SelectConfig,
) -> Result<Selection> {
    use rayon::prelude::*;
    let lm = AddKLm::estimate(dev, cfg)?;
    let perplexities: Vec<f64> = train
        .par_iter()
        .map(|s| lm.sentence_perplexity(s))
        .collect();
    let mut ranking: Vec<usize> = (0..train.len()).collect();
    ranking.sort_by(|&a, &b| perplexities[a].total_cmp(&perplexities[b]).then(a.cmp(&b)));
    if top_k > train.len() {
        warn!(
            "top-k {top_k} exceeds corpus size {}; keeping everything",
            train.len()
        );
    }
    let mut indices: Vec<usize> = ranking.iter().take(top_k).copied().collect();
    indices.sort_unstable();
    Ok(Selection {
        indices,
        ranking,
        perplexities,
    })
}
