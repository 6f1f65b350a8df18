use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::lstm_lm::LstmLm;
use super::ngram::NgramLm;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub rank: usize,
    /// Log-domain acoustic score.
    pub acoustic: f64,
    /// Log-domain score of the decoder's own language model.
    pub lm: f64,
    pub words: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NBestList {
    pub utt_id: String,
    pub hypotheses: Vec<Hypothesis>,
}

/// Reads lines of `utt_id rank acoustic lm word…`. Lists keep the order in
/// which utterance ids first appear.
pub fn parse_nbest(text: &str) -> Result<Vec<NBestList>> {
    let mut lists: Vec<NBestList> = Vec::new();
    let mut slot: HashMap<String, usize> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let mut toks = line.split_whitespace();
        let Some(utt) = toks.next() else { continue };
        let err = |msg: &str| Error::Parse {
            line: n,
            msg: msg.into(),
        };
        let rank = toks
            .next()
            .and_then(|t| t.parse::<usize>().ok())
            .ok_or_else(|| err("expected an integer rank"))?;
        let mut score = || {
            toks.next()
                .and_then(|t| t.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| err("expected a finite score"))
        };
        let acoustic = score()?;
        let lm = score()?;
        let hyp = Hypothesis {
            rank,
            acoustic,
            lm,
            words: toks.map(str::to_string).collect(),
        };
        let idx = *slot.entry(utt.to_string()).or_insert_with(|| {
            lists.push(NBestList {
                utt_id: utt.to_string(),
                hypotheses: Vec::new(),
            });
            lists.len() - 1
        });
        lists[idx].hypotheses.push(hyp);
    }
    Ok(lists)
}

pub fn write_nbest(lists: &[NBestList]) -> String {
    let mut out = String::new();
    for l in lists {
        for h in &l.hypotheses {
            let _ = write!(out, "{} {} {} {}", l.utt_id, h.rank, h.acoustic, h.lm);
            for w in &h.words {
                out.push(' ');
                out.push_str(w);
            }
            out.push('\n');
        }
    }
    out
}

pub fn interpolate(p_lstm: f64, p_ngram: f64, lambda: f64) -> f64 {
    lambda * p_lstm + (1.0 - lambda) * p_ngram
}

/// Linear per-token probabilities (`</s>` included) under each component.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentProbs {
    pub lstm: Vec<Vec<f64>>,
    pub ngram: Vec<Vec<f64>>,
}

impl ComponentProbs {
    pub fn compute(lstm: &LstmLm, ngram: &NgramLm, corpus: &[Vec<String>]) -> Result<Self> {
        use rayon::prelude::*;
        let lstm_p = corpus
            .par_iter()
            .map(|s| Ok(lstm.token_log_probs(s)?.into_iter().map(f64::exp).collect()))
            .collect::<Result<Vec<Vec<f64>>>>()?;
        let ngram_p = corpus
            .par_iter()
            .map(|s| {
                ngram
                    .token_log10_probs(s)
                    .into_iter()
                    .map(|v| 10f64.powf(v))
                    .collect()
            })
            .collect();
        Ok(Self {
            lstm: lstm_p,
            ngram: ngram_p,
        })
    }

    pub fn perplexity(&self, lambda: f64) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for (l, n) in self.lstm.iter().zip(&self.ngram) {
            for (&pl, &pn) in l.iter().zip(n) {
                total += interpolate(pl, pn, lambda).ln();
                count += 1;
            }
        }
        (-total / count.max(1) as f64).exp()
    }

    /// Grid search over λ ∈ {0, 0.05, …, 1}; the first minimum wins.
    pub fn optimize_lambda(&self) -> (f64, f64) {
        let mut best = (0.0, self.perplexity(0.0));
        for i in 1..=20 {
            let lambda = i as f64 / 20.0;
            let p = self.perplexity(lambda);
            if p < best.1 {
                best = (lambda, p);
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RescoreParams {
    /// Weight of the LSTM model in the interpolation.
    pub lambda: f64,
    pub lm_scale: f64,
    pub word_penalty: f64,
}

impl Default for RescoreParams {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            lm_scale: 1.0,
            word_penalty: 0.0,
        }
    }
}

impl RescoreParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config("lambda must lie in [0, 1]".into()));
        }
        if !self.lm_scale.is_finite() || !self.word_penalty.is_finite() {
            return Err(Error::Config(
                "lm scale and word penalty must be finite".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredHypothesis {
    pub hypothesis: Hypothesis,
    /// Natural-log probability of the sentence under the rescoring LM.
    pub lm_log_prob: f64,
    pub combined: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rescored {
    pub utt_id: String,
    /// Best first.
    pub entries: Vec<ScoredHypothesis>,
}

impl Rescored {
    pub fn best(&self) -> &ScoredHypothesis {
        &self.entries[0]
    }

    /// The reranked list with new ranks and the rescoring LM log-probability
    /// in the LM column.
    pub fn to_nbest(&self) -> NBestList {
        NBestList {
            utt_id: self.utt_id.clone(),
            hypotheses: self
                .entries
                .iter()
                .enumerate()
                .map(|(i, e)| Hypothesis {
                    rank: i + 1,
                    lm: e.lm_log_prob,
                    ..e.hypothesis.clone()
                })
                .collect(),
        }
    }
}

/// Sentence log-probability under the interpolated model. With one model
/// missing the other gets full weight; with neither, the list's own LM
/// score is used.
fn sentence_log_prob(
    words: &[String],
    baseline: f64,
    lstm: Option<&LstmLm>,
    ngram: Option<&NgramLm>,
    lambda: f64,
) -> Result<f64> {
    Ok(match (lstm, ngram) {
        (None, None) => baseline,
        (Some(l), None) => l.token_log_probs(words)?.iter().sum(),
        (None, Some(n)) => n.ngram_score(words) * std::f64::consts::LN_10,
        (Some(l), Some(n)) => {
            let pl = l.token_log_probs(words)?;
            let pn = n.token_log10_probs(words);
            pl.iter()
                .zip(&pn)
                .map(|(&a, &b)| interpolate(a.exp(), 10f64.powf(b), lambda).ln())
                .sum()
        }
    })
}

/// Reranks one N-best list by
/// `acoustic + lm_scale·ln P(words) + word_penalty·|words|`.
/// Equal scores are ordered by original rank, then by the word sequence,
/// so the result does not depend on input order.
pub fn rescore(
    list: &NBestList,
    lstm: Option<&LstmLm>,
    ngram: Option<&NgramLm>,
    params: &RescoreParams,
) -> Result<Rescored> {
    params.validate()?;
    if list.hypotheses.is_empty() {
        return Err(Error::Data(format!(
            "utterance {} has no hypotheses",
            list.utt_id
        )));
    }
    let mut entries = list
        .hypotheses
        .iter()
        .map(|h| {
            let lm_log_prob = sentence_log_prob(&h.words, h.lm, lstm, ngram, params.lambda)?;
            let combined = h.acoustic
                + params.lm_scale * lm_log_prob
                + params.word_penalty * h.words.len() as f64;
            if combined.is_nan() {
                return Err(Error::Degenerate(format!("NaN score in {}", list.utt_id)));
            }
            Ok(ScoredHypothesis {
                hypothesis: h.clone(),
                lm_log_prob,
                combined,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    entries.sort_by(|a, b| {
        b.combined
            .total_cmp(&a.combined)
            .then(a.hypothesis.rank.cmp(&b.hypothesis.rank))
            .then_with(|| a.hypothesis.words.cmp(&b.hypothesis.words))
    });
    Ok(Rescored {
        utt_id: list.utt_id.clone(),
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::Vocabulary;

    fn list(text: &str) -> NBestList {
        parse_nbest(text).unwrap().remove(0)
    }

    #[test]
    fn parse_and_write_roundtrip() {
        let text = "u1 1 -10.5 -3 a b\nu2 1 -4 -1\nu1 2 -11 -2.5 a c\n";
        let lists = parse_nbest(text).unwrap();
        assert_eq!(lists.len(), 2);
        assert_eq!(lists[0].hypotheses.len(), 2);
        assert!(lists[1].hypotheses[0].words.is_empty());
        assert_eq!(parse_nbest(&write_nbest(&lists)).unwrap(), lists);
    }

    #[test]
    fn parse_errors_carry_line() {
        match parse_nbest("u 1 -1 -1 a\nu x -1 -1 a") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(parse_nbest("u 1 -1 inf a").is_err());
    }

    #[test]
    fn single_hypothesis_unchanged() {
        let l = list("u 1 -3 -2 hello world");
        let r = rescore(&l, None, None, &RescoreParams::default()).unwrap();
        assert_eq!(r.best().hypothesis, l.hypotheses[0]);
        assert_eq!(r.best().combined, -5.0);
    }

    #[test]
    fn acoustic_only_ranking() {
        let l = list("u 1 -9 -1 a\nu 2 -3 -50 b c\nu 3 -5 0 d");
        let p = RescoreParams {
            lm_scale: 0.0,
            word_penalty: 0.0,
            ..RescoreParams::default()
        };
        let r = rescore(&l, None, None, &p).unwrap();
        let ranks: Vec<usize> = r.entries.iter().map(|e| e.hypothesis.rank).collect();
        assert_eq!(ranks, vec![2, 3, 1]);
    }

    #[test]
    fn empty_list_is_data_error() {
        let l = NBestList {
            utt_id: "u".into(),
            hypotheses: vec![],
        };
        assert!(matches!(
            rescore(&l, None, None, &RescoreParams::default()),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn lambda_endpoints_select_components() {
        let v = Vocabulary::from_words(["a", "b"]);
        let lstm = LstmLm::new(v, 3, 0).unwrap();
        let arpa =
            "\\data\\\nngram 1=4\n\n\\1-grams:\n-99 <s>\n-0.3 a\n-0.6 b\n-0.5 </s>\n\\end\\\n";
        let ng = NgramLm::parse_arpa(arpa).unwrap();
        let s = vec!["a".to_string(), "b".to_string()];
        let l0 = sentence_log_prob(&s, 0.0, Some(&lstm), Some(&ng), 0.0).unwrap();
        assert!((l0 - ng.ngram_score(&s) * std::f64::consts::LN_10).abs() < 1e-12);
        let l1 = sentence_log_prob(&s, 0.0, Some(&lstm), Some(&ng), 1.0).unwrap();
        assert!((l1 - 3.0 * (1.0f64 / 5.0).ln()).abs() < 1e-12);
    }
}
