use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::vocab::Vocabulary;
use crate::error::{Error, Result};
use crate::neural::{
    read_checkpoint, softmax_columns, train, write_checkpoint, Example, Layer, LayerSpec, SeqInput,
    SeqTarget, SequenceNetwork, Topology, TrainConfig,
};

const CHECKPOINT_KIND: &str = "lstm-lm";

/// Recurrent language model: 1-of-N input, one LSTM layer, soft-max output
/// over the vocabulary. There is no projection layer; a token selects one
/// column of the input weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLm {
    vocab: Vocabulary,
    net: SequenceNetwork,
}

fn topology(vocab: usize, hidden: usize) -> Topology {
    Topology {
        input_dim: vocab,
        layers: vec![
            LayerSpec::Lstm { units: hidden },
            LayerSpec::Linear { units: vocab },
        ],
    }
}

impl LstmLm {
    /// Random recurrent weights and a zero output layer, so the untrained
    /// model predicts the uniform distribution.
    pub fn new(vocab: Vocabulary, hidden: usize, seed: u64) -> Result<Self> {
        if vocab.is_empty() {
            return Err(Error::State("vocabulary has no words".into()));
        }
        let mut net = SequenceNetwork::random(&topology(vocab.len(), hidden), seed)?;
        if let Some(Layer::Dense { w, b, .. }) = net.layers_mut().last_mut() {
            w.fill(0.0);
            b.fill(0.0);
        }
        Ok(Self { vocab, net })
    }

    /// All-zero parameters.
    pub fn zeros(vocab: Vocabulary, hidden: usize) -> Result<Self> {
        if vocab.is_empty() {
            return Err(Error::State("vocabulary has no words".into()));
        }
        let net = SequenceNetwork::zeros(&topology(vocab.len(), hidden))?;
        Ok(Self { vocab, net })
    }

    pub fn from_parts(vocab: Vocabulary, net: SequenceNetwork) -> Result<Self> {
        let n = vocab.len();
        let topo = net.topology();
        let ok = topo.input_dim == n
            && topo.output_dim() == n
            && matches!(topo.layers.last(), Some(LayerSpec::Linear { .. }));
        if !ok {
            return Err(Error::Config(format!(
                "network {}→{} does not match a vocabulary of {n} words",
                topo.input_dim,
                topo.output_dim()
            )));
        }
        Ok(Self { vocab, net })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn network(&self) -> &SequenceNetwork {
        &self.net
    }

    fn encode(&self, words: &[String]) -> Vec<usize> {
        std::iter::once(self.vocab.bos())
            .chain(words.iter().map(|w| self.vocab.id(w)))
            .collect()
    }

    /// Next-word distribution after `<s>` and `history`. Unknown words map
    /// to `<unk>`.
    pub fn lm_prob(&self, history: &[String]) -> Result<Vec<f64>> {
        if self.vocab.is_empty() {
            return Err(Error::State("vocabulary has no words".into()));
        }
        let logits = self.net.forward(&SeqInput::Tokens(self.encode(history)))?;
        let last = logits.columns(logits.ncols() - 1, 1).into_owned();
        Ok(softmax_columns(&last).as_slice().to_vec())
    }

    /// Natural-log probability of every word of `sentence` followed by `</s>`.
    pub fn token_log_probs(&self, sentence: &[String]) -> Result<Vec<f64>> {
        let ex = self.example(sentence);
        let logits = self.net.forward(&ex.input)?;
        let p = softmax_columns(&logits);
        let SeqTarget::Tokens(targets) = &ex.target else {
            unreachable!("language model targets are tokens")
        };
        Ok(targets
            .iter()
            .enumerate()
            .map(|(t, &k)| p[(k, t)].ln())
            .collect())
    }

    /// Input `<s> w1 … wn`, target `w1 … wn </s>`.
    pub fn example(&self, sentence: &[String]) -> Example {
        let input = self.encode(sentence);
        let mut target: Vec<usize> = input[1..].to_vec();
        target.push(self.vocab.eos());
        Example {
            input: SeqInput::Tokens(input),
            target: SeqTarget::Tokens(target),
        }
    }

    /// Per-token perplexity, counting `</s>` but not `<s>`.
    pub fn perplexity(&self, corpus: &[Vec<String>]) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        for s in corpus {
            let lp = self.token_log_probs(s)?;
            total += lp.iter().sum::<f64>();
            count += lp.len();
        }
        if count == 0 {
            return Err(Error::Data("empty corpus".into()));
        }
        Ok((-total / count as f64).exp())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_checkpoint(
            path,
            CHECKPOINT_KIND,
            &[&self.net],
            json!({ "vocab": self.vocab }),
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ckpt = read_checkpoint(path)?;
        if ckpt.kind != CHECKPOINT_KIND || ckpt.networks.len() != 1 {
            return Err(Error::State(format!(
                "checkpoint holds '{}', not a language model",
                ckpt.kind
            )));
        }
        let vocab: Vocabulary = serde_json::from_value(ckpt.metadata["vocab"].clone())
            .map_err(|e| Error::Format(format!("checkpoint vocabulary: {e}")))?;
        let net = ckpt.networks.into_iter().next().expect("one network");
        Self::from_parts(vocab, net)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmConfig {
    pub hidden: usize,
    pub train: TrainConfig,
    pub init_seed: u64,
    /// Regular-word vocabulary limit when the vocabulary is built from the
    /// training corpus.
    pub max_vocab: Option<usize>,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            hidden: 300,
            train: TrainConfig {
                learning_rate: 0.05,
                max_epochs: 20,
                batch_sequences: 10,
                input_noise_std: 0.0,
                early_stop_patience: 3,
                ..TrainConfig::default()
            },
            init_seed: 0,
            max_vocab: Some(5000),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmTrainReport {
    pub initial_perplexity: f64,
    /// Validation (or training, without a validation set) perplexity after
    /// each epoch.
    pub perplexities: Vec<f64>,
    pub best_epoch: usize,
}

fn token_count(corpus: &[Vec<String>]) -> usize {
    corpus.iter().map(|s| s.len() + 1).sum()
}

/// Trains an LSTM language model with the cross-entropy criterion.
pub fn train_lm(
    corpus: &[Vec<String>],
    valid: &[Vec<String>],
    vocab: Vocabulary,
    cfg: &LmConfig,
) -> Result<(LstmLm, LmTrainReport)> {
    if corpus.is_empty() {
        return Err(Error::Data("training corpus is empty".into()));
    }
    if cfg.hidden == 0 {
        return Err(Error::Config("hidden layer needs at least one unit".into()));
    }
    let lm = LstmLm::new(vocab, cfg.hidden, cfg.init_seed)?;
    let train_set: Vec<Example> = corpus.iter().map(|s| lm.example(s)).collect();
    let valid_set: Vec<Example> = valid.iter().map(|s| lm.example(s)).collect();
    let tokens = token_count(if valid.is_empty() { corpus } else { valid }) as f64;
    let (net, report) = train(&lm.net, &train_set, &valid_set, &cfg.train)?;
    let ppl = |c: f64| (c / tokens).exp();
    let out = LmTrainReport {
        initial_perplexity: ppl(report.initial_valid_cost),
        perplexities: report.valid_costs.iter().map(|&c| ppl(c)).collect(),
        best_epoch: report.best_epoch,
    };
    info!(
        "language model: perplexity {:.3} -> {:.3} (epoch {})",
        out.initial_perplexity,
        ppl(report.best_valid_cost),
        out.best_epoch
    );
    Ok((
        LstmLm {
            vocab: lm.vocab,
            net,
        },
        out,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::parse_corpus;

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn untrained_model_is_uniform() {
        let v = Vocabulary::from_words(["a", "b", "c"]);
        let lm = LstmLm::new(v, 8, 3).unwrap();
        let p = lm.lm_prob(&words("a b zz")).unwrap();
        assert_eq!(p.len(), 6);
        for x in &p {
            assert!((x - 1.0 / 6.0).abs() < 1e-15);
        }
        let ppl = lm.perplexity(&parse_corpus("a b\nc")).unwrap();
        assert!((ppl - 6.0).abs() < 1e-9);
    }

    #[test]
    fn random_weights_still_normalized() {
        let v = Vocabulary::from_words(["a", "b", "c", "d"]);
        let net = SequenceNetwork::random(&topology(v.len(), 5), 11).unwrap();
        let lm = LstmLm::from_parts(v, net).unwrap();
        for h in ["", "a", "a b c d", "d d d unknown"] {
            let p = lm.lm_prob(&words(h)).unwrap();
            assert!(p.iter().all(|&x| x >= 0.0));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_vocabulary_is_a_state_error() {
        let v = Vocabulary::from_words(Vec::<String>::new());
        assert!(matches!(LstmLm::new(v, 4, 0), Err(Error::State(_))));
    }

    #[test]
    fn mismatched_network_rejected() {
        let v = Vocabulary::from_words(["a"]);
        let net = SequenceNetwork::zeros(&topology(7, 2)).unwrap();
        assert!(matches!(LstmLm::from_parts(v, net), Err(Error::Config(_))));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let v = Vocabulary::from_words(["x", "y"]);
        let net = SequenceNetwork::random(&topology(v.len(), 3), 5).unwrap();
        let lm = LstmLm::from_parts(v, net).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lm.ckpt");
        lm.save(&p).unwrap();
        assert_eq!(LstmLm::load(&p).unwrap(), lm);
    }

    #[test]
    fn zero_epochs_gives_uniform_perplexity() {
        let corpus = parse_corpus("a b a b\nb a");
        let v = Vocabulary::from_corpus(&corpus, None);
        let cfg = LmConfig {
            hidden: 4,
            train: TrainConfig {
                max_epochs: 0,
                ..LmConfig::default().train
            },
            ..LmConfig::default()
        };
        let (lm, report) = train_lm(&corpus, &[], v, &cfg).unwrap();
        assert!((report.initial_perplexity - 5.0).abs() < 1e-9);
        assert!((lm.perplexity(&corpus).unwrap() - 5.0).abs() < 1e-9);
    }
}
