//! Language modelling for hypothesis rescoring: an LSTM model over a closed
//! vocabulary, ARPA back-off n-gram scoring, linear interpolation of the
//! two, perplexity-based data selection and N-best reranking.

mod lstm_lm;
mod nbest;
mod ngram;
mod select;
mod vocab;

pub use lstm_lm::{train_lm, LmConfig, LmTrainReport, LstmLm};
pub use nbest::{
    interpolate, parse_nbest, rescore, write_nbest, ComponentProbs, Hypothesis, NBestList,
    RescoreParams, Rescored, ScoredHypothesis,
};
pub use ngram::{NgramLm, DEFAULT_OOV_LOG10};
pub use select::{select_data, AddKLm, SelectConfig, Selection};
pub use vocab::{parse_corpus, Vocabulary, BOS, EOS, UNK};
