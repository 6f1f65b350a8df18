//! Language model training, interpolation, data selection and rescoring.

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use speechfront::lm::{
    parse_corpus, parse_nbest, rescore, select_data, train_lm, ComponentProbs, LmConfig, LstmLm,
    NgramLm, RescoreParams, SelectConfig, Vocabulary,
};
use speechfront::neural::TrainConfig;

const ARPA: &str = "\
\\data\\
ngram 1=4
ngram 2=2

\\1-grams:
-1.0 <s> -0.5
-0.5 a -0.25
-0.7 b
-0.9 </s>

\\2-grams:
-0.1 <s> a
-0.2 a b

\\end\\
";

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

const DETS: [&str; 2] = ["the", "a"];
const NOUNS: [&str; 4] = ["cat", "dog", "bird", "fish"];
const VERBS: [&str; 3] = ["sees", "likes", "chases"];

fn grammar_sentence(rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut s = Vec::new();
    for _ in 0..2 {
        s.push(DETS[rng.random_range(0..2)].to_string());
        s.push(NOUNS[rng.random_range(0..4)].to_string());
        if s.len() == 2 {
            s.push(VERBS[rng.random_range(0..3)].to_string());
        }
    }
    s
}

fn small_cfg(epochs: usize, lr: f64) -> LmConfig {
    LmConfig {
        hidden: 16,
        train: TrainConfig {
            learning_rate: lr,
            max_epochs: epochs,
            batch_sequences: 4,
            input_noise_std: 0.0,
            early_stop_patience: epochs,
            rng_seed: 3,
            ..TrainConfig::default()
        },
        init_seed: 5,
        max_vocab: None,
    }
}

#[test]
fn alternating_corpus_learns_transition() {
    let corpus: Vec<Vec<String>> = (0..20).map(|_| words("a b a b a b")).collect();
    let vocab = Vocabulary::from_corpus(&corpus, None);
    let (lm, _) = train_lm(&corpus, &[], vocab, &small_cfg(30, 0.05)).unwrap();
    let p = lm.lm_prob(&words("a b a")).unwrap();
    let b = lm.vocab().id("b");
    assert!(p[b] > 0.9, "p(b | a) = {}", p[b]);
}

#[test]
fn grammar_validation_perplexity_falls() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let train: Vec<_> = (0..60).map(|_| grammar_sentence(&mut rng)).collect();
    let valid: Vec<_> = (0..20).map(|_| grammar_sentence(&mut rng)).collect();
    let vocab = Vocabulary::from_corpus(&train, None);
    let (_, report) = train_lm(&train, &valid, vocab, &small_cfg(5, 0.05)).unwrap();
    let mut ppl = vec![report.initial_perplexity];
    ppl.extend(&report.perplexities);
    assert!(ppl[..4].windows(2).all(|w| w[1] < w[0]), "{ppl:?}");
}

#[test]
fn single_sentence_is_memorized() {
    let corpus = vec![words("we hold these truths to be self evident")];
    let vocab = Vocabulary::from_corpus(&corpus, None);
    let (lm, _) = train_lm(&corpus, &[], vocab, &small_cfg(300, 0.2)).unwrap();
    let ppl = lm.perplexity(&corpus).unwrap();
    assert!(ppl <= 1.2, "perplexity {ppl}");
}

#[test]
fn training_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let train: Vec<_> = (0..12).map(|_| grammar_sentence(&mut rng)).collect();
    let vocab = Vocabulary::from_corpus(&train, None);
    let a = train_lm(&train, &[], vocab.clone(), &small_cfg(3, 0.05)).unwrap();
    let b = train_lm(&train, &[], vocab, &small_cfg(3, 0.05)).unwrap();
    assert_eq!(a.0.network().flat_params(), b.0.network().flat_params());
    assert_eq!(a.1, b.1);
}

#[test]
fn interpolation_beats_both_components() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let train: Vec<_> = (0..40).map(|_| grammar_sentence(&mut rng)).collect();
    let dev: Vec<_> = (0..15).map(|_| grammar_sentence(&mut rng)).collect();
    let vocab = Vocabulary::from_corpus(&train, None);
    let (lstm, _) = train_lm(&train, &[], vocab, &small_cfg(4, 0.05)).unwrap();
    let ng = NgramLm::parse_arpa(&unigram_arpa(&train)).unwrap();
    let probs = ComponentProbs::compute(&lstm, &ng, &dev).unwrap();
    let (lambda, best) = probs.optimize_lambda();
    let (p0, p1) = (probs.perplexity(0.0), probs.perplexity(1.0));
    assert!(best <= p0 && best <= p1, "λ={lambda}: {best} vs {p0}, {p1}");
    assert!((p0 - ng.perplexity(&dev).unwrap()).abs() < 1e-9 * p0);
    assert!((p1 - lstm.perplexity(&dev).unwrap()).abs() < 1e-9 * p1);
}

/// Maximum-likelihood unigram ARPA with an `<unk>` entry.
fn unigram_arpa(corpus: &[Vec<String>]) -> String {
    let mut counts = std::collections::BTreeMap::new();
    let mut total = 1.0f64;
    *counts.entry("<unk>".to_string()).or_insert(0.0f64) += 1.0;
    for s in corpus {
        for w in s.iter().cloned().chain(std::iter::once("</s>".to_string())) {
            *counts.entry(w).or_insert(0.0f64) += 1.0;
            total += 1.0;
        }
    }
    let mut out = format!(
        "\\data\\\nngram 1={}\n\n\\1-grams:\n-99 <s>\n",
        counts.len() + 1
    );
    for (w, c) in counts {
        out += &format!("{} {w}\n", (c / total).log10());
    }
    out + "\\end\\\n"
}

fn two_domain(rng: &mut ChaCha8Rng, n: usize) -> (Vec<Vec<String>>, Vec<bool>) {
    let mut corpus = Vec::new();
    let mut in_domain = Vec::new();
    for _ in 0..n {
        let mut s = grammar_sentence(rng);
        let keep = rng.random_bool(0.5);
        if !keep {
            s.shuffle(rng);
        }
        corpus.push(s);
        in_domain.push(keep);
    }
    (corpus, in_domain)
}

#[test]
fn selection_prefers_in_domain_half() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let dev: Vec<_> = (0..50).map(|_| grammar_sentence(&mut rng)).collect();
    let (train, in_domain) = two_domain(&mut rng, 400);
    let half = in_domain.iter().filter(|&&b| b).count();
    let sel = select_data(&train, &dev, half, &SelectConfig::default()).unwrap();
    let hits = sel.indices.iter().filter(|&&i| in_domain[i]).count();
    assert!(hits as f64 >= 0.95 * half as f64, "{hits}/{half}");
    let again = select_data(&train, &dev, half, &SelectConfig::default()).unwrap();
    assert_eq!(sel, again);
}

#[test]
fn ngram_scores_sentence_of_one_unigram() {
    let lm = NgramLm::parse_arpa(ARPA).unwrap();
    // <s> b backs off through <s>; b </s> has no entry and b no back-off.
    let expected = -0.5 - 0.7 - 0.9;
    assert!((lm.ngram_score(&words("b")) - expected).abs() < 1e-10);
}

#[test]
fn rescoring_hand_oracle() {
    let ng = NgramLm::parse_arpa(ARPA).unwrap();
    let lstm = LstmLm::zeros(Vocabulary::from_words(["a", "b"]), 4).unwrap();
    let list = parse_nbest("utt 1 -9.5 -4 b a\nutt 2 -10 -6 a b\n")
        .unwrap()
        .remove(0);
    let params = RescoreParams {
        lambda: 0.5,
        lm_scale: 2.0,
        word_penalty: -0.5,
    };
    let r = rescore(&list, Some(&lstm), Some(&ng), &params).unwrap();
    assert_eq!(r.best().hypothesis.words, words("a b"));
    assert!((r.entries[0].lm_log_prob - -3.3914938485259576).abs() < 1e-10);
    assert!((r.entries[0].combined - -17.782987697051915).abs() < 1e-10);
    assert!((r.entries[1].combined - -21.26456161595225).abs() < 1e-10);
}

proptest! {
    #[test]
    fn rescoring_ignores_input_order(
        scores in prop::collection::vec((-20.0f64..0.0, 0usize..3), 1..8),
        seed in any::<u64>(),
        scale in 0.0f64..3.0,
    ) {
        let ng = NgramLm::parse_arpa(ARPA).unwrap();
        let vocab = ["a b", "b a", "a"];
        let text: String = scores
            .iter()
            .enumerate()
            .map(|(i, (ac, w))| format!("u {} {} 0 {}\n", i + 1, ac.round(), vocab[*w]))
            .collect();
        let list = parse_nbest(&text).unwrap().remove(0);
        let params = RescoreParams { lm_scale: scale, ..RescoreParams::default() };
        let base = rescore(&list, None, Some(&ng), &params).unwrap();
        let mut shuffled = list.clone();
        shuffled.hypotheses.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let other = rescore(&shuffled, None, Some(&ng), &params).unwrap();
        prop_assert_eq!(base, other);
    }

    #[test]
    fn lstm_distribution_normalized(seed in any::<u64>(), len in 0usize..6) {
        let vocab = Vocabulary::from_words(["x", "y", "z"]);
        let lm = LstmLm::from_parts(
            vocab,
            speechfront::neural::SequenceNetwork::random(
                &speechfront::neural::Topology {
                    input_dim: 6,
                    layers: vec![
                        speechfront::neural::LayerSpec::Lstm { units: 5 },
                        speechfront::neural::LayerSpec::Linear { units: 6 },
                    ],
                },
                seed,
            )
            .unwrap(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hist: Vec<String> = (0..len).map(|_| ["x", "y", "z", "w"][rng.random_range(0..4)].to_string()).collect();
        let p = lm.lm_prob(&hist).unwrap();
        prop_assert!(p.iter().all(|&v| v >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn corpus_parsing_skips_blank_lines() {
    assert_eq!(parse_corpus("a b\n\n  \nc\n").len(), 2);
}
