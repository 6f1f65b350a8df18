use std::collections::HashMap;
use std::path::Path;

use super::vocab::{BOS, EOS, UNK};
use crate::error::{Error, Result};

/// Score of a word missing from a model that has no `<unk>` entry, in log10.
pub const DEFAULT_OOV_LOG10: f64 = -7.0;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    log10_prob: f64,
    log10_backoff: f64,
}

/// Back-off n-gram model read from ARPA text. Scores are log10, as stored.
#[derive(Debug, Clone, PartialEq)]
pub struct NgramLm {
    order: usize,
    grams: Vec<HashMap<Vec<String>, Entry>>,
    oov_log10: f64,
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| parse_err(line, format!("'{tok}' is not a number")))?;
    if v.is_nan() {
        return Err(parse_err(line, "NaN score"));
    }
    Ok(v)
}

impl NgramLm {
    pub fn parse_arpa(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let mut last_line = 0;
        // Preamble: anything before \data\ is ignored.
        loop {
            match lines.next() {
                Some((_, "\\data\\")) => break,
                Some((n, _)) => last_line = n,
                None => return Err(parse_err(last_line, "missing \\data\\ header")),
            }
        }
        let mut counts: Vec<usize> = Vec::new();
        let mut pending = None;
        for (n, l) in lines.by_ref() {
            last_line = n;
            if l.is_empty() {
                continue;
            }
            if let Some(rest) = l.strip_prefix("ngram ") {
                let (k, c) = rest
                    .split_once('=')
                    .ok_or_else(|| parse_err(n, "expected 'ngram k=count'"))?;
                let k: usize = k
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(n, "bad n-gram order"))?;
                let c: usize = c
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(n, "bad n-gram count"))?;
                if k != counts.len() + 1 {
                    return Err(parse_err(
                        n,
                        format!("n-gram orders out of sequence at {k}"),
                    ));
                }
                counts.push(c);
            } else {
                pending = Some((n, l));
                break;
            }
        }
        if counts.is_empty() {
            return Err(parse_err(last_line, "no n-gram counts in \\data\\ section"));
        }
        let order = counts.len();
        let mut grams: Vec<HashMap<Vec<String>, Entry>> = vec![HashMap::new(); order];
        let mut current: Option<usize> = None;
        let mut seen_end = false;
        let mut handle = |n: usize, l: &str| -> Result<bool> {
            if l.is_empty() {
                return Ok(false);
            }
            if l == "\\end\\" {
                return Ok(true);
            }
            if let Some(k) = l.strip_prefix('\\').and_then(|s| s.strip_suffix("-grams:")) {
                let k: usize = k.parse().map_err(|_| parse_err(n, "bad section header"))?;
                if k == 0 || k > order {
                    return Err(parse_err(n, format!("section for order {k} not declared")));
                }
                current = Some(k);
                return Ok(false);
            }
            let k = current.ok_or_else(|| parse_err(n, "entry outside an n-gram section"))?;
            let toks: Vec<&str> = l.split_whitespace().collect();
            let has_backoff = match toks.len() {
                x if x == k + 1 => false,
                x if x == k + 2 && k < order => true,
                _ => return Err(parse_err(n, format!("expected a {k}-gram entry"))),
            };
            let entry = Entry {
                log10_prob: parse_f64(toks[0], n)?,
                log10_backoff: if has_backoff {
                    parse_f64(toks[k + 1], n)?
                } else {
                    0.0
                },
            };
            let key: Vec<String> = toks[1..=k].iter().map(|s| s.to_string()).collect();
            grams[k - 1].insert(key, entry);
            Ok(false)
        };
        if let Some((n, l)) = pending {
            last_line = n;
            seen_end = handle(n, l)?;
        }
        if !seen_end {
            for (n, l) in lines {
                last_line = n;
                if handle(n, l)? {
                    seen_end = true;
                    break;
                }
            }
        }
        if !seen_end {
            return Err(parse_err(last_line, "missing \\end\\ marker"));
        }
        for (k, (&c, g)) in counts.iter().zip(&grams).enumerate() {
            if c != g.len() {
                return Err(parse_err(
                    last_line,
                    format!("{}-gram count {} does not match header {c}", k + 1, g.len()),
                ));
            }
        }
        Ok(Self {
            order,
            grams,
            oov_log10: DEFAULT_OOV_LOG10,
        })
    }

    pub fn read_arpa(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_arpa(&text)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Score used for words absent from a model without `<unk>`.
    pub fn with_oov_log10(mut self, v: f64) -> Self {
        self.oov_log10 = v;
        self
    }

    pub fn has_unk(&self) -> bool {
        self.grams[0].contains_key(&vec![UNK.to_string()])
    }

    /// Words with a unigram entry.
    pub fn unigrams(&self) -> impl Iterator<Item = &str> {
        self.grams[0].keys().map(|k| k[0].as_str())
    }

    fn map_word<'a>(&self, w: &'a str) -> Option<&'a str> {
        if self.grams[0].contains_key(&vec![w.to_string()]) {
            Some(w)
        } else if self.has_unk() {
            Some(UNK)
        } else {
            None
        }
    }

    /// log10 P(word | context), using the last `order − 1` context words.
    pub fn log10_prob(&self, context: &[&str], word: &str) -> f64 {
        let Some(word) = self.map_word(word) else {
            return self.oov_log10;
        };
        let keep = context.len().min(self.order - 1);
        let ctx: Vec<String> = context[context.len() - keep..]
            .iter()
            .map(|w| self.map_word(w).unwrap_or(w).to_string())
            .collect();
        let mut backoff = 0.0;
        for start in 0..=ctx.len() {
            let h = &ctx[start..];
            let mut gram = h.to_vec();
            gram.push(word.to_string());
            if let Some(e) = self.grams[gram.len() - 1].get(&gram) {
                return backoff + e.log10_prob;
            }
            if !h.is_empty() {
                if let Some(e) = self.grams[h.len() - 1].get(h) {
                    backoff += e.log10_backoff;
                }
            }
        }
        unreachable!("mapped words always have a unigram entry")
    }

    /// log10 probability of each word of `sentence` and of the final `</s>`,
    /// conditioned on a leading `<s>`.
    pub fn token_log10_probs(&self, sentence: &[String]) -> Vec<f64> {
        let mut hist: Vec<&str> = vec![BOS];
        let mut out = Vec::with_capacity(sentence.len() + 1);
        for w in sentence
            .iter()
            .map(String::as_str)
            .chain(std::iter::once(EOS))
        {
            out.push(self.log10_prob(&hist, w));
            hist.push(w);
        }
        out
    }

    /// Total log10 probability of `<s> sentence </s>`.
    pub fn ngram_score(&self, sentence: &[String]) -> f64 {
        self.token_log10_probs(sentence).iter().sum()
    }

    /// Per-token perplexity over a corpus (`</s>` counted).
    pub fn perplexity(&self, corpus: &[Vec<String>]) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        for s in corpus {
            let lp = self.token_log10_probs(s);
            total += lp.iter().sum::<f64>();
            count += lp.len();
        }
        if count == 0 {
            return Err(Error::Data("empty corpus".into()));
        }
        Ok(10f64.powf(-total / count as f64))
    }
}
