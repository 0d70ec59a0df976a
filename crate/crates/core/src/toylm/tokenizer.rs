use serde::{Deserialize, Serialize};

use crate::contexts;
use crate::error::{Error, Result};

/// Ids `0..=999` are the integers themselves.
pub const N_NUMBERS: usize = 1000;
/// Arithmetic operators, `=` and the sequence-start token follow the numbers.
pub const OPERATORS: [&str; 5] = ["+", "-", "*", "/", "="];
pub const BOS: &str = "<bos>";
pub const BOS_ID: u32 = (N_NUMBERS + OPERATORS.len()) as u32;
/// Numbers, operators and `<bos>`.
pub const N_RESERVED: usize = N_NUMBERS + OPERATORS.len() + 1;

/// Word-level tokenizer: one token per integer `0..=999`, operators, then
/// template words in lexicon order for as long as the vocabulary allows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tokenizer {
    vocab_size: usize,
    words: Vec<String>,
}

impl Tokenizer {
    pub fn new(vocab_size: usize) -> Self {
        let lexicon: Vec<String> = contexts::lexicon()
            .into_iter()
            .filter(|w| !OPERATORS.contains(&w.as_str()))
            .collect();
        let room = vocab_size.saturating_sub(N_RESERVED);
        Tokenizer {
            vocab_size,
            words: lexicon.into_iter().take(room).collect(),
        }
    }

    /// Vocabulary size needed to cover every built-in template word.
    pub fn full_vocab_size() -> usize {
        let words = contexts::lexicon()
            .into_iter()
            .filter(|w| !OPERATORS.contains(&w.as_str()))
            .count();
        N_RESERVED + words
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn number_id(value: u64) -> Option<u32> {
        (value < N_NUMBERS as u64).then_some(value as u32)
    }

    pub fn token_id(&self, token: &str) -> Result<u32> {
        if !token.is_empty() && token.len() <= 3 && token.bytes().all(|b| b.is_ascii_digit()) {
            return Ok(token.parse::<u32>().expect("three digits"));
        }
        if let Some(i) = OPERATORS.iter().position(|o| *o == token) {
            return Ok((N_NUMBERS + i) as u32);
        }
        if token == BOS {
            return Ok(BOS_ID);
        }
        self.words
            .binary_search_by(|w| w.as_str().cmp(token))
            .map(|i| (N_RESERVED + i) as u32)
            .map_err(|_| Error::Token(token.to_string()))
    }

    pub fn encode(&self, tokens: &[String]) -> Result<Vec<u32>> {
        tokens.iter().map(|t| self.token_id(t)).collect()
    }

    /// Token strings; a number following a number is zero-padded, matching
    /// the chunked surface form of multi-token values.
    pub fn decode(&self, ids: &[u32]) -> Result<Vec<String>> {
        let mut out = Vec::with_capacity(ids.len());
        let mut prev_number = false;
        for &id in ids {
            let id_us = id as usize;
            let (tok, is_number) = if id_us < N_NUMBERS {
                let s = if prev_number { format!("{id:03}") } else { id.to_string() };
                (s, true)
            } else if id_us < N_NUMBERS + OPERATORS.len() {
                (OPERATORS[id_us - N_NUMBERS].to_string(), false)
            } else if id == BOS_ID {
                (BOS.to_string(), false)
            } else {
                let w = self
                    .words
                    .get(id_us - N_RESERVED)
                    .ok_or_else(|| Error::Token(format!("id {id}")))?;
                (w.clone(), false)
            };
            out.push(tok);
            prev_number = is_number;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contexts::{gen_math_prompts, gen_natural_prompts, ArithOp, ContextType, ValueSampler};

    #[test]
    fn numbers_and_operators() {
        let t = Tokenizer::new(1100);
        assert_eq!(t.token_id("0").unwrap(), 0);
        assert_eq!(t.token_id("999").unwrap(), 999);
        assert_eq!(t.token_id("034").unwrap(), 34);
        assert_eq!(t.token_id("+").unwrap(), 1000);
        assert_eq!(t.token_id("=").unwrap(), 1004);
        assert!(matches!(t.token_id("1000"), Err(Error::Token(_))));
        assert!(matches!(t.token_id("zzzz-not-a-word"), Err(Error::Token(_))));
    }

    #[test]
    fn prompts_roundtrip_losslessly() {
        let t = Tokenizer::new(Tokenizer::full_vocab_size());
        let mut prompts = gen_math_prompts(ArithOp::Add, 0..=499, 20, 1).unwrap();
        for d in [ContextType::Culinary, ContextType::Temporal, ContextType::Medical, ContextType::ArithmeticWord] {
            prompts.extend(gen_natural_prompts(d, 30, ValueSampler::MultiToken { min_chunks: 1, max_chunks: 6 }, 4).unwrap());
        }
        for p in prompts {
            let ids = t.encode(&p.tokens).unwrap();
            assert_eq!(t.decode(&ids).unwrap(), p.tokens);
        }
    }

    #[test]
    fn small_vocab_drops_words() {
        let t = Tokenizer::new(N_RESERVED);
        assert!(t.token_id("flour").is_err());
        assert!(Tokenizer::full_vocab_size() > N_RESERVED);
    }
}
