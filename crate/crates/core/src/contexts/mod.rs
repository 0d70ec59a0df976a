//! Deterministic prompt generators with controlled number substitution.
//!
//! Math prompts follow the `x1 OP x2 =` form; natural-language prompts fill
//! the `{N}` slots of per-domain template files with uniformly sampled
//! values, so every number class is equally represented.

mod multitoken;
mod templates;

use std::fmt;
use std::io::{BufRead, Write};
use std::ops::RangeInclusive;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::SeedStream;

pub use multitoken::{chunk_strings, decode_multitoken, encode_multitoken, MAX_MULTITOKEN};
pub use templates::{builtin as builtin_templates, lexicon, MATH_WORDS, SLOT};

/// Largest value a single number token carries.
pub const MAX_SINGLE_TOKEN: u64 = 999;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextType {
    Math,
    Culinary,
    Temporal,
    Medical,
    ArithmeticWord,
}

impl ContextType {
    pub const ALL: [ContextType; 5] = [
        ContextType::Math,
        ContextType::Culinary,
        ContextType::Temporal,
        ContextType::Medical,
        ContextType::ArithmeticWord,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ContextType::Math => "math",
            ContextType::Culinary => "culinary",
            ContextType::Temporal => "temporal",
            ContextType::Medical => "medical",
            ContextType::ArithmeticWord => "arithmetic_word",
        }
    }
}

impl fmt::Display for ContextType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ContextType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ContextType::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown context type {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl ArithOp {
    pub const ALL: [ArithOp; 4] = [ArithOp::Add, ArithOp::Sub, ArithOp::Mul, ArithOp::Div];

    pub fn symbol(&self) -> &'static str {
        match self {
            ArithOp::Add => "+",
            ArithOp::Sub => "-",
            ArithOp::Mul => "*",
            ArithOp::Div => "/",
        }
    }

    fn words(&self) -> &'static [&'static str] {
        match self {
            ArithOp::Add => &["plus"],
            ArithOp::Sub => &["minus"],
            ArithOp::Mul => &["times"],
            ArithOp::Div => &["divided"],
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ArithOp::Add => "add",
            ArithOp::Sub => "sub",
            ArithOp::Mul => "mul",
            ArithOp::Div => "div",
        }
    }

    /// Result if it is a single-token integer (exact, non-negative, < 1000).
    pub fn apply(&self, x1: u64, x2: u64) -> Option<u64> {
        let r = match self {
            ArithOp::Add => x1.checked_add(x2)?,
            ArithOp::Sub => x1.checked_sub(x2)?,
            ArithOp::Mul => x1.checked_mul(x2)?,
            ArithOp::Div => {
                if x2 == 0 || x1 % x2 != 0 {
                    return None;
                }
                x1 / x2
            }
        };
        (r <= MAX_SINGLE_TOKEN).then_some(r)
    }
}

impl FromStr for ArithOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ArithOp::ALL
            .into_iter()
            .find(|o| o.as_str() == s || o.symbol() == s)
            .ok_or_else(|| Error::Config(format!("unknown operation {s:?}")))
    }
}

/// Surface form of math prompts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MathStyle {
    /// `x1 + x2 =`
    #[default]
    Symbolic,
    /// `x1 plus x2 is`
    Verbal,
}

/// One number occurrence inside a prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NumberSpan {
    /// Token positions of the chunks, ascending.
    pub positions: Vec<usize>,
    pub value: u64,
    pub chunks: Vec<u16>,
}

impl NumberSpan {
    pub fn new(start: usize, value: u64) -> Result<Self> {
        let chunks = encode_multitoken(value)?;
        Ok(NumberSpan {
            positions: (start..start + chunks.len()).collect(),
            value,
            chunks,
        })
    }

    pub fn last_position(&self) -> usize {
        *self.positions.last().expect("spans are non-empty")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub prompt_id: String,
    pub tokens: Vec<String>,
    pub number_spans: Vec<NumberSpan>,
    pub context_type: ContextType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<u64>,
}

impl PromptRecord {
    pub fn text(&self) -> String {
        detokenize(&self.tokens)
    }

    /// Checks that every span's chunks re-concatenate to its value and sit
    /// at the recorded positions.
    pub fn validate(&self) -> Result<()> {
        for span in &self.number_spans {
            if span.positions.len() != span.chunks.len() || span.positions.is_empty() {
                return Err(Error::Schema(format!("{}: span shape mismatch", self.prompt_id)));
            }
            if decode_multitoken(&span.chunks)? != span.value
                || chunk_strings(&span.chunks).concat() != span.value.to_string()
            {
                return Err(Error::Schema(format!(
                    "{}: chunks {:?} do not spell {}",
                    self.prompt_id, span.chunks, span.value
                )));
            }
            for (pos, piece) in span.positions.iter().zip(chunk_strings(&span.chunks)) {
                if self.tokens.get(*pos) != Some(&piece) {
                    return Err(Error::Schema(format!(
                        "{}: token at {pos} is not {piece:?}",
                        self.prompt_id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Joins tokens with single spaces, gluing consecutive number chunks
/// (`["1", "034"]` → `"1034"`).
pub fn detokenize(tokens: &[String]) -> String {
    let mut out = String::new();
    let mut prev_numeric = false;
    for (i, t) in tokens.iter().enumerate() {
        let numeric = !t.is_empty() && t.bytes().all(|b| b.is_ascii_digit());
        if i > 0 && !(numeric && prev_numeric) {
            out.push(' ');
        }
        out.push_str(t);
        prev_numeric = numeric;
    }
    out
}

/// How slot values are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ValueSampler {
    /// Uniform over `0..=max` (single-token integers).
    Uniform { max: u64 },
    /// Chunk count uniform in `min_chunks..=max_chunks`, then a uniform value
    /// among numbers with exactly that many chunks.
    MultiToken { min_chunks: usize, max_chunks: usize },
}

impl Default for ValueSampler {
    fn default() -> Self {
        ValueSampler::Uniform { max: MAX_SINGLE_TOKEN }
    }
}

impl ValueSampler {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ValueSampler::Uniform { max } if max >= MAX_MULTITOKEN => {
                Err(Error::Config(format!("uniform max {max} too large")))
            }
            ValueSampler::MultiToken { min_chunks, max_chunks }
                if min_chunks == 0 || min_chunks > max_chunks || max_chunks > 6 =>
            {
                Err(Error::Config(format!("chunk range {min_chunks}..={max_chunks} outside 1..=6")))
            }
            _ => Ok(()),
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> u64 {
        match *self {
            ValueSampler::Uniform { max } => rng.random_range(0..=max),
            ValueSampler::MultiToken { min_chunks, max_chunks } => {
                let k = rng.random_range(min_chunks..=max_chunks) as u32;
                let lo = if k == 1 { 0 } else { 1000u64.pow(k - 1) };
                let hi = 1000u64.pow(k) - 1;
                rng.random_range(lo..=hi)
            }
        }
    }
}

fn math_tokens(op: ArithOp, x1: u64, x2: u64, style: MathStyle) -> Result<(Vec<String>, Vec<NumberSpan>)> {
    let mut tokens = Vec::new();
    let mut spans = Vec::new();
    let mut push_number = |tokens: &mut Vec<String>, v: u64| -> Result<()> {
        let span = NumberSpan::new(tokens.len(), v)?;
        tokens.extend(chunk_strings(&span.chunks));
        spans.push(span);
        Ok(())
    };
    push_number(&mut tokens, x1)?;
    match style {
        MathStyle::Symbolic => tokens.push(op.symbol().into()),
        MathStyle::Verbal => tokens.extend(op.words().iter().map(|w| w.to_string())),
    }
    push_number(&mut tokens, x2)?;
    tokens.push(match style {
        MathStyle::Symbolic => "=".into(),
        MathStyle::Verbal => "is".into(),
    });
    Ok((tokens, spans))
}

/// `n` arithmetic prompts with operands drawn uniformly from `operand_range`
/// among pairs whose result is a single-token integer.
pub fn gen_math_prompts(op: ArithOp, operand_range: RangeInclusive<u64>, n: usize, seed: u64) -> Result<Vec<PromptRecord>> {
    gen_math_prompts_styled(op, operand_range, n, seed, MathStyle::Symbolic)
}

pub fn gen_math_prompts_styled(
    op: ArithOp,
    operand_range: RangeInclusive<u64>,
    n: usize,
    seed: u64,
    style: MathStyle,
) -> Result<Vec<PromptRecord>> {
    let pairs = valid_pairs(op, &operand_range)?;
    let mut rng = SeedStream::new(seed).rng(&format!("math/{}", op.as_str()));
    (0..n)
        .map(|i| {
            let (x1, x2) = pairs[rng.random_range(0..pairs.len())];
            let (tokens, number_spans) = math_tokens(op, x1, x2, style)?;
            Ok(PromptRecord {
                prompt_id: format!("math-{}-{i:06}", op.as_str()),
                tokens,
                number_spans,
                context_type: ContextType::Math,
                target: op.apply(x1, x2),
            })
        })
        .collect()
}

/// Every operand pair in range with a single-token result, row-major.
pub fn valid_pairs(op: ArithOp, operand_range: &RangeInclusive<u64>) -> Result<Vec<(u64, u64)>> {
    if operand_range.is_empty() {
        return Err(Error::Config("empty operand range".into()));
    }
    if *operand_range.end() > MAX_SINGLE_TOKEN {
        return Err(Error::Config(format!(
            "operands must be single tokens (<= {MAX_SINGLE_TOKEN})"
        )));
    }
    let mut pairs = Vec::new();
    for x1 in operand_range.clone() {
        for x2 in operand_range.clone() {
            if op.apply(x1, x2).is_some() {
                pairs.push((x1, x2));
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::Config(format!(
            "no operand pair in {operand_range:?} gives a single-token {} result",
            op.as_str()
        )));
    }
    Ok(pairs)
}

/// `n` prompts from the domain's templates with slots filled by `sampler`.
pub fn gen_natural_prompts(domain: ContextType, n: usize, sampler: ValueSampler, seed: u64) -> Result<Vec<PromptRecord>> {
    gen_from_templates(domain, &templates::builtin(domain), n, sampler, seed)
}

/// Same as [`gen_natural_prompts`] with caller-supplied templates
/// (whitespace-split words, `{N}` for slots).
pub fn gen_from_templates(
    domain: ContextType,
    templates: &[Vec<String>],
    n: usize,
    sampler: ValueSampler,
    seed: u64,
) -> Result<Vec<PromptRecord>> {
    sampler.validate()?;
    if templates.is_empty() {
        return Err(Error::Config(format!("domain {domain} has no templates")));
    }
    let mut rng = SeedStream::new(seed).rng(&format!("natural/{domain}"));
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let template = &templates[rng.random_range(0..templates.len())];
        let mut tokens = Vec::with_capacity(template.len() + 6);
        let mut spans = Vec::new();
        for word in template {
            if word == SLOT {
                let span = NumberSpan::new(tokens.len(), sampler.sample(&mut rng))?;
                tokens.extend(chunk_strings(&span.chunks));
                spans.push(span);
            } else {
                tokens.push(word.clone());
            }
        }
        out.push(PromptRecord {
            prompt_id: format!("{domain}-{i:06}"),
            tokens,
            number_spans: spans,
            context_type: domain,
            target: None,
        });
    }
    Ok(out)
}

pub fn write_jsonl<W: Write>(records: &[PromptRecord], mut w: W) -> Result<()> {
    for r in records {
        let line = serde_json::to_string(r).expect("prompt records serialize");
        writeln!(w, "{line}").map_err(|e| Error::store("<jsonl>", e))?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<PromptRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::store("<jsonl>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PromptRecord =
            serde_json::from_str(&line).map_err(|e| Error::Schema(format!("line {}: {e}", i + 1)))?;
        rec.validate()?;
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    #[test]
    fn addition_prompt_form() {
        let ps = gen_math_prompts(ArithOp::Add, 0..=499, 50, 7).unwrap();
        for p in &ps {
            assert_eq!(p.tokens.len(), 4);
            assert_eq!(p.tokens[1], "+");
            assert_eq!(p.tokens[3], "=");
            let x1 = p.number_spans[0].value;
            let x2 = p.number_spans[1].value;
            assert_eq!(p.number_spans[1].positions, vec![2]);
            assert_eq!(p.target, Some(x1 + x2));
            p.validate().unwrap();
        }
        assert_eq!(ps, gen_math_prompts(ArithOp::Add, 0..=499, 50, 7).unwrap());
        assert_ne!(ps, gen_math_prompts(ArithOp::Add, 0..=499, 50, 8).unwrap());
    }

    #[test]
    fn division_targets_are_exact() {
        for p in gen_math_prompts(ArithOp::Div, 0..=499, 200, 1).unwrap() {
            let (x1, x2) = (p.number_spans[0].value, p.number_spans[1].value);
            assert!(x2 > 0 && x1 % x2 == 0);
            assert_eq!(p.target, Some(x1 / x2));
        }
        for p in gen_math_prompts(ArithOp::Sub, 0..=99, 200, 1).unwrap() {
            assert!(p.number_spans[0].value >= p.number_spans[1].value);
        }
        for p in gen_math_prompts(ArithOp::Mul, 0..=99, 200, 1).unwrap() {
            assert!(p.target.unwrap() <= 999);
        }
    }

    #[test]
    fn empty_range_is_config_error() {
        #[allow(clippy::reversed_empty_ranges)]
        let r = gen_math_prompts(ArithOp::Add, 5..=4, 3, 0);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn verbal_style() {
        let p = &gen_math_prompts_styled(ArithOp::Mul, 1..=9, 1, 0, MathStyle::Verbal).unwrap()[0];
        assert_eq!(p.tokens[1], "times");
        assert_eq!(p.tokens[3], "is");
    }

    #[test]
    fn culinary_values_are_uniform() {
        let templates = vec!["add {N} grams of flour".split(' ').map(String::from).collect::<Vec<_>>()];
        let ps = gen_from_templates(ContextType::Culinary, &templates, 100_000, ValueSampler::default(), 5).unwrap();
        let mut counts = vec![0f64; 1000];
        for p in &ps {
            counts[p.number_spans[0].value as usize] += 1.0;
        }
        let expected = 100.0;
        let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
        let critical = ChiSquared::new(999.0).unwrap().inverse_cdf(0.99);
        assert!(chi2 < critical, "chi2 = {chi2}, critical = {critical}");
    }

    #[test]
    fn zero_prompts() {
        assert!(gen_natural_prompts(ContextType::Medical, 0, ValueSampler::default(), 1).unwrap().is_empty());
        assert!(matches!(
            gen_natural_prompts(ContextType::Math, 1, ValueSampler::default(), 1),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn temporal_span_value_matches_token() {
        for p in gen_natural_prompts(ContextType::Temporal, 100, ValueSampler::default(), 3).unwrap() {
            p.validate().unwrap();
            let span = &p.number_spans[0];
            assert_eq!(p.tokens[span.positions[0]], span.value.to_string());
        }
    }

    #[test]
    fn multitoken_lengths_are_balanced() {
        let sampler = ValueSampler::MultiToken { min_chunks: 2, max_chunks: 6 };
        let ps = gen_natural_prompts(ContextType::ArithmeticWord, 5000, sampler, 9).unwrap();
        let mut by_len = [0usize; 7];
        for p in &ps {
            p.validate().unwrap();
            by_len[p.number_spans[0].chunks.len()] += 1;
        }
        assert_eq!(by_len[0] + by_len[1], 0);
        for n in &by_len[2..] {
            assert!((*n as f64 - 1000.0).abs() < 150.0, "{by_len:?}");
        }
    }

    #[test]
    fn text_roundtrip_and_jsonl() {
        let sampler = ValueSampler::MultiToken { min_chunks: 2, max_chunks: 3 };
        let ps = gen_natural_prompts(ContextType::Culinary, 20, sampler, 2).unwrap();
        for p in &ps {
            let text = p.text();
            assert!(text.contains(&p.number_spans[0].value.to_string()));
        }
        let mut buf = Vec::new();
        write_jsonl(&ps, &mut buf).unwrap();
        let back = read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, ps);
    }
}
