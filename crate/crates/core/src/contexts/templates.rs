use std::collections::BTreeSet;

use super::ContextType;

const CULINARY: &str = include_str!("../../templates/culinary.txt");
const TEMPORAL: &str = include_str!("../../templates/temporal.txt");
const MEDICAL: &str = include_str!("../../templates/medical.txt");
const ARITHMETIC_WORD: &str = include_str!("../../templates/arithmetic_word.txt");

/// Marker for a number slot inside a template line.
pub const SLOT: &str = "{N}";

/// Operator and control words used by math prompts.
pub const MATH_WORDS: [&str; 10] = ["+", "-", "*", "/", "=", "plus", "minus", "times", "divided", "is"];

pub(crate) fn parse(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.split_whitespace().map(str::to_string).collect())
        .collect()
}

/// Built-in templates for a domain, as whitespace-split words.
pub fn builtin(domain: ContextType) -> Vec<Vec<String>> {
    match domain {
        ContextType::Math => Vec::new(),
        ContextType::Culinary => parse(CULINARY),
        ContextType::Temporal => parse(TEMPORAL),
        ContextType::Medical => parse(MEDICAL),
        ContextType::ArithmeticWord => parse(ARITHMETIC_WORD),
    }
}

/// Every non-slot word that generated prompts can contain, sorted.
pub fn lexicon() -> Vec<String> {
    let mut words: BTreeSet<String> = MATH_WORDS.iter().map(|w| w.to_string()).collect();
    for domain in ContextType::ALL {
        for t in builtin(domain) {
            words.extend(t.into_iter().filter(|w| w != SLOT));
        }
    }
    words.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_natural_domain_has_twenty_templates_with_a_slot() {
        for d in ContextType::ALL.into_iter().filter(|d| *d != ContextType::Math) {
            let t = builtin(d);
            assert!(t.len() >= 20, "{d:?} has {}", t.len());
            assert!(t.iter().all(|words| words.iter().any(|w| w == SLOT)), "{d:?}");
        }
    }

    #[test]
    fn lexicon_has_no_numbers_or_slots() {
        let lex = lexicon();
        assert!(lex.iter().all(|w| w.parse::<u64>().is_err() && w != SLOT));
        assert!(lex.windows(2).all(|w| w[0] < w[1]));
    }
}
