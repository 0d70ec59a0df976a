use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::errors::{answer_predictions, targets};
use crate::contexts::PromptRecord;
use crate::error::Result;
use crate::toylm::{Tokenizer, ToyLM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationScore {
    pub skip: Vec<usize>,
    pub accuracy_before: f64,
    pub accuracy_after: f64,
    /// `(err_before - err_after) / err_before`; absent when the unablated
    /// model makes no errors but the ablated one does.
    pub error_reduction: Option<f64>,
}

pub fn answer_accuracy(model: &ToyLM, tokenizer: &Tokenizer, prompts: &[PromptRecord], skip: &BTreeSet<usize>) -> Result<f64> {
    let truth = targets(prompts)?;
    let preds = answer_predictions(model, tokenizer, prompts, skip)?;
    if truth.is_empty() {
        return Ok(0.0);
    }
    Ok(truth.iter().zip(&preds).filter(|(t, p)| t == p).count() as f64 / truth.len() as f64)
}

fn score(before: f64, after: f64, skip: Vec<usize>) -> AblationScore {
    let (eb, ea) = (1.0 - before, 1.0 - after);
    let error_reduction = if eb > 0.0 {
        Some((eb - ea) / eb)
    } else if ea == 0.0 {
        Some(0.0)
    } else {
        None
    };
    AblationScore {
        skip,
        accuracy_before: before,
        accuracy_after: after,
        error_reduction,
    }
}

/// Answer accuracy with each candidate layer skipped on its own, then with
/// all candidates skipped together.
pub fn ablate_and_score(
    model: &ToyLM,
    tokenizer: &Tokenizer,
    prompts: &[PromptRecord],
    candidates: &[usize],
) -> Result<Vec<AblationScore>> {
    let before = answer_accuracy(model, tokenizer, prompts, &BTreeSet::new())?;
    let mut out = Vec::new();
    for &layer in candidates {
        let skip: BTreeSet<usize> = [layer].into();
        let after = answer_accuracy(model, tokenizer, prompts, &skip)?;
        out.push(score(before, after, vec![layer]));
    }
    let all: BTreeSet<usize> = candidates.iter().copied().collect();
    let after = answer_accuracy(model, tokenizer, prompts, &all)?;
    out.push(score(before, after, all.into_iter().collect()));
    Ok(out)
}
