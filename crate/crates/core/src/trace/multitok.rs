use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::actstore::{split_by_value, ActivationSet};
use crate::contexts::PromptRecord;
use crate::error::{Error, Result};
use crate::probes::{fit_probe, ProbeConfig, ProbeKind, ProbeReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultitokConfig {
    pub offsets: Vec<usize>,
    pub kind: ProbeKind,
    pub holdout_val: usize,
    pub holdout_test: usize,
    pub split_seed: u64,
    pub probe: ProbeConfig,
}

impl Default for MultitokConfig {
    fn default() -> Self {
        MultitokConfig {
            offsets: vec![1, 2, 3, 4, 5],
            kind: ProbeKind::Sin,
            holdout_val: 100,
            holdout_test: 100,
            split_seed: 0,
            probe: ProbeConfig::default(),
        }
    }
}

/// Recovery of the chunk `offset` positions before the last numeric token.
/// `accuracy` is `None` when no sample has a chunk at that offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetRecovery {
    pub offset: usize,
    pub n_samples: usize,
    pub accuracy: Option<f64>,
    pub report: Option<ProbeReport>,
}

/// Chunk sequence of the number span ending at each row's token position.
pub fn span_chunks(acts: &ActivationSet, prompts: &[PromptRecord]) -> Result<Vec<Vec<u16>>> {
    let by_id: std::collections::HashMap<&str, &PromptRecord> =
        prompts.iter().map(|p| (p.prompt_id.as_str(), p)).collect();
    acts.meta
        .iter()
        .map(|m| {
            let p = by_id
                .get(m.prompt_id.as_str())
                .ok_or_else(|| Error::Alignment(format!("prompt {} not found", m.prompt_id)))?;
            p.number_spans
                .iter()
                .find(|s| s.last_position() as i64 == m.token_offset)
                .map(|s| s.chunks.clone())
                .ok_or_else(|| {
                    Error::Alignment(format!("no number span ends at {} in {}", m.token_offset, m.prompt_id))
                })
        })
        .collect()
}

/// One probe per offset, each trained and tested on value-disjoint splits
/// of the chunk at that offset.
pub fn multitok_recovery(acts: &ActivationSet, chunks: &[Vec<u16>], cfg: &MultitokConfig) -> Result<Vec<OffsetRecovery>> {
    if chunks.len() != acts.len() {
        return Err(Error::Dimension(format!("{} chunk lists for {} rows", chunks.len(), acts.len())));
    }
    cfg.offsets
        .par_iter()
        .map(|&offset| {
            let rows: Vec<usize> = (0..acts.len()).filter(|&i| chunks[i].len() > offset).collect();
            if rows.is_empty() {
                return Ok(OffsetRecovery {
                    offset,
                    n_samples: 0,
                    accuracy: None,
                    report: None,
                });
            }
            let mut set = acts.select(&rows);
            set.labels = rows
                .iter()
                .map(|&i| chunks[i][chunks[i].len() - 1 - offset] as i64)
                .collect();
            let split = split_by_value(&set.labels, cfg.holdout_val, cfg.holdout_test, cfg.split_seed)?;
            let (_, report) = fit_probe(cfg.kind, &set, &split, &cfg.probe)?;
            Ok(OffsetRecovery {
                offset,
                n_samples: rows.len(),
                accuracy: Some(report.test_accuracy),
                report: Some(report),
            })
        })
        .collect()
}
