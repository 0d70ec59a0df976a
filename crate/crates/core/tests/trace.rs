use std::collections::{BTreeMap, BTreeSet};

use numlens::actstore::{split_by_value, ActivationSet, Site};
use numlens::contexts::{gen_math_prompts, gen_natural_prompts, ArithOp, ContextType, ValueSampler};
use numlens::fixtures::{superposition_activations, SuperpositionFixture};
use numlens::numcore::train::TrainConfig;
use numlens::numcore::SeedStream;
use numlens::probes::{LinearProbe, Probe, ProbeConfig, ProbeKind};
use numlens::toylm::{capture_prompts, Tokenizer, ToyConfig, ToyLM, N_RESERVED};
use numlens::trace::*;
use rand::Rng;

fn trace_from_patterns(patterns: &[&str]) -> LayerErrorTrace {
    let samples = patterns
        .iter()
        .enumerate()
        .map(|(i, p)| TraceSample {
            sample_id: i as u64,
            truth: 7,
            prediction: 7,
            probed: p.chars().map(|c| if c == 'T' { 7 } else { 3 }).collect(),
        })
        .collect();
    LayerErrorTrace {
        layers: (1..=patterns[0].len()).collect(),
        samples,
    }
}

#[test]
fn hand_counted_breaks() {
    let t = trace_from_patterns(&["TTFT", "TTTT", "TFFF", "TTTF"]);
    let agg = error_aggregation(&t).unwrap();
    let got: Vec<(usize, f64)> = agg.iter().map(|b| (b.layer, b.fraction)).collect();
    assert_eq!(got, vec![(2, 0.25), (3, 0.25), (4, 0.25)]);
    let all_ok = trace_from_patterns(&["TTTT", "TTTT"]);
    assert!(error_aggregation(&all_ok).unwrap().iter().all(|b| b.fraction == 0.0));
}

fn random_trace(n: usize, layers: usize, seed: u64) -> LayerErrorTrace {
    let mut rng = SeedStream::new(seed).rng("trace");
    let samples = (0..n)
        .map(|i| {
            let truth = rng.random_range(0..5);
            let prediction = if rng.random_bool(0.7) { truth } else { rng.random_range(-1..5) };
            TraceSample {
                sample_id: i as u64,
                truth,
                prediction,
                probed: (0..layers).map(|_| rng.random_range(0..5)).collect(),
            }
        })
        .collect();
    LayerErrorTrace {
        layers: (0..layers).collect(),
        samples,
    }
}

/// Transitions counted by scanning each sample's correctness string.
fn transition_oracle(t: &LayerErrorTrace) -> (Vec<usize>, Vec<usize>) {
    let mut per_layer = vec![0; t.layers.len()];
    let mut per_sample = Vec::new();
    for s in &t.samples {
        let flags: String = s.probed.iter().map(|&v| if v == s.truth { 'T' } else { 'F' }).collect();
        let mut count = 0;
        for (i, w) in flags.as_bytes().windows(2).enumerate() {
            if w == b"TF" {
                per_layer[i + 1] += 1;
                count += 1;
            }
        }
        per_sample.push(count);
    }
    (per_layer, per_sample)
}

#[test]
fn bookkeeping_matches_naive_enumeration() {
    for seed in 0..3 {
        let t = random_trace(10_000, 6, seed);
        let (oracle_layers, oracle_samples) = transition_oracle(&t);
        assert_eq!(break_counts(&t), oracle_layers);
        assert_eq!(oracle_samples.iter().sum::<usize>(), oracle_layers.iter().sum::<usize>());
        let agg = error_aggregation(&t).unwrap();
        for b in &agg {
            assert_eq!(b.fraction, oracle_layers[b.layer] as f64 / 10_000.0);
        }

        // double loop over samples and layers
        let (mut n_c, mut n_i, mut ext_i, mut notext_c) = (0usize, 0usize, 0usize, 0usize);
        let mut per_layer_ext_i = vec![0usize; 6];
        let mut per_layer_notext_c = vec![0usize; 6];
        for s in &t.samples {
            let mut any = false;
            for l in 0..6 {
                if s.probed[l] == s.truth {
                    any = true;
                }
            }
            if s.prediction == s.truth {
                n_c += 1;
                if !any {
                    notext_c += 1;
                }
                for l in 0..6 {
                    if s.probed[l] != s.truth {
                        per_layer_notext_c[l] += 1;
                    }
                }
            } else {
                n_i += 1;
                if any {
                    ext_i += 1;
                }
                for l in 0..6 {
                    if s.probed[l] == s.truth {
                        per_layer_ext_i[l] += 1;
                    }
                }
            }
        }
        let st = extraction_stats(&t).unwrap();
        assert_eq!(st.n_correct + st.n_incorrect, 10_000);
        assert_eq!((st.n_correct, st.n_incorrect), (n_c, n_i));
        assert_eq!(st.p_extracted_given_incorrect, Some(ext_i as f64 / n_i as f64));
        assert_eq!(st.p_not_extracted_given_correct, Some(notext_c as f64 / n_c as f64));
        for l in 0..6 {
            assert_eq!(st.per_layer[l].p_extracted_given_incorrect, Some(per_layer_ext_i[l] as f64 / n_i as f64));
            assert_eq!(
                st.per_layer[l].p_not_extracted_given_correct,
                Some(per_layer_notext_c[l] as f64 / n_c as f64)
            );
        }
    }
}

#[test]
fn extraction_fixtures() {
    let mut t = trace_from_patterns(&["FFTF", "TFFF", "FFFF"]);
    for s in t.samples.iter_mut().take(2) {
        s.prediction = 1;
    }
    let st = extraction_stats(&t).unwrap();
    assert_eq!(st.p_extracted_given_incorrect, Some(1.0));
    assert_eq!(st.p_not_extracted_given_correct, Some(1.0));
    let ok = trace_from_patterns(&["TTTT"]);
    assert_eq!(extraction_stats(&ok).unwrap().p_extracted_given_incorrect, None);
}

#[test]
fn summaries_and_strata() {
    let t = random_trace(500, 3, 9);
    let s = summarize(&t).unwrap();
    let correct = t.samples.iter().filter(|s| s.model_correct()).count();
    for (i, layer) in s.iter().enumerate() {
        let agree_c = t.samples.iter().filter(|s| s.model_correct() && s.probed[i] == s.prediction).count();
        assert_eq!(layer.accuracy_correct, Some(agree_c as f64 / correct as f64));
    }
    let perfect = trace_from_patterns(&["TTT", "TTT"]);
    let s = summarize(&perfect).unwrap();
    assert!(s.iter().all(|l| l.accuracy_correct == Some(1.0) && l.accuracy_incorrect.is_none()));
}

#[test]
fn constant_zero_probe_mean_error() {
    let d = 4;
    let n = 1000;
    let truth: Vec<i64> = (0..n as i64).collect();
    let mut set = ActivationSet::empty("m", 1, 1, Site::ResidualOut, d);
    set.vectors = numlens::numcore::Matrix::zeros(n, d);
    set.labels = truth.clone();
    let mut b = ndarray::Array2::zeros((1, 1000));
    b[[0, 0]] = 1.0;
    let probe = Probe::Linear(LinearProbe {
        w: ndarray::Array2::zeros((d, 1000)),
        b,
    });
    let acts = BTreeMap::from([(1, set)]);
    let probes = BTreeMap::from([(1, probe)]);
    let t = build_trace(&truth, &truth, &acts, &probes).unwrap();
    let s = summarize(&t).unwrap();
    let oracle: f64 = (0..1000).map(|v| v as f64).sum::<f64>() / 1000.0;
    assert_eq!(oracle, 499.5);
    assert_eq!(s[0].mean_abs_error, Some(oracle));
}

fn identity_model() -> ToyLM {
    let mut m = ToyLM::new(ToyConfig {
        n_layers: 2,
        d_model: 32,
        n_heads: 2,
        d_ff: 16,
        vocab_size: N_RESERVED,
        max_seq_len: 8,
        number_init: numlens::toylm::NumberInit::Sinusoidal { features: 16, scale: 1.0 },
        ..ToyConfig::default()
    })
    .unwrap();
    for b in m.params.blocks.iter_mut() {
        b.wo.fill(0.0);
        b.w_down.fill(0.0);
    }
    m
}

fn layer_acts(m: &ToyLM) -> BTreeMap<usize, ActivationSet> {
    let tok = Tokenizer::new(N_RESERVED);
    let prompts = gen_math_prompts(ArithOp::Add, 0..=199, 800, 1).unwrap();
    let sites: BTreeSet<Site> = [Site::ResidualOut].into();
    capture_prompts(m, &tok, &prompts, &sites, "toy", |p| {
        vec![(p.number_spans[0].last_position(), p.number_spans[0].value as i64)]
    })
    .unwrap()
    .into_iter()
    .map(|s| (s.layer, s))
    .collect()
}

fn probe_cfg() -> ProbeConfig {
    ProbeConfig {
        n_classes: 200,
        n_features: 16,
        proj_dim: 16,
        train: TrainConfig {
            learning_rate: 1e-2,
            max_epochs: 20,
            batch_size: 64,
            ..Default::default()
        },
        ..Default::default()
    }
}

#[test]
fn cross_layer_on_identity_layers() {
    let m = identity_model();
    let acts = layer_acts(&m);
    assert_eq!(acts.len(), 3);
    let split = split_by_value(&acts[&0].labels, 20, 20, 0).unwrap();
    let fitted = fit_layer_probes(ProbeKind::Sin, &acts, &split, &probe_cfg()).unwrap();
    let probes: BTreeMap<usize, Probe> = fitted.iter().map(|(&l, (p, _))| (l, p.clone())).collect();
    let cl = cross_layer_matrix(&probes, &acts, &split.test_idx).unwrap();
    for (i, l) in cl.layers.iter().enumerate() {
        assert_eq!(cl.accuracy[[i, i]], fitted[l].1.test_accuracy);
    }
    let first = cl.accuracy[[0, 0]];
    assert!(cl.accuracy.iter().all(|&v| v == first));

    let mut missing = probes.clone();
    missing.remove(&1);
    assert!(matches!(
        cross_layer_matrix(&missing, &acts, &split.test_idx),
        Err(numlens::Error::Config(_))
    ));
}

#[test]
fn leave_one_out_on_identity_layers() {
    let m = identity_model();
    let acts = layer_acts(&m);
    let split = split_by_value(&acts[&0].labels, 20, 20, 0).unwrap();
    let (pooled, _) = pool_layers(1, &acts, &split).unwrap();
    assert!(pooled.meta.iter().all(|r| r.layer != 1));
    let loo = leave_one_out_eval(1, ProbeKind::Sin, &acts, &split, &probe_cfg()).unwrap();
    assert_eq!(loo.pooled_layers, vec![0, 2]);
    assert_eq!(loo.accuracy, loo.pooled_test_accuracy);
    let two: BTreeMap<usize, ActivationSet> = acts.into_iter().take(2).collect();
    assert!(leave_one_out_eval(1, ProbeKind::Sin, &two, &split, &probe_cfg()).is_err());
}

#[test]
fn empty_skip_has_zero_error_reduction() {
    let m = identity_model();
    let tok = Tokenizer::new(N_RESERVED);
    let prompts = gen_math_prompts(ArithOp::Add, 0..=99, 50, 2).unwrap();
    let scores = ablate_and_score(&m, &tok, &prompts, &[]).unwrap();
    assert_eq!(scores.len(), 1);
    assert_eq!(scores[0].error_reduction, Some(0.0));
    assert_eq!(scores[0].accuracy_before, scores[0].accuracy_after);
}

#[test]
fn multitoken_offsets_and_absence() {
    let (acts, chunks) = superposition_activations(&SuperpositionFixture {
        n_samples: 600,
        max_chunks: 2,
        n_features: 8,
        noise: 0.01,
        seed: 1,
    })
    .unwrap();
    let cfg = MultitokConfig {
        offsets: vec![1, 4],
        holdout_val: 20,
        holdout_test: 20,
        probe: ProbeConfig {
            n_features: 8,
            proj_dim: 8,
            train: TrainConfig {
                max_epochs: 3,
                ..Default::default()
            },
            ..Default::default()
        },
        ..Default::default()
    };
    let r = multitok_recovery(&acts, &chunks, &cfg).unwrap();
    assert_eq!(r[0].n_samples, chunks.iter().filter(|c| c.len() > 1).count());
    assert!(r[0].accuracy.is_some());
    assert_eq!(r[1].accuracy, None);
    assert_eq!(r[1].n_samples, 0);
}

#[test]
fn span_chunks_follow_prompts() {
    let m = ToyLM::new(ToyConfig {
        vocab_size: Tokenizer::full_vocab_size(),
        d_model: 16,
        n_heads: 2,
        d_ff: 16,
        ..ToyConfig::default()
    })
    .unwrap();
    let tok = Tokenizer::new(m.cfg.vocab_size);
    let prompts = gen_natural_prompts(
        ContextType::Medical,
        10,
        ValueSampler::MultiToken {
            min_chunks: 1,
            max_chunks: 4,
        },
        3,
    )
    .unwrap();
    let sites: BTreeSet<Site> = [Site::ResidualOut].into();
    let sets = capture_prompts(&m, &tok, &prompts, &sites, "toy", |p| {
        p.number_spans.iter().map(|s| (s.last_position(), s.value as i64)).collect()
    })
    .unwrap();
    let chunks = span_chunks(&sets[0], &prompts).unwrap();
    let expected: Vec<Vec<u16>> = prompts
        .iter()
        .flat_map(|p| p.number_spans.iter().map(|s| s.chunks.clone()))
        .collect();
    assert_eq!(chunks, expected);
}
