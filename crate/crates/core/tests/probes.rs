use ndarray::{array, Array2};
use numlens::actstore::split_by_value;
use numlens::fixtures::{sinusoidal_activations, SinusoidalFixture};
use numlens::numcore::train::{Classifier, TrainConfig};
use numlens::numcore::SeedStream;
use numlens::probes::*;
use numlens::toylm::{ToyConfig, ToyLM, N_RESERVED};
use numlens::Error;
use rand::Rng;

/// Brute-force score `sum_t cos((c - c*) w_t)` without the basis table.
fn cosine_score(c: usize, target: usize, m: usize) -> f64 {
    (0..m / 2)
        .map(|t| {
            let w = (-(2.0 * t as f64) * 1000f64.ln() / m as f64).exp();
            ((c as f64 - target as f64) * w).cos()
        })
        .sum()
}

#[test]
fn basis_rows_decode_themselves() {
    let b = build_sin_basis(1000, 64).unwrap();
    let gram = b.matrix().dot(&b.matrix().t());
    for target in 0..1000 {
        let row = gram.row(target);
        let best = (0..1000).fold(0, |best, c| if row[c] > row[best] { c } else { best });
        assert_eq!(best, target);
        let oracle = (0..1000).fold(0, |best, c| {
            if cosine_score(c, target, 64) > cosine_score(best, target, 64) {
                c
            } else {
                best
            }
        });
        assert_eq!(oracle, target);
    }
}

#[test]
fn basis_row_norms() {
    let b = build_sin_basis(1000, 64).unwrap();
    for row in b.matrix().rows() {
        let n2: f64 = row.iter().map(|v| v * v).sum();
        assert!((n2 - 32.0).abs() <= 32.0 * 4.0 * f64::EPSILON, "{n2}");
    }
}

#[test]
fn identity_sin_probe_recovers_value() {
    let basis = build_sin_basis(1000, 64).unwrap();
    let probe = Probe::Sin(SinProbe {
        w_in: Array2::eye(64),
        w_out: Array2::eye(64),
        basis,
    });
    for c in [0usize, 1, 7, 500, 999] {
        let logits = probe_logits(&probe, &sin_encoding(c, 64)).unwrap();
        let best = (0..1000).fold(0, |b, i| if logits[i] > logits[b] { i } else { b });
        assert_eq!(best, c);
    }
}

#[test]
fn zero_input_and_bias_only() {
    let mut rng = SeedStream::new(0).rng("t");
    let sin = Probe::Sin(SinProbe::new(8, 4, build_sin_basis(10, 6).unwrap(), &mut rng));
    assert!(probe_logits(&sin, &[0.0; 8]).unwrap().iter().all(|&v| v == 0.0));
    let lin = Probe::Linear(LinearProbe {
        w: Array2::zeros((3, 4)),
        b: array![[1.0, -2.0, 0.5, 3.0]],
    });
    assert_eq!(probe_logits(&lin, &[5.0, 6.0, 7.0]).unwrap().to_vec(), vec![1.0, -2.0, 0.5, 3.0]);
    assert!(matches!(probe_logits(&lin, &[1.0, 2.0]), Err(Error::Dimension(_))));
}

#[test]
fn sin_probe_scale_invariance() {
    let mut rng = SeedStream::new(1).rng("t");
    let p = SinProbe::new(16, 8, build_sin_basis(50, 8).unwrap(), &mut rng);
    let x = Array2::from_shape_fn((20, 16), |_| rng.random_range(-1.0..1.0));
    let s = 3.7;
    let scaled = SinProbe {
        w_in: &p.w_in / s,
        ..p.clone()
    };
    assert_eq!(p.predict(x.view()), scaled.predict((&x * s).view()));
}

#[test]
fn sparsity_examples() {
    assert_eq!(weight_sparsity(&Array2::zeros((4, 4)), DEFAULT_SPARSITY_TAU), 0.0);
    let half = Array2::from_shape_fn((4, 4), |(i, _)| if i < 2 { 1.0 } else { 0.0 });
    assert_eq!(weight_sparsity(&half, 1e-5), 0.5);
    assert_eq!(weight_sparsity(&array![[2e-5, -2e-5, 1e-6, 0.0]], 1e-5), 0.5);
}

fn finite_difference_check(probe: &mut Probe) {
    let mut rng = SeedStream::new(2).rng("fd");
    let d = probe.input_dim();
    let x = Array2::from_shape_fn((5, d), |_| rng.random_range(-1.0..1.0));
    let labels = [0usize, 3, 1, 4, 2];
    let loss = |p: &Probe| numlens::numcore::train::softmax_cross_entropy(&p.logits(x.view()), &labels).0;
    let (_, _, g) = numlens::numcore::train::softmax_cross_entropy(&probe.logits(x.view()), &labels);
    let grads = probe.grads(x.view(), g.view());
    let h = 1e-6;
    for k in 0..grads.len() {
        for idx in [0usize, grads[k].len() / 2, grads[k].len() - 1] {
            let mut plus = probe.clone();
            plus.params_mut()[k].as_slice_mut().unwrap()[idx] += h;
            let mut minus = probe.clone();
            minus.params_mut()[k].as_slice_mut().unwrap()[idx] -= h;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let analytic = grads[k].as_slice().unwrap()[idx];
            assert!((numeric - analytic).abs() < 1e-6, "param {k}[{idx}]: {numeric} vs {analytic}");
        }
    }
}

#[test]
fn gradients_of_all_kinds() {
    let cfg = ProbeConfig {
        n_classes: 6,
        n_features: 4,
        proj_dim: 3,
        mlp_hidden: 7,
        ..Default::default()
    };
    for kind in [ProbeKind::Sin, ProbeKind::Linear, ProbeKind::Mlp] {
        finite_difference_check(&mut init_probe(kind, 5, &cfg).unwrap());
    }
}

fn small_fixture() -> numlens::actstore::ActivationSet {
    sinusoidal_activations(&SinusoidalFixture {
        n_classes: 200,
        d_model: 24,
        n_features: 16,
        per_value: 4,
        noise: 0.01,
        seed: 3,
    })
    .unwrap()
}

fn small_cfg() -> ProbeConfig {
    ProbeConfig {
        n_classes: 200,
        n_features: 16,
        proj_dim: 16,
        train: TrainConfig {
            learning_rate: 3e-3,
            max_epochs: 60,
            batch_size: 64,
            ..Default::default()
        },
        ..Default::default()
    }
}

#[test]
fn sin_probe_generalizes_to_held_out_values() {
    let acts = small_fixture();
    let split = split_by_value(&acts.labels, 20, 20, 0).unwrap();
    let (_, sin) = fit_probe(ProbeKind::Sin, &acts, &split, &small_cfg()).unwrap();
    let (_, lin) = fit_probe(ProbeKind::Linear, &acts, &split, &small_cfg()).unwrap();
    assert!(sin.test_accuracy >= 0.95, "{sin:?}");
    assert!(lin.test_accuracy <= sin.test_accuracy);
    assert_eq!(sin.n_test, 20 * 4);
}

#[test]
fn split_violations_rejected() {
    let acts = small_fixture();
    let mut split = split_by_value(&acts.labels, 20, 20, 0).unwrap();
    split.train_idx.push(split.test_idx[0]);
    assert!(matches!(fit_probe(ProbeKind::Sin, &acts, &split, &small_cfg()), Err(Error::Split(_))));
    let mut empty = split_by_value(&acts.labels, 20, 20, 0).unwrap();
    empty.test_idx.clear();
    assert!(matches!(fit_probe(ProbeKind::Sin, &acts, &empty, &small_cfg()), Err(Error::Split(_))));
}

#[test]
fn fit_ignores_row_order() {
    let acts = small_fixture();
    let mut cfg = small_cfg();
    cfg.train.max_epochs = 5;
    let split = split_by_value(&acts.labels, 20, 20, 0).unwrap();
    let (_, a) = fit_probe(ProbeKind::Sin, &acts, &split, &cfg).unwrap();
    let mut perm: Vec<usize> = (0..acts.len()).collect();
    perm.reverse();
    perm.swap(3, 100);
    let shuffled = acts.select(&perm);
    let split2 = split_by_value(&shuffled.labels, 20, 20, 0).unwrap();
    let (_, b) = fit_probe(ProbeKind::Sin, &shuffled, &split2, &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn saved_probe_replays_report() {
    let acts = small_fixture();
    let mut cfg = small_cfg();
    cfg.train.max_epochs = 5;
    let split = split_by_value(&acts.labels, 20, 20, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for kind in [ProbeKind::Sin, ProbeKind::Linear, ProbeKind::Mlp] {
        let (probe, report) = fit_probe(kind, &acts, &split, &cfg).unwrap();
        save_probe(&probe, dir.path(), kind.as_str(), Some(&cfg), Some(&report)).unwrap();
        let (back, side) = load_probe(dir.path(), kind.as_str()).unwrap();
        assert_eq!(back, probe);
        assert_eq!(side.report.as_ref(), Some(&report));
        assert_eq!(probe_accuracy(&back, &acts, &split.train_idx).unwrap(), report.train_accuracy);
        assert_eq!(probe_accuracy(&back, &acts, &split.test_idx).unwrap(), report.test_accuracy);
    }
}

#[test]
fn tuned_lens_identity_and_training() {
    let model = ToyLM::new(ToyConfig {
        n_layers: 2,
        d_model: 16,
        n_heads: 2,
        d_ff: 32,
        vocab_size: N_RESERVED,
        max_seq_len: 8,
        init_std: 0.3,
        ..ToyConfig::default()
    })
    .unwrap();
    let mut rng = SeedStream::new(5).rng("seqs");
    let seqs: Vec<Vec<u32>> = (0..160)
        .map(|_| (0..6).map(|_| rng.random_range(0..N_RESERVED as u32)).collect())
        .collect();
    let (train, held) = seqs.split_at(120);

    let last = lens_corpus(&model, held, 2).unwrap();
    let id = LensTranslator::identity(2, 16);
    assert_eq!(lens_kl(&model, &id, &last).unwrap(), 0.0);
    assert_eq!(lens_agreement(&model, &id, &last).unwrap(), 1.0);

    let train_c = lens_corpus(&model, train, 1).unwrap();
    let held_c = lens_corpus(&model, held, 1).unwrap();
    let cfg = LensConfig {
        learning_rate: 1e-2,
        epochs: 30,
        batch_size: 64,
        seed: 0,
    };
    let lens = fit_tuned_lens(&model, &train_c, &cfg).unwrap();
    let base = lens_kl(&model, &LensTranslator::identity(1, 16), &held_c).unwrap();
    let tuned = lens_kl(&model, &lens, &held_c).unwrap();
    assert!(tuned < base, "{tuned} vs {base}");
    assert!(matches!(lens_kl(&model, &lens, &last), Err(Error::Config(_))));
}
