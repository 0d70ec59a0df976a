use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Proc;

use numlens_cli::report::{Figure, Heatmap, LineChart, Series};
use numlens_cli::results::Results;
use numlens_cli::CliError;
use serde_json::Value;
use tempfile::TempDir;

mod common;
use common::*;

#[test]
fn rsa_of_identical_dumps_is_one() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let t = nonzero_rows(&planted("m", 1));
    table_dump(&t, &a);
    table_dump(&t, &b);
    let cfg = write_tables_config(tmp.path(), &[&a, &b]);
    let out = tmp.path().join("out");
    cli(&["rsa", "--config", s(&cfg), "--out", s(&out)]).unwrap();
    let r = results(&out);
    assert_eq!(r["kind"], "rsa");
    assert_eq!(r["scores"][0][1], 1.0);
    for f in ["config.json", "version.json", "rsa.csv", "rsa.svg"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn fft_iou_on_planted_fixtures_is_all_ones() {
    let tmp = TempDir::new().unwrap();
    let dirs: Vec<PathBuf> = (0..3).map(|i| tmp.path().join(format!("t{i}"))).collect();
    for (i, d) in dirs.iter().enumerate() {
        table_dump(&planted(&format!("m{i}"), 10 + i as u64), d);
    }
    let refs: Vec<&Path> = dirs.iter().map(|d| d.as_path()).collect();
    let cfg = write_tables_config(tmp.path(), &refs);
    let out = tmp.path().join("out");
    cli(&["fft-iou", "--config", s(&cfg), "--k", "63", "--out", s(&out)]).unwrap();
    let r = results(&out);
    assert_eq!(r["k"], 63);
    for row in r["iou"].as_array().unwrap() {
        assert!(row.as_array().unwrap().iter().all(|v| v == 1.0));
    }
    let planted: Vec<u64> = (0..63).map(|i| 3 + 5 * i).collect();
    let bins: Vec<u64> = r["topk"][0]["bins"].as_array().unwrap().iter().map(|b| b.as_u64().unwrap()).collect();
    assert_eq!(bins, planted);
    assert_eq!(r["optimal_k"], 63);

    // k defaults to 63 when neither config nor flag sets it
    let out2 = tmp.path().join("out2");
    cli(&["fft-iou", "--config", s(&cfg), "--out", s(&out2)]).unwrap();
    assert_eq!(results(&out2)["k"], 63);
    assert_eq!(fs::read(out.join("results.json")).unwrap(), fs::read(out2.join("results.json")).unwrap());
}

#[test]
fn flags_override_config_keys() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a");
    table_dump(&planted("m", 1), &a);
    let cfg = tmp.path().join("c.toml");
    fs::write(&cfg, format!("seed = 5\nk = 7\n[[tables]]\ndump = {:?}\n", s(&a))).unwrap();
    let out = tmp.path().join("out");
    cli(&["fft-iou", "--config", s(&cfg), "--seed", "9", "--set", "pca_dims=8", "--out", s(&out)]).unwrap();
    let resolved: Value = serde_json::from_str(&fs::read_to_string(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(resolved["seed"], 9);
    assert_eq!(resolved["k"], 7);
    assert_eq!(resolved["pca_dims"], 8);
    assert_eq!(resolved["k_max"], 7);
    cli(&["fft-iou", "--config", s(&cfg), "--k", "4", "--out", s(&out)]).unwrap();
    assert_eq!(results(&out)["k"], 4);
}

#[test]
fn config_errors_carry_json_pointers() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let err = cli(&["multitok", "--set", "recovery.probe.train.max_epoch=3", "--out", s(&out)]).unwrap_err();
    match &err {
        CliError::Config { pointer, .. } => assert_eq!(pointer, "/recovery/probe/train/max_epoch"),
        other => panic!("{other:?}"),
    }
    assert_eq!(err.exit_code(), 2);
    let err = cli(&["rsa", "--set", "tables=[{\"dump\": 3}]", "--out", s(&out)]).unwrap_err();
    match &err {
        CliError::Config { pointer, .. } => assert_eq!(pointer, "/tables/0/dump"),
        other => panic!("{other:?}"),
    }
    let err = cli(&["multitok", "--out", s(&out)]).unwrap_err();
    assert!(matches!(&err, CliError::Config { pointer, .. } if pointer == "/fixture"));
}

#[test]
fn missing_inputs_are_store_errors() {
    let tmp = TempDir::new().unwrap();
    let err = cli(&["ablate", "--checkpoint", "/nonexistent/ckpt", "--out", s(tmp.path())]).unwrap_err();
    assert!(matches!(err, CliError::Core(numlens::Error::Store { .. })));
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn binary_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let bin = env!("CARGO_BIN_EXE_numlens");
    let code = |args: &[&str]| Proc::new(bin).args(args).output().unwrap().status.code();
    let out = tmp.path().join("o");
    assert_eq!(code(&["rsa", "--set", "tables=3", "--out", s(&out)]), Some(2));
    assert_eq!(code(&["ablate", "--checkpoint", "/nonexistent", "--out", s(&out)]), Some(3));
    assert_eq!(
        code(&[
            "train-toy",
            "--set",
            "model={\"d_model\": 16, \"n_heads\": 2, \"d_ff\": 16}",
            "--set",
            "train={\"steps\": 5, \"lr\": 1e9, \"warmup\": 0, \"operand_max\": 20, \"eval_pairs\": 20}",
            "--out",
            s(&out)
        ]),
        Some(4)
    );
    let a = tmp.path().join("a");
    table_dump(&nonzero_rows(&planted("m", 1)), &a);
    let cfg = write_tables_config(tmp.path(), &[&a, &a]);
    assert_eq!(code(&["rsa", "--config", s(&cfg), "--out", s(&out)]), Some(0));
}

#[test]
fn heatmap_svg_has_cells_and_colorbar() {
    let fig = Figure::Heatmap(Heatmap {
        name: "m".into(),
        title: "t".into(),
        row_label: "r".into(),
        col_label: "c".into(),
        rows: vec!["0".into(), "1".into()],
        cols: vec!["0".into(), "1".into()],
        values: vec![vec![Some(1.0), Some(0.0)], vec![Some(0.0), Some(1.0)]],
        range: None,
    });
    let svg = fig.to_svg().unwrap();
    assert_eq!(svg.matches(r#"class="cell""#).count(), 4);
    assert!(svg.contains(r#"id="colorbar""#));
    assert!(svg.matches("colorbar-step").count() > 1);
    assert_eq!(fig.to_svg().unwrap(), svg);
    assert_eq!(fig.to_csv().unwrap().lines().count(), 5);
}

#[test]
fn empty_series_is_a_report_error() {
    let no_series = Figure::Lines(LineChart {
        name: "l".into(),
        title: "t".into(),
        x_label: "x".into(),
        y_label: "y".into(),
        series: vec![],
    });
    assert!(matches!(no_series.to_svg(), Err(CliError::Report(_))));
    let empty = Figure::Lines(LineChart {
        series: vec![Series {
            name: "s".into(),
            points: vec![],
        }],
        ..match no_series {
            Figure::Lines(l) => l,
            _ => unreachable!(),
        }
    });
    assert!(matches!(empty.to_csv(), Err(CliError::Report(_))));
}

#[test]
fn cross_layer_heatmap_axis_labels() {
    let report = |layer: usize, acc: f64| {
        serde_json::json!({
            "kind": "sin", "model_id": "toy", "layer": layer, "site": "residual_out",
            "n_train": 8, "n_val": 1, "n_test": 1, "train_accuracy": 1.0, "val_accuracy": 1.0,
            "test_accuracy": acc, "best_epoch": 1, "epochs_run": 1
        })
    };
    let r = Results::from_json(serde_json::json!({
        "kind": "probe-cross-layer",
        "seed": 0,
        "site": "residual_out",
        "layers": [1, 2],
        "accuracy": [[0.9, 0.2], [0.1, 0.8]],
        "reports": [report(1, 0.9), report(2, 0.8)],
    }))
    .unwrap();
    let figs = r.figures().unwrap();
    let heat = figs.iter().find(|f| f.name() == "cross_layer").unwrap();
    let svg = heat.to_svg().unwrap();
    assert!(svg.contains(">trained on layer<") && svg.contains(">evaluated on layer<"));
    assert_eq!(svg.matches(r#"class="cell""#).count(), 4);
    assert!(heat.to_csv().unwrap().starts_with("trained on layer,evaluated on layer,value\n"));
}

#[test]
fn report_rejects_unknown_kinds() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("results.json"), r#"{"kind": "mystery"}"#).unwrap();
    let err = cli(&["report", s(tmp.path())]).unwrap_err();
    assert!(matches!(err, CliError::Report(m) if m.contains("mystery")));
    let err = cli(&["report", "/nonexistent/results"]).unwrap_err();
    assert_eq!(err.exit_code(), 3);
}
