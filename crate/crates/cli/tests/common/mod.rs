//! Helpers shared by the CLI integration tests.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use clap::Parser;
use numlens::actstore::{write_dump, ActivationSet, RowMeta, Site};
use numlens::fixtures::planted_frequency_table;
use numlens::spectra::EmbeddingTable;
use numlens_cli::{run, Cli};
use serde_json::Value;

pub fn cli(args: &[&str]) -> numlens_cli::Result<PathBuf> {
    run(Cli::parse_from(std::iter::once("numlens").chain(args.iter().copied())))
}

pub fn results(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("results.json")).unwrap()).unwrap()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub fn table_dump(table: &EmbeddingTable, dir: &Path) {
    let n = table.len();
    let set = ActivationSet {
        model_id: table.model_id.clone(),
        n_layers: 1,
        layer: 0,
        site: Site::Embedding,
        vectors: table.vectors.clone(),
        labels: table.keys.iter().map(|k| k.parse().unwrap()).collect(),
        meta: (0..n)
            .map(|i| RowMeta {
                sample_id: i as u64,
                token_offset: 0,
                context_type: "vocab".into(),
                prompt_id: format!("v{i}"),
                layer: 0,
                site: Site::Embedding,
            })
            .collect(),
    };
    write_dump(&set, dir).unwrap();
}

/// Row 0 of a planted table is all zeros, so cosine-based tests drop it.
pub fn nonzero_rows(t: &EmbeddingTable) -> EmbeddingTable {
    t.restrict(&t.keys[1..]).unwrap()
}

pub fn planted(id: &str, seed: u64) -> EmbeddingTable {
    let bins: Vec<(usize, f64)> = (0..63).map(|i| (3 + 5 * i, 2.0 + 0.1 * i as f64)).collect();
    planted_frequency_table(id, 1000, 64, &bins, seed).unwrap()
}

pub fn write_tables_config(dir: &Path, dumps: &[&Path]) -> PathBuf {
    let tables: Vec<Value> = dumps
        .iter()
        .enumerate()
        .map(|(i, d)| serde_json::json!({"dump": d, "name": format!("m{i}")}))
        .collect();
    let path = dir.join("tables.json");
    fs::write(&path, serde_json::json!({ "tables": tables }).to_string()).unwrap();
    path
}

/// Runs a command twice into separate directories and compares every
/// results.json and figure byte for byte.
pub fn assert_rerun_identical(tmp: &Path, name: &str, args: &[&str]) -> PathBuf {
    let mut dirs = Vec::new();
    for i in 0..2 {
        let out = tmp.join(format!("{name}-{i}"));
        let mut full: Vec<&str> = args.to_vec();
        full.extend(["--out", s(&out)]);
        cli(&full).unwrap_or_else(|e| panic!("{name}: {e}"));
        dirs.push(out);
    }
    let mut files: Vec<String> = fs::read_dir(&dirs[0])
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|f| f.ends_with(".json") || f.ends_with(".csv") || f.ends_with(".svg"))
        .collect();
    files.sort();
    assert!(files.contains(&"results.json".to_string()));
    for f in files {
        assert_eq!(
            fs::read(dirs[0].join(&f)).unwrap(),
            fs::read(dirs[1].join(&f)).unwrap(),
            "{name}: {f} differs between runs"
        );
    }
    dirs.swap_remove(0)
}

/// Every command run twice on small inputs; panics on the first difference.
pub fn rerun_every_command(t: &Path) {

    let toy = t.join("toy.json");
    fs::write(
        &toy,
        r#"{"seed": 3,
            "model": {"n_layers": 3, "d_model": 32, "n_heads": 2, "d_ff": 64},
            "train": {"steps": 40, "eval_every": 20, "eval_pairs": 100, "operand_max": 99}}"#,
    )
    .unwrap();
    let train = assert_rerun_identical(t, "train", &["train-toy", "--config", s(&toy)]);
    let ckpt = train.join("checkpoint");

    let dump_args = ["--set", "prompts={\"n_prompts\": 600, \"operand_max\": 199}"];
    let dump = assert_rerun_identical(t, "dump", &[&["dump-toy", "--checkpoint", s(&ckpt)][..], &dump_args].concat());
    let dump_dir = dump.join("dump");

    let probe_opts = [
        "--set",
        "probe={\"train\": {\"max_epochs\": 3}}",
        "--set",
        "holdout_val=20",
        "--set",
        "holdout_test=20",
    ];
    let with = |head: &[&'static str]| -> Vec<String> {
        head.iter()
            .map(|s| s.to_string())
            .chain(["--dump".to_string(), s(&dump_dir).to_string()])
            .chain(probe_opts.iter().map(|s| s.to_string()))
            .collect()
    };
    fn as_refs(v: &[String]) -> Vec<&str> {
        v.iter().map(|s| s.as_str()).collect()
    }
    let pt_args = with(&["probe", "train", "--layer", "1"]);
    let pt = assert_rerun_identical(t, "probe-train", &as_refs(&pt_args));
    assert_rerun_identical(
        t,
        "probe-eval",
        &[
            "probe",
            "eval",
            "--dump",
            s(&dump_dir),
            "--layer",
            "1",
            "--probe-dir",
            s(&pt.join("probe")),
        ],
    );
    let cl = assert_rerun_identical(t, "cross", &as_refs(&with(&["probe", "cross-layer"])));
    let cl_r = results(&cl);
    for (i, rep) in cl_r["reports"].as_array().unwrap().iter().enumerate() {
        assert_eq!(cl_r["accuracy"][i][i], rep["test_accuracy"]);
    }
    assert_rerun_identical(t, "loo", &as_refs(&with(&["probe", "loo", "--jobs", "2"])));

    let tables = t.join("toy_tables.json");
    fs::write(
        &tables,
        serde_json::json!({"tables": [
            {"dump": dump_dir, "name": "input"},
            {"dump": dump_dir, "site": "output_embedding", "name": "output"}
        ]})
        .to_string(),
    )
    .unwrap();
    assert_rerun_identical(t, "rsa", &["rsa", "--config", s(&tables)]);
    assert_rerun_identical(t, "fft", &["fft-iou", "--config", s(&tables), "--k", "5", "--set", "pca_dims=8"]);
    assert_rerun_identical(
        t,
        "multitok",
        &[
            "multitok",
            "--set",
            "fixture={\"n_samples\": 500, \"max_chunks\": 3, \"n_features\": 8}",
            "--set",
            "recovery={\"holdout_val\": 20, \"holdout_test\": 20, \"probe\": {\"n_features\": 8, \"proj_dim\": 8, \"train\": {\"max_epochs\": 2}}}",
        ],
    );
    let trace_args: Vec<&str> = [
        &["trace", "errors", "--checkpoint", s(&ckpt)][..],
        &["--set", "prompts={\"n_prompts\": 400, \"operand_max\": 99}"],
        &probe_opts,
    ]
    .concat();
    let tr = assert_rerun_identical(t, "trace", &trace_args);
    let tr_r = results(&tr);
    assert_eq!(tr_r["layers"], serde_json::json!([1, 2, 3]));
    let ex = &tr_r["extraction"];
    assert_eq!(
        ex["n_correct"].as_u64().unwrap() + ex["n_incorrect"].as_u64().unwrap(),
        tr_r["n_traced"].as_u64().unwrap()
    );
    assert_rerun_identical(
        t,
        "ablate",
        &["ablate", "--checkpoint", s(&ckpt), "--set", "prompts.n_prompts=100", "--set", "prompts.operand_max=99"],
    );

    // report re-renders the same figures
    let before = fs::read(tr.join("error_aggregation.svg")).unwrap();
    fs::remove_file(tr.join("error_aggregation.svg")).unwrap();
    cli(&["report", s(&tr)]).unwrap();
    assert_eq!(fs::read(tr.join("error_aggregation.svg")).unwrap(), before);
}
