//! One config type and one runner per subcommand. Runners write any bulky
//! artifacts (checkpoints, dumps, probes) under the result directory and
//! return the results document.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use numlens::actstore::{read_dump, read_manifest, split_by_value, write_dump, ActivationSet, DumpFilter, RowMeta, Site};
use numlens::contexts::{gen_math_prompts, read_jsonl, ArithOp, PromptRecord};
use numlens::fixtures::{superposition_activations, SuperpositionFixture};
use numlens::numcore::Matrix;
use numlens::probes::{fit_probe, load_probe, probe_accuracy, save_probe, ProbeConfig, ProbeKind};
use numlens::spectra::{
    fourier_profile, k_sweep, optimal_k, pairwise_iou, rsa_score, topk_freqs, EmbeddingTable, DEFAULT_PCA_DIMS, DEFAULT_TOP_K,
};
use numlens::toylm::{
    capture_prompts, load_checkpoint, save_checkpoint, train_arithmetic, ArithTrainConfig, Tokenizer, ToyConfig, ToyLM,
};
use numlens::trace::{
    ablate_and_score, cross_layer_matrix, error_aggregation, extraction_stats, fit_layer_probes, leave_one_out_eval,
    multitok_recovery, result_probe_eval, span_chunks, summarize, MultitokConfig,
};

use crate::config::require_exists;
use crate::error::{CliError, Result};
use crate::results::*;

const TOY_MODEL_ID: &str = "toy";

fn required<'a, T>(v: &'a Option<T>, pointer: &str) -> Result<&'a T> {
    v.as_ref().ok_or_else(|| CliError::config(pointer, "required"))
}

fn rel(out: &Path, p: &Path) -> String {
    p.strip_prefix(out).unwrap_or(p).display().to_string()
}

/// Arithmetic prompts generated from the run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MathPrompts {
    pub op: ArithOp,
    pub operand_min: u64,
    pub operand_max: u64,
    pub n_prompts: usize,
}

impl Default for MathPrompts {
    fn default() -> Self {
        MathPrompts {
            op: ArithOp::Add,
            operand_min: 0,
            operand_max: 499,
            n_prompts: 2000,
        }
    }
}

impl MathPrompts {
    fn generate(&self, seed: u64) -> Result<Vec<PromptRecord>> {
        if self.operand_min > self.operand_max {
            return Err(CliError::config("/prompts/operand_min", "exceeds operand_max"));
        }
        Ok(gen_math_prompts(self.op, self.operand_min..=self.operand_max, self.n_prompts, seed)?)
    }
}

fn load_model(path: &Path) -> Result<(ToyLM, Tokenizer)> {
    require_exists(path)?;
    let model = load_checkpoint(path)?;
    let tok = Tokenizer::new(model.cfg.vocab_size);
    Ok((model, tok))
}

fn read_prompts(path: &Path) -> Result<Vec<PromptRecord>> {
    let f = fs::File::open(path).map_err(|e| numlens::Error::Store {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(read_jsonl(BufReader::new(f))?)
}

/// Numeric rows of one `(layer, site)` slice of a dump.
fn read_layer(dump: &Path, layer: usize, site: Site, context_type: &Option<String>) -> Result<ActivationSet> {
    let filter = DumpFilter {
        layer: Some(layer),
        site: Some(site),
        context_type: context_type.clone(),
    };
    let set = read_dump(dump, &filter)?.numeric_rows();
    if set.is_empty() {
        return Err(numlens::Error::Schema(format!(
            "{}: no labelled rows for layer {layer}, site {site}",
            dump.display()
        ))
        .into());
    }
    Ok(set)
}

fn read_layers(
    dump: &Path,
    layers: &Option<Vec<usize>>,
    site: Site,
    context_type: &Option<String>,
) -> Result<BTreeMap<usize, ActivationSet>> {
    require_exists(dump)?;
    let layers: BTreeSet<usize> = match layers {
        Some(l) => l.iter().copied().collect(),
        None => read_manifest(dump)?
            .entries
            .iter()
            .filter(|e| e.site == site)
            .map(|e| e.layer)
            .collect(),
    };
    if layers.is_empty() {
        return Err(CliError::config("/layers", format!("no layers with site {site} in the dump")));
    }
    layers
        .into_iter()
        .map(|l| Ok((l, read_layer(dump, l, site, context_type)?)))
        .collect()
}

// ---------------------------------------------------------------- train-toy

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainToyConfig {
    pub seed: u64,
    pub model: ToyConfig,
    pub train: ArithTrainConfig,
}

impl Default for TrainToyConfig {
    fn default() -> Self {
        TrainToyConfig {
            seed: 0,
            model: ToyConfig::default(),
            train: ArithTrainConfig::default(),
        }
    }
}

impl TrainToyConfig {
    pub fn resolve(&mut self) -> Result<()> {
        self.model.seed = self.seed;
        self.train.seed = self.seed;
        Ok(())
    }
}

pub fn train_toy(cfg: &TrainToyConfig, out: &Path) -> Result<Results> {
    let mut model = ToyLM::new(cfg.model.clone())?;
    let metrics = train_arithmetic(&mut model, &cfg.train)?;
    let dir = out.join("checkpoint");
    save_checkpoint(&model, &dir)?;
    Ok(Results::TrainToy(TrainToyResult {
        seed: cfg.seed,
        checkpoint: rel(out, &dir),
        n_params: model.params.count(),
        metrics,
    }))
}

// ----------------------------------------------------------------- dump-toy

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DumpPositions {
    /// Last chunk of the final number in each prompt.
    LastNumber,
    /// Last chunk of every number.
    Numbers,
    /// The final prompt position, labelled with the prompt's target.
    Answer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DumpToyConfig {
    pub seed: u64,
    pub checkpoint: Option<PathBuf>,
    /// JSON-lines prompts; arithmetic prompts are generated when absent.
    pub prompts_file: Option<PathBuf>,
    pub prompts: MathPrompts,
    pub sites: Vec<Site>,
    pub positions: DumpPositions,
    /// Also dump the number rows of the input and output embeddings.
    pub embeddings: bool,
}

impl Default for DumpToyConfig {
    fn default() -> Self {
        DumpToyConfig {
            seed: 0,
            checkpoint: None,
            prompts_file: None,
            prompts: MathPrompts::default(),
            sites: vec![Site::ResidualOut],
            positions: DumpPositions::LastNumber,
            embeddings: true,
        }
    }
}

impl DumpToyConfig {
    pub fn resolve(&mut self) -> Result<()> {
        require_exists(required(&self.checkpoint, "/checkpoint")?)?;
        if let Some(p) = &self.prompts_file {
            require_exists(p)?;
        }
        if self.sites.is_empty() {
            return Err(CliError::config("/sites", "no sites requested"));
        }
        if self.sites.contains(&Site::OutputEmbedding) {
            return Err(CliError::config("/sites", "output_embedding is dumped via `embeddings`"));
        }
        Ok(())
    }
}

fn embedding_set(model_id: &str, n_layers: usize, layer: usize, site: Site, rows: Vec<Vec<f64>>) -> Result<ActivationSet> {
    let n = rows.len();
    Ok(ActivationSet {
        model_id: model_id.into(),
        n_layers,
        layer,
        site,
        vectors: Matrix::from_rows(&rows)?,
        labels: (0..n as i64).collect(),
        meta: (0..n)
            .map(|v| RowMeta {
                sample_id: v as u64,
                token_offset: 0,
                context_type: "vocab".into(),
                prompt_id: format!("vocab-{v:03}"),
                layer,
                site,
            })
            .collect(),
    })
}

pub fn dump_toy(cfg: &DumpToyConfig, out: &Path) -> Result<Results> {
    let (model, tok) = load_model(required(&cfg.checkpoint, "/checkpoint")?)?;
    let prompts = match &cfg.prompts_file {
        Some(p) => read_prompts(p)?,
        None => cfg.prompts.generate(cfg.seed)?,
    };
    let dir = out.join("dump");
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    }
    let sites: BTreeSet<Site> = cfg.sites.iter().copied().collect();
    let positions = cfg.positions;
    let sets = capture_prompts(&model, &tok, &prompts, &sites, TOY_MODEL_ID, |p| match positions {
        DumpPositions::LastNumber => p
            .number_spans
            .last()
            .map(|s| vec![(s.last_position(), s.value as i64)])
            .unwrap_or_default(),
        DumpPositions::Numbers => p.number_spans.iter().map(|s| (s.last_position(), s.value as i64)).collect(),
        DumpPositions::Answer => vec![(p.tokens.len() - 1, p.target.map_or(-1, |t| t as i64))],
    })?;
    let mut manifest = None;
    for set in &sets {
        manifest = Some(write_dump(set, &dir)?);
    }
    if cfg.embeddings {
        let n_layers = model.cfg.n_layers;
        let n = numlens::toylm::N_NUMBERS.min(model.cfg.vocab_size);
        let p = &model.params;
        let input = (0..n).map(|v| p.tok_emb.row(v).iter().map(|&x| x as f64).collect()).collect();
        let output = (0..n).map(|v| p.unembed.column(v).iter().map(|&x| x as f64).collect()).collect();
        write_dump(&embedding_set(TOY_MODEL_ID, n_layers, 0, Site::Embedding, input)?, &dir)?;
        manifest = Some(write_dump(
            &embedding_set(TOY_MODEL_ID, n_layers, n_layers + 1, Site::OutputEmbedding, output)?,
            &dir,
        )?);
    }
    let manifest = manifest.ok_or_else(|| CliError::config("/prompts", "nothing to dump"))?;
    Ok(Results::DumpToy(DumpToyResult {
        seed: cfg.seed,
        dump: rel(out, &dir),
        model_id: manifest.model_id.clone(),
        n_prompts: prompts.len(),
        entries: manifest
            .entries
            .iter()
            .map(|e| DumpEntry {
                layer: e.layer,
                site: e.site,
                context_type: e.context_type.clone(),
                n_rows: e.n_rows,
            })
            .collect(),
    }))
}

// -------------------------------------------------------------------- probe

/// Shared by `probe train`, `probe cross-layer` and `probe loo`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeRunConfig {
    pub seed: u64,
    pub dump: Option<PathBuf>,
    /// `probe train` uses exactly one layer; the others default to every
    /// layer the dump has for `site`.
    pub layers: Option<Vec<usize>>,
    pub site: Site,
    pub context_type: Option<String>,
    pub kind: ProbeKind,
    pub holdout_val: usize,
    pub holdout_test: usize,
    pub probe: ProbeConfig,
}

impl Default for ProbeRunConfig {
    fn default() -> Self {
        ProbeRunConfig {
            seed: 0,
            dump: None,
            layers: None,
            site: Site::ResidualOut,
            context_type: None,
            kind: ProbeKind::Sin,
            holdout_val: 100,
            holdout_test: 100,
            probe: ProbeConfig::default(),
        }
    }
}

impl ProbeRunConfig {
    pub fn resolve(&mut self) -> Result<()> {
        require_exists(required(&self.dump, "/dump")?)?;
        self.probe.train.seed = self.seed;
        Ok(())
    }

    fn split(&self, labels: &[i64]) -> Result<numlens::actstore::ValueSplit> {
        Ok(split_by_value(labels, self.holdout_val, self.holdout_test, self.seed)?)
    }
}

pub fn probe_train(cfg: &ProbeRunConfig, out: &Path) -> Result<Results> {
    let layer = match cfg.layers.as_deref() {
        Some([l]) => *l,
        _ => return Err(CliError::config("/layers", "probe train takes exactly one layer")),
    };
    let acts = read_layer(required(&cfg.dump, "/dump")?, layer, cfg.site, &cfg.context_type)?;
    let split = cfg.split(&acts.labels)?;
    let (probe, report) = fit_probe(cfg.kind, &acts, &split, &cfg.probe)?;
    let dir = out.join("probe");
    save_probe(&probe, &dir, "probe", Some(&cfg.probe), Some(&report))?;
    Ok(Results::ProbeTrain(ProbeTrainResult {
        seed: cfg.seed,
        probe: rel(out, &dir),
        report,
    }))
}

pub fn probe_cross_layer(cfg: &ProbeRunConfig, out: &Path) -> Result<Results> {
    let acts = read_layers(required(&cfg.dump, "/dump")?, &cfg.layers, cfg.site, &cfg.context_type)?;
    let first = acts.values().next().expect("at least one layer");
    let split = cfg.split(&first.labels)?;
    let fitted = fit_layer_probes(cfg.kind, &acts, &split, &cfg.probe)?;
    let dir = out.join("probes");
    for (layer, (probe, report)) in &fitted {
        save_probe(probe, &dir, &format!("layer{layer}"), Some(&cfg.probe), Some(report))?;
    }
    let probes = fitted.iter().map(|(&l, (p, _))| (l, p.clone())).collect();
    let matrix = cross_layer_matrix(&probes, &acts, &split.test_idx)?;
    Ok(Results::ProbeCrossLayer(CrossLayerResult {
        seed: cfg.seed,
        site: cfg.site,
        accuracy: matrix.accuracy.rows().into_iter().map(|r| r.to_vec()).collect(),
        layers: matrix.layers,
        reports: fitted.into_values().map(|(_, r)| r).collect(),
    }))
}

pub fn probe_loo(cfg: &ProbeRunConfig, _out: &Path) -> Result<Results> {
    use rayon::prelude::*;
    let acts = read_layers(required(&cfg.dump, "/dump")?, &cfg.layers, cfg.site, &cfg.context_type)?;
    let first = acts.values().next().expect("at least one layer");
    let split = cfg.split(&first.labels)?;
    let layers: Vec<usize> = acts.keys().copied().collect();
    let held_out = layers
        .par_iter()
        .map(|&l| leave_one_out_eval(l, cfg.kind, &acts, &split, &cfg.probe))
        .collect::<numlens::Result<Vec<_>>>()?;
    Ok(Results::ProbeLoo(LooResult {
        seed: cfg.seed,
        site: cfg.site,
        layers,
        held_out,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeEvalConfig {
    pub seed: u64,
    pub dump: Option<PathBuf>,
    pub layer: usize,
    pub site: Site,
    pub context_type: Option<String>,
    /// Directory written by `probe train` (its `probe/` subdirectory).
    pub probe_dir: Option<PathBuf>,
    pub probe_name: String,
}

impl Default for ProbeEvalConfig {
    fn default() -> Self {
        ProbeEvalConfig {
            seed: 0,
            dump: None,
            layer: 0,
            site: Site::ResidualOut,
            context_type: None,
            probe_dir: None,
            probe_name: "probe".into(),
        }
    }
}

impl ProbeEvalConfig {
    pub fn resolve(&mut self) -> Result<()> {
        require_exists(required(&self.dump, "/dump")?)?;
        require_exists(required(&self.probe_dir, "/probe_dir")?)?;
        Ok(())
    }
}

pub fn probe_eval(cfg: &ProbeEvalConfig, _out: &Path) -> Result<Results> {
    let acts = read_layer(required(&cfg.dump, "/dump")?, cfg.layer, cfg.site, &cfg.context_type)?;
    let (probe, sidecar) = load_probe(required(&cfg.probe_dir, "/probe_dir")?, &cfg.probe_name)?;
    let all: Vec<usize> = (0..acts.len()).collect();
    Ok(Results::ProbeEval(ProbeEvalResult {
        seed: cfg.seed,
        layer: cfg.layer,
        site: cfg.site,
        n_rows: acts.len(),
        accuracy: probe_accuracy(&probe, &acts, &all)?,
        trained: sidecar.report,
    }))
}

// ------------------------------------------------------------ rsa / fft-iou

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableRef {
    pub dump: PathBuf,
    #[serde(default = "embedding_site")]
    pub site: Site,
    #[serde(default)]
    pub layer: Option<usize>,
    #[serde(default)]
    pub name: Option<String>,
}

fn embedding_site() -> Site {
    Site::Embedding
}

fn check_tables(tables: &[TableRef], min: usize) -> Result<()> {
    if tables.len() < min {
        return Err(CliError::config("/tables", format!("need at least {min} tables")));
    }
    for t in tables {
        require_exists(&t.dump)?;
    }
    Ok(())
}

/// Tables restricted to the keys they all share, in numeric order.
fn load_tables(tables: &[TableRef]) -> Result<(Vec<String>, Vec<EmbeddingTable>)> {
    let mut names = Vec::new();
    let mut loaded = Vec::new();
    for (i, t) in tables.iter().enumerate() {
        let filter = DumpFilter {
            layer: t.layer,
            site: Some(t.site),
            context_type: None,
        };
        let table = EmbeddingTable::from_activations(&read_dump(&t.dump, &filter)?)?;
        let name = t.name.clone().unwrap_or_else(|| format!("{}:{}", i, table.model_id));
        if names.contains(&name) {
            return Err(CliError::config(format!("/tables/{i}/name"), format!("duplicate name {name:?}")));
        }
        names.push(name);
        loaded.push(table);
    }
    let mut shared: BTreeSet<i64> = loaded[0].keys.iter().filter_map(|k| k.parse().ok()).collect();
    for t in &loaded[1..] {
        let keys: BTreeSet<i64> = t.keys.iter().filter_map(|k| k.parse().ok()).collect();
        shared = shared.intersection(&keys).copied().collect();
    }
    let keys: Vec<String> = shared.iter().map(|k| k.to_string()).collect();
    let loaded = loaded.iter().map(|t| t.restrict(&keys)).collect::<numlens::Result<Vec<_>>>()?;
    Ok((names, loaded))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RsaConfig {
    pub seed: u64,
    pub tables: Vec<TableRef>,
}

impl RsaConfig {
    pub fn resolve(&mut self) -> Result<()> {
        check_tables(&self.tables, 2)
    }
}

pub fn rsa(cfg: &RsaConfig, _out: &Path) -> Result<Results> {
    let (names, tables) = load_tables(&cfg.tables)?;
    let n = tables.len();
    let mut scores = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let s = rsa_score(&tables[i], &tables[j])?;
            scores[i][j] = s;
            scores[j][i] = s;
        }
    }
    Ok(Results::Rsa(RsaResult {
        seed: cfg.seed,
        names,
        n_keys: tables[0].len(),
        scores,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FftIouConfig {
    pub seed: u64,
    pub tables: Vec<TableRef>,
    pub k: usize,
    pub pca_dims: usize,
    /// Upper end of the k sweep; defaults to `k`.
    pub k_max: Option<usize>,
}

impl Default for FftIouConfig {
    fn default() -> Self {
        FftIouConfig {
            seed: 0,
            tables: Vec::new(),
            k: DEFAULT_TOP_K,
            pca_dims: DEFAULT_PCA_DIMS,
            k_max: None,
        }
    }
}

impl FftIouConfig {
    pub fn resolve(&mut self) -> Result<()> {
        check_tables(&self.tables, 1)?;
        if self.k == 0 {
            return Err(CliError::config("/k", "must be positive"));
        }
        self.k_max.get_or_insert(self.k);
        Ok(())
    }
}

pub fn fft_iou(cfg: &FftIouConfig, _out: &Path) -> Result<Results> {
    let (names, tables) = load_tables(&cfg.tables)?;
    let profiles = tables
        .iter()
        .map(|t| fourier_profile(t, cfg.pca_dims))
        .collect::<numlens::Result<Vec<_>>>()?;
    let topk = profiles
        .iter()
        .map(|p| topk_freqs(p, cfg.k))
        .collect::<numlens::Result<Vec<_>>>()?;
    let iou = pairwise_iou(&topk)?;
    let k_max = cfg.k_max.unwrap_or(cfg.k);
    let sweep = k_sweep(&profiles, k_max)?;
    let optimal_k = optimal_k(&profiles, k_max)?;
    Ok(Results::FftIou(FftIouResult {
        seed: cfg.seed,
        names,
        n_values: tables[0].len(),
        pca_dims: cfg.pca_dims,
        pca_centered: true,
        k: cfg.k,
        topk,
        iou: iou.rows().into_iter().map(|r| r.to_vec()).collect(),
        sweep,
        optimal_k,
        magnitudes: profiles.into_iter().map(|p| p.magnitude).collect(),
    }))
}

// ----------------------------------------------------------------- multitok

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultitokRunConfig {
    pub seed: u64,
    /// Synthetic superposition activations; exclusive with `dump`.
    pub fixture: Option<SuperpositionFixture>,
    pub dump: Option<PathBuf>,
    /// Prompts the dump was captured from, for chunk lookup.
    pub prompts_file: Option<PathBuf>,
    pub layer: Option<usize>,
    pub site: Option<Site>,
    pub recovery: MultitokConfig,
}

impl MultitokRunConfig {
    pub fn resolve(&mut self) -> Result<()> {
        match (&mut self.fixture, &self.dump) {
            (Some(f), None) => f.seed = self.seed,
            (None, Some(d)) => {
                require_exists(d)?;
                require_exists(required(&self.prompts_file, "/prompts_file")?)?;
                required(&self.layer, "/layer")?;
                self.site.get_or_insert(Site::ResidualOut);
            }
            _ => return Err(CliError::config("/fixture", "give exactly one of fixture or dump")),
        }
        self.recovery.split_seed = self.seed;
        self.recovery.probe.train.seed = self.seed;
        Ok(())
    }
}

pub fn multitok(cfg: &MultitokRunConfig, _out: &Path) -> Result<Results> {
    let (source, acts, chunks) = match (&cfg.fixture, &cfg.dump) {
        (Some(f), _) => {
            let (acts, chunks) = superposition_activations(f)?;
            ("fixture".to_string(), acts, chunks)
        }
        (None, Some(dump)) => {
            let layer = *required(&cfg.layer, "/layer")?;
            let acts = read_layer(dump, layer, cfg.site.unwrap_or(Site::ResidualOut), &None)?;
            let prompts = read_prompts(required(&cfg.prompts_file, "/prompts_file")?)?;
            let chunks = span_chunks(&acts, &prompts)?;
            (format!("dump layer {layer}"), acts, chunks)
        }
        (None, None) => return Err(CliError::config("/fixture", "give exactly one of fixture or dump")),
    };
    let offsets = multitok_recovery(&acts, &chunks, &cfg.recovery)?;
    Ok(Results::Multitok(MultitokResult {
        seed: cfg.seed,
        source,
        n_rows: acts.len(),
        offsets,
    }))
}

// --------------------------------------------------------------- trace/ablate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceErrorsConfig {
    pub seed: u64,
    pub checkpoint: Option<PathBuf>,
    pub prompts: MathPrompts,
    /// Residual layers to probe; defaults to every block output.
    pub layers: Option<Vec<usize>>,
    pub kind: ProbeKind,
    pub holdout_val: usize,
    pub holdout_test: usize,
    pub probe: ProbeConfig,
}

impl Default for TraceErrorsConfig {
    fn default() -> Self {
        TraceErrorsConfig {
            seed: 0,
            checkpoint: None,
            prompts: MathPrompts::default(),
            layers: None,
            kind: ProbeKind::Sin,
            holdout_val: 100,
            holdout_test: 100,
            probe: ProbeConfig::default(),
        }
    }
}

impl TraceErrorsConfig {
    pub fn resolve(&mut self) -> Result<()> {
        require_exists(required(&self.checkpoint, "/checkpoint")?)?;
        self.probe.train.seed = self.seed;
        Ok(())
    }
}

/// Probes the answer position on value-disjoint splits, then traces the
/// model on the prompts whose answers no probe was trained on.
pub fn trace_errors(cfg: &TraceErrorsConfig, _out: &Path) -> Result<Results> {
    let (model, tok) = load_model(required(&cfg.checkpoint, "/checkpoint")?)?;
    let prompts = cfg.prompts.generate(cfg.seed)?;
    let n_layers = model.cfg.n_layers;
    let layers: BTreeSet<usize> = match &cfg.layers {
        Some(l) => l.iter().copied().collect(),
        None => (1..=n_layers).collect(),
    };
    if let Some(bad) = layers.iter().find(|&&l| l > n_layers) {
        return Err(CliError::config("/layers", format!("layer {bad} exceeds the model's {n_layers}")));
    }
    let sites = [Site::ResidualOut].into();
    let acts: BTreeMap<usize, ActivationSet> = capture_prompts(&model, &tok, &prompts, &sites, TOY_MODEL_ID, |p| {
        vec![(p.tokens.len() - 1, p.target.map_or(-1, |t| t as i64))]
    })?
    .into_iter()
    .filter(|s| layers.contains(&s.layer))
    .map(|s| (s.layer, s))
    .collect();
    let labels = &acts.values().next().expect("layers are non-empty").labels;
    let split = split_by_value(labels, cfg.holdout_val, cfg.holdout_test, cfg.seed)?;
    let fitted = fit_layer_probes(cfg.kind, &acts, &split, &cfg.probe)?;
    let probes = fitted.iter().map(|(&l, (p, _))| (l, p.clone())).collect();
    let held_out: Vec<PromptRecord> = split.test_idx.iter().map(|&i| prompts[i].clone()).collect();
    let trace = result_probe_eval(&model, &tok, &held_out, &probes)?;
    let n_correct = trace.samples.iter().filter(|s| s.model_correct()).count();
    Ok(Results::TraceErrors(TraceErrorsResult {
        seed: cfg.seed,
        site: Site::ResidualOut,
        n_prompts: prompts.len(),
        n_traced: trace.samples.len(),
        model_accuracy: n_correct as f64 / trace.samples.len().max(1) as f64,
        layers: trace.layers.clone(),
        probe_reports: fitted.into_values().map(|(_, r)| r).collect(),
        summary: summarize(&trace)?,
        error_aggregation: error_aggregation(&trace)?,
        extraction: extraction_stats(&trace)?,
    }))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    pub seed: u64,
    pub checkpoint: Option<PathBuf>,
    pub prompts: MathPrompts,
    /// Layers to skip one at a time (then all together); defaults to all.
    pub candidates: Option<Vec<usize>>,
}

impl AblateConfig {
    pub fn resolve(&mut self) -> Result<()> {
        require_exists(required(&self.checkpoint, "/checkpoint")?)?;
        Ok(())
    }
}

pub fn ablate(cfg: &AblateConfig, _out: &Path) -> Result<Results> {
    let (model, tok) = load_model(required(&cfg.checkpoint, "/checkpoint")?)?;
    let prompts = cfg.prompts.generate(cfg.seed)?;
    let candidates = cfg
        .candidates
        .clone()
        .unwrap_or_else(|| (1..=model.cfg.n_layers).collect());
    Ok(Results::Ablate(AblateResult {
        seed: cfg.seed,
        n_prompts: prompts.len(),
        scores: ablate_and_score(&model, &tok, &prompts, &candidates)?,
    }))
}
