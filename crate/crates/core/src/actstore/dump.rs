use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::npad;
use crate::error::{Error, Result};
use crate::numcore::Matrix;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LABELS_HEADER: [&str; 5] = ["sample_id", "label_value", "token_offset", "context_type", "prompt_id"];
const LOCK_FILE: &str = ".lock";

/// Where in the network a vector was read from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Site {
    /// Token embedding (plus positional signal, if any). Layer 0.
    Embedding,
    /// Concatenated attention heads before the output projection.
    AttnPreproj,
    /// Attention block output added to the residual stream.
    AttnOut,
    /// MLP block output added to the residual stream.
    MlpOut,
    /// Residual stream after a block (layer 0: after embedding).
    ResidualOut,
    /// Final residual state before the last norm. Layer `L+1`.
    FinalPrenorm,
    /// Final residual state after the last norm. Layer `L+1`.
    FinalNorm,
    /// Unembedding rows. Layer `L+1`.
    OutputEmbedding,
}

impl Site {
    pub const ALL: [Site; 8] = [
        Site::Embedding,
        Site::AttnPreproj,
        Site::AttnOut,
        Site::MlpOut,
        Site::ResidualOut,
        Site::FinalPrenorm,
        Site::FinalNorm,
        Site::OutputEmbedding,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Site::Embedding => "embedding",
            Site::AttnPreproj => "attn_preproj",
            Site::AttnOut => "attn_out",
            Site::MlpOut => "mlp_out",
            Site::ResidualOut => "residual_out",
            Site::FinalPrenorm => "final_prenorm",
            Site::FinalNorm => "final_norm",
            Site::OutputEmbedding => "output_embedding",
        }
    }

    /// Whether `layer` is meaningful for this site in an `n_layers` model.
    pub fn valid_layer(&self, layer: usize, n_layers: usize) -> bool {
        match self {
            Site::Embedding => layer == 0,
            Site::AttnPreproj | Site::AttnOut | Site::MlpOut => (1..=n_layers).contains(&layer),
            Site::ResidualOut => layer <= n_layers + 1,
            Site::FinalPrenorm | Site::FinalNorm | Site::OutputEmbedding => layer == n_layers + 1,
        }
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Site {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Site::ALL
            .into_iter()
            .find(|site| site.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown site {s:?}")))
    }
}

/// Where each row came from. `layer` and `site` are filled from the manifest
/// entry the row was read from; they are not stored in the labels file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowMeta {
    pub sample_id: u64,
    pub token_offset: i64,
    pub context_type: String,
    pub prompt_id: String,
    #[serde(default)]
    pub layer: usize,
    #[serde(default = "default_site")]
    pub site: Site,
}

fn default_site() -> Site {
    Site::ResidualOut
}

/// Labeled hidden-state vectors for one model.
///
/// `labels[i]` is the number value of row `i`, or `-1` for rows that are not
/// number samples. After a multi-entry read, `layer` and `site` describe the
/// first matched entry; each row's own origin lives in `meta`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSet {
    pub model_id: String,
    pub n_layers: usize,
    pub layer: usize,
    pub site: Site,
    pub vectors: Matrix,
    pub labels: Vec<i64>,
    pub meta: Vec<RowMeta>,
}

impl ActivationSet {
    pub fn empty(model_id: &str, n_layers: usize, layer: usize, site: Site, d_model: usize) -> Self {
        ActivationSet {
            model_id: model_id.to_string(),
            n_layers,
            layer,
            site,
            vectors: Matrix::zeros(0, d_model),
            labels: Vec::new(),
            meta: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn d_model(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.vectors.nrows() != self.labels.len() || self.meta.len() != self.labels.len() {
            return Err(Error::Schema(format!(
                "{} vectors, {} labels, {} meta rows",
                self.vectors.nrows(),
                self.labels.len(),
                self.meta.len()
            )));
        }
        if !self.site.valid_layer(self.layer, self.n_layers) {
            return Err(Error::Schema(format!(
                "site {} is not valid at layer {} of a {}-layer model",
                self.site, self.layer, self.n_layers
            )));
        }
        if let Some(bad) = self.labels.iter().find(|&&l| l < -1) {
            return Err(Error::Schema(format!("label {bad} below -1")));
        }
        Ok(())
    }

    /// Rows selected by index, keeping metadata aligned.
    pub fn select(&self, idx: &[usize]) -> ActivationSet {
        ActivationSet {
            model_id: self.model_id.clone(),
            n_layers: self.n_layers,
            layer: self.layer,
            site: self.site,
            vectors: self.vectors.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            meta: idx.iter().map(|&i| self.meta[i].clone()).collect(),
        }
    }

    /// Rows whose label is a number value (`>= 0`).
    pub fn numeric_rows(&self) -> ActivationSet {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] >= 0).collect();
        self.select(&idx)
    }

    /// Concatenate sets from the same model.
    pub fn concat(parts: &[ActivationSet]) -> Result<ActivationSet> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Schema("nothing to concatenate".into()))?;
        if parts.iter().any(|p| p.model_id != first.model_id) {
            return Err(Error::Schema("cannot concatenate sets from different models".into()));
        }
        let mats: Vec<&Matrix> = parts.iter().map(|p| &p.vectors).collect();
        Ok(ActivationSet {
            model_id: first.model_id.clone(),
            n_layers: first.n_layers,
            layer: first.layer,
            site: first.site,
            vectors: Matrix::vstack(&mats).map_err(|_| Error::Schema("d_model mismatch".into()))?,
            labels: parts.iter().flat_map(|p| p.labels.iter().copied()).collect(),
            meta: parts.iter().flat_map(|p| p.meta.iter().cloned()).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub layer: usize,
    pub site: Site,
    pub n_rows: usize,
    pub labels_file: String,
    pub context_type: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub model_id: String,
    pub d_model: usize,
    pub n_layers: usize,
    pub dtype: String,
    pub entries: Vec<ManifestEntry>,
}

/// Which manifest entries to read. `None` matches everything.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DumpFilter {
    pub layer: Option<usize>,
    pub site: Option<Site>,
    pub context_type: Option<String>,
}

impl DumpFilter {
    pub fn layer_site(layer: usize, site: Site) -> Self {
        DumpFilter {
            layer: Some(layer),
            site: Some(site),
            context_type: None,
        }
    }

    pub fn matches(&self, e: &ManifestEntry) -> bool {
        self.layer.is_none_or(|l| l == e.layer)
            && self.site.is_none_or(|s| s == e.site)
            && self.context_type.as_deref().is_none_or(|c| c == e.context_type)
    }
}

struct DirLock(PathBuf);

impl DirLock {
    fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK_FILE);
        fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| Error::store(&path, e))?;
        Ok(DirLock(path))
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::store(&path, e))?;
    let m: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::Schema(format!("unsupported manifest version {}", m.format_version)));
    }
    if m.dtype != "f32" {
        return Err(Error::Schema(format!("unsupported dtype {:?}", m.dtype)));
    }
    Ok(m)
}

fn write_manifest(dir: &Path, m: &Manifest) -> Result<()> {
    let text = serde_json::to_string_pretty(m).expect("manifest serializes");
    npad::write_atomic(&dir.join(MANIFEST_FILE), text.as_bytes())
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

/// Append `set` to the dump in `dir`, creating the directory and manifest if
/// needed. Vectors are narrowed to f32 on disk.
pub fn write_dump(set: &ActivationSet, dir: &Path) -> Result<Manifest> {
    set.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::store(dir, e))?;
    let _lock = DirLock::acquire(dir)?;

    let mut manifest = if dir.join(MANIFEST_FILE).exists() {
        let m = read_manifest(dir)?;
        if m.d_model != set.d_model() {
            return Err(Error::Schema(format!(
                "dump has d_model {}, set has {}",
                m.d_model,
                set.d_model()
            )));
        }
        if m.model_id != set.model_id {
            return Err(Error::Schema(format!(
                "dump belongs to model {:?}, set to {:?}",
                m.model_id, set.model_id
            )));
        }
        m
    } else {
        Manifest {
            format_version: FORMAT_VERSION,
            model_id: set.model_id.clone(),
            d_model: set.d_model(),
            n_layers: set.n_layers,
            dtype: "f32".into(),
            entries: Vec::new(),
        }
    };
    manifest.n_layers = manifest.n_layers.max(set.n_layers);

    let context = set
        .meta
        .first()
        .map(|m| m.context_type.clone())
        .unwrap_or_default();
    let stem = format!(
        "{}_L{:03}_{}_{:04}",
        set.site,
        set.layer,
        if context.is_empty() { "none".to_string() } else { sanitize(&context) },
        manifest.entries.len()
    );
    let file = format!("{stem}.npad");
    let labels_file = format!("{stem}.labels.csv");

    let data: Vec<f32> = set.vectors.iter().map(|&v| v as f32).collect();
    npad::write(&dir.join(&file), set.len(), set.d_model(), &data)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(LABELS_HEADER).expect("in-memory write");
    for (label, meta) in set.labels.iter().zip(&set.meta) {
        w.write_record([
            meta.sample_id.to_string(),
            label.to_string(),
            meta.token_offset.to_string(),
            meta.context_type.clone(),
            meta.prompt_id.clone(),
        ])
        .expect("in-memory write");
    }
    let csv_bytes = w.into_inner().expect("in-memory flush");
    npad::write_atomic(&dir.join(&labels_file), &csv_bytes)?;

    manifest.entries.push(ManifestEntry {
        file,
        layer: set.layer,
        site: set.site,
        n_rows: set.len(),
        labels_file,
        context_type: context,
    });
    write_manifest(dir, &manifest)?;
    Ok(manifest)
}

fn read_labels(path: &Path, entry: &ManifestEntry) -> Result<(Vec<i64>, Vec<RowMeta>)> {
    let bytes = fs::read(path).map_err(|e| Error::store(path, e))?;
    let mut r = csv::Reader::from_reader(bytes.as_slice());
    let header = r
        .headers()
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?
        .clone();
    if header.iter().ne(LABELS_HEADER.iter().copied()) {
        return Err(Error::Schema(format!("{}: unexpected header {:?}", path.display(), header)));
    }
    let mut labels = Vec::with_capacity(entry.n_rows);
    let mut meta = Vec::with_capacity(entry.n_rows);
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
        let field = |k: usize| -> Result<&str> {
            rec.get(k)
                .ok_or_else(|| Error::Schema(format!("{} row {i}: missing column {k}", path.display())))
        };
        let parse_err = |what: &str| Error::Schema(format!("{} row {i}: bad {what}", path.display()));
        labels.push(field(1)?.parse::<i64>().map_err(|_| parse_err("label_value"))?);
        meta.push(RowMeta {
            sample_id: field(0)?.parse().map_err(|_| parse_err("sample_id"))?,
            token_offset: field(2)?.parse().map_err(|_| parse_err("token_offset"))?,
            context_type: field(3)?.to_string(),
            prompt_id: field(4)?.to_string(),
            layer: entry.layer,
            site: entry.site,
        });
    }
    Ok((labels, meta))
}

fn read_entry(dir: &Path, manifest: &Manifest, entry: &ManifestEntry) -> Result<ActivationSet> {
    let path = dir.join(&entry.file);
    let t = npad::read(&path)?;
    if t.rows != entry.n_rows || t.cols != manifest.d_model {
        return Err(Error::Schema(format!(
            "{}: header says {}x{}, manifest expects {}x{}",
            path.display(),
            t.rows,
            t.cols,
            entry.n_rows,
            manifest.d_model
        )));
    }
    let (labels, meta) = read_labels(&dir.join(&entry.labels_file), entry)?;
    if labels.len() != t.rows {
        return Err(Error::Schema(format!(
            "{}: {} label rows for {} vectors",
            entry.labels_file,
            labels.len(),
            t.rows
        )));
    }
    let vectors = Matrix::new(t.rows, t.cols, t.data.into_iter().map(f64::from).collect())?;
    Ok(ActivationSet {
        model_id: manifest.model_id.clone(),
        n_layers: manifest.n_layers,
        layer: entry.layer,
        site: entry.site,
        vectors,
        labels,
        meta,
    })
}

/// Every matching entry as its own set, in manifest order.
pub fn read_entries(dir: &Path, filter: &DumpFilter) -> Result<Vec<ActivationSet>> {
    let manifest = read_manifest(dir)?;
    manifest
        .entries
        .iter()
        .filter(|e| filter.matches(e))
        .map(|e| read_entry(dir, &manifest, e))
        .collect()
}

/// Rows of all matching entries, concatenated in manifest order.
///
/// A filter that matches nothing yields an empty set.
pub fn read_dump(dir: &Path, filter: &DumpFilter) -> Result<ActivationSet> {
    let manifest = read_manifest(dir)?;
    let parts = read_entries(dir, filter)?;
    if parts.is_empty() {
        return Ok(ActivationSet::empty(
            &manifest.model_id,
            manifest.n_layers,
            filter.layer.unwrap_or(0),
            filter.site.unwrap_or(Site::ResidualOut),
            manifest.d_model,
        ));
    }
    ActivationSet::concat(&parts)
}

/// Schema check of a dump directory. Returns warnings; hard failures are
/// errors.
pub fn check_dump(dir: &Path) -> Result<Vec<String>> {
    let manifest = read_manifest(dir)?;
    let mut warnings = Vec::new();
    for e in &manifest.entries {
        let path = dir.join(&e.file);
        let (rows, cols) = npad::read_header(&path)?;
        if rows != e.n_rows || cols != manifest.d_model {
            return Err(Error::Schema(format!(
                "{}: header {rows}x{cols}, manifest {}x{}",
                e.file, e.n_rows, manifest.d_model
            )));
        }
        let labels = dir.join(&e.labels_file);
        if !labels.exists() {
            return Err(Error::Schema(format!("missing labels file {}", e.labels_file)));
        }
        if !e.site.valid_layer(e.layer, manifest.n_layers) {
            warnings.push(format!(
                "{}: site {} unexpected at layer {} of {}",
                e.file, e.site, e.layer, manifest.n_layers
            ));
        }
    }
    Ok(warnings)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_set(layer: usize, site: Site, n: usize, d: usize) -> ActivationSet {
        let data: Vec<f64> = (0..n * d).map(|i| f64::from((i as f32 * 0.731).sin())).collect();
        ActivationSet {
            model_id: "toy".into(),
            n_layers: 4,
            layer,
            site,
            vectors: Matrix::new(n, d, data).unwrap(),
            labels: (0..n as i64).map(|i| if i % 5 == 4 { -1 } else { i * 7 % 1000 }).collect(),
            meta: (0..n)
                .map(|i| RowMeta {
                    sample_id: i as u64,
                    token_offset: 2,
                    context_type: "math".into(),
                    prompt_id: format!("p{i}"),
                    layer,
                    site,
                })
                .collect(),
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let s = sample_set(2, Site::ResidualOut, 7, 5);
        write_dump(&s, dir.path()).unwrap();
        let back = read_dump(dir.path(), &DumpFilter::default()).unwrap();
        assert_eq!(back, s);
        assert!(check_dump(dir.path()).unwrap().is_empty());
        assert!(!dir.path().join(LOCK_FILE).exists());
    }

    #[test]
    fn d_model_mismatch_is_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        write_dump(&sample_set(1, Site::ResidualOut, 3, 5), dir.path()).unwrap();
        let r = write_dump(&sample_set(2, Site::ResidualOut, 3, 6), dir.path());
        assert!(matches!(r, Err(Error::Schema(_))));
    }

    #[test]
    fn empty_set_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let s = ActivationSet::empty("toy", 4, 0, Site::Embedding, 8);
        let m = write_dump(&s, dir.path()).unwrap();
        assert_eq!(m.entries[0].n_rows, 0);
        let back = read_dump(dir.path(), &DumpFilter::default()).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.d_model(), 8);
    }

    #[test]
    fn filter_selects_single_entry() {
        let dir = tempfile::tempdir().unwrap();
        for layer in 1..=4 {
            write_dump(&sample_set(layer, Site::ResidualOut, 3 + layer, 4), dir.path()).unwrap();
            write_dump(&sample_set(layer, Site::MlpOut, 2, 4), dir.path()).unwrap();
        }
        let got = read_dump(dir.path(), &DumpFilter::layer_site(3, Site::ResidualOut)).unwrap();
        assert_eq!(got.len(), 6);
        assert!(got.meta.iter().all(|m| m.layer == 3 && m.site == Site::ResidualOut));
        assert_eq!(got, sample_set(3, Site::ResidualOut, 6, 4));

        let none = read_dump(dir.path(), &DumpFilter::layer_site(3, Site::AttnOut)).unwrap();
        assert!(none.is_empty());

        let all_mlp = read_dump(
            dir.path(),
            &DumpFilter { site: Some(Site::MlpOut), ..Default::default() },
        )
        .unwrap();
        assert_eq!(all_mlp.len(), 8);
        let layers: Vec<usize> = all_mlp.meta.iter().map(|m| m.layer).collect();
        assert_eq!(layers, vec![1, 1, 2, 2, 3, 3, 4, 4]);
    }

    #[test]
    fn corrupted_magic_names_file() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_dump(&sample_set(1, Site::ResidualOut, 3, 4), dir.path()).unwrap();
        let path = dir.path().join(&m.entries[0].file);
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'Z';
        fs::write(&path, bytes).unwrap();
        match read_dump(dir.path(), &DumpFilter::default()) {
            Err(Error::Corrupt { path: p, offset, .. }) => {
                assert_eq!(p, path);
                assert_eq!(offset, 0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_layer_site_rejected() {
        let s = sample_set(3, Site::Embedding, 2, 4);
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(write_dump(&s, dir.path()), Err(Error::Schema(_))));
    }

    #[test]
    fn held_lock_blocks_writer() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(LOCK_FILE), b"").unwrap();
        let r = write_dump(&sample_set(1, Site::ResidualOut, 2, 4), dir.path());
        assert!(matches!(r, Err(Error::Store { .. })));
    }

    #[test]
    fn site_names_roundtrip() {
        for s in Site::ALL {
            assert_eq!(s.as_str().parse::<Site>().unwrap(), s);
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{}\"", s.as_str()));
        }
    }
}
