use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::basis::{BasisParams, SinBasis};
use super::fit::{ProbeConfig, ProbeReport};
use super::probe::{LinearProbe, MlpProbe, Probe, ProbeKind, SinProbe};
use crate::actstore::npad;
use crate::error::{Error, Result};
use crate::numcore::train::Classifier;

pub const PROBE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamFile {
    pub name: String,
    pub file: String,
    pub rows: usize,
    pub cols: usize,
}

/// JSON sidecar written next to a probe's NPAD tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSidecar {
    pub format_version: u32,
    pub kind: ProbeKind,
    pub basis: Option<BasisParams>,
    pub params: Vec<ParamFile>,
    pub config: Option<ProbeConfig>,
    pub report: Option<ProbeReport>,
}

/// Writes `{name}.json` plus `{name}.{param}.npad` per parameter into `dir`.
pub fn save_probe(
    probe: &Probe,
    dir: &Path,
    name: &str,
    config: Option<&ProbeConfig>,
    report: Option<&ProbeReport>,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::store(dir, e))?;
    let mut params = Vec::new();
    for (pname, p) in probe.param_names().iter().zip(probe.params()) {
        let file = format!("{name}.{pname}.npad");
        let data: Vec<f32> = p.iter().map(|&v| v as f32).collect();
        npad::write(&dir.join(&file), p.nrows(), p.ncols(), &data)?;
        params.push(ParamFile {
            name: pname.to_string(),
            file,
            rows: p.nrows(),
            cols: p.ncols(),
        });
    }
    let sidecar = ProbeSidecar {
        format_version: PROBE_FORMAT_VERSION,
        kind: probe.kind(),
        basis: match probe {
            Probe::Sin(p) => Some(p.basis.params()),
            _ => None,
        },
        params,
        config: config.cloned(),
        report: report.cloned(),
    };
    let json = serde_json::to_vec_pretty(&sidecar).map_err(|e| Error::Schema(e.to_string()))?;
    npad::write_atomic(&dir.join(format!("{name}.json")), &json)
}

pub fn load_probe(dir: &Path, name: &str) -> Result<(Probe, ProbeSidecar)> {
    let path = dir.join(format!("{name}.json"));
    let bytes = fs::read(&path).map_err(|e| Error::store(&path, e))?;
    let sidecar: ProbeSidecar =
        serde_json::from_slice(&bytes).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    if sidecar.format_version != PROBE_FORMAT_VERSION {
        return Err(Error::Schema(format!("unsupported probe format {}", sidecar.format_version)));
    }
    let mut mats = Vec::new();
    for pf in &sidecar.params {
        let t = npad::read(&dir.join(&pf.file))?;
        if (t.rows, t.cols) != (pf.rows, pf.cols) {
            return Err(Error::Schema(format!(
                "{}: header {}x{} disagrees with sidecar {}x{}",
                pf.file, t.rows, t.cols, pf.rows, pf.cols
            )));
        }
        let data: Vec<f64> = t.data.iter().map(|&v| v as f64).collect();
        mats.push((pf.name.as_str(), Array2::from_shape_vec((t.rows, t.cols), data).expect("shape from header")));
    }
    let names: Vec<&str> = mats.iter().map(|m| m.0).collect();
    let mut take = || mats.remove(0).1;
    let probe = match sidecar.kind {
        ProbeKind::Sin => {
            expect_names(&names, &["w_in", "w_out"])?;
            let bp = sidecar
                .basis
                .ok_or_else(|| Error::Schema("sin probe without basis parameters".into()))?;
            let basis = SinBasis::try_from(bp)?;
            let (w_in, w_out) = (take(), take());
            if w_in.nrows() != w_out.nrows() || w_out.ncols() != basis.n_features() {
                return Err(Error::Schema("sin probe matrices disagree with the basis".into()));
            }
            Probe::Sin(SinProbe { w_in, w_out, basis })
        }
        ProbeKind::Linear => {
            expect_names(&names, &["w", "b"])?;
            let (w, b) = (take(), take());
            if b.dim() != (1, w.ncols()) {
                return Err(Error::Schema("linear probe bias shape".into()));
            }
            Probe::Linear(LinearProbe { w, b })
        }
        ProbeKind::Mlp => {
            expect_names(&names, &["w1", "b1", "w2", "b2"])?;
            let (w1, b1, w2, b2) = (take(), take(), take(), take());
            if b1.dim() != (1, w1.ncols()) || w2.nrows() != w1.ncols() || b2.dim() != (1, w2.ncols()) {
                return Err(Error::Schema("mlp probe shapes".into()));
            }
            Probe::Mlp(MlpProbe { w1, b1, w2, b2 })
        }
    };
    Ok((probe, sidecar))
}

fn expect_names(got: &[&str], want: &[&str]) -> Result<()> {
    if got != want {
        return Err(Error::Schema(format!("probe parameters {got:?}, expected {want:?}")));
    }
    Ok(())
}
