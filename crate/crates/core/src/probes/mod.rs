//! Number probes: the sinusoidal probe, linear and MLP baselines, tuned
//! lens translators.

mod basis;
mod fit;
mod lens;
mod probe;
mod store;

pub use basis::{build_sin_basis, omega, sin_encoding, BasisParams, SinBasis};
pub use fit::{fit_probe, init_probe, probe_accuracy, ProbeConfig, ProbeReport};
pub use lens::{
    fit_tuned_lens, kl_rows, lens_agreement, lens_corpus, lens_kl, LensConfig, LensCorpus, LensTranslator,
};
pub use probe::{
    probe_logits, weight_sparsity, LinearProbe, MlpProbe, Probe, ProbeKind, SinProbe, DEFAULT_SPARSITY_TAU,
};
pub use store::{load_probe, save_probe, ParamFile, ProbeSidecar, PROBE_FORMAT_VERSION};
