//! On-disk interchange for labeled activation and embedding dumps.
//!
//! A dump directory holds one `manifest.json`, and per entry one NPAD tensor
//! file plus a CSV labels file. Producers other than this crate (e.g. a
//! Python extractor) only need to follow the layouts in [`npad`] and
//! [`Manifest`].

mod dump;
pub mod npad;
mod split;

pub use dump::{
    check_dump, read_dump, read_entries, read_manifest, write_dump, ActivationSet, DumpFilter, Manifest,
    ManifestEntry, RowMeta, Site, FORMAT_VERSION, LABELS_HEADER, MANIFEST_FILE,
};
pub use split::{split_by_value, ValueSplit};
