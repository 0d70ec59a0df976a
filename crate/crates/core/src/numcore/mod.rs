//! Dense numeric kernels shared by every analysis: PCA, real FFT magnitudes,
//! rank correlation, cosine similarity and a small Adam trainer.

mod fft;
mod matrix;
mod pca;
mod rng;
mod stats;
pub mod train;

pub use fft::{rfft_magnitude, SpectralProfile};
pub use matrix::Matrix;
pub use pca::{pca_project, Pca};
pub use rng::SeedStream;
pub use stats::{cosine, pairwise_cosine, ranks, spearman_rho};
pub use train::{fit_classifier, Adam, Classifier, Dataset, EpochRecord, TrainConfig, TrainHistory};
