use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-bin DFT magnitudes of a real series, bins `0..=N/2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralProfile {
    /// Length of the series the profile was computed from.
    pub series_len: usize,
    pub magnitude: Vec<f64>,
}

impl SpectralProfile {
    pub fn n_freqs(&self) -> usize {
        self.magnitude.len()
    }

    /// Energy of the original series recovered from the one-sided spectrum.
    ///
    /// Only exact when the profile came straight from [`rfft_magnitude`].
    pub fn energy(&self) -> f64 {
        let n = self.series_len;
        let mut total = 0.0;
        for (b, m) in self.magnitude.iter().enumerate() {
            let mirrored = b != 0 && !(n % 2 == 0 && b == n / 2);
            let w = if mirrored { 2.0 } else { 1.0 };
            total += w * m * m;
        }
        total / n as f64
    }
}

/// `|Σ_n x[n] e^{-2πi bn/N}|` for `b = 0..=N/2`.
pub fn rfft_magnitude(series: &[f64]) -> Result<SpectralProfile> {
    let n = series.len();
    if n < 2 {
        return Err(Error::Dimension(format!("series length {n} < 2")));
    }
    let mut buf: Vec<Complex<f64>> = series.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let magnitude = buf[..n / 2 + 1].iter().map(|c| c.norm()).collect();
    Ok(SpectralProfile {
        series_len: n,
        magnitude,
    })
}
