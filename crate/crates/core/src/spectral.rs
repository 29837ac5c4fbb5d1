//! Conversion between one-period time signals and selected-harmonic spectra.
//!
//! The coefficient of harmonic `m` over `n` samples is
//! `(2/n)·Σ sig[t]·exp(−i·2π·m·t/n)`, so a unit cosine at `m·fd` maps to `1 + 0i`.

use std::f64::consts::TAU;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::types::{HarmonicSet, Spectrum, TimeSignal};

fn check_band(harmonic: u32, samples: usize) -> Result<()> {
    if 2 * harmonic as usize >= samples {
        return Err(Error::OutOfBand { harmonic, samples });
    }
    Ok(())
}

/// Fourier coefficient of harmonic `m` over a full-period sample buffer.
pub fn harmonic_coefficient(samples: &[f64], m: u32) -> Complex64 {
    let n = samples.len();
    let mut acc = Complex64::new(0.0, 0.0);
    for (t, &v) in samples.iter().enumerate() {
        // Exact integer phase keeps the twiddle accurate for long buffers.
        let phase = TAU * ((m as usize * t) % n) as f64 / n as f64;
        acc += Complex64::new(v * phase.cos(), -v * phase.sin());
    }
    acc * (2.0 / n as f64)
}

/// Discrete Fourier coefficients of `sig` at the harmonics in `hs`.
pub fn extract_harmonics(sig: &TimeSignal, hs: &HarmonicSet) -> Result<Spectrum> {
    let n = sig.len();
    if let Some(max) = hs.max() {
        check_band(max, n)?;
    }
    let values = hs.indices().iter().map(|&m| harmonic_coefficient(&sig.samples, m)).collect();
    Spectrum::new(sig.fd, hs.clone(), values)
}

/// Real one-period signal carrying exactly the harmonics of `spec`.
pub fn synthesize_time(spec: &Spectrum, fs: f64) -> Result<TimeSignal> {
    let n = (fs / spec.fd).round() as usize;
    if let Some(max) = spec.harmonics.max() {
        check_band(max, n)?;
    }
    let mut samples = vec![0.0; n];
    for (&m, c) in spec.harmonics.indices().iter().zip(&spec.values) {
        for (t, s) in samples.iter_mut().enumerate() {
            let phase = TAU * ((m as usize * t) % n) as f64 / n as f64;
            *s += c.re * phase.cos() - c.im * phase.sin();
        }
    }
    TimeSignal::new(samples, fs, spec.fd)
}
