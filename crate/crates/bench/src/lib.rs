//! Shared fixtures for the benchmarks.

use spde_ftle::{ModelSpec, SpectralField};

/// Mode counts the benchmarks sweep over.
pub const SIZES: [usize; 3] = [16, 32, 64];

/// A smooth state with decaying coefficients.
pub fn smooth_state(model: &ModelSpec, amplitude: f64) -> SpectralField {
    let coeffs = (0..model.n()).map(|k| amplitude * (0.7 * k as f64).cos() / (k + 1) as f64).collect();
    SpectralField::new(model.basis(), coeffs)
}
