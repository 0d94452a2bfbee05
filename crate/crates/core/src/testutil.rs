//! Random fixtures for property tests.

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::linalg::{ComplexMatrix, Dim};
use crate::quantum::DensityOperator;
use crate::states::Rho0Params;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform populations, coherence anywhere inside the positivity disc.
pub fn random_rho0(rng: &mut impl Rng) -> Rho0Params {
    let r11: f64 = rng.random();
    let bound = (r11 * (1.0 - r11)).sqrt();
    let radius = bound * rng.random::<f64>().sqrt();
    let phase = rng.random::<f64>() * std::f64::consts::TAU;
    Rho0Params::new(r11, 1.0 - r11, Complex64::from_polar(radius, phase)).unwrap()
}

/// `G G† / Tr(G G†)` for a Gaussian-ish complex `G`.
pub fn random_density(rng: &mut impl Rng, dim: Dim) -> DensityOperator {
    let n = dim.size();
    let entries: Vec<Complex64> = (0..n * n)
        .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
        .collect();
    let g = ComplexMatrix::from_rows(&entries).unwrap();
    let m = &g * &g.adjoint();
    let tr = m.trace().re;
    DensityOperator::new(m.scale(1.0 / tr)).unwrap()
}
