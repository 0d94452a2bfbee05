//! State families: the partially polarized pair `ρ±` on one path, and the
//! rank-two mixed pair `ρ₁, ρ₂` spread over two paths.
//!
//! Two-path operators use the ordered basis `(H₁, V₁, H₂, V₂)`.

use std::f64::consts::FRAC_PI_4;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{ComplexMatrix, Dim, ZERO};
use crate::quantum::{DensityOperator, PureState, UnitaryOperator};
use crate::tol;

pub const H1: usize = 0;
pub const V1: usize = 1;
pub const H2: usize = 2;
pub const V2: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn factor(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

/// Degree of polarization `p` and half separation angle `β` (radians).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartialPolarizationParams {
    p: f64,
    beta: f64,
}

impl PartialPolarizationParams {
    pub fn new(p: f64, beta: f64) -> Result<Self> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "degree of polarization {p} outside (0, 1]"
            )));
        }
        check_half_angle("beta", beta)?;
        Ok(PartialPolarizationParams { p, beta })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

pub(crate) fn check_half_angle(name: &str, angle: f64) -> Result<()> {
    if !(0.0..=FRAC_PI_4 + 1e-15).contains(&angle) {
        return Err(Error::InvalidParameter(format!(
            "{name} = {angle} rad outside [0, π/4]"
        )));
    }
    Ok(())
}

/// Populations and coherence of the two-path source state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rho0Params {
    r11: f64,
    r22: f64,
    r12: Complex64,
}

impl Rho0Params {
    pub fn new(r11: f64, r22: f64, r12: Complex64) -> Result<Self> {
        if r11 < 0.0 || r22 < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "populations ({r11}, {r22}) must be non-negative"
            )));
        }
        if (r11 + r22 - 1.0).abs() > tol::CONSTRUCTION {
            return Err(Error::InvalidParameter(format!(
                "populations sum to {} instead of 1",
                r11 + r22
            )));
        }
        if r12.norm_sqr() > r11 * r22 + tol::CONSTRUCTION {
            return Err(Error::InvalidParameter(format!(
                "|r12|² = {} exceeds r11·r22 = {}",
                r12.norm_sqr(),
                r11 * r22
            )));
        }
        Ok(Rho0Params { r11, r22, r12 })
    }

    pub fn r11(&self) -> f64 {
        self.r11
    }

    pub fn r22(&self) -> f64 {
        self.r22
    }

    pub fn r12(&self) -> Complex64 {
        self.r12
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixedPairParams {
    alpha: f64,
    rho0: Rho0Params,
}

impl MixedPairParams {
    pub fn new(alpha: f64, rho0: Rho0Params) -> Result<Self> {
        check_half_angle("alpha", alpha)?;
        Ok(MixedPairParams { alpha, rho0 })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn rho0(&self) -> &Rho0Params {
        &self.rho0
    }
}

/// `cos β |H⟩ ± sin β |V⟩`
pub fn psi_pm(beta: f64, sign: Sign) -> PureState {
    PureState::from_real(&[beta.cos(), sign.factor() * beta.sin()]).expect("unit vector")
}

/// `p|ψ±⟩⟨ψ±| + (1 − p) I/2`
pub fn make_partially_polarized(params: PartialPolarizationParams, sign: Sign) -> DensityOperator {
    let p = params.p;
    let c = (2.0 * params.beta).cos();
    let s = sign.factor() * (2.0 * params.beta).sin();
    let m = ComplexMatrix::from_real_rows(&[
        0.5 * (1.0 + p * c),
        0.5 * p * s,
        0.5 * p * s,
        0.5 * (1.0 - p * c),
    ])
    .expect("2x2");
    DensityOperator::new(m).expect("valid by construction")
}

/// Source state after the first beam splitter: `r11|H₁⟩⟨H₁| + r22|V₂⟩⟨V₂| + (r12|H₁⟩⟨V₂| + h.c.)`.
pub fn make_rho0(params: Rho0Params) -> Result<DensityOperator> {
    let total = params.r11 + params.r22;
    let mut m = ComplexMatrix::zeros(Dim::Four);
    m.set(H1, H1, Complex64::new(params.r11 / total, 0.0));
    m.set(V2, V2, Complex64::new(params.r22 / total, 0.0));
    m.set(H1, V2, params.r12 / total);
    m.set(V2, H1, params.r12.conj() / total);
    DensityOperator::new(m)
}

/// Source populations produced by splitting a partially linearly polarized
/// photon `p|γ⟩⟨γ| + (1 − p)I/2` on a polarizing beam splitter (H to path 1,
/// V to path 2).
pub fn rho0_from_input_polarization(p: f64, gamma: f64) -> Result<Rho0Params> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "degree of polarization {p} outside (0, 1]"
        )));
    }
    let (s, c) = gamma.sin_cos();
    let mixed = 0.5 * (1.0 - p);
    Rho0Params::new(
        p * c * c + mixed,
        p * s * s + mixed,
        Complex64::new(p * c * s, 0.0),
    )
}

/// Proper rotation by `theta` on a polarization pair.
pub(crate) fn rotation(theta: f64) -> ComplexMatrix {
    let (s, c) = theta.sin_cos();
    ComplexMatrix::from_real_rows(&[c, -s, s, c]).expect("2x2")
}

/// `U^(±)`: block-diagonal rotations on `span{H₁, V₁}` and `span{H₂, V₂}`.
///
/// Path 1 sends `|H⟩₁ ↦ cos α|H⟩₁ ± sin α|V⟩₁`, path 2 sends
/// `|V⟩₂ ↦ cos α|H⟩₂ ± sin α|V⟩₂`; both blocks are completed with
/// determinant +1.
pub fn make_u_pm(alpha: f64, sign: Sign) -> Result<UnitaryOperator> {
    check_half_angle("alpha", alpha)?;
    let first = rotation(sign.factor() * alpha);
    let (s, c) = alpha.sin_cos();
    let s = sign.factor() * s;
    // columns: H₂ ↦ (±s, −c), V₂ ↦ (c, ±s)
    let second = ComplexMatrix::from_real_rows(&[s, c, -c, s]).expect("2x2");
    UnitaryOperator::new(ComplexMatrix::direct_sum(&first, &second)?)
}

/// `(ρ₁, ρ₂) = (U⁽⁺⁾ρ₀U⁽⁺⁾†, U⁽⁻⁾ρ₀U⁽⁻⁾†)`
pub fn make_mixed_pair(params: MixedPairParams) -> Result<(DensityOperator, DensityOperator)> {
    let rho0 = make_rho0(params.rho0)?;
    let plus = make_u_pm(params.alpha, Sign::Plus)?;
    let minus = make_u_pm(params.alpha, Sign::Minus)?;
    Ok((rho0.evolve(&plus)?, rho0.evolve(&minus)?))
}

/// `|r±⟩ = cos α|H⟩₁ ± sin α|V⟩₁` in the two-path basis.
pub fn r_pm(alpha: f64, sign: Sign) -> PureState {
    let mut a = vec![ZERO; 4];
    a[H1] = Complex64::new(alpha.cos(), 0.0);
    a[V1] = Complex64::new(sign.factor() * alpha.sin(), 0.0);
    PureState::new(a).expect("unit vector")
}

/// `|s±⟩ = cos α|H⟩₂ ± sin α|V⟩₂` in the two-path basis.
pub fn s_pm(alpha: f64, sign: Sign) -> PureState {
    let mut a = vec![ZERO; 4];
    a[H2] = Complex64::new(alpha.cos(), 0.0);
    a[V2] = Complex64::new(sign.factor() * alpha.sin(), 0.0);
    PureState::new(a).expect("unit vector")
}

/// Bloch coordinates with `|H⟩` at `z = +1`.
pub fn bloch_vector(rho: &DensityOperator) -> Result<(f64, f64, f64)> {
    if rho.dim() != Dim::Two {
        return Err(Error::UnsupportedDimension(rho.dim().size()));
    }
    let m = rho.matrix();
    let off = m.get(0, 1);
    Ok((2.0 * off.re, -2.0 * off.im, (m.get(0, 0) - m.get(1, 1)).re))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const DEG: f64 = std::f64::consts::PI / 180.0;

    fn measured_params() -> PartialPolarizationParams {
        PartialPolarizationParams::new(0.54, 22.5 * DEG).unwrap()
    }

    #[test]
    fn params_validation() {
        assert!(PartialPolarizationParams::new(0.0, 0.1).is_err());
        assert!(PartialPolarizationParams::new(1.2, 0.1).is_err());
        assert!(PartialPolarizationParams::new(0.5, -0.1).is_err());
        assert!(PartialPolarizationParams::new(0.5, 0.8).is_err());
        assert!(Rho0Params::new(0.6, 0.6, ZERO).is_err());
        assert!(Rho0Params::new(0.5, 0.5, Complex64::new(0.6, 0.0)).is_err());
        assert!(MixedPairParams::new(1.0, Rho0Params::new(1.0, 0.0, ZERO).unwrap()).is_err());
    }

    #[test]
    fn pure_aligned_state() {
        let rho = make_partially_polarized(
            PartialPolarizationParams::new(1.0, 0.0).unwrap(),
            Sign::Plus,
        );
        let hh = ComplexMatrix::diagonal(&[1.0, 0.0]).unwrap();
        assert!(rho.matrix().max_abs_diff(&hh) < 1e-15);
    }

    #[test]
    fn zero_separation_gives_identical_states() {
        let params = PartialPolarizationParams::new(0.3, 0.0).unwrap();
        let plus = make_partially_polarized(params, Sign::Plus);
        let minus = make_partially_polarized(params, Sign::Minus);
        assert!(plus.matrix().max_abs_diff(minus.matrix()) < 1e-15);
    }

    #[test]
    fn measured_polarization_matrix() {
        let rho = make_partially_polarized(measured_params(), Sign::Plus);
        let m = rho.matrix();
        assert_abs_diff_eq!(2.0 * m.get(0, 0).re, 1.381838, epsilon = 1e-6);
        assert_abs_diff_eq!(2.0 * m.get(0, 1).re, 0.381838, epsilon = 1e-6);
        assert_abs_diff_eq!(2.0 * m.get(1, 0).re, 0.381838, epsilon = 1e-6);
        assert_abs_diff_eq!(2.0 * m.get(1, 1).re, 0.618162, epsilon = 1e-6);
    }

    #[test]
    fn rho0_examples() {
        let r = make_rho0(Rho0Params::new(1.0, 0.0, ZERO).unwrap()).unwrap();
        assert!(
            r.matrix()
                .max_abs_diff(&ComplexMatrix::diagonal(&[1.0, 0.0, 0.0, 0.0]).unwrap())
                < 1e-15
        );

        let r = make_rho0(Rho0Params::new(0.5, 0.5, Complex64::new(0.5, 0.0)).unwrap()).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let psi = PureState::from_real(&[s, 0.0, 0.0, s]).unwrap();
        assert!(
            r.matrix()
                .max_abs_diff(DensityOperator::pure(&psi).matrix())
                < 1e-15
        );
        let ev = r.eigenvalues();
        assert_abs_diff_eq!(ev[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ev[1], 0.0, epsilon = 1e-12);

        // nonzero block [[0.7, 0.2], [0.2, 0.3]] has eigenvalues 0.5 ± √0.08
        let r = make_rho0(Rho0Params::new(0.7, 0.3, Complex64::new(0.2, 0.0)).unwrap()).unwrap();
        let ev = r.eigenvalues();
        assert_abs_diff_eq!(ev[0], 0.7828427, epsilon = 1e-6);
        assert_abs_diff_eq!(ev[1], 0.2171573, epsilon = 1e-6);
        assert_abs_diff_eq!(ev[2], 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(ev[3], 0.0, epsilon = 1e-10);
    }

    #[test]
    fn input_polarization_split() {
        let r = rho0_from_input_polarization(1.0, 0.0).unwrap();
        assert_eq!((r.r11(), r.r22(), r.r12().re), (1.0, 0.0, 0.0));
        let r = rho0_from_input_polarization(0.54, 45.0 * DEG).unwrap();
        assert_abs_diff_eq!(r.r11(), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(r.r22(), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(r.r12().re, 0.27, epsilon = 1e-12);
        for i in 1..=10 {
            for j in 0..36 {
                let r =
                    rho0_from_input_polarization(i as f64 / 10.0, j as f64 * 5.0 * DEG).unwrap();
                assert!(r.r12().norm_sqr() <= r.r11() * r.r22() + 1e-15);
            }
        }
    }

    #[test]
    fn u_pm_at_zero_rotates_v2_onto_h2() {
        let u = make_u_pm(0.0, Sign::Plus).unwrap();
        let h1 = u.apply(&PureState::basis(Dim::Four, H1));
        let v2 = u.apply(&PureState::basis(Dim::Four, V2));
        assert_abs_diff_eq!(h1.amplitudes()[H1].re, 1.0);
        assert_abs_diff_eq!(v2.amplitudes()[H2].re, 1.0);
    }

    #[test]
    fn u_pm_images() {
        let alpha = 30.0 * DEG;
        let u = make_u_pm(alpha, Sign::Plus).unwrap();
        let out = u.apply(&PureState::basis(Dim::Four, H1));
        assert_abs_diff_eq!(out.amplitudes()[H1].re, 3f64.sqrt() / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(out.amplitudes()[V1].re, 0.5, epsilon = 1e-15);
        for sign in [Sign::Plus, Sign::Minus] {
            let u = make_u_pm(alpha, sign).unwrap();
            let got = u.apply(&PureState::basis(Dim::Four, V2));
            let want = s_pm(alpha, sign);
            for (a, b) in got.amplitudes().iter().zip(want.amplitudes()) {
                assert_abs_diff_eq!((a - b).norm(), 0.0, epsilon = 1e-15);
            }
            let got = u.apply(&PureState::basis(Dim::Four, H1));
            let want = r_pm(alpha, sign);
            for (a, b) in got.amplitudes().iter().zip(want.amplitudes()) {
                assert_abs_diff_eq!((a - b).norm(), 0.0, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn mixed_pair_examples() {
        let rho0 = Rho0Params::new(0.6, 0.4, Complex64::new(0.1, 0.3)).unwrap();
        let (a, b) = make_mixed_pair(MixedPairParams::new(0.0, rho0).unwrap()).unwrap();
        assert!(a.matrix().max_abs_diff(b.matrix()) < 1e-15);

        let h1 = Rho0Params::new(1.0, 0.0, ZERO).unwrap();
        let (a, b) = make_mixed_pair(MixedPairParams::new(FRAC_PI_4, h1).unwrap()).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let d_plus = PureState::from_real(&[s, s, 0.0, 0.0]).unwrap();
        assert!(
            a.matrix()
                .max_abs_diff(DensityOperator::pure(&d_plus).matrix())
                < 1e-15
        );
        assert!(a.overlap_with(&b).abs() < 1e-15);
    }

    #[test]
    fn bloch_examples() {
        let (x, y, z) = bloch_vector(&DensityOperator::maximally_mixed(Dim::Two)).unwrap();
        assert_eq!((x, y, z), (0.0, 0.0, 0.0));
        let h = DensityOperator::pure(&PureState::basis(Dim::Two, 0));
        assert_eq!(bloch_vector(&h).unwrap(), (0.0, 0.0, 1.0));
        let (x, y, z) =
            bloch_vector(&make_partially_polarized(measured_params(), Sign::Plus)).unwrap();
        assert_abs_diff_eq!(x, 0.381838, epsilon = 1e-6);
        assert_abs_diff_eq!(y, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(z, 0.381838, epsilon = 1e-6);
        assert_abs_diff_eq!((x * x + y * y + z * z).sqrt(), 0.54, epsilon = 1e-12);
        assert!(bloch_vector(&DensityOperator::maximally_mixed(Dim::Four)).is_err());
    }

    #[test]
    fn bloch_length_is_degree_of_polarization() {
        for i in 1..=20 {
            for j in 0..20 {
                let p = i as f64 / 20.0;
                let beta = FRAC_PI_4 * j as f64 / 19.0;
                for sign in [Sign::Plus, Sign::Minus] {
                    let rho = make_partially_polarized(
                        PartialPolarizationParams::new(p, beta).unwrap(),
                        sign,
                    );
                    let (x, y, z) = bloch_vector(&rho).unwrap();
                    assert!(((x * x + y * y + z * z).sqrt() - p).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn rho0_has_two_zero_eigenvalues() {
        for &(r11, re, im) in &[
            (0.7, 0.2, 0.0),
            (0.5, 0.1, -0.2),
            (1.0, 0.0, 0.0),
            (0.3, 0.0, 0.0),
        ] {
            let r = make_rho0(Rho0Params::new(r11, 1.0 - r11, Complex64::new(re, im)).unwrap())
                .unwrap();
            let zeros = r.eigenvalues().iter().filter(|v| v.abs() < 1e-10).count();
            let expected = if r11 * (1.0 - r11) == 0.0 { 3 } else { 2 };
            assert_eq!(zeros, expected);
        }
    }

    fn random_rho0(r11: f64, radius: f64, phase: f64) -> Rho0Params {
        let bound = (r11 * (1.0 - r11)).sqrt();
        Rho0Params::new(r11, 1.0 - r11, Complex64::from_polar(radius * bound, phase)).unwrap()
    }

    proptest! {
        #[test]
        fn unitarity(alpha in 0.0f64..FRAC_PI_4) {
            for sign in [Sign::Plus, Sign::Minus] {
                let u = make_u_pm(alpha, sign).unwrap();
                let g = &u.matrix().adjoint() * u.matrix();
                prop_assert!(g.max_abs_diff(&ComplexMatrix::identity(Dim::Four)) < 1e-12);
            }
        }

        #[test]
        fn pair_preserves_spectrum(alpha in 0.0f64..FRAC_PI_4, r11 in 0.0f64..1.0, radius in 0.0f64..1.0, phase in 0.0f64..6.3) {
            let rho0 = random_rho0(r11, radius, phase);
            let base = make_rho0(rho0).unwrap().eigenvalues();
            let (a, b) = make_mixed_pair(MixedPairParams::new(alpha, rho0).unwrap()).unwrap();
            for (x, (y, z)) in base.iter().zip(a.eigenvalues().iter().zip(b.eigenvalues())) {
                prop_assert!((x - y).abs() < 1e-10);
                prop_assert!((x - z).abs() < 1e-10);
            }
        }

        #[test]
        fn pair_independent_of_unitary_completion(alpha in 0.0f64..FRAC_PI_4, r11 in 0.0f64..1.0, radius in 0.0f64..1.0, phase in 0.0f64..6.3, extra in 0.0f64..6.3) {
            // alternative completion: reflections with an arbitrary phase on
            // the unused columns
            let rho0 = random_rho0(r11, radius, phase);
            let source = make_rho0(rho0).unwrap();
            let e = Complex64::from_polar(1.0, extra);
            for sign in [Sign::Plus, Sign::Minus] {
                let canonical = source.evolve(&make_u_pm(alpha, sign).unwrap()).unwrap();
                let (s, c) = alpha.sin_cos();
                let s = sign.factor() * s;
                let re = |x: f64| Complex64::new(x, 0.0);
                let first = ComplexMatrix::from_rows(&[re(c), e * s, re(s), -e * c]).unwrap();
                let second = ComplexMatrix::from_rows(&[e * (-s), re(c), e * c, re(s)]).unwrap();
                let u = UnitaryOperator::new(ComplexMatrix::direct_sum(&first, &second).unwrap()).unwrap();
                let other = source.evolve(&u).unwrap();
                prop_assert!(canonical.matrix().max_abs_diff(other.matrix()) < 1e-12);
            }
        }

        #[test]
        fn orthogonal_at_maximal_separation(c in -1.0f64..1.0, d in -1.0f64..1.0, phase in 0.0f64..6.3) {
            let norm = (c * c + d * d).sqrt().max(1e-9);
            let (a, b) = (c / norm, d / norm);
            let rho0 = Rho0Params::new(a * a, b * b, Complex64::from_polar(a.abs() * b.abs(), phase)).unwrap();
            let (r1, r2) = make_mixed_pair(MixedPairParams::new(FRAC_PI_4, rho0).unwrap()).unwrap();
            prop_assert!(r1.overlap_with(&r2).abs() < 1e-10);
        }
    }
}
