//! Figures of merit and explicit measurements for the three optimum
//! strategies: minimum error, maximum confidence and unambiguous
//! discrimination.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{eig_hermitian, trace_norm, ComplexMatrix, Dim};
use crate::quantum::{overlap, DiscriminationProblem, KrausSet, OutcomeLabel, Povm, PureState};
use crate::states::{check_half_angle, PartialPolarizationParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "minerror")]
    MinError,
    #[serde(rename = "mc")]
    MaxConfidence,
    #[serde(rename = "usd")]
    UnambiguousUsd,
}

impl Strategy {
    /// Short name used in CSV rows and on the command line.
    pub fn name(self) -> &'static str {
        match self {
            Strategy::MinError => "minerror",
            Strategy::MaxConfidence => "mc",
            Strategy::UnambiguousUsd => "usd",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A measurement together with the closed-form quantities it should achieve.
#[derive(Debug, Clone)]
pub struct StrategyReport {
    pub strategy: Strategy,
    pub povm: Povm,
    pub predicted: BTreeMap<String, f64>,
}

impl StrategyReport {
    fn new(strategy: Strategy, povm: Povm, predicted: &[(&str, f64)]) -> Result<Self> {
        for (name, value) in predicted {
            if !(0.0..=1.0).contains(value) {
                return Err(Error::InvalidParameter(format!(
                    "predicted {name} = {value} outside [0, 1]"
                )));
            }
        }
        Ok(StrategyReport {
            strategy,
            povm,
            predicted: predicted.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        })
    }
}

/// Helstrom bound `½(1 − Tr|η₁ρ₁ − η₂ρ₂|)`.
pub fn helstrom_error(problem: &DiscriminationProblem) -> f64 {
    let norm = trace_norm(&problem.weighted_difference()).expect("Hermitian by construction");
    (0.5 * (1.0 - norm)).clamp(0.0, 0.5)
}

/// Projective minimum-error measurement. The non-negative eigenspace of
/// `η₁ρ₁ − η₂ρ₂` (zero eigenvalues included) votes for the first state.
pub fn minerror_povm(problem: &DiscriminationProblem) -> Result<Povm> {
    let gamma = problem.weighted_difference();
    let eig = eig_hermitian(&gamma)?;
    let dim = gamma.dim();
    let mut first = ComplexMatrix::zeros(dim);
    for (k, &lambda) in eig.values.iter().enumerate() {
        if lambda >= 0.0 {
            let v = eig.vector(k);
            first = &first + &ComplexMatrix::outer(&v, &v)?;
        }
    }
    let second = &ComplexMatrix::identity(dim) - &first;
    Povm::new(vec![
        (OutcomeLabel::State1, first),
        (OutcomeLabel::State2, second),
    ])
}

/// `cos 2x` with the round-off residue at `x = π/4` snapped to zero.
pub(crate) fn cos2(x: f64) -> f64 {
    let c = (2.0 * x).cos();
    if c.abs() < 1e-15 {
        0.0
    } else {
        c
    }
}

/// Optimum maximum confidence for `ρ±` with equal priors.
pub fn max_confidence(params: PartialPolarizationParams) -> f64 {
    let (p, beta) = (params.p(), params.beta());
    let pc = p * cos2(beta);
    let radicand = (1.0 - pc * pc).max(0.0);
    if radicand == 0.0 {
        // p = 1 at β = 0: identical pure states
        return 0.5;
    }
    (0.5 + p * (2.0 * beta).sin() / (2.0 * radicand.sqrt())).clamp(0.5, 1.0)
}

/// Confidence of the projective minimum-error measurement on `ρ±`.
pub fn minerror_confidence(params: PartialPolarizationParams) -> f64 {
    (0.5 * (1.0 + params.p() * (2.0 * params.beta()).sin())).clamp(0.5, 1.0)
}

/// Minimum inconclusive probability `p cos 2β` at maximum confidence.
pub fn mc_failure_prob(params: PartialPolarizationParams) -> f64 {
    params.p() * cos2(params.beta())
}

/// Rotation at the attenuating wave plate of the maximum-confidence network.
pub fn theta3_mc(params: PartialPolarizationParams) -> f64 {
    let q = mc_failure_prob(params);
    let x = (2.0 * q / (1.0 + q)).clamp(0.0, 1.0);
    x.sqrt().acos()
}

/// Maximum-confidence measurement on a single polarization qubit.
pub fn mc_povm(params: PartialPolarizationParams) -> Result<Povm> {
    let theta = theta3_mc(params);
    let (s, c) = theta.sin_cos();
    let inconclusive = ComplexMatrix::diagonal(&[c * c, 0.0])?;
    let first = ComplexMatrix::from_real_rows(&[0.5 * s * s, 0.5 * s, 0.5 * s, 0.5])?;
    let second = ComplexMatrix::from_real_rows(&[0.5 * s * s, -0.5 * s, -0.5 * s, 0.5])?;
    Povm::new(vec![
        (OutcomeLabel::Inconclusive, inconclusive),
        (OutcomeLabel::State1, first),
        (OutcomeLabel::State2, second),
    ])
}

/// Optimum failure probability `|⟨ψ₁|ψ₂⟩|` for two pure states.
pub fn pure_usd_failure(first: &PureState, second: &PureState) -> Result<f64> {
    Ok(overlap(first, second)?.norm())
}

/// Optimum failure probability `cos 2α` for the mixed pair.
pub fn usd_failure_prob(alpha: f64) -> Result<f64> {
    check_half_angle("alpha", alpha)?;
    Ok(cos2(alpha))
}

fn check_usd_angle(alpha: f64) -> Result<()> {
    check_half_angle("alpha", alpha)?;
    if alpha == 0.0 {
        return Err(Error::DegenerateFilter(
            "alpha = 0 makes every outcome inconclusive".into(),
        ));
    }
    Ok(())
}

/// Kraus branches of the unambiguous measurement: per path, attenuate H by
/// `tan α` and analyze the survivors in the diagonal basis.
pub fn usd_kraus(alpha: f64) -> Result<KrausSet> {
    check_usd_angle(alpha)?;
    let t = alpha.tan().min(1.0);
    let fail = (1.0 - t * t).max(0.0).sqrt();
    let embed = |block: usize, m: [f64; 4]| -> ComplexMatrix {
        let mut out = ComplexMatrix::zeros(Dim::Four);
        for i in 0..2 {
            for j in 0..2 {
                out.set(
                    2 * block + i,
                    2 * block + j,
                    Complex64::new(m[2 * i + j], 0.0),
                );
            }
        }
        out
    };
    // |±⟩⟨±| · diag(t, 1)
    let plus = [0.5 * t, 0.5, 0.5 * t, 0.5];
    let minus = [0.5 * t, -0.5, -0.5 * t, 0.5];
    let failure = [fail, 0.0, 0.0, 0.0];
    let mut ops = Vec::new();
    for (block, label) in [(0, OutcomeLabel::Apd0), (1, OutcomeLabel::Apd0Prime)] {
        ops.push((label, embed(block, failure)));
        ops.push((OutcomeLabel::Apd1, embed(block, plus)));
        ops.push((OutcomeLabel::Apd2, embed(block, minus)));
    }
    KrausSet::new(ops)
}

/// Optimum unambiguous measurement for the mixed pair.
pub fn usd_povm(alpha: f64) -> Result<Povm> {
    usd_kraus(alpha)?.to_povm()
}

/// `P(ρⱼ | j) = ηⱼTr(ρⱼΠⱼ) / Σᵢ ηᵢTr(ρᵢΠⱼ)`.
pub fn confidence_of(
    povm: &Povm,
    label: OutcomeLabel,
    problem: &DiscriminationProblem,
) -> Result<f64> {
    let element = povm.element(label)?;
    let claimed = label.claims().ok_or(Error::UndefinedConfidence(label))?;
    let joint = |h| problem.prior(h) * problem.state(h).expectation(element).re;
    let correct = joint(claimed);
    let total = correct + joint(claimed.other());
    if total <= 0.0 {
        return Err(Error::UndefinedConfidence(label));
    }
    Ok(correct / total)
}

pub fn mc_report(params: PartialPolarizationParams) -> Result<StrategyReport> {
    let c = max_confidence(params);
    StrategyReport::new(
        Strategy::MaxConfidence,
        mc_povm(params)?,
        &[
            ("Q", mc_failure_prob(params)),
            ("C", c),
            ("C1", c),
            ("C2", c),
            ("C_minerr", minerror_confidence(params)),
        ],
    )
}

pub fn usd_report(alpha: f64, problem: &DiscriminationProblem) -> Result<StrategyReport> {
    StrategyReport::new(
        Strategy::UnambiguousUsd,
        usd_povm(alpha)?,
        &[
            ("Q", usd_failure_prob(alpha)?),
            ("C1", 1.0),
            ("C2", 1.0),
            ("P_E", helstrom_error(problem)),
        ],
    )
}

pub fn minerror_report(problem: &DiscriminationProblem) -> Result<StrategyReport> {
    let povm = minerror_povm(problem)?;
    let c1 = confidence_of(&povm, OutcomeLabel::State1, problem).unwrap_or(0.0);
    let c2 = confidence_of(&povm, OutcomeLabel::State2, problem).unwrap_or(0.0);
    StrategyReport::new(
        Strategy::MinError,
        povm,
        &[
            ("P_E", helstrom_error(problem)),
            ("C1", c1),
            ("C2", c2),
            ("Q", 0.0),
        ],
    )
}
