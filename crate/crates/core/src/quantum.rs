//! Validated states, unitaries and measurements.

use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{eig_hermitian, ComplexMatrix, Dim, ZERO};
use crate::tol;

/// Which of the two hypotheses a state or outcome refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Hypothesis {
    First,
    Second,
}

impl Hypothesis {
    pub fn other(self) -> Self {
        match self {
            Hypothesis::First => Hypothesis::Second,
            Hypothesis::Second => Hypothesis::First,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Hypothesis::First => 0,
            Hypothesis::Second => 1,
        }
    }
}

/// Label of a measurement outcome: either an abstract POVM outcome or a
/// physical detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OutcomeLabel {
    Inconclusive,
    State1,
    State2,
    #[serde(rename = "APD0")]
    Apd0,
    #[serde(rename = "APD0'")]
    Apd0Prime,
    #[serde(rename = "APD1")]
    Apd1,
    #[serde(rename = "APD2")]
    Apd2,
}

impl OutcomeLabel {
    /// The hypothesis an outcome votes for, `None` for inconclusive outcomes.
    pub fn claims(self) -> Option<Hypothesis> {
        match self {
            OutcomeLabel::State1 | OutcomeLabel::Apd1 => Some(Hypothesis::First),
            OutcomeLabel::State2 | OutcomeLabel::Apd2 => Some(Hypothesis::Second),
            _ => None,
        }
    }

    /// Maps abstract outcomes onto the detectors that realize them.
    pub fn to_detector(self) -> Self {
        match self {
            OutcomeLabel::Inconclusive => OutcomeLabel::Apd0,
            OutcomeLabel::State1 => OutcomeLabel::Apd1,
            OutcomeLabel::State2 => OutcomeLabel::Apd2,
            other => other,
        }
    }

    pub fn is_inconclusive(self) -> bool {
        self.claims().is_none()
    }
}

impl fmt::Display for OutcomeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            OutcomeLabel::Inconclusive => "Inconclusive",
            OutcomeLabel::State1 => "State1",
            OutcomeLabel::State2 => "State2",
            OutcomeLabel::Apd0 => "APD0",
            OutcomeLabel::Apd0Prime => "APD0'",
            OutcomeLabel::Apd1 => "APD1",
            OutcomeLabel::Apd2 => "APD2",
        };
        f.write_str(s)
    }
}

/// Trace-one positive Hermitian operator.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityOperator {
    matrix: ComplexMatrix,
}

impl DensityOperator {
    pub fn new(matrix: ComplexMatrix) -> Result<Self> {
        let asym = matrix.max_asymmetry();
        if asym > tol::CONSTRUCTION {
            return Err(Error::NotHermitian {
                max_asymmetry: asym,
            });
        }
        let trace = matrix.trace();
        if (trace - Complex64::new(1.0, 0.0)).norm() > tol::CONSTRUCTION {
            return Err(Error::InvalidState(format!("trace {} != 1", trace.re)));
        }
        let min_eig = *eig_hermitian(&matrix)?.values.last().expect("nonempty");
        if min_eig < -tol::PSD_SLACK {
            return Err(Error::InvalidState(format!(
                "negative eigenvalue {min_eig:.3e}"
            )));
        }
        Ok(DensityOperator {
            matrix: matrix.hermitian_part(),
        })
    }

    pub fn pure(state: &PureState) -> Self {
        let a = state.amplitudes();
        DensityOperator {
            matrix: ComplexMatrix::outer(a, a).expect("validated dimension"),
        }
    }

    pub fn maximally_mixed(dim: Dim) -> Self {
        DensityOperator {
            matrix: ComplexMatrix::identity(dim).scale(1.0 / dim.size() as f64),
        }
    }

    /// `w·a + (1 − w)·b`
    pub fn mix(a: &DensityOperator, b: &DensityOperator, weight_a: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&weight_a) {
            return Err(Error::InvalidParameter(format!(
                "mixing weight {weight_a} outside [0, 1]"
            )));
        }
        if a.dim() != b.dim() {
            return Err(Error::DimensionMismatch {
                left: a.dim().size(),
                right: b.dim().size(),
            });
        }
        Ok(DensityOperator {
            matrix: &a.matrix.scale(weight_a) + &b.matrix.scale(1.0 - weight_a),
        })
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn dim(&self) -> Dim {
        self.matrix.dim()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        eig_hermitian(&self.matrix).expect("validated").values
    }

    /// `U ρ U†`
    pub fn evolve(&self, u: &UnitaryOperator) -> Result<Self> {
        if u.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                left: u.dim().size(),
                right: self.dim().size(),
            });
        }
        DensityOperator::new(self.matrix.conjugate_by(u.matrix()))
    }

    /// `Tr(ρ A)`
    pub fn expectation(&self, op: &ComplexMatrix) -> Complex64 {
        (&self.matrix * op).trace()
    }

    /// `Tr(ρ σ)`
    pub fn overlap_with(&self, other: &DensityOperator) -> f64 {
        self.expectation(&other.matrix).re
    }
}

/// Unit-norm state vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    amplitudes: Vec<Complex64>,
}

impl PureState {
    pub fn new(amplitudes: Vec<Complex64>) -> Result<Self> {
        Dim::new(amplitudes.len())?;
        let norm: f64 = amplitudes.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > tol::CONSTRUCTION {
            return Err(Error::InvalidState(format!("norm {norm} != 1")));
        }
        Ok(PureState { amplitudes })
    }

    pub fn from_real(amplitudes: &[f64]) -> Result<Self> {
        Self::new(amplitudes.iter().map(|&x| Complex64::new(x, 0.0)).collect())
    }

    pub fn basis(dim: Dim, index: usize) -> Self {
        let mut amplitudes = vec![ZERO; dim.size()];
        amplitudes[index] = Complex64::new(1.0, 0.0);
        PureState { amplitudes }
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }
}

/// `⟨ψ₁|ψ₂⟩`
pub fn overlap(first: &PureState, second: &PureState) -> Result<Complex64> {
    if first.dim() != second.dim() {
        return Err(Error::DimensionMismatch {
            left: first.dim(),
            right: second.dim(),
        });
    }
    Ok(first
        .amplitudes
        .iter()
        .zip(&second.amplitudes)
        .map(|(a, b)| a.conj() * b)
        .sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitaryOperator {
    matrix: ComplexMatrix,
}

impl UnitaryOperator {
    pub fn new(matrix: ComplexMatrix) -> Result<Self> {
        let gram = &matrix.adjoint() * &matrix;
        let err = gram.max_abs_diff(&ComplexMatrix::identity(matrix.dim()));
        if err > tol::CONSTRUCTION {
            return Err(Error::NotUnitary(err));
        }
        Ok(UnitaryOperator { matrix })
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn dim(&self) -> Dim {
        self.matrix.dim()
    }

    pub fn apply(&self, state: &PureState) -> PureState {
        PureState {
            amplitudes: self.matrix.apply(state.amplitudes()),
        }
    }
}

/// Labeled positive operators summing to the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Povm {
    outcomes: Vec<(OutcomeLabel, ComplexMatrix)>,
}

impl Povm {
    pub fn new(outcomes: Vec<(OutcomeLabel, ComplexMatrix)>) -> Result<Self> {
        let first = outcomes
            .first()
            .ok_or_else(|| Error::InvalidPovm("no outcomes".into()))?;
        let dim = first.1.dim();
        let mut sum = ComplexMatrix::zeros(dim);
        let mut seen = Vec::new();
        for (label, element) in &outcomes {
            if seen.contains(label) {
                return Err(Error::InvalidPovm(format!("duplicate outcome {label}")));
            }
            seen.push(*label);
            if element.dim() != dim {
                return Err(Error::DimensionMismatch {
                    left: dim.size(),
                    right: element.size(),
                });
            }
            let asym = element.max_asymmetry();
            if asym > tol::PSD_SLACK {
                return Err(Error::InvalidPovm(format!(
                    "element {label} not Hermitian ({asym:.3e})"
                )));
            }
            let min_eig = *eig_hermitian(&element.hermitian_part())?
                .values
                .last()
                .expect("nonempty");
            if min_eig < -tol::PSD_SLACK {
                return Err(Error::InvalidPovm(format!(
                    "element {label} has negative eigenvalue {min_eig:.3e}"
                )));
            }
            sum = &sum + element;
        }
        let err = sum.max_abs_diff(&ComplexMatrix::identity(dim));
        if err > tol::PSD_SLACK {
            return Err(Error::InvalidPovm(format!(
                "elements sum to identity only within {err:.3e}"
            )));
        }
        Ok(Povm {
            outcomes: outcomes
                .into_iter()
                .map(|(l, e)| (l, e.hermitian_part()))
                .collect(),
        })
    }

    pub fn dim(&self) -> Dim {
        self.outcomes[0].1.dim()
    }

    pub fn outcomes(&self) -> &[(OutcomeLabel, ComplexMatrix)] {
        &self.outcomes
    }

    pub fn labels(&self) -> impl Iterator<Item = OutcomeLabel> + '_ {
        self.outcomes.iter().map(|(l, _)| *l)
    }

    pub fn element(&self, label: OutcomeLabel) -> Result<&ComplexMatrix> {
        self.outcomes
            .iter()
            .find(|(l, _)| *l == label)
            .map(|(_, e)| e)
            .ok_or(Error::MissingOutcome(label))
    }

    /// Renames outcomes, e.g. abstract labels onto detectors.
    pub fn relabeled(&self, f: impl Fn(OutcomeLabel) -> OutcomeLabel) -> Result<Self> {
        Povm::new(
            self.outcomes
                .iter()
                .map(|(l, e)| (f(*l), e.clone()))
                .collect(),
        )
    }

    /// Largest element-wise deviation from another POVM with the same labels.
    pub fn max_abs_diff(&self, other: &Povm) -> Result<f64> {
        let mut worst = 0.0f64;
        for (label, element) in &self.outcomes {
            worst = worst.max(element.max_abs_diff(other.element(*label)?));
        }
        for label in other.labels() {
            self.element(label)?;
        }
        Ok(worst)
    }
}

/// Measurement branches `K` with `Σ K†K = I`; labels may repeat, in which
/// case the branches are coarse-grained into one outcome.
#[derive(Debug, Clone)]
pub struct KrausSet {
    operators: Vec<(OutcomeLabel, ComplexMatrix)>,
}

impl KrausSet {
    pub fn new(operators: Vec<(OutcomeLabel, ComplexMatrix)>) -> Result<Self> {
        let first = operators
            .first()
            .ok_or_else(|| Error::InvalidKraus("no operators".into()))?;
        let dim = first.1.dim();
        let mut sum = ComplexMatrix::zeros(dim);
        for (_, k) in &operators {
            if k.dim() != dim {
                return Err(Error::DimensionMismatch {
                    left: dim.size(),
                    right: k.size(),
                });
            }
            sum = &sum + &(&k.adjoint() * k);
        }
        let err = sum.max_abs_diff(&ComplexMatrix::identity(dim));
        if err > tol::PSD_SLACK {
            return Err(Error::InvalidKraus(format!(
                "Σ K†K differs from identity by {err:.3e}"
            )));
        }
        Ok(KrausSet { operators })
    }

    pub fn operators(&self) -> &[(OutcomeLabel, ComplexMatrix)] {
        &self.operators
    }

    pub fn to_povm(&self) -> Result<Povm> {
        let mut merged: Vec<(OutcomeLabel, ComplexMatrix)> = Vec::new();
        for (label, k) in &self.operators {
            let e = &k.adjoint() * k;
            match merged.iter_mut().find(|(l, _)| l == label) {
                Some((_, acc)) => *acc = &*acc + &e,
                None => merged.push((*label, e)),
            }
        }
        Povm::new(merged)
    }

    /// Post-measurement state (unnormalized) of branch `index`.
    pub fn apply_branch(&self, index: usize, rho: &DensityOperator) -> ComplexMatrix {
        let k = &self.operators[index].1;
        rho.matrix().conjugate_by(k)
    }
}

/// Probability per outcome label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClickDistribution {
    probabilities: BTreeMap<OutcomeLabel, f64>,
}

impl ClickDistribution {
    pub fn new(probabilities: BTreeMap<OutcomeLabel, f64>) -> Result<Self> {
        let mut total = 0.0;
        for (label, &p) in &probabilities {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter(format!(
                    "probability {p} for {label} outside [0, 1]"
                )));
            }
            total += p;
        }
        if (total - 1.0).abs() > tol::DIST_SUM {
            return Err(Error::InvalidParameter(format!(
                "probabilities sum to {total}"
            )));
        }
        Ok(ClickDistribution { probabilities })
    }

    pub fn get(&self, label: OutcomeLabel) -> f64 {
        self.probabilities.get(&label).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (OutcomeLabel, f64)> + '_ {
        self.probabilities.iter().map(|(l, p)| (*l, *p))
    }

    pub fn labels(&self) -> impl Iterator<Item = OutcomeLabel> + '_ {
        self.probabilities.keys().copied()
    }

    pub fn relabeled(&self, f: impl Fn(OutcomeLabel) -> OutcomeLabel) -> Self {
        let mut out = BTreeMap::new();
        for (l, p) in &self.probabilities {
            *out.entry(f(*l)).or_insert(0.0) += p;
        }
        ClickDistribution { probabilities: out }
    }

    pub fn max_abs_diff(&self, other: &ClickDistribution) -> f64 {
        self.labels()
            .chain(other.labels())
            .map(|l| (self.get(l) - other.get(l)).abs())
            .fold(0.0, f64::max)
    }
}

/// Clamps round-off negatives; rejects anything below the PSD slack.
pub(crate) fn clamp_probability(label: OutcomeLabel, p: f64) -> Result<f64> {
    if p < -tol::PSD_SLACK {
        return Err(Error::InvalidPovm(format!(
            "negative probability {p:.3e} for {label}"
        )));
    }
    // Values in the slack band but below the clamp threshold are also floored.
    Ok(p.clamp(0.0, 1.0))
}

/// Born rule `pⱼ = Tr(ρ Πⱼ)`.
pub fn born_probabilities(povm: &Povm, rho: &DensityOperator) -> Result<ClickDistribution> {
    if povm.dim() != rho.dim() {
        return Err(Error::DimensionMismatch {
            left: povm.dim().size(),
            right: rho.dim().size(),
        });
    }
    let mut probabilities = BTreeMap::new();
    for (label, element) in povm.outcomes() {
        let p = rho.expectation(element).re;
        probabilities.insert(*label, clamp_probability(*label, p)?);
    }
    ClickDistribution::new(probabilities)
}

/// Two states with prior probabilities.
#[derive(Debug, Clone)]
pub struct DiscriminationProblem {
    priors: (f64, f64),
    states: (DensityOperator, DensityOperator),
}

impl DiscriminationProblem {
    pub fn new(
        priors: (f64, f64),
        first: DensityOperator,
        second: DensityOperator,
    ) -> Result<Self> {
        let (a, b) = priors;
        if a < 0.0 || b < 0.0 || (a + b - 1.0).abs() > tol::CONSTRUCTION {
            return Err(Error::InvalidParameter(format!(
                "priors ({a}, {b}) must be non-negative and sum to 1"
            )));
        }
        if first.dim() != second.dim() {
            return Err(Error::DimensionMismatch {
                left: first.dim().size(),
                right: second.dim().size(),
            });
        }
        Ok(DiscriminationProblem {
            priors,
            states: (first, second),
        })
    }

    pub fn equal_priors(first: DensityOperator, second: DensityOperator) -> Result<Self> {
        Self::new((0.5, 0.5), first, second)
    }

    pub fn prior(&self, h: Hypothesis) -> f64 {
        match h {
            Hypothesis::First => self.priors.0,
            Hypothesis::Second => self.priors.1,
        }
    }

    pub fn state(&self, h: Hypothesis) -> &DensityOperator {
        match h {
            Hypothesis::First => &self.states.0,
            Hypothesis::Second => &self.states.1,
        }
    }

    pub fn dim(&self) -> Dim {
        self.states.0.dim()
    }

    /// `η₁ρ₁ − η₂ρ₂`
    pub fn weighted_difference(&self) -> ComplexMatrix {
        &self.states.0.matrix().scale(self.priors.0) - &self.states.1.matrix().scale(self.priors.1)
    }
}
