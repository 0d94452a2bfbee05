//! Linear-optics networks of half-wave plates, polarizing beam splitters and
//! detectors acting on a single photon.
//!
//! Each path carries two modes `(H, V)`; a circuit over `n` paths acts on a
//! `2n`-mode register ordered path-major. The first paths listed in
//! `inputs` receive the input state, in order, so a two-path input uses the
//! basis `(H₁, V₁, H₂, V₂)`.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{eig_hermitian, ComplexMatrix, Dim, ONE, ZERO};
use crate::quantum::{
    clamp_probability, ClickDistribution, DensityOperator, Hypothesis, OutcomeLabel, Povm,
    UnitaryOperator,
};
use crate::states::{
    check_half_angle, make_partially_polarized, make_rho0, rotation, PartialPolarizationParams,
    Rho0Params, Sign,
};
use crate::strategies::theta3_mc;
use crate::tol;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum OpticalElement {
    /// Rotates the linear polarization on `path` by `theta` radians.
    HalfWavePlate {
        name: String,
        path: String,
        theta: f64,
    },
    /// H of each input keeps to its own output, V crosses to the other one.
    PolarizingBeamSplitter {
        name: String,
        in_a: String,
        in_b: String,
        out_a: String,
        out_b: String,
    },
    /// Absorbs both modes of `path`.
    Detector { path: String, label: OutcomeLabel },
}

impl OpticalElement {
    pub fn hwp(name: &str, path: &str, theta: f64) -> Self {
        OpticalElement::HalfWavePlate {
            name: name.into(),
            path: path.into(),
            theta,
        }
    }

    /// Beam splitter whose outputs keep the input path names.
    pub fn pbs(name: &str, a: &str, b: &str) -> Self {
        OpticalElement::PolarizingBeamSplitter {
            name: name.into(),
            in_a: a.into(),
            in_b: b.into(),
            out_a: a.into(),
            out_b: b.into(),
        }
    }

    pub fn detector(path: &str, label: OutcomeLabel) -> Self {
        OpticalElement::Detector {
            path: path.into(),
            label,
        }
    }

    fn paths(&self) -> Vec<&str> {
        match self {
            OpticalElement::HalfWavePlate { path, .. } | OpticalElement::Detector { path, .. } => {
                vec![path]
            }
            OpticalElement::PolarizingBeamSplitter {
                in_a,
                in_b,
                out_a,
                out_b,
                ..
            } => vec![in_a, in_b, out_a, out_b],
        }
    }
}

/// Rotation `[[cos θ, −sin θ], [sin θ, cos θ]]` on `(H, V)`.
pub fn hwp_matrix(theta: f64) -> UnitaryOperator {
    UnitaryOperator::new(rotation(theta)).expect("rotation is unitary")
}

/// Mode permutation of a polarizing beam splitter in the local basis
/// `(a_H, a_V, b_H, b_V)`, outputs listed in the same order.
pub fn pbs_matrix() -> UnitaryOperator {
    let mut m = ComplexMatrix::zeros(Dim::Four);
    m.set(0, 0, ONE);
    m.set(3, 1, ONE);
    m.set(2, 2, ONE);
    m.set(1, 3, ONE);
    UnitaryOperator::new(m).expect("permutation is unitary")
}

#[derive(Deserialize)]
struct CircuitSpec {
    paths: Vec<String>,
    inputs: Vec<String>,
    #[serde(default)]
    preparation: Vec<OpticalElement>,
    measurement: Vec<OpticalElement>,
}

impl TryFrom<CircuitSpec> for OpticalCircuit {
    type Error = Error;

    fn try_from(spec: CircuitSpec) -> Result<Self> {
        OpticalCircuit::new(spec.paths, spec.inputs, spec.preparation, spec.measurement)
    }
}

/// Ordered optical network. The `preparation` stage turns the source photon
/// into the state to be discriminated; the `measurement` stage is the
/// discriminating network proper and holds every detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CircuitSpec")]
pub struct OpticalCircuit {
    paths: Vec<String>,
    inputs: Vec<String>,
    preparation: Vec<OpticalElement>,
    measurement: Vec<OpticalElement>,
}

impl OpticalCircuit {
    pub fn new(
        paths: Vec<String>,
        inputs: Vec<String>,
        preparation: Vec<OpticalElement>,
        measurement: Vec<OpticalElement>,
    ) -> Result<Self> {
        let invalid = |msg: String| Err(Error::InvalidCircuit(msg));
        for (i, p) in paths.iter().enumerate() {
            if paths[..i].contains(p) {
                return invalid(format!("path {p} declared twice"));
            }
        }
        if inputs.is_empty() || inputs.len() > 2 {
            return invalid(format!("{} input paths (expected 1 or 2)", inputs.len()));
        }
        for (i, p) in inputs.iter().enumerate() {
            if !paths.contains(p) || inputs[..i].contains(p) {
                return invalid(format!("input path {p} undeclared or repeated"));
            }
        }
        if preparation
            .iter()
            .any(|e| matches!(e, OpticalElement::Detector { .. }))
        {
            return invalid("detectors are not allowed in the preparation stage".into());
        }
        let all: Vec<&OpticalElement> = preparation.iter().chain(&measurement).collect();
        let mut labels = Vec::new();
        for (k, element) in all.iter().enumerate() {
            for p in element.paths() {
                if !paths.iter().any(|q| q == p) {
                    return invalid(format!("element references undeclared path {p}"));
                }
            }
            match element {
                OpticalElement::PolarizingBeamSplitter {
                    name,
                    in_a,
                    in_b,
                    out_a,
                    out_b,
                } => {
                    let same = (out_a == in_a && out_b == in_b) || (out_a == in_b && out_b == in_a);
                    if in_a == in_b || !same {
                        return invalid(format!("{name}: ports must be two distinct paths"));
                    }
                }
                OpticalElement::Detector { path, label } => {
                    if labels.contains(label) {
                        return invalid(format!("detector label {label} used twice"));
                    }
                    labels.push(*label);
                    if all[k + 1..]
                        .iter()
                        .any(|later| later.paths().contains(&path.as_str()))
                    {
                        return invalid(format!("detector {label} on path {path} is not terminal"));
                    }
                }
                OpticalElement::HalfWavePlate { name, theta, .. } => {
                    if !theta.is_finite() {
                        return invalid(format!("{name}: non-finite angle"));
                    }
                }
            }
        }
        if labels.is_empty() {
            return invalid("circuit has no detector".into());
        }
        Ok(OpticalCircuit {
            paths,
            inputs,
            preparation,
            measurement,
        })
    }

    pub fn paths(&self) -> &[String] {
        &self.paths
    }

    pub fn inputs(&self) -> &[String] {
        &self.inputs
    }

    pub fn preparation(&self) -> &[OpticalElement] {
        &self.preparation
    }

    pub fn measurement(&self) -> &[OpticalElement] {
        &self.measurement
    }

    pub fn elements(&self) -> impl Iterator<Item = &OpticalElement> {
        self.preparation.iter().chain(&self.measurement)
    }

    pub fn input_dim(&self) -> Dim {
        Dim::new(2 * self.inputs.len()).expect("validated")
    }

    /// The same network with the preparation stage removed.
    pub fn without_preparation(&self) -> Self {
        OpticalCircuit {
            preparation: Vec::new(),
            ..self.clone()
        }
    }

    /// Copy with every wave plate angle passed through `f(name, theta)`.
    pub fn map_hwp_angles(&self, mut f: impl FnMut(&str, f64) -> f64) -> Self {
        let mut out = self.clone();
        for e in out.preparation.iter_mut().chain(out.measurement.iter_mut()) {
            if let OpticalElement::HalfWavePlate { name, theta, .. } = e {
                *theta = f(name, *theta);
            }
        }
        out
    }

    pub fn detector_labels(&self) -> Vec<OutcomeLabel> {
        self.measurement
            .iter()
            .filter_map(|e| match e {
                OpticalElement::Detector { label, .. } => Some(*label),
                _ => None,
            })
            .collect()
    }

    /// Each non-detector element as a unitary on the full mode register.
    pub fn embedded_unitaries(&self) -> Vec<(String, DMatrix<Complex64>)> {
        let index = self.path_index();
        let n = 2 * self.paths.len();
        let mut out = Vec::new();
        for e in self.elements() {
            let mut u: DMatrix<Complex64> = DMatrix::identity(n, n);
            match e {
                OpticalElement::HalfWavePlate { name, path, theta } => {
                    let k = 2 * index[path.as_str()];
                    let r = rotation(*theta);
                    for i in 0..2 {
                        for j in 0..2 {
                            u[(k + i, k + j)] = r.get(i, j);
                        }
                    }
                    out.push((name.clone(), u));
                }
                OpticalElement::PolarizingBeamSplitter { name, .. } => {
                    let (x, y) = pbs_swap(&index, e);
                    u.swap_rows(x, y);
                    out.push((name.clone(), u));
                }
                OpticalElement::Detector { .. } => {}
            }
        }
        out
    }

    fn path_index(&self) -> HashMap<&str, usize> {
        self.paths
            .iter()
            .enumerate()
            .map(|(i, p)| (p.as_str(), i))
            .collect()
    }

    /// Resolves path names into a mode-level program.
    pub fn compile(&self) -> CompiledCircuit {
        let index = self.path_index();
        let mut ops = Vec::new();
        let mut hwp_names = Vec::new();
        let mut angles = Vec::new();
        let mut labels = Vec::new();
        for e in self.elements() {
            match e {
                OpticalElement::HalfWavePlate { name, path, theta } => {
                    let k = 2 * index[path.as_str()];
                    ops.push(Op::Rotate {
                        h: k,
                        v: k + 1,
                        plate: hwp_names.len(),
                    });
                    hwp_names.push(name.clone());
                    angles.push(*theta);
                }
                OpticalElement::PolarizingBeamSplitter { .. } => {
                    let (x, y) = pbs_swap(&index, e);
                    ops.push(Op::Swap(x, y));
                }
                OpticalElement::Detector { path, label } => {
                    let k = 2 * index[path.as_str()];
                    ops.push(Op::Detect {
                        h: k,
                        v: k + 1,
                        slot: labels.len(),
                    });
                    labels.push(*label);
                }
            }
        }
        let input_modes = self
            .inputs
            .iter()
            .flat_map(|p| {
                let k = 2 * index[p.as_str()];
                [k, k + 1]
            })
            .collect();
        CompiledCircuit {
            n_modes: 2 * self.paths.len(),
            input_modes,
            ops,
            hwp_names,
            angles,
            labels,
        }
    }
}

/// The single mode transposition a beam splitter performs.
fn pbs_swap(index: &HashMap<&str, usize>, e: &OpticalElement) -> (usize, usize) {
    let OpticalElement::PolarizingBeamSplitter {
        in_a, in_b, out_a, ..
    } = e
    else {
        unreachable!("not a beam splitter")
    };
    let a = 2 * index[in_a.as_str()];
    let b = 2 * index[in_b.as_str()];
    if out_a == in_a {
        // V modes exchange paths
        (a + 1, b + 1)
    } else {
        // outputs relabeled: H modes exchange, V stays
        (a, b)
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Rotate { h: usize, v: usize, plate: usize },
    Swap(usize, usize),
    Detect { h: usize, v: usize, slot: usize },
}

/// Mode-level form of a circuit, with wave plate angles held separately so
/// they can be perturbed without rebuilding the network.
#[derive(Debug, Clone)]
pub struct CompiledCircuit {
    n_modes: usize,
    input_modes: Vec<usize>,
    ops: Vec<Op>,
    hwp_names: Vec<String>,
    angles: Vec<f64>,
    labels: Vec<OutcomeLabel>,
}

/// Input state as weighted pure components `ρ = Σ wₖ|vₖ⟩⟨vₖ|`.
#[derive(Debug, Clone)]
pub struct PureComponents(Vec<(f64, Vec<Complex64>)>);

impl PureComponents {
    pub fn from_density(rho: &DensityOperator) -> Self {
        let eig = eig_hermitian(rho.matrix()).expect("validated state");
        PureComponents(
            eig.values
                .iter()
                .enumerate()
                .filter(|(_, w)| w.abs() > 1e-300)
                .map(|(k, &w)| (w, eig.vector(k)))
                .collect(),
        )
    }

    fn pure(v: Vec<Complex64>) -> Self {
        PureComponents(vec![(1.0, v)])
    }
}

impl CompiledCircuit {
    pub fn hwp_names(&self) -> &[String] {
        &self.hwp_names
    }

    pub fn hwp_angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn labels(&self) -> &[OutcomeLabel] {
        &self.labels
    }

    pub fn input_dim(&self) -> usize {
        self.input_modes.len()
    }

    /// Detector probabilities, in `labels()` order, for the given plate angles.
    pub fn detect(&self, angles: &[f64], input: &PureComponents) -> Result<Vec<f64>> {
        assert_eq!(angles.len(), self.angles.len(), "one angle per wave plate");
        let trig: Vec<(f64, f64)> = angles.iter().map(|t| t.sin_cos()).collect();
        let mut clicks = vec![0.0; self.labels.len()];
        let mut leftover = 0.0;
        let mut amp = vec![ZERO; self.n_modes];
        for (weight, v) in &input.0 {
            assert_eq!(v.len(), self.input_modes.len(), "input dimension");
            amp.iter_mut().for_each(|a| *a = ZERO);
            for (&mode, &x) in self.input_modes.iter().zip(v) {
                amp[mode] = x;
            }
            for op in &self.ops {
                match *op {
                    Op::Rotate { h, v, plate } => {
                        let (s, c) = trig[plate];
                        let (x, y) = (amp[h], amp[v]);
                        amp[h] = x * c - y * s;
                        amp[v] = x * s + y * c;
                    }
                    Op::Swap(x, y) => amp.swap(x, y),
                    Op::Detect { h, v, slot } => {
                        clicks[slot] += weight * (amp[h].norm_sqr() + amp[v].norm_sqr());
                        amp[h] = ZERO;
                        amp[v] = ZERO;
                    }
                }
            }
            leftover += weight * amp.iter().map(|a| a.norm_sqr()).sum::<f64>();
        }
        if leftover.abs() > tol::LEFTOVER {
            return Err(Error::InvalidCircuit(format!(
                "population {leftover:.3e} never reaches a detector"
            )));
        }
        Ok(clicks)
    }

    pub fn distribution(
        &self,
        angles: &[f64],
        input: &PureComponents,
    ) -> Result<ClickDistribution> {
        let clicks = self.detect(angles, input)?;
        let mut map = BTreeMap::new();
        for (label, p) in self.labels.iter().zip(clicks) {
            map.insert(*label, clamp_probability(*label, p)?);
        }
        ClickDistribution::new(map)
    }
}

/// Click distribution of `rho_in` sent through the whole circuit.
pub fn propagate(circuit: &OpticalCircuit, rho_in: &DensityOperator) -> Result<ClickDistribution> {
    if rho_in.dim() != circuit.input_dim() {
        return Err(Error::DimensionMismatch {
            left: circuit.input_dim().size(),
            right: rho_in.dim().size(),
        });
    }
    let compiled = circuit.compile();
    compiled.distribution(&compiled.angles, &PureComponents::from_density(rho_in))
}

/// Effective POVM of the whole circuit on its input space, recovered from
/// the click statistics of a spanning set of input states.
pub fn circuit_to_povm(circuit: &OpticalCircuit) -> Result<Povm> {
    let compiled = circuit.compile();
    let n = compiled.input_dim();
    let angles = compiled.angles.clone();
    let basis = |j: usize| {
        let mut v = vec![ZERO; n];
        v[j] = ONE;
        v
    };
    let probe = |v: Vec<Complex64>| compiled.detect(&angles, &PureComponents::pure(v));
    let h = std::f64::consts::FRAC_1_SQRT_2;

    let n_labels = compiled.labels.len();
    let mut elements = vec![DMatrix::from_element(n, n, ZERO); n_labels];
    let mut diag = vec![vec![0.0; n_labels]; n];
    for (j, d) in diag.iter_mut().enumerate() {
        *d = probe(basis(j))?;
        for (l, e) in elements.iter_mut().enumerate() {
            e[(j, j)] = Complex64::new(d[l], 0.0);
        }
    }
    for j in 0..n {
        for k in j + 1..n {
            let mut sum = basis(j);
            sum[k] = Complex64::new(h, 0.0);
            sum[j] = Complex64::new(h, 0.0);
            let mut twisted = basis(j);
            twisted[j] = Complex64::new(h, 0.0);
            twisted[k] = Complex64::new(0.0, h);
            let real = probe(sum)?;
            let imag = probe(twisted)?;
            for (l, e) in elements.iter_mut().enumerate() {
                let mean = 0.5 * (diag[j][l] + diag[k][l]);
                let z = Complex64::new(real[l] - mean, mean - imag[l]);
                e[(j, k)] = z;
                e[(k, j)] = z.conj();
            }
        }
    }
    let outcomes = compiled
        .labels
        .iter()
        .zip(elements)
        .map(|(l, e)| Ok((*l, ComplexMatrix::from_dmatrix(e)?)))
        .collect::<Result<Vec<_>>>()?;
    Povm::new(outcomes)
}

fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

/// One attenuating interferometer: splits `input` on a beam splitter, turns
/// the H arm by `theta` so that a `cos θ` share exits to the failure detector
/// on `input`, flips the survivor to H, and recombines it with the untouched
/// V arm on `output`. Light leaking from the recombiner is merged into the
/// failure port.
fn filter_interferometer(
    elements: &mut Vec<OpticalElement>,
    tag: &str,
    input: &str,
    v_arm: &str,
    output: &str,
    theta: f64,
    failure: OutcomeLabel,
) {
    elements.extend([
        OpticalElement::pbs(&format!("PBS-split{tag}"), input, v_arm),
        OpticalElement::hwp(&format!("HWP3{tag}"), input, theta),
        OpticalElement::pbs(&format!("PBS-fail{tag}"), input, output),
        OpticalElement::hwp(&format!("HWP4{tag}"), output, FRAC_PI_2),
        OpticalElement::pbs(&format!("PBS-join{tag}"), output, v_arm),
        OpticalElement::pbs(&format!("PBS-dump{tag}"), input, v_arm),
        OpticalElement::detector(input, failure),
    ]);
}

/// Maximum-confidence network with its preparation stage, and the source
/// photon `p|H⟩⟨H| + (1 − p)I/2` that feeds it.
pub fn build_mc_circuit(
    params: PartialPolarizationParams,
    prepared: Sign,
) -> Result<(OpticalCircuit, DensityOperator)> {
    let beta = params.beta();
    let mut preparation = vec![OpticalElement::hwp("HWP1", "a", beta)];
    if prepared == Sign::Minus {
        preparation.push(OpticalElement::hwp("HWP2", "a", -2.0 * beta));
    }
    let mut measurement = Vec::new();
    filter_interferometer(
        &mut measurement,
        "",
        "a",
        "b",
        "c",
        theta3_mc(params),
        OutcomeLabel::Apd0,
    );
    measurement.extend([
        OpticalElement::hwp("HWP5", "c", FRAC_PI_4),
        OpticalElement::pbs("PBS4", "c", "d"),
        OpticalElement::detector("c", OutcomeLabel::Apd1),
        OpticalElement::detector("d", OutcomeLabel::Apd2),
    ]);
    let circuit = OpticalCircuit::new(
        names(&["a", "b", "c", "d"]),
        names(&["a"]),
        preparation,
        measurement,
    )?;
    let source =
        make_partially_polarized(PartialPolarizationParams::new(params.p(), 0.0)?, Sign::Plus);
    Ok((circuit, source))
}

/// Unambiguous-discrimination network: two filter interferometers (paths 1
/// and 2) whose outputs 3 and 4 are analyzed at ±45° and folded onto two
/// detectors. The input is `ρ₀`; the preparation stage applies `U^(±)`.
pub fn build_usd_circuit(
    alpha: f64,
    prepared: Hypothesis,
    rho0: Rho0Params,
) -> Result<(OpticalCircuit, DensityOperator)> {
    check_half_angle("alpha", alpha)?;
    if alpha == 0.0 {
        return Err(Error::DegenerateFilter(
            "alpha = 0 makes every outcome inconclusive".into(),
        ));
    }
    let mut preparation = vec![
        OpticalElement::hwp("HWP1", "1", alpha),
        OpticalElement::hwp("HWP1'", "2", alpha - FRAC_PI_2),
    ];
    if prepared == Hypothesis::Second {
        preparation.push(OpticalElement::hwp("HWP2", "1", -2.0 * alpha));
        preparation.push(OpticalElement::hwp("HWP2'", "2", -2.0 * alpha));
    }
    let theta3 = alpha.tan().min(1.0).asin();
    let mut measurement = Vec::new();
    filter_interferometer(
        &mut measurement,
        "",
        "1",
        "1b",
        "3",
        theta3,
        OutcomeLabel::Apd0,
    );
    filter_interferometer(
        &mut measurement,
        "'",
        "2",
        "2b",
        "4",
        theta3,
        OutcomeLabel::Apd0Prime,
    );
    measurement.extend([
        OpticalElement::hwp("HWP5", "3", FRAC_PI_4),
        OpticalElement::hwp("HWP5'", "4", -FRAC_PI_4),
        OpticalElement::pbs("PBS-out", "3", "4"),
        OpticalElement::detector("3", OutcomeLabel::Apd1),
        OpticalElement::detector("4", OutcomeLabel::Apd2),
    ]);
    let circuit = OpticalCircuit::new(
        names(&["1", "2", "1b", "2b", "3", "4"]),
        names(&["1", "2"]),
        preparation,
        measurement,
    )?;
    Ok((circuit, make_rho0(rho0)?))
}
