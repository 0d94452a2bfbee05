//! Seeded photon-counting simulation: multinomial click sampling, wave plate
//! imperfections, confidence and error-rate estimators, and angle sweeps.
//!
//! Every random draw comes from a ChaCha8 stream keyed by the master seed and
//! by the (point, prepared state, chunk) it belongs to, so a sweep is
//! reproducible bit for bit whatever the number of worker threads.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::{
    build_mc_circuit, build_usd_circuit, CompiledCircuit, OpticalCircuit, PureComponents,
};
use crate::quantum::{
    born_probabilities, clamp_probability, ClickDistribution, DensityOperator,
    DiscriminationProblem, Hypothesis, OutcomeLabel, Povm,
};
use crate::states::{
    make_mixed_pair, make_partially_polarized, MixedPairParams, PartialPolarizationParams,
    Rho0Params, Sign,
};
use crate::strategies::{
    helstrom_error, max_confidence, mc_failure_prob, mc_povm, minerror_confidence, minerror_povm,
    usd_failure_prob, usd_povm, Strategy,
};

pub const DEFAULT_TRIALS: u64 = 100_000;
/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959963984540054;
const CHUNK: u64 = 8192;

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ImperfectionModel {
    hwp_static_offset: BTreeMap<String, f64>,
    hwp_jitter_sigma: f64,
    prep_misalignment: f64,
}

impl ImperfectionModel {
    pub fn ideal() -> Self {
        Self::default()
    }

    /// Offsets and `jitter_sigma` in radians. `misalignment` is the weight of
    /// the maximally mixed state blended into the prepared state.
    pub fn new(
        offsets: BTreeMap<String, f64>,
        jitter_sigma: f64,
        misalignment: f64,
    ) -> Result<Self> {
        if let Some((name, _)) = offsets.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "offset of {name} is not finite"
            )));
        }
        if !(jitter_sigma >= 0.0 && jitter_sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "jitter sigma {jitter_sigma} must be >= 0"
            )));
        }
        if !(0.0..1.0).contains(&misalignment) {
            return Err(Error::InvalidParameter(format!(
                "misalignment {misalignment} outside [0, 1)"
            )));
        }
        Ok(ImperfectionModel {
            hwp_static_offset: offsets,
            hwp_jitter_sigma: jitter_sigma,
            prep_misalignment: misalignment,
        })
    }

    pub fn offsets(&self) -> &BTreeMap<String, f64> {
        &self.hwp_static_offset
    }

    pub fn offset(&self, plate: &str) -> f64 {
        self.hwp_static_offset.get(plate).copied().unwrap_or(0.0)
    }

    pub fn jitter_sigma(&self) -> f64 {
        self.hwp_jitter_sigma
    }

    pub fn misalignment(&self) -> f64 {
        self.prep_misalignment
    }

    pub fn is_ideal(&self) -> bool {
        self.hwp_jitter_sigma == 0.0
            && self.prep_misalignment == 0.0
            && self.hwp_static_offset.values().all(|v| *v == 0.0)
    }

    fn touches_plates(&self) -> bool {
        self.hwp_jitter_sigma > 0.0 || self.hwp_static_offset.values().any(|v| *v != 0.0)
    }

    /// Blends `rho` with the maximally mixed state of its full register.
    fn degrade(&self, rho: &DensityOperator) -> Result<DensityOperator> {
        if self.prep_misalignment == 0.0 {
            return Ok(rho.clone());
        }
        DensityOperator::mix(
            rho,
            &DensityOperator::maximally_mixed(rho.dim()),
            1.0 - self.prep_misalignment,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TrialBatch {
    n_trials: u64,
    counts: BTreeMap<OutcomeLabel, u64>,
    seed: u64,
    prepared: Hypothesis,
}

impl TrialBatch {
    pub fn new(
        prepared: Hypothesis,
        seed: u64,
        counts: BTreeMap<OutcomeLabel, u64>,
    ) -> Result<Self> {
        let n_trials = counts.values().sum();
        if n_trials == 0 {
            return Err(Error::InvalidParameter("batch without trials".into()));
        }
        Ok(TrialBatch {
            n_trials,
            counts,
            seed,
            prepared,
        })
    }

    pub fn n_trials(&self) -> u64 {
        self.n_trials
    }

    pub fn counts(&self) -> &BTreeMap<OutcomeLabel, u64> {
        &self.counts
    }

    pub fn count(&self, label: OutcomeLabel) -> u64 {
        self.counts.get(&label).copied().unwrap_or(0)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn prepared(&self) -> Hypothesis {
        self.prepared
    }

    pub fn fraction(&self, label: OutcomeLabel) -> f64 {
        self.count(label) as f64 / self.n_trials as f64
    }

    pub fn inconclusive(&self) -> u64 {
        self.counts
            .iter()
            .filter(|(l, _)| l.is_inconclusive())
            .map(|(_, c)| c)
            .sum()
    }
}

/// Multinomial draw by sequential binomials. Conditional probabilities use
/// suffix sums so that a trailing zero-probability outcome is never hit.
fn multinomial<R: Rng>(rng: &mut R, probs: &[f64], n: u64) -> Vec<u64> {
    let mut suffix = vec![0.0; probs.len() + 1];
    for i in (0..probs.len()).rev() {
        suffix[i] = suffix[i + 1] + probs[i];
    }
    let mut counts = vec![0; probs.len()];
    let mut left = n;
    for (i, &p) in probs.iter().enumerate() {
        if left == 0 {
            break;
        }
        if i + 1 == probs.len() {
            counts[i] = left;
            break;
        }
        let q = if suffix[i] > 0.0 {
            (p / suffix[i]).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let k = Binomial::new(left, q).expect("q in [0, 1]").sample(rng);
        counts[i] = k;
        left -= k;
    }
    counts
}

fn categorical<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let total: f64 = probs.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        if u < p {
            return i;
        }
        u -= p;
        last = i;
    }
    last
}

/// Draws `n` trials from `dist`.
pub fn sample_clicks(
    dist: &ClickDistribution,
    n: u64,
    seed: u64,
    prepared: Hypothesis,
) -> Result<TrialBatch> {
    if n == 0 {
        return Err(Error::InvalidParameter(
            "n_trials must be at least 1".into(),
        ));
    }
    let (labels, probs): (Vec<_>, Vec<_>) = dist.iter().unzip();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts = multinomial(&mut rng, &probs, n);
    TrialBatch::new(prepared, seed, labels.into_iter().zip(counts).collect())
}

/// One of the two optical networks, fully parameterized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NetworkSpec {
    Mc {
        params: PartialPolarizationParams,
        prepared: Sign,
    },
    Usd {
        alpha: f64,
        prepared: Hypothesis,
        rho0: Rho0Params,
    },
}

fn sign_hypothesis(sign: Sign) -> Hypothesis {
    match sign {
        Sign::Plus => Hypothesis::First,
        Sign::Minus => Hypothesis::Second,
    }
}

fn hypothesis_sign(h: Hypothesis) -> Sign {
    match h {
        Hypothesis::First => Sign::Plus,
        Hypothesis::Second => Sign::Minus,
    }
}

impl NetworkSpec {
    pub fn build(&self) -> Result<(OpticalCircuit, DensityOperator)> {
        match *self {
            NetworkSpec::Mc { params, prepared } => build_mc_circuit(params, prepared),
            NetworkSpec::Usd {
                alpha,
                prepared,
                rho0,
            } => build_usd_circuit(alpha, prepared, rho0),
        }
    }

    pub fn prepared(&self) -> Hypothesis {
        match *self {
            NetworkSpec::Mc { prepared, .. } => sign_hypothesis(prepared),
            NetworkSpec::Usd { prepared, .. } => prepared,
        }
    }
}

/// Click model of one prepared state, ready for repeated sampling.
enum Sampler {
    Network {
        compiled: CompiledCircuit,
        angles: Vec<f64>,
        input: PureComponents,
        jitter: Option<Normal<f64>>,
    },
    Direct {
        labels: Vec<OutcomeLabel>,
        probs: Vec<f64>,
    },
}

impl Sampler {
    fn network(spec: &NetworkSpec, model: &ImperfectionModel) -> Result<Self> {
        let (circuit, input) = spec.build()?;
        let compiled = circuit.compile();
        let angles = compiled
            .hwp_names()
            .iter()
            .zip(compiled.hwp_angles())
            .map(|(name, theta)| theta + model.offset(name))
            .collect();
        let jitter = if model.jitter_sigma() > 0.0 {
            Some(Normal::new(0.0, model.jitter_sigma()).expect("validated sigma"))
        } else {
            None
        };
        Ok(Sampler::Network {
            compiled,
            angles,
            input: PureComponents::from_density(&model.degrade(&input)?),
            jitter,
        })
    }

    fn direct(povm: &Povm, rho: &DensityOperator, model: &ImperfectionModel) -> Result<Self> {
        if model.touches_plates() {
            return Err(Error::InvalidParameter(
                "the minimum-error strategy has no wave plates to perturb".into(),
            ));
        }
        let dist = born_probabilities(povm, &model.degrade(rho)?)?;
        let (labels, probs) = dist.iter().unzip();
        Ok(Sampler::Direct { labels, probs })
    }

    fn labels(&self) -> Vec<OutcomeLabel> {
        match self {
            Sampler::Network { compiled, .. } => compiled.labels().to_vec(),
            Sampler::Direct { labels, .. } => labels.clone(),
        }
    }

    fn jittered_angles<R: Rng>(&self, rng: &mut R, out: &mut Vec<f64>) {
        if let Sampler::Network { angles, jitter, .. } = self {
            out.clear();
            match jitter {
                Some(normal) => out.extend(angles.iter().map(|a| a + normal.sample(rng))),
                None => out.extend_from_slice(angles),
            }
        }
    }

    fn probabilities<R: Rng>(&self, rng: &mut R) -> Result<Vec<f64>> {
        match self {
            Sampler::Network {
                compiled, input, ..
            } => {
                let mut angles = Vec::new();
                self.jittered_angles(rng, &mut angles);
                compiled.detect(&angles, input)
            }
            Sampler::Direct { probs, .. } => Ok(probs.clone()),
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R, n: u64) -> Result<Vec<u64>> {
        match self {
            Sampler::Network {
                compiled,
                input,
                jitter: Some(_),
                ..
            } => {
                let mut counts = vec![0; compiled.labels().len()];
                let mut angles = Vec::new();
                for _ in 0..n {
                    self.jittered_angles(rng, &mut angles);
                    counts[categorical(rng, &compiled.detect(&angles, input)?)] += 1;
                }
                Ok(counts)
            }
            _ => {
                let probs = self.probabilities(rng)?;
                Ok(multinomial(rng, &probs, n))
            }
        }
    }
}

/// Click distribution of one trial: every wave plate angle is shifted by its
/// static offset plus a fresh jitter draw, and the source is degraded by the
/// misalignment before it enters the network.
pub fn perturbed_distribution(
    spec: &NetworkSpec,
    model: &ImperfectionModel,
    seed: u64,
) -> Result<ClickDistribution> {
    let sampler = Sampler::network(spec, model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probs = sampler.probabilities(&mut rng)?;
    let mut map = BTreeMap::new();
    for (label, p) in sampler.labels().into_iter().zip(probs) {
        map.insert(label, clamp_probability(label, p)?);
    }
    ClickDistribution::new(map)
}

/// Wilson score interval for `successes` out of `n` at normal quantile `z`.
pub fn wilson_interval(successes: u64, n: u64, z: f64) -> (f64, f64) {
    assert!(n > 0 && successes <= n, "need 0 <= successes <= n, n > 0");
    let (k, n) = (successes as f64, n as f64);
    let z2 = z * z;
    let center = (k + z2 / 2.0) / (n + z2);
    let half = z / (n + z2) * (k * (n - k) / n + z2 / 4.0).sqrt();
    let lo = if successes == 0 {
        0.0
    } else {
        (center - half).max(0.0)
    };
    let hi = if successes as f64 == n {
        1.0
    } else {
        (center + half).min(1.0)
    };
    (lo, hi)
}

/// A binomial proportion with its 95% Wilson interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub successes: u64,
    pub total: u64,
}

impl Estimate {
    pub fn new(successes: u64, total: u64) -> Result<Self> {
        if total == 0 {
            return Err(Error::UndefinedEstimate(
                "no events to estimate from".into(),
            ));
        }
        let (ci_low, ci_high) = wilson_interval(successes, total, Z95);
        Ok(Estimate {
            value: successes as f64 / total as f64,
            ci_low,
            ci_high,
            successes,
            total,
        })
    }

    /// Whether `expected` lies inside the Wilson interval at quantile `z`.
    pub fn covers(&self, expected: f64, z: f64) -> bool {
        let (lo, hi) = wilson_interval(self.successes, self.total, z);
        expected >= lo - 1e-12 && expected <= hi + 1e-12
    }

    /// Distance from `expected` in binomial standard deviations at `expected`.
    pub fn sigmas_from(&self, expected: f64) -> f64 {
        sigma_distance(self.value, expected, self.total)
    }
}

fn sigma_distance(observed: f64, expected: f64, n: u64) -> f64 {
    let diff = (observed - expected).abs();
    let sigma = (expected * (1.0 - expected) / n as f64).max(0.0).sqrt();
    if diff <= 1e-12 {
        0.0
    } else if sigma == 0.0 {
        f64::INFINITY
    } else {
        diff / sigma
    }
}

/// Fraction of correct clicks on `label` across equal-size batches prepared
/// in the first and second state.
pub fn estimate_confidence(
    first: &TrialBatch,
    second: &TrialBatch,
    label: OutcomeLabel,
) -> Result<Estimate> {
    if first.prepared != Hypothesis::First || second.prepared != Hypothesis::Second {
        return Err(Error::InvalidParameter(
            "batches must be prepared in states 1 and 2".into(),
        ));
    }
    if first.n_trials != second.n_trials {
        return Err(Error::InvalidParameter(format!(
            "unequal batch sizes {} and {}",
            first.n_trials, second.n_trials
        )));
    }
    let claimed = label.claims().ok_or(Error::UndefinedConfidence(label))?;
    let (right, wrong) = match claimed {
        Hypothesis::First => (first, second),
        Hypothesis::Second => (second, first),
    };
    let correct = right.count(label);
    let total = correct + wrong.count(label);
    if total == 0 {
        return Err(Error::UndefinedEstimate(format!("no clicks on {label}")));
    }
    Estimate::new(correct, total)
}

/// Share of conclusive clicks that land on the detector of the other state.
pub fn error_rate(batch: &TrialBatch) -> Result<Estimate> {
    let (right, wrong) = match batch.prepared {
        Hypothesis::First => (OutcomeLabel::Apd1, OutcomeLabel::Apd2),
        Hypothesis::Second => (OutcomeLabel::Apd2, OutcomeLabel::Apd1),
    };
    let conclusive = batch.count(right) + batch.count(wrong);
    if conclusive == 0 {
        return Err(Error::UndefinedEstimate("no conclusive clicks".into()));
    }
    Estimate::new(batch.count(wrong), conclusive)
}

/// What the sweep's states are made of.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Source {
    /// Degree of polarization of the partially polarized pair.
    Polarized { p: f64 },
    /// Two-path source state of the mixed pair.
    Rho0(Rho0Params),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Counting {
    Fixed(u64),
    /// Trial count per point drawn from a Poisson law with mean `rate · dwell`.
    Poisson {
        rate: f64,
        dwell: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub strategy: Strategy,
    /// β for `mc` and `minerror`, α for `usd`.
    pub angles_deg: Vec<f64>,
    pub source: Source,
    pub counting: Counting,
    pub seed: u64,
    pub imperfection: ImperfectionModel,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.angles_deg.is_empty() {
            return bad("empty angle grid".into());
        }
        if let Some(a) = self.angles_deg.iter().find(|a| !(0.0..=45.0).contains(*a)) {
            return bad(format!("angle {a}° outside [0°, 45°]"));
        }
        match self.counting {
            Counting::Fixed(0) => return bad("n_trials must be at least 1".into()),
            Counting::Poisson { rate, dwell }
                if !(rate > 0.0 && dwell > 0.0 && (rate * dwell).is_finite()) =>
            {
                return bad("poisson rate and dwell must be positive".into())
            }
            _ => {}
        }
        if self.workers == Some(0) {
            return bad("workers must be at least 1".into());
        }
        match (self.strategy, self.source) {
            (Strategy::UnambiguousUsd, Source::Rho0(_)) => {}
            (Strategy::MaxConfidence | Strategy::MinError, Source::Polarized { p }) => {
                PartialPolarizationParams::new(p, 0.0)?;
            }
            (s, _) => {
                return bad(format!(
                    "strategy {s} needs a different state parameterization"
                ))
            }
        }
        Ok(())
    }
}

/// One CSV row: a sweep angle and one prepared state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub strategy: Strategy,
    pub angle_deg: f64,
    pub prepared: String,
    pub n_trials: u64,
    pub n_apd0: u64,
    pub n_apd0p: u64,
    pub n_apd1: u64,
    pub n_apd2: u64,
    pub frac_inconclusive: f64,
    pub frac_apd1: f64,
    pub frac_apd2: f64,
    pub error_rate: f64,
    /// Wilson 95% interval of the confidence for `mc` rows, of the error
    /// rate otherwise.
    pub ci_low: f64,
    pub ci_high: f64,
    pub analytic_q: f64,
    pub analytic_c: f64,
    pub analytic_helstrom: f64,
    #[serde(skip)]
    pub batch: TrialBatch,
    /// Ideal-model click probabilities of this prepared state.
    #[serde(skip)]
    pub expected: BTreeMap<OutcomeLabel, f64>,
    /// Confidence of this state's detector, for `mc` and `minerror` rows.
    #[serde(skip)]
    pub confidence: Option<Estimate>,
}

impl SweepRow {
    /// Largest distance of a detector fraction from its ideal probability,
    /// in binomial standard deviations.
    pub fn max_fraction_sigmas(&self) -> f64 {
        self.expected
            .iter()
            .map(|(l, p)| sigma_distance(self.batch.fraction(*l), *p, self.batch.n_trials()))
            .fold(0.0, f64::max)
    }

    pub fn confidence_sigmas(&self) -> Option<f64> {
        self.confidence.map(|c| c.sigmas_from(self.analytic_c))
    }

    /// Every detector fraction within `z` σ of the ideal prediction and, where
    /// a confidence is estimated, the analytic confidence inside its Wilson
    /// interval at quantile `z`.
    pub fn within(&self, z: f64) -> bool {
        let n = self.batch.n_trials() as f64;
        let fractions_ok = self.expected.iter().all(|(l, p)| {
            let sigma = (p * (1.0 - p) / n).max(0.0).sqrt();
            (self.batch.fraction(*l) - p).abs() <= z * sigma + 1e-12
        });
        fractions_ok && self.confidence.is_none_or(|c| c.covers(self.analytic_c, z))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        for row in &self.rows {
            writer
                .serialize(row)
                .map_err(|e| Error::Output(e.to_string()))?;
        }
        writer.flush().map_err(|e| Error::Output(e.to_string()))
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| Error::Output(e.to_string()))
    }

    /// Largest deviation from the ideal model over all rows, in σ units.
    pub fn max_sigma_deviation(&self) -> f64 {
        self.rows
            .iter()
            .flat_map(|r| [Some(r.max_fraction_sigmas()), r.confidence_sigmas()])
            .flatten()
            .fold(0.0, f64::max)
    }

    pub fn breaches(&self, z: f64) -> Vec<&SweepRow> {
        self.rows.iter().filter(|r| !r.within(z)).collect()
    }
}

struct Point {
    angle_deg: f64,
    samplers: [Sampler; 2],
    expected: [ClickDistribution; 2],
    analytic_q: f64,
    analytic_c: f64,
    analytic_helstrom: f64,
}

fn build_point(config: &SweepConfig, angle_deg: f64) -> Result<Point> {
    let angle = angle_deg.to_radians();
    let model = &config.imperfection;
    let both = [Hypothesis::First, Hypothesis::Second];
    match (config.strategy, config.source) {
        (Strategy::UnambiguousUsd, Source::Rho0(rho0)) => {
            let povm = usd_povm(angle)?;
            let (rho1, rho2) = make_mixed_pair(MixedPairParams::new(angle, rho0)?)?;
            let expected = [
                born_probabilities(&povm, &rho1)?,
                born_probabilities(&povm, &rho2)?,
            ];
            let problem = DiscriminationProblem::equal_priors(rho1, rho2)?;
            let samplers = both.map(|prepared| {
                Sampler::network(
                    &NetworkSpec::Usd {
                        alpha: angle,
                        prepared,
                        rho0,
                    },
                    model,
                )
            });
            let [s1, s2] = samplers;
            Ok(Point {
                angle_deg,
                samplers: [s1?, s2?],
                expected,
                analytic_q: usd_failure_prob(angle)?,
                analytic_c: 0.0,
                analytic_helstrom: helstrom_error(&problem),
            })
        }
        (strategy, Source::Polarized { p }) => {
            let params = PartialPolarizationParams::new(p, angle)?;
            let plus = make_partially_polarized(params, Sign::Plus);
            let minus = make_partially_polarized(params, Sign::Minus);
            let problem = DiscriminationProblem::equal_priors(plus.clone(), minus.clone())?;
            let povm = match strategy {
                Strategy::MaxConfidence => mc_povm(params)?,
                _ => minerror_povm(&problem)?,
            }
            .relabeled(OutcomeLabel::to_detector)?;
            let expected = [
                born_probabilities(&povm, &plus)?,
                born_probabilities(&povm, &minus)?,
            ];
            let (samplers, analytic_q, analytic_c) = if strategy == Strategy::MaxConfidence {
                let [s1, s2] = both.map(|h| {
                    Sampler::network(
                        &NetworkSpec::Mc {
                            params,
                            prepared: hypothesis_sign(h),
                        },
                        model,
                    )
                });
                ([s1?, s2?], mc_failure_prob(params), max_confidence(params))
            } else {
                (
                    [
                        Sampler::direct(&povm, &plus, model)?,
                        Sampler::direct(&povm, &minus, model)?,
                    ],
                    0.0,
                    minerror_confidence(params),
                )
            };
            Ok(Point {
                angle_deg,
                samplers,
                expected,
                analytic_q,
                analytic_c,
                analytic_helstrom: helstrom_error(&problem),
            })
        }
        (s, _) => Err(Error::InvalidParameter(format!(
            "strategy {s} needs a different state parameterization"
        ))),
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn chunk_stream(point: usize, prepared: Hypothesis, chunk: u64) -> u64 {
    ((point as u64) << 32) | ((prepared.index() as u64) << 31) | chunk
}

fn trial_count(config: &SweepConfig, point: usize) -> u64 {
    match config.counting {
        Counting::Fixed(n) => n,
        Counting::Poisson { rate, dwell } => {
            let mut rng = stream_rng(config.seed, u64::MAX - point as u64);
            let n: f64 = Poisson::new(rate * dwell)
                .expect("validated mean")
                .sample(&mut rng);
            (n as u64).max(1)
        }
    }
}

fn check_offsets(config: &SweepConfig, points: &[Point]) -> Result<()> {
    let mut known = BTreeSet::new();
    for point in points {
        for sampler in &point.samplers {
            if let Sampler::Network { compiled, .. } = sampler {
                known.extend(compiled.hwp_names().iter().cloned());
            }
        }
    }
    match config
        .imperfection
        .offsets()
        .keys()
        .find(|k| !known.contains(*k))
    {
        Some(name) => Err(Error::InvalidParameter(format!(
            "no wave plate named {name}"
        ))),
        None => Ok(()),
    }
}

fn prepared_name(strategy: Strategy, h: Hypothesis) -> &'static str {
    match (strategy, h) {
        (Strategy::UnambiguousUsd, Hypothesis::First) => "1",
        (Strategy::UnambiguousUsd, Hypothesis::Second) => "2",
        (_, Hypothesis::First) => "+",
        (_, Hypothesis::Second) => "-",
    }
}

/// Runs every (angle, prepared state) point of the sweep.
pub fn run_sweep(config: &SweepConfig) -> Result<SweepResult> {
    config.validate()?;
    let points = config
        .angles_deg
        .iter()
        .map(|a| build_point(config, *a))
        .collect::<Result<Vec<_>>>()?;
    check_offsets(config, &points)?;
    let sizes: Vec<u64> = (0..points.len()).map(|i| trial_count(config, i)).collect();

    let mut tasks = Vec::new();
    for (i, n) in sizes.iter().enumerate() {
        for h in [Hypothesis::First, Hypothesis::Second] {
            for chunk in 0..n.div_ceil(CHUNK) {
                let len = CHUNK.min(n - chunk * CHUNK);
                tasks.push((i, h, chunk, len));
            }
        }
    }
    let run = || {
        tasks
            .par_iter()
            .map(|&(i, h, chunk, len)| {
                let mut rng = stream_rng(config.seed, chunk_stream(i, h, chunk));
                points[i].samplers[h.index()].sample(&mut rng, len)
            })
            .collect::<Result<Vec<_>>>()
    };
    let chunk_counts = match config.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::InvalidParameter(e.to_string()))?
            .install(run)?,
        None => run()?,
    };

    let mut totals: Vec<[Vec<u64>; 2]> = points
        .iter()
        .map(|p| p.samplers.each_ref().map(|s| vec![0; s.labels().len()]))
        .collect();
    for (&(i, h, _, _), counts) in tasks.iter().zip(chunk_counts) {
        for (t, c) in totals[i][h.index()].iter_mut().zip(counts) {
            *t += c;
        }
    }

    let mut rows = Vec::new();
    for (i, point) in points.iter().enumerate() {
        let batches = [Hypothesis::First, Hypothesis::Second].map(|h| {
            let counts = point.samplers[h.index()]
                .labels()
                .into_iter()
                .zip(totals[i][h.index()].iter().copied())
                .collect();
            TrialBatch::new(h, config.seed, counts)
        });
        let [b1, b2] = batches;
        let batches = [b1?, b2?];
        for h in [Hypothesis::First, Hypothesis::Second] {
            rows.push(make_row(config.strategy, point, &batches, h));
        }
    }
    Ok(SweepResult { rows })
}

fn make_row(
    strategy: Strategy,
    point: &Point,
    batches: &[TrialBatch; 2],
    h: Hypothesis,
) -> SweepRow {
    let batch = &batches[h.index()];
    let n = batch.n_trials() as f64;
    let err = error_rate(batch).ok();
    let confidence = match strategy {
        Strategy::UnambiguousUsd => None,
        _ => {
            let label = match h {
                Hypothesis::First => OutcomeLabel::Apd1,
                Hypothesis::Second => OutcomeLabel::Apd2,
            };
            estimate_confidence(&batches[0], &batches[1], label).ok()
        }
    };
    let headline = if strategy == Strategy::MaxConfidence {
        confidence
    } else {
        err
    };
    SweepRow {
        strategy,
        angle_deg: point.angle_deg,
        prepared: prepared_name(strategy, h).into(),
        n_trials: batch.n_trials(),
        n_apd0: batch.count(OutcomeLabel::Apd0),
        n_apd0p: batch.count(OutcomeLabel::Apd0Prime),
        n_apd1: batch.count(OutcomeLabel::Apd1),
        n_apd2: batch.count(OutcomeLabel::Apd2),
        frac_inconclusive: batch.inconclusive() as f64 / n,
        frac_apd1: batch.fraction(OutcomeLabel::Apd1),
        frac_apd2: batch.fraction(OutcomeLabel::Apd2),
        error_rate: err.map_or(f64::NAN, |e| e.value),
        ci_low: headline.map_or(f64::NAN, |e| e.ci_low),
        ci_high: headline.map_or(f64::NAN, |e| e.ci_high),
        analytic_q: point.analytic_q,
        analytic_c: point.analytic_c,
        analytic_helstrom: point.analytic_helstrom,
        batch: batch.clone(),
        expected: point.expected[h.index()].iter().collect(),
        confidence,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::states::rho0_from_input_polarization;
    use approx::assert_abs_diff_eq;

    const DEG: f64 = std::f64::consts::PI / 180.0;

    fn dist(pairs: &[(OutcomeLabel, f64)]) -> ClickDistribution {
        ClickDistribution::new(pairs.iter().copied().collect()).unwrap()
    }

    fn default_rho0() -> Rho0Params {
        rho0_from_input_polarization(0.54, 45.0 * DEG).unwrap()
    }

    fn usd_config(angles: Vec<f64>, n: u64, model: ImperfectionModel) -> SweepConfig {
        SweepConfig {
            strategy: Strategy::UnambiguousUsd,
            angles_deg: angles,
            source: Source::Rho0(default_rho0()),
            counting: Counting::Fixed(n),
            seed: 11,
            imperfection: model,
            workers: None,
        }
    }

    #[test]
    fn certain_outcome() {
        let b = sample_clicks(
            &dist(&[(OutcomeLabel::Apd1, 1.0)]),
            100,
            1,
            Hypothesis::First,
        )
        .unwrap();
        assert_eq!(b.count(OutcomeLabel::Apd1), 100);
    }

    #[test]
    fn fair_coin_concentrates() {
        let d = dist(&[(OutcomeLabel::Apd1, 0.5), (OutcomeLabel::Apd2, 0.5)]);
        let b = sample_clicks(&d, 1_000_000, 5, Hypothesis::First).unwrap();
        let dev = (b.count(OutcomeLabel::Apd1) as f64 - 500_000.0).abs();
        assert!(dev < 3.0 * (1e6f64 * 0.25).sqrt());
        assert_eq!(
            b.count(OutcomeLabel::Apd1) + b.count(OutcomeLabel::Apd2),
            1_000_000
        );
    }

    #[test]
    fn sampling_is_deterministic() {
        let d = dist(&[
            (OutcomeLabel::Apd0, 0.2),
            (OutcomeLabel::Apd1, 0.3),
            (OutcomeLabel::Apd2, 0.5),
        ]);
        let a = sample_clicks(&d, 5000, 42, Hypothesis::Second).unwrap();
        let b = sample_clicks(&d, 5000, 42, Hypothesis::Second).unwrap();
        assert_eq!(a, b);
        assert!(sample_clicks(&d, 0, 42, Hypothesis::Second).is_err());
    }

    #[test]
    fn zero_probability_outcome_is_never_drawn() {
        let d = dist(&[
            (OutcomeLabel::Apd0, 0.3),
            (OutcomeLabel::Apd1, 0.7),
            (OutcomeLabel::Apd2, 0.0),
        ]);
        for seed in 0..20 {
            let b = sample_clicks(&d, 10_000, seed, Hypothesis::First).unwrap();
            assert_eq!(b.count(OutcomeLabel::Apd2), 0);
        }
    }

    #[test]
    fn wilson_reference_value() {
        let (lo, hi) = wilson_interval(706, 1000, Z95);
        assert_abs_diff_eq!(lo, 0.677017, epsilon = 1e-6);
        assert_abs_diff_eq!(hi, 0.733406, epsilon = 1e-6);
    }

    fn batch(h: Hypothesis, counts: &[(OutcomeLabel, u64)]) -> TrialBatch {
        TrialBatch::new(h, 0, counts.iter().copied().collect()).unwrap()
    }

    #[test]
    fn confidence_estimator() {
        let b1 = batch(
            Hypothesis::First,
            &[(OutcomeLabel::Apd1, 706), (OutcomeLabel::Apd0, 294)],
        );
        let b2 = batch(
            Hypothesis::Second,
            &[(OutcomeLabel::Apd1, 294), (OutcomeLabel::Apd2, 706)],
        );
        let c = estimate_confidence(&b1, &b2, OutcomeLabel::Apd1).unwrap();
        assert_abs_diff_eq!(c.value, 0.706);
        assert_abs_diff_eq!(c.ci_low, 0.677017, epsilon = 1e-6);
        let all = batch(Hypothesis::Second, &[(OutcomeLabel::Apd2, 1000)]);
        assert_eq!(
            estimate_confidence(&b1, &all, OutcomeLabel::Apd1)
                .unwrap()
                .value,
            1.0
        );
        assert!(matches!(
            estimate_confidence(&b1, &all, OutcomeLabel::Apd0),
            Err(Error::UndefinedConfidence(_))
        ));
        let empty = batch(Hypothesis::Second, &[(OutcomeLabel::Apd0, 1000)]);
        let none = batch(Hypothesis::First, &[(OutcomeLabel::Apd0, 1000)]);
        assert!(matches!(
            estimate_confidence(&none, &empty, OutcomeLabel::Apd2),
            Err(Error::UndefinedEstimate(_))
        ));
        assert!(estimate_confidence(&b2, &b1, OutcomeLabel::Apd1).is_err());
    }

    #[test]
    fn error_rate_arithmetic() {
        let b = batch(
            Hypothesis::First,
            &[(OutcomeLabel::Apd1, 900), (OutcomeLabel::Apd2, 100)],
        );
        assert_abs_diff_eq!(error_rate(&b).unwrap().value, 0.1);
        let none = batch(Hypothesis::First, &[(OutcomeLabel::Apd0, 10)]);
        assert!(error_rate(&none).is_err());
    }

    #[test]
    fn ideal_mc_confidence() {
        let params = PartialPolarizationParams::new(0.54, 22.5 * DEG).unwrap();
        let batches = [Sign::Plus, Sign::Minus].map(|prepared| {
            let spec = NetworkSpec::Mc { params, prepared };
            let d = perturbed_distribution(&spec, &ImperfectionModel::ideal(), 0).unwrap();
            sample_clicks(
                &d,
                100_000,
                3 + spec.prepared().index() as u64,
                spec.prepared(),
            )
            .unwrap()
        });
        let c = estimate_confidence(&batches[0], &batches[1], OutcomeLabel::Apd1).unwrap();
        assert!(c.sigmas_from(0.7065708244) < 3.0, "{c:?}");
    }

    #[test]
    fn zero_imperfection_is_identity() {
        let params = PartialPolarizationParams::new(0.7, 30.0 * DEG).unwrap();
        let spec = NetworkSpec::Mc {
            params,
            prepared: Sign::Minus,
        };
        let (c, input) = spec.build().unwrap();
        let reference = crate::network::propagate(&c, &input).unwrap();
        let got = perturbed_distribution(&spec, &ImperfectionModel::ideal(), 9).unwrap();
        assert!(got.max_abs_diff(&reference) < 1e-15);
    }

    #[test]
    fn jitter_breaks_unambiguity_monotonically() {
        let mut leaks = Vec::new();
        for sigma in [0.0, 1.0, 2.0, 4.0] {
            let model = ImperfectionModel::new(BTreeMap::new(), sigma * DEG, 0.0).unwrap();
            let spec = NetworkSpec::Usd {
                alpha: 20.0 * DEG,
                prepared: Hypothesis::First,
                rho0: default_rho0(),
            };
            let mean: f64 = (0..1000)
                .map(|s| {
                    perturbed_distribution(&spec, &model, s)
                        .unwrap()
                        .get(OutcomeLabel::Apd2)
                })
                .sum::<f64>()
                / 1000.0;
            leaks.push(mean);
        }
        assert!(leaks[0] < 1e-15);
        assert!(leaks.windows(2).all(|w| w[1] > w[0]), "{leaks:?}");
    }

    #[test]
    fn heavy_misalignment_randomizes_conclusive_results() {
        let model = ImperfectionModel::new(BTreeMap::new(), 0.0, 0.99).unwrap();
        for prepared in [Hypothesis::First, Hypothesis::Second] {
            let spec = NetworkSpec::Usd {
                alpha: 30.0 * DEG,
                prepared,
                rho0: default_rho0(),
            };
            let d = perturbed_distribution(&spec, &model, 0).unwrap();
            let (a1, a2) = (d.get(OutcomeLabel::Apd1), d.get(OutcomeLabel::Apd2));
            let wrong = if prepared == Hypothesis::First {
                a2
            } else {
                a1
            };
            assert!((wrong / (a1 + a2) - 0.5).abs() < 0.01);
        }
    }

    #[test]
    fn imperfection_validation() {
        assert!(ImperfectionModel::new(BTreeMap::new(), -1.0, 0.0).is_err());
        assert!(ImperfectionModel::new(BTreeMap::new(), 0.0, 1.0).is_err());
        let offsets = [("HWP9".to_string(), 0.01)].into_iter().collect();
        let model = ImperfectionModel::new(offsets, 0.0, 0.0).unwrap();
        assert!(run_sweep(&usd_config(vec![20.0], 10, model)).is_err());
    }

    #[test]
    fn sweep_validation() {
        let mut c = usd_config(vec![20.0], 0, ImperfectionModel::ideal());
        assert!(run_sweep(&c).is_err());
        c.counting = Counting::Fixed(10);
        c.angles_deg = vec![50.0];
        assert!(run_sweep(&c).is_err());
        c.angles_deg = vec![20.0];
        c.source = Source::Polarized { p: 0.5 };
        assert!(run_sweep(&c).is_err());
        c.strategy = Strategy::MinError;
        c.imperfection = ImperfectionModel::new(BTreeMap::new(), 0.01, 0.0).unwrap();
        assert!(run_sweep(&c).is_err());
    }

    #[test]
    fn ideal_usd_sweep() {
        let angles: Vec<f64> = (1..=9).map(|k| 5.0 * k as f64).collect();
        let result = run_sweep(&usd_config(angles, 100_000, ImperfectionModel::ideal())).unwrap();
        assert_eq!(result.rows.len(), 18);
        for row in &result.rows {
            let q = (2.0 * row.angle_deg * DEG).cos();
            assert!(
                sigma_distance(row.frac_inconclusive, q, row.n_trials) < 3.0 || q.abs() < 1e-12
            );
            assert_eq!(row.error_rate, 0.0);
            assert!(row.within(4.0));
            assert_eq!(
                row.n_apd0 + row.n_apd0p + row.n_apd1 + row.n_apd2,
                row.n_trials
            );
        }
    }

    #[test]
    fn ideal_mc_sweep() {
        let config = SweepConfig {
            strategy: Strategy::MaxConfidence,
            angles_deg: (1..=9).map(|k| 5.0 * k as f64).collect(),
            source: Source::Polarized { p: 0.54 },
            counting: Counting::Fixed(100_000),
            seed: 7,
            imperfection: ImperfectionModel::ideal(),
            workers: Some(2),
        };
        let result = run_sweep(&config).unwrap();
        for row in &result.rows {
            let c = row.confidence.unwrap();
            assert!(c.sigmas_from(row.analytic_c) < 3.0);
            assert!(c.ci_low <= c.value && c.value <= c.ci_high);
            assert_eq!((row.ci_low, row.ci_high), (c.ci_low, c.ci_high));
        }
    }

    #[test]
    fn minerror_sweep_matches_helstrom() {
        let config = SweepConfig {
            strategy: Strategy::MinError,
            angles_deg: vec![10.0, 30.0],
            source: Source::Polarized { p: 0.8 },
            counting: Counting::Fixed(50_000),
            seed: 1,
            imperfection: ImperfectionModel::ideal(),
            workers: None,
        };
        for row in run_sweep(&config).unwrap().rows {
            assert_eq!(row.n_apd0, 0);
            assert!(sigma_distance(row.error_rate, row.analytic_helstrom, row.n_trials) < 4.0);
            assert!(row.within(4.0));
        }
    }

    #[test]
    fn sweep_is_independent_of_worker_count() {
        let model = ImperfectionModel::new(BTreeMap::new(), 2.0 * DEG, 0.0).unwrap();
        let mut config = usd_config(vec![10.0, 20.0], 20_000, model);
        let mut outputs = Vec::new();
        for w in [1, 3, 8] {
            config.workers = Some(w);
            outputs.push(run_sweep(&config).unwrap().to_csv_string().unwrap());
        }
        assert!(outputs.windows(2).all(|w| w[0] == w[1]));
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]

        #[test]
        fn sweep_rows_are_consistent(
            strategy in proptest::sample::select(vec![Strategy::MaxConfidence, Strategy::MinError, Strategy::UnambiguousUsd]),
            angle in 1.0f64..45.0,
            p in 0.05f64..1.0,
            n in 1u64..3000,
            seed: u64,
        ) {
            let source = match strategy {
                Strategy::UnambiguousUsd => Source::Rho0(rho0_from_input_polarization(p, 0.3).unwrap()),
                _ => Source::Polarized { p },
            };
            let config = SweepConfig {
                strategy,
                angles_deg: vec![angle],
                source,
                counting: Counting::Fixed(n),
                seed,
                imperfection: ImperfectionModel::ideal(),
                workers: Some(1),
            };
            let rows = run_sweep(&config).unwrap().rows;
            let rad = angle.to_radians();
            for row in &rows {
                proptest::prop_assert_eq!(row.n_apd0 + row.n_apd0p + row.n_apd1 + row.n_apd2, n);
                for f in [row.frac_inconclusive, row.frac_apd1, row.frac_apd2] {
                    proptest::prop_assert!((0.0..=1.0).contains(&f));
                }
                let headline = if strategy == Strategy::MaxConfidence {
                    row.confidence.map(|c| c.value)
                } else if row.error_rate.is_nan() {
                    None
                } else {
                    Some(row.error_rate)
                };
                if let Some(v) = headline {
                    proptest::prop_assert!(row.ci_low <= v && v <= row.ci_high);
                }
                match strategy {
                    Strategy::UnambiguousUsd => {
                        proptest::prop_assert!((row.analytic_q - usd_failure_prob(rad).unwrap()).abs() <= 1e-12);
                        proptest::prop_assert_eq!(row.analytic_c, 0.0);
                    }
                    _ => {
                        let params = PartialPolarizationParams::new(p, rad).unwrap();
                        let half = 0.5 * (1.0 - p * (2.0 * rad).sin());
                        proptest::prop_assert!((row.analytic_helstrom - half).abs() <= 1e-12);
                        let c = if strategy == Strategy::MaxConfidence {
                            max_confidence(params)
                        } else {
                            minerror_confidence(params)
                        };
                        proptest::prop_assert!((row.analytic_c - c).abs() <= 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn poisson_counting() {
        let mut config = usd_config(vec![20.0], 1, ImperfectionModel::ideal());
        config.counting = Counting::Poisson {
            rate: 2000.0,
            dwell: 5.0,
        };
        let rows = run_sweep(&config).unwrap().rows;
        assert_eq!(rows[0].n_trials, rows[1].n_trials);
        assert!((rows[0].n_trials as f64 - 10_000.0).abs() < 500.0);
    }
}
