//! Dirichlet distribution mathematics.
//!
//! [`ConcentrationVector`] is the currency passed between the conjugate
//! oracles, the objectives and the DIP head. All closed forms below take
//! already-validated vectors, so they cannot hit the special-function
//! domain errors.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::special::{digamma_pos, ln_gamma_pos};

/// Smallest accepted concentration entry.
pub const MIN_CONCENTRATION: f64 = 1e-12;

/// Tolerance on the sum of a [`ProbabilityVector`].
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// Positive concentration parameters of a Dirichlet distribution, K ≥ 2.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationVector(Vec<f64>);

impl ConcentrationVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidConcentration(format!(
                "need at least 2 classes, got {}",
                values.len()
            )));
        }
        if let Some((k, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < MIN_CONCENTRATION)
        {
            return Err(Error::InvalidConcentration(format!(
                "entry {k} = {v} is not a finite value >= {MIN_CONCENTRATION}"
            )));
        }
        Ok(Self(values))
    }

    /// The symmetric vector `[value; k]`.
    pub fn uniform(k: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; k])
    }

    pub fn ones(k: usize) -> Result<Self> {
        Self::uniform(k, 1.0)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// β₀ = Σₖ β(k).
    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    fn check_index(&self, k: usize) -> Result<()> {
        if k < self.len() {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange {
                index: k,
                len: self.len(),
            })
        }
    }

    /// ln B(β) = Σₖ ln Γ(β(k)) − ln Γ(β₀).
    pub fn ln_beta(&self) -> f64 {
        self.0.iter().map(|&b| ln_gamma_pos(b)).sum::<f64>() - ln_gamma_pos(self.total())
    }

    /// E[ln pₖ] = ψ(β(k)) − ψ(β₀). `k` is zero-based.
    pub fn expected_ln_prob(&self, k: usize) -> Result<f64> {
        self.check_index(k)?;
        Ok(digamma_pos(self.0[k]) - digamma_pos(self.total()))
    }

    /// E[p] = β / β₀.
    pub fn mean(&self) -> ProbabilityVector {
        let total = self.total();
        ProbabilityVector(self.0.iter().map(|b| b / total).collect())
    }

    /// Var[pₖ] = mₖ(1 − mₖ) / (β₀ + 1).
    pub fn variance(&self, k: usize) -> Result<f64> {
        self.check_index(k)?;
        let total = self.total();
        let m = self.0[k] / total;
        Ok(m * (1.0 - m) / (total + 1.0))
    }

    /// u = K / β₀.
    pub fn vacuity(&self) -> f64 {
        self.len() as f64 / self.total()
    }

    /// KL(Dir(self) ‖ Dir(other)).
    pub fn kl_divergence(&self, other: &ConcentrationVector) -> Result<f64> {
        dirichlet_kl(self, other)
    }

    /// `count` independent draws, bit-identical for a fixed seed.
    pub fn sample(&self, count: usize, seed: RandomSeed) -> Result<Vec<ProbabilityVector>> {
        let logs = self.sample_ln(count, seed)?;
        Ok(logs
            .into_iter()
            .map(|ln_p| ProbabilityVector(ln_p.into_iter().map(f64::exp).collect()))
            .collect())
    }

    /// Like [`sample`](Self::sample) but returns ln p for every coordinate.
    ///
    /// Working in log space keeps draws with tiny concentrations usable: a
    /// coordinate may round to zero in linear space while its log stays finite.
    pub fn sample_ln(&self, count: usize, seed: RandomSeed) -> Result<Vec<Vec<f64>>> {
        if count == 0 {
            return Err(Error::Empty("dirichlet sample count"));
        }
        let mut rng = seed.rng();
        let mut out = Vec::with_capacity(count);
        let mut logs = vec![0.0; self.len()];
        for _ in 0..count {
            for (slot, &shape) in logs.iter_mut().zip(&self.0) {
                *slot = ln_gamma_variate(&mut rng, shape);
            }
            let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let log_norm = max + logs.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
            out.push(logs.iter().map(|l| l - log_norm).collect());
        }
        Ok(out)
    }
}

/// Free-function form of [`ConcentrationVector::ln_beta`].
pub fn log_multivariate_beta(beta: &ConcentrationVector) -> f64 {
    beta.ln_beta()
}

/// Closed-form KL(Dir(from) ‖ Dir(to)).
///
/// ln B(to) − ln B(from) + Σₖ (fromₖ − toₖ)(ψ(fromₖ) − ψ(from₀))
pub fn dirichlet_kl(from: &ConcentrationVector, to: &ConcentrationVector) -> Result<f64> {
    if from.len() != to.len() {
        return Err(Error::DimensionMismatch {
            expected: from.len(),
            found: to.len(),
        });
    }
    let psi_total = digamma_pos(from.total());
    let cross: f64 = from
        .0
        .iter()
        .zip(&to.0)
        .map(|(&f, &t)| (f - t) * (digamma_pos(f) - psi_total))
        .sum();
    Ok(to.ln_beta() - from.ln_beta() + cross)
}

/// Draws ln G for G ~ Gamma(shape, 1).
///
/// Marsaglia–Tsang squeeze for shape ≥ 1; for shape < 1 the draw is boosted
/// to shape + 1 and scaled by U^(1/shape), applied in log space.
fn ln_gamma_variate<R: Rng + ?Sized>(rng: &mut R, shape: f64) -> f64 {
    if shape < 1.0 {
        let u: f64 = open_unit(rng);
        return ln_gamma_variate(rng, shape + 1.0) + u.ln() / shape;
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let z: f64 = rng.sample(StandardNormal);
        let v = 1.0 + c * z;
        if v <= 0.0 {
            continue;
        }
        let v3 = v * v * v;
        let u: f64 = open_unit(rng);
        let z2 = z * z;
        if u < 1.0 - 0.0331 * z2 * z2 || u.ln() < 0.5 * z2 + d * (1.0 - v3 + v3.ln()) {
            return d.ln() + v3.ln();
        }
    }
}

fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidProbability("no entries".into()));
        }
        if let Some((k, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(Error::InvalidProbability(format!(
                "entry {k} = {v} is outside [0, 1]"
            )));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::InvalidProbability(format!("entries sum to {sum}")));
        }
        Ok(Self(values))
    }

    pub fn uniform(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidProbability("no entries".into()));
        }
        Ok(Self(vec![1.0 / k as f64; k]))
    }

    /// The vertex e_k of a K-class simplex.
    pub fn one_hot(k: usize, classes: usize) -> Result<Self> {
        if k >= classes {
            return Err(Error::IndexOutOfRange {
                index: k,
                len: classes,
            });
        }
        let mut values = vec![0.0; classes];
        values[k] = 1.0;
        Ok(Self(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Index of the largest entry; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (k, &v) in self.0.iter().enumerate().skip(1) {
            if v > self.0[best] {
                best = k;
            }
        }
        best
    }

    pub fn max(&self) -> f64 {
        self.0[self.argmax()]
    }
}

/// Seed for every stochastic routine in the crate.
///
/// Streams come from ChaCha8 (a counter-based generator with 64-bit seeding
/// through `seed_from_u64`), so a seed reproduces the same draws on every
/// platform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct RandomSeed(pub u64);

impl RandomSeed {
    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }

    /// Derives an independent seed for a named sub-stream.
    pub fn derive(self, stream: u64) -> RandomSeed {
        // splitmix64 finalizer over the combined value
        let mut z = self.0 ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        RandomSeed(z ^ (z >> 31))
    }
}
