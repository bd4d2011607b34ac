//! Closed-form posteriors for the categorical–Dirichlet models.
//!
//! These are exact conjugate updates, used as ground truth for the
//! variational objectives: the independent model (one Dirichlet per
//! observation), its tempered variant, and the covariate-indexed model that
//! pools labels sharing a discrete covariate value.

use std::collections::HashMap;
use std::hash::Hash;

use crate::dirichlet::{ConcentrationVector, ProbabilityVector};
use crate::error::{Error, Result};

/// Per-class label counts, possibly tempered (non-integral).
#[derive(Debug, Clone, PartialEq)]
pub struct LabelCounts(Vec<f64>);

impl LabelCounts {
    pub fn zeros(k: usize) -> Self {
        Self(vec![0.0; k])
    }

    pub fn new(counts: Vec<f64>) -> Result<Self> {
        if counts.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "label counts must be finite and non-negative: {counts:?}"
            )));
        }
        Ok(Self(counts))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// S = Σₖ c(k).
    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// Discrete covariates paired with zero-based class labels.
#[derive(Debug, Clone)]
pub struct DiscreteDataset<K> {
    covariates: Vec<K>,
    labels: Vec<usize>,
}

impl<K> DiscreteDataset<K> {
    pub fn new(covariates: Vec<K>, labels: Vec<usize>) -> Result<Self> {
        if covariates.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: covariates.len(),
                found: labels.len(),
            });
        }
        Ok(Self { covariates, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn check_temperature(nu: f64) -> Result<()> {
    if nu.is_finite() && nu > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {nu}"
        )))
    }
}

/// Posterior Dir(α + ν e_y) of one observation under the (tempered)
/// independent model. ν = 1 is the untempered update.
pub fn icd_posterior(
    alpha: &ConcentrationVector,
    y: usize,
    nu: f64,
) -> Result<ConcentrationVector> {
    check_temperature(nu)?;
    if y >= alpha.len() {
        return Err(Error::IndexOutOfRange {
            index: y,
            len: alpha.len(),
        });
    }
    let mut values = alpha.as_slice().to_vec();
    values[y] += nu;
    ConcentrationVector::new(values)
}

/// Posterior predictive of the independent model: Cat(α/α₀) whatever was
/// observed.
pub fn icd_predictive(alpha: &ConcentrationVector) -> ProbabilityVector {
    alpha.mean()
}

/// Label count vector per distinct covariate value.
pub fn cicd_posterior_counts<K>(
    data: &DiscreteDataset<K>,
    k: usize,
) -> Result<HashMap<K, LabelCounts>>
where
    K: Eq + Hash + Clone,
{
    if data.is_empty() {
        return Err(Error::Empty("covariate-indexed dataset"));
    }
    let mut counts: HashMap<K, LabelCounts> = HashMap::new();
    for (key, &label) in data.covariates.iter().zip(&data.labels) {
        if label >= k {
            return Err(Error::IndexOutOfRange {
                index: label,
                len: k,
            });
        }
        counts
            .entry(key.clone())
            .or_insert_with(|| LabelCounts::zeros(k))
            .0[label] += 1.0;
    }
    Ok(counts)
}

/// Cat((α + c_x)/(α₀ + S_x)), with c_x = 0 for keys never observed.
pub fn cicd_predictive<K>(
    alpha: &ConcentrationVector,
    counts: &HashMap<K, LabelCounts>,
    query: &K,
) -> Result<ProbabilityVector>
where
    K: Eq + Hash,
{
    match counts.get(query) {
        None => Ok(alpha.mean()),
        Some(c) => {
            if c.0.len() != alpha.len() {
                return Err(Error::DimensionMismatch {
                    expected: alpha.len(),
                    found: c.0.len(),
                });
            }
            let denom = alpha.total() + c.total();
            ProbabilityVector::new(
                alpha
                    .as_slice()
                    .iter()
                    .zip(&c.0)
                    .map(|(a, n)| (a + n) / denom)
                    .collect(),
            )
        }
    }
}

/// Posterior Dir(α + c_j) at one covariate value.
pub fn cicd_posterior(
    alpha: &ConcentrationVector,
    counts: &LabelCounts,
) -> Result<ConcentrationVector> {
    if counts.0.len() != alpha.len() {
        return Err(Error::DimensionMismatch {
            expected: alpha.len(),
            found: counts.0.len(),
        });
    }
    ConcentrationVector::new(
        alpha
            .as_slice()
            .iter()
            .zip(&counts.0)
            .map(|(a, c)| a + c)
            .collect(),
    )
}

/// The factorized joint posterior: one Dir(α + ν e_{Yᵢ}) per label.
pub fn tempered_posterior_joint(
    alpha: &ConcentrationVector,
    labels: &[usize],
    nu: f64,
) -> Result<Vec<ConcentrationVector>> {
    if labels.is_empty() {
        return Err(Error::Empty("label sequence"));
    }
    labels
        .iter()
        .map(|&y| icd_posterior(alpha, y, nu))
        .collect()
}
