//! The density-informed posterior Dir(α + n · DE(x) · NN(x)).
//!
//! `n` is the training-set size, `DE(x)` the z-scored density scale and
//! `NN(x)` the class probabilities of a classifier. Each factor can be
//! switched off for ablations, in which case it is replaced by its neutral
//! value: n → 1, DE → 1, NN → uniform.

use std::str::FromStr;

use crate::density::{density_scale, DensityModel, LogLikelihoodNormalizer};
use crate::dirichlet::{ConcentrationVector, ProbabilityVector};
use crate::error::{Error, Result};
use crate::mlp::{HeadKind, Mlp};

pub const DEFAULT_EVIDENCE_CLAMP: f64 = 1e12;
pub const DEFAULT_DENSITY_CLAMP: f64 = 30.0;

#[derive(Debug, Clone, PartialEq)]
pub struct DipConfig {
    pub alpha: ConcentrationVector,
    pub n_train: usize,
    pub use_n: bool,
    pub use_de: bool,
    pub use_nn: bool,
    pub evidence_clamp: f64,
}

impl DipConfig {
    /// All factors enabled, evidence clamp 1e12.
    pub fn new(alpha: ConcentrationVector, n_train: usize) -> Result<Self> {
        let config = Self {
            alpha,
            n_train,
            use_n: true,
            use_de: true,
            use_nn: true,
            evidence_clamp: DEFAULT_EVIDENCE_CLAMP,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn with_toggles(mut self, use_n: bool, use_de: bool, use_nn: bool) -> Self {
        self.use_n = use_n;
        self.use_de = use_de;
        self.use_nn = use_nn;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 {
            return Err(Error::InvalidArgument("n_train must be at least 1".into()));
        }
        if !(self.evidence_clamp.is_finite() && self.evidence_clamp > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "evidence clamp must be positive, got {}",
                self.evidence_clamp
            )));
        }
        Ok(())
    }
}

/// α(k) + clip(n · DE · NN(k), 0, clamp) after applying the ablation toggles.
pub fn dip_concentration(
    config: &DipConfig,
    density: f64,
    class_probs: &ProbabilityVector,
) -> Result<ConcentrationVector> {
    config.validate()?;
    let k = config.alpha.len();
    if class_probs.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: class_probs.len(),
        });
    }
    if density.is_nan() || density < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "density scale must be non-negative, got {density}"
        )));
    }
    let n = if config.use_n {
        config.n_train as f64
    } else {
        1.0
    };
    let de = if config.use_de { density } else { 1.0 };
    let uniform = 1.0 / k as f64;
    let mut values = Vec::with_capacity(k);
    for (a, &p) in config.alpha.as_slice().iter().zip(class_probs.as_slice()) {
        let nn = if config.use_nn { p } else { uniform };
        let evidence = n * de * nn;
        if !evidence.is_finite() {
            let factor = if !de.is_finite() {
                "density scale"
            } else if !n.is_finite() {
                "training-set size"
            } else {
                "product of training-set size and density scale"
            };
            return Err(Error::NonFinite(format!(
                "evidence (offending factor: {factor}, value {de})"
            )));
        }
        values.push(a + evidence.clamp(0.0, config.evidence_clamp));
    }
    ConcentrationVector::new(values)
}

/// Posterior summary at one input.
#[derive(Debug, Clone, PartialEq)]
pub struct DipPosterior {
    pub concentration: ConcentrationVector,
    pub predictive: ProbabilityVector,
    /// K / β₀.
    pub vacuity: f64,
    /// β₀ − α₀.
    pub total_evidence: f64,
}

impl DipPosterior {
    pub fn from_concentration(concentration: ConcentrationVector, prior_total: f64) -> Self {
        Self {
            predictive: concentration.mean(),
            vacuity: concentration.vacuity(),
            total_evidence: concentration.total() - prior_total,
            concentration,
        }
    }

    /// argmax of the predictive, ties to the lowest index.
    pub fn label(&self) -> usize {
        self.predictive.argmax()
    }
}

pub fn dip_predict(
    config: &DipConfig,
    density: f64,
    class_probs: &ProbabilityVector,
) -> Result<DipPosterior> {
    let beta = dip_concentration(config, density, class_probs)?;
    let mut posterior = DipPosterior::from_concentration(beta, config.alpha.total());
    // Without clipping the total evidence is exactly n·DE because the class
    // probabilities sum to one. Summing the K products instead leaves
    // rounding noise that breaks ties between inputs of equal density.
    let n = if config.use_n {
        config.n_train as f64
    } else {
        1.0
    };
    let de = if config.use_de { density } else { 1.0 };
    let max_share = if config.use_nn {
        class_probs.max()
    } else {
        1.0 / config.alpha.len() as f64
    };
    if n * de * max_share <= config.evidence_clamp {
        posterior.total_evidence = n * de;
        posterior.vacuity = config.alpha.len() as f64 / (config.alpha.total() + n * de);
    }
    Ok(posterior)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UncertaintyKind {
    #[default]
    Vacuity,
    MaxProb,
    TotalEvidence,
}

impl UncertaintyKind {
    /// Whether larger raw values indicate out-of-distribution inputs.
    pub fn ood_increasing(self) -> bool {
        matches!(self, UncertaintyKind::Vacuity)
    }
}

impl FromStr for UncertaintyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vacuity" => Ok(UncertaintyKind::Vacuity),
            "max_prob" => Ok(UncertaintyKind::MaxProb),
            "total_evidence" => Ok(UncertaintyKind::TotalEvidence),
            other => Err(Error::InvalidArgument(format!(
                "unknown uncertainty score `{other}`"
            ))),
        }
    }
}

/// The raw score; see [`UncertaintyKind::ood_increasing`] for its orientation.
pub fn uncertainty_score(posterior: &DipPosterior, kind: UncertaintyKind) -> f64 {
    match kind {
        UncertaintyKind::Vacuity => posterior.vacuity,
        UncertaintyKind::MaxProb => posterior.predictive.max(),
        UncertaintyKind::TotalEvidence => posterior.total_evidence,
    }
}

/// Score oriented so that larger means more likely out-of-distribution.
pub fn ood_score(posterior: &DipPosterior, kind: UncertaintyKind) -> f64 {
    let raw = uncertainty_score(posterior, kind);
    if kind.ood_increasing() {
        raw
    } else {
        -raw
    }
}

/// Classifier, density estimator and normaliser assembled into one predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct DipModel {
    pub classifier: Mlp,
    pub density: DensityModel,
    pub normalizer: LogLikelihoodNormalizer,
    pub config: DipConfig,
    pub density_clamp: f64,
}

/// Per-input output of [`DipModel::predict`].
#[derive(Debug, Clone, PartialEq)]
pub struct DipPrediction {
    pub posterior: DipPosterior,
    pub log_density: f64,
    pub density_scale: f64,
}

impl DipModel {
    pub fn new(
        classifier: Mlp,
        density: DensityModel,
        normalizer: LogLikelihoodNormalizer,
        config: DipConfig,
        density_clamp: f64,
    ) -> Result<Self> {
        config.validate()?;
        if classifier.head() != HeadKind::Probability {
            return Err(Error::InvalidArgument(
                "the DIP classifier needs a probability head".into(),
            ));
        }
        if classifier.output_dim() != config.alpha.len() {
            return Err(Error::DimensionMismatch {
                expected: config.alpha.len(),
                found: classifier.output_dim(),
            });
        }
        if classifier.input_dim() != density.dim() {
            return Err(Error::DimensionMismatch {
                expected: classifier.input_dim(),
                found: density.dim(),
            });
        }
        if !(density_clamp.is_finite() && density_clamp > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "density clamp must be positive, got {density_clamp}"
            )));
        }
        Ok(Self {
            classifier,
            density,
            normalizer,
            config,
            density_clamp,
        })
    }

    pub fn predict(&self, x: &[f64]) -> Result<DipPrediction> {
        let probs = ProbabilityVector::new(self.classifier.forward(x)?)?;
        let log_density = self.density.log_density(x)?;
        let scale = density_scale(&self.normalizer, log_density, self.density_clamp);
        Ok(DipPrediction {
            posterior: dip_predict(&self.config, scale, &probs)?,
            log_density,
            density_scale: scale,
        })
    }
}

/// The plain EDL posterior Dir(α + NN(x)) of an evidence-head network.
pub fn edl_posterior(
    network: &Mlp,
    alpha: &ConcentrationVector,
    x: &[f64],
) -> Result<DipPosterior> {
    if !matches!(network.head(), HeadKind::Evidence(_)) {
        return Err(Error::InvalidArgument(
            "EDL prediction needs an evidence head".into(),
        ));
    }
    let evidence = network.forward(x)?;
    if evidence.len() != alpha.len() {
        return Err(Error::DimensionMismatch {
            expected: alpha.len(),
            found: evidence.len(),
        });
    }
    let beta = ConcentrationVector::new(
        alpha
            .as_slice()
            .iter()
            .zip(&evidence)
            .map(|(a, e)| a + e)
            .collect(),
    )?;
    Ok(DipPosterior::from_concentration(beta, alpha.total()))
}
