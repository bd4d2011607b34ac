//! Run configuration: flat `key=value` lines with `#` comments.
//!
//! Later assignments override earlier ones, so command-line overrides are
//! applied after the file. Unknown keys are rejected.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::density::BandwidthRule;
use crate::dip::{UncertaintyKind, DEFAULT_DENSITY_CLAMP, DEFAULT_EVIDENCE_CLAMP};
use crate::dirichlet::ConcentrationVector;
use crate::error::{Error, Result};
use crate::mlp::EvidenceActivation;
use crate::objective::EdlLossConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Cross-entropy classifier plus a separately fitted density.
    Dip,
    /// Evidence-head network trained with the EDL loss.
    Edl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Blobs,
    Moons,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DensityKind {
    Gda,
    Kde,
    Gmm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub dataset: DatasetKind,
    pub classes: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub n_ood: usize,
    pub blob_radius: f64,
    pub blob_sigma: f64,
    pub moons_noise: f64,
    pub ood_shift: Vec<f64>,
    pub ood_scale: f64,
    pub hidden: Vec<usize>,
    alpha_values: Vec<f64>,
    pub lambda: f64,
    pub nu: f64,
    pub anneal_epochs: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub evidence_activation: EvidenceActivation,
    pub density: DensityKind,
    pub kde_bandwidth: BandwidthRule,
    pub gmm_components: Option<usize>,
    pub gmm_tol: f64,
    pub gmm_max_iter: usize,
    pub use_n: bool,
    pub use_de: bool,
    pub use_nn: bool,
    pub evidence_clamp: f64,
    pub density_clamp: f64,
    pub score: UncertaintyKind,
    pub seed: u64,
    pub out: PathBuf,
}

pub const KEYS: &[&str] = &[
    "mode",
    "dataset",
    "classes",
    "n_train",
    "n_test",
    "n_ood",
    "blob_radius",
    "blob_sigma",
    "moons_noise",
    "ood_shift",
    "ood_scale",
    "hidden",
    "alpha",
    "lambda",
    "nu",
    "anneal_epochs",
    "epochs",
    "batch_size",
    "lr",
    "evidence_activation",
    "density",
    "kde_bandwidth",
    "gmm_components",
    "gmm_tol",
    "gmm_max_iter",
    "use_n",
    "use_de",
    "use_nn",
    "evidence_clamp",
    "density_clamp",
    "score",
    "seed",
    "out",
];

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Dip,
            dataset: DatasetKind::Blobs,
            classes: 10,
            n_train: 2000,
            n_test: 1000,
            n_ood: 1000,
            blob_radius: 10.0,
            blob_sigma: 1.0,
            moons_noise: 0.1,
            ood_shift: vec![40.0, 40.0],
            ood_scale: 1.0,
            hidden: vec![64, 64],
            alpha_values: vec![1.0],
            lambda: 1.0,
            nu: 1.0,
            anneal_epochs: 10,
            epochs: 200,
            batch_size: 128,
            lr: 1e-3,
            evidence_activation: EvidenceActivation::Softplus,
            density: DensityKind::Gda,
            kde_bandwidth: BandwidthRule::Scott,
            gmm_components: None,
            gmm_tol: 1e-6,
            gmm_max_iter: 200,
            use_n: true,
            use_de: true,
            use_nn: true,
            evidence_clamp: DEFAULT_EVIDENCE_CLAMP,
            density_clamp: DEFAULT_DENSITY_CLAMP,
            score: UncertaintyKind::Vacuity,
            seed: 0,
            out: PathBuf::from("out"),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str, expected: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(key, format!("expected {expected}, got `{value}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str, expected: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|part| parse_value(key, part.trim(), expected))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::config(
            key,
            format!("expected a boolean, got `{value}`"),
        )),
    }
}

fn positive(key: &str, v: f64) -> Result<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Error::config(
            key,
            format!("must be positive and finite, got {v}"),
        ))
    }
}

/// Splits config text into `(key, value, line)` triples.
pub fn parse_assignments(text: &str, source_name: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::parse(
                source_name,
                i + 1,
                format!("expected `key=value`, got `{line}`"),
            )
        })?;
        out.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(out)
}

impl RunConfig {
    /// Reads an optional file, then applies `overrides` (each `key=value`).
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut pairs = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                parse_assignments(&text, &p.display().to_string())?
            }
            None => Vec::new(),
        };
        for item in overrides {
            let (k, v) = item.split_once('=').ok_or_else(|| {
                Error::config(item.as_str(), "override must have the form key=value")
            })?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        Self::from_pairs(&pairs)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_pairs(&parse_assignments(text, "config")?)
    }

    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let mut c = Self::default();
        let mut lambda = None;
        let mut nu = None;
        for (key, value) in pairs {
            let (k, v) = (key.as_str(), value.as_str());
            match k {
                "mode" => {
                    c.mode = match v {
                        "dip" => Mode::Dip,
                        "edl" => Mode::Edl,
                        _ => {
                            return Err(Error::config(k, format!("expected dip or edl, got `{v}`")))
                        }
                    }
                }
                "dataset" => {
                    c.dataset = match v {
                        "blobs" => DatasetKind::Blobs,
                        "moons" => DatasetKind::Moons,
                        _ => {
                            return Err(Error::config(
                                k,
                                format!("expected blobs or moons, got `{v}`"),
                            ))
                        }
                    }
                }
                "classes" => c.classes = parse_value(k, v, "an integer")?,
                "n_train" => c.n_train = parse_value(k, v, "an integer")?,
                "n_test" => c.n_test = parse_value(k, v, "an integer")?,
                "n_ood" => c.n_ood = parse_value(k, v, "an integer")?,
                "blob_radius" => c.blob_radius = positive(k, parse_value(k, v, "a real")?)?,
                "blob_sigma" => c.blob_sigma = positive(k, parse_value(k, v, "a real")?)?,
                "moons_noise" => c.moons_noise = parse_value(k, v, "a real")?,
                "ood_shift" => c.ood_shift = parse_list(k, v, "comma-separated reals")?,
                "ood_scale" => c.ood_scale = positive(k, parse_value(k, v, "a real")?)?,
                "hidden" => {
                    c.hidden = if v.is_empty() {
                        Vec::new()
                    } else {
                        parse_list(k, v, "comma-separated integers")?
                    }
                }
                "alpha" => c.alpha_values = parse_list(k, v, "a real or comma-separated reals")?,
                "lambda" => lambda = Some(parse_value::<f64>(k, v, "a real")?),
                "nu" => nu = Some(parse_value::<f64>(k, v, "a real")?),
                "anneal_epochs" => c.anneal_epochs = parse_value(k, v, "a non-negative integer")?,
                "epochs" => c.epochs = parse_value(k, v, "an integer")?,
                "batch_size" => c.batch_size = parse_value(k, v, "an integer")?,
                "lr" => c.lr = positive(k, parse_value(k, v, "a real")?)?,
                "evidence_activation" => {
                    c.evidence_activation = v.parse().map_err(|_| {
                        Error::config(k, format!("expected softplus or exp, got `{v}`"))
                    })?
                }
                "density" => {
                    c.density = match v {
                        "gda" => DensityKind::Gda,
                        "kde" => DensityKind::Kde,
                        "gmm" => DensityKind::Gmm,
                        _ => {
                            return Err(Error::config(
                                k,
                                format!("expected gda, kde or gmm, got `{v}`"),
                            ))
                        }
                    }
                }
                "kde_bandwidth" => {
                    c.kde_bandwidth = if v == "scott" {
                        BandwidthRule::Scott
                    } else {
                        BandwidthRule::Fixed(positive(
                            k,
                            parse_value(k, v, "`scott` or a positive real")?,
                        )?)
                    }
                }
                "gmm_components" => c.gmm_components = Some(parse_value(k, v, "an integer")?),
                "gmm_tol" => c.gmm_tol = positive(k, parse_value(k, v, "a real")?)?,
                "gmm_max_iter" => c.gmm_max_iter = parse_value(k, v, "an integer")?,
                "use_n" => c.use_n = parse_bool(k, v)?,
                "use_de" => c.use_de = parse_bool(k, v)?,
                "use_nn" => c.use_nn = parse_bool(k, v)?,
                "evidence_clamp" => c.evidence_clamp = positive(k, parse_value(k, v, "a real")?)?,
                "density_clamp" => c.density_clamp = positive(k, parse_value(k, v, "a real")?)?,
                "score" => {
                    c.score = v.parse().map_err(|_| {
                        Error::config(
                            k,
                            format!("expected vacuity, max_prob or total_evidence, got `{v}`"),
                        )
                    })?
                }
                "seed" => c.seed = parse_value(k, v, "an unsigned integer")?,
                "out" => c.out = PathBuf::from(v),
                _ => return Err(Error::config(k, "unknown key")),
            }
        }
        let alpha = c.alpha()?;
        let resolved = EdlLossConfig::new(alpha, lambda, nu, c.anneal_epochs)?;
        c.lambda = resolved.lambda;
        c.nu = resolved.nu;
        c.validate()?;
        Ok(c)
    }

    fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::config("classes", "need at least 2 classes"));
        }
        if self.dataset == DatasetKind::Moons && self.classes != 2 {
            return Err(Error::config(
                "classes",
                "the moons dataset has exactly 2 classes",
            ));
        }
        if self.dataset == DatasetKind::Blobs
            && (self.n_train == 0 || !self.n_train.is_multiple_of(self.classes))
        {
            return Err(Error::config(
                "n_train",
                format!("must be a positive multiple of classes ({})", self.classes),
            ));
        }
        if self.dataset == DatasetKind::Blobs
            && (self.n_test == 0 || !self.n_test.is_multiple_of(self.classes))
        {
            return Err(Error::config(
                "n_test",
                format!("must be a positive multiple of classes ({})", self.classes),
            ));
        }
        if self.n_train < 2 {
            return Err(Error::config("n_train", "need at least 2 training samples"));
        }
        if self.n_test < 2 {
            return Err(Error::config("n_test", "need at least 2 test samples"));
        }
        if self.n_ood == 0 {
            return Err(Error::config("n_ood", "must be at least 1"));
        }
        if self.ood_shift.len() != 2 {
            return Err(Error::config(
                "ood_shift",
                "generated datasets are 2-D; give two components",
            ));
        }
        if !(self.moons_noise.is_finite() && self.moons_noise >= 0.0) {
            return Err(Error::config("moons_noise", "must be non-negative"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("hidden", "layer widths must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.alpha_values.len() != 1 && self.alpha_values.len() != self.classes {
            return Err(Error::config(
                "alpha",
                format!(
                    "give one value or {} values, got {}",
                    self.classes,
                    self.alpha_values.len()
                ),
            ));
        }
        if self.gmm_components == Some(0) {
            return Err(Error::config("gmm_components", "must be at least 1"));
        }
        Ok(())
    }

    /// The prior, expanding a scalar to all classes.
    pub fn alpha(&self) -> Result<ConcentrationVector> {
        let values = if self.alpha_values.len() == 1 {
            vec![self.alpha_values[0]; self.classes]
        } else {
            self.alpha_values.clone()
        };
        ConcentrationVector::new(values).map_err(|e| Error::config("alpha", e.to_string()))
    }

    pub fn gmm_components(&self) -> usize {
        self.gmm_components.unwrap_or(self.classes)
    }

    /// Every key with its resolved value, one per line.
    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        put(
            "mode",
            match self.mode {
                Mode::Dip => "dip",
                Mode::Edl => "edl",
            }
            .into(),
        );
        put(
            "dataset",
            match self.dataset {
                DatasetKind::Blobs => "blobs",
                DatasetKind::Moons => "moons",
            }
            .into(),
        );
        put("classes", self.classes.to_string());
        put("n_train", self.n_train.to_string());
        put("n_test", self.n_test.to_string());
        put("n_ood", self.n_ood.to_string());
        put("blob_radius", self.blob_radius.to_string());
        put("blob_sigma", self.blob_sigma.to_string());
        put("moons_noise", self.moons_noise.to_string());
        put("ood_shift", join(&self.ood_shift));
        put("ood_scale", self.ood_scale.to_string());
        put(
            "hidden",
            self.hidden
                .iter()
                .map(|h| h.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        put("alpha", join(&self.alpha_values));
        put("lambda", self.lambda.to_string());
        put("nu", self.nu.to_string());
        put("anneal_epochs", self.anneal_epochs.to_string());
        put("epochs", self.epochs.to_string());
        put("batch_size", self.batch_size.to_string());
        put("lr", self.lr.to_string());
        put(
            "evidence_activation",
            match self.evidence_activation {
                EvidenceActivation::Softplus => "softplus",
                EvidenceActivation::Exp => "exp",
            }
            .into(),
        );
        put(
            "density",
            match self.density {
                DensityKind::Gda => "gda",
                DensityKind::Kde => "kde",
                DensityKind::Gmm => "gmm",
            }
            .into(),
        );
        put(
            "kde_bandwidth",
            match self.kde_bandwidth {
                BandwidthRule::Scott => "scott".into(),
                BandwidthRule::Fixed(h) => h.to_string(),
            },
        );
        if let Some(m) = self.gmm_components {
            put("gmm_components", m.to_string());
        }
        put("gmm_tol", self.gmm_tol.to_string());
        put("gmm_max_iter", self.gmm_max_iter.to_string());
        put("use_n", self.use_n.to_string());
        put("use_de", self.use_de.to_string());
        put("use_nn", self.use_nn.to_string());
        put("evidence_clamp", self.evidence_clamp.to_string());
        put("density_clamp", self.density_clamp.to_string());
        put(
            "score",
            match self.score {
                UncertaintyKind::Vacuity => "vacuity",
                UncertaintyKind::MaxProb => "max_prob",
                UncertaintyKind::TotalEvidence => "total_evidence",
            }
            .into(),
        );
        put("seed", self.seed.to_string());
        put("out", self.out.display().to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_alone_sets_nu() {
        let c = RunConfig::parse("lambda=0.5").unwrap();
        assert_eq!(c.nu, 2.0);
        let c = RunConfig::parse("nu = 4 # tempered").unwrap();
        assert_eq!(c.lambda, 0.25);
    }

    #[test]
    fn contract_violation_is_rejected() {
        match RunConfig::parse("lambda=0.5\nnu=3") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "lambda"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_and_mistyped_keys() {
        match RunConfig::parse("learning_rate=0.1") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "learning_rate"),
            other => panic!("unexpected {other:?}"),
        }
        match RunConfig::parse("epochs=many") {
            Err(Error::Config { key, message }) => {
                assert_eq!(key, "epochs");
                assert!(message.contains("integer"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(RunConfig::parse("just words").is_err());
    }

    #[test]
    fn overrides_take_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(
            &path,
            "# base\nepochs=5\nclasses=4\nn_train=400\nn_test=40\n",
        )
        .unwrap();
        let c = RunConfig::load(Some(&path), &["epochs=7".into()]).unwrap();
        assert_eq!((c.epochs, c.classes), (7, 4));
        let empty = dir.path().join("empty.cfg");
        std::fs::write(&empty, "").unwrap();
        let c = RunConfig::load(
            Some(&empty),
            &[
                "mode=edl".into(),
                "dataset=moons".into(),
                "classes=2".into(),
                "alpha=1,2".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.alpha().unwrap().as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn resolved_text_round_trips() {
        let c =
            RunConfig::parse("mode=edl\nlambda=0.2\nhidden=8\nkde_bandwidth=0.5\nscore=max_prob")
                .unwrap();
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
        assert_eq!(
            RunConfig::parse(&RunConfig::default().to_text()).unwrap(),
            RunConfig::default()
        );
    }

    #[test]
    fn structural_checks() {
        assert!(RunConfig::parse("n_train=1001").is_err());
        assert!(RunConfig::parse("dataset=moons").is_err());
        assert!(RunConfig::parse("alpha=1,2,3").is_err());
        assert!(RunConfig::parse("alpha=0").is_err());
    }
}
