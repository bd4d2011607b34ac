//! Marginal density estimators and the log-likelihood z-score normaliser.
//!
//! Three estimators are provided: a Gaussian product-kernel KDE, a Gaussian
//! mixture fitted by EM, and the class-conditional Gaussian fit (one
//! component per class, weighted by class frequency). All densities are
//! evaluated in log space.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::dirichlet::RandomSeed;
use crate::error::{Error, Result};
use crate::mlp::{join_reals, parse_reals};

/// Bandwidth floor used when a dimension has zero spread under Scott's rule.
pub const BANDWIDTH_FLOOR: f64 = 1e-3;
/// Responsibility mass below which an EM component is re-seeded.
pub const DEGENERATE_MASS: f64 = 1e-8;
/// Ridge added to under-populated class covariances.
pub const CLASS_RIDGE: f64 = 1e-4;

/// A fitted model together with any non-fatal conditions met while fitting.
#[derive(Debug, Clone)]
pub struct Fitted<T> {
    pub model: T,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandwidthRule {
    /// h_j = n^(−1/(d+4)) σ̂_j per dimension.
    Scott,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct KdeModel {
    support: Vec<Vec<f64>>,
    bandwidth: Vec<f64>,
}

fn check_data(data: &[Vec<f64>]) -> Result<usize> {
    let first = data.first().ok_or(Error::Empty("density training data"))?;
    let d = first.len();
    if d == 0 {
        return Err(Error::InvalidArgument("data has zero dimensions".into()));
    }
    for row in data {
        if row.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("density training data".into()));
        }
    }
    Ok(d)
}

fn check_point(x: &[f64], d: usize) -> Result<()> {
    if x.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("density query point".into()));
    }
    Ok(())
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn kde_build(data: &[Vec<f64>], rule: BandwidthRule) -> Result<Fitted<KdeModel>> {
    let d = check_data(data)?;
    let n = data.len() as f64;
    let mut warnings = Vec::new();
    let bandwidth = match rule {
        BandwidthRule::Fixed(h) => {
            if !(h.is_finite() && h > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "bandwidth must be positive, got {h}"
                )));
            }
            vec![h; d]
        }
        BandwidthRule::Scott => {
            let factor = n.powf(-1.0 / (d as f64 + 4.0));
            (0..d)
                .map(|j| {
                    let mean = data.iter().map(|r| r[j]).sum::<f64>() / n;
                    let var = if data.len() > 1 {
                        data.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / (n - 1.0)
                    } else {
                        0.0
                    };
                    let h = factor * var.sqrt();
                    if h > 0.0 {
                        h
                    } else {
                        warnings.push(format!(
                            "dimension {j} has zero spread; bandwidth set to {BANDWIDTH_FLOOR}"
                        ));
                        BANDWIDTH_FLOOR
                    }
                })
                .collect()
        }
    };
    Ok(Fitted {
        model: KdeModel {
            support: data.to_vec(),
            bandwidth,
        },
        warnings,
    })
}

impl KdeModel {
    pub fn dim(&self) -> usize {
        self.bandwidth.len()
    }

    pub fn bandwidth(&self) -> &[f64] {
        &self.bandwidth
    }

    pub fn support(&self) -> &[Vec<f64>] {
        &self.support
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        check_point(x, self.dim())?;
        let d = self.dim() as f64;
        let norm = -(self.support.len() as f64).ln()
            - self.bandwidth.iter().map(|h| h.ln()).sum::<f64>()
            - 0.5 * d * (2.0 * PI).ln();
        let exponents = self.support.iter().map(|s| {
            -0.5 * s
                .iter()
                .zip(x)
                .zip(&self.bandwidth)
                .map(|((si, xi), h)| ((xi - si) / h).powi(2))
                .sum::<f64>()
        });
        Ok(norm + log_sum_exp(exponents))
    }
}

/// One Gaussian with its Cholesky factor cached for evaluation.
#[derive(Debug, Clone, PartialEq)]
struct Component {
    weight: f64,
    mean: Vec<f64>,
    covariance: Vec<f64>,
    lower: DMatrix<f64>,
    log_norm: f64,
}

impl Component {
    /// Factorises `covariance`, adding a ridge of 1e-6·trace/d only if the
    /// matrix is not numerically positive definite.
    fn new(
        weight: f64,
        mean: Vec<f64>,
        mut covariance: Vec<f64>,
        warnings: &mut Vec<String>,
    ) -> Result<Self> {
        let d = mean.len();
        let trace: f64 = (0..d).map(|i| covariance[i * d + i]).sum();
        let scale = if trace > 0.0 { trace / d as f64 } else { 1.0 };
        let mut lower = factorize(&covariance, d, scale);
        if lower.is_none() {
            let ridge = 1e-6 * scale;
            for i in 0..d {
                covariance[i * d + i] += ridge;
            }
            warnings.push(format!("covariance near singular; added ridge {ridge:.3e}"));
            lower = factorize(&covariance, d, scale);
        }
        let lower = lower.ok_or_else(|| Error::NonFinite("covariance factorisation".into()))?;
        let log_det: f64 = 2.0 * lower.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Self {
            weight,
            mean,
            covariance,
            log_norm: -0.5 * (d as f64 * (2.0 * PI).ln() + log_det),
            lower,
        })
    }

    fn log_pdf(&self, x: &[f64]) -> f64 {
        let diff = DVector::from_iterator(x.len(), x.iter().zip(&self.mean).map(|(a, b)| a - b));
        let z = self
            .lower
            .solve_lower_triangular(&diff)
            .expect("Cholesky factor has a positive diagonal");
        self.log_norm - 0.5 * z.norm_squared()
    }
}

fn factorize(covariance: &[f64], d: usize, scale: f64) -> Option<DMatrix<f64>> {
    if covariance.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let chol = DMatrix::from_row_slice(d, d, covariance).cholesky()?;
    let lower = chol.l();
    let min_pivot = lower
        .diagonal()
        .iter()
        .map(|v| v * v)
        .fold(f64::INFINITY, f64::min);
    (min_pivot > 1e-12 * scale).then_some(lower)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixtureModel {
    components: Vec<Component>,
    /// Mean log-likelihood of the training data before each EM update
    /// (empty for closed-form fits).
    log_likelihood_trace: Vec<f64>,
}

/// Weighted mean and (biased, divide-by-mass) covariance.
fn weighted_moments(
    data: &[Vec<f64>],
    weights: impl Fn(usize) -> f64,
) -> (f64, Vec<f64>, Vec<f64>) {
    let d = data[0].len();
    let mut mass = 0.0;
    let mut mean = vec![0.0; d];
    for (i, row) in data.iter().enumerate() {
        let w = weights(i);
        mass += w;
        for (m, v) in mean.iter_mut().zip(row) {
            *m += w * v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= mass);
    let mut cov = vec![0.0; d * d];
    for (i, row) in data.iter().enumerate() {
        let w = weights(i);
        for a in 0..d {
            let da = row[a] - mean[a];
            for b in a..d {
                cov[a * d + b] += w * da * (row[b] - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            cov[a * d + b] /= mass;
            cov[b * d + a] = cov[a * d + b];
        }
    }
    (mass, mean, cov)
}

impl GaussianMixtureModel {
    /// Builds a mixture from explicit parameters; covariances are row-major d×d.
    pub fn new(
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        covariances: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Empty("mixture components"));
        }
        if means.len() != weights.len() || covariances.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: weights.len(),
                found: means.len().min(covariances.len()),
            });
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidProbability(format!(
                "mixture weights {weights:?}"
            )));
        }
        let d = means[0].len();
        let mut warnings = Vec::new();
        let components = weights
            .into_iter()
            .zip(means)
            .zip(covariances)
            .map(|((w, m), c)| {
                if m.len() != d || c.len() != d * d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        found: m.len(),
                    });
                }
                if (0..d).any(|a| {
                    (0..a).any(|b| {
                        (c[a * d + b] - c[b * d + a]).abs() > 1e-12 * c[a * d + b].abs().max(1.0)
                    })
                }) {
                    return Err(Error::InvalidArgument("covariance is not symmetric".into()));
                }
                Component::new(w, m, c, &mut warnings)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            components,
            log_likelihood_trace: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.components[0].mean.len()
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    pub fn means(&self) -> Vec<Vec<f64>> {
        self.components.iter().map(|c| c.mean.clone()).collect()
    }

    /// Row-major d×d covariance per component.
    pub fn covariances(&self) -> Vec<Vec<f64>> {
        self.components
            .iter()
            .map(|c| c.covariance.clone())
            .collect()
    }

    pub fn log_likelihood_trace(&self) -> &[f64] {
        &self.log_likelihood_trace
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        check_point(x, self.dim())?;
        Ok(self.log_density_unchecked(x))
    }

    fn log_density_unchecked(&self, x: &[f64]) -> f64 {
        log_sum_exp(
            self.components
                .iter()
                .filter(|c| c.weight > 0.0)
                .map(|c| c.weight.ln() + c.log_pdf(x)),
        )
    }

    fn mean_log_likelihood(&self, data: &[Vec<f64>]) -> f64 {
        data.iter()
            .map(|x| self.log_density_unchecked(x))
            .sum::<f64>()
            / data.len() as f64
    }
}

/// Fits an M-component mixture by EM from a k-means++ initialisation.
///
/// Iterates until the mean log-likelihood improves by less than `tol` or
/// `max_iter` updates have been made.
pub fn gmm_fit_em(
    data: &[Vec<f64>],
    m: usize,
    seed: RandomSeed,
    tol: f64,
    max_iter: usize,
) -> Result<Fitted<GaussianMixtureModel>> {
    let d = check_data(data)?;
    let n = data.len();
    if m == 0 {
        return Err(Error::InvalidArgument(
            "mixture needs at least one component".into(),
        ));
    }
    if n < m {
        return Err(Error::InvalidArgument(format!(
            "{n} samples cannot fit {m} components"
        )));
    }
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let mut rng = seed.rng();
    let mut warnings = Vec::new();
    let (_, _, global_cov) = weighted_moments(data, |_| 1.0);

    let means = kmeans_plus_plus(data, m, &mut rng);
    let mut model = GaussianMixtureModel {
        components: means
            .into_iter()
            .map(|mean| Component::new(1.0 / m as f64, mean, global_cov.clone(), &mut warnings))
            .collect::<Result<_>>()?,
        log_likelihood_trace: Vec::new(),
    };

    let mut resp = vec![vec![0.0; m]; n];
    let mut previous = f64::NEG_INFINITY;
    for _ in 0..max_iter {
        // E-step, accumulating the log-likelihood of the current parameters.
        let mut total = 0.0;
        for (x, r) in data.iter().zip(resp.iter_mut()) {
            for (rk, c) in r.iter_mut().zip(&model.components) {
                *rk = if c.weight > 0.0 {
                    c.weight.ln() + c.log_pdf(x)
                } else {
                    f64::NEG_INFINITY
                };
            }
            let norm = log_sum_exp(r.iter().copied());
            total += norm;
            r.iter_mut().for_each(|v| *v = (*v - norm).exp());
        }
        let current = total / n as f64;
        model.log_likelihood_trace.push(current);
        if current - previous < tol {
            break;
        }
        previous = current;

        // M-step.
        let mut components = Vec::with_capacity(m);
        for k in 0..m {
            let mass: f64 = resp.iter().map(|r| r[k]).sum();
            if mass < DEGENERATE_MASS {
                let pick = rng.random_range(0..n);
                warnings.push(format!(
                    "component {k} collapsed; re-seeded at sample {pick}"
                ));
                components.push(Component::new(
                    1.0 / m as f64,
                    data[pick].clone(),
                    global_cov.clone(),
                    &mut warnings,
                )?);
                continue;
            }
            let (mass, mean, cov) = weighted_moments(data, |i| resp[i][k]);
            components.push(Component::new(mass / n as f64, mean, cov, &mut warnings)?);
        }
        let weight_total: f64 = components.iter().map(|c| c.weight).sum();
        components.iter_mut().for_each(|c| c.weight /= weight_total);
        model.components = components;
    }
    if model.log_likelihood_trace.len() == max_iter {
        model
            .log_likelihood_trace
            .push(model.mean_log_likelihood(data));
    }
    debug_assert_eq!(d, model.dim());
    Ok(Fitted { model, warnings })
}

fn kmeans_plus_plus<R: Rng>(data: &[Vec<f64>], m: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let sq_dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let mut centers = vec![data[rng.random_range(0..data.len())].clone()];
    let mut nearest: Vec<f64> = data.iter().map(|x| sq_dist(x, &centers[0])).collect();
    while centers.len() < m {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = data.len() - 1;
            for (i, w) in nearest.iter().enumerate() {
                if target < *w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..data.len())
        };
        let center = data[pick].clone();
        for (nd, x) in nearest.iter_mut().zip(data) {
            *nd = nd.min(sq_dist(x, &center));
        }
        centers.push(center);
    }
    centers
}

/// One Gaussian per class, weighted by class frequency.
pub fn gda_fit(
    features: &[Vec<f64>],
    labels: &[usize],
    k: usize,
) -> Result<Fitted<GaussianMixtureModel>> {
    let d = check_data(features)?;
    if features.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: features.len(),
            found: labels.len(),
        });
    }
    let mut by_class: Vec<Vec<Vec<f64>>> = vec![Vec::new(); k];
    for (x, &y) in features.iter().zip(labels) {
        if y >= k {
            return Err(Error::IndexOutOfRange { index: y, len: k });
        }
        by_class[y].push(x.clone());
    }
    let n = features.len() as f64;
    let mut warnings = Vec::new();
    let mut components = Vec::with_capacity(k);
    for (class, rows) in by_class.iter().enumerate() {
        if rows.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "class {class} has no samples"
            )));
        }
        let (mass, mean, mut cov) = weighted_moments(rows, |_| 1.0);
        if rows.len() < d + 1 {
            warnings.push(format!(
                "class {class} has {} samples in {d} dimensions; covariance inflated by {CLASS_RIDGE}·I",
                rows.len()
            ));
            for i in 0..d {
                cov[i * d + i] += CLASS_RIDGE;
            }
        }
        components.push(Component::new(mass / n, mean, cov, &mut warnings)?);
    }
    Ok(Fitted {
        model: GaussianMixtureModel {
            components,
            log_likelihood_trace: Vec::new(),
        },
        warnings,
    })
}

/// A fitted marginal density estimator.
#[derive(Debug, Clone, PartialEq)]
pub enum DensityModel {
    Kde(KdeModel),
    Gmm(GaussianMixtureModel),
}

impl DensityModel {
    pub fn dim(&self) -> usize {
        match self {
            DensityModel::Kde(m) => m.dim(),
            DensityModel::Gmm(m) => m.dim(),
        }
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        match self {
            DensityModel::Kde(m) => m.log_density(x),
            DensityModel::Gmm(m) => m.log_density(x),
        }
    }
}

/// Mean and population standard deviation of training log-densities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLikelihoodNormalizer {
    pub mean: f64,
    pub std: f64,
}

impl LogLikelihoodNormalizer {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !mean.is_finite() || !(std.is_finite() && std > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "normaliser needs finite mean and positive std, got {mean}, {std}"
            )));
        }
        Ok(Self { mean, std })
    }

    pub fn z_score(&self, log_density: f64) -> f64 {
        (log_density - self.mean) / self.std
    }
}

pub fn normalizer_fit(train_logliks: &[f64]) -> Result<LogLikelihoodNormalizer> {
    if train_logliks.len() < 2 {
        return Err(Error::InvalidArgument(
            "normaliser needs at least two values".into(),
        ));
    }
    if train_logliks.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training log-likelihood".into()));
    }
    let n = train_logliks.len() as f64;
    let mean = train_logliks.iter().sum::<f64>() / n;
    let var = train_logliks
        .iter()
        .map(|v| (v - mean).powi(2))
        .sum::<f64>()
        / n;
    if var <= 0.0 {
        return Err(Error::InvalidArgument(
            "training log-likelihoods have zero spread; the density estimator is degenerate".into(),
        ));
    }
    LogLikelihoodNormalizer::new(mean, var.sqrt())
}

/// exp(clip(z, −clamp, clamp)) for the z-scored log-density.
pub fn density_scale(normalizer: &LogLikelihoodNormalizer, log_density: f64, clamp: f64) -> f64 {
    normalizer.z_score(log_density).clamp(-clamp, clamp).exp()
}

/// Text checkpoint: the model block followed by a `norm <mean> <std>` line.
pub fn density_to_text(model: &DensityModel, normalizer: &LogLikelihoodNormalizer) -> String {
    let mut out = String::new();
    match model {
        DensityModel::Kde(kde) => {
            let _ = writeln!(out, "kde {} {}", kde.dim(), kde.support.len());
            let _ = writeln!(out, "bandwidth {}", join_reals(&kde.bandwidth));
            for row in &kde.support {
                let _ = writeln!(out, "{}", join_reals(row));
            }
        }
        DensityModel::Gmm(gmm) => {
            let d = gmm.dim();
            let _ = writeln!(out, "gmm {} {}", d, gmm.n_components());
            for c in &gmm.components {
                let _ = writeln!(out, "component {}", join_reals(&[c.weight]));
                let _ = writeln!(out, "{}", join_reals(&c.mean));
                for row in c.covariance.chunks_exact(d) {
                    let _ = writeln!(out, "{}", join_reals(row));
                }
            }
        }
    }
    let _ = writeln!(
        out,
        "norm {}",
        join_reals(&[normalizer.mean, normalizer.std])
    );
    out
}

pub fn density_from_text(
    text: &str,
    source_name: &str,
) -> Result<(DensityModel, LogLikelihoodNormalizer)> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty())
        .collect();
    let mut cursor = lines.iter().copied();
    let mut next = |what: &str| {
        cursor.next().ok_or_else(|| {
            Error::parse(
                source_name,
                text.lines().count().max(1),
                format!("missing {what}"),
            )
        })
    };
    let (line_no, header) = next("header")?;
    let tokens: Vec<&str> = header.split_whitespace().collect();
    if tokens.len() != 3 {
        return Err(Error::parse(
            source_name,
            line_no,
            "expected `kde|gmm <d> <count>`",
        ));
    }
    let parse_count = |s: &str| {
        s.parse::<usize>()
            .ok()
            .filter(|v| *v > 0)
            .ok_or_else(|| Error::parse(source_name, line_no, format!("bad count `{s}`")))
    };
    let (d, count) = (parse_count(tokens[1])?, parse_count(tokens[2])?);
    let model = match tokens[0] {
        "kde" => {
            let (bl, bandwidth_line) = next("bandwidth line")?;
            let rest = bandwidth_line
                .strip_prefix("bandwidth")
                .ok_or_else(|| Error::parse(source_name, bl, "expected `bandwidth ...`"))?;
            let bandwidth = parse_reals(rest, d, source_name, bl)?;
            if bandwidth.iter().any(|h| *h <= 0.0) {
                return Err(Error::parse(source_name, bl, "bandwidth must be positive"));
            }
            let mut support = Vec::with_capacity(count);
            for _ in 0..count {
                let (l, row) = next("support point")?;
                support.push(parse_reals(row, d, source_name, l)?);
            }
            DensityModel::Kde(KdeModel { support, bandwidth })
        }
        "gmm" => {
            let mut weights = Vec::with_capacity(count);
            let mut means = Vec::with_capacity(count);
            let mut covs = Vec::with_capacity(count);
            for _ in 0..count {
                let (l, comp) = next("component line")?;
                let rest = comp
                    .strip_prefix("component")
                    .ok_or_else(|| Error::parse(source_name, l, "expected `component <weight>`"))?;
                weights.push(parse_reals(rest, 1, source_name, l)?[0]);
                let (l, mean) = next("component mean")?;
                means.push(parse_reals(mean, d, source_name, l)?);
                let mut cov = Vec::with_capacity(d * d);
                for _ in 0..d {
                    let (l, row) = next("covariance row")?;
                    cov.extend(parse_reals(row, d, source_name, l)?);
                }
                covs.push(cov);
            }
            DensityModel::Gmm(
                GaussianMixtureModel::new(weights, means, covs)
                    .map_err(|e| Error::parse(source_name, line_no, e.to_string()))?,
            )
        }
        other => {
            return Err(Error::parse(
                source_name,
                line_no,
                format!("unknown density kind `{other}`"),
            ))
        }
    };
    let (l, norm) = next("norm line")?;
    let rest = norm
        .strip_prefix("norm")
        .ok_or_else(|| Error::parse(source_name, l, "expected `norm <mean> <std>`"))?;
    let v = parse_reals(rest, 2, source_name, l)?;
    let normalizer = LogLikelihoodNormalizer::new(v[0], v[1])
        .map_err(|e| Error::parse(source_name, l, e.to_string()))?;
    if let Some((l, _)) = cursor.next() {
        return Err(Error::parse(source_name, l, "unexpected trailing content"));
    }
    Ok((model, normalizer))
}
