//! Numerical certificates for the library's mathematical claims.
//!
//! Each check returns a [`CheckResult`] with the measured quantities, so the
//! caller decides how to report them. [`run_all`] runs the full suite.

use rand::Rng;

use crate::conjugate::{
    cicd_posterior, cicd_posterior_counts, cicd_predictive, icd_posterior, DiscreteDataset,
};
use crate::data::{make_blobs, GeneratorTruth};
use crate::density::{gmm_fit_em, GaussianMixtureModel};
use crate::dip::{dip_predict, DipConfig};
use crate::dirichlet::{dirichlet_kl, ConcentrationVector, ProbabilityVector, RandomSeed};
use crate::error::Result;
use crate::metrics::{auroc, brier_score, BrierTarget, ScoredSample};
use crate::mlp::{
    finite_difference_check, standard_specs, Batch, EvidenceActivation, HeadKind, LossKind, Mlp,
};
use crate::objective::{
    batch_concentrations, edl_loss_from_concentrations, minimize_pointwise_risk, tempered_constant,
    tempered_kl_from_concentrations,
};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub measurements: Vec<(&'static str, f64)>,
}

impl CheckResult {
    fn new(name: &'static str, passed: bool, measurements: Vec<(&'static str, f64)>) -> Self {
        Self {
            name,
            passed,
            measurements,
        }
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.measurements
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
    }

    /// `PASS name: key=value ...`
    pub fn line(&self) -> String {
        let detail = self
            .measurements
            .iter()
            .map(|(k, v)| format!("{k}={v:.6e}"))
            .collect::<Vec<_>>()
            .join(" ");
        format!(
            "{} {}: {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            detail
        )
    }
}

fn random_concentration<R: Rng>(rng: &mut R, k: usize, lo: f64, hi: f64) -> ConcentrationVector {
    ConcentrationVector::new(
        (0..k)
            .map(|_| lo * (hi / lo).powf(rng.random::<f64>()))
            .collect(),
    )
    .expect("positive draws")
}

fn random_batch<R: Rng>(rng: &mut R, n: usize, d: usize, k: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let xs = (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let ys = (0..n).map(|_| rng.random_range(0..k)).collect();
    (xs, ys)
}

/// The tempered KL minus ν times the EDL loss (λ = 1/ν, no annealing) is the
/// same for every parameter setting, and the two gradients coincide.
pub fn tempered_equivalence(seed: RandomSeed, triples: usize) -> Result<CheckResult> {
    let mut rng = seed.rng();
    let nus = [0.2, 1.0, 5.0];
    let mut max_offset_deviation: f64 = 0.0;
    let mut max_constant_error: f64 = 0.0;
    let mut max_gradient_error: f64 = 0.0;
    for t in 0..triples {
        let nu = nus[t % nus.len()];
        let k = 2 + t % 4;
        let d = 1 + t % 3;
        let alpha = random_concentration(&mut rng, k, 0.5, 3.0);
        let (xs, ys) = random_batch(&mut rng, 6 + t % 5, d, k);
        let batch = Batch::new(&xs, &ys)?;
        let specs = standard_specs(d, &[5], k);
        let head = HeadKind::Evidence(EvidenceActivation::Softplus);
        let mut offsets = Vec::new();
        for s in 0..2u64 {
            let net = Mlp::new(&specs, head, seed.derive(1000 + 2 * t as u64 + s))?;
            let betas = batch_concentrations(&net, &batch, &alpha)?;
            let tempered = tempered_kl_from_concentrations(&betas, &ys, &alpha, nu)?;
            let edl = edl_loss_from_concentrations(&betas, &ys, &alpha, 1.0 / nu, 1.0)?;
            offsets.push(tempered - nu * edl);

            let (_, g_tempered) = net.gradient(
                &batch,
                &LossKind::TemperedKl {
                    alpha: alpha.clone(),
                    nu,
                },
            )?;
            let (_, g_edl) = net.gradient(
                &batch,
                &LossKind::Edl {
                    alpha: alpha.clone(),
                    lambda: 1.0 / nu,
                    anneal: 1.0,
                },
            )?;
            for (a, b) in g_tempered.to_flat().iter().zip(g_edl.to_flat()) {
                let b = nu * b;
                let scale = a.abs().max(b.abs());
                if scale > 1e-12 {
                    max_gradient_error = max_gradient_error.max((a - b).abs() / scale);
                }
            }
        }
        max_offset_deviation = max_offset_deviation.max((offsets[0] - offsets[1]).abs());
        let constant = tempered_constant(&alpha, &ys, nu)?;
        max_constant_error = max_constant_error.max((offsets[0] - constant).abs());
    }
    Ok(CheckResult::new(
        "tempered-kl-equivalence",
        max_offset_deviation <= 1e-8 && max_constant_error <= 1e-8 && max_gradient_error <= 1e-6,
        vec![
            ("triples", triples as f64),
            ("max_offset_deviation", max_offset_deviation),
            ("max_constant_error", max_constant_error),
            ("max_gradient_rel_error", max_gradient_error),
        ],
    ))
}

/// Minimising the empirical tempered risk over a free concentration recovers
/// α + ν P̂, with constant vacuity K / (α₀ + ν).
pub fn oracle_recovery(seed: RandomSeed, n: usize) -> Result<CheckResult> {
    let p_star = [0.2, 0.3, 0.5];
    let alpha = ConcentrationVector::new(vec![1.0, 2.0, 0.5])?;
    let nu = 3.0;
    let mut rng = seed.rng();
    let labels: Vec<usize> = (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            if u < p_star[0] {
                0
            } else if u < p_star[0] + p_star[1] {
                1
            } else {
                2
            }
        })
        .collect();
    let mut p_hat = [0.0; 3];
    for &y in &labels {
        p_hat[y] += 1.0 / n as f64;
    }
    let opt = minimize_pointwise_risk(&alpha, &labels, nu, 500)?;
    let recovered = opt.concentration.as_slice();
    let linf = recovered
        .iter()
        .zip(alpha.as_slice())
        .zip(&p_hat)
        .map(|((b, a), p)| (b - a - nu * p).abs())
        .fold(0.0, f64::max);
    let freq_error = p_hat
        .iter()
        .zip(&p_star)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let vacuity_error = (opt.concentration.vacuity() - 3.0 / (alpha.total() + nu)).abs();
    Ok(CheckResult::new(
        "oracle-recovery",
        linf <= 1e-6 && freq_error <= 0.01 && vacuity_error <= 1e-9,
        vec![
            ("labels", n as f64),
            ("linf_error", linf),
            ("frequency_error", freq_error),
            ("vacuity_error", vacuity_error),
            ("iterations", opt.iterations as f64),
        ],
    ))
}

/// Plugs the generator's true density and conditional into the DIP posterior
/// and measures convergence as the training-set size grows.
pub fn asymptotic_consistency() -> Result<CheckResult> {
    let truth = GeneratorTruth::Blobs {
        centers: vec![vec![-0.5, 0.0], vec![0.5, 0.0]],
        sigma: 1.0,
    };
    let probes: Vec<[f64; 2]> = (0..10)
        .flat_map(|i| {
            (0..10).map(move |j| [-1.0 + 2.0 * i as f64 / 9.0, -1.0 + 2.0 * j as f64 / 9.0])
        })
        .collect();
    let alpha = ConcentrationVector::ones(2)?;
    let sizes = [100usize, 1_000, 10_000];
    let mut l1 = Vec::new();
    let mut variances: Vec<Vec<f64>> = Vec::new();
    for &n in &sizes {
        let config = DipConfig::new(alpha.clone(), n)?;
        let mut err = 0.0;
        let mut vars = Vec::new();
        for x in &probes {
            let p = truth.conditional(x).expect("blob truth");
            let density = truth.density(x).expect("blob truth");
            let post = dip_predict(&config, density, &p)?;
            err += post
                .predictive
                .as_slice()
                .iter()
                .zip(p.as_slice())
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>();
            for k in 0..2 {
                vars.push(post.concentration.variance(k)?);
            }
        }
        l1.push(err / probes.len() as f64);
        variances.push(vars);
    }
    let ratios: Vec<f64> = variances[1]
        .iter()
        .zip(&variances[2])
        .map(|(a, b)| a / b)
        .collect();
    let min_ratio = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let max_ratio = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean_ratio = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let decreasing = l1.windows(2).all(|w| w[1] < w[0]);
    Ok(CheckResult::new(
        "asymptotic-consistency",
        decreasing && min_ratio >= 8.0 && max_ratio <= 12.0,
        vec![
            ("l1_n100", l1[0]),
            ("l1_n1000", l1[1]),
            ("l1_n10000", l1[2]),
            ("variance_ratio_mean", mean_ratio),
            ("variance_ratio_min", min_ratio),
            ("variance_ratio_max", max_ratio),
        ],
    ))
}

/// Largest tolerated |z| over the whole family of Monte Carlo comparisons.
/// Sixty comparisons at |z| > 4.5 fail together with probability about 4e-4.
const MAX_Z: f64 = 4.5;

/// Closed-form KL, mean and variance against Monte Carlo estimates.
pub fn monte_carlo_agreement(
    seed: RandomSeed,
    pairs: usize,
    samples: usize,
) -> Result<CheckResult> {
    let mut rng = seed.rng();
    let mut worst_kl_z: f64 = 0.0;
    let mut worst_mean_z: f64 = 0.0;
    let mut worst_var_z: f64 = 0.0;
    let mut min_kl = f64::INFINITY;
    for i in 0..pairs {
        let k = [2, 5, 10][i % 3];
        let from = random_concentration(&mut rng, k, 0.5, 8.0);
        let to = random_concentration(&mut rng, k, 0.5, 8.0);
        let exact = dirichlet_kl(&from, &to)?;
        min_kl = min_kl.min(exact);
        let draws = from.sample_ln(samples, seed.derive(10 + i as u64))?;
        // log Dir(p; a) = Σ (aₖ − 1) ln pₖ − ln B(a)
        let (lb_from, lb_to) = (from.ln_beta(), to.ln_beta());
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut p0_sum = 0.0;
        let mut p0_sq = 0.0;
        let mut p0_4 = 0.0;
        for ln_p in &draws {
            let ratio: f64 = ln_p
                .iter()
                .zip(from.as_slice().iter().zip(to.as_slice()))
                .map(|(l, (a, b))| (a - b) * l)
                .sum::<f64>()
                - lb_from
                + lb_to;
            sum += ratio;
            sum_sq += ratio * ratio;
            let p0 = ln_p[0].exp();
            p0_sum += p0;
            p0_sq += p0 * p0;
        }
        let m = samples as f64;
        let mean = sum / m;
        let se = ((sum_sq / m - mean * mean).max(0.0) / m).sqrt();
        worst_kl_z = worst_kl_z.max((mean - exact).abs() / se.max(1e-300));

        let p_mean = p0_sum / m;
        let p_var = p0_sq / m - p_mean * p_mean;
        let exact_mean = from.mean().as_slice()[0];
        let exact_var = from.variance(0)?;
        worst_mean_z = worst_mean_z.max((p_mean - exact_mean).abs() / (exact_var / m).sqrt());
        for ln_p in &draws {
            p0_4 += (ln_p[0].exp() - p_mean).powi(4);
        }
        let var_se = ((p0_4 / m - p_var * p_var).max(0.0) / m).sqrt();
        worst_var_z = worst_var_z.max((p_var - exact_var).abs() / var_se.max(1e-300));
    }
    Ok(CheckResult::new(
        "dirichlet-monte-carlo",
        worst_kl_z <= MAX_Z && worst_mean_z <= MAX_Z && worst_var_z <= MAX_Z && min_kl >= -1e-12,
        vec![
            ("pairs", pairs as f64),
            ("samples", samples as f64),
            ("worst_kl_z", worst_kl_z),
            ("worst_mean_z", worst_mean_z),
            ("worst_variance_z", worst_var_z),
            ("min_kl", min_kl),
        ],
    ))
}

/// Central finite differences against the analytic gradients.
pub fn gradient_integrity(seed: RandomSeed, configs: usize) -> Result<CheckResult> {
    let mut rng = seed.rng();
    let mut worst_edl: f64 = 0.0;
    let mut worst_ce: f64 = 0.0;
    for c in 0..configs {
        let d = 1 + c % 3;
        let k = 2 + c % 4;
        let hidden: Vec<usize> = if c % 2 == 0 { vec![6] } else { vec![5, 4] };
        let (xs, ys) = random_batch(&mut rng, 5 + c % 4, d, k);
        let batch = Batch::new(&xs, &ys)?;
        let activation = if c % 3 == 2 {
            EvidenceActivation::Exp
        } else {
            EvidenceActivation::Softplus
        };
        let specs = standard_specs(d, &hidden, k);
        // Zero biases put dead-unit preactivations exactly on a rectifier
        // kink, where central differences are meaningless; jitter first.
        let mut ev = Mlp::new(
            &specs,
            HeadKind::Evidence(activation),
            seed.derive(200 + c as u64),
        )?;
        jitter(&mut ev, &mut rng)?;
        let edl = LossKind::Edl {
            alpha: random_concentration(&mut rng, k, 0.5, 2.0),
            lambda: rng.random_range(0.1..2.0),
            anneal: rng.random_range(0.0..1.0),
        };
        worst_edl = worst_edl.max(finite_difference_check(&ev, &batch, &edl, 1e-5)?);
        let mut prob = Mlp::new(&specs, HeadKind::Probability, seed.derive(300 + c as u64))?;
        jitter(&mut prob, &mut rng)?;
        worst_ce = worst_ce.max(finite_difference_check(
            &prob,
            &batch,
            &LossKind::CrossEntropy,
            1e-5,
        )?);
    }
    Ok(CheckResult::new(
        "gradient-integrity",
        worst_edl <= 1e-4 && worst_ce <= 1e-4,
        vec![
            ("configs", configs as f64),
            ("worst_edl", worst_edl),
            ("worst_cross_entropy", worst_ce),
        ],
    ))
}

fn jitter<R: Rng>(mlp: &mut Mlp, rng: &mut R) -> Result<()> {
    let params: Vec<f64> = mlp
        .parameters()
        .iter()
        .map(|p| p + rng.random_range(-0.3..0.3))
        .collect();
    mlp.set_parameters(&params)
}

/// AUROC hand value and rank invariance; EM monotonicity.
pub fn metric_oracles(seed: RandomSeed) -> Result<CheckResult> {
    let hand = auroc(&[0.1, 0.2], &[0.15, 0.3])?;
    let mut rng = seed.rng();
    let mut worst_invariance: f64 = 0.0;
    for t in 0..10 {
        let id: Vec<f64> = (0..200).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ood: Vec<f64> = (0..150).map(|_| rng.random_range(-0.5..1.5)).collect();
        let base = auroc(&id, &ood)?;
        let a = rng.random_range(0.5..3.0);
        let b = rng.random_range(-2.0..2.0);
        let f = |x: f64| match t % 3 {
            0 => a * x + b,
            1 => (a * x).exp() + b,
            _ => (a * x).atan() + x.powi(3) + b,
        };
        let id_t: Vec<f64> = id.iter().map(|&x| f(x)).collect();
        let ood_t: Vec<f64> = ood.iter().map(|&x| f(x)).collect();
        worst_invariance = worst_invariance.max((auroc(&id_t, &ood_t)? - base).abs());
    }
    let mut worst_em_drop: f64 = 0.0;
    for t in 0..10u64 {
        let k = 2 + (t as usize % 3);
        let centers: Vec<Vec<f64>> = (0..k)
            .map(|_| vec![rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0)])
            .collect();
        let data = make_blobs(
            k,
            60,
            &centers,
            rng.random_range(0.5..2.0),
            seed.derive(400 + t),
        )?;
        let fit = gmm_fit_em(data.features(), k, seed.derive(500 + t), 1e-10, 100)?;
        worst_em_drop = worst_em_drop.max(em_worst_drop(&fit.model));
    }
    Ok(CheckResult::new(
        "metric-oracles",
        (hand - 0.75).abs() < 1e-15 && worst_invariance <= 1e-12 && worst_em_drop <= 1e-10,
        vec![
            ("auroc_hand", hand),
            ("worst_transform_deviation", worst_invariance),
            ("worst_em_decrease", worst_em_drop),
        ],
    ))
}

fn em_worst_drop(model: &GaussianMixtureModel) -> f64 {
    model
        .log_likelihood_trace()
        .windows(2)
        .map(|w| w[0] - w[1])
        .fold(0.0, f64::max)
}

/// Conjugate posteriors against their defining identities.
pub fn conjugate_identities(seed: RandomSeed) -> Result<CheckResult> {
    let mut rng = seed.rng();
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let k = rng.random_range(2..6);
        let alpha = random_concentration(&mut rng, k, 0.3, 4.0);
        let keys: Vec<u8> = (0..40).map(|_| rng.random_range(0..4)).collect();
        let labels: Vec<usize> = (0..40).map(|_| rng.random_range(0..k)).collect();
        let data = DiscreteDataset::new(keys.clone(), labels.clone())?;
        let counts = cicd_posterior_counts(&data, k)?;
        for (key, c) in &counts {
            let post = cicd_posterior(&alpha, c)?;
            let pred = cicd_predictive(&alpha, &counts, key)?;
            // The predictive is the posterior mean.
            for (a, b) in pred.as_slice().iter().zip(post.mean().as_slice()) {
                worst = worst.max((a - b).abs());
            }
            // Sequential single-label updates give the same posterior.
            let mut seq = alpha.clone();
            for (kk, &y) in keys.iter().zip(&labels) {
                if kk == key {
                    seq = icd_posterior(&seq, y, 1.0)?;
                }
            }
            worst = worst.max(dirichlet_kl(&seq, &post)?.abs());
        }
    }
    Ok(CheckResult::new(
        "conjugate-identities",
        worst <= 1e-12,
        vec![("worst_error", worst)],
    ))
}

/// With the class factor switched off every class gets equal evidence, so the
/// predictive is uniform: Brier 0.9 against one-hot targets at K = 10 and 0
/// against the uniform target.
pub fn uniform_class_identities() -> Result<CheckResult> {
    let k = 10;
    let config =
        DipConfig::new(ConcentrationVector::ones(k)?, 2000)?.with_toggles(true, true, false);
    let mut samples = Vec::new();
    for (i, de) in [0.0, 1e-13, 0.3, 1.0, 5.0, 1e6].iter().enumerate() {
        let probs = ProbabilityVector::one_hot(i % k, k)?;
        let post = dip_predict(&config, *de, &probs)?;
        samples.push(ScoredSample {
            predictive: post.predictive,
            uncertainty: post.vacuity,
            true_label: Some(i % k),
        });
    }
    let id = brier_score(&samples, BrierTarget::OneHot)?;
    let ood = brier_score(&samples, BrierTarget::Uniform)?;
    let all_class_zero = samples.iter().all(|s| s.predictive.argmax() == 0);
    Ok(CheckResult::new(
        "uniform-class-identities",
        (id - 0.9).abs() <= 1e-12 && ood.abs() <= 1e-12 && all_class_zero,
        vec![("brier_one_hot", id), ("brier_uniform", ood)],
    ))
}

/// The complete suite used by the `verify` command.
pub fn run_all(seed: RandomSeed) -> Result<Vec<CheckResult>> {
    Ok(vec![
        tempered_equivalence(seed.derive(1), 24)?,
        oracle_recovery(seed.derive(2), 100_000)?,
        asymptotic_consistency()?,
        monte_carlo_agreement(seed.derive(3), 20, 1_000_000)?,
        gradient_integrity(seed.derive(4), 10)?,
        metric_oracles(seed.derive(5))?,
        conjugate_identities(seed.derive(6))?,
        uniform_class_identities()?,
    ])
}
