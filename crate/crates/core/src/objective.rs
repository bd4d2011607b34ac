//! The EDL loss, its tempered-KL counterpart, and the pointwise risk minimiser.
//!
//! For one sample with concentration β = α + e and label y,
//!
//! ```text
//! KL(Dir(β) ‖ Dir(α + ν e_y)) = ν [ψ(β₀) − ψ(β_y)] + KL(Dir(β) ‖ Dir(α)) + c(α, ν, y)
//! ```
//!
//! with c = ln B(α + ν e_y) − ln B(α). Minimising the tempered KL is therefore
//! the same as minimising the EDL loss with λ = 1/ν, scaled by ν.

use crate::dirichlet::{dirichlet_kl, ConcentrationVector, ProbabilityVector};
use crate::error::{Error, Result};
use crate::mlp::{Batch, Mlp};
use crate::special::{digamma_pos, ln_gamma_pos, trigamma_pos};

/// Prior, regularisation weight and temperature, with λ·ν = 1.
#[derive(Debug, Clone, PartialEq)]
pub struct EdlLossConfig {
    pub alpha: ConcentrationVector,
    pub lambda: f64,
    pub nu: f64,
    pub anneal_epochs: usize,
}

impl EdlLossConfig {
    /// Either of λ, ν determines the other; neither means λ = ν = 1.
    pub fn new(
        alpha: ConcentrationVector,
        lambda: Option<f64>,
        nu: Option<f64>,
        anneal_epochs: usize,
    ) -> Result<Self> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(v)
            } else {
                Err(Error::config(
                    name,
                    format!("must be positive and finite, got {v}"),
                ))
            }
        };
        let (lambda, nu) = match (lambda, nu) {
            (None, None) => (1.0, 1.0),
            (Some(l), None) => {
                let l = positive("lambda", l)?;
                (l, 1.0 / l)
            }
            (None, Some(n)) => {
                let n = positive("nu", n)?;
                (1.0 / n, n)
            }
            (Some(l), Some(n)) => {
                let (l, n) = (positive("lambda", l)?, positive("nu", n)?);
                if (l * n - 1.0).abs() > 1e-12 {
                    return Err(Error::config(
                        "lambda",
                        format!("lambda * nu must equal 1, got {l} * {n}"),
                    ));
                }
                (l, n)
            }
        };
        Ok(Self {
            alpha,
            lambda,
            nu,
            anneal_epochs,
        })
    }
}

/// ψ(β₀) − ψ(β_y), the expected negative log-likelihood under Dir(β).
pub fn edl_data_term(beta: &ConcentrationVector, y: usize) -> Result<f64> {
    Ok(-beta.expected_ln_prob(y)?)
}

/// α + NN(x) for every sample in the batch.
pub fn batch_concentrations(
    mlp: &Mlp,
    batch: &Batch<'_>,
    alpha: &ConcentrationVector,
) -> Result<Vec<ConcentrationVector>> {
    if mlp.output_dim() != alpha.len() {
        return Err(Error::DimensionMismatch {
            expected: alpha.len(),
            found: mlp.output_dim(),
        });
    }
    batch
        .features()
        .iter()
        .map(|x| {
            let evidence = mlp.forward(x)?;
            ConcentrationVector::new(
                alpha
                    .as_slice()
                    .iter()
                    .zip(&evidence)
                    .map(|(a, e)| a + e)
                    .collect(),
            )
        })
        .collect()
}

/// Σᵢ [ψ(βᵢ₀) − ψ(βᵢ,yᵢ)] + anneal·λ·Σᵢ KL(Dir(βᵢ) ‖ Dir(α)).
pub fn edl_loss_from_concentrations(
    betas: &[ConcentrationVector],
    labels: &[usize],
    alpha: &ConcentrationVector,
    lambda: f64,
    anneal_factor: f64,
) -> Result<f64> {
    check_anneal(anneal_factor)?;
    check_lengths(betas.len(), labels.len())?;
    let mut total = 0.0;
    for (beta, &y) in betas.iter().zip(labels) {
        total += edl_data_term(beta, y)?;
        if anneal_factor * lambda != 0.0 {
            total += anneal_factor * lambda * dirichlet_kl(beta, alpha)?;
        }
    }
    Ok(total)
}

/// Summed EDL loss of the network over the batch.
pub fn edl_loss(
    mlp: &Mlp,
    batch: &Batch<'_>,
    config: &EdlLossConfig,
    anneal_factor: f64,
) -> Result<f64> {
    let betas = batch_concentrations(mlp, batch, &config.alpha)?;
    edl_loss_from_concentrations(
        &betas,
        batch.labels(),
        &config.alpha,
        config.lambda,
        anneal_factor,
    )
}

/// Σᵢ KL(Dir(βᵢ) ‖ Dir(α + ν e_{yᵢ})).
pub fn tempered_kl_from_concentrations(
    betas: &[ConcentrationVector],
    labels: &[usize],
    alpha: &ConcentrationVector,
    nu: f64,
) -> Result<f64> {
    check_lengths(betas.len(), labels.len())?;
    let mut total = 0.0;
    for (beta, &y) in betas.iter().zip(labels) {
        let target = crate::conjugate::icd_posterior(alpha, y, nu)?;
        total += dirichlet_kl(beta, &target)?;
    }
    Ok(total)
}

/// Summed tempered KL of the network over the batch.
pub fn tempered_kl_objective(
    mlp: &Mlp,
    batch: &Batch<'_>,
    alpha: &ConcentrationVector,
    nu: f64,
) -> Result<f64> {
    check_nu(nu)?;
    let betas = batch_concentrations(mlp, batch, alpha)?;
    tempered_kl_from_concentrations(&betas, batch.labels(), alpha, nu)
}

/// Mean tempered KL over the batch.
pub fn empirical_risk(
    mlp: &Mlp,
    batch: &Batch<'_>,
    alpha: &ConcentrationVector,
    nu: f64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    Ok(tempered_kl_objective(mlp, batch, alpha, nu)? / batch.len() as f64)
}

/// The parameter-free gap Σᵢ [ln B(α + ν e_{yᵢ}) − ln B(α)] between
/// the tempered KL and ν times the EDL loss with λ = 1/ν.
pub fn tempered_constant(alpha: &ConcentrationVector, labels: &[usize], nu: f64) -> Result<f64> {
    check_nu(nu)?;
    let base = alpha.ln_beta();
    labels
        .iter()
        .map(|&y| Ok(crate::conjugate::icd_posterior(alpha, y, nu)?.ln_beta() - base))
        .sum()
}

/// Linear ramp min(1, epoch / anneal_epochs); zero ramp length means 1.
pub fn anneal_coefficient(epoch: i64, anneal_epochs: usize) -> Result<f64> {
    if epoch < 0 {
        return Err(Error::InvalidArgument(format!(
            "epoch must be non-negative, got {epoch}"
        )));
    }
    if anneal_epochs == 0 {
        return Ok(1.0);
    }
    Ok((epoch as f64 / anneal_epochs as f64).min(1.0))
}

/// α + ν p, the minimiser of the population tempered risk at a point where
/// the label distribution is p.
pub fn oracle_concentration(
    p_true: &ProbabilityVector,
    alpha: &ConcentrationVector,
    nu: f64,
) -> Result<ConcentrationVector> {
    check_nu(nu)?;
    if p_true.len() != alpha.len() {
        return Err(Error::DimensionMismatch {
            expected: alpha.len(),
            found: p_true.len(),
        });
    }
    ConcentrationVector::new(
        alpha
            .as_slice()
            .iter()
            .zip(p_true.as_slice())
            .map(|(a, p)| a + nu * p)
            .collect(),
    )
}

/// Result of [`minimize_pointwise_risk`].
#[derive(Debug, Clone)]
pub struct PointwiseOptimum {
    pub concentration: ConcentrationVector,
    pub risk: f64,
    pub iterations: usize,
    pub gradient_norm: f64,
}

/// Minimises β ↦ (1/n) Σᵢ KL(Dir(β) ‖ Dir(α + ν e_{yᵢ})) over a single free
/// concentration β (no network), by Fisher-preconditioned descent with a
/// backtracking line search started from β = α.
pub fn minimize_pointwise_risk(
    alpha: &ConcentrationVector,
    labels: &[usize],
    nu: f64,
    max_iter: usize,
) -> Result<PointwiseOptimum> {
    check_nu(nu)?;
    if labels.is_empty() {
        return Err(Error::Empty("label sequence"));
    }
    let k = alpha.len();
    let mut freq = vec![0.0; k];
    for &y in labels {
        if y >= k {
            return Err(Error::IndexOutOfRange { index: y, len: k });
        }
        freq[y] += 1.0;
    }
    let n = labels.len() as f64;
    freq.iter_mut().for_each(|f| *f /= n);
    let targets: Vec<Vec<f64>> = (0..k)
        .map(|y| {
            let mut t = alpha.as_slice().to_vec();
            t[y] += nu;
            t
        })
        .collect();
    let risk = |beta: &[f64]| -> f64 {
        freq.iter()
            .zip(&targets)
            .filter(|(f, _)| **f > 0.0)
            .map(|(f, t)| f * kl_slices(beta, t))
            .sum()
    };
    // The gradient of KL(β ‖ γ) is linear in γ, so the mean gradient is the
    // gradient towards the frequency-weighted target.
    let mean_target: Vec<f64> = alpha
        .as_slice()
        .iter()
        .zip(&freq)
        .map(|(a, f)| a + nu * f)
        .collect();

    let mut beta = alpha.as_slice().to_vec();
    let mut current = risk(&beta);
    let mut grad = vec![0.0; k];
    let mut iterations = 0;
    for _ in 0..max_iter {
        kl_gradient(&beta, &mean_target, &mut grad);
        if grad.iter().all(|g| g.abs() < 1e-14) {
            break;
        }
        iterations += 1;
        let direction = fisher_solve(&beta, &grad);
        let slope: f64 = grad.iter().zip(&direction).map(|(g, d)| g * d).sum();
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let candidate: Vec<f64> = beta
                .iter()
                .zip(&direction)
                .map(|(b, d)| b - step * d)
                .collect();
            if candidate.iter().all(|c| c.is_finite() && *c > 0.0) {
                let value = risk(&candidate);
                if value <= current - 1e-4 * step * slope {
                    beta = candidate;
                    current = value;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    kl_gradient(&beta, &mean_target, &mut grad);
    Ok(PointwiseOptimum {
        concentration: ConcentrationVector::new(beta)?,
        risk: current,
        iterations,
        gradient_norm: grad.iter().map(|g| g * g).sum::<f64>().sqrt(),
    })
}

/// Solves F d = g for the Dirichlet Fisher matrix F = diag(ψ′(β)) − ψ′(β₀) 11ᵀ.
fn fisher_solve(beta: &[f64], g: &[f64]) -> Vec<f64> {
    let c = trigamma_pos(beta.iter().sum());
    let inv_diag: Vec<f64> = beta.iter().map(|&b| 1.0 / trigamma_pos(b)).collect();
    let dg: Vec<f64> = inv_diag.iter().zip(g).map(|(d, g)| d * g).collect();
    let sum_inv: f64 = inv_diag.iter().sum();
    let sum_dg: f64 = dg.iter().sum();
    let scale = c * sum_dg / (1.0 - c * sum_inv);
    dg.iter()
        .zip(&inv_diag)
        .map(|(x, d)| x + scale * d)
        .collect()
}

fn check_anneal(anneal_factor: f64) -> Result<()> {
    if (0.0..=1.0).contains(&anneal_factor) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "anneal factor must lie in [0, 1], got {anneal_factor}"
        )))
    }
}

fn check_nu(nu: f64) -> Result<()> {
    if nu.is_finite() && nu > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "temperature must be positive, got {nu}"
        )))
    }
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            expected: a,
            found: b,
        })
    }
}

fn ln_beta_slice(v: &[f64]) -> f64 {
    v.iter().map(|&x| ln_gamma_pos(x)).sum::<f64>() - ln_gamma_pos(v.iter().sum())
}

pub(crate) fn kl_slices(from: &[f64], to: &[f64]) -> f64 {
    let psi_total = digamma_pos(from.iter().sum());
    let cross: f64 = from
        .iter()
        .zip(to)
        .map(|(&f, &t)| (f - t) * (digamma_pos(f) - psi_total))
        .sum();
    ln_beta_slice(to) - ln_beta_slice(from) + cross
}

/// ∂/∂β KL(Dir(β) ‖ Dir(γ)) = (β_j − γ_j) ψ′(β_j) − ψ′(β₀) Σₖ (β_k − γ_k).
fn kl_gradient(beta: &[f64], target: &[f64], out: &mut [f64]) {
    let psi1_total = trigamma_pos(beta.iter().sum());
    let gap: f64 = beta.iter().zip(target).map(|(b, t)| b - t).sum();
    for ((o, &b), &t) in out.iter_mut().zip(beta).zip(target) {
        *o = (b - t) * trigamma_pos(b) - psi1_total * gap;
    }
}

fn usable(beta: &[f64]) -> bool {
    beta.iter().all(|b| b.is_finite() && *b > 0.0)
}

/// Per-sample EDL loss data + reg·KL(β ‖ α); writes ∂/∂β into `grad` when given.
pub(crate) fn edl_sample_terms(
    beta: &[f64],
    alpha: &[f64],
    y: usize,
    reg: f64,
    grad: Option<&mut [f64]>,
) -> f64 {
    if !usable(beta) {
        return f64::NAN;
    }
    let total: f64 = beta.iter().sum();
    let mut loss = digamma_pos(total) - digamma_pos(beta[y]);
    if reg != 0.0 {
        loss += reg * kl_slices(beta, alpha);
    }
    if let Some(grad) = grad {
        let psi1_total = trigamma_pos(total);
        if reg != 0.0 {
            kl_gradient(beta, alpha, grad);
            grad.iter_mut().for_each(|g| *g *= reg);
        } else {
            grad.iter_mut().for_each(|g| *g = 0.0);
        }
        for g in grad.iter_mut() {
            *g += psi1_total;
        }
        grad[y] -= trigamma_pos(beta[y]);
    }
    loss
}

/// Per-sample KL(β ‖ α + ν e_y); writes ∂/∂β into `grad` when given.
pub(crate) fn tempered_kl_terms(
    beta: &[f64],
    alpha: &[f64],
    y: usize,
    nu: f64,
    grad: Option<&mut [f64]>,
) -> f64 {
    if !usable(beta) {
        return f64::NAN;
    }
    let mut target = alpha.to_vec();
    target[y] += nu;
    if let Some(grad) = grad {
        kl_gradient(beta, &target, grad);
    }
    kl_slices(beta, &target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dirichlet::RandomSeed;
    use crate::mlp::{standard_specs, EvidenceActivation, HeadKind, LayerSpec, Nonlinearity};
    use rand::Rng;

    fn cv(values: &[f64]) -> ConcentrationVector {
        ConcentrationVector::new(values.to_vec()).unwrap()
    }

    #[test]
    fn data_term_examples() {
        assert!((edl_data_term(&cv(&[1.0, 1.0]), 0).unwrap() - 1.0).abs() < 1e-14);
        assert!((edl_data_term(&cv(&[2.0, 1.0]), 0).unwrap() - 0.5).abs() < 1e-14);
        let confident = edl_data_term(&cv(&[101.0, 1.0]), 0).unwrap();
        assert!(confident > 0.0 && confident < 0.02);
        assert!(edl_data_term(&cv(&[102.0, 1.0]), 0).unwrap() < confident);
        assert!(edl_data_term(&cv(&[101.0, 2.0]), 0).unwrap() > confident);
        assert!(edl_data_term(&cv(&[1.0, 1.0]), 2).is_err());
    }

    #[test]
    fn data_term_matches_monte_carlo() {
        let beta = cv(&[101.0, 1.0]);
        let draws = beta.sample_ln(200_000, RandomSeed(17)).unwrap();
        let mc = -draws.iter().map(|l| l[0]).sum::<f64>() / draws.len() as f64;
        let exact = edl_data_term(&beta, 0).unwrap();
        assert!((mc - exact).abs() < 5e-4, "mc {mc} exact {exact}");
    }

    #[test]
    fn anneal_schedule() {
        assert_eq!(anneal_coefficient(0, 10).unwrap(), 0.0);
        assert_eq!(anneal_coefficient(5, 10).unwrap(), 0.5);
        assert_eq!(anneal_coefficient(25, 10).unwrap(), 1.0);
        assert_eq!(anneal_coefficient(0, 0).unwrap(), 1.0);
        assert!(anneal_coefficient(-1, 10).is_err());
    }

    #[test]
    fn config_resolves_temperature() {
        let alpha = ConcentrationVector::ones(3).unwrap();
        let c = EdlLossConfig::new(alpha.clone(), Some(0.25), None, 10).unwrap();
        assert_eq!(c.nu, 4.0);
        let c = EdlLossConfig::new(alpha.clone(), None, None, 10).unwrap();
        assert_eq!((c.lambda, c.nu), (1.0, 1.0));
        assert!(EdlLossConfig::new(alpha.clone(), Some(0.5), Some(3.0), 10).is_err());
        assert!(EdlLossConfig::new(alpha.clone(), Some(0.5), Some(2.0), 10).is_ok());
        assert!(EdlLossConfig::new(alpha, Some(-1.0), None, 10).is_err());
    }

    #[test]
    fn oracle_concentration_examples() {
        let p = ProbabilityVector::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(
            oracle_concentration(&p, &cv(&[1.0, 1.0]), 2.0).unwrap(),
            cv(&[2.0, 2.0])
        );
        let alpha = ConcentrationVector::ones(10).unwrap();
        let mut rng = RandomSeed(3).rng();
        for _ in 0..20 {
            let raw: Vec<f64> = (0..10).map(|_| rng.random::<f64>()).collect();
            let s: f64 = raw.iter().sum();
            let p = ProbabilityVector::new(raw.iter().map(|r| r / s).collect()).unwrap();
            let v = oracle_concentration(&p, &alpha, 1.0).unwrap().vacuity();
            assert!((v - 10.0 / 11.0).abs() < 1e-14);
        }
        let hot = ProbabilityVector::one_hot(1, 3).unwrap();
        let alpha3 = ConcentrationVector::ones(3).unwrap();
        assert_eq!(
            oracle_concentration(&hot, &alpha3, 1.0).unwrap(),
            crate::conjugate::icd_posterior(&alpha3, 1, 1.0).unwrap()
        );
    }

    /// A single identity layer with zero weights whose biases are chosen so
    /// that softplus(bias) equals the requested evidence.
    fn constant_evidence_net(evidence: &[f64]) -> Mlp {
        let k = evidence.len();
        let spec = [LayerSpec {
            input_dim: 1,
            output_dim: k,
            nonlinearity: Nonlinearity::Identity,
        }];
        let mut mlp = Mlp::zeros(&spec, HeadKind::Evidence(EvidenceActivation::Softplus)).unwrap();
        let mut params = vec![0.0; k];
        params.extend(evidence.iter().map(|&e| e.exp_m1().ln()));
        mlp.set_parameters(&params).unwrap();
        mlp
    }

    #[test]
    fn zero_evidence_loss_is_pure_data_term() {
        let alpha = cv(&[2.0, 1.0, 1.0]);
        // softplus is strictly positive, so use the conjugate closed form directly.
        let betas = vec![alpha.clone(); 3];
        let labels = [0, 1, 2];
        let loss = edl_loss_from_concentrations(&betas, &labels, &alpha, 7.0, 1.0).unwrap();
        let want: f64 = labels
            .iter()
            .map(|&y| edl_data_term(&alpha, y).unwrap())
            .sum();
        assert!((loss - want).abs() < 1e-13);
        let xs = vec![vec![0.0]; 3];
        let batch = Batch::new(&xs, &labels).unwrap();
        let net = constant_evidence_net(&[0.3, 0.4, 0.5]);
        let config = EdlLossConfig::new(alpha.clone(), Some(2.0), None, 0).unwrap();
        let betas = batch_concentrations(&net, &batch, &alpha).unwrap();
        let data_only: f64 = betas
            .iter()
            .zip(&labels)
            .map(|(b, &y)| edl_data_term(b, y).unwrap())
            .sum();
        assert!((edl_loss(&net, &batch, &config, 0.0).unwrap() - data_only).abs() < 1e-13);
    }

    #[test]
    fn interpolation_closed_forms() {
        let alpha = cv(&[1.0, 1.5]);
        let nu = 3.0;
        let labels = [0usize, 1, 1];
        let betas: Vec<ConcentrationVector> = labels
            .iter()
            .map(|&y| crate::conjugate::icd_posterior(&alpha, y, nu).unwrap())
            .collect();
        let kl_part = edl_loss_from_concentrations(&betas, &labels, &alpha, 1.0, 1.0).unwrap()
            - edl_loss_from_concentrations(&betas, &labels, &alpha, 1.0, 0.0).unwrap();
        let want_kl: f64 = betas.iter().map(|b| dirichlet_kl(b, &alpha).unwrap()).sum();
        assert!((kl_part - want_kl).abs() < 1e-12);
        let data = edl_loss_from_concentrations(&betas, &labels, &alpha, 1.0, 0.0).unwrap();
        let want_data: f64 = labels
            .iter()
            .map(|&y| digamma_pos(alpha.total() + nu) - digamma_pos(alpha.as_slice()[y] + nu))
            .sum();
        assert!((data - want_data).abs() < 1e-12);
        assert!(
            tempered_kl_from_concentrations(&betas, &labels, &alpha, nu)
                .unwrap()
                .abs()
                < 1e-12
        );
        for b in &betas {
            assert!((b.vacuity() - 2.0 / (alpha.total() + nu)).abs() < 1e-15);
        }
    }

    #[test]
    fn interpolating_network_has_zero_risk() {
        let nu = 2.0;
        let net = constant_evidence_net(&[nu, 1e-300]);
        let alpha = cv(&[1.0, 1.0]);
        let xs = vec![vec![0.5]; 4];
        let ys = vec![0; 4];
        let batch = Batch::new(&xs, &ys).unwrap();
        assert!(empirical_risk(&net, &batch, &alpha, nu).unwrap().abs() < 1e-12);
    }

    #[test]
    fn risk_is_a_mean() {
        let mlp = Mlp::new(
            &standard_specs(2, &[6], 3),
            HeadKind::Evidence(EvidenceActivation::Softplus),
            RandomSeed(5),
        )
        .unwrap();
        let alpha = ConcentrationVector::ones(3).unwrap();
        let one = vec![vec![0.2, -0.7]];
        let many = vec![vec![0.2, -0.7]; 5];
        let single = empirical_risk(&mlp, &Batch::new(&one, &[2]).unwrap(), &alpha, 1.5).unwrap();
        let repeated =
            empirical_risk(&mlp, &Batch::new(&many, &[2; 5]).unwrap(), &alpha, 1.5).unwrap();
        assert!((single - repeated).abs() < 1e-14);
        assert!(single >= 0.0);
    }

    #[test]
    fn sample_gradients_match_closed_form_differences() {
        let alpha = [1.0, 2.0, 0.5];
        let beta = [1.7, 2.9, 3.3];
        let h = 1e-6;
        for reg in [0.0, 0.8] {
            let mut grad = [0.0; 3];
            edl_sample_terms(&beta, &alpha, 1, reg, Some(&mut grad));
            for j in 0..3 {
                let mut up = beta;
                let mut down = beta;
                up[j] += h;
                down[j] -= h;
                let fd = (edl_sample_terms(&up, &alpha, 1, reg, None)
                    - edl_sample_terms(&down, &alpha, 1, reg, None))
                    / (2.0 * h);
                assert!((fd - grad[j]).abs() < 1e-7, "reg {reg} j {j}");
            }
        }
        let mut grad = [0.0; 3];
        tempered_kl_terms(&beta, &alpha, 2, 4.0, Some(&mut grad));
        for j in 0..3 {
            let mut up = beta;
            let mut down = beta;
            up[j] += h;
            down[j] -= h;
            let fd = (tempered_kl_terms(&up, &alpha, 2, 4.0, None)
                - tempered_kl_terms(&down, &alpha, 2, 4.0, None))
                / (2.0 * h);
            assert!((fd - grad[j]).abs() < 1e-7);
        }
    }

    #[test]
    fn pointwise_minimiser_small_case() {
        let alpha = cv(&[1.0, 1.0, 1.0]);
        let labels = [0, 0, 1, 2, 0, 1];
        let opt = minimize_pointwise_risk(&alpha, &labels, 2.0, 100).unwrap();
        let want = [1.0 + 2.0 * 0.5, 1.0 + 2.0 / 3.0, 1.0 + 2.0 / 6.0];
        for (g, w) in opt.concentration.as_slice().iter().zip(want) {
            assert!((g - w).abs() < 1e-10);
        }
        assert!(minimize_pointwise_risk(&alpha, &[], 1.0, 10).is_err());
    }
}
