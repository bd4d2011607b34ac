use dip_edl::data::{make_blobs, GeneratorTruth};
use dip_edl::density::{gda_fit, gmm_fit_em, kde_build, BandwidthRule};
use dip_edl::dip::{dip_predict, DipConfig};
use dip_edl::dirichlet::dirichlet_kl;
use dip_edl::metrics::{aupr, auroc};
use dip_edl::mlp::{standard_specs, Batch, EvidenceActivation, HeadKind, LossKind, Mlp};
use dip_edl::objective::{
    edl_loss_from_concentrations, tempered_constant, tempered_kl_from_concentrations,
};
use dip_edl::{ConcentrationVector, ProbabilityVector, RandomSeed};
use proptest::prelude::*;

fn concentration(k: usize) -> impl Strategy<Value = ConcentrationVector> {
    prop::collection::vec(0.05f64..50.0, k).prop_map(|v| ConcentrationVector::new(v).unwrap())
}

fn pair() -> impl Strategy<Value = (ConcentrationVector, ConcentrationVector)> {
    (2usize..8).prop_flat_map(|k| (concentration(k), concentration(k)))
}

proptest! {
    #[test]
    fn kl_is_non_negative_and_zero_on_the_diagonal((a, b) in pair()) {
        prop_assert!(dirichlet_kl(&a, &b).unwrap() >= -1e-12);
        prop_assert!(dirichlet_kl(&a, &a).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn zero_density_reverts_to_the_prior(alpha in (2usize..12).prop_flat_map(concentration), n in 1usize..100_000, seed in any::<u64>()) {
        let k = alpha.len();
        let raw: Vec<f64> = (0..k).map(|i| 1.0 + ((seed >> (i % 60)) & 7) as f64).collect();
        let total: f64 = raw.iter().sum();
        let probs = ProbabilityVector::new(raw.iter().map(|r| r / total).collect()).unwrap();
        let config = DipConfig::new(alpha.clone(), n).unwrap();
        let post = dip_predict(&config, 0.0, &probs).unwrap();
        for (p, m) in post.predictive.as_slice().iter().zip(alpha.mean().as_slice()) {
            prop_assert!((p - m).abs() <= 1e-15);
        }
        prop_assert!((post.vacuity - k as f64 / alpha.total()).abs() <= 1e-15);
    }

    #[test]
    fn tempered_gap_matches_closed_form(
        (alpha, beta) in pair(),
        nu in 0.1f64..10.0,
        y in 0usize..2,
    ) {
        let tempered = tempered_kl_from_concentrations(std::slice::from_ref(&beta), &[y], &alpha, nu).unwrap();
        let edl = edl_loss_from_concentrations(std::slice::from_ref(&beta), &[y], &alpha, 1.0 / nu, 1.0).unwrap();
        let gap = tempered_constant(&alpha, &[y], nu).unwrap();
        prop_assert!((tempered - nu * edl - gap).abs() <= 1e-9 * (1.0 + tempered.abs()));
    }

    #[test]
    fn auroc_is_antisymmetric(
        id in prop::collection::vec(-5.0f64..5.0, 1..40),
        ood in prop::collection::vec(-5.0f64..5.0, 1..40),
    ) {
        let forward = auroc(&id, &ood).unwrap();
        let backward = auroc(&ood, &id).unwrap();
        prop_assert!((forward + backward - 1.0).abs() <= 1e-12);
        let pr = aupr(&id, &ood).unwrap();
        prop_assert!((0.0..=1.0).contains(&pr));
    }

    #[test]
    fn edl_gradient_is_affine_in_lambda(seed in any::<u64>(), lambda in 0.1f64..3.0) {
        let xs = vec![vec![0.3, -1.2], vec![1.1, 0.4], vec![-0.7, 0.9]];
        let ys = vec![0, 2, 1];
        let batch = Batch::new(&xs, &ys).unwrap();
        let net = Mlp::new(&standard_specs(2, &[4], 3), HeadKind::Evidence(EvidenceActivation::Softplus), RandomSeed(seed)).unwrap();
        let alpha = ConcentrationVector::ones(3).unwrap();
        let grad = |l: f64| {
            net.gradient(&batch, &LossKind::Edl { alpha: alpha.clone(), lambda: l, anneal: 1.0 }).unwrap().1.to_flat()
        };
        let (g0, g1, g2) = (grad(0.0), grad(lambda), grad(2.0 * lambda));
        for ((a, b), c) in g0.iter().zip(&g1).zip(&g2) {
            prop_assert!(((c - b) - (b - a)).abs() <= 1e-10 * (1.0 + c.abs()));
        }
    }
}

fn grid_integral(f: impl Fn(&[f64]) -> f64, lo: f64, hi: f64, steps: usize) -> f64 {
    let h = (hi - lo) / steps as f64;
    let mut total = 0.0;
    for i in 0..steps {
        for j in 0..steps {
            let x = [lo + (i as f64 + 0.5) * h, lo + (j as f64 + 0.5) * h];
            total += f(&x);
        }
    }
    total * h * h
}

#[test]
fn fitted_densities_integrate_to_one() {
    let centers = vec![vec![-2.0, 0.0], vec![2.0, 1.0]];
    let data = make_blobs(2, 150, &centers, 0.8, RandomSeed(3)).unwrap();
    let kde = kde_build(data.features(), BandwidthRule::Scott)
        .unwrap()
        .model;
    let gmm = gmm_fit_em(data.features(), 2, RandomSeed(4), 1e-8, 200)
        .unwrap()
        .model;
    let gda = gda_fit(data.features(), data.labels().unwrap(), 2)
        .unwrap()
        .model;
    let kde_mass = grid_integral(|x| kde.log_density(x).unwrap().exp(), -9.0, 9.0, 300);
    let gmm_mass = grid_integral(|x| gmm.log_density(x).unwrap().exp(), -9.0, 9.0, 300);
    let gda_mass = grid_integral(|x| gda.log_density(x).unwrap().exp(), -9.0, 9.0, 300);
    for mass in [kde_mass, gmm_mass, gda_mass] {
        assert!((mass - 1.0).abs() < 1e-3, "mass {mass}");
    }
}

#[test]
fn kde_error_shrinks_with_sample_size() {
    let centers = vec![vec![-1.5, 0.0], vec![1.5, 0.0]];
    let truth = GeneratorTruth::Blobs {
        centers: centers.clone(),
        sigma: 1.0,
    };
    let probes: Vec<[f64; 2]> = (0..8)
        .flat_map(|i| {
            (0..8).map(move |j| [-3.0 + 6.0 * i as f64 / 7.0, -2.0 + 4.0 * j as f64 / 7.0])
        })
        .collect();
    let errors: Vec<f64> = [250usize, 2_500, 25_000]
        .iter()
        .map(|&per_class| {
            let data =
                make_blobs(2, per_class, &centers, 1.0, RandomSeed(per_class as u64)).unwrap();
            let kde = kde_build(data.features(), BandwidthRule::Scott)
                .unwrap()
                .model;
            probes
                .iter()
                .map(|x| (kde.log_density(x).unwrap().exp() - truth.density(x).unwrap()).abs())
                .sum::<f64>()
                / probes.len() as f64
        })
        .collect();
    assert!(errors[1] < errors[0] && errors[2] < errors[1], "{errors:?}");
}

#[test]
fn prior_only_model_is_a_constant_predictor() {
    // Zero density everywhere: every test point returns the prior.
    let config = DipConfig::new(ConcentrationVector::ones(4).unwrap(), 500).unwrap();
    let probs = [
        vec![0.7, 0.1, 0.1, 0.1],
        vec![0.25; 4],
        vec![0.0, 0.0, 1.0, 0.0],
    ];
    let scores: Vec<f64> = probs
        .iter()
        .map(|p| {
            dip_predict(&config, 0.0, &ProbabilityVector::new(p.clone()).unwrap())
                .unwrap()
                .vacuity
        })
        .collect();
    assert!(scores.iter().all(|&v| v == 1.0));
    assert_eq!(auroc(&scores, &scores).unwrap(), 0.5);
}
