//! Training, evaluation and ablation runs driven by a [`RunConfig`].
//!
//! The `cmd_*` functions write their outputs to a directory:
//!
//! | file               | written by     | contents                                  |
//! |--------------------|----------------|-------------------------------------------|
//! | `config.txt`       | train          | resolved configuration                    |
//! | `train.csv` etc.   | train          | generated train / ID test / OOD datasets  |
//! | `classifier.ckpt`  | train          | network checkpoint                        |
//! | `density.ckpt`     | train (DIP)    | density model and normaliser              |
//! | `train_log.csv`    | train          | `epoch,loss,anneal_factor`                |
//! | `metrics.csv`      | eval           | one report row                            |
//! | `scores.csv`       | eval           | per-sample `split,score,max_prob`         |
//! | `ablation.csv`     | ablate         | one report row per toggle combination     |

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use crate::config::{DatasetKind, DensityKind, Mode, RunConfig};
use crate::data::{
    make_blobs, make_ood_shift, make_two_moons, read_csv, ring_centers, write_csv, Dataset,
};
use crate::density::{
    density_from_text, density_to_text, gda_fit, gmm_fit_em, kde_build, normalizer_fit,
    DensityModel, Fitted, LogLikelihoodNormalizer,
};
use crate::dip::{edl_posterior, ood_score, DipConfig, DipModel, DipPosterior};
use crate::dirichlet::RandomSeed;
use crate::error::{Error, Result};
use crate::metrics::{reports_to_csv, score_dump_csv, MetricsReport, ScoredSample};
use crate::mlp::{optimizer_step, AdamState, Batch, HeadKind, LossKind, Mlp};
use crate::objective::anneal_coefficient;

pub const CONFIG_FILE: &str = "config.txt";
pub const TRAIN_FILE: &str = "train.csv";
pub const TEST_ID_FILE: &str = "test_id.csv";
pub const TEST_OOD_FILE: &str = "test_ood.csv";
pub const CLASSIFIER_FILE: &str = "classifier.ckpt";
pub const DENSITY_FILE: &str = "density.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SCORES_FILE: &str = "scores.csv";
pub const ABLATION_FILE: &str = "ablation.csv";

// Independent random streams derived from the run seed.
const STREAM_TRAIN_DATA: u64 = 1;
const STREAM_TEST_DATA: u64 = 2;
const STREAM_OOD_DATA: u64 = 3;
const STREAM_INIT: u64 = 4;
const STREAM_SHUFFLE: u64 = 5;
const STREAM_DENSITY: u64 = 6;

/// Generated train, ID test and OOD sets.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub test_id: Dataset,
    pub test_ood: Dataset,
}

pub fn generate_splits(config: &RunConfig) -> Result<Splits> {
    let seed = RandomSeed(config.seed);
    let (train, test_id) = match config.dataset {
        DatasetKind::Blobs => {
            let centers = ring_centers(config.classes, config.blob_radius);
            let k = config.classes;
            (
                make_blobs(
                    k,
                    config.n_train / k,
                    &centers,
                    config.blob_sigma,
                    seed.derive(STREAM_TRAIN_DATA),
                )?,
                make_blobs(
                    k,
                    config.n_test / k,
                    &centers,
                    config.blob_sigma,
                    seed.derive(STREAM_TEST_DATA),
                )?,
            )
        }
        DatasetKind::Moons => (
            make_two_moons(
                config.n_train,
                config.moons_noise,
                seed.derive(STREAM_TRAIN_DATA),
            )?,
            make_two_moons(
                config.n_test,
                config.moons_noise,
                seed.derive(STREAM_TEST_DATA),
            )?,
        ),
    };
    let test_ood = make_ood_shift(
        &test_id,
        config.n_ood,
        &config.ood_shift,
        config.ood_scale,
        seed.derive(STREAM_OOD_DATA),
    )?;
    Ok(Splits {
        train,
        test_id,
        test_ood,
    })
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub anneal_factor: f64,
}

/// Trains the network for the configured mode: a probability head with
/// cross-entropy for DIP, an evidence head with the annealed EDL loss for EDL.
pub fn train_network(config: &RunConfig, train: &Dataset) -> Result<(Mlp, Vec<EpochRecord>)> {
    let labels = train.require_labels("training")?;
    if let Some(&bad) = labels.iter().find(|&&y| y >= config.classes) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            len: config.classes,
        });
    }
    let seed = RandomSeed(config.seed);
    let head = match config.mode {
        Mode::Dip => HeadKind::Probability,
        Mode::Edl => HeadKind::Evidence(config.evidence_activation),
    };
    let mut net = Mlp::standard(
        train.dim(),
        &config.hidden,
        config.classes,
        head,
        seed.derive(STREAM_INIT),
    )?;
    let mut adam = AdamState::new(&net);
    let mut rng = seed.derive(STREAM_SHUFFLE).rng();
    let alpha = config.alpha()?;
    let features = train.features();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    let mut batch_x: Vec<Vec<f64>> = Vec::with_capacity(config.batch_size);
    let mut batch_y: Vec<usize> = Vec::with_capacity(config.batch_size);
    for epoch in 0..config.epochs {
        let anneal = anneal_coefficient(epoch as i64, config.anneal_epochs)?;
        let loss_kind = match config.mode {
            Mode::Dip => LossKind::CrossEntropy,
            Mode::Edl => LossKind::Edl {
                alpha: alpha.clone(),
                lambda: config.lambda,
                anneal,
            },
        };
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            batch_x.clear();
            batch_y.clear();
            batch_x.extend(chunk.iter().map(|&i| features[i].clone()));
            batch_y.extend(chunk.iter().map(|&i| labels[i]));
            let batch = Batch::new(&batch_x, &batch_y)?;
            let (loss, grads) = net.gradient(&batch, &loss_kind).map_err(|e| match e {
                Error::NonFinite(what) => Error::NonFinite(format!("{what} at epoch {epoch}")),
                other => other,
            })?;
            optimizer_step(&mut net, &grads, &mut adam, config.lr)
                .map_err(|e| Error::NonFinite(format!("optimizer step at epoch {epoch}: {e}")))?;
            total += loss * chunk.len() as f64;
        }
        let loss = total / train.len() as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
        }
        log.push(EpochRecord {
            epoch,
            loss,
            anneal_factor: anneal,
        });
    }
    Ok((net, log))
}

/// Fits the configured density estimator and the z-score normaliser on the
/// training features.
pub fn fit_density(
    config: &RunConfig,
    train: &Dataset,
) -> Result<Fitted<(DensityModel, LogLikelihoodNormalizer)>> {
    let features = train.features();
    let fitted: Fitted<DensityModel> = match config.density {
        DensityKind::Gda => {
            let f = gda_fit(features, train.require_labels("training")?, config.classes)?;
            Fitted {
                model: DensityModel::Gmm(f.model),
                warnings: f.warnings,
            }
        }
        DensityKind::Gmm => {
            let f = gmm_fit_em(
                features,
                config.gmm_components(),
                RandomSeed(config.seed).derive(STREAM_DENSITY),
                config.gmm_tol,
                config.gmm_max_iter,
            )?;
            Fitted {
                model: DensityModel::Gmm(f.model),
                warnings: f.warnings,
            }
        }
        DensityKind::Kde => {
            let f = kde_build(features, config.kde_bandwidth)?;
            Fitted {
                model: DensityModel::Kde(f.model),
                warnings: f.warnings,
            }
        }
    };
    let logliks = features
        .iter()
        .map(|x| fitted.model.log_density(x))
        .collect::<Result<Vec<f64>>>()?;
    let normalizer = normalizer_fit(&logliks)?;
    Ok(Fitted {
        model: (fitted.model, normalizer),
        warnings: fitted.warnings,
    })
}

/// A trained predictor of either mode.
#[derive(Debug, Clone, PartialEq)]
pub enum Predictor {
    Dip(DipModel),
    Edl {
        network: Mlp,
        alpha: crate::ConcentrationVector,
    },
}

impl Predictor {
    pub fn name(&self) -> &'static str {
        match self {
            Predictor::Dip(_) => "dip",
            Predictor::Edl { .. } => "edl",
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Predictor::Dip(m) => m.classifier.input_dim(),
            Predictor::Edl { network, .. } => network.input_dim(),
        }
    }

    pub fn posterior(&self, x: &[f64]) -> Result<DipPosterior> {
        match self {
            Predictor::Dip(m) => Ok(m.predict(x)?.posterior),
            Predictor::Edl { network, alpha } => edl_posterior(network, alpha, x),
        }
    }
}

pub fn dip_config(config: &RunConfig, n_train: usize) -> Result<DipConfig> {
    let mut dip = DipConfig::new(config.alpha()?, n_train)?.with_toggles(
        config.use_n,
        config.use_de,
        config.use_nn,
    );
    dip.evidence_clamp = config.evidence_clamp;
    dip.validate()?;
    Ok(dip)
}

/// Everything produced by training, held in memory.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub predictor: Predictor,
    pub log: Vec<EpochRecord>,
    pub warnings: Vec<String>,
}

pub fn train_model(config: &RunConfig, train: &Dataset) -> Result<TrainedModel> {
    let (network, log) = train_network(config, train)?;
    match config.mode {
        Mode::Edl => Ok(TrainedModel {
            predictor: Predictor::Edl {
                network,
                alpha: config.alpha()?,
            },
            log,
            warnings: Vec::new(),
        }),
        Mode::Dip => {
            let fitted = fit_density(config, train)?;
            let (density, normalizer) = fitted.model;
            let model = DipModel::new(
                network,
                density,
                normalizer,
                dip_config(config, train.len())?,
                config.density_clamp,
            )?;
            Ok(TrainedModel {
                predictor: Predictor::Dip(model),
                log,
                warnings: fitted.warnings,
            })
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn train_log_csv(log: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,loss,anneal_factor\n");
    for r in log {
        out.push_str(&format!(
            "{},{:.16e},{:.16e}\n",
            r.epoch, r.loss, r.anneal_factor
        ));
    }
    out
}

/// Summary returned by [`cmd_train`].
#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub out_dir: PathBuf,
    pub final_loss: Option<f64>,
    pub warnings: Vec<String>,
}

/// Generates the datasets, trains, and writes checkpoints, data and log.
pub fn cmd_train(config: &RunConfig, out_dir: &Path) -> Result<TrainSummary> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let splits = generate_splits(config)?;
    write_file(&out_dir.join(CONFIG_FILE), &config.to_text())?;
    write_csv(&out_dir.join(TRAIN_FILE), &splits.train)?;
    write_csv(&out_dir.join(TEST_ID_FILE), &splits.test_id)?;
    write_csv(&out_dir.join(TEST_OOD_FILE), &splits.test_ood)?;
    let trained = train_model(config, &splits.train)?;
    match &trained.predictor {
        Predictor::Dip(model) => {
            write_file(
                &out_dir.join(CLASSIFIER_FILE),
                &model.classifier.to_checkpoint(),
            )?;
            write_file(
                &out_dir.join(DENSITY_FILE),
                &density_to_text(&model.density, &model.normalizer),
            )?;
        }
        Predictor::Edl { network, .. } => {
            write_file(&out_dir.join(CLASSIFIER_FILE), &network.to_checkpoint())?;
        }
    }
    write_file(&out_dir.join(TRAIN_LOG_FILE), &train_log_csv(&trained.log))?;
    Ok(TrainSummary {
        out_dir: out_dir.to_path_buf(),
        final_loss: trained.log.last().map(|r| r.loss),
        warnings: trained.warnings,
    })
}

/// Rebuilds a predictor from checkpoints written by [`cmd_train`].
pub fn load_predictor(config: &RunConfig, checkpoint_dir: &Path) -> Result<Predictor> {
    let path = checkpoint_dir.join(CLASSIFIER_FILE);
    let network = Mlp::from_checkpoint(&read_file(&path)?, &path.display().to_string())?;
    if network.output_dim() != config.classes {
        return Err(Error::DimensionMismatch {
            expected: config.classes,
            found: network.output_dim(),
        });
    }
    match config.mode {
        Mode::Edl => Ok(Predictor::Edl {
            network,
            alpha: config.alpha()?,
        }),
        Mode::Dip => {
            let path = checkpoint_dir.join(DENSITY_FILE);
            let (density, normalizer) =
                density_from_text(&read_file(&path)?, &path.display().to_string())?;
            Ok(Predictor::Dip(DipModel::new(
                network,
                density,
                normalizer,
                dip_config(config, config.n_train)?,
                config.density_clamp,
            )?))
        }
    }
}

/// Scores every row of a dataset; labels are kept only for ID sets.
pub fn score_dataset(
    predictor: &Predictor,
    data: &Dataset,
    config: &RunConfig,
    keep_labels: bool,
) -> Result<Vec<ScoredSample>> {
    if data.dim() != predictor.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: predictor.input_dim(),
            found: data.dim(),
        });
    }
    let labels = if keep_labels {
        Some(data.require_labels("ID")?)
    } else {
        None
    };
    data.features()
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let post = predictor.posterior(x)?;
            Ok(ScoredSample {
                uncertainty: ood_score(&post, config.score),
                predictive: post.predictive,
                true_label: labels.map(|l| l[i]),
            })
        })
        .collect()
}

pub fn evaluate(
    predictor: &Predictor,
    config: &RunConfig,
    model_name: &str,
    id: (&str, &Dataset),
    ood: (&str, &Dataset),
) -> Result<(MetricsReport, Vec<ScoredSample>, Vec<ScoredSample>)> {
    let id_scores = score_dataset(predictor, id.1, config, true)?;
    let ood_scores = score_dataset(predictor, ood.1, config, false)?;
    let report = MetricsReport::compute(model_name, id.0, ood.0, &id_scores, &ood_scores)?;
    Ok((report, id_scores, ood_scores))
}

fn set_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Loads checkpoints, scores the ID and OOD CSVs, and writes the metrics
/// row and the per-sample score dump.
pub fn cmd_eval(
    config: &RunConfig,
    checkpoint_dir: &Path,
    id_path: &Path,
    ood_path: &Path,
    out_dir: &Path,
) -> Result<MetricsReport> {
    let predictor = load_predictor(config, checkpoint_dir)?;
    let id = read_csv(id_path)?;
    let ood = read_csv(ood_path)?;
    let (report, id_scores, ood_scores) = evaluate(
        &predictor,
        config,
        predictor.name(),
        (&set_name(id_path), &id),
        (&set_name(ood_path), &ood),
    )?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_file(
        &out_dir.join(METRICS_FILE),
        &reports_to_csv(std::slice::from_ref(&report))?,
    )?;
    write_file(
        &out_dir.join(SCORES_FILE),
        &score_dump_csv(&id_scores, &ood_scores),
    )?;
    Ok(report)
}

/// The seven ablation rows as (use_n, use_de, use_nn), full model fourth.
pub const ABLATION_ROWS: [(bool, bool, bool); 7] = [
    (true, true, false),
    (true, false, true),
    (false, true, true),
    (true, true, true),
    (true, false, false),
    (false, true, false),
    (false, false, true),
];

pub fn ablation_label((n, de, nn): (bool, bool, bool)) -> String {
    let mark = |on: bool| if on { '+' } else { '-' };
    format!("n{}de{}nn{}", mark(n), mark(de), mark(nn))
}

/// Trains one DIP model and evaluates every toggle combination on it.
/// When `sets` is `None` the configured generator supplies the ID and OOD data.
pub fn run_ablation(
    config: &RunConfig,
    sets: Option<(&Dataset, &Dataset)>,
) -> Result<Vec<MetricsReport>> {
    if config.mode != Mode::Dip {
        return Err(Error::config("mode", "the ablation grid needs mode=dip"));
    }
    let splits = generate_splits(config)?;
    let (id, ood) = sets.unwrap_or((&splits.test_id, &splits.test_ood));
    let trained = train_model(config, &splits.train)?;
    let Predictor::Dip(base) = trained.predictor else {
        unreachable!("mode is dip");
    };
    ABLATION_ROWS
        .iter()
        .map(|&toggles| {
            let mut model = base.clone();
            model.config = model.config.with_toggles(toggles.0, toggles.1, toggles.2);
            let (report, _, _) = evaluate(
                &Predictor::Dip(model),
                config,
                &ablation_label(toggles),
                ("id", id),
                ("ood", ood),
            )?;
            Ok(report)
        })
        .collect()
}

pub fn cmd_ablate(
    config: &RunConfig,
    sets: Option<(&Path, &Path)>,
    out_dir: &Path,
) -> Result<Vec<MetricsReport>> {
    let loaded = match sets {
        Some((id, ood)) => Some((read_csv(id)?, read_csv(ood)?)),
        None => None,
    };
    let mut reports = run_ablation(config, loaded.as_ref().map(|(a, b)| (a, b)))?;
    if let Some((id, ood)) = sets {
        for r in &mut reports {
            r.id_set = set_name(id);
            r.ood_set = set_name(ood);
        }
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_file(&out_dir.join(ABLATION_FILE), &reports_to_csv(&reports)?)?;
    Ok(reports)
}
