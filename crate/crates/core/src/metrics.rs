//! Classification and out-of-distribution detection metrics.
//!
//! OOD samples are the positive class. Scores are expected to be oriented so
//! that larger values mean "more likely OOD".

use crate::dirichlet::ProbabilityVector;
use crate::error::{Error, Result};

/// One evaluated input: its predictive, an OOD-oriented score, and its label
/// if it is in-distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSample {
    pub predictive: ProbabilityVector,
    pub uncertainty: f64,
    pub true_label: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BrierTarget {
    OneHot,
    Uniform,
}

pub fn accuracy(samples: &[ScoredSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("accuracy samples"));
    }
    let mut correct = 0usize;
    for s in samples {
        let y = s
            .true_label
            .ok_or_else(|| Error::InvalidArgument("accuracy needs labelled samples".into()))?;
        if s.predictive.argmax() == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

/// Mean over samples of Σₖ (pₖ − targetₖ)².
pub fn brier_score(samples: &[ScoredSample], target: BrierTarget) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("Brier samples"));
    }
    let mut total = 0.0;
    for s in samples {
        let p = s.predictive.as_slice();
        let k = p.len();
        total += match target {
            BrierTarget::Uniform => {
                let u = 1.0 / k as f64;
                p.iter().map(|v| (v - u).powi(2)).sum::<f64>()
            }
            BrierTarget::OneHot => {
                let y = s.true_label.ok_or_else(|| {
                    Error::InvalidArgument("one-hot Brier score needs labels".into())
                })?;
                if y >= k {
                    return Err(Error::IndexOutOfRange { index: y, len: k });
                }
                p.iter()
                    .enumerate()
                    .map(|(j, v)| (v - if j == y { 1.0 } else { 0.0 }).powi(2))
                    .sum::<f64>()
            }
        };
    }
    Ok(total / samples.len() as f64)
}

fn check_scores(id: &[f64], ood: &[f64]) -> Result<()> {
    if id.is_empty() {
        return Err(Error::Empty("ID scores"));
    }
    if ood.is_empty() {
        return Err(Error::Empty("OOD scores"));
    }
    if id.iter().chain(ood).any(|s| s.is_nan()) {
        return Err(Error::NonFinite("score".into()));
    }
    Ok(())
}

/// Mann–Whitney estimate of P(ood > id) + ½ P(ood = id), ties at average rank.
pub fn auroc(id_scores: &[f64], ood_scores: &[f64]) -> Result<f64> {
    check_scores(id_scores, ood_scores)?;
    let mut all: Vec<(f64, bool)> = id_scores
        .iter()
        .map(|&s| (s, false))
        .chain(ood_scores.iter().map(|&s| (s, true)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut ood_rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // Ranks i+1..=j share their average.
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        let positives = all[i..j].iter().filter(|(_, ood)| *ood).count();
        ood_rank_sum += avg_rank * positives as f64;
        i = j;
    }
    let n_ood = ood_scores.len() as f64;
    let n_id = id_scores.len() as f64;
    Ok((ood_rank_sum - n_ood * (n_ood + 1.0) / 2.0) / (n_ood * n_id))
}

/// Step-wise area under the precision–recall curve, Σ (Rᵢ − Rᵢ₋₁) Pᵢ over
/// descending thresholds; tied scores form a single threshold.
pub fn aupr(id_scores: &[f64], ood_scores: &[f64]) -> Result<f64> {
    check_scores(id_scores, ood_scores)?;
    let mut all: Vec<(f64, bool)> = id_scores
        .iter()
        .map(|&s| (s, false))
        .chain(ood_scores.iter().map(|&s| (s, true)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let n_ood = ood_scores.len() as f64;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            if all[j].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        let recall = tp as f64 / n_ood;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    Ok(area)
}

/// One row of the evaluation report.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub model: String,
    pub id_set: String,
    pub ood_set: String,
    pub accuracy: f64,
    pub brier_id: f64,
    pub brier_ood: f64,
    /// Computed from [`ScoredSample::uncertainty`].
    pub auroc: f64,
    pub aupr: f64,
    pub n_id: usize,
    pub n_ood: usize,
    /// Computed from the negated maximum predictive probability.
    pub auroc_max_prob: f64,
    pub aupr_max_prob: f64,
}

pub const REPORT_COLUMNS: [&str; 12] = [
    "model",
    "id_set",
    "ood_set",
    "accuracy",
    "brier_id",
    "brier_ood",
    "auroc",
    "aupr",
    "n_id",
    "n_ood",
    "auroc_max_prob",
    "aupr_max_prob",
];

impl MetricsReport {
    pub fn compute(
        model: impl Into<String>,
        id_set: impl Into<String>,
        ood_set: impl Into<String>,
        id: &[ScoredSample],
        ood: &[ScoredSample],
    ) -> Result<Self> {
        if ood.iter().any(|s| s.true_label.is_some()) {
            return Err(Error::InvalidArgument(
                "OOD samples must be unlabelled".into(),
            ));
        }
        let id_u: Vec<f64> = id.iter().map(|s| s.uncertainty).collect();
        let ood_u: Vec<f64> = ood.iter().map(|s| s.uncertainty).collect();
        let id_m: Vec<f64> = id.iter().map(|s| -s.predictive.max()).collect();
        let ood_m: Vec<f64> = ood.iter().map(|s| -s.predictive.max()).collect();
        Ok(Self {
            model: model.into(),
            id_set: id_set.into(),
            ood_set: ood_set.into(),
            accuracy: accuracy(id)?,
            brier_id: brier_score(id, BrierTarget::OneHot)?,
            brier_ood: brier_score(ood, BrierTarget::Uniform)?,
            auroc: auroc(&id_u, &ood_u)?,
            aupr: aupr(&id_u, &ood_u)?,
            n_id: id.len(),
            n_ood: ood.len(),
            auroc_max_prob: auroc(&id_m, &ood_m)?,
            aupr_max_prob: aupr(&id_m, &ood_m)?,
        })
    }

    pub fn csv_record(&self) -> Vec<String> {
        let r = |v: f64| format!("{v:.6}");
        vec![
            self.model.clone(),
            self.id_set.clone(),
            self.ood_set.clone(),
            r(self.accuracy),
            r(self.brier_id),
            r(self.brier_ood),
            r(self.auroc),
            r(self.aupr),
            self.n_id.to_string(),
            self.n_ood.to_string(),
            r(self.auroc_max_prob),
            r(self.aupr_max_prob),
        ]
    }
}

/// Header plus one row per report.
pub fn reports_to_csv(reports: &[MetricsReport]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| Error::InvalidArgument(format!("CSV encoding failed: {e}"));
    writer.write_record(REPORT_COLUMNS).map_err(to_err)?;
    for report in reports {
        writer.write_record(report.csv_record()).map_err(to_err)?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::InvalidArgument(format!("CSV encoding failed: {e}")))?;
    Ok(String::from_utf8(bytes).expect("CSV output is UTF-8"))
}

/// Per-sample dump with columns `split,score,max_prob`.
pub fn score_dump_csv(id: &[ScoredSample], ood: &[ScoredSample]) -> String {
    let mut out = String::from("split,score,max_prob\n");
    for (split, samples) in [("id", id), ("ood", ood)] {
        for s in samples {
            out.push_str(&format!(
                "{split},{:.16e},{:.16e}\n",
                s.uncertainty,
                s.predictive.max()
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dirichlet::RandomSeed;
    use rand::Rng;

    fn sample(p: Vec<f64>, u: f64, y: Option<usize>) -> ScoredSample {
        ScoredSample {
            predictive: ProbabilityVector::new(p).unwrap(),
            uncertainty: u,
            true_label: y,
        }
    }

    #[test]
    fn accuracy_examples() {
        let perfect: Vec<_> = (0..3)
            .map(|y| {
                sample(
                    ProbabilityVector::one_hot(y, 3).unwrap().into_inner(),
                    0.0,
                    Some(y),
                )
            })
            .collect();
        assert_eq!(accuracy(&perfect).unwrap(), 1.0);
        let uniform: Vec<_> = (0..100)
            .map(|i| sample(vec![0.1; 10], 0.0, Some(i % 10)))
            .collect();
        assert_eq!(accuracy(&uniform).unwrap(), 0.1);
        let half = vec![
            sample(vec![0.9, 0.1], 0.0, Some(0)),
            sample(vec![0.9, 0.1], 0.0, Some(1)),
        ];
        assert_eq!(accuracy(&half).unwrap(), 0.5);
        assert!(accuracy(&[]).is_err());
        assert!(accuracy(&[sample(vec![0.5, 0.5], 0.0, None)]).is_err());
    }

    #[test]
    fn brier_examples() {
        let uniform = vec![sample(vec![0.1; 10], 0.0, Some(4))];
        assert!((brier_score(&uniform, BrierTarget::OneHot).unwrap() - 0.9).abs() < 1e-15);
        assert_eq!(brier_score(&uniform, BrierTarget::Uniform).unwrap(), 0.0);
        let exact = vec![sample(vec![0.0, 1.0, 0.0], 0.0, Some(1))];
        assert_eq!(brier_score(&exact, BrierTarget::OneHot).unwrap(), 0.0);
        let near = vec![sample(vec![0.0, 0.999, 0.001], 0.0, Some(1))];
        assert!(brier_score(&near, BrierTarget::OneHot).unwrap() > 0.0);
        assert!(brier_score(&[sample(vec![0.5, 0.5], 0.0, None)], BrierTarget::OneHot).is_err());
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.1, 0.2], &[0.3, 0.4]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.5; 4], &[0.5; 3]).unwrap(), 0.5);
        assert!((auroc(&[0.1, 0.2], &[0.15, 0.3]).unwrap() - 0.75).abs() < 1e-15);
        assert!(auroc(&[], &[1.0]).is_err());
        assert!(auroc(&[1.0], &[]).is_err());
    }

    #[test]
    fn aupr_examples() {
        assert_eq!(aupr(&[0.1, 0.2], &[0.3, 0.4]).unwrap(), 1.0);
        let id: Vec<f64> = (0..9).map(|i| i as f64 / 10.0).collect();
        assert_eq!(aupr(&id, &[5.0]).unwrap(), 1.0);
        let mut rng = RandomSeed(99).rng();
        let a: Vec<f64> = (0..5000).map(|_| rng.random()).collect();
        let b: Vec<f64> = (0..5000).map(|_| rng.random()).collect();
        assert!((aupr(&a, &b).unwrap() - 0.5).abs() < 0.02);
        // All tied: one threshold, precision equals prevalence.
        assert!((aupr(&[1.0; 3], &[1.0]).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn report_csv_layout() {
        let id = vec![
            sample(vec![0.9, 0.1], 0.2, Some(0)),
            sample(vec![0.2, 0.8], 0.3, Some(1)),
        ];
        let ood = vec![sample(vec![0.5, 0.5], 0.9, None)];
        let report = MetricsReport::compute("dip", "blobs", "shift", &id, &ood).unwrap();
        assert_eq!(report.auroc, 1.0);
        assert_eq!(report.auroc_max_prob, 1.0);
        let csv = reports_to_csv(&[report]).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), REPORT_COLUMNS.join(","));
        assert!(lines
            .next()
            .unwrap()
            .starts_with("dip,blobs,shift,1.000000,"));
        let dump = score_dump_csv(&id, &ood);
        assert_eq!(dump.lines().count(), 4);
        assert!(MetricsReport::compute("m", "a", "b", &id, &id).is_err());
    }
}
