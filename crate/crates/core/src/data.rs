//! Seeded synthetic datasets with known ground truth, and CSV I/O.
//!
//! All generators draw from [`RandomSeed::rng`] (ChaCha8), so a seed gives
//! the same dataset on every platform. Labels are zero-based.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dirichlet::{ProbabilityVector, RandomSeed};
use crate::error::{Error, Result};

/// Ground truth attached to a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum GeneratorTruth {
    /// Equal-weight isotropic Gaussians.
    Blobs { centers: Vec<Vec<f64>>, sigma: f64 },
    /// No closed-form density; only the generator parameters are recorded.
    TwoMoons { noise: f64 },
}

impl GeneratorTruth {
    fn blob_log_terms(centers: &[Vec<f64>], sigma: f64, x: &[f64]) -> Vec<f64> {
        let d = x.len() as f64;
        let log_norm = -(centers.len() as f64).ln() - 0.5 * d * (2.0 * PI * sigma * sigma).ln();
        centers
            .iter()
            .map(|c| {
                log_norm
                    - 0.5 * c.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
                        / (sigma * sigma)
            })
            .collect()
    }

    /// ln p*(x), when the generator has a closed form.
    pub fn log_density(&self, x: &[f64]) -> Option<f64> {
        match self {
            GeneratorTruth::Blobs { centers, sigma } => {
                if x.len() != centers[0].len() {
                    return None;
                }
                let terms = Self::blob_log_terms(centers, *sigma, x);
                let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                Some(max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln())
            }
            GeneratorTruth::TwoMoons { .. } => None,
        }
    }

    pub fn density(&self, x: &[f64]) -> Option<f64> {
        self.log_density(x).map(f64::exp)
    }

    /// P*(Y | X = x) by Bayes' rule.
    pub fn conditional(&self, x: &[f64]) -> Option<ProbabilityVector> {
        match self {
            GeneratorTruth::Blobs { centers, sigma } => {
                if x.len() != centers[0].len() {
                    return None;
                }
                let terms = Self::blob_log_terms(centers, *sigma, x);
                let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let w: Vec<f64> = terms.iter().map(|t| (t - max).exp()).collect();
                let s: f64 = w.iter().sum();
                ProbabilityVector::new(w.iter().map(|v| v / s).collect()).ok()
            }
            GeneratorTruth::TwoMoons { .. } => None,
        }
    }
}

/// Features with optional labels (absent for OOD sets).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<Vec<f64>>,
    labels: Option<Vec<usize>>,
    truth: Option<GeneratorTruth>,
}

impl Dataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Option<Vec<usize>>) -> Result<Self> {
        let d = features.first().ok_or(Error::Empty("dataset"))?.len();
        if d == 0 {
            return Err(Error::InvalidArgument(
                "dataset has zero feature columns".into(),
            ));
        }
        for row in &features {
            if row.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: row.len(),
                });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("dataset feature".into()));
            }
        }
        if let Some(labels) = &labels {
            if labels.len() != features.len() {
                return Err(Error::DimensionMismatch {
                    expected: features.len(),
                    found: labels.len(),
                });
            }
        }
        Ok(Self {
            features,
            labels,
            truth: None,
        })
    }

    pub fn with_truth(mut self, truth: GeneratorTruth) -> Self {
        self.truth = Some(truth);
        self
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features[0].len()
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn truth(&self) -> Option<&GeneratorTruth> {
        self.truth.as_ref()
    }

    /// Labels, or an error naming the dataset role when they are absent.
    pub fn require_labels(&self, role: &str) -> Result<&[usize]> {
        self.labels()
            .ok_or_else(|| Error::InvalidArgument(format!("{role} dataset has no label column")))
    }

    /// Largest label + 1, if labelled.
    pub fn inferred_classes(&self) -> Option<usize> {
        self.labels().and_then(|l| l.iter().max()).map(|m| m + 1)
    }
}

fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// K centers equally spaced on a circle of the given radius in the plane.
pub fn ring_centers(k: usize, radius: f64) -> Vec<Vec<f64>> {
    (0..k)
        .map(|i| {
            let t = 2.0 * PI * i as f64 / k as f64;
            vec![radius * t.cos(), radius * t.sin()]
        })
        .collect()
}

/// `per_class` draws from N(center_k, σ²I) for every class, shuffled.
pub fn make_blobs(
    k: usize,
    per_class: usize,
    centers: &[Vec<f64>],
    sigma: f64,
    seed: RandomSeed,
) -> Result<Dataset> {
    if per_class == 0 {
        return Err(Error::InvalidArgument(
            "per_class must be at least 1".into(),
        ));
    }
    if k < 2 || centers.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            found: centers.len(),
        });
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let d = centers[0].len();
    if d == 0
        || centers
            .iter()
            .any(|c| c.len() != d || c.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::InvalidArgument(
            "centers must be finite and share one dimension".into(),
        ));
    }
    for i in 0..k {
        for j in 0..i {
            if centers[i] == centers[j] {
                return Err(Error::InvalidArgument(format!(
                    "centers {j} and {i} coincide"
                )));
            }
        }
    }
    let mut rng = seed.rng();
    let mut rows: Vec<(Vec<f64>, usize)> = Vec::with_capacity(k * per_class);
    for (label, c) in centers.iter().enumerate() {
        for _ in 0..per_class {
            rows.push((
                c.iter().map(|m| m + sigma * gaussian(&mut rng)).collect(),
                label,
            ));
        }
    }
    rows.shuffle(&mut rng);
    let (features, labels) = rows.into_iter().unzip();
    Ok(
        Dataset::new(features, Some(labels))?.with_truth(GeneratorTruth::Blobs {
            centers: centers.to_vec(),
            sigma,
        }),
    )
}

/// Two interleaved half-circles; class 0 (upper arc) gets ⌈n/2⌉ points.
pub fn make_two_moons(n: usize, noise: f64, seed: RandomSeed) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::InvalidArgument(
            "two moons needs at least 2 points".into(),
        ));
    }
    if !(noise.is_finite() && noise >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise must be non-negative, got {noise}"
        )));
    }
    let n_upper = n.div_ceil(2);
    let n_lower = n - n_upper;
    let angle = |i: usize, count: usize| {
        if count <= 1 {
            0.0
        } else {
            PI * i as f64 / (count - 1) as f64
        }
    };
    let mut rows: Vec<(Vec<f64>, usize)> = Vec::with_capacity(n);
    for i in 0..n_upper {
        let t = angle(i, n_upper);
        rows.push((vec![t.cos(), t.sin()], 0));
    }
    for i in 0..n_lower {
        let t = angle(i, n_lower);
        rows.push((vec![1.0 - t.cos(), 0.5 - t.sin()], 1));
    }
    let mut rng = seed.rng();
    rows.shuffle(&mut rng);
    if noise > 0.0 {
        for (x, _) in &mut rows {
            for v in x.iter_mut() {
                *v += noise * gaussian(&mut rng);
            }
        }
    }
    let (features, labels) = rows.into_iter().unzip();
    Ok(Dataset::new(features, Some(labels))?.with_truth(GeneratorTruth::TwoMoons { noise }))
}

/// Bootstrap-resamples `count` points of `base`, dilates them by `scale`
/// about the base centroid and translates by `shift`. Labels are dropped.
pub fn make_ood_shift(
    base: &Dataset,
    count: usize,
    shift: &[f64],
    scale: f64,
    seed: RandomSeed,
) -> Result<Dataset> {
    if shift.len() != base.dim() {
        return Err(Error::DimensionMismatch {
            expected: base.dim(),
            found: shift.len(),
        });
    }
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "scale must be positive, got {scale}"
        )));
    }
    if count == 0 {
        return Err(Error::InvalidArgument(
            "OOD set must have at least one point".into(),
        ));
    }
    let d = base.dim();
    let n = base.len() as f64;
    let centroid: Vec<f64> = (0..d)
        .map(|j| base.features.iter().map(|r| r[j]).sum::<f64>() / n)
        .collect();
    let mut rng = seed.rng();
    let features = (0..count)
        .map(|_| {
            let x = &base.features[rng.random_range(0..base.len())];
            (0..d)
                .map(|j| centroid[j] + scale * (x[j] - centroid[j]) + shift[j])
                .collect()
        })
        .collect();
    Dataset::new(features, None)
}

/// Writes `x1,…,xd[,label]` with 17 significant digits.
pub fn write_csv(path: &Path, dataset: &Dataset) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_io_error(path, e))?;
    let mut header: Vec<String> = (1..=dataset.dim()).map(|j| format!("x{j}")).collect();
    if dataset.labels.is_some() {
        header.push("label".into());
    }
    writer
        .write_record(&header)
        .map_err(|e| csv_io_error(path, e))?;
    for (i, row) in dataset.features.iter().enumerate() {
        let mut record: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        if let Some(labels) = &dataset.labels {
            record.push(labels[i].to_string());
        }
        writer
            .write_record(&record)
            .map_err(|e| csv_io_error(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

fn csv_io_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path.display().to_string(), line, format!("{other:?}")),
    }
}

pub fn read_csv(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, &path.display().to_string())
}

/// Parses dataset CSV text; errors carry the 1-based line number.
pub fn parse_csv(text: &str, source_name: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r.map_err(|e| Error::parse(source_name, 1, e.to_string()))?,
        None => return Err(Error::parse(source_name, 1, "missing header")),
    };
    let fields: Vec<&str> = header.iter().collect();
    let has_label = fields.last() == Some(&"label");
    let d = fields.len() - usize::from(has_label);
    if d == 0 {
        return Err(Error::parse(
            source_name,
            1,
            "header has no feature columns",
        ));
    }
    for (j, name) in fields[..d].iter().enumerate() {
        if *name != format!("x{}", j + 1) {
            return Err(Error::parse(
                source_name,
                1,
                format!("expected column `x{}`, found `{name}`", j + 1),
            ));
        }
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for record in records {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::parse(source_name, line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        if record.len() != fields.len() {
            return Err(Error::parse(
                source_name,
                line,
                format!("expected {} fields, found {}", fields.len(), record.len()),
            ));
        }
        let row = record
            .iter()
            .take(d)
            .map(|cell| {
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| {
                        Error::parse(
                            source_name,
                            line,
                            format!("`{cell}` is not a finite number"),
                        )
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        features.push(row);
        if has_label {
            let cell = &record[d];
            labels.push(cell.parse::<usize>().map_err(|_| {
                Error::parse(source_name, line, format!("`{cell}` is not a class index"))
            })?);
        }
    }
    if features.is_empty() {
        return Err(Error::parse(source_name, 2, "no data rows"));
    }
    Dataset::new(features, has_label.then_some(labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_are_deterministic_and_balanced() {
        let centers = ring_centers(3, 4.0);
        let a = make_blobs(3, 40, &centers, 1.0, RandomSeed(5)).unwrap();
        let b = make_blobs(3, 40, &centers, 1.0, RandomSeed(5)).unwrap();
        assert_eq!(a, b);
        let labels = a.labels().unwrap();
        for k in 0..3 {
            assert_eq!(labels.iter().filter(|&&y| y == k).count(), 40);
        }
        assert_ne!(a, make_blobs(3, 40, &centers, 1.0, RandomSeed(6)).unwrap());
    }

    #[test]
    fn blob_truth_bayes_rule() {
        let centers = vec![vec![-5.0, 0.0], vec![5.0, 0.0]];
        let data = make_blobs(2, 10, &centers, 1.0, RandomSeed(1)).unwrap();
        let truth = data.truth().unwrap();
        assert!(truth.conditional(&[5.0, 0.0]).unwrap().as_slice()[1] > 0.999);
        assert!(truth.conditional(&[-5.0, 0.0]).unwrap().as_slice()[0] > 0.999);
        let mid = truth.conditional(&[0.0, 0.0]).unwrap();
        assert!((mid.as_slice()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn blob_validation() {
        let centers = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        assert!(make_blobs(2, 5, &centers, 1.0, RandomSeed(0)).is_err());
        assert!(make_blobs(2, 0, &ring_centers(2, 1.0), 1.0, RandomSeed(0)).is_err());
        assert!(make_blobs(2, 5, &ring_centers(2, 1.0), 0.0, RandomSeed(0)).is_err());
    }

    #[test]
    fn noiseless_moons_lie_on_arcs() {
        let data = make_two_moons(101, 0.0, RandomSeed(2)).unwrap();
        let labels = data.labels().unwrap();
        assert_eq!(labels.iter().filter(|&&y| y == 0).count(), 51);
        assert_eq!(labels.iter().filter(|&&y| y == 1).count(), 50);
        for (x, &y) in data.features().iter().zip(labels) {
            let r = if y == 0 {
                (x[0] * x[0] + x[1] * x[1]).sqrt()
            } else {
                ((x[0] - 1.0).powi(2) + (x[1] - 0.5).powi(2)).sqrt()
            };
            assert!((r - 1.0).abs() < 1e-12);
        }
        assert_eq!(data, make_two_moons(101, 0.0, RandomSeed(2)).unwrap());
    }

    #[test]
    fn ood_shift_moves_centroid() {
        let base = make_blobs(2, 200, &ring_centers(2, 3.0), 1.0, RandomSeed(3)).unwrap();
        let ood = make_ood_shift(&base, 300, &[20.0, -10.0], 1.0, RandomSeed(4)).unwrap();
        assert!(ood.labels().is_none());
        assert_eq!(ood.len(), 300);
        let mx = ood.features().iter().map(|r| r[0]).sum::<f64>() / 300.0;
        assert!((mx - 20.0).abs() < 1.0);
        assert!(make_ood_shift(&base, 10, &[1.0], 1.0, RandomSeed(0)).is_err());
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let data = make_blobs(2, 5, &ring_centers(2, 2.0), 0.3, RandomSeed(8)).unwrap();
        let path = dir.path().join("d.csv");
        write_csv(&path, &data).unwrap();
        let back = read_csv(&path).unwrap();
        assert_eq!(back.features(), data.features());
        assert_eq!(back.labels(), data.labels());

        let unlabelled = parse_csv("x1,x2\n1,2\n3,4\n", "ood").unwrap();
        assert!(unlabelled.labels().is_none());

        match parse_csv("x1,x2,label\n1,2,0\n3,1\n", "ragged") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        match parse_csv("x1,x2,label\n1,abc,0\n", "cell") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_csv("a,b,label\n1,2,0\n", "hdr").is_err());
    }
}
