//! A small dense feed-forward network with hand-written backpropagation.
//!
//! The network maps ℝᵈ to either non-negative evidence (EDL head) or a point
//! on the simplex (probability head). Gradients are exact reverse-mode
//! derivatives of the mean batch loss; [`finite_difference_check`] compares
//! them with central differences.
//!
//! Weights are stored row-major with shape `(output_dim, input_dim)`.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::Rng;

use crate::dirichlet::{ConcentrationVector, RandomSeed};
use crate::error::{Error, Result};
use crate::objective;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Nonlinearity {
    Rectifier,
    Identity,
}

impl Nonlinearity {
    fn token(self) -> &'static str {
        match self {
            Nonlinearity::Rectifier => "rectifier",
            Nonlinearity::Identity => "identity",
        }
    }
}

impl FromStr for Nonlinearity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rectifier" => Ok(Nonlinearity::Rectifier),
            "identity" => Ok(Nonlinearity::Identity),
            other => Err(Error::InvalidArgument(format!(
                "unknown nonlinearity `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub nonlinearity: Nonlinearity,
}

/// Map from the last layer's output to non-negative evidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EvidenceActivation {
    #[default]
    Softplus,
    Exp,
}

impl FromStr for EvidenceActivation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softplus" => Ok(EvidenceActivation::Softplus),
            "exp" => Ok(EvidenceActivation::Exp),
            other => Err(Error::InvalidArgument(format!(
                "unknown evidence activation `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    /// Non-negative outputs, read as Dirichlet evidence.
    Evidence(EvidenceActivation),
    /// Softmax outputs, read as class probabilities.
    Probability,
}

impl HeadKind {
    fn token(self) -> &'static str {
        match self {
            HeadKind::Evidence(EvidenceActivation::Softplus) => "evidence",
            HeadKind::Evidence(EvidenceActivation::Exp) => "evidence_exp",
            HeadKind::Probability => "probability",
        }
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "evidence" => Ok(HeadKind::Evidence(EvidenceActivation::Softplus)),
            "evidence_exp" => Ok(HeadKind::Evidence(EvidenceActivation::Exp)),
            "probability" => Ok(HeadKind::Probability),
            other => Err(Error::InvalidArgument(format!(
                "unknown head kind `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    spec: LayerSpec,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

/// Network parameters: the layer stack plus its output head.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
    head: HeadKind,
}

/// Gradient of a scalar loss, shaped like the [`Mlp`] it was taken from.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

/// Training objective evaluated per sample and averaged over the batch.
#[derive(Debug, Clone, PartialEq)]
pub enum LossKind {
    /// Expected NLL under Dir(α + e) plus `anneal · λ · KL(Dir(α + e) ‖ Dir(α))`.
    Edl {
        alpha: ConcentrationVector,
        lambda: f64,
        anneal: f64,
    },
    /// KL(Dir(α + e) ‖ Dir(α + ν e_y)), the exact tempered-posterior KL.
    TemperedKl { alpha: ConcentrationVector, nu: f64 },
    /// Negative log softmax probability of the label.
    CrossEntropy,
}

impl LossKind {
    fn check_head(&self, head: HeadKind, classes: usize) -> Result<()> {
        match (self, head) {
            (LossKind::CrossEntropy, HeadKind::Probability) => Ok(()),
            (
                LossKind::Edl { alpha, .. } | LossKind::TemperedKl { alpha, .. },
                HeadKind::Evidence(_),
            ) => {
                if alpha.len() == classes {
                    Ok(())
                } else {
                    Err(Error::DimensionMismatch {
                        expected: classes,
                        found: alpha.len(),
                    })
                }
            }
            (kind, head) => Err(Error::InvalidArgument(format!(
                "loss {} does not apply to a {} head",
                kind.name(),
                head.token()
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Edl { .. } => "edl",
            LossKind::TemperedKl { .. } => "tempered_kl",
            LossKind::CrossEntropy => "cross_entropy",
        }
    }
}

/// Features paired with zero-based labels.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    features: &'a [Vec<f64>],
    labels: &'a [usize],
}

impl<'a> Batch<'a> {
    pub fn new(features: &'a [Vec<f64>], labels: &'a [usize]) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::Empty("batch"));
        }
        if features.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: features.len(),
                found: labels.len(),
            });
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &'a [Vec<f64>] {
        self.features
    }

    pub fn labels(&self) -> &'a [usize] {
        self.labels
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softmax_in_place(values: &mut [f64]) {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in values.iter_mut() {
        *v /= sum;
    }
}

impl Mlp {
    /// Fan-in scaled uniform initialisation; biases start at zero.
    pub fn new(specs: &[LayerSpec], head: HeadKind, seed: RandomSeed) -> Result<Self> {
        let mut mlp = Self::zeros(specs, head)?;
        let mut rng = seed.rng();
        for layer in &mut mlp.layers {
            let fan_in = layer.spec.input_dim as f64;
            let bound = match layer.spec.nonlinearity {
                Nonlinearity::Rectifier => (6.0 / fan_in).sqrt(),
                Nonlinearity::Identity => (3.0 / fan_in).sqrt(),
            };
            for w in &mut layer.weights {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(mlp)
    }

    /// All weights and biases zero.
    pub fn zeros(specs: &[LayerSpec], head: HeadKind) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Empty("layer list"));
        }
        for (i, spec) in specs.iter().enumerate() {
            if spec.input_dim == 0 || spec.output_dim == 0 {
                return Err(Error::InvalidArgument(format!(
                    "layer {i} has a zero dimension"
                )));
            }
            if i > 0 && specs[i - 1].output_dim != spec.input_dim {
                return Err(Error::DimensionMismatch {
                    expected: specs[i - 1].output_dim,
                    found: spec.input_dim,
                });
            }
        }
        Ok(Self {
            layers: specs
                .iter()
                .map(|&spec| Layer {
                    spec,
                    weights: vec![0.0; spec.input_dim * spec.output_dim],
                    bias: vec![0.0; spec.output_dim],
                })
                .collect(),
            head,
        })
    }

    /// `input_dim → hidden… → classes`, rectifier hidden units, identity output layer.
    pub fn standard(
        input_dim: usize,
        hidden: &[usize],
        classes: usize,
        head: HeadKind,
        seed: RandomSeed,
    ) -> Result<Self> {
        Self::new(&standard_specs(input_dim, hidden, classes), head, seed)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].spec.output_dim
    }

    pub fn head(&self) -> HeadKind {
        self.head
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for layer in &self.layers {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    pub fn set_parameters(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.parameter_count() {
            return Err(Error::DimensionMismatch {
                expected: self.parameter_count(),
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter vector".into()));
        }
        let mut rest = values;
        for layer in &mut self.layers {
            let (w, tail) = rest.split_at(layer.weights.len());
            layer.weights.copy_from_slice(w);
            let (b, tail) = tail.split_at(layer.bias.len());
            layer.bias.copy_from_slice(b);
            rest = tail;
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("network input".into()));
        }
        Ok(())
    }

    /// Runs the layer stack, leaving pre-activations and activations in `trace`.
    fn forward_trace(&self, x: &[f64], trace: &mut Trace) {
        trace.activations[0].clear();
        trace.activations[0].extend_from_slice(x);
        for (l, layer) in self.layers.iter().enumerate() {
            let (done, rest) = trace.activations.split_at_mut(l + 1);
            let input = &done[l];
            let pre = &mut trace.pre[l];
            let out = &mut rest[0];
            pre.clear();
            let n_in = layer.spec.input_dim;
            for (row, b) in layer.weights.chunks_exact(n_in).zip(&layer.bias) {
                pre.push(b + row.iter().zip(input).map(|(w, a)| w * a).sum::<f64>());
            }
            out.clear();
            match layer.spec.nonlinearity {
                Nonlinearity::Rectifier => out.extend(pre.iter().map(|z| z.max(0.0))),
                Nonlinearity::Identity => out.extend_from_slice(pre),
            }
        }
    }

    fn apply_head(&self, logits: &[f64]) -> Vec<f64> {
        match self.head {
            HeadKind::Evidence(EvidenceActivation::Softplus) => {
                logits.iter().map(|&z| softplus(z)).collect()
            }
            HeadKind::Evidence(EvidenceActivation::Exp) => {
                logits.iter().map(|&z| z.exp()).collect()
            }
            HeadKind::Probability => {
                let mut p = logits.to_vec();
                softmax_in_place(&mut p);
                p
            }
        }
    }

    /// Evidence (non-negative) or class probabilities, depending on the head.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut trace = Trace::new(self);
        self.forward_trace(x, &mut trace);
        Ok(self.apply_head(trace.output()))
    }

    /// Mean loss over the batch.
    pub fn loss(&self, batch: &Batch<'_>, kind: &LossKind) -> Result<f64> {
        self.evaluate(batch, kind, false).map(|(loss, _)| loss)
    }

    /// Mean loss and its exact gradient.
    pub fn gradient(&self, batch: &Batch<'_>, kind: &LossKind) -> Result<(f64, GradientBundle)> {
        self.evaluate(batch, kind, true)
            .map(|(loss, grad)| (loss, grad.expect("gradient requested")))
    }

    fn evaluate(
        &self,
        batch: &Batch<'_>,
        kind: &LossKind,
        want_grad: bool,
    ) -> Result<(f64, Option<GradientBundle>)> {
        let classes = self.output_dim();
        kind.check_head(self.head, classes)?;
        for (x, &y) in batch.features.iter().zip(batch.labels) {
            self.check_input(x)?;
            if y >= classes {
                return Err(Error::IndexOutOfRange {
                    index: y,
                    len: classes,
                });
            }
        }
        let mut grads = want_grad.then(|| GradientBundle::zeros_like(self));
        let mut trace = Trace::new(self);
        let mut upstream = vec![0.0; classes];
        let mut concentration = vec![0.0; classes];
        let mut total = 0.0;
        for (x, &y) in batch.features.iter().zip(batch.labels) {
            self.forward_trace(x, &mut trace);
            let logits = trace.output();
            let loss = match kind {
                LossKind::CrossEntropy => {
                    let mut p = logits.to_vec();
                    softmax_in_place(&mut p);
                    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let log_norm = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
                    for (u, (k, pk)) in upstream.iter_mut().zip(p.iter().enumerate()) {
                        *u = pk - if k == y { 1.0 } else { 0.0 };
                    }
                    log_norm - logits[y]
                }
                LossKind::Edl {
                    alpha,
                    lambda,
                    anneal,
                } => {
                    let evidence = self.apply_head(logits);
                    fill_concentration(&mut concentration, alpha.as_slice(), &evidence);
                    let loss = objective::edl_sample_terms(
                        &concentration,
                        alpha.as_slice(),
                        y,
                        anneal * lambda,
                        want_grad.then_some(&mut upstream[..]),
                    );
                    self.chain_evidence(logits, &evidence, &mut upstream);
                    loss
                }
                LossKind::TemperedKl { alpha, nu } => {
                    let evidence = self.apply_head(logits);
                    fill_concentration(&mut concentration, alpha.as_slice(), &evidence);
                    let loss = objective::tempered_kl_terms(
                        &concentration,
                        alpha.as_slice(),
                        y,
                        *nu,
                        want_grad.then_some(&mut upstream[..]),
                    );
                    self.chain_evidence(logits, &evidence, &mut upstream);
                    loss
                }
            };
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("{} loss", kind.name())));
            }
            total += loss;
            if let Some(grads) = grads.as_mut() {
                self.backpropagate(&trace, &upstream, grads);
            }
        }
        let scale = 1.0 / batch.len() as f64;
        if let Some(grads) = grads.as_mut() {
            grads.scale(scale);
        }
        Ok((total * scale, grads))
    }

    /// Converts dL/d(evidence) into dL/d(logits) in place.
    fn chain_evidence(&self, logits: &[f64], evidence: &[f64], upstream: &mut [f64]) {
        match self.head {
            HeadKind::Evidence(EvidenceActivation::Softplus) => {
                for (u, &z) in upstream.iter_mut().zip(logits) {
                    *u *= sigmoid(z);
                }
            }
            HeadKind::Evidence(EvidenceActivation::Exp) => {
                for (u, &e) in upstream.iter_mut().zip(evidence) {
                    *u *= e;
                }
            }
            HeadKind::Probability => {
                unreachable!("evidence losses are rejected for probability heads")
            }
        }
    }

    fn backpropagate(&self, trace: &Trace, output_grad: &[f64], grads: &mut GradientBundle) {
        let mut delta = output_grad.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            if layer.spec.nonlinearity == Nonlinearity::Rectifier {
                for (d, &z) in delta.iter_mut().zip(&trace.pre[l]) {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let input = &trace.activations[l];
            let n_in = layer.spec.input_dim;
            for ((g_row, d), g_b) in grads.weights[l]
                .chunks_exact_mut(n_in)
                .zip(&delta)
                .zip(grads.biases[l].iter_mut())
            {
                *g_b += d;
                if *d != 0.0 {
                    for (g, a) in g_row.iter_mut().zip(input) {
                        *g += d * a;
                    }
                }
            }
            if l > 0 {
                let mut next = vec![0.0; n_in];
                for (row, d) in layer.weights.chunks_exact(n_in).zip(&delta) {
                    if *d != 0.0 {
                        for (n, w) in next.iter_mut().zip(row) {
                            *n += d * w;
                        }
                    }
                }
                delta = next;
            }
        }
    }

    /// Text checkpoint: a `mlp <n_layers> <head_kind>` header, then per layer a
    /// `layer <in> <out> <nonlinearity>` line, `out` weight rows and a bias row.
    /// Reals are written with 17 significant digits.
    pub fn to_checkpoint(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "mlp {} {}", self.layers.len(), self.head.token());
        for layer in &self.layers {
            let spec = layer.spec;
            let _ = writeln!(
                out,
                "layer {} {} {}",
                spec.input_dim,
                spec.output_dim,
                spec.nonlinearity.token()
            );
            for row in layer.weights.chunks_exact(spec.input_dim) {
                out.push_str(&join_reals(row));
                out.push('\n');
            }
            out.push_str(&join_reals(&layer.bias));
            out.push('\n');
        }
        out
    }

    pub fn from_checkpoint(text: &str, source_name: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (line_no, header) = lines
            .next()
            .ok_or_else(|| Error::parse(source_name, 1, "empty checkpoint"))?;
        let tokens: Vec<&str> = header.split_whitespace().collect();
        if tokens.len() != 3 || tokens[0] != "mlp" {
            return Err(Error::parse(
                source_name,
                line_no,
                "expected `mlp <n_layers> <head_kind>`",
            ));
        }
        let n_layers: usize = tokens[1]
            .parse()
            .map_err(|_| Error::parse(source_name, line_no, "layer count is not an integer"))?;
        let head: HeadKind = tokens[2]
            .parse()
            .map_err(|e: Error| Error::parse(source_name, line_no, e.to_string()))?;

        let mut specs = Vec::with_capacity(n_layers);
        let mut values = Vec::new();
        for _ in 0..n_layers {
            let (line_no, line) = lines
                .next()
                .ok_or_else(|| Error::parse(source_name, line_no, "missing layer header"))?;
            let t: Vec<&str> = line.split_whitespace().collect();
            if t.len() != 4 || t[0] != "layer" {
                return Err(Error::parse(
                    source_name,
                    line_no,
                    "expected `layer <in> <out> <nonlinearity>`",
                ));
            }
            let parse_dim = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::parse(source_name, line_no, format!("bad dimension `{s}`")))
            };
            let spec = LayerSpec {
                input_dim: parse_dim(t[1])?,
                output_dim: parse_dim(t[2])?,
                nonlinearity: t[3]
                    .parse()
                    .map_err(|e: Error| Error::parse(source_name, line_no, e.to_string()))?,
            };
            let mut bias = Vec::new();
            for row in 0..=spec.output_dim {
                let (row_line, text) = lines
                    .next()
                    .ok_or_else(|| Error::parse(source_name, line_no, "truncated layer payload"))?;
                let expected = if row < spec.output_dim {
                    spec.input_dim
                } else {
                    spec.output_dim
                };
                let parsed = parse_reals(text, expected, source_name, row_line)?;
                if row < spec.output_dim {
                    values.extend(parsed);
                } else {
                    bias = parsed;
                }
            }
            values.extend(bias);
            specs.push(spec);
        }
        if let Some((line_no, extra)) = lines.find(|(_, l)| !l.trim().is_empty()) {
            return Err(Error::parse(
                source_name,
                line_no,
                format!("unexpected trailing content `{extra}`"),
            ));
        }
        let mut mlp =
            Self::zeros(&specs, head).map_err(|e| Error::parse(source_name, 1, e.to_string()))?;
        mlp.set_parameters(&values)
            .map_err(|e| Error::parse(source_name, 1, e.to_string()))?;
        Ok(mlp)
    }
}

pub fn standard_specs(input_dim: usize, hidden: &[usize], classes: usize) -> Vec<LayerSpec> {
    let mut specs = Vec::with_capacity(hidden.len() + 1);
    let mut prev = input_dim;
    for &h in hidden {
        specs.push(LayerSpec {
            input_dim: prev,
            output_dim: h,
            nonlinearity: Nonlinearity::Rectifier,
        });
        prev = h;
    }
    specs.push(LayerSpec {
        input_dim: prev,
        output_dim: classes,
        nonlinearity: Nonlinearity::Identity,
    });
    specs
}

fn fill_concentration(out: &mut [f64], alpha: &[f64], evidence: &[f64]) {
    for ((o, a), e) in out.iter_mut().zip(alpha).zip(evidence) {
        *o = a + e;
    }
}

pub(crate) fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn join_reals(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format_real(*v))
        .collect::<Vec<_>>()
        .join(" ")
}

pub(crate) fn parse_reals(
    text: &str,
    expected: usize,
    source_name: &str,
    line: usize,
) -> Result<Vec<f64>> {
    let values = text
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    Error::parse(source_name, line, format!("`{t}` is not a finite real"))
                })
        })
        .collect::<Result<Vec<f64>>>()?;
    if values.len() != expected {
        return Err(Error::parse(
            source_name,
            line,
            format!("expected {expected} values, found {}", values.len()),
        ));
    }
    Ok(values)
}

struct Trace {
    pre: Vec<Vec<f64>>,
    activations: Vec<Vec<f64>>,
}

impl Trace {
    fn new(mlp: &Mlp) -> Self {
        Self {
            pre: mlp
                .layers
                .iter()
                .map(|l| Vec::with_capacity(l.spec.output_dim))
                .collect(),
            activations: std::iter::once(Vec::with_capacity(mlp.input_dim()))
                .chain(
                    mlp.layers
                        .iter()
                        .map(|l| Vec::with_capacity(l.spec.output_dim)),
                )
                .collect(),
        }
    }

    fn output(&self) -> &[f64] {
        &self.activations[self.activations.len() - 1]
    }
}

impl GradientBundle {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            weights: mlp
                .layers
                .iter()
                .map(|l| vec![0.0; l.weights.len()])
                .collect(),
            biases: mlp.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    /// Same ordering as [`Mlp::parameters`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self
            .weights
            .iter_mut()
            .chain(self.biases.iter_mut())
            .flatten()
        {
            *v *= factor;
        }
    }

    pub fn norm(&self) -> f64 {
        self.weights
            .iter()
            .chain(&self.biases)
            .flatten()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    fn is_congruent(&self, mlp: &Mlp) -> bool {
        self.weights.len() == mlp.layers.len()
            && mlp
                .layers
                .iter()
                .zip(self.weights.iter().zip(&self.biases))
                .all(|(l, (w, b))| l.weights.len() == w.len() && l.bias.len() == b.len())
    }
}

/// Adam moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl AdamState {
    /// Zeroed moments with β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
    pub fn new(mlp: &Mlp) -> Self {
        let n = mlp.parameter_count();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: vec![0.0; n],
            second: vec![0.0; n],
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update.
pub fn optimizer_step(
    mlp: &mut Mlp,
    grads: &GradientBundle,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if !grads.is_congruent(mlp) || state.first.len() != mlp.parameter_count() {
        return Err(Error::DimensionMismatch {
            expected: mlp.parameter_count(),
            found: grads.to_flat().len(),
        });
    }
    if !(lr.is_finite() && lr > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    if grads
        .weights
        .iter()
        .chain(&grads.biases)
        .flatten()
        .any(|g| !g.is_finite())
    {
        return Err(Error::NonFinite("gradient".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let correction1 = 1.0 - state.beta1.powi(t);
    let correction2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);

    let params = mlp
        .layers
        .iter_mut()
        .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()));
    let gradients = grads
        .weights
        .iter()
        .zip(&grads.biases)
        .flat_map(|(w, b)| w.iter().chain(b.iter()));
    for (((p, g), m), v) in params
        .zip(gradients)
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / correction1;
        let v_hat = *v / correction2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Max over coordinates of |analytic − central difference| / (|analytic| + 1e-12)
/// for an arbitrary scalar function.
/// Gradient entries below this magnitude are compared in absolute terms.
pub const FD_SCALE_FLOOR: f64 = 1e-6;

pub fn max_relative_fd_error(
    point: &[f64],
    analytic: &[f64],
    step: f64,
    mut f: impl FnMut(&[f64]) -> f64,
) -> f64 {
    let mut probe = point.to_vec();
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let original = probe[i];
        probe[i] = original + step;
        let up = f(&probe);
        probe[i] = original - step;
        let down = f(&probe);
        probe[i] = original;
        let numeric = (up - down) / (2.0 * step);
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(FD_SCALE_FLOOR));
    }
    worst
}

/// Compares [`Mlp::gradient`] with central differences of [`Mlp::loss`].
pub fn finite_difference_check(
    mlp: &Mlp,
    batch: &Batch<'_>,
    kind: &LossKind,
    step: f64,
) -> Result<f64> {
    if !(1e-7..=1e-3).contains(&step) {
        return Err(Error::InvalidArgument(format!(
            "step {step} outside [1e-7, 1e-3]"
        )));
    }
    let (_, grads) = mlp.gradient(batch, kind)?;
    let analytic = grads.to_flat();
    let mut probe = mlp.clone();
    let mut failure = None;
    let worst = max_relative_fd_error(&mlp.parameters(), &analytic, step, |p| {
        if let Err(e) = probe.set_parameters(p) {
            failure.get_or_insert(e);
            return f64::NAN;
        }
        match probe.loss(batch, kind) {
            Ok(v) => v,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(worst),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_specs() -> Vec<LayerSpec> {
        standard_specs(3, &[5, 4], 3)
    }

    fn random_batch(seed: u64, n: usize, d: usize, k: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = RandomSeed(seed).rng();
        let xs = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let ys = (0..n).map(|_| rng.random_range(0..k)).collect();
        (xs, ys)
    }

    fn edl_kind(k: usize) -> LossKind {
        LossKind::Edl {
            alpha: ConcentrationVector::ones(k).unwrap(),
            lambda: 0.7,
            anneal: 0.5,
        }
    }

    #[test]
    fn zero_network_outputs() {
        let specs = standard_specs(2, &[4], 3);
        let evidence =
            Mlp::zeros(&specs, HeadKind::Evidence(EvidenceActivation::Softplus)).unwrap();
        for e in evidence.forward(&[0.3, -1.0]).unwrap() {
            assert!((e - 2f64.ln()).abs() < 1e-15);
        }
        let prob = Mlp::zeros(&specs, HeadKind::Probability).unwrap();
        for p in prob.forward(&[0.3, -1.0]).unwrap() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_saturates_to_one_hot() {
        let spec = [LayerSpec {
            input_dim: 3,
            output_dim: 3,
            nonlinearity: Nonlinearity::Identity,
        }];
        let mut mlp = Mlp::zeros(&spec, HeadKind::Probability).unwrap();
        mlp.set_parameters(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0])
            .unwrap();
        let p = mlp.forward(&[0.0, 60.0, 0.0]).unwrap();
        assert!((p[1] - 1.0).abs() < 1e-20 + 1e-15);
        assert!(p[0] < 1e-25);
    }

    #[test]
    fn forward_rejects_bad_input() {
        let mlp = Mlp::new(&tiny_specs(), HeadKind::Probability, RandomSeed(1)).unwrap();
        assert!(matches!(
            mlp.forward(&[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            mlp.forward(&[1.0, f64::NAN, 0.0]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn chained_dimensions_are_checked() {
        let bad = [
            LayerSpec {
                input_dim: 2,
                output_dim: 3,
                nonlinearity: Nonlinearity::Rectifier,
            },
            LayerSpec {
                input_dim: 4,
                output_dim: 2,
                nonlinearity: Nonlinearity::Identity,
            },
        ];
        assert!(Mlp::zeros(&bad, HeadKind::Probability).is_err());
    }

    #[test]
    fn gradient_vanishes_at_balanced_minimum() {
        let spec = [LayerSpec {
            input_dim: 2,
            output_dim: 2,
            nonlinearity: Nonlinearity::Identity,
        }];
        let mlp = Mlp::zeros(&spec, HeadKind::Probability).unwrap();
        let xs = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        let ys = vec![0, 1];
        let (_, g) = mlp
            .gradient(&Batch::new(&xs, &ys).unwrap(), &LossKind::CrossEntropy)
            .unwrap();
        assert!(g.norm() < 1e-8);
    }

    #[test]
    fn duplicated_batch_has_same_mean_gradient() {
        let mlp = Mlp::new(
            &tiny_specs(),
            HeadKind::Evidence(EvidenceActivation::Softplus),
            RandomSeed(4),
        )
        .unwrap();
        let (xs, ys) = random_batch(5, 6, 3, 3);
        let xs2: Vec<Vec<f64>> = xs.iter().chain(&xs).cloned().collect();
        let ys2: Vec<usize> = ys.iter().chain(&ys).copied().collect();
        let kind = edl_kind(3);
        let (_, g1) = mlp.gradient(&Batch::new(&xs, &ys).unwrap(), &kind).unwrap();
        let (_, g2) = mlp
            .gradient(&Batch::new(&xs2, &ys2).unwrap(), &kind)
            .unwrap();
        for (a, b) in g1.to_flat().iter().zip(g2.to_flat()) {
            assert!((a - b).abs() <= 1e-14 * a.abs().max(1.0));
        }
    }

    #[test]
    fn finite_differences_agree_for_every_loss() {
        let (xs, ys) = random_batch(11, 7, 3, 3);
        let batch = Batch::new(&xs, &ys).unwrap();
        let ev = Mlp::new(
            &tiny_specs(),
            HeadKind::Evidence(EvidenceActivation::Softplus),
            RandomSeed(2),
        )
        .unwrap();
        let ev_exp = Mlp::new(
            &tiny_specs(),
            HeadKind::Evidence(EvidenceActivation::Exp),
            RandomSeed(2),
        )
        .unwrap();
        let prob = Mlp::new(&tiny_specs(), HeadKind::Probability, RandomSeed(3)).unwrap();
        let tempered = LossKind::TemperedKl {
            alpha: ConcentrationVector::ones(3).unwrap(),
            nu: 2.0,
        };
        assert!(finite_difference_check(&ev, &batch, &edl_kind(3), 1e-5).unwrap() <= 1e-4);
        assert!(finite_difference_check(&ev_exp, &batch, &edl_kind(3), 1e-5).unwrap() <= 1e-4);
        assert!(finite_difference_check(&ev, &batch, &tempered, 1e-5).unwrap() <= 1e-4);
        assert!(
            finite_difference_check(&prob, &batch, &LossKind::CrossEntropy, 1e-5).unwrap() <= 1e-4
        );
    }

    #[test]
    fn finite_differences_exact_for_quadratics() {
        let point = [0.3, -1.2, 2.5, 0.9];
        let f = |p: &[f64]| {
            0.5 * p[0] * p[0] + 2.0 * p[1] * p[1] - p[0] * p[2] + 3.0 * p[3] * p[3] + p[1]
        };
        let analytic = [
            point[0] - point[2],
            4.0 * point[1] + 1.0,
            -point[0],
            6.0 * point[3],
        ];
        assert!(max_relative_fd_error(&point, &analytic, 1e-4, f) <= 1e-9);
    }

    #[test]
    fn finite_difference_step_range() {
        let mlp = Mlp::new(&tiny_specs(), HeadKind::Probability, RandomSeed(3)).unwrap();
        let (xs, ys) = random_batch(1, 2, 3, 3);
        let batch = Batch::new(&xs, &ys).unwrap();
        assert!(finite_difference_check(&mlp, &batch, &LossKind::CrossEntropy, 1e-2).is_err());
    }

    #[test]
    fn loss_head_mismatch_is_an_error() {
        let mlp = Mlp::new(&tiny_specs(), HeadKind::Probability, RandomSeed(3)).unwrap();
        let (xs, ys) = random_batch(1, 2, 3, 3);
        let batch = Batch::new(&xs, &ys).unwrap();
        assert!(mlp.loss(&batch, &edl_kind(3)).is_err());
        assert!(mlp.loss(&batch, &LossKind::CrossEntropy).is_ok());
        assert!(Batch::new(&xs, &ys[..1]).is_err());
        assert!(Batch::new(&[], &[]).is_err());
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut mlp = Mlp::new(&tiny_specs(), HeadKind::Probability, RandomSeed(8)).unwrap();
        let before = mlp.clone();
        let mut state = AdamState::new(&mlp);
        let zero = GradientBundle::zeros_like(&mlp);
        optimizer_step(&mut mlp, &zero, &mut state, 1e-3).unwrap();
        assert_eq!(mlp, before);
    }

    #[test]
    fn adam_first_step_descends() {
        let spec = [LayerSpec {
            input_dim: 1,
            output_dim: 1,
            nonlinearity: Nonlinearity::Identity,
        }];
        let mut mlp = Mlp::zeros(&spec, HeadKind::Probability).unwrap();
        let mut grads = GradientBundle::zeros_like(&mlp);
        grads.weights[0][0] = 1.0;
        grads.biases[0][0] = -2.0;
        let mut state = AdamState::new(&mlp);
        optimizer_step(&mut mlp, &grads, &mut state, 0.01).unwrap();
        let p = mlp.parameters();
        assert!(p[0] < 0.0 && p[1] > 0.0);

        grads.weights[0][0] = f64::NAN;
        assert!(optimizer_step(&mut mlp, &grads, &mut state, 0.01).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mlp = Mlp::new(
            &tiny_specs(),
            HeadKind::Evidence(EvidenceActivation::Exp),
            RandomSeed(21),
        )
        .unwrap();
        let text = mlp.to_checkpoint();
        assert!(text.starts_with("mlp 3 evidence_exp\nlayer 3 5 rectifier\n"));
        let back = Mlp::from_checkpoint(&text, "mem").unwrap();
        assert_eq!(back, mlp);
        assert_eq!(back.to_checkpoint(), text);
    }

    #[test]
    fn checkpoint_errors_name_the_line() {
        let mlp = Mlp::new(&tiny_specs(), HeadKind::Probability, RandomSeed(21)).unwrap();
        let text = mlp.to_checkpoint().replacen("layer 5 4", "layer 5 x", 1);
        match Mlp::from_checkpoint(&text, "ckpt") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 9),
            other => panic!("unexpected {other:?}"),
        }
        assert!(Mlp::from_checkpoint("mlp 1 sideways\n", "ckpt").is_err());
    }
}
