//! Cost-sensitive binary cross-entropy family.
//!
//! Every method is a weighted BCE
//!
//! ```text
//! L = -sum_i [ w+(p_i) * y_i * ln p_i + w-(p_i) * (1 - y_i) * ln(1 - p_i) ]
//! ```
//!
//! applied independently per class. All four weightings share the shape
//! `w+ = c+ * (1 - p)^gamma`, `w- = c- * p^gamma`:
//!
//! | method  | c+                        | c-                        | gamma |
//! |---------|---------------------------|---------------------------|-------|
//! | BCE     | 1                         | 1                         | 0     |
//! | WBCE    | N- / (N+ + N-)            | N+ / (N+ + N-)            | 0     |
//! | Focal   | alpha                     | 1 - alpha                 | gamma |
//! | CBFocal | (1 - beta)/(1 - beta^N+)  | (1 - beta)/(1 - beta^N-)  | gamma |

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;

/// Probability clamp applied before any logarithm.
pub const PROB_EPS: f64 = 1e-7;

/// Central-difference step used by [`validate_grad`].
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum LossMethod {
    Bce,
    Wbce,
    Focal { alpha: f64, gamma: f64 },
    CbFocal { beta: f64, gamma: f64 },
}

impl LossMethod {
    pub fn name(&self) -> &'static str {
        match self {
            LossMethod::Bce => "bce",
            LossMethod::Wbce => "wbce",
            LossMethod::Focal { .. } => "focal",
            LossMethod::CbFocal { .. } => "cbfocal",
        }
    }

    pub fn needs_counts(&self) -> bool {
        matches!(self, LossMethod::Wbce | LossMethod::CbFocal { .. })
    }

    pub fn hyper_params(&self) -> BTreeMap<&'static str, f64> {
        match *self {
            LossMethod::Bce | LossMethod::Wbce => BTreeMap::new(),
            LossMethod::Focal { alpha, gamma } => [("alpha", alpha), ("gamma", gamma)].into(),
            LossMethod::CbFocal { beta, gamma } => [("beta", beta), ("gamma", gamma)].into(),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            LossMethod::Bce | LossMethod::Wbce => Ok(()),
            LossMethod::Focal { alpha, gamma } => {
                if !(alpha > 0.0 && alpha < 1.0) {
                    return Err(Error::invalid(format!(
                        "alpha must lie in (0, 1), got {alpha}"
                    )));
                }
                validate_gamma(gamma)
            }
            LossMethod::CbFocal { beta, gamma } => {
                if !(0.0..1.0).contains(&beta) {
                    return Err(Error::invalid(format!(
                        "beta must lie in [0, 1), got {beta}"
                    )));
                }
                validate_gamma(gamma)
            }
        }
    }
}

fn validate_gamma(gamma: f64) -> Result<()> {
    if gamma.is_finite() && gamma >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "gamma must be finite and >= 0, got {gamma}"
        )))
    }
}

impl fmt::Display for LossMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Method selector without hyper-parameters, as accepted on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Bce,
    Wbce,
    Focal,
    CbFocal,
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bce" => Ok(LossKind::Bce),
            "wbce" => Ok(LossKind::Wbce),
            "focal" => Ok(LossKind::Focal),
            "cbfocal" | "cb-focal" | "cb_focal" => Ok(LossKind::CbFocal),
            other => Err(Error::invalid(format!("unknown loss {other:?}"))),
        }
    }
}

/// Focal settings used for the chest X-ray experiments.
pub const DEFAULT_ALPHA: f64 = 0.25;
pub const DEFAULT_GAMMA: f64 = 2.0;
pub const DEFAULT_BETA: f64 = 0.9999;

impl LossKind {
    /// Builds a method, filling absent hyper-parameters with the defaults above.
    pub fn with_params(
        self,
        alpha: Option<f64>,
        gamma: Option<f64>,
        beta: Option<f64>,
    ) -> LossMethod {
        let gamma = gamma.unwrap_or(DEFAULT_GAMMA);
        match self {
            LossKind::Bce => LossMethod::Bce,
            LossKind::Wbce => LossMethod::Wbce,
            LossKind::Focal => LossMethod::Focal {
                alpha: alpha.unwrap_or(DEFAULT_ALPHA),
                gamma,
            },
            LossKind::CbFocal => LossMethod::CbFocal {
                beta: beta.unwrap_or(DEFAULT_BETA),
                gamma,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub n_plus: u64,
    pub n_minus: u64,
}

impl ClassCounts {
    pub fn new(n_plus: u64, n_minus: u64) -> Self {
        ClassCounts { n_plus, n_minus }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub method: LossMethod,
    /// Per-class positive/negative counts; required by WBCE and CBFocal.
    #[serde(default)]
    pub class_counts: Vec<ClassCounts>,
}

impl LossConfig {
    pub fn new(method: LossMethod, class_counts: Vec<ClassCounts>) -> Result<Self> {
        method.validate()?;
        Ok(LossConfig {
            method,
            class_counts,
        })
    }

    pub fn bce() -> Self {
        LossConfig {
            method: LossMethod::Bce,
            class_counts: Vec::new(),
        }
    }

    pub fn wbce(class_counts: Vec<ClassCounts>) -> Self {
        LossConfig {
            method: LossMethod::Wbce,
            class_counts,
        }
    }

    pub fn focal(alpha: f64, gamma: f64) -> Result<Self> {
        Self::new(LossMethod::Focal { alpha, gamma }, Vec::new())
    }

    pub fn cb_focal(beta: f64, gamma: f64, class_counts: Vec<ClassCounts>) -> Result<Self> {
        Self::new(LossMethod::CbFocal { beta, gamma }, class_counts)
    }

    fn counts(&self, class_index: usize) -> Result<ClassCounts> {
        self.class_counts.get(class_index).copied().ok_or_else(|| {
            Error::invalid(format!(
                "{} needs counts for class {class_index}, only {} given",
                self.method,
                self.class_counts.len()
            ))
        })
    }

    /// `(c+, c-, gamma)` such that `w+ = c+ (1-p)^gamma` and `w- = c- p^gamma`.
    fn coefficients(&self, class_index: usize) -> Result<Coefficients> {
        self.method.validate()?;
        match self.method {
            LossMethod::Bce => Ok(Coefficients::new(1.0, 1.0, 0.0)),
            LossMethod::Wbce => {
                let ClassCounts { n_plus, n_minus } = self.counts(class_index)?;
                let total = n_plus + n_minus;
                if total == 0 {
                    return Err(Error::invalid(format!(
                        "WBCE: class {class_index} has no samples (N+ + N- = 0)"
                    )));
                }
                let total = total as f64;
                Ok(Coefficients::new(
                    n_minus as f64 / total,
                    n_plus as f64 / total,
                    0.0,
                ))
            }
            LossMethod::Focal { alpha, gamma } => Ok(Coefficients::new(alpha, 1.0 - alpha, gamma)),
            LossMethod::CbFocal { beta, gamma } => {
                let ClassCounts { n_plus, n_minus } = self.counts(class_index)?;
                let effective = |n: u64, which: &str| {
                    if n == 0 {
                        return Err(Error::invalid(format!(
                            "CBFocal: class {class_index} has {which} = 0"
                        )));
                    }
                    Ok((1.0 - beta) / (1.0 - beta.powf(n as f64)))
                };
                Ok(Coefficients::new(
                    effective(n_plus, "N+")?,
                    effective(n_minus, "N-")?,
                    gamma,
                ))
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Coefficients {
    plus: f64,
    minus: f64,
    gamma: f64,
}

impl Coefficients {
    fn new(plus: f64, minus: f64, gamma: f64) -> Self {
        Coefficients { plus, minus, gamma }
    }

    fn weights(&self, p: f64) -> (f64, f64) {
        (
            self.plus * (1.0 - p).powf(self.gamma),
            self.minus * p.powf(self.gamma),
        )
    }

    fn loss(&self, p: f64, positive: bool) -> f64 {
        let (w_plus, w_minus) = self.weights(p);
        if positive {
            -w_plus * p.ln()
        } else {
            -w_minus * (1.0 - p).ln()
        }
    }

    /// d loss / d z for p = sigmoid(z), differentiating through the weights.
    fn grad_logit(&self, p: f64, positive: bool) -> f64 {
        let g = self.gamma;
        if positive {
            let q = 1.0 - p;
            self.plus * q.powf(g) * (g * p * p.ln() - q)
        } else {
            self.minus * p.powf(g) * (p - g * (1.0 - p) * (1.0 - p).ln())
        }
    }
}

/// `(w+, w-)` for one class at probability `p`.
pub fn class_weights(config: &LossConfig, class_index: usize, p: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("probability {p} outside [0, 1]")));
    }
    Ok(config.coefficients(class_index)?.weights(p))
}

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    #[default]
    Sum,
    /// Sum divided by the number of samples.
    Mean,
}

/// Per-sample, per-class probabilities (row-major `n_samples x n_classes`)
/// with binary labels. Probabilities are stored clamped to `[eps, 1 - eps]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    n_classes: usize,
    probs: Vec<f64>,
    labels: Vec<u8>,
}

impl SampleBatch {
    pub fn from_probabilities(n_classes: usize, probs: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        Self::check_shape(n_classes, probs.len(), &labels)?;
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("probabilities must lie in [0, 1]"));
        }
        Ok(SampleBatch {
            n_classes,
            probs: probs.into_iter().map(clamp_prob).collect(),
            labels,
        })
    }

    pub fn from_logits(n_classes: usize, logits: &[f64], labels: Vec<u8>) -> Result<Self> {
        Self::check_shape(n_classes, logits.len(), &labels)?;
        if logits.iter().any(|z| !z.is_finite()) {
            return Err(Error::invalid("logits must be finite"));
        }
        Ok(SampleBatch {
            n_classes,
            probs: logits.iter().map(|&z| clamp_prob(sigmoid(z))).collect(),
            labels,
        })
    }

    fn check_shape(n_classes: usize, n_values: usize, labels: &[u8]) -> Result<()> {
        if n_classes == 0 {
            return Err(Error::invalid("batch needs at least one class"));
        }
        if n_values != labels.len() {
            return Err(Error::shape(format!(
                "{n_values} predictions but {} labels",
                labels.len()
            )));
        }
        if !n_values.is_multiple_of(n_classes) {
            return Err(Error::shape(format!(
                "{n_values} values do not divide into {n_classes} classes"
            )));
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(Error::invalid("labels must be 0 or 1"));
        }
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_samples(&self) -> usize {
        self.probs.len() / self.n_classes
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// `(N+, N-)` per class, counted from the labels.
    pub fn class_counts(&self) -> Vec<ClassCounts> {
        let mut counts = vec![ClassCounts::new(0, 0); self.n_classes];
        for (i, &y) in self.labels.iter().enumerate() {
            let c = &mut counts[i % self.n_classes];
            if y == 1 {
                c.n_plus += 1;
            } else {
                c.n_minus += 1;
            }
        }
        counts
    }
}

/// Loss of each class, summed (or averaged) over samples.
pub fn per_class_loss(
    batch: &SampleBatch,
    config: &LossConfig,
    reduction: Reduction,
) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("loss of an empty batch".into()));
    }
    let m = batch.n_classes;
    let coefs = (0..m)
        .map(|c| config.coefficients(c))
        .collect::<Result<Vec<_>>>()?;
    let mut totals = vec![0.0; m];
    for (row_p, row_y) in batch
        .probs
        .chunks_exact(m)
        .zip(batch.labels.chunks_exact(m))
    {
        for (c, (&p, &y)) in row_p.iter().zip(row_y).enumerate() {
            totals[c] += coefs[c].loss(p, y == 1);
        }
    }
    if reduction == Reduction::Mean {
        let n = batch.n_samples() as f64;
        totals.iter_mut().for_each(|t| *t /= n);
    }
    Ok(totals)
}

/// Total loss over all samples and classes.
pub fn loss_value(batch: &SampleBatch, config: &LossConfig, reduction: Reduction) -> Result<f64> {
    Ok(per_class_loss(batch, config, reduction)?.iter().sum())
}

/// Gradient of [`loss_value`] with respect to each logit (row-major `n x m`).
/// Logits whose probability falls in the clamp region get a zero gradient.
pub fn loss_grad_logits(
    logits: &[f64],
    labels: &[u8],
    n_classes: usize,
    config: &LossConfig,
    reduction: Reduction,
) -> Result<Vec<f64>> {
    SampleBatch::check_shape(n_classes, logits.len(), labels)?;
    if logits.is_empty() {
        return Err(Error::EmptyInput("gradient of an empty batch".into()));
    }
    let coefs = (0..n_classes)
        .map(|c| config.coefficients(c))
        .collect::<Result<Vec<_>>>()?;
    let scale = match reduction {
        Reduction::Sum => 1.0,
        Reduction::Mean => 1.0 / (logits.len() / n_classes) as f64,
    };
    logits
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (&z, &y))| {
            if !z.is_finite() {
                return Err(Error::invalid(format!("logit {i} is not finite")));
            }
            let p = sigmoid(z);
            if !(PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
                return Ok(0.0);
            }
            Ok(scale * coefs[i % n_classes].grad_logit(p, y == 1))
        })
        .collect()
}

/// Loss of a single logit, evaluated through the same path as [`loss_value`].
pub fn logit_loss(config: &LossConfig, class_index: usize, z: f64, y: u8) -> Result<f64> {
    let coefs = config.coefficients(class_index)?;
    Ok(coefs.loss(clamp_prob(sigmoid(z)), y == 1))
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Logits are drawn uniformly from this interval by [`validate_grad`].
pub const GRAD_CHECK_LOGIT_RANGE: f64 = 8.0;

/// Worst relative error between [`loss_grad_logits`] and central differences
/// of [`logit_loss`] over `trials` random `(z, y, class)` draws.
pub fn validate_grad(config: &LossConfig, trials: usize, seed: u64) -> Result<f64> {
    if trials == 0 {
        return Err(Error::invalid("validate_grad needs at least one trial"));
    }
    let n_classes = config.class_counts.len().max(1);
    let mut rng = seeded(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let z = rng.random_range(-GRAD_CHECK_LOGIT_RANGE..GRAD_CHECK_LOGIT_RANGE);
        let y = rng.random_range(0..2u8);
        let class = rng.random_range(0..n_classes);

        let mut logits = vec![0.0; n_classes];
        let mut labels = vec![0u8; n_classes];
        logits[class] = z;
        labels[class] = y;
        let analytic =
            loss_grad_logits(&logits, &labels, n_classes, config, Reduction::Sum)?[class];

        let plus = logit_loss(config, class, z + FD_STEP, y)?;
        let minus = logit_loss(config, class, z - FD_STEP, y)?;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(analytic, numeric));
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct LossClassRow {
    pub class: String,
    pub N_plus: u64,
    pub N_minus: u64,
    /// Weights at p = 0.5 for the probability-dependent methods.
    pub w_plus: f64,
    pub w_minus: f64,
    pub loss_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub method: String,
    pub hyper_params: BTreeMap<String, f64>,
    pub per_class: Vec<LossClassRow>,
}

/// Per-class weights and loss over a dataset. When `config` carries no
/// counts they are taken from the batch labels.
pub fn loss_report(
    class_names: &[String],
    batch: &SampleBatch,
    config: &LossConfig,
    reduction: Reduction,
) -> Result<LossReport> {
    if class_names.len() != batch.n_classes() {
        return Err(Error::shape(format!(
            "{} class names for a {}-class batch",
            class_names.len(),
            batch.n_classes()
        )));
    }
    let mut config = config.clone();
    if config.class_counts.is_empty() {
        config.class_counts = batch.class_counts();
    }
    let losses = per_class_loss(batch, &config, reduction)?;
    let per_class = class_names
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let counts = config.counts(c)?;
            let (w_plus, w_minus) = class_weights(&config, c, 0.5)?;
            Ok(LossClassRow {
                class: name.clone(),
                N_plus: counts.n_plus,
                N_minus: counts.n_minus,
                w_plus,
                w_minus,
                loss_value: losses[c],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LossReport {
        method: config.method.name().to_string(),
        hyper_params: config
            .method
            .hyper_params()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
        per_class,
    })
}
