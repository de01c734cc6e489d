//! Randomized oracle suites run by `imba-lens selftest`.

use serde::Serialize;

use crate::alignment;
use crate::dissection::{self, Connectivity, Mask};
use crate::error::{Error, Result};
use crate::losses::{self, ClassCounts, LossConfig};
use crate::metrics::{self, ScoreKind, ScoredSamples};
use crate::oracle;
use crate::rng::seeded;
use rand::Rng;

pub const GRAD_TOLERANCE: f64 = 1e-6;
pub const ALIGNMENT_TOLERANCE: f64 = 1e-9;
pub const METRICS_TOLERANCE: f64 = 1e-12;
pub const QUANTILE_LEVELS: [f64; 3] = [0.01, 0.04, 0.5];

/// Deliberate corruption used to prove the suites can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Replace each computed threshold by the channel minimum.
    CorruptThreshold,
}

#[derive(Debug, Clone, Copy)]
pub struct SelftestOptions {
    pub seed: u64,
    pub trials: usize,
    pub fault: Option<Fault>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteResult {
    pub name: String,
    pub trials: usize,
    /// Worst observed error (mismatch count for exact suites).
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl SuiteResult {
    fn new(name: impl Into<String>, trials: usize, worst: f64, tolerance: f64) -> Self {
        SuiteResult {
            name: name.into(),
            trials,
            worst,
            tolerance,
            passed: worst <= tolerance,
        }
    }

    fn strict(name: impl Into<String>, trials: usize, worst: f64, tolerance: f64) -> Self {
        let mut r = Self::new(name, trials, worst, tolerance);
        r.passed = worst < tolerance;
        r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelftestReport {
    pub seed: u64,
    pub suites: Vec<SuiteResult>,
    pub passed: bool,
}

pub fn run(options: &SelftestOptions) -> Result<SelftestReport> {
    if options.trials == 0 {
        return Err(Error::invalid("selftest needs at least one trial"));
    }
    let mut suites = gradient_suites(options)?;
    suites.push(alignment_suite(options)?);
    suites.extend(component_suites(options));
    suites.extend(quantile_suites(options)?);
    suites.extend(metrics_suites(options)?);
    let passed = suites.iter().all(|s| s.passed);
    Ok(SelftestReport {
        seed: options.seed,
        suites,
        passed,
    })
}

/// The four losses at the chest X-ray settings, with skewed class counts.
pub fn reference_loss_configs() -> Vec<LossConfig> {
    let counts = vec![ClassCounts::new(37, 963), ClassCounts::new(5, 95)];
    vec![
        LossConfig::bce(),
        LossConfig::wbce(counts.clone()),
        LossConfig::focal(losses::DEFAULT_ALPHA, losses::DEFAULT_GAMMA).expect("valid focal"),
        LossConfig::cb_focal(losses::DEFAULT_BETA, losses::DEFAULT_GAMMA, counts)
            .expect("valid cbfocal"),
    ]
}

fn gradient_suites(options: &SelftestOptions) -> Result<Vec<SuiteResult>> {
    reference_loss_configs()
        .iter()
        .map(|config| {
            let worst = losses::validate_grad(config, options.trials, options.seed)?;
            Ok(SuiteResult::strict(
                format!("gradient/{}", config.method),
                options.trials,
                worst,
                GRAD_TOLERANCE,
            ))
        })
        .collect()
}

fn alignment_suite(options: &SelftestOptions) -> Result<SuiteResult> {
    let mut rng = seeded(options.seed ^ 0xA11C);
    let mut worst = 0.0f64;
    for _ in 0..options.trials {
        let map = oracle::random_heatmap(&mut rng, 32, 32);
        let n_boxes = rng.random_range(1..=3);
        let boxes: Vec<_> = (0..n_boxes)
            .map(|_| oracle::random_box(&mut rng, 32, 32))
            .collect();
        let s = alignment::score(&map, &boxes)?;
        let (iobb, ior) = oracle::brute_soft_scores(map.values(), 32, 32, &boxes);
        worst = worst.max((s.iobb - iobb).abs()).max((s.ior - ior).abs());
    }
    Ok(SuiteResult::new(
        "alignment/brute-force",
        options.trials,
        worst,
        ALIGNMENT_TOLERANCE,
    ))
}

fn component_suites(options: &SelftestOptions) -> Vec<SuiteResult> {
    [Connectivity::Four, Connectivity::Eight]
        .into_iter()
        .map(|conn| {
            let mut rng = seeded(options.seed ^ 0xCC00 ^ conn.as_u8() as u64);
            let mut mismatches = 0usize;
            for _ in 0..options.trials {
                let (h, w, cells) = oracle::random_mask(&mut rng, 16);
                let expected = oracle::flood_fill_count(&cells, h, w, conn);
                let mask = Mask::new(h, w, cells).expect("consistent mask");
                if dissection::connected_components(&mask, conn).len() != expected {
                    mismatches += 1;
                }
            }
            SuiteResult::new(
                format!("components/{conn}-connected"),
                options.trials,
                mismatches as f64,
                0.0,
            )
        })
        .collect()
}

/// Worst excursion of `#{v >= tau} / n` outside `[q - 1/n, q + 1/n]`.
fn quantile_suites(options: &SelftestOptions) -> Result<Vec<SuiteResult>> {
    QUANTILE_LEVELS
        .iter()
        .map(|&q| {
            let mut rng = seeded(options.seed ^ 0x9047 ^ q.to_bits());
            let mut worst = 0.0f64;
            for _ in 0..options.trials {
                let n = rng.random_range(1..=2000);
                let values: Vec<f32> = (0..n).map(|_| rng.random::<f32>()).collect();
                let mut scratch = values.clone();
                let mut tau = dissection::quantile_threshold(&mut scratch, q)?;
                if options.fault == Some(Fault::CorruptThreshold) {
                    tau = values.iter().copied().fold(f32::INFINITY, f32::min);
                }
                let frac = oracle::count_at_or_above(&values, tau) as f64 / n as f64;
                let band = 1.0 / n as f64;
                let excess = (frac - (q + band)).max((q - band) - frac).max(0.0);
                worst = worst.max(excess);
            }
            Ok(SuiteResult::new(
                format!("quantile/q={q}"),
                options.trials,
                worst,
                0.0,
            ))
        })
        .collect()
}

fn metrics_suites(options: &SelftestOptions) -> Result<Vec<SuiteResult>> {
    let mut rng = seeded(options.seed ^ 0xA0C);
    let (mut worst_auc, mut worst_ap) = (0.0f64, 0.0f64);
    for _ in 0..options.trials {
        let (scores, labels) = oracle::random_ranking(&mut rng, 200);
        let s = ScoredSamples::new("c", scores.clone(), labels.clone(), ScoreKind::Probability)?;
        worst_auc =
            worst_auc.max((metrics::auroc(&s)? - oracle::brute_auroc(&scores, &labels)).abs());
        worst_ap = worst_ap.max(
            (metrics::average_precision(&s)? - oracle::brute_average_precision(&scores, &labels))
                .abs(),
        );
    }
    Ok(vec![
        SuiteResult::new(
            "metrics/auroc",
            options.trials,
            worst_auc,
            METRICS_TOLERANCE,
        ),
        SuiteResult::new(
            "metrics/average-precision",
            options.trials,
            worst_ap,
            METRICS_TOLERANCE,
        ),
    ])
}
