//! `imba-lens` command-line front end.
//!
//! Settings come from an optional JSON config file (`--config`) and flags;
//! flags win. Relative paths inside the config file resolve against the
//! config file's directory.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 data error, 3 selftest failure.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignment::{self, AlignmentReport};
use crate::cam::{image_heatmap, CamOrder, HeadWeights};
use crate::dissection::{self, ConceptReport, Connectivity, DissectionConfig};
use crate::error::Error;
use crate::losses::{self, LossConfig, LossKind, LossReport, Reduction, SampleBatch};
use crate::metrics::{self, MetricsReport};
use crate::selftest::{self, Fault, SelftestOptions, SelftestReport};
use crate::tensor_io::{load_annotations, write_tensor, AnnotationSet, Manifest};

pub const THREADS_ENV: &str = "IMBA_LENS_THREADS";
pub const DEFAULT_Q: f64 = 0.01;
pub const DEFAULT_SEED: u64 = 0x1ba1_e75e;
pub const DEFAULT_TRIALS: usize = 1000;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] Error),
    #[error("selftest failed: {0}")]
    SelftestFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::SelftestFailed(_) => 3,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OrderArg {
    NormalizeFirst,
    UpsampleFirst,
}

impl From<OrderArg> for CamOrder {
    fn from(o: OrderArg) -> Self {
        match o {
            OrderArg::NormalizeFirst => CamOrder::NormalizeFirst,
            OrderArg::UpsampleFirst => CamOrder::UpsampleFirst,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FaultArg {
    CorruptThreshold,
}

#[derive(Debug, Parser)]
#[command(
    name = "imba-lens",
    version,
    about = "Feature analysis for imbalance-aware classifiers"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
    /// Box CSV with header image_id,label,x,y,w,h.
    #[arg(long, global = true, value_name = "PATH")]
    pub annotations: Option<PathBuf>,
    /// Classifier head weights tensor [M, C].
    #[arg(long, global = true, value_name = "PATH")]
    pub head: Option<PathBuf>,
    #[arg(long, global = true, value_name = "PATH")]
    pub head_bias: Option<PathBuf>,
    /// Output directory; reports go to stdout when omitted.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Top-activation quantile for dissection thresholds.
    #[arg(long, global = true, value_name = "FLOAT")]
    pub q: Option<f64>,
    #[arg(long, global = true, value_parser = ["4", "8"])]
    pub connectivity: Option<String>,
    #[arg(long, global = true, env = THREADS_ENV, value_name = "N")]
    pub threads: Option<usize>,
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Write one heatmap per annotated (image, class) pair plus an index.
    Cam {
        /// Also write 8-bit PGM renderings.
        #[arg(long)]
        pgm: bool,
        #[arg(long, value_enum)]
        order: Option<OrderArg>,
    },
    /// Soft IoBB / IoR of CAMs against the annotated boxes.
    Align {
        #[arg(long, value_enum)]
        order: Option<OrderArg>,
    },
    /// Disjoint / Unique concept counts.
    Dissect,
    /// AUROC, AP and mean predicted probability per class.
    Metrics,
    /// Per-class weights and loss values for one loss method.
    LossReport {
        #[arg(long, value_name = "bce|wbce|focal|cbfocal")]
        loss: Option<String>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        mean: bool,
    },
    /// Run the randomized oracle suites.
    Selftest {
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, value_enum, hide = true)]
        inject_fault: Option<FaultArg>,
    },
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    manifest: Option<PathBuf>,
    annotations: Option<PathBuf>,
    head: Option<PathBuf>,
    head_bias: Option<PathBuf>,
    out: Option<PathBuf>,
    threads: Option<usize>,
    seed: Option<u64>,
    format: Option<Format>,
    trials: Option<usize>,
    #[serde(default)]
    loss: LossSection,
    #[serde(default)]
    dissection: DissectionSection,
    #[serde(default)]
    alignment: AlignmentSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct LossSection {
    method: Option<LossKind>,
    alpha: Option<f64>,
    gamma: Option<f64>,
    beta: Option<f64>,
    reduction: Option<Reduction>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DissectionSection {
    q: Option<f64>,
    connectivity: Option<Connectivity>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct AlignmentSection {
    order: Option<CamOrder>,
    pgm: Option<bool>,
}

/// Fully resolved settings for one command.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub head: Option<PathBuf>,
    pub head_bias: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub loss_kind: LossKind,
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
    pub beta: Option<f64>,
    pub reduction: Reduction,
    pub dissection: DissectionConfig,
    pub order: CamOrder,
    pub pgm: bool,
    pub threads: usize,
    pub seed: u64,
    pub format: Format,
    pub trials: usize,
    pub fault: Option<Fault>,
}

impl RunConfig {
    /// Merges config file, flags and defaults, then checks the invariants.
    pub fn resolve(common: &CommonArgs, command: &Command) -> Result<Self, CliError> {
        let (file, base) = match &common.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
                let file: ConfigFile = serde_json::from_str(&text)
                    .map_err(|e| usage(format!("invalid config {}: {e}", path.display())))?;
                (
                    file,
                    path.parent().map(Path::to_path_buf).unwrap_or_default(),
                )
            }
            None => (ConfigFile::default(), PathBuf::new()),
        };
        let from_file =
            |p: Option<PathBuf>| p.map(|p| if p.is_absolute() { p } else { base.join(p) });

        let connectivity = match &common.connectivity {
            Some(s) => s.parse().map_err(|e: Error| usage(e.to_string()))?,
            None => file.dissection.connectivity.unwrap_or_default(),
        };
        let dissection = DissectionConfig::new(
            common.q.or(file.dissection.q).unwrap_or(DEFAULT_Q),
            connectivity,
        )
        .map_err(|e| usage(e.to_string()))?;

        let mut cfg = RunConfig {
            manifest: common.manifest.clone().or(from_file(file.manifest)),
            annotations: common.annotations.clone().or(from_file(file.annotations)),
            head: common.head.clone().or(from_file(file.head)),
            head_bias: common.head_bias.clone().or(from_file(file.head_bias)),
            out: common.out.clone().or(from_file(file.out)),
            loss_kind: file.loss.method.unwrap_or(LossKind::Bce),
            alpha: file.loss.alpha,
            gamma: file.loss.gamma,
            beta: file.loss.beta,
            reduction: file.loss.reduction.unwrap_or_default(),
            dissection,
            order: file.alignment.order.unwrap_or_default(),
            pgm: file.alignment.pgm.unwrap_or(false),
            threads: common
                .threads
                .or(file.threads)
                .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())),
            seed: common.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
            format: common.format.or(file.format).unwrap_or_default(),
            trials: file.trials.unwrap_or(DEFAULT_TRIALS),
            fault: None,
        };

        match command {
            Command::Cam { pgm, order } => {
                cfg.pgm |= *pgm;
                if let Some(o) = order {
                    cfg.order = (*o).into();
                }
            }
            Command::Align { order } => {
                if let Some(o) = order {
                    cfg.order = (*o).into();
                }
            }
            Command::LossReport {
                loss,
                alpha,
                gamma,
                beta,
                mean,
            } => {
                if let Some(l) = loss {
                    cfg.loss_kind = l.parse().map_err(|e: Error| usage(e.to_string()))?;
                }
                cfg.alpha = alpha.or(cfg.alpha);
                cfg.gamma = gamma.or(cfg.gamma);
                cfg.beta = beta.or(cfg.beta);
                if *mean {
                    cfg.reduction = Reduction::Mean;
                }
            }
            Command::Selftest {
                trials,
                inject_fault,
            } => {
                cfg.trials = trials.unwrap_or(cfg.trials);
                cfg.fault = inject_fault.map(|FaultArg::CorruptThreshold| Fault::CorruptThreshold);
            }
            Command::Dissect | Command::Metrics => {}
        }

        if cfg.threads == 0 {
            return Err(usage("thread count must be at least 1"));
        }
        if cfg.trials == 0 {
            return Err(usage("trials must be at least 1"));
        }
        for path in [&cfg.manifest, &cfg.annotations, &cfg.head, &cfg.head_bias]
            .into_iter()
            .flatten()
        {
            if !path.exists() {
                return Err(usage(format!("{} does not exist", path.display())));
            }
        }
        Ok(cfg)
    }

    fn require<'a>(&self, value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
        value
            .as_deref()
            .ok_or_else(|| usage(format!("{flag} is required for this command")))
    }

    pub fn load_manifest(&self) -> Result<Manifest, CliError> {
        Ok(Manifest::load(self.require(&self.manifest, "--manifest")?)?)
    }

    pub fn load_annotations(&self, manifest: &Manifest) -> Result<AnnotationSet, CliError> {
        let set = load_annotations(self.require(&self.annotations, "--annotations")?, manifest)?;
        if set.is_empty() {
            return Err(Error::EmptyInput("annotation file has no boxes".into()).into());
        }
        Ok(set)
    }

    /// `--head`, else the head named in the manifest.
    pub fn load_head(&self, manifest: &Manifest) -> Result<HeadWeights, CliError> {
        let path = match (&self.head, &manifest.head) {
            (Some(p), _) => p.clone(),
            (None, Some(p)) => manifest.resolve(p),
            (None, None) => return Err(usage("--head is required (manifest names no head)")),
        };
        let bias = match (&self.head_bias, &manifest.head_bias) {
            (Some(p), _) => Some(p.clone()),
            (None, Some(p)) if self.head.is_none() => Some(manifest.resolve(p)),
            _ => None,
        };
        Ok(HeadWeights::load(path, bias.as_deref())?)
    }

    pub fn loss_config(&self) -> Result<LossConfig, CliError> {
        let method = self
            .loss_kind
            .with_params(self.alpha, self.gamma, self.beta);
        LossConfig::new(method, Vec::new()).map_err(|e| usage(e.to_string()))
    }
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "._-".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(Error::from)?;
    s.push('\n');
    Ok(s)
}

/// Writes `contents` to `<out>/<file_name>`, or stdout when no output directory is set.
fn emit(cfg: &RunConfig, file_name: &str, contents: &str) -> Result<(), CliError> {
    match &cfg.out {
        Some(dir) => {
            create_dir(dir)?;
            write_file(&dir.join(file_name), contents.as_bytes())
        }
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapEntry {
    pub image_id: String,
    pub class: String,
    pub tensor: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pgm: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapIndex {
    pub order: CamOrder,
    pub image_height: usize,
    pub image_width: usize,
    pub heatmaps: Vec<HeatmapEntry>,
}

pub fn cmd_cam(cfg: &RunConfig) -> Result<HeatmapIndex, CliError> {
    let out = cfg.require(&cfg.out, "--out")?.to_path_buf();
    let manifest = cfg.load_manifest()?;
    let annotations = cfg.load_annotations(&manifest)?;
    let head = cfg.load_head(&manifest)?;
    alignment::check_head(&manifest, &head)?;

    let annotated: Vec<_> = manifest
        .entries
        .iter()
        .filter_map(|e| annotations.get(&e.image_id).map(|b| (e, b)))
        .collect();
    if annotated.is_empty() {
        return Err(Error::EmptyInput("no manifest image has box annotations".into()).into());
    }
    let maps_dir = out.join("heatmaps");
    create_dir(&maps_dir)?;

    let per_image = annotated
        .par_iter()
        .map(|(entry, boxes)| {
            let features = manifest.load_features(entry)?;
            alignment::boxes_by_class(&manifest, boxes)?
                .into_iter()
                .map(|(k, _)| {
                    let class = &manifest.class_names[k];
                    let map = image_heatmap(
                        &features,
                        &head,
                        k,
                        manifest.image_height,
                        manifest.image_width,
                        cfg.order,
                    )?;
                    let stem = format!("{}__{}", sanitize(&entry.image_id), sanitize(class));
                    let tensor = PathBuf::from("heatmaps").join(format!("{stem}.fmap"));
                    write_tensor(&map.to_tensor(), out.join(&tensor))?;
                    let pgm = if cfg.pgm {
                        let p = PathBuf::from("heatmaps").join(format!("{stem}.pgm"));
                        write_file(&out.join(&p), &map.to_pgm())?;
                        Some(p)
                    } else {
                        None
                    };
                    Ok(HeatmapEntry {
                        image_id: entry.image_id.clone(),
                        class: class.clone(),
                        tensor,
                        pgm,
                    })
                })
                .collect::<Result<Vec<_>, CliError>>()
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let index = HeatmapIndex {
        order: cfg.order,
        image_height: manifest.image_height,
        image_width: manifest.image_width,
        heatmaps: per_image.into_iter().flatten().collect(),
    };
    write_file(&out.join("index.json"), to_json(&index)?.as_bytes())?;
    Ok(index)
}

pub fn cmd_align(cfg: &RunConfig) -> Result<AlignmentReport, CliError> {
    let manifest = cfg.load_manifest()?;
    let annotations = cfg.load_annotations(&manifest)?;
    let head = cfg.load_head(&manifest)?;
    let report = alignment::aggregate_alignment(&manifest, &annotations, &head, cfg.order)?;
    emit(cfg, "alignment.json", &to_json(&report)?)?;
    Ok(report)
}

pub fn cmd_dissect(cfg: &RunConfig) -> Result<ConceptReport, CliError> {
    let manifest = cfg.load_manifest()?;
    let annotations = cfg.load_annotations(&manifest)?;
    let thresholds = dissection::channel_thresholds(&manifest, &cfg.dissection)?;
    let report = dissection::concept_report(&manifest, &annotations, &thresholds, &cfg.dissection)?;
    emit(cfg, "concepts.json", &to_json(&report)?)?;
    Ok(report)
}

pub fn cmd_metrics(cfg: &RunConfig) -> Result<MetricsReport, CliError> {
    let manifest = cfg.load_manifest()?;
    let report = metrics::manifest_metrics(&manifest)?;
    match cfg.format {
        Format::Json => emit(cfg, "metrics.json", &to_json(&report)?)?,
        Format::Csv => emit(cfg, "metrics.csv", &report.to_csv())?,
    }
    Ok(report)
}

pub fn cmd_loss_report(cfg: &RunConfig) -> Result<LossReport, CliError> {
    let manifest = cfg.load_manifest()?;
    let config = cfg.loss_config()?;
    let (logits, labels) = manifest.load_logit_matrix()?;
    let batch = SampleBatch::from_logits(manifest.num_classes(), &logits, labels)?;
    let report = losses::loss_report(&manifest.class_names, &batch, &config, cfg.reduction)?;
    emit(cfg, "loss_report.json", &to_json(&report)?)?;
    Ok(report)
}

pub fn cmd_selftest(cfg: &RunConfig) -> Result<SelftestReport, CliError> {
    let report = selftest::run(&SelftestOptions {
        seed: cfg.seed,
        trials: cfg.trials,
        fault: cfg.fault,
    })
    .map_err(|e| usage(e.to_string()))?;
    for s in &report.suites {
        eprintln!(
            "{} {:<32} worst={:.3e} tol={:.0e} trials={}",
            if s.passed { "PASS" } else { "FAIL" },
            s.name,
            s.worst,
            s.tolerance,
            s.trials
        );
    }
    if let Some(dir) = &cfg.out {
        create_dir(dir)?;
        write_file(&dir.join("selftest.json"), to_json(&report)?.as_bytes())?;
    }
    if !report.passed {
        let failed: Vec<_> = report
            .suites
            .iter()
            .filter(|s| !s.passed)
            .map(|s| s.name.as_str())
            .collect();
        return Err(CliError::SelftestFailed(failed.join(", ")));
    }
    Ok(report)
}

pub fn execute(cfg: &RunConfig, command: &Command) -> Result<(), CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| usage(format!("cannot start thread pool: {e}")))?;
    pool.install(|| match command {
        Command::Cam { .. } => cmd_cam(cfg).map(drop),
        Command::Align { .. } => cmd_align(cfg).map(drop),
        Command::Dissect => cmd_dissect(cfg).map(drop),
        Command::Metrics => cmd_metrics(cfg).map(drop),
        Command::LossReport { .. } => cmd_loss_report(cfg).map(drop),
        Command::Selftest { .. } => cmd_selftest(cfg).map(drop),
    })
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result =
        RunConfig::resolve(&cli.common, &cli.command).and_then(|cfg| execute(&cfg, &cli.command));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("imba-lens: {e}");
            e.exit_code()
        }
    }
}
