//! `voxkit` command line: thin drivers over the core dataset operations.
//!
//! Exit codes: 0 success, 1 when any sample (or the whole run) failed, 2 on
//! usage errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};
use thiserror::Error;
use voxkit_core::batch::{self, BatchReport};
use voxkit_core::dataset::{self, DatasetError, FilterCriteria, Layout};
use voxkit_core::infer::{sliding_window_infer, PredictorSpec, SlidingWindowConfig};
use voxkit_core::json::to_stable_string;
use voxkit_core::preprocess::{LabelMap, Normalization, ResampleTarget, Transform};
use voxkit_core::{read_volume, write_volume, OrientationCode, WriteOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "voxkit", version, about = "Volumetric CT dataset toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Worker count; bare `--mp` uses every logical core. Serial when absent.
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "0", value_name = "N")]
    pub mp: Option<usize>,
    /// Print a machine-readable JSON summary instead of text.
    #[arg(long, global = true)]
    pub json: bool,
    /// Write raw MetaImage payloads instead of zlib-compressed ones.
    #[arg(long, global = true)]
    pub no_compress: bool,
}

impl GlobalArgs {
    fn workers(&self) -> usize {
        self.mp.unwrap_or(1)
    }

    fn write_options(&self) -> WriteOptions {
        WriteOptions {
            compress: !self.no_compress,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Resample volumes to a common spacing or size.
    Resample {
        #[command(subcommand)]
        what: ResampleCommand,
    },
    /// Split every pair into fixed-size patches.
    Patch {
        src: PathBuf,
        dst: PathBuf,
        #[arg(long, num_args = 3, value_names = ["Z", "Y", "X"], required = true)]
        patch_size: Vec<usize>,
        #[arg(long, num_args = 3, value_names = ["Z", "Y", "X"], required = true)]
        patch_stride: Vec<usize>,
    },
    /// Dataset checks.
    Check {
        #[command(subcommand)]
        what: CheckCommand,
    },
    /// Build `meta.json` for a dataset root.
    Meta {
        root: PathBuf,
        /// Only compare the existing `meta.json` with the file headers.
        #[arg(long)]
        verify: bool,
    },
    /// Rewrite label values.
    Remap {
        src: PathBuf,
        dst: PathBuf,
        /// `old:new[,old:new...]`; unlisted values are kept.
        #[arg(long)]
        map: String,
    },
    /// Copy a dataset into another directory layout.
    Convert {
        src: PathBuf,
        dst: PathBuf,
        /// native, decathlon or channel-file-pairs.
        #[arg(long)]
        layout: String,
    },
    /// Score predicted label maps against ground truth.
    Eval {
        pred: PathBuf,
        gt: PathBuf,
        #[arg(long)]
        classes: usize,
        /// Also write the full report here.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Reorient every pair to an anatomical code such as LPI.
    Orient {
        src: PathBuf,
        dst: PathBuf,
        #[arg(long)]
        code: String,
    },
    /// Apply seeded random transforms to every pair.
    Augment {
        src: PathBuf,
        dst: PathBuf,
        /// Transform as JSON, e.g. '{"name":"flip","p":0.5}'. Repeatable;
        /// applied in order.
        #[arg(long = "transform", required = true)]
        transforms: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        bind: Option<std::net::SocketAddr>,
        #[arg(long)]
        spool_dir: Option<PathBuf>,
        #[arg(long)]
        max_upload_bytes: Option<usize>,
    },
    /// Sliding-window segmentation of one volume.
    Infer {
        volume: PathBuf,
        out: PathBuf,
        #[command(flatten)]
        predictor: PredictorArgs,
        #[arg(long, num_args = 3, value_names = ["Z", "Y", "X"], required = true)]
        patch_size: Vec<usize>,
        #[arg(long, num_args = 3, value_names = ["Z", "Y", "X"], required = true)]
        stride: Vec<usize>,
        /// Window-level normalisation before prediction.
        #[arg(long, num_args = 2, value_names = ["CENTER", "WIDTH"], conflicts_with = "instance_norm")]
        window: Option<Vec<f64>>,
        /// Zero-mean unit-variance normalisation before prediction.
        #[arg(long)]
        instance_norm: bool,
        /// Also write per-class probability volumes next to `out`.
        #[arg(long)]
        save_probabilities: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum ResampleCommand {
    /// Resample a whole dataset (images trilinear, labels nearest).
    Dataset {
        src: PathBuf,
        dst: PathBuf,
        #[arg(long, num_args = 3, value_names = ["Z", "Y", "X"], required_unless_present = "size", conflicts_with = "size")]
        spacing: Option<Vec<f64>>,
        #[arg(long, num_args = 3, value_names = ["Z", "Y", "X"])]
        size: Option<Vec<usize>>,
    },
}

#[derive(Debug, Subcommand)]
pub enum CheckCommand {
    /// Link the samples meeting the criteria into a new dataset root.
    Symlink {
        src: PathBuf,
        dst: PathBuf,
        #[arg(long, num_args = 3, value_names = ["Z", "Y", "X"], required = true)]
        min_size: Vec<usize>,
        #[arg(long, num_args = 3, value_names = ["Z", "Y", "X"])]
        min_spacing: Option<Vec<f64>>,
        #[arg(long, num_args = 3, value_names = ["Z", "Y", "X"])]
        max_spacing: Option<Vec<f64>>,
    },
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct PredictorArgs {
    /// Two-class predictor: foreground where `LO <= value <= HI`.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"], allow_negative_numbers = true)]
    pub threshold: Option<Vec<f32>>,
    /// ONNX model; requires `--io-spec`.
    #[arg(long, requires = "io_spec")]
    pub model: Option<PathBuf>,
    #[arg(long, requires = "model")]
    pub io_spec: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Format(#[from] voxkit_core::FormatError),
    #[error(transparent)]
    Metrics(#[from] voxkit_core::metrics::MetricsError),
    #[error(transparent)]
    Infer(#[from] voxkit_core::infer::InferError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Service(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            _ => EXIT_FAILURE,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn triple<T: Copy>(v: &[T]) -> [T; 3] {
    [v[0], v[1], v[2]]
}

/// Parses `args` (including the program name) and runs the verb, returning
/// the process exit code. Diagnostics go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(out) => {
            if cli.global.json {
                println!("{}", to_stable_string(&out.summary).unwrap_or_default().trim_end());
            } else if !out.text.is_empty() {
                println!("{}", out.text.trim_end());
            }
            out.code
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs a legacy alias such as `itk_resample`, which is `voxkit <verb>`.
pub fn run_alias(verb: &str) -> i32 {
    let mut args: Vec<OsString> = std::env::args_os().collect();
    let program = if args.is_empty() { OsString::from("voxkit") } else { args.remove(0) };
    run(std::iter::once(program).chain(std::iter::once(OsString::from(verb))).chain(args))
}

/// What a verb reports: exit code, human text and JSON summary.
pub struct Outcome {
    pub code: i32,
    pub text: String,
    pub summary: Value,
}

impl Outcome {
    fn ok(text: String, summary: Value) -> Self {
        Outcome { code: EXIT_OK, text, summary }
    }
}

fn batch_outcome(verb: &str, dst: &Path, report: &BatchReport, extra: Value) -> Outcome {
    let mut text = format!(
        "{verb}: {} processed, {} skipped, {} failed -> {}",
        report.processed.len(),
        report.skipped.len(),
        report.failed.len(),
        dst.display()
    );
    for (stem, why) in &report.skipped {
        text.push_str(&format!("\n  skipped {stem}: {why}"));
    }
    for (stem, why) in &report.failed {
        text.push_str(&format!("\n  failed {stem}: {why}"));
    }
    let mut summary = json!({"verb": verb, "output": dst, "report": report});
    if let (Value::Object(s), Value::Object(e)) = (&mut summary, extra) {
        s.extend(e);
    }
    Outcome {
        code: if report.has_failures() { EXIT_FAILURE } else { EXIT_OK },
        text,
        summary,
    }
}

pub fn execute(cli: &Cli) -> Result<Outcome, CliError> {
    let g = &cli.global;
    let workers = g.workers();
    let opts = g.write_options();
    match &cli.command {
        Command::Resample {
            what: ResampleCommand::Dataset { src, dst, spacing, size },
        } => {
            let target = match (spacing, size) {
                (Some(s), None) => {
                    let s = triple(s);
                    if s.iter().any(|&x| !(x.is_finite() && x > 0.0)) {
                        return Err(usage(format!("--spacing must be positive, got {s:?}")));
                    }
                    ResampleTarget::Spacing(s)
                }
                (None, Some(z)) => {
                    let z = triple(z);
                    if z.contains(&0) {
                        return Err(usage(format!("--size must be positive, got {z:?}")));
                    }
                    ResampleTarget::Size(z)
                }
                _ => return Err(usage("give exactly one of --spacing and --size")),
            };
            let report = batch::resample_dataset(src, dst, target, workers, opts)?;
            Ok(batch_outcome("resample", dst, &report, json!({})))
        }
        Command::Patch {
            src,
            dst,
            patch_size,
            patch_stride,
        } => {
            let (p, s) = (triple(patch_size), triple(patch_stride));
            if (0..3).any(|a| p[a] == 0 || s[a] == 0 || s[a] > p[a]) {
                return Err(usage(format!("need 0 < stride <= patch size, got size {p:?} stride {s:?}")));
            }
            let (report, crop) = batch::patch_dataset(src, dst, p, s, workers, opts)?;
            Ok(batch_outcome("patch", dst, &report, json!({"patches": crop.patches.len()})))
        }
        Command::Check {
            what:
                CheckCommand::Symlink {
                    src,
                    dst,
                    min_size,
                    min_spacing,
                    max_spacing,
                },
        } => {
            let criteria = FilterCriteria {
                min_size: triple(min_size),
                min_spacing: min_spacing.as_deref().map(triple),
                max_spacing: max_spacing.as_deref().map(triple),
            };
            let report = dataset::filter_symlink(src, dst, &criteria, workers)?;
            let mut text = format!(
                "check symlink: {} kept, {} dropped -> {}",
                report.kept.len(),
                report.dropped.len(),
                dst.display()
            );
            for (stem, why) in &report.dropped {
                text.push_str(&format!("\n  dropped {stem}: {why}"));
            }
            Ok(Outcome::ok(text, json!({"verb": "check symlink", "output": dst, "report": report})))
        }
        Command::Meta { root, verify } => {
            if *verify {
                let mismatches = dataset::verify_meta(root, workers)?;
                let mut text = format!("meta: {} mismatches in {}", mismatches.len(), root.display());
                for m in &mismatches {
                    text.push_str(&format!("\n  {}: {}", m.stem, m.detail));
                }
                let code = if mismatches.is_empty() { EXIT_OK } else { EXIT_FAILURE };
                let summary = json!({"verb": "meta", "root": root, "mismatches": mismatches});
                return Ok(Outcome { code, text, summary });
            }
            let meta = dataset::build_meta(root, workers)?;
            let mut text = format!(
                "meta: {} samples, {} errors -> {}",
                meta.samples.len(),
                meta.errors.len(),
                root.join(dataset::META_FILE).display()
            );
            for (stem, r) in &meta.samples {
                text.push_str(&format!(
                    "\n  {stem}: size {:?} spacing {:?} {} {}",
                    r.size, r.spacing, r.orientation, r.element_type
                ));
            }
            for e in &meta.errors {
                text.push_str(&format!("\n  error {}: {}", e.stem, e.error));
            }
            let code = if meta.errors.is_empty() { EXIT_OK } else { EXIT_FAILURE };
            let summary = json!({"verb": "meta", "root": root, "samples": meta.samples.len(), "errors": meta.errors});
            Ok(Outcome { code, text, summary })
        }
        Command::Remap { src, dst, map } => {
            let map: LabelMap = map.parse().map_err(|e| usage(format!("--map: {e}")))?;
            let (report, _) = batch::remap_dataset(src, dst, &map, workers, opts)?;
            Ok(batch_outcome("remap", dst, &report, json!({})))
        }
        Command::Convert { src, dst, layout } => {
            let layout: Layout = layout.parse().map_err(|e| usage(format!("--layout: {e}")))?;
            let n = dataset::convert_layout(src, dst, layout, workers)?;
            Ok(Outcome::ok(
                format!("convert: {n} samples -> {}", dst.display()),
                json!({"verb": "convert", "output": dst, "samples": n}),
            ))
        }
        Command::Eval {
            pred,
            gt,
            classes,
            output,
        } => {
            if *classes == 0 {
                return Err(usage("--classes must be positive"));
            }
            let report = voxkit_core::metrics::evaluate_dataset(pred, gt, *classes, workers)?;
            if let Some(path) = output {
                voxkit_core::json::write_json(path, &report).map_err(|source| CliError::Io {
                    path: path.clone(),
                    source,
                })?;
            }
            let mut text = report.table();
            for s in &report.missing_gt {
                text.push_str(&format!("\nno ground truth for {s}"));
            }
            for s in &report.missing_pred {
                text.push_str(&format!("\nno prediction for {s}"));
            }
            let missing = !(report.missing_gt.is_empty() && report.missing_pred.is_empty());
            let summary = serde_json::to_value(&report).unwrap_or_default();
            Ok(Outcome {
                code: if missing { EXIT_FAILURE } else { EXIT_OK },
                text,
                summary,
            })
        }
        Command::Orient { src, dst, code } => {
            let target: OrientationCode = code.parse().map_err(|e| usage(format!("--code: {e}")))?;
            let report = batch::orient_dataset(src, dst, target, workers, opts)?;
            Ok(batch_outcome("orient", dst, &report, json!({"code": target.to_string()})))
        }
        Command::Augment {
            src,
            dst,
            transforms,
            seed,
        } => {
            let parsed = transforms
                .iter()
                .map(|t| serde_json::from_str::<Transform>(t).map_err(|e| usage(format!("--transform {t}: {e}"))))
                .collect::<Result<Vec<_>, _>>()?;
            let (report, _) = batch::augment_dataset(src, dst, &parsed, *seed, workers, opts)?;
            Ok(batch_outcome("augment", dst, &report, json!({"seed": seed})))
        }
        Command::Serve {
            bind,
            spool_dir,
            max_upload_bytes,
        } => {
            let mut config = voxkit_service::ServiceConfig::from_env().map_err(usage)?;
            if let Some(b) = bind {
                config.bind = *b;
            }
            if let Some(d) = spool_dir {
                config.spool_dir = Some(d.clone());
            }
            if let Some(m) = max_upload_bytes {
                config.max_upload_bytes = *m;
            }
            let runtime = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .map_err(|e| CliError::Service(e.to_string()))?;
            runtime
                .block_on(voxkit_service::serve(config))
                .map_err(|e| CliError::Service(e.to_string()))?;
            Ok(Outcome::ok(String::new(), json!({"verb": "serve"})))
        }
        Command::Infer {
            volume,
            out,
            predictor,
            patch_size,
            stride,
            window,
            instance_norm,
            save_probabilities,
        } => {
            let spec = predictor.spec()?;
            let mut cfg = SlidingWindowConfig::new(triple(patch_size), triple(stride));
            cfg.workers = workers;
            cfg.keep_probabilities = *save_probabilities;
            cfg.normalization = match (window, instance_norm) {
                (Some(w), _) => Normalization::WindowLevel {
                    center: w[0],
                    width: w[1],
                },
                (None, true) => Normalization::Instance,
                (None, false) => Normalization::None,
            };
            cfg.validate().map_err(|e| usage(e.to_string()))?;
            let input = read_volume(volume).map_err(|e| CliError::Usage(format!("{}: {e}", volume.display())))?;
            let model = spec.build(cfg.patch_size)?;
            let result = sliding_window_infer(&input, model.as_ref(), &cfg)?;
            write_volume(&result.labels, out, opts)?;
            let mut written = vec![out.clone()];
            if let Some(probs) = &result.probabilities {
                for (c, p) in probs.iter().enumerate() {
                    let path = sibling(out, &format!("_prob{c}"));
                    write_volume(p, &path, opts)?;
                    written.push(path);
                }
            }
            Ok(Outcome::ok(
                format!("infer: {} windows -> {}", result.windows, out.display()),
                json!({"verb": "infer", "outputs": written, "windows": result.windows, "padding": result.padding}),
            ))
        }
    }
}

impl PredictorArgs {
    fn spec(&self) -> Result<PredictorSpec, CliError> {
        if let Some(t) = &self.threshold {
            return Ok(PredictorSpec::Threshold { lo: t[0], hi: t[1] });
        }
        self.model_spec()
    }

    #[cfg(feature = "onnx")]
    fn model_spec(&self) -> Result<PredictorSpec, CliError> {
        let (Some(model), Some(io)) = (&self.model, &self.io_spec) else {
            return Err(usage("give --threshold LO HI or --model with --io-spec"));
        };
        let io_spec = voxkit_core::infer::IoSpec::read(io)?;
        Ok(PredictorSpec::Onnx {
            model: model.clone(),
            io_spec,
        })
    }

    #[cfg(not(feature = "onnx"))]
    fn model_spec(&self) -> Result<PredictorSpec, CliError> {
        Err(usage("this build has no ONNX support"))
    }
}

/// `out` with `suffix` inserted before its volume extension.
fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let name = out.file_name().and_then(|n| n.to_str()).unwrap_or("out.mha");
    let (stem, ext) = voxkit_core::io::split_volume_name(name).unwrap_or((name, ".mha"));
    out.with_file_name(format!("{stem}{suffix}{ext}"))
}
