//! `smallobj` — dataset statistics, size splits, copy-paste augmentation,
//! size-stratified mAP evaluation, and a toy adversarial training demo.
//!
//! Progress and diagnostics go to stderr; machine-readable results go to
//! files (or stdout where noted).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::Rng as _;
use smallobj_core::augment::{self, PlacementPolicy, Pools, StrategyConfig};
use smallobj_core::eval::{self, ApProtocol, CrossSizeMode, EvalConfig};
use smallobj_core::gan::{self, TrainingConfig};
use smallobj_core::patch::{build_voc_pool, load_generated_pool, ObjectPool};
use smallobj_core::rng;
use smallobj_core::voc::{self, SizeClass};
use smallobj_core::Error;

const EXIT_VALIDATION: u8 = 3;
const EXIT_IO: u8 = 4;
const EXIT_COMPUTE: u8 = 5;

#[derive(Parser)]
#[command(name = "smallobj", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DatasetArgs {
    /// Directory of VOC XML annotations. Defaults to
    /// $SMALLOBJ_DATA_ROOT/Annotations when unset.
    #[arg(long)]
    annotations: Option<PathBuf>,

    /// Directory of image files. Defaults to $SMALLOBJ_DATA_ROOT/JPEGImages.
    #[arg(long)]
    images: Option<PathBuf>,
}

impl DatasetArgs {
    fn annotations_dir(&self) -> Result<PathBuf, Error> {
        resolve(&self.annotations, "Annotations", "--annotations")
    }

    fn images_dir(&self) -> Result<PathBuf, Error> {
        resolve(&self.images, "JPEGImages", "--images")
    }
}

fn resolve(explicit: &Option<PathBuf>, subdir: &str, flag: &str) -> Result<PathBuf, Error> {
    if let Some(p) = explicit {
        return Ok(p.clone());
    }
    if let Ok(root) = std::env::var("SMALLOBJ_DATA_ROOT") {
        return Ok(PathBuf::from(root).join(subdir));
    }
    Err(Error::Validation(format!(
        "{flag} not given and SMALLOBJ_DATA_ROOT not set"
    )))
}

#[derive(Subcommand)]
enum Command {
    /// Per-class, per-size object counts for a dataset.
    Stats {
        #[command(flatten)]
        dataset: DatasetArgs,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write a Markdown table.
        #[arg(long)]
        markdown: Option<PathBuf>,
    },
    /// Extract the annotations of one size group.
    Split {
        #[command(flatten)]
        dataset: DatasetArgs,
        /// small | medium | big
        #[arg(long)]
        size: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a copy-paste oversampling strategy.
    Augment {
        #[command(flatten)]
        dataset: DatasetArgs,
        /// Strategy preset 1..=5.
        #[arg(long, conflicts_with = "strategy_config")]
        strategy: Option<u32>,
        /// Key-value strategy config file (overrides the preset-2 defaults).
        #[arg(long)]
        strategy_config: Option<PathBuf>,
        /// Directory of generated 32x32 patches, laid out class/<file>.png.
        #[arg(long)]
        generated_pool: Option<PathBuf>,
        /// Restrict the VOC patch pool to one size group.
        #[arg(long)]
        pool_size: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Master seed; drawn at random (and printed) when omitted.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; results do not depend on this.
        #[arg(long)]
        jobs: Option<usize>,
        /// Placement retry budget per paste.
        #[arg(long, default_value_t = 50)]
        max_attempts: u32,
    },
    /// Size-stratified AP/mAP of detector output files.
    Eval {
        #[command(flatten)]
        dataset: DatasetArgs,
        /// Directory of per-class detection files (`<class>.txt`).
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        size: Option<String>,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
        /// 11point | allpoints
        #[arg(long, default_value = "11point")]
        protocol: String,
        /// Count cross-size matches as false positives instead of ignoring them.
        #[arg(long)]
        strict_cross_size: bool,
        /// Write the CSV report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        markdown: Option<PathBuf>,
    },
    /// Toy adversarial residual training on two Gaussian clusters.
    GanDemo {
        #[arg(long, default_value_t = 4)]
        dim: usize,
        /// Offset between the large and small cluster means, per coordinate.
        #[arg(long, default_value_t = 0.0)]
        offset: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 64)]
        samples: usize,
        #[arg(long, default_value_t = 1500)]
        iterations: usize,
        /// Discriminator step size.
        #[arg(long, default_value_t = 0.1)]
        learning_rate: f64,
        /// Generator step size.
        #[arg(long, default_value_t = 0.005)]
        gen_learning_rate: f64,
        #[arg(long, default_value_t = 0.0)]
        momentum: f64,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for the loss history CSV and parameter dump.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Io { .. } | Error::Image { .. } => EXIT_IO,
                Error::Domain(_) | Error::Diverged { .. } => EXIT_COMPUTE,
                _ => EXIT_VALIDATION,
            })
        }
    }
}

fn effective_seed(seed: Option<u64>) -> u64 {
    let seed = seed.unwrap_or_else(|| rand::thread_rng().gen());
    eprintln!("seed: {seed}");
    seed
}

fn write_or_stdout(out: &Option<PathBuf>, content: &str) -> Result<(), Error> {
    match out {
        Some(path) => std::fs::write(path, content).map_err(|e| Error::io(path, e)),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn run(command: Command) -> Result<(), Error> {
    match command {
        Command::Stats {
            dataset,
            out,
            markdown,
        } => {
            let dir = dataset.annotations_dir()?;
            let annotations = voc::load_annotation_dir(&dir)?;
            eprintln!(
                "loaded {} annotations from {}",
                annotations.len(),
                dir.display()
            );
            let stats = voc::dataset_stats(&annotations);
            write_or_stdout(&out, &stats.to_csv())?;
            if let Some(md) = markdown {
                std::fs::write(&md, stats.to_markdown()).map_err(|e| Error::io(&md, e))?;
            }
            Ok(())
        }
        Command::Split { dataset, size, out } => {
            let size = SizeClass::parse(&size)?;
            let dir = dataset.annotations_dir()?;
            let annotations = voc::load_annotation_dir(&dir)?;
            let split = voc::split_by_size(&annotations, size);
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            for ann in &split {
                let path = out.join(format!("{}.xml", ann.image_id));
                std::fs::write(&path, voc::write_annotation(ann)?)
                    .map_err(|e| Error::io(&path, e))?;
            }
            eprintln!(
                "{} of {} images have {} objects",
                split.len(),
                annotations.len(),
                size.name()
            );
            Ok(())
        }
        Command::Augment {
            dataset,
            strategy,
            strategy_config,
            generated_pool,
            pool_size,
            out,
            seed,
            jobs,
            max_attempts,
        } => {
            if let Some(n) = jobs {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                    .map_err(|e| Error::Validation(format!("--jobs: {e}")))?;
            }
            let mut config = StrategyConfig::preset(strategy.unwrap_or(2))?;
            if let Some(path) = strategy_config {
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                config.apply_config_text(&text)?;
            }
            let seed = effective_seed(seed);
            let ann_dir = dataset.annotations_dir()?;
            let images_dir = dataset.images_dir()?;
            let annotations = voc::load_annotation_dir(&ann_dir)?;

            let pool_filter = pool_size.as_deref().map(SizeClass::parse).transpose()?;
            let needs_voc = config.patch_source != augment::PatchSourceKind::OriginalObject
                || config.class_switch;
            let voc_pool: Option<ObjectPool> = if needs_voc {
                eprintln!("building VOC patch pool...");
                Some(build_voc_pool(&annotations, &images_dir, pool_filter)?)
            } else {
                None
            };
            let gen_pool: Option<ObjectPool> = match (&generated_pool, config.patch_source) {
                (Some(dir), _) => Some(load_generated_pool(dir)?),
                (None, augment::PatchSourceKind::MixedGeneratedVoc) => {
                    return Err(Error::Validation(
                        "this strategy needs --generated-pool".into(),
                    ))
                }
                _ => None,
            };
            let pools = Pools {
                voc: voc_pool.as_ref(),
                generated: gen_pool.as_ref(),
            };
            let policy = PlacementPolicy { max_attempts };
            let manifest = augment::run_strategy(
                &annotations,
                &images_dir,
                &config,
                &pools,
                &policy,
                seed,
                &out,
            )?;
            eprintln!(
                "{} samples written, {} objects pasted, {} placements failed, {} images skipped",
                manifest.samples_written,
                manifest.total_pasted(),
                manifest.total_failed(),
                manifest.skipped.len()
            );
            Ok(())
        }
        Command::Eval {
            dataset,
            detections,
            size,
            iou,
            protocol,
            strict_cross_size,
            out,
            markdown,
        } => {
            let config = EvalConfig {
                iou_threshold: iou,
                ap_protocol: match protocol.as_str() {
                    "11point" => ApProtocol::ElevenPoint,
                    "allpoints" => ApProtocol::AllPoints,
                    other => {
                        return Err(Error::Validation(format!(
                            "unknown protocol `{other}`, expected 11point|allpoints"
                        )))
                    }
                },
                size_filter: size.as_deref().map(SizeClass::parse).transpose()?,
                cross_size_mode: if strict_cross_size {
                    CrossSizeMode::Strict
                } else {
                    CrossSizeMode::Ignore
                },
            };
            let ann_dir = dataset.annotations_dir()?;
            let ground_truth = voc::load_annotation_dir(&ann_dir)?;
            let dets = eval::load_detection_dir(&detections)?;
            let report = eval::evaluate(&dets, &ground_truth, &config)?;
            eprintln!("mAP: {:.2}%", report.map_percent);
            write_or_stdout(&out, &report.to_csv())?;
            if let Some(md) = markdown {
                std::fs::write(&md, report.to_markdown()).map_err(|e| Error::io(&md, e))?;
            }
            Ok(())
        }
        Command::GanDemo {
            dim,
            offset,
            sigma,
            samples,
            iterations,
            learning_rate,
            gen_learning_rate,
            momentum,
            seed,
            out,
        } => {
            let seed = effective_seed(seed);
            let mut data_rng = rng::derive_stream(seed, "gan-demo-data", 0);
            let large_mean = vec![0.0; dim];
            let small_mean = vec![-offset; dim];
            let large = gan::gaussian_cluster(&large_mean, sigma, samples, &mut data_rng);
            let small = gan::gaussian_cluster(&small_mean, sigma, samples, &mut data_rng);
            let config = TrainingConfig {
                iterations,
                learning_rate,
                generator_learning_rate: gen_learning_rate,
                momentum,
                ..TrainingConfig::default()
            };
            let mut train_rng = rng::derive_stream(seed, "gan-demo-init", 0);
            let run = gan::toy_residual_training(&large, &small, None, &config, &mut train_rng)?;

            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let mut history = String::from("iteration,discriminator_loss,generator_loss\n");
            for (i, (ld, lg)) in run.history.iter().enumerate() {
                history.push_str(&format!("{i},{ld:.9},{lg:.9}\n"));
            }
            let hist_path = out.join("loss_history.csv");
            std::fs::write(&hist_path, history).map_err(|e| Error::io(&hist_path, e))?;

            let p = &run.params;
            let mut dump = String::new();
            dump.push_str(&format!("dim: {dim}\nseed: {seed}\n"));
            dump.push_str(&format!("generator_matrix: {:?}\n", p.gen_matrix));
            dump.push_str(&format!("generator_bias: {:?}\n", p.gen_bias));
            dump.push_str(&format!("discriminator_weights: {:?}\n", p.disc_weights));
            dump.push_str(&format!("discriminator_bias: {:?}\n", p.disc_bias));
            let mean_residual = mean_residual_norm(p, &small);
            dump.push_str(&format!("mean_residual_norm: {mean_residual:.6}\n"));
            let params_path = out.join("final_params.txt");
            std::fs::write(&params_path, dump).map_err(|e| Error::io(&params_path, e))?;
            eprintln!("trained {iterations} iterations; mean residual norm {mean_residual:.4}");
            Ok(())
        }
    }
}

fn mean_residual_norm(params: &gan::ToyModelParams, inputs: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for x in inputs {
        let r = params.residual(x, None).expect("dims match");
        total += r.iter().map(|v| v * v).sum::<f64>().sqrt();
    }
    total / inputs.len() as f64
}
