use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mclnn::datasets::{
    clip_folds, cross_validate, featurize_manifest, load_feature_cache, parse_manifest, predict_clip, run_rotation,
};
use mclnn::features::{apply_standardizer, featurize_wav, FeatureClip, Standardizer};
use mclnn::maskgen::{build_mask, MaskSpec};
use mclnn::netcore::{load_model, save_model};
use mclnn::{load_config, Error, ModelConfig};

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  internal error
  2  invalid command line
  3  missing or unreadable file
  4  malformed input (wav, manifest, model, cache or standardizer file)
  5  invalid configuration or mask parameters
  6  invalid argument (fold out of range, unknown label, shape mismatch)
  7  training diverged";

/// Masked conditional neural networks for audio classification.
#[derive(Parser)]
#[command(name = "mclnn", version, after_help = EXIT_CODES)]
struct Cli {
    /// Seed for initialization, shuffling and dropout. Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for featurization and fold rotations [default: all cores].
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute log-mel + delta features for every manifest entry into a cache directory.
    Featurize {
        /// CSV with columns path,fold,label.
        #[arg(long)]
        manifest: PathBuf,
        /// Directory the manifest paths are relative to.
        #[arg(long)]
        audio_root: PathBuf,
        #[arg(long)]
        cache: PathBuf,
        /// Recompute clips that already have a cache file.
        #[arg(long)]
        force: bool,
    },
    /// Train one fold rotation from cached features and write the best model.
    Train {
        #[command(flatten)]
        common: ConfigAndCache,
        /// Fold held out for testing; the next fold is used for validation.
        #[arg(long)]
        test_fold: usize,
        /// Model file. The standardizer and epoch history are written beside it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validate over every fold rotation and write a JSON report.
    Evaluate {
        #[command(flatten)]
        common: ConfigAndCache,
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify one wav file with a trained model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        wav: PathBuf,
        /// Standardizer written by `train` [default: <model>.standardizer.json].
        #[arg(long)]
        standardizer: Option<PathBuf>,
        /// Frame hop between voting segments.
        #[arg(long, default_value_t = 1)]
        hop: usize,
    },
    /// Print a binary mask as rows of 0/1.
    DumpMask {
        /// Input feature length (mask rows).
        #[arg(long)]
        l: usize,
        /// Hidden width (mask columns).
        #[arg(long)]
        e: usize,
        #[arg(long)]
        bw: usize,
        #[arg(long, allow_hyphen_values = true)]
        ov: i64,
    },
}

#[derive(Args)]
struct ConfigAndCache {
    /// JSON model config; omitted keys take the shipped defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Feature cache written by `featurize`.
    #[arg(long)]
    cache: PathBuf,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io { .. } => 3,
        Error::MalformedWav(_)
        | Error::UnsupportedCodec(_)
        | Error::EmptyAudio
        | Error::Manifest(_)
        | Error::Format { .. } => 4,
        Error::Config(_) | Error::InvalidMask(_) => 5,
        Error::InvalidArgument(_) | Error::Shape(_) | Error::LabelOutOfRange { .. } => 6,
        Error::Diverged { .. } | Error::NonFiniteGradient { .. } => 7,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: cannot start {jobs} worker threads: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> mclnn::Result<()> {
    match cli.command {
        Command::Featurize {
            manifest,
            audio_root,
            cache,
            force,
        } => {
            let bytes = read(&manifest)?;
            let manifest = parse_manifest(&bytes)?;
            let summary = featurize_manifest(&manifest, &audio_root, &cache, force)?;
            eprintln!(
                "{} clips in {} folds: {} computed, {} already cached",
                manifest.entries.len(),
                manifest.num_folds,
                summary.written,
                summary.reused
            );
            Ok(())
        }
        Command::Train { common, test_fold, out } => {
            let config = config_for(&common, cli.seed)?;
            let clips = dataset(&common.cache, &config)?;
            let folds = clip_folds(&clips)?;
            let result = run_rotation(&config, &clips, folds, test_fold, |r| {
                eprintln!(
                    "epoch {:>3}  loss {:.5}  validation accuracy {:.4}",
                    r.epoch, r.train_loss, r.val_accuracy
                )
            })?;
            save_model(&result.run.best_params, &out)?;
            write(&sidecar(&out, "standardizer.json"), result.standardizer.to_json())?;
            write(&sidecar(&out, "history.csv"), result.run.history_csv())?;
            let correct = result.predictions.iter().filter(|(t, p)| t == p).count();
            eprintln!(
                "best epoch {}; test fold {} accuracy {:.4} ({correct}/{})",
                result.run.best_epoch,
                test_fold,
                correct as f64 / result.predictions.len() as f64,
                result.predictions.len()
            );
            Ok(())
        }
        Command::Evaluate { common, out } => {
            let config = config_for(&common, cli.seed)?;
            let clips = dataset(&common.cache, &config)?;
            let folds = clip_folds(&clips)?;
            let (report, _) = cross_validate(&config, &clips, folds, |fold, r| {
                eprintln!(
                    "fold {fold:>2}  epoch {:>3}  loss {:.5}  validation accuracy {:.4}",
                    r.epoch, r.train_loss, r.val_accuracy
                )
            })?;
            write(&out, report.to_json())?;
            for f in &report.folds {
                println!("fold {:>2}: {:.4} ({} clips)", f.fold, f.accuracy, f.clips);
            }
            println!("mean accuracy: {:.4}\n", report.mean_accuracy);
            print!("{}", report.confusion_table());
            Ok(())
        }
        Command::Predict {
            model,
            wav,
            standardizer,
            hop,
        } => {
            let params = load_model(&model)?;
            let std_path = standardizer.unwrap_or_else(|| sidecar(&model, "standardizer.json"));
            let text = String::from_utf8(read(&std_path)?).map_err(|_| Error::Format {
                kind: "standardizer",
                reason: "not UTF-8".into(),
            })?;
            let standardizer = Standardizer::from_json(&text)?;
            let clip = featurize_wav(&read(&wav)?, &wav.to_string_lossy(), "", 0)?;
            let clip = apply_standardizer(&clip, &standardizer)?;
            let (class, probs) = predict_clip(&params.predictor(), clip.frames.view(), hop)?;
            println!("{}", params.classes[class]);
            for (label, p) in params.classes.iter().zip(&probs) {
                println!("{label}\t{p}");
            }
            Ok(())
        }
        Command::DumpMask { l, e, bw, ov } => {
            let mask = build_mask(l, e, MaskSpec::new(bw, ov)?)?;
            print!("{}", mask.to_text());
            Ok(())
        }
    }
}

fn read(path: &Path) -> mclnn::Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, contents: String) -> mclnn::Result<()> {
    std::fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// `<path>.<suffix>`, e.g. `model.mclnn.history.csv`.
fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".");
    name.push(suffix);
    PathBuf::from(name)
}

fn config_for(args: &ConfigAndCache, seed: Option<u64>) -> mclnn::Result<ModelConfig> {
    let mut config = match &args.config {
        Some(path) => load_config(path)?,
        None => ModelConfig::default(),
    };
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

/// Cached clips, checked against the configured feature length and classes.
fn dataset(cache: &Path, config: &ModelConfig) -> mclnn::Result<Vec<FeatureClip>> {
    let clips = load_feature_cache(cache)?;
    if let Some(c) = clips.iter().find(|c| !config.classes.contains(&c.label)) {
        return Err(Error::InvalidArgument(format!(
            "cached clip {} has label {:?}, which is not among the configured classes {:?}",
            c.clip_id, c.label, config.classes
        )));
    }
    if let Some(c) = clips.iter().find(|c| c.frames.ncols() != config.feature_length) {
        return Err(Error::Shape(format!(
            "cached clip {} has {} features per frame, config expects {}",
            c.clip_id,
            c.frames.ncols(),
            config.feature_length
        )));
    }
    Ok(clips)
}
