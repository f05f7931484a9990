//! Command-line front end for the covmotion pipeline.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use covmotion::classify::{reports_to_records, EvalReport};
use covmotion::config::{Method, PipelineConfig};
use covmotion::dataset::DatasetManifest;
use covmotion::features::FeatureSetMask;
use covmotion::{pipeline, pnm, store, synth};

#[derive(Parser, Debug)]
#[command(name = "covmotion", version, about = "Covariance descriptors for action and gesture recognition")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML configuration file; built-in defaults apply when omitted.
    #[arg(long, short = 'c', global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set tsc.delta=0.01`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Shorthand for `--set seed=N`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// More log output (repeatable).
    #[arg(long, short = 'v', action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Only log errors.
    #[arg(long, short = 'q', global = true)]
    quiet: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic motion dataset with its manifest.
    Synth {
        #[arg(long, short = 'o')]
        out: PathBuf,
    },
    /// Compute clip descriptors for every manifest video.
    Extract {
        #[arg(long, short = 'm')]
        manifest: PathBuf,
        /// Descriptor store directory (one file per video).
        #[arg(long, short = 's')]
        store: PathBuf,
        /// Also write every flow field as a pair of graymaps under this directory.
        #[arg(long)]
        dump_flow: Option<PathBuf>,
    },
    /// Build a dictionary from the training split.
    Train {
        #[arg(long, short = 'm')]
        manifest: PathBuf,
        #[arg(long, short = 's')]
        store: PathBuf,
        /// Dictionary output file.
        #[arg(long, short = 'o')]
        out: PathBuf,
    },
    /// Classify the test split and report accuracy.
    Eval {
        #[arg(long, short = 'm')]
        manifest: PathBuf,
        #[arg(long, short = 's')]
        store: PathBuf,
        #[arg(long, short = 'd')]
        dictionary: PathBuf,
        /// Comma-separated methods (omp, tsc, nn, all); defaults to `eval.methods`.
        #[arg(long)]
        methods: Option<String>,
        /// Write report records here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Write one confusion matrix per method as `<prefix>.<method>.csv`.
        #[arg(long, value_name = "PREFIX")]
        confusion: Option<PathBuf>,
        /// Write per-video predictions here.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Run every (feature set, method) pair on one split.
    Ablate {
        #[arg(long, short = 'm')]
        manifest: PathBuf,
        /// Comma-separated feature presets.
        #[arg(long, default_value = "AF,MF,AMF")]
        masks: String,
        /// Comma-separated methods; defaults to `eval.methods`.
        #[arg(long)]
        methods: Option<String>,
        /// Write report records here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    let mut overrides = common.overrides.clone();
    if let Some(seed) = common.seed {
        overrides.push(format!("seed={seed}"));
    }
    let config = match &common.config {
        Some(path) => PipelineConfig::load(path, &overrides)?,
        None => PipelineConfig::with_overrides(&overrides)?,
    };
    Ok(config)
}

fn methods(arg: Option<&str>, config: &PipelineConfig) -> Result<Vec<Method>> {
    Ok(match arg {
        Some(s) => Method::parse_list(s)?,
        None => config.eval.methods.clone(),
    })
}

fn masks(arg: &str) -> Result<Vec<(String, FeatureSetMask)>> {
    let mut out = Vec::new();
    for name in arg.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let Some(mask) = FeatureSetMask::preset(name) else {
            bail!("unknown feature preset `{name}`");
        };
        out.push((name.to_owned(), mask));
    }
    if out.is_empty() {
        bail!("no feature presets given");
    }
    Ok(out)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    pnm::write_bytes_atomic(path, text.as_bytes())?;
    Ok(())
}

fn print_reports(reports: &[EvalReport]) {
    for r in reports {
        println!("{}", r.to_table());
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(&cli.common)?;
    match cli.command {
        Command::Synth { out } => {
            let manifest = synth::write_dataset(&config.synth, config.seed, &out)?;
            println!(
                "wrote {} videos in {} groups to {}",
                manifest.videos.len(),
                manifest.groups().len(),
                out.join(synth::MANIFEST_FILE).display()
            );
        }
        Command::Extract {
            manifest,
            store,
            dump_flow,
        } => {
            let m = DatasetManifest::load(&manifest)?;
            let summary = pipeline::extract(&m, &config, &store, dump_flow.as_deref())?;
            println!("extracted {} clips from {} videos", summary.clips, summary.videos);
            if !summary.skipped.is_empty() {
                println!("skipped {}", summary.skipped.join(", "));
            }
        }
        Command::Train { manifest, store, out } => {
            let m = DatasetManifest::load(&manifest)?;
            let split = m.split(&config.split, config.seed)?;
            let dict = pipeline::train(&m, &split, &store)?;
            dict.save(&out)?;
            println!(
                "dictionary: {} atoms, d={}, features {}, train groups {}",
                dict.records.len(),
                dict.header.dim,
                dict.header.features,
                dict.train_groups.join(",")
            );
            for (label, n) in pipeline::label_histogram(&dict.records) {
                println!("  {label}\t{n}");
            }
        }
        Command::Eval {
            manifest,
            store,
            dictionary,
            methods: method_arg,
            report,
            confusion,
            predictions,
        } => {
            let m = DatasetManifest::load(&manifest)?;
            let split = m.split(&config.split, config.seed)?;
            let dict = store::DictionaryFile::load(&dictionary)?;
            let methods = methods(method_arg.as_deref(), &config)?;
            let out = pipeline::eval(&m, &split, &dict, &store, &methods, &config)?;
            print_reports(&out.reports);
            if let Some(path) = report {
                write_text(&path, &reports_to_records(&out.reports))?;
            }
            if let Some(prefix) = confusion {
                for r in &out.reports {
                    let mut name = prefix.as_os_str().to_owned();
                    name.push(format!(".{}.csv", r.method));
                    write_text(Path::new(&name), &r.confusion_dsv(','))?;
                }
            }
            if let Some(path) = predictions {
                write_text(&path, &pipeline::predictions_to_text(&out.predictions))?;
            }
        }
        Command::Ablate {
            manifest,
            masks: mask_arg,
            methods: method_arg,
            report,
        } => {
            let m = DatasetManifest::load(&manifest)?;
            let methods = methods(method_arg.as_deref(), &config)?;
            let masks = masks(&mask_arg)?;
            let reports = pipeline::run_ablation(&m, &config, &masks, &methods)?;
            println!("features\tmethod\taccuracy");
            for r in &reports {
                println!("{}\t{}\t{:.4}", r.feature_set, r.method, r.accuracy);
            }
            if let Some(path) = report {
                write_text(&path, &reports_to_records(&reports))?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.common.quiet {
        "error"
    } else {
        match cli.common.verbose {
            0 => "warn",
            1 => "info",
            _ => "debug",
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
