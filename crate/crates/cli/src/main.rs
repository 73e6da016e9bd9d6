use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use busseg::metrics::{aggregate_macro, aggregate_micro};
use busseg::train::{self, Checkpoint, RunConfig, DATA_ROOT_ENV};
use busseg::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "busseg", version, about = "Breast ultrasound lesion segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write checkpoints and curves.csv.
    Train {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Score a checkpoint on a dataset split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Which samples to score.
        #[arg(long, default_value = "test", value_parser = ["train", "test", "all"])]
        split: String,
        /// Also write the report to this file.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Load even if the checkpoint was written for another model config.
        #[arg(long)]
        force: bool,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Segment one image.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Output mask (8-bit, 0/255).
        #[arg(long)]
        out: PathBuf,
        /// Optional 8-bit probability map.
        #[arg(long)]
        prob: Option<PathBuf>,
        #[arg(long)]
        force: bool,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Export 16-bit signed distance-class maps for every mask.
    MakeDistanceMaps {
        #[arg(long, env = DATA_ROOT_ENV)]
        data_root: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Distance clamp.
        #[arg(short = 'd', long = "distance-threshold", default_value_t = 5)]
        distance_threshold: usize,
        /// Resample masks to this square extent first.
        #[arg(long)]
        image_size: Option<usize>,
    },
    /// Score externally produced masks against ground truth.
    Metrics {
        /// Predicted mask file, or a directory of `<stem>.png` files.
        #[arg(long)]
        pred: PathBuf,
        /// Ground-truth mask file, or a dataset root.
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

/// Run settings: config file, then `--set`, then the explicit flags.
#[derive(Args, Debug, Default)]
struct RunArgs {
    /// key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra key=value overrides, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, env = DATA_ROOT_ENV)]
    data_root: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    image_size: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    base_channels: Option<usize>,
    #[arg(long)]
    lstm_hidden: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(short = 'd', long)]
    distance_threshold: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    subset: Option<usize>,
    #[arg(long)]
    no_augment: bool,
    #[arg(long)]
    no_stratify: bool,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

impl RunArgs {
    /// `fallback` is consulted when no `--config` is given.
    fn resolve(&self, fallback: Option<&Path>) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        match (&self.config, fallback) {
            (Some(p), _) => cfg.apply_text(&read_text(p)?)?,
            (None, Some(p)) if p.is_file() => cfg.apply_text(&read_text(p)?)?,
            _ => {}
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.set(k, v)?;
        }
        let m = &mut cfg.model;
        macro_rules! take {
            ($field:ident => $target:expr) => {
                if let Some(v) = self.$field.clone() {
                    $target = v;
                }
            };
        }
        take!(image_size => m.image_size);
        take!(depth => m.depth);
        take!(base_channels => m.base_channels);
        take!(lstm_hidden => m.lstm_hidden);
        take!(dropout => m.dropout);
        take!(distance_threshold => m.distance_threshold);
        take!(epochs => cfg.epochs);
        take!(batch_size => cfg.batch_size);
        take!(seed => cfg.seed);
        take!(lr => cfg.lr);
        take!(threshold => cfg.threshold);
        take!(out_dir => cfg.out_dir);
        if let Some(v) = self.max_steps {
            cfg.max_steps = Some(v);
        }
        if let Some(v) = self.subset {
            cfg.subset = Some(v);
        }
        if let Some(v) = &self.data_root {
            cfg.data_root = Some(v.clone());
        }
        if self.no_augment {
            cfg.augment = false;
        }
        if self.no_stratify {
            cfg.stratify = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write_out(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn beside(checkpoint: &Path) -> PathBuf {
    checkpoint.with_file_name("run.cfg")
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { run } => {
            let cfg = run.resolve(None)?;
            let (samples, found) = train::load_dataset(&cfg)?;
            if !found.rejects.is_empty() {
                eprintln!("{} rejected files:\n{}", found.rejects.len(), found.rejects_report());
            }
            let (train_set, test_set) = train::split_samples(&samples, &cfg);
            eprintln!(
                "{} samples: {} train, {} test",
                samples.len(),
                train_set.len(),
                test_set.len()
            );
            fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
            if !found.rejects.is_empty() {
                write_out(&cfg.out_dir.join("rejects.txt"), &found.rejects_report())?;
            }
            let summary = train::train(&cfg, &train_set, &test_set, Some(&cfg.out_dir), |m| eprintln!("{m}"))?;
            println!(
                "trained {} steps, checkpoint {}",
                summary.steps,
                cfg.out_dir.join("final.bin").display()
            );
        }
        Command::Evaluate {
            checkpoint,
            split,
            report,
            force,
            run,
        } => {
            let cfg = run.resolve(Some(&beside(&checkpoint)))?;
            let ck = Checkpoint::load(&checkpoint)?;
            let (network, store) = train::restore_network(&cfg, &ck, force)?;
            let (samples, _) = train::load_dataset(&cfg)?;
            let (train_set, test_set) = train::split_samples(&samples, &cfg);
            let chosen = match split.as_str() {
                "train" => train_set,
                "test" => test_set,
                _ => samples,
            };
            let r = train::evaluate(&network, &store, &chosen, cfg.batch_size, cfg.threshold)?;
            let text = format!("split={split}\n{}", r.render());
            print!("{text}");
            if let Some(p) = report {
                write_out(&p, &text)?;
            }
        }
        Command::Predict {
            checkpoint,
            image,
            out,
            prob,
            force,
            run,
        } => {
            let cfg = run.resolve(Some(&beside(&checkpoint)))?;
            let ck = Checkpoint::load(&checkpoint)?;
            let (network, store) = train::restore_network(&cfg, &ck, force)?;
            let p = train::predict(&network, &store, &image, cfg.threshold)?;
            p.mask.save(&out).map_err(|e| Error::data_file(&out, e))?;
            if let Some(path) = prob {
                p.probability.save(&path).map_err(|e| Error::data_file(&path, e))?;
            }
            println!("{}", out.display());
        }
        Command::MakeDistanceMaps {
            data_root,
            out,
            distance_threshold,
            image_size,
        } => {
            let (n, found) = train::make_distance_maps(&data_root, &out, distance_threshold, image_size)?;
            if !found.rejects.is_empty() {
                eprintln!("{} rejected files:\n{}", found.rejects.len(), found.rejects_report());
            }
            println!("{n} distance maps written to {}", out.display());
        }
        Command::Metrics { pred, gt, report: out } => {
            let (scored, missing) = train::score_masks(&pred, &gt)?;
            for m in &missing {
                eprintln!("no prediction for {m}");
            }
            let counts: Vec<_> = scored.iter().map(|(_, c)| *c).collect();
            let micro = aggregate_micro(&counts)?;
            let macro_ = aggregate_macro(&counts)?;
            let mut text = format!("samples={}\n", counts.len());
            text.push_str(&micro.records("micro."));
            text.push_str(&macro_.records("macro."));
            text.push('\n');
            text.push_str(&micro.table("micro"));
            text.push_str(&format!("{:<12}{}\n", "macro", macro_.table_row()));
            print!("{text}");
            if let Some(p) = out {
                write_out(&p, &text)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
