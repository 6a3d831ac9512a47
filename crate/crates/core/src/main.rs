use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use swinsit::ceac::Denoiser;
use swinsit::checkpoint;
use swinsit::experiments::{self, DataSpec, DatasetKind, DATA_ENV};
use swinsit::training::{TrainConfig, TrainOptions, Variant};
use swinsit::Result;

#[derive(Parser)]
#[command(name = "swinsit", version, about = "SNR-aware semantic image transmission experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// CIFAR-10 binary directory or file, or a folder of PNG images.
    #[arg(long, env = DATA_ENV)]
    dataset: Option<PathBuf>,
    /// auto, cifar, folder or synthetic.
    #[arg(long, default_value = "auto")]
    dataset_kind: DatasetKind,
    #[arg(long, default_value_t = experiments::DESK_TRAIN_IMAGES)]
    train_images: usize,
    #[arg(long, default_value_t = experiments::DESK_TEST_IMAGES)]
    test_images: usize,
    /// Use every image instead of the desk-scale subsets.
    #[arg(long)]
    full_dataset: bool,
}

impl DataArgs {
    fn spec(&self, seed: u64) -> DataSpec {
        DataSpec {
            path: self.dataset.clone(),
            kind: self.dataset_kind,
            train_images: (!self.full_dataset).then_some(self.train_images),
            test_images: (!self.full_dataset).then_some(self.test_images),
            seed,
        }
    }
}

#[derive(Args, Clone)]
struct EvalArgs {
    /// Comma-separated SNRs in dB, `a:b:step` ranges, or `inf`.
    #[arg(long, default_value = "1:13:3")]
    snr_grid: String,
    /// Number of channel seeds per grid point.
    #[arg(long, default_value_t = 20)]
    seeds: u64,
}

impl EvalArgs {
    fn grid(&self) -> Result<Vec<f64>> {
        experiments::parse_snr_grid(&self.snr_grid)
    }

    fn seed_list(&self, base: u64) -> Vec<u64> {
        (0..self.seeds.max(1)).map(|i| base + i).collect()
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one variant into `<out>/<variant>`.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Run directory name; defaults to the variant name.
        #[arg(long)]
        name: Option<String>,
        /// Reuse a trained refiner instead of training one.
        #[arg(long)]
        dncnn: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Evaluate a trained run over an SNR grid.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        eval: EvalArgs,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Prune, quantize and fine-tune a trained run.
    Compress {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.6)]
        sparsity: f64,
        #[arg(long, default_value_t = 8)]
        bits: u32,
        #[arg(long, default_value_t = 8)]
        calib_batches: usize,
        /// Fine-tuning learning rate relative to the training rate.
        #[arg(long, default_value_t = 1.0)]
        lr_scale: f64,
        #[command(flatten)]
        data: DataArgs,
    },
    /// ML versus refined channel estimation MSE per pilot SNR.
    ChannelBench {
        /// Run directory or refiner checkpoint; a fresh refiner is trained otherwise.
        #[arg(long)]
        dncnn: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "1:13:2")]
        snr_grid: String,
        #[arg(long, default_value_t = 1000)]
        grids: usize,
    },
    /// Every figure analog from the runs under `--runs`.
    Sweep {
        #[arg(long, default_value = "runs")]
        runs: PathBuf,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        eval: EvalArgs,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Write procedural images as CIFAR-10 binary files.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = experiments::DESK_TRAIN_IMAGES)]
        train: usize,
        #[arg(long, default_value_t = experiments::DESK_TEST_IMAGES)]
        test: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => TrainConfig::load(p),
        None => Ok(TrainConfig::default()),
    }
}

fn load_denoiser(path: &Path) -> Result<Denoiser> {
    let file = if path.is_dir() {
        experiments::RunDir(path.to_path_buf()).denoiser()
    } else {
        path.to_path_buf()
    };
    checkpoint::load_denoiser(&file, candle_core::DType::F32)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            out,
            seed,
            variant,
            epochs,
            name,
            dncnn,
            data,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(v) = variant {
                cfg.variant = v;
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            cfg.validate()?;
            let ds = experiments::load_dataset(&data.spec(cfg.seed), cfg.model.image_height)?;
            let denoiser = dncnn.as_deref().map(load_denoiser).transpose()?;
            let dir = out.join(name.unwrap_or_else(|| cfg.variant.name().to_string()));
            let (_, report) = experiments::run_train(&cfg, &ds, denoiser.as_ref(), &dir, &TrainOptions::default())?;
            println!(
                "trained {} in {} steps; best validation MSE {:.5} at epoch {}; saved to {}",
                cfg.variant,
                report.steps,
                report.best_val_loss,
                report.best_epoch + 1,
                dir.display()
            );
        }
        Command::Eval {
            run,
            out,
            seed,
            eval,
            data,
        } => {
            let cfg = TrainConfig::load(&experiments::RunDir(run.clone()).config())?;
            let ds = experiments::load_dataset(&data.spec(seed), cfg.model.image_height)?;
            let rows = experiments::run_eval(&run, &ds.test, &eval.grid()?, &eval.seed_list(seed), &out)?;
            println!("wrote {} rows to {}", rows.len(), out.display());
        }
        Command::Compress {
            run,
            out,
            sparsity,
            bits,
            calib_batches,
            lr_scale,
            data,
        } => {
            let cfg = TrainConfig::load(&experiments::RunDir(run.clone()).config())?;
            let ds = experiments::load_dataset(&data.spec(cfg.seed), cfg.model.image_height)?;
            let mut opts = experiments::CompressOptions::for_run(&cfg, ds.train.len(), sparsity, bits);
            opts.compress.calib_batches = calib_batches;
            opts.lr_scale = lr_scale;
            let info = experiments::run_compress(&run, &ds, &opts, &out)?;
            let s = info.stats;
            println!(
                "pruned {} of {} parameters; {} bytes dense FP32, {} bytes packed ({:.1}x); saved to {}",
                s.pruned_params,
                s.total_params,
                s.dense_fp32_bytes,
                s.compressed_packed_bytes(),
                s.size_ratio(),
                out.display()
            );
        }
        Command::ChannelBench {
            dncnn,
            config,
            out,
            seed,
            snr_grid,
            grids,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            cfg.seed = seed;
            let d = match dncnn {
                Some(p) => load_denoiser(&p)?,
                None => experiments::train_denoiser(&cfg)?,
            };
            let grid = experiments::parse_snr_grid(&snr_grid)?;
            let rows = experiments::run_channel_bench(&d, &grid, grids, cfg.pilot_len, seed, &out)?;
            println!("snr_db,mse_ml,mse_dncnn");
            for r in rows {
                println!("{},{:.4e},{:.4e}", r.snr_db, r.mse_ml, r.mse_dncnn);
            }
        }
        Command::Sweep {
            runs,
            out,
            seed,
            config,
            eval,
            data,
        } => {
            let cfg = load_config(config.as_deref())?;
            let ds = experiments::load_dataset(&data.spec(seed), cfg.model.image_height)?;
            let files = experiments::run_sweep(&runs, &ds.test, &eval.grid()?, &eval.seed_list(seed), &out)?;
            for f in files {
                println!("{}", f.display());
            }
        }
        Command::SynthData { out, train, test, seed } => {
            for f in experiments::write_synthetic_cifar(&out, train, test, seed)? {
                println!("{}", f.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
