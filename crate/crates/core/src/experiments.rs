//! Dataset ingestion, run directories and the experiment commands behind the CLI.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use candle_core::DType;
use serde::{Deserialize, Serialize};

use crate::ceac::{channel_bench, train_dncnn, BenchRow, Denoiser};
use crate::checkpoint;
use crate::codec::SwinSitCodec;
use crate::compression::{prune_stage, quantize_stage, CompressConfig, CompressedModel, ModelStats};
use crate::data::{load_cifar_dir, load_cifar_file, load_image_folder, synthetic_images, write_cifar_file, ImageSet, Split};
use crate::error::{Error, Result};
use crate::manifest::Manifest;
use crate::nn::QuantRuntime;
use crate::report::{export_report, plot, rows_from_curve, write_csv, Axis, ResultRow};
use crate::training::{build_variant, evaluate, train, Link, TrainConfig, TrainOptions, TrainReport, Trainer, Variant};

/// Environment variable naming the dataset root when `--dataset` is absent.
pub const DATA_ENV: &str = "SWINSIT_DATA";

pub const DESK_TRAIN_IMAGES: usize = 2000;
pub const DESK_TEST_IMAGES: usize = 500;

/// SNR of the code-rate sweep.
pub const RATE_SWEEP_SNR_DB: f64 = 9.0;

/// Fraction of an image folder (or a lone CIFAR file) held out for testing.
const TEST_FRACTION: f64 = 0.2;

/// Default evaluation grid, 1 to 13 dB in steps of 3.
pub fn default_snr_grid() -> Vec<f64> {
    vec![1.0, 4.0, 7.0, 10.0, 13.0]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// CIFAR binary files if present, else an image folder.
    Auto,
    Cifar,
    Folder,
    /// Procedural images; needs no path.
    Synthetic,
}

impl std::str::FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Self::Auto),
            "cifar" | "cifar10" | "cifar10-binary" => Ok(Self::Cifar),
            "folder" | "image-folder" => Ok(Self::Folder),
            "synthetic" => Ok(Self::Synthetic),
            _ => Err(Error::arg(format!("unknown dataset kind '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSpec {
    pub path: Option<PathBuf>,
    pub kind: DatasetKind,
    /// `None` keeps every image.
    pub train_images: Option<usize>,
    pub test_images: Option<usize>,
    pub seed: u64,
}

impl DataSpec {
    /// Desk-scale subset sizes.
    pub fn desk(path: Option<PathBuf>, seed: u64) -> Self {
        Self {
            path,
            kind: DatasetKind::Auto,
            train_images: Some(DESK_TRAIN_IMAGES),
            test_images: Some(DESK_TEST_IMAGES),
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub kind: DatasetKind,
    pub train: ImageSet,
    pub test: ImageSet,
}

fn is_cifar_dir(dir: &Path) -> bool {
    std::fs::read_dir(dir).is_ok_and(|entries| {
        entries.filter_map(|e| e.ok()).any(|e| {
            let n = e.file_name();
            let n = n.to_string_lossy();
            n == "test_batch.bin" || (n.starts_with("data_batch_") && n.ends_with(".bin"))
        })
    })
}

/// Load train and test images. Image folders are cropped to `side` and
/// split; CIFAR directories use their own train/test files.
pub fn load_dataset(spec: &DataSpec, side: usize) -> Result<Dataset> {
    let kind = match (spec.kind, &spec.path) {
        (DatasetKind::Synthetic, _) => DatasetKind::Synthetic,
        (k, None) => {
            if k != DatasetKind::Auto {
                return Err(Error::arg(format!("dataset kind {k:?} needs a path (--dataset or {DATA_ENV})")));
            }
            log::warn!("no dataset given; using synthetic images");
            DatasetKind::Synthetic
        }
        (DatasetKind::Auto, Some(p)) => {
            if !p.exists() {
                return Err(Error::arg(format!("dataset path {} does not exist", p.display())));
            }
            if p.is_file() || is_cifar_dir(p) {
                DatasetKind::Cifar
            } else {
                DatasetKind::Folder
            }
        }
        (k, Some(_)) => k,
    };
    let (train, test) = match kind {
        DatasetKind::Synthetic => {
            let n_train = spec.train_images.unwrap_or(DESK_TRAIN_IMAGES);
            let n_test = spec.test_images.unwrap_or(DESK_TEST_IMAGES);
            (synthetic_images(n_train, spec.seed), synthetic_images(n_test, spec.seed ^ 0x7E57))
        }
        DatasetKind::Cifar => {
            let p = spec.path.as_deref().expect("checked above");
            if p.is_file() {
                load_cifar_file(p)?.split(TEST_FRACTION, spec.seed)
            } else {
                (load_cifar_dir(p, Split::Train)?, load_cifar_dir(p, Split::Test)?)
            }
        }
        DatasetKind::Folder => {
            let p = spec.path.as_deref().expect("checked above");
            load_image_folder(p, Some(side), spec.seed)?.split(TEST_FRACTION, spec.seed)
        }
        DatasetKind::Auto => unreachable!("resolved above"),
    };
    let cap = |set: ImageSet, n: Option<usize>| match n {
        Some(n) if n < set.len() => set.take(n),
        _ => set,
    };
    let ds = Dataset {
        kind,
        train: cap(train, spec.train_images),
        test: cap(test, spec.test_images),
    };
    log::info!("{:?} dataset: {} train / {} test images", kind, ds.train.len(), ds.test.len());
    Ok(ds)
}

/// Write `train` and `test` images as CIFAR-10 binary files in `dir`.
pub fn write_synthetic_cifar(dir: &Path, train: usize, test: usize, seed: u64) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let a = dir.join("data_batch_1.bin");
    let b = dir.join("test_batch.bin");
    write_cifar_file(&a, &synthetic_images(train, seed))?;
    write_cifar_file(&b, &synthetic_images(test, seed ^ 0x7E57))?;
    Ok(vec![a, b])
}

/// File layout of one trained variant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunDir(pub PathBuf);

impl RunDir {
    pub fn codec(&self) -> PathBuf {
        self.0.join("codec.safetensors")
    }
    pub fn denoiser(&self) -> PathBuf {
        self.0.join("dncnn.safetensors")
    }
    pub fn config(&self) -> PathBuf {
        self.0.join("train_config.toml")
    }
    pub fn report(&self) -> PathBuf {
        self.0.join("train_report.json")
    }
    pub fn pruned(&self) -> PathBuf {
        self.0.join("pruned.safetensors")
    }
    pub fn compressed(&self) -> PathBuf {
        self.0.join("compressed.safetensors")
    }
    pub fn compress_info(&self) -> PathBuf {
        self.0.join("compress.json")
    }
    pub fn is_trained(&self) -> bool {
        self.codec().is_file() && self.config().is_file()
    }
}

/// A trained variant loaded from disk.
pub struct Run {
    pub dir: RunDir,
    pub cfg: TrainConfig,
    pub codec: SwinSitCodec,
    pub denoiser: Option<Denoiser>,
}

impl Run {
    pub fn link(&self) -> Result<Link<'_>> {
        self.link_for(&self.codec)
    }

    /// Link around another codec of the same variant, e.g. a compressed copy.
    pub fn link_for<'a>(&'a self, codec: &'a SwinSitCodec) -> Result<Link<'a>> {
        Link::new(codec, self.cfg.variant, self.denoiser.as_ref(), self.cfg.pilot_len, self.cfg.fading_grid)
    }
}

pub fn load_run(dir: &Path) -> Result<Run> {
    let rd = RunDir(dir.to_path_buf());
    if !rd.is_trained() {
        return Err(Error::MissingCheckpoint(vec![dir.display().to_string()]));
    }
    let cfg = TrainConfig::load(&rd.config())?;
    let codec = checkpoint::load_codec(&rd.codec(), DType::F32)?;
    let denoiser = if rd.denoiser().is_file() {
        Some(checkpoint::load_denoiser(&rd.denoiser(), DType::F32)?)
    } else {
        None
    };
    if cfg.variant == Variant::Full && denoiser.is_none() {
        log::warn!("{}: full variant without a denoiser, using ML estimates", dir.display());
    }
    Ok(Run { dir: rd, cfg, codec, denoiser })
}

/// Train the refiner from `cfg.dncnn` and `cfg.dncnn_train`.
pub fn train_denoiser(cfg: &TrainConfig) -> Result<Denoiser> {
    let d = Denoiser::new(cfg.dncnn.clone(), DType::F32, cfg.seed)?;
    let mut tc = cfg.dncnn_train.clone();
    tc.pilot_len = cfg.pilot_len;
    let rep = train_dncnn(&d, &tc)?;
    log::info!(
        "dncnn: val mse {:.3e} vs ML {:.3e} (step {})",
        rep.best_val_mse,
        rep.ml_val_mse,
        rep.best_step
    );
    Ok(d)
}

/// Train one variant into `out`. The full variant uses `denoiser` when given
/// and trains its own otherwise.
pub fn run_train(
    cfg: &TrainConfig,
    data: &Dataset,
    denoiser: Option<&Denoiser>,
    out: &Path,
    opts: &TrainOptions,
) -> Result<(Run, TrainReport)> {
    cfg.validate()?;
    let rd = RunDir(out.to_path_buf());
    std::fs::create_dir_all(out)?;
    let denoiser = match (cfg.variant, denoiser) {
        (Variant::Full, Some(d)) => {
            let copy = Denoiser::new(d.config.clone(), DType::F32, cfg.seed)?;
            copy.store.copy_from(&d.store)?;
            Some(copy)
        }
        (Variant::Full, None) => Some(train_denoiser(cfg)?),
        _ => None,
    };
    if let Some(d) = &denoiser {
        checkpoint::save_denoiser(&rd.denoiser(), d)?;
    }
    let (train_set, val_set) = data.train.split(cfg.val_fraction, cfg.seed);
    let codec = build_variant(cfg)?;
    let link = Link::new(&codec, cfg.variant, denoiser.as_ref(), cfg.pilot_len, cfg.fading_grid)?;
    log::info!(
        "training {} ({} parameters, R = {:.4}) on {} images",
        cfg.variant,
        link.num_params(),
        codec.config.code_rate(),
        train_set.len()
    );
    let opts = TrainOptions {
        checkpoint: opts.checkpoint.clone().or_else(|| Some(rd.codec())),
        ..opts.clone()
    };
    let report = train(link, cfg, &train_set, &val_set, &opts)?;
    checkpoint::save_codec(&rd.codec(), &codec)?;
    let toml = cfg.to_toml_string()?;
    std::fs::write(rd.config(), &toml)?;
    std::fs::write(rd.report(), serde_json::to_string_pretty(&report)?)?;
    Manifest::new("train", &toml, vec![cfg.seed]).write(out)?;
    Ok((
        Run {
            dir: rd,
            cfg: cfg.clone(),
            codec,
            denoiser,
        },
        report,
    ))
}

/// Evaluate a run on `test` and tag the rows.
pub fn eval_rows(
    run: &Run,
    codec: &SwinSitCodec,
    quant: Option<&QuantRuntime>,
    test: &ImageSet,
    snr_grid: &[f64],
    seeds: &[u64],
    tag: (f64, u32),
) -> Result<Vec<ResultRow>> {
    let link = run.link_for(codec)?;
    let curve = evaluate(&link, test, snr_grid, seeds, run.cfg.batch_size, quant)?;
    Ok(rows_from_curve(&curve, run.cfg.variant.name(), tag.0, tag.1))
}

/// `eval`: SNR sweep of one run, exported as CSV and plots under `out`.
pub fn run_eval(run_dir: &Path, test: &ImageSet, snr_grid: &[f64], seeds: &[u64], out: &Path) -> Result<Vec<ResultRow>> {
    let run = load_run(run_dir)?;
    let rows = eval_rows(&run, &run.codec, None, test, snr_grid, seeds, (0.0, 32))?;
    export_report(out, &format!("eval_{}", run.cfg.variant.name()), &rows)?;
    write_eval_manifest("eval", &run, snr_grid, seeds, out)?;
    Ok(rows)
}

fn write_eval_manifest(command: &str, run: &Run, snr_grid: &[f64], seeds: &[u64], out: &Path) -> Result<()> {
    let text = format!(
        "run = {:?}\nsnr_grid = {:?}\n{}",
        run.dir.0.display().to_string(),
        snr_grid,
        run.cfg.to_toml_string()?
    );
    Manifest::new(command, &text, seeds.to_vec()).write(out)
}

/// Settings of the `compress` command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressOptions {
    pub compress: CompressConfig,
    /// Fine-tuning learning rate as a fraction of the training rate.
    pub lr_scale: f64,
}

impl CompressOptions {
    /// Fine-tuning budgets derived from the run's own training length.
    pub fn for_run(cfg: &TrainConfig, train_images: usize, sparsity: f64, bits: u32) -> Self {
        let n = ((train_images as f64) * (1.0 - cfg.val_fraction)).ceil() as usize;
        let steps = n.div_ceil(cfg.batch_size) * cfg.epochs;
        Self {
            compress: CompressConfig::with_budget(sparsity, bits, steps),
            lr_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressInfo {
    pub source: PathBuf,
    pub options: CompressOptions,
    pub stats: ModelStats,
}

/// `compress`: prune and fine-tune, then quantize and fine-tune a copy of
/// the run in `run_dir`. `out` becomes a run directory holding the pruned
/// codec, the packed model and the run's configuration.
pub fn run_compress(run_dir: &Path, data: &Dataset, opts: &CompressOptions, out: &Path) -> Result<CompressInfo> {
    let run = load_run(run_dir)?;
    std::fs::create_dir_all(out)?;
    let od = RunDir(out.to_path_buf());
    let mut cfg = run.cfg.clone();
    cfg.learning_rate *= opts.lr_scale;
    let (train_set, val_set) = data.train.split(cfg.val_fraction, cfg.seed);
    let link = run.link()?;
    let mut tuner = Trainer::new(cfg, link, &train_set, &val_set)?;
    let masks = prune_stage(&run.codec, &opts.compress, &mut tuner)?;
    checkpoint::save_codec(&od.pruned(), &run.codec)?;
    let model = quantize_stage(&run.codec, &masks, &opts.compress, &mut tuner)?;
    model.save(&od.compressed())?;
    // the original weights stay the run's reference point
    std::fs::copy(run.dir.codec(), od.codec())?;
    std::fs::copy(run.dir.config(), od.config())?;
    if run.dir.denoiser().is_file() {
        std::fs::copy(run.dir.denoiser(), od.denoiser())?;
    }
    let info = CompressInfo {
        source: run_dir.to_path_buf(),
        options: *opts,
        stats: model.stats(),
    };
    let json = serde_json::to_string_pretty(&info)?;
    std::fs::write(od.compress_info(), &json)?;
    Manifest::new("compress", &json, vec![run.cfg.seed]).write(out)?;
    Ok(info)
}

/// Original, pruned and pruned+quantized rows for a compressed run.
pub fn compression_rows(dir: &Path, test: &ImageSet, snr_grid: &[f64], seeds: &[u64]) -> Result<Vec<ResultRow>> {
    let run = load_run(dir)?;
    let rd = &run.dir;
    let info: CompressInfo = serde_json::from_str(&std::fs::read_to_string(rd.compress_info())?)?;
    let (s, bits) = (info.options.compress.sparsity, info.options.compress.bits);
    let mut rows = eval_rows(&run, &run.codec, None, test, snr_grid, seeds, (0.0, 32))?;
    let pruned = checkpoint::load_codec(&rd.pruned(), DType::F32)?;
    rows.extend(eval_rows(&run, &pruned, None, test, snr_grid, seeds, (s, 32))?);
    let (pq, quant) = CompressedModel::load(&rd.compressed())?.to_codec(DType::F32)?;
    rows.extend(eval_rows(&run, &pq, Some(&quant), test, snr_grid, seeds, (s, bits))?);
    Ok(rows)
}

/// `channel-bench`: ML versus refined estimation MSE per pilot SNR.
pub fn run_channel_bench(
    denoiser: &Denoiser,
    snr_grid: &[f64],
    grids: usize,
    pilot_len: usize,
    seed: u64,
    out: &Path,
) -> Result<Vec<BenchRow>> {
    let rows = channel_bench(denoiser, snr_grid, grids, pilot_len, seed)?;
    std::fs::create_dir_all(out)?;
    let mut w = csv::Writer::from_path(out.join("channel_bench.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    let text = format!(
        "snr_grid = {snr_grid:?}\ngrids = {grids}\npilot_len = {pilot_len}\ndncnn = {:?}\n",
        denoiser.config
    );
    Manifest::new("channel-bench", &text, vec![seed]).write(out)?;
    Ok(rows)
}

/// Trained run directories directly under `root`, keyed by directory name.
/// A missing `root` holds no runs.
pub fn discover_runs(root: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut runs = BTreeMap::new();
    if !root.is_dir() {
        return Ok(runs);
    }
    for e in std::fs::read_dir(root)? {
        let p = e?.path();
        if RunDir(p.clone()).is_trained() {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            runs.insert(name, p);
        }
    }
    Ok(runs)
}

/// `sweep`: the SNR sweep over the three variants (runs named after them
/// under `root`), the code-rate sweep at 9 dB over every full-variant run,
/// and the compression comparison over every compressed run.
pub fn run_sweep(root: &Path, test: &ImageSet, snr_grid: &[f64], seeds: &[u64], out: &Path) -> Result<Vec<PathBuf>> {
    let runs = discover_runs(root)?;
    let missing: Vec<String> = Variant::ALL
        .iter()
        .filter(|v| !runs.contains_key(v.name()))
        .map(|v| v.name().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingCheckpoint(missing));
    }
    std::fs::create_dir_all(out)?;
    let mut files = Vec::new();

    let mut snr_rows = Vec::new();
    for v in Variant::ALL {
        let run = load_run(&runs[v.name()])?;
        snr_rows.extend(eval_rows(&run, &run.codec, None, test, snr_grid, seeds, (0.0, 32))?);
    }
    files.extend(export_report(out, "snr_sweep", &snr_rows)?);

    let mut rate_rows = Vec::new();
    for dir in runs.values() {
        let rd = RunDir(dir.clone());
        if rd.compress_info().is_file() {
            continue;
        }
        let run = load_run(dir)?;
        if run.cfg.variant == Variant::Full {
            rate_rows.extend(eval_rows(&run, &run.codec, None, test, &[RATE_SWEEP_SNR_DB], seeds, (0.0, 32))?);
        }
    }
    let csv = out.join("rate_sweep.csv");
    write_csv(&csv, &rate_rows)?;
    let svg = out.join("rate_sweep_rate_vs_psnr.svg");
    plot(&svg, &format!("R sweep at {RATE_SWEEP_SNR_DB} dB"), &rate_rows, Axis::Rate, Axis::Psnr)?;
    files.extend([csv, svg]);

    let mut comp_rows = Vec::new();
    for dir in runs.values() {
        if RunDir(dir.clone()).compress_info().is_file() {
            comp_rows.extend(compression_rows(dir, test, snr_grid, seeds)?);
        }
    }
    if comp_rows.is_empty() {
        log::warn!("no compressed runs under {}; skipping the compression comparison", root.display());
    } else {
        files.extend(export_report(out, "compression", &comp_rows)?);
    }

    let text = format!("root = {:?}\nsnr_grid = {:?}\nruns = {:?}\n", root.display().to_string(), snr_grid, runs.keys().collect::<Vec<_>>());
    Manifest::new("sweep", &text, seeds.to_vec()).write(out)?;
    Ok(files)
}

/// Parse a comma-separated SNR list; `inf` selects the noiseless channel.
/// `a:b:step` ranges are accepted too.
pub fn parse_snr_grid(s: &str) -> Result<Vec<f64>> {
    let bad = |p: &str| Error::arg(format!("bad SNR grid entry '{p}'"));
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let nums: Vec<&str> = part.split(':').collect();
        match nums.as_slice() {
            [v] => out.push(v.parse::<f64>().map_err(|_| bad(part))?),
            [a, b, step] => {
                let (a, b, step): (f64, f64, f64) = (
                    a.parse().map_err(|_| bad(part))?,
                    b.parse().map_err(|_| bad(part))?,
                    step.parse().map_err(|_| bad(part))?,
                );
                if !(step > 0.0) || !a.is_finite() || !b.is_finite() {
                    return Err(bad(part));
                }
                let n = ((b - a) / step + 1e-9).floor() as i64;
                out.extend((0..=n.max(-1)).map(|i| a + i as f64 * step));
            }
            _ => return Err(bad(part)),
        }
    }
    if out.is_empty() || out.iter().any(|v| v.is_nan()) {
        return Err(Error::arg(format!("empty or invalid SNR grid '{s}'")));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snr_grid_forms() {
        assert_eq!(parse_snr_grid("1:13:3").unwrap(), default_snr_grid());
        assert_eq!(parse_snr_grid("1, 7,inf").unwrap(), vec![1.0, 7.0, f64::INFINITY]);
        assert!(parse_snr_grid("").is_err());
        assert!(parse_snr_grid("1:x:2").is_err());
        assert!(parse_snr_grid("nan").is_err());
    }

    #[test]
    fn dataset_kind_names() {
        assert_eq!("cifar10-binary".parse::<DatasetKind>().unwrap(), DatasetKind::Cifar);
        assert_eq!("image-folder".parse::<DatasetKind>().unwrap(), DatasetKind::Folder);
        assert!("tiff".parse::<DatasetKind>().is_err());
    }

    #[test]
    fn auto_detects_cifar_and_caps_counts() {
        let dir = tempfile::tempdir().unwrap();
        write_synthetic_cifar(dir.path(), 30, 12, 4).unwrap();
        let mut spec = DataSpec::desk(Some(dir.path().to_path_buf()), 0);
        spec.train_images = Some(20);
        let ds = load_dataset(&spec, 32).unwrap();
        assert_eq!(ds.kind, DatasetKind::Cifar);
        assert_eq!((ds.train.len(), ds.test.len()), (20, 12));
    }

    #[test]
    fn synthetic_without_path() {
        let mut spec = DataSpec::desk(None, 1);
        spec.train_images = Some(5);
        spec.test_images = Some(3);
        let ds = load_dataset(&spec, 32).unwrap();
        assert_eq!(ds.kind, DatasetKind::Synthetic);
        assert_eq!((ds.train.len(), ds.test.len()), (5, 3));
        spec.kind = DatasetKind::Cifar;
        assert!(load_dataset(&spec, 32).is_err());
    }

    #[test]
    fn sweep_lists_missing_variants() {
        let dir = tempfile::tempdir().unwrap();
        let test = synthetic_images(2, 0);
        let e = run_sweep(dir.path(), &test, &[1.0], &[0], &dir.path().join("out")).unwrap_err();
        match e {
            Error::MissingCheckpoint(v) => assert_eq!(v, vec!["full", "no_ceac", "snr_unaware"]),
            other => panic!("unexpected {other}"),
        }
    }
}
