//! The four driver verbs and the in-process experiment pipeline they share.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use pstn_core::data::{
    format_ucr, load_mnist, normalize, parse_ucr, read_idx, read_ucr_pair, split, subsample, synth_dataset, DaSpec, Dataset, IdxFile,
    NormStats, SubsetSpec, SynthKind, SynthSpec,
};
use pstn_core::eval::{records_from, summarize, Metrics, PredictionRecord, ReliabilityBins};
use pstn_core::model::{sample_theta, Variant};
use pstn_core::train::{fit, predict_dataset_scaled, EpochLog, TrainConfig};
use pstn_core::transform::{Family, Warper};
use pstn_core::{rng_from_seed, Model32, Rng, Tensor32};

use crate::checkpoint::Checkpoint;
use crate::config::{DatasetKind, ExperimentConfig};
use crate::error::CliError;

pub type Dataset32 = Dataset<f32>;

pub const CHECKPOINT_FILE: &str = "checkpoint.pstn";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const THETA_FILE: &str = "theta.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const SWEEP_CURVES_FILE: &str = "sweep_reliability.csv";

const EVAL_CHUNK: usize = 200;

/// Seed offsets keeping generated train and test sets disjoint.
const SYNTH_TRAIN_SEED: u64 = 1000;
const SYNTH_TEST_SEED: u64 = 5000;

/// Un-normalized training, validation and test data for a config.
#[derive(Clone, Debug)]
pub struct RawSplits {
    pub train: Dataset32,
    pub val: Option<Dataset32>,
    pub test: Dataset32,
}

/// Normalized splits plus the statistics fitted on the training part.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset32,
    pub val: Option<Dataset32>,
    pub test: Dataset32,
    pub norm: Option<NormStats>,
}

fn synth_kind(kind: DatasetKind) -> Option<SynthKind> {
    match kind {
        DatasetKind::Synth2d => Some(SynthKind::WarpedShapes2d),
        DatasetKind::Synth1d => Some(SynthKind::WarpedSeries1d),
        _ => None,
    }
}

pub fn load_raw(cfg: &ExperimentConfig) -> Result<RawSplits> {
    let (train, test) = match cfg.dataset {
        DatasetKind::Mnist => {
            let dir = &cfg.data_dir;
            let train = load_mnist(dir, true).with_context(|| format!("loading MNIST training files from {}", dir.display()))?;
            let test = load_mnist(dir, false).with_context(|| format!("loading MNIST test files from {}", dir.display()))?;
            (train, test)
        }
        DatasetKind::Ucr => {
            let (a, b) = (cfg.train_file.as_ref(), cfg.test_file.as_ref());
            let (Some(a), Some(b)) = (a, b) else {
                return Err(CliError::Usage("ucr datasets need `train_file` and `test_file`".into()).into());
            };
            read_ucr_pair(a, b).with_context(|| format!("loading {} / {}", a.display(), b.display()))?
        }
        DatasetKind::Synth2d | DatasetKind::Synth1d => {
            let kind = synth_kind(cfg.dataset).expect("synthetic kind");
            let scale = cfg.synth_warp_scale.unwrap_or(kind.default_warp_scale());
            let spec = |n, seed| SynthSpec {
                warp_scale: scale,
                ..SynthSpec::new(kind, n, seed)
            };
            (
                synth_dataset(spec(cfg.synth_train, SYNTH_TRAIN_SEED + cfg.seed))?,
                synth_dataset(spec(cfg.synth_test, SYNTH_TEST_SEED + cfg.seed))?,
            )
        }
    };
    let train = match cfg.subset {
        Some(size) => subsample(
            &train,
            SubsetSpec {
                size,
                seed: cfg.seed,
                balanced: cfg.balanced,
            },
        )?,
        None => train,
    };
    let (train, val) = if cfg.val_fraction > 0.0 {
        let (a, b) = split(&train, cfg.val_fraction, cfg.seed)?;
        (a, Some(b))
    } else {
        (train, None)
    };
    Ok(RawSplits { train, val, test })
}

fn apply_norm(data: Dataset32, stats: Option<&NormStats>) -> Result<Dataset32> {
    Ok(match stats {
        Some(s) => normalize(&data, Some(s))?,
        None => data,
    })
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Splits> {
    let raw = load_raw(cfg)?;
    let norm = cfg.normalize.then(|| NormStats::fit(&raw.train));
    Ok(Splits {
        train: apply_norm(raw.train, norm.as_ref())?,
        val: raw.val.map(|v| apply_norm(v, norm.as_ref())).transpose()?,
        test: apply_norm(raw.test, norm.as_ref())?,
        norm,
    })
}

fn train_config(cfg: &ExperimentConfig) -> TrainConfig {
    TrainConfig {
        epochs: cfg.effective_epochs(),
        batch_size: cfg.batch_size,
        lr_classifier: cfg.lr_classifier,
        lr_localizer: cfg.lr_localizer,
        weight_decay: cfg.weight_decay,
        da: DaSpec {
            sigma_da: cfg.sigma_da,
            samples: 1,
        },
        seed: cfg.seed,
        eval_batch: EVAL_CHUNK,
    }
}

/// Warper used for traditional augmentation: the configured family, also for cnn.
fn da_warper(cfg: &ExperimentConfig, input_shape: &[usize]) -> Result<Option<Warper<f32>>> {
    if cfg.sigma_da <= 0.0 {
        return Ok(None);
    }
    if cfg.family == Family::None {
        return Err(CliError::Usage("invalid `family`: sigma_da > 0 needs `affine` or `diffeo`".into()).into());
    }
    Ok(Some(Warper::build(cfg.family, &input_shape[1..], cfg.tessellation(input_shape), cfg.n_steps)?))
}

/// Builds and trains a model on prepared splits.
pub fn train_model(cfg: &ExperimentConfig, splits: &Splits, on_epoch: impl FnMut(&EpochLog)) -> Result<(Model32, Vec<EpochLog>)> {
    cfg.validate()?;
    let shape = splits.train.item_shape().to_vec();
    let spec = cfg.model_spec(&shape, splits.train.classes);
    let mut model = Model32::new(spec, &mut rng_from_seed(cfg.seed))?;
    let warper = da_warper(cfg, &shape)?;
    let logs = fit(&mut model, &splits.train, splits.val.as_ref(), &train_config(cfg), warper.as_ref(), on_epoch)?;
    Ok((model, logs))
}

/// Test-time sample count actually used for a model: 1 unless it is a pstn.
pub fn eval_samples(model: &Model32, requested: Option<usize>) -> usize {
    match model.spec().variant {
        Variant::Pstn => requested.unwrap_or(model.spec().s_test),
        _ => 1,
    }
}

pub fn predict_records_with(model: &Model32, data: &Dataset32, samples: usize, sigma_scale: f32, rng: &mut Rng) -> Result<Vec<PredictionRecord>> {
    let probs = predict_dataset_scaled(model, data, samples, sigma_scale, EVAL_CHUNK, rng)?;
    Ok(records_from(&probs, &data.labels)?)
}

/// Everything produced by one in-process train + test run.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub model: Model32,
    pub logs: Vec<EpochLog>,
    pub records: Vec<PredictionRecord>,
    pub metrics: Metrics,
    pub reliability: ReliabilityBins,
    pub splits: Splits,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunResult> {
    cfg.validate()?;
    let splits = prepare(cfg)?;
    let (model, logs) = train_model(cfg, &splits, |_| {})?;
    let samples = eval_samples(&model, cfg.s_test);
    let records = predict_records_with(&model, &splits.test, samples, 1.0, &mut rng_from_seed(cfg.seed))?;
    let (metrics, reliability) = summarize(&records, cfg.bins)?;
    Ok(RunResult {
        model,
        logs,
        records,
        metrics,
        reliability,
        splits,
    })
}

fn csv_writer(path: &Path, config_hash: &str, header: &str) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "# config_hash={config_hash}")?;
    writeln!(w, "{header}")?;
    Ok(w)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn log_row(l: &EpochLog) -> String {
    format!("{},{},{},{},{}", l.epoch, l.class_loss, l.kl, opt(l.val_acc), opt(l.val_nll))
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub logs: Vec<EpochLog>,
    pub model: Model32,
}

/// Trains from a config, writing `config.json`, the training log and the checkpoint
/// into `output_dir`.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(dir.join("config.json"), cfg.to_json())?;
    let splits = prepare(cfg)?;
    let log_path = dir.join(TRAIN_LOG_FILE);
    let mut w = csv_writer(&log_path, &cfg.hash(), "epoch,class_loss,kl,val_acc,val_nll")?;
    let mut write_err = None;
    let (model, logs) = train_model(cfg, &splits, |l| {
        if write_err.is_none() {
            write_err = writeln!(w, "{}", log_row(l)).and_then(|_| w.flush()).err();
        }
    })?;
    if let Some(e) = write_err {
        return Err(e).context("writing the training log");
    }
    let checkpoint = dir.join(CHECKPOINT_FILE);
    Checkpoint::new(cfg.clone(), model.clone(), splits.norm.clone()).save(&checkpoint)?;
    Ok(TrainOutput {
        checkpoint,
        log: log_path,
        logs,
        model,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SplitName {
    Train,
    Val,
    #[default]
    Test,
}

#[derive(Clone, Debug, Default)]
pub struct EvalOptions {
    pub split: SplitName,
    /// Test-time samples; ignored (1) for cnn and stn.
    pub samples: Option<usize>,
    /// Multiplier on the posterior σ; `None` means 1.
    pub sigma_scale: Option<f64>,
    /// Metrics CSV path; defaults to `metrics.csv` next to the checkpoint.
    pub out: Option<PathBuf>,
    /// Config overrides, e.g. pointing at another copy of the data.
    pub overrides: Vec<(String, String)>,
}

#[derive(Clone, Debug)]
pub struct EvalOutput {
    pub metrics: Metrics,
    pub reliability: ReliabilityBins,
    pub samples: usize,
    pub path: PathBuf,
}

pub fn cmd_eval(checkpoint: &Path, opts: &EvalOptions) -> Result<EvalOutput> {
    let ck = Checkpoint::load(checkpoint)?;
    let mut cfg = ck.manifest.config.clone();
    for (k, v) in &opts.overrides {
        cfg.set(k, v)?;
    }
    let raw = load_raw(&cfg)?;
    let data = match opts.split {
        SplitName::Train => raw.train,
        SplitName::Test => raw.test,
        SplitName::Val => raw.val.ok_or_else(|| CliError::Usage("the checkpoint config has no validation split".into()))?,
    };
    let spec = ck.model.spec();
    if data.item_shape() != spec.input_shape.as_slice() || data.classes > spec.classes {
        return Err(CliError::Data(format!(
            "dataset items {:?} with {} classes do not fit a model for {:?} with {} classes",
            data.item_shape(),
            data.classes,
            spec.input_shape,
            spec.classes
        ))
        .into());
    }
    let data = apply_norm(data, ck.manifest.norm.as_ref())?;
    if opts.samples == Some(0) {
        return Err(CliError::Usage("invalid `samples`: must be at least 1".into()).into());
    }
    let samples = eval_samples(&ck.model, opts.samples);
    let scale = opts.sigma_scale.unwrap_or(1.0) as f32;
    let records = predict_records_with(&ck.model, &data, samples, scale, &mut rng_from_seed(cfg.seed))?;
    let (metrics, reliability) = summarize(&records, cfg.bins)?;

    let path = opts
        .out
        .clone()
        .unwrap_or_else(|| checkpoint.parent().unwrap_or(Path::new(".")).join(METRICS_FILE));
    let mut w = csv_writer(&path, &cfg.hash(), "row,lower,upper,count,mean_confidence,accuracy,nll,ece,mean_entropy")?;
    for b in &reliability.bins {
        writeln!(w, "bin,{},{},{},{},{},,,", b.lower, b.upper, b.count, b.mean_confidence, b.accuracy)?;
    }
    let m = &metrics;
    let conf = records.iter().map(|r| r.confidence).sum::<f64>() / records.len() as f64;
    writeln!(w, "summary,0,1,{},{},{},{},{},{}", m.n, conf, m.accuracy, m.nll, m.ece, m.mean_entropy)?;
    w.flush()?;
    Ok(EvalOutput {
        metrics,
        reliability,
        samples,
        path,
    })
}

/// Normalizes a single `[C, ...]` item with per-channel statistics.
fn normalize_item(item: &Tensor32, norm: Option<&NormStats>) -> Tensor32 {
    let Some(s) = norm else {
        return item.clone();
    };
    let mut out = item.clone();
    let per = item.len() / item.shape()[0];
    for (c, chunk) in out.data_mut().chunks_mut(per).enumerate() {
        for v in chunk {
            *v = ((*v as f64 - s.mean[c]) / s.std[c]) as f32;
        }
    }
    out
}

/// Draws `n` transformations from the model's posterior for one normalized item
/// `[C, ...]`, with σ multiplied by `sigma_scale`.
pub fn posterior_thetas(model: &Model32, item: &Tensor32, n: usize, sigma_scale: f32, rng: &mut Rng) -> Result<Vec<Vec<f32>>> {
    if model.localizer().is_none() {
        return Err(CliError::Usage("a cnn checkpoint has no transformation to sample".into()).into());
    }
    let mut shape = vec![1];
    shape.extend_from_slice(item.shape());
    let post = model.localize(&item.clone().reshape(&shape)?)?;
    let sigma: Vec<f32> = post.sigma.data().iter().map(|s| s * sigma_scale).collect();
    Ok((0..n).map(|_| sample_theta(post.mu.data(), &sigma, rng).0).collect())
}

/// Reads one input sample: an IDX image (`[H, W]` or `[C, H, W]`) or a single
/// UCR line. Returns the `[C, ...]` tensor and its label (0 for images).
fn read_single(path: &Path, input_shape: &[usize]) -> Result<(Tensor32, usize)> {
    if input_shape.len() == 3 {
        let file = read_idx(path).with_context(|| format!("reading {}", path.display()))?;
        let t = file.to_tensor::<f32>();
        let t = if t.shape().len() == 2 {
            let s = t.shape().to_vec();
            t.reshape(&[1, s[0], s[1]])?
        } else {
            t
        };
        if t.shape() != input_shape {
            return Err(CliError::Data(format!("input image {:?} does not match model input {:?}", t.shape(), input_shape)).into());
        }
        Ok((t, 0))
    } else {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let d = parse_ucr::<f32>(&text).with_context(|| format!("parsing {}", path.display()))?;
        if d.len() != 1 || d.item_shape() != input_shape {
            return Err(CliError::Data(format!(
                "expected one series of shape {:?}, got {} of shape {:?}",
                input_shape,
                d.len(),
                d.item_shape()
            ))
            .into());
        }
        let label = text.split([',', '\t', ' ']).next().and_then(|l| l.trim().parse::<f64>().ok()).unwrap_or(0.0);
        Ok((d.inputs.reshape(input_shape)?, label.max(0.0) as usize))
    }
}

#[derive(Clone, Debug)]
pub struct AugmentOutput {
    pub files: Vec<PathBuf>,
    pub thetas: Vec<Vec<f32>>,
    pub theta_csv: PathBuf,
}

/// Writes `n` posterior-sampled warps of one input plus the sampled θ.
/// Images are written as IDX, series as one-line delimited text.
pub fn cmd_augment(checkpoint: &Path, input: &Path, n: usize, out_dir: &Path, sigma_scale: f64, seed: u64) -> Result<AugmentOutput> {
    if n == 0 {
        return Err(CliError::Usage("invalid `n`: must be at least 1".into()).into());
    }
    let ck = Checkpoint::load(checkpoint)?;
    let model = &ck.model;
    let shape = model.spec().input_shape.clone();
    let (item, label) = read_single(input, &shape)?;
    let normalized = normalize_item(&item, ck.manifest.norm.as_ref());
    let mut rng = rng_from_seed(seed);
    let thetas = posterior_thetas(model, &normalized, n, sigma_scale as f32, &mut rng)?;

    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut files = Vec::with_capacity(n);
    for (i, theta) in thetas.iter().enumerate() {
        let warped = model.warper().warp(&item, theta)?;
        let path = if shape.len() == 3 {
            let t = if shape[0] == 1 { warped.reshape(&shape[1..])? } else { warped };
            let p = out_dir.join(format!("augmented_{i:03}.idx"));
            std::fs::write(&p, IdxFile::from_tensor(&t)?.to_bytes())?;
            p
        } else {
            let p = out_dir.join(format!("augmented_{i:03}.txt"));
            let mut batch = vec![1];
            batch.extend_from_slice(&shape);
            std::fs::write(&p, format_ucr(&warped.reshape(&batch)?, &[label]))?;
            p
        };
        files.push(path);
    }

    let theta_csv = out_dir.join(THETA_FILE);
    let d = thetas.first().map_or(0, Vec::len);
    let header: Vec<String> = std::iter::once("sample".to_string()).chain((0..d).map(|j| format!("theta_{j}"))).collect();
    let mut w = csv_writer(&theta_csv, &ck.manifest.config.hash(), &header.join(","))?;
    for (i, t) in thetas.iter().enumerate() {
        let row: Vec<String> = t.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{i},{}", row.join(","))?;
    }
    w.flush()?;
    Ok(AugmentOutput { files, thetas, theta_csv })
}

/// Mean and sample (n − 1) standard deviation; the latter is `None` for one value.
pub fn mean_std(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = (xs.len() > 1).then(|| (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (mean, std)
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub value: String,
    pub runs: Vec<Metrics>,
    pub accuracy: (f64, Option<f64>),
    pub nll: (f64, Option<f64>),
    pub ece: (f64, Option<f64>),
    /// Reliability curve over the pooled test records of all repetitions.
    pub curve: ReliabilityBins,
}

/// Runs `repeats` seeded repetitions (seeds `seed, seed + 1, …`) for each
/// value of one config field and aggregates test metrics.
pub fn cmd_sweep(template: &ExperimentConfig, param: &str, values: &[String], repeats: usize) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(CliError::Usage("a sweep needs at least one value".into()).into());
    }
    if repeats == 0 {
        return Err(CliError::Usage("invalid `repeats`: must be at least 1".into()).into());
    }
    template.validate()?;
    let mut rows = Vec::with_capacity(values.len());
    for value in values {
        let mut cfg = template.clone();
        cfg.set(param, value)?;
        cfg.validate()?;
        let mut runs = Vec::with_capacity(repeats);
        let mut pooled = Vec::new();
        for r in 0..repeats {
            let mut run_cfg = cfg.clone();
            run_cfg.seed = cfg.seed + r as u64;
            log::info!("sweep {param}={value} run {}/{repeats}", r + 1);
            let res = run_experiment(&run_cfg).with_context(|| format!("{param}={value}, seed {}", run_cfg.seed))?;
            runs.push(res.metrics);
            pooled.extend(res.records);
        }
        let col = |f: fn(&Metrics) -> f64| mean_std(&runs.iter().map(f).collect::<Vec<_>>());
        let (_, curve) = summarize(&pooled, cfg.bins)?;
        rows.push(SweepRow {
            value: value.clone(),
            accuracy: col(|m| m.accuracy),
            nll: col(|m| m.nll),
            ece: col(|m| m.ece),
            runs,
            curve,
        });
    }

    let dir = &template.output_dir;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let hash = template.hash();
    let std_field = |s: Option<f64>| opt(s);
    let mut w = csv_writer(
        &dir.join(SWEEP_FILE),
        &hash,
        "param,value,runs,accuracy_mean,accuracy_std,nll_mean,nll_std,ece_mean,ece_std",
    )?;
    for r in &rows {
        writeln!(
            w,
            "{param},{},{},{},{},{},{},{},{}",
            r.value,
            r.runs.len(),
            r.accuracy.0,
            std_field(r.accuracy.1),
            r.nll.0,
            std_field(r.nll.1),
            r.ece.0,
            std_field(r.ece.1)
        )?;
    }
    w.flush()?;
    let mut w = csv_writer(
        &dir.join(SWEEP_CURVES_FILE),
        &hash,
        "param,value,bin,lower,upper,count,mean_confidence,accuracy",
    )?;
    for r in &rows {
        for (b, bin) in r.curve.bins.iter().enumerate() {
            writeln!(
                w,
                "{param},{},{b},{},{},{},{},{}",
                r.value, bin.lower, bin.upper, bin.count, bin.mean_confidence, bin.accuracy
            )?;
        }
    }
    w.flush()?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_standard_deviation() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s.unwrap() - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[0.7]), (0.7, None));
    }

    #[test]
    fn item_normalization() {
        let t = Tensor32::from_vec(&[2, 2], vec![1.0, 3.0, 10.0, 10.0]).unwrap();
        let s = NormStats {
            mean: vec![2.0, 10.0],
            std: vec![1.0, 2.0],
        };
        assert_eq!(normalize_item(&t, Some(&s)).data(), &[-1.0, 1.0, 0.0, 0.0]);
        assert_eq!(normalize_item(&t, None), t);
    }
}
