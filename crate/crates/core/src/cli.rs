//! Command implementations behind the `misd` binary.
//!
//! Each command resolves its [`ExperimentConfig`], writes the resolved
//! snapshot into the output directory, and then writes its CSV/JSON outputs
//! there. Outputs carry no timestamps, so reruns from a snapshot reproduce
//! them byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::bench::{bench_csv, benchmark_methods, BenchRow};
use crate::config::{snapshot_file, DataSource, ExperimentConfig, RawConfig};
use crate::data::{self, Dataset, GaussianMixture};
use crate::error::{MisdError, Result};
use crate::metrics::{detection_report, DetectionReport};
use crate::model::Classifier;
use crate::radius::{radius_batch, radius_csv};
use crate::rng::{derive_seed, stream};
use crate::scores::{self, build_records, score_csv, ConfidenceRecord, ScoreConfig, ScoreMethod};
use crate::training::{self, TrainLog};

/// Reads an optional config file and applies `--key value` overrides.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut raw = match path {
        Some(p) => RawConfig::load(p)?,
        None => RawConfig::default(),
    };
    raw.apply_overrides(overrides)?;
    ExperimentConfig::from_raw(&raw)
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| MisdError::io(path, e))
}

fn prepare_output(cfg: &ExperimentConfig, command: &str) -> Result<PathBuf> {
    let dir = cfg.output_path();
    fs::create_dir_all(&dir).map_err(|e| MisdError::io(&dir, e))?;
    write(&dir.join(snapshot_file(command)), &cfg.snapshot())?;
    Ok(dir)
}

/// The training set and the held-out pool that validation and test are split from.
pub fn load_datasets(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let (train, pool) = match &cfg.data.source {
        DataSource::Synthetic {
            n_train,
            n_test,
            dim,
            classes,
            separation,
            scale,
        } => {
            let gm = GaussianMixture::new(*dim, *classes, *separation, cfg.seed)?.with_scale(*scale)?;
            (
                gm.sample(*n_train, derive_seed(cfg.seed, stream::DATA_TRAIN))?,
                gm.sample(*n_test, derive_seed(cfg.seed, stream::DATA_TEST))?,
            )
        }
        DataSource::Csv { train, test } => (data::load_csv(train)?, data::load_csv(test)?),
        DataSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => (
            data::load_idx(train_images, train_labels)?,
            data::load_idx(test_images, test_labels)?,
        ),
    };
    let pool = match cfg.data.corruption {
        Some((kind, severity)) => data::corrupt(&pool, kind, severity, cfg.seed)?,
        None => pool,
    };
    Ok((train, pool))
}

/// Validation and test subsets of the held-out pool, with the pool indices of the test rows.
pub struct EvalSplit {
    pub val: Dataset,
    pub test: Dataset,
    pub test_indices: Vec<usize>,
}

pub fn eval_split(cfg: &ExperimentConfig, pool: &Dataset) -> Result<EvalSplit> {
    let split = data::split_val_test(pool.len(), cfg.data.val_fraction, cfg.data.split_seed)?;
    Ok(EvalSplit {
        val: pool.subset(&split.val_indices),
        test: pool.subset(&split.test_indices),
        test_indices: split.test_indices,
    })
}

fn load_model(cfg: &ExperimentConfig, dataset: &Dataset) -> Result<Classifier> {
    let model = Classifier::load(&cfg.checkpoint_path())?;
    if model.input_dim() != dataset.dim() {
        return Err(MisdError::Dimension(format!(
            "checkpoint expects {} features, dataset has {}",
            model.input_dim(),
            dataset.dim()
        )));
    }
    Ok(model)
}

fn dataset_name(cfg: &ExperimentConfig, ds: &Dataset) -> String {
    match cfg.data.corruption {
        Some((kind, s)) => format!("{}+{kind:?}@{s}", ds.name),
        None => ds.name.clone(),
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Classifier,
    pub log: TrainLog,
    pub output_dir: PathBuf,
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    let (train, _) = load_datasets(cfg)?;
    let dir = prepare_output(cfg, "train")?;
    let mut dims = vec![train.dim()];
    dims.extend(&cfg.hidden);
    dims.push(train.num_classes());
    let model = Classifier::init(&dims, cfg.seed)?;
    let (model, log) = training::train(model, &train, &cfg.train)?;
    let ckpt = cfg.checkpoint.clone().unwrap_or_else(|| dir.join("model.ckpt"));
    model.save(&ckpt)?;
    write(&dir.join("train_log.csv"), &log.to_csv())?;
    Ok(TrainOutcome {
        model,
        log,
        output_dir: dir,
    })
}

/// Scoring configuration for `method` from the config's score and radius sections.
pub fn base_score_config(cfg: &ExperimentConfig, method: ScoreMethod, dataset: &Dataset) -> ScoreConfig {
    ScoreConfig::new(method)
        .with_temperature(cfg.score.temperature)
        .with_preprocess_eps(cfg.score.preprocess_eps)
        .with_radius(cfg.radius.config_for(dataset))
}

fn reindex(records: &mut [ConfidenceRecord], indices: &[usize]) {
    for r in records {
        r.index = indices[r.index];
    }
}

#[derive(Debug, Clone, Serialize)]
struct ReportFile<'a> {
    #[serde(flatten)]
    report: &'a DetectionReport,
    temperature: f64,
    preprocess_eps: f64,
}

/// One report per requested method, in request order.
pub fn cmd_evaluate(cfg: &ExperimentConfig) -> Result<Vec<(ScoreConfig, DetectionReport)>> {
    let (_, pool) = load_datasets(cfg)?;
    let split = eval_split(cfg, &pool)?;
    let model = load_model(cfg, &pool)?;
    let dir = prepare_output(cfg, "evaluate")?;
    let name = dataset_name(cfg, &pool);
    let mut out = Vec::with_capacity(cfg.score.methods.len());
    for &method in &cfg.score.methods {
        let base = base_score_config(cfg, method, &pool);
        let tuned = if cfg.score.tune {
            scores::tune(&model, &split.val, &base)?.0
        } else {
            base
        };
        let mut records = build_records(&model, &split.test, &tuned)?;
        reindex(&mut records, &split.test_indices);
        let report = detection_report(&records, method.as_str(), &name, cfg.seed)?;
        let file = ReportFile {
            report: &report,
            temperature: tuned.temperature,
            preprocess_eps: tuned.preprocess_eps,
        };
        let json = serde_json::to_string_pretty(&file).expect("report serializes") + "\n";
        write(&dir.join(format!("report_{method}.json")), &json)?;
        write(&dir.join(format!("curve_{method}.csv")), &report.curve_csv())?;
        write(&dir.join(format!("scores_{method}.csv")), &score_csv(method.as_str(), &records))?;
        out.push((tuned, report));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RadiusSummary {
    pub method: String,
    pub n: usize,
    pub n_correct: usize,
    pub n_wrong: usize,
    /// `null` in JSON when the group is empty or its median is the no-flip sentinel.
    pub median_correct: Option<f64>,
    pub median_wrong: Option<f64>,
    pub forward_passes_per_example: f64,
    pub backward_passes_per_example: f64,
}

/// Midpoint median; `None` for an empty slice.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

pub fn cmd_radius(cfg: &ExperimentConfig) -> Result<RadiusSummary> {
    let (_, pool) = load_datasets(cfg)?;
    let split = eval_split(cfg, &pool)?;
    let model = load_model(cfg, &pool)?;
    let dir = prepare_output(cfg, "radius")?;
    let rc = cfg.radius.config_for(&pool);
    let method = cfg.radius.method;
    let (estimates, total) = radius_batch(&model, &split.test, &rc, method)?;
    let preds = model.predict_batch(split.test.inputs(), split.test.len())?;
    let (mut correct, mut wrong) = (Vec::new(), Vec::new());
    for (i, e) in estimates.iter().enumerate() {
        if preds[i] == split.test.label(i) {
            correct.push(e.value);
        } else {
            wrong.push(e.value);
        }
    }
    let n = estimates.len().max(1) as f64;
    let finite = |m: Option<f64>| m.filter(|v| v.is_finite());
    let summary = RadiusSummary {
        method: method.to_string(),
        n: estimates.len(),
        n_correct: correct.len(),
        n_wrong: wrong.len(),
        median_correct: finite(median(&correct)),
        median_wrong: finite(median(&wrong)),
        forward_passes_per_example: total.forwards() as f64 / n,
        backward_passes_per_example: total.backwards() as f64 / n,
    };
    write(&dir.join(format!("radius_{method}.csv")), &radius_csv(&split.test_indices, &estimates))?;
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
    write(&dir.join(format!("radius_{method}_summary.json")), &json)?;
    Ok(summary)
}

/// `(method, T, aurc)` rows, methods outermost, temperatures in config order.
pub fn cmd_sweep_temperature(cfg: &ExperimentConfig) -> Result<Vec<(ScoreMethod, f64, f64)>> {
    let (_, pool) = load_datasets(cfg)?;
    let split = eval_split(cfg, &pool)?;
    let model = load_model(cfg, &pool)?;
    let dir = prepare_output(cfg, "sweep-temp")?;
    let mut rows = Vec::new();
    for &method in &cfg.score.methods {
        let base = base_score_config(cfg, method, &pool);
        for &t in &cfg.temperatures {
            let records = build_records(&model, &split.test, &base.with_temperature(t))?;
            rows.push((method, t, crate::metrics::aurc(&records)?));
        }
    }
    let mut csv = String::from("method,T,aurc\n");
    for (m, t, a) in &rows {
        csv.push_str(&format!("{m},{t:?},{a:?}\n"));
    }
    write(&dir.join("sweep_temp.csv"), &csv)?;
    Ok(rows)
}

pub fn cmd_bench(cfg: &ExperimentConfig) -> Result<Vec<BenchRow>> {
    let (_, pool) = load_datasets(cfg)?;
    let split = eval_split(cfg, &pool)?;
    let model = load_model(cfg, &pool)?;
    let dir = prepare_output(cfg, "bench")?;
    let n = cfg.bench_n.min(split.test.len());
    let subset = split.test.subset(&(0..n).collect::<Vec<_>>());
    let methods: Vec<(String, ScoreConfig)> = cfg
        .score
        .methods
        .iter()
        .map(|&m| (m.to_string(), base_score_config(cfg, m, &pool)))
        .collect();
    let rows = benchmark_methods(&model, &subset, &methods, cfg.bench_repetitions)?;
    write(&dir.join("bench.csv"), &bench_csv(&rows))?;
    Ok(rows)
}
