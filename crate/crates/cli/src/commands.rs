use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use trustscore::baselines::{
    batch_mc_dropout_scores, batch_msp_scores, write_baseline_csv, BaselineResult, DropoutConfig,
};
use trustscore::data::{gen_microclusters, gen_ood, Dataset, SyntheticSpec};
use trustscore::geometry;
use trustscore::metrics::{
    histogram, read_scores_csv, stratification, summarize, risk_coverage_curve, sparsification_curve,
    write_histogram_csv, write_risk_coverage_csv, write_sparsification_csv, write_stratification_csv,
};
use trustscore::nn::{checkpoint, Mlp, MlpConfig};
use trustscore::shift::{shift_table, shift_trend, write_shift_csv};
use trustscore::training::{evaluate, train as fit};
use trustscore::trust::{batch_trust_scores, write_scores_csv, TrustConfig, TrustResult};

use crate::config::{load, parse_sweep, patch, write_json, ReportConfig, TrainRun};
use crate::error::CliError;
use crate::Method;

const TOP_PERCENTS: [u32; 10] = [10, 20, 30, 40, 50, 60, 70, 80, 90, 100];
const THEORY_SEED: u64 = 42;

/// Flags shared by every command.
pub struct Context {
    config: Option<PathBuf>,
    seed: Option<u64>,
    out: PathBuf,
    workers: Option<usize>,
    pool: Option<rayon::ThreadPool>,
}

impl Context {
    pub fn new(config: Option<PathBuf>, seed: Option<u64>, out: PathBuf, workers: Option<usize>) -> Result<Self, CliError> {
        let pool = match workers {
            Some(0) => return Err(CliError::new("config", "--workers must be >= 1")),
            Some(n) => Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| CliError::new("config", e.to_string()))?,
            ),
            None => None,
        };
        Ok(Context {
            config,
            seed,
            out,
            workers,
            pool,
        })
    }

    pub fn install<T: Send>(&self, f: impl FnOnce() -> T + Send) -> T {
        match &self.pool {
            Some(pool) => pool.install(f),
            None => f(),
        }
    }

    fn load<T: DeserializeOwned + Default>(&self) -> Result<T, CliError> {
        load(self.config.as_deref())
    }

    fn output(&self, name: &str) -> Result<PathBuf, CliError> {
        fs::create_dir_all(&self.out).map_err(|e| CliError::new("io", format!("{}: {e}", self.out.display())))?;
        Ok(self.out.join(name))
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>, CliError> {
        let path = self.output(name)?;
        let file = File::create(&path).map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))?;
        Ok(BufWriter::new(file))
    }

    fn resolved(&self, tag: &str, mut record: Value) -> Result<(), CliError> {
        record["config_file"] = json!(self.config.as_ref().map(|p| p.display().to_string()));
        record["seed_override"] = json!(self.seed);
        record["workers"] = json!(self.workers);
        write_json(&self.output(&format!("resolved_config_{tag}.json"))?, &record)
    }
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "scores".into())
}

fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    Dataset::load(path).map_err(|e| CliError::new(e.kind(), format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<Mlp, CliError> {
    checkpoint::load(path).map_err(|e| CliError::new(e.kind(), format!("{}: {e}", path.display())))
}

fn print(summary: &Value) {
    println!("{summary}");
}

pub fn gen(ctx: &Context, ood_n: usize) -> Result<(), CliError> {
    let mut spec: SyntheticSpec = ctx.load()?;
    if let Some(seed) = ctx.seed {
        spec.seed = seed;
    }
    let data = gen_microclusters(&spec)?;
    let ood_seed = spec.seed.wrapping_add(1);
    let ood = gen_ood(ood_n, spec.d, spec.radius, spec.k, ood_seed)?;
    let files = [("train.dataset", &data.train), ("test.dataset", &data.test), ("ood.dataset", &ood)];
    for (name, ds) in files {
        ds.save(ctx.output(name)?)?;
    }
    ctx.resolved(
        "gen",
        json!({ "command": "gen", "synthetic": spec, "ood_n": ood_n, "ood_seed": ood_seed }),
    )?;
    print(&json!({
        "train": data.train.len(),
        "test": data.test.len(),
        "ood": ood.len(),
        "d": spec.d,
        "k": spec.k,
        "outputs": files.iter().map(|(n, _)| *n).collect::<Vec<_>>(),
    }));
    Ok(())
}

pub fn train(ctx: &Context, data_path: &Path) -> Result<(), CliError> {
    let mut run: TrainRun = ctx.load()?;
    if let Some(seed) = ctx.seed {
        run.init_seed = seed;
        run.train.seed = seed;
    }
    let data = load_dataset(data_path)?;
    let mut dims = vec![data.dim()];
    dims.extend(&run.hidden);
    dims.push(data.num_classes);
    let mut model = Mlp::new(MlpConfig::new(dims, run.dropout_rate, run.init_seed))?;
    let history = fit(&mut model, &data, &run.train)?;
    checkpoint::save(&model, ctx.output("model.ckpt")?)?;
    history.write_csv(ctx.create("history.csv")?)?;
    ctx.resolved(
        "train",
        json!({ "command": "train", "data": display(data_path), "config": run }),
    )?;
    let last = history.epochs.last();
    print(&json!({
        "epochs": history.epochs.len(),
        "final_train_accuracy": last.map(|e| e.train_accuracy),
        "final_train_loss": last.map(|e| e.train_loss),
        "outputs": ["model.ckpt", "history.csv"],
    }));
    Ok(())
}

/// `(key, value as spelled)` of a sweep point.
type SweepLabel = Option<(String, String)>;

/// Config variants for a score run: the base config, or one per sweep value.
fn variants<T>(base: &T, sweep: Option<&str>) -> Result<Vec<(SweepLabel, T)>, CliError>
where
    T: Serialize + DeserializeOwned + Clone,
{
    let Some(flag) = sweep else {
        return Ok(vec![(None, base.clone())]);
    };
    let sweep = parse_sweep(flag)?;
    sweep
        .values
        .iter()
        .map(|(raw, value)| Ok((Some((sweep.key.clone(), raw.clone())), patch(base, &sweep.key, value)?)))
        .collect()
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoParams {}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

pub fn score(ctx: &Context, model_path: &Path, data_path: &Path, method: Method, sweep: Option<&str>) -> Result<(), CliError> {
    let model = load_model(model_path)?;
    let data = load_dataset(data_path)?;
    if data.is_empty() {
        return Err(CliError::new("empty", format!("{}: no samples to score", data_path.display())));
    }

    let mut runs = Vec::new();
    let mut record = |label: SweepLabel, config: Value, write: &dyn Fn(&str) -> Result<Value, CliError>| {
        let mut name = format!("{}_{}", stem(data_path), method.name());
        if let Some((key, raw)) = &label {
            name.push_str(&format!("_{key}-{raw}"));
        }
        let file = format!("{name}.csv");
        let mut summary = write(&file)?;
        ctx.resolved(
            &format!("score_{name}"),
            json!({
                "command": "score",
                "method": method.name(),
                "model": display(model_path),
                "data": display(data_path),
                "sweep": label.as_ref().map(|(k, v)| json!({ "key": k, "value": v })),
                "config": config,
            }),
        )?;
        summary["output"] = json!(file);
        runs.push(summary);
        Ok::<(), CliError>(())
    };

    let baseline_summary = |results: &[BaselineResult]| {
        let correct = results.iter().zip(&data.labels).filter(|(r, y)| r.predicted_label == **y).count();
        json!({
            "n": results.len(),
            "accuracy": correct as f64 / results.len() as f64,
            "mean_score": results.iter().map(|r| r.score).sum::<f64>() / results.len() as f64,
        })
    };

    match method {
        Method::Trust => {
            let base: TrustConfig = ctx.load()?;
            for (label, cfg) in variants(&base, sweep)? {
                let results = batch_trust_scores(&model, &data.features, &cfg)?;
                let write = |file: &str| {
                    write_scores_csv(ctx.create(file)?, &results, &data.labels)?;
                    Ok(trust_summary(&results, &data.labels))
                };
                record(label, serde_json::to_value(&cfg)?, &write)?;
            }
        }
        Method::McDropout => {
            let mut base: DropoutConfig = ctx.load()?;
            if let Some(seed) = ctx.seed {
                base.seed = seed;
            }
            for (label, cfg) in variants(&base, sweep)? {
                let results = batch_mc_dropout_scores(&model, &data.features, &cfg)?;
                let write = |file: &str| {
                    write_baseline_csv(ctx.create(file)?, method.name(), &results, &data.labels)?;
                    Ok(baseline_summary(&results))
                };
                record(label, serde_json::to_value(&cfg)?, &write)?;
            }
        }
        Method::Msp => {
            let base: NoParams = ctx.load()?;
            for (label, cfg) in variants(&base, sweep)? {
                let results = batch_msp_scores(&model, &data.features)?;
                let write = |file: &str| {
                    write_baseline_csv(ctx.create(file)?, method.name(), &results, &data.labels)?;
                    Ok(baseline_summary(&results))
                };
                record(label, serde_json::to_value(&cfg)?, &write)?;
            }
        }
    }
    print(&json!({ "method": method.name(), "data": display(data_path), "runs": runs }));
    Ok(())
}

fn trust_summary(results: &[TrustResult], labels: &[usize]) -> Value {
    let n = results.len() as f64;
    let correct = results.iter().zip(labels).filter(|(r, y)| r.predicted_label == **y).count();
    let mut iterations: Vec<f64> = results.iter().map(|r| r.iterations_run as f64).collect();
    json!({
        "n": results.len(),
        "accuracy": correct as f64 / n,
        "mean_score": results.iter().map(|r| r.score).sum::<f64>() / n,
        "median_iterations": median(&mut iterations),
        "max_iterations": iterations.last(),
    })
}

pub fn stratify(ctx: &Context, scores_path: &Path, steps: usize) -> Result<(), CliError> {
    let file = File::open(scores_path).map_err(|e| CliError::new("io", format!("{}: {e}", scores_path.display())))?;
    let rows = read_scores_csv(file).map_err(|e| CliError::new(e.kind(), format!("{}: {e}", scores_path.display())))?;
    let preds: Vec<_> = rows.iter().map(|r| r.prediction()).collect();
    let summary = summarize(&preds, steps)?;
    let table = stratification(&preds, &TOP_PERCENTS)?;
    let name = stem(scores_path);
    write_stratification_csv(ctx.create(&format!("{name}_stratification.csv"))?, &table)?;
    write_risk_coverage_csv(ctx.create(&format!("{name}_risk_coverage.csv"))?, &risk_coverage_curve(&preds)?)?;
    write_sparsification_csv(
        ctx.create(&format!("{name}_sparsification.csv"))?,
        &sparsification_curve(&preds, steps)?,
    )?;
    let metrics = serde_json::to_value(&summary)?;
    write_json(&ctx.output(&format!("{name}_metrics.json"))?, &metrics)?;
    ctx.resolved(
        &format!("stratify_{name}"),
        json!({ "command": "stratify", "scores": display(scores_path), "steps": steps }),
    )?;
    print(&metrics);
    Ok(())
}

pub fn verify_theory(ctx: &Context) -> Result<(), CliError> {
    if ctx.config.is_some() {
        return Err(CliError::new("config", "verify-theory takes no config file; use --seed"));
    }
    let seed = ctx.seed.unwrap_or(THEORY_SEED);
    let checks = geometry::verify_theory(seed)?;
    let all_passed = checks.iter().all(|c| c.passed);
    let doc = json!({ "seed": seed, "all_passed": all_passed, "checks": checks });
    write_json(&ctx.output("theory.json")?, &doc)?;
    ctx.resolved("verify_theory", json!({ "command": "verify-theory", "seed": seed }))?;
    print(&doc);
    if all_passed {
        Ok(())
    } else {
        let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        Err(CliError::new("check_failed", format!("theory checks failed: {}", failed.join(", "))))
    }
}

pub struct ReportInputs {
    pub model: PathBuf,
    pub train: PathBuf,
    pub test: PathBuf,
    pub ood: Option<PathBuf>,
    pub train_scores: Option<PathBuf>,
    pub test_scores: Option<PathBuf>,
    pub ood_scores: Option<PathBuf>,
}

/// TRUST scores of `data`, read from `precomputed` when given.
fn scores_for(model: &Mlp, data: &Dataset, precomputed: Option<&Path>, cfg: &TrustConfig) -> Result<Vec<f64>, CliError> {
    let Some(path) = precomputed else {
        return Ok(batch_trust_scores(model, &data.features, cfg)?.iter().map(|r| r.score).collect());
    };
    let file = File::open(path).map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))?;
    let rows = read_scores_csv(file).map_err(|e| CliError::new(e.kind(), format!("{}: {e}", path.display())))?;
    let labels: Vec<usize> = rows.iter().map(|r| r.true_label).collect();
    if labels != data.labels {
        return Err(CliError::new(
            "shape",
            format!("{}: rows do not match the dataset {:?} ({} samples)", path.display(), data.name, data.len()),
        ));
    }
    Ok(rows.iter().map(|r| r.score).collect())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn report(ctx: &Context, inputs: &ReportInputs) -> Result<(), CliError> {
    let mut cfg: ReportConfig = ctx.load()?;
    if let Some(seed) = ctx.seed {
        cfg.seed = seed;
    }
    let model = load_model(&inputs.model)?;
    let train_set = load_dataset(&inputs.train)?;
    let test = load_dataset(&inputs.test)?;
    let ood = inputs.ood.as_deref().map(load_dataset).transpose()?;

    let train_scores = scores_for(&model, &train_set, inputs.train_scores.as_deref(), &cfg.trust)?;
    let test_scores = scores_for(&model, &test, inputs.test_scores.as_deref(), &cfg.trust)?;
    let ood_scores = match &ood {
        Some(ds) => Some(scores_for(&model, ds, inputs.ood_scores.as_deref(), &cfg.trust)?),
        None if inputs.ood_scores.is_some() => {
            return Err(CliError::new("config", "--ood-scores needs --ood"));
        }
        None => None,
    };

    let rows = shift_table(
        &model,
        &train_scores,
        &test,
        cfg.kind,
        &cfg.levels,
        cfg.seed,
        &cfg.trust,
        Some(&test_scores),
    )?;
    write_shift_csv(ctx.create("shift.csv")?, &rows)?;
    let (spearman, trend_note) = match shift_trend(&rows) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };

    let mut groups = vec![("train", &train_scores), ("test", &test_scores)];
    if let Some(s) = &ood_scores {
        groups.push(("ood", s));
    }
    let pooled = groups.iter().flat_map(|(_, s)| s.iter().copied());
    let (lo, hi) = pooled.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let (lo, hi) = if lo < hi { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
    let mut outputs = vec!["shift.csv".to_string(), "shift.json".to_string()];
    for (name, scores) in &groups {
        let file = format!("histogram_{name}.csv");
        write_histogram_csv(ctx.create(&file)?, &histogram(scores, cfg.bins, (lo, hi))?)?;
        outputs.push(file);
    }

    let doc = json!({
        "kind": cfg.kind,
        "levels": cfg.levels,
        "seed": cfg.seed,
        "clean_accuracy": evaluate(&model, &test)?,
        "spearman_mmd_vs_accuracy_drop": spearman,
        "trend_note": trend_note,
        "mean_score_train": mean(&train_scores),
        "mean_score_test": mean(&test_scores),
        "mean_score_ood": ood_scores.as_deref().map(mean),
        "histogram_range": [lo, hi],
        "rows": rows,
    });
    write_json(&ctx.output("shift.json")?, &doc)?;
    let path_str = |p: &Option<PathBuf>| p.as_deref().map(display);
    ctx.resolved(
        "report",
        json!({
            "command": "report",
            "model": display(&inputs.model),
            "train": display(&inputs.train),
            "test": display(&inputs.test),
            "ood": path_str(&inputs.ood),
            "train_scores": path_str(&inputs.train_scores),
            "test_scores": path_str(&inputs.test_scores),
            "ood_scores": path_str(&inputs.ood_scores),
            "config": cfg,
        }),
    )?;
    print(&json!({ "spearman_mmd_vs_accuracy_drop": spearman, "trend_note": trend_note, "outputs": outputs }));
    Ok(())
}
