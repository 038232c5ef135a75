use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use mixspec::eval::{kl_exact, kl_mc, outcome_count, MAX_ENUMERATED_OUTCOMES};
use mixspec::io::{format_labels, format_samples, parse_labels, parse_samples};
use mixspec::{
    align, cluster_map, cluster_projected, clustering_accuracy, fit as fit_samples, fit_exact, AltMinConfig,
    ClusterAssignment, FitConfig, FitReport, MixtureModel, RandomModelSpec, SampleSet,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::{ClusterArgs, EvalArgs, FitArgs, GenArgs, Method, ModelSource, ScalingArgs};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Lib(mixspec::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Lib(e) if e.is_numerical() => 4,
            CliError::Lib(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Lib(e) => write!(f, "{e}"),
        }
    }
}

impl From<mixspec::Error> for CliError {
    fn from(e: mixspec::Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Lib(e.into())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Lib(mixspec::Error::Io(std::io::Error::other(e)))
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| CliError::Lib(mixspec::Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn pretty(v: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("value serializes");
    s.push('\n');
    s
}

fn load_model(path: &Path) -> Result<MixtureModel> {
    Ok(MixtureModel::from_json(&read(path)?)?)
}

fn load_samples(path: &Path, ell: Option<usize>) -> Result<SampleSet> {
    Ok(parse_samples(&read(path)?, ell)?)
}

/// Resolved description of where a model came from, embedded in outputs.
fn resolve_model(src: &ModelSource) -> Result<(MixtureModel, Value)> {
    if let Some(path) = &src.model {
        return Ok((load_model(path)?, json!({ "file": path })));
    }
    let (n, ell, r) = (src.n.unwrap(), src.ell.unwrap(), src.r.unwrap());
    let spec = RandomModelSpec { n, ell, r, seed: src.model_seed, uniform_mix: src.uniform_mix };
    let model = match src.cond {
        Some(kappa) => spec.build_with_condition(kappa)?,
        None => spec.build()?,
    };
    Ok((model, json!({ "random": spec, "condition_target": src.cond })))
}

pub fn gen(a: GenArgs) -> Result<()> {
    if a.count == 0 {
        return Err(CliError::Usage("--count must be positive".into()));
    }
    let (model, _) = resolve_model(&a.source)?;
    let samples = mixspec::sample(&model, a.count, a.seed);
    write(&a.out.join("model.json"), &(model.to_json() + "\n"))?;
    write(&a.out.join("samples.jsonl"), &format_samples(&samples))?;
    write(&a.out.join("types.jsonl"), &format_labels(samples.types().expect("sampler attaches types")))?;
    Ok(())
}

fn fit_config(a: &FitArgs) -> FitConfig {
    let mut cfg = FitConfig::new(a.r, a.seed);
    cfg.altmin = AltMinConfig::new(a.r).with_max_iters(a.iters);
    if let Some(k) = a.power_restarts {
        cfg.power.restarts = k;
    }
    cfg.eps_w = a.eps_w;
    cfg.eps_pi = a.eps_pi;
    cfg
}

pub fn fit(a: FitArgs) -> Result<()> {
    let cfg = fit_config(&a);
    let (report, truth): (FitReport, Option<MixtureModel>) = match &a.exact_moments {
        Some(path) => {
            let model = load_model(path)?;
            if a.ell.is_some_and(|l| l != model.ell()) {
                return Err(CliError::Usage("--ell disagrees with the model".into()));
            }
            (fit_exact(&model, &cfg)?, Some(model))
        }
        None => {
            let samples = load_samples(a.samples.as_ref().expect("clap requires samples"), a.ell)?;
            (fit_samples(&samples, &cfg)?, None)
        }
    };
    let mut value = report.to_json_value(a.timings);
    value["input"] = match (&a.exact_moments, &a.samples) {
        (Some(p), _) => json!({ "exact_moments": p }),
        (None, Some(p)) => json!({ "samples": p }),
        (None, None) => Value::Null,
    };
    if let Some(truth) = truth {
        value["alignment"] = serde_json::to_value(mixspec::eval::align_raw(&truth, &report.raw_model)?)
            .expect("alignment serializes");
    }
    write(&a.out.join("report.json"), &pretty(&value))?;
    write(&a.out.join("model.json"), &(report.valid_model.to_json() + "\n"))?;
    Ok(())
}

fn run_cluster(samples: &SampleSet, model: &MixtureModel, method: Method) -> Result<ClusterAssignment> {
    Ok(match method {
        Method::Projected => cluster_projected(samples, model)?,
        Method::Map => cluster_map(samples, model)?,
    })
}

/// Exact KL when `ℓⁿ` is small enough to enumerate, Monte Carlo otherwise.
fn kl_value(truth: &MixtureModel, fitted: &MixtureModel, draws: usize, seed: u64) -> Result<Value> {
    if outcome_count(truth) <= MAX_ENUMERATED_OUTCOMES {
        Ok(json!({ "method": "exact", "value": kl_exact(truth, fitted)? }))
    } else {
        let est = kl_mc(truth, fitted, draws, seed)?;
        Ok(json!({
            "method": "monte-carlo",
            "value": est.estimate,
            "std_error": est.std_error,
            "draws": est.draws,
        }))
    }
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let truth = load_model(&a.truth)?;
    let fitted = load_model(&a.fitted)?;
    let alignment = align(&truth, &fitted)?;
    let mut out = json!({
        "alignment": alignment,
        "kl": kl_value(&truth, &fitted, a.mc_draws, a.seed)?,
    });
    if let Some(types_path) = &a.types {
        let types = parse_labels(&read(types_path)?)?;
        let (labels, method) = match (&a.assignment, &a.samples) {
            (Some(p), _) => (parse_labels(&read(p)?)?, json!("file")),
            (None, Some(p)) => {
                let samples = load_samples(p, Some(fitted.ell()))?;
                let c = run_cluster(&samples, &fitted, a.method)?;
                (c.labels, json!(c.method))
            }
            (None, None) => return Err(CliError::Usage("--types needs --samples or --assignment".into())),
        };
        out["clustering"] = json!({
            "method": method,
            "accuracy": clustering_accuracy(&labels, &types)?,
        });
    }
    write(&a.out, &pretty(&out))
}

pub fn cluster(a: ClusterArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let samples = load_samples(&a.samples, Some(model.ell()))?;
    let c = run_cluster(&samples, &model, a.method)?;
    write(&a.out, &format_labels(&c.labels))
}

#[derive(Debug, Serialize)]
struct ScalingRow {
    samples: usize,
    max_pi_error: f64,
    max_w_error: f64,
    kl: f64,
    clustering_accuracy: f64,
}

pub fn scaling(a: ScalingArgs) -> Result<()> {
    if a.sizes.len() < 2 {
        return Err(CliError::Usage("--sizes needs at least two sample sizes".into()));
    }
    if a.sizes.contains(&0) {
        return Err(CliError::Usage("sample sizes must be positive".into()));
    }
    let (model, source) = resolve_model(&a.source)?;
    let cfg = FitConfig::new(model.r(), a.seed);
    let mut rows = Vec::with_capacity(a.sizes.len());
    for (k, &size) in a.sizes.iter().enumerate() {
        // every size gets its own sample stream so repeated sizes are replicates
        let samples = mixspec::sample(&model, size, a.seed.wrapping_add(k as u64));
        let report = fit_samples(&samples, &cfg)?;
        let alignment = align(&model, &report.valid_model)?;
        let kl = kl_value(&model, &report.valid_model, a.mc_draws, a.seed)?;
        let labels = cluster_projected(&samples, &report.valid_model)?.labels;
        rows.push(ScalingRow {
            samples: size,
            max_pi_error: alignment.max_pi_error,
            max_w_error: alignment.max_w_error,
            kl: kl["value"].as_f64().unwrap_or(f64::NAN),
            clustering_accuracy: clustering_accuracy(&labels, samples.types().expect("sampler attaches types"))?,
        });
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &rows {
        w.serialize(row)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Lib(mixspec::Error::Io(e.into_error())))?;
    write(&a.out, &String::from_utf8(bytes).expect("csv is utf-8"))?;

    let experiment = json!({
        "model": source,
        "sizes": a.sizes,
        "seed": a.seed,
        "mc_draws": a.mc_draws,
        "fit_config": cfg,
    });
    write(&sidecar(&a.out), &pretty(&experiment))
}

fn sidecar(csv_path: &Path) -> PathBuf {
    let mut name = csv_path.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".json");
    csv_path.with_file_name(name)
}
