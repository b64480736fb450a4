//! The `powergp` command line: configuration, the five commands and the
//! machine-readable error report.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::artifact::{Artifact, LoadedModel, ModelKind};
use crate::data::{
    load_scada_csv, preprocess, split_three, synth_generate, write_ground_truth_csv, write_records_csv, CleaningRules,
    Split, SynthConfig, INTERIOR_EPSILON,
};
use crate::error::{Error, Result};
use crate::exact_gp::{fit_exact, ExactFitConfig, ExactGp};
use crate::hbp::{hbp_fit, HbpPredictConfig};
use crate::kernels::KernelSpec;
use crate::metrics::{joint_log_likelihood, nmse, results_csv, EvaluationReport, Space};
use crate::standard::{standard_fit, DEFAULT_NOISE, Z_975};
use crate::svgp::TrainConfig;
use crate::warped::{warped_fit, WarpConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommandKind {
    Synth,
    Train,
    Evaluate,
    Predict,
    Report,
}

impl CommandKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CommandKind::Synth => "synth",
            CommandKind::Train => "train",
            CommandKind::Evaluate => "evaluate",
            CommandKind::Predict => "predict",
            CommandKind::Report => "report",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Dataset CSV: written by `synth`, read by `train` and `evaluate`.
    pub data: Option<PathBuf>,
    /// Ground-truth CSV written by `synth`; defaults to `<data>_truth.csv`.
    pub truth: Option<PathBuf>,
    /// Model artifact written by `train`, read by `predict` and `evaluate`.
    pub artifact: Option<PathBuf>,
    /// Several artifacts for `evaluate`.
    pub artifacts: Vec<PathBuf>,
    /// ELBO trace written by `train`; defaults to `<artifact stem>.trace.csv`.
    pub trace: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    /// Combined results table written by `evaluate` and `report`.
    pub results: Option<PathBuf>,
    /// Where `evaluate` writes one `<artifact stem>.report.json` per model;
    /// defaults to the directory holding `results`.
    pub report_dir: Option<PathBuf>,
    /// Report files merged by `report`.
    pub reports: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub points: usize,
    /// Grid ends in normalised wind speed; default to the training range.
    pub min: Option<f64>,
    pub max: Option<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { points: 200, min: None, max: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<CommandKind>,
    pub model: Option<ModelKind>,
    /// Optional cross-check of the likelihood implied by `model`.
    pub likelihood: Option<String>,
    pub paths: Paths,
    pub train: TrainConfig,
    pub warp: WarpConfig,
    pub synth: SynthConfig,
    pub cleaning: CleaningRules,
    pub split_seed: u64,
    /// One kernel per latent function; defaults to Matérn 3/2 + linear.
    pub kernels: Option<Vec<KernelSpec>>,
    /// Initial Gaussian noise variance for the standard and exact models.
    pub noise_variance: f64,
    /// Margin used to pull Beta-process targets inside `(0, 1)`.
    pub interior_epsilon: f64,
    pub predict: HbpPredictConfig,
    pub exact: ExactFitConfig,
    pub grid: GridConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: None,
            model: None,
            likelihood: None,
            paths: Paths::default(),
            train: TrainConfig::default(),
            warp: WarpConfig::default(),
            synth: SynthConfig::default(),
            cleaning: CleaningRules::default(),
            split_seed: 7,
            kernels: None,
            noise_variance: DEFAULT_NOISE,
            interior_epsilon: INTERIOR_EPSILON,
            predict: HbpPredictConfig::default(),
            exact: ExactFitConfig::default(),
            grid: GridConfig::default(),
        }
    }
}

fn collect(problems: &mut Vec<String>, r: Result<()>) {
    match r {
        Ok(()) => {}
        Err(Error::Config(list)) => problems.extend(list),
        Err(e) => problems.push(e.to_string()),
    }
}

impl RunConfig {
    /// Checks every field the command needs and reports all problems at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let Some(command) = self.command else {
            return Err(Error::Config(vec!["command is required".into()]));
        };
        let need = |problems: &mut Vec<String>, ok: bool, field: &str| {
            if !ok {
                problems.push(format!("{field} is required for {}", command.as_str()));
            }
        };
        let p = &self.paths;
        match command {
            CommandKind::Synth => {
                need(&mut problems, p.data.is_some(), "paths.data");
                collect(&mut problems, self.synth.validate());
            }
            CommandKind::Train => {
                need(&mut problems, p.data.is_some(), "paths.data");
                need(&mut problems, p.artifact.is_some(), "paths.artifact");
                need(&mut problems, self.model.is_some(), "model");
                collect(&mut problems, self.cleaning.validate());
                if let Some(model) = self.model {
                    self.validate_model(model, &mut problems);
                }
            }
            CommandKind::Evaluate => {
                need(&mut problems, p.data.is_some(), "paths.data");
                need(&mut problems, p.artifact.is_some() || !p.artifacts.is_empty(), "paths.artifact or paths.artifacts");
                need(&mut problems, p.results.is_some(), "paths.results");
                collect(&mut problems, self.cleaning.validate());
                collect(&mut problems, self.predict.validate());
            }
            CommandKind::Predict => {
                need(&mut problems, p.artifact.is_some(), "paths.artifact");
                need(&mut problems, p.predictions.is_some(), "paths.predictions");
                collect(&mut problems, self.predict.validate());
                if self.grid.points < 2 {
                    problems.push(format!("grid.points must be at least 2, got {}", self.grid.points));
                }
                if let (Some(lo), Some(hi)) = (self.grid.min, self.grid.max) {
                    if !(lo < hi) {
                        problems.push("grid.min must be below grid.max".into());
                    }
                }
            }
            CommandKind::Report => {
                need(&mut problems, !p.reports.is_empty(), "paths.reports");
                need(&mut problems, p.results.is_some(), "paths.results");
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    fn validate_model(&self, model: ModelKind, problems: &mut Vec<String>) {
        let implied = match model {
            ModelKind::Standard | ModelKind::Exact => "gaussian",
            ModelKind::Warped => "hetero",
            ModelKind::Hbp => "beta",
        };
        if let Some(lik) = &self.likelihood {
            if lik != implied {
                problems.push(format!("likelihood '{lik}' does not match model {} (expects '{implied}')", model.as_str()));
            }
        }
        if let Some(k) = &self.kernels {
            if k.len() != model.latent_count() {
                problems.push(format!(
                    "kernels lists {} entries but model {} has {} latent functions",
                    k.len(),
                    model.as_str(),
                    model.latent_count()
                ));
            }
        }
        match model {
            ModelKind::Exact => {
                if !(self.exact.learning_rate > 0.0) {
                    problems.push("exact.learning_rate must be positive".into());
                }
                if !(self.exact.min_log_param < self.exact.max_log_param) {
                    problems.push("exact.min_log_param must be below exact.max_log_param".into());
                }
            }
            _ => {
                let lik = match model {
                    ModelKind::Standard => crate::likelihoods::LikelihoodSpec::Gaussian { noise_variance: 1.0 },
                    ModelKind::Warped => crate::likelihoods::LikelihoodSpec::HeteroGaussian,
                    _ => crate::likelihoods::LikelihoodSpec::Beta,
                };
                collect(problems, self.train.validate(&lik));
            }
        }
        match model {
            ModelKind::Standard | ModelKind::Exact => {
                if !(self.noise_variance > 0.0 && self.noise_variance.is_finite()) {
                    problems.push(format!("noise_variance must be positive, got {}", self.noise_variance));
                }
            }
            ModelKind::Warped => collect(problems, self.warp.validate()),
            ModelKind::Hbp => {
                if !(self.interior_epsilon > 0.0 && self.interior_epsilon <= 0.01) {
                    problems.push(format!("interior_epsilon must lie in (0, 0.01], got {}", self.interior_epsilon));
                }
                collect(problems, self.predict.validate());
            }
        }
    }

    fn kernels_for(&self, model: ModelKind) -> Vec<KernelSpec> {
        self.kernels
            .clone()
            .unwrap_or_else(|| vec![KernelSpec::default_power_curve(); model.latent_count()])
    }
}

/// Sets `value` at a dotted `path` inside a JSON object, creating
/// intermediate objects. Numeric segments index into arrays.
pub fn apply_override(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let bad = |msg: String| Error::Config(vec![msg]);
    let segments: Vec<&str> = path.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(bad(format!("--set key '{path}' has an empty segment")));
    }
    let mut node = root;
    for (i, seg) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        if node.is_null() {
            *node = json!({});
        }
        node = match node {
            Value::Object(map) => {
                if last {
                    map.insert(seg.to_string(), value);
                    return Ok(());
                }
                map.entry(seg.to_string()).or_insert(Value::Null)
            }
            Value::Array(items) => {
                let idx: usize = seg.parse().map_err(|_| bad(format!("--set key '{path}': '{seg}' is not an array index")))?;
                let len = items.len();
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| bad(format!("--set key '{path}': index {idx} out of range (length {len})")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(bad(format!("--set key '{path}': '{seg}' descends into a scalar"))),
        };
    }
    Ok(())
}

/// Parses `key=value`. The value is read as JSON when possible and as a
/// plain string otherwise.
pub fn parse_override(spec: &str) -> Result<(String, Value)> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(vec![format!("--set expects key=value, got '{spec}'")]))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    Ok((key.trim().to_string(), value))
}

/// Builds a validated config from an optional JSON file, the command and
/// `--set` overrides (applied in order).
pub fn load_config(path: Option<&Path>, command: CommandKind, overrides: &[String]) -> Result<RunConfig> {
    let mut root = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Config(vec![format!("{}: {e}", p.display())]))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(vec![format!("{}: {e}", p.display())]))?
        }
        None => json!({}),
    };
    if !root.is_object() {
        return Err(Error::Config(vec!["config must be a JSON object".into()]));
    }
    for spec in overrides {
        let (key, value) = parse_override(spec)?;
        apply_override(&mut root, &key, value)?;
    }
    let mut problems = Vec::new();
    match root.get("command") {
        None | Some(Value::Null) => {}
        Some(Value::String(s)) if s == command.as_str() => {}
        Some(other) => problems.push(format!("config command {other} conflicts with subcommand {}", command.as_str())),
    }
    root["command"] = json!(command.as_str());
    let cfg: RunConfig = match serde_json::from_value(root) {
        Ok(c) => c,
        Err(e) => {
            problems.push(e.to_string());
            return Err(Error::Config(problems));
        }
    };
    if let Err(e) = cfg.validate() {
        collect(&mut problems, Err(e));
    }
    if problems.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::Config(problems))
    }
}

/// An error tagged with the module that raised it.
#[derive(Debug)]
pub struct CliError {
    pub module: &'static str,
    pub error: Error,
}

impl CliError {
    /// `{"error": {"kind", "module", "message"}}`
    pub fn to_json(&self) -> String {
        json!({"error": {"kind": self.error.kind(), "module": self.module, "message": self.error.to_string()}}).to_string()
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.module, self.error)
    }
}

impl std::error::Error for CliError {}

trait Within<T> {
    fn within(self, module: &'static str) -> std::result::Result<T, CliError>;
}

impl<T> Within<T> for Result<T> {
    fn within(self, module: &'static str) -> std::result::Result<T, CliError> {
        self.map_err(|error| CliError { module, error })
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "powergp", version, about = "Bounded Gaussian-process power-curve models")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a synthetic dataset and its ground truth
    Synth(CommonArgs),
    /// Train a model and write its artifact and ELBO trace
    Train(CommonArgs),
    /// Score artifacts on the test split
    Evaluate(CommonArgs),
    /// Write predictions on a wind-speed grid
    Predict(CommonArgs),
    /// Merge report files into one results table
    Report(CommonArgs),
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// JSON config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. --set train.iterations=10
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

/// Parses arguments and runs the command. Help and version requests print
/// and exit through clap.
pub fn main_with_args<I, T>(args: I) -> CliResult<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            return Err(CliError { module: "cli", error: Error::Config(vec![e.to_string().trim().to_string()]) });
        }
    };
    let (kind, common) = match &cli.command {
        Cmd::Synth(a) => (CommandKind::Synth, a),
        Cmd::Train(a) => (CommandKind::Train, a),
        Cmd::Evaluate(a) => (CommandKind::Evaluate, a),
        Cmd::Predict(a) => (CommandKind::Predict, a),
        Cmd::Report(a) => (CommandKind::Report, a),
    };
    let cfg = load_config(common.config.as_deref(), kind, &common.set).within("cli")?;
    run(&cfg)
}

pub fn run(cfg: &RunConfig) -> CliResult<()> {
    cfg.validate().within("cli")?;
    match cfg.command.expect("validated") {
        CommandKind::Synth => run_synth(cfg),
        CommandKind::Train => run_train(cfg),
        CommandKind::Evaluate => run_evaluate(cfg),
        CommandKind::Predict => run_predict(cfg),
        CommandKind::Report => run_report(cfg),
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn run_synth(cfg: &RunConfig) -> CliResult<()> {
    let data_path = cfg.paths.data.as_ref().expect("validated");
    let truth_path = cfg.paths.truth.clone().unwrap_or_else(|| sibling(data_path, "_truth.csv"));
    let ds = synth_generate(&cfg.synth).within("data")?;
    write_records_csv(data_path, &ds.records).within("data")?;
    write_ground_truth_csv(&truth_path, ds.ground_truth.as_deref().unwrap_or_default()).within("data")?;
    info!("wrote {} records to {}", ds.len(), data_path.display());
    Ok(())
}

/// Loads, cleans, normalises and splits the dataset named in `paths.data`.
pub fn load_split(cfg: &RunConfig) -> Result<crate::data::ScadaDataset> {
    let path = cfg
        .paths
        .data
        .as_ref()
        .ok_or_else(|| Error::Config(vec!["paths.data is required".into()]))?;
    let ingested = load_scada_csv(path)?;
    let ds = preprocess(&ingested.records, &cfg.cleaning)?;
    split_three(&ds, cfg.split_seed)
}

fn range_of(x: &[f64]) -> [f64; 2] {
    x.iter()
        .fold([f64::INFINITY, f64::NEG_INFINITY], |[lo, hi], &v| [lo.min(v), hi.max(v)])
}

/// Trains the configured model on the training split.
pub fn train_artifact(cfg: &RunConfig) -> CliResult<(Artifact, String)> {
    let model = cfg.model.ok_or_else(|| Error::Config(vec!["model is required".into()])).within("cli")?;
    let ds = load_split(cfg).within("data")?;
    let (x, y) = ds.part(Split::Train).within("data")?;
    let norm = ds.normalization;
    let range = range_of(&x);
    let mut kernels = cfg.kernels_for(model);
    Ok(match model {
        ModelKind::Standard => {
            let m = standard_fit(&x, &y, kernels.remove(0), cfg.noise_variance, &cfg.train).within("svgp")?;
            (Artifact::from_standard(&m, norm, range), m.trace.to_csv())
        }
        ModelKind::Warped => {
            let m = warped_fit(&x, &y, kernels, &cfg.warp, &cfg.train).within("warped")?;
            (Artifact::from_warped(&m, norm, range), m.trace.to_csv())
        }
        ModelKind::Hbp => {
            let m = hbp_fit(&x, &y, kernels, cfg.interior_epsilon, &cfg.train).within("hbp")?;
            (Artifact::from_hbp(&m, cfg.predict, norm, range), m.trace.to_csv())
        }
        ModelKind::Exact => {
            let start = ExactGp::centered(kernels.remove(0), cfg.noise_variance, x, y.clone()).within("exact-gp")?;
            let fit = fit_exact(&start, &cfg.exact).within("exact-gp")?;
            let mut trace = String::from("iteration,elbo\n");
            for (i, v) in fit.history.iter().enumerate() {
                trace.push_str(&format!("{i},{:?}\n", -v));
            }
            (Artifact::from_exact(&fit.model, y, (fit.initial_nlml, fit.final_nlml), norm, range), trace)
        }
    })
}

fn run_train(cfg: &RunConfig) -> CliResult<()> {
    let artifact_path = cfg.paths.artifact.as_ref().expect("validated");
    let trace_path = cfg.paths.trace.clone().unwrap_or_else(|| sibling(artifact_path, ".trace.csv"));
    let (artifact, trace) = train_artifact(cfg)?;
    artifact.save(artifact_path).within("cli")?;
    write_text(&trace_path, &trace).within("cli")?;
    info!(
        "trained {} model: ELBO {} -> {}",
        artifact.model.as_str(),
        artifact.initial_elbo,
        artifact.final_elbo
    );
    Ok(())
}

/// Scores a model on held-out inputs and normalised power targets.
pub fn evaluate_model(model: &LoadedModel, x: &[f64], y: &[f64]) -> CliResult<EvaluationReport> {
    let n = y.len();
    let report = |name: &str, mean: &[f64], lds: &[f64], space, clipped: usize, jac: Option<f64>| -> Result<EvaluationReport> {
        Ok(EvaluationReport {
            model_name: name.to_string(),
            nmse: nmse(y, mean)?,
            jll: joint_log_likelihood(lds)?,
            space,
            n_test: n,
            clipped_fraction: clipped as f64 / n.max(1) as f64,
            jll_jacobian: jac,
        })
    };
    match model {
        LoadedModel::Standard(m) => {
            let p = m.predict(x).within("svgp")?;
            let lds = m.log_densities(x, y).within("metrics")?;
            report("standard", &p.mean, &lds, Space::Original, 0, None).within("metrics")
        }
        LoadedModel::Exact(m) => {
            let (mean, var) = m.posterior(x, true).within("exact-gp")?;
            let lds = crate::metrics::gaussian_log_densities(y, &mean, &var).within("metrics")?;
            report("exact", &mean, &lds, Space::Original, 0, None).within("metrics")
        }
        LoadedModel::Warped(m) => {
            let p = m.predict(x).within("warped")?;
            let (warped, power, clipped) = m.log_densities(x, y).within("warped")?;
            let jac = joint_log_likelihood(&power).within("metrics")?;
            report("warped", &p.mean, &warped, Space::Warped, clipped, Some(jac)).within("metrics")
        }
        LoadedModel::Hbp(m, pc) => {
            let preds = m.predict(x, pc).within("hbp")?;
            let mean: Vec<f64> = preds.iter().map(|p| p.mean).collect();
            let (lds, moved) = m.log_densities(x, y, pc).within("hbp")?;
            report("hbp", &mean, &lds, Space::Original, moved, None).within("metrics")
        }
    }
}

fn run_evaluate(cfg: &RunConfig) -> CliResult<()> {
    let ds = load_split(cfg).within("data")?;
    let (x, y) = ds.part(Split::Test).within("data")?;
    let results_path = cfg.paths.results.as_ref().expect("validated");
    let report_dir = cfg
        .paths
        .report_dir
        .clone()
        .unwrap_or_else(|| results_path.parent().map(Path::to_path_buf).unwrap_or_default());
    let mut paths = cfg.paths.artifacts.clone();
    if let Some(p) = &cfg.paths.artifact {
        if !paths.contains(p) {
            paths.insert(0, p.clone());
        }
    }
    let mut reports = Vec::with_capacity(paths.len());
    for path in &paths {
        let artifact = Artifact::load(path).within("artifact")?;
        let mut model = artifact.to_model().within("artifact")?;
        if let LoadedModel::Hbp(_, pc) = &mut model {
            *pc = cfg.predict;
        }
        let report = evaluate_model(&model, &x, &y)?;
        let out = sibling(&report_dir.join(path.file_name().unwrap_or_default()), ".report.json");
        write_text(&out, &(serde_json::to_string_pretty(&report).map_err(Error::from).within("cli")? + "\n")).within("cli")?;
        info!("{}: NMSE {} JLL {} ({})", report.model_name, report.nmse, report.jll, report.space.as_str());
        reports.push(report);
    }
    write_text(results_path, &results_csv(&reports).within("metrics")?).within("cli")
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Prediction CSV for a loaded model. Layouts differ per model; see FORMATS.md.
pub fn prediction_csv(model: &LoadedModel, grid: &[f64]) -> CliResult<String> {
    let mut out = String::new();
    match model {
        LoadedModel::Standard(m) => {
            let p = m.predict(grid).within("svgp")?;
            out.push_str("x,mean,lower95,upper95,variance\n");
            for (i, x) in grid.iter().enumerate() {
                let (lo, hi) = p.band(i);
                out.push_str(&format!("{x:?},{:?},{lo:?},{hi:?},{:?}\n", p.mean[i], p.variance[i]));
            }
        }
        LoadedModel::Exact(m) => {
            let (mean, var) = m.posterior(grid, true).within("exact-gp")?;
            out.push_str("x,mean,lower95,upper95,variance\n");
            for (i, x) in grid.iter().enumerate() {
                let half = Z_975 * var[i].sqrt();
                out.push_str(&format!("{x:?},{:?},{:?},{:?},{:?}\n", mean[i], mean[i] - half, mean[i] + half, var[i]));
            }
        }
        LoadedModel::Warped(m) => {
            let p = m.predict(grid).within("warped")?;
            out.push_str(&format!("# clipped_fraction={:?}\n", m.clipped_fraction));
            out.push_str("x,mean,lower,upper,warped_mean,warped_sd\n");
            for (i, x) in grid.iter().enumerate() {
                out.push_str(&format!(
                    "{x:?},{:?},{:?},{:?},{:?},{:?}\n",
                    p.mean[i], p.lower[i], p.upper[i], p.warped_mean[i], p.warped_sd[i]
                ));
            }
        }
        LoadedModel::Hbp(m, pc) => {
            let preds = m.predict(grid, pc).within("hbp")?;
            out.push_str("x,mean,lower95,upper95,alpha,beta\n");
            for (x, p) in grid.iter().zip(&preds) {
                out.push_str(&format!(
                    "{x:?},{:?},{:?},{:?},{:?},{:?}\n",
                    p.mean, p.lower95, p.upper95, p.alpha_star, p.beta_star
                ));
            }
        }
    }
    Ok(out)
}

fn run_predict(cfg: &RunConfig) -> CliResult<()> {
    let artifact = Artifact::load(cfg.paths.artifact.as_ref().expect("validated")).within("artifact")?;
    let mut model = artifact.to_model().within("artifact")?;
    if let LoadedModel::Hbp(_, pc) = &mut model {
        *pc = cfg.predict;
    }
    let lo = cfg.grid.min.unwrap_or(artifact.train_range[0]);
    let hi = cfg.grid.max.unwrap_or(artifact.train_range[1]);
    if !(lo < hi) {
        return Err(CliError { module: "cli", error: Error::Config(vec![format!("empty prediction grid [{lo}, {hi}]")]) });
    }
    let grid = linspace(lo, hi, cfg.grid.points);
    let csv = prediction_csv(&model, &grid)?;
    write_text(cfg.paths.predictions.as_ref().expect("validated"), &csv).within("cli")
}

fn run_report(cfg: &RunConfig) -> CliResult<()> {
    let mut reports = Vec::with_capacity(cfg.paths.reports.len());
    for path in &cfg.paths.reports {
        let text = std::fs::read_to_string(path).map_err(Error::from).within("metrics")?;
        let r: EvaluationReport = serde_json::from_str(&text).map_err(Error::from).within("metrics")?;
        reports.push(r);
    }
    write_text(cfg.paths.results.as_ref().expect("validated"), &results_csv(&reports).within("metrics")?).within("cli")
}
