use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{RunConfig, TuneTarget};
use super::streams;
use crate::control::{run_batch, ControllerKind, ControllerSpec, EpisodeConfig, EpisodeResult};
use crate::dynsys::{generate_dataset, sample_initial_states, DatasetFile, Integrator, StateVector};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::hyperopt::{tune_controller, tune_esn, EvalRecord, SearchSpace};
use crate::reservoir::{EsnModel, Surrogate};
use crate::reward::{summarize, BatchSummary, EpisodeMetrics};
use crate::seeds;

pub const MANIFEST_FORMAT: &str = "caesn-manifest";

/// Where and how a command runs.
#[derive(Clone, Debug)]
pub struct Options {
    pub out_dir: PathBuf,
    pub exec: Execution,
    /// Add wall-clock columns to tables. Makes outputs non-reproducible.
    pub timings: bool,
}

impl Options {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Options {
            out_dir: out_dir.into(),
            exec: Execution::default(),
            timings: false,
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn ensure_dir(&self) -> Result<()> {
        fs::create_dir_all(&self.out_dir).map_err(|e| Error::io(&self.out_dir, e))
    }
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let fail = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(fail)?;
    w.write_record(header).map_err(fail)?;
    for row in rows {
        w.write_record(&row).map_err(fail)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub n_series: usize,
    pub validation_series: usize,
    pub length_lt: f64,
    /// File name to SHA-256 of its contents.
    pub files: BTreeMap<String, String>,
}

#[derive(Clone, Debug)]
pub struct GenerateOutput {
    pub train: PathBuf,
    pub validation: PathBuf,
    pub manifest: Manifest,
}

/// Writes `train.json`, `validation.json` and `manifest.json`.
pub fn cmd_generate(cfg: &RunConfig, opts: &Options) -> Result<GenerateOutput> {
    cfg.validate()?;
    opts.ensure_dir()?;
    let g = &cfg.generate;
    if g.n_series == 0 {
        log::warn!("n_series = 0: writing an empty training set");
    }
    let mut files = BTreeMap::new();
    let mut write = |name: &str, n: usize, tag: u64| -> Result<PathBuf> {
        let seed = seeds::derive(cfg.seed, &[tag]);
        let series = generate_dataset(n, g.length_lt, seed, &cfg.mfe, &g.dataset, opts.exec)?;
        let file = DatasetFile {
            seed,
            length_lt: g.length_lt,
            params: cfg.mfe.clone(),
            series,
        };
        let path = opts.path(name);
        file.save(&path)?;
        files.insert(name.to_string(), sha256_file(&path)?);
        log::info!("wrote {} ({n} series)", path.display());
        Ok(path)
    };
    let train = write("train.json", g.n_series, streams::TRAIN_DATA)?;
    let validation = write("validation.json", g.validation_series, streams::VALIDATION_DATA)?;
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        version: 1,
        config_hash: cfg.hash()?,
        seed: cfg.seed,
        n_series: g.n_series,
        validation_series: g.validation_series,
        length_lt: g.length_lt,
        files,
    };
    let path = opts.path("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(GenerateOutput {
        train,
        validation,
        manifest,
    })
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub model_path: PathBuf,
    pub n_samples: usize,
    pub relative_residual: f64,
    /// One-step relative errors on the validation series, sorted.
    pub validation_errors: Vec<f64>,
}

impl TrainOutput {
    pub fn median_error(&self) -> Option<f64> {
        let e = &self.validation_errors;
        (!e.is_empty()).then(|| e[e.len() / 2])
    }
}

fn load_dataset(path: &Path) -> Result<DatasetFile> {
    if !path.exists() {
        return Err(Error::Config(format!("dataset {} does not exist", path.display())));
    }
    DatasetFile::load(path)
}

fn build_model(cfg: &RunConfig, train: &DatasetFile) -> Result<EsnModel> {
    let mut params = cfg.esn.clone();
    if cfg.train.auto_input_scaling {
        params = params.with_input_scaling_from(&train.series);
    }
    EsnModel::build(params, train.params.reynolds.clone())
}

/// Trains the network and writes `model.json` plus `train_report.csv`.
pub fn cmd_train(cfg: &RunConfig, opts: &Options, dataset: &Path, validation: Option<&Path>) -> Result<TrainOutput> {
    cfg.validate()?;
    let train = load_dataset(dataset)?;
    let mut model = build_model(cfg, &train)?;
    let report = model.train(&train.series)?;
    opts.ensure_dir()?;
    let model_path = opts.path("model.json");
    model.save(&model_path)?;

    let mut errors = match validation {
        Some(p) => model.one_step_errors(&load_dataset(p)?.series)?,
        None => Vec::new(),
    };
    errors.sort_by(f64::total_cmp);
    let out = TrainOutput {
        model_path,
        n_samples: report.n_samples,
        relative_residual: report.relative_residual,
        validation_errors: errors,
    };
    let e = &out.validation_errors;
    let quantile = |q: f64| -> String {
        if e.is_empty() {
            String::new()
        } else {
            num(e[((e.len() - 1) as f64 * q).round() as usize])
        }
    };
    let mean = if e.is_empty() {
        String::new()
    } else {
        num(e.iter().sum::<f64>() / e.len() as f64)
    };
    let rows = vec![
        vec!["n_samples".into(), out.n_samples.to_string()],
        vec!["relative_residual".into(), num(out.relative_residual)],
        vec!["validation_pairs".into(), e.len().to_string()],
        vec!["one_step_error_median".into(), quantile(0.5)],
        vec!["one_step_error_mean".into(), mean],
        vec!["one_step_error_p90".into(), quantile(0.9)],
    ];
    write_csv(&opts.path("train_report.csv"), &["metric", "value"], rows)?;
    Ok(out)
}

fn load_model(path: Option<&Path>) -> Result<Arc<dyn Surrogate>> {
    let path = path.ok_or_else(|| Error::Config("this strategy needs --model".into()))?;
    if !path.exists() {
        return Err(Error::Config(format!("model {} does not exist", path.display())));
    }
    Ok(Arc::new(EsnModel::load(path)?))
}

fn spec_for(
    kind: ControllerKind,
    cfg: &RunConfig,
    model: &mut Option<Arc<dyn Surrogate>>,
    model_path: Option<&Path>,
) -> Result<ControllerSpec> {
    let mut need_model = || -> Result<Arc<dyn Surrogate>> {
        if model.is_none() {
            *model = Some(load_model(model_path)?);
        }
        Ok(model.clone().expect("just loaded"))
    };
    let h = cfg.horizon.clone();
    let mut spec = match kind {
        ControllerKind::Nc => ControllerSpec::nc(),
        ControllerKind::Ac => ControllerSpec::ac(),
        ControllerKind::PidDirect => ControllerSpec::pid(cfg.pid.clone()),
        ControllerKind::PEsn => ControllerSpec::p_esn(need_model()?, cfg.p_esn.clone(), h.clone()),
        ControllerKind::LitThreshold => ControllerSpec::lit(need_model()?, h.clone()),
        ControllerKind::Mpc => ControllerSpec::mpc(need_model()?, h.clone()),
    };
    spec.horizon = Some(h);
    Ok(spec)
}

#[derive(Clone, Debug)]
pub struct TuneOutput {
    pub history: Vec<EvalRecord>,
    pub best: usize,
    /// TOML fragment with the tuned section, ready to merge into a config.
    pub tuned_toml: String,
}

fn history_rows(space: &SearchSpace, history: &[EvalRecord], timings: bool) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header: Vec<String> = vec!["eval".into()];
    header.extend(space.names().map(String::from));
    header.extend(["objective", "noise_est", "seed", "failed"].map(String::from));
    if timings {
        header.push("wall_seconds".into());
    }
    let rows = history
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = vec![i.to_string()];
            row.extend(r.point.iter().map(|&v| num(v)));
            row.extend([num(r.objective), num(r.noise_est), r.seed.to_string(), r.failed.to_string()]);
            if timings {
                row.push(num(r.wall_seconds));
            }
            row
        })
        .collect();
    (header, rows)
}

/// Tunes the configured target and writes `tuning_history.csv` and
/// `tuned.toml`.
pub fn cmd_tune(
    cfg: &RunConfig,
    opts: &Options,
    model_path: Option<&Path>,
    dataset: Option<&Path>,
    validation: Option<&Path>,
) -> Result<TuneOutput> {
    cfg.validate()?;
    let space = cfg.tune.search_space()?;
    let t = &cfg.tune;
    let opt_seed = seeds::derive(cfg.seed, &[streams::OPTIMIZER]);
    let (result, tuned_toml) = match t.target {
        TuneTarget::Esn => {
            let train = load_dataset(dataset.ok_or_else(|| Error::Config("ESN tuning needs --dataset".into()))?)?;
            let val = load_dataset(
                validation.ok_or_else(|| Error::Config("ESN tuning needs --validation".into()))?,
            )?;
            let base = build_model(cfg, &train)?.params().clone();
            let out = tune_esn(&base, &train.params.reynolds, &space, &train.series, &val.series, t.budget, opt_seed, t.method)?;
            let mut esn = cfg.esn.clone();
            esn.sigma_in = out.best.sigma_in;
            esn.sigma_c = out.best.sigma_c;
            esn.ridge_lambda = out.best.ridge_lambda;
            esn.rho = out.best.rho;
            esn.density = out.best.density;
            let text = toml_section("esn", &esn)?;
            (out.result, text)
        }
        TuneTarget::PEsn | TuneTarget::Pid => {
            let kind = if t.target == TuneTarget::PEsn {
                ControllerKind::PEsn
            } else {
                ControllerKind::PidDirect
            };
            let mut model = None;
            let template = spec_for(kind, cfg, &mut model, model_path)?;
            let integ = Integrator::new(cfg.mfe.clone())?;
            let ics = sample_initial_states(
                t.n_val_episodes,
                seeds::derive(cfg.seed, &[streams::TUNING_EPISODES]),
                &cfg.mfe,
                &cfg.generate.dataset,
                cfg.reward.k_e,
                opts.exec,
            )?;
            let episode = EpisodeConfig {
                length_lt: t.length_lt,
                reward: cfg.reward.clone(),
                timed: false,
            };
            let out = tune_controller(&template, &space, &integ, &ics, &episode, t.budget, opt_seed, t.method, opts.exec)?;
            let gains = out.best.gains.clone().unwrap_or_default();
            let section = if kind == ControllerKind::PEsn { "p_esn" } else { "pid" };
            (out.result, toml_section(section, &gains)?)
        }
    };
    opts.ensure_dir()?;
    let (header, rows) = history_rows(&space, &result.history, opts.timings);
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(&opts.path("tuning_history.csv"), &header, rows)?;
    let path = opts.path("tuned.toml");
    fs::write(&path, &tuned_toml).map_err(|e| Error::io(&path, e))?;
    Ok(TuneOutput {
        best: result.best,
        history: result.history,
        tuned_toml,
    })
}

fn toml_section<T: Serialize>(name: &str, value: &T) -> Result<String> {
    let mut table = toml::Table::new();
    let inner = toml::Value::try_from(value).map_err(|e| Error::Config(e.to_string()))?;
    table.insert(name.to_string(), inner);
    toml::to_string(&table).map_err(|e| Error::Config(e.to_string()))
}

/// Overrides config sections with those of a `tuned.toml` fragment.
pub fn merge_tuned(cfg: &RunConfig, text: &str) -> Result<RunConfig> {
    let mut base = toml::Value::try_from(cfg).map_err(|e| Error::Config(e.to_string()))?;
    let patch: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let table = base.as_table_mut().expect("config serialises to a table");
    for (k, v) in patch {
        if !table.contains_key(&k) {
            return Err(Error::Config(format!("unknown section `{k}` in tuned parameters")));
        }
        table.insert(k, v);
    }
    let merged: RunConfig = base.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    merged.validate()?;
    Ok(merged)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StrategySummary {
    pub kind: ControllerKind,
    pub n_episodes: usize,
    pub n_failed: usize,
    pub summary: Option<BatchSummary>,
}

#[derive(Clone, Debug)]
pub struct EvaluateOutput {
    pub summaries: Vec<StrategySummary>,
    /// Per strategy, per episode metrics (or the failure message), in
    /// initial-state order.
    pub episodes: Vec<(ControllerKind, Vec<std::result::Result<EpisodeMetrics, String>>)>,
    pub failure_exceeded: bool,
}

impl EvaluateOutput {
    pub fn summary(&self, kind: ControllerKind) -> Option<&StrategySummary> {
        self.summaries.iter().find(|s| s.kind == kind)
    }

    pub fn metrics(&self, kind: ControllerKind) -> Option<&[std::result::Result<EpisodeMetrics, String>]> {
        self.episodes.iter().find(|(k, _)| *k == kind).map(|(_, m)| m.as_slice())
    }
}

/// Evaluates every configured strategy on one shared set of initial
/// states. Writes `episodes.csv`, `summary.csv` and `decisions.csv`, and
/// `trajectories_<strategy>.json` when `save_trajectories` is set.
pub fn cmd_evaluate(
    cfg: &RunConfig,
    opts: &Options,
    model_path: Option<&Path>,
    save_trajectories: bool,
) -> Result<EvaluateOutput> {
    cfg.validate()?;
    let ev = &cfg.evaluate;
    if ev.strategies.is_empty() {
        return Err(Error::Config("no strategies to evaluate".into()));
    }
    let mut model = None;
    let specs = ev
        .strategies
        .iter()
        .map(|&k| spec_for(k, cfg, &mut model, model_path))
        .collect::<Result<Vec<_>>>()?;

    let integ = Integrator::new(cfg.mfe.clone())?;
    let ics: Vec<StateVector> = sample_initial_states(
        ev.n_episodes,
        seeds::derive(cfg.seed, &[streams::EPISODES]),
        &cfg.mfe,
        &cfg.generate.dataset,
        cfg.reward.k_e,
        opts.exec,
    )?;
    let episode_cfg = EpisodeConfig {
        length_lt: ev.length_lt,
        reward: cfg.reward.clone(),
        timed: opts.timings,
    };
    opts.ensure_dir()?;

    let mut episode_rows = Vec::new();
    let mut decision_rows = Vec::new();
    let mut summaries = Vec::new();
    let mut episodes = Vec::new();
    let mut failure_exceeded = false;
    for spec in &specs {
        log::info!("evaluating {} on {} episodes", spec.kind, ics.len());
        let results = run_batch(&integ, &ics, spec, &episode_cfg, opts.exec);
        let name = spec.kind.as_str();
        let mut ok_metrics = Vec::new();
        let mut per_episode = Vec::new();
        let mut trajectories = Vec::new();
        for (i, r) in results.into_iter().enumerate() {
            match r {
                Ok(EpisodeResult {
                    trajectory,
                    metrics,
                    decisions,
                }) => {
                    let m = &metrics;
                    episode_rows.push(vec![
                        name.into(),
                        i.to_string(),
                        "ok".into(),
                        num(m.avg_reward),
                        num(m.p_event),
                        num(m.p_control),
                        m.n_steps.to_string(),
                        m.n_event.to_string(),
                        m.n_control.to_string(),
                    ]);
                    for d in &decisions {
                        let mut row = vec![
                            name.into(),
                            i.to_string(),
                            "step".into(),
                            num(d.time),
                            num(d.k),
                            num(d.re),
                            num(d.reward),
                            d.surrogate_steps.to_string(),
                            String::new(),
                            String::new(),
                        ];
                        if opts.timings {
                            row.push(d.wall_seconds.map(num).unwrap_or_default());
                        }
                        decision_rows.push(row);
                    }
                    let mut row = vec![
                        name.into(),
                        i.to_string(),
                        "summary".into(),
                        num(trajectory.times.last().copied().unwrap_or(0.0)),
                        String::new(),
                        String::new(),
                        num(m.avg_reward),
                        decisions.iter().map(|d| d.surrogate_steps).sum::<usize>().to_string(),
                        num(m.p_event),
                        num(m.p_control),
                    ];
                    if opts.timings {
                        row.push(num(decisions.iter().filter_map(|d| d.wall_seconds).sum()));
                    }
                    decision_rows.push(row);
                    if save_trajectories {
                        trajectories.push(trajectory);
                    }
                    ok_metrics.push(metrics.clone());
                    per_episode.push(Ok(metrics));
                }
                Err(e) => {
                    log::warn!("{name}: {e}");
                    let msg = e.to_string();
                    episode_rows.push(vec![
                        name.into(),
                        i.to_string(),
                        format!("failed: {msg}"),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                    ]);
                    per_episode.push(Err(msg));
                }
            }
        }
        let n_failed = per_episode.iter().filter(|r| r.is_err()).count();
        if ics.is_empty() || n_failed as f64 > ev.max_failure_fraction * ics.len() as f64 {
            failure_exceeded |= n_failed > 0;
        }
        summaries.push(StrategySummary {
            kind: spec.kind,
            n_episodes: ics.len(),
            n_failed,
            summary: summarize(&ok_metrics),
        });
        episodes.push((spec.kind, per_episode));
        if save_trajectories {
            let file = DatasetFile {
                seed: cfg.seed,
                length_lt: ev.length_lt,
                params: cfg.mfe.clone(),
                series: trajectories,
            };
            file.save(&opts.path(&format!("trajectories_{name}.json")))?;
        }
    }

    write_csv(
        &opts.path("episodes.csv"),
        &["strategy", "episode", "status", "avg_reward", "p_event", "p_control", "n_steps", "n_event", "n_control"],
        episode_rows,
    )?;
    let mut header = vec![
        "strategy", "episode", "row", "time", "k", "re", "reward", "latency_steps", "p_event", "p_control",
    ];
    if opts.timings {
        header.push("wall_seconds");
    }
    write_csv(&opts.path("decisions.csv"), &header, decision_rows)?;
    let scale = ev.scale_label();
    let summary_rows = summaries.iter().map(|s| {
        let mut row = vec![s.kind.as_str().to_string(), s.n_episodes.to_string(), s.n_failed.to_string()];
        match &s.summary {
            Some(b) => row.extend(
                [b.mean_reward, b.se_reward, b.p_event, b.se_event, b.p_control, b.se_control].map(num),
            ),
            None => row.extend(std::iter::repeat_n(String::new(), 6)),
        }
        row.push(scale.into());
        row
    });
    write_csv(
        &opts.path("summary.csv"),
        &[
            "strategy",
            "n_episodes",
            "n_failed",
            "mean_reward",
            "se_reward",
            "p_event",
            "se_p_event",
            "p_control",
            "se_p_control",
            "scale",
        ],
        summary_rows,
    )?;
    Ok(EvaluateOutput {
        summaries,
        episodes,
        failure_exceeded,
    })
}

/// Normalised histogram of `k` over `[lower, upper]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub density: Vec<f64>,
    /// Samples outside the range, left out of the normalisation.
    pub n_outside: usize,
}

pub fn histogram(values: impl IntoIterator<Item = f64>, bins: usize, lower: f64, upper: f64) -> Result<Histogram> {
    if bins == 0 || !(lower < upper) {
        return Err(Error::InvalidParameter("histogram needs bins >= 1 and lower < upper".into()));
    }
    let width = (upper - lower) / bins as f64;
    let mut counts = vec![0usize; bins];
    let mut n_outside = 0;
    for v in values {
        if !(v >= lower && v <= upper) {
            n_outside += 1;
            continue;
        }
        let i = (((v - lower) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    let n_in: usize = counts.iter().sum();
    let density = counts
        .iter()
        .map(|&c| if n_in == 0 { 0.0 } else { c as f64 / (n_in as f64 * width) })
        .collect();
    let edges = (0..=bins).map(|i| lower + i as f64 * width).collect();
    Ok(Histogram {
        edges,
        counts,
        density,
        n_outside,
    })
}

/// Histogram of the energy in trajectory files; writes `pdf.csv`.
pub fn cmd_pdf(cfg: &RunConfig, opts: &Options, files: &[PathBuf]) -> Result<Histogram> {
    cfg.validate()?;
    if files.is_empty() {
        return Err(Error::Config("pdf needs at least one trajectory file".into()));
    }
    let mut values = Vec::new();
    for f in files {
        let d = load_dataset(f)?;
        values.extend(d.series.iter().flat_map(|s| s.k.iter().copied()));
    }
    let h = histogram(values, cfg.pdf.bins, cfg.pdf.lower, cfg.pdf.upper)?;
    if h.n_outside > 0 {
        log::warn!("{} samples fall outside [{}, {}]", h.n_outside, cfg.pdf.lower, cfg.pdf.upper);
    }
    opts.ensure_dir()?;
    let rows = (0..h.counts.len()).map(|i| {
        vec![num(h.edges[i]), num(h.edges[i + 1]), h.counts[i].to_string(), num(h.density[i])]
    });
    write_csv(&opts.path("pdf.csv"), &["k_lo", "k_hi", "count", "density"], rows)?;
    Ok(h)
}
