use super::{optimize, optimize_grid, Evaluation, Method, OptimizeResult, SearchSpace};
use crate::control::{run_batch, ControllerKind, ControllerSpec, EpisodeConfig, PidGains};
use crate::dynsys::{ActionSet, Integrator, StateVector, Trajectory};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::reservoir::{EsnModel, EsnParams};
use crate::reward::summarize;

#[derive(Clone, Debug)]
pub struct TuneResult<T> {
    pub best: T,
    pub result: OptimizeResult,
}

fn run_search<F>(
    objective: F,
    space: &SearchSpace,
    budget: usize,
    seed: u64,
    method: Method,
) -> Result<OptimizeResult>
where
    F: Fn(&[f64]) -> Result<Evaluation>,
{
    match method {
        Method::Bayesian => optimize(objective, space, budget, seed),
        Method::Grid => {
            let free = space.dims.iter().filter(|d| !d.is_pinned()).count().max(1);
            let per_dim = ((budget.max(1) as f64).powf(1.0 / free as f64) + 1e-9).floor() as usize;
            optimize_grid(objective, &space.grid(per_dim.max(1)), seed)
        }
    }
}

/// Copies the named gains from `point` into `gains`.
pub fn apply_gains(gains: &PidGains, space: &SearchSpace, point: &[f64]) -> Result<PidGains> {
    let mut g = gains.clone();
    for (name, &v) in space.names().zip(point) {
        let slot = match name {
            "k_p" => &mut g.k_p,
            "k_d" => &mut g.k_d,
            "k_i" => &mut g.k_i,
            "tau_i" => &mut g.tau_i,
            "k_c" => &mut g.k_c,
            other => return Err(Error::Config(format!("`{other}` is not a controller gain"))),
        };
        *slot = v;
    }
    Ok(g)
}

/// Tunes the gains of a PID or P_ESN controller for the mean episode reward
/// on a fixed validation set of initial states. Every candidate sees the
/// same states, so re-running the best point reproduces its objective.
#[allow(clippy::too_many_arguments)]
pub fn tune_controller(
    template: &ControllerSpec,
    space: &SearchSpace,
    integrator: &Integrator,
    validation: &[StateVector],
    episode: &EpisodeConfig,
    budget: usize,
    seed: u64,
    method: Method,
    exec: Execution,
) -> Result<TuneResult<ControllerSpec>> {
    if !matches!(template.kind, ControllerKind::PidDirect | ControllerKind::PEsn) {
        return Err(Error::Config(format!("{} has no tunable gains", template.kind)));
    }
    if validation.is_empty() {
        return Err(Error::InvalidParameter("empty validation set".into()));
    }
    space.validate()?;
    let base = template.gains.clone().unwrap_or_default();
    apply_gains(&base, space, &vec![0.0; space.len()])?;

    let with_point = |point: &[f64]| -> Result<ControllerSpec> {
        let mut spec = template.clone();
        spec.gains = Some(apply_gains(&base, space, point)?);
        Ok(spec)
    };
    let objective = |point: &[f64]| -> Result<Evaluation> {
        let spec = with_point(point)?;
        let metrics = run_batch(integrator, validation, &spec, episode, exec)
            .into_iter()
            .map(|r| r.map(|e| e.metrics))
            .collect::<Result<Vec<_>>>()?;
        let s = summarize(&metrics).expect("validation set is non-empty");
        Ok(Evaluation {
            value: s.mean_reward,
            noise_est: s.se_reward,
        })
    };
    let result = run_search(objective, space, budget, seed, method)?;
    let best = with_point(&result.best_record().point)?;
    Ok(TuneResult { best, result })
}

/// Copies the named network settings from `point` into `params`.
pub fn apply_esn(params: &EsnParams, space: &SearchSpace, point: &[f64]) -> Result<EsnParams> {
    let mut p = params.clone();
    for (name, &v) in space.names().zip(point) {
        match name {
            "sigma_in" => p.sigma_in = v,
            "sigma_c" => p.sigma_c = v,
            "ridge_lambda" => p.ridge_lambda = v,
            "rho" => p.rho = v,
            "density" => p.density = v,
            other => return Err(Error::Config(format!("`{other}` is not a network setting"))),
        }
    }
    p.validate()?;
    Ok(p)
}

/// Tunes network settings for the median one-step relative error on the
/// validation series (the objective is its negative).
#[allow(clippy::too_many_arguments)]
pub fn tune_esn(
    params: &EsnParams,
    reynolds: &ActionSet,
    space: &SearchSpace,
    train: &[Trajectory],
    validation: &[Trajectory],
    budget: usize,
    seed: u64,
    method: Method,
) -> Result<TuneResult<EsnParams>> {
    space.validate()?;
    let objective = |point: &[f64]| -> Result<Evaluation> {
        let p = apply_esn(params, space, point)?;
        let mut model = EsnModel::build(p, reynolds.clone())?;
        model.train(train)?;
        let mut errs = model.one_step_errors(validation)?;
        if errs.is_empty() {
            return Err(Error::InvalidParameter("no validation pairs".into()));
        }
        errs.sort_by(f64::total_cmp);
        Ok((-errs[errs.len() / 2]).into())
    };
    let result = run_search(objective, space, budget, seed, method)?;
    let best = apply_esn(params, space, &result.best_record().point)?;
    Ok(TuneResult { best, result })
}
