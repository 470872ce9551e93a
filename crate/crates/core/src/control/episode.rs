use std::time::Instant;

use serde::Serialize;

use super::{ControllerSpec, Observation};
use crate::dynsys::{lt_to_time, ControlAction, Integrator, Schedule, StateVector, Trajectory};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::reward::{episode_metrics, metrics_from_steps, EpisodeMetrics, RewardConfig};

/// One controller decision and the samples it governed.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecisionRecord {
    pub time: f64,
    pub k: f64,
    pub re: f64,
    /// Mean step reward over the samples the action was held for.
    pub reward: f64,
    /// Surrogate evaluations spent deciding.
    pub surrogate_steps: usize,
    /// Wall-clock seconds spent deciding, when timing was requested.
    pub wall_seconds: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct EpisodeResult {
    pub trajectory: Trajectory,
    pub metrics: EpisodeMetrics,
    pub decisions: Vec<DecisionRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeConfig {
    pub length_lt: f64,
    pub reward: RewardConfig,
    pub timed: bool,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            length_lt: 20.0,
            reward: RewardConfig::default(),
            timed: false,
        }
    }
}

/// Closed-loop episode: the controller observes the true state every
/// control interval and its action is held until the next decision.
pub fn run_episode(
    integrator: &Integrator,
    q0: &StateVector,
    spec: &ControllerSpec,
    cfg: &EpisodeConfig,
) -> Result<EpisodeResult> {
    run(integrator, q0, spec, cfg).map_err(|(_, e)| e)
}

/// Runs one episode per initial state. Results come back in input order;
/// failures carry the episode index and failure time.
pub fn run_batch(
    integrator: &Integrator,
    initial: &[StateVector],
    spec: &ControllerSpec,
    cfg: &EpisodeConfig,
    exec: Execution,
) -> Vec<Result<EpisodeResult>> {
    exec::map_indexed(exec, initial.len(), |i| {
        run(integrator, &initial[i], spec, cfg).map_err(|(time, e)| Error::Episode {
            episode: i,
            time,
            source: Box::new(e),
        })
    })
}

fn run(
    integrator: &Integrator,
    q0: &StateVector,
    spec: &ControllerSpec,
    cfg: &EpisodeConfig,
) -> std::result::Result<EpisodeResult, (f64, Error)> {
    let params = integrator.params();
    let at_start = |e| (0.0, e);
    spec.validate().map_err(at_start)?;
    cfg.reward.validate().map_err(at_start)?;
    if !(cfg.length_lt.is_finite() && cfg.length_lt > 0.0) {
        return Err(at_start(Error::InvalidParameter(format!(
            "episode length {} LT must be > 0",
            cfg.length_lt
        ))));
    }

    let dt = params.sample_dt;
    let actions = &params.reynolds;
    let n_total = params.samples_in(lt_to_time(cfg.length_lt)).max(1);
    let interval = params.samples_in(spec.horizon().control_interval).max(1);

    let mut traj = Trajectory::with_capacity(n_total + 1);
    traj.push(0.0, *q0, actions.base());
    let mut decisions = Vec::with_capacity(n_total / interval + 1);
    let mut spans = Vec::with_capacity(decisions.capacity());

    let mut s = 0;
    while s < n_total {
        let now = s as f64 * dt;
        let q = traj.states[s];
        let clock = cfg.timed.then(Instant::now);
        let obs = Observation {
            q: &q,
            k_history: &traj.k[..=s],
            sample_dt: dt,
            actions,
            reward: &cfg.reward,
        };
        let d = spec.decide(&obs).map_err(|e| (now, e))?;
        let wall_seconds = clock.map(|c| c.elapsed().as_secs_f64());
        traj.actions[s] = d.action;

        let m = interval.min(n_total - s);
        let chunk = integrator
            .integrate(&q, &Schedule::constant(d.action), m as f64 * dt)
            .map_err(|e| match e {
                Error::BlowUp {
                    time,
                    mode,
                    value,
                    bound,
                } => (
                    now + time,
                    Error::BlowUp {
                        time: now + time,
                        mode,
                        value,
                        bound,
                    },
                ),
                other => (now, other),
            })?;
        for j in 1..=m {
            traj.push((s + j) as f64 * dt, chunk.states[j], d.action);
        }
        decisions.push(DecisionRecord {
            time: now,
            k: traj.k[s],
            re: d.action.re,
            reward: 0.0,
            surrogate_steps: d.surrogate_steps,
            wall_seconds,
        });
        spans.push((s, s + m));
        s += m;
    }
    // The final sample belongs to the last decision.
    if let Some(last) = spans.last_mut() {
        last.1 = n_total + 1;
    }
    let end = n_total as f64 * dt;
    for (rec, &(a, b)) in decisions.iter_mut().zip(&spans) {
        let steps = (a..b).map(|i| (traj.k[i], actions.is_controlled(traj.actions[i])));
        rec.reward = metrics_from_steps(steps, &cfg.reward).map_err(|e| (end, e))?.avg_reward;
    }
    let metrics = episode_metrics(&traj, actions, &cfg.reward).map_err(|e| (end, e))?;
    Ok(EpisodeResult {
        trajectory: traj,
        metrics,
        decisions,
    })
}

impl DecisionRecord {
    pub fn action(&self) -> ControlAction {
        ControlAction::new(self.re)
    }
}
