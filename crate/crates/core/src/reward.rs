//! Step rewards and episode-level metrics.
//!
//! Every sample costs `r_event` while the flow is in an extreme event
//! (`k > k_e`, strict) and `r_control` while actuation is on. The two
//! penalties add when both hold. All other samples score zero.

use serde::{Deserialize, Serialize};

use crate::dynsys::{ActionSet, Trajectory};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub k_e: f64,
    pub r_event: f64,
    pub r_control: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            k_e: 0.1,
            r_event: -1.0,
            r_control: -0.15,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_event < self.r_control && self.r_control < 0.0) {
            return Err(Error::InvalidParameter(format!(
                "rewards must satisfy r_event < r_control < 0, got {} and {}",
                self.r_event, self.r_control
            )));
        }
        if !(self.k_e.is_finite() && self.k_e > 0.0) {
            return Err(Error::InvalidParameter(format!("k_e = {} must be > 0", self.k_e)));
        }
        Ok(())
    }

    #[inline]
    pub fn is_event(&self, k: f64) -> bool {
        k > self.k_e
    }

    /// Mean reward of `n_steps` samples with the given event and control
    /// tallies. Used wherever rewards are compared, so that equal tallies
    /// always give bit-identical scores.
    pub fn average_from_counts(&self, n_steps: usize, n_event: usize, n_control: usize) -> f64 {
        if n_steps == 0 {
            return 0.0;
        }
        (self.r_event * n_event as f64 + self.r_control * n_control as f64) / n_steps as f64
    }
}

pub fn step_reward(k: f64, controlled: bool, cfg: &RewardConfig) -> f64 {
    let mut r = 0.0;
    if cfg.is_event(k) {
        r += cfg.r_event;
    }
    if controlled {
        r += cfg.r_control;
    }
    r
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub avg_reward: f64,
    pub p_event: f64,
    pub p_control: f64,
    pub n_steps: usize,
    pub n_event: usize,
    pub n_control: usize,
}

/// Metrics from `(k, controlled)` samples in any order.
pub fn metrics_from_steps(
    steps: impl IntoIterator<Item = (f64, bool)>,
    cfg: &RewardConfig,
) -> Result<EpisodeMetrics> {
    let (mut n, mut n_event, mut n_control) = (0usize, 0usize, 0usize);
    let mut total = 0.0;
    for (k, controlled) in steps {
        n += 1;
        n_event += cfg.is_event(k) as usize;
        n_control += controlled as usize;
        total += step_reward(k, controlled, cfg);
    }
    if n == 0 {
        return Err(Error::InvalidParameter("metrics of an empty trajectory".into()));
    }
    Ok(EpisodeMetrics {
        avg_reward: total / n as f64,
        p_event: n_event as f64 / n as f64,
        p_control: n_control as f64 / n as f64,
        n_steps: n,
        n_event,
        n_control,
    })
}

/// Metrics of a sampled trajectory; a sample counts as controlled when its
/// action differs from the base level of `reynolds`.
pub fn episode_metrics(
    traj: &Trajectory,
    reynolds: &ActionSet,
    cfg: &RewardConfig,
) -> Result<EpisodeMetrics> {
    metrics_from_steps(
        traj.k
            .iter()
            .zip(&traj.actions)
            .map(|(&k, &a)| (k, reynolds.is_controlled(a))),
        cfg,
    )
}

/// Mean and standard errors over a batch of episodes of one strategy.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BatchSummary {
    pub n_episodes: usize,
    pub mean_reward: f64,
    /// Standard error of the per-episode mean reward.
    pub se_reward: f64,
    pub p_event: f64,
    /// Binomial standard error `sqrt(p (1 - p) / N)` over all samples.
    pub se_event: f64,
    pub p_control: f64,
    pub se_control: f64,
}

pub fn summarize(metrics: &[EpisodeMetrics]) -> Option<BatchSummary> {
    if metrics.is_empty() {
        return None;
    }
    let n = metrics.len() as f64;
    let mean_reward = metrics.iter().map(|m| m.avg_reward).sum::<f64>() / n;
    let se_reward = if metrics.len() > 1 {
        let var = metrics
            .iter()
            .map(|m| (m.avg_reward - mean_reward).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    let steps: usize = metrics.iter().map(|m| m.n_steps).sum();
    let events: usize = metrics.iter().map(|m| m.n_event).sum();
    let controls: usize = metrics.iter().map(|m| m.n_control).sum();
    let binomial = |p: f64| (p * (1.0 - p) / steps as f64).sqrt();
    let p_event = events as f64 / steps as f64;
    let p_control = controls as f64 / steps as f64;
    Some(BatchSummary {
        n_episodes: metrics.len(),
        mean_reward,
        se_reward,
        p_event,
        se_event: binomial(p_event),
        p_control,
        se_control: binomial(p_control),
    })
}
