//! Controllers and the closed-loop episode runner.
//!
//! Every strategy is a pure decision function from the observed state (and,
//! for the direct PID, the measured energy history) to one Reynolds level,
//! which is then held for one control interval.

mod episode;
mod mpc;
mod pid;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use episode::{run_batch, run_episode, DecisionRecord, EpisodeConfig, EpisodeResult};
pub use mpc::{mpc_decide, mpc_plan, MpcPlan};
pub use pid::pid_signal;

use crate::dynsys::{kinetic_energy, lt_to_time, ActionSet, ControlAction, StateVector};
use crate::error::{Error, Result};
use crate::reservoir::Surrogate;
use crate::reward::RewardConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PidGains {
    pub k_p: f64,
    pub k_d: f64,
    pub k_i: f64,
    /// Integration window, time units.
    pub tau_i: f64,
    /// Activation threshold on the control signal.
    pub k_c: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        PidGains {
            k_p: 1.0,
            k_d: 0.0,
            k_i: 0.0,
            tau_i: 10.0,
            k_c: 0.1,
        }
    }
}

impl PidGains {
    /// Pure proportional law with threshold `k_c`.
    pub fn proportional(k_p: f64, k_c: f64) -> Self {
        PidGains {
            k_p,
            k_d: 0.0,
            k_i: 0.0,
            tau_i: 0.0,
            k_c,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.k_p, self.k_d, self.k_i, self.tau_i, self.k_c];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite PID gains {self:?}")));
        }
        if self.k_i != 0.0 && !(self.tau_i > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tau_i = {} must be > 0 when k_i != 0",
                self.tau_i
            )));
        }
        Ok(())
    }
}

/// Prediction and optimisation windows. Horizons are in Lyapunov times,
/// the control interval in time units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HorizonConfig {
    pub tau_hor: f64,
    pub tau_opt: f64,
    pub control_interval: f64,
}

impl Default for HorizonConfig {
    fn default() -> Self {
        HorizonConfig {
            tau_hor: 4.0,
            tau_opt: 1.0,
            control_interval: 10.0,
        }
    }
}

impl HorizonConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.control_interval.is_finite() && self.control_interval > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "control_interval = {} must be > 0",
                self.control_interval
            )));
        }
        if !(self.tau_hor.is_finite() && self.tau_hor > 0.0) {
            return Err(Error::InvalidParameter(format!("tau_hor = {} must be > 0", self.tau_hor)));
        }
        if !(self.tau_opt >= 0.0 && self.tau_opt <= self.tau_hor) {
            return Err(Error::InvalidParameter(format!(
                "tau_opt = {} must lie in [0, tau_hor = {}]",
                self.tau_opt, self.tau_hor
            )));
        }
        Ok(())
    }

    /// Prediction steps of length `dt` covering `tau_hor`.
    pub fn horizon_steps(&self, dt: f64) -> usize {
        (lt_to_time(self.tau_hor) / dt).round() as usize
    }

    /// Prediction steps per control interval.
    pub fn slot_steps(&self, dt: f64) -> usize {
        ((self.control_interval / dt).round() as usize).max(1)
    }

    /// Number of optimised control slots, `floor(tau_opt / control_interval)`.
    pub fn n_slots(&self) -> usize {
        (lt_to_time(self.tau_opt) / self.control_interval + 1e-9).floor() as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ControllerKind {
    #[serde(rename = "NC")]
    Nc,
    #[serde(rename = "AC")]
    Ac,
    #[serde(rename = "PID")]
    PidDirect,
    #[serde(rename = "P_ESN")]
    PEsn,
    #[serde(rename = "MPC")]
    Mpc,
    #[serde(rename = "LIT")]
    LitThreshold,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 6] = [
        ControllerKind::Nc,
        ControllerKind::Ac,
        ControllerKind::LitThreshold,
        ControllerKind::PidDirect,
        ControllerKind::PEsn,
        ControllerKind::Mpc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ControllerKind::Nc => "NC",
            ControllerKind::Ac => "AC",
            ControllerKind::PidDirect => "PID",
            ControllerKind::PEsn => "P_ESN",
            ControllerKind::Mpc => "MPC",
            ControllerKind::LitThreshold => "LIT",
        }
    }

    pub fn needs_model(self) -> bool {
        matches!(self, ControllerKind::PEsn | ControllerKind::Mpc | ControllerKind::LitThreshold)
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ControllerKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown controller `{s}`")))
    }
}

/// A strategy plus everything it needs to decide.
#[derive(Clone)]
pub struct ControllerSpec {
    pub kind: ControllerKind,
    pub gains: Option<PidGains>,
    pub horizon: Option<HorizonConfig>,
    pub model: Option<Arc<dyn Surrogate>>,
}

impl fmt::Debug for ControllerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControllerSpec")
            .field("kind", &self.kind)
            .field("gains", &self.gains)
            .field("horizon", &self.horizon)
            .field("model", &self.model.as_ref().map(|_| "<surrogate>"))
            .finish()
    }
}

impl ControllerSpec {
    fn bare(kind: ControllerKind) -> Self {
        ControllerSpec {
            kind,
            gains: None,
            horizon: None,
            model: None,
        }
    }

    pub fn nc() -> Self {
        Self::bare(ControllerKind::Nc)
    }

    pub fn ac() -> Self {
        Self::bare(ControllerKind::Ac)
    }

    pub fn pid(gains: PidGains) -> Self {
        ControllerSpec {
            gains: Some(gains),
            ..Self::bare(ControllerKind::PidDirect)
        }
    }

    pub fn p_esn(model: Arc<dyn Surrogate>, gains: PidGains, horizon: HorizonConfig) -> Self {
        ControllerSpec {
            kind: ControllerKind::PEsn,
            gains: Some(gains),
            horizon: Some(horizon),
            model: Some(model),
        }
    }

    pub fn lit(model: Arc<dyn Surrogate>, horizon: HorizonConfig) -> Self {
        ControllerSpec {
            kind: ControllerKind::LitThreshold,
            gains: None,
            horizon: Some(horizon),
            model: Some(model),
        }
    }

    pub fn mpc(model: Arc<dyn Surrogate>, horizon: HorizonConfig) -> Self {
        ControllerSpec {
            kind: ControllerKind::Mpc,
            gains: None,
            horizon: Some(horizon),
            model: Some(model),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind.needs_model() && self.model.is_none() {
            return Err(Error::InvalidParameter(format!("{} requires a trained model", self.kind)));
        }
        if matches!(self.kind, ControllerKind::PidDirect | ControllerKind::PEsn) {
            self.gains
                .as_ref()
                .ok_or_else(|| Error::InvalidParameter(format!("{} requires PID gains", self.kind)))?
                .validate()?;
        }
        self.horizon().validate()
    }

    pub fn horizon(&self) -> HorizonConfig {
        self.horizon.clone().unwrap_or_default()
    }

    /// Chooses the action to hold over the next control interval.
    pub fn decide(&self, obs: &Observation<'_>) -> Result<Decision> {
        let immediate = |action| Decision {
            action,
            surrogate_steps: 0,
        };
        let model = || self.model.as_deref().ok_or(Error::NotTrained);
        let gains = || {
            self.gains
                .as_ref()
                .ok_or_else(|| Error::InvalidParameter(format!("{} requires PID gains", self.kind)))
        };
        match self.kind {
            ControllerKind::Nc => Ok(immediate(obs.actions.base())),
            ControllerKind::Ac => Ok(immediate(obs.actions.ctrl())),
            ControllerKind::PidDirect => {
                let g = gains()?;
                let c = pid_signal(obs.k_history, obs.sample_dt, g)?;
                let a = if c > g.k_c { obs.actions.ctrl() } else { obs.actions.base() };
                Ok(immediate(a))
            }
            ControllerKind::PEsn => p_esn_decide(model()?, obs.q, gains()?, &self.horizon(), obs.actions),
            ControllerKind::LitThreshold => {
                lit_threshold_decide(model()?, obs.q, &self.horizon(), obs.actions, obs.reward)
            }
            ControllerKind::Mpc => mpc_decide(model()?, obs.q, &self.horizon(), obs.actions, obs.reward),
        }
    }
}

/// What a controller sees at a decision time.
#[derive(Clone, Copy, Debug)]
pub struct Observation<'a> {
    pub q: &'a StateVector,
    /// Measured energy at every sample up to and including now.
    pub k_history: &'a [f64],
    pub sample_dt: f64,
    pub actions: &'a ActionSet,
    pub reward: &'a RewardConfig,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decision {
    pub action: ControlAction,
    /// Surrogate evaluations spent on this decision.
    pub surrogate_steps: usize,
}

/// Threshold test on the largest energy of the uncontrolled prediction.
/// Returns whether to actuate and the steps spent.
fn predicted_peak_exceeds(
    model: &dyn Surrogate,
    q: &StateVector,
    k_p: f64,
    k_c: f64,
    horizon: &HorizonConfig,
    base: ControlAction,
) -> (bool, usize) {
    let exceeds = |k: f64| k_p * k > k_c;
    let mut k_max = kinetic_energy(q);
    // With k_p > 0 the outcome is settled as soon as one sample exceeds.
    let early = k_p > 0.0;
    if early && exceeds(k_max) {
        return (true, 0);
    }
    let n = horizon.horizon_steps(model.dt());
    let mut x = *q;
    for step in 1..=n {
        match model.predict(&x, base) {
            Some(next) => {
                x = next;
                let k = kinetic_energy(&x);
                k_max = k_max.max(k);
                if early && exceeds(k) {
                    return (true, step);
                }
            }
            None => return (true, step),
        }
    }
    (exceeds(k_max), n)
}

/// Proportional control on the predicted uncontrolled peak energy:
/// actuate when `k_p · max k > k_c`, where the maximum runs over the
/// current state and a `tau_hor` uncontrolled prediction. A diverged
/// prediction actuates.
pub fn p_esn_decide(
    model: &dyn Surrogate,
    q: &StateVector,
    gains: &PidGains,
    horizon: &HorizonConfig,
    actions: &ActionSet,
) -> Result<Decision> {
    let (act, steps) = predicted_peak_exceeds(model, q, gains.k_p, gains.k_c, horizon, actions.base());
    Ok(Decision {
        action: if act { actions.ctrl() } else { actions.base() },
        surrogate_steps: steps,
    })
}

/// Actuates when an event itself is predicted within the horizon.
pub fn lit_threshold_decide(
    model: &dyn Surrogate,
    q: &StateVector,
    horizon: &HorizonConfig,
    actions: &ActionSet,
    rcfg: &RewardConfig,
) -> Result<Decision> {
    p_esn_decide(model, q, &PidGains::proportional(1.0, rcfg.k_e), horizon, actions)
}
