//! Nine-mode shear-flow model with Reynolds-number actuation.
//!
//! The state is the vector of nine modal amplitudes; the laminar profile is
//! `q = (1, 0, ..., 0)`. Control acts by switching the Reynolds number between
//! the levels of an [`ActionSet`].

mod dataset;
mod integrate;
pub mod mfe;

pub use dataset::{
    generate_dataset, sample_initial_states, DatasetConfig, DatasetFile, DATASET_FORMAT,
    DATASET_VERSION,
};
pub use integrate::{Integrator, Schedule};

use std::ops::Index;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_MODES: usize = 9;

/// Leading Lyapunov exponent of the flow at the reference configuration,
/// in inverse time units.
pub const LYAPUNOV_EXPONENT: f64 = 0.0163;

pub fn lt_to_time(lt: f64) -> f64 {
    lt / LYAPUNOV_EXPONENT
}

pub fn time_to_lt(t: f64) -> f64 {
    t * LYAPUNOV_EXPONENT
}

/// Modal amplitudes. Always finite.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateVector([f64; N_MODES]);

impl StateVector {
    pub fn new(q: [f64; N_MODES]) -> Result<Self> {
        if let Some(i) = q.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidState(format!("q[{i}] = {} is not finite", q[i])));
        }
        Ok(StateVector(q))
    }

    pub fn from_slice(q: &[f64]) -> Result<Self> {
        let arr: [f64; N_MODES] = q.try_into().map_err(|_| {
            Error::InvalidState(format!("expected {N_MODES} components, got {}", q.len()))
        })?;
        Self::new(arr)
    }

    pub(crate) fn new_unchecked(q: [f64; N_MODES]) -> Self {
        StateVector(q)
    }

    pub fn zero() -> Self {
        StateVector([0.0; N_MODES])
    }

    /// Laminar fixed point: only the mean-profile mode is excited.
    pub fn laminar() -> Self {
        let mut q = [0.0; N_MODES];
        q[0] = 1.0;
        StateVector(q)
    }

    pub fn as_array(&self) -> &[f64; N_MODES] {
        &self.0
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn kinetic_energy(&self) -> f64 {
        kinetic_energy(self)
    }
}

impl Index<usize> for StateVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// `k = ½ Σ q_i²`, the observable in which extreme events are defined.
pub fn kinetic_energy(q: &StateVector) -> f64 {
    0.5 * q.0.iter().map(|x| x * x).sum::<f64>()
}

/// One actuation value: the Reynolds number applied to the flow.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlAction {
    pub re: f64,
}

impl ControlAction {
    pub fn new(re: f64) -> Self {
        ControlAction { re }
    }
}

/// Discrete actuation levels. The first level is the uncontrolled Reynolds
/// number; the last is the full-control level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionSet {
    levels: Vec<f64>,
}

impl Default for ActionSet {
    fn default() -> Self {
        ActionSet {
            levels: vec![400.0, 2000.0],
        }
    }
}

impl ActionSet {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        let set = ActionSet { levels };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::InvalidParameter("action set is empty".into()));
        }
        for (i, &re) in self.levels.iter().enumerate() {
            if !(re.is_finite() && re > 0.0) {
                return Err(Error::InvalidParameter(format!("Reynolds level {re} must be > 0")));
            }
            if self.levels[..i].contains(&re) {
                return Err(Error::InvalidParameter(format!("duplicate Reynolds level {re}")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn action(&self, index: usize) -> ControlAction {
        ControlAction::new(self.levels[index])
    }

    pub fn actions(&self) -> impl Iterator<Item = ControlAction> + '_ {
        self.levels.iter().map(|&re| ControlAction::new(re))
    }

    pub fn base(&self) -> ControlAction {
        ControlAction::new(self.levels[0])
    }

    pub fn ctrl(&self) -> ControlAction {
        ControlAction::new(*self.levels.last().expect("validated non-empty"))
    }

    pub fn contains(&self, a: ControlAction) -> bool {
        self.levels.contains(&a.re)
    }

    pub fn is_controlled(&self, a: ControlAction) -> bool {
        a.re != self.levels[0]
    }

    /// Network input for an action: `(Re - Re_base) / (Re_ctrl - Re_base)`,
    /// so no control encodes to exactly zero.
    pub fn encode(&self, a: ControlAction) -> f64 {
        let base = self.levels[0];
        let span = self.ctrl().re - base;
        if span == 0.0 {
            0.0
        } else {
            (a.re - base) / span
        }
    }
}

/// Model geometry, integration settings, and actuation levels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MfeParams {
    /// Streamwise domain length (units of the channel half-height).
    pub lx: f64,
    /// Spanwise domain length.
    pub lz: f64,
    pub integrator_dt: f64,
    pub sample_dt: f64,
    pub blowup_bound: f64,
    /// Reynolds levels; the first is the uncontrolled flow.
    pub reynolds: ActionSet,
}

impl Default for MfeParams {
    fn default() -> Self {
        MfeParams {
            lx: 4.0 * std::f64::consts::PI,
            lz: 2.0 * std::f64::consts::PI,
            integrator_dt: 0.05,
            sample_dt: 0.25,
            blowup_bound: 1e3,
            reynolds: ActionSet::default(),
        }
    }
}

impl MfeParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} = {v} must be > 0")))
            }
        };
        positive("lx", self.lx)?;
        positive("lz", self.lz)?;
        positive("integrator_dt", self.integrator_dt)?;
        positive("sample_dt", self.sample_dt)?;
        positive("blowup_bound", self.blowup_bound)?;
        let ratio = self.sample_dt / self.integrator_dt;
        if ratio < 0.5 || (ratio - ratio.round()).abs() > 1e-9 * ratio {
            return Err(Error::InvalidParameter(format!(
                "sample_dt = {} is not an integer multiple of integrator_dt = {}",
                self.sample_dt, self.integrator_dt
            )));
        }
        self.reynolds.validate()
    }

    pub fn re_base(&self) -> f64 {
        self.reynolds.base().re
    }

    pub fn steps_per_sample(&self) -> usize {
        (self.sample_dt / self.integrator_dt).round() as usize
    }

    /// Streamwise, wall-normal and spanwise wavenumbers.
    pub fn wavenumbers(&self) -> (f64, f64, f64) {
        use std::f64::consts::PI;
        (2.0 * PI / self.lx, PI / 2.0, 2.0 * PI / self.lz)
    }

    /// Number of whole samples covering `t`.
    pub fn samples_in(&self, t: f64) -> usize {
        (t / self.sample_dt).round() as usize
    }
}

/// Sampled episode: one row per sample time. `actions[i]` is the action
/// applied from `times[i]` until the next sample.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<StateVector>,
    pub actions: Vec<ControlAction>,
    pub k: Vec<f64>,
}

impl Trajectory {
    pub fn with_capacity(n: usize) -> Self {
        Trajectory {
            times: Vec::with_capacity(n),
            states: Vec::with_capacity(n),
            actions: Vec::with_capacity(n),
            k: Vec::with_capacity(n),
        }
    }

    pub fn push(&mut self, t: f64, q: StateVector, a: ControlAction) {
        self.times.push(t);
        self.k.push(kinetic_energy(&q));
        self.states.push(q);
        self.actions.push(a);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> Option<&StateVector> {
        self.states.last()
    }

    pub fn max_k(&self) -> f64 {
        self.k.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Checks the shared-length and cached-energy invariants.
    pub fn validate(&self) -> Result<()> {
        let n = self.times.len();
        if self.states.len() != n || self.actions.len() != n || self.k.len() != n {
            return Err(Error::Format("trajectory columns have different lengths".into()));
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Format("trajectory times are not strictly increasing".into()));
        }
        for (i, (q, k)) in self.states.iter().zip(&self.k).enumerate() {
            if kinetic_energy(q).to_bits() != k.to_bits() {
                return Err(Error::Format(format!("k[{i}] does not match its state")));
            }
        }
        Ok(())
    }
}
