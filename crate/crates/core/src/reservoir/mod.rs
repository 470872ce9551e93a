//! Control-aware echo state network.
//!
//! The network maps the current state and actuation to the state one
//! `esn_dt` later:
//!
//! ```text
//! r = tanh(σ_in W_in [q ∘ s; 1] + ρ W r_prev + σ_c W_c u)
//! q̂ = W_outᵀ r
//! ```
//!
//! where `s` is the per-component input scaling and `u` the encoded action
//! (0 for no control, 1 for full control). `W_in`, `W` and `W_c` are random
//! and frozen; only `W_out` is fitted, by ridge regression. With `ρ = 0`
//! (the default) the map is memoryless and `W` is never applied.

mod io;
mod ridge;
mod sparse;

pub use io::{MODEL_FORMAT, MODEL_VERSION};
pub use ridge::{solve_ridge, RidgeSolution};
pub use sparse::CsrMatrix;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynsys::{kinetic_energy, ActionSet, ControlAction, StateVector, Trajectory, N_MODES};
use crate::error::{Error, Result};
use crate::seeds;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EsnParams {
    pub n_reservoir: usize,
    pub sigma_in: f64,
    pub sigma_c: f64,
    pub rho: f64,
    pub ridge_lambda: f64,
    /// Multiplies each state component before it enters the network.
    pub input_scaling: [f64; N_MODES],
    pub seed: u64,
    /// Interval represented by one network step, in time units.
    pub esn_dt: f64,
    /// Fraction of nonzero entries of the recurrent matrix.
    pub density: f64,
    /// Append a constant 1 to the input.
    pub bias: bool,
    /// Predictions with any `|q̂_i|` above this bound count as diverged.
    pub divergence_bound: f64,
}

impl Default for EsnParams {
    fn default() -> Self {
        EsnParams {
            n_reservoir: 500,
            sigma_in: 0.02,
            sigma_c: 0.1,
            rho: 0.0,
            ridge_lambda: 1e-10,
            input_scaling: [1.0; N_MODES],
            seed: 0,
            esn_dt: 0.25,
            density: 0.03,
            bias: true,
            divergence_bound: 10.0,
        }
    }
}

impl EsnParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.n_reservoir == 0 {
            return bad("n_reservoir must be >= 1".into());
        }
        if !(self.sigma_in >= 0.0 && self.sigma_c >= 0.0) {
            return bad("sigma_in and sigma_c must be >= 0".into());
        }
        if !(self.ridge_lambda > 0.0) {
            return bad(format!("ridge_lambda = {} must be > 0", self.ridge_lambda));
        }
        if !(self.esn_dt > 0.0) || !(self.rho.is_finite()) {
            return bad("esn_dt must be > 0 and rho finite".into());
        }
        if !(0.0..=1.0).contains(&self.density) {
            return bad("density must lie in [0, 1]".into());
        }
        if self.input_scaling.iter().any(|s| !s.is_finite()) {
            return bad("input_scaling must be finite".into());
        }
        if !(self.divergence_bound > 0.0) {
            return bad("divergence_bound must be > 0".into());
        }
        Ok(())
    }

    /// Sets the input scaling to the reciprocal per-component standard
    /// deviation of the states in `data`. Constant components keep scale 1.
    pub fn with_input_scaling_from(mut self, data: &[Trajectory]) -> Self {
        let n: usize = data.iter().map(|t| t.len()).sum();
        if n < 2 {
            return self;
        }
        let mut mean = [0.0; N_MODES];
        for q in data.iter().flat_map(|t| &t.states) {
            for i in 0..N_MODES {
                mean[i] += q[i];
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = [0.0; N_MODES];
        for q in data.iter().flat_map(|t| &t.states) {
            for i in 0..N_MODES {
                var[i] += (q[i] - mean[i]).powi(2);
            }
        }
        for i in 0..N_MODES {
            let sd = (var[i] / (n - 1) as f64).sqrt();
            self.input_scaling[i] = if sd > 0.0 { 1.0 / sd } else { 1.0 };
        }
        self
    }

    fn input_width(&self) -> usize {
        N_MODES + self.bias as usize
    }
}

/// One-step surrogate of the controlled dynamics, as used by the
/// controllers. `None` signals a prediction outside the validity region.
///
/// Each call starts from a fresh reservoir, so a recurrent network is used
/// as its memoryless one-step map here.
pub trait Surrogate: Send + Sync {
    fn predict(&self, q: &StateVector, a: ControlAction) -> Option<StateVector>;

    /// Time represented by one prediction step.
    fn dt(&self) -> f64;
}

/// Flattened, pre-scaled weights for the memoryless step.
#[derive(Clone, Debug)]
struct Kernel {
    n: usize,
    /// `σ_in W_in[:, :9] ∘ s`, row-major `n x 9`.
    input: Vec<f64>,
    /// `σ_in W_in[:, 9]` (zero without bias).
    offset: Vec<f64>,
    /// `σ_c W_c`.
    control: Vec<f64>,
    /// `W_out`, row-major `n x 9`.
    readout: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct EsnModel {
    params: EsnParams,
    reynolds: ActionSet,
    w_in: DMatrix<f64>,
    w: CsrMatrix,
    w_c: DMatrix<f64>,
    w_out: Option<DMatrix<f64>>,
    kernel: Option<Kernel>,
}

/// Closed-loop prediction: `states[0] = q0`, one entry per network step.
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub states: Vec<StateVector>,
    pub k: Vec<f64>,
    /// Step at which the prediction left the validity region; the states
    /// stop before it.
    pub diverged_at: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingReport {
    pub n_samples: usize,
    pub relative_residual: f64,
}

impl EsnModel {
    /// Samples the fixed random matrices. Deterministic under `params.seed`.
    pub fn build(params: EsnParams, reynolds: ActionSet) -> Result<Self> {
        params.validate()?;
        reynolds.validate()?;
        let n = params.n_reservoir;
        let mut rng = seeds::rng(params.seed, &[0xe5e]);
        let w_in = DMatrix::from_fn(n, params.input_width(), |_, _| rng.random_range(-1.0..=1.0));
        let w_c = DMatrix::from_fn(n, 1, |_, _| rng.random_range(-1.0..=1.0));
        let mut w = CsrMatrix::random(n, params.density, &mut rng);
        let radius = w.spectral_radius();
        if radius > 0.0 {
            w.scale(1.0 / radius);
        }
        Ok(EsnModel {
            params,
            reynolds,
            w_in,
            w,
            w_c,
            w_out: None,
            kernel: None,
        })
    }

    /// Assembles a model from explicit matrices.
    pub fn from_parts(
        params: EsnParams,
        reynolds: ActionSet,
        w_in: DMatrix<f64>,
        w: CsrMatrix,
        w_c: DMatrix<f64>,
        w_out: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        params.validate()?;
        reynolds.validate()?;
        let n = params.n_reservoir;
        if w_in.shape() != (n, params.input_width())
            || w.shape() != (n, n)
            || w_c.shape() != (n, 1)
            || w_out.as_ref().is_some_and(|m| m.shape() != (n, N_MODES))
        {
            return Err(Error::InvalidParameter("matrix shapes do not match n_reservoir".into()));
        }
        let mut model = EsnModel {
            params,
            reynolds,
            w_in,
            w,
            w_c,
            w_out: None,
            kernel: None,
        };
        if let Some(out) = w_out {
            model.set_readout(out);
        }
        Ok(model)
    }

    pub fn params(&self) -> &EsnParams {
        &self.params
    }

    pub fn reynolds(&self) -> &ActionSet {
        &self.reynolds
    }

    pub fn w_in(&self) -> &DMatrix<f64> {
        &self.w_in
    }

    pub fn w(&self) -> &CsrMatrix {
        &self.w
    }

    pub fn w_c(&self) -> &DMatrix<f64> {
        &self.w_c
    }

    pub fn w_out(&self) -> Option<&DMatrix<f64>> {
        self.w_out.as_ref()
    }

    pub fn is_trained(&self) -> bool {
        self.w_out.is_some()
    }

    fn set_readout(&mut self, w_out: DMatrix<f64>) {
        let p = &self.params;
        let n = p.n_reservoir;
        let mut input = vec![0.0; n * N_MODES];
        let mut offset = vec![0.0; n];
        let mut control = vec![0.0; n];
        let mut readout = vec![0.0; n * N_MODES];
        for i in 0..n {
            for j in 0..N_MODES {
                input[i * N_MODES + j] = p.sigma_in * self.w_in[(i, j)] * p.input_scaling[j];
                readout[i * N_MODES + j] = w_out[(i, j)];
            }
            if p.bias {
                offset[i] = p.sigma_in * self.w_in[(i, N_MODES)];
            }
            control[i] = p.sigma_c * self.w_c[(i, 0)];
        }
        self.kernel = Some(Kernel {
            n,
            input,
            offset,
            control,
            readout,
        });
        self.w_out = Some(w_out);
    }

    /// Argument of the tanh for the memoryless map, written out term by term.
    pub fn activation_argument(&self, q: &StateVector, a: ControlAction) -> DVector<f64> {
        let p = &self.params;
        let mut q_in = DVector::zeros(p.input_width());
        for j in 0..N_MODES {
            q_in[j] = q[j] * p.input_scaling[j];
        }
        if p.bias {
            q_in[N_MODES] = 1.0;
        }
        let u = self.reynolds.encode(a);
        &self.w_in * q_in * p.sigma_in + self.w_c.column(0) * (p.sigma_c * u)
    }

    /// Reservoir state `r` for the memoryless map.
    pub fn activation(&self, q: &StateVector, a: ControlAction) -> DVector<f64> {
        self.activation_argument(q, a).map(f64::tanh)
    }

    /// One network step with `ρ = 0`.
    pub fn step(&self, q: &StateVector, a: ControlAction) -> Result<StateVector> {
        let kernel = self.kernel.as_ref().ok_or(Error::NotTrained)?;
        let out = self.advance(kernel, q.as_array(), self.reynolds.encode(a));
        StateVector::new(out)
    }

    #[inline]
    fn advance(&self, k: &Kernel, q: &[f64; N_MODES], u: f64) -> [f64; N_MODES] {
        let mut out = [0.0; N_MODES];
        for i in 0..k.n {
            let row = &k.input[i * N_MODES..(i + 1) * N_MODES];
            let mut z = k.offset[i] + k.control[i] * u;
            for j in 0..N_MODES {
                z += row[j] * q[j];
            }
            let r = z.tanh();
            let w = &k.readout[i * N_MODES..(i + 1) * N_MODES];
            for j in 0..N_MODES {
                out[j] += r * w[j];
            }
        }
        out
    }

    /// One step of the recurrent network, updating `reservoir` in place.
    pub fn step_recurrent(
        &self,
        reservoir: &mut DVector<f64>,
        q: &StateVector,
        a: ControlAction,
    ) -> Result<StateVector> {
        let w_out = self.w_out.as_ref().ok_or(Error::NotTrained)?;
        let mut z = self.activation_argument(q, a);
        if self.params.rho != 0.0 {
            z += self.w.mul_vec(reservoir.as_slice()) * self.params.rho;
        }
        *reservoir = z.map(f64::tanh);
        let out = w_out.tr_mul(reservoir);
        StateVector::from_slice(out.as_slice())
    }

    fn diverged(&self, q: &[f64; N_MODES]) -> bool {
        q.iter().any(|x| !(x.abs() <= self.params.divergence_bound))
    }

    /// Closed-loop autoregression over `n_steps` using `schedule[i]` at step `i`.
    pub fn rollout(&self, q0: &StateVector, schedule: &[ControlAction], n_steps: usize) -> Result<Rollout> {
        if schedule.len() < n_steps {
            return Err(Error::InvalidParameter(format!(
                "schedule has {} actions for {n_steps} steps",
                schedule.len()
            )));
        }
        let mut states = Vec::with_capacity(n_steps + 1);
        states.push(*q0);
        let mut reservoir = DVector::zeros(self.params.n_reservoir);
        let recurrent = self.params.rho != 0.0;
        let kernel = self.kernel.as_ref().ok_or(Error::NotTrained)?;
        let mut q = *q0.as_array();
        let mut diverged_at = None;
        for (step, &a) in schedule.iter().take(n_steps).enumerate() {
            let next = if recurrent {
                match self.step_recurrent(&mut reservoir, &StateVector::new_unchecked(q), a) {
                    Ok(s) => *s.as_array(),
                    // Non-finite output counts as divergence.
                    Err(_) => [f64::NAN; N_MODES],
                }
            } else {
                self.advance(kernel, &q, self.reynolds.encode(a))
            };
            if self.diverged(&next) {
                diverged_at = Some(step + 1);
                break;
            }
            q = next;
            states.push(StateVector::new_unchecked(q));
        }
        let k = states.iter().map(kinetic_energy).collect();
        Ok(Rollout {
            states,
            k,
            diverged_at,
        })
    }

    /// Sample stride that turns `traj`'s sampling into `esn_dt` steps.
    fn stride_for(&self, traj: &Trajectory) -> Result<usize> {
        if traj.len() < 2 {
            return Ok(1);
        }
        let spacing = traj.times[1] - traj.times[0];
        let ratio = self.params.esn_dt / spacing;
        if ratio < 0.5 || (ratio - ratio.round()).abs() > 1e-6 * ratio {
            return Err(Error::Training(format!(
                "series sampled every {spacing} cannot provide esn_dt = {} steps",
                self.params.esn_dt
            )));
        }
        Ok(ratio.round() as usize)
    }

    /// `(input state, action, target state)` training pairs. Pairs whose
    /// action changes inside the step are skipped.
    pub fn training_pairs<'a>(
        &self,
        dataset: &'a [Trajectory],
    ) -> Result<Vec<(&'a StateVector, ControlAction, &'a StateVector)>> {
        let mut pairs = Vec::new();
        for traj in dataset {
            let stride = self.stride_for(traj)?;
            for i in 0..traj.len().saturating_sub(stride) {
                let a = traj.actions[i];
                if traj.actions[i..i + stride].iter().any(|&b| b != a) {
                    continue;
                }
                pairs.push((&traj.states[i], a, &traj.states[i + stride]));
            }
        }
        Ok(pairs)
    }

    /// Fits `W_out` by ridge regression of next states on reservoir states.
    /// Only the memoryless configuration is trained pairwise; recurrent
    /// networks are driven through each series in order with teacher forcing.
    pub fn train(&mut self, dataset: &[Trajectory]) -> Result<TrainingReport> {
        let n = self.params.n_reservoir;
        let pairs = self.training_pairs(dataset)?;
        if pairs.is_empty() {
            return Err(Error::Training("dataset has no training pairs".into()));
        }
        if pairs.len() < n {
            log::warn!(
                "training on {} samples for {} reservoir units; the readout is underdetermined",
                pairs.len(),
                n
            );
        }
        let mut normal = ridge::NormalEquations::new(n, N_MODES);
        if self.params.rho == 0.0 {
            const CHUNK: usize = 2048;
            for chunk in pairs.chunks(CHUNK) {
                let mut h = DMatrix::zeros(n, chunk.len());
                let mut y = DMatrix::zeros(chunk.len(), N_MODES);
                for (c, &(q, a, target)) in chunk.iter().enumerate() {
                    h.set_column(c, &self.activation(q, a));
                    for j in 0..N_MODES {
                        y[(c, j)] = target[j];
                    }
                }
                normal.accumulate(&h, &y)?;
            }
        } else {
            for traj in dataset {
                let stride = self.stride_for(traj)?;
                let mut reservoir = DVector::zeros(n);
                let mut i = 0;
                while i + stride < traj.len() {
                    let mut z = self.activation_argument(&traj.states[i], traj.actions[i]);
                    z += self.w.mul_vec(reservoir.as_slice()) * self.params.rho;
                    reservoir = z.map(f64::tanh);
                    let h = DMatrix::from_column_slice(n, 1, reservoir.as_slice());
                    let y = DMatrix::from_row_slice(1, N_MODES, traj.states[i + stride].as_array());
                    normal.accumulate(&h, &y)?;
                    i += stride;
                }
            }
        }
        let solution = normal.solve(self.params.ridge_lambda)?;
        self.set_readout(solution.weights);
        Ok(TrainingReport {
            n_samples: normal.n_samples(),
            relative_residual: solution.relative_residual,
        })
    }

    /// Relative one-step errors `|q̂ - q| / |q|` over all pairs of `data`.
    pub fn one_step_errors(&self, data: &[Trajectory]) -> Result<Vec<f64>> {
        let norm = |q: &[f64; N_MODES]| q.iter().map(|x| x * x).sum::<f64>().sqrt();
        self.training_pairs(data)?
            .into_iter()
            .map(|(q, a, target)| {
                let pred = self.step(q, a)?;
                let diff: [f64; N_MODES] = std::array::from_fn(|j| pred[j] - target[j]);
                Ok(norm(&diff) / norm(target.as_array()))
            })
            .collect()
    }
}

impl Surrogate for EsnModel {
    fn predict(&self, q: &StateVector, a: ControlAction) -> Option<StateVector> {
        let kernel = self.kernel.as_ref()?;
        let out = self.advance(kernel, q.as_array(), self.reynolds.encode(a));
        if self.diverged(&out) {
            None
        } else {
            Some(StateVector::new_unchecked(out))
        }
    }

    fn dt(&self) -> f64 {
        self.params.esn_dt
    }
}
