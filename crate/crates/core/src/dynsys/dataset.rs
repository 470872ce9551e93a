//! Training-data generation and the dataset file format.
//!
//! Dataset files are JSON documents:
//!
//! ```text
//! { "format": "caesn-dataset", "version": 1, "seed": <u64>,
//!   "length_lt": <hex>, "params": {<MfeParams, floats as hex>},
//!   "series": [ { "time": <packed>, "q": <packed, row-major n x 9>,
//!                 "re": <packed>, "k": <packed> }, ... ] }
//! ```
//!
//! `<hex>` is one float as the 16 hex digits of its bit pattern and
//! `<packed>` is the concatenation of such words (see [`crate::hexfloat`]).

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    kinetic_energy, lt_to_time, time_to_lt, ActionSet, ControlAction, Integrator, MfeParams,
    Schedule, StateVector, Trajectory, N_MODES,
};
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::{hexfloat, seeds};

pub const DATASET_FORMAT: &str = "caesn-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Discarded initial transient, in Lyapunov times.
    pub washout_lt: f64,
    /// Half-width of the uniform perturbation added to modes 2-9 of the
    /// laminar state.
    pub perturbation: f64,
    /// Probability that a recorded control slot uses the control level.
    pub control_probability: f64,
    /// Length of one control slot in time units.
    pub control_interval: f64,
    /// A series is rejected when k stays within this distance of the
    /// laminar value for longer than `laminar_lt`.
    pub laminar_tol: f64,
    pub laminar_lt: f64,
    /// Attempts per series before generation fails.
    pub max_attempts: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            washout_lt: 10.0,
            perturbation: 0.3,
            control_probability: 0.3,
            control_interval: 10.0,
            laminar_tol: 1e-6,
            laminar_lt: 1.0,
            max_attempts: 50,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.washout_lt >= 0.0) {
            return Err(Error::InvalidParameter("washout_lt must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.control_probability) {
            return Err(Error::InvalidParameter("control_probability must lie in [0, 1]".into()));
        }
        if !(self.control_interval > 0.0) || !(self.perturbation >= 0.0) {
            return Err(Error::InvalidParameter(
                "control_interval must be > 0 and perturbation >= 0".into(),
            ));
        }
        if self.max_attempts == 0 {
            return Err(Error::InvalidParameter("max_attempts must be >= 1".into()));
        }
        Ok(())
    }
}

fn perturbed_laminar(rng: &mut impl Rng, amplitude: f64) -> StateVector {
    let mut q = *StateVector::laminar().as_array();
    for x in q.iter_mut().skip(1) {
        *x += rng.random_range(-amplitude..=amplitude);
    }
    StateVector::new_unchecked(q)
}

/// True when `k` sits at the laminar value for longer than the configured
/// duration.
fn relaminarized(k: &[f64], sample_dt: f64, cfg: &DatasetConfig) -> bool {
    let k_lam = kinetic_energy(&StateVector::laminar());
    let limit = lt_to_time(cfg.laminar_lt);
    let mut run = 0usize;
    for &x in k {
        if (x - k_lam).abs() <= cfg.laminar_tol {
            run += 1;
            if (run.saturating_sub(1)) as f64 * sample_dt > limit {
                return true;
            }
        } else {
            run = 0;
        }
    }
    false
}

/// Washout from a random perturbation of the laminar state. `None` when the
/// attempt blew up or relaminarized.
fn washed_out_state(
    integ: &Integrator,
    rng: &mut impl Rng,
    cfg: &DatasetConfig,
) -> Option<StateVector> {
    let q0 = perturbed_laminar(rng, cfg.perturbation);
    let t = lt_to_time(cfg.washout_lt);
    if t <= 0.0 {
        return Some(q0);
    }
    let base = integ.params().reynolds.base();
    let tr = integ.integrate(&q0, &Schedule::constant(base), t).ok()?;
    let tail = tr.k.len().saturating_sub(integ.params().samples_in(lt_to_time(cfg.laminar_lt)) + 2);
    if relaminarized(&tr.k[tail..], integ.params().sample_dt, cfg)
        || (tr.k.last()? - 0.5).abs() <= cfg.laminar_tol
    {
        return None;
    }
    tr.last_state().copied()
}

fn random_schedule(
    rng: &mut impl Rng,
    set: &ActionSet,
    cfg: &DatasetConfig,
    t_span: f64,
) -> Result<Schedule> {
    let n_slots = (t_span / cfg.control_interval).ceil().max(1.0) as usize;
    let actions: Vec<ControlAction> = (0..n_slots)
        .map(|_| {
            if set.len() > 1 && rng.random_bool(cfg.control_probability) {
                // Any non-base level, uniformly.
                set.action(rng.random_range(1..set.len()))
            } else {
                set.base()
            }
        })
        .collect();
    Schedule::from_slots(cfg.control_interval, &actions)
}

fn generate_series(
    integ: &Integrator,
    length_lt: f64,
    seed: u64,
    index: usize,
    cfg: &DatasetConfig,
) -> Result<Trajectory> {
    for attempt in 0..cfg.max_attempts {
        let mut rng = seeds::rng(seed, &[0xda7a, index as u64, attempt as u64]);
        let Some(q0) = washed_out_state(integ, &mut rng, cfg) else {
            continue;
        };
        let t_span = lt_to_time(length_lt);
        let schedule = random_schedule(&mut rng, &integ.params().reynolds, cfg, t_span)?;
        let Ok(tr) = integ.integrate(&q0, &schedule, t_span) else {
            continue;
        };
        if relaminarized(&tr.k, integ.params().sample_dt, cfg) {
            continue;
        }
        return Ok(tr);
    }
    Err(Error::Generation(format!(
        "series {index}: no non-laminar series within {} attempts",
        cfg.max_attempts
    )))
}

/// Generates `n_series` on-attractor series of `length_lt` Lyapunov times
/// with randomly switched actuation. Deterministic under `seed`; series `i`
/// depends only on `(seed, i)`.
pub fn generate_dataset(
    n_series: usize,
    length_lt: f64,
    seed: u64,
    params: &MfeParams,
    cfg: &DatasetConfig,
    exec: Execution,
) -> Result<Vec<Trajectory>> {
    cfg.validate()?;
    if !(length_lt > 0.0) {
        return Err(Error::InvalidParameter(format!("length_lt = {length_lt} must be > 0")));
    }
    let integ = Integrator::new(params.clone())?;
    map_indexed(exec, n_series, |i| generate_series(&integ, length_lt, seed, i, cfg))
        .into_iter()
        .collect()
}

/// Draws `n` on-attractor states after washout at the base Reynolds number.
/// States with `k > max_k` are redrawn, so episodes can start outside an
/// extreme event.
pub fn sample_initial_states(
    n: usize,
    seed: u64,
    params: &MfeParams,
    cfg: &DatasetConfig,
    max_k: f64,
    exec: Execution,
) -> Result<Vec<StateVector>> {
    cfg.validate()?;
    let integ = Integrator::new(params.clone())?;
    map_indexed(exec, n, |i| {
        for attempt in 0..cfg.max_attempts {
            let mut rng = seeds::rng(seed, &[0x1c, i as u64, attempt as u64]);
            if let Some(q) = washed_out_state(&integ, &mut rng, cfg) {
                if kinetic_energy(&q) <= max_k {
                    return Ok(q);
                }
            }
        }
        Err(Error::Generation(format!(
            "initial state {i}: none with k <= {max_k} within {} attempts",
            cfg.max_attempts
        )))
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsRecord {
    #[serde(with = "hexfloat::scalar")]
    lx: f64,
    #[serde(with = "hexfloat::scalar")]
    lz: f64,
    #[serde(with = "hexfloat::scalar")]
    integrator_dt: f64,
    #[serde(with = "hexfloat::scalar")]
    sample_dt: f64,
    #[serde(with = "hexfloat::scalar")]
    blowup_bound: f64,
    #[serde(with = "hexfloat::packed")]
    reynolds: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SeriesRecord {
    #[serde(with = "hexfloat::packed")]
    time: Vec<f64>,
    #[serde(with = "hexfloat::packed")]
    q: Vec<f64>,
    #[serde(with = "hexfloat::packed")]
    re: Vec<f64>,
    #[serde(with = "hexfloat::packed")]
    k: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetRecord {
    format: String,
    version: u32,
    seed: u64,
    #[serde(with = "hexfloat::scalar")]
    length_lt: f64,
    params: ParamsRecord,
    series: Vec<SeriesRecord>,
}

/// In-memory form of a dataset file.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetFile {
    pub seed: u64,
    pub length_lt: f64,
    pub params: MfeParams,
    pub series: Vec<Trajectory>,
}

impl DatasetFile {
    pub fn to_json(&self) -> Result<String> {
        let p = &self.params;
        let record = DatasetRecord {
            format: DATASET_FORMAT.into(),
            version: DATASET_VERSION,
            seed: self.seed,
            length_lt: self.length_lt,
            params: ParamsRecord {
                lx: p.lx,
                lz: p.lz,
                integrator_dt: p.integrator_dt,
                sample_dt: p.sample_dt,
                blowup_bound: p.blowup_bound,
                reynolds: p.reynolds.levels().to_vec(),
            },
            series: self
                .series
                .iter()
                .map(|tr| SeriesRecord {
                    time: tr.times.clone(),
                    q: tr.states.iter().flat_map(|s| *s.as_array()).collect(),
                    re: tr.actions.iter().map(|a| a.re).collect(),
                    k: tr.k.clone(),
                })
                .collect(),
        };
        serde_json::to_string(&record).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rec: DatasetRecord =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("dataset: {e}")))?;
        if rec.format != DATASET_FORMAT {
            return Err(Error::Format(format!("not a dataset file (format {:?})", rec.format)));
        }
        if rec.version != DATASET_VERSION {
            return Err(Error::Format(format!("unsupported dataset version {}", rec.version)));
        }
        let params = MfeParams {
            lx: rec.params.lx,
            lz: rec.params.lz,
            integrator_dt: rec.params.integrator_dt,
            sample_dt: rec.params.sample_dt,
            blowup_bound: rec.params.blowup_bound,
            reynolds: ActionSet::new(rec.params.reynolds)?,
        };
        let series = rec
            .series
            .into_iter()
            .map(|s| {
                let n = s.time.len();
                if s.q.len() != n * N_MODES || s.re.len() != n || s.k.len() != n {
                    return Err(Error::Format("series columns have inconsistent lengths".into()));
                }
                let states = s
                    .q
                    .chunks_exact(N_MODES)
                    .map(StateVector::from_slice)
                    .collect::<Result<Vec<_>>>()?;
                let tr = Trajectory {
                    times: s.time,
                    states,
                    actions: s.re.into_iter().map(ControlAction::new).collect(),
                    k: s.k,
                };
                tr.validate()?;
                Ok(tr)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DatasetFile {
            seed: rec.seed,
            length_lt: rec.length_lt,
            params,
            series,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Total duration covered, in Lyapunov times.
    pub fn total_lt(&self) -> f64 {
        self.series
            .iter()
            .filter_map(|s| s.times.last())
            .map(|&t| time_to_lt(t))
            .sum()
    }
}
