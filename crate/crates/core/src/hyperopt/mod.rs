//! Black-box maximisation for controller and network hyperparameters.
//!
//! The default search is Bayesian: a Latin-hypercube initial design, then
//! one point per iteration chosen by expected improvement under a Gaussian
//! process. A plain grid search is also available. Either way the returned
//! point is one that was actually evaluated.

mod gp;
mod tune;

use std::time::Instant;

use rand::Rng;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use tune::{tune_controller, tune_esn, TuneResult};

use crate::error::{Error, Result};
use crate::seeds;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Linear,
    Log,
}

/// One named interval. `lower == upper` pins the dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dimension {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    #[serde(default = "linear")]
    pub scale: Scale,
}

fn linear() -> Scale {
    Scale::Linear
}

impl Dimension {
    pub fn linear(name: &str, lower: f64, upper: f64) -> Self {
        Dimension {
            name: name.into(),
            lower,
            upper,
            scale: Scale::Linear,
        }
    }

    pub fn log(name: &str, lower: f64, upper: f64) -> Self {
        Dimension {
            name: name.into(),
            lower,
            upper,
            scale: Scale::Log,
        }
    }

    pub fn is_pinned(&self) -> bool {
        self.lower == self.upper
    }

    fn from_unit(&self, u: f64) -> f64 {
        if self.is_pinned() {
            return self.lower;
        }
        let v = match self.scale {
            Scale::Linear => self.lower + u * (self.upper - self.lower),
            Scale::Log => (self.lower.ln() + u * (self.upper.ln() - self.lower.ln())).exp(),
        };
        v.clamp(self.lower, self.upper)
    }

    fn to_unit(&self, v: f64) -> f64 {
        if self.is_pinned() {
            return 0.0;
        }
        match self.scale {
            Scale::Linear => (v - self.lower) / (self.upper - self.lower),
            Scale::Log => (v.ln() - self.lower.ln()) / (self.upper.ln() - self.lower.ln()),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SearchSpace {
    pub dims: Vec<Dimension>,
}

impl SearchSpace {
    pub fn new(dims: Vec<Dimension>) -> Result<Self> {
        let s = SearchSpace { dims };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, d) in self.dims.iter().enumerate() {
            if !(d.lower.is_finite() && d.upper.is_finite() && d.lower <= d.upper) {
                return Err(Error::InvalidParameter(format!(
                    "dimension `{}` needs finite lower <= upper, got [{}, {}]",
                    d.name, d.lower, d.upper
                )));
            }
            if d.scale == Scale::Log && d.lower <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "log-scaled dimension `{}` must be positive",
                    d.name
                )));
            }
            if self.dims[..i].iter().any(|o| o.name == d.name) {
                return Err(Error::InvalidParameter(format!("duplicate dimension `{}`", d.name)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.dims.iter().map(|d| d.name.as_str())
    }

    fn free(&self) -> Vec<usize> {
        (0..self.dims.len()).filter(|&i| !self.dims[i].is_pinned()).collect()
    }

    fn point_from_unit(&self, free: &[usize], u: &[f64]) -> Vec<f64> {
        let mut p: Vec<f64> = self.dims.iter().map(|d| d.lower).collect();
        for (&i, &ui) in free.iter().zip(u) {
            p[i] = self.dims[i].from_unit(ui);
        }
        p
    }

    fn unit_from_point(&self, free: &[usize], p: &[f64]) -> Vec<f64> {
        free.iter().map(|&i| self.dims[i].to_unit(p[i])).collect()
    }

    /// Cartesian grid with `per_dim` levels on every free dimension.
    pub fn grid(&self, per_dim: usize) -> Vec<Vec<f64>> {
        let free = self.free();
        let levels = per_dim.max(1);
        let total = levels.pow(free.len() as u32);
        (0..total)
            .map(|mut idx| {
                let mut u = vec![0.0; free.len()];
                for slot in u.iter_mut().rev() {
                    let l = idx % levels;
                    idx /= levels;
                    *slot = if levels == 1 { 0.5 } else { l as f64 / (levels - 1) as f64 };
                }
                self.point_from_unit(&free, &u)
            })
            .collect()
    }
}

/// Objective value at a point, with an optional noise estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub noise_est: f64,
}

impl From<f64> for Evaluation {
    fn from(value: f64) -> Self {
        Evaluation { value, noise_est: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalRecord {
    pub point: Vec<f64>,
    pub objective: f64,
    pub noise_est: f64,
    pub seed: u64,
    /// Evaluation failed; `objective` holds the worst value observed.
    pub failed: bool,
    #[serde(skip)]
    pub wall_seconds: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Bayesian,
    Grid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizeResult {
    pub best: usize,
    pub history: Vec<EvalRecord>,
}

impl OptimizeResult {
    pub fn best_record(&self) -> &EvalRecord {
        &self.history[self.best]
    }
}

struct History {
    seed: u64,
    records: Vec<EvalRecord>,
}

impl History {
    fn evaluate<F>(&mut self, objective: &F, point: Vec<f64>)
    where
        F: Fn(&[f64]) -> Result<Evaluation>,
    {
        let clock = Instant::now();
        let outcome = objective(&point).and_then(|e| {
            if e.value.is_finite() {
                Ok(e)
            } else {
                Err(Error::InvalidState(format!("objective returned {}", e.value)))
            }
        });
        let wall_seconds = clock.elapsed().as_secs_f64();
        let (objective, noise_est, failed) = match outcome {
            Ok(e) => (e.value, e.noise_est, false),
            Err(err) => {
                log::warn!("evaluation at {point:?} failed: {err}");
                (f64::NAN, 0.0, true)
            }
        };
        self.records.push(EvalRecord {
            point,
            objective,
            noise_est,
            seed: self.seed,
            failed,
            wall_seconds,
        });
        self.backfill();
    }

    /// Failed points take the worst successful objective seen so far.
    fn backfill(&mut self) {
        let worst = self
            .records
            .iter()
            .filter(|r| !r.failed)
            .map(|r| r.objective)
            .fold(f64::INFINITY, f64::min);
        if worst.is_finite() {
            for r in self.records.iter_mut().filter(|r| r.failed) {
                r.objective = worst;
            }
        }
    }

    fn best(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, r) in self.records.iter().enumerate() {
            if !r.failed && best.is_none_or(|b| r.objective > self.records[b].objective) {
                best = Some(i);
            }
        }
        best
    }

    fn finish(self) -> Result<OptimizeResult> {
        let best = self
            .best()
            .ok_or_else(|| Error::InvalidState("every evaluation failed".into()))?;
        Ok(OptimizeResult {
            best,
            history: self.records,
        })
    }
}

/// Evaluates every point and returns the best; ties go to the earliest.
pub fn optimize_grid<F>(objective: F, points: &[Vec<f64>], seed: u64) -> Result<OptimizeResult>
where
    F: Fn(&[f64]) -> Result<Evaluation>,
{
    let mut h = History {
        seed,
        records: Vec::with_capacity(points.len()),
    };
    for p in points {
        h.evaluate(&objective, p.clone());
    }
    h.finish()
}

/// Latin-hypercube sample of `n` points in the unit cube of `dim` dimensions.
fn latin_hypercube(n: usize, dim: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; dim]; n];
    for d in 0..dim {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(rng);
        for (p, s) in pts.iter_mut().zip(strata) {
            p[d] = (s as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    pts
}

/// Bayesian maximisation with `budget` evaluations. Deterministic under
/// `seed` for a deterministic objective.
pub fn optimize<F>(objective: F, space: &SearchSpace, budget: usize, seed: u64) -> Result<OptimizeResult>
where
    F: Fn(&[f64]) -> Result<Evaluation>,
{
    space.validate()?;
    if budget == 0 {
        return Err(Error::InvalidParameter("budget must be at least 1".into()));
    }
    let free = space.free();
    let mut rng = seeds::rng(seed, &[0xb0]);
    let mut h = History {
        seed,
        records: Vec::with_capacity(budget),
    };

    if free.is_empty() {
        h.evaluate(&objective, space.point_from_unit(&free, &[]));
        return h.finish();
    }

    let n_init = (2 * free.len()).max(5).min(budget);
    for u in latin_hypercube(n_init, free.len(), &mut rng) {
        h.evaluate(&objective, space.point_from_unit(&free, &u));
    }

    while h.records.len() < budget {
        let u = next_point(space, &free, &h, &mut rng);
        h.evaluate(&objective, space.point_from_unit(&free, &u));
    }
    h.finish()
}

/// Maximiser of expected improvement over a random candidate pool plus
/// local perturbations of the best points.
fn next_point(space: &SearchSpace, free: &[usize], h: &History, rng: &mut impl Rng) -> Vec<f64> {
    // Failures before the first success have no value yet.
    let scored: Vec<&EvalRecord> = h.records.iter().filter(|r| r.objective.is_finite()).collect();
    let x: Vec<Vec<f64>> = scored.iter().map(|r| space.unit_from_point(free, &r.point)).collect();
    let y: Vec<f64> = scored.iter().map(|r| r.objective).collect();
    let dim = free.len();
    let random_point = |rng: &mut dyn rand::RngCore| -> Vec<f64> { (0..dim).map(|_| rng.random::<f64>()).collect() };

    let evaluated: Vec<Vec<f64>> = h.records.iter().map(|r| space.unit_from_point(free, &r.point)).collect();
    let Some(gp) = gp::Gp::fit(x.clone(), &y) else {
        return random_point(rng);
    };
    let best_y = h.best().map_or(0.0, |b| gp.standardise(h.records[b].objective));

    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| y[b].total_cmp(&y[a]));
    let mut candidates: Vec<Vec<f64>> = (0..1000).map(|_| random_point(rng)).collect();
    for &i in order.iter().take(3) {
        for _ in 0..100 {
            let c: Vec<f64> = x[i]
                .iter()
                .map(|v| (v + 0.05 * (rng.random::<f64>() - 0.5) * 2.0).clamp(0.0, 1.0))
                .collect();
            candidates.push(c);
        }
    }

    let is_new = |c: &[f64]| {
        evaluated
            .iter()
            .all(|xi| xi.iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum::<f64>() > 1e-12)
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    for c in candidates {
        if !is_new(&c) {
            continue;
        }
        let (m, s) = gp.predict_std(&c);
        let ei = gp::expected_improvement(m, s, best_y, 0.01);
        if best.as_ref().is_none_or(|(b, _)| ei > *b) {
            best = Some((ei, c));
        }
    }
    best.map(|(_, c)| c).unwrap_or_else(|| random_point(rng))
}
