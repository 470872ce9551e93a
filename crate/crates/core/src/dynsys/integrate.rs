use super::mfe::MfeModel;
use super::{ControlAction, MfeParams, StateVector, Trajectory, N_MODES};
use crate::error::{Error, Result};

/// Piecewise-constant actuation: `(start_time, action)` segments, the first
/// starting at `t = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    segments: Vec<(f64, ControlAction)>,
}

impl Schedule {
    pub fn constant(a: ControlAction) -> Self {
        Schedule {
            segments: vec![(0.0, a)],
        }
    }

    pub fn piecewise(segments: Vec<(f64, ControlAction)>) -> Result<Self> {
        match segments.first() {
            Some(&(0.0, _)) => {}
            _ => {
                return Err(Error::InvalidParameter(
                    "schedule must start with a segment at t = 0".into(),
                ))
            }
        }
        if segments.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidParameter("schedule times must increase".into()));
        }
        Ok(Schedule { segments })
    }

    /// Equal-length segments of `interval` time units.
    pub fn from_slots(interval: f64, actions: &[ControlAction]) -> Result<Self> {
        Self::piecewise(
            actions
                .iter()
                .enumerate()
                .map(|(i, &a)| (i as f64 * interval, a))
                .collect(),
        )
    }

    pub fn at(&self, t: f64) -> ControlAction {
        let idx = self.segments.partition_point(|&(start, _)| start <= t);
        self.segments[idx.saturating_sub(1)].1
    }

    pub fn segments(&self) -> &[(f64, ControlAction)] {
        &self.segments
    }
}

/// Classical fourth-order Runge–Kutta at a fixed step.
#[derive(Clone, Debug)]
pub struct Integrator {
    params: MfeParams,
    model: MfeModel,
}

impl Integrator {
    pub fn new(params: MfeParams) -> Result<Self> {
        params.validate()?;
        let model = MfeModel::new(&params);
        Ok(Integrator { params, model })
    }

    pub fn params(&self) -> &MfeParams {
        &self.params
    }

    pub fn model(&self) -> &MfeModel {
        &self.model
    }

    #[inline]
    fn rk4(&self, q: &[f64; N_MODES], re: f64, dt: f64) -> [f64; N_MODES] {
        let m = &self.model;
        let axpy = |x: &[f64; N_MODES], h: f64, k: &[f64; N_MODES]| -> [f64; N_MODES] {
            std::array::from_fn(|i| x[i] + h * k[i])
        };
        let k1 = m.rhs_raw(q, re);
        let k2 = m.rhs_raw(&axpy(q, 0.5 * dt, &k1), re);
        let k3 = m.rhs_raw(&axpy(q, 0.5 * dt, &k2), re);
        let k4 = m.rhs_raw(&axpy(q, dt, &k3), re);
        std::array::from_fn(|i| q[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
    }

    /// Integrates over `t_span` and samples every `sample_dt`, including
    /// both endpoints. The action applied over each integrator step is the
    /// schedule value at the step's left endpoint.
    pub fn integrate(&self, q0: &StateVector, schedule: &Schedule, t_span: f64) -> Result<Trajectory> {
        self.integrate_with_dt(q0, schedule, t_span, self.params.integrator_dt)
    }

    /// As [`Integrator::integrate`] with an explicit integrator step, which
    /// must divide `sample_dt`.
    pub fn integrate_with_dt(
        &self,
        q0: &StateVector,
        schedule: &Schedule,
        t_span: f64,
        dt: f64,
    ) -> Result<Trajectory> {
        if !(t_span.is_finite() && t_span > 0.0) {
            return Err(Error::InvalidParameter(format!("t_span = {t_span} must be > 0")));
        }
        let ratio = self.params.sample_dt / dt;
        if !(dt > 0.0) || (ratio - ratio.round()).abs() > 1e-9 * ratio || ratio < 0.5 {
            return Err(Error::InvalidParameter(format!(
                "integrator step {dt} must divide sample_dt {}",
                self.params.sample_dt
            )));
        }
        let per_sample = ratio.round() as usize;
        let n_samples = self.params.samples_in(t_span).max(1);
        let n_steps = n_samples * per_sample;

        // Segment boundaries snapped to integrator steps.
        let boundaries: Vec<(usize, f64)> = schedule
            .segments()
            .iter()
            .map(|&(t, a)| ((t / dt).round() as usize, a.re))
            .collect();
        if let Some(&(_, re)) = boundaries.iter().find(|(_, re)| !(re.is_finite() && *re > 0.0)) {
            return Err(Error::InvalidParameter(format!("Reynolds number {re} must be > 0")));
        }
        let re_at = |step: usize| {
            let idx = boundaries.partition_point(|&(s, _)| s <= step);
            boundaries[idx.saturating_sub(1)].1
        };

        let bound = self.params.blowup_bound;
        let mut q = *q0.as_array();
        let mut traj = Trajectory::with_capacity(n_samples + 1);
        traj.push(0.0, *q0, ControlAction::new(re_at(0)));
        for step in 0..n_steps {
            q = self.rk4(&q, re_at(step), dt);
            if let Some(mode) = q.iter().position(|x| !(x.abs() <= bound)) {
                return Err(Error::BlowUp {
                    time: (step + 1) as f64 * dt,
                    mode: mode + 1,
                    value: q[mode],
                    bound,
                });
            }
            if (step + 1) % per_sample == 0 {
                let sample = (step + 1) / per_sample;
                traj.push(
                    sample as f64 * self.params.sample_dt,
                    StateVector::new_unchecked(q),
                    ControlAction::new(re_at(step + 1)),
                );
            }
        }
        Ok(traj)
    }
}
