//! Receding-horizon control by complete search over discrete action
//! sequences.
//!
//! A candidate fixes one action per control slot for the first `n_slots`
//! slots and no control afterwards. Step `i` of the prediction pairs the
//! action held over it with the state it produces, so the score of a
//! candidate is the mean reward of `horizon_steps` such pairs.
//!
//! The search is a depth-first walk over slots that shares prefix rollouts
//! and abandons a branch once its running score is strictly below the best
//! complete candidate. Rewards are non-positive, so the running score only
//! falls, and an abandoned branch can never win or tie. The result is
//! identical to scoring every candidate.

use super::{Decision, HorizonConfig};
use crate::dynsys::{kinetic_energy, ActionSet, StateVector};
use crate::error::{Error, Result};
use crate::reservoir::Surrogate;
use crate::reward::RewardConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct MpcPlan {
    /// Action index per optimised slot.
    pub sequence: Vec<usize>,
    /// Predicted mean reward of the chosen sequence.
    pub score: f64,
    pub n_event: usize,
    pub n_control: usize,
    pub surrogate_steps: usize,
}

impl MpcPlan {
    pub fn first_index(&self) -> usize {
        self.sequence.first().copied().unwrap_or(0)
    }
}

struct Best {
    score: f64,
    control_slots: usize,
    sequence: Vec<usize>,
    n_event: usize,
    n_control: usize,
}

struct Search<'a> {
    model: &'a dyn Surrogate,
    actions: &'a ActionSet,
    rcfg: &'a RewardConfig,
    n_steps: usize,
    slot_steps: usize,
    n_slots: usize,
    prefix: Vec<usize>,
    best: Option<Best>,
    surrogate_steps: usize,
    /// Scores of the all-uncontrolled and all-controlled candidates, when
    /// they were scored in full.
    baselines: [Option<f64>; 2],
}

/// Running tallies along one branch. `state` is `None` after the
/// prediction diverged; every later step then counts as an event.
#[derive(Clone, Copy)]
struct Cursor {
    state: Option<StateVector>,
    step: usize,
    n_event: usize,
    n_control: usize,
}

impl Search<'_> {
    fn behind_best(&self, c: &Cursor) -> bool {
        match &self.best {
            Some(b) => self.rcfg.average_from_counts(self.n_steps, c.n_event, c.n_control) < b.score,
            None => false,
        }
    }

    /// Advances `c` to step `to` under action `index`; `None` if pruned.
    fn roll(&mut self, mut c: Cursor, index: usize, to: usize) -> Option<Cursor> {
        let a = self.actions.action(index);
        let controlled = self.actions.is_controlled(a);
        while c.step < to {
            c.state = match c.state {
                Some(x) => {
                    self.surrogate_steps += 1;
                    self.model.predict(&x, a)
                }
                None => None,
            };
            let event = match &c.state {
                Some(x) => self.rcfg.is_event(kinetic_energy(x)),
                None => true,
            };
            c.n_event += event as usize;
            c.n_control += controlled as usize;
            c.step += 1;
            if (event || controlled) && self.behind_best(&c) {
                return None;
            }
        }
        Some(c)
    }

    fn visit(&mut self, depth: usize, c: Cursor) {
        if depth == self.n_slots {
            let Some(end) = self.roll(c, 0, self.n_steps) else {
                return;
            };
            self.leaf(end);
            return;
        }
        for index in 0..self.actions.len() {
            let to = ((depth + 1) * self.slot_steps).min(self.n_steps);
            if let Some(next) = self.roll(c, index, to) {
                self.prefix.push(index);
                self.visit(depth + 1, next);
                self.prefix.pop();
            }
        }
    }

    fn leaf(&mut self, c: Cursor) {
        let score = self.rcfg.average_from_counts(self.n_steps, c.n_event, c.n_control);
        let control_slots = self.prefix.iter().filter(|&&i| i != 0).count();
        let last = self.actions.len() - 1;
        if self.prefix.iter().all(|&i| i == 0) {
            self.baselines[0] = Some(score);
        } else if self.prefix.iter().all(|&i| i == last) {
            self.baselines[1] = Some(score);
        }
        // Candidates arrive in lexicographic order, so an equal score with
        // equal control count never replaces the incumbent.
        let better = match &self.best {
            None => true,
            Some(b) => score > b.score || (score == b.score && control_slots < b.control_slots),
        };
        if better {
            self.best = Some(Best {
                score,
                control_slots,
                sequence: self.prefix.clone(),
                n_event: c.n_event,
                n_control: c.n_control,
            });
        }
    }
}

/// Best action sequence over the optimisation window. Ties go to the
/// sequence with fewer controlled slots, then to the lexicographically
/// first in action-index order.
pub fn mpc_plan(
    model: &dyn Surrogate,
    q: &StateVector,
    horizon: &HorizonConfig,
    actions: &ActionSet,
    rcfg: &RewardConfig,
) -> Result<MpcPlan> {
    if actions.len() < 2 {
        return Err(Error::InvalidParameter("complete search needs at least two actions".into()));
    }
    horizon.validate()?;
    let dt = model.dt();
    let mut search = Search {
        model,
        actions,
        rcfg,
        n_steps: horizon.horizon_steps(dt),
        slot_steps: horizon.slot_steps(dt),
        n_slots: horizon.n_slots(),
        prefix: Vec::with_capacity(horizon.n_slots()),
        best: None,
        surrogate_steps: 0,
        baselines: [None, None],
    };
    let start = Cursor {
        state: Some(*q),
        step: 0,
        n_event: 0,
        n_control: 0,
    };
    search.visit(0, start);
    let best = search.best.expect("the first candidate is never pruned");
    debug_assert!(search.baselines.iter().flatten().all(|&s| best.score >= s));
    Ok(MpcPlan {
        sequence: best.sequence,
        score: best.score,
        n_event: best.n_event,
        n_control: best.n_control,
        surrogate_steps: search.surrogate_steps,
    })
}

/// First action of the best sequence.
pub fn mpc_decide(
    model: &dyn Surrogate,
    q: &StateVector,
    horizon: &HorizonConfig,
    actions: &ActionSet,
    rcfg: &RewardConfig,
) -> Result<Decision> {
    let plan = mpc_plan(model, q, horizon, actions, rcfg)?;
    Ok(Decision {
        action: actions.action(plan.first_index()),
        surrogate_steps: plan.surrogate_steps,
    })
}
