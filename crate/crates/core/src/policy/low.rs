//! Word selection inside a selected clause.

use rand::Rng;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::lstm::{Lstm, LstmState};
use crate::numeric::{ops, ParamStore};

use super::{Decision, LogisticPolicy, PolicyGradient};

/// `s_j = h_{j-1} ++ c_{j-1} ++ w_j`
pub fn low_state(prev: &LstmState, word: &[f64]) -> Result<Vec<f64>> {
    let d = prev.hidden.len();
    for (name, part) in [("cell", &prev.cell[..]), ("word", word)] {
        if part.len() != d {
            return Err(Error::shape(
                "low_state",
                format!("hidden {d}"),
                format!("{name} {}", part.len()),
            ));
        }
    }
    Ok(ops::concat(&[&prev.hidden, &prev.cell, word]))
}

pub fn action_prob(state: &[f64], policy: &LogisticPolicy) -> Result<f64> {
    if state.len() % 3 != 0 {
        return Err(Error::shape(
            "action_prob",
            "state of width 3d",
            format!("width {}", state.len()),
        ));
    }
    policy.prob(state)
}

/// Word-level delay reward, shared by every step of the clause:
/// `l1 * ln p(y | h_last) - l2 * kept / len`.
pub fn low_reward(clause_prob: f64, selected: usize, len: usize, cfg: &Config) -> Result<f64> {
    if len == 0 {
        return Err(Error::domain("word reward for an empty clause"));
    }
    if selected > len {
        return Err(Error::domain(format!("{selected} of {len} words selected")));
    }
    Ok(cfg.lambda_low1 * clause_prob.max(cfg.prob_floor).ln()
        - cfg.lambda_low2 * selected as f64 / len as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LowStep {
    pub state: Vec<f64>,
    pub action: bool,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LowTrajectory {
    pub steps: Vec<LowStep>,
    /// Per-step reward, identical for all steps; `None` until finalised.
    pub reward: Option<f64>,
}

impl LowTrajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Number of kept words.
    pub fn selected(&self) -> usize {
        self.steps.iter().filter(|s| s.action).count()
    }

    pub fn actions(&self) -> Vec<bool> {
        self.steps.iter().map(|s| s.action).collect()
    }

    pub fn set_reward(&mut self, reward: f64) {
        self.reward = Some(reward);
    }

    /// Sum of the per-word rewards, i.e. length times the constant reward.
    pub fn total_reward(&self) -> Result<f64> {
        let r = self
            .reward
            .ok_or_else(|| Error::State("word-level reward not finalised".into()))?;
        Ok(self.steps.iter().map(|_| r).sum())
    }
}

/// Scans the clause's words left to right, choosing and stepping/skipping
/// the word encoder. Returns the trajectory and the carried state.
pub fn run_clause<R: Rng + ?Sized>(
    words: &[&[f64]],
    incoming: &LstmState,
    lstm: &Lstm,
    store: &ParamStore,
    policy: &LogisticPolicy,
    decision: &mut Decision<'_, R>,
) -> Result<(LowTrajectory, LstmState)> {
    let mut state = incoming.clone();
    let mut steps = Vec::with_capacity(words.len());
    for (j, w) in words.iter().enumerate() {
        let s = low_state(&state, w)?;
        let prob = action_prob(&s, policy)?;
        let action = decision.choose(j, prob)?;
        if action {
            state = lstm.step(store, &state, w)?;
        }
        steps.push(LowStep {
            state: s,
            action,
            prob,
        });
    }
    Ok((
        LowTrajectory {
            steps,
            reward: None,
        },
        state,
    ))
}

/// `sum_j (r_j - b) grad log pi(a_j | s_j)`.
pub fn policy_gradient_low(
    traj: &LowTrajectory,
    baseline: f64,
    policy: &LogisticPolicy,
) -> Result<PolicyGradient> {
    let r = traj
        .reward
        .ok_or_else(|| Error::State("word-level reward not finalised".into()))?;
    let adv = r - baseline;
    let mut grad = PolicyGradient::zeros(policy.dim());
    if adv == 0.0 {
        return Ok(grad);
    }
    for step in &traj.steps {
        let score = policy.score(&step.state, step.action, step.prob);
        ops::axpy(adv, &score.weight, &mut grad.weight);
        grad.bias += adv * score.bias;
    }
    Ok(grad)
}
