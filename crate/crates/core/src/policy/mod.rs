//! Logistic selection policies over clauses (high level) and words (low level).

pub mod high;
pub mod low;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::ops;

/// Binary logistic policy `P(select | s) = sigma(w . s + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticPolicy {
    pub weight: Vec<f64>,
    pub bias: f64,
}

/// Gradient of some objective with respect to a [`LogisticPolicy`].
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGradient {
    pub weight: Vec<f64>,
    pub bias: f64,
}

impl PolicyGradient {
    pub fn zeros(dim: usize) -> Self {
        PolicyGradient {
            weight: vec![0.0; dim],
            bias: 0.0,
        }
    }

    pub fn norm(&self) -> f64 {
        (ops::dot(&self.weight, &self.weight) + self.bias * self.bias).sqrt()
    }

    /// Rescales so the norm is at most `max_norm`.
    pub fn clip(&mut self, max_norm: f64) {
        let n = self.norm();
        if n > max_norm && n > 0.0 {
            let f = max_norm / n;
            self.weight.iter_mut().for_each(|w| *w *= f);
            self.bias *= f;
        }
    }

    pub fn is_zero(&self) -> bool {
        self.bias == 0.0 && self.weight.iter().all(|&w| w == 0.0)
    }
}

impl LogisticPolicy {
    pub fn zeros(dim: usize) -> Self {
        LogisticPolicy {
            weight: vec![0.0; dim],
            bias: 0.0,
        }
    }

    pub fn uniform<R: Rng + ?Sized>(dim: usize, bound: f64, rng: &mut R) -> Self {
        LogisticPolicy {
            weight: (0..dim).map(|_| rng.gen_range(-bound..bound)).collect(),
            bias: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.weight.len()
    }

    pub fn logit(&self, state: &[f64]) -> Result<f64> {
        if state.len() != self.weight.len() {
            return Err(Error::shape(
                "policy",
                format!("weight 1x{}", self.weight.len()),
                format!("state {}", state.len()),
            ));
        }
        Ok(ops::dot(&self.weight, state) + self.bias)
    }

    /// Probability of choosing 1 (select).
    pub fn prob(&self, state: &[f64]) -> Result<f64> {
        Ok(ops::sigmoid(self.logit(state)?))
    }

    /// `grad log pi(choice | state)` = `(choice - p) * [state, 1]`.
    pub fn score(&self, state: &[f64], choice: bool, prob: f64) -> PolicyGradient {
        let c = if choice { 1.0 } else { 0.0 } - prob;
        PolicyGradient {
            weight: state.iter().map(|s| c * s).collect(),
            bias: c,
        }
    }

    /// Gradient ascent step `theta += lr * grad`.
    pub fn ascend(&mut self, grad: &PolicyGradient, lr: f64) -> Result<()> {
        if grad.weight.len() != self.weight.len() {
            return Err(Error::shape(
                "sgd_step",
                format!("params {}", self.weight.len()),
                format!("grad {}", grad.weight.len()),
            ));
        }
        ops::axpy(lr, &grad.weight, &mut self.weight);
        self.bias += lr * grad.bias;
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.bias.is_finite() && self.weight.iter().all(|w| w.is_finite())
    }
}

/// Probability of the realised choice under a Bernoulli(`prob_one`).
pub fn choice_prob(prob_one: f64, choice: bool) -> f64 {
    if choice {
        prob_one
    } else {
        1.0 - prob_one
    }
}

/// Bernoulli draw: `u < prob` for `u ~ U[0, 1)`.
pub fn sample_choice<R: Rng + ?Sized>(prob: f64, rng: &mut R) -> bool {
    rng.gen::<f64>() < prob
}

/// Deterministic decode; ties select.
pub fn greedy_choice(prob: f64) -> bool {
    prob >= 0.5
}

/// How choices are made while rolling a policy forward.
pub enum Decision<'a, R: Rng + ?Sized> {
    Sample(&'a mut R),
    Greedy,
    /// Replays a fixed choice sequence.
    Forced(&'a [bool]),
}

impl<R: Rng + ?Sized> Decision<'_, R> {
    pub fn choose(&mut self, step: usize, prob: f64) -> Result<bool> {
        match self {
            Decision::Sample(rng) => Ok(sample_choice(prob, *rng)),
            Decision::Greedy => Ok(greedy_choice(prob)),
            Decision::Forced(mask) => mask.get(step).copied().ok_or_else(|| {
                Error::shape("forced decisions", format!("{} entries", mask.len()), format!("step {step}"))
            }),
        }
    }
}

/// Plain SGD ascent, the update rule for both policy objectives.
pub fn sgd_step(policy: &mut LogisticPolicy, grad: &PolicyGradient, lr: f64) -> Result<()> {
    policy.ascend(grad, lr)
}
