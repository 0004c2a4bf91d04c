//! Running both policies over one `(document, aspect)` query.
//!
//! The word encoder state is threaded through every selected clause; the
//! document representation pairs the clause encoder's final hidden state
//! with the word encoder's state after the last selected clause.

use rand::Rng;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::lstm::{Lstm, LstmState};
use crate::model::{Model, Policies};
use crate::policy::high::{self, cosine_reward, high_state, option_prob, HighStep, HighTrajectory};
use crate::policy::low::{self, run_clause, LowTrajectory};
use crate::policy::{Decision, LogisticPolicy};
use crate::predictor::{document_representation, fallback_random_rating, Head, Prediction};

/// Where the reward signals come from.
pub trait Rewards {
    /// Per-step word-level reward of a selected clause.
    fn word_reward(&self, clause_prob: f64, selected: usize, len: usize, cfg: &Config) -> Result<f64> {
        low::low_reward(clause_prob, selected, len, cfg)
    }

    /// Per-clause returns of a complete trajectory.
    fn option_rewards(&self, traj: &HighTrajectory, final_prob: f64, cfg: &Config) -> Result<Vec<f64>> {
        high::high_rewards(traj, final_prob, cfg)
    }
}

/// Rewards driven by the rating predictor.
#[derive(Debug, Clone, Copy, Default)]
pub struct PredictorRewards;

impl Rewards for PredictorRewards {}

/// How options and actions are chosen.
pub enum Decode<'a, R: Rng + ?Sized> {
    Sample(&'a mut R),
    Greedy,
    /// Replays fixed clause options and per-clause word actions.
    Forced {
        options: &'a [bool],
        words: &'a [Vec<bool>],
    },
}

impl<R: Rng + ?Sized> Decode<'_, R> {
    fn option(&mut self, i: usize, prob: f64) -> Result<bool> {
        match self {
            Decode::Sample(rng) => Decision::Sample(&mut **rng).choose(i, prob),
            Decode::Greedy => Decision::<R>::Greedy.choose(i, prob),
            Decode::Forced { options, .. } => Decision::<R>::Forced(options).choose(i, prob),
        }
    }

    fn words(&mut self, clause: usize) -> Result<Decision<'_, R>> {
        Ok(match self {
            Decode::Sample(rng) => Decision::Sample(&mut **rng),
            Decode::Greedy => Decision::Greedy,
            Decode::Forced { words, .. } => Decision::Forced(words.get(clause).ok_or_else(|| {
                Error::shape("forced word masks", format!("{} clauses", words.len()), format!("clause {clause}"))
            })?),
        })
    }
}

/// Everything a rollout reads. Nothing here is mutated.
#[derive(Clone, Copy)]
pub struct Context<'a> {
    pub model: &'a Model,
    pub config: &'a Config,
    pub clause_vectors: &'a [Vec<f64>],
    pub words: &'a [Vec<u32>],
    pub aspect: &'a [f64],
    pub gold: usize,
}

impl<'a> Context<'a> {
    pub fn n_clauses(&self) -> usize {
        self.words.len()
    }

    fn embedded(&self, clause: usize) -> Result<Vec<&'a [f64]>> {
        self.words[clause].iter().map(|&w| self.model.word(w)).collect()
    }

    /// Runs the word policy over one clause from `incoming` and attaches
    /// the word-level reward.
    pub fn run_words<R: Rng + ?Sized>(
        &self,
        clause: usize,
        incoming: &LstmState,
        policy: &LogisticPolicy,
        decision: &mut Decision<'_, R>,
        rewards: &dyn Rewards,
    ) -> Result<(LowTrajectory, LstmState)> {
        let words = self.embedded(clause)?;
        let m = self.model;
        let (mut traj, out) = run_clause(&words, incoming, &m.word_encoder, &m.store, policy, decision)?;
        let prob = m
            .predictor
            .delay_prob(&m.store, &out.hidden, self.gold, Head::Clause, self.config.prob_floor)?;
        traj.set_reward(rewards.word_reward(prob, traj.selected(), traj.len(), self.config)?);
        Ok((traj, out))
    }
}

/// A finished query rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub traj: HighTrajectory,
    /// Return from every clause onward.
    pub rewards: Vec<f64>,
    /// Clause state joined with word state.
    pub representation: Vec<f64>,
    /// Predictor probability of the gold rating given the representation.
    pub final_prob: f64,
}

impl Episode {
    pub fn selected_clauses(&self) -> usize {
        self.traj.selected()
    }

    /// The first clause's return, used for baselines and reward curves.
    pub fn total_reward(&self) -> f64 {
        self.rewards.first().copied().unwrap_or(0.0)
    }

    pub fn options(&self) -> Vec<bool> {
        self.traj.options()
    }

    /// Per-clause word actions; all false for discarded clauses.
    pub fn word_masks(&self, words: &[Vec<u32>]) -> Vec<Vec<bool>> {
        self.traj
            .low
            .iter()
            .zip(words)
            .map(|(l, w)| match l {
                Some(t) => t.actions(),
                None => vec![false; w.len()],
            })
            .collect()
    }

    /// Argmax rating, or a uniform draw when no clause was selected.
    /// The boolean reports the fallback.
    pub fn predict<R: Rng + ?Sized>(&self, model: &Model, rng: &mut R) -> Result<(usize, bool)> {
        if self.selected_clauses() == 0 {
            return Ok((fallback_random_rating(rng, model.classes()), true));
        }
        let Prediction { rating, .. } = model.predictor.predict(&model.store, &self.representation)?;
        Ok((rating, false))
    }
}

/// Clause-by-clause rollout so callers can act between clauses.
pub struct Rollout<'a> {
    ctx: Context<'a>,
    clause_state: LstmState,
    word_state: LstmState,
    traj: HighTrajectory,
}

impl<'a> Rollout<'a> {
    pub fn new(ctx: Context<'a>) -> Self {
        let d = ctx.model.dim();
        Rollout {
            ctx,
            clause_state: LstmState::zeros(d),
            word_state: LstmState::zeros(d),
            traj: HighTrajectory::new(ctx.n_clauses()),
        }
    }

    pub fn context(&self) -> Context<'a> {
        self.ctx
    }

    pub fn steps_taken(&self) -> usize {
        self.traj.steps.len()
    }

    pub fn is_done(&self) -> bool {
        self.traj.steps.len() == self.ctx.n_clauses()
    }

    /// Word encoder state the next selected clause would start from.
    pub fn word_entry_state(&self) -> LstmState {
        if self.ctx.config.reset_low_per_clause {
            LstmState::zeros(self.ctx.model.dim())
        } else {
            self.word_state.clone()
        }
    }

    /// Word trajectory of the most recent clause, if it was selected.
    pub fn last_words(&self) -> Option<&LowTrajectory> {
        self.traj.low.last().and_then(Option::as_ref)
    }

    /// Decides the next clause and, if selected, runs the word policy on it.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        policies: &Policies,
        decode: &mut Decode<'_, R>,
        rewards: &dyn Rewards,
    ) -> Result<bool> {
        let i = self.traj.steps.len();
        if i >= self.ctx.n_clauses() {
            return Err(Error::State("rollout already finished".into()));
        }
        let m = self.ctx.model;
        let v = &self.ctx.clause_vectors[i];
        let state = high_state(&self.clause_state, v, self.ctx.aspect)?;
        let prob = option_prob(&state, &policies.high)?;
        let option = decode.option(i, prob)?;
        let low = if option {
            self.clause_state = m.clause_encoder.step(&m.store, &self.clause_state, v)?;
            let entry = self.word_entry_state();
            let (traj, out) = self
                .ctx
                .run_words(i, &entry, &policies.low, &mut decode.words(i)?, rewards)?;
            self.word_state = out;
            Some(traj)
        } else {
            self.clause_state = Lstm::skip(&self.clause_state);
            None
        };
        let cos_log = cosine_reward(self.ctx.aspect, &self.clause_state.hidden, self.ctx.config.cosine_eps);
        self.traj.steps.push(HighStep {
            state,
            option,
            prob,
            cos_log,
        });
        self.traj.low.push(low);
        Ok(option)
    }

    pub fn finish(self, rewards: &dyn Rewards) -> Result<Episode> {
        if !self.is_done() {
            return Err(Error::State(format!(
                "rollout stopped after {} of {} clauses",
                self.traj.steps.len(),
                self.ctx.n_clauses()
            )));
        }
        let m = self.ctx.model;
        let z = document_representation(&self.clause_state.hidden, &self.word_state.hidden)?;
        let final_prob = m
            .predictor
            .delay_prob(&m.store, &z, self.ctx.gold, Head::Document, self.ctx.config.prob_floor)?;
        let r = rewards.option_rewards(&self.traj, final_prob, self.ctx.config)?;
        Ok(Episode {
            traj: self.traj,
            rewards: r,
            representation: z,
            final_prob,
        })
    }
}

/// Full rollout in one call.
pub fn rollout<R: Rng + ?Sized>(
    ctx: Context<'_>,
    policies: &Policies,
    decode: &mut Decode<'_, R>,
    rewards: &dyn Rewards,
) -> Result<Episode> {
    let mut r = Rollout::new(ctx);
    while !r.is_done() {
        r.step(policies, decode, rewards)?;
    }
    r.finish(rewards)
}
