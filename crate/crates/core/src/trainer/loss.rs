//! Per-document cross-entropy losses recorded on a tape.
//!
//! Each function returns one loss node per query. The L2 term is not
//! included; [`l2_penalty`] gives its value and the optimiser adds its
//! gradient.

use rand::Rng;

use crate::embeddings::Embeddings;
use crate::error::Result;
use crate::lstm::{Lstm, LstmState, TracedState};
use crate::model::{Example, Model};
use crate::numeric::{ParamId, ParamStore, Tape, Var};
use crate::predictor::Predictor;

/// Inverted dropout on an input vector. A zero rate records nothing.
pub fn dropout<R: Rng + ?Sized>(tape: &mut Tape<'_>, x: Var, rate: f64, rng: &mut R) -> Result<Var> {
    if rate == 0.0 {
        return Ok(x);
    }
    let keep = 1.0 / (1.0 - rate);
    let factors = (0..tape.value(x).len())
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect();
    tape.scale(x, factors)
}

/// `(weight / 2) * sum ||p||^2` over `params`.
pub fn l2_penalty(store: &ParamStore, params: &[ParamId], weight: f64) -> f64 {
    let sq: f64 = params
        .iter()
        .flat_map(|&id| store.get(id).data().iter())
        .map(|x| x * x)
        .sum();
    0.5 * weight * sq
}

/// Parameter handles of a model, detached from the store so a tape can
/// borrow the store while these are in use.
#[derive(Debug, Clone, Copy)]
pub struct Encoders {
    pub embeddings: Embeddings,
    pub word: Lstm,
    pub clause: Lstm,
    pub predictor: Predictor,
    pub dim: usize,
}

/// Which words of each clause and which clauses feed the document loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub clauses: Vec<bool>,
    pub words: Vec<Vec<bool>>,
}

impl Encoders {
    pub fn of(model: &Model) -> Self {
        Encoders {
            embeddings: model.embeddings,
            word: model.word_encoder,
            clause: model.clause_encoder,
            predictor: model.predictor,
            dim: model.dim(),
        }
    }

    fn zero(&self, tape: &mut Tape<'_>) -> TracedState {
        TracedState::constant(tape, &LstmState::zeros(self.dim))
    }

    /// Word encoder over every word of the document, clause head on the
    /// final hidden state.
    pub fn word_stage<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_>,
        ex: &Example,
        rate: f64,
        rng: &mut R,
    ) -> Result<Vec<Var>> {
        let mut state = self.zero(tape);
        for w in ex.words() {
            let x = self.embeddings.lookup_traced(tape, w)?;
            let x = dropout(tape, x, rate, rng)?;
            state = self.word.step_traced(tape, &state, x)?;
        }
        let logits = self.predictor.clause.logits_traced(tape, state.hidden)?;
        ex.queries
            .iter()
            .map(|q| tape.softmax_cross_entropy(logits, q.rating))
            .collect()
    }

    /// Clause encoder over fixed clause vectors, document head on the
    /// clause state joined with a fixed word state.
    pub fn clause_stage<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_>,
        ex: &Example,
        vectors: &[Vec<f64>],
        word_state: &[f64],
        rate: f64,
        rng: &mut R,
    ) -> Result<Vec<Var>> {
        let mut state = self.zero(tape);
        for v in vectors {
            let x = tape.constant(v.clone());
            let x = dropout(tape, x, rate, rng)?;
            state = self.clause.step_traced(tape, &state, x)?;
        }
        let w = tape.constant(word_state.to_vec());
        let z = tape.concat(&[state.hidden, w])?;
        let logits = self.predictor.document.logits_traced(tape, z)?;
        ex.queries
            .iter()
            .map(|q| tape.softmax_cross_entropy(logits, q.rating))
            .collect()
    }

    /// Document head loss for one selection per query. Clause vectors are
    /// fixed; word embeddings and both encoders are traced. Queries with no
    /// selected clause contribute nothing.
    pub fn selection(
        &self,
        tape: &mut Tape<'_>,
        ex: &Example,
        vectors: &[Vec<f64>],
        selections: &[Selection],
        reset_words: bool,
    ) -> Result<Vec<Var>> {
        let mut out = Vec::new();
        for (q, sel) in ex.queries.iter().zip(selections) {
            if !sel.clauses.iter().any(|&o| o) {
                continue;
            }
            let mut clause_state = self.zero(tape);
            let mut word_state = self.zero(tape);
            for (i, &o) in sel.clauses.iter().enumerate() {
                if !o {
                    continue;
                }
                let v = tape.constant(vectors[i].clone());
                clause_state = self.clause.step_traced(tape, &clause_state, v)?;
                if reset_words {
                    word_state = self.zero(tape);
                }
                for (&w, &keep) in ex.clauses[i].iter().zip(&sel.words[i]) {
                    if keep {
                        let x = self.embeddings.lookup_traced(tape, w)?;
                        word_state = self.word.step_traced(tape, &word_state, x)?;
                    }
                }
            }
            let z = tape.concat(&[clause_state.hidden, word_state.hidden])?;
            let logits = self.predictor.document.logits_traced(tape, z)?;
            out.push(tape.softmax_cross_entropy(logits, q.rating)?);
        }
        Ok(out)
    }
}
