//! Softmax rating decoders.
//!
//! Two heads share the rating scale: the document head reads
//! `z = h_clauses ++ h_words` (width 2d) and produces the final rating; the
//! clause head reads a single word-encoder state (width d) and supplies the
//! per-clause delay reward.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::{ops, Matrix, ParamId, ParamStore, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decoder {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub classes: usize,
}

impl Decoder {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        classes: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (input_dim as f64).sqrt();
        Decoder {
            weight: store.add(
                format!("{name}.weight"),
                Matrix::uniform(classes, input_dim, bound, rng),
            ),
            bias: store.add(format!("{name}.bias"), Matrix::zeros(classes, 1)),
            input_dim,
            classes,
        }
    }

    pub fn bind(store: &ParamStore, name: &str) -> Result<Self> {
        let find = |suffix: &str| {
            let n = format!("{name}.{suffix}");
            store
                .find(&n)
                .ok_or_else(|| Error::domain(format!("missing parameter {n}")))
        };
        let weight = find("weight")?;
        let bias = find("bias")?;
        let (classes, input_dim) = store.get(weight).shape();
        Ok(Decoder {
            weight,
            bias,
            input_dim,
            classes,
        })
    }

    pub fn logits(&self, store: &ParamStore, x: &[f64]) -> Result<Vec<f64>> {
        store
            .get(self.weight)
            .affine(x, store.get(self.bias).data())
    }

    pub fn probs(&self, store: &ParamStore, x: &[f64]) -> Result<Vec<f64>> {
        ops::softmax(&self.logits(store, x)?)
    }

    pub fn logits_traced(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        tape.affine(self.weight, x, Some(self.bias))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Document,
    Clause,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probs: Vec<f64>,
    /// 1-based rating; ties go to the lower rating.
    pub rating: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Predictor {
    pub document: Decoder,
    pub clause: Decoder,
}

/// `z = clause_state ++ word_state`
pub fn document_representation(clause_state: &[f64], word_state: &[f64]) -> Result<Vec<f64>> {
    if clause_state.len() != word_state.len() {
        return Err(Error::shape(
            "document_representation",
            format!("clause part {}", clause_state.len()),
            format!("word part {}", word_state.len()),
        ));
    }
    Ok(ops::concat(&[clause_state, word_state]))
}

impl Predictor {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        dim: usize,
        classes: usize,
        rng: &mut R,
    ) -> Self {
        Predictor {
            document: Decoder::register(store, "decoder.document", 2 * dim, classes, rng),
            clause: Decoder::register(store, "decoder.clause", dim, classes, rng),
        }
    }

    pub fn bind(store: &ParamStore) -> Result<Self> {
        Ok(Predictor {
            document: Decoder::bind(store, "decoder.document")?,
            clause: Decoder::bind(store, "decoder.clause")?,
        })
    }

    pub fn classes(&self) -> usize {
        self.document.classes
    }

    fn head(&self, head: Head) -> &Decoder {
        match head {
            Head::Document => &self.document,
            Head::Clause => &self.clause,
        }
    }

    pub fn distribution(&self, store: &ParamStore, x: &[f64], head: Head) -> Result<Vec<f64>> {
        self.head(head).probs(store, x)
    }

    pub fn predict(&self, store: &ParamStore, z: &[f64]) -> Result<Prediction> {
        let probs = self.document.probs(store, z)?;
        let rating = ops::argmax(&probs) + 1;
        Ok(Prediction { probs, rating })
    }

    /// `p(gold | x)` under the chosen head, floored at `floor`.
    pub fn delay_prob(
        &self,
        store: &ParamStore,
        x: &[f64],
        gold: usize,
        head: Head,
        floor: f64,
    ) -> Result<f64> {
        let classes = self.head(head).classes;
        if gold == 0 || gold > classes {
            return Err(Error::domain(format!("rating {gold} outside [1, {classes}]")));
        }
        let probs = self.distribution(store, x, head)?;
        Ok(probs[gold - 1].max(floor))
    }
}

/// Uniform rating in `1..=classes`, used when nothing was selected.
pub fn fallback_random_rating<R: Rng + ?Sized>(rng: &mut R, classes: usize) -> usize {
    rng.gen_range(1..=classes)
}
