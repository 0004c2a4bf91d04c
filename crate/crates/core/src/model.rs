//! Encoder parameters bundled with the vocabulary and aspect vectors.

use rand::Rng;

use crate::data::{AspectDef, Document};
use crate::embeddings::{AspectSpec, Embeddings, Vocab};
use crate::error::{Error, Result};
use crate::lstm::{Lstm, LstmState};
use crate::numeric::{Matrix, ParamId, ParamStore};
use crate::policy::LogisticPolicy;
use crate::predictor::Predictor;

pub const WORD_ENCODER: &str = "lstm_low";
pub const CLAUSE_ENCODER: &str = "lstm_high";

/// One `(aspect, rating)` pair to classify. `aspect` indexes
/// [`Model::aspects`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Query {
    pub aspect: usize,
    pub rating: usize,
}

/// A document mapped to token ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub id: String,
    pub clauses: Vec<Vec<u32>>,
    pub queries: Vec<Query>,
}

impl Example {
    pub fn words(&self) -> impl Iterator<Item = u32> + '_ {
        self.clauses.iter().flatten().copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub store: ParamStore,
    pub vocab: Vocab,
    pub embeddings: Embeddings,
    pub word_encoder: Lstm,
    pub clause_encoder: Lstm,
    pub predictor: Predictor,
    pub aspects: Vec<AspectSpec>,
}

/// Clause and word selection policies.
#[derive(Debug, Clone, PartialEq)]
pub struct Policies {
    pub high: LogisticPolicy,
    pub low: LogisticPolicy,
}

impl Policies {
    pub fn zeros(dim: usize) -> Self {
        Policies {
            high: LogisticPolicy::zeros(4 * dim),
            low: LogisticPolicy::zeros(3 * dim),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.high.is_finite() && self.low.is_finite()
    }
}

impl Model {
    /// Registers fresh encoders around an embedding table whose rows follow
    /// `vocab`. Aspect vectors are the keyword means of `table`.
    pub fn new<R: Rng + ?Sized>(
        vocab: Vocab,
        aspects: &[AspectDef],
        table: Matrix,
        classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if table.rows() != vocab.len() {
            return Err(Error::shape(
                "embedding table",
                format!("vocab {}", vocab.len()),
                format!("{} rows", table.rows()),
            ));
        }
        let dim = table.cols();
        let mut store = ParamStore::new();
        let embeddings = Embeddings::register(&mut store, table);
        let word_encoder = Lstm::register(&mut store, WORD_ENCODER, dim, dim, rng);
        let clause_encoder = Lstm::register(&mut store, CLAUSE_ENCODER, dim, dim, rng);
        let predictor = Predictor::register(&mut store, dim, classes, rng);
        let aspects = aspects
            .iter()
            .map(|a| AspectSpec::new(&a.name, a.keywords.clone(), &vocab, &store, &embeddings))
            .collect::<Result<Vec<_>>>()?;
        Ok(Model {
            store,
            vocab,
            embeddings,
            word_encoder,
            clause_encoder,
            predictor,
            aspects,
        })
    }

    /// Rebinds handles to a store restored from disk.
    pub fn from_parts(store: ParamStore, vocab: Vocab, aspects: Vec<AspectSpec>) -> Result<Self> {
        let embeddings = Embeddings::bind(&store)?;
        let model = Model {
            word_encoder: Lstm::bind(&store, WORD_ENCODER)?,
            clause_encoder: Lstm::bind(&store, CLAUSE_ENCODER)?,
            predictor: Predictor::bind(&store)?,
            embeddings,
            store,
            vocab,
            aspects,
        };
        if model.embeddings.vocab_size(&model.store) != model.vocab.len() {
            return Err(Error::shape(
                "model",
                format!("vocab {}", model.vocab.len()),
                format!("embedding rows {}", model.embeddings.vocab_size(&model.store)),
            ));
        }
        Ok(model)
    }

    pub fn dim(&self) -> usize {
        self.embeddings.dim
    }

    pub fn classes(&self) -> usize {
        self.predictor.classes()
    }

    pub fn aspect_index(&self, name: &str) -> Option<usize> {
        self.aspects.iter().position(|a| a.name == name)
    }

    /// Recomputes aspect vectors from the current keyword rows.
    pub fn refresh_aspects(&mut self) -> Result<()> {
        for a in &mut self.aspects {
            a.refresh(&self.vocab, &self.store, &self.embeddings)?;
        }
        Ok(())
    }

    pub fn encode(&self, doc: &Document) -> Result<Example> {
        let queries = doc
            .aspects
            .iter()
            .map(|l| {
                let aspect = self.aspect_index(&l.name).ok_or_else(|| {
                    Error::domain(format!("document {}: unknown aspect {:?}", doc.id, l.name))
                })?;
                if l.rating == 0 || l.rating > self.classes() {
                    return Err(Error::domain(format!(
                        "document {}: rating {} outside [1, {}]",
                        doc.id,
                        l.rating,
                        self.classes()
                    )));
                }
                Ok(Query {
                    aspect,
                    rating: l.rating,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Example {
            id: doc.id.clone(),
            clauses: doc
                .clauses
                .iter()
                .map(|c| c.tokens.iter().map(|t| self.vocab.id(t)).collect())
                .collect(),
            queries,
        })
    }

    pub fn encode_all<'a, I: IntoIterator<Item = &'a Document>>(&self, docs: I) -> Result<Vec<Example>> {
        docs.into_iter().map(|d| self.encode(d)).collect()
    }

    pub fn word(&self, id: u32) -> Result<&[f64]> {
        self.embeddings.lookup(&self.store, id)
    }

    /// Final word-encoder hidden state over the clause alone, from zero.
    pub fn clause_vector(&self, words: &[u32]) -> Result<Vec<f64>> {
        if words.is_empty() {
            return Err(Error::domain("clause vector of an empty clause"));
        }
        let mut state = LstmState::zeros(self.dim());
        for &w in words {
            state = self.word_encoder.step(&self.store, &state, self.word(w)?)?;
        }
        Ok(state.hidden)
    }

    pub fn clause_vectors(&self, ex: &Example) -> Result<Vec<Vec<f64>>> {
        ex.clauses.iter().map(|c| self.clause_vector(c)).collect()
    }

    /// Word-encoder state after every word of the document, in order.
    pub fn encode_all_words(&self, ex: &Example) -> Result<LstmState> {
        let mut state = LstmState::zeros(self.dim());
        for w in ex.words() {
            state = self.word_encoder.step(&self.store, &state, self.word(w)?)?;
        }
        Ok(state)
    }

    /// Word encoder, embeddings and clause head.
    pub fn word_stage_params(&self) -> Vec<ParamId> {
        vec![
            self.embeddings.table,
            self.word_encoder.weight,
            self.word_encoder.bias,
            self.predictor.clause.weight,
            self.predictor.clause.bias,
        ]
    }

    /// Clause encoder and document head.
    pub fn clause_stage_params(&self) -> Vec<ParamId> {
        vec![
            self.clause_encoder.weight,
            self.clause_encoder.bias,
            self.predictor.document.weight,
            self.predictor.document.bias,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.store.all_finite()
    }
}
