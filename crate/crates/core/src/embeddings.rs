//! Vocabulary, word embedding table and keyword-averaged aspect vectors.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Matrix, ParamId, ParamStore, Tape, Var};

pub const UNK_TOKEN: &str = "<unk>";
pub const UNK_ID: u32 = 0;

/// Half-width of the uniform range for freshly initialised rows.
pub const INIT_RANGE: f64 = 0.1;

/// Dense token ids, with id 0 reserved for unknown tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocab {
    pub fn new() -> Self {
        let mut v = Vocab {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        v.insert(UNK_TOKEN);
        v
    }

    /// Builds a vocabulary in first-appearance order.
    pub fn from_tokens<'a, I: IntoIterator<Item = &'a str>>(tokens: I) -> Self {
        let mut v = Vocab::new();
        for t in tokens {
            v.insert(t);
        }
        v
    }

    pub fn insert(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// Id for `token`, falling back to the unknown id.
    pub fn id(&self, token: &str) -> u32 {
        self.get(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Handle to the `|V| x d` embedding matrix inside a parameter store.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Embeddings {
    pub table: ParamId,
    pub dim: usize,
}

impl Embeddings {
    pub fn register(store: &mut ParamStore, table: Matrix) -> Self {
        let dim = table.cols();
        Embeddings {
            table: store.add("embeddings", table),
            dim,
        }
    }

    pub fn bind(store: &ParamStore) -> Result<Self> {
        let table = store
            .find("embeddings")
            .ok_or_else(|| Error::domain("missing parameter embeddings"))?;
        Ok(Embeddings {
            table,
            dim: store.get(table).cols(),
        })
    }

    pub fn vocab_size(&self, store: &ParamStore) -> usize {
        store.get(self.table).rows()
    }

    fn check_id(&self, store: &ParamStore, id: u32) -> Result<()> {
        let n = self.vocab_size(store);
        if id as usize >= n {
            return Err(Error::domain(format!(
                "token id {id} outside vocabulary of {n}"
            )));
        }
        Ok(())
    }

    pub fn lookup<'s>(&self, store: &'s ParamStore, id: u32) -> Result<&'s [f64]> {
        self.check_id(store, id)?;
        Ok(store.get(self.table).row(id as usize))
    }

    pub fn lookup_traced(&self, tape: &mut Tape<'_>, id: u32) -> Result<Var> {
        self.check_id(tape.params(), id)?;
        tape.row(self.table, id as usize)
    }

    /// Elementwise mean of the keyword rows.
    pub fn aspect_embedding(&self, store: &ParamStore, keywords: &[u32]) -> Result<Vec<f64>> {
        if keywords.is_empty() {
            return Err(Error::domain("aspect needs at least one keyword"));
        }
        let mut sum = vec![0.0; self.dim];
        for &k in keywords {
            for (s, x) in sum.iter_mut().zip(self.lookup(store, k)?) {
                *s += x;
            }
        }
        let n = keywords.len() as f64;
        Ok(sum.into_iter().map(|s| s / n).collect())
    }
}

/// A rated facet with its keyword list and derived embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspectSpec {
    pub name: String,
    pub keywords: Vec<String>,
    pub embedding: Vec<f64>,
}

impl AspectSpec {
    pub fn new(
        name: impl Into<String>,
        keywords: Vec<String>,
        vocab: &Vocab,
        store: &ParamStore,
        emb: &Embeddings,
    ) -> Result<Self> {
        let name = name.into();
        if keywords.is_empty() {
            return Err(Error::domain(format!("aspect {name} has no keywords")));
        }
        let ids: Vec<u32> = keywords.iter().map(|k| vocab.id(k)).collect();
        let embedding = emb.aspect_embedding(store, &ids)?;
        Ok(AspectSpec {
            name,
            keywords,
            embedding,
        })
    }

    pub fn refresh(&mut self, vocab: &Vocab, store: &ParamStore, emb: &Embeddings) -> Result<()> {
        let ids: Vec<u32> = self.keywords.iter().map(|k| vocab.id(k)).collect();
        self.embedding = emb.aspect_embedding(store, &ids)?;
        Ok(())
    }
}

/// An embedding matrix plus a record of which rows came from a file.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub matrix: Matrix,
    pub from_file: Vec<bool>,
}

impl EmbeddingTable {
    pub fn random<R: Rng + ?Sized>(vocab: &Vocab, dim: usize, rng: &mut R) -> Self {
        EmbeddingTable {
            matrix: Matrix::uniform(vocab.len(), dim, INIT_RANGE, rng),
            from_file: vec![false; vocab.len()],
        }
    }

    pub fn random_rows(&self) -> usize {
        self.from_file.iter().filter(|&&f| !f).count()
    }
}

/// Reads `token v1 ... vd` lines. Tokens outside the vocabulary are ignored;
/// vocabulary rows missing from the file keep their random initialisation.
pub fn load_embeddings<R: Rng + ?Sized>(
    path: &Path,
    vocab: &Vocab,
    dim: usize,
    rng: &mut R,
) -> Result<EmbeddingTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&text, &path.display().to_string(), vocab, dim, rng)
}

pub fn parse_embeddings<R: Rng + ?Sized>(
    text: &str,
    source: &str,
    vocab: &Vocab,
    dim: usize,
    rng: &mut R,
) -> Result<EmbeddingTable> {
    let mut table = EmbeddingTable::random(vocab, dim, rng);
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let token = fields.next().unwrap_or_default();
        let values = fields
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| Error::format(source, lineno + 1, format!("bad float {f:?}: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != dim {
            return Err(Error::format(
                source,
                lineno + 1,
                format!("expected {dim} values for {token:?}, found {}", values.len()),
            ));
        }
        if let Some(id) = vocab.get(token) {
            table.matrix.row_mut(id as usize).copy_from_slice(&values);
            table.from_file[id as usize] = true;
        }
    }
    Ok(table)
}
