//! Corpus files, splits and the vocabulary built from them.
//!
//! A corpus is a JSON-lines file. The first line is a header
//! `{"aspects_file": ..., "num_classes": C, "split_seed": S}`; every later
//! line is one document. The aspects file lists one aspect per line as
//! `name keyword keyword ...`.

pub mod synthetic;

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embeddings::Vocab;
use crate::error::{Error, Result};
use crate::segmentation::{Clause, Segmenter};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AspectDef {
    pub name: String,
    pub keywords: Vec<String>,
}

/// One `(aspect, rating)` query on a document, with optional planted
/// selections.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AspectLabel {
    pub name: String,
    pub rating: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_clause_mask: Option<Vec<bool>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_word_masks: Option<Vec<Vec<bool>>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub clauses: Vec<Clause>,
    pub aspects: Vec<AspectLabel>,
}

impl Document {
    pub fn label(&self, aspect: &str) -> Option<&AspectLabel> {
        self.aspects.iter().find(|a| a.name == aspect)
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.clauses
            .iter()
            .flat_map(|c| c.tokens.iter().map(String::as_str))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            _ => Err(Error::Usage(format!("unknown split {s:?}"))),
        }
    }
}

/// Document indices per split, each in corpus order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub dev: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub aspects: Vec<AspectDef>,
    pub classes: usize,
    pub split_seed: u64,
    pub documents: Vec<Document>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    aspects_file: String,
    num_classes: usize,
    #[serde(default)]
    split_seed: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    clauses: Option<Vec<Vec<String>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    aspects: Vec<AspectLabel>,
}

impl Corpus {
    pub fn aspect_index(&self, name: &str) -> Option<usize> {
        self.aspects.iter().position(|a| a.name == name)
    }

    /// 8:1:1 partition after a seeded shuffle. Dev and test each get
    /// `floor(n / 10)` documents; the remainder goes to train.
    pub fn splits(&self) -> Splits {
        let n = self.documents.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(self.split_seed));
        let held = n / 10;
        let mut dev = order[..held].to_vec();
        let mut test = order[held..2 * held].to_vec();
        let mut train = order[2 * held..].to_vec();
        dev.sort_unstable();
        test.sort_unstable();
        train.sort_unstable();
        Splits { train, dev, test }
    }

    pub fn split(&self, which: Split) -> Vec<&Document> {
        let s = self.splits();
        let idx = match which {
            Split::Train => s.train,
            Split::Dev => s.dev,
            Split::Test => s.test,
        };
        idx.into_iter().map(|i| &self.documents[i]).collect()
    }

    /// Aspect keywords first, then training tokens in order of appearance.
    pub fn build_vocab(&self) -> Vocab {
        let mut vocab = Vocab::new();
        for a in &self.aspects {
            for k in &a.keywords {
                vocab.insert(k);
            }
        }
        for doc in self.split(Split::Train) {
            for t in doc.tokens() {
                vocab.insert(t);
            }
        }
        vocab
    }

    pub fn find(&self, id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.id == id)
    }
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let dir = path.parent().unwrap_or(Path::new("."));
    parse_corpus(&text, &path.display().to_string(), |name| {
        let p = dir.join(name);
        let body = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        parse_aspects(&body, &p.display().to_string())
    })
}

/// Parses corpus text; `aspects` resolves the header's aspects file name.
pub fn parse_corpus<F>(text: &str, source: &str, aspects: F) -> Result<Corpus>
where
    F: FnOnce(&str) -> Result<Vec<AspectDef>>,
{
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());
    let (hline, htext) = lines
        .next()
        .ok_or_else(|| Error::domain(format!("empty corpus: {source}")))?;
    let header: Header = serde_json::from_str(htext)
        .map_err(|e| Error::format(source, hline, format!("bad header: {e}")))?;
    if header.num_classes < 2 {
        return Err(Error::format(source, hline, "num_classes must be at least 2"));
    }
    let aspects = aspects(&header.aspects_file)?;
    let names: HashSet<&str> = aspects.iter().map(|a| a.name.as_str()).collect();
    let segmenter = Segmenter::default();
    let mut documents = Vec::new();
    let mut ids = HashSet::new();
    for (lineno, line) in lines {
        let err = |msg: String| Error::format(source, lineno, msg);
        let rec: Record = serde_json::from_str(line).map_err(|e| err(format!("bad record: {e}")))?;
        let clauses = match (rec.clauses, rec.text) {
            (Some(cs), None) => cs.into_iter().map(Clause::new).collect::<Vec<_>>(),
            (None, Some(t)) => segmenter
                .split_clauses(&t)
                .map_err(|e| err(format!("field text: {e}")))?,
            (Some(_), Some(_)) => return Err(err("fields clauses and text are exclusive".into())),
            (None, None) => return Err(err("missing field clauses or text".into())),
        };
        let doc = Document {
            id: rec.id,
            clauses,
            aspects: rec.aspects,
        };
        validate_document(&doc, header.num_classes, &names).map_err(err)?;
        if !ids.insert(doc.id.clone()) {
            return Err(err(format!("duplicate document id {:?}", doc.id)));
        }
        documents.push(doc);
    }
    if documents.is_empty() {
        return Err(Error::domain(format!("empty corpus: {source}")));
    }
    Ok(Corpus {
        aspects,
        classes: header.num_classes,
        split_seed: header.split_seed,
        documents,
    })
}

fn validate_document(
    doc: &Document,
    classes: usize,
    names: &HashSet<&str>,
) -> std::result::Result<(), String> {
    if doc.clauses.is_empty() {
        return Err("field clauses: document has no clauses".into());
    }
    if let Some(i) = doc.clauses.iter().position(Clause::is_empty) {
        return Err(format!("field clauses: clause {i} is empty"));
    }
    if doc.aspects.is_empty() {
        return Err("field aspects: no aspect queries".into());
    }
    let mut seen = HashSet::new();
    for a in &doc.aspects {
        if !names.contains(a.name.as_str()) {
            return Err(format!("field aspects: unknown aspect {:?}", a.name));
        }
        if !seen.insert(a.name.as_str()) {
            return Err(format!("field aspects: aspect {:?} repeated", a.name));
        }
        if a.rating == 0 || a.rating > classes {
            return Err(format!(
                "field rating: {} outside [1, {classes}] for aspect {:?}",
                a.rating, a.name
            ));
        }
        if let Some(m) = &a.gold_clause_mask {
            if m.len() != doc.clauses.len() {
                return Err(format!(
                    "field gold_clause_mask: {} entries for {} clauses",
                    m.len(),
                    doc.clauses.len()
                ));
            }
        }
        if let Some(wm) = &a.gold_word_masks {
            if wm.len() != doc.clauses.len() {
                return Err(format!(
                    "field gold_word_masks: {} entries for {} clauses",
                    wm.len(),
                    doc.clauses.len()
                ));
            }
            for (i, (m, c)) in wm.iter().zip(&doc.clauses).enumerate() {
                if m.len() != c.len() {
                    return Err(format!(
                        "field gold_word_masks: clause {i} has {} words, mask {}",
                        c.len(),
                        m.len()
                    ));
                }
            }
        }
    }
    Ok(())
}

pub fn parse_aspects(text: &str, source: &str) -> Result<Vec<AspectDef>> {
    let mut out: Vec<AspectDef> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let name = parts.next().unwrap_or_default().to_string();
        let keywords: Vec<String> = parts.map(str::to_string).collect();
        if keywords.is_empty() {
            return Err(Error::format(source, i + 1, format!("aspect {name:?} has no keywords")));
        }
        if out.iter().any(|a| a.name == name) {
            return Err(Error::format(source, i + 1, format!("aspect {name:?} defined twice")));
        }
        out.push(AspectDef { name, keywords });
    }
    if out.is_empty() {
        return Err(Error::domain(format!("{source}: no aspects defined")));
    }
    Ok(out)
}

pub fn aspects_to_string(aspects: &[AspectDef]) -> String {
    aspects
        .iter()
        .map(|a| format!("{} {}\n", a.name, a.keywords.join(" ")))
        .collect()
}

/// Corpus text with clauses written as token lists.
pub fn corpus_to_string(corpus: &Corpus, aspects_file: &str) -> String {
    let header = Header {
        aspects_file: aspects_file.to_string(),
        num_classes: corpus.classes,
        split_seed: corpus.split_seed,
    };
    let mut out = serde_json::to_string(&header).expect("header serialises");
    out.push('\n');
    for doc in &corpus.documents {
        let rec = Record {
            id: doc.id.clone(),
            clauses: Some(doc.clauses.iter().map(|c| c.tokens.clone()).collect()),
            text: None,
            aspects: doc.aspects.clone(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("record serialises"));
        out.push('\n');
    }
    out
}

/// Writes `corpus.jsonl` and `aspects.txt` into `dir`; returns the corpus path.
pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let aspects_path = dir.join("aspects.txt");
    fs::write(&aspects_path, aspects_to_string(&corpus.aspects))
        .map_err(|e| Error::io(&aspects_path, e))?;
    let path = dir.join("corpus.jsonl");
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    f.write_all(corpus_to_string(corpus, "aspects.txt").as_bytes())
        .map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
