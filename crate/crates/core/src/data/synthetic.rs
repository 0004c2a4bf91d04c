//! Synthetic review corpora with planted relevant clauses and words.
//!
//! Each queried aspect gets a clause built from one of its keywords, one
//! sentiment word for the gold rating and filler tokens. The rest of the
//! document is noise: clauses about aspects that are not queried, or pure
//! filler.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AspectDef, AspectLabel, Corpus, Document};
use crate::error::{Error, Result};
use crate::segmentation::Clause;

const ASPECT_NAMES: [&str; 8] = [
    "location", "room", "service", "value", "cleanliness", "food", "staff", "quiet",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub documents: usize,
    pub aspects: usize,
    pub classes: usize,
    pub keywords_per_aspect: usize,
    /// Sentiment words per (aspect, rating) pair.
    pub sentiment_words: usize,
    pub filler_words: usize,
    /// Inclusive range of clause counts.
    pub clauses_per_document: (usize, usize),
    /// Inclusive range of nominal clause lengths; the filler count is
    /// derived from this and the noise-word ratio.
    pub words_per_clause: (usize, usize),
    /// Inclusive range of queried aspects per document.
    pub aspects_per_document: (usize, usize),
    /// Fraction of each document's clauses that are noise.
    pub noise_clause_ratio: f64,
    /// Fraction of each clause's nominal length filled with filler tokens.
    pub noise_word_ratio: f64,
    /// Probability that a noise clause talks about an unqueried aspect
    /// rather than being pure filler.
    pub other_aspect_share: f64,
    pub split_seed: u64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            documents: 2000,
            aspects: 3,
            classes: 5,
            keywords_per_aspect: 2,
            sentiment_words: 2,
            filler_words: 40,
            clauses_per_document: (2, 6),
            words_per_clause: (4, 8),
            aspects_per_document: (1, 3),
            noise_clause_ratio: 0.5,
            noise_word_ratio: 0.5,
            other_aspect_share: 0.5,
            split_seed: 13,
            seed: 7,
        }
    }
}

/// Token lexicons derived from a spec.
#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    pub aspects: Vec<AspectDef>,
    /// `sentiment[aspect][rating - 1]`
    pub sentiment: Vec<Vec<Vec<String>>>,
    pub filler: Vec<String>,
}

impl Lexicon {
    pub fn new(spec: &SyntheticSpec) -> Self {
        let name = |a: usize| match ASPECT_NAMES.get(a) {
            Some(n) => n.to_string(),
            None => format!("aspect{a}"),
        };
        let aspects = (0..spec.aspects)
            .map(|a| AspectDef {
                name: name(a),
                keywords: (0..spec.keywords_per_aspect)
                    .map(|k| format!("{}{k}", name(a)))
                    .collect(),
            })
            .collect();
        let sentiment = (0..spec.aspects)
            .map(|a| {
                (1..=spec.classes)
                    .map(|r| {
                        (0..spec.sentiment_words)
                            .map(|k| format!("{}r{r}w{k}", name(a)))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let filler = (0..spec.filler_words).map(|k| format!("filler{k}")).collect();
        Lexicon {
            aspects,
            sentiment,
            filler,
        }
    }

    /// Rating planted by `token` for aspect `a`, if it is one of its
    /// sentiment words.
    pub fn rating_of(&self, a: usize, token: &str) -> Option<usize> {
        self.sentiment[a]
            .iter()
            .position(|words| words.iter().any(|w| w == token))
            .map(|r| r + 1)
    }
}

impl SyntheticSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: SyntheticSpec = toml::from_str(text)
            .map_err(|e| Error::Usage(format!("synthetic spec schema violation: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::domain(format!("infeasible synthetic spec: {m}")));
        let (cmin, cmax) = self.clauses_per_document;
        let (wmin, wmax) = self.words_per_clause;
        let (amin, amax) = self.aspects_per_document;
        if self.documents == 0 {
            return bad("no documents");
        }
        if cmin == 0 || cmin > cmax {
            return bad("clauses_per_document must be a non-empty range starting at 1 or more");
        }
        if wmin < 2 || wmin > wmax {
            return bad("words_per_clause must be a range starting at 2 or more");
        }
        if self.aspects == 0 || self.keywords_per_aspect == 0 || self.sentiment_words == 0 {
            return bad("aspects, keywords and sentiment words must be positive");
        }
        if self.classes < 2 {
            return bad("classes must be at least 2");
        }
        if amin == 0 || amin > amax || amax > self.aspects {
            return bad("aspects_per_document must lie within 1..=aspects");
        }
        if amin > cmax {
            return bad("more queried aspects than clauses");
        }
        if self.filler_words == 0 && (self.noise_word_ratio > 0.0 || self.noise_clause_ratio > 0.0) {
            return bad("noise requires filler words");
        }
        for (n, v) in [
            ("noise_clause_ratio", self.noise_clause_ratio),
            ("noise_word_ratio", self.noise_word_ratio),
            ("other_aspect_share", self.other_aspect_share),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(&format!("{n} must lie in [0, 1]"));
            }
        }
        Ok(())
    }
}

struct Planted {
    tokens: Vec<String>,
    /// Aspect and word position of the sentiment word, if any.
    sentiment: Option<(usize, usize)>,
}

fn aspect_clause<R: Rng>(
    lex: &Lexicon,
    spec: &SyntheticSpec,
    aspect: usize,
    rating: usize,
    rng: &mut R,
) -> Planted {
    let nominal = rng.gen_range(spec.words_per_clause.0..=spec.words_per_clause.1);
    let fillers = ((spec.noise_word_ratio * nominal as f64).round() as usize).min(nominal - 2);
    let keyword = lex.aspects[aspect].keywords.choose(rng).unwrap().clone();
    let sentiment = lex.sentiment[aspect][rating - 1].choose(rng).unwrap().clone();
    let mut tokens: Vec<String> = (0..fillers)
        .map(|_| lex.filler.choose(rng).unwrap().clone())
        .collect();
    tokens.insert(rng.gen_range(0..=tokens.len()), keyword);
    let pos = rng.gen_range(0..=tokens.len());
    tokens.insert(pos, sentiment);
    Planted {
        tokens,
        sentiment: Some((aspect, pos)),
    }
}

fn filler_clause<R: Rng>(lex: &Lexicon, spec: &SyntheticSpec, rng: &mut R) -> Planted {
    let n = rng.gen_range(spec.words_per_clause.0..=spec.words_per_clause.1);
    Planted {
        tokens: (0..n).map(|_| lex.filler.choose(rng).unwrap().clone()).collect(),
        sentiment: None,
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Corpus> {
    spec.validate()?;
    let lex = Lexicon::new(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut documents = Vec::with_capacity(spec.documents);
    for d in 0..spec.documents {
        let n = rng.gen_range(spec.clauses_per_document.0..=spec.clauses_per_document.1);
        let qmax = spec.aspects_per_document.1.min(n);
        let q = rng.gen_range(spec.aspects_per_document.0.min(qmax)..=qmax);
        let mut queried = index::sample(&mut rng, spec.aspects, q).into_vec();
        queried.sort_unstable();
        let ratings: Vec<usize> = queried.iter().map(|_| rng.gen_range(1..=spec.classes)).collect();
        let noise = ((spec.noise_clause_ratio * n as f64).round() as usize).min(n - q);

        // (owner index into `queried`, clause)
        let mut clauses: Vec<(Option<usize>, Planted)> = Vec::with_capacity(n);
        for k in 0..n - noise {
            let owner = if k < q { k } else { rng.gen_range(0..q) };
            clauses.push((
                Some(owner),
                aspect_clause(&lex, spec, queried[owner], ratings[owner], &mut rng),
            ));
        }
        let others: Vec<usize> = (0..spec.aspects).filter(|a| !queried.contains(a)).collect();
        for _ in 0..noise {
            let about_other = !others.is_empty() && rng.gen::<f64>() < spec.other_aspect_share;
            let clause = if about_other {
                let a = *others.choose(&mut rng).unwrap();
                let r = rng.gen_range(1..=spec.classes);
                aspect_clause(&lex, spec, a, r, &mut rng)
            } else {
                filler_clause(&lex, spec, &mut rng)
            };
            clauses.push((None, clause));
        }
        clauses.shuffle(&mut rng);

        let aspects = queried
            .iter()
            .enumerate()
            .map(|(qi, &a)| {
                let mut clause_mask = Vec::with_capacity(n);
                let mut word_masks = Vec::with_capacity(n);
                for (owner, c) in &clauses {
                    let mine = *owner == Some(qi);
                    clause_mask.push(mine);
                    let mut m = vec![false; c.tokens.len()];
                    if mine {
                        if let Some((_, pos)) = c.sentiment {
                            m[pos] = true;
                        }
                    }
                    word_masks.push(m);
                }
                AspectLabel {
                    name: lex.aspects[a].name.clone(),
                    rating: ratings[qi],
                    gold_clause_mask: Some(clause_mask),
                    gold_word_masks: Some(word_masks),
                }
            })
            .collect();
        documents.push(Document {
            id: format!("syn{d:05}"),
            clauses: clauses.into_iter().map(|(_, c)| Clause::new(c.tokens)).collect(),
            aspects,
        });
    }
    Ok(Corpus {
        aspects: lex.aspects,
        classes: spec.classes,
        split_seed: spec.split_seed,
        documents,
    })
}
