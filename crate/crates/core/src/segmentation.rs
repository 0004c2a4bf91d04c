//! Rule-based clause splitting and tokenisation.
//!
//! Raw review text is cut at sentence terminators, commas and semicolons,
//! and before connective words. Fragments with fewer than two word tokens
//! are merged into a neighbour within the same sentence: into the previous
//! fragment normally, into the following one when the short fragment opens
//! its sentence (e.g. "Besides, ...").

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_CONNECTIVES: [&str; 5] = ["but", "and", "although", "while", "because"];

const SENTENCE_TERMINATORS: [char; 6] = ['.', '!', '?', '。', '！', '？'];
const CLAUSE_SEPARATORS: [char; 4] = [',', ';', '，', '；'];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    /// Byte range in the source text.
    pub start: usize,
    pub end: usize,
}

impl Token {
    pub fn is_word(&self) -> bool {
        self.text.chars().all(char::is_alphanumeric)
    }
}

/// Ordered token list for one clause, with its source span when the clause
/// came from raw text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clause {
    pub tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<(usize, usize)>,
}

impl Clause {
    pub fn new(tokens: Vec<String>) -> Self {
        Clause { tokens, span: None }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Lowercased tokens with byte spans. Alphanumeric runs form words; every
/// other non-whitespace character is its own token.
pub fn tokenize_spans(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut word: Option<usize> = None;
    for (i, ch) in text.char_indices() {
        if ch.is_alphanumeric() {
            if word.is_none() {
                word = Some(i);
            }
            continue;
        }
        if let Some(start) = word.take() {
            out.push(Token {
                text: text[start..i].to_lowercase(),
                start,
                end: i,
            });
        }
        if !ch.is_whitespace() {
            let end = i + ch.len_utf8();
            out.push(Token {
                text: text[i..end].to_lowercase(),
                start: i,
                end,
            });
        }
    }
    if let Some(start) = word {
        out.push(Token {
            text: text[start..].to_lowercase(),
            start,
            end: text.len(),
        });
    }
    out
}

pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_spans(text).into_iter().map(|t| t.text).collect()
}

fn is_terminator(tok: &str) -> bool {
    let mut chars = tok.chars();
    matches!((chars.next(), chars.next()), (Some(c), None) if SENTENCE_TERMINATORS.contains(&c))
}

fn is_separator(tok: &str) -> bool {
    let mut chars = tok.chars();
    matches!((chars.next(), chars.next()), (Some(c), None) if CLAUSE_SEPARATORS.contains(&c))
}

#[derive(Debug, Clone)]
struct Fragment {
    tokens: Vec<Token>,
    sentence: usize,
}

impl Fragment {
    fn words(&self) -> usize {
        self.tokens.iter().filter(|t| t.is_word()).count()
    }
}

#[derive(Debug, Clone)]
pub struct Segmenter {
    pub connectives: Vec<String>,
    pub min_words: usize,
}

impl Default for Segmenter {
    fn default() -> Self {
        Segmenter {
            connectives: DEFAULT_CONNECTIVES.iter().map(|s| s.to_string()).collect(),
            min_words: 2,
        }
    }
}

impl Segmenter {
    pub fn split_clauses(&self, text: &str) -> Result<Vec<Clause>> {
        let tokens = tokenize_spans(text);
        if tokens.is_empty() {
            return Err(Error::domain("cannot segment empty or all-whitespace text"));
        }
        let fragments = self.fragments(tokens);
        Ok(self
            .merge_short(fragments)
            .into_iter()
            .map(|f| {
                let span = (f.tokens[0].start, f.tokens[f.tokens.len() - 1].end);
                Clause {
                    tokens: f.tokens.into_iter().map(|t| t.text).collect(),
                    span: Some(span),
                }
            })
            .collect())
    }

    fn fragments(&self, tokens: Vec<Token>) -> Vec<Fragment> {
        let mut out = Vec::new();
        let mut cur = Fragment {
            tokens: Vec::new(),
            sentence: 0,
        };
        let mut sentence = 0;
        let mut ends_sentence = false;
        let n = tokens.len();
        let mut iter = tokens.into_iter().peekable();
        let mut idx = 0;
        while let Some(tok) = iter.next() {
            idx += 1;
            if self.connectives.iter().any(|c| *c == tok.text) && cur.words() > 0 {
                out.push(std::mem::replace(
                    &mut cur,
                    Fragment {
                        tokens: Vec::new(),
                        sentence,
                    },
                ));
            }
            let term = is_terminator(&tok.text);
            let sep = is_separator(&tok.text);
            cur.tokens.push(tok);
            if term || sep {
                ends_sentence |= term;
                // keep trailing punctuation runs ("!!", ".)") on this fragment
                let next_is_word = iter.peek().is_some_and(Token::is_word);
                if next_is_word || idx == n {
                    if ends_sentence {
                        sentence += 1;
                        ends_sentence = false;
                    }
                    out.push(std::mem::replace(
                        &mut cur,
                        Fragment {
                            tokens: Vec::new(),
                            sentence,
                        },
                    ));
                }
            }
        }
        if !cur.tokens.is_empty() {
            out.push(cur);
        }
        out
    }

    fn merge_short(&self, fragments: Vec<Fragment>) -> Vec<Fragment> {
        let mut out: Vec<Fragment> = Vec::new();
        let mut pending: Option<Fragment> = None;
        for mut frag in fragments {
            if let Some(p) = pending.take() {
                if p.sentence == frag.sentence {
                    let mut tokens = p.tokens;
                    tokens.append(&mut frag.tokens);
                    frag.tokens = tokens;
                } else {
                    merge_into_last_or_push(&mut out, p);
                }
            }
            if frag.words() >= self.min_words {
                out.push(frag);
            } else if out.last().is_some_and(|l| l.sentence == frag.sentence) {
                out.last_mut().unwrap().tokens.append(&mut frag.tokens);
            } else {
                pending = Some(frag);
            }
        }
        if let Some(p) = pending {
            merge_into_last_or_push(&mut out, p);
        }
        out
    }
}

fn merge_into_last_or_push(out: &mut Vec<Fragment>, mut frag: Fragment) {
    match out.last_mut() {
        Some(last) => last.tokens.append(&mut frag.tokens),
        None => out.push(frag),
    }
}

/// Splits with the default connective lexicon.
pub fn split_clauses(text: &str) -> Result<Vec<Clause>> {
    Segmenter::default().split_clauses(text)
}
