//! Static selection reports.
//!
//! The text form prefixes kept clauses with `+` and dropped ones with `-`,
//! and brackets kept words. The HTML form uses `selected`/`discarded`
//! classes on clause spans and `<mark>` for kept words.

use std::fmt::Write as _;

use crate::data::Document;
use crate::error::{Error, Result};

use super::QueryOutcome;

/// Everything a report shows for one `(document, aspect)` query.
#[derive(Debug, Clone, Copy)]
pub struct SelectionView<'a> {
    pub document: &'a Document,
    pub aspect: &'a str,
    pub clauses: &'a [bool],
    pub words: &'a [Vec<bool>],
    pub predicted: usize,
    pub gold: Option<usize>,
    pub fallback: bool,
    pub classes: usize,
}

impl<'a> SelectionView<'a> {
    pub fn from_outcome(document: &'a Document, outcome: &'a QueryOutcome, classes: usize) -> Result<Self> {
        let view = SelectionView {
            document,
            aspect: &outcome.aspect,
            clauses: &outcome.clauses,
            words: &outcome.words,
            predicted: outcome.predicted,
            gold: Some(outcome.gold),
            fallback: outcome.fallback,
            classes,
        };
        view.check()?;
        Ok(view)
    }

    pub fn check(&self) -> Result<()> {
        let n = self.document.clauses.len();
        if self.clauses.len() != n || self.words.len() != n {
            return Err(Error::shape(
                "selection report",
                format!("{n} clauses"),
                format!("{} options, {} word masks", self.clauses.len(), self.words.len()),
            ));
        }
        for (c, w) in self.document.clauses.iter().zip(self.words) {
            if c.tokens.len() != w.len() {
                return Err(Error::shape(
                    "selection report",
                    format!("{} tokens", c.tokens.len()),
                    format!("{} word flags", w.len()),
                ));
            }
        }
        Ok(())
    }

    fn rows(&self) -> impl Iterator<Item = (bool, impl Iterator<Item = (&'a str, bool)> + 'a)> + 'a {
        let selected = self.clauses;
        self.document
            .clauses
            .iter()
            .zip(self.words)
            .zip(selected)
            .map(|((c, w), &s)| (s, c.tokens.iter().map(String::as_str).zip(w.iter().map(move |&k| s && k))))
    }

    fn header(&self) -> String {
        let gold = self.gold.map_or_else(|| "?".to_string(), |g| g.to_string());
        let mut h = format!(
            "document {} | aspect {} | predicted {} | gold {} | scale 1-{}",
            self.document.id, self.aspect, self.predicted, gold, self.classes
        );
        if self.fallback {
            h.push_str(" | fallback-random (no clause selected)");
        }
        h
    }
}

pub fn render_text(view: &SelectionView<'_>) -> String {
    let mut s = view.header();
    s.push('\n');
    for (selected, words) in view.rows() {
        s.push(if selected { '+' } else { '-' });
        for (w, kept) in words {
            if kept {
                let _ = write!(s, " [{w}]");
            } else {
                let _ = write!(s, " {w}");
            }
        }
        s.push('\n');
    }
    s
}

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

const STYLE: &str = ".selected{color:#b00}.discarded{color:#888}mark{background:#fd8}";

pub fn render_html(view: &SelectionView<'_>) -> String {
    let title = escape(&format!("{} / {}", view.document.id, view.aspect));
    let mut s = String::new();
    let _ = write!(
        s,
        "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\"/>\n<title>{title}</title>\n<style>{STYLE}</style>\n</head>\n<body>\n"
    );
    let _ = writeln!(s, "<p class=\"header\">{}</p>", escape(&view.header()));
    s.push_str("<ol>\n");
    for (selected, words) in view.rows() {
        let class = if selected { "selected" } else { "discarded" };
        let _ = write!(s, "<li><span class=\"{class}\">");
        for (k, (w, kept)) in words.enumerate() {
            if k > 0 {
                s.push(' ');
            }
            if kept {
                let _ = write!(s, "<mark>{}</mark>", escape(w));
            } else {
                s.push_str(&escape(w));
            }
        }
        s.push_str("</span></li>\n");
    }
    s.push_str("</ol>\n</body>\n</html>\n");
    s
}
