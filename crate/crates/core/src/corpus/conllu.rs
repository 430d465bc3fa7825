//! CoNLL-U dependency parses, grouped into reviews by `# review_id = <id>`
//! comment lines.
//!
//! Only the columns the extractor needs are kept (ID, FORM, LEMMA, UPOS, HEAD,
//! DEPREL). Multiword-token ranges (`1-2`) and empty nodes (`1.1`) are skipped.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Upos {
    Adj,
    Adp,
    Adv,
    Aux,
    Cconj,
    Det,
    Intj,
    Noun,
    Num,
    Part,
    Pron,
    Propn,
    Punct,
    Sconj,
    Sym,
    Verb,
    X,
}

impl Upos {
    pub const ALL: [Upos; 17] = [
        Upos::Adj,
        Upos::Adp,
        Upos::Adv,
        Upos::Aux,
        Upos::Cconj,
        Upos::Det,
        Upos::Intj,
        Upos::Noun,
        Upos::Num,
        Upos::Part,
        Upos::Pron,
        Upos::Propn,
        Upos::Punct,
        Upos::Sconj,
        Upos::Sym,
        Upos::Verb,
        Upos::X,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Upos::Adj => "ADJ",
            Upos::Adp => "ADP",
            Upos::Adv => "ADV",
            Upos::Aux => "AUX",
            Upos::Cconj => "CCONJ",
            Upos::Det => "DET",
            Upos::Intj => "INTJ",
            Upos::Noun => "NOUN",
            Upos::Num => "NUM",
            Upos::Part => "PART",
            Upos::Pron => "PRON",
            Upos::Propn => "PROPN",
            Upos::Punct => "PUNCT",
            Upos::Sconj => "SCONJ",
            Upos::Sym => "SYM",
            Upos::Verb => "VERB",
            Upos::X => "X",
        }
    }

    pub fn is_nominal(self) -> bool {
        matches!(self, Upos::Noun | Upos::Propn)
    }
}

impl FromStr for Upos {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Upos::ALL
            .iter()
            .copied()
            .find(|u| u.as_str() == s)
            .ok_or_else(|| format!("unknown UPOS tag `{s}`"))
    }
}

impl fmt::Display for Upos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenNode {
    pub index: usize,
    pub form: String,
    pub lemma: String,
    pub upos: Upos,
    /// 0 for the root, otherwise the index of the governing token.
    pub head: usize,
    pub deprel: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedSentence {
    pub tokens: Vec<TokenNode>,
}

impl ParsedSentence {
    /// Token by its 1-based CoNLL-U index.
    pub fn token(&self, index: usize) -> Option<&TokenNode> {
        index.checked_sub(1).and_then(|i| self.tokens.get(i))
    }

    /// Dependents of `head` in surface order.
    pub fn children(&self, head: usize) -> impl Iterator<Item = &TokenNode> {
        self.tokens.iter().filter(move |t| t.head == head)
    }

    pub fn children_with<'a>(&'a self, head: usize, deprel: &'a str) -> impl Iterator<Item = &'a TokenNode> {
        self.children(head).filter(move |t| t.deprel == deprel)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        let n = self.tokens.len();
        for (i, t) in self.tokens.iter().enumerate() {
            if t.index != i + 1 {
                return Err(format!("token indices not contiguous: expected {}, found {}", i + 1, t.index));
            }
            if t.head > n {
                return Err(format!("head {} of token {} out of range 0..={n}", t.head, t.index));
            }
            if t.deprel.is_empty() {
                return Err(format!("empty deprel on token {}", t.index));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedReview {
    pub review_id: String,
    pub sentences: Vec<ParsedSentence>,
}

pub fn load_conllu(path: impl AsRef<Path>) -> Result<BTreeMap<String, ParsedReview>> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_conllu(&content, path)
}

/// Parses CoNLL-U text; `origin` only labels error messages.
pub fn parse_conllu(content: &str, origin: &Path) -> Result<BTreeMap<String, ParsedReview>> {
    let mut reviews: BTreeMap<String, ParsedReview> = BTreeMap::new();
    let mut current: Option<String> = None;
    let mut sentence = ParsedSentence::default();
    let mut sentence_start = 0usize;

    let flush = |sentence: &mut ParsedSentence,
                     current: &Option<String>,
                     start: usize,
                     reviews: &mut BTreeMap<String, ParsedReview>|
     -> Result<()> {
        if sentence.tokens.is_empty() {
            return Ok(());
        }
        let s = std::mem::take(sentence);
        s.validate().map_err(|m| Error::parse(origin, start, m))?;
        let id = current
            .as_ref()
            .ok_or_else(|| Error::parse(origin, start, "sentence before any `# review_id = <id>` comment"))?;
        reviews
            .entry(id.clone())
            .or_insert_with(|| ParsedReview {
                review_id: id.clone(),
                sentences: Vec::new(),
            })
            .sentences
            .push(s);
        Ok(())
    };

    for (i, raw) in content.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(&mut sentence, &current, sentence_start, &mut reviews)?;
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(id) = comment
                .trim()
                .strip_prefix("review_id")
                .and_then(|rest| rest.trim_start().strip_prefix('='))
            {
                flush(&mut sentence, &current, sentence_start, &mut reviews)?;
                let id = id.trim();
                if id.is_empty() {
                    return Err(Error::parse(origin, lineno, "empty review_id comment"));
                }
                current = Some(id.to_owned());
            }
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(Error::parse(
                origin,
                lineno,
                format!("expected 10 tab-separated columns, found {}", cols.len()),
            ));
        }
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let index: usize = cols[0]
            .parse()
            .map_err(|_| Error::parse(origin, lineno, format!("bad token id `{}`", cols[0])))?;
        let head: usize = cols[6]
            .parse()
            .map_err(|_| Error::parse(origin, lineno, format!("bad head `{}`", cols[6])))?;
        let upos: Upos = cols[3].parse().map_err(|m: String| Error::parse(origin, lineno, m))?;
        if sentence.tokens.is_empty() {
            sentence_start = lineno;
        }
        sentence.tokens.push(TokenNode {
            index,
            form: cols[1].to_owned(),
            lemma: cols[2].to_owned(),
            upos,
            head,
            deprel: cols[7].to_owned(),
        });
    }
    flush(&mut sentence, &current, sentence_start, &mut reviews)?;
    Ok(reviews)
}

/// Serializes reviews in the layout [`parse_conllu`] reads.
pub fn write_conllu<'a>(reviews: impl IntoIterator<Item = &'a ParsedReview>) -> String {
    let mut out = String::new();
    for review in reviews {
        out.push_str(&format!("# review_id = {}\n", review.review_id));
        for s in &review.sentences {
            for t in &s.tokens {
                out.push_str(&format!(
                    "{}\t{}\t{}\t{}\t_\t_\t{}\t{}\t_\t_\n",
                    t.index, t.form, t.lemma, t.upos, t.head, t.deprel
                ));
            }
            out.push('\n');
        }
    }
    out
}
