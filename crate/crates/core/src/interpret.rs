//! Aspect-level explanations of single predictions and corpus aspect rankings.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::apre::{Apre, ReviewFeatures};
use crate::aspair::ASPair;
use crate::error::{Error, Result};

/// Supporting pairs listed per aspect and side.
pub const MAX_SUPPORT_PER_SIDE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    User,
    Item,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Impact {
    Pos,
    Neg,
    Unk,
}

impl Impact {
    /// Unknown unless the user attends the aspect and the item has it; otherwise the contribution's sign.
    pub fn infer(user_attended: bool, item_mentioned: bool, contribution: f64) -> Self {
        if !(user_attended && item_mentioned) || contribution == 0.0 {
            Impact::Unk
        } else if contribution > 0.0 {
            Impact::Pos
        } else {
            Impact::Neg
        }
    }

    fn label(self) -> &'static str {
        match self {
            Impact::Pos => "Pos.",
            Impact::Neg => "Neg.",
            Impact::Unk => "Unk.",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupportingPair {
    pub side: Side,
    pub review_id: String,
    pub aspect: String,
    pub sentiment: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AspectRow {
    pub aspect: String,
    pub aspect_id: usize,
    pub contribution: f64,
    pub user_attended: bool,
    pub item_mentioned: bool,
    pub impact: Impact,
    pub support: Vec<SupportingPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplanationReport {
    pub user_id: String,
    pub item_id: String,
    /// Clamped prediction.
    pub s_hat: f64,
    pub pre_clamp: f64,
    pub bias_term: f64,
    pub implicit_term: f64,
    pub explicit_term: f64,
    pub cold_user: bool,
    pub cold_item: bool,
    /// Sorted by |contribution|, largest first.
    pub aspects: Vec<AspectRow>,
}

impl ExplanationReport {
    /// Absolute gap between the addends and the pre-clamp score.
    pub fn decomposition_gap(&self) -> f64 {
        let contributions: f64 = self.aspects.iter().map(|r| r.contribution).sum();
        let a = (self.bias_term + self.implicit_term + self.explicit_term - self.pre_clamp).abs();
        let b = if self.aspects.is_empty() { 0.0 } else { (contributions - self.explicit_term).abs() };
        a.max(b)
    }
}

/// Explains one prediction from the given review histories.
///
/// Cold-start sides have no reviews, so their flags are all false and every
/// row's impact is unknown; the reported addends remain exact.
pub fn explain(
    model: &Apre,
    user_id: &str,
    item_id: &str,
    user_reviews: &[&ReviewFeatures],
    item_reviews: &[&ReviewFeatures],
    pairs: &[ASPair],
) -> Result<ExplanationReport> {
    let p = model.predict(user_id, item_id, user_reviews, item_reviews)?;
    let mut by_review: HashMap<&str, Vec<&ASPair>> = HashMap::new();
    for pair in pairs {
        by_review.entry(pair.review_id.as_str()).or_default().push(pair);
    }
    let support = |side: Side, reviews: &[&ReviewFeatures], aspect: &str| -> Vec<SupportingPair> {
        reviews
            .iter()
            .flat_map(|r| by_review.get(r.review_id.as_str()).into_iter().flatten())
            .filter(|pair| pair.aspect == aspect)
            .take(MAX_SUPPORT_PER_SIDE)
            .map(|pair| SupportingPair {
                side,
                review_id: pair.review_id.clone(),
                aspect: pair.aspect.clone(),
                sentiment: pair.sentiment.clone(),
            })
            .collect()
    };

    let mut rows: Vec<AspectRow> = p
        .contributions
        .iter()
        .enumerate()
        .map(|(a, &contribution)| {
            let aspect = model.aspects()[a].clone();
            let user_attended = user_reviews.iter().any(|r| r.mentions(a));
            let item_mentioned = item_reviews.iter().any(|r| r.mentions(a));
            let mut s = support(Side::User, user_reviews, &aspect);
            s.extend(support(Side::Item, item_reviews, &aspect));
            AspectRow {
                impact: Impact::infer(user_attended, item_mentioned, contribution),
                aspect,
                aspect_id: a + 1,
                contribution,
                user_attended,
                item_mentioned,
                support: s,
            }
        })
        .collect();
    rows.sort_by(|a, b| b.contribution.abs().total_cmp(&a.contribution.abs()).then(a.aspect_id.cmp(&b.aspect_id)));

    Ok(ExplanationReport {
        user_id: user_id.to_owned(),
        item_id: item_id.to_owned(),
        s_hat: p.s_hat,
        pre_clamp: p.pre_clamp,
        bias_term: p.bias_term,
        implicit_term: p.implicit_term,
        explicit_term: p.explicit_term,
        cold_user: p.cold_user,
        cold_item: p.cold_item,
        aspects: rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedAspect {
    pub rank: usize,
    pub aspect: String,
    pub frequency: u64,
}

/// Top `n` aspects by pair frequency, ties broken by lemma.
pub fn top_aspects(pairs: &[ASPair], n: usize) -> Vec<RankedAspect> {
    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for p in pairs {
        *counts.entry(p.aspect.as_str()).or_default() += 1;
    }
    let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    ranked
        .into_iter()
        .take(n)
        .enumerate()
        .map(|(i, (aspect, frequency))| RankedAspect {
            rank: i + 1,
            aspect: aspect.to_owned(),
            frequency,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Markdown,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Format::Json),
            "markdown" | "md" => Ok(Format::Markdown),
            other => Err(Error::Invalid(format!("unknown report format `{other}` (expected json or markdown)"))),
        }
    }
}

pub fn render(report: &ExplanationReport, format: Format) -> Result<String> {
    match format {
        Format::Json => Ok(serde_json::to_string_pretty(report)? + "\n"),
        Format::Markdown => Ok(render_markdown(report)),
    }
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

fn render_markdown(r: &ExplanationReport) -> String {
    let mut out = String::new();
    let w = &mut out;
    // Writing to a String cannot fail.
    let _ = writeln!(w, "# Rating explanation: user `{}`, item `{}`\n", r.user_id, r.item_id);
    let _ = writeln!(w, "Predicted rating: **{:.4}** (before clamping {:.6})\n", r.s_hat, r.pre_clamp);
    let _ = writeln!(w, "| term | value |\n|---|---:|");
    let _ = writeln!(w, "| biases | {:.6} |", r.bias_term);
    let _ = writeln!(w, "| implicit channel | {:.6} |", r.implicit_term);
    let _ = writeln!(w, "| explicit channel | {:.6} |\n", r.explicit_term);
    if r.cold_user || r.cold_item {
        let who = match (r.cold_user, r.cold_item) {
            (true, true) => "user and item",
            (true, false) => "user",
            _ => "item",
        };
        let _ = writeln!(w, "Cold start: the {who} had no training reviews; bias fallback applied.\n");
    }
    let _ = writeln!(w, "| aspect | user attention | item property | contribution | impact | evidence |");
    let _ = writeln!(w, "|---|:-:|:-:|---:|:-:|---|");
    for row in &r.aspects {
        let evidence: Vec<String> = row
            .support
            .iter()
            .map(|s| {
                let side = match s.side {
                    Side::User => "u",
                    Side::Item => "t",
                };
                format!("{side}:{} ({}, {})", s.review_id, s.aspect, s.sentiment)
            })
            .collect();
        let _ = writeln!(
            w,
            "| {} | {} | {} | {:+.6} | {} | {} |",
            row.aspect,
            yes_no(row.user_attended),
            yes_no(row.item_mentioned),
            row.contribution,
            row.impact.label(),
            evidence.join("; ")
        );
    }
    out
}

pub fn parse_json(text: &str) -> Result<ExplanationReport> {
    Ok(serde_json::from_str(text)?)
}
