use std::fmt;

use serde::{Deserialize, Serialize};

use super::prompt::parse_response;
use crate::corpus::Article;
use crate::distributions::cosine;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArticleCheckConfig {
    pub headline_min_chars: usize,
    pub headline_max_chars: usize,
    pub subhead_max_chars: usize,
    /// Headlines longer than this many words get a warning.
    pub long_headline_words: usize,
}

impl Default for ArticleCheckConfig {
    fn default() -> Self {
        ArticleCheckConfig {
            headline_min_chars: 10,
            headline_max_chars: 120,
            subhead_max_chars: 300,
            long_headline_words: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Rejection {
    Unparseable,
    HeadlineLength { chars: usize },
    SubheadLength { chars: usize },
    AllCaps,
    LowercaseStart,
    FabricatedQuote,
    TooSimilar { article_id: String, cosine: f64 },
    Transport(String),
    BudgetExceeded,
    MissingInput(String),
}

impl Rejection {
    /// Short tag recorded in the audit log.
    pub fn code(&self) -> &'static str {
        match self {
            Rejection::Unparseable => "unparseable",
            Rejection::HeadlineLength { .. } => "headline_length",
            Rejection::SubheadLength { .. } => "subhead_length",
            Rejection::AllCaps => "capitalization",
            Rejection::LowercaseStart => "capitalization",
            Rejection::FabricatedQuote => "fabricated_quote",
            Rejection::TooSimilar { .. } => "headline_similarity",
            Rejection::Transport(_) => "transport",
            Rejection::BudgetExceeded => "latency_budget",
            Rejection::MissingInput(_) => "missing_input",
        }
    }

    /// Instruction appended to the next prompt.
    pub fn feedback(&self, cfg: &ArticleCheckConfig) -> String {
        match self {
            Rejection::Unparseable => {
                "Answer with exactly two lines starting with `Headline:` and `Subhead:`.".into()
            }
            Rejection::HeadlineLength { chars } => format!(
                "The headline has {chars} characters; keep it between {} and {} characters.",
                cfg.headline_min_chars, cfg.headline_max_chars
            ),
            Rejection::SubheadLength { chars } => format!(
                "The subhead has {chars} characters; keep it under {} characters.",
                cfg.subhead_max_chars
            ),
            Rejection::AllCaps => {
                "Do not write the headline or any long word in all capital letters; use AP sentence case."
                    .into()
            }
            Rejection::LowercaseStart => "Start the headline with a capital letter.".into(),
            Rejection::FabricatedQuote => {
                "Remove the quotation marks; the original article contains no quotation to cite.".into()
            }
            Rejection::TooSimilar { .. } => {
                "The headline is too close to another headline in the same newsletter; choose a different framing."
                    .into()
            }
            Rejection::Transport(_) | Rejection::BudgetExceeded | Rejection::MissingInput(_) => String::new(),
        }
    }

    /// Whether a reprompt could fix this.
    pub fn is_retryable(&self) -> bool {
        !matches!(
            self,
            Rejection::Transport(_) | Rejection::BudgetExceeded | Rejection::MissingInput(_)
        )
    }
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rejection::HeadlineLength { chars } => write!(f, "headline_length({chars})"),
            Rejection::SubheadLength { chars } => write!(f, "subhead_length({chars})"),
            Rejection::AllCaps => f.write_str("capitalization(all_caps)"),
            Rejection::LowercaseStart => f.write_str("capitalization(lowercase_start)"),
            Rejection::TooSimilar { article_id, cosine } => {
                write!(f, "headline_similarity({article_id}, {cosine:.3})")
            }
            Rejection::Transport(m) => write!(f, "transport({m})"),
            Rejection::MissingInput(m) => write!(f, "missing_input({m})"),
            other => f.write_str(other.code()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CheckOutcome {
    pub parsed: Option<(String, String)>,
    pub rejections: Vec<Rejection>,
    pub warnings: Vec<String>,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.parsed.is_some() && self.rejections.is_empty()
    }
}

const QUOTES: [char; 5] = ['"', '\u{201c}', '\u{201d}', '\u{00ab}', '\u{00bb}'];

fn has_quote(text: &str) -> bool {
    text.contains(QUOTES)
}

fn all_caps(headline: &str) -> bool {
    let letters: Vec<char> = headline.chars().filter(|c| c.is_alphabetic()).collect();
    if letters.len() >= 6 && letters.iter().all(|c| c.is_uppercase()) {
        return true;
    }
    headline.split_whitespace().any(|w| {
        let letters: Vec<char> = w.chars().filter(|c| c.is_alphabetic()).collect();
        letters.len() >= 5 && letters.iter().all(|c| c.is_uppercase())
    })
}

/// Style and format checks on one generated answer. `sources` are the texts
/// the rewrite may draw on (original article and context).
pub fn check_article_level(
    response: &str,
    original: &Article,
    context: Option<&Article>,
    cfg: &ArticleCheckConfig,
) -> CheckOutcome {
    let Some((headline, subhead)) = parse_response(response) else {
        return CheckOutcome {
            parsed: None,
            rejections: vec![Rejection::Unparseable],
            warnings: Vec::new(),
        };
    };
    let mut rejections = Vec::new();
    let mut warnings = Vec::new();
    let chars = headline.chars().count();
    if chars < cfg.headline_min_chars || chars > cfg.headline_max_chars {
        rejections.push(Rejection::HeadlineLength { chars });
    }
    let sub_chars = subhead.chars().count();
    if sub_chars > cfg.subhead_max_chars {
        rejections.push(Rejection::SubheadLength { chars: sub_chars });
    }
    if all_caps(&headline) {
        rejections.push(Rejection::AllCaps);
    } else if headline
        .chars()
        .find(|c| c.is_alphabetic())
        .is_some_and(|c| c.is_lowercase())
    {
        rejections.push(Rejection::LowercaseStart);
    }
    let mut source_has_quote = has_quote(&original.headline)
        || has_quote(&original.subhead)
        || original.body.as_deref().is_some_and(has_quote);
    if let Some(ctx) = context {
        source_has_quote |= has_quote(&ctx.headline) || has_quote(&ctx.subhead);
    }
    if !source_has_quote && (has_quote(&headline) || has_quote(&subhead)) {
        rejections.push(Rejection::FabricatedQuote);
    }
    let words = headline.split_whitespace().count();
    if words > cfg.long_headline_words {
        warnings.push(format!("long_headline({words} words)"));
    }
    CheckOutcome {
        parsed: Some((headline, subhead)),
        rejections,
        warnings,
    }
}

/// Rejects `candidate` when its embedding reaches `threshold` cosine with an
/// already accepted headline embedding.
pub fn check_newsletter_level(
    candidate: &[f64],
    accepted: &[(String, Vec<f64>)],
    threshold: f64,
) -> Option<Rejection> {
    accepted.iter().find_map(|(id, emb)| {
        let sim = cosine(candidate, emb)?;
        (sim >= threshold).then(|| Rejection::TooSimilar {
            article_id: id.clone(),
            cosine: sim,
        })
    })
}
