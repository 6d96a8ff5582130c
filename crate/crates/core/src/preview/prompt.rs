use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::Strategy;
use crate::corpus::{Article, TopicLabel};
use crate::error::{Error, Result};

pub const TEMPLATE_VERSION: &str = "preview-v1";

const SYSTEM: &str = include_str!("../../templates/preview-v1/system.txt");
const EVENT: &str = include_str!("../../templates/preview-v1/event.txt");
const TOPIC: &str = include_str!("../../templates/preview-v1/topic.txt");
const FEEDBACK: &str = include_str!("../../templates/preview-v1/feedback.txt");

const LEAD_WORDS: usize = 40;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub system: String,
    pub user: String,
    pub template_version: String,
}

impl Prompt {
    /// Same prompt with a feedback block listing `items` appended.
    pub fn with_feedback(&self, items: &[String]) -> Prompt {
        if items.is_empty() {
            return self.clone();
        }
        let list = items
            .iter()
            .map(|i| format!("- {i}"))
            .collect::<Vec<_>>()
            .join("\n");
        let vars = HashMap::from([("items", list)]);
        Prompt {
            system: self.system.clone(),
            user: format!("{}\n{}", self.user.trim_end(), render(FEEDBACK, &vars).trim_end()),
            template_version: self.template_version.clone(),
        }
    }
}

/// Single-pass `{name}` substitution; unknown names are left verbatim.
fn render(template: &str, vars: &HashMap<&str, String>) -> String {
    let mut out = String::with_capacity(template.len() + 128);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if vars.contains_key(&after[..close]) => {
                out.push_str(&vars[&after[..close]]);
                rest = &after[close + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// First sentence of the body, capped at a fixed number of words.
fn lead(article: &Article) -> String {
    let Some(body) = article.body.as_deref().filter(|b| !b.trim().is_empty()) else {
        return "(no body text)".to_string();
    };
    let body = one_line(body);
    let sentence = match body.find(". ") {
        Some(i) => &body[..=i],
        None => body.as_str(),
    };
    sentence
        .split_whitespace()
        .take(LEAD_WORDS)
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn build_prompt(
    article: &Article,
    strategy: Strategy,
    context: Option<&Article>,
    topics: Option<&[TopicLabel]>,
) -> Result<Prompt> {
    let mut vars = HashMap::from([
        ("headline", one_line(&article.headline)),
        ("subhead", one_line(&article.subhead)),
        ("lead", lead(article)),
    ]);
    let template = match strategy {
        Strategy::Event => {
            let ctx = context.ok_or_else(|| {
                Error::InvalidArgument("event prompt needs a context article".into())
            })?;
            vars.insert("context_headline", one_line(&ctx.headline));
            vars.insert("context_subhead", one_line(&ctx.subhead));
            EVENT
        }
        Strategy::Topic => {
            let topics = topics.filter(|t| !t.is_empty()).ok_or_else(|| {
                Error::InvalidArgument("topic prompt needs at least one topic".into())
            })?;
            let names: Vec<&str> = topics.iter().map(|t| t.as_str()).collect();
            vars.insert("topics", names.join(", "));
            TOPIC
        }
        Strategy::None => {
            return Err(Error::InvalidArgument("no prompt for strategy None".into()));
        }
    };
    Ok(Prompt {
        system: SYSTEM.trim_end().to_string(),
        user: render(template, &vars).trim_end().to_string(),
        template_version: TEMPLATE_VERSION.to_string(),
    })
}

/// Extracts `(headline, subhead)` from the two labeled lines.
pub fn parse_response(text: &str) -> Option<(String, String)> {
    let mut headline = None;
    let mut subhead = None;
    for line in text.lines() {
        let line = line.trim().trim_start_matches(['*', '#', ' ']);
        let lower = line.to_lowercase();
        for (label, slot) in [("headline:", &mut headline), ("subhead:", &mut subhead)] {
            if lower.starts_with(label) && slot.is_none() {
                let value = line[label.len()..].trim().trim_matches('*').trim();
                if !value.is_empty() {
                    *slot = Some(value.to_string());
                }
            }
        }
    }
    Some((headline?, subhead?))
}

/// Pulls the value of a `Label: value` line out of a rendered prompt.
pub(crate) fn prompt_field<'a>(user_text: &'a str, label: &str) -> Option<&'a str> {
    user_text
        .lines()
        .find_map(|l| l.strip_prefix(label).map(str::trim))
}
