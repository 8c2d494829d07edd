use serde::Serialize;

use crate::cks::ContextualKnowledgeSet;
use crate::coa::ActionChain;
use crate::error::{Error, Result};

pub const INITIAL_TEMPLATE: &str = include_str!("templates/initial.txt");
pub const NORMAL_TEMPLATE: &str = include_str!("templates/normal.txt");
pub const FINAL_ANSWER_TEMPLATE: &str = include_str!("templates/final_answer.txt");
pub(crate) const RETRY_SUFFIX: &str = include_str!("templates/retry_suffix.txt");

/// Replaces each placeholder occurring in `template` in a single left-to-right
/// pass, so substituted text is never rescanned.
fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    'scan: while let Some(pos) = rest.find('$') {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        for (name, value) in vars {
            if let Some(after) = tail.strip_prefix(name) {
                out.push_str(value);
                rest = after;
                continue 'scan;
            }
        }
        out.push('$');
        rest = &tail[1..];
    }
    out.push_str(rest);
    out
}

fn non_empty(question: &str) -> Result<&str> {
    let q = question.trim();
    if q.is_empty() {
        return Err(Error::EmptyQuestion);
    }
    Ok(q)
}

pub fn build_initial_prompt(question: &str) -> Result<String> {
    Ok(fill(INITIAL_TEMPLATE.trim_end(), &[("$QUESTION", non_empty(question)?)]))
}

pub fn build_normal_prompt(cks: &ContextualKnowledgeSet, question: &str) -> Result<String> {
    let question = non_empty(question)?;
    Ok(fill(
        NORMAL_TEMPLATE.trim_end(),
        &[("$CKS", &cks.render_for_prompt()), ("$QUESTION", question)],
    ))
}

#[derive(Serialize)]
struct VerifiedStep<'a> {
    action: &'a str,
    sub: &'a str,
    verified_answer: &'a str,
    information: &'a str,
}

/// Final-answer prompt over the corrected chain. Steps without a corrected
/// answer fall back to the guess.
pub fn build_final_prompt(question: &str, chain: &ActionChain, summaries: &[String]) -> Result<String> {
    let question = non_empty(question)?;
    let steps: Vec<VerifiedStep<'_>> = chain
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| VerifiedStep {
            action: n.action.as_str(),
            sub: &n.sub,
            verified_answer: n.corrected_answer.as_deref().unwrap_or(&n.guess_answer),
            information: summaries.get(i).map_or("", String::as_str),
        })
        .collect();
    let chain_json = serde_json::to_string_pretty(&steps)?;
    Ok(fill(
        FINAL_ANSWER_TEMPLATE.trim_end(),
        &[("$QUESTION", question), ("$CHAIN", &chain_json)],
    ))
}
