use std::collections::HashSet;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::coa::ScriptedLlm;
use crate::error::{Error, Result};
use crate::text::tokens;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchHit {
    pub title: String,
    pub snippet: String,
    pub url: String,
}

pub trait SearchProvider: Send + Sync {
    /// At most `count` hits in provider rank order.
    fn search(&self, keywords: &str, count: usize) -> Result<Vec<SearchHit>>;
    fn fetch(&self, url: &str) -> Result<String>;
}

#[derive(Serialize)]
struct SearchRequest<'a> {
    q: &'a str,
    count: usize,
}

#[derive(Deserialize)]
struct SearchResponse {
    results: Vec<SearchHit>,
}

pub struct HttpSearch {
    endpoint: String,
    client: reqwest::blocking::Client,
}

impl HttpSearch {
    pub fn new(endpoint: impl Into<String>) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .map_err(|e| Error::ActionFailed(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.into(),
            client,
        })
    }
}

impl SearchProvider for HttpSearch {
    fn search(&self, keywords: &str, count: usize) -> Result<Vec<SearchHit>> {
        let body: SearchResponse = self
            .client
            .post(&self.endpoint)
            .json(&SearchRequest { q: keywords, count })
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.json())
            .map_err(|e| Error::ActionFailed(format!("search: {e}")))?;
        let mut hits = body.results;
        hits.truncate(count);
        Ok(hits)
    }

    fn fetch(&self, url: &str) -> Result<String> {
        self.client
            .get(url)
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.text())
            .map_err(|e| Error::ActionFailed(format!("fetch {url}: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixturePage {
    pub title: String,
    pub snippet: String,
    pub url: String,
    pub content: String,
}

/// Offline search over fixture pages. Pages are ranked by the number of
/// distinct keyword tokens in title and snippet, ties by fixture order;
/// pages sharing no token are not returned.
#[derive(Debug, Clone, Default)]
pub struct FixtureSearch {
    pages: Vec<FixturePage>,
}

impl FixtureSearch {
    pub fn new(pages: Vec<FixturePage>) -> Self {
        Self { pages }
    }

    pub fn pages(&self) -> &[FixturePage] {
        &self.pages
    }
}

impl SearchProvider for FixtureSearch {
    fn search(&self, keywords: &str, count: usize) -> Result<Vec<SearchHit>> {
        let wanted: HashSet<String> = tokens(keywords).into_iter().collect();
        let mut scored: Vec<(usize, usize)> = self
            .pages
            .iter()
            .enumerate()
            .filter_map(|(i, p)| {
                let have: HashSet<String> =
                    tokens(&format!("{} {}", p.title, p.snippet)).into_iter().collect();
                let overlap = wanted.intersection(&have).count();
                (overlap > 0).then_some((overlap, i))
            })
            .collect();
        scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        Ok(scored
            .into_iter()
            .take(count)
            .map(|(_, i)| {
                let p = &self.pages[i];
                SearchHit {
                    title: p.title.clone(),
                    snippet: p.snippet.clone(),
                    url: p.url.clone(),
                }
            })
            .collect())
    }

    fn fetch(&self, url: &str) -> Result<String> {
        self.pages
            .iter()
            .find(|p| p.url == url)
            .map(|p| p.content.clone())
            .ok_or_else(|| Error::ActionFailed(format!("no fixture page at {url}")))
    }
}

/// Scripted conversation fixture: LLM completions in call order plus the
/// pages served by the fixture search provider.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockScript {
    pub completions: Vec<String>,
    #[serde(default)]
    pub pages: Vec<FixturePage>,
}

impl MockScript {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    pub fn into_parts(self) -> (ScriptedLlm, FixtureSearch) {
        (ScriptedLlm::new(self.completions), FixtureSearch::new(self.pages))
    }
}
