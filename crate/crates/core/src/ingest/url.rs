//! Canonical URL form used by the URL indicator.

use serde::{Deserialize, Serialize};
use url::Url;

pub const DEFAULT_STRIP_PARAMS: &[&str] = &["utm_*", "fbclid", "gclid", "igshid", "ref_src", "s", "t"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UrlCleaner {
    /// Query keys to drop. A trailing `*` makes the entry a prefix match.
    pub strip_params: Vec<String>,
}

impl Default for UrlCleaner {
    fn default() -> Self {
        Self {
            strip_params: DEFAULT_STRIP_PARAMS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CleanedUrl {
    pub url: String,
    /// Set when the input could not be parsed and was returned unchanged.
    pub unparsed: bool,
}

impl UrlCleaner {
    fn strips(&self, key: &str) -> bool {
        let key = key.to_ascii_lowercase();
        self.strip_params.iter().any(|pat| match pat.strip_suffix('*') {
            Some(prefix) => key.starts_with(prefix),
            None => key == *pat,
        })
    }

    pub fn clean(&self, raw: &str) -> CleanedUrl {
        let unchanged = || CleanedUrl {
            url: raw.to_owned(),
            unparsed: true,
        };
        let Ok(parsed) = Url::parse(raw.trim()) else {
            return unchanged();
        };
        let Some(host) = parsed.host_str() else {
            return unchanged();
        };

        let mut out = String::with_capacity(raw.len());
        out.push_str(parsed.scheme());
        out.push_str("://");
        if !parsed.username().is_empty() {
            out.push_str(parsed.username());
            if let Some(pw) = parsed.password() {
                out.push(':');
                out.push_str(pw);
            }
            out.push('@');
        }
        out.push_str(&host.to_ascii_lowercase());
        if let Some(port) = parsed.port() {
            out.push(':');
            out.push_str(&port.to_string());
        }
        if parsed.path() != "/" {
            out.push_str(parsed.path());
        }

        if let Some(query) = parsed.query() {
            let mut params: Vec<&str> = query
                .split('&')
                .filter(|p| !p.is_empty())
                .filter(|p| !self.strips(p.split('=').next().unwrap_or(p)))
                .collect();
            params.sort_by(|a, b| {
                let key = |p: &str| p.split('=').next().unwrap_or("").to_owned();
                key(a).cmp(&key(b))
            });
            if !params.is_empty() {
                out.push('?');
                out.push_str(&params.join("&"));
            }
        }

        CleanedUrl {
            url: out,
            unparsed: false,
        }
    }
}

pub fn clean_url(raw: &str) -> CleanedUrl {
    UrlCleaner::default().clean(raw)
}
