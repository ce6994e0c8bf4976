use std::fs;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tracing::warn;

use super::post::{normalize_hashtag, Corpus, Post, PostKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Jsonl,
    Csv,
}

impl FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" | "json" => Ok(CorpusFormat::Jsonl),
            "csv" => Ok(CorpusFormat::Csv),
            other => Err(Error::Config(format!("unknown corpus format `{other}`"))),
        }
    }
}

/// Column mapping for CSV corpora. Every field names the header of the
/// column holding that value; optional columns may be left unset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CsvColumns {
    pub id: String,
    pub author: String,
    pub kind: String,
    pub text: String,
    pub rt_author: Option<String>,
    pub rt_post: Option<String>,
    pub hashtags: Option<String>,
    pub urls: Option<String>,
    pub images: Option<String>,
    pub ts: Option<String>,
    /// Separator for list-valued cells.
    pub list_separator: String,
}

impl Default for CsvColumns {
    fn default() -> Self {
        Self {
            id: "id".into(),
            author: "author".into(),
            kind: "kind".into(),
            text: "text".into(),
            rt_author: Some("rt_author".into()),
            rt_post: Some("rt_post".into()),
            hashtags: Some("hashtags".into()),
            urls: Some("urls".into()),
            images: Some("images".into()),
            ts: Some("ts".into()),
            list_separator: "|".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MalformedRecord {
    /// 1-based line (JSONL) or data-row (CSV) number.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LoadReport {
    pub records: usize,
    pub loaded: usize,
    pub malformed: Vec<MalformedRecord>,
    pub external_retweet_refs: usize,
}

/// Loads a corpus file. Malformed records are skipped and reported; the load
/// fails only if the file is unreadable or more than half the records are bad.
pub fn load_corpus(
    path: &Path,
    format: CorpusFormat,
    columns: &CsvColumns,
) -> Result<(Corpus, LoadReport)> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parsed = match format {
        CorpusFormat::Jsonl => parse_jsonl(&raw),
        CorpusFormat::Csv => parse_csv(&raw, columns)?,
    };
    assemble(parsed)
}

pub fn parse_jsonl_str(raw: &str) -> Result<(Corpus, LoadReport)> {
    assemble(parse_jsonl(raw))
}

/// Writes posts in the JSONL layout read by [`load_corpus`].
pub fn write_jsonl(path: &Path, posts: &[Post]) -> Result<()> {
    super::sidecar::ensure_parent(path)?;
    let mut out = String::new();
    for p in posts {
        let mut obj = serde_json::Map::new();
        obj.insert("id".into(), p.post_id.clone().into());
        obj.insert("author".into(), p.author_id.clone().into());
        obj.insert("kind".into(), p.kind.as_str().into());
        obj.insert("text".into(), p.text.clone().into());
        if let Some(a) = &p.retweeted_author_id {
            obj.insert("rt_author".into(), a.clone().into());
        }
        if let Some(t) = &p.retweeted_post_id {
            obj.insert("rt_post".into(), t.clone().into());
        }
        for (key, list) in [("hashtags", &p.hashtags), ("urls", &p.urls), ("images", &p.image_ids)] {
            if !list.is_empty() {
                obj.insert(key.into(), list.clone().into());
            }
        }
        if let Some(ts) = p.timestamp {
            obj.insert("ts".into(), ts.to_rfc3339_opts(chrono::SecondsFormat::Secs, true).into());
        }
        out.push_str(&Value::Object(obj).to_string());
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

type Parsed = Vec<(usize, std::result::Result<Post, String>)>;

fn assemble(parsed: Parsed) -> Result<(Corpus, LoadReport)> {
    let records = parsed.len();
    let mut malformed = Vec::new();
    let mut posts = Vec::with_capacity(records);
    let mut seen = std::collections::HashSet::with_capacity(records);
    for (line, res) in parsed {
        match res {
            Ok(post) if !seen.insert(post.post_id.clone()) => malformed.push(MalformedRecord {
                line,
                reason: format!("duplicate post id `{}`", post.post_id),
            }),
            Ok(post) => posts.push(post),
            Err(reason) => malformed.push(MalformedRecord { line, reason }),
        }
    }

    if records > 0 && malformed.len() * 2 > records {
        return Err(Error::Format(format!(
            "{} of {} records are malformed (first: line {}: {})",
            malformed.len(),
            records,
            malformed[0].line,
            malformed[0].reason
        )));
    }
    if !malformed.is_empty() {
        warn!(count = malformed.len(), "skipped malformed corpus records");
    }

    let (corpus, dups) = Corpus::from_posts(posts);
    debug_assert!(dups.is_empty());
    let report = LoadReport {
        records,
        loaded: corpus.len(),
        external_retweet_refs: corpus.external_retweet_refs(),
        malformed,
    };
    Ok((corpus, report))
}

fn parse_jsonl(raw: &str) -> Parsed {
    let lines: Vec<(usize, &str)> = raw
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l))
        .collect();
    lines
        .par_iter()
        .map(|&(line, text)| (line, parse_json_record(text)))
        .collect()
}

fn opaque(v: &Value) -> Option<String> {
    match v {
        Value::String(s) if !s.is_empty() => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn string_list(v: Option<&Value>, field: &str) -> std::result::Result<Vec<String>, String> {
    match v {
        None | Some(Value::Null) => Ok(Vec::new()),
        Some(Value::Array(items)) => items
            .iter()
            .map(|item| opaque(item).ok_or_else(|| format!("non-string entry in `{field}`")))
            .collect(),
        Some(_) => Err(format!("`{field}` is not a list")),
    }
}

fn parse_timestamp(raw: &str) -> std::result::Result<DateTime<Utc>, String> {
    DateTime::parse_from_rfc3339(raw)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| format!("bad timestamp `{raw}`: {e}"))
}

fn parse_json_record(line: &str) -> std::result::Result<Post, String> {
    let value: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let obj = value.as_object().ok_or("record is not a JSON object")?;
    let field = |name: &str| obj.get(name).and_then(opaque);

    let post_id = field("id").ok_or("missing `id`")?;
    let author_id = field("author").ok_or("missing `author`")?;
    let kind: PostKind = obj
        .get("kind")
        .and_then(Value::as_str)
        .ok_or("missing `kind`")?
        .parse()
        .map_err(|e: Error| e.to_string())?;
    let text = match obj.get("text") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Null) | None => return Err("missing `text`".into()),
        Some(_) => return Err("`text` is not a string".into()),
    };
    let timestamp = match obj.get("ts") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(parse_timestamp(s)?),
        Some(Value::Number(n)) => {
            let secs = n.as_i64().ok_or("`ts` is not an integer epoch")?;
            Some(DateTime::from_timestamp(secs, 0).ok_or("`ts` out of range")?)
        }
        Some(_) => return Err("`ts` has unsupported type".into()),
    };

    build_post(RawFields {
        post_id,
        author_id,
        kind,
        text,
        rt_author: field("rt_author"),
        rt_post: field("rt_post"),
        hashtags: string_list(obj.get("hashtags"), "hashtags")?,
        urls: string_list(obj.get("urls"), "urls")?,
        images: string_list(obj.get("images"), "images")?,
        timestamp,
    })
}

struct RawFields {
    post_id: String,
    author_id: String,
    kind: PostKind,
    text: String,
    rt_author: Option<String>,
    rt_post: Option<String>,
    hashtags: Vec<String>,
    urls: Vec<String>,
    images: Vec<String>,
    timestamp: Option<DateTime<Utc>>,
}

fn build_post(raw: RawFields) -> std::result::Result<Post, String> {
    match (raw.kind, &raw.rt_author) {
        (PostKind::Retweet, None) => return Err("retweet without `rt_author`".into()),
        (k, Some(_)) if k != PostKind::Retweet => {
            return Err(format!("`rt_author` present on a {k} post"))
        }
        _ => {}
    }
    let hashtags = raw
        .hashtags
        .iter()
        .map(|h| normalize_hashtag(h))
        .filter(|h| !h.is_empty())
        .collect();
    Ok(Post {
        post_id: raw.post_id,
        author_id: raw.author_id,
        kind: raw.kind,
        text: raw.text,
        retweeted_author_id: raw.rt_author,
        retweeted_post_id: raw.rt_post,
        hashtags,
        urls: raw.urls,
        image_ids: raw.images,
        timestamp: raw.timestamp,
    })
}

fn parse_csv(raw: &str, columns: &CsvColumns) -> Result<Parsed> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(raw.as_bytes());
    let headers = reader.headers()?.clone();
    let locate = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("CSV corpus has no column `{name}`")))
    };
    let locate_opt = |name: &Option<String>| -> Result<Option<usize>> {
        name.as_deref().map(locate).transpose()
    };
    let id = locate(&columns.id)?;
    let author = locate(&columns.author)?;
    let kind = locate(&columns.kind)?;
    let text = locate(&columns.text)?;
    let rt_author = locate_opt(&columns.rt_author)?;
    let rt_post = locate_opt(&columns.rt_post)?;
    let hashtags = locate_opt(&columns.hashtags)?;
    let urls = locate_opt(&columns.urls)?;
    let images = locate_opt(&columns.images)?;
    let ts = locate_opt(&columns.ts)?;
    let sep = columns.list_separator.as_str();

    let rows: Vec<(usize, std::result::Result<csv::StringRecord, String>)> = reader
        .records()
        .enumerate()
        .map(|(i, r)| (i + 1, r.map_err(|e| e.to_string())))
        .collect();

    Ok(rows
        .into_par_iter()
        .map(|(line, row)| {
            let parsed = row.and_then(|row| {
                let cell = |idx: Option<usize>| -> Option<&str> {
                    idx.and_then(|i| row.get(i)).filter(|s| !s.is_empty())
                };
                let list = |idx: Option<usize>| -> Vec<String> {
                    cell(idx)
                        .map(|s| {
                            s.split(sep)
                                .map(str::trim)
                                .filter(|x| !x.is_empty())
                                .map(str::to_owned)
                                .collect()
                        })
                        .unwrap_or_default()
                };
                let post_id = cell(Some(id)).ok_or("missing `id`")?.to_owned();
                let author_id = cell(Some(author)).ok_or("missing `author`")?.to_owned();
                let kind: PostKind = cell(Some(kind))
                    .ok_or("missing `kind`")?
                    .parse()
                    .map_err(|e: Error| e.to_string())?;
                let text = row.get(text).ok_or("missing `text`")?.to_owned();
                let timestamp = cell(ts).map(parse_timestamp).transpose()?;
                build_post(RawFields {
                    post_id,
                    author_id,
                    kind,
                    text,
                    rt_author: cell(rt_author).map(str::to_owned),
                    rt_post: cell(rt_post).map(str::to_owned),
                    hashtags: list(hashtags),
                    urls: list(urls),
                    images: list(images),
                    timestamp,
                })
            });
            (line, parsed)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    const FOUR: &str = r##"{"id":"1","author":"a","kind":"original","text":"hello world","hashtags":["#Gaza"]}
{"id":"2","author":"b","kind":"retweet","text":"RT hello","rt_author":"a","rt_post":"1"}
{"id":"3","author":"c","kind":"retweet","text":"RT other","rt_author":"z","rt_post":"99"}
{"id":"4","author":"a","kind":"reply","text":"@b thanks","ts":"2023-10-07T12:00:00Z"}
"##;

    #[test]
    fn four_line_fixture() {
        let (corpus, report) = parse_jsonl_str(FOUR).unwrap();
        assert_eq!(corpus.len(), 4);
        let kinds: Vec<_> = corpus.posts().iter().map(|p| p.kind).collect();
        assert_eq!(
            kinds,
            [PostKind::Original, PostKind::Retweet, PostKind::Retweet, PostKind::Reply]
        );
        assert_eq!(corpus.posts()[0].hashtags, ["gaza"]);
        assert_eq!(report.external_retweet_refs, 1);
        assert!(report.malformed.is_empty());
        assert!(corpus.posts()[3].timestamp.is_some());
    }

    #[test]
    fn retweet_without_target_is_malformed() {
        let raw = format!(
            "{FOUR}{}\n",
            r#"{"id":"5","author":"d","kind":"retweet","text":"RT x"}"#
        );
        let (corpus, report) = parse_jsonl_str(&raw).unwrap();
        assert_eq!(corpus.len(), 4);
        assert_eq!(report.malformed.len(), 1);
        assert_eq!(report.malformed[0].line, 5);
    }

    #[test]
    fn duplicate_ids_are_malformed() {
        let raw = format!(
            "{FOUR}{}\n",
            r#"{"id":"1","author":"d","kind":"original","text":"again"}"#
        );
        let (corpus, report) = parse_jsonl_str(&raw).unwrap();
        assert_eq!(corpus.len(), 4);
        assert_eq!(corpus.get("1").unwrap().author_id, "a");
        assert!(report.malformed[0].reason.contains("duplicate"));
    }

    #[test]
    fn mostly_malformed_is_fatal() {
        let raw = "{\"id\":\"1\"}\nnot json\n{\"id\":\"3\",\"author\":\"a\",\"kind\":\"reply\",\"text\":\"\"}\n";
        assert!(matches!(parse_jsonl_str(raw), Err(Error::Format(_))));
    }

    #[test]
    fn csv_with_custom_columns() {
        let raw = "pid,user,type,body,target,tags\n\
                   1,a,original,hello,,Gaza|#Peace\n\
                   2,b,retweet,RT hello,a,\n";
        let columns = CsvColumns {
            id: "pid".into(),
            author: "user".into(),
            kind: "type".into(),
            text: "body".into(),
            rt_author: Some("target".into()),
            rt_post: None,
            hashtags: Some("tags".into()),
            urls: None,
            images: None,
            ts: None,
            list_separator: "|".into(),
        };
        let (corpus, report) = assemble(parse_csv(raw, &columns).unwrap()).unwrap();
        assert_eq!(report.loaded, 2);
        assert_eq!(corpus.posts()[0].hashtags, ["gaza", "peace"]);
        assert_eq!(corpus.posts()[1].retweeted_author_id.as_deref(), Some("a"));
    }

    #[test]
    fn csv_missing_mapped_column_is_config_error() {
        let raw = "id,author,kind\n1,a,original\n";
        let err = parse_csv(raw, &CsvColumns::default()).unwrap_err();
        assert!(err.is_config());
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("posts.jsonl");
        let (corpus, _) = parse_jsonl_str(FOUR).unwrap();
        write_jsonl(&path, corpus.posts()).unwrap();
        let (back, report) = load_corpus(&path, CorpusFormat::Jsonl, &CsvColumns::default()).unwrap();
        assert!(report.malformed.is_empty());
        assert_eq!(back.posts(), corpus.posts());
    }
}
