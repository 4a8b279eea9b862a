//! Raw record parsing: posts (one JSON object per line) and event-count
//! tables (CSV with a `date,event_type,count` header).

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{self, BufRead, Read};
use std::sync::LazyLock;

use chrono::{DateTime, NaiveDate, NaiveDateTime, Timelike, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use url::Url;

/// Query parameters dropped during URL normalization. Entries ending in `*`
/// match by prefix.
pub const TRACKING_PARAMS: &[&str] = &["utm_*", "fbclid", "gclid"];

const SECOND_LEVEL_LABELS: &[&str] = &["ac", "co", "com", "edu", "gob", "gov", "ne", "net", "or", "org"];

static URL_PATTERN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"(?i)\bhttps?://[^\s<>"'`]+"#).expect("valid url regex"));

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("failed to read input: {0}")]
    Io(#[from] io::Error),
    #[error("malformed event table: {0}")]
    Csv(#[from] csv::Error),
    #[error("event header must contain columns date,event_type,count (found {0:?})")]
    EventHeader(Vec<String>),
    #[error("event type allow-list is empty")]
    EmptyAllowList,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Post {
    pub post_id: String,
    pub author_id: String,
    pub timestamp: DateTime<Utc>,
    pub text: String,
    pub repost_of: Option<String>,
    pub reply_to: Option<String>,
    pub quote_of: Option<String>,
    pub urls: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EventRecord {
    pub date: NaiveDate,
    pub event_type: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DomainRef {
    pub url: String,
    pub host: String,
}

/// A record that could not be turned into a value. `line` is 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectReason {
    pub line: usize,
    pub field: Option<String>,
    pub reason: String,
}

impl RejectReason {
    fn field(line: usize, field: &str, reason: impl Into<String>) -> Self {
        Self { line, field: Some(field.to_string()), reason: reason.into() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PostBatch {
    pub posts: Vec<Post>,
    pub rejects: Vec<RejectReason>,
}

/// Streams posts in bounded batches so the whole corpus never has to sit in
/// memory at once. Duplicate ids are tracked across batches.
pub struct PostReader<R> {
    reader: R,
    batch_size: usize,
    line_no: usize,
    seen: HashSet<String>,
    buf: String,
    done: bool,
}

impl<R: BufRead> PostReader<R> {
    pub fn new(reader: R, batch_size: usize) -> Self {
        Self {
            reader,
            batch_size: batch_size.max(1),
            line_no: 0,
            seen: HashSet::new(),
            buf: String::new(),
            done: false,
        }
    }

    fn next_batch(&mut self) -> io::Result<Option<PostBatch>> {
        if self.done {
            return Ok(None);
        }
        let mut batch = PostBatch::default();
        let mut records = 0;
        while records < self.batch_size {
            self.buf.clear();
            let n = self.reader.read_line(&mut self.buf)?;
            if n == 0 {
                self.done = true;
                break;
            }
            self.line_no += 1;
            let line = self.buf.trim();
            if line.is_empty() {
                continue;
            }
            records += 1;
            match parse_post_line(line, self.line_no) {
                Ok(post) => {
                    if self.seen.insert(post.post_id.clone()) {
                        batch.posts.push(post);
                    } else {
                        batch.rejects.push(RejectReason::field(
                            self.line_no,
                            "id",
                            format!("duplicate post id {:?}", post.post_id),
                        ));
                    }
                }
                Err(reject) => batch.rejects.push(reject),
            }
        }
        if records == 0 && self.done {
            return Ok(None);
        }
        Ok(Some(batch))
    }
}

impl<R: BufRead> Iterator for PostReader<R> {
    type Item = io::Result<PostBatch>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_batch().transpose()
    }
}

/// Parses a whole post stream. Malformed lines end up in the reject list;
/// only I/O failures are fatal.
pub fn parse_posts<R: BufRead>(reader: R) -> Result<PostBatch, IngestError> {
    let mut all = PostBatch::default();
    for batch in PostReader::new(reader, 64 * 1024) {
        let batch = batch?;
        all.posts.extend(batch.posts);
        all.rejects.extend(batch.rejects);
    }
    Ok(all)
}

fn parse_post_line(line: &str, line_no: usize) -> Result<Post, RejectReason> {
    let value: Value = serde_json::from_str(line).map_err(|e| RejectReason {
        line: line_no,
        field: None,
        reason: format!("not a JSON object: {e}"),
    })?;
    let Value::Object(obj) = value else {
        return Err(RejectReason { line: line_no, field: None, reason: "record is not an object".into() });
    };

    let required = |name: &str| -> Result<String, RejectReason> {
        match obj.get(name) {
            Some(Value::String(s)) if !s.trim().is_empty() => Ok(s.clone()),
            Some(Value::String(_)) => Err(RejectReason::field(line_no, name, "empty value")),
            Some(Value::Number(n)) if name == "id" || name == "author_id" => Ok(n.to_string()),
            Some(_) => Err(RejectReason::field(line_no, name, "expected a string")),
            None => Err(RejectReason::field(line_no, name, "missing field")),
        }
    };
    let optional = |name: &str| -> Result<Option<String>, RejectReason> {
        match obj.get(name) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) if s.is_empty() => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(Value::Number(n)) => Ok(Some(n.to_string())),
            Some(_) => Err(RejectReason::field(line_no, name, "expected a string or null")),
        }
    };

    let post_id = required("id")?;
    let author_id = required("author_id")?;
    let raw_ts = required("timestamp")?;
    let timestamp = parse_timestamp(&raw_ts)
        .ok_or_else(|| RejectReason::field(line_no, "timestamp", format!("not an ISO-8601 instant: {raw_ts:?}")))?;
    let text = match obj.get("text") {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(RejectReason::field(line_no, "text", "expected a string")),
    };
    let repost_of = optional("repost_of")?;
    let reply_to = optional("reply_to")?;
    let quote_of = optional("quote_of")?;
    for (name, target) in [("repost_of", &repost_of), ("reply_to", &reply_to), ("quote_of", &quote_of)] {
        if target.as_deref() == Some(post_id.as_str()) {
            return Err(RejectReason::field(line_no, name, "post references itself"));
        }
    }
    let urls = match obj.get("urls") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(items)) => {
            let mut urls = Vec::with_capacity(items.len());
            for item in items {
                let Value::String(s) = item else {
                    return Err(RejectReason::field(line_no, "urls", "expected an array of strings"));
                };
                if let Some(norm) = normalize_url(s) {
                    urls.push(norm.url);
                }
            }
            urls
        }
        Some(_) => return Err(RejectReason::field(line_no, "urls", "expected an array of strings")),
    };

    Ok(Post { post_id, author_id, timestamp, text, repost_of, reply_to, quote_of, urls })
}

/// Parses an ISO-8601 instant, truncating to whole seconds. Offsets are
/// converted to UTC; a missing offset is read as UTC.
pub fn parse_timestamp(raw: &str) -> Option<DateTime<Utc>> {
    let raw = raw.trim();
    let parsed = DateTime::parse_from_rfc3339(raw)
        .map(|t| t.with_timezone(&Utc))
        .ok()
        .or_else(|| {
            ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"]
                .iter()
                .find_map(|fmt| NaiveDateTime::parse_from_str(raw, fmt).ok())
                .map(|n| n.and_utc())
        })?;
    parsed.with_nanosecond(0)
}

/// Every http(s) URL in the post's text or `urls` field, normalized and
/// deduplicated in order of first appearance.
pub fn extract_urls(post: &Post) -> Vec<DomainRef> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    let from_text = URL_PATTERN.find_iter(&post.text).map(|m| trim_trailing_punctuation(m.as_str()));
    for candidate in from_text.chain(post.urls.iter().map(String::as_str)) {
        if let Some(domain) = normalize_url(candidate) {
            if seen.insert(domain.url.clone()) {
                out.push(domain);
            }
        }
    }
    out
}

fn trim_trailing_punctuation(s: &str) -> &str {
    s.trim_end_matches(['.', ',', ';', ':', '!', '?', ')', ']', '}', '\'', '"'])
}

/// Canonical form of an absolute http(s) URL: lowercase host, no fragment,
/// tracking parameters removed. Returns `None` for anything else.
pub fn normalize_url(raw: &str) -> Option<DomainRef> {
    let mut url = Url::parse(raw.trim()).ok()?;
    if !matches!(url.scheme(), "http" | "https") {
        return None;
    }
    url.host_str()?;
    url.set_fragment(None);
    if url.query().is_some() {
        let kept: Vec<(String, String)> = url
            .query_pairs()
            .filter(|(k, _)| !is_tracking_param(k))
            .map(|(k, v)| (k.into_owned(), v.into_owned()))
            .collect();
        if kept.is_empty() {
            url.set_query(None);
        } else {
            url.query_pairs_mut().clear().extend_pairs(kept);
        }
    }
    let host = registrable_domain(url.host_str()?);
    Some(DomainRef { url: url.to_string(), host })
}

fn is_tracking_param(key: &str) -> bool {
    let key = key.to_ascii_lowercase();
    TRACKING_PARAMS.iter().any(|p| match p.strip_suffix('*') {
        Some(prefix) => key.starts_with(prefix),
        None => key == *p,
    })
}

/// Approximates the registrable domain without a public-suffix table: the
/// last two labels, or three when the second-to-last is a common
/// second-level label under a two-letter country code (`bbc.co.uk`).
pub fn registrable_domain(host: &str) -> String {
    let host = host.trim_end_matches('.').to_ascii_lowercase();
    if host.parse::<std::net::IpAddr>().is_ok() || host.starts_with('[') {
        return host;
    }
    let labels: Vec<&str> = host.split('.').collect();
    if labels.len() <= 2 {
        return host;
    }
    let n = labels.len();
    let keep = if labels[n - 1].len() == 2 && SECOND_LEVEL_LABELS.contains(&labels[n - 2]) { 3 } else { 2 };
    labels[n - keep..].join(".")
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedEvents {
    pub records: Vec<EventRecord>,
    pub rejects: Vec<RejectReason>,
}

/// Reads a `date,event_type,count` table, keeps allow-listed types and sums
/// rows sharing `(date, event_type)`. Output is sorted by date then type.
pub fn parse_events<R: Read>(reader: R, allowed_types: &BTreeSet<String>) -> Result<ParsedEvents, IngestError> {
    if allowed_types.is_empty() {
        return Err(IngestError::EmptyAllowList);
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.to_ascii_lowercase()).collect();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(date_col), Some(type_col), Some(count_col)) = (col("date"), col("event_type"), col("count")) else {
        return Err(IngestError::EventHeader(headers));
    };

    let mut sums: BTreeMap<(NaiveDate, String), u64> = BTreeMap::new();
    let mut rejects = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) if e.is_io_error() => return Err(e.into()),
            Err(e) => {
                rejects.push(RejectReason { line, field: None, reason: e.to_string() });
                continue;
            }
        };
        let get = |c: usize| row.get(c).unwrap_or("");
        let Ok(date) = NaiveDate::parse_from_str(get(date_col), "%Y-%m-%d") else {
            rejects.push(RejectReason::field(line, "date", format!("not a YYYY-MM-DD date: {:?}", get(date_col))));
            continue;
        };
        let event_type = get(type_col).to_string();
        let count = match get(count_col).parse::<i64>() {
            Ok(c) if c < 0 => {
                rejects.push(RejectReason::field(line, "count", format!("negative count {c}")));
                continue;
            }
            Ok(c) => c as u64,
            Err(_) => {
                rejects.push(RejectReason::field(line, "count", format!("not an integer: {:?}", get(count_col))));
                continue;
            }
        };
        if !allowed_types.contains(&event_type) {
            continue;
        }
        *sums.entry((date, event_type)).or_default() += count;
    }
    let records = sums.into_iter().map(|((date, event_type), count)| EventRecord { date, event_type, count }).collect();
    Ok(ParsedEvents { records, rejects })
}

/// Canonical posts file: one JSON record per line, in input order.
pub fn posts_to_jsonl(posts: &[Post]) -> String {
    let mut out = String::new();
    for p in posts {
        let value = serde_json::json!({
            "id": p.post_id,
            "author_id": p.author_id,
            "timestamp": p.timestamp.format("%Y-%m-%dT%H:%M:%SZ").to_string(),
            "text": p.text,
            "repost_of": p.repost_of,
            "reply_to": p.reply_to,
            "quote_of": p.quote_of,
            "urls": p.urls,
        });
        out.push_str(&value.to_string());
        out.push('\n');
    }
    out
}

/// Canonical events table with a header row.
pub fn events_to_csv(events: &[EventRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["date", "event_type", "count"]).expect("in-memory write");
    for e in events {
        w.write_record([e.date.to_string(), e.event_type.clone(), e.count.to_string()]).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn extraction_is_idempotent(
            hosts in prop::collection::vec("[a-z]{1,8}\\.(com|org|co\\.uk)", 1..4),
            paths in prop::collection::vec("[a-zA-Z0-9]{0,6}", 1..4),
            tracking in any::<bool>(),
        ) {
            let text: Vec<String> = hosts.iter().zip(paths.iter().cycle()).map(|(h, p)| {
                let q = if tracking { "?utm_medium=x&k=1" } else { "" };
                format!("https://WWW.{}/{}{}", h.to_uppercase(), p, q)
            }).collect();
            let mut post = Post {
                post_id: "p".into(), author_id: "u".into(),
                timestamp: parse_timestamp("2022-03-01T00:00:00Z").unwrap(),
                text: text.join(" "), repost_of: None, reply_to: None, quote_of: None, urls: vec![],
            };
            let first = extract_urls(&post);
            post.text = first.iter().map(|d| d.url.clone()).collect::<Vec<_>>().join(" ");
            prop_assert_eq!(extract_urls(&post), first);
        }

        #[test]
        fn well_formed_count_matches(n_good in 0usize..20, n_bad in 0usize..20) {
            let mut lines = Vec::new();
            for i in 0..n_good {
                lines.push(format!("{{\"id\":\"g{i}\",\"author_id\":\"u\",\"timestamp\":\"2022-03-01T00:00:00Z\"}}"));
            }
            for i in 0..n_bad {
                lines.push(format!("{{\"id\":\"b{i}\",\"timestamp\":\"2022-03-01T00:00:00Z\"}}"));
            }
            let input = lines.join("\n");
            let a = parse_posts(input.as_bytes()).unwrap();
            let b = parse_posts(input.as_bytes()).unwrap();
            prop_assert_eq!(a.posts.len(), n_good);
            prop_assert_eq!(a.rejects.len(), n_bad);
            prop_assert_eq!(a, b);
        }
    }
}
