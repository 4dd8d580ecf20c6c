//! Click-log ingestion: parsing, cleaning, session segmentation and the
//! count tables that every extractor reads.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::text::normalize_whitespace;

/// Default inactivity gap, in seconds, that closes a session.
pub const DEFAULT_SESSION_TIMEOUT_S: i64 = 300;

/// One click event: `timestamp<TAB>user<TAB>query<TAB>url<TAB>rank`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ClickRecord {
    pub timestamp: i64,
    pub user: String,
    pub query: String,
    pub url: String,
    pub rank: u32,
}

impl ClickRecord {
    /// Parses one tab-separated line; `None` if the line is malformed.
    pub fn parse_line(line: &str) -> Option<Self> {
        let line = line.strip_suffix('\r').unwrap_or(line);
        let mut fields = line.split('\t');
        let timestamp = fields.next()?.trim().parse::<i64>().ok()?;
        let user = fields.next()?.trim().to_string();
        let query = normalize_whitespace(fields.next()?);
        let url = fields.next()?.trim().to_string();
        let rank = fields.next()?.trim().parse::<u32>().ok()?;
        if fields.next().is_some() || user.is_empty() || query.is_empty() || url.is_empty() || rank == 0 {
            return None;
        }
        Some(ClickRecord {
            timestamp,
            user,
            query,
            url,
            rank,
        })
    }
}

impl fmt::Display for ClickRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{}\t{}\t{}",
            self.timestamp, self.user, self.query, self.url, self.rank
        )
    }
}

/// Result of [`parse_log`]: the well-formed records plus the skip tally.
#[derive(Debug, Clone, Default)]
pub struct ParsedLog {
    pub records: Vec<ClickRecord>,
    pub skipped: usize,
    /// Non-blank lines seen.
    pub total: usize,
}

/// Parses click-log lines, skipping (and counting) malformed ones. Blank
/// lines are ignored. More than half the lines malformed is a hard error.
pub fn parse_log<I, S>(lines: I) -> Result<ParsedLog>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut out = ParsedLog::default();
    for line in lines {
        let line = line.as_ref();
        if line.trim().is_empty() {
            continue;
        }
        out.total += 1;
        match ClickRecord::parse_line(line) {
            Some(r) => out.records.push(r),
            None => out.skipped += 1,
        }
    }
    if out.skipped * 2 > out.total {
        return Err(Error::MostlyMalformed {
            skipped: out.skipped,
            total: out.total,
        });
    }
    Ok(out)
}

pub fn read_log<R: BufRead>(reader: R) -> Result<ParsedLog> {
    let lines = reader
        .lines()
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|source| Error::Io {
            path: "<click log>".into(),
            source,
        })?;
    parse_log(lines)
}

pub fn write_log<W: Write>(mut w: W, records: &[ClickRecord]) -> std::io::Result<()> {
    for r in records {
        writeln!(w, "{r}")?;
    }
    Ok(())
}

/// Collapses per-cookie duplicates, then drops (query, url) pairs seen once.
///
/// Duplicate `(user, query, url)` triples merge into one record carrying the
/// earliest timestamp and the best (minimum) rank, placed where the triple
/// first occurred.
pub fn clean_log(records: &[ClickRecord]) -> Vec<ClickRecord> {
    let mut first_seen: HashMap<(&str, &str, &str), usize> = HashMap::new();
    let mut merged: Vec<ClickRecord> = Vec::new();
    for r in records {
        let key = (r.user.as_str(), r.query.as_str(), r.url.as_str());
        match first_seen.get(&key) {
            Some(&i) => {
                let m = &mut merged[i];
                m.timestamp = m.timestamp.min(r.timestamp);
                m.rank = m.rank.min(r.rank);
            }
            None => {
                first_seen.insert(key, merged.len());
                merged.push(r.clone());
            }
        }
    }

    let mut pair_count: HashMap<(&str, &str), usize> = HashMap::new();
    for r in &merged {
        *pair_count.entry((r.query.as_str(), r.url.as_str())).or_default() += 1;
    }
    let keep: Vec<bool> = merged
        .iter()
        .map(|r| pair_count[&(r.query.as_str(), r.url.as_str())] >= 2)
        .collect();
    merged
        .into_iter()
        .zip(keep)
        .filter_map(|(r, k)| k.then_some(r))
        .collect()
}

/// One query event inside a session. Repeated consecutive issues of the same
/// query are folded into one event spanning `start..=end`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionEvent {
    pub start: i64,
    pub end: i64,
    pub query: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub id: usize,
    pub user: String,
    pub events: Vec<SessionEvent>,
}

impl Session {
    pub fn queries(&self) -> impl Iterator<Item = &str> {
        self.events.iter().map(|e| e.query.as_str())
    }
}

/// Splits each user's time-ordered events into sessions whenever the idle
/// gap exceeds `timeout_s`. Sessions come out ordered by user, then time.
pub fn segment_sessions(records: &[ClickRecord], timeout_s: i64) -> Vec<Session> {
    assert!(timeout_s > 0, "session timeout must be positive");
    let mut by_user: BTreeMap<&str, Vec<(i64, usize)>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_user.entry(r.user.as_str()).or_default().push((r.timestamp, i));
    }

    let mut sessions = Vec::new();
    for (user, mut events) in by_user {
        events.sort_unstable();
        let mut current: Vec<SessionEvent> = Vec::new();
        for (ts, i) in events {
            let query = &records[i].query;
            if let Some(last) = current.last_mut() {
                if ts - last.end > timeout_s {
                    sessions.push(Session {
                        id: sessions.len(),
                        user: user.to_string(),
                        events: std::mem::take(&mut current),
                    });
                } else if last.query == *query {
                    last.end = ts;
                    continue;
                }
            }
            current.push(SessionEvent {
                start: ts,
                end: ts,
                query: query.clone(),
            });
        }
        if !current.is_empty() {
            sessions.push(Session {
                id: sessions.len(),
                user: user.to_string(),
                events: current,
            });
        }
    }
    sessions
}

/// Debug dump: `user<TAB>session_id<TAB>timestamp<TAB>query`, one line per event.
pub fn write_sessions<W: Write>(mut w: W, sessions: &[Session]) -> std::io::Result<()> {
    for s in sessions {
        for e in &s.events {
            writeln!(w, "{}\t{}\t{}\t{}", s.user, s.id, e.start, e.query)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct QueryId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UrlId(pub u32);

#[derive(Debug, Clone, Default)]
struct Vocab {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    fn intern(&mut self, s: &str) -> u32 {
        if let Some(&id) = self.index.get(s) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(s.to_string());
        self.index.insert(s.to_string(), id);
        id
    }

    fn get(&self, s: &str) -> Option<u32> {
        self.index.get(s).copied()
    }
}

/// Click count and best observed rank of one (url, query) edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClickEdge {
    pub count: u64,
    pub best_rank: u32,
}

/// Interned count tables over a cleaned log: cnt(u,q), cnt(q), cnt(u), the
/// URL cover of each query and the query cover of each URL. Immutable once
/// built.
#[derive(Debug, Clone, Default)]
pub struct ClickStats {
    queries: Vocab,
    urls: Vocab,
    cnt_q: Vec<u64>,
    cnt_u: Vec<u64>,
    total: u64,
    url_cover: Vec<Vec<(UrlId, ClickEdge)>>,
    query_cover: Vec<Vec<(QueryId, ClickEdge)>>,
}

impl ClickStats {
    pub fn build(records: &[ClickRecord]) -> Self {
        let mut stats = ClickStats::default();
        let mut edges: HashMap<(u32, u32), ClickEdge> = HashMap::new();
        for r in records {
            let q = stats.queries.intern(&r.query);
            let u = stats.urls.intern(&r.url);
            edges
                .entry((u, q))
                .and_modify(|e| {
                    e.count += 1;
                    e.best_rank = e.best_rank.min(r.rank);
                })
                .or_insert(ClickEdge {
                    count: 1,
                    best_rank: r.rank,
                });
        }
        stats.cnt_q = vec![0; stats.queries.names.len()];
        stats.cnt_u = vec![0; stats.urls.names.len()];
        stats.url_cover = vec![Vec::new(); stats.queries.names.len()];
        stats.query_cover = vec![Vec::new(); stats.urls.names.len()];
        for (&(u, q), &edge) in &edges {
            stats.cnt_q[q as usize] += edge.count;
            stats.cnt_u[u as usize] += edge.count;
            stats.total += edge.count;
            stats.url_cover[q as usize].push((UrlId(u), edge));
            stats.query_cover[u as usize].push((QueryId(q), edge));
        }
        for list in &mut stats.url_cover {
            list.sort_unstable_by_key(|(u, _)| *u);
        }
        for list in &mut stats.query_cover {
            list.sort_unstable_by_key(|(q, _)| *q);
        }
        stats
    }

    pub fn num_queries(&self) -> usize {
        self.queries.names.len()
    }

    pub fn num_urls(&self) -> usize {
        self.urls.names.len()
    }

    /// Grand total of clicks, Σ_q cnt(q).
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn query_id(&self, q: &str) -> Option<QueryId> {
        self.queries.get(q).map(QueryId)
    }

    pub fn url_id(&self, u: &str) -> Option<UrlId> {
        self.urls.get(u).map(UrlId)
    }

    pub fn query(&self, id: QueryId) -> &str {
        &self.queries.names[id.0 as usize]
    }

    pub fn url(&self, id: UrlId) -> &str {
        &self.urls.names[id.0 as usize]
    }

    /// Query ids in first-appearance order.
    pub fn query_ids(&self) -> impl Iterator<Item = QueryId> {
        (0..self.queries.names.len() as u32).map(QueryId)
    }

    pub fn contains_query(&self, q: &str) -> bool {
        self.queries.get(q).is_some()
    }

    pub fn cnt_q(&self, q: &str) -> u64 {
        self.query_id(q).map_or(0, |id| self.cnt_q_id(id))
    }

    pub fn cnt_q_id(&self, q: QueryId) -> u64 {
        self.cnt_q[q.0 as usize]
    }

    pub fn cnt_u(&self, u: &str) -> u64 {
        self.url_id(u).map_or(0, |id| self.cnt_u_id(id))
    }

    pub fn cnt_u_id(&self, u: UrlId) -> u64 {
        self.cnt_u[u.0 as usize]
    }

    pub fn edge(&self, u: UrlId, q: QueryId) -> Option<ClickEdge> {
        let cover = &self.url_cover[q.0 as usize];
        cover
            .binary_search_by_key(&u, |(id, _)| *id)
            .ok()
            .map(|i| cover[i].1)
    }

    pub fn cnt_uq(&self, u: &str, q: &str) -> u64 {
        match (self.url_id(u), self.query_id(q)) {
            (Some(u), Some(q)) => self.edge(u, q).map_or(0, |e| e.count),
            _ => 0,
        }
    }

    /// Minimum observed rank of `u` in the results of `q`.
    pub fn best_rank(&self, u: &str, q: &str) -> Option<u32> {
        let (u, q) = (self.url_id(u)?, self.query_id(q)?);
        self.edge(u, q).map(|e| e.best_rank)
    }

    /// UC_q, sorted by url id.
    pub fn url_cover(&self, q: QueryId) -> &[(UrlId, ClickEdge)] {
        &self.url_cover[q.0 as usize]
    }

    /// QC_u, sorted by query id.
    pub fn query_cover(&self, u: UrlId) -> &[(QueryId, ClickEdge)] {
        &self.query_cover[u.0 as usize]
    }

    /// P(u|q) = cnt(u,q) / cnt(q).
    pub fn p_url_given_query(&self, u: UrlId, q: QueryId) -> f64 {
        let cq = self.cnt_q_id(q);
        if cq == 0 {
            return 0.0;
        }
        self.edge(u, q).map_or(0.0, |e| e.count as f64 / cq as f64)
    }

    /// P(q) = cnt(q) / Σ cnt.
    pub fn p_query(&self, q: QueryId) -> f64 {
        self.cnt_q_id(q) as f64 / self.total as f64
    }

    /// P(u) = cnt(u) / Σ cnt.
    pub fn p_url(&self, u: UrlId) -> f64 {
        self.cnt_u_id(u) as f64 / self.total as f64
    }
}
