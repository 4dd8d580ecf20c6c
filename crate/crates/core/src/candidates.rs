//! The three candidate extractors and their relation strengths.
//!
//! * best-rank co-click: queries under which a clicked URL of `q1` reaches
//!   its best observed rank, weighted by `P_CC(q2|q1) = Σ_u P(u|q1)·P(q2|u)`;
//! * co-topic: `q1` extended by a facet word, weighted by `q2`'s share of
//!   the topic's click mass;
//! * co-session: immediate successors of `q1` within user sessions, weighted
//!   by the empirical transition probability.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::log_core::{ClickStats, Session};
use crate::text::sig12;

pub const DEFAULT_FACET_MIN_DISTINCT: usize = 5;
pub const DEFAULT_FACET_MIN_QUERY_FREQ: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RelationKind {
    CoClick,
    CoTopic,
    CoSession,
}

impl RelationKind {
    pub const ALL: [RelationKind; 3] = [RelationKind::CoClick, RelationKind::CoTopic, RelationKind::CoSession];

    pub fn as_str(self) -> &'static str {
        match self {
            RelationKind::CoClick => "CoClick",
            RelationKind::CoTopic => "CoTopic",
            RelationKind::CoSession => "CoSession",
        }
    }
}

impl fmt::Display for RelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RelationKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        RelationKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown relation kind {s:?}"))
    }
}

/// The set of relations a (q1, q2) pair was found by; empty for random pairs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct KindSet(u8);

impl KindSet {
    pub const EMPTY: KindSet = KindSet(0);

    fn bit(kind: RelationKind) -> u8 {
        1 << kind as u8
    }

    pub fn insert(&mut self, kind: RelationKind) {
        self.0 |= Self::bit(kind);
    }

    pub fn contains(self, kind: RelationKind) -> bool {
        self.0 & Self::bit(kind) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = RelationKind> {
        RelationKind::ALL.into_iter().filter(move |k| self.contains(*k))
    }
}

impl FromIterator<RelationKind> for KindSet {
    fn from_iter<I: IntoIterator<Item = RelationKind>>(iter: I) -> Self {
        let mut set = KindSet::EMPTY;
        for k in iter {
            set.insert(k);
        }
        set
    }
}

/// `CoClick+CoSession`, or `Random` for the empty set.
impl fmt::Display for KindSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return f.write_str("Random");
        }
        let names: Vec<&str> = self.iter().map(RelationKind::as_str).collect();
        f.write_str(&names.join("+"))
    }
}

impl FromStr for KindSet {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s == "Random" {
            return Ok(KindSet::EMPTY);
        }
        s.split('+').map(str::parse::<RelationKind>).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePair {
    pub q1: String,
    pub q2: String,
    pub kind: RelationKind,
    pub strength: f64,
}

/// Best-rank co-click queries of `q`: for every URL clicked under `q`, all
/// queries under which that URL attains its minimum best rank. `q` itself is
/// never returned.
pub fn brccq(q: &str, stats: &ClickStats) -> BTreeSet<String> {
    let Some(qid) = stats.query_id(q) else {
        return BTreeSet::new();
    };
    let mut out = BTreeSet::new();
    for &(u, _) in stats.url_cover(qid) {
        let cover = stats.query_cover(u);
        let Some(best) = cover.iter().map(|(_, e)| e.best_rank).min() else {
            continue;
        };
        for &(other, e) in cover {
            if e.best_rank == best && other != qid {
                out.insert(stats.query(other).to_string());
            }
        }
    }
    out
}

/// `P_CC(q2|q1) = Σ_{u ∈ UC_q1} P(u|q1) · P(q2) · P(u|q2) / P(u)`.
pub fn p_cc(q1: &str, q2: &str, stats: &ClickStats) -> Result<f64> {
    let id1 = stats
        .query_id(q1)
        .ok_or_else(|| Error::UnknownQuery(q1.to_string()))?;
    let Some(id2) = stats.query_id(q2) else {
        return Ok(0.0);
    };
    let p_q2 = stats.p_query(id2);
    let mut sum = 0.0;
    for &(u, _) in stats.url_cover(id1) {
        let p_u_q2 = stats.p_url_given_query(u, id2);
        if p_u_q2 > 0.0 {
            sum += stats.p_url_given_query(u, id1) * p_q2 * p_u_q2 / stats.p_url(u);
        }
    }
    Ok(sum)
}

/// Facet words: final chunks shared by many distinct, frequent queries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FacetLexicon {
    /// facet word → number of distinct qualifying queries ending in it
    pub facets: BTreeMap<String, usize>,
    pub min_distinct: usize,
    pub min_query_freq: u64,
}

impl FacetLexicon {
    /// A word is a facet when it is the last whitespace chunk of at least
    /// `min_distinct` distinct multi-chunk queries, each clicked at least
    /// `min_query_freq` times.
    pub fn detect(stats: &ClickStats, min_distinct: usize, min_query_freq: u64) -> Self {
        let mut ends: BTreeMap<String, usize> = BTreeMap::new();
        for q in stats.query_ids() {
            if stats.cnt_q_id(q) < min_query_freq {
                continue;
            }
            let text = stats.query(q);
            if let Some((_, last)) = text.rsplit_once(' ') {
                *ends.entry(last.to_string()).or_default() += 1;
            }
        }
        ends.retain(|_, n| *n >= min_distinct);
        FacetLexicon {
            facets: ends,
            min_distinct,
            min_query_freq,
        }
    }

    pub fn contains(&self, word: &str) -> bool {
        self.facets.contains_key(word)
    }

    pub fn is_empty(&self) -> bool {
        self.facets.is_empty()
    }
}

pub fn detect_facets(stats: &ClickStats) -> FacetLexicon {
    FacetLexicon::detect(stats, DEFAULT_FACET_MIN_DISTINCT, DEFAULT_FACET_MIN_QUERY_FREQ)
}

/// Co-topic queries of `q1`: logged queries `q1 + " " + facet`.
pub fn ctq(q1: &str, lex: &FacetLexicon, stats: &ClickStats) -> BTreeSet<String> {
    lex.facets
        .keys()
        .map(|w| format!("{q1} {w}"))
        .filter(|q2| stats.cnt_q(q2) > 0)
        .collect()
}

/// `P_CT(q2|q1) = cnt(q2) / (cnt(q1) + Σ_{q' ∈ CTQ_q1} cnt(q'))`.
pub fn p_ct(q1: &str, q2: &str, lex: &FacetLexicon, stats: &ClickStats) -> Result<f64> {
    if stats.cnt_q(q1) == 0 {
        return Err(Error::UnknownQuery(q1.to_string()));
    }
    let expansions = ctq(q1, lex, stats);
    if !expansions.contains(q2) {
        return Err(Error::NotCoTopic {
            q1: q1.to_string(),
            q2: q2.to_string(),
        });
    }
    Ok(stats.cnt_q(q2) as f64 / topic_frequency_of(q1, &expansions, stats) as f64)
}

/// `cnt(q1) + Σ_{q' ∈ CTQ_q1} cnt(q')`, the co-topic normalizer.
pub fn topic_frequency(q1: &str, lex: &FacetLexicon, stats: &ClickStats) -> u64 {
    topic_frequency_of(q1, &ctq(q1, lex, stats), stats)
}

fn topic_frequency_of(q1: &str, expansions: &BTreeSet<String>, stats: &ClickStats) -> u64 {
    stats.cnt_q(q1) + expansions.iter().map(|q| stats.cnt_q(q)).sum::<u64>()
}

/// Adjacency counts over session-ordered query events.
#[derive(Debug, Clone, Default)]
pub struct SessionGraph {
    occurrences: HashMap<String, u64>,
    successors: HashMap<String, BTreeMap<String, u64>>,
    out_degree: HashMap<String, u64>,
    in_degree: HashMap<String, u64>,
    adjacent_pairs: u64,
}

impl SessionGraph {
    pub fn build(sessions: &[Session]) -> Self {
        let mut g = SessionGraph::default();
        for s in sessions {
            for e in &s.events {
                *g.occurrences.entry(e.query.clone()).or_default() += 1;
            }
            for w in s.events.windows(2) {
                let (a, b) = (&w[0].query, &w[1].query);
                if a == b {
                    continue;
                }
                *g.successors
                    .entry(a.clone())
                    .or_default()
                    .entry(b.clone())
                    .or_default() += 1;
                *g.out_degree.entry(a.clone()).or_default() += 1;
                *g.in_degree.entry(b.clone()).or_default() += 1;
                g.adjacent_pairs += 1;
            }
        }
        g
    }

    /// Number of session events whose query is `q`.
    pub fn occurrences(&self, q: &str) -> u64 {
        self.occurrences.get(q).copied().unwrap_or(0)
    }

    /// cnt(q2, q1): how often `q2` immediately follows `q1`.
    pub fn transitions(&self, q1: &str, q2: &str) -> u64 {
        self.successors
            .get(q1)
            .and_then(|m| m.get(q2))
            .copied()
            .unwrap_or(0)
    }

    /// Immediate successors of `q1` with their counts, ordered by query.
    pub fn successors(&self, q1: &str) -> impl Iterator<Item = (&str, u64)> {
        self.successors
            .get(q1)
            .into_iter()
            .flat_map(|m| m.iter().map(|(k, &v)| (k.as_str(), v)))
    }

    /// Adjacent pairs whose predecessor is `q`.
    pub fn out_degree(&self, q: &str) -> u64 {
        self.out_degree.get(q).copied().unwrap_or(0)
    }

    /// Adjacent pairs whose successor is `q`.
    pub fn in_degree(&self, q: &str) -> u64 {
        self.in_degree.get(q).copied().unwrap_or(0)
    }

    pub fn adjacent_pairs(&self) -> u64 {
        self.adjacent_pairs
    }
}

/// Co-session queries: everything that immediately follows `q1` in a session.
pub fn csq(q1: &str, graph: &SessionGraph) -> BTreeSet<String> {
    graph.successors(q1).map(|(q, _)| q.to_string()).collect()
}

/// `P_CS(q2|q1) = cnt(q2, q1) / cnt(q1)` with cnt(q1) counted as session events.
pub fn p_cs(q1: &str, q2: &str, graph: &SessionGraph) -> f64 {
    let occ = graph.occurrences(q1);
    if occ == 0 {
        return 0.0;
    }
    graph.transitions(q1, q2) as f64 / occ as f64
}

/// Everything the extractors read, built once per log.
#[derive(Debug, Clone)]
pub struct CandidateContext {
    pub stats: ClickStats,
    pub lexicon: FacetLexicon,
    pub sessions: SessionGraph,
}

impl CandidateContext {
    pub fn new(stats: ClickStats, lexicon: FacetLexicon, sessions: SessionGraph) -> Self {
        CandidateContext {
            stats,
            lexicon,
            sessions,
        }
    }
}

/// All candidates of `q1` from the three extractors, one pair per (q2, kind),
/// ordered by kind, then strength descending, then `q2`.
pub fn generate_all(q1: &str, ctx: &CandidateContext) -> Vec<CandidatePair> {
    let mut out = Vec::new();
    let mut push = |q2: String, kind, strength: f64| {
        if q2 != q1 {
            out.push(CandidatePair {
                q1: q1.to_string(),
                q2,
                kind,
                strength,
            });
        }
    };

    if ctx.stats.contains_query(q1) {
        for q2 in brccq(q1, &ctx.stats) {
            let s = p_cc(q1, &q2, &ctx.stats).expect("q1 is known");
            push(q2, RelationKind::CoClick, s);
        }
        let expansions = ctq(q1, &ctx.lexicon, &ctx.stats);
        let denom = topic_frequency_of(q1, &expansions, &ctx.stats) as f64;
        for q2 in expansions {
            let s = ctx.stats.cnt_q(&q2) as f64 / denom;
            push(q2, RelationKind::CoTopic, s);
        }
    }
    for q2 in csq(q1, &ctx.sessions) {
        let s = p_cs(q1, &q2, &ctx.sessions);
        push(q2, RelationKind::CoSession, s);
    }

    out.sort_by(|a, b| {
        a.kind
            .cmp(&b.kind)
            .then(b.strength.total_cmp(&a.strength))
            .then_with(|| a.q2.cmp(&b.q2))
    });
    out
}

/// Candidate dump: `q1<TAB>q2<TAB>kind<TAB>strength`.
pub fn write_candidates<W: Write>(mut w: W, pairs: &[CandidatePair]) -> std::io::Result<()> {
    for p in pairs {
        writeln!(w, "{}\t{}\t{}\t{}", p.q1, p.q2, p.kind, sig12(p.strength))?;
    }
    Ok(())
}

pub fn parse_candidates(text: &str) -> Result<Vec<CandidatePair>> {
    const CTX: &str = "candidate dump";
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(Error::format(CTX, i + 1, "expected 4 fields"));
        }
        let kind = f[2].parse().map_err(|e| Error::format(CTX, i + 1, e))?;
        let strength = f[3]
            .parse()
            .map_err(|_| Error::format(CTX, i + 1, "bad strength"))?;
        out.push(CandidatePair {
            q1: f[0].to_string(),
            q2: f[1].to_string(),
            kind,
            strength,
        });
    }
    Ok(out)
}
