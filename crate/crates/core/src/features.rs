//! The 23 pair features fed to the ranker, plus the feature-matrix file.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;

use crate::candidates::{brccq, ctq, p_cc, p_cs, topic_frequency, CandidateContext, KindSet, SessionGraph};
use crate::error::{Error, Result};
use crate::log_core::ClickStats;
use crate::text::sig12;

pub const N_FEATURES: usize = 23;

/// Column names, in [`FeatureVector::to_array`] order.
pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "P_cc",
    "P_ct",
    "P_cs",
    "Freq.q1",
    "Freq.q2",
    "Freq.topic",
    "Len.q1",
    "Len.q2",
    "CLen.q1",
    "CLen.q2",
    "delta.Len",
    "delta.Len.Rel",
    "delta.CLen",
    "delta.CLen.Rel",
    "mb.Leven",
    "Leven",
    "CCos",
    "BCos",
    "Ent.q1",
    "Ent.q2",
    "delta.Ent",
    "Next.Ent",
    "LLR",
];

pub const TARGET_NAME: &str = "Sim";

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FeatureVector {
    pub p_cc: f64,
    pub p_ct: f64,
    pub p_cs: f64,
    pub freq_q1: f64,
    pub freq_q2: f64,
    pub freq_topic: f64,
    pub len_q1: f64,
    pub len_q2: f64,
    pub clen_q1: f64,
    pub clen_q2: f64,
    pub delta_len: f64,
    pub delta_len_rel: f64,
    pub delta_clen: f64,
    pub delta_clen_rel: f64,
    pub mb_leven: f64,
    pub leven: f64,
    pub ccos: f64,
    pub bcos: f64,
    pub ent_q1: f64,
    pub ent_q2: f64,
    pub delta_ent: f64,
    pub next_ent: f64,
    pub llr: f64,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; N_FEATURES] {
        [
            self.p_cc,
            self.p_ct,
            self.p_cs,
            self.freq_q1,
            self.freq_q2,
            self.freq_topic,
            self.len_q1,
            self.len_q2,
            self.clen_q1,
            self.clen_q2,
            self.delta_len,
            self.delta_len_rel,
            self.delta_clen,
            self.delta_clen_rel,
            self.mb_leven,
            self.leven,
            self.ccos,
            self.bcos,
            self.ent_q1,
            self.ent_q2,
            self.delta_ent,
            self.next_ent,
            self.llr,
        ]
    }

    pub fn from_array(v: &[f64; N_FEATURES]) -> Self {
        FeatureVector {
            p_cc: v[0],
            p_ct: v[1],
            p_cs: v[2],
            freq_q1: v[3],
            freq_q2: v[4],
            freq_topic: v[5],
            len_q1: v[6],
            len_q2: v[7],
            clen_q1: v[8],
            clen_q2: v[9],
            delta_len: v[10],
            delta_len_rel: v[11],
            delta_clen: v[12],
            delta_clen_rel: v[13],
            mb_leven: v[14],
            leven: v[15],
            ccos: v[16],
            bcos: v[17],
            ent_q1: v[18],
            ent_q2: v[19],
            delta_ent: v[20],
            next_ent: v[21],
            llr: v[22],
        }
    }
}

/// Shannon entropy in bits of the distribution proportional to `counts`.
pub fn entropy_bits<I: IntoIterator<Item = u64>>(counts: I) -> f64 {
    let counts: Vec<u64> = counts.into_iter().filter(|&c| c > 0).collect();
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let total = total as f64;
    let h: f64 = counts
        .iter()
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum();
    h.max(0.0)
}

/// Entropy of the click distribution P(·|q) over the URLs clicked for `q`.
pub fn click_entropy(q: &str, stats: &ClickStats) -> Result<f64> {
    let id = stats
        .query_id(q)
        .ok_or_else(|| Error::UnknownQuery(q.to_string()))?;
    Ok(entropy_bits(stats.url_cover(id).iter().map(|(_, e)| e.count)))
}

/// Entropy of the distribution of queries immediately following `q1`.
pub fn next_query_entropy(q1: &str, graph: &SessionGraph) -> f64 {
    entropy_bits(graph.successors(q1).map(|(_, n)| n))
}

/// Dunning's G² for a 2×2 contingency table `[[k11, k12], [k21, k22]]`,
/// natural log, `0·ln 0 = 0`.
pub fn g_squared(k11: u64, k12: u64, k21: u64, k22: u64) -> f64 {
    let n = (k11 + k12 + k21 + k22) as f64;
    if n == 0.0 {
        return 0.0;
    }
    let rows = [(k11 + k12) as f64, (k21 + k22) as f64];
    let cols = [(k11 + k21) as f64, (k12 + k22) as f64];
    let cells = [[k11, k12], [k21, k22]];
    let mut sum = 0.0;
    for (i, row) in cells.iter().enumerate() {
        for (j, &o) in row.iter().enumerate() {
            if o > 0 {
                let o = o as f64;
                let e = rows[i] * cols[j] / n;
                sum += o * (o / e).ln();
            }
        }
    }
    (2.0 * sum).max(0.0)
}

/// G² of "successor is `q2`" against "predecessor is `q1`" over all
/// session-adjacent ordered pairs. Zero when there are no adjacent pairs.
pub fn llr(q1: &str, q2: &str, graph: &SessionGraph) -> f64 {
    let n = graph.adjacent_pairs();
    if n == 0 {
        return 0.0;
    }
    let k11 = graph.transitions(q1, q2);
    let k12 = graph.out_degree(q1) - k11;
    let k21 = graph.in_degree(q2) - k11;
    let k22 = n - k11 - k12 - k21;
    g_squared(k11, k12, k21, k22)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditUnit {
    /// Unicode scalar values.
    CodePoint,
    /// UTF-8 bytes.
    Byte,
}

/// Unit-cost Levenshtein distance over code points or bytes.
pub fn levenshtein(a: &str, b: &str, unit: EditUnit) -> usize {
    match unit {
        EditUnit::CodePoint => {
            let a: Vec<char> = a.chars().collect();
            let b: Vec<char> = b.chars().collect();
            edit_distance(&a, &b)
        }
        EditUnit::Byte => edit_distance(a.as_bytes(), b.as_bytes()),
    }
}

fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BagUnit {
    /// Whitespace-delimited chunks.
    Chunk,
    /// Adjacent code-point pairs after removing whitespace.
    CharBigram,
}

fn bag(s: &str, unit: BagUnit) -> HashMap<String, u32> {
    let mut out = HashMap::new();
    match unit {
        BagUnit::Chunk => {
            for c in s.split_whitespace() {
                *out.entry(c.to_string()).or_default() += 1;
            }
        }
        BagUnit::CharBigram => {
            let chars: Vec<char> = s.chars().filter(|c| !c.is_whitespace()).collect();
            if chars.len() == 1 {
                // a lone character stands in for its own bigram
                out.insert(chars[0].to_string(), 1);
            }
            for w in chars.windows(2) {
                *out.entry(w.iter().collect::<String>()).or_default() += 1;
            }
        }
    }
    out
}

/// Cosine between the count vectors of `a` and `b`; 0 if either bag is empty.
pub fn bag_cosine(a: &str, b: &str, unit: BagUnit) -> f64 {
    let (ba, bb) = (bag(a, unit), bag(b, unit));
    if ba.is_empty() || bb.is_empty() {
        return 0.0;
    }
    let dot: f64 = ba
        .iter()
        .filter_map(|(k, &x)| bb.get(k).map(|&y| f64::from(x) * f64::from(y)))
        .sum();
    let norm = |m: &HashMap<String, u32>| m.values().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
    (dot / (norm(&ba) * norm(&bb))).clamp(0.0, 1.0)
}

/// Full feature vector for (q1, q2). Relation strengths are zero when the
/// pair is outside the corresponding relation.
pub fn build_features(q1: &str, q2: &str, ctx: &CandidateContext) -> Result<FeatureVector> {
    QueryFeatures::new(q1, ctx)?.pair(q2)
}

/// The q1-only part of the feature computation, shared across many q2.
pub struct QueryFeatures<'a> {
    q1: &'a str,
    ctx: &'a CandidateContext,
    co_click: BTreeSet<String>,
    co_topic: BTreeSet<String>,
    freq_topic: f64,
    ent_q1: f64,
    next_ent: f64,
}

impl<'a> QueryFeatures<'a> {
    pub fn new(q1: &'a str, ctx: &'a CandidateContext) -> Result<Self> {
        let stats = &ctx.stats;
        if !stats.contains_query(q1) {
            return Err(Error::UnknownQuery(q1.to_string()));
        }
        Ok(QueryFeatures {
            q1,
            ctx,
            co_click: brccq(q1, stats),
            co_topic: ctq(q1, &ctx.lexicon, stats),
            freq_topic: topic_frequency(q1, &ctx.lexicon, stats) as f64,
            ent_q1: click_entropy(q1, stats)?,
            next_ent: next_query_entropy(q1, &ctx.sessions),
        })
    }

    pub fn q1(&self) -> &'a str {
        self.q1
    }

    pub fn pair(&self, q2: &str) -> Result<FeatureVector> {
        let (q1, stats) = (self.q1, &self.ctx.stats);
        let p_cc = if self.co_click.contains(q2) {
            p_cc(q1, q2, stats)?
        } else {
            0.0
        };
        let p_ct = if self.co_topic.contains(q2) {
            stats.cnt_q(q2) as f64 / self.freq_topic
        } else {
            0.0
        };
        let len_q1 = q1.chars().count() as f64;
        let len_q2 = q2.chars().count() as f64;
        let clen_q1 = q1.split_whitespace().count() as f64;
        let clen_q2 = q2.split_whitespace().count() as f64;
        let ent_q2 = click_entropy(q2, stats)?;

        Ok(FeatureVector {
            p_cc,
            p_ct,
            p_cs: p_cs(q1, q2, &self.ctx.sessions),
            freq_q1: stats.cnt_q(q1) as f64,
            freq_q2: stats.cnt_q(q2) as f64,
            freq_topic: self.freq_topic,
            len_q1,
            len_q2,
            clen_q1,
            clen_q2,
            delta_len: len_q2 - len_q1,
            delta_len_rel: (len_q2 - len_q1) / len_q1,
            delta_clen: clen_q2 - clen_q1,
            delta_clen_rel: (clen_q2 - clen_q1) / clen_q1,
            mb_leven: levenshtein(q1, q2, EditUnit::CodePoint) as f64,
            leven: levenshtein(q1, q2, EditUnit::Byte) as f64,
            ccos: bag_cosine(q1, q2, BagUnit::Chunk),
            bcos: bag_cosine(q1, q2, BagUnit::CharBigram),
            ent_q1: self.ent_q1,
            ent_q2,
            delta_ent: self.ent_q1 - ent_q2,
            next_ent: self.next_ent,
            llr: llr(q1, q2, &self.ctx.sessions),
        })
    }
}

/// One line of the feature matrix file.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub q1: String,
    pub q2: String,
    pub kinds: KindSet,
    pub features: FeatureVector,
    pub sim: f64,
}

pub fn feature_header() -> String {
    let mut cols = vec!["q1", "q2", "kind"];
    cols.extend(FEATURE_NAMES);
    cols.push(TARGET_NAME);
    cols.join("\t")
}

/// Header of canonical column names, then one TSV row per pair with numeric
/// columns at 12 significant digits.
pub fn write_feature_matrix<W: Write>(mut w: W, rows: &[FeatureRow]) -> std::io::Result<()> {
    writeln!(w, "{}", feature_header())?;
    for r in rows {
        write!(w, "{}\t{}\t{}", r.q1, r.q2, r.kinds)?;
        for v in r.features.to_array() {
            write!(w, "\t{}", sig12(v))?;
        }
        writeln!(w, "\t{}", sig12(r.sim))?;
    }
    Ok(())
}

pub fn parse_feature_matrix(text: &str) -> Result<Vec<FeatureRow>> {
    const CTX: &str = "feature matrix";
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == feature_header() => {}
        _ => return Err(Error::format(CTX, 1, "missing or unexpected header")),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != N_FEATURES + 4 {
            return Err(Error::format(CTX, i + 1, format!("expected {} fields", N_FEATURES + 4)));
        }
        let kinds = f[2].parse().map_err(|e| Error::format(CTX, i + 1, e))?;
        let mut values = [0.0; N_FEATURES + 1];
        for (slot, raw) in values.iter_mut().zip(&f[3..]) {
            *slot = raw
                .parse()
                .map_err(|_| Error::format(CTX, i + 1, format!("bad number {raw:?}")))?;
        }
        let mut fv = [0.0; N_FEATURES];
        fv.copy_from_slice(&values[..N_FEATURES]);
        rows.push(FeatureRow {
            q1: f[0].to_string(),
            q2: f[1].to_string(),
            kinds,
            features: FeatureVector::from_array(&fv),
            sim: values[N_FEATURES],
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::candidates::{FacetLexicon, RelationKind};
    use crate::log_core::{segment_sessions, ClickRecord};
    use proptest::prelude::*;

    /// Recursive definition of edit distance, memoized.
    fn edit_oracle<T: PartialEq>(a: &[T], b: &[T]) -> usize {
        fn go<T: PartialEq>(a: &[T], b: &[T], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
            if i == a.len() {
                return b.len() - j;
            }
            if j == b.len() {
                return a.len() - i;
            }
            if let Some(&v) = memo.get(&(i, j)) {
                return v;
            }
            let v = if a[i] == b[j] {
                go(a, b, i + 1, j + 1, memo)
            } else {
                1 + go(a, b, i + 1, j, memo)
                    .min(go(a, b, i, j + 1, memo))
                    .min(go(a, b, i + 1, j + 1, memo))
            };
            memo.insert((i, j), v);
            v
        }
        go(a, b, 0, 0, &mut HashMap::new())
    }

    #[test]
    fn entropy_values() {
        assert_eq!(entropy_bits([7]), 0.0);
        assert!((entropy_bits([4, 4]) - 1.0).abs() < 1e-15);
        let h = -(0.75f64 * 0.75f64.log2() + 0.25 * 0.25f64.log2());
        assert!((entropy_bits([3, 1]) - h).abs() < 1e-15);
        assert!((entropy_bits([3, 1]) - 0.8113).abs() < 1e-4);
        assert_eq!(entropy_bits([]), 0.0);
    }

    fn world() -> CandidateContext {
        let mut r = Vec::new();
        let mut push = |t: i64, user: &str, q: &str, url: &str, rank: u32| {
            r.push(ClickRecord {
                timestamp: t,
                user: user.into(),
                query: q.into(),
                url: url.into(),
                rank,
            })
        };
        // q "ana": 3 clicks on a, 1 on b; "ana review" ranks a first
        push(0, "u1", "ana", "http://a", 2);
        push(0, "u2", "ana", "http://a", 2);
        push(0, "u3", "ana", "http://a", 2);
        push(0, "u4", "ana", "http://b", 1);
        push(30, "u1", "ana review", "http://a", 1);
        push(30, "u2", "ana review", "http://r", 1);
        push(60, "u1", "jal", "http://j", 1);
        push(60, "u2", "jal", "http://j", 1);
        push(30, "u3", "jal", "http://j", 1);
        push(30, "u4", "skymark", "http://s", 1);
        let stats = ClickStats::build(&r);
        let sessions = segment_sessions(&r, 300);
        let lexicon = FacetLexicon {
            facets: [("review".to_string(), 5)].into(),
            min_distinct: 5,
            min_query_freq: 10,
        };
        CandidateContext::new(stats, lexicon, SessionGraph::build(&sessions))
    }

    #[test]
    fn click_entropy_cases() {
        let ctx = world();
        assert!((click_entropy("ana", &ctx.stats).unwrap() - 0.8112781244591328).abs() < 1e-12);
        assert_eq!(click_entropy("jal", &ctx.stats).unwrap(), 0.0);
        assert!((click_entropy("ana review", &ctx.stats).unwrap() - 1.0).abs() < 1e-15);
        assert!(click_entropy("nope", &ctx.stats).is_err());
    }

    #[test]
    fn next_entropy_cases() {
        let ctx = world();
        // sessions: u1 ana→ana review→jal, u2 ana→ana review→jal, u3 ana→jal, u4 ana→skymark
        // successors of ana: {ana review: 2, jal: 1, skymark: 1}
        assert!((next_query_entropy("ana", &ctx.sessions) - 1.5).abs() < 1e-15);
        assert_eq!(next_query_entropy("ana review", &ctx.sessions), 0.0);
        assert_eq!(next_query_entropy("jal", &ctx.sessions), 0.0);
    }

    #[test]
    fn successor_entropy_three_to_one() {
        let mut r = Vec::new();
        for (i, next) in ["b", "b", "b", "c"].iter().enumerate() {
            for (t, q) in [(0, "a"), (10, *next)] {
                r.push(ClickRecord {
                    timestamp: t,
                    user: format!("u{i}"),
                    query: q.into(),
                    url: "x".into(),
                    rank: 1,
                });
            }
        }
        let g = SessionGraph::build(&segment_sessions(&r, 300));
        assert!((next_query_entropy("a", &g) - 0.8113).abs() < 1e-4);
    }

    /// Direct-summation G², independent of the row/column bookkeeping above.
    fn g2_oracle(t: [[f64; 2]; 2]) -> f64 {
        let n: f64 = t.iter().flatten().sum();
        let mut g = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                let e = (t[i][0] + t[i][1]) * (t[0][j] + t[1][j]) / n;
                if t[i][j] > 0.0 {
                    g += 2.0 * t[i][j] * (t[i][j] / e).ln();
                }
            }
        }
        g
    }

    #[test]
    fn g_squared_values() {
        assert!((g_squared(10, 0, 0, 10) - 40.0 * 2f64.ln()).abs() < 1e-12);
        assert!((g_squared(10, 0, 0, 10) - 27.726).abs() < 1e-3);
        assert!(g_squared(2, 4, 3, 6).abs() < 1e-9);
        assert!(g_squared(5, 5, 5, 5).abs() < 1e-9);
        assert_eq!(g_squared(0, 0, 0, 0), 0.0);
        for t in [[3, 1, 4, 1], [0, 7, 2, 9], [12, 0, 1, 30]] {
            let oracle = g2_oracle([[t[0] as f64, t[1] as f64], [t[2] as f64, t[3] as f64]]);
            assert!((g_squared(t[0], t[1], t[2], t[3]) - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn llr_uses_adjacent_pairs() {
        let ctx = world();
        // adjacent pairs: ana→ana review ×2, ana review→jal ×2, ana→jal, ana→skymark; N = 6
        let expected = g_squared(2, 2, 0, 2);
        assert!((llr("ana", "ana review", &ctx.sessions) - expected).abs() < 1e-12);
        assert!(llr("ana", "jal", &ctx.sessions) >= 0.0);
        assert_eq!(llr("x", "y", &SessionGraph::default()), 0.0);
    }

    #[test]
    fn levenshtein_cases() {
        assert_eq!(levenshtein("curry", "curry", EditUnit::CodePoint), 0);
        assert_eq!(levenshtein("curry", "curry", EditUnit::Byte), 0);
        assert_eq!(levenshtein("curry", "curry recipe", EditUnit::CodePoint), 7);
        assert_eq!(levenshtein("curry", "curry recipe", EditUnit::Byte), 7);
        assert_eq!(levenshtein("カレー", "", EditUnit::CodePoint), 3);
        assert_eq!(levenshtein("カレー", "", EditUnit::Byte), 9);
        assert_eq!(levenshtein("kitten", "sitting", EditUnit::CodePoint), 3);
    }

    #[test]
    fn bag_cosine_cases() {
        assert!((bag_cosine("curry", "curry recipe", BagUnit::Chunk) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((bag_cosine("curry", "curry", BagUnit::CharBigram) - 1.0).abs() < 1e-12);
        assert_eq!(bag_cosine("ana", "jal", BagUnit::CharBigram), 0.0);
        assert_eq!(bag_cosine("", "jal", BagUnit::Chunk), 0.0);
        // whitespace is dropped before pairing
        assert!((bag_cosine("ab cd", "abcd", BagUnit::CharBigram) - 1.0).abs() < 1e-12);
        // single characters compare as themselves
        assert_eq!(bag_cosine("x", "x", BagUnit::CharBigram), 1.0);
        assert_eq!(bag_cosine("x", "xy", BagUnit::CharBigram), 0.0);
    }

    #[test]
    fn features_for_identical_queries() {
        let ctx = world();
        let f = build_features("ana", "ana", &ctx).unwrap();
        assert_eq!((f.leven, f.mb_leven, f.delta_len), (0.0, 0.0, 0.0));
        assert!((f.ccos - 1.0).abs() < 1e-12 && (f.bcos - 1.0).abs() < 1e-12);
    }

    #[test]
    fn features_for_unrelated_pair() {
        let ctx = world();
        let f = build_features("jal", "ana review", &ctx).unwrap();
        assert_eq!((f.p_cc, f.p_ct, f.p_cs), (0.0, 0.0, 0.0));
        assert_eq!(f.len_q2, 10.0);
        assert_eq!(f.clen_q2, 2.0);
        assert!(build_features("nope", "ana", &ctx).is_err());
    }

    #[test]
    fn features_match_straight_line_recomputation() {
        let ctx = world();
        let f = build_features("ana", "ana review", &ctx).unwrap();
        // co-click: u=a is clicked by ana (3) and ana review (1), best rank under ana review
        // P(a|ana)=3/4, P(ana review|a)=1/4 → 3/16; u=b only ana
        assert!((f.p_cc - 3.0 / 16.0).abs() < 1e-15);
        // cnt(ana)=4, cnt(ana review)=2
        assert_eq!(f.p_ct, 2.0 / 6.0);
        assert_eq!(f.freq_topic, 6.0);
        // ana occurs in 4 sessions, followed by ana review twice
        assert_eq!(f.p_cs, 0.5);
        assert_eq!((f.freq_q1, f.freq_q2), (4.0, 2.0));
        assert_eq!((f.len_q1, f.len_q2, f.clen_q1, f.clen_q2), (3.0, 10.0, 1.0, 2.0));
        assert_eq!((f.delta_len, f.delta_len_rel), (7.0, 7.0 / 3.0));
        assert_eq!((f.delta_clen, f.delta_clen_rel), (1.0, 1.0));
        assert_eq!((f.mb_leven, f.leven), (7.0, 7.0));
        assert!((f.ccos - 0.5f64.sqrt()).abs() < 1e-15);
        // bigrams: ana = {an, na}; anareview = {an, na, ar, re, ev, vi, ie, ew}
        assert!((f.bcos - 2.0 / (2f64.sqrt() * 8f64.sqrt())).abs() < 1e-15);
        assert!((f.ent_q1 - 0.8112781244591328).abs() < 1e-12);
        assert!((f.ent_q2 - 1.0).abs() < 1e-15);
        assert!((f.delta_ent - (f.ent_q1 - 1.0)).abs() < 1e-15);
        assert!((f.next_ent - 1.5).abs() < 1e-15);
        assert!((f.llr - g2_oracle([[2.0, 2.0], [0.0, 2.0]])).abs() < 1e-12);
    }

    #[test]
    fn feature_matrix_round_trip() {
        let ctx = world();
        let row = FeatureRow {
            q1: "ana".into(),
            q2: "ana review".into(),
            kinds: [RelationKind::CoTopic, RelationKind::CoClick].into_iter().collect(),
            features: build_features("ana", "ana review", &ctx).unwrap(),
            sim: 0.75,
        };
        let mut buf = Vec::new();
        write_feature_matrix(&mut buf, std::slice::from_ref(&row)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("q1\tq2\tkind\tP_cc\tP_ct\tP_cs\tFreq.q1\t"));
        assert!(text.lines().next().unwrap().ends_with("\tNext.Ent\tLLR\tSim"));
        let back = parse_feature_matrix(&text).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].kinds, row.kinds);
        for (a, b) in back[0].features.to_array().iter().zip(row.features.to_array()) {
            assert!((a - b).abs() <= b.abs() * 1e-11);
        }
        assert!(parse_feature_matrix("bad header\n").is_err());
    }

    fn short_string() -> impl Strategy<Value = String> {
        prop::collection::vec(prop::sample::select(vec!['a', 'b', 'c', ' ', 'é', 'カ']), 0..8)
            .prop_map(|v| v.into_iter().collect())
    }

    proptest! {
        #[test]
        fn levenshtein_matches_oracle(a in short_string(), b in short_string()) {
            let (ca, cb): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
            prop_assert_eq!(levenshtein(&a, &b, EditUnit::CodePoint), edit_oracle(&ca, &cb));
            prop_assert_eq!(levenshtein(&a, &b, EditUnit::Byte), edit_oracle(a.as_bytes(), b.as_bytes()));
        }

        #[test]
        fn levenshtein_is_a_metric(a in short_string(), b in short_string(), c in short_string()) {
            for unit in [EditUnit::CodePoint, EditUnit::Byte] {
                let d = |x: &str, y: &str| levenshtein(x, y, unit);
                prop_assert_eq!(d(&a, &b), d(&b, &a));
                prop_assert_eq!(d(&a, &b) == 0, a == b);
                prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c));
            }
        }

        #[test]
        fn ascii_units_agree(a in "[a-z ]{0,10}", b in "[a-z ]{0,10}") {
            prop_assert_eq!(levenshtein(&a, &b, EditUnit::CodePoint), levenshtein(&a, &b, EditUnit::Byte));
        }

        #[test]
        fn cosine_properties(a in short_string(), b in short_string(), k in 1usize..4) {
            for unit in [BagUnit::Chunk, BagUnit::CharBigram] {
                let c = bag_cosine(&a, &b, unit);
                prop_assert!((0.0..=1.0).contains(&c));
                prop_assert_eq!(c, bag_cosine(&b, &a, unit));
            }
            // repeating every chunk k times scales the chunk bag uniformly
            let rep = |s: &str| vec![s; k].join(" ");
            let c1 = bag_cosine(&a, &b, BagUnit::Chunk);
            let ck = bag_cosine(&rep(&a), &rep(&b), BagUnit::Chunk);
            prop_assert!((c1 - ck).abs() < 1e-12);
        }

        #[test]
        fn entropy_bounds(counts in prop::collection::vec(0u64..20, 1..8)) {
            let h = entropy_bits(counts.iter().copied());
            let support = counts.iter().filter(|&&c| c > 0).count();
            prop_assert!(h >= 0.0);
            prop_assert!(h <= (support.max(1) as f64).log2() + 1e-12);
            let mut rev = counts.clone();
            rev.reverse();
            prop_assert!((h - entropy_bits(rev)).abs() < 1e-12);
        }

        #[test]
        fn g_squared_nonnegative_and_zero_when_proportional(
            t in (0u64..30, 0u64..30, 0u64..30, 0u64..30),
            r in (1u64..6, 1u64..6, 1u64..6, 1u64..6),
        ) {
            prop_assert!(g_squared(t.0, t.1, t.2, t.3) >= 0.0);
            // rows proportional: [a·c, a·d], [b·c, b·d]
            let (a, b, c, d) = r;
            prop_assert!(g_squared(a * c, a * d, b * c, b * d).abs() < 1e-9);
        }
    }
}
