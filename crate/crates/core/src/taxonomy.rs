//! Category taxonomy: query → category assignment by AND-retrieval and
//! voting over a local index of categorized sites, path similarities,
//! graded labels, and trivial-variant clustering of queries.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::log_core::{ClickStats, QueryId, UrlId};

pub const DEFAULT_VARIANT_THRESHOLD: f64 = 0.9;

/// A directory path such as `Regional/Countries/Spain`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CategoryPath(Vec<String>);

impl CategoryPath {
    pub fn new<I, S>(components: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let components: Vec<String> = components.into_iter().map(Into::into).collect();
        if components.is_empty() || components.iter().any(|c| c.trim().is_empty() || c.contains('/')) {
            return Err(Error::InvalidCategoryPath(components.join("/")));
        }
        Ok(CategoryPath(components))
    }

    pub fn components(&self) -> &[String] {
        &self.0
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    fn rendered_chars(&self) -> impl Iterator<Item = char> + '_ {
        self.0
            .iter()
            .enumerate()
            .flat_map(|(i, c)| (i > 0).then_some('/').into_iter().chain(c.chars()))
    }
}

impl FromStr for CategoryPath {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CategoryPath::new(s.split('/').map(str::trim))
    }
}

impl fmt::Display for CategoryPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join("/"))
    }
}

// Paths order by their rendered string, which is the assignment tie-break.
impl Ord for CategoryPath {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.rendered_chars().cmp(other.rendered_chars())
    }
}

impl PartialOrd for CategoryPath {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// `|common prefix| / max(|d1|, |d2|)`.
pub fn sim_prefix(d1: &CategoryPath, d2: &CategoryPath) -> f64 {
    let common = d1
        .0
        .iter()
        .zip(&d2.0)
        .take_while(|(a, b)| a == b)
        .count();
    common as f64 / d1.depth().max(d2.depth()) as f64
}

/// `C(d1, d2) / max(|d1|, |d2|)` where C is the size of the multiset
/// intersection of the two component lists.
pub fn sim_substring(d1: &CategoryPath, d2: &CategoryPath) -> f64 {
    let mut pool: HashMap<&str, usize> = HashMap::new();
    for c in &d1.0 {
        *pool.entry(c.as_str()).or_default() += 1;
    }
    let mut common = 0usize;
    for c in &d2.0 {
        if let Some(n) = pool.get_mut(c.as_str()) {
            if *n > 0 {
                *n -= 1;
                common += 1;
            }
        }
    }
    common as f64 / d1.depth().max(d2.depth()) as f64
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategorizedSite {
    pub url: String,
    pub title: String,
    pub description: String,
    pub category: CategoryPath,
}

impl CategorizedSite {
    fn text(&self) -> String {
        format!("{} {}", self.title, self.description)
    }
}

/// The local stand-in for a directory search service.
#[derive(Debug, Clone, Default)]
pub struct TaxonomyIndex {
    sites: Vec<CategorizedSite>,
    texts: Vec<String>,
}

impl TaxonomyIndex {
    pub fn new(sites: Vec<CategorizedSite>) -> Self {
        let texts = sites.iter().map(CategorizedSite::text).collect();
        TaxonomyIndex { sites, texts }
    }

    pub fn sites(&self) -> &[CategorizedSite] {
        &self.sites
    }

    /// Reads `url<TAB>title<TAB>description<TAB>category_path` lines.
    pub fn parse(text: &str) -> Result<Self> {
        const CTX: &str = "taxonomy file";
        let mut sites = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(Error::format(CTX, i + 1, "expected 4 tab-separated fields"));
            }
            if f[0].trim().is_empty() {
                return Err(Error::format(CTX, i + 1, "empty url"));
            }
            let category = f[3]
                .parse()
                .map_err(|e: Error| Error::format(CTX, i + 1, e.to_string()))?;
            sites.push(CategorizedSite {
                url: f[0].trim().to_string(),
                title: f[1].to_string(),
                description: f[2].to_string(),
                category,
            });
        }
        Ok(TaxonomyIndex::new(sites))
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for s in &self.sites {
            writeln!(w, "{}\t{}\t{}\t{}", s.url, s.title, s.description, s.category)?;
        }
        Ok(())
    }

    /// Sites whose title + description contains every chunk of `q`.
    pub fn retrieve<'a>(&'a self, q: &'a str) -> impl Iterator<Item = &'a CategorizedSite> + 'a {
        let chunks: Vec<&str> = q.split_whitespace().collect();
        self.sites
            .iter()
            .zip(&self.texts)
            .filter(move |(_, text)| !chunks.is_empty() && chunks.iter().all(|c| text.contains(c)))
            .map(|(site, _)| site)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryAssignment {
    pub query: String,
    pub category: Option<CategoryPath>,
    pub votes: BTreeMap<CategoryPath, usize>,
}

impl CategoryAssignment {
    pub fn winning_votes(&self) -> usize {
        self.category
            .as_ref()
            .map_or(0, |c| self.votes.get(c).copied().unwrap_or(0))
    }
}

/// Every retrieved site votes for its category; most votes wins, ties go to
/// the lexicographically smallest path.
pub fn assign_category(q: &str, index: &TaxonomyIndex) -> CategoryAssignment {
    let mut votes: BTreeMap<CategoryPath, usize> = BTreeMap::new();
    for site in index.retrieve(q) {
        *votes.entry(site.category.clone()).or_default() += 1;
    }
    // BTreeMap iterates in path order, so the first maximum is the smallest path.
    let mut category: Option<(&CategoryPath, usize)> = None;
    for (path, &n) in &votes {
        if category.is_none_or(|(_, best)| n > best) {
            category = Some((path, n));
        }
    }
    CategoryAssignment {
        query: q.to_string(),
        category: category.map(|(p, _)| p.clone()),
        votes,
    }
}

/// Anything that can report the voted categories of a query.
pub trait CategorySource {
    fn assignment(&self, q: &str) -> Option<&CategoryAssignment>;
}

impl CategorySource for HashMap<String, CategoryAssignment> {
    fn assignment(&self, q: &str) -> Option<&CategoryAssignment> {
        self.get(q)
    }
}

impl CategorySource for BTreeMap<String, CategoryAssignment> {
    fn assignment(&self, q: &str) -> Option<&CategoryAssignment> {
        self.get(q)
    }
}

/// Max of `sim_substring` over all voted category pairs; `None` when either
/// query has no category.
pub fn query_similarity<S: CategorySource + ?Sized>(q1: &str, q2: &str, assignments: &S) -> Option<f64> {
    let a1 = assignments.assignment(q1).filter(|a| !a.votes.is_empty())?;
    let a2 = assignments.assignment(q2).filter(|a| !a.votes.is_empty())?;
    let mut best = 0.0f64;
    for c1 in a1.votes.keys() {
        for c2 in a2.votes.keys() {
            best = best.max(sim_substring(c1, c2));
        }
    }
    Some(best)
}

/// Assignment dump: `query<TAB>category_path_or_dash<TAB>votes`.
pub fn write_assignments<'a, W, I>(mut w: W, assignments: I) -> std::io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a CategoryAssignment>,
{
    for a in assignments {
        match &a.category {
            Some(c) => writeln!(w, "{}\t{}\t{}", a.query, c, a.winning_votes())?,
            None => writeln!(w, "{}\t-\t0", a.query)?,
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Grade {
    Poor,
    Fair,
    Good,
    Excellent,
    Perfect,
}

impl Grade {
    pub fn score(self) -> f64 {
        match self {
            Grade::Perfect => 10.0,
            Grade::Excellent => 7.0,
            Grade::Good => 3.0,
            Grade::Fair => 0.5,
            Grade::Poor => 0.0,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Grade::Perfect => "perfect",
            Grade::Excellent => "excellent",
            Grade::Good => "good",
            Grade::Fair => "fair",
            Grade::Poor => "poor",
        }
    }

    /// Excellent or better.
    pub fn is_relevant(self) -> bool {
        self >= Grade::Excellent
    }
}

/// Five-level label over lower-exclusive, upper-inclusive similarity bands.
pub fn grade(sim: f64) -> Result<Grade> {
    if !(0.0..=1.0).contains(&sim) {
        return Err(Error::SimilarityOutOfRange(sim));
    }
    Ok(if sim > 0.75 {
        Grade::Perfect
    } else if sim > 0.5 {
        Grade::Excellent
    } else if sim > 0.25 {
        Grade::Good
    } else if sim > 0.0 {
        Grade::Fair
    } else {
        Grade::Poor
    })
}

/// Query → cluster id from single-pass clustering of click vectors.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VariantClusters {
    ids: BTreeMap<String, usize>,
    n_clusters: usize,
}

impl VariantClusters {
    pub fn cluster_of(&self, q: &str) -> Option<usize> {
        self.ids.get(q).copied()
    }

    /// True when both queries were clustered together.
    pub fn same_cluster(&self, a: &str, b: &str) -> bool {
        matches!((self.cluster_of(a), self.cluster_of(b)), (Some(x), Some(y)) if x == y)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, usize)> {
        self.ids.iter().map(|(q, &c)| (q.as_str(), c))
    }
}

struct Centroid {
    // pooled click counts of all members; its direction is the members'
    // click distributions averaged with weights cnt(q)
    mass: HashMap<UrlId, f64>,
    norm: f64,
}

impl Centroid {
    fn absorb(&mut self, vector: &[(UrlId, f64)]) {
        for &(u, c) in vector {
            *self.mass.entry(u).or_default() += c;
        }
        self.norm = self.mass.values().map(|v| v * v).sum::<f64>().sqrt();
    }

    fn cosine(&self, vector: &[(UrlId, f64)], vector_norm: f64) -> f64 {
        if self.norm == 0.0 || vector_norm == 0.0 {
            return 0.0;
        }
        let dot: f64 = vector
            .iter()
            .map(|(u, c)| c * self.mass.get(u).copied().unwrap_or(0.0))
            .sum();
        (dot / (self.norm * vector_norm)).min(1.0)
    }
}

/// Online single-pass clustering of queries by their click vectors.
///
/// Queries are visited by descending click count (ties by query string).
/// Each joins the oldest cluster whose centroid has cosine ≥ `threshold`
/// with its click vector, or founds a new one. A centroid is the
/// frequency-weighted mean of its members' click distributions.
pub fn cluster_trivial_variants(stats: &ClickStats, threshold: f64) -> VariantClusters {
    let mut order: Vec<QueryId> = stats.query_ids().collect();
    order.sort_by(|&a, &b| {
        stats
            .cnt_q_id(b)
            .cmp(&stats.cnt_q_id(a))
            .then_with(|| stats.query(a).cmp(stats.query(b)))
    });

    let mut centroids: Vec<Centroid> = Vec::new();
    // url → clusters whose centroid has mass on it, in creation order
    let mut by_url: HashMap<UrlId, Vec<usize>> = HashMap::new();
    let mut ids = BTreeMap::new();

    for q in order {
        let vector: Vec<(UrlId, f64)> = stats
            .url_cover(q)
            .iter()
            .map(|&(u, e)| (u, e.count as f64))
            .collect();
        let norm = vector.iter().map(|(_, c)| c * c).sum::<f64>().sqrt();

        let joined = if threshold <= 0.0 {
            (!centroids.is_empty()).then_some(0)
        } else {
            // only clusters sharing a URL can reach a positive cosine
            let mut candidates: Vec<usize> = vector
                .iter()
                .filter_map(|(u, _)| by_url.get(u))
                .flatten()
                .copied()
                .collect();
            candidates.sort_unstable();
            candidates.dedup();
            candidates
                .into_iter()
                .find(|&c| centroids[c].cosine(&vector, norm) >= threshold)
        };

        let cluster = match joined {
            Some(c) => c,
            None => {
                centroids.push(Centroid {
                    mass: HashMap::new(),
                    norm: 0.0,
                });
                centroids.len() - 1
            }
        };
        for &(u, _) in &vector {
            let list = by_url.entry(u).or_default();
            if !list.contains(&cluster) {
                list.push(cluster);
                list.sort_unstable();
            }
        }
        centroids[cluster].absorb(&vector);
        ids.insert(stats.query(q).to_string(), cluster);
    }

    VariantClusters {
        ids,
        n_clusters: centroids.len(),
    }
}
