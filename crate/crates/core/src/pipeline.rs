//! End-to-end orchestration: synthetic logs, dataset assembly, two-fold
//! cross-validation and the configuration shared by the CLI stages.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::candidates::{generate_all, CandidateContext, CandidatePair, FacetLexicon, KindSet, SessionGraph};
use crate::error::{Error, Result};
use crate::eval::{
    average_precision, ndcg5, normalized_sum, precision_recall_curve, wilcoxon_signed_rank, GradedRanking,
    WilcoxonResult,
};
use crate::features::{FeatureRow, QueryFeatures, FEATURE_NAMES};
use crate::gbdt::{average_importance, fit, Ensemble, TrainConfig};
use crate::log_core::{clean_log, segment_sessions, ClickRecord, ClickStats, Session, DEFAULT_SESSION_TIMEOUT_S};
use crate::taxonomy::{
    assign_category, cluster_trivial_variants, query_similarity, CategoryAssignment, CategoryPath, CategorizedSite,
    TaxonomyIndex, VariantClusters, DEFAULT_VARIANT_THRESHOLD,
};
use crate::text::{fnv1a, sig12};

/// Sizes and behaviour of the synthetic world. All values are synthetic
/// defaults, not estimates of any real corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_topics: usize,
    pub topics_per_group: usize,
    pub groups_per_area: usize,
    pub areas_per_domain: usize,
    pub facet_vocab: Vec<String>,
    pub max_facets_per_topic: usize,
    pub urls_per_topic: usize,
    pub n_users: usize,
    /// Number of query events (each yields one or two clicks).
    pub n_events: usize,
    pub n_noise_queries: usize,
    /// Topics that attract random jumps from anywhere.
    pub n_hot_topics: usize,
    pub variant_fraction: f64,
    /// Minimum idle time between two sessions of one user.
    pub session_gap_s: i64,
    pub start_ts: i64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 42,
            n_topics: 300,
            topics_per_group: 5,
            groups_per_area: 4,
            areas_per_domain: 3,
            facet_vocab: ["review", "prices", "photos", "recipe", "rental", "forums", "videos", "repair"]
                .map(String::from)
                .to_vec(),
            max_facets_per_topic: 3,
            urls_per_topic: 4,
            n_users: 8000,
            n_events: 40_000,
            n_noise_queries: 60,
            n_hot_topics: 5,
            variant_fraction: 0.15,
            session_gap_s: 1800,
            start_ts: 1_200_000_000,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("n_topics", self.n_topics),
            ("topics_per_group", self.topics_per_group),
            ("groups_per_area", self.groups_per_area),
            ("areas_per_domain", self.areas_per_domain),
            ("urls_per_topic", self.urls_per_topic),
            ("n_users", self.n_users),
            ("n_events", self.n_events),
            ("facet_vocab", self.facet_vocab.len()),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("synth.{name} must be at least 1")));
            }
        }
        if self.n_hot_topics > self.n_topics {
            return Err(Error::InvalidConfig("synth.n_hot_topics exceeds synth.n_topics".into()));
        }
        if !(0.0..=1.0).contains(&self.variant_fraction) {
            return Err(Error::InvalidConfig("synth.variant_fraction must be in [0, 1]".into()));
        }
        if self.session_gap_s <= DEFAULT_SESSION_TIMEOUT_S {
            return Err(Error::InvalidConfig(format!(
                "synth.session_gap_s must exceed {DEFAULT_SESSION_TIMEOUT_S}"
            )));
        }
        for f in &self.facet_vocab {
            if f.is_empty() || f.chars().any(char::is_whitespace) {
                return Err(Error::InvalidConfig(format!("facet word {f:?} must be a single token")));
            }
        }
        Ok(())
    }
}

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

/// Six-letter consonant-vowel tokens; equal length keeps distinct tokens
/// from occurring inside one another.
fn fresh_token(rng: &mut ChaCha8Rng, used: &mut HashSet<String>) -> String {
    loop {
        let mut s = String::with_capacity(6);
        for _ in 0..3 {
            s.push(CONSONANTS[rng.gen_range(0..CONSONANTS.len())] as char);
            s.push(VOWELS[rng.gen_range(0..VOWELS.len())] as char);
        }
        if used.insert(s.clone()) {
            return s;
        }
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

struct Topic {
    token: String,
    path: Vec<String>,
    group: usize,
    area: usize,
    facets: Vec<usize>,
    alias: Option<String>,
    /// Same-group topics, most preferred first.
    siblings: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Q {
    Topic(usize),
    Facet(usize, usize),
    Alias(usize),
    Noise(usize),
}

struct SynthWorld {
    cfg: SynthConfig,
    topics: Vec<Topic>,
    groups: Vec<Vec<usize>>,
    areas: Vec<Vec<usize>>,
    group_tokens: Vec<String>,
    area_tokens: Vec<String>,
    noise: Vec<String>,
    hot: Vec<usize>,
    /// Global portal of each topic and the topic that ranks it first.
    global_portal: Vec<usize>,
    portal_anchor: Vec<usize>,
}

impl SynthWorld {
    fn generate(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut used: HashSet<String> = cfg.facet_vocab.iter().cloned().collect();
        let n_groups = cfg.n_topics.div_ceil(cfg.topics_per_group);
        let n_areas = n_groups.div_ceil(cfg.groups_per_area);
        let n_domains = n_areas.div_ceil(cfg.areas_per_domain);
        let domain_tokens: Vec<String> = (0..n_domains).map(|_| fresh_token(rng, &mut used)).collect();
        let area_tokens: Vec<String> = (0..n_areas).map(|_| fresh_token(rng, &mut used)).collect();
        let group_tokens: Vec<String> = (0..n_groups).map(|_| fresh_token(rng, &mut used)).collect();

        let mut groups = vec![Vec::new(); n_groups];
        let mut areas = vec![Vec::new(); n_areas];
        let mut topics = Vec::with_capacity(cfg.n_topics);
        for i in 0..cfg.n_topics {
            let group = i / cfg.topics_per_group;
            let area = group / cfg.groups_per_area;
            let domain = area / cfg.areas_per_domain;
            let token = fresh_token(rng, &mut used);
            let k = rng.gen_range(1..=cfg.max_facets_per_topic.clamp(1, cfg.facet_vocab.len()));
            let mut facets = rand::seq::index::sample(rng, cfg.facet_vocab.len(), k).into_vec();
            facets.sort_unstable();
            let alias = (rng.gen::<f64>() < cfg.variant_fraction).then(|| fresh_token(rng, &mut used));
            topics.push(Topic {
                path: vec![
                    capitalize(&domain_tokens[domain]),
                    capitalize(&area_tokens[area]),
                    capitalize(&group_tokens[group]),
                    capitalize(&token),
                ],
                token,
                group,
                area,
                facets,
                alias,
                siblings: Vec::new(),
            });
            groups[group].push(i);
            areas[area].push(i);
        }
        for t in 0..topics.len() {
            let mut sib: Vec<usize> = groups[topics[t].group].iter().copied().filter(|&s| s != t).collect();
            sib.shuffle(rng);
            topics[t].siblings = sib;
        }
        let noise = (0..cfg.n_noise_queries).map(|_| fresh_token(rng, &mut used)).collect();
        let hot = rand::seq::index::sample(rng, cfg.n_topics, cfg.n_hot_topics).into_vec();
        let n_portals = (2 * n_domains).max(3);
        let global_portal = (0..cfg.n_topics).map(|_| rng.gen_range(0..n_portals)).collect();
        let portal_anchor = (0..n_portals).map(|_| rng.gen_range(0..cfg.n_topics)).collect();
        SynthWorld {
            cfg: cfg.clone(),
            topics,
            groups,
            areas,
            group_tokens,
            area_tokens,
            noise,
            hot,
            global_portal,
            portal_anchor,
        }
    }

    fn query(&self, q: Q) -> String {
        match q {
            Q::Topic(t) => self.topics[t].token.clone(),
            Q::Facet(t, f) => format!("{} {}", self.topics[t].token, self.cfg.facet_vocab[f]),
            Q::Alias(t) => self.topics[t].alias.clone().expect("alias exists"),
            Q::Noise(n) => self.noise[n].clone(),
        }
    }

    fn topic_url(&self, t: usize, i: usize) -> String {
        format!("http://www.{}.example.com/{i}", self.topics[t].token)
    }

    fn facet_url(&self, t: usize, f: usize) -> String {
        format!("http://www.{}.example.com/{}", self.topics[t].token, self.cfg.facet_vocab[f])
    }

    fn group_portal(&self, g: usize) -> String {
        format!("http://{}.example.org/", self.group_tokens[g])
    }

    fn area_portal(&self, a: usize) -> String {
        format!("http://{}.example.net/", self.area_tokens[a])
    }

    fn global_portal_url(&self, p: usize) -> String {
        format!("http://portal{p}.example/")
    }

    /// The result page of `q` as (url, click weight), in rank order.
    fn results(&self, q: Q) -> Vec<(String, f64)> {
        const TOPIC_WEIGHTS: [f64; 4] = [0.36, 0.24, 0.14, 0.08];
        match q {
            Q::Topic(t) | Q::Alias(t) => {
                let topic = &self.topics[t];
                let mut out = Vec::new();
                for (p, &anchor) in self.portal_anchor.iter().enumerate() {
                    if anchor == t {
                        out.push((self.global_portal_url(p), 0.1));
                    }
                }
                for i in 0..self.cfg.urls_per_topic {
                    out.push((self.topic_url(t, i), TOPIC_WEIGHTS.get(i).copied().unwrap_or(0.05)));
                }
                let group_hub = self.groups[topic.group][0] == t;
                let area_hub = self.areas[topic.area][0] == t;
                if group_hub {
                    out.push((self.group_portal(topic.group), 0.08));
                }
                if area_hub {
                    out.push((self.area_portal(topic.area), 0.06));
                }
                for &f in &topic.facets {
                    out.push((self.facet_url(t, f), 0.05));
                }
                if !group_hub {
                    out.push((self.group_portal(topic.group), 0.06));
                }
                if !area_hub {
                    out.push((self.area_portal(topic.area), 0.04));
                }
                let p = self.global_portal[t];
                if self.portal_anchor[p] != t {
                    out.push((self.global_portal_url(p), 0.04));
                }
                out
            }
            Q::Facet(t, f) => {
                let mut out = vec![(self.facet_url(t, f), 0.6), (self.topic_url(t, 0), 0.15)];
                if self.cfg.urls_per_topic > 1 {
                    out.push((self.topic_url(t, 1), 0.1));
                }
                for &g in &self.topics[t].facets {
                    if g != f {
                        out.push((self.facet_url(t, g), 0.05));
                    }
                }
                out
            }
            Q::Noise(n) => vec![
                (format!("http://{}.example.info/a", self.noise[n]), 0.7),
                (format!("http://{}.example.info/b", self.noise[n]), 0.3),
            ],
        }
    }

    fn sites(&self) -> Vec<CategorizedSite> {
        let mut sites = Vec::new();
        for (t, topic) in self.topics.iter().enumerate() {
            let path = CategoryPath::new(topic.path.clone()).expect("generated path is valid");
            let extra = [
                self.group_tokens[topic.group].as_str(),
                self.area_tokens[topic.area].as_str(),
                topic.alias.as_deref().unwrap_or("home"),
            ];
            for (i, word) in extra.iter().enumerate() {
                sites.push(CategorizedSite {
                    url: self.topic_url(t, i),
                    title: topic.token.clone(),
                    description: format!("{} {} {}", topic.token, word, topic.alias.as_deref().unwrap_or("site")),
                    category: path.clone(),
                });
            }
            for &f in &topic.facets {
                let facet = &self.cfg.facet_vocab[f];
                let mut fp = topic.path.clone();
                fp.push(capitalize(facet));
                sites.push(CategorizedSite {
                    url: self.facet_url(t, f),
                    title: format!("{} {facet}", topic.token),
                    description: format!("{facet} guide"),
                    category: CategoryPath::new(fp).expect("generated path is valid"),
                });
            }
        }
        sites
    }

    fn pick_facet(&self, t: usize, rng: &mut ChaCha8Rng) -> Option<usize> {
        self.topics[t].facets.choose(rng).copied()
    }

    fn preferred_sibling(&self, t: usize, rng: &mut ChaCha8Rng) -> Option<usize> {
        let sib = &self.topics[t].siblings;
        if sib.is_empty() {
            return None;
        }
        let w: Vec<f64> = (0..sib.len()).map(|i| 1.0 / (i + 1) as f64).collect();
        let d = WeightedIndex::new(&w).expect("positive weights");
        Some(sib[d.sample(rng)])
    }

    fn cousin(&self, t: usize, rng: &mut ChaCha8Rng) -> Option<usize> {
        let topic = &self.topics[t];
        let pool: Vec<usize> = self.areas[topic.area]
            .iter()
            .copied()
            .filter(|&c| self.topics[c].group != topic.group)
            .collect();
        pool.choose(rng).copied()
    }

    fn random_jump(&self, rng: &mut ChaCha8Rng) -> Q {
        let r: f64 = rng.gen();
        if r < 0.6 && !self.hot.is_empty() {
            Q::Topic(*self.hot.choose(rng).expect("non-empty"))
        } else if r < 0.9 || self.noise.is_empty() {
            Q::Topic(rng.gen_range(0..self.topics.len()))
        } else {
            Q::Noise(rng.gen_range(0..self.noise.len()))
        }
    }

    fn first_query(&self, home_group: usize, rng: &mut ChaCha8Rng) -> Q {
        let t = if rng.gen::<f64>() < 0.7 {
            *self.groups[home_group].choose(rng).expect("groups are non-empty")
        } else {
            rng.gen_range(0..self.topics.len())
        };
        let r: f64 = rng.gen();
        if r < 0.65 {
            if self.topics[t].alias.is_some() && rng.gen::<f64>() < 0.3 {
                Q::Alias(t)
            } else {
                Q::Topic(t)
            }
        } else if r < 0.92 {
            self.pick_facet(t, rng).map_or(Q::Topic(t), |f| Q::Facet(t, f))
        } else if self.noise.is_empty() {
            Q::Topic(t)
        } else {
            Q::Noise(rng.gen_range(0..self.noise.len()))
        }
    }

    fn next_query(&self, q: Q, rng: &mut ChaCha8Rng) -> Q {
        let r: f64 = rng.gen();
        match q {
            Q::Topic(t) | Q::Alias(t) => {
                if r < 0.35 {
                    if let Some(f) = self.pick_facet(t, rng) {
                        return Q::Facet(t, f);
                    }
                }
                if r < 0.60 {
                    if let Some(s) = self.preferred_sibling(t, rng) {
                        return Q::Topic(s);
                    }
                }
                if r < 0.70 {
                    if let Some(&s) = self.topics[t].siblings.choose(rng) {
                        return Q::Topic(s);
                    }
                }
                if r < 0.80 {
                    if let Some(c) = self.cousin(t, rng) {
                        return Q::Topic(c);
                    }
                }
                self.random_jump(rng)
            }
            Q::Facet(t, f) => {
                if r < 0.25 {
                    let others: Vec<usize> = self.topics[t].facets.iter().copied().filter(|&g| g != f).collect();
                    return others.choose(rng).map_or(Q::Topic(t), |&g| Q::Facet(t, g));
                }
                if r < 0.45 {
                    return Q::Topic(t);
                }
                if r < 0.70 {
                    if let Some(s) = self.preferred_sibling(t, rng) {
                        return if self.topics[s].facets.contains(&f) {
                            Q::Facet(s, f)
                        } else {
                            Q::Topic(s)
                        };
                    }
                }
                if r < 0.80 {
                    if let Some(c) = self.cousin(t, rng) {
                        return Q::Topic(c);
                    }
                }
                self.random_jump(rng)
            }
            Q::Noise(_) => self.random_jump(rng),
        }
    }
}

/// A topic-structured click log and a matching taxonomy, fully determined
/// by `cfg.seed`.
pub fn synth_logs(cfg: &SynthConfig) -> Result<(Vec<ClickRecord>, TaxonomyIndex)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let world = SynthWorld::generate(cfg, &mut rng);

    let mut pages: BTreeMap<Q, (Vec<String>, WeightedIndex<f64>)> = BTreeMap::new();
    let mut page = |q: Q| -> (Vec<String>, WeightedIndex<f64>) {
        pages
            .entry(q)
            .or_insert_with(|| {
                let r = world.results(q);
                let w = WeightedIndex::new(r.iter().map(|(_, w)| *w)).expect("positive weights");
                (r.into_iter().map(|(u, _)| u).collect(), w)
            })
            .clone()
    };

    let homes: Vec<usize> = (0..cfg.n_users).map(|_| rng.gen_range(0..world.groups.len())).collect();
    let mut clocks: Vec<Option<i64>> = vec![None; cfg.n_users];
    let mut records = Vec::with_capacity(cfg.n_events * 5 / 4);
    let mut events = 0;
    while events < cfg.n_events {
        let u = rng.gen_range(0..cfg.n_users);
        let mut ts = match clocks[u] {
            None => cfg.start_ts + rng.gen_range(0..30 * 86_400),
            Some(last) => last + cfg.session_gap_s + rng.gen_range(0..2 * 86_400),
        };
        let user = format!("u{u:05}");
        let mut q = world.first_query(homes[u], &mut rng);
        for step in 0..6 {
            if step > 0 {
                if rng.gen::<f64>() > 0.65 {
                    break;
                }
                q = world.next_query(q, &mut rng);
                ts += rng.gen_range(5..120);
            }
            let query = world.query(q);
            let (urls, dist) = page(q);
            let first = dist.sample(&mut rng);
            records.push(ClickRecord {
                timestamp: ts,
                user: user.clone(),
                query: query.clone(),
                url: urls[first].clone(),
                rank: first as u32 + 1,
            });
            if rng.gen::<f64>() < 0.25 {
                let second = dist.sample(&mut rng);
                if second != first {
                    ts += rng.gen_range(3..20);
                    records.push(ClickRecord {
                        timestamp: ts,
                        user: user.clone(),
                        query,
                        url: urls[second].clone(),
                        rank: second as u32 + 1,
                    });
                }
            }
            events += 1;
        }
        clocks[u] = Some(ts);
    }
    records.sort_by(|a, b| {
        a.timestamp
            .cmp(&b.timestamp)
            .then_with(|| a.user.cmp(&b.user))
            .then_with(|| a.query.cmp(&b.query))
            .then_with(|| a.url.cmp(&b.url))
    });
    Ok((records, TaxonomyIndex::new(world.sites())))
}

/// Every tunable of the batch pipeline, read from `key=value` text.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub session_timeout_s: i64,
    pub facet_min_distinct: usize,
    pub facet_min_query_freq: u64,
    pub variant_threshold: f64,
    /// Minimum cnt(q1) for a query to be used as an original query.
    pub q1_min_freq: u64,
    pub neg_ratio: f64,
    pub curve_points: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 42,
            synth: SynthConfig::default(),
            train: TrainConfig::default(),
            session_timeout_s: DEFAULT_SESSION_TIMEOUT_S,
            facet_min_distinct: crate::candidates::DEFAULT_FACET_MIN_DISTINCT,
            facet_min_query_freq: crate::candidates::DEFAULT_FACET_MIN_QUERY_FREQ,
            variant_threshold: DEFAULT_VARIANT_THRESHOLD,
            q1_min_freq: 10,
            neg_ratio: 1.0,
            curve_points: 11,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("bad value {value:?} for {key}")))
}

impl PipelineConfig {
    /// Parses `key=value` lines over the defaults; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key=value", i + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => {
                self.seed = parse_value(key, v)?;
                self.synth.seed = self.seed;
            }
            "synth.n_topics" => self.synth.n_topics = parse_value(key, v)?,
            "synth.topics_per_group" => self.synth.topics_per_group = parse_value(key, v)?,
            "synth.groups_per_area" => self.synth.groups_per_area = parse_value(key, v)?,
            "synth.areas_per_domain" => self.synth.areas_per_domain = parse_value(key, v)?,
            "synth.facet_vocab" => {
                self.synth.facet_vocab = v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
            }
            "synth.max_facets_per_topic" => self.synth.max_facets_per_topic = parse_value(key, v)?,
            "synth.urls_per_topic" => self.synth.urls_per_topic = parse_value(key, v)?,
            "synth.n_users" => self.synth.n_users = parse_value(key, v)?,
            "synth.n_events" => self.synth.n_events = parse_value(key, v)?,
            "synth.n_noise_queries" => self.synth.n_noise_queries = parse_value(key, v)?,
            "synth.n_hot_topics" => self.synth.n_hot_topics = parse_value(key, v)?,
            "synth.variant_fraction" => self.synth.variant_fraction = parse_value(key, v)?,
            "synth.session_gap_s" => self.synth.session_gap_s = parse_value(key, v)?,
            "synth.start_ts" => self.synth.start_ts = parse_value(key, v)?,
            "train.n_trees" => self.train.n_trees = parse_value(key, v)?,
            "train.shrinkage" => self.train.shrinkage = parse_value(key, v)?,
            "train.max_depth" => {
                self.train.max_depth = if v == "unlimited" { usize::MAX } else { parse_value(key, v)? }
            }
            "train.min_leaf" => self.train.min_leaf = parse_value(key, v)?,
            "train.early_stopping_patience" => {
                self.train.early_stopping_patience = if v == "none" { None } else { Some(parse_value(key, v)?) }
            }
            "log.session_timeout_s" => self.session_timeout_s = parse_value(key, v)?,
            "candidates.facet_min_distinct" => self.facet_min_distinct = parse_value(key, v)?,
            "candidates.facet_min_query_freq" => self.facet_min_query_freq = parse_value(key, v)?,
            "taxonomy.variant_threshold" => self.variant_threshold = parse_value(key, v)?,
            "dataset.q1_min_freq" => self.q1_min_freq = parse_value(key, v)?,
            "dataset.neg_ratio" => self.neg_ratio = parse_value(key, v)?,
            "eval.curve_points" => self.curve_points = parse_value(key, v)?,
            other => return Err(Error::InvalidConfig(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.synth.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.train.validate()?;
        if self.session_timeout_s <= 0 {
            return Err(Error::InvalidConfig("log.session_timeout_s must be positive".into()));
        }
        if !(self.neg_ratio >= 0.0 && self.neg_ratio.is_finite()) {
            return Err(Error::InvalidConfig("dataset.neg_ratio must be a finite value ≥ 0".into()));
        }
        if self.curve_points < 2 {
            return Err(Error::InvalidConfig("eval.curve_points must be at least 2".into()));
        }
        Ok(())
    }
}

/// Everything derived from a click log and a taxonomy.
pub struct World {
    pub ctx: CandidateContext,
    pub assignments: BTreeMap<String, CategoryAssignment>,
    pub clusters: VariantClusters,
    pub cleaned: Vec<ClickRecord>,
    pub sessions: Vec<Session>,
}

impl World {
    /// Cleans the log, then builds click statistics, sessions, the facet
    /// lexicon, category assignments and trivial-variant clusters from it.
    pub fn build(records: &[ClickRecord], taxonomy: &TaxonomyIndex, cfg: &PipelineConfig) -> Self {
        let cleaned = clean_log(records);
        let stats = ClickStats::build(&cleaned);
        let sessions = segment_sessions(&cleaned, cfg.session_timeout_s);
        let lexicon = FacetLexicon::detect(&stats, cfg.facet_min_distinct, cfg.facet_min_query_freq);
        let assignments = stats
            .query_ids()
            .map(|id| {
                let q = stats.query(id);
                (q.to_string(), assign_category(q, taxonomy))
            })
            .collect();
        let clusters = cluster_trivial_variants(&stats, cfg.variant_threshold);
        let graph = SessionGraph::build(&sessions);
        World {
            ctx: CandidateContext::new(stats, lexicon, graph),
            assignments,
            clusters,
            cleaned,
            sessions,
        }
    }

    pub fn is_categorized(&self, q: &str) -> bool {
        self.assignments.get(q).is_some_and(|a| a.category.is_some())
    }

    /// Categorized queries with at least `min_freq` clicks, sorted.
    pub fn original_queries(&self, min_freq: u64) -> Vec<String> {
        self.assignments
            .iter()
            .filter(|(q, a)| a.category.is_some() && self.ctx.stats.cnt_q(q) >= min_freq)
            .map(|(q, _)| q.clone())
            .collect()
    }

    pub fn candidate_pairs(&self, q1s: &[String]) -> Vec<CandidatePair> {
        q1s.iter().flat_map(|q1| generate_all(q1, &self.ctx)).collect()
    }
}

/// Fold of an original query: a fixed hash of the string, so every pair of
/// one q1 lands in the same fold.
pub fn fold_of(q1: &str) -> usize {
    (fnv1a(q1.as_bytes()) % 2) as usize
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Sorted by (q1, q2); negatives carry an empty kind set.
    pub rows: Vec<FeatureRow>,
    pub n_positive: usize,
    pub n_negative: usize,
}

impl Dataset {
    pub fn queries(&self) -> BTreeSet<&str> {
        self.rows.iter().map(|r| r.q1.as_str()).collect()
    }
}

/// Positive rows from candidate pairs (kinds joined per (q1, q2)), minus
/// uncategorized queries and trivial-variant mates, plus
/// `ceil(neg_ratio · positives)` uniformly drawn random pairs over the same
/// q1 set and all categorized q2. Targets are category similarities.
pub fn build_dataset(pairs: &[CandidatePair], world: &World, neg_ratio: f64, seed: u64) -> Result<Dataset> {
    let mut joined: BTreeMap<(&str, &str), KindSet> = BTreeMap::new();
    for p in pairs {
        if p.q1 == p.q2
            || !world.is_categorized(&p.q1)
            || !world.is_categorized(&p.q2)
            || world.clusters.same_cluster(&p.q1, &p.q2)
        {
            continue;
        }
        joined.entry((&p.q1, &p.q2)).or_default().insert(p.kind);
    }

    let q1s: Vec<&str> = joined.keys().map(|(q1, _)| *q1).collect::<BTreeSet<_>>().into_iter().collect();
    let pool: Vec<&str> = world
        .assignments
        .iter()
        .filter(|(_, a)| a.category.is_some())
        .map(|(q, _)| q.as_str())
        .collect();
    let mut available: Vec<(u32, u32)> = Vec::new();
    for (i, q1) in q1s.iter().enumerate() {
        for (j, q2) in pool.iter().enumerate() {
            if q1 != q2 && !joined.contains_key(&(*q1, *q2)) && !world.clusters.same_cluster(q1, q2) {
                available.push((i as u32, j as u32));
            }
        }
    }
    let needed = (neg_ratio * joined.len() as f64).ceil() as usize;
    if needed > available.len() {
        return Err(Error::NegativeShortfall {
            needed,
            available: available.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut picks = rand::seq::index::sample(&mut rng, available.len(), needed).into_vec();
    picks.sort_unstable();
    for k in picks {
        let (i, j) = available[k];
        joined.insert((q1s[i as usize], pool[j as usize]), KindSet::EMPTY);
    }

    let mut rows = Vec::with_capacity(joined.len());
    let mut current: Option<QueryFeatures> = None;
    for ((q1, q2), kinds) in joined {
        if current.as_ref().is_none_or(|c| c.q1() != q1) {
            current = Some(QueryFeatures::new(q1, &world.ctx)?);
        }
        let features = current.as_ref().expect("just set").pair(q2)?;
        let sim = query_similarity(q1, q2, &world.assignments).expect("both queries are categorized");
        rows.push(FeatureRow {
            q1: q1.to_string(),
            q2: q2.to_string(),
            kinds,
            features,
            sim,
        });
    }
    let n_negative = rows.iter().filter(|r| r.kinds.is_empty()).count();
    Ok(Dataset {
        n_positive: rows.len() - n_negative,
        n_negative,
        rows,
    })
}

/// Ranking methods in report order; the last one is the learned model.
pub const METHODS: [&str; 8] = [
    "P_cc",
    "P_ct",
    "P_cs",
    "P_cc+P_ct",
    "P_cc+P_cs",
    "P_ct+P_cs",
    "P_cc+P_ct+P_cs",
    "GBDT",
];

const SIGNAL_SETS: [&[usize]; 7] = [&[0], &[1], &[2], &[0, 1], &[0, 2], &[1, 2], &[0, 1, 2]];

#[derive(Debug, Clone, PartialEq)]
pub struct MethodScores {
    pub name: String,
    pub ndcg5: f64,
    pub map: f64,
    /// Per original query, in the report's query order.
    pub per_query_ndcg5: Vec<f64>,
    pub per_query_ap: Vec<f64>,
    pub curve: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Significance {
    pub baseline: String,
    pub metric: &'static str,
    /// `None` when too few per-query differences are nonzero.
    pub result: Option<WilcoxonResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossvalReport {
    pub queries: Vec<String>,
    pub n_positive: usize,
    pub n_negative: usize,
    pub fold_queries: [usize; 2],
    pub fold_pairs: [usize; 2],
    pub degenerate_queries: usize,
    pub methods: Vec<MethodScores>,
    pub significance: Vec<Significance>,
    pub importance: Vec<(String, f64)>,
    pub models: [Ensemble; 2],
}

impl CrossvalReport {
    pub fn method(&self, name: &str) -> Option<&MethodScores> {
        self.methods.iter().find(|m| m.name == name)
    }

    pub fn significance(&self, baseline: &str, metric: &str) -> Option<&Significance> {
        self.significance
            .iter()
            .find(|s| s.baseline == baseline && s.metric == metric)
    }

    /// Metrics table: `method<TAB>NDCG5<TAB>MAP`.
    pub fn metrics_rows(&self) -> Vec<(String, f64, f64)> {
        self.methods.iter().map(|m| (m.name.clone(), m.ndcg5, m.map)).collect()
    }

    /// The full plain-text report; byte-identical for identical inputs.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# dataset");
        let _ = writeln!(s, "original_queries\t{}", self.queries.len());
        let _ = writeln!(s, "pairs\t{}", self.n_positive + self.n_negative);
        let _ = writeln!(s, "positive_pairs\t{}", self.n_positive);
        let _ = writeln!(s, "random_pairs\t{}", self.n_negative);
        let _ = writeln!(s, "fold_queries\t{}\t{}", self.fold_queries[0], self.fold_queries[1]);
        let _ = writeln!(s, "fold_pairs\t{}\t{}", self.fold_pairs[0], self.fold_pairs[1]);
        let _ = writeln!(s, "degenerate_queries\t{}", self.degenerate_queries);
        let _ = writeln!(s, "\n# metrics");
        let _ = writeln!(s, "method\tNDCG5\tMAP");
        for m in &self.methods {
            let _ = writeln!(s, "{}\t{}\t{}", m.name, sig12(m.ndcg5), sig12(m.map));
        }
        let _ = writeln!(s, "\n# wilcoxon signed-rank, GBDT vs baseline, per-query differences");
        let _ = writeln!(s, "baseline\tmetric\tn\tW+\tp");
        for sg in &self.significance {
            match &sg.result {
                Some(r) => {
                    let _ = writeln!(s, "{}\t{}\t{}\t{}\t{}", sg.baseline, sg.metric, r.n, sig12(r.statistic), sig12(r.p_value));
                }
                None => {
                    let _ = writeln!(s, "{}\t{}\t-\t-\t-", sg.baseline, sg.metric);
                }
            }
        }
        let _ = writeln!(s, "\n# feature importance (mean of both folds, max 100)");
        let _ = writeln!(s, "feature\timportance");
        let mut imp: Vec<&(String, f64)> = self.importance.iter().collect();
        imp.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        for (name, v) in imp {
            let _ = writeln!(s, "{name}\t{}", sig12(*v));
        }
        let _ = writeln!(s, "\n# interpolated precision-recall");
        let _ = writeln!(s, "method\trecall\tprecision");
        for m in &self.methods {
            for (r, p) in &m.curve {
                let _ = writeln!(s, "{}\t{}\t{}", m.name, sig12(*r), sig12(*p));
            }
        }
        s
    }
}

/// Two-fold cross-validation with folds from [`fold_of`].
pub fn run_crossval(dataset: &Dataset, cfg: &TrainConfig, curve_points: usize) -> Result<CrossvalReport> {
    run_crossval_with_folds(dataset, cfg, curve_points, fold_of)
}

/// Trains on one fold and ranks the other, both ways, then pools per-query
/// metrics over all original queries.
pub fn run_crossval_with_folds(
    dataset: &Dataset,
    cfg: &TrainConfig,
    curve_points: usize,
    fold: impl Fn(&str) -> usize,
) -> Result<CrossvalReport> {
    let mut by_query: BTreeMap<&str, Vec<&FeatureRow>> = BTreeMap::new();
    for r in &dataset.rows {
        by_query.entry(&r.q1).or_default().push(r);
    }
    let mut fold_queries = [0usize; 2];
    let mut fold_pairs = [0usize; 2];
    for (q1, rows) in &by_query {
        let f = fold(q1);
        fold_queries[f] += 1;
        fold_pairs[f] += rows.len();
    }
    for (k, &n) in fold_queries.iter().enumerate() {
        if n == 0 {
            return Err(Error::DegenerateFold(k));
        }
    }

    let names: Vec<String> = FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
    let train_on = |k: usize| -> Result<Ensemble> {
        let rows: Vec<&FeatureRow> = dataset.rows.iter().filter(|r| fold(&r.q1) == k).collect();
        let x: Vec<Vec<f64>> = rows.iter().map(|r| r.features.to_array().to_vec()).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.sim).collect();
        Ok(fit(&x, &y, &names, cfg)?.model)
    };
    // models[k] is evaluated on fold k and trained on the other
    let models = [train_on(1)?, train_on(0)?];

    let mut rankings: Vec<Vec<GradedRanking>> = vec![Vec::new(); METHODS.len()];
    let mut degenerate_queries = 0;
    for (q1, rows) in &by_query {
        let signals: [Vec<f64>; 3] = [
            rows.iter().map(|r| r.features.p_cc).collect(),
            rows.iter().map(|r| r.features.p_ct).collect(),
            rows.iter().map(|r| r.features.p_cs).collect(),
        ];
        let model = &models[fold(q1)];
        for (m, method) in METHODS.iter().enumerate() {
            let scores: Vec<f64> = if *method == "GBDT" {
                rows.iter()
                    .map(|r| model.predict(&r.features.to_array()))
                    .collect::<Result<_>>()?
            } else if SIGNAL_SETS[m].len() == 1 {
                signals[SIGNAL_SETS[m][0]].clone()
            } else {
                let cols: Vec<&[f64]> = SIGNAL_SETS[m].iter().map(|&i| signals[i].as_slice()).collect();
                normalized_sum(&cols)
            };
            let scored = rows
                .iter()
                .zip(scores)
                .map(|(r, s)| (r.q2.as_str(), s, r.sim))
                .collect();
            rankings[m].push(GradedRanking::from_scored(*q1, scored)?);
        }
        if ndcg5(rankings[0].last().expect("just pushed")).degenerate {
            degenerate_queries += 1;
        }
    }

    let methods: Vec<MethodScores> = METHODS
        .iter()
        .zip(&rankings)
        .map(|(name, rs)| {
            let per_query_ndcg5: Vec<f64> = rs.iter().map(|r| ndcg5(r).value).collect();
            let per_query_ap: Vec<f64> = rs.iter().map(|r| average_precision(r).value).collect();
            let n = rs.len() as f64;
            MethodScores {
                name: name.to_string(),
                ndcg5: per_query_ndcg5.iter().sum::<f64>() / n,
                map: per_query_ap.iter().sum::<f64>() / n,
                per_query_ndcg5,
                per_query_ap,
                curve: precision_recall_curve(rs, curve_points),
            }
        })
        .collect();

    let gbdt = methods.last().expect("GBDT row");
    let mut significance = Vec::new();
    for base in &methods[..methods.len() - 1] {
        for (metric, a, b) in [
            ("NDCG5", &gbdt.per_query_ndcg5, &base.per_query_ndcg5),
            ("AP", &gbdt.per_query_ap, &base.per_query_ap),
        ] {
            let result = match wilcoxon_signed_rank(a, b) {
                Ok(r) => Some(r),
                Err(Error::TooFewDifferences { .. }) => None,
                Err(e) => return Err(e),
            };
            significance.push(Significance {
                baseline: base.name.clone(),
                metric,
                result,
            });
        }
    }

    let importance = names
        .iter()
        .cloned()
        .zip(average_importance(&[&models[0], &models[1]]))
        .collect();

    Ok(CrossvalReport {
        queries: by_query.keys().map(|q| q.to_string()).collect(),
        n_positive: dataset.n_positive,
        n_negative: dataset.n_negative,
        fold_queries,
        fold_pairs,
        degenerate_queries,
        methods,
        significance,
        importance,
        models,
    })
}

/// Synthesizes a world from `cfg`, assembles the dataset and cross-validates.
pub fn run_synthetic(cfg: &PipelineConfig) -> Result<(Dataset, CrossvalReport)> {
    cfg.validate()?;
    let (records, taxonomy) = synth_logs(&cfg.synth)?;
    run_on_log(&records, &taxonomy, cfg)
}

pub fn run_on_log(records: &[ClickRecord], taxonomy: &TaxonomyIndex, cfg: &PipelineConfig) -> Result<(Dataset, CrossvalReport)> {
    let world = World::build(records, taxonomy, cfg);
    let q1s = world.original_queries(cfg.q1_min_freq);
    let pairs = world.candidate_pairs(&q1s);
    let dataset = build_dataset(&pairs, &world, cfg.neg_ratio, cfg.seed)?;
    let report = run_crossval(&dataset, &cfg.train, cfg.curve_points)?;
    Ok((dataset, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::candidates::{brccq, csq, ctq, RelationKind};

    fn small() -> SynthConfig {
        SynthConfig {
            n_topics: 40,
            n_users: 1500,
            n_events: 8000,
            n_noise_queries: 10,
            n_hot_topics: 2,
            ..SynthConfig::default()
        }
    }

    fn small_pipeline() -> PipelineConfig {
        PipelineConfig {
            synth: small(),
            train: TrainConfig {
                n_trees: 40,
                ..TrainConfig::default()
            },
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn synth_is_deterministic() {
        let (a, ta) = synth_logs(&small()).unwrap();
        let (b, tb) = synth_logs(&small()).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta.sites(), tb.sites());
        let other = SynthConfig { seed: 7, ..small() };
        assert_ne!(synth_logs(&other).unwrap().0, a);
    }

    #[test]
    fn synth_plants_recoverable_relations() {
        let cfg = small_pipeline();
        let (records, taxonomy) = synth_logs(&cfg.synth).unwrap();
        let world = World::build(&records, &taxonomy, &cfg);
        let stats = &world.ctx.stats;
        // facet detection finds (a subset of) the planted vocabulary
        assert!(!world.ctx.lexicon.is_empty());
        for f in world.ctx.lexicon.facets.keys() {
            assert!(cfg.synth.facet_vocab.contains(f));
        }
        let mut co_topic = 0;
        let mut co_click = 0;
        let mut co_session = 0;
        for q in world.original_queries(10) {
            if q.contains(' ') {
                continue;
            }
            let expansions = ctq(&q, &world.ctx.lexicon, stats);
            co_topic += expansions.len();
            for e in &expansions {
                assert!(e.starts_with(&format!("{q} ")));
            }
            co_click += brccq(&q, stats).iter().filter(|q2| q2.starts_with(&format!("{q} "))).count();
            co_session += csq(&q, &world.ctx.sessions).iter().filter(|q2| q2.starts_with(&format!("{q} "))).count();
        }
        assert!(co_topic > 20, "co-topic expansions: {co_topic}");
        assert!(co_click > 10, "co-click expansions: {co_click}");
        assert!(co_session > 20, "co-session drill-downs: {co_session}");
    }

    #[test]
    fn categories_follow_the_taxonomy() {
        let cfg = small_pipeline();
        let (records, taxonomy) = synth_logs(&cfg.synth).unwrap();
        let world = World::build(&records, &taxonomy, &cfg);
        let mut facet_checked = 0;
        for (q, a) in &world.assignments {
            if let Some(c) = &a.category {
                let depth = c.depth();
                if q.contains(' ') {
                    assert_eq!(depth, 5, "{q} -> {c}");
                    facet_checked += 1;
                } else {
                    assert_eq!(depth, 4, "{q} -> {c}");
                }
            }
        }
        assert!(facet_checked > 0);
        assert!(world.assignments.values().any(|a| a.category.is_none()));
    }

    #[test]
    fn dataset_invariants() {
        let cfg = small_pipeline();
        let (records, taxonomy) = synth_logs(&cfg.synth).unwrap();
        let world = World::build(&records, &taxonomy, &cfg);
        let q1s = world.original_queries(cfg.q1_min_freq);
        let pairs = world.candidate_pairs(&q1s);
        let ds = build_dataset(&pairs, &world, 1.0, 3).unwrap();
        assert_eq!(ds.n_negative, ds.n_positive);
        let mut seen = BTreeSet::new();
        for r in &ds.rows {
            assert!(world.is_categorized(&r.q1) && world.is_categorized(&r.q2));
            assert!(!world.clusters.same_cluster(&r.q1, &r.q2));
            assert!(seen.insert((r.q1.clone(), r.q2.clone())), "pair appears twice");
            assert!((0.0..=1.0).contains(&r.sim));
        }
        assert!(ds.rows.windows(2).all(|w| (&w[0].q1, &w[0].q2) < (&w[1].q1, &w[1].q2)));
        let positives_only = build_dataset(&pairs, &world, 0.0, 3).unwrap();
        assert_eq!(positives_only.n_negative, 0);
        assert_eq!(positives_only.n_positive, ds.n_positive);
        assert!(matches!(
            build_dataset(&pairs, &world, 1e6, 3),
            Err(Error::NegativeShortfall { .. })
        ));
    }

    #[test]
    fn uncategorized_and_variant_pairs_are_dropped() {
        let cfg = small_pipeline();
        let (records, taxonomy) = synth_logs(&cfg.synth).unwrap();
        let world = World::build(&records, &taxonomy, &cfg);
        let q1 = world.original_queries(cfg.q1_min_freq)[0].clone();
        let unknown = world
            .assignments
            .iter()
            .find(|(_, a)| a.category.is_none())
            .map(|(q, _)| q.clone())
            .unwrap();
        let pair = |q2: &str| CandidatePair {
            q1: q1.clone(),
            q2: q2.to_string(),
            kind: RelationKind::CoSession,
            strength: 0.5,
        };
        let ds = build_dataset(&[pair(&unknown)], &world, 0.0, 1).unwrap();
        assert!(ds.rows.is_empty());
        let mate = world
            .clusters
            .iter()
            .find(|(q, _)| *q != q1 && world.clusters.same_cluster(q, &q1))
            .map(|(q, _)| q.to_string());
        if let Some(mate) = mate {
            assert!(build_dataset(&[pair(&mate)], &world, 0.0, 1).unwrap().rows.is_empty());
        }
    }

    #[test]
    fn folds_partition_queries() {
        let qs = ["ana", "jal", "skymark", "kalomi", "tesuba"];
        for q in qs {
            assert!(fold_of(q) < 2);
            assert_eq!(fold_of(q), fold_of(q));
        }
    }

    #[test]
    fn crossval_report_shape_and_symmetry() {
        let cfg = small_pipeline();
        let (ds, report) = run_synthetic(&cfg).unwrap();
        assert_eq!(report.methods.len(), 8);
        let names: Vec<&str> = report.methods.iter().map(|m| m.name.as_str()).collect();
        assert_eq!(names, METHODS);
        assert_eq!(report.fold_queries.iter().sum::<usize>(), report.queries.len());
        assert_eq!(report.fold_pairs.iter().sum::<usize>(), ds.rows.len());
        let swapped = run_crossval_with_folds(&ds, &cfg.train, cfg.curve_points, |q| 1 - fold_of(q)).unwrap();
        for (a, b) in report.methods.iter().zip(&swapped.methods) {
            assert!((a.ndcg5 - b.ndcg5).abs() < 1e-12);
            assert!((a.map - b.map).abs() < 1e-12);
        }
        let text = report.render();
        assert!(text.contains("method\tNDCG5\tMAP\nP_cc\t"));
        assert!(text.contains("\nGBDT\t"));
    }

    #[test]
    fn gbdt_learns_planted_signal() {
        // the target is a deterministic function of P_ct
        let cfg = small_pipeline();
        let (mut ds, _) = run_synthetic(&cfg).unwrap();
        for r in &mut ds.rows {
            r.sim = (r.features.p_ct * 0.9).min(1.0);
        }
        let report = run_crossval(&ds, &cfg.train, cfg.curve_points).unwrap();
        let gbdt = report.method("GBDT").unwrap().ndcg5;
        let p_ct = report.method("P_ct").unwrap().ndcg5;
        assert!(gbdt >= p_ct - 0.01, "GBDT {gbdt} vs P_ct {p_ct}");
    }

    #[test]
    fn degenerate_fold_is_an_error() {
        let cfg = small_pipeline();
        let (ds, _) = run_synthetic(&cfg).unwrap();
        assert!(matches!(
            run_crossval_with_folds(&ds, &cfg.train, 11, |_| 0),
            Err(Error::DegenerateFold(1))
        ));
    }

    #[test]
    fn config_parsing() {
        let cfg = PipelineConfig::parse(
            "# comment\nseed = 9\ntrain.max_depth=unlimited\ntrain.early_stopping_patience=20\nsynth.facet_vocab=a, b\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.synth.seed, 9);
        assert_eq!(cfg.train.max_depth, usize::MAX);
        assert_eq!(cfg.train.early_stopping_patience, Some(20));
        assert_eq!(cfg.synth.facet_vocab, ["a", "b"]);
        assert!(PipelineConfig::parse("nope=1").is_err());
        assert!(PipelineConfig::parse("train.n_trees=abc").is_err());
        assert!(PipelineConfig::parse("just text").is_err());
        let bad = PipelineConfig {
            neg_ratio: -1.0,
            ..PipelineConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
