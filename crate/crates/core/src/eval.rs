//! Ranking metrics and the paired signed-rank test.

use std::io::Write;

use crate::error::{Error, Result};
use crate::taxonomy::{grade, Grade};
use crate::text::sig12;

pub const NDCG_CUTOFF: usize = 5;
pub const WILCOXON_MIN_N: usize = 6;
pub const WILCOXON_EXACT_MAX_N: usize = 25;

#[derive(Debug, Clone, PartialEq)]
pub struct RankedItem {
    pub q2: String,
    pub score: f64,
    relevant: bool,
}

impl RankedItem {
    pub fn new(q2: impl Into<String>, g: Grade) -> Self {
        RankedItem {
            q2: q2.into(),
            score: g.score(),
            relevant: g.is_relevant(),
        }
    }

    pub fn relevant(&self) -> bool {
        self.relevant
    }
}

/// Recommendations for one original query in presentation order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradedRanking {
    pub q1: String,
    pub items: Vec<RankedItem>,
}

impl GradedRanking {
    pub fn new(q1: impl Into<String>, items: Vec<RankedItem>) -> Self {
        GradedRanking { q1: q1.into(), items }
    }

    /// Orders `(q2, method score, similarity)` triples by method score
    /// descending, then `q2` ascending, grading each by its similarity.
    pub fn from_scored<S: Into<String>>(q1: impl Into<String>, scored: Vec<(S, f64, f64)>) -> Result<Self> {
        let mut rows: Vec<(String, f64, f64)> = scored.into_iter().map(|(q, s, sim)| (q.into(), s, sim)).collect();
        rows.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let items = rows
            .into_iter()
            .map(|(q2, _, sim)| Ok(RankedItem::new(q2, grade(sim)?)))
            .collect::<Result<_>>()?;
        Ok(GradedRanking::new(q1, items))
    }

    pub fn grades(&self) -> impl Iterator<Item = f64> + '_ {
        self.items.iter().map(|i| i.score)
    }
}

/// A per-query metric value; `degenerate` marks queries where the metric is
/// undefined and reported as 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryMetric {
    pub value: f64,
    pub degenerate: bool,
}

fn dcg_of<I: IntoIterator<Item = f64>>(grades: I, cutoff: usize) -> f64 {
    grades
        .into_iter()
        .take(cutoff)
        .enumerate()
        .map(|(i, g)| if i == 0 { g } else { g / ((i + 1) as f64).log2() })
        .sum()
}

pub fn dcg_at(ranking: &GradedRanking, cutoff: usize) -> f64 {
    dcg_of(ranking.grades(), cutoff)
}

pub fn ndcg5(ranking: &GradedRanking) -> QueryMetric {
    let mut ideal: Vec<f64> = ranking.grades().collect();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg = dcg_of(ideal, NDCG_CUTOFF);
    if idcg <= 0.0 {
        return QueryMetric {
            value: 0.0,
            degenerate: true,
        };
    }
    QueryMetric {
        value: (dcg_at(ranking, NDCG_CUTOFF) / idcg).min(1.0),
        degenerate: false,
    }
}

/// Average precision over the full list.
pub fn average_precision(ranking: &GradedRanking) -> QueryMetric {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (j, item) in ranking.items.iter().enumerate() {
        if item.relevant {
            hits += 1;
            sum += hits as f64 / (j + 1) as f64;
        }
    }
    if hits == 0 {
        return QueryMetric {
            value: 0.0,
            degenerate: true,
        };
    }
    QueryMetric {
        value: sum / hits as f64,
        degenerate: false,
    }
}

fn mean_of(rankings: &[GradedRanking], metric: fn(&GradedRanking) -> QueryMetric) -> Result<f64> {
    if rankings.is_empty() {
        return Err(Error::EmptyRankingSet);
    }
    Ok(rankings.iter().map(|r| metric(r).value).sum::<f64>() / rankings.len() as f64)
}

pub fn mean_average_precision(rankings: &[GradedRanking]) -> Result<f64> {
    mean_of(rankings, average_precision)
}

pub fn mean_ndcg5(rankings: &[GradedRanking]) -> Result<f64> {
    mean_of(rankings, ndcg5)
}

/// Interpolated precision at `points` evenly spaced recall levels from 0 to
/// 1, averaged over the rankings that contain at least one relevant item.
pub fn precision_recall_curve(rankings: &[GradedRanking], points: usize) -> Vec<(f64, f64)> {
    let points = points.max(2);
    let steps = points - 1;
    let mut acc = vec![0.0; points];
    let mut used = 0usize;
    for r in rankings {
        let total = r.items.iter().filter(|i| i.relevant).count();
        if total == 0 {
            continue;
        }
        used += 1;
        // (hits, precision) after each rank
        let mut pr = Vec::with_capacity(r.items.len());
        let mut hits = 0usize;
        for (k, item) in r.items.iter().enumerate() {
            hits += usize::from(item.relevant);
            pr.push((hits, hits as f64 / (k + 1) as f64));
        }
        // suffix maxima make interpolation a forward scan
        for k in (0..pr.len().saturating_sub(1)).rev() {
            pr[k].1 = pr[k].1.max(pr[k + 1].1);
        }
        let mut k = 0;
        for (level, slot) in acc.iter_mut().enumerate() {
            // recall hits/total >= level/steps
            while k < pr.len() && pr[k].0 * steps < level * total {
                k += 1;
            }
            if k < pr.len() {
                *slot += pr[k].1;
            }
        }
    }
    acc.iter()
        .enumerate()
        .map(|(level, &sum)| {
            let precision = if used == 0 { 0.0 } else { sum / used as f64 };
            (level as f64 / steps as f64, precision)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WilcoxonMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WilcoxonResult {
    /// Sum of ranks of the positive differences `a - b`.
    pub statistic: f64,
    /// Two-sided p-value.
    pub p_value: f64,
    /// Number of nonzero differences.
    pub n: usize,
    pub method: WilcoxonMethod,
}

/// Paired two-sided signed-rank test on `a - b`. Zero differences are
/// dropped; tied magnitudes share their average rank.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::UnpairedSamples(a.len(), b.len()));
    }
    let mut d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|&v| v != 0.0).collect();
    let n = d.len();
    if n < WILCOXON_MIN_N {
        return Err(Error::TooFewDifferences {
            min: WILCOXON_MIN_N,
            got: n,
        });
    }
    d.sort_by(|x, y| x.abs().total_cmp(&y.abs()));

    // doubled ranks stay integral under averaging
    let mut rank2 = vec![0u64; n];
    let mut tie_groups = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && d[j + 1].abs() == d[i].abs() {
            j += 1;
        }
        let r2 = (i + 1 + j + 1) as u64;
        rank2[i..=j].fill(r2);
        tie_groups.push((j - i + 1) as u64);
        i = j + 1;
    }
    let w2: u64 = d.iter().zip(&rank2).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let statistic = w2 as f64 / 2.0;

    if n <= WILCOXON_EXACT_MAX_N {
        let total2: u64 = rank2.iter().sum();
        // counts[s] = number of sign assignments with doubled positive-rank sum s
        let mut counts = vec![0f64; total2 as usize + 1];
        counts[0] = 1.0;
        let mut reach = 0usize;
        for &r in &rank2 {
            let r = r as usize;
            for s in (0..=reach).rev() {
                if counts[s] > 0.0 {
                    counts[s + r] += counts[s];
                }
            }
            reach += r;
        }
        let all = 2f64.powi(n as i32);
        let lower: f64 = counts[..=w2 as usize].iter().sum::<f64>() / all;
        let upper: f64 = counts[w2 as usize..].iter().sum::<f64>() / all;
        return Ok(WilcoxonResult {
            statistic,
            p_value: (2.0 * lower.min(upper)).min(1.0),
            n,
            method: WilcoxonMethod::Exact,
        });
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_adj: f64 = tie_groups.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_adj;
    let z = ((statistic - mean).abs() - 0.5).max(0.0) / var.sqrt();
    Ok(WilcoxonResult {
        statistic,
        p_value: erfc(z / std::f64::consts::SQRT_2).min(1.0),
        n,
        method: WilcoxonMethod::Normal,
    })
}

/// Complementary error function; Chebyshev fit with fractional error below
/// 1.2e-7 everywhere.
pub fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let poly = -z * z - 1.26551223
        + t * (1.00002368
            + t * (0.37409196
                + t * (0.09678418
                    + t * (-0.18628806
                        + t * (0.27886807 + t * (-1.13520398 + t * (1.48851587 + t * (-0.82215223 + t * 0.17087277))))))));
    let r = t * poly.exp();
    if x >= 0.0 {
        r
    } else {
        2.0 - r
    }
}

/// Rescales to [0, 1] by min and max; a constant input maps to all zeros.
pub fn min_max_normalize(v: &[f64]) -> Vec<f64> {
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    if hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| (x - lo) / (hi - lo)).collect()
}

/// Unweighted sum of the min-max-normalized columns.
pub fn normalized_sum(columns: &[&[f64]]) -> Vec<f64> {
    let n = columns.first().map_or(0, |c| c.len());
    let mut out = vec![0.0; n];
    for col in columns {
        for (o, v) in out.iter_mut().zip(min_max_normalize(col)) {
            *o += v;
        }
    }
    out
}

/// `method<TAB>NDCG5<TAB>MAP` with a header row.
pub fn write_metrics<W: Write>(mut w: W, rows: &[(String, f64, f64)]) -> std::io::Result<()> {
    writeln!(w, "method\tNDCG5\tMAP")?;
    for (m, ndcg, map) in rows {
        writeln!(w, "{m}\t{}\t{}", sig12(*ndcg), sig12(*map))?;
    }
    Ok(())
}

/// `recall<TAB>precision` with a header row.
pub fn write_curve<W: Write>(mut w: W, curve: &[(f64, f64)]) -> std::io::Result<()> {
    writeln!(w, "recall\tprecision")?;
    for (r, p) in curve {
        writeln!(w, "{}\t{}", sig12(*r), sig12(*p))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SCORES: [Grade; 5] = [Grade::Poor, Grade::Fair, Grade::Good, Grade::Excellent, Grade::Perfect];

    fn ranking(grades: &[Grade]) -> GradedRanking {
        GradedRanking::new(
            "q",
            grades
                .iter()
                .enumerate()
                .map(|(i, &g)| RankedItem::new(format!("c{i}"), g))
                .collect(),
        )
    }

    fn by_score(scores: &[f64]) -> GradedRanking {
        let g: Vec<Grade> = scores
            .iter()
            .map(|&s| *SCORES.iter().find(|g| g.score() == s).unwrap())
            .collect();
        ranking(&g)
    }

    // Brute-force oracles written from the metric definitions.

    fn dcg_oracle(g: &[f64], cutoff: usize) -> f64 {
        let mut total = 0.0;
        for r in 1..=cutoff.min(g.len()) {
            total += if r == 1 { g[0] } else { g[r - 1] / (r as f64).ln() * 2f64.ln() };
        }
        total
    }

    fn ndcg_oracle(g: &[f64]) -> f64 {
        // ideal DCG as the maximum over all orderings of the top slots
        let mut best = 0.0f64;
        let mut idx: Vec<usize> = (0..g.len()).collect();
        permute(&mut idx, 0, &mut |p| {
            let v: Vec<f64> = p.iter().map(|&i| g[i]).collect();
            best = best.max(dcg_oracle(&v, 5));
        });
        if best == 0.0 {
            0.0
        } else {
            dcg_oracle(g, 5) / best
        }
    }

    fn permute(v: &mut Vec<usize>, k: usize, f: &mut dyn FnMut(&[usize])) {
        if k == v.len() {
            f(v);
            return;
        }
        for i in k..v.len() {
            v.swap(k, i);
            permute(v, k + 1, f);
            v.swap(k, i);
        }
    }

    fn ap_oracle(rel: &[bool]) -> f64 {
        let n_rel = rel.iter().filter(|&&r| r).count();
        if n_rel == 0 {
            return 0.0;
        }
        let mut s = 0.0;
        for j in 0..rel.len() {
            if rel[j] {
                let prefix = rel[..=j].iter().filter(|&&r| r).count();
                s += prefix as f64 / (j + 1) as f64;
            }
        }
        s / n_rel as f64
    }

    fn interp_oracle(rel: &[bool], points: usize) -> Vec<f64> {
        let total = rel.iter().filter(|&&r| r).count();
        (0..points)
            .map(|level| {
                let mut best = 0.0f64;
                for k in 1..=rel.len() {
                    let hits = rel[..k].iter().filter(|&&r| r).count();
                    if hits * (points - 1) >= level * total {
                        best = best.max(hits as f64 / k as f64);
                    }
                }
                best
            })
            .collect()
    }

    #[test]
    fn dcg_examples() {
        assert_eq!(dcg_at(&by_score(&[10.0]), 5), 10.0);
        assert_eq!(dcg_at(&by_score(&[10.0, 10.0]), 2), 20.0);
        assert_eq!(dcg_at(&by_score(&[0.0, 0.0, 0.0]), 5), 0.0);
        assert_eq!(dcg_at(&by_score(&[]), 5), 0.0);
    }

    #[test]
    fn ndcg_examples() {
        let ideal = by_score(&[10.0, 7.0, 3.0]);
        assert_eq!(ndcg5(&ideal).value, 1.0);
        assert_eq!(ndcg5(&by_score(&[0.0, 10.0])).value, 1.0);
        let r = ndcg5(&by_score(&[0.0, 0.0, 0.0, 0.0, 0.0, 10.0]));
        assert_eq!(r.value, 0.0);
        assert!(!r.degenerate);
        let z = ndcg5(&by_score(&[0.0, 0.0]));
        assert_eq!((z.value, z.degenerate), (0.0, true));
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&by_score(&[10.0, 7.0])).value, 1.0);
        let r = average_precision(&by_score(&[10.0, 0.0, 7.0])).value;
        assert!((r - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(average_precision(&by_score(&[3.0, 10.0])).value, 0.5);
        let d = average_precision(&by_score(&[3.0, 0.5]));
        assert_eq!((d.value, d.degenerate), (0.0, true));
    }

    #[test]
    fn map_examples() {
        let a = by_score(&[10.0]);
        let b = by_score(&[0.0, 10.0]);
        assert_eq!(mean_average_precision(&[a.clone(), b]).unwrap(), 0.75);
        assert_eq!(mean_average_precision(std::slice::from_ref(&a)).unwrap(), 1.0);
        assert!(matches!(mean_average_precision(&[]), Err(Error::EmptyRankingSet)));
    }

    #[test]
    fn curve_examples() {
        let perfect = by_score(&[10.0, 10.0, 0.0]);
        for (_, p) in precision_recall_curve(&[perfect], 11) {
            assert_eq!(p, 1.0);
        }
        let c = precision_recall_curve(&[by_score(&[0.0, 10.0])], 3);
        assert_eq!(c, vec![(0.0, 0.5), (0.5, 0.5), (1.0, 0.5)]);
        // queries without relevant items do not contribute
        let c2 = precision_recall_curve(&[by_score(&[0.0, 10.0]), by_score(&[0.0])], 3);
        assert_eq!(c, c2);
    }

    #[test]
    fn wilcoxon_exact_all_positive() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [0.0; 6];
        let r = wilcoxon_signed_rank(&a, &b).unwrap();
        assert_eq!(r.method, WilcoxonMethod::Exact);
        assert_eq!(r.statistic, 21.0);
        assert_eq!(r.p_value, 0.03125);
        assert_eq!(wilcoxon_signed_rank(&b, &a).unwrap().p_value, 0.03125);
    }

    /// Enumerates all 2^n sign patterns over the doubled ranks.
    fn exact_oracle(rank2: &[u64], w2: u64) -> f64 {
        let n = rank2.len();
        let (mut le, mut ge) = (0u64, 0u64);
        for mask in 0u64..(1 << n) {
            let s: u64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| rank2[i]).sum();
            le += u64::from(s <= w2);
            ge += u64::from(s >= w2);
        }
        (2.0 * le.min(ge) as f64 / (1u64 << n) as f64).min(1.0)
    }

    #[test]
    fn wilcoxon_exact_with_ties_matches_enumeration() {
        let d = [1.0, -1.0, 2.0, 3.0, -3.0, 3.0, 4.0, 0.0, 5.0];
        let r = wilcoxon_signed_rank(&d, &[0.0; 9]).unwrap();
        assert_eq!(r.n, 8);
        // |d| sorted: 1,1,2,3,3,3,4,5 → ranks 1.5,1.5,3,5,5,5,7,8
        let rank2 = [3, 3, 6, 10, 10, 10, 14, 16];
        let w2 = 3 + 6 + 10 + 10 + 14 + 16;
        assert_eq!(r.statistic, w2 as f64 / 2.0);
        assert!((r.p_value - exact_oracle(&rank2, w2)).abs() < 1e-15);
    }

    #[test]
    fn wilcoxon_errors() {
        let a = [1.0; 10];
        assert!(matches!(
            wilcoxon_signed_rank(&a, &a),
            Err(Error::TooFewDifferences { min: 6, got: 0 })
        ));
        assert!(matches!(wilcoxon_signed_rank(&a, &a[..3]), Err(Error::UnpairedSamples(10, 3))));
    }

    #[test]
    fn wilcoxon_normal_approximation() {
        // 30 distinct positive differences: W = 465, mean 232.5, var 2363.75
        let a: Vec<f64> = (1..=30).map(f64::from).collect();
        let r = wilcoxon_signed_rank(&a, &[0.0; 30]).unwrap();
        assert_eq!(r.method, WilcoxonMethod::Normal);
        let z: f64 = (465.0 - 232.5 - 0.5) / 2363.75f64.sqrt();
        assert!((z - 4.7719).abs() < 1e-3);
        // two-sided normal tail at z ≈ 4.772 is about 1.825e-6
        assert!((r.p_value - 1.8254e-6).abs() < 1e-8);
        // balanced signs give a large p-value
        let mixed: Vec<f64> = (1..=30).map(|i| if i % 2 == 0 { i as f64 } else { -(i as f64) }).collect();
        assert!(wilcoxon_signed_rank(&mixed, &[0.0; 30]).unwrap().p_value > 0.5);
    }

    #[test]
    fn erfc_reference_values() {
        assert!((erfc(0.0) - 1.0).abs() < 1e-7);
        assert!((erfc(0.5) - 0.4795001221869535).abs() < 1e-7);
        assert!((erfc(1.0) - 0.15729920705028513).abs() < 1e-7);
        assert!((erfc(2.0) - 0.004677734981047266).abs() < 1e-8);
        assert!((erfc(-1.0) - 1.8427007929497148).abs() < 1e-7);
    }

    #[test]
    fn normalization() {
        assert_eq!(min_max_normalize(&[2.0, 4.0, 3.0]), vec![0.0, 1.0, 0.5]);
        assert_eq!(min_max_normalize(&[5.0, 5.0]), vec![0.0, 0.0]);
        assert!(min_max_normalize(&[]).is_empty());
        let s = normalized_sum(&[&[0.0, 1.0], &[10.0, 0.0]]);
        assert_eq!(s, vec![1.0, 1.0]);
    }

    #[test]
    fn from_scored_sorts_and_grades() {
        let r = GradedRanking::from_scored("q", vec![("b", 0.5, 0.9), ("a", 0.5, 0.1), ("c", 0.7, 0.0)]).unwrap();
        let order: Vec<&str> = r.items.iter().map(|i| i.q2.as_str()).collect();
        assert_eq!(order, ["c", "a", "b"]);
        assert_eq!(r.grades().collect::<Vec<_>>(), vec![0.0, 0.5, 10.0]);
        assert!(r.items[2].relevant());
        assert!(GradedRanking::from_scored("q", vec![("x", 1.0, 1.5)]).is_err());
    }

    #[test]
    fn report_formats() {
        let mut buf = Vec::new();
        write_metrics(&mut buf, &[("GBDT".into(), 0.9405, 0.8978)]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "method\tNDCG5\tMAP\nGBDT\t0.9405\t0.8978\n");
        let mut buf = Vec::new();
        write_curve(&mut buf, &[(0.0, 1.0), (0.5, 0.75)]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "recall\tprecision\n0\t1\n0.5\t0.75\n");
    }

    fn grades_strategy() -> impl Strategy<Value = Vec<Grade>> {
        prop::collection::vec(prop::sample::select(SCORES.to_vec()), 0..=7)
    }

    proptest! {
        #[test]
        fn metrics_match_oracles(g in grades_strategy()) {
            let r = ranking(&g);
            let scores: Vec<f64> = g.iter().map(|g| g.score()).collect();
            let rel: Vec<bool> = g.iter().map(|g| g.is_relevant()).collect();
            for cutoff in 1..=6 {
                prop_assert!((dcg_at(&r, cutoff) - dcg_oracle(&scores, cutoff)).abs() < 1e-12);
            }
            prop_assert!((ndcg5(&r).value - ndcg_oracle(&scores)).abs() < 1e-12);
            prop_assert!((average_precision(&r).value - ap_oracle(&rel)).abs() < 1e-12);
            if rel.iter().any(|&x| x) {
                let c = precision_recall_curve(std::slice::from_ref(&r), 11);
                for ((_, p), q) in c.iter().zip(interp_oracle(&rel, 11)) {
                    prop_assert!((p - q).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn metric_ranges_and_invariances(g in grades_strategy()) {
            let r = ranking(&g);
            let n = ndcg5(&r).value;
            prop_assert!((0.0..=1.0).contains(&n));
            let ap = average_precision(&r).value;
            prop_assert!((0.0..=1.0).contains(&ap));
            // AP is 1 iff all relevant items precede all others
            let rel: Vec<bool> = g.iter().map(|g| g.is_relevant()).collect();
            let sorted = rel.windows(2).all(|w| w[0] || !w[1]);
            if rel.iter().any(|&x| x) {
                prop_assert_eq!((ap - 1.0).abs() < 1e-12, sorted);
            }
            // ideal ordering scores 1
            let mut ideal = g.clone();
            ideal.sort_by(|a, b| b.score().total_cmp(&a.score()));
            if g.iter().any(|g| g.score() > 0.0) {
                prop_assert!((ndcg5(&ranking(&ideal)).value - 1.0).abs() < 1e-12);
            }
            // doubling grades doubles DCG
            let s: Vec<f64> = g.iter().map(|g| g.score()).collect();
            let doubled: Vec<f64> = s.iter().map(|x| 2.0 * x).collect();
            prop_assert!((dcg_of(doubled, 5) - 2.0 * dcg_at(&r, 5)).abs() < 1e-9);
        }

        #[test]
        fn curve_is_non_increasing(gs in prop::collection::vec(grades_strategy(), 1..6), points in 2usize..15) {
            let rs: Vec<GradedRanking> = gs.iter().map(|g| ranking(g)).collect();
            let c = precision_recall_curve(&rs, points);
            prop_assert_eq!(c.len(), points);
            for w in c.windows(2) {
                prop_assert!(w[1].1 <= w[0].1 + 1e-12);
            }
        }

        #[test]
        fn map_matches_oracle_mean(gs in prop::collection::vec(grades_strategy(), 1..20)) {
            let rs: Vec<GradedRanking> = gs.iter().map(|g| ranking(g)).collect();
            let oracle: f64 = gs
                .iter()
                .map(|g| ap_oracle(&g.iter().map(|x| x.is_relevant()).collect::<Vec<_>>()))
                .sum::<f64>() / gs.len() as f64;
            prop_assert!((mean_average_precision(&rs).unwrap() - oracle).abs() < 1e-12);
        }

        #[test]
        fn wilcoxon_exact_matches_enumeration(d in prop::collection::vec(-4i32..=4, 6..14), shift in -50i32..50) {
            let a: Vec<f64> = d.iter().map(|&v| f64::from(v)).collect();
            let b = vec![0.0; a.len()];
            match wilcoxon_signed_rank(&a, &b) {
                Ok(r) => {
                    let mut mags: Vec<i32> = d.iter().filter(|&&v| v != 0).map(|v| v.abs()).collect();
                    mags.sort();
                    let rank2: Vec<u64> = mags
                        .iter()
                        .map(|m| {
                            let lo = mags.iter().position(|x| x == m).unwrap() as u64;
                            let hi = mags.iter().rposition(|x| x == m).unwrap() as u64;
                            lo + hi + 2
                        })
                        .collect();
                    let w2: u64 = d
                        .iter()
                        .filter(|&&v| v > 0)
                        .map(|v| rank2[mags.iter().position(|x| *x == v.abs()).unwrap()])
                        .sum();
                    prop_assert!((r.p_value - exact_oracle(&rank2, w2)).abs() < 1e-12);
                    prop_assert!(r.p_value > 0.0 && r.p_value <= 1.0);
                    // adding a constant to both samples changes nothing
                    let s = f64::from(shift);
                    let a2: Vec<f64> = a.iter().map(|x| x + s).collect();
                    let b2: Vec<f64> = b.iter().map(|x| x + s).collect();
                    prop_assert_eq!(wilcoxon_signed_rank(&a2, &b2).unwrap(), r);
                }
                Err(Error::TooFewDifferences { .. }) => {
                    prop_assert!(d.iter().filter(|&&v| v != 0).count() < 6);
                }
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }
    }
}
