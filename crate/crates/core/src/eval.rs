//! Filtered ranking metrics and relation-level breakdowns.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{FilterIndex, Split, Triple, TripleStore};
use crate::error::{Error, Result};
use crate::model::Inference;

pub const HITS_AT: [usize; 3] = [1, 3, 10];
pub const DEFAULT_CATEGORY_THRESHOLD: f64 = 1.5;

/// `1 + #{e ≠ target, e not filtered : !(s_e < s_target)}`.
///
/// Ties rank above the target, and so does any NaN score.
pub fn filtered_rank(scores: &[f64], target: usize, filter: &HashSet<usize>) -> Result<usize> {
    if target >= scores.len() {
        return Err(Error::IndexOutOfRange {
            index: target,
            len: scores.len(),
        });
    }
    if !filter.contains(&target) {
        return Err(Error::MissingFromFilter(target));
    }
    let s = scores[target];
    let above = scores
        .iter()
        .enumerate()
        .filter(|&(e, &v)| e != target && !filter.contains(&e) && !(v < s))
        .count();
    Ok(1 + above)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub mrr: f64,
    /// Hits@K keyed by K.
    pub hits: BTreeMap<usize, f64>,
    pub n_queries: usize,
}

impl RankingReport {
    pub fn from_ranks(ranks: &[usize]) -> Result<Self> {
        if ranks.is_empty() {
            return Err(Error::Empty("ranking queries"));
        }
        let n = ranks.len() as f64;
        let mrr = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n;
        let hits = HITS_AT
            .iter()
            .map(|&k| (k, ranks.iter().filter(|&&r| r <= k).count() as f64 / n))
            .collect();
        Ok(RankingReport {
            mrr,
            hits,
            n_queries: ranks.len(),
        })
    }

    pub fn hits_at(&self, k: usize) -> f64 {
        self.hits.get(&k).copied().unwrap_or(f64::NAN)
    }
}

/// Filtered rank of every query `(h, r, target)`, with scores from `scorer`.
/// Queries run in parallel; ranks come back in query order.
pub fn rank_queries<F>(queries: &[Triple], filter: &FilterIndex, scorer: F) -> Result<Vec<usize>>
where
    F: Fn(usize, usize) -> Result<Vec<f64>> + Sync,
{
    let empty = HashSet::new();
    queries
        .par_iter()
        .map(|q| {
            let scores = scorer(q.head, q.relation)?;
            let known = filter.answers(q.head, q.relation).unwrap_or(&empty);
            filtered_rank(&scores, q.tail, known)
        })
        .collect()
}

/// MRR and Hits@K over both directions of a split.
pub fn evaluate_split(
    inference: &Inference,
    store: &TripleStore,
    filter: &FilterIndex,
    split: Split,
) -> Result<RankingReport> {
    let queries = store.queries(split);
    let ranks = rank_queries(&queries, filter, |h, r| inference.score_all(h, r))?;
    RankingReport::from_ranks(&ranks)
}

/// Krackhardt hierarchy score of a directed graph: the fraction of ordered
/// reachable pairs `(u, v)`, `u ≠ v`, for which `v` does not reach `u`.
pub fn khs(edges: &[(usize, usize)]) -> Result<f64> {
    if edges.is_empty() {
        return Err(Error::Empty("relation graph"));
    }
    let mut ids: HashMap<usize, usize> = HashMap::new();
    for &(a, b) in edges {
        let n = ids.len();
        ids.entry(a).or_insert(n);
        let n = ids.len();
        ids.entry(b).or_insert(n);
    }
    let n = ids.len();
    let mut out = vec![Vec::new(); n];
    for &(a, b) in edges {
        out[ids[&a]].push(ids[&b]);
    }
    let reach: Vec<Vec<bool>> = (0..n)
        .into_par_iter()
        .map(|s| {
            let mut seen = vec![false; n];
            let mut queue = VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                for &v in &out[u] {
                    if !seen[v] {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
            }
            seen
        })
        .collect();
    let mut reachable = 0usize;
    let mut one_way = 0usize;
    for u in 0..n {
        for v in 0..n {
            if u != v && reach[u][v] {
                reachable += 1;
                if !reach[v][u] {
                    one_way += 1;
                }
            }
        }
    }
    if reachable == 0 {
        return Err(Error::Empty("reachable pairs"));
    }
    Ok(one_way as f64 / reachable as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    #[serde(rename = "1-1")]
    OneToOne,
    #[serde(rename = "1-N")]
    OneToMany,
    #[serde(rename = "N-1")]
    ManyToOne,
    #[serde(rename = "N-N")]
    ManyToMany,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::OneToOne,
        Category::OneToMany,
        Category::ManyToOne,
        Category::ManyToMany,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Category::OneToOne => "1-1",
            Category::OneToMany => "1-N",
            Category::ManyToOne => "N-1",
            Category::ManyToMany => "N-N",
        }
    }

    fn classify(triples: &[Triple], threshold: f64) -> Category {
        let heads: HashSet<usize> = triples.iter().map(|t| t.head).collect();
        let tails: HashSet<usize> = triples.iter().map(|t| t.tail).collect();
        let n = triples.len() as f64;
        let tails_per_head = n / heads.len() as f64;
        let heads_per_tail = n / tails.len() as f64;
        match (heads_per_tail > threshold, tails_per_head > threshold) {
            (false, false) => Category::OneToOne,
            (false, true) => Category::OneToMany,
            (true, false) => Category::ManyToOne,
            (true, true) => Category::ManyToMany,
        }
    }
}

fn base_triples(store: &TripleStore, splits: &[Split], r: usize) -> Vec<Triple> {
    splits
        .iter()
        .flat_map(|&s| store.split(s).iter().filter(move |t| t.relation == r).copied())
        .collect()
}

/// Category of every base relation from training statistics. A relation
/// without training triples is labeled from all splits, with a warning.
pub fn relation_categories(store: &TripleStore, threshold: f64) -> Vec<Option<Category>> {
    (0..store.num_base_relations())
        .map(|r| {
            let train = base_triples(store, &[Split::Train], r);
            if !train.is_empty() {
                return Some(Category::classify(&train, threshold));
            }
            let all = base_triples(store, &Split::ALL, r);
            if all.is_empty() {
                return None;
            }
            log::warn!(
                "relation {} has no training triples; categorized from all splits",
                store.relations().name(r).unwrap_or("?")
            );
            Some(Category::classify(&all, threshold))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationRow {
    pub relation: String,
    pub category: Option<Category>,
    pub khs: Option<f64>,
    pub hits_at_10: f64,
    pub n_queries: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Predicting the head, i.e. the reciprocal query.
    Head,
    /// Predicting the tail.
    Tail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub category: Category,
    pub direction: Direction,
    pub mrr: f64,
    pub hits_at_10: f64,
    pub n_queries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalDocument {
    pub split: Split,
    pub metrics: RankingReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_relation: Option<Vec<RelationRow>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub categories: Option<Vec<CategoryRow>>,
}

/// Evaluates a split and optionally the per-relation and per-category
/// breakdowns, scoring each query once.
pub fn evaluate_document(
    inference: &Inference,
    store: &TripleStore,
    filter: &FilterIndex,
    split: Split,
    per_relation: bool,
    categories: Option<f64>,
) -> Result<EvalDocument> {
    let queries = store.queries(split);
    let ranks = rank_queries(&queries, filter, |h, r| inference.score_all(h, r))?;
    let metrics = RankingReport::from_ranks(&ranks)?;
    let base = store.num_base_relations();
    let base_of = |r: usize| if r < base { r } else { r - base };

    let per_relation = per_relation.then(|| {
        let cats = relation_categories(store, categories.unwrap_or(DEFAULT_CATEGORY_THRESHOLD));
        (0..base)
            .filter_map(|r| {
                let rs: Vec<usize> = queries
                    .iter()
                    .zip(&ranks)
                    .filter(|(q, _)| base_of(q.relation) == r)
                    .map(|(_, &k)| k)
                    .collect();
                if rs.is_empty() {
                    return None;
                }
                let edges: Vec<(usize, usize)> = base_triples(store, &Split::ALL, r)
                    .iter()
                    .map(|t| (t.head, t.tail))
                    .collect();
                Some(RelationRow {
                    relation: store.relations().name(r).unwrap_or("?").to_string(),
                    category: cats[r],
                    khs: khs(&edges).ok(),
                    hits_at_10: rs.iter().filter(|&&k| k <= 10).count() as f64 / rs.len() as f64,
                    n_queries: rs.len(),
                })
            })
            .collect()
    });

    let categories = categories.map(|threshold| {
        let cats = relation_categories(store, threshold);
        let mut rows = Vec::new();
        for cat in Category::ALL {
            for dir in [Direction::Head, Direction::Tail] {
                let rs: Vec<usize> = queries
                    .iter()
                    .zip(&ranks)
                    .filter(|(q, _)| {
                        let is_tail = q.relation < base;
                        cats[base_of(q.relation)] == Some(cat) && is_tail == (dir == Direction::Tail)
                    })
                    .map(|(_, &k)| k)
                    .collect();
                if let Ok(rep) = RankingReport::from_ranks(&rs) {
                    rows.push(CategoryRow {
                        category: cat,
                        direction: dir,
                        mrr: rep.mrr,
                        hits_at_10: rep.hits_at(10),
                        n_queries: rep.n_queries,
                    });
                }
            }
        }
        rows
    });

    Ok(EvalDocument {
        split,
        metrics,
        per_relation,
        categories,
    })
}

impl EvalDocument {
    pub fn to_text(&self) -> String {
        let m = &self.metrics;
        let mut s = String::new();
        let _ = writeln!(s, "split {} ({} queries)", self.split.name(), m.n_queries);
        let _ = writeln!(s, "{:>8} {:>8} {:>8} {:>8}", "MRR", "H@1", "H@3", "H@10");
        let _ = writeln!(
            s,
            "{:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            m.mrr,
            m.hits_at(1),
            m.hits_at(3),
            m.hits_at(10)
        );
        if let Some(rows) = &self.per_relation {
            let _ = writeln!(s, "\n{:<32} {:>5} {:>6} {:>8} {:>8}", "relation", "cat", "Khs", "H@10", "queries");
            for r in rows {
                let khs = r.khs.map_or("-".to_string(), |k| format!("{k:.2}"));
                let cat = r.category.map_or("-", Category::label);
                let _ = writeln!(
                    s,
                    "{:<32} {:>5} {:>6} {:>8.4} {:>8}",
                    r.relation, cat, khs, r.hits_at_10, r.n_queries
                );
            }
        }
        if let Some(rows) = &self.categories {
            let _ = writeln!(s, "\n{:<5} {:<5} {:>8} {:>8} {:>8}", "cat", "side", "MRR", "H@10", "queries");
            for r in rows {
                let side = match r.direction {
                    Direction::Head => "head",
                    Direction::Tail => "tail",
                };
                let _ = writeln!(
                    s,
                    "{:<5} {:<5} {:>8.4} {:>8.4} {:>8}",
                    r.category.label(),
                    side,
                    r.mrr,
                    r.hits_at_10,
                    r.n_queries
                );
            }
        }
        s
    }
}
