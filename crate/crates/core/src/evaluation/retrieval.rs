//! Exhaustive top-K search and the recall metrics built on it.

use serde::{Deserialize, Serialize};

use super::geo::haversine;
use super::index::EmbeddingIndex;
use crate::exec::Execution;
use crate::{Error, Result};

pub const DEFAULT_KS: [usize; 3] = [1, 5, 10];
pub const LOCALIZATION_RADIUS_M: f64 = 5.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Hit {
    pub row: usize,
    pub id: String,
    pub distance: f64,
}

fn squared_distance(query: &[f64], row: &[f32]) -> f64 {
    query
        .iter()
        .zip(row)
        .map(|(&q, &r)| {
            let d = q - r as f64;
            d * d
        })
        .sum()
}

fn distances(index: &EmbeddingIndex, query: &[f64]) -> Vec<f64> {
    (0..index.len())
        .map(|i| squared_distance(query, index.row(i)))
        .collect()
}

/// `(distance, row)` lexicographic order: ties go to the earlier row.
#[inline]
fn before(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).is_lt()
}

/// The `min(k, N)` nearest rows by squared L2, ascending.
pub fn top_k(index: &EmbeddingIndex, query: &[f64], k: usize) -> Result<Vec<Hit>> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if !index.is_empty() && query.len() != index.dim() {
        return Err(Error::invalid(format!(
            "query has {} dims, index has {}",
            query.len(),
            index.dim()
        )));
    }
    let d = distances(index, query);
    let mut order: Vec<usize> = (0..d.len()).collect();
    let cmp = |a: &usize, b: &usize| d[*a].total_cmp(&d[*b]).then(a.cmp(b));
    let k = k.min(order.len());
    if k < order.len() {
        order.select_nth_unstable_by(k, cmp);
        order.truncate(k);
    }
    order.sort_unstable_by(cmp);
    Ok(order
        .into_iter()
        .map(|row| Hit {
            row,
            id: index.ids()[row].clone(),
            distance: d[row],
        })
        .collect())
}

/// [`top_k`] for many queries, fanned out across queries.
pub fn top_k_batch(
    index: &EmbeddingIndex,
    queries: &[Vec<f64>],
    k: usize,
    exec: Execution,
) -> Result<Vec<Vec<Hit>>> {
    exec.map_range(queries.len(), |i| top_k(index, &queries[i], k))
        .into_iter()
        .collect()
}

/// `ceil(0.01 * N)`, at least 1.
pub fn k_top_one_percent(n: usize) -> usize {
    n.div_ceil(100).max(1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub n_queries: usize,
    pub n_database: usize,
    pub ks: Vec<usize>,
    pub recall: Vec<f64>,
    pub k_top1percent: usize,
    pub recall_top1percent: f64,
}

impl RecallReport {
    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.recall[i])
    }

    /// `k,recall` rows; the top-1% entry is labelled `top1%(K)`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,recall\n");
        for (k, r) in self.ks.iter().zip(&self.recall) {
            s.push_str(&format!("{k},{r}\n"));
        }
        s.push_str(&format!(
            "top1%({}),{}\n",
            self.k_top1percent, self.recall_top1percent
        ));
        s
    }
}

/// 0-based rank of the ground-truth row for one query.
fn rank_of(index: &EmbeddingIndex, query: &[f64], gt_row: usize) -> usize {
    let d = distances(index, query);
    let key = (d[gt_row], gt_row);
    (0..d.len()).filter(|&i| before((d[i], i), key)).count()
}

/// Ranks of every query's ground-truth row.
pub fn ground_truth_ranks(
    index: &EmbeddingIndex,
    queries: &[Vec<f64>],
    ground_truth: &[&str],
    exec: Execution,
) -> Result<Vec<usize>> {
    if queries.len() != ground_truth.len() {
        return Err(Error::validation("one ground-truth id per query required"));
    }
    let rows = ground_truth
        .iter()
        .map(|id| {
            index
                .find(id)
                .ok_or_else(|| Error::validation(format!("ground-truth id `{id}` not in index")))
        })
        .collect::<Result<Vec<_>>>()?;
    for q in queries {
        if q.len() != index.dim() {
            return Err(Error::invalid(format!(
                "query has {} dims, index has {}",
                q.len(),
                index.dim()
            )));
        }
    }
    Ok(exec.map_range(queries.len(), |i| rank_of(index, &queries[i], rows[i])))
}

/// Fraction of queries whose ground truth appears in the top `K` for every
/// `K` in `ks`, plus the top-1% cut-off.
pub fn recall_at_k(
    index: &EmbeddingIndex,
    queries: &[Vec<f64>],
    ground_truth: &[&str],
    ks: &[usize],
    exec: Execution,
) -> Result<RecallReport> {
    let ranks = ground_truth_ranks(index, queries, ground_truth, exec)?;
    Ok(report_from_ranks(&ranks, index.len(), ks))
}

pub fn report_from_ranks(ranks: &[usize], n_database: usize, ks: &[usize]) -> RecallReport {
    let frac = |k: usize| {
        if ranks.is_empty() {
            0.0
        } else {
            ranks.iter().filter(|&&r| r < k).count() as f64 / ranks.len() as f64
        }
    };
    let k1 = k_top_one_percent(n_database);
    RecallReport {
        n_queries: ranks.len(),
        n_database,
        ks: ks.to_vec(),
        recall: ks.iter().map(|&k| frac(k)).collect(),
        k_top1percent: k1,
        recall_top1percent: frac(k1),
    }
}

/// Fraction of queries with at least one of their top `n_top` tiles within
/// `radius_m` metres of the query's true position.
pub fn localization_recall(
    index: &EmbeddingIndex,
    queries: &[Vec<f64>],
    query_positions: &[(f64, f64)],
    n_top: usize,
    radius_m: f64,
    exec: Execution,
) -> Result<f64> {
    let positions = index
        .positions()
        .ok_or_else(|| Error::validation("index has no positions"))?;
    if query_positions.len() != queries.len() {
        return Err(Error::validation("one position per query required"));
    }
    if queries.is_empty() {
        return Ok(0.0);
    }
    let hits = top_k_batch(index, queries, n_top, exec)?;
    let mut localized = 0;
    for (hs, &qp) in hits.iter().zip(query_positions) {
        let mut ok = false;
        for h in hs {
            if haversine(positions[h.row], qp)? <= radius_m {
                ok = true;
                break;
            }
        }
        localized += ok as usize;
    }
    Ok(localized as f64 / queries.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx(rows: &[[f64; 2]], pos: Option<Vec<(f64, f64)>>) -> EmbeddingIndex {
        let e: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| {
                let n = (r[0] * r[0] + r[1] * r[1]).sqrt();
                vec![r[0] / n, r[1] / n]
            })
            .collect();
        let ids = (0..rows.len()).map(|i| format!("r{i}")).collect();
        EmbeddingIndex::build(ids, &e, pos).unwrap()
    }

    #[test]
    fn exact_match_first_and_k_clamped() {
        let index = idx(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]], None);
        let q = index.row_f64(1);
        let hits = top_k(&index, &q, 10).unwrap();
        assert_eq!(hits.len(), 3);
        assert_eq!(hits[0].id, "r1");
        assert_eq!(hits[0].distance, 0.0);
        assert!(top_k(&index, &q, 0).is_err());
    }

    #[test]
    fn ties_broken_by_insertion_order() {
        let index = idx(&[[1.0, 1.0], [1.0, -1.0], [-1.0, 0.0]], None);
        let hits = top_k(&index, &[1.0, 0.0], 3).unwrap();
        assert_eq!(hits[0].distance, hits[1].distance);
        assert_eq!((hits[0].row, hits[1].row, hits[2].row), (0, 1, 2));
    }

    #[test]
    fn empty_index_returns_nothing() {
        let index = EmbeddingIndex::build(vec![], &[], None).unwrap();
        assert!(top_k(&index, &[1.0, 0.0], 5).unwrap().is_empty());
    }

    #[test]
    fn top_one_percent() {
        assert_eq!(k_top_one_percent(8884), 89);
        assert_eq!(k_top_one_percent(1), 1);
        assert_eq!(k_top_one_percent(0), 1);
        assert_eq!(k_top_one_percent(200), 2);
        assert_eq!(k_top_one_percent(201), 3);
    }

    #[test]
    fn self_queries_have_full_recall() {
        let index = idx(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [-1.0, 0.2]], None);
        let queries: Vec<Vec<f64>> = (0..4).map(|i| index.row_f64(i)).collect();
        let gt: Vec<&str> = index.ids().iter().map(String::as_str).collect();
        let r = recall_at_k(&index, &queries, &gt, &DEFAULT_KS, Execution::Sequential).unwrap();
        assert_eq!(r.recall, vec![1.0, 1.0, 1.0]);
        assert_eq!(r.recall_top1percent, 1.0);
        assert!(recall_at_k(&index, &queries[..1], &["zz"], &[1], Execution::Sequential).is_err());
    }

    #[test]
    fn localization() {
        let pos = vec![(40.0, -105.0), (40.001, -105.0), (40.002, -105.0)];
        let index = idx(&[[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]], Some(pos.clone()));
        let queries: Vec<Vec<f64>> = (0..3).map(|i| index.row_f64(i)).collect();
        let r = localization_recall(&index, &queries, &pos, 1, 5.0, Execution::Sequential).unwrap();
        assert_eq!(r, 1.0);
        // radius 0: only exact coordinates count
        let shifted: Vec<(f64, f64)> = pos.iter().map(|&(a, b)| (a + 1e-6, b)).collect();
        let r = localization_recall(&index, &queries, &shifted, 1, 0.0, Execution::Sequential).unwrap();
        assert_eq!(r, 0.0);
        let r = localization_recall(&index, &queries, &pos, 1, 0.0, Execution::Sequential).unwrap();
        assert_eq!(r, 1.0);

        let nopos = idx(&[[1.0, 0.0]], None);
        assert!(matches!(
            localization_recall(&nopos, &queries[..1], &pos[..1], 1, 5.0, Execution::Sequential),
            Err(Error::Validation(_))
        ));
    }
}
