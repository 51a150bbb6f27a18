//! Multi-label retrieval metrics: mAP, ACG and NDCG at every cutoff `k`.
//!
//! Relevance between a query and a retrieved image comes from their label
//! vectors: the graded relevance is the number of shared labels, and an item
//! is relevant (for mAP) when it shares at least one. NDCG normalizes by the
//! ideal reordering of the same top-`k` list.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelmap::MultiLabelVector;
use crate::retrieval::{DescriptorStore, Query};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RelevanceJudgment {
    pub shared: usize,
    pub relevant: bool,
}

pub fn judge(query: &MultiLabelVector, retrieved: &MultiLabelVector) -> Result<RelevanceJudgment> {
    let shared = query.shared(retrieved)?;
    Ok(RelevanceJudgment {
        shared,
        relevant: shared > 0,
    })
}

/// Gain applied to a shared-label count in NDCG.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum GainPolicy {
    /// `gain = shared`
    #[default]
    Raw,
    /// `gain = 2^shared - 1`
    Exponential,
}

impl GainPolicy {
    pub fn gain(self, shared: usize) -> f64 {
        match self {
            GainPolicy::Raw => shared as f64,
            GainPolicy::Exponential => 2f64.powi(shared.min(1023) as i32) - 1.0,
        }
    }
}

fn check_k(len: usize, k: usize) -> Result<()> {
    if k == 0 || k > len {
        return Err(Error::invalid(format!("cutoff k = {k} outside 1..={len}")));
    }
    Ok(())
}

/// Mean of precision@r over relevant ranks `r <= k`; 0 with no relevant item.
pub fn average_precision(relevance: &[bool], k: usize) -> Result<f64> {
    check_k(relevance.len(), k)?;
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (r, _) in relevance[..k].iter().enumerate().filter(|(_, &rel)| rel) {
        hits += 1;
        sum += hits as f64 / (r + 1) as f64;
    }
    Ok(if hits == 0 { 0.0 } else { sum / hits as f64 })
}

pub fn acg_at_k(shared: &[usize], k: usize) -> Result<f64> {
    check_k(shared.len(), k)?;
    Ok(shared[..k].iter().sum::<usize>() as f64 / k as f64)
}

fn dcg(gains: impl Iterator<Item = f64>) -> f64 {
    gains
        .enumerate()
        .map(|(r, g)| g / ((r + 2) as f64).log2())
        .sum()
}

pub fn ndcg_at_k(shared: &[usize], k: usize) -> Result<f64> {
    ndcg_at_k_with(shared, k, GainPolicy::Raw)
}

pub fn ndcg_at_k_with(shared: &[usize], k: usize, policy: GainPolicy) -> Result<f64> {
    check_k(shared.len(), k)?;
    let top = &shared[..k];
    let actual = dcg(top.iter().map(|&s| policy.gain(s)));
    let mut ideal = top.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let best = dcg(ideal.into_iter().map(|s| policy.gain(s)));
    Ok(if best == 0.0 { 0.0 } else { actual / best })
}

/// Metric values averaged over queries; index `k - 1` holds cutoff `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalCurve {
    pub map: Vec<f64>,
    pub acg: Vec<f64>,
    pub ndcg: Vec<f64>,
}

impl EvalCurve {
    pub fn k_max(&self) -> usize {
        self.map.len()
    }

    pub fn map_at(&self, k: usize) -> f64 {
        self.map[k - 1]
    }

    pub fn acg_at(&self, k: usize) -> f64 {
        self.acg[k - 1]
    }

    pub fn ndcg_at(&self, k: usize) -> f64 {
        self.ndcg[k - 1]
    }

    /// `k,map,acg,ndcg` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "k,map,acg,ndcg")?;
        for k in 1..=self.k_max() {
            writeln!(out, "{k},{},{},{}", self.map_at(k), self.acg_at(k), self.ndcg_at(k))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EvalQuery {
    pub id: String,
    pub descriptor: Vec<f64>,
    pub labels: MultiLabelVector,
}

/// Per-query metric curves: `(ap, acg, ndcg)` for `k = 1..=k_max`.
pub fn query_curves(
    store: &DescriptorStore,
    q: &EvalQuery,
    k_max: usize,
    policy: GainPolicy,
) -> Result<Vec<(f64, f64, f64)>> {
    let own = store.contains(&q.id);
    let ranked = store.query(Query::Descriptor(&q.descriptor), k_max + own as usize)?;
    let shared: Vec<usize> = ranked
        .ids()
        .filter(|id| *id != q.id)
        .take(k_max)
        .map(|id| judge(&q.labels, &store.get(id).expect("ranked id").labels).map(|j| j.shared))
        .collect::<Result<_>>()?;
    if shared.len() < k_max {
        return Err(Error::invalid(format!(
            "k_max = {k_max} exceeds the {} images available to query {}",
            shared.len(),
            q.id
        )));
    }
    let relevant: Vec<bool> = shared.iter().map(|&s| s > 0).collect();
    (1..=k_max)
        .map(|k| {
            Ok((
                average_precision(&relevant, k)?,
                acg_at_k(&shared, k)?,
                ndcg_at_k_with(&shared, k, policy)?,
            ))
        })
        .collect()
}

/// Ranks the store for every query (excluding the query's own id) and
/// averages each metric over queries.
pub fn evaluate(
    store: &DescriptorStore,
    queries: &[EvalQuery],
    k_max: usize,
    policy: GainPolicy,
) -> Result<EvalCurve> {
    if queries.is_empty() {
        return Err(Error::invalid("no queries to evaluate"));
    }
    if k_max == 0 {
        return Err(Error::invalid("k_max must be at least 1"));
    }
    for q in queries {
        let available = store.len() - store.contains(&q.id) as usize;
        if k_max > available {
            return Err(Error::invalid(format!(
                "k_max = {k_max} exceeds the {available} images available to query {}",
                q.id
            )));
        }
    }
    let per_query: Vec<Vec<(f64, f64, f64)>> = queries
        .par_iter()
        .map(|q| query_curves(store, q, k_max, policy))
        .collect::<Result<_>>()?;

    let n = queries.len() as f64;
    let mut curve = EvalCurve {
        map: vec![0.0; k_max],
        acg: vec![0.0; k_max],
        ndcg: vec![0.0; k_max],
    };
    for rows in &per_query {
        for (k, (ap, acg, ndcg)) in rows.iter().enumerate() {
            curve.map[k] += ap;
            curve.acg[k] += acg;
            curve.ndcg[k] += ndcg;
        }
    }
    for v in curve.map.iter_mut().chain(&mut curve.acg).chain(&mut curve.ndcg) {
        *v /= n;
    }
    Ok(curve)
}
