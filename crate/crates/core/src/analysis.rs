//! Dispersion statistics and binned precision reports.
//!
//! Dispersion is the mean pairwise cosine distance among the vectors that
//! represent one item: the images of a concept, or one alias encoded in
//! different sentences. The same function serves both.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluate::EvalSet;
use crate::matrix::Matrix;
use crate::retrieval::{self, RankedRetrieval};
use crate::scalar::Scalar;
use crate::store::EmbeddingSpace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispersionRecord {
    pub label: String,
    pub value: f64,
    pub n_items: usize,
}

/// `2/(n(n−1)) · Σ_{j<k} (1 − cos(v_j, v_k))`, accumulated in `f64`.
pub fn dispersion<T: Scalar>(vectors: &Matrix<T>) -> Result<f64> {
    let n = vectors.rows();
    if n < 2 {
        return Err(Error::Insufficient(format!(
            "dispersion needs at least 2 vectors, got {n}"
        )));
    }
    let rows: Vec<Vec<f64>> = vectors
        .row_iter()
        .map(|r| r.iter().map(|v| v.to_f64_lossless()).collect())
        .collect();
    let norms: Vec<f64> = rows
        .iter()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    if let Some(i) = norms.iter().position(|&x| x == 0.0) {
        return Err(Error::Degenerate(format!("vector {i} is zero")));
    }
    let mut total = 0.0;
    for j in 0..n {
        for k in j + 1..n {
            let dot: f64 = rows[j].iter().zip(&rows[k]).map(|(a, b)| a * b).sum();
            total += 1.0 - dot / (norms[j] * norms[k]);
        }
    }
    Ok(2.0 * total / (n as f64 * (n as f64 - 1.0)))
}

/// Dispersion per group of rows. A row labelled `group#anything` belongs to
/// `group`; a label without `#` forms its own group. Groups with fewer than
/// two rows are skipped with a warning. Output is sorted by group label.
pub fn grouped_dispersion(space: &EmbeddingSpace) -> Result<Vec<DispersionRecord>> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, label) in space.labels().iter().enumerate() {
        let key = label.rsplit_once('#').map_or(label.as_str(), |(g, _)| g);
        groups.entry(key).or_default().push(i);
    }
    let mut out = Vec::with_capacity(groups.len());
    for (label, rows) in groups {
        if rows.len() < 2 {
            log::warn!("group `{label}` has a single vector; no dispersion");
            continue;
        }
        let value = dispersion(&space.vectors().select_rows(&rows))
            .map_err(|e| Error::Degenerate(format!("group `{label}`: {e}")))?;
        out.push(DispersionRecord {
            label: label.to_owned(),
            value,
            n_items: rows.len(),
        });
    }
    Ok(out)
}

/// Labels of the low, medium and high dispersion bins.
pub const TERTILE_LABELS: [&str; 3] = ["low", "medium", "high"];
/// Labels of the polysemy bins.
pub const POLYSEMY_LABELS: [&str; 3] = ["1", "2-3", "4+"];

/// Sorts by value (ties by label) and cuts into three rank-based bins whose
/// sizes differ by at most one; the lower bins take the remainder.
pub fn tertile_bins(values: &[(String, f64)]) -> Result<[BTreeSet<String>; 3]> {
    let n = values.len();
    if n < 3 {
        return Err(Error::Insufficient(format!(
            "tertiles need at least 3 values, got {n}"
        )));
    }
    if let Some((l, _)) = values.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Validation(format!("non-finite value for `{l}`")));
    }
    let mut sorted: Vec<&(String, f64)> = values.iter().collect();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    let mut bins: [BTreeSet<String>; 3] = Default::default();
    let mut it = sorted.into_iter();
    for (b, bin) in bins.iter_mut().enumerate() {
        let size = n / 3 + usize::from(b < n % 3);
        for (label, _) in it.by_ref().take(size) {
            if !bin.insert(label.clone()) {
                return Err(Error::Validation(format!("label `{label}` listed twice")));
            }
        }
    }
    Ok(bins)
}

/// Index into [`POLYSEMY_LABELS`] for a meaning count.
pub fn polysemy_bin(count: u32) -> Result<usize> {
    match count {
        0 => Err(Error::Validation("meaning counts start at 1".into())),
        1 => Ok(0),
        2..=3 => Ok(1),
        _ => Ok(2),
    }
}

pub fn polysemy_bins(counts: &[(String, u32)]) -> Result<[BTreeSet<String>; 3]> {
    let mut bins: [BTreeSet<String>; 3] = Default::default();
    for (alias, count) in counts {
        let b = polysemy_bin(*count)
            .map_err(|_| Error::Validation(format!("alias `{alias}` has meaning count {count}")))?;
        bins[b].insert(alias.clone());
    }
    Ok(bins)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinKind {
    DispersionTertile,
    Polysemy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinMode {
    /// Bins hold query labels; a query hits if any gold candidate is retrieved.
    ConceptLevel,
    /// Bins hold gold candidate labels; a query contributes the fraction of
    /// its in-bin gold labels that are retrieved.
    PerAlias,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinRow {
    pub label: String,
    pub query_count: usize,
    /// Query-alias pairs that fall in the bin.
    pub pair_count: usize,
    /// Percentage per k; `None` when the bin is empty.
    pub precision: Vec<(usize, Option<f64>)>,
}

impl BinRow {
    pub fn get(&self, k: usize) -> Option<f64> {
        self.precision.iter().find(|p| p.0 == k).and_then(|p| p.1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedReport {
    pub bin_kind: BinKind,
    pub mode: BinMode,
    pub ks: Vec<usize>,
    pub bins: Vec<BinRow>,
    /// Queries (concept level) or query-alias pairs (per alias) that fall
    /// in no bin.
    pub uncovered: usize,
}

/// Precision within each bin.
///
/// Every label in `bins` must name a query (concept level) or a gold
/// candidate of some query (per alias).
pub fn binned_report(
    bin_kind: BinKind,
    bins: &[(String, BTreeSet<String>)],
    results: &RankedRetrieval,
    eval: &EvalSet,
    mode: BinMode,
    ks: &[usize],
) -> Result<BinnedReport> {
    if eval.len() != results.n_queries() {
        return Err(Error::Consistency(format!(
            "{} queries in the evaluation set, {} rankings",
            eval.len(),
            results.n_queries()
        )));
    }
    // validates gold sets and depths once
    retrieval::precision_at_k(results, &eval.gold, ks)?;

    let mut rows = Vec::with_capacity(bins.len());
    let mut covered = vec![0usize; eval.len()];
    let covered_pairs = match mode {
        BinMode::ConceptLevel => {
            let index = eval.query_index();
            for (label, members) in bins {
                let mut queries = Vec::with_capacity(members.len());
                for m in members {
                    let q = *index
                        .get(m.as_str())
                        .ok_or_else(|| Error::Lookup(m.clone()))?;
                    covered[q] += 1;
                    queries.push(q);
                }
                let sub = results.subset(&queries);
                let gold: Vec<Vec<usize>> = queries.iter().map(|&q| eval.gold[q].clone()).collect();
                let precision = if queries.is_empty() {
                    ks.iter().map(|&k| (k, None)).collect()
                } else {
                    retrieval::precision_at_k(&sub, &gold, ks)?
                        .into_iter()
                        .map(|(k, p)| (k, Some(p)))
                        .collect()
                };
                rows.push(BinRow {
                    label: label.clone(),
                    query_count: queries.len(),
                    pair_count: gold.iter().map(Vec::len).sum(),
                    precision,
                });
            }
            0
        }
        BinMode::PerAlias => {
            let gold_aliases: HashSet<&str> =
                (0..eval.len()).flat_map(|q| eval.gold_labels(q)).collect();
            let mut pair_hits: BTreeSet<(usize, usize)> = BTreeSet::new();
            for (label, members) in bins {
                if let Some(m) = members.iter().find(|m| !gold_aliases.contains(m.as_str())) {
                    return Err(Error::Lookup(m.clone()));
                }
                let mut queries = Vec::new();
                let mut gold = Vec::new();
                for q in 0..eval.len() {
                    let in_bin: Vec<usize> = eval.gold[q]
                        .iter()
                        .copied()
                        .filter(|&i| members.contains(&eval.candidate_labels[i]))
                        .collect();
                    if !in_bin.is_empty() {
                        pair_hits.extend(in_bin.iter().map(|&i| (q, i)));
                        queries.push(q);
                        gold.push(in_bin);
                    }
                }
                let sub = results.subset(&queries);
                let precision = ks
                    .iter()
                    .map(|&k| {
                        if queries.is_empty() {
                            return Ok((k, None));
                        }
                        let fractions = retrieval::per_alias_precision(&sub, &gold, k)?;
                        let mean = fractions.iter().sum::<f64>() / fractions.len() as f64;
                        Ok((k, Some(100.0 * mean)))
                    })
                    .collect::<Result<Vec<_>>>()?;
                rows.push(BinRow {
                    label: label.clone(),
                    query_count: queries.len(),
                    pair_count: gold.iter().map(Vec::len).sum(),
                    precision,
                });
            }
            pair_hits.len()
        }
    };
    let uncovered = match mode {
        BinMode::ConceptLevel => {
            if let Some(q) = covered.iter().position(|&c| c > 1) {
                return Err(Error::Validation(format!(
                    "query `{}` appears in more than one bin",
                    eval.query_labels[q]
                )));
            }
            covered.iter().filter(|&&c| c == 0).count()
        }
        BinMode::PerAlias => eval.gold.iter().map(Vec::len).sum::<usize>() - covered_pairs,
    };
    Ok(BinnedReport {
        bin_kind,
        mode,
        ks: ks.to_vec(),
        bins: rows,
        uncovered,
    })
}

/// Labelled bins in the fixed order of `labels`.
pub fn label_bins(
    labels: [&str; 3],
    sets: [BTreeSet<String>; 3],
) -> Vec<(String, BTreeSet<String>)> {
    labels.iter().map(|l| l.to_string()).zip(sets).collect()
}

impl BinnedReport {
    /// Table with one row per bin: label, counts, then one precision column
    /// per k (`NA` for empty bins).
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("bin\tqueries\tpairs");
        for k in &self.ks {
            let _ = write!(out, "\tP@{k}");
        }
        out.push('\n');
        for row in &self.bins {
            let _ = write!(
                out,
                "{}\t{}\t{}",
                row.label, row.query_count, row.pair_count
            );
            for &k in &self.ks {
                match row.get(k) {
                    Some(p) => {
                        let _ = write!(out, "\t{p:?}");
                    }
                    None => out.push_str("\tNA"),
                }
            }
            out.push('\n');
        }
        let _ = writeln!(out, "# uncovered\t{}", self.uncovered);
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }
}

/// Bin-wise arithmetic mean of precision over folds. Counts are summed.
pub fn mean_binned_reports(reports: &[BinnedReport]) -> Result<BinnedReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Insufficient("no reports to average".into()))?;
    for r in reports {
        let same_bins = r.bins.len() == first.bins.len()
            && r.bins
                .iter()
                .zip(&first.bins)
                .all(|(a, b)| a.label == b.label);
        if r.ks != first.ks || r.bin_kind != first.bin_kind || r.mode != first.mode || !same_bins {
            return Err(Error::Consistency(
                "binned reports have different layouts".into(),
            ));
        }
    }
    let bins = first
        .bins
        .iter()
        .enumerate()
        .map(|(b, row)| {
            let precision = first
                .ks
                .iter()
                .map(|&k| {
                    let values: Vec<f64> =
                        reports.iter().filter_map(|r| r.bins[b].get(k)).collect();
                    let mean = (!values.is_empty())
                        .then(|| values.iter().sum::<f64>() / values.len() as f64);
                    (k, mean)
                })
                .collect();
            BinRow {
                label: row.label.clone(),
                query_count: reports.iter().map(|r| r.bins[b].query_count).sum(),
                pair_count: reports.iter().map(|r| r.bins[b].pair_count).sum(),
                precision,
            }
        })
        .collect();
    Ok(BinnedReport {
        bin_kind: first.bin_kind,
        mode: first.mode,
        ks: first.ks.clone(),
        bins,
        uncovered: reports.iter().map(|r| r.uncovered).sum(),
    })
}
