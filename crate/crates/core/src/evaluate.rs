//! End-to-end evaluation of a fitted alignment: build the candidate space,
//! map the held-out sources, retrieve, and score.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::de::Deserializer;
use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};

use crate::align::{self, AlignmentModel};
use crate::error::{Error, Result};
use crate::retrieval::{self, Exec, Metric, Neighbor, RankedRetrieval};
use crate::store::EmbeddingSpace;

/// Queries, the candidate vocabulary they are ranked against, and each
/// query's gold candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSet {
    pub query_labels: Vec<String>,
    pub candidate_labels: Vec<String>,
    pub gold: Vec<Vec<usize>>,
}

impl EvalSet {
    /// One query per distinct source label of `pairs` (first appearance
    /// order); its gold set holds the candidate rows of its target labels.
    pub fn build(candidates: &EmbeddingSpace, pairs: &[(String, String)]) -> Result<Self> {
        let mut query_labels: Vec<String> = Vec::new();
        let mut slot: HashMap<&str, usize> = HashMap::new();
        let mut gold: Vec<Vec<usize>> = Vec::new();
        for (src, tgt) in pairs {
            let idx = candidates.require(tgt)?;
            let q = *slot.entry(src.as_str()).or_insert_with(|| {
                query_labels.push(src.clone());
                gold.push(Vec::new());
                query_labels.len() - 1
            });
            if !gold[q].contains(&idx) {
                gold[q].push(idx);
            }
        }
        Ok(EvalSet {
            query_labels,
            candidate_labels: candidates.labels().to_vec(),
            gold,
        })
    }

    pub fn len(&self) -> usize {
        self.query_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.query_labels.is_empty()
    }

    pub fn query_index(&self) -> HashMap<&str, usize> {
        self.query_labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i))
            .collect()
    }

    pub fn gold_labels(&self, q: usize) -> impl Iterator<Item = &str> {
        self.gold[q]
            .iter()
            .map(|&i| self.candidate_labels[i].as_str())
    }
}

/// Precision per `k`, serialised as a JSON object keyed by `k` in the
/// order the ks were requested.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PrecisionTable(pub Vec<(usize, f64)>);

impl PrecisionTable {
    pub fn get(&self, k: usize) -> Option<f64> {
        self.0.iter().find(|(kk, _)| *kk == k).map(|(_, v)| *v)
    }
}

impl Serialize for PrecisionTable {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.0.len()))?;
        for (k, v) in &self.0 {
            map.serialize_entry(&k.to_string(), v)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for PrecisionTable {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = BTreeMap::<String, f64>::deserialize(d)?;
        let mut entries = raw
            .into_iter()
            .map(|(k, v)| k.parse::<usize>().map(|k| (k, v)))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(serde::de::Error::custom)?;
        entries.sort_by_key(|e| e.0);
        Ok(PrecisionTable(entries))
    }
}

/// Summary written as the evaluation report JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: String,
    pub csls_k: Option<usize>,
    pub ks: Vec<usize>,
    /// Percentages.
    pub precision: PrecisionTable,
    pub n_queries: usize,
    pub n_candidates: usize,
    pub fold: Option<usize>,
    pub seed: Option<u64>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }
}

/// Arithmetic mean of precision across fold reports; counts are averaged
/// and rounded down, fold is cleared.
pub fn mean_eval_reports(reports: &[EvalReport]) -> Result<EvalReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Insufficient("no reports to average".into()))?;
    if reports
        .iter()
        .any(|r| r.ks != first.ks || r.metric != first.metric)
    {
        return Err(Error::Consistency(
            "reports disagree on metric or ks".into(),
        ));
    }
    let n = reports.len() as f64;
    let precision = first
        .ks
        .iter()
        .map(|&k| {
            let sum: f64 = reports
                .iter()
                .map(|r| r.precision.get(k).unwrap_or(0.0))
                .sum();
            (k, sum / n)
        })
        .collect();
    Ok(EvalReport {
        metric: first.metric.clone(),
        csls_k: first.csls_k,
        ks: first.ks.clone(),
        precision: PrecisionTable(precision),
        n_queries: reports.iter().map(|r| r.n_queries).sum::<usize>() / reports.len(),
        n_candidates: reports.iter().map(|r| r.n_candidates).sum::<usize>() / reports.len(),
        fold: None,
        seed: first.seed,
    })
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub metric: Metric,
    pub ks: Vec<usize>,
    pub exec: Exec,
    /// Source-side rows whose mapped vectors define `r_S` instead of the
    /// query batch.
    pub csls_reference: Option<EmbeddingSpace>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            metric: Metric::Csls(Default::default()),
            ks: vec![1, 10, 100],
            exec: Exec::serial(),
            csls_reference: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub eval_set: EvalSet,
    pub results: RankedRetrieval,
    pub report: EvalReport,
}

/// Candidate vocabulary: the target rows, then extra rows with new labels.
pub fn candidate_space(
    target: &EmbeddingSpace,
    extra: Option<&EmbeddingSpace>,
) -> Result<EmbeddingSpace> {
    match extra {
        Some(extra) => target.union(extra),
        None => Ok(target.clone()),
    }
}

/// Maps the held-out sources of `pairs` and ranks the candidate space.
pub fn evaluate(
    model: &AlignmentModel,
    source: &EmbeddingSpace,
    target: &EmbeddingSpace,
    extra_candidates: Option<&EmbeddingSpace>,
    pairs: &[(String, String)],
    options: &EvalOptions,
) -> Result<Evaluation> {
    if pairs.is_empty() {
        return Err(Error::Insufficient("no evaluation pairs".into()));
    }
    if options.ks.is_empty() || options.ks.contains(&0) {
        return Err(Error::Parameter("ks must be non-empty and positive".into()));
    }
    let candidates = candidate_space(target, extra_candidates)?;
    let eval_set = EvalSet::build(&candidates, pairs)?;
    let prepared = align::prepare_target(model, &candidates)?;
    let mapped = align::apply_map(model, source)?;
    let rows = eval_set
        .query_labels
        .iter()
        .map(|l| mapped.require(l))
        .collect::<Result<Vec<_>>>()?;
    let queries = mapped.vectors().select_rows(&rows);

    let k_max = *options.ks.iter().max().unwrap();
    if k_max > prepared.len() {
        return Err(Error::Parameter(format!(
            "k = {k_max} exceeds the {} candidates",
            prepared.len()
        )));
    }
    let results = match (options.metric, &options.csls_reference) {
        (Metric::Csls(params), Some(reference)) => {
            let reference = align::apply_map(model, reference)?;
            retrieval::topk_csls_with_reference(
                &queries,
                Some(reference.vectors()),
                prepared.vectors(),
                k_max,
                params,
                &options.exec,
            )?
        }
        (metric, _) => {
            retrieval::retrieve(&queries, prepared.vectors(), k_max, metric, &options.exec)?
        }
    };
    let precision = retrieval::precision_at_k(&results, &eval_set.gold, &options.ks)?;
    let report = EvalReport {
        metric: options.metric.name().to_owned(),
        csls_k: match options.metric {
            Metric::Csls(p) => Some(p.k()),
            Metric::Cosine => None,
        },
        ks: options.ks.clone(),
        precision: PrecisionTable(precision),
        n_queries: eval_set.len(),
        n_candidates: prepared.len(),
        fold: None,
        seed: None,
    };
    Ok(Evaluation {
        eval_set,
        results,
        report,
    })
}

/// Per-query TSV: label, 1-based rank of the best gold candidate (`NA` when
/// outside the retrieved depth), and a 0/1 hit column per `k`.
pub fn render_query_table(eval: &EvalSet, results: &RankedRetrieval, ks: &[usize]) -> String {
    let mut out = String::from("query_label\trank_of_best_gold");
    for k in ks {
        let _ = write!(out, "\thit@{k}");
    }
    out.push('\n');
    for (q, label) in eval.query_labels.iter().enumerate() {
        let rank = retrieval::rank_of_best_gold(results, q, &eval.gold[q]);
        out.push_str(label);
        match rank {
            Some(r) => {
                let _ = write!(out, "\t{r}");
            }
            None => out.push_str("\tNA"),
        }
        for &k in ks {
            let hit = rank.is_some_and(|r| r <= k);
            let _ = write!(out, "\t{}", u8::from(hit));
        }
        out.push('\n');
    }
    out
}

/// Full rankings as TSV (`query_label, rank, candidate_label, score`),
/// preceded by a `# n_candidates=… k_max=…` line.
pub fn render_rankings(eval: &EvalSet, results: &RankedRetrieval) -> String {
    let mut out = format!(
        "# n_candidates={} k_max={}\nquery_label\trank\tcandidate_label\tscore\n",
        results.n_candidates(),
        results.k_max()
    );
    for (q, label) in eval.query_labels.iter().enumerate() {
        for (r, n) in results.neighbors(q).iter().enumerate() {
            let _ = writeln!(
                out,
                "{label}\t{}\t{}\t{:?}",
                r + 1,
                eval.candidate_labels[n.index],
                n.score
            );
        }
    }
    out
}

/// Rebuilds an evaluation from a rankings TSV and the evaluated pairs.
///
/// Candidates are re-indexed in order of first appearance (rankings first,
/// then gold labels never retrieved). Queries come from `pairs`; every one
/// of them must have a ranking.
pub fn read_rankings(
    path: impl AsRef<Path>,
    pairs: &[(String, String)],
) -> Result<(EvalSet, RankedRetrieval)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut declared_candidates = None;
    let mut candidate_labels: Vec<String> = Vec::new();
    let mut interned: HashMap<String, usize> = HashMap::new();
    let mut intern = |label: &str, labels: &mut Vec<String>| -> usize {
        *interned.entry(label.to_owned()).or_insert_with(|| {
            labels.push(label.to_owned());
            labels.len() - 1
        })
    };
    let mut lists: HashMap<String, Vec<(usize, Neighbor)>> = HashMap::new();
    for (line_no, line) in text.lines().enumerate() {
        if let Some(meta) = line.strip_prefix('#') {
            for field in meta.split_whitespace() {
                if let Some(v) = field.strip_prefix("n_candidates=") {
                    declared_candidates = v.parse::<usize>().ok();
                }
            }
            continue;
        }
        if line.is_empty() || line.starts_with("query_label\t") {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [query, rank, cand, score] = fields[..] else {
            return Err(Error::format(
                path,
                format!("line {}: expected 4 fields", line_no + 1),
            ));
        };
        let rank: usize = rank
            .parse()
            .map_err(|_| Error::format(path, format!("line {}: bad rank", line_no + 1)))?;
        let score: f64 = score
            .parse()
            .map_err(|_| Error::format(path, format!("line {}: bad score", line_no + 1)))?;
        let index = intern(cand, &mut candidate_labels);
        lists
            .entry(query.to_owned())
            .or_default()
            .push((rank, Neighbor { index, score }));
    }
    let mut query_labels: Vec<String> = Vec::new();
    let mut gold: Vec<Vec<usize>> = Vec::new();
    let mut slot: HashMap<String, usize> = HashMap::new();
    for (src, tgt) in pairs {
        let idx = intern(tgt, &mut candidate_labels);
        let q = *slot.entry(src.clone()).or_insert_with(|| {
            query_labels.push(src.clone());
            gold.push(Vec::new());
            query_labels.len() - 1
        });
        if !gold[q].contains(&idx) {
            gold[q].push(idx);
        }
    }
    let mut ranked = Vec::with_capacity(query_labels.len());
    let mut k_max = None;
    for label in &query_labels {
        let mut list = lists
            .remove(label)
            .ok_or_else(|| Error::Lookup(label.clone()))?;
        list.sort_by_key(|e| e.0);
        if list.iter().enumerate().any(|(i, e)| e.0 != i + 1) {
            return Err(Error::Consistency(format!(
                "ranks of `{label}` are not 1..k"
            )));
        }
        match k_max {
            None => k_max = Some(list.len()),
            Some(k) if k != list.len() => {
                return Err(Error::Consistency(format!(
                    "`{label}` has {} neighbours, others {k}",
                    list.len()
                )))
            }
            _ => {}
        }
        ranked.push(list.into_iter().map(|e| e.1).collect::<Vec<_>>());
    }
    let n_candidates = declared_candidates.unwrap_or(0).max(candidate_labels.len());
    let k_max = k_max.unwrap_or(0);
    let results = RankedRetrieval::new(k_max, n_candidates, ranked)?;
    // labels for declared-but-unseen candidates are never needed
    candidate_labels.resize_with(n_candidates, String::new);
    Ok((
        EvalSet {
            query_labels,
            candidate_labels,
            gold,
        },
        results,
    ))
}
