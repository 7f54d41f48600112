//! Exact cosine and CSLS nearest-neighbour retrieval, plus precision@k.
//!
//! Similarities are computed tile by tile as products of row-normalised
//! blocks (`BLOCK_ROWS` anchors × at most `BLOCK_OTHERS` others). The tiling
//! depends only on the input sizes, never on the worker count, so every similarity value,
//! and hence every ranking, is bit-identical for any degree of parallelism.
//! Ties are broken towards the lower candidate index.
//!
//! CSLS scores follow `2·cos(q, t) − r_T(q) − r_S(t)`, where `r_T(q)` is the
//! mean cosine of `q` to its `K` nearest candidates and `r_S(t)` the mean
//! cosine of `t` to its `K` nearest queries.

use std::cmp::Ordering;
use std::num::NonZeroUsize;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::{gemm, Matrix};
use crate::scalar::Scalar;

const BLOCK_ROWS: usize = 256;
const BLOCK_OTHERS: usize = 2048;

/// Environment variable capping the worker count of [`Exec::from_env`].
pub const THREADS_ENV: &str = "XALIGN_THREADS";

/// Degree of parallelism for retrieval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Exec {
    workers: NonZeroUsize,
}

impl Default for Exec {
    fn default() -> Self {
        Exec::serial()
    }
}

impl Exec {
    pub fn serial() -> Self {
        Exec {
            workers: NonZeroUsize::MIN,
        }
    }

    pub fn with_workers(workers: usize) -> Self {
        Exec {
            workers: NonZeroUsize::new(workers).unwrap_or(NonZeroUsize::MIN),
        }
    }

    /// All available cores, capped by `XALIGN_THREADS` when it is set.
    pub fn from_env() -> Self {
        let cores = std::thread::available_parallelism().map_or(1, NonZeroUsize::get);
        let cap = std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&v| v > 0);
        Exec::with_workers(cap.map_or(cores, |c| c.min(cores)))
    }

    pub fn workers(&self) -> usize {
        self.workers.get()
    }

    /// `f(0..n)` collected in order. Tasks run on at most one thread per
    /// available core; results never depend on the thread count.
    fn map<R: Send>(&self, n: usize, f: impl Fn(usize) -> R + Sync + Send) -> Result<Vec<R>> {
        let cores = std::thread::available_parallelism().map_or(1, NonZeroUsize::get);
        let threads = self.workers.get().min(cores).min(n);
        if threads <= 1 {
            return Ok((0..n).map(f).collect());
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Parameter(format!("cannot start worker pool: {e}")))?;
        Ok(pool.install(|| (0..n).into_par_iter().map(f).collect()))
    }
}

/// One retrieved candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub score: f64,
}

/// Ordering by rank: a better neighbour compares as smaller.
#[derive(Debug, Clone, Copy)]
struct Ranked(Neighbor);

impl PartialEq for Ranked {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Ranked {}
impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .score
            .total_cmp(&self.0.score)
            .then(self.0.index.cmp(&other.0.index))
    }
}

/// Bounded best-`k` selection. Admitted entries are buffered and cut back
/// to the best `k` when the buffer doubles; `threshold` is the `k`-th score
/// at the last cut. Candidates of one list must be offered in increasing
/// index order, so an entry that only ties the threshold can be rejected.
struct TopK {
    k: usize,
    entries: Vec<Ranked>,
    floor: f64,
}

impl TopK {
    /// Admits only scores above `floor`.
    fn with_floor(k: usize, floor: f64) -> Self {
        TopK {
            k,
            entries: Vec::new(),
            floor,
        }
    }

    /// Whether the floor is finite, so that filtering can start.
    fn is_seeded(&self) -> bool {
        self.floor > f64::NEG_INFINITY
    }

    #[inline]
    fn threshold(&self) -> f64 {
        self.floor
    }

    #[inline]
    fn offer(&mut self, index: usize, score: f64) {
        if score > self.floor {
            self.entries.push(Ranked(Neighbor { index, score }));
            if self.entries.len() >= 2 * self.k.max(16) {
                self.compact();
            }
        }
    }

    fn compact(&mut self) {
        if self.entries.len() >= self.k {
            self.entries.select_nth_unstable(self.k - 1);
            self.entries.truncate(self.k);
            self.floor = self.entries[self.k - 1].0.score;
        }
    }

    /// The best `k` entries, unordered.
    fn into_best(mut self) -> Vec<Ranked> {
        keep_best(&mut self.entries, self.k);
        self.entries
    }
}

/// Largest `k` values seen, for neighbourhood means.
struct TopValues<T> {
    k: usize,
    values: Vec<T>,
    min_pos: usize,
}

impl<T: Scalar> TopValues<T> {
    fn new(k: usize) -> Self {
        TopValues {
            k,
            values: Vec::with_capacity(k),
            min_pos: 0,
        }
    }

    #[inline]
    fn offer(&mut self, v: T) {
        if self.values.len() < self.k {
            self.values.push(v);
            if self.values.len() == self.k {
                self.refresh_min();
            }
        } else if v > self.values[self.min_pos] {
            self.values[self.min_pos] = v;
            self.refresh_min();
        }
    }

    #[inline]
    fn offer_all(&mut self, values: &[T]) {
        let mut iter = values.iter();
        while self.values.len() < self.k {
            match iter.next() {
                Some(&v) => self.offer(v),
                None => return,
            }
        }
        let mut floor = self.values[self.min_pos];
        for chunk in iter.as_slice().chunks(LANES) {
            if any_above(chunk, floor) {
                for &v in chunk {
                    if v > floor {
                        self.values[self.min_pos] = v;
                        self.refresh_min();
                        floor = self.values[self.min_pos];
                    }
                }
            }
        }
    }

    fn refresh_min(&mut self) {
        let mut pos = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v < self.values[pos] {
                pos = i;
            }
        }
        self.min_pos = pos;
    }

    /// Mean of the kept values, summed in `f64` from largest to smallest.
    fn mean(mut self) -> f64 {
        self.values
            .sort_unstable_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
        let sum: f64 = self.values.iter().map(|v| v.to_f64_lossless()).sum();
        sum / self.values.len() as f64
    }
}

/// Per-query ranked candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedRetrieval {
    k_max: usize,
    n_candidates: usize,
    lists: Vec<Vec<Neighbor>>,
}

impl RankedRetrieval {
    /// Wraps precomputed lists after checking their invariants.
    pub fn new(k_max: usize, n_candidates: usize, lists: Vec<Vec<Neighbor>>) -> Result<Self> {
        let expected = k_max.min(n_candidates);
        for (q, list) in lists.iter().enumerate() {
            if list.len() != expected {
                return Err(Error::Validation(format!(
                    "query {q} has {} neighbours, expected {expected}",
                    list.len()
                )));
            }
            let mut seen = std::collections::HashSet::new();
            for (i, n) in list.iter().enumerate() {
                if n.index >= n_candidates || !seen.insert(n.index) {
                    return Err(Error::Validation(format!(
                        "query {q} lists invalid or repeated candidate {}",
                        n.index
                    )));
                }
                if i > 0 && list[i - 1].score < n.score {
                    return Err(Error::Validation(format!(
                        "query {q} scores are not sorted"
                    )));
                }
            }
        }
        Ok(RankedRetrieval {
            k_max,
            n_candidates,
            lists,
        })
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn n_candidates(&self) -> usize {
        self.n_candidates
    }

    pub fn n_queries(&self) -> usize {
        self.lists.len()
    }

    pub fn neighbors(&self, query: usize) -> &[Neighbor] {
        &self.lists[query]
    }

    pub fn lists(&self) -> &[Vec<Neighbor>] {
        &self.lists
    }

    /// Restriction to a subset of queries, in the given order.
    pub fn subset(&self, queries: &[usize]) -> RankedRetrieval {
        RankedRetrieval {
            k_max: self.k_max,
            n_candidates: self.n_candidates,
            lists: queries.iter().map(|&q| self.lists[q].clone()).collect(),
        }
    }
}

/// CSLS neighbourhood size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CslsParams {
    k: usize,
}

impl Default for CslsParams {
    fn default() -> Self {
        CslsParams { k: 10 }
    }
}

impl CslsParams {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Parameter(
                "CSLS neighbourhood size must be at least 1".into(),
            ));
        }
        Ok(CslsParams { k })
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Cosine,
    Csls(CslsParams),
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::Cosine => "cosine",
            Metric::Csls(_) => "csls",
        }
    }
}

/// Rows scaled to unit L2 norm (norms accumulated in `f64`).
/// Fails on a zero row, reporting its index.
pub fn normalize_rows<T: Scalar>(m: &Matrix<T>) -> Result<Matrix<T>> {
    let mut out = m.clone();
    for i in 0..m.rows() {
        let norm = m
            .row(i)
            .iter()
            .map(|v| {
                let v = v.to_f64_lossless();
                v * v
            })
            .sum::<f64>()
            .sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::Degenerate(format!(
                "row {i} has zero or non-finite norm"
            )));
        }
        out.row_mut(i)
            .iter_mut()
            .for_each(|v| *v = T::from_f64_lossy(v.to_f64_lossless() / norm));
    }
    Ok(out)
}

fn check_pair<T: Scalar>(queries: &Matrix<T>, candidates: &Matrix<T>) -> Result<()> {
    if queries.cols() != candidates.cols() {
        return Err(Error::Shape(format!(
            "queries have dimension {}, candidates {}",
            queries.cols(),
            candidates.cols()
        )));
    }
    if candidates.rows() == 0 {
        return Err(Error::Insufficient("candidate set is empty".into()));
    }
    Ok(())
}

/// Walks the similarity matrix `anchors · othersᵀ` for one block of anchor
/// rows, handing each tile row to `visit(anchor, first_other, sims)`.
fn sweep_block<T: Scalar>(
    anchors: &Matrix<T>,
    others: &Matrix<T>,
    block: usize,
    mut visit: impl FnMut(usize, usize, &[T]),
) {
    let d = anchors.cols();
    let a0 = block * BLOCK_ROWS;
    let a1 = (a0 + BLOCK_ROWS).min(anchors.rows());
    let rows = a1 - a0;
    let mut tile = vec![T::zero(); rows * BLOCK_OTHERS];
    let a = &anchors.as_slice()[a0 * d..a1 * d];
    let mut o0 = 0;
    while o0 < others.rows() {
        let o1 = (o0 + BLOCK_OTHERS).min(others.rows());
        let width = o1 - o0;
        gemm(
            rows,
            d,
            width,
            (a, d, 1),
            (&others.as_slice()[o0 * d..o1 * d], 1, d),
            (&mut tile[..rows * width], width),
        );
        for r in 0..rows {
            visit(a0 + r, o0, &tile[r * width..(r + 1) * width]);
        }
        o0 = o1;
    }
}

fn n_blocks(rows: usize) -> usize {
    rows.div_ceil(BLOCK_ROWS)
}

/// Top-`k` candidates per query by cosine similarity.
pub fn topk_cosine<T: Scalar>(
    queries: &Matrix<T>,
    candidates: &Matrix<T>,
    k: usize,
    exec: &Exec,
) -> Result<RankedRetrieval> {
    check_pair(queries, candidates)?;
    check_k(k, candidates.rows())?;
    let q = normalize_rows(queries)?;
    let c = normalize_rows(candidates)?;
    ranked_sweep(&q, &c, k, None, exec)
}

fn check_k(k: usize, candidates: usize) -> Result<()> {
    if k == 0 || k > candidates {
        return Err(Error::Parameter(format!(
            "k = {k} must lie in 1..={candidates}"
        )));
    }
    Ok(())
}

fn mean_topk_normalized<T: Scalar>(
    anchors: &Matrix<T>,
    others: &Matrix<T>,
    k: usize,
    exec: &Exec,
) -> Result<Vec<f64>> {
    let blocks = exec.map(n_blocks(anchors.rows()), |b| {
        let start = b * BLOCK_ROWS;
        let mut tops: Vec<TopValues<T>> = (start..(start + BLOCK_ROWS).min(anchors.rows()))
            .map(|_| TopValues::new(k))
            .collect();
        sweep_block(anchors, others, b, |row, _, sims| {
            tops[row - start].offer_all(sims)
        });
        tops.into_iter().map(TopValues::mean).collect::<Vec<_>>()
    })?;
    Ok(blocks.into_iter().flatten().collect())
}

/// Mean cosine of each anchor row to its `k` most similar rows of `others`.
pub fn mean_topk_similarity<T: Scalar>(
    anchors: &Matrix<T>,
    others: &Matrix<T>,
    k: usize,
    exec: &Exec,
) -> Result<Vec<f64>> {
    check_pair(anchors, others)?;
    if k == 0 || k > others.rows() {
        return Err(Error::Parameter(format!(
            "neighbourhood size {k} must lie in 1..={}",
            others.rows()
        )));
    }
    mean_topk_normalized(&normalize_rows(anchors)?, &normalize_rows(others)?, k, exec)
}

/// Top-`k` candidates per query by CSLS, with `r_S` computed over the
/// query batch itself.
pub fn topk_csls<T: Scalar>(
    queries: &Matrix<T>,
    candidates: &Matrix<T>,
    k: usize,
    params: CslsParams,
    exec: &Exec,
) -> Result<RankedRetrieval> {
    topk_csls_with_reference(queries, None, candidates, k, params, exec)
}

/// [`topk_csls`] with `r_S` computed against `reference` (a batch of mapped
/// source vectors) instead of the queries. If that batch has fewer than `K`
/// rows, the candidate neighbourhood shrinks to the whole batch.
pub fn topk_csls_with_reference<T: Scalar>(
    queries: &Matrix<T>,
    reference: Option<&Matrix<T>>,
    candidates: &Matrix<T>,
    k: usize,
    params: CslsParams,
    exec: &Exec,
) -> Result<RankedRetrieval> {
    check_pair(queries, candidates)?;
    check_k(k, candidates.rows())?;
    if params.k > candidates.rows() {
        return Err(Error::Parameter(format!(
            "CSLS neighbourhood {} exceeds {} candidates",
            params.k,
            candidates.rows()
        )));
    }
    let q = normalize_rows(queries)?;
    let c = normalize_rows(candidates)?;
    let reference = match reference {
        Some(r) => {
            check_pair(r, candidates)?;
            Some(normalize_rows(r)?)
        }
        None => None,
    };
    let reference_rows = reference.as_ref().map_or(q.rows(), Matrix::rows);
    if reference_rows == 0 {
        return Err(Error::Insufficient("CSLS reference batch is empty".into()));
    }
    let k_source = params.k.min(reference_rows);
    if k_source < params.k {
        log::warn!("CSLS reference batch has {reference_rows} rows; r_S uses K = {k_source}");
    }
    let plan = CslsPlan {
        k_target: params.k,
        k_source,
        reference: reference.as_ref(),
    };
    ranked_sweep(&q, &c, k, Some(plan), exec)
}

/// Lanes tested together before falling back to per-element admission.
const LANES: usize = 16;
/// Rows per group when bounding column neighbourhoods.
const GROUP: usize = 16;
/// Upper bound on one chunk of buffered similarities.
const CHUNK_BYTES: usize = 32 << 20;

struct CslsPlan<'a, T> {
    k_target: usize,
    k_source: usize,
    /// Rows for `r_S`; the queries when absent.
    reference: Option<&'a Matrix<T>>,
}

/// Whether any value exceeds `floor`. No early exit, so it vectorises.
#[inline]
fn any_above<T: PartialOrd + Copy>(values: &[T], floor: T) -> bool {
    values.iter().fold(false, |a, &v| a | (v > floor))
}

/// Candidate chunk width. It depends only on the number of anchor rows, so
/// the tiling, and every similarity value, is fixed for a given input.
fn chunk_width<T>(anchor_rows: usize) -> usize {
    let per_column = anchor_rows.max(1) * std::mem::size_of::<T>();
    (CHUNK_BYTES / per_column).clamp(LANES, BLOCK_OTHERS) / LANES * LANES
}

/// `buf[r·width + j] = anchors[r] · others[j]` in `BLOCK_ROWS`-row tiles.
fn fill_chunk<T: Scalar>(anchors: &Matrix<T>, others: &[T], width: usize, buf: &mut [T]) {
    let d = anchors.cols();
    for a0 in (0..anchors.rows()).step_by(BLOCK_ROWS) {
        let a1 = (a0 + BLOCK_ROWS).min(anchors.rows());
        gemm(
            a1 - a0,
            d,
            width,
            (&anchors.as_slice()[a0 * d..a1 * d], d, 1),
            (others, 1, d),
            (&mut buf[a0 * width..a1 * width], width),
        );
    }
}

fn mean_of_largest<T: Scalar>(values: &mut [T], k: usize) -> f64 {
    values.sort_unstable_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
    values[..k].iter().map(|v| v.to_f64_lossless()).sum::<f64>() / k as f64
}

/// Mean of the `k` largest entries of each column of a `rows × width`
/// block. The `k`-th largest of the row-group maxima bounds each column's
/// `k`-th largest value from below, so only entries at or above it are kept.
fn column_top_means<T: Scalar>(sims: &[T], rows: usize, width: usize, k: usize) -> Vec<f64> {
    let low = T::from_f64_lossy(f64::NEG_INFINITY);
    let sims = &sims[..rows * width];
    let groups = rows.div_ceil(GROUP);
    let bound: Vec<T> = if groups >= k {
        let mut maxima = vec![low; groups * width];
        for (group, out) in sims
            .chunks(GROUP * width)
            .zip(maxima.chunks_exact_mut(width))
        {
            for row in group.chunks_exact(width) {
                for (m, &v) in out.iter_mut().zip(row) {
                    *m = if v > *m { v } else { *m };
                }
            }
        }
        let mut column = vec![low; groups];
        (0..width)
            .map(|j| {
                for (g, slot) in column.iter_mut().enumerate() {
                    *slot = maxima[g * width + j];
                }
                *column
                    .select_nth_unstable_by(k - 1, |a, b| {
                        b.partial_cmp(a).unwrap_or(Ordering::Equal)
                    })
                    .1
            })
            .collect()
    } else {
        vec![low; width]
    };
    let mut kept: Vec<Vec<T>> = vec![Vec::new(); width];
    for row in sims.chunks_exact(width) {
        for (ci, (chunk, floor)) in row.chunks(LANES).zip(bound.chunks(LANES)).enumerate() {
            if chunk
                .iter()
                .zip(floor)
                .fold(false, |a, (v, f)| a | (v >= f))
            {
                for (i, (&v, &f)) in chunk.iter().zip(floor).enumerate() {
                    if v >= f {
                        kept[ci * LANES + i].push(v);
                    }
                }
            }
        }
    }
    kept.iter_mut().map(|v| mean_of_largest(v, k)).collect()
}

/// Relative slack of the storage-precision prefilter; admitted entries are
/// re-scored exactly in `f64`.
const FILTER_SLACK: f64 = 1e-5;

/// Ranking scores of one candidate chunk: `2·cos − r_S` under CSLS, the
/// cosine otherwise.
struct Scorer<'a, T> {
    first: usize,
    r_source: Option<&'a [f64]>,
    half_r: Option<Vec<T>>,
}

impl<'a, T: Scalar> Scorer<'a, T> {
    fn new(first: usize, r_source: Option<&'a [f64]>) -> Self {
        let half_r = r_source.map(|r| r.iter().map(|&v| T::from_f64_lossy(0.5 * v)).collect());
        Scorer {
            first,
            r_source,
            half_r,
        }
    }

    #[inline]
    fn score(&self, j: usize, s: T) -> f64 {
        match self.r_source {
            Some(r) => 2.0 * s.to_f64_lossless() - r[j],
            None => s.to_f64_lossless(),
        }
    }

    /// Storage-precision proxy for half the score (the score itself under
    /// cosine), within a few ulps.
    #[inline]
    fn proxy(&self, j: usize, s: T) -> T {
        match &self.half_r {
            Some(h) => s - h[j],
            None => s,
        }
    }

    /// Fills a list that holds fewer than `k` candidates. The `k`-th largest
    /// proxy bounds this chunk's `k`-th score, so only entries near or above
    /// it are scored exactly.
    fn rank_seed(&self, best: &mut TopK, sims: &[T], scratch: &mut Vec<T>, seed: &mut Vec<Ranked>) {
        let k = best.k;
        seed.clear();
        seed.append(&mut best.entries);
        let floor = if sims.len() > k {
            scratch.clear();
            scratch.extend(sims.iter().enumerate().map(|(j, &s)| self.proxy(j, s)));
            let tau = *scratch
                .select_nth_unstable_by(k - 1, |a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal))
                .1;
            let tau = tau.to_f64_lossless();
            T::from_f64_lossy(tau - FILTER_SLACK * (1.0 + tau.abs()))
        } else {
            T::from_f64_lossy(f64::NEG_INFINITY)
        };
        for (j, &s) in sims.iter().enumerate() {
            if self.proxy(j, s) >= floor {
                seed.push(Ranked(Neighbor {
                    index: self.first + j,
                    score: self.score(j, s),
                }));
            }
        }
        best.entries.append(seed);
        best.compact();
    }

    /// Offers entries that may beat the current `k`-th score. The test
    /// `s − r_S/2 > threshold/2 − slack` runs at storage precision and
    /// admits a superset of the exact condition.
    fn rank_filtered(&self, best: &mut TopK, sims: &[T]) {
        let scale = if self.half_r.is_some() { 0.5 } else { 1.0 };
        let cut = |t: f64| T::from_f64_lossy(scale * t - FILTER_SLACK * (1.0 + t.abs()));
        let mut floor = cut(best.threshold());
        for (li, lane) in sims.chunks(LANES).enumerate() {
            let base = li * LANES;
            let hit = match &self.half_r {
                Some(h) => lane
                    .iter()
                    .zip(&h[base..])
                    .fold(false, |a, (&s, &h)| a | (s - h > floor)),
                None => any_above(lane, floor),
            };
            if hit {
                for (j, &s) in lane.iter().enumerate() {
                    if self.proxy(base + j, s) > floor {
                        best.offer(self.first + base + j, self.score(base + j, s));
                    }
                }
                floor = cut(best.threshold());
            }
        }
    }
}

/// Truncates to the `k` best entries, in no particular order.
fn keep_best(entries: &mut Vec<Ranked>, k: usize) {
    if entries.len() > k {
        entries.select_nth_unstable(k - 1);
        entries.truncate(k);
    }
}

/// Per-query state of one sweep task.
struct QueryState<T> {
    best: TopK,
    hood: Option<TopValues<T>>,
}

struct Sweep<'a, T> {
    q: &'a Matrix<T>,
    c: &'a Matrix<T>,
    k: usize,
    plan: Option<CslsPlan<'a, T>>,
    width: usize,
}

impl<T: Scalar> Sweep<'_, T> {
    fn chunks(&self) -> usize {
        self.c.rows().div_ceil(self.width)
    }

    /// Processes candidate chunks `range` in order. With `floors`, each
    /// query starts from a known lower bound on its final `k`-th score,
    /// taken from a chunk that precedes `range`.
    fn run(&self, range: std::ops::Range<usize>, floors: Option<&[f64]>) -> Vec<QueryState<T>> {
        let (q, c, width) = (self.q, self.c, self.width);
        let d = q.cols();
        let reference = self.plan.as_ref().and_then(|p| p.reference);
        let mut state: Vec<QueryState<T>> = (0..q.rows())
            .map(|i| QueryState {
                best: TopK::with_floor(self.k, floors.map_or(f64::NEG_INFINITY, |f| f[i])),
                hood: self.plan.as_ref().map(|p| TopValues::new(p.k_target)),
            })
            .collect();
        let mut buf = vec![T::zero(); q.rows() * width];
        let mut ref_buf = vec![T::zero(); reference.map_or(0, |r| r.rows() * width)];
        let mut seed = Vec::with_capacity(width + self.k);
        let mut scratch = Vec::with_capacity(width);
        for chunk in range {
            let o0 = chunk * width;
            let o1 = (o0 + width).min(c.rows());
            let w = o1 - o0;
            let others = &c.as_slice()[o0 * d..o1 * d];
            fill_chunk(q, others, w, &mut buf);
            let r_source = self.plan.as_ref().map(|p| match reference {
                Some(r) => {
                    fill_chunk(r, others, w, &mut ref_buf);
                    column_top_means(&ref_buf, r.rows(), w, p.k_source)
                }
                None => column_top_means(&buf, q.rows(), w, p.k_source),
            });
            let scorer = Scorer::new(o0, r_source.as_deref());
            for (row, sims) in buf[..q.rows() * w].chunks_exact(w).enumerate() {
                let st = &mut state[row];
                if let Some(hood) = st.hood.as_mut() {
                    hood.offer_all(sims);
                }
                if st.best.is_seeded() {
                    scorer.rank_filtered(&mut st.best, sims);
                } else {
                    scorer.rank_seed(&mut st.best, sims, &mut scratch, &mut seed);
                }
            }
        }
        state
    }
}

/// Exact top-`k` retrieval by cosine, or by CSLS under `plan`.
///
/// Candidates are cut into chunks. Within a chunk every query (and
/// reference) row is seen, so `r_S` is final for the chunk's columns before
/// its scores are ranked. The first chunk is ranked up front and its `k`-th
/// scores seed every task's admission floor; the remaining chunks are split
/// into contiguous task ranges. Per-query best lists and `r_T`
/// neighbourhoods are merged under total orders, which makes the result
/// independent of the task split.
fn ranked_sweep<T: Scalar>(
    q: &Matrix<T>,
    c: &Matrix<T>,
    k: usize,
    plan: Option<CslsPlan<'_, T>>,
    exec: &Exec,
) -> Result<RankedRetrieval> {
    let anchor_rows = plan
        .as_ref()
        .and_then(|p| p.reference)
        .map_or(q.rows(), |r| r.rows().max(q.rows()));
    ranked_sweep_with_width(q, c, k, plan, exec, chunk_width::<T>(anchor_rows))
}

fn ranked_sweep_with_width<T: Scalar>(
    q: &Matrix<T>,
    c: &Matrix<T>,
    k: usize,
    plan: Option<CslsPlan<'_, T>>,
    exec: &Exec,
    width: usize,
) -> Result<RankedRetrieval> {
    let sweep = Sweep {
        q,
        c,
        k,
        plan,
        width,
    };
    let chunks = sweep.chunks();
    let head = sweep.run(0..1, None);
    let floors: Vec<f64> = head.iter().map(|st| st.best.threshold()).collect();
    let rest = chunks - 1;
    let tasks = exec.workers().min(rest);
    let parts = exec.map(tasks, |t| {
        let range = (1 + t * rest / tasks)..(1 + (t + 1) * rest / tasks);
        sweep.run(range, Some(&floors))
    })?;

    let mut merged: Vec<(Vec<Ranked>, Option<TopValues<T>>)> = head
        .into_iter()
        .map(|st| (st.best.into_best(), st.hood))
        .collect();
    for part in parts {
        for (acc, st) in merged.iter_mut().zip(part) {
            acc.0.extend(st.best.into_best());
            if let (Some(hood), Some(part)) = (acc.1.as_mut(), st.hood) {
                hood.offer_all(&part.values);
            }
        }
    }
    let lists = merged
        .into_iter()
        .map(|(mut best, hood)| {
            keep_best(&mut best, k);
            best.sort_unstable();
            let r_target = hood.map_or(0.0, TopValues::mean);
            best.into_iter()
                .map(|r| Neighbor {
                    index: r.0.index,
                    score: r.0.score - r_target,
                })
                .collect()
        })
        .collect();
    Ok(RankedRetrieval {
        k_max: k,
        n_candidates: c.rows(),
        lists,
    })
}

/// Retrieval under `metric`.
pub fn retrieve<T: Scalar>(
    queries: &Matrix<T>,
    candidates: &Matrix<T>,
    k: usize,
    metric: Metric,
    exec: &Exec,
) -> Result<RankedRetrieval> {
    match metric {
        Metric::Cosine => topk_cosine(queries, candidates, k, exec),
        Metric::Csls(params) => topk_csls(queries, candidates, k, params, exec),
    }
}

/// Number of queries whose top-`k` contains each candidate.
pub fn neighbor_indegree(results: &RankedRetrieval, k: usize) -> Result<Vec<usize>> {
    if k > results.k_max {
        return Err(Error::Parameter(format!(
            "k = {k} exceeds retrieved depth {}",
            results.k_max
        )));
    }
    let mut counts = vec![0; results.n_candidates];
    for list in &results.lists {
        for n in list.iter().take(k) {
            counts[n.index] += 1;
        }
    }
    Ok(counts)
}

fn check_gold(results: &RankedRetrieval, gold: &[Vec<usize>]) -> Result<()> {
    if gold.len() != results.n_queries() {
        return Err(Error::Consistency(format!(
            "{} gold sets for {} queries",
            gold.len(),
            results.n_queries()
        )));
    }
    for (q, g) in gold.iter().enumerate() {
        if g.is_empty() {
            return Err(Error::Validation(format!(
                "query {q} has an empty gold set"
            )));
        }
        if let Some(&bad) = g.iter().find(|&&i| i >= results.n_candidates) {
            return Err(Error::Validation(format!(
                "query {q} gold index {bad} is outside {} candidates",
                results.n_candidates
            )));
        }
    }
    Ok(())
}

fn check_depth(results: &RankedRetrieval, k: usize) -> Result<()> {
    if k == 0 || k > results.k_max {
        return Err(Error::Parameter(format!(
            "k = {k} must lie in 1..={}",
            results.k_max
        )));
    }
    Ok(())
}

/// Whether any gold index appears in the top `k` of query `q`.
pub fn hit_at(results: &RankedRetrieval, q: usize, gold: &[usize], k: usize) -> bool {
    results.lists[q]
        .iter()
        .take(k)
        .any(|n| gold.contains(&n.index))
}

/// Percentage of queries whose top-`k` contains at least one gold index,
/// for each `k` in `ks`.
pub fn precision_at_k(
    results: &RankedRetrieval,
    gold: &[Vec<usize>],
    ks: &[usize],
) -> Result<Vec<(usize, f64)>> {
    check_gold(results, gold)?;
    ks.iter()
        .map(|&k| {
            check_depth(results, k)?;
            let hits = (0..gold.len())
                .filter(|&q| hit_at(results, q, &gold[q], k))
                .count();
            let pct = if gold.is_empty() {
                0.0
            } else {
                100.0 * hits as f64 / gold.len() as f64
            };
            Ok((k, pct))
        })
        .collect()
}

/// Per query, the fraction of its gold indices found in the top `k`.
pub fn per_alias_precision(
    results: &RankedRetrieval,
    gold: &[Vec<usize>],
    k: usize,
) -> Result<Vec<f64>> {
    check_gold(results, gold)?;
    check_depth(results, k)?;
    Ok(gold
        .iter()
        .enumerate()
        .map(|(q, g)| {
            let top = &results.lists[q][..k.min(results.lists[q].len())];
            let found = g
                .iter()
                .filter(|i| top.iter().any(|n| n.index == **i))
                .count();
            found as f64 / g.len() as f64
        })
        .collect())
}

/// 1-based rank of the best-placed gold index, if it was retrieved.
pub fn rank_of_best_gold(results: &RankedRetrieval, q: usize, gold: &[usize]) -> Option<usize> {
    results.lists[q]
        .iter()
        .position(|n| gold.contains(&n.index))
        .map(|p| p + 1)
}
