//! Building blocks shared by the single-step subcommands and the pipeline.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use xalign::analysis::{self, BinKind, BinMode, BinnedReport, POLYSEMY_LABELS, TERTILE_LABELS};
use xalign::dictionary::{SplitAssignment, SplitPart};
use xalign::evaluate::EvalSet;
use xalign::{
    load_space, AliasRows, CslsParams, Error, Metric, PcaFit, Preprocessing, RankedRetrieval,
    Relation, Result,
};

use crate::cli::{
    AliasRowsArg, MetricArg, ModeArg, PartArg, PcaFitArg, PreprocessArg, RelationArg,
};

impl From<RelationArg> for Relation {
    fn from(r: RelationArg) -> Self {
        match r {
            RelationArg::Isomorphic => Relation::Isomorphic,
            RelationArg::Unrelated => Relation::Unrelated,
            RelationArg::Hubby => Relation::Hubby,
        }
    }
}

impl From<PreprocessArg> for Preprocessing {
    fn from(p: PreprocessArg) -> Self {
        match p {
            PreprocessArg::None => Preprocessing::None,
            PreprocessArg::Unit => Preprocessing::UnitL2,
            PreprocessArg::CenterUnit => Preprocessing::CenterUnitL2,
        }
    }
}

impl From<PcaFitArg> for PcaFit {
    fn from(p: PcaFitArg) -> Self {
        match p {
            PcaFitArg::TrainPairs => PcaFit::TrainPairs,
            PcaFitArg::AllRows => PcaFit::AllRows,
        }
    }
}

impl From<AliasRowsArg> for AliasRows {
    fn from(a: AliasRowsArg) -> Self {
        match a {
            AliasRowsArg::Repeat => AliasRows::Repeat,
            AliasRowsArg::Average => AliasRows::Average,
        }
    }
}

impl From<PartArg> for SplitPart {
    fn from(p: PartArg) -> Self {
        match p {
            PartArg::Train => SplitPart::Train,
            PartArg::Val => SplitPart::Val,
            PartArg::Test => SplitPart::Test,
        }
    }
}

impl From<ModeArg> for BinMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Concept => BinMode::ConceptLevel,
            ModeArg::PerAlias => BinMode::PerAlias,
        }
    }
}

pub fn metric(kind: MetricArg, csls_k: u64) -> Result<Metric> {
    Ok(match kind {
        MetricArg::Cosine => Metric::Cosine,
        MetricArg::Csls => Metric::Csls(CslsParams::new(csls_k as usize)?),
    })
}

pub fn ks(values: &[u64]) -> Vec<usize> {
    values.iter().map(|&k| k as usize).collect()
}

/// Pairs whose source label (the class id) lies in `part` of fold `fold`.
pub fn select_pairs(
    pairs: &[(String, String)],
    folds: &[SplitAssignment],
    fold: usize,
    part: SplitPart,
) -> Result<Vec<(String, String)>> {
    let assignment = folds
        .iter()
        .find(|f| f.fold_index == fold)
        .ok_or_else(|| Error::Validation(format!("split file has no fold {fold}")))?;
    let keep = assignment.part(part);
    let selected: Vec<_> = pairs
        .iter()
        .filter(|(s, _)| keep.contains(s))
        .cloned()
        .collect();
    if selected.is_empty() {
        return Err(Error::Insufficient(format!(
            "no pairs fall in the {} part of fold {fold}",
            part.name()
        )));
    }
    Ok(selected)
}

/// Reads `label, value` rows; `#` lines and a `label` header are skipped.
pub fn read_values(path: &Path) -> Result<Vec<(String, f64)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_owned(),
        source: e,
    })?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |reason: &str| Error::Format {
            path: path.to_owned(),
            reason: format!("line {}: {reason}", i + 1),
        };
        let (label, value) = line
            .split_once('\t')
            .ok_or_else(|| bad("expected label<TAB>value"))?;
        if label == "label" && value.parse::<f64>().is_err() {
            continue;
        }
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| bad("value is not a number"))?;
        if !value.is_finite() {
            return Err(bad("value is not finite"));
        }
        if !seen.insert(label.to_owned()) {
            return Err(Error::Validation(format!(
                "label `{label}` listed twice in {}",
                path.display()
            )));
        }
        out.push((label.to_owned(), value));
    }
    Ok(out)
}

/// Per-item dispersion of an embedding file with rows labelled `item#j`.
pub fn dispersion_from_vectors(path: &Path) -> Result<Vec<(String, f64)>> {
    let space = load_space(path)?;
    Ok(analysis::grouped_dispersion(&space)?
        .into_iter()
        .map(|r| (r.label, r.value))
        .collect())
}

/// Labels that can be binned: query labels at concept level, gold labels
/// per alias.
fn bin_universe(eval: &EvalSet, mode: BinMode) -> BTreeSet<&str> {
    match mode {
        BinMode::ConceptLevel => eval.query_labels.iter().map(String::as_str).collect(),
        BinMode::PerAlias => (0..eval.len()).flat_map(|q| eval.gold_labels(q)).collect(),
    }
}

/// Tertiles of the values that belong to evaluated items.
pub fn dispersion_report(
    values: &[(String, f64)],
    eval: &EvalSet,
    results: &RankedRetrieval,
    mode: BinMode,
    ks: &[usize],
) -> Result<BinnedReport> {
    let universe = bin_universe(eval, mode);
    let kept: Vec<(String, f64)> = values
        .iter()
        .filter(|(l, _)| universe.contains(l.as_str()))
        .cloned()
        .collect();
    if kept.len() < values.len() {
        log::info!(
            "{} dispersion values name no evaluated item and are ignored",
            values.len() - kept.len()
        );
    }
    let bins = analysis::label_bins(TERTILE_LABELS, analysis::tertile_bins(&kept)?);
    analysis::binned_report(BinKind::DispersionTertile, &bins, results, eval, mode, ks)
}

/// Polysemy bins over gold aliases (per alias) or over queries whose
/// covered aliases all share one bin (concept level).
pub fn polysemy_report(
    table: &BTreeMap<String, u32>,
    eval: &EvalSet,
    results: &RankedRetrieval,
    mode: BinMode,
    ks: &[usize],
) -> Result<BinnedReport> {
    let mut sets: [BTreeSet<String>; 3] = Default::default();
    match mode {
        BinMode::PerAlias => {
            for label in bin_universe(eval, mode) {
                if let Some(&count) = table.get(label) {
                    sets[analysis::polysemy_bin(count)?].insert(label.to_owned());
                }
            }
        }
        BinMode::ConceptLevel => {
            for q in 0..eval.len() {
                let bins = eval
                    .gold_labels(q)
                    .filter_map(|l| table.get(l))
                    .map(|&c| analysis::polysemy_bin(c))
                    .collect::<Result<BTreeSet<usize>>>()?;
                if bins.len() == 1 {
                    let b = *bins.first().unwrap();
                    sets[b].insert(eval.query_labels[q].clone());
                }
            }
        }
    }
    let bins = analysis::label_bins(POLYSEMY_LABELS, sets);
    analysis::binned_report(BinKind::Polysemy, &bins, results, eval, mode, ks)
}
