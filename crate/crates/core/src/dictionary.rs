//! Bimodal dictionary: concept classes, their aliases, filtering and
//! train/validation/test splits.
//!
//! Splits are drawn over classes, so every alias of a class lands in the
//! same part.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptClass {
    pub class_id: String,
    pub aliases: Vec<String>,
    pub image_count: u64,
    /// One entry per alias, same order as `aliases`.
    pub alias_corpus_counts: Vec<u64>,
    /// Number of meanings per alias, when the lexical resource covers it.
    pub polysemy_counts: Vec<Option<u32>>,
}

impl ConceptClass {
    pub fn new(
        class_id: impl Into<String>,
        image_count: u64,
        aliases: Vec<(String, u64)>,
    ) -> Result<Self> {
        let class_id = class_id.into();
        if class_id.is_empty() {
            return Err(Error::Validation("empty class id".into()));
        }
        let mut seen = BTreeSet::new();
        for (alias, _) in &aliases {
            if alias.is_empty() {
                return Err(Error::Validation(format!(
                    "class `{class_id}` has an empty alias"
                )));
            }
            if !seen.insert(alias.as_str()) {
                return Err(Error::Validation(format!(
                    "alias `{alias}` repeated in class `{class_id}`"
                )));
            }
        }
        let polysemy_counts = vec![None; aliases.len()];
        let (aliases, alias_corpus_counts) = aliases.into_iter().unzip();
        Ok(ConceptClass {
            class_id,
            aliases,
            image_count,
            alias_corpus_counts,
            polysemy_counts,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BimodalDictionary {
    classes: Vec<ConceptClass>,
    pair_count: usize,
}

impl BimodalDictionary {
    pub fn new(classes: Vec<ConceptClass>) -> Result<Self> {
        let mut ids = BTreeSet::new();
        for c in &classes {
            if !ids.insert(c.class_id.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate class `{}`",
                    c.class_id
                )));
            }
            if c.aliases.len() != c.alias_corpus_counts.len()
                || c.aliases.len() != c.polysemy_counts.len()
            {
                return Err(Error::Consistency(format!(
                    "class `{}` has mismatched per-alias columns",
                    c.class_id
                )));
            }
        }
        let pair_count = classes.iter().map(|c| c.aliases.len()).sum();
        Ok(BimodalDictionary {
            classes,
            pair_count,
        })
    }

    /// One class per distinct source label, aliases = its target labels.
    /// Counts are unknown and left at zero.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let mut order: Vec<String> = Vec::new();
        let mut grouped: HashMap<&str, Vec<(String, u64)>> = HashMap::new();
        for (src, tgt) in pairs {
            let entry = grouped.entry(src.as_str()).or_insert_with(|| {
                order.push(src.clone());
                Vec::new()
            });
            entry.push((tgt.clone(), 0));
        }
        let classes = order
            .iter()
            .map(|id| ConceptClass::new(id.clone(), 0, grouped.remove(id.as_str()).unwrap()))
            .collect::<Result<Vec<_>>>()?;
        BimodalDictionary::new(classes)
    }

    pub fn classes(&self) -> &[ConceptClass] {
        &self.classes
    }

    pub fn pair_count(&self) -> usize {
        self.pair_count
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn class_ids(&self) -> impl Iterator<Item = &str> {
        self.classes.iter().map(|c| c.class_id.as_str())
    }

    /// All (class_id, alias) pairs in dictionary order.
    pub fn pairs(&self) -> Vec<(String, String)> {
        self.pairs_where(|_| true)
    }

    /// Pairs whose class is in `classes`.
    pub fn pairs_for(&self, classes: &BTreeSet<String>) -> Vec<(String, String)> {
        self.pairs_where(|id| classes.contains(id))
    }

    fn pairs_where(&self, keep: impl Fn(&str) -> bool) -> Vec<(String, String)> {
        self.classes
            .iter()
            .filter(|c| keep(&c.class_id))
            .flat_map(|c| {
                c.aliases
                    .iter()
                    .map(move |a| (c.class_id.clone(), a.clone()))
            })
            .collect()
    }

    /// Fills `polysemy_counts` from an alias → meaning-count table. Aliases
    /// absent from the table stay uncovered.
    pub fn attach_polysemy(&mut self, table: &BTreeMap<String, u32>) {
        for c in &mut self.classes {
            for (alias, slot) in c.aliases.iter().zip(c.polysemy_counts.iter_mut()) {
                *slot = table.get(alias).copied();
            }
        }
    }
}

/// Keeps classes with strictly more than `min_images` images, keeps aliases
/// seen at least `min_alias_count` times, and drops classes left without
/// aliases.
pub fn filter_dictionary(
    raw: &[ConceptClass],
    min_images: u64,
    min_alias_count: u64,
) -> BimodalDictionary {
    let mut kept = Vec::new();
    for class in raw.iter().filter(|c| c.image_count > min_images) {
        let mut c = class.clone();
        let keep: Vec<bool> = c
            .alias_corpus_counts
            .iter()
            .map(|&n| n >= min_alias_count)
            .collect();
        let mut it = keep.iter();
        c.aliases.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        c.alias_corpus_counts.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        c.polysemy_counts.retain(|_| *it.next().unwrap());
        if !c.aliases.is_empty() {
            kept.push(c);
        }
    }
    if kept.is_empty() {
        log::warn!("dictionary is empty after filtering (min_images={min_images}, min_alias_count={min_alias_count})");
    }
    // class ids were unique in the input, and filtering cannot break that
    let pair_count = kept.iter().map(|c| c.aliases.len()).sum();
    BimodalDictionary {
        classes: kept,
        pair_count,
    }
}

/// Train/validation/test fractions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.70,
            val: 0.15,
            test: 0.15,
        }
    }
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let r = SplitRatios { train, val, test };
        r.validate()?;
        Ok(r)
    }

    fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Parameter(format!(
                "split ratios must be non-negative: {self}"
            )));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Parameter(format!(
                "split ratios must sum to 1: {self}"
            )));
        }
        Ok(())
    }

    /// `(floor(train·n), floor(val·n), remainder)`.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        // the nudge keeps exact products such as 0.7·100 from flooring to 69
        let cut = |r: f64| ((r * n as f64) + 1e-9).floor() as usize;
        let train = cut(self.train).min(n);
        let val = cut(self.val).min(n - train);
        (train, val, n - train - val)
    }
}

impl fmt::Display for SplitRatios {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.train, self.val, self.test)
    }
}

impl FromStr for SplitRatios {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parameter(format!("bad split ratios `{s}`: {e}")))?;
        match parts[..] {
            [a, b, c] => SplitRatios::new(a, b, c),
            _ => Err(Error::Parameter(format!(
                "expected three split ratios, got `{s}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SplitPart {
    Train,
    Val,
    Test,
}

impl SplitPart {
    pub fn name(self) -> &'static str {
        match self {
            SplitPart::Train => "train",
            SplitPart::Val => "val",
            SplitPart::Test => "test",
        }
    }
}

impl FromStr for SplitPart {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitPart::Train),
            "val" => Ok(SplitPart::Val),
            "test" => Ok(SplitPart::Test),
            other => Err(Error::Validation(format!("unknown split `{other}`"))),
        }
    }
}

/// One fold's partition of the class ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    pub fold_index: usize,
    pub fold_seed: u64,
    pub train: BTreeSet<String>,
    pub val: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

impl SplitAssignment {
    pub fn part(&self, part: SplitPart) -> &BTreeSet<String> {
        match part {
            SplitPart::Train => &self.train,
            SplitPart::Val => &self.val,
            SplitPart::Test => &self.test,
        }
    }

    pub fn part_of(&self, class_id: &str) -> Option<SplitPart> {
        [SplitPart::Train, SplitPart::Val, SplitPart::Test]
            .into_iter()
            .find(|&p| self.part(p).contains(class_id))
    }
}

/// Draws `folds` independent splits.
///
/// Fold `f` sorts the class ids, shuffles them with `rng::stream_rng(seed, f)`
/// and cuts the shuffled list into train, val and test by
/// [`SplitRatios::sizes`].
pub fn assign_splits(
    dictionary: &BimodalDictionary,
    ratios: SplitRatios,
    seed: u64,
    folds: usize,
) -> Result<Vec<SplitAssignment>> {
    ratios.validate()?;
    if folds == 0 {
        return Err(Error::Parameter("at least one fold is required".into()));
    }
    let n = dictionary.len();
    if n < 3 {
        return Err(Error::Insufficient(format!(
            "need at least 3 classes to split, dictionary has {n}"
        )));
    }
    let mut sorted: Vec<&str> = dictionary.class_ids().collect();
    sorted.sort_unstable();
    let (n_train, n_val, _) = ratios.sizes(n);

    Ok((0..folds)
        .map(|fold| {
            let mut ids = sorted.clone();
            rng::shuffle(&mut rng::stream_rng(seed, fold as u64), &mut ids);
            let take = |r: &[&str]| r.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
            SplitAssignment {
                fold_index: fold,
                fold_seed: seed,
                train: take(&ids[..n_train]),
                val: take(&ids[n_train..n_train + n_val]),
                test: take(&ids[n_train + n_val..]),
            }
        })
        .collect())
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_count<T: FromStr>(path: &Path, line: usize, field: &str) -> Result<T> {
    field.trim().parse().map_err(|_| {
        Error::format(
            path,
            format!("line {line}: `{field}` is not a non-negative integer"),
        )
    })
}

/// Reads the raw dictionary TSV `class_id, image_count, alias,
/// alias_corpus_count`, one row per class-alias pair. A leading header row
/// starting with `class_id` is skipped.
pub fn read_raw_dictionary(path: impl AsRef<Path>) -> Result<Vec<ConceptClass>> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut order: Vec<String> = Vec::new();
    let mut grouped: HashMap<String, (u64, Vec<(String, u64)>)> = HashMap::new();
    for (line_no, line) in data_lines(&text) {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.first() == Some(&"class_id") {
            continue;
        }
        let [class_id, images, alias, count] = fields[..] else {
            return Err(Error::format(
                path,
                format!(
                    "line {line_no}: expected 4 tab-separated fields, got {}",
                    fields.len()
                ),
            ));
        };
        let images: u64 = parse_count(path, line_no, images)?;
        let count: u64 = parse_count(path, line_no, count)?;
        let entry = grouped.entry(class_id.to_owned()).or_insert_with(|| {
            order.push(class_id.to_owned());
            (images, Vec::new())
        });
        if entry.0 != images {
            return Err(Error::Consistency(format!(
                "class `{class_id}` lists image counts {} and {images}",
                entry.0
            )));
        }
        entry.1.push((alias.to_owned(), count));
    }
    order
        .into_iter()
        .map(|id| {
            let (images, aliases) = grouped.remove(&id).unwrap();
            ConceptClass::new(id, images, aliases)
        })
        .collect()
}

/// Writes a dictionary in the raw TSV layout (with header).
pub fn write_raw_dictionary(dictionary: &BimodalDictionary, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("class_id\timage_count\talias\talias_corpus_count\n");
    for c in dictionary.classes() {
        for (alias, count) in c.aliases.iter().zip(&c.alias_corpus_counts) {
            out.push_str(&format!(
                "{}\t{}\t{alias}\t{count}\n",
                c.class_id, c.image_count
            ));
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads `alias, meaning_count` rows. Counts must be at least 1.
pub fn read_polysemy(path: impl AsRef<Path>) -> Result<BTreeMap<String, u32>> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut table = BTreeMap::new();
    for (line_no, line) in data_lines(&text) {
        let Some((alias, count)) = line.split_once('\t') else {
            return Err(Error::format(
                path,
                format!("line {line_no}: expected alias<TAB>count"),
            ));
        };
        if alias == "alias" && count.parse::<u32>().is_err() {
            continue;
        }
        let count: u32 = parse_count(path, line_no, count)?;
        if count < 1 {
            return Err(Error::Validation(format!(
                "{}: line {line_no}: alias `{alias}` has meaning count 0",
                path.display()
            )));
        }
        if table.insert(alias.to_owned(), count).is_some() {
            return Err(Error::Validation(format!(
                "alias `{alias}` listed twice in {}",
                path.display()
            )));
        }
    }
    Ok(table)
}

/// Reads `source_label, target_label` rows.
pub fn read_pairs(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut pairs = Vec::new();
    for (line_no, line) in data_lines(&text) {
        let fields: Vec<&str> = line.split('\t').collect();
        let [src, tgt] = fields[..] else {
            return Err(Error::format(
                path,
                format!(
                    "line {line_no}: expected 2 tab-separated fields, got {}",
                    fields.len()
                ),
            ));
        };
        if src.is_empty() || tgt.is_empty() {
            return Err(Error::format(path, format!("line {line_no}: empty label")));
        }
        pairs.push((src.to_owned(), tgt.to_owned()));
    }
    Ok(pairs)
}

pub fn write_pairs(pairs: &[(String, String)], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for (s, t) in pairs {
        out.push_str(s);
        out.push('\t');
        out.push_str(t);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Renders folds as `class_id, fold_index, split` rows: fold by fold, and
/// within a fold in dictionary order.
pub fn render_splits(dictionary: &BimodalDictionary, folds: &[SplitAssignment]) -> String {
    let mut out = String::new();
    for fold in folds {
        for id in dictionary.class_ids() {
            if let Some(part) = fold.part_of(id) {
                out.push_str(&format!("{id}\t{}\t{}\n", fold.fold_index, part.name()));
            }
        }
    }
    out
}

pub fn write_splits(
    dictionary: &BimodalDictionary,
    folds: &[SplitAssignment],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, render_splits(dictionary, folds)).map_err(|e| Error::io(path, e))
}

/// Parses a split TSV back into assignments, ordered by fold index.
/// The fold seed is not stored in the file and is reported as 0.
pub fn read_splits(path: impl AsRef<Path>) -> Result<Vec<SplitAssignment>> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut folds: BTreeMap<usize, SplitAssignment> = BTreeMap::new();
    for (line_no, line) in data_lines(&text) {
        let fields: Vec<&str> = line.split('\t').collect();
        let [id, fold, part] = fields[..] else {
            return Err(Error::format(
                path,
                format!("line {line_no}: expected 3 fields"),
            ));
        };
        let fold: usize = parse_count(path, line_no, fold)?;
        let part: SplitPart = part.parse()?;
        let entry = folds.entry(fold).or_insert_with(|| SplitAssignment {
            fold_index: fold,
            fold_seed: 0,
            train: BTreeSet::new(),
            val: BTreeSet::new(),
            test: BTreeSet::new(),
        });
        if entry.part_of(id).is_some() {
            return Err(Error::Validation(format!(
                "class `{id}` assigned twice in fold {fold}"
            )));
        }
        match part {
            SplitPart::Train => entry.train.insert(id.to_owned()),
            SplitPart::Val => entry.val.insert(id.to_owned()),
            SplitPart::Test => entry.test.insert(id.to_owned()),
        };
    }
    Ok(folds.into_values().collect())
}
