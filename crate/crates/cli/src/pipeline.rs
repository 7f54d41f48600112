//! `run`: split → fit → eval → analyze for every fold, then fold means.
//!
//! The config is a flat text file of `key = value` lines (`#` starts a
//! comment line). Relative paths in the file are resolved against the
//! file's directory; `--set` overrides are resolved against the working
//! directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;
use xalign::align::save_model;
use xalign::analysis::{mean_binned_reports, BinMode, BinnedReport};
use xalign::dictionary::{
    assign_splits, filter_dictionary, read_pairs, read_polysemy, read_raw_dictionary, write_pairs,
    write_splits,
};
use xalign::evaluate::{
    self, mean_eval_reports, render_query_table, render_rankings, EvalOptions, EvalReport,
};
use xalign::{
    fit_alignment, load_space, AlignOptions, BimodalDictionary, EmbeddingSpace, Error, Exec,
    Metric, Result, SplitRatios,
};

use crate::cli::{AliasRowsArg, MetricArg, ModeArg, PcaFitArg, PreprocessArg, RunArgs};
use crate::manifest::RunManifest;
use crate::output;
use crate::stages;

const PATH_KEYS: [&str; 10] = [
    "src",
    "tgt",
    "pairs",
    "dict",
    "candidates",
    "csls_reference",
    "polysemy",
    "dispersion_values",
    "dispersion_vectors",
    "out",
];

const DEFAULTS: [(&str, &str); 14] = [
    ("folds", "5"),
    ("seed", "0"),
    ("ratios", "0.7,0.15,0.15"),
    ("min_images", "100"),
    ("min_alias_count", "5"),
    ("preprocess", "unit"),
    ("pca_fit", "train-pairs"),
    ("alias_rows", "repeat"),
    ("force_pca", "false"),
    ("metric", "csls"),
    ("csls_k", "10"),
    ("ks", "1,10,100"),
    ("dispersion_mode", "concept"),
    ("polysemy_mode", "per-alias"),
];

/// Parses `key = value` lines.
pub fn parse_config(text: &str, origin: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Format {
            path: origin.to_owned(),
            reason: format!("line {}: expected key = value", i + 1),
        })?;
        let key = key.trim().replace('-', "_");
        if out.insert(key.clone(), value.trim().to_owned()).is_some() {
            return Err(Error::Format {
                path: origin.to_owned(),
                reason: format!("line {}: key `{key}` set twice", i + 1),
            });
        }
    }
    Ok(out)
}

fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Parameter(format!("override `{s}` is not KEY=VALUE")))?;
    Ok((k.trim().replace('-', "_"), v.trim().to_owned()))
}

fn value_enum<T: clap::ValueEnum>(key: &str, raw: &str) -> Result<T> {
    T::from_str(raw, false).map_err(|_| Error::Parameter(format!("{key}: unknown value `{raw}`")))
}

fn number<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::Parameter(format!("{key}: `{raw}` is not a valid number")))
}

/// Fully resolved pipeline settings.
#[derive(Debug, Clone)]
pub struct Config {
    pub raw: BTreeMap<String, String>,
    src: PathBuf,
    tgt: PathBuf,
    pairs: Option<PathBuf>,
    dict: Option<PathBuf>,
    candidates: Option<PathBuf>,
    csls_reference: Option<PathBuf>,
    polysemy: Option<PathBuf>,
    dispersion_values: Option<PathBuf>,
    dispersion_vectors: Option<PathBuf>,
    out: PathBuf,
    folds: usize,
    seed: u64,
    ratios: SplitRatios,
    min_images: u64,
    min_alias_count: u64,
    align: AlignOptions,
    metric: Metric,
    ks: Vec<usize>,
    dispersion_mode: BinMode,
    polysemy_mode: BinMode,
}

impl Config {
    /// Merges file, overrides and defaults, and validates every value.
    pub fn resolve(args: &RunArgs) -> Result<Config> {
        let mut raw = BTreeMap::new();
        if let Some(path) = &args.config {
            let text = fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            let base = path.parent().unwrap_or(Path::new(""));
            for (k, v) in parse_config(&text, path)? {
                let v = if PATH_KEYS.contains(&k.as_str()) && Path::new(&v).is_relative() {
                    base.join(&v).display().to_string()
                } else {
                    v
                };
                raw.insert(k, v);
            }
        }
        for s in &args.set {
            let (k, v) = parse_override(s)?;
            raw.insert(k, v);
        }
        for (k, v) in DEFAULTS {
            raw.entry(k.to_owned()).or_insert_with(|| v.to_owned());
        }
        Config::from_raw(raw)
    }

    fn from_raw(raw: BTreeMap<String, String>) -> Result<Config> {
        if let Some(k) = raw
            .keys()
            .find(|k| !PATH_KEYS.contains(&k.as_str()) && !DEFAULTS.iter().any(|d| d.0 == *k))
        {
            return Err(Error::Parameter(format!("unknown config key `{k}`")));
        }
        let get = |k: &str| raw.get(k).map(String::as_str);
        let path = |k: &str| get(k).map(PathBuf::from);
        let required = |k: &str| {
            path(k).ok_or_else(|| Error::Parameter(format!("config key `{k}` is required")))
        };
        let at = |k: &str| get(k).expect("defaulted");

        let (pairs, dict) = (path("pairs"), path("dict"));
        if pairs.is_some() == dict.is_some() {
            return Err(Error::Parameter(
                "exactly one of `pairs` and `dict` must be set".into(),
            ));
        }
        if path("dispersion_values").is_some() && path("dispersion_vectors").is_some() {
            return Err(Error::Parameter(
                "set at most one of `dispersion_values` and `dispersion_vectors`".into(),
            ));
        }
        let folds: usize = number("folds", at("folds"))?;
        if folds == 0 {
            return Err(Error::Parameter("folds must be at least 1".into()));
        }
        let csls_k: usize = number("csls_k", at("csls_k"))?;
        let metric_kind: MetricArg = value_enum("metric", at("metric"))?;
        let metric = stages::metric(metric_kind, csls_k as u64)?;
        let ks = at("ks")
            .split(',')
            .map(|k| number::<usize>("ks", k.trim()))
            .collect::<Result<Vec<_>>>()?;
        if ks.is_empty() || ks.contains(&0) {
            return Err(Error::Parameter("ks must be positive".into()));
        }
        let force_pca = match at("force_pca") {
            "true" => true,
            "false" => false,
            other => {
                return Err(Error::Parameter(format!(
                    "force_pca: `{other}` is not a boolean"
                )))
            }
        };
        let align = AlignOptions {
            preprocessing: value_enum::<PreprocessArg>("preprocess", at("preprocess"))?.into(),
            pca_fit: value_enum::<PcaFitArg>("pca_fit", at("pca_fit"))?.into(),
            alias_rows: value_enum::<AliasRowsArg>("alias_rows", at("alias_rows"))?.into(),
            force_pca,
        };
        Ok(Config {
            src: required("src")?,
            tgt: required("tgt")?,
            pairs,
            dict,
            candidates: path("candidates"),
            csls_reference: path("csls_reference"),
            polysemy: path("polysemy"),
            dispersion_values: path("dispersion_values"),
            dispersion_vectors: path("dispersion_vectors"),
            out: required("out")?,
            folds,
            seed: number("seed", at("seed"))?,
            ratios: at("ratios").parse()?,
            min_images: number("min_images", at("min_images"))?,
            min_alias_count: number("min_alias_count", at("min_alias_count"))?,
            align,
            metric,
            ks,
            dispersion_mode: value_enum::<ModeArg>("dispersion_mode", at("dispersion_mode"))?
                .into(),
            polysemy_mode: value_enum::<ModeArg>("polysemy_mode", at("polysemy_mode"))?.into(),
            raw,
        })
    }

    fn input_files(&self) -> Vec<&Path> {
        [
            Some(&self.src),
            Some(&self.tgt),
            self.pairs.as_ref(),
            self.dict.as_ref(),
            self.candidates.as_ref(),
            self.csls_reference.as_ref(),
            self.polysemy.as_ref(),
            self.dispersion_values.as_ref(),
            self.dispersion_vectors.as_ref(),
        ]
        .into_iter()
        .flatten()
        .map(PathBuf::as_path)
        .collect()
    }

    fn space_files(&self) -> Vec<&Path> {
        [
            Some(&self.src),
            Some(&self.tgt),
            self.candidates.as_ref(),
            self.csls_reference.as_ref(),
            self.dispersion_vectors.as_ref(),
        ]
        .into_iter()
        .flatten()
        .map(PathBuf::as_path)
        .collect()
    }
}

struct Inputs {
    source: EmbeddingSpace,
    target: EmbeddingSpace,
    extra: Option<EmbeddingSpace>,
    reference: Option<EmbeddingSpace>,
    dictionary: BimodalDictionary,
    polysemy: Option<BTreeMap<String, u32>>,
    dispersion: Option<Vec<(String, f64)>>,
}

fn load_inputs(config: &Config) -> Result<Inputs> {
    let optional = |p: &Option<PathBuf>| p.as_ref().map(load_space).transpose();
    let dictionary = match (&config.pairs, &config.dict) {
        (Some(p), _) => BimodalDictionary::from_pairs(&read_pairs(p)?)?,
        (None, Some(d)) => filter_dictionary(
            &read_raw_dictionary(d)?,
            config.min_images,
            config.min_alias_count,
        ),
        (None, None) => unreachable!("validated in Config::from_raw"),
    };
    let dispersion = match (&config.dispersion_values, &config.dispersion_vectors) {
        (Some(p), _) => Some(stages::read_values(p)?),
        (None, Some(p)) => Some(stages::dispersion_from_vectors(p)?),
        (None, None) => None,
    };
    Ok(Inputs {
        source: load_space(&config.src)?,
        target: load_space(&config.tgt)?,
        extra: optional(&config.candidates)?,
        reference: optional(&config.csls_reference)?,
        dictionary,
        polysemy: config.polysemy.as_ref().map(read_polysemy).transpose()?,
        dispersion,
    })
}

/// Output directory must be absent or empty unless `force` is set, and may
/// never contain an input.
fn prepare_out_dir(dir: &Path, force: bool, inputs: &[&Path]) -> Result<()> {
    let io = |e| Error::Io {
        path: dir.to_owned(),
        source: e,
    };
    if dir.exists() {
        let canonical = dir.canonicalize().map_err(io)?;
        for p in inputs {
            if p.canonicalize().is_ok_and(|p| p.starts_with(&canonical)) {
                return Err(Error::Validation(format!(
                    "input {} lies inside the output directory {}",
                    p.display(),
                    dir.display()
                )));
            }
        }
        let occupied = fs::read_dir(dir).map_err(io)?.next().is_some();
        if occupied && !force {
            return Err(Error::Validation(format!(
                "refusing to write into non-empty {} (pass --force)",
                dir.display()
            )));
        }
        let marker = dir.join("PARTIAL");
        if marker.exists() {
            fs::remove_file(&marker).map_err(|e| Error::Io {
                path: marker.clone(),
                source: e,
            })?;
        }
    }
    fs::create_dir_all(dir).map_err(io)
}

fn write_binned(dir: &Path, stem: &str, report: &BinnedReport) -> Result<()> {
    output::write(&dir.join(format!("{stem}.tsv")), report.to_tsv())?;
    output::write(&dir.join(format!("{stem}.json")), report.to_json())
}

/// Human-readable mean table: one row per k.
fn eval_table(report: &EvalReport) -> String {
    let mut out = String::from("k\tprecision\n");
    for (k, p) in &report.precision.0 {
        out.push_str(&format!("{k}\t{p:?}\n"));
    }
    out
}

pub fn run(args: &RunArgs) -> Result<()> {
    let config = Config::resolve(args)?;
    // fail fast: every input must exist before anything is computed or written
    for p in config.input_files() {
        if !p.is_file() {
            return Err(Error::Io {
                path: p.to_owned(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "input file not found"),
            });
        }
    }
    let mut record = RunManifest::with_flags(
        "run",
        config
            .raw
            .iter()
            .map(|(k, v)| (k.clone(), Value::String(v.clone())))
            .collect(),
    );
    let spaces = config.space_files();
    for p in config.input_files() {
        if spaces.contains(&p) {
            record.space_input(p)?;
        } else {
            record.input(p)?;
        }
    }
    record.seed(config.seed);
    let inputs = load_inputs(&config)?;
    prepare_out_dir(&config.out, args.force, &config.input_files())?;

    match execute(&config, &inputs) {
        Ok(()) => output::write(&config.out.join("manifest.json"), record.to_json()),
        Err((stage, err)) => {
            let marker = format!("stage: {stage}\nerror: {err}\n");
            if let Err(e) = output::write(&config.out.join("PARTIAL"), marker) {
                log::error!("could not write the partial-output marker: {e}");
            }
            Err(err)
        }
    }
}

type StageResult<T> = std::result::Result<T, (String, Error)>;

fn at_stage<T>(stage: &str, r: Result<T>) -> StageResult<T> {
    r.map_err(|e| (stage.to_owned(), e))
}

fn execute(config: &Config, inputs: &Inputs) -> StageResult<()> {
    let out = &config.out;
    let folds = at_stage(
        "split",
        assign_splits(&inputs.dictionary, config.ratios, config.seed, config.folds),
    )?;
    at_stage(
        "split",
        write_splits(&inputs.dictionary, &folds, out.join("splits.tsv")),
    )?;
    at_stage(
        "split",
        write_pairs(&inputs.dictionary.pairs(), out.join("pairs.tsv")),
    )?;

    let exec = Exec::from_env();
    let mut eval_reports = Vec::new();
    let mut dispersion_reports = Vec::new();
    let mut polysemy_reports = Vec::new();
    for fold in &folds {
        let i = fold.fold_index;
        let dir = out.join(format!("fold_{i}"));
        let stage = |name: &str| format!("{name} (fold {i})");
        log::info!(
            "fold {i}: {} train / {} test classes",
            fold.train.len(),
            fold.test.len()
        );

        let train = inputs.dictionary.pairs_for(&fold.train);
        let test = inputs.dictionary.pairs_for(&fold.test);
        let model = at_stage(
            &stage("fit"),
            fit_alignment(&inputs.source, &inputs.target, &train, config.align),
        )?;
        at_stage(&stage("fit"), output::ensure_parent(&dir.join("map.map")))?;
        at_stage(&stage("fit"), save_model(&model, dir.join("map.map")))?;

        let options = EvalOptions {
            metric: config.metric,
            ks: config.ks.clone(),
            exec,
            csls_reference: inputs.reference.clone(),
        };
        let mut evaluation = at_stage(
            &stage("eval"),
            evaluate::evaluate(
                &model,
                &inputs.source,
                &inputs.target,
                inputs.extra.as_ref(),
                &test,
                &options,
            ),
        )?;
        evaluation.report.fold = Some(i);
        evaluation.report.seed = Some(config.seed);
        let (set, results) = (&evaluation.eval_set, &evaluation.results);
        at_stage(
            &stage("eval"),
            output::write(&dir.join("eval.json"), evaluation.report.to_json()),
        )?;
        at_stage(
            &stage("eval"),
            output::write(
                &dir.join("queries.tsv"),
                render_query_table(set, results, &config.ks),
            ),
        )?;
        at_stage(
            &stage("eval"),
            output::write(&dir.join("rankings.tsv"), render_rankings(set, results)),
        )?;

        if let Some(values) = &inputs.dispersion {
            let report = at_stage(
                &stage("analyze dispersion"),
                stages::dispersion_report(values, set, results, config.dispersion_mode, &config.ks),
            )?;
            at_stage(
                &stage("analyze dispersion"),
                write_binned(&dir, "dispersion", &report),
            )?;
            dispersion_reports.push(report);
        }
        if let Some(table) = &inputs.polysemy {
            let report = at_stage(
                &stage("analyze polysemy"),
                stages::polysemy_report(table, set, results, config.polysemy_mode, &config.ks),
            )?;
            at_stage(
                &stage("analyze polysemy"),
                write_binned(&dir, "polysemy", &report),
            )?;
            polysemy_reports.push(report);
        }
        eval_reports.push(evaluation.report);
    }

    let mean = at_stage("mean", mean_eval_reports(&eval_reports))?;
    at_stage(
        "mean",
        output::write(&out.join("mean_eval.json"), mean.to_json()),
    )?;
    at_stage(
        "mean",
        output::write(&out.join("mean_eval.tsv"), eval_table(&mean)),
    )?;
    if !dispersion_reports.is_empty() {
        let mean = at_stage("mean", mean_binned_reports(&dispersion_reports))?;
        at_stage("mean", write_binned(out, "mean_dispersion", &mean))?;
    }
    if !polysemy_reports.is_empty() {
        let mean = at_stage("mean", mean_binned_reports(&polysemy_reports))?;
        at_stage("mean", write_binned(out, "mean_polysemy", &mean))?;
    }
    for (k, p) in &mean.precision.0 {
        println!("mean P@{k}\t{p:.4}");
    }
    Ok(())
}
