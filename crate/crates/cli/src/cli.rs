use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(
    name = "xalign",
    version,
    about = "Fit supervised orthogonal alignments between embedding spaces and score cross-space retrieval",
    after_help = "Worker count for retrieval is capped by the XALIGN_THREADS environment variable."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic pair of spaces with known ground truth.
    Synth(SynthArgs),
    /// Filter a raw dictionary and draw seeded train/val/test folds.
    Split(SplitArgs),
    /// Fit preprocessing, PCA and the orthogonal map from training pairs.
    Fit(FitArgs),
    /// Rank candidates for held-out queries and report precision@k.
    Eval(EvalArgs),
    /// Break an evaluation down by dispersion tertiles or polysemy bins.
    Analyze {
        #[command(subcommand)]
        kind: AnalyzeKind,
    },
    /// Run split, fit, eval and analyze for every fold from a config file.
    Run(RunArgs),
    /// Re-execute the run recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeKind {
    Dispersion(DispersionArgs),
    Polysemy(PolysemyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RelationArg {
    Isomorphic,
    Unrelated,
    Hubby,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PreprocessArg {
    None,
    Unit,
    CenterUnit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PcaFitArg {
    TrainPairs,
    AllRows,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AliasRowsArg {
    Repeat,
    Average,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricArg {
    Cosine,
    Csls,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartArg {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    Concept,
    PerAlias,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub relation: RelationArg,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub dim_src: u64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub dim_tgt: u64,
    /// Standard deviation of the per-coordinate Gaussian noise.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Writes PREFIX.src.emb, PREFIX.tgt.emb (with vocab sidecars),
    /// PREFIX.pairs.tsv and PREFIX.config.json.
    #[arg(long)]
    pub out_prefix: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub force: bool,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct SplitArgs {
    /// Raw dictionary TSV: class_id, image_count, alias, alias_corpus_count.
    #[arg(long)]
    pub dict: PathBuf,
    #[arg(long, default_value = "0.7,0.15,0.15")]
    pub ratios: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    pub folds: u64,
    /// Classes need strictly more images than this.
    #[arg(long, default_value_t = 100)]
    pub min_images: u64,
    /// Aliases need at least this many corpus occurrences.
    #[arg(long, default_value_t = 5)]
    pub min_alias_count: u64,
    /// Split TSV; the filtered pairs go next to it as OUT.pairs.tsv.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub force: bool,
}

/// Restricts a pairs file to the classes of one fold part.
#[derive(Debug, Args, Serialize, Clone)]
#[serde(rename_all = "kebab-case")]
pub struct Selection {
    /// Split TSV produced by `split`.
    #[arg(long, requires = "fold")]
    pub split: Option<PathBuf>,
    #[arg(long, requires = "split")]
    pub fold: Option<u64>,
    /// Fold part to keep (default: train for fit, test for eval).
    #[arg(long, value_enum, requires = "split")]
    pub part: Option<PartArg>,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct FitArgs {
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long)]
    pub tgt: PathBuf,
    #[arg(long)]
    pub pairs: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub selection: Selection,
    #[arg(long, value_enum, default_value = "unit")]
    pub preprocess: PreprocessArg,
    #[arg(long, value_enum, default_value = "train-pairs")]
    pub pca_fit: PcaFitArg,
    #[arg(long, value_enum, default_value = "repeat")]
    pub alias_rows: AliasRowsArg,
    /// Request PCA even when both dimensions agree (ignored with a warning).
    #[arg(long)]
    pub force_pca: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub force: bool,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct EvalArgs {
    #[arg(long)]
    pub map: PathBuf,
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long)]
    pub tgt: PathBuf,
    /// Extra candidate vocabulary in the target space, merged after the
    /// target rows.
    #[arg(long)]
    pub candidates: Option<PathBuf>,
    #[arg(long)]
    pub pairs: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub selection: Selection,
    #[arg(long, value_enum, default_value = "csls")]
    pub metric: MetricArg,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    pub csls_k: u64,
    #[arg(long = "k", value_delimiter = ',', default_value = "1,10,100",
          value_parser = clap::value_parser!(u64).range(1..))]
    #[serde(rename = "k", serialize_with = "comma_list")]
    pub ks: Vec<u64>,
    /// Source-space rows whose mapped vectors define the CSLS source
    /// neighbourhood instead of the query batch.
    #[arg(long)]
    pub csls_reference: Option<PathBuf>,
    /// Seed recorded in the report.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub report: PathBuf,
    /// Per-query TSV: label, rank of best gold, hit@k columns.
    #[arg(long)]
    pub queries_tsv: Option<PathBuf>,
    /// Full rankings TSV, the input of `analyze`.
    #[arg(long)]
    pub rankings: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub force: bool,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct AnalyzeCommon {
    #[arg(long, value_enum, default_value = "concept")]
    pub mode: ModeArg,
    /// Rankings TSV written by `eval --rankings`.
    #[arg(long)]
    pub rankings: PathBuf,
    /// The pairs that were evaluated.
    #[arg(long)]
    pub pairs: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub selection: Selection,
    #[arg(long = "k", value_delimiter = ',', default_value = "1,10,100",
          value_parser = clap::value_parser!(u64).range(1..))]
    #[serde(rename = "k", serialize_with = "comma_list")]
    pub ks: Vec<u64>,
    /// Report TSV; the JSON twin is written with a .json extension.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub force: bool,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct DispersionArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: AnalyzeCommon,
    /// Precomputed dispersion TSV: label, value.
    #[arg(long, conflicts_with = "vectors", required_unless_present = "vectors")]
    pub values: Option<PathBuf>,
    /// Embedding file whose rows are labelled `item#j`; dispersion is taken
    /// per item.
    #[arg(long)]
    pub vectors: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct PolysemyArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: AnalyzeCommon,
    /// Alias → meaning-count TSV.
    #[arg(long)]
    pub polysemy: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Flat `key = value` config file.
    #[arg(long, required_unless_present = "set")]
    pub config: Option<PathBuf>,
    /// Override one config key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub force: bool,
}

fn comma_list<S: serde::Serializer>(v: &[u64], s: S) -> Result<S::Ok, S::Error> {
    let joined: Vec<String> = v.iter().map(u64::to_string).collect();
    s.serialize_str(&joined.join(","))
}
