use std::path::Path;

use xalign::align::{load_model, save_model};
use xalign::analysis::BinnedReport;
use xalign::dictionary::{
    assign_splits, filter_dictionary, read_pairs, read_polysemy, read_raw_dictionary, read_splits,
    render_splits, write_pairs, SplitPart,
};
use xalign::evaluate::{self, read_rankings, render_query_table, render_rankings, EvalOptions};
use xalign::store::vocab_path;
use xalign::synth::{self, SynthConfig};
use xalign::{fit_alignment, load_space, save_space, AlignOptions, Exec, Result, SplitRatios};

use crate::cli::{
    AnalyzeCommon, DispersionArgs, EvalArgs, FitArgs, PolysemyArgs, Selection, SplitArgs, SynthArgs,
};
use crate::manifest::{manifest_path, RunManifest};
use crate::output::{self, suffixed, Outputs};
use crate::stages;

pub fn synth(args: &SynthArgs) -> Result<()> {
    let prefix = &args.out_prefix;
    let src = suffixed(prefix, ".src.emb");
    let tgt = suffixed(prefix, ".tgt.emb");
    let pairs = suffixed(prefix, ".pairs.tsv");
    let config_path = suffixed(prefix, ".config.json");
    let manifest = manifest_path(prefix);

    let mut outputs = Outputs::new(args.force);
    for p in [
        &src,
        &vocab_path(&src),
        &tgt,
        &vocab_path(&tgt),
        &pairs,
        &config_path,
        &manifest,
    ] {
        outputs.claim(p)?;
    }
    let config = SynthConfig {
        n: args.n as usize,
        d_source: args.dim_src as usize,
        d_target: args.dim_tgt as usize,
        noise_sigma: args.noise,
        seed: args.seed,
        relation: args.relation.into(),
    };
    let generated = synth::generate(&config)?;

    output::ensure_parent(&src)?;
    save_space(&generated.source, &src)?;
    save_space(&generated.target, &tgt)?;
    write_pairs(&generated.pairs, &pairs)?;
    let mut json = serde_json::to_string_pretty(&config).expect("config serialises");
    json.push('\n');
    output::write(&config_path, json)?;

    let mut record = RunManifest::new("synth", args);
    record.seed(args.seed);
    output::write(&manifest, record.to_json())
}

pub fn split(args: &SplitArgs) -> Result<()> {
    let pairs_out = args.out.with_extension("pairs.tsv");
    let manifest = manifest_path(&args.out);
    let mut outputs = Outputs::new(args.force);
    outputs.input(&args.dict);
    for p in [&args.out, &pairs_out, &manifest] {
        outputs.claim(p)?;
    }
    let ratios: SplitRatios = args.ratios.parse()?;
    let raw = read_raw_dictionary(&args.dict)?;
    let dictionary = filter_dictionary(&raw, args.min_images, args.min_alias_count);
    log::info!(
        "kept {} of {} classes, {} pairs",
        dictionary.len(),
        raw.len(),
        dictionary.pair_count()
    );
    let folds = assign_splits(&dictionary, ratios, args.seed, args.folds as usize)?;

    output::write(&args.out, render_splits(&dictionary, &folds))?;
    write_pairs(&dictionary.pairs(), &pairs_out)?;

    let mut record = RunManifest::new("split", args);
    record.input(&args.dict)?;
    record.seed(args.seed);
    output::write(&manifest, record.to_json())
}

fn selected_pairs(
    pairs_path: &Path,
    selection: &Selection,
    default_part: SplitPart,
    record: &mut RunManifest,
) -> Result<Vec<(String, String)>> {
    let pairs = read_pairs(pairs_path)?;
    record.input(pairs_path)?;
    match (&selection.split, selection.fold) {
        (Some(split), Some(fold)) => {
            record.input(split)?;
            let folds = read_splits(split)?;
            let part = selection.part.map_or(default_part, Into::into);
            stages::select_pairs(&pairs, &folds, fold as usize, part)
        }
        _ => Ok(pairs),
    }
}

pub fn fit(args: &FitArgs) -> Result<()> {
    let manifest = manifest_path(&args.out);
    let mut outputs = Outputs::new(args.force);
    for p in [&args.src, &args.tgt, &args.pairs] {
        outputs.input(p);
    }
    outputs.claim(&args.out)?;
    outputs.claim(&manifest)?;

    let mut record = RunManifest::new("fit", args);
    let source = load_space(&args.src)?;
    let target = load_space(&args.tgt)?;
    record.space_input(&args.src)?;
    record.space_input(&args.tgt)?;
    let pairs = selected_pairs(&args.pairs, &args.selection, SplitPart::Train, &mut record)?;

    let options = AlignOptions {
        preprocessing: args.preprocess.into(),
        pca_fit: args.pca_fit.into(),
        alias_rows: args.alias_rows.into(),
        force_pca: args.force_pca,
    };
    let model = fit_alignment(&source, &target, &pairs, options)?;
    log::info!(
        "fitted {}→{} alignment in {} dimensions from {} pairs",
        model.source_dim(),
        model.target_dim(),
        model.common_dim,
        pairs.len()
    );
    output::ensure_parent(&args.out)?;
    save_model(&model, &args.out)?;
    output::write(&manifest, record.to_json())
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let manifest = manifest_path(&args.report);
    let mut outputs = Outputs::new(args.force);
    let inputs = [
        Some(&args.map),
        Some(&args.src),
        Some(&args.tgt),
        Some(&args.pairs),
    ];
    for p in inputs.into_iter().flatten().chain(args.candidates.iter()) {
        outputs.input(p);
    }
    for p in [
        Some(&args.report),
        args.queries_tsv.as_ref(),
        args.rankings.as_ref(),
        Some(&manifest),
    ]
    .into_iter()
    .flatten()
    {
        outputs.claim(p)?;
    }
    let metric = stages::metric(args.metric, args.csls_k)?;
    let ks = stages::ks(&args.ks);

    let mut record = RunManifest::new("eval", args);
    let model = load_model(&args.map)?;
    record.input(&args.map)?;
    let source = load_space(&args.src)?;
    record.space_input(&args.src)?;
    let target = load_space(&args.tgt)?;
    record.space_input(&args.tgt)?;
    let extra = match &args.candidates {
        Some(p) => {
            record.space_input(p)?;
            Some(load_space(p)?)
        }
        None => None,
    };
    let csls_reference = match &args.csls_reference {
        Some(p) => {
            record.space_input(p)?;
            Some(load_space(p)?)
        }
        None => None,
    };
    let pairs = selected_pairs(&args.pairs, &args.selection, SplitPart::Test, &mut record)?;
    if let Some(seed) = args.seed {
        record.seed(seed);
    }

    let options = EvalOptions {
        metric,
        ks: ks.clone(),
        exec: Exec::from_env(),
        csls_reference,
    };
    let mut evaluation =
        evaluate::evaluate(&model, &source, &target, extra.as_ref(), &pairs, &options)?;
    evaluation.report.fold = args.selection.fold.map(|f| f as usize);
    evaluation.report.seed = args.seed;

    output::write(&args.report, evaluation.report.to_json())?;
    if let Some(p) = &args.queries_tsv {
        output::write(
            p,
            render_query_table(&evaluation.eval_set, &evaluation.results, &ks),
        )?;
    }
    if let Some(p) = &args.rankings {
        output::write(
            p,
            render_rankings(&evaluation.eval_set, &evaluation.results),
        )?;
    }
    for (k, p) in &evaluation.report.precision.0 {
        println!("P@{k}\t{p:.4}");
    }
    output::write(&manifest, record.to_json())
}

fn analyze(
    name: &str,
    common: &AnalyzeCommon,
    args: &impl serde::Serialize,
    extra_inputs: &[&Path],
    build: impl FnOnce(
        &xalign::evaluate::EvalSet,
        &xalign::RankedRetrieval,
        &mut RunManifest,
    ) -> Result<BinnedReport>,
) -> Result<()> {
    let json_out = common.out.with_extension("json");
    let manifest = manifest_path(&common.out);
    let mut outputs = Outputs::new(common.force);
    for p in [common.rankings.as_path(), common.pairs.as_path()]
        .into_iter()
        .chain(extra_inputs.iter().copied())
    {
        outputs.input(p);
    }
    for p in [&common.out, &json_out, &manifest] {
        outputs.claim(p)?;
    }
    let mut record = RunManifest::new(name, args);
    let pairs = selected_pairs(
        &common.pairs,
        &common.selection,
        SplitPart::Test,
        &mut record,
    )?;
    let (eval, results) = read_rankings(&common.rankings, &pairs)?;
    record.input(&common.rankings)?;
    let report = build(&eval, &results, &mut record)?;

    let table = report.to_tsv();
    output::write(&common.out, &table)?;
    output::write(&json_out, report.to_json())?;
    print!("{table}");
    output::write(&manifest, record.to_json())
}

pub fn dispersion(args: &DispersionArgs) -> Result<()> {
    let common = &args.common;
    let source = args.values.as_deref().or(args.vectors.as_deref());
    analyze(
        "analyze dispersion",
        common,
        args,
        &source.into_iter().collect::<Vec<_>>(),
        |eval, results, record| {
            let values = match (&args.values, &args.vectors) {
                (Some(p), _) => {
                    record.input(p)?;
                    stages::read_values(p)?
                }
                (None, Some(p)) => {
                    record.space_input(p)?;
                    stages::dispersion_from_vectors(p)?
                }
                (None, None) => unreachable!("clap requires --values or --vectors"),
            };
            stages::dispersion_report(
                &values,
                eval,
                results,
                common.mode.into(),
                &stages::ks(&common.ks),
            )
        },
    )
}

pub fn polysemy(args: &PolysemyArgs) -> Result<()> {
    let common = &args.common;
    analyze(
        "analyze polysemy",
        common,
        args,
        &[args.polysemy.as_path()],
        |eval, results, record| {
            let table = read_polysemy(&args.polysemy)?;
            record.input(&args.polysemy)?;
            stages::polysemy_report(
                &table,
                eval,
                results,
                common.mode.into(),
                &stages::ks(&common.ks),
            )
        },
    )
}
