use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_xalign");

fn xalign(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn synth(dir: &Path, prefix: &str, n: &str, noise: &str) {
    let out = xalign(
        dir,
        &[
            "synth",
            "--relation",
            "isomorphic",
            "--n",
            n,
            "--dim-src",
            "16",
            "--dim-tgt",
            "16",
            "--noise",
            noise,
            "--seed",
            "11",
            "--out-prefix",
            prefix,
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

/// Every file below `root`, sorted, relative to `root`.
fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_owned()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_owned());
            }
        }
    }
    out.sort();
    out
}

fn same_tree(a: &Path, b: &Path) {
    let fa = files_under(a);
    assert_eq!(fa, files_under(b));
    for f in fa {
        assert_eq!(
            fs::read(a.join(&f)).unwrap(),
            fs::read(b.join(&f)).unwrap(),
            "{}",
            f.display()
        );
    }
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let out = xalign(p, &["eval", "--src", "s.emb"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--map"));
    assert_eq!(code(&xalign(p, &["frobnicate"])), 1);
    assert_eq!(code(&xalign(p, &[])), 1);
    let k0 = xalign(
        p,
        &[
            "eval", "--map", "m", "--src", "s", "--tgt", "t", "--pairs", "p", "--report", "r",
            "--metric", "csls", "--csls-k", "0",
        ],
    );
    assert_eq!(code(&k0), 1);
    assert_eq!(code(&xalign(p, &["--help"])), 0);
    assert_eq!(code(&xalign(p, &["--version"])), 0);
    assert!(files_under(p).is_empty(), "usage errors write nothing");
}

#[test]
fn fit_and_eval_write_outputs_with_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    synth(p, "d/s", "200", "0");
    let fit = xalign(
        p,
        &[
            "fit",
            "--src",
            "d/s.src.emb",
            "--tgt",
            "d/s.tgt.emb",
            "--pairs",
            "d/s.pairs.tsv",
            "--out",
            "m.map",
        ],
    );
    assert_eq!(code(&fit), 0);
    assert!(p.join("m.map").is_file());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(p.join("m.map.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "fit");
    assert_eq!(manifest["flags"]["preprocess"], "unit");
    assert_eq!(
        manifest["inputs"]["d/s.src.emb"].as_str().unwrap().len(),
        64
    );

    let eval = xalign(
        p,
        &[
            "eval",
            "--map",
            "m.map",
            "--src",
            "d/s.src.emb",
            "--tgt",
            "d/s.tgt.emb",
            "--pairs",
            "d/s.pairs.tsv",
            "--report",
            "r.json",
            "--k",
            "1,10",
            "--queries-tsv",
            "q.tsv",
        ],
    );
    assert_eq!(code(&eval), 0, "{}", String::from_utf8_lossy(&eval.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(p.join("r.json")).unwrap()).unwrap();
    assert_eq!(report["metric"], "csls");
    assert_eq!(report["csls_k"], 10);
    assert_eq!(report["precision"]["1"], 100.0);
    assert_eq!(report["n_queries"], 200);
    assert!(fs::read_to_string(p.join("q.tsv"))
        .unwrap()
        .starts_with("query_label\trank_of_best_gold\thit@1\thit@10\n"));
}

#[test]
fn outputs_are_write_once() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    synth(p, "s", "50", "0");
    let before = fs::read(p.join("s.src.emb")).unwrap();
    let again = xalign(
        p,
        &[
            "synth",
            "--relation",
            "unrelated",
            "--n",
            "50",
            "--dim-src",
            "4",
            "--dim-tgt",
            "4",
            "--out-prefix",
            "s",
        ],
    );
    assert_eq!(code(&again), 2);
    assert_eq!(fs::read(p.join("s.src.emb")).unwrap(), before);
    let forced = xalign(
        p,
        &[
            "synth",
            "--relation",
            "unrelated",
            "--n",
            "50",
            "--dim-src",
            "4",
            "--dim-tgt",
            "4",
            "--out-prefix",
            "s",
            "--force",
        ],
    );
    assert_eq!(code(&forced), 0);
    assert_ne!(fs::read(p.join("s.src.emb")).unwrap(), before);
    let clobber = xalign(
        p,
        &[
            "fit",
            "--src",
            "s.src.emb",
            "--tgt",
            "s.tgt.emb",
            "--pairs",
            "s.pairs.tsv",
            "--out",
            "s.pairs.tsv",
            "--force",
        ],
    );
    assert_eq!(code(&clobber), 2, "an input is never an output");
}

#[test]
fn malformed_inputs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    synth(p, "s", "30", "0");
    let fit = |src: &str| {
        code(&xalign(
            p,
            &[
                "fit",
                "--src",
                src,
                "--tgt",
                "s.tgt.emb",
                "--pairs",
                "s.pairs.tsv",
                "--out",
                &format!("{src}.map"),
            ],
        ))
    };
    let mut bytes = fs::read(p.join("s.src.emb")).unwrap();
    bytes[..4].copy_from_slice(b"XXXX");
    fs::write(p.join("bad.emb"), &bytes).unwrap();
    fs::copy(p.join("s.src.vocab.tsv"), p.join("bad.vocab.tsv")).unwrap();
    assert_eq!(fit("bad.emb"), 2);

    fs::copy(p.join("s.src.emb"), p.join("short.emb")).unwrap();
    let vocab = fs::read_to_string(p.join("s.src.vocab.tsv")).unwrap();
    let fewer: String = vocab.lines().skip(1).map(|l| format!("{l}\n")).collect();
    fs::write(p.join("short.vocab.tsv"), fewer).unwrap();
    assert_eq!(fit("short.emb"), 2);

    assert_eq!(fit("absent.emb"), 2);
    assert!(!p.join("bad.emb.map").exists());
}

#[test]
fn rank_deficient_fit_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let out = xalign(
        p,
        &[
            "synth",
            "--relation",
            "isomorphic",
            "--n",
            "20",
            "--dim-src",
            "8",
            "--dim-tgt",
            "8",
            "--out-prefix",
            "s",
        ],
    );
    assert_eq!(code(&out), 0);
    // a 16-dimensional source whose rows span only a plane cannot be
    // reduced to 8 components
    let mut bytes = b"EMB1".to_vec();
    bytes.extend(20u32.to_le_bytes());
    bytes.extend(16u32.to_le_bytes());
    for i in 0..20 {
        for j in 0..16 {
            let v = match j {
                0 => 1.0 + i as f32,
                1 => (i * i % 7) as f32 - 3.0,
                _ => 0.0f32,
            };
            bytes.extend(v.to_le_bytes());
        }
    }
    fs::write(p.join("flat.emb"), bytes).unwrap();
    fs::copy(p.join("s.src.vocab.tsv"), p.join("flat.vocab.tsv")).unwrap();
    let fit = xalign(
        p,
        &[
            "fit",
            "--src",
            "flat.emb",
            "--tgt",
            "s.tgt.emb",
            "--pairs",
            "s.pairs.tsv",
            "--out",
            "m.map",
        ],
    );
    assert_eq!(code(&fit), 3, "{}", String::from_utf8_lossy(&fit.stderr));
    assert!(!p.join("m.map").exists());
}

fn write_config(p: &Path, out: &str, extra: &str) -> PathBuf {
    let path = p.join(format!("{out}.conf"));
    fs::write(
        &path,
        format!(
            "# synthetic end-to-end\nsrc = d/s.src.emb\ntgt = d/s.tgt.emb\npairs = d/s.pairs.tsv\nout = {out}\nfolds = 5\nseed = 42\n{extra}"
        ),
    )
    .unwrap();
    path
}

#[test]
fn pipeline_recovers_noise_free_isomorphism() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    synth(p, "d/s", "2000", "0");
    write_config(p, "run", "");
    let out = xalign(p, &["run", "--config", "run.conf"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let mean: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(p.join("run/mean_eval.json")).unwrap()).unwrap();
    assert_eq!(mean["precision"]["1"], 100.0);
    for i in 0..5 {
        assert!(p.join(format!("run/fold_{i}/eval.json")).is_file());
    }
    assert!(!p.join("run/PARTIAL").exists());
}

#[test]
fn pipeline_is_byte_reproducible_and_replayable() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    synth(p, "d/s", "300", "0.3");
    fs::write(
        p.join("poly.tsv"),
        (0..300)
            .step_by(3)
            .map(|i| format!("c{i:05}\t{}\n", 1 + i % 5))
            .collect::<String>(),
    )
    .unwrap();
    fs::write(
        p.join("disp.tsv"),
        (0..300)
            .map(|i| format!("c{i:05}\t{}\n", (i * 37 % 101) as f64 / 101.0))
            .collect::<String>(),
    )
    .unwrap();
    let extra = "polysemy = poly.tsv\ndispersion_values = disp.tsv\n";
    write_config(p, "a", extra);
    write_config(p, "b", extra);
    let run = |conf: &str, threads: &str| {
        let out = Command::new(BIN)
            .args(["run", "--config", conf])
            .env("XALIGN_THREADS", threads)
            .current_dir(p)
            .output()
            .unwrap();
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    };
    run("a.conf", "1");
    run("b.conf", "4");
    let strip = |dir: &str| {
        // the manifests differ only in the output directory they name
        fs::remove_file(p.join(dir).join("manifest.json")).unwrap();
    };
    let manifest_a = fs::read_to_string(p.join("a/manifest.json")).unwrap();
    strip("b");
    fs::copy(p.join("a/manifest.json"), p.join("a.manifest.json")).unwrap();
    strip("a");
    same_tree(&p.join("a"), &p.join("b"));
    assert!(p.join("a/mean_polysemy.tsv").is_file());
    assert!(p.join("a/fold_4/dispersion.json").is_file());

    let snapshot = tempfile::tempdir().unwrap();
    for f in files_under(&p.join("a")) {
        let dst = snapshot.path().join(&f);
        fs::create_dir_all(dst.parent().unwrap()).unwrap();
        fs::copy(p.join("a").join(&f), dst).unwrap();
    }
    let replay = xalign(p, &["replay", "--manifest", "a.manifest.json"]);
    assert_eq!(code(&replay), 2, "replay refuses the occupied directory");
    let replay = xalign(p, &["replay", "--manifest", "a.manifest.json", "--force"]);
    assert_eq!(
        code(&replay),
        0,
        "{}",
        String::from_utf8_lossy(&replay.stderr)
    );
    assert_eq!(
        fs::read_to_string(p.join("a/manifest.json")).unwrap(),
        manifest_a
    );
    fs::remove_file(p.join("a/manifest.json")).unwrap();
    same_tree(snapshot.path(), &p.join("a"));
}

#[test]
fn replaying_a_step_manifest_reproduces_its_output() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    synth(p, "s", "120", "0.2");
    let fit = xalign(
        p,
        &[
            "fit",
            "--src",
            "s.src.emb",
            "--tgt",
            "s.tgt.emb",
            "--pairs",
            "s.pairs.tsv",
            "--preprocess",
            "center-unit",
            "--out",
            "m.map",
        ],
    );
    assert_eq!(code(&fit), 0);
    let before = fs::read(p.join("m.map")).unwrap();
    fs::rename(p.join("m.map.manifest.json"), p.join("saved.json")).unwrap();
    fs::remove_file(p.join("m.map")).unwrap();
    assert_eq!(code(&xalign(p, &["replay", "--manifest", "saved.json"])), 0);
    assert_eq!(fs::read(p.join("m.map")).unwrap(), before);

    fs::write(p.join("s.pairs.tsv"), "c00000\tc00001\n").unwrap();
    let stale = xalign(p, &["replay", "--manifest", "saved.json", "--force"]);
    assert_eq!(code(&stale), 2, "changed inputs are detected");
}

#[test]
fn missing_pipeline_input_fails_before_any_output() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    synth(p, "d/s", "40", "0");
    let conf = write_config(p, "out", "polysemy = nowhere.tsv\n");
    let out = xalign(p, &["run", "--config", conf.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(!p.join("out").exists());
}

#[test]
fn failing_stage_leaves_partial_marker() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    synth(p, "d/s", "60", "0");
    // 9 test classes per fold cannot support k = 500
    write_config(p, "out", "ks = 1,500\n");
    let out = xalign(p, &["run", "--config", "out.conf"]);
    assert_eq!(code(&out), 2);
    let marker = fs::read_to_string(p.join("out/PARTIAL")).unwrap();
    assert!(marker.contains("eval (fold 0)"), "{marker}");
    assert!(!p.join("out/manifest.json").exists());
}

#[test]
fn split_then_analyze_from_files() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    synth(p, "s", "100", "0.5");
    let raw: String =
        std::iter::once("class_id\timage_count\talias\talias_corpus_count\n".to_owned())
            .chain((0..100).map(|i| format!("c{i:05}\t{}\tc{i:05}\t{}\n", 95 + i % 10, 3 + i % 4)))
            .collect();
    fs::write(p.join("raw.tsv"), raw).unwrap();
    let split = xalign(
        p,
        &[
            "split", "--dict", "raw.tsv", "--seed", "5", "--folds", "2", "--out", "sp.tsv",
        ],
    );
    assert_eq!(
        code(&split),
        0,
        "{}",
        String::from_utf8_lossy(&split.stderr)
    );
    // classes with > 100 images and aliases seen >= 5 times
    let kept = (0..100)
        .filter(|i| 95 + i % 10 > 100 && 3 + i % 4 >= 5)
        .count();
    assert_eq!(
        fs::read_to_string(p.join("sp.pairs.tsv"))
            .unwrap()
            .lines()
            .count(),
        kept
    );
    assert_eq!(
        fs::read_to_string(p.join("sp.tsv"))
            .unwrap()
            .lines()
            .count(),
        2 * kept
    );

    let common = [
        "--pairs",
        "sp.pairs.tsv",
        "--split",
        "sp.tsv",
        "--fold",
        "1",
    ];
    let mut fit = vec![
        "fit",
        "--src",
        "s.src.emb",
        "--tgt",
        "s.tgt.emb",
        "--out",
        "m.map",
    ];
    fit.extend(common);
    assert_eq!(code(&xalign(p, &fit)), 0);
    let mut eval = vec![
        "eval",
        "--map",
        "m.map",
        "--src",
        "s.src.emb",
        "--tgt",
        "s.tgt.emb",
        "--report",
        "r.json",
        "--rankings",
        "rk.tsv",
        "--metric",
        "cosine",
        "--k",
        "1,5",
    ];
    eval.extend(common);
    let e = xalign(p, &eval);
    assert_eq!(code(&e), 0, "{}", String::from_utf8_lossy(&e.stderr));

    fs::write(
        p.join("disp.tsv"),
        (0..100)
            .map(|i| format!("c{i:05}\t{}\n", i as f64 / 100.0))
            .collect::<String>(),
    )
    .unwrap();
    let mut analyze = vec![
        "analyze",
        "dispersion",
        "--rankings",
        "rk.tsv",
        "--values",
        "disp.tsv",
        "--k",
        "1,5",
        "--out",
        "disp_report.tsv",
    ];
    analyze.extend(common);
    let a = xalign(p, &analyze);
    assert_eq!(code(&a), 0, "{}", String::from_utf8_lossy(&a.stderr));
    let table = fs::read_to_string(p.join("disp_report.tsv")).unwrap();
    assert!(
        table.starts_with("bin\tqueries\tpairs\tP@1\tP@5\nlow\t"),
        "{table}"
    );
    assert!(p.join("disp_report.json").is_file());
    assert!(p.join("disp_report.tsv.manifest.json").is_file());

    let no_source = xalign(
        p,
        &[
            "analyze",
            "dispersion",
            "--rankings",
            "rk.tsv",
            "--pairs",
            "sp.pairs.tsv",
            "--out",
            "x.tsv",
        ],
    );
    assert_eq!(code(&no_source), 1);
}
