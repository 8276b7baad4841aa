use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use eqlatent_cli::pipeline::{load_model, CorpusDir};
use eqlatent_cli::{CorpusManifest, EvalReport};
use eqlatent_core::eqgen::{synthesize_dataset, write_dataset_file};
use eqlatent_core::metrics::reconstruction_accuracy;
use eqlatent_core::rng;

fn eqlatent(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eqlatent"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = eqlatent(args);
    assert!(
        out.status.success(),
        "eqlatent {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn tiny_corpus(dir: &Path, n: usize) -> PathBuf {
    let corpus = dir.join("corpus");
    ok(&[
        "gen-corpus",
        "--n",
        &n.to_string(),
        "--seed",
        "7",
        "--rows",
        "100",
        "--out",
        p(&corpus),
    ]);
    corpus
}

fn tiny_model(dir: &Path, corpus: &Path) -> PathBuf {
    let ck = dir.join("ck");
    ok(&[
        "train",
        "--corpus",
        p(corpus),
        "--epochs",
        "1",
        "--latent-dim",
        "4",
        "--hidden-dim",
        "16",
        "--batch-size",
        "8",
        "--checkpoint-dir",
        p(&ck),
    ]);
    ck
}

fn files_under(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&path).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_corpus_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&[
            "gen-corpus",
            "--n",
            "40",
            "--seed",
            "7",
            "--rows",
            "50",
            "--out",
            p(out),
        ]);
    }
    let (fa, fb) = (files_under(&a), files_under(&b));
    assert!(fa.len() > 3);
    assert_eq!(fa, fb);
    let manifest: CorpusManifest =
        serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.train + manifest.test, 40);
    assert_eq!(manifest.datasets + manifest.missing_datasets.len(), 40);
}

#[test]
fn artifacts_carry_config_hash_and_version() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = tiny_corpus(dir.path(), 20);
    let train = fs::read_to_string(corpus.join("train.jsonl")).unwrap();
    let header: serde_json::Value = serde_json::from_str(train.lines().next().unwrap()).unwrap();
    assert_eq!(header["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(header["code_version"], env!("CARGO_PKG_VERSION"));
    let id = &CorpusDir::load(&corpus).unwrap().train[0].id;
    let ds = fs::read_to_string(corpus.join("datasets").join(format!("{id}.csv"))).unwrap();
    assert!(ds.starts_with("# command=gen-corpus config_hash="));
    assert!(ds.lines().next().unwrap().contains("seed=7"));
}

#[test]
fn verify_corpus_accepts_fresh_and_rejects_tampered_rows() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = tiny_corpus(dir.path(), 20);
    assert!(ok(&["verify-corpus", "--corpus", p(&corpus)]).contains("verified 20 equations"));
    let id = CorpusDir::load(&corpus).unwrap().train[0].id.clone();
    let path = corpus.join("datasets").join(format!("{id}.csv"));
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let last = lines.len() - 1;
    let (x, _) = lines[last].rsplit_once(',').unwrap();
    lines[last] = format!("{x},12345.5");
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    let out = eqlatent(&["verify-corpus", "--corpus", p(&corpus)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains(&id));
}

#[test]
fn smoke_training_writes_loadable_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = tiny_corpus(dir.path(), 120);
    let ck = dir.path().join("ck");
    ok(&[
        "train",
        "--corpus",
        p(&corpus),
        "--epochs",
        "1",
        "--n",
        "100",
        "--latent-dim",
        "4",
        "--hidden-dim",
        "16",
        "--checkpoint-dir",
        p(&ck),
    ]);
    let model = load_model(&ck).unwrap();
    assert_eq!(model.config.latent_dim, 4);
    let history: serde_json::Value =
        serde_json::from_slice(&fs::read(ck.join("history.json")).unwrap()).unwrap();
    assert_eq!(history["examples"], 100);
    assert_eq!(history["history"]["epochs"].as_array().unwrap().len(), 1);
}

#[test]
fn conditioned_training_needs_embeddings() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = tiny_corpus(dir.path(), 20);
    let out = eqlatent(&[
        "train",
        "--corpus",
        p(&corpus),
        "--condition",
        "poly",
        "--checkpoint-dir",
        p(&dir.path().join("ck")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--embeddings"));
}

#[test]
fn set_provider_without_weights_falls_back_to_poly() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = tiny_corpus(dir.path(), 20);
    let emb = dir.path().join("emb.jsonl");
    let out = eqlatent(&[
        "embed",
        "--corpus",
        p(&corpus),
        "--provider",
        "set_mean",
        "--out",
        p(&emb),
    ]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("falling back"));
    assert!(String::from_utf8_lossy(&out.stdout).contains("poly embeddings"));
}

#[test]
fn eval_is_repeatable_and_matches_library_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = tiny_corpus(dir.path(), 40);
    let ck = tiny_model(dir.path(), &corpus);
    let mut reports = Vec::new();
    for i in 0..3 {
        let out = dir.path().join(format!("eval{i}.json"));
        let table = ok(&[
            "eval",
            "--checkpoint",
            p(&ck),
            "--corpus",
            p(&corpus),
            "--samples",
            "50",
            "--seed",
            "3",
            "--out",
            p(&out),
        ]);
        assert!(table.starts_with(
            "| condition | reconstruction % | validity % | uniqueness % | novelty % |"
        ));
        reports.push(fs::read(&out).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
    assert_eq!(reports[1], reports[2]);
    let report: EvalReport = serde_json::from_slice(&reports[0]).unwrap();
    assert_eq!(report.prior.n_samples, 50);

    let model = load_model(&ck).unwrap();
    let test = CorpusDir::load(&corpus).unwrap().test;
    let items: Vec<_> = test.iter().map(|e| (&e.dag, None)).collect();
    assert_eq!(
        reconstruction_accuracy(&model, &items).unwrap(),
        report.reconstruction
    );
}

#[test]
fn missing_checkpoint_is_a_user_error() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = tiny_corpus(dir.path(), 20);
    let out = eqlatent(&[
        "eval",
        "--checkpoint",
        p(&dir.path().join("nope")),
        "--corpus",
        p(&corpus),
        "--out",
        p(&dir.path().join("r.json")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn discover_accepts_ten_thousand_rows_and_reports_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = tiny_corpus(dir.path(), 20);
    let ck = tiny_model(dir.path(), &corpus);
    let c = CorpusDir::load(&corpus).unwrap();
    let e = &c.train[0];
    let ds = synthesize_dataset(
        &e.dag,
        10_000,
        &c.header.gen_config.input_box(),
        &mut rng::stream(1, "big", 0),
    )
    .unwrap();
    let path = dir.path().join("big.csv");
    write_dataset_file(&path, None, &ds).unwrap();
    let out = dir.path().join("d.json");
    let traj = dir.path().join("t.csv");
    let gt = e.dag.infix_string().unwrap();
    ok(&[
        "discover",
        "--checkpoint",
        p(&ck),
        "--dataset",
        p(&path),
        "--gt",
        &gt,
        "--iterations",
        "2",
        "--trials",
        "2",
        "--init-points",
        "2",
        "--candidates",
        "64",
        "--out",
        p(&out),
        "--trajectory",
        p(&traj),
    ]);
    let report: serde_json::Value = serde_json::from_slice(&fs::read(&out).unwrap()).unwrap();
    assert_eq!(report["ground_truth"]["ground_truth"], gt.as_str());
    assert!(report["provenance"]["config_hash"].is_string());
    let traj = fs::read_to_string(traj).unwrap();
    assert_eq!(
        traj.lines().nth(1),
        Some("trial,evaluation,score,trial_best,overall_best")
    );
    assert_eq!(traj.lines().count(), 2 + 2 * 4);
}

#[test]
fn dataset_without_y_column_fails_at_header() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = tiny_corpus(dir.path(), 20);
    let ck = tiny_model(dir.path(), &corpus);
    let path = dir.path().join("noy.csv");
    fs::write(&path, "x1,x2,x3\n0.1,0.2,0.3\n").unwrap();
    let out = eqlatent(&[
        "discover",
        "--checkpoint",
        p(&ck),
        "--dataset",
        p(&path),
        "--out",
        p(&dir.path().join("d.json")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 1"), "{err}");
}

#[test]
fn plot_latent_writes_full_grid() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = tiny_corpus(dir.path(), 20);
    let ck = tiny_model(dir.path(), &corpus);
    let c = CorpusDir::load(&corpus).unwrap();
    let out = dir.path().join("grid.csv");
    ok(&[
        "plot-latent",
        "--checkpoint",
        p(&ck),
        "--corpus",
        p(&corpus),
        "--dataset",
        p(&c.dataset_path(&c.train[0].id)),
        "--grid",
        "6",
        "--out",
        p(&out),
    ]);
    let text = fs::read_to_string(&out).unwrap();
    let rows: Vec<&str> = text.lines().skip(2).collect();
    assert_eq!(rows.len(), 36);
    for r in rows {
        let score: f64 = r.split(',').nth(4).unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&score));
    }
    assert!(out.with_extension("json").exists());
}

#[test]
fn config_file_values_yield_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# corpus settings\nn = 30\nseed = 5\nrows = 20\n").unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["gen-corpus", "--config", p(&cfg), "--out", p(&a)]);
    ok(&[
        "gen-corpus",
        "--config",
        p(&cfg),
        "--n",
        "25",
        "--out",
        p(&b),
    ]);
    let ma: CorpusManifest =
        serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    let mb: CorpusManifest =
        serde_json::from_slice(&fs::read(b.join("manifest.json")).unwrap()).unwrap();
    assert_eq!((ma.train + ma.test, ma.rows_per_dataset), (30, 20));
    assert_eq!(mb.train + mb.test, 25);
}

#[test]
fn help_and_unknown_flags() {
    let out = eqlatent(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in [
        "gen-corpus",
        "embed",
        "train",
        "eval",
        "discover",
        "plot-latent",
        "verify-corpus",
    ] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
    assert_eq!(
        eqlatent(&["train", "--no-such-flag"]).status.code(),
        Some(1)
    );
}
