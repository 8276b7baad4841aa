use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::anyhow;
use eqlatent_core::cvae::{train as train_model, CvaeError, EpochStats, ModelConfig, TrainOptions};
use eqlatent_core::embed::{write_embedding_cache_to, EmbedError, EmbeddingCache, Provider};
use eqlatent_core::eqdag::parse_infix;
use eqlatent_core::eqgen::{
    generate_corpus, synthesize_dataset, write_corpus_file, write_dataset, CorpusHeader, GenConfig,
    GenError, Interval,
};
use eqlatent_core::metrics::{
    equivalent, prior_sample_report, reconstruction_accuracy, EquivalenceVerdict,
    PriorSampleReport, ReconstructionReport,
};
use eqlatent_core::rng;
use eqlatent_core::search::{
    discover as run_discovery, write_trajectory_csv, BoConfig, DiscoveryReport, SearchError,
};
use serde::{Deserialize, Serialize};

use crate::artifact::{write_json, Provenance, CODE_VERSION};
use crate::pipeline::{
    cache_serves, condition_features, dataset_path, encoder_weights, latent_grid, load_cache,
    load_model, model_condition, parse_condition, read_dataset, training_examples, CorpusDir,
    DATASET_DIR, MANIFEST_FILE, TEST_FILE, TRAIN_FILE,
};
use crate::{
    CliError, DiscoverArgs, EmbedArgs, EvalArgs, GenCorpusArgs, PlotLatentArgs, TrainArgs,
    VerifyCorpusArgs,
};

fn warn(msg: String) {
    eprintln!("warning: {msg}");
}

fn create_file(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn gen_error(e: GenError) -> CliError {
    match e {
        GenError::Io(io) => CliError::Internal(io.into()),
        other => CliError::User(other.to_string()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub train: usize,
    pub test: usize,
    pub rows_per_dataset: usize,
    pub datasets: usize,
    /// Equations with no dataset because they are undefined on almost all
    /// of the input box.
    pub missing_datasets: Vec<String>,
}

pub fn gen_corpus(a: &GenCorpusArgs) -> Result<(), CliError> {
    let prov = Provenance::new("gen-corpus", a.seed, a);
    let cfg = GenConfig {
        d: a.d,
        max_internal_nodes: a.max_internal_nodes,
        seed: a.seed,
        input_range: Interval::new(a.input_low, a.input_high),
        ..GenConfig::default()
    };
    let corpus = generate_corpus(a.n, &cfg).map_err(gen_error)?;
    fs::create_dir_all(a.out.join(DATASET_DIR)).map_err(|e| CliError::io(&a.out, e))?;
    for (split, entries, file) in [
        ("train", &corpus.train, TRAIN_FILE),
        ("test", &corpus.test, TEST_FILE),
    ] {
        let header = CorpusHeader {
            split: split.into(),
            count: entries.len(),
            gen_config: cfg.clone(),
            config_hash: prov.config_hash.clone(),
            code_version: CODE_VERSION.into(),
        };
        write_corpus_file(&a.out.join(file), &header, entries).map_err(gen_error)?;
    }
    let input_box = cfg.input_box();
    let mut missing = Vec::new();
    for (i, e) in corpus.all().enumerate() {
        match synthesize_dataset(
            &e.dag,
            a.rows,
            &input_box,
            &mut rng::stream(a.seed, "ds", i as u64),
        ) {
            Ok(ds) => {
                let path = dataset_path(&a.out, &e.id);
                let mut w = create_file(&path)?;
                writeln!(w, "{}", prov.comment())
                    .and_then(|_| write_dataset(&mut w, Some(&e.id), &ds))
                    .and_then(|_| w.flush())
                    .map_err(|err| CliError::io(&path, err))?;
            }
            Err(GenError::UndefinedAlmostEverywhere { .. }) => missing.push(e.id.clone()),
            Err(other) => return Err(gen_error(other)),
        }
    }
    if !missing.is_empty() {
        warn(format!(
            "{} equations have no dataset (undefined on the input box)",
            missing.len()
        ));
    }
    let manifest = CorpusManifest {
        train: corpus.train.len(),
        test: corpus.test.len(),
        rows_per_dataset: a.rows,
        datasets: corpus.len() - missing.len(),
        missing_datasets: missing,
    };
    write_json(&a.out.join(MANIFEST_FILE), &prov, &manifest)?;
    println!(
        "wrote {} train and {} test equations, {} datasets to {}",
        manifest.train,
        manifest.test,
        manifest.datasets,
        a.out.display()
    );
    Ok(())
}

pub fn embed(a: &EmbedArgs) -> Result<(), CliError> {
    let prov = Provenance::new("embed", a.encoder.encoder_seed, a);
    let corpus = CorpusDir::load(&a.corpus)?;
    let mut provider = parse_condition(&a.provider)?
        .ok_or_else(|| CliError::User("`none` is not an embedding provider".into()))?;
    let weights = if provider == Provider::Poly {
        None
    } else {
        match encoder_weights(&a.encoder, corpus.num_inputs()) {
            Ok(w) => Some(w),
            Err(EmbedError::WeightsUnavailable) => {
                warn(format!(
                    "no set-encoder weights given; falling back from {provider} to poly"
                ));
                provider = Provider::Poly;
                None
            }
            Err(e) => return Err(CliError::User(format!("set encoder: {e}"))),
        }
    };
    let mut cache = EmbeddingCache::new(provider);
    let mut fallbacks = 0;
    let mut absent = 0;
    for e in corpus.train.iter().chain(&corpus.test) {
        let path = corpus.dataset_path(&e.id);
        if !path.exists() {
            absent += 1;
            continue;
        }
        let (_, ds) = read_dataset(&path)?;
        let mut note = |_: String| fallbacks += 1;
        let c = condition_features(provider, &ds, weights.as_ref(), a.poly_degree, &mut note)
            .map_err(|err| CliError::User(format!("{}: {err}", path.display())))?;
        cache.entries.insert(e.id.clone(), c);
    }
    if fallbacks > 0 {
        warn(format!(
            "{fallbacks} ill-conditioned polynomial fits used the ridge solution"
        ));
    }
    if absent > 0 {
        warn(format!(
            "{absent} equations have no dataset and no embedding"
        ));
    }
    let mut w = create_file(&a.out)?;
    writeln!(w, "{}", prov.comment())
        .and_then(|_| write_embedding_cache_to(&mut w, &cache))
        .and_then(|_| w.flush())
        .map_err(|err| CliError::io(&a.out, err))?;
    println!(
        "wrote {} {provider} embeddings of width {} to {}",
        cache.entries.len(),
        cache.width().unwrap_or(0),
        a.out.display()
    );
    Ok(())
}

fn cvae_error(e: CvaeError) -> CliError {
    match e {
        CvaeError::InvalidConfig(_)
        | CvaeError::MissingCondition(_)
        | CvaeError::ShapeMismatch(_)
        | CvaeError::Checkpoint(_) => CliError::User(e.to_string()),
        other => CliError::Internal(anyhow!(other)),
    }
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    model: &'a ModelConfig,
    examples: usize,
    skipped: &'a [String],
    history: &'a eqlatent_core::cvae::History,
}

pub fn train(a: &TrainArgs) -> Result<(), CliError> {
    let prov = Provenance::new("train", a.seed, a);
    let corpus = CorpusDir::load(&a.corpus)?;
    let provider = parse_condition(&a.condition)?;
    let cache = match provider {
        None => None,
        Some(p) => {
            let path = a
                .embeddings
                .as_ref()
                .ok_or_else(|| CliError::User(format!("--condition {p} needs --embeddings")))?;
            let c = load_cache(path)?;
            if !cache_serves(c.provider, p) {
                return Err(CliError::User(format!(
                    "{} holds {} features, --condition asks for {p}",
                    path.display(),
                    c.provider
                )));
            }
            Some(c)
        }
    };
    let entries = &corpus.train[..a.n.unwrap_or(corpus.train.len()).min(corpus.train.len())];
    let (examples, skipped) = training_examples(entries, cache.as_ref());
    if !skipped.is_empty() {
        warn(format!(
            "{} equations without a cached condition were skipped",
            skipped.len()
        ));
    }
    let config = ModelConfig {
        latent_dim: a.latent_dim,
        hidden_dim: a.hidden_dim,
        num_inputs: corpus.num_inputs(),
        max_nodes: a.max_nodes,
        alpha: a.alpha,
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.learning_rate,
        grad_clip: a.grad_clip,
        conditioning: provider,
        condition_features: cache.as_ref().and_then(EmbeddingCache::width).unwrap_or(0),
        seed: a.seed,
    };
    let mut progress = |s: &EpochStats| {
        eprintln!(
            "epoch {:>4}  loss {:.4}  recon {:.4}  kl {:.3}",
            s.epoch, s.loss, s.recon, s.kl
        );
    };
    let metadata = [
        ("command".to_string(), prov.command.clone()),
        ("config_hash".to_string(), prov.config_hash.clone()),
        ("code_version".to_string(), prov.code_version.clone()),
    ]
    .into_iter()
    .collect();
    let opts = TrainOptions {
        checkpoint_dir: Some(a.checkpoint_dir.clone()),
        resume: a.resume,
        keep_checkpoints: a.keep_checkpoints,
        max_steps: a.max_steps,
        on_epoch: Some(&mut progress),
        metadata,
    };
    let (_, history) = train_model(&examples, &config, opts).map_err(cvae_error)?;
    let summary = TrainSummary {
        model: &config,
        examples: examples.len(),
        skipped: &skipped,
        history: &history,
    };
    write_json(&a.checkpoint_dir.join("history.json"), &prov, &summary)?;
    if let Some(last) = history.epochs.last() {
        println!(
            "trained {} epochs ({} steps), final loss {:.4}",
            last.epoch,
            history.total_steps(),
            last.loss
        );
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub condition: String,
    pub split: String,
    pub reconstruction: ReconstructionReport,
    pub prior: PriorSampleReport,
    pub uniqueness_denominator: String,
    pub novelty_denominator: String,
}

impl EvalReport {
    pub fn table(&self) -> String {
        format!(
            "| condition | reconstruction % | validity % | uniqueness % | novelty % |\n|---|---|---|---|---|\n| {} | {:.2} | {:.2} | {:.2} | {:.2} |",
            self.condition,
            self.reconstruction.accuracy_pct,
            self.prior.validity_pct,
            self.prior.uniqueness_pct,
            self.prior.novelty_pct
        )
    }
}

pub fn eval(a: &EvalArgs) -> Result<(), CliError> {
    let prov = Provenance::new("eval", a.seed, a);
    let model = load_model(&a.checkpoint)?;
    let corpus = CorpusDir::load(&a.corpus)?;
    let cache = match model.config.conditioning {
        None => None,
        Some(p) => {
            let path = a.embeddings.as_ref().ok_or_else(|| {
                CliError::User(format!("a {p}-conditioned model needs --embeddings"))
            })?;
            Some(load_cache(path)?)
        }
    };
    let split = match a.split.as_str() {
        "train" => &corpus.train,
        "test" => &corpus.test,
        other => {
            return Err(CliError::User(format!(
                "unknown split `{other}`, expected train or test"
            )))
        }
    };
    let (targets, _) = training_examples(split, cache.as_ref());
    let items: Vec<_> = targets
        .iter()
        .map(|e| (&e.dag, e.condition.as_deref()))
        .collect();
    let reconstruction = reconstruction_accuracy(&model, &items)
        .map_err(|e| CliError::User(format!("reconstruction: {e}")))?;
    let (train, _) = training_examples(&corpus.train, cache.as_ref());
    let conditions: Vec<Vec<f64>> = train.iter().filter_map(|e| e.condition.clone()).collect();
    let index: BTreeSet<String> = corpus
        .train
        .iter()
        .filter_map(|e| e.dag.canonical_string().ok())
        .collect();
    let prior = prior_sample_report(
        &model,
        &index,
        a.samples,
        &conditions,
        &mut rng::stream(a.seed, "prior", 0),
    )
    .map_err(|e| CliError::Internal(anyhow!(e)))?;
    let report = EvalReport {
        condition: model
            .config
            .conditioning
            .map_or("none".into(), |p| p.to_string()),
        split: a.split.clone(),
        reconstruction,
        prior,
        uniqueness_denominator: "valid samples".into(),
        novelty_denominator: "valid unique samples".into(),
    };
    write_json(&a.out, &prov, &report)?;
    println!("{}", report.table());
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub ground_truth: String,
    /// `None` when the equivalence test could not be decided.
    pub verdict: Option<EquivalenceVerdict>,
    pub note: Option<String>,
}

#[derive(Serialize)]
struct DiscoverOutput<'a> {
    #[serde(flatten)]
    report: &'a DiscoveryReport,
    ground_truth: Option<Verdict>,
}

pub fn discover(a: &DiscoverArgs) -> Result<(), CliError> {
    let prov = Provenance::new("discover", a.bo.seed, a);
    let model = load_model(&a.checkpoint)?;
    let (source_id, ds) = read_dataset(&a.dataset)?;
    let dataset_id = source_id.unwrap_or_else(|| {
        a.dataset
            .file_stem()
            .map_or("dataset".into(), |s| s.to_string_lossy().into_owned())
    });
    let truth =
        a.gt.as_deref()
            .map(parse_infix)
            .transpose()
            .map_err(|e| CliError::User(format!("--gt: {e}")))?;
    let condition = model_condition(&model, &ds, &a.encoder, &mut warn)?;
    let cfg = BoConfig {
        iterations: a.bo.iterations,
        trials: a.bo.trials,
        init_points: a.bo.init_points,
        bounds: Interval::new(-a.bo.bound, a.bo.bound),
        length_scale: a.bo.length_scale,
        signal_variance: a.bo.signal_variance,
        noise_variance: a.bo.noise_variance,
        candidates: a.bo.candidates,
        refit_length_scale: a.bo.refit_length_scale,
        seed: a.bo.seed,
    };
    let result = run_discovery(&model, &ds, condition.as_deref(), &cfg).map_err(|e| match e {
        SearchError::InvalidConfig(m) => CliError::User(m),
        other => CliError::Internal(anyhow!(other)),
    })?;
    let report = DiscoveryReport::new(dataset_id, &cfg, &result);
    let ground_truth = match (&a.gt, truth) {
        (Some(src), Some(t)) => Some(match result.best_dag.to_expression() {
            Ok(found) if result.best_dag.is_valid() => {
                match equivalent(
                    &found,
                    &t,
                    model.config.num_inputs,
                    &mut rng::stream(a.bo.seed, "verdict", 0),
                ) {
                    Ok(v) => Verdict {
                        ground_truth: src.clone(),
                        verdict: Some(v),
                        note: None,
                    },
                    Err(e) => Verdict {
                        ground_truth: src.clone(),
                        verdict: None,
                        note: Some(e.to_string()),
                    },
                }
            }
            _ => Verdict {
                ground_truth: src.clone(),
                verdict: None,
                note: Some("best decode is not a valid equation".into()),
            },
        }),
        _ => None,
    };
    write_json(
        &a.out,
        &prov,
        &DiscoverOutput {
            report: &report,
            ground_truth: ground_truth.clone(),
        },
    )?;
    if let Some(path) = &a.trajectory {
        let mut w = create_file(path)?;
        writeln!(w, "{}", prov.comment())
            .and_then(|_| write_trajectory_csv(&mut w, &report.trace))
            .and_then(|_| w.flush())
            .map_err(|e| CliError::io(path, e))?;
    }
    println!(
        "best {} score {:.6} (trial {})",
        report.winner.infix.as_deref().unwrap_or("<invalid>"),
        report.winner.score,
        report.winner.trial
    );
    if let Some(v) = ground_truth.and_then(|g| g.verdict) {
        println!(
            "equivalent to ground truth: {} ({:?})",
            v.equivalent, v.method
        );
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentGridReport {
    pub size: usize,
    pub cells: usize,
    pub encoded: usize,
    pub morans_i: Option<f64>,
    pub min_score: f64,
    pub max_score: f64,
    pub distinct_equations: usize,
}

pub fn plot_latent(a: &PlotLatentArgs) -> Result<(), CliError> {
    let prov = Provenance::new("plot-latent", a.encoder.encoder_seed, a);
    let model = load_model(&a.checkpoint)?;
    let corpus = CorpusDir::load(&a.corpus)?;
    let cache = match model.config.conditioning {
        None => None,
        Some(p) => {
            let path = a.embeddings.as_ref().ok_or_else(|| {
                CliError::User(format!("a {p}-conditioned model needs --embeddings"))
            })?;
            Some(load_cache(path)?)
        }
    };
    let (_, ds) = read_dataset(&a.dataset)?;
    let condition = model_condition(&model, &ds, &a.encoder, &mut warn)?;
    let (train, _) = training_examples(&corpus.train, cache.as_ref());
    let mut mus = Vec::with_capacity(train.len());
    for e in &train {
        if let Ok((mu, _)) = model.encode(&e.dag, e.condition.as_deref()) {
            mus.push(mu);
        }
    }
    let grid = latent_grid(&model, &mus, condition.as_deref(), &ds, a.grid, a.margin)?;
    let mut w = create_file(&a.out)?;
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        writeln!(w, "{}", prov.comment())?;
        writeln!(w, "row,col,u,v,score,canonical")?;
        for c in &grid.cells {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                c.row,
                c.col,
                c.u,
                c.v,
                c.score,
                c.canonical.as_deref().unwrap_or("")
            )?;
        }
        w.flush()
    };
    write(&mut w).map_err(|e| CliError::io(&a.out, e))?;
    let scores: Vec<f64> = grid.cells.iter().map(|c| c.score).collect();
    let summary = LatentGridReport {
        size: grid.size,
        cells: grid.cells.len(),
        encoded: mus.len(),
        morans_i: grid.morans_i,
        min_score: scores.iter().copied().fold(f64::INFINITY, f64::min),
        max_score: scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        distinct_equations: grid
            .cells
            .iter()
            .filter_map(|c| c.canonical.as_ref())
            .collect::<BTreeSet<_>>()
            .len(),
    };
    write_json(&a.out.with_extension("json"), &prov, &summary)?;
    match summary.morans_i {
        Some(i) => println!("{} cells, Moran's I {i:.4}", summary.cells),
        None => println!("{} cells, constant scores", summary.cells),
    }
    Ok(())
}

pub fn verify_corpus(a: &VerifyCorpusArgs) -> Result<(), CliError> {
    let corpus = CorpusDir::load(&a.corpus)?;
    let (mut invalid, mut mismatched, mut datasets, mut rows) = (Vec::new(), Vec::new(), 0, 0);
    for e in corpus.train.iter().chain(&corpus.test) {
        if !e.dag.is_valid() {
            invalid.push(e.id.clone());
            continue;
        }
        let path = corpus.dataset_path(&e.id);
        if !path.exists() {
            continue;
        }
        let (_, ds) = read_dataset(&path)?;
        datasets += 1;
        let program = e.dag.compile().map_err(|err| anyhow!(err))?;
        for (x, y) in ds.x.iter().zip(&ds.y) {
            rows += 1;
            if program.eval(x).map(f64::to_bits) != Ok(y.to_bits()) {
                mismatched.push(e.id.clone());
                break;
            }
        }
    }
    if !invalid.is_empty() || !mismatched.is_empty() {
        return Err(CliError::User(format!(
            "{} invalid equations {:?}, {} datasets with mismatched rows {:?}",
            invalid.len(),
            invalid,
            mismatched.len(),
            mismatched
        )));
    }
    println!(
        "verified {} equations, {datasets} datasets, {rows} rows",
        corpus.train.len() + corpus.test.len()
    );
    Ok(())
}
