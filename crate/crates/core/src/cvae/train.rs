use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Cvae, CvaeError, ModelConfig};
use crate::embed::Normalizer;
use crate::eqdag::EquationDag;
use crate::rng;
use crate::tape::{Grads, ParamStore};

const CHECKPOINT_VERSION: u32 = 1;
const LATEST: &str = "latest.json";

/// One training equation with its raw condition features.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    pub id: String,
    pub dag: EquationDag,
    pub condition: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    pub recon: f64,
    pub kl: f64,
    pub steps: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochStats>,
}

impl History {
    pub fn total_steps(&self) -> usize {
        self.epochs.iter().map(|e| e.steps).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .tensors
            .iter()
            .map(|t| vec![0.0; t.data.len()])
            .collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &Grads) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, tensor) in params.tensors.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], &grads.tensors[i]);
            for j in 0..tensor.data.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                tensor.data[j] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    /// Completed epochs.
    pub epoch: usize,
    pub config: ModelConfig,
    pub params: ParamStore,
    pub normalizer: Option<Normalizer>,
    pub adam: Adam,
    pub history: History,
    /// Free-form provenance copied from [`TrainOptions::metadata`].
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn into_model(self) -> Result<Cvae, CvaeError> {
        Cvae::from_parts(self.config, self.params, self.normalizer)
    }
}

#[derive(Serialize, Deserialize)]
struct LatestPointer {
    epoch: usize,
    file: String,
}

fn checkpoint_name(epoch: usize) -> String {
    format!("checkpoint-epoch-{epoch:04}.json")
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CvaeError> {
    let text = fs::read_to_string(path)?;
    let ckpt: Checkpoint = serde_json::from_str(&text)
        .map_err(|e| CvaeError::Checkpoint(format!("{}: {e}", path.display())))?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(CvaeError::Checkpoint(format!(
            "unsupported checkpoint version {}",
            ckpt.version
        )));
    }
    Ok(ckpt)
}

/// Follows the `latest.json` pointer of a checkpoint directory; `Ok(None)`
/// when the directory holds no checkpoint yet.
pub fn load_latest_checkpoint(dir: &Path) -> Result<Option<Checkpoint>, CvaeError> {
    let pointer = dir.join(LATEST);
    if !pointer.exists() {
        return Ok(None);
    }
    let p: LatestPointer = serde_json::from_str(&fs::read_to_string(&pointer)?)
        .map_err(|e| CvaeError::Checkpoint(format!("{}: {e}", pointer.display())))?;
    load_checkpoint(&dir.join(p.file)).map(Some)
}

fn write_checkpoint(dir: &Path, ckpt: &Checkpoint, keep: usize) -> Result<(), CvaeError> {
    fs::create_dir_all(dir)?;
    let name = checkpoint_name(ckpt.epoch);
    let tmp = dir.join(format!("{name}.tmp"));
    fs::write(
        &tmp,
        serde_json::to_string(ckpt).expect("checkpoint serializes"),
    )?;
    fs::rename(&tmp, dir.join(&name))?;
    let pointer = serde_json::to_string(&LatestPointer {
        epoch: ckpt.epoch,
        file: name,
    })
    .expect("pointer serializes");
    fs::write(dir.join(LATEST), pointer)?;

    let mut existing: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("checkpoint-epoch-") && n.ends_with(".json"))
        })
        .collect();
    existing.sort();
    let excess = existing.len().saturating_sub(keep.max(1));
    for old in &existing[..excess] {
        fs::remove_file(old)?;
    }
    Ok(())
}

pub struct TrainOptions<'a> {
    pub checkpoint_dir: Option<PathBuf>,
    /// Continue from the latest checkpoint in `checkpoint_dir` if present.
    pub resume: bool,
    pub keep_checkpoints: usize,
    /// Stop after this many optimizer steps.
    pub max_steps: Option<usize>,
    pub on_epoch: Option<&'a mut dyn FnMut(&EpochStats)>,
    /// Stored verbatim in every checkpoint.
    pub metadata: BTreeMap<String, String>,
}

impl Default for TrainOptions<'_> {
    fn default() -> Self {
        Self {
            checkpoint_dir: None,
            resume: false,
            keep_checkpoints: 3,
            max_steps: None,
            on_epoch: None,
            metadata: BTreeMap::new(),
        }
    }
}

fn clip(grads: &mut Grads, max_norm: f64) {
    let n = grads.norm();
    if max_norm > 0.0 && n > max_norm {
        grads.scale(max_norm / n);
    }
}

/// Mini-batch training with Adam. Epoch `e` shuffles and draws noise from
/// its own generator, so a resumed run matches an uninterrupted one.
pub fn train(
    examples: &[TrainingExample],
    config: &ModelConfig,
    mut opts: TrainOptions,
) -> Result<(Cvae, History), CvaeError> {
    config.validate()?;
    if examples.is_empty() {
        return Err(CvaeError::InvalidConfig("training set is empty".into()));
    }
    let conditional = config.conditioning.is_some();
    if conditional {
        for e in examples {
            match &e.condition {
                None => return Err(CvaeError::MissingCondition(e.id.clone())),
                Some(c) if c.len() != config.condition_features => {
                    return Err(CvaeError::ShapeMismatch(format!(
                        "condition of {} has {} values, expected {}",
                        e.id,
                        c.len(),
                        config.condition_features
                    )))
                }
                _ => {}
            }
        }
    }

    let mut model = Cvae::new(config.clone())?;
    for e in examples {
        model.check_dag(&e.dag)?;
    }
    if conditional {
        model.normalizer = Some(Normalizer::fit(
            examples
                .iter()
                .map(|e| e.condition.as_deref().expect("checked")),
        ));
    }
    let mut adam = Adam::new(&model.params, config.learning_rate);
    let mut history = History::default();
    let mut start = 0;

    if let (true, Some(dir)) = (opts.resume, &opts.checkpoint_dir) {
        if let Some(ckpt) = load_latest_checkpoint(dir)? {
            if &ckpt.config != config {
                return Err(CvaeError::Checkpoint(
                    "checkpoint config differs from the requested config".into(),
                ));
            }
            start = ckpt.epoch;
            history = ckpt.history.clone();
            adam = ckpt.adam.clone();
            model = ckpt.into_model()?;
        }
    }

    let standardized: Vec<Option<Vec<f64>>> = examples
        .iter()
        .map(|e| model.standardize(e.condition.as_deref()))
        .collect::<Result<_, _>>()?;
    let mut steps_done = history.total_steps();
    let k = config.latent_dim;

    for epoch in start..config.epochs {
        if opts.max_steps.is_some_and(|m| steps_done >= m) {
            break;
        }
        let mut r = rng::stream(config.seed, "epoch", epoch as u64);
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut r);
        let (mut sum_loss, mut sum_recon, mut sum_kl, mut seen, mut steps) =
            (0.0, 0.0, 0.0, 0usize, 0usize);
        for batch in order.chunks(config.batch_size) {
            if opts.max_steps.is_some_and(|m| steps_done >= m) {
                break;
            }
            let mut grads = model.params.zero_grads();
            let scale = 1.0 / batch.len() as f64;
            let mut bad = false;
            for &i in batch {
                let eps: Vec<f64> = (0..k).map(|_| r.sample(StandardNormal)).collect();
                let parts = model.loss_with_grads(
                    &examples[i].dag,
                    standardized[i].as_deref(),
                    Some(&eps),
                    Some((&mut grads, scale)),
                );
                if !parts.total.is_finite() {
                    bad = true;
                }
                sum_loss += parts.total;
                sum_recon += parts.recon;
                sum_kl += parts.kl;
                seen += 1;
            }
            if bad || !grads.norm().is_finite() {
                return Err(CvaeError::NonFiniteLoss {
                    epoch: epoch + 1,
                    batch_ids: batch.iter().map(|&i| examples[i].id.clone()).collect(),
                });
            }
            clip(&mut grads, config.grad_clip);
            adam.step(&mut model.params, &grads);
            steps += 1;
            steps_done += 1;
        }
        if seen == 0 {
            break;
        }
        let stats = EpochStats {
            epoch: epoch + 1,
            loss: sum_loss / seen as f64,
            recon: sum_recon / seen as f64,
            kl: sum_kl / seen as f64,
            steps,
        };
        history.epochs.push(stats);
        if let Some(dir) = &opts.checkpoint_dir {
            let ckpt = Checkpoint {
                version: CHECKPOINT_VERSION,
                epoch: epoch + 1,
                config: config.clone(),
                params: model.params.clone(),
                normalizer: model.normalizer.clone(),
                adam: adam.clone(),
                history: history.clone(),
                metadata: opts.metadata.clone(),
            };
            write_checkpoint(dir, &ckpt, opts.keep_checkpoints)?;
        }
        if let Some(cb) = opts.on_epoch.as_mut() {
            cb(&stats);
        }
    }
    Ok((model, history))
}
