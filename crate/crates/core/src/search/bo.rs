use std::io::Write;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::gp::{Gp, Kernel};
use super::{expected_improvement, score, BoConfig, SearchError};
use crate::cvae::{Cvae, DecodeMode};
use crate::eqdag::EquationDag;
use crate::eqgen::Dataset;
use crate::rng::{self, Rng};

const LENGTH_SCALE_GRID: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];
const REFIT_EVERY: usize = 5;
const POLISH_ROUNDS: usize = 60;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub z: Vec<f64>,
    pub score: f64,
}

/// Maximizes `objective` over the box `cfg.bounds^dim`: `init_points`
/// uniform draws, then `iterations` rounds of GP fit and EI maximization.
/// Returns every evaluation in order.
pub fn maximize<F>(
    mut objective: F,
    dim: usize,
    cfg: &BoConfig,
    rng: &mut Rng,
) -> Result<Vec<Observation>, SearchError>
where
    F: FnMut(&[f64]) -> Result<f64, SearchError>,
{
    cfg.validate()?;
    if dim == 0 {
        return Err(SearchError::InvalidConfig(
            "latent dimension must be positive".into(),
        ));
    }
    let mut obs: Vec<Observation> = Vec::with_capacity(cfg.init_points + cfg.iterations);
    for _ in 0..cfg.init_points {
        let z = uniform_point(dim, cfg, rng);
        let score = objective(&z)?;
        obs.push(Observation { z, score });
    }
    let mut kernel = Kernel {
        length_scale: cfg.length_scale,
        signal_variance: cfg.signal_variance,
        noise_variance: cfg.noise_variance,
    };
    for _ in 0..cfg.iterations {
        let z = if obs.is_empty() {
            uniform_point(dim, cfg, rng)
        } else {
            let points: Vec<Vec<f64>> = obs.iter().map(|o| o.z.clone()).collect();
            let values: Vec<f64> = obs.iter().map(|o| o.score).collect();
            if cfg.refit_length_scale && obs.len().is_multiple_of(REFIT_EVERY) {
                kernel.length_scale =
                    select_length_scale(&points, &values, kernel, cfg.length_scale)?;
            }
            let gp = Gp::fit(&points, &values, kernel)?;
            let best = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            maximize_ei(&gp, best, dim, cfg, rng)
        };
        let score = objective(&z)?;
        obs.push(Observation { z, score });
    }
    Ok(obs)
}

fn uniform_point(dim: usize, cfg: &BoConfig, rng: &mut Rng) -> Vec<f64> {
    (0..dim)
        .map(|_| rng.random_range(cfg.bounds.low..cfg.bounds.high))
        .collect()
}

fn select_length_scale(
    points: &[Vec<f64>],
    values: &[f64],
    kernel: Kernel,
    base: f64,
) -> Result<f64, SearchError> {
    let mut best = (f64::NEG_INFINITY, base);
    for m in LENGTH_SCALE_GRID {
        let k = Kernel {
            length_scale: base * m,
            ..kernel
        };
        let Ok(gp) = Gp::fit(points, values, k) else {
            continue;
        };
        let lml = gp.log_marginal_likelihood();
        if lml > best.0 {
            best = (lml, k.length_scale);
        }
    }
    Ok(best.1)
}

/// Random multi-start followed by coordinate-wise polishing of the best
/// candidate.
fn maximize_ei(gp: &Gp, best: f64, dim: usize, cfg: &BoConfig, rng: &mut Rng) -> Vec<f64> {
    let ei = |z: &[f64]| {
        let (m, v) = gp.posterior(z);
        expected_improvement(m, v, best)
    };
    let mut z = uniform_point(dim, cfg, rng);
    let mut value = ei(&z);
    for _ in 1..cfg.candidates {
        let c = uniform_point(dim, cfg, rng);
        let v = ei(&c);
        if v > value {
            z = c;
            value = v;
        }
    }
    let width = cfg.bounds.high - cfg.bounds.low;
    let mut step = 0.05 * width;
    for _ in 0..POLISH_ROUNDS {
        let mut improved = false;
        for i in 0..dim {
            for dir in [1.0, -1.0] {
                let mut c = z.clone();
                c[i] = (c[i] + dir * step).clamp(cfg.bounds.low, cfg.bounds.high);
                let v = ei(&c);
                if v > value {
                    z = c;
                    value = v;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
            if step < 1e-4 * width {
                break;
            }
        }
    }
    z
}

/// One evaluated latent point of a discovery run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub trial: usize,
    pub z: Vec<f64>,
    pub score: f64,
    /// `None` when the decoded DAG is invalid.
    pub canonical: Option<String>,
    pub infix: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscoveryResult {
    pub best_dag: EquationDag,
    pub best_score: f64,
    pub best_z: Vec<f64>,
    pub trace: Vec<TraceEntry>,
    pub trial_index: usize,
}

/// Runs `cfg.trials` independent BO trials in the model's latent space,
/// decoding every candidate greedily under `condition` (raw features) and
/// scoring it against `ds`. Trial `t` draws from its own seed stream, so
/// the result does not depend on scheduling.
pub fn discover(
    model: &Cvae,
    ds: &Dataset,
    condition: Option<&[f64]>,
    cfg: &BoConfig,
) -> Result<DiscoveryResult, SearchError> {
    cfg.validate()?;
    // Fail early on a bad condition rather than once per thread.
    model.standardize(condition)?;
    let run_trial = |t: usize| -> Result<Vec<(TraceEntry, EquationDag)>, SearchError> {
        let mut r = rng::stream(cfg.seed, "trial", t as u64);
        let mut decoded = Vec::new();
        maximize(
            |z| {
                let dag = model.decode(z, condition, DecodeMode::Greedy)?.dag;
                let s = score(&dag, ds);
                decoded.push(dag);
                Ok(s)
            },
            model.config.latent_dim,
            cfg,
            &mut r,
        )
        .map(|obs| {
            obs.into_iter()
                .zip(decoded)
                .map(|(o, dag)| {
                    let valid = dag.is_valid();
                    let entry = TraceEntry {
                        trial: t,
                        z: o.z,
                        score: o.score,
                        canonical: valid.then(|| dag.canonical_string().ok()).flatten(),
                        infix: valid.then(|| dag.infix_string().ok()).flatten(),
                    };
                    (entry, dag)
                })
                .collect()
        })
    };
    let threads = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(cfg.trials);
    let mut per_trial: Vec<Option<Result<_, SearchError>>> =
        (0..cfg.trials).map(|_| None).collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|w| {
                let run_trial = &run_trial;
                s.spawn(move || {
                    (w..cfg.trials)
                        .step_by(threads)
                        .map(|t| (t, run_trial(t)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (t, res) in h.join().expect("trial thread panicked") {
                per_trial[t] = Some(res);
            }
        }
    });

    let mut trace = Vec::new();
    let mut best: Option<(f64, EquationDag, Vec<f64>, usize)> = None;
    for res in per_trial {
        for (entry, dag) in res.expect("every trial ran")? {
            if best.as_ref().is_none_or(|b| entry.score > b.0) {
                best = Some((entry.score, dag, entry.z.clone(), entry.trial));
            }
            trace.push(entry);
        }
    }
    let (best_score, best_dag, best_z, trial_index) = best.ok_or(SearchError::Empty)?;
    Ok(DiscoveryResult {
        best_dag,
        best_score,
        best_z,
        trace,
        trial_index,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Winner {
    pub infix: Option<String>,
    pub canonical: Option<String>,
    pub score: f64,
    pub trial: usize,
    pub z: Vec<f64>,
}

/// Serializable record of a discovery run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryReport {
    pub dataset_id: String,
    pub config: BoConfig,
    pub winner: Winner,
    pub trace: Vec<TraceEntry>,
}

impl DiscoveryReport {
    pub fn new(dataset_id: impl Into<String>, config: &BoConfig, result: &DiscoveryResult) -> Self {
        let valid = result.best_dag.is_valid();
        Self {
            dataset_id: dataset_id.into(),
            config: config.clone(),
            winner: Winner {
                infix: valid.then(|| result.best_dag.infix_string().ok()).flatten(),
                canonical: valid
                    .then(|| result.best_dag.canonical_string().ok())
                    .flatten(),
                score: result.best_score,
                trial: result.trial_index,
                z: result.best_z.clone(),
            },
            trace: result.trace.clone(),
        }
    }
}

/// Score trajectory as CSV: one row per evaluation with the running best
/// within the trial and across all trials so far.
pub fn write_trajectory_csv<W: Write>(mut out: W, trace: &[TraceEntry]) -> std::io::Result<()> {
    writeln!(out, "trial,evaluation,score,trial_best,overall_best")?;
    let (mut overall, mut trial_best, mut current, mut eval) =
        (f64::NEG_INFINITY, f64::NEG_INFINITY, usize::MAX, 0);
    for e in trace {
        if e.trial != current {
            current = e.trial;
            trial_best = f64::NEG_INFINITY;
            eval = 0;
        }
        trial_best = trial_best.max(e.score);
        overall = overall.max(e.score);
        writeln!(
            out,
            "{},{},{},{},{}",
            e.trial, eval, e.score, trial_best, overall
        )?;
        eval += 1;
    }
    Ok(())
}
