use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{sample_equation, GenConfig, GenError};
use crate::eqdag::{DagRecord, EquationDag};
use crate::rng;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedDag {
    pub id: String,
    pub dag: EquationDag,
}

#[derive(Clone, Debug, Default)]
pub struct Corpus {
    pub train: Vec<NamedDag>,
    pub test: Vec<NamedDag>,
    /// Canonical strings of the training equations.
    pub canonical_index: BTreeSet<String>,
}

impl Corpus {
    pub fn from_splits(train: Vec<NamedDag>, test: Vec<NamedDag>) -> Self {
        let canonical_index = train
            .iter()
            .map(|e| {
                e.dag
                    .canonical_string()
                    .expect("corpus equations are valid")
            })
            .collect();
        Self {
            train,
            test,
            canonical_index,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all(&self) -> impl Iterator<Item = &NamedDag> {
        self.train.iter().chain(self.test.iter())
    }
}

/// Draws equations until `n` distinct canonical strings are collected, then
/// holds out a random tenth as the test split.
///
/// Draw `i` uses its own generator derived from `(config.seed, i)`.
pub fn generate_corpus(n: usize, config: &GenConfig) -> Result<Corpus, GenError> {
    if n < 10 {
        return Err(GenError::InvalidConfig(format!(
            "corpus size must be at least 10, got {n}"
        )));
    }
    config.validate()?;
    let max_draws = 50 * n;
    let mut seen = HashSet::new();
    let mut unique = Vec::with_capacity(n);
    let mut draws = 0;
    while unique.len() < n {
        if draws >= max_draws {
            return Err(GenError::GenerationExhausted {
                wanted: n,
                found: unique.len(),
                draws,
            });
        }
        let mut r = rng::stream(config.seed, "equation", draws as u64);
        draws += 1;
        let dag = sample_equation(&mut r, config)?;
        let key = dag.canonical_string().expect("sampled DAG is valid");
        if seen.insert(key) {
            unique.push(NamedDag {
                id: format!("eq-{:06}", unique.len()),
                dag,
            });
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(config.seed, "split", 0));
    let n_test = ((n as f64) * 0.1).round() as usize;
    let mut is_test = vec![false; n];
    for &i in &order[..n_test] {
        is_test[i] = true;
    }
    let (test, train): (Vec<_>, Vec<_>) = unique
        .into_iter()
        .enumerate()
        .partition(|(i, _)| is_test[*i]);
    Ok(Corpus::from_splits(
        train.into_iter().map(|(_, e)| e).collect(),
        test.into_iter().map(|(_, e)| e).collect(),
    ))
}

/// First line of a corpus file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusHeader {
    pub split: String,
    pub count: usize,
    pub gen_config: GenConfig,
    pub config_hash: String,
    pub code_version: String,
}

pub fn write_corpus_file(
    path: &Path,
    header: &CorpusHeader,
    entries: &[NamedDag],
) -> Result<(), GenError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "{}",
        serde_json::to_string(header).expect("header serializes")
    )?;
    for e in entries {
        let record = DagRecord::from_dag(e.id.clone(), &e.dag).expect("corpus equations are valid");
        writeln!(w, "{}", record.to_line())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_corpus_file(path: &Path) -> Result<(CorpusHeader, Vec<NamedDag>), GenError> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let first = lines.next().ok_or(GenError::CorpusFormat {
        line: 1,
        message: "empty corpus file".into(),
    })??;
    let header: CorpusHeader =
        serde_json::from_str(&first).map_err(|e| GenError::CorpusFormat {
            line: 1,
            message: e.to_string(),
        })?;
    let mut entries = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = DagRecord::from_line(&line).map_err(|e| GenError::CorpusFormat {
            line: i + 2,
            message: e.to_string(),
        })?;
        entries.push(NamedDag {
            id: record.id.clone(),
            dag: record.to_dag(),
        });
    }
    Ok((header, entries))
}
