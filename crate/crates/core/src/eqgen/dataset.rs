use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;

use super::{GenError, Interval};
use crate::eqdag::EquationDag;

/// Inputs `x` (one row per sample) and targets `y`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub source: Option<EquationDag>,
}

impl Dataset {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<f64>) -> Self {
        Self { x, y, source: None }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.first().map_or(0, Vec::len)
    }

    /// Rows reordered by `perm`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            x: perm.iter().map(|&i| self.x[i].clone()).collect(),
            y: perm.iter().map(|&i| self.y[i]).collect(),
            source: self.source.clone(),
        }
    }
}

/// Draws `n` rows uniformly from `input_box`, rejecting rows where the
/// equation is undefined.
pub fn synthesize_dataset<R: Rng + ?Sized>(
    dag: &EquationDag,
    n: usize,
    input_box: &[Interval],
    rng: &mut R,
) -> Result<Dataset, GenError> {
    let program = dag.compile().map_err(|e| {
        GenError::InvalidConfig(format!("cannot synthesize from an invalid DAG: {e}"))
    })?;
    if input_box.len() < dag.num_inputs {
        return Err(GenError::InvalidConfig(format!(
            "input box has {} intervals for {} inputs",
            input_box.len(),
            dag.num_inputs
        )));
    }
    let max_attempts = 100 * n.max(1);
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut scratch = Vec::new();
    let mut attempts = 0;
    while y.len() < n {
        if attempts >= max_attempts {
            return Err(GenError::UndefinedAlmostEverywhere {
                accepted: y.len(),
                attempts,
            });
        }
        attempts += 1;
        let row: Vec<f64> = input_box[..dag.num_inputs]
            .iter()
            .map(|iv| rng.random_range(iv.low..iv.high))
            .collect();
        if let Ok(v) = program.eval_into(&row, &mut scratch) {
            x.push(row);
            y.push(v);
        }
    }
    Ok(Dataset {
        x,
        y,
        source: Some(dag.clone()),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetFile {
    pub source_id: Option<String>,
    pub dataset: Dataset,
}

/// Writes `# source=<id>`, a `x1,...,xd,y` header and one row per sample.
pub fn write_dataset_file(
    path: &Path,
    source_id: Option<&str>,
    ds: &Dataset,
) -> Result<(), GenError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset(&mut w, source_id, ds)?;
    w.flush()?;
    Ok(())
}

/// Same format as [`write_dataset_file`], to any writer.
pub fn write_dataset<W: Write>(
    mut w: W,
    source_id: Option<&str>,
    ds: &Dataset,
) -> std::io::Result<()> {
    if let Some(id) = source_id {
        writeln!(w, "# source={id}")?;
    }
    let d = ds.dim();
    let header: Vec<String> = (1..=d)
        .map(|i| format!("x{i}"))
        .chain(std::iter::once("y".into()))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    let mut line = String::new();
    for (row, y) in ds.x.iter().zip(&ds.y) {
        line.clear();
        for v in row {
            line.push_str(&v.to_string());
            line.push(',');
        }
        line.push_str(&y.to_string());
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn read_dataset_file(path: &Path) -> Result<DatasetFile, GenError> {
    let reader = BufReader::new(File::open(path)?);
    parse_dataset(reader)
}

fn parse_dataset(reader: impl BufRead) -> Result<DatasetFile, GenError> {
    let mut source_id = None;
    let mut width = None;
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            if let Some(id) = comment.trim().strip_prefix("source=") {
                source_id = Some(id.trim().to_string());
            }
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        match width {
            None => {
                let parse_err = |message: String| GenError::Parse {
                    line: line_no,
                    message,
                };
                if fields.last() != Some(&"y") {
                    return Err(parse_err("header must end with a `y` column".into()));
                }
                for (j, name) in fields[..fields.len() - 1].iter().enumerate() {
                    if *name != format!("x{}", j + 1) {
                        return Err(parse_err(format!(
                            "expected column `x{}`, found `{name}`",
                            j + 1
                        )));
                    }
                }
                if fields.len() < 2 {
                    return Err(parse_err("at least one input column is required".into()));
                }
                width = Some(fields.len());
            }
            Some(w) => {
                if fields.len() != w {
                    return Err(GenError::Parse {
                        line: line_no,
                        message: format!("expected {w} fields, found {}", fields.len()),
                    });
                }
                let mut values = Vec::with_capacity(w);
                for f in &fields {
                    let v: f64 = f.parse().map_err(|_| GenError::Parse {
                        line: line_no,
                        message: format!("`{f}` is not a number"),
                    })?;
                    if !v.is_finite() {
                        return Err(GenError::Parse {
                            line: line_no,
                            message: format!("non-finite value `{f}`"),
                        });
                    }
                    values.push(v);
                }
                y.push(values.pop().expect("nonempty row"));
                x.push(values);
            }
        }
    }
    if width.is_none() {
        return Err(GenError::Parse {
            line: 1,
            message: "missing header".into(),
        });
    }
    if y.is_empty() {
        return Err(GenError::Parse {
            line: 2,
            message: "dataset has no rows".into(),
        });
    }
    Ok(DatasetFile {
        source_id,
        dataset: Dataset::new(x, y),
    })
}
