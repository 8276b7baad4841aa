use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{EmbedError, Provider};

/// Condition features per dataset id, as produced by one provider.
///
/// For the MLP providers the stored vector is the flattened encoder output;
/// the reduction to 5 or 10 values happens inside the model.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingCache {
    pub provider: Provider,
    pub entries: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingCache {
    pub fn new(provider: Provider) -> Self {
        Self {
            provider,
            entries: BTreeMap::new(),
        }
    }

    pub fn width(&self) -> Option<usize> {
        self.entries.values().next().map(Vec::len)
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.entries.get(id).map(Vec::as_slice)
    }
}

/// Writes `# provider=<name>`, an `id,c1,...,ck` header and one row per id.
pub fn write_embedding_cache(path: &Path, cache: &EmbeddingCache) -> Result<(), EmbedError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_embedding_cache_to(&mut w, cache)?;
    w.flush()?;
    Ok(())
}

/// Same format as [`write_embedding_cache`], to any writer.
pub fn write_embedding_cache_to<W: Write>(mut w: W, cache: &EmbeddingCache) -> std::io::Result<()> {
    writeln!(w, "# provider={}", cache.provider)?;
    let k = cache.width().unwrap_or(0);
    let header: Vec<String> = std::iter::once("id".to_string())
        .chain((1..=k).map(|i| format!("c{i}")))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for (id, c) in &cache.entries {
        let mut line = id.clone();
        for v in c {
            line.push(',');
            line.push_str(&v.to_string());
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn read_embedding_cache(path: &Path) -> Result<EmbeddingCache, EmbedError> {
    let reader = BufReader::new(File::open(path)?);
    let mut provider = None;
    let mut width = None;
    let mut entries = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let err = |message: String| EmbedError::CacheFormat {
            line: line_no,
            message,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(name) = rest.trim().strip_prefix("provider=") {
                provider = Some(name.trim().parse::<Provider>().map_err(err)?);
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        match width {
            None => {
                if fields.first() != Some(&"id") {
                    return Err(err("header must start with `id`".into()));
                }
                width = Some(fields.len() - 1);
            }
            Some(k) => {
                if fields.len() != k + 1 {
                    return Err(err(format!(
                        "expected {} fields, found {}",
                        k + 1,
                        fields.len()
                    )));
                }
                let c = fields[1..]
                    .iter()
                    .map(|f| {
                        f.parse::<f64>()
                            .map_err(|_| err(format!("`{f}` is not a number")))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                entries.insert(fields[0].to_string(), c);
            }
        }
    }
    let provider = provider.ok_or(EmbedError::CacheFormat {
        line: 1,
        message: "missing `# provider=` line".into(),
    })?;
    Ok(EmbeddingCache { provider, entries })
}
