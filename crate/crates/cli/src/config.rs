//! `key = value` config files. Entries are spliced into the argument list
//! right after the subcommand, so flags given on the command line, which
//! come later, override them.

use std::ffi::OsString;
use std::path::Path;

use crate::CliError;

/// One parsed config entry. Boolean `true` becomes a bare flag and `false`
/// is dropped.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Entry {
    pub key: String,
    pub value: String,
}

pub fn parse_config(text: &str, origin: &Path) -> Result<Vec<Entry>, CliError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CliError::User(format!(
                "{}:{}: expected `key = value`",
                origin.display(),
                i + 1
            ))
        })?;
        let key = k.trim().replace('_', "-");
        if key.is_empty() || key == "config" {
            return Err(CliError::User(format!(
                "{}:{}: invalid key `{}`",
                origin.display(),
                i + 1,
                k.trim()
            )));
        }
        out.push(Entry {
            key,
            value: v.trim().to_string(),
        });
    }
    Ok(out)
}

/// Removes `--config <file>` from `args` and inserts the file's entries as
/// flags ahead of the remaining ones.
pub fn expand_args(args: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let mut rest = Vec::with_capacity(args.len());
    let mut config = None;
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            let path = it
                .next()
                .ok_or_else(|| CliError::User("--config needs a file".into()))?;
            config = Some(std::path::PathBuf::from(path));
        } else if let Some(p) = a.to_str().and_then(|s| s.strip_prefix("--config=")) {
            config = Some(p.into());
        } else {
            rest.push(a);
        }
    }
    let Some(path) = config else { return Ok(rest) };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::User(format!("cannot read config {}: {e}", path.display())))?;
    let mut injected = Vec::new();
    for Entry { key, value } in parse_config(&text, &path)? {
        match value.as_str() {
            "true" => injected.push(OsString::from(format!("--{key}"))),
            "false" => {}
            _ => {
                injected.push(OsString::from(format!("--{key}")));
                injected.push(OsString::from(value));
            }
        }
    }
    if rest.len() < 2 {
        return Err(CliError::User("--config needs a subcommand".into()));
    }
    let tail = rest.split_off(2);
    rest.extend(injected);
    rest.extend(tail);
    Ok(rest)
}
