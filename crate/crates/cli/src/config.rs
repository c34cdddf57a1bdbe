//! `--config` files: `key = value` lines whose keys are long flag names.
//!
//! The pairs are spliced into the argument list directly after the subcommand,
//! so any flag given on the command line (parsed later) overrides them.

use std::ffi::OsString;
use std::path::Path;

use anyhow::{bail, Context, Result};

pub fn parse_config(text: &str, origin: &Path) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("{}:{}: expected key = value", origin.display(), lineno + 1);
        };
        let key = key.trim().trim_start_matches("--");
        if key.is_empty() || key == "config" {
            bail!("{}:{}: invalid key {key:?}", origin.display(), lineno + 1);
        }
        pairs.push((key.to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

/// Removes `--config PATH` (or `--config=PATH`) from `args` and inserts the
/// file's pairs right after the subcommand token.
pub fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut out = Vec::with_capacity(args.len());
    let mut config = None;
    let mut iter = args.into_iter();
    while let Some(a) = iter.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            config = Some(iter.next().context("--config needs a path")?);
        } else if let Some(p) = s.strip_prefix("--config=") {
            config = Some(OsString::from(p));
        } else {
            out.push(a);
        }
    }
    let Some(path) = config else {
        return Ok(out);
    };
    let path = Path::new(&path);
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config file {}", path.display()))?;
    let pairs = parse_config(&text, path)?;
    let sub = subcommand_position(&out).context("--config requires a subcommand")?;
    let injected = pairs
        .into_iter()
        .map(|(k, v)| OsString::from(format!("--{k}={v}")));
    out.splice(sub + 1..sub + 1, injected);
    Ok(out)
}

const SUBCOMMANDS: [&str; 6] = ["train", "analyze", "retrain", "oracle", "report", "replay"];

fn subcommand_position(args: &[OsString]) -> Option<usize> {
    args.iter()
        .skip(1)
        .position(|a| SUBCOMMANDS.contains(&a.to_string_lossy().as_ref()))
        .map(|p| p + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_pairs_and_comments() {
        let pairs = parse_config("# c\nseed = 3\n\n--epochs=5\n", Path::new("x")).unwrap();
        assert_eq!(
            pairs,
            vec![("seed".into(), "3".into()), ("epochs".into(), "5".into())]
        );
        assert!(parse_config("seed 3", Path::new("x")).is_err());
    }

    #[test]
    fn splices_after_subcommand() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        std::fs::write(&cfg, "seed = 4\n").unwrap();
        let args: Vec<OsString> = ["oinfo", "--jobs", "1", "train", "--config", cfg.to_str().unwrap(), "--seed", "9"]
            .iter()
            .map(OsString::from)
            .collect();
        let out: Vec<String> = expand_config(args)
            .unwrap()
            .into_iter()
            .map(|a| a.into_string().unwrap())
            .collect();
        assert_eq!(out, ["oinfo", "--jobs", "1", "train", "--seed=4", "--seed", "9"]);
    }
}
