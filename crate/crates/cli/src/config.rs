//! Layered configuration: built-in defaults, then a TOML file, then
//! `--set section.key=value` overrides.

use std::path::Path;

use advsamp::alloop::LoopConfig;
use advsamp::io::read_text;
use advsamp::{Error, Result};
use toml::{Table, Value};

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// `key=value` with the value read as a TOML literal, or as a bare string
/// when it is not one.
fn parse_override(text: &str) -> Result<(Vec<String>, Value)> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{text}` is not key=value")))?;
    let path: Vec<String> = key.trim().split('.').map(|s| s.trim().to_string()).collect();
    if path.iter().any(String::is_empty) {
        return Err(Error::Config(format!("override `{text}` has an empty key")));
    }
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(raw.to_string()),
    };
    Ok((path, value))
}

fn apply_override(table: &mut Table, path: &[String], value: Value) -> Result<()> {
    let (last, parents) = path.split_last().expect("nonempty key");
    let mut cur = table;
    for p in parents {
        cur = match cur.get_mut(p) {
            Some(Value::Table(t)) => t,
            _ => return Err(Error::Config(format!("unknown section `{}`", path.join(".")))),
        };
    }
    if !cur.contains_key(last) && !is_optional_key(path) {
        return Err(Error::Config(format!("unknown key `{}`", path.join("."))));
    }
    cur.insert(last.clone(), value);
    Ok(())
}

fn is_optional_key(path: &[String]) -> bool {
    matches!(
        path.iter().map(String::as_str).collect::<Vec<_>>().as_slice(),
        ["potential", "energy_ceiling"] | ["train", "plateau_patience"]
    )
}

fn to_table(cfg: &LoopConfig) -> Table {
    Table::try_from(cfg).expect("configs serialize")
}

/// Resolves a config from `base`, an optional file and the overrides, and
/// validates it.
pub fn resolve(base: &LoopConfig, file: Option<&Path>, overrides: &[String]) -> Result<LoopConfig> {
    let mut table = to_table(base);
    if let Some(path) = file {
        let text = read_text(path)?;
        let user: Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(format!("{}: {}", path.display(), e.message())))?;
        merge(&mut table, user);
    }
    for o in overrides {
        let (path, value) = parse_override(o)?;
        apply_override(&mut table, &path, value)?;
    }
    let cfg = deserialize(&table.to_string())?;
    cfg.validate()?;
    Ok(cfg)
}

/// Dotted key of the entry whose line contains byte `pos`.
fn key_at(text: &str, pos: usize) -> Option<String> {
    let mut section = String::new();
    let mut start = 0;
    for line in text.split_inclusive('\n') {
        let t = line.trim();
        if t.starts_with('[') && t.ends_with(']') {
            section = t.trim_matches(|c| c == '[' || c == ']').trim().to_string();
        }
        if pos < start + line.len() {
            let key = t.split_once('=')?.0.trim();
            return Some(if section.is_empty() { key.to_string() } else { format!("{section}.{key}") });
        }
        start += line.len();
    }
    None
}

fn deserialize(text: &str) -> Result<LoopConfig> {
    toml::from_str(text).map_err(|e| {
        let key = e.span().and_then(|s| key_at(text, s.start));
        Error::Config(match key {
            Some(k) => format!("`{k}`: {}", e.message()),
            None => e.message().to_string(),
        })
    })
}

/// Full effective config as TOML text.
pub fn snapshot(cfg: &LoopConfig) -> String {
    toml::to_string(cfg).expect("configs serialize")
}

pub fn from_snapshot(text: &str) -> Result<LoopConfig> {
    let cfg = deserialize(text)?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn empty_file_gives_defaults() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(b"").unwrap();
        let cfg = resolve(&LoopConfig::default(), Some(f.path()), &[]).unwrap();
        assert_eq!(cfg, LoopConfig::default());
        assert_eq!(cfg.committee.members, 5);
        assert_eq!(cfg.committee.hidden_layers, 4);
        assert_eq!(cfg.committee.hidden_units, 1024);
        assert_eq!(cfg.train.batch_size, 35);
        assert_eq!(cfg.train.learning_rate, 1e-3);
        assert_eq!(cfg.train.epochs, 600);
        assert_eq!(cfg.attack.kt, 5.0);
        assert_eq!(cfg.attack.learning_rate, 0.003);
        assert_eq!(cfg.selection.distance_threshold, 0.02);
        assert_eq!(cfg.selection.uncertainty_percentile, 80.0);
    }

    #[test]
    fn overrides_apply_and_validate() {
        let d = LoopConfig::default();
        let cfg = resolve(&d, None, &["committee.hidden_units=256".into(), "strategy=random".into()]).unwrap();
        assert_eq!(cfg.committee.hidden_units, 256);
        assert_eq!(cfg.strategy, advsamp::alloop::Strategy::Random);
        assert!(matches!(
            resolve(&d, None, &["committee.members=1".into()]),
            Err(Error::Config(_))
        ));
        let err = resolve(&d, None, &["committee.widht=3".into()]).unwrap_err();
        assert!(err.to_string().contains("committee.widht"));
        let err = resolve(&d, None, &["train.epochs=\"many\"".into()]).unwrap_err();
        assert!(err.to_string().contains("epochs"), "{err}");
        let ceiling = resolve(&d, None, &["potential.energy_ceiling=50".into()]).unwrap();
        assert_eq!(ceiling.potential.energy_ceiling, Some(50.0));
    }

    #[test]
    fn snapshot_round_trips() {
        let sets = ["attack.steps=10".to_string(), "seed=7".to_string()];
        let a = resolve(&LoopConfig::default(), None, &sets).unwrap();
        let b = resolve(&LoopConfig::default(), None, &sets).unwrap();
        assert_eq!(snapshot(&a), snapshot(&b));
        assert_eq!(from_snapshot(&snapshot(&a)).unwrap(), a);
        let demo = LoopConfig::torsion_demo();
        assert_eq!(from_snapshot(&snapshot(&demo)).unwrap(), demo);
    }
}
