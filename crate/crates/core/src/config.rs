//! Experiment files: TOML in, canonical JSON for hashing.
//!
//! Overrides use dotted keys (`profile.num_paths=5`, `detectors.1.max_iter=3`)
//! and TOML value syntax; a value that does not parse as TOML is taken as a
//! bare string.

use std::path::Path;

use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::sim::SimConfig;
use crate::{Error, Result};

/// 1-based line of a byte offset.
fn line_of(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].matches('\n').count() + 1
}

fn parse_table(src: &str, origin: &str) -> Result<Table> {
    src.parse::<Table>().map_err(|e| {
        let line = e.span().map(|s| line_of(src, s.start)).unwrap_or(0);
        Error::Config(format!("{origin}:{line}: {}", e.message()))
    })
}

/// Line of the first assignment to `key` in `src`, if it can be found.
fn line_of_key(src: &str, key: &str) -> Option<usize> {
    let leaf = key.rsplit('.').next().unwrap_or(key);
    src.lines().position(|l| {
        let t = l.trim_start();
        t.strip_prefix(leaf)
            .map(|rest| rest.trim_start().starts_with('='))
            .unwrap_or(false)
            || t.trim_start_matches('[').trim_end_matches(']') == leaf
    })
    .map(|i| i + 1)
}

fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Applies one `key=value` override to a parsed document.
pub fn apply_override(doc: &mut Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{spec}' is not key=value")))?;
    let key = key.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key '{key}' is malformed")));
    }
    let value = parse_value(raw.trim());
    let bad = |why: &str| Error::Config(format!("override '{key}': {why}"));

    let (last, path) = parts.split_last().expect("non-empty");
    let mut cur: &mut Value = doc
        .entry(path.first().copied().unwrap_or(last).to_string())
        .or_insert_with(|| Value::Table(Table::new()));
    if path.is_empty() {
        *cur = value;
        return Ok(());
    }
    for part in &path[1..] {
        cur = step(cur, part).ok_or_else(|| bad(&format!("cannot descend into '{part}'")))?;
    }
    match cur {
        Value::Table(t) => {
            t.insert(last.to_string(), value);
        }
        Value::Array(a) => {
            let i: usize = last.parse().map_err(|_| bad("array index expected"))?;
            let slot = a.get_mut(i).ok_or_else(|| bad("array index out of range"))?;
            *slot = value;
        }
        _ => return Err(bad("parent is not a table")),
    }
    Ok(())
}

fn step<'v>(v: &'v mut Value, part: &str) -> Option<&'v mut Value> {
    match v {
        Value::Table(t) => Some(
            t.entry(part.to_string())
                .or_insert_with(|| Value::Table(Table::new())),
        ),
        Value::Array(a) => a.get_mut(part.parse::<usize>().ok()?),
        _ => None,
    }
}

/// Parses a config document, applies overrides and validates it.
pub fn parse_config(src: &str, origin: &str, overrides: &[String]) -> Result<SimConfig> {
    let mut doc = parse_table(src, origin)?;
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let cfg: SimConfig = SimConfig::deserialize_table(doc).map_err(|msg| {
        Error::Config(format!("{origin}: {msg}"))
    })?;
    cfg.validate().map_err(|(key, e)| {
        let at = line_of_key(src, &key)
            .map(|l| format!("{origin}:{l}"))
            .unwrap_or_else(|| origin.to_string());
        Error::Config(format!("{at}: {key}: {e}"))
    })?;
    Ok(cfg)
}

pub fn load_config(path: &Path, overrides: &[String]) -> Result<SimConfig> {
    let src = std::fs::read_to_string(path)?;
    parse_config(&src, &path.display().to_string(), overrides)
}

impl SimConfig {
    fn deserialize_table(doc: Table) -> std::result::Result<Self, String> {
        Value::Table(doc).try_into().map_err(|e: toml::de::Error| e.message().to_string())
    }
}

/// Serialises a config back to TOML.
pub fn to_toml(cfg: &SimConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::Serde(e.to_string()))
}

/// Canonical form: compact JSON with keys in lexicographic order and every
/// default made explicit. `workers` is left out since it cannot change any
/// result.
pub fn canonical_json(cfg: &SimConfig) -> Result<String> {
    // serde_json::Value keeps object keys sorted
    let mut v = serde_json::to_value(cfg)?;
    if let Some(obj) = v.as_object_mut() {
        obj.remove("workers");
    }
    Ok(serde_json::to_string(&v)?)
}

/// Hex SHA-256 of the canonical form.
pub fn config_hash(cfg: &SimConfig) -> Result<String> {
    Ok(hex::encode(Sha256::digest(canonical_json(cfg)?.as_bytes())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::ChirpSetting;

    const SAMPLE: &str = r#"
frame_len = 16
snr_db_grid = [4.0, 8.0]
num_frames = 10
master_seed = 3

[profile]
num_paths = 3
max_delay = 4
max_doppler = 1

[[detectors]]
kind = "lmmse"

[[detectors]]
kind = "vb"
max_iter = 5
"#;

    #[test]
    fn parses_with_defaults() {
        let cfg = parse_config(SAMPLE, "t", &[]).unwrap();
        assert_eq!(cfg.frame_len, 16);
        assert_eq!(cfg.constellation_k, 4);
        assert_eq!(cfg.chirp, ChirpSetting::default());
        assert_eq!(cfg.detectors[1].label(), "vb5");
        assert_eq!(cfg.afdm_params().unwrap().l_cpp, 4);
    }

    #[test]
    fn round_trip_is_a_fixed_point() {
        let cfg = parse_config(SAMPLE, "t", &[]).unwrap();
        let again = parse_config(&to_toml(&cfg).unwrap(), "t", &[]).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(canonical_json(&cfg).unwrap(), canonical_json(&again).unwrap());
        let mut explicit = cfg.clone();
        explicit.chirp = ChirpSetting::Explicit { c1: 0.125, c2: 0.01 };
        let back = parse_config(&to_toml(&explicit).unwrap(), "t", &[]).unwrap();
        assert_eq!(explicit, back);
    }

    #[test]
    fn hash_ignores_formatting_but_not_content() {
        let a = parse_config(SAMPLE, "t", &[]).unwrap();
        let reformatted = SAMPLE.replace("frame_len = 16", "frame_len=16  # comment");
        let b = parse_config(&reformatted, "t", &[]).unwrap();
        assert_eq!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        let c = parse_config(SAMPLE, "t", &["master_seed=4".into()]).unwrap();
        assert_ne!(config_hash(&a).unwrap(), config_hash(&c).unwrap());
        assert_eq!(config_hash(&a).unwrap().len(), 64);
        let d = parse_config(SAMPLE, "t", &["workers=3".into()]).unwrap();
        assert_eq!(config_hash(&a).unwrap(), config_hash(&d).unwrap());
    }

    #[test]
    fn overrides() {
        let o = |s: &[&str]| {
            let v: Vec<String> = s.iter().map(|x| x.to_string()).collect();
            parse_config(SAMPLE, "t", &v)
        };
        assert_eq!(o(&["snr_db_grid=[10]"]).unwrap().snr_db_grid, vec![10.0]);
        assert_eq!(o(&["profile.num_paths=1"]).unwrap().profile.num_paths, 1);
        assert_eq!(o(&["detectors.1.max_iter=3"]).unwrap().detectors[1].label(), "vb3");
        assert_eq!(
            o(&["detectors.1.interference=all_columns"]).unwrap().detectors[1].config.interference,
            crate::detectors::InterferenceModel::AllColumns
        );
        assert!(o(&["nonsense"]).is_err());
        assert!(o(&["detectors.7.max_iter=3"]).is_err());
        assert!(o(&["frame_len.x=3"]).is_err());
    }

    #[test]
    fn errors_are_line_anchored() {
        let broken = SAMPLE.replace("num_frames = 10", "num_frames = = 10");
        let e = parse_config(&broken, "cfg.toml", &[]).unwrap_err().to_string();
        assert!(e.contains("cfg.toml:4"), "{e}");
        let invalid = SAMPLE.replace("num_frames = 10", "num_frames = 0");
        let e = parse_config(&invalid, "cfg.toml", &[]).unwrap_err().to_string();
        assert!(e.contains("cfg.toml:4") && e.contains("num_frames"), "{e}");
        let unknown = format!("{SAMPLE}\nbogus = 1\n");
        assert!(parse_config(&unknown, "cfg.toml", &[]).is_err());
    }
}
