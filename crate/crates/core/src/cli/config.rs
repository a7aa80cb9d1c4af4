//! Strict JSON configuration documents.
//!
//! Every section may be omitted and falls back to its defaults. Unknown keys
//! are rejected, and the error names the dotted path of the offending key.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result, Violation};
use crate::schedule::ScheduleSpec;
use crate::trainer::{TaskSpec, TrainerConfig};
use crate::util::fnv1a64;

/// Weight decay used for the language-model task when the document leaves it
/// unset. The quadratic has no use for it and defaults to zero.
pub const LM_WEIGHT_DECAY: f64 = 0.1;

fn config_error(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

fn parse_value(text: &str) -> Result<Value> {
    if text.trim().is_empty() {
        return Ok(Value::Object(Default::default()));
    }
    serde_json::from_str(text).map_err(|e| config_error(".", e.to_string()))
}

/// Deserializes `value` into `T`, reporting the path of the first failure.
pub fn from_value<T: DeserializeOwned>(value: Value) -> Result<T> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        config_error(path, e.into_inner().to_string())
    })
}

fn section_errors(section: &str, violations: Vec<Violation>) -> Result<()> {
    match violations.into_iter().next() {
        None => Ok(()),
        Some(v) => Err(config_error(section, v.to_string())),
    }
}

fn validate_sections(cfg: &TrainerConfig) -> Result<()> {
    section_errors("task", cfg.task.violations())?;
    // the remaining checks span sections; report them under the root
    section_errors(".", cfg.violations())
}

/// Parses a trainer configuration document.
pub fn parse_config(text: &str) -> Result<TrainerConfig> {
    config_from_value(parse_value(text)?)
}

/// Same as [`parse_config`] for an already-parsed document.
pub fn config_from_value(value: Value) -> Result<TrainerConfig> {
    if !value.is_object() {
        return Err(config_error(".", "configuration must be a JSON object"));
    }
    let decay_given = value
        .pointer("/optimizer/weight_decay")
        .is_some();
    let mut cfg: TrainerConfig = from_value(value)?;
    if !decay_given && matches!(cfg.task, TaskSpec::SyntheticLm { .. }) {
        cfg.optimizer.weight_decay = LM_WEIGHT_DECAY;
    }
    validate_sections(&cfg)?;
    Ok(cfg)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<TrainerConfig> {
    parse_config(&std::fs::read_to_string(path)?)
}

/// Fully-expanded document for `cfg`; parses back to the same value.
pub fn dump_config(cfg: &TrainerConfig) -> String {
    to_pretty(cfg)
}

pub(crate) fn to_pretty<T: Serialize>(x: &T) -> String {
    let mut s = serde_json::to_string_pretty(x).expect("config types always serialize");
    s.push('\n');
    s
}

/// A schedule document is either a bare schedule or a trainer configuration,
/// in which case its `schedule` section is used.
pub fn parse_schedule(text: &str) -> Result<ScheduleSpec> {
    let value = parse_value(text)?;
    let spec = if value.get("kind").is_some() {
        from_value::<ScheduleSpec>(value)?
    } else {
        parse_config(text)?.schedule
    };
    section_errors("schedule", spec.validate().err().unwrap_or_default())?;
    Ok(spec)
}

/// Digest of the canonical (key-sorted, compact) JSON form of `x`.
pub fn config_digest<T: Serialize>(x: &T) -> u64 {
    let canonical = serde_json::to_value(x).expect("config types always serialize");
    // serde_json's default map is ordered by key, so this is canonical
    fnv1a64(canonical.to_string().as_bytes())
}

/// Sets `dotted.path` in `doc` to `raw`, parsed as JSON where possible and as
/// a bare string otherwise. Intermediate objects are created as needed.
pub fn set_path(doc: &mut Value, dotted: &str, raw: &str) -> Result<()> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let mut keys = dotted.split('.').peekable();
    while let Some(key) = keys.next() {
        if key.is_empty() {
            return Err(config_error(dotted, "empty key in override path"));
        }
        let obj = match node {
            Value::Object(m) => m,
            _ => return Err(config_error(dotted, format!("`{key}` is not inside an object"))),
        };
        if keys.peek().is_none() {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(key.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

/// Parses `text` as a raw document (empty text is an empty object).
pub fn parse_document(text: &str) -> Result<Value> {
    parse_value(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::ScheduleKind;

    #[test]
    fn empty_document_is_all_defaults() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, TrainerConfig::default());
        assert_eq!(parse_config("{}").unwrap(), cfg);
        let dumped: Value = serde_json::from_str(&dump_config(&cfg)).unwrap();
        for key in ["seed", "task", "schedule", "optimizer", "batch_size", "eval_every", "swa"] {
            assert!(dumped.get(key).is_some(), "{key} missing");
        }
    }

    #[test]
    fn unknown_key_for_kind_names_path() {
        let text = r#"{"schedule": {"kind": "cosine", "decay_steps": 10}}"#;
        match parse_config(text) {
            Err(Error::Config { path, message }) => {
                assert!(path.starts_with("schedule"), "{path}");
                assert!(message.contains("decay_steps"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        match parse_config(r#"{"optimizer": {"beta3": 0.5}}"#) {
            Err(Error::Config { path, message }) => {
                assert_eq!(path, "optimizer.beta3");
                assert!(message.contains("beta3"));
            }
            other => panic!("{other:?}"),
        }
        assert!(parse_config(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn validator_violations_are_config_errors() {
        let text = r#"{"schedule": {"kind": "constant_cooldown", "total_steps": 100, "warmup_steps": 50, "decay_steps": 60}}"#;
        match parse_config(text) {
            Err(Error::Config { message, .. }) => assert!(message.contains("decay_exceeds_remaining")),
            other => panic!("{other:?}"),
        }
        let text = r#"{"task": {"kind": "synthetic_lm", "vocab": 1}}"#;
        match parse_config(text) {
            Err(Error::Config { path, .. }) => assert_eq!(path, "task"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn weight_decay_default_depends_on_task() {
        let lm = parse_config(r#"{"task": {"kind": "synthetic_lm"}}"#).unwrap();
        assert_eq!(lm.optimizer.weight_decay, LM_WEIGHT_DECAY);
        let lm0 = parse_config(r#"{"task": {"kind": "synthetic_lm"}, "optimizer": {"weight_decay": 0}}"#).unwrap();
        assert_eq!(lm0.optimizer.weight_decay, 0.0);
        assert_eq!(parse_config("{}").unwrap().optimizer.weight_decay, 0.0);
    }

    #[test]
    fn dump_load_round_trip() {
        let text = r#"{"seed": 9, "task": {"kind": "synthetic_lm", "hidden": 16},
            "schedule": {"kind": "constant_cooldown", "peak_lr": 0.003, "decay_steps": 500,
                         "shape": {"power": 0.7}},
            "swa": {"window": 50}}"#;
        let cfg = parse_config(text).unwrap();
        let dumped = dump_config(&cfg);
        let again = parse_config(&dumped).unwrap();
        assert_eq!(cfg, again);
        let a: Value = serde_json::from_str(&dumped).unwrap();
        let b: Value = serde_json::from_str(&dump_config(&again)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn digest_ignores_key_order() {
        let a = parse_document(r#"{"seed": 1, "batch_size": 8}"#).unwrap();
        let b = parse_document(r#"{"batch_size": 8, "seed": 1}"#).unwrap();
        assert_eq!(config_digest(&a), config_digest(&b));
        let c = parse_document(r#"{"batch_size": 8, "seed": 2}"#).unwrap();
        assert_ne!(config_digest(&a), config_digest(&c));
    }

    #[test]
    fn schedule_documents() {
        let s = parse_schedule(r#"{"kind": "cosine", "total_steps": 1000, "warmup_steps": 10}"#).unwrap();
        assert!(matches!(s.kind, ScheduleKind::Cosine { .. }));
        let s = parse_schedule("{}").unwrap();
        assert_eq!(s, ScheduleSpec::default());
        assert!(parse_schedule(r#"{"kind": "constant", "peak_lr": -1}"#).is_err());
    }

    #[test]
    fn overrides() {
        let mut doc = parse_document("{}").unwrap();
        set_path(&mut doc, "schedule.peak_lr", "0.002").unwrap();
        set_path(&mut doc, "schedule.kind", "constant").unwrap();
        set_path(&mut doc, "seed", "4").unwrap();
        let cfg: TrainerConfig = from_value(doc.clone()).unwrap();
        assert_eq!(cfg.schedule.peak_lr, 0.002);
        assert_eq!(cfg.seed, 4);
        set_path(&mut doc, "seed.x", "1").unwrap_err();
    }
}
