use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use trustscore::data::CorruptionKind;
use trustscore::shift::DEFAULT_LEVELS;
use trustscore::training::TrainConfig;
use trustscore::trust::TrustConfig;

use crate::error::CliError;

/// Parameters of `train`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRun {
    pub hidden: Vec<usize>,
    pub dropout_rate: f64,
    pub init_seed: u64,
    pub train: TrainConfig,
}

impl Default for TrainRun {
    fn default() -> Self {
        TrainRun {
            hidden: vec![128, 64],
            dropout_rate: 0.2,
            init_seed: 42,
            train: TrainConfig::default(),
        }
    }
}

/// Parameters of `report`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub kind: CorruptionKind,
    pub levels: Vec<f64>,
    pub seed: u64,
    pub bins: usize,
    pub trust: TrustConfig,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            kind: CorruptionKind::Gaussian,
            levels: DEFAULT_LEVELS.to_vec(),
            seed: 42,
            bins: 50,
            trust: TrustConfig::default(),
        }
    }
}

/// Config from `path`, or the defaults when no file is given.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::new("config", format!("{}: {e}", path.display())))
}

/// A parsed `key=v1,v2,...` flag. Values keep their original spelling for file names.
#[derive(Clone, Debug, PartialEq)]
pub struct Sweep {
    pub key: String,
    pub values: Vec<(String, Value)>,
}

pub fn parse_sweep(flag: &str) -> Result<Sweep, CliError> {
    let bad = || CliError::new("config", format!("sweep must look like key=v1,v2,..., got {flag:?}"));
    let (key, list) = flag.split_once('=').ok_or_else(bad)?;
    let key = key.trim();
    if key.is_empty() || list.trim().is_empty() {
        return Err(bad());
    }
    let values = list
        .split(',')
        .map(|raw| {
            let raw = raw.trim();
            if raw.is_empty() {
                return Err(bad());
            }
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            Ok((raw.to_string(), value))
        })
        .collect::<Result<_, _>>()?;
    Ok(Sweep {
        key: key.to_string(),
        values,
    })
}

/// `cfg` with the top-level field `key` replaced, re-validated through deserialization.
pub fn patch<T: Serialize + DeserializeOwned>(cfg: &T, key: &str, value: &Value) -> Result<T, CliError> {
    let mut doc = serde_json::to_value(cfg)?;
    let fields = match doc.as_object_mut() {
        Some(fields) if !fields.is_empty() => fields,
        _ => return Err(CliError::new("config", "this method has no sweepable parameters")),
    };
    match fields.get_mut(key) {
        Some(slot) => *slot = value.clone(),
        None => {
            let known: Vec<&String> = fields.keys().collect();
            return Err(CliError::new(
                "config",
                format!("unknown sweep key {key:?}; expected one of {known:?}"),
            ));
        }
    }
    serde_json::from_value(doc).map_err(|e| CliError::new("config", format!("sweep {key}={value}: {e}")))
}

/// Single-line JSON followed by a newline.
pub fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    fs::write(path, format!("{value}\n")).map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn sweep_values_keep_spelling() {
        let s = parse_sweep("T=5,100").unwrap();
        assert_eq!(s.key, "T");
        assert_eq!(s.values, vec![("5".into(), json!(5)), ("100".into(), json!(100))]);
        let s = parse_sweep("l1_mode=proximal").unwrap();
        assert_eq!(s.values[0].1, json!("proximal"));
        for bad in ["T", "=1", "T=", "T=1,,2"] {
            assert!(parse_sweep(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn patch_replaces_one_field() {
        let cfg = TrustConfig::default();
        let hot = patch(&cfg, "T", &json!(100)).unwrap();
        assert_eq!(hot.temperature, 100.0);
        assert_eq!(TrustConfig { temperature: 5.0, ..hot }, cfg);
        let err = patch(&cfg, "temperature", &json!(1)).unwrap_err();
        assert!(err.message.contains("lambda"));
        assert!(patch(&cfg, "max_iters", &json!("many")).is_err());
    }

    #[test]
    fn configs_reject_unknown_fields() {
        assert!(serde_json::from_str::<TrainRun>(r#"{"hiden": [3]}"#).is_err());
        let run: TrainRun = serde_json::from_str(r#"{"train": {"epochs": 3}}"#).unwrap();
        assert_eq!(run.train.epochs, 3);
        assert_eq!(run.hidden, vec![128, 64]);
    }
}
