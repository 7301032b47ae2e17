use std::fmt;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn to_json(&self) -> String {
        let (kind, msg) = match self {
            CliError::Config(m) => ("config", m),
            CliError::Numerical(m) => ("numerical", m),
        };
        json!({ "error": { "kind": kind, "code": self.code(), "message": msg } }).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

impl From<convid_core::Error> for CliError {
    fn from(e: convid_core::Error) -> CliError {
        if e.is_config() {
            CliError::Config(e.to_string())
        } else {
            CliError::Numerical(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> CliError {
        CliError::Config(format!("I/O error: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> CliError {
        CliError::Config(format!("JSON error: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> CliError {
        CliError::Config(format!("CSV error: {e}"))
    }
}

pub fn load_overrides(path: &Path) -> Result<Map<String, Value>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(CliError::Config(format!("config {} is not a JSON object", path.display()))),
        Err(e) => Err(CliError::Config(format!("config {}: {e}", path.display()))),
    }
}

/// Overlays config keys on the parsed flags. Keys may use `-` or `_`; nested
/// option groups are flattened, so `grid` and `seed` sit at the same level.
pub fn apply<T: Serialize + DeserializeOwned>(args: T, overrides: Option<&Map<String, Value>>) -> Result<T, CliError> {
    let Some(ov) = overrides else {
        return Ok(args);
    };
    let mut v = serde_json::to_value(&args)?;
    let obj = v.as_object_mut().expect("arguments serialize to an object");
    for (key, val) in ov {
        let key = key.replace('-', "_");
        if obj.contains_key(&key) {
            obj.insert(key, val.clone());
            continue;
        }
        let group = obj
            .values_mut()
            .filter_map(Value::as_object_mut)
            .find(|g| g.contains_key(&key));
        match group {
            Some(g) => {
                g.insert(key, val.clone());
            }
            None => return Err(CliError::Config(format!("unknown config key '{key}'"))),
        }
    }
    serde_json::from_value(v).map_err(|e| CliError::Config(format!("invalid config: {e}")))
}

/// SHA-256 of the canonical (key-sorted, compact) JSON form.
pub fn config_hash(config: &Value) -> String {
    let digest = Sha256::digest(config.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// `{command, config, config_hash}` block embedded in every manifest.
pub fn provenance<T: Serialize>(command: &str, args: &T) -> Result<Value, CliError> {
    let config = json!({ "command": command, "args": serde_json::to_value(args)? });
    let hash = config_hash(&config);
    Ok(json!({ "command": command, "config": config["args"], "config_hash": hash }))
}
