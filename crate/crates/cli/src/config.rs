//! Flat `key = value` configuration. Precedence: command-line flags, then the
//! config file, then built-in defaults.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use crosswalk::SimConfig;

pub const DEFAULT_INITIAL_SIGNAL_S: f64 = 20.0;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub sim: SimConfig,
    /// Phase length fed to `replay`.
    pub initial_signal_s: f64,
}

impl Default for Resolved {
    fn default() -> Self {
        Resolved {
            sim: SimConfig::default(),
            initial_signal_s: DEFAULT_INITIAL_SIGNAL_S,
        }
    }
}

pub const KEYS: [&str; 17] = [
    "n_trials",
    "seed",
    "alpha",
    "detection_map_50",
    "p_general",
    "p_elderly",
    "p_wheelchair",
    "coefficient_of_variation",
    "floor_fraction",
    "design_speed",
    "buffer_s",
    "extension_s",
    "threshold_s",
    "max_extensions",
    "timeout_frames",
    "tick_s",
    "initial_signal_s",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| format!("{key}: cannot parse {value:?}: {e}"))
}

impl Resolved {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let value = value.trim();
        let s = &mut self.sim;
        match key {
            "n_trials" => s.n_trials = parse(key, value)?,
            "seed" => s.seed = parse(key, value)?,
            "alpha" => s.alpha = parse(key, value)?,
            "detection_map_50" => s.detection_map_50 = parse(key, value)?,
            "p_general" => s.demographics.p_general = parse(key, value)?,
            "p_elderly" => s.demographics.p_elderly = parse(key, value)?,
            "p_wheelchair" => s.demographics.p_wheelchair = parse(key, value)?,
            "coefficient_of_variation" => s.speed_model.coefficient_of_variation = parse(key, value)?,
            "floor_fraction" => s.speed_model.floor_fraction = parse(key, value)?,
            "design_speed" => s.policy.design_speed = parse(key, value)?,
            "buffer_s" => s.policy.buffer_s = parse(key, value)?,
            "extension_s" => s.controller.extension_s = parse(key, value)?,
            "threshold_s" => s.controller.threshold_s = parse(key, value)?,
            "max_extensions" => s.controller.max_extensions = parse(key, value)?,
            "timeout_frames" => s.controller.timeout_frames = parse(key, value)?,
            "tick_s" => s.controller.tick_s = parse(key, value)?,
            "initial_signal_s" => self.initial_signal_s = parse(key, value)?,
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }

    /// Every key with its current value, in [`KEYS`] order. Floats use the
    /// shortest round-trip representation, so reloading is exact.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let s = &self.sim;
        let values = [
            s.n_trials.to_string(),
            s.seed.to_string(),
            s.alpha.to_string(),
            s.detection_map_50.to_string(),
            s.demographics.p_general.to_string(),
            s.demographics.p_elderly.to_string(),
            s.demographics.p_wheelchair.to_string(),
            s.speed_model.coefficient_of_variation.to_string(),
            s.speed_model.floor_fraction.to_string(),
            s.policy.design_speed.to_string(),
            s.policy.buffer_s.to_string(),
            s.controller.extension_s.to_string(),
            s.controller.threshold_s.to_string(),
            s.controller.max_extensions.to_string(),
            s.controller.timeout_frames.to_string(),
            s.controller.tick_s.to_string(),
            self.initial_signal_s.to_string(),
        ];
        KEYS.into_iter().zip(values).collect()
    }

    pub fn snapshot(&self) -> BTreeMap<String, String> {
        self.pairs()
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect()
    }

    #[cfg(test)]
    pub fn to_text(&self) -> String {
        self.pairs()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Applies `key = value` lines. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError(format!("line {}: expected `key = value`, got {raw:?}", i + 1)));
            };
            self.set(key.trim(), value)
                .map_err(|e| ConfigError(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    /// Applies the `config` object of a run manifest.
    pub fn apply_manifest(&mut self, text: &str) -> Result<(), ConfigError> {
        let doc: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| ConfigError(format!("manifest: {e}")))?;
        let Some(obj) = doc.get("config").and_then(|c| c.as_object()) else {
            return Err(ConfigError("manifest has no `config` object".into()));
        };
        for (k, v) in obj {
            let value = match v {
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            self.set(k, &value)
                .map_err(|e| ConfigError(format!("manifest field {k:?}: {e}")))?;
        }
        Ok(())
    }

    /// Loads a flat config file, or a run manifest when the file holds JSON.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        let result = if text.trim_start().starts_with('{') {
            self.apply_manifest(&text)
        } else {
            self.apply_text(&text)
        };
        result.map_err(|e| ConfigError(format!("{}: {}", path.display(), e.0)))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.sim
            .validate()
            .map_err(|e| ConfigError(e.to_string()))?;
        if !(self.initial_signal_s > 0.0) {
            return Err(ConfigError("initial_signal_s must be > 0".into()));
        }
        Ok(())
    }
}
