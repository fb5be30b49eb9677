//! Flag resolution: a value given on the command line wins over the config
//! file, which wins over the built-in default. Every resolved value is kept
//! for the run manifest.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::CliError;

#[derive(Default)]
pub struct Settings {
    file: toml::Table,
    resolved: BTreeMap<String, serde_json::Value>,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let file = text.parse::<toml::Table>().map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        Ok(Self { file, resolved: BTreeMap::new() })
    }

    fn file_value<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.file.get(key) {
            None => Ok(None),
            Some(v) => v
                .clone()
                .try_into()
                .map(Some)
                .map_err(|e| CliError::Usage(format!("config key {key:?}: {e}"))),
        }
    }

    fn record<T: Serialize>(&mut self, key: &str, value: &T) {
        let v = serde_json::to_value(value).expect("settings serialize");
        self.resolved.insert(key.to_owned(), v);
    }

    pub fn get<T: DeserializeOwned + Serialize>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError> {
        let value = match flag {
            Some(v) => v,
            None => self.file_value(key)?.unwrap_or(default),
        };
        self.record(key, &value);
        Ok(value)
    }

    pub fn optional<T: DeserializeOwned + Serialize>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError> {
        let value = match flag {
            Some(v) => Some(v),
            None => self.file_value(key)?,
        };
        self.record(key, &value);
        Ok(value)
    }

    pub fn required<T: DeserializeOwned + Serialize>(&mut self, key: &str, flag: Option<T>) -> Result<T, CliError> {
        self.optional(key, flag)?
            .ok_or_else(|| CliError::Usage(format!("--{} is required", key.replace('_', "-"))))
    }

    pub fn flag(&mut self, key: &str, set: bool) -> Result<bool, CliError> {
        let value = set || self.file_value(key)?.unwrap_or(false);
        self.record(key, &value);
        Ok(value)
    }

    pub fn resolved(&self) -> &BTreeMap<String, serde_json::Value> {
        &self.resolved
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flag_beats_file_beats_default() {
        let mut s = Settings { file: "steps = 50\nn = 8".parse().unwrap(), resolved: BTreeMap::new() };
        assert_eq!(s.get("steps", Some(10usize), 1000).unwrap(), 10);
        assert_eq!(s.get("n", None, 4usize).unwrap(), 8);
        assert_eq!(s.get("p", None, 4usize).unwrap(), 4);
        assert_eq!(s.resolved()["steps"], 10);
        assert!(s.required::<usize>("missing", None).is_err());
        assert!(s.get::<String>("n", None, String::new()).is_err());
    }
}
