//! Flat key=value configuration files.
//!
//! One assignment per line, `#` comments, blank lines ignored. Every key
//! mirrors a `compare` command-line flag; precedence is defaults, then the
//! file, then explicit flags. Unknown keys are rejected so typos cannot
//! silently fall back to defaults.

use std::collections::BTreeMap;

use gpvol::{Error, Result};

/// Keys a configuration file may set, in documentation order.
pub const KNOWN_KEYS: [&str; 18] = [
    "input",
    "strategies",
    "kernels",
    "hyper-update",
    "training",
    "window",
    "segment",
    "interval-z",
    "floor",
    "seed",
    "fit-max-iter",
    "fit-restarts",
    "warm-max-iter",
    "prior-log-std",
    "out",
    "formats",
    "workers",
    "records",
];

/// Parse a flat key=value file into an ordered map.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::InvalidInput(format!(
                "config line {}: expected key = value, got '{raw}'",
                idx + 1
            )));
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(Error::InvalidInput(format!(
                "config line {}: unknown key '{key}' (known: {})",
                idx + 1,
                KNOWN_KEYS.join(", ")
            )));
        }
        if map.insert(key.clone(), value).is_some() {
            return Err(Error::InvalidInput(format!(
                "config line {}: duplicate key '{key}'",
                idx + 1
            )));
        }
    }
    Ok(map)
}

/// Parse one value with a key-qualified error.
pub fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| {
        Error::InvalidInput(format!(
            "config key '{key}': unparsable value '{value}' for {}",
            std::any::type_name::<T>()
        ))
    })
}

/// Split a comma-separated list, trimming and dropping empty items.
pub fn split_list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_assignments_comments_and_blanks() {
        let text = "# run settings\n\ntraining = 100\nseed=7\nstrategies = gp-abs, garch\n";
        let map = parse_config(text).unwrap();
        assert_eq!(map["training"], "100");
        assert_eq!(map["seed"], "7");
        assert_eq!(split_list(&map["strategies"]), vec!["gp-abs", "garch"]);
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys() {
        let unknown = parse_config("trainings = 100\n");
        assert!(unknown.is_err());
        assert!(unknown.unwrap_err().to_string().contains("line 1"));
        let dup = parse_config("seed = 1\nseed = 2\n");
        assert!(dup.unwrap_err().to_string().contains("duplicate"));
        let bare = parse_config("seed\n");
        assert!(bare.unwrap_err().to_string().contains("key = value"));
    }

    #[test]
    fn typed_parsing_names_the_key() {
        assert_eq!(parse_value::<usize>("training", "100").unwrap(), 100);
        let err = parse_value::<usize>("training", "lots").unwrap_err();
        assert!(err.to_string().contains("training"));
    }
}
