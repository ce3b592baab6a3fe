//! `key=value` run configuration with `section.key` prefixes.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// Keys accepted in each section. Top-level keys have the empty section.
pub const SCHEMA: &[(&str, &[&str])] = &[
    ("", &["seed", "threads"]),
    ("synth", &["out", "count", "width", "height", "kind", "mix", "noise", "augment"]),
    (
        "magicpoint",
        &["out", "log", "iterations", "batch", "width", "height", "preset", "lr", "noise", "augment", "mix", "init", "checkpoint_every", "checkpoint_dir", "log_every"],
    ),
    (
        "adapt",
        &["images", "weights", "out", "n_homographies", "rounds", "threshold", "nms", "top_k", "multiscale", "border_margin", "train_iterations", "batch", "lr", "noise"],
    ),
    (
        "superpoint",
        &["images", "labels", "weights", "out", "log", "iterations", "batch", "lr", "descriptor_dim", "lambda", "lambda_d", "m_p", "m_n", "noise", "checkpoint_every", "log_every"],
    ),
    ("detect", &["threshold", "nms", "top_k"]),
    ("match", &["threshold", "nms", "max_points", "ransac_threshold"]),
    ("eval_detector", &["out", "images", "count", "width", "height", "weights", "classical", "eps", "top_k", "nms", "threshold", "ranges"]),
    ("eval_matching", &["out", "images", "count", "width", "height", "weights", "eps", "max_points", "threshold", "nms", "ransac_threshold", "ranges"]),
    ("noise_sweep", &["out", "weights", "count", "width", "height", "steps", "eps", "nms", "top_k", "threshold"]),
    ("noise_types", &["out", "weights", "count", "width", "height", "eps", "nms", "top_k", "threshold"]),
    ("square_sweep", &["out"]),
    ("nh_sweep", &["out", "weights", "images", "count", "width", "height", "nh", "eps", "top_k", "nms", "threshold"]),
];

/// Rejected configuration; the CLI maps it to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Clone, Debug)]
struct Entry {
    value: String,
    /// Directory relative paths are resolved against.
    base: PathBuf,
}

#[derive(Clone, Debug, Default)]
pub struct RunConfig {
    entries: BTreeMap<String, Entry>,
}

fn check_key(key: &str) -> Result<(), ConfigError> {
    let (section, name) = key.rsplit_once('.').unwrap_or(("", key));
    match SCHEMA.iter().find(|(s, _)| *s == section) {
        Some((_, keys)) if keys.contains(&name) => Ok(()),
        Some(_) => err(format!("unknown key `{key}`")),
        None => err(format!("unknown section in key `{key}`")),
    }
}

fn split_pair(line: &str) -> Result<(String, String), ConfigError> {
    let Some((k, v)) = line.split_once('=') else {
        return err(format!("expected key=value, got `{line}`"));
    };
    let (k, v) = (k.trim(), v.trim());
    if k.is_empty() {
        return err(format!("empty key in `{line}`"));
    }
    check_key(k)?;
    Ok((k.to_string(), v.to_string()))
}

impl RunConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = split_pair(line).map_err(|e| ConfigError(format!("line {}: {}", ln + 1, e.0)))?;
            if cfg.entries.contains_key(&k) {
                return err(format!("line {}: duplicate key `{k}`", ln + 1));
            }
            cfg.entries.insert(k, Entry { value: v, base: base.to_path_buf() });
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base)
    }

    /// Applies a `key=value` override; relative paths in it resolve against the working directory.
    pub fn set(&mut self, pair: &str) -> Result<(), ConfigError> {
        let (k, v) = split_pair(pair)?;
        self.entries.insert(k, Entry { value: v, base: PathBuf::new() });
        Ok(())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.value.as_str())
    }

    pub fn has(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn require(&self, key: &str) -> Result<&str, ConfigError> {
        self.raw(key).ok_or_else(|| ConfigError(format!("missing required key `{key}`")))
    }

    fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
        v.parse().map_err(|_| ConfigError(format!("invalid value `{v}` for `{key}`")))
    }

    pub fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError> {
        match self.raw(key) {
            Some(v) => Self::parse_value(key, v),
            None => Ok(default),
        }
    }

    pub fn req<T: FromStr>(&self, key: &str) -> Result<T, ConfigError> {
        Self::parse_value(key, self.require(key)?)
    }

    pub fn flag(&self, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.raw(key) {
            None => Ok(default),
            Some("true" | "1" | "yes" | "on") => Ok(true),
            Some("false" | "0" | "no" | "off") => Ok(false),
            Some(v) => err(format!("invalid boolean `{v}` for `{key}`")),
        }
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&self, key: &str, default: &str) -> Result<Vec<T>, ConfigError> {
        let v = self.raw(key).unwrap_or(default);
        v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| Self::parse_value(key, s)).collect()
    }

    pub fn opt_path(&self, key: &str) -> Option<PathBuf> {
        self.entries.get(key).map(|e| e.base.join(&e.value))
    }

    pub fn path(&self, key: &str) -> Result<PathBuf, ConfigError> {
        self.require(key)?;
        Ok(self.opt_path(key).expect("checked"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_comments_and_paths() {
        let cfg = RunConfig::parse("# run\nseed = 7\nsynth.out = data # dump dir\n\nsynth.count=3\n", Path::new("/tmp/x")).unwrap();
        assert_eq!(cfg.req::<u64>("seed").unwrap(), 7);
        assert_eq!(cfg.req::<usize>("synth.count").unwrap(), 3);
        assert_eq!(cfg.path("synth.out").unwrap(), PathBuf::from("/tmp/x/data"));
        assert_eq!(cfg.get("synth.width", 96usize).unwrap(), 96);
    }

    #[test]
    fn rejects_bad_input() {
        let base = Path::new(".");
        assert!(RunConfig::parse("synth.bogus = 1", base).unwrap_err().0.contains("synth.bogus"));
        assert!(RunConfig::parse("nope.out = 1", base).is_err());
        assert!(RunConfig::parse("synth.out", base).is_err());
        assert!(RunConfig::parse("seed=1\nseed=2", base).is_err());
        let cfg = RunConfig::parse("synth.count = many", base).unwrap();
        assert!(cfg.req::<usize>("synth.count").is_err());
        assert!(cfg.require("synth.out").unwrap_err().0.contains("synth.out"));
    }

    #[test]
    fn overrides_win() {
        let mut cfg = RunConfig::parse("synth.count = 3", Path::new("/a")).unwrap();
        cfg.set("synth.count=5").unwrap();
        cfg.set("synth.out=rel").unwrap();
        assert_eq!(cfg.req::<usize>("synth.count").unwrap(), 5);
        assert_eq!(cfg.path("synth.out").unwrap(), PathBuf::from("rel"));
        assert!(cfg.set("synth.zzz=1").is_err());
        assert_eq!(cfg.list::<f64>("nh_sweep.nh", "1,10,100").unwrap(), vec![1.0, 10.0, 100.0]);
    }
}
