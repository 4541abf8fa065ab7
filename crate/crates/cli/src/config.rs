//! Run configuration: flags override a flat `key = value` file, which
//! overrides the built-in defaults.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde_json::{json, Value};

/// Keys accepted in a config file; each is also a `--key` flag.
pub const KEYS: &[&str] = &[
    "metric", "theta", "beta", "eps", "tol", "seed", "n", "window", "out", "x0", "T", "dt", "paths", "scheme", "dim",
    "radius", "spacing", "mass",
];

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config(src: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in src.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("config line {}: expected `key = value`, got {raw:?}", i + 1))?;
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            bail!("config line {}: unknown key {k:?}", i + 1);
        }
        out.insert(k.to_string(), v.to_string());
    }
    Ok(out)
}

pub fn load_config(path: &Path) -> Result<BTreeMap<String, String>> {
    let src = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    parse_config(&src).with_context(|| format!("in config {}", path.display()))
}

/// Resolved settings for one command. Every value read is recorded so the
/// report can embed exactly what was used.
#[derive(Debug, Default)]
pub struct Settings {
    given: BTreeMap<String, String>,
    used: std::cell::RefCell<BTreeMap<String, Value>>,
}

impl Settings {
    /// `flags` win over `file`.
    pub fn new(file: BTreeMap<String, String>, flags: BTreeMap<String, String>) -> Self {
        let mut given = file;
        given.extend(flags);
        Self { given, used: Default::default() }
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.given.get(key).map(String::as_str)
    }

    fn record(&self, key: &str, v: Value) {
        self.used.borrow_mut().insert(key.to_string(), v);
    }

    pub fn resolved(&self) -> Value {
        Value::Object(self.used.borrow().clone().into_iter().collect())
    }

    fn number(&self, key: &str) -> Result<Option<f64>> {
        self.raw(key).map(|s| s.parse::<f64>().map_err(|_| anyhow!("`{key}`: {s:?} is not a number"))).transpose()
    }

    /// A float with a default and a range check.
    pub fn f64_in(&self, key: &str, default: f64, ok: impl Fn(f64) -> bool, range: &str) -> Result<f64> {
        let v = self.number(key)?.unwrap_or(default);
        if !ok(v) {
            bail!("`{key}` = {v} is out of range ({range})");
        }
        self.record(key, json!(v));
        Ok(v)
    }

    pub fn positive(&self, key: &str, default: f64) -> Result<f64> {
        self.f64_in(key, default, |v| v > 0.0 && v.is_finite(), "> 0")
    }

    pub fn count(&self, key: &str, default: usize) -> Result<usize> {
        let v = match self.raw(key) {
            Some(s) => s.parse::<usize>().map_err(|_| anyhow!("`{key}`: {s:?} is not a nonnegative integer"))?,
            None => default,
        };
        if v == 0 {
            bail!("`{key}` must be at least 1");
        }
        self.record(key, json!(v));
        Ok(v)
    }

    /// Stochastic commands have no default seed.
    pub fn seed(&self) -> Result<u64> {
        let s = self.raw("seed").ok_or_else(|| anyhow!("`seed` is required for this command"))?;
        let v = s.parse::<u64>().map_err(|_| anyhow!("`seed`: {s:?} is not a nonnegative integer"))?;
        self.record("seed", json!(v));
        Ok(v)
    }

    pub fn window(&self, default: (f64, f64)) -> Result<(f64, f64)> {
        let w = match self.raw("window") {
            Some(s) => {
                let parts: Vec<&str> = s.split(',').map(str::trim).collect();
                let [a, b] = parts[..] else { bail!("`window`: expected `a,b`, got {s:?}") };
                let num = |p: &str| p.parse::<f64>().map_err(|_| anyhow!("`window`: {p:?} is not a number"));
                (num(a)?, num(b)?)
            }
            None => default,
        };
        if !(w.0 > 0.0 && w.1 > w.0 && w.1.is_finite()) {
            bail!("`window` = {},{} must satisfy 0 < a < b < inf", w.0, w.1);
        }
        self.record("window", json!([w.0, w.1]));
        Ok(w)
    }

    /// One of `choices`, the first being the default.
    pub fn choice(&self, key: &str, choices: &[&'static str]) -> Result<&'static str> {
        let v = match self.raw(key) {
            Some(s) => *choices
                .iter()
                .find(|c| c.eq_ignore_ascii_case(s))
                .ok_or_else(|| anyhow!("`{key}`: {s:?} is not one of {}", choices.join(", ")))?,
            None => choices[0],
        };
        self.record(key, json!(v));
        Ok(v)
    }

    pub fn out(&self) -> Option<String> {
        let v = self.raw("out").map(str::to_string);
        if let Some(p) = &v {
            self.record("out", json!(p));
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let file = parse_config("theta = 2\n# comment\nseed=5 # trailing\n").unwrap();
        let flags = BTreeMap::from([("theta".to_string(), "0.5".to_string())]);
        let s = Settings::new(file, flags);
        assert_eq!(s.positive("theta", 1.0).unwrap(), 0.5);
        assert_eq!(s.seed().unwrap(), 5);
        assert_eq!(s.positive("eps", 0.1).unwrap(), 0.1);
        assert_eq!(s.resolved(), json!({"theta": 0.5, "seed": 5, "eps": 0.1}));
    }

    #[test]
    fn bad_lines_are_reported() {
        assert!(parse_config("theta 2").unwrap_err().to_string().contains("line 1"));
        assert!(parse_config("\nfoo = 1").unwrap_err().to_string().contains("foo"));
        let s = Settings::new(BTreeMap::from([("window".into(), "3,1".into())]), BTreeMap::new());
        assert!(s.window((1.0, 2.0)).is_err());
        let s = Settings::default();
        assert!(s.seed().unwrap_err().to_string().contains("seed"));
    }
}
