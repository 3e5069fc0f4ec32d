//! Run configuration: one JSON document, overridden field by field by flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpaceConfig {
    /// path | cycle | star | sg | file
    pub kind: Option<String>,
    pub n: Option<usize>,
    pub level: Option<u32>,
    pub file: Option<PathBuf>,
    pub uniform_measure: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScaleConfig {
    /// power | two_piece | tabulated | fit
    pub kind: Option<String>,
    pub beta: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    pub r_min: Option<f64>,
    pub r_max: Option<f64>,
    pub t_min: Option<f64>,
    pub t_max: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplesConfig {
    pub seed: Option<u64>,
    pub centers: usize,
    pub radii: usize,
    pub n_times: usize,
    pub centers_per_time: usize,
    pub per_bin: usize,
    pub max_scaled_distance: f64,
    pub mc_samples: usize,
    pub max_events: u64,
    pub trials: usize,
}

impl Default for SamplesConfig {
    fn default() -> Self {
        SamplesConfig {
            seed: None,
            centers: 7,
            radii: 5,
            n_times: 12,
            centers_per_time: 2,
            per_bin: 2,
            max_scaled_distance: 4.0,
            mc_samples: 100_000,
            max_events: 10_000_000,
            trials: 8,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputsConfig {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub space: SpaceConfig,
    pub scale: ScaleConfig,
    pub window: WindowConfig,
    pub samples: SamplesConfig,
    pub outputs: OutputsConfig,
}

/// Malformed configuration or arguments; maps to exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

impl RunConfig {
    /// Reads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {}", path.display(), e)))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.space.file, &mut cfg.scale.file, &mut cfg.outputs.dir] {
            if let Some(p) = p.as_mut() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.window;
        if let (Some(a), Some(b)) = (w.r_min, w.r_max) {
            if !(a > 0.0 && a <= b) {
                bail!(usage(format!("empty radius window [{}, {}]", a, b)));
            }
        }
        if let (Some(a), Some(b)) = (w.t_min, w.t_max) {
            if !(a > 0.0 && a <= b) {
                bail!(usage(format!("empty time window [{}, {}]", a, b)));
            }
        }
        for p in [&self.space.file, &self.scale.file].into_iter().flatten() {
            if !p.exists() {
                bail!(usage(format!("no such file: {}", p.display())));
            }
        }
        Ok(())
    }
}

/// SHA-256 of the canonical JSON of `value`, as lowercase hex.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("config serializes");
    Sha256::digest(json.as_bytes())
        .iter()
        .map(|b| format!("{:02x}", b))
        .collect()
}

/// A list of reals given as one argument.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct List(pub Vec<f64>);

impl std::ops::Deref for List {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Comma-separated reals, `geomspace(a,b,n)` or `linspace(a,b,n)`.
pub fn parse_list(s: &str) -> std::result::Result<List, String> {
    reals(s).map(List)
}

fn reals(s: &str) -> std::result::Result<Vec<f64>, String> {
    let s = s.trim();
    for (name, geometric) in [("geomspace", true), ("linspace", false)] {
        if let Some(rest) = s.strip_prefix(name) {
            let inner = rest
                .trim()
                .strip_prefix('(')
                .and_then(|r| r.strip_suffix(')'))
                .ok_or_else(|| format!("expected {}(a,b,n)", name))?;
            let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
            if parts.len() != 3 {
                return Err(format!("expected {}(a,b,n)", name));
            }
            let a: f64 = parts[0].parse().map_err(|_| format!("bad number {:?}", parts[0]))?;
            let b: f64 = parts[1].parse().map_err(|_| format!("bad number {:?}", parts[1]))?;
            let n: usize = parts[2].parse().map_err(|_| format!("bad count {:?}", parts[2]))?;
            if geometric && !(a > 0.0 && b > 0.0) {
                return Err("geomspace needs positive endpoints".into());
            }
            return Ok(if geometric {
                subgauss::stats::geomspace(a, b, n)
            } else if n == 1 {
                vec![a]
            } else {
                (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
            });
        }
    }
    s.split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("bad number {:?}", p.trim())))
        .collect()
}

/// `x:y` with nonnegative integer vertex ids.
pub fn parse_pair(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected x:y, got {:?}", s))?;
    Ok((
        a.trim().parse().map_err(|_| format!("bad vertex {:?}", a))?,
        b.trim().parse().map_err(|_| format!("bad vertex {:?}", b))?,
    ))
}

/// `x:R`: a ball center and radius.
pub fn parse_ball(s: &str) -> std::result::Result<(usize, f64), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected x:R, got {:?}", s))?;
    Ok((
        a.trim().parse().map_err(|_| format!("bad vertex {:?}", a))?,
        b.trim().parse().map_err(|_| format!("bad radius {:?}", b))?,
    ))
}
