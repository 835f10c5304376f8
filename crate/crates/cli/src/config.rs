//! Flat `key = value` run configuration.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use tacse3_core::fusion::MirrorConfig;
use tacse3_core::sim::Geometry;
use tacse3_core::twist::EstimatorMode;

/// Settings that may come from a config file; command-line flags win.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub mode: Option<EstimatorMode>,
    pub window: Option<usize>,
    pub tau: Option<f64>,
    pub gains: Option<[f64; 3]>,
    pub mirror_signs: Option<[i8; 6]>,
    pub seed: Option<u64>,
    pub seeds: Option<usize>,
    pub noise: Option<f64>,
    pub geometry: Option<Geometry>,
    pub frame_rate: Option<f64>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    pub diagnostics: Option<PathBuf>,
}

fn parse_list<T: std::str::FromStr, const N: usize>(key: &str, v: &str) -> Result<[T; N]>
where
    T::Err: std::fmt::Display,
{
    let items: Vec<T> = v
        .split(',')
        .map(|s| s.trim().parse::<T>().map_err(|e| anyhow::anyhow!("{key}: {e}")))
        .collect::<Result<_>>()?;
    let n = items.len();
    items
        .try_into()
        .map_err(|_| anyhow::anyhow!("{key}: expected {N} comma-separated values, got {n}"))
}

pub fn parse_gains(v: &str) -> Result<[f64; 3]> {
    let g: [f64; 3] = parse_list("gains", v)?;
    if g.iter().any(|x| !x.is_finite() || *x == 0.0) {
        bail!("gains must be finite and nonzero");
    }
    Ok(g)
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::error::Error + Send + Sync + 'static,
{
    v.parse::<T>().with_context(|| format!("{key}: cannot parse `{v}`"))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .with_context(|| format!("line {}: expected `key = value`", n + 1))?;
            let (key, v) = (key.trim(), value.trim());
            let at = || format!("line {}", n + 1);
            match key {
                "mode" => cfg.mode = Some(v.parse().map_err(|e| anyhow::anyhow!("{e}")).with_context(at)?),
                "window" => cfg.window = Some(parse_num(key, v).with_context(at)?),
                "tau" => cfg.tau = Some(parse_num(key, v).with_context(at)?),
                "gains" => cfg.gains = Some(parse_gains(v).with_context(at)?),
                "mirror_signs" => cfg.mirror_signs = Some(parse_list(key, v).with_context(at)?),
                "seed" => cfg.seed = Some(parse_num(key, v).with_context(at)?),
                "seeds" => cfg.seeds = Some(parse_num(key, v).with_context(at)?),
                "noise" => cfg.noise = Some(parse_num(key, v).with_context(at)?),
                "geometry" => cfg.geometry = Some(Geometry::from_name(v).with_context(at)?),
                "frame_rate" => cfg.frame_rate = Some(parse_num(key, v).with_context(at)?),
                "jobs" => cfg.jobs = Some(parse_num(key, v).with_context(at)?),
                "out" => cfg.out = Some(PathBuf::from(v)),
                "diagnostics" => cfg.diagnostics = Some(PathBuf::from(v)),
                other => bail!("line {}: unknown key `{other}`", n + 1),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn load_opt(path: Option<&Path>) -> Result<Self> {
        path.map(Self::load).unwrap_or_else(|| Ok(Self::default()))
    }

    fn validate(&self) -> Result<()> {
        if self.window == Some(0) {
            bail!("window must be at least 1");
        }
        if let Some(t) = self.tau {
            if !(t.is_finite() && t >= 0.0) {
                bail!("tau must be finite and non-negative");
            }
        }
        if let Some(s) = self.mirror_signs {
            MirrorConfig::new(s)?;
        }
        if let Some(n) = self.noise {
            if !(n.is_finite() && n >= 0.0) {
                bail!("noise must be non-negative");
            }
        }
        if let Some(r) = self.frame_rate {
            if !(r.is_finite() && r > 0.0) {
                bail!("frame_rate must be positive");
            }
        }
        if self.seeds == Some(0) || self.jobs == Some(0) {
            bail!("seeds and jobs must be at least 1");
        }
        Ok(())
    }
}

/// `TACSE3_SEED` when set, else the flag, else the config, else `default`.
pub fn resolve_seed(flag: Option<u64>, cfg: &RunConfig, default: u64) -> Result<u64> {
    match std::env::var("TACSE3_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .with_context(|| format!("TACSE3_SEED: cannot parse `{v}`")),
        Err(_) => Ok(flag.or(cfg.seed).unwrap_or(default)),
    }
}
