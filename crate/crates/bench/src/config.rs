//! Run settings shared by the subcommands, and the `key value` config file
//! that overrides command-line flags.
//!
//! ```text
//! DIFUADA-CONFIG v1
//! seed 7
//! tau 0.1
//! sizes 10 12
//! end
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};

use difuada_core::adapt::AdaptConfig;
use difuada_core::energy::EnergyParams;

pub const CONFIG_MAGIC: &str = "DIFUADA-CONFIG";
pub const CONFIG_VERSION: &str = "v1";
pub const THREADS_ENV: &str = "DIFUADA_THREADS";

#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub seed: u64,
    pub threads: Option<usize>,
    pub out_dir: PathBuf,
    pub adapt: AdaptConfig,
    pub sizes: Vec<usize>,
    pub n_instances: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: None,
            out_dir: PathBuf::from("out"),
            adapt: AdaptConfig::default(),
            sizes: vec![10, 12],
            n_instances: 50,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| anyhow::anyhow!("bad value '{value}' for '{key}'"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        _ => bail!("bad value '{value}' for '{key}' (expected true or false)"),
    }
}

impl Settings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let a = &mut self.adapt;
        match key {
            "seed" => self.seed = parse(key, value)?,
            "threads" => self.threads = Some(parse(key, value)?),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "K" | "k" => a.k = parse(key, value)?,
            "renoise_i" => a.renoise_level = parse(key, value)?,
            "mode" => a.mode = value.parse()?,
            "infer_steps" => a.infer_steps = parse(key, value)?,
            "tau" => a.guidance.tau = parse(key, value)?,
            "mu" => a.energy = EnergyParams::new(parse(key, value)?)?,
            "grad_clip" => a.guidance.grad_clip = parse(key, value)?,
            "guidance" => a.guidance.enabled = parse_bool(key, value)?,
            "track_best" => a.track_best = parse_bool(key, value)?,
            "two_opt" => a.decode.two_opt = parse_bool(key, value)?,
            "instances" => self.n_instances = parse(key, value)?,
            "sizes" => {
                self.sizes = value.split_whitespace().map(|s| parse(key, s)).collect::<Result<_>>()?;
                ensure!(!self.sizes.is_empty(), "'sizes' needs at least one value");
            }
            _ => bail!("unknown config key '{key}'"),
        }
        Ok(())
    }

    pub fn apply(&mut self, entries: &[(String, String)]) -> Result<()> {
        for (k, v) in entries {
            self.set(k, v)?;
        }
        Ok(())
    }
}

pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut lines =
        text.lines().enumerate().map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim())).filter(|(_, l)| !l.is_empty());
    let (ln, header) = lines.next().context("empty config file")?;
    let mut head = header.split_whitespace();
    ensure!(head.next() == Some(CONFIG_MAGIC), "line {ln}: expected '{CONFIG_MAGIC}'");
    match head.next() {
        Some(CONFIG_VERSION) => {}
        Some(v) => bail!("unsupported config version {v} (expected {CONFIG_VERSION})"),
        None => bail!("line {ln}: missing config version"),
    }
    let mut out = Vec::new();
    for (ln, line) in lines {
        if line == "end" {
            return Ok(out);
        }
        let (key, value) = line.split_once(char::is_whitespace).with_context(|| format!("line {ln}: expected 'key value'"))?;
        out.push((key.to_string(), value.trim().to_string()));
    }
    bail!("config file has no 'end' line")
}

pub fn load_config(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    parse_config(&text).with_context(|| format!("in config {}", path.display()))
}

/// Thread count from the flag, falling back to the environment.
pub fn resolve_threads(flag: Option<usize>, env: Option<&str>) -> Result<Option<usize>> {
    let n = match (flag, env) {
        (Some(n), _) => n,
        (None, Some(s)) => s.trim().parse().map_err(|_| anyhow::anyhow!("{THREADS_ENV}='{s}' is not a thread count"))?,
        (None, None) => return Ok(None),
    };
    ensure!(n > 0, "thread count must be positive");
    Ok(Some(n))
}
