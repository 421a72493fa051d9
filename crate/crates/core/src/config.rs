//! Sectioned plain-text run configuration.
//!
//! The format is line-oriented: `[section]` headers, `key = value` pairs,
//! `#` comments and blank lines. Sections are `market`, `simulation` and
//! `verify`. Lists are comma-separated floats; the exit law is written
//! `none`, `exponential(rate)` or `uniform(lo, hi)`.
//!
//! Parsing is strict and total: unknown sections or keys are rejected, every
//! problem in the file is reported in one pass, and a syntactically valid
//! file always produces a fully validated configuration with defaults
//! applied (paths 10000, steps per unit 4096, b 1, seed 0).

use std::collections::BTreeMap;
use std::path::Path;

use crate::market::{ExitLaw, MarketConfig};
use crate::{EngineError, Result};

pub const DEFAULT_PATHS: usize = 10_000;
pub const DEFAULT_STEPS_PER_UNIT: usize = 4096;
pub const DEFAULT_B: f64 = 1.0;
pub const DEFAULT_SEED: u64 = 0;

/// Identity-suite sizing, the `[verify]` section.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerifyConfig {
    pub scenarios: usize,
    pub n_steps: usize,
    pub sets: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            scenarios: 200,
            n_steps: 16,
            sets: 10,
        }
    }
}

/// A parsed configuration file: an optional market plus suite sizing.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedConfig {
    pub market: Option<MarketConfig>,
    pub verify: VerifyConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    None,
    Market,
    Simulation,
    Verify,
}

const MARKET_KEYS: &[&str] = &["s0", "x0", "mu_star", "b", "sigma", "a", "exit_law"];
const SIMULATION_KEYS: &[&str] = &["paths", "steps_per_unit", "seed"];
const VERIFY_KEYS: &[&str] = &["scenarios", "n_steps", "sets"];

fn parse_f64(value: &str, key: &str, errors: &mut Vec<String>) -> Option<f64> {
    match value.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Some(v),
        Ok(v) => {
            errors.push(format!("{key}: value {v} is not finite"));
            None
        }
        Err(_) => {
            errors.push(format!("{key}: cannot parse '{value}' as a number"));
            None
        }
    }
}

fn parse_usize(value: &str, key: &str, errors: &mut Vec<String>) -> Option<usize> {
    match value.trim().parse::<usize>() {
        Ok(v) => Some(v),
        Err(_) => {
            errors.push(format!("{key}: cannot parse '{value}' as a nonnegative integer"));
            None
        }
    }
}

fn parse_u64(value: &str, key: &str, errors: &mut Vec<String>) -> Option<u64> {
    match value.trim().parse::<u64>() {
        Ok(v) => Some(v),
        Err(_) => {
            errors.push(format!("{key}: cannot parse '{value}' as a 64-bit seed"));
            None
        }
    }
}

fn parse_list(value: &str, key: &str, errors: &mut Vec<String>) -> Option<Vec<f64>> {
    let mut out = Vec::new();
    for (i, item) in value.split(',').enumerate() {
        match item.trim().parse::<f64>() {
            Ok(v) if v.is_finite() => out.push(v),
            _ => {
                errors.push(format!("{key}: element {i} ('{}') is not a finite number", item.trim()));
                return None;
            }
        }
    }
    if out.is_empty() {
        errors.push(format!("{key}: empty list"));
        return None;
    }
    Some(out)
}

fn parse_exit_law(value: &str, errors: &mut Vec<String>) -> Option<ExitLaw> {
    let v = value.trim();
    if v.eq_ignore_ascii_case("none") {
        return Some(ExitLaw::None);
    }
    let (name, rest) = match v.find('(') {
        Some(open) if v.ends_with(')') => (v[..open].trim(), &v[open + 1..v.len() - 1]),
        _ => {
            errors.push(format!(
                "exit_law: expected none, exponential(rate) or uniform(lo, hi); got '{v}'"
            ));
            return None;
        }
    };
    let args: Vec<&str> = rest.split(',').map(str::trim).collect();
    match (name.to_ascii_lowercase().as_str(), args.as_slice()) {
        ("exponential", [rate]) => {
            let rate = parse_f64(rate, "exit_law rate", errors)?;
            Some(ExitLaw::Exponential { rate })
        }
        ("uniform", [lo, hi]) => {
            let lo = parse_f64(lo, "exit_law lo", errors)?;
            let hi = parse_f64(hi, "exit_law hi", errors)?;
            Some(ExitLaw::Uniform { lo, hi })
        }
        _ => {
            errors.push(format!(
                "exit_law: unknown law '{name}' or wrong argument count"
            ));
            None
        }
    }
}

/// Parses a configuration document, reporting every problem at once.
pub fn parse_config_str(input: &str) -> Result<ParsedConfig> {
    let mut errors: Vec<String> = Vec::new();
    let mut section = Section::None;
    let mut market_kv: BTreeMap<String, String> = BTreeMap::new();
    let mut sim_kv: BTreeMap<String, String> = BTreeMap::new();
    let mut verify_kv: BTreeMap<String, String> = BTreeMap::new();

    for (lineno, raw) in input.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') {
            if !line.ends_with(']') {
                errors.push(format!("line {}: unterminated section header", lineno + 1));
                continue;
            }
            section = match line[1..line.len() - 1].trim() {
                "market" => Section::Market,
                "simulation" => Section::Simulation,
                "verify" => Section::Verify,
                other => {
                    errors.push(format!("line {}: unknown section '{other}'", lineno + 1));
                    Section::None
                }
            };
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            errors.push(format!("line {}: expected 'key = value'", lineno + 1));
            continue;
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        let (store, allowed): (&mut BTreeMap<String, String>, &[&str]) = match section {
            Section::Market => (&mut market_kv, MARKET_KEYS),
            Section::Simulation => (&mut sim_kv, SIMULATION_KEYS),
            Section::Verify => (&mut verify_kv, VERIFY_KEYS),
            Section::None => {
                errors.push(format!(
                    "line {}: key '{key}' appears outside any section",
                    lineno + 1
                ));
                continue;
            }
        };
        if !allowed.contains(&key.as_str()) {
            errors.push(format!("line {}: unknown key '{key}'", lineno + 1));
            continue;
        }
        if store.insert(key.clone(), value).is_some() {
            errors.push(format!("line {}: duplicate key '{key}'", lineno + 1));
        }
    }

    let paths = sim_kv
        .get("paths")
        .and_then(|v| parse_usize(v, "paths", &mut errors))
        .unwrap_or(DEFAULT_PATHS);
    let steps_per_unit = sim_kv
        .get("steps_per_unit")
        .and_then(|v| parse_usize(v, "steps_per_unit", &mut errors))
        .unwrap_or(DEFAULT_STEPS_PER_UNIT);
    let seed = sim_kv
        .get("seed")
        .and_then(|v| parse_u64(v, "seed", &mut errors))
        .unwrap_or(DEFAULT_SEED);

    let market = if market_kv.is_empty() {
        None
    } else {
        for required in ["s0", "x0", "mu_star", "sigma", "a", "exit_law"] {
            if !market_kv.contains_key(required) {
                errors.push(format!("market: missing required key '{required}'"));
            }
        }
        let s0 = market_kv.get("s0").and_then(|v| parse_f64(v, "s0", &mut errors));
        let x0 = market_kv.get("x0").and_then(|v| parse_f64(v, "x0", &mut errors));
        let mu_star = market_kv
            .get("mu_star")
            .and_then(|v| parse_f64(v, "mu_star", &mut errors));
        let b = market_kv
            .get("b")
            .and_then(|v| parse_f64(v, "b", &mut errors))
            .unwrap_or(DEFAULT_B);
        let sigma = market_kv
            .get("sigma")
            .and_then(|v| parse_list(v, "sigma", &mut errors));
        let period_ends = market_kv.get("a").and_then(|v| parse_list(v, "a", &mut errors));
        let exit_law = market_kv
            .get("exit_law")
            .and_then(|v| parse_exit_law(v, &mut errors));
        match (s0, x0, mu_star, sigma, period_ends, exit_law) {
            (Some(s0), Some(x0), Some(mu_star), Some(sigma), Some(period_ends), Some(exit_law)) => {
                Some(MarketConfig {
                    s0,
                    x0,
                    mu_star,
                    b,
                    sigma,
                    period_ends,
                    exit_law,
                    n_paths: paths,
                    steps_per_unit,
                    seed,
                })
            }
            _ => None,
        }
    };

    let verify = VerifyConfig {
        scenarios: verify_kv
            .get("scenarios")
            .and_then(|v| parse_usize(v, "scenarios", &mut errors))
            .unwrap_or(VerifyConfig::default().scenarios),
        n_steps: verify_kv
            .get("n_steps")
            .and_then(|v| parse_usize(v, "n_steps", &mut errors))
            .unwrap_or(VerifyConfig::default().n_steps),
        sets: verify_kv
            .get("sets")
            .and_then(|v| parse_usize(v, "sets", &mut errors))
            .unwrap_or(VerifyConfig::default().sets),
    };
    if verify.scenarios == 0 || verify.n_steps == 0 || verify.sets == 0 {
        errors.push("verify: scenarios, n_steps and sets must be positive".into());
    }

    if let Some(market) = &market {
        if let Err(EngineError::Config(more)) = market.validate() {
            errors.extend(more);
        }
    }

    if errors.is_empty() {
        Ok(ParsedConfig { market, verify })
    } else {
        Err(EngineError::Config(errors))
    }
}

/// Parses a configuration file.
pub fn parse_config(path: &Path) -> Result<ParsedConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text)
}

fn render_exit_law(law: &ExitLaw) -> String {
    match law {
        ExitLaw::None => "none".to_string(),
        ExitLaw::Exponential { rate } => format!("exponential({rate})"),
        ExitLaw::Uniform { lo, hi } => format!("uniform({lo}, {hi})"),
    }
}

fn render_list(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

/// Canonical rendering; `parse_config_str(&render_config(c)) == c` for every
/// valid configuration.
pub fn render_config(config: &ParsedConfig) -> String {
    let mut out = String::new();
    if let Some(m) = &config.market {
        out.push_str("[market]\n");
        out.push_str(&format!("s0 = {}\n", m.s0));
        out.push_str(&format!("x0 = {}\n", m.x0));
        out.push_str(&format!("mu_star = {}\n", m.mu_star));
        out.push_str(&format!("b = {}\n", m.b));
        out.push_str(&format!("sigma = {}\n", render_list(&m.sigma)));
        out.push_str(&format!("a = {}\n", render_list(&m.period_ends)));
        out.push_str(&format!("exit_law = {}\n", render_exit_law(&m.exit_law)));
        out.push_str("\n[simulation]\n");
        out.push_str(&format!("paths = {}\n", m.n_paths));
        out.push_str(&format!("steps_per_unit = {}\n", m.steps_per_unit));
        out.push_str(&format!("seed = {}\n", m.seed));
    }
    out.push_str("\n[verify]\n");
    out.push_str(&format!("scenarios = {}\n", config.verify.scenarios));
    out.push_str(&format!("n_steps = {}\n", config.verify.n_steps));
    out.push_str(&format!("sets = {}\n", config.verify.sets));
    out
}
