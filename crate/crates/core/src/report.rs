//! Deterministic result persistence: CSV emission and run manifests.
//!
//! Column orders are fixed, floats are written with 17 significant digits so
//! they round-trip exactly, and identical inputs produce byte-identical
//! files.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use crate::bprocess::BProcess;
use crate::calculus::LawResult;
use crate::market::{GalleryCheck, OraclePoint, WealthOutcome};
use crate::Result;

/// Floating-point rendering with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// FNV-1a digest of the raw configuration bytes.
pub fn config_digest(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// `stock.csv`: one row per path and grid node; outside the horizon the
/// price field is empty and `in_set` is 0.
pub fn stock_csv(stock: &BProcess) -> String {
    let set = stock.set();
    let grid = set.grid();
    let mut out = String::from("path_id,node,time,price,in_set\n");
    for w in 0..set.n_scenarios() {
        let last = set.last_node(w);
        for node in 0..grid.n_nodes() {
            let time = fmt_f64(grid.node_time(node));
            if node <= last {
                let price = fmt_f64(stock.row(w)[node]);
                out.push_str(&format!("{w},{node},{time},{price},1\n"));
            } else {
                out.push_str(&format!("{w},{node},{time},,0\n"));
            }
        }
    }
    out
}

/// `wealth.csv`: member nodes only; the fraction column carries the
/// fraction of wealth in force at each node.
pub fn wealth_csv(outcome: &WealthOutcome) -> String {
    let set = outcome.wealth.set();
    let grid = set.grid();
    let mut out = String::from("path_id,node,time,wealth,fraction\n");
    for w in 0..set.n_scenarios() {
        for node in 0..set.member_count(w) {
            let time = fmt_f64(grid.node_time(node));
            let wealth = fmt_f64(outcome.wealth.row(w)[node]);
            let fraction = if node == 0 {
                outcome.fractions.atom(w)
            } else {
                outcome.fractions.step(w, node)
            };
            out.push_str(&format!("{w},{node},{time},{wealth},{}\n", fmt_f64(fraction)));
        }
    }
    out
}

/// One optimization row: closed form against the oracle for a period.
#[derive(Debug, Clone)]
pub struct OptimizeRow {
    pub period: usize,
    pub closed_form_w: f64,
    pub oracle_w: f64,
    pub elu_at_closed_form: f64,
    pub elu_at_oracle: f64,
    pub stderr: f64,
}

pub fn optimize_csv(rows: &[OptimizeRow]) -> String {
    let mut out =
        String::from("period,closed_form_w,oracle_w,elu_at_closed_form,elu_at_oracle,stderr\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.period,
            fmt_f64(r.closed_form_w),
            fmt_f64(r.oracle_w),
            fmt_f64(r.elu_at_closed_form),
            fmt_f64(r.elu_at_oracle),
            fmt_f64(r.stderr),
        ));
    }
    out
}

pub fn verify_csv(laws: &[LawResult]) -> String {
    let mut out = String::from("law,max_residual,tolerance,pass\n");
    for l in laws {
        out.push_str(&format!(
            "{},{},{},{}\n",
            l.law,
            fmt_f64(l.max_residual),
            fmt_f64(l.tolerance),
            l.pass
        ));
    }
    out
}

/// Gallery checks rendered in the verify schema: the residual column holds
/// the distance to the expected value.
pub fn gallery_csv(checks: &[GalleryCheck]) -> String {
    let mut out = String::from("law,max_residual,tolerance,pass\n");
    for c in checks {
        out.push_str(&format!(
            "{},{},{},{}\n",
            c.name,
            fmt_f64((c.value - c.expected).abs()),
            fmt_f64(c.tolerance),
            c.pass
        ));
    }
    out
}

/// Oracle evaluation table, one row per fraction grid point.
pub fn oracle_points_csv(points: &[OraclePoint]) -> String {
    let mut out = String::from("fraction,elu,stderr,rejected\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{},{}\n",
            fmt_f64(p.fraction),
            fmt_f64(p.elu),
            fmt_f64(p.stderr),
            p.rejected
        ));
    }
    out
}

/// Provenance record written alongside every run's data files. Identical
/// manifests (timestamp aside) imply byte-identical CSV outputs.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub subcommand: String,
    pub seed: u64,
    pub paths: usize,
    pub steps_per_unit: usize,
    pub config_digest: u64,
    pub engine_version: String,
    pub outputs: Vec<String>,
    pub timestamp_unix: u64,
}

impl RunManifest {
    pub fn new(subcommand: &str, seed: u64, paths: usize, steps_per_unit: usize, digest: u64) -> Self {
        RunManifest {
            subcommand: subcommand.to_string(),
            seed,
            paths,
            steps_per_unit,
            config_digest: digest,
            engine_version: env!("CARGO_PKG_VERSION").to_string(),
            outputs: Vec::new(),
            timestamp_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("subcommand = {}\n", self.subcommand));
        out.push_str(&format!("seed = {}\n", self.seed));
        out.push_str(&format!("paths = {}\n", self.paths));
        out.push_str(&format!("steps_per_unit = {}\n", self.steps_per_unit));
        out.push_str(&format!("config_digest = {:016x}\n", self.config_digest));
        out.push_str(&format!("engine_version = {}\n", self.engine_version));
        out.push_str(&format!("outputs = {}\n", self.outputs.join(",")));
        out.push_str(&format!("timestamp_unix = {}\n", self.timestamp_unix));
        out
    }

    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join("manifest.txt"), self.render())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_rendering_round_trips() {
        for x in [
            0.0,
            1.0,
            -1.0,
            std::f64::consts::PI,
            6.0f64.ln(),
            1e-300,
            -2.2250738585072014e-308,
            9.9e307,
        ] {
            let s = fmt_f64(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back, x, "{s}");
        }
    }

    #[test]
    fn digest_is_stable_and_sensitive() {
        let a = config_digest(b"[market]\ns0 = 1\n");
        let b = config_digest(b"[market]\ns0 = 1\n");
        let c = config_digest(b"[market]\ns0 = 2\n");
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn manifest_renders_every_field() {
        let mut m = RunManifest::new("verify", 7, 100, 64, 42);
        m.outputs.push("verify.csv".into());
        let text = m.render();
        for needle in [
            "subcommand = verify",
            "seed = 7",
            "paths = 100",
            "steps_per_unit = 64",
            "config_digest = 000000000000002a",
            "outputs = verify.csv",
        ] {
            assert!(text.contains(needle), "missing '{needle}' in {text}");
        }
    }
}
