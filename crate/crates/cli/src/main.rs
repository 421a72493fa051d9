//! Command-line shell around the horizon-calc engine.
//!
//! Exit codes: 0 on success, 1 when a verification law or gallery check
//! fails, 2 on usage or configuration errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use horizon_calc::calculus::{identity_suite, SuiteSizes};
use horizon_calc::config::{parse_config_str, ParsedConfig};
use horizon_calc::grid::ScenarioBatch;
use horizon_calc::market::{
    build_market_processes, closed_form_fractions, counterexample_gallery, expected_log_utility,
    grid_search_oracle, level_market, na_certificate, simulate_stock, wealth, MarketConfig,
    Strategy,
};
use horizon_calc::report::{
    config_digest, gallery_csv, optimize_csv, oracle_points_csv, stock_csv, verify_csv,
    wealth_csv, OptimizeRow, RunManifest,
};
use horizon_calc::EngineError;

#[derive(Parser)]
#[command(name = "horizon-calc", version, about = "Stochastic calculus on sudden-stop horizons")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the identity suite and the pathology gallery
    Verify {
        /// Config file (the [verify] section sizes the suite)
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seed override
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Simulate the sudden-stop market and write the stock and wealth series
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Monte Carlo path count override
        #[arg(long)]
        paths: Option<usize>,
        /// Steps per unit time override
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Compare the closed-form optimal fraction against the grid-search oracle
    Optimize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        paths: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        /// Number of leading periods to optimize (default: all)
        #[arg(long)]
        periods: Option<usize>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Reproduce the counterexample gallery
    Gallery {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn cap_threads() {
    if let Ok(value) = std::env::var("HORIZON_CALC_THREADS") {
        if let Ok(n) = value.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn load_config(path: Option<&Path>) -> anyhow::Result<(ParsedConfig, u64)> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("cannot read config file {}", p.display()))?;
            let parsed = parse_config_str(&text)?;
            Ok((parsed, config_digest(text.as_bytes())))
        }
        None => Ok((
            ParsedConfig {
                market: None,
                verify: Default::default(),
            },
            config_digest(b""),
        )),
    }
}

fn require_market(parsed: &ParsedConfig) -> anyhow::Result<MarketConfig> {
    parsed
        .market
        .clone()
        .ok_or_else(|| EngineError::Config(vec!["config has no [market] section".into()]).into())
}

fn apply_overrides(
    market: &mut MarketConfig,
    seed: Option<u64>,
    paths: Option<usize>,
    steps: Option<usize>,
) {
    if let Some(s) = seed {
        market.seed = s;
    }
    if let Some(p) = paths {
        market.n_paths = p;
    }
    if let Some(s) = steps {
        market.steps_per_unit = s;
    }
}

fn run_verify(config: Option<&Path>, seed: Option<u64>, out: &Path) -> anyhow::Result<bool> {
    let (parsed, digest) = load_config(config)?;
    let seed = seed
        .or(parsed.market.as_ref().map(|m| m.seed))
        .unwrap_or(0);
    let sizes = SuiteSizes {
        n_steps: parsed.verify.n_steps,
        n_scenarios: parsed.verify.scenarios,
        n_sets: parsed.verify.sets,
    };
    let suite = identity_suite(seed, sizes);
    let gallery = counterexample_gallery(seed)?;

    println!(
        "identity suite (seed {seed}, {} scenarios, {} sets):",
        sizes.n_scenarios, sizes.n_sets
    );
    for law in &suite.laws {
        println!(
            "  {:<36} residual {:>12.3e}  tol {:>8.0e}  {}",
            law.law,
            law.max_residual,
            law.tolerance,
            if law.pass { "pass" } else { "FAIL" }
        );
    }
    println!("gallery:");
    for check in &gallery.checks {
        println!(
            "  {:<36} value {:>14.6e}  expected {:>14.6e}  {}",
            check.name,
            check.value,
            check.expected,
            if check.pass { "pass" } else { "FAIL" }
        );
    }

    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("verify.csv"), verify_csv(&suite.laws))?;
    std::fs::write(out.join("gallery.csv"), gallery_csv(&gallery.checks))?;
    let mut manifest = RunManifest::new("verify", seed, sizes.n_scenarios, sizes.n_steps, digest);
    manifest.outputs = vec!["verify.csv".into(), "gallery.csv".into()];
    manifest.write_to(out)?;

    Ok(suite.all_pass() && gallery.all_pass())
}

fn run_simulate(
    config: &Path,
    seed: Option<u64>,
    paths: Option<usize>,
    steps: Option<usize>,
    out: &Path,
) -> anyhow::Result<()> {
    let (parsed, digest) = load_config(Some(config))?;
    let mut market = require_market(&parsed)?;
    apply_overrides(&mut market, seed, paths, steps);
    market.validate()?;

    let batch = ScenarioBatch::new(market.n_paths, market.seed)?;
    let processes = build_market_processes(&market, &batch)?;
    let stock = simulate_stock(&market, &processes)?;
    let fractions = closed_form_fractions(&market);
    let outcome = wealth(
        &Strategy::Fractions(fractions.clone()),
        &market,
        &processes,
        &stock,
    )?;
    let na = na_certificate(&market, &stock)?;

    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("stock.csv"), stock_csv(&stock))?;
    std::fs::write(out.join("wealth.csv"), wealth_csv(&outcome))?;
    let mut manifest = RunManifest::new(
        "simulate",
        market.seed,
        market.n_paths,
        market.steps_per_unit,
        digest,
    );
    manifest.outputs = vec!["stock.csv".into(), "wealth.csv".into()];
    manifest.write_to(out)?;

    println!(
        "simulated {} paths over [0, {}] at {} steps per unit (seed {})",
        market.n_paths,
        market.horizon(),
        market.steps_per_unit,
        market.seed
    );
    println!("closed-form fractions per period: {fractions:?}");
    println!(
        "no-arbitrage certificate: {}",
        if na.granted { "granted" } else { "refused" }
    );
    for reason in &na.reasons {
        println!("  {reason}");
    }
    Ok(())
}

fn run_optimize(
    config: &Path,
    seed: Option<u64>,
    paths: Option<usize>,
    steps: Option<usize>,
    periods: Option<usize>,
    out: &Path,
) -> anyhow::Result<()> {
    let (parsed, digest) = load_config(Some(config))?;
    let mut market = require_market(&parsed)?;
    apply_overrides(&mut market, seed, paths, steps);
    market.validate()?;

    let n_periods = periods
        .unwrap_or(market.n_periods())
        .min(market.n_periods());
    if n_periods == 0 {
        bail!("no periods to optimize");
    }
    let closed = closed_form_fractions(&market);
    let top = closed.iter().fold(4.0f64, |a, &w| a.max(1.5 * w));
    let n_points = (top / 0.1).round() as usize;
    let w_grid: Vec<f64> = (0..=n_points).map(|i| i as f64 * 0.1).collect();
    let batch = ScenarioBatch::new(market.n_paths, market.seed)?;

    std::fs::create_dir_all(out)?;
    let mut rows = Vec::new();
    for period in 1..=n_periods {
        let level = level_market(&market, &batch, period)?;
        let oracle = grid_search_oracle(&level, &w_grid, market.x0)?;
        let (elu_closed, stderr, _) = expected_log_utility(&level, closed[period - 1], market.x0)?;
        println!(
            "period {period}: closed form w = {:.4}, oracle argmax = {:.4} (elu {:.6} +/- {:.2e})",
            closed[period - 1],
            oracle.argmax,
            oracle.best_elu,
            stderr
        );
        rows.push(OptimizeRow {
            period,
            closed_form_w: closed[period - 1],
            oracle_w: oracle.argmax,
            elu_at_closed_form: elu_closed,
            elu_at_oracle: oracle.best_elu,
            stderr,
        });
        std::fs::write(
            out.join(format!("oracle_period_{period}.csv")),
            oracle_points_csv(&oracle.points),
        )?;
    }
    std::fs::write(out.join("optimize.csv"), optimize_csv(&rows))?;
    let mut manifest = RunManifest::new(
        "optimize",
        market.seed,
        market.n_paths,
        market.steps_per_unit,
        digest,
    );
    manifest.outputs = vec!["optimize.csv".into()];
    for period in 1..=n_periods {
        manifest.outputs.push(format!("oracle_period_{period}.csv"));
    }
    manifest.write_to(out)?;
    Ok(())
}

fn run_gallery(seed: Option<u64>, out: &Path) -> anyhow::Result<bool> {
    let seed = seed.unwrap_or(0);
    let gallery = counterexample_gallery(seed)?;
    for check in &gallery.checks {
        println!(
            "{:<36} value {:>14.6e}  expected {:>14.6e}  {}",
            check.name,
            check.value,
            check.expected,
            if check.pass { "pass" } else { "FAIL" }
        );
    }
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("gallery.csv"), gallery_csv(&gallery.checks))?;
    let mut manifest = RunManifest::new("gallery", seed, 0, 0, config_digest(b""));
    manifest.outputs = vec!["gallery.csv".into()];
    manifest.write_to(out)?;
    Ok(gallery.all_pass())
}

fn main() -> ExitCode {
    cap_threads();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Verify { config, seed, out } => {
            run_verify(config.as_deref(), *seed, out).map(|pass| !pass)
        }
        Command::Simulate {
            config,
            seed,
            paths,
            steps,
            out,
        } => run_simulate(config, *seed, *paths, *steps, out).map(|()| false),
        Command::Optimize {
            config,
            seed,
            paths,
            steps,
            periods,
            out,
        } => run_optimize(config, *seed, *paths, *steps, *periods, out).map(|()| false),
        Command::Gallery { seed, out } => run_gallery(*seed, out).map(|pass| !pass),
    };
    match result {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => {
            eprintln!("verification failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
