//! Scenario runner: parses scenario files, dispatches to the pricing
//! engines and the portfolio simulator, and writes comparison tables and
//! machine-readable reports.
//!
//! Scenario files are JSON with a versioned schema; unknown fields are
//! errors. Reports embed the scenario hash, engine versions and every seed
//! so repeated runs are byte-identical.

pub mod report;
pub mod scenario;

use defrisk::analytic;
use defrisk::hedge;
use defrisk::model::{CloseoutRule, CollateralMode};
use defrisk::montecarlo::{mc_effective_discount, mc_loss_integral};
use defrisk::pde::{
    solve_default_risky, solve_general_closeout, solve_rho_structured, PriceSurface,
};
use defrisk::replication::{
    bk13_consistent_surface, detect_arbitrage, money_account_spread, simulate, ArbitrageVerdict,
};
use report::{CrossCheck, EngineResult, OutputFormat, Report, SimSection};
use scenario::{Engine, Scenario};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Exit code for cross-check failures.
pub const EXIT_CHECK_FAILED: i32 = 1;
/// Exit code for parse and validation errors.
pub const EXIT_INPUT_ERROR: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    /// Scenario could not be read, parsed or validated.
    #[error("{0}")]
    Input(String),
    /// Engines ran but a cross-check failed.
    #[error("cross-check failed: {0}")]
    CheckFailed(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT_ERROR,
            CliError::CheckFailed(_) => EXIT_CHECK_FAILED,
            CliError::Io(_) => EXIT_INPUT_ERROR,
        }
    }

    fn input(e: impl std::fmt::Display) -> Self {
        CliError::Input(e.to_string())
    }
}

/// Loads, parses and validates a scenario file.
pub fn load_scenario(path: &Path) -> Result<(Scenario, String), CliError> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let scenario = parse_scenario(&bytes)?;
    let hash = format!("sha256:{}", hex_digest(&bytes));
    Ok((scenario, hash))
}

/// Parses and validates scenario JSON. Parse errors carry line/column;
/// validation errors carry the offending field path.
pub fn parse_scenario(bytes: &[u8]) -> Result<Scenario, CliError> {
    let scenario: Scenario = serde_json::from_slice(bytes).map_err(CliError::input)?;
    scenario.validate().map_err(CliError::input)?;
    Ok(scenario)
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Everything one `price` or `simulate` invocation produced.
pub struct RunArtifacts {
    pub report: Report,
    pub surface: Option<PriceSurface>,
    pub checks_pass: bool,
}

/// Runs the engines a scenario requests and assembles the report.
pub fn run_scenario(
    scenario: &Scenario,
    scenario_hash: &str,
    only_sim: bool,
) -> Result<RunArtifacts, CliError> {
    let mut engines: Vec<EngineResult> = Vec::new();
    let mut notes: Vec<String> = Vec::new();
    let mut seeds: BTreeMap<String, u64> = BTreeMap::new();
    let mut sim_section: Option<SimSection> = None;

    let requested: Vec<Engine> = if only_sim {
        vec![Engine::Sim]
    } else {
        scenario.engines.clone()
    };

    let needs_surface = requested.iter().any(|e| {
        matches!(e, Engine::Pde | Engine::Sim)
            || (matches!(e, Engine::Mc) && scenario.wants_loss_integral())
    });
    let surface = if needs_surface {
        Some(solve_scenario_surface(scenario)?)
    } else {
        None
    };

    for engine in &requested {
        match engine {
            Engine::Pde => {
                let surf = surface.as_ref().unwrap();
                let (price, _, _) = surf
                    .at_origin(scenario.market.spot)
                    .map_err(CliError::input)?;
                engines.push(EngineResult {
                    engine: "pde".to_string(),
                    price,
                    std_error: None,
                    tolerance: pde_tolerance(price),
                    in_cross_checks: true,
                    detail: None,
                });
                // Structured-money-account wedge, reported but never
                // cross-checked: it is not a market-cleared price.
                if let Some(ma) = scenario.money_account_structure(surf)? {
                    let (_, spread) = money_account_spread(&ma, scenario.market.rate);
                    if spread.abs() > 1e-12 {
                        let structured = solve_rho_structured(
                            &scenario.market,
                            &scenario.payoff,
                            &scenario.grid_spec()?,
                            &scenario.parties.a,
                            &scenario.parties.b,
                            &ma,
                        )
                        .map_err(CliError::input)?;
                        let wedge_price = structured
                            .at_origin(scenario.market.spot)
                            .map_err(CliError::input)?
                            .0;
                        engines.push(EngineResult {
                            engine: "pde_rho_structured".to_string(),
                            price: wedge_price,
                            std_error: None,
                            tolerance: pde_tolerance(wedge_price),
                            in_cross_checks: false,
                            detail: Some("not market-cleared".to_string()),
                        });
                        notes.push(format!(
                            "pde_rho_structured prices the structured money account \
                             (spread {spread:.6}); not market-cleared, excluded from \
                             cross-checks"
                        ));
                    }
                }
            }
            Engine::Analytic => {
                let price = analytic::effective_hazard_price(
                    &scenario.market,
                    &scenario.payoff,
                    &scenario.parties.a,
                    &scenario.parties.b,
                    scenario.proportional_k(),
                )
                .map_err(CliError::input)?;
                engines.push(EngineResult {
                    engine: "analytic".to_string(),
                    price,
                    std_error: None,
                    tolerance: 1e-9 * price.abs() + 1e-12,
                    in_cross_checks: true,
                    detail: None,
                });
            }
            Engine::Mc => {
                let cfg = scenario
                    .mc
                    .as_ref()
                    .expect("validated: mc config present");
                seeds.insert("mc".to_string(), cfg.seed);
                if scenario.wants_effective_discount() {
                    let est = mc_effective_discount(
                        &scenario.market,
                        &scenario.payoff,
                        &scenario.parties.a,
                        &scenario.parties.b,
                        scenario.proportional_k(),
                        cfg,
                    )
                    .map_err(CliError::input)?;
                    engines.push(EngineResult {
                        engine: "mc_effective_discount".to_string(),
                        price: est.mean,
                        std_error: Some(est.std_error),
                        tolerance: 3.0 * est.std_error,
                        in_cross_checks: true,
                        detail: None,
                    });
                }
                if scenario.wants_loss_integral() {
                    let surf = surface.as_ref().unwrap();
                    let est = mc_loss_integral(
                        &scenario.market,
                        &scenario.payoff,
                        &scenario.parties.a,
                        &scenario.parties.b,
                        &scenario.collateral,
                        surf,
                        cfg,
                    )
                    .map_err(CliError::input)?;
                    engines.push(EngineResult {
                        engine: "mc_loss_integral".to_string(),
                        price: est.mean,
                        std_error: Some(est.std_error),
                        tolerance: 3.0 * est.std_error,
                        in_cross_checks: true,
                        detail: None,
                    });
                    if matches!(scenario.collateral.mode, CollateralMode::FixedSchedule { .. }) {
                        notes.push(
                            "collateral schedules sample left-continuously; the first \
                             interval uses the time-0 value"
                                .to_string(),
                        );
                    }
                }
            }
            Engine::Sim => {
                let cfg = scenario
                    .sim
                    .as_ref()
                    .expect("validated: sim config present");
                seeds.insert("sim".to_string(), cfg.config.seed);
                let strategy = cfg.strategy_spec();
                let sim_surface = if cfg.is_bk13() {
                    bk13_consistent_surface(
                        &scenario.market,
                        &scenario.payoff,
                        &scenario.grid_spec()?,
                        &scenario.parties.a,
                        &scenario.parties.b,
                    )
                    .map_err(CliError::input)?
                } else {
                    surface.clone().expect("surface solved for sim")
                };
                let ma = scenario
                    .money_account_structure(&sim_surface)?
                    .unwrap_or_else(|| {
                        defrisk::model::MoneyAccountStructure::risk_free(scenario.market.rate)
                    });
                let report = simulate(
                    &scenario.market,
                    &scenario.payoff,
                    &scenario.parties.a,
                    &scenario.parties.b,
                    &strategy,
                    &ma,
                    &sim_surface,
                    &cfg.config,
                )
                .map_err(CliError::input)?;
                let verdict = detect_arbitrage(&report, 0.997);
                let (_, spread) = money_account_spread(&ma, scenario.market.rate);
                sim_section = Some(SimSection {
                    mean_drift: report.mean_drift,
                    drift_std_error: report.drift_std_error,
                    predicted_drift: report.predicted_drift,
                    money_account_spread: spread,
                    verdict: verdict_label(verdict).to_string(),
                    arbitrage_flag: report.arbitrage_flag,
                    n_paths: report.n_paths,
                    n_default_paths: report.n_default_paths,
                    jump_residuals: report.jump_residuals.clone(),
                    trace: report.trace,
                });
            }
        }
    }

    let cross_checks = build_cross_checks(&engines);
    let checks_pass = cross_checks.iter().all(|c| c.pass);

    let mut engine_versions = BTreeMap::new();
    engine_versions.insert("defrisk".to_string(), defrisk::VERSION.to_string());
    engine_versions.insert(
        "defrisk-cli".to_string(),
        env!("CARGO_PKG_VERSION").to_string(),
    );

    let report = Report {
        schema_version: 1,
        scenario_id: scenario.id.clone(),
        scenario_hash: scenario_hash.to_string(),
        engine_versions,
        seeds,
        engines,
        cross_checks,
        notes,
        sim: sim_section,
    };
    Ok(RunArtifacts {
        report,
        surface,
        checks_pass,
    })
}

fn verdict_label(v: ArbitrageVerdict) -> &'static str {
    match v {
        ArbitrageVerdict::Clean => "clean",
        ArbitrageVerdict::NonClearingDrift => "non_clearing_drift",
        ArbitrageVerdict::JumpArbitrage => "jump_arbitrage",
        ArbitrageVerdict::Inconclusive => "inconclusive",
    }
}

/// Price tolerance granted to the grid solver in cross-checks at the
/// scenario's resolution: 0.2% relative plus a small absolute floor.
fn pde_tolerance(price: f64) -> f64 {
    2e-3 * price.abs() + 1e-4
}

fn build_cross_checks(engines: &[EngineResult]) -> Vec<CrossCheck> {
    let mut checks = Vec::new();
    let participating: Vec<&EngineResult> =
        engines.iter().filter(|e| e.in_cross_checks).collect();
    for i in 0..participating.len() {
        for j in i + 1..participating.len() {
            let (a, b) = (participating[i], participating[j]);
            let diff = (a.price - b.price).abs();
            let combined = a.tolerance + b.tolerance;
            checks.push(CrossCheck {
                a: a.engine.clone(),
                b: b.engine.clone(),
                diff,
                combined_tolerance: combined,
                pass: diff <= combined,
            });
        }
    }
    checks
}

/// Solves the scenario's pricing surface per its closeout rule.
pub fn solve_scenario_surface(scenario: &Scenario) -> Result<PriceSurface, CliError> {
    let grid = scenario.grid_spec()?;
    let surface = match scenario.closeout {
        CloseoutRule::Proportional => match &scenario.collateral.mode {
            CollateralMode::FixedSchedule { .. } => solve_general_closeout(
                &scenario.market,
                &scenario.payoff,
                &grid,
                &scenario.parties.a,
                &scenario.parties.b,
                CloseoutRule::Collateralized,
                &scenario.collateral,
            ),
            _ => solve_default_risky(
                &scenario.market,
                &scenario.payoff,
                &grid,
                &scenario.parties.a,
                &scenario.parties.b,
                &scenario.collateral,
            ),
        },
        rule => solve_general_closeout(
            &scenario.market,
            &scenario.payoff,
            &grid,
            &scenario.parties.a,
            &scenario.parties.b,
            rule,
            &scenario.collateral,
        ),
    };
    surface.map_err(CliError::input)
}

/// Runs the `price` subcommand: all requested engines, report plus
/// surface/weights side files.
pub fn run_price(
    scenario_path: &Path,
    out_dir: &Path,
    format: OutputFormat,
) -> Result<i32, CliError> {
    let (scenario, hash) = load_scenario(scenario_path)?;
    let artifacts = run_scenario(&scenario, &hash, false)?;
    write_outputs(&scenario, &artifacts, out_dir, format)?;
    print_comparison(&artifacts.report);
    Ok(if artifacts.checks_pass { 0 } else { EXIT_CHECK_FAILED })
}

/// Runs the `simulate` subcommand: the sim engine only.
pub fn run_simulate(
    scenario_path: &Path,
    out_dir: &Path,
    format: OutputFormat,
) -> Result<i32, CliError> {
    let (scenario, hash) = load_scenario(scenario_path)?;
    if scenario.sim.is_none() {
        return Err(CliError::Input(
            "sim: config required by the simulate command".to_string(),
        ));
    }
    let artifacts = run_scenario(&scenario, &hash, true)?;
    write_outputs(&scenario, &artifacts, out_dir, format)?;
    if let Some(sim) = &artifacts.report.sim {
        println!(
            "sim: drift {:+.6e} +- {:.6e} (predicted {:+.6e}), defaults {}, verdict {}",
            sim.mean_drift,
            sim.drift_std_error,
            sim.predicted_drift,
            sim.n_default_paths,
            sim.verdict
        );
    }
    Ok(0)
}

/// Runs the `sweep` subcommand: re-runs the scenario with the numeric
/// field at `param_path` set to each value, collecting a long-format CSV
/// (`param,value,engine,price,stderr`). Sim rows report drift in the price
/// column.
pub fn run_sweep(
    scenario_path: &Path,
    param_path: &str,
    values: &[f64],
    out_dir: &Path,
    _format: OutputFormat,
) -> Result<i32, CliError> {
    let bytes = fs::read(scenario_path)
        .map_err(|e| CliError::Input(format!("{}: {e}", scenario_path.display())))?;
    let base: serde_json::Value = serde_json::from_slice(&bytes).map_err(CliError::input)?;
    if values.is_empty() {
        return Err(CliError::Input("sweep: no values given".to_string()));
    }

    fs::create_dir_all(out_dir)?;
    let mut rows = String::from("param,value,engine,price,stderr\n");
    let mut all_pass = true;

    for &value in values {
        let mut doc = base.clone();
        set_numeric_path(&mut doc, param_path, value)?;
        let patched = serde_json::to_vec(&doc).map_err(CliError::input)?;
        let scenario = parse_scenario(&patched)?;
        let hash = format!("sha256:{}", hex_digest(&patched));
        let artifacts = run_scenario(&scenario, &hash, false)?;
        all_pass &= artifacts.checks_pass;
        for e in &artifacts.report.engines {
            rows.push_str(&format!(
                "{},{},{},{},{}\n",
                param_path,
                value,
                e.engine,
                e.price,
                e.std_error.map(|s| s.to_string()).unwrap_or_default()
            ));
        }
        if let Some(sim) = &artifacts.report.sim {
            rows.push_str(&format!(
                "{},{},sim,{},{}\n",
                param_path, value, sim.mean_drift, sim.drift_std_error
            ));
        }
    }

    let path = out_dir.join("sweep.csv");
    fs::write(&path, rows)?;
    println!("wrote {}", path.display());
    Ok(if all_pass { 0 } else { EXIT_CHECK_FAILED })
}

/// Sets the numeric field addressed by a dotted path (object keys and
/// array indices) to `value`.
fn set_numeric_path(
    doc: &mut serde_json::Value,
    path: &str,
    value: f64,
) -> Result<(), CliError> {
    let mut cur = doc;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        let next = match cur {
            serde_json::Value::Object(map) => map.get_mut(*seg),
            serde_json::Value::Array(arr) => seg
                .parse::<usize>()
                .ok()
                .and_then(|idx| arr.get_mut(idx)),
            _ => None,
        };
        let next = next.ok_or_else(|| {
            CliError::Input(format!("sweep: path `{path}` not found at `{seg}`"))
        })?;
        if last {
            if !next.is_number() {
                return Err(CliError::Input(format!(
                    "sweep: path `{path}` does not address a numeric field"
                )));
            }
            *next = serde_json::json!(value);
            return Ok(());
        }
        cur = next;
    }
    unreachable!("empty path rejected by split");
}

/// Writes report.json (or report.csv), surface.csv, weights.csv and
/// sim_trace.csv into the output directory.
pub fn write_outputs(
    scenario: &Scenario,
    artifacts: &RunArtifacts,
    out_dir: &Path,
    format: OutputFormat,
) -> Result<(), CliError> {
    fs::create_dir_all(out_dir)?;
    match format {
        OutputFormat::Json => {
            let path = out_dir.join("report.json");
            fs::write(&path, artifacts.report.to_json())?;
        }
        OutputFormat::Csv => {
            let path = out_dir.join("report.csv");
            fs::write(&path, artifacts.report.to_csv())?;
        }
    }

    if let Some(surface) = &artifacts.surface {
        let mut buf = Vec::new();
        surface.write_csv(&mut buf).map_err(CliError::Io)?;
        fs::write(out_dir.join("surface.csv"), buf)?;

        let mut wbuf = Vec::new();
        match hedge::write_weights_csv(
            surface,
            &scenario.parties.a,
            &scenario.parties.b,
            scenario.proportional_k(),
            1.0,
            &mut wbuf,
        ) {
            Ok(()) => fs::write(out_dir.join("weights.csv"), wbuf)?,
            Err(hedge::HedgeError::Model(e)) => {
                // R = 1 with chi < 1: the price exists but no bond hedge
                // does. Record why the weights file is absent.
                eprintln!("weights.csv skipped: {e}");
            }
            Err(e) => return Err(CliError::Input(e.to_string())),
        }
    }

    if let Some(sim) = &artifacts.report.sim {
        if !sim.trace.is_empty() {
            let mut buf = String::from("path,t,S,J_A,J_B,Pi,drift_pred\n");
            for r in &sim.trace {
                buf.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    r.path,
                    r.time,
                    r.spot,
                    r.default_a as u8,
                    r.default_b as u8,
                    r.portfolio_change,
                    r.drift_pred
                ));
            }
            fs::write(out_dir.join("sim_trace.csv"), buf)?;
        }
    }
    Ok(())
}

fn print_comparison(report: &Report) {
    println!("scenario {} ({})", report.scenario_id, report.scenario_hash);
    for e in &report.engines {
        match e.std_error {
            Some(se) => println!(
                "  {:<24} {:>14.8} +- {:.3e} (tol {:.3e})",
                e.engine, e.price, se, e.tolerance
            ),
            None => println!(
                "  {:<24} {:>14.8}              (tol {:.3e})",
                e.engine, e.price, e.tolerance
            ),
        }
    }
    for c in &report.cross_checks {
        println!(
            "  check {:<18} vs {:<18} diff {:.3e} <= {:.3e} : {}",
            c.a,
            c.b,
            c.diff,
            c.combined_tolerance,
            if c.pass { "pass" } else { "FAIL" }
        );
    }
    for n in &report.notes {
        println!("  note: {n}");
    }
}

/// Deterministic path helper used by tests.
pub fn out_file(out_dir: &Path, name: &str) -> PathBuf {
    out_dir.join(name)
}
