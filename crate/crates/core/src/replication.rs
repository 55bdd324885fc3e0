//! Discrete-time simulator of the self-financing hedged portfolio.
//!
//! Each step re-strikes the strategy's positions at current marks, closes
//! the portfolio to zero value through the money account, evolves the spot
//! by an exact lognormal step, draws first-to-default indicators, and
//! records the step P&L. Over many paths the mean P&L per unit time is the
//! portfolio drift; at defaults the pure jump P&L is recorded as the
//! residual. A clean replication strategy with a risk-free money account
//! shows zero drift and zero residuals; money-account components accruing
//! at a spread over the risk-free rate show up as drift equal to
//! `spread x account size`, and an own-bond funding strategy whose bond
//! leg is pinned by funding rather than the default jump shows up as
//! one-sided jump residuals. [`detect_arbitrage`] turns those measurements
//! into a verdict.
//!
//! Paths own deterministic RNG substreams and results aggregate by
//! pairwise reduction, so reports are bit-identical for a fixed seed
//! regardless of the parallel schedule.

use crate::analytic::norm_inverse_cdf;
use crate::exec;
use crate::hedge::{
    aggregate_bond_portfolio, bk13_weights, collateralized_weights, BondPortfolio, HedgeError,
    SurfacePoint,
};
use crate::model::{
    bond_yield, collateral_adjusted_recovery, CounterpartyParams, MarketParams, ModelError,
    MoneyAccountComponent, MoneyAccountStructure, Party, PayoffSpec,
};
use crate::montecarlo::path_rng;
use crate::pde::{PdeError, PriceSurface};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Hedge(#[from] HedgeError),
    #[error(transparent)]
    Pde(#[from] PdeError),
    #[error("sim config: {0}")]
    InvalidConfig(String),
    #[error("surface does not match the scenario: {0}")]
    SurfaceMismatch(String),
    #[error(
        "{fraction:.4} of simulated steps fell outside the price surface \
         domain (limit 0.01); widen the grid"
    )]
    OffGridExcess { fraction: f64 },
    #[error("weights undefined: total money account is zero")]
    WeightsUndefined,
}

/// Simulation controls. Rebalancing happens every step. The default
/// Bernoulli approximation requires `dt * (lambda_A + lambda_B) < 0.1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
    #[serde(default)]
    pub collect_trace: bool,
}

impl SimConfig {
    pub fn new(dt: f64, horizon: f64, n_paths: usize, seed: u64) -> Self {
        SimConfig {
            dt,
            horizon,
            n_paths,
            seed,
            collect_trace: false,
        }
    }
}

/// Choice of the own-default closeout in the funding-pinned strategy;
/// fixes the default gap epsilon given the A bond recovery.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonRule {
    /// Closeout consistent with the funding-pinned bond leg: epsilon = 0.
    Zero,
    /// Own default recovers `chi * V`: epsilon = (chi - R_A) V.
    OwnRecovery { chi: f64 },
    /// Fixed cash offset from the consistent closeout: epsilon = amount.
    Constant { amount: f64 },
}

impl EpsilonRule {
    /// Contractual closeout value `g_A` at pre-default value `v`.
    pub fn own_closeout(&self, v: f64, bond_recovery_a: f64) -> f64 {
        match *self {
            EpsilonRule::Zero => bond_recovery_a * v,
            EpsilonRule::OwnRecovery { chi } => chi * v,
            EpsilonRule::Constant { amount } => bond_recovery_a * v + amount,
        }
    }

    /// The default gap this rule opens (uncollateralized funding leg).
    pub fn epsilon(&self, v: f64, bond_recovery_a: f64) -> f64 {
        self.own_closeout(v, bond_recovery_a) - bond_recovery_a * v
    }
}

/// Marks visible to a strategy when it re-strikes its positions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepState {
    pub time: f64,
    pub spot: f64,
    pub value: f64,
    pub delta: f64,
}

/// Scenario data a custom strategy may consult.
pub struct SimContext<'a> {
    pub market: &'a MarketParams,
    pub cpty_a: &'a CounterpartyParams,
    pub cpty_b: &'a CounterpartyParams,
}

/// One bond leg of the hedge: units held, unit price (flat between
/// defaults), recovery applied at the issuer's default and the coupon rate
/// accrued while alive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BondLeg {
    pub units: f64,
    pub price: f64,
    pub recovery: f64,
    pub coupon_rate: f64,
}

impl BondLeg {
    pub fn value(&self) -> f64 {
        self.units * self.price
    }
}

/// Positions a strategy holds over one step. The money account is not part
/// of this: the simulator closes the portfolio to zero value itself.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Positions {
    pub stock: f64,
    pub derivative: f64,
    pub bonds_a: Vec<BondLeg>,
    pub bonds_b: Vec<BondLeg>,
}

pub type StrategyFn =
    dyn Fn(&StepState, &SimContext<'_>) -> Result<Positions, SimError> + Send + Sync;

/// Hedging strategy run by the simulator.
#[derive(Clone)]
pub enum StrategySpec {
    /// Delta plus both bond legs sized by the loss ratios.
    FullReplication,
    /// Bond legs scaled by the unsecured fraction `(1 - k)^+`; closeouts
    /// use the collateral-adjusted recoveries.
    Collateralized { k: f64 },
    /// Funding-pinned own-bond leg with the given closeout rule for the
    /// issuer's default; zero-recovery bonds hedge the B side.
    Bk13 { epsilon: EpsilonRule },
    /// Caller-supplied positions; closeouts use the plain proportional
    /// recoveries.
    Custom(Arc<StrategyFn>),
}

impl StrategySpec {
    /// Full replication with the A-side default hedge carried by an
    /// arbitrary bond portfolio rescaled every step so its aggregate
    /// shortfall offsets the derivative's A-default loss. Only that
    /// aggregate matters: compositions with equal shortfall produce
    /// identical residuals.
    pub fn portfolio_replication(composition_a: BondPortfolio) -> StrategySpec {
        StrategySpec::Custom(Arc::new(move |state, ctx| {
            let chi_a = ctx.cpty_a.derivative_recovery;
            let target = -(1.0 - chi_a) * state.value;
            let scaled = aggregate_bond_portfolio(&composition_a, target)?;
            let rate = ctx.market.rate;
            let lambda_a = ctx.cpty_a.hazard_rate;
            let bonds_a = scaled
                .issues
                .iter()
                .map(|i| BondLeg {
                    units: i.holding,
                    price: i.price,
                    recovery: i.recovery,
                    coupon_rate: rate + (1.0 - i.recovery) * lambda_a,
                })
                .collect();
            let z_b = crate::model::loss_ratio(ctx.cpty_b)?;
            let b_units = -z_b * state.value / ctx.cpty_b.bond_price;
            Ok(Positions {
                stock: -state.delta,
                derivative: 1.0,
                bonds_a,
                bonds_b: vec![BondLeg {
                    units: b_units,
                    price: ctx.cpty_b.bond_price,
                    recovery: ctx.cpty_b.bond_recovery,
                    coupon_rate: bond_yield(ctx.market, ctx.cpty_b),
                }],
            })
        }))
    }
}

impl std::fmt::Debug for StrategySpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StrategySpec::FullReplication => write!(f, "FullReplication"),
            StrategySpec::Collateralized { k } => write!(f, "Collateralized {{ k: {k} }}"),
            StrategySpec::Bk13 { epsilon } => write!(f, "Bk13 {{ epsilon: {epsilon:?} }}"),
            StrategySpec::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

/// Jump P&L recorded at a default step: the pure jump part of the step,
/// exactly zero under full replication. `spot` and `value` are the
/// pre-default marks the positions were struck at.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpResidual {
    pub path: usize,
    pub time: f64,
    pub party: Party,
    pub spot: f64,
    pub value: f64,
    pub residual: f64,
}

/// One row of the optional per-step trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub path: usize,
    pub time: f64,
    pub spot: f64,
    pub default_a: bool,
    pub default_b: bool,
    pub portfolio_change: f64,
    pub drift_pred: f64,
}

/// Simulation measurements. Drift statistics cover no-default steps;
/// `predicted_drift` is the closed-form money-account drift
/// `sum_a w_a (r_a - r) * M(t, S)` averaged over the same steps.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub mean_drift: f64,
    pub drift_std_error: f64,
    pub predicted_drift: f64,
    pub jump_residuals: Vec<JumpResidual>,
    pub arbitrage_flag: bool,
    pub n_paths: usize,
    pub n_default_paths: usize,
    pub steps_per_path: usize,
    pub dt: f64,
    pub off_grid_fraction: f64,
    pub notional_scale: f64,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
}

impl SimReport {
    /// Writes the per-step trace as CSV (`path,t,S,J_A,J_B,Pi,drift_pred`).
    pub fn write_trace_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "path,t,S,J_A,J_B,Pi,drift_pred")?;
        for r in &self.trace {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.path,
                r.time,
                r.spot,
                r.default_a as u8,
                r.default_b as u8,
                r.portfolio_change,
                r.drift_pred
            )?;
        }
        Ok(())
    }
}

/// Verdict of the arbitrage tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArbitrageVerdict {
    /// Drift consistent with zero and no one-sided jump residuals.
    Clean,
    /// Mean drift significant and matching the predicted money-account
    /// drift: prices are not cleared by the market.
    NonClearingDrift,
    /// Jump residuals all share one sign with no compensating drift: the
    /// portfolio is a free option on the default event.
    JumpArbitrage,
    /// One-sided residuals seen but too few defaults to call.
    Inconclusive,
}

/// Composite rate and spread over the risk-free rate of a structured money
/// account.
pub fn money_account_spread(ma: &MoneyAccountStructure, risk_free: f64) -> (f64, f64) {
    let rho = ma.composite_rate();
    (rho, rho - risk_free)
}

/// Named money-account structures from the funding-cost literature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MoneyAccountPreset {
    Piterbarg,
    BurgardKjaer,
}

/// Scenario state at which a preset money account is struck.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PresetState {
    pub value: f64,
    pub collateral: f64,
    pub delta: f64,
    pub spot: f64,
    pub risk_free_rate: f64,
    pub repo_rate: f64,
    pub funding_rate: f64,
    pub collateral_rate: f64,
    /// Jump in derivative value at a B default (funding-split preset).
    pub delta_v_b: f64,
}

/// Builds the preset's components from the scenario state, with weights
/// normalized by the total account so they sum to one.
pub fn preset_money_account(
    preset: MoneyAccountPreset,
    state: &PresetState,
) -> Result<MoneyAccountStructure, SimError> {
    let comp = |name: &str, amount: f64, rate: f64| (name.to_string(), amount, rate);
    let raw: Vec<(String, f64, f64)> = match preset {
        MoneyAccountPreset::Piterbarg => vec![
            comp("repo", -state.delta * state.spot, state.repo_rate),
            comp(
                "funding",
                state.value - state.collateral,
                state.funding_rate,
            ),
            comp("collateral", state.collateral, state.collateral_rate),
        ],
        MoneyAccountPreset::BurgardKjaer => {
            let shortfall_split = -state.value - state.delta_v_b;
            vec![
                comp(
                    "funding_surplus",
                    shortfall_split.max(0.0),
                    state.risk_free_rate,
                ),
                comp(
                    "funding_shortfall",
                    shortfall_split.min(0.0),
                    state.funding_rate,
                ),
                comp("repo", -state.delta * state.spot, state.repo_rate),
                comp(
                    "bond_short_proceeds",
                    -state.delta_v_b,
                    state.risk_free_rate,
                ),
            ]
        }
    };
    let total: f64 = raw.iter().map(|c| c.1).sum();
    if total.abs() < 1e-12 {
        return Err(SimError::WeightsUndefined);
    }
    Ok(MoneyAccountStructure {
        components: raw
            .into_iter()
            .map(|(name, amount, rate)| MoneyAccountComponent {
                name,
                weight: amount / total,
                rate,
            })
            .collect(),
    })
}

/// Surface consistent with the funding-pinned strategy: the issuer leg is
/// priced at its bond recovery (that is what the funding-pinned hedge
/// delivers), the counterparty leg at its derivative recovery. Marking the
/// strategy on this surface makes the no-default drift vanish, isolating
/// the epsilon jump.
pub fn bk13_consistent_surface(
    mkt: &MarketParams,
    payoff: &PayoffSpec,
    grid: &crate::pde::GridSpec,
    cpty_a: &CounterpartyParams,
    cpty_b: &CounterpartyParams,
) -> Result<PriceSurface, PdeError> {
    let a_adj = CounterpartyParams {
        derivative_recovery: cpty_a.bond_recovery,
        ..*cpty_a
    };
    crate::pde::solve_default_risky(
        mkt,
        payoff,
        grid,
        &a_adj,
        cpty_b,
        &crate::model::CollateralSpec::none(),
    )
}

struct PathOutcome {
    n_steps: usize,
    sum_dpi: f64,
    sum_dpi_sq: f64,
    sum_pred: f64,
    jump: Option<JumpResidual>,
    off_grid: usize,
    lookups: usize,
    trace: Vec<TraceRow>,
}

/// Runs the simulation. The surface must cover the horizon and carry the
/// same terminal payoff (for the funding-pinned strategy, build it with
/// [`bk13_consistent_surface`]).
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    mkt: &MarketParams,
    payoff: &PayoffSpec,
    cpty_a: &CounterpartyParams,
    cpty_b: &CounterpartyParams,
    strategy: &StrategySpec,
    ma: &MoneyAccountStructure,
    surface: &PriceSurface,
    cfg: &SimConfig,
) -> Result<SimReport, SimError> {
    mkt.validate()?;
    payoff.validate()?;
    cpty_a.validate("parties.a")?;
    cpty_b.validate("parties.b")?;
    ma.validate()?;
    if cfg.dt <= 0.0 || cfg.horizon <= 0.0 {
        return Err(SimError::InvalidConfig("dt and horizon must be > 0".to_string()));
    }
    if cfg.n_paths == 0 {
        return Err(SimError::InvalidConfig("n_paths must be >= 1".to_string()));
    }
    let total_hazard = cpty_a.hazard_rate + cpty_b.hazard_rate;
    if cfg.dt * total_hazard >= 0.1 {
        return Err(SimError::InvalidConfig(format!(
            "dt * (lambda_A + lambda_B) = {:.3} must stay below 0.1",
            cfg.dt * total_hazard
        )));
    }
    if cfg.horizon > surface.maturity() + 1e-9 {
        return Err(SimError::SurfaceMismatch(format!(
            "horizon {} exceeds surface maturity {}",
            cfg.horizon,
            surface.maturity()
        )));
    }
    if (surface.maturity() - payoff.maturity).abs() > 1e-9 {
        return Err(SimError::SurfaceMismatch(
            "surface maturity differs from payoff maturity".to_string(),
        ));
    }
    // Terminal slab must be the contractual payoff.
    let last = surface.times().len() - 1;
    for (j, &s) in surface.spots().iter().enumerate().step_by(
        (surface.spots().len() / 8).max(1),
    ) {
        let diff = (surface.value(last, j) - payoff.value(s)).abs();
        if diff > 1e-9 * payoff.value(s).abs().max(1.0) {
            return Err(SimError::SurfaceMismatch(
                "surface terminal values differ from the payoff".to_string(),
            ));
        }
    }

    let n_steps = ((cfg.horizon / cfg.dt).round() as usize).max(1);
    let dt = cfg.horizon / n_steps as f64;
    let drift_step = (mkt.drift - 0.5 * mkt.sigma * mkt.sigma) * dt;
    let vol_step = mkt.sigma * dt.sqrt();
    let p_a = cpty_a.hazard_rate * dt;
    let p_b = cpty_b.hazard_rate * dt;
    let rho = ma.composite_rate();
    let spread = rho - mkt.rate;
    let ctx = SimContext {
        market: mkt,
        cpty_a,
        cpty_b,
    };

    let outcomes: Vec<Result<PathOutcome, SimError>> = exec::map_indexed(cfg.n_paths, |p| {
        run_path(
            p, mkt, cpty_a, cpty_b, strategy, &ctx, surface, n_steps, dt, drift_step, vol_step,
            p_a, p_b, rho, spread, cfg,
        )
    });

    let mut per_path = Vec::with_capacity(cfg.n_paths);
    for o in outcomes {
        per_path.push(o?);
    }

    let sums: Vec<f64> = per_path.iter().map(|o| o.sum_dpi).collect();
    let sums_sq: Vec<f64> = per_path.iter().map(|o| o.sum_dpi_sq).collect();
    let preds: Vec<f64> = per_path.iter().map(|o| o.sum_pred).collect();
    let n_samples: usize = per_path.iter().map(|o| o.n_steps).sum();
    let total_dpi = exec::pairwise_sum(&sums);
    let total_dpi_sq = exec::pairwise_sum(&sums_sq);
    let total_pred = exec::pairwise_sum(&preds);

    let (mean_drift, drift_std_error) = if n_samples >= 2 {
        let n = n_samples as f64;
        let mean_step = total_dpi / n;
        let var_step = ((total_dpi_sq - n * mean_step * mean_step) / (n - 1.0)).max(0.0);
        (mean_step / dt, (var_step / n).sqrt() / dt)
    } else {
        (0.0, 0.0)
    };
    let predicted_drift = if n_samples > 0 {
        total_pred / n_samples as f64
    } else {
        0.0
    };

    let jump_residuals: Vec<JumpResidual> =
        per_path.iter().filter_map(|o| o.jump).collect();
    let n_default_paths = jump_residuals.len();
    let off_grid: usize = per_path.iter().map(|o| o.off_grid).sum();
    let lookups: usize = per_path.iter().map(|o| o.lookups).sum();
    let off_grid_fraction = if lookups > 0 {
        off_grid as f64 / lookups as f64
    } else {
        0.0
    };
    if off_grid_fraction > 0.01 {
        return Err(SimError::OffGridExcess {
            fraction: off_grid_fraction,
        });
    }

    let v0 = surface.greeks_clamped(0.0, mkt.spot).0 .0;
    let notional_scale = v0.abs().max(1.0);
    let trace = per_path.iter().flat_map(|o| o.trace.iter().copied()).collect();

    let mut report = SimReport {
        mean_drift,
        drift_std_error,
        predicted_drift,
        jump_residuals,
        arbitrage_flag: false,
        n_paths: cfg.n_paths,
        n_default_paths,
        steps_per_path: n_steps,
        dt,
        off_grid_fraction,
        notional_scale,
        trace,
    };
    report.arbitrage_flag = matches!(
        detect_arbitrage(&report, 0.997),
        ArbitrageVerdict::NonClearingDrift | ArbitrageVerdict::JumpArbitrage
    );
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn run_path(
    path: usize,
    mkt: &MarketParams,
    cpty_a: &CounterpartyParams,
    cpty_b: &CounterpartyParams,
    strategy: &StrategySpec,
    ctx: &SimContext<'_>,
    surface: &PriceSurface,
    n_steps: usize,
    dt: f64,
    drift_step: f64,
    vol_step: f64,
    p_a: f64,
    p_b: f64,
    rho: f64,
    spread: f64,
    cfg: &SimConfig,
) -> Result<PathOutcome, SimError> {
    let mut rng = path_rng(cfg.seed, path);
    let mut out = PathOutcome {
        n_steps: 0,
        sum_dpi: 0.0,
        sum_dpi_sq: 0.0,
        sum_pred: 0.0,
        jump: None,
        off_grid: 0,
        lookups: 0,
        trace: Vec::new(),
    };
    let mut s = mkt.spot;

    for step in 0..n_steps {
        let t = step as f64 * dt;
        let ((value, delta, _), off) = surface.greeks_clamped(t, s);
        out.off_grid += off as usize;
        out.lookups += 1;
        let state = StepState {
            time: t,
            spot: s,
            value,
            delta,
        };
        let (positions, residual_a, residual_b) =
            strike_positions(strategy, &state, ctx, cpty_a, cpty_b)?;

        let bond_value: f64 = positions
            .bonds_a
            .iter()
            .chain(positions.bonds_b.iter())
            .map(BondLeg::value)
            .sum();
        let money =
            -(positions.stock * s + positions.derivative * value + bond_value);

        let z: f64 = rng.sample(StandardNormal);
        let u: f64 = rng.gen::<f64>();

        let defaulted = if u < p_a {
            Some(Party::A)
        } else if u < p_a + p_b {
            Some(Party::B)
        } else {
            None
        };

        if let Some(party) = defaulted {
            let (residual_value, legs) = match party {
                Party::A => (residual_a, &positions.bonds_a),
                Party::B => (residual_b, &positions.bonds_b),
            };
            let bond_jump: f64 = legs
                .iter()
                .map(|l| l.units * (l.recovery - 1.0) * l.price)
                .sum();
            let jump = positions.derivative * (residual_value - value) + bond_jump;
            out.jump = Some(JumpResidual {
                path,
                time: t + dt,
                party,
                spot: s,
                value,
                residual: jump,
            });
            if cfg.collect_trace {
                out.trace.push(TraceRow {
                    path,
                    time: t + dt,
                    spot: s,
                    default_a: party == Party::A,
                    default_b: party == Party::B,
                    portfolio_change: jump,
                    drift_pred: spread * money,
                });
            }
            break;
        }

        let s_new = s * (drift_step + vol_step * z).exp();
        let t_new = t + dt;
        let ((value_new, _, _), off2) = surface.greeks_clamped(t_new, s_new);
        out.off_grid += off2 as usize;
        out.lookups += 1;

        let coupons: f64 = positions
            .bonds_a
            .iter()
            .chain(positions.bonds_b.iter())
            .map(|l| l.value() * l.coupon_rate)
            .sum();
        let d_pi = positions.stock * (s_new - s + mkt.dividend_yield * s * dt)
            + positions.derivative * (value_new - value)
            + coupons * dt
            + money * rho * dt;
        let pred = spread * money;

        out.n_steps += 1;
        out.sum_dpi += d_pi;
        out.sum_dpi_sq += d_pi * d_pi;
        out.sum_pred += pred;
        if cfg.collect_trace {
            out.trace.push(TraceRow {
                path,
                time: t_new,
                spot: s_new,
                default_a: false,
                default_b: false,
                portfolio_change: d_pi,
                drift_pred: pred,
            });
        }
        s = s_new;
    }
    Ok(out)
}

/// Positions plus the contractual closeout values of the derivative at an
/// A- and B-default for this strategy.
fn strike_positions(
    strategy: &StrategySpec,
    state: &StepState,
    ctx: &SimContext<'_>,
    cpty_a: &CounterpartyParams,
    cpty_b: &CounterpartyParams,
) -> Result<(Positions, f64, f64), SimError> {
    let point = SurfacePoint {
        spot: state.spot,
        value: state.value,
        delta: state.delta,
    };
    match strategy {
        StrategySpec::FullReplication | StrategySpec::Collateralized { .. } => {
            let k = match strategy {
                StrategySpec::Collateralized { k } => *k,
                _ => 0.0,
            };
            let w = collateralized_weights(&point, cpty_a, cpty_b, k, 1.0)?;
            let positions = Positions {
                stock: w.stock,
                derivative: w.derivative,
                bonds_a: vec![BondLeg {
                    units: w.bond_a,
                    price: cpty_a.bond_price,
                    recovery: cpty_a.bond_recovery,
                    coupon_rate: bond_yield(ctx.market, cpty_a),
                }],
                bonds_b: vec![BondLeg {
                    units: w.bond_b,
                    price: cpty_b.bond_price,
                    recovery: cpty_b.bond_recovery,
                    coupon_rate: bond_yield(ctx.market, cpty_b),
                }],
            };
            let chi_a = collateral_adjusted_recovery(cpty_a.derivative_recovery, k);
            let chi_b = collateral_adjusted_recovery(cpty_b.derivative_recovery, k);
            Ok((positions, chi_a * state.value, chi_b * state.value))
        }
        StrategySpec::Bk13 { epsilon } => {
            let g_a = epsilon.own_closeout(state.value, cpty_a.bond_recovery);
            let g_b = cpty_b.derivative_recovery * state.value;
            let w = bk13_weights(
                &point,
                g_a,
                g_b,
                cpty_a.bond_price,
                cpty_a.bond_recovery * cpty_a.bond_price,
                cpty_b.bond_price,
                0.0,
            )?;
            let positions = Positions {
                stock: w.stock,
                derivative: w.derivative,
                bonds_a: vec![BondLeg {
                    units: w.bond_a,
                    price: cpty_a.bond_price,
                    recovery: cpty_a.bond_recovery,
                    coupon_rate: bond_yield(ctx.market, cpty_a),
                }],
                // Zero-recovery paper on the B side by construction.
                bonds_b: vec![BondLeg {
                    units: w.bond_b,
                    price: cpty_b.bond_price,
                    recovery: 0.0,
                    coupon_rate: ctx.market.rate + cpty_b.hazard_rate,
                }],
            };
            Ok((positions, g_a, g_b))
        }
        StrategySpec::Custom(f) => {
            let positions = f(state, ctx)?;
            Ok((
                positions,
                cpty_a.derivative_recovery * state.value,
                cpty_b.derivative_recovery * state.value,
            ))
        }
    }
}

/// Flags arbitrage from a simulation report.
///
/// Criterion (a): the measured drift is significant at the given
/// confidence and shares the sign of the predicted money-account drift.
/// Criterion (b): jump residuals beyond rounding all share one sign and
/// the drift does not compensate them; fewer than 30 such defaults is
/// inconclusive.
pub fn detect_arbitrage(report: &SimReport, confidence: f64) -> ArbitrageVerdict {
    let z = norm_inverse_cdf(0.5 * (1.0 + confidence.clamp(0.5, 1.0 - 1e-12)));
    let drift_significant = report.drift_std_error > 0.0
        && report.mean_drift.abs() > z * report.drift_std_error;

    let tol = 1e-9 * report.notional_scale;
    let positive = report
        .jump_residuals
        .iter()
        .filter(|r| r.residual > tol)
        .count();
    let negative = report
        .jump_residuals
        .iter()
        .filter(|r| r.residual < -tol)
        .count();

    if positive + negative > 0 && positive.min(negative) == 0 {
        if positive + negative < 30 {
            return ArbitrageVerdict::Inconclusive;
        }
        let jump_sign = if positive > 0 { 1.0 } else { -1.0 };
        let compensating = drift_significant && report.mean_drift * jump_sign < 0.0;
        if !compensating {
            return ArbitrageVerdict::JumpArbitrage;
        }
    }

    if drift_significant && report.mean_drift * report.predicted_drift > 0.0 {
        return ArbitrageVerdict::NonClearingDrift;
    }
    ArbitrageVerdict::Clean
}
