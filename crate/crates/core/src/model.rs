//! Domain types and the pure recovery/loss-rate formulas shared by every
//! pricing engine in the crate.
//!
//! All types are immutable value objects after construction and every
//! operation here is a pure function, so they are safe to share across
//! threads.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised by parameter validation and the recovery formulas.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    /// A field failed validation. `field` is a dotted path usable in
    /// scenario diagnostics, e.g. `market.sigma`.
    #[error("{field}: {message}")]
    InvalidParameter { field: String, message: String },
    /// Bond recovery of 1 leaves nothing to hedge a derivative loss with.
    #[error("bond loss rate zero, hedge ratio undefined")]
    UndefinedLossRatio,
}

impl ModelError {
    pub(crate) fn invalid(field: &str, message: impl Into<String>) -> Self {
        ModelError::InvalidParameter {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

/// Market parameters of the underlying: risk-free rate, real-world drift,
/// volatility, continuous dividend yield and spot. Rates are annualized
/// decimals, volatility is per sqrt(year).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketParams {
    pub rate: f64,
    pub drift: f64,
    pub sigma: f64,
    pub dividend_yield: f64,
    pub spot: f64,
}

impl MarketParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, v) in [
            ("market.rate", self.rate),
            ("market.drift", self.drift),
            ("market.sigma", self.sigma),
            ("market.dividend_yield", self.dividend_yield),
            ("market.spot", self.spot),
        ] {
            if !v.is_finite() {
                return Err(ModelError::invalid(name, "must be finite"));
            }
        }
        if self.sigma <= 0.0 {
            return Err(ModelError::invalid("market.sigma", "must be > 0"));
        }
        if self.spot <= 0.0 {
            return Err(ModelError::invalid("market.spot", "must be > 0"));
        }
        Ok(())
    }
}

/// Credit parameters of one counterparty: flat default intensity, recovery
/// rate of its senior unsecured bonds, recovery rate of a derivative claim
/// against it and the traded price of its bond.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CounterpartyParams {
    pub hazard_rate: f64,
    pub bond_recovery: f64,
    pub derivative_recovery: f64,
    pub bond_price: f64,
}

impl CounterpartyParams {
    /// A counterparty that cannot default. Useful for unilateral pricing.
    pub fn riskless() -> Self {
        CounterpartyParams {
            hazard_rate: 0.0,
            bond_recovery: 1.0,
            derivative_recovery: 1.0,
            bond_price: 1.0,
        }
    }

    pub fn validate(&self, prefix: &str) -> Result<(), ModelError> {
        let field = |f: &str| format!("{prefix}.{f}");
        if !self.hazard_rate.is_finite() || self.hazard_rate < 0.0 {
            return Err(ModelError::invalid(&field("hazard_rate"), "must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.bond_recovery) {
            return Err(ModelError::invalid(&field("bond_recovery"), "must be in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.derivative_recovery) {
            return Err(ModelError::invalid(
                &field("derivative_recovery"),
                "must be in [0, 1]",
            ));
        }
        if !self.bond_price.is_finite() || self.bond_price <= 0.0 {
            return Err(ModelError::invalid(&field("bond_price"), "must be > 0"));
        }
        Ok(())
    }
}

/// Piecewise-constant schedule over time. The value between knots is the
/// value of the most recent knot; margin calls are discrete events, so no
/// interpolation is applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Schedule {
    knots: Vec<(f64, f64)>,
}

impl Schedule {
    pub fn new(mut knots: Vec<(f64, f64)>) -> Result<Self, ModelError> {
        if knots.is_empty() {
            return Err(ModelError::invalid("schedule", "needs at least one knot"));
        }
        knots.sort_by(|a, b| a.0.total_cmp(&b.0));
        for &(t, v) in &knots {
            if !t.is_finite() || t < 0.0 {
                return Err(ModelError::invalid("schedule", "knot times must be >= 0"));
            }
            if !v.is_finite() || v < 0.0 {
                return Err(ModelError::invalid("schedule", "knot values must be >= 0"));
            }
        }
        Ok(Schedule { knots })
    }

    pub fn constant(value: f64) -> Self {
        Schedule {
            knots: vec![(0.0, value)],
        }
    }

    /// Checks a schedule that arrived through deserialization, where the
    /// sorting constructor was bypassed.
    pub fn validate(&self, field: &str) -> Result<(), ModelError> {
        if self.knots.is_empty() {
            return Err(ModelError::invalid(field, "needs at least one knot"));
        }
        if !self.knots.windows(2).all(|w| w[0].0 <= w[1].0) {
            return Err(ModelError::invalid(field, "knots must be sorted by time"));
        }
        for &(t, v) in &self.knots {
            if !t.is_finite() || t < 0.0 || !v.is_finite() || v < 0.0 {
                return Err(ModelError::invalid(
                    field,
                    "knot times and values must be finite and >= 0",
                ));
            }
        }
        Ok(())
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    /// Value of the knot at or immediately before `t`. Before the first knot
    /// the first value applies.
    pub fn value_at(&self, t: f64) -> f64 {
        match self.knots.iter().rev().find(|&&(kt, _)| kt <= t) {
            Some(&(_, v)) => v,
            None => self.knots[0].1,
        }
    }

    /// Left-continuous sample: the value posted strictly before `t`, i.e.
    /// collateral standing from the previous interval. At or before the
    /// first knot this falls back to the time-0 value.
    pub fn value_before(&self, t: f64) -> f64 {
        match self.knots.iter().rev().find(|&&(kt, _)| kt < t) {
            Some(&(_, v)) => v,
            None => self.knots[0].1,
        }
    }

    pub fn max_value(&self) -> f64 {
        self.knots.iter().map(|&(_, v)| v).fold(f64::MIN, f64::max)
    }
}

/// Collateralization mode of the trade.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollateralMode {
    /// Uncollateralized.
    None,
    /// Collateral maintained at a fixed fraction `k` of current value; the
    /// unsecured fraction is `(1 - k)^+` wherever `k` appears.
    ProportionalK { k: f64 },
    /// Explicit variation-margin schedule plus per-party initial margins.
    FixedSchedule {
        variation: Schedule,
        initial_margin_a: Schedule,
        initial_margin_b: Schedule,
    },
}

/// Collateral terms: mode, whether posted collateral is netted, and the
/// accrual rate paid on the collateral account (used only by money-account
/// structure studies; collateral never enters the replicating portfolio).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollateralSpec {
    pub mode: CollateralMode,
    pub netted: bool,
    pub accrual_rate: f64,
}

impl CollateralSpec {
    pub fn none() -> Self {
        CollateralSpec {
            mode: CollateralMode::None,
            netted: true,
            accrual_rate: 0.0,
        }
    }

    pub fn proportional(k: f64) -> Self {
        CollateralSpec {
            mode: CollateralMode::ProportionalK { k },
            netted: true,
            accrual_rate: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.accrual_rate.is_finite() {
            return Err(ModelError::invalid("collateral.accrual_rate", "must be finite"));
        }
        match &self.mode {
            CollateralMode::None => Ok(()),
            CollateralMode::ProportionalK { k } => {
                if !k.is_finite() || *k < 0.0 {
                    Err(ModelError::invalid("collateral.mode.k", "must be >= 0"))
                } else {
                    Ok(())
                }
            }
            CollateralMode::FixedSchedule {
                variation,
                initial_margin_a,
                initial_margin_b,
            } => {
                variation.validate("collateral.mode.variation")?;
                initial_margin_a.validate("collateral.mode.initial_margin_a")?;
                initial_margin_b.validate("collateral.mode.initial_margin_b")?;
                // Netting initial margin contradicts its segregated purpose.
                let im_used = initial_margin_a.max_value() > 0.0
                    || initial_margin_b.max_value() > 0.0;
                if self.netted && im_used {
                    return Err(ModelError::invalid(
                        "collateral.netted",
                        "initial margin schedules require netted = false",
                    ));
                }
                Ok(())
            }
        }
    }

    /// Effective collateral covering a claim against the given party at time
    /// `t`, sampled left-continuously (posted in the previous interval).
    pub fn effective_collateral(&self, party: Party, t: f64, value: f64) -> f64 {
        match &self.mode {
            CollateralMode::None => 0.0,
            CollateralMode::ProportionalK { k } => k * value,
            CollateralMode::FixedSchedule {
                variation,
                initial_margin_a,
                initial_margin_b,
            } => {
                let im = match party {
                    Party::A => initial_margin_a,
                    Party::B => initial_margin_b,
                };
                variation.value_before(t) + im.value_before(t)
            }
        }
    }
}

/// The two trading counterparties. By convention positive payoff values are
/// owed by party B and negative values by party A.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Party {
    A,
    B,
}

impl Party {
    pub fn other(self) -> Party {
        match self {
            Party::A => Party::B,
            Party::B => Party::A,
        }
    }
}

impl std::fmt::Display for Party {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Party::A => write!(f, "A"),
            Party::B => write!(f, "B"),
        }
    }
}

/// Contractual payoff. All kinds are continuous and piecewise linear in the
/// terminal spot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayoffKind {
    Call { strike: f64 },
    Put { strike: f64 },
    Forward { strike: f64 },
    /// Sorted `(spot, value)` breakpoints; end segments extrapolate linearly.
    PiecewiseLinear { breakpoints: Vec<(f64, f64)> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PayoffSpec {
    pub kind: PayoffKind,
    pub maturity: f64,
}

impl PayoffSpec {
    pub fn call(strike: f64, maturity: f64) -> Self {
        PayoffSpec {
            kind: PayoffKind::Call { strike },
            maturity,
        }
    }

    pub fn put(strike: f64, maturity: f64) -> Self {
        PayoffSpec {
            kind: PayoffKind::Put { strike },
            maturity,
        }
    }

    pub fn forward(strike: f64, maturity: f64) -> Self {
        PayoffSpec {
            kind: PayoffKind::Forward { strike },
            maturity,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.maturity.is_finite() || self.maturity <= 0.0 {
            return Err(ModelError::invalid("payoff.maturity", "must be > 0"));
        }
        match &self.kind {
            PayoffKind::Call { strike }
            | PayoffKind::Put { strike }
            | PayoffKind::Forward { strike } => {
                if !strike.is_finite() || *strike <= 0.0 {
                    return Err(ModelError::invalid("payoff.kind.strike", "must be > 0"));
                }
            }
            PayoffKind::PiecewiseLinear { breakpoints } => {
                if breakpoints.len() < 2 {
                    return Err(ModelError::invalid(
                        "payoff.kind.breakpoints",
                        "needs at least two points",
                    ));
                }
                let sorted = breakpoints.windows(2).all(|w| w[0].0 < w[1].0);
                if !sorted {
                    return Err(ModelError::invalid(
                        "payoff.kind.breakpoints",
                        "must be strictly increasing in spot",
                    ));
                }
            }
        }
        Ok(())
    }

    /// Terminal value of the contract at spot `s`.
    pub fn value(&self, s: f64) -> f64 {
        match &self.kind {
            PayoffKind::Call { strike } => (s - strike).max(0.0),
            PayoffKind::Put { strike } => (strike - s).max(0.0),
            PayoffKind::Forward { strike } => s - strike,
            PayoffKind::PiecewiseLinear { breakpoints } => {
                let pts = breakpoints;
                let n = pts.len();
                if s <= pts[0].0 {
                    let slope = (pts[1].1 - pts[0].1) / (pts[1].0 - pts[0].0);
                    return pts[0].1 + slope * (s - pts[0].0);
                }
                if s >= pts[n - 1].0 {
                    let slope = (pts[n - 1].1 - pts[n - 2].1) / (pts[n - 1].0 - pts[n - 2].0);
                    return pts[n - 1].1 + slope * (s - pts[n - 1].0);
                }
                let i = pts.partition_point(|&(x, _)| x <= s) - 1;
                let (x0, y0) = pts[i];
                let (x1, y1) = pts[i + 1];
                y0 + (y1 - y0) * (s - x0) / (x1 - x0)
            }
        }
    }

    /// True when the payoff is a liability of exactly one party, i.e. never
    /// changes sign over spot > 0.
    pub fn is_nonnegative(&self) -> bool {
        match &self.kind {
            PayoffKind::Call { .. } | PayoffKind::Put { .. } => true,
            PayoffKind::Forward { .. } => false,
            PayoffKind::PiecewiseLinear { breakpoints } => {
                let pts = breakpoints;
                let n = pts.len();
                let left_slope = (pts[1].1 - pts[0].1) / (pts[1].0 - pts[0].0);
                let right_slope = (pts[n - 1].1 - pts[n - 2].1) / (pts[n - 1].0 - pts[n - 2].0);
                let value_at_zero = pts[0].1 - left_slope * pts[0].0;
                pts.iter().all(|&(_, y)| y >= 0.0) && value_at_zero >= 0.0 && right_slope >= 0.0
            }
        }
    }
}

/// One named component of a structured money account.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoneyAccountComponent {
    pub name: String,
    pub weight: f64,
    pub rate: f64,
}

/// A money account carved into components with market-clearing weights
/// (weights sum to one) and per-component accrual rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoneyAccountStructure {
    pub components: Vec<MoneyAccountComponent>,
}

impl MoneyAccountStructure {
    /// Single risk-free component, the classical money account.
    pub fn risk_free(rate: f64) -> Self {
        MoneyAccountStructure {
            components: vec![MoneyAccountComponent {
                name: "risk_free".to_string(),
                weight: 1.0,
                rate,
            }],
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.components.is_empty() {
            return Err(ModelError::invalid(
                "money_account.components",
                "needs at least one component",
            ));
        }
        for c in &self.components {
            if !c.weight.is_finite() || !c.rate.is_finite() {
                return Err(ModelError::invalid(
                    "money_account.components",
                    "weights and rates must be finite",
                ));
            }
        }
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(ModelError::invalid(
                "money_account.components",
                format!("weights must sum to 1 within 1e-12, got {total}"),
            ));
        }
        Ok(())
    }

    /// Weight-averaged accrual rate of the whole account.
    pub fn composite_rate(&self) -> f64 {
        self.components.iter().map(|c| c.weight * c.rate).sum()
    }
}

/// How the residual value of the derivative is determined at default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CloseoutRule {
    /// Residual is a fixed fraction chi of the pre-default value.
    Proportional,
    /// Bond-recovery applied to the signed netted exposure owed by the
    /// defaulting party; what the solvent party owes passes through whole.
    PariPassuNetted,
    /// Collateral is collected first; the derivative recovery applies only
    /// to the unsecured excess over collateral.
    Collateralized,
}

/// Implied yield of a counterparty bond in a frictionless market:
/// risk-free rate plus the expected loss rate `(1 - R) * lambda`.
pub fn bond_yield(mkt: &MarketParams, cpty: &CounterpartyParams) -> f64 {
    mkt.rate + (1.0 - cpty.bond_recovery) * cpty.hazard_rate
}

/// Ratio of the loss rate on a derivative claim to the loss rate on the
/// counterparty's bond: `z = (1 - chi) / (1 - R)`. This is the hedge-sizing
/// ratio; it depends only on the two recovery rates.
///
/// `R = 1` with `chi < 1` is rejected: a full-recovery bond carries no
/// default risk and cannot replicate a derivative loss. `R = 1` with
/// `chi = 1` returns 0 (nothing to hedge).
pub fn loss_ratio(cpty: &CounterpartyParams) -> Result<f64, ModelError> {
    let bond_loss = 1.0 - cpty.bond_recovery;
    let deriv_loss = 1.0 - cpty.derivative_recovery;
    if bond_loss == 0.0 {
        if deriv_loss == 0.0 {
            return Ok(0.0);
        }
        return Err(ModelError::UndefinedLossRatio);
    }
    Ok(deriv_loss / bond_loss)
}

/// Recovery rate of a derivative claim after collateral at level `k` of the
/// current value: `1 - chi_tilde = (1 - k)^+ (1 - chi)`.
pub fn collateral_adjusted_recovery(chi: f64, k: f64) -> f64 {
    1.0 - (1.0 - k).max(0.0) * (1.0 - chi)
}

/// Residual value of the derivative claim at default under the given rule.
///
/// * `Proportional`: `recovery * v_hat`, with `recovery` the derivative
///   recovery chi and `v_hat` the (positive) pre-default price.
/// * `Collateralized`: `(v_hat - c)^- + recovery * (v_hat - c)^+ + c`; with
///   `c = 0` this reduces to the proportional rule for `v_hat >= 0`.
/// * `PariPassuNetted`: `v_hat` is the signed netted exposure owed to the
///   solvent party and `recovery` the defaulting party's bond recovery;
///   the claim `v_hat^+` recovers at that rate, the portion the solvent
///   party owes (`v_hat^-`) passes through unchanged.
pub fn closeout_residual(rule: CloseoutRule, v_hat: f64, collateral: f64, recovery: f64) -> f64 {
    match rule {
        CloseoutRule::Proportional => recovery * v_hat,
        CloseoutRule::Collateralized => {
            let excess = v_hat - collateral;
            excess.min(0.0) + recovery * excess.max(0.0) + collateral
        }
        CloseoutRule::PariPassuNetted => recovery * v_hat.max(0.0) + v_hat.min(0.0),
    }
}
