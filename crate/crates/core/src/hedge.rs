//! Replication-weight calculators.
//!
//! Given a surface point `(V, Delta)` and the two counterparties, these
//! produce the portfolio weights that zero both diffusion and default-jump
//! terms of the hedged portfolio (full replication), their
//! collateral-scaled variant, the own-bond funding strategy whose A-leg is
//! pinned by the funding constraint rather than the default jump (with its
//! `epsilon` gap), and multi-issue bond portfolios where only the
//! aggregate default shortfall matters.
//!
//! All functions are pure; weights scale linearly in the derivative
//! holding `h_v`.

use crate::model::{loss_ratio, CounterpartyParams, ModelError};
use crate::pde::PriceSurface;
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HedgeError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("cannot replicate default loss")]
    CannotReplicateDefaultLoss,
    #[error("hedge input: {0}")]
    InvalidInput(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Marks needed to size a hedge at one point of the surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub spot: f64,
    pub value: f64,
    pub delta: f64,
}

/// Portfolio weights of the replication strategy. `money` is the total
/// money account implied by the zero-initial-investment constraint; its
/// split separates the classical delta-hedge account from the extra
/// account opened by the default hedge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicationWeights {
    /// Units of the underlying (h_S).
    pub stock: f64,
    /// Units of the derivative (h_V).
    pub derivative: f64,
    /// Units of counterparty A bonds (h_A).
    pub bond_a: f64,
    /// Units of counterparty B bonds (h_B).
    pub bond_b: f64,
    /// Money account closing the portfolio to zero value.
    pub money: f64,
    /// `(Delta S - V) h_V`, the delta-hedge account.
    pub money_bsm: f64,
    /// `(z_A + z_B) V h_V`, the account opened by the default hedge.
    pub money_default_risk: f64,
}

impl ReplicationWeights {
    /// Residual of the zero-initial-investment identity
    /// `h_S S + h_V V + h_A P_A + h_B P_B + M`. Zero up to rounding for
    /// every weight set produced here.
    pub fn zii_residual(&self, point: &SurfacePoint, p_a: f64, p_b: f64) -> f64 {
        self.stock * point.spot
            + self.derivative * point.value
            + self.bond_a * p_a
            + self.bond_b * p_b
            + self.money
    }
}

/// Weights that replicate the default-risky derivative exactly: delta in
/// the underlying, `-z_X V h_V / P_X` in each counterparty's bonds, money
/// from the zero-investment constraint.
pub fn full_replication_weights(
    point: &SurfacePoint,
    cpty_a: &CounterpartyParams,
    cpty_b: &CounterpartyParams,
    h_v: f64,
) -> Result<ReplicationWeights, HedgeError> {
    collateralized_weights(point, cpty_a, cpty_b, 0.0, h_v)
}

/// Full replication with the bond legs scaled by the unsecured fraction
/// `(1 - k)^+`; at `k = 0` this is full replication, at `k = 1` the bond
/// legs vanish and only the delta hedge remains.
pub fn collateralized_weights(
    point: &SurfacePoint,
    cpty_a: &CounterpartyParams,
    cpty_b: &CounterpartyParams,
    k: f64,
    h_v: f64,
) -> Result<ReplicationWeights, HedgeError> {
    if cpty_a.bond_price <= 0.0 || cpty_b.bond_price <= 0.0 {
        return Err(HedgeError::InvalidInput("bond prices must be > 0".to_string()));
    }
    let unsecured = (1.0 - k).max(0.0);
    let z_a = unsecured * loss_ratio(cpty_a)?;
    let z_b = unsecured * loss_ratio(cpty_b)?;
    let v = point.value;
    let stock = -point.delta * h_v;
    let bond_a = -z_a * v * h_v / cpty_a.bond_price;
    let bond_b = -z_b * v * h_v / cpty_b.bond_price;
    let money_bsm = (point.delta * point.spot - v) * h_v;
    let money_default_risk = (z_a + z_b) * v * h_v;
    Ok(ReplicationWeights {
        stock,
        derivative: h_v,
        bond_a,
        bond_b,
        money: money_bsm + money_default_risk,
        money_bsm,
        money_default_risk,
    })
}

/// Own-bond funding strategy weights and their default gap.
///
/// The A-bond position is pinned by the funding constraint
/// `V + h_A P_A - C = 0` instead of the default jump, so at an A-default
/// the hedged portfolio jumps by `epsilon = h_A P^D_A - C + g_A`, where
/// `g_A` is the contractual closeout value. The B leg `h_B = (g_B - V)/P_B`
/// assumes zero-recovery B bonds and zeroes the B-default jump exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FundingPinnedWeights {
    pub stock: f64,
    pub derivative: f64,
    pub bond_a: f64,
    pub bond_b: f64,
    /// Financing account of the stock leg (`-h_S S`).
    pub money_stock_financing: f64,
    /// Financing account of the B-bond leg (`-h_B P_B`).
    pub money_bond_financing: f64,
    /// Posted collateral entering the funding constraint.
    pub collateral: f64,
    /// Portfolio jump at an A-default.
    pub epsilon: f64,
    /// `V - g_A`, the derivative's own-default loss; identically
    /// `-(P_A position loss) - epsilon`.
    pub full_replication_gap: f64,
}

/// Computes the funding-pinned (BK13-style) weights at one surface point.
///
/// * `g_a`, `g_b` — contractual closeout values at A- and B-default;
/// * `p_a`, `p_d_a` — unit price of the A bond before and after default;
/// * `p_b` — unit price of the zero-recovery B bond;
/// * `c` — posted collateral.
pub fn bk13_weights(
    point: &SurfacePoint,
    g_a: f64,
    g_b: f64,
    p_a: f64,
    p_d_a: f64,
    p_b: f64,
    c: f64,
) -> Result<FundingPinnedWeights, HedgeError> {
    if p_a <= 0.0 || p_b <= 0.0 {
        return Err(HedgeError::InvalidInput("bond prices must be > 0".to_string()));
    }
    let v = point.value;
    let stock = -point.delta;
    let bond_a = (c - v) / p_a;
    let bond_b = (g_b - v) / p_b;
    let epsilon = bond_a * p_d_a - c + g_a;
    Ok(FundingPinnedWeights {
        stock,
        derivative: 1.0,
        bond_a,
        bond_b,
        money_stock_financing: -stock * point.spot,
        money_bond_financing: -bond_b * p_b,
        collateral: c,
        epsilon,
        full_replication_gap: v - g_a,
    })
}

/// One bond issue inside a default-hedge portfolio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BondIssue {
    pub price: f64,
    pub recovery: f64,
    pub holding: f64,
}

/// A portfolio of bonds of one issuer. Replication depends only on the
/// aggregate default shortfall `sum h_i (1 - R_i) P_i`, never on the
/// composition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BondPortfolio {
    pub issues: Vec<BondIssue>,
}

impl BondPortfolio {
    pub fn new(issues: Vec<BondIssue>) -> Self {
        BondPortfolio { issues }
    }

    /// `sum h_i (1 - R_i) P_i`: the value the portfolio sheds when the
    /// issuer defaults.
    pub fn aggregate_shortfall(&self) -> f64 {
        self.issues
            .iter()
            .map(|i| i.holding * (1.0 - i.recovery) * i.price)
            .sum()
    }

    /// Total position value `sum h_i P_i`.
    pub fn position_value(&self) -> f64 {
        self.issues.iter().map(|i| i.holding * i.price).sum()
    }
}

/// Rescales the portfolio's holdings, keeping its composition, so the
/// aggregate default shortfall hits `target_shortfall`. Errors when the
/// current shortfall is zero — in particular when every issue has full
/// recovery, which leaves no default loss to replicate with.
pub fn aggregate_bond_portfolio(
    portfolio: &BondPortfolio,
    target_shortfall: f64,
) -> Result<BondPortfolio, HedgeError> {
    let current = portfolio.aggregate_shortfall();
    if current == 0.0 {
        return Err(HedgeError::CannotReplicateDefaultLoss);
    }
    let scale = target_shortfall / current;
    Ok(BondPortfolio {
        issues: portfolio
            .issues
            .iter()
            .map(|i| BondIssue {
                holding: i.holding * scale,
                ..*i
            })
            .collect(),
    })
}

/// Writes the replication weights over the whole surface as CSV with
/// header `t,S,h_S,h_A,h_B,M,epsilon`. Full replication and its
/// collateral-scaled variant have no default gap, so epsilon is zero.
pub fn write_weights_csv<W: Write>(
    surface: &PriceSurface,
    cpty_a: &CounterpartyParams,
    cpty_b: &CounterpartyParams,
    k: f64,
    h_v: f64,
    mut w: W,
) -> Result<(), HedgeError> {
    writeln!(w, "t,S,h_S,h_A,h_B,M,epsilon")?;
    for (i, &t) in surface.times().iter().enumerate() {
        for (j, &s) in surface.spots().iter().enumerate() {
            let point = SurfacePoint {
                spot: s,
                value: surface.value(i, j),
                delta: surface.delta(i, j),
            };
            let wt = collateralized_weights(&point, cpty_a, cpty_b, k, h_v)?;
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                t, s, wt.stock, wt.bond_a, wt.bond_b, wt.money, 0.0
            )?;
        }
    }
    Ok(())
}
