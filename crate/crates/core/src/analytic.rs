//! Closed-form prices for constant-parameter cases, plus an independent
//! quadrature oracle used to cross-check them.
//!
//! The generalized Black-Scholes form keeps the carry rate of the forward
//! and the discount rate separate, so every effective-hazard variant is the
//! same formula with a shifted discount:
//!
//!   V = e^{-disc tau} [ F N(+-d1) - K N(+-d2) ],  F = S e^{carry tau}.

use crate::model::{
    CounterpartyParams, MarketParams, ModelError, PayoffKind, PayoffSpec,
};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyticError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("no closed form for this payoff: {0}")]
    UnsupportedPayoff(String),
    #[error("not unilateral; use bilateral solver")]
    NotUnilateral,
}

/// Option style for the closed forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptionKind {
    Call,
    Put,
}

/// Standard normal CDF via the Hart rational approximation in double
/// precision (absolute error below 1e-15 over the whole real line).
pub fn norm_cdf(x: f64) -> f64 {
    let xabs = x.abs();
    let cnd = if xabs > 37.0 {
        0.0
    } else {
        let e = (-xabs * xabs / 2.0).exp();
        if xabs < 7.071_067_811_865_475 {
            let mut num = 3.52624965998911e-2 * xabs + 0.700383064443688;
            num = num * xabs + 6.37396220353165;
            num = num * xabs + 33.912866078383;
            num = num * xabs + 112.079291497871;
            num = num * xabs + 221.213596169931;
            num = num * xabs + 220.206867912376;
            let mut den = 8.83883476483184e-2 * xabs + 1.75566716318264;
            den = den * xabs + 16.064177579207;
            den = den * xabs + 86.7807322029461;
            den = den * xabs + 296.564248779674;
            den = den * xabs + 637.333633378831;
            den = den * xabs + 793.826512519948;
            den = den * xabs + 440.413735824752;
            e * num / den
        } else {
            let mut b = xabs + 0.65;
            b = xabs + 4.0 / b;
            b = xabs + 3.0 / b;
            b = xabs + 2.0 / b;
            b = xabs + 1.0 / b;
            e / (b * 2.506628274631)
        }
    };
    if x > 0.0 {
        1.0 - cnd
    } else {
        cnd
    }
}

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Inverse standard normal CDF, by bisection plus Newton polish on
/// `norm_cdf`. Accurate to ~1e-13 for p away from 0 and 1.
pub fn norm_inverse_cdf(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "p must be in (0, 1)");
    let (mut lo, mut hi) = (-40.0_f64, 40.0_f64);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if norm_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..3 {
        let f = norm_cdf(x) - p;
        let d = norm_pdf(x);
        if d > 0.0 {
            x -= f / d;
        }
    }
    x
}

/// Generalized Black-Scholes with separate carry and discount rates.
///
/// `carry` drives the forward, `disc` discounts the expectation. At
/// `tau = 0` the intrinsic value is returned.
pub fn black_scholes_carry(
    spot: f64,
    strike: f64,
    tau: f64,
    sigma: f64,
    carry: f64,
    disc: f64,
    kind: OptionKind,
) -> f64 {
    debug_assert!(spot > 0.0 && strike > 0.0 && sigma > 0.0 && tau >= 0.0);
    if tau == 0.0 {
        return match kind {
            OptionKind::Call => (spot - strike).max(0.0),
            OptionKind::Put => (strike - spot).max(0.0),
        };
    }
    let forward = spot * (carry * tau).exp();
    let sd = sigma * tau.sqrt();
    let d1 = ((forward / strike).ln() + 0.5 * sd * sd) / sd;
    let d2 = d1 - sd;
    let df = (-disc * tau).exp();
    match kind {
        OptionKind::Call => df * (forward * norm_cdf(d1) - strike * norm_cdf(d2)),
        OptionKind::Put => df * (strike * norm_cdf(-d2) - forward * norm_cdf(-d1)),
    }
}

/// Discounted forward value `e^{-disc tau} (F - K)`.
pub fn forward_value(spot: f64, strike: f64, tau: f64, carry: f64, disc: f64) -> f64 {
    (-disc * tau).exp() * (spot * (carry * tau).exp() - strike)
}

/// Total loss intensity `(1 - chi_A) lambda_A + (1 - chi_B) lambda_B`
/// scaled by the unsecured fraction `(1 - k)^+`.
pub fn effective_hazard(cpty_a: &CounterpartyParams, cpty_b: &CounterpartyParams, k: f64) -> f64 {
    let unsecured = (1.0 - k).max(0.0);
    unsecured
        * ((1.0 - cpty_a.derivative_recovery) * cpty_a.hazard_rate
            + (1.0 - cpty_b.derivative_recovery) * cpty_b.hazard_rate)
}

/// Closed-form price of a default-risky derivative under proportional
/// recovery and collateralization level `k`: the default-free formula with
/// the discount shifted by the effective hazard.
pub fn effective_hazard_price(
    mkt: &MarketParams,
    payoff: &PayoffSpec,
    cpty_a: &CounterpartyParams,
    cpty_b: &CounterpartyParams,
    k: f64,
) -> Result<f64, AnalyticError> {
    mkt.validate()?;
    payoff.validate()?;
    cpty_a.validate("parties.a")?;
    cpty_b.validate("parties.b")?;
    let carry = mkt.rate - mkt.dividend_yield;
    let disc = mkt.rate + effective_hazard(cpty_a, cpty_b, k);
    let tau = payoff.maturity;
    match payoff.kind {
        PayoffKind::Call { strike } => Ok(black_scholes_carry(
            mkt.spot, strike, tau, mkt.sigma, carry, disc, OptionKind::Call,
        )),
        PayoffKind::Put { strike } => Ok(black_scholes_carry(
            mkt.spot, strike, tau, mkt.sigma, carry, disc, OptionKind::Put,
        )),
        PayoffKind::Forward { strike } => Ok(forward_value(mkt.spot, strike, tau, carry, disc)),
        PayoffKind::PiecewiseLinear { .. } => Err(AnalyticError::UnsupportedPayoff(
            "piecewise-linear payoffs are priced on the grid".to_string(),
        )),
    }
}

/// Price of a one-sided liability exposed to a single counterparty's
/// default. The payoff must not change sign; the other party's hazard is
/// irrelevant and set to zero.
pub fn unilateral_price(
    mkt: &MarketParams,
    payoff: &PayoffSpec,
    cpty: &CounterpartyParams,
) -> Result<f64, AnalyticError> {
    payoff.validate()?;
    if !payoff.is_nonnegative() {
        return Err(AnalyticError::NotUnilateral);
    }
    effective_hazard_price(mkt, payoff, &CounterpartyParams::riskless(), cpty, 0.0)
}

/// Independent oracle: price the payoff by adaptive Simpson quadrature of
/// the discounted lognormal expectation. Shares no code with
/// `black_scholes_carry` beyond the normal density.
///
/// The integral is split at the payoff kinks so the integrand is smooth on
/// each panel; the adaptive rule is driven to ~1e-10 absolute.
pub fn quadrature_price(
    spot: f64,
    strike_or_payoff: &PayoffSpec,
    sigma: f64,
    carry: f64,
    disc: f64,
) -> f64 {
    let tau = strike_or_payoff.maturity;
    let forward = spot * (carry * tau).exp();
    let sd = sigma * tau.sqrt();
    let terminal = |z: f64| forward * (-0.5 * sd * sd + sd * z).exp();
    let integrand = |z: f64| strike_or_payoff.value(terminal(z)) * norm_pdf(z);

    // z-locations of payoff kinks.
    let mut cuts: Vec<f64> = Vec::new();
    let z_of_spot = |s: f64| ((s / forward).ln() + 0.5 * sd * sd) / sd;
    match &strike_or_payoff.kind {
        PayoffKind::Call { strike } | PayoffKind::Put { strike } => cuts.push(z_of_spot(*strike)),
        PayoffKind::Forward { .. } => {}
        PayoffKind::PiecewiseLinear { breakpoints } => {
            cuts.extend(breakpoints.iter().map(|&(s, _)| z_of_spot(s)));
        }
    }
    let (lo, hi) = (-13.0, 13.0);
    let mut panels: Vec<f64> = vec![lo];
    for c in cuts {
        if c > lo && c < hi {
            panels.push(c);
        }
    }
    panels.push(hi);
    panels.sort_by(f64::total_cmp);

    let mut total = 0.0;
    for w in panels.windows(2) {
        total += adaptive_simpson(&integrand, w[0], w[1], 1e-11, 40);
    }
    (-disc * tau).exp() * total
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}
