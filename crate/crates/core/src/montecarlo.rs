//! Risk-neutral Monte Carlo estimators for the default-risky price.
//!
//! Two estimators price the same contract through its two expectation
//! representations: a pure effective-discount form, and a loss-integral
//! form that subtracts the expected default losses accumulated along each
//! path, reading the mark-to-market from a solved [`PriceSurface`].
//!
//! Spot paths use exact lognormal stepping (no Euler bias). Each path owns
//! a deterministic RNG substream derived from `(seed, path_index)` and the
//! per-path results are reduced by a fixed pairwise tree, so estimates are
//! bit-identical for a given configuration regardless of the parallel
//! schedule.

use crate::exec;
use crate::model::{
    CollateralSpec, CounterpartyParams, MarketParams, ModelError, Party, PayoffSpec,
};
use crate::pde::PriceSurface;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum McError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("mc config: {0}")]
    InvalidConfig(String),
    #[error(
        "{fraction:.4} of path steps fell outside the price surface domain \
         (limit 0.01); widen the grid"
    )]
    OffGridExcess { fraction: f64 },
}

/// Monte Carlo run controls. `steps_per_year` fixes the path time step;
/// paths get `ceil(steps_per_year * maturity)` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub n_paths: usize,
    pub steps_per_year: usize,
    pub seed: u64,
    #[serde(default)]
    pub antithetic: bool,
}

impl McConfig {
    pub fn new(n_paths: usize, steps_per_year: usize, seed: u64) -> Self {
        McConfig {
            n_paths,
            steps_per_year,
            seed,
            antithetic: false,
        }
    }

    pub fn validate(&self) -> Result<(), McError> {
        if self.n_paths == 0 {
            return Err(McError::InvalidConfig("n_paths must be >= 1".to_string()));
        }
        if self.steps_per_year == 0 {
            return Err(McError::InvalidConfig(
                "steps_per_year must be >= 1".to_string(),
            ));
        }
        Ok(())
    }

    fn steps_for(&self, horizon: f64) -> usize {
        ((self.steps_per_year as f64 * horizon).ceil() as usize).max(1)
    }
}

/// Point estimate with its statistical error. `off_grid_fraction` is a
/// diagnostic of the loss-integral estimator (0 elsewhere).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: usize,
    #[serde(default)]
    pub off_grid_fraction: f64,
}

impl McEstimate {
    /// JSON record for machine-readable reports.
    pub fn json_record(&self, scenario_id: &str, estimator: &str, seed: u64) -> serde_json::Value {
        serde_json::json!({
            "scenario_id": scenario_id,
            "estimator": estimator,
            "mean": self.mean,
            "std_error": self.std_error,
            "n_paths": self.n_paths,
            "seed": seed,
        })
    }
}

/// Per-path RNG substream: the stream index separates paths, so any subset
/// of paths can be generated independently and in any order.
pub(crate) fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64 + 1);
    rng
}

fn estimate_from(samples: Vec<f64>, off_grid: f64) -> McEstimate {
    let (mean, std_error) = exec::mean_and_std_error(&samples);
    McEstimate {
        mean,
        std_error,
        n_paths: samples.len(),
        off_grid_fraction: off_grid,
    }
}

/// Prices `E[exp(-(r + s_eff) T) payoff(S_T)]` under the risk-neutral
/// measure, where `s_eff` is the collateral-scaled total loss intensity.
/// This is the effective-discount representation of the risky price.
pub fn mc_effective_discount(
    mkt: &MarketParams,
    payoff: &PayoffSpec,
    cpty_a: &CounterpartyParams,
    cpty_b: &CounterpartyParams,
    k: f64,
    cfg: &McConfig,
) -> Result<McEstimate, McError> {
    mkt.validate()?;
    payoff.validate()?;
    cpty_a.validate("parties.a")?;
    cpty_b.validate("parties.b")?;
    cfg.validate()?;

    let horizon = payoff.maturity;
    let n_steps = cfg.steps_for(horizon);
    let dt = horizon / n_steps as f64;
    let drift = (mkt.rate - mkt.dividend_yield - 0.5 * mkt.sigma * mkt.sigma) * dt;
    let vol = mkt.sigma * dt.sqrt();
    let disc =
        (-(mkt.rate + crate::analytic::effective_hazard(cpty_a, cpty_b, k)) * horizon).exp();

    let spot0 = mkt.spot;
    let antithetic = cfg.antithetic;
    let seed = cfg.seed;

    let samples = exec::map_indexed(cfg.n_paths, |p| {
        let mut rng = path_rng(seed, p);
        let mut s = spot0;
        let mut s_anti = spot0;
        for _ in 0..n_steps {
            let z: f64 = rng.sample(StandardNormal);
            s *= (drift + vol * z).exp();
            if antithetic {
                s_anti *= (drift - vol * z).exp();
            }
        }
        if antithetic {
            0.5 * disc * (payoff.value(s) + payoff.value(s_anti))
        } else {
            disc * payoff.value(s)
        }
    });
    Ok(estimate_from(samples, 0.0))
}

/// Prices the loss-integral representation: the default-free discounted
/// payoff minus, per party, the expected discounted loss flow
/// `(1 - chi_X) lambda_X (V(u) - C(u) - I_X(u))^+` integrated along the
/// path by the trapezoid rule, with `V(u)` interpolated from `surface`.
///
/// Collateral schedules are sampled left-continuously (the amount posted in
/// the previous interval); the first interval uses the time-0 value.
/// Path points outside the surface's spot range are clamped to the
/// boundary and counted; more than 1% off-grid steps is an error.
pub fn mc_loss_integral(
    mkt: &MarketParams,
    payoff: &PayoffSpec,
    cpty_a: &CounterpartyParams,
    cpty_b: &CounterpartyParams,
    collateral: &CollateralSpec,
    surface: &PriceSurface,
    cfg: &McConfig,
) -> Result<McEstimate, McError> {
    mkt.validate()?;
    payoff.validate()?;
    cpty_a.validate("parties.a")?;
    cpty_b.validate("parties.b")?;
    collateral.validate()?;
    cfg.validate()?;

    let horizon = payoff.maturity;
    let n_steps = cfg.steps_for(horizon);
    let dt = horizon / n_steps as f64;
    let drift = (mkt.rate - mkt.dividend_yield - 0.5 * mkt.sigma * mkt.sigma) * dt;
    let vol = mkt.sigma * dt.sqrt();
    let rate = mkt.rate;
    let loss_a = (1.0 - cpty_a.derivative_recovery) * cpty_a.hazard_rate;
    let loss_b = (1.0 - cpty_b.derivative_recovery) * cpty_b.hazard_rate;
    let spot0 = mkt.spot;
    let seed = cfg.seed;
    let antithetic = cfg.antithetic;

    // Discounted loss intensity at one path point.
    let integrand_at = |t: f64, s: f64| -> (f64, bool) {
        let ((v, _, _), off) = surface.greeks_clamped(t, s);
        let c_a = collateral.effective_collateral(Party::A, t, v);
        let c_b = collateral.effective_collateral(Party::B, t, v);
        let flow = loss_b * (v - c_b).max(0.0) + loss_a * (v - c_a).max(0.0);
        ((-rate * t).exp() * flow, off)
    };

    let run_path = |rng: &mut ChaCha8Rng, flip: bool| -> (f64, usize) {
        let mut s = spot0;
        let mut off_grid = 0usize;
        let (mut prev, off0) = integrand_at(0.0, s);
        off_grid += off0 as usize;
        let mut integral = 0.0;
        for step in 0..n_steps {
            let z: f64 = rng.sample(StandardNormal);
            let z = if flip { -z } else { z };
            s *= (drift + vol * z).exp();
            let t = (step + 1) as f64 * dt;
            let (cur, off) = integrand_at(t, s);
            off_grid += off as usize;
            integral += 0.5 * dt * (prev + cur);
            prev = cur;
        }
        let value = (-rate * horizon).exp() * payoff.value(s) - integral;
        (value, off_grid)
    };

    let results: Vec<(f64, usize)> = exec::map_indexed(cfg.n_paths, |p| {
        let mut rng = path_rng(seed, p);
        if antithetic {
            let (v1, o1) = run_path(&mut rng, false);
            let mut rng2 = path_rng(seed, p);
            let (v2, o2) = run_path(&mut rng2, true);
            (0.5 * (v1 + v2), o1 + o2)
        } else {
            run_path(&mut rng, false)
        }
    });

    let samples: Vec<f64> = results.iter().map(|r| r.0).collect();
    let off_total: usize = results.iter().map(|r| r.1).sum();
    let lookups = cfg.n_paths * (n_steps + 1) * if antithetic { 2 } else { 1 };
    let fraction = off_total as f64 / lookups as f64;
    if fraction > 0.01 {
        return Err(McError::OffGridExcess { fraction });
    }
    Ok(estimate_from(samples, fraction))
}

/// First-to-default times by competing exponentials. Returns, per path,
/// `Some((party, time))` when the earlier default lands inside the horizon.
pub fn simulate_first_to_default(
    lambda_a: f64,
    lambda_b: f64,
    horizon: f64,
    cfg: &McConfig,
) -> Result<Vec<Option<(Party, f64)>>, McError> {
    if lambda_a < 0.0 || lambda_b < 0.0 {
        return Err(McError::InvalidConfig("hazard rates must be >= 0".to_string()));
    }
    cfg.validate()?;
    let seed = cfg.seed;
    Ok(exec::map_indexed(cfg.n_paths, move |p| {
        let mut rng = path_rng(seed, p);
        let mut draw = |lambda: f64| -> f64 {
            let u: f64 = rng.gen::<f64>();
            if lambda <= 0.0 {
                f64::INFINITY
            } else {
                -(1.0 - u).ln() / lambda
            }
        };
        let tau_a = draw(lambda_a);
        let tau_b = draw(lambda_b);
        let (who, tau) = if tau_a <= tau_b {
            (Party::A, tau_a)
        } else {
            (Party::B, tau_b)
        };
        if tau <= horizon {
            Some((who, tau))
        } else {
            None
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{black_scholes_carry, effective_hazard_price, OptionKind};
    use crate::model::CollateralMode;
    use crate::pde::{solve_default_risky, GridSpec};

    fn mkt() -> MarketParams {
        MarketParams {
            rate: 0.02,
            drift: 0.05,
            sigma: 0.2,
            dividend_yield: 0.0,
            spot: 100.0,
        }
    }

    fn cpty(lambda: f64, r: f64, chi: f64) -> CounterpartyParams {
        CounterpartyParams {
            hazard_rate: lambda,
            bond_recovery: r,
            derivative_recovery: chi,
            bond_price: 1.0,
        }
    }

    #[test]
    fn default_free_call_within_three_sigma() {
        let m = mkt();
        let payoff = PayoffSpec::call(100.0, 1.0);
        let none = cpty(0.0, 0.4, 0.4);
        let cfg = McConfig::new(40_000, 1, 7);
        let est = mc_effective_discount(&m, &payoff, &none, &none, 0.0, &cfg).unwrap();
        let bs = black_scholes_carry(100.0, 100.0, 1.0, 0.2, 0.02, 0.02, OptionKind::Call);
        assert!(
            (est.mean - bs).abs() < 3.0 * est.std_error,
            "mc {} +- {} vs bs {bs}",
            est.mean,
            est.std_error
        );
    }

    #[test]
    fn risky_scenario_matches_closed_form() {
        let m = mkt();
        let payoff = PayoffSpec::call(100.0, 1.0);
        let a = cpty(0.05, 0.4, 0.4);
        let b = cpty(0.03, 0.5, 0.2);
        let cfg = McConfig {
            n_paths: 40_000,
            steps_per_year: 4,
            seed: 11,
            antithetic: true,
        };
        let est = mc_effective_discount(&m, &payoff, &a, &b, 0.25, &cfg).unwrap();
        let closed = effective_hazard_price(&m, &payoff, &a, &b, 0.25).unwrap();
        assert!(
            (est.mean - closed).abs() < 3.0 * est.std_error,
            "mc {} +- {} vs closed {closed}",
            est.mean,
            est.std_error
        );
    }

    #[test]
    fn zero_payoff_is_exactly_zero() {
        let m = mkt();
        let payoff = PayoffSpec {
            kind: crate::model::PayoffKind::PiecewiseLinear {
                breakpoints: vec![(50.0, 0.0), (150.0, 0.0)],
            },
            maturity: 1.0,
        };
        let none = cpty(0.0, 0.4, 0.4);
        let cfg = McConfig::new(2_000, 4, 3);
        let est = mc_effective_discount(&m, &payoff, &none, &none, 0.0, &cfg).unwrap();
        assert_eq!(est.mean, 0.0);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn loss_integral_matches_pde_price() {
        let m = mkt();
        let payoff = PayoffSpec::call(100.0, 1.0);
        let a = cpty(0.05, 0.4, 0.4);
        let b = cpty(0.05, 0.4, 0.4);
        let coll = CollateralSpec::none();
        let surface =
            solve_default_risky(&m, &payoff, &GridSpec::new(201, 200), &a, &b, &coll).unwrap();
        let cfg = McConfig {
            n_paths: 30_000,
            steps_per_year: 50,
            seed: 17,
            antithetic: false,
        };
        let est = mc_loss_integral(&m, &payoff, &a, &b, &coll, &surface, &cfg).unwrap();
        let pde_price = surface.at_origin(100.0).unwrap().0;
        assert!(
            (est.mean - pde_price).abs() < 3.0 * est.std_error,
            "mc {} +- {} vs pde {pde_price}",
            est.mean,
            est.std_error
        );
        assert!(est.off_grid_fraction < 0.01);
    }

    #[test]
    fn blanket_collateral_recovers_default_free() {
        let m = mkt();
        let payoff = PayoffSpec::call(100.0, 1.0);
        let a = cpty(0.05, 0.4, 0.4);
        let b = cpty(0.05, 0.4, 0.4);
        let surface = solve_default_risky(
            &m,
            &payoff,
            &GridSpec::new(201, 200),
            &cpty(0.0, 0.4, 0.4),
            &cpty(0.0, 0.4, 0.4),
            &CollateralSpec::none(),
        )
        .unwrap();
        let blanket = CollateralSpec {
            mode: CollateralMode::FixedSchedule {
                variation: crate::model::Schedule::constant(10_000.0),
                initial_margin_a: crate::model::Schedule::constant(0.0),
                initial_margin_b: crate::model::Schedule::constant(0.0),
            },
            netted: true,
            accrual_rate: 0.0,
        };
        let cfg = McConfig::new(20_000, 12, 5);
        let est = mc_loss_integral(&m, &payoff, &a, &b, &blanket, &surface, &cfg).unwrap();
        let bs = black_scholes_carry(100.0, 100.0, 1.0, 0.2, 0.02, 0.02, OptionKind::Call);
        assert!(
            (est.mean - bs).abs() < 3.0 * est.std_error,
            "mc {} +- {} vs bs {bs}",
            est.mean,
            est.std_error
        );
    }

    #[test]
    fn initial_margin_moves_price_toward_default_free() {
        let m = mkt();
        let payoff = PayoffSpec::call(100.0, 1.0);
        // Only A's margin matters when lambda_B = 0... the claim at risk is
        // against A, with I_A protecting it.
        let a = cpty(0.05, 0.4, 0.4);
        let b = cpty(0.0, 0.4, 0.4);
        let surface = solve_default_risky(
            &m,
            &payoff,
            &GridSpec::new(201, 200),
            &a,
            &b,
            &CollateralSpec::none(),
        )
        .unwrap();
        let cfg = McConfig::new(20_000, 12, 5);
        let price_with_im = |im: f64| {
            let coll = CollateralSpec {
                mode: CollateralMode::FixedSchedule {
                    variation: crate::model::Schedule::constant(0.0),
                    initial_margin_a: crate::model::Schedule::constant(im),
                    initial_margin_b: crate::model::Schedule::constant(0.0),
                },
                netted: false,
                accrual_rate: 0.0,
            };
            mc_loss_integral(&m, &payoff, &a, &b, &coll, &surface, &cfg)
                .unwrap()
                .mean
        };
        let p0 = price_with_im(0.0);
        let p5 = price_with_im(5.0);
        let p50 = price_with_im(50.0);
        let free = black_scholes_carry(100.0, 100.0, 1.0, 0.2, 0.02, 0.02, OptionKind::Call);
        assert!(p0 < p5 && p5 < p50, "monotone in initial margin: {p0} {p5} {p50}");
        assert!(p50 <= free + 1e-6);
    }

    #[test]
    fn first_to_default_statistics() {
        let cfg = McConfig::new(200_000, 1, 23);
        let outcomes = simulate_first_to_default(0.05, 0.10, 2.0, &cfg).unwrap();
        let n = outcomes.len() as f64;
        let defaults = outcomes.iter().flatten().count() as f64;
        let p_hat = defaults / n;
        let p = 1.0 - (-(0.05f64 + 0.10) * 2.0).exp();
        let se = (p * (1.0 - p) / n).sqrt();
        assert!((p_hat - p).abs() < 3.0 * se, "p_hat {p_hat} vs {p}");

        let a_given_default = outcomes
            .iter()
            .flatten()
            .filter(|(w, _)| *w == Party::A)
            .count() as f64
            / defaults;
        let p_a = 0.05 / 0.15;
        let se_a = (p_a * (1.0 - p_a) / defaults).sqrt();
        assert!(
            (a_given_default - p_a).abs() < 3.0 * se_a,
            "share {a_given_default} vs {p_a}"
        );
    }

    #[test]
    fn no_hazard_means_no_defaults() {
        let cfg = McConfig::new(5_000, 1, 2);
        let outcomes = simulate_first_to_default(0.0, 0.0, 5.0, &cfg).unwrap();
        assert!(outcomes.iter().all(Option::is_none));
    }

    #[test]
    fn reproducible_bit_exactly() {
        let m = mkt();
        let payoff = PayoffSpec::call(100.0, 1.0);
        let a = cpty(0.05, 0.4, 0.4);
        let cfg = McConfig {
            n_paths: 5_000,
            steps_per_year: 12,
            seed: 99,
            antithetic: true,
        };
        let e1 = mc_effective_discount(&m, &payoff, &a, &a, 0.0, &cfg).unwrap();
        let e2 = mc_effective_discount(&m, &payoff, &a, &a, 0.0, &cfg).unwrap();
        assert_eq!(e1.mean.to_bits(), e2.mean.to_bits());
        assert_eq!(e1.std_error.to_bits(), e2.std_error.to_bits());
    }

    #[test]
    fn antithetic_cuts_variance_on_call() {
        let m = mkt();
        let payoff = PayoffSpec::call(100.0, 1.0);
        let none = cpty(0.0, 0.4, 0.4);
        let plain = McConfig::new(20_000, 1, 31);
        let anti = McConfig {
            antithetic: true,
            ..plain
        };
        let e_plain = mc_effective_discount(&m, &payoff, &none, &none, 0.0, &plain).unwrap();
        let e_anti = mc_effective_discount(&m, &payoff, &none, &none, 0.0, &anti).unwrap();
        assert!(
            e_anti.std_error <= e_plain.std_error,
            "antithetic {} vs plain {}",
            e_anti.std_error,
            e_plain.std_error
        );
    }
}
