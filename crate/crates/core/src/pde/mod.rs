//! Finite-difference solver for the generalized pricing operator
//!
//!   dV/dt + (x - y) S dV/dS + 1/2 sigma^2 S^2 d2V/dS2 - c V = source(t, S, V)
//!
//! solved backward from the contractual payoff on a log-spaced spot grid
//! with a theta scheme (Crank-Nicolson by default) and implicit Rannacher
//! startup steps to damp payoff-kink oscillations. Every pricing equation in
//! the crate is a specialization of this operator via the carry rate, the
//! discount rate and the source term.
//!
//! Boundary conditions impose zero gamma (linearity in S) at both spot
//! truncation boundaries, which is exact for piecewise-linear payoffs.
//! Nonlinear sources (collateralized closeouts) are handled by Picard
//! iteration within each implicit step; the source's Lipschitz constant is
//! bounded by the total hazard, so convergence requires `hazard * dt < 1`
//! and is enforced at entry.

mod tridiag;

use crate::model::{
    bond_yield, loss_ratio, closeout_residual, CloseoutRule, CollateralMode, CollateralSpec,
    CounterpartyParams, MarketParams, ModelError, MoneyAccountStructure, Party, PayoffSpec,
};
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PdeError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("grid: {0}")]
    InvalidGrid(String),
    #[error("collateral mode not supported here: {0}")]
    UnsupportedCollateral(String),
    #[error("time step too coarse: {0}")]
    TimeStepTooCoarse(String),
    #[error(
        "Picard iteration did not converge at time step {time_index} \
         ({iterations} sweeps, last residual {residual:e})"
    )]
    PicardDiverged {
        time_index: usize,
        iterations: usize,
        residual: f64,
    },
    #[error("point (t = {time}, S = {spot}) outside surface domain")]
    OutOfDomain { time: f64, spot: f64 },
}

/// Grid resolution and scheme controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Number of spot nodes (log-uniform), at least 50.
    pub n_space: usize,
    /// Number of time steps, at least 50.
    pub n_time: usize,
    /// Half-width of the log-spot domain in units of sigma * sqrt(T).
    #[serde(default = "default_width")]
    pub width_sigmas: f64,
    /// Theta of the time scheme; 0.5 is Crank-Nicolson, 1.0 fully implicit.
    #[serde(default = "default_theta")]
    pub scheme_theta: f64,
    /// Fully implicit startup steps taken from maturity.
    #[serde(default = "default_rannacher")]
    pub rannacher_steps: usize,
}

fn default_width() -> f64 {
    5.0
}
fn default_theta() -> f64 {
    0.5
}
fn default_rannacher() -> usize {
    4
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            n_space: 200,
            n_time: 200,
            width_sigmas: default_width(),
            scheme_theta: default_theta(),
            rannacher_steps: default_rannacher(),
        }
    }
}

impl GridSpec {
    pub fn new(n_space: usize, n_time: usize) -> Self {
        GridSpec {
            n_space,
            n_time,
            ..GridSpec::default()
        }
    }

    pub fn validate(&self) -> Result<(), PdeError> {
        if self.n_space < 50 {
            return Err(PdeError::InvalidGrid("n_space must be >= 50".to_string()));
        }
        if self.n_time < 50 {
            return Err(PdeError::InvalidGrid("n_time must be >= 50".to_string()));
        }
        if !self.width_sigmas.is_finite() || self.width_sigmas <= 0.0 {
            return Err(PdeError::InvalidGrid("width_sigmas must be > 0".to_string()));
        }
        if !(0.0..=1.0).contains(&self.scheme_theta) {
            return Err(PdeError::InvalidGrid("scheme_theta must be in [0, 1]".to_string()));
        }
        Ok(())
    }
}

/// Solved grid of prices with first and second spot derivatives, stored
/// row-major by time (index 0 = valuation date, last row = maturity).
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSurface {
    times: Vec<f64>,
    spots: Vec<f64>,
    values: Vec<f64>,
    deltas: Vec<f64>,
    gammas: Vec<f64>,
}

impl PriceSurface {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn spots(&self) -> &[f64] {
        &self.spots
    }

    pub fn maturity(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn value(&self, time_idx: usize, spot_idx: usize) -> f64 {
        self.values[time_idx * self.spots.len() + spot_idx]
    }

    pub fn delta(&self, time_idx: usize, spot_idx: usize) -> f64 {
        self.deltas[time_idx * self.spots.len() + spot_idx]
    }

    pub fn gamma(&self, time_idx: usize, spot_idx: usize) -> f64 {
        self.gammas[time_idx * self.spots.len() + spot_idx]
    }

    pub fn values_at(&self, time_idx: usize) -> &[f64] {
        let ns = self.spots.len();
        &self.values[time_idx * ns..(time_idx + 1) * ns]
    }

    /// Value, delta and gamma at `(t, s)` by bilinear interpolation.
    /// Errors when the point lies outside the solved domain.
    pub fn greeks(&self, t: f64, s: f64) -> Result<(f64, f64, f64), PdeError> {
        let slack = 1e-9 * self.maturity().max(1.0);
        if t < -slack || t > self.maturity() + slack {
            return Err(PdeError::OutOfDomain { time: t, spot: s });
        }
        if s < self.spots[0] || s > *self.spots.last().unwrap() {
            return Err(PdeError::OutOfDomain { time: t, spot: s });
        }
        Ok(self.interpolate(t, s))
    }

    /// As [`greeks`](Self::greeks) but clamping the spot into the grid;
    /// the flag reports whether clamping happened. Time is still required
    /// to be inside the horizon.
    pub fn greeks_clamped(&self, t: f64, s: f64) -> ((f64, f64, f64), bool) {
        let lo = self.spots[0];
        let hi = *self.spots.last().unwrap();
        let clamped = s < lo || s > hi;
        (self.interpolate(t, s.clamp(lo, hi)), clamped)
    }

    fn interpolate(&self, t: f64, s: f64) -> (f64, f64, f64) {
        let nt = self.times.len();
        let ns = self.spots.len();
        let dt = self.times[1] - self.times[0];
        let ti = ((t / dt).floor() as isize).clamp(0, nt as isize - 2) as usize;
        let wt = ((t - self.times[ti]) / dt).clamp(0.0, 1.0);

        let sj = self
            .spots
            .partition_point(|&x| x <= s)
            .clamp(1, ns - 1)
            - 1;
        let ws = ((s - self.spots[sj]) / (self.spots[sj + 1] - self.spots[sj])).clamp(0.0, 1.0);

        let lerp2 = |grid: &[f64]| {
            let g = |i: usize, j: usize| grid[i * ns + j];
            let lo = g(ti, sj) * (1.0 - ws) + g(ti, sj + 1) * ws;
            let hi = g(ti + 1, sj) * (1.0 - ws) + g(ti + 1, sj + 1) * ws;
            lo * (1.0 - wt) + hi * wt
        };
        (lerp2(&self.values), lerp2(&self.deltas), lerp2(&self.gammas))
    }

    /// Price, delta, gamma at the valuation date and the given spot.
    pub fn at_origin(&self, spot: f64) -> Result<(f64, f64, f64), PdeError> {
        self.greeks(0.0, spot)
    }

    /// Writes the surface as CSV with header `t,S,V,delta,gamma`, row-major
    /// by time.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,S,V,delta,gamma")?;
        let ns = self.spots.len();
        for (i, &t) in self.times.iter().enumerate() {
            for (j, &s) in self.spots.iter().enumerate() {
                let k = i * ns + j;
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    t, s, self.values[k], self.deltas[k], self.gammas[k]
                )?;
            }
        }
        Ok(())
    }
}

enum SourceTerm<'a> {
    Zero,
    Fn(&'a dyn Fn(f64, f64, f64) -> f64),
}

const PICARD_TOL: f64 = 1e-10;
const PICARD_MAX_ITERS: usize = 50;

/// Solves the generalized operator with caller-supplied carry rate,
/// discount rate (both functions of time, sampled at slab midpoints) and
/// source term `source(t, S, V)`.
pub fn solve_generalized(
    mkt: &MarketParams,
    payoff: &PayoffSpec,
    grid: &GridSpec,
    carry: &dyn Fn(f64) -> f64,
    discount: &dyn Fn(f64) -> f64,
    source: &dyn Fn(f64, f64, f64) -> f64,
) -> Result<PriceSurface, PdeError> {
    solve_core(mkt, payoff, grid, carry, discount, SourceTerm::Fn(source))
}

/// Default-free price under a composite accrual rate `rho`: carry
/// `rho - dividend_yield`, discount `rho`, no source.
pub fn solve_default_free(
    mkt: &MarketParams,
    payoff: &PayoffSpec,
    grid: &GridSpec,
    rho: f64,
) -> Result<PriceSurface, PdeError> {
    let carry = rho - mkt.dividend_yield;
    solve_core(mkt, payoff, grid, &|_| carry, &|_| rho, SourceTerm::Zero)
}

/// Bilateral default-risky price under proportional recovery, optionally
/// collateralized at a fixed fraction `k` of current value. The source is
/// the linear loss intensity `(1-k)^+ [(1-chi_A) l_A + (1-chi_B) l_B] V`.
pub fn solve_default_risky(
    mkt: &MarketParams,
    payoff: &PayoffSpec,
    grid: &GridSpec,
    cpty_a: &CounterpartyParams,
    cpty_b: &CounterpartyParams,
    collateral: &CollateralSpec,
) -> Result<PriceSurface, PdeError> {
    let k = match &collateral.mode {
        CollateralMode::None => 0.0,
        CollateralMode::ProportionalK { k } => *k,
        CollateralMode::FixedSchedule { .. } => {
            return Err(PdeError::UnsupportedCollateral(
                "fixed schedules need the general closeout solver".to_string(),
            ))
        }
    };
    validate_hazard_step(payoff, grid, cpty_a, cpty_b)?;
    let s_rate = crate::analytic::effective_hazard(cpty_a, cpty_b, k);
    let carry = mkt.rate - mkt.dividend_yield;
    let rate = mkt.rate;
    solve_core(
        mkt,
        payoff,
        grid,
        &|_| carry,
        &|_| rate,
        SourceTerm::Fn(&|_t, _s, v| s_rate * v),
    )
}

/// Bilateral default-risky price under an explicit closeout rule. The
/// source `l_B (V - v_B) + l_A (V - v_A)` is generally nonlinear in V and
/// is resolved by per-step Picard iteration.
pub fn solve_general_closeout(
    mkt: &MarketParams,
    payoff: &PayoffSpec,
    grid: &GridSpec,
    cpty_a: &CounterpartyParams,
    cpty_b: &CounterpartyParams,
    rule: CloseoutRule,
    collateral: &CollateralSpec,
) -> Result<PriceSurface, PdeError> {
    collateral.validate()?;
    validate_hazard_step(payoff, grid, cpty_a, cpty_b)?;
    let lam_a = cpty_a.hazard_rate;
    let lam_b = cpty_b.hazard_rate;
    let chi_a = cpty_a.derivative_recovery;
    let chi_b = cpty_b.derivative_recovery;
    let carry = mkt.rate - mkt.dividend_yield;
    let rate = mkt.rate;

    match rule {
        CloseoutRule::Proportional => {
            let k = match &collateral.mode {
                CollateralMode::None => 0.0,
                CollateralMode::ProportionalK { k } => *k,
                CollateralMode::FixedSchedule { .. } => {
                    return Err(PdeError::UnsupportedCollateral(
                        "proportional closeout takes no schedule; use the collateralized rule"
                            .to_string(),
                    ))
                }
            };
            let s_rate = (1.0 - k).max(0.0) * ((1.0 - chi_a) * lam_a + (1.0 - chi_b) * lam_b);
            solve_core(
                mkt,
                payoff,
                grid,
                &|_| carry,
                &|_| rate,
                SourceTerm::Fn(&|_t, _s, v| s_rate * v),
            )
        }
        CloseoutRule::Collateralized => {
            let coll = collateral.clone();
            let src = move |t: f64, _s: f64, v: f64| {
                let c_a = coll.effective_collateral(Party::A, t, v);
                let c_b = coll.effective_collateral(Party::B, t, v);
                let v_a = closeout_residual(CloseoutRule::Collateralized, v, c_a, chi_a);
                let v_b = closeout_residual(CloseoutRule::Collateralized, v, c_b, chi_b);
                lam_b * (v - v_b) + lam_a * (v - v_a)
            };
            solve_core(mkt, payoff, grid, &|_| carry, &|_| rate, SourceTerm::Fn(&src))
        }
        CloseoutRule::PariPassuNetted => {
            if !matches!(collateral.mode, CollateralMode::None) {
                return Err(PdeError::UnsupportedCollateral(
                    "pari-passu netted closeout prices the uncollateralized claim".to_string(),
                ));
            }
            let r_a = cpty_a.bond_recovery;
            let r_b = cpty_b.bond_recovery;
            let src = move |_t: f64, _s: f64, v: f64| {
                // Positive values are owed by B, negative by A; each party's
                // bond recovery applies on the leg that party owes.
                let v_b = closeout_residual(CloseoutRule::PariPassuNetted, v, 0.0, r_b);
                let v_a = -closeout_residual(CloseoutRule::PariPassuNetted, -v, 0.0, r_a);
                lam_b * (v - v_b) + lam_a * (v - v_a)
            };
            solve_core(mkt, payoff, grid, &|_| carry, &|_| rate, SourceTerm::Fn(&src))
        }
    }
}

/// Price under a structured money account with composite rate rho. This is
/// the bookkeeping PDE of a cost-prescribed money account; its output is
/// not a market-cleared price and exists to quantify the wedge against
/// [`solve_default_risky`].
pub fn solve_rho_structured(
    mkt: &MarketParams,
    payoff: &PayoffSpec,
    grid: &GridSpec,
    cpty_a: &CounterpartyParams,
    cpty_b: &CounterpartyParams,
    ma: &MoneyAccountStructure,
) -> Result<PriceSurface, PdeError> {
    ma.validate()?;
    validate_hazard_step(payoff, grid, cpty_a, cpty_b)?;
    let rho = ma.composite_rate();
    let z_a = loss_ratio(cpty_a)?;
    let z_b = loss_ratio(cpty_b)?;
    let yield_a = bond_yield(mkt, cpty_a);
    let yield_b = bond_yield(mkt, cpty_b);
    let s_rate = z_b * (yield_b - rho) + z_a * (yield_a - rho);
    let carry = rho - mkt.dividend_yield;
    solve_core(
        mkt,
        payoff,
        grid,
        &|_| carry,
        &|_| rho,
        SourceTerm::Fn(&|_t, _s, v| s_rate * v),
    )
}

fn validate_hazard_step(
    payoff: &PayoffSpec,
    grid: &GridSpec,
    cpty_a: &CounterpartyParams,
    cpty_b: &CounterpartyParams,
) -> Result<(), PdeError> {
    cpty_a.validate("parties.a")?;
    cpty_b.validate("parties.b")?;
    let dt = payoff.maturity / grid.n_time as f64;
    let total = cpty_a.hazard_rate + cpty_b.hazard_rate;
    if total * dt >= 1.0 {
        return Err(PdeError::TimeStepTooCoarse(format!(
            "hazard * dt = {:.3} >= 1; increase n_time",
            total * dt
        )));
    }
    Ok(())
}

fn solve_core(
    mkt: &MarketParams,
    payoff: &PayoffSpec,
    grid: &GridSpec,
    carry: &dyn Fn(f64) -> f64,
    discount: &dyn Fn(f64) -> f64,
    source: SourceTerm<'_>,
) -> Result<PriceSurface, PdeError> {
    mkt.validate()?;
    payoff.validate()?;
    grid.validate()?;

    let ns = grid.n_space;
    let nt = grid.n_time;
    let maturity = payoff.maturity;
    let dt = maturity / nt as f64;

    // Log-uniform spot grid centred on the current spot.
    let half_width = grid.width_sigmas * mkt.sigma * maturity.sqrt();
    let x0 = mkt.spot.ln();
    let dx = 2.0 * half_width / (ns - 1) as f64;
    let spots: Vec<f64> = (0..ns)
        .map(|j| (x0 - half_width + j as f64 * dx).exp())
        .collect();
    let times: Vec<f64> = (0..=nt).map(|i| i as f64 * dt).collect();

    // Geometry-only pieces of the first/second derivative stencils.
    struct Stencil {
        d1: [f64; 3],
        d2: [f64; 3],
    }
    let stencils: Vec<Stencil> = (1..ns - 1)
        .map(|j| {
            let hm = spots[j] - spots[j - 1];
            let hp = spots[j + 1] - spots[j];
            Stencil {
                d1: [
                    -hp / (hm * (hm + hp)),
                    (hp - hm) / (hm * hp),
                    hm / (hp * (hm + hp)),
                ],
                d2: [
                    2.0 / (hm * (hm + hp)),
                    -2.0 / (hm * hp),
                    2.0 / (hp * (hm + hp)),
                ],
            }
        })
        .collect();

    let mut values = vec![0.0; (nt + 1) * ns];
    for (j, &s) in spots.iter().enumerate() {
        values[nt * ns + j] = payoff.value(s);
    }

    let sig2 = mkt.sigma * mkt.sigma;
    let mut lo = vec![0.0; ns];
    let mut di = vec![0.0; ns];
    let mut up = vec![0.0; ns];
    let mut rhs_base = vec![0.0; ns];
    let mut rhs = vec![0.0; ns];
    let mut impl_lower = vec![0.0; ns - 1];
    let mut impl_diag = vec![0.0; ns];
    let mut impl_upper = vec![0.0; ns - 1];
    let mut scratch = vec![0.0; ns];
    let mut v_guess = vec![0.0; ns];
    let mut src_next = vec![0.0; ns];

    for step in 0..nt {
        let i = nt - 1 - step; // filling row i from known row i + 1
        let theta = if step < grid.rannacher_steps {
            1.0
        } else {
            grid.scheme_theta
        };
        let t_mid = 0.5 * (times[i] + times[i + 1]);
        let b = carry(t_mid);
        let c = discount(t_mid);

        // Spatial operator L (discount included on the diagonal).
        for j in 1..ns - 1 {
            let st = &stencils[j - 1];
            let adv = b * spots[j];
            let dif = 0.5 * sig2 * spots[j] * spots[j];
            lo[j] = adv * st.d1[0] + dif * st.d2[0];
            di[j] = adv * st.d1[1] + dif * st.d2[1] - c;
            up[j] = adv * st.d1[2] + dif * st.d2[2];
        }
        // Zero-gamma boundaries: one-sided first derivative only.
        let h_lo = spots[1] - spots[0];
        di[0] = -b * spots[0] / h_lo - c;
        up[0] = b * spots[0] / h_lo;
        let h_hi = spots[ns - 1] - spots[ns - 2];
        lo[ns - 1] = -b * spots[ns - 1] / h_hi;
        di[ns - 1] = b * spots[ns - 1] / h_hi - c;

        let (prev, next) = values.split_at_mut((i + 1) * ns);
        let v_next = &next[..ns];
        let v_new = &mut prev[i * ns..(i + 1) * ns];

        // Explicit part: V^{i+1} + (1 - theta) dt L V^{i+1}.
        let w_ex = (1.0 - theta) * dt;
        rhs_base[0] = v_next[0] + w_ex * (di[0] * v_next[0] + up[0] * v_next[1]);
        for j in 1..ns - 1 {
            rhs_base[j] = v_next[j]
                + w_ex * (lo[j] * v_next[j - 1] + di[j] * v_next[j] + up[j] * v_next[j + 1]);
        }
        rhs_base[ns - 1] = v_next[ns - 1]
            + w_ex * (lo[ns - 1] * v_next[ns - 2] + di[ns - 1] * v_next[ns - 1]);

        // Implicit matrix I - theta dt L.
        let w_im = theta * dt;
        for j in 0..ns {
            impl_diag[j] = 1.0 - w_im * di[j];
        }
        for j in 0..ns - 1 {
            impl_upper[j] = -w_im * up[j];
            impl_lower[j] = -w_im * lo[j + 1];
        }

        match source {
            SourceTerm::Zero => {
                rhs.copy_from_slice(&rhs_base);
                tridiag::solve_in_place(&impl_lower, &impl_diag, &impl_upper, &mut rhs, &mut scratch);
                v_new.copy_from_slice(&rhs);
            }
            SourceTerm::Fn(src) => {
                for j in 0..ns {
                    src_next[j] = src(t_mid, spots[j], v_next[j]);
                }
                v_guess.copy_from_slice(v_next);
                let mut converged = false;
                let mut residual = f64::INFINITY;
                for _iter in 0..PICARD_MAX_ITERS {
                    for j in 0..ns {
                        let s_mix = theta * src(t_mid, spots[j], v_guess[j])
                            + (1.0 - theta) * src_next[j];
                        rhs[j] = rhs_base[j] - dt * s_mix;
                    }
                    tridiag::solve_in_place(
                        &impl_lower,
                        &impl_diag,
                        &impl_upper,
                        &mut rhs,
                        &mut scratch,
                    );
                    let mut diff = 0.0f64;
                    let mut scale = 1.0f64;
                    for j in 0..ns {
                        diff = diff.max((rhs[j] - v_guess[j]).abs());
                        scale = scale.max(rhs[j].abs());
                    }
                    v_guess.copy_from_slice(&rhs);
                    residual = diff / scale;
                    if residual < PICARD_TOL {
                        converged = true;
                        break;
                    }
                }
                if !converged {
                    return Err(PdeError::PicardDiverged {
                        time_index: i,
                        iterations: PICARD_MAX_ITERS,
                        residual,
                    });
                }
                v_new.copy_from_slice(&v_guess);
            }
        }
    }

    // Spot derivatives per time row: central differences inside, one-sided
    // three-point stencils at the boundaries.
    let mut deltas = vec![0.0; (nt + 1) * ns];
    let mut gammas = vec![0.0; (nt + 1) * ns];
    for i in 0..=nt {
        let row = &values[i * ns..(i + 1) * ns];
        let d = &mut deltas[i * ns..(i + 1) * ns];
        let g = &mut gammas[i * ns..(i + 1) * ns];
        for j in 1..ns - 1 {
            let st = &stencils[j - 1];
            d[j] = st.d1[0] * row[j - 1] + st.d1[1] * row[j] + st.d1[2] * row[j + 1];
            g[j] = st.d2[0] * row[j - 1] + st.d2[1] * row[j] + st.d2[2] * row[j + 1];
        }
        d[0] = (row[1] - row[0]) / (spots[1] - spots[0]);
        d[ns - 1] = (row[ns - 1] - row[ns - 2]) / (spots[ns - 1] - spots[ns - 2]);
        let st0 = &stencils[0];
        g[0] = st0.d2[0] * row[0] + st0.d2[1] * row[1] + st0.d2[2] * row[2];
        let st1 = &stencils[ns - 3];
        g[ns - 1] = st1.d2[0] * row[ns - 3] + st1.d2[1] * row[ns - 2] + st1.d2[2] * row[ns - 1];
    }

    Ok(PriceSurface {
        times,
        spots,
        values,
        deltas,
        gammas,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{black_scholes_carry, OptionKind};
    use crate::model::Schedule;

    fn mkt() -> MarketParams {
        MarketParams {
            rate: 0.02,
            drift: 0.05,
            sigma: 0.2,
            dividend_yield: 0.01,
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

    fn grid() -> GridSpec {
        GridSpec::new(201, 200)
    }

    #[test]
    fn zero_payoff_gives_zero_surface() {
        let payoff = PayoffSpec {
            kind: crate::model::PayoffKind::PiecewiseLinear {
                breakpoints: vec![(50.0, 0.0), (150.0, 0.0)],
            },
            maturity: 1.0,
        };
        let surf = solve_default_free(&mkt(), &payoff, &grid(), 0.02).unwrap();
        assert!(surf.values.iter().all(|&v| v.abs() < 1e-14));
    }

    #[test]
    fn terminal_row_is_exact_payoff() {
        let payoff = PayoffSpec::call(100.0, 1.0);
        let surf = solve_default_free(&mkt(), &payoff, &grid(), 0.02).unwrap();
        let nt = surf.times().len() - 1;
        for (j, &s) in surf.spots().iter().enumerate() {
            assert_eq!(surf.value(nt, j), payoff.value(s));
        }
    }

    #[test]
    fn matches_analytic_call() {
        let m = mkt();
        let payoff = PayoffSpec::call(100.0, 1.0);
        let surf = solve_default_free(&m, &payoff, &grid(), m.rate).unwrap();
        let (v, _, _) = surf.at_origin(100.0).unwrap();
        let bs = black_scholes_carry(
            100.0,
            100.0,
            1.0,
            m.sigma,
            m.rate - m.dividend_yield,
            m.rate,
            OptionKind::Call,
        );
        assert!((v - bs).abs() / bs < 1e-3, "pde {v} vs analytic {bs}");
    }

    #[test]
    fn forward_satisfies_static_replication() {
        let m = mkt();
        let payoff = PayoffSpec::forward(100.0, 1.0);
        let surf = solve_default_free(&m, &payoff, &grid(), m.rate).unwrap();
        // V(t, S) = S e^{-delta tau} - K e^{-r tau} at several grid points.
        for &(ti, frac) in &[(0usize, 0.0f64), (50, 0.25), (100, 0.5)] {
            let t = frac * 1.0;
            let tau = 1.0 - t;
            for &s in &[85.0, 100.0, 115.0] {
                let (v, _, _) = surf.greeks(t, s).unwrap();
                let exact =
                    s * (-m.dividend_yield * tau).exp() - 100.0 * (-m.rate * tau).exp();
                assert!(
                    (v - exact).abs() / exact.abs().max(1.0) < 5e-4,
                    "t index {ti}: {v} vs {exact}"
                );
            }
        }
    }

    #[test]
    fn composite_rate_shifts_price() {
        let m = mkt();
        let payoff = PayoffSpec::call(100.0, 1.0);
        let base = solve_default_free(&m, &payoff, &grid(), m.rate).unwrap();
        let bumped = solve_default_free(&m, &payoff, &grid(), m.rate + 0.01).unwrap();
        let v0 = base.at_origin(100.0).unwrap().0;
        let v1 = bumped.at_origin(100.0).unwrap().0;
        assert!((v1 - v0).abs() > 1e-3, "rho bump must move the price");
        // Against the analytic price at the shifted rate.
        let bs = black_scholes_carry(
            100.0,
            100.0,
            1.0,
            m.sigma,
            m.rate + 0.01 - m.dividend_yield,
            m.rate + 0.01,
            OptionKind::Call,
        );
        assert!((v1 - bs).abs() / bs < 1e-3);
    }

    #[test]
    fn zero_carry_case() {
        let m = mkt();
        let payoff = PayoffSpec::call(100.0, 1.0);
        // rho equal to the dividend yield gives a driftless spot.
        let rho = m.dividend_yield;
        let surf = solve_default_free(&m, &payoff, &grid(), rho).unwrap();
        let v = surf.at_origin(100.0).unwrap().0;
        let bs = black_scholes_carry(100.0, 100.0, 1.0, m.sigma, 0.0, rho, OptionKind::Call);
        assert!((v - bs).abs() / bs < 1e-3);
    }

    #[test]
    fn risky_reduces_to_default_free_without_hazard() {
        let m = mkt();
        let payoff = PayoffSpec::call(100.0, 1.0);
        let free = solve_default_free(&m, &payoff, &grid(), m.rate).unwrap();
        let risky = solve_default_risky(
            &m,
            &payoff,
            &grid(),
            &cpty(0.0, 0.4, 0.4),
            &cpty(0.0, 0.4, 0.4),
            &CollateralSpec::none(),
        )
        .unwrap();
        for (a, b) in free.values.iter().zip(risky.values.iter()) {
            assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
        }
    }

    #[test]
    fn full_collateral_matches_default_free() {
        let m = mkt();
        let payoff = PayoffSpec::call(100.0, 1.0);
        let free = solve_default_free(&m, &payoff, &grid(), m.rate).unwrap();
        let risky = solve_default_risky(
            &m,
            &payoff,
            &grid(),
            &cpty(0.05, 0.4, 0.4),
            &cpty(0.03, 0.4, 0.4),
            &CollateralSpec::proportional(1.0),
        )
        .unwrap();
        let a = free.at_origin(100.0).unwrap().0;
        let b = risky.at_origin(100.0).unwrap().0;
        assert!((a - b).abs() < 1e-9 * a);
    }

    #[test]
    fn risky_matches_effective_hazard_closed_form() {
        let m = mkt();
        let payoff = PayoffSpec::call(100.0, 1.0);
        let a = cpty(0.05, 0.4, 0.4);
        let b = cpty(0.03, 0.5, 0.2);
        let surf =
            solve_default_risky(&m, &payoff, &grid(), &a, &b, &CollateralSpec::none()).unwrap();
        let v = surf.at_origin(100.0).unwrap().0;
        let closed = crate::analytic::effective_hazard_price(&m, &payoff, &a, &b, 0.0).unwrap();
        assert!((v - closed).abs() / closed < 1e-3, "pde {v} vs closed {closed}");
    }

    #[test]
    fn fixed_schedule_rejected_by_linear_solver() {
        let m = mkt();
        let payoff = PayoffSpec::call(100.0, 1.0);
        let coll = CollateralSpec {
            mode: CollateralMode::FixedSchedule {
                variation: Schedule::constant(5.0),
                initial_margin_a: Schedule::constant(0.0),
                initial_margin_b: Schedule::constant(0.0),
            },
            netted: true,
            accrual_rate: 0.0,
        };
        let err = solve_default_risky(
            &m,
            &payoff,
            &grid(),
            &cpty(0.05, 0.4, 0.4),
            &cpty(0.0, 0.4, 0.4),
            &coll,
        )
        .unwrap_err();
        assert!(matches!(err, PdeError::UnsupportedCollateral(_)));
    }

    #[test]
    fn proportional_closeout_matches_linear_solver() {
        let m = mkt();
        let payoff = PayoffSpec::call(100.0, 1.0);
        let a = cpty(0.05, 0.4, 0.4);
        let b = cpty(0.03, 0.5, 0.2);
        let lin =
            solve_default_risky(&m, &payoff, &grid(), &a, &b, &CollateralSpec::none()).unwrap();
        let gen = solve_general_closeout(
            &m,
            &payoff,
            &grid(),
            &a,
            &b,
            CloseoutRule::Proportional,
            &CollateralSpec::none(),
        )
        .unwrap();
        for (x, y) in lin.values.iter().zip(gen.values.iter()) {
            assert!((x - y).abs() <= 1e-8 * x.abs().max(1.0));
        }
    }

    #[test]
    fn collateralized_zero_schedule_matches_proportional() {
        let m = mkt();
        let payoff = PayoffSpec::call(100.0, 1.0);
        let a = cpty(0.05, 0.4, 0.4);
        let b = cpty(0.03, 0.5, 0.2);
        let coll_zero = CollateralSpec {
            mode: CollateralMode::FixedSchedule {
                variation: Schedule::constant(0.0),
                initial_margin_a: Schedule::constant(0.0),
                initial_margin_b: Schedule::constant(0.0),
            },
            netted: true,
            accrual_rate: 0.0,
        };
        let gen = solve_general_closeout(
            &m,
            &payoff,
            &grid(),
            &a,
            &b,
            CloseoutRule::Collateralized,
            &coll_zero,
        )
        .unwrap();
        let prop = solve_general_closeout(
            &m,
            &payoff,
            &grid(),
            &a,
            &b,
            CloseoutRule::Proportional,
            &CollateralSpec::none(),
        )
        .unwrap();
        for (x, y) in gen.values.iter().zip(prop.values.iter()) {
            assert!((x - y).abs() <= 1e-8 * x.abs().max(1.0));
        }
    }

    #[test]
    fn blanket_collateral_recovers_default_free_price() {
        let m = mkt();
        let payoff = PayoffSpec::call(100.0, 1.0);
        let a = cpty(0.05, 0.4, 0.4);
        let b = cpty(0.03, 0.5, 0.2);
        let blanket = CollateralSpec {
            mode: CollateralMode::FixedSchedule {
                // Far above any grid value of the call.
                variation: Schedule::constant(10_000.0),
                initial_margin_a: Schedule::constant(0.0),
                initial_margin_b: Schedule::constant(0.0),
            },
            netted: true,
            accrual_rate: 0.0,
        };
        let gen = solve_general_closeout(
            &m,
            &payoff,
            &grid(),
            &a,
            &b,
            CloseoutRule::Collateralized,
            &blanket,
        )
        .unwrap();
        let free = solve_default_free(&m, &payoff, &grid(), m.rate).unwrap();
        let x = gen.at_origin(100.0).unwrap().0;
        let y = free.at_origin(100.0).unwrap().0;
        assert!((x - y).abs() < 1e-9 * y);
    }

    #[test]
    fn partial_collateral_lies_between_limits() {
        let m = mkt();
        let payoff = PayoffSpec::call(100.0, 1.0);
        let a = cpty(0.05, 0.4, 0.4);
        let b = cpty(0.03, 0.5, 0.2);
        let uncoll = solve_general_closeout(
            &m,
            &payoff,
            &grid(),
            &a,
            &b,
            CloseoutRule::Proportional,
            &CollateralSpec::none(),
        )
        .unwrap()
        .at_origin(100.0)
        .unwrap()
        .0;
        let free = solve_default_free(&m, &payoff, &grid(), m.rate)
            .unwrap()
            .at_origin(100.0)
            .unwrap()
            .0;
        let partial = CollateralSpec {
            mode: CollateralMode::FixedSchedule {
                variation: Schedule::constant(0.5 * uncoll),
                initial_margin_a: Schedule::constant(0.0),
                initial_margin_b: Schedule::constant(0.0),
            },
            netted: true,
            accrual_rate: 0.0,
        };
        let mid = solve_general_closeout(
            &m,
            &payoff,
            &grid(),
            &a,
            &b,
            CloseoutRule::Collateralized,
            &partial,
        )
        .unwrap()
        .at_origin(100.0)
        .unwrap()
        .0;
        assert!(mid > uncoll && mid < free, "{uncoll} < {mid} < {free} violated");
    }

    #[test]
    fn rho_structured_collapses_when_spreads_vanish() {
        let m = mkt();
        let payoff = PayoffSpec::call(100.0, 1.0);
        let a = cpty(0.05, 0.4, 0.4);
        let b = cpty(0.03, 0.5, 0.2);
        let ma = MoneyAccountStructure::risk_free(m.rate);
        let structured = solve_rho_structured(&m, &payoff, &grid(), &a, &b, &ma).unwrap();
        let risky =
            solve_default_risky(&m, &payoff, &grid(), &a, &b, &CollateralSpec::none()).unwrap();
        let x = structured.at_origin(100.0).unwrap().0;
        let y = risky.at_origin(100.0).unwrap().0;
        // With rho = r the footnote source z_B (r_B - r) + z_A (r_A - r)
        // equals the market-cleared loss intensity exactly.
        assert!((x - y).abs() < 1e-9 * y, "{x} vs {y}");
    }

    #[test]
    fn rho_structured_wedge_is_nonzero_with_spread() {
        let m = mkt();
        let payoff = PayoffSpec::call(100.0, 1.0);
        let a = cpty(0.05, 0.4, 0.4);
        let b = cpty(0.03, 0.5, 0.2);
        let ma = MoneyAccountStructure {
            components: vec![
                crate::model::MoneyAccountComponent {
                    name: "risk_free".into(),
                    weight: 0.5,
                    rate: m.rate,
                },
                crate::model::MoneyAccountComponent {
                    name: "funding".into(),
                    weight: 0.5,
                    rate: m.rate + 0.02,
                },
            ],
        };
        let structured = solve_rho_structured(&m, &payoff, &grid(), &a, &b, &ma).unwrap();
        let risky =
            solve_default_risky(&m, &payoff, &grid(), &a, &b, &CollateralSpec::none()).unwrap();
        let x = structured.at_origin(100.0).unwrap().0;
        let y = risky.at_origin(100.0).unwrap().0;
        assert!((x - y).abs() > 1e-4, "wedge should be material, got {}", x - y);
    }

    #[test]
    fn rho_structured_no_default_risk_is_default_free() {
        let m = mkt();
        let payoff = PayoffSpec::call(100.0, 1.0);
        let riskless = CounterpartyParams::riskless();
        let ma = MoneyAccountStructure::risk_free(m.rate);
        let structured =
            solve_rho_structured(&m, &payoff, &grid(), &riskless, &riskless, &ma).unwrap();
        let free = solve_default_free(&m, &payoff, &grid(), m.rate).unwrap();
        let x = structured.at_origin(100.0).unwrap().0;
        let y = free.at_origin(100.0).unwrap().0;
        assert!((x - y).abs() < 1e-9 * y);
    }

    #[test]
    fn forward_delta_is_discounted_dividend_factor() {
        let m = mkt();
        let payoff = PayoffSpec::forward(100.0, 1.0);
        let surf = solve_default_free(&m, &payoff, &grid(), m.rate).unwrap();
        for &t in &[0.0, 0.3, 0.7] {
            let tau = 1.0 - t;
            let expect = (-m.dividend_yield * tau).exp();
            for &s in &[80.0, 100.0, 125.0] {
                let (_, d, _) = surf.greeks(t, s).unwrap();
                assert!(
                    (d - expect).abs() < 1e-4,
                    "delta {d} vs {expect} at t={t}, s={s}"
                );
            }
        }
    }

    #[test]
    fn deep_itm_call_delta_approaches_dividend_factor() {
        let m = mkt();
        let payoff = PayoffSpec::call(100.0, 1.0);
        // Wider grid so 3x strike is interior.
        let g = GridSpec {
            n_space: 401,
            n_time: 200,
            width_sigmas: 7.0,
            ..GridSpec::default()
        };
        let surf = solve_default_free(&m, &payoff, &g, m.rate).unwrap();
        let (_, d, _) = surf.greeks(0.0, 300.0).unwrap();
        let expect = (-m.dividend_yield * 1.0f64).exp();
        assert!((d - expect).abs() < 1e-3, "delta {d} vs {expect}");
    }

    #[test]
    fn atm_call_gamma_positive() {
        let m = mkt();
        let payoff = PayoffSpec::call(100.0, 1.0);
        let surf = solve_default_free(&m, &payoff, &grid(), m.rate).unwrap();
        let (_, _, g) = surf.greeks(0.0, 100.0).unwrap();
        assert!(g > 0.0);
    }

    #[test]
    fn out_of_domain_is_an_error() {
        let m = mkt();
        let payoff = PayoffSpec::call(100.0, 1.0);
        let surf = solve_default_free(&m, &payoff, &grid(), m.rate).unwrap();
        assert!(matches!(
            surf.greeks(0.5, 1.0),
            Err(PdeError::OutOfDomain { .. })
        ));
        assert!(matches!(
            surf.greeks(2.0, 100.0),
            Err(PdeError::OutOfDomain { .. })
        ));
        let ((_, _, _), clamped) = surf.greeks_clamped(0.5, 1.0);
        assert!(clamped);
    }

    #[test]
    fn csv_round_trip_header() {
        let m = mkt();
        let payoff = PayoffSpec::call(100.0, 1.0);
        let g = GridSpec::new(50, 50);
        let surf = solve_default_free(&m, &payoff, &g, m.rate).unwrap();
        let mut buf = Vec::new();
        surf.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,S,V,delta,gamma\n"));
        assert_eq!(text.lines().count(), 1 + 51 * 50);
    }

    #[test]
    fn pari_passu_forward_prices_between_extremes() {
        // Sanity on the signed-exposure source: a pari-passu forward must be
        // cheaper than default-free when the claim side dominates.
        let m = mkt();
        let payoff = PayoffSpec::forward(70.0, 1.0);
        let a = cpty(0.02, 0.4, 0.4);
        let b = cpty(0.08, 0.4, 0.4);
        let pp = solve_general_closeout(
            &m,
            &payoff,
            &grid(),
            &a,
            &b,
            CloseoutRule::PariPassuNetted,
            &CollateralSpec::none(),
        )
        .unwrap()
        .at_origin(100.0)
        .unwrap()
        .0;
        let free = solve_default_free(&m, &payoff, &grid(), m.rate)
            .unwrap()
            .at_origin(100.0)
            .unwrap()
            .0;
        assert!(pp < free, "claim-heavy forward must price below default-free");
    }
}
