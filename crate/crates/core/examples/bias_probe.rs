// scratch probe, not part of the repo
use defrisk::analytic::*;
use defrisk::model::*;
use defrisk::pde::*;

fn main() {
    let m = MarketParams { rate: 0.02, drift: 0.05, sigma: 0.2, dividend_yield: 0.0, spot: 100.0 };
    // chi = R per party (pari passu)
    let a = CounterpartyParams { hazard_rate: 0.02, bond_recovery: 0.4, derivative_recovery: 0.4, bond_price: 0.97 };
    let b = CounterpartyParams { hazard_rate: 0.08, bond_recovery: 0.4, derivative_recovery: 0.4, bond_price: 0.95 };
    let grid = GridSpec { n_space: 401, n_time: 400, width_sigmas: 6.0, ..GridSpec::default() };
    for strike in [70.0, 100.0, 130.0] {
        let fwd = PayoffSpec::forward(strike, 1.0);
        let surf = solve_general_closeout(&m, &fwd, &grid, &a, &b, CloseoutRule::PariPassuNetted, &CollateralSpec::none()).unwrap();
        let bilateral = surf.at_origin(100.0).unwrap().0;
        let call = unilateral_price(&m, &PayoffSpec::call(strike, 1.0), &b).unwrap();
        let put = unilateral_price(&m, &PayoffSpec::put(strike, 1.0), &a).unwrap();
        let split = call - put;
        println!("K={strike}: bilateral {:+.6} split {:+.6} diff {:+.6} ({:.4}% of notional)",
            bilateral, split, bilateral - split, 100.0 * (bilateral - split).abs() / 100.0);
    }
}
