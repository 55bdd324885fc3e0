//! Benchmarks of the data-parallel engines against a single-thread rayon
//! pool, plus the PDE solver at production grid sizes.
//!
//! `cargo bench` runs the parallel build; `cargo bench --no-default-features`
//! exercises the sequential fallback code path instead.

use criterion::{criterion_group, criterion_main, Criterion};
use defrisk::model::{
    CollateralSpec, CounterpartyParams, MarketParams, MoneyAccountStructure, PayoffSpec,
};
use defrisk::montecarlo::{mc_effective_discount, mc_loss_integral, McConfig};
use defrisk::pde::{solve_default_risky, GridSpec};
use defrisk::replication::{simulate, SimConfig, StrategySpec};

fn mkt() -> MarketParams {
    MarketParams {
        rate: 0.02,
        drift: 0.05,
        sigma: 0.2,
        dividend_yield: 0.0,
        spot: 100.0,
    }
}

fn cpty(lambda: f64) -> CounterpartyParams {
    CounterpartyParams {
        hazard_rate: lambda,
        bond_recovery: 0.4,
        derivative_recovery: 0.4,
        bond_price: 0.97,
    }
}

#[cfg(feature = "parallel")]
fn single_thread_pool() -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
}

fn bench_mc(c: &mut Criterion) {
    let m = mkt();
    let payoff = PayoffSpec::call(100.0, 1.0);
    let a = cpty(0.05);
    let b = cpty(0.03);
    let cfg = McConfig {
        n_paths: 50_000,
        steps_per_year: 50,
        seed: 7,
        antithetic: true,
    };

    let mut group = c.benchmark_group("mc_effective_discount");
    group.bench_function("parallel", |bench| {
        bench.iter(|| mc_effective_discount(&m, &payoff, &a, &b, 0.0, &cfg).unwrap())
    });
    #[cfg(feature = "parallel")]
    group.bench_function("single_thread", |bench| {
        let pool = single_thread_pool();
        bench.iter(|| {
            pool.install(|| mc_effective_discount(&m, &payoff, &a, &b, 0.0, &cfg).unwrap())
        })
    });
    group.finish();
}

fn bench_mc_loss_integral(c: &mut Criterion) {
    let m = mkt();
    let payoff = PayoffSpec::call(100.0, 1.0);
    let a = cpty(0.05);
    let b = cpty(0.03);
    let coll = CollateralSpec::none();
    let surface =
        solve_default_risky(&m, &payoff, &GridSpec::new(201, 200), &a, &b, &coll).unwrap();
    let cfg = McConfig {
        n_paths: 20_000,
        steps_per_year: 50,
        seed: 7,
        antithetic: false,
    };

    let mut group = c.benchmark_group("mc_loss_integral");
    group.bench_function("parallel", |bench| {
        bench.iter(|| mc_loss_integral(&m, &payoff, &a, &b, &coll, &surface, &cfg).unwrap())
    });
    #[cfg(feature = "parallel")]
    group.bench_function("single_thread", |bench| {
        let pool = single_thread_pool();
        bench.iter(|| {
            pool.install(|| mc_loss_integral(&m, &payoff, &a, &b, &coll, &surface, &cfg).unwrap())
        })
    });
    group.finish();
}

fn bench_replication_sim(c: &mut Criterion) {
    let m = mkt();
    let payoff = PayoffSpec::call(100.0, 1.0);
    let a = cpty(0.05);
    let b = cpty(0.03);
    let surface = solve_default_risky(
        &m,
        &payoff,
        &GridSpec::new(201, 200),
        &a,
        &b,
        &CollateralSpec::none(),
    )
    .unwrap();
    let ma = MoneyAccountStructure::risk_free(m.rate);
    let cfg = SimConfig::new(1.0 / 250.0, 1.0, 5_000, 11);

    let mut group = c.benchmark_group("replication_sim");
    group.sample_size(10);
    group.bench_function("parallel", |bench| {
        bench.iter(|| {
            simulate(
                &m,
                &payoff,
                &a,
                &b,
                &StrategySpec::FullReplication,
                &ma,
                &surface,
                &cfg,
            )
            .unwrap()
        })
    });
    #[cfg(feature = "parallel")]
    group.bench_function("single_thread", |bench| {
        let pool = single_thread_pool();
        bench.iter(|| {
            pool.install(|| {
                simulate(
                    &m,
                    &payoff,
                    &a,
                    &b,
                    &StrategySpec::FullReplication,
                    &ma,
                    &surface,
                    &cfg,
                )
                .unwrap()
            })
        })
    });
    group.finish();
}

fn bench_pde(c: &mut Criterion) {
    let m = mkt();
    let payoff = PayoffSpec::call(100.0, 1.0);
    let a = cpty(0.05);
    let b = cpty(0.03);
    let mut group = c.benchmark_group("pde_solve");
    group.sample_size(20);
    for (ns, nt) in [(201usize, 200usize), (401, 400)] {
        group.bench_function(format!("{ns}x{nt}"), |bench| {
            let grid = GridSpec::new(ns, nt);
            bench.iter(|| {
                solve_default_risky(&m, &payoff, &grid, &a, &b, &CollateralSpec::none()).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(
    benches,
    bench_mc,
    bench_mc_loss_integral,
    bench_replication_sim,
    bench_pde
);
criterion_main!(benches);
