//! Pricing and hedge-verification engine for default-risky, collateralized
//! derivatives.
//!
//! The crate prices bilateral default-risky contracts three independent
//! ways and verifies they agree:
//!
//! * [`pde`] — finite-difference solver for the generalized pricing
//!   operator, specialized to the default-free, default-risky, structured
//!   money-account and general-closeout equations;
//! * [`analytic`] — closed forms for constant-parameter cases plus a
//!   quadrature oracle that is independent of the closed forms;
//! * [`montecarlo`] — risk-neutral path estimators for both
//!   representations of the risky price: the effective-discount form and
//!   the loss-integral form fed by a PDE surface.
//!
//! On top of the pricers, [`hedge`] computes replication weights (full
//! replication, collateral-scaled, own-bond funding strategies and
//! multi-issue bond portfolios) and [`replication`] runs a discrete-time
//! self-financing portfolio simulation that measures drift and
//! default-jump residuals, detecting when a money-account structure or an
//! under-hedged bond leg opens an arbitrage.
//!
//! Monte Carlo paths and simulation paths are data-parallel via rayon
//! (feature `parallel`, on by default) with per-path RNG substreams and
//! tree aggregation, so results are bit-identical to the sequential build.

/// Engine version, embedded in reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod analytic;
pub mod exec;
pub mod hedge;
pub mod model;
pub mod montecarlo;
pub mod pde;
pub mod replication;

pub use model::{
    CloseoutRule, CollateralMode, CollateralSpec, CounterpartyParams, MarketParams,
    MoneyAccountStructure, Party, PayoffKind, PayoffSpec, Schedule,
};
pub use pde::{GridSpec, PriceSurface};
