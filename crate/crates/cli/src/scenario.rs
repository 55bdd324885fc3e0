//! Scenario file schema and validation.

use defrisk::hedge::BondPortfolio;
use defrisk::model::{
    CloseoutRule, CollateralMode, CollateralSpec, CounterpartyParams, MarketParams,
    MoneyAccountComponent, MoneyAccountStructure, PayoffKind, PayoffSpec,
};
use defrisk::montecarlo::McConfig;
use defrisk::pde::{GridSpec, PriceSurface};
use defrisk::replication::{
    preset_money_account, EpsilonRule, MoneyAccountPreset, PresetState, SimConfig, StrategySpec,
};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Pricing/simulation engines a scenario may request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    Pde,
    Analytic,
    Mc,
    Sim,
}

/// Two counterparties of the trade.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Parties {
    pub a: CounterpartyParams,
    pub b: CounterpartyParams,
}

/// Money account: explicit components, or a named preset struck at the
/// scenario's time-0 state.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MoneyAccountConfig {
    Components(Vec<MoneyAccountComponent>),
    Preset(PresetConfig),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetConfig {
    pub name: MoneyAccountPreset,
    pub repo_rate: f64,
    pub funding_rate: f64,
    pub collateral_rate: f64,
}

/// Hedging strategy of the sim engine.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum StrategyConfig {
    FullReplication,
    Collateralized { k: f64 },
    Bk13 { epsilon: EpsilonRule },
    PortfolioReplication { composition_a: BondPortfolio },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSectionConfig {
    #[serde(flatten)]
    pub config: SimConfig,
    pub strategy: StrategyConfig,
}

impl SimSectionConfig {
    pub fn strategy_spec(&self) -> StrategySpec {
        match &self.strategy {
            StrategyConfig::FullReplication => StrategySpec::FullReplication,
            StrategyConfig::Collateralized { k } => StrategySpec::Collateralized { k: *k },
            StrategyConfig::Bk13 { epsilon } => StrategySpec::Bk13 { epsilon: *epsilon },
            StrategyConfig::PortfolioReplication { composition_a } => {
                StrategySpec::portfolio_replication(composition_a.clone())
            }
        }
    }

    pub fn is_bk13(&self) -> bool {
        matches!(self.strategy, StrategyConfig::Bk13 { .. })
    }
}

/// One scenario: market, trade, credit, collateral, closeout, money
/// account and per-engine configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub id: String,
    pub market: MarketParams,
    pub payoff: PayoffSpec,
    pub parties: Parties,
    #[serde(default = "default_collateral")]
    pub collateral: CollateralSpec,
    #[serde(default = "default_closeout")]
    pub closeout: CloseoutRule,
    #[serde(default)]
    pub money_account: Option<MoneyAccountConfig>,
    pub engines: Vec<Engine>,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub mc: Option<McConfig>,
    #[serde(default)]
    pub sim: Option<SimSectionConfig>,
}

fn default_collateral() -> CollateralSpec {
    CollateralSpec::none()
}

fn default_closeout() -> CloseoutRule {
    CloseoutRule::Proportional
}

impl Scenario {
    /// The proportional collateralization level, 0 outside that mode.
    pub fn proportional_k(&self) -> f64 {
        match self.collateral.mode {
            CollateralMode::ProportionalK { k } => k,
            _ => 0.0,
        }
    }

    /// Effective-discount estimator applies to proportional closeouts
    /// without schedules.
    pub fn wants_effective_discount(&self) -> bool {
        self.closeout == CloseoutRule::Proportional
            && !matches!(self.collateral.mode, CollateralMode::FixedSchedule { .. })
    }

    /// Loss-integral estimator needs a surface; run it whenever a grid is
    /// configured.
    pub fn wants_loss_integral(&self) -> bool {
        self.engines.contains(&Engine::Mc) && self.grid.is_some()
    }

    pub fn grid_spec(&self) -> Result<GridSpec, CliError> {
        self.grid
            .ok_or_else(|| CliError::Input("grid: required by the requested engines".to_string()))
    }

    /// Materializes the money account, striking presets at the surface's
    /// time-0 state.
    pub fn money_account_structure(
        &self,
        surface: &PriceSurface,
    ) -> Result<Option<MoneyAccountStructure>, CliError> {
        match &self.money_account {
            None => Ok(None),
            Some(MoneyAccountConfig::Components(components)) => {
                Ok(Some(MoneyAccountStructure {
                    components: components.clone(),
                }))
            }
            Some(MoneyAccountConfig::Preset(p)) => {
                let (value, delta, _) = surface
                    .at_origin(self.market.spot)
                    .map_err(CliError::input_from)?;
                let collateral0 = self
                    .collateral
                    .effective_collateral(defrisk::model::Party::B, 0.0, value);
                let state = PresetState {
                    value,
                    collateral: collateral0,
                    delta,
                    spot: self.market.spot,
                    risk_free_rate: self.market.rate,
                    repo_rate: p.repo_rate,
                    funding_rate: p.funding_rate,
                    collateral_rate: p.collateral_rate,
                    delta_v_b: -(1.0 - self.parties.b.derivative_recovery) * value,
                };
                let ma = preset_money_account(p.name, &state).map_err(CliError::input_from)?;
                Ok(Some(ma))
            }
        }
    }

    /// Cross-field validation with dotted field paths in messages.
    pub fn validate(&self) -> Result<(), String> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(format!(
                "schema_version: expected {SCHEMA_VERSION}, got {}",
                self.schema_version
            ));
        }
        if self.id.is_empty() {
            return Err("id: must not be empty".to_string());
        }
        self.market.validate().map_err(|e| e.to_string())?;
        self.payoff.validate().map_err(|e| e.to_string())?;
        self.parties.a.validate("parties.a").map_err(|e| e.to_string())?;
        self.parties.b.validate("parties.b").map_err(|e| e.to_string())?;
        self.collateral.validate().map_err(|e| e.to_string())?;
        if self.engines.is_empty() {
            return Err("engines: at least one engine required".to_string());
        }

        let has = |e: Engine| self.engines.contains(&e);
        if has(Engine::Pde) && self.grid.is_none() {
            return Err("grid: required when the pde engine is requested".to_string());
        }
        if has(Engine::Sim) {
            if self.sim.is_none() {
                return Err("sim: required when the sim engine is requested".to_string());
            }
            if self.grid.is_none() {
                return Err("grid: required when the sim engine is requested".to_string());
            }
        }
        if has(Engine::Mc) {
            match &self.mc {
                None => return Err("mc: required when the mc engine is requested".to_string()),
                Some(cfg) => {
                    cfg.validate().map_err(|e| e.to_string())?;
                    if cfg.n_paths < 1000 {
                        return Err("mc.n_paths: reported runs need at least 1000 paths".to_string());
                    }
                }
            }
            if matches!(self.collateral.mode, CollateralMode::FixedSchedule { .. })
                && self.grid.is_none()
            {
                return Err(
                    "grid: schedule collateral prices through the loss integral, \
                     which needs a surface"
                        .to_string(),
                );
            }
        }
        if has(Engine::Analytic) {
            if self.closeout != CloseoutRule::Proportional {
                return Err(
                    "engines: analytic closed form exists only for the proportional closeout"
                        .to_string(),
                );
            }
            if matches!(self.collateral.mode, CollateralMode::FixedSchedule { .. }) {
                return Err(
                    "engines: analytic closed form exists only for proportional collateral"
                        .to_string(),
                );
            }
            if matches!(self.payoff.kind, PayoffKind::PiecewiseLinear { .. }) {
                return Err(
                    "engines: analytic closed form needs a call, put or forward payoff"
                        .to_string(),
                );
            }
        }
        if self.closeout == CloseoutRule::PariPassuNetted
            && !matches!(self.collateral.mode, CollateralMode::None)
        {
            return Err(
                "collateral.mode: pari_passu_netted closeout prices the uncollateralized claim"
                    .to_string(),
            );
        }
        if let Some(sim) = &self.sim {
            if sim.config.dt <= 0.0 || sim.config.horizon <= 0.0 {
                return Err("sim.dt: dt and horizon must be > 0".to_string());
            }
            if sim.config.horizon > self.payoff.maturity + 1e-12 {
                return Err("sim.horizon: must not exceed payoff.maturity".to_string());
            }
            if let StrategyConfig::Collateralized { k } = sim.strategy {
                if k < 0.0 {
                    return Err("sim.strategy.collateralized.k: must be >= 0".to_string());
                }
            }
        }
        Ok(())
    }
}

impl CliError {
    pub(crate) fn input_from(e: impl std::fmt::Display) -> Self {
        CliError::Input(e.to_string())
    }
}
