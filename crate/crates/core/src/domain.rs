//! Shared value types: vehicles, roles, offers and the parameter bundles
//! that drive valuations and the fleet simulator.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Tolerance for energy comparisons at role boundaries and capacity checks.
pub const ENERGY_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub u64);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Buyer,
    Seller,
    Neutral,
}

impl Role {
    pub fn one_hot(self) -> [f64; 3] {
        match self {
            Role::Buyer => [1.0, 0.0, 0.0],
            Role::Seller => [0.0, 1.0, 0.0],
            Role::Neutral => [0.0, 0.0, 1.0],
        }
    }

    /// Inverse of [`Role::one_hot`]; picks the largest component.
    pub fn from_one_hot(v: &[f64]) -> Role {
        if v[0] >= v[1] && v[0] >= v[2] {
            Role::Buyer
        } else if v[1] >= v[2] {
            Role::Seller
        } else {
            Role::Neutral
        }
    }

    pub fn is_active(self) -> bool {
        !matches!(self, Role::Neutral)
    }
}

/// One parked vehicle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvAgent {
    pub id: AgentId,
    pub battery_kwh: f64,
    pub capacity_kwh: f64,
    pub need_kwh: f64,
    pub buffer_kwh: f64,
    pub max_power_kw: f64,
    pub entry_step: u32,
    pub duration_steps: u32,
    pub base_urgency: f64,
    /// Grid-arbitrage factor in `[0, 1]`.
    pub rho: f64,
    /// Volume-weighted price of the most recent trading step, 0 before the first trade.
    pub last_price: f64,
}

impl EvAgent {
    pub fn role(&self) -> Role {
        classify_role(self)
    }

    /// Energy shortage; zero for anyone who is not a buyer.
    pub fn deficit_kwh(&self) -> f64 {
        match self.role() {
            Role::Buyer => self.need_kwh - self.battery_kwh,
            _ => 0.0,
        }
    }

    /// Sellable surplus above need plus buffer; zero for anyone who is not a seller.
    pub fn avail_kwh(&self) -> f64 {
        match self.role() {
            Role::Seller => self.battery_kwh - self.need_kwh - self.buffer_kwh,
            _ => 0.0,
        }
    }

    /// Role-dependent energy bound used by action masking.
    pub fn role_cap_kwh(&self) -> f64 {
        match self.role() {
            Role::Buyer => self.deficit_kwh(),
            Role::Seller => self.avail_kwh(),
            Role::Neutral => 0.0,
        }
    }

    /// Per-step energy limit from the charger rating.
    pub fn power_cap_kwh(&self, dt_hours: f64) -> f64 {
        self.max_power_kw * dt_hours
    }

    pub fn departure_step(&self) -> u32 {
        self.entry_step + self.duration_steps
    }

    /// Steps left before departure, counting the current one.
    pub fn remaining_steps(&self, step: u32) -> u32 {
        self.departure_step().saturating_sub(step)
    }

    pub fn is_parked(&self, step: u32) -> bool {
        self.entry_step <= step && step < self.departure_step()
    }
}

/// Buyer below need, seller above need plus buffer, neutral in between.
/// Boundary ties resolve to neutral.
pub fn classify_role(agent: &EvAgent) -> Role {
    if agent.need_kwh - agent.battery_kwh > ENERGY_EPS {
        Role::Buyer
    } else if agent.battery_kwh - agent.need_kwh - agent.buffer_kwh > ENERGY_EPS {
        Role::Seller
    } else {
        Role::Neutral
    }
}

/// Coefficients of the buyer willingness-to-pay and seller reserve-cost models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValuationParams {
    pub v_base_buy: f64,
    pub beta_urgency: f64,
    pub gamma_opportunity: f64,
    pub c_base_sell: f64,
    pub v_battery: f64,
    pub c_grid: f64,
    pub delta_degrad: f64,
    pub lambda_time: f64,
}

impl Default for ValuationParams {
    fn default() -> Self {
        Self {
            v_base_buy: 0.20,
            beta_urgency: 0.10,
            gamma_opportunity: 0.15,
            c_base_sell: 0.12,
            v_battery: 0.05,
            c_grid: 0.28,
            delta_degrad: 0.02,
            lambda_time: 0.5,
        }
    }
}

/// Simulator settings. Ranges are `[lo, hi]` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt_hours: f64,
    pub eta: f64,
    pub price_min: f64,
    pub price_max: f64,
    pub grid_price: f64,
    /// Inclusive bounds on parking duration in steps.
    pub duration_range: (u32, u32),
    pub soc0_range: (f64, f64),
    pub need_range: (f64, f64),
    pub base_urgency_range: (f64, f64),
    pub capacity_kwh: f64,
    pub max_power_kw: f64,
    /// Safety buffer as a fraction of capacity.
    pub buffer_frac: f64,
    pub n_target: usize,
    /// Arrivals are truncated so the fleet never exceeds `population_cap_factor * n_target`.
    pub population_cap_factor: usize,
    pub steps_per_day: u32,
    pub valuation: ValuationParams,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt_hours: 0.5,
            eta: 0.95,
            price_min: 0.05,
            price_max: 0.50,
            grid_price: 0.28,
            duration_range: (4, 12),
            soc0_range: (0.2, 0.9),
            need_range: (0.5, 0.95),
            base_urgency_range: (0.1, 0.3),
            capacity_kwh: 75.0,
            max_power_kw: 11.0,
            buffer_frac: 0.05,
            n_target: 6,
            population_cap_factor: 2,
            steps_per_day: 16,
            valuation: ValuationParams::default(),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("price band is empty: min {min} >= max {max}")]
    EmptyPriceBand { min: f64, max: f64 },
    #[error("charging efficiency {0} outside (0, 1]")]
    Efficiency(f64),
    #[error("invalid range for {name}: ({lo}, {hi})")]
    Range { name: &'static str, lo: f64, hi: f64 },
    #[error("{0} must be nonnegative")]
    Negative(&'static str),
}

impl SimConfig {
    pub fn with_population(mut self, n_target: usize) -> Self {
        self.n_target = n_target;
        self
    }

    /// Poisson arrival rate per step that keeps the mean population at `n_target`.
    pub fn arrival_rate(&self) -> f64 {
        self.n_target as f64 / 8.0
    }

    pub fn population_cap(&self) -> usize {
        (self.population_cap_factor * self.n_target).max(1)
    }

    pub fn price_mid(&self) -> f64 {
        0.5 * (self.price_min + self.price_max)
    }

    pub fn clamp_price(&self, p: f64) -> f64 {
        p.clamp(self.price_min, self.price_max)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.price_min < self.price_max) {
            return Err(ConfigError::EmptyPriceBand {
                min: self.price_min,
                max: self.price_max,
            });
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(ConfigError::Efficiency(self.eta));
        }
        let ranges = [
            ("soc0_range", self.soc0_range),
            ("need_range", self.need_range),
            ("base_urgency_range", self.base_urgency_range),
        ];
        for (name, (lo, hi)) in ranges {
            if !(lo <= hi) || lo < 0.0 {
                return Err(ConfigError::Range { name, lo, hi });
            }
        }
        let (dlo, dhi) = self.duration_range;
        if dlo < 1 || dlo > dhi {
            return Err(ConfigError::Range {
                name: "duration_range",
                lo: dlo as f64,
                hi: dhi as f64,
            });
        }
        if self.need_range.1 > 1.0 || self.need_range.0 <= 0.0 {
            return Err(ConfigError::Range {
                name: "need_range",
                lo: self.need_range.0,
                hi: self.need_range.1,
            });
        }
        let v = &self.valuation;
        let named = [
            ("v_base_buy", v.v_base_buy),
            ("beta_urgency", v.beta_urgency),
            ("gamma_opportunity", v.gamma_opportunity),
            ("c_base_sell", v.c_base_sell),
            ("v_battery", v.v_battery),
            ("c_grid", v.c_grid),
            ("delta_degrad", v.delta_degrad),
            ("lambda_time", v.lambda_time),
            ("buffer_frac", self.buffer_frac),
            ("max_power_kw", self.max_power_kw),
            ("dt_hours", self.dt_hours),
        ];
        for (name, x) in named {
            if x < 0.0 {
                return Err(ConfigError::Negative(name));
            }
        }
        Ok(())
    }
}

/// A price-quantity action submitted for one step, already role-masked.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Offer {
    pub agent_id: AgentId,
    pub role: Role,
    pub price: f64,
    pub quantity: f64,
}

impl Offer {
    /// Builds an offer for `agent`, clamping the price into the band and the
    /// quantity into `[0, role cap]`. Neutral agents always offer zero.
    pub fn masked(agent: &EvAgent, price: f64, quantity: f64, cfg: &SimConfig) -> Offer {
        let role = agent.role();
        let cap = agent.role_cap_kwh();
        let quantity = match role {
            Role::Neutral => 0.0,
            _ => quantity.clamp(0.0, cap),
        };
        Offer {
            agent_id: agent.id,
            role,
            price: cfg.clamp_price(price),
            quantity,
        }
    }

    /// Same agent and price, but no energy: the no-trade default action.
    pub fn withdrawn(&self) -> Offer {
        Offer {
            quantity: 0.0,
            ..self.clone()
        }
    }

    pub fn is_active(&self) -> bool {
        self.role.is_active() && self.quantity > ENERGY_EPS
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn agent(battery: f64, need: f64, buffer: f64) -> EvAgent {
        EvAgent {
            id: AgentId(1),
            battery_kwh: battery,
            capacity_kwh: 75.0,
            need_kwh: need,
            buffer_kwh: buffer,
            max_power_kw: 11.0,
            entry_step: 0,
            duration_steps: 8,
            base_urgency: 0.2,
            rho: 0.5,
            last_price: 0.0,
        }
    }

    #[test]
    fn roles_at_examples() {
        assert_eq!(classify_role(&agent(30.0, 50.0, 5.0)), Role::Buyer);
        assert_eq!(classify_role(&agent(60.0, 50.0, 5.0)), Role::Seller);
        assert_eq!(classify_role(&agent(52.0, 50.0, 5.0)), Role::Neutral);
    }

    #[test]
    fn boundaries_are_neutral() {
        assert_eq!(classify_role(&agent(50.0, 50.0, 5.0)), Role::Neutral);
        assert_eq!(classify_role(&agent(55.0, 50.0, 5.0)), Role::Neutral);
        assert_eq!(classify_role(&agent(50.0 - 1e-12, 50.0, 5.0)), Role::Neutral);
    }

    #[test]
    fn deficit_and_avail() {
        assert_eq!(agent(30.0, 50.0, 5.0).deficit_kwh(), 20.0);
        assert_eq!(agent(60.0, 50.0, 5.0).avail_kwh(), 5.0);
        assert_eq!(agent(50.0, 50.0, 5.0).deficit_kwh(), 0.0);
        assert_eq!(agent(30.0, 50.0, 5.0).avail_kwh(), 0.0);
        assert_eq!(agent(60.0, 50.0, 5.0).deficit_kwh(), 0.0);
    }

    #[test]
    fn neutral_offer_is_masked() {
        let a = agent(52.0, 50.0, 5.0);
        let o = Offer::masked(&a, 0.9, 3.0, &SimConfig::default());
        assert_eq!(o.quantity, 0.0);
        assert_eq!(o.price, 0.5);
        let b = agent(30.0, 50.0, 5.0);
        let o = Offer::masked(&b, 0.3, 100.0, &SimConfig::default());
        assert_eq!(o.quantity, 20.0);
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig::default().validate().is_ok());
        let bad = SimConfig {
            price_min: 0.5,
            price_max: 0.5,
            ..SimConfig::default()
        };
        assert!(matches!(bad.validate(), Err(ConfigError::EmptyPriceBand { .. })));
        let bad = SimConfig {
            eta: 1.2,
            ..SimConfig::default()
        };
        assert_eq!(bad.validate(), Err(ConfigError::Efficiency(1.2)));
    }

    proptest::proptest! {
        #[test]
        fn roles_partition_and_match_energy(battery in 0.0f64..75.0, need in 1.0f64..75.0, buffer in 0.0f64..10.0) {
            let a = agent(battery, need, buffer);
            let role = a.role();
            proptest::prop_assert_eq!(a.deficit_kwh() > 0.0, role == Role::Buyer);
            proptest::prop_assert_eq!(a.avail_kwh() > 0.0, role == Role::Seller);
            proptest::prop_assert!(a.deficit_kwh() >= 0.0 && a.avail_kwh() >= 0.0);
        }
    }
}
