//! Market mechanisms. All of them consume role-masked offers and return a
//! [`ClearingResult`] whose utilities are measured at submitted prices.

use crate::domain::{AgentId, EvAgent, Offer, Role, SimConfig, ENERGY_EPS};
use crate::optim::{solve_allocation, AllocationProblem, OptimError, PairSurplus, SolverOptions, DEFAULT_EPSILON};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ClearingError {
    #[error("bid {bid} is below ask {ask}")]
    InfeasiblePair { bid: f64, ask: f64 },
    #[error("unknown mechanism '{0}' (expected nash, greedy_avg, double_auction or learning_only)")]
    UnknownMechanism(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trade {
    pub buyer: AgentId,
    pub seller: AgentId,
    pub quantity: f64,
    pub price: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClearingResult {
    pub trades: Vec<Trade>,
    /// Every active buyer, zero when unmatched.
    pub buyer_utils: BTreeMap<AgentId, f64>,
    /// Every active seller, zero when unmatched.
    pub seller_utils: BTreeMap<AgentId, f64>,
    pub matched: BTreeSet<AgentId>,
}

impl ClearingResult {
    pub fn utility(&self, id: AgentId) -> f64 {
        self.buyer_utils
            .get(&id)
            .or_else(|| self.seller_utils.get(&id))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn volume(&self) -> f64 {
        self.trades.iter().map(|t| t.quantity).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.trades.is_empty()
    }

    /// Utilities of all active traders, buyers first, each side in id order.
    pub fn active_utilities(&self) -> Vec<f64> {
        self.buyer_utils
            .values()
            .chain(self.seller_utils.values())
            .copied()
            .collect()
    }
}

/// Symmetric bilateral bargaining price: the bid-ask midpoint.
pub fn nash_price(bid: f64, ask: f64) -> Result<f64, ClearingError> {
    if bid < ask {
        return Err(ClearingError::InfeasiblePair { bid, ask });
    }
    Ok(0.5 * (bid + ask))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    Nash,
    GreedyAvg,
    DoubleAuction,
    LearningOnly,
}

impl Mechanism {
    pub const ALL: [Mechanism; 4] = [
        Mechanism::Nash,
        Mechanism::GreedyAvg,
        Mechanism::DoubleAuction,
        Mechanism::LearningOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mechanism::Nash => "nash",
            Mechanism::GreedyAvg => "greedy_avg",
            Mechanism::DoubleAuction => "double_auction",
            Mechanism::LearningOnly => "learning_only",
        }
    }

    pub fn clear<R: Rng>(self, offers: &[Offer], agents: &[EvAgent], cfg: &SimConfig, rng: &mut R) -> ClearingResult {
        match self {
            Mechanism::Nash => clear_nash(offers, agents, cfg),
            Mechanism::GreedyAvg => clear_greedy_average(offers, agents, cfg, rng),
            Mechanism::DoubleAuction => clear_double_auction(offers, agents, cfg),
            Mechanism::LearningOnly => clear_learning_only(offers, agents, cfg, rng),
        }
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mechanism {
    type Err = ClearingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mechanism::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| ClearingError::UnknownMechanism(s.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Participant {
    id: AgentId,
    price: f64,
    cap: f64,
}

/// Active offers split by side with their effective energy caps.
#[derive(Clone, Debug, Default)]
struct Market {
    buyers: Vec<Participant>,
    sellers: Vec<Participant>,
}

impl Market {
    /// A buyer's cap is `min(deficit, offered, P_max * dt)`, a seller's
    /// `min(avail, offered, P_max * dt)`. Offers whose agent is not in
    /// `agents` are capped by the offered quantity alone.
    fn build(offers: &[Offer], agents: &[EvAgent], cfg: &SimConfig) -> Market {
        let lookup = |id: AgentId| agents.iter().find(|a| a.id == id);
        let mut m = Market::default();
        for o in offers.iter().filter(|o| o.is_active()) {
            let cap = match lookup(o.agent_id) {
                Some(a) => o
                    .quantity
                    .min(a.role_cap_kwh())
                    .min(a.power_cap_kwh(cfg.dt_hours)),
                None => o.quantity,
            };
            if cap <= ENERGY_EPS {
                continue;
            }
            let p = Participant {
                id: o.agent_id,
                price: o.price,
                cap,
            };
            match o.role {
                Role::Buyer => m.buyers.push(p),
                Role::Seller => m.sellers.push(p),
                Role::Neutral => {}
            }
        }
        m.buyers.sort_by_key(|p| p.id);
        m.sellers.sort_by_key(|p| p.id);
        m
    }

    fn feasible_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, b) in self.buyers.iter().enumerate() {
            for (j, s) in self.sellers.iter().enumerate() {
                if b.price >= s.price {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Fills in utilities at submitted prices for every participant.
    fn finish(&self, trades: Vec<Trade>) -> ClearingResult {
        let mut result = ClearingResult {
            buyer_utils: self.buyers.iter().map(|b| (b.id, 0.0)).collect(),
            seller_utils: self.sellers.iter().map(|s| (s.id, 0.0)).collect(),
            ..ClearingResult::default()
        };
        let bid: BTreeMap<AgentId, f64> = self.buyers.iter().map(|b| (b.id, b.price)).collect();
        let ask: BTreeMap<AgentId, f64> = self.sellers.iter().map(|s| (s.id, s.price)).collect();
        for t in &trades {
            *result.buyer_utils.get_mut(&t.buyer).expect("buyer in market") += (bid[&t.buyer] - t.price) * t.quantity;
            *result.seller_utils.get_mut(&t.seller).expect("seller in market") +=
                (t.price - ask[&t.seller]) * t.quantity;
            result.matched.insert(t.buyer);
            result.matched.insert(t.seller);
        }
        result.trades = trades;
        result
    }
}

/// Solver budget per clearing. The barrier start is already within about 1e-7
/// of the optimal objective on large markets; a long gradient tail past that
/// buys nothing, so the best iterate is used when the budget runs out.
pub const CLEARING_SOLVER: SolverOptions = SolverOptions {
    tol: 1e-6,
    max_iter: 50,
};

/// Midpoint prices per pair, quantities from the log-Nash-welfare program.
pub fn clear_nash(offers: &[Offer], agents: &[EvAgent], cfg: &SimConfig) -> ClearingResult {
    let market = Market::build(offers, agents, cfg);
    let pairs = market.feasible_pairs();
    if pairs.is_empty() {
        return market.finish(Vec::new());
    }
    let prob = AllocationProblem {
        buyer_caps: market.buyers.iter().map(|b| b.cap).collect(),
        seller_caps: market.sellers.iter().map(|s| s.cap).collect(),
        pairs: pairs
            .iter()
            .map(|&(i, j)| PairSurplus {
                buyer: i,
                seller: j,
                surplus: market.buyers[i].price - market.sellers[j].price,
            })
            .collect(),
        epsilon: DEFAULT_EPSILON,
    };
    let flows = match solve_allocation(&prob, CLEARING_SOLVER) {
        Ok(a) => a.flows,
        Err(OptimError::NonConvergence { best }) => best.flows,
        Err(_) => return market.finish(Vec::new()),
    };
    let trades = pairs
        .iter()
        .zip(flows)
        .filter(|(_, x)| *x > ENERGY_EPS)
        .map(|(&(i, j), x)| {
            let (b, s) = (&market.buyers[i], &market.sellers[j]);
            Trade {
                buyer: b.id,
                seller: s.id,
                quantity: x,
                price: nash_price(b.price, s.price).expect("feasible pair"),
            }
        })
        .collect();
    market.finish(trades)
}

fn greedy_midpoint<R: Rng>(market: &Market, rng: &mut R) -> Vec<Trade> {
    let mut pairs = market.feasible_pairs();
    pairs.shuffle(rng);
    let mut buyer_left: Vec<f64> = market.buyers.iter().map(|b| b.cap).collect();
    let mut seller_left: Vec<f64> = market.sellers.iter().map(|s| s.cap).collect();
    let mut trades = Vec::new();
    for (i, j) in pairs {
        let x = buyer_left[i].min(seller_left[j]);
        if x <= ENERGY_EPS {
            continue;
        }
        buyer_left[i] -= x;
        seller_left[j] -= x;
        let (b, s) = (&market.buyers[i], &market.sellers[j]);
        trades.push(Trade {
            buyer: b.id,
            seller: s.id,
            quantity: x,
            price: nash_price(b.price, s.price).expect("feasible pair"),
        });
    }
    trades
}

/// Midpoint prices, quantities filled greedily over feasible pairs in random order.
pub fn clear_greedy_average<R: Rng>(offers: &[Offer], agents: &[EvAgent], cfg: &SimConfig, rng: &mut R) -> ClearingResult {
    let market = Market::build(offers, agents, cfg);
    let trades = greedy_midpoint(&market, rng);
    market.finish(trades)
}

/// Uses the greedy midpoint engine; the learning-only baseline differs only in its reward.
pub fn clear_learning_only<R: Rng>(offers: &[Offer], agents: &[EvAgent], cfg: &SimConfig, rng: &mut R) -> ClearingResult {
    clear_greedy_average(offers, agents, cfg, rng)
}

/// Rank matching of descending bids against ascending asks. Every matched
/// rank trades `min(buyer cap, seller cap)` at the single price set by the
/// marginal (last matched) pair. Residual quantities are not re-matched.
pub fn clear_double_auction(offers: &[Offer], agents: &[EvAgent], cfg: &SimConfig) -> ClearingResult {
    let market = Market::build(offers, agents, cfg);
    let mut bids: Vec<&Participant> = market.buyers.iter().collect();
    let mut asks: Vec<&Participant> = market.sellers.iter().collect();
    bids.sort_by(|a, b| b.price.total_cmp(&a.price).then(a.id.cmp(&b.id)));
    asks.sort_by(|a, b| a.price.total_cmp(&b.price).then(a.id.cmp(&b.id)));
    let ranks = bids
        .iter()
        .zip(&asks)
        .take_while(|(b, s)| b.price >= s.price)
        .count();
    if ranks == 0 {
        return market.finish(Vec::new());
    }
    let price = 0.5 * (bids[ranks - 1].price + asks[ranks - 1].price);
    let trades = bids
        .iter()
        .zip(&asks)
        .take(ranks)
        .map(|(b, s)| Trade {
            buyer: b.id,
            seller: s.id,
            quantity: b.cap.min(s.cap),
            price,
        })
        .collect();
    market.finish(trades)
}
