//! Browser bindings for the market library. Every entry point takes and
//! returns JSON strings so the page needs no generated glue beyond
//! `wasm-bindgen`'s own.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use v2v_core::clearing::{ClearingResult, Mechanism, Trade};
use v2v_core::domain::{AgentId, Offer, Role, SimConfig};
use v2v_core::env::{private_value, FleetState};
use v2v_core::metrics::MetricsRecord;
use v2v_core::optim::{solve_allocation, AllocationProblem, OptimError, SolverOptions};
use wasm_bindgen::prelude::*;

#[derive(Debug, thiserror::Error)]
pub enum DemoError {
    #[error("bad input: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Clearing(#[from] v2v_core::clearing::ClearingError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error("{0}")]
    Input(String),
}

/// One row of the offer table on the page.
#[derive(Clone, Debug, Deserialize)]
pub struct OfferInput {
    pub id: u64,
    pub role: Role,
    pub price: f64,
    pub quantity: f64,
}

#[derive(Debug, Serialize)]
pub struct MechanismOutcome {
    pub mechanism: String,
    pub trades: Vec<Trade>,
    pub utilities: Vec<(u64, f64)>,
    pub metrics: MetricsRecord,
}

/// Clears the same offer book under every mechanism. Offers are taken at
/// face value: no fleet, so caps are the offered quantities.
pub fn compare_mechanisms(offers_json: &str, seed: u64) -> Result<String, DemoError> {
    let rows: Vec<OfferInput> = serde_json::from_str(offers_json)?;
    let cfg = SimConfig::default();
    let offers: Vec<Offer> = rows
        .iter()
        .map(|r| Offer {
            agent_id: AgentId(r.id),
            role: r.role,
            price: cfg.clamp_price(r.price),
            quantity: if r.role == Role::Neutral { 0.0 } else { r.quantity.max(0.0) },
        })
        .collect();
    let out: Vec<MechanismOutcome> = Mechanism::ALL
        .iter()
        .map(|&m| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = m.clear(&offers, &[], &cfg, &mut rng);
            outcome(m, &r, &offers, 0)
        })
        .collect();
    Ok(serde_json::to_string(&out)?)
}

fn outcome(m: Mechanism, r: &ClearingResult, offers: &[Offer], step: u32) -> MechanismOutcome {
    MechanismOutcome {
        mechanism: m.name().to_string(),
        trades: r.trades.clone(),
        utilities: offers.iter().map(|o| (o.agent_id.0, r.utility(o.agent_id))).collect(),
        metrics: MetricsRecord::from_step(step, r, offers),
    }
}

#[derive(Debug, Deserialize)]
pub struct AllocationInput {
    pub buyer_caps: Vec<f64>,
    pub seller_caps: Vec<f64>,
    /// Row per buyer; `null` marks a pair that cannot trade.
    pub surplus: Vec<Vec<Option<f64>>>,
}

#[derive(Debug, Serialize)]
pub struct AllocationOutput {
    /// Dense buyer-by-seller flow matrix.
    pub flows: Vec<Vec<f64>>,
    pub objective: f64,
    pub buyer_utils: Vec<f64>,
    pub seller_utils: Vec<f64>,
    pub iterations: usize,
}

/// Solves one log-Nash-welfare allocation given caps and per-pair surplus.
pub fn solve_dense(input_json: &str) -> Result<String, DemoError> {
    let input: AllocationInput = serde_json::from_str(input_json)?;
    if input.surplus.len() != input.buyer_caps.len()
        || input.surplus.iter().any(|row| row.len() != input.seller_caps.len())
    {
        return Err(DemoError::Input("surplus must be buyers x sellers".into()));
    }
    let prob = AllocationProblem::from_dense(input.buyer_caps.clone(), input.seller_caps.clone(), &input.surplus);
    if prob.pairs.is_empty() {
        return Err(OptimError::NoFeasiblePairs.into());
    }
    let alloc = match solve_allocation(&prob, SolverOptions::default()) {
        Ok(a) => a,
        Err(OptimError::NonConvergence { best }) => best,
        Err(e) => return Err(e.into()),
    };
    let mut flows = vec![vec![0.0; input.seller_caps.len()]; input.buyer_caps.len()];
    for (p, &x) in prob.pairs.iter().zip(&alloc.flows) {
        flows[p.buyer][p.seller] = x;
    }
    let (buyer_utils, seller_utils) = prob.utilities(&alloc.flows);
    Ok(serde_json::to_string(&AllocationOutput {
        flows,
        objective: alloc.objective,
        buyer_utils,
        seller_utils,
        iterations: alloc.iterations,
    })?)
}

/// Runs one day of the fleet with truthful bidding: every agent offers its
/// private valuation and its whole role cap. Returns one metrics row per step.
pub fn simulate_day(n_agents: usize, mechanism: &str, seed: u64) -> Result<String, DemoError> {
    if !(1..=200).contains(&n_agents) {
        return Err(DemoError::Input(format!("population {n_agents} outside 1..=200")));
    }
    let m: Mechanism = mechanism.parse()?;
    let cfg = SimConfig::default().with_population(n_agents);
    let mut fleet = FleetState::new(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    fleet.reset(&cfg);
    let mut rows = Vec::with_capacity(cfg.steps_per_day as usize);
    for step in 0..cfg.steps_per_day {
        let offers: Vec<Offer> = fleet
            .agents
            .iter()
            .map(|a| {
                let price = private_value(a, fleet.step, &cfg).unwrap_or(cfg.price_mid());
                Offer::masked(a, price, a.role_cap_kwh(), &cfg)
            })
            .collect();
        let r = m.clear(&offers, &fleet.agents, &cfg, &mut rng);
        rows.push(MetricsRecord::from_step(step, &r, &offers));
        fleet
            .apply_trades(&r, &cfg)
            .map_err(|e| DemoError::Input(e.to_string()))?;
        fleet.step_arrivals_departures(&cfg);
    }
    Ok(serde_json::to_string(&rows)?)
}

fn js(r: Result<String, DemoError>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen(js_name = compareMechanisms)]
pub fn compare_mechanisms_js(offers_json: &str, seed: u32) -> Result<String, JsValue> {
    js(compare_mechanisms(offers_json, seed as u64))
}

#[wasm_bindgen(js_name = solveAllocation)]
pub fn solve_dense_js(input_json: &str) -> Result<String, JsValue> {
    js(solve_dense(input_json))
}

#[wasm_bindgen(js_name = simulateDay)]
pub fn simulate_day_js(n_agents: u32, mechanism: &str, seed: u32) -> Result<String, JsValue> {
    js(simulate_day(n_agents as usize, mechanism, seed as u64))
}
