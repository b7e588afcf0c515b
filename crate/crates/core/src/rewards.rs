//! Per-agent training reward: base trade utility, counterfactual credit on
//! the collective objective, bargaining-price proximity and an
//! individual-rationality penalty.

use crate::clearing::{ClearingResult, Mechanism};
use crate::domain::{AgentId, Offer, Role};
use crate::metrics::{jains_index, match_rate, social_welfare};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub alpha_r: f64,
    pub w_price: f64,
    pub kappa_price: f64,
    pub mu: f64,
    pub lambda_w: f64,
    pub lambda_1: f64,
    pub lambda_2: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            alpha_r: 1.0,
            w_price: 1.0,
            kappa_price: 10.0,
            mu: 5.0,
            lambda_w: 0.01,
            lambda_1: 1.0,
            lambda_2: 1.0,
        }
    }
}

/// Reward components switched off for ablation runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    pub no_price_prox: bool,
    /// Replace counterfactual credit with the shared, uncredited collective reward.
    pub no_credit: bool,
    /// Drop the collective objective entirely, so there is no credit signal.
    pub no_global: bool,
}

impl Ablation {
    pub const FULL: Ablation = Ablation {
        no_price_prox: false,
        no_credit: false,
        no_global: false,
    };

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.no_price_prox {
            parts.push("no_price_prox");
        }
        if self.no_credit {
            parts.push("no_credit");
        }
        if self.no_global {
            parts.push("no_global");
        }
        if parts.is_empty() {
            "full".to_string()
        } else {
            parts.join("+")
        }
    }

    /// Inverse of [`Ablation::label`].
    pub fn from_label(label: &str) -> Option<Ablation> {
        let mut a = Ablation::FULL;
        if label == "full" {
            return Some(a);
        }
        for part in label.split('+') {
            let flag = match part {
                "no_price_prox" => &mut a.no_price_prox,
                "no_credit" => &mut a.no_credit,
                "no_global" => &mut a.no_global,
                _ => return None,
            };
            if std::mem::replace(flag, true) {
                return None;
            }
        }
        Some(a)
    }
}

/// How the credit slot of the reward is filled for a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CreditMode {
    Counterfactual,
    Shared,
    Off,
}

/// Which reward terms a (mechanism, ablation) pair trains with.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RewardPlan {
    pub credit: CreditMode,
    pub price_prox: bool,
    pub ir_penalty: bool,
}

impl RewardPlan {
    /// Learning-only agents see base utility alone; everything else uses the
    /// full shaped reward minus whatever the ablation removes.
    pub fn for_run(mechanism: Mechanism, ablation: Ablation) -> RewardPlan {
        if mechanism == Mechanism::LearningOnly {
            return RewardPlan {
                credit: CreditMode::Off,
                price_prox: false,
                ir_penalty: false,
            };
        }
        let credit = if ablation.no_global {
            CreditMode::Off
        } else if ablation.no_credit {
            CreditMode::Shared
        } else {
            CreditMode::Counterfactual
        };
        RewardPlan {
            credit,
            price_prox: !ablation.no_price_prox,
            ir_penalty: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub base: f64,
    pub credit: f64,
    pub price_prox: f64,
    pub ir_penalty: f64,
    pub total: f64,
}

/// Utility from this step's trades at submitted prices; 0 if unmatched.
pub fn base_utility(agent_id: AgentId, result: &ClearingResult) -> f64 {
    result.utility(agent_id)
}

/// `lambda_w * SW + lambda_1 * FI + lambda_2 * P_match`, with FI = 0 for an empty market.
pub fn collective_reward(result: &ClearingResult, offers: &[Offer], w: &RewardWeights) -> f64 {
    let fi = jains_index(&result.active_utilities()).unwrap_or(0.0);
    w.lambda_w * social_welfare(result) + w.lambda_1 * fi + w.lambda_2 * match_rate(result, offers)
}

/// Factual clearing plus one counterfactual credit per offer.
#[derive(Clone, Debug)]
pub struct Credits {
    pub result: ClearingResult,
    pub collective: f64,
    /// Aligned with the input offers.
    pub deltas: Vec<f64>,
    pub clearing_calls: usize,
}

/// Clears the factual market once, then once more per offer with that
/// agent's action replaced by the no-trade default, and returns
/// `collective(a) - collective(a_-i, no-trade)` for each agent.
/// `clear` is called exactly `offers.len() + 1` times.
pub fn counterfactual_credits<F>(offers: &[Offer], w: &RewardWeights, mut clear: F) -> Credits
where
    F: FnMut(&[Offer]) -> ClearingResult,
{
    let result = clear(offers);
    let collective = collective_reward(&result, offers, w);
    let mut calls = 1;
    let mut scratch = offers.to_vec();
    let mut deltas = Vec::with_capacity(offers.len());
    for i in 0..offers.len() {
        scratch[i] = offers[i].withdrawn();
        let cf = clear(&scratch);
        calls += 1;
        deltas.push(collective - collective_reward(&cf, &scratch, w));
        scratch[i] = offers[i].clone();
    }
    Credits {
        result,
        collective,
        deltas,
        clearing_calls: calls,
    }
}

/// Single-agent counterfactual credit: two clearings.
pub fn counterfactual_credit<F>(agent_id: AgentId, offers: &[Offer], w: &RewardWeights, mut clear: F) -> f64
where
    F: FnMut(&[Offer]) -> ClearingResult,
{
    let factual = clear(offers);
    let withheld: Vec<Offer> = offers
        .iter()
        .map(|o| if o.agent_id == agent_id { o.withdrawn() } else { o.clone() })
        .collect();
    let cf = clear(&withheld);
    collective_reward(&factual, offers, w) - collective_reward(&cf, &withheld, w)
}

/// `-kappa * (p_i - (b_i + a_j)/2)^2` against the largest-volume counterparty,
/// 0 when unmatched.
pub fn price_proximity(agent_id: AgentId, offers: &[Offer], result: &ClearingResult, kappa: f64) -> f64 {
    let Some(own) = offers.iter().find(|o| o.agent_id == agent_id) else {
        return 0.0;
    };
    let counterpart = match own.role {
        Role::Buyer => largest(result.trades.iter().filter(|t| t.buyer == agent_id).map(|t| (t.seller, t.quantity))),
        Role::Seller => largest(result.trades.iter().filter(|t| t.seller == agent_id).map(|t| (t.buyer, t.quantity))),
        Role::Neutral => None,
    };
    let Some(other) = counterpart.and_then(|id| offers.iter().find(|o| o.agent_id == id)) else {
        return 0.0;
    };
    let p_nash = 0.5 * (own.price + other.price);
    -kappa * (own.price - p_nash).powi(2)
}

/// First maximum wins ties.
fn largest(it: impl Iterator<Item = (AgentId, f64)>) -> Option<AgentId> {
    let mut best: Option<(AgentId, f64)> = None;
    for (id, q) in it {
        if q > 0.0 && best.map_or(true, |(_, bq)| q > bq) {
            best = Some((id, q));
        }
    }
    best.map(|(id, _)| id)
}

/// `alpha_r * base + credit / n + w_price * price_prox - mu * max(0, -utility)`.
pub fn compose(base: f64, credit: f64, price_prox: f64, utility: f64, w: &RewardWeights, n: usize) -> RewardBreakdown {
    let ir_penalty = -w.mu * (-utility).max(0.0);
    let n = n.max(1) as f64;
    RewardBreakdown {
        base,
        credit,
        price_prox,
        ir_penalty,
        total: w.alpha_r * base + credit / n + w.w_price * price_prox + ir_penalty,
    }
}

/// Full per-agent rewards for one step, aligned with `offers`.
pub fn step_rewards<F>(
    offers: &[Offer],
    w: &RewardWeights,
    plan: RewardPlan,
    mut clear: F,
) -> (ClearingResult, Vec<RewardBreakdown>, usize)
where
    F: FnMut(&[Offer]) -> ClearingResult,
{
    let (result, deltas, calls) = match plan.credit {
        CreditMode::Counterfactual => {
            let c = counterfactual_credits(offers, w, &mut clear);
            (c.result, c.deltas, c.clearing_calls)
        }
        CreditMode::Shared => {
            let r = clear(offers);
            let shared = collective_reward(&r, offers, w);
            (r, vec![shared; offers.len()], 1)
        }
        CreditMode::Off => (clear(offers), vec![0.0; offers.len()], 1),
    };
    let n = offers.len();
    let breakdowns = offers
        .iter()
        .zip(&deltas)
        .map(|(o, &d)| {
            let u = base_utility(o.agent_id, &result);
            let prox = if plan.price_prox {
                price_proximity(o.agent_id, offers, &result, w.kappa_price)
            } else {
                0.0
            };
            let b = compose(u, d, prox, u, w, n);
            if plan.ir_penalty {
                b
            } else {
                RewardBreakdown {
                    total: b.total - b.ir_penalty,
                    ir_penalty: 0.0,
                    ..b
                }
            }
        })
        .collect();
    (result, breakdowns, calls)
}
