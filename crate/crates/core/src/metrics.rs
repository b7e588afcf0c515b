//! System objectives and evaluation statistics.

use crate::clearing::ClearingResult;
use crate::domain::{Offer, Role};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("no active traders")]
    EmptyPopulation,
    #[error("mean is zero")]
    ZeroMean,
    #[error("need at least {0} values")]
    TooFewValues(usize),
}

/// One row of the per-step metrics CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u32,
    pub sw: f64,
    pub volume_kwh: f64,
    pub gini: f64,
    pub jains: f64,
    pub p_match: f64,
    pub n_buyers: usize,
    pub n_sellers: usize,
    pub n_neutral: usize,
    pub price_mean: f64,
    pub price_std: f64,
}

impl MetricsRecord {
    /// `neutral` is the count of parked agents without an active offer role.
    pub fn from_step(step: u32, result: &ClearingResult, offers: &[Offer]) -> MetricsRecord {
        let utils = result.active_utilities();
        let (price_mean, price_std) = price_stats(result);
        MetricsRecord {
            step,
            sw: social_welfare(result),
            volume_kwh: result.volume(),
            gini: gini(&utils),
            jains: jains_index(&utils).unwrap_or(0.0),
            p_match: match_rate(result, offers),
            n_buyers: offers.iter().filter(|o| o.role == Role::Buyer).count(),
            n_sellers: offers.iter().filter(|o| o.role == Role::Seller).count(),
            n_neutral: offers.iter().filter(|o| o.role == Role::Neutral).count(),
            price_mean,
            price_std,
        }
    }
}

pub fn social_welfare(result: &ClearingResult) -> f64 {
    result.buyer_utils.values().sum::<f64>() + result.seller_utils.values().sum::<f64>()
}

/// `(sum u)^2 / (K * sum u^2)`; 0 when every utility is zero.
pub fn jains_index(utils: &[f64]) -> Result<f64, MetricsError> {
    if utils.is_empty() {
        return Err(MetricsError::EmptyPopulation);
    }
    let sum: f64 = utils.iter().sum();
    let sq: f64 = utils.iter().map(|u| u * u).sum();
    if sq == 0.0 {
        return Ok(0.0);
    }
    Ok(sum * sum / (utils.len() as f64 * sq))
}

/// Mean absolute difference over all ordered pairs divided by twice the mean.
/// Zero for empty input or nonpositive mean.
pub fn gini(utils: &[f64]) -> f64 {
    let k = utils.len();
    if k == 0 {
        return 0.0;
    }
    let mean = utils.iter().sum::<f64>() / k as f64;
    if mean <= 0.0 {
        return 0.0;
    }
    // sorted form of sum_ij |u_i - u_j|
    let mut sorted = utils.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut acc = 0.0;
    for (i, u) in sorted.iter().enumerate() {
        acc += (2.0 * i as f64 - (k as f64 - 1.0)) * u;
    }
    2.0 * acc / (2.0 * (k * k) as f64 * mean)
}

/// Fraction of active buyers and sellers with at least one executed trade.
pub fn match_rate(result: &ClearingResult, offers: &[Offer]) -> f64 {
    let active: Vec<_> = offers.iter().filter(|o| o.is_active()).collect();
    if active.is_empty() {
        return 0.0;
    }
    let matched = active
        .iter()
        .filter(|o| result.matched.contains(&o.agent_id))
        .count();
    matched as f64 / active.len() as f64
}

/// Unweighted mean and population standard deviation of trade prices; zeros without trades.
pub fn price_stats(result: &ClearingResult) -> (f64, f64) {
    let n = result.trades.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = result.trades.iter().map(|t| t.price).sum::<f64>() / n as f64;
    let var = result
        .trades
        .iter()
        .map(|t| (t.price - mean).powi(2))
        .sum::<f64>()
        / n as f64;
    (mean, var.sqrt())
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample (n-1) standard deviation.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub fn sample_variance(xs: &[f64]) -> f64 {
    sample_std(xs).powi(2)
}

/// Sample standard deviation over mean.
pub fn coefficient_of_variation(series: &[f64]) -> Result<f64, MetricsError> {
    if series.is_empty() {
        return Err(MetricsError::TooFewValues(1));
    }
    let m = mean(series);
    if m == 0.0 {
        return Err(MetricsError::ZeroMean);
    }
    Ok(sample_std(series) / m)
}

/// Linear-interpolated quantile, `q` in `[0, 1]`.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

pub fn iqr(xs: &[f64]) -> f64 {
    quantile(xs, 0.75) - quantile(xs, 0.25)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clearing::Trade;
    use crate::domain::AgentId;
    use proptest::prelude::*;

    fn slow_gini(u: &[f64]) -> f64 {
        let k = u.len() as f64;
        let m = u.iter().sum::<f64>() / k;
        let mut s = 0.0;
        for a in u {
            for b in u {
                s += (a - b).abs();
            }
        }
        s / (2.0 * k * k * m)
    }

    #[test]
    fn jains_examples() {
        assert!((jains_index(&[1.0, 1.0, 1.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((jains_index(&[0.0, 0.0, 5.0, 0.0]).unwrap() - 0.25).abs() < 1e-15);
        assert!((jains_index(&[1.0, 2.0, 3.0]).unwrap() - 36.0 / 42.0).abs() < 1e-15);
        assert_eq!(jains_index(&[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(jains_index(&[]), Err(MetricsError::EmptyPopulation));
    }

    #[test]
    fn gini_examples() {
        assert_eq!(gini(&[1.0; 4]), 0.0);
        assert!((gini(&[0.0, 0.0, 0.0, 1.0]) - 0.75).abs() < 1e-15);
        assert!((gini(&[1.0, 2.0, 3.0]) - 4.0 / 18.0).abs() < 1e-15);
        assert_eq!(gini(&[0.0, 0.0]), 0.0);
    }

    #[test]
    fn cv_examples() {
        assert_eq!(coefficient_of_variation(&[2.0, 2.0, 2.0]).unwrap(), 0.0);
        let cv = coefficient_of_variation(&[1.0, 3.0]).unwrap();
        assert!((cv - 2f64.sqrt() / 2.0).abs() < 1e-15);
        assert_eq!(coefficient_of_variation(&[-1.0, 1.0]), Err(MetricsError::ZeroMean));
    }

    fn result_with(trades: Vec<Trade>, bids: &[(u64, f64)], asks: &[(u64, f64)]) -> ClearingResult {
        let mut r = ClearingResult {
            buyer_utils: bids.iter().map(|&(i, _)| (AgentId(i), 0.0)).collect(),
            seller_utils: asks.iter().map(|&(i, _)| (AgentId(i), 0.0)).collect(),
            ..ClearingResult::default()
        };
        for t in &trades {
            let b = bids.iter().find(|x| AgentId(x.0) == t.buyer).unwrap().1;
            let a = asks.iter().find(|x| AgentId(x.0) == t.seller).unwrap().1;
            *r.buyer_utils.get_mut(&t.buyer).unwrap() += (b - t.price) * t.quantity;
            *r.seller_utils.get_mut(&t.seller).unwrap() += (t.price - a) * t.quantity;
            r.matched.insert(t.buyer);
            r.matched.insert(t.seller);
        }
        r.trades = trades;
        r
    }

    fn offer(id: u64, role: Role, q: f64) -> Offer {
        Offer {
            agent_id: AgentId(id),
            role,
            price: 0.3,
            quantity: q,
        }
    }

    #[test]
    fn welfare_and_match_rate() {
        let t = Trade {
            buyer: AgentId(1),
            seller: AgentId(3),
            quantity: 6.0,
            price: 0.25,
        };
        let r = result_with(vec![t], &[(1, 0.30), (2, 0.28)], &[(3, 0.20)]);
        assert!((social_welfare(&r) - 0.60).abs() < 1e-12);
        assert_eq!(social_welfare(&ClearingResult::default()), 0.0);
        let offers = [
            offer(1, Role::Buyer, 5.0),
            offer(2, Role::Buyer, 5.0),
            offer(3, Role::Seller, 6.0),
            offer(4, Role::Neutral, 0.0),
        ];
        assert!((match_rate(&r, &offers) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(match_rate(&ClearingResult::default(), &offers), 0.0);
        let all = [offer(1, Role::Buyer, 5.0), offer(3, Role::Seller, 6.0)];
        assert_eq!(match_rate(&r, &all), 1.0);
        let rec = MetricsRecord::from_step(3, &r, &offers);
        assert_eq!((rec.n_buyers, rec.n_sellers, rec.n_neutral), (2, 1, 1));
        assert_eq!(rec.price_mean, 0.25);
    }

    #[test]
    fn quantiles() {
        let xs = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(median(&xs), 2.5);
        assert_eq!(quantile(&xs, 0.0), 1.0);
        assert_eq!(quantile(&xs, 1.0), 4.0);
        assert!((iqr(&xs) - 1.5).abs() < 1e-15);
        assert_eq!(median(&[7.0]), 7.0);
    }

    proptest! {
        #[test]
        fn jains_constant_and_scale_invariant(c in 0.01f64..100.0, k in 1usize..40, u in proptest::collection::vec(0.0f64..10.0, 1..20), s in 0.1f64..10.0) {
            prop_assert!((jains_index(&vec![c; k]).unwrap() - 1.0).abs() < 1e-12);
            let scaled: Vec<f64> = u.iter().map(|x| x * s).collect();
            prop_assert!((jains_index(&u).unwrap() - jains_index(&scaled).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn gini_matches_pairwise_definition(u in proptest::collection::vec(0.0f64..10.0, 1..20), s in 0.1f64..10.0) {
            prop_assume!(u.iter().sum::<f64>() > 0.0);
            prop_assert!((gini(&u) - slow_gini(&u)).abs() < 1e-12);
            let scaled: Vec<f64> = u.iter().map(|x| x * s).collect();
            prop_assert!((gini(&u) - gini(&scaled)).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&gini(&u)));
        }
    }
}
