use super::{create_dir, stream, write_csv, ExperimentConfig, HarnessError, RunMetadata, RunSpec, Stream};
use super::{STEPS_FILE, SUMMARY_FILE};
use crate::domain::AgentId;
use crate::env::FleetState;
use crate::learner::{action_to_offer, Actor};
use crate::metrics::{coefficient_of_variation, iqr, jains_index, mean, median, quantile, MetricsRecord};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Per-run aggregates over the per-step metrics. `jains_run` is Jain's index
/// of each agent's cumulative utility over the whole run, next to the
/// per-step median `jains_median`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mechanism: String,
    pub ablation: String,
    pub population: usize,
    pub seed: u64,
    pub steps: usize,
    pub sw_total: f64,
    pub sw_median: f64,
    pub sw_p25: f64,
    pub sw_p75: f64,
    pub sw_cv: f64,
    pub volume_total: f64,
    pub volume_median: f64,
    pub volume_iqr: f64,
    pub volume_cv: f64,
    pub gini_median: f64,
    pub gini_iqr: f64,
    pub jains_median: f64,
    pub jains_iqr: f64,
    pub jains_run: f64,
    pub p_match_median: f64,
    pub p_match_mean: f64,
    pub trades: usize,
    /// Unweighted mean, min and max over every executed trade; zero without trades.
    pub price_mean: f64,
    pub price_min: f64,
    pub price_max: f64,
}

#[derive(Clone, Debug)]
pub struct EvalOutcome {
    pub records: Vec<MetricsRecord>,
    pub summary: RunSummary,
}

#[derive(Default)]
struct TradeStats {
    count: usize,
    sum: f64,
    min: f64,
    max: f64,
}

/// Aggregates per-step records; CVs that are undefined (zero mean) are NaN.
pub fn summarize(records: &[MetricsRecord]) -> RunSummary {
    let col = |f: fn(&MetricsRecord) -> f64| records.iter().map(f).collect::<Vec<f64>>();
    let sw = col(|r| r.sw);
    let vol = col(|r| r.volume_kwh);
    let gini = col(|r| r.gini);
    let jains = col(|r| r.jains);
    let pm = col(|r| r.p_match);
    let cv = |xs: &[f64]| coefficient_of_variation(xs).unwrap_or(f64::NAN);
    RunSummary {
        mechanism: String::new(),
        ablation: String::new(),
        population: 0,
        seed: 0,
        steps: records.len(),
        sw_total: sw.iter().sum(),
        sw_median: median(&sw),
        sw_p25: quantile(&sw, 0.25),
        sw_p75: quantile(&sw, 0.75),
        sw_cv: cv(&sw),
        volume_total: vol.iter().sum(),
        volume_median: median(&vol),
        volume_iqr: iqr(&vol),
        volume_cv: cv(&vol),
        gini_median: median(&gini),
        gini_iqr: iqr(&gini),
        jains_median: median(&jains),
        jains_iqr: iqr(&jains),
        jains_run: 0.0,
        p_match_median: median(&pm),
        p_match_mean: mean(&pm),
        trades: 0,
        price_mean: 0.0,
        price_min: 0.0,
        price_max: 0.0,
    }
}

/// Runs the actor noise-free for `steps` steps from one fleet reset, so a
/// multi-day horizon sees continuous turnover. Writes `steps.csv`,
/// `summary.csv` and metadata to `spec.out_dir` when `write` is set.
pub fn run_evaluation(
    cfg: &ExperimentConfig,
    spec: &RunSpec,
    actor: &Actor,
    seed: u64,
    steps: u32,
    write: bool,
) -> Result<EvalOutcome, HarnessError> {
    cfg.validate()?;
    let mut sim = cfg.sim.clone();
    sim.n_target = spec.n_agents;
    let mut fleet = FleetState::from_rng(stream(seed, Stream::EvalFleet));
    let mut clear_rng = stream(seed, Stream::EvalClearing);
    fleet.reset(&sim);

    let mut records = Vec::with_capacity(steps as usize);
    let mut cumulative: BTreeMap<AgentId, f64> = BTreeMap::new();
    let mut prices = TradeStats {
        min: f64::INFINITY,
        max: f64::NEG_INFINITY,
        ..TradeStats::default()
    };
    for t in 0..steps {
        let offers: Vec<_> = fleet
            .agents
            .iter()
            .map(|a| {
                let obs = crate::env::observe(a, fleet.step, &sim).features();
                action_to_offer(a, actor.action(&obs), &sim)
            })
            .collect();
        let result = spec.mechanism.clear(&offers, &fleet.agents, &sim, &mut clear_rng);
        for (&id, &u) in result.buyer_utils.iter().chain(&result.seller_utils) {
            *cumulative.entry(id).or_default() += u;
        }
        for tr in &result.trades {
            prices.count += 1;
            prices.sum += tr.price;
            prices.min = prices.min.min(tr.price);
            prices.max = prices.max.max(tr.price);
        }
        records.push(MetricsRecord::from_step(t, &result, &offers));
        fleet.apply_trades(&result, &sim)?;
        fleet.step_arrivals_departures(&sim);
    }

    let mut summary = summarize(&records);
    summary.mechanism = spec.mechanism.name().to_string();
    summary.ablation = spec.ablation.label();
    summary.population = spec.n_agents;
    summary.seed = seed;
    let utils: Vec<f64> = cumulative.into_values().collect();
    summary.jains_run = jains_index(&utils).unwrap_or(0.0);
    summary.trades = prices.count;
    if prices.count > 0 {
        summary.price_mean = prices.sum / prices.count as f64;
        summary.price_min = prices.min;
        summary.price_max = prices.max;
    }

    if write {
        let dir = &spec.out_dir;
        create_dir(dir)?;
        RunMetadata::new(spec, seed, cfg).write(dir)?;
        write_csv(&dir.join(STEPS_FILE), &records)?;
        write_csv(&dir.join(SUMMARY_FILE), std::slice::from_ref(&summary))?;
    }
    Ok(EvalOutcome { records, summary })
}
