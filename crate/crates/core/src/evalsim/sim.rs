//! Click simulator comparing recommendation strategies. Each session shows
//! one user one outfit chosen by the strategy; the click is a Bernoulli
//! draw whose probability is a logistic in the style affinity between the
//! user's latent cluster and the outfit's items. Absolute CTR values are
//! simulator policy; the comparison across strategies is the signal.

use super::cf::CoClickMatrix;
use super::{EvalError, Result};
use crate::data::synth::SyntheticWorld;
use crate::embedding::EmbeddingTable;
use crate::ids::{ItemId, UserId};
use crate::pog::{default_rule, PogModel, UserHistory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::str::FromStr;

/// Recommendation strategy under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Rr,
    Cf,
    Pog,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Strategy::Rr => "rr",
            Strategy::Cf => "cf",
            Strategy::Pog => "pog",
        };
        write!(f, "{s}")
    }
}

impl FromStr for Strategy {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rr" => Ok(Strategy::Rr),
            "cf" => Ok(Strategy::Cf),
            "pog" => Ok(Strategy::Pog),
            other => Err(EvalError::UnknownStrategy(other.to_string())),
        }
    }
}

/// Click-model policy. The probability of a click is
/// `sigmoid(gain * affinity + bias)` unless `force` pins it. Each session
/// offers the pool strategies (RR, CF) a fresh seeded subsample of
/// `pool_size` curated outfits, standing in for the limited inventory a
/// recommender can draw from, while generation composes per user from the
/// whole item catalog.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimPolicy {
    pub gain: f64,
    pub bias: f64,
    pub force: Option<f64>,
    pub pool_size: usize,
}

impl Default for SimPolicy {
    fn default() -> Self {
        SimPolicy {
            gain: 8.0,
            bias: -5.0,
            force: None,
            pool_size: 16,
        }
    }
}

impl SimPolicy {
    pub fn always_click() -> Self {
        SimPolicy {
            force: Some(1.0),
            ..SimPolicy::default()
        }
    }

    pub fn probability(&self, affinity: f64) -> f64 {
        if let Some(p) = self.force {
            return p;
        }
        1.0 / (1.0 + (-(self.gain * affinity + self.bias)).exp())
    }
}

/// Models available to the strategies; POG is optional so RR/CF runs do
/// not need one.
pub struct SimAssets<'a> {
    pub table: &'a EmbeddingTable,
    pub pog: Option<&'a PogModel>,
}

/// Clicks/impressions plus the analytic standard error and a cumulative
/// CTR time series (one point per batch).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimReport {
    pub strategy: Strategy,
    pub sessions: usize,
    pub clicks: usize,
    pub ctr: f64,
    pub std_error: f64,
    pub policy: SimPolicy,
    pub timeseries: Vec<(usize, f64)>,
}

/// Number of standard errors separating two CTR estimates.
pub fn gap_in_std_errors(higher: &SimReport, lower: &SimReport) -> f64 {
    let se = (higher.std_error.powi(2) + lower.std_error.powi(2)).sqrt();
    if se == 0.0 {
        return f64::INFINITY;
    }
    (higher.ctr - lower.ctr) / se
}

pub fn simulate_sessions(
    strategy: Strategy,
    world: &SyntheticWorld,
    assets: &SimAssets,
    num_sessions: usize,
    seed: u64,
    policy: &SimPolicy,
) -> Result<SimReport> {
    if num_sessions == 0 {
        return Err(EvalError::NoInstances);
    }
    if strategy == Strategy::Pog && assets.pog.is_none() {
        return Err(EvalError::MissingModel("pog"));
    }

    // Latest history per user, sorted by user id for determinism.
    let mut latest: BTreeMap<UserId, Vec<ItemId>> = BTreeMap::new();
    for b in &world.dataset.behaviors {
        latest.insert(b.user_id, b.clicks.clone());
    }
    let users: Vec<(UserId, Vec<ItemId>)> = latest.into_iter().collect();
    if users.is_empty() {
        return Err(EvalError::NoInstances);
    }

    // Affinity of a user cluster with an outfit: the fraction of its items
    // in that cluster.
    let affinity = |user: UserId, items: &[ItemId]| -> f64 {
        let cluster = world.truth.user_cluster[&user];
        let hits = items
            .iter()
            .filter(|id| world.truth.item_cluster.get(id) == Some(&cluster))
            .count();
        hits as f64 / items.len().max(1) as f64
    };

    // Deterministic per-user state: CF preference tables, POG generations.
    let cf_prefs: Vec<std::collections::HashMap<ItemId, f64>> = match strategy {
        Strategy::Cf => {
            let matrix = CoClickMatrix::from_behaviors(&world.dataset.behaviors);
            users
                .iter()
                .map(|(_, history)| matrix.preferences(history))
                .collect::<Result<_>>()?
        }
        _ => Vec::new(),
    };
    let per_user: Vec<Vec<ItemId>> = match strategy {
        Strategy::Rr | Strategy::Cf => Vec::new(),
        Strategy::Pog => {
            let model = assets.pog.expect("checked above");
            let categories: Vec<crate::ids::CategoryId> = world
                .dataset
                .items
                .iter()
                .map(|i| i.category)
                .collect::<HashSet<_>>()
                .into_iter()
                .collect();
            let mut categories = categories;
            categories.sort();
            let rule = default_rule(&categories)?;
            let candidates: Vec<(ItemId, crate::ids::CategoryId)> = world
                .dataset
                .items
                .iter()
                .map(|i| (i.item_id, i.category))
                .collect();
            users
                .par_iter()
                .map(|(user, history)| {
                    let capped_start = history.len().saturating_sub(model.config.history_cap);
                    let h = UserHistory::new(*user, history[capped_start..].to_vec())?;
                    let gen = model.generate(&h, assets.table, &candidates, &rule)?;
                    Ok(gen.item_ids)
                })
                .collect::<Result<_>>()?
        }
    };

    let pool_size = policy.pool_size.clamp(1, world.dataset.outfits.len());
    let clicks: Vec<bool> = (0..num_sessions)
        .into_par_iter()
        .map(|session| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(session as u64);
            let ui = rng.gen_range(0..users.len());
            let (user, _) = &users[ui];
            // The session's recommendation inventory for the pool-bound
            // strategies.
            let mut pool = Vec::with_capacity(pool_size);
            while pool.len() < pool_size {
                let oi = rng.gen_range(0..world.dataset.outfits.len());
                if !pool.contains(&oi) {
                    pool.push(oi);
                }
            }
            let shown: &[ItemId] = match strategy {
                Strategy::Rr => &world.dataset.outfits[pool[0]].item_ids,
                Strategy::Cf => {
                    // Best pool outfit by its most preferred item; ties keep
                    // pool order.
                    let prefs = &cf_prefs[ui];
                    let mut best = pool[0];
                    let mut best_score = f64::NEG_INFINITY;
                    for oi in &pool {
                        let score = world.dataset.outfits[*oi]
                            .item_ids
                            .iter()
                            .filter_map(|id| prefs.get(id))
                            .cloned()
                            .fold(f64::NEG_INFINITY, f64::max);
                        let score = if score.is_finite() { score } else { 0.0 };
                        if score > best_score {
                            best_score = score;
                            best = *oi;
                        }
                    }
                    &world.dataset.outfits[best].item_ids
                }
                Strategy::Pog => &per_user[ui],
            };
            let p = policy.probability(affinity(*user, shown));
            rng.gen_bool(p.clamp(0.0, 1.0))
        })
        .collect();

    let click_count = clicks.iter().filter(|c| **c).count();
    let ctr = click_count as f64 / num_sessions as f64;
    let std_error = (ctr * (1.0 - ctr) / num_sessions as f64).sqrt();

    let batch = (num_sessions / 20).max(1);
    let mut timeseries = Vec::new();
    let mut running = 0usize;
    for (i, c) in clicks.iter().enumerate() {
        if *c {
            running += 1;
        }
        if (i + 1) % batch == 0 || i + 1 == num_sessions {
            timeseries.push((i + 1, running as f64 / (i + 1) as f64));
        }
    }

    Ok(SimReport {
        strategy,
        sessions: num_sessions,
        clicks: click_count,
        ctr,
        std_error,
        policy: *policy,
        timeseries,
    })
}
