//! Item-item collaborative filtering baseline: cosine similarity over the
//! user-item click-count matrix, preference aggregated by summing the
//! similarities to every history item, outfits ranked by their best item.

use super::{EvalError, Result};
use crate::data::{BehaviorRecord, OutfitRecord};
use crate::ids::{ItemId, OutfitId, UserId};
use std::collections::HashMap;

/// Sparse user-item click counts with per-item norms.
#[derive(Debug, Clone, Default)]
pub struct CoClickMatrix {
    item_users: HashMap<ItemId, Vec<(usize, f64)>>,
    user_items: Vec<Vec<(ItemId, f64)>>,
    item_norm: HashMap<ItemId, f64>,
}

impl CoClickMatrix {
    /// Aggregate every user's item clicks across their behavior records.
    pub fn from_behaviors(behaviors: &[BehaviorRecord]) -> Self {
        let mut user_index: HashMap<UserId, usize> = HashMap::new();
        let mut counts: HashMap<(usize, ItemId), f64> = HashMap::new();
        for b in behaviors {
            let next = user_index.len();
            let u = *user_index.entry(b.user_id).or_insert(next);
            for item in &b.clicks {
                *counts.entry((u, *item)).or_insert(0.0) += 1.0;
            }
        }
        let mut item_users: HashMap<ItemId, Vec<(usize, f64)>> = HashMap::new();
        let mut user_items: Vec<Vec<(ItemId, f64)>> = vec![Vec::new(); user_index.len()];
        let mut sorted: Vec<((usize, ItemId), f64)> = counts.into_iter().collect();
        sorted.sort_by_key(|((u, i), _)| (*u, *i));
        for ((u, item), c) in sorted {
            item_users.entry(item).or_default().push((u, c));
            user_items[u].push((item, c));
        }
        let item_norm = item_users
            .iter()
            .map(|(id, users)| {
                let norm = users.iter().map(|(_, c)| c * c).sum::<f64>().sqrt();
                (*id, norm)
            })
            .collect();
        CoClickMatrix {
            item_users,
            user_items,
            item_norm,
        }
    }

    /// Scale every count by a positive constant (cosine is invariant).
    pub fn scaled(&self, k: f64) -> Self {
        let mut out = self.clone();
        for users in out.item_users.values_mut() {
            for (_, c) in users.iter_mut() {
                *c *= k;
            }
        }
        for items in out.user_items.iter_mut() {
            for (_, c) in items.iter_mut() {
                *c *= k;
            }
        }
        for n in out.item_norm.values_mut() {
            *n *= k;
        }
        out
    }

    /// Sum over history items of cosine(item, candidate), for every
    /// candidate item outside the history.
    pub fn preferences(&self, history: &[ItemId]) -> Result<HashMap<ItemId, f64>> {
        if history.is_empty() {
            return Err(EvalError::ColdUser);
        }
        let history_set: std::collections::HashSet<ItemId> = history.iter().copied().collect();
        let mut scores: HashMap<ItemId, f64> = HashMap::new();
        for hist_item in history {
            let (users, norm_i) = match (
                self.item_users.get(hist_item),
                self.item_norm.get(hist_item),
            ) {
                (Some(u), Some(n)) if *n > 0.0 => (u, *n),
                _ => continue,
            };
            let mut dots: HashMap<ItemId, f64> = HashMap::new();
            for (u, c_ui) in users {
                for (other, c_uj) in &self.user_items[*u] {
                    if history_set.contains(other) {
                        continue;
                    }
                    *dots.entry(*other).or_insert(0.0) += c_ui * c_uj;
                }
            }
            for (other, dot) in dots {
                let norm_j = self.item_norm.get(&other).copied().unwrap_or(0.0);
                if norm_j > 0.0 {
                    *scores.entry(other).or_insert(0.0) += dot / (norm_i * norm_j);
                }
            }
        }
        Ok(scores)
    }
}

/// Rank the pool so outfits containing the most-preferred candidate items
/// come first; all-zero preferences keep the pool order.
pub fn cf_recommend(
    history: &[ItemId],
    pool: &[OutfitRecord],
    matrix: &CoClickMatrix,
) -> Result<Vec<OutfitId>> {
    let prefs = matrix.preferences(history)?;
    let mut scored: Vec<(usize, f64)> = pool
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let best = o
                .item_ids
                .iter()
                .filter_map(|id| prefs.get(id))
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            let score = if best.is_finite() { best } else { 0.0 };
            (i, score)
        })
        .collect();
    // Stable sort: ties keep pool order.
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite scores"));
    Ok(scored.into_iter().map(|(i, _)| pool[i].outfit_id).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn behavior(user: u64, outfit: u64, clicks: &[u64]) -> BehaviorRecord {
        BehaviorRecord {
            user_id: UserId(user),
            outfit_id: OutfitId(outfit),
            clicks: clicks.iter().map(|i| ItemId(*i)).collect(),
        }
    }

    fn outfit(id: u64, items: &[u64]) -> OutfitRecord {
        OutfitRecord {
            outfit_id: OutfitId(id),
            item_ids: items.iter().map(|i| ItemId(*i)).collect(),
        }
    }

    #[test]
    fn sole_coclick_becomes_top_preference() {
        // One user clicked items 1 and 2 together; nothing else co-clicks.
        let behaviors = vec![
            behavior(1, 10, &[1, 2]),
            behavior(2, 11, &[3]),
        ];
        let matrix = CoClickMatrix::from_behaviors(&behaviors);
        let prefs = matrix.preferences(&[ItemId(1)]).unwrap();
        assert!(prefs[&ItemId(2)] > 0.0);
        assert!(prefs.get(&ItemId(3)).copied().unwrap_or(0.0) == 0.0);
    }

    #[test]
    fn cold_user_errors() {
        let matrix = CoClickMatrix::from_behaviors(&[behavior(1, 10, &[1, 2])]);
        assert!(matches!(
            matrix.preferences(&[]),
            Err(EvalError::ColdUser)
        ));
    }

    #[test]
    fn orthogonal_rows_fall_back_to_pool_order() {
        // The history item shares no user with any candidate.
        let behaviors = vec![behavior(1, 10, &[1]), behavior(2, 11, &[2]), behavior(3, 12, &[3])];
        let matrix = CoClickMatrix::from_behaviors(&behaviors);
        let pool = vec![outfit(20, &[2, 4, 5, 6]), outfit(21, &[3, 7, 8, 9])];
        let ranked = cf_recommend(&[ItemId(1)], &pool, &matrix).unwrap();
        assert_eq!(ranked, vec![OutfitId(20), OutfitId(21)]);
    }

    #[test]
    fn ranking_matches_brute_force_cosine() {
        // Three users with overlapping click sets; the oracle computes
        // cosine similarities with explicit dense loops.
        let behaviors = vec![
            behavior(1, 10, &[1, 2, 3]),
            behavior(2, 11, &[1, 2]),
            behavior(3, 12, &[2, 3, 4]),
        ];
        let matrix = CoClickMatrix::from_behaviors(&behaviors);
        let history = [ItemId(1)];
        let prefs = matrix.preferences(&history).unwrap();

        // Dense oracle over users {1,2,3} and items {1,2,3,4}.
        let users = [1u64, 2, 3];
        let items = [1u64, 2, 3, 4];
        let clicked: HashMap<u64, Vec<u64>> = vec![
            (1, vec![1, 2, 3]),
            (2, vec![1, 2]),
            (3, vec![2, 3, 4]),
        ]
        .into_iter()
        .collect();
        let count = |u: u64, i: u64| -> f64 {
            clicked[&u].iter().filter(|x| **x == i).count() as f64
        };
        let cosine = |i: u64, j: u64| -> f64 {
            let dot: f64 = users.iter().map(|u| count(*u, i) * count(*u, j)).sum();
            let ni: f64 = users.iter().map(|u| count(*u, i).powi(2)).sum::<f64>().sqrt();
            let nj: f64 = users.iter().map(|u| count(*u, j).powi(2)).sum::<f64>().sqrt();
            dot / (ni * nj)
        };
        for j in items.iter().filter(|j| **j != 1) {
            let want = cosine(1, *j);
            let got = prefs.get(&ItemId(*j)).copied().unwrap_or(0.0);
            assert!((got - want).abs() < 1e-12, "item {j}: {got} vs {want}");
        }
    }

    #[test]
    fn ranking_is_scale_invariant() {
        let behaviors = vec![
            behavior(1, 10, &[1, 2, 3]),
            behavior(2, 11, &[1, 2]),
            behavior(3, 12, &[2, 3, 4]),
            behavior(4, 13, &[4, 5]),
        ];
        let matrix = CoClickMatrix::from_behaviors(&behaviors);
        let scaled = matrix.scaled(7.5);
        let pool = vec![
            outfit(20, &[2, 6, 7, 8]),
            outfit(21, &[3, 9, 10, 11]),
            outfit(22, &[4, 12, 13, 14]),
        ];
        let a = cf_recommend(&[ItemId(1), ItemId(5)], &pool, &matrix).unwrap();
        let b = cf_recommend(&[ItemId(1), ItemId(5)], &pool, &scaled).unwrap();
        assert_eq!(a, b);
    }
}
