//! Seeded synthetic world: items with latent style clusters and categories,
//! style-coherent outfits assembled over category templates, and users whose
//! item/outfit clicks are sampled with logistic style-affinity weights.
//! Everything is a pure function of the config, so equal seeds give byte-
//! identical datasets.

use super::{BehaviorRecord, Dataset, ItemAttributes, ItemRecord, OutfitRecord};
use crate::embedding::{FeatureDims, RawFeatures};
use crate::ids::{CategoryId, ItemId, OutfitId, UserId};
use crate::pog::{category_segment, NUM_SEGMENTS};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SynthError {
    #[error("all counts must be >= 1")]
    ZeroCount,
    #[error("noise must lie in [0, 1], got {0}")]
    BadNoise(f64),
    #[error("need at least {min} categories for the segment templates, got {got}")]
    TooFewCategories { min: usize, got: usize },
    #[error("category {0} has no items; outfit template is infeasible")]
    EmptyCategory(u32),
    #[error("no style cluster has items in every segment; outfit template is infeasible")]
    NoFeasibleCluster,
}

pub type Result<T> = std::result::Result<T, SynthError>;

/// World size and noise. Feature widths default to desk scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorldConfig {
    pub num_users: usize,
    pub num_items: usize,
    pub num_categories: usize,
    pub style_dim: usize,
    pub noise: f64,
    pub seed: u64,
    #[serde(default = "FeatureDims::desk")]
    pub feature_dims: FeatureDims,
}

impl Default for SyntheticWorldConfig {
    fn default() -> Self {
        SyntheticWorldConfig {
            num_users: 400,
            num_items: 1500,
            num_categories: 40,
            style_dim: 8,
            noise: 0.1,
            seed: 0,
            feature_dims: FeatureDims::desk(),
        }
    }
}

impl SyntheticWorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_users == 0
            || self.num_items == 0
            || self.num_categories == 0
            || self.style_dim == 0
        {
            return Err(SynthError::ZeroCount);
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return Err(SynthError::BadNoise(self.noise));
        }
        if self.num_categories < NUM_SEGMENTS as usize {
            return Err(SynthError::TooFewCategories {
                min: NUM_SEGMENTS as usize,
                got: self.num_categories,
            });
        }
        if self.num_items < self.num_categories {
            // Round-robin category assignment would leave empty categories.
            return Err(SynthError::EmptyCategory(self.num_items as u32));
        }
        Ok(())
    }

    /// Outfit count derived from the item count (about 1.7 outfits per
    /// item, mirroring the released-data ratio).
    pub fn num_outfits(&self) -> usize {
        (self.num_items * 5 / 3).max(1)
    }
}

/// Ground-truth latents behind a generated dataset. The simulator uses
/// these to score style affinity; they are reproducible from the config.
#[derive(Debug, Clone)]
pub struct WorldTruth {
    pub style_dim: usize,
    pub item_cluster: HashMap<ItemId, usize>,
    pub user_cluster: HashMap<UserId, usize>,
    pub user_pref_categories: HashMap<UserId, Vec<CategoryId>>,
    pub outfit_cluster: HashMap<OutfitId, usize>,
}

/// A generated dataset plus its latent truth and the config it came from.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub config: SyntheticWorldConfig,
    pub dataset: Dataset,
    pub truth: WorldTruth,
}

/// Fraction of item clicks drawn from the user's preferred categories.
const PREF_CATEGORY_RATE: f64 = 0.85;
/// Fraction of outfit clicks filtered to outfits sharing a preferred
/// category, steering the Table-1-style overlap signal.
const PREF_OUTFIT_RATE: f64 = 0.3;
/// Preferred categories per user.
const PREF_CATEGORIES: usize = 6;
/// Per-modality noise multipliers: text cleanest, CF noisiest.
const MODALITY_NOISE: [f64; 3] = [1.2, 0.5, 2.2];

/// Logistic steepness that makes same-cluster mass about (1 - noise) when
/// candidates spread uniformly over clusters. The weights are
/// sigmoid(k * (affinity - 1/2)), so the same/other odds are e^(k/2);
/// the factor two makes those odds (clusters-1)(1-noise)/noise.
fn affinity_steepness(noise: f64, clusters: usize) -> f64 {
    let eps = 1e-6;
    (2.0 * (((clusters.max(2) - 1) as f64) * (1.0 - noise + eps) / (noise + eps)).ln())
        .clamp(0.0, 60.0)
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Sample an index from `weights` proportionally.
fn weighted_pick<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return rng.gen_range(0..weights.len());
    }
    let mut target = rng.gen_range(0.0..total);
    for (i, w) in weights.iter().enumerate() {
        if target < *w {
            return i;
        }
        target -= w;
    }
    weights.len() - 1
}

struct FeatureMaps {
    image: Vec<Vec<f64>>,
    text: Vec<Vec<f64>>,
    cf: Vec<Vec<f64>>,
}

fn random_map<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Vec<Vec<f64>> {
    // The latent code has exactly two hot units (category, cluster), so
    // unit-range entries give roughly unit-variance feature dimensions.
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect()
}

/// Gaussian from two uniforms; light-weight and deterministic.
fn gauss<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn synthesize_world(config: &SyntheticWorldConfig) -> Result<SyntheticWorld> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let clusters = config.style_dim;
    let latent_dim = config.num_categories + clusters;
    let dims = config.feature_dims;

    // Fixed linear maps from (category one-hot ++ cluster one-hot) to each
    // modality; features are noisy images of the latent code.
    let maps = FeatureMaps {
        image: random_map(latent_dim, dims.image, &mut rng),
        text: random_map(latent_dim, dims.text, &mut rng),
        cf: random_map(latent_dim, dims.cf, &mut rng),
    };

    // Items: categories round-robin (every category populated), clusters
    // uniform.
    let mut items = Vec::with_capacity(config.num_items);
    let mut item_cluster = HashMap::new();
    let mut by_cat: HashMap<u32, Vec<usize>> = HashMap::new();
    let mut by_cat_cluster: HashMap<(u32, usize), Vec<usize>> = HashMap::new();
    for idx in 0..config.num_items {
        let category = (idx % config.num_categories) as u32;
        let cluster = rng.gen_range(0..clusters);
        let mut latent = vec![0.0; latent_dim];
        latent[category as usize] = 1.0;
        latent[config.num_categories + cluster] = 1.0;
        let project = |map: &Vec<Vec<f64>>, dim: usize, mult: f64, rng: &mut ChaCha8Rng| {
            (0..dim)
                .map(|c| {
                    let mut acc = 0.0;
                    for (r, l) in latent.iter().enumerate() {
                        if *l != 0.0 {
                            acc += l * map[r][c];
                        }
                    }
                    acc + config.noise * mult * gauss(rng)
                })
                .collect::<Vec<f64>>()
        };
        let features = RawFeatures {
            image: Some(project(&maps.image, dims.image, MODALITY_NOISE[0], &mut rng)),
            text: Some(project(&maps.text, dims.text, MODALITY_NOISE[1], &mut rng)),
            cf: Some(project(&maps.cf, dims.cf, MODALITY_NOISE[2], &mut rng)),
        };
        // Attributes correlate with the style cluster but keep enough
        // spread that the overlap analysis has a gradient to measure.
        let attributes = ItemAttributes {
            brand: if rng.gen_bool(0.5) {
                (cluster as u32) * 6 + rng.gen_range(0..6)
            } else {
                rng.gen_range(0..48)
            },
            style: if rng.gen_bool(0.75) {
                cluster as u32
            } else {
                rng.gen_range(0..clusters as u32)
            },
            pattern: if rng.gen_bool(0.6) {
                (cluster as u32) * 3 + rng.gen_range(0..3)
            } else {
                rng.gen_range(0..24)
            },
        };
        let item_id = ItemId(idx as u64);
        item_cluster.insert(item_id, cluster);
        by_cat.entry(category).or_default().push(idx);
        by_cat_cluster
            .entry((category, cluster))
            .or_default()
            .push(idx);
        items.push(ItemRecord {
            item_id,
            category: CategoryId(category),
            features,
            attributes: Some(attributes),
        });
    }

    // Categories per segment for the outfit templates.
    let mut segment_cats: Vec<Vec<u32>> = vec![Vec::new(); NUM_SEGMENTS as usize];
    for c in 0..config.num_categories as u32 {
        segment_cats[category_segment(CategoryId(c)) as usize].push(c);
    }
    for (seg, cats) in segment_cats.iter().enumerate() {
        if cats.is_empty() {
            return Err(SynthError::TooFewCategories {
                min: NUM_SEGMENTS as usize,
                got: seg,
            });
        }
    }

    // Categories per (segment, cluster) that actually have items, so a
    // noise-free outfit can always stay inside one cluster.
    let mut seg_cluster_cats: HashMap<(usize, usize), Vec<u32>> = HashMap::new();
    for (cat, cluster) in by_cat_cluster.keys() {
        let seg = category_segment(CategoryId(*cat)) as usize;
        seg_cluster_cats.entry((seg, *cluster)).or_default().push(*cat);
    }
    for cats in seg_cluster_cats.values_mut() {
        cats.sort_unstable();
    }
    let feasible_clusters: Vec<usize> = (0..clusters)
        .filter(|k| (0..NUM_SEGMENTS as usize).all(|s| seg_cluster_cats.contains_key(&(s, *k))))
        .collect();
    if feasible_clusters.is_empty() {
        return Err(SynthError::NoFeasibleCluster);
    }

    // Outfits: one item per segment (plus sometimes a fifth slot), all from
    // one style cluster except for noise-rate slips.
    let mut outfits = Vec::with_capacity(config.num_outfits());
    let mut outfit_cluster = HashMap::new();
    for o in 0..config.num_outfits() {
        let cluster = feasible_clusters[rng.gen_range(0..feasible_clusters.len())];
        let mut slot_cats: Vec<u32> = (0..NUM_SEGMENTS as usize)
            .map(|seg| {
                let cats = &seg_cluster_cats[&(seg, cluster)];
                cats[rng.gen_range(0..cats.len())]
            })
            .collect();
        if rng.gen_bool(0.4) {
            // Fifth slot from a random segment, category distinct from the
            // one already chosen for that segment.
            let seg = rng.gen_range(0..NUM_SEGMENTS as usize);
            let cats = &seg_cluster_cats[&(seg, cluster)];
            if cats.len() > 1 {
                loop {
                    let extra = cats[rng.gen_range(0..cats.len())];
                    if !slot_cats.contains(&extra) {
                        slot_cats.push(extra);
                        break;
                    }
                }
            }
        }
        let mut item_ids = Vec::with_capacity(slot_cats.len());
        for cat in &slot_cats {
            let slip = config.noise > 0.0 && rng.gen_bool(config.noise);
            let pool = if slip {
                &by_cat[cat]
            } else {
                &by_cat_cluster[&(*cat, cluster)]
            };
            let idx = pool[rng.gen_range(0..pool.len())];
            item_ids.push(items[idx].item_id);
        }
        let outfit_id = OutfitId(o as u64);
        outfit_cluster.insert(outfit_id, cluster);
        outfits.push(OutfitRecord { outfit_id, item_ids });
    }

    // Users: a style cluster plus a handful of preferred categories; click
    // weights follow a logistic in style affinity.
    let steep = affinity_steepness(config.noise, clusters);
    let mut user_cluster = HashMap::new();
    let mut user_pref_categories = HashMap::new();
    let mut behaviors = Vec::new();
    let all_cats: Vec<u32> = (0..config.num_categories as u32).collect();
    for u in 0..config.num_users {
        let user_id = UserId(u as u64);
        let cluster = rng.gen_range(0..clusters);
        let mut prefs = all_cats.clone();
        prefs.shuffle(&mut rng);
        prefs.truncate(PREF_CATEGORIES.min(prefs.len()));
        user_cluster.insert(user_id, cluster);
        user_pref_categories
            .insert(user_id, prefs.iter().map(|c| CategoryId(*c)).collect::<Vec<_>>());

        let mut clicks: Vec<ItemId> = Vec::new();
        let click_item = |rng: &mut ChaCha8Rng, clicks: &mut Vec<ItemId>| {
            let cat = if rng.gen_bool(PREF_CATEGORY_RATE) {
                prefs[rng.gen_range(0..prefs.len())]
            } else {
                rng.gen_range(0..config.num_categories as u32)
            };
            let pool = &by_cat[&cat];
            // Logistic style-affinity weights over the category's items.
            let weights: Vec<f64> = pool
                .iter()
                .map(|idx| {
                    let aff = if item_cluster[&items[*idx].item_id] == cluster {
                        1.0
                    } else {
                        0.0
                    };
                    logistic(steep * (aff - 0.5))
                })
                .collect();
            let pick = weighted_pick(&weights, rng);
            clicks.push(items[pool[pick]].item_id);
        };

        let burst = 12 + rng.gen_range(0..8);
        for _ in 0..burst {
            click_item(&mut rng, &mut clicks);
        }
        let outfit_clicks = 6 + rng.gen_range(0..4);
        for _ in 0..outfit_clicks {
            for _ in 0..(3 + rng.gen_range(0..4)) {
                click_item(&mut rng, &mut clicks);
            }
            // Outfit choice: optionally require a preferred category, then
            // weight by logistic style affinity of the outfit cluster.
            let want_pref = rng.gen_bool(PREF_OUTFIT_RATE);
            let candidate_ids: Vec<usize> = (0..outfits.len())
                .filter(|oi| {
                    if !want_pref {
                        return true;
                    }
                    outfits[*oi].item_ids.iter().any(|id| {
                        let cat = items[id.0 as usize].category;
                        prefs.contains(&cat.0)
                    })
                })
                .collect();
            let candidate_ids = if candidate_ids.is_empty() {
                (0..outfits.len()).collect()
            } else {
                candidate_ids
            };
            let weights: Vec<f64> = candidate_ids
                .iter()
                .map(|oi| {
                    let aff = if outfit_cluster[&outfits[*oi].outfit_id] == cluster {
                        1.0
                    } else {
                        0.0
                    };
                    logistic(steep * (aff - 0.5))
                })
                .collect();
            let pick = candidate_ids[weighted_pick(&weights, &mut rng)];
            let start = clicks.len().saturating_sub(super::DEFAULT_HISTORY_CAP);
            behaviors.push(BehaviorRecord {
                user_id,
                outfit_id: outfits[pick].outfit_id,
                clicks: clicks[start..].to_vec(),
            });
        }
    }

    let dataset = Dataset::new(items, outfits, behaviors)
        .unwrap_or_else(|e| panic!("synthetic world failed its own integrity checks: {e}"));

    Ok(SyntheticWorld {
        config: *config,
        dataset,
        truth: WorldTruth {
            style_dim: clusters,
            item_cluster,
            user_cluster,
            user_pref_categories,
            outfit_cluster,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{history_overlap_stats, save_dataset, DatasetPaths, Property};

    fn small_config() -> SyntheticWorldConfig {
        SyntheticWorldConfig {
            num_users: 20,
            num_items: 120,
            num_categories: 12,
            style_dim: 4,
            noise: 0.1,
            seed: 7,
            feature_dims: FeatureDims { image: 4, text: 3, cf: 2 },
        }
    }

    #[test]
    fn zero_noise_outfits_share_one_cluster() {
        let config = SyntheticWorldConfig {
            noise: 0.0,
            ..small_config()
        };
        let world = synthesize_world(&config).unwrap();
        for outfit in &world.dataset.outfits {
            let c0 = world.truth.item_cluster[&outfit.item_ids[0]];
            for id in &outfit.item_ids {
                assert_eq!(world.truth.item_cluster[id], c0);
            }
            assert_eq!(world.truth.outfit_cluster[&outfit.outfit_id], c0);
        }
    }

    #[test]
    fn same_seed_is_byte_identical() {
        let config = small_config();
        let w1 = synthesize_world(&config).unwrap();
        let w2 = synthesize_world(&config).unwrap();
        let dir1 = tempfile::tempdir().unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let p1 = DatasetPaths::in_dir(dir1.path());
        let p2 = DatasetPaths::in_dir(dir2.path());
        save_dataset(&p1, &w1.dataset).unwrap();
        save_dataset(&p2, &w2.dataset).unwrap();
        for (a, b) in [
            (&p1.items, &p2.items),
            (&p1.outfits, &p2.outfits),
            (&p1.behaviors, &p2.behaviors),
        ] {
            assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
        }
    }

    #[test]
    fn different_seeds_differ() {
        let config = small_config();
        let other = SyntheticWorldConfig { seed: 8, ..config };
        let w1 = synthesize_world(&config).unwrap();
        let w2 = synthesize_world(&other).unwrap();
        assert_ne!(w1.dataset.outfits, w2.dataset.outfits);
    }

    #[test]
    fn determinism_across_several_seeds() {
        for seed in 0..5 {
            let config = SyntheticWorldConfig { seed, ..small_config() };
            let a = synthesize_world(&config).unwrap();
            let b = synthesize_world(&config).unwrap();
            assert_eq!(a.dataset.items, b.dataset.items);
            assert_eq!(a.dataset.outfits, b.dataset.outfits);
            assert_eq!(a.dataset.behaviors, b.dataset.behaviors);
        }
    }

    #[test]
    fn category_overlap_brackets_the_target_regime() {
        // At the default config the category overlap should sit in the
        // 70-95% band around the reference 81.3%.
        let config = SyntheticWorldConfig::default();
        let world = synthesize_world(&config).unwrap();
        let stats = history_overlap_stats(&world.dataset, &[Property::Category]).unwrap();
        let overlap = stats[&Property::Category];
        assert!(
            (0.70..=0.97).contains(&overlap),
            "category overlap {overlap} outside the expected band"
        );
    }

    #[test]
    fn config_validation() {
        let mut config = small_config();
        config.noise = 1.5;
        assert!(matches!(
            synthesize_world(&config),
            Err(SynthError::BadNoise(_))
        ));
        let mut config = small_config();
        config.num_categories = 3;
        assert!(matches!(
            synthesize_world(&config),
            Err(SynthError::TooFewCategories { .. })
        ));
        let mut config = small_config();
        config.num_items = 6; // fewer items than categories
        assert!(matches!(
            synthesize_world(&config),
            Err(SynthError::EmptyCategory(_))
        ));
        let mut config = small_config();
        config.num_users = 0;
        assert!(matches!(synthesize_world(&config), Err(SynthError::ZeroCount)));
    }

    #[test]
    fn outfits_meet_dataset_rules() {
        let world = synthesize_world(&small_config()).unwrap();
        assert!(world.dataset.outfits.len() >= 200);
        for outfit in &world.dataset.outfits {
            assert!(outfit.item_ids.len() >= 4);
            let unique: std::collections::HashSet<_> = outfit.item_ids.iter().collect();
            assert_eq!(unique.len(), outfit.item_ids.len());
        }
        // Every behavior passed the >=10 prior-clicks rule by construction.
        for b in &world.dataset.behaviors {
            assert!(b.clicks.len() >= 10);
            assert!(b.clicks.len() <= 50);
        }
    }
}
