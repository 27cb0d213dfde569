//! Acceptance suite: one test per criterion, each printing a PASS line
//! with the measured value once its assertions hold.
//!
//! The expensive criteria share one lazily-built stack (synthetic world,
//! trained embedding, trained FOM, trained POG) behind a OnceLock so the
//! suite trains each model exactly once.

use outfitforge::data::synth::{synthesize_world, SyntheticWorld, SyntheticWorldConfig};
use outfitforge::data::{build_training_pairs, PairConfig};
use outfitforge::embedding::{
    train_embedding, EmbedConfig, EmbeddingTable, FeatureDims, ItemEmbedding, ModalityMask,
};
use outfitforge::evalsim::sim::{
    gap_in_std_errors, simulate_sessions, SimAssets, SimPolicy, Strategy,
};
use outfitforge::evalsim::{
    auc, build_cp_instances, build_fitb_instances, eval_cp, eval_fitb, split_outfits,
};
use outfitforge::fom::{train_fom, FomConfig, FomModel, FomTrainConfig, Outfit, OutfitItem};
use outfitforge::ids::{CategoryId, ItemId, OutfitId, UserId};
use outfitforge::pog::{
    default_rule, pog_validation_loss, train_pog, train_pog_from, PogConfig, PogModel,
    PogTrainConfig, UserHistory,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;
use std::time::Instant;

const WORLD_SEED: u64 = 1;
const SPLIT_SEED: u64 = 42;
const EVAL_SEED: u64 = 2;

fn world_config() -> SyntheticWorldConfig {
    SyntheticWorldConfig {
        num_users: 400,
        num_items: 2400,
        num_categories: 24,
        style_dim: 16,
        noise: 0.02,
        seed: WORLD_SEED,
        feature_dims: FeatureDims {
            image: 24,
            text: 12,
            cf: 12,
        },
    }
}

fn embed_config() -> EmbedConfig {
    EmbedConfig {
        margin: 0.1,
        embed_dim: 32,
        learning_rate: 0.01,
        steps: 4000,
        seed: WORLD_SEED,
        mask: ModalityMask::default(),
        dims: world_config().feature_dims,
    }
}

fn fom_config() -> FomConfig {
    FomConfig {
        embed_dim: 32,
        model_dim: 16,
        layers: 2,
        heads: 2,
        num_negatives: 3,
        allow_empty_negatives: false,
    }
}

fn pog_config() -> PogConfig {
    PogConfig {
        embed_dim: 32,
        model_dim: 16,
        per_layers: 2,
        gen_layers: 2,
        heads: 2,
        num_negatives: 3,
        max_len: 8,
        history_cap: 50,
    }
}

struct Stack {
    world: SyntheticWorld,
    table: EmbeddingTable,
    fom: FomModel,
    pog: PogModel,
    train_outfits: Vec<Outfit>,
    test_outfits: Vec<Outfit>,
    pairs: Vec<(UserHistory, Outfit)>,
    train_seconds: f64,
}

fn stack() -> &'static Stack {
    static STACK: OnceLock<Stack> = OnceLock::new();
    STACK.get_or_init(|| {
        let start = Instant::now();
        let world = synthesize_world(&world_config()).expect("world");
        let (embed_model, _) =
            train_embedding(&world.dataset.items, &embed_config()).expect("embedding");
        let table = EmbeddingTable::build(&world.dataset.items, &embed_model).expect("table");
        let outfits: Vec<Outfit> = world
            .dataset
            .outfits
            .iter()
            .map(|o| world.dataset.resolve_outfit(o).expect("resolve"))
            .collect();
        let (train_outfits, test_outfits) = split_outfits(&outfits, 0.1, SPLIT_SEED);
        let fom_train = FomTrainConfig {
            epochs: 20,
            learning_rate: 0.003,
            warmup_steps: 1500,
            seed: WORLD_SEED,
            sample_single_position: false,
        };
        let (fom, _) = train_fom(&train_outfits, &table, fom_config(), &fom_train).expect("fom");
        let (pairs, _) = build_training_pairs(&world.dataset, &PairConfig::default()).expect("pairs");
        let pog_train = PogTrainConfig {
            epochs: 8,
            learning_rate: 0.003,
            warmup_steps: 1000,
            seed: WORLD_SEED,
        };
        let (pog, _) = train_pog(&pairs, &table, pog_config(), &pog_train, Some(&fom)).expect("pog");
        Stack {
            world,
            table,
            fom,
            pog,
            train_outfits,
            test_outfits,
            pairs,
            train_seconds: start.elapsed().as_secs_f64(),
        }
    })
}

fn random_table(n: usize, d_e: usize, seed: u64) -> EmbeddingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    EmbeddingTable::from_embeddings(
        (0..n)
            .map(|i| ItemEmbedding {
                item_id: ItemId(i as u64),
                vec: (0..d_e).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            })
            .collect(),
    )
    .expect("table")
}

fn toy_outfit(ids: &[u64]) -> Outfit {
    Outfit::new(
        OutfitId(999),
        ids.iter()
            .map(|i| OutfitItem {
                item: ItemId(*i),
                category: CategoryId((*i % 4) as u32),
            })
            .collect(),
    )
    .expect("outfit")
}

// Criterion 1: gradient correctness for the three losses at reduced size,
// at least 20 seeds, under 60 seconds.
#[test]
fn criterion_1_gradient_correctness() {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for seed in 0..20u64 {
        // Alternate between the two layer depths allowed by the criterion.
        let (dm, layers) = if seed % 2 == 0 { (8, 1) } else { (6, 2) };
        let results = outfitforge::cli::gradcheck_all(dm, layers, seed).expect("gradcheck");
        for (name, err) in results {
            assert!(
                err <= 1e-3,
                "seed {seed} {name} gradient error {err} exceeds 1e-3"
            );
            worst = worst.max(err);
            checked += 1;
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "gradient checks took {elapsed:.1}s");
    assert!(checked >= 60);
    println!(
        "[PASS] criterion 1: gradient correctness, {checked} checks over 20 seeds, worst {worst:.2e} <= 1e-3, {elapsed:.1}s"
    );
}

// Criterion 2: set invariance of the masked-item probability and cp_score
// under all permutations of outfits with n <= 5, and row-equivariance of
// the Per encoder; drift at most 1e-9, under 30 seconds.
#[test]
fn criterion_2_set_invariance() {
    let start = Instant::now();
    let config = FomConfig {
        embed_dim: 8,
        model_dim: 8,
        layers: 2,
        heads: 2,
        num_negatives: 3,
        allow_empty_negatives: false,
    };
    let model = FomModel::init(config, 7).expect("model");
    let table = random_table(40, 8, 8);

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 1 {
            return vec![vec![0]];
        }
        let mut out = Vec::new();
        for perm in permutations(n - 1) {
            for slot in 0..n {
                let mut next = perm.clone();
                next.insert(slot, n - 1);
                out.push(next);
            }
        }
        out
    }

    let mut max_prob_drift: f64 = 0.0;
    let mut max_cp_drift: f64 = 0.0;
    for n in 2..=5usize {
        let ids: Vec<u64> = (0..n as u64).collect();
        let base_outfit = toy_outfit(&ids);
        let base_rows: Vec<&[f64]> = ids
            .iter()
            .map(|i| table.get(ItemId(*i)).expect("row"))
            .collect();
        // Reference masked-item probability with the mask on item 0.
        let negs: Vec<&[f64]> = (10..13)
            .map(|i| table.get(ItemId(i)).expect("neg"))
            .collect();
        let neg_h = model.transition(&negs).expect("neg transition");
        let neg_rows: Vec<&[f64]> = (0..3).map(|i| neg_h.row(i)).collect();
        let truth_h = model
            .transition(&[base_rows[0]])
            .expect("truth transition");
        let g0 = model.encode_masked(&base_rows, 0).expect("encode");
        let p0 = model
            .masked_item_prob(&g0, truth_h.row(0), &neg_rows)
            .expect("prob");
        let cp0 = model.cp_score(&base_outfit, &table, 77).expect("cp");

        for perm in permutations(n) {
            let rows: Vec<&[f64]> = perm.iter().map(|i| base_rows[*i]).collect();
            let mask_pos = perm.iter().position(|i| *i == 0).expect("tracked");
            let g = model.encode_masked(&rows, mask_pos).expect("encode");
            let p = model
                .masked_item_prob(&g, truth_h.row(0), &neg_rows)
                .expect("prob");
            max_prob_drift = max_prob_drift.max((p - p0).abs());

            let perm_ids: Vec<u64> = perm.iter().map(|i| ids[*i]).collect();
            let cp = model
                .cp_score(&toy_outfit(&perm_ids), &table, 77)
                .expect("cp");
            max_cp_drift = max_cp_drift.max((cp - cp0).abs());
        }
    }
    assert!(max_prob_drift <= 1e-9, "probability drift {max_prob_drift}");
    assert!(max_cp_drift <= 1e-9, "cp_score drift {max_cp_drift}");

    // Per-encoder row-equivariance under history permutation.
    let pconfig = PogConfig {
        embed_dim: 8,
        model_dim: 8,
        per_layers: 2,
        gen_layers: 1,
        heads: 2,
        num_negatives: 3,
        max_len: 8,
        history_cap: 50,
    };
    let pog = PogModel::init(pconfig, 9).expect("pog");
    let mut max_row_drift: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..20 {
        let m = rng.gen_range(2..=6usize);
        let ids: Vec<ItemId> = (0..m as u64).map(ItemId).collect();
        let history = UserHistory::new(UserId(1), ids.clone()).expect("history");
        let base = pog.per_encode(&history, &table).expect("encode");
        let mut perm: Vec<usize> = (0..m).collect();
        for i in (1..m).rev() {
            let j = rng.gen_range(0..=i);
            perm.swap(i, j);
        }
        let permuted_ids: Vec<ItemId> = perm.iter().map(|i| ids[*i]).collect();
        let permuted = pog
            .per_encode(
                &UserHistory::new(UserId(1), permuted_ids).expect("history"),
                &table,
            )
            .expect("encode");
        for (new_row, old_row) in perm.iter().enumerate() {
            for c in 0..8 {
                max_row_drift =
                    max_row_drift.max((permuted.get(new_row, c) - base.get(*old_row, c)).abs());
            }
        }
    }
    assert!(max_row_drift <= 1e-9, "per-encoder drift {max_row_drift}");

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 30.0, "set invariance took {elapsed:.1}s");
    println!(
        "[PASS] criterion 2: set invariance, prob drift {max_prob_drift:.2e}, cp drift {max_cp_drift:.2e}, per drift {max_row_drift:.2e}, {elapsed:.1}s"
    );
}

// Criterion 3: decoder causality over 100 random prefixes.
#[test]
fn criterion_3_decoder_causality() {
    let config = PogConfig {
        embed_dim: 8,
        model_dim: 8,
        per_layers: 1,
        gen_layers: 2,
        heads: 2,
        num_negatives: 3,
        max_len: 8,
        history_cap: 50,
    };
    let model = PogModel::init(config, 11).expect("pog");
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut max_drift: f64 = 0.0;
    for _ in 0..100 {
        let m = rng.gen_range(1..=5usize);
        let memory_rows: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let memory = outfitforge::Tensor2::from_rows(
            &memory_rows.iter().map(|r| r.as_slice()).collect::<Vec<_>>(),
        )
        .expect("memory");
        let len = rng.gen_range(1..=6usize);
        let prefix: Vec<Vec<f64>> = (0..len)
            .map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let refs: Vec<&[f64]> = prefix.iter().map(|r| r.as_slice()).collect();
        let base = model.gen_decode(&refs, &memory).expect("decode");

        // Modify the suffix after a random cut point (including appending).
        let cut = rng.gen_range(0..len);
        let mut edited = prefix.clone();
        for row in edited.iter_mut().skip(cut + 1) {
            for v in row.iter_mut() {
                *v += rng.gen_range(-2.0..2.0);
            }
        }
        edited.push((0..8).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let refs2: Vec<&[f64]> = edited.iter().map(|r| r.as_slice()).collect();
        let changed = model.gen_decode(&refs2, &memory).expect("decode");
        // Rows up to and including the cut (offset by START at row 0).
        for t in 0..=(cut + 1) {
            for c in 0..8 {
                max_drift = max_drift.max((base.get(t, c) - changed.get(t, c)).abs());
            }
        }
    }
    assert!(max_drift <= 1e-9, "causality drift {max_drift}");
    println!("[PASS] criterion 3: decoder causality, max drift {max_drift:.2e} over 100 prefixes");
}

// Criterion 4: trained FITB accuracy at least 0.85 on the held-out split,
// untrained baseline at chance (0.25 +- 0.03 over >= 2000 instances),
// training within 10 minutes.
#[test]
fn criterion_4_synthetic_fitb() {
    let stack = stack();
    assert!(
        stack.world.dataset.outfits.len() >= 2000,
        "world too small: {}",
        stack.world.dataset.outfits.len()
    );
    assert!(
        stack.train_seconds < 600.0,
        "stack training took {:.0}s",
        stack.train_seconds
    );
    let instances = build_fitb_instances(&stack.test_outfits, EVAL_SEED).expect("instances");
    let accuracy = eval_fitb(&stack.fom, &stack.table, &instances).expect("eval");
    assert!(
        accuracy >= 0.85,
        "trained FITB accuracy {accuracy:.4} below 0.85"
    );

    // Untrained model sits at chance over at least 2000 instances.
    let untrained = FomModel::init(fom_config(), 12345).expect("untrained");
    let all_outfits: Vec<Outfit> = stack
        .train_outfits
        .iter()
        .chain(&stack.test_outfits)
        .cloned()
        .collect();
    let many = build_fitb_instances(&all_outfits, EVAL_SEED + 1).expect("instances");
    let subset = &many[..many.len().min(2500)];
    assert!(subset.len() >= 2000);
    let chance = eval_fitb(&untrained, &stack.table, subset).expect("eval");
    assert!(
        (chance - 0.25).abs() <= 0.03,
        "untrained FITB accuracy {chance:.4} not at chance"
    );
    println!(
        "[PASS] criterion 4: FITB accuracy {accuracy:.4} >= 0.85 (n={}), untrained {chance:.4} within 0.25 +- 0.03 (n={}), stack {:.0}s",
        instances.len(),
        subset.len(),
        stack.train_seconds
    );
}

// Criterion 5: trained CP AUC at least 0.90, and the rank-sum AUC equals
// exhaustive pair counting on every label/score set of size <= 8 over a
// three-value score grid.
#[test]
fn criterion_5_synthetic_cp() {
    let stack = stack();
    let instances = build_cp_instances(&stack.test_outfits, EVAL_SEED).expect("instances");
    let metric = eval_cp(&stack.fom, &stack.table, &instances, EVAL_SEED).expect("eval");
    assert!(metric >= 0.90, "CP AUC {metric:.4} below 0.90");

    // Independent oracle: count positive-negative pairs directly.
    fn pair_counting(labeled: &[(f64, bool)]) -> f64 {
        let mut hits = 0.0;
        let mut pairs = 0.0;
        for (sp, _) in labeled.iter().filter(|(_, l)| *l) {
            for (sn, _) in labeled.iter().filter(|(_, l)| !*l) {
                pairs += 1.0;
                if sp > sn {
                    hits += 1.0;
                } else if sp == sn {
                    hits += 0.5;
                }
            }
        }
        hits / pairs
    }
    let grid = [0.0, 0.5, 1.0];
    let mut cases = 0usize;
    for n in 2..=8usize {
        for label_bits in 1..(1u32 << n) - 1 {
            let labels: Vec<bool> = (0..n).map(|i| label_bits & (1 << i) != 0).collect();
            let combos = grid.len().pow(n as u32);
            for s in 0..combos {
                let mut idx = s;
                let labeled: Vec<(f64, bool)> = (0..n)
                    .map(|i| {
                        let v = grid[idx % grid.len()];
                        idx /= grid.len();
                        (v, labels[i])
                    })
                    .collect();
                let fast = auc(&labeled).expect("auc");
                let slow = pair_counting(&labeled);
                assert_eq!(fast, slow, "AUC mismatch on {labeled:?}");
                cases += 1;
            }
        }
    }
    println!(
        "[PASS] criterion 5: CP AUC {metric:.4} >= 0.90 (n={}), rank-sum equals pair counting on {cases} exhaustive small sets",
        instances.len()
    );
}

// Criterion 6: the all-modality configuration's CP AUC is within 0.02 of
// (or above) every single-modality configuration.
#[test]
fn criterion_6_modality_ablation() {
    let stack = stack();
    let mut aucs = Vec::new();
    for mask in [
        ("all", ModalityMask::default()),
        ("image", ModalityMask::single("image").expect("mask")),
        ("text", ModalityMask::single("text").expect("mask")),
        ("cf", ModalityMask::single("cf").expect("mask")),
    ] {
        let config = EmbedConfig {
            mask: mask.1,
            ..embed_config()
        };
        let (embed_model, _) =
            train_embedding(&stack.world.dataset.items, &config).expect("embed");
        let table =
            EmbeddingTable::build(&stack.world.dataset.items, &embed_model).expect("table");
        let train = FomTrainConfig {
            epochs: 10,
            learning_rate: 0.003,
            warmup_steps: 1500,
            seed: WORLD_SEED,
            sample_single_position: false,
        };
        let (fom, _) = train_fom(&stack.train_outfits, &table, fom_config(), &train).expect("fom");
        let instances = build_cp_instances(&stack.test_outfits, EVAL_SEED).expect("instances");
        let metric = eval_cp(&fom, &table, &instances, EVAL_SEED).expect("eval");
        aucs.push((mask.0, metric));
    }
    let all_auc = aucs[0].1;
    for (name, single) in &aucs[1..] {
        assert!(
            all_auc >= single - 0.02,
            "all-modality AUC {all_auc:.4} below {name} AUC {single:.4} - 0.02"
        );
    }
    let detail: Vec<String> = aucs.iter().map(|(n, a)| format!("{n}={a:.4}")).collect();
    println!(
        "[PASS] criterion 6: modality ablation direction, {}",
        detail.join(", ")
    );
}

// Criterion 7: warm-starting the Gen network from the trained FOM reaches
// the scratch model's end-of-budget validation loss in no more training
// steps than scratch needs, median over three seeds.
#[test]
fn criterion_7_fom_init_benefit() {
    let stack = stack();
    let n_val = stack.pairs.len() / 10;
    let val = &stack.pairs[..n_val];
    let train_pairs: Vec<(UserHistory, Outfit)> = stack.pairs[n_val..].to_vec();
    let chunks = 8usize;
    let chunk_epoch_steps = train_pairs.len();

    // Train one budget epoch in `chunks` slices, recording validation loss
    // after each slice; returns cumulative steps and losses.
    let run = |warm: bool, seed: u64| -> Vec<(usize, f64)> {
        let mut model = if warm {
            PogModel::init_gen_from_fom(&stack.fom, pog_config(), seed).expect("init")
        } else {
            PogModel::init(pog_config(), seed).expect("init")
        };
        let mut order: Vec<usize> = (0..train_pairs.len()).collect();
        use rand::seq::SliceRandom;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
        let mut curve = Vec::new();
        let mut steps = 0usize;
        for chunk in 0..chunks {
            let lo = chunk * chunk_epoch_steps / chunks;
            let hi = (chunk + 1) * chunk_epoch_steps / chunks;
            let slice: Vec<(UserHistory, Outfit)> =
                order[lo..hi].iter().map(|i| train_pairs[*i].clone()).collect();
            let tc = PogTrainConfig {
                epochs: 1,
                learning_rate: 0.003,
                warmup_steps: if chunk == 0 { 200 } else { 0 },
                seed: seed + chunk as u64,
            };
            let (m2, losses) = train_pog_from(model, &slice, &stack.table, &tc).expect("train");
            model = m2;
            steps += losses.len();
            let vloss = pog_validation_loss(&model, val, &stack.table, 7).expect("val");
            curve.push((steps, vloss));
        }
        curve
    };

    let mut scratch_steps = Vec::new();
    let mut warm_steps = Vec::new();
    for seed in [101u64, 202, 303] {
        let scratch = run(false, seed);
        let warm = run(true, seed);
        let target = scratch.last().expect("curve").1;
        let first_at = |curve: &[(usize, f64)]| -> usize {
            curve
                .iter()
                .find(|(_, v)| *v <= target)
                .map(|(s, _)| *s)
                .unwrap_or(usize::MAX)
        };
        scratch_steps.push(first_at(&scratch));
        warm_steps.push(first_at(&warm));
    }
    let median = |mut v: Vec<usize>| -> usize {
        v.sort_unstable();
        v[v.len() / 2]
    };
    let med_scratch = median(scratch_steps.clone());
    let med_warm = median(warm_steps.clone());
    assert!(
        med_warm <= med_scratch,
        "FOM-init median steps {med_warm} exceed scratch {med_scratch} (warm {warm_steps:?}, scratch {scratch_steps:?})"
    );
    println!(
        "[PASS] criterion 7: FOM-init reaches the scratch validation loss in median {med_warm} steps vs scratch {med_scratch} (warm {warm_steps:?}, scratch {scratch_steps:?})"
    );
}

// Criterion 8: simulated CTR ordering POG > CF > RR with each gap at
// least three standard errors over at least 10000 sessions, within five
// minutes.
#[test]
fn criterion_8_strategy_ordering() {
    let stack = stack();
    let start = Instant::now();
    let assets = SimAssets {
        table: &stack.table,
        pog: Some(&stack.pog),
    };
    let policy = SimPolicy::default();
    let sessions = 10_000;
    let rr = simulate_sessions(Strategy::Rr, &stack.world, &assets, sessions, 3, &policy)
        .expect("rr");
    let cf = simulate_sessions(Strategy::Cf, &stack.world, &assets, sessions, 3, &policy)
        .expect("cf");
    let pog = simulate_sessions(Strategy::Pog, &stack.world, &assets, sessions, 3, &policy)
        .expect("pog");
    let pog_vs_cf = gap_in_std_errors(&pog, &cf);
    let cf_vs_rr = gap_in_std_errors(&cf, &rr);
    assert!(
        pog.ctr > cf.ctr && pog_vs_cf >= 3.0,
        "POG {:.4} vs CF {:.4}: gap {:.1} SE",
        pog.ctr,
        cf.ctr,
        pog_vs_cf
    );
    assert!(
        cf.ctr > rr.ctr && cf_vs_rr >= 3.0,
        "CF {:.4} vs RR {:.4}: gap {:.1} SE",
        cf.ctr,
        rr.ctr,
        cf_vs_rr
    );
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 300.0, "simulation took {elapsed:.0}s");
    println!(
        "[PASS] criterion 8: CTR ordering POG {:.4} > CF {:.4} > RR {:.4}; gaps {:.1} and {:.1} SE over {sessions} sessions, {elapsed:.1}s",
        pog.ctr, cf.ctr, rr.ctr, pog_vs_cf, cf_vs_rr
    );
}

// Criterion 9: 1000 generated outfits with no duplicate items, no rule
// violations, termination within max_len, and bit-identical regeneration.
#[test]
fn criterion_9_generation_contract() {
    let stack = stack();
    let mut categories: Vec<CategoryId> = stack
        .world
        .dataset
        .items
        .iter()
        .map(|i| i.category)
        .collect();
    categories.sort();
    categories.dedup();
    let rule = default_rule(&categories).expect("rule");
    let candidates: Vec<(ItemId, CategoryId)> = stack
        .world
        .dataset
        .items
        .iter()
        .map(|i| (i.item_id, i.category))
        .collect();

    let mut generated = 0usize;
    let mut histories = stack.pairs.iter().map(|(h, _)| h).cycle();
    let mut seen_rows = Vec::new();
    while generated < 1000 {
        let history = histories.next().expect("history");
        let gen = stack
            .pog
            .generate(history, &stack.table, &candidates, &rule)
            .expect("generate");
        // No duplicates.
        let unique: std::collections::HashSet<_> = gen.item_ids.iter().collect();
        assert_eq!(unique.len(), gen.item_ids.len(), "duplicate item generated");
        // Terminates within max_len and satisfies the rule prefix.
        assert!(gen.item_ids.len() <= pog_config().max_len);
        assert!(gen.item_ids.len() >= rule.len());
        for (slot, item) in gen.item_ids.iter().take(rule.len()).enumerate() {
            let category = stack.world.dataset.item(*item).expect("item").category;
            assert!(
                rule.admits(slot, category),
                "slot {slot} category {category} violates the rule"
            );
        }
        seen_rows.push((history.user_id, gen));
        generated += 1;
    }
    // Bit-identical regeneration.
    let mut histories = stack.pairs.iter().map(|(h, _)| h).cycle();
    for (expected_user, expected) in &seen_rows {
        let history = histories.next().expect("history");
        assert_eq!(history.user_id, *expected_user);
        let again = stack
            .pog
            .generate(history, &stack.table, &candidates, &rule)
            .expect("generate");
        assert_eq!(&again, expected, "regeneration differs");
    }
    println!(
        "[PASS] criterion 9: 1000 generations, zero duplicates, zero rule violations, all within max_len, bit-identical regeneration"
    );
}

// Criterion 10: checkpoint round-trips byte-identically and a CLI run is
// reproducible byte-exactly from its manifest.
#[test]
fn criterion_10_reproducibility() {
    use outfitforge::checkpoint::{fom_to_checkpoint, Checkpoint};
    let dir = tempfile::tempdir().expect("tempdir");

    // Checkpoint round trip.
    let model = FomModel::init(fom_config(), 5).expect("model");
    let ckpt = fom_to_checkpoint(&model, 5, "feedface");
    let p1 = dir.path().join("a.ckpt");
    let p2 = dir.path().join("b.ckpt");
    ckpt.write(&p1).expect("write");
    Checkpoint::read(&p1).expect("read").write(&p2).expect("write");
    assert_eq!(
        std::fs::read(&p1).expect("read"),
        std::fs::read(&p2).expect("read"),
        "checkpoint round trip not byte-identical"
    );

    // CLI run reproduced from its manifest.
    let out1 = dir.path().join("run1");
    let out2 = dir.path().join("run2");
    let synth_args = |out: &std::path::Path| {
        vec![
            "outfitforge".to_string(),
            "synth".to_string(),
            "--out".to_string(),
            out.display().to_string(),
            "--seed".to_string(),
            "9".to_string(),
            "--users".to_string(),
            "30".to_string(),
            "--items".to_string(),
            "200".to_string(),
            "--categories".to_string(),
            "8".to_string(),
            "--style-dim".to_string(),
            "4".to_string(),
        ]
    };
    assert_eq!(outfitforge::cli::dispatch(synth_args(&out1)), 0);

    // Rebuild the argv from the manifest's config and re-run.
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out1.join("manifest.json")).expect("manifest"),
    )
    .expect("json");
    let config = &manifest["config"];
    let argv = vec![
        "outfitforge".to_string(),
        "synth".to_string(),
        "--out".to_string(),
        out2.display().to_string(),
        "--seed".to_string(),
        config["seed"].to_string(),
        "--users".to_string(),
        config["num_users"].to_string(),
        "--items".to_string(),
        config["num_items"].to_string(),
        "--categories".to_string(),
        config["num_categories"].to_string(),
        "--style-dim".to_string(),
        config["style_dim"].to_string(),
        "--noise".to_string(),
        config["noise"].to_string(),
        "--image-dim".to_string(),
        config["feature_dims"]["image"].to_string(),
        "--text-dim".to_string(),
        config["feature_dims"]["text"].to_string(),
        "--cf-dim".to_string(),
        config["feature_dims"]["cf"].to_string(),
    ];
    assert_eq!(outfitforge::cli::dispatch(argv), 0);
    for name in ["items.jsonl", "outfits.csv", "behaviors.csv", "stats.json"] {
        assert_eq!(
            std::fs::read(out1.join(name)).expect("read"),
            std::fs::read(out2.join(name)).expect("read"),
            "{name} differs between the original run and the manifest replay"
        );
    }
    println!(
        "[PASS] criterion 10: checkpoint round trip byte-identical; synth run replayed byte-exactly from its manifest"
    );
}
