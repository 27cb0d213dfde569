//! The `outfitforge` command line: synthesize worlds, train the three
//! models, evaluate FITB/CP, generate outfits, run the click simulation and
//! gradient-check the losses. Every run writes its artifacts plus a
//! `manifest.json` carrying the resolved config, seed, git description and
//! the sha256 of each artifact, so a run is reproducible byte for byte.

use crate::checkpoint::{
    embed_from_checkpoint, embed_to_checkpoint, fom_from_checkpoint, fom_to_checkpoint,
    pog_from_checkpoint, pog_to_checkpoint, Checkpoint,
};
use crate::data::{
    build_training_pairs, dataset_stats, load_dataset, save_dataset, Dataset, DatasetPaths,
    PairConfig,
};
use crate::data::synth::{synthesize_world, SyntheticWorld, SyntheticWorldConfig};
use crate::embedding::{
    train_embedding, EmbedConfig, EmbeddingTable, FeatureDims, ModalityMask,
};
use crate::evalsim::sim::{simulate_sessions, SimAssets, SimPolicy, SimReport, Strategy};
use crate::evalsim::{
    build_cp_instances, build_fitb_instances, eval_cp, eval_fitb, split_outfits, EvalReport,
};
use crate::fom::{train_fom, FomConfig, FomTrainConfig, Outfit};
use crate::pog::{default_rule, train_pog, PogConfig, PogTrainConfig, UserHistory};
use crate::tensor::grad_check;
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(name = "outfitforge", version, about = "Outfit compatibility and personalized generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset (items, outfits, behaviors) plus stats.
    Synth(SynthArgs),
    /// Train the multi-modal item embedding with the triplet loss.
    TrainEmbed(TrainEmbedArgs),
    /// Train the masked-item compatibility model.
    TrainFom(TrainFomArgs),
    /// Train the personalized generator (optionally warm-started from FOM).
    TrainPog(TrainPogArgs),
    /// Fill-in-the-blank accuracy on the held-out split.
    EvalFitb(EvalArgs),
    /// Compatibility-prediction AUC on the held-out split.
    EvalCp(EvalArgs),
    /// Generate one outfit per user from their click history.
    Generate(GenerateArgs),
    /// Simulate sessions and compare RR / CF / POG click-through rates.
    Simulate(SimulateArgs),
    /// Check analytic gradients of all three losses against central
    /// differences; exits nonzero if any error exceeds 1e-3.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, env = "OUTFITFORGE_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 400)]
    users: usize,
    #[arg(long, default_value_t = 1500)]
    items: usize,
    #[arg(long, default_value_t = 40)]
    categories: usize,
    #[arg(long, default_value_t = 8)]
    style_dim: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 16)]
    image_dim: usize,
    #[arg(long, default_value_t = 8)]
    text_dim: usize,
    #[arg(long, default_value_t = 8)]
    cf_dim: usize,
}

impl SynthArgs {
    fn world_config(&self) -> SyntheticWorldConfig {
        SyntheticWorldConfig {
            num_users: self.users,
            num_items: self.items,
            num_categories: self.categories,
            style_dim: self.style_dim,
            noise: self.noise,
            seed: self.seed,
            feature_dims: FeatureDims {
                image: self.image_dim,
                text: self.text_dim,
                cf: self.cf_dim,
            },
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
struct TrainEmbedArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, env = "OUTFITFORGE_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    embed_dim: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 4000)]
    steps: usize,
    #[arg(long, default_value_t = 0.1)]
    margin: f64,
    /// Comma-separated subset of image,text,cf.
    #[arg(long, default_value = "image,text,cf")]
    modalities: String,
}

#[derive(Debug, Clone, Args, Serialize)]
struct TrainFomArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    embed: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, env = "OUTFITFORGE_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    model_dim: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 2)]
    heads: usize,
    #[arg(long, default_value_t = 3)]
    negatives: usize,
    #[arg(long, default_value_t = 3)]
    epochs: usize,
    #[arg(long, default_value_t = 0.003)]
    lr: f64,
    #[arg(long, default_value_t = 1500)]
    warmup: usize,
    #[arg(long, default_value_t = 0.1)]
    test_frac: f64,
    #[arg(long, default_value_t = 42)]
    split_seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
struct TrainPogArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    embed: PathBuf,
    /// Warm-start the Gen network from this FOM checkpoint.
    #[arg(long)]
    fom: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, env = "OUTFITFORGE_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 16)]
    model_dim: usize,
    #[arg(long, default_value_t = 2)]
    per_layers: usize,
    #[arg(long, default_value_t = 2)]
    gen_layers: usize,
    #[arg(long, default_value_t = 2)]
    heads: usize,
    #[arg(long, default_value_t = 3)]
    negatives: usize,
    #[arg(long, default_value_t = 2)]
    epochs: usize,
    #[arg(long, default_value_t = 0.003)]
    lr: f64,
    #[arg(long, default_value_t = 1000)]
    warmup: usize,
    #[arg(long, default_value_t = 8)]
    max_len: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    embed: PathBuf,
    #[arg(long)]
    fom: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, env = "OUTFITFORGE_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    test_frac: f64,
    #[arg(long, default_value_t = 42)]
    split_seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
struct GenerateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    embed: PathBuf,
    #[arg(long)]
    pog: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, env = "OUTFITFORGE_SEED", default_value_t = 0)]
    seed: u64,
    /// Generate for at most this many users (sorted by id); 0 = all.
    #[arg(long, default_value_t = 0)]
    limit: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
struct SimulateArgs {
    /// Path to a synth run's manifest.json; the world is rebuilt from it.
    #[arg(long)]
    world_manifest: PathBuf,
    #[arg(long)]
    embed: PathBuf,
    #[arg(long)]
    pog: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, env = "OUTFITFORGE_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10000)]
    sessions: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 8)]
    dm: usize,
    #[arg(long, default_value_t = 1)]
    layers: usize,
    #[arg(long, env = "OUTFITFORGE_SEED", default_value_t = 7)]
    seed: u64,
}

/// Parse and run; returns the process exit status. Usage errors exit 2,
/// failed invariants exit 1.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

type AnyError = Box<dyn std::error::Error>;

fn run(command: Command) -> Result<i32, AnyError> {
    match command {
        Command::Synth(args) => cmd_synth(args),
        Command::TrainEmbed(args) => cmd_train_embed(args),
        Command::TrainFom(args) => cmd_train_fom(args),
        Command::TrainPog(args) => cmd_train_pog(args),
        Command::EvalFitb(args) => cmd_eval(args, true),
        Command::EvalCp(args) => cmd_eval(args, false),
        Command::Generate(args) => cmd_generate(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
    }
}

// ---- manifest plumbing --------------------------------------------------------

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn config_hash<C: Serialize>(config: &C) -> Result<String, AnyError> {
    Ok(sha256_hex(serde_json::to_string(config)?.as_bytes()))
}

fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .unwrap_or_else(|| "unknown".to_string())
}

#[derive(Debug, Serialize)]
struct Manifest<C: Serialize> {
    command: String,
    config: C,
    seed: u64,
    git_describe: String,
    config_hash: String,
    artifacts: BTreeMap<String, String>,
}

/// Collects artifact bytes, writes them, and emits manifest.json last.
struct ArtifactWriter {
    dir: PathBuf,
    artifacts: BTreeMap<String, String>,
}

impl ArtifactWriter {
    fn new(dir: &Path) -> Result<Self, AnyError> {
        std::fs::create_dir_all(dir)?;
        Ok(ArtifactWriter {
            dir: dir.to_path_buf(),
            artifacts: BTreeMap::new(),
        })
    }

    fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, AnyError> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes)?;
        self.artifacts.insert(name.to_string(), sha256_hex(bytes));
        Ok(path)
    }

    fn write_json<V: Serialize>(&mut self, name: &str, value: &V) -> Result<PathBuf, AnyError> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    /// Register an artifact that something else already wrote to disk.
    fn register(&mut self, name: &str) -> Result<(), AnyError> {
        let bytes = std::fs::read(self.dir.join(name))?;
        self.artifacts.insert(name.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    fn finish<C: Serialize>(self, command: &str, config: C, seed: u64) -> Result<(), AnyError> {
        let hash = config_hash(&config)?;
        let manifest = Manifest {
            command: command.to_string(),
            config,
            seed,
            git_describe: git_describe(),
            config_hash: hash,
            artifacts: self.artifacts,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        std::fs::write(self.dir.join("manifest.json"), text)?;
        Ok(())
    }
}

fn loss_curve_csv(losses: &[f64]) -> String {
    let mut out = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        out.push_str(&format!("{i},{l}\n"));
    }
    out
}

fn load_table(data: &Path, embed_ckpt: &Path) -> Result<(Dataset, EmbeddingTable), AnyError> {
    let dataset = load_dataset(&DatasetPaths::in_dir(data))?;
    let (model, _) = embed_from_checkpoint(&Checkpoint::read(embed_ckpt)?)?;
    let table = EmbeddingTable::build(&dataset.items, &model)?;
    Ok((dataset, table))
}

fn resolved_outfits(dataset: &Dataset) -> Result<Vec<Outfit>, AnyError> {
    Ok(dataset
        .outfits
        .iter()
        .map(|o| dataset.resolve_outfit(o))
        .collect::<Result<Vec<_>, _>>()?)
}

// ---- commands -----------------------------------------------------------------

fn cmd_synth(args: SynthArgs) -> Result<i32, AnyError> {
    let config = args.world_config();
    let world = synthesize_world(&config)?;
    let mut writer = ArtifactWriter::new(&args.out)?;
    save_dataset(&DatasetPaths::in_dir(&args.out), &world.dataset)?;
    writer.register("items.jsonl")?;
    writer.register("outfits.csv")?;
    writer.register("behaviors.csv")?;

    let mut stats = serde_json::to_value(dataset_stats(&world.dataset)?)?;
    if let Some(obj) = stats.as_object_mut() {
        obj.insert(
            "config_hash".to_string(),
            serde_json::Value::String(config_hash(&config)?),
        );
    }
    writer.write_json("stats.json", &stats)?;
    let counts = world.dataset.counts();
    println!(
        "synth: {} items, {} outfits, {} behaviors from {} users",
        counts.items, counts.outfits, counts.behaviors, counts.users
    );
    writer.finish("synth", &config, args.seed)?;
    Ok(0)
}

fn parse_modalities(spec: &str) -> Result<ModalityMask, AnyError> {
    let mut mask = ModalityMask {
        image: false,
        text: false,
        cf: false,
    };
    for tok in spec.split(',').filter(|t| !t.is_empty()) {
        match tok.trim() {
            "image" => mask.image = true,
            "text" => mask.text = true,
            "cf" => mask.cf = true,
            other => return Err(format!("unknown modality {other:?}").into()),
        }
    }
    if !mask.image && !mask.text && !mask.cf {
        return Err("no modality enabled".into());
    }
    Ok(mask)
}

fn infer_feature_dims(dataset: &Dataset) -> FeatureDims {
    let probe = dataset.items.first();
    FeatureDims {
        image: probe.and_then(|i| i.features.image.as_ref()).map_or(0, |v| v.len()),
        text: probe.and_then(|i| i.features.text.as_ref()).map_or(0, |v| v.len()),
        cf: probe.and_then(|i| i.features.cf.as_ref()).map_or(0, |v| v.len()),
    }
}

fn cmd_train_embed(args: TrainEmbedArgs) -> Result<i32, AnyError> {
    let dataset = load_dataset(&DatasetPaths::in_dir(&args.data))?;
    let mask = parse_modalities(&args.modalities)?;
    let config = EmbedConfig {
        margin: args.margin,
        embed_dim: args.embed_dim,
        learning_rate: args.lr,
        steps: args.steps,
        seed: args.seed,
        mask,
        dims: infer_feature_dims(&dataset),
    };
    let (model, losses) = train_embedding(&dataset.items, &config)?;
    let hash = config_hash(&args)?;
    let mut writer = ArtifactWriter::new(&args.out)?;
    let ckpt = embed_to_checkpoint(&model, &config, args.seed, &hash);
    ckpt.write(&writer.dir.join("embed.ckpt"))?;
    writer.register("embed.ckpt")?;
    writer.write_bytes("embed_loss.csv", loss_curve_csv(&losses).as_bytes())?;
    println!(
        "train-embed: {} steps, final loss {:.6}",
        losses.len(),
        losses.last().copied().unwrap_or(0.0)
    );
    writer.finish("train-embed", &args, args.seed)?;
    Ok(0)
}

fn cmd_train_fom(args: TrainFomArgs) -> Result<i32, AnyError> {
    let (dataset, table) = load_table(&args.data, &args.embed)?;
    let outfits = resolved_outfits(&dataset)?;
    let (train_side, _) = split_outfits(&outfits, args.test_frac, args.split_seed);
    let config = FomConfig {
        embed_dim: table.dim(),
        model_dim: args.model_dim,
        layers: args.layers,
        heads: args.heads,
        num_negatives: args.negatives,
        allow_empty_negatives: false,
    };
    let train = FomTrainConfig {
        epochs: args.epochs,
        learning_rate: args.lr,
        warmup_steps: args.warmup,
        seed: args.seed,
        sample_single_position: false,
    };
    let (model, losses) = train_fom(&train_side, &table, config, &train)?;
    let hash = config_hash(&args)?;
    let mut writer = ArtifactWriter::new(&args.out)?;
    fom_to_checkpoint(&model, args.seed, &hash).write(&writer.dir.join("fom.ckpt"))?;
    writer.register("fom.ckpt")?;
    writer.write_bytes("fom_loss.csv", loss_curve_csv(&losses).as_bytes())?;
    println!(
        "train-fom: {} outfits, {} steps, final loss {:.6}",
        train_side.len(),
        losses.len(),
        losses.last().copied().unwrap_or(0.0)
    );
    writer.finish("train-fom", &args, args.seed)?;
    Ok(0)
}

fn cmd_train_pog(args: TrainPogArgs) -> Result<i32, AnyError> {
    let (dataset, table) = load_table(&args.data, &args.embed)?;
    let (pairs, skipped) = build_training_pairs(&dataset, &PairConfig::default())?;
    if skipped > 0 {
        eprintln!("warning: skipped {skipped} behaviors below the click threshold");
    }
    let config = PogConfig {
        embed_dim: table.dim(),
        model_dim: args.model_dim,
        per_layers: args.per_layers,
        gen_layers: args.gen_layers,
        heads: args.heads,
        num_negatives: args.negatives,
        max_len: args.max_len,
        history_cap: PairConfig::default().history_cap,
    };
    let train = PogTrainConfig {
        epochs: args.epochs,
        learning_rate: args.lr,
        warmup_steps: args.warmup,
        seed: args.seed,
    };
    let fom_model = match &args.fom {
        Some(path) => Some(fom_from_checkpoint(&Checkpoint::read(path)?)?),
        None => None,
    };
    let (model, losses) = train_pog(&pairs, &table, config, &train, fom_model.as_ref())?;
    let hash = config_hash(&args)?;
    let mut writer = ArtifactWriter::new(&args.out)?;
    pog_to_checkpoint(&model, args.seed, &hash).write(&writer.dir.join("pog.ckpt"))?;
    writer.register("pog.ckpt")?;
    writer.write_bytes("pog_loss.csv", loss_curve_csv(&losses).as_bytes())?;
    println!(
        "train-pog: {} pairs, {} steps, final loss {:.6}",
        pairs.len(),
        losses.len(),
        losses.last().copied().unwrap_or(0.0)
    );
    writer.finish("train-pog", &args, args.seed)?;
    Ok(0)
}

fn cmd_eval(args: EvalArgs, fitb: bool) -> Result<i32, AnyError> {
    let (dataset, table) = load_table(&args.data, &args.embed)?;
    let model = fom_from_checkpoint(&Checkpoint::read(&args.fom)?)?;
    let outfits = resolved_outfits(&dataset)?;
    let (_, test_side) = split_outfits(&outfits, args.test_frac, args.split_seed);
    let hash = config_hash(&args)?;
    let mut writer = ArtifactWriter::new(&args.out)?;
    let (task, name, metric, n) = if fitb {
        let instances = build_fitb_instances(&test_side, args.seed)?;
        let accuracy = eval_fitb(&model, &table, &instances)?;
        ("fitb", "fitb_report.json", accuracy, instances.len())
    } else {
        let instances = build_cp_instances(&test_side, args.seed)?;
        let auc = eval_cp(&model, &table, &instances, args.seed)?;
        ("cp", "cp_report.json", auc, instances.len())
    };
    let report = EvalReport {
        task: task.to_string(),
        n,
        metric,
        seed: args.seed,
        config_hash: hash,
    };
    writer.write_json(name, &report)?;
    println!("eval-{task}: n={n}, metric={metric:.4}");
    writer.finish(&format!("eval-{task}"), &args, args.seed)?;
    Ok(0)
}

fn cmd_generate(args: GenerateArgs) -> Result<i32, AnyError> {
    let (dataset, table) = load_table(&args.data, &args.embed)?;
    let model = pog_from_checkpoint(&Checkpoint::read(&args.pog)?)?;
    let (pairs, _) = build_training_pairs(&dataset, &PairConfig::default())?;

    // Latest history per user, sorted by id.
    let mut latest: BTreeMap<crate::ids::UserId, UserHistory> = BTreeMap::new();
    for (history, _) in pairs {
        latest.insert(history.user_id, history);
    }
    let mut categories: Vec<crate::ids::CategoryId> =
        dataset.items.iter().map(|i| i.category).collect();
    categories.sort();
    categories.dedup();
    let rule = default_rule(&categories)?;
    let candidates: Vec<(crate::ids::ItemId, crate::ids::CategoryId)> = dataset
        .items
        .iter()
        .map(|i| (i.item_id, i.category))
        .collect();

    let mut lines = String::new();
    let mut count = 0usize;
    for (_, history) in latest {
        if args.limit > 0 && count >= args.limit {
            break;
        }
        let generation = model.generate(&history, &table, &candidates, &rule)?;
        lines.push_str(&serde_json::to_string(&generation)?);
        lines.push('\n');
        count += 1;
    }
    let mut writer = ArtifactWriter::new(&args.out)?;
    writer.write_bytes("generated.jsonl", lines.as_bytes())?;
    println!("generate: {count} outfits");
    writer.finish("generate", &args, args.seed)?;
    Ok(0)
}

fn cmd_simulate(args: SimulateArgs) -> Result<i32, AnyError> {
    // Rebuild the world (and its latent truth) from the synth manifest.
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&args.world_manifest)?)?;
    let config: SyntheticWorldConfig = serde_json::from_value(
        manifest
            .get("config")
            .ok_or("manifest has no config field")?
            .clone(),
    )?;
    let world: SyntheticWorld = synthesize_world(&config)?;
    let (embed_model, _) = embed_from_checkpoint(&Checkpoint::read(&args.embed)?)?;
    let table = EmbeddingTable::build(&world.dataset.items, &embed_model)?;
    let pog = pog_from_checkpoint(&Checkpoint::read(&args.pog)?)?;
    let assets = SimAssets {
        table: &table,
        pog: Some(&pog),
    };
    let policy = SimPolicy::default();
    let mut reports: Vec<SimReport> = Vec::new();
    for strategy in [Strategy::Rr, Strategy::Cf, Strategy::Pog] {
        reports.push(simulate_sessions(
            strategy,
            &world,
            &assets,
            args.sessions,
            args.seed,
            &policy,
        )?);
    }
    let mut writer = ArtifactWriter::new(&args.out)?;
    let mut csv = String::from("strategy,sessions,cumulative_ctr\n");
    for report in &reports {
        for (n, ctr) in &report.timeseries {
            csv.push_str(&format!("{},{n},{ctr}\n", report.strategy));
        }
        println!(
            "simulate: {} ctr={:.4} (se {:.5}) over {} sessions",
            report.strategy, report.ctr, report.std_error, report.sessions
        );
    }
    writer.write_bytes("ctr_timeseries.csv", csv.as_bytes())?;
    let summary = serde_json::json!({
        "policy": policy,
        "config_hash": config_hash(&args)?,
        "reports": reports,
    });
    writer.write_json("sim_report.json", &summary)?;
    writer.finish("simulate", &args, args.seed)?;
    Ok(0)
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<i32, AnyError> {
    let worst = gradcheck_all(args.dm, args.layers, args.seed)?;
    let mut exit = 0;
    for (name, err) in &worst {
        let verdict = if *err <= 1e-3 { "ok" } else { "FAIL" };
        println!("gradcheck {name}: max relative error {err:.3e} [{verdict}]");
        if *err > 1e-3 {
            exit = 1;
        }
    }
    Ok(exit)
}

/// Gradient-check the three training losses at a reduced size; returns
/// (loss name, max relative error) for each.
pub fn gradcheck_all(dm: usize, layers: usize, seed: u64) -> Result<Vec<(String, f64)>, AnyError> {
    use crate::fom::{FomModel, OutfitItem};
    use crate::ids::{CategoryId, ItemId, OutfitId, UserId};
    use crate::pog::PogModel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    let mut results = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d_e = 6;
    let heads = if dm % 2 == 0 { 2 } else { 1 };

    // Embedding triplet loss.
    {
        let dims = FeatureDims { image: 4, text: 3, cf: 2 };
        let config = EmbedConfig {
            margin: 0.1,
            embed_dim: dm.min(8),
            learning_rate: 0.01,
            steps: 0,
            seed,
            mask: ModalityMask::default(),
            dims,
        };
        let model = crate::embedding::EmbedModel::init(&config)?;
        let concat = model.concat_dim();
        let mut vecs = Vec::new();
        for _ in 0..3 {
            vecs.push(
                (0..concat)
                    .map(|_| rng.gen_range(-1.0..1.0))
                    .collect::<Vec<f64>>(),
            );
        }
        let err = grad_check(
            &[model.weights.clone(), model.bias.clone()],
            |tape, leaves| {
                crate::embedding::triplet_loss_graph(
                    tape, leaves[0], leaves[1], &vecs[0], &vecs[1], &vecs[2], 0.1,
                )
            },
            1e-4,
        )?;
        results.push(("embedding".to_string(), err));
    }

    // FOM masked-prediction loss.
    {
        let config = FomConfig {
            embed_dim: d_e,
            model_dim: dm,
            layers,
            heads,
            num_negatives: 3,
            allow_empty_negatives: false,
        };
        let model = FomModel::init(config, seed)?;
        let table = random_table(20, d_e, &mut rng);
        let outfit = Outfit::new(
            OutfitId(0),
            (0..3)
                .map(|i| OutfitItem {
                    item: ItemId(i),
                    category: CategoryId(i as u32 % 4),
                })
                .collect(),
        )?;
        let err = crate::fom::gradcheck_fom_loss(&model, &outfit, &table, seed)?;
        results.push(("fom".to_string(), err));
    }

    // POG next-item loss.
    {
        let config = PogConfig {
            embed_dim: d_e,
            model_dim: dm,
            per_layers: layers,
            gen_layers: layers,
            heads,
            num_negatives: 3,
            max_len: 8,
            history_cap: 50,
        };
        let model = PogModel::init(config, seed)?;
        let table = random_table(20, d_e, &mut rng);
        let history = UserHistory::new(UserId(0), vec![ItemId(10), ItemId(11)])?;
        let outfit = Outfit::new(
            OutfitId(0),
            (0..3)
                .map(|i| OutfitItem {
                    item: ItemId(i),
                    category: CategoryId(i as u32 % 4),
                })
                .collect(),
        )?;
        let err = crate::pog::gradcheck_pog_loss(&model, &history, &outfit, &table, seed)?;
        results.push(("pog".to_string(), err));
    }

    Ok(results)
}

fn random_table(
    n: usize,
    d_e: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> EmbeddingTable {
    use rand::Rng;
    let embeddings = (0..n)
        .map(|i| crate::embedding::ItemEmbedding {
            item_id: crate::ids::ItemId(i as u64),
            vec: (0..d_e).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        })
        .collect();
    EmbeddingTable::from_embeddings(embeddings).expect("uniform dims")
}
