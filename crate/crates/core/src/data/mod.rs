//! Dataset schemas, loaders/writers, training-pair construction and the
//! history-overlap statistics. Three files describe a world:
//!
//! * `items.jsonl` — one JSON object per line with the feature arrays
//! * `outfits.csv` — `outfit_id,item_id;item_id;...`
//! * `behaviors.csv` — `user_id,outfit_id,item_id;...;item_id`
//!
//! All files are UTF-8 with LF line endings. Loaders reject malformed lines
//! with their line number and check referential integrity before returning.

pub mod synth;

use crate::embedding::RawFeatures;
use crate::fom::{Outfit, OutfitItem};
use crate::ids::{CategoryId, ItemId, OutfitId, UserId};
use crate::pog::UserHistory;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// Outfits with fewer items than this are rejected at load time.
pub const MIN_OUTFIT_SIZE: usize = 4;
/// The category vocabulary keeps at most this many leaf categories.
pub const MAX_CATEGORIES: usize = 80;
/// A behavior keeps at most this many preceding item clicks.
pub const DEFAULT_HISTORY_CAP: usize = 50;
/// Behaviors with fewer prior item clicks are dropped from training pairs.
pub const DEFAULT_MIN_CLICKS: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: {message}")]
    Malformed {
        file: PathBuf,
        line: usize,
        message: String,
    },
    #[error("dataset integrity violations:\n{}", .0.join("\n"))]
    Integrity(Vec<String>),
    #[error("unknown property {0:?}; expected brand, category, style or pattern")]
    UnknownProperty(String),
    #[error("items carry no {0} attribute")]
    MissingAttribute(Property),
    #[error(transparent)]
    Synth(#[from] synth::SynthError),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Synthetic categorical attributes used by the history-overlap analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemAttributes {
    pub brand: u32,
    pub style: u32,
    pub pattern: u32,
}

/// One catalog item: leaf category, per-modality features, optional
/// attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub item_id: ItemId,
    pub category: CategoryId,
    #[serde(flatten)]
    pub features: RawFeatures,
    #[serde(flatten)]
    pub attributes: Option<ItemAttributes>,
}

/// One curated outfit: at least four distinct items.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutfitRecord {
    pub outfit_id: OutfitId,
    pub item_ids: Vec<ItemId>,
}

/// One outfit click with the user's preceding item clicks, most recent last.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BehaviorRecord {
    pub user_id: UserId,
    pub outfit_id: OutfitId,
    pub clicks: Vec<ItemId>,
}

/// An in-memory world: catalog, outfits and behaviors, with id indexes.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub items: Vec<ItemRecord>,
    pub outfits: Vec<OutfitRecord>,
    pub behaviors: Vec<BehaviorRecord>,
    item_index: HashMap<ItemId, usize>,
    outfit_index: HashMap<OutfitId, usize>,
}

impl Dataset {
    pub fn new(
        items: Vec<ItemRecord>,
        outfits: Vec<OutfitRecord>,
        behaviors: Vec<BehaviorRecord>,
    ) -> Result<Self> {
        let mut ds = Dataset {
            items,
            outfits,
            behaviors,
            item_index: HashMap::new(),
            outfit_index: HashMap::new(),
        };
        ds.reindex();
        ds.validate()?;
        Ok(ds)
    }

    fn reindex(&mut self) {
        self.item_index = self
            .items
            .iter()
            .enumerate()
            .map(|(i, it)| (it.item_id, i))
            .collect();
        self.outfit_index = self
            .outfits
            .iter()
            .enumerate()
            .map(|(i, o)| (o.outfit_id, i))
            .collect();
    }

    pub fn item(&self, id: ItemId) -> Option<&ItemRecord> {
        self.item_index.get(&id).map(|i| &self.items[*i])
    }

    pub fn outfit(&self, id: OutfitId) -> Option<&OutfitRecord> {
        self.outfit_index.get(&id).map(|i| &self.outfits[*i])
    }

    pub fn counts(&self) -> DatasetCounts {
        let users: HashSet<UserId> = self.behaviors.iter().map(|b| b.user_id).collect();
        DatasetCounts {
            items: self.items.len(),
            outfits: self.outfits.len(),
            behaviors: self.behaviors.len(),
            users: users.len(),
        }
    }

    /// Referential and shape invariants; collects every violation.
    pub fn validate(&self) -> Result<()> {
        let mut violations = Vec::new();
        let mut seen_items = HashSet::new();
        for it in &self.items {
            if !seen_items.insert(it.item_id) {
                violations.push(format!("duplicate item id {}", it.item_id));
            }
        }
        let categories: HashSet<CategoryId> = self.items.iter().map(|i| i.category).collect();
        if categories.len() > MAX_CATEGORIES {
            violations.push(format!(
                "{} leaf categories exceed the {MAX_CATEGORIES}-category vocabulary",
                categories.len()
            ));
        }
        let mut seen_outfits = HashSet::new();
        for o in &self.outfits {
            if !seen_outfits.insert(o.outfit_id) {
                violations.push(format!("duplicate outfit id {}", o.outfit_id));
            }
            if o.item_ids.len() < MIN_OUTFIT_SIZE {
                violations.push(format!(
                    "outfit {} has {} items; minimum is {MIN_OUTFIT_SIZE}",
                    o.outfit_id,
                    o.item_ids.len()
                ));
            }
            let mut dedup = HashSet::new();
            for id in &o.item_ids {
                if !dedup.insert(*id) {
                    violations.push(format!("outfit {} repeats item {id}", o.outfit_id));
                }
                if !self.item_index.contains_key(id) {
                    violations.push(format!("outfit {} references unknown item {id}", o.outfit_id));
                }
            }
        }
        for b in &self.behaviors {
            if b.clicks.is_empty() {
                violations.push(format!(
                    "behavior of user {} on outfit {} has no item clicks",
                    b.user_id, b.outfit_id
                ));
            }
            if !self.outfit_index.contains_key(&b.outfit_id) {
                violations.push(format!(
                    "behavior of user {} references unknown outfit {}",
                    b.user_id, b.outfit_id
                ));
            }
            for id in &b.clicks {
                if !self.item_index.contains_key(id) {
                    violations.push(format!(
                        "behavior of user {} references unknown item {id}",
                        b.user_id
                    ));
                }
            }
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(DataError::Integrity(violations))
        }
    }

    /// Resolve an outfit record into the model-side outfit with categories.
    pub fn resolve_outfit(&self, record: &OutfitRecord) -> Result<Outfit> {
        let items = record
            .item_ids
            .iter()
            .map(|id| {
                let item = self.item(*id).ok_or_else(|| {
                    DataError::Integrity(vec![format!(
                        "outfit {} references unknown item {id}",
                        record.outfit_id
                    )])
                })?;
                Ok(OutfitItem {
                    item: *id,
                    category: item.category,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Outfit::new(record.outfit_id, items).map_err(|e| DataError::Integrity(vec![e.to_string()]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetCounts {
    pub items: usize,
    pub outfits: usize,
    pub behaviors: usize,
    pub users: usize,
}

/// File-name layout inside one dataset directory.
#[derive(Debug, Clone)]
pub struct DatasetPaths {
    pub items: PathBuf,
    pub outfits: PathBuf,
    pub behaviors: PathBuf,
}

impl DatasetPaths {
    pub fn in_dir(dir: &Path) -> Self {
        DatasetPaths {
            items: dir.join("items.jsonl"),
            outfits: dir.join("outfits.csv"),
            behaviors: dir.join("behaviors.csv"),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn malformed(path: &Path, line: usize, message: impl Into<String>) -> DataError {
    DataError::Malformed {
        file: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_id(path: &Path, line: usize, field: &str, what: &str) -> Result<u64> {
    field
        .parse::<u64>()
        .map_err(|_| malformed(path, line, format!("bad {what} {field:?}")))
}

fn parse_id_list(path: &Path, line: usize, field: &str, what: &str) -> Result<Vec<ItemId>> {
    if field.is_empty() {
        return Ok(Vec::new());
    }
    field
        .split(';')
        .map(|tok| parse_id(path, line, tok, what).map(ItemId))
        .collect()
}

pub fn load_items(path: &Path) -> Result<Vec<ItemRecord>> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let reader = std::io::BufReader::new(file);
    let mut items = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.is_empty() {
            continue;
        }
        let record: ItemRecord = serde_json::from_str(&line)
            .map_err(|e| malformed(path, idx + 1, e.to_string()))?;
        items.push(record);
    }
    Ok(items)
}

pub fn save_items(path: &Path, items: &[ItemRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item)
            .map_err(|e| malformed(path, 0, format!("serialize: {e}")))?;
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn load_outfits(path: &Path) -> Result<Vec<OutfitRecord>> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let reader = std::io::BufReader::new(file);
    let mut outfits = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.is_empty() {
            continue;
        }
        let (id_field, items_field) = line
            .split_once(',')
            .ok_or_else(|| malformed(path, idx + 1, "expected outfit_id,items"))?;
        let outfit_id = OutfitId(parse_id(path, idx + 1, id_field, "outfit id")?);
        let item_ids = parse_id_list(path, idx + 1, items_field, "item id")?;
        outfits.push(OutfitRecord { outfit_id, item_ids });
    }
    Ok(outfits)
}

pub fn save_outfits(path: &Path, outfits: &[OutfitRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for o in outfits {
        let ids: Vec<String> = o.item_ids.iter().map(|i| i.to_string()).collect();
        writeln!(w, "{},{}", o.outfit_id, ids.join(";")).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn load_behaviors(path: &Path) -> Result<Vec<BehaviorRecord>> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let reader = std::io::BufReader::new(file);
    let mut behaviors = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.splitn(3, ',');
        let user = fields
            .next()
            .ok_or_else(|| malformed(path, idx + 1, "missing user id"))?;
        let outfit = fields
            .next()
            .ok_or_else(|| malformed(path, idx + 1, "missing outfit id"))?;
        let clicks = fields
            .next()
            .ok_or_else(|| malformed(path, idx + 1, "missing click list"))?;
        behaviors.push(BehaviorRecord {
            user_id: UserId(parse_id(path, idx + 1, user, "user id")?),
            outfit_id: OutfitId(parse_id(path, idx + 1, outfit, "outfit id")?),
            clicks: parse_id_list(path, idx + 1, clicks, "item id")?,
        });
    }
    Ok(behaviors)
}

pub fn save_behaviors(path: &Path, behaviors: &[BehaviorRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for b in behaviors {
        let ids: Vec<String> = b.clicks.iter().map(|i| i.to_string()).collect();
        writeln!(w, "{},{},{}", b.user_id, b.outfit_id, ids.join(";")).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Load the three dataset files and verify referential integrity.
pub fn load_dataset(paths: &DatasetPaths) -> Result<Dataset> {
    let items = load_items(&paths.items)?;
    let outfits = load_outfits(&paths.outfits)?;
    let behaviors = load_behaviors(&paths.behaviors)?;
    Dataset::new(items, outfits, behaviors)
}

pub fn save_dataset(paths: &DatasetPaths, dataset: &Dataset) -> Result<()> {
    save_items(&paths.items, &dataset.items)?;
    save_outfits(&paths.outfits, &dataset.outfits)?;
    save_behaviors(&paths.behaviors, &dataset.behaviors)?;
    Ok(())
}

/// History cap and the minimum prior-click threshold for training pairs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PairConfig {
    pub min_clicks: usize,
    pub history_cap: usize,
}

impl Default for PairConfig {
    fn default() -> Self {
        PairConfig {
            min_clicks: DEFAULT_MIN_CLICKS,
            history_cap: DEFAULT_HISTORY_CAP,
        }
    }
}

/// Training pairs built from behaviors: the clicked outfit with the latest
/// clicks before it, truncated to the cap with most-recent-last order kept.
/// Behaviors below the click threshold are skipped and counted.
pub fn build_training_pairs(
    dataset: &Dataset,
    config: &PairConfig,
) -> Result<(Vec<(UserHistory, Outfit)>, usize)> {
    let mut pairs = Vec::new();
    let mut skipped = 0usize;
    for b in &dataset.behaviors {
        if b.clicks.len() < config.min_clicks {
            skipped += 1;
            continue;
        }
        let start = b.clicks.len().saturating_sub(config.history_cap);
        let history = UserHistory::new(b.user_id, b.clicks[start..].to_vec())
            .expect("behavior clicks validated non-empty");
        let record = dataset
            .outfit(b.outfit_id)
            .ok_or_else(|| DataError::Integrity(vec![format!("unknown outfit {}", b.outfit_id)]))?;
        pairs.push((history, dataset.resolve_outfit(record)?));
    }
    Ok((pairs, skipped))
}

/// Item attributes the overlap analysis can query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Property {
    Brand,
    Category,
    Style,
    Pattern,
}

impl Property {
    pub const ALL: [Property; 4] = [
        Property::Brand,
        Property::Category,
        Property::Style,
        Property::Pattern,
    ];

    fn value(&self, item: &ItemRecord) -> Option<u64> {
        match self {
            Property::Category => Some(item.category.0 as u64),
            Property::Brand => item.attributes.map(|a| a.brand as u64),
            Property::Style => item.attributes.map(|a| a.style as u64),
            Property::Pattern => item.attributes.map(|a| a.pattern as u64),
        }
    }
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Property::Brand => "brand",
            Property::Category => "category",
            Property::Style => "style",
            Property::Pattern => "pattern",
        };
        write!(f, "{s}")
    }
}

impl FromStr for Property {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "brand" => Ok(Property::Brand),
            "category" => Ok(Property::Category),
            "style" => Ok(Property::Style),
            "pattern" => Ok(Property::Pattern),
            other => Err(DataError::UnknownProperty(other.to_string())),
        }
    }
}

/// For each property: the fraction of clicked outfits containing at least
/// one item whose property value appears among the values of the user's
/// preceding (≤ cap) clicked items.
pub fn history_overlap_stats(
    dataset: &Dataset,
    properties: &[Property],
) -> Result<BTreeMap<Property, f64>> {
    let mut out = BTreeMap::new();
    for prop in properties {
        if *prop != Property::Category
            && !dataset.items.iter().any(|i| i.attributes.is_some())
        {
            return Err(DataError::MissingAttribute(*prop));
        }
        let mut hits = 0usize;
        let mut total = 0usize;
        for b in &dataset.behaviors {
            let outfit = match dataset.outfit(b.outfit_id) {
                Some(o) => o,
                None => continue,
            };
            let history_values: HashSet<u64> = b
                .clicks
                .iter()
                .filter_map(|id| dataset.item(*id))
                .filter_map(|it| prop.value(it))
                .collect();
            let overlap = outfit.item_ids.iter().any(|id| {
                dataset
                    .item(*id)
                    .and_then(|it| prop.value(it))
                    .map(|v| history_values.contains(&v))
                    .unwrap_or(false)
            });
            total += 1;
            if overlap {
                hits += 1;
            }
        }
        let frac = if total == 0 {
            0.0
        } else {
            hits as f64 / total as f64
        };
        out.insert(*prop, frac);
    }
    Ok(out)
}

/// The `stats.json` report: record counts plus overlap percentages.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetStats {
    pub counts: DatasetCounts,
    pub overlap: BTreeMap<Property, f64>,
}

pub fn dataset_stats(dataset: &Dataset) -> Result<DatasetStats> {
    Ok(DatasetStats {
        counts: dataset.counts(),
        overlap: history_overlap_stats(dataset, &Property::ALL)?,
    })
}
