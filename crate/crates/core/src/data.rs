//! Rating-log ingestion, binarization and the leave-one-out split.

use std::collections::hash_map::Entry;
use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{AcaeError, Result};
use crate::numerics::RngStream;

pub const SPLIT_HEADER_PREFIX: &str = "acae-split v1 seed=";

/// Default number of sampled negatives per tested user.
pub const DEFAULT_NEGATIVES: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LogFormat {
    /// `user::item::rating[::timestamp]`
    DoubleColon,
    Csv,
    Whitespace,
}

impl std::str::FromStr for LogFormat {
    type Err = AcaeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "double_colon" | "movielens" => Ok(LogFormat::DoubleColon),
            "csv" => Ok(LogFormat::Csv),
            "whitespace" | "tsv" => Ok(LogFormat::Whitespace),
            other => Err(AcaeError::InvalidInput(format!(
                "unknown log format {other:?} (expected double_colon, csv or whitespace)"
            ))),
        }
    }
}

/// Zero-based field positions within a record.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ColumnRoles {
    pub user: usize,
    pub item: usize,
    pub rating: usize,
    pub timestamp: Option<usize>,
}

impl Default for ColumnRoles {
    fn default() -> Self {
        ColumnRoles {
            user: 0,
            item: 1,
            rating: 2,
            timestamp: Some(3),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rating {
    pub user: String,
    pub item: String,
    pub rating: f64,
    pub timestamp: Option<i64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParseWarning {
    pub line: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct InteractionLog {
    pub records: Vec<Rating>,
    pub warnings: Vec<ParseWarning>,
}

/// Entity counts and sparsity (percent of the user x item grid left empty).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub sparsity_pct: f64,
}

impl DatasetStats {
    fn new(users: usize, items: usize, interactions: usize) -> Self {
        let cells = users as f64 * items as f64;
        let sparsity_pct = if cells == 0.0 {
            0.0
        } else {
            100.0 * (1.0 - interactions as f64 / cells)
        };
        DatasetStats {
            users,
            items,
            interactions,
            sparsity_pct,
        }
    }

    pub const CSV_HEADER: &'static str = "users,items,ratings,sparsity";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.2}",
            self.users, self.items, self.interactions, self.sparsity_pct
        )
    }
}

impl InteractionLog {
    /// Counts over raw records, before any binarization.
    pub fn stats(&self) -> DatasetStats {
        let users: HashSet<&str> = self.records.iter().map(|r| r.user.as_str()).collect();
        let items: HashSet<&str> = self.records.iter().map(|r| r.item.as_str()).collect();
        DatasetStats::new(users.len(), items.len(), self.records.len())
    }
}

pub fn parse_log(path: &Path, format: LogFormat, roles: ColumnRoles) -> Result<InteractionLog> {
    let file = File::open(path).map_err(|e| AcaeError::io(path, e))?;
    parse_reader(file, format, roles).map_err(|e| match e {
        AcaeError::Io { source, .. } => AcaeError::io(path, source),
        other => other,
    })
}

pub fn parse_reader<R: Read>(
    reader: R,
    format: LogFormat,
    roles: ColumnRoles,
) -> Result<InteractionLog> {
    let mut log = InteractionLog::default();
    let reader = BufReader::new(reader);
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| AcaeError::io("<reader>", e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = match format {
            LogFormat::DoubleColon => line.split("::").collect(),
            LogFormat::Csv => line.split(',').map(str::trim).collect(),
            LogFormat::Whitespace => line.split_whitespace().collect(),
        };
        match parse_fields(&fields, roles) {
            Ok(record) => log.records.push(record),
            Err(reason) => log.warnings.push(ParseWarning {
                line: idx + 1,
                reason,
            }),
        }
    }
    Ok(log)
}

fn parse_fields(fields: &[&str], roles: ColumnRoles) -> Result<Rating, String> {
    let get = |i: usize, what: &str| {
        fields
            .get(i)
            .copied()
            .filter(|s| !s.is_empty())
            .ok_or_else(|| format!("missing {what} column {i}"))
    };
    let user = get(roles.user, "user")?;
    let item = get(roles.item, "item")?;
    let rating_text = get(roles.rating, "rating")?;
    let rating: f64 = rating_text
        .parse()
        .map_err(|_| format!("rating {rating_text:?} is not a number"))?;
    if !rating.is_finite() {
        return Err(format!("rating {rating_text:?} is not finite"));
    }
    let timestamp = match roles.timestamp {
        None => None,
        Some(i) => {
            let text = get(i, "timestamp")?;
            Some(
                text.parse::<i64>()
                    .map_err(|_| format!("timestamp {text:?} is not an integer"))?,
            )
        }
    };
    Ok(Rating {
        user: user.to_string(),
        item: item.to_string(),
        rating,
        timestamp,
    })
}

/// For duplicated (user, item) pairs keep only the earliest record; the
/// survivor keeps its own rating and its original position in the log.
pub fn dedupe_earliest(log: &InteractionLog) -> Result<InteractionLog> {
    let mut earliest: HashMap<(&str, &str), usize> = HashMap::new();
    for (idx, r) in log.records.iter().enumerate() {
        let ts = r.timestamp.ok_or_else(|| {
            AcaeError::InvalidInput(format!(
                "dedupe_earliest needs timestamps; record {idx} ({}, {}) has none",
                r.user, r.item
            ))
        })?;
        match earliest.entry((r.user.as_str(), r.item.as_str())) {
            Entry::Vacant(v) => {
                v.insert(idx);
            }
            Entry::Occupied(mut o) => {
                if ts < log.records[*o.get()].timestamp.unwrap() {
                    o.insert(idx);
                }
            }
        }
    }
    let mut keep: Vec<usize> = earliest.into_values().collect();
    keep.sort_unstable();
    Ok(InteractionLog {
        records: keep.into_iter().map(|i| log.records[i].clone()).collect(),
        warnings: log.warnings.clone(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinarizeMode {
    /// Ratings above the threshold become 1, the rest 0 (MovieLens, Ciao).
    AboveIsOne,
    /// Only ratings above the threshold are kept (FilmTrust). Produces the
    /// same positive set as `AboveIsOne`.
    KeepAboveDropRest,
}

impl std::str::FromStr for BinarizeMode {
    type Err = AcaeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "above_is_one" => Ok(BinarizeMode::AboveIsOne),
            "keep_above_drop_rest" => Ok(BinarizeMode::KeepAboveDropRest),
            other => Err(AcaeError::InvalidInput(format!(
                "unknown binarize mode {other:?}"
            ))),
        }
    }
}

/// Binarized implicit feedback with dense, contiguous indices.
///
/// Users are numbered in order of first appearance among positive records;
/// items in order of first appearance anywhere in the log, so items that are
/// only ever rated low still belong to the item universe.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryDataset {
    user_ids: Vec<String>,
    item_ids: Vec<String>,
    user_index: HashMap<String, usize>,
    item_index: HashMap<String, usize>,
    positives: Vec<Vec<usize>>,
    timestamps: Option<Vec<Vec<i64>>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Binarized {
    pub dataset: BinaryDataset,
    pub dropped_users: Vec<String>,
}

impl BinaryDataset {
    /// Builds a dataset from already-dense positive lists. Lists are sorted and
    /// deduplicated; timestamps, when given, must align with the raw lists.
    pub fn from_positives(
        item_count: usize,
        positives: Vec<Vec<usize>>,
        timestamps: Option<Vec<Vec<i64>>>,
    ) -> Result<Self> {
        if let Some(ts) = &timestamps {
            if ts.len() != positives.len()
                || ts.iter().zip(&positives).any(|(t, p)| t.len() != p.len())
            {
                return Err(AcaeError::InvalidInput(
                    "timestamps must align with positive lists".into(),
                ));
            }
        }
        let user_ids: Vec<String> = (0..positives.len()).map(|u| u.to_string()).collect();
        let item_ids: Vec<String> = (0..item_count).map(|i| i.to_string()).collect();
        let mut sorted_pos = Vec::with_capacity(positives.len());
        let mut sorted_ts = timestamps.as_ref().map(|_| Vec::with_capacity(positives.len()));
        for (u, items) in positives.iter().enumerate() {
            if items.is_empty() {
                return Err(AcaeError::InvalidInput(format!("user {u} has no positives")));
            }
            if let Some(&bad) = items.iter().find(|&&i| i >= item_count) {
                return Err(AcaeError::InvalidInput(format!(
                    "user {u}: item {bad} outside 0..{item_count}"
                )));
            }
            let mut pairs: Vec<(usize, i64)> = match &timestamps {
                Some(ts) => items.iter().copied().zip(ts[u].iter().copied()).collect(),
                None => items.iter().map(|&i| (i, 0)).collect(),
            };
            pairs.sort_unstable();
            pairs.dedup_by_key(|p| p.0);
            sorted_pos.push(pairs.iter().map(|p| p.0).collect());
            if let Some(st) = sorted_ts.as_mut() {
                st.push(pairs.iter().map(|p| p.1).collect());
            }
        }
        Ok(Self::assemble(user_ids, item_ids, sorted_pos, sorted_ts))
    }

    fn assemble(
        user_ids: Vec<String>,
        item_ids: Vec<String>,
        positives: Vec<Vec<usize>>,
        timestamps: Option<Vec<Vec<i64>>>,
    ) -> Self {
        let user_index = user_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        let item_index = item_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        BinaryDataset {
            user_ids,
            item_ids,
            user_index,
            item_index,
            positives,
            timestamps,
        }
    }

    pub fn user_count(&self) -> usize {
        self.user_ids.len()
    }

    pub fn item_count(&self) -> usize {
        self.item_ids.len()
    }

    /// Sorted positive item indices of user `u`.
    pub fn positives(&self, u: usize) -> &[usize] {
        &self.positives[u]
    }

    pub fn all_positives(&self) -> &[Vec<usize>] {
        &self.positives
    }

    pub fn timestamps(&self, u: usize) -> Option<&[i64]> {
        self.timestamps.as_ref().map(|t| t[u].as_slice())
    }

    pub fn has_timestamps(&self) -> bool {
        self.timestamps.is_some()
    }

    pub fn user_id(&self, u: usize) -> &str {
        &self.user_ids[u]
    }

    pub fn item_id(&self, i: usize) -> &str {
        &self.item_ids[i]
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.user_index.get(id).copied()
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.item_index.get(id).copied()
    }

    pub fn positive_count(&self) -> usize {
        self.positives.iter().map(Vec::len).sum()
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats::new(self.user_count(), self.item_count(), self.positive_count())
    }

    /// Dataset restricted to the training positives of `split`, keeping the
    /// same index space. Timestamps follow the surviving items.
    pub fn training_view(&self, split: &SplitSpec) -> BinaryDataset {
        let mut positives = Vec::with_capacity(self.user_count());
        let mut timestamps = self.timestamps.as_ref().map(|_| Vec::new());
        for u in 0..self.user_count() {
            let held = split.users[u].held_out;
            let keep: Vec<usize> = (0..self.positives[u].len())
                .filter(|&k| Some(self.positives[u][k]) != held)
                .collect();
            positives.push(keep.iter().map(|&k| self.positives[u][k]).collect());
            if let (Some(out), Some(ts)) = (timestamps.as_mut(), self.timestamps.as_ref()) {
                out.push(keep.iter().map(|&k| ts[u][k]).collect::<Vec<_>>());
            }
        }
        BinaryDataset {
            user_ids: self.user_ids.clone(),
            item_ids: self.item_ids.clone(),
            user_index: self.user_index.clone(),
            item_index: self.item_index.clone(),
            positives,
            timestamps,
        }
    }
}

pub fn binarize(log: &InteractionLog, threshold: f64, _mode: BinarizeMode) -> Binarized {
    let mut user_ids: Vec<String> = Vec::new();
    let mut user_index: HashMap<&str, usize> = HashMap::new();
    let mut item_ids: Vec<String> = Vec::new();
    let mut item_index: HashMap<&str, usize> = HashMap::new();
    let mut seen_users: Vec<&str> = Vec::new();
    let mut seen_user_set: HashSet<&str> = HashSet::new();
    let mut pairs: Vec<Vec<(usize, i64)>> = Vec::new();
    let has_ts = !log.records.is_empty() && log.records.iter().all(|r| r.timestamp.is_some());

    for r in &log.records {
        if seen_user_set.insert(r.user.as_str()) {
            seen_users.push(r.user.as_str());
        }
        let item = *item_index.entry(r.item.as_str()).or_insert_with(|| {
            item_ids.push(r.item.clone());
            item_ids.len() - 1
        });
        if r.rating > threshold {
            let user = *user_index.entry(r.user.as_str()).or_insert_with(|| {
                user_ids.push(r.user.clone());
                pairs.push(Vec::new());
                user_ids.len() - 1
            });
            pairs[user].push((item, r.timestamp.unwrap_or(0)));
        }
    }

    let dropped_users = seen_users
        .into_iter()
        .filter(|u| !user_index.contains_key(u))
        .map(str::to_string)
        .collect();

    let mut positives = Vec::with_capacity(pairs.len());
    let mut timestamps = has_ts.then(|| Vec::with_capacity(pairs.len()));
    for mut p in pairs {
        // Duplicate positives keep their earliest timestamp.
        p.sort_unstable();
        p.dedup_by_key(|x| x.0);
        positives.push(p.iter().map(|x| x.0).collect());
        if let Some(ts) = timestamps.as_mut() {
            ts.push(p.iter().map(|x| x.1).collect());
        }
    }

    Binarized {
        dataset: BinaryDataset::assemble(user_ids, item_ids, positives, timestamps),
        dropped_users,
    }
}

pub fn dataset_stats(ds: &BinaryDataset) -> DatasetStats {
    ds.stats()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UserSplit {
    /// Absent when the user is not tested.
    pub held_out: Option<usize>,
    pub negatives: Vec<usize>,
    /// Sorted training positives.
    pub train: Vec<usize>,
}

/// Leave-one-out partition over every user of a [`BinaryDataset`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitSpec {
    pub seed: u64,
    pub item_count: usize,
    pub users: Vec<UserSplit>,
}

impl SplitSpec {
    pub fn tested_users(&self) -> impl Iterator<Item = (usize, &UserSplit)> {
        self.users
            .iter()
            .enumerate()
            .filter(|(_, s)| s.held_out.is_some())
    }

    pub fn tested_count(&self) -> usize {
        self.users.iter().filter(|s| s.held_out.is_some()).count()
    }

    pub fn user_count(&self) -> usize {
        self.users.len()
    }

    pub fn train_profiles(&self) -> Vec<&[usize]> {
        self.users.iter().map(|s| s.train.as_slice()).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{SPLIT_HEADER_PREFIX}{}\n", self.seed);
        for (u, s) in self.tested_users() {
            let negs: Vec<String> = s.negatives.iter().map(|i| i.to_string()).collect();
            let _ = writeln!(out, "{u}\t{}\t{}", s.held_out.unwrap(), negs.join(","));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = File::create(path).map_err(|e| AcaeError::io(path, e))?;
        f.write_all(self.to_text().as_bytes())
            .map_err(|e| AcaeError::io(path, e))
    }

    /// Reads a split file against the dataset it was drawn from.
    pub fn read(path: &Path, ds: &BinaryDataset) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AcaeError::io(path, e))?;
        Self::parse(&text, ds)
    }

    pub fn parse(text: &str, ds: &BinaryDataset) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        let seed = header
            .strip_prefix(SPLIT_HEADER_PREFIX)
            .and_then(|s| s.trim().parse::<u64>().ok())
            .ok_or_else(|| AcaeError::SplitFormat {
                line: 1,
                reason: format!("expected header \"{SPLIT_HEADER_PREFIX}<u64>\", got {header:?}"),
            })?;
        let mut users: Vec<UserSplit> = (0..ds.user_count())
            .map(|u| UserSplit {
                held_out: None,
                negatives: Vec::new(),
                train: ds.positives(u).to_vec(),
            })
            .collect();
        for (idx, line) in lines.enumerate() {
            let line_no = idx + 2;
            let bad = |reason: String| AcaeError::SplitFormat {
                line: line_no,
                reason,
            };
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(bad(format!("expected 3 tab-separated fields, got {}", cols.len())));
            }
            let parse = |s: &str| s.trim().parse::<usize>().map_err(|_| bad(format!("bad index {s:?}")));
            let u = parse(cols[0])?;
            let held = parse(cols[1])?;
            let negatives = if cols[2].is_empty() {
                Vec::new()
            } else {
                cols[2].split(',').map(parse).collect::<Result<Vec<_>>>()?
            };
            if u >= ds.user_count() {
                return Err(bad(format!("user {u} outside dataset of {} users", ds.user_count())));
            }
            let pos = ds.positives(u);
            if pos.binary_search(&held).is_err() {
                return Err(bad(format!("held-out item {held} is not a positive of user {u}")));
            }
            if let Some(n) = negatives
                .iter()
                .find(|&&n| n >= ds.item_count() || pos.binary_search(&n).is_ok())
            {
                return Err(bad(format!("negative {n} is invalid for user {u}")));
            }
            users[u] = UserSplit {
                held_out: Some(held),
                negatives,
                train: pos.iter().copied().filter(|&i| i != held).collect(),
            };
        }
        Ok(SplitSpec {
            seed,
            item_count: ds.item_count(),
            users,
        })
    }
}

/// Leave-one-out split: the latest positive (ties to the larger item index),
/// or a seeded-uniform positive when the dataset has no timestamps, is held
/// out together with `n_neg` sampled never-positive items.
pub fn split_leave_one_out(ds: &BinaryDataset, seed: u64, n_neg: usize) -> Result<SplitSpec> {
    split_excluding(ds, seed, n_neg, |_| &[])
}

/// Same as [`split_leave_one_out`], but negatives also avoid the items
/// returned by `excluded(user)`. Used to carve a validation split out of
/// training data without sampling the test item as a validation negative.
pub fn split_excluding<'a, F>(
    ds: &BinaryDataset,
    seed: u64,
    n_neg: usize,
    excluded: F,
) -> Result<SplitSpec>
where
    F: Fn(usize) -> &'a [usize],
{
    if n_neg == 0 {
        return Err(AcaeError::InvalidInput("n_neg must be at least 1".into()));
    }
    let mut rng = RngStream::new(seed);
    let items = ds.item_count();
    let mut users = Vec::with_capacity(ds.user_count());
    let mut banned = vec![false; items];
    for u in 0..ds.user_count() {
        let pos = ds.positives(u);
        if pos.len() < 2 {
            users.push(UserSplit {
                held_out: None,
                negatives: Vec::new(),
                train: pos.to_vec(),
            });
            continue;
        }
        let held = match ds.timestamps(u) {
            Some(ts) => {
                let mut best = 0;
                for k in 1..pos.len() {
                    if (ts[k], pos[k]) > (ts[best], pos[best]) {
                        best = k;
                    }
                }
                pos[best]
            }
            None => pos[rng.below(pos.len())],
        };

        for &i in pos.iter().chain(excluded(u)) {
            banned[i] = true;
        }
        let pool: Vec<usize> = (0..items).filter(|&i| !banned[i]).collect();
        for &i in pos.iter().chain(excluded(u)) {
            banned[i] = false;
        }
        let take = n_neg.min(pool.len());
        let negatives = rng
            .sample_indices(pool.len(), take)
            .into_iter()
            .map(|k| pool[k])
            .collect();

        users.push(UserSplit {
            held_out: Some(held),
            negatives,
            train: pos.iter().copied().filter(|&i| i != held).collect(),
        });
    }
    Ok(SplitSpec {
        seed,
        item_count: items,
        users,
    })
}

/// Validation split drawn from the training side of `test`, keeping negatives
/// disjoint from every positive the user has (including the test item).
pub fn validation_split(
    ds: &BinaryDataset,
    test: &SplitSpec,
    seed: u64,
    n_neg: usize,
) -> Result<SplitSpec> {
    let train = ds.training_view(test);
    split_excluding(&train, seed, n_neg, |u| ds.positives(u))
}
