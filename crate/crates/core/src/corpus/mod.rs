//! Interaction-log preprocessing: binarize, deduplicate, k-core filter,
//! chronological sequences, leave-one-out splits and padded windows.

mod store;

use std::collections::HashMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use store::{read_dataset_dir, write_dataset_dir, ProcessedDataset};

pub type ItemId = u32;
pub type UserId = u32;

/// Reserved padding id. Real items are `1..=num_items`; the mask token is
/// `num_items + 1`.
pub const PAD: ItemId = 0;

#[inline]
pub fn mask_token(num_items: usize) -> ItemId {
    (num_items + 1) as ItemId
}

/// Bidirectional map between external string ids and dense ids starting at 1.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct IdMap {
    dense: HashMap<String, u32>,
    external: Vec<String>,
}

impl IdMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_insert(&mut self, key: &str) -> u32 {
        if let Some(&id) = self.dense.get(key) {
            return id;
        }
        self.external.push(key.to_string());
        let id = self.external.len() as u32;
        self.dense.insert(key.to_string(), id);
        id
    }

    pub fn dense(&self, key: &str) -> Option<u32> {
        self.dense.get(key).copied()
    }

    pub fn external(&self, id: u32) -> Option<&str> {
        if id == 0 {
            return None;
        }
        self.external.get(id as usize - 1).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.external.len()
    }

    pub fn is_empty(&self) -> bool {
        self.external.is_empty()
    }

    /// `(dense, external)` pairs in dense-id order.
    pub fn iter(&self) -> impl Iterator<Item = (u32, &str)> {
        self.external
            .iter()
            .enumerate()
            .map(|(i, s)| (i as u32 + 1, s.as_str()))
    }
}

/// One binarized interaction with dense ids.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Interaction {
    pub user: UserId,
    pub item: ItemId,
    pub timestamp: i64,
}

/// Interactions in input order plus the id maps they refer to.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InteractionLog {
    pub interactions: Vec<Interaction>,
    pub users: IdMap,
    pub items: IdMap,
}

/// A raw, not yet indexed record.
#[derive(Clone, Debug, PartialEq)]
pub struct RawRecord {
    pub user: String,
    pub item: String,
    pub rating: Option<String>,
    pub timestamp: i64,
}

#[derive(Clone, Debug)]
pub struct IngestOptions {
    pub delimiter: String,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            delimiter: "\t".to_string(),
        }
    }
}

/// Parse one line as `user, item, [rating,] timestamp`.
pub fn parse_line(line: &str, delimiter: &str, line_no: usize) -> Result<RawRecord> {
    let fields: Vec<&str> = line.split(delimiter).map(str::trim).collect();
    let err = |message: String| Error::Parse {
        line: line_no,
        message,
    };
    let (user, item, rating, ts) = match fields.as_slice() {
        [u, i, t] => (*u, *i, None, *t),
        [u, i, r, t] => (*u, *i, Some(*r), *t),
        _ => {
            return Err(err(format!(
                "expected 3 or 4 fields separated by {delimiter:?}, found {}",
                fields.len()
            )))
        }
    };
    if user.is_empty() || item.is_empty() {
        return Err(err("empty user or item id".into()));
    }
    let timestamp = ts
        .parse::<i64>()
        .map_err(|_| err(format!("timestamp {ts:?} is not an integer")))?;
    Ok(RawRecord {
        user: user.to_string(),
        item: item.to_string(),
        rating: rating.filter(|r| !r.is_empty()).map(str::to_string),
        timestamp,
    })
}

/// Read delimiter-separated records. Blank lines and `#` comments are skipped.
pub fn read_records<R: BufRead>(reader: R, options: &IngestOptions) -> Result<Vec<RawRecord>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        out.push(parse_line(trimmed, &options.delimiter, idx + 1)?);
    }
    Ok(out)
}

/// Binarize and deduplicate raw records into an [`InteractionLog`].
///
/// Every record counts as a positive interaction regardless of its rating.
/// For repeated `(user, item)` pairs the earliest timestamp is kept, with ties
/// going to the earlier input line. Dense ids follow first appearance order.
pub fn ingest(records: &[RawRecord]) -> InteractionLog {
    let mut users = IdMap::new();
    let mut items = IdMap::new();
    let mut raw = Vec::with_capacity(records.len());
    for r in records {
        let user = users.get_or_insert(&r.user);
        let item = items.get_or_insert(&r.item);
        raw.push(Interaction {
            user,
            item,
            timestamp: r.timestamp,
        });
    }

    let mut keep: HashMap<(UserId, ItemId), usize> = HashMap::with_capacity(raw.len());
    for (idx, it) in raw.iter().enumerate() {
        keep.entry((it.user, it.item))
            .and_modify(|best| {
                if it.timestamp < raw[*best].timestamp {
                    *best = idx;
                }
            })
            .or_insert(idx);
    }
    let mut kept: Vec<usize> = keep.into_values().collect();
    kept.sort_unstable();
    let interactions = kept.into_iter().map(|i| raw[i]).collect();

    InteractionLog {
        interactions,
        users,
        items,
    }
}

/// Read, parse and ingest in one go.
pub fn ingest_reader<R: BufRead>(reader: R, options: &IngestOptions) -> Result<InteractionLog> {
    Ok(ingest(&read_records(reader, options)?))
}

/// Iteratively drop users and items with fewer than `k` interactions until a
/// fixed point, then recompact both id maps (relative order preserved).
pub fn k_core_filter(log: &InteractionLog, k: usize) -> InteractionLog {
    let n = log.interactions.len();
    let n_users = log.users.len() + 1;
    let n_items = log.items.len() + 1;

    let mut user_edges: Vec<Vec<usize>> = vec![Vec::new(); n_users];
    let mut item_edges: Vec<Vec<usize>> = vec![Vec::new(); n_items];
    for (e, it) in log.interactions.iter().enumerate() {
        user_edges[it.user as usize].push(e);
        item_edges[it.item as usize].push(e);
    }
    let mut user_deg: Vec<usize> = user_edges.iter().map(Vec::len).collect();
    let mut item_deg: Vec<usize> = item_edges.iter().map(Vec::len).collect();
    let mut edge_alive = vec![true; n];
    let mut user_dead = vec![false; n_users];
    let mut item_dead = vec![false; n_items];

    // (is_user, id)
    let mut queue: Vec<(bool, usize)> = Vec::new();
    for u in 1..n_users {
        if user_deg[u] < k {
            user_dead[u] = true;
            queue.push((true, u));
        }
    }
    for i in 1..n_items {
        if item_deg[i] < k {
            item_dead[i] = true;
            queue.push((false, i));
        }
    }
    while let Some((is_user, id)) = queue.pop() {
        let edges = if is_user { &user_edges[id] } else { &item_edges[id] };
        for &e in edges {
            if !edge_alive[e] {
                continue;
            }
            edge_alive[e] = false;
            let it = log.interactions[e];
            if is_user {
                let other = it.item as usize;
                item_deg[other] -= 1;
                if !item_dead[other] && item_deg[other] < k {
                    item_dead[other] = true;
                    queue.push((false, other));
                }
            } else {
                let other = it.user as usize;
                user_deg[other] -= 1;
                if !user_dead[other] && user_deg[other] < k {
                    user_dead[other] = true;
                    queue.push((true, other));
                }
            }
        }
    }

    let survivors: Vec<Interaction> = log
        .interactions
        .iter()
        .zip(&edge_alive)
        .filter(|(_, &alive)| alive)
        .map(|(it, _)| *it)
        .collect();
    recompact(log, survivors)
}

pub fn five_core_filter(log: &InteractionLog) -> InteractionLog {
    k_core_filter(log, 5)
}

/// Rebuild dense ids for the given subset of `log`'s interactions.
fn recompact(log: &InteractionLog, survivors: Vec<Interaction>) -> InteractionLog {
    let mut user_used = vec![false; log.users.len() + 1];
    let mut item_used = vec![false; log.items.len() + 1];
    for it in &survivors {
        user_used[it.user as usize] = true;
        item_used[it.item as usize] = true;
    }
    let remap = |map: &IdMap, used: &[bool]| {
        let mut out = IdMap::new();
        let mut table = vec![0u32; used.len()];
        for (id, ext) in map.iter() {
            if used[id as usize] {
                table[id as usize] = out.get_or_insert(ext);
            }
        }
        (out, table)
    };
    let (users, user_table) = remap(&log.users, &user_used);
    let (items, item_table) = remap(&log.items, &item_used);
    let interactions = survivors
        .into_iter()
        .map(|it| Interaction {
            user: user_table[it.user as usize],
            item: item_table[it.item as usize],
            timestamp: it.timestamp,
        })
        .collect();
    InteractionLog {
        interactions,
        users,
        items,
    }
}

/// A user's items in chronological order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSequence {
    pub user: UserId,
    pub items: Vec<ItemId>,
}

/// One sequence per user, ordered by dense user id. Items are sorted by
/// timestamp; equal timestamps keep input order.
pub fn build_sequences(log: &InteractionLog) -> Vec<UserSequence> {
    let mut per_user: Vec<Vec<(i64, ItemId)>> = vec![Vec::new(); log.users.len() + 1];
    for it in &log.interactions {
        per_user[it.user as usize].push((it.timestamp, it.item));
    }
    per_user
        .into_iter()
        .enumerate()
        .skip(1)
        .filter(|(_, v)| !v.is_empty())
        .map(|(user, mut v)| {
            v.sort_by_key(|&(ts, _)| ts);
            UserSequence {
                user: user as UserId,
                items: v.into_iter().map(|(_, item)| item).collect(),
            }
        })
        .collect()
}

/// Leave-one-out partition of one user's sequence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitUser {
    pub user: UserId,
    pub train: Vec<ItemId>,
    pub valid: ItemId,
    pub test: ItemId,
}

impl SplitUser {
    /// Items known before the given phase's target.
    pub fn history(&self, phase: Phase) -> Vec<ItemId> {
        let mut h = self.train.clone();
        if phase == Phase::Test {
            h.push(self.valid);
        }
        h
    }

    pub fn target(&self, phase: Phase) -> ItemId {
        match phase {
            Phase::Valid => self.valid,
            Phase::Test => self.test,
        }
    }

    pub fn full_sequence(&self) -> Vec<ItemId> {
        let mut s = self.train.clone();
        s.push(self.valid);
        s.push(self.test);
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Valid,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitDataset {
    pub users: Vec<SplitUser>,
    /// |V|; real item ids are `1..=num_items`.
    pub num_items: usize,
    /// Users dropped because their sequence had fewer than 3 items.
    pub excluded: usize,
}

impl SplitDataset {
    pub fn mask_token(&self) -> ItemId {
        mask_token(self.num_items)
    }
}

pub fn leave_one_out_split(seqs: &[UserSequence], num_items: usize) -> SplitDataset {
    let mut users = Vec::with_capacity(seqs.len());
    let mut excluded = 0;
    for s in seqs {
        let n = s.items.len();
        if n < 3 {
            excluded += 1;
            continue;
        }
        users.push(SplitUser {
            user: s.user,
            train: s.items[..n - 2].to_vec(),
            valid: s.items[n - 2],
            test: s.items[n - 1],
        });
    }
    if excluded > 0 {
        log::warn!("{excluded} users with fewer than 3 interactions excluded from the split");
    }
    SplitDataset {
        users,
        num_items,
        excluded,
    }
}

/// Fixed-length, left-padded view of the most recent items.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PaddedWindow {
    pub item_ids: Vec<ItemId>,
    pub true_length: usize,
}

impl PaddedWindow {
    pub fn len(&self) -> usize {
        self.item_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.item_ids.is_empty()
    }

    /// Index of the first non-padding slot.
    pub fn pad_len(&self) -> usize {
        self.item_ids.len() - self.true_length
    }
}

pub fn make_window(items: &[ItemId], max_len: usize) -> Result<PaddedWindow> {
    if max_len == 0 {
        return Err(Error::InvalidArgument("window length must be at least 1".into()));
    }
    if items.is_empty() {
        return Err(Error::EmptySequence);
    }
    let keep = items.len().min(max_len);
    let mut item_ids = vec![PAD; max_len - keep];
    item_ids.extend_from_slice(&items[items.len() - keep..]);
    Ok(PaddedWindow {
        item_ids,
        true_length: keep,
    })
}

/// Dataset summary with the usual statistics-table columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub actions: usize,
    pub avg_length: f64,
    pub density: f64,
}

impl DatasetStats {
    pub fn of(log: &InteractionLog) -> Self {
        let users = log.users.len();
        let items = log.items.len();
        let actions = log.interactions.len();
        let avg_length = if users == 0 { 0.0 } else { actions as f64 / users as f64 };
        let density = if users == 0 || items == 0 {
            0.0
        } else {
            actions as f64 / (users as f64 * items as f64)
        };
        Self {
            users,
            items,
            actions,
            avg_length,
            density,
        }
    }

    pub fn to_table(&self) -> String {
        format!(
            "#users\t#items\t#actions\tavg.length\tdensity\n{}\t{}\t{}\t{:.1}\t{:.2}%\n",
            self.users,
            self.items,
            self.actions,
            self.avg_length,
            self.density * 100.0
        )
    }
}
