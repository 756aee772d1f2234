use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{build_sequences, leave_one_out_split, DatasetStats, IdMap, InteractionLog, SplitDataset, UserSequence};
use crate::error::{Error, Result};

pub const USER_MAP_FILE: &str = "user_map.tsv";
pub const ITEM_MAP_FILE: &str = "item_map.tsv";
pub const SEQUENCES_FILE: &str = "sequences.txt";
pub const STATS_FILE: &str = "stats.tsv";

/// A preprocessed corpus as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct ProcessedDataset {
    pub users: IdMap,
    pub items: IdMap,
    pub sequences: Vec<UserSequence>,
    pub stats: DatasetStats,
}

impl ProcessedDataset {
    pub fn from_log(log: &InteractionLog) -> Self {
        Self {
            users: log.users.clone(),
            items: log.items.clone(),
            sequences: build_sequences(log),
            stats: DatasetStats::of(log),
        }
    }

    pub fn split(&self) -> SplitDataset {
        leave_one_out_split(&self.sequences, self.items.len())
    }
}

fn write_map(path: &Path, map: &IdMap) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for (id, ext) in map.iter() {
        writeln!(w, "{ext}\t{id}")?;
    }
    w.flush()?;
    Ok(())
}

fn read_map(path: &Path) -> Result<IdMap> {
    let mut map = IdMap::new();
    let reader = BufReader::new(fs::File::open(path)?);
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let (ext, id) = line.rsplit_once('\t').ok_or_else(|| Error::Parse {
            line: idx + 1,
            message: format!("{}: expected `external<TAB>dense`", path.display()),
        })?;
        let id: u32 = id.parse().map_err(|_| Error::Parse {
            line: idx + 1,
            message: format!("{}: bad dense id {id:?}", path.display()),
        })?;
        if map.get_or_insert(ext) != id {
            return Err(Error::Parse {
                line: idx + 1,
                message: format!("{}: dense ids must be contiguous from 1", path.display()),
            });
        }
    }
    Ok(map)
}

/// Write id maps, sequences and the statistics table into `dir`.
pub fn write_dataset_dir(ds: &ProcessedDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_map(&dir.join(USER_MAP_FILE), &ds.users)?;
    write_map(&dir.join(ITEM_MAP_FILE), &ds.items)?;
    let mut w = BufWriter::new(fs::File::create(dir.join(SEQUENCES_FILE))?);
    for s in &ds.sequences {
        write!(w, "{}", s.user)?;
        for item in &s.items {
            write!(w, " {item}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    fs::write(dir.join(STATS_FILE), ds.stats.to_table())?;
    Ok(())
}

pub fn read_dataset_dir(dir: &Path) -> Result<ProcessedDataset> {
    let users = read_map(&dir.join(USER_MAP_FILE))?;
    let items = read_map(&dir.join(ITEM_MAP_FILE))?;
    let reader = BufReader::new(fs::File::open(dir.join(SEQUENCES_FILE))?);
    let mut sequences = Vec::new();
    let mut actions = 0;
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| Error::Parse { line: idx + 1, message };
        let mut nums = line.split_whitespace().map(|t| t.parse::<u32>());
        let user = nums
            .next()
            .ok_or_else(|| bad("missing user id".into()))?
            .map_err(|e| bad(e.to_string()))?;
        let items_row = nums.collect::<Result<Vec<u32>, _>>().map_err(|e| bad(e.to_string()))?;
        if items_row.is_empty() {
            return Err(bad(format!("user {user} has no items")));
        }
        if let Some(&bad_item) = items_row.iter().find(|&&i| i == 0 || i as usize > items.len()) {
            return Err(bad(format!("item id {bad_item} outside 1..={}", items.len())));
        }
        actions += items_row.len();
        sequences.push(UserSequence { user, items: items_row });
    }
    let n_users = users.len();
    let n_items = items.len();
    let stats = DatasetStats {
        users: n_users,
        items: n_items,
        actions,
        avg_length: if n_users == 0 { 0.0 } else { actions as f64 / n_users as f64 },
        density: if n_users == 0 || n_items == 0 {
            0.0
        } else {
            actions as f64 / (n_users as f64 * n_items as f64)
        },
    };
    Ok(ProcessedDataset {
        users,
        items,
        sequences,
        stats,
    })
}
