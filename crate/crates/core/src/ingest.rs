//! Loading raw interaction logs, k-core filtering, dense id assignment and
//! train/test splitting.
//!
//! The central type is [`InteractionDataset`], a dual-indexed sparse user-item
//! matrix: `user_rows` realizes the per-user interaction sets and `item_cols`
//! the per-item transpose. Both indexes hold the same multiset of entries and
//! all interactions are binarized to `r_ui = 1`.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputFormat {
    Tsv,
    Csv,
}

impl InputFormat {
    fn delimiter(self) -> char {
        match self {
            InputFormat::Tsv => '\t',
            InputFormat::Csv => ',',
        }
    }
}

impl std::str::FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsv" => Ok(InputFormat::Tsv),
            "csv" => Ok(InputFormat::Csv),
            other => Err(Error::invalid(format!("unknown input format `{other}`"))),
        }
    }
}

/// One raw log line: opaque user/item keys plus a timestamp in seconds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRecord {
    pub user: String,
    pub item: String,
    pub ts: i64,
}

/// Raw interaction log in file order. Repeat consumption of the same
/// (user, item) pair is preserved here; deduplication happens in
/// [`build_dataset`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RawInteractions {
    pub records: Vec<RawRecord>,
}

impl RawInteractions {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// One stored interaction. In a user row `id` is the item id; in an item
/// column it is the user id. `seq` is the stable input position used for
/// deterministic tie-breaking, `weight` the observed-entry weight `w_ui`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry {
    pub id: u32,
    pub weight: f64,
    pub ts: i64,
    pub seq: u32,
}

/// Dual-indexed sparse interaction matrix with dense ids and bidirectional
/// key tables. Rows and columns are kept sorted by id.
#[derive(Debug, Clone, Default)]
pub struct InteractionDataset {
    user_rows: Vec<Vec<Entry>>,
    item_cols: Vec<Vec<Entry>>,
    nnz: usize,
    user_keys: Vec<String>,
    item_keys: Vec<String>,
    user_ids: HashMap<String, u32>,
    item_ids: HashMap<String, u32>,
    next_seq: u32,
}

impl InteractionDataset {
    pub fn num_users(&self) -> usize {
        self.user_rows.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_cols.len()
    }

    pub fn nnz(&self) -> usize {
        self.nnz
    }

    pub fn user_row(&self, u: usize) -> &[Entry] {
        &self.user_rows[u]
    }

    pub fn item_col(&self, i: usize) -> &[Entry] {
        &self.item_cols[i]
    }

    pub fn user_key(&self, u: usize) -> &str {
        &self.user_keys[u]
    }

    pub fn item_key(&self, i: usize) -> &str {
        &self.item_keys[i]
    }

    pub fn user_id(&self, key: &str) -> Option<u32> {
        self.user_ids.get(key).copied()
    }

    pub fn item_id(&self, key: &str) -> Option<u32> {
        self.item_ids.get(key).copied()
    }

    /// Position of item `i` within user `u`'s sorted row, if observed.
    pub fn find_in_row(&self, u: usize, i: u32) -> Option<usize> {
        self.user_rows[u].binary_search_by_key(&i, |e| e.id).ok()
    }

    pub fn is_observed(&self, u: usize, i: u32) -> bool {
        self.find_in_row(u, i).is_some()
    }

    /// Appends an empty user row, registering `key`. Returns the new id.
    pub fn append_user(&mut self, key: &str) -> u32 {
        debug_assert!(!self.user_ids.contains_key(key));
        let id = self.user_rows.len() as u32;
        self.user_rows.push(Vec::new());
        self.user_keys.push(key.to_owned());
        self.user_ids.insert(key.to_owned(), id);
        id
    }

    pub fn append_item(&mut self, key: &str) -> u32 {
        debug_assert!(!self.item_ids.contains_key(key));
        let id = self.item_cols.len() as u32;
        self.item_cols.push(Vec::new());
        self.item_keys.push(key.to_owned());
        self.item_ids.insert(key.to_owned(), id);
        id
    }

    /// Inserts the interaction (u, i) into both indexes at its sorted
    /// position and returns the position within the user row. The pair must
    /// not be observed yet.
    pub fn insert(&mut self, u: u32, i: u32, weight: f64, ts: i64) -> usize {
        let seq = self.next_seq;
        self.next_seq += 1;
        let row = &mut self.user_rows[u as usize];
        let pos = match row.binary_search_by_key(&i, |e| e.id) {
            Ok(_) => panic!("insert of already-observed pair ({u}, {i})"),
            Err(p) => p,
        };
        row.insert(pos, Entry { id: i, weight, ts, seq });
        let col = &mut self.item_cols[i as usize];
        let cpos = col.binary_search_by_key(&u, |e| e.id).unwrap_err();
        col.insert(cpos, Entry { id: u, weight, ts, seq });
        self.nnz += 1;
        pos
    }

    /// Rewrites weight and timestamp of an already-observed pair in both
    /// indexes.
    pub fn reweight(&mut self, u: u32, i: u32, weight: f64, ts: i64) {
        let pos = self.find_in_row(u as usize, i).expect("pair not observed");
        let e = &mut self.user_rows[u as usize][pos];
        e.weight = weight;
        e.ts = ts;
        let cpos = self.item_cols[i as usize]
            .binary_search_by_key(&u, |e| e.id)
            .expect("transpose out of sync");
        let e = &mut self.item_cols[i as usize][cpos];
        e.weight = weight;
        e.ts = ts;
    }

    /// All entries as (u, i, weight, ts, seq) tuples in user-major order.
    pub fn entries(&self) -> impl Iterator<Item = (u32, u32, f64, i64, u32)> + '_ {
        self.user_rows.iter().enumerate().flat_map(|(u, row)| {
            row.iter()
                .map(move |e| (u as u32, e.id, e.weight, e.ts, e.seq))
        })
    }

    /// Checks that both indexes hold the same multiset of entries and that
    /// all ids are in range. Used by tests and debug assertions.
    pub fn validate(&self) -> Result<()> {
        let m = self.num_users() as u32;
        let n = self.num_items() as u32;
        let mut from_rows: Vec<(u32, u32, u64, i64, u32)> = Vec::with_capacity(self.nnz);
        for (u, row) in self.user_rows.iter().enumerate() {
            for w in row.windows(2) {
                if w[0].id >= w[1].id {
                    return Err(Error::Validation(format!("user row {u} not sorted")));
                }
            }
            for e in row {
                if e.id >= n {
                    return Err(Error::Validation(format!("item id {} out of range", e.id)));
                }
                from_rows.push((u as u32, e.id, e.weight.to_bits(), e.ts, e.seq));
            }
        }
        let mut from_cols: Vec<(u32, u32, u64, i64, u32)> = Vec::with_capacity(self.nnz);
        for (i, col) in self.item_cols.iter().enumerate() {
            for e in col {
                if e.id >= m {
                    return Err(Error::Validation(format!("user id {} out of range", e.id)));
                }
                from_cols.push((e.id, i as u32, e.weight.to_bits(), e.ts, e.seq));
            }
        }
        if from_rows.len() != self.nnz || from_cols.len() != self.nnz {
            return Err(Error::Validation("nnz out of sync with indexes".into()));
        }
        from_rows.sort_unstable();
        from_cols.sort_unstable();
        if from_rows != from_cols {
            return Err(Error::Validation("indexes are not transposes".into()));
        }
        Ok(())
    }

    /// Writes the snapshot format: header `M N nnz`, then one `u i t` line
    /// per entry in stable input order.
    pub fn write_snapshot<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{} {} {}", self.num_users(), self.num_items(), self.nnz)?;
        let mut entries: Vec<(u32, u32, i64, u32)> = self
            .entries()
            .map(|(u, i, _w, t, s)| (u, i, t, s))
            .collect();
        entries.sort_unstable_by_key(|e| e.3);
        let mut buf = String::new();
        for (u, i, t, _) in entries {
            buf.clear();
            let _ = writeln!(buf, "{u} {i} {t}");
            out.write_all(buf.as_bytes())?;
        }
        Ok(())
    }

    pub fn save_snapshot(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::Io {
            path: path.to_owned(),
            source: e,
        })?;
        let mut w = std::io::BufWriter::new(file);
        self.write_snapshot(&mut w).map_err(|e| Error::Io {
            path: path.to_owned(),
            source: e,
        })
    }

    /// Reads a snapshot back. Keys become the decimal dense ids.
    pub fn read_snapshot<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Parse { line: 1, msg: "missing header".into() })?;
        let header = header.map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?;
        if dims.len() != 3 {
            return Err(Error::Parse { line: 1, msg: "header must be `M N nnz`".into() });
        }
        let (m, n, nnz) = (dims[0], dims[1], dims[2]);
        let mut ds = InteractionDataset::default();
        for u in 0..m {
            ds.append_user(&u.to_string());
        }
        for i in 0..n {
            ds.append_item(&i.to_string());
        }
        for (idx, line) in lines {
            let lineno = idx + 1;
            let line = line.map_err(|e| Error::Parse { line: lineno, msg: e.to_string() })?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(Error::Parse { line: lineno, msg: "expected `u i t`".into() });
            }
            let u: u32 = fields[0]
                .parse()
                .map_err(|e| Error::Parse { line: lineno, msg: format!("bad user id: {e}") })?;
            let i: u32 = fields[1]
                .parse()
                .map_err(|e| Error::Parse { line: lineno, msg: format!("bad item id: {e}") })?;
            let t: i64 = fields[2]
                .parse()
                .map_err(|e| Error::Parse { line: lineno, msg: format!("bad timestamp: {e}") })?;
            if u as usize >= m || i as usize >= n {
                return Err(Error::Parse { line: lineno, msg: "id out of range".into() });
            }
            ds.insert(u, i, 1.0, t);
        }
        if ds.nnz != nnz {
            return Err(Error::Validation(format!(
                "snapshot declares {} entries, found {}",
                nnz, ds.nnz
            )));
        }
        Ok(ds)
    }

    pub fn load_snapshot(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::Io {
            path: path.to_owned(),
            source: e,
        })?;
        Self::read_snapshot(BufReader::new(file))
    }
}

/// A held-out test interaction in dense-id space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeldOut {
    pub user: u32,
    pub item: u32,
    pub ts: i64,
}

/// Train/test split. For the chronological split, ids are reassigned so that
/// training users/items occupy `0..train.num_users()` and users/items seen
/// only in the test stream get fresh ids appended after them; `user_keys` and
/// `item_keys` cover the combined id space.
#[derive(Debug, Clone)]
pub struct SplitPair {
    pub train: InteractionDataset,
    pub test: Vec<HeldOut>,
    pub user_keys: Vec<String>,
    pub item_keys: Vec<String>,
}

/// Loads a delimited interaction log. Each non-comment line needs at least
/// `user<sep>item<sep>timestamp`; extra columns are ignored, lines starting
/// with `#` are skipped.
pub fn load_interactions(path: &Path, format: InputFormat) -> Result<RawInteractions> {
    let file = std::fs::File::open(path).map_err(|e| Error::Io {
        path: path.to_owned(),
        source: e,
    })?;
    parse_interactions(BufReader::new(file), format)
}

pub fn parse_interactions<R: BufRead>(reader: R, format: InputFormat) -> Result<RawInteractions> {
    let sep = format.delimiter();
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::Parse { line: lineno, msg: e.to_string() })?;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.split(sep);
        let user = fields
            .next()
            .filter(|f| !f.is_empty())
            .ok_or_else(|| Error::Parse { line: lineno, msg: "missing user field".into() })?;
        let item = fields
            .next()
            .filter(|f| !f.is_empty())
            .ok_or_else(|| Error::Parse { line: lineno, msg: "missing item field".into() })?;
        let ts_field = fields
            .next()
            .ok_or_else(|| Error::Parse { line: lineno, msg: "missing timestamp field".into() })?;
        let ts: i64 = ts_field.trim().parse().map_err(|e| Error::Parse {
            line: lineno,
            msg: format!("bad timestamp `{ts_field}`: {e}"),
        })?;
        records.push(RawRecord {
            user: user.to_owned(),
            item: item.to_owned(),
            ts,
        });
    }
    Ok(RawInteractions { records })
}

/// Iterative k-core filter over distinct (user, item) pairs: repeatedly drops
/// users and items with fewer than `threshold` distinct interactions until
/// every survivor meets the threshold.
pub fn kcore_filter(raw: &RawInteractions, threshold: usize) -> RawInteractions {
    assert!(threshold >= 1, "k-core threshold must be >= 1");
    let mut pairs: HashSet<(&str, &str)> = HashSet::new();
    for r in &raw.records {
        pairs.insert((r.user.as_str(), r.item.as_str()));
    }
    let mut alive_users: HashSet<&str> = pairs.iter().map(|p| p.0).collect();
    let mut alive_items: HashSet<&str> = pairs.iter().map(|p| p.1).collect();
    loop {
        let mut user_counts: HashMap<&str, usize> = HashMap::new();
        let mut item_counts: HashMap<&str, usize> = HashMap::new();
        for &(u, i) in &pairs {
            if alive_users.contains(u) && alive_items.contains(i) {
                *user_counts.entry(u).or_default() += 1;
                *item_counts.entry(i).or_default() += 1;
            }
        }
        let before = alive_users.len() + alive_items.len();
        alive_users.retain(|u| user_counts.get(u).copied().unwrap_or(0) >= threshold);
        alive_items.retain(|i| item_counts.get(i).copied().unwrap_or(0) >= threshold);
        if alive_users.len() + alive_items.len() == before {
            break;
        }
    }
    let records = raw
        .records
        .iter()
        .filter(|r| alive_users.contains(r.user.as_str()) && alive_items.contains(r.item.as_str()))
        .cloned()
        .collect();
    RawInteractions { records }
}

/// Builds the dual-indexed dataset: dense ids in first-appearance order,
/// duplicate (u, i) pairs collapsed keeping the latest timestamp, `r_ui = 1`
/// and `w_ui = 1` everywhere.
pub fn build_dataset(raw: &RawInteractions) -> InteractionDataset {
    let mut ds = InteractionDataset::default();
    // (u, i) -> (ts, seq) of the surviving record
    let mut latest: HashMap<(u32, u32), (i64, u32)> = HashMap::new();
    for (seq, r) in raw.records.iter().enumerate() {
        let u = match ds.user_ids.get(&r.user) {
            Some(&id) => id,
            None => ds.append_user(&r.user),
        };
        let i = match ds.item_ids.get(&r.item) {
            Some(&id) => id,
            None => ds.append_item(&r.item),
        };
        let cell = latest.entry((u, i)).or_insert((r.ts, seq as u32));
        if r.ts >= cell.0 {
            *cell = (r.ts, seq as u32);
        }
    }
    let mut collapsed: Vec<((u32, u32), (i64, u32))> = latest.into_iter().collect();
    collapsed.sort_unstable_by_key(|&(_, (_, seq))| seq);
    for ((u, i), (ts, _)) in collapsed {
        ds.insert(u, i, 1.0, ts);
    }
    ds.next_seq = raw.records.len() as u32;
    ds
}

/// Holds out each user's latest interaction (ties broken by largest stable
/// input position). Ids and key tables are unchanged; a user with a single
/// interaction keeps an empty training row.
pub fn split_leave_one_out(data: &InteractionDataset) -> SplitPair {
    let mut train = data.clone();
    let mut test = Vec::with_capacity(data.num_users());
    for u in 0..data.num_users() {
        let row = data.user_row(u);
        if row.is_empty() {
            continue;
        }
        let held = row
            .iter()
            .max_by_key(|e| (e.ts, e.seq))
            .copied()
            .expect("nonempty row");
        test.push(HeldOut { user: u as u32, item: held.id, ts: held.ts });
        let pos = train.find_in_row(u, held.id).expect("entry present");
        train.user_rows[u].remove(pos);
        let cpos = train.item_cols[held.id as usize]
            .binary_search_by_key(&(u as u32), |e| e.id)
            .expect("transpose entry present");
        train.item_cols[held.id as usize].remove(cpos);
        train.nnz -= 1;
    }
    SplitPair {
        user_keys: data.user_keys.clone(),
        item_keys: data.item_keys.clone(),
        train,
        test,
    }
}

/// Global chronological split: entries sorted by (timestamp, stable input
/// order), the first `ceil((1 - test_fraction) * nnz)` go to train and the
/// rest form the test stream in time order. Ids are reassigned: training
/// users/items first (in order of appearance), test-only ones appended.
pub fn split_chronological(data: &InteractionDataset, test_fraction: f64) -> SplitPair {
    assert!(
        test_fraction > 0.0 && test_fraction < 1.0,
        "test_fraction must be in (0, 1)"
    );
    let mut all: Vec<(u32, u32, f64, i64, u32)> = data.entries().collect();
    all.sort_unstable_by_key(|&(_, _, _, ts, seq)| (ts, seq));
    let n_train = ((1.0 - test_fraction) * data.nnz() as f64).ceil() as usize;
    let n_train = n_train.min(all.len());

    let mut train = InteractionDataset::default();
    let mut user_map: HashMap<u32, u32> = HashMap::new();
    let mut item_map: HashMap<u32, u32> = HashMap::new();
    for &(u, i, w, ts, _) in &all[..n_train] {
        let nu = *user_map
            .entry(u)
            .or_insert_with(|| train.append_user(data.user_key(u as usize)));
        let ni = *item_map
            .entry(i)
            .or_insert_with(|| train.append_item(data.item_key(i as usize)));
        train.insert(nu, ni, w, ts);
    }
    let mut user_keys = train.user_keys.clone();
    let mut item_keys = train.item_keys.clone();
    let mut next_user = train.num_users() as u32;
    let mut next_item = train.num_items() as u32;
    let mut test = Vec::with_capacity(all.len() - n_train);
    for &(u, i, _, ts, _) in &all[n_train..] {
        let nu = *user_map.entry(u).or_insert_with(|| {
            user_keys.push(data.user_key(u as usize).to_owned());
            let id = next_user;
            next_user += 1;
            id
        });
        let ni = *item_map.entry(i).or_insert_with(|| {
            item_keys.push(data.item_key(i as usize).to_owned());
            let id = next_item;
            next_item += 1;
            id
        });
        test.push(HeldOut { user: nu, item: ni, ts });
    }
    SplitPair { train, test, user_keys, item_keys }
}
