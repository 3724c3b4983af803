//! Co-occurrence tensors from `(record, mode, element)` event tables, and a
//! synthetic event generator with planted block structure.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::SparseTensor;

/// Index reserved in every mode for "no event in this mode".
pub const NULL_ELEMENT: u32 = 1;

/// Default cap on the number of multi-indices one record may expand to.
pub const DEFAULT_COMBINATION_CAP: u64 = 1_000_000;

/// Events grouped by record, with a per-mode element catalog.
///
/// Catalog element ids are dense `1..=n_μ` in sorted name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventTable {
    records: BTreeMap<String, BTreeMap<String, BTreeSet<u32>>>,
    catalogs: BTreeMap<String, Vec<String>>,
}

impl EventTable {
    pub fn from_events<I, R, M, E>(events: I) -> Self
    where
        I: IntoIterator<Item = (R, M, E)>,
        R: Into<String>,
        M: Into<String>,
        E: Into<String>,
    {
        let triples: Vec<(String, String, String)> = events
            .into_iter()
            .map(|(r, m, e)| (r.into(), m.into(), e.into()))
            .collect();
        let mut names: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (_, m, e) in &triples {
            names.entry(m.clone()).or_default().insert(e.clone());
        }
        let catalogs: BTreeMap<String, Vec<String>> = names
            .into_iter()
            .map(|(m, set)| (m, set.into_iter().collect()))
            .collect();
        let mut records: BTreeMap<String, BTreeMap<String, BTreeSet<u32>>> = BTreeMap::new();
        for (r, m, e) in triples {
            let id = catalogs[&m].binary_search(&e).unwrap() as u32 + 1;
            records
                .entry(r)
                .or_default()
                .entry(m)
                .or_default()
                .insert(id);
        }
        Self { records, catalogs }
    }

    /// Registers modes that may have no events, so they can still be
    /// selected (every record is then null in them).
    pub fn with_modes<I: IntoIterator<Item = S>, S: Into<String>>(mut self, modes: I) -> Self {
        for m in modes {
            self.catalogs.entry(m.into()).or_default();
        }
        self
    }

    /// Reads `record_id,mode_id,element_name` rows. An optional header row
    /// with exactly those names is skipped; `#` starts a comment line.
    pub fn read_csv<R: Read>(reader: R, path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut events = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = rec.position().map_or(i + 1, |p| p.line() as usize);
            if rec.len() != 3 {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    msg: format!("expected 3 fields, found {}", rec.len()),
                });
            }
            if i == 0 && &rec[0] == "record_id" && &rec[1] == "mode_id" {
                continue;
            }
            if rec.iter().any(str::is_empty) {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    msg: "empty field".into(),
                });
            }
            events.push((rec[0].to_string(), rec[1].to_string(), rec[2].to_string()));
        }
        Ok(Self::from_events(events))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| {
            Error::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {e}", path.display()),
            ))
        })?;
        Self::read_csv(file, path)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["record_id", "mode_id", "element_name"])?;
        for (r, modes) in &self.records {
            for (m, ids) in modes {
                for &id in ids {
                    out.write_record([r, m, &self.catalogs[m][id as usize - 1]])?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn num_records(&self) -> usize {
        self.records.len()
    }

    pub fn modes(&self) -> impl Iterator<Item = &str> {
        self.catalogs.keys().map(String::as_str)
    }

    pub fn num_elements(&self, mode: &str) -> Option<usize> {
        self.catalogs.get(mode).map(Vec::len)
    }

    /// Name of catalog element `id` (1-based) in `mode`.
    pub fn element_name(&self, mode: &str, id: u32) -> Option<&str> {
        self.catalogs
            .get(mode)?
            .get((id as usize).checked_sub(1)?)
            .map(String::as_str)
    }

    /// Tensor index of a named element: catalog id shifted past the null
    /// element.
    pub fn tensor_index(&self, mode: &str, name: &str) -> Option<u32> {
        let cat = self.catalogs.get(mode)?;
        cat.binary_search_by(|n| n.as_str().cmp(name))
            .ok()
            .map(|i| i as u32 + 1 + NULL_ELEMENT)
    }

    pub fn records(&self) -> &BTreeMap<String, BTreeMap<String, BTreeSet<u32>>> {
        &self.records
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CooccurrenceOptions {
    /// Leave out the cell where every mode is null.
    pub drop_all_null: bool,
    pub max_combinations: u64,
}

impl Default for CooccurrenceOptions {
    fn default() -> Self {
        Self {
            drop_all_null: false,
            max_combinations: DEFAULT_COMBINATION_CAP,
        }
    }
}

/// Counts co-occurrences over the selected modes.
///
/// Mode `μ` gets `n_μ + 1` indices: [`NULL_ELEMENT`] for records without
/// events in `μ`, then the catalog elements. Every record adds 1 to each
/// multi-index in the cartesian product of its per-mode element sets.
pub fn build_cooccurrence_tensor(
    events: &EventTable,
    modes: &[String],
    opts: &CooccurrenceOptions,
) -> Result<SparseTensor> {
    if modes.is_empty() {
        return Err(Error::InvalidArgument("no modes selected".into()));
    }
    let mut dims = Vec::with_capacity(modes.len());
    for m in modes {
        let n = events.catalogs.get(m).ok_or_else(|| {
            let known: Vec<&str> = events.modes().collect();
            Error::InvalidArgument(format!("unknown mode `{m}` (known: {})", known.join(", ")))
        })?;
        dims.push(n.len() as u32 + 1);
    }
    let null_set = BTreeSet::from([0u32]);
    let mut coords: Vec<(Vec<u32>, f64)> = Vec::new();
    for (record, per_mode) in &events.records {
        let sets: Vec<&BTreeSet<u32>> = modes
            .iter()
            .map(|m| per_mode.get(m).unwrap_or(&null_set))
            .collect();
        if opts.drop_all_null && sets.iter().all(|s| std::ptr::eq(*s, &null_set)) {
            continue;
        }
        let count = sets.iter().map(|s| s.len() as u128).product::<u128>();
        if count > opts.max_combinations as u128 {
            return Err(Error::CombinationCap {
                record: record.clone(),
                count,
                cap: opts.max_combinations,
            });
        }
        // catalog id c maps to tensor index c + 1; the null marker 0 to 1
        let lists: Vec<Vec<u32>> = sets
            .iter()
            .map(|s| s.iter().map(|&c| c + NULL_ELEMENT).collect())
            .collect();
        let mut cursor = vec![0usize; lists.len()];
        loop {
            coords.push((cursor.iter().zip(&lists).map(|(&c, l)| l[c]).collect(), 1.0));
            let mut p = 0;
            while p < cursor.len() {
                cursor[p] += 1;
                if cursor[p] < lists[p].len() {
                    break;
                }
                cursor[p] = 0;
                p += 1;
            }
            if p == cursor.len() {
                break;
            }
        }
    }
    Ok(SparseTensor::from_coords(dims, coords)?.with_null_element(Some(NULL_ELEMENT)))
}

/// Synthetic event generator settings, read from a `key = value` profile.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthProfile {
    pub modes: usize,
    /// Elements per mode.
    pub elements: usize,
    pub records: usize,
    /// Planted co-occurrence blocks; 0 draws every event uniformly.
    pub blocks: usize,
    /// Elements per mode reserved for each block (disjoint ranges).
    pub block_elements: usize,
    /// Probability that a record has events in a given mode.
    pub presence: f64,
    /// Events per present mode are drawn from `1..=max_events`.
    pub max_events: usize,
    /// Probability that an event ignores its record's block.
    pub noise: f64,
}

impl Default for SynthProfile {
    fn default() -> Self {
        Self {
            modes: 4,
            elements: 20,
            records: 1000,
            blocks: 2,
            block_elements: 4,
            presence: 0.7,
            max_events: 2,
            noise: 0.0,
        }
    }
}

impl SynthProfile {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut p = Self::default();
        for (i, line) in text.lines().enumerate() {
            let perr = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            };
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| perr("expected `key = value`".into()))?;
            let (key, value) = (key.trim(), value.trim());
            let int = || {
                value
                    .parse::<usize>()
                    .map_err(|e| perr(format!("{key}: {e}")))
            };
            let real = || {
                value
                    .parse::<f64>()
                    .map_err(|e| perr(format!("{key}: {e}")))
            };
            match key {
                "modes" => p.modes = int()?,
                "elements" => p.elements = int()?,
                "records" => p.records = int()?,
                "blocks" => p.blocks = int()?,
                "block_elements" => p.block_elements = int()?,
                "presence" => p.presence = real()?,
                "max_events" => p.max_events = int()?,
                "noise" => p.noise = real()?,
                _ => return Err(perr(format!("unknown key `{key}`"))),
            }
        }
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {e}", path.display()),
            ))
        })?;
        Self::parse(&text, path)
    }

    pub fn to_text(&self) -> String {
        format!(
            "modes = {}\nelements = {}\nrecords = {}\nblocks = {}\nblock_elements = {}\npresence = {}\nmax_events = {}\nnoise = {}\n",
            self.modes,
            self.elements,
            self.records,
            self.blocks,
            self.block_elements,
            self.presence,
            self.max_events,
            self.noise
        )
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.modes == 0 || self.elements == 0 || self.max_events == 0 {
            return bad("modes, elements and max_events must be positive");
        }
        if self.blocks > 0
            && (self.block_elements == 0 || self.blocks * self.block_elements > self.elements)
        {
            return bad("blocks × block_elements must be positive and fit in elements");
        }
        if !(0.0..=1.0).contains(&self.presence) || !(0.0..=1.0).contains(&self.noise) {
            return bad("presence and noise must lie in [0, 1]");
        }
        Ok(())
    }

    /// Names of the generated modes, `m1..md`.
    pub fn mode_names(&self) -> Vec<String> {
        (1..=self.modes).map(|m| format!("m{m}")).collect()
    }

    /// Name of element `e` (0-based); zero-padded so sorted order matches
    /// numeric order.
    pub fn element_name(e: usize) -> String {
        format!("e{e:06}")
    }

    /// Planted block owning element `e`, if any.
    pub fn block_of(&self, e: usize) -> Option<usize> {
        (self.blocks > 0 && e < self.blocks * self.block_elements).then(|| e / self.block_elements)
    }
}

/// Generates a reproducible event table. Each record picks a planted block
/// and, per mode, with probability `presence`, draws `1..=max_events`
/// elements from that block's range (or uniformly, with probability
/// `noise`).
pub fn synth_events(profile: &SynthProfile, seed: u64) -> Result<EventTable> {
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let modes = profile.mode_names();
    let mut events = Vec::new();
    for r in 0..profile.records {
        let record = format!("r{r:08}");
        let block = (profile.blocks > 0).then(|| rng.gen_range(0..profile.blocks));
        for mode in &modes {
            if rng.gen::<f64>() >= profile.presence {
                continue;
            }
            let count = rng.gen_range(1..=profile.max_events);
            for _ in 0..count {
                let e = match block {
                    Some(b) if rng.gen::<f64>() >= profile.noise => {
                        b * profile.block_elements + rng.gen_range(0..profile.block_elements)
                    }
                    _ => rng.gen_range(0..profile.elements),
                };
                events.push((record.clone(), mode.clone(), SynthProfile::element_name(e)));
            }
        }
    }
    Ok(EventTable::from_events(events).with_modes(modes))
}
