//! Corpus ingestion, cap-based undersampling, stratified train/test
//! splitting, and a diff-able on-disk manifest.
//!
//! A corpus is a directory tree `root/<family_name>/<image>.png`. The
//! manifest records every sample with its family, split assignment and
//! content hash, plus the cap/seed/fraction that produced it, so any
//! downstream artifact can be regenerated bit-for-bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::rng::{Rng, Stream};
use crate::{par, Error, Result};

/// A malware family with its contiguous class index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FamilyLabel {
    pub name: String,
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// One image sample. `split` is `None` until [`split`] has run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleRecord {
    pub image_path: String,
    pub family_index: usize,
    pub split: Option<Split>,
    pub content_hash: String,
}

/// The persisted record of a corpus: samples, labels and the knobs that
/// produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    records: Vec<SampleRecord>,
    family_table: Vec<FamilyLabel>,
    pub cap: Option<u32>,
    pub seed: u64,
    pub train_fraction: Option<f64>,
    pub warnings: Vec<String>,
}

impl CorpusManifest {
    pub fn new(records: Vec<SampleRecord>, family_table: Vec<FamilyLabel>) -> Result<Self> {
        let m = CorpusManifest {
            records,
            family_table,
            cap: None,
            seed: 0,
            train_fraction: None,
            warnings: Vec::new(),
        };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        for (i, fam) in self.family_table.iter().enumerate() {
            if fam.index != i {
                return Err(Error::UnknownFamilyIndex(fam.index));
            }
        }
        let mut seen = std::collections::HashSet::with_capacity(self.records.len());
        for rec in &self.records {
            if rec.family_index >= self.family_table.len() {
                return Err(Error::UnknownFamilyIndex(rec.family_index));
            }
            if !seen.insert(rec.image_path.as_str()) {
                return Err(Error::DuplicatePath(rec.image_path.clone()));
            }
        }
        if let Some(cap) = self.cap {
            for (idx, count) in self.family_counts().iter().enumerate() {
                if *count > cap as usize {
                    return Err(Error::ShapeMismatch(format!(
                        "family {} holds {} records over cap {}",
                        self.family_table[idx].name, count, cap
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn family_table(&self) -> &[FamilyLabel] {
        &self.family_table
    }

    pub fn family_count(&self) -> usize {
        self.family_table.len()
    }

    pub fn family_name(&self, index: usize) -> &str {
        &self.family_table[index].name
    }

    pub fn is_split(&self) -> bool {
        self.records.iter().any(|r| r.split.is_some())
    }

    /// Per-family record counts, indexed by family index.
    pub fn family_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.family_table.len()];
        for rec in &self.records {
            counts[rec.family_index] += 1;
        }
        counts
    }

    /// Records carrying the given split assignment.
    pub fn split_records(&self, split: Split) -> Vec<&SampleRecord> {
        self.records
            .iter()
            .filter(|r| r.split == Some(split))
            .collect()
    }
}

fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let digest = Sha256::digest(&bytes);
    let mut hex = String::with_capacity(64);
    for b in digest {
        write!(hex, "{b:02x}").expect("writing to string");
    }
    Ok(hex)
}

/// Walk `root/<family>/<image>` and build an uncapped, unsplit manifest.
///
/// Families come from the subdirectory names, sorted lexicographically;
/// records are sorted by path. File hashing fans out per file.
pub fn ingest(root: &Path) -> Result<CorpusManifest> {
    let mut family_dirs: Vec<(String, std::path::PathBuf)> = Vec::new();
    let entries = std::fs::read_dir(root)
        .map_err(|e| Error::io(format!("reading {}", root.display()), e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(format!("reading {}", root.display()), e))?;
        let path = entry.path();
        if path.is_dir() {
            family_dirs.push((entry.file_name().to_string_lossy().into_owned(), path));
        }
    }
    if family_dirs.is_empty() {
        return Err(Error::NoFamilies(root.to_path_buf()));
    }
    family_dirs.sort_by(|a, b| a.0.cmp(&b.0));

    let mut family_table = Vec::with_capacity(family_dirs.len());
    let mut pending: Vec<(std::path::PathBuf, usize)> = Vec::new();
    for (index, (name, dir)) in family_dirs.iter().enumerate() {
        let mut files: Vec<std::path::PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(format!("reading {}", dir.display()), e))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_file())
            .collect();
        if files.is_empty() {
            return Err(Error::EmptyFamily(name.clone()));
        }
        files.sort();
        family_table.push(FamilyLabel {
            name: name.clone(),
            index,
        });
        pending.extend(files.into_iter().map(|f| (f, index)));
    }

    let hashes = par::map_indexed(&pending, |_, (path, _)| hash_file(path));
    let mut records = Vec::with_capacity(pending.len());
    for ((path, family_index), hash) in pending.into_iter().zip(hashes) {
        records.push(SampleRecord {
            image_path: path.display().to_string(),
            family_index,
            split: None,
            content_hash: hash?,
        });
    }
    records.sort_by(|a, b| a.image_path.cmp(&b.image_path));
    CorpusManifest::new(records, family_table)
}

/// Cap every family at `cap` samples, chosen uniformly without
/// replacement. Families at or under the cap are untouched; kept
/// records stay in manifest order. Selection for each family draws from
/// an independent stream keyed by `(seed, family index)`.
pub fn undersample(m: &CorpusManifest, cap: u32, seed: u64) -> Result<CorpusManifest> {
    if cap == 0 {
        return Err(Error::InvalidCap);
    }
    if m.is_split() {
        return Err(Error::AlreadySplit);
    }
    let cap_usize = cap as usize;
    let mut by_family: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (pos, rec) in m.records.iter().enumerate() {
        by_family.entry(rec.family_index).or_default().push(pos);
    }
    let mut keep = vec![false; m.records.len()];
    for (family_index, positions) in by_family {
        if positions.len() <= cap_usize {
            for pos in positions {
                keep[pos] = true;
            }
        } else {
            let mut rng = Rng::from_stream(seed, Stream::Undersample, family_index as u64);
            for chosen in rng.choose_indices(positions.len(), cap_usize) {
                keep[positions[chosen]] = true;
            }
        }
    }
    let records: Vec<SampleRecord> = m
        .records
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(r, _)| r.clone())
        .collect();
    let out = CorpusManifest {
        records,
        family_table: m.family_table.clone(),
        cap: Some(cap),
        seed,
        train_fraction: m.train_fraction,
        warnings: m.warnings.clone(),
    };
    out.validate()?;
    Ok(out)
}

/// Stratified split: per family, a seeded shuffle sends the first
/// `floor(train_fraction * n)` records to train and the remainder to
/// test. A family with fewer than two records goes entirely to train
/// and leaves a warning in the manifest.
pub fn split(m: &CorpusManifest, train_fraction: f64, seed: u64) -> Result<CorpusManifest> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidTrainFraction(train_fraction));
    }
    if m.is_split() {
        return Err(Error::AlreadySplit);
    }
    let mut by_family: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (pos, rec) in m.records.iter().enumerate() {
        by_family.entry(rec.family_index).or_default().push(pos);
    }
    let mut records = m.records.clone();
    let mut warnings = m.warnings.clone();
    for (family_index, mut positions) in by_family {
        if positions.len() < 2 {
            warnings.push(format!(
                "family {} has {} record(s); all assigned to train",
                m.family_table[family_index].name,
                positions.len()
            ));
            for pos in positions {
                records[pos].split = Some(Split::Train);
            }
            continue;
        }
        let mut rng = Rng::from_stream(seed, Stream::Split, family_index as u64);
        rng.shuffle(&mut positions);
        let train_count = (train_fraction * positions.len() as f64).floor() as usize;
        for (i, pos) in positions.into_iter().enumerate() {
            records[pos].split = Some(if i < train_count {
                Split::Train
            } else {
                Split::Test
            });
        }
    }
    let out = CorpusManifest {
        records,
        family_table: m.family_table.clone(),
        cap: m.cap,
        seed,
        train_fraction: Some(train_fraction),
        warnings,
    };
    out.validate()?;
    Ok(out)
}

/// Serialize the manifest: a `# key=value` header block followed by one
/// tab-separated line per record.
pub fn manifest_to_string(m: &CorpusManifest) -> String {
    let mut out = String::new();
    if let Some(cap) = m.cap {
        let _ = writeln!(out, "# cap={cap}");
    }
    let _ = writeln!(out, "# seed={}", m.seed);
    if let Some(tf) = m.train_fraction {
        let _ = writeln!(out, "# train_fraction={tf}");
    }
    for w in &m.warnings {
        let _ = writeln!(out, "# warning={w}");
    }
    for rec in &m.records {
        let split = rec.split.map_or("-", Split::as_str);
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            rec.image_path,
            m.family_table[rec.family_index].name,
            rec.family_index,
            split,
            rec.content_hash
        );
    }
    out
}

pub fn save_manifest(m: &CorpusManifest, path: &Path) -> Result<()> {
    std::fs::write(path, manifest_to_string(m))
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load_manifest(path: &Path) -> Result<CorpusManifest> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_manifest(&text)
}

pub fn parse_manifest(text: &str) -> Result<CorpusManifest> {
    let mut cap = None;
    let mut seed = 0u64;
    let mut train_fraction = None;
    let mut warnings = Vec::new();
    let mut records = Vec::new();
    let mut families: BTreeMap<usize, String> = BTreeMap::new();

    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let bad = |reason: &str| Error::ManifestParse {
            line: lineno,
            reason: reason.to_string(),
        };
        if line.is_empty() {
            continue;
        }
        if let Some(kv) = line.strip_prefix("# ") {
            let (key, value) = kv.split_once('=').ok_or_else(|| bad("header without '='"))?;
            match key {
                "cap" => cap = Some(value.parse().map_err(|_| bad("bad cap value"))?),
                "seed" => seed = value.parse().map_err(|_| bad("bad seed value"))?,
                "train_fraction" => {
                    train_fraction =
                        Some(value.parse().map_err(|_| bad("bad train_fraction value"))?)
                }
                "warning" => warnings.push(value.to_string()),
                _ => return Err(bad(&format!("unknown header key {key}"))),
            }
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(bad(&format!("expected 5 tab-separated fields, found {}", fields.len())));
        }
        let family_index: usize = fields[2].parse().map_err(|_| bad("bad family index"))?;
        let split = match fields[3] {
            "train" => Some(Split::Train),
            "test" => Some(Split::Test),
            "-" => None,
            other => return Err(bad(&format!("bad split value {other}"))),
        };
        match families.get(&family_index) {
            Some(existing) if existing != fields[1] => {
                return Err(bad(&format!(
                    "family index {family_index} maps to both {existing} and {}",
                    fields[1]
                )));
            }
            None => {
                families.insert(family_index, fields[1].to_string());
            }
            _ => {}
        }
        records.push(SampleRecord {
            image_path: fields[0].to_string(),
            family_index,
            split,
            content_hash: fields[4].to_string(),
        });
    }

    let family_table: Vec<FamilyLabel> = families
        .into_iter()
        .map(|(index, name)| FamilyLabel { name, index })
        .collect();
    let mut manifest = CorpusManifest::new(records, family_table)?;
    manifest.cap = cap;
    manifest.seed = seed;
    manifest.train_fraction = train_fraction;
    manifest.warnings = warnings;
    manifest.validate()?;
    Ok(manifest)
}

/// Build a manifest from synthetic per-family counts. Used for
/// count-level experiments where no files exist on disk.
pub fn manifest_from_counts(counts: &[(&str, usize)]) -> Result<CorpusManifest> {
    let mut family_table = Vec::new();
    let mut records = Vec::new();
    for (index, (name, count)) in counts.iter().enumerate() {
        family_table.push(FamilyLabel {
            name: name.to_string(),
            index,
        });
        for i in 0..*count {
            records.push(SampleRecord {
                image_path: format!("{name}/{i:05}.png"),
                family_index: index,
                split: None,
                content_hash: String::new(),
            });
        }
    }
    CorpusManifest::new(records, family_table)
}
