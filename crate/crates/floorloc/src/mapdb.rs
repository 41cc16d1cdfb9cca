//! Persistent map database: descriptor-indexed map entries with exact and
//! approximate cosine k-nearest-neighbor queries, and the binary map file
//! format.
//!
//! The approximate path is a signed-random-projection bit sketch per entry:
//! a query ranks entries by sketch Hamming distance, keeps a candidate slice
//! and re-ranks it exactly. Construction self-tests the recall of that path
//! against exact search and refuses to seal an index that misses the recall
//! contract. Evaluation-scale maps (well under 100k entries) default to the
//! exact path; the sketch path exists for larger databases and is held to
//! recall@20 >= 0.95.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::descriptor::{Descriptor, DESCRIPTOR_DIM};

#[derive(Debug, Error)]
pub enum MapDbError {
    #[error("cannot build an index over zero entries")]
    Empty,
    #[error("entry {entry_id}: descriptor norm {norm} is not within 1e-6 of 1")]
    BadNorm { entry_id: u64, norm: f64 },
    #[error("entry {entry_id}: member count {count} below the cluster minimum 4")]
    BadMemberCount { entry_id: u64, count: u32 },
    #[error(
        "approximate index recall@{k} = {recall:.4} below the 0.95 contract on the build self-test"
    )]
    RecallContract { k: usize, recall: f64 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: expected magic \"KMAP\"")]
    BadMagic { path: PathBuf },
    #[error("{path}: unsupported version {found} (supported: {supported})")]
    UnsupportedVersion {
        path: PathBuf,
        found: u32,
        supported: u32,
    },
    #[error("{path}: file truncated: {reason}")]
    Truncated { path: PathBuf, reason: String },
    #[error("{path}: checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    ChecksumMismatch {
        path: PathBuf,
        stored: u32,
        computed: u32,
    },
}

/// One sealed map feature: a merged cluster's position and descriptor.
#[derive(Clone, Debug, PartialEq)]
pub struct MapEntry {
    pub entry_id: u64,
    pub world_pos: (f64, f64),
    pub descriptor: Descriptor,
    pub member_count: u32,
}

/// One retrieval hit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Match {
    /// Index of the query keypoint this match belongs to; retrieval for a
    /// single descriptor reports 0 and callers re-tag per keypoint.
    pub query_idx: usize,
    pub entry_id: u64,
    pub cosine_distance: f64,
}

/// Query path selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QueryMode {
    Exact,
    Approx,
}

/// Approximate-index construction parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IndexParams {
    /// Sketch width in bits.
    pub sketch_bits: usize,
    /// Hyperplane RNG seed; fixed by default so rebuilding from the same
    /// entries reproduces the index bit for bit.
    pub seed: u64,
    /// Candidates re-ranked exactly per approximate query, as a fraction of
    /// the entry count (floored at 4k).
    pub candidate_fraction: f64,
    /// Self-test queries sampled from the build's own entries.
    pub self_test_queries: usize,
}

impl Default for IndexParams {
    fn default() -> Self {
        IndexParams {
            sketch_bits: 256,
            seed: 0x6b6d_6170,
            candidate_fraction: 0.125,
            self_test_queries: 100,
        }
    }
}

const SKETCH_WORDS: usize = 4; // 256 bits

/// Sealed map database with its query index.
///
/// Immutable after construction: queries never mutate it, so any number of
/// threads may read concurrently.
pub struct MapDatabase {
    entries: Vec<MapEntry>,
    hyperplanes: Vec<[f32; DESCRIPTOR_DIM]>,
    sketches: Vec<[u64; SKETCH_WORDS]>,
    params: IndexParams,
    /// Recall@20 measured on the build's own entries.
    pub self_test_recall: f64,
}

impl MapDatabase {
    pub fn entries(&self) -> &[MapEntry] {
        &self.entries
    }

    pub fn entry(&self, entry_id: u64) -> &MapEntry {
        &self.entries[entry_id as usize]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The `k` nearest entries by cosine distance, ascending, ties broken by
    /// entry id. Exact mode scans all entries; approximate mode re-ranks a
    /// sketch-selected candidate slice and is held to the recall contract.
    /// Returns `min(k, len)` matches.
    pub fn query_knn(&self, descriptor: &Descriptor, k: usize, mode: QueryMode) -> Vec<Match> {
        if k == 0 || self.entries.is_empty() {
            return Vec::new();
        }
        match mode {
            QueryMode::Exact => self.rank(descriptor, (0..self.entries.len()).collect(), k),
            QueryMode::Approx => {
                let budget = ((self.entries.len() as f64 * self.params.candidate_fraction) as usize)
                    .max(4 * k)
                    .min(self.entries.len());
                let sketch = self.sketch_of(descriptor);
                let mut by_hamming: Vec<(u32, usize)> = self
                    .sketches
                    .iter()
                    .enumerate()
                    .map(|(i, s)| (hamming(s, &sketch), i))
                    .collect();
                by_hamming.sort_unstable();
                let candidates = by_hamming
                    .into_iter()
                    .take(budget)
                    .map(|(_, i)| i)
                    .collect();
                self.rank(descriptor, candidates, k)
            }
        }
    }

    fn rank(&self, descriptor: &Descriptor, candidates: Vec<usize>, k: usize) -> Vec<Match> {
        let mut scored: Vec<(f64, u64)> = candidates
            .into_iter()
            .map(|i| {
                let e = &self.entries[i];
                (descriptor.cosine_distance(&e.descriptor), e.entry_id)
            })
            .collect();
        scored.sort_unstable_by(|a, b| a.partial_cmp(b).expect("distances are finite"));
        scored.truncate(k);
        scored
            .into_iter()
            .map(|(cosine_distance, entry_id)| Match {
                query_idx: 0,
                entry_id,
                cosine_distance,
            })
            .collect()
    }

    fn sketch_of(&self, descriptor: &Descriptor) -> [u64; SKETCH_WORDS] {
        let mut sketch = [0u64; SKETCH_WORDS];
        for (bit, plane) in self.hyperplanes.iter().enumerate() {
            let dot: f32 = plane
                .iter()
                .zip(descriptor.as_slice())
                .map(|(&p, &d)| p * d)
                .sum();
            if dot >= 0.0 {
                sketch[bit / 64] |= 1 << (bit % 64);
            }
        }
        sketch
    }
}

#[inline]
fn hamming(a: &[u64; SKETCH_WORDS], b: &[u64; SKETCH_WORDS]) -> u32 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x ^ y).count_ones())
        .sum()
}

/// Builds and seals the database with default index parameters.
pub fn build_index(entries: Vec<MapEntry>) -> Result<MapDatabase, MapDbError> {
    build_index_with(entries, &IndexParams::default())
}

/// Builds and seals the database.
///
/// Validates every entry (unit descriptor, member count), constructs the
/// sketch index, and runs the recall self-test of the approximate path
/// against exact search over the build's own entries. A build that misses
/// recall@20 >= 0.95 is refused.
pub fn build_index_with(
    entries: Vec<MapEntry>,
    params: &IndexParams,
) -> Result<MapDatabase, MapDbError> {
    if entries.is_empty() {
        return Err(MapDbError::Empty);
    }
    for e in &entries {
        let norm = e.descriptor.norm();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(MapDbError::BadNorm {
                entry_id: e.entry_id,
                norm,
            });
        }
        if e.member_count < 4 {
            return Err(MapDbError::BadMemberCount {
                entry_id: e.entry_id,
                count: e.member_count,
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let bits = params.sketch_bits.min(SKETCH_WORDS * 64);
    let mut hyperplanes = Vec::with_capacity(bits);
    for _ in 0..bits {
        let mut plane = [0.0f32; DESCRIPTOR_DIM];
        for slot in plane.iter_mut() {
            // Gaussian via sum of uniforms is plenty for sketch directions,
            // but sample a proper normal for well-behaved tails.
            *slot = sample_normal(&mut rng) as f32;
        }
        hyperplanes.push(plane);
    }

    let mut db = MapDatabase {
        entries,
        hyperplanes,
        sketches: Vec::new(),
        params: *params,
        self_test_recall: 1.0,
    };
    db.sketches = db
        .entries
        .iter()
        .map(|e| db.sketch_of(&e.descriptor))
        .collect();

    // Recall self-test on a deterministic sample of the build's entries.
    let k = 20.min(db.entries.len());
    let queries = params.self_test_queries.min(db.entries.len()).max(1);
    let stride = (db.entries.len() / queries).max(1);
    let mut hit = 0usize;
    let mut total = 0usize;
    for qi in (0..db.entries.len()).step_by(stride).take(queries) {
        let q = db.entries[qi].descriptor;
        let exact: Vec<u64> = db
            .query_knn(&q, k, QueryMode::Exact)
            .into_iter()
            .map(|m| m.entry_id)
            .collect();
        let approx: std::collections::HashSet<u64> = db
            .query_knn(&q, k, QueryMode::Approx)
            .into_iter()
            .map(|m| m.entry_id)
            .collect();
        total += exact.len();
        hit += exact.iter().filter(|id| approx.contains(id)).count();
    }
    db.self_test_recall = hit as f64 / total.max(1) as f64;
    if db.self_test_recall < 0.95 {
        return Err(MapDbError::RecallContract {
            k,
            recall: db.self_test_recall,
        });
    }
    Ok(db)
}

fn sample_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; only used for index hyperplanes at build time.
    let u1: f64 = rng.random::<f64>().max(1e-12);
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

const MAP_MAGIC: &[u8; 4] = b"KMAP";
const MAP_VERSION: u32 = 1;

/// Writes the database to the binary map format.
///
/// Layout (little-endian): magic `KMAP`, u32 version, u64 entry count, then
/// per entry u64 id, f64 x, f64 y, u32 member count and 30xf32 descriptor;
/// a CRC32 over all preceding bytes closes the file.
pub fn save(db: &MapDatabase, path: &Path) -> Result<(), MapDbError> {
    let mut bytes = Vec::with_capacity(16 + db.entries.len() * 148);
    bytes.extend_from_slice(MAP_MAGIC);
    bytes.extend_from_slice(&MAP_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(db.entries.len() as u64).to_le_bytes());
    for e in &db.entries {
        bytes.extend_from_slice(&e.entry_id.to_le_bytes());
        bytes.extend_from_slice(&e.world_pos.0.to_le_bytes());
        bytes.extend_from_slice(&e.world_pos.1.to_le_bytes());
        bytes.extend_from_slice(&e.member_count.to_le_bytes());
        for &c in e.descriptor.as_slice() {
            bytes.extend_from_slice(&c.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&bytes);
    bytes.extend_from_slice(&crc.to_le_bytes());

    let file = File::create(path).map_err(|e| MapDbError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut w = BufWriter::new(file);
    w.write_all(&bytes).and_then(|_| w.flush()).map_err(|e| {
        MapDbError::Io {
            path: path.to_path_buf(),
            source: e,
        }
    })
}

/// Reads a map file and rebuilds the sealed database (index included).
pub fn load(path: &Path) -> Result<MapDatabase, MapDbError> {
    load_with(path, &IndexParams::default())
}

/// Reads a map file with explicit index parameters.
pub fn load_with(path: &Path, params: &IndexParams) -> Result<MapDatabase, MapDbError> {
    let file = File::open(path).map_err(|e| MapDbError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut r = BufReader::new(file);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| MapDbError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;

    if bytes.len() < 4 || &bytes[..4] != MAP_MAGIC {
        return Err(MapDbError::BadMagic {
            path: path.to_path_buf(),
        });
    }
    if bytes.len() < 8 {
        return Err(MapDbError::Truncated {
            path: path.to_path_buf(),
            reason: "missing version".into(),
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != MAP_VERSION {
        return Err(MapDbError::UnsupportedVersion {
            path: path.to_path_buf(),
            found: version,
            supported: MAP_VERSION,
        });
    }
    if bytes.len() < 16 {
        return Err(MapDbError::Truncated {
            path: path.to_path_buf(),
            reason: "missing entry count".into(),
        });
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    const ENTRY_BYTES: usize = 8 + 8 + 8 + 4 + DESCRIPTOR_DIM * 4;
    let expected = 16 + count * ENTRY_BYTES + 4;
    if bytes.len() != expected {
        return Err(MapDbError::Truncated {
            path: path.to_path_buf(),
            reason: format!("expected {} bytes for {} entries, got {}", expected, count, bytes.len()),
        });
    }
    let body = &bytes[..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(MapDbError::ChecksumMismatch {
            path: path.to_path_buf(),
            stored,
            computed,
        });
    }

    let mut entries = Vec::with_capacity(count);
    let mut pos = 16;
    let f64_at = |bytes: &[u8], pos: usize| f64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap());
    for _ in 0..count {
        let entry_id = u64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap());
        let x = f64_at(&bytes, pos + 8);
        let y = f64_at(&bytes, pos + 16);
        let member_count = u32::from_le_bytes(bytes[pos + 24..pos + 28].try_into().unwrap());
        let mut desc = [0.0f32; DESCRIPTOR_DIM];
        for (i, slot) in desc.iter_mut().enumerate() {
            let off = pos + 28 + i * 4;
            *slot = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        }
        entries.push(MapEntry {
            entry_id,
            world_pos: (x, y),
            descriptor: Descriptor(desc),
            member_count,
        });
        pos += ENTRY_BYTES;
    }
    build_index_with(entries, params)
}
