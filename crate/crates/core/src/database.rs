//! Hash-indexed descriptor store with per-frame voting.

use std::collections::HashMap;
use std::hash::{BuildHasherDefault, Hasher};
use std::io::{Read, Write};
use std::sync::{Arc, RwLock};

use smallvec::SmallVec;
use thiserror::Error;

use crate::descriptor::{descriptor_signature, Signature, TriangleDescriptor};
use crate::geometry::{Point3, Vector3};
use crate::FrameId;

pub const SNAPSHOT_MAGIC: [u8; 8] = *b"STDHASH\0";
pub const SNAPSHOT_VERSION: u32 = 1;
/// Candidates returned per query.
pub const TOP_CANDIDATES: usize = 10;

#[derive(Debug, Error)]
pub enum DbError {
    #[error("frame {0} is already indexed")]
    DuplicateFrame(FrameId),
    #[error("descriptor belongs to frame {found}, expected {expected}")]
    MixedFrameIds { expected: FrameId, found: FrameId },
    #[error("quantization steps must be positive (Δl = {delta_l}, Δn = {delta_n})")]
    BadResolution { delta_l: f64, delta_n: f64 },
    #[error("snapshot I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad snapshot: {0}")]
    BadSnapshot(String),
}

/// Quantized signature plus its mixed 64-bit bucket key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HashKey {
    pub cells: [i64; 6],
    pub mixed: u64,
}

const MIX_SEED: u64 = 0x9e37_79b9_7f4a_7c15;
const MIX_MUL_A: u64 = 0xbf58_476d_1ce4_e5b9;
const MIX_MUL_B: u64 = 0x94d0_49bb_1331_11eb;

fn mix(cells: &[i64; 6]) -> u64 {
    let mut h = MIX_SEED;
    for &c in cells {
        h = (h ^ c as u64).wrapping_mul(MIX_MUL_A);
        h ^= h >> 29;
    }
    h = (h ^ (h >> 32)).wrapping_mul(MIX_MUL_B);
    h ^ (h >> 31)
}

/// `floor(value / Δ)` per component: sides by `delta_l`, normal products by `delta_n`.
pub fn make_key(sig: &Signature, delta_l: f64, delta_n: f64) -> HashKey {
    let mut cells = [0i64; 6];
    for k in 0..3 {
        cells[k] = (sig[k] / delta_l).floor() as i64;
        cells[k + 3] = (sig[k + 3] / delta_n).floor() as i64;
    }
    HashKey {
        cells,
        mixed: mix(&cells),
    }
}

/// Pass-through hasher for keys that are already mixed.
#[derive(Default)]
struct PremixedHasher(u64);

impl Hasher for PremixedHasher {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 = (self.0 << 8) | b as u64;
        }
    }

    fn write_u64(&mut self, v: u64) {
        self.0 = v;
    }
}

/// Bucket entry. The signature is kept inline so a lookup touches only the
/// bucket, never the descriptor array.
#[derive(Debug, Clone, Copy)]
struct Entry {
    signature: Signature,
    slot: u32,
    descriptor: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedPair {
    pub query: TriangleDescriptor,
    pub stored: TriangleDescriptor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub frame_id: FrameId,
    pub votes: usize,
    pub pairs: Vec<MatchedPair>,
}

/// Frames ranked by votes (descending, then frame id ascending).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CandidateSet {
    pub candidates: Vec<Candidate>,
}

impl CandidateSet {
    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Candidate> {
        self.candidates.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InsertStats {
    pub frames_indexed: usize,
    pub descriptors_indexed: usize,
}

#[derive(Debug, Clone)]
pub struct DescriptorDatabase {
    delta_l: f64,
    delta_n: f64,
    frames: Vec<FrameId>,
    slots: HashMap<FrameId, u32>,
    descriptors: Vec<TriangleDescriptor>,
    // nearly every bucket holds one entry, so keep it inline
    buckets: HashMap<u64, SmallVec<[Entry; 1]>, BuildHasherDefault<PremixedHasher>>,
}

impl Default for DescriptorDatabase {
    fn default() -> Self {
        Self::new(0.2, 0.1).expect("default resolutions are positive")
    }
}

impl DescriptorDatabase {
    pub fn new(delta_l: f64, delta_n: f64) -> Result<Self, DbError> {
        if !(delta_l > 0.0 && delta_n > 0.0) {
            return Err(DbError::BadResolution { delta_l, delta_n });
        }
        Ok(Self {
            delta_l,
            delta_n,
            frames: Vec::new(),
            slots: HashMap::new(),
            descriptors: Vec::new(),
            buckets: HashMap::default(),
        })
    }

    pub fn delta_l(&self) -> f64 {
        self.delta_l
    }

    pub fn delta_n(&self) -> f64 {
        self.delta_n
    }

    pub fn frames_indexed(&self) -> usize {
        self.frames.len()
    }

    pub fn descriptors_indexed(&self) -> usize {
        self.descriptors.len()
    }

    pub fn bucket_count(&self) -> usize {
        self.buckets.len()
    }

    /// Frame ids in insertion order.
    pub fn frames(&self) -> &[FrameId] {
        &self.frames
    }

    pub fn key_of(&self, d: &TriangleDescriptor) -> HashKey {
        make_key(&descriptor_signature(d), self.delta_l, self.delta_n)
    }

    /// Stored descriptors of one frame, in insertion order.
    pub fn frame_descriptors(&self, frame_id: FrameId) -> Vec<TriangleDescriptor> {
        self.descriptors.iter().filter(|d| d.frame_id == frame_id).copied().collect()
    }

    pub fn insert_frame(&mut self, frame_id: FrameId, descriptors: &[TriangleDescriptor]) -> Result<InsertStats, DbError> {
        if self.slots.contains_key(&frame_id) {
            return Err(DbError::DuplicateFrame(frame_id));
        }
        if let Some(d) = descriptors.iter().find(|d| d.frame_id != frame_id) {
            return Err(DbError::MixedFrameIds {
                expected: frame_id,
                found: d.frame_id,
            });
        }
        let slot = self.frames.len() as u32;
        self.frames.push(frame_id);
        self.slots.insert(frame_id, slot);
        for d in descriptors {
            let signature = descriptor_signature(d);
            let key = make_key(&signature, self.delta_l, self.delta_n);
            let idx = self.descriptors.len() as u32;
            self.descriptors.push(*d);
            self.buckets.entry(key.mixed).or_default().push(Entry {
                signature,
                slot,
                descriptor: idx,
            });
        }
        Ok(InsertStats {
            frames_indexed: self.frames.len(),
            descriptors_indexed: self.descriptors.len(),
        })
    }

    /// Votes for stored frames sharing an exact hash cell with each query
    /// descriptor. The `skip_recent` most recently inserted frames are ignored.
    /// A frame gets at most one vote per query descriptor; the recorded pair is
    /// the stored descriptor with the closest signature.
    pub fn query_candidates(&self, queries: &[TriangleDescriptor], skip_recent: usize) -> CandidateSet {
        self.query_top(queries, skip_recent, TOP_CANDIDATES)
    }

    pub fn query_top(&self, queries: &[TriangleDescriptor], skip_recent: usize, top_k: usize) -> CandidateSet {
        let visible = self.frames.len().saturating_sub(skip_recent) as u32;
        let mut votes: HashMap<u32, Vec<(u32, u32)>> = HashMap::new();
        let mut best: Vec<(u32, u32, f64)> = Vec::new();
        // All lookups first: they are independent, so their cache misses overlap.
        let keyed: Vec<(Signature, HashKey)> = queries
            .iter()
            .map(|q| {
                let sig = descriptor_signature(q);
                (sig, make_key(&sig, self.delta_l, self.delta_n))
            })
            .collect();
        let found: Vec<Option<&SmallVec<[Entry; 1]>>> = keyed.iter().map(|(_, k)| self.buckets.get(&k.mixed)).collect();
        for (qi, ((sig, key), bucket)) in keyed.iter().zip(found).enumerate() {
            let Some(bucket) = bucket else {
                continue;
            };
            best.clear();
            for e in bucket {
                if e.slot >= visible || make_key(&e.signature, self.delta_l, self.delta_n).cells != key.cells {
                    continue;
                }
                let dist = signature_distance(sig, &e.signature);
                match best.iter_mut().find(|b| b.0 == e.slot) {
                    Some(b) if dist < b.2 => *b = (e.slot, e.descriptor, dist),
                    Some(_) => {}
                    None => best.push((e.slot, e.descriptor, dist)),
                }
            }
            for &(slot, desc, _) in &best {
                votes.entry(slot).or_default().push((qi as u32, desc));
            }
        }
        let mut ranked: Vec<(u32, Vec<(u32, u32)>)> = votes.into_iter().collect();
        ranked.sort_by(|a, b| {
            b.1.len()
                .cmp(&a.1.len())
                .then(self.frames[a.0 as usize].cmp(&self.frames[b.0 as usize]))
        });
        ranked.truncate(top_k);
        CandidateSet {
            candidates: ranked
                .into_iter()
                .map(|(slot, pairs)| Candidate {
                    frame_id: self.frames[slot as usize],
                    votes: pairs.len(),
                    pairs: pairs
                        .into_iter()
                        .map(|(qi, di)| MatchedPair {
                            query: queries[qi as usize],
                            stored: self.descriptors[di as usize],
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    /// Binary snapshot: header (magic, version, Δl, Δn, frame count), then per
    /// frame its id, descriptor count and descriptor records. Little-endian.
    pub fn save(&self, w: &mut impl Write) -> Result<(), DbError> {
        w.write_all(&SNAPSHOT_MAGIC)?;
        w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
        w.write_all(&self.delta_l.to_le_bytes())?;
        w.write_all(&self.delta_n.to_le_bytes())?;
        w.write_all(&(self.frames.len() as u64).to_le_bytes())?;
        let mut per_frame: Vec<Vec<&TriangleDescriptor>> = vec![Vec::new(); self.frames.len()];
        for d in &self.descriptors {
            per_frame[self.slots[&d.frame_id] as usize].push(d);
        }
        for (frame_id, descs) in self.frames.iter().zip(per_frame) {
            w.write_all(&frame_id.to_le_bytes())?;
            w.write_all(&(descs.len() as u32).to_le_bytes())?;
            for d in descs {
                for v in descriptor_fields(d) {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn load(r: &mut impl Read) -> Result<Self, DbError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if magic != SNAPSHOT_MAGIC {
            return Err(DbError::BadSnapshot("wrong magic".into()));
        }
        let version = u32::from_le_bytes(read_array(r)?);
        if version != SNAPSHOT_VERSION {
            return Err(DbError::BadSnapshot(format!("unsupported version {version}")));
        }
        let delta_l = f64::from_le_bytes(read_array(r)?);
        let delta_n = f64::from_le_bytes(read_array(r)?);
        let mut db = Self::new(delta_l, delta_n)?;
        let frames = u64::from_le_bytes(read_array(r)?);
        for _ in 0..frames {
            let frame_id = u64::from_le_bytes(read_array(r)?);
            let count = u32::from_le_bytes(read_array(r)?);
            let mut descs = Vec::with_capacity(count as usize);
            for _ in 0..count {
                let mut fields = [0.0; DESCRIPTOR_FIELDS];
                for f in fields.iter_mut() {
                    *f = f64::from_le_bytes(read_array(r)?);
                }
                descs.push(descriptor_from_fields(&fields, frame_id));
            }
            db.insert_frame(frame_id, &descs)?;
        }
        Ok(db)
    }
}

const DESCRIPTOR_FIELDS: usize = 24;

fn descriptor_fields(d: &TriangleDescriptor) -> [f64; DESCRIPTOR_FIELDS] {
    let mut out = [0.0; DESCRIPTOR_FIELDS];
    let mut i = 0;
    let mut put = |v: f64| {
        out[i] = v;
        i += 1;
    };
    for p in &d.vertices {
        p.iter().for_each(|v| put(*v));
    }
    for n in &d.normals {
        n.iter().for_each(|v| put(*v));
    }
    d.sides.iter().for_each(|v| put(*v));
    d.centroid.iter().for_each(|v| put(*v));
    out
}

fn descriptor_from_fields(f: &[f64; DESCRIPTOR_FIELDS], frame_id: FrameId) -> TriangleDescriptor {
    let p = |i: usize| Point3::new(f[i], f[i + 1], f[i + 2]);
    let v = |i: usize| Vector3::new(f[i], f[i + 1], f[i + 2]);
    TriangleDescriptor {
        vertices: [p(0), p(3), p(6)],
        normals: [v(9), v(12), v(15)],
        sides: [f[18], f[19], f[20]],
        centroid: p(21),
        frame_id,
    }
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N], DbError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn signature_distance(a: &Signature, b: &Signature) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Single-writer / multi-reader handle. A frame becomes visible to queries
/// only once it is fully inserted.
#[derive(Debug, Clone, Default)]
pub struct SharedDatabase {
    inner: Arc<RwLock<DescriptorDatabase>>,
}

impl SharedDatabase {
    pub fn new(db: DescriptorDatabase) -> Self {
        Self {
            inner: Arc::new(RwLock::new(db)),
        }
    }

    pub fn insert_frame(&self, frame_id: FrameId, descriptors: &[TriangleDescriptor]) -> Result<InsertStats, DbError> {
        self.inner.write().expect("database lock poisoned").insert_frame(frame_id, descriptors)
    }

    pub fn query_candidates(&self, queries: &[TriangleDescriptor], skip_recent: usize) -> CandidateSet {
        self.inner.read().expect("database lock poisoned").query_candidates(queries, skip_recent)
    }

    pub fn with_read<R>(&self, f: impl FnOnce(&DescriptorDatabase) -> R) -> R {
        f(&self.inner.read().expect("database lock poisoned"))
    }
}
