//! On-disk layout for generated sequences.
//!
//! ```text
//! <root>/manifest.json
//! <root>/seq_00000/manifest.json
//! <root>/seq_00000/frames/frame_001.png
//! <root>/seq_00000/flow/fwd_001_002.flo      reference < target
//! <root>/seq_00000/flow/bwd_002_001.flo      reference > target
//! <root>/seq_00000/occ/occ_001_002.png
//! ```
//!
//! Indices in filenames are 1-based and zero-padded to three digits.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::flow::{FlowSequence, FlowSet, MaskSet};
use crate::synth::{SceneSequence, SceneSpec};
use crate::{io, Error, Result};

pub const MANIFEST: &str = "manifest.json";

pub fn sequence_id(index: usize) -> String {
    format!("seq_{index:05}")
}

pub fn frame_file(t: usize) -> String {
    format!("frames/frame_{t:03}.png")
}

pub fn flow_file(reference: usize, target: usize) -> String {
    let kind = if reference < target { "fwd" } else { "bwd" };
    format!("flow/{kind}_{reference:03}_{target:03}.flo")
}

pub fn mask_file(reference: usize, target: usize) -> String {
    format!("occ/occ_{reference:03}_{target:03}.png")
}

/// Per-sequence seeds, fixed before any generation work is scheduled so the
/// output does not depend on worker count or completion order.
pub fn sequence_seeds(seed: u64, split: &str, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(split.as_bytes()));
    (0..n).map(|_| rng.next_u64()).collect()
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x100_0000_01b3)
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairFile {
    pub reference: usize,
    pub target: usize,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub id: String,
    pub split: String,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub frame_files: Vec<String>,
    pub flows: Vec<PairFile>,
    pub masks: Vec<PairFile>,
    /// Scene description for generated data; absent for imported sequences.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<SceneSpec>,
}

impl SequenceManifest {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        read_json(&dir.as_ref().join(MANIFEST))
    }

    pub fn has_flow(&self, reference: usize, target: usize) -> bool {
        self.flows
            .iter()
            .any(|p| p.reference == reference && p.target == target)
    }

    pub fn has_mask(&self, reference: usize, target: usize) -> bool {
        self.masks
            .iter()
            .any(|p| p.reference == reference && p.target == target)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceEntry {
    pub id: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub split: String,
    pub seed: u64,
    /// Generation parameters as resolved by the producer.
    #[serde(default)]
    pub config: serde_json::Value,
    pub sequences: Vec<SequenceEntry>,
}

impl DatasetManifest {
    pub fn load(root: impl AsRef<Path>) -> Result<Self> {
        read_json(&root.as_ref().join(MANIFEST))
    }

    pub fn save(&self, root: impl AsRef<Path>) -> Result<()> {
        write_json(&root.as_ref().join(MANIFEST), self)
    }

    pub fn sequence_dirs(&self, root: impl AsRef<Path>) -> Vec<PathBuf> {
        self.sequences
            .iter()
            .map(|s| root.as_ref().join(&s.id))
            .collect()
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::Dataset {
        path: path.to_owned(),
        reason: e.to_string(),
    })?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Dataset {
        path: path.to_owned(),
        reason: e.to_string(),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Writes frames, every flow and mask of `seq` and the sequence manifest.
pub fn write_sequence(
    dir: impl AsRef<Path>,
    id: &str,
    split: &str,
    seq: &SceneSequence,
) -> Result<SequenceManifest> {
    let dir = dir.as_ref();
    for sub in ["frames", "flow", "occ"] {
        fs::create_dir_all(dir.join(sub))?;
    }
    let frame_files: Vec<String> = (1..=seq.num_frames()).map(frame_file).collect();
    for (img, name) in seq.frames.iter().zip(&frame_files) {
        img.save(dir.join(name))?;
    }
    let mut flows = Vec::with_capacity(seq.flows.len());
    for ((i, k), f) in seq.flows.iter() {
        let path = flow_file(i, k);
        io::save_flo(dir.join(&path), f)?;
        flows.push(PairFile {
            reference: i,
            target: k,
            path,
        });
    }
    let mut masks = Vec::with_capacity(seq.masks.len());
    for ((i, k), m) in seq.masks.iter() {
        let path = mask_file(i, k);
        io::save_mask(dir.join(&path), m)?;
        masks.push(PairFile {
            reference: i,
            target: k,
            path,
        });
    }
    let manifest = SequenceManifest {
        id: id.to_owned(),
        split: split.to_owned(),
        seed: seq.spec.seed,
        width: seq.spec.width,
        height: seq.spec.height,
        frames: seq.num_frames(),
        frame_files,
        flows,
        masks,
        scene: Some(seq.spec.clone()),
    };
    write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(manifest)
}

/// Flows and masks of a stored sequence; frames are left on disk.
#[derive(Debug, Clone)]
pub struct LoadedSequence {
    pub dir: PathBuf,
    pub manifest: SequenceManifest,
    pub flows: FlowSet,
    pub masks: MaskSet,
}

impl LoadedSequence {
    pub fn id(&self) -> &str {
        &self.manifest.id
    }

    /// Local forward flows, with backward locals when every one is stored
    /// and all masks attached.
    pub fn to_flow_sequence(&self) -> Result<FlowSequence> {
        let n = self.manifest.frames;
        let pick = |i: usize, k: usize| {
            self.flows.get(i, k).cloned().ok_or(Error::MissingFlow {
                reference: i,
                target: k,
            })
        };
        let fwd = (1..n).map(|t| pick(t, t + 1)).collect::<Result<Vec<_>>>()?;
        let mut seq = FlowSequence::new(fwd)?;
        if (1..n).all(|t| self.flows.contains(t + 1, t)) {
            seq = seq.with_backward((1..n).map(|t| pick(t + 1, t)).collect::<Result<Vec<_>>>()?)?;
        }
        seq.with_masks(self.masks.clone())
    }
}

pub fn read_sequence(dir: impl AsRef<Path>) -> Result<LoadedSequence> {
    let dir = dir.as_ref();
    let manifest = SequenceManifest::load(dir)?;
    let fail = |path: &Path, reason: String| Error::Dataset {
        path: path.to_owned(),
        reason,
    };
    let mut flows = FlowSet::new();
    for p in &manifest.flows {
        let path = dir.join(&p.path);
        let f = io::load_flo(&path).map_err(|e| fail(&path, e.to_string()))?;
        if f.dims() != (manifest.width, manifest.height) {
            return Err(fail(
                &path,
                format!("dimensions {:?} disagree with the manifest", f.dims()),
            ));
        }
        flows.insert(p.reference, p.target, f);
    }
    let mut masks = MaskSet::new();
    for p in &manifest.masks {
        let path = dir.join(&p.path);
        let m = io::load_mask(&path).map_err(|e| fail(&path, e.to_string()))?;
        if m.dims() != (manifest.width, manifest.height) {
            return Err(fail(
                &path,
                format!("dimensions {:?} disagree with the manifest", m.dims()),
            ));
        }
        masks.insert(p.reference, p.target, m);
    }
    Ok(LoadedSequence {
        dir: dir.to_owned(),
        manifest,
        flows,
        masks,
    })
}
