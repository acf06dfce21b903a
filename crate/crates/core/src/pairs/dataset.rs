//! On-disk dataset layout.
//!
//! ```text
//! root/images/<pair_id>.png
//! root/flows/<pair_id>.flo
//! root/masks/<pair_id>.png
//! root/manifest.jsonl        one entry per line
//! root/manifest_meta.json    config snapshot, source groups, per-pair backends
//! ```

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{FlowKind, Provenance, TrainingPair};
use crate::error::{Error, Result};
use crate::flow::{read_flo, write_flo};
use crate::media::{load_image, load_mask, save_image, save_mask};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const META_FILE: &str = "manifest_meta.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub pair_id: String,
    /// Paths are relative to the dataset root.
    pub image_path: String,
    pub flow_path: String,
    pub mask_path: String,
    pub provenance: Provenance,
    pub source_id: String,
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMeta {
    pub generator_id: String,
    pub flow_backend_id: String,
    #[serde(default)]
    pub flow_kind: FlowKind,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct MetaFile {
    created_with: serde_json::Value,
    named_sources: BTreeMap<String, Vec<String>>,
    pairs: BTreeMap<String, PairMeta>,
}

#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
    /// Provenance string to the pair ids it covers.
    pub named_sources: BTreeMap<String, Vec<String>>,
    pub created_with: serde_json::Value,
    pub meta: BTreeMap<String, PairMeta>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries_from(&self, provenance: &Provenance) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| &e.provenance == provenance).collect()
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// Writes every pair and the manifest under `root`. Identical inputs give
/// byte-identical output.
pub fn materialize_dataset(pairs: &[TrainingPair], root: &Path, created_with: &serde_json::Value) -> Result<DatasetManifest> {
    let mut seen = HashSet::new();
    for p in pairs {
        p.validate()?;
        let id = p.pair_id();
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicatePairId(id));
        }
    }
    for sub in ["images", "flows", "masks"] {
        let dir = root.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }

    let mut entries = Vec::with_capacity(pairs.len());
    let mut meta = MetaFile {
        created_with: created_with.clone(),
        ..Default::default()
    };
    for p in pairs {
        let id = p.pair_id();
        let entry = ManifestEntry {
            image_path: format!("images/{id}.png"),
            flow_path: format!("flows/{id}.flo"),
            mask_path: format!("masks/{id}.png"),
            provenance: p.provenance.clone(),
            source_id: p.source_id.clone(),
            t: p.t,
            pair_id: id.clone(),
        };
        save_image(&p.image, root.join(&entry.image_path))?;
        write_flo(&p.flow, root.join(&entry.flow_path))?;
        save_mask(&p.mask, root.join(&entry.mask_path))?;
        meta.named_sources.entry(p.provenance.to_string()).or_default().push(id.clone());
        meta.pairs.insert(
            id,
            PairMeta {
                generator_id: p.generator_id.clone(),
                flow_backend_id: p.flow_backend_id.clone(),
                flow_kind: p.flow_kind,
            },
        );
        entries.push(entry);
    }

    let mut lines = String::new();
    for e in &entries {
        lines.push_str(&serde_json::to_string(e).expect("manifest entry serializes"));
        lines.push('\n');
    }
    write_bytes(&root.join(MANIFEST_FILE), lines.as_bytes())?;
    let meta_json = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    write_bytes(&root.join(META_FILE), meta_json.as_bytes())?;

    Ok(DatasetManifest {
        root: root.to_path_buf(),
        entries,
        named_sources: meta.named_sources,
        created_with: meta.created_with,
        meta: meta.pairs,
    })
}

/// Reads `manifest.jsonl` (and the metadata sidecar when present).
pub fn load_manifest(root: &Path) -> Result<DatasetManifest> {
    let path = root.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(line).map_err(|e| Error::Malformed {
            path: path.clone(),
            reason: format!("line {}: {e}", i + 1),
        })?;
        if !seen.insert(entry.pair_id.clone()) {
            return Err(Error::DuplicatePairId(entry.pair_id));
        }
        entries.push(entry);
    }

    let meta_path = root.join(META_FILE);
    let meta: MetaFile = if meta_path.exists() {
        let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Malformed {
            path: meta_path.clone(),
            reason: e.to_string(),
        })?
    } else {
        let mut m = MetaFile::default();
        for e in &entries {
            m.named_sources.entry(e.provenance.to_string()).or_default().push(e.pair_id.clone());
        }
        m
    };
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        entries,
        named_sources: meta.named_sources,
        created_with: meta.created_with,
        meta: meta.pairs,
    })
}

/// Loads the files behind one manifest entry. Masks are binarized at 0.5.
pub fn load_pair(manifest: &DatasetManifest, entry: &ManifestEntry) -> Result<TrainingPair> {
    let root = &manifest.root;
    let meta = manifest.meta.get(&entry.pair_id);
    let pair = TrainingPair {
        image: load_image(root.join(&entry.image_path))?,
        flow: read_flo(root.join(&entry.flow_path))?,
        mask: load_mask(root.join(&entry.mask_path), Some(0.5))?,
        source_id: entry.source_id.clone(),
        t: entry.t,
        provenance: entry.provenance.clone(),
        generator_id: meta.map(|m| m.generator_id.clone()).unwrap_or_default(),
        flow_backend_id: meta.map(|m| m.flow_backend_id.clone()).unwrap_or_default(),
        flow_kind: meta.map(|m| m.flow_kind).unwrap_or_default(),
    };
    pair.validate()?;
    Ok(pair)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowField;
    use crate::media::{Image, SaliencyMap};
    use ndarray::Array2;

    fn pair(source: &str, t: usize, provenance: Provenance) -> TrainingPair {
        let image = Image::from_fn(10, 12, |y, x, c| ((y * 13 + x * 7 + c * 50) % 256) as f32 / 255.0);
        let mask = SaliencyMap::binary(Array2::from_shape_fn((10, 12), |(y, x)| if y > 3 && x < 6 { 1.0 } else { 0.0 })).unwrap();
        let flow = FlowField::from_fn(10, 12, |y, x| (x as f32 * 0.25 + t as f32, -(y as f32) * 0.125)).unwrap();
        TrainingPair {
            image,
            flow,
            mask,
            source_id: source.into(),
            t,
            provenance,
            generator_id: "spatial-warp".into(),
            flow_backend_id: "analytic".into(),
            flow_kind: FlowKind::Forward,
        }
    }

    fn twelve() -> Vec<TrainingPair> {
        let mut v = Vec::new();
        for s in 0..3 {
            for t in 1..=4 {
                v.push(pair(&format!("src{s}"), t, Provenance::Simulated));
            }
        }
        v
    }

    #[test]
    fn cardinality_and_layout() {
        let dir = tempfile::tempdir().unwrap();
        let m = materialize_dataset(&twelve(), dir.path(), &serde_json::json!({"seed": 1})).unwrap();
        assert_eq!(m.len(), 12);
        let text = std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(text.lines().count(), 12);
        let flos = std::fs::read_dir(dir.path().join("flows")).unwrap().count();
        assert_eq!(flos, 12);
        for e in &m.entries {
            for p in [&e.image_path, &e.flow_path, &e.mask_path] {
                assert!(dir.path().join(p).exists());
            }
        }
        let line: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        let keys: Vec<_> = line.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys.len(), 7);
    }

    #[test]
    fn round_trip_reproduces_pairs() {
        let dir = tempfile::tempdir().unwrap();
        let mut pairs = twelve();
        pairs.push(pair("clip_00001", 0, Provenance::Real("DAVIS".into())));
        pairs.last_mut().unwrap().flow_kind = FlowKind::NegatedBackward;
        materialize_dataset(&pairs, dir.path(), &serde_json::Value::Null).unwrap();
        let m = load_manifest(dir.path()).unwrap();
        assert_eq!(m.len(), pairs.len());
        for (e, p) in m.entries.iter().zip(&pairs) {
            assert_eq!(load_pair(&m, e).unwrap(), *p);
        }
        assert_eq!(m.named_sources["real:DAVIS"].len(), 1);
        assert_eq!(m.named_sources["simulated"].len(), 12);
    }

    #[test]
    fn rerun_is_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let pairs = twelve();
        let cfg = serde_json::json!({"frames": 4});
        materialize_dataset(&pairs, a.path(), &cfg).unwrap();
        let first = std::fs::read(a.path().join(MANIFEST_FILE)).unwrap();
        materialize_dataset(&pairs, a.path(), &cfg).unwrap();
        materialize_dataset(&pairs, b.path(), &cfg).unwrap();
        assert_eq!(first, std::fs::read(a.path().join(MANIFEST_FILE)).unwrap());
        for f in [MANIFEST_FILE, META_FILE, "flows/sim-src1-002.flo", "images/sim-src2-004.png", "masks/sim-src0-001.png"] {
            assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut pairs = twelve();
        pairs.push(pairs[0].clone());
        let err = materialize_dataset(&pairs, dir.path(), &serde_json::Value::Null).unwrap_err();
        assert!(matches!(err, Error::DuplicatePairId(_)));
        assert!(!dir.path().join(MANIFEST_FILE).exists());
    }

    #[test]
    fn misaligned_pair_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = pair("a", 1, Provenance::Simulated);
        p.flow = FlowField::zeros(10, 11);
        assert!(materialize_dataset(&[p], dir.path(), &serde_json::Value::Null).is_err());
    }

    #[test]
    fn missing_manifest() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_manifest(dir.path()), Err(Error::MissingFile(_))));
    }
}
