use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DatagenError, GenParams};
use crate::render::{overlap_ratio, panorama_to_views, Column, Observation, ViewKind};
use crate::scene::{ActionPrimitive, Pose};

pub const MANIFEST_FILE: &str = "manifest.json";

/// One recorded frame: the pose reached, the action that led to it (`Null`
/// for the first frame) and the panorama taken there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub pose: Pose,
    pub action: ActionPrimitive,
    #[serde(with = "compact_columns")]
    pub panorama: Vec<Column>,
}

impl TrajectoryStep {
    /// The stored panorama as an observation carrying its pose.
    pub fn observation(&self) -> Observation {
        Observation { kind: ViewKind::Panorama, fov_deg: 360.0, columns: self.panorama.clone(), pose: Some(self.pose) }
    }

    /// Front 90° slice of the panorama.
    pub fn front_view(&self) -> Observation {
        panorama_to_views(&self.observation(), 4).expect("recorded panoramas have a width divisible by 4").swap_remove(0)
    }
}

mod compact_columns {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::render::Column;

    pub fn serialize<S: Serializer>(cols: &[Column], s: S) -> Result<S::Ok, S::Error> {
        let triples: Vec<(f64, u16, u32)> = cols.iter().map(|c| (c.depth_m, c.class_id, c.instance_id)).collect();
        triples.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Column>, D::Error> {
        let triples = Vec::<(f64, u16, u32)>::deserialize(d)?;
        Ok(triples
            .into_iter()
            .map(|(depth_m, class_id, instance_id)| Column { depth_m, class_id, instance_id })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    /// SHA-256 of the record's content (everything except this field).
    pub id: String,
    pub scene: String,
    pub cell_size: f64,
    pub params: GenParams,
    pub steps: Vec<TrajectoryStep>,
}

#[derive(Serialize)]
struct Content<'a> {
    scene: &'a str,
    cell_size: f64,
    params: &'a GenParams,
    steps: &'a [TrajectoryStep],
}

impl TrajectoryRecord {
    /// Builds a record and assigns its content id.
    pub fn new(scene: String, cell_size: f64, params: GenParams, steps: Vec<TrajectoryStep>) -> Self {
        let mut r = Self { id: String::new(), scene, cell_size, params, steps };
        r.id = r.content_id();
        r
    }

    pub fn content_id(&self) -> String {
        let content = Content { scene: &self.scene, cell_size: self.cell_size, params: &self.params, steps: &self.steps };
        let bytes = serde_json::to_vec(&content).expect("records serialize");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Non-null actions.
    pub fn action_count(&self) -> usize {
        self.steps.iter().filter(|s| s.action != ActionPrimitive::Null).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub file: String,
    pub sha256: String,
    pub frames: usize,
}

/// Dataset summary written next to the record files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scenes: usize,
    pub trajectories: usize,
    pub frames: usize,
    pub camera_poses: usize,
    pub low_level_actions: usize,
    pub params: Vec<GenParams>,
    pub records: Vec<ManifestEntry>,
}

/// Writes `records` as `<id>.json` files plus a manifest. Record order is
/// preserved by the manifest.
pub fn write_dataset(records: &[TrajectoryRecord], dir: &Path) -> Result<Manifest, DatagenError> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(records.len());
    for r in records {
        let bytes = serde_json::to_vec(r)?;
        let file = format!("{}.json", r.id);
        fs::write(dir.join(&file), &bytes)?;
        entries.push(ManifestEntry { id: r.id.clone(), file, sha256: hex::encode(Sha256::digest(&bytes)), frames: r.steps.len() });
    }
    let mut scenes: Vec<&str> = records.iter().map(|r| r.scene.as_str()).collect();
    scenes.sort_unstable();
    scenes.dedup();
    let mut params: Vec<GenParams> = Vec::new();
    for r in records {
        if !params.contains(&r.params) {
            params.push(r.params.clone());
        }
    }
    let frames = records.iter().map(|r| r.steps.len()).sum();
    let manifest = Manifest {
        scenes: scenes.len(),
        trajectories: records.len(),
        frames,
        camera_poses: frames,
        low_level_actions: records.iter().map(TrajectoryRecord::action_count).sum(),
        params,
        records: entries,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, DatagenError> {
    Ok(serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?)
}

/// Reads every record listed in the manifest, verifying file hashes and
/// content ids.
pub fn read_dataset(dir: &Path) -> Result<Vec<TrajectoryRecord>, DatagenError> {
    let manifest = read_manifest(dir)?;
    manifest
        .records
        .iter()
        .map(|e| {
            let path: PathBuf = dir.join(&e.file);
            let bytes = fs::read(&path)?;
            let integrity = |why: &str| DatagenError::Integrity { record: e.id.clone(), reason: why.to_string() };
            if hex::encode(Sha256::digest(&bytes)) != e.sha256 {
                return Err(integrity("file hash mismatch"));
            }
            let r: TrajectoryRecord = serde_json::from_slice(&bytes).map_err(|err| integrity(&err.to_string()))?;
            if r.id != e.id || r.content_id() != e.id {
                return Err(integrity("content id mismatch"));
            }
            if r.steps.len() != e.frames {
                return Err(integrity("frame count mismatch"));
            }
            Ok(r)
        })
        .collect()
}

/// Mean overlap between consecutive front views; 1 for single-frame records.
pub fn mean_overlap(r: &TrajectoryRecord) -> f64 {
    if r.steps.len() < 2 {
        return 1.0;
    }
    let views: Vec<Observation> = r.steps.iter().map(TrajectoryStep::front_view).collect();
    let total: f64 = views
        .windows(2)
        .map(|w| overlap_ratio(&w[0], &w[1], r.cell_size).expect("recorded views carry poses"))
        .sum();
    total / (views.len() - 1) as f64
}

/// Keeps records whose mean consecutive-frame overlap is at least `threshold`.
pub fn filter_overlap(records: Vec<TrajectoryRecord>, threshold: f64) -> Vec<TrajectoryRecord> {
    records.into_iter().filter(|r| mean_overlap(r) >= threshold).collect()
}
