//! Dataset directories: paired USTV videos and trajectory JSON files listed
//! in a manifest with paths relative to the manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::EvalSample;
use crate::io::{load_trajectories, load_video, read_json, save_trajectories, save_video, write_json};
use crate::video::{TrajectorySet, VideoTensor};

pub const DATASET_FORMAT: &str = "specktrack-dataset-v1";
pub const MANIFEST_NAME: &str = "dataset.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub name: String,
    pub video: String,
    pub trajectories: String,
    /// Generator or augmentation parameters of this sample.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<serde_json::Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: String,
    pub samples: Vec<DatasetEntry>,
}

/// A loaded sample with its manifest entry.
#[derive(Clone, Debug)]
pub struct NamedSample {
    pub entry: DatasetEntry,
    pub sample: EvalSample,
}

/// Writes `name.ustv` and `name.json` per sample plus the manifest; returns
/// the manifest path.
pub fn write_dataset<'a>(
    dir: &Path,
    samples: impl IntoIterator<Item = (String, &'a VideoTensor, &'a TrajectorySet, Option<serde_json::Value>)>,
) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    for (name, video, trajs, params) in samples {
        let entry = DatasetEntry {
            video: format!("{name}.ustv"),
            trajectories: format!("{name}.json"),
            name,
            params,
        };
        save_video(video, dir.join(&entry.video))?;
        save_trajectories(trajs, dir.join(&entry.trajectories))?;
        entries.push(entry);
    }
    let path = dir.join(MANIFEST_NAME);
    write_json(
        &DatasetManifest {
            format: DATASET_FORMAT.into(),
            samples: entries,
        },
        &path,
    )?;
    Ok(path)
}

/// Accepts a manifest file or a directory holding one.
pub fn resolve_manifest(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_NAME)
    } else {
        path.to_path_buf()
    }
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let path = resolve_manifest(path);
    let m: DatasetManifest = read_json(&path)?;
    if m.format != DATASET_FORMAT {
        return Err(Error::InvalidArgument(format!(
            "{}: unknown dataset format {:?}",
            path.display(),
            m.format
        )));
    }
    Ok(m)
}

/// Loads every sample, checking that each video and its trajectories agree.
pub fn load_dataset(path: &Path) -> Result<Vec<NamedSample>> {
    let path = resolve_manifest(path);
    let manifest = read_manifest(&path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    manifest
        .samples
        .into_iter()
        .map(|entry| {
            let video = load_video(dir.join(&entry.video))?;
            let reference = load_trajectories(dir.join(&entry.trajectories))?;
            if reference.num_frames() != video.num_frames() {
                return Err(Error::ShapeMismatch(format!(
                    "{}: {} trajectory frames for a {}-frame video",
                    entry.name,
                    reference.num_frames(),
                    video.num_frames()
                )));
            }
            Ok(NamedSample {
                entry,
                sample: EvalSample { video, reference },
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point2;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let v = VideoTensor::new(2, 16, 16, vec![0.25; 512]).unwrap();
        let tr = TrajectorySet::from_tracks(vec![vec![Point2::new(1.0, 2.0), Point2::new(3.0, 4.0)]], 0).unwrap();
        let p = write_dataset(dir.path(), [("a".to_string(), &v, &tr, None)]).unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(p, dir.path().join(MANIFEST_NAME));
        assert_eq!(loaded.len(), 1);
        assert_eq!(loaded[0].sample.video, v);
        assert_eq!(loaded[0].sample.reference, tr);
    }

    #[test]
    fn frame_count_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let v = VideoTensor::new(3, 16, 16, vec![0.25; 768]).unwrap();
        let tr = TrajectorySet::from_tracks(vec![vec![Point2::new(1.0, 2.0); 2]], 0).unwrap();
        write_dataset(dir.path(), [("a".to_string(), &v, &tr, None)]).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::ShapeMismatch(_))));
    }
}
