//! USTV video files and trajectory JSON.
//!
//! USTV layout: `"USTV"`, version `u32` = 1, `T`, `H`, `W` as `u32`, dtype `u8` = 0
//! (float32), three zero bytes, then `T·H·W` float32 values in `(t, y, x)` order.
//! Every integer and float is little-endian.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::video::{TrajectorySet, VideoTensor};

pub const USTV_MAGIC: &[u8; 4] = b"USTV";
pub const USTV_VERSION: u32 = 1;
pub const USTV_HEADER_LEN: usize = 24;
const DTYPE_F32: u8 = 0;

/// Serializes a video to the USTV byte layout.
pub fn encode_video(video: &VideoTensor) -> Vec<u8> {
    let mut buf = Vec::with_capacity(USTV_HEADER_LEN + 4 * video.data().len());
    buf.extend_from_slice(USTV_MAGIC);
    buf.extend_from_slice(&USTV_VERSION.to_le_bytes());
    for d in [video.num_frames(), video.height(), video.width()] {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    buf.extend_from_slice(&[DTYPE_F32, 0, 0, 0]);
    for v in video.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

/// Parses USTV bytes; `path` only labels errors.
pub fn decode_video(bytes: &[u8], path: &Path) -> Result<VideoTensor> {
    let truncated = |expected: u64| Error::Truncated {
        path: path.to_path_buf(),
        expected,
        found: bytes.len() as u64,
    };
    if bytes.len() < 4 {
        return Err(if USTV_MAGIC.starts_with(bytes) {
            truncated(USTV_HEADER_LEN as u64)
        } else {
            Error::BadMagic {
                path: path.to_path_buf(),
            }
        });
    }
    if &bytes[..4] != USTV_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
        });
    }
    if bytes.len() < USTV_HEADER_LEN {
        return Err(truncated(USTV_HEADER_LEN as u64));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != USTV_VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let (t, h, w) = (word(8), word(12), word(16));
    let dtype = bytes[20];
    if dtype != DTYPE_F32 {
        return Err(Error::UnsupportedDtype {
            path: path.to_path_buf(),
            code: dtype,
        });
    }
    let overflow = || Error::DimensionOverflow {
        path: path.to_path_buf(),
        t,
        h,
        w,
    };
    let count = (t as u64)
        .checked_mul(h as u64)
        .and_then(|n| n.checked_mul(w as u64))
        .ok_or_else(overflow)?;
    let payload = count.checked_mul(4).ok_or_else(overflow)?;
    let expected = payload
        .checked_add(USTV_HEADER_LEN as u64)
        .filter(|&n| usize::try_from(n).is_ok())
        .ok_or_else(overflow)?;
    if (bytes.len() as u64) < expected {
        return Err(truncated(expected));
    }
    if (bytes.len() as u64) > expected {
        return Err(Error::ShapeMismatch(format!(
            "{}: {} trailing bytes after payload",
            path.display(),
            bytes.len() as u64 - expected
        )));
    }
    let data: Vec<f32> = bytes[USTV_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(index) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue { index });
    }
    VideoTensor::new(t as usize, h as usize, w as usize, data)
}

pub fn save_video(video: &VideoTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_video(video))
        .map_err(|e| Error::io(path, e))
}

pub fn load_video(path: impl AsRef<Path>) -> Result<VideoTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_video(&bytes, path)
}

/// Rounds to 9 significant decimal digits.
pub fn round_sig9(v: f64) -> f64 {
    if !v.is_finite() || v == 0.0 {
        return v;
    }
    format!("{v:.8e}").parse().unwrap_or(v)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectoryFile {
    num_points: usize,
    num_frames: usize,
    query_frame: usize,
    points: Vec<Vec<[f64; 2]>>,
    valid: Vec<Vec<u8>>,
}

fn to_file(trajs: &TrajectorySet) -> TrajectoryFile {
    let t = trajs.num_frames();
    TrajectoryFile {
        num_points: trajs.num_points(),
        num_frames: t,
        query_frame: trajs.query_frame(),
        points: (0..trajs.num_points())
            .map(|n| {
                trajs
                    .track(n)
                    .iter()
                    .map(|p| [round_sig9(p.x), round_sig9(p.y)])
                    .collect()
            })
            .collect(),
        valid: trajs.valid().chunks(t.max(1)).map(|c| c.iter().map(|&v| v as u8).collect()).collect(),
    }
}

fn from_file(f: TrajectoryFile) -> Result<TrajectorySet> {
    if f.points.len() != f.num_points || f.valid.len() != f.num_points {
        return Err(Error::ShapeMismatch(format!(
            "num_points = {} but points has {} rows and valid has {}",
            f.num_points,
            f.points.len(),
            f.valid.len()
        )));
    }
    let mut points = Vec::with_capacity(f.num_points * f.num_frames);
    let mut valid = Vec::with_capacity(f.num_points * f.num_frames);
    for (n, (row, vrow)) in f.points.iter().zip(&f.valid).enumerate() {
        if row.len() != f.num_frames || vrow.len() != f.num_frames {
            return Err(Error::ShapeMismatch(format!(
                "point {n}: num_frames = {} but points has {} and valid has {}",
                f.num_frames,
                row.len(),
                vrow.len()
            )));
        }
        points.extend(row.iter().map(|&[x, y]| Point2::new(x, y)));
        for &v in vrow {
            match v {
                0 => valid.push(false),
                1 => valid.push(true),
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "point {n}: valid flag {v} is not 0 or 1"
                    )))
                }
            }
        }
    }
    TrajectorySet::new(f.num_points, f.num_frames, points, valid, f.query_frame)
}

pub fn trajectories_to_json(trajs: &TrajectorySet) -> String {
    serde_json::to_string(&to_file(trajs)).expect("trajectory JSON serialization")
}

pub fn trajectories_from_json(text: &str, path: &Path) -> Result<TrajectorySet> {
    let f: TrajectoryFile = serde_json::from_str(text).map_err(|e| Error::json(path, e))?;
    from_file(f)
}

pub fn save_trajectories(trajs: &TrajectorySet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, trajectories_to_json(trajs)).map_err(|e| Error::io(path, e))
}

pub fn load_trajectories(path: impl AsRef<Path>) -> Result<TrajectorySet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    trajectories_from_json(&text, path)
}

/// Writes pretty-printed JSON.
pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}
