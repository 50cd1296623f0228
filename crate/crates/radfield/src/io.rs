//! Image, map and scene files.
//!
//! RGB images are binary PPM (P6, 8-bit). Single-channel maps are binary PGM
//! (P5, 16-bit big-endian) holding `round(value * scale)`, with the scale in
//! a sidecar `<name>.json`.

use std::fs;
use std::path::{Path, PathBuf};

use radfield_core::render::FrameMaps;
use radfield_core::scene::{generate_scene, SceneSpec, VoxelScene};
use radfield_core::{Frame, ImageF};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}")]
    File { path: PathBuf, source: std::io::Error },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("{path}")]
    Json { path: PathBuf, source: serde_json::Error },
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, IoError> {
    fs::read(path).map_err(|source| IoError::File { path: path.into(), source })
}

/// Writes `bytes`, creating parent directories.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let file_err = |source| IoError::File { path: path.into(), source };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(file_err)?;
    }
    fs::write(path, bytes).map_err(file_err)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|source| IoError::Json { path: path.into(), source })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

fn format_err(path: &Path, reason: impl Into<String>) -> IoError {
    IoError::Format { path: path.into(), reason: reason.into() }
}

/// Header of a binary PNM: magic, width, height, maxval, then one whitespace.
fn parse_pnm_header<'a>(bytes: &'a [u8], magic: &[u8; 2]) -> Result<(usize, usize, usize, &'a [u8]), String> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(format!("not a {} file", String::from_utf8_lossy(magic)));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for f in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *f = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or("malformed header")?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err("malformed header".into());
    }
    Ok((fields[0], fields[1], fields[2], &bytes[pos + 1..]))
}

pub fn encode_ppm(frame: &Frame) -> Vec<u8> {
    assert_eq!(frame.channels(), 3, "PPM holds RGB frames");
    let mut out = format!("P6\n{} {}\n255\n", frame.width(), frame.height()).into_bytes();
    out.extend_from_slice(frame.data());
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Frame, String> {
    let (w, h, maxval, body) = parse_pnm_header(bytes, b"P6")?;
    if maxval != 255 {
        return Err(format!("only 8-bit PPM is supported, maxval {maxval}"));
    }
    if body.len() != w * h * 3 {
        return Err(format!("expected {} pixel bytes, found {}", w * h * 3, body.len()));
    }
    Frame::from_vec(w, h, 3, body.to_vec()).map_err(|e| e.to_string())
}

pub fn write_ppm(path: &Path, frame: &Frame) -> Result<(), IoError> {
    write_bytes(path, &encode_ppm(frame))
}

pub fn read_ppm(path: &Path) -> Result<Frame, IoError> {
    decode_ppm(&read_bytes(path)?).map_err(|r| format_err(path, r))
}

/// Sidecar of a 16-bit map: stored value = `round(value * scale)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapScale {
    pub scale: f64,
}

impl MapScale {
    /// Largest scale that keeps the map's maximum representable.
    pub fn fit(map: &ImageF) -> Self {
        let max = map.data().iter().copied().filter(|v| v.is_finite()).fold(0.0, f64::max);
        MapScale { scale: if max > 0.0 { 65535.0 / max } else { 1.0 } }
    }
}

pub fn encode_pgm16(map: &ImageF, scale: MapScale) -> Vec<u8> {
    assert_eq!(map.channels(), 1, "PGM holds single-channel maps");
    let mut out = format!("P5\n{} {}\n65535\n", map.width(), map.height()).into_bytes();
    for &v in map.data() {
        let q = if v.is_finite() { (v * scale.scale).round().clamp(0.0, 65535.0) as u16 } else { 0 };
        out.extend_from_slice(&q.to_be_bytes());
    }
    out
}

pub fn decode_pgm16(bytes: &[u8], scale: MapScale) -> Result<ImageF, String> {
    let (w, h, maxval, body) = parse_pnm_header(bytes, b"P5")?;
    if maxval != 65535 {
        return Err(format!("only 16-bit PGM is supported, maxval {maxval}"));
    }
    if body.len() != w * h * 2 {
        return Err(format!("expected {} pixel bytes, found {}", w * h * 2, body.len()));
    }
    let data = body.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / scale.scale).collect();
    ImageF::from_vec(w, h, 1, data).map_err(|e| e.to_string())
}

pub fn sidecar_path(pgm: &Path) -> PathBuf {
    pgm.with_extension("json")
}

/// Writes the map and its sidecar.
pub fn write_map(path: &Path, map: &ImageF, scale: MapScale) -> Result<(), IoError> {
    write_bytes(path, &encode_pgm16(map, scale))?;
    write_json(&sidecar_path(path), &scale)
}

/// Reads a map, using the sidecar scale when present and 65535 otherwise.
pub fn read_map(path: &Path) -> Result<ImageF, IoError> {
    let side = sidecar_path(path);
    let scale = if side.exists() { read_json(&side)? } else { MapScale { scale: 65535.0 } };
    if !(scale.scale > 0.0 && scale.scale.is_finite()) {
        return Err(format_err(&side, "scale must be positive"));
    }
    decode_pgm16(&read_bytes(path)?, scale).map_err(|r| format_err(path, r))
}

/// Paths of the four files written by [`write_frame_maps`].
pub fn frame_map_paths(dir: &Path, stem: &str) -> [PathBuf; 4] {
    ["rgb.ppm", "opacity.pgm", "depth.pgm", "disparity.pgm"].map(|s| dir.join(format!("{stem}_{s}")))
}

/// RGB as PPM; opacity with scale 65535; depth and disparity fitted to their range.
pub fn write_frame_maps(dir: &Path, stem: &str, maps: &FrameMaps) -> Result<[PathBuf; 4], IoError> {
    let paths = frame_map_paths(dir, stem);
    write_ppm(&paths[0], &maps.rgb.to_frame())?;
    write_map(&paths[1], &maps.opacity, MapScale { scale: 65535.0 })?;
    write_map(&paths[2], &maps.depth, MapScale::fit(&maps.depth))?;
    write_map(&paths[3], &maps.disparity, MapScale::fit(&maps.disparity))?;
    Ok(paths)
}

const SCENE_MAGIC: &[u8; 4] = b"RSCN";
const SCENE_VERSION: u16 = 1;

/// `"RSCN" | version u16 | spec length u32 | spec JSON | voxel count u32 | (r, g, b, σ) f32 LE per voxel`.
pub fn encode_scene(scene: &VoxelScene) -> Vec<u8> {
    let spec = serde_json::to_vec(scene.spec()).expect("serializable");
    let mut out = Vec::with_capacity(14 + spec.len() + 16 * scene.voxels().len());
    out.extend_from_slice(SCENE_MAGIC);
    out.extend_from_slice(&SCENE_VERSION.to_le_bytes());
    out.extend_from_slice(&(spec.len() as u32).to_le_bytes());
    out.extend_from_slice(&spec);
    out.extend_from_slice(&(scene.voxels().len() as u32).to_le_bytes());
    for v in scene.voxels() {
        for c in v {
            out.extend_from_slice(&(*c as f32).to_le_bytes());
        }
    }
    out
}

/// Regenerates the scene from the embedded spec and checks the stored voxels.
pub fn decode_scene(bytes: &[u8]) -> Result<VoxelScene, String> {
    if bytes.len() < 10 || &bytes[..4] != SCENE_MAGIC {
        return Err("not a scene file".into());
    }
    if u16::from_le_bytes([bytes[4], bytes[5]]) != SCENE_VERSION {
        return Err("unsupported scene version".into());
    }
    let n = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
    let spec_bytes = bytes.get(10..10 + n).ok_or("truncated spec")?;
    let spec: SceneSpec = serde_json::from_slice(spec_bytes).map_err(|e| e.to_string())?;
    let scene = generate_scene(&spec).map_err(|e| e.to_string())?;
    if encode_scene(&scene) != bytes {
        return Err("voxel payload does not match the embedded spec".into());
    }
    Ok(scene)
}

pub fn write_scene(path: &Path, scene: &VoxelScene) -> Result<(), IoError> {
    write_bytes(path, &encode_scene(scene))
}

pub fn read_scene(path: &Path) -> Result<VoxelScene, IoError> {
    decode_scene(&read_bytes(path)?).map_err(|r| format_err(path, r))
}
