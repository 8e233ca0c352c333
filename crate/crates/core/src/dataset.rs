//! On-disk scene datasets: a JSON manifest plus per-frame RGB, depth and mask
//! files, and the raw float depth format.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::camera::{Camera, Intrinsics};
use crate::error::{Result, SvlfError};
use crate::image_buf::ImageBuf;

pub const MANIFEST: &str = "scene.json";
pub const DEPTH_MAGIC: &[u8; 4] = b"PFMX";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Number of frames per split for `n` views: two thirds train, about one in
/// thirty (at least two) validation, the rest test. 30 views give 20/2/8.
pub fn split_counts(n: usize) -> [usize; 3] {
    if n == 0 {
        return [0, 0, 0];
    }
    let train = ((2 * n + 1) / 3).max(1);
    let val = ((n + 15) / 30).max(2).min(n - train);
    [train, val, n - train - val]
}

/// Split of frame `i` out of `n`; splits are contiguous in index order.
pub fn split_of(i: usize, n: usize) -> Split {
    let [train, val, _] = split_counts(n);
    if i < train {
        Split::Train
    } else if i < train + val {
        Split::Val
    } else {
        Split::Test
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub name: String,
    pub split: Split,
    pub camera_to_world: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    pub width: u32,
    pub height: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub resolution: Resolution,
    pub intrinsics: Intrinsics,
    pub frames: Vec<FrameEntry>,
}

impl FrameEntry {
    pub fn camera(&self, manifest: &Manifest) -> Result<Camera> {
        let m: &[f64; 16] = self.camera_to_world.as_slice().try_into().map_err(|_| {
            SvlfError::InvalidDataset(format!(
                "frame {} has {} pose values, expected 16",
                self.name,
                self.camera_to_world.len()
            ))
        })?;
        Camera::new(
            manifest.intrinsics,
            Camera::pose_from_row_major(m),
            manifest.resolution.width,
            manifest.resolution.height,
        )
    }
}

pub fn rgb_path(root: &Path, name: &str) -> PathBuf {
    root.join(format!("rgb_{name}.png"))
}

pub fn depth_path(root: &Path, name: &str) -> PathBuf {
    root.join(format!("depth_{name}.f32"))
}

pub fn mask_path(root: &Path, name: &str) -> PathBuf {
    root.join(format!("mask_{name}.png"))
}

pub fn frame_name(index: usize) -> String {
    format!("{index:05}")
}

/// Writes a single-channel float image: `PFMX`, width and height as `u32`,
/// four reserved zero bytes, then little-endian `f32` rows, top row first.
pub fn write_depth(path: &Path, depth: &ImageBuf) -> Result<()> {
    if depth.channels != 1 {
        return Err(SvlfError::InvalidArgument("depth images have one channel".into()));
    }
    let mut bytes = Vec::with_capacity(16 + 4 * depth.data.len());
    bytes.extend_from_slice(DEPTH_MAGIC);
    bytes.extend_from_slice(&(depth.width as u32).to_le_bytes());
    bytes.extend_from_slice(&(depth.height as u32).to_le_bytes());
    bytes.extend_from_slice(&[0; 4]);
    for v in &depth.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| SvlfError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| SvlfError::io(path, e))
}

pub fn read_depth(path: &Path) -> Result<ImageBuf> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| SvlfError::io(path, e))?;
    let bad = |why: &str| SvlfError::InvalidDataset(format!("{}: {why}", path.display()));
    if bytes.len() < 16 || &bytes[..4] != DEPTH_MAGIC {
        return Err(bad("not a PFMX depth file"));
    }
    let w = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if body.len() != 4 * w * h {
        return Err(bad("payload size does not match the header"));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ImageBuf::from_data(w, h, 1, data)
}

pub fn write_manifest(root: &Path, manifest: &Manifest) -> Result<()> {
    let path = root.join(MANIFEST);
    let text = serde_json::to_string_pretty(manifest).map_err(|source| SvlfError::Json {
        path: path.clone(),
        source,
    })?;
    fs::write(&path, text + "\n").map_err(|e| SvlfError::io(&path, e))
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    let path = root.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| SvlfError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|source| SvlfError::Json { path, source })
}

/// One loaded frame with its ground truth.
#[derive(Clone, Debug)]
pub struct Frame {
    pub name: String,
    pub split: Split,
    pub camera: Camera,
    pub rgb: ImageBuf,
    pub depth: ImageBuf,
    pub mask: ImageBuf,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
    pub frames: Vec<Frame>,
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Self> {
        let manifest = read_manifest(root)?;
        let (w, h) = (manifest.resolution.width as usize, manifest.resolution.height as usize);
        let mut frames = Vec::with_capacity(manifest.frames.len());
        for e in &manifest.frames {
            let rgb = ImageBuf::read_png(&rgb_path(root, &e.name), 3)?;
            let depth = read_depth(&depth_path(root, &e.name))?;
            let mask = ImageBuf::read_png(&mask_path(root, &e.name), 1)?;
            for (what, img) in [("rgb", &rgb), ("depth", &depth), ("mask", &mask)] {
                if (img.width, img.height) != (w, h) {
                    return Err(SvlfError::InvalidDataset(format!(
                        "frame {} {what} is {}x{}, manifest says {w}x{h}",
                        e.name, img.width, img.height
                    )));
                }
            }
            frames.push(Frame {
                name: e.name.clone(),
                split: e.split,
                camera: e.camera(&manifest)?,
                rgb,
                depth,
                mask,
            });
        }
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
            frames,
        })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Frame> {
        self.frames.iter().filter(move |f| f.split == split)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_rule() {
        assert_eq!(split_counts(30), [20, 2, 8]);
        assert_eq!(split_counts(150), [100, 5, 45]);
        assert_eq!(split_counts(1), [1, 0, 0]);
        assert_eq!(split_counts(2), [1, 1, 0]);
        assert_eq!(split_counts(10), [7, 2, 1]);
        for n in 1..300 {
            let c = split_counts(n);
            assert_eq!(c.iter().sum::<usize>(), n);
            assert!(c[0] >= 1);
        }
        assert_eq!(split_of(19, 30), Split::Train);
        assert_eq!(split_of(21, 30), Split::Val);
        assert_eq!(split_of(22, 30), Split::Test);
    }

    #[test]
    fn depth_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.f32");
        let img = ImageBuf::from_data(3, 2, 1, vec![0.0, 1.5, -2.0, 3.25, f32::MAX, 1e-7]).unwrap();
        write_depth(&p, &img).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(bytes.len(), 16 + 24);
        assert_eq!(&bytes[..4], b"PFMX");
        assert_eq!(read_depth(&p).unwrap(), img);
        fs::write(&p, &bytes[..20]).unwrap();
        assert!(read_depth(&p).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = Manifest {
            resolution: Resolution { width: 4, height: 3 },
            intrinsics: Intrinsics::from_fov(4, 3, 40.0),
            frames: vec![FrameEntry {
                name: frame_name(3),
                split: Split::Val,
                camera_to_world: vec![1.0, 0.0, 0.0, 0.5, 0.0, 1.0, 0.0, 0.5, 0.0, 0.0, 1.0, -2.0, 0.0, 0.0, 0.0, 1.0],
            }],
        };
        write_manifest(dir.path(), &m).unwrap();
        let text = fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
        assert!(text.contains("\"val\"") && text.contains("\"00003\""));
        assert_eq!(read_manifest(dir.path()).unwrap(), m);
        assert!(m.frames[0].camera(&m).is_ok());
    }
}
