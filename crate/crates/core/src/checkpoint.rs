//! Binary model checkpoints.
//!
//! Layout, all little-endian: the 8-byte magic `SVLF0001`; training progress
//! (stage, epoch as `u32`); the grid config (resolution, dilation as `u32`,
//! then the scene box as six `f64`); the leaf Morton codes (`u64` count, then
//! `u64` each); for the thickness then the color decoder, its spec (four
//! `u32` plus one `u32` activation code per output) and its parameters (`u64`
//! count, then `f32` each); both feature volumes (`u32` width, `u64` value
//! count, `f32` values); and the four Adam states (thickness decoder, color
//! decoder, thickness features, color features), each as its step count,
//! `beta1`, `beta2`, `eps` as `f64`, then both moment vectors.

use std::fs;
use std::path::Path;

use crate::decoders::{AdamState, DecoderParams, Mlp, MlpSpec};
use crate::error::{Result, SvlfError};
use crate::features::FeatureVolume;
use crate::model::Model;
use crate::octree::{Aabb, GridConfig, SparseOctree, Vec3};
use crate::training::OptimizerState;

pub const MAGIC: &[u8; 8] = b"SVLF0001";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub optimizer: OptimizerState<f32>,
    /// Last completed stage (0 before training) and epoch within it.
    pub stage: u32,
    pub epoch: u32,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32s(&mut self, v: &[f32]) {
        self.u64(v.len() as u64);
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
    fn mlp(&mut self, m: &Mlp<f32>) {
        for c in m.spec().encode() {
            self.u32(c);
        }
        self.f32s(&m.params);
    }
    fn features(&mut self, f: &FeatureVolume<f32>) {
        self.u32(f.dim() as u32);
        self.f32s(&f.data);
    }
    fn adam(&mut self, a: &AdamState<f32>) {
        self.u64(a.step);
        self.f64(a.beta1);
        self.f64(a.beta2);
        self.f64(a.eps);
        self.f32s(&a.m);
        self.f32s(&a.v);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(SvlfError::InvalidCheckpoint("truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn len(&mut self, width: usize) -> Result<usize> {
        let n = self.u64()? as usize;
        if n.checked_mul(width).map_or(true, |b| b > self.buf.len() - self.pos) {
            return Err(SvlfError::InvalidCheckpoint("length exceeds file size".into()));
        }
        Ok(n)
    }
    fn f32s(&mut self) -> Result<Vec<f32>> {
        let n = self.len(4)?;
        Ok(self
            .take(4 * n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn mlp(&mut self) -> Result<Mlp<f32>> {
        let header = [self.u32()?, self.u32()?, self.u32()?, self.u32()?];
        let heads = (0..header[3]).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
        let spec = MlpSpec::decode(header, &heads)
            .ok_or_else(|| SvlfError::InvalidCheckpoint("unknown activation".into()))?;
        Mlp::from_params(spec, self.f32s()?)
    }
    fn features(&mut self) -> Result<FeatureVolume<f32>> {
        let dim = self.u32()? as usize;
        FeatureVolume::from_data(dim, self.f32s()?)
    }
    fn adam(&mut self, len: usize) -> Result<AdamState<f32>> {
        let mut a = AdamState::new(0);
        a.step = self.u64()?;
        a.beta1 = self.f64()?;
        a.beta2 = self.f64()?;
        a.eps = self.f64()?;
        a.m = self.f32s()?;
        a.v = self.f32s()?;
        if a.m.len() != len || a.v.len() != len {
            return Err(SvlfError::InvalidCheckpoint("optimizer state size mismatch".into()));
        }
        Ok(a)
    }
}

impl Checkpoint {
    pub fn new(model: &Model<f32>, optimizer: &OptimizerState<f32>, stage: usize, epoch: usize) -> Self {
        Self {
            model: model.clone(),
            optimizer: optimizer.clone(),
            stage: stage as u32,
            epoch: epoch as u32,
        }
    }

    /// A freshly initialized model with zeroed optimizer state.
    pub fn initial(model: Model<f32>) -> Self {
        let optimizer = OptimizerState::new(&model);
        Self {
            model,
            optimizer,
            stage: 0,
            epoch: 0,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(self.stage);
        w.u32(self.epoch);
        let oct = &self.model.octree;
        let g = oct.config();
        w.u32(g.resolution);
        w.u32(g.dilation);
        for v in g.scene_aabb.min.iter().chain(g.scene_aabb.max.iter()) {
            w.f64(*v);
        }
        w.u64(oct.leaf_count() as u64);
        for &c in oct.leaves() {
            w.u64(c);
        }
        w.mlp(&self.model.decoders.thickness);
        w.mlp(&self.model.decoders.color);
        w.features(&self.model.thickness_features);
        w.features(&self.model.color_features);
        let o = &self.optimizer;
        for a in [&o.thickness_mlp, &o.color_mlp, &o.thickness_features, &o.color_features] {
            w.adam(a);
        }
        w.0
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(SvlfError::InvalidCheckpoint("bad magic".into()));
        }
        let stage = r.u32()?;
        let epoch = r.u32()?;
        let resolution = r.u32()?;
        let dilation = r.u32()?;
        let mut b = [0.0; 6];
        for v in &mut b {
            *v = r.f64()?;
        }
        let grid = GridConfig {
            resolution,
            scene_aabb: Aabb::new(Vec3::new(b[0], b[1], b[2]), Vec3::new(b[3], b[4], b[5])),
            dilation,
        };
        let n = r.len(8)?;
        let leaves = (0..n).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let octree = SparseOctree::from_leaves(grid, leaves)?;
        let thickness = r.mlp()?;
        let color = r.mlp()?;
        let thickness_features = r.features()?;
        let color_features = r.features()?;
        for f in [&thickness_features, &color_features] {
            if f.rows() != octree.vertex_count() {
                return Err(SvlfError::InvalidCheckpoint(format!(
                    "feature volume has {} rows, octree has {} vertices",
                    f.rows(),
                    octree.vertex_count()
                )));
            }
        }
        let optimizer = OptimizerState {
            thickness_mlp: r.adam(thickness.params.len())?,
            color_mlp: r.adam(color.params.len())?,
            thickness_features: r.adam(thickness_features.data.len())?,
            color_features: r.adam(color_features.data.len())?,
        };
        if r.pos != buf.len() {
            return Err(SvlfError::InvalidCheckpoint("trailing bytes".into()));
        }
        Ok(Self {
            model: Model {
                octree,
                thickness_features,
                color_features,
                decoders: DecoderParams { thickness, color },
            },
            optimizer,
            stage,
            epoch,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| SvlfError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let buf = fs::read(path).map_err(|e| SvlfError::io(path, e))?;
        Self::from_bytes(&buf)
    }
}
