//! Per-vertex learnable embeddings and trilinear interpolation inside leaves.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SvlfError};
use crate::octree::{SparseOctree, Vec3};
use crate::real::Real;

/// Points further than this outside a voxel are rejected by interpolation.
pub const VOXEL_SLACK: f64 = 1e-7;

/// A `rows x dim` matrix of embeddings indexed by octree vertex id, with a
/// same-shape gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVolume<T> {
    dim: usize,
    pub data: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Real> FeatureVolume<T> {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            dim,
            data: vec![T::zero(); rows * dim],
            grad: vec![T::zero(); rows * dim],
        }
    }

    pub fn from_data(dim: usize, data: Vec<T>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(SvlfError::ShapeMismatch(format!(
                "{} values do not form rows of width {dim}",
                data.len()
            )));
        }
        let grad = vec![T::zero(); data.len()];
        Ok(Self { dim, data, grad })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, vertex: u32) -> &[T] {
        let s = vertex as usize * self.dim;
        &self.data[s..s + self.dim]
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }

    pub fn to_f64(&self) -> FeatureVolume<f64> {
        FeatureVolume {
            dim: self.dim,
            data: self.data.iter().map(|v| v.as_f64()).collect(),
            grad: self.grad.iter().map(|v| v.as_f64()).collect(),
        }
    }

    /// `out = sum_j w_j z_j` over the stencil's corners.
    pub fn gather(&self, stencil: &Stencil, out: &mut [T]) {
        debug_assert_eq!(out.len(), self.dim);
        out.iter_mut().for_each(|o| *o = T::zero());
        for (&v, &w) in stencil.corners.iter().zip(&stencil.weights) {
            if w == 0.0 {
                continue;
            }
            let w = T::lit(w);
            for (o, &z) in out.iter_mut().zip(self.row(v)) {
                *o += w * z;
            }
        }
    }

    /// Adds `w_j * upstream` to corner `j`'s row of `grad`.
    pub fn scatter(grad: &mut [T], dim: usize, stencil: &Stencil, upstream: &[T]) {
        for (&v, &w) in stencil.corners.iter().zip(&stencil.weights) {
            if w == 0.0 {
                continue;
            }
            let w = T::lit(w);
            let s = v as usize * dim;
            for (g, &u) in grad[s..s + dim].iter_mut().zip(upstream) {
                *g += w * u;
            }
        }
    }

    /// Gradient of `upstream . z(p)` with respect to the point `p`.
    pub fn positional_grad(&self, stencil: &Stencil, upstream: &[T]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (j, &v) in stencil.corners.iter().enumerate() {
            let dot: f64 = self
                .row(v)
                .iter()
                .zip(upstream)
                .map(|(&z, &u)| (z * u).as_f64())
                .sum();
            for a in 0..3 {
                out[a] += dot * stencil.dweights[j][a];
            }
        }
        out
    }
}

/// Uniform i.i.d. values on `[-1/sqrt(dim), 1/sqrt(dim)]` from a seeded ChaCha8 stream.
pub fn init_features<T: Real>(vertex_count: usize, dim: usize, seed: u64) -> Result<FeatureVolume<T>> {
    if vertex_count == 0 || dim == 0 {
        return Err(SvlfError::InvalidArgument(
            "feature volume needs at least one vertex and one channel".into(),
        ));
    }
    let bound = 1.0 / (dim as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..vertex_count * dim)
        .map(|_| T::lit(rng.gen_range(-bound..=bound)))
        .collect();
    FeatureVolume::from_data(dim, data)
}

/// Trilinear weights of a point inside one leaf, with their spatial derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stencil {
    pub corners: [u32; 8],
    pub weights: [f64; 8],
    /// `d w_j / d p` in scene units.
    pub dweights: [[f64; 3]; 8],
}

impl Stencil {
    pub fn new(octree: &SparseOctree, voxel_id: u64, point: &Vec3) -> Result<Self> {
        let corners = octree.corner_vertices(voxel_id)?;
        let aabb = octree.leaf_aabb(voxel_id);
        if !point.iter().all(|v| v.is_finite()) {
            return Err(SvlfError::NonFinite("interpolation point"));
        }
        if !aabb.contains(point, VOXEL_SLACK) {
            return Err(SvlfError::PointNotInVoxel);
        }
        let size = aabb.extent();
        let mut u = [0.0; 3];
        for a in 0..3 {
            u[a] = ((point[a] - aabb.min[a]) / size[a]).clamp(0.0, 1.0);
        }
        let (weights, dlocal) = trilinear_weights(u);
        let mut dweights = [[0.0; 3]; 8];
        for j in 0..8 {
            for a in 0..3 {
                dweights[j][a] = dlocal[j][a] / size[a];
            }
        }
        Ok(Self {
            corners,
            weights,
            dweights,
        })
    }
}

/// Weights for corner code `b = (bz << 2) | (by << 1) | bx` and their
/// derivatives with respect to the local coordinates.
pub fn trilinear_weights(u: [f64; 3]) -> ([f64; 8], [[f64; 3]; 8]) {
    let mut w = [0.0; 8];
    let mut dw = [[0.0; 3]; 8];
    for b in 0..8 {
        let f = |a: usize| if (b >> a) & 1 == 1 { u[a] } else { 1.0 - u[a] };
        let s = |a: usize| if (b >> a) & 1 == 1 { 1.0 } else { -1.0 };
        let (fx, fy, fz) = (f(0), f(1), f(2));
        w[b] = fx * fy * fz;
        dw[b] = [s(0) * fy * fz, fx * s(1) * fz, fx * fy * s(2)];
    }
    (w, dw)
}

/// Interpolated embedding at `point` inside leaf `voxel_id`.
pub fn interpolate<T: Real>(
    volume: &FeatureVolume<T>,
    octree: &SparseOctree,
    voxel_id: u64,
    point: &Vec3,
) -> Result<Vec<T>> {
    check_rows(volume, octree)?;
    let stencil = Stencil::new(octree, voxel_id, point)?;
    let mut out = vec![T::zero(); volume.dim()];
    volume.gather(&stencil, &mut out);
    Ok(out)
}

/// Accumulates `w_j * upstream` into the corner rows of `volume.grad` and
/// returns the positional Jacobian `dz/dp` as `dim` rows of 3.
pub fn interpolate_backward<T: Real>(
    volume: &mut FeatureVolume<T>,
    octree: &SparseOctree,
    voxel_id: u64,
    point: &Vec3,
    upstream: &[T],
) -> Result<Vec<[T; 3]>> {
    check_rows(volume, octree)?;
    if upstream.len() != volume.dim() {
        return Err(SvlfError::ShapeMismatch(format!(
            "upstream has {} channels, volume has {}",
            upstream.len(),
            volume.dim()
        )));
    }
    let stencil = Stencil::new(octree, voxel_id, point)?;
    let dim = volume.dim();
    FeatureVolume::scatter(&mut volume.grad, dim, &stencil, upstream);
    let mut jac = vec![[T::zero(); 3]; dim];
    for (j, &v) in stencil.corners.iter().enumerate() {
        for (row, &z) in jac.iter_mut().zip(volume.row(v)) {
            for a in 0..3 {
                row[a] += z * T::lit(stencil.dweights[j][a]);
            }
        }
    }
    Ok(jac)
}

fn check_rows<T: Real>(volume: &FeatureVolume<T>, octree: &SparseOctree) -> Result<()> {
    if volume.rows() != octree.vertex_count() {
        return Err(SvlfError::ShapeMismatch(format!(
            "feature volume has {} rows, octree has {} vertices",
            volume.rows(),
            octree.vertex_count()
        )));
    }
    Ok(())
}
