//! Batched evaluation of ray-voxel segments through both decoders, with the
//! matching reverse pass. Rendering and training share this path.

use crate::decoders::{MlpCache, RAY_DIM};
use crate::error::Result;
use crate::features::{FeatureVolume, Stencil};
use crate::model::Model;
use crate::octree::{Ray, RayVoxelHit, Vec3};
use crate::real::Real;

use super::parameterize_ray_clamped;

/// One ray-voxel segment to evaluate.
#[derive(Clone, Copy, Debug)]
pub struct Segment {
    /// Index into the ray slice given to [`SegmentBatch::forward`].
    pub ray: u32,
    pub hit: RayVoxelHit,
    /// Whether the color decoder is evaluated for this segment.
    pub color: bool,
}

/// Corner ids and weights of one interpolation, recorded for a later scatter.
#[derive(Clone, Copy, Debug)]
struct ScatterEntry<T> {
    corners: [u32; 8],
    weights: [T; 8],
}

/// Deferred feature-gradient scatters, replayed in insertion order.
#[derive(Clone, Debug)]
pub struct ScatterList<T> {
    dim: usize,
    entries: Vec<ScatterEntry<T>>,
    values: Vec<T>,
}

impl<T: Real> ScatterList<T> {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
            values: Vec::new(),
        }
    }

    fn push(&mut self, stencil: &Stencil, row: &[T]) {
        let mut weights = [T::zero(); 8];
        for (w, &s) in weights.iter_mut().zip(&stencil.weights) {
            *w = T::lit(s);
        }
        self.entries.push(ScatterEntry {
            corners: stencil.corners,
            weights,
        });
        self.values.extend_from_slice(row);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Adds every recorded row into the dense `rows x dim` buffer `grad`.
    pub fn apply(&self, grad: &mut [T]) {
        let dim = self.dim;
        for (e, row) in self.entries.iter().zip(self.values.chunks_exact(dim)) {
            for (&v, &w) in e.corners.iter().zip(&e.weights) {
                if w == T::zero() {
                    continue;
                }
                let s = v as usize * dim;
                for (g, &u) in grad[s..s + dim].iter_mut().zip(row) {
                    *g += w * u;
                }
            }
        }
    }
}

/// Gradient contributions of one batch of rays.
#[derive(Clone, Debug)]
pub struct GradSink<T> {
    pub thickness_mlp: Vec<T>,
    pub color_mlp: Vec<T>,
    pub thickness_features: ScatterList<T>,
    pub color_features: ScatterList<T>,
}

impl<T: Real> GradSink<T> {
    pub fn for_model(model: &Model<T>) -> Self {
        Self {
            thickness_mlp: vec![T::zero(); model.decoders.thickness.params.len()],
            color_mlp: vec![T::zero(); model.decoders.color.params.len()],
            thickness_features: ScatterList::new(model.thickness_features.dim()),
            color_features: ScatterList::new(model.color_features.dim()),
        }
    }

    /// Adds this sink into the model's own gradient buffers.
    pub fn apply_to(&self, model: &mut Model<T>) {
        for (g, &d) in model.decoders.thickness.grad.iter_mut().zip(&self.thickness_mlp) {
            *g += d;
        }
        for (g, &d) in model.decoders.color.grad.iter_mut().zip(&self.color_mlp) {
            *g += d;
        }
        self.thickness_features.apply(&mut model.thickness_features.grad);
        self.color_features.apply(&mut model.color_features.grad);
    }
}

/// Forward state of a batch of segments.
pub struct SegmentBatch<T> {
    pub segments: Vec<Segment>,
    st_in: Vec<Stencil>,
    st_out: Vec<Stencil>,
    thickness: MlpCache<T>,
    pub tau: Vec<T>,
    pub eta: Vec<T>,
    /// Color row of each segment, if evaluated.
    pub color_row: Vec<Option<u32>>,
    color_seg: Vec<u32>,
    st_surf: Vec<Stencil>,
    /// Estimated surface point per color row.
    pub surface: Vec<Vec3>,
    color: MlpCache<T>,
    /// Decoded color per color row.
    pub rgb: Vec<[T; 3]>,
}

impl<T: Real> SegmentBatch<T> {
    pub fn forward(model: &Model<T>, rays: &[Ray], segments: Vec<Segment>) -> Result<Self> {
        let octree = &model.octree;
        let n = segments.len();
        let dt = model.thickness_features.dim();
        let in_t = RAY_DIM + 2 * dt;
        let mut x = vec![T::zero(); n * in_t];
        let mut r6 = Vec::with_capacity(n);
        let mut st_in = Vec::with_capacity(n);
        let mut st_out = Vec::with_capacity(n);
        for (s, row) in segments.iter().zip(x.chunks_exact_mut(in_t)) {
            let hit = &s.hit;
            let p = parameterize_ray_clamped(&rays[s.ray as usize], &octree.leaf_aabb(hit.voxel_id));
            let r: [T; RAY_DIM] = std::array::from_fn(|i| T::lit(p.as_array()[i]));
            row[..RAY_DIM].copy_from_slice(&r);
            let a = Stencil::new(octree, hit.voxel_id, &hit.x1)?;
            let b = Stencil::new(octree, hit.voxel_id, &hit.x2)?;
            model.thickness_features.gather(&a, &mut row[RAY_DIM..RAY_DIM + dt]);
            model.thickness_features.gather(&b, &mut row[RAY_DIM + dt..]);
            r6.push(r);
            st_in.push(a);
            st_out.push(b);
        }
        let thickness = model.decoders.thickness.forward(&x, n)?;
        drop(x);
        let tau: Vec<T> = thickness.output.iter().step_by(2).copied().collect();
        let eta: Vec<T> = thickness.output.iter().skip(1).step_by(2).copied().collect();

        let dc = model.color_features.dim();
        let in_c = RAY_DIM + dc;
        let mut color_row = vec![None; n];
        let mut color_seg = Vec::new();
        let mut st_surf = Vec::new();
        let mut surface = Vec::new();
        let mut xc = Vec::new();
        for (i, s) in segments.iter().enumerate() {
            if !s.color {
                continue;
            }
            let e = eta[i].as_f64();
            let p = s.hit.x1 * e + s.hit.x2 * (1.0 - e);
            let st = Stencil::new(octree, s.hit.voxel_id, &p)?;
            let start = xc.len();
            xc.resize(start + in_c, T::zero());
            xc[start..start + RAY_DIM].copy_from_slice(&r6[i]);
            model.color_features.gather(&st, &mut xc[start + RAY_DIM..]);
            color_row[i] = Some(color_seg.len() as u32);
            color_seg.push(i as u32);
            st_surf.push(st);
            surface.push(p);
        }
        let rows_c = color_seg.len();
        let color = model.decoders.color.forward(&xc, rows_c)?;
        let rgb = color
            .output
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect();
        Ok(Self {
            segments,
            st_in,
            st_out,
            thickness,
            tau,
            eta,
            color_row,
            color_seg,
            st_surf,
            surface,
            color,
            rgb,
        })
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn color_rows(&self) -> usize {
        self.color_seg.len()
    }

    /// Distance along the ray of the estimated surface point of segment `i`.
    pub fn surface_t(&self, i: usize) -> f64 {
        let e = self.eta[i].as_f64();
        let h = &self.segments[i].hit;
        e * h.t_in + (1.0 - e) * h.t_out
    }

    /// Reverse pass.
    ///
    /// `d_tau` and `d_eta` are per segment, `d_rgb` per color row. The
    /// within-voxel depth also receives the gradient that flows through the
    /// color features at the estimated surface point. With `train_color`
    /// unset, the color decoder and color features get no gradient, but
    /// gradients still flow through them into the thickness side.
    pub fn backward(
        &self,
        model: &Model<T>,
        d_tau: &[T],
        d_eta: &[T],
        d_rgb: &[[T; 3]],
        train_color: bool,
        sink: &mut GradSink<T>,
    ) -> Result<()> {
        let n = self.len();
        if n == 0 {
            return Ok(());
        }
        debug_assert_eq!(d_tau.len(), n);
        debug_assert_eq!(d_eta.len(), n);
        debug_assert_eq!(d_rgb.len(), self.color_rows());
        let mut d_eta = d_eta.to_vec();

        let rows_c = self.color_rows();
        if rows_c > 0 {
            let dc = model.color_features.dim();
            let in_c = RAY_DIM + dc;
            let flat: Vec<T> = d_rgb.iter().flat_map(|c| c.iter().copied()).collect();
            let param_grad = if train_color {
                Some(sink.color_mlp.as_mut_slice())
            } else {
                None
            };
            let dx = model
                .decoders
                .color
                .backward(&self.color, &flat, param_grad, true)?
                .expect("input gradient requested");
            for (row, d) in dx.chunks_exact(in_c).enumerate() {
                let dz = &d[RAY_DIM..];
                let st = &self.st_surf[row];
                if train_color {
                    sink.color_features.push(st, dz);
                }
                let seg = self.color_seg[row] as usize;
                let dp = model.color_features.positional_grad(st, dz);
                let h = &self.segments[seg].hit;
                let dir = h.x1 - h.x2;
                let g = dp[0] * dir.x + dp[1] * dir.y + dp[2] * dir.z;
                d_eta[seg] += T::lit(g);
            }
        }

        let mut up = Vec::with_capacity(2 * n);
        for (&t, &e) in d_tau.iter().zip(&d_eta) {
            up.push(t);
            up.push(e);
        }
        let dt = model.thickness_features.dim();
        let in_t = RAY_DIM + 2 * dt;
        let dx = model
            .decoders
            .thickness
            .backward(&self.thickness, &up, Some(sink.thickness_mlp.as_mut_slice()), true)?
            .expect("input gradient requested");
        for (i, d) in dx.chunks_exact(in_t).enumerate() {
            sink.thickness_features.push(&self.st_in[i], &d[RAY_DIM..RAY_DIM + dt]);
            sink.thickness_features.push(&self.st_out[i], &d[RAY_DIM + dt..]);
        }
        Ok(())
    }
}

/// Dense feature gradient for tests and single-ray loss evaluation.
pub fn dense_feature_grad<T: Real>(list: &ScatterList<T>, volume: &FeatureVolume<T>) -> Vec<T> {
    let mut g = vec![T::zero(); volume.data.len()];
    list.apply(&mut g);
    g
}
