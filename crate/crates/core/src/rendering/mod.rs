//! Per-voxel ray parameterization, voxel evaluation and front-to-back alpha
//! compositing.

pub mod batch;

use rayon::prelude::*;

use crate::camera::Camera;
use crate::error::{Result, SvlfError};
use crate::image_buf::ImageBuf;
use crate::model::Model;
use crate::octree::{Aabb, Ray, RayVoxelHit, Vec3};
use crate::real::Real;

use batch::{Segment, SegmentBatch};

/// Below this opacity a ray reports the background depth sentinel.
pub const DEPTH_ALPHA_MIN: f64 = 1e-4;
pub const BACKGROUND: [f32; 3] = [0.0, 0.0, 0.0];
/// Pixels per work item; fixed so results do not depend on the thread count.
pub const RENDER_CHUNK: usize = 1024;

const TANGENT_EPS: f64 = 1e-14;

/// A ray expressed by its two crossings of a voxel's bounding sphere, as unit
/// vectors from the voxel center.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayParam6 {
    pub p1: Vec3,
    pub p2: Vec3,
}

impl RayParam6 {
    pub fn as_array(&self) -> [f64; 6] {
        [self.p1.x, self.p1.y, self.p1.z, self.p2.x, self.p2.y, self.p2.z]
    }
}

fn sphere_crossings(ray: &Ray, aabb: &Aabb) -> (f64, f64, f64, Vec3) {
    let center = aabb.center();
    let radius = 0.5 * aabb.extent().norm();
    let oc = ray.origin - center;
    let b = ray.direction.dot(&oc);
    let c = oc.norm_squared() - radius * radius;
    (b * b - c, b, radius, center)
}

/// Crossings of `ray` with the minimum bounding sphere of `aabb`, nearer first.
pub fn parameterize_ray(ray: &Ray, aabb: &Aabb) -> Result<RayParam6> {
    let (disc, b, radius, center) = sphere_crossings(ray, aabb);
    if !(disc >= TANGENT_EPS) {
        return Err(SvlfError::TangentRay);
    }
    Ok(crossings(ray, b, disc.sqrt(), radius, center))
}

/// As [`parameterize_ray`], but a (near-)tangent ray maps both crossings to
/// the point of closest approach instead of failing. Voxel corners graze the
/// sphere, so traversal can produce such rays.
pub(crate) fn parameterize_ray_clamped(ray: &Ray, aabb: &Aabb) -> RayParam6 {
    let (disc, b, radius, center) = sphere_crossings(ray, aabb);
    crossings(ray, b, disc.max(0.0).sqrt(), radius, center)
}

fn crossings(ray: &Ray, b: f64, sq: f64, radius: f64, center: Vec3) -> RayParam6 {
    let p1 = ray.at(-b - sq) - center;
    let p2 = ray.at(-b + sq) - center;
    RayParam6 {
        p1: p1 / radius,
        p2: p2 / radius,
    }
}

/// Decoded quantities of one ray-voxel segment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VoxelSample<T> {
    pub tau: T,
    pub eta: T,
    pub surface: Vec3,
    pub color: [T; 3],
    pub voxel_id: u64,
    pub t_in: f64,
    pub t_out: f64,
}

impl<T: Real> VoxelSample<T> {
    /// Distance along the ray of the estimated surface point.
    pub fn surface_t(&self) -> f64 {
        let e = self.eta.as_f64();
        e * self.t_in + (1.0 - e) * self.t_out
    }
}

/// Evaluates one voxel: one thickness-decoder and one color-decoder query.
pub fn evaluate_voxel<T: Real>(hit: &RayVoxelHit, ray: &Ray, model: &Model<T>) -> Result<VoxelSample<T>> {
    let seg = Segment {
        ray: 0,
        hit: *hit,
        color: true,
    };
    let b = SegmentBatch::forward(model, std::slice::from_ref(ray), vec![seg])?;
    Ok(VoxelSample {
        tau: b.tau[0],
        eta: b.eta[0],
        surface: b.surface[0],
        color: b.rgb[0],
        voxel_id: hit.voxel_id,
        t_in: hit.t_in,
        t_out: hit.t_out,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Composite<T> {
    pub color: [T; 3],
    pub alpha: T,
    /// `w_i = T_i (1 - exp(-tau_i))`.
    pub weights: Vec<T>,
    /// `T_i = prod_{j<i} exp(-tau_j)`, with one extra trailing entry for the
    /// transmittance past the last sample.
    pub transmittance: Vec<T>,
}

/// Front-to-back compositing of `(tau_i, c_i)` ordered by entry distance.
pub fn composite<T: Real>(samples: &[(T, [T; 3])]) -> Result<Composite<T>> {
    let mut color = [T::zero(); 3];
    let mut weights = Vec::with_capacity(samples.len());
    let mut transmittance = Vec::with_capacity(samples.len() + 1);
    let mut trans = T::one();
    for &(tau, c) in samples {
        if tau < T::zero() || tau.is_nan() {
            return Err(SvlfError::NegativeThickness(tau.as_f64()));
        }
        transmittance.push(trans);
        let e = (-tau).exp();
        let w = trans * (T::one() - e);
        for k in 0..3 {
            color[k] += w * c[k];
        }
        weights.push(w);
        trans *= e;
    }
    transmittance.push(trans);
    Ok(Composite {
        color,
        alpha: T::one() - trans,
        weights,
        transmittance,
    })
}

/// Gradients of a scalar loss with respect to every `tau_i` and `c_i`, given
/// its gradients with respect to the composited color and alpha.
pub fn composite_backward<T: Real>(
    samples: &[(T, [T; 3])],
    comp: &Composite<T>,
    d_color: [T; 3],
    d_alpha: T,
) -> (Vec<T>, Vec<[T; 3]>) {
    let n = samples.len();
    let mut d_tau = vec![T::zero(); n];
    let mut d_c = vec![[T::zero(); 3]; n];
    let t_final = comp.transmittance[n];
    // Suffix sums of w_i c_i over i > k.
    let mut suffix = [T::zero(); 3];
    for k in (0..n).rev() {
        let c = samples[k].1;
        let w = comp.weights[k];
        let t_next = comp.transmittance[k + 1];
        let mut g = d_alpha * t_final;
        for ch in 0..3 {
            g += d_color[ch] * (t_next * c[ch] - suffix[ch]);
            d_c[k][ch] = w * d_color[ch];
        }
        d_tau[k] = g;
        for ch in 0..3 {
            suffix[ch] += w * c[ch];
        }
    }
    (d_tau, d_c)
}

/// Weighted mean surface distance, when the ray is opaque enough.
pub fn expected_depth<T: Real>(weights: &[T], surface_t: impl IntoIterator<Item = f64>) -> Option<f64> {
    let alpha: f64 = weights.iter().map(|w| w.as_f64()).sum();
    if alpha <= DEPTH_ALPHA_MIN {
        return None;
    }
    let num: f64 = weights
        .iter()
        .zip(surface_t)
        .map(|(w, t)| w.as_f64() * t)
        .sum();
    Some(num / alpha)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput<T> {
    pub color: [T; 3],
    pub alpha: T,
    pub expected_depth: Option<f64>,
    pub samples: Vec<VoxelSample<T>>,
}

/// Renders one ray through every voxel it crosses.
pub fn render_ray<T: Real>(model: &Model<T>, ray: &Ray) -> Result<RenderOutput<T>> {
    let hits = model.octree.traverse(ray);
    let segments = hits
        .iter()
        .map(|&hit| Segment { ray: 0, hit, color: true })
        .collect();
    let b = SegmentBatch::forward(model, std::slice::from_ref(ray), segments)?;
    let samples: Vec<VoxelSample<T>> = (0..b.len())
        .map(|i| VoxelSample {
            tau: b.tau[i],
            eta: b.eta[i],
            surface: b.surface[i],
            color: b.rgb[i],
            voxel_id: hits[i].voxel_id,
            t_in: hits[i].t_in,
            t_out: hits[i].t_out,
        })
        .collect();
    let pairs: Vec<(T, [T; 3])> = samples.iter().map(|s| (s.tau, s.color)).collect();
    let comp = composite(&pairs)?;
    let depth = expected_depth(&comp.weights, samples.iter().map(|s| s.surface_t()));
    Ok(RenderOutput {
        color: comp.color,
        alpha: comp.alpha,
        expected_depth: depth,
        samples,
    })
}

/// Bookkeeping for a rendered frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RenderStats {
    pub rays: u64,
    /// Rays with at least one traversal hit.
    pub hit_rays: u64,
    pub traversal_hits: u64,
    pub thickness_queries: u64,
    pub color_queries: u64,
}

impl RenderStats {
    pub fn merge(&mut self, o: &RenderStats) {
        self.rays += o.rays;
        self.hit_rays += o.hit_rays;
        self.traversal_hits += o.traversal_hits;
        self.thickness_queries += o.thickness_queries;
        self.color_queries += o.color_queries;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedFrame {
    pub rgb: ImageBuf,
    pub alpha: ImageBuf,
    /// Expected depth, 0 where the ray is (near) transparent.
    pub depth: ImageBuf,
    /// Traversal length per pixel.
    pub hit_counts: Vec<u32>,
    pub stats: RenderStats,
}

/// Evaluates a batch of rays, returning per-ray color, alpha, depth and hit count.
pub(crate) fn render_rays<T: Real>(model: &Model<T>, rays: &[Ray]) -> Result<(Vec<([f32; 3], f32, f32, u32)>, RenderStats)> {
    let mut segments = Vec::new();
    let mut spans = Vec::with_capacity(rays.len());
    let mut hits = Vec::new();
    for (i, ray) in rays.iter().enumerate() {
        model.octree.traverse_into(ray, &mut hits);
        let start = segments.len();
        segments.extend(hits.iter().map(|&hit| Segment {
            ray: i as u32,
            hit,
            color: true,
        }));
        spans.push(start..segments.len());
    }
    let b = SegmentBatch::forward(model, rays, segments)?;
    let mut stats = RenderStats {
        rays: rays.len() as u64,
        traversal_hits: b.len() as u64,
        thickness_queries: b.len() as u64,
        color_queries: b.color_rows() as u64,
        ..Default::default()
    };
    let mut out = Vec::with_capacity(rays.len());
    for span in spans {
        if span.is_empty() {
            out.push((BACKGROUND, 0.0, 0.0, 0));
            continue;
        }
        stats.hit_rays += 1;
        let pairs: Vec<(T, [T; 3])> = span.clone().map(|i| (b.tau[i], b.rgb[i])).collect();
        let comp = composite(&pairs)?;
        let depth = expected_depth(&comp.weights, span.clone().map(|i| b.surface_t(i))).unwrap_or(0.0);
        let rgb = std::array::from_fn(|k| {
            (comp.color[k].as_f64() + (1.0 - comp.alpha.as_f64()) * BACKGROUND[k] as f64) as f32
        });
        out.push((rgb, comp.alpha.as_f64() as f32, depth as f32, span.len() as u32));
    }
    Ok((out, stats))
}

/// Renders a `width x height` frame, one ray through each pixel center.
/// When the size differs from the camera's, the intrinsics are rescaled.
pub fn render_image<T: Real>(model: &Model<T>, camera: &Camera, width: usize, height: usize) -> Result<RenderedFrame> {
    if width == 0 || height == 0 {
        return Err(SvlfError::InvalidArgument("zero-size image".into()));
    }
    let sx = camera.width as f64 / width as f64;
    let sy = camera.height as f64 / height as f64;
    let n = width * height;
    let chunks: Vec<_> = (0..n.div_ceil(RENDER_CHUNK))
        .into_par_iter()
        .map(|c| {
            let rays: Vec<Ray> = (c * RENDER_CHUNK..((c + 1) * RENDER_CHUNK).min(n))
                .map(|p| camera.ray(((p % width) as f64 + 0.5) * sx, ((p / width) as f64 + 0.5) * sy))
                .collect();
            render_rays(model, &rays)
        })
        .collect::<Result<_>>()?;
    let mut rgb = ImageBuf::new(width, height, 3);
    let mut alpha = ImageBuf::new(width, height, 1);
    let mut depth = ImageBuf::new(width, height, 1);
    let mut hit_counts = Vec::with_capacity(n);
    let mut stats = RenderStats::default();
    let mut p = 0;
    for (px, st) in chunks {
        stats.merge(&st);
        for (c, a, d, h) in px {
            rgb.data[3 * p..3 * p + 3].copy_from_slice(&c);
            alpha.data[p] = a;
            depth.data[p] = d;
            hit_counts.push(h);
            p += 1;
        }
    }
    Ok(RenderedFrame {
        rgb,
        alpha,
        depth,
        hit_counts,
        stats,
    })
}
