//! Procedural scenes of spheres and boxes, rendered by an analytic ray caster
//! with exact depth and coverage.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{Camera, Intrinsics};
use crate::dataset::{self, FrameEntry, Manifest, Resolution};
use crate::error::{Result, SvlfError};
use crate::image_buf::ImageBuf;
use crate::octree::{Ray, Vec3};

/// Hits closer than this are ignored (shadow-ray self intersection).
const HIT_EPS: f64 = 1e-9;
/// Offset of shadow-ray origins along the surface normal.
const SHADOW_BIAS: f64 = 1e-7;
pub const SCENE_CENTER: [f64; 3] = [0.5, 0.5, 0.5];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Primitive {
    Sphere { center: Vec3, radius: f64, albedo: [f64; 3] },
    Box { min: Vec3, max: Vec3, albedo: [f64; 3] },
}

impl Primitive {
    pub fn albedo(&self) -> [f64; 3] {
        match *self {
            Primitive::Sphere { albedo, .. } | Primitive::Box { albedo, .. } => albedo,
        }
    }

    pub fn center(&self) -> Vec3 {
        match *self {
            Primitive::Sphere { center, .. } => center,
            Primitive::Box { min, max, .. } => (min + max) * 0.5,
        }
    }

    /// Signed distance to the surface (negative inside).
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        match *self {
            Primitive::Sphere { center, radius, .. } => (p - center).norm() - radius,
            Primitive::Box { min, max, .. } => {
                let c = (min + max) * 0.5;
                let h = (max - min) * 0.5;
                let q = (p - c).abs() - h;
                let outside = q.map(|v| v.max(0.0)).norm();
                outside + q.max().min(0.0)
            }
        }
    }

    /// Nearest hit with `t > HIT_EPS`: distance and outward normal.
    fn intersect(&self, ray: &Ray) -> Option<(f64, Vec3)> {
        match *self {
            Primitive::Sphere { center, radius, .. } => {
                let oc = ray.origin - center;
                let b = ray.direction.dot(&oc);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let t = [-b - sq, -b + sq].into_iter().find(|&t| t > HIT_EPS)?;
                Some((t, (ray.at(t) - center) / radius))
            }
            Primitive::Box { min, max, .. } => {
                let mut t0 = f64::NEG_INFINITY;
                let mut t1 = f64::INFINITY;
                let (mut a0, mut a1) = (0, 0);
                for a in 0..3 {
                    let (o, d) = (ray.origin[a], ray.direction[a]);
                    if d == 0.0 {
                        if o < min[a] || o > max[a] {
                            return None;
                        }
                        continue;
                    }
                    let (mut lo, mut hi) = ((min[a] - o) / d, (max[a] - o) / d);
                    if lo > hi {
                        std::mem::swap(&mut lo, &mut hi);
                    }
                    if lo > t0 {
                        t0 = lo;
                        a0 = a;
                    }
                    if hi < t1 {
                        t1 = hi;
                        a1 = a;
                    }
                }
                if t0 > t1 {
                    return None;
                }
                let (t, axis, entering) = if t0 > HIT_EPS {
                    (t0, a0, true)
                } else if t1 > HIT_EPS {
                    (t1, a1, false)
                } else {
                    return None;
                };
                let mut n = Vec3::zeros();
                // Outward normal opposes the direction on entry and follows it on exit.
                n[axis] = if entering { -ray.direction[axis].signum() } else { ray.direction[axis].signum() };
                Some((t, n))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionalLight {
    /// Unit direction the light travels in.
    pub direction: Vec3,
    pub intensity: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticScene {
    pub primitives: Vec<Primitive>,
    pub light: DirectionalLight,
    pub ambient: [f64; 3],
    pub background: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfaceHit {
    pub t: f64,
    pub point: Vec3,
    pub normal: Vec3,
    pub albedo: [f64; 3],
}

impl AnalyticScene {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: &[f64; 3]| v.iter().all(|c| (0.0..=1.0).contains(c));
        for p in &self.primitives {
            let inside = match *p {
                Primitive::Sphere { center, radius, .. } => {
                    radius > 0.0 && (0..3).all(|a| center[a] - radius >= 0.0 && center[a] + radius <= 1.0)
                }
                Primitive::Box { min, max, .. } => (0..3).all(|a| 0.0 <= min[a] && min[a] < max[a] && max[a] <= 1.0),
            };
            if !inside || !unit(&p.albedo()) {
                return Err(SvlfError::InvalidArgument(format!("primitive {p:?} is out of range")));
            }
        }
        let l = &self.light;
        let in_gamut = (0..3).all(|c| self.ambient[c] + l.intensity[c] <= 1.0 + 1e-12);
        if !unit(&l.intensity) || !unit(&self.ambient) || !unit(&self.background) || !in_gamut {
            return Err(SvlfError::InvalidArgument("lighting out of range".into()));
        }
        if (l.direction.norm() - 1.0).abs() > 1e-9 {
            return Err(SvlfError::InvalidArgument("light direction must be a unit vector".into()));
        }
        Ok(())
    }
}

/// Nearest primitive hit along `ray`.
pub fn raycast(scene: &AnalyticScene, ray: &Ray) -> Option<SurfaceHit> {
    let mut best: Option<(f64, Vec3, [f64; 3])> = None;
    for p in &scene.primitives {
        if let Some((t, n)) = p.intersect(ray) {
            if best.map_or(true, |(bt, _, _)| t < bt) {
                best = Some((t, n, p.albedo()));
            }
        }
    }
    best.map(|(t, normal, albedo)| SurfaceHit {
        t,
        point: ray.at(t),
        normal,
        albedo,
    })
}

/// Lambertian shading with a hard shadow, clamped to `[0, 1]`.
pub fn shade(scene: &AnalyticScene, hit: &SurfaceHit) -> [f64; 3] {
    let to_light = -scene.light.direction;
    let mut lambert = hit.normal.dot(&to_light).max(0.0);
    if lambert > 0.0 {
        let shadow = Ray {
            origin: hit.point + hit.normal * SHADOW_BIAS,
            direction: to_light,
        };
        if raycast(scene, &shadow).is_some() {
            lambert = 0.0;
        }
    }
    std::array::from_fn(|c| {
        (hit.albedo[c] * (scene.ambient[c] + scene.light.intensity[c] * lambert)).clamp(0.0, 1.0)
    })
}

/// Seeded scene of `primitives` random spheres and boxes inside the unit cube.
pub fn random_scene(primitives: usize, seed: u64) -> AnalyticScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(primitives);
    for _ in 0..primitives {
        let albedo = [rng.gen_range(0.2..1.0), rng.gen_range(0.2..1.0), rng.gen_range(0.2..1.0)];
        if rng.gen_bool(0.5) {
            let radius = rng.gen_range(0.1..0.2);
            let center = Vec3::from_fn(|_, _| rng.gen_range(0.15 + radius..0.85 - radius));
            out.push(Primitive::Sphere { center, radius, albedo });
        } else {
            let half = Vec3::from_fn(|_, _| rng.gen_range(0.07..0.17));
            let center = Vec3::from_fn(|a, _| rng.gen_range(0.15 + half[a]..0.85 - half[a]));
            out.push(Primitive::Box {
                min: center - half,
                max: center + half,
                albedo,
            });
        }
    }
    let azimuth = rng.gen_range(0.0..std::f64::consts::TAU);
    let elevation = rng.gen_range(35f64..70.0).to_radians();
    let toward = Vec3::new(
        elevation.cos() * azimuth.cos(),
        elevation.cos() * azimuth.sin(),
        elevation.sin(),
    );
    AnalyticScene {
        primitives: out,
        light: DirectionalLight {
            direction: -toward,
            intensity: [0.7; 3],
        },
        ambient: [0.3; 3],
        background: [0.0; 3],
    }
}

/// Cameras on the upper hemisphere of `radius` around the scene center,
/// directions uniform by area, all looking at the center with +z up.
pub fn sample_hemisphere_cameras(
    n: usize,
    radius: f64,
    seed: u64,
    intrinsics: Intrinsics,
    width: u32,
    height: u32,
) -> Result<Vec<Camera>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let center = Vec3::from(SCENE_CENTER);
    (0..n)
        .map(|_| {
            let z: f64 = rng.gen_range(0.0..1.0);
            let phi = rng.gen_range(0.0..std::f64::consts::TAU);
            let r = (1.0 - z * z).sqrt();
            let dir = Vec3::new(r * phi.cos(), r * phi.sin(), z);
            Camera::look_at(center + dir * radius, center, Vec3::z(), intrinsics, width, height)
        })
        .collect()
}

/// Cameras uniform inside the unit cube, outside every primitive inflated by
/// 0.05, each looking at a random primitive's center.
pub fn sample_free_cameras(
    scene: &AnalyticScene,
    n: usize,
    seed: u64,
    intrinsics: Intrinsics,
    width: u32,
    height: u32,
) -> Result<Vec<Camera>> {
    const INFLATE: f64 = 0.05;
    const MAX_TRIES: usize = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut tries = 0;
        let eye = loop {
            let p = Vec3::from_fn(|_, _| rng.gen_range(0.0..1.0));
            if scene.primitives.iter().all(|q| q.signed_distance(&p) > INFLATE) {
                break p;
            }
            tries += 1;
            if tries == MAX_TRIES {
                return Err(SvlfError::InvalidArgument("no free space for cameras".into()));
            }
        };
        let target = if scene.primitives.is_empty() {
            Vec3::from(SCENE_CENTER)
        } else {
            scene.primitives[rng.gen_range(0..scene.primitives.len())].center()
        };
        if (target - eye).norm() < 1e-6 {
            continue;
        }
        out.push(Camera::look_at(eye, target, Vec3::z(), intrinsics, width, height)?);
    }
    Ok(out)
}

/// Ground truth for one camera: RGB, depth (ray distance, 0 on background)
/// and a 0/1 mask.
pub fn render_ground_truth(scene: &AnalyticScene, camera: &Camera) -> (ImageBuf, ImageBuf, ImageBuf) {
    let (w, h) = (camera.width as usize, camera.height as usize);
    let px: Vec<([f32; 3], f32)> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let ray = camera.pixel_ray((i % w) as u32, (i / w) as u32);
            match raycast(scene, &ray) {
                Some(hit) => (shade(scene, &hit).map(|v| v as f32), hit.t as f32),
                None => (scene.background.map(|v| v as f32), 0.0),
            }
        })
        .collect();
    let rgb = px.iter().flat_map(|(c, _)| *c).collect();
    let depth: Vec<f32> = px.iter().map(|&(_, d)| d).collect();
    let mask = depth.iter().map(|&d| if d > 0.0 { 1.0 } else { 0.0 }).collect();
    (
        ImageBuf::from_data(w, h, 3, rgb).expect("sized"),
        ImageBuf::from_data(w, h, 1, depth).expect("sized"),
        ImageBuf::from_data(w, h, 1, mask).expect("sized"),
    )
}

/// Renders every camera and writes the dataset layout under `out`.
/// All cameras must share intrinsics and resolution.
pub fn generate_dataset(scene: &AnalyticScene, cameras: &[Camera], out: &Path) -> Result<Manifest> {
    scene.validate()?;
    let first = cameras
        .first()
        .ok_or_else(|| SvlfError::InvalidArgument("views must be ≥ 1".into()))?;
    if cameras
        .iter()
        .any(|c| c.intrinsics != first.intrinsics || (c.width, c.height) != (first.width, first.height))
    {
        return Err(SvlfError::InvalidArgument("cameras must share intrinsics and resolution".into()));
    }
    fs::create_dir_all(out).map_err(|e| SvlfError::io(out, e))?;
    let n = cameras.len();
    let mut frames = Vec::with_capacity(n);
    for (i, cam) in cameras.iter().enumerate() {
        let name = dataset::frame_name(i);
        let (rgb, depth, mask) = render_ground_truth(scene, cam);
        rgb.write_png(&dataset::rgb_path(out, &name))?;
        dataset::write_depth(&dataset::depth_path(out, &name), &depth)?;
        mask.write_png(&dataset::mask_path(out, &name))?;
        frames.push(FrameEntry {
            name,
            split: dataset::split_of(i, n),
            camera_to_world: cam.pose_row_major().to_vec(),
        });
    }
    let manifest = Manifest {
        resolution: Resolution {
            width: first.width,
            height: first.height,
        },
        intrinsics: first.intrinsics,
        frames,
    };
    dataset::write_manifest(out, &manifest)?;
    Ok(manifest)
}
