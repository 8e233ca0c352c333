//! Brute-force traversal oracle, shared by the core tests and the acceptance suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use svlf::octree::{morton_encode, ray_aabb, Aabb, GridConfig, Ray, RayVoxelHit, SparseOctree, Vec3, GRAZE_EPS};

pub const OCTREES: usize = 50;
pub const RAYS_PER_OCTREE: usize = 1000;
pub const T_TOL: f64 = 1e-9;

pub struct TraversalReport {
    pub octrees: usize,
    pub rays: usize,
    pub hits: usize,
    /// Rays whose id sequence differs from the oracle's.
    pub order_mismatches: usize,
    pub max_t_err: f64,
}

impl TraversalReport {
    pub fn passed(&self) -> bool {
        self.order_mismatches == 0 && self.max_t_err <= T_TOL
    }

    pub fn summary(&self) -> String {
        format!(
            "{} octrees x {} rays, {} hits, {} order mismatches, max |dt| {:.1e}",
            self.octrees,
            self.rays / self.octrees.max(1),
            self.hits,
            self.order_mismatches,
            self.max_t_err
        )
    }
}

/// Every occupied leaf through the slab test, sorted by entry distance then id.
pub fn brute_force(oct: &SparseOctree, ray: &Ray) -> Vec<RayVoxelHit> {
    let mut out: Vec<RayVoxelHit> = oct
        .leaves()
        .iter()
        .filter_map(|&code| {
            let (t0, t1) = ray_aabb(ray, &oct.leaf_aabb(code))?;
            (t1 - t0 > GRAZE_EPS).then(|| RayVoxelHit {
                voxel_id: code,
                t_in: t0,
                t_out: t1,
                x1: ray.at(t0),
                x2: ray.at(t1),
            })
        })
        .collect();
    out.sort_by(|a, b| a.t_in.total_cmp(&b.t_in).then(a.voxel_id.cmp(&b.voxel_id)));
    out
}

pub fn random_sparse_octree(rng: &mut ChaCha8Rng, res: u32) -> SparseOctree {
    let lo = Vec3::new(rng.gen_range(-2.0..0.0), rng.gen_range(-2.0..0.0), rng.gen_range(-2.0..0.0));
    let ext = Vec3::new(rng.gen_range(0.5..3.0), rng.gen_range(0.5..3.0), rng.gen_range(0.5..3.0));
    let config = GridConfig {
        resolution: res,
        scene_aabb: Aabb::new(lo, lo + ext),
        dilation: 0,
    };
    let density = rng.gen_range(0.01..0.3);
    let mut leaves = Vec::new();
    for z in 0..res {
        for y in 0..res {
            for x in 0..res {
                if rng.gen::<f64>() < density {
                    leaves.push(morton_encode(x, y, z));
                }
            }
        }
    }
    if leaves.is_empty() {
        leaves.push(morton_encode(0, 0, 0));
    }
    SparseOctree::from_leaves(config, leaves).unwrap()
}

/// A ray aimed into the scene box. A share of rays start on lattice planes or
/// run along axes, where ties and grazing contacts concentrate.
fn random_ray(rng: &mut ChaCha8Rng, oct: &SparseOctree) -> Ray {
    let b = oct.config().scene_aabb;
    let ext = b.extent();
    let res = oct.config().resolution as f64;
    let lattice = |rng: &mut ChaCha8Rng, a: usize| b.min[a] + ext[a] * (rng.gen_range(0..=oct.config().resolution) as f64 / res);
    loop {
        let mut target = Vec3::from_fn(|a, _| b.min[a] + rng.gen::<f64>() * ext[a]);
        let mut origin = Vec3::from_fn(|a, _| b.min[a] + rng.gen_range(-1.0..2.0) * ext[a]);
        match rng.gen_range(0..6) {
            0 => {
                let a = rng.gen_range(0..3);
                origin[a] = lattice(rng, a);
                target[a] = origin[a];
            }
            1 => {
                let a = rng.gen_range(0..3);
                for k in 0..3 {
                    if k != a {
                        origin[k] = lattice(rng, k);
                        target[k] = origin[k];
                    }
                }
            }
            2 => {
                for a in 0..3 {
                    origin[a] = lattice(rng, a);
                }
            }
            _ => {}
        }
        if let Ok(ray) = Ray::new(origin, target - origin) {
            return ray;
        }
    }
}

pub fn traversal_oracle(seed: u64, octrees: usize, rays: usize) -> TraversalReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = TraversalReport {
        octrees,
        rays: octrees * rays,
        hits: 0,
        order_mismatches: 0,
        max_t_err: 0.0,
    };
    for _ in 0..octrees {
        let oct = random_sparse_octree(&mut rng, 16);
        for _ in 0..rays {
            let ray = random_ray(&mut rng, &oct);
            let got = oct.traverse(&ray);
            let want = brute_force(&oct, &ray);
            report.hits += got.len();
            if got.len() != want.len() || got.iter().zip(&want).any(|(g, w)| g.voxel_id != w.voxel_id) {
                report.order_mismatches += 1;
                continue;
            }
            for (g, w) in got.iter().zip(&want) {
                report.max_t_err = report.max_t_err.max((g.t_in - w.t_in).abs()).max((g.t_out - w.t_out).abs());
            }
        }
    }
    report
}
