//! Sparse voxel octree: occupancy, ray-box intersection and ordered ray traversal.
//!
//! Cells are addressed by Morton codes with bit `k` of x at bit `3k`, of y at
//! `3k + 1` and of z at `3k + 2`. Level 0 is the single root cell covering the
//! scene box; level `depth` holds the leaves of the `resolution^3` grid.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SvlfError};

pub type Vec3 = Vector3<f64>;

/// Hits whose clipped parametric width does not exceed this are dropped.
pub const GRAZE_EPS: f64 = 1e-12;

const MORTON_BITS: u32 = 21;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self { min, max }
    }

    pub fn unit() -> Self {
        Self::new(Vec3::zeros(), Vec3::repeat(1.0))
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    /// Closed containment with a slack on every face.
    pub fn contains(&self, p: &Vec3, slack: f64) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] - slack && p[a] <= self.max[a] + slack)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub resolution: u32,
    pub scene_aabb: Aabb,
    pub dilation: u32,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            resolution: 128,
            scene_aabb: Aabb::unit(),
            dilation: 1,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolution < 2 || !self.resolution.is_power_of_two() {
            return Err(SvlfError::InvalidGrid(format!(
                "resolution {} is not a power of two >= 2",
                self.resolution
            )));
        }
        if self.resolution > 1 << (MORTON_BITS - 1) {
            return Err(SvlfError::InvalidGrid(format!(
                "resolution {} exceeds the Morton code range",
                self.resolution
            )));
        }
        let ext = self.scene_aabb.extent();
        if !(0..3).all(|a| ext[a].is_finite() && ext[a] > 0.0) {
            return Err(SvlfError::InvalidGrid(
                "scene box must have positive extent on every axis".into(),
            ));
        }
        Ok(())
    }

    pub fn depth(&self) -> u32 {
        self.resolution.trailing_zeros()
    }

    /// Edge lengths of a leaf cell.
    pub fn leaf_size(&self) -> Vec3 {
        self.scene_aabb.extent() / self.resolution as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl Ray {
    /// Builds a ray, normalizing `direction`.
    pub fn new(origin: Vec3, direction: Vec3) -> Result<Self> {
        let n = direction.norm();
        if !n.is_finite() || n == 0.0 || !origin.iter().all(|v| v.is_finite()) {
            return Err(SvlfError::NonFinite("ray"));
        }
        Ok(Self {
            origin,
            direction: direction / n,
        })
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayVoxelHit {
    pub voxel_id: u64,
    pub t_in: f64,
    pub t_out: f64,
    pub x1: Vec3,
    pub x2: Vec3,
}

pub fn morton_encode(x: u32, y: u32, z: u32) -> u64 {
    spread(x) | (spread(y) << 1) | (spread(z) << 2)
}

pub fn morton_decode(code: u64) -> [u32; 3] {
    [compact(code), compact(code >> 1), compact(code >> 2)]
}

fn spread(v: u32) -> u64 {
    let mut x = (v as u64) & 0x1f_ffff;
    x = (x | (x << 32)) & 0x1f00000000ffff;
    x = (x | (x << 16)) & 0x1f0000ff0000ff;
    x = (x | (x << 8)) & 0x100f00f00f00f00f;
    x = (x | (x << 4)) & 0x10c30c30c30c30c3;
    x = (x | (x << 2)) & 0x1249249249249249;
    x
}

fn compact(code: u64) -> u32 {
    let mut x = code & 0x1249249249249249;
    x = (x | (x >> 2)) & 0x10c30c30c30c30c3;
    x = (x | (x >> 4)) & 0x100f00f00f00f00f;
    x = (x | (x >> 8)) & 0x1f0000ff0000ff;
    x = (x | (x >> 16)) & 0x1f00000000ffff;
    x = (x | (x >> 32)) & 0x1f_ffff;
    x as u32
}

/// Slab test. Returns the parametric interval inside `aabb`, clipped to `t >= 0`.
///
/// Zero direction components are handled explicitly: the ray is inside that
/// slab for all `t` when the origin lies within it, and never otherwise.
pub fn ray_aabb(ray: &Ray, aabb: &Aabb) -> Option<(f64, f64)> {
    let mut t0 = 0.0f64;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        let o = ray.origin[a];
        let d = ray.direction[a];
        if d == 0.0 {
            if o < aabb.min[a] || o > aabb.max[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d;
        let mut near = (aabb.min[a] - o) * inv;
        let mut far = (aabb.max[a] - o) * inv;
        if near > far {
            std::mem::swap(&mut near, &mut far);
        }
        t0 = t0.max(near);
        t1 = t1.min(far);
        if t1 < t0 {
            return None;
        }
    }
    Some((t0, t1))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SparseOctree {
    config: GridConfig,
    /// Sorted Morton codes of occupied cells per level.
    levels: Vec<Vec<u64>>,
    /// Sorted Morton codes of leaf-corner lattice points; index is the vertex id.
    vertex_keys: Vec<u64>,
    /// Corner vertex ids of each leaf, aligned with the leaf level.
    leaf_corners: Vec<[u32; 8]>,
}

/// Quantizes `points` into leaf cells, dilates and builds the octree.
///
/// Returns the octree and the number of points dropped for lying outside the
/// scene box.
pub fn build_octree(points: &[Vec3], config: GridConfig) -> Result<(SparseOctree, usize)> {
    config.validate()?;
    if points.is_empty() {
        return Err(SvlfError::EmptyOccupancy);
    }
    let res = config.resolution as i64;
    let mut cells = Vec::with_capacity(points.len());
    let mut dropped = 0usize;
    for p in points {
        match quantize(&config, p) {
            Some(c) => cells.push(morton_encode(c[0], c[1], c[2])),
            None => dropped += 1,
        }
    }
    cells.sort_unstable();
    cells.dedup();
    if cells.is_empty() {
        return Err(SvlfError::EmptyOccupancy);
    }
    let d = config.dilation as i64;
    let mut leaves = Vec::with_capacity(cells.len() * ((2 * d + 1).pow(3) as usize));
    for &code in &cells {
        let [x, y, z] = morton_decode(code);
        for dz in -d..=d {
            for dy in -d..=d {
                for dx in -d..=d {
                    let (nx, ny, nz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                    if (0..res).contains(&nx) && (0..res).contains(&ny) && (0..res).contains(&nz) {
                        leaves.push(morton_encode(nx as u32, ny as u32, nz as u32));
                    }
                }
            }
        }
    }
    Ok((SparseOctree::from_leaves(config, leaves)?, dropped))
}

fn quantize(config: &GridConfig, p: &Vec3) -> Option<[u32; 3]> {
    let aabb = &config.scene_aabb;
    if !aabb.contains(p, 0.0) {
        return None;
    }
    let res = config.resolution;
    let ext = aabb.extent();
    let mut c = [0u32; 3];
    for a in 0..3 {
        let f = ((p[a] - aabb.min[a]) / ext[a] * res as f64).floor();
        c[a] = (f.max(0.0) as u32).min(res - 1);
    }
    Some(c)
}

impl SparseOctree {
    /// Builds the hierarchy from an arbitrary list of leaf Morton codes.
    /// An empty list yields an octree with no occupied cells.
    pub fn from_leaves(config: GridConfig, mut leaves: Vec<u64>) -> Result<Self> {
        config.validate()?;
        let depth = config.depth();
        let res = config.resolution;
        leaves.sort_unstable();
        leaves.dedup();
        if let Some(&bad) = leaves
            .iter()
            .find(|&&c| morton_decode(c).iter().any(|&v| v >= res))
        {
            return Err(SvlfError::UnknownVoxel(bad));
        }
        let mut levels = vec![Vec::new(); depth as usize + 1];
        for l in 0..depth {
            let shift = 3 * (depth - l);
            let mut lv: Vec<u64> = leaves.iter().map(|c| c >> shift).collect();
            lv.dedup();
            levels[l as usize] = lv;
        }
        let mut keys = Vec::with_capacity(leaves.len() * 8);
        for &c in &leaves {
            let [x, y, z] = morton_decode(c);
            for b in 0..8u32 {
                keys.push(morton_encode(x + (b & 1), y + ((b >> 1) & 1), z + ((b >> 2) & 1)));
            }
        }
        keys.sort_unstable();
        keys.dedup();
        let leaf_corners = leaves
            .iter()
            .map(|&c| {
                let [x, y, z] = morton_decode(c);
                let mut ids = [0u32; 8];
                for (b, id) in ids.iter_mut().enumerate() {
                    let b = b as u32;
                    let key = morton_encode(x + (b & 1), y + ((b >> 1) & 1), z + ((b >> 2) & 1));
                    *id = keys.binary_search(&key).expect("corner key present") as u32;
                }
                ids
            })
            .collect();
        levels[depth as usize] = leaves;
        Ok(Self {
            config,
            levels,
            vertex_keys: keys,
            leaf_corners,
        })
    }

    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    pub fn depth(&self) -> u32 {
        self.config.depth()
    }

    /// Sorted leaf Morton codes.
    pub fn leaves(&self) -> &[u64] {
        &self.levels[self.depth() as usize]
    }

    pub fn level(&self, level: u32) -> &[u64] {
        &self.levels[level as usize]
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves().len()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves().is_empty()
    }

    pub fn leaf_index(&self, voxel_id: u64) -> Option<usize> {
        self.leaves().binary_search(&voxel_id).ok()
    }

    pub fn is_occupied(&self, level: u32, code: u64) -> bool {
        self.levels
            .get(level as usize)
            .is_some_and(|lv| lv.binary_search(&code).is_ok())
    }

    /// Lattice coordinates of a vertex id.
    pub fn vertex_coords(&self, vertex: u32) -> [u32; 3] {
        morton_decode(self.vertex_keys[vertex as usize])
    }

    /// The box of a cell at `level`.
    pub fn cell_aabb(&self, level: u32, code: u64) -> Aabb {
        let scale = 1.0 / (1u64 << level) as f64;
        let aabb = &self.config.scene_aabb;
        let h = aabb.extent() * scale;
        let c = morton_decode(code);
        let mut min = Vec3::zeros();
        let mut max = Vec3::zeros();
        for a in 0..3 {
            min[a] = aabb.min[a] + c[a] as f64 * h[a];
            max[a] = aabb.min[a] + (c[a] + 1) as f64 * h[a];
        }
        Aabb::new(min, max)
    }

    pub fn leaf_aabb(&self, voxel_id: u64) -> Aabb {
        self.cell_aabb(self.depth(), voxel_id)
    }

    /// Vertex ids of the leaf's corners, ordered by `(bz << 2) | (by << 1) | bx`.
    pub fn corner_vertices(&self, voxel_id: u64) -> Result<[u32; 8]> {
        self.leaf_index(voxel_id)
            .map(|i| self.leaf_corners[i])
            .ok_or(SvlfError::UnknownVoxel(voxel_id))
    }

    pub fn corners_by_index(&self, leaf_index: usize) -> &[u32; 8] {
        &self.leaf_corners[leaf_index]
    }

    /// The occupied leaf whose half-open cell contains `point`. Points on the
    /// scene box's max faces map to the last cell.
    pub fn locate(&self, point: &Vec3) -> Option<u64> {
        let c = quantize(&self.config, point)?;
        let code = morton_encode(c[0], c[1], c[2]);
        self.leaf_index(code).map(|_| code)
    }

    /// Occupied leaves crossed by `ray`, ordered by entry distance with ties
    /// broken by ascending Morton code.
    pub fn traverse(&self, ray: &Ray) -> Vec<RayVoxelHit> {
        let mut hits = Vec::new();
        self.traverse_into(ray, &mut hits);
        hits
    }

    /// As [`SparseOctree::traverse`], reusing `hits`' allocation.
    pub fn traverse_into(&self, ray: &Ray, hits: &mut Vec<RayVoxelHit>) {
        hits.clear();
        if self.is_empty() {
            return;
        }
        let depth = self.depth();
        let mut stack: Vec<(u32, u64)> = Vec::with_capacity(8 * depth as usize + 1);
        stack.push((0, 0));
        while let Some((level, code)) = stack.pop() {
            let Some((t0, t1)) = ray_aabb(ray, &self.cell_aabb(level, code)) else {
                continue;
            };
            if t1 - t0 <= GRAZE_EPS {
                continue;
            }
            if level == depth {
                hits.push(RayVoxelHit {
                    voxel_id: code,
                    t_in: t0,
                    t_out: t1,
                    x1: ray.at(t0),
                    x2: ray.at(t1),
                });
                continue;
            }
            let next = &self.levels[level as usize + 1];
            let first = code << 3;
            let start = next.partition_point(|&c| c < first);
            for &child in next[start..].iter().take_while(|&&c| c < first + 8) {
                stack.push((level + 1, child));
            }
        }
        hits.sort_by(|a, b| {
            a.t_in
                .total_cmp(&b.t_in)
                .then(a.voxel_id.cmp(&b.voxel_id))
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn cfg(res: u32, dilation: u32) -> GridConfig {
        GridConfig {
            resolution: res,
            scene_aabb: Aabb::unit(),
            dilation,
        }
    }

    fn leaf_from_coords(config: GridConfig, coords: &[[u32; 3]]) -> SparseOctree {
        let leaves = coords.iter().map(|c| morton_encode(c[0], c[1], c[2])).collect();
        SparseOctree::from_leaves(config, leaves).unwrap()
    }

    /// Brute force: every occupied leaf through `ray_aabb`, then sorted.
    fn brute_force(oct: &SparseOctree, ray: &Ray) -> Vec<RayVoxelHit> {
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

    #[test]
    fn morton_convention() {
        assert_eq!(morton_encode(1, 0, 0), 1);
        assert_eq!(morton_encode(0, 1, 0), 2);
        assert_eq!(morton_encode(0, 0, 1), 4);
        assert_eq!(morton_encode(3, 0, 0), 0b1001);
        for &(x, y, z) in &[(0, 0, 0), (5, 17, 1023), ((1 << 21) - 1, 7, 99)] {
            assert_eq!(morton_decode(morton_encode(x, y, z)), [x, y, z]);
        }
    }

    #[test]
    fn grid_config_validation() {
        assert!(cfg(128, 1).validate().is_ok());
        assert!(cfg(1, 1).validate().is_err());
        assert!(cfg(12, 1).validate().is_err());
        let mut flat = cfg(4, 0);
        flat.scene_aabb.max[2] = 0.0;
        assert!(flat.validate().is_err());
    }

    #[test]
    fn single_point_resolution_two() {
        let (oct, dropped) = build_octree(&[Vec3::new(0.5, 0.5, 0.5)], cfg(2, 0)).unwrap();
        assert_eq!(dropped, 0);
        assert_eq!(oct.leaves(), &[morton_encode(1, 1, 1)]);
        assert_eq!(oct.vertex_count(), 8);
    }

    #[test]
    fn dilated_point_counts() {
        // Brute-force oracle: enumerate the dilated block and its corner lattice.
        let res = 4i64;
        let center = [2i64, 2, 2]; // 0.5 * 4
        let mut cells = BTreeSet::new();
        let mut corners = BTreeSet::new();
        for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let c = [center[0] + dx, center[1] + dy, center[2] + dz];
                    if c.iter().all(|&v| (0..res).contains(&v)) {
                        cells.insert(c);
                        for b in 0..8 {
                            corners.insert([c[0] + (b & 1), c[1] + ((b >> 1) & 1), c[2] + ((b >> 2) & 1)]);
                        }
                    }
                }
            }
        }
        assert_eq!((cells.len(), corners.len()), (27, 64));
        let (oct, _) = build_octree(&[Vec3::new(0.5, 0.5, 0.5)], cfg(4, 1)).unwrap();
        assert_eq!(oct.leaf_count(), cells.len());
        assert_eq!(oct.vertex_count(), corners.len());
    }

    #[test]
    fn duplicate_points_are_idempotent() {
        let a = build_octree(&[Vec3::new(0.3, 0.6, 0.1)], cfg(8, 1)).unwrap().0;
        let b = build_octree(&[Vec3::new(0.3, 0.6, 0.1), Vec3::new(0.31, 0.61, 0.11)], cfg(8, 1))
            .unwrap()
            .0;
        assert_eq!(a, b);
    }

    #[test]
    fn empty_and_outside_points() {
        assert!(matches!(build_octree(&[], cfg(4, 0)), Err(SvlfError::EmptyOccupancy)));
        assert!(matches!(
            build_octree(&[Vec3::new(2.0, 0.5, 0.5)], cfg(4, 0)),
            Err(SvlfError::EmptyOccupancy)
        ));
        let (_, dropped) =
            build_octree(&[Vec3::new(2.0, 0.5, 0.5), Vec3::new(0.5, 0.5, 0.5)], cfg(4, 0)).unwrap();
        assert_eq!(dropped, 1);
    }

    #[test]
    fn parent_closure() {
        let pts: Vec<Vec3> = (0..50)
            .map(|i| Vec3::new((i as f64 * 0.137) % 1.0, (i as f64 * 0.291) % 1.0, (i as f64 * 0.613) % 1.0))
            .collect();
        let (oct, _) = build_octree(&pts, cfg(32, 1)).unwrap();
        for l in 1..=oct.depth() {
            for &c in oct.level(l) {
                assert!(oct.is_occupied(l - 1, c >> 3));
            }
        }
        assert_eq!(oct.level(0), &[0]);
    }

    #[test]
    fn ray_aabb_cases() {
        let b = Aabb::unit();
        let r = Ray::new(Vec3::new(-2.0, 0.5, 0.5), Vec3::x()).unwrap();
        assert_eq!(ray_aabb(&r, &b), Some((2.0, 3.0)));
        let r = Ray::new(Vec3::new(0.5, 0.5, 0.5), Vec3::z()).unwrap();
        assert_eq!(ray_aabb(&r, &b), Some((0.0, 0.5)));
        let r = Ray::new(Vec3::new(-1.0, 2.0, 0.5), Vec3::x()).unwrap();
        assert_eq!(ray_aabb(&r, &b), None);
        let r = Ray::new(Vec3::new(2.0, 0.5, 0.5), Vec3::x()).unwrap();
        assert_eq!(ray_aabb(&r, &b), None, "box behind origin");
    }

    #[test]
    fn single_leaf_traversal() {
        let oct = leaf_from_coords(cfg(4, 0), &[[1, 2, 3]]);
        let bb = oct.leaf_aabb(morton_encode(1, 2, 3));
        let c = bb.center();
        let ray = Ray::new(Vec3::new(c.x, c.y, -1.0), Vec3::z()).unwrap();
        let hits = oct.traverse(&ray);
        assert_eq!(hits.len(), 1);
        assert!((hits[0].x1.z - bb.min.z).abs() < 1e-12);
        assert!((hits[0].x2.z - bb.max.z).abs() < 1e-12);
        assert_eq!(hits[0].voxel_id, morton_encode(1, 2, 3));
    }

    #[test]
    fn random_octree_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let config = cfg(16, 0);
        let mut coords = Vec::new();
        for z in 0..16 {
            for y in 0..16 {
                for x in 0..16 {
                    if rng.gen::<f64>() < 0.1 {
                        coords.push([x, y, z]);
                    }
                }
            }
        }
        let oct = leaf_from_coords(config, &coords);
        for _ in 0..1000 {
            let o = Vec3::new(rng.gen_range(-1.0..2.0), rng.gen_range(-1.0..2.0), rng.gen_range(-1.0..2.0));
            let target = Vec3::new(rng.gen(), rng.gen(), rng.gen());
            let ray = Ray::new(o, target - o).unwrap();
            assert_eq!(oct.traverse(&ray), brute_force(&oct, &ray));
        }
    }

    #[test]
    fn grazing_shared_face_tie_rule() {
        // Two leaves sharing the face y = 0.5; the ray runs inside that face.
        let oct = leaf_from_coords(cfg(2, 0), &[[0, 0, 0], [0, 1, 0]]);
        let ray = Ray::new(Vec3::new(-1.0, 0.5, 0.25), Vec3::x()).unwrap();
        let hits = oct.traverse(&ray);
        assert_eq!(hits.len(), 2);
        // Equal entry distance: ascending Morton code decides.
        assert_eq!(hits[0].t_in, hits[1].t_in);
        assert_eq!(hits[0].voxel_id, morton_encode(0, 0, 0));
        assert_eq!(hits[1].voxel_id, morton_encode(0, 1, 0));
        assert_eq!(hits, brute_force(&oct, &ray));
        let edge = Ray::new(Vec3::new(-1.0, 0.5, 0.5), Vec3::x()).unwrap();
        let hits = leaf_from_coords(cfg(2, 0), &[[0, 0, 0]]).traverse(&edge);
        assert_eq!(hits.len(), 1, "the ray lies on the cell's edge, which is still inside the closed box");
        // Touching a single edge point of the cell: zero-width interval.
        let corner = Ray::new(Vec3::new(0.0, 1.0, 0.25), Vec3::new(1.0, -1.0, 0.0)).unwrap();
        assert!(leaf_from_coords(cfg(2, 0), &[[0, 0, 0]]).traverse(&corner).is_empty());
    }

    #[test]
    fn corner_sharing() {
        let single = leaf_from_coords(cfg(4, 0), &[[1, 1, 1]]);
        let ids: BTreeSet<u32> = single.corner_vertices(morton_encode(1, 1, 1)).unwrap().into_iter().collect();
        assert_eq!(ids, (0..8).collect());

        let pair = leaf_from_coords(cfg(4, 0), &[[1, 1, 1], [2, 1, 1]]);
        assert_eq!(pair.vertex_count(), 12);
        let a = pair.corner_vertices(morton_encode(1, 1, 1)).unwrap();
        let b = pair.corner_vertices(morton_encode(2, 1, 1)).unwrap();
        // a's +x face corners are b's -x face corners.
        for code in [1, 3, 5, 7] {
            assert_eq!(a[code], b[code - 1]);
        }

        let mut block = Vec::new();
        for z in 0..2 {
            for y in 0..2 {
                for x in 0..2 {
                    block.push([x, y, z]);
                }
            }
        }
        assert_eq!(leaf_from_coords(cfg(4, 0), &block).vertex_count(), 27);
        assert!(matches!(pair.corner_vertices(morton_encode(0, 0, 0)), Err(SvlfError::UnknownVoxel(_))));
    }

    #[test]
    fn corner_ids_map_to_lattice() {
        let oct = leaf_from_coords(cfg(8, 0), &[[3, 4, 5]]);
        let ids = oct.corner_vertices(morton_encode(3, 4, 5)).unwrap();
        for (b, &id) in ids.iter().enumerate() {
            let b = b as u32;
            assert_eq!(oct.vertex_coords(id), [3 + (b & 1), 4 + ((b >> 1) & 1), 5 + ((b >> 2) & 1)]);
        }
    }

    #[test]
    fn locate_rules() {
        let oct = leaf_from_coords(cfg(2, 0), &[[0, 0, 0], [1, 0, 0], [1, 1, 1]]);
        let c = oct.leaf_aabb(morton_encode(0, 0, 0)).center();
        assert_eq!(oct.locate(&c), Some(morton_encode(0, 0, 0)));
        assert_eq!(oct.locate(&Vec3::new(0.25, 0.75, 0.25)), None);
        // Shared face x = 0.5 belongs to the max side.
        assert_eq!(oct.locate(&Vec3::new(0.5, 0.25, 0.25)), Some(morton_encode(1, 0, 0)));
        // Max face of the scene box maps to the last cell.
        assert_eq!(oct.locate(&Vec3::new(1.0, 1.0, 1.0)), Some(morton_encode(1, 1, 1)));
        assert_eq!(oct.locate(&Vec3::new(1.5, 0.2, 0.2)), None);
    }

    #[test]
    fn axis_aligned_segment_consistency() {
        let oct = leaf_from_coords(cfg(8, 0), &[[2, 3, 3], [3, 3, 3], [4, 3, 3]]);
        let ray = Ray::new(Vec3::new(-0.3, 0.43, 0.41), Vec3::new(1.0, 0.01, -0.005)).unwrap();
        let hits = oct.traverse(&ray);
        assert_eq!(hits.len(), 3);
        for w in hits.windows(2) {
            assert!((w[0].t_out - w[1].t_in).abs() <= 1e-9);
        }
    }
}
