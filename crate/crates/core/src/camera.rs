//! Pinhole cameras. Camera space looks down +z with +x right and +y down;
//! `pose` maps camera coordinates to world coordinates.

use nalgebra::{Matrix3, Matrix4};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SvlfError};
use crate::octree::{Ray, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    /// Square pixels, principal point at the image center, horizontal field of view in degrees.
    pub fn from_fov(width: u32, height: u32, fov_x_deg: f64) -> Self {
        let f = 0.5 * width as f64 / (0.5 * fov_x_deg.to_radians()).tan();
        Self {
            fx: f,
            fy: f,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
        }
    }

    pub fn scaled(&self, sx: f64, sy: f64) -> Self {
        Self {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub pose: Matrix4<f64>,
    pub width: u32,
    pub height: u32,
}

impl Camera {
    pub fn new(intrinsics: Intrinsics, pose: Matrix4<f64>, width: u32, height: u32) -> Result<Self> {
        if !(intrinsics.fx > 0.0 && intrinsics.fy > 0.0) {
            return Err(SvlfError::InvalidArgument("focal lengths must be positive".into()));
        }
        let rot: Matrix3<f64> = pose.fixed_view::<3, 3>(0, 0).into_owned();
        let err = (rot.transpose() * rot - Matrix3::identity()).abs().max();
        if !(err <= 1e-9) || (rot.determinant() - 1.0).abs() > 1e-9 {
            return Err(SvlfError::InvalidArgument(format!(
                "camera rotation is not orthonormal (error {err:e})"
            )));
        }
        let last = pose.row(3);
        if last[0] != 0.0 || last[1] != 0.0 || last[2] != 0.0 || last[3] != 1.0 {
            return Err(SvlfError::InvalidArgument("camera pose is not rigid".into()));
        }
        Ok(Self {
            intrinsics,
            pose,
            width,
            height,
        })
    }

    /// Camera at `eye` looking at `target`; `up` picks the roll.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, intrinsics: Intrinsics, width: u32, height: u32) -> Result<Self> {
        let forward = (target - eye).normalize();
        let mut right = forward.cross(&up);
        if right.norm() < 1e-6 {
            // `up` parallel to the view direction: fall back to another axis.
            right = forward.cross(&Vec3::x());
            if right.norm() < 1e-6 {
                right = forward.cross(&Vec3::y());
            }
        }
        let right = right.normalize();
        let down = forward.cross(&right).normalize();
        let mut pose = Matrix4::identity();
        for a in 0..3 {
            pose[(a, 0)] = right[a];
            pose[(a, 1)] = down[a];
            pose[(a, 2)] = forward[a];
            pose[(a, 3)] = eye[a];
        }
        Self::new(intrinsics, pose, width, height)
    }

    pub fn position(&self) -> Vec3 {
        Vec3::new(self.pose[(0, 3)], self.pose[(1, 3)], self.pose[(2, 3)])
    }

    /// Ray through image-plane position `(px, py)` in pixels.
    pub fn ray(&self, px: f64, py: f64) -> Ray {
        let k = &self.intrinsics;
        let d_cam = Vec3::new((px - k.cx) / k.fx, (py - k.cy) / k.fy, 1.0);
        let rot = self.pose.fixed_view::<3, 3>(0, 0);
        let d = rot * d_cam;
        Ray::new(self.position(), d).expect("finite camera ray")
    }

    /// Ray through the center of pixel `(x, y)`.
    pub fn pixel_ray(&self, x: u32, y: u32) -> Ray {
        self.ray(x as f64 + 0.5, y as f64 + 0.5)
    }

    /// Row-major 4x4 pose.
    pub fn pose_row_major(&self) -> [f64; 16] {
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = self.pose[(r, c)];
            }
        }
        out
    }

    pub fn pose_from_row_major(m: &[f64; 16]) -> Matrix4<f64> {
        Matrix4::from_row_slice(m)
    }
}
