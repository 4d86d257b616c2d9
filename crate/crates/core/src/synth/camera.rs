use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Scene;
use crate::cloud::{PointCloud, ViewId};
use crate::error::{Error, Result};

/// Pinhole depth camera with one ray per pixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VirtualCamera {
    pub origin: Vector3<f64>,
    pub look_at: Vector3<f64>,
    pub width: usize,
    pub height: usize,
    /// Horizontal field of view in degrees.
    pub fov_deg: f64,
    pub max_range: f64,
    /// Standard deviation of the depth noise along each ray, meters.
    pub noise: f64,
}

impl VirtualCamera {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera ray counts must be at least 1"));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::invalid("camera noise must be non-negative"));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(Error::invalid("camera fov must lie in (0, 180) degrees"));
        }
        if !(self.max_range > 0.0) {
            return Err(Error::invalid("camera max_range must be positive"));
        }
        if (self.look_at - self.origin).norm() == 0.0 {
            return Err(Error::invalid("camera look_at coincides with origin"));
        }
        Ok(())
    }

    /// Unit ray direction through the center of pixel `(row, col)`.
    pub fn ray(&self, row: usize, col: usize) -> Vector3<f64> {
        let forward = (self.look_at - self.origin).normalize();
        let reference = if forward.cross(&Vector3::z()).norm() > 1e-9 {
            Vector3::z()
        } else {
            Vector3::y()
        };
        let right = forward.cross(&reference).normalize();
        let up = right.cross(&forward);
        let tan_h = (self.fov_deg.to_radians() / 2.0).tan();
        let tan_v = tan_h * self.height as f64 / self.width as f64;
        let x = ((col as f64 + 0.5) / self.width as f64 * 2.0 - 1.0) * tan_h;
        let y = (1.0 - (row as f64 + 0.5) / self.height as f64 * 2.0) * tan_v;
        (forward + right * x + up * y).normalize()
    }
}

/// Ray-casts every pixel and returns the hit points as a single-view cloud.
/// Hits are perturbed along their ray by Gaussian noise.
pub fn render_view(s: &Scene, cam: &VirtualCamera, view: ViewId, seed: u64) -> Result<PointCloud> {
    cam.validate()?;
    let hits: Vec<(Vector3<f64>, f64)> = (0..cam.height)
        .into_par_iter()
        .flat_map_iter(|row| {
            (0..cam.width).filter_map(move |col| {
                let d = cam.ray(row, col);
                let hit = s.raycast(&cam.origin, &d)?;
                (hit.t <= cam.max_range).then_some((d, hit.t))
            })
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, cam.noise).map_err(|e| Error::invalid(e.to_string()))?;
    let points = hits
        .into_iter()
        .map(|(d, t)| {
            let t = if cam.noise > 0.0 { t + noise.sample(&mut rng) } else { t };
            cam.origin + d * t
        })
        .collect();
    Ok(PointCloud::from_view(points, view, cam.origin))
}
