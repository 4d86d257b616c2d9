//! Hand hypothesis generation: point sampling, local frames and a grid
//! search over hand orientation and position with an analytic push along the
//! approach axis.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{NeighborIndex, PointCloud};
use crate::error::{Error, Result};
use crate::handgeom::{
    body_collides, body_offset_interval, closing_plane_points, HandHypothesis, HandParams, HandPose,
};
use crate::surface::{frame_at, DarbouxFrame};

/// Distance the hand is backed off from the first contact so the emitted
/// pose is strictly collision-free under rounding.
pub const PUSH_BACKOFF: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub n_samples: usize,
    pub n_orientations: usize,
    pub n_positions: usize,
    /// Radius of the surface-fitting ball (m).
    pub ball_radius: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_samples: 4000,
            n_orientations: 8,
            n_positions: 20,
            ball_radius: 0.03,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 || self.n_orientations == 0 || self.n_positions == 0 {
            return Err(Error::invalid("sampler counts must be at least 1"));
        }
        if !(self.ball_radius > 0.0) {
            return Err(Error::invalid("ball_radius must be positive"));
        }
        Ok(())
    }

    /// Hand orientations about the frame axis, a half turn starting at -pi/2.
    pub fn orientations(&self) -> Vec<f64> {
        let n = self.n_orientations as f64;
        (0..self.n_orientations)
            .map(|j| -std::f64::consts::FRAC_PI_2 + std::f64::consts::PI * j as f64 / n)
            .collect()
    }

    /// Offsets along the closing direction, evenly spaced over `[-d, d]`.
    pub fn positions(&self, open_aperture: f64) -> Vec<f64> {
        if self.n_positions == 1 {
            return vec![0.0];
        }
        let step = 2.0 * open_aperture / (self.n_positions - 1) as f64;
        (0..self.n_positions)
            .map(|i| -open_aperture + step * i as f64)
            .collect()
    }
}

/// Radius around a sampled point that contains every point any of its grid
/// hands can touch.
pub fn reach_radius(params: &HandParams) -> f64 {
    std::f64::consts::SQRT_2 * params.open_aperture + params.body_radius()
}

/// Hand rotation for orientation `phi` about the frame axis. At `phi = 0`
/// the hand approaches against the surface normal.
pub fn hand_rotation(frame: &DarbouxFrame, phi: f64) -> Matrix3<f64> {
    let approach0 = -frame.normal;
    let closing0 = frame.normal.cross(&frame.axis);
    let (s, c) = phi.sin_cos();
    let approach = approach0 * c + closing0 * s;
    let closing = -approach0 * s + closing0 * c;
    Matrix3::from_columns(&[approach, closing, frame.axis])
}

/// Grid search over `(phi, x)`; every emitted hand is collision-free with
/// respect to `nbhd` and has a non-empty closing slab.
pub fn grid_search(
    frame: &DarbouxFrame,
    nbhd: &[Vector3<f64>],
    params: &HandParams,
    cfg: &SamplerConfig,
) -> Vec<HandHypothesis> {
    grid_search_indexed(frame, nbhd, params, cfg, 0)
}

fn grid_search_indexed(
    frame: &DarbouxFrame,
    nbhd: &[Vector3<f64>],
    params: &HandParams,
    cfg: &SamplerConfig,
    source_point: usize,
) -> Vec<HandHypothesis> {
    let p = frame.origin;
    let half_t = params.finger_thickness / 2.0;
    let half_slab = (params.slab_thickness() / 2.0).min(half_t);
    let half_l = params.finger_length / 2.0;
    let half_d = params.open_aperture / 2.0;
    // Only points inside the hand's thickness can touch it; the axis is the
    // same for every grid cell.
    let slice: Vec<Vector3<f64>> = nbhd
        .iter()
        .filter(|q| (*q - p).dot(&frame.axis).abs() <= half_t + PUSH_BACKOFF)
        .copied()
        .collect();

    let y_start = -params.open_aperture;
    let y_end = params.open_aperture;
    let xs = cfg.positions(params.open_aperture);
    let mut out = Vec::new();
    let mut local = Vec::with_capacity(slice.len());
    for (pi, phi) in cfg.orientations().into_iter().enumerate() {
        let rot = hand_rotation(frame, phi);
        local.clear();
        local.extend(slice.iter().map(|q| rot.tr_mul(&(q - p))));
        for (xi, &x) in xs.iter().enumerate() {
            let Some(y) = push(params, &local, x, y_start, y_end) else {
                continue;
            };
            // Shrunk by the backoff so re-evaluation in world coordinates agrees.
            let has_slab_point = local.iter().any(|l| {
                (l.x - y).abs() <= half_l - PUSH_BACKOFF
                    && (l.y - x).abs() < half_d - PUSH_BACKOFF
                    && l.z.abs() <= half_slab - PUSH_BACKOFF
            });
            if !has_slab_point {
                continue;
            }
            out.push(HandHypothesis {
                pose: HandPose {
                    rotation: rot,
                    position: p + rot.column(1) * x + rot.column(0) * y,
                },
                params: *params,
                source_point,
                grid_cell: (pi, xi),
                pushed_offset: y,
            });
        }
    }
    out
}

/// Pushes the hand from `y_start` along the approach axis until the body
/// would touch a point. Returns `None` if the start pose already collides.
fn push(params: &HandParams, local: &[Vector3<f64>], x: f64, y_start: f64, y_end: f64) -> Option<f64> {
    let mut first_contact = f64::INFINITY;
    for l in local {
        let shifted = Vector3::new(l.x, l.y - x, l.z);
        if let Some((a, b)) = body_offset_interval(params, &shifted) {
            let (a, b) = (a - PUSH_BACKOFF, b + PUSH_BACKOFF);
            if a <= y_start && y_start <= b {
                return None;
            }
            if a > y_start {
                first_contact = first_contact.min(a);
            }
        }
    }
    Some(first_contact.min(y_end))
}

/// Draws `n_samples` points (with replacement) and runs the grid search
/// around each. Output order follows the sample index.
pub fn sample_hands(c: &PointCloud, params: &HandParams, cfg: &SamplerConfig) -> Result<Vec<HandHypothesis>> {
    let idx = c.index();
    sample_hands_with_index(c, &idx, params, cfg)
}

pub fn sample_hands_with_index(
    c: &PointCloud,
    idx: &NeighborIndex,
    params: &HandParams,
    cfg: &SamplerConfig,
) -> Result<Vec<HandHypothesis>> {
    let all: Vec<usize> = (0..c.len()).collect();
    sample_hands_among(c, idx, &all, params, cfg)
}

/// Like [`sample_hands_with_index`], but draws sample points only from
/// `candidates`. The whole cloud still counts for collisions.
pub fn sample_hands_among(
    c: &PointCloud,
    idx: &NeighborIndex,
    candidates: &[usize],
    params: &HandParams,
    cfg: &SamplerConfig,
) -> Result<Vec<HandHypothesis>> {
    if c.is_empty() || candidates.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if let Some(&bad) = candidates.iter().find(|&&i| i >= c.len()) {
        return Err(Error::invalid(format!("candidate index {bad} out of range")));
    }
    params.validate()?;
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let samples: Vec<usize> = (0..cfg.n_samples)
        .map(|_| candidates[rng.random_range(0..candidates.len())])
        .collect();
    let reach = reach_radius(params).max(cfg.ball_radius);

    let per_sample: Vec<Vec<HandHypothesis>> = samples
        .par_iter()
        .map(|&i| {
            let Ok(frame) = frame_at(c, idx, i, cfg.ball_radius) else {
                return Vec::new();
            };
            let nbhd: Vec<Vector3<f64>> = idx
                .radius_neighbors(&c.points[i], reach)
                .into_iter()
                .map(|j| c.points[j])
                .collect();
            grid_search_indexed(&frame, &nbhd, params, cfg, i)
        })
        .collect();
    Ok(per_sample.into_iter().flatten().collect())
}

/// Independent check of the sampling constraints against a point set.
pub fn verify_hand(h: &HandHypothesis, pts: &[Vector3<f64>]) -> bool {
    !body_collides(h, pts) && !closing_plane_points(h, pts, h.params.slab_thickness()).is_empty()
}
