use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gjk::{intersects, Support};
use super::{render_view, Primitive, Scene, Shape, VirtualCamera};
use crate::cloud::{Aabb, PointCloud};
use crate::error::{Error, Result};
use crate::seed::derive_indexed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    SingleObject,
    Clutter(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Box,
    Cylinder,
    Sphere,
}

/// Generation knobs shared by all presets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusOptions {
    pub shapes: Vec<ShapeKind>,
    /// Side of the square clutter footprint, meters.
    pub footprint: f64,
    /// Minimum gap kept between placed objects.
    pub clearance: f64,
    pub max_attempts: usize,
    pub width: usize,
    pub height: usize,
    pub fov_deg: f64,
    pub noise: f64,
    /// Horizontal camera distance from the scene center.
    pub camera_distance: f64,
    pub camera_height: f64,
    /// Angle between the two cameras, degrees.
    pub camera_separation_deg: f64,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        Self {
            shapes: vec![ShapeKind::Box, ShapeKind::Cylinder, ShapeKind::Sphere],
            footprint: 0.32,
            clearance: 0.004,
            max_attempts: 2000,
            width: 256,
            height: 192,
            fov_deg: 45.0,
            noise: 0.0005,
            camera_distance: 0.55,
            camera_height: 0.45,
            camera_separation_deg: 45.0,
        }
    }
}

/// A generated scene with its two cameras and rendered views.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusScene {
    pub scene: Scene,
    pub cameras: [VirtualCamera; 2],
    pub workspace: Aabb,
    #[serde(skip)]
    pub views: [PointCloud; 2],
}

/// Two cameras on the same side of the table, `separation` degrees apart.
pub fn place_camera_pair(center: Vector3<f64>, opts: &CorpusOptions) -> [VirtualCamera; 2] {
    let half = opts.camera_separation_deg.to_radians() / 2.0;
    let cam = |az: f64| VirtualCamera {
        origin: center
            + Vector3::new(
                opts.camera_distance * az.cos(),
                opts.camera_distance * az.sin(),
                opts.camera_height,
            ),
        look_at: center + Vector3::new(0.0, 0.0, 0.04),
        width: opts.width,
        height: opts.height,
        fov_deg: opts.fov_deg,
        max_range: 2.0,
        noise: opts.noise,
    };
    [cam(-FRAC_PI_2 - half), cam(-FRAC_PI_2 + half)]
}

fn random_shape(rng: &mut impl Rng, kinds: &[ShapeKind]) -> Shape {
    match kinds[rng.random_range(0..kinds.len())] {
        ShapeKind::Box => {
            let g = rng.random_range(0.035..0.062);
            let a = rng.random_range(0.04..0.11);
            let b = rng.random_range(0.05..0.12);
            Shape::Box { size: [g, a, b] }
        }
        ShapeKind::Cylinder => Shape::Cylinder {
            radius: rng.random_range(0.018..0.031),
            length: rng.random_range(0.06..0.15),
        },
        ShapeKind::Sphere => Shape::Sphere {
            radius: rng.random_range(0.02..0.033),
        },
    }
}

/// Pose resting on the table `z = 0` at `(x, y)` with a random face down.
fn resting_pose(rng: &mut impl Rng, shape: &Shape, x: f64, y: f64) -> Isometry3<f64> {
    let yaw = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), rng.random_range(-PI..PI));
    let (tilt, z) = match *shape {
        Shape::Box { size } => {
            // Pick which local axis points up.
            match rng.random_range(0..3) {
                0 => (UnitQuaternion::identity(), size[2] / 2.0),
                1 => (UnitQuaternion::from_axis_angle(&Vector3::x_axis(), FRAC_PI_2), size[1] / 2.0),
                _ => (UnitQuaternion::from_axis_angle(&Vector3::y_axis(), FRAC_PI_2), size[0] / 2.0),
            }
        }
        Shape::Cylinder { radius, length } => {
            if rng.random_bool(0.6) {
                (UnitQuaternion::identity(), length / 2.0)
            } else {
                (UnitQuaternion::from_axis_angle(&Vector3::x_axis(), FRAC_PI_2), radius)
            }
        }
        Shape::Sphere { radius } => (UnitQuaternion::identity(), radius),
    };
    Isometry3::from_parts(Translation3::new(x, y, z), yaw * tilt)
}

fn inflated(p: &Primitive, by: f64) -> Primitive {
    let shape = match p.shape {
        Shape::Box { size } => Shape::Box {
            size: [size[0] + 2.0 * by, size[1] + 2.0 * by, size[2] + 2.0 * by],
        },
        Shape::Cylinder { radius, length } => Shape::Cylinder {
            radius: radius + by,
            length: length + 2.0 * by,
        },
        Shape::Sphere { radius } => Shape::Sphere { radius: radius + by },
    };
    Primitive::new(shape, p.pose)
}

fn generate_scene(rng: &mut impl Rng, preset: Preset, opts: &CorpusOptions) -> Result<Scene> {
    let mut primitives: Vec<Primitive> = Vec::new();
    match preset {
        Preset::SingleObject => {
            let shape = random_shape(rng, &opts.shapes);
            let x = rng.random_range(-0.02..0.02);
            let y = rng.random_range(-0.02..0.02);
            primitives.push(Primitive::new(shape, resting_pose(rng, &shape, x, y)));
        }
        Preset::Clutter(k) => {
            let half = opts.footprint / 2.0;
            let mut attempts = 0;
            while primitives.len() < k {
                attempts += 1;
                if attempts > opts.max_attempts {
                    return Err(Error::PlacementFailed(opts.max_attempts));
                }
                let shape = random_shape(rng, &opts.shapes);
                let x = rng.random_range(-half..half);
                let y = rng.random_range(-half..half);
                let cand = Primitive::new(shape, resting_pose(rng, &shape, x, y));
                let inside = [Vector3::x(), -Vector3::x(), Vector3::y(), -Vector3::y()]
                    .iter()
                    .all(|d| cand.support(d).dot(d) <= half);
                if !inside {
                    continue;
                }
                let grown = inflated(&cand, opts.clearance);
                if primitives.iter().any(|p| intersects(&grown, p)) {
                    continue;
                }
                primitives.push(cand);
            }
        }
    }
    Ok(Scene {
        primitives,
        table_height: Some(0.0),
    })
}

/// Seeded corpus of scenes, each rendered by two cameras.
pub fn make_corpus(preset: Preset, count: usize, seed: u64) -> Result<Vec<CorpusScene>> {
    make_corpus_with(preset, count, seed, &CorpusOptions::default())
}

pub fn make_corpus_with(preset: Preset, count: usize, seed: u64, opts: &CorpusOptions) -> Result<Vec<CorpusScene>> {
    if opts.shapes.is_empty() {
        return Err(Error::invalid("corpus needs at least one shape kind"));
    }
    (0..count as u64)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_indexed(seed, "scene", i));
            let scene = generate_scene(&mut rng, preset, opts)?;
            capture(scene, opts, derive_indexed(seed, "render", i))
        })
        .collect()
}

/// Renders an existing scene with the standard camera pair.
pub fn capture(scene: Scene, opts: &CorpusOptions, seed: u64) -> Result<CorpusScene> {
    let center = Vector3::zeros();
    let cameras = place_camera_pair(center, opts);
    let margin = 0.1;
    let half = opts.footprint / 2.0 + margin;
    let workspace = Aabb::new(Vector3::new(-half, -half, -0.005), Vector3::new(half, half, 0.4))?;
    let v0 = render_view(&scene, &cameras[0], 0, seed)?;
    let v1 = render_view(&scene, &cameras[1], 1, seed.wrapping_add(1))?;
    Ok(CorpusScene {
        scene,
        cameras,
        workspace,
        views: [v0, v1],
    })
}
