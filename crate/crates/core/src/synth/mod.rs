//! Synthetic primitive scenes, virtual depth cameras and the analytic
//! antipodal oracle.

mod camera;
mod corpus;
pub mod gjk;
pub mod store;
mod oracle;
mod primitive;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

pub use camera::{render_view, VirtualCamera};
pub use corpus::{capture, make_corpus, make_corpus_with, place_camera_pair, CorpusOptions, CorpusScene, Preset, ShapeKind};
pub use gjk::{intersects, OrientedBox, Support};
pub use oracle::{hand_boxes, oracle_antipodal, oracle_antipodal_with, CONTACT_TOLERANCE, DEFAULT_FRICTION};
pub use primitive::{Primitive, Shape, Span};

/// Objects resting on an optional table plane `z = table_height`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub primitives: Vec<Primitive>,
    pub table_height: Option<f64>,
}

/// Nearest intersection of a ray with a scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub t: f64,
    /// Index into `primitives`; `None` for the table.
    pub primitive: Option<usize>,
}

impl Scene {
    /// First surface hit along `o + t d` with `t > 0`.
    pub fn raycast(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<RayHit> {
        let mut best: Option<RayHit> = None;
        let mut consider = |t: f64, primitive: Option<usize>| {
            if t > 0.0 && best.is_none_or(|b| t < b.t) {
                best = Some(RayHit { t, primitive });
            }
        };
        for (i, p) in self.primitives.iter().enumerate() {
            if let Some(s) = p.span(o, d) {
                consider(s.t_in, Some(i));
            }
        }
        if let Some(h) = self.table_height {
            if d.z < 0.0 && o.z > h {
                consider((h - o.z) / d.z, None);
            }
        }
        best
    }

    /// Surface residual of a point against the surface it was sampled from.
    pub fn surface_residual(&self, p: &Vector3<f64>, hit: &RayHit) -> f64 {
        match hit.primitive {
            Some(i) => self.primitives[i].surface_residual(p),
            None => p.z - self.table_height.unwrap_or(0.0),
        }
    }
}
