use nalgebra::{Rotation3, Vector3};

use super::gjk::{intersects, OrientedBox, Support};
use super::Scene;
use crate::handgeom::HandHypothesis;

pub const DEFAULT_FRICTION: f64 = 0.3;

/// Penetration depth below which the hand body merely touches a solid.
/// The sampler pushes the hand until it meets observed points, so contact
/// at the level of sensor noise is expected.
pub const CONTACT_TOLERANCE: f64 = 1e-3;

/// Closing lines along the approach and hand axes.
const LINES_U: usize = 31;
const LINES_W: usize = 7;
/// Two contacts within this distance of the extremal value are tied.
const EXTREMAL_TOL: f64 = 1e-9;

/// The two fingers and the back plate as oriented boxes.
pub fn hand_boxes(h: &HandHypothesis) -> [OrientedBox; 3] {
    let p = &h.params;
    let rotation = Rotation3::from_matrix_unchecked(h.pose.rotation);
    let (a, f) = (h.pose.approach(), h.pose.closing());
    let finger_half = Vector3::new(p.finger_length / 2.0, p.finger_width / 2.0, p.finger_thickness / 2.0);
    let off = p.open_aperture / 2.0 + p.finger_width / 2.0;
    let finger = |s: f64| OrientedBox {
        center: h.pose.position + f * (s * off),
        rotation,
        half: finger_half,
    };
    let plate = OrientedBox {
        center: h.pose.position - a * (p.finger_length / 2.0 + p.finger_width / 2.0),
        rotation,
        half: Vector3::new(p.finger_width / 2.0, p.open_aperture / 2.0 + p.finger_width, p.finger_thickness / 2.0),
    };
    [finger(1.0), finger(-1.0), plate]
}

fn body_hits_scene(s: &Scene, h: &HandHypothesis, tol: f64) -> bool {
    let boxes = hand_boxes(h).map(|b| OrientedBox {
        half: b.half.map(|x| (x - tol).max(0.0)),
        ..b
    });
    for b in &boxes {
        if let Some(t) = s.table_height {
            if b.support(&-Vector3::z()).z <= t {
                return true;
            }
        }
        for prim in &s.primitives {
            let reach = b.half.norm() + prim.bounding_radius();
            if (b.center - prim.center()).norm() > reach {
                continue;
            }
            if intersects(b, prim) {
                return true;
            }
        }
    }
    false
}

/// Ground-truth antipodal test on an analytic scene.
///
/// The hand must not touch any solid. Closing lines parallel to the
/// closing direction are scanned across the closing region; the outermost
/// solid points along `+f` and `-f` are the first contacts of the two
/// fingers. The grasp holds when the contacts are at least the closed
/// aperture apart and the squeeze direction lies inside the friction cone
/// at one contact on each side.
pub fn oracle_antipodal(s: &Scene, h: &HandHypothesis, mu: f64) -> bool {
    oracle_antipodal_with(s, h, mu, CONTACT_TOLERANCE)
}

/// [`oracle_antipodal`] with an explicit contact tolerance; zero makes any
/// touch a collision.
pub fn oracle_antipodal_with(s: &Scene, h: &HandHypothesis, mu: f64, contact_tol: f64) -> bool {
    if body_hits_scene(s, h, contact_tol) {
        return false;
    }
    let p = &h.params;
    let (a, f, w_axis) = (h.pose.approach(), h.pose.closing(), h.pose.axis());
    let cos_cone = 1.0 / (1.0 + mu * mu).sqrt();
    let half_d = p.open_aperture / 2.0;
    let region_reach = p.closing_region_radius();

    let candidates: Vec<_> = s
        .primitives
        .iter()
        .filter(|prim| (prim.center() - h.pose.position).norm() <= region_reach + prim.bounding_radius())
        .collect();
    if candidates.is_empty() {
        return false;
    }

    // (extremal value, normal) for the +f and -f sides.
    let mut plus: Vec<(f64, Vector3<f64>)> = Vec::new();
    let mut minus: Vec<(f64, Vector3<f64>)> = Vec::new();
    for iu in 0..LINES_U {
        let u = -p.finger_length / 2.0 + p.finger_length * iu as f64 / (LINES_U - 1) as f64;
        for iw in 0..LINES_W {
            let w = -p.finger_thickness / 2.0 + p.finger_thickness * iw as f64 / (LINES_W - 1) as f64;
            let o = h.pose.position + a * u + w_axis * w;
            for prim in &candidates {
                let Some(sp) = prim.span(&o, &f) else { continue };
                if sp.t_out < -half_d || sp.t_in > half_d {
                    continue;
                }
                plus.push((sp.t_out.min(half_d), sp.n_out));
                minus.push((sp.t_in.max(-half_d), sp.n_in));
            }
        }
    }
    let Some(vmax) = plus.iter().map(|c| c.0).max_by(f64::total_cmp) else {
        return false;
    };
    let vmin = minus.iter().map(|c| c.0).min_by(f64::total_cmp).unwrap();
    if vmax - vmin < p.closed_aperture {
        return false;
    }
    let plus_ok = plus
        .iter()
        .any(|(v, n)| *v >= vmax - EXTREMAL_TOL && n.dot(&f) >= cos_cone);
    let minus_ok = minus
        .iter()
        .any(|(v, n)| *v <= vmin + EXTREMAL_TOL && n.dot(&-f) >= cos_cone);
    plus_ok && minus_ok
}
