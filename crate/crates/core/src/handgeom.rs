//! Parallel-jaw hand model.
//!
//! Hand-local coordinates are `(u, v, w)` along the columns of the pose
//! rotation: `u` approach, `v` finger closing, `w` closing-plane normal. The
//! origin is the centroid of the closing region. With `L` finger length,
//! `W` finger width, `D` open aperture and `T` finger thickness:
//!
//! * closing region: `|u| <= L/2`, `|v| < D/2`, `|w| <= T/2`
//! * fingers: `|u| <= L/2`, `D/2 <= |v| <= D/2 + W`, `|w| <= T/2`
//! * back plate: `-L/2 - W <= u < -L/2`, `|v| <= D/2 + W`, `|w| <= T/2`
//!
//! The half-open faces make the three volumes pairwise disjoint.

use std::path::Path;

use nalgebra::{Isometry3, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HandParams {
    pub finger_length: f64,
    pub finger_width: f64,
    pub open_aperture: f64,
    pub closed_aperture: f64,
    pub finger_thickness: f64,
    /// Thickness of the closing-plane slab; defaults to the finger thickness.
    pub slab: Option<f64>,
}

impl Default for HandParams {
    fn default() -> Self {
        Self {
            finger_length: 0.06,
            finger_width: 0.01,
            open_aperture: 0.07,
            closed_aperture: 0.03,
            finger_thickness: 0.01,
            slab: None,
        }
    }
}

impl HandParams {
    pub fn validate(&self) -> Result<()> {
        let vals = [
            ("finger_length", self.finger_length),
            ("finger_width", self.finger_width),
            ("open_aperture", self.open_aperture),
            ("closed_aperture", self.closed_aperture),
            ("finger_thickness", self.finger_thickness),
            ("slab", self.slab_thickness()),
        ];
        for (name, v) in vals {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.closed_aperture >= self.open_aperture {
            return Err(Error::invalid("closed_aperture must be below open_aperture"));
        }
        Ok(())
    }

    pub fn slab_thickness(&self) -> f64 {
        self.slab.unwrap_or(self.finger_thickness)
    }

    /// Parses a JSON object or `key=value` lines.
    pub fn parse(text: &str) -> Result<Self> {
        let t = text.trim_start();
        let params: HandParams = if t.starts_with('{') {
            serde_json::from_str(t)?
        } else {
            let mut p = HandParams::default();
            for (i, line) in text.lines().enumerate() {
                let line = line.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| Error::invalid(format!("line {}: expected key=value", i + 1)))?;
                let v: f64 = v
                    .trim()
                    .parse()
                    .map_err(|_| Error::invalid(format!("line {}: bad number", i + 1)))?;
                let k = k.trim();
                match k {
                    "finger_length" => p.finger_length = v,
                    "finger_width" => p.finger_width = v,
                    "open_aperture" => p.open_aperture = v,
                    "closed_aperture" => p.closed_aperture = v,
                    "finger_thickness" => p.finger_thickness = v,
                    "slab" => p.slab = Some(v),
                    _ => return Err(Error::invalid(format!("unknown hand parameter {k}"))),
                }
            }
            p
        };
        params.validate()?;
        Ok(params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Radius of the sphere around the reference point enclosing the closing region.
    pub fn closing_region_radius(&self) -> f64 {
        let h = Vector3::new(
            self.finger_length / 2.0,
            self.open_aperture / 2.0,
            self.finger_thickness / 2.0,
        );
        h.norm()
    }

    /// Radius of the sphere around the reference point enclosing the whole hand.
    pub fn body_radius(&self) -> f64 {
        let h = Vector3::new(
            self.finger_length / 2.0 + self.finger_width,
            self.open_aperture / 2.0 + self.finger_width,
            self.finger_thickness / 2.0,
        );
        h.norm()
    }
}

/// Hand orientation and closing-region reference point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandPose {
    /// Columns: approach, closing direction, closing-plane normal.
    pub rotation: Matrix3<f64>,
    pub position: Vector3<f64>,
}

impl HandPose {
    pub fn approach(&self) -> Vector3<f64> {
        self.rotation.column(0).into_owned()
    }

    pub fn closing(&self) -> Vector3<f64> {
        self.rotation.column(1).into_owned()
    }

    pub fn axis(&self) -> Vector3<f64> {
        self.rotation.column(2).into_owned()
    }

    /// Coordinates of `q` in the hand frame.
    #[inline]
    pub fn to_local(&self, q: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.tr_mul(&(q - self.position))
    }

    pub fn transformed(&self, iso: &Isometry3<f64>) -> HandPose {
        HandPose {
            rotation: iso.rotation.to_rotation_matrix().matrix() * self.rotation,
            position: (iso * nalgebra::Point3::from(self.position)).coords,
        }
    }

    pub fn is_orthonormal(&self, tol: f64) -> bool {
        let r = &self.rotation;
        (r.transpose() * r - Matrix3::identity()).abs().max() <= tol
            && (r.determinant() - 1.0).abs() <= tol
    }
}

/// One sampled hand configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandHypothesis {
    pub pose: HandPose,
    pub params: HandParams,
    /// Index of the sampled point in the cloud the sampler ran on.
    pub source_point: usize,
    /// `(orientation index, position index)`.
    pub grid_cell: (usize, usize),
    pub pushed_offset: f64,
}

impl HandHypothesis {
    pub fn closing_region_contains(&self, q: &Vector3<f64>) -> bool {
        region_contains_local(&self.params, &self.pose.to_local(q))
    }

    pub fn body_contains(&self, q: &Vector3<f64>) -> bool {
        body_contains_local(&self.params, &self.pose.to_local(q))
    }

    pub fn transformed(&self, iso: &Isometry3<f64>) -> HandHypothesis {
        HandHypothesis {
            pose: self.pose.transformed(iso),
            ..*self
        }
    }
}

#[inline]
pub fn region_contains_local(p: &HandParams, l: &Vector3<f64>) -> bool {
    l.x.abs() <= p.finger_length / 2.0
        && l.y.abs() < p.open_aperture / 2.0
        && l.z.abs() <= p.finger_thickness / 2.0
}

#[inline]
pub fn finger_contains_local(p: &HandParams, l: &Vector3<f64>) -> bool {
    let half_d = p.open_aperture / 2.0;
    l.x.abs() <= p.finger_length / 2.0
        && l.y.abs() >= half_d
        && l.y.abs() <= half_d + p.finger_width
        && l.z.abs() <= p.finger_thickness / 2.0
}

#[inline]
pub fn back_plate_contains_local(p: &HandParams, l: &Vector3<f64>) -> bool {
    let half_l = p.finger_length / 2.0;
    l.x >= -half_l - p.finger_width
        && l.x < -half_l
        && l.y.abs() <= p.open_aperture / 2.0 + p.finger_width
        && l.z.abs() <= p.finger_thickness / 2.0
}

#[inline]
pub fn body_contains_local(p: &HandParams, l: &Vector3<f64>) -> bool {
    finger_contains_local(p, l) || back_plate_contains_local(p, l)
}

/// Range of approach offsets `y` for which a point with local coordinates
/// `l` (taken at offset 0) lies inside the body. Moving the hand by `y` along
/// the approach axis maps `u` to `u - y`. The lower end of the back-plate-only
/// range is open; the returned pair is the closure.
pub fn body_offset_interval(p: &HandParams, l: &Vector3<f64>) -> Option<(f64, f64)> {
    let half_l = p.finger_length / 2.0;
    let half_d = p.open_aperture / 2.0;
    if l.z.abs() > p.finger_thickness / 2.0 || l.y.abs() > half_d + p.finger_width {
        return None;
    }
    if l.y.abs() >= half_d {
        Some((l.x - half_l, l.x + half_l + p.finger_width))
    } else {
        Some((l.x + half_l, l.x + half_l + p.finger_width))
    }
}

pub fn closing_region_contains(h: &HandHypothesis, q: &Vector3<f64>) -> bool {
    h.closing_region_contains(q)
}

/// True iff some point lies inside the fingers or the back plate.
pub fn body_collides(h: &HandHypothesis, pts: &[Vector3<f64>]) -> bool {
    pts.iter().any(|q| h.body_contains(q))
}

/// Indices of the points inside the closing region whose offset from the
/// closing plane is at most `slab / 2`.
pub fn closing_plane_points(h: &HandHypothesis, pts: &[Vector3<f64>], slab: f64) -> Vec<usize> {
    let half = slab / 2.0;
    pts.iter()
        .enumerate()
        .filter(|(_, q)| {
            let l = h.pose.to_local(q);
            region_contains_local(&h.params, &l) && l.z.abs() <= half
        })
        .map(|(i, _)| i)
        .collect()
}

/// JSON Lines record for a hypothesis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HypothesisRecord {
    /// Row-major rotation.
    pub rotation: [f64; 9],
    pub position: [f64; 3],
    pub params: HandParams,
    pub source_point: usize,
    pub grid_cell: [usize; 2],
    pub pushed_offset: f64,
}

impl From<&HandHypothesis> for HypothesisRecord {
    fn from(h: &HandHypothesis) -> Self {
        let r = &h.pose.rotation;
        let mut rotation = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                rotation[i * 3 + j] = r[(i, j)];
            }
        }
        Self {
            rotation,
            position: [h.pose.position.x, h.pose.position.y, h.pose.position.z],
            params: h.params,
            source_point: h.source_point,
            grid_cell: [h.grid_cell.0, h.grid_cell.1],
            pushed_offset: h.pushed_offset,
        }
    }
}

impl From<&HypothesisRecord> for HandHypothesis {
    fn from(r: &HypothesisRecord) -> Self {
        HandHypothesis {
            pose: HandPose {
                rotation: Matrix3::from_row_slice(&r.rotation),
                position: Vector3::from(r.position),
            },
            params: r.params,
            source_point: r.source_point,
            grid_cell: (r.grid_cell[0], r.grid_cell[1]),
            pushed_offset: r.pushed_offset,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Translation3, UnitQuaternion};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rotation(rng: &mut impl Rng) -> Rotation3<f64> {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        Rotation3::new(axis.normalize() * rng.random_range(0.0..std::f64::consts::PI))
    }

    fn random_hand(rng: &mut impl Rng) -> HandHypothesis {
        HandHypothesis {
            pose: HandPose {
                rotation: *random_rotation(rng).matrix(),
                position: Vector3::new(
                    rng.random_range(-0.1..0.1),
                    rng.random_range(-0.1..0.1),
                    rng.random_range(-0.1..0.1),
                ),
            },
            params: HandParams::default(),
            source_point: 0,
            grid_cell: (0, 0),
            pushed_offset: 0.0,
        }
    }

    /// Closed/open box membership written as explicit half-space tests on
    /// the world-frame face planes.
    fn halfspace_box(
        h: &HandHypothesis,
        q: &Vector3<f64>,
        lo: [f64; 3],
        hi: [f64; 3],
        open_hi: [bool; 3],
        open_lo: [bool; 3],
    ) -> bool {
        let r = &h.pose.rotation;
        (0..3).all(|k| {
            let axis = r.column(k);
            let lo_plane = axis.dot(&h.pose.position) + lo[k];
            let hi_plane = axis.dot(&h.pose.position) + hi[k];
            let s = axis.dot(q);
            let above = if open_lo[k] { s > lo_plane } else { s >= lo_plane };
            let below = if open_hi[k] { s < hi_plane } else { s <= hi_plane };
            above && below
        })
    }

    #[test]
    fn reference_point_inside_region() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = random_hand(&mut rng);
        assert!(closing_region_contains(&h, &h.pose.position));
        let off = h.pose.position + h.pose.axis() * h.params.finger_thickness;
        assert!(!closing_region_contains(&h, &off));
    }

    #[test]
    fn region_matches_halfspace_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = HandParams::default();
        let (l, d, t) = (p.finger_length / 2.0, p.open_aperture / 2.0, p.finger_thickness / 2.0);
        let mut inside = 0;
        for _ in 0..10_000 {
            let h = random_hand(&mut rng);
            let q = h.pose.position
                + h.pose.rotation
                    * Vector3::new(
                        rng.random_range(-0.05..0.05),
                        rng.random_range(-0.05..0.05),
                        rng.random_range(-0.01..0.01),
                    );
            // The v-extent is open on both sides.
            let oracle = halfspace_box(&h, &q, [-l, -d, -t], [l, d, t], [false, true, false], [false, true, false]);
            assert_eq!(closing_region_contains(&h, &q), oracle);
            inside += oracle as usize;
        }
        assert!(inside > 1000);
    }

    #[test]
    fn body_matches_box_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = HandParams::default();
        let (l, d, t, w) = (p.finger_length / 2.0, p.open_aperture / 2.0, p.finger_thickness / 2.0, p.finger_width);
        let mut hits = 0;
        for _ in 0..10_000 {
            let h = random_hand(&mut rng);
            let q = h.pose.position
                + h.pose.rotation
                    * Vector3::new(
                        rng.random_range(-0.06..0.05),
                        rng.random_range(-0.06..0.06),
                        rng.random_range(-0.01..0.01),
                    );
            let f1 = halfspace_box(&h, &q, [-l, d, -t], [l, d + w, t], [false; 3], [false; 3]);
            let f2 = halfspace_box(&h, &q, [-l, -d - w, -t], [l, -d, t], [false; 3], [false; 3]);
            let back = halfspace_box(&h, &q, [-l - w, -d - w, -t], [-l, d + w, t], [true, false, false], [false; 3]);
            let oracle = f1 || f2 || back;
            assert_eq!(body_collides(&h, &[q]), oracle);
            hits += oracle as usize;
        }
        assert!(hits > 500);
    }

    #[test]
    fn body_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = random_hand(&mut rng);
        assert!(!body_collides(&h, &[]));
        let p = h.params;
        let finger_center = h.pose.position + h.pose.closing() * (p.open_aperture / 2.0 + p.finger_width / 2.0);
        assert!(body_collides(&h, &[finger_center]));
    }

    #[test]
    fn volumes_are_disjoint() {
        let p = HandParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let faces = [-0.04, -0.035, -0.03, -0.045, 0.03, 0.035, 0.045, 0.0, -0.005, 0.005];
        for _ in 0..20_000 {
            let mut pick = |lo: f64, hi: f64| {
                if rng.random_bool(0.3) {
                    faces[rng.random_range(0..faces.len())]
                } else {
                    rng.random_range(lo..hi)
                }
            };
            let l = Vector3::new(pick(-0.05, 0.05), pick(-0.05, 0.05), pick(-0.01, 0.01));
            let n = region_contains_local(&p, &l) as u8
                + finger_contains_local(&p, &l) as u8
                + back_plate_contains_local(&p, &l) as u8;
            assert!(n <= 1, "{l:?}");
        }
    }

    #[test]
    fn slab_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = random_hand(&mut rng);
        let slab = h.params.slab_thickness();
        let on_plane = h.pose.position + h.pose.approach() * 0.01;
        let off = on_plane + h.pose.axis() * slab;
        assert_eq!(closing_plane_points(&h, &[on_plane, off], slab / 2.0), vec![0]);
    }

    #[test]
    fn slab_points_are_region_points_and_match_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..200 {
            let h = random_hand(&mut rng);
            let pts: Vec<Vector3<f64>> = (0..200)
                .map(|_| {
                    h.pose.position
                        + Vector3::new(
                            rng.random_range(-0.05..0.05),
                            rng.random_range(-0.05..0.05),
                            rng.random_range(-0.05..0.05),
                        )
                })
                .collect();
            let slab = rng.random_range(0.001..0.01);
            let got = closing_plane_points(&h, &pts, slab);
            let scan: Vec<usize> = (0..pts.len())
                .filter(|&i| {
                    let d = pts[i] - h.pose.position;
                    closing_region_contains(&h, &pts[i]) && d.dot(&h.pose.axis()).abs() <= slab / 2.0
                })
                .collect();
            assert_eq!(got, scan);
            assert!(got.iter().all(|&i| closing_region_contains(&h, &pts[i])));
        }
    }

    #[test]
    fn predicates_are_rigidly_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..2000 {
            let h = random_hand(&mut rng);
            let q = h.pose.position
                + Vector3::new(
                    rng.random_range(-0.05..0.05),
                    rng.random_range(-0.05..0.05),
                    rng.random_range(-0.01..0.01),
                );
            let iso = Isometry3::from_parts(
                Translation3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
                UnitQuaternion::from_rotation_matrix(&random_rotation(&mut rng)),
            );
            let h2 = h.transformed(&iso);
            let q2 = iso * nalgebra::Point3::from(q);
            let (l1, l2) = (h.pose.to_local(&q), h2.pose.to_local(&q2.coords));
            assert!((l1 - l2).norm() < 1e-9);
            // Skip points within rounding distance of a face.
            let near_face = |l: &Vector3<f64>| {
                let p = &h.params;
                [
                    l.x.abs() - p.finger_length / 2.0,
                    l.x + p.finger_length / 2.0 + p.finger_width,
                    l.y.abs() - p.open_aperture / 2.0,
                    l.y.abs() - p.open_aperture / 2.0 - p.finger_width,
                    l.z.abs() - p.finger_thickness / 2.0,
                ]
                .iter()
                .any(|d| d.abs() < 1e-9)
            };
            if near_face(&l1) {
                continue;
            }
            assert_eq!(h.closing_region_contains(&q), h2.closing_region_contains(&q2.coords));
            assert_eq!(h.body_contains(&q), h2.body_contains(&q2.coords));
        }
    }

    #[test]
    fn offset_interval_agrees_with_membership() {
        let p = HandParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..5000 {
            let l = Vector3::new(
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.05..0.05),
                rng.random_range(-0.008..0.008),
            );
            let y = rng.random_range(-0.1..0.1);
            let moved = Vector3::new(l.x - y, l.y, l.z);
            let inside = body_contains_local(&p, &moved);
            let by_interval = match body_offset_interval(&p, &l) {
                Some((a, b)) => y >= a && y <= b,
                None => false,
            };
            assert_eq!(inside, by_interval);
        }
    }

    #[test]
    fn params_parse_formats() {
        let p = HandParams::parse("finger_length = 0.05\n# comment\nslab=0.004\n").unwrap();
        assert_eq!(p.finger_length, 0.05);
        assert_eq!(p.slab_thickness(), 0.004);
        let j = HandParams::parse(r#"{"open_aperture": 0.08}"#).unwrap();
        assert_eq!(j.open_aperture, 0.08);
        assert_eq!(j.closed_aperture, 0.03);
        assert!(HandParams::parse("closed_aperture=0.09").is_err());
        assert!(HandParams::parse("finger_width=-1").is_err());
        assert!(HandParams::parse("bogus=1").is_err());
    }

    #[test]
    fn record_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let h = random_hand(&mut rng);
        let rec = HypothesisRecord::from(&h);
        let json = serde_json::to_string(&rec).unwrap();
        let back: HypothesisRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(HandHypothesis::from(&back), h);
    }
}
