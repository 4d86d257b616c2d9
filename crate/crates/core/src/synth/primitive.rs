use nalgebra::{Isometry3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::gjk::Support;

/// Solid primitive in its local frame. Cylinders run along local z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Shape {
    /// Full extents along local x, y, z.
    Box { size: [f64; 3] },
    Cylinder { radius: f64, length: f64 },
    Sphere { radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub pose: Isometry3<f64>,
}

/// Entry and exit of a line through a solid, with outward normals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Span {
    pub t_in: f64,
    pub t_out: f64,
    pub n_in: Vector3<f64>,
    pub n_out: Vector3<f64>,
}

impl Primitive {
    pub fn new(shape: Shape, pose: Isometry3<f64>) -> Self {
        Self { shape, pose }
    }

    pub fn center(&self) -> Vector3<f64> {
        self.pose.translation.vector
    }

    fn to_local(self, p: &Vector3<f64>) -> Vector3<f64> {
        self.pose.inverse_transform_point(&Point3::from(*p)).coords
    }

    /// Radius of a ball around `center()` containing the solid.
    pub fn bounding_radius(&self) -> f64 {
        match self.shape {
            Shape::Box { size } => Vector3::from(size).norm() / 2.0,
            Shape::Cylinder { radius, length } => (radius * radius + length * length / 4.0).sqrt(),
            Shape::Sphere { radius } => radius,
        }
    }

    /// Lowest world z of the solid.
    pub fn min_z(&self) -> f64 {
        self.support(&-Vector3::z()).z
    }

    /// Signed surface residual: zero on the surface, negative inside.
    /// Equals the Euclidean distance for points outside near a face.
    pub fn surface_residual(&self, p: &Vector3<f64>) -> f64 {
        let x = self.to_local(p);
        match self.shape {
            Shape::Box { size } => {
                let h = Vector3::from(size) / 2.0;
                (x.abs() - h).max()
            }
            Shape::Cylinder { radius, length } => {
                let radial = (x.x * x.x + x.y * x.y).sqrt() - radius;
                radial.max(x.z.abs() - length / 2.0)
            }
            Shape::Sphere { radius } => x.norm() - radius,
        }
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        self.surface_residual(p) <= 0.0
    }

    /// Intersection of the line `o + t d` with the solid.
    pub fn span(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<Span> {
        let lo = self.to_local(o);
        let ld = self.pose.rotation.inverse_transform_vector(d);
        let (t_in, t_out, n_in, n_out) = match self.shape {
            Shape::Box { size } => box_span(&lo, &ld, &(Vector3::from(size) / 2.0))?,
            Shape::Sphere { radius } => sphere_span(&lo, &ld, radius)?,
            Shape::Cylinder { radius, length } => cylinder_span(&lo, &ld, radius, length / 2.0)?,
        };
        Some(Span {
            t_in,
            t_out,
            n_in: self.pose.rotation * n_in,
            n_out: self.pose.rotation * n_out,
        })
    }
}

impl Support for Primitive {
    fn support(&self, d: &Vector3<f64>) -> Vector3<f64> {
        let ld = self.pose.rotation.inverse_transform_vector(d);
        let local = match self.shape {
            Shape::Box { size } => Vector3::new(
                sign(ld.x) * size[0] / 2.0,
                sign(ld.y) * size[1] / 2.0,
                sign(ld.z) * size[2] / 2.0,
            ),
            Shape::Sphere { radius } => {
                let n = ld.norm();
                if n > 0.0 {
                    ld * (radius / n)
                } else {
                    Vector3::new(radius, 0.0, 0.0)
                }
            }
            Shape::Cylinder { radius, length } => {
                let r = (ld.x * ld.x + ld.y * ld.y).sqrt();
                let (x, y) = if r > 0.0 {
                    (ld.x * radius / r, ld.y * radius / r)
                } else {
                    (radius, 0.0)
                };
                Vector3::new(x, y, sign(ld.z) * length / 2.0)
            }
        };
        (self.pose * Point3::from(local)).coords
    }

    fn center(&self) -> Vector3<f64> {
        self.pose.translation.vector
    }
}

fn sign(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

type Interval = (f64, f64, Vector3<f64>, Vector3<f64>);

fn box_span(o: &Vector3<f64>, d: &Vector3<f64>, h: &Vector3<f64>) -> Option<Interval> {
    let mut t_in = f64::NEG_INFINITY;
    let mut t_out = f64::INFINITY;
    let mut n_in = Vector3::zeros();
    let mut n_out = Vector3::zeros();
    for i in 0..3 {
        if d[i] == 0.0 {
            if o[i].abs() > h[i] {
                return None;
            }
            continue;
        }
        let mut t1 = (-h[i] - o[i]) / d[i];
        let mut t2 = (h[i] - o[i]) / d[i];
        let mut s1 = -1.0;
        if t1 > t2 {
            std::mem::swap(&mut t1, &mut t2);
            s1 = 1.0;
        }
        if t1 > t_in {
            t_in = t1;
            n_in = Vector3::zeros();
            n_in[i] = s1;
        }
        if t2 < t_out {
            t_out = t2;
            n_out = Vector3::zeros();
            n_out[i] = -s1;
        }
    }
    (t_in <= t_out).then_some((t_in, t_out, n_in, n_out))
}

fn sphere_span(o: &Vector3<f64>, d: &Vector3<f64>, r: f64) -> Option<Interval> {
    let a = d.norm_squared();
    let b = o.dot(d);
    let c = o.norm_squared() - r * r;
    let disc = b * b - a * c;
    if a == 0.0 || disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    // Numerically stable roots.
    let q = -(b + s.copysign(b));
    let (mut t1, mut t2) = if q != 0.0 { (q / a, c / q) } else { (0.0, 0.0) };
    if t1 > t2 {
        std::mem::swap(&mut t1, &mut t2);
    }
    let n1 = (o + d * t1) / r;
    let n2 = (o + d * t2) / r;
    Some((t1, t2, n1, n2))
}

fn cylinder_span(o: &Vector3<f64>, d: &Vector3<f64>, r: f64, hl: f64) -> Option<Interval> {
    // Radial slab.
    let a = d.x * d.x + d.y * d.y;
    let (mut t_in, mut t_out, mut n_in, mut n_out);
    if a == 0.0 {
        if o.x * o.x + o.y * o.y > r * r {
            return None;
        }
        t_in = f64::NEG_INFINITY;
        t_out = f64::INFINITY;
        n_in = Vector3::zeros();
        n_out = Vector3::zeros();
    } else {
        let b = o.x * d.x + o.y * d.y;
        let c = o.x * o.x + o.y * o.y - r * r;
        let disc = b * b - a * c;
        if disc < 0.0 {
            return None;
        }
        let s = disc.sqrt();
        let q = -(b + s.copysign(b));
        let (mut t1, mut t2) = if q != 0.0 { (q / a, c / q) } else { (0.0, 0.0) };
        if t1 > t2 {
            std::mem::swap(&mut t1, &mut t2);
        }
        t_in = t1;
        t_out = t2;
        let radial = |t: f64| {
            let p = o + d * t;
            Vector3::new(p.x, p.y, 0.0) / r
        };
        n_in = radial(t1);
        n_out = radial(t2);
    }
    // Caps.
    if d.z == 0.0 {
        if o.z.abs() > hl {
            return None;
        }
    } else {
        let mut t1 = (-hl - o.z) / d.z;
        let mut t2 = (hl - o.z) / d.z;
        let mut s1 = -1.0;
        if t1 > t2 {
            std::mem::swap(&mut t1, &mut t2);
            s1 = 1.0;
        }
        if t1 > t_in {
            t_in = t1;
            n_in = Vector3::new(0.0, 0.0, s1);
        }
        if t2 < t_out {
            t_out = t2;
            n_out = Vector3::new(0.0, 0.0, -s1);
        }
    }
    (t_in <= t_out).then_some((t_in, t_out, n_in, n_out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Translation3, UnitQuaternion};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut impl Rng) -> Isometry3<f64> {
        Isometry3::from_parts(
            Translation3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)),
            UnitQuaternion::from_euler_angles(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)),
        )
    }

    fn shapes() -> [Shape; 3] {
        [
            Shape::Box { size: [0.05, 0.03, 0.08] },
            Shape::Cylinder { radius: 0.025, length: 0.1 },
            Shape::Sphere { radius: 0.03 },
        ]
    }

    #[test]
    fn span_endpoints_lie_on_surface_with_outward_normals() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut hits = 0;
        for shape in shapes() {
            for _ in 0..3000 {
                let prim = Primitive::new(shape, random_pose(&mut rng));
                let o = prim.center() + Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
                let target = prim.center() + Vector3::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05));
                let d = (target - o).normalize();
                let Some(s) = prim.span(&o, &d) else { continue };
                hits += 1;
                for (t, n) in [(s.t_in, s.n_in), (s.t_out, s.n_out)] {
                    let p = o + d * t;
                    assert!(prim.surface_residual(&p).abs() < 1e-12);
                    assert!((n.norm() - 1.0).abs() < 1e-9);
                    // Outward: stepping along the normal leaves the solid.
                    assert!(!prim.contains(&(p + n * 1e-6)));
                }
                assert!(prim.contains(&(o + d * (0.5 * (s.t_in + s.t_out)))));
                assert!(s.n_in.dot(&d) <= 1e-12 && s.n_out.dot(&d) >= -1e-12);
            }
        }
        assert!(hits > 1000);
    }

    #[test]
    fn support_is_extremal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for shape in shapes() {
            let prim = Primitive::new(shape, random_pose(&mut rng));
            for _ in 0..200 {
                let d = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                let s = prim.support(&d);
                assert!(prim.surface_residual(&s).abs() < 1e-12);
                // No sampled surface point goes further along d.
                for _ in 0..50 {
                    let o = prim.center();
                    let dir = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                    if let Some(sp) = prim.span(&o, &dir) {
                        let q = o + dir * sp.t_out;
                        assert!(q.dot(&d) <= s.dot(&d) + 1e-12);
                    }
                }
            }
        }
    }
}
