//! Boolean GJK intersection test for convex solids given by support maps.

use nalgebra::{Rotation3, Vector3};

pub trait Support {
    /// Furthest point of the solid along `d`.
    fn support(&self, d: &Vector3<f64>) -> Vector3<f64>;
    /// Any interior point.
    fn center(&self) -> Vector3<f64>;
}

/// Oriented box, used for the hand's finger and back-plate volumes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox {
    pub center: Vector3<f64>,
    pub rotation: Rotation3<f64>,
    pub half: Vector3<f64>,
}

impl OrientedBox {
    pub fn corners(&self) -> [Vector3<f64>; 8] {
        let mut out = [Vector3::zeros(); 8];
        for (i, c) in out.iter_mut().enumerate() {
            let s = Vector3::new(
                if i & 1 == 0 { -1.0 } else { 1.0 },
                if i & 2 == 0 { -1.0 } else { 1.0 },
                if i & 4 == 0 { -1.0 } else { 1.0 },
            );
            *c = self.center + self.rotation * self.half.component_mul(&s);
        }
        out
    }
}

impl Support for OrientedBox {
    fn support(&self, d: &Vector3<f64>) -> Vector3<f64> {
        let ld = self.rotation.inverse_transform_vector(d);
        let s = ld.map(|c| if c >= 0.0 { 1.0 } else { -1.0 });
        self.center + self.rotation * self.half.component_mul(&s)
    }

    fn center(&self) -> Vector3<f64> {
        self.center
    }
}

const MAX_ITER: usize = 100;
const EPS: f64 = 1e-14;

/// True when the closed solids `a` and `b` share at least one point.
/// Touching counts as intersecting.
pub fn intersects(a: &impl Support, b: &impl Support) -> bool {
    let support = |d: &Vector3<f64>| a.support(d) - b.support(&-d);
    let mut d = a.center() - b.center();
    if d.norm_squared() < EPS * EPS {
        d = Vector3::x();
    }
    let mut simplex: Vec<Vector3<f64>> = vec![support(&d)];
    d = -simplex[0];
    for _ in 0..MAX_ITER {
        let scale = simplex.iter().map(|p| p.norm()).fold(1e-3, f64::max);
        if d.norm() <= EPS * scale {
            return true;
        }
        let p = support(&d);
        if p.dot(&d) < 0.0 {
            return false;
        }
        // No progress: the closest point of the difference is already found.
        if simplex.iter().any(|q| (q - p).norm_squared() <= (EPS * scale).powi(2)) {
            return closest_on_simplex(&simplex).norm() <= 1e-12 * scale;
        }
        simplex.push(p);
        let (reduced, closest) = reduce(&simplex);
        simplex = reduced;
        if simplex.len() == 4 {
            return true;
        }
        d = -closest;
    }
    closest_on_simplex(&simplex).norm() <= 1e-12
}

fn closest_on_simplex(s: &[Vector3<f64>]) -> Vector3<f64> {
    reduce(s).1
}

/// Closest point of the simplex to the origin and the minimal face carrying it.
/// A full tetrahedron is returned only when it contains the origin.
fn reduce(s: &[Vector3<f64>]) -> (Vec<Vector3<f64>>, Vector3<f64>) {
    match s.len() {
        1 => (s.to_vec(), s[0]),
        2 => segment(s[0], s[1]),
        3 => triangle(s[0], s[1], s[2]),
        _ => tetrahedron(s[0], s[1], s[2], s[3]),
    }
}

fn segment(a: Vector3<f64>, b: Vector3<f64>) -> (Vec<Vector3<f64>>, Vector3<f64>) {
    let ab = b - a;
    let denom = ab.norm_squared();
    if denom == 0.0 {
        return (vec![a], a);
    }
    let t = -a.dot(&ab) / denom;
    if t <= 0.0 {
        (vec![a], a)
    } else if t >= 1.0 {
        (vec![b], b)
    } else {
        (vec![a, b], a + ab * t)
    }
}

fn triangle(a: Vector3<f64>, b: Vector3<f64>, c: Vector3<f64>) -> (Vec<Vector3<f64>>, Vector3<f64>) {
    // Voronoi-region walk from Ericson, Real-Time Collision Detection 5.1.5.
    let ab = b - a;
    let ac = c - a;
    let ap = -a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (vec![a], a);
    }
    let bp = -b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (vec![b], b);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (vec![a, b], a + ab * v);
    }
    let cp = -c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (vec![c], c);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (vec![a, c], a + ac * w);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (vec![b, c], b + (c - b) * w);
    }
    let denom = va + vb + vc;
    if denom == 0.0 {
        // Degenerate triangle: fall back to its longest edge.
        let cands = [segment(a, b), segment(a, c), segment(b, c)];
        return cands
            .into_iter()
            .min_by(|x, y| x.1.norm_squared().total_cmp(&y.1.norm_squared()))
            .unwrap();
    }
    let v = vb / denom;
    let w = vc / denom;
    (vec![a, b, c], a + ab * v + ac * w)
}

fn tetrahedron(
    a: Vector3<f64>,
    b: Vector3<f64>,
    c: Vector3<f64>,
    d: Vector3<f64>,
) -> (Vec<Vector3<f64>>, Vector3<f64>) {
    let faces = [(a, b, c, d), (a, c, d, b), (a, d, b, c), (b, d, c, a)];
    let mut best: Option<(Vec<Vector3<f64>>, Vector3<f64>)> = None;
    let mut inside = true;
    for (p, q, r, opp) in faces {
        let n = (q - p).cross(&(r - p));
        let side_origin = -p.dot(&n);
        let side_opp = (opp - p).dot(&n);
        // Origin strictly on the far side of this face from the fourth vertex.
        if side_origin * side_opp < 0.0 {
            inside = false;
            let cand = triangle(p, q, r);
            if best.as_ref().is_none_or(|b| cand.1.norm_squared() < b.1.norm_squared()) {
                best = Some(cand);
            }
        }
    }
    if inside {
        return (vec![a, b, c, d], Vector3::zeros());
    }
    best.unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::primitive::{Primitive, Shape};
    use nalgebra::{Isometry3, Translation3, UnitQuaternion};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rotation(rng: &mut impl Rng) -> UnitQuaternion<f64> {
        UnitQuaternion::from_euler_angles(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0))
    }

    /// Separating-axis test for two boxes.
    fn sat_boxes(a: &OrientedBox, b: &OrientedBox) -> bool {
        let ra = a.rotation.matrix();
        let rb = b.rotation.matrix();
        let mut axes = Vec::new();
        for i in 0..3 {
            axes.push(ra.column(i).into_owned());
            axes.push(rb.column(i).into_owned());
            for j in 0..3 {
                let c = ra.column(i).cross(&rb.column(j));
                if c.norm() > 1e-9 {
                    axes.push(c.normalize());
                }
            }
        }
        let t = b.center - a.center;
        for ax in axes {
            let pa: f64 = (0..3).map(|i| a.half[i] * ra.column(i).dot(&ax).abs()).sum();
            let pb: f64 = (0..3).map(|i| b.half[i] * rb.column(i).dot(&ax).abs()).sum();
            if t.dot(&ax).abs() > pa + pb {
                return false;
            }
        }
        true
    }

    fn closest_on_box(b: &OrientedBox, p: &Vector3<f64>) -> Vector3<f64> {
        let l = b.rotation.inverse_transform_vector(&(p - b.center));
        let c = Vector3::new(
            l.x.clamp(-b.half.x, b.half.x),
            l.y.clamp(-b.half.y, b.half.y),
            l.z.clamp(-b.half.z, b.half.z),
        );
        b.center + b.rotation * c
    }

    fn random_box(rng: &mut impl Rng) -> OrientedBox {
        OrientedBox {
            center: Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)),
            rotation: random_rotation(rng).to_rotation_matrix(),
            half: Vector3::new(rng.random_range(0.005..0.06), rng.random_range(0.005..0.06), rng.random_range(0.005..0.06)),
        }
    }

    #[test]
    fn box_box_matches_separating_axes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (mut yes, mut no) = (0, 0);
        for _ in 0..20000 {
            let a = random_box(&mut rng);
            let b = random_box(&mut rng);
            let expect = sat_boxes(&a, &b);
            assert_eq!(intersects(&a, &b), expect);
            if expect {
                yes += 1
            } else {
                no += 1
            }
        }
        assert!(yes > 1000 && no > 1000);
    }

    #[test]
    fn box_sphere_matches_closest_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20000 {
            let b = random_box(&mut rng);
            let r = rng.random_range(0.005..0.05);
            let c = Vector3::new(rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15));
            let s = Primitive::new(Shape::Sphere { radius: r }, Isometry3::translation(c.x, c.y, c.z));
            let dist = (closest_on_box(&b, &c) - c).norm();
            // Skip near-tangent cases where rounding decides.
            if (dist - r).abs() < 1e-9 {
                continue;
            }
            assert_eq!(intersects(&b, &s), dist < r);
        }
    }

    #[test]
    fn box_cylinder_matches_dense_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..300 {
            let b = random_box(&mut rng);
            let cyl = Primitive::new(
                Shape::Cylinder { radius: rng.random_range(0.01..0.04), length: rng.random_range(0.02..0.12) },
                Isometry3::from_parts(
                    Translation3::new(rng.random_range(-0.12..0.12), rng.random_range(-0.12..0.12), rng.random_range(-0.12..0.12)),
                    random_rotation(&mut rng),
                ),
            );
            let hit = intersects(&b, &cyl);
            // A sampled point of the box inside the cylinder proves overlap.
            let mut found = false;
            for _ in 0..20000 {
                let l = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                let p = b.center + b.rotation * b.half.component_mul(&l);
                if cyl.contains(&p) {
                    found = true;
                    break;
                }
            }
            if found {
                assert!(hit);
            }
            if !hit {
                assert!(!found);
            }
        }
    }

    #[test]
    fn coincident_and_touching() {
        let b = OrientedBox { center: Vector3::zeros(), rotation: Rotation3::identity(), half: Vector3::repeat(0.01) };
        assert!(intersects(&b, &b));
        let far = OrientedBox { center: Vector3::new(0.0201, 0.0, 0.0), ..b };
        assert!(!intersects(&b, &far));
        let near = OrientedBox { center: Vector3::new(0.0199, 0.0, 0.0), ..b };
        assert!(intersects(&b, &near));
    }
}
