//! Local differential geometry from implicit quadric fits.
//!
//! The fit minimizes `sum f(p_i)^2` subject to `sum |grad f(p_i)|^2 = 1`
//! (Taubin). That is the smallest-eigenvalue solution of the pencil
//! `A c = lambda B c` with `A = sum l l^T`, `B = sum J^T J`, `l` the ten
//! monomials and `J` the Jacobian of the gradient in `c`. `B` is always
//! singular (the constant term has no gradient), so coefficients in its null
//! space are eliminated by minimizing over them before reducing the
//! remaining pencil with `B^{-1/2}`.

use nalgebra::{Matrix2, Matrix3, SMatrix, SVector, SymmetricEigen, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{NeighborIndex, PointCloud};
use crate::error::{Error, Result};

pub type Vec10 = SVector<f64, 10>;
type Mat10 = SMatrix<f64, 10, 10>;

pub const MIN_FIT_POINTS: usize = 10;

/// Relative eigenvalue floor below which a direction of `B` is treated as null.
const PENCIL_RANK_TOL: f64 = 1e-12;
/// Ridge weight on the Frobenius norm of the second-order form, relative to
/// `trace(A)`. Picks the lowest-order surface when the data admits several
/// exact fits.
const QUADRATIC_RIDGE: f64 = 1e-10;
/// Relative curvature gap under which principal directions are ambiguous.
const UMBILIC_TOL: f64 = 0.01;
/// Curvature magnitude (1/m) below which a point counts as flat.
const FLAT_CURVATURE: f64 = 1e-6;

/// Implicit quadric `f = c . [x^2, y^2, z^2, xy, xz, yz, x, y, z, 1]` in
/// coordinates `(p - center) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadricFit {
    pub coeffs: Vec10,
    pub center: Vector3<f64>,
    pub scale: f64,
}

impl QuadricFit {
    fn local(&self, p: &Vector3<f64>) -> Vector3<f64> {
        (p - self.center) / self.scale
    }

    pub fn eval(&self, p: &Vector3<f64>) -> f64 {
        self.coeffs.dot(&monomials(&self.local(p)))
    }

    /// Gradient with respect to world coordinates.
    pub fn gradient(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let x = self.local(p);
        let c = &self.coeffs;
        Vector3::new(
            2.0 * c[0] * x.x + c[3] * x.y + c[4] * x.z + c[6],
            2.0 * c[1] * x.y + c[3] * x.x + c[5] * x.z + c[7],
            2.0 * c[2] * x.z + c[4] * x.x + c[5] * x.y + c[8],
        ) / self.scale
    }

    /// Hessian with respect to world coordinates (constant for a quadric).
    pub fn hessian(&self) -> Matrix3<f64> {
        let c = &self.coeffs;
        Matrix3::new(
            2.0 * c[0], c[3], c[4],
            c[3], 2.0 * c[1], c[5],
            c[4], c[5], 2.0 * c[2],
        ) / (self.scale * self.scale)
    }

    /// Norm of the second-order coefficients relative to the whole vector.
    pub fn quadratic_fraction(&self) -> f64 {
        self.coeffs.rows(0, 6).norm() / self.coeffs.norm()
    }
}

#[inline]
pub fn monomials(x: &Vector3<f64>) -> Vec10 {
    Vec10::from([
        x.x * x.x,
        x.y * x.y,
        x.z * x.z,
        x.x * x.y,
        x.x * x.z,
        x.y * x.z,
        x.x,
        x.y,
        x.z,
        1.0,
    ])
}

/// Rows are the partial derivatives of the monomials in x, y and z.
#[inline]
pub fn monomial_jacobian(x: &Vector3<f64>) -> SMatrix<f64, 3, 10> {
    let mut j = SMatrix::<f64, 3, 10>::zeros();
    j[(0, 0)] = 2.0 * x.x;
    j[(0, 3)] = x.y;
    j[(0, 4)] = x.z;
    j[(0, 6)] = 1.0;
    j[(1, 1)] = 2.0 * x.y;
    j[(1, 3)] = x.x;
    j[(1, 5)] = x.z;
    j[(1, 7)] = 1.0;
    j[(2, 2)] = 2.0 * x.z;
    j[(2, 4)] = x.x;
    j[(2, 5)] = x.y;
    j[(2, 8)] = 1.0;
    j
}

/// Fits an implicit quadric with Taubin's gradient-weighted criterion.
pub fn fit_quadric_taubin(nbhd: &[Vector3<f64>]) -> Result<QuadricFit> {
    if nbhd.len() < MIN_FIT_POINTS {
        return Err(Error::TooFewPoints(nbhd.len()));
    }
    let n = nbhd.len() as f64;
    let center = nbhd.iter().sum::<Vector3<f64>>() / n;
    let scale = nbhd.iter().map(|p| (p - center).norm()).sum::<f64>() / n;
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Degenerate("coincident points"));
    }

    let mut a = Mat10::zeros();
    let mut b = Mat10::zeros();
    for p in nbhd {
        let x = (p - center) / scale;
        let l = monomials(&x);
        a += l * l.transpose();
        let j = monomial_jacobian(&x);
        b += j.transpose() * j;
    }
    let ridge = QUADRATIC_RIDGE * a.trace();
    for k in 0..6 {
        a[(k, k)] += if k < 3 { ridge } else { 0.5 * ridge };
    }

    let coeffs = solve_pencil(&a, &b)?;
    Ok(QuadricFit {
        coeffs,
        center,
        scale,
    })
}

/// Smallest generalized eigenvector of `A c = lambda B c` for symmetric
/// `A >= 0`, `B >= 0`, with `B`-null coefficients minimized out. Returned
/// with unit Euclidean norm.
pub(crate) fn solve_pencil(a: &Mat10, b: &Mat10) -> Result<Vec10> {
    let eb = SymmetricEigen::new(*b);
    let tr = b.trace();
    if !(tr > 0.0) {
        return Err(Error::Degenerate("zero gradient pencil"));
    }
    let floor = PENCIL_RANK_TOL * tr;
    let range: Vec<usize> = (0..10).filter(|&i| eb.eigenvalues[i] > floor).collect();
    let null: Vec<usize> = (0..10).filter(|&i| eb.eigenvalues[i] <= floor).collect();
    if range.is_empty() {
        return Err(Error::Degenerate("gradient constraint has no range"));
    }
    let ur = nalgebra::DMatrix::from_fn(10, range.len(), |r, c| eb.eigenvectors[(r, range[c])]);
    let un = nalgebra::DMatrix::from_fn(10, null.len(), |r, c| eb.eigenvectors[(r, null[c])]);
    let ad = nalgebra::DMatrix::from_fn(10, 10, |r, c| a[(r, c)]);

    let a_rr = ur.transpose() * &ad * &ur;
    let (schur, elim) = if null.is_empty() {
        (a_rr, None)
    } else {
        let a_nn = un.transpose() * &ad * &un;
        let a_nr = un.transpose() * &ad * &ur;
        let pinv = symmetric_pinv(&a_nn);
        // b = -A_nn^+ A_nr a
        let elim = -(&pinv * &a_nr);
        let schur = &a_rr + a_nr.transpose() * &elim;
        (schur, Some(elim))
    };

    let k = range.len();
    let inv_sqrt: Vec<f64> = range
        .iter()
        .map(|&i| 1.0 / eb.eigenvalues[i].sqrt())
        .collect();
    let reduced = nalgebra::DMatrix::from_fn(k, k, |r, c| schur[(r, c)] * inv_sqrt[r] * inv_sqrt[c]);
    let reduced = (&reduced + reduced.transpose()) * 0.5;
    let er = SymmetricEigen::new(reduced);
    let imin = er.eigenvalues.imin();
    let z = er.eigenvectors.column(imin);
    let coord = nalgebra::DVector::from_fn(k, |r, _| z[r] * inv_sqrt[r]);

    let mut c = &ur * &coord;
    if let Some(elim) = elim {
        c += &un * (elim * &coord);
    }
    let norm = c.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::Degenerate("singular quadric pencil"));
    }
    Ok(Vec10::from_iterator(c.iter().map(|v| v / norm)))
}

fn symmetric_pinv(m: &nalgebra::DMatrix<f64>) -> nalgebra::DMatrix<f64> {
    let e = SymmetricEigen::new(m.clone());
    let tol = 1e-12 * e.eigenvalues.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(f64::MIN_POSITIVE);
    let n = m.nrows();
    let mut out = nalgebra::DMatrix::zeros(n, n);
    for i in 0..n {
        let l = e.eigenvalues[i];
        if l.abs() > tol {
            let v = e.eigenvectors.column(i);
            out += (v * v.transpose()) / l;
        }
    }
    out
}

/// Surface normal, principal directions and curvatures at a point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DarbouxFrame {
    pub origin: Vector3<f64>,
    /// Unit normal oriented toward the observing camera.
    pub normal: Vector3<f64>,
    /// Direction of minimum principal curvature.
    pub axis: Vector3<f64>,
    /// `axis x normal`.
    pub binormal: Vector3<f64>,
    /// Principal curvatures (1/m) with `|kappa1| <= |kappa2|`.
    pub kappa1: f64,
    pub kappa2: f64,
}

impl DarbouxFrame {
    /// Columns `(normal, axis x normal, axis)`.
    pub fn rotation(&self) -> Matrix3<f64> {
        Matrix3::from_columns(&[self.normal, self.binormal, self.axis])
    }
}

pub fn darboux_from_quadric(
    q: &QuadricFit,
    p: &Vector3<f64>,
    view_origin: &Vector3<f64>,
) -> Result<DarbouxFrame> {
    let g = q.gradient(p);
    let gn = g.norm();
    if !(gn > 1e-12) {
        return Err(Error::Degenerate("vanishing gradient"));
    }
    let mut normal = g / gn;
    if normal.dot(&(view_origin - p)) < 0.0 {
        normal = -normal;
    }

    let t1 = any_orthogonal(&normal);
    let t2 = normal.cross(&t1);
    let h = q.hessian();
    // Shape operator in the tangent basis, signed relative to the oriented normal.
    let s = Matrix2::new(
        t1.dot(&(h * t1)),
        t1.dot(&(h * t2)),
        t2.dot(&(h * t1)),
        t2.dot(&(h * t2)),
    ) / -g.dot(&normal);
    let s = (s + s.transpose()) * 0.5;
    let e = SymmetricEigen::new(s);
    let (i1, i2) = if e.eigenvalues[0].abs() <= e.eigenvalues[1].abs() {
        (0, 1)
    } else {
        (1, 0)
    };
    let (k1, k2) = (e.eigenvalues[i1], e.eigenvalues[i2]);

    let umbilic = k2.abs() < FLAT_CURVATURE || (k2.abs() - k1.abs()) <= UMBILIC_TOL * k2.abs();
    let axis = if umbilic {
        let px = Vector3::x() - normal * normal.x;
        if px.norm() > 1e-3 {
            px.normalize()
        } else {
            (Vector3::y() - normal * normal.y).normalize()
        }
    } else {
        let v = e.eigenvectors.column(i1);
        canonical_sign((t1 * v[0] + t2 * v[1]).normalize())
    };
    // Re-orthogonalize against rounding.
    let axis = (axis - normal * normal.dot(&axis)).normalize();
    Ok(DarbouxFrame {
        origin: *p,
        normal,
        axis,
        binormal: axis.cross(&normal),
        kappa1: k1,
        kappa2: k2,
    })
}

fn any_orthogonal(n: &Vector3<f64>) -> Vector3<f64> {
    let helper = if n.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    n.cross(&helper).normalize()
}

/// Flips `v` so its largest-magnitude component is positive.
fn canonical_sign(v: Vector3<f64>) -> Vector3<f64> {
    let i = v.iamax();
    if v[i] < 0.0 {
        -v
    } else {
        v
    }
}

/// Darboux frame at cloud point `i` from its `radius` neighborhood.
pub fn frame_at(c: &PointCloud, idx: &NeighborIndex, i: usize, radius: f64) -> Result<DarbouxFrame> {
    let p = c.points[i];
    let nb: Vec<Vector3<f64>> = idx
        .radius_neighbors(&p, radius)
        .into_iter()
        .map(|j| c.points[j])
        .collect();
    let fit = fit_quadric_taubin(&nb)?;
    darboux_from_quadric(&fit, &p, &c.origin_of(i))
}

/// Attaches camera-oriented normals to every point with enough neighbors.
/// Points whose fit fails get a `None` normal.
pub fn estimate_normals(c: &PointCloud, radius: f64) -> Result<PointCloud> {
    if !(radius > 0.0) {
        return Err(Error::invalid(format!("radius must be positive, got {radius}")));
    }
    let idx = c.index();
    let normals: Vec<Option<Vector3<f64>>> = (0..c.len())
        .into_par_iter()
        .map(|i| frame_at(c, &idx, i, radius).ok().map(|f| f.normal))
        .collect();
    let mut out = c.clone();
    out.normals = Some(normals);
    Ok(out)
}
