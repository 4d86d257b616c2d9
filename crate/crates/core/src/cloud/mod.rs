//! Point-cloud data model, voxel downsampling, cropping and neighborhoods.

mod kdtree;
pub mod pcd;

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use kdtree::NeighborIndex;

pub type ViewId = u32;

/// Sorted set of camera ids that contributed to a point.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct ViewSet(Vec<ViewId>);

impl ViewSet {
    pub fn single(id: ViewId) -> Self {
        ViewSet(vec![id])
    }

    pub fn from_ids(ids: impl IntoIterator<Item = ViewId>) -> Self {
        let mut v: Vec<ViewId> = ids.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        ViewSet(v)
    }

    pub fn insert(&mut self, id: ViewId) {
        if let Err(pos) = self.0.binary_search(&id) {
            self.0.insert(pos, id);
        }
    }

    pub fn union_with(&mut self, other: &ViewSet) {
        for &id in &other.0 {
            self.insert(id);
        }
    }

    pub fn contains(&self, id: ViewId) -> bool {
        self.0.binary_search(&id).is_ok()
    }

    pub fn first(&self) -> Option<ViewId> {
        self.0.first().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = ViewId> + '_ {
        self.0.iter().copied()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Axis-aligned box with closed bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Result<Self> {
        if (0..3).any(|i| !(min[i] <= max[i])) {
            return Err(Error::invalid(format!(
                "inverted box: min {:?} max {:?}",
                min.as_slice(),
                max.as_slice()
            )));
        }
        Ok(Self { min, max })
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

/// A point cloud in meters with per-point view provenance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub views: Vec<ViewSet>,
    /// Per-point unit normals; `None` entries mark points whose normal
    /// could not be estimated.
    pub normals: Option<Vec<Option<Vector3<f64>>>>,
    pub view_origins: BTreeMap<ViewId, Vector3<f64>>,
}

impl PointCloud {
    /// Single-view cloud.
    pub fn from_view(points: Vec<Vector3<f64>>, view: ViewId, origin: Vector3<f64>) -> Self {
        let views = vec![ViewSet::single(view); points.len()];
        let mut view_origins = BTreeMap::new();
        view_origins.insert(view, origin);
        Self {
            points,
            views,
            normals: None,
            view_origins,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Checks the structural invariants of the cloud.
    pub fn validate(&self) -> Result<()> {
        if self.views.len() != self.points.len() {
            return Err(Error::invalid("views length differs from points length"));
        }
        if let Some(normals) = &self.normals {
            if normals.len() != self.points.len() {
                return Err(Error::invalid("normals length differs from points length"));
            }
            for n in normals.iter().flatten() {
                if (n.norm() - 1.0).abs() > 1e-6 {
                    return Err(Error::invalid("normal is not unit length"));
                }
            }
        }
        if self.points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid("non-finite coordinate"));
        }
        for vs in &self.views {
            for id in vs.iter() {
                if !self.view_origins.contains_key(&id) {
                    return Err(Error::invalid(format!("view {id} has no origin")));
                }
            }
        }
        Ok(())
    }

    /// Camera origin used to orient the normal of point `i`.
    pub fn origin_of(&self, i: usize) -> Vector3<f64> {
        self.views[i]
            .first()
            .and_then(|id| self.view_origins.get(&id).copied())
            .unwrap_or_else(Vector3::zeros)
    }

    pub fn normal(&self, i: usize) -> Option<Vector3<f64>> {
        self.normals.as_ref().and_then(|n| n[i])
    }

    pub fn index(&self) -> NeighborIndex {
        NeighborIndex::new(&self.points)
    }

    /// Cloud restricted to the given point indices (in order).
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            views: indices.iter().map(|&i| self.views[i].clone()).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|n| indices.iter().map(|&i| n[i]).collect()),
            view_origins: self.view_origins.clone(),
        }
    }

    /// Points seen by camera `view`.
    pub fn view_subset(&self, view: ViewId) -> PointCloud {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.views[i].contains(view)).collect();
        let mut out = self.select(&idx);
        out.view_origins.retain(|k, _| *k == view);
        out.views = vec![ViewSet::single(view); out.len()];
        out
    }

    pub fn bounds(&self) -> Option<Aabb> {
        let first = self.points.first()?;
        let mut lo = *first;
        let mut hi = *first;
        for p in &self.points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        Some(Aabb { min: lo, max: hi })
    }

    /// Writes one JSON object per point: `{"x","y","z","views",["nx","ny","nz"]}`.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for i in 0..self.len() {
            let rec = JsonPoint {
                x: self.points[i].x,
                y: self.points[i].y,
                z: self.points[i].z,
                views: self.views[i].0.clone(),
                nx: self.normal(i).map(|n| n.x),
                ny: self.normal(i).map(|n| n.y),
                nz: self.normal(i).map(|n| n.z),
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Reads the JSON Lines interchange. View ids without an entry in
    /// `origins` are placed at the world origin.
    pub fn read_jsonl<R: BufRead>(r: R, origins: &BTreeMap<ViewId, Vector3<f64>>) -> Result<Self> {
        let mut cloud = PointCloud {
            view_origins: origins.clone(),
            ..Default::default()
        };
        let mut normals = Vec::new();
        let mut any_normal = false;
        for (lineno, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<jsonl>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: JsonPoint = serde_json::from_str(&line).map_err(|e| Error::Pcd {
                line: lineno + 1,
                msg: e.to_string(),
            })?;
            let vs = ViewSet::from_ids(rec.views.iter().copied());
            for id in vs.iter() {
                cloud.view_origins.entry(id).or_insert_with(Vector3::zeros);
            }
            cloud.points.push(Vector3::new(rec.x, rec.y, rec.z));
            cloud.views.push(vs);
            let n = match (rec.nx, rec.ny, rec.nz) {
                (Some(x), Some(y), Some(z)) => {
                    any_normal = true;
                    Some(Vector3::new(x, y, z))
                }
                _ => None,
            };
            normals.push(n);
        }
        if any_normal {
            cloud.normals = Some(normals);
        }
        cloud.validate()?;
        Ok(cloud)
    }
}

#[derive(Serialize, Deserialize)]
struct JsonPoint {
    x: f64,
    y: f64,
    z: f64,
    #[serde(default)]
    views: Vec<ViewId>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    nx: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    ny: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    nz: Option<f64>,
}

pub fn load_pcd(path: impl AsRef<Path>) -> Result<PointCloud> {
    pcd::read_file(path.as_ref(), Vector3::zeros())
}

/// Union of two registered clouds with disjoint view ids.
pub fn merge_registered(a: &PointCloud, b: &PointCloud) -> Result<PointCloud> {
    for id in b.view_origins.keys() {
        if a.view_origins.contains_key(id) && !a.is_empty() && !b.is_empty() {
            return Err(Error::OverlappingViews(*id));
        }
    }
    let mut out = a.clone();
    out.points.extend_from_slice(&b.points);
    out.views.extend(b.views.iter().cloned());
    out.normals = match (&a.normals, &b.normals) {
        (None, None) => None,
        _ => {
            let mut n = a.normals.clone().unwrap_or_else(|| vec![None; a.len()]);
            n.extend(b.normals.clone().unwrap_or_else(|| vec![None; b.len()]));
            Some(n)
        }
    };
    for (k, v) in &b.view_origins {
        out.view_origins.entry(*k).or_insert(*v);
    }
    Ok(out)
}

/// Voxel grid downsampling on a grid anchored at the world origin.
pub fn voxelize(c: &PointCloud, leaf: f64) -> Result<PointCloud> {
    voxelize_anchored(c, leaf, Vector3::zeros())
}

/// Voxel grid downsampling: one centroid per occupied voxel, view sets merged,
/// normals dropped. Output is ordered by voxel key.
pub fn voxelize_anchored(c: &PointCloud, leaf: f64, anchor: Vector3<f64>) -> Result<PointCloud> {
    if !(leaf > 0.0) || !leaf.is_finite() {
        return Err(Error::invalid(format!("voxel leaf must be positive, got {leaf}")));
    }
    let mut cells: HashMap<[i64; 3], (Vector3<f64>, usize, ViewSet)> = HashMap::new();
    for (p, vs) in c.points.iter().zip(&c.views) {
        let key = voxel_key(p, &anchor, leaf);
        let e = cells
            .entry(key)
            .or_insert_with(|| (Vector3::zeros(), 0, ViewSet::default()));
        e.0 += p;
        e.1 += 1;
        e.2.union_with(vs);
    }
    let mut entries: Vec<_> = cells.into_iter().collect();
    entries.sort_unstable_by_key(|(k, _)| *k);
    let mut out = PointCloud {
        view_origins: c.view_origins.clone(),
        ..Default::default()
    };
    for (_, (sum, n, vs)) in entries {
        out.points.push(sum / n as f64);
        out.views.push(vs);
    }
    Ok(out)
}

pub(crate) fn voxel_key(p: &Vector3<f64>, anchor: &Vector3<f64>, leaf: f64) -> [i64; 3] {
    let q = (p - anchor) / leaf;
    [q.x.floor() as i64, q.y.floor() as i64, q.z.floor() as i64]
}

/// Keeps exactly the points inside the closed box.
pub fn crop_workspace(c: &PointCloud, bx: &Aabb) -> Result<PointCloud> {
    Aabb::new(bx.min, bx.max)?;
    let idx: Vec<usize> = (0..c.len()).filter(|&i| bx.contains(&c.points[i])).collect();
    Ok(c.select(&idx))
}

/// Indices of the points within distance `r` (inclusive) of `p`.
pub fn radius_neighbors(idx: &NeighborIndex, p: &Vector3<f64>, r: f64) -> Result<Vec<usize>> {
    if !(r > 0.0) {
        return Err(Error::invalid(format!("radius must be positive, got {r}")));
    }
    Ok(idx.radius_neighbors(p, r))
}
