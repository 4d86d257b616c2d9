//! Grasp hypothesis images and their HOG descriptors.
//!
//! Closing-region points are projected onto the closing plane: image rows
//! follow the approach axis and columns follow the closing direction, so the
//! region's footprint fills the image exactly.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::cloud::{NeighborIndex, PointCloud};
use crate::error::{Error, Result};
use crate::handgeom::{region_contains_local, HandHypothesis};

pub const IMAGE_WIDTH: usize = 60;
pub const IMAGE_HEIGHT: usize = 72;
pub const CELL_SIZE: usize = 6;
pub const BINS: usize = 9;
const CLIP: f64 = 0.2;
const BLOCK_EPS: f64 = 1e-3;

/// Descriptor length for the default geometry.
pub const DESCRIPTOR_LEN: usize =
    (IMAGE_WIDTH / CELL_SIZE - 1) * (IMAGE_HEIGHT / CELL_SIZE - 1) * 4 * BINS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intensity {
    /// Bin count divided by the largest bin count.
    #[default]
    Count,
    /// 1 for occupied pixels.
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub intensity: Intensity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraspImage {
    pub width: usize,
    pub height: usize,
    /// Row-major intensities in `[0, 1]`.
    pub data: Vec<f64>,
}

impl GraspImage {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    /// Binary 8-bit PGM.
    pub fn write_pgm<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        w.write_all(&bytes)
    }
}

/// Pixel of a hand-local point inside the closing region.
fn pixel_of(h: &HandHypothesis, l: &Vector3<f64>) -> (usize, usize) {
    let p = &h.params;
    let fu = (l.x + p.finger_length / 2.0) / p.finger_length;
    let fv = (l.y + p.open_aperture / 2.0) / p.open_aperture;
    let row = ((fu * IMAGE_HEIGHT as f64) as usize).min(IMAGE_HEIGHT - 1);
    let col = ((fv * IMAGE_WIDTH as f64) as usize).min(IMAGE_WIDTH - 1);
    (row, col)
}

fn image_from(h: &HandHypothesis, pts: impl Iterator<Item = Vector3<f64>>, cfg: &FeatureConfig) -> GraspImage {
    let mut counts = vec![0u32; IMAGE_WIDTH * IMAGE_HEIGHT];
    for q in pts {
        let l = h.pose.to_local(&q);
        if !region_contains_local(&h.params, &l) {
            continue;
        }
        let (r, c) = pixel_of(h, &l);
        counts[r * IMAGE_WIDTH + c] += 1;
    }
    let max = counts.iter().copied().max().unwrap_or(0);
    let mut img = GraspImage::zeros(IMAGE_WIDTH, IMAGE_HEIGHT);
    if max > 0 {
        for (d, &n) in img.data.iter_mut().zip(&counts) {
            *d = match cfg.intensity {
                Intensity::Count => n as f64 / max as f64,
                Intensity::Binary => (n > 0) as u8 as f64,
            };
        }
    }
    img
}

/// Image of the points of `c` inside the closing region of `h`.
pub fn grasp_image(c: &PointCloud, h: &HandHypothesis) -> GraspImage {
    grasp_image_with(c, h, &FeatureConfig::default())
}

pub fn grasp_image_with(c: &PointCloud, h: &HandHypothesis, cfg: &FeatureConfig) -> GraspImage {
    image_from(h, c.points.iter().copied(), cfg)
}

/// Same as [`grasp_image_with`], visiting only points near the hand.
pub fn grasp_image_indexed(c: &PointCloud, idx: &NeighborIndex, h: &HandHypothesis, cfg: &FeatureConfig) -> GraspImage {
    let near = idx.radius_neighbors(&h.pose.position, h.params.closing_region_radius());
    image_from(h, near.into_iter().map(|i| c.points[i]), cfg)
}

/// Histogram-of-oriented-gradients descriptor.
pub fn hog(img: &GraspImage) -> Result<Vec<f64>> {
    let (w, h) = (img.width, img.height);
    if w * h != img.data.len() {
        return Err(Error::DimensionMismatch {
            expected: w * h,
            got: img.data.len(),
        });
    }
    if w % CELL_SIZE != 0 || h % CELL_SIZE != 0 || w < 2 * CELL_SIZE || h < 2 * CELL_SIZE {
        return Err(Error::DimensionMismatch {
            expected: CELL_SIZE,
            got: if w % CELL_SIZE != 0 { w } else { h },
        });
    }
    let (cx, cy) = (w / CELL_SIZE, h / CELL_SIZE);
    let mut cells = vec![[0.0f64; BINS]; cx * cy];
    let bin_width = std::f64::consts::PI / BINS as f64;
    for r in 0..h {
        for c in 0..w {
            let gx = img.at(r, (c + 1).min(w - 1)) - img.at(r, c.saturating_sub(1));
            let gy = img.at((r + 1).min(h - 1), c) - img.at(r.saturating_sub(1), c);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let mut theta = gy.atan2(gx);
            if theta < 0.0 {
                theta += std::f64::consts::PI;
            }
            // Bin b is centered at b * bin_width.
            let pos = theta / bin_width;
            let b0 = pos.floor();
            let frac = pos - b0;
            let b0 = (b0 as usize) % BINS;
            let b1 = (b0 + 1) % BINS;
            let cell = &mut cells[(r / CELL_SIZE) * cx + c / CELL_SIZE];
            cell[b0] += mag * (1.0 - frac);
            cell[b1] += mag * frac;
        }
    }
    let mut out = Vec::with_capacity((cx - 1) * (cy - 1) * 4 * BINS);
    let mut block = [0.0f64; 4 * BINS];
    for by in 0..cy - 1 {
        for bx in 0..cx - 1 {
            for (k, (dy, dx)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
                block[k * BINS..(k + 1) * BINS].copy_from_slice(&cells[(by + dy) * cx + bx + dx]);
            }
            l2_hys(&mut block);
            out.extend_from_slice(&block);
        }
    }
    Ok(out)
}

fn l2_hys(v: &mut [f64]) {
    let normalize = |v: &mut [f64]| {
        let n = (v.iter().map(|x| x * x).sum::<f64>() + BLOCK_EPS * BLOCK_EPS).sqrt();
        v.iter_mut().for_each(|x| *x /= n);
    };
    normalize(v);
    v.iter_mut().for_each(|x| *x = x.min(CLIP));
    normalize(v);
}

/// Which cloud a descriptor was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewTag {
    First,
    Second,
    Merged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaggedDescriptor {
    pub descriptor: Vec<f64>,
    pub tag: ViewTag,
    /// The region held no points of this cloud.
    pub empty: bool,
}

/// Indexed cloud for repeated descriptor extraction.
pub struct IndexedCloud<'a> {
    pub cloud: &'a PointCloud,
    pub index: NeighborIndex,
}

impl<'a> IndexedCloud<'a> {
    pub fn new(cloud: &'a PointCloud) -> Self {
        Self {
            cloud,
            index: cloud.index(),
        }
    }

    pub fn descriptor(&self, h: &HandHypothesis, cfg: &FeatureConfig) -> (Vec<f64>, bool) {
        let img = grasp_image_indexed(self.cloud, &self.index, h, cfg);
        let empty = img.is_zero();
        (hog(&img).expect("default image geometry"), empty)
    }
}

/// One descriptor per cloud: first view, second view, merged. Views whose
/// region is empty still contribute a zero-image descriptor.
pub fn descriptors_for_hand(
    h: &HandHypothesis,
    c1: &PointCloud,
    c2: &PointCloud,
    c12: &PointCloud,
) -> [TaggedDescriptor; 3] {
    let cfg = FeatureConfig::default();
    let one = |c: &PointCloud, tag| {
        let img = grasp_image_with(c, h, &cfg);
        TaggedDescriptor {
            empty: img.is_zero(),
            descriptor: hog(&img).expect("default image geometry"),
            tag,
        }
    };
    [one(c1, ViewTag::First), one(c2, ViewTag::Second), one(c12, ViewTag::Merged)]
}

/// Header written next to a binary descriptor file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub rows: usize,
    pub dim: usize,
    /// +1 or -1 per row.
    pub labels: Vec<i8>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<ViewTag>,
}

/// Descriptor rows with labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub dim: usize,
    pub rows: Vec<Vec<f32>>,
    pub labels: Vec<i8>,
    pub tags: Vec<ViewTag>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, row: &[f64], label: i8, tag: ViewTag) -> Result<()> {
        if self.rows.is_empty() && self.dim == 0 {
            self.dim = row.len();
        }
        if row.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: row.len(),
            });
        }
        self.rows.push(row.iter().map(|&x| x as f32).collect());
        self.labels.push(label);
        self.tags.push(tag);
        Ok(())
    }

    /// Writes `<stem>.bin` (little-endian f32 rows) and `<stem>.json`.
    pub fn write(&self, bin: &Path, sidecar: &Path) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.rows.len() * self.dim * 4);
        for r in &self.rows {
            for v in r {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        crate::io::write_atomic(bin, &bytes)?;
        let header = DatasetHeader {
            rows: self.rows.len(),
            dim: self.dim,
            labels: self.labels.clone(),
            tags: self.tags.clone(),
        };
        crate::io::write_atomic(sidecar, &serde_json::to_vec_pretty(&header)?)
    }

    pub fn read(bin: &Path, sidecar: &Path) -> Result<Self> {
        let header: DatasetHeader =
            serde_json::from_slice(&std::fs::read(sidecar).map_err(|e| Error::io(sidecar, e))?)?;
        let mut bytes = Vec::new();
        std::fs::File::open(bin)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(bin, e))?;
        if bytes.len() != header.rows * header.dim * 4 {
            return Err(Error::DimensionMismatch {
                expected: header.rows * header.dim * 4,
                got: bytes.len(),
            });
        }
        if header.labels.len() != header.rows {
            return Err(Error::DimensionMismatch {
                expected: header.rows,
                got: header.labels.len(),
            });
        }
        let rows = bytes
            .chunks_exact(header.dim.max(1) * 4)
            .take(header.rows)
            .map(|chunk| {
                chunk
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect()
            })
            .collect();
        Ok(Self {
            dim: header.dim,
            rows,
            labels: header.labels,
            tags: header.tags,
        })
    }
}
