//! Greedy clustering of classified hands and a robot-free ranking.

use std::cmp::Ordering;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::handgeom::{HandHypothesis, HandPose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    pub dist_thresh: f64,
    pub angle_thresh_deg: f64,
    pub min_size: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            dist_thresh: 0.02,
            angle_thresh_deg: 20.0,
            min_size: 3,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dist_thresh > 0.0) || !(self.angle_thresh_deg > 0.0) {
            return Err(Error::invalid("selection thresholds must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspCluster {
    /// Indices into the clustered hand list; the seed comes first.
    pub members: Vec<usize>,
    pub position: Vector3<f64>,
    /// Columns: approach, closing, axis.
    pub rotation: Matrix3<f64>,
    pub mean_score: f64,
}

impl GraspCluster {
    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn approach(&self) -> Vector3<f64> {
        self.rotation.column(0).into_owned()
    }

    pub fn closing(&self) -> Vector3<f64> {
        self.rotation.column(1).into_owned()
    }

    /// Representative hand, using the geometry of the first member.
    pub fn representative(&self, hands: &[HandHypothesis]) -> HandHypothesis {
        HandHypothesis {
            pose: HandPose {
                rotation: self.rotation,
                position: self.position,
            },
            ..hands[self.members[0]]
        }
    }
}

/// Angle between two unit directions.
fn angle(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.dot(b).clamp(-1.0, 1.0).acos()
}

/// Angle between two lines through the origin.
fn axis_angle(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.dot(b).abs().min(1.0).acos()
}

/// Nearest rotation to `m` in the Frobenius sense.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * vt
}

/// Average orientation after flipping each member about its approach axis
/// when its closing direction opposes the seed's.
fn average_rotation(hands: &[HandHypothesis], members: &[usize]) -> Matrix3<f64> {
    let seed_closing = hands[members[0]].pose.closing();
    let mut sum = Matrix3::zeros();
    for &m in members {
        let r = hands[m].pose.rotation;
        if r.column(1).dot(&seed_closing) < 0.0 {
            sum += Matrix3::from_columns(&[r.column(0).into_owned(), -r.column(1), -r.column(2)]);
        } else {
            sum += r;
        }
    }
    nearest_rotation(&sum)
}

/// Greedy clustering in descending score order. Approach directions must
/// agree; closing directions are compared up to sign.
pub fn cluster_hands(hands: &[HandHypothesis], scores: &[f64], cfg: &SelectionConfig) -> Result<Vec<GraspCluster>> {
    cfg.validate()?;
    if scores.len() != hands.len() {
        return Err(Error::DimensionMismatch {
            expected: hands.len(),
            got: scores.len(),
        });
    }
    let max_angle = cfg.angle_thresh_deg.to_radians();
    let mut order: Vec<usize> = (0..hands.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut assigned = vec![false; hands.len()];
    let mut clusters = Vec::new();
    for &seed in &order {
        if assigned[seed] {
            continue;
        }
        let s = &hands[seed].pose;
        let mut members = vec![seed];
        assigned[seed] = true;
        for &other in &order {
            if assigned[other] {
                continue;
            }
            let o = &hands[other].pose;
            if (o.position - s.position).norm() <= cfg.dist_thresh
                && angle(&o.approach(), &s.approach()) <= max_angle
                && axis_angle(&o.closing(), &s.closing()) <= max_angle
            {
                members.push(other);
                assigned[other] = true;
            }
        }
        if members.len() < cfg.min_size {
            continue;
        }
        let position = members.iter().map(|&m| hands[m].pose.position).sum::<Vector3<f64>>() / members.len() as f64;
        let mean_score = members.iter().map(|&m| scores[m]).sum::<f64>() / members.len() as f64;
        clusters.push(GraspCluster {
            rotation: average_rotation(hands, &members),
            members,
            position,
            mean_score,
        });
    }
    Ok(clusters)
}

fn rank_key_cmp(a: &GraspCluster, b: &GraspCluster, reference: &Vector3<f64>, up: &Vector3<f64>) -> Ordering {
    let down = -up;
    b.size()
        .cmp(&a.size())
        .then_with(|| b.approach().dot(&down).total_cmp(&a.approach().dot(&down)))
        .then_with(|| (a.position - reference).norm().total_cmp(&(b.position - reference).norm()))
        .then_with(|| {
            (0..3)
                .map(|k| a.position[k].total_cmp(&b.position[k]))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
}

/// Orders by size, then top-down alignment, then closeness to `reference`,
/// then position.
pub fn rank_grasps(mut clusters: Vec<GraspCluster>, reference: &Vector3<f64>, up: &Vector3<f64>) -> Vec<GraspCluster> {
    let up = up.try_normalize(0.0).unwrap_or_else(Vector3::z);
    clusters.sort_by(|a, b| rank_key_cmp(a, b, reference, &up));
    clusters
}

/// JSON Lines record for a ranked grasp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedGrasp {
    pub rank: usize,
    pub size: usize,
    pub mean_score: f64,
    pub position: [f64; 3],
    pub approach: [f64; 3],
    pub closing: [f64; 3],
    /// Row-major rotation with columns approach, closing, axis.
    pub rotation: [f64; 9],
    pub members: Vec<usize>,
}

impl RankedGrasp {
    pub fn new(rank: usize, c: &GraspCluster) -> Self {
        let mut rotation = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                rotation[i * 3 + j] = c.rotation[(i, j)];
            }
        }
        let a = c.approach();
        let f = c.closing();
        Self {
            rank,
            size: c.size(),
            mean_score: c.mean_score,
            position: [c.position.x, c.position.y, c.position.z],
            approach: [a.x, a.y, a.z],
            closing: [f.x, f.y, f.z],
            rotation,
            members: c.members.clone(),
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_row_slice(&self.rotation)
    }
}
