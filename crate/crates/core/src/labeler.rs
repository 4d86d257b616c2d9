//! Near-antipodal ground-truth labels from surface normals in the closing region.

use std::collections::HashMap;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{merge_registered, NeighborIndex, PointCloud, ViewId};
use crate::error::{Error, Result};
use crate::handgeom::{HandHypothesis, HypothesisRecord};

/// How a hand is declared negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeRule {
    /// Neither direction reaches `k` aligned normals.
    #[default]
    Max,
    /// Fewer than `k` aligned normals in both directions combined.
    Sum,
}

/// Visibility test for the back plate of would-be positive hands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OcclusionConfig {
    /// Angular bin of the per-view depth maps, degrees.
    pub bin_deg: f64,
    /// A point counts as hidden when it lies this far behind the nearest
    /// observed surface along the camera ray.
    pub margin: f64,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        Self {
            bin_deg: 0.5,
            margin: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelerConfig {
    pub k: usize,
    pub theta_deg: f64,
    pub negative_rule: NegativeRule,
    /// When set, a hand whose back plate lies in space no camera observed
    /// cannot be positive and becomes indeterminate.
    pub occlusion: Option<OcclusionConfig>,
    /// When set, a hand that reaches `k` on either side only with points
    /// whose surface is within this many degrees of grazing for every
    /// camera that observed them becomes indeterminate.
    pub min_incidence_deg: Option<f64>,
}

impl Default for LabelerConfig {
    fn default() -> Self {
        Self {
            k: 6,
            theta_deg: 20.0,
            negative_rule: NegativeRule::Max,
            occlusion: Some(OcclusionConfig::default()),
            min_incidence_deg: Some(5.0),
        }
    }
}

impl LabelerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("labeler k must be at least 1"));
        }
        if !(self.theta_deg >= 0.0 && self.theta_deg <= 90.0) {
            return Err(Error::invalid("labeler theta must lie in [0, 90] degrees"));
        }
        if let Some(o) = &self.occlusion {
            if !(o.bin_deg > 0.0) || !(o.margin >= 0.0) {
                return Err(Error::invalid("occlusion bin must be positive and margin non-negative"));
            }
        }
        if let Some(a) = self.min_incidence_deg {
            if !(0.0..90.0).contains(&a) {
                return Err(Error::invalid("min_incidence_deg must lie in [0, 90)"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Positive,
    Negative,
    Indeterminate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelOutcome {
    pub label: Label,
    /// Region points whose normal is within theta of `+f`.
    pub k_plus: usize,
    /// Region points whose normal is within theta of `-f`.
    pub k_minus: usize,
}

type RangeMap = HashMap<(i32, i32), f64>;

/// Nearest observed range per direction bin, one map per camera.
struct DepthMaps {
    bin: f64,
    margin: f64,
    views: Vec<(Vector3<f64>, RangeMap)>,
}

impl DepthMaps {
    fn new(c: &PointCloud, cfg: &OcclusionConfig) -> Self {
        let bin = cfg.bin_deg.to_radians();
        let views = c
            .view_origins
            .iter()
            .map(|(&id, &origin)| (origin, Self::build(c, id, origin, bin)))
            .collect();
        Self {
            bin,
            margin: cfg.margin,
            views,
        }
    }

    fn build(c: &PointCloud, id: ViewId, origin: Vector3<f64>, bin: f64) -> HashMap<(i32, i32), f64> {
        let mut map = HashMap::new();
        for (p, vs) in c.points.iter().zip(&c.views) {
            if !vs.contains(id) {
                continue;
            }
            let d = p - origin;
            let r = d.norm();
            let e = map.entry(Self::key(&d, bin)).or_insert(f64::INFINITY);
            if r < *e {
                *e = r;
            }
        }
        map
    }

    fn key(d: &Vector3<f64>, bin: f64) -> (i32, i32) {
        let az = d.y.atan2(d.x);
        let el = (d.z / d.norm()).clamp(-1.0, 1.0).asin();
        ((az / bin).floor() as i32, (el / bin).floor() as i32)
    }

    /// Hidden from camera `v`: an observed surface in the 3x3 bin
    /// neighborhood is nearer than `q` by more than the margin.
    fn hidden_from(&self, v: usize, q: &Vector3<f64>) -> bool {
        let (origin, map) = &self.views[v];
        let d = q - origin;
        let r = d.norm();
        let (a, e) = Self::key(&d, self.bin);
        let mut nearest = f64::INFINITY;
        for da in -1..=1 {
            for de in -1..=1 {
                if let Some(&z) = map.get(&(a + da, e + de)) {
                    nearest = nearest.min(z);
                }
            }
        }
        r > nearest + self.margin
    }

    fn unobserved(&self, q: &Vector3<f64>) -> bool {
        !self.views.is_empty() && (0..self.views.len()).all(|v| self.hidden_from(v, q))
    }

    /// Some sample of the back plate is hidden from every camera.
    fn plate_unobserved(&self, h: &HandHypothesis) -> bool {
        let p = &h.params;
        let (a, f, w) = (h.pose.approach(), h.pose.closing(), h.pose.axis());
        let u0 = -p.finger_length / 2.0 - p.finger_width;
        let half_v = p.open_aperture / 2.0 + p.finger_width;
        for i in 0..3 {
            let u = u0 + p.finger_width * i as f64 / 2.0;
            for j in 0..9 {
                let v = -half_v + 2.0 * half_v * j as f64 / 8.0;
                for k in 0..3 {
                    let t = -p.finger_thickness / 2.0 + p.finger_thickness * k as f64 / 2.0;
                    if self.unobserved(&(h.pose.position + a * u + f * v + w * t)) {
                        return true;
                    }
                }
            }
        }
        false
    }
}

/// Aligned-normal counts in the closing region: all points, and only points
/// that some observing camera sees at least `sin_incidence` off grazing on
/// the side the normal points to.
#[derive(Debug, Clone, Copy, Default)]
struct Counts {
    plus: usize,
    minus: usize,
    firm_plus: usize,
    firm_minus: usize,
}

/// Counts aligned normals in the closing region of `h`, visiting only `candidates`.
fn count_aligned(
    h: &HandHypothesis,
    c: &PointCloud,
    candidates: impl Iterator<Item = usize>,
    cos_t: f64,
    sin_incidence: f64,
) -> Counts {
    let normals = c.normals.as_ref().expect("checked by caller");
    let f = h.pose.closing();
    let mut k = Counts::default();
    for i in candidates {
        let Some(n) = normals[i] else { continue };
        let p = &c.points[i];
        if !h.closing_region_contains(p) {
            continue;
        }
        let d = n.dot(&f);
        let firm = || {
            c.views[i]
                .iter()
                .filter_map(|v| c.view_origins.get(&v))
                .any(|o| n.dot(&(o - p).normalize()) >= sin_incidence)
        };
        if d >= cos_t {
            k.plus += 1;
            k.firm_plus += firm() as usize;
        } else if d <= -cos_t {
            k.minus += 1;
            k.firm_minus += firm() as usize;
        }
    }
    k
}

fn sin_incidence(cfg: &LabelerConfig) -> f64 {
    cfg.min_incidence_deg.map_or(f64::NEG_INFINITY, |a| a.to_radians().sin())
}

fn classify_visible(h: &HandHypothesis, k: Counts, cfg: &LabelerConfig, maps: Option<&DepthMaps>) -> LabelOutcome {
    let mut o = classify(k.plus, k.minus, cfg);
    if o.label == Label::Positive
        && (k.firm_plus < cfg.k || k.firm_minus < cfg.k || maps.is_some_and(|m| m.plate_unobserved(h)))
    {
        o.label = Label::Indeterminate;
    }
    o
}

fn classify(kp: usize, km: usize, cfg: &LabelerConfig) -> LabelOutcome {
    let k = cfg.k;
    let label = if kp >= k && km >= k {
        Label::Positive
    } else {
        let negative = match cfg.negative_rule {
            NegativeRule::Max => kp.max(km) < k,
            NegativeRule::Sum => kp + km < k,
        };
        if negative {
            Label::Negative
        } else {
            Label::Indeterminate
        }
    };
    LabelOutcome {
        label,
        k_plus: kp,
        k_minus: km,
    }
}

/// Labels one hand with the default negative rule.
pub fn label_hand(h: &HandHypothesis, c: &PointCloud, k: usize, theta: f64) -> Result<LabelOutcome> {
    let cfg = LabelerConfig {
        k,
        theta_deg: theta.to_degrees(),
        ..Default::default()
    };
    label_hand_with(h, c, &cfg)
}

pub fn label_hand_with(h: &HandHypothesis, c: &PointCloud, cfg: &LabelerConfig) -> Result<LabelOutcome> {
    cfg.validate()?;
    if c.normals.is_none() {
        return Err(Error::MissingNormals);
    }
    let k = count_aligned(h, c, 0..c.len(), cfg.theta_deg.to_radians().cos(), sin_incidence(cfg));
    let maps = cfg.occlusion.as_ref().map(|o| DepthMaps::new(c, o));
    Ok(classify_visible(h, k, cfg, maps.as_ref()))
}

/// Labels many hands against one cloud using a shared index.
pub fn label_hands_indexed(
    hands: &[HandHypothesis],
    c: &PointCloud,
    idx: &NeighborIndex,
    cfg: &LabelerConfig,
) -> Result<Vec<LabelOutcome>> {
    cfg.validate()?;
    if c.normals.is_none() {
        return Err(Error::MissingNormals);
    }
    let cos_t = cfg.theta_deg.to_radians().cos();
    let sin_i = sin_incidence(cfg);
    let maps = cfg.occlusion.as_ref().map(|o| DepthMaps::new(c, o));
    Ok(hands
        .par_iter()
        .map(|h| {
            let r = h.params.closing_region_radius();
            let near = idx.radius_neighbors(&h.pose.position, r);
            let k = count_aligned(h, c, near.into_iter(), cos_t, sin_i);
            classify_visible(h, k, cfg, maps.as_ref())
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledHand {
    pub hand: HandHypothesis,
    pub outcome: LabelOutcome,
}

/// Labels hands on the merge of two registered views and drops the
/// indeterminate ones. Both clouds must carry normals.
pub fn label_dataset(
    hands: &[HandHypothesis],
    c1: &PointCloud,
    c2: &PointCloud,
    cfg: &LabelerConfig,
) -> Result<Vec<LabeledHand>> {
    if hands.is_empty() {
        return Ok(Vec::new());
    }
    let merged = merge_registered(c1, c2)?;
    label_on(hands, &merged, cfg)
}

/// Labels hands on an already merged cloud with normals.
pub fn label_on(hands: &[HandHypothesis], merged: &PointCloud, cfg: &LabelerConfig) -> Result<Vec<LabeledHand>> {
    if merged.normals.is_none() {
        return Err(Error::MissingNormals);
    }
    let idx = merged.index();
    let outcomes = label_hands_indexed(hands, merged, &idx, cfg)?;
    Ok(hands
        .iter()
        .zip(outcomes)
        .filter(|(_, o)| o.label != Label::Indeterminate)
        .map(|(h, o)| LabeledHand { hand: *h, outcome: o })
        .collect())
}

/// JSON Lines record of a labeled hand.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledRecord {
    #[serde(flatten)]
    pub hand: HypothesisRecord,
    pub label: Label,
    pub k_plus: usize,
    pub k_minus: usize,
}

impl From<&LabeledHand> for LabeledRecord {
    fn from(l: &LabeledHand) -> Self {
        Self {
            hand: HypothesisRecord::from(&l.hand),
            label: l.outcome.label,
            k_plus: l.outcome.k_plus,
            k_minus: l.outcome.k_minus,
        }
    }
}

impl From<&LabeledRecord> for LabeledHand {
    fn from(r: &LabeledRecord) -> Self {
        Self {
            hand: HandHypothesis::from(&r.hand),
            outcome: LabelOutcome {
                label: r.label,
                k_plus: r.k_plus,
                k_minus: r.k_minus,
            },
        }
    }
}

/// Single-view cloud with the given per-point normals.
#[cfg(test)]
pub(crate) fn cloud_with_normals(pts: Vec<(nalgebra::Vector3<f64>, Option<nalgebra::Vector3<f64>>)>) -> PointCloud {
    use nalgebra::Vector3;
    let (points, normals): (Vec<_>, Vec<_>) = pts.into_iter().unzip();
    let mut c = PointCloud::from_view(points, 0, Vector3::new(0.0, 0.0, 1.0));
    c.normals = Some(normals);
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::handgeom::{HandParams, HandPose};
    use nalgebra::{Matrix3, Vector3};
    use proptest::prelude::*;

    /// Hand at the origin: approach -z, closing +x, axis +y.
    fn hand() -> HandHypothesis {
        HandHypothesis {
            pose: HandPose {
                rotation: Matrix3::from_columns(&[-Vector3::z(), Vector3::x(), Vector3::y()]),
                position: Vector3::zeros(),
            },
            params: HandParams::default(),
            source_point: 0,
            grid_cell: (0, 0),
            pushed_offset: 0.0,
        }
    }

    /// Face points at `x`, spread over the region's approach extent.
    fn face(x: f64, n: Vector3<f64>, count: usize) -> Vec<(Vector3<f64>, Option<Vector3<f64>>)> {
        (0..count)
            .map(|i| (Vector3::new(x, 0.0, -0.02 + 0.04 * i as f64 / count as f64), Some(n)))
            .collect()
    }

    /// Normal of a face across the closing direction, turned 10 degrees
    /// toward the camera above.
    fn facing(sign: f64) -> Vector3<f64> {
        let a = 10f64.to_radians();
        Vector3::new(sign * a.cos(), 0.0, a.sin())
    }

    #[test]
    fn opposing_faces_are_positive() {
        let mut pts = face(0.025, facing(1.0), 8);
        pts.extend(face(-0.025, facing(-1.0), 8));
        let o = label_hand(&hand(), &cloud_with_normals(pts), 6, 20f64.to_radians()).unwrap();
        assert_eq!(o.label, Label::Positive);
        assert_eq!((o.k_plus, o.k_minus), (8, 8));
    }

    #[test]
    fn grazing_faces_cannot_be_positive() {
        let mut pts = face(0.025, Vector3::x(), 8);
        pts.extend(face(-0.025, -Vector3::x(), 8));
        let c = cloud_with_normals(pts);
        let o = label_hand_with(&hand(), &c, &LabelerConfig::default()).unwrap();
        assert_eq!(o.label, Label::Indeterminate);
        assert_eq!((o.k_plus, o.k_minus), (8, 8));
        let unchecked = LabelerConfig {
            min_incidence_deg: None,
            ..Default::default()
        };
        assert_eq!(label_hand_with(&hand(), &c, &unchecked).unwrap().label, Label::Positive);
    }

    #[test]
    fn single_face_is_indeterminate() {
        let pts = face(0.025, Vector3::x(), 8);
        let o = label_hand(&hand(), &cloud_with_normals(pts), 6, 20f64.to_radians()).unwrap();
        assert_eq!(o.label, Label::Indeterminate);
        assert_eq!((o.k_plus, o.k_minus), (8, 0));
    }

    #[test]
    fn surface_parallel_to_closing_is_negative() {
        let pts = (0..20)
            .map(|i| (Vector3::new(-0.03 + 0.003 * i as f64, 0.0, 0.0), Some(Vector3::z())))
            .collect();
        let o = label_hand(&hand(), &cloud_with_normals(pts), 6, 20f64.to_radians()).unwrap();
        assert_eq!(o.label, Label::Negative);
    }

    #[test]
    fn sum_rule_changes_split_counts() {
        let mut pts = face(0.025, Vector3::x(), 4);
        pts.extend(face(-0.025, -Vector3::x(), 4));
        let c = cloud_with_normals(pts);
        let max = label_hand_with(&hand(), &c, &LabelerConfig::default()).unwrap();
        let sum = label_hand_with(&hand(), &c, &LabelerConfig { negative_rule: NegativeRule::Sum, ..Default::default() }).unwrap();
        assert_eq!(max.label, Label::Negative);
        assert_eq!(sum.label, Label::Indeterminate);
    }

    /// Opposing faces plus a wall between the camera and the back plate.
    fn walled_pair() -> Vec<(Vector3<f64>, Option<Vector3<f64>>)> {
        let mut pts = face(0.025, facing(1.0), 8);
        pts.extend(face(-0.025, facing(-1.0), 8));
        for i in 0..41 {
            for j in 0..15 {
                let p = Vector3::new(-0.06 + 0.003 * i as f64, -0.021 + 0.003 * j as f64, 0.1);
                pts.push((p, Some(Vector3::z())));
            }
        }
        pts
    }

    #[test]
    fn hidden_back_plate_blocks_positive() {
        let c = cloud_with_normals(walled_pair());
        let hidden = label_hand_with(&hand(), &c, &LabelerConfig::default()).unwrap();
        assert_eq!(hidden.label, Label::Indeterminate);
        assert_eq!((hidden.k_plus, hidden.k_minus), (8, 8));
        let unchecked = LabelerConfig {
            occlusion: None,
            ..Default::default()
        };
        assert_eq!(label_hand_with(&hand(), &c, &unchecked).unwrap().label, Label::Positive);
    }

    #[test]
    fn plate_seen_by_a_second_camera_is_observed() {
        let first = cloud_with_normals(walled_pair());
        let side = PointCloud::from_view(vec![Vector3::new(-0.2, 0.0, 0.0)], 1, Vector3::new(1.0, 0.0, 0.04));
        let mut merged = merge_registered(&first, &side).unwrap();
        merged.normals.as_mut().unwrap().push(None);
        let o = label_hand_with(&hand(), &merged, &LabelerConfig::default()).unwrap();
        assert_eq!(o.label, Label::Positive);
        let idx = merged.index();
        let batch = label_hands_indexed(&[hand()], &merged, &idx, &LabelerConfig::default()).unwrap();
        assert_eq!(batch[0], o);
    }

    #[test]
    fn null_normals_are_ignored_and_missing_normals_error() {
        let mut pts = face(0.025, Vector3::x(), 8);
        pts.extend((0..8).map(|i| (Vector3::new(-0.025, 0.0, -0.02 + 0.005 * i as f64), None)));
        let o = label_hand(&hand(), &cloud_with_normals(pts), 6, 0.3).unwrap();
        assert_eq!(o.k_minus, 0);
        let bare = PointCloud::from_view(vec![Vector3::zeros()], 0, Vector3::zeros());
        assert!(matches!(label_hand(&hand(), &bare, 6, 0.3), Err(Error::MissingNormals)));
    }

    #[test]
    fn empty_hand_list_gives_empty_dataset() {
        let c = cloud_with_normals(face(0.0, Vector3::x(), 3));
        assert!(label_dataset(&[], &c, &c, &LabelerConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn indexed_matches_full_scan() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<_> = (0..3000)
            .map(|_| {
                let p = Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1));
                let n = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize();
                (p, Some(n))
            })
            .collect();
        let c = cloud_with_normals(pts);
        let idx = c.index();
        let hands: Vec<_> = (0..50)
            .map(|_| {
                let mut h = hand();
                h.pose.position = Vector3::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), 0.0);
                h
            })
            .collect();
        let cfg = LabelerConfig { k: 2, ..Default::default() };
        let fast = label_hands_indexed(&hands, &c, &idx, &cfg).unwrap();
        for (h, o) in hands.iter().zip(fast) {
            assert_eq!(o, label_hand_with(h, &c, &cfg).unwrap());
        }
    }

    fn arb_cloud() -> impl Strategy<Value = Vec<([f64; 3], [f64; 3])>> {
        prop::collection::vec(
            (prop::array::uniform3(-0.06f64..0.06), prop::array::uniform3(-1.0f64..1.0)),
            0..120,
        )
    }

    fn to_cloud(v: &[([f64; 3], [f64; 3])]) -> PointCloud {
        cloud_with_normals(
            v.iter()
                .map(|(p, n)| {
                    let n = Vector3::from(*n);
                    (Vector3::from(*p), (n.norm() > 1e-3).then(|| n.normalize()))
                })
                .collect(),
        )
    }

    proptest! {
        #[test]
        fn widening_theta_never_turns_positive_into_negative(
            v in arb_cloud(), t1 in 0.0f64..80.0, dt in 0.0f64..10.0, k in 1usize..8,
        ) {
            let c = to_cloud(&v);
            let a = label_hand_with(&hand(), &c, &LabelerConfig { k, theta_deg: t1, ..Default::default() }).unwrap();
            let b = label_hand_with(&hand(), &c, &LabelerConfig { k, theta_deg: t1 + dt, ..Default::default() }).unwrap();
            prop_assert!(b.k_plus >= a.k_plus && b.k_minus >= a.k_minus);
            if a.label == Label::Positive {
                prop_assert_eq!(b.label, Label::Positive);
            }
        }

        #[test]
        fn points_outside_region_do_not_matter(
            v in arb_cloud(), shift in prop::array::uniform3(-0.02f64..0.02),
        ) {
            let c = to_cloud(&v);
            let h = hand();
            let base = label_hand(&h, &c, 3, 0.4).unwrap();
            let mut moved = c.clone();
            for p in moved.points.iter_mut() {
                if !h.closing_region_contains(p) {
                    let q = *p + Vector3::from(shift);
                    if !h.closing_region_contains(&q) {
                        *p = q;
                    }
                }
            }
            prop_assert_eq!(label_hand(&h, &moved, 3, 0.4).unwrap(), base);
        }
    }
}
