//! Stage orchestration: preprocessing, training-set construction, detection
//! and oracle scoring.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{SvmConfig, SvmModel};
use crate::cloud::{crop_workspace, merge_registered, voxelize_anchored, Aabb, NeighborIndex, PointCloud};
use crate::error::{Error, Result};
use crate::features::{Dataset, FeatureConfig, IndexedCloud, ViewTag};
use crate::handgeom::{HandHypothesis, HandParams};
use crate::labeler::{label_hands_indexed, Label, LabelOutcome, LabelerConfig};
use crate::sampler::{sample_hands_among, SamplerConfig};
use crate::seed::{derive_indexed, derive_seed};
use crate::selection::{cluster_hands, rank_grasps, GraspCluster, SelectionConfig};
use crate::surface::estimate_normals;
use crate::synth::{oracle_antipodal, CorpusOptions, CorpusScene, Scene, DEFAULT_FRICTION};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    /// Sample points drawn per training scene.
    pub samples_per_scene: usize,
    /// Cap on labeled hands kept per class across the whole corpus.
    pub max_hands_per_class: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            samples_per_scene: 300,
            max_hands_per_class: 400,
        }
    }
}

/// Everything a run depends on besides its input files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub hand: HandParams,
    /// JSON hand parameter file; overrides `hand` when set. Relative paths
    /// resolve against the config file's directory.
    pub hand_file: Option<PathBuf>,
    /// `sampler.seed` is replaced by a seed derived from `seed`.
    pub sampler: SamplerConfig,
    pub labeler: LabelerConfig,
    pub features: FeatureConfig,
    pub svm: SvmConfig,
    pub selection: SelectionConfig,
    pub training: TrainingConfig,
    pub corpus: CorpusOptions,
    pub seed: u64,
    pub voxel_leaf: f64,
    /// Ball radius for normal estimation.
    pub normal_radius: f64,
    /// Sample points must lie above this height; keeps hands off the table.
    pub min_sample_height: Option<f64>,
    pub friction: f64,
    pub up: [f64; 3],
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            hand: HandParams::default(),
            hand_file: None,
            sampler: SamplerConfig::default(),
            labeler: LabelerConfig::default(),
            features: FeatureConfig::default(),
            svm: SvmConfig::default(),
            selection: SelectionConfig::default(),
            training: TrainingConfig::default(),
            corpus: CorpusOptions::default(),
            seed: 0,
            voxel_leaf: 0.003,
            normal_radius: 0.01,
            min_sample_height: Some(0.005),
            friction: DEFAULT_FRICTION,
            up: [0.0, 0.0, 1.0],
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and loads the referenced hand file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = serde_json::from_str(&text)?;
        if let Some(hf) = &cfg.hand_file {
            let hf = match path.parent() {
                Some(dir) if hf.is_relative() => dir.join(hf),
                _ => hf.clone(),
            };
            cfg.hand = HandParams::load(&hf)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.hand.validate()?;
        self.sampler.validate()?;
        self.labeler.validate()?;
        self.selection.validate()?;
        if !(self.svm.c > 0.0) {
            return Err(Error::invalid("svm.c must be positive"));
        }
        for (name, v) in [
            ("voxel_leaf", self.voxel_leaf),
            ("normal_radius", self.normal_radius),
            ("friction", self.friction),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.training.samples_per_scene == 0 || self.training.max_hands_per_class == 0 {
            return Err(Error::invalid("training counts must be at least 1"));
        }
        if Vector3::from(self.up).norm() < 1e-9 {
            return Err(Error::invalid("up must be nonzero"));
        }
        Ok(())
    }

    pub fn up(&self) -> Vector3<f64> {
        Vector3::from(self.up).normalize()
    }

    fn sampler_with_seed(&self, seed: u64) -> SamplerConfig {
        SamplerConfig { seed, ..self.sampler }
    }
}

/// A cropped, voxelized cloud with normals and its per-view subsets.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub merged: PointCloud,
    pub index: NeighborIndex,
    /// One cloud per view id, in id order.
    pub views: Vec<PointCloud>,
    /// Points eligible as sample points.
    pub candidates: Vec<usize>,
    pub workspace: Aabb,
    pub raw_points: usize,
}

/// Merges registered views, crops to `workspace`, voxelizes on a grid
/// anchored at the workspace minimum and estimates normals.
pub fn preprocess(views: &[PointCloud], workspace: &Aabb, cfg: &PipelineConfig) -> Result<Prepared> {
    let mut merged = PointCloud::default();
    for v in views {
        merged = merge_registered(&merged, v)?;
    }
    let raw_points = merged.len();
    let cropped = crop_workspace(&merged, workspace)?;
    if cropped.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let voxels = voxelize_anchored(&cropped, cfg.voxel_leaf, workspace.min)?;
    let merged = estimate_normals(&voxels, cfg.normal_radius)?;
    let views = merged.view_origins.keys().map(|&id| merged.view_subset(id)).collect();
    let candidates = (0..merged.len())
        .filter(|&i| merged.normal(i).is_some())
        .filter(|&i| cfg.min_sample_height.is_none_or(|h| merged.points[i].z > h))
        .collect();
    Ok(Prepared {
        index: merged.index(),
        merged,
        views,
        candidates,
        workspace: *workspace,
        raw_points,
    })
}

pub fn sample(prep: &Prepared, cfg: &PipelineConfig, n_samples: usize, seed: u64) -> Result<Vec<HandHypothesis>> {
    let scfg = SamplerConfig {
        n_samples,
        ..cfg.sampler_with_seed(seed)
    };
    sample_hands_among(&prep.merged, &prep.index, &prep.candidates, &cfg.hand, &scfg)
}

pub fn label(prep: &Prepared, hands: &[HandHypothesis], cfg: &PipelineConfig) -> Result<Vec<LabelOutcome>> {
    label_hands_indexed(hands, &prep.merged, &prep.index, &cfg.labeler)
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub scenes: usize,
    pub hypotheses: usize,
    pub labeled_positive: usize,
    pub labeled_negative: usize,
    pub indeterminate: usize,
    pub kept_positive: usize,
    pub kept_negative: usize,
    pub rows: usize,
    pub empty_view_rows: usize,
}

/// Scene index, hand and label.
pub type LabeledHandRow = (usize, HandHypothesis, bool);

/// Labeled hands from every scene, capped per class by a seeded draw.
pub fn labeled_hands(scenes: &[CorpusScene], cfg: &PipelineConfig) -> Result<(Vec<LabeledHandRow>, TrainingSummary)> {
    let mut summary = TrainingSummary {
        scenes: scenes.len(),
        ..Default::default()
    };
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (si, cs) in scenes.iter().enumerate() {
        let prep = preprocess(&cs.views, &cs.workspace, cfg)?;
        let seed = derive_indexed(cfg.seed, "train-sample", si as u64);
        let hands = sample(&prep, cfg, cfg.training.samples_per_scene, seed)?;
        let outcomes = label(&prep, &hands, cfg)?;
        summary.hypotheses += hands.len();
        for (h, o) in hands.into_iter().zip(outcomes) {
            match o.label {
                Label::Positive => pos.push((si, h, true)),
                Label::Negative => neg.push((si, h, false)),
                Label::Indeterminate => summary.indeterminate += 1,
            }
        }
    }
    summary.labeled_positive = pos.len();
    summary.labeled_negative = neg.len();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "train-balance"));
    let cap = cfg.training.max_hands_per_class;
    for class in [&mut pos, &mut neg] {
        if class.len() > cap {
            class.shuffle(&mut rng);
            class.truncate(cap);
            class.sort_by_key(|(si, h, _)| (*si, h.source_point, h.grid_cell));
        }
    }
    summary.kept_positive = pos.len();
    summary.kept_negative = neg.len();
    let mut all = pos;
    all.extend(neg);
    all.sort_by_key(|(si, h, _)| (*si, h.source_point, h.grid_cell));
    Ok((all, summary))
}

/// Three descriptors per labeled hand (first view, second view, merged),
/// all carrying the hand's label.
pub fn build_training_set(scenes: &[CorpusScene], cfg: &PipelineConfig) -> Result<(Dataset, TrainingSummary)> {
    let (hands, mut summary) = labeled_hands(scenes, cfg)?;
    let mut ds = Dataset {
        dim: crate::features::DESCRIPTOR_LEN,
        ..Default::default()
    };
    let mut start = 0;
    while start < hands.len() {
        let si = hands[start].0;
        let end = start + hands[start..].iter().take_while(|(s, _, _)| *s == si).count();
        let cs = &scenes[si];
        let prep = preprocess(&cs.views, &cs.workspace, cfg)?;
        if prep.views.len() != 2 {
            return Err(Error::invalid(format!("training scene {si} needs two views")));
        }
        let clouds = [
            (IndexedCloud::new(&prep.views[0]), ViewTag::First),
            (IndexedCloud::new(&prep.views[1]), ViewTag::Second),
            (IndexedCloud::new(&prep.merged), ViewTag::Merged),
        ];
        let rows: Vec<Vec<(Vec<f64>, bool)>> = hands[start..end]
            .par_iter()
            .map(|(_, h, _)| clouds.iter().map(|(c, _)| c.descriptor(h, &cfg.features)).collect())
            .collect();
        for ((_, _, positive), triple) in hands[start..end].iter().zip(rows) {
            for ((d, empty), (_, tag)) in triple.into_iter().zip(&clouds) {
                summary.empty_view_rows += empty as usize;
                ds.push(&d, if *positive { 1 } else { -1 }, *tag)?;
            }
        }
        start = end;
    }
    summary.rows = ds.len();
    Ok((ds, summary))
}

/// Hypotheses whose descriptors are held in memory at once.
const CLASSIFY_CHUNK: usize = 4096;

/// How hypotheses are filtered before clustering.
#[derive(Debug, Clone, Copy)]
pub enum Classifier<'a> {
    Svm(&'a SvmModel),
    /// Near-antipodal test on the input cloud.
    Label,
    /// Every hypothesis counts as positive.
    Passthrough,
}

/// Counts at each stage of a detection run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Funnel {
    pub raw_points: usize,
    pub prepared_points: usize,
    pub samples: usize,
    pub hypotheses: usize,
    pub positives: usize,
    pub clusters: usize,
}

#[derive(Debug, Clone)]
pub struct Detection {
    pub hypotheses: Vec<HandHypothesis>,
    /// Indices of positive hypotheses.
    pub positives: Vec<usize>,
    /// Scores of the positive hypotheses, parallel to `positives`.
    pub scores: Vec<f64>,
    /// Ranked clusters; member indices refer to `positives`.
    pub ranked: Vec<GraspCluster>,
    pub funnel: Funnel,
    pub times: StageTimes,
}

/// Wall-clock time per detection stage.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimes {
    pub sample: Duration,
    pub classify: Duration,
    pub select: Duration,
}

impl Detection {
    pub fn positive_hands(&self) -> Vec<HandHypothesis> {
        self.positives.iter().map(|&i| self.hypotheses[i]).collect()
    }

    /// Representative pose of each ranked cluster.
    pub fn grasps(&self) -> Vec<HandHypothesis> {
        let hands = self.positive_hands();
        self.ranked.iter().map(|c| c.representative(&hands)).collect()
    }
}

/// Scores every hypothesis; `None` marks a rejected hand.
pub fn classify(prep: &Prepared, hands: &[HandHypothesis], classifier: Classifier<'_>, cfg: &PipelineConfig) -> Result<Vec<Option<f64>>> {
    match classifier {
        Classifier::Passthrough => Ok(vec![Some(0.0); hands.len()]),
        Classifier::Label => Ok(label(prep, hands, cfg)?
            .into_iter()
            .map(|o| (o.label == Label::Positive).then(|| o.k_plus.min(o.k_minus) as f64))
            .collect()),
        Classifier::Svm(model) => {
            if model.dim() != crate::features::DESCRIPTOR_LEN {
                return Err(Error::DimensionMismatch {
                    expected: crate::features::DESCRIPTOR_LEN,
                    got: model.dim(),
                });
            }
            let cloud = IndexedCloud {
                cloud: &prep.merged,
                index: prep.index.clone(),
            };
            let mut out = Vec::with_capacity(hands.len());
            for chunk in hands.chunks(CLASSIFY_CHUNK) {
                let rows: Vec<Vec<f32>> = chunk
                    .par_iter()
                    .map(|h| to_f32(&cloud.descriptor(h, &cfg.features).0))
                    .collect();
                out.extend(model.predict_batch(&rows)?.into_iter().map(|p| (p.label > 0).then_some(p.score)));
            }
            Ok(out)
        }
    }
}

/// Sample, classify, cluster and rank on a prepared cloud.
pub fn detect(prep: &Prepared, classifier: Classifier<'_>, cfg: &PipelineConfig, seed: u64) -> Result<Detection> {
    let t0 = Instant::now();
    let hypotheses = sample(prep, cfg, cfg.sampler.n_samples, seed)?;
    let t1 = Instant::now();
    let scored = classify(prep, &hypotheses, classifier, cfg)?;
    let t2 = Instant::now();
    let (positives, scores): (Vec<usize>, Vec<f64>) = scored
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.map(|s| (i, s)))
        .unzip();
    let hands: Vec<HandHypothesis> = positives.iter().map(|&i| hypotheses[i]).collect();
    let clusters = cluster_hands(&hands, &scores, &cfg.selection)?;
    let reference = (prep.workspace.min + prep.workspace.max) / 2.0;
    let ranked = rank_grasps(clusters, &reference, &cfg.up());
    let times = StageTimes {
        sample: t1 - t0,
        classify: t2 - t1,
        select: t2.elapsed(),
    };
    let funnel = Funnel {
        raw_points: prep.raw_points,
        prepared_points: prep.merged.len(),
        samples: cfg.sampler.n_samples,
        hypotheses: hypotheses.len(),
        positives: positives.len(),
        clusters: ranked.len(),
    };
    Ok(Detection {
        hypotheses,
        positives,
        scores,
        ranked,
        funnel,
        times,
    })
}

/// Oracle scoring of one detection run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SceneEval {
    pub reported: usize,
    pub reported_antipodal: usize,
    /// Fraction of reported grasps that are antipodal; `None` if none reported.
    pub precision: Option<f64>,
    pub top_antipodal: Option<bool>,
    pub hypotheses: usize,
    pub hypotheses_antipodal: usize,
    pub positives_antipodal: usize,
    /// Fraction of antipodal hypotheses kept as positives.
    pub recall: Option<f64>,
}

pub fn evaluate(scene: &Scene, det: &Detection, mu: f64) -> SceneEval {
    let grasps = det.grasps();
    let ok: Vec<bool> = grasps.par_iter().map(|g| oracle_antipodal(scene, g, mu)).collect();
    let truth: Vec<bool> = det.hypotheses.par_iter().map(|h| oracle_antipodal(scene, h, mu)).collect();
    let reported_antipodal = ok.iter().filter(|&&b| b).count();
    let hypotheses_antipodal = truth.iter().filter(|&&b| b).count();
    let positives_antipodal = det.positives.iter().filter(|&&i| truth[i]).count();
    SceneEval {
        reported: grasps.len(),
        reported_antipodal,
        precision: (!grasps.is_empty()).then(|| reported_antipodal as f64 / grasps.len() as f64),
        top_antipodal: ok.first().copied(),
        hypotheses: det.hypotheses.len(),
        hypotheses_antipodal,
        positives_antipodal,
        recall: (hypotheses_antipodal > 0).then(|| positives_antipodal as f64 / hypotheses_antipodal as f64),
    }
}

/// Seed for detection on scene `i` of a run.
pub fn detect_seed(cfg: &PipelineConfig, i: usize) -> u64 {
    derive_indexed(cfg.seed, "detect", i as u64)
}
