//! Shared fixtures for the benchmarks.

use gpd::classifier::{train, SvmModel};
use gpd::pipeline::{build_training_set, preprocess, PipelineConfig, Prepared};
use gpd::synth::{make_corpus_with, Preset};

/// A preprocessed two-view clutter scene.
pub fn clutter_scene(objects: usize, seed: u64) -> Prepared {
    let cfg = PipelineConfig::default();
    let cs = make_corpus_with(Preset::Clutter(objects), 1, seed, &cfg.corpus).expect("corpus");
    preprocess(&cs[0].views, &cs[0].workspace, &cfg).expect("preprocess")
}

/// A small model trained on a few single-object scenes.
pub fn small_model(seed: u64) -> SvmModel {
    let mut cfg = PipelineConfig {
        seed,
        ..Default::default()
    };
    cfg.training.samples_per_scene = 150;
    cfg.training.max_hands_per_class = 100;
    let corpus = make_corpus_with(Preset::SingleObject, 4, seed, &cfg.corpus).expect("corpus");
    let (ds, _) = build_training_set(&corpus, &cfg).expect("training set");
    train(&ds.rows, &ds.labels, &cfg.svm).expect("train").0
}
