//! Corpus directories: a `corpus.json` manifest plus one subdirectory per
//! scene holding `scene.json`, `view0.pcd` and `view1.pcd`.

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::CorpusScene;
use crate::cloud::pcd;
use crate::error::{Error, Result};
use crate::io::{write_atomic, write_atomic_with};

pub const MANIFEST: &str = "corpus.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scenes: Vec<String>,
}

pub fn scene_dir_name(i: usize) -> String {
    format!("scene_{i:04}")
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn write_scene(dir: &Path, cs: &CorpusScene) -> Result<()> {
    create_dir(dir)?;
    write_atomic(&dir.join("scene.json"), serde_json::to_string_pretty(cs)?.as_bytes())?;
    for (i, v) in cs.views.iter().enumerate() {
        write_atomic_with(&dir.join(format!("view{i}.pcd")), |w| pcd::write(v, w))?;
    }
    Ok(())
}

pub fn read_scene(dir: &Path) -> Result<CorpusScene> {
    let path = dir.join("scene.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut cs: CorpusScene = serde_json::from_str(&text)?;
    for (i, v) in cs.views.iter_mut().enumerate() {
        *v = pcd::read_file(&dir.join(format!("view{i}.pcd")), Vector3::zeros())?;
    }
    Ok(cs)
}

/// Writes every scene, then the manifest.
pub fn write_corpus(dir: &Path, scenes: &[CorpusScene]) -> Result<()> {
    create_dir(dir)?;
    let names: Vec<String> = (0..scenes.len()).map(scene_dir_name).collect();
    for (name, cs) in names.iter().zip(scenes) {
        write_scene(&dir.join(name), cs)?;
    }
    let manifest = Manifest { scenes: names };
    write_atomic(&dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?.as_bytes())
}

pub fn read_corpus(dir: &Path) -> Result<Vec<CorpusScene>> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    manifest.scenes.iter().map(|s| read_scene(&dir.join(s))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{make_corpus_with, CorpusOptions, Preset};

    #[test]
    fn corpus_round_trips_byte_for_byte() {
        let opts = CorpusOptions {
            width: 48,
            height: 32,
            ..Default::default()
        };
        let corpus = make_corpus_with(Preset::Clutter(3), 2, 5, &opts).unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_corpus(a.path(), &corpus).unwrap();
        let back = read_corpus(a.path()).unwrap();
        assert_eq!(back, corpus);
        write_corpus(b.path(), &back).unwrap();
        for f in ["corpus.json", "scene_0001/scene.json", "scene_0001/view0.pcd", "scene_0001/view1.pcd"] {
            assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
        }
    }

    #[test]
    fn missing_manifest_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_corpus(dir.path()), Err(Error::Io { .. })));
    }
}
