//! Writing synthetic scenes to disk.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use leishcount::raster::save_manifest;
use leishcount::synth::{generate, SceneSpec};

#[derive(Clone, Debug)]
pub struct SceneFiles {
    pub manifest: PathBuf,
    pub truth: PathBuf,
    pub rgb: Option<PathBuf>,
}

/// Render `spec` and write its channel manifest, plane PNGs and ground truth
/// under `dir`, all named after `stem`.
pub fn write_scene(spec: &SceneSpec, dir: &Path, stem: &str, rgb: bool) -> Result<SceneFiles> {
    let (channels, truth) = generate(spec)?;
    let manifest = save_manifest(&channels, dir, stem)?;
    let truth_path = dir.join(format!("{stem}_truth.json"));
    std::fs::write(&truth_path, serde_json::to_string_pretty(&truth)?)
        .with_context(|| format!("cannot write {}", truth_path.display()))?;
    let rgb = if rgb {
        let path = dir.join(format!("{stem}.png"));
        channels.to_rgb().save_png(&path)?;
        Some(path)
    } else {
        None
    };
    Ok(SceneFiles {
        manifest,
        truth: truth_path,
        rgb,
    })
}

/// `count` scenes with seeds `spec.seed`, `spec.seed + 1`, ...
pub fn write_scenes(spec: &SceneSpec, count: usize, dir: &Path, stem: &str, rgb: bool) -> Result<Vec<SceneFiles>> {
    spec.validate()?;
    (0..count)
        .map(|i| {
            let spec = SceneSpec {
                seed: spec.seed.wrapping_add(i as u64),
                ..spec.clone()
            };
            let name = if count == 1 { stem.to_string() } else { format!("{stem}_{i:03}") };
            write_scene(&spec, dir, &name, rgb)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use leishcount::raster::load_image;
    use leishcount::synth::GroundTruth;

    use super::*;

    #[test]
    fn scene_files_load_back() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SceneSpec {
            cluster_sizes: vec![1, 1],
            seed: 3,
            ..SceneSpec::default()
        };
        let files = write_scenes(&spec, 2, dir.path(), "s", true).unwrap();
        assert_eq!(files.len(), 2);
        let (expected, truth) = generate(&SceneSpec { seed: 4, ..spec }).unwrap();
        let loaded = load_image(&files[1].manifest).unwrap();
        assert_eq!(loaded.channels, expected);
        let rgb = load_image(files[1].rgb.as_ref().unwrap()).unwrap();
        assert_eq!(rgb.channels, expected);
        let back: GroundTruth = serde_json::from_str(&std::fs::read_to_string(&files[1].truth).unwrap()).unwrap();
        assert_eq!(back, truth);
    }
}
