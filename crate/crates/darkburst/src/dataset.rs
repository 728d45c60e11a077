//! Directories of DBRAW bursts and their generator manifests.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use darkburst_core::raw::preprocess_burst;
use darkburst_core::synth::BurstContainer;
use darkburst_core::train::TrainingBurst;

use crate::dbraw;
use crate::kv::KeyValues;

pub const MANIFEST: &str = "manifest.txt";

/// `*.dbraw` files in `dir`, sorted by file name.
pub fn burst_paths(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("cannot read directory {}", dir.display()))? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == dbraw::EXTENSION) {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

pub fn burst_name(path: &Path) -> String {
    path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned())
}

pub fn load_bursts(dir: &Path) -> anyhow::Result<Vec<(String, BurstContainer)>> {
    let paths = burst_paths(dir)?;
    if paths.is_empty() {
        bail!("no .{} files in {}", dbraw::EXTENSION, dir.display());
    }
    paths
        .iter()
        .map(|p| {
            let c = dbraw::read(p).with_context(|| format!("reading {}", p.display()))?;
            Ok((burst_name(p), c))
        })
        .collect()
}

/// The amplification ratio recorded by the generator next to `dir`'s bursts.
pub fn recorded_ratio(dir: &Path) -> anyhow::Result<Option<f32>> {
    let path = dir.join(MANIFEST);
    if !path.exists() {
        return Ok(None);
    }
    let kv = KeyValues::read(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(kv.parsed::<f32>("amplification_ratio")?)
}

/// An explicit ratio, else the one recorded in `dir`, else an error.
pub fn resolve_ratio(explicit: Option<f32>, dir: &Path) -> anyhow::Result<f32> {
    let ratio = match explicit {
        Some(r) => r,
        None => recorded_ratio(dir)?.with_context(|| {
            format!(
                "no amplification ratio: pass --ratio or provide {} with amplification_ratio",
                dir.join(MANIFEST).display()
            )
        })?,
    };
    if !(ratio > 0.0) || !ratio.is_finite() {
        bail!("amplification ratio {ratio} must be positive");
    }
    Ok(ratio)
}

/// Every burst of `dir` with its reference. A burst without one is an error.
pub fn load_training_set(dir: &Path, ratio: f32) -> anyhow::Result<Vec<TrainingBurst>> {
    load_bursts(dir)?
        .into_iter()
        .map(|(name, c)| {
            let target = c
                .ground_truth_image()
                .with_context(|| format!("burst {name} has no ground truth; training requires references"))?;
            let burst = preprocess_burst(&c.frames()?, ratio).with_context(|| format!("preprocessing {name}"))?;
            Ok(TrainingBurst::new(burst, target)?)
        })
        .collect()
}
