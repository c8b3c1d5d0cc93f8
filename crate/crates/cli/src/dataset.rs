//! Dataset loading: a directory of PNG/JPEG files, ordered by file name so
//! runs are reproducible.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ufse_core::tensor::Tensor;

use crate::imageio::read_image;

pub fn image_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        bail!("dataset directory {} does not exist", dir.display());
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()),
                Some(ref e) if e == "png" || e == "jpg" || e == "jpeg"
            )
        })
        .collect();
    paths.sort();
    Ok(paths)
}

/// Load every PNG/JPEG under `dir` as a 3xHxW tensor in [0, 1].
pub fn load_dir(dir: &Path) -> Result<Vec<Tensor<f32>>> {
    let paths = image_paths(dir)?;
    if paths.is_empty() {
        bail!("dataset directory {} holds no PNG/JPEG images", dir.display());
    }
    paths.iter().map(|p| read_image(p)).collect()
}

/// Load at most `limit` images (in name order).
pub fn load_dir_limited(dir: &Path, limit: usize) -> Result<Vec<Tensor<f32>>> {
    let mut all = image_paths(dir)?;
    if all.is_empty() {
        bail!("dataset directory {} holds no PNG/JPEG images", dir.display());
    }
    all.truncate(limit.max(1));
    all.iter().map(|p| read_image(p)).collect()
}
