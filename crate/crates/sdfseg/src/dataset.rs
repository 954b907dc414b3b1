//! Dataset directories: `sample_%05d.mask.pgm`, `.img.pgm`, `.sdf.bin`
//! per sample plus a `manifest.json` index.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use sdfseg_core::train::{SyntheticSample, TrainExample};
use sdfseg_core::{BinaryMask, CondImage, SdfMap};

use crate::error::{CliError, Result};
use crate::formats;

pub const MANIFEST: &str = "manifest.json";
pub const FORMAT: &str = "sdfseg-dataset-v1";

pub fn stem(index: usize) -> String {
    format!("sample_{index:05}")
}

pub fn file(dir: &Path, index: usize, suffix: &str) -> PathBuf {
    dir.join(format!("{}.{suffix}", stem(index)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: String,
    pub seed: u64,
    pub foreground: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub n: usize,
    pub grid: usize,
    pub seed: u64,
    pub delta: f64,
    pub config_hash: String,
    pub samples: Vec<SampleEntry>,
}

/// One stored sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    pub index: usize,
    pub mask: BinaryMask,
    pub image: CondImage,
    pub sdf: SdfMap,
}

impl From<&Item> for TrainExample {
    fn from(it: &Item) -> Self {
        TrainExample {
            mask: it.mask.clone(),
            sdf: it.sdf.clone(),
            image: it.image.clone(),
        }
    }
}

/// True when `name` is a file this module writes.
fn is_dataset_file(name: &str) -> bool {
    name == MANIFEST || name.starts_with("sample_")
}

/// Creates `dir`, refusing to touch a non-empty directory unless `force`,
/// in which case files from a previous dataset are removed first.
pub fn prepare_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let entries: Vec<_> = fs::read_dir(dir)
            .map_err(CliError::io(dir))?
            .collect::<std::io::Result<_>>()
            .map_err(CliError::io(dir))?;
        if !entries.is_empty() && !force {
            return Err(CliError::Usage(format!(
                "{} is not empty; pass --force to overwrite",
                dir.display()
            )));
        }
        for e in entries {
            let name = e.file_name();
            if is_dataset_file(&name.to_string_lossy()) && e.path().is_file() {
                fs::remove_file(e.path()).map_err(CliError::io(&e.path()))?;
            }
        }
    }
    fs::create_dir_all(dir).map_err(CliError::io(dir))
}

pub fn write(dir: &Path, samples: &[SyntheticSample], grid: usize, seed: u64, delta: f64, config_hash: &str) -> Result<()> {
    let mut entries = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        formats::write_mask(&file(dir, i, "mask.pgm"), &s.mask)?;
        formats::write_image(&file(dir, i, "img.pgm"), &s.image)?;
        formats::write_sdf(&file(dir, i, "sdf.bin"), &s.sdf)?;
        entries.push(SampleEntry {
            id: stem(i),
            seed: s.seed,
            foreground: s.mask.foreground_count(),
        });
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        n: samples.len(),
        grid,
        seed,
        delta,
        config_hash: config_hash.into(),
        samples: entries,
    };
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Internal(e.to_string()))?;
    text.push('\n');
    formats::write_bytes(&dir.join(MANIFEST), text.as_bytes())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let bytes = formats::read_bytes(&path)?;
    let m: Manifest = serde_json::from_slice(&bytes).map_err(|e| CliError::format(&path, e.to_string()))?;
    if m.format != FORMAT || m.samples.len() != m.n {
        return Err(CliError::format(&path, "unsupported or inconsistent manifest"));
    }
    Ok(m)
}

pub fn read_item(dir: &Path, index: usize) -> Result<Item> {
    let mask = formats::read_mask(&file(dir, index, "mask.pgm"))?;
    let image = formats::read_image(&file(dir, index, "img.pgm"))?;
    let sdf = formats::read_sdf(&file(dir, index, "sdf.bin"))?;
    if image.dims() != mask.dims() || sdf.dims() != mask.dims() {
        return Err(CliError::Data(format!("{} has inconsistent dimensions", stem(index))));
    }
    Ok(Item {
        index,
        mask,
        image,
        sdf,
    })
}

/// Reads the first `limit` samples (all when `limit == 0`).
pub fn read(dir: &Path, limit: usize) -> Result<(Manifest, Vec<Item>)> {
    let m = read_manifest(dir)?;
    let n = if limit == 0 { m.n } else { limit.min(m.n) };
    let items = (0..n).map(|i| read_item(dir, i)).collect::<Result<Vec<_>>>()?;
    Ok((m, items))
}

/// Indices `i` for which `dir` holds `sample_%05d.<suffix>`, ascending.
pub fn indices_with(dir: &Path, suffix: &str) -> Result<Vec<usize>> {
    let tail = format!(".{suffix}");
    let mut out = Vec::new();
    for e in fs::read_dir(dir).map_err(CliError::io(dir))? {
        let name = e.map_err(CliError::io(dir))?.file_name();
        let name = name.to_string_lossy();
        if let Some(num) = name.strip_prefix("sample_").and_then(|r| r.strip_suffix(&tail)) {
            if num.len() == 5 {
                if let Ok(i) = num.parse::<usize>() {
                    out.push(i);
                }
            }
        }
    }
    out.sort_unstable();
    Ok(out)
}
