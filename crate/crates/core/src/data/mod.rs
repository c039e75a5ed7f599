//! Corpus ingestion, preprocessing, train/validation splits and batching.
//!
//! A corpus root holds one directory per source, each with `0_real/` and
//! `1_fake/` class directories of PNG or JPEG files:
//!
//! ```text
//! <root>/<source>/0_real/*.png
//! <root>/<source>/1_fake/*.png
//! ```
//! Anything else in the tree is ignored.

mod batch;
mod preprocess;
mod source;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub use batch::{epoch_order, make_batches, Batch, Batches};
pub use preprocess::{preprocess, CropMode, Preprocessed, DEFAULT_CROP};
pub use source::{FeatureSource, ImageSet, ImageSetOptions, MemorySet, Representation};

pub const REAL_DIR: &str = "0_real";
pub const FAKE_DIR: &str = "1_fake";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Sample {
    pub path: PathBuf,
    /// 0 for real, 1 for fake.
    pub label: u8,
    pub source: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub real: usize,
    pub fake: usize,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub counts: BTreeMap<String, ClassCounts>,
    pub warnings: Vec<String>,
}

fn is_image_file(path: &Path) -> Option<bool> {
    let ext = path.extension()?.to_str()?.to_ascii_lowercase();
    match ext.as_str() {
        "png" => Some(false),
        "jpg" | "jpeg" => Some(true),
        _ => None,
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = std::fs::read_dir(dir)
        .map_err(|e| Error::io(format!("listing {}", dir.display()), e))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
    entries.sort();
    Ok(entries)
}

fn header_ok(path: &Path) -> std::result::Result<(), String> {
    image::ImageReader::open(path)
        .map_err(|e| e.to_string())?
        .with_guessed_format()
        .map_err(|e| e.to_string())?
        .into_dimensions()
        .map(|_| ())
        .map_err(|e| e.to_string())
}

fn load_class(dir: &Path, label: u8, source: &str, out: &mut Dataset) -> Result<usize> {
    if !dir.is_dir() {
        return Err(Error::Dataset(format!(
            "source '{source}' has no {} directory",
            dir.display()
        )));
    }
    let mut n = 0;
    for path in sorted_entries(dir)? {
        if !path.is_file() {
            continue;
        }
        let Some(lossy) = is_image_file(&path) else {
            continue;
        };
        if let Err(msg) = header_ok(&path) {
            let w = format!("skipping undecodable {}: {msg}", path.display());
            log::warn!("{w}");
            out.warnings.push(w);
            continue;
        }
        if lossy {
            let w = format!("{} is JPEG; lossy compression attenuates NPR traces", path.display());
            log::warn!("{w}");
            out.warnings.push(w);
        }
        out.samples.push(Sample {
            path,
            label,
            source: source.to_string(),
        });
        n += 1;
    }
    if n == 0 {
        return Err(Error::Dataset(format!(
            "class directory {} is empty",
            dir.display()
        )));
    }
    Ok(n)
}

/// Samples of one source directory holding `0_real/` and `1_fake/`.
pub fn load_source(dir: &Path, name: &str) -> Result<Dataset> {
    let mut ds = Dataset::default();
    let real = load_class(&dir.join(REAL_DIR), 0, name, &mut ds)?;
    let fake = load_class(&dir.join(FAKE_DIR), 1, name, &mut ds)?;
    ds.counts.insert(name.to_string(), ClassCounts { real, fake });
    Ok(ds)
}

fn is_source_dir(dir: &Path) -> bool {
    dir.join(REAL_DIR).is_dir() || dir.join(FAKE_DIR).is_dir()
}

/// Source directories under `root` in lexicographic order. A root that is
/// itself a source directory yields just itself.
pub fn list_sources(root: &Path) -> Result<Vec<(String, PathBuf)>> {
    if !root.is_dir() {
        return Err(Error::Dataset(format!("{} is not a directory", root.display())));
    }
    let name_of = |p: &Path| {
        p.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "corpus".into())
    };
    if is_source_dir(root) {
        return Ok(vec![(name_of(root), root.to_path_buf())]);
    }
    Ok(sorted_entries(root)?
        .into_iter()
        .filter(|p| p.is_dir() && is_source_dir(p))
        .map(|p| (name_of(&p), p))
        .collect())
}

/// Every sample of every source under `root`, in lexicographic path order.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let sources = list_sources(root)?;
    if sources.is_empty() {
        return Err(Error::Dataset(format!(
            "no <source>/{{{REAL_DIR},{FAKE_DIR}}} directories under {}",
            root.display()
        )));
    }
    let mut all = Dataset::default();
    for (name, dir) in sources {
        let ds = load_source(&dir, &name)?;
        log::info!(
            "source {name}: {} real, {} fake",
            ds.counts[&name].real,
            ds.counts[&name].fake
        );
        all.samples.extend(ds.samples);
        all.counts.extend(ds.counts);
        all.warnings.extend(ds.warnings);
    }
    all.samples.sort();
    Ok(all)
}

/// Disjoint train / validation partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub seed: u64,
    pub fraction: f64,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
}

/// Stratified split: within each class the samples (sorted by path) are
/// shuffled with a seeded stream and the first `round(fraction · n)` go to
/// validation, keeping at least one sample on each side.
pub fn split_dataset(samples: &[Sample], fraction: f64, seed_value: u64) -> Result<DatasetSplit> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("validation fraction {fraction} outside (0, 1)")));
    }
    let mut sorted = samples.to_vec();
    sorted.sort();
    sorted.dedup();
    let mut train = Vec::new();
    let mut val = Vec::new();
    for label in [0u8, 1] {
        let mut class: Vec<Sample> = sorted.iter().filter(|s| s.label == label).cloned().collect();
        if class.len() < 2 {
            let dir = if label == 0 { REAL_DIR } else { FAKE_DIR };
            return Err(Error::Dataset(format!(
                "class {dir} has {} samples; at least 2 are needed to split",
                class.len()
            )));
        }
        let mut rng = seed::rng(seed::derive(seed_value, &[seed::hash_str("split"), label as u64]));
        class.shuffle(&mut rng);
        let n_val = ((class.len() as f64 * fraction).round() as usize).clamp(1, class.len() - 1);
        let rest = class.split_off(n_val);
        val.extend(class);
        train.extend(rest);
    }
    train.sort();
    val.sort();
    Ok(DatasetSplit {
        seed: seed_value,
        fraction,
        train,
        val,
    })
}
