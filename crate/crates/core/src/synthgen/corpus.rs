use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::decoder::{generate_fake, Decoder, DecoderSpec};
use super::real::procedural_real;
use crate::data::{self, preprocess, CropMode, FAKE_DIR, REAL_DIR};
use crate::error::{Error, Result};
use crate::npr::ImageTensor;
use crate::seed;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Where real images come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RealSource {
    Procedural,
    Directory(PathBuf),
}

impl Serialize for RealSource {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            RealSource::Procedural => s.serialize_str("procedural"),
            RealSource::Directory(p) => s.serialize_str(&p.to_string_lossy()),
        }
    }
}

impl<'de> Deserialize<'de> for RealSource {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(if s == "procedural" {
            RealSource::Procedural
        } else {
            RealSource::Directory(PathBuf::from(s))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceConfig {
    pub name: String,
    pub decoder: DecoderSpec,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub root: PathBuf,
    pub sources: Vec<SourceConfig>,
    /// Images per class and source.
    pub count: usize,
    pub image_size: usize,
    pub seed: u64,
    pub real_source: RealSource,
}

/// Everything needed to regenerate one source bit-exactly.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub source_name: String,
    /// Seed of the real images; image `i` uses `derive(seed, [i])`.
    pub seed: u64,
    pub decoder: DecoderSpec,
    pub count: usize,
    pub image_size: usize,
    pub real_source: RealSource,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }
}

fn image_seed(source_seed: u64, index: usize) -> u64 {
    seed::derive(source_seed, &[index as u64])
}

/// 8-bit round trip, so fakes derive from exactly the stored real.
fn quantized(img: &ImageTensor) -> Result<ImageTensor> {
    let data = img
        .data()
        .iter()
        .map(|&v| crate::npr::quantize_unit(v))
        .collect();
    ImageTensor::new(img.height(), img.width(), img.channels(), data)
}

fn directory_reals(dir: &Path, count: usize) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(format!("listing {}", dir.display()), e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
                    .unwrap_or(false)
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Dataset(format!("real-image directory {} is empty", dir.display())));
    }
    if files.len() < count {
        return Err(Error::Dataset(format!(
            "real-image directory {} holds {} images, {count} requested",
            dir.display(),
            files.len()
        )));
    }
    files.truncate(count);
    Ok(files)
}

fn create_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(format!("creating {}", p.display()), e))
}

/// Checks a manifest and resolves its real-image files, without writing.
fn prepare(manifest: &Manifest) -> Result<(Decoder, Option<Vec<PathBuf>>)> {
    let decoder = Decoder::from_spec(manifest.decoder)?;
    let factor = manifest.decoder.factor();
    if manifest.count == 0 {
        return Err(Error::Config("image count must be positive".into()));
    }
    if manifest.image_size == 0 || manifest.image_size % factor != 0 {
        return Err(Error::Config(format!(
            "image size {} is not a positive multiple of the decoder factor {factor}",
            manifest.image_size
        )));
    }
    let files = match &manifest.real_source {
        RealSource::Procedural => {
            if manifest.image_size < super::MIN_REAL_SIZE {
                return Err(Error::Config(format!(
                    "procedural reals need image size ≥ {}",
                    super::MIN_REAL_SIZE
                )));
            }
            None
        }
        RealSource::Directory(d) => Some(directory_reals(d, manifest.count)?),
    };
    Ok((decoder, files))
}

/// Writes one source described by `manifest` under `root/<source_name>`.
pub fn build_source(root: &Path, manifest: &Manifest) -> Result<()> {
    let (decoder, files) = prepare(manifest)?;
    write_source(root, manifest, &decoder, files.as_deref())
}

fn write_source(root: &Path, manifest: &Manifest, decoder: &Decoder, files: Option<&[PathBuf]>) -> Result<()> {
    let dir = root.join(&manifest.source_name);
    let real_dir = dir.join(REAL_DIR);
    let fake_dir = dir.join(FAKE_DIR);
    create_dir(&real_dir)?;
    create_dir(&fake_dir)?;

    let size = manifest.image_size;
    (0..manifest.count).into_par_iter().try_for_each(|i| -> Result<()> {
        let real = match &files {
            None => procedural_real(image_seed(manifest.seed, i), size, size)?,
            Some(files) => {
                let img = ImageTensor::load(&files[i])?;
                preprocess(&img, size, CropMode::Center, true)?.image
            }
        };
        let real = quantized(&real)?;
        let fake = generate_fake(&real, decoder)?;
        let name = format!("{i:05}.png");
        real.save_png(&real_dir.join(&name))?;
        fake.save_png(&fake_dir.join(&name))
    })?;

    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, manifest.to_json())
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Builds every configured source and returns their manifests.
pub fn build_corpus(config: &CorpusConfig) -> Result<Vec<Manifest>> {
    if config.sources.is_empty() {
        return Err(Error::Config("no sources requested".into()));
    }
    let mut names: Vec<&str> = config.sources.iter().map(|s| s.name.as_str()).collect();
    names.sort_unstable();
    if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::Config(format!("duplicate source name '{}'", w[0])));
    }
    for s in &config.sources {
        if s.name.is_empty() || s.name.contains(['/', '\\']) || s.name.starts_with('.') {
            return Err(Error::Config(format!("invalid source name '{}'", s.name)));
        }
    }
    let mut plans = Vec::with_capacity(config.sources.len());
    for s in &config.sources {
        let manifest = Manifest {
            source_name: s.name.clone(),
            seed: seed::derive(config.seed, &[seed::hash_str(&s.name)]),
            decoder: s.decoder,
            count: config.count,
            image_size: config.image_size,
            real_source: config.real_source.clone(),
        };
        let (decoder, files) = prepare(&manifest)?;
        plans.push((manifest, decoder, files));
    }
    create_dir(&config.root)?;
    let mut manifests = Vec::with_capacity(plans.len());
    for (manifest, decoder, files) in plans {
        log::info!(
            "generating source {} ({} {} stage(s), {} per class)",
            manifest.source_name,
            manifest.decoder.upsample_kind,
            manifest.decoder.depth,
            manifest.count
        );
        write_source(&config.root, &manifest, &decoder, files.as_deref())?;
        manifests.push(manifest);
    }
    Ok(manifests)
}

/// Regenerates a source from its manifest file into `root`.
pub fn regenerate(manifest_path: &Path, root: &Path) -> Result<Manifest> {
    let manifest = Manifest::load(manifest_path)?;
    build_source(root, &manifest)?;
    Ok(manifest)
}

/// Manifests of every source under `root`.
pub fn read_manifests(root: &Path) -> Result<Vec<Manifest>> {
    data::list_sources(root)?
        .into_iter()
        .map(|(_, dir)| dir.join(MANIFEST_FILE))
        .filter(|p| p.is_file())
        .map(|p| Manifest::load(&p))
        .collect()
}
