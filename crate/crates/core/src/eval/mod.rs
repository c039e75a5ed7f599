//! Accuracy, average precision and the cross-source evaluation harness.

mod metrics;
mod report;

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::data::{self, ImageSet, ImageSetOptions, Representation};
use crate::error::{Error, Result};
use crate::nn::{predict, DetectorModel};

pub use metrics::{accuracy, average_precision, ranking, ScoredSet};
pub use report::{EvalReport, MeanRow, Provenance, ReportRow};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest over every `manifest.json` under the corpus sources, in source
/// order; `None` when the corpus carries no manifests.
pub fn corpus_manifest_hash(corpus_root: &Path) -> Result<Option<String>> {
    let mut hasher = Sha256::new();
    let mut found = false;
    for (name, dir) in data::list_sources(corpus_root)? {
        let path = dir.join(crate::synthgen::MANIFEST_FILE);
        if path.is_file() {
            let bytes = std::fs::read(&path)
                .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
            hasher.update(name.as_bytes());
            hasher.update([0u8]);
            hasher.update(&bytes);
            found = true;
        }
    }
    Ok(found.then(|| hex::encode(hasher.finalize())))
}

/// Scores one already-loaded source.
pub fn score_set(model: &DetectorModel<f32>, set: &ImageSet, name: &str, batch_size: usize) -> Result<ScoredSet> {
    let scores = predict(model, set, batch_size)?;
    let labels = set.samples().iter().map(|s| s.label).collect();
    ScoredSet::new(scores, labels, name)
}

/// Evaluates `model` on every source of the corpus with center crops.
///
/// Sources missing a class are reported as invalid rows and left out of the
/// mean.
pub fn evaluate_sources(
    model: &DetectorModel<f32>,
    corpus_root: &Path,
    representation: Representation,
    crop: usize,
    batch_size: usize,
) -> Result<EvalReport> {
    let sources = data::list_sources(corpus_root)?;
    if sources.is_empty() {
        return Err(Error::Dataset(format!(
            "no sources found under {}",
            corpus_root.display()
        )));
    }
    let mut rows = Vec::with_capacity(sources.len());
    for (name, dir) in sources {
        let count = |sub: &str| {
            std::fs::read_dir(dir.join(sub))
                .map(|it| it.filter_map(|e| e.ok()).filter(|e| e.path().is_file()).count())
                .unwrap_or(0)
        };
        let ds = match data::load_source(&dir, &name) {
            Ok(ds) => ds,
            Err(Error::Dataset(msg)) => {
                log::warn!("source {name} excluded from the mean: {msg}");
                rows.push(ReportRow {
                    source: name,
                    n_real: count(data::REAL_DIR),
                    n_fake: count(data::FAKE_DIR),
                    acc: None,
                    ap: None,
                    invalid: Some(msg),
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        let counts = ds.counts[&name];
        let set = ImageSet::new(
            ds.samples,
            ImageSetOptions {
                crop,
                random_crop: false,
                seed: 0,
                allow_upscale: true,
                representation,
            },
        )?;
        if set.upscaled_count() > 0 {
            log::warn!("{}: {} images enlarged to reach the crop", name, set.upscaled_count());
        }
        let scored = score_set(model, &set, &name, batch_size)?;
        rows.push(ReportRow {
            source: name,
            n_real: counts.real,
            n_fake: counts.fake,
            acc: Some(accuracy(&scored, 0.5)?),
            ap: Some(average_precision(&scored)?),
            invalid: None,
        });
    }
    Ok(EvalReport::from_rows(rows))
}
