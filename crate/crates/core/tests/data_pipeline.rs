use std::collections::HashSet;
use std::path::{Path, PathBuf};

use npr_core::data::{
    load_dataset, make_batches, split_dataset, FeatureSource, ImageSet, ImageSetOptions, MemorySet,
    Representation, Sample, FAKE_DIR, REAL_DIR,
};
use npr_core::synthgen::{build_corpus, CorpusConfig, DecoderSpec, RealSource, SourceConfig, UpsampleKind};
use npr_core::{GridSpec, ImageTensor};
use proptest::prelude::*;

fn corpus(root: &Path, names: &[&str], count: usize, size: usize) {
    build_corpus(&CorpusConfig {
        root: root.to_path_buf(),
        sources: names
            .iter()
            .enumerate()
            .map(|(i, n)| SourceConfig {
                name: n.to_string(),
                decoder: DecoderSpec {
                    seed: i as u64,
                    upsample_kind: UpsampleKind::Nearest,
                    depth: 1,
                    channels_hidden: 4,
                },
            })
            .collect(),
        count,
        image_size: size,
        seed: 5,
        real_source: RealSource::Procedural,
    })
    .unwrap();
}

#[test]
fn loading_counts_ignores_unknown_directories_and_is_stable() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("c");
    corpus(&root, &["nearest"], 100, 32);
    // Stray content that must not be picked up or mislabeled.
    let extra = root.join("nearest").join(REAL_DIR).join("nested");
    std::fs::create_dir_all(&extra).unwrap();
    ImageTensor::filled(32, 32, 3, 0.5).unwrap().save_png(&extra.join("x.png")).unwrap();
    let junk = root.join("nearest").join("junk");
    std::fs::create_dir_all(&junk).unwrap();
    ImageTensor::filled(32, 32, 3, 0.5).unwrap().save_png(&junk.join("y.png")).unwrap();
    std::fs::write(root.join("nearest").join(FAKE_DIR).join("notes.txt"), "x").unwrap();

    let a = load_dataset(&root).unwrap();
    assert_eq!(a.samples.len(), 200);
    assert_eq!(a.samples.iter().filter(|s| s.label == 1).count(), 100);
    assert_eq!(a.counts["nearest"].real, 100);
    assert_eq!(a.counts["nearest"].fake, 100);
    assert!(a.samples.iter().all(|s| !s.path.starts_with(&extra) && !s.path.starts_with(&junk)));
    let b = load_dataset(&root).unwrap();
    assert_eq!(a.samples, b.samples);
}

fn options(representation: Representation, crop: usize, random_crop: bool) -> ImageSetOptions {
    ImageSetOptions {
        crop,
        random_crop,
        seed: 9,
        allow_upscale: false,
        representation,
    }
}

#[test]
fn random_crops_are_seeded_per_sample_and_epoch() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("c");
    corpus(&root, &["s"], 4, 48);
    let samples = load_dataset(&root).unwrap().samples;
    let opts = options(Representation::Pixels, 32, true);
    let a = ImageSet::new(samples.clone(), opts).unwrap();
    let b = ImageSet::new(samples.clone(), opts).unwrap();
    for i in 0..a.len() {
        assert_eq!(a.feature(i, 0).unwrap(), b.feature(i, 0).unwrap());
        assert_eq!(a.feature(i, 3).unwrap(), b.feature(i, 3).unwrap());
    }
    let moved = (0..a.len()).any(|i| a.feature(i, 0).unwrap() != a.feature(i, 1).unwrap());
    assert!(moved);
    assert_eq!(a.dims(), [3, 32, 32]);

    let center = ImageSet::new(samples.clone(), options(Representation::Pixels, 32, false)).unwrap();
    let img = ImageTensor::load(&samples[0].path).unwrap();
    assert_eq!(center.feature(0, 0).unwrap(), img.center_crop(32, 32).unwrap().to_planar());
    assert_eq!(center.feature(0, 0).unwrap(), center.feature(0, 7).unwrap());
}

#[test]
fn npr_features_are_cropped_then_extracted() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("c");
    corpus(&root, &["s"], 2, 32);
    let samples = load_dataset(&root).unwrap().samples;
    let g = GridSpec::new(3, npr_core::Pivot::Max).unwrap();
    let set = ImageSet::new(samples.clone(), options(Representation::Npr(g), 32, false)).unwrap();
    assert_eq!(set.dims(), [3, 30, 30]);
    let img = ImageTensor::load(&samples[1].path).unwrap().center_crop(32, 32).unwrap();
    let want = npr_core::extract_npr(&img, g).unwrap().to_planar();
    assert_eq!(set.feature(1, 0).unwrap(), want);
    assert!(ImageSet::new(samples, options(Representation::Pixels, 64, false)).is_err());
}

#[test]
fn grayscale_and_constant_images() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("flat");
    let mut samples = Vec::new();
    for (class, label) in [(REAL_DIR, 0u8), (FAKE_DIR, 1)] {
        let dir = root.join(class);
        std::fs::create_dir_all(&dir).unwrap();
        for i in 0..35 {
            let path = dir.join(format!("{i}.png"));
            let value = (i * 7 % 256) as f32 / 255.0;
            let channels = if i % 2 == 0 { 1 } else { 3 };
            ImageTensor::filled(16, 16, channels, value).unwrap().save_png(&path).unwrap();
            samples.push(Sample {
                path,
                label,
                source: "flat".into(),
            });
        }
    }
    let set = ImageSet::new(samples, options(Representation::default(), 16, false)).unwrap();
    assert_eq!(set.dims(), [3, 16, 16]);
    let batches: Vec<_> = make_batches(&set, 32, 1, 0).unwrap().collect::<Result<_, _>>().unwrap();
    assert_eq!(batches.iter().map(|b| b.labels.len()).collect::<Vec<_>>(), vec![32, 32, 6]);
    for b in &batches {
        assert!(b.features.data().iter().all(|&v| v == 0.0));
        assert_eq!(b.features.dims()[1], 3);
    }
    let mut seen: Vec<usize> = batches.iter().flat_map(|b| b.indices.clone()).collect();
    seen.sort_unstable();
    assert_eq!(seen, (0..70).collect::<Vec<_>>());
}

#[test]
fn epoch_permutations() {
    let set = MemorySet::new([1, 1, 1], (0..70).map(|i| vec![i as f32]).collect(), vec![0; 70]).unwrap();
    let order = |epoch| make_batches(&set, 32, 3, epoch).unwrap().order().to_vec();
    assert_ne!(order(0), order(1));
    assert_eq!(order(0), order(0));
    for b in make_batches(&set, 32, 3, 2).unwrap() {
        let b = b.unwrap();
        for (k, &i) in b.indices.iter().enumerate() {
            assert_eq!(b.features.data()[k], i as f32);
        }
    }
}

fn samples_strategy() -> impl Strategy<Value = Vec<Sample>> {
    prop::collection::vec((0u32..500, 0u8..=1), 4..80).prop_map(|v| {
        v.into_iter()
            .map(|(i, label)| Sample {
                path: PathBuf::from(format!("/c/s/{label}/{i:04}.png")),
                label,
                source: "s".into(),
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn splits_are_disjoint_complete_and_pure(samples in samples_strategy(), fraction in 0.05f64..0.95, seed in any::<u64>()) {
        let mut unique = samples.clone();
        unique.sort();
        unique.dedup();
        let classes_ok = [0u8, 1].iter().all(|&l| unique.iter().filter(|s| s.label == l).count() >= 2);
        match split_dataset(&samples, fraction, seed) {
            Err(_) => prop_assert!(!classes_ok),
            Ok(split) => {
                prop_assert!(classes_ok);
                let train: HashSet<_> = split.train.iter().map(|s| &s.path).collect();
                let val: HashSet<_> = split.val.iter().map(|s| &s.path).collect();
                prop_assert!(train.is_disjoint(&val));
                prop_assert_eq!(train.len() + val.len(), unique.len());
                let mut shuffled = samples.clone();
                shuffled.reverse();
                prop_assert_eq!(split_dataset(&shuffled, fraction, seed).unwrap(), split);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 6, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn labels_follow_class_directories(count in 1usize..4, names in prop::sample::subsequence(vec!["a", "b2", "zz"], 1..=3)) {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().join("c");
        corpus(&root, &names, count, 32);
        let ds = load_dataset(&root).unwrap();
        prop_assert_eq!(ds.samples.len(), 2 * count * names.len());
        for s in &ds.samples {
            let class = s.path.parent().unwrap().file_name().unwrap().to_str().unwrap();
            prop_assert_eq!(s.label, if class == FAKE_DIR { 1 } else { 0 });
            prop_assert!(class == FAKE_DIR || class == REAL_DIR);
            prop_assert!(names.contains(&s.source.as_str()));
        }
    }
}
