use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use npr_core::npr::read_npr_file;
use npr_core::{extract_npr, GridSpec, ImageTensor};

fn npr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_npr"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = npr(args);
    assert!(
        out.status.success(),
        "npr {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Relative path to bytes for every file under `root`.
fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn gen(out: &Path, count: &str) {
    ok(&[
        "gen",
        "--out",
        s(out),
        "--sources",
        "nearest:seed=1,bilinear:seed=2",
        "--count",
        count,
        "--size",
        "32",
        "--depth",
        "2",
    ]);
}

#[test]
fn gen_writes_sources_and_is_repeatable() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("corpus");
    gen(&root, "5");
    let first = tree(&root);
    for source in ["nearest", "bilinear"] {
        for class in ["0_real", "1_fake"] {
            let n = first
                .keys()
                .filter(|p| p.starts_with(Path::new(source).join(class)) && p.extension().is_some_and(|e| e == "png"))
                .count();
            assert_eq!(n, 5);
        }
        assert!(first.contains_key(&Path::new(source).join("manifest.json")));
    }
    assert!(first.contains_key(Path::new("config.json")));
    std::fs::remove_dir_all(&root).unwrap();
    gen(&root, "5");
    assert_eq!(tree(&root), first);

    // Rerunning from the emitted config reproduces the corpus.
    let config = tmp.path().join("config.json");
    std::fs::copy(root.join("config.json"), &config).unwrap();
    std::fs::remove_dir_all(&root).unwrap();
    ok(&["gen", "--config", s(&config)]);
    assert_eq!(tree(&root), first);
}

#[test]
fn gen_without_out_is_a_usage_error() {
    let out = npr(&["gen", "--count", "3"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("--out") && err.contains("Usage"), "{err}");
    let out = npr(&["gen", "--out", "/tmp/never-written", "--sources", "cubic"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn extract_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let flat = tmp.path().join("flat.png");
    ImageTensor::filled(16, 16, 3, 0.6).unwrap().save_png(&flat).unwrap();
    let out = tmp.path().join("out");
    ok(&["extract", s(&flat), "--out", s(&out), "--heatmap"]);
    for c in ["r", "g", "b"] {
        let heat = ImageTensor::load(&out.join(format!("flat_heatmap_{c}.png"))).unwrap();
        assert!(heat.data().iter().all(|&v| v == 0.0));
    }
    assert!(out.join("flat.config.json").is_file());

    let corpus = tmp.path().join("corpus");
    gen(&corpus, "1");
    let real = corpus.join("nearest/0_real/00000.png");
    let fake = corpus.join("nearest/1_fake/00000.png");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["extract", s(&real), "--out", s(&a)]);
    ok(&["extract", s(&real), "--out", s(&b), "--l", "2", "--pivot", "index:1"]);
    assert_eq!(std::fs::read(a.join("00000.npr")).unwrap(), std::fs::read(b.join("00000.npr")).unwrap());

    let map = read_npr_file(&a.join("00000.npr")).unwrap();
    let want = extract_npr(&ImageTensor::load(&real).unwrap(), GridSpec::default()).unwrap();
    assert_eq!(map, want);
    assert!(map.data().iter().zip(want.data()).all(|(x, y)| x.to_bits() == y.to_bits()));

    let d = tmp.path().join("d");
    let listed = ok(&["extract", s(&real), "--out", s(&d), "--l", "3", "--pivot", "avg", "--diff", s(&fake)]);
    assert_eq!(listed.lines().count(), 4);
    let map = read_npr_file(&d.join("00000.npr")).unwrap();
    assert_eq!((map.height(), map.width(), map.grid()), (30, 30, GridSpec::new(3, npr_core::Pivot::Avg).unwrap()));

    let bad = npr(&["extract", s(&real), "--out", s(&d), "--pivot", "index:9"]);
    assert_eq!(bad.status.code(), Some(2));
    let missing = npr(&["extract", s(&tmp.path().join("none.png")), "--out", s(&d)]);
    assert_eq!(missing.status.code(), Some(3));
}

fn train_args<'a>(corpus: &'a str, out: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec!["train", "--corpus", corpus, "--out", out, "--crop", "32", "--epochs", "2"];
    v.extend_from_slice(extra);
    v
}

#[test]
fn train_defaults_determinism_and_config_rerun() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    gen(&corpus, "12");
    let nearest = corpus.join("nearest");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let printed = ok(&train_args(s(&nearest), s(&a), &["--seed", "7"]));
    assert!(printed.contains("lr=0.0002 batch=32"), "{printed}");
    ok(&train_args(s(&nearest), s(&b), &["--seed", "7"]));
    for f in ["model.nprm", "last.nprm", "history.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }

    let model = std::fs::read(a.join("model.nprm")).unwrap();
    let config = tmp.path().join("train.json");
    std::fs::copy(a.join("config.json"), &config).unwrap();
    std::fs::remove_dir_all(&a).unwrap();
    ok(&["train", "--config", s(&config)]);
    assert_eq!(std::fs::read(a.join("model.nprm")).unwrap(), model);

    let c = tmp.path().join("c");
    ok(&train_args(s(&nearest), s(&c), &["--seed", "8"]));
    assert_ne!(std::fs::read(c.join("model.nprm")).unwrap(), model);
}

#[test]
fn train_rejects_a_corpus_with_one_class() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    gen(&corpus, "4");
    std::fs::remove_dir_all(corpus.join("nearest/1_fake")).unwrap();
    std::fs::create_dir(corpus.join("nearest/1_fake")).unwrap();
    let out = tmp.path().join("run");
    let res = npr(&train_args(s(&corpus.join("nearest")), s(&out), &[]));
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("1_fake"));
    assert!(!out.exists());
}

#[test]
fn train_reports_non_finite_loss() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    gen(&corpus, "8");
    let out = tmp.path().join("run");
    let res = npr(&train_args(s(&corpus.join("nearest")), s(&out), &["--lr", "1e30"]));
    assert_eq!(res.status.code(), Some(4), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(!out.join("model.nprm").exists());
}

#[test]
fn eval_reports_every_source_with_provenance() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    gen(&corpus, "10");
    let run = tmp.path().join("run");
    ok(&train_args(s(&corpus.join("nearest")), s(&run), &[]));
    let ckpt = run.join("model.nprm");
    let report = tmp.path().join("report");
    let table = ok(&["eval", "--checkpoint", s(&ckpt), "--corpus", s(&corpus), "--out", s(&report), "--crop", "32"]);
    assert!(table.contains("nearest") && table.contains("bilinear") && table.contains("Mean"), "{table}");
    let csv = std::fs::read_to_string(report.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);

    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report.join("report.json")).unwrap()).unwrap();
    let hash = npr_core::eval::corpus_manifest_hash(&corpus).unwrap().unwrap();
    assert_eq!(json["provenance"]["corpus_manifest_sha256"], hash.as_str());
    let ckpt_hash = npr_core::eval::sha256_hex(&std::fs::read(&ckpt).unwrap());
    assert_eq!(json["provenance"]["checkpoint_sha256"], ckpt_hash.as_str());

    let before = tree(&report);
    let config = tmp.path().join("eval.json");
    std::fs::copy(report.join("config.json"), &config).unwrap();
    std::fs::remove_dir_all(&report).unwrap();
    ok(&["eval", "--config", s(&config)]);
    assert_eq!(tree(&report), before);

    let mut bytes = std::fs::read(&ckpt).unwrap();
    bytes[0] = b'X';
    let tampered = tmp.path().join("tampered.nprm");
    std::fs::write(&tampered, bytes).unwrap();
    let bad = tmp.path().join("bad");
    let res = npr(&["eval", "--checkpoint", s(&tampered), "--corpus", s(&corpus), "--out", s(&bad), "--crop", "32"]);
    assert_eq!(res.status.code(), Some(2));
    assert!(!bad.exists());
}

#[test]
fn repro_uses_a_seed_named_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let small = ["--epochs", "1", "--train-count", "10", "--test-count", "4", "--image-size", "32"];
    let run = |seed: Option<&str>| {
        let mut args = vec!["repro", "--out", s(tmp.path())];
        if let Some(seed) = seed {
            args.extend(["--seed", seed]);
        }
        args.extend(small);
        ok(&args)
    };
    let table = run(None);
    assert!(table.contains("6a") && table.contains("6c"), "{table}");
    let dir = tmp.path().join("seed-1337");
    for f in ["config.json", "acceptance.txt", "acceptance.json", "npr/model.nprm", "pixels/report.json"] {
        assert!(dir.join(f).is_file(), "{f}");
    }
    let entries: Vec<_> = std::fs::read_dir(tmp.path()).unwrap().collect();
    assert_eq!(entries.len(), 1);
    run(Some("5"));
    assert_ne!(
        std::fs::read(dir.join("npr/model.nprm")).unwrap(),
        std::fs::read(tmp.path().join("seed-5/npr/model.nprm")).unwrap()
    );
}
