use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use drr_core::bits_back::{CodeModel, FitConfig};
use drr_core::dataset::{read_image_dir, toy_dataset, write_image_dir, ToyConfig};
use drr_core::learner::{parse_results, ExperimentConfig};
use drr_core::vq::{CodecGeometry, CodecParams};
use drr_core::ImageTensor;

fn drr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drr")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Toy training images on disk plus a small pretrained codec.
struct Fixture {
    dir: tempfile::TempDir,
    data: PathBuf,
    codec: PathBuf,
}

const GEOMETRY: [&str; 8] = ["--codebook-size", "16", "--dim", "4", "--patch", "2", "--pool", "2"];

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let cfg = ToyConfig { classes: 3, train_per_class: 4, test_per_class: 0, ..ToyConfig::default() };
    write_image_dir(&data, &toy_dataset(&cfg).unwrap().train).unwrap();
    let codec = dir.path().join("codec.drrc");
    let mut args = vec!["pretrain-codec", "--data", s(&data), "--out", s(&codec), "--epochs", "20", "--lr", "0.003"];
    args.extend(GEOMETRY);
    let out = drr(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    Fixture { dir, data, codec }
}

fn tree_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut v: Vec<_> =
        fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).map(|p| (p.clone(), fs::read(p).unwrap())).collect();
    v.sort();
    v
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(code(&drr(&["--help"])), 0);
    assert_eq!(code(&drr(&[])), 1);
    assert_eq!(code(&drr(&["compress", "--bogus"])), 1);
    assert_eq!(code(&drr(&["frobnicate"])), 1);
    let out = drr(&["report", "--results", "/nonexistent/results.txt"]);
    assert_eq!(code(&out), 2);
    assert!(!out.stderr.is_empty());
}

#[test]
fn pretrain_writes_frozen_codec_deterministically() {
    let f = fixture();
    let bytes = fs::read(&f.codec).unwrap();
    assert_eq!(&bytes[..4], b"DRRC");
    assert!(CodecParams::load(&f.codec).unwrap().is_frozen());

    let again = f.dir.path().join("again.drrc");
    let mut args = vec!["pretrain-codec", "--data", s(&f.data), "--out", s(&again), "--epochs", "20", "--lr", "0.003"];
    args.extend(GEOMETRY);
    let out = drr(&args);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("reconstruction_mse="));
    assert_eq!(fs::read(&again).unwrap(), bytes);

    // Zero epochs leaves the seeded initialization.
    let init = f.dir.path().join("init.drrc");
    let mut args = vec!["pretrain-codec", "--data", s(&f.data), "--out", s(&init), "--epochs", "0", "--seed", "9"];
    args.extend(GEOMETRY);
    assert_eq!(code(&drr(&args)), 0);
    let g = CodecGeometry { channels: 3, patch: 2, pool: 2, codebook_size: 16, dim: 4 };
    let expected = CodecParams::init(g, 0.25, 9).unwrap().freeze();
    assert_eq!(CodecParams::load(&init).unwrap(), expected);

    let missing = drr(&["pretrain-codec", "--data", "/nonexistent", "--out", s(&init)]);
    assert_eq!(code(&missing), 2);
}

#[test]
fn compress_decompress_round_trip_and_accounting() {
    let f = fixture();
    let model = f.dir.path().join("model.drrm");
    let streams = f.dir.path().join("streams");
    let before = tree_bytes(&f.data);
    let args = [
        "compress",
        "--codec",
        s(&f.codec),
        "--model",
        s(&model),
        "--in",
        s(&f.data),
        "--out",
        s(&streams),
        "--fit",
        "5",
        "--depth",
        "2",
        "--latent-alphabet",
        "4",
    ];
    let out = drr(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(tree_bytes(&f.data), before, "inputs must not change");

    // Printed cost is below the uncompressed 16 bits per code.
    let text = stdout(&out);
    let bpc: f64 = text.lines().find_map(|l| l.strip_suffix(" bits/code")?.rsplit(' ').next()?.parse().ok()).unwrap();
    assert!(bpc < 16.0, "{text}");

    // Compressed total equals the sum of stream file sizes.
    let stream_bytes: u64 = fs::read_dir(&streams)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "drrs"))
        .map(|p| fs::metadata(p).unwrap().len())
        .sum();
    let compressed = text.lines().find(|l| l.starts_with("codes (compressed)")).unwrap();
    assert!(compressed.split_whitespace().any(|w| w == stream_bytes.to_string()), "{compressed} vs {stream_bytes}");

    let recon = f.dir.path().join("recon");
    let out =
        drr(&["decompress", "--codec", s(&f.codec), "--model", s(&model), "--in", s(&streams), "--out", s(&recon)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let codec = CodecParams::load(&f.codec).unwrap();
    let originals = read_image_dir(&f.data).unwrap();
    let restored = read_image_dir(&recon).unwrap();
    assert_eq!(restored.len(), originals.len());
    for (class, imgs) in &originals {
        for (orig, got) in imgs.iter().zip(&restored[class]) {
            let rt = codec.roundtrip(orig).unwrap();
            let (h, w, c) = rt.shape();
            assert_eq!(*got, ImageTensor::from_bytes(h, w, c, &rt.to_bytes()).unwrap());
        }
    }

    // Rerunning compress against the stored model reproduces the same streams.
    let again = f.dir.path().join("again");
    let args = ["compress", "--codec", s(&f.codec), "--model", s(&model), "--in", s(&f.data), "--out", s(&again)];
    assert_eq!(code(&drr(&args)), 0);
    assert_eq!(
        tree_bytes(&again).into_iter().map(|(_, b)| b).collect::<Vec<_>>(),
        tree_bytes(&streams).into_iter().map(|(_, b)| b).collect::<Vec<_>>()
    );

    // A model of another version cannot decode the streams.
    let other = f.dir.path().join("other.drrm");
    let bumped = CodeModel::load(&model)
        .unwrap()
        .finetune(&[], &[], &FitConfig { iterations: 0, ..FitConfig::default() })
        .unwrap();
    bumped.save(&other).unwrap();
    let out =
        drr(&["decompress", "--codec", s(&f.codec), "--model", s(&other), "--in", s(&streams), "--out", s(&recon)]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));

    // Truncated stream files are reported as corruption.
    let victim = streams.join("0_0.drrs");
    let bytes = fs::read(&victim).unwrap();
    fs::write(&victim, &bytes[..bytes.len() - 3]).unwrap();
    let out =
        drr(&["decompress", "--codec", s(&f.codec), "--model", s(&model), "--in", s(&streams), "--out", s(&recon)]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn inspect_identifies_file_types() {
    let f = fixture();
    let model = f.dir.path().join("model.drrm");
    let streams = f.dir.path().join("streams");
    let args = [
        "compress",
        "--codec",
        s(&f.codec),
        "--model",
        s(&model),
        "--in",
        s(&f.data),
        "--out",
        s(&streams),
        "--fit",
        "1",
        "--depth",
        "1",
        "--latent-alphabet",
        "4",
    ];
    assert_eq!(code(&drr(&args)), 0);
    let cases = [
        (f.codec.clone(), "codec "),
        (model.clone(), "model[1] "),
        (streams.join("1_2.drrs"), "stream "),
        (f.data.join("0_0.raw"), "image height=16 width=16 channels=3"),
    ];
    for (path, expected) in cases {
        let out = drr(&["inspect", s(&path)]);
        assert_eq!(code(&out), 0);
        assert!(stdout(&out).contains(expected), "{}: {}", path.display(), stdout(&out));
    }
    let junk = f.dir.path().join("junk.bin");
    fs::write(&junk, b"DRRS\x01").unwrap();
    assert_eq!(code(&drr(&["inspect", s(&junk)])), 3);
}

#[test]
fn run_phases_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("toy.cfg");
    fs::write(&config, ExperimentConfig { seeds: vec![0, 1], ..ExperimentConfig::default() }.to_text()).unwrap();
    let results = dir.path().join("results.txt");
    let start = Instant::now();
    let out = drr(&["run-phases", "--config", s(&config), "--out", s(&results), "--jobs", "2"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(start.elapsed().as_secs() < 60);

    let runs = parse_results(&fs::read_to_string(&results).unwrap()).unwrap();
    assert_eq!(runs.len(), 2);
    assert_eq!(runs[0].records.len(), 3);
    let out = drr(&["report", "--results", s(&results)]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    // Printed totals agree with a recomputation from the phase records.
    for run in &runs {
        let accs: Vec<f64> = run.records.iter().map(|r| r.accuracy()).collect();
        let avg = accs[1..].iter().sum::<f64>() / (accs.len() - 1) as f64;
        assert!(text.contains(&format!("average={avg:.4} last={:.4}", accs[accs.len() - 1])), "{text}");
    }

    let empty = dir.path().join("empty.txt");
    fs::write(&empty, "").unwrap();
    assert_eq!(code(&drr(&["report", "--results", s(&empty)])), 1);

    fs::write(&config, "phases = lots\n").unwrap();
    assert_eq!(code(&drr(&["run-phases", "--config", s(&config), "--out", s(&results)])), 1);
    fs::write(&config, "colour = blue\n").unwrap();
    assert_eq!(code(&drr(&["run-phases", "--config", s(&config), "--out", s(&results)])), 1);
}
