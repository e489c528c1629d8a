use drr_core::bits_back::{ChainShape, CodeModel, FitConfig};
use drr_core::dataset::{flatten, toy_dataset, ClassImages, ToyConfig};
use drr_core::learner::{
    parse_results, run_experiment, train_phase, write_results, ExperimentConfig, Mode, PhaseData, TrainConfig,
};
use drr_core::vq::{train_codec, CodecConfig, CodecGeometry};
use drr_core::{account, DrrError, RawExemplarStore, ReplayBuffer};

fn small_codec(train: &ClassImages) -> drr_core::CodecParams {
    let cfg = CodecConfig {
        geometry: CodecGeometry { channels: 3, patch: 2, pool: 2, codebook_size: 16, dim: 4 },
        lr: 0.003,
        epochs: 20,
        beta: 0.25,
        seed: 0,
    };
    train_codec(&flatten(train), &cfg).unwrap().freeze()
}

fn classes(all: &ClassImages, ids: &[u32]) -> ClassImages {
    ids.iter().map(|c| (*c, all[c].clone())).collect()
}

#[test]
fn phased_ingest_keeps_reconstructions_and_survives_persistence() {
    let data = toy_dataset(&ToyConfig { classes: 4, train_per_class: 6, test_per_class: 0, ..ToyConfig::default() })
        .unwrap()
        .train;
    let codec = small_codec(&classes(&data, &[0, 1]));
    let model = CodeModel::random(&ChainShape::uniform(16, 2, 4, 16), 3).unwrap();
    let mut buffer = ReplayBuffer::with_model(model);
    let mut raw = RawExemplarStore::new(2, 0);
    let fit = FitConfig { iterations: 3, ..FitConfig::default() };

    buffer.ingest_phase(&classes(&data, &[0, 1]), &codec, &fit, Some(&mut raw)).unwrap();
    let v1 = buffer.model_version().unwrap();
    buffer.ingest_phase(&classes(&data, &[2, 3]), &codec, &fit, Some(&mut raw)).unwrap();
    assert!(buffer.model_version().unwrap() > v1);
    assert_eq!(buffer.len(), 24);
    assert_eq!(raw.len(), 8);

    // Lossless coding: every stored image decodes to the codec round trip.
    let recon = buffer.reconstruct_all(&codec).unwrap();
    for (c, imgs) in &data {
        for (img, r) in imgs.iter().zip(&recon[c]) {
            assert_eq!(*r, codec.roundtrip(img).unwrap());
        }
    }

    let err = buffer.ingest_phase(&classes(&data, &[3]), &codec, &fit, None).unwrap_err();
    assert!(matches!(err, DrrError::InvalidInput(_)));

    let dir = tempfile::tempdir().unwrap();
    buffer.save_dir(dir.path()).unwrap();
    let loaded = ReplayBuffer::load_dir(dir.path()).unwrap();
    assert_eq!(loaded.reconstruct_all(&codec).unwrap(), recon);
    let (a, b) = (account(&buffer, Some(&raw), Some(&codec)), account(&loaded, Some(&raw), Some(&codec)));
    assert_eq!(a, b);
    assert!(a.compressed_bytes < a.uncompressed_code_bytes + 64 * a.exemplars);
}

#[test]
fn experiment_results_round_trip_through_text() {
    let cfg = ExperimentConfig {
        classes: 4,
        initial_classes: 2,
        phases: 2,
        train_per_class: 8,
        test_per_class: 4,
        codec_epochs: 10,
        train: TrainConfig { epochs: 3, mode: Mode::IbDrrStar, ..TrainConfig::default() },
        ..ExperimentConfig::default()
    };
    let parsed_cfg = ExperimentConfig::parse(&cfg.to_text()).unwrap();
    assert_eq!(parsed_cfg, cfg);
    let runs = vec![run_experiment(&cfg, 4).unwrap()];
    let text = write_results(&runs);
    let parsed = parse_results(&text).unwrap();
    assert_eq!(parsed[0].records, runs[0].records);
    assert_eq!(parsed[0].mode, Mode::IbDrrStar);
    assert_eq!(parsed[0].phase_results(), runs[0].phase_results());
}

#[test]
fn phase_training_ignores_history() {
    let data = toy_dataset(&ToyConfig { classes: 3, train_per_class: 5, test_per_class: 0, ..ToyConfig::default() })
        .unwrap()
        .train;
    let samples: Vec<_> = data.iter().flat_map(|(c, v)| v.iter().map(move |i| (i.clone(), *c as usize))).collect();
    let cfg = TrainConfig { epochs: 4, ..TrainConfig::default() };
    let a = train_phase(&PhaseData { samples: samples.clone(), pairs: vec![] }, 3, &cfg).unwrap();
    // Training something else first changes nothing.
    let _ = train_phase(&PhaseData { samples: samples[..5].to_vec(), pairs: vec![] }, 1, &cfg).unwrap();
    let b = train_phase(&PhaseData { samples, pairs: vec![] }, 3, &cfg).unwrap();
    assert_eq!(a, b);
}
