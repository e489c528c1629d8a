use drr_core::bits_back::{ChainShape, CodeModel, CodingTables, LatentChainModel, Scheme, StreamCodec};
use drr_core::learner::{ib_loss, PhaseResults};
use drr_core::{AnsCoder, QuantizedPmf};
use proptest::prelude::*;

fn probs() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, 1..40).prop_filter("some mass", |w| w.iter().sum::<f64>() > 1e-6)
}

proptest! {
    #[test]
    fn quantized_pmf_sums_to_total_and_keeps_support(w in probs(), precision in 8u32..=16) {
        prop_assume!(w.len() <= 1 << precision);
        let pmf = QuantizedPmf::from_probs(&w, precision).unwrap();
        prop_assert_eq!(pmf.freqs().iter().map(|&f| u64::from(f)).sum::<u64>(), 1u64 << precision);
        prop_assert!(pmf.freqs().iter().all(|&f| f >= 1));
        prop_assert_eq!(pmf.cdf().len(), w.len() + 1);
    }

    #[test]
    fn rans_round_trip(w in probs(), seq in prop::collection::vec(any::<u32>(), 0..300), state in any::<u32>()) {
        let pmf = QuantizedPmf::from_probs(&w, 12).unwrap();
        let seq: Vec<usize> = seq.iter().map(|s| *s as usize % w.len()).collect();
        let initial = AnsCoder::from_parts((1u64 << 32) | u64::from(state), vec![7, 1, 2]).unwrap();
        let mut coder = initial.clone();
        for &s in &seq {
            coder.push(s, &pmf).unwrap();
        }
        let bytes = coder.to_bytes();
        let mut coder = AnsCoder::read_from(&mut bytes.as_slice()).unwrap();
        let mut back: Vec<usize> = seq.iter().map(|_| coder.pop(&pmf).unwrap()).collect();
        back.reverse();
        prop_assert_eq!(back, seq);
        prop_assert_eq!(coder, initial);
    }

    #[test]
    fn bits_back_round_trip(
        seed in any::<u64>(),
        depth in 1usize..=3,
        latent in 2usize..=5,
        blocks in prop::collection::vec(prop::collection::vec(0u16..6, 1..=6), 1..5),
        bitswap in any::<bool>(),
    ) {
        let shape = ChainShape::uniform(6, depth, latent, 6);
        let tables = CodingTables::new(&LatentChainModel::random(&shape, seed).unwrap()).unwrap();
        let scheme = if bitswap { Scheme::BitSwap } else { Scheme::BbAns };
        let initial = AnsCoder::from_parts((1u64 << 32) | (seed >> 32), (0..64).map(|i| (seed >> (i % 8)) as u8).collect()).unwrap();
        let mut coder = initial.clone();
        let mut net = 0.0;
        for b in &blocks {
            net += scheme.encode(b, &tables, &mut coder).unwrap().net_bits();
        }
        let mut back_net = 0.0;
        for b in blocks.iter().rev() {
            let (got, stats) = scheme.decode(b.len(), &tables, &mut coder).unwrap();
            prop_assert_eq!(&got, b);
            back_net += stats.net_bits();
        }
        prop_assert_eq!(coder, initial);
        prop_assert!((net - back_net).abs() < 1e-9);
    }

    #[test]
    fn stream_codec_round_trip(seed in any::<u64>(), top in prop::collection::vec(0u16..8, 0..40), bottom in prop::collection::vec(0u16..8, 0..80)) {
        let model = CodeModel::random(&ChainShape::uniform(8, 2, 3, 16), seed).unwrap();
        let sc = StreamCodec::for_model(&model).unwrap();
        let stream = sc.encode(&[&top, &bottom]).unwrap();
        let (levels, _) = sc.decode(&stream, &[top.len(), bottom.len()]).unwrap();
        prop_assert_eq!(&levels[0], &top);
        prop_assert_eq!(&levels[1], &bottom);
    }

    #[test]
    fn ib_loss_is_bounded_and_scale_invariant(
        r in prop::collection::vec(-5.0f64..5.0, 1..16).prop_flat_map(|a| {
            let n = a.len();
            (Just(a), prop::collection::vec(-5.0f64..5.0, n))
        }),
        c in 0.01f64..100.0,
    ) {
        let (r1, r2) = r;
        prop_assume!(r1.iter().any(|v| v.abs() > 1e-3) && r2.iter().any(|v| v.abs() > 1e-3));
        let (l, _) = ib_loss(&r1, &r2).unwrap();
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&l));
        let scaled: Vec<f64> = r2.iter().map(|v| v * c).collect();
        prop_assert!((ib_loss(&r1, &scaled).unwrap().0 - l).abs() < 1e-9);
    }

    #[test]
    fn average_accuracy_ignores_initial_phase(accs in prop::collection::vec(0.0f64..=1.0, 1..10), a0 in 0.0f64..=1.0) {
        let mut other = accs.clone();
        other[0] = a0;
        let (x, y) = (PhaseResults { accuracies: accs }, PhaseResults { accuracies: other });
        prop_assert_eq!(x.average(), y.average());
    }
}
