use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use selfmm_core::autodiff::Graph;
use selfmm_core::dataio::{read_dataset, synth_generate, write_dataset, Sequence, SynthSpec};
use selfmm_core::encoders::{encode_sequence, LstmParams};

fn sequence(dim: usize) -> impl Strategy<Value = Sequence> {
    (1usize..7).prop_flat_map(move |len| {
        prop::collection::vec(-2.0..2.0f64, len * dim).prop_map(move |data| Sequence::new(len, dim, data).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ragged_batches_match_single_sequences(seqs in prop::collection::vec(sequence(3), 1..6), seed in any::<u64>()) {
        let params = LstmParams::init(3, 4, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let mut g = Graph::new();
        let bound = params.bind(&mut g).unwrap();
        let refs: Vec<&Sequence> = seqs.iter().collect();
        let out = bound.encode(&mut g, &refs).unwrap();
        let batched = g.value(out).to_vec();
        for (b, s) in seqs.iter().enumerate() {
            let single = encode_sequence(s, &params).unwrap();
            for k in 0..4 {
                prop_assert!((batched[b * 4 + k] - single[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hidden_state_is_bounded(s in sequence(2), seed in any::<u64>()) {
        let params = LstmParams::init(2, 5, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let h = encode_sequence(&s, &params).unwrap();
        prop_assert!(h.iter().all(|v| v.abs() < 1.0));
    }
}

#[test]
fn dataset_round_trip_is_exact_for_several_seeds() {
    for seed in [0, 1, 99] {
        let ds = synth_generate(30, seed, &SynthSpec::default()).unwrap();
        let mut buf = Vec::new();
        write_dataset(&mut buf, &ds).unwrap();
        assert_eq!(read_dataset(buf.as_slice()).unwrap(), ds);
    }
}
