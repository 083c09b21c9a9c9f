mod common;

use common::{bits, samples, tiny_model};
use feddt::cost::{feddt_total_closed_form, feddt_total_series, fedt_total, CostInputs, Fraction};
use feddt::data::{decode_corpus, encode_corpus, split, split_sizes, SplitSpec};
use feddt::fed::{aggregate, seal, unseal, Codec, GrowthSchedule};
use feddt::model::{DynamicTransformer, PayloadMode, WeightSet};
use feddt::Error;
use proptest::prelude::*;

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 24,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn decoder_is_causal(seed in any::<u64>(), cut in 0usize..6, noise in -3.0f64..3.0) {
        let model = DynamicTransformer::new(tiny_model(2, 1), seed).unwrap();
        let s = &samples(1, seed)[0];
        let rows = s.frames.rows();
        let cut = cut % rows;
        let mut changed = s.frames.clone();
        let fd = changed.cols();
        for x in &mut changed.data_mut()[cut * fd..] {
            *x += noise + 0.5;
        }
        let a = &model.forward(std::slice::from_ref(&s.tokens), std::slice::from_ref(&s.frames)).unwrap()[0];
        let b = &model.forward(std::slice::from_ref(&s.tokens), &[changed]).unwrap()[0];
        let upto = (cut + 1) * fd;
        prop_assert_eq!(bits(&a.data()[..upto]), bits(&b.data()[..upto]));
    }

    #[test]
    fn growth_preserves_old_blocks(seed in any::<u64>(), steps in 1usize..3) {
        let mut model = DynamicTransformer::new(tiny_model(3, 3), seed).unwrap();
        let s = &samples(2, seed ^ 1)[1];
        for _ in 0..steps {
            let depth = model.layers();
            let before = model.weights();
            let probe = model.probe_hidden_states(&s.tokens, &s.frames, depth).unwrap();
            model.grow(1).unwrap();
            let after = model.weights();
            for (x, y) in before.entries.iter().zip(&after.entries) {
                prop_assert_eq!(x.name_hash, y.name_hash);
                prop_assert_eq!(bits(&x.data), bits(&y.data));
            }
            let again = model.probe_hidden_states(&s.tokens, &s.frames, depth).unwrap();
            prop_assert!(probe.iter().zip(&again).all(|(p, q)| p.bits_eq(q)));
        }
    }

    #[test]
    fn weight_payload_round_trips(seed in any::<u64>(), grow in any::<bool>(), full in any::<bool>()) {
        let cfg = tiny_model(2, 2);
        let mut model = DynamicTransformer::new(cfg.clone(), seed).unwrap();
        if grow {
            model.grow(1).unwrap();
        }
        let mode = if full { PayloadMode::Full } else { PayloadMode::WeightsOnly };
        let bytes = model.serialize(mode);
        let back = DynamicTransformer::deserialize(&bytes, &cfg).unwrap();
        prop_assert_eq!(back.serialize(mode), bytes);
        prop_assert_eq!(back.layers(), model.layers());
    }

    #[test]
    fn corpus_round_trips(seed in any::<u64>(), n in 1usize..12) {
        let data = samples(n, seed);
        let bytes = encode_corpus(&data, 4);
        let (fd, back) = decode_corpus(&bytes).unwrap();
        prop_assert_eq!(fd, 4);
        prop_assert_eq!(encode_corpus(&back, 4), bytes);
        prop_assert_eq!(back, data);
    }

    #[test]
    fn split_is_a_partition(total in 1usize..400, ratios in prop::collection::vec(1usize..6, 1..6), seed in any::<u64>()) {
        let spec = SplitSpec::Ratios { ratios: ratios.clone() };
        let sizes = split_sizes(total, &spec).unwrap();
        prop_assert_eq!(sizes.iter().sum::<usize>(), total);
        let sum: usize = ratios.iter().sum();
        for (s, r) in sizes.iter().zip(&ratios) {
            prop_assert!(*s >= total * r / sum);
        }
        let items: Vec<usize> = (0..total).collect();
        let shards = split(&items, &spec, seed).unwrap();
        prop_assert_eq!(shards.iter().map(Vec::len).collect::<Vec<_>>(), sizes);
        let mut all: Vec<usize> = shards.concat();
        all.sort_unstable();
        prop_assert_eq!(all, items);
    }

    #[test]
    fn aggregate_is_the_mean(seed in any::<u64>(), m in 1usize..6) {
        let cfg = tiny_model(2, 1);
        let sets: Vec<WeightSet> = (0..m as u64)
            .map(|i| DynamicTransformer::new(cfg.clone(), seed.wrapping_add(i)).unwrap().weights())
            .collect();
        let avg = aggregate(&sets).unwrap();
        for (t, e) in avg.entries.iter().enumerate() {
            for (j, &x) in e.data.iter().enumerate() {
                let want = sets.iter().map(|s| s.entries[t].data[j]).sum::<f64>() / m as f64;
                prop_assert!((x - want).abs() <= 1e-14 * (1.0 + want.abs()));
            }
        }
        let same = aggregate(&vec![sets[0].clone(); m]).unwrap();
        prop_assert_eq!(&same, &sets[0]);
    }

    #[test]
    fn stage_sum_matches_enumeration(c in 1u64..8, per_stage in 1u64..30, q in 1u64..4, w1 in 1u64..500, w2 in 1u64..500) {
        let (t, n) = (c * per_stage, c * q);
        let inputs = CostInputs::new(t, c, n, w1, w2).unwrap();
        let sched = GrowthSchedule::uniform(t, c as usize, n as usize, 1).unwrap();
        let mut depth = sched.initial_layers() as u128;
        let mut brute = 0u128;
        for round in 1..=t {
            brute += depth * u128::from(w1 + w2);
            depth = sched.maybe_grow(round, depth as usize) as u128;
        }
        prop_assert_eq!(feddt_total_series(&inputs), brute);
        prop_assert_eq!(
            Fraction::new(brute, fedt_total(&inputs)),
            Fraction::new(u128::from(c) + 1, 2 * u128::from(c))
        );
        let closed = feddt_total_closed_form(&inputs);
        prop_assert_eq!(
            closed,
            Fraction::new(u128::from(t) * u128::from(n + 1) * u128::from(w1 + w2), 2 * u128::from(c))
        );
    }

    #[test]
    fn any_flipped_byte_is_detected(len in 0usize..300, key in any::<u64>(), nonce in any::<u64>(), pos in any::<prop::sample::Index>(), mask in 1u8..=255) {
        let payload: Vec<u8> = (0..len).map(|i| (i * 31 + 7) as u8).collect();
        let codec = Codec::Sealed { key };
        let mut sealed = seal(&payload, codec, nonce);
        prop_assert_eq!(unseal(&sealed, codec).unwrap(), payload);
        let i = pos.index(sealed.len());
        sealed[i] ^= mask;
        prop_assert!(matches!(unseal(&sealed, codec), Err(Error::Integrity(_))));
    }
}

#[test]
fn growth_schedule_trace_by_enumeration() {
    let sched = GrowthSchedule::uniform(120, 6, 6, 3).unwrap();
    let mut want = vec![1; 19];
    for l in 2..=5 {
        want.extend(std::iter::repeat_n(l, 20));
    }
    want.extend(std::iter::repeat_n(6, 21));
    assert_eq!(sched.trace(), want);
    assert_eq!(sched.growth_rounds(), vec![20, 40, 60, 80, 100]);
}
