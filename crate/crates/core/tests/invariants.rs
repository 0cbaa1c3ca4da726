use ndarray::Array2;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sketch_diffusion::joint::{permute_rows, standard_normal_matrix, DiffusionConfig, JointProcess};
use sketch_diffusion::schedule::{augment_schedule, augment_value, cosine_schedule};
use sketch_diffusion::sketch::io::{read_records, write_records};
use sketch_diffusion::sketch::{
    canonical_key, decode_sketch, encode_sketch, gen_synthetic, normalize_sketch, CLASS_BLOCK, FLAG_BLOCK,
};

fn clean(seed: u64) -> Array2<f64> {
    encode_sketch(&gen_synthetic(1, seed)[0], 0.99).unwrap().into_array()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cosine_schedule_is_monotone_with_pinned_endpoints(steps in 2usize..400) {
        let s = cosine_schedule(steps).unwrap();
        prop_assert_eq!(s.alpha_bar(0), 1.0);
        prop_assert_eq!(s.alpha_bar(steps), 0.0);
        for t in 1..=steps {
            prop_assert!(s.alpha_bar(t) <= s.alpha_bar(t - 1));
            prop_assert!(s.alpha(t) > 0.0 && s.alpha(t) <= 1.0);
        }
    }

    #[test]
    fn augmentation_is_strictly_increasing(a in 0.0f64..1.0, b in 0.0f64..1.0, k in 0.5f64..0.999, d in 2usize..8) {
        prop_assume!((a - b).abs() > 1e-9);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(augment_value(lo, k, d).unwrap() < augment_value(hi, k, d).unwrap());
        prop_assert!((augment_value(k, k, d).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn augmented_schedule_keeps_endpoints(steps in 2usize..300, d in 2usize..8) {
        let s = augment_schedule(&cosine_schedule(steps).unwrap(), 0.99, d).unwrap();
        prop_assert_eq!(s.alpha_bar(0), 1.0);
        prop_assert_eq!(s.alpha_bar(steps), 0.0);
    }

    #[test]
    fn normalization_is_idempotent_and_keys_ignore_order(seed in 0u64..10_000, shuffle in 0u64..1000) {
        let rec = gen_synthetic(1, seed).remove(0);
        let again = normalize_sketch(&rec).unwrap();
        for (p, q) in rec.primitives.iter().zip(&again.primitives) {
            for (u, v) in p.params.iter().zip(&q.params) {
                prop_assert!((u - v).abs() <= 1e-12);
            }
        }
        let mut shuffled = rec.clone();
        shuffled.primitives.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle));
        prop_assert_eq!(canonical_key(&shuffled), canonical_key(&rec));
    }

    #[test]
    fn encoding_and_jsonl_round_trip(seed in 0u64..10_000) {
        let recs = gen_synthetic(3, seed);
        for r in &recs {
            let back = decode_sketch(encode_sketch(r, 0.99).unwrap().view(), r.id.clone());
            prop_assert_eq!(&back.primitives, &r.primitives);
        }
        let mut bytes = Vec::new();
        write_records(&mut bytes, &recs).unwrap();
        prop_assert_eq!(read_records(&bytes[..]).unwrap(), recs);
    }

    #[test]
    fn noising_commutes_with_any_permutation(seed in 0u64..10_000, t in 1usize..=50) {
        let p = JointProcess::new(DiffusionConfig::with_steps(50)).unwrap();
        let x0 = clean(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = standard_normal_matrix(x0.nrows(), &mut rng);
        let mut perm: Vec<usize> = (0..x0.nrows()).collect();
        perm.shuffle(&mut rng);
        let a = p.noise_sketch_with(x0.view(), t, noise.view()).unwrap();
        let b = p.noise_sketch_with(permute_rows(x0.view(), &perm).view(), t, permute_rows(noise.view(), &perm).view()).unwrap();
        prop_assert_eq!(b.x, permute_rows(a.x.view(), &perm));
    }

    #[test]
    fn noised_blocks_stay_on_the_simplex(seed in 0u64..10_000, t in 0usize..=50) {
        let p = JointProcess::new(DiffusionConfig::with_steps(50)).unwrap();
        let xt = p.noise_sketch(clean(seed).view(), t, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        for row in xt.x.rows() {
            for block in [FLAG_BLOCK, CLASS_BLOCK] {
                let b = row.slice(ndarray::s![block]);
                prop_assert!(b.iter().all(|v| *v > 0.0));
                prop_assert!((b.sum() - 1.0).abs() < 1e-9);
            }
        }
    }
}
