//! Statistical and exhaustive checks of the masking procedure.

use mtsp_core::data::{generate_synthetic, mask_sequence, MaskSpec, SyntheticConfig};
use mtsp_core::FEATURE_DIM;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[test]
fn mask_changes_exactly_the_block_on_random_sequences() {
    let ds = generate_synthetic(&SyntheticConfig {
        num_samples: 50,
        t_min: 30,
        t_max: 120,
        noise_scale: 0.5,
        seed: 21,
    })
    .unwrap();
    let spec = MaskSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for seq in ds.sequences() {
        let (masked, start) = mask_sequence(seq, &spec, &mut rng).unwrap();
        assert!(start + spec.mask_length <= seq.len());
        let mut changed = 0usize;
        for t in 0..seq.len() {
            for c in 0..FEATURE_DIM {
                if t >= start && t < start + spec.mask_length {
                    assert_eq!(masked.at(t, c), spec.sentinel);
                    changed += 1;
                } else {
                    assert_eq!(
                        masked.at(t, c).to_bits(),
                        seq.features.at(t, c).to_bits(),
                        "entry outside the mask changed"
                    );
                }
            }
        }
        assert_eq!(changed, spec.mask_length * FEATURE_DIM);
    }
}

#[test]
fn mask_start_uniform_chi_square() {
    // T = 60, mask 30 -> 31 valid starts; 10,000 draws
    let ds = generate_synthetic(&SyntheticConfig {
        num_samples: 1,
        t_min: 60,
        t_max: 60,
        noise_scale: 0.2,
        seed: 3,
    })
    .unwrap();
    let seq = &ds.sequences()[0];
    let spec = MaskSpec::default();
    let bins = 60 - spec.mask_length + 1;
    let draws = 10_000usize;
    let mut counts = vec![0usize; bins];
    let mut rng = ChaCha8Rng::seed_from_u64(123);
    for _ in 0..draws {
        let (_, start) = mask_sequence(seq, &spec, &mut rng).unwrap();
        counts[start] += 1;
    }
    let expected = draws as f64 / bins as f64;
    let stat: f64 = counts
        .iter()
        .map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum();
    let dist = ChiSquared::new((bins - 1) as f64).unwrap();
    let p = 1.0 - dist.cdf(stat);
    assert!(p > 0.001, "chi-square stat {stat:.2}, p = {p:.5}");
}
