use adafocus_core::crop::{crop_cube_interpolated, crop_cube_pixelgrad, trilinear_sample, CubeSize, CubeSpec};
use adafocus_core::diff::{Graph, Tensor};
use adafocus_core::earlyexit::{simulate_with, Criterion, ExitRecord, StepRecord};
use adafocus_core::synth::{generate_sample, SynthConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn video(dims: [usize; 4], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&dims, |_| rng.random_range(-1.0..1.0))
}

fn neighbour_bounds(v: &Tensor, c: [f64; 3], ch: usize) -> (f64, f64) {
    let dims = v.volume_dims().unwrap();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for corner in 0..8 {
        let idx: [usize; 3] = core::array::from_fn(|a| {
            let x = c[a].clamp(0.0, (dims[a] - 1) as f64);
            let base = x.floor() as usize;
            if corner >> a & 1 == 1 { (base + 1).min(dims[a] - 1) } else { base }
        });
        let val = v.at(&[idx[0], idx[1], idx[2], ch]);
        lo = lo.min(val);
        hi = hi.max(val);
    }
    (lo, hi)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn constant_field_is_reproduced(value in -5.0f64..5.0, x in -1.0f64..8.0, y in -1.0f64..7.0, z in -1.0f64..4.0) {
        let v = Tensor::full(&[7, 6, 3, 2], value);
        for s in trilinear_sample(&v, [x, y, z]).unwrap() {
            prop_assert!((s - value).abs() <= 1e-12 * value.abs().max(1.0));
        }
    }

    #[test]
    fn sample_lies_between_neighbours(seed in 0u64..1000, x in 0.0f64..6.0, y in 0.0f64..5.0, z in 0.0f64..2.0) {
        let v = video([7, 6, 3, 2], seed);
        let s = trilinear_sample(&v, [x, y, z]).unwrap();
        for (ch, &val) in s.iter().enumerate() {
            let (lo, hi) = neighbour_bounds(&v, [x, y, z], ch);
            prop_assert!(val >= lo - 1e-12 && val <= hi + 1e-12);
        }
    }

    #[test]
    fn integer_shift_equivariance(seed in 0u64..1000, x in 0.0f64..3.0, y in 0.0f64..3.0, z in 0.0f64..2.0, dx in 0usize..3, dy in 0usize..3) {
        let big = video([8, 8, 3, 1], seed);
        let shifted = big.sub_volume([dx, dy, 0], [5, 5, 3]).unwrap();
        let a = trilinear_sample(&shifted, [x, y, z]).unwrap();
        let b = trilinear_sample(&big, [x + dx as f64, y + dy as f64, z]).unwrap();
        prop_assert!((a[0] - b[0]).abs() < 1e-12);
    }

    #[test]
    fn raising_thresholds_never_raises_cost(
        entropies in proptest::collection::vec(proptest::collection::vec(0.0f64..2.3, 3), 1..40),
        eta in proptest::collection::vec(0.0f64..2.3, 2),
        bump in 0.0f64..1.0,
        stage in 0usize..2,
    ) {
        let records: Vec<ExitRecord> = entropies.iter().enumerate().map(|(i, es)| ExitRecord {
            sample_id: i as u64,
            steps: es.iter().enumerate().map(|(t, &e)| StepRecord {
                entropy: e,
                max_prob: 0.5,
                correct: (i + t) % 2 == 0,
                cumulative_madds: 10 + 7 * t as u64,
            }).collect(),
        }).collect();
        let base = simulate_with(&records, Criterion::Entropy, &eta).unwrap();
        let mut raised = eta.clone();
        raised[stage] += bump;
        let more = simulate_with(&records, Criterion::Entropy, &raised).unwrap();
        prop_assert!(more.total_cost <= base.total_cost);
        prop_assert_eq!(more.histogram.iter().sum::<usize>(), records.len());
    }

    #[test]
    fn backward_is_linear_in_the_loss(seed in 0u64..500, scale in -3.0f64..3.0) {
        let v = video([9, 9, 4, 1], seed);
        let w = video([4, 4, 2, 1], seed + 1);
        let grad = |factor: f64| {
            let mut g = Graph::new();
            let vid = g.constant_ref(&v);
            let c = g.variable(Tensor::vector(vec![4.3, 4.6, 2.1]));
            let crop = crop_cube_pixelgrad(&mut g, vid, c, CubeSize::new(4, 4, 2)).unwrap();
            let weighted = g.affine(crop, w.data(), &[0.0; 32]).unwrap();
            let total = g.sum(weighted).unwrap();
            let loss = g.scale(total, factor).unwrap();
            g.backward(loss).unwrap().get(c).unwrap().data().to_vec()
        };
        let one = grad(1.0);
        let scaled = grad(scale);
        for (a, b) in one.iter().zip(&scaled) {
            prop_assert!((a * scale - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn synthetic_samples_are_deterministic(id in 0u64..10_000, label in 0usize..10) {
        let cfg = SynthConfig { height: 32, width: 32, frames: 8, window: 4, ..SynthConfig::default() };
        prop_assert_eq!(generate_sample(&cfg, id, label), generate_sample(&cfg, id, label));
    }

    #[test]
    fn interpolated_crop_stays_finite(seed in 0u64..500, x in 2.0f64..7.0, y in 2.0f64..7.0, z in 1.0f64..3.0) {
        let v = video([9, 9, 4, 1], seed);
        let crop = crop_cube_interpolated(&v, &CubeSpec::new([x, y, z], CubeSize::new(4, 4, 2))).unwrap();
        prop_assert!(crop.is_finite());
        prop_assert_eq!(crop.shape(), &[4, 4, 2, 1]);
    }
}
