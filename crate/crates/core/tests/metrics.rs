use paanet::metrics::{batch_counts, binarize, confusion, evaluate, ConfusionCounts};
use paanet::tensor::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tally(p: &[u8], g: &[u8]) -> (u64, u64, u64, u64) {
    let mut t = (0, 0, 0, 0);
    for (&a, &b) in p.iter().zip(g) {
        match (a, b) {
            (1, 1) => t.0 += 1,
            (1, 0) => t.1 += 1,
            (0, 1) => t.2 += 1,
            _ => t.3 += 1,
        }
    }
    t
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

#[test]
fn hundred_random_pairs_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..100 {
        let density = rng.gen_range(0.0..1.0);
        let p: Vec<u8> = (0..64).map(|_| rng.gen_bool(density) as u8).collect();
        let g: Vec<u8> = (0..64).map(|_| rng.gen_bool(density) as u8).collect();
        let (tp, fp, fn_, tn) = tally(&p, &g);
        let pf: Vec<f64> = p.iter().map(|&v| v as f64).collect();
        let gf: Vec<f64> = g.iter().map(|&v| v as f64).collect();
        let c = confusion(&pf, &gf).unwrap();
        assert_eq!(c, ConfusionCounts { tp, fp, fn_, tn });
        assert_eq!(c.dsc(), ratio(2 * tp, 2 * tp + fp + fn_));
        assert_eq!(c.iou(), ratio(tp, tp + fp + fn_));
        assert_eq!(c.recall(), ratio(tp, tp + fn_));
        assert_eq!(c.precision(), ratio(tp, tp + fp));
        assert!((c.dsc() - 2.0 * c.iou() / (1.0 + c.iou())).abs() < 1e-12);
    }
}

#[test]
fn report_is_image_mean() {
    let a = Tensor::<f32>::new([1, 1, 1, 4], vec![1.0, 1.0, 0.0, 0.0]).unwrap();
    let b = Tensor::<f32>::new([1, 1, 1, 4], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
    let r = evaluate(&[a.clone(), a.clone()], &[a.clone(), b], 0.5).unwrap();
    assert_eq!(r.n_images, 2);
    assert!((r.dsc - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    assert!((r.miou - 0.75).abs() < 1e-15);
    assert!((r.recall - 1.0).abs() < 1e-15);
    assert!((r.precision - 0.75).abs() < 1e-15);
}

proptest! {
    #[test]
    fn batch_counts_equal_per_image_counts(
        probs in proptest::collection::vec(0.0f64..1.0, 3 * 16),
        gts in proptest::collection::vec(proptest::bool::ANY, 3 * 16),
    ) {
        let p = Tensor::new([3, 1, 4, 4], probs).unwrap();
        let g = Tensor::new([3, 1, 4, 4], gts.iter().map(|&b| b as u8 as f64).collect()).unwrap();
        let batch = batch_counts(&p, &g, 0.5).unwrap();
        let bin = binarize(&p, 0.5);
        for (i, c) in batch.iter().enumerate() {
            let one = confusion(&bin.data()[i * 16..(i + 1) * 16], &g.data()[i * 16..(i + 1) * 16]).unwrap();
            prop_assert_eq!(*c, one);
            prop_assert_eq!(c.total(), 16);
            for m in [c.dsc(), c.iou(), c.recall(), c.precision()] {
                prop_assert!((0.0..=1.0).contains(&m));
            }
        }
    }
}
