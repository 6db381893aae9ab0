use std::fs;

use paanet::data::{synth_sample, Sample, SynthSpec};
use paanet::model::{param_layout, ModelConfig, ModelOutputs, ModelParams};
use paanet::tensor::{Graph, Tensor};
use paanet::training::{
    bce_iou_loss, collate, total_loss, train, train_step, AdamConfig, AdamState, Checkpoint, TrainConfig, Trainer,
    BEST_CHECKPOINT, LAST_CHECKPOINT,
};
use paanet::Error;
use proptest::prelude::*;
use tempfile::TempDir;

fn samples(n: usize, seed: u64) -> Vec<Sample> {
    let spec = SynthSpec { count: n, size: (32, 32), seed, ..SynthSpec::default() };
    (0..n).map(|i| synth_sample(&spec, i).unwrap()).collect()
}

fn cfg_in(dir: &std::path::Path, epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        seed: 21,
        checkpoint_dir: Some(dir.to_path_buf()),
        log_path: Some(dir.join("train.log")),
        ..TrainConfig::default()
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

#[test]
fn same_seed_gives_identical_logs_and_checkpoints() {
    let (train_set, val_set) = (samples(10, 1), samples(3, 2));
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    for d in [&a, &b] {
        train(&ModelConfig::tiny(), cfg_in(d.path(), 3), &train_set, &val_set).unwrap();
    }
    for f in ["train.log", LAST_CHECKPOINT, BEST_CHECKPOINT] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    assert_eq!(fs::read_to_string(a.path().join("train.log")).unwrap().lines().count(), 3);
}

#[test]
fn different_seeds_diverge() {
    let (train_set, val_set) = (samples(8, 1), samples(2, 2));
    let a = train(&ModelConfig::tiny(), TrainConfig { epochs: 1, batch_size: 4, seed: 1, ..Default::default() }, &train_set, &val_set)
        .unwrap();
    let b = train(&ModelConfig::tiny(), TrainConfig { epochs: 1, batch_size: 4, seed: 2, ..Default::default() }, &train_set, &val_set)
        .unwrap();
    assert_ne!(a.last.to_bytes(), b.last.to_bytes());
}

#[test]
fn resume_matches_uninterrupted_run() {
    let (train_set, val_set) = (samples(10, 3), samples(3, 4));
    let full = TempDir::new().unwrap();
    let uninterrupted = train(&ModelConfig::tiny(), cfg_in(full.path(), 4), &train_set, &val_set).unwrap();

    let part = TempDir::new().unwrap();
    train(&ModelConfig::tiny(), cfg_in(part.path(), 2), &train_set, &val_set).unwrap();
    let ckpt = Checkpoint::load(&part.path().join(LAST_CHECKPOINT)).unwrap();
    assert_eq!(ckpt.epoch, 2);
    let resumed = Trainer::resume(ckpt, cfg_in(part.path(), 4), &train_set, &val_set).unwrap().run().unwrap();

    assert_eq!(resumed.last.to_bytes(), uninterrupted.last.to_bytes());
    assert_eq!(resumed.log, uninterrupted.log[2..]);
    for f in ["train.log", LAST_CHECKPOINT, BEST_CHECKPOINT] {
        assert_eq!(fs::read(full.path().join(f)).unwrap(), fs::read(part.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn resume_rejects_changed_hyperparameters() {
    let (train_set, val_set) = (samples(4, 3), samples(2, 4));
    let out = train(&ModelConfig::tiny(), TrainConfig { epochs: 1, batch_size: 4, ..Default::default() }, &train_set, &val_set)
        .unwrap();
    let cfg = TrainConfig { epochs: 2, batch_size: 2, ..Default::default() };
    assert!(matches!(Trainer::resume(out.last, cfg, &train_set, &val_set), Err(Error::Config(_))));
}

#[test]
fn save_load_save_is_byte_stable() {
    let dir = TempDir::new().unwrap();
    let out = train(&ModelConfig::tiny(), TrainConfig { epochs: 1, batch_size: 4, ..Default::default() }, &samples(4, 5), &samples(2, 6))
        .unwrap();
    let (p1, p2) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    out.last.save(&p1).unwrap();
    let loaded = Checkpoint::load(&p1).unwrap();
    assert_eq!(loaded, out.last);
    loaded.save(&p2).unwrap();
    assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
}

#[test]
fn default_checkpoint_holds_every_parameter() {
    let cfg = ModelConfig::default();
    let params = ModelParams::<f32>::init(&cfg, 0).unwrap();
    let ckpt = Checkpoint {
        optimizer: AdamConfig::default(),
        batch_size: 8,
        seed: 0,
        adam: AdamState::new(&params),
        params,
        epoch: 0,
        best_val_dsc: 0.0,
        rng: paanet::training::RngState { seed: [1; 32], stream: 1, word_pos: 0 },
    };
    let back = Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap();
    assert_eq!(back.params.len(), param_layout(&cfg).len());
    assert_eq!(back.params.len(), 140);
    assert_eq!(back.params.num_scalars(), ckpt.params.num_scalars());
}

#[test]
fn corrupted_or_mismatched_files_are_rejected() {
    let out = train(&ModelConfig::tiny(), TrainConfig { epochs: 1, batch_size: 4, ..Default::default() }, &samples(4, 5), &samples(2, 6))
        .unwrap();
    let bytes = out.last.to_bytes();
    assert_eq!(&bytes[..4], b"PAAN");

    let mut bad = bytes.clone();
    bad[4] = 99;
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format(m)) if m.contains("version")));
    for i in 0..8 {
        let mut bad = bytes.clone();
        bad[i] ^= 0x10;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format(_))), "byte {i}");
    }
    for cut in [3, 20, bytes.len() / 2, bytes.len() - 1] {
        assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err(), "cut at {cut}");
    }

    // A consistent file whose config disagrees with its tensors: growth
    // (the seventh u32 of the config block) changed and the checksum redone.
    let mut body = bytes[..bytes.len() - 8].to_vec();
    let growth_at = 8 + 4 * 6;
    assert_eq!(u32::from_le_bytes(body[growth_at..growth_at + 4].try_into().unwrap()), 4);
    body[growth_at..growth_at + 4].copy_from_slice(&5u32.to_le_bytes());
    let sum = fnv1a(&body);
    body.extend_from_slice(&sum.to_le_bytes());
    assert!(Checkpoint::from_bytes(&body).is_err());
}

#[test]
fn single_batch_loss_mostly_decreases() {
    let cfg = ModelConfig::tiny();
    let batch = samples(4, 8);
    let refs: Vec<&Sample> = batch.iter().collect();
    let (x, y) = collate(&refs).unwrap();
    let mut params = ModelParams::init(&cfg, 3).unwrap();
    let mut adam = AdamState::new(&params);
    let losses: Vec<f64> =
        (0..51).map(|_| train_step(&mut params, &mut adam, &AdamConfig::default(), &x, &y).unwrap()).collect();
    let down = losses.windows(2).filter(|w| w[1] <= w[0]).count();
    assert!(down >= 45, "{down} of 50 steps non-increasing: {losses:?}");
    assert_eq!(adam.step(), 51);
}

#[test]
fn non_finite_loss_names_the_term() {
    let cfg = ModelConfig::tiny();
    let batch = samples(2, 8);
    let refs: Vec<&Sample> = batch.iter().collect();
    let (x, y) = collate(&refs).unwrap();
    let mut params = ModelParams::init(&cfg, 3).unwrap();
    params.get_mut("head.level2.bias").unwrap().data_mut()[0] = f32::NAN;
    let before = params.clone();
    let mut adam = AdamState::new(&params);
    match train_step(&mut params, &mut adam, &AdamConfig::default(), &x, &y) {
        Err(Error::NonFiniteLoss(msg)) => assert!(msg.contains("side_output2"), "{msg}"),
        other => panic!("expected a non-finite loss, got {other:?}"),
    }
    assert_eq!(adam.step(), 0);
    assert_eq!(params.get("encoder.level1.stem.weight"), before.get("encoder.level1.stem.weight"));
}

fn maps(g: &mut Graph<f64>, n: usize, seed: u64) -> Vec<paanet::tensor::Var> {
    (0..n)
        .map(|k| {
            let t = Tensor::from_fn([1, 1, 8, 8], |i| 0.05 + 0.9 * (((i as u64 * 7 + k as u64 * 13 + seed) % 17) as f64 / 17.0));
            g.constant(t)
        })
        .collect()
}

fn gt() -> Tensor<f64> {
    Tensor::from_fn([1, 1, 8, 8], |i| ((i / 8) >= 3 && (i % 8) < 5) as u8 as f64)
}

#[test]
fn total_loss_is_mean_over_supervised_maps() {
    let mut g = Graph::new();
    let m = maps(&mut g, 6, 1);
    let gt = gt();
    let out = ModelOutputs { prediction: m[0], side_outputs: m[..4].to_vec(), gams: m[4..].to_vec() };
    let total = total_loss(&mut g, &out, &gt, 2).unwrap();
    assert_eq!(total.terms.len(), 6);
    let names: Vec<&str> = total.terms.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["side_output1", "side_output2", "side_output3", "side_output4", "gam0.1", "gam0.2"]);
    let singles: Vec<f64> = m.iter().map(|&v| {
        let l = bce_iou_loss(&mut g, v, &gt).unwrap();
        g.value(l).item().unwrap()
    }).collect();
    let mean = singles.iter().sum::<f64>() / 6.0;
    assert!((g.value(total.total).item().unwrap() - mean).abs() < 1e-12);

    // permuting the supervised set leaves the total unchanged
    let perm = ModelOutputs { prediction: m[5], side_outputs: vec![m[5], m[3], m[1], m[0]], gams: vec![m[4], m[2]] };
    let t2 = total_loss(&mut g, &perm, &gt, 2).unwrap();
    assert!((g.value(t2.total).item().unwrap() - mean).abs() < 1e-12);

    // one supervised map, and identical maps, give the single-map loss
    let one = ModelOutputs { prediction: m[2], side_outputs: vec![m[2]], gams: vec![] };
    let t3 = total_loss(&mut g, &one, &gt, 1).unwrap();
    assert_eq!(g.value(t3.total).item().unwrap(), singles[2]);
    let same = ModelOutputs { prediction: m[2], side_outputs: vec![m[2]; 4], gams: vec![m[2]; 8] };
    let t4 = total_loss(&mut g, &same, &gt, 4).unwrap();
    assert!((g.value(t4.total).item().unwrap() - singles[2]).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn loss_bounds(
        probs in proptest::collection::vec(1e-6f64..(1.0 - 1e-6), 16),
        bits in proptest::collection::vec(proptest::bool::ANY, 16),
    ) {
        let mut g = Graph::new();
        let p = g.constant(Tensor::new([1, 1, 4, 4], probs).unwrap());
        let t = Tensor::new([1, 1, 4, 4], bits.iter().map(|&b| b as u8 as f64).collect()).unwrap();
        let iou = g.soft_iou_loss(p, &t, 1.0).unwrap();
        let total = bce_iou_loss(&mut g, p, &t).unwrap();
        let iou = g.value(iou).item().unwrap();
        prop_assert!((0.0..1.0).contains(&iou));
        prop_assert!(g.value(total).item().unwrap() >= 0.0);
    }
}
