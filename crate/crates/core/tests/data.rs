use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use segflow_core::data::{self, AugmentConfig, FramePair, Video, VideoDataset};
use segflow_core::Tensor;

fn noise(seed: u64, h: usize, w: usize) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(&[3, h, w], |_| rng.gen_range(0.0..1.0))
}

fn video(id: &str, frames: usize, h: usize, w: usize) -> Video {
    Video {
        id: id.into(),
        frames: (0..frames).map(|t| noise(t as u64 + 100 * id.len() as u64, h, w)).collect(),
        gt_masks: None,
        meta: vec![],
    }
}

#[test]
fn videos_are_drawn_uniformly() {
    let ds = VideoDataset::new(vec![video("a", 6, 8, 8), video("bb", 6, 8, 8)]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let n = 10_000;
    let first = (0..n).filter(|_| data::sample_pair(&ds, &mut rng).unwrap().video == 0).count();
    let sigma = (n as f64 * 0.25).sqrt();
    assert!((first as f64 - n as f64 / 2.0).abs() <= 3.0 * sigma, "{first}");
}

#[test]
fn pairs_are_adjacent_frames() {
    let ds = VideoDataset::new(vec![video("a", 5, 8, 8)]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let p = data::sample_pair(&ds, &mut rng).unwrap();
        assert!(p.t < 4);
        assert_eq!(p.first, ds.videos[0].frames[p.t]);
        assert_eq!(p.second, ds.videos[0].frames[p.t + 1]);
    }
}

#[test]
fn malformed_videos_are_rejected() {
    assert!(VideoDataset::new(vec![video("a", 1, 8, 8)]).is_err());
    let mut v = video("a", 3, 8, 8);
    v.frames[2] = noise(0, 8, 16);
    assert!(VideoDataset::new(vec![v]).is_err());
    let mut v = video("a", 2, 8, 8);
    v.frames[0].data_mut()[0] = 1.5;
    assert!(VideoDataset::new(vec![v]).is_err());
}

#[test]
fn static_background_stays_aligned() {
    let frame = noise(3, 64, 80);
    let pair = FramePair { video: 0, t: 0, first: frame.clone(), second: frame };
    let cfg = AugmentConfig { resize_short: 72, crop_size: 64, hflip_prob: 0.5 };
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..10 {
        let out = data::augment(&pair, &cfg, &mut rng).unwrap();
        assert_eq!(out.first, out.second);
        assert_eq!(out.first.shape(), &[3, 64, 64]);
    }
}

#[test]
fn frame_smaller_than_crop_is_an_error() {
    let pair = FramePair { video: 0, t: 0, first: noise(0, 48, 48), second: noise(1, 48, 48) };
    let cfg = AugmentConfig { resize_short: 48, crop_size: 64, hflip_prob: 0.0 };
    assert!(data::augment(&pair, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// Both frames go through the same geometric transform: augmenting
    /// (A, B) gives the same frames as augmenting (A, A) and (B, B) under
    /// the same random state.
    #[test]
    fn augmentation_is_shared_by_both_frames(
        seed in any::<u64>(), h in 64usize..90, w in 64usize..90, flip in 0.0f64..=1.0, short in 64usize..80,
    ) {
        let (a, b) = (noise(seed, h, w), noise(seed ^ 1, h, w));
        let cfg = AugmentConfig { resize_short: short, crop_size: 64, hflip_prob: flip };
        let run = |x: &Tensor<f32>, y: &Tensor<f32>| {
            let p = FramePair { video: 0, t: 0, first: x.clone(), second: y.clone() };
            data::augment(&p, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
        };
        let ab = run(&a, &b);
        prop_assert_eq!(&ab.first, &run(&a, &a).first);
        prop_assert_eq!(&ab.second, &run(&b, &b).second);
        prop_assert!(ab.first.data().iter().chain(ab.second.data()).all(|v| (0.0..=1.0).contains(v)));
    }
}
