use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::time::Instant;

use proptest::prelude::*;
use segflow_core::synth::{self, SceneSpec, SpecRanges, SpriteShape};

fn spec(shape: SpriteShape, velocity: [f64; 2], drift: [f64; 2], seed: u64) -> SceneSpec {
    SceneSpec {
        frame_size: 64,
        num_frames: 12,
        sprite_shape: shape,
        sprite_scale: 0.35,
        sprite_texture: seed ^ 11,
        background_texture: seed ^ 23,
        object_velocity: velocity,
        camera_drift: drift,
        seed,
    }
}

fn frame_hash(frames: &[segflow_core::Tensor<f32>]) -> u64 {
    let mut h = DefaultHasher::new();
    for f in frames {
        for v in f.data() {
            v.to_bits().hash(&mut h);
        }
    }
    h.finish()
}

#[test]
fn centroid_advances_two_pixels_per_frame() {
    let v = synth::generate_video(&spec(SpriteShape::Disk, [2.0, 0.0], [0.0, 0.0], 5)).unwrap();
    let mut checked = 0;
    for t in 0..v.gt_masks.len() - 1 {
        if v.object_velocities[t] != [2.0, 0.0] {
            continue; // bounced off a margin
        }
        let (x0, y0) = v.gt_masks[t].centroid().unwrap();
        let (x1, y1) = v.gt_masks[t + 1].centroid().unwrap();
        assert!((x1 - x0 - 2.0).abs() <= 1e-9 && (y1 - y0).abs() <= 1e-9);
        checked += 1;
    }
    assert!(checked >= 5);
}

#[test]
fn same_spec_is_bitwise_reproducible() {
    let s = spec(SpriteShape::Blob, [1.5, -2.0], [0.5, 0.25], 9);
    assert_eq!(synth::generate_video(&s).unwrap(), synth::generate_video(&s).unwrap());
}

#[test]
fn different_seeds_give_different_pixels() {
    let ranges = SpecRanges { num_frames: 3, ..Default::default() };
    let a = synth::build_corpus(4, &ranges, 1).unwrap();
    let b = synth::build_corpus(4, &ranges, 2).unwrap();
    for (x, y) in a.videos.iter().zip(&b.videos) {
        assert_ne!(frame_hash(&x.frames), frame_hash(&y.frames));
    }
    let hashes: std::collections::HashSet<u64> = a.videos.iter().map(|v| frame_hash(&v.frames)).collect();
    assert_eq!(hashes.len(), 4);
}

#[test]
fn single_video_corpus_and_empty_request() {
    let ds = synth::build_corpus(1, &SpecRanges::default(), 0).unwrap();
    assert_eq!(ds.len(), 1);
    assert_eq!(ds.videos[0].frames.len(), 24);
    assert_eq!(ds.videos[0].size(), (64, 64));
    assert!(ds.has_ground_truth());
    assert!(synth::build_corpus(0, &SpecRanges::default(), 0).is_err());
}

#[test]
fn default_corpus_builds_within_a_minute() {
    let t = Instant::now();
    let ds = synth::build_corpus(200, &SpecRanges::default(), 3).unwrap();
    let secs = t.elapsed().as_secs_f64();
    assert_eq!(ds.len(), 200);
    println!("200 videos in {secs:.1}s");
    assert!(secs < 60.0);
}

#[test]
fn corpus_has_drifting_and_still_cameras() {
    let ranges = SpecRanges { num_frames: 2, ..Default::default() };
    let drifting = (0..200)
        .filter(|&i| synth::corpus_spec(&ranges, 4, i).unwrap().camera_drift != [0.0, 0.0])
        .count();
    assert!((70..=130).contains(&drifting), "{drifting}");
}

/// Inside test for shapes with an exact signed distance.
fn analytic_inside(shape: SpriteShape, r: f64, dx: f64, dy: f64) -> bool {
    match shape {
        SpriteShape::Disk => dx.hypot(dy) <= r,
        SpriteShape::Square => dx.abs() <= r && dy.abs() <= r,
        SpriteShape::Blob => unreachable!(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn masks_equal_analytic_support(
        shape in prop::sample::select(vec![SpriteShape::Disk, SpriteShape::Square]),
        vx in -3.0f64..3.0, vy in -3.0f64..3.0, seed in any::<u64>(),
    ) {
        let s = spec(shape, [vx, vy], [0.0, 0.0], seed);
        prop_assume!(s.validate().is_ok());
        let v = synth::generate_video(&s).unwrap();
        for (m, pos) in v.gt_masks.iter().zip(&v.object_positions) {
            for y in 0..64 {
                for x in 0..64 {
                    let inside = analytic_inside(shape, s.radius(), x as f64 - pos[0], y as f64 - pos[1]);
                    prop_assert_eq!(m.get(y, x), inside);
                }
            }
        }
    }

    #[test]
    fn sprite_stays_inside_and_moves_as_recorded(
        shape in prop::sample::select(SpriteShape::ALL.to_vec()),
        vx in -3i32..=3, vy in -3i32..=3, dx in -1.0f64..1.0, seed in any::<u64>(),
    ) {
        let s = spec(shape, [vx as f64, vy as f64], [dx, 0.0], seed);
        prop_assume!(s.validate().is_ok());
        let v = synth::generate_video(&s).unwrap();
        for m in &v.gt_masks {
            prop_assert!(m.count() > 0);
            for i in 0..64 {
                prop_assert!(!m.get(0, i) && !m.get(63, i) && !m.get(i, 0) && !m.get(i, 63));
            }
        }
        for t in 0..v.object_velocities.len() {
            let vel = v.object_velocities[t];
            prop_assert!((vel[0].abs() - s.object_velocity[0].abs()).abs() < 1e-9 || vel[0].fract() != 0.0);
            if vel[0].fract() != 0.0 || vel[1].fract() != 0.0 {
                continue; // sub-pixel bounce position
            }
            let (x0, y0) = v.gt_masks[t].centroid().unwrap();
            let (x1, y1) = v.gt_masks[t + 1].centroid().unwrap();
            prop_assert!((x1 - x0 - vel[0]).abs() <= 0.1 && (y1 - y0 - vel[1]).abs() <= 0.1);
        }
    }
}

#[test]
fn invalid_scenes_are_rejected() {
    let mut s = spec(SpriteShape::Disk, [1.0, 0.0], [0.9, 0.0], 0);
    assert!(synth::generate_video(&s).is_err());
    s.camera_drift = [0.0, 0.0];
    s.sprite_scale = 1.2;
    assert!(synth::generate_video(&s).is_err());
    s.sprite_scale = 0.3;
    s.num_frames = 1;
    assert!(synth::generate_video(&s).is_err());
}
