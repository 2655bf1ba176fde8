use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use segflow_core::data::BinaryMask;
use segflow_core::metrics::{self, SaliencyMap, BETA_SQ};

/// Naive per-pixel loops over all 255 thresholds.
mod oracle {
    pub fn jaccard(p: &[bool], g: &[bool]) -> f64 {
        let mut inter = 0.0;
        let mut union = 0.0;
        for i in 0..p.len() {
            if p[i] && g[i] {
                inter += 1.0;
            }
            if p[i] || g[i] {
                union += 1.0;
            }
        }
        if union == 0.0 {
            1.0
        } else {
            inter / union
        }
    }

    pub fn f_beta(s: &[f64], g: &[bool], beta_sq: f64) -> f64 {
        let mut best = 0.0f64;
        for k in 1..=255 {
            let t = k as f64 / 255.0;
            let (mut tp, mut fp, mut fnn) = (0.0, 0.0, 0.0);
            for i in 0..s.len() {
                let pos = s[i] >= t;
                if pos && g[i] {
                    tp += 1.0;
                } else if pos {
                    fp += 1.0;
                } else if g[i] {
                    fnn += 1.0;
                }
            }
            let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let r = tp / (tp + fnn);
            let f = if beta_sq * p + r > 0.0 { (1.0 + beta_sq) * p * r / (beta_sq * p + r) } else { 0.0 };
            best = best.max(f);
        }
        best
    }

    pub fn mae(s: &[f64], g: &[bool]) -> f64 {
        let mut total = 0.0;
        for i in 0..s.len() {
            total += (s[i] - if g[i] { 1.0 } else { 0.0 }).abs();
        }
        total / s.len() as f64
    }
}

fn random_case(rng: &mut ChaCha8Rng) -> (SaliencyMap, BinaryMask, BinaryMask) {
    let (h, w) = (rng.gen_range(1..20), rng.gen_range(1..20));
    let density = rng.gen_range(0.05..0.95);
    let mut gt: Vec<bool> = (0..h * w).map(|_| rng.gen_bool(density)).collect();
    gt[rng.gen_range(0..h * w)] = true;
    // Mix of exact threshold values, hard values and continuous scores.
    let scores: Vec<f64> = (0..h * w)
        .map(|_| match rng.gen_range(0..4) {
            0 => rng.gen_range(0..=255) as f64 / 255.0,
            1 => rng.gen_range(0..=1) as f64,
            _ => rng.gen_range(0.0..=1.0),
        })
        .collect();
    let pred: Vec<bool> = (0..h * w).map(|_| rng.gen_bool(0.5)).collect();
    (
        SaliencyMap::new(h, w, scores).unwrap(),
        BinaryMask::new(h, w, gt).unwrap(),
        BinaryMask::new(h, w, pred).unwrap(),
    )
}

#[test]
fn metrics_match_naive_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..100 {
        let (sal, gt, pred) = random_case(&mut rng);
        let j = metrics::jaccard(&pred, &gt).unwrap();
        assert!((j - oracle::jaccard(pred.data(), gt.data())).abs() <= 1e-9);
        let f = metrics::f_beta(&sal, &gt, BETA_SQ).unwrap();
        assert!((f - oracle::f_beta(sal.scores(), gt.data(), BETA_SQ)).abs() <= 1e-9);
        let e = metrics::mae(&sal, &gt).unwrap();
        assert!((e - oracle::mae(sal.scores(), gt.data())).abs() <= 1e-9);
    }
}

#[test]
fn f_beta_hand_value_at_half_precision() {
    // Every pixel positive at every threshold: P = 0.5, R = 1.
    let gt = BinaryMask::from_fn(2, 2, |_, x| x == 0);
    let sal = SaliencyMap::new(2, 2, vec![1.0; 4]).unwrap();
    let f = metrics::f_beta(&sal, &gt, BETA_SQ).unwrap();
    let expected = 1.3 * 0.5 / (0.15 + 1.0);
    assert!((f - expected).abs() <= 1e-12);
    assert!((f - 0.565_217_391_304_347_8).abs() <= 1e-12);
    assert!((metrics::f_beta_from_pr(0.5, 1.0, 0.3) - expected).abs() <= 1e-15);
}

#[test]
fn perfect_soft_map_is_invariant_to_monotone_rescaling() {
    let gt = BinaryMask::from_fn(6, 6, |y, x| (y + x) % 3 == 0);
    let hard = SaliencyMap::from_mask(&gt);
    for f in [|v: f64| v * 0.9 + 0.05, |v: f64| v.powi(3), |v: f64| (v + 0.2).sqrt() / 1.2_f64.sqrt()] {
        let scaled = SaliencyMap::new(6, 6, hard.scores().iter().map(|&v| f(v)).collect()).unwrap();
        assert_eq!(metrics::f_beta(&scaled, &gt, BETA_SQ).unwrap(), 1.0);
    }
}

proptest! {
    #[test]
    fn jaccard_is_symmetric(a in prop::collection::vec(any::<bool>(), 30), b in prop::collection::vec(any::<bool>(), 30)) {
        let a = BinaryMask::new(5, 6, a).unwrap();
        let b = BinaryMask::new(5, 6, b).unwrap();
        prop_assert_eq!(metrics::jaccard(&a, &b).unwrap(), metrics::jaccard(&b, &a).unwrap());
    }

    #[test]
    fn metric_ranges(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (sal, gt, pred) = random_case(&mut rng);
        let j = metrics::jaccard(&pred, &gt).unwrap();
        let f = metrics::f_beta(&sal, &gt, BETA_SQ).unwrap();
        let e = metrics::mae(&sal, &gt).unwrap();
        prop_assert!((0.0..=1.0).contains(&j));
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert!((0.0..=1.0).contains(&e));
    }
}
