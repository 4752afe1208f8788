//! Brute-force oracles for the weak learner and the greedy matcher.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trapnode_core::cascade::HaarFeature;
use trapnode_core::detector::Detection;
use trapnode_core::evaluator::{iou, match_detections};
use trapnode_core::imaging::GrayImage;
use trapnode_core::integral::Rect;
use trapnode_core::trainer::{enumerate_features, train_weak, Label, TrainSample};

const WIN: u32 = 6;

fn naive_value(f: &HaarFeature, img: &GrayImage) -> i64 {
    f.rects()
        .iter()
        .map(|r| {
            let mut s = 0i64;
            for y in r.y..r.y + r.h {
                for x in r.x..r.x + r.w {
                    s += img.get(x, y) as i64;
                }
            }
            r.weight as i64 * s
        })
        .sum()
}

fn naive_norm(img: &GrayImage) -> f64 {
    let n = img.pixels().len() as f64;
    let s: u64 = img.pixels().iter().map(|&p| p as u64).sum();
    let s2: u64 = img.pixels().iter().map(|&p| (p as u64).pow(2)).sum();
    let (s, s2) = (s as f64, s2 as f64);
    let sd = ((s2 - s * s / n) / n).max(0.0).sqrt();
    if sd > 0.0 {
        sd
    } else {
        1.0
    }
}

// Stump error for every integer threshold spanning the value range, both
// polarities; returns (error, polarity rank) minima per feature.
fn exhaustive(features: &[HaarFeature], samples: &[TrainSample], vn: bool) -> Vec<(f64, u8)> {
    let total: f64 = samples.iter().map(|s| s.weight).sum();
    let raw: Vec<Vec<i64>> = features
        .iter()
        .map(|f| samples.iter().map(|s| naive_value(f, &s.window)).collect())
        .collect();
    let norm: Vec<f64> = samples
        .iter()
        .map(|s| if vn { naive_norm(&s.window) } else { 1.0 })
        .collect();
    raw.iter()
        .map(|vals| {
            let scaled: Vec<f64> = vals
                .iter()
                .zip(&norm)
                .map(|(&v, &n)| v as f64 / n)
                .collect();
            let lo = scaled.iter().cloned().fold(f64::INFINITY, f64::min).floor() as i64 - 1;
            let hi = scaled
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max)
                .ceil() as i64
                + 1;
            let mut best = (f64::INFINITY, 0u8);
            for (rank, pol) in [(0u8, 1.0), (1u8, -1.0)] {
                for theta in lo..=hi {
                    let err: f64 = samples
                        .iter()
                        .enumerate()
                        .filter(|&(i, s)| {
                            let says_pos = pol * (vals[i] as f64 - theta as f64 * norm[i]) > 0.0;
                            says_pos != (s.label == Label::Positive)
                        })
                        .map(|(_, s)| s.weight)
                        .sum::<f64>()
                        / total;
                    if err < best.0 {
                        best = (err, rank);
                    }
                }
            }
            best
        })
        .collect()
}

// Integer weights summing to a power of two keep every partial sum exact.
fn dyadic_weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut k = vec![4i32; n];
    for _ in 0..4 * n {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        if k[a] > 1 {
            k[a] -= 1;
            k[b] += 1;
        }
    }
    k.into_iter().map(f64::from).collect()
}

#[test]
fn train_weak_matches_exhaustive_threshold_search() {
    let features = enumerate_features(WIN, WIN, 2, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(0xbeef);
    for case in 0..50 {
        let vn = case % 2 == 0;
        let n = 32;
        let contrast = rng.random_range(8..=255u32);
        let weights = dyadic_weights(&mut rng, n);
        let samples: Vec<TrainSample> = (0..n)
            .map(|i| {
                let label = if i % 3 == 0 {
                    Label::Positive
                } else {
                    Label::Negative
                };
                let dark_left = label == Label::Positive && rng.random_bool(0.8);
                let window = GrayImage::from_fn(WIN, WIN, |x, _| {
                    let v = rng.random_range(0..contrast) as u8;
                    if dark_left && x < WIN / 2 {
                        v / 2
                    } else {
                        v
                    }
                })
                .unwrap();
                TrainSample {
                    window,
                    label,
                    weight: weights[i],
                }
            })
            .collect();
        let out = train_weak(&features, &samples, WIN, vn).unwrap();
        let per_feature = exhaustive(&features, &samples, vn);
        let (j, &(err, rank)) = per_feature
            .iter()
            .enumerate()
            .min_by(|a, b| {
                a.1 .0
                    .total_cmp(&b.1 .0)
                    .then(a.0.cmp(&b.0))
                    .then(a.1 .1.cmp(&b.1 .1))
            })
            .unwrap();
        assert_eq!(out.error, err, "case {case}: error");
        assert_eq!(out.feature_index, j, "case {case}: feature");
        assert_eq!(
            out.classifier.polarity,
            if rank == 0 { 1 } else { -1 },
            "case {case}: polarity"
        );

        // the returned stump attains the reported error
        let total: f64 = samples.iter().map(|s| s.weight).sum();
        let achieved: f64 = samples
            .iter()
            .filter(|s| {
                let v = naive_value(out.classifier.feature(), &s.window);
                out.classifier.passes(v, vn.then(|| naive_norm(&s.window)))
                    != (s.label == Label::Positive)
            })
            .map(|s| s.weight)
            .sum::<f64>()
            / total;
        assert_eq!(achieved, out.error, "case {case}: achieved");
    }
}

fn max_bipartite(adj: &[Vec<bool>]) -> usize {
    fn go(i: usize, used: u32, adj: &[Vec<bool>]) -> usize {
        if i == adj.len() {
            return 0;
        }
        let mut best = go(i + 1, used, adj);
        for (j, &e) in adj[i].iter().enumerate() {
            if e && used & (1 << j) == 0 {
                best = best.max(1 + go(i + 1, used | (1 << j), adj));
            }
        }
        best
    }
    go(0, 0, adj)
}

fn random_box(rng: &mut ChaCha8Rng) -> Rect {
    Rect::new(
        rng.random_range(0..40),
        rng.random_range(0..40),
        rng.random_range(4..16),
        rng.random_range(4..16),
    )
}

#[test]
fn greedy_matching_against_bipartite_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut equal, trials) = (0, 4000);
    for _ in 0..trials {
        let preds: Vec<Detection> = (0..rng.random_range(0..=6))
            .map(|_| Detection {
                bbox: random_box(&mut rng),
                level: 0,
                score: rng.random_range(0.0..1.0),
            })
            .collect();
        let gts: Vec<Rect> = (0..rng.random_range(0..=6))
            .map(|_| random_box(&mut rng))
            .collect();
        let thr = [0.01, 0.1, 0.3, 0.5][rng.random_range(0..4)];
        let adj: Vec<Vec<bool>> = preds
            .iter()
            .map(|p| gts.iter().map(|g| iou(&p.bbox, g) >= thr).collect())
            .collect();
        let oracle = max_bipartite(&adj);
        let greedy = match_detections(&preds, &gts, thr).matched;
        assert!(greedy <= oracle);
        equal += usize::from(greedy == oracle);
    }
    assert!(equal as f64 >= 0.9 * trials as f64, "{equal}/{trials}");
}
