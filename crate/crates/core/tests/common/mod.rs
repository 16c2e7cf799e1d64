//! Seeded synthetic fundus-like images: dark Bézier "vessels" of varying
//! width on a noisy, unevenly lit background.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use vesselbench::imagegrid::{BinaryMask, GrayImage, Grid};
use vesselbench::pixelmodel::{LabeledImage, UnlabeledImage};

pub const SIZE: usize = 128;

type Point = (f64, f64);

fn bezier(p: [Point; 4], t: f64) -> Point {
    let u = 1.0 - t;
    let w = [u * u * u, 3.0 * u * u * t, 3.0 * u * t * t, t * t * t];
    let x = w.iter().zip(&p).map(|(w, q)| w * q.0).sum();
    let y = w.iter().zip(&p).map(|(w, q)| w * q.1).sum();
    (x, y)
}

/// One image and its vessel mask.
pub fn sample(rng: &mut ChaCha8Rng) -> (GrayImage, BinaryMask) {
    let n = SIZE;
    let mut vessel = vec![0.0f64; n * n];
    let curves = rng.gen_range(3..=5);
    for _ in 0..curves {
        let mut pt = || (rng.gen_range(-10.0..n as f64 + 10.0), rng.gen_range(-10.0..n as f64 + 10.0));
        let ctrl = [pt(), pt(), pt(), pt()];
        let width: f64 = rng.gen_range(1.0..=4.0);
        let r = width / 2.0;
        let contrast: f64 = rng.gen_range(0.10..0.25);
        let steps = 400;
        for k in 0..=steps {
            let (cx, cy) = bezier(ctrl, k as f64 / steps as f64);
            let (r0, r1) = ((cy - r).floor().max(0.0) as usize, (cy + r).ceil().min(n as f64 - 1.0));
            let (c0, c1) = ((cx - r).floor().max(0.0) as usize, (cx + r).ceil().min(n as f64 - 1.0));
            if r1 < 0.0 || c1 < 0.0 {
                continue;
            }
            for row in r0..=r1 as usize {
                for col in c0..=c1 as usize {
                    let (dx, dy) = (col as f64 + 0.5 - cx, row as f64 + 0.5 - cy);
                    if dx * dx + dy * dy <= r * r {
                        let v = &mut vessel[row * n + col];
                        *v = v.max(contrast);
                    }
                }
            }
        }
    }
    let noise = Normal::new(0.0, 0.08).expect("valid sigma");
    let (gx, gy) = (rng.gen_range(-0.15..0.15), rng.gen_range(-0.15..0.15));
    let img = Grid::from_fn(n, n, |row, col| {
        let light = 0.6 + gx * (col as f64 / n as f64 - 0.5) + gy * (row as f64 / n as f64 - 0.5);
        let v = light - vessel[row * n + col];
        (v + noise.sample(rng)).clamp(0.0, 1.0)
    });
    let gt = vessel.iter().map(|&c| c > 0.0).collect();
    (img, BinaryMask::new(n, n, gt).expect("square mask"))
}

pub fn labeled_batch(seed: u64, count: usize) -> Vec<LabeledImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let (image, gt) = sample(&mut rng);
            LabeledImage { id: format!("syn{i:02}"), image, gt }
        })
        .collect()
}

pub fn unlabeled_batch(seed: u64, count: usize) -> Vec<UnlabeledImage> {
    labeled_batch(seed, count)
        .into_iter()
        .map(|s| UnlabeledImage { id: format!("u-{}", s.id), image: s.image })
        .collect()
}

pub fn prevalence(set: &[LabeledImage]) -> f64 {
    let ones: usize = set.iter().map(|s| s.gt.count_ones()).sum();
    ones as f64 / (set.len() * SIZE * SIZE) as f64
}
