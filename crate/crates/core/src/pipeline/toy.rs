//! Planted-target synthetic data: each sample names one object token; the
//! backbone features carry that token's prototype inside the target box and
//! another token's prototype inside a distractor box.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Config, Sample};
use crate::linguistic::Mode;
use crate::tensor::Tensor;

const NOISE: f64 = 0.1;

#[derive(Debug, Clone, Copy)]
struct Rect {
    top: usize,
    left: usize,
    h: usize,
    w: usize,
}

impl Rect {
    fn contains(&self, i: usize, j: usize) -> bool {
        (self.top..self.top + self.h).contains(&i) && (self.left..self.left + self.w).contains(&j)
    }

    fn overlaps(&self, o: &Rect) -> bool {
        self.top < o.top + o.h && o.top < self.top + self.h && self.left < o.left + o.w && o.left < self.left + self.w
    }

    fn shifted(&self, di: isize, dj: isize, h: usize, w: usize) -> Rect {
        let clamp = |v: usize, d: isize, size: usize, lim: usize| (v as isize + d).clamp(0, (lim - size) as isize) as usize;
        Rect {
            top: clamp(self.top, di, self.h, h),
            left: clamp(self.left, dj, self.w, w),
            ..*self
        }
    }

    fn random(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Rect {
        let rh = rng.random_range(1..=(h / 2).max(1));
        let rw = rng.random_range(1..=(w / 2).max(1));
        Rect {
            top: rng.random_range(0..=h - rh),
            left: rng.random_range(0..=w - rw),
            h: rh,
            w: rw,
        }
    }
}

/// Token ids `0..objects` name objects; the rest are words that never appear
/// in the features.
fn object_count(vocab: usize) -> usize {
    (vocab / 2).max(2)
}

/// `count` samples of `h×w` features (clips of `cfg.k` frames in video mode).
pub fn toy_dataset(cfg: &Config, count: usize, h: usize, w: usize, seed: u64) -> Vec<Sample> {
    assert!(cfg.vocab >= 4 && h >= 1 && w >= 1, "toy data needs vocab >= 4 and a non-empty grid");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let objects = object_count(cfg.vocab);
    let prototypes: Vec<Vec<Vec<f64>>> = cfg
        .backbone
        .iter()
        .map(|&c| (0..objects).map(|_| (0..c).map(|_| rng.random_range(-1.0..1.0)).collect()).collect())
        .collect();
    let frames = cfg.frames();
    (0..count)
        .map(|_| {
            let target = rng.random_range(0..objects);
            let distractor = (target + rng.random_range(1..objects)) % objects;
            let word = |rng: &mut ChaCha8Rng| rng.random_range(objects..cfg.vocab);
            let tokens = vec![word(&mut rng), target, word(&mut rng), word(&mut rng)];

            let t_box = Rect::random(&mut rng, h, w);
            let mut d_box = Rect::random(&mut rng, h, w);
            for _ in 0..16 {
                if !d_box.overlaps(&t_box) {
                    break;
                }
                d_box = Rect::random(&mut rng, h, w);
            }
            let motion = (rng.random_range(-1..=1i64) as isize, rng.random_range(-1..=1i64) as isize);
            let centre = frames / 2;
            let boxes: Vec<(Rect, Rect)> = (0..frames)
                .map(|f| {
                    let dt = f as isize - centre as isize;
                    (t_box.shifted(dt * motion.0, dt * motion.1, h, w), d_box)
                })
                .collect();

            let features = [0, 1, 2].map(|level| {
                let c = cfg.backbone[level];
                let mut data = Vec::with_capacity(frames * h * w * c);
                for (tb, db) in &boxes {
                    for i in 0..h {
                        for j in 0..w {
                            let proto = if tb.contains(i, j) {
                                Some(&prototypes[level][target])
                            } else if db.contains(i, j) {
                                Some(&prototypes[level][distractor])
                            } else {
                                None
                            };
                            for ch in 0..c {
                                let base = proto.map_or(0.0, |p| p[ch]);
                                data.push(base + NOISE * rng.random_range(-1.0..1.0));
                            }
                        }
                    }
                }
                let shape = match cfg.mode {
                    Mode::Image => vec![h, w, c],
                    Mode::Video => vec![frames, h, w, c],
                };
                Tensor::new(shape, data).expect("toy feature shape")
            });
            let (tb, _) = boxes[centre];
            let mask = Tensor::from_fn(&[h, w], |p| tb.contains(p / w, p % w) as u8 as f64);
            Sample { features, tokens, mask }
        })
        .collect()
}
