use crate::data::{LabeledSet, Split, Task, TaskSchedule};
use crate::error::{Error, Result};
use crate::models::OutputKind;
use crate::numerics::{Rng, Stream, Tensor};
use crate::scalar::Scalar;

pub const GLYPH_ROWS: usize = 7;
pub const GLYPH_COLS: usize = 5;

/// 5×7 digit shapes, one row per byte, most significant of the low five
/// bits leftmost. Index `d` is digit `d`, used for category `d + 1`.
pub const DIGIT_BITMAPS: [[u8; GLYPH_ROWS]; 10] = [
    [
        0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110,
    ],
    [
        0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110,
    ],
    [
        0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111,
    ],
    [
        0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110,
    ],
    [
        0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010,
    ],
    [
        0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110,
    ],
    [
        0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110,
    ],
    [
        0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000,
    ],
    [
        0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110,
    ],
    [
        0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100,
    ],
];

/// Rendering and jitter of synthetic digits.
#[derive(Clone, Debug, PartialEq)]
pub struct GlyphSpec {
    pub bitmaps: [[u8; GLYPH_ROWS]; 10],
    pub height: usize,
    pub width: usize,
    /// Uniform integer shift in `-max_shift..=max_shift` on each axis.
    pub max_shift: usize,
    /// Probability of inverting each pixel.
    pub flip_prob: f64,
    /// Standard deviation of additive Gaussian intensity noise.
    pub noise_sigma: f64,
}

impl Default for GlyphSpec {
    fn default() -> Self {
        Self {
            bitmaps: DIGIT_BITMAPS,
            height: 16,
            width: 16,
            max_shift: 2,
            flip_prob: 0.02,
            noise_sigma: 0.05,
        }
    }
}

impl GlyphSpec {
    pub fn noise_free(self) -> Self {
        Self {
            max_shift: 0,
            flip_prob: 0.0,
            noise_sigma: 0.0,
            ..self
        }
    }
}

/// Bitmap of `digit` upscaled by the largest integer factor that fits the
/// canvas, centered, then shifted by `(dy, dx)` with clipping. On pixels
/// are `+1`, off pixels `-1`.
pub fn render_glyph(spec: &GlyphSpec, digit: usize, dy: isize, dx: isize) -> Vec<f64> {
    let (h, w) = (spec.height, spec.width);
    let scale = (h / GLYPH_ROWS).min(w / GLYPH_COLS).max(1);
    let top = (h as isize - (GLYPH_ROWS * scale) as isize) / 2 + dy;
    let left = (w as isize - (GLYPH_COLS * scale) as isize) / 2 + dx;
    let bitmap = &spec.bitmaps[digit];
    let mut out = vec![-1.0; h * w];
    for r in 0..GLYPH_ROWS * scale {
        for c in 0..GLYPH_COLS * scale {
            let on = bitmap[r / scale] >> (GLYPH_COLS - 1 - c / scale) & 1 == 1;
            let (y, x) = (top + r as isize, left + c as isize);
            if on && (0..h as isize).contains(&y) && (0..w as isize).contains(&x) {
                out[y as usize * w + x as usize] = 1.0;
            }
        }
    }
    out
}

fn jittered<S: Scalar>(spec: &GlyphSpec, digit: usize, rng: &mut Rng, out: &mut Vec<S>) {
    let s = spec.max_shift;
    let mut shift = || {
        if s == 0 {
            0
        } else {
            rng.below(2 * s + 1) as isize - s as isize
        }
    };
    let dy = shift();
    let dx = shift();
    for v in render_glyph(spec, digit, dy, dx) {
        let mut v = if spec.flip_prob > 0.0 && rng.bernoulli(spec.flip_prob) {
            -v
        } else {
            v
        };
        if spec.noise_sigma > 0.0 {
            v = (v + spec.noise_sigma * rng.normal()).clamp(-1.0, 1.0);
        }
        out.push(S::lit(v));
    }
}

/// `M` single-category tasks of jittered digits. Category `c` shows digit
/// `c − 1`; each category draws from its own stream, train samples first.
pub fn make_glyph_tasks<S: Scalar>(
    seed: u64,
    n_train: usize,
    n_test: usize,
    categories: usize,
    spec: &GlyphSpec,
) -> Result<TaskSchedule<S>> {
    if categories == 0 || categories > 10 {
        return Err(Error::InvalidArgument(format!(
            "glyph tasks support 1..=10 categories, got {categories}"
        )));
    }
    if n_train == 0 || n_test == 0 || spec.height == 0 || spec.width == 0 {
        return Err(Error::InvalidArgument(
            "glyph set sizes must be positive".into(),
        ));
    }
    let dim = spec.height * spec.width;
    let mut tasks = Vec::with_capacity(categories);
    for c in 1..=categories {
        let mut rng = Rng::derive(seed, Stream::Data, c as u64);
        let mut make = |n: usize, split| -> Result<LabeledSet<S>> {
            let mut data = Vec::with_capacity(n * dim);
            for _ in 0..n {
                jittered(spec, c - 1, &mut rng, &mut data);
            }
            LabeledSet::new(Tensor::matrix(n, dim, data)?, vec![c; n], split)
        };
        let train = make(n_train, Split::Train)?;
        let test = make(n_test, Split::Test)?;
        tasks.push(Task {
            category: c,
            train,
            test,
        });
    }
    TaskSchedule::from_tasks(
        tasks,
        OutputKind::Image {
            height: spec.height,
            width: spec.width,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_free_samples_equal_bitmap() {
        let spec = GlyphSpec::default().noise_free();
        let s = make_glyph_tasks::<f64>(1, 5, 3, 10, &spec).unwrap();
        for task in &s.tasks {
            let base = render_glyph(&spec, task.category - 1, 0, 0);
            for i in 0..5 {
                assert_eq!(task.train.samples.row(i), &base[..]);
            }
        }
    }

    #[test]
    fn digit_one_is_centered_and_upscaled() {
        let spec = GlyphSpec::default();
        let img = render_glyph(&spec, 1, 0, 0);
        // Scale 2: 10×14 block at rows 1..15, cols 3..13.
        let on = img.iter().filter(|&&v| v > 0.0).count();
        let bits: u32 = DIGIT_BITMAPS[1].iter().map(|r| r.count_ones()).sum();
        assert_eq!(on, 4 * bits as usize);
        assert_eq!(img[0], -1.0);
        // Bottom bar of "1" spans glyph cols 1..4 on glyph row 6.
        assert_eq!(img[13 * 16 + 3 + 2], 1.0);
        assert_eq!(img[13 * 16 + 3], -1.0);
    }

    #[test]
    fn shifts_clip_at_edges() {
        let spec = GlyphSpec::default();
        let img = render_glyph(&spec, 8, 10, 0);
        assert!(img[..10 * 16].iter().all(|&v| v == -1.0));
        assert!(img.contains(&1.0));
    }

    #[test]
    fn deterministic_and_bounded() {
        let spec = GlyphSpec::default();
        let a = make_glyph_tasks::<f64>(7, 20, 5, 3, &spec).unwrap();
        let b = make_glyph_tasks::<f64>(7, 20, 5, 3, &spec).unwrap();
        assert_eq!(a, b);
        let c = make_glyph_tasks::<f64>(8, 20, 5, 3, &spec).unwrap();
        assert_ne!(a, c);
        for t in &a.tasks {
            assert!(t.train.samples.max_abs() <= 1.0);
            assert_ne!(t.train.samples.row(0), t.test.samples.row(0));
        }
    }

    #[test]
    fn flip_rate_matches_probability() {
        let spec = GlyphSpec {
            max_shift: 0,
            flip_prob: 0.05,
            noise_sigma: 0.0,
            ..GlyphSpec::default()
        };
        let s = make_glyph_tasks::<f64>(3, 10_000, 1, 1, &spec).unwrap();
        let base = render_glyph(&spec, 0, 0, 0);
        let flipped = s.tasks[0]
            .train
            .samples
            .data()
            .chunks(256)
            .flat_map(|row| row.iter().zip(&base).filter(|(a, b)| a != b))
            .count();
        let rate = flipped as f64 / (10_000.0 * 256.0);
        assert!((rate - 0.05).abs() < 0.005, "rate {rate}");
    }

    #[test]
    fn rejects_too_many_categories() {
        assert!(make_glyph_tasks::<f64>(1, 1, 1, 11, &GlyphSpec::default()).is_err());
    }
}
