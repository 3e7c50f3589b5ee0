//! Seeded synthetic training data: a square "face" motif with a dark eye band
//! on a light field, over noise or gradient backgrounds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::{GrayImage, Raster, Rect};

/// Eye band rows as fractions of the motif side.
pub const EYE_ROWS: (f64, f64) = (0.2, 0.4);
/// Eye band columns as fractions of the motif side.
pub const EYE_COLS: (f64, f64) = (0.1, 0.9);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MotifStyle {
    pub eye: u8,
    pub face: u8,
    /// Additive uniform noise amplitude.
    pub noise: u8,
}

impl Default for MotifStyle {
    fn default() -> Self {
        MotifStyle {
            eye: 60,
            face: 180,
            noise: 20,
        }
    }
}

fn jittered(rng: &mut impl Rng, v: u8, amp: u8) -> u8 {
    let a = amp as i32;
    (v as i32 + rng.gen_range(-a..=a)).clamp(0, 255) as u8
}

/// Uniform noise or a noisy linear ramp in a random direction, equally likely.
pub fn background(rng: &mut impl Rng, width: usize, height: usize, noise: u8) -> GrayImage {
    if rng.gen_bool(0.5) {
        return GrayImage::from_fn(width, height, |_, _| rng.gen());
    }
    let (a, b): (f64, f64) = (rng.gen_range(0.0..=255.0), rng.gen_range(0.0..=255.0));
    let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (theta.cos(), theta.sin());
    let span = (width as f64 * dx.abs() + height as f64 * dy.abs()).max(1.0);
    let x0 = if dx < 0.0 { width as f64 } else { 0.0 };
    let y0 = if dy < 0.0 { height as f64 } else { 0.0 };
    GrayImage::from_fn(width, height, |x, y| {
        let t = ((x as f64 + 0.5 - x0) * dx + (y as f64 + 0.5 - y0) * dy) / span;
        let v = (a + (b - a) * t.clamp(0.0, 1.0)).round() as u8;
        jittered(rng, v, noise)
    })
}

/// Paints the motif over every pixel whose center lies in the square with
/// top-left `(x0, y0)` and side `side`.
pub fn draw_motif(
    img: &mut GrayImage,
    x0: f64,
    y0: f64,
    side: f64,
    style: &MotifStyle,
    rng: &mut impl Rng,
) {
    let (w, h) = (img.width(), img.height());
    for y in 0..h {
        let v = (y as f64 + 0.5 - y0) / side;
        if !(0.0..1.0).contains(&v) {
            continue;
        }
        for x in 0..w {
            let u = (x as f64 + 0.5 - x0) / side;
            if !(0.0..1.0).contains(&u) {
                continue;
            }
            let in_eyes =
                (EYE_ROWS.0..EYE_ROWS.1).contains(&v) && (EYE_COLS.0..EYE_COLS.1).contains(&u);
            let base = if in_eyes { style.eye } else { style.face };
            img.set(x, y, jittered(rng, base, style.noise));
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorpusSpec {
    pub seed: u64,
    pub n_pos: usize,
    pub n_neg: usize,
    /// Side of each positive sample, normally the detector base window.
    pub image_size: usize,
    /// Side of each negative background image.
    pub negative_size: usize,
    pub motif: MotifStyle,
    /// Relative motif size and position jitter inside positive samples.
    pub jitter: f64,
    /// Annotated one-motif scenes, usable as a source of hard negatives.
    pub n_scenes: usize,
    pub scene_size: usize,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            seed: 0,
            n_pos: 200,
            n_neg: 500,
            image_size: 24,
            negative_size: 64,
            motif: MotifStyle::default(),
            jitter: 0.1,
            n_scenes: 0,
            scene_size: 64,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    pub positives: Vec<GrayImage>,
    pub negatives: Vec<GrayImage>,
    pub scenes: Vec<(GrayImage, Rect)>,
}

/// Positive sample: a base-sized view of a motif whose side and center vary
/// by up to `jitter` of the sample size.
pub fn positive_sample(
    rng: &mut impl Rng,
    size: usize,
    style: &MotifStyle,
    jitter: f64,
) -> GrayImage {
    let s = size as f64;
    let side = s * rng.gen_range(1.0 - jitter..=1.0 + jitter);
    let shift = jitter * s / 2.0;
    let cx = s / 2.0 + rng.gen_range(-shift..=shift);
    let cy = s / 2.0 + rng.gen_range(-shift..=shift);
    let mut img = background(rng, size, size, style.noise);
    draw_motif(&mut img, cx - side / 2.0, cy - side / 2.0, side, style, rng);
    img
}

/// Motif sides used in scenes for a detector window of side `base`: from the
/// window itself up to 1.75 times it.
pub fn scene_sides(base: usize) -> std::ops::RangeInclusive<usize> {
    base..=base * 7 / 4
}

/// Positives, negatives and scenes come from independent streams of the same
/// seed, so changing one count leaves the other sets unchanged.
pub fn generate_corpus(spec: &CorpusSpec) -> Corpus {
    let mut pos_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut neg_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    neg_rng.set_stream(1);
    let mut scene_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    scene_rng.set_stream(2);
    let sides = scene_sides(spec.image_size);
    Corpus {
        positives: (0..spec.n_pos)
            .map(|_| positive_sample(&mut pos_rng, spec.image_size, &spec.motif, spec.jitter))
            .collect(),
        negatives: (0..spec.n_neg)
            .map(|_| {
                background(
                    &mut neg_rng,
                    spec.negative_size,
                    spec.negative_size,
                    spec.motif.noise,
                )
            })
            .collect(),
        scenes: (0..spec.n_scenes)
            .map(|_| positive_scene(&mut scene_rng, spec.scene_size, sides.clone(), &spec.motif))
            .collect(),
    }
}

/// A `size`×`size` background with one whole-pixel motif of side drawn from
/// `sides`, placed uniformly. Returns the image and the motif rectangle.
pub fn positive_scene(
    rng: &mut impl Rng,
    size: usize,
    sides: std::ops::RangeInclusive<usize>,
    style: &MotifStyle,
) -> (GrayImage, Rect) {
    let side = rng.gen_range(sides).min(size);
    let x = rng.gen_range(0..=size - side);
    let y = rng.gen_range(0..=size - side);
    let mut img = background(rng, size, size, style.noise);
    draw_motif(&mut img, x as f64, y as f64, side as f64, style, rng);
    (img, Rect::new(x, y, side, side))
}

pub fn negative_scene(rng: &mut impl Rng, size: usize, style: &MotifStyle) -> GrayImage {
    background(rng, size, size, style.noise)
}
