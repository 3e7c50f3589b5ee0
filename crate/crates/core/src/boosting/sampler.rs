use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::{GrayImage, Raster, Rect};

/// Supplies base-sized negative windows for cascade bootstrapping.
pub trait NegativeSource {
    /// Restarts the source; identical seeds yield identical draws.
    fn reset(&mut self, seed: u64);

    /// Next candidate window, or `None` once the source is exhausted.
    fn draw(&mut self) -> Option<GrayImage>;
}

/// Random square crops of a pool of background images, resampled to the base
/// window by area averaging. Crop sizes are log-uniform between the base
/// window and the smaller image side.
pub struct WindowSampler {
    images: Vec<GrayImage>,
    base: usize,
    rng: ChaCha8Rng,
    limit: Option<usize>,
    drawn: usize,
}

impl WindowSampler {
    /// Images smaller than `base` are dropped from the pool.
    pub fn new(images: Vec<GrayImage>, base: usize, seed: u64) -> Self {
        let images = images
            .into_iter()
            .filter(|im| im.width() >= base && im.height() >= base)
            .collect();
        WindowSampler {
            images,
            base,
            rng: ChaCha8Rng::seed_from_u64(seed),
            limit: None,
            drawn: 0,
        }
    }

    /// Caps the number of windows handed out between resets.
    pub fn with_limit(mut self, limit: usize) -> Self {
        self.limit = Some(limit);
        self
    }

    pub fn pool_size(&self) -> usize {
        self.images.len()
    }
}

impl NegativeSource for WindowSampler {
    fn reset(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.drawn = 0;
    }

    fn draw(&mut self) -> Option<GrayImage> {
        if self.images.is_empty() || self.limit.is_some_and(|l| self.drawn >= l) {
            return None;
        }
        self.drawn += 1;
        let img = &self.images[self.rng.gen_range(0..self.images.len())];
        let max_side = img.width().min(img.height());
        let max_scale = max_side as f64 / self.base as f64;
        let scale = if max_scale > 1.0 {
            self.rng.gen_range(0.0..max_scale.ln()).exp()
        } else {
            1.0
        };
        let side = ((self.base as f64 * scale).round() as usize).clamp(self.base, max_side);
        let x = self.rng.gen_range(0..=img.width() - side);
        let y = self.rng.gen_range(0..=img.height() - side);
        let crop = img
            .crop(Rect::new(x, y, side, side))
            .expect("crop inside image");
        Some(if side == self.base {
            crop
        } else {
            crop.resize_area(self.base, self.base)
        })
    }
}

/// Windows from annotated scenes that overlap every annotated object by at
/// most `max_iou`. Half of the draws are centered within one object side of a
/// random object, so misaligned and partial views are well represented.
pub struct SceneSampler {
    scenes: Vec<(GrayImage, Vec<Rect>)>,
    base: usize,
    max_iou: f64,
    rng: ChaCha8Rng,
}

impl SceneSampler {
    /// Attempts per draw before a scene is given up on.
    const TRIES: usize = 64;

    /// Scenes smaller than `base` are dropped.
    pub fn new(scenes: Vec<(GrayImage, Vec<Rect>)>, base: usize, max_iou: f64, seed: u64) -> Self {
        let scenes = scenes
            .into_iter()
            .filter(|(im, _)| im.width() >= base && im.height() >= base)
            .collect();
        SceneSampler {
            scenes,
            base,
            max_iou,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn pool_size(&self) -> usize {
        self.scenes.len()
    }

    fn propose(&mut self, k: usize) -> Rect {
        let (img, objects) = &self.scenes[k];
        let (w, h) = (img.width(), img.height());
        let max_scale = w.min(h) as f64 / self.base as f64;
        let scale = if max_scale > 1.0 {
            self.rng.gen_range(0.0..max_scale.ln()).exp()
        } else {
            1.0
        };
        let side = ((self.base as f64 * scale).round() as usize).clamp(self.base, w.min(h));
        if !objects.is_empty() && self.rng.gen_bool(0.5) {
            let o = objects[self.rng.gen_range(0..objects.len())];
            let (cx, cy) = o.center();
            let reach = o.w.max(o.h) as f64;
            let px = cx + self.rng.gen_range(-reach..=reach) - side as f64 / 2.0;
            let py = cy + self.rng.gen_range(-reach..=reach) - side as f64 / 2.0;
            let x = px.round().clamp(0.0, (w - side) as f64) as usize;
            let y = py.round().clamp(0.0, (h - side) as f64) as usize;
            Rect::new(x, y, side, side)
        } else {
            Rect::new(
                self.rng.gen_range(0..=w - side),
                self.rng.gen_range(0..=h - side),
                side,
                side,
            )
        }
    }
}

impl NegativeSource for SceneSampler {
    fn reset(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    fn draw(&mut self) -> Option<GrayImage> {
        if self.scenes.is_empty() {
            return None;
        }
        for _ in 0..Self::TRIES {
            let k = self.rng.gen_range(0..self.scenes.len());
            let r = self.propose(k);
            let (img, objects) = &self.scenes[k];
            if objects.iter().all(|o| o.iou(&r) <= self.max_iou) {
                let crop = img.crop(r).expect("window inside scene");
                return Some(if r.w == self.base {
                    crop
                } else {
                    crop.resize_area(self.base, self.base)
                });
            }
        }
        None
    }
}

/// Draws from one of several sources, picked at random in proportion to its
/// weight. Exhausted sources drop out.
pub struct MixedSource {
    sources: Vec<(Box<dyn NegativeSource>, f64)>,
    live: Vec<bool>,
    rng: ChaCha8Rng,
}

impl MixedSource {
    pub fn new(sources: Vec<(Box<dyn NegativeSource>, f64)>) -> Self {
        let live = sources.iter().map(|(_, w)| *w > 0.0).collect();
        MixedSource {
            sources,
            live,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }
}

impl NegativeSource for MixedSource {
    fn reset(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        // distinct streams per child
        for (i, (s, w)) in self.sources.iter_mut().enumerate() {
            s.reset(seed.wrapping_add(0x9e37_79b9_7f4a_7c15u64.wrapping_mul(i as u64 + 1)));
            self.live[i] = *w > 0.0;
        }
    }

    fn draw(&mut self) -> Option<GrayImage> {
        loop {
            let total: f64 = self
                .sources
                .iter()
                .zip(&self.live)
                .filter(|(_, &l)| l)
                .map(|((_, w), _)| w)
                .sum();
            if total <= 0.0 {
                return None;
            }
            let mut pick = self.rng.gen_range(0.0..total);
            let mut chosen = None;
            for (i, (_, w)) in self.sources.iter().enumerate() {
                if !self.live[i] {
                    continue;
                }
                chosen = Some(i);
                if pick < *w {
                    break;
                }
                pick -= w;
            }
            let i = chosen.expect("a live source");
            match self.sources[i].0.draw() {
                Some(w) => return Some(w),
                None => self.live[i] = false,
            }
        }
    }
}

/// Hands out a fixed list of windows once, in order.
pub struct FixedWindows {
    windows: Vec<GrayImage>,
    next: usize,
}

impl FixedWindows {
    pub fn new(windows: Vec<GrayImage>) -> Self {
        FixedWindows { windows, next: 0 }
    }
}

impl NegativeSource for FixedWindows {
    fn reset(&mut self, _seed: u64) {
        self.next = 0;
    }

    fn draw(&mut self) -> Option<GrayImage> {
        let w = self.windows.get(self.next).cloned();
        self.next += 1;
        w
    }
}
