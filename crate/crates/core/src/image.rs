//! Raster types, color and binary conversion, histograms, grid segmentation,
//! and the integral image.
//!
//! Coordinates are `x` = column, `y` = row, origin at the top-left corner.

use std::cell::Cell;

use crate::error::{Error, Result};

/// Axis-aligned rectangle in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub const fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Rect { x, y, w, h }
    }

    pub fn right(&self) -> usize {
        self.x + self.w
    }

    pub fn bottom(&self) -> usize {
        self.y + self.h
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (
            self.x as f64 + self.w as f64 / 2.0,
            self.y as f64 + self.h as f64 / 2.0,
        )
    }

    pub fn intersection_area(&self, other: &Rect) -> usize {
        let w = self
            .right()
            .min(other.right())
            .saturating_sub(self.x.max(other.x));
        let h = self
            .bottom()
            .min(other.bottom())
            .saturating_sub(self.y.max(other.y));
        w * h
    }

    /// Intersection over union.
    pub fn iou(&self, other: &Rect) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    pub fn contains(&self, other: &Rect) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.right() <= self.right()
            && other.bottom() <= self.bottom()
    }

    /// Checks that the rectangle is non-empty and lies inside a `width`×`height` image.
    pub fn check_inside(&self, width: usize, height: usize) -> Result<()> {
        if self.w == 0 || self.h == 0 || self.right() > width || self.bottom() > height {
            return Err(Error::OutOfBounds {
                x: self.x as i64,
                y: self.y as i64,
                w: self.w as i64,
                h: self.h as i64,
                width,
                height,
            });
        }
        Ok(())
    }
}

/// Single-channel 8-bit raster shared by [`GrayImage`] and [`BinaryImage`].
pub trait Raster: Sized {
    /// Number of distinct pixel levels (256 for grayscale, 2 for binary).
    const LEVELS: usize;

    fn width(&self) -> usize;
    fn height(&self) -> usize;
    fn pixels(&self) -> &[u8];

    /// Builds an image from row-major data already known to satisfy the invariants.
    fn from_raw_unchecked(width: usize, height: usize, data: Vec<u8>) -> Self;

    fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels()[y * self.width() + x]
    }

    fn crop(&self, r: Rect) -> Result<Self> {
        r.check_inside(self.width(), self.height())?;
        let mut data = Vec::with_capacity(r.area());
        for row in r.y..r.bottom() {
            let start = row * self.width() + r.x;
            data.extend_from_slice(&self.pixels()[start..start + r.w]);
        }
        Ok(Self::from_raw_unchecked(r.w, r.h, data))
    }
}

fn check_dims(width: usize, height: usize, len: usize, channels: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::Dimension(format!(
            "image must be at least 1x1, got {width}x{height}"
        )));
    }
    if len != width * height * channels {
        return Err(Error::Dimension(format!(
            "{width}x{height}x{channels} image needs {} bytes, got {len}",
            width * height * channels
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        check_dims(width, height, data.len(), 3)?;
        Ok(RgbImage {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [u8; 3],
    ) -> Self {
        assert!(width > 0 && height > 0, "image must be at least 1x1");
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        RgbImage {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        check_dims(width, height, data.len(), 1)?;
        Ok(GrayImage {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        assert!(width > 0 && height > 0, "image must be at least 1x1");
        GrayImage {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        assert!(width > 0 && height > 0, "image must be at least 1x1");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        GrayImage {
            width,
            height,
            data,
        }
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn set(&mut self, x: usize, y: usize, value: u8) {
        self.data[y * self.width + x] = value;
    }

    /// Nearest-neighbor resampling; source index is `floor(dst · src / dst_size)`.
    pub fn resize_nearest(&self, width: usize, height: usize) -> GrayImage {
        GrayImage::from_fn(width, height, |x, y| {
            let sx = x * self.width / width;
            let sy = y * self.height / height;
            self.data[sy * self.width + sx]
        })
    }

    /// Box-filter resampling: each output pixel is the rounded mean of the
    /// source pixels its footprint touches.
    pub fn resize_area(&self, width: usize, height: usize) -> GrayImage {
        let (sw, sh) = (self.width, self.height);
        GrayImage::from_fn(width, height, |x, y| {
            let (x0, x1) = (x * sw / width, ((x + 1) * sw).div_ceil(width));
            let (y0, y1) = (y * sh / height, ((y + 1) * sh).div_ceil(height));
            let mut sum = 0u64;
            for sy in y0..y1 {
                for sx in x0..x1 {
                    sum += self.data[sy * sw + sx] as u64;
                }
            }
            let n = ((x1 - x0) * (y1 - y0)) as u64;
            ((sum + n / 2) / n) as u8
        })
    }
}

impl Raster for GrayImage {
    const LEVELS: usize = 256;

    fn width(&self) -> usize {
        self.width
    }

    fn height(&self) -> usize {
        self.height
    }

    fn pixels(&self) -> &[u8] {
        &self.data
    }

    fn from_raw_unchecked(width: usize, height: usize, data: Vec<u8>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        GrayImage {
            width,
            height,
            data,
        }
    }
}

/// Image whose pixels are all 0 or 1.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl BinaryImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        check_dims(width, height, data.len(), 1)?;
        if let Some(bad) = data.iter().find(|&&v| v > 1) {
            return Err(Error::Dimension(format!(
                "binary pixel value {bad} not in {{0,1}}"
            )));
        }
        Ok(BinaryImage {
            width,
            height,
            data,
        })
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    /// Maps 0/1 to 0/255 for viewing or PGM dumps.
    pub fn to_gray(&self) -> GrayImage {
        GrayImage::from_raw_unchecked(
            self.width,
            self.height,
            self.data.iter().map(|&v| v * 255).collect(),
        )
    }
}

impl Raster for BinaryImage {
    const LEVELS: usize = 2;

    fn width(&self) -> usize {
        self.width
    }

    fn height(&self) -> usize {
        self.height
    }

    fn pixels(&self) -> &[u8] {
        &self.data
    }

    fn from_raw_unchecked(width: usize, height: usize, data: Vec<u8>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        BinaryImage {
            width,
            height,
            data,
        }
    }
}

/// BT.601 luma, rounded to nearest.
pub fn rgb_to_gray(img: &RgbImage) -> GrayImage {
    let data = img
        .data
        .chunks_exact(3)
        .map(|p| {
            let y = 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
            y.round().clamp(0.0, 255.0) as u8
        })
        .collect();
    GrayImage::from_raw_unchecked(img.width, img.height, data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Threshold {
    /// Pixels `>= t` become 1.
    Fixed(u8),
    /// Otsu's between-class variance maximizer.
    Otsu,
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold::Fixed(128)
    }
}

pub fn gray_to_binary(img: &GrayImage, threshold: Threshold) -> BinaryImage {
    let t = match threshold {
        Threshold::Fixed(t) => t as u16,
        Threshold::Otsu => otsu_threshold(&histogram(img)),
    };
    let data = img.data.iter().map(|&v| u8::from(v as u16 >= t)).collect();
    BinaryImage::from_raw_unchecked(img.width, img.height, data)
}

/// Returns the threshold `t` (pixels `>= t` are foreground) maximizing the
/// between-class variance of a 256-bin histogram. Ties resolve to the smallest
/// `t`. When no split separates two non-empty classes the default 128 is used.
pub fn otsu_threshold(hist: &Histogram) -> u16 {
    let total = hist.total as f64;
    let sum_all: f64 = hist
        .bins
        .iter()
        .enumerate()
        .map(|(v, &c)| v as f64 * c as f64)
        .sum();
    let mut best_t = 0u16;
    let mut best_var = 0.0f64;
    let mut w0 = 0.0f64;
    let mut sum0 = 0.0f64;
    for t in 1..hist.bins.len() {
        let c = hist.bins[t - 1] as f64;
        w0 += c;
        sum0 += (t - 1) as f64 * c;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let mu0 = sum0 / w0;
        let mu1 = (sum_all - sum0) / w1;
        let var = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if var > best_var {
            best_var = var;
            best_t = t as u16;
        }
    }
    if best_var > 0.0 {
        best_t
    } else {
        128
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Histogram {
    pub bins: Vec<u64>,
    pub total: u64,
}

pub fn histogram<I: Raster>(img: &I) -> Histogram {
    let mut bins = vec![0u64; I::LEVELS];
    for &v in img.pixels() {
        bins[v as usize] += 1;
    }
    Histogram {
        bins,
        total: img.pixels().len() as u64,
    }
}

/// Rounded cut position `round(i · len / parts)`, halves rounding up.
fn cut(i: usize, len: usize, parts: usize) -> usize {
    (2 * i * len + parts) / (2 * parts)
}

/// Tile rectangles of a `rows`×`cols` grid over a `width`×`height` image, row-major.
pub fn grid_cells(width: usize, height: usize, rows: usize, cols: usize) -> Result<Vec<Rect>> {
    if rows == 0 || cols == 0 || rows > height || cols > width {
        return Err(Error::Dimension(format!(
            "cannot split {width}x{height} image into {rows}x{cols} grid"
        )));
    }
    let mut cells = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        let (y0, y1) = (cut(i, height, rows), cut(i + 1, height, rows));
        for j in 0..cols {
            let (x0, x1) = (cut(j, width, cols), cut(j + 1, width, cols));
            cells.push(Rect::new(x0, y0, x1 - x0, y1 - y0));
        }
    }
    Ok(cells)
}

/// Splits an image into a `rows`×`cols` grid of tiles that partition it exactly.
pub fn segment_grid<I: Raster>(img: &I, rows: usize, cols: usize) -> Result<Vec<I>> {
    grid_cells(img.width(), img.height(), rows, cols)?
        .into_iter()
        .map(|r| img.crop(r))
        .collect()
}

/// Read access to a summed-area table through its corner values.
///
/// `corner(cx, cy)` is the sum of all source pixels with `x < cx` and `y < cy`,
/// so `corner(0, _) == corner(_, 0) == 0`.
pub trait SumTable {
    fn width(&self) -> usize;
    fn height(&self) -> usize;
    fn corner(&self, cx: usize, cy: usize) -> u64;

    /// Sum over `[x0, x1) × [y0, y1)` using four corner lookups.
    #[inline]
    fn block_sum(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> u64 {
        (self.corner(x1, y1) + self.corner(x0, y0)) - (self.corner(x0, y1) + self.corner(x1, y0))
    }
}

/// Summed-area table with exact integer entries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntegralImage {
    width: usize,
    height: usize,
    // (width + 1) × (height + 1), first row and column zero.
    padded: Vec<u64>,
}

impl IntegralImage {
    /// `ii(x, y)`: sum of pixels at `x' <= x, y' <= y`.
    pub fn at(&self, x: usize, y: usize) -> u64 {
        self.padded[(y + 1) * (self.width + 1) + x + 1]
    }

    /// Sum over `r` with four lookups.
    pub fn rect_sum(&self, r: Rect) -> Result<u64> {
        r.check_inside(self.width, self.height)?;
        Ok(self.block_sum(r.x, r.y, r.right(), r.bottom()))
    }

    pub fn total(&self) -> u64 {
        *self.padded.last().expect("non-empty table")
    }
}

impl SumTable for IntegralImage {
    fn width(&self) -> usize {
        self.width
    }

    fn height(&self) -> usize {
        self.height
    }

    #[inline]
    fn corner(&self, cx: usize, cy: usize) -> u64 {
        self.padded[cy * (self.width + 1) + cx]
    }
}

/// Builds the summed-area table in one pass with
/// `ii(x,y) = p(x,y) + ii(x-1,y) + ii(x,y-1) - ii(x-1,y-1)`.
pub fn integral_image(img: &GrayImage) -> IntegralImage {
    let (w, h) = (img.width, img.height);
    let stride = w + 1;
    let mut padded = vec![0u64; stride * (h + 1)];
    for y in 0..h {
        for x in 0..w {
            let p = img.data[y * w + x] as u64;
            let up = padded[y * stride + x + 1];
            let left = padded[(y + 1) * stride + x];
            let diag = padded[y * stride + x];
            padded[(y + 1) * stride + x + 1] = p + up + left - diag;
        }
    }
    IntegralImage {
        width: w,
        height: h,
        padded,
    }
}

/// Wraps a table and counts every corner lookup.
pub struct CountingTable<'a, T: SumTable> {
    inner: &'a T,
    lookups: Cell<usize>,
}

impl<'a, T: SumTable> CountingTable<'a, T> {
    pub fn new(inner: &'a T) -> Self {
        CountingTable {
            inner,
            lookups: Cell::new(0),
        }
    }

    pub fn lookups(&self) -> usize {
        self.lookups.get()
    }

    pub fn reset(&self) {
        self.lookups.set(0);
    }
}

impl<T: SumTable> SumTable for CountingTable<'_, T> {
    fn width(&self) -> usize {
        self.inner.width()
    }

    fn height(&self) -> usize {
        self.inner.height()
    }

    fn corner(&self, cx: usize, cy: usize) -> u64 {
        self.lookups.set(self.lookups.get() + 1);
        self.inner.corner(cx, cy)
    }
}
