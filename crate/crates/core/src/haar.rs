//! Haar-like rectangle features over a square detection window.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::image::SumTable;

/// The five upright feature layouts.
///
/// Dark regions: left (two-horizontal), top (two-vertical), middle
/// (three-rect, weighted twice so flat regions cancel) and the main diagonal
/// pair (four-rect).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum HaarKind {
    TwoHorizontal,
    TwoVertical,
    ThreeHorizontal,
    ThreeVertical,
    Four,
}

impl HaarKind {
    pub const ALL: [HaarKind; 5] = [
        HaarKind::TwoHorizontal,
        HaarKind::TwoVertical,
        HaarKind::ThreeHorizontal,
        HaarKind::ThreeVertical,
        HaarKind::Four,
    ];

    /// Number of sub-rectangles along x and y.
    pub const fn units(self) -> (usize, usize) {
        match self {
            HaarKind::TwoHorizontal => (2, 1),
            HaarKind::TwoVertical => (1, 2),
            HaarKind::ThreeHorizontal => (3, 1),
            HaarKind::ThreeVertical => (1, 3),
            HaarKind::Four => (2, 2),
        }
    }

    /// Sub-rectangles as `(column, row, weight)` in unit-grid coordinates.
    pub const fn parts(self) -> &'static [(usize, usize, i64)] {
        match self {
            HaarKind::TwoHorizontal => &[(0, 0, 1), (1, 0, -1)],
            HaarKind::TwoVertical => &[(0, 0, 1), (0, 1, -1)],
            HaarKind::ThreeHorizontal => &[(0, 0, -1), (1, 0, 2), (2, 0, -1)],
            HaarKind::ThreeVertical => &[(0, 0, -1), (0, 1, 2), (0, 2, -1)],
            HaarKind::Four => &[(0, 0, 1), (1, 0, -1), (0, 1, -1), (1, 1, 1)],
        }
    }

    pub const fn name(self) -> &'static str {
        match self {
            HaarKind::TwoHorizontal => "two-h",
            HaarKind::TwoVertical => "two-v",
            HaarKind::ThreeHorizontal => "three-h",
            HaarKind::ThreeVertical => "three-v",
            HaarKind::Four => "four",
        }
    }
}

impl fmt::Display for HaarKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HaarKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        HaarKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Format(format!("unknown haar feature kind `{s}`")))
    }
}

/// Field order matches the enumeration order, so the derived `Ord` is the
/// canonical feature ordering.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HaarFeature {
    pub kind: HaarKind,
    pub y: usize,
    pub x: usize,
    pub unit_h: usize,
    pub unit_w: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct WindowSpec {
    base_size: usize,
}

impl WindowSpec {
    pub const MIN_BASE: usize = 8;

    pub fn new(base_size: usize) -> Result<Self> {
        if base_size < Self::MIN_BASE {
            return Err(Error::Config(format!(
                "detection window must be at least {}px, got {base_size}",
                Self::MIN_BASE
            )));
        }
        Ok(WindowSpec { base_size })
    }

    pub fn base_size(&self) -> usize {
        self.base_size
    }

    /// Window area at `scale`, the normalizer for feature responses.
    pub fn area_at(&self, scale: f64) -> f64 {
        let side = self.base_size as f64 * scale;
        side * side
    }
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec { base_size: 24 }
    }
}

/// Every placement and unit size of the five kinds inside the window, in
/// `(kind, y, x, unit_h, unit_w)` order.
pub fn enumerate_features(win: WindowSpec) -> Vec<HaarFeature> {
    let n = win.base_size;
    let mut out = Vec::new();
    for kind in HaarKind::ALL {
        let (mx, my) = kind.units();
        for y in 0..n {
            for x in 0..n {
                for unit_h in 1..=(n - y) / my {
                    for unit_w in 1..=(n - x) / mx {
                        out.push(HaarFeature {
                            kind,
                            y,
                            x,
                            unit_h,
                            unit_w,
                        });
                    }
                }
            }
        }
    }
    out
}

impl HaarFeature {
    pub fn new(kind: HaarKind, x: usize, y: usize, unit_w: usize, unit_h: usize) -> Self {
        HaarFeature {
            kind,
            y,
            x,
            unit_h,
            unit_w,
        }
    }

    /// Full footprint at base scale.
    pub fn footprint(&self) -> (usize, usize) {
        let (mx, my) = self.kind.units();
        (mx * self.unit_w, my * self.unit_h)
    }

    pub fn fits(&self, win: WindowSpec) -> bool {
        let (fw, fh) = self.footprint();
        self.unit_w >= 1
            && self.unit_h >= 1
            && self.x + fw <= win.base_size
            && self.y + fh <= win.base_size
    }

    /// Geometry at `scale`, relative to the window origin.
    ///
    /// Edge `k` sits at `round((x + k·unit_w)·scale)`, so neighbouring
    /// sub-rectangles share edges exactly at every scale.
    pub fn scaled(&self, win: WindowSpec, scale: f64) -> Result<ScaledFeature> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Config(format!(
                "scale must be positive, got {scale}"
            )));
        }
        let (mx, my) = self.kind.units();
        let mut xs = [0usize; 4];
        let mut ys = [0usize; 4];
        for (k, edge) in xs.iter_mut().enumerate().take(mx + 1) {
            *edge = ((self.x + k * self.unit_w) as f64 * scale).round() as usize;
        }
        for (k, edge) in ys.iter_mut().enumerate().take(my + 1) {
            *edge = ((self.y + k * self.unit_h) as f64 * scale).round() as usize;
        }
        if xs[..=mx].windows(2).any(|e| e[1] <= e[0]) || ys[..=my].windows(2).any(|e| e[1] <= e[0])
        {
            return Err(Error::Config(format!(
                "feature {self:?} collapses below one pixel at scale {scale}"
            )));
        }
        let mut corr = [1.0f64; 4];
        for (slot, &(i, j, _)) in corr.iter_mut().zip(self.kind.parts()) {
            let nominal = (self.unit_w * self.unit_h) as f64 * scale * scale;
            let actual = ((xs[i + 1] - xs[i]) * (ys[j + 1] - ys[j])) as f64;
            *slot = nominal / actual;
        }
        Ok(ScaledFeature {
            kind: self.kind,
            xs,
            ys,
            corr,
            area: win.area_at(scale),
        })
    }

    /// Area-normalized response `(dark − light) / (base·scale)²` of the
    /// feature placed in the window at `origin`.
    pub fn evaluate<T: SumTable>(
        &self,
        table: &T,
        win: WindowSpec,
        origin: (usize, usize),
        scale: f64,
    ) -> Result<f64> {
        let sf = self.scaled(win, scale)?;
        sf.check_inside(table, origin)?;
        Ok(sf.response(table, origin.0, origin.1))
    }
}

/// A feature with its sub-rectangle edges resolved for one scale.
///
/// When rounding leaves a sub-rectangle with an area other than its nominal
/// `unit_w·unit_h·scale²`, its sum is rescaled to the nominal area so flat
/// regions still cancel. At integer scales every correction is exactly 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaledFeature {
    kind: HaarKind,
    xs: [usize; 4],
    ys: [usize; 4],
    corr: [f64; 4],
    area: f64,
}

impl ScaledFeature {
    /// Extent of the footprint measured from the window origin.
    pub fn extent(&self) -> (usize, usize) {
        let (mx, my) = self.kind.units();
        (self.xs[mx], self.ys[my])
    }

    pub fn check_inside<T: SumTable>(&self, table: &T, origin: (usize, usize)) -> Result<()> {
        let (ex, ey) = self.extent();
        if origin.0 + ex > table.width() || origin.1 + ey > table.height() {
            return Err(Error::OutOfBounds {
                x: (origin.0 + self.xs[0]) as i64,
                y: (origin.1 + self.ys[0]) as i64,
                w: (ex - self.xs[0]) as i64,
                h: (ey - self.ys[0]) as i64,
                width: table.width(),
                height: table.height(),
            });
        }
        Ok(())
    }

    /// `(dark − light) / window area` with the window at `(ox, oy)`.
    /// The caller guarantees bounds.
    #[inline]
    pub fn response<T: SumTable>(&self, t: &T, ox: usize, oy: usize) -> f64 {
        let mut acc = 0.0;
        for (&(i, j, weight), &c) in self.kind.parts().iter().zip(&self.corr) {
            let sum = t.block_sum(
                ox + self.xs[i],
                oy + self.ys[j],
                ox + self.xs[i + 1],
                oy + self.ys[j + 1],
            );
            acc += (weight * sum as i64) as f64 * c;
        }
        acc / self.area
    }
}
