//! Multi-scale sliding-window scanning with a trained cascade.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::boosting::{Cascade, Verdict};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::image::{integral_image, GrayImage, Raster, Rect};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum Part {
    #[default]
    Face,
    Eye,
    Nose,
    Mouth,
}

impl Part {
    pub const fn name(self) -> &'static str {
        match self {
            Part::Face => "face",
            Part::Eye => "eye",
            Part::Nose => "nose",
            Part::Mouth => "mouth",
        }
    }
}

impl fmt::Display for Part {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Part {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Part::Face, Part::Eye, Part::Nose, Part::Mouth]
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Format(format!("unknown part `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub rect: Rect,
    /// Final-stage margin `Σαh − threshold`.
    pub score: f64,
    pub scale: f64,
    pub part: Part,
}

impl Detection {
    /// Score descending, then `(y, x, scale)` ascending.
    pub fn canonical_cmp(&self, other: &Detection) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then(self.rect.y.cmp(&other.rect.y))
            .then(self.rect.x.cmp(&other.rect.x))
            .then(self.scale.total_cmp(&other.scale))
    }
}

/// `part x y w h scale score`, reals with six significant digits.
impl fmt::Display for Detection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {} {} {} {}",
            self.part,
            self.rect.x,
            self.rect.y,
            self.rect.w,
            self.rect.h,
            format_sig(self.scale, 6),
            format_sig(self.score, 6)
        )
    }
}

impl FromStr for Detection {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [part, x, y, w, h, scale, score] = fields[..] else {
            return Err(Error::Format(format!(
                "detection line needs 7 fields: `{line}`"
            )));
        };
        let int = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Format(format!("bad integer `{s}`")))
        };
        let real = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::Format(format!("bad number `{s}`")))
        };
        Ok(Detection {
            part: part.parse()?,
            rect: Rect::new(int(x)?, int(y)?, int(w)?, int(h)?),
            scale: real(scale)?,
            score: real(score)?,
        })
    }
}

/// C-style `%.{sig}g`.
pub fn format_sig(v: f64, sig: usize) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{:.*e}", sig - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if exp < -4 || exp >= sig as i32 {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", trim(mantissa), sign, exp.abs())
    } else {
        let decimals = (sig as i32 - 1 - exp).max(0) as usize;
        trim(&format!("{:.*}", decimals, v))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanConfig {
    pub scale_start: f64,
    pub scale_factor: f64,
    pub stride_fraction: f64,
    pub nms_iou: f64,
    pub execution: Execution,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            scale_start: 1.0,
            scale_factor: 1.25,
            stride_fraction: 1.0 / 12.0,
            nms_iou: 0.3,
            execution: Execution::Parallel,
        }
    }
}

impl ScanConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale_start >= 1.0) {
            return Err(Error::Config(format!(
                "scale_start must be >= 1, got {}",
                self.scale_start
            )));
        }
        if !(self.scale_factor > 1.0) {
            return Err(Error::Config(format!(
                "scale_factor must be > 1, got {}",
                self.scale_factor
            )));
        }
        if !(self.stride_fraction > 0.0 && self.stride_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "stride_fraction must be in (0, 1], got {}",
                self.stride_fraction
            )));
        }
        if !(self.nms_iou > 0.0 && self.nms_iou < 1.0) {
            return Err(Error::Config(format!(
                "nms_iou must be in (0, 1), got {}",
                self.nms_iou
            )));
        }
        Ok(())
    }

    /// Scales `scale_start · factor^k` whose window fits in `width`×`height`.
    pub fn scales(&self, base: usize, width: usize, height: usize) -> Vec<f64> {
        let limit = width.min(height) as f64;
        (0..)
            .map(|k| self.scale_start * self.scale_factor.powi(k))
            .take_while(|&s| base as f64 * s <= limit)
            .collect()
    }
}

/// Per-window record of a traced scan.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowTrace {
    pub x: usize,
    pub y: usize,
    pub scale: f64,
    pub verdict: Verdict,
    /// Feature evaluations spent in each stage.
    pub evals: Vec<u32>,
}

fn scan_impl(
    c: &Cascade,
    img: &GrayImage,
    cfg: &ScanConfig,
    traced: bool,
) -> Result<(Vec<Detection>, Vec<WindowTrace>)> {
    cfg.validate()?;
    let base = c.window().base_size();
    let (w, h) = (img.width(), img.height());
    if w < base || h < base {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            base,
        });
    }
    let ii = integral_image(img);
    let scaled = cfg
        .scales(base, w, h)
        .into_iter()
        .map(|s| Ok((s, c.at_scale(s)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (si, (s, sc)) in scaled.iter().enumerate() {
        let stride = ((cfg.stride_fraction * base as f64 * s).round() as usize).max(1);
        let side = sc.side();
        for y in (0..=h - side).step_by(stride) {
            rows.push((si, y, stride));
        }
    }
    let per_row = exec::map_slice(cfg.execution, &rows, |&(si, y, stride)| {
        let (s, sc) = &scaled[si];
        let side = sc.side();
        let mut dets = Vec::new();
        let mut traces = Vec::new();
        for x in (0..=w - side).step_by(stride) {
            let verdict = if traced {
                let mut evals = vec![0u32; sc.n_stages()];
                let v = sc.run(&ii, x, y, |k| evals[k] += 1);
                traces.push(WindowTrace {
                    x,
                    y,
                    scale: *s,
                    verdict: v,
                    evals,
                });
                v
            } else {
                sc.classify(&ii, x, y)
            };
            if let Verdict::Accept { score } = verdict {
                dets.push(Detection {
                    rect: Rect::new(x, y, side, side),
                    score,
                    scale: *s,
                    part: Part::Face,
                });
            }
        }
        (dets, traces)
    });
    let mut dets = Vec::new();
    let mut traces = Vec::new();
    for (d, t) in per_row {
        dets.extend(d);
        traces.extend(t);
    }
    dets.sort_by(Detection::canonical_cmp);
    Ok((dets, traces))
}

/// Every accepted window before suppression, canonically sorted.
pub fn scan(c: &Cascade, img: &GrayImage, cfg: &ScanConfig) -> Result<Vec<Detection>> {
    Ok(scan_impl(c, img, cfg, false)?.0)
}

/// Multi-scale scan followed by non-maximum suppression.
pub fn detect(c: &Cascade, img: &GrayImage, cfg: &ScanConfig) -> Result<Vec<Detection>> {
    Ok(non_max_suppression(&scan(c, img, cfg)?, cfg.nms_iou))
}

/// [`detect`] plus a per-window evaluation record of the whole scan.
pub fn detect_traced(
    c: &Cascade,
    img: &GrayImage,
    cfg: &ScanConfig,
) -> Result<(Vec<Detection>, Vec<WindowTrace>)> {
    let (raw, traces) = scan_impl(c, img, cfg, true)?;
    Ok((non_max_suppression(&raw, cfg.nms_iou), traces))
}

/// Greedy suppression: keep the best remaining box, drop everything
/// overlapping it by more than `iou_threshold`.
pub fn non_max_suppression(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut sorted = dets.to_vec();
    sorted.sort_by(Detection::canonical_cmp);
    let mut kept: Vec<Detection> = Vec::new();
    for d in sorted {
        if kept.iter().all(|k| k.rect.iou(&d.rect) <= iou_threshold) {
            kept.push(d);
        }
    }
    kept
}

/// Runs each part cascade inside the face box and maps hits back to image coordinates.
pub fn detect_parts(
    face: &Detection,
    img: &GrayImage,
    part_cascades: &BTreeMap<Part, Cascade>,
    cfg: &ScanConfig,
) -> Result<Vec<Detection>> {
    if part_cascades.is_empty() {
        return Ok(Vec::new());
    }
    let crop = img.crop(face.rect)?;
    let mut out = Vec::new();
    for (&part, cascade) in part_cascades {
        for d in detect(cascade, &crop, cfg)? {
            out.push(Detection {
                rect: Rect::new(
                    d.rect.x + face.rect.x,
                    d.rect.y + face.rect.y,
                    d.rect.w,
                    d.rect.h,
                ),
                part,
                ..d
            });
        }
    }
    Ok(out)
}
