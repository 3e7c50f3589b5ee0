//! Face identification: grid-histogram descriptors, bit-coded identities and a
//! backpropagation network selected over several seeded restarts.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::bpnn::{self, DataSplit, Network, NetworkConfig, TrainReport};
use crate::detector::format_sig;
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::image::{gray_to_binary, grid_cells, GrayImage, Raster, Rect, Threshold};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DescriptorMode {
    #[default]
    Grayscale,
    /// Otsu-binarized crop; each cell contributes a two-bin histogram.
    Binary,
}

impl DescriptorMode {
    pub const fn name(self) -> &'static str {
        match self {
            DescriptorMode::Grayscale => "grayscale",
            DescriptorMode::Binary => "binary",
        }
    }
}

impl FromStr for DescriptorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grayscale" => Ok(DescriptorMode::Grayscale),
            "binary" => Ok(DescriptorMode::Binary),
            _ => Err(Error::Config(format!("unknown descriptor mode `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DescriptorConfig {
    pub crop_size: usize,
    pub grid: (usize, usize),
    pub bins_per_cell: usize,
    pub mode: DescriptorMode,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        DescriptorConfig {
            crop_size: 32,
            grid: (4, 4),
            bins_per_cell: 16,
            mode: DescriptorMode::Grayscale,
        }
    }
}

impl DescriptorConfig {
    pub fn validate(&self) -> Result<()> {
        let (rows, cols) = self.grid;
        if rows == 0 || cols == 0 || rows > self.crop_size || cols > self.crop_size {
            return Err(Error::Config(format!(
                "grid {rows}x{cols} does not fit a {}px crop",
                self.crop_size
            )));
        }
        if self.mode == DescriptorMode::Grayscale && !(1..=256).contains(&self.bins_per_cell) {
            return Err(Error::Config(format!(
                "bins_per_cell must be in 1..=256, got {}",
                self.bins_per_cell
            )));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        match self.mode {
            DescriptorMode::Grayscale => self.bins_per_cell,
            DescriptorMode::Binary => 2,
        }
    }

    pub fn descriptor_len(&self) -> usize {
        self.grid.0 * self.grid.1 * self.bins()
    }
}

/// Crops `face`, resamples it to the configured square by nearest neighbor,
/// optionally binarizes it, and concatenates per-cell normalized histograms
/// in row-major cell order.
pub fn extract_descriptor(img: &GrayImage, face: Rect, cfg: &DescriptorConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    if face.w == 0 || face.h == 0 {
        return Err(Error::Dimension("face rectangle is empty".into()));
    }
    let crop = img.crop(face)?.resize_nearest(cfg.crop_size, cfg.crop_size);
    let (pixels, bins): (Vec<u8>, usize) = match cfg.mode {
        DescriptorMode::Grayscale => (crop.into_data(), cfg.bins_per_cell),
        DescriptorMode::Binary => (gray_to_binary(&crop, Threshold::Otsu).data().to_vec(), 2),
    };
    let levels = match cfg.mode {
        DescriptorMode::Grayscale => 256,
        DescriptorMode::Binary => 2,
    };
    let side = cfg.crop_size;
    let mut out = Vec::with_capacity(cfg.descriptor_len());
    for cell in grid_cells(side, side, cfg.grid.0, cfg.grid.1)? {
        let mut counts = vec![0u64; bins];
        for y in cell.y..cell.bottom() {
            for &v in &pixels[y * side + cell.x..y * side + cell.right()] {
                counts[v as usize * bins / levels] += 1;
            }
        }
        let n = cell.area() as f64;
        out.extend(counts.iter().map(|&c| c as f64 / n));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdentityCode {
    pub label: String,
    pub bits: Vec<bool>,
}

/// Enrolled identities in enrollment order, each with a distinct code.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Codebook {
    codes: Vec<IdentityCode>,
}

impl Codebook {
    /// Reflected Gray codes `i ^ (i >> 1)`, most significant bit first, over
    /// `max(1, ceil(log2 n))` bits.
    pub fn gray<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        let n = labels.len();
        let width = (usize::BITS - n.saturating_sub(1).leading_zeros()).max(1) as usize;
        let codes = labels
            .into_iter()
            .enumerate()
            .map(|(i, label)| {
                let g = i ^ (i >> 1);
                IdentityCode {
                    label,
                    bits: (0..width)
                        .map(|k| (g >> (width - 1 - k)) & 1 == 1)
                        .collect(),
                }
            })
            .collect();
        Codebook::explicit(codes)
    }

    pub fn explicit(codes: Vec<IdentityCode>) -> Result<Self> {
        if codes.is_empty() {
            return Err(Error::InsufficientIdentities(0));
        }
        let width = codes[0].bits.len();
        if width == 0 {
            return Err(Error::Config(
                "identity codes must have at least one bit".into(),
            ));
        }
        for (i, c) in codes.iter().enumerate() {
            if c.label.is_empty() || c.label.chars().any(char::is_whitespace) {
                return Err(Error::Config(format!(
                    "invalid identity label `{}`",
                    c.label
                )));
            }
            if c.bits.len() != width {
                return Err(Error::Config(format!(
                    "code for `{}` has {} bits, expected {width}",
                    c.label,
                    c.bits.len()
                )));
            }
            if let Some(prev) = codes[..i]
                .iter()
                .find(|p| p.label == c.label || p.bits == c.bits)
            {
                return Err(Error::Config(format!(
                    "identities `{}` and `{}` collide",
                    prev.label, c.label
                )));
            }
        }
        Ok(Codebook { codes })
    }

    pub fn codes(&self) -> &[IdentityCode] {
        &self.codes
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn width(&self) -> usize {
        self.codes[0].bits.len()
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.codes
            .iter()
            .position(|c| c.label == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn encode_target(&self, label: &str) -> Result<Vec<f64>> {
        let i = self.index_of(label)?;
        Ok(self.codes[i]
            .bits
            .iter()
            .map(|&b| if b { 1.0 } else { 0.0 })
            .collect())
    }

    /// Nearest code by Hamming distance after rounding outputs at 0.5 (ties to
    /// the earliest enrolled). Confidence is the mean margin `|o − 0.5| · 2`
    /// over the bits that agree with the chosen code.
    pub fn decode_output(&self, output: &[f64]) -> Result<Decoded> {
        if output.len() != self.width() {
            return Err(Error::Dimension(format!(
                "output has {} values, codes have {} bits",
                output.len(),
                self.width()
            )));
        }
        let bits: Vec<bool> = output.iter().map(|&o| o >= 0.5).collect();
        let (index, distance) = self
            .codes
            .iter()
            .enumerate()
            .map(|(i, c)| (i, c.bits.iter().zip(&bits).filter(|(a, b)| a != b).count()))
            .min_by_key(|&(i, d)| (d, i))
            .expect("codebook is non-empty");
        let (sum, n) = self.codes[index]
            .bits
            .iter()
            .zip(&bits)
            .zip(output)
            .filter(|((a, b), _)| a == b)
            .fold((0.0, 0usize), |(s, n), (_, &o)| {
                (s + (o - 0.5).abs() * 2.0, n + 1)
            });
        Ok(Decoded {
            index,
            distance,
            confidence: if n == 0 { 0.0 } else { sum / n as f64 },
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decoded {
    pub index: usize,
    pub distance: usize,
    pub confidence: f64,
}

/// Per-dimension affine map onto `[0, 1]` fitted over the training inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct MinMax {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMax {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::Dimension("no rows to fit".into()))?;
        let mut min = vec![f64::INFINITY; dim];
        let mut max = vec![f64::NEG_INFINITY; dim];
        for r in rows {
            if r.len() != dim {
                return Err(Error::Dimension(format!(
                    "row of width {} among width {dim}",
                    r.len()
                )));
            }
            for (k, &v) in r.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::Dimension("input values must be finite".into()));
                }
                min[k] = min[k].min(v);
                max[k] = max[k].max(v);
            }
        }
        Ok(MinMax { min, max })
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    /// Constant dimensions map to 0; results are clamped to `[0, 1]`.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "vector has {} values, expected {}",
                v.len(),
                self.dim()
            )));
        }
        Ok(v.iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(&x, (&lo, &hi))| {
                if hi > lo {
                    ((x - lo) / (hi - lo)).clamp(0.0, 1.0)
                } else {
                    0.0
                }
            })
            .collect())
    }
}

/// How raw input vectors are obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureSource {
    Image(DescriptorConfig),
    /// Caller-supplied vectors of a fixed width.
    Vector {
        dim: usize,
    },
}

impl FeatureSource {
    pub fn dim(&self) -> usize {
        match self {
            FeatureSource::Image(d) => d.descriptor_len(),
            FeatureSource::Vector { dim } => *dim,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecognizerModel {
    pub source: FeatureSource,
    pub normalizer: MinMax,
    pub network: Network,
    pub codebook: Codebook,
    pub accept_threshold: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Recognition {
    Identity {
        label: String,
        confidence: f64,
    },
    /// Best guess below the acceptance threshold.
    Unknown {
        nearest: String,
        confidence: f64,
    },
}

impl Recognition {
    pub fn label(&self) -> Option<&str> {
        match self {
            Recognition::Identity { label, .. } => Some(label),
            Recognition::Unknown { .. } => None,
        }
    }
}

impl fmt::Display for Recognition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Recognition::Identity { label, confidence } => {
                write!(f, "{label} {}", format_sig(*confidence, 6))
            }
            Recognition::Unknown { .. } => f.write_str("unknown"),
        }
    }
}

impl RecognizerModel {
    pub fn validate(&self) -> Result<()> {
        let (n_in, _, n_out) = self.network.dims();
        if n_in != self.source.dim() || self.normalizer.dim() != n_in {
            return Err(Error::Dimension(format!(
                "network takes {n_in} inputs, features have {}",
                self.source.dim()
            )));
        }
        if n_out != self.codebook.width() {
            return Err(Error::Dimension(format!(
                "network has {n_out} outputs, codes have {} bits",
                self.codebook.width()
            )));
        }
        if !(0.0..=1.0).contains(&self.accept_threshold) {
            return Err(Error::Config(format!(
                "accept threshold must be in [0, 1], got {}",
                self.accept_threshold
            )));
        }
        if let FeatureSource::Image(d) = &self.source {
            d.validate()?;
        }
        Ok(())
    }

    /// Normalizes a raw feature vector, runs the network and decodes it.
    pub fn recognize_vector(&self, raw: &[f64]) -> Result<Recognition> {
        let input = self.normalizer.apply(raw)?;
        let output = self.network.predict(&input)?;
        let d = self.codebook.decode_output(&output)?;
        let label = self.codebook.codes()[d.index].label.clone();
        Ok(if d.confidence >= self.accept_threshold {
            Recognition::Identity {
                label,
                confidence: d.confidence,
            }
        } else {
            Recognition::Unknown {
                nearest: label,
                confidence: d.confidence,
            }
        })
    }

    pub fn recognize(&self, img: &GrayImage, face: Rect) -> Result<Recognition> {
        match &self.source {
            FeatureSource::Image(d) => self.recognize_vector(&extract_descriptor(img, face, d)?),
            FeatureSource::Vector { .. } => Err(Error::Config(
                "model was trained on raw vectors, not images".into(),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecognizerConfig {
    pub hidden: usize,
    /// Template for every restart; dimensions are filled in from the data and
    /// restart `i` uses seed `seed + i`.
    pub network: NetworkConfig,
    pub ratios: (f64, f64, f64),
    pub restarts: usize,
    pub accept_threshold: f64,
    /// Restarts are independent and may run concurrently.
    pub execution: Execution,
}

pub const MAX_RESTARTS: usize = 10;

impl Default for RecognizerConfig {
    fn default() -> Self {
        RecognizerConfig {
            hidden: 16,
            network: NetworkConfig::new(0, 0, 0),
            ratios: (0.7, 0.15, 0.15),
            restarts: 5,
            accept_threshold: 0.75,
            execution: Execution::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RestartRun {
    pub seed: u64,
    pub report: TrainReport,
    /// Selection key: validation MSE, or train MSE with no validation split.
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub model: RecognizerModel,
    pub split: DataSplit,
    pub runs: Vec<RestartRun>,
    pub selected: usize,
}

impl TrainOutcome {
    pub fn report(&self) -> &TrainReport {
        &self.runs[self.selected].report
    }
}

fn enrollment_order<'a>(labels: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let mut seen: Vec<String> = Vec::new();
    for l in labels {
        if !seen.iter().any(|s| s == l) {
            seen.push(l.to_string());
        }
    }
    seen
}

/// Trains on raw feature vectors. Without an explicit codebook, identities are
/// Gray-coded in order of first appearance.
pub fn train_on_vectors(
    samples: &[(Vec<f64>, String)],
    source: FeatureSource,
    codebook: Option<Codebook>,
    cfg: &RecognizerConfig,
) -> Result<TrainOutcome> {
    if !(1..=MAX_RESTARTS).contains(&cfg.restarts) {
        return Err(Error::Config(format!(
            "restarts must be in 1..={MAX_RESTARTS}, got {}",
            cfg.restarts
        )));
    }
    if !(0.0..=1.0).contains(&cfg.accept_threshold) {
        return Err(Error::Config(format!(
            "accept threshold must be in [0, 1], got {}",
            cfg.accept_threshold
        )));
    }
    let labels = enrollment_order(samples.iter().map(|(_, l)| l.as_str()));
    if labels.len() < 2 {
        return Err(Error::InsufficientIdentities(labels.len()));
    }
    let codebook = match codebook {
        Some(cb) => cb,
        None => Codebook::gray(labels)?,
    };
    let raw: Vec<Vec<f64>> = samples.iter().map(|(v, _)| v.clone()).collect();
    if raw.iter().any(|v| v.len() != source.dim()) {
        return Err(Error::Dimension(format!(
            "feature vectors must have {} values",
            source.dim()
        )));
    }
    let normalizer = MinMax::fit(&raw)?;
    let data = samples
        .iter()
        .map(|(v, l)| Ok((normalizer.apply(v)?, codebook.encode_target(l)?)))
        .collect::<Result<Vec<_>>>()?;

    let netcfg = NetworkConfig {
        n_in: source.dim(),
        n_hidden: cfg.hidden,
        n_out: codebook.width(),
        ..cfg.network.clone()
    };
    let split = bpnn::split_data(data.len(), cfg.ratios, netcfg.seed)?;
    let trained = exec::map_range(
        cfg.execution,
        cfg.restarts,
        |i| -> Result<(Network, RestartRun)> {
            let run_cfg = NetworkConfig {
                seed: netcfg.seed.wrapping_add(i as u64),
                ..netcfg.clone()
            };
            let (net, report) = bpnn::train(Network::init(&run_cfg)?, &data, &split, &run_cfg)?;
            let score = report.best_validation_mse.unwrap_or(report.final_train_mse);
            Ok((
                net,
                RestartRun {
                    seed: run_cfg.seed,
                    report,
                    score,
                },
            ))
        },
    );
    let mut runs = Vec::with_capacity(cfg.restarts);
    let mut best: Option<(usize, f64, Network)> = None;
    for (i, r) in trained.into_iter().enumerate() {
        let (net, run) = r?;
        if best.as_ref().is_none_or(|(_, b, _)| run.score < *b) {
            best = Some((i, run.score, net));
        }
        runs.push(run);
    }
    let (selected, _, network) = best.expect("at least one restart");
    let model = RecognizerModel {
        source,
        normalizer,
        network,
        codebook,
        accept_threshold: cfg.accept_threshold,
    };
    model.validate()?;
    Ok(TrainOutcome {
        model,
        split,
        runs,
        selected,
    })
}

pub fn train_recognizer(
    gallery: &[(GrayImage, Rect, String)],
    desc: &DescriptorConfig,
    cfg: &RecognizerConfig,
) -> Result<TrainOutcome> {
    desc.validate()?;
    let samples = gallery
        .iter()
        .map(|(img, r, l)| Ok((extract_descriptor(img, *r, desc)?, l.clone())))
        .collect::<Result<Vec<_>>>()?;
    train_on_vectors(&samples, FeatureSource::Image(*desc), None, cfg)
}

/// Closed-set accuracy with per-identity confusion counts; rejections are
/// counted under the `unknown` column.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalReport {
    pub labels: Vec<String>,
    pub total: usize,
    pub correct: usize,
    /// `(truth, predicted)` → count; predicted is `unknown` for rejections.
    pub confusion: BTreeMap<(String, String), usize>,
}

pub const UNKNOWN: &str = "unknown";

impl EvalReport {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "accuracy {}/{} {}",
            self.correct,
            self.total,
            format_sig(self.accuracy(), 6)
        )?;
        for truth in &self.labels {
            for pred in self.labels.iter().map(String::as_str).chain([UNKNOWN]) {
                if let Some(n) = self.confusion.get(&(truth.clone(), pred.to_string())) {
                    writeln!(f, "{truth} {pred} {n}")?;
                }
            }
        }
        Ok(())
    }
}

/// Scores already-extracted raw vectors against their true labels.
pub fn evaluate(model: &RecognizerModel, samples: &[(Vec<f64>, String)]) -> Result<EvalReport> {
    let mut labels: Vec<String> = model
        .codebook
        .codes()
        .iter()
        .map(|c| c.label.clone())
        .collect();
    for l in enrollment_order(samples.iter().map(|(_, l)| l.as_str())) {
        if !labels.contains(&l) {
            labels.push(l);
        }
    }
    let mut report = EvalReport {
        labels,
        total: 0,
        correct: 0,
        confusion: BTreeMap::new(),
    };
    for (v, truth) in samples {
        let r = model.recognize_vector(v)?;
        let pred = r.label().unwrap_or(UNKNOWN).to_string();
        report.total += 1;
        if pred == *truth {
            report.correct += 1;
        }
        *report.confusion.entry((truth.clone(), pred)).or_default() += 1;
    }
    Ok(report)
}

/// Where a gallery sample's face is.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FaceRegion {
    Rect(Rect),
    /// Located by running a detector.
    Auto,
}

#[derive(Clone, Debug, PartialEq)]
pub enum GalleryEntry {
    Image {
        path: String,
        region: FaceRegion,
        label: String,
    },
    Vector {
        label: String,
        values: Vec<f64>,
    },
}

/// A parsed gallery manifest.
///
/// Lines are `path x y w h label`, `path auto label`, `vec label v1 .. vn` for
/// raw feature vectors, or `code label bits` to pin an identity code. Blank
/// lines and `#` comments are ignored.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<GalleryEntry>,
    pub codes: Vec<IdentityCode>,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Manifest::default();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            let bad = |msg: &str| Error::malformed(line_no, msg);
            match toks[0] {
                "code" => {
                    let [_, label, bits] = toks[..] else {
                        return Err(bad("expected `code label bits`"));
                    };
                    let bits = bits
                        .chars()
                        .map(|c| match c {
                            '0' => Ok(false),
                            '1' => Ok(true),
                            _ => Err(bad("code bits must be 0 or 1")),
                        })
                        .collect::<Result<Vec<_>>>()?;
                    m.codes.push(IdentityCode {
                        label: label.to_string(),
                        bits,
                    });
                }
                "vec" => {
                    if toks.len() < 3 {
                        return Err(bad("expected `vec label v1 .. vn`"));
                    }
                    let values = toks[2..]
                        .iter()
                        .map(|t| t.parse::<f64>().ok().filter(|v| v.is_finite()))
                        .collect::<Option<Vec<_>>>()
                        .ok_or_else(|| bad("vector values must be finite numbers"))?;
                    m.entries.push(GalleryEntry::Vector {
                        label: toks[1].to_string(),
                        values,
                    });
                }
                path => {
                    let (region, label) = match toks[1..] {
                        ["auto", label] => (FaceRegion::Auto, label),
                        [x, y, w, h, label] => {
                            let n = |t: &str| {
                                t.parse::<usize>().map_err(|_| {
                                    bad("rectangle fields must be non-negative integers")
                                })
                            };
                            (
                                FaceRegion::Rect(Rect::new(n(x)?, n(y)?, n(w)?, n(h)?)),
                                label,
                            )
                        }
                        _ => return Err(bad("expected `path x y w h label` or `path auto label`")),
                    };
                    m.entries.push(GalleryEntry::Image {
                        path: path.to_string(),
                        region,
                        label: label.to_string(),
                    });
                }
            }
        }
        let images = m
            .entries
            .iter()
            .filter(|e| matches!(e, GalleryEntry::Image { .. }))
            .count();
        if images != 0 && images != m.entries.len() {
            return Err(Error::Config(
                "manifest mixes image and vector samples".into(),
            ));
        }
        Ok(m)
    }

    pub fn is_vector(&self) -> bool {
        matches!(self.entries.first(), Some(GalleryEntry::Vector { .. }))
    }

    /// Explicit codebook if any `code` lines were given.
    pub fn codebook(&self) -> Result<Option<Codebook>> {
        if self.codes.is_empty() {
            Ok(None)
        } else {
            Codebook::explicit(self.codes.clone()).map(Some)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bits(s: &str) -> Vec<bool> {
        s.chars().map(|c| c == '1').collect()
    }

    fn book(codes: &[(&str, &str)]) -> Codebook {
        Codebook::explicit(
            codes
                .iter()
                .map(|(l, b)| IdentityCode {
                    label: l.to_string(),
                    bits: bits(b),
                })
                .collect(),
        )
        .unwrap()
    }

    fn noise(w: usize, h: usize, seed: u32) -> GrayImage {
        GrayImage::from_fn(w, h, |x, y| {
            let v = (x as u32).wrapping_mul(2654435761)
                ^ (y as u32).wrapping_mul(40503)
                ^ seed.wrapping_mul(97);
            (v.wrapping_mul(2246822519) >> 24) as u8
        })
    }

    // Counts each cell independently using the grid cut positions.
    fn naive_descriptor(crop: &GrayImage, rows: usize, cols: usize, bins: usize) -> Vec<f64> {
        let side = crop.width();
        let cut = |i: usize, parts: usize| ((i * side) as f64 / parts as f64).round() as usize;
        let mut out = vec![];
        for r in 0..rows {
            for c in 0..cols {
                let (y0, y1, x0, x1) = (
                    cut(r, rows),
                    cut(r + 1, rows),
                    cut(c, cols),
                    cut(c + 1, cols),
                );
                let mut h = vec![0.0; bins];
                for y in y0..y1 {
                    for x in x0..x1 {
                        h[crop.get(x, y) as usize * bins / 256] += 1.0;
                    }
                }
                let n = ((y1 - y0) * (x1 - x0)) as f64;
                out.extend(h.into_iter().map(|v| v / n));
            }
        }
        out
    }

    #[test]
    fn constant_face_grayscale() {
        let img = GrayImage::filled(50, 40, 128);
        let d = extract_descriptor(&img, Rect::new(5, 5, 30, 30), &DescriptorConfig::default())
            .unwrap();
        assert_eq!(d.len(), 256);
        for cell in d.chunks(16) {
            assert_eq!(cell[8], 1.0);
            assert_eq!(cell.iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn dark_face_binary() {
        let cfg = DescriptorConfig {
            mode: DescriptorMode::Binary,
            ..DescriptorConfig::default()
        };
        let d = extract_descriptor(
            &GrayImage::filled(32, 32, 10),
            Rect::new(0, 0, 32, 32),
            &cfg,
        )
        .unwrap();
        assert_eq!(d.len(), 32);
        for cell in d.chunks(2) {
            assert_eq!(cell, [1.0, 0.0]);
        }
    }

    #[test]
    fn descriptor_matches_per_cell_oracle() {
        let img = noise(60, 50, 3);
        let face = Rect::new(7, 4, 40, 40);
        for (rows, cols, bins, crop) in [(4, 4, 16, 32), (3, 5, 7, 30), (1, 1, 256, 8)] {
            let cfg = DescriptorConfig {
                crop_size: crop,
                grid: (rows, cols),
                bins_per_cell: bins,
                mode: DescriptorMode::Grayscale,
            };
            let resized = img.crop(face).unwrap().resize_nearest(crop, crop);
            let got = extract_descriptor(&img, face, &cfg).unwrap();
            // non-square grids need their own cut per axis
            if rows == cols {
                assert_eq!(got, naive_descriptor(&resized, rows, cols, bins));
            }
            assert_eq!(got.len(), cfg.descriptor_len());
            for cell in got.chunks(bins) {
                assert!((cell.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
        assert!(extract_descriptor(
            &img,
            Rect::new(30, 30, 40, 40),
            &DescriptorConfig::default()
        )
        .is_err());
    }

    #[test]
    fn descriptor_locality() {
        let img = noise(32, 32, 1);
        let mut changed = img.clone();
        // cell (1, 2) covers x in 16..24, y in 8..16
        for y in 8..16 {
            for x in 16..24 {
                changed.set(x, y, 255 - img.get(x, y));
            }
        }
        let cfg = DescriptorConfig::default();
        let full = Rect::new(0, 0, 32, 32);
        let a = extract_descriptor(&img, full, &cfg).unwrap();
        let b = extract_descriptor(&changed, full, &cfg).unwrap();
        for (k, (ca, cb)) in a.chunks(16).zip(b.chunks(16)).enumerate() {
            if k != 6 {
                assert_eq!(ca, cb, "cell {k}");
            }
        }
        assert_ne!(a[6 * 16..7 * 16], b[6 * 16..7 * 16]);
    }

    #[test]
    fn gray_codes() {
        let cb = Codebook::gray(["a", "b", "c", "d", "e"]).unwrap();
        let got: Vec<Vec<bool>> = cb.codes().iter().map(|c| c.bits.clone()).collect();
        assert_eq!(got, ["000", "001", "011", "010", "110"].map(bits));
        assert_eq!(Codebook::gray(["a", "b"]).unwrap().width(), 1);
        assert_eq!(Codebook::gray(["a"]).unwrap().width(), 1);
        assert!(Codebook::gray(["a", "a"]).is_err());
    }

    #[test]
    fn codebook_rejects_bad_codes() {
        let mk = |codes: Vec<(&str, &str)>| {
            Codebook::explicit(
                codes
                    .into_iter()
                    .map(|(l, b)| IdentityCode {
                        label: l.into(),
                        bits: bits(b),
                    })
                    .collect(),
            )
        };
        assert!(mk(vec![("a", "01"), ("b", "01")]).is_err());
        assert!(mk(vec![("a", "01"), ("b", "011")]).is_err());
        assert!(mk(vec![("a b", "01")]).is_err());
        assert!(mk(vec![]).is_err());
    }

    #[test]
    fn decode_examples() {
        let cb = book(&[("p", "10010101"), ("q", "10001111")]);
        let out: Vec<f64> = bits("10001111")
            .iter()
            .map(|&b| f64::from(u8::from(b)))
            .collect();
        let d = cb.decode_output(&out).unwrap();
        assert_eq!((d.index, d.distance, d.confidence), (1, 0, 1.0));
        assert_eq!(cb.decode_output(&[0.5; 8]).unwrap().confidence, 0.0);
        assert!(cb.decode_output(&[0.5; 7]).is_err());
        assert!(matches!(
            cb.encode_target("zz"),
            Err(Error::UnknownLabel(_))
        ));
        // equidistant outputs go to the first enrolled code
        let tie = book(&[("a", "00"), ("b", "11")]);
        assert_eq!(tie.decode_output(&[0.9, 0.1]).unwrap().index, 0);
    }

    #[test]
    fn minmax_examples() {
        let rows = vec![vec![462.0, 0.0], vec![165.0, 0.0], vec![222.0, 0.0]];
        let mm = MinMax::fit(&rows).unwrap();
        assert_eq!(mm.apply(&rows[0]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(mm.apply(&rows[1]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(mm.apply(&[1000.0, 7.0]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(mm.apply(&[0.0, -7.0]).unwrap(), vec![0.0, 0.0]);
        assert!(mm.apply(&[1.0]).is_err());
        assert!(MinMax::fit(&[]).is_err());
    }

    fn numeric_rows() -> (Vec<(Vec<f64>, String)>, Codebook) {
        let rows = [
            ([462.0, 0.0, 0.0, 102.0], "1100"),
            ([342.0, 0.0, 0.0, 78.0], "0010"),
            ([234.0, 0.0, 0.0, 65.0], "1001"),
            ([500.0, 0.0, 0.0, 132.0], "1010"),
            ([222.0, 0.0, 0.0, 69.0], "1011"),
            ([165.0, 0.0, 0.0, 45.0], "0111"),
        ];
        let samples = rows
            .iter()
            .enumerate()
            .map(|(i, (v, _))| (v.to_vec(), format!("s{}", i + 1)))
            .collect();
        let cb = Codebook::explicit(
            rows.iter()
                .enumerate()
                .map(|(i, (_, b))| IdentityCode {
                    label: format!("s{}", i + 1),
                    bits: bits(b),
                })
                .collect(),
        )
        .unwrap();
        (samples, cb)
    }

    fn fixture_cfg(restarts: usize) -> RecognizerConfig {
        RecognizerConfig {
            hidden: 8,
            network: NetworkConfig {
                max_epochs: 10_000,
                seed: 1,
                ..NetworkConfig::new(0, 0, 0)
            },
            ratios: (1.0, 0.0, 0.0),
            restarts,
            accept_threshold: 0.75,
            execution: Execution::Parallel,
        }
    }

    #[test]
    fn numeric_rows_are_learned() {
        let (samples, cb) = numeric_rows();
        let out = train_on_vectors(
            &samples,
            FeatureSource::Vector { dim: 4 },
            Some(cb),
            &fixture_cfg(5),
        )
        .unwrap();
        assert!(out.report().final_train_mse <= 1e-3);
        let min = out
            .runs
            .iter()
            .map(|r| r.score)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(out.runs[out.selected].score, min);
        let eval = evaluate(&out.model, &samples).unwrap();
        assert_eq!((eval.correct, eval.total), (6, 6));
        assert!(eval.to_string().starts_with("accuracy 6/6 1\n"));
    }

    #[test]
    fn single_restart_equals_plain_training() {
        let (samples, cb) = numeric_rows();
        let cfg = fixture_cfg(1);
        let out = train_on_vectors(
            &samples,
            FeatureSource::Vector { dim: 4 },
            Some(cb.clone()),
            &cfg,
        )
        .unwrap();
        let mm = MinMax::fit(&samples.iter().map(|s| s.0.clone()).collect::<Vec<_>>()).unwrap();
        let data: Vec<_> = samples
            .iter()
            .map(|(v, l)| (mm.apply(v).unwrap(), cb.encode_target(l).unwrap()))
            .collect();
        let netcfg = NetworkConfig {
            n_in: 4,
            n_hidden: 8,
            n_out: 4,
            ..cfg.network.clone()
        };
        let split = bpnn::split_data(6, (1.0, 0.0, 0.0), 1).unwrap();
        let (net, report) =
            bpnn::train(Network::init(&netcfg).unwrap(), &data, &split, &netcfg).unwrap();
        assert_eq!(out.model.network, net);
        assert_eq!(out.report(), &report);
    }

    #[test]
    fn needs_two_identities_and_valid_restarts() {
        let samples = vec![(vec![1.0], "a".to_string()), (vec![2.0], "a".to_string())];
        let src = FeatureSource::Vector { dim: 1 };
        assert!(matches!(
            train_on_vectors(&samples, src, None, &fixture_cfg(1)),
            Err(Error::InsufficientIdentities(1))
        ));
        let two = vec![(vec![1.0], "a".to_string()), (vec![2.0], "b".to_string())];
        assert!(train_on_vectors(&two, src, None, &fixture_cfg(0)).is_err());
        assert!(train_on_vectors(&two, src, None, &fixture_cfg(11)).is_err());
    }

    #[test]
    fn gallery_self_recognition_and_threshold() {
        // three identities with distinct brightness layouts
        let faces: Vec<GrayImage> = (0..3u32)
            .map(|k| {
                GrayImage::from_fn(40, 40, move |x, y| {
                    let band = ((x / 10 + y / 10 + k as usize) % 3) as u8;
                    40 + band * 80
                })
            })
            .collect();
        let mut gallery = vec![];
        for (k, f) in faces.iter().enumerate() {
            for j in 0..3 {
                gallery.push((f.clone(), Rect::new(j, j, 36, 36), format!("id{k}")));
            }
        }
        let desc = DescriptorConfig {
            crop_size: 16,
            grid: (2, 2),
            bins_per_cell: 4,
            mode: DescriptorMode::Grayscale,
        };
        let cfg = RecognizerConfig {
            hidden: 6,
            ..fixture_cfg(2)
        };
        let out = train_recognizer(&gallery, &desc, &cfg).unwrap();
        for (img, r, l) in &gallery {
            let got = out.model.recognize(img, *r).unwrap();
            assert_eq!(got.label(), Some(l.as_str()), "{got:?}");
            // composition with the decoder
            let input = out
                .model
                .normalizer
                .apply(&extract_descriptor(img, *r, &desc).unwrap())
                .unwrap();
            let d = out
                .model
                .codebook
                .decode_output(&out.model.network.predict(&input).unwrap())
                .unwrap();
            assert_eq!(out.model.codebook.codes()[d.index].label, *l);
        }
        let strict = RecognizerModel {
            accept_threshold: 0.999_999,
            ..out.model.clone()
        };
        let blurred = GrayImage::filled(40, 40, 120);
        assert_eq!(
            strict
                .recognize(&blurred, Rect::new(0, 0, 36, 36))
                .unwrap()
                .to_string(),
            "unknown"
        );
    }

    #[test]
    fn manifest_parsing() {
        let m = Manifest::parse("# gallery\na.pgm 1 2 30 30 alice\nb.pgm auto bob # trailing\n\n")
            .unwrap();
        assert_eq!(m.entries.len(), 2);
        assert_eq!(
            m.entries[1],
            GalleryEntry::Image {
                path: "b.pgm".into(),
                region: FaceRegion::Auto,
                label: "bob".into()
            }
        );
        let v = Manifest::parse("code x 10\ncode y 01\nvec x 1 2\nvec y 3 4.5\n").unwrap();
        assert!(v.is_vector());
        assert_eq!(v.codebook().unwrap().unwrap().width(), 2);
        match Manifest::parse("a.pgm 1 2 3 alice\n") {
            Err(Error::Malformed { line, .. }) => assert_eq!(line, 1),
            other => panic!("{other:?}"),
        }
        assert!(Manifest::parse("a.pgm auto x\nvec y 1\n").is_err());
        assert!(Manifest::parse("vec y 1 nan\n").is_err());
    }

    proptest! {
        #[test]
        fn code_round_trip(n in 2usize..40) {
            let cb = Codebook::gray((0..n).map(|i| format!("id{i}"))).unwrap();
            for c in cb.codes() {
                let d = cb.decode_output(&cb.encode_target(&c.label).unwrap()).unwrap();
                prop_assert_eq!(&cb.codes()[d.index].label, &c.label);
                prop_assert_eq!(d.confidence, 1.0);
            }
        }

        #[test]
        fn decode_matches_exhaustive_scan(n in 2usize..20, out in prop::collection::vec(0.0f64..1.0, 5)) {
            let cb = Codebook::gray((0..n).map(|i| format!("id{i}"))).unwrap();
            let width = cb.width();
            let out = &out[..width.min(5)];
            prop_assume!(out.len() == width);
            let rounded: Vec<bool> = out.iter().map(|&o| o >= 0.5).collect();
            let mut best = (usize::MAX, 0);
            for (i, c) in cb.codes().iter().enumerate() {
                let d = c.bits.iter().zip(&rounded).filter(|(a, b)| a != b).count();
                if d < best.0 {
                    best = (d, i);
                }
            }
            let got = cb.decode_output(out).unwrap();
            prop_assert_eq!((got.distance, got.index), best);
            prop_assert!((0.0..=1.0).contains(&got.confidence));
        }

        #[test]
        fn descriptor_entries_normalized(seed in any::<u32>(), binary in any::<bool>()) {
            let img = noise(40, 40, seed);
            let cfg = DescriptorConfig {
                mode: if binary { DescriptorMode::Binary } else { DescriptorMode::Grayscale },
                ..DescriptorConfig::default()
            };
            let d = extract_descriptor(&img, Rect::new(3, 3, 33, 35), &cfg).unwrap();
            prop_assert!(d.iter().all(|v| (0.0..=1.0).contains(v)));
            for cell in d.chunks(cfg.bins()) {
                prop_assert!((cell.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }
}
