//! Versioned text model files with lossless hexadecimal reals.
//!
//! ```text
//! VJBP1
//! CASCADE
//! window 24
//! features 162336
//! seed 0
//! stop target-met
//! stages 2
//! stage 0 weaks 3 threshold 0x1.8p+0
//! weak 1234 two-h 3 4 2 6 0x1.2p+4 1 0x1.0p-1
//! ...
//! history 2
//! meta 0 0x1.fap-1 0x1.0p-1 500
//! end
//! ```

use std::fs;
use std::path::Path;

use crate::boosting::{
    Cascade, StageMeta, StopReason, StrongClassifier, TrainingMeta, WeakClassifier,
};
use crate::bpnn::Network;
use crate::error::{Error, Result};
use crate::haar::{HaarKind, WindowSpec};
use crate::recognizer::{
    Codebook, DescriptorConfig, FeatureSource, IdentityCode, MinMax, RecognizerModel,
};

pub const MAGIC: &str = "VJBP1";

/// Lowercase hexadecimal rendering that parses back to the identical bits.
///
/// Normal numbers print as `0x1.<hex>p<exp>`, subnormals as `0x0.<hex>p-1022`.
/// Infinities are `inf` and `-inf`.
pub fn format_hex(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    let sign = if v.is_sign_negative() { "-" } else { "" };
    if v.is_infinite() {
        return format!("{sign}inf");
    }
    let bits = v.to_bits();
    let biased = ((bits >> 52) & 0x7ff) as i64;
    let mantissa = bits & ((1u64 << 52) - 1);
    let (lead, exp) = match (biased, mantissa) {
        (0, 0) => (0, 0),
        (0, _) => (0, -1022),
        _ => (1, biased - 1023),
    };
    let mut digits = format!("{mantissa:013x}");
    while digits.len() > 1 && digits.ends_with('0') {
        digits.pop();
    }
    format!("{sign}0x{lead}.{digits}p{exp:+}")
}

/// Inverse of [`format_hex`]. Also accepts any mantissa length up to 13 hex
/// digits and an omitted fraction (`0x1p+0`).
pub fn parse_hex(s: &str) -> Option<f64> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let v = match body {
        "inf" => f64::INFINITY,
        "nan" if !neg => return Some(f64::NAN),
        _ => {
            let body = body.strip_prefix("0x")?;
            let (mant, exp) = body.split_once('p')?;
            let exp: i64 = exp.parse().ok()?;
            let (lead, frac) = mant.split_once('.').unwrap_or((mant, ""));
            if frac.len() > 13
                || !frac
                    .bytes()
                    .all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase())
            {
                return None;
            }
            let frac_bits = if frac.is_empty() {
                0
            } else {
                u64::from_str_radix(frac, 16).ok()? << (4 * (13 - frac.len()))
            };
            match lead {
                "0" if frac_bits == 0 && exp == 0 => 0.0,
                "0" if exp == -1022 => f64::from_bits(frac_bits),
                "1" if (-1022..=1023).contains(&exp) => {
                    f64::from_bits(((exp + 1023) as u64) << 52 | frac_bits)
                }
                _ => return None,
            }
        }
    };
    Some(if neg { -v } else { v })
}

#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Cascade(Cascade),
    Recognizer(RecognizerModel),
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::Cascade(_) => "CASCADE",
            Model::Recognizer(_) => "RECOGNIZER",
        }
    }
}

fn hex_row(vals: &[f64]) -> String {
    vals.iter()
        .map(|&v| format_hex(v))
        .collect::<Vec<_>>()
        .join(" ")
}

fn bit_string(bits: &[bool]) -> String {
    bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

pub fn encode_cascade(c: &Cascade) -> String {
    let mut out = vec![
        MAGIC.to_string(),
        "CASCADE".into(),
        format!("window {}", c.window().base_size()),
        format!("features {}", c.features().len()),
        format!("seed {}", c.meta().seed),
        format!("stop {}", c.meta().stop),
        format!("stages {}", c.stages().len()),
    ];
    for (k, s) in c.stages().iter().enumerate() {
        out.push(format!(
            "stage {k} weaks {} threshold {}",
            s.weaks.len(),
            format_hex(s.threshold)
        ));
        for w in &s.weaks {
            let f = c.features()[w.feature_index];
            out.push(format!(
                "weak {} {} {} {} {} {} {} {} {}",
                w.feature_index,
                f.kind.name(),
                f.x,
                f.y,
                f.unit_w,
                f.unit_h,
                format_hex(w.threshold),
                w.polarity,
                format_hex(w.alpha)
            ));
        }
    }
    out.push(format!("history {}", c.meta().stages.len()));
    for (k, m) in c.meta().stages.iter().enumerate() {
        out.push(format!(
            "meta {k} {} {} {}",
            format_hex(m.tpr),
            format_hex(m.fpr),
            m.negatives
        ));
    }
    out.push("end".into());
    out.join("\n") + "\n"
}

pub fn encode_recognizer(m: &RecognizerModel) -> String {
    let (n_in, n_hidden, n_out) = m.network.dims();
    let mut out = vec![MAGIC.to_string(), "RECOGNIZER".into()];
    out.push(match &m.source {
        FeatureSource::Image(d) => format!(
            "features image {} {} {} {} {}",
            d.crop_size,
            d.grid.0,
            d.grid.1,
            d.bins_per_cell,
            d.mode.name()
        ),
        FeatureSource::Vector { dim } => format!("features vector {dim}"),
    });
    out.push(format!("network {n_in} {n_hidden} {n_out}"));
    out.push(format!("accept {}", format_hex(m.accept_threshold)));
    out.push(format!("identities {}", m.codebook.len()));
    for c in m.codebook.codes() {
        out.push(format!("identity {} {}", c.label, bit_string(&c.bits)));
    }
    for (lo, hi) in m.normalizer.min.iter().zip(&m.normalizer.max) {
        out.push(format!("range {} {}", format_hex(*lo), format_hex(*hi)));
    }
    for row in m.network.w1.chunks(n_in) {
        out.push(format!("w1 {}", hex_row(row)));
    }
    out.push(format!("b1 {}", hex_row(&m.network.b1)));
    for row in m.network.w2.chunks(n_hidden) {
        out.push(format!("w2 {}", hex_row(row)));
    }
    out.push(format!("b2 {}", hex_row(&m.network.b2)));
    out.push("end".into());
    out.join("\n") + "\n"
}

pub fn encode(m: &Model) -> String {
    match m {
        Model::Cascade(c) => encode_cascade(c),
        Model::Recognizer(r) => encode_recognizer(r),
    }
}

/// Line cursor that reports failures against 1-based line numbers.
struct Lines<'a> {
    lines: Vec<&'a str>,
    pos: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Lines {
            lines: text.lines().collect(),
            pos: 0,
        }
    }

    fn line_no(&self) -> usize {
        self.pos
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::malformed(self.pos, msg)
    }

    fn next(&mut self) -> Result<&'a str> {
        let line = self.lines.get(self.pos).copied();
        self.pos += 1;
        line.ok_or_else(|| self.err("unexpected end of file"))
    }

    /// Next line, which must start with `key`; returns the remaining tokens.
    fn record(&mut self, key: &str) -> Result<Vec<&'a str>> {
        let line = self.next()?;
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some(k) if k == key => Ok(toks.collect()),
            _ => Err(self.err(format!("expected `{key}` record"))),
        }
    }

    fn fields<const N: usize>(&mut self, key: &str) -> Result<[&'a str; N]> {
        let toks = self.record(key)?;
        toks.try_into().map_err(|t: Vec<&str>| {
            self.err(format!("`{key}` takes {N} fields, found {}", t.len()))
        })
    }

    fn int<T: std::str::FromStr>(&self, tok: &str) -> Result<T> {
        tok.parse()
            .map_err(|_| self.err(format!("invalid integer `{tok}`")))
    }

    fn real(&self, tok: &str) -> Result<f64> {
        parse_hex(tok).ok_or_else(|| self.err(format!("invalid hex real `{tok}`")))
    }

    fn reals(&self, toks: &[&str], n: usize, what: &str) -> Result<Vec<f64>> {
        if toks.len() != n {
            return Err(self.err(format!("`{what}` needs {n} values, found {}", toks.len())));
        }
        toks.iter().map(|t| self.real(t)).collect()
    }

    fn real_row(&mut self, key: &str, n: usize) -> Result<Vec<f64>> {
        let toks = self.record(key)?;
        self.reals(&toks, n, key)
    }

    fn finish(&mut self) -> Result<()> {
        self.fields::<0>("end")?;
        if self.lines[self.pos..].iter().any(|l| !l.trim().is_empty()) {
            self.pos += 1;
            return Err(self.err("content after `end`"));
        }
        Ok(())
    }
}

fn decode_cascade(l: &mut Lines) -> Result<Cascade> {
    let [base] = l.fields("window")?;
    let window = WindowSpec::new(l.int(base)?).map_err(|e| l.err(e.to_string()))?;
    let [n_features] = l.fields("features")?;
    let n_features: usize = l.int(n_features)?;
    let expected = Cascade::empty(window);
    if n_features != expected.features().len() {
        return Err(l.err(format!(
            "window {} has {} features, file says {n_features}",
            window.base_size(),
            expected.features().len()
        )));
    }
    let [seed] = l.fields("seed")?;
    let seed = l.int(seed)?;
    let [stop] = l.fields("stop")?;
    let stop =
        StopReason::parse(stop).ok_or_else(|| l.err(format!("unknown stop reason `{stop}`")))?;
    let [n_stages] = l.fields("stages")?;
    let n_stages: usize = l.int(n_stages)?;
    let mut stages = Vec::new();
    for k in 0..n_stages {
        let [idx, weaks_kw, n_weaks, thr_kw, thr] = l.fields("stage")?;
        if l.int::<usize>(idx)? != k || weaks_kw != "weaks" || thr_kw != "threshold" {
            return Err(l.err(format!("expected `stage {k} weaks N threshold T`")));
        }
        let n_weaks: usize = l.int(n_weaks)?;
        let threshold = l.real(thr)?;
        let mut weaks = Vec::new();
        for _ in 0..n_weaks {
            let [fi, kind, x, y, uw, uh, t, p, a] = l.fields("weak")?;
            let feature_index: usize = l.int(fi)?;
            let kind: HaarKind = kind
                .parse()
                .map_err(|_| l.err(format!("unknown feature kind `{kind}`")))?;
            let described = (kind, l.int(x)?, l.int(y)?, l.int(uw)?, l.int(uh)?);
            let actual = expected
                .features()
                .get(feature_index)
                .ok_or_else(|| l.err(format!("feature index {feature_index} out of range")))?;
            if described
                != (
                    actual.kind,
                    actual.x,
                    actual.y,
                    actual.unit_w,
                    actual.unit_h,
                )
            {
                return Err(l.err(format!(
                    "feature {feature_index} geometry does not match the enumeration"
                )));
            }
            let polarity: i8 = l.int(p)?;
            if polarity != 1 && polarity != -1 {
                return Err(l.err("polarity must be 1 or -1"));
            }
            weaks.push(WeakClassifier {
                feature_index,
                threshold: l.real(t)?,
                polarity,
                alpha: l.real(a)?,
            });
        }
        stages.push(StrongClassifier { weaks, threshold });
    }
    let [n_meta] = l.fields("history")?;
    let mut history = Vec::new();
    for k in 0..l.int::<usize>(n_meta)? {
        let [idx, tpr, fpr, negs] = l.fields("meta")?;
        if l.int::<usize>(idx)? != k {
            return Err(l.err(format!("expected `meta {k}`")));
        }
        history.push(StageMeta {
            tpr: l.real(tpr)?,
            fpr: l.real(fpr)?,
            negatives: l.int(negs)?,
        });
    }
    l.finish()?;
    Cascade::new(
        window,
        stages,
        TrainingMeta {
            seed,
            stages: history,
            stop,
        },
    )
}

fn decode_recognizer(l: &mut Lines) -> Result<RecognizerModel> {
    let toks = l.record("features")?;
    let source = match toks[..] {
        ["image", crop, rows, cols, bins, mode] => {
            let d = DescriptorConfig {
                crop_size: l.int(crop)?,
                grid: (l.int(rows)?, l.int(cols)?),
                bins_per_cell: l.int(bins)?,
                mode: mode.parse().map_err(|e: Error| l.err(e.to_string()))?,
            };
            d.validate().map_err(|e| l.err(e.to_string()))?;
            FeatureSource::Image(d)
        }
        ["vector", dim] => FeatureSource::Vector { dim: l.int(dim)? },
        _ => return Err(l.err("expected `features image ...` or `features vector N`")),
    };
    let [n_in, n_hidden, n_out] = l.fields("network")?;
    let (n_in, n_hidden, n_out): (usize, usize, usize) =
        (l.int(n_in)?, l.int(n_hidden)?, l.int(n_out)?);
    if n_in == 0 || n_hidden == 0 || n_out == 0 || n_in != source.dim() {
        return Err(l.err("network dimensions do not fit the feature source"));
    }
    let [accept] = l.fields("accept")?;
    let accept_threshold = l.real(accept)?;
    let [n_ids] = l.fields("identities")?;
    let mut codes = Vec::new();
    for _ in 0..l.int::<usize>(n_ids)? {
        let [label, bits] = l.fields("identity")?;
        let bits = bits
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(l.err("identity bits must be 0 or 1")),
            })
            .collect::<Result<Vec<_>>>()?;
        codes.push(IdentityCode {
            label: label.to_string(),
            bits,
        });
    }
    let codebook = Codebook::explicit(codes).map_err(|e| l.err(e.to_string()))?;
    let mut min = Vec::with_capacity(n_in);
    let mut max = Vec::with_capacity(n_in);
    for _ in 0..n_in {
        let [lo, hi] = l.fields("range")?;
        min.push(l.real(lo)?);
        max.push(l.real(hi)?);
    }
    let mut w1 = Vec::with_capacity(n_in * n_hidden);
    for _ in 0..n_hidden {
        w1.extend(l.real_row("w1", n_in)?);
    }
    let b1 = l.real_row("b1", n_hidden)?;
    let mut w2 = Vec::with_capacity(n_hidden * n_out);
    for _ in 0..n_out {
        w2.extend(l.real_row("w2", n_hidden)?);
    }
    let b2 = l.real_row("b2", n_out)?;
    let end_line = l.line_no() + 1;
    l.finish()?;
    let network = Network::from_parts((n_in, n_hidden, n_out), w1, b1, w2, b2)
        .map_err(|e| Error::malformed(end_line, e.to_string()))?;
    let model = RecognizerModel {
        source,
        normalizer: MinMax { min, max },
        network,
        codebook,
        accept_threshold,
    };
    model
        .validate()
        .map_err(|e| Error::malformed(end_line, e.to_string()))?;
    Ok(model)
}

pub fn decode(text: &str) -> Result<Model> {
    let mut l = Lines::new(text);
    let magic = l.next()?.trim();
    if magic != MAGIC {
        return Err(match magic.strip_prefix("VJBP") {
            Some(v) if !v.is_empty() && v.bytes().all(|b| b.is_ascii_digit()) => {
                Error::VersionMismatch(format!("file version {v}, expected 1"))
            }
            _ => l.err(format!("missing `{MAGIC}` header")),
        });
    }
    match l.next()?.trim() {
        "CASCADE" => decode_cascade(&mut l).map(Model::Cascade),
        "RECOGNIZER" => decode_recognizer(&mut l).map(Model::Recognizer),
        other => Err(l.err(format!("unknown section `{other}`"))),
    }
}

pub fn save_model(m: &Model, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(m))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    decode(&fs::read_to_string(path)?)
}

pub fn load_cascade(path: impl AsRef<Path>) -> Result<Cascade> {
    match load_model(path)? {
        Model::Cascade(c) => Ok(c),
        other => Err(Error::Format(format!(
            "expected a CASCADE model, found {}",
            other.kind()
        ))),
    }
}

pub fn load_recognizer(path: impl AsRef<Path>) -> Result<RecognizerModel> {
    match load_model(path)? {
        Model::Recognizer(r) => Ok(r),
        other => Err(Error::Format(format!(
            "expected a RECOGNIZER model, found {}",
            other.kind()
        ))),
    }
}
