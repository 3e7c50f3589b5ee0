//! Decision stumps, discrete AdaBoost and the attentional cascade.

mod cascade;
mod sampler;

pub use cascade::{
    classify_window, train_cascade, tune_stage_threshold, Cascade, CascadeConfig, ScaledCascade,
    StageMeta, StopReason, TrainingMeta, Verdict,
};
pub use sampler::{FixedWindows, MixedSource, NegativeSource, SceneSampler, WindowSampler};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::haar::{HaarFeature, WindowSpec};
use crate::image::{integral_image, GrayImage, IntegralImage};

/// Default cap on precomputed `features × samples` entries (12 bytes each).
pub const DEFAULT_PRECOMPUTE_BUDGET: usize = 32 << 20;

/// Labelled samples with their feature responses.
///
/// Responses are kept per feature in ascending order together with the
/// permutation that sorts them, which is all a stump search needs. When the
/// table would exceed the precompute budget, columns are computed on demand
/// from the samples' integral images instead.
pub struct TrainingSet {
    labels: Vec<bool>,
    n_features: usize,
    store: Store,
}

enum Store {
    Sorted {
        values: Vec<f64>,
        order: Vec<u32>,
    },
    Lazy {
        tables: Vec<IntegralImage>,
        features: Vec<crate::haar::ScaledFeature>,
    },
}

impl TrainingSet {
    /// Builds a set from per-sample feature vectors (`values[sample][feature]`).
    pub fn from_values(values: &[Vec<f64>], labels: &[bool]) -> Result<Self> {
        if values.len() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} samples but {} labels",
                values.len(),
                labels.len()
            )));
        }
        let n_features = values.first().map_or(0, Vec::len);
        if values.iter().any(|v| v.len() != n_features) {
            return Err(Error::Dimension("ragged feature vectors".into()));
        }
        let columns: Vec<Vec<f64>> = (0..n_features)
            .map(|f| values.iter().map(|v| v[f]).collect())
            .collect();
        Ok(Self::from_columns(
            columns,
            labels.to_vec(),
            Execution::Sequential,
        ))
    }

    /// Evaluates `features` at scale 1 on every base-sized window.
    pub fn from_windows(
        win: WindowSpec,
        features: &[HaarFeature],
        positives: &[GrayImage],
        negatives: &[GrayImage],
        budget: usize,
        mode: Execution,
    ) -> Result<Self> {
        let base = win.base_size();
        let windows: Vec<&GrayImage> = positives.iter().chain(negatives).collect();
        if let Some(bad) = windows.iter().find(|w| {
            crate::image::Raster::width(**w) != base || crate::image::Raster::height(**w) != base
        }) {
            return Err(Error::Dimension(format!(
                "training window is {}x{}, expected {base}x{base}",
                crate::image::Raster::width(*bad),
                crate::image::Raster::height(*bad)
            )));
        }
        let mut labels = vec![true; positives.len()];
        labels.resize(windows.len(), false);
        let tables: Vec<IntegralImage> = exec::map_slice(mode, &windows, |w| integral_image(w));
        let scaled = features
            .iter()
            .map(|f| f.scaled(win, 1.0))
            .collect::<Result<Vec<_>>>()?;
        if features.len().saturating_mul(windows.len()) <= budget {
            let columns = exec::map_slice(mode, &scaled, |sf| {
                tables
                    .iter()
                    .map(|t| sf.response(t, 0, 0))
                    .collect::<Vec<f64>>()
            });
            Ok(Self::from_columns(columns, labels, mode))
        } else {
            Ok(TrainingSet {
                labels,
                n_features: features.len(),
                store: Store::Lazy {
                    tables,
                    features: scaled,
                },
            })
        }
    }

    fn from_columns(columns: Vec<Vec<f64>>, labels: Vec<bool>, mode: Execution) -> Self {
        let n_features = columns.len();
        let sorted = exec::map_slice(mode, &columns, |col| sort_column(col));
        let mut values = Vec::with_capacity(n_features * labels.len());
        let mut order = Vec::with_capacity(n_features * labels.len());
        for (v, o) in sorted {
            values.extend(v);
            order.extend(o);
        }
        TrainingSet {
            labels,
            n_features,
            store: Store::Sorted { values, order },
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn is_precomputed(&self) -> bool {
        matches!(self.store, Store::Sorted { .. })
    }

    fn with_sorted<R>(&self, feature: usize, f: impl FnOnce(&[f64], &[u32]) -> R) -> R {
        let n = self.labels.len();
        match &self.store {
            Store::Sorted { values, order } => {
                let range = feature * n..(feature + 1) * n;
                f(&values[range.clone()], &order[range])
            }
            Store::Lazy { tables, features } => {
                let col: Vec<f64> = tables
                    .iter()
                    .map(|t| features[feature].response(t, 0, 0))
                    .collect();
                let (v, o) = sort_column(&col);
                f(&v, &o)
            }
        }
    }

    /// Unsorted responses of one feature, indexed by sample.
    pub fn column(&self, feature: usize) -> Vec<f64> {
        self.with_sorted(feature, |vals, order| {
            let mut col = vec![0.0; vals.len()];
            for (&v, &i) in vals.iter().zip(order) {
                col[i as usize] = v;
            }
            col
        })
    }

    /// Class-balanced initial weights: half the mass on each class.
    pub fn initial_weights(&self) -> Vec<f64> {
        let pos = self.labels.iter().filter(|&&l| l).count();
        let neg = self.labels.len() - pos;
        self.labels
            .iter()
            .map(|&l| {
                if l {
                    0.5 / pos as f64
                } else {
                    0.5 / neg as f64
                }
            })
            .collect()
    }

    fn check_both_classes(&self) -> Result<()> {
        let pos = self.labels.iter().filter(|&&l| l).count();
        if pos == 0 || pos == self.labels.len() {
            return Err(Error::Degenerate(format!(
                "{pos} positive and {} negative samples; both classes are required",
                self.labels.len() - pos
            )));
        }
        Ok(())
    }
}

fn sort_column(col: &[f64]) -> (Vec<f64>, Vec<u32>) {
    let mut order: Vec<u32> = (0..col.len() as u32).collect();
    order.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
    let values = order.iter().map(|&i| col[i as usize]).collect();
    (values, order)
}

/// Thresholded single-feature rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeakClassifier {
    pub feature_index: usize,
    pub threshold: f64,
    /// `+1` or `-1`.
    pub polarity: i8,
    pub alpha: f64,
}

impl WeakClassifier {
    /// Face iff `polarity · value < polarity · threshold`.
    #[inline]
    pub fn predict(&self, value: f64) -> bool {
        let p = self.polarity as f64;
        p * value < p * self.threshold
    }
}

/// Best stump on one feature. Candidate thresholds are `-inf`, the midpoints
/// between consecutive distinct values, and `+inf`; ties go to the smaller
/// threshold, then to polarity `+1`.
pub fn train_weak(
    set: &TrainingSet,
    weights: &[f64],
    feature_index: usize,
) -> Result<(WeakClassifier, f64)> {
    set.check_both_classes()?;
    if weights.len() != set.len() {
        return Err(Error::Dimension(format!(
            "{} weights for {} samples",
            weights.len(),
            set.len()
        )));
    }
    if feature_index >= set.n_features() {
        return Err(Error::Dimension(format!(
            "feature {feature_index} out of range ({} features)",
            set.n_features()
        )));
    }
    Ok(best_stump(set, weights, feature_index))
}

fn best_stump(set: &TrainingSet, weights: &[f64], feature_index: usize) -> (WeakClassifier, f64) {
    let labels = set.labels();
    let (mut total_pos, mut total_neg) = (0.0, 0.0);
    for (&l, &w) in labels.iter().zip(weights) {
        if l {
            total_pos += w;
        } else {
            total_neg += w;
        }
    }
    set.with_sorted(feature_index, |vals, order| {
        let n = vals.len();
        let (mut pos_below, mut neg_below) = (0.0, 0.0);
        let mut best = (f64::INFINITY, f64::NEG_INFINITY, 1i8);
        for k in 0..=n {
            let threshold = if k == 0 {
                Some(f64::NEG_INFINITY)
            } else if k == n {
                Some(f64::INFINITY)
            } else if vals[k - 1] < vals[k] {
                Some(0.5 * (vals[k - 1] + vals[k]))
            } else {
                None
            };
            if let Some(t) = threshold {
                // polarity +1 calls the values below the threshold faces
                let err_pos = neg_below + (total_pos - pos_below);
                let err_neg = pos_below + (total_neg - neg_below);
                if err_pos < best.0 {
                    best = (err_pos, t, 1);
                }
                if err_neg < best.0 {
                    best = (err_neg, t, -1);
                }
            }
            if k < n {
                let i = order[k] as usize;
                if labels[i] {
                    pos_below += weights[i];
                } else {
                    neg_below += weights[i];
                }
            }
        }
        (
            WeakClassifier {
                feature_index,
                threshold: best.1,
                polarity: best.2,
                alpha: 0.0,
            },
            best.0.max(0.0),
        )
    })
}

/// Weighted vote of stumps.
#[derive(Clone, Debug, PartialEq)]
pub struct StrongClassifier {
    pub weaks: Vec<WeakClassifier>,
    pub threshold: f64,
}

impl StrongClassifier {
    pub fn alpha_sum(&self) -> f64 {
        self.weaks.iter().map(|w| w.alpha).sum()
    }

    /// `Σ alpha_t · [h_t(x) = face]`, given each weak's feature response.
    pub fn score(&self, value_of: impl Fn(usize) -> f64) -> f64 {
        let mut s = 0.0;
        for w in &self.weaks {
            if w.predict(value_of(w.feature_index)) {
                s += w.alpha;
            }
        }
        s
    }

    pub fn accepts(&self, value_of: impl Fn(usize) -> f64) -> bool {
        self.score(value_of) >= self.threshold
    }

    /// Scores of every sample of `set`.
    pub fn scores(&self, set: &TrainingSet) -> Vec<f64> {
        let columns: Vec<Vec<f64>> = self
            .weaks
            .iter()
            .map(|w| set.column(w.feature_index))
            .collect();
        (0..set.len())
            .map(|i| {
                let mut s = 0.0;
                for (w, col) in self.weaks.iter().zip(&columns) {
                    if w.predict(col[i]) {
                        s += w.alpha;
                    }
                }
                s
            })
            .collect()
    }
}

/// Lower clamp on the weighted error of a retained round.
pub const MIN_ERROR: f64 = 1e-10;

/// Outcome of one boosting round.
#[derive(Clone, Debug, PartialEq)]
pub struct Round {
    pub weak: WeakClassifier,
    /// Unclamped weighted error of the chosen stump.
    pub error: f64,
    /// Sum of the weights after the post-update normalization.
    pub weight_sum: f64,
}

/// Discrete AdaBoost, one round at a time.
pub struct AdaBoost<'a> {
    set: &'a TrainingSet,
    weights: Vec<f64>,
    strong: StrongClassifier,
    mode: Execution,
    done: bool,
}

impl<'a> AdaBoost<'a> {
    pub fn new(set: &'a TrainingSet, mode: Execution) -> Result<Self> {
        set.check_both_classes()?;
        if set.n_features() == 0 {
            return Err(Error::Degenerate("no features to boost over".into()));
        }
        Ok(AdaBoost {
            set,
            weights: set.initial_weights(),
            strong: StrongClassifier {
                weaks: Vec::new(),
                threshold: 0.0,
            },
            mode,
            done: false,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn classifier(&self) -> &StrongClassifier {
        &self.strong
    }

    pub fn into_classifier(self) -> StrongClassifier {
        self.strong
    }

    fn normalize(&mut self) {
        let s: f64 = self.weights.iter().sum();
        for w in &mut self.weights {
            *w /= s;
        }
    }

    /// Runs one round. Returns `None` once the best stump is no better than
    /// chance; that round is discarded and boosting stops.
    pub fn step(&mut self) -> Option<Round> {
        if self.done {
            return None;
        }
        self.normalize();
        let (set, weights) = (self.set, &self.weights);
        let (_, (weak, error)) = exec::min_by_range(
            self.mode,
            set.n_features(),
            |f| best_stump(set, weights, f),
            |a, b| a.1.total_cmp(&b.1),
        )?;
        if error >= 0.5 {
            self.done = true;
            return None;
        }
        let eps = error.max(MIN_ERROR);
        let alpha = 0.5 * ((1.0 - eps) / eps).ln();
        let weak = WeakClassifier { alpha, ..weak };
        let column = set.column(weak.feature_index);
        for ((w, &label), &v) in self.weights.iter_mut().zip(set.labels()).zip(&column) {
            let agree = weak.predict(v) == label;
            *w *= if agree { (-alpha).exp() } else { alpha.exp() };
        }
        self.normalize();
        self.strong.weaks.push(weak);
        self.strong.threshold = 0.5 * self.strong.alpha_sum();
        Some(Round {
            weak,
            error,
            weight_sum: self.weights.iter().sum(),
        })
    }
}

/// `rounds` of discrete AdaBoost; the stage threshold is `½ Σ alpha`.
pub fn train_strong(set: &TrainingSet, rounds: usize, mode: Execution) -> Result<StrongClassifier> {
    if rounds == 0 {
        return Err(Error::Config(
            "at least one boosting round is required".into(),
        ));
    }
    let mut boost = AdaBoost::new(set, mode)?;
    for _ in 0..rounds {
        if boost.step().is_none() {
            break;
        }
    }
    Ok(boost.into_classifier())
}

/// Fraction of samples the classifier gets wrong.
pub fn training_error(strong: &StrongClassifier, set: &TrainingSet) -> f64 {
    let wrong = strong
        .scores(set)
        .iter()
        .zip(set.labels())
        .filter(|(&s, &l)| (s >= strong.threshold) != l)
        .count();
    wrong as f64 / set.len() as f64
}
