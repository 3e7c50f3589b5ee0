use std::fmt;

use super::{AdaBoost, NegativeSource, StrongClassifier, TrainingSet, DEFAULT_PRECOMPUTE_BUDGET};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::haar::{enumerate_features, HaarFeature, ScaledFeature, WindowSpec};
use crate::image::{integral_image, GrayImage, IntegralImage, SumTable};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StageMeta {
    /// Fraction of training positives accepted by the cascade up to this stage.
    pub tpr: f64,
    /// False-positive rate of the cascade up to this stage on the validation negatives.
    pub fpr: f64,
    /// Negatives mined for this stage.
    pub negatives: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    /// Built by hand or loaded without training history.
    Untrained,
    TargetMet,
    MaxStages,
    /// The negative source ran out of windows that pass the current cascade.
    NegativesExhausted,
    /// No stump beat chance on the mined set.
    NoProgress,
}

impl StopReason {
    pub const fn name(self) -> &'static str {
        match self {
            StopReason::Untrained => "untrained",
            StopReason::TargetMet => "target-met",
            StopReason::MaxStages => "max-stages",
            StopReason::NegativesExhausted => "negatives-exhausted",
            StopReason::NoProgress => "no-progress",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            StopReason::Untrained,
            StopReason::TargetMet,
            StopReason::MaxStages,
            StopReason::NegativesExhausted,
            StopReason::NoProgress,
        ]
        .into_iter()
        .find(|r| r.name() == s)
    }
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingMeta {
    /// Seed the negative source was reset with.
    pub seed: u64,
    pub stages: Vec<StageMeta>,
    pub stop: StopReason,
}

impl Default for TrainingMeta {
    fn default() -> Self {
        TrainingMeta {
            seed: 0,
            stages: Vec::new(),
            stop: StopReason::Untrained,
        }
    }
}

/// Ordered boosted stages over the full feature enumeration of a window.
#[derive(Clone, Debug, PartialEq)]
pub struct Cascade {
    window: WindowSpec,
    features: Vec<HaarFeature>,
    stages: Vec<StrongClassifier>,
    meta: TrainingMeta,
}

impl Cascade {
    pub fn new(
        window: WindowSpec,
        stages: Vec<StrongClassifier>,
        meta: TrainingMeta,
    ) -> Result<Self> {
        let features = enumerate_features(window);
        for (k, stage) in stages.iter().enumerate() {
            if let Some(w) = stage
                .weaks
                .iter()
                .find(|w| w.feature_index >= features.len())
            {
                return Err(Error::Config(format!(
                    "stage {k} references feature {} of {}",
                    w.feature_index,
                    features.len()
                )));
            }
        }
        Ok(Cascade {
            window,
            features,
            stages,
            meta,
        })
    }

    pub fn empty(window: WindowSpec) -> Self {
        Cascade::new(window, Vec::new(), TrainingMeta::default()).expect("no stages to validate")
    }

    pub fn window(&self) -> WindowSpec {
        self.window
    }

    pub fn features(&self) -> &[HaarFeature] {
        &self.features
    }

    pub fn stages(&self) -> &[StrongClassifier] {
        &self.stages
    }

    pub fn meta(&self) -> &TrainingMeta {
        &self.meta
    }

    /// Feature geometry of every weak classifier resolved for `scale`.
    pub fn at_scale(&self, scale: f64) -> Result<ScaledCascade> {
        let stages = self
            .stages
            .iter()
            .map(|stage| {
                let weaks = stage
                    .weaks
                    .iter()
                    .map(|w| {
                        Ok((
                            self.features[w.feature_index].scaled(self.window, scale)?,
                            *w,
                        ))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(ScaledStage {
                    weaks,
                    threshold: stage.threshold,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ScaledCascade {
            stages,
            side: (self.window.base_size() as f64 * scale).round() as usize,
        })
    }

    /// Whether stage `k` alone accepts the base-scale window at `origin`.
    pub fn stage_accepts<T: SumTable>(
        &self,
        k: usize,
        table: &T,
        origin: (usize, usize),
        scale: f64,
    ) -> Result<bool> {
        let stage = &self.stages[k];
        let mut score = 0.0;
        for w in &stage.weaks {
            let v = self.features[w.feature_index].evaluate(table, self.window, origin, scale)?;
            if w.predict(v) {
                score += w.alpha;
            }
        }
        Ok(score >= stage.threshold)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Verdict {
    /// Accepted by every stage; `score` is the last stage's margin
    /// `Σαh − threshold` (0 for an empty cascade).
    Accept { score: f64 },
    /// Rejected by stage `stage` (0-based); later stages were not evaluated.
    Reject { stage: usize },
}

impl Verdict {
    pub fn is_accept(&self) -> bool {
        matches!(self, Verdict::Accept { .. })
    }
}

struct ScaledStage {
    weaks: Vec<(ScaledFeature, super::WeakClassifier)>,
    threshold: f64,
}

/// A cascade with all feature geometry fixed for one scale.
pub struct ScaledCascade {
    stages: Vec<ScaledStage>,
    side: usize,
}

impl ScaledCascade {
    /// Window edge in pixels at this scale.
    pub fn side(&self) -> usize {
        self.side
    }

    pub fn n_stages(&self) -> usize {
        self.stages.len()
    }

    /// Runs the window at `(ox, oy)`, calling `on_eval(stage)` once per
    /// feature evaluation. The caller guarantees the window is inside `table`.
    #[inline]
    pub fn run<T: SumTable, F: FnMut(usize)>(
        &self,
        table: &T,
        ox: usize,
        oy: usize,
        mut on_eval: F,
    ) -> Verdict {
        let mut margin = 0.0;
        for (k, stage) in self.stages.iter().enumerate() {
            let mut score = 0.0;
            for (sf, weak) in &stage.weaks {
                on_eval(k);
                if weak.predict(sf.response(table, ox, oy)) {
                    score += weak.alpha;
                }
            }
            if score < stage.threshold {
                return Verdict::Reject { stage: k };
            }
            margin = score - stage.threshold;
        }
        Verdict::Accept { score: margin }
    }

    #[inline]
    pub fn classify<T: SumTable>(&self, table: &T, ox: usize, oy: usize) -> Verdict {
        self.run(table, ox, oy, |_| {})
    }
}

/// Classifies the window of edge `round(base·scale)` at `origin`.
pub fn classify_window(
    c: &Cascade,
    ii: &IntegralImage,
    origin: (usize, usize),
    scale: f64,
) -> Result<Verdict> {
    let scaled = c.at_scale(scale)?;
    let side = scaled.side();
    if origin.0 + side > ii.width() || origin.1 + side > ii.height() {
        return Err(Error::OutOfBounds {
            x: origin.0 as i64,
            y: origin.1 as i64,
            w: side as i64,
            h: side as i64,
            width: ii.width(),
            height: ii.height(),
        });
    }
    Ok(scaled.classify(ii, origin.0, origin.1))
}

/// Lowers the stage threshold to the largest value that still accepts at
/// least `ceil(target_tpr · n)` of the given positive scores. Never raises it.
pub fn tune_stage_threshold(
    stage: &StrongClassifier,
    positive_scores: &[f64],
    target_tpr: f64,
) -> Result<StrongClassifier> {
    if !(target_tpr > 0.0 && target_tpr <= 1.0) {
        return Err(Error::Config(format!(
            "target TPR must be in (0, 1], got {target_tpr}"
        )));
    }
    let mut tuned = stage.clone();
    if positive_scores.is_empty() {
        return Ok(tuned);
    }
    let mut sorted = positive_scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let n = sorted.len();
    let needed = ((target_tpr * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    tuned.threshold = tuned.threshold.min(sorted[needed - 1]);
    Ok(tuned)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CascadeConfig {
    pub per_stage_tpr: f64,
    pub per_stage_fpr: f64,
    /// Zero disables the target, so training runs to `max_stages`.
    pub overall_fpr_target: f64,
    pub max_stages: usize,
    pub max_weaks_per_stage: usize,
    /// Negatives mined for each stage.
    pub negatives_per_stage: usize,
    /// Held-out negatives drawn before training, used for the overall FPR.
    pub validation_negatives: usize,
    /// Draws allowed while mining one stage's negatives.
    pub max_mining_draws: usize,
    pub seed: u64,
    pub precompute_budget: usize,
    pub execution: Execution,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        CascadeConfig {
            per_stage_tpr: 0.99,
            per_stage_fpr: 0.5,
            overall_fpr_target: 1e-3,
            max_stages: 10,
            max_weaks_per_stage: 50,
            negatives_per_stage: 500,
            validation_negatives: 1000,
            max_mining_draws: 200_000,
            seed: 0,
            precompute_budget: DEFAULT_PRECOMPUTE_BUDGET,
            execution: Execution::Parallel,
        }
    }
}

impl CascadeConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be in (0, 1], got {v}")))
            }
        };
        unit("per_stage_tpr", self.per_stage_tpr)?;
        unit("per_stage_fpr", self.per_stage_fpr)?;
        if !(self.overall_fpr_target >= 0.0 && self.overall_fpr_target <= 1.0) {
            return Err(Error::Config(format!(
                "overall_fpr_target must be in [0, 1], got {}",
                self.overall_fpr_target
            )));
        }
        if self.max_stages == 0 || self.max_weaks_per_stage == 0 || self.negatives_per_stage == 0 {
            return Err(Error::Config(
                "max_stages, max_weaks_per_stage and negatives_per_stage must be positive".into(),
            ));
        }
        Ok(())
    }
}

fn accepted_by(c: &Cascade, tables: &[IntegralImage], mode: Execution) -> Result<Vec<bool>> {
    let scaled = c.at_scale(1.0)?;
    Ok(exec::map_slice(mode, tables, |t| {
        scaled.classify(t, 0, 0).is_accept()
    }))
}

/// Trains an attentional cascade on base-sized positive windows, mining each
/// stage's negatives as false positives of the stages before it.
pub fn train_cascade(
    positives: &[GrayImage],
    negatives: &mut dyn NegativeSource,
    window: WindowSpec,
    config: &CascadeConfig,
) -> Result<Cascade> {
    config.validate()?;
    if positives.is_empty() {
        return Err(Error::Degenerate("no positive windows".into()));
    }
    let mode = config.execution;
    let mut cascade = Cascade::empty(window);
    cascade.meta.seed = config.seed;
    negatives.reset(config.seed);

    let mut validation = Vec::with_capacity(config.validation_negatives);
    for _ in 0..config.validation_negatives {
        match negatives.draw() {
            Some(w) => validation.push(integral_image(&w)),
            None => break,
        }
    }
    let positive_tables: Vec<IntegralImage> = exec::map_slice(mode, positives, integral_image);
    let mut stage_fpr_product = 1.0;

    loop {
        let scaled = cascade.at_scale(1.0)?;
        let mut mined = Vec::with_capacity(config.negatives_per_stage);
        let mut draws = 0;
        while mined.len() < config.negatives_per_stage && draws < config.max_mining_draws {
            let Some(w) = negatives.draw() else { break };
            draws += 1;
            if scaled.classify(&integral_image(&w), 0, 0).is_accept() {
                mined.push(w);
            }
        }
        if mined.is_empty() {
            if cascade.stages.is_empty() {
                return Err(Error::Degenerate(
                    "negative source supplied no windows".into(),
                ));
            }
            cascade.meta.stop = StopReason::NegativesExhausted;
            break;
        }

        let set = TrainingSet::from_windows(
            window,
            &cascade.features,
            positives,
            &mined,
            config.precompute_budget,
            mode,
        )?;
        let n_pos = positives.len();
        let mut boost = AdaBoost::new(&set, mode)?;
        let mut scores = vec![0.0; set.len()];
        let mut stage = None;
        while boost.classifier().weaks.len() < config.max_weaks_per_stage {
            let Some(round) = boost.step() else { break };
            let column = set.column(round.weak.feature_index);
            for (s, &v) in scores.iter_mut().zip(&column) {
                if round.weak.predict(v) {
                    *s += round.weak.alpha;
                }
            }
            let tuned =
                tune_stage_threshold(boost.classifier(), &scores[..n_pos], config.per_stage_tpr)?;
            let false_pos = scores[n_pos..]
                .iter()
                .filter(|&&s| s >= tuned.threshold)
                .count();
            let fpr = false_pos as f64 / mined.len() as f64;
            let done = fpr <= config.per_stage_fpr;
            stage = Some((tuned, fpr));
            if done {
                break;
            }
        }
        let Some((stage, stage_fpr)) = stage else {
            cascade.meta.stop = StopReason::NoProgress;
            break;
        };
        cascade.stages.push(stage);
        stage_fpr_product *= stage_fpr;

        let tpr = accepted_by(&cascade, &positive_tables, mode)?
            .iter()
            .filter(|&&a| a)
            .count() as f64
            / positives.len() as f64;
        let fpr = if validation.is_empty() {
            stage_fpr_product
        } else {
            let keep = accepted_by(&cascade, &validation, mode)?;
            keep.iter().filter(|&&a| a).count() as f64 / validation.len() as f64
        };
        cascade.meta.stages.push(StageMeta {
            tpr,
            fpr,
            negatives: mined.len(),
        });
        if config.overall_fpr_target > 0.0 && fpr <= config.overall_fpr_target {
            cascade.meta.stop = StopReason::TargetMet;
            break;
        }
        if cascade.stages.len() >= config.max_stages {
            cascade.meta.stop = StopReason::MaxStages;
            break;
        }
    }
    Ok(cascade)
}
