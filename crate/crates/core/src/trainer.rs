//! Discrete AdaBoost over Haar stumps with attentional stage calibration and
//! hard-negative mining.

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cascade::{Cascade, HaarFeature, Stage, WeakClassifier, WeightedRect};
use crate::detector::{build_pyramid, PyramidConfig};
use crate::imaging::GrayImage;
use crate::integral::{build_integral, IntegralImage};

/// Lower clamp on the weighted error when deriving votes.
pub const MIN_ERROR: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("need at least {need} positive samples, got {got}")]
    TooFewPositives { need: usize, got: usize },
    #[error("training needs both positive and negative samples")]
    MissingClass,
    #[error("sample {index} is {w}x{h}, expected {win_w}x{win_h}")]
    WindowSize {
        index: usize,
        w: u32,
        h: u32,
        win_w: u32,
        win_h: u32,
    },
    #[error("no features to train on")]
    NoFeatures,
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub window: GrayImage,
    pub label: Label,
    pub weight: f64,
}

/// The five upright templates as (cells across, cells down).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HaarTemplate {
    EdgeHorizontal,
    EdgeVertical,
    LineHorizontal,
    LineVertical,
    Checkerboard,
}

impl HaarTemplate {
    pub const ALL: [HaarTemplate; 5] = [
        HaarTemplate::EdgeHorizontal,
        HaarTemplate::EdgeVertical,
        HaarTemplate::LineHorizontal,
        HaarTemplate::LineVertical,
        HaarTemplate::Checkerboard,
    ];

    fn cells(self) -> (u32, u32) {
        match self {
            HaarTemplate::EdgeHorizontal => (2, 1),
            HaarTemplate::EdgeVertical => (1, 2),
            HaarTemplate::LineHorizontal => (3, 1),
            HaarTemplate::LineVertical => (1, 3),
            HaarTemplate::Checkerboard => (2, 2),
        }
    }

    fn rects(self, x: u32, y: u32, cw: u32, ch: u32) -> Vec<WeightedRect> {
        let r = WeightedRect::new;
        match self {
            HaarTemplate::EdgeHorizontal => vec![r(x, y, cw, ch, 1), r(x + cw, y, cw, ch, -1)],
            HaarTemplate::EdgeVertical => vec![r(x, y, cw, ch, 1), r(x, y + ch, cw, ch, -1)],
            HaarTemplate::LineHorizontal => vec![
                r(x, y, cw, ch, 1),
                r(x + cw, y, cw, ch, -2),
                r(x + 2 * cw, y, cw, ch, 1),
            ],
            HaarTemplate::LineVertical => vec![
                r(x, y, cw, ch, 1),
                r(x, y + ch, cw, ch, -2),
                r(x, y + 2 * ch, cw, ch, 1),
            ],
            HaarTemplate::Checkerboard => vec![
                r(x, y, cw, ch, 1),
                r(x + cw, y, cw, ch, -1),
                r(x, y + ch, cw, ch, -1),
                r(x + cw, y + ch, cw, ch, 1),
            ],
        }
    }
}

/// Every placement of `templates` in a `win_w x win_h` window: cell sizes
/// from `min_size` up, positions on a `stride` grid. Order is template,
/// cell width, cell height, y, x.
pub fn enumerate_templates(
    templates: &[HaarTemplate],
    win_w: u32,
    win_h: u32,
    min_size: u32,
    stride: u32,
) -> Vec<HaarFeature> {
    let (min_size, stride) = (min_size.max(1), stride.max(1));
    let mut out = Vec::new();
    for &t in templates {
        let (nx, ny) = t.cells();
        for cw in min_size..=win_w / nx {
            for ch in min_size..=win_h / ny {
                for y in (0..=win_h - ny * ch).step_by(stride as usize) {
                    for x in (0..=win_w - nx * cw).step_by(stride as usize) {
                        let f = HaarFeature::new(t.rects(x, y, cw, ch), win_w, win_h)
                            .expect("template is zero-mean and in-window");
                        out.push(f);
                    }
                }
            }
        }
    }
    out
}

pub fn enumerate_features(win_w: u32, win_h: u32, min_size: u32, stride: u32) -> Vec<HaarFeature> {
    enumerate_templates(&HaarTemplate::ALL, win_w, win_h, min_size, stride)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub num_stages: usize,
    /// Minimum per-stage detection rate on training positives.
    pub min_detection: f64,
    /// Maximum per-stage false-positive rate.
    pub max_false_positive: f64,
    pub max_weak_per_stage: usize,
    /// Fraction of the enumerated features sampled afresh for every stage.
    pub feature_fraction: f64,
    pub min_feature_size: u32,
    pub feature_stride: u32,
    pub max_negatives_per_stage: usize,
    /// Extra training rounds, each adding freshly mined false positives, when
    /// a stage misses its false-positive target on the negative pool.
    pub retrain_attempts: usize,
    /// Window stride used to cut the negative pool out of negative images.
    pub pool_stride: u32,
    pub variance_normalization: bool,
    pub window: u32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            num_stages: 15,
            min_detection: 0.995,
            max_false_positive: 0.5,
            max_weak_per_stage: 100,
            feature_fraction: 0.05,
            min_feature_size: 1,
            feature_stride: 1,
            max_negatives_per_stage: 2000,
            retrain_attempts: 2,
            pool_stride: 1,
            variance_normalization: true,
            window: 20,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.min_detection > 0.0 && self.min_detection <= 1.0) {
            return bad("min_detection must lie in (0, 1]");
        }
        if !(self.max_false_positive > 0.0 && self.max_false_positive < 1.0) {
            return bad("max_false_positive must lie in (0, 1)");
        }
        if !(self.feature_fraction > 0.0 && self.feature_fraction <= 1.0) {
            return bad("feature_fraction must lie in (0, 1]");
        }
        if self.num_stages == 0 || self.max_weak_per_stage == 0 || self.max_negatives_per_stage == 0
        {
            return bad("stage count, weak count and negative cap must be positive");
        }
        if self.window < 2 || self.pool_stride == 0 {
            return bad("window must be at least 2 and pool_stride at least 1");
        }
        Ok(())
    }
}

/// Training samples with their integral images and normalizers.
pub struct SampleSet {
    ii: Vec<IntegralImage>,
    norm: Vec<Option<f64>>,
    positive: Vec<bool>,
}

impl SampleSet {
    pub fn new(
        windows: &[(&GrayImage, Label)],
        window: u32,
        vn: bool,
    ) -> Result<SampleSet, TrainError> {
        let mut set = SampleSet {
            ii: Vec::with_capacity(windows.len()),
            norm: Vec::with_capacity(windows.len()),
            positive: Vec::with_capacity(windows.len()),
        };
        for (i, (img, label)) in windows.iter().enumerate() {
            if img.width() != window || img.height() != window {
                return Err(TrainError::WindowSize {
                    index: i,
                    w: img.width(),
                    h: img.height(),
                    win_w: window,
                    win_h: window,
                });
            }
            let ii = build_integral(img, vn).expect("window is tiny");
            let norm = vn.then(|| {
                let sd = ii
                    .std_dev(crate::integral::Rect::new(0, 0, window, window))
                    .expect("squares built");
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            });
            set.ii.push(ii);
            set.norm.push(norm);
            set.positive.push(*label == Label::Positive);
        }
        if !set.positive.iter().any(|&p| p) || set.positive.iter().all(|&p| p) {
            return Err(TrainError::MissingClass);
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.ii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ii.is_empty()
    }

    /// Normalized feature value of sample `i`: raw value over the window
    /// std-dev, or the raw value when normalization is off.
    #[inline]
    fn value(&self, f: &HaarFeature, i: usize) -> f64 {
        let v = f.value_at(&self.ii[i], 0, 0) as f64;
        match self.norm[i] {
            Some(n) => v / n,
            None => v,
        }
    }

    fn passes(&self, w: &WeakClassifier, i: usize) -> bool {
        w.passes(w.feature().value_at(&self.ii[i], 0, 0), self.norm[i])
    }
}

/// Best stump for one feature: `(error, polarity rank, threshold)` where
/// polarity rank 0 is +1 and 1 is -1.
type StumpChoice = (f64, u8, i64);

// Sorted-prefix sweep over one feature. `order` sorts `values` ascending.
// Polarity +1 predicts positive iff ceil(v) - 1 >= θ, polarity -1 iff
// floor(v) + 1 <= θ; the candidate θ set covers every distinct split.
fn sweep(
    values: &[f64],
    order: &[u32],
    positive: &[bool],
    weights: &[f64],
    tot_pos: f64,
    tot_neg: f64,
) -> StumpChoice {
    let n = order.len();
    let key_up = |v: f64| v.ceil() as i64 - 1;
    let key_dn = |v: f64| v.floor() as i64 + 1;
    let better = |a: StumpChoice, b: StumpChoice| match a.0.total_cmp(&b.0) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Greater => false,
        std::cmp::Ordering::Equal => (a.1, a.2) < (b.1, b.2),
    };

    // θ above every key: nothing predicted positive
    let last = values[order[n - 1] as usize];
    let mut best: StumpChoice = (tot_pos, 0, key_up(last) + 1);

    // polarity +1, θ = each distinct key; prefix holds samples with key < θ
    let (mut pos_below, mut neg_below) = (0.0, 0.0);
    let mut i = 0;
    while i < n {
        let k = key_up(values[order[i] as usize]);
        let cand = (pos_below + (tot_neg - neg_below), 0, k);
        if better(cand, best) {
            best = cand;
        }
        while i < n && key_up(values[order[i] as usize]) == k {
            let s = order[i] as usize;
            if positive[s] {
                pos_below += weights[s];
            } else {
                neg_below += weights[s];
            }
            i += 1;
        }
    }

    // polarity -1, θ below every key, then θ = each distinct key with the
    // prefix holding samples with key <= θ
    let first = values[order[0] as usize];
    let cand = (tot_pos, 1, key_dn(first) - 1);
    if better(cand, best) {
        best = cand;
    }
    let (mut pos_upto, mut neg_upto) = (0.0, 0.0);
    let mut i = 0;
    while i < n {
        let k = key_dn(values[order[i] as usize]);
        while i < n && key_dn(values[order[i] as usize]) == k {
            let s = order[i] as usize;
            if positive[s] {
                pos_upto += weights[s];
            } else {
                neg_upto += weights[s];
            }
            i += 1;
        }
        let cand = ((tot_pos - pos_upto) + neg_upto, 1, k);
        if better(cand, best) {
            best = cand;
        }
    }
    best
}

/// Feature values of a sample set, presorted per feature; reused across the
/// boosting rounds of one stage.
struct FeatureTable<'a> {
    features: &'a [HaarFeature],
    values: Vec<Vec<f64>>,
    orders: Vec<Vec<u32>>,
}

impl<'a> FeatureTable<'a> {
    fn new(features: &'a [HaarFeature], set: &SampleSet) -> Self {
        let (values, orders) = features
            .par_iter()
            .map(|f| {
                let vals: Vec<f64> = (0..set.len()).map(|i| set.value(f, i)).collect();
                let mut ord: Vec<u32> = (0..set.len() as u32).collect();
                ord.sort_by(|&a, &b| {
                    vals[a as usize]
                        .total_cmp(&vals[b as usize])
                        .then(a.cmp(&b))
                });
                (vals, ord)
            })
            .unzip();
        FeatureTable {
            features,
            values,
            orders,
        }
    }

    // argmin over (error, feature index, polarity, θ)
    fn best(&self, set: &SampleSet, weights: &[f64]) -> (usize, StumpChoice) {
        let (mut tp, mut tn) = (0.0, 0.0);
        for (w, &p) in weights.iter().zip(&set.positive) {
            if p {
                tp += w;
            } else {
                tn += w;
            }
        }
        (0..self.features.len())
            .into_par_iter()
            .map(|j| {
                (
                    j,
                    sweep(
                        &self.values[j],
                        &self.orders[j],
                        &set.positive,
                        weights,
                        tp,
                        tn,
                    ),
                )
            })
            .reduce_with(|a, b| {
                let ka = (a.1 .0, a.0, a.1 .1, a.1 .2);
                let kb = (b.1 .0, b.0, b.1 .1, b.1 .2);
                if ka
                    .0
                    .total_cmp(&kb.0)
                    .then((ka.1, ka.2, ka.3).cmp(&(kb.1, kb.2, kb.3)))
                    .is_le()
                {
                    a
                } else {
                    b
                }
            })
            .expect("at least one feature")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeakOutcome {
    pub classifier: WeakClassifier,
    pub feature_index: usize,
    pub error: f64,
    /// Set when no stump beats chance; the classifier then votes 0 both ways.
    pub degenerate: bool,
}

/// AdaBoost vote magnitude `α = ln(1/β)`, `β = ε/(1-ε)`, with ε clamped to
/// `[MIN_ERROR, 0.5]`.
pub fn vote_alpha(error: f64) -> f64 {
    let e = error.clamp(MIN_ERROR, 0.5);
    ((1.0 - e) / e).ln()
}

fn make_weak(features: &[HaarFeature], j: usize, choice: StumpChoice) -> WeakOutcome {
    let (error, pol_rank, theta) = choice;
    let degenerate = error >= 0.5;
    let alpha = if degenerate { 0.0 } else { vote_alpha(error) };
    let polarity = if pol_rank == 0 { 1 } else { -1 };
    WeakOutcome {
        classifier: WeakClassifier::new(features[j].clone(), theta, polarity, alpha, -alpha),
        feature_index: j,
        error,
        degenerate,
    }
}

/// Minimum-weighted-error stump over `features`. Weights are normalized to
/// sum 1 before the search.
pub fn train_weak(
    features: &[HaarFeature],
    samples: &[TrainSample],
    window: u32,
    vn: bool,
) -> Result<WeakOutcome, TrainError> {
    if features.is_empty() {
        return Err(TrainError::NoFeatures);
    }
    let windows: Vec<_> = samples.iter().map(|s| (&s.window, s.label)).collect();
    let set = SampleSet::new(&windows, window, vn)?;
    let total: f64 = samples.iter().map(|s| s.weight).sum();
    let weights: Vec<f64> = samples.iter().map(|s| s.weight / total).collect();
    let table = FeatureTable::new(features, &set);
    let (j, choice) = table.best(&set, &weights);
    Ok(make_weak(features, j, choice))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutcome {
    pub stage: Stage,
    pub detection_rate: f64,
    pub false_positive_rate: f64,
    pub target_met: bool,
}

/// Largest threshold letting at least a fraction `d` of `scores` pass
/// (`score >= threshold`).
pub fn calibrate_threshold(scores: &[f64], d: f64) -> f64 {
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let k = ((d * sorted.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    sorted[k.min(sorted.len()) - 1]
}

fn boost_stage(features: &[HaarFeature], set: &SampleSet, cfg: &TrainConfig) -> StageOutcome {
    let n = set.len();
    let n_pos = set.positive.iter().filter(|&&p| p).count();
    let n_neg = n - n_pos;
    let mut weights: Vec<f64> = set
        .positive
        .iter()
        .map(|&p| {
            if p {
                0.5 / n_pos as f64
            } else {
                0.5 / n_neg as f64
            }
        })
        .collect();
    let table = FeatureTable::new(features, set);
    let mut scores = vec![0.0f64; n];
    let mut weak = Vec::new();
    let (mut threshold, mut det, mut fp) = (f64::NEG_INFINITY, 1.0, 1.0);
    while weak.len() < cfg.max_weak_per_stage {
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        let (j, choice) = table.best(set, &weights);
        let out = make_weak(features, j, choice);
        if out.degenerate {
            break;
        }
        let beta = out.error.max(MIN_ERROR) / (1.0 - out.error.max(MIN_ERROR));
        for i in 0..n {
            let pass = set.passes(&out.classifier, i);
            scores[i] += if pass {
                out.classifier.vote_pass
            } else {
                out.classifier.vote_fail
            };
            if pass == set.positive[i] {
                weights[i] *= beta;
            }
        }
        weak.push(out.classifier);

        let pos_scores: Vec<f64> = (0..n)
            .filter(|&i| set.positive[i])
            .map(|i| scores[i])
            .collect();
        threshold = calibrate_threshold(&pos_scores, cfg.min_detection);
        det = pos_scores.iter().filter(|&&s| s >= threshold).count() as f64 / n_pos as f64;
        fp = (0..n)
            .filter(|&i| !set.positive[i] && scores[i] >= threshold)
            .count() as f64
            / n_neg as f64;
        if fp <= cfg.max_false_positive {
            break;
        }
    }
    if weak.is_empty() {
        // no stump beats chance: a vacuous stage that passes everything
        let out = make_weak(features, 0, (0.5, 0, 0));
        weak.push(out.classifier);
        threshold = f64::NEG_INFINITY;
    }
    StageOutcome {
        stage: Stage { threshold, weak },
        detection_rate: det,
        false_positive_rate: fp,
        target_met: fp <= cfg.max_false_positive,
    }
}

/// Boosts one stage until its training false-positive rate reaches
/// `cfg.max_false_positive` or `cfg.max_weak_per_stage` stumps are used.
pub fn train_stage(
    features: &[HaarFeature],
    samples: &[TrainSample],
    cfg: &TrainConfig,
) -> Result<StageOutcome, TrainError> {
    cfg.validate()?;
    if features.is_empty() {
        return Err(TrainError::NoFeatures);
    }
    let windows: Vec<_> = samples.iter().map(|s| (&s.window, s.label)).collect();
    let set = SampleSet::new(&windows, cfg.window, cfg.variance_normalization)?;
    Ok(boost_stage(features, &set, cfg))
}

/// Deterministic, indexable supply of negative images. Large pools are
/// regenerated or reloaded on demand instead of being held in memory.
pub trait NegativeSource: Sync {
    fn count(&self) -> usize;
    fn image(&self, index: usize) -> GrayImage;

    fn dims(&self, index: usize) -> (u32, u32) {
        let img = self.image(index);
        (img.width(), img.height())
    }
}

impl NegativeSource for [GrayImage] {
    fn count(&self) -> usize {
        self.len()
    }

    fn image(&self, index: usize) -> GrayImage {
        self[index].clone()
    }

    fn dims(&self, index: usize) -> (u32, u32) {
        (self[index].width(), self[index].height())
    }
}

impl NegativeSource for Vec<GrayImage> {
    fn count(&self) -> usize {
        self.len()
    }

    fn image(&self, index: usize) -> GrayImage {
        self[index].clone()
    }

    fn dims(&self, index: usize) -> (u32, u32) {
        (self[index].width(), self[index].height())
    }
}

/// Survivor sets at or below this size keep their window pixels, so later
/// stages no longer revisit the source images.
pub const CROP_CACHE_WINDOWS: usize = 400_000;

/// Every `stride`-aligned window at every pyramid level of every source
/// image, addressed by a dense id.
pub struct NegativePool<'a, S: NegativeSource + ?Sized> {
    source: &'a S,
    pyramid: PyramidConfig,
    // per image: window id range start; per image level: (start id, nx)
    image_first: Vec<usize>,
    levels: Vec<Vec<(usize, u32)>>,
    total: usize,
    stride: u32,
    window: u32,
    vn: bool,
}

/// Subset of a pool, optionally with cached window pixels.
#[derive(Debug, Clone)]
pub struct PoolSubset {
    pub ids: Vec<u32>,
    pub crops: Option<Vec<GrayImage>>,
}

impl<'a, S: NegativeSource + ?Sized> NegativePool<'a, S> {
    pub fn new(source: &'a S, pyramid: &PyramidConfig, window: u32, stride: u32, vn: bool) -> Self {
        let dims: Vec<Vec<(u32, u32)>> = (0..source.count())
            .into_par_iter()
            .map(|i| {
                let (w, h) = source.dims(i);
                (0..pyramid.num_levels)
                    .map(|s| pyramid.level_dims(w, h, s))
                    .take_while(|&(w, h)| w >= window && h >= window)
                    .collect()
            })
            .collect();
        let mut pool = NegativePool {
            source,
            pyramid: *pyramid,
            image_first: Vec::with_capacity(dims.len()),
            levels: Vec::with_capacity(dims.len()),
            total: 0,
            stride,
            window,
            vn,
        };
        for img_levels in dims {
            pool.image_first.push(pool.total);
            let mut lv = Vec::new();
            for (w, h) in img_levels {
                let nx = (w - window) / stride + 1;
                let ny = (h - window) / stride + 1;
                lv.push((pool.total, nx));
                pool.total += (nx * ny) as usize;
            }
            pool.levels.push(lv);
        }
        pool
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    fn image_end(&self, i: usize) -> usize {
        self.image_first.get(i + 1).copied().unwrap_or(self.total)
    }

    // Visits, image by image in parallel, every id of `ids` (all when None)
    // with the level integral image and window origin.
    fn scan<T, F>(&self, ids: Option<&[u32]>, visit: F) -> Vec<T>
    where
        T: Send,
        F: Fn(&GrayImage, &IntegralImage, u32, u32, u32) -> Option<T> + Sync,
    {
        let per_image: Vec<Vec<T>> = (0..self.image_first.len())
            .into_par_iter()
            .map(|i| {
                let (lo, hi) = (self.image_first[i], self.image_end(i));
                let span: Option<&[u32]> = ids.map(|ids| {
                    let a = ids.partition_point(|&d| (d as usize) < lo);
                    let b = ids.partition_point(|&d| (d as usize) < hi);
                    &ids[a..b]
                });
                if lo == hi || span.is_some_and(|s| s.is_empty()) {
                    return Vec::new();
                }
                let img = self.source.image(i);
                let pyr = build_pyramid(&img, &self.pyramid, self.window, self.window)
                    .expect("dims checked at construction");
                let mut out = Vec::new();
                for (l, &(first, nx)) in self.levels[i].iter().enumerate() {
                    let end = self.levels[i].get(l + 1).map_or(hi, |n| n.0);
                    let level_ids: Vec<u32> = match span {
                        None => (first as u32..end as u32).collect(),
                        Some(s) => {
                            let a = s.partition_point(|&d| (d as usize) < first);
                            let b = s.partition_point(|&d| (d as usize) < end);
                            s[a..b].to_vec()
                        }
                    };
                    if level_ids.is_empty() {
                        continue;
                    }
                    let ii = build_integral(&pyr[l], self.vn).expect("pyramid levels are small");
                    for id in level_ids {
                        let local = id - first as u32;
                        let (x, y) = ((local % nx) * self.stride, (local / nx) * self.stride);
                        if let Some(t) = visit(&pyr[l], &ii, x, y, id) {
                            out.push(t);
                        }
                    }
                }
                out
            })
            .collect();
        per_image.into_iter().flatten().collect()
    }

    /// Members of `subset` (the whole pool when `None`) whose window satisfies
    /// `keep(ii, x, y)`. Pixels are cached when the input is small enough.
    pub fn filter<F>(&self, subset: Option<&PoolSubset>, keep: F) -> PoolSubset
    where
        F: Fn(&IntegralImage, u32, u32) -> bool + Sync,
    {
        if let Some(PoolSubset {
            ids,
            crops: Some(crops),
        }) = subset
        {
            let kept: Vec<(u32, GrayImage)> = ids
                .par_iter()
                .zip(crops.par_iter())
                .filter(|(_, c)| keep(&build_integral(c, self.vn).expect("window is tiny"), 0, 0))
                .map(|(&id, c)| (id, c.clone()))
                .collect();
            let (ids, crops) = kept.into_iter().unzip();
            return PoolSubset {
                ids,
                crops: Some(crops),
            };
        }
        let input = subset.map_or(self.total, |s| s.ids.len());
        let ids = subset.map(|s| s.ids.as_slice());
        if input <= CROP_CACHE_WINDOWS {
            let w = self.window;
            let kept: Vec<(u32, GrayImage)> = self.scan(ids, |lvl, ii, x, y, id| {
                keep(ii, x, y).then(|| (id, lvl.crop(x, y, w, w).expect("in bounds")))
            });
            let (ids, crops) = kept.into_iter().unzip();
            PoolSubset {
                ids,
                crops: Some(crops),
            }
        } else {
            PoolSubset {
                ids: self.scan(ids, |_, ii, x, y, id| keep(ii, x, y).then_some(id)),
                crops: None,
            }
        }
    }

    /// Window pixels for ascending `ids`.
    pub fn windows(&self, ids: &[u32]) -> Vec<GrayImage> {
        let w = self.window;
        self.scan(Some(ids), |lvl, _, x, y, _| {
            Some(lvl.crop(x, y, w, w).expect("in bounds"))
        })
    }

    /// Fraction of pool windows accepted by `c`.
    pub fn false_positive_rate(&self, c: &Cascade) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let hits = self
            .scan(None, |_, ii, x, y, _| {
                c.evaluate(ii, x, y).is_accept().then_some(())
            })
            .len();
        hits as f64 / self.total as f64
    }
}

fn stage_passes(c: &Cascade, stage: &Stage, ii: &IntegralImage, x: u32, y: u32) -> bool {
    let norm = c.window_norm(ii, x, y);
    let score: f64 = stage
        .weak
        .iter()
        .map(|w| w.vote(w.feature().value_at(ii, x, y), norm))
        .sum();
    score >= stage.threshold
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageLog {
    pub stage: usize,
    pub weak_count: usize,
    pub positives: usize,
    pub negatives: usize,
    pub detection_rate: f64,
    pub false_positive_rate: f64,
    /// Fraction of the whole negative pool still accepted after this stage.
    pub pool_false_positive_rate: f64,
    pub attempts: usize,
    pub target_met: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Completed,
    PoolExhausted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub cascade: Cascade,
    pub log: Vec<StageLog>,
    pub stop: StopReason,
}

// Window pixels of the subset members at ascending positions `picks`.
fn mine<S: NegativeSource + ?Sized>(
    pool: &NegativePool<'_, S>,
    subset: Option<&PoolSubset>,
    picks: &[usize],
) -> Vec<GrayImage> {
    match subset {
        Some(PoolSubset { crops: Some(c), .. }) => picks.iter().map(|&i| c[i].clone()).collect(),
        Some(s) => pool.windows(&picks.iter().map(|&i| s.ids[i]).collect::<Vec<_>>()),
        None => pool.windows(&picks.iter().map(|&i| i as u32).collect::<Vec<_>>()),
    }
}

fn labeled(windows: &[GrayImage], label: Label) -> impl Iterator<Item = (&GrayImage, Label)> {
    windows.iter().map(move |w| (w, label))
}

/// Attentional cascade training: each stage sees the positives that pass
/// every earlier stage and negatives mined from the pool windows that still
/// fool the cascade.
pub fn train_cascade<S: NegativeSource + ?Sized>(
    pos: &[GrayImage],
    negatives: &S,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if pos.len() < 10 {
        return Err(TrainError::TooFewPositives {
            need: 10,
            got: pos.len(),
        });
    }
    if let Some((i, p)) = pos
        .iter()
        .enumerate()
        .find(|(_, p)| p.width() != cfg.window || p.height() != cfg.window)
    {
        return Err(TrainError::WindowSize {
            index: i,
            w: p.width(),
            h: p.height(),
            win_w: cfg.window,
            win_h: cfg.window,
        });
    }
    let vn = cfg.variance_normalization;
    let all_features = enumerate_features(
        cfg.window,
        cfg.window,
        cfg.min_feature_size,
        cfg.feature_stride,
    );
    if all_features.is_empty() {
        return Err(TrainError::NoFeatures);
    }
    let pool = NegativePool::new(
        negatives,
        &PyramidConfig::default(),
        cfg.window,
        cfg.pool_stride,
        vn,
    );
    if pool.is_empty() {
        return Err(TrainError::MissingClass);
    }
    if pool.len() > u32::MAX as usize {
        return Err(TrainError::Config(format!(
            "negative pool of {} windows is too large",
            pool.len()
        )));
    }
    let pool_total = pool.len() as f64;
    // `None` stands for the whole pool
    let mut survivors: Option<PoolSubset> = None;
    let mut live_pos: Vec<&GrayImage> = pos.iter().collect();
    let mut cascade = Cascade::new(cfg.window, cfg.window, vn, Vec::new());
    let mut log = Vec::new();
    let mut stop = StopReason::Completed;

    for k in 0..cfg.num_stages {
        let live = survivors.as_ref().map_or(pool.len(), |s| s.ids.len());
        if live == 0 {
            stop = StopReason::PoolExhausted;
            break;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(
            cfg.seed ^ (k as u64 + 1).wrapping_mul(0xA076_1D64_78BD_642F),
        );
        let take = cfg.max_negatives_per_stage.min(live);
        let mut picks: Vec<usize> = sample(&mut rng, live, take).into_vec();
        picks.sort_unstable();
        let mut neg_windows = mine(&pool, survivors.as_ref(), &picks);
        let mut neg_ids: Vec<u32> = picks
            .iter()
            .map(|&i| survivors.as_ref().map_or(i as u32, |s| s.ids[i]))
            .collect();
        let n_feat = ((cfg.feature_fraction * all_features.len() as f64).ceil() as usize)
            .clamp(1, all_features.len());

        let mut attempt = 0;
        let (outcome, next) = loop {
            let mut picks = sample(&mut rng, all_features.len(), n_feat).into_vec();
            picks.sort_unstable();
            let features: Vec<HaarFeature> =
                picks.iter().map(|&i| all_features[i].clone()).collect();
            let samples: Vec<_> = live_pos
                .iter()
                .map(|&p| (p, Label::Positive))
                .chain(labeled(&neg_windows, Label::Negative))
                .collect();
            let set = SampleSet::new(&samples, cfg.window, vn)?;
            let outcome = boost_stage(&features, &set, cfg);
            let next = pool.filter(survivors.as_ref(), |ii, x, y| {
                stage_passes(&cascade, &outcome.stage, ii, x, y)
            });
            let stage_fp = next.ids.len() as f64 / live as f64;
            if stage_fp <= cfg.max_false_positive || attempt >= cfg.retrain_attempts {
                break (outcome, next);
            }
            attempt += 1;
            // add fresh false positives the stage still lets through
            let known: std::collections::HashSet<u32> = neg_ids.iter().copied().collect();
            let mut fresh: Vec<usize> = (0..next.ids.len())
                .filter(|&i| !known.contains(&next.ids[i]))
                .collect();
            fresh.shuffle(&mut rng);
            fresh.truncate(cfg.max_negatives_per_stage);
            fresh.sort_unstable();
            neg_windows.extend(mine(&pool, Some(&next), &fresh));
            neg_ids.extend(fresh.iter().map(|&i| next.ids[i]));
        };

        let stage_fp = next.ids.len() as f64 / live as f64;
        let stage = outcome.stage.clone();
        let before_pos = live_pos.len();
        live_pos.retain(|p| {
            stage_passes(
                &cascade,
                &stage,
                &build_integral(p, vn).expect("window is tiny"),
                0,
                0,
            )
        });
        cascade.stages.push(stage);
        let survivors_left = next.ids.len();
        survivors = Some(next);
        log.push(StageLog {
            stage: k,
            weak_count: outcome.stage.weak.len(),
            positives: before_pos,
            negatives: neg_ids.len(),
            detection_rate: live_pos.len() as f64 / before_pos as f64,
            false_positive_rate: stage_fp,
            pool_false_positive_rate: survivors_left as f64 / pool_total,
            attempts: attempt + 1,
            target_met: stage_fp <= cfg.max_false_positive,
        });
        if live_pos.len() < 2 {
            break;
        }
    }
    Ok(TrainOutcome { cascade, log, stop })
}
