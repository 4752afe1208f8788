//! Haar-feature attentional cascade: model types, window evaluation and the
//! versioned JSON cascade file.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::integral::{IntegralImage, Rect};

pub const CASCADE_FILE_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum CascadeError {
    #[error("window at ({x},{y}) does not fit the {width}x{height} raster")]
    WindowOutOfBounds {
        x: u32,
        y: u32,
        width: u32,
        height: u32,
    },
    #[error("scaled feature rect {0:?} leaves the raster")]
    ScaledRectOutOfBounds(Rect),
    #[error("variance normalization needs an integral image with a squared plane")]
    MissingSquares,
}

#[derive(Debug, Error, PartialEq)]
pub enum CascadeFileError {
    #[error("cascade file syntax error: {0}")]
    Syntax(String),
    #[error("cascade file is missing a field: {0}")]
    MissingField(String),
    #[error("unsupported cascade file version {0}")]
    UnsupportedVersion(u32),
    #[error("cascade has no stages")]
    NoStages,
    #[error("stage {stage} has no weak classifiers")]
    EmptyStage { stage: usize },
    #[error("stage {stage}, weak {weak}: {reason}")]
    InvalidFeature {
        stage: usize,
        weak: usize,
        reason: FeatureError,
    },
    #[error("stage {stage}, weak {weak}: polarity must be +1 or -1, got {polarity}")]
    BadPolarity {
        stage: usize,
        weak: usize,
        polarity: i8,
    },
    #[error("window must be at least 1x1")]
    EmptyWindow,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FeatureError {
    #[error("a feature needs 2 to 4 rects, got {0}")]
    RectCount(usize),
    #[error("rect {0:?} lies outside the detection window")]
    RectOutOfWindow(Rect),
    #[error("weighted area sums to {0}, not zero")]
    NotZeroMean(i64),
}

/// One rectangle of a Haar template with its signed weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WeightedRect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
    pub weight: i32,
}

impl WeightedRect {
    pub const fn new(x: u32, y: u32, w: u32, h: u32, weight: i32) -> Self {
        WeightedRect { x, y, w, h, weight }
    }

    #[inline]
    pub fn rect(&self) -> Rect {
        Rect::new(self.x, self.y, self.w, self.h)
    }
}

/// Zero-mean weighted sum of 2 to 4 rectangles in base-window coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HaarFeature {
    rects: Vec<WeightedRect>,
}

impl HaarFeature {
    pub fn new(
        rects: Vec<WeightedRect>,
        window_w: u32,
        window_h: u32,
    ) -> Result<Self, FeatureError> {
        let f = HaarFeature { rects };
        f.validate(window_w, window_h)?;
        Ok(f)
    }

    pub fn rects(&self) -> &[WeightedRect] {
        &self.rects
    }

    pub fn validate(&self, window_w: u32, window_h: u32) -> Result<(), FeatureError> {
        if !(2..=4).contains(&self.rects.len()) {
            return Err(FeatureError::RectCount(self.rects.len()));
        }
        let mut balance = 0i64;
        for r in &self.rects {
            if !r.rect().fits(window_w, window_h) {
                return Err(FeatureError::RectOutOfWindow(r.rect()));
            }
            balance += r.weight as i64 * r.rect().area() as i64;
        }
        if balance != 0 {
            return Err(FeatureError::NotZeroMean(balance));
        }
        Ok(())
    }

    /// Raw feature value for the window whose top-left corner is `(ox, oy)`.
    #[inline]
    pub fn value_at(&self, ii: &IntegralImage, ox: u32, oy: u32) -> i64 {
        self.rects
            .iter()
            .map(|r| {
                let s = ii.rect_sum_unchecked(Rect::new(ox + r.x, oy + r.y, r.w, r.h));
                r.weight as i64 * s as i64
            })
            .sum()
    }
}

/// Σ weight·rect_sum over the feature's rects scaled by `scale` (coordinates
/// rounded to nearest) and placed at `origin`.
pub fn feature_value(
    f: &HaarFeature,
    ii: &IntegralImage,
    origin: (u32, u32),
    scale: f64,
) -> Result<i64, CascadeError> {
    let mut total = 0i64;
    for r in f.rects() {
        let sx = (r.x as f64 * scale).round() as u32;
        let sy = (r.y as f64 * scale).round() as u32;
        let sw = (r.w as f64 * scale).round() as u32;
        let sh = (r.h as f64 * scale).round() as u32;
        let rect = Rect::new(origin.0 + sx, origin.1 + sy, sw, sh);
        let s = ii
            .rect_sum(rect)
            .map_err(|_| CascadeError::ScaledRectOutOfBounds(rect))?;
        total += r.weight as i64 * s as i64;
    }
    Ok(total)
}

/// Decision stump contributing `vote_pass` or `vote_fail` to its stage score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakClassifier {
    pub rects: HaarFeature,
    pub threshold: i64,
    pub polarity: i8,
    pub vote_pass: f64,
    pub vote_fail: f64,
}

impl WeakClassifier {
    pub fn new(
        feature: HaarFeature,
        threshold: i64,
        polarity: i8,
        vote_pass: f64,
        vote_fail: f64,
    ) -> Self {
        WeakClassifier {
            rects: feature,
            threshold,
            polarity,
            vote_pass,
            vote_fail,
        }
    }

    #[inline]
    pub fn feature(&self) -> &HaarFeature {
        &self.rects
    }

    /// `polarity · (value − threshold · norm) > 0`; `norm` is `None` when
    /// variance normalization is off, which keeps the test integer-exact.
    #[inline]
    pub fn passes(&self, value: i64, norm: Option<f64>) -> bool {
        match norm {
            None => self.polarity as i64 * (value - self.threshold) > 0,
            Some(n) => self.polarity as f64 * (value as f64 - self.threshold as f64 * n) > 0.0,
        }
    }

    #[inline]
    pub fn vote(&self, value: i64, norm: Option<f64>) -> f64 {
        if self.passes(value, norm) {
            self.vote_pass
        } else {
            self.vote_fail
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    #[serde(with = "extended_f64")]
    pub threshold: f64,
    pub weak: Vec<WeakClassifier>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSize {
    pub w: u32,
    pub h: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cascade {
    pub version: u32,
    pub window: WindowSize,
    pub variance_normalization: bool,
    pub stages: Vec<Stage>,
}

/// Outcome of running the cascade on one window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Verdict {
    /// Passed every stage; `score` is the final stage's margin over its threshold.
    Accept { score: f64 },
    /// Rejected by stage `stage` (0-based).
    Reject { stage: usize },
}

impl Verdict {
    pub fn is_accept(&self) -> bool {
        matches!(self, Verdict::Accept { .. })
    }
}

impl Cascade {
    pub fn new(
        window_w: u32,
        window_h: u32,
        variance_normalization: bool,
        stages: Vec<Stage>,
    ) -> Self {
        Cascade {
            version: CASCADE_FILE_VERSION,
            window: WindowSize {
                w: window_w,
                h: window_h,
            },
            variance_normalization,
            stages,
        }
    }

    #[inline]
    pub fn window_w(&self) -> u32 {
        self.window.w
    }

    #[inline]
    pub fn window_h(&self) -> u32 {
        self.window.h
    }

    pub fn num_weak(&self) -> usize {
        self.stages.iter().map(|s| s.weak.len()).sum()
    }

    /// Parameter footprint in bytes of the packed on-device layout: 4-byte
    /// header; per stage a u16 weak count and f32 threshold; per weak an i32
    /// threshold, i8 polarity, two f32 votes and a u8 rect count; per rect
    /// four u8 coordinates and an i8 weight.
    pub fn size(&self) -> usize {
        const HEADER: usize = 4;
        const STAGE: usize = 2 + 4;
        const WEAK: usize = 4 + 1 + 8 + 1;
        const RECT: usize = 4 + 1;
        HEADER
            + self
                .stages
                .iter()
                .map(|s| {
                    STAGE
                        + s.weak
                            .iter()
                            .map(|w| WEAK + RECT * w.feature().rects().len())
                            .sum::<usize>()
                })
                .sum::<usize>()
    }

    pub fn validate(&self) -> Result<(), CascadeFileError> {
        if self.version != CASCADE_FILE_VERSION {
            return Err(CascadeFileError::UnsupportedVersion(self.version));
        }
        if self.window.w == 0 || self.window.h == 0 {
            return Err(CascadeFileError::EmptyWindow);
        }
        if self.stages.is_empty() {
            return Err(CascadeFileError::NoStages);
        }
        for (si, stage) in self.stages.iter().enumerate() {
            if stage.weak.is_empty() {
                return Err(CascadeFileError::EmptyStage { stage: si });
            }
            for (wi, weak) in stage.weak.iter().enumerate() {
                if weak.polarity != 1 && weak.polarity != -1 {
                    return Err(CascadeFileError::BadPolarity {
                        stage: si,
                        weak: wi,
                        polarity: weak.polarity,
                    });
                }
                weak.feature()
                    .validate(self.window.w, self.window.h)
                    .map_err(|reason| CascadeFileError::InvalidFeature {
                        stage: si,
                        weak: wi,
                        reason,
                    })?;
            }
        }
        Ok(())
    }

    /// Normalizer for the window at `(ox, oy)`: the window's intensity
    /// std-dev (1 for a perfectly flat window), or `None` when normalization
    /// is disabled.
    #[inline]
    pub fn window_norm(&self, ii: &IntegralImage, ox: u32, oy: u32) -> Option<f64> {
        if !self.variance_normalization {
            return None;
        }
        let sd = ii
            .std_dev(Rect::new(ox, oy, self.window.w, self.window.h))
            .expect("checked by caller");
        Some(if sd > 0.0 { sd } else { 1.0 })
    }

    /// Evaluates the window at `(ox, oy)` without bounds checks; callers
    /// guarantee the window fits and squares exist when normalization is on.
    #[inline]
    pub fn evaluate(&self, ii: &IntegralImage, ox: u32, oy: u32) -> Verdict {
        let norm = self.window_norm(ii, ox, oy);
        let mut margin = 0.0;
        for (k, stage) in self.stages.iter().enumerate() {
            let score: f64 = stage
                .weak
                .iter()
                .map(|w| w.vote(w.feature().value_at(ii, ox, oy), norm))
                .sum();
            if score < stage.threshold {
                return Verdict::Reject { stage: k };
            }
            margin = score - stage.threshold;
        }
        Verdict::Accept { score: margin }
    }

    /// Checked window evaluation.
    pub fn eval_window(
        &self,
        ii: &IntegralImage,
        origin: (u32, u32),
    ) -> Result<Verdict, CascadeError> {
        let r = Rect::new(origin.0, origin.1, self.window.w, self.window.h);
        if !r.fits(ii.width(), ii.height()) {
            return Err(CascadeError::WindowOutOfBounds {
                x: origin.0,
                y: origin.1,
                width: ii.width(),
                height: ii.height(),
            });
        }
        if self.variance_normalization && !ii.has_squares() {
            return Err(CascadeError::MissingSquares);
        }
        Ok(self.evaluate(ii, origin.0, origin.1))
    }
}

/// Serializes a cascade to its versioned JSON form.
pub fn save_cascade(c: &Cascade) -> String {
    let mut s = serde_json::to_string_pretty(c).expect("cascade serializes");
    s.push('\n');
    s
}

/// Parses and validates a cascade file.
pub fn load_cascade(text: &str) -> Result<Cascade, CascadeFileError> {
    let c: Cascade = serde_json::from_str(text).map_err(|e| {
        let msg = e.to_string();
        if msg.starts_with("missing field") {
            CascadeFileError::MissingField(msg)
        } else {
            CascadeFileError::Syntax(msg)
        }
    })?;
    c.validate()?;
    Ok(c)
}

// Stage thresholds may be ±infinity (a vacuous stage); JSON has no literal
// for that, so infinities travel as the strings "inf" / "-inf".
mod extended_f64 {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(serde::de::Error::custom(format!("bad threshold {other:?}"))),
            },
        }
    }
}
