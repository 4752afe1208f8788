//! Multi-scale sliding-window detection over scratchpad-sized tiles.
//!
//! Each pyramid level is cut into overlapping tiles whose integral image fits
//! the scratch budget. Tiles are handed by a dispatcher to a pool of workers;
//! a hit is kept only by the tile whose core region owns the window origin,
//! so the tiled scan reproduces the single-tile scan exactly whenever the
//! overlap is at least `window - 1`.

use std::cmp::Ordering;
use std::thread;

use crossbeam_channel::unbounded;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cascade::{Cascade, Verdict};
use crate::imaging::{downscale, GrayImage, ImageError};
use crate::integral::{build_integral, IntegralError, Rect};

pub const DEFAULT_BUDGET_BYTES: usize = 99_600;
pub const DEFAULT_OVERLAP: u32 = 20;
pub const DEFAULT_WORKERS: usize = 8;
/// Partial-width tiles are cut to a multiple of this many pixels so that
/// every input row starts on a 32-bit word.
pub const TILE_WIDTH_ALIGN: u32 = 4;

#[derive(Debug, Error, PartialEq)]
pub enum DetectError {
    #[error("{width}x{height} image is smaller than the {win_w}x{win_h} window")]
    ImageTooSmall {
        width: u32,
        height: u32,
        win_w: u32,
        win_h: u32,
    },
    #[error("scratch budget of {bytes} B cannot hold a {need_w}x{need_h} tile")]
    BudgetTooSmall {
        bytes: usize,
        need_w: u32,
        need_h: u32,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Integral(#[from] IntegralError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PyramidConfig {
    pub scale_factor: f64,
    pub num_levels: usize,
    pub max_detection_px: u32,
}

impl Default for PyramidConfig {
    fn default() -> Self {
        PyramidConfig {
            scale_factor: 1.1,
            num_levels: 5,
            max_detection_px: 30,
        }
    }
}

impl PyramidConfig {
    pub fn validate(&self) -> Result<(), DetectError> {
        if !(self.scale_factor.is_finite() && self.scale_factor > 1.0) {
            return Err(DetectError::Config(format!(
                "scale factor {} must exceed 1",
                self.scale_factor
            )));
        }
        if self.num_levels == 0 {
            return Err(DetectError::Config(
                "at least one pyramid level is required".into(),
            ));
        }
        Ok(())
    }

    /// Dimensions of level `s`: `floor(W / f^s) x floor(H / f^s)`.
    pub fn level_dims(&self, width: u32, height: u32, level: usize) -> (u32, u32) {
        let f = self.scale_factor.powi(level as i32);
        // nudge keeps exact quotients such as 121 / 1.1^2 from flooring to 99
        let shrink = |v: u32| (v as f64 / f + 1e-9).floor() as u32;
        (shrink(width), shrink(height))
    }

    /// Side length in original pixels of a `window`-pixel box found at `level`.
    pub fn mapped_side(&self, window: u32, level: usize) -> u32 {
        (window as f64 * self.scale_factor.powi(level as i32)).round() as u32
    }
}

/// How many bytes per tile pixel the scratch budget must hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Accounting {
    /// 32-bit integral only.
    IiOnly,
    /// Integral plus the 8-bit input tile.
    IiPlusInput,
    /// Integral, input tile and the 64-bit squared plane.
    IiPlusInputPlusSquares,
}

impl Accounting {
    pub fn bytes_per_pixel(self) -> usize {
        match self {
            Accounting::IiOnly => 4,
            Accounting::IiPlusInput => 5,
            Accounting::IiPlusInputPlusSquares => 13,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScratchBudget {
    pub bytes: usize,
    pub mode: Accounting,
}

impl Default for ScratchBudget {
    fn default() -> Self {
        ScratchBudget {
            bytes: DEFAULT_BUDGET_BYTES,
            mode: Accounting::IiOnly,
        }
    }
}

impl ScratchBudget {
    pub fn accounted_bytes(&self, w: u32, h: u32) -> usize {
        self.mode.bytes_per_pixel() * w as usize * h as usize
    }
}

/// One tile of a level raster together with the window origins it owns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileSpec {
    pub rect: Rect,
    pub core: Rect,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: Rect,
    pub level: usize,
    pub score: f64,
}

/// Window hit in the coordinates of the raster it was scanned on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalHit {
    pub x: u32,
    pub y: u32,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectConfig {
    pub pyramid: PyramidConfig,
    pub budget: ScratchBudget,
    pub overlap: u32,
    pub step: u32,
    pub workers: usize,
    /// IoU above which lower-scoring detections are folded into a stronger
    /// one; `None` keeps every owned window.
    pub group_iou: Option<f64>,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            pyramid: PyramidConfig::default(),
            budget: ScratchBudget::default(),
            overlap: DEFAULT_OVERLAP,
            step: 1,
            workers: DEFAULT_WORKERS,
            group_iou: None,
        }
    }
}

/// Downscaled copies of `img`, level 0 being `img` itself. Levels whose
/// raster would be smaller than the window are not produced.
pub fn build_pyramid(
    img: &GrayImage,
    cfg: &PyramidConfig,
    win_w: u32,
    win_h: u32,
) -> Result<Vec<GrayImage>, DetectError> {
    cfg.validate()?;
    if img.width() < win_w || img.height() < win_h {
        return Err(DetectError::ImageTooSmall {
            width: img.width(),
            height: img.height(),
            win_w,
            win_h,
        });
    }
    let mut levels = vec![img.clone()];
    for s in 1..cfg.num_levels {
        let (w, h) = cfg.level_dims(img.width(), img.height(), s);
        if w < win_w || h < win_h {
            break;
        }
        levels.push(downscale(img, w, h)?);
    }
    Ok(levels)
}

// Tile origins along one axis: stride `size - overlap` while the tile stops
// short of the edge; the last tile runs to the edge.
fn axis_origins(extent: u32, size: u32, overlap: u32) -> Vec<(u32, u32)> {
    if size >= extent {
        return vec![(0, extent)];
    }
    let stride = size - overlap;
    let mut out = Vec::new();
    let mut o = 0;
    while o + size < extent {
        out.push((o, size));
        o += stride;
    }
    out.push((o, extent - o));
    out
}

/// Plans full-height tiles (falling back to row bands when the budget cannot
/// afford a full column) whose accounted footprint fits `budget`. Tile width
/// is the widest word-aligned width that fits.
pub fn plan_tiles(
    width: u32,
    height: u32,
    budget: &ScratchBudget,
    overlap: u32,
    win_w: u32,
    win_h: u32,
) -> Result<Vec<TileSpec>, DetectError> {
    if width < win_w || height < win_h {
        return Err(DetectError::ImageTooSmall {
            width,
            height,
            win_w,
            win_h,
        });
    }
    let bpp = budget.mode.bytes_per_pixel();
    let min_w = win_w.max(overlap + 1).min(width);
    let min_h = win_h.max(overlap + 1).min(height);
    let too_small = DetectError::BudgetTooSmall {
        bytes: budget.bytes,
        need_w: min_w,
        need_h: min_h,
    };
    let tile_h = if bpp * height as usize * min_w as usize <= budget.bytes {
        height
    } else {
        let h = (budget.bytes / (bpp * min_w as usize)) as u32;
        if h < min_h {
            return Err(too_small);
        }
        h
    };
    let mut tile_w = ((budget.bytes / (bpp * tile_h as usize)) as u32).min(width);
    if tile_w < min_w {
        return Err(too_small);
    }
    let aligned = tile_w - tile_w % TILE_WIDTH_ALIGN;
    if tile_w < width && aligned >= min_w {
        tile_w = aligned;
    }
    let xs = axis_origins(width, tile_w, overlap);
    let ys = axis_origins(height, tile_h, overlap);
    let core_span = |axis: &[(u32, u32)], i: usize, extent: u32| {
        let start = axis[i].0;
        let end = axis.get(i + 1).map_or(extent, |next| next.0);
        (start, end - start)
    };
    let mut tiles = Vec::with_capacity(xs.len() * ys.len());
    for (j, &(y, h)) in ys.iter().enumerate() {
        for (i, &(x, w)) in xs.iter().enumerate() {
            let (cx, cw) = core_span(&xs, i, width);
            let (cy, ch) = core_span(&ys, j, height);
            tiles.push(TileSpec {
                rect: Rect::new(x, y, w, h),
                core: Rect::new(cx, cy, cw, ch),
            });
        }
    }
    Ok(tiles)
}

// Scans the windows of `tile` whose level-raster origins lie on the `step`
// grid and inside `owned` (level coordinates).
fn scan_owned(
    c: &Cascade,
    level: &GrayImage,
    tile: &TileSpec,
    step: u32,
) -> Result<Vec<LocalHit>, DetectError> {
    let r = tile.rect;
    let (ww, wh) = (c.window_w(), c.window_h());
    if r.w < ww || r.h < wh {
        return Ok(Vec::new());
    }
    let pixels = level.crop(r.x, r.y, r.w, r.h)?;
    let ii = build_integral(&pixels, c.variance_normalization)?;
    let first = |o: u32| o.div_ceil(step) * step;
    let x_end = (r.x + r.w - ww + 1).min(tile.core.right());
    let y_end = (r.y + r.h - wh + 1).min(tile.core.bottom());
    let mut hits = Vec::new();
    for y in (first(tile.core.y)..y_end).step_by(step as usize) {
        for x in (first(tile.core.x)..x_end).step_by(step as usize) {
            if let Verdict::Accept { score } = c.evaluate(&ii, x - r.x, y - r.y) {
                hits.push(LocalHit { x, y, score });
            }
        }
    }
    Ok(hits)
}

/// Scans every window of `tile_pixels` at stride `step`; hits are tile-local.
pub fn scan_tile(
    c: &Cascade,
    tile_pixels: &GrayImage,
    step: u32,
) -> Result<Vec<LocalHit>, DetectError> {
    if step == 0 {
        return Err(DetectError::Config("scan step must be at least 1".into()));
    }
    let whole = Rect::new(0, 0, tile_pixels.width(), tile_pixels.height());
    scan_owned(
        c,
        tile_pixels,
        &TileSpec {
            rect: whole,
            core: whole,
        },
        step,
    )
}

/// Reference scan of a whole level raster as a single tile, ignoring budgets.
pub fn scan_level_untiled(
    c: &Cascade,
    level: &GrayImage,
    step: u32,
) -> Result<Vec<LocalHit>, DetectError> {
    scan_tile(c, level, step)
}

fn map_hit(
    hit: &LocalHit,
    level: usize,
    c: &Cascade,
    cfg: &PyramidConfig,
    width: u32,
    height: u32,
) -> Detection {
    let f = cfg.scale_factor.powi(level as i32);
    let w = cfg.mapped_side(c.window_w(), level).min(width);
    let h = cfg.mapped_side(c.window_h(), level).min(height);
    let x = ((hit.x as f64 * f).round() as u32).min(width - w);
    let y = ((hit.y as f64 * f).round() as u32).min(height - h);
    Detection {
        bbox: Rect::new(x, y, w, h),
        level,
        score: hit.score,
    }
}

fn detection_order(a: &Detection, b: &Detection) -> Ordering {
    (a.level, a.bbox.y, a.bbox.x).cmp(&(b.level, b.bbox.y, b.bbox.x))
}

/// Full pipeline: pyramid, tiling, parallel scan, ownership dedup, mapping to
/// original coordinates, size filter and optional grouping. Output is sorted
/// by `(level, y, x)` and independent of `cfg.workers`.
pub fn detect(
    img: &GrayImage,
    c: &Cascade,
    cfg: &DetectConfig,
) -> Result<Vec<Detection>, DetectError> {
    if cfg.step == 0 {
        return Err(DetectError::Config("scan step must be at least 1".into()));
    }
    if cfg.workers == 0 {
        return Err(DetectError::Config(
            "at least one worker is required".into(),
        ));
    }
    let window_bytes = 4 * c.window_w() as usize * c.window_h() as usize;
    if cfg.budget.bytes <= window_bytes {
        return Err(DetectError::Config(format!(
            "scratch budget {} B must exceed {} B",
            cfg.budget.bytes, window_bytes
        )));
    }
    let levels = build_pyramid(img, &cfg.pyramid, c.window_w(), c.window_h())?;
    let mut jobs = Vec::new();
    for (s, level) in levels.iter().enumerate() {
        let tiles = plan_tiles(
            level.width(),
            level.height(),
            &cfg.budget,
            cfg.overlap,
            c.window_w(),
            c.window_h(),
        )?;
        jobs.extend(tiles.into_iter().map(|t| (s, t)));
    }

    let (job_tx, job_rx) = unbounded::<(usize, TileSpec)>();
    let (hit_tx, hit_rx) = unbounded::<Result<(usize, Vec<LocalHit>), DetectError>>();
    thread::scope(|scope| {
        for _ in 0..cfg.workers.min(jobs.len().max(1)) {
            let (job_rx, hit_tx, levels) = (job_rx.clone(), hit_tx.clone(), &levels);
            scope.spawn(move || {
                for (s, tile) in job_rx.iter() {
                    let out = scan_owned(c, &levels[s], &tile, cfg.step).map(|h| (s, h));
                    if hit_tx.send(out).is_err() {
                        break;
                    }
                }
            });
        }
        // dispatcher
        for job in jobs.drain(..) {
            job_tx.send(job).expect("workers alive");
        }
        drop(job_tx);
    });
    drop(hit_tx);

    let mut dets = Vec::new();
    for msg in hit_rx.iter() {
        let (s, hits) = msg?;
        dets.extend(
            hits.iter()
                .map(|h| map_hit(h, s, c, &cfg.pyramid, img.width(), img.height()))
                .filter(|d| d.bbox.w.max(d.bbox.h) <= cfg.pyramid.max_detection_px),
        );
    }
    dets.sort_by(detection_order);
    if let Some(thr) = cfg.group_iou {
        dets = group_detections(dets, thr);
    }
    Ok(dets)
}

/// Keeps, within every cluster of detections overlapping above `iou_thr`,
/// only the strongest; ties favour the earlier `(level, y, x)`.
pub fn group_detections(mut dets: Vec<Detection>, iou_thr: f64) -> Vec<Detection> {
    dets.sort_by(detection_order);
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score).then(a.cmp(&b)));
    let mut kept: Vec<Detection> = Vec::new();
    for i in order {
        if kept
            .iter()
            .all(|k| crate::evaluator::iou(&k.bbox, &dets[i].bbox) <= iou_thr)
        {
            kept.push(dets[i]);
        }
    }
    kept.sort_by(detection_order);
    kept
}
