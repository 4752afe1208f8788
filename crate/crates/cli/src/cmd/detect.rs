use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::Serialize;
use trapnode_core::cascade::{load_cascade, Cascade};
use trapnode_core::detector::{
    detect, Accounting, DetectConfig, DetectError, PyramidConfig, ScratchBudget,
};

use super::{image_id, load_image};
use crate::error::{read_text, CliError, CliResult};
use crate::manifest::{emit, emit_summary, num, RunManifest, Table};

pub const BUILTIN_CASCADE: &str = include_str!("../../../../data/cascades/moth_20x20.json");

#[allow(clippy::enum_variant_names)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AccountingArg {
    IiOnly,
    IiPlusInput,
    IiPlusInputPlusSquares,
}

impl AccountingArg {
    fn mode(self) -> Accounting {
        match self {
            AccountingArg::IiOnly => Accounting::IiOnly,
            AccountingArg::IiPlusInput => Accounting::IiPlusInput,
            AccountingArg::IiPlusInputPlusSquares => Accounting::IiPlusInputPlusSquares,
        }
    }
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Binary PGM images to scan.
    #[arg(long = "image", required = true)]
    pub images: Vec<PathBuf>,
    /// Cascade file; the shipped moth cascade when omitted.
    #[arg(long)]
    pub cascade: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub scales: usize,
    #[arg(long, default_value_t = 1.1)]
    pub factor: f64,
    /// Detections with a side above this many pixels are discarded.
    #[arg(long, default_value_t = 30)]
    pub max_side: u32,
    #[arg(long, default_value_t = 20)]
    pub overlap: u32,
    /// Scratch budget in bytes for one tile.
    #[arg(long, default_value_t = 99_600)]
    pub budget: usize,
    #[arg(long, value_enum, default_value_t = AccountingArg::IiOnly)]
    pub accounting: AccountingArg,
    #[arg(long, default_value_t = 8)]
    pub workers: usize,
    #[arg(long, default_value_t = 1)]
    pub step: u32,
    /// Fold overlapping detections above this IoU into the strongest one.
    #[arg(long)]
    pub group_iou: Option<f64>,
    /// Detection CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON summary.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Serialize)]
struct ImageSummary {
    image_id: String,
    width: u32,
    height: u32,
    detections: usize,
}

#[derive(Serialize)]
struct Summary {
    images: Vec<ImageSummary>,
    total_detections: usize,
    cascade_stages: usize,
    cascade_weak: usize,
}

fn detect_error(e: DetectError) -> CliError {
    match e {
        DetectError::ImageTooSmall { .. } | DetectError::BudgetTooSmall { .. } => {
            CliError::constraint(e)
        }
        DetectError::Config(_) => CliError::input(e),
        other => CliError::input(other),
    }
}

pub fn run(a: &DetectArgs) -> CliResult<()> {
    let mut m = RunManifest::new("detect");
    let (cascade, cascade_name, cascade_text): (Cascade, String, String) = match &a.cascade {
        Some(p) => {
            let text = read_text(p)?;
            let c = load_cascade(&text)
                .map_err(|e| CliError::input(format!("{}: {e}", p.display())))?;
            (c, p.display().to_string(), text)
        }
        None => (
            load_cascade(BUILTIN_CASCADE).map_err(CliError::input)?,
            "builtin:moth_20x20".to_string(),
            BUILTIN_CASCADE.to_string(),
        ),
    };
    m.input(cascade_name, cascade_text.as_bytes());
    if a.group_iou.is_some_and(|t| !(0.0..=1.0).contains(&t)) {
        return Err(CliError::input("--group-iou must lie in [0, 1]"));
    }
    let cfg = DetectConfig {
        pyramid: PyramidConfig {
            scale_factor: a.factor,
            num_levels: a.scales,
            max_detection_px: a.max_side,
        },
        budget: ScratchBudget {
            bytes: a.budget,
            mode: a.accounting.mode(),
        },
        overlap: a.overlap,
        step: a.step,
        workers: a.workers,
        group_iou: a.group_iou,
    };
    cfg.pyramid.validate().map_err(CliError::input)?;
    m.param("scales", a.scales)
        .param("factor", a.factor)
        .param("max_side", a.max_side)
        .param("overlap", a.overlap)
        .param("budget", a.budget)
        .param("accounting", format!("{:?}", a.accounting.mode()))
        .param("step", a.step)
        // worker count is left out: output does not depend on it
        .param(
            "group_iou",
            a.group_iou.map_or("none".to_string(), |t| t.to_string()),
        );

    let mut table = Table::new(&["image_id", "x", "y", "w", "h", "level", "score"]);
    let mut images = Vec::new();
    for path in &a.images {
        let (img, bytes) = load_image(path)?;
        m.input(path.display().to_string(), &bytes);
        let id = image_id(path);
        let dets = detect(&img, &cascade, &cfg).map_err(|e| match detect_error(e) {
            CliError::Input(s) => CliError::Input(format!("{}: {s}", path.display())),
            CliError::Constraint(s) => CliError::Constraint(format!("{}: {s}", path.display())),
        })?;
        for d in &dets {
            let b = d.bbox;
            table.row(vec![
                id.clone(),
                b.x.to_string(),
                b.y.to_string(),
                b.w.to_string(),
                b.h.to_string(),
                d.level.to_string(),
                num(d.score, 6),
            ]);
        }
        images.push(ImageSummary {
            image_id: id,
            width: img.width(),
            height: img.height(),
            detections: dets.len(),
        });
    }
    emit(a.out.as_deref(), &table.render(&m))?;
    let summary = Summary {
        total_detections: images.iter().map(|i| i.detections).sum(),
        images,
        cascade_stages: cascade.stages.len(),
        cascade_weak: cascade.num_weak(),
    };
    emit_summary(a.summary.as_ref(), &m, &summary)
}
