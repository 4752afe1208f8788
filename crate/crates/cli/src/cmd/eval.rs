use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;
use trapnode_core::detector::Detection;
use trapnode_core::evaluator::{match_detections, EvalReport};
use trapnode_core::integral::Rect;

use crate::error::{read_text, CliError, CliResult};
use crate::manifest::{emit, emit_summary, num, RunManifest, Table};

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Prediction CSV: image_id,x,y,w,h[,level[,score]].
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth CSV: image_id,x,y,w,h.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    pub iou: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

/// One parsed box row.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxRow {
    pub image_id: String,
    pub rect: Rect,
    pub score: f64,
}

/// Parses `image_id,x,y,w,h[,level[,score]]` rows. `#` lines and a leading
/// header row are skipped. A missing score reads as 0.
pub fn parse_boxes(text: &str, origin: &Path) -> CliResult<Vec<BoxRow>> {
    let mut rows = Vec::new();
    let mut seen_data = false;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = |what: &str| CliError::input(format!("{}:{}: {what}", origin.display(), i + 1));
        if !seen_data && cells.get(1).is_some_and(|c| c.parse::<u32>().is_err()) {
            seen_data = true;
            continue;
        }
        seen_data = true;
        if cells.len() < 5 {
            return Err(bad("expected image_id,x,y,w,h"));
        }
        let int = |k: usize| {
            cells[k]
                .parse::<u32>()
                .map_err(|_| bad(&format!("bad integer {:?}", cells[k])))
        };
        let rect = Rect::new(int(1)?, int(2)?, int(3)?, int(4)?);
        if rect.w == 0 || rect.h == 0 {
            return Err(bad("box must be at least 1x1"));
        }
        let score = match cells.get(6) {
            Some(c) => c
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(&format!("bad score {c:?}")))?,
            None => 0.0,
        };
        rows.push(BoxRow {
            image_id: cells[0].to_string(),
            rect,
            score,
        });
    }
    Ok(rows)
}

#[derive(Serialize)]
struct Summary {
    iou_threshold: f64,
    images: usize,
    total: EvalReport,
}

pub fn run(a: &EvalArgs) -> CliResult<()> {
    if !(a.iou > 0.0 && a.iou <= 1.0) {
        return Err(CliError::input(format!(
            "--iou must lie in (0, 1], got {}",
            a.iou
        )));
    }
    let mut m = RunManifest::new("eval");
    m.param("iou", a.iou);
    let pred_text = read_text(&a.pred)?;
    let gt_text = read_text(&a.gt)?;
    m.input(a.pred.display().to_string(), pred_text.as_bytes());
    m.input(a.gt.display().to_string(), gt_text.as_bytes());

    let mut per_image: BTreeMap<String, (Vec<Detection>, Vec<Rect>)> = BTreeMap::new();
    for r in parse_boxes(&pred_text, &a.pred)? {
        per_image.entry(r.image_id).or_default().0.push(Detection {
            bbox: r.rect,
            level: 0,
            score: r.score,
        });
    }
    for r in parse_boxes(&gt_text, &a.gt)? {
        per_image.entry(r.image_id).or_default().1.push(r.rect);
    }

    let mut table = Table::new(&[
        "image_id",
        "matched",
        "total_gt",
        "total_pred",
        "detection_rate",
        "false_positives",
    ]);
    let mut total = EvalReport::default();
    for (id, (preds, gts)) in &per_image {
        let rep = match_detections(preds, gts, a.iou);
        table.row(vec![
            id.clone(),
            rep.matched.to_string(),
            rep.total_gt.to_string(),
            rep.total_pred.to_string(),
            num(rep.detection_rate, 6),
            rep.false_positives.to_string(),
        ]);
        total = total.merge(&rep);
    }
    table.row(vec![
        "ALL".into(),
        total.matched.to_string(),
        total.total_gt.to_string(),
        total.total_pred.to_string(),
        num(total.detection_rate, 6),
        total.false_positives.to_string(),
    ]);
    emit(a.out.as_deref(), &table.render(&m))?;
    emit_summary(
        a.summary.as_ref(),
        &m,
        &Summary {
            iou_threshold: a.iou,
            images: per_image.len(),
            total,
        },
    )
}
