use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::Serialize;
use trapnode_hwmodel::cnngraph::{count_params_total, graph_to_json, parse_graph, LayerGraph};
use trapnode_hwmodel::platform::{
    builtin_platform_text, parse_platform, EngineKind, PlatformModel,
};
use trapnode_hwmodel::sched::{compare_budgets, schedule_and_estimate, BudgetConfig, SchedError};

use crate::error::{read_text, CliError, CliResult};
use crate::manifest::{emit, emit_summary, num, RunManifest, Table};

/// Colon-separated directories searched for `<name>.toml` before the
/// built-in platform files.
pub const PLATFORM_PATH_ENV: &str = "TRAPNODE_PLATFORM_PATH";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EngineArg {
    Accelerator,
    WorkerCores,
}

impl EngineArg {
    fn kind(self) -> EngineKind {
        match self {
            EngineArg::Accelerator => EngineKind::ConvAccelerator,
            EngineArg::WorkerCores => EngineKind::WorkerCores,
        }
    }
}

#[derive(Debug, Args)]
pub struct CnnArgs {
    /// Layer graph JSON; the shipped MobileNetV3-SSDLite graph when omitted.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Platform name (searched on TRAPNODE_PLATFORM_PATH, then built in) or
    /// a path to a platform TOML file.
    #[arg(long, default_value = "gap9")]
    pub platform: String,
    #[arg(long, default_value_t = 115_600)]
    pub l1: u64,
    #[arg(long, default_value_t = 1_200_000)]
    pub l2: u64,
    #[arg(long, value_enum, default_value_t = EngineArg::Accelerator)]
    pub engine: EngineArg,
    /// Overlap DMA with compute even when the platform file does not.
    #[arg(long)]
    pub dma_overlap: bool,
    /// Also schedule at a small budget and report the speed-up.
    #[arg(long)]
    pub compare_budgets: bool,
    #[arg(long, default_value_t = 46_700)]
    pub small_l1: u64,
    #[arg(long, default_value_t = 267_000)]
    pub small_l2: u64,
    /// Per-layer CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

/// Platform text and the name it was found under.
pub fn resolve_platform(spec: &str) -> CliResult<(String, String)> {
    let direct = Path::new(spec);
    if direct.is_file() {
        return Ok((direct.display().to_string(), read_text(direct)?));
    }
    if let Some(paths) = std::env::var_os(PLATFORM_PATH_ENV) {
        for dir in std::env::split_paths(&paths) {
            let candidate = dir.join(format!("{spec}.toml"));
            if candidate.is_file() {
                return Ok((candidate.display().to_string(), read_text(&candidate)?));
            }
        }
    }
    builtin_platform_text(spec)
        .map(|t| (format!("builtin:{spec}"), t.to_string()))
        .map_err(|e| {
            CliError::input(format!(
                "{e}; not a file, not on {PLATFORM_PATH_ENV}, not built in"
            ))
        })
}

fn sched_error(e: SchedError) -> CliError {
    match e {
        SchedError::L1Overflow { .. }
        | SchedError::ExtOverflow { .. }
        | SchedError::Unsupported { .. } => CliError::constraint(e),
        other => CliError::input(other),
    }
}

#[derive(Serialize)]
struct BudgetSummary {
    l1_bytes: u64,
    l2_bytes: u64,
    total_cycles: f64,
    wall_time_ms: f64,
    l2_resident_share: f64,
    speedup: f64,
}

#[derive(Serialize)]
struct Summary {
    platform: String,
    engine: &'static str,
    layers: usize,
    macs: u64,
    params: u64,
    total_cycles: f64,
    compute_cycles: f64,
    transfer_cycles: f64,
    wall_time_ms: f64,
    mac_per_cycle: f64,
    l2_resident_share: f64,
    cycles_l2_resident: f64,
    cycles_ext_1d: f64,
    cycles_ext_2d: f64,
    l2_peak_bytes: u64,
    ext_peak_bytes: u64,
    admission: String,
    comparison: Option<Vec<BudgetSummary>>,
    monotone: Option<bool>,
}

pub fn run(a: &CnnArgs) -> CliResult<()> {
    let mut m = RunManifest::new("cnn");
    let g: LayerGraph = match &a.graph {
        Some(p) => {
            let text = read_text(p)?;
            m.input(p.display().to_string(), text.as_bytes());
            parse_graph(&text).map_err(|e| CliError::input(format!("{}: {e}", p.display())))?
        }
        None => {
            let g = trapnode_hwmodel::cnngraph::builtin_graph();
            m.input(
                "builtin:mbnv3_ssdlite_320x240",
                graph_to_json(&g).as_bytes(),
            );
            g
        }
    };
    let (pname, ptext) = resolve_platform(&a.platform)?;
    let platform: PlatformModel =
        parse_platform(&ptext).map_err(|e| CliError::input(format!("{pname}: {e}")))?;
    m.input(pname.clone(), ptext.as_bytes());

    let budget = BudgetConfig {
        l1_bytes: a.l1,
        l2_bytes: a.l2,
        engine: a.engine.kind(),
        dma_overlap: a.dma_overlap || platform.dma_overlap,
    };
    m.param("l1", a.l1)
        .param("l2", a.l2)
        .param("engine", a.engine.kind().name())
        .param("dma_overlap", budget.dma_overlap);
    let (schedule, report) = schedule_and_estimate(&g, &platform, &budget).map_err(sched_error)?;

    let mut table = Table::new(&[
        "layer",
        "op",
        "engine",
        "class",
        "weight_home",
        "output_home",
        "tile_channels",
        "tile_rows",
        "passes",
        "macs",
        "compute_cycles",
        "transfer_cycles",
        "total_cycles",
    ]);
    for (s, l) in schedule.layers.iter().zip(&report.layers) {
        table.row(vec![
            s.name.clone(),
            s.op.name().to_string(),
            s.engine.map_or("none", |e| e.name()).to_string(),
            l.class.name().to_string(),
            s.weight_home.map_or("none", |h| h.tier()).to_string(),
            s.output_home.tier().to_string(),
            s.tile.channels.to_string(),
            s.tile.rows.to_string(),
            s.tile.passes().to_string(),
            l.macs.to_string(),
            num(l.compute_cycles, 1),
            num(l.transfer_cycles, 1),
            num(l.total_cycles, 1),
        ]);
    }

    let (comparison, monotone) = if a.compare_budgets {
        m.param("small_l1", a.small_l1)
            .param("small_l2", a.small_l2);
        let small = BudgetConfig {
            l1_bytes: a.small_l1,
            l2_bytes: a.small_l2,
            ..budget
        };
        let cmp = compare_budgets(&g, &platform, &[small, budget]).map_err(sched_error)?;
        let points = cmp
            .points
            .iter()
            .map(|p| BudgetSummary {
                l1_bytes: p.budget.l1_bytes,
                l2_bytes: p.budget.l2_bytes,
                total_cycles: p.report.total_cycles,
                wall_time_ms: p.report.wall_time_s * 1e3,
                l2_resident_share: p.report.l2_share(),
                speedup: p.speedup,
            })
            .collect();
        (Some(points), Some(cmp.monotone))
    } else {
        (None, None)
    };

    emit(a.out.as_deref(), &table.render(&m))?;
    let c = report.cycles_by_class;
    emit_summary(
        a.summary.as_ref(),
        &m,
        &Summary {
            platform: platform.name.clone(),
            engine: a.engine.kind().name(),
            layers: g.layers.len(),
            macs: report.macs,
            params: count_params_total(&g),
            total_cycles: report.total_cycles,
            compute_cycles: report.compute_cycles,
            transfer_cycles: report.transfer_cycles,
            wall_time_ms: report.wall_time_s * 1e3,
            mac_per_cycle: report.mac_per_cycle,
            l2_resident_share: report.l2_share(),
            cycles_l2_resident: c.l2_resident,
            cycles_ext_1d: c.ext_1d,
            cycles_ext_2d: c.ext_2d,
            l2_peak_bytes: schedule.l2_peak,
            ext_peak_bytes: schedule.ext_peak,
            admission: format!("{:?}", schedule.admission).to_lowercase(),
            comparison,
            monotone,
        },
    )
}
