//! Layer-by-layer placement and latency estimation under L1/L2 buffer budgets.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cnngraph::{count_macs, Layer, LayerGraph, OpKind};
use crate::platform::{
    ComputeEngine, EngineKind, PlatformError, PlatformModel, EXT_FLASH, EXT_RAM, L1, L2,
};

#[derive(Debug, Error)]
pub enum SchedError {
    #[error("invalid budget: {0}")]
    Budget(String),
    #[error("layer {layer}: minimal working set of {needed} B exceeds the {l1_bytes} B L1 buffer")]
    L1Overflow {
        layer: String,
        needed: u64,
        l1_bytes: u64,
    },
    #[error("external RAM peak {needed} B exceeds its {capacity} B capacity")]
    ExtOverflow { needed: u64, capacity: u64 },
    #[error("layer {layer}: no engine runs {op}")]
    Unsupported { layer: String, op: OpKind },
    #[error("schedule does not match the graph: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Platform(#[from] PlatformError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetConfig {
    pub l1_bytes: u64,
    pub l2_bytes: u64,
    pub engine: EngineKind,
    pub dma_overlap: bool,
}

impl Default for BudgetConfig {
    fn default() -> Self {
        BudgetConfig {
            l1_bytes: 115_600,
            l2_bytes: 1_200_000,
            engine: EngineKind::ConvAccelerator,
            dma_overlap: false,
        }
    }
}

impl BudgetConfig {
    pub fn new(l1_bytes: u64, l2_bytes: u64) -> Self {
        BudgetConfig {
            l1_bytes,
            l2_bytes,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), SchedError> {
        if self.l1_bytes == 0 || self.l2_bytes == 0 || self.l1_bytes >= self.l2_bytes {
            return Err(SchedError::Budget(format!(
                "need 0 < l1 ({}) < l2 ({})",
                self.l1_bytes, self.l2_bytes
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Home {
    L2,
    ExtRam,
    Flash,
}

impl Home {
    pub fn tier(self) -> &'static str {
        match self {
            Home::L2 => L2,
            Home::ExtRam => EXT_RAM,
            Home::Flash => EXT_FLASH,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferClass {
    L2Resident,
    Ext1d,
    Ext2d,
}

impl TransferClass {
    pub fn name(self) -> &'static str {
        match self {
            TransferClass::L2Resident => "l2_resident",
            TransferClass::Ext1d => "ext_1d",
            TransferClass::Ext2d => "ext_2d",
        }
    }
}

/// Output tile of `channels` × `rows` × full width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilePlan {
    pub channels: u32,
    pub rows: u32,
    pub channel_passes: u32,
    pub row_passes: u32,
    /// Loop nest order for dense convolutions: weights stay resident across
    /// row tiles when true, inputs stay resident across channel tiles when false.
    pub channel_outer: bool,
}

impl TilePlan {
    pub fn passes(&self) -> u64 {
        self.channel_passes as u64 * self.row_passes as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSchedule {
    pub name: String,
    pub op: OpKind,
    pub engine: Option<EngineKind>,
    pub weight_home: Option<Home>,
    pub input_homes: Vec<Home>,
    pub output_home: Home,
    pub transfer_class: TransferClass,
    pub tile: TilePlan,
    pub compute_cycles: f64,
    pub transfer_cycles: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub budget: BudgetConfig,
    pub layers: Vec<LayerSchedule>,
    pub admission: AdmissionOrder,
    /// Number of placement items admitted to L2.
    pub l2_admitted: usize,
    pub l2_peak: u64,
    pub ext_peak: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ItemKind {
    Input,
    Activation(usize),
    Weights(usize),
}

/// A buffer competing for L2: alive over layer steps `birth..=death`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlacementItem {
    pub kind: ItemKind,
    pub bytes: u64,
    pub birth: usize,
    pub death: usize,
}

fn zero_cost(op: OpKind) -> bool {
    matches!(op, OpKind::Reshape | OpKind::SsdHead)
}

fn dense(op: OpKind) -> bool {
    matches!(op, OpKind::Conv2d | OpKind::PointwiseConv2d)
}

fn last_uses(g: &LayerGraph) -> Vec<usize> {
    let mut last: Vec<usize> = (0..=g.layers.len()).map(|t| t.saturating_sub(1)).collect();
    for (i, l) in g.layers.iter().enumerate() {
        for inp in &l.inputs {
            let t = tensor_id(g, inp);
            last[t] = last[t].max(i);
        }
    }
    last
}

fn in_place(op: OpKind) -> bool {
    matches!(
        op,
        OpKind::Hswish | OpKind::Hsigmoid | OpKind::Relu | OpKind::Add | OpKind::Mul
    )
}

/// Storage root of each tensor. Index 0 is the graph input, index i+1 the
/// output of layer i. Reshapes alias their operand; elementwise ops overwrite
/// their first operand when every alias of it dies at that op.
fn tensor_roots(g: &LayerGraph) -> Vec<usize> {
    let last = last_uses(g);
    let mut roots = vec![0usize];
    for (i, l) in g.layers.iter().enumerate() {
        let first = tensor_id(g, &l.inputs[0]);
        let r = roots[first];
        let reuse = l.op == OpKind::Reshape
            || (in_place(l.op)
                && g.tensor_shape(&l.inputs[0]) == Some(l.out_shape)
                && roots
                    .iter()
                    .enumerate()
                    .all(|(t, &rt)| rt != r || last[t] <= i));
        roots.push(if reuse { r } else { i + 1 });
    }
    roots
}

/// Activation whose operand is a convolution output read by nothing else; it
/// runs on the cores while the tile is still in L1.
fn fused_epilogue(g: &LayerGraph, i: usize, last: &[usize]) -> bool {
    let l = &g.layers[i];
    if !matches!(l.op, OpKind::Hswish | OpKind::Hsigmoid | OpKind::Relu) || l.inputs.len() != 1 {
        return false;
    }
    let Some(j) = g.layer_index(&l.inputs[0]) else {
        return false;
    };
    let sole_reader = g
        .layers
        .iter()
        .filter(|m| m.inputs.contains(&l.inputs[0]))
        .count()
        == 1;
    g.layers[j].op.is_conv() && sole_reader && last[j + 1] == i
}

fn tensor_id(g: &LayerGraph, name: &str) -> usize {
    if name == g.input.name {
        0
    } else {
        g.layer_index(name).expect("validated graph") + 1
    }
}

/// Activations (one per storage root) and per-layer weights.
pub fn placement_items(g: &LayerGraph) -> Vec<PlacementItem> {
    let roots = tensor_roots(g);
    let n = g.layers.len();
    let mut death: Vec<usize> = (0..=n).map(|t| t.saturating_sub(1)).collect();
    for (t, &u) in last_uses(g).iter().enumerate() {
        death[roots[t]] = death[roots[t]].max(u);
    }
    let mut items = Vec::new();
    for t in 0..=n {
        if roots[t] != t {
            continue;
        }
        let (kind, bytes, birth) = if t == 0 {
            (ItemKind::Input, g.tensor_bytes(&g.input.name).unwrap(), 0)
        } else {
            (
                ItemKind::Activation(t - 1),
                g.out_bytes(&g.layers[t - 1]),
                t - 1,
            )
        };
        items.push(PlacementItem {
            kind,
            bytes,
            birth,
            death: death[t].max(birth),
        });
    }
    for (i, l) in g.layers.iter().enumerate() {
        let w = g.weight_bytes(l);
        if w > 0 {
            items.push(PlacementItem {
                kind: ItemKind::Weights(i),
                bytes: w,
                birth: i,
                death: i,
            });
        }
    }
    items
}

/// Peak of Σ bytes over live items, per step.
pub fn peak_occupancy<'a>(items: impl IntoIterator<Item = &'a PlacementItem>, steps: usize) -> u64 {
    let mut delta = vec![0i128; steps + 1];
    for it in items {
        delta[it.birth] += it.bytes as i128;
        delta[it.death + 1] -= it.bytes as i128;
    }
    let (mut cur, mut peak) = (0i128, 0i128);
    for d in &delta[..steps] {
        cur += d;
        peak = peak.max(cur);
    }
    peak as u64
}

/// Order in which buffers try to claim L2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdmissionOrder {
    /// Production order; a layer's weights after its output.
    Topological,
    /// Latest-born first, so a tensor consumed far downstream can displace
    /// its short-lived predecessors.
    Reverse,
    /// Smaller first, then earlier-born.
    Size,
}

impl AdmissionOrder {
    pub const ALL: [AdmissionOrder; 3] = [
        AdmissionOrder::Topological,
        AdmissionOrder::Reverse,
        AdmissionOrder::Size,
    ];
}

pub fn admission_order(items: &[PlacementItem], order: AdmissionOrder) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..items.len()).collect();
    let weights_last = |it: &PlacementItem| matches!(it.kind, ItemKind::Weights(_)) as u8;
    match order {
        AdmissionOrder::Topological => {
            idx.sort_by_key(|&i| (items[i].birth, weights_last(&items[i]), i))
        }
        AdmissionOrder::Reverse => idx.sort_by_key(|&i| {
            (
                std::cmp::Reverse(items[i].birth),
                weights_last(&items[i]),
                i,
            )
        }),
        AdmissionOrder::Size => idx.sort_by_key(|&i| (items[i].bytes, items[i].birth, i)),
    }
    idx
}

/// First-fit: each buffer, in order, goes to L2 if the occupancy over its
/// whole lifetime stays within `l2_bytes`. Returns the mask and its peak.
pub fn first_fit(
    items: &[PlacementItem],
    steps: usize,
    l2_bytes: u64,
    order: &[usize],
) -> (Vec<bool>, u64) {
    let mut occ = vec![0u64; steps.max(1)];
    let mut mask = vec![false; items.len()];
    for &i in order {
        let it = &items[i];
        let span = &mut occ[it.birth..=it.death];
        if span.iter().all(|&o| o + it.bytes <= l2_bytes) {
            span.iter_mut().for_each(|o| *o += it.bytes);
            mask[i] = true;
        }
    }
    (mask, occ.iter().copied().max().unwrap_or(0))
}

/// Every distinct first-fit outcome over all budgets up to `l2_bytes`, from
/// the largest budget down. An outcome at budget b repeats on [peak, b].
pub fn first_fit_family(
    items: &[PlacementItem],
    steps: usize,
    l2_bytes: u64,
    order: AdmissionOrder,
) -> Vec<Vec<bool>> {
    let idx = admission_order(items, order);
    let mut out = Vec::new();
    let mut b = l2_bytes;
    loop {
        let (mask, peak) = first_fit(items, steps, b, &idx);
        out.push(mask);
        if peak == 0 {
            return out;
        }
        b = peak - 1;
    }
}

struct LayerGeometry {
    cout: u32,
    hout: u32,
    /// (channels, height, width, channelwise) of each operand.
    operands: Vec<(u32, u32, u32, bool)>,
    halo: u32,
    rows_in: Box<dyn Fn(u32, u32) -> u32>,
    weight_per_channel: u64,
}

fn geometry(g: &LayerGraph, l: &Layer) -> LayerGeometry {
    let [cout, hout, _] = l.out_shape;
    let operands = l
        .inputs
        .iter()
        .map(|i| {
            let [c, h, w] = g.tensor_shape(i).unwrap();
            let channelwise = !dense(l.op);
            (c, h, w, channelwise)
        })
        .collect();
    let (kh, s, hin) = (l.kernel[0], l.stride, l.in_shape[1]);
    let (halo, rows_in): (u32, Box<dyn Fn(u32, u32) -> u32>) = match l.op {
        OpKind::Conv2d | OpKind::DepthwiseConv2d | OpKind::PointwiseConv2d | OpKind::Pool => (
            kh.saturating_sub(s),
            Box::new(move |h, op_h| ((h - 1) * s + kh).min(op_h)),
        ),
        OpKind::Resize => (
            1,
            Box::new(move |h, op_h| {
                ((h as u64 * hin as u64).div_ceil(hout as u64) as u32 + 1).min(op_h)
            }),
        ),
        _ => (0, Box::new(|h, op_h| h.min(op_h))),
    };
    let weight_per_channel = if l.op.is_conv() {
        let cin_g = (l.in_shape[0] / l.groups) as u64;
        l.kernel[0] as u64 * l.kernel[1] as u64 * cin_g + l.bias as u64
    } else {
        0
    };
    LayerGeometry {
        cout,
        hout,
        operands,
        halo,
        rows_in,
        weight_per_channel,
    }
}

impl LayerGeometry {
    fn working_set(&self, ct: u32, ht: u32, eb: u64, out_w: u32) -> u64 {
        let mut bytes = ct as u64 * ht as u64 * out_w as u64 + self.weight_per_channel * ct as u64;
        for &(c, h, w, channelwise) in &self.operands {
            let ch = if channelwise { ct.min(c) } else { c };
            let rows = if h == 1 { 1 } else { (self.rows_in)(ht, h) };
            bytes += ch as u64 * rows as u64 * w as u64;
        }
        bytes * eb
    }

    fn max_rows(&self, ct: u32, eb: u64, out_w: u32, budget: u64) -> Option<u32> {
        if self.working_set(ct, 1, eb, out_w) > budget {
            return None;
        }
        let (mut lo, mut hi) = (1u32, self.hout);
        while lo < hi {
            let mid = (lo + hi).div_ceil(2);
            if self.working_set(ct, mid, eb, out_w) <= budget {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        Some(lo)
    }
}

struct Costing<'a> {
    platform: &'a PlatformModel,
    engine: &'a ComputeEngine,
}

fn bulk(
    p: &PlatformModel,
    from: &str,
    to: &str,
    bytes: f64,
    rows: f64,
) -> Result<f64, PlatformError> {
    let (src, dst) = (p.tier(from)?, p.tier(to)?);
    let bw = src.read_bandwidth.min(dst.write_bandwidth);
    Ok(bytes / bw
        + rows
            * src
                .transfer_2d_row_overhead
                .max(dst.transfer_2d_row_overhead))
}

struct TileCost {
    compute: f64,
    transfer: f64,
    two_d: bool,
}

impl Costing<'_> {
    #[allow(clippy::too_many_arguments)]
    fn cost(
        &self,
        g: &LayerGraph,
        l: &Layer,
        geo: &LayerGeometry,
        plan: &TilePlan,
        input_homes: &[Home],
        output_home: Home,
        weight_home: Option<Home>,
    ) -> Result<TileCost, SchedError> {
        let p = self.platform;
        let eb = g.element_bytes as f64;
        let (nc, nh) = (plan.channel_passes as f64, plan.row_passes as f64);
        let split = plan.row_passes > 1;
        let mut transfer = 0.0;
        let mut two_d = false;
        for (&(c, h, w, channelwise), &home) in geo.operands.iter().zip(input_homes) {
            let rows_total = if h == 1 {
                1.0
            } else {
                (h as f64 + (nh - 1.0) * geo.halo as f64).min(nh * h as f64)
            };
            let pass_bytes = c as f64 * rows_total * w as f64 * eb;
            let refetch = if channelwise || !plan.channel_outer {
                1.0
            } else {
                nc
            };
            let copies = if channelwise { nc } else { 1.0 };
            let dma_rows = if split && h > 1 {
                nh * c as f64
            } else {
                copies * if split { nh } else { 1.0 }
            };
            let (bytes, rows) = (refetch * pass_bytes, refetch * dma_rows);
            transfer += bulk(p, L2, L1, bytes, rows)?;
            if home == Home::ExtRam {
                transfer += bulk(p, EXT_RAM, L2, bytes, rows)?;
                two_d |= split && h > 1;
            }
        }
        let out_bytes = g.out_bytes(l) as f64;
        let out_rows = if split { nh * geo.cout as f64 } else { nc };
        transfer += bulk(p, L1, L2, out_bytes, out_rows)?;
        if output_home == Home::ExtRam {
            transfer += bulk(p, L2, EXT_RAM, out_bytes, out_rows)?;
            two_d |= split;
        }
        if let Some(wh) = weight_home {
            let w = g.weight_bytes(l) as f64;
            let fetches = if dense(l.op) && !plan.channel_outer {
                nh
            } else {
                1.0
            };
            let rows = fetches * nc;
            transfer += match wh {
                Home::L2 => bulk(p, L2, L1, fetches * w, rows)?,
                Home::Flash | Home::ExtRam => {
                    bulk(p, EXT_FLASH, L2, fetches * w, rows)? + bulk(p, L2, L1, fetches * w, rows)?
                }
            };
        }
        let work = if l.op.is_conv() {
            count_macs(l) as f64 / self.engine.mac_rate(l.op)
        } else {
            g.in_bytes(l) as f64 / self.engine.elementwise_bytes_per_cycle
        };
        let compute = work + plan.passes() as f64 * self.engine.job_overhead_cycles;
        Ok(TileCost {
            compute,
            transfer,
            two_d,
        })
    }
}

fn combine(compute: f64, transfer: f64, overlap: bool) -> f64 {
    if overlap {
        compute.max(transfer)
    } else {
        compute + transfer
    }
}

fn pick_engine<'a>(
    p: &'a PlatformModel,
    budget: &BudgetConfig,
    l: &Layer,
) -> Result<&'a ComputeEngine, SchedError> {
    if budget.engine == EngineKind::ConvAccelerator {
        if let Some(e) = p
            .engine(EngineKind::ConvAccelerator)
            .filter(|e| e.supports(l.op))
        {
            return Ok(e);
        }
    }
    p.engine(EngineKind::WorkerCores)
        .filter(|e| e.supports(l.op))
        .ok_or(SchedError::Unsupported {
            layer: l.name.clone(),
            op: l.op,
        })
}

/// Greedy first-fit L2 placement, then per layer the cheapest L1 tile that
/// fits. First-fit alone is not monotone in the budget (an early buffer can
/// crowd out a busier later one), so the planner keeps the cheapest schedule
/// among the first-fit outcomes of every budget up to `l2_bytes`; that set
/// only grows with the budget, hence so does no estimated total.
pub fn plan_schedule(
    g: &LayerGraph,
    p: &PlatformModel,
    budget: &BudgetConfig,
) -> Result<Schedule, SchedError> {
    budget.validate()?;
    let items = placement_items(g);
    let mut cache = HashMap::new();
    let mut best: Option<(f64, Schedule)> = None;
    let mut overflow = None;
    for order in AdmissionOrder::ALL {
        for resident in first_fit_family(&items, g.layers.len(), budget.l2_bytes, order) {
            match schedule_for(g, p, budget, &items, &resident, order, &mut cache) {
                Ok(s) => {
                    let total: f64 = s
                        .layers
                        .iter()
                        .map(|l| combine(l.compute_cycles, l.transfer_cycles, budget.dma_overlap))
                        .sum();
                    if best.as_ref().is_none_or(|(t, _)| total < *t) {
                        best = Some((total, s));
                    }
                }
                Err(e @ SchedError::ExtOverflow { .. }) => overflow = Some(e),
                Err(e) => return Err(e),
            }
        }
    }
    best.map(|(_, s)| s)
        .ok_or_else(|| overflow.expect("at least one candidate"))
}

type LayerKey = (usize, Vec<Home>, Home, Option<Home>);

fn schedule_for(
    g: &LayerGraph,
    p: &PlatformModel,
    budget: &BudgetConfig,
    items: &[PlacementItem],
    resident: &[bool],
    order: AdmissionOrder,
    cache: &mut HashMap<LayerKey, LayerSchedule>,
) -> Result<Schedule, SchedError> {
    let n = g.layers.len();
    let admitted = resident.iter().filter(|&&r| r).count();
    let pick = |keep: bool| {
        items
            .iter()
            .zip(resident)
            .filter(move |(_, &r)| r == keep)
            .map(|(it, _)| it)
    };
    let l2_peak = peak_occupancy(pick(true), n);
    let ext_peak = peak_occupancy(
        pick(false).filter(|i| !matches!(i.kind, ItemKind::Weights(_))),
        n,
    );
    let ext_cap = p.tier(EXT_RAM)?.capacity;
    if ext_peak > ext_cap {
        return Err(SchedError::ExtOverflow {
            needed: ext_peak,
            capacity: ext_cap,
        });
    }

    let roots = tensor_roots(g);
    let last = last_uses(g);
    let mut tensor_home = vec![Home::ExtRam; n + 1];
    let mut weight_home = vec![None; n];
    for (it, &home) in items.iter().zip(resident) {
        match it.kind {
            ItemKind::Input => tensor_home[0] = if home { Home::L2 } else { Home::ExtRam },
            ItemKind::Activation(i) => {
                tensor_home[i + 1] = if home { Home::L2 } else { Home::ExtRam }
            }
            ItemKind::Weights(i) => {
                weight_home[i] = Some(if home { Home::L2 } else { Home::Flash })
            }
        }
    }

    let mut layers = Vec::with_capacity(n);
    for (i, l) in g.layers.iter().enumerate() {
        let input_homes: Vec<Home> = l
            .inputs
            .iter()
            .map(|s| tensor_home[roots[tensor_id(g, s)]])
            .collect();
        let output_home = tensor_home[roots[i + 1]];
        let trivial = TilePlan {
            channels: l.out_shape[0],
            rows: l.out_shape[1],
            channel_passes: 1,
            row_passes: 1,
            channel_outer: true,
        };
        if zero_cost(l.op) {
            layers.push(LayerSchedule {
                name: l.name.clone(),
                op: l.op,
                engine: None,
                weight_home: None,
                input_homes,
                output_home,
                transfer_class: TransferClass::L2Resident,
                tile: trivial,
                compute_cycles: 0.0,
                transfer_cycles: 0.0,
            });
            continue;
        }
        let engine = pick_engine(p, budget, l)?;
        if fused_epilogue(g, i, &last) {
            let cores = p
                .engine(EngineKind::WorkerCores)
                .expect("validated platform");
            let class = layers[g.layer_index(&l.inputs[0]).unwrap()].transfer_class;
            layers.push(LayerSchedule {
                name: l.name.clone(),
                op: l.op,
                engine: Some(EngineKind::WorkerCores),
                weight_home: None,
                input_homes,
                output_home,
                transfer_class: class,
                tile: trivial,
                compute_cycles: g.in_bytes(l) as f64 / cores.elementwise_bytes_per_cycle,
                transfer_cycles: 0.0,
            });
            continue;
        }
        let key = (i, input_homes, output_home, weight_home[i]);
        let rec = match cache.get(&key) {
            Some(r) => r.clone(),
            None => {
                let r = plan_layer(g, p, budget, engine, i, &key.1, output_home, weight_home[i])?;
                cache.insert(key, r.clone());
                r
            }
        };
        layers.push(rec);
    }
    Ok(Schedule {
        budget: *budget,
        layers,
        admission: order,
        l2_admitted: admitted,
        l2_peak,
        ext_peak,
    })
}

#[allow(clippy::too_many_arguments)]
fn plan_layer(
    g: &LayerGraph,
    p: &PlatformModel,
    budget: &BudgetConfig,
    engine: &ComputeEngine,
    i: usize,
    input_homes: &[Home],
    output_home: Home,
    weight_home: Option<Home>,
) -> Result<LayerSchedule, SchedError> {
    let l = &g.layers[i];
    let eb = g.element_bytes as u64;
    let costing = Costing {
        platform: p,
        engine,
    };
    let geo = geometry(g, l);
    let out_w = l.out_shape[2];
    let mut best: Option<(f64, u64, TilePlan, TileCost)> = None;
    let mut nc_prev = 0;
    for ct in (1..=geo.cout).rev() {
        let nc = geo.cout.div_ceil(ct);
        if nc == nc_prev {
            continue;
        }
        nc_prev = nc;
        let ct = geo.cout.div_ceil(nc);
        let Some(ht) = geo.max_rows(ct, eb, out_w, budget.l1_bytes) else {
            continue;
        };
        let nh = geo.hout.div_ceil(ht);
        for channel_outer in [true, false] {
            if !channel_outer && !dense(l.op) {
                continue;
            }
            let plan = TilePlan {
                channels: ct,
                rows: ht,
                channel_passes: nc,
                row_passes: nh,
                channel_outer,
            };
            let c = costing.cost(g, l, &geo, &plan, input_homes, output_home, weight_home)?;
            let total = combine(c.compute, c.transfer, budget.dma_overlap);
            let area = ct as u64 * ht as u64;
            let better = match &best {
                None => true,
                Some((bt, ba, _, _)) => total < *bt || (total == *bt && area > *ba),
            };
            if better {
                best = Some((total, area, plan, c));
            }
        }
    }
    let Some((_, _, tile, cost)) = best else {
        return Err(SchedError::L1Overflow {
            layer: l.name.clone(),
            needed: geo.working_set(1, 1, eb, out_w),
            l1_bytes: budget.l1_bytes,
        });
    };
    let touches_ext = input_homes
        .iter()
        .chain([&output_home])
        .any(|&h| h == Home::ExtRam);
    let transfer_class = match (touches_ext, cost.two_d) {
        (false, _) => TransferClass::L2Resident,
        (true, false) => TransferClass::Ext1d,
        (true, true) => TransferClass::Ext2d,
    };
    Ok(LayerSchedule {
        name: l.name.clone(),
        op: l.op,
        engine: Some(engine.kind),
        weight_home,
        input_homes: input_homes.to_vec(),
        output_home,
        transfer_class,
        tile,
        compute_cycles: cost.compute,
        transfer_cycles: cost.transfer,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassBreakdown {
    pub l2_resident: f64,
    pub ext_1d: f64,
    pub ext_2d: f64,
}

impl ClassBreakdown {
    fn add(&mut self, class: TransferClass, v: f64) {
        match class {
            TransferClass::L2Resident => self.l2_resident += v,
            TransferClass::Ext1d => self.ext_1d += v,
            TransferClass::Ext2d => self.ext_2d += v,
        }
    }

    pub fn sum(&self) -> f64 {
        self.l2_resident + self.ext_1d + self.ext_2d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerLatency {
    pub name: String,
    pub op: OpKind,
    pub class: TransferClass,
    pub macs: u64,
    pub compute_cycles: f64,
    pub transfer_cycles: f64,
    pub total_cycles: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub layers: Vec<LayerLatency>,
    pub compute_cycles: f64,
    pub transfer_cycles: f64,
    pub total_cycles: f64,
    /// Layer totals summed by transfer class.
    pub cycles_by_class: ClassBreakdown,
    /// Transfer cycles summed by transfer class.
    pub transfer_by_class: ClassBreakdown,
    pub macs: u64,
    pub macs_by_class: ClassBreakdown,
    pub mac_per_cycle: f64,
    pub wall_time_s: f64,
}

impl LatencyReport {
    pub fn l2_share(&self) -> f64 {
        self.cycles_by_class.l2_resident / self.total_cycles
    }
}

pub fn estimate_latency(
    schedule: &Schedule,
    g: &LayerGraph,
    p: &PlatformModel,
    budget: &BudgetConfig,
) -> Result<LatencyReport, SchedError> {
    if schedule.layers.len() != g.layers.len() {
        return Err(SchedError::Mismatch(format!(
            "{} records for {} layers",
            schedule.layers.len(),
            g.layers.len()
        )));
    }
    let mut layers = Vec::with_capacity(g.layers.len());
    let (mut compute, mut transfer, mut total) = (0.0, 0.0, 0.0);
    let (mut by_class, mut transfer_by_class, mut macs_by_class) = Default::default();
    for (rec, l) in schedule.layers.iter().zip(&g.layers) {
        if rec.name != l.name {
            return Err(SchedError::Mismatch(format!(
                "record {} for layer {}",
                rec.name, l.name
            )));
        }
        let t = combine(rec.compute_cycles, rec.transfer_cycles, budget.dma_overlap);
        let macs = count_macs(l);
        ClassBreakdown::add(&mut by_class, rec.transfer_class, t);
        ClassBreakdown::add(
            &mut transfer_by_class,
            rec.transfer_class,
            rec.transfer_cycles,
        );
        ClassBreakdown::add(&mut macs_by_class, rec.transfer_class, macs as f64);
        compute += rec.compute_cycles;
        transfer += rec.transfer_cycles;
        total += t;
        layers.push(LayerLatency {
            name: l.name.clone(),
            op: l.op,
            class: rec.transfer_class,
            macs,
            compute_cycles: rec.compute_cycles,
            transfer_cycles: rec.transfer_cycles,
            total_cycles: t,
        });
    }
    let macs = layers.iter().map(|l| l.macs).sum::<u64>();
    Ok(LatencyReport {
        layers,
        compute_cycles: compute,
        transfer_cycles: transfer,
        total_cycles: total,
        cycles_by_class: by_class,
        transfer_by_class,
        macs,
        macs_by_class,
        mac_per_cycle: if total > 0.0 {
            macs as f64 / total
        } else {
            0.0
        },
        wall_time_s: p.cycles_to_seconds(total),
    })
}

pub fn schedule_and_estimate(
    g: &LayerGraph,
    p: &PlatformModel,
    budget: &BudgetConfig,
) -> Result<(Schedule, LatencyReport), SchedError> {
    let s = plan_schedule(g, p, budget)?;
    let r = estimate_latency(&s, g, p, budget)?;
    Ok((s, r))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetPoint {
    pub budget: BudgetConfig,
    pub report: LatencyReport,
    /// First point's cycles over this point's.
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetComparison {
    pub points: Vec<BudgetPoint>,
    /// Cycles never grow from one point to the next.
    pub monotone: bool,
    pub strictly_decreasing: bool,
}

pub fn compare_budgets(
    g: &LayerGraph,
    p: &PlatformModel,
    budgets: &[BudgetConfig],
) -> Result<BudgetComparison, SchedError> {
    if budgets.len() < 2 {
        return Err(SchedError::Budget(
            "comparison needs at least two budgets".into(),
        ));
    }
    let mut points: Vec<BudgetPoint> = Vec::with_capacity(budgets.len());
    for b in budgets {
        let (_, report) = schedule_and_estimate(g, p, b)?;
        let speedup = points
            .first()
            .map_or(1.0, |f| f.report.total_cycles / report.total_cycles);
        points.push(BudgetPoint {
            budget: *b,
            report,
            speedup,
        });
    }
    let cycles: Vec<f64> = points.iter().map(|p| p.report.total_cycles).collect();
    Ok(BudgetComparison {
        monotone: cycles.windows(2).all(|w| w[1] <= w[0]),
        strictly_decreasing: cycles.windows(2).all(|w| w[1] < w[0]),
        points,
    })
}
