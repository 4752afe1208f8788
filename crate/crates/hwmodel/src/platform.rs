//! Parametric MCU description: memory tiers, DMA costs, compute engines and
//! per-workload power.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cnngraph::OpKind;

pub const L1: &str = "L1";
pub const L2: &str = "L2";
pub const EXT_RAM: &str = "extRAM";
pub const EXT_FLASH: &str = "extFLASH";

#[derive(Debug, Error)]
pub enum PlatformError {
    #[error("unknown platform {0:?}")]
    UnknownPlatform(String),
    #[error("unknown tier {0:?}")]
    UnknownTier(String),
    #[error("platform file: {0}")]
    Syntax(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid platform: {0}")]
    Invalid(String),
    #[error("invalid transfer: {0}")]
    Transfer(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryTier {
    pub name: String,
    pub capacity: u64,
    pub read_bandwidth: f64,
    pub write_bandwidth: f64,
    pub transfer_2d_row_overhead: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineKind {
    WorkerCores,
    ConvAccelerator,
}

impl EngineKind {
    pub fn parse(s: &str) -> Option<EngineKind> {
        match s {
            "worker_cores" => Some(EngineKind::WorkerCores),
            "conv_accelerator" => Some(EngineKind::ConvAccelerator),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EngineKind::WorkerCores => "worker_cores",
            EngineKind::ConvAccelerator => "conv_accelerator",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComputeEngine {
    pub name: String,
    pub kind: EngineKind,
    pub peak_mac_per_cycle: f64,
    pub depthwise_derate: f64,
    /// Achieved fraction of peak on dense and pointwise convolutions.
    pub utilization: f64,
    /// Achieved fraction of the derated peak on depthwise convolutions.
    pub depthwise_utilization: f64,
    /// Throughput on zero-MAC operators; unused by accelerators.
    pub elementwise_bytes_per_cycle: f64,
    /// Fixed cost of launching one L1 tile.
    pub job_overhead_cycles: f64,
    pub num_workers: u32,
    pub supported_ops: BTreeSet<OpKind>,
}

impl ComputeEngine {
    pub fn supports(&self, op: OpKind) -> bool {
        self.supported_ops.contains(&op)
    }

    /// Sustained MAC/cycle for a convolution kind.
    pub fn mac_rate(&self, op: OpKind) -> f64 {
        if op == OpKind::DepthwiseConv2d {
            self.peak_mac_per_cycle * self.depthwise_derate * self.depthwise_utilization
        } else {
            self.peak_mac_per_cycle * self.utilization
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkloadPower {
    pub viola_jones: f64,
    pub cnn: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatformModel {
    pub name: String,
    pub clock_hz: u64,
    pub voltage: f64,
    pub sleep_power_uw: f64,
    pub dma_overlap: bool,
    pub active_power_mw: WorkloadPower,
    pub tiers: Vec<MemoryTier>,
    pub engines: Vec<ComputeEngine>,
}

impl PlatformModel {
    pub fn validate(&self) -> Result<(), PlatformError> {
        let invalid = |m: String| Err(PlatformError::Invalid(m));
        if self.clock_hz == 0 || self.voltage <= 0.0 || self.sleep_power_uw < 0.0 {
            return invalid("clock, voltage and sleep power must be positive".into());
        }
        let mut names = BTreeSet::new();
        for t in &self.tiers {
            if !names.insert(t.name.as_str()) {
                return invalid(format!("duplicate tier {}", t.name));
            }
            if t.capacity == 0 || !(t.read_bandwidth > 0.0) || !(t.write_bandwidth > 0.0) {
                return invalid(format!(
                    "tier {} needs positive capacity and bandwidths",
                    t.name
                ));
            }
            if !(t.transfer_2d_row_overhead >= 0.0) {
                return invalid(format!("tier {} has a negative row overhead", t.name));
            }
        }
        for n in [L1, L2, EXT_RAM, EXT_FLASH] {
            self.tier(n)?;
        }
        if !(self.tier(L1)?.capacity < self.tier(L2)?.capacity
            && self.tier(L2)?.capacity < self.tier(EXT_RAM)?.capacity)
        {
            return invalid("capacities must grow L1 < L2 < extRAM".into());
        }
        for e in &self.engines {
            if !(e.peak_mac_per_cycle > 0.0)
                || !(e.depthwise_derate > 0.0 && e.depthwise_derate <= 1.0)
            {
                return invalid(format!(
                    "engine {} needs peak > 0 and derate in (0,1]",
                    e.name
                ));
            }
            if !(e.utilization > 0.0 && e.utilization <= 1.0)
                || !(e.depthwise_utilization > 0.0 && e.depthwise_utilization <= 1.0)
            {
                return invalid(format!("engine {} utilizations must lie in (0,1]", e.name));
            }
            if e.job_overhead_cycles < 0.0 {
                return invalid(format!("engine {} has a negative job overhead", e.name));
            }
            if e.kind == EngineKind::WorkerCores
                && (e.num_workers == 0 || !(e.elementwise_bytes_per_cycle > 0.0))
            {
                return invalid(format!(
                    "core engine {} needs workers and elementwise throughput",
                    e.name
                ));
            }
        }
        if self.engine(EngineKind::WorkerCores).is_none() {
            return invalid("a worker_cores engine is required".into());
        }
        Ok(())
    }

    pub fn tier(&self, name: &str) -> Result<&MemoryTier, PlatformError> {
        self.tiers
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| PlatformError::UnknownTier(name.to_string()))
    }

    pub fn engine(&self, kind: EngineKind) -> Option<&ComputeEngine> {
        self.engines.iter().find(|e| e.kind == kind)
    }

    /// Cycles to move `bytes` split into `rows` equal 1D copies. Each row pays
    /// the larger row overhead of the two endpoints; the rate is the source
    /// read bandwidth capped by the destination write bandwidth.
    pub fn transfer_cycles(
        &self,
        from: &str,
        to: &str,
        bytes: u64,
        rows: u64,
    ) -> Result<f64, PlatformError> {
        let (src, dst) = (self.tier(from)?, self.tier(to)?);
        if bytes == 0 || rows == 0 || !bytes.is_multiple_of(rows) {
            return Err(PlatformError::Transfer(format!(
                "{bytes} bytes in {rows} rows"
            )));
        }
        let bw = src.read_bandwidth.min(dst.write_bandwidth);
        let overhead = src
            .transfer_2d_row_overhead
            .max(dst.transfer_2d_row_overhead);
        Ok(rows as f64 * ((bytes / rows) as f64 / bw + overhead))
    }

    pub fn cycles_to_seconds(&self, cycles: f64) -> f64 {
        cycles / self.clock_hz as f64
    }
}

pub fn parse_platform(text: &str) -> Result<PlatformModel, PlatformError> {
    let p: PlatformModel =
        toml::from_str(text).map_err(|e| PlatformError::Syntax(e.to_string()))?;
    p.validate()?;
    Ok(p)
}

pub fn load_platform(path: &Path) -> Result<PlatformModel, PlatformError> {
    parse_platform(&std::fs::read_to_string(path)?)
}

pub fn builtin_platform_text(name: &str) -> Result<&'static str, PlatformError> {
    match name {
        "gap9" => Ok(include_str!("../../../data/platforms/gap9.toml")),
        "gap8" => Ok(include_str!("../../../data/platforms/gap8.toml")),
        other => Err(PlatformError::UnknownPlatform(other.to_string())),
    }
}

pub fn builtin_platform(name: &str) -> Result<PlatformModel, PlatformError> {
    parse_platform(builtin_platform_text(name)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_platform(overhead: f64) -> PlatformModel {
        let mut p = builtin_platform("gap9").unwrap();
        for t in &mut p.tiers {
            t.transfer_2d_row_overhead = overhead;
            t.write_bandwidth = 8.0;
        }
        p
    }

    #[test]
    fn builtins_match_their_datasheets() {
        let g9 = builtin_platform("gap9").unwrap();
        let ne16 = g9.engine(EngineKind::ConvAccelerator).unwrap();
        assert_eq!(ne16.peak_mac_per_cycle, 150.0);
        assert_eq!(ne16.depthwise_derate, 1.0 / 16.0);
        assert_eq!(
            (g9.clock_hz, g9.voltage, g9.sleep_power_uw),
            (240_000_000, 0.65, 43.0)
        );
        assert_eq!(g9.engine(EngineKind::WorkerCores).unwrap().num_workers, 8);
        let g8 = builtin_platform("gap8").unwrap();
        assert!(g8.engine(EngineKind::ConvAccelerator).is_none());
        assert_eq!((g8.clock_hz, g8.voltage), (175_000_000, 1.2));
        assert_eq!(g8.active_power_mw.cnn, 79.0);
        for n in [L1, L2] {
            assert!(g9.tier(n).unwrap().capacity > g8.tier(n).unwrap().capacity);
        }
        let (l1, l2) = (g9.tier(L1).unwrap(), g9.tier(L2).unwrap());
        assert_eq!(l1.read_bandwidth / l2.read_bandwidth, 10.0);
        assert!(matches!(
            builtin_platform("gap10"),
            Err(PlatformError::UnknownPlatform(_))
        ));
    }

    #[test]
    fn one_dimensional_copy() {
        let p = flat_platform(0.0);
        assert_eq!(p.transfer_cycles(EXT_RAM, L2, 1000, 1).unwrap(), 1000.0);
        assert_eq!(p.transfer_cycles(EXT_RAM, L2, 1000, 100).unwrap(), 1000.0);
    }

    #[test]
    fn row_overhead_dominates_short_rows() {
        let p = flat_platform(46.0);
        let c = p.transfer_cycles(EXT_RAM, L2, 1000, 100).unwrap();
        assert_eq!(c, 1000.0 + 4600.0);
    }

    #[test]
    fn transfer_errors() {
        let p = flat_platform(0.0);
        assert!(matches!(
            p.transfer_cycles("L3", L2, 10, 1),
            Err(PlatformError::UnknownTier(_))
        ));
        assert!(p.transfer_cycles(L2, L1, 10, 3).is_err());
        assert!(p.transfer_cycles(L2, L1, 0, 1).is_err());
    }

    #[test]
    fn duplicate_tier_is_invalid() {
        let mut p = builtin_platform("gap9").unwrap();
        p.tiers.push(p.tiers[0].clone());
        assert!(p.validate().is_err());
    }

    #[test]
    fn shipped_files_parse_standalone() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/platforms");
        for n in ["gap9", "gap8"] {
            let p = load_platform(&dir.join(format!("{n}.toml"))).unwrap();
            assert_eq!(p, builtin_platform(n).unwrap());
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn additive_and_monotone(a in 1u64..5000, b in 1u64..5000, rows in 1u64..20) {
                let p = builtin_platform("gap9").unwrap();
                let (a, b) = (a * rows, b * rows);
                let ca = p.transfer_cycles(EXT_RAM, L2, a, rows).unwrap();
                let cb = p.transfer_cycles(EXT_RAM, L2, b, rows).unwrap();
                let twice = p.transfer_cycles(EXT_RAM, L2, 2 * a, 2 * rows).unwrap();
                prop_assert!((2.0 * ca - twice).abs() < 1e-6);
                prop_assert_eq!(a <= b, ca <= cb);
                let split = p.transfer_cycles(EXT_RAM, L2, a * 2, rows * 2).unwrap();
                let whole = p.transfer_cycles(EXT_RAM, L2, a * 2, rows).unwrap();
                prop_assert!(split >= whole);
            }
        }
    }
}
