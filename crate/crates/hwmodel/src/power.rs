//! Duty-cycled node energy: per-wake cost, daily budget, battery lifetime and
//! a discrete-event wake/sleep simulator.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SECONDS_PER_DAY: f64 = 86_400.0;

#[derive(Debug, Error)]
pub enum PowerError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("arrival trace is not sorted at index {index} ({prev} s then {next} s)")]
    UnsortedTrace { index: usize, prev: f64, next: f64 },
    #[error("scenario syntax: {0}")]
    Syntax(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn invalid<T>(msg: String) -> Result<T, PowerError> {
    Err(PowerError::Invalid(msg))
}

/// Energy of one wake, split by phase. All values in mJ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseEnergy {
    pub camera_mj: f64,
    pub compute_mj: f64,
    pub tx_mj_per_byte: f64,
    /// Fixed per-wake surcharge outside the compute phase, such as reloading
    /// network weights from flash.
    pub wake_overhead_mj: f64,
}

impl Default for PhaseEnergy {
    fn default() -> Self {
        PhaseEnergy {
            camera_mj: 0.0,
            compute_mj: 0.0,
            tx_mj_per_byte: 1.0,
            wake_overhead_mj: 0.0,
        }
    }
}

impl PhaseEnergy {
    pub fn validate(&self) -> Result<(), PowerError> {
        let fields = [
            ("camera_mj", self.camera_mj),
            ("compute_mj", self.compute_mj),
            ("tx_mj_per_byte", self.tx_mj_per_byte),
            ("wake_overhead_mj", self.wake_overhead_mj),
        ];
        for (name, v) in fields {
            if !(v >= 0.0 && v.is_finite()) {
                return invalid(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadPolicy {
    /// A pest-count message after every wake.
    CountersEveryWake,
    /// One compressed image per new detection, nothing otherwise.
    ImagePerDetection,
}

impl PayloadPolicy {
    pub fn name(self) -> &'static str {
        match self {
            PayloadPolicy::CountersEveryWake => "counters_every_wake",
            PayloadPolicy::ImagePerDetection => "image_per_detection",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DutyCycleConfig {
    pub wake_period_s: f64,
    /// Time awake per wake; the rest of the period is deep sleep.
    pub active_s: f64,
    pub payload_policy: PayloadPolicy,
    pub counter_payload_bytes: u64,
    pub image_payload_bytes: u64,
    pub detections_per_day: f64,
    pub sleep_power_uw: f64,
}

impl Default for DutyCycleConfig {
    fn default() -> Self {
        DutyCycleConfig {
            wake_period_s: 30.0,
            active_s: 0.0,
            payload_policy: PayloadPolicy::CountersEveryWake,
            counter_payload_bytes: 17,
            image_payload_bytes: 12_700,
            detections_per_day: 33.0,
            sleep_power_uw: 43.0,
        }
    }
}

impl DutyCycleConfig {
    pub fn validate(&self) -> Result<(), PowerError> {
        if !(self.active_s >= 0.0 && self.wake_period_s > self.active_s) {
            return invalid(format!(
                "wake period {} s must exceed the active time {} s",
                self.wake_period_s, self.active_s
            ));
        }
        if !self.wake_period_s.is_finite() {
            return invalid("wake period must be finite".into());
        }
        if self.counter_payload_bytes == 0 || self.image_payload_bytes == 0 {
            return invalid("payload sizes must be positive".into());
        }
        if !(self.detections_per_day >= 0.0 && self.detections_per_day.is_finite()) {
            return invalid(format!(
                "detections per day must be non-negative, got {}",
                self.detections_per_day
            ));
        }
        if !(self.sleep_power_uw >= 0.0 && self.sleep_power_uw.is_finite()) {
            return invalid(format!(
                "sleep power must be non-negative, got {}",
                self.sleep_power_uw
            ));
        }
        Ok(())
    }

    pub fn wakes_per_day(&self) -> f64 {
        SECONDS_PER_DAY / self.wake_period_s
    }

    fn sleep_w(&self) -> f64 {
        self.sleep_power_uw * 1e-6
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Battery {
    pub capacity_mah: f64,
    pub voltage_v: f64,
    pub usable_fraction: f64,
}

impl Default for Battery {
    fn default() -> Self {
        Battery {
            capacity_mah: 1000.0,
            voltage_v: 3.7,
            usable_fraction: 1.0,
        }
    }
}

impl Battery {
    pub fn validate(&self) -> Result<(), PowerError> {
        if !(self.capacity_mah > 0.0 && self.voltage_v > 0.0) {
            return invalid("battery capacity and voltage must be positive".into());
        }
        if !(self.usable_fraction > 0.0 && self.usable_fraction <= 1.0) {
            return invalid(format!(
                "usable fraction must lie in (0, 1], got {}",
                self.usable_fraction
            ));
        }
        Ok(())
    }

    pub fn energy_j(&self) -> f64 {
        self.capacity_mah / 1000.0 * self.voltage_v * 3600.0 * self.usable_fraction
    }
}

/// Energy drawn over `days`, by phase, in joules.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub compute_j: f64,
    pub radio_j: f64,
    pub camera_j: f64,
    pub sleep_j: f64,
    pub overhead_j: f64,
    pub days: f64,
    pub daily_j: f64,
    pub lifetime_days: f64,
}

impl EnergyLedger {
    pub fn total_j(&self) -> f64 {
        self.compute_j + self.radio_j + self.camera_j + self.sleep_j + self.overhead_j
    }

    fn close(mut self, days: f64, battery: &Battery) -> Self {
        self.days = days;
        self.daily_j = if days > 0.0 {
            self.total_j() / days
        } else {
            0.0
        };
        self.lifetime_days = if self.daily_j > 0.0 {
            battery.energy_j() / self.daily_j
        } else {
            f64::INFINITY
        };
        self
    }
}

/// mJ spent by one wake that sends `payload_bytes`.
pub fn wake_cycle_energy(pe: &PhaseEnergy, payload_bytes: u64) -> f64 {
    pe.camera_mj + pe.compute_mj + pe.wake_overhead_mj + payload_bytes as f64 * pe.tx_mj_per_byte
}

/// Closed-form energy of one day of steady operation.
pub fn daily_energy(
    pe: &PhaseEnergy,
    cfg: &DutyCycleConfig,
    battery: &Battery,
) -> Result<EnergyLedger, PowerError> {
    pe.validate()?;
    cfg.validate()?;
    battery.validate()?;
    let n = cfg.wakes_per_day();
    let radio_mj = match cfg.payload_policy {
        PayloadPolicy::CountersEveryWake => {
            n * cfg.counter_payload_bytes as f64 * pe.tx_mj_per_byte
        }
        PayloadPolicy::ImagePerDetection => {
            cfg.detections_per_day * cfg.image_payload_bytes as f64 * pe.tx_mj_per_byte
        }
    };
    let ledger = EnergyLedger {
        compute_j: n * pe.compute_mj / 1e3,
        radio_j: radio_mj / 1e3,
        camera_j: n * pe.camera_mj / 1e3,
        sleep_j: cfg.sleep_w() * (SECONDS_PER_DAY - n * cfg.active_s),
        overhead_j: n * pe.wake_overhead_mj / 1e3,
        ..Default::default()
    };
    Ok(ledger.close(1.0, battery))
}

/// Whole and fractional days a battery lasts at a constant daily draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lifetime {
    pub days: u64,
    pub fractional_days: f64,
}

pub fn lifetime(battery: &Battery, daily_j: f64) -> Result<Lifetime, PowerError> {
    battery.validate()?;
    if !(daily_j > 0.0 && daily_j.is_finite()) {
        return invalid(format!("daily energy must be positive, got {daily_j}"));
    }
    let fractional_days = battery.energy_j() / daily_j;
    Ok(Lifetime {
        days: fractional_days.floor() as u64,
        fractional_days,
    })
}

/// Wake-cycle states. Capture, Detect, Transmit and Ack are instantaneous
/// except Detect, which holds the whole active time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeState {
    DeepSleep,
    Capture,
    Detect,
    Transmit,
    Ack,
}

impl NodeState {
    fn next(self, transmits: bool) -> NodeState {
        match self {
            NodeState::DeepSleep => NodeState::Capture,
            NodeState::Capture => NodeState::Detect,
            NodeState::Detect if transmits => NodeState::Transmit,
            NodeState::Detect => NodeState::DeepSleep,
            NodeState::Transmit => NodeState::Ack,
            NodeState::Ack => NodeState::DeepSleep,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WakeRecord {
    pub index: u64,
    pub time_s: f64,
    pub detections: u64,
    pub payload_bytes: u64,
    pub energy_mj: f64,
    /// Battery left after the wake and the sleep that preceded it.
    pub battery_j: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Simulation {
    pub timeline: Vec<WakeRecord>,
    pub ledger: EnergyLedger,
    pub elapsed_s: f64,
    /// Time at which the battery ran dry, if it did within the horizon.
    pub exhausted_at_s: Option<f64>,
    pub battery_remaining_j: f64,
}

struct Drain {
    left_j: f64,
    ledger: EnergyLedger,
}

impl Drain {
    /// Draws `j` joules into `slot`; false when the battery cannot cover it.
    fn draw(&mut self, j: f64, slot: fn(&mut EnergyLedger) -> &mut f64) -> bool {
        if j > self.left_j {
            *slot(&mut self.ledger) += self.left_j;
            self.left_j = 0.0;
            return false;
        }
        *slot(&mut self.ledger) += j;
        self.left_j -= j;
        true
    }
}

/// Walks the wake/sleep state machine with a full battery and wakes at every
/// multiple of the period, starting at t = 0. A wake at t counts the arrivals
/// in (previous wake, t]. Stops before the first wake that would not finish
/// inside the horizon, or when the battery runs dry.
pub fn simulate(
    pe: &PhaseEnergy,
    cfg: &DutyCycleConfig,
    battery: &Battery,
    arrivals_s: &[f64],
    horizon_days: f64,
) -> Result<Simulation, PowerError> {
    pe.validate()?;
    cfg.validate()?;
    battery.validate()?;
    if !(horizon_days > 0.0 && horizon_days.is_finite()) {
        return invalid(format!("horizon must be positive, got {horizon_days}"));
    }
    for (i, w) in arrivals_s.windows(2).enumerate() {
        if !(w[0] <= w[1]) {
            return Err(PowerError::UnsortedTrace {
                index: i + 1,
                prev: w[0],
                next: w[1],
            });
        }
    }
    let horizon_s = horizon_days * SECONDS_PER_DAY;
    let sleep_w = cfg.sleep_w();
    let mut d = Drain {
        left_j: battery.energy_j(),
        ledger: EnergyLedger::default(),
    };
    let mut timeline = Vec::new();
    let mut next_arrival = 0;
    // Instant at which the node last fell asleep.
    let mut asleep_since = 0.0;
    let mut exhausted_at_s = None;
    let mut k = 0u64;
    let mut elapsed = horizon_s;

    loop {
        let wake_t = k as f64 * cfg.wake_period_s;
        let sleep_until = wake_t.min(horizon_s);
        let sleep_j = sleep_w * (sleep_until - asleep_since).max(0.0);
        let left = d.left_j;
        if !d.draw(sleep_j, |l| &mut l.sleep_j) {
            // sleep_j > left >= 0 implies a positive sleep power.
            let t = asleep_since + left / sleep_w;
            exhausted_at_s = Some(t);
            elapsed = t;
            break;
        }
        if wake_t + cfg.active_s > horizon_s {
            break;
        }

        let first = next_arrival;
        while next_arrival < arrivals_s.len() && arrivals_s[next_arrival] <= wake_t {
            next_arrival += 1;
        }
        let detections = (next_arrival - first) as u64;
        let payload_bytes = match cfg.payload_policy {
            PayloadPolicy::CountersEveryWake => cfg.counter_payload_bytes,
            PayloadPolicy::ImagePerDetection => detections * cfg.image_payload_bytes,
        };

        let before = d.left_j;
        let mut state = NodeState::DeepSleep;
        let alive = loop {
            state = state.next(payload_bytes > 0);
            let ok = match state {
                NodeState::Capture => d.draw(pe.camera_mj / 1e3, |l| &mut l.camera_j),
                NodeState::Detect => {
                    d.draw(pe.compute_mj / 1e3, |l| &mut l.compute_j)
                        && d.draw(pe.wake_overhead_mj / 1e3, |l| &mut l.overhead_j)
                }
                NodeState::Transmit => d
                    .draw(payload_bytes as f64 * pe.tx_mj_per_byte / 1e3, |l| {
                        &mut l.radio_j
                    }),
                NodeState::Ack | NodeState::DeepSleep => true,
            };
            if !ok || state == NodeState::DeepSleep {
                break ok;
            }
        };
        timeline.push(WakeRecord {
            index: k,
            time_s: wake_t,
            detections,
            payload_bytes,
            energy_mj: (before - d.left_j) * 1e3,
            battery_j: d.left_j,
        });
        if !alive {
            exhausted_at_s = Some(wake_t);
            elapsed = wake_t;
            break;
        }
        asleep_since = wake_t + cfg.active_s;
        k += 1;
    }

    let ledger = d.ledger.close(elapsed / SECONDS_PER_DAY, battery);
    Ok(Simulation {
        timeline,
        ledger,
        elapsed_s: elapsed,
        exhausted_at_s,
        battery_remaining_j: d.left_j,
    })
}

/// `n` arrivals per day, evenly spaced, the first half a spacing after
/// midnight, over `days` days.
pub fn uniform_arrivals(per_day: u64, days: u64) -> Vec<f64> {
    if per_day == 0 {
        return Vec::new();
    }
    let gap = SECONDS_PER_DAY / per_day as f64;
    (0..per_day * days)
        .map(|i| (i as f64 + 0.5) * gap)
        .collect()
}

/// Parses a trace with one timestamp (seconds) per line; blank lines and
/// lines starting with `#` are skipped.
pub fn parse_trace(text: &str) -> Result<Vec<f64>, PowerError> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .map(|(i, l)| {
            l.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| PowerError::Syntax(format!("line {}: bad timestamp {l:?}", i + 1)))
        })
        .collect()
}

/// Everything needed to cost one deployment.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub phase: PhaseEnergy,
    pub duty_cycle: DutyCycleConfig,
    pub battery: Battery,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), PowerError> {
        self.phase.validate()?;
        self.duty_cycle.validate()?;
        self.battery.validate()
    }

    pub fn daily(&self) -> Result<EnergyLedger, PowerError> {
        daily_energy(&self.phase, &self.duty_cycle, &self.battery)
    }
}

pub fn parse_scenario(text: &str) -> Result<Scenario, PowerError> {
    let s: Scenario = toml::from_str(text).map_err(|e| PowerError::Syntax(e.to_string()))?;
    s.validate()?;
    Ok(s)
}

pub fn load_scenario(path: &Path) -> Result<Scenario, PowerError> {
    parse_scenario(&std::fs::read_to_string(path)?)
}

pub const BUILTIN_SCENARIOS: [&str; 3] = ["gap9_viola_jones", "gap9_cnn", "gap8_viola_jones"];

pub fn builtin_scenario_text(name: &str) -> Option<&'static str> {
    match name {
        "gap9_viola_jones" => Some(include_str!(
            "../../../data/scenarios/gap9_viola_jones.toml"
        )),
        "gap9_cnn" => Some(include_str!("../../../data/scenarios/gap9_cnn.toml")),
        "gap8_viola_jones" => Some(include_str!(
            "../../../data/scenarios/gap8_viola_jones.toml"
        )),
        _ => None,
    }
}

pub fn builtin_scenario(name: &str) -> Result<Scenario, PowerError> {
    let text = builtin_scenario_text(name)
        .ok_or_else(|| PowerError::Invalid(format!("unknown scenario {name:?}")))?;
    parse_scenario(text)
}
