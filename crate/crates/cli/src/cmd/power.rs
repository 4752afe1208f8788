use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::Serialize;
use trapnode_hwmodel::power::{
    builtin_scenario_text, parse_scenario, parse_trace, simulate, uniform_arrivals,
    wake_cycle_energy, EnergyLedger, PayloadPolicy, PowerError, Scenario, BUILTIN_SCENARIOS,
};

use crate::error::{read_text, CliError, CliResult};
use crate::manifest::{emit, emit_summary, num, RunManifest, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Counters,
    Images,
}

impl PolicyArg {
    fn policy(self) -> PayloadPolicy {
        match self {
            PolicyArg::Counters => PayloadPolicy::CountersEveryWake,
            PolicyArg::Images => PayloadPolicy::ImagePerDetection,
        }
    }
}

#[derive(Debug, Args)]
pub struct PowerArgs {
    /// Built-in scenario name or a scenario TOML file.
    #[arg(long, default_value = "gap9_viola_jones")]
    pub scenario: String,
    /// Wake period in seconds.
    #[arg(long)]
    pub period: Option<f64>,
    #[arg(long, value_enum)]
    pub policy: Option<PolicyArg>,
    #[arg(long)]
    pub detections_per_day: Option<f64>,
    #[arg(long)]
    pub sleep_uw: Option<f64>,
    #[arg(long)]
    pub battery_mah: Option<f64>,
    /// Run the wake/sleep simulator over this arrival trace (one timestamp
    /// in seconds per line).
    #[arg(long, conflicts_with = "simulate_uniform")]
    pub simulate: Option<PathBuf>,
    /// Run the simulator with evenly spaced arrivals at the scenario's
    /// detections-per-day rate.
    #[arg(long)]
    pub simulate_uniform: bool,
    /// Simulated horizon in days.
    #[arg(long, default_value_t = 30.0)]
    pub days: f64,
    /// Ledger CSV, or the wake timeline when simulating; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

// Every power failure traces back to a scenario value or a trace.
fn power_error(e: PowerError) -> CliError {
    CliError::input(e)
}

fn resolve_scenario(spec: &str) -> CliResult<(String, String)> {
    if let Some(text) = builtin_scenario_text(spec) {
        return Ok((format!("builtin:{spec}"), text.to_string()));
    }
    let p = Path::new(spec);
    if p.is_file() {
        return Ok((p.display().to_string(), read_text(p)?));
    }
    Err(CliError::input(format!(
        "scenario {spec:?} is neither a file nor one of {}",
        BUILTIN_SCENARIOS.join(", ")
    )))
}

#[derive(Serialize)]
struct DailySummary {
    scenario: Scenario,
    wakes_per_day: f64,
    wake_energy_mj: f64,
    ledger: EnergyLedger,
    lifetime_days_whole: u64,
}

#[derive(Serialize)]
struct SimSummary {
    scenario: Scenario,
    wakes: usize,
    arrivals: usize,
    elapsed_s: f64,
    exhausted_at_s: Option<f64>,
    battery_remaining_j: f64,
    ledger: EnergyLedger,
    closed_form: EnergyLedger,
}

pub fn run(a: &PowerArgs) -> CliResult<()> {
    let mut m = RunManifest::new("power");
    let (name, text) = resolve_scenario(&a.scenario)?;
    m.input(name.clone(), text.as_bytes());
    let mut sc: Scenario =
        parse_scenario(&text).map_err(|e| CliError::input(format!("{name}: {e}")))?;
    if let Some(p) = a.period {
        sc.duty_cycle.wake_period_s = p;
    }
    if let Some(p) = a.policy {
        sc.duty_cycle.payload_policy = p.policy();
    }
    if let Some(d) = a.detections_per_day {
        sc.duty_cycle.detections_per_day = d;
    }
    if let Some(s) = a.sleep_uw {
        sc.duty_cycle.sleep_power_uw = s;
    }
    if let Some(c) = a.battery_mah {
        sc.battery.capacity_mah = c;
    }
    sc.validate().map_err(power_error)?;
    m.param("period_s", sc.duty_cycle.wake_period_s)
        .param("policy", sc.duty_cycle.payload_policy.name())
        .param("detections_per_day", sc.duty_cycle.detections_per_day)
        .param("sleep_uw", sc.duty_cycle.sleep_power_uw)
        .param("battery_mah", sc.battery.capacity_mah);
    let daily = sc.daily().map_err(power_error)?;

    let arrivals = if let Some(trace) = &a.simulate {
        let t = read_text(trace)?;
        m.input(trace.display().to_string(), t.as_bytes());
        Some(parse_trace(&t).map_err(|e| CliError::input(format!("{}: {e}", trace.display())))?)
    } else if a.simulate_uniform {
        let per_day = sc.duty_cycle.detections_per_day;
        if per_day.fract() != 0.0 {
            return Err(CliError::input(
                "--simulate-uniform needs a whole number of detections per day",
            ));
        }
        Some(uniform_arrivals(per_day as u64, a.days.ceil() as u64))
    } else {
        None
    };

    match arrivals {
        None => {
            let mut table = Table::new(&["component", "joules_per_day"]);
            for (k, v) in [
                ("compute", daily.compute_j),
                ("radio", daily.radio_j),
                ("camera", daily.camera_j),
                ("sleep", daily.sleep_j),
                ("overhead", daily.overhead_j),
                ("total", daily.daily_j),
            ] {
                table.row(vec![k.to_string(), num(v, 6)]);
            }
            emit(a.out.as_deref(), &table.render(&m))?;
            let payload = match sc.duty_cycle.payload_policy {
                PayloadPolicy::CountersEveryWake => sc.duty_cycle.counter_payload_bytes,
                PayloadPolicy::ImagePerDetection => 0,
            };
            emit_summary(
                a.summary.as_ref(),
                &m,
                &DailySummary {
                    scenario: sc,
                    wakes_per_day: sc.duty_cycle.wakes_per_day(),
                    wake_energy_mj: wake_cycle_energy(&sc.phase, payload),
                    ledger: daily,
                    lifetime_days_whole: daily.lifetime_days.floor() as u64,
                },
            )
        }
        Some(arr) => {
            m.param("days", a.days);
            let sim = simulate(&sc.phase, &sc.duty_cycle, &sc.battery, &arr, a.days)
                .map_err(power_error)?;
            let mut table = Table::new(&[
                "wake",
                "time_s",
                "detections",
                "payload_bytes",
                "energy_mj",
                "battery_j",
            ]);
            for w in &sim.timeline {
                table.row(vec![
                    w.index.to_string(),
                    num(w.time_s, 3),
                    w.detections.to_string(),
                    w.payload_bytes.to_string(),
                    num(w.energy_mj, 6),
                    num(w.battery_j, 6),
                ]);
            }
            emit(a.out.as_deref(), &table.render(&m))?;
            emit_summary(
                a.summary.as_ref(),
                &m,
                &SimSummary {
                    scenario: sc,
                    wakes: sim.timeline.len(),
                    arrivals: arr.len(),
                    elapsed_s: sim.elapsed_s,
                    exhausted_at_s: sim.exhausted_at_s,
                    battery_remaining_j: sim.battery_remaining_j,
                    ledger: sim.ledger,
                    closed_form: daily,
                },
            )
        }
    }
}
