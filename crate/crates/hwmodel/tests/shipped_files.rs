//! The files under data/ load from disk exactly as the embedded copies do,
//! and the shipped graph schedules on both shipped platforms.

use std::path::PathBuf;

use trapnode_hwmodel::cnngraph::{
    builtin_graph, count_macs_total, graph_to_json, load_graph, parse_graph,
};
use trapnode_hwmodel::platform::{builtin_platform, load_platform, EXT_RAM, L2};
use trapnode_hwmodel::power::{builtin_scenario, daily_energy, load_scenario, BUILTIN_SCENARIOS};
use trapnode_hwmodel::sched::{schedule_and_estimate, BudgetConfig};

fn data(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(rel)
}

#[test]
fn graph_file_matches_builtin_and_round_trips() {
    let g = load_graph(&data("graphs/mbnv3_ssdlite_320x240.json")).unwrap();
    assert_eq!(g, builtin_graph());
    assert_eq!(parse_graph(&graph_to_json(&g)).unwrap(), g);
    assert_eq!(g.layers.len(), 166);
}

#[test]
fn platform_files_match_builtins() {
    for name in ["gap9", "gap8"] {
        let p = load_platform(&data(&format!("platforms/{name}.toml"))).unwrap();
        assert_eq!(p, builtin_platform(name).unwrap());
        assert_eq!(p.name, name);
    }
    assert!(builtin_platform("gap10").is_err());
}

#[test]
fn scenario_files_match_builtins() {
    for name in BUILTIN_SCENARIOS {
        let s = load_scenario(&data(&format!("scenarios/{name}.toml"))).unwrap();
        assert_eq!(s, builtin_scenario(name).unwrap());
        let daily = daily_energy(&s.phase, &s.duty_cycle, &s.battery)
            .unwrap()
            .daily_j;
        assert!(daily > 0.0 && daily.is_finite(), "{name}: {daily}");
    }
}

#[test]
fn shipped_graph_fits_both_platforms() {
    let g = builtin_graph();
    for name in ["gap9", "gap8"] {
        let p = builtin_platform(name).unwrap();
        let l2 = p.tier(L2).unwrap().capacity;
        let budget = BudgetConfig::new(46_700, 267_000);
        assert!(budget.l2_bytes <= l2);
        let (sched, rep) = schedule_and_estimate(&g, &p, &budget).unwrap();
        assert!(
            sched.l2_peak <= budget.l2_bytes,
            "{name}: L2 peak {}",
            sched.l2_peak
        );
        assert!(
            sched.ext_peak <= p.tier(EXT_RAM).unwrap().capacity,
            "{name}: ext peak {}",
            sched.ext_peak
        );
        assert_eq!(rep.macs, count_macs_total(&g));
        assert_eq!(rep.layers.len(), g.layers.len());
        let sum: f64 = rep.layers.iter().map(|l| l.total_cycles).sum();
        assert!((sum - rep.total_cycles).abs() <= 1e-6 * rep.total_cycles);
        assert!(rep.wall_time_s > 0.0);
    }
}
