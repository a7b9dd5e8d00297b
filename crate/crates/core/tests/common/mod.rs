#![allow(dead_code)]

use std::path::PathBuf;

use ivtp::ledger::Chain;
use ivtp::report::RunReport;
use ivtp::scenario::ScenarioConfig;
use ivtp::sim::RunOutput;

pub const BUNDLED: [&str; 5] = [
    "intersection_table2",
    "broadcast_round",
    "five_vehicle_network",
    "lossy_intersection",
    "two_intersections",
];

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.json"))
}

pub fn scenario(name: &str) -> ScenarioConfig {
    ScenarioConfig::load(&scenario_path(name)).expect("bundled scenario loads")
}

pub fn report(out: &RunOutput) -> RunReport {
    RunReport::build(&out.chain, &out.trace_bytes()).expect("report builds")
}

/// First height at which total supply differs from registrations times the
/// endowment, replaying every prefix of the chain.
pub fn conservation_violation(chain: &Chain) -> Option<u64> {
    let blocks = chain.blocks();
    (0..blocks.len()).find_map(|h| {
        let prefix = Chain::from_blocks(blocks[..=h].to_vec()).expect("prefix of a valid chain");
        let state = prefix.state();
        let expected = state.registrations.len() as u128 * prefix.params().endowment as u128;
        (state.total_supply() != expected).then_some(h as u64)
    })
}

/// Short Table 2 run with one intersection and four vehicles whose random
/// seed and drop rate are supplied by the caller.
pub fn short_intersection(seed: u64, drop: f64) -> ScenarioConfig {
    let mut cfg = scenario("intersection_table2");
    cfg.network.seed = seed;
    cfg.network.drop_probability = drop;
    cfg.network.jitter_ms = 4;
    cfg.run.t_end_ms = 1800;
    cfg
}
