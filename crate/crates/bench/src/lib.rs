//! Fixtures shared by the benchmarks.

use instructdrive_core::behavior::autopilot_control;
use instructdrive_core::goal::Category;
use instructdrive_core::scenario::{generate_scenario, instantiate, Density, MapKind, Scenario};
use instructdrive_core::{run_episode, Driver, EpisodeOptions, EpisodeOutcome, IdmParams, WorldState};
use std::collections::BTreeMap;

/// Densest highway scenario of the given category.
pub fn dense_highway(category: Category, seed: u64) -> Scenario {
    generate_scenario(category, MapKind::Highway, Density::High, seed).expect("highway categories generate")
}

pub fn world(scenario: &Scenario) -> WorldState {
    instantiate(scenario).expect("generated scenarios instantiate")
}

/// One physics step with every vehicle on autopilot.
pub fn autopilot_step(world: &WorldState, idm: &IdmParams, dt: f64) -> WorldState {
    let controls: BTreeMap<_, _> = world.vehicles.iter().map(|v| (v.id, autopilot_control(v, world, &idm.for_vehicle(v)))).collect();
    instructdrive_core::step(world, &controls, dt).expect("autopilot keeps the world valid")
}

pub fn idm_episode(scenario: &Scenario) -> EpisodeOutcome {
    run_episode(scenario, Driver::Idm, &EpisodeOptions::default()).expect("idm episodes run")
}
