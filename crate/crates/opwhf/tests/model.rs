mod common;

use opwhf::model::{load_scenario, validate_scenario, LoadError, WaterRole};
use proptest::prelude::*;
use serde_json::json;

#[test]
fn minimal_document_loads_with_one_slot() {
    let s = common::from_json(&common::minimal_json());
    assert_eq!(s.horizon.slot_count, 1);
    assert_eq!(s.slots(), 1);
    assert!(validate_scenario(&s).is_clean(), "{:?}", validate_scenario(&s).findings);
    // defaults applied
    assert_eq!(s.water.density, 1000.0);
    assert!((s.power.nodes[0].v_lo - 0.95f64.powi(2)).abs() < 1e-15);
}

#[test]
fn pump_referencing_undeclared_power_node_is_a_reference_error() {
    let mut doc = common::minimal_json();
    doc["water"]["pipes"][0]["kind"] = json!({"type": "pump", "a": 150.0, "b": 10.0, "c": 30.0, "efficiency": 0.81});
    doc["coupling"]["wp"] = json!({"D12": "E9"});
    match load_scenario(&doc.to_string()) {
        Err(LoadError::Reference(msg)) => assert!(msg.contains("E9"), "{msg}"),
        other => panic!("expected reference error, got {other:?}"),
    }
}

#[test]
fn malformed_and_schema_errors() {
    assert!(matches!(load_scenario("{not json"), Err(LoadError::Parse(_))));
    let mut doc = common::minimal_json();
    doc.as_object_mut().unwrap().remove("prices");
    assert!(matches!(load_scenario(&doc.to_string()), Err(LoadError::Schema(_))));
}

#[test]
fn fig1_counts_and_validates_clean() {
    let s = common::fixture("fig1_topology");
    let idx = s.index().unwrap();
    assert_eq!(s.power.nodes.len(), 37);
    assert_eq!(s.heat.chps.len() + s.heat.loads.len() + s.heat.junctions.len(), 5);
    let tank_nodes = idx.water_role.iter().filter(|r| matches!(r, WaterRole::TankInlet(_) | WaterRole::TankOutlet(_))).count();
    assert_eq!(tank_nodes, 2);
    assert_eq!(idx.pumps.len(), 1);
    // the split tank W3/W3' is one physical node with two head variables
    assert_eq!(idx.water_nodes.len(), 6);
    let physical: std::collections::BTreeSet<_> = idx.water_nodes.iter().map(|n| n.trim_end_matches('\'')).collect();
    assert_eq!(physical.len(), 5);
    let r = validate_scenario(&s);
    assert!(r.is_clean(), "{:?}", r.findings);
}

#[test]
fn power_cycle_is_not_a_tree() {
    let mut doc = common::fixture_json("micro");
    doc["power"]["nodes"].as_array_mut().unwrap().push(json!({"id": "E2", "p_load": [0.1, 0.1], "q_load": [0.0, 0.0]}));
    let lines = doc["power"]["lines"].as_array_mut().unwrap();
    lines.push(json!({"id": "L12", "from": "E1", "to": "E2", "r": 0.01, "x": 0.02}));
    lines.push(json!({"id": "L02", "from": "E0", "to": "E2", "r": 0.01, "x": 0.02}));
    let s = load_scenario(&doc.to_string()).unwrap();
    let r = validate_scenario(&s);
    assert!(r.contains("not a tree"), "{:?}", r.findings);
    assert!(r.contains("cycle through lines L01, L12, L02"), "{:?}", r.findings);
}

#[test]
fn unpaired_supply_pipe_is_reported() {
    let mut doc = common::minimal_json();
    doc["heat"]["return_pipes"] = json!([]);
    let s = load_scenario(&doc.to_string()).unwrap();
    let r = validate_scenario(&s);
    assert!(r.findings.iter().any(|f| f.message.contains("SH1_H2")), "{:?}", r.findings);
    assert!(r.contains("pairing"), "{:?}", r.findings);
}

#[test]
fn every_fixture_round_trips() {
    for name in ["micro", "decoupled", "fig1_topology", "two_tier_price", "infeasible_heat"] {
        let s = common::fixture(name);
        let again = load_scenario(&s.to_json()).unwrap();
        assert_eq!(s, again, "{name}");
    }
}

#[test]
fn validation_is_pure() {
    let mut doc = common::minimal_json();
    doc["heat"]["return_pipes"] = json!([]);
    let s = load_scenario(&doc.to_string()).unwrap();
    assert_eq!(validate_scenario(&s), validate_scenario(&s));
}

#[test]
fn loading_is_deterministic() {
    let text = common::fixture_text("fig1_topology");
    assert_eq!(load_scenario(&text).unwrap(), load_scenario(&text).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn random_coupled_fixtures_round_trip(seed in 0u64..1000) {
        let s = common::random_coupled(seed);
        prop_assert!(validate_scenario(&s).is_clean());
        prop_assert_eq!(load_scenario(&s.to_json()).unwrap(), s);
    }
}
