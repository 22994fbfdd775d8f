use opwhf::model::{load_scenario, validate_scenario};

#[test]
fn all_fixtures_load_and_validate() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures");
    for name in ["fig1_topology", "micro", "decoupled", "two_tier_price", "infeasible_heat"] {
        let text = std::fs::read_to_string(format!("{dir}/{name}.json")).unwrap();
        let s = load_scenario(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        let r = validate_scenario(&s);
        assert!(r.is_clean(), "{name}: {:?}", r.findings);
    }
}
