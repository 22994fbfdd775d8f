//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use opwhf::model::{load_scenario, Scenario};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

pub fn fixture_text(name: &str) -> String {
    let path = format!("{}/../../fixtures/{name}.json", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

pub fn fixture(name: &str) -> Scenario {
    load_scenario(&fixture_text(name)).unwrap()
}

pub fn fixture_json(name: &str) -> Value {
    serde_json::from_str(&fixture_text(name)).unwrap()
}

pub fn from_json(v: &Value) -> Scenario {
    load_scenario(&v.to_string()).unwrap()
}

/// Smallest structurally valid scenario: two power nodes, reservoir and
/// junction, one CHP feeding one load, one slot.
pub fn minimal_json() -> Value {
    json!({
        "schema_version": "1",
        "horizon": {"slot_count": 1, "slot_duration_s": 3600.0},
        "power": {
            "s_base_va": 1e6, "slack": "E0",
            "nodes": [{"id": "E0"}, {"id": "E1", "p_load": [0.5], "q_load": [0.1]}],
            "lines": [{"id": "L01", "from": "E0", "to": "E1", "r": 0.01, "x": 0.02}],
            "ders": [], "pump_nodes": [], "chp_nodes": ["E1"]
        },
        "water": {
            "junctions": [{"id": "W2", "min_head": 10.0, "demand": [0.02]}],
            "reservoirs": [{"id": "W1", "head": 25.0}],
            "pipes": [{"id": "D12", "from": "W1", "to": "W2", "kind": {"type": "plain", "friction": 100.0}, "max_flow": 0.1}]
        },
        "heat": {
            "ambient": [8.0],
            "chps": [chp_json()],
            "loads": [{"id": "H2", "demand": [1.5e6], "return_temp_min": 30.0, "return_temp_max": 60.0, "min_head_drop": 5.0, "max_flow": 0.05}],
            "supply_pipes": [{"id": "SH1_H2", "from": "H1", "to": "H2", "friction": 20000.0, "xi": 1.5e-4, "max_flow": 0.05}],
            "return_pipes": [{"id": "RH2_H1", "from": "H2", "to": "H1", "friction": 20000.0, "xi": 1.5e-4, "max_flow": 0.05}]
        },
        "coupling": {"wp": {}, "hp": {"H1": "E1"}},
        "prices": {"electricity": [1e-4], "water": [0.002]}
    })
}

pub fn chp_json() -> Value {
    json!({
        "id": "H1",
        "points": [
            {"p": 0.2e6, "q": 0.05e6, "heat": 0.0, "cost": 20.0},
            {"p": 1.0e6, "q": 0.25e6, "heat": 0.0, "cost": 90.0},
            {"p": 0.8e6, "q": 0.2e6, "heat": 3.5e6, "cost": 130.0},
            {"p": 0.15e6, "q": 0.04e6, "heat": 3.0e6, "cost": 60.0}
        ],
        "supply_temp_min": 70.0, "supply_temp_max": 100.0,
        "pump": {"a": 30000.0, "b": 200.0, "c": 60.0, "efficiency": 0.81},
        "max_flow": 0.06
    })
}

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

/// Coupled scenario drawn from `seed`: a five-bus feeder with a costly DER,
/// a pumped tank supplying one junction, a CHP serving two loads, and a
/// time-varying electricity price over six slots.
pub fn random_coupled(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let slots = 6;
    let shape: Vec<f64> = (0..slots).map(|t| 0.8 + 0.4 * ((t as f64) * 0.9).sin().abs()).collect();
    let prof = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| -> Vec<f64> {
        let base = rng.gen_range(lo..hi);
        shape.iter().map(|s| round6(base * s)).collect()
    };
    let mut nodes = vec![json!({"id": "E0"})];
    for i in 1..5 {
        let p = prof(&mut rng, 0.05, 0.3);
        let q: Vec<f64> = p.iter().map(|v| round6(0.4 * v)).collect();
        nodes.push(json!({"id": format!("E{i}"), "p_load": p, "q_load": q}));
    }
    let mut lines = Vec::new();
    for (a, b) in [(0, 1), (1, 2), (2, 3), (2, 4)] {
        let r = round6(rng.gen_range(0.003..0.015));
        let x = round6(rng.gen_range(0.003..0.015));
        lines.push(json!({"id": format!("L{a}{b}"), "from": format!("E{a}"), "to": format!("E{b}"), "r": r, "x": x}));
    }
    let der = json!({
        "id": "DG_E3", "node": "E3",
        "p_min": vec![0.0; slots], "p_max": vec![0.3; slots],
        "q_min": vec![-0.1; slots], "q_max": vec![0.1; slots],
        "cost_linear": round6(rng.gen_range(30.0..90.0)), "cost_quadratic": round6(rng.gen_range(0.0..30.0))
    });
    let demand = prof(&mut rng, 0.03, 0.07);
    let water = json!({
        "junctions": [{"id": "W3", "min_head": 18.0, "demand": demand}],
        "tanks": [{"id": "TK2", "inlet": "W2", "outlet": "W2'", "cross_section": round6(rng.gen_range(200.0..600.0)),
                   "initial_head": 33.0, "min_head": 30.0, "terminal_min_head": 33.0}],
        "reservoirs": [{"id": "W1", "head": 25.0}],
        "pipes": [
            {"id": "P12", "from": "W1", "to": "W2", "kind": {"type": "pump", "a": 150.0, "b": 10.0, "c": 40.0, "efficiency": 0.81}, "max_flow": 0.2},
            {"id": "D23", "from": "W2'", "to": "W3", "kind": {"type": "plain", "friction": round6(rng.gen_range(100.0..400.0))}, "max_flow": 0.2}
        ]
    });
    let heat_loads: Vec<Value> = ["H2", "H3"]
        .iter()
        .map(|id| {
            json!({"id": id, "demand": prof(&mut rng, 0.6e6, 1.1e6), "return_temp_min": 30.0,
                   "return_temp_max": 60.0, "min_head_drop": 5.0, "max_flow": 0.05})
        })
        .collect();
    let pipe = |id: &str, a: &str, b: &str, f: f64| json!({"id": id, "from": a, "to": b, "friction": f, "xi": 1.5e-4, "max_flow": 0.05});
    let (f12, f23) = (round6(rng.gen_range(1e4..3e4)), round6(rng.gen_range(1e4..3e4)));
    let heat = json!({
        "ambient": vec![8.0; slots],
        "chps": [chp_json()],
        "loads": heat_loads,
        "supply_pipes": [pipe("SH1_H2", "H1", "H2", f12), pipe("SH2_H3", "H2", "H3", f23)],
        "return_pipes": [pipe("RH2_H1", "H2", "H1", f12), pipe("RH3_H2", "H3", "H2", f23)]
    });
    let base = rng.gen_range(0.04..0.08);
    let swing = rng.gen_range(0.3..0.8);
    let price: Vec<f64> = (0..slots)
        .map(|t| round6(base * (1.0 + swing * ((t as f64) * std::f64::consts::PI / 3.0).sin())) * 1e-3)
        .collect();
    let doc = json!({
        "schema_version": "1",
        "horizon": {"slot_count": slots, "slot_duration_s": 3600.0},
        "power": {"s_base_va": 1e6, "slack": "E0", "nodes": nodes, "lines": lines, "ders": [der],
                  "pump_nodes": ["E4"], "chp_nodes": ["E3"]},
        "water": water,
        "heat": heat,
        "coupling": {"wp": {"P12": "E4"}, "hp": {"H1": "E3"}},
        "prices": {"electricity": price, "water": vec![0.002; slots]}
    });
    from_json(&doc)
}
