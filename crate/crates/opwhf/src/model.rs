//! Scenario schema, loading and structural validation.
//!
//! Units: the power network is per-unit on `s_base_va`; voltages are squared
//! magnitudes. Hydraulic and thermal quantities are SI (m, m³/s, W, °C).
//! Coupling quantities (pump draw, CHP output) are carried in W / var.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("reference error: {0}")]
    Reference(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Horizon {
    pub slot_count: usize,
    pub slot_duration_s: f64,
}

impl Horizon {
    pub fn slot_hours(&self) -> f64 {
        self.slot_duration_s / 3600.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerNode {
    pub id: String,
    /// Active load per slot, pu.
    #[serde(default)]
    pub p_load: Vec<f64>,
    /// Reactive load per slot, pu.
    #[serde(default)]
    pub q_load: Vec<f64>,
    /// Squared-voltage bounds, pu².
    #[serde(default = "default_v_lo")]
    pub v_lo: f64,
    #[serde(default = "default_v_hi")]
    pub v_hi: f64,
}

fn default_v_lo() -> f64 {
    0.95 * 0.95
}
fn default_v_hi() -> f64 {
    1.1 * 1.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Line {
    pub id: String,
    pub from: String,
    pub to: String,
    pub r: f64,
    pub x: f64,
}

impl Line {
    pub fn z_sq(&self) -> f64 {
        self.r * self.r + self.x * self.x
    }
}

/// Controllable DER: box on (p, q) per slot, optional apparent-power cap,
/// cost per slot `cost_linear * p + cost_quadratic * p²` with p in pu.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Der {
    pub id: String,
    pub node: String,
    pub p_min: Vec<f64>,
    pub p_max: Vec<f64>,
    pub q_min: Vec<f64>,
    pub q_max: Vec<f64>,
    #[serde(default)]
    pub s_max: Option<f64>,
    #[serde(default)]
    pub cost_linear: f64,
    #[serde(default)]
    pub cost_quadratic: f64,
}

impl Der {
    pub fn cost(&self, p: f64) -> f64 {
        self.cost_linear * p + self.cost_quadratic * p * p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerNetwork {
    pub s_base_va: f64,
    pub slack: String,
    #[serde(default = "one")]
    pub slack_voltage_sq: f64,
    pub nodes: Vec<PowerNode>,
    pub lines: Vec<Line>,
    #[serde(default)]
    pub ders: Vec<Der>,
    #[serde(default)]
    pub pump_nodes: Vec<String>,
    #[serde(default)]
    pub chp_nodes: Vec<String>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Junction {
    pub id: String,
    pub min_head: f64,
    /// Demand per slot, m³/s.
    pub demand: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tank {
    pub id: String,
    pub inlet: String,
    pub outlet: String,
    pub cross_section: f64,
    pub initial_head: f64,
    pub min_head: f64,
    /// Lower bound on the outlet head at the end of the horizon.
    #[serde(default)]
    pub terminal_min_head: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Reservoir {
    pub id: String,
    pub head: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PumpCurve {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub efficiency: f64,
}

impl PumpCurve {
    /// Largest head gain the pump can deliver at flow `q`.
    pub fn max_gain(&self, q: f64) -> f64 {
        -self.a * q * q + self.b * q + self.c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum WaterPipeKind {
    Pump(PumpCurve),
    Valve,
    Plain { friction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaterPipe {
    pub id: String,
    pub from: String,
    pub to: String,
    pub kind: WaterPipeKind,
    #[serde(default = "one")]
    pub max_flow: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaterNetwork {
    #[serde(default = "default_density")]
    pub density: f64,
    #[serde(default = "default_gravity")]
    pub gravity: f64,
    #[serde(default)]
    pub junctions: Vec<Junction>,
    #[serde(default)]
    pub tanks: Vec<Tank>,
    #[serde(default)]
    pub reservoirs: Vec<Reservoir>,
    #[serde(default)]
    pub pipes: Vec<WaterPipe>,
}

fn default_density() -> f64 {
    1000.0
}
fn default_gravity() -> f64 {
    9.81
}
fn default_heat_capacity() -> f64 {
    4.18e6
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChpPoint {
    /// Active power, W.
    pub p: f64,
    /// Reactive power, var.
    pub q: f64,
    /// Heat, W.
    pub heat: f64,
    /// Cost per slot when operating at this vertex, $.
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Chp {
    pub id: String,
    pub points: Vec<ChpPoint>,
    pub supply_temp_min: f64,
    pub supply_temp_max: f64,
    pub pump: PumpCurve,
    #[serde(default = "one")]
    pub max_flow: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatLoad {
    pub id: String,
    /// Delivered heat per slot, W.
    pub demand: Vec<f64>,
    pub return_temp_min: f64,
    pub return_temp_max: f64,
    pub min_head_drop: f64,
    #[serde(default = "one")]
    pub max_flow: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatJunction {
    pub id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatPipe {
    pub id: String,
    pub from: String,
    pub to: String,
    /// s²/m⁵.
    pub friction: f64,
    /// Thermal constant ξ, m³/s.
    pub xi: f64,
    #[serde(default = "one")]
    pub max_flow: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatNetwork {
    /// Volumetric heat capacity c, J/(m³·K).
    #[serde(default = "default_heat_capacity")]
    pub heat_capacity: f64,
    #[serde(default = "default_density")]
    pub density: f64,
    #[serde(default = "default_gravity")]
    pub gravity: f64,
    /// Ambient temperature per slot, °C.
    #[serde(default)]
    pub ambient: Vec<f64>,
    /// Return-side head at the first CHP; heads are otherwise defined only
    /// up to a constant.
    #[serde(default)]
    pub datum_head: f64,
    #[serde(default)]
    pub chps: Vec<Chp>,
    #[serde(default)]
    pub loads: Vec<HeatLoad>,
    #[serde(default)]
    pub junctions: Vec<HeatJunction>,
    #[serde(default)]
    pub supply_pipes: Vec<HeatPipe>,
    #[serde(default)]
    pub return_pipes: Vec<HeatPipe>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingMap {
    /// Water pump pipe id -> power node id.
    #[serde(default)]
    pub wp: BTreeMap<String, String>,
    /// CHP heat node id -> power node id.
    #[serde(default)]
    pub hp: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prices {
    /// $/Wh per slot.
    pub electricity: Vec<f64>,
    /// $/m³ per slot.
    pub water: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: String,
    pub horizon: Horizon,
    pub power: PowerNetwork,
    pub water: WaterNetwork,
    pub heat: HeatNetwork,
    #[serde(default)]
    pub coupling: CouplingMap,
    pub prices: Prices,
}

/// Heat-network node role.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeatRole {
    Chp(usize),
    Load(usize),
    Junction(usize),
}

/// Water-network node role.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WaterRole {
    Junction(usize),
    TankInlet(usize),
    TankOutlet(usize),
    Reservoir(usize),
}

/// Integer indices over a scenario, built once per use site.
#[derive(Debug, Clone)]
pub struct Index {
    pub power_node: HashMap<String, usize>,
    /// Line index entering each power node (None at the slack).
    pub power_parent: Vec<Option<usize>>,
    pub power_children: Vec<Vec<usize>>,
    pub power_from: Vec<usize>,
    pub power_to: Vec<usize>,
    pub slack: usize,
    pub water_nodes: Vec<String>,
    pub water_node: HashMap<String, usize>,
    pub water_role: Vec<WaterRole>,
    pub water_from: Vec<usize>,
    pub water_to: Vec<usize>,
    pub water_in: Vec<Vec<usize>>,
    pub water_out: Vec<Vec<usize>>,
    pub heat_nodes: Vec<String>,
    pub heat_node: HashMap<String, usize>,
    pub heat_role: Vec<HeatRole>,
    pub sup_from: Vec<usize>,
    pub sup_to: Vec<usize>,
    pub ret_from: Vec<usize>,
    pub ret_to: Vec<usize>,
    pub sup_in: Vec<Vec<usize>>,
    pub sup_out: Vec<Vec<usize>>,
    pub ret_in: Vec<Vec<usize>>,
    pub ret_out: Vec<Vec<usize>>,
    /// Pump pipes in declaration order.
    pub pumps: Vec<usize>,
    /// Power node feeding each pump (parallel to `pumps`).
    pub pump_bus: Vec<usize>,
    /// Power node feeding each CHP.
    pub chp_bus: Vec<usize>,
    /// Heat node of each CHP / load.
    pub chp_node: Vec<usize>,
    pub load_node: Vec<usize>,
    pub der_bus: Vec<usize>,
}

impl Index {
    /// Builds the index. Fails on dangling references.
    pub fn build(s: &Scenario) -> Result<Index, LoadError> {
        let refs = reference_findings(s);
        if let Some(f) = refs.first() {
            return Err(LoadError::Reference(f.message.clone()));
        }
        let p = &s.power;
        let power_node: HashMap<String, usize> =
            p.nodes.iter().enumerate().map(|(i, n)| (n.id.clone(), i)).collect();
        let n = p.nodes.len();
        let mut power_parent = vec![None; n];
        let mut power_children = vec![Vec::new(); n];
        let mut power_from = Vec::with_capacity(p.lines.len());
        let mut power_to = Vec::with_capacity(p.lines.len());
        for (li, l) in p.lines.iter().enumerate() {
            let f = power_node[&l.from];
            let t = power_node[&l.to];
            power_from.push(f);
            power_to.push(t);
            power_children[f].push(li);
            power_parent[t] = Some(li);
        }
        let slack = power_node[&p.slack];

        let w = &s.water;
        let mut water_nodes = Vec::new();
        let mut water_role = Vec::new();
        for (i, j) in w.junctions.iter().enumerate() {
            water_nodes.push(j.id.clone());
            water_role.push(WaterRole::Junction(i));
        }
        for (i, t) in w.tanks.iter().enumerate() {
            water_nodes.push(t.inlet.clone());
            water_role.push(WaterRole::TankInlet(i));
            water_nodes.push(t.outlet.clone());
            water_role.push(WaterRole::TankOutlet(i));
        }
        for (i, r) in w.reservoirs.iter().enumerate() {
            water_nodes.push(r.id.clone());
            water_role.push(WaterRole::Reservoir(i));
        }
        let water_node: HashMap<String, usize> =
            water_nodes.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        let mut water_in = vec![Vec::new(); water_nodes.len()];
        let mut water_out = vec![Vec::new(); water_nodes.len()];
        let mut water_from = Vec::new();
        let mut water_to = Vec::new();
        let mut pumps = Vec::new();
        let mut pump_bus = Vec::new();
        for (k, pipe) in w.pipes.iter().enumerate() {
            let f = water_node[&pipe.from];
            let t = water_node[&pipe.to];
            water_from.push(f);
            water_to.push(t);
            water_out[f].push(k);
            water_in[t].push(k);
            if let WaterPipeKind::Pump(_) = pipe.kind {
                pumps.push(k);
                let bus = s.coupling.wp.get(&pipe.id).and_then(|b| power_node.get(b)).copied();
                pump_bus.push(bus.unwrap_or(usize::MAX));
            }
        }

        let h = &s.heat;
        let mut heat_nodes = Vec::new();
        let mut heat_role = Vec::new();
        let mut chp_node = Vec::new();
        let mut load_node = Vec::new();
        for (i, c) in h.chps.iter().enumerate() {
            chp_node.push(heat_nodes.len());
            heat_nodes.push(c.id.clone());
            heat_role.push(HeatRole::Chp(i));
        }
        for (i, l) in h.loads.iter().enumerate() {
            load_node.push(heat_nodes.len());
            heat_nodes.push(l.id.clone());
            heat_role.push(HeatRole::Load(i));
        }
        for (i, j) in h.junctions.iter().enumerate() {
            heat_nodes.push(j.id.clone());
            heat_role.push(HeatRole::Junction(i));
        }
        let heat_node: HashMap<String, usize> =
            heat_nodes.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        let hn = heat_nodes.len();
        let mut sup_in = vec![Vec::new(); hn];
        let mut sup_out = vec![Vec::new(); hn];
        let mut ret_in = vec![Vec::new(); hn];
        let mut ret_out = vec![Vec::new(); hn];
        let mut sup_from = Vec::new();
        let mut sup_to = Vec::new();
        let mut ret_from = Vec::new();
        let mut ret_to = Vec::new();
        for (k, pipe) in h.supply_pipes.iter().enumerate() {
            let f = heat_node[&pipe.from];
            let t = heat_node[&pipe.to];
            sup_from.push(f);
            sup_to.push(t);
            sup_out[f].push(k);
            sup_in[t].push(k);
        }
        for (k, pipe) in h.return_pipes.iter().enumerate() {
            let f = heat_node[&pipe.from];
            let t = heat_node[&pipe.to];
            ret_from.push(f);
            ret_to.push(t);
            ret_out[f].push(k);
            ret_in[t].push(k);
        }
        let chp_bus = h
            .chps
            .iter()
            .map(|c| {
                s.coupling.hp.get(&c.id).and_then(|b| power_node.get(b)).copied().unwrap_or(usize::MAX)
            })
            .collect();
        let der_bus = p.ders.iter().map(|d| power_node[&d.node]).collect();
        Ok(Index {
            power_node,
            power_parent,
            power_children,
            power_from,
            power_to,
            slack,
            water_nodes,
            water_node,
            water_role,
            water_from,
            water_to,
            water_in,
            water_out,
            heat_nodes,
            heat_node,
            heat_role,
            sup_from,
            sup_to,
            ret_from,
            ret_to,
            sup_in,
            sup_out,
            ret_in,
            ret_out,
            pumps,
            pump_bus,
            chp_bus,
            chp_node,
            load_node,
            der_bus,
        })
    }
}

impl Scenario {
    pub fn index(&self) -> Result<Index, LoadError> {
        Index::build(self)
    }

    pub fn slots(&self) -> usize {
        self.horizon.slot_count
    }

    /// True when there is nothing to coordinate between sectors.
    pub fn is_decoupled(&self) -> bool {
        let pumps = self.water.pipes.iter().any(|p| matches!(p.kind, WaterPipeKind::Pump(_)));
        !pumps && self.heat.chps.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

/// Parses a scenario document and checks schema, profile lengths and references.
pub fn load_scenario(text: &str) -> Result<Scenario, LoadError> {
    let mut s: Scenario = serde_json::from_str(text).map_err(|e| match e.classify() {
        serde_json::error::Category::Data => LoadError::Schema(e.to_string()),
        _ => LoadError::Parse(e.to_string()),
    })?;
    if s.schema_version != SCHEMA_VERSION {
        return Err(LoadError::Schema(format!(
            "unsupported schema_version {:?}, expected {:?}",
            s.schema_version, SCHEMA_VERSION
        )));
    }
    apply_defaults(&mut s);
    if let Some(msg) = profile_errors(&s).into_iter().next() {
        return Err(LoadError::Schema(msg));
    }
    if let Some(f) = reference_findings(&s).into_iter().next() {
        return Err(LoadError::Reference(f.message));
    }
    Ok(s)
}

/// Empty load profiles mean "zero in every slot".
fn apply_defaults(s: &mut Scenario) {
    let t = s.horizon.slot_count;
    for n in &mut s.power.nodes {
        if n.p_load.is_empty() {
            n.p_load = vec![0.0; t];
        }
        if n.q_load.is_empty() {
            n.q_load = vec![0.0; t];
        }
    }
    if s.heat.ambient.is_empty() {
        s.heat.ambient = vec![10.0; t];
    }
}

fn profile_errors(s: &Scenario) -> Vec<String> {
    let t = s.horizon.slot_count;
    let mut out = Vec::new();
    let mut check = |what: String, len: usize| {
        if len != t {
            out.push(format!("profile {what} has length {len}, horizon has {t} slots"));
        }
    };
    for n in &s.power.nodes {
        check(format!("power.{}.p_load", n.id), n.p_load.len());
        check(format!("power.{}.q_load", n.id), n.q_load.len());
    }
    for d in &s.power.ders {
        check(format!("der.{}.p_min", d.id), d.p_min.len());
        check(format!("der.{}.p_max", d.id), d.p_max.len());
        check(format!("der.{}.q_min", d.id), d.q_min.len());
        check(format!("der.{}.q_max", d.id), d.q_max.len());
    }
    for j in &s.water.junctions {
        check(format!("water.{}.demand", j.id), j.demand.len());
    }
    for l in &s.heat.loads {
        check(format!("heat.{}.demand", l.id), l.demand.len());
    }
    check("heat.ambient".into(), s.heat.ambient.len());
    check("prices.electricity".into(), s.prices.electricity.len());
    check("prices.water".into(), s.prices.water.len());
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn contains(&self, needle: &str) -> bool {
        self.findings.iter().any(|f| f.message.contains(needle) || f.code.contains(needle))
    }
}

fn finding(code: &str, message: String) -> Finding {
    Finding { code: code.to_string(), message }
}

fn reference_findings(s: &Scenario) -> Vec<Finding> {
    let mut out = Vec::new();
    let power: HashSet<&str> = s.power.nodes.iter().map(|n| n.id.as_str()).collect();
    let mut dangling = |what: String| out.push(finding("reference", what));
    if !power.contains(s.power.slack.as_str()) {
        dangling(format!("slack node {} is not declared", s.power.slack));
    }
    for l in &s.power.lines {
        for end in [&l.from, &l.to] {
            if !power.contains(end.as_str()) {
                dangling(format!("line {} references undeclared power node {}", l.id, end));
            }
        }
    }
    for d in &s.power.ders {
        if !power.contains(d.node.as_str()) {
            dangling(format!("der {} references undeclared power node {}", d.id, d.node));
        }
    }
    for id in s.power.pump_nodes.iter().chain(&s.power.chp_nodes) {
        if !power.contains(id.as_str()) {
            dangling(format!("pump/chp node {id} is not a declared power node"));
        }
    }
    let mut water: HashSet<&str> = HashSet::new();
    for j in &s.water.junctions {
        water.insert(&j.id);
    }
    for t in &s.water.tanks {
        water.insert(&t.inlet);
        water.insert(&t.outlet);
    }
    for r in &s.water.reservoirs {
        water.insert(&r.id);
    }
    for p in &s.water.pipes {
        for end in [&p.from, &p.to] {
            if !water.contains(end.as_str()) {
                dangling(format!("water pipe {} references undeclared node {}", p.id, end));
            }
        }
    }
    let pipes: HashSet<&str> = s.water.pipes.iter().map(|p| p.id.as_str()).collect();
    for (pipe, bus) in &s.coupling.wp {
        if !pipes.contains(pipe.as_str()) {
            dangling(format!("coupling wp references undeclared pipe {pipe}"));
        }
        if !power.contains(bus.as_str()) {
            dangling(format!("pump pipe {pipe} references undeclared power node {bus}"));
        }
    }
    let mut heat: HashSet<&str> = HashSet::new();
    for c in &s.heat.chps {
        heat.insert(&c.id);
    }
    for l in &s.heat.loads {
        heat.insert(&l.id);
    }
    for j in &s.heat.junctions {
        heat.insert(&j.id);
    }
    for p in s.heat.supply_pipes.iter().chain(&s.heat.return_pipes) {
        for end in [&p.from, &p.to] {
            if !heat.contains(end.as_str()) {
                dangling(format!("heat pipe {} references undeclared node {}", p.id, end));
            }
        }
    }
    let chps: HashSet<&str> = s.heat.chps.iter().map(|c| c.id.as_str()).collect();
    for (chp, bus) in &s.coupling.hp {
        if !chps.contains(chp.as_str()) {
            dangling(format!("coupling hp references undeclared chp {chp}"));
        }
        if !power.contains(bus.as_str()) {
            dangling(format!("chp {chp} references undeclared power node {bus}"));
        }
    }
    out
}

fn duplicate_ids<'a>(what: &str, ids: impl Iterator<Item = &'a String>, out: &mut Vec<Finding>) {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            out.push(finding("duplicate", format!("duplicate {what} id {id}")));
        }
    }
}

/// Lists every violated structural invariant. Empty report means the scenario
/// is admissible for the solver.
pub fn validate_scenario(s: &Scenario) -> ValidationReport {
    let mut out = reference_findings(s);
    for msg in profile_errors(s) {
        out.push(finding("profile", msg));
    }
    if s.horizon.slot_count == 0 {
        out.push(finding("horizon", "slot_count must be at least 1".into()));
    }
    if !(s.horizon.slot_duration_s > 0.0) {
        out.push(finding("horizon", "slot_duration_s must be positive".into()));
    }
    duplicate_ids("power node", s.power.nodes.iter().map(|n| &n.id), &mut out);
    duplicate_ids("power line", s.power.lines.iter().map(|l| &l.id), &mut out);
    duplicate_ids("water pipe", s.water.pipes.iter().map(|p| &p.id), &mut out);
    duplicate_ids(
        "water node",
        s.water
            .junctions
            .iter()
            .map(|j| &j.id)
            .chain(s.water.tanks.iter().flat_map(|t| [&t.inlet, &t.outlet]))
            .chain(s.water.reservoirs.iter().map(|r| &r.id)),
        &mut out,
    );
    duplicate_ids(
        "heat node",
        s.heat
            .chps
            .iter()
            .map(|c| &c.id)
            .chain(s.heat.loads.iter().map(|l| &l.id))
            .chain(s.heat.junctions.iter().map(|j| &j.id)),
        &mut out,
    );
    let refs_ok = out.iter().all(|f| f.code != "reference" && f.code != "duplicate");
    if refs_ok {
        power_findings(s, &mut out);
        water_findings(s, &mut out);
        heat_findings(s, &mut out);
        coupling_findings(s, &mut out);
    }
    ValidationReport { findings: out }
}

/// Lines of the first undirected cycle closed while adding `edges` in order.
fn find_cycle(n: usize, edges: &[(usize, usize)]) -> Option<Vec<usize>> {
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (k, &(a, b)) in edges.iter().enumerate() {
        // path a -> b through the edges added so far
        let mut via: Vec<Option<(usize, usize)>> = vec![None; n];
        let mut seen = vec![false; n];
        let mut queue = std::collections::VecDeque::from([a]);
        seen[a] = true;
        while let Some(i) = queue.pop_front() {
            for &(j, e) in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    via[j] = Some((i, e));
                    queue.push_back(j);
                }
            }
        }
        if a == b || seen[b] {
            let mut lines = vec![k];
            let mut i = b;
            while let Some((prev, e)) = via[i] {
                lines.push(e);
                i = prev;
            }
            lines.sort_unstable();
            return Some(lines);
        }
        adj[a].push((b, k));
        adj[b].push((a, k));
    }
    None
}

fn power_findings(s: &Scenario, out: &mut Vec<Finding>) {
    let p = &s.power;
    if !(p.s_base_va > 0.0) {
        out.push(finding("power", "s_base_va must be positive".into()));
    }
    let idx: HashMap<&str, usize> = p.nodes.iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect();
    let n = p.nodes.len();
    let mut indeg = vec![0usize; n];
    let mut children = vec![Vec::new(); n];
    for l in &p.lines {
        let f = idx[l.from.as_str()];
        let t = idx[l.to.as_str()];
        indeg[t] += 1;
        children[f].push(t);
        if l.r < 0.0 {
            out.push(finding("power", format!("line {} has negative resistance", l.id)));
        }
    }
    let root = idx[p.slack.as_str()];
    let mut tree = p.lines.len() + 1 == n && indeg[root] == 0;
    tree &= (0..n).all(|i| i == root || indeg[i] == 1);
    let mut seen = vec![false; n];
    let mut stack = vec![root];
    let mut reached = 0;
    while let Some(i) = stack.pop() {
        if seen[i] {
            tree = false;
            continue;
        }
        seen[i] = true;
        reached += 1;
        stack.extend(children[i].iter().copied());
    }
    if !tree || reached != n {
        let ends: Vec<(usize, usize)> = p.lines.iter().map(|l| (idx[l.from.as_str()], idx[l.to.as_str()])).collect();
        let cycle = match find_cycle(n, &ends) {
            Some(ls) => format!(", cycle through lines {}", ls.iter().map(|&k| p.lines[k].id.as_str()).collect::<Vec<_>>().join(", ")),
            None => String::new(),
        };
        out.push(finding(
            "power.tree",
            format!(
                "power network is not a tree rooted at {} ({} nodes, {} lines, {} reachable{cycle})",
                p.slack,
                n,
                p.lines.len(),
                reached
            ),
        ));
    }
    for node in &p.nodes {
        if !(node.v_lo < node.v_hi) {
            out.push(finding("power", format!("node {} has v_lo >= v_hi", node.id)));
        }
    }
    for d in &p.ders {
        for t in 0..d.p_min.len().min(d.p_max.len()) {
            if d.p_min[t] > d.p_max[t] {
                out.push(finding("power", format!("der {} has p_min > p_max in slot {t}", d.id)));
            }
        }
    }
}

fn check_pump(what: &str, c: &PumpCurve, out: &mut Vec<Finding>) {
    if !(c.a > 0.0 && c.b > 0.0 && c.c > 0.0) {
        out.push(finding("pump", format!("{what}: pump constants A, B, C must be positive")));
    }
    if !(c.efficiency > 0.0 && c.efficiency <= 1.0) {
        out.push(finding("pump", format!("{what}: efficiency must lie in (0, 1]")));
    }
}

fn water_findings(s: &Scenario, out: &mut Vec<Finding>) {
    let w = &s.water;
    for t in &w.tanks {
        if t.inlet == t.outlet {
            out.push(finding("tank", format!("tank {} must use distinct inlet and outlet nodes", t.id)));
        }
        if !(t.cross_section > 0.0) {
            out.push(finding("tank", format!("tank {} cross_section must be positive", t.id)));
        }
        for p in &w.pipes {
            let internal = (p.from == t.inlet && p.to == t.outlet) || (p.from == t.outlet && p.to == t.inlet);
            if internal {
                out.push(finding("tank", format!("tank {} has internal pipe {}", t.id, p.id)));
            }
            if p.from == t.inlet {
                out.push(finding("tank", format!("tank inlet {} has outgoing pipe {}", t.inlet, p.id)));
            }
            if p.to == t.outlet {
                out.push(finding("tank", format!("tank outlet {} has incoming pipe {}", t.outlet, p.id)));
            }
        }
    }
    for p in &w.pipes {
        match &p.kind {
            WaterPipeKind::Plain { friction } if !(*friction > 0.0) => {
                out.push(finding("water", format!("pipe {} friction must be positive", p.id)))
            }
            WaterPipeKind::Pump(c) => check_pump(&format!("pipe {}", p.id), c, out),
            _ => {}
        }
        if !(p.max_flow > 0.0) {
            out.push(finding("water", format!("pipe {} max_flow must be positive", p.id)));
        }
    }
}

fn heat_findings(s: &Scenario, out: &mut Vec<Finding>) {
    let h = &s.heat;
    for c in &h.chps {
        if c.points.is_empty() {
            out.push(finding("chp", format!("chp {} has no extreme points", c.id)));
        }
        if c.supply_temp_min > c.supply_temp_max {
            out.push(finding("chp", format!("chp {} supply temperature bounds inverted", c.id)));
        }
        check_pump(&format!("chp {}", c.id), &c.pump, out);
    }
    for l in &h.loads {
        if l.return_temp_min > l.return_temp_max {
            out.push(finding("heat", format!("load {} return temperature bounds inverted", l.id)));
        }
    }
    for p in h.supply_pipes.iter().chain(&h.return_pipes) {
        if !(p.friction > 0.0) {
            out.push(finding("heat", format!("heat pipe {} friction must be positive", p.id)));
        }
        if !(p.xi > 0.0) {
            out.push(finding("heat", format!("heat pipe {} thermal constant must be positive", p.id)));
        }
    }
    let ret: HashSet<(&str, &str)> = h.return_pipes.iter().map(|p| (p.from.as_str(), p.to.as_str())).collect();
    let sup: HashSet<(&str, &str)> = h.supply_pipes.iter().map(|p| (p.from.as_str(), p.to.as_str())).collect();
    for p in &h.supply_pipes {
        if !ret.contains(&(p.to.as_str(), p.from.as_str())) {
            out.push(finding(
                "heat.pairing",
                format!("supply pipe {} ({} -> {}) has no paired return pipe", p.id, p.from, p.to),
            ));
        }
    }
    for p in &h.return_pipes {
        if !sup.contains(&(p.to.as_str(), p.from.as_str())) {
            out.push(finding(
                "heat.pairing",
                format!("return pipe {} ({} -> {}) has no paired supply pipe", p.id, p.from, p.to),
            ));
        }
    }
}

fn coupling_findings(s: &Scenario, out: &mut Vec<Finding>) {
    let pump_nodes: HashSet<&str> = s.power.pump_nodes.iter().map(String::as_str).collect();
    let chp_nodes: HashSet<&str> = s.power.chp_nodes.iter().map(String::as_str).collect();
    for p in &s.water.pipes {
        if let WaterPipeKind::Pump(_) = p.kind {
            match s.coupling.wp.get(&p.id) {
                None => out.push(finding("coupling", format!("pump pipe {} has no supplying power node", p.id))),
                Some(bus) if !pump_nodes.contains(bus.as_str()) => out.push(finding(
                    "coupling",
                    format!("pump pipe {} maps to {} which is not a declared pump node", p.id, bus),
                )),
                _ => {}
            }
        }
    }
    for (pipe, _) in &s.coupling.wp {
        let is_pump = s
            .water
            .pipes
            .iter()
            .any(|p| &p.id == pipe && matches!(p.kind, WaterPipeKind::Pump(_)));
        if !is_pump {
            out.push(finding("coupling", format!("wp entry {pipe} is not a pump pipe")));
        }
    }
    for c in &s.heat.chps {
        match s.coupling.hp.get(&c.id) {
            None => out.push(finding("coupling", format!("chp {} has no power node", c.id))),
            Some(bus) if !chp_nodes.contains(bus.as_str()) => out.push(finding(
                "coupling",
                format!("chp {} maps to {} which is not a declared chp node", c.id, bus),
            )),
            _ => {}
        }
    }
    for bus in s.coupling.wp.values().chain(s.coupling.hp.values()) {
        if *bus == s.power.slack {
            out.push(finding("coupling", format!("coupling node {bus} must not be the slack node")));
        }
    }
}
