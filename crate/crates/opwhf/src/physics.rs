//! Exact evaluation of the nonconvex model: residuals, cost, closed-form laws.
//!
//! Relative residuals divide by `max(1, |lhs|, |rhs|)`; inequality residuals
//! are the positive part of the violation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{HeatRole, Index, Scenario, WaterPipeKind, WaterRole};

#[derive(Debug, Error)]
pub enum PhysicsError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("flow must be positive, got {0}")]
    NonpositiveFlow(f64),
    #[error(transparent)]
    Model(#[from] crate::model::LoadError),
}

/// Power-network state for one slot. Node arrays follow `power.nodes`, line
/// arrays follow `power.lines`, DER arrays follow `power.ders`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PowerState {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    pub p_line: Vec<f64>,
    pub q_line: Vec<f64>,
    pub l: Vec<f64>,
    pub der_p: Vec<f64>,
    pub der_q: Vec<f64>,
}

/// Water state for one slot. Flows follow `water.pipes`; heads follow the
/// node order junctions, tank inlet/outlet pairs, reservoirs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WaterState {
    pub q: Vec<f64>,
    pub h: Vec<f64>,
}

/// Heat state for one slot. Node arrays follow the order chps, loads,
/// junctions; pipe arrays follow `supply_pipes` / `return_pipes`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HeatState {
    pub alpha: Vec<Vec<f64>>,
    pub h_gen: Vec<f64>,
    pub q_rs: Vec<f64>,
    pub q_s: Vec<f64>,
    pub q_r: Vec<f64>,
    pub h_s: Vec<f64>,
    pub h_r: Vec<f64>,
    pub tau_s: Vec<f64>,
    pub tau_r: Vec<f64>,
    pub tau_s_out: Vec<f64>,
    pub tau_r_out: Vec<f64>,
}

/// Coupling quantities for one slot, SI units (W, var). CHP arrays follow
/// `heat.chps`; pump draw follows pump pipes in declaration order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CoupleState {
    pub p_gen: Vec<f64>,
    pub q_gen: Vec<f64>,
    pub p_hpump: Vec<f64>,
    pub p_wpump: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub power: Vec<PowerState>,
    pub water: Vec<WaterState>,
    pub heat: Vec<HeatState>,
    pub couple: Vec<CoupleState>,
}

impl Solution {
    /// All-zero solution with shapes matching the scenario.
    pub fn zeros(s: &Scenario, idx: &Index) -> Solution {
        let t = s.slots();
        let np = s.power.nodes.len();
        let nl = s.power.lines.len();
        let nd = s.power.ders.len();
        let power = PowerState {
            p: vec![0.0; np],
            q: vec![0.0; np],
            v: vec![0.0; np],
            p_line: vec![0.0; nl],
            q_line: vec![0.0; nl],
            l: vec![0.0; nl],
            der_p: vec![0.0; nd],
            der_q: vec![0.0; nd],
        };
        let water = WaterState { q: vec![0.0; s.water.pipes.len()], h: vec![0.0; idx.water_nodes.len()] };
        let hn = idx.heat_nodes.len();
        let ns = s.heat.supply_pipes.len();
        let nr = s.heat.return_pipes.len();
        let heat = HeatState {
            alpha: s.heat.chps.iter().map(|c| vec![0.0; c.points.len()]).collect(),
            h_gen: vec![0.0; s.heat.chps.len()],
            q_rs: vec![0.0; hn],
            q_s: vec![0.0; ns],
            q_r: vec![0.0; nr],
            h_s: vec![0.0; hn],
            h_r: vec![0.0; hn],
            tau_s: vec![0.0; hn],
            tau_r: vec![0.0; hn],
            tau_s_out: vec![0.0; ns],
            tau_r_out: vec![0.0; nr],
        };
        let nc = s.heat.chps.len();
        let couple = CoupleState {
            p_gen: vec![0.0; nc],
            q_gen: vec![0.0; nc],
            p_hpump: vec![0.0; nc],
            p_wpump: vec![0.0; idx.pumps.len()],
        };
        Solution {
            power: vec![power; t],
            water: vec![water; t],
            heat: vec![heat; t],
            couple: vec![couple; t],
        }
    }

    pub fn check_shape(&self, s: &Scenario, idx: &Index) -> Result<(), PhysicsError> {
        let z = Solution::zeros(s, idx);
        let t = s.slots();
        let bad = |what: &str| Err(PhysicsError::Shape(what.to_string()));
        if self.power.len() != t || self.water.len() != t || self.heat.len() != t || self.couple.len() != t {
            return bad("slot count");
        }
        for k in 0..t {
            let (a, b) = (&self.power[k], &z.power[0]);
            if a.p.len() != b.p.len()
                || a.q.len() != b.q.len()
                || a.v.len() != b.v.len()
                || a.p_line.len() != b.p_line.len()
                || a.q_line.len() != b.q_line.len()
                || a.l.len() != b.l.len()
                || a.der_p.len() != b.der_p.len()
                || a.der_q.len() != b.der_q.len()
            {
                return bad("power state");
            }
            let (a, b) = (&self.water[k], &z.water[0]);
            if a.q.len() != b.q.len() || a.h.len() != b.h.len() {
                return bad("water state");
            }
            let (a, b) = (&self.heat[k], &z.heat[0]);
            let alpha_ok = a.alpha.len() == b.alpha.len()
                && a.alpha.iter().zip(&b.alpha).all(|(x, y)| x.len() == y.len());
            if !alpha_ok
                || a.h_gen.len() != b.h_gen.len()
                || a.q_rs.len() != b.q_rs.len()
                || a.q_s.len() != b.q_s.len()
                || a.q_r.len() != b.q_r.len()
                || a.h_s.len() != b.h_s.len()
                || a.h_r.len() != b.h_r.len()
                || a.tau_s.len() != b.tau_s.len()
                || a.tau_r.len() != b.tau_r.len()
                || a.tau_s_out.len() != b.tau_s_out.len()
                || a.tau_r_out.len() != b.tau_r_out.len()
            {
                return bad("heat state");
            }
            let (a, b) = (&self.couple[k], &z.couple[0]);
            if a.p_gen.len() != b.p_gen.len()
                || a.q_gen.len() != b.q_gen.len()
                || a.p_hpump.len() != b.p_hpump.len()
                || a.p_wpump.len() != b.p_wpump.len()
            {
                return bad("coupling state");
            }
        }
        Ok(())
    }
}

/// Where the worst residual of a family occurred.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Locator {
    pub element: String,
    pub slot: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub element: String,
    pub slot: usize,
    pub abs: f64,
    pub rel: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FamilyResidual {
    pub max_abs: f64,
    pub max_rel: f64,
    pub worst: Option<Locator>,
    pub count: usize,
    /// Elements whose residual could not be evaluated (recorded as infinite).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flagged: Vec<Locator>,
    #[serde(skip)]
    pub entries: Vec<Entry>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub families: BTreeMap<String, FamilyResidual>,
}

fn rel_denom(lhs: f64, rhs: f64) -> f64 {
    1f64.max(lhs.abs()).max(rhs.abs())
}

impl ResidualReport {
    fn family(&mut self, name: &str) -> &mut FamilyResidual {
        self.families.entry(name.to_string()).or_default()
    }

    fn push(&mut self, name: &str, element: String, slot: usize, abs: f64, rel: f64) {
        let f = self.family(name);
        let abs = if abs.is_nan() { f64::INFINITY } else { abs };
        let rel = if rel.is_nan() { f64::INFINITY } else { rel };
        f.count += 1;
        if rel > f.max_rel || f.worst.is_none() {
            f.max_rel = f.max_rel.max(rel);
            f.worst = Some(Locator { element: element.clone(), slot });
        }
        f.max_abs = f.max_abs.max(abs);
        f.entries.push(Entry { element, slot, abs, rel });
    }

    /// Residual of an equality `lhs = rhs`.
    pub fn equality(&mut self, name: &str, element: impl Into<String>, slot: usize, lhs: f64, rhs: f64) {
        let abs = (lhs - rhs).abs();
        self.push(name, element.into(), slot, abs, abs / rel_denom(lhs, rhs));
    }

    /// Residual of an inequality `lhs <= rhs`.
    pub fn at_most(&mut self, name: &str, element: impl Into<String>, slot: usize, lhs: f64, rhs: f64) {
        let abs = (lhs - rhs).max(0.0);
        self.push(name, element.into(), slot, abs, abs / rel_denom(lhs, rhs));
    }

    fn flag(&mut self, name: &str, element: String, slot: usize) {
        self.push(name, element.clone(), slot, f64::INFINITY, f64::INFINITY);
        self.family(name).flagged.push(Locator { element, slot });
    }

    pub fn merge(&mut self, other: ResidualReport) {
        for (k, v) in other.families {
            let f = self.families.entry(k).or_default();
            if v.max_rel > f.max_rel || f.worst.is_none() {
                f.worst = v.worst.clone();
            }
            f.max_rel = f.max_rel.max(v.max_rel);
            f.max_abs = f.max_abs.max(v.max_abs);
            f.count += v.count;
            f.flagged.extend(v.flagged);
            f.entries.extend(v.entries);
        }
    }

    pub fn max_rel(&self) -> f64 {
        self.families.values().map(|f| f.max_rel).fold(0.0, f64::max)
    }

    /// Family names whose max relative residual exceeds `tol`.
    pub fn failing(&self, tol: f64) -> Vec<String> {
        self.families.iter().filter(|(_, f)| !(f.max_rel <= tol)).map(|(k, _)| k.clone()).collect()
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.failing(tol).is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&FamilyResidual> {
        self.families.get(name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Active power through the substation, pu, from the slack-node balance.
pub fn slack_power(s: &Scenario, idx: &Index, x: &PowerState) -> f64 {
    let root = idx.slack;
    let out: f64 = idx.power_children[root].iter().map(|&l| x.p_line[l]).sum();
    let inc = match idx.power_parent[root] {
        Some(l) => x.p_line[l] - s.power.lines[l].r * x.l[l],
        None => 0.0,
    };
    out - inc
}

/// Total water drawn from reservoirs, m³/s.
pub fn reservoir_outflow(idx: &Index, x: &WaterState) -> f64 {
    let mut total = 0.0;
    for (n, role) in idx.water_role.iter().enumerate() {
        if let WaterRole::Reservoir(_) = role {
            total += idx.water_out[n].iter().map(|&k| x.q[k]).sum::<f64>();
            total -= idx.water_in[n].iter().map(|&k| x.q[k]).sum::<f64>();
        }
    }
    total
}

pub fn eval_power_residuals(s: &Scenario, x: &Solution) -> Result<ResidualReport, PhysicsError> {
    let idx = s.index()?;
    x.check_shape(s, &idx)?;
    let p = &s.power;
    let sb = p.s_base_va;
    let mut r = ResidualReport::default();
    for t in 0..s.slots() {
        let st = &x.power[t];
        let cp = &x.couple[t];
        for (i, node) in p.nodes.iter().enumerate() {
            let mut lhs_p = st.p[i];
            let mut lhs_q = st.q[i];
            if let Some(l) = idx.power_parent[i] {
                lhs_p += st.p_line[l] - p.lines[l].r * st.l[l];
                lhs_q += st.q_line[l] - p.lines[l].x * st.l[l];
            }
            let rhs_p: f64 = idx.power_children[i].iter().map(|&l| st.p_line[l]).sum();
            let rhs_q: f64 = idx.power_children[i].iter().map(|&l| st.q_line[l]).sum();
            r.equality("power_flow/balance_p", &node.id, t, lhs_p, rhs_p);
            r.equality("power_flow/balance_q", &node.id, t, lhs_q, rhs_q);
        }
        for (l, line) in p.lines.iter().enumerate() {
            let (i, j) = (idx.power_from[l], idx.power_to[l]);
            let lhs = st.v[i] - st.v[j];
            let rhs = 2.0 * (line.r * st.p_line[l] + line.x * st.q_line[l]) - line.z_sq() * st.l[l];
            r.equality("power_flow/voltage_drop", &line.id, t, lhs, rhs);
            let vl = st.v[i] * st.l[l];
            let pq = st.p_line[l].powi(2) + st.q_line[l].powi(2);
            r.equality("power_flow/rank1", &line.id, t, vl, pq);
        }
        for (i, node) in p.nodes.iter().enumerate() {
            if i == idx.slack {
                r.equality("voltage_limits", &node.id, t, st.v[i], p.slack_voltage_sq);
                continue;
            }
            r.at_most("voltage_limits", &node.id, t, node.v_lo, st.v[i]);
            r.at_most("voltage_limits", &node.id, t, st.v[i], node.v_hi);
        }
        let mut inj_p = vec![0.0; p.nodes.len()];
        let mut inj_q = vec![0.0; p.nodes.len()];
        for (i, node) in p.nodes.iter().enumerate() {
            inj_p[i] = -node.p_load[t];
            inj_q[i] = -node.q_load[t];
        }
        for (d, der) in p.ders.iter().enumerate() {
            let b = idx.der_bus[d];
            inj_p[b] += st.der_p[d];
            inj_q[b] += st.der_q[d];
            r.at_most("power_injections/der", &der.id, t, der.p_min[t], st.der_p[d]);
            r.at_most("power_injections/der", &der.id, t, st.der_p[d], der.p_max[t]);
            r.at_most("power_injections/der", &der.id, t, der.q_min[t], st.der_q[d]);
            r.at_most("power_injections/der", &der.id, t, st.der_q[d], der.q_max[t]);
            if let Some(smax) = der.s_max {
                r.at_most("power_injections/der", &der.id, t, st.der_p[d].hypot(st.der_q[d]), smax);
            }
        }
        for (c, &b) in idx.chp_bus.iter().enumerate() {
            inj_p[b] += (cp.p_gen[c] - cp.p_hpump[c]) / sb;
            inj_q[b] += cp.q_gen[c] / sb;
        }
        for (k, &b) in idx.pump_bus.iter().enumerate() {
            inj_p[b] -= cp.p_wpump[k] / sb;
        }
        for (i, node) in p.nodes.iter().enumerate() {
            if i == idx.slack {
                continue;
            }
            r.equality("power_injections/p", &node.id, t, st.p[i], inj_p[i]);
            r.equality("power_injections/q", &node.id, t, st.q[i], inj_q[i]);
        }
    }
    Ok(r)
}

pub fn eval_water_residuals(s: &Scenario, x: &Solution) -> Result<ResidualReport, PhysicsError> {
    let idx = s.index()?;
    x.check_shape(s, &idx)?;
    let w = &s.water;
    let rho_g = w.density * w.gravity;
    let dt = s.horizon.slot_duration_s;
    let mut r = ResidualReport::default();
    for t in 0..s.slots() {
        let st = &x.water[t];
        for (k, pipe) in w.pipes.iter().enumerate() {
            r.at_most("water/flow_limits", &pipe.id, t, 0.0, st.q[k]);
        }
        for (n, role) in idx.water_role.iter().enumerate() {
            let inflow: f64 = idx.water_in[n].iter().map(|&k| st.q[k]).sum();
            let outflow: f64 = idx.water_out[n].iter().map(|&k| st.q[k]).sum();
            match *role {
                WaterRole::Junction(j) => {
                    let jn = &w.junctions[j];
                    r.equality("water/continuity", &jn.id, t, inflow, jn.demand[t] + outflow);
                    r.at_most("water/min_head", &jn.id, t, jn.min_head, st.h[n]);
                }
                WaterRole::TankOutlet(ti) => {
                    let tank = &w.tanks[ti];
                    let inlet = idx.water_node[&tank.inlet];
                    let tank_in: f64 = idx.water_in[inlet].iter().map(|&k| st.q[k]).sum();
                    let prev = if t == 0 { tank.initial_head } else { x.water[t - 1].h[n] };
                    let rhs = prev + dt / tank.cross_section * (tank_in - outflow);
                    r.equality("water/tank_dynamics", &tank.id, t, st.h[n], rhs);
                    r.at_most("water/tank_bounds", &tank.id, t, tank.min_head, st.h[n]);
                    r.at_most("water/tank_bounds", &tank.id, t, st.h[n], st.h[inlet]);
                    if t + 1 == s.slots() {
                        if let Some(hmin) = tank.terminal_min_head {
                            r.at_most("water/tank_bounds", &tank.id, t, hmin, st.h[n]);
                        }
                    }
                }
                WaterRole::Reservoir(ri) => {
                    let res = &w.reservoirs[ri];
                    r.equality("water/reservoir", &res.id, t, st.h[n], res.head);
                }
                WaterRole::TankInlet(_) => {}
            }
        }
        let mut pump_k = 0;
        for (k, pipe) in w.pipes.iter().enumerate() {
            let (i, j) = (idx.water_from[k], idx.water_to[k]);
            let q = st.q[k];
            let gain = st.h[j] - st.h[i];
            match &pipe.kind {
                WaterPipeKind::Pump(c) => {
                    r.at_most("water/pump_head_gain", &pipe.id, t, 0.0, gain);
                    r.at_most("water/pump_head_gain", &pipe.id, t, gain, c.max_gain(q));
                    let draw = x.couple[t].p_wpump[pump_k];
                    r.equality("water/pump_power", &pipe.id, t, draw, rho_g / c.efficiency * gain * q);
                    pump_k += 1;
                }
                WaterPipeKind::Valve => r.at_most("water/valve", &pipe.id, t, st.h[j], st.h[i]),
                WaterPipeKind::Plain { friction } => {
                    r.equality("water/head_loss", &pipe.id, t, st.h[i] - st.h[j], friction * q * q)
                }
            }
        }
    }
    Ok(r)
}

pub fn eval_heat_residuals(s: &Scenario, x: &Solution) -> Result<ResidualReport, PhysicsError> {
    let idx = s.index()?;
    x.check_shape(s, &idx)?;
    let h = &s.heat;
    let c = h.heat_capacity;
    let rho_g = h.density * h.gravity;
    let mut r = ResidualReport::default();
    for t in 0..s.slots() {
        let st = &x.heat[t];
        let cp = &x.couple[t];
        let tau0 = h.ambient[t];
        for (ci, chp) in h.chps.iter().enumerate() {
            let a = &st.alpha[ci];
            let n = idx.chp_node[ci];
            let sum_p: f64 = chp.points.iter().zip(a).map(|(pt, w)| pt.p * w).sum();
            let sum_q: f64 = chp.points.iter().zip(a).map(|(pt, w)| pt.q * w).sum();
            let sum_h: f64 = chp.points.iter().zip(a).map(|(pt, w)| pt.heat * w).sum();
            r.equality("heat/chp_polytope", &chp.id, t, cp.p_gen[ci], sum_p);
            r.equality("heat/chp_polytope", &chp.id, t, cp.q_gen[ci], sum_q);
            r.equality("heat/chp_polytope", &chp.id, t, st.h_gen[ci], sum_h);
            r.equality("heat/chp_polytope", &chp.id, t, a.iter().sum::<f64>(), 1.0);
            for (k, w) in a.iter().enumerate() {
                let el = format!("{}#{k}", chp.id);
                r.at_most("heat/chp_polytope", el.clone(), t, 0.0, *w);
                r.at_most("heat/chp_polytope", el, t, *w, 1.0);
            }
            let q = st.q_rs[n];
            r.equality("heat/chp_heating", &chp.id, t, st.h_gen[ci], c * q * (st.tau_s[n] - st.tau_r[n]));
            r.at_most("heat/chp_supply_temp", &chp.id, t, chp.supply_temp_min, st.tau_s[n]);
            r.at_most("heat/chp_supply_temp", &chp.id, t, st.tau_s[n], chp.supply_temp_max);
            r.at_most("heat/chp_flow", &chp.id, t, 0.0, q);
            let gain = st.h_s[n] - st.h_r[n];
            r.at_most("heat/chp_pump_head", &chp.id, t, 0.0, gain);
            r.at_most("heat/chp_pump_head", &chp.id, t, gain, chp.pump.max_gain(q));
            r.equality("heat/chp_pump_power", &chp.id, t, cp.p_hpump[ci], rho_g / chp.pump.efficiency * gain * q);
        }
        for (li, load) in h.loads.iter().enumerate() {
            let n = idx.load_node[li];
            let q = st.q_rs[n];
            r.equality("heat/load_heating", &load.id, t, load.demand[t], c * q * (st.tau_r[n] - st.tau_s[n]));
            r.at_most("heat/load_return_temp", &load.id, t, load.return_temp_min, st.tau_r[n]);
            r.at_most("heat/load_return_temp", &load.id, t, st.tau_r[n], load.return_temp_max);
            r.at_most("heat/load_flow", &load.id, t, q, 0.0);
            r.at_most("heat/load_head_drop", &load.id, t, load.min_head_drop, st.h_s[n] - st.h_r[n]);
        }
        for (n, role) in idx.heat_role.iter().enumerate() {
            if let HeatRole::Junction(_) = role {
                let id = &idx.heat_nodes[n];
                r.equality("heat/junction_temp", id, t, st.tau_s[n], st.tau_r[n]);
                r.equality("heat/junction_head", id, t, st.h_s[n], st.h_r[n]);
            }
        }
        for (k, pipe) in h.supply_pipes.iter().enumerate() {
            let (i, j) = (idx.sup_from[k], idx.sup_to[k]);
            let q = st.q_s[k];
            r.equality("heat/head_loss", &pipe.id, t, st.h_s[i] - st.h_s[j], pipe.friction * q * q);
            r.at_most("heat/flow_limits", &pipe.id, t, 0.0, q);
            propagation(&mut r, &pipe.id, t, q, st.tau_s[i], tau0, pipe.xi, st.tau_s_out[k]);
        }
        for (k, pipe) in h.return_pipes.iter().enumerate() {
            let (j, i) = (idx.ret_from[k], idx.ret_to[k]);
            let q = st.q_r[k];
            r.equality("heat/head_loss", &pipe.id, t, st.h_r[j] - st.h_r[i], pipe.friction * q * q);
            r.at_most("heat/flow_limits", &pipe.id, t, 0.0, q);
            propagation(&mut r, &pipe.id, t, q, st.tau_r[j], tau0, pipe.xi, st.tau_r_out[k]);
        }
        for (n, id) in idx.heat_nodes.iter().enumerate() {
            let mix_s: f64 = idx.sup_in[n].iter().map(|&k| st.q_s[k] * st.tau_s_out[k]).sum();
            let flow_s: f64 = idx.sup_in[n].iter().map(|&k| st.q_s[k]).sum();
            r.equality("heat/mixing", format!("{id}.S"), t, mix_s, flow_s * st.tau_s[n]);
            let mix_r: f64 = idx.ret_in[n].iter().map(|&k| st.q_r[k] * st.tau_r_out[k]).sum();
            let flow_r: f64 = idx.ret_in[n].iter().map(|&k| st.q_r[k]).sum();
            r.equality("heat/mixing", format!("{id}.R"), t, mix_r, flow_r * st.tau_r[n]);
            let out_s: f64 = idx.sup_out[n].iter().map(|&k| st.q_s[k]).sum();
            let out_r: f64 = idx.ret_out[n].iter().map(|&k| st.q_r[k]).sum();
            r.equality("heat/continuity", format!("{id}.S"), t, flow_s + st.q_rs[n], out_s);
            r.equality("heat/continuity", format!("{id}.R"), t, flow_r - st.q_rs[n], out_r);
        }
    }
    Ok(r)
}

#[allow(clippy::too_many_arguments)]
fn propagation(r: &mut ResidualReport, id: &str, t: usize, q: f64, tau_in: f64, tau0: f64, xi: f64, tau_out: f64) {
    const MIN_ACTIVE_FLOW: f64 = 1e-9;
    if q == 0.0 {
        return;
    }
    if q < MIN_ACTIVE_FLOW {
        r.flag("heat/propagation", id.to_string(), t);
        return;
    }
    let exact = (tau_in - tau0) * (-xi / q).exp() + tau0;
    r.equality("heat/propagation", id, t, tau_out, exact);
}

/// Residuals of all three networks.
pub fn eval_all_residuals(s: &Scenario, x: &Solution) -> Result<ResidualReport, PhysicsError> {
    let mut r = eval_power_residuals(s, x)?;
    r.merge(eval_water_residuals(s, x)?);
    r.merge(eval_heat_residuals(s, x)?);
    Ok(r)
}

/// Per-slot contributions to the total operating cost, $.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SlotCost {
    pub der: f64,
    pub chp: f64,
    pub grid: f64,
    pub water: f64,
}

impl SlotCost {
    pub fn total(&self) -> f64 {
        self.der + self.chp + self.grid + self.water
    }
}

pub fn slot_costs(s: &Scenario, x: &Solution) -> Result<Vec<SlotCost>, PhysicsError> {
    let idx = s.index()?;
    x.check_shape(s, &idx)?;
    let hours = s.horizon.slot_hours();
    let dt = s.horizon.slot_duration_s;
    let mut out = Vec::with_capacity(s.slots());
    for t in 0..s.slots() {
        let der = s.power.ders.iter().enumerate().map(|(d, der)| der.cost(x.power[t].der_p[d])).sum();
        let chp = s
            .heat
            .chps
            .iter()
            .enumerate()
            .map(|(ci, chp)| chp.points.iter().zip(&x.heat[t].alpha[ci]).map(|(pt, a)| pt.cost * a).sum::<f64>())
            .sum();
        let p0 = slack_power(s, &idx, &x.power[t]);
        let grid = s.prices.electricity[t] * p0 * s.power.s_base_va * hours;
        let water = s.prices.water[t] * reservoir_outflow(&idx, &x.water[t]) * dt;
        out.push(SlotCost { der, chp, grid, water });
    }
    Ok(out)
}

/// Operating cost over the horizon, $.
pub fn total_cost(s: &Scenario, x: &Solution) -> Result<f64, PhysicsError> {
    Ok(slot_costs(s, x)?.iter().map(SlotCost::total).sum())
}

/// Tank outlet head after each slot, starting from `h0`.
pub fn simulate_tank(cross_section: f64, h0: f64, net_inflow: &[f64], dt: f64) -> Vec<f64> {
    let mut h = h0;
    net_inflow
        .iter()
        .map(|q| {
            h += dt / cross_section * q;
            h
        })
        .collect()
}

/// Steady-state pipe outlet temperature.
pub fn temperature_out(tau_in: f64, tau0: f64, xi: f64, q: f64) -> Result<f64, PhysicsError> {
    if !(q > 0.0) {
        return Err(PhysicsError::NonpositiveFlow(q));
    }
    Ok((tau_in - tau0) * (-xi / q).exp() + tau0)
}
