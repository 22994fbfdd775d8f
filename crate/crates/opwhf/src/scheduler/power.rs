//! OPF-C: relaxed branch flow over the power network with the coupling draws.

use crate::conic::{assemble, Affine, ConicProgram, ConstraintBlock, Objective, Sense, SolveResult, VarDecl};
use crate::convexify::{relax_rank1, var_name};
use crate::model::{Index, Scenario};
use crate::physics::{CoupleState, PowerState};

use super::{DualBundle, SchedError};

/// OPF-side names of the coupling variables, in pu.
pub fn coupling_names(s: &Scenario, idx: &Index, t: usize) -> Vec<(String, CoupleField)> {
    let mut out = Vec::new();
    for (k, &pipe) in idx.pumps.iter().enumerate() {
        out.push((var_name("xw", &s.water.pipes[pipe].id, t), CoupleField::WaterPump(k)));
    }
    for (c, chp) in s.heat.chps.iter().enumerate() {
        out.push((var_name("xpg", &chp.id, t), CoupleField::ChpP(c)));
        out.push((var_name("xqg", &chp.id, t), CoupleField::ChpQ(c)));
        out.push((var_name("xeh", &chp.id, t), CoupleField::ChpPump(c)));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoupleField {
    WaterPump(usize),
    ChpP(usize),
    ChpQ(usize),
    ChpPump(usize),
}

impl CoupleField {
    pub fn get(&self, c: &CoupleState) -> f64 {
        match *self {
            CoupleField::WaterPump(k) => c.p_wpump[k],
            CoupleField::ChpP(k) => c.p_gen[k],
            CoupleField::ChpQ(k) => c.q_gen[k],
            CoupleField::ChpPump(k) => c.p_hpump[k],
        }
    }

    pub fn set(&self, c: &mut CoupleState, v: f64) {
        match *self {
            CoupleField::WaterPump(k) => c.p_wpump[k] = v,
            CoupleField::ChpP(k) => c.p_gen[k] = v,
            CoupleField::ChpQ(k) => c.q_gen[k] = v,
            CoupleField::ChpPump(k) => c.p_hpump[k] = v,
        }
    }
}

pub fn inj_tag(kind: &str, node: &str, t: usize) -> String {
    format!("inj.{kind}.{node}.{t}/row")
}

/// OPF-C over `(x_power, x_couple)`: DER cost, grid payment, and the price
/// term `μᵀ(G* − D x_couple)`. The coupling draws are held at
/// `d.request` by `serve.*` rows.
pub fn build_opf_c(s: &Scenario, d: &DualBundle) -> Result<ConicProgram, SchedError> {
    let idx = s.index()?;
    let t_n = s.slots();
    if d.request.len() != t_n {
        return Err(SchedError::Dimension(format!("request has {} slots, expected {t_n}", d.request.len())));
    }
    let zero = crate::physics::Solution::zeros(s, &idx).couple.remove(0);
    if d.request.iter().any(|c| !same_shape(c, &zero)) {
        return Err(SchedError::Dimension("request coupling shape".into()));
    }
    for row in d.water.iter().chain(&d.heat) {
        if !row.mu.is_finite() || !row.g.is_finite() {
            return Err(SchedError::Dimension(format!("nonfinite dual on {}", row.tag)));
        }
    }
    let p = &s.power;
    let sb = p.s_base_va;
    let hours = s.horizon.slot_hours();
    let mut blocks = Vec::new();
    let mut obj = Objective::default();
    for t in 0..t_n {
        let mut b = ConstraintBlock::new(format!("opf.{t}"));
        for (i, node) in p.nodes.iter().enumerate() {
            b.var(VarDecl::free(var_name("p", &node.id, t)));
            b.var(VarDecl::free(var_name("q", &node.id, t)));
            let (lo, hi) = if i == idx.slack {
                (p.slack_voltage_sq, p.slack_voltage_sq)
            } else {
                (node.v_lo, node.v_hi)
            };
            b.var(VarDecl::bounded(var_name("v", &node.id, t), lo, hi));
        }
        for line in &p.lines {
            b.var(VarDecl::free(var_name("P", &line.id, t)));
            b.var(VarDecl::free(var_name("Q", &line.id, t)));
            b.var(VarDecl::bounded(var_name("l", &line.id, t), 0.0, f64::INFINITY));
        }
        for der in &p.ders {
            let dp = var_name("dp", &der.id, t);
            let dq = var_name("dq", &der.id, t);
            b.var(VarDecl::bounded(dp.clone(), der.p_min[t], der.p_max[t]));
            b.var(VarDecl::bounded(dq.clone(), der.q_min[t], der.q_max[t]));
            if let Some(smax) = der.s_max {
                b.cone(&format!("smax.{}", der.id), Affine::constant(smax), vec![Affine::var(dp.clone()), Affine::var(dq)]);
            }
            obj.add_linear(dp.clone(), der.cost_linear);
            if der.cost_quadratic > 0.0 {
                obj.add_square(&Affine::var(dp), der.cost_quadratic);
            }
        }
        let couple = coupling_names(s, &idx, t);
        for (name, field) in &couple {
            b.var(VarDecl::free(name.clone()));
            b.row(&format!("serve.{name}"), Affine::var(name.clone()), Sense::Eq, field.get(&d.request[t]) / sb);
        }
        // branch flow balance and voltage drop
        for (i, node) in p.nodes.iter().enumerate() {
            let mut ep = Affine::var(var_name("p", &node.id, t));
            let mut eq = Affine::var(var_name("q", &node.id, t));
            if let Some(l) = idx.power_parent[i] {
                let line = &p.lines[l];
                ep = ep.add_term(var_name("P", &line.id, t), 1.0).add_term(var_name("l", &line.id, t), -line.r);
                eq = eq.add_term(var_name("Q", &line.id, t), 1.0).add_term(var_name("l", &line.id, t), -line.x);
            }
            for &l in &idx.power_children[i] {
                ep = ep.add_term(var_name("P", &p.lines[l].id, t), -1.0);
                eq = eq.add_term(var_name("Q", &p.lines[l].id, t), -1.0);
            }
            b.row(&format!("bal.p.{}", node.id), ep, Sense::Eq, 0.0);
            b.row(&format!("bal.q.{}", node.id), eq, Sense::Eq, 0.0);
        }
        for line in &p.lines {
            let e = Affine::var(var_name("v", &line.from, t))
                .add_term(var_name("v", &line.to, t), -1.0)
                .add_term(var_name("P", &line.id, t), -2.0 * line.r)
                .add_term(var_name("Q", &line.id, t), -2.0 * line.x)
                .add_term(var_name("l", &line.id, t), line.z_sq());
            b.row(&format!("vdrop.{}", line.id), e, Sense::Eq, 0.0);
        }
        blocks.push(b);
        // injections, in their own block so their tags are stable
        for (i, node) in p.nodes.iter().enumerate() {
            if i == idx.slack {
                continue;
            }
            let mut ip = Affine::var(var_name("p", &node.id, t));
            let mut iq = Affine::var(var_name("q", &node.id, t));
            for (k, der) in p.ders.iter().enumerate() {
                if idx.der_bus[k] == i {
                    ip = ip.add_term(var_name("dp", &der.id, t), -1.0);
                    iq = iq.add_term(var_name("dq", &der.id, t), -1.0);
                }
            }
            for (name, field) in &couple {
                let (cp, cq) = match field {
                    CoupleField::WaterPump(k) if idx.pump_bus[*k] == i => (1.0, 0.0),
                    CoupleField::ChpP(c) if idx.chp_bus[*c] == i => (-1.0, 0.0),
                    CoupleField::ChpQ(c) if idx.chp_bus[*c] == i => (0.0, -1.0),
                    CoupleField::ChpPump(c) if idx.chp_bus[*c] == i => (1.0, 0.0),
                    _ => (0.0, 0.0),
                };
                if cp != 0.0 {
                    ip = ip.add_term(name.clone(), cp);
                }
                if cq != 0.0 {
                    iq = iq.add_term(name.clone(), cq);
                }
            }
            let mut bp = ConstraintBlock::new(format!("inj.p.{}.{t}", node.id));
            bp.row("row", ip, Sense::Eq, -node.p_load[t]);
            let mut bq = ConstraintBlock::new(format!("inj.q.{}.{t}", node.id));
            bq.row("row", iq, Sense::Eq, -node.q_load[t]);
            blocks.push(bp);
            blocks.push(bq);
        }
        for line in &p.lines {
            blocks.push(relax_rank1(line, t));
        }
        let slack_id = &p.nodes[idx.slack].id;
        obj.add_linear(var_name("p", slack_id, t), s.prices.electricity[t] * sb * hours);
    }
    // μᵀ(G* − D x_couple)
    for row in d.water.iter().chain(&d.heat) {
        obj.add_constant(row.mu * row.g);
        for (name, coef) in &row.d {
            obj.add_linear(name.clone(), -row.mu * coef);
        }
    }
    Ok(assemble(blocks, obj)?)
}

fn same_shape(a: &CoupleState, b: &CoupleState) -> bool {
    a.p_gen.len() == b.p_gen.len()
        && a.q_gen.len() == b.q_gen.len()
        && a.p_hpump.len() == b.p_hpump.len()
        && a.p_wpump.len() == b.p_wpump.len()
}

pub fn extract(s: &Scenario, r: &SolveResult) -> Vec<PowerState> {
    let p = &s.power;
    (0..s.slots())
        .map(|t| PowerState {
            p: p.nodes.iter().map(|n| r.value(&var_name("p", &n.id, t))).collect(),
            q: p.nodes.iter().map(|n| r.value(&var_name("q", &n.id, t))).collect(),
            v: p.nodes.iter().map(|n| r.value(&var_name("v", &n.id, t))).collect(),
            p_line: p.lines.iter().map(|l| r.value(&var_name("P", &l.id, t))).collect(),
            q_line: p.lines.iter().map(|l| r.value(&var_name("Q", &l.id, t))).collect(),
            l: p.lines.iter().map(|l| r.value(&var_name("l", &l.id, t))).collect(),
            der_p: p.ders.iter().map(|d| r.value(&var_name("dp", &d.id, t))).collect(),
            der_q: p.ders.iter().map(|d| r.value(&var_name("dq", &d.id, t))).collect(),
        })
        .collect()
}

/// Marginal cost of consuming one pu at each bus, $ per pu per slot, read
/// from the injection-row multipliers. Returns (active, reactive) `[slot][bus]`.
pub fn nodal_prices(s: &Scenario, idx: &Index, r: &SolveResult) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let hours = s.horizon.slot_hours();
    let n = s.power.nodes.len();
    let mut pp = vec![vec![0.0; n]; s.slots()];
    let mut pq = vec![vec![0.0; n]; s.slots()];
    for t in 0..s.slots() {
        let grid = s.prices.electricity[t] * s.power.s_base_va * hours;
        for (i, node) in s.power.nodes.iter().enumerate() {
            if i == idx.slack {
                pp[t][i] = grid;
                continue;
            }
            pp[t][i] = r.dual(&inj_tag("p", &node.id, t)).unwrap_or(grid);
            pq[t][i] = r.dual(&inj_tag("q", &node.id, t)).unwrap_or(0.0);
        }
    }
    (pp, pq)
}
