//! OWF-C: water network with relaxed head loss and convexified pump power.

use crate::conic::{assemble, Affine, ConstraintBlock, Objective, Sense, VarDecl};
use crate::convexify::{ccp_bilinear_epigraph, pump_head_window, relax_darcy_weisbach, var_name, ReferencePoint};
use crate::model::{Index, Scenario, WaterPipeKind, WaterRole};
use crate::physics::{CoupleState, WaterState};

use super::{Built, Coordination, CouplingMeta, SchedError, SolverOptions, MW};

fn head(idx: &Index, n: usize, t: usize) -> String {
    var_name("h", &idx.water_nodes[n], t)
}

fn flow(s: &Scenario, k: usize, t: usize) -> String {
    var_name("q", &s.water.pipes[k].id, t)
}

pub fn pump_var(s: &Scenario, k: usize, t: usize) -> String {
    var_name("ew", &s.water.pipes[k].id, t)
}

/// Scale of the pump factors `(Δh, q)`.
fn pump_scale(s: &Scenario, k: usize) -> (f64, f64) {
    let pipe = &s.water.pipes[k];
    match &pipe.kind {
        WaterPipeKind::Pump(c) => (c.c.max(1.0), pipe.max_flow),
        _ => (1.0, 1.0),
    }
}

/// Builds the convex water subproblem at `reference`. With `ccp = false` the
/// pump-power rows are omitted (used for the warm start).
pub fn build_owf_c(
    s: &Scenario,
    idx: &Index,
    star: &[CoupleState],
    reference: &ReferencePoint,
    coord: &Coordination,
    opts: &SolverOptions,
    ccp: bool,
) -> Result<Built, SchedError> {
    reference.check()?;
    let w = &s.water;
    let rho_g = w.density * w.gravity;
    let dt = s.horizon.slot_duration_s;
    let k_pu = MW / s.power.s_base_va;
    let mut blocks = Vec::new();
    let mut obj = Objective::default();
    let mut coupling = Vec::new();
    for t in 0..s.slots() {
        let mut b = ConstraintBlock::new(format!("water.{t}"));
        for (k, pipe) in w.pipes.iter().enumerate() {
            b.var(VarDecl::bounded(flow(s, k, t), 0.0, pipe.max_flow));
        }
        for (n, role) in idx.water_role.iter().enumerate() {
            let lo = match *role {
                WaterRole::Junction(j) => w.junctions[j].min_head,
                WaterRole::TankOutlet(ti) => w.tanks[ti].min_head,
                _ => f64::NEG_INFINITY,
            };
            b.var(VarDecl::bounded(head(idx, n, t), lo, f64::INFINITY));
        }
        for (n, role) in idx.water_role.iter().enumerate() {
            let mut net = Affine::default();
            for &k in &idx.water_in[n] {
                net = net.add_term(flow(s, k, t), 1.0);
            }
            for &k in &idx.water_out[n] {
                net = net.add_term(flow(s, k, t), -1.0);
            }
            match *role {
                WaterRole::Junction(j) => {
                    b.row(&format!("cont.{}", w.junctions[j].id), net, Sense::Eq, w.junctions[j].demand[t]);
                }
                WaterRole::TankOutlet(ti) => {
                    let tank = &w.tanks[ti];
                    let inlet = idx.water_node[&tank.inlet];
                    let gain = dt / tank.cross_section;
                    let mut e = Affine::var(head(idx, n, t));
                    let mut rhs = 0.0;
                    if t == 0 {
                        rhs = tank.initial_head;
                    } else {
                        e = e.add_term(head(idx, n, t - 1), -1.0);
                    }
                    for &k in &idx.water_in[inlet] {
                        e = e.add_term(flow(s, k, t), -gain);
                    }
                    for &k in &idx.water_out[n] {
                        e = e.add_term(flow(s, k, t), gain);
                    }
                    b.row(&format!("tank.{}", tank.id), e, Sense::Eq, rhs);
                    b.row(
                        &format!("tankhi.{}", tank.id),
                        Affine::var(head(idx, n, t)).add_term(head(idx, inlet, t), -1.0),
                        Sense::Le,
                        0.0,
                    );
                    if t + 1 == s.slots() {
                        if let Some(hmin) = tank.terminal_min_head {
                            b.row(&format!("tankend.{}", tank.id), Affine::var(head(idx, n, t)), Sense::Ge, hmin);
                        }
                    }
                }
                WaterRole::Reservoir(r) => {
                    b.row(&format!("res.{}", w.reservoirs[r].id), Affine::var(head(idx, n, t)), Sense::Eq, w.reservoirs[r].head);
                    // payment for water drawn
                    for (name, c) in &net.terms {
                        obj.add_linear(name.clone(), -c * s.prices.water[t] * dt);
                    }
                }
                WaterRole::TankInlet(_) => {}
            }
        }
        blocks.push(b);
        let mut pump_k = 0;
        for (k, pipe) in w.pipes.iter().enumerate() {
            let (i, j) = (idx.water_from[k], idx.water_to[k]);
            match &pipe.kind {
                WaterPipeKind::Valve => {
                    let mut b = ConstraintBlock::new(format!("valve.{}.{t}", pipe.id));
                    b.row("drop", Affine::var(head(idx, j, t)).add_term(head(idx, i, t), -1.0), Sense::Le, 0.0);
                    blocks.push(b);
                }
                WaterPipeKind::Plain { friction } => {
                    let b = relax_darcy_weisbach(&pipe.id, t, *friction, &flow(s, k, t), &head(idx, i, t), &head(idx, j, t), pipe.max_flow);
                    obj.add_linear(var_name("W", &pipe.id, t), opts.darcy_weight * friction);
                    blocks.push(b);
                }
                WaterPipeKind::Pump(curve) => {
                    let dh = Affine::var(head(idx, j, t)).add_term(head(idx, i, t), -1.0);
                    let q = Affine::var(flow(s, k, t));
                    blocks.push(pump_head_window(&format!("{}.{t}", pipe.id), q.clone(), dh.clone(), curve));
                    let e = pump_var(s, k, t);
                    let e_max = rho_g / curve.efficiency * curve.c.max(curve.max_gain(curve.b / (2.0 * curve.a))) * pipe.max_flow / MW;
                    let mut eb = ConstraintBlock::new(format!("pumpdraw.{}.{t}", pipe.id));
                    eb.var(VarDecl::bounded(e.clone(), 0.0, 2.0 * e_max));
                    if coord.fixed {
                        eb.row("fix", Affine::var(e.clone()), Sense::Eq, star[t].p_wpump[pump_k] / MW);
                    } else {
                        let bus = idx.pump_bus[pump_k];
                        obj.add_linear(e.clone(), coord.price_p[t][bus] * k_pu);
                        if coord.rho > 0.0 {
                            let dev = Affine::var(e.clone()).plus_const(-star[t].p_wpump[pump_k] / MW);
                            obj.add_square(&dev, 0.5 * coord.rho * k_pu * k_pu);
                        }
                    }
                    blocks.push(eb);
                    if ccp {
                        let (sh, sq) = pump_scale(s, k);
                        let kappa = MW * curve.efficiency / (rho_g * sh * sq);
                        let dh_ref = reference.get(&head(idx, j, t)).unwrap_or(0.0) - reference.get(&head(idx, i, t)).unwrap_or(0.0);
                        let q_ref = reference.get(&flow(s, k, t)).unwrap_or(0.0);
                        let tag = format!("coupling.water.{}.{t}", pipe.id);
                        let (blk, g) = ccp_bilinear_epigraph(
                            &tag,
                            Affine::term(e, kappa),
                            dh.scaled(1.0 / sh),
                            q.scaled(1.0 / sq),
                            dh_ref / sh,
                            q_ref / sq,
                        );
                        let d = kappa * s.power.s_base_va / MW;
                        let xname = var_name("xw", &pipe.id, t);
                        coupling.push(CouplingMeta { tag: format!("{tag}/51"), g: g[0].clone(), d: vec![(xname.clone(), d)] });
                        coupling.push(CouplingMeta { tag: format!("{tag}/52"), g: g[1].clone(), d: vec![(xname, -d)] });
                        blocks.push(blk);
                    }
                    pump_k += 1;
                }
            }
        }
    }
    let slacks: Vec<String> = blocks.iter().flat_map(|b| b.slacks.iter().cloned()).collect();
    for sl in &slacks {
        obj.add_linear(sl.clone(), opts.slack_penalty);
    }
    let program = assemble(blocks, obj)?;
    Ok(Built { program, slacks, coupling })
}

/// Water state and pump draws (W) per slot from a solved subproblem.
pub fn extract(s: &Scenario, idx: &Index, v: &ReferencePoint) -> (Vec<WaterState>, Vec<Vec<f64>>) {
    let get = |n: &str| v.get(n).unwrap_or(0.0);
    let mut states = Vec::new();
    let mut draws = Vec::new();
    for t in 0..s.slots() {
        states.push(WaterState {
            q: (0..s.water.pipes.len()).map(|k| get(&flow(s, k, t))).collect(),
            h: (0..idx.water_nodes.len()).map(|n| get(&head(idx, n, t))).collect(),
        });
        draws.push(idx.pumps.iter().map(|&k| get(&pump_var(s, k, t)) * MW).collect());
    }
    (states, draws)
}

/// Reference point from the relaxed program without pump-power rows, with
/// pump draws set to the exact product.
pub fn warm_start(s: &Scenario, idx: &Index, opts: &SolverOptions) -> Result<ReferencePoint, SchedError> {
    let star = crate::physics::Solution::zeros(s, idx).couple;
    let coord = Coordination { fixed: false, rho: 0.0, price_p: vec![vec![0.0; s.power.nodes.len()]; s.slots()], price_q: vec![vec![0.0; s.power.nodes.len()]; s.slots()] };
    let mut built = build_owf_c(s, idx, &star, &ReferencePoint::default(), &coord, opts, false)?;
    // prefer low pump gains
    for t in 0..s.slots() {
        for &k in &idx.pumps {
            let (i, j) = (idx.water_from[k], idx.water_to[k]);
            built.program.objective.add_linear(head(idx, j, t), 1e-3);
            built.program.objective.add_linear(head(idx, i, t), -1e-3);
        }
    }
    let r = super::solve_checked(&built.program, opts, "water warm start")?;
    let mut v = super::values_of(&r);
    let w = &s.water;
    for t in 0..s.slots() {
        for &k in &idx.pumps {
            if let WaterPipeKind::Pump(c) = &w.pipes[k].kind {
                let (i, j) = (idx.water_from[k], idx.water_to[k]);
                let dh = v.get(&head(idx, j, t)).unwrap_or(0.0) - v.get(&head(idx, i, t)).unwrap_or(0.0);
                let q = v.get(&flow(s, k, t)).unwrap_or(0.0);
                v.set(pump_var(s, k, t), w.density * w.gravity / c.efficiency * dh * q / MW);
            }
        }
    }
    Ok(v)
}
