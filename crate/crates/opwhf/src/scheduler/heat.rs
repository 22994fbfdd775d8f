//! OHF-C: district heating with CHP polytopes, relaxed hydraulics and the
//! convexified heating, propagation and mixing identities.

use crate::conic::{assemble, Affine, ConstraintBlock, Objective, Sense, VarDecl};
use crate::convexify::{
    ccp_bilinear_affine, ccp_bilinear_epigraph, ccp_exponential, pump_head_window, relax_darcy_weisbach, var_name,
    PropagationScale, PropagationVars, ReferencePoint, Q_MIN,
};
use crate::model::{HeatNetwork, HeatRole, Index, Scenario};
use crate::physics::{CoupleState, HeatState};

use super::{Built, Coordination, CouplingMeta, SchedError, SolverOptions, MW};

/// Temperature scale of the bilinear factors, °C.
const SIGMA_T: f64 = 100.0;
const T_LO: f64 = -50.0;
const T_HI: f64 = 200.0;

struct Names<'a> {
    s: &'a Scenario,
    idx: &'a Index,
}

impl Names<'_> {
    fn node(&self, kind: &str, n: usize, t: usize) -> String {
        var_name(kind, &self.idx.heat_nodes[n], t)
    }
    fn qs(&self, k: usize, t: usize) -> String {
        var_name("qs", &self.s.heat.supply_pipes[k].id, t)
    }
    fn qr(&self, k: usize, t: usize) -> String {
        var_name("qr", &self.s.heat.return_pipes[k].id, t)
    }
    fn tso(&self, k: usize, t: usize) -> String {
        var_name("tso", &self.s.heat.supply_pipes[k].id, t)
    }
    fn tro(&self, k: usize, t: usize) -> String {
        var_name("tro", &self.s.heat.return_pipes[k].id, t)
    }
    fn alpha(&self, c: usize, k: usize, t: usize) -> String {
        var_name("alpha", &format!("{}#{k}", self.s.heat.chps[c].id), t)
    }
    fn chp(&self, kind: &str, c: usize, t: usize) -> String {
        var_name(kind, &self.s.heat.chps[c].id, t)
    }
}

/// Flow through the supply pipe into load node `n` at which water leaving
/// its upstream node at `ts` arrives at `target`.
fn idle_flow(h: &HeatNetwork, idx: &Index, n: usize, ts: &[f64], tau0: f64, target: f64) -> f64 {
    let Some(&k) = idx.sup_in[n].first() else { return Q_MIN };
    let up = ts[idx.sup_from[k]];
    let y = (target - tau0) / (up - tau0);
    if !(y > 0.0 && y < 1.0) {
        return Q_MIN;
    }
    -h.supply_pipes[k].xi / y.ln()
}

fn clamp_y(y: f64) -> f64 {
    y.clamp(1e-12, 1.0 - 1e-12)
}

/// Clamps the propagation factors of `r` into (0, 1).
pub fn project(r: &mut ReferencePoint) {
    for (k, v) in r.values.iter_mut() {
        if k.starts_with("y[") {
            *v = clamp_y(*v);
        }
    }
}

/// Side of the network a pipe belongs to.
#[derive(Clone, Copy)]
enum Side {
    Supply,
    Return,
}

/// Builds the convex heat subproblem at `reference`.
pub fn build_ohf_c(
    s: &Scenario,
    idx: &Index,
    star: &[CoupleState],
    reference: &ReferencePoint,
    coord: &Coordination,
    opts: &SolverOptions,
) -> Result<Built, SchedError> {
    reference.check()?;
    let h = &s.heat;
    let nm = Names { s, idx };
    let c = h.heat_capacity;
    let rho_g = h.density * h.gravity;
    let k_pu = MW / s.power.s_base_va;
    let r = |n: &str| reference.get(n).unwrap_or(0.0);
    let mut blocks = Vec::new();
    let mut obj = Objective::default();
    let mut coupling = Vec::new();
    for t in 0..s.slots() {
        let tau0 = h.ambient[t];
        let mut b = ConstraintBlock::new(format!("heat.{t}"));
        for (n, role) in idx.heat_role.iter().enumerate() {
            let (qlo, qhi, tslo, tshi, trlo, trhi) = match *role {
                HeatRole::Chp(ci) => {
                    let ch = &h.chps[ci];
                    (0.0, ch.max_flow, ch.supply_temp_min, ch.supply_temp_max, T_LO, T_HI)
                }
                HeatRole::Load(li) => {
                    let l = &h.loads[li];
                    (-l.max_flow, 0.0, T_LO, T_HI, l.return_temp_min, l.return_temp_max)
                }
                HeatRole::Junction(_) => (0.0, 0.0, T_LO, T_HI, T_LO, T_HI),
            };
            b.var(VarDecl::bounded(nm.node("qrs", n, t), qlo, qhi));
            b.var(VarDecl::free(nm.node("hs", n, t)));
            b.var(VarDecl::free(nm.node("hr", n, t)));
            b.var(VarDecl::bounded(nm.node("ts", n, t), tslo, tshi));
            b.var(VarDecl::bounded(nm.node("tr", n, t), trlo, trhi));
        }
        for (k, pipe) in h.supply_pipes.iter().enumerate() {
            b.var(VarDecl::bounded(nm.qs(k, t), Q_MIN, pipe.max_flow));
            b.var(VarDecl::bounded(nm.tso(k, t), T_LO, T_HI));
        }
        for (k, pipe) in h.return_pipes.iter().enumerate() {
            b.var(VarDecl::bounded(nm.qr(k, t), Q_MIN, pipe.max_flow));
            b.var(VarDecl::bounded(nm.tro(k, t), T_LO, T_HI));
        }
        // continuity on both sides
        for n in 0..idx.heat_nodes.len() {
            let mut es = Affine::var(nm.node("qrs", n, t));
            let mut er = Affine::term(nm.node("qrs", n, t), -1.0);
            for &k in &idx.sup_in[n] {
                es = es.add_term(nm.qs(k, t), 1.0);
            }
            for &k in &idx.sup_out[n] {
                es = es.add_term(nm.qs(k, t), -1.0);
            }
            for &k in &idx.ret_in[n] {
                er = er.add_term(nm.qr(k, t), 1.0);
            }
            for &k in &idx.ret_out[n] {
                er = er.add_term(nm.qr(k, t), -1.0);
            }
            let id = &idx.heat_nodes[n];
            b.row(&format!("cont.S.{id}"), es, Sense::Eq, 0.0);
            b.row(&format!("cont.R.{id}"), er, Sense::Eq, 0.0);
            if let HeatRole::Junction(_) = idx.heat_role[n] {
                b.row(&format!("jt.{id}"), Affine::var(nm.node("ts", n, t)).add_term(nm.node("tr", n, t), -1.0), Sense::Eq, 0.0);
                b.row(&format!("jh.{id}"), Affine::var(nm.node("hs", n, t)).add_term(nm.node("hr", n, t), -1.0), Sense::Eq, 0.0);
            }
        }
        if let Some(&n0) = idx.chp_node.first() {
            b.row("datum", Affine::var(nm.node("hr", n0, t)), Sense::Eq, h.datum_head);
        }
        blocks.push(b);

        for (ci, chp) in h.chps.iter().enumerate() {
            let n = idx.chp_node[ci];
            let mut b = ConstraintBlock::new(format!("chp.{}.{t}", chp.id));
            let (pg, qg, eh, hh) = (nm.chp("pg", ci, t), nm.chp("qg", ci, t), nm.chp("eh", ci, t), nm.chp("H", ci, t));
            let h_max = chp.points.iter().map(|p| p.heat).fold(0.0, f64::max) / MW;
            b.var(VarDecl::free(pg.clone()));
            b.var(VarDecl::free(qg.clone()));
            b.var(VarDecl::bounded(hh.clone(), 0.0, h_max));
            let gmax = chp.pump.max_gain(chp.pump.b / (2.0 * chp.pump.a)).max(chp.pump.c);
            b.var(VarDecl::bounded(eh.clone(), 0.0, 2.0 * rho_g / chp.pump.efficiency * gmax * chp.max_flow / MW));
            let mut sp = Affine::var(pg.clone());
            let mut sq = Affine::var(qg.clone());
            let mut sh = Affine::var(hh.clone());
            let mut sa = Affine::default();
            for (k, pt) in chp.points.iter().enumerate() {
                let a = nm.alpha(ci, k, t);
                b.var(VarDecl::bounded(a.clone(), 0.0, 1.0));
                sp = sp.add_term(a.clone(), -pt.p / MW);
                sq = sq.add_term(a.clone(), -pt.q / MW);
                sh = sh.add_term(a.clone(), -pt.heat / MW);
                sa = sa.add_term(a.clone(), 1.0);
                obj.add_linear(a, pt.cost);
            }
            b.row("hull", sh, Sense::Eq, 0.0);
            b.row("convex", sa, Sense::Eq, 1.0);
            blocks.push(b);
            let mut lb = ConstraintBlock::new(format!("coupling.heat.{}", chp.id));
            lb.row(&format!("p.{t}"), sp, Sense::Eq, 0.0);
            lb.row(&format!("q.{t}"), sq, Sense::Eq, 0.0);
            if coord.fixed {
                lb.row(&format!("fixp.{t}"), Affine::var(pg.clone()), Sense::Eq, star[t].p_gen[ci] / MW);
                lb.row(&format!("fixq.{t}"), Affine::var(qg.clone()), Sense::Eq, star[t].q_gen[ci] / MW);
                lb.row(&format!("fixe.{t}"), Affine::var(eh.clone()), Sense::Eq, star[t].p_hpump[ci] / MW);
            } else {
                let bus = idx.chp_bus[ci];
                obj.add_linear(pg.clone(), -coord.price_p[t][bus] * k_pu);
                obj.add_linear(qg.clone(), -coord.price_q[t][bus] * k_pu);
                obj.add_linear(eh.clone(), coord.price_p[t][bus] * k_pu);
                if coord.rho > 0.0 {
                    let w = 0.5 * coord.rho * k_pu * k_pu;
                    obj.add_square(&Affine::var(pg.clone()).plus_const(-star[t].p_gen[ci] / MW), w);
                    obj.add_square(&Affine::var(qg.clone()).plus_const(-star[t].q_gen[ci] / MW), w);
                    obj.add_square(&Affine::var(eh.clone()).plus_const(-star[t].p_hpump[ci] / MW), w);
                }
            }
            blocks.push(lb);

            // heating identity H = c·q·(τS − τR)
            let sq_f = chp.max_flow;
            let (q, ts, tr) = (nm.node("qrs", n, t), nm.node("ts", n, t), nm.node("tr", n, t));
            let tag = format!("heating.{}.{t}", chp.id);
            blocks.push(ccp_bilinear_affine(
                &tag,
                Affine::term(hh, MW / (c * sq_f * SIGMA_T)),
                Affine::term(q.clone(), 1.0 / sq_f),
                Affine::term(ts.clone(), 1.0 / SIGMA_T).add_term(tr.clone(), -1.0 / SIGMA_T),
                r(&q) / sq_f,
                (r(&ts) - r(&tr)) / SIGMA_T,
                Some(&tag),
            ));

            // pump head window and power identity
            let (hs, hr) = (nm.node("hs", n, t), nm.node("hr", n, t));
            let gain = Affine::var(hs.clone()).add_term(hr.clone(), -1.0);
            blocks.push(pump_head_window(&format!("{}.{t}", chp.id), Affine::var(q.clone()), gain.clone(), &chp.pump));
            let sig_h = chp.pump.c.max(1.0);
            let kappa = MW * chp.pump.efficiency / (rho_g * sig_h * sq_f);
            let tag = format!("coupling.heat.{}.pump.{t}", chp.id);
            let (blk, g) = ccp_bilinear_epigraph(
                &tag,
                Affine::term(eh, kappa),
                gain.scaled(1.0 / sig_h),
                Affine::term(q.clone(), 1.0 / sq_f),
                (r(&hs) - r(&hr)) / sig_h,
                r(&q) / sq_f,
            );
            let d = kappa * s.power.s_base_va / MW;
            let xname = var_name("xeh", &chp.id, t);
            coupling.push(CouplingMeta { tag: format!("{tag}/51"), g: g[0].clone(), d: vec![(xname.clone(), d)] });
            coupling.push(CouplingMeta { tag: format!("{tag}/52"), g: g[1].clone(), d: vec![(xname, -d)] });
            blocks.push(blk);
        }

        for (li, load) in h.loads.iter().enumerate() {
            let n = idx.load_node[li];
            let (q, ts, tr, hs, hr) =
                (nm.node("qrs", n, t), nm.node("ts", n, t), nm.node("tr", n, t), nm.node("hs", n, t), nm.node("hr", n, t));
            let sq_f = load.max_flow;
            let tag = format!("heating.{}.{t}", load.id);
            blocks.push(ccp_bilinear_affine(
                &tag,
                Affine::constant(load.demand[t] / (c * sq_f * SIGMA_T)),
                Affine::term(q.clone(), 1.0 / sq_f),
                Affine::term(tr.clone(), 1.0 / SIGMA_T).add_term(ts.clone(), -1.0 / SIGMA_T),
                r(&q) / sq_f,
                (r(&tr) - r(&ts)) / SIGMA_T,
                Some(&tag),
            ));
            let mut b = ConstraintBlock::new(format!("drop.{}.{t}", load.id));
            b.row("min", Affine::var(hs).add_term(hr, -1.0), Sense::Ge, load.min_head_drop);
            blocks.push(b);
        }

        // pipes: hydraulics and propagation
        for (side, pipes) in [(Side::Supply, &h.supply_pipes), (Side::Return, &h.return_pipes)] {
            for (k, pipe) in pipes.iter().enumerate() {
                let (q, head, temp, tout, from, to) = match side {
                    Side::Supply => (nm.qs(k, t), "hs", "ts", nm.tso(k, t), idx.sup_from[k], idx.sup_to[k]),
                    Side::Return => (nm.qr(k, t), "hr", "tr", nm.tro(k, t), idx.ret_from[k], idx.ret_to[k]),
                };
                blocks.push(relax_darcy_weisbach(
                    &pipe.id,
                    t,
                    pipe.friction,
                    &q,
                    &nm.node(head, from, t),
                    &nm.node(head, to, t),
                    pipe.max_flow,
                ));
                obj.add_linear(var_name("W", &pipe.id, t), opts.darcy_weight * pipe.friction);
                let tin = nm.node(temp, from, t);
                let v = PropagationVars::for_pipe(&pipe.id, t, tin.clone(), tout, q.clone());
                let q_ref = r(&q).max(Q_MIN);
                let y_ref = clamp_y(reference.get(&v.y).unwrap_or((-pipe.xi / q_ref).exp()));
                let blk = ccp_exponential(
                    &pipe.id,
                    t,
                    &v,
                    tau0,
                    pipe.xi,
                    (r(&tin), q_ref, y_ref),
                    opts.native_exp,
                    true,
                    PropagationScale { tau: SIGMA_T, q: pipe.max_flow },
                )?;
                blocks.push(blk);
            }
        }

        // mixing at nodes
        for n in 0..idx.heat_nodes.len() {
            for side in [Side::Supply, Side::Return] {
                let (inflow, temp, label): (&Vec<usize>, &str, &str) = match side {
                    Side::Supply => (&idx.sup_in[n], "ts", "S"),
                    Side::Return => (&idx.ret_in[n], "tr", "R"),
                };
                let pipes = match side {
                    Side::Supply => &h.supply_pipes,
                    Side::Return => &h.return_pipes,
                };
                let out = |k: usize| match side {
                    Side::Supply => nm.tso(k, t),
                    Side::Return => nm.tro(k, t),
                };
                let flow = |k: usize| match side {
                    Side::Supply => nm.qs(k, t),
                    Side::Return => nm.qr(k, t),
                };
                let id = &idx.heat_nodes[n];
                let tn = nm.node(temp, n, t);
                match inflow.len() {
                    0 => {}
                    1 => {
                        let mut b = ConstraintBlock::new(format!("mix.{label}.{id}.{t}"));
                        b.row("single", Affine::var(tn).add_term(out(inflow[0]), -1.0), Sense::Eq, 0.0);
                        blocks.push(b);
                    }
                    _ => {
                        let sq_f: f64 = inflow.iter().map(|&k| pipes[k].max_flow).sum();
                        let mut b = ConstraintBlock::new(format!("mix.{label}.{id}.{t}"));
                        let big = var_name("M", &format!("{label}.{id}"), t);
                        b.var(VarDecl::free(big.clone()));
                        let mut sum = Affine::term(big.clone(), -1.0);
                        for &k in inflow {
                            let m = var_name("m", &pipes[k].id, t);
                            b.var(VarDecl::free(m.clone()));
                            sum = sum.add_term(m.clone(), 1.0);
                            let tag = format!("mixk.{}.{t}", pipes[k].id);
                            let (qk, tk) = (flow(k), out(k));
                            blocks.push(ccp_bilinear_affine(
                                &tag,
                                Affine::term(m, 1.0 / (sq_f * SIGMA_T)),
                                Affine::term(qk.clone(), 1.0 / sq_f),
                                Affine::term(tk.clone(), 1.0 / SIGMA_T),
                                r(&qk) / sq_f,
                                r(&tk) / SIGMA_T,
                                Some(&tag),
                            ));
                        }
                        b.row("sum", sum, Sense::Eq, 0.0);
                        let mut total = Affine::default();
                        for &k in inflow {
                            total = total.add_term(flow(k), 1.0 / sq_f);
                        }
                        let q_tot: f64 = inflow.iter().map(|&k| r(&flow(k))).sum();
                        let tag = format!("mixn.{label}.{id}.{t}");
                        blocks.push(ccp_bilinear_affine(
                            &tag,
                            Affine::term(big, 1.0 / (sq_f * SIGMA_T)),
                            total,
                            Affine::term(tn.clone(), 1.0 / SIGMA_T),
                            q_tot / sq_f,
                            r(&tn) / SIGMA_T,
                            Some(&tag),
                        ));
                        blocks.push(b);
                    }
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

/// Heat states and CHP coupling quantities (W, var) per slot.
pub fn extract(s: &Scenario, idx: &Index, v: &ReferencePoint) -> (Vec<HeatState>, Vec<CoupleState>) {
    let nm = Names { s, idx };
    let h = &s.heat;
    let get = |n: &str| v.get(n).unwrap_or(0.0);
    let nodes = idx.heat_nodes.len();
    let mut states = Vec::new();
    let mut couple = Vec::new();
    for t in 0..s.slots() {
        let per_node = |kind: &str| (0..nodes).map(|n| get(&nm.node(kind, n, t))).collect::<Vec<_>>();
        states.push(HeatState {
            alpha: h.chps.iter().enumerate().map(|(c, ch)| (0..ch.points.len()).map(|k| get(&nm.alpha(c, k, t))).collect()).collect(),
            h_gen: (0..h.chps.len()).map(|c| get(&nm.chp("H", c, t)) * MW).collect(),
            q_rs: per_node("qrs"),
            q_s: (0..h.supply_pipes.len()).map(|k| get(&nm.qs(k, t))).collect(),
            q_r: (0..h.return_pipes.len()).map(|k| get(&nm.qr(k, t))).collect(),
            h_s: per_node("hs"),
            h_r: per_node("hr"),
            tau_s: per_node("ts"),
            tau_r: per_node("tr"),
            tau_s_out: (0..h.supply_pipes.len()).map(|k| get(&nm.tso(k, t))).collect(),
            tau_r_out: (0..h.return_pipes.len()).map(|k| get(&nm.tro(k, t))).collect(),
        });
        polish_heads(s, idx, states.last_mut().expect("just pushed"));
        couple.push(CoupleState {
            p_gen: (0..h.chps.len()).map(|c| get(&nm.chp("pg", c, t)) * MW).collect(),
            q_gen: (0..h.chps.len()).map(|c| get(&nm.chp("qg", c, t)) * MW).collect(),
            p_hpump: (0..h.chps.len()).map(|c| get(&nm.chp("eh", c, t)) * MW).collect(),
            p_wpump: Vec::new(),
        });
    }
    (states, couple)
}

/// Replaces the relaxed head losses by the exact ones on a radial network:
/// heads are re-propagated from the CHP nodes along the flows. Exact losses
/// never exceed the relaxed ones, so load pressure differences only grow and
/// the pump gains are untouched. Meshed networks, or a result that would
/// break a pressure-difference floor, keep the solved heads.
fn polish_heads(s: &Scenario, idx: &Index, st: &mut HeatState) {
    let h = &s.heat;
    let nodes = idx.heat_nodes.len();
    let mut hs = vec![None; nodes];
    let mut hr = vec![None; nodes];
    let mut queue: Vec<usize> = idx.chp_node.clone();
    for &n in &queue {
        hs[n] = Some(st.h_s[n]);
        hr[n] = Some(st.h_r[n]);
    }
    let mut i = 0;
    while i < queue.len() {
        let n = queue[i];
        i += 1;
        let mut reached = Vec::new();
        for &k in &idx.sup_out[n] {
            let j = idx.sup_to[k];
            if hs[j].is_some() {
                return;
            }
            let q = st.q_s[k];
            hs[j] = Some(hs[n].expect("queued") - h.supply_pipes[k].friction * q * q.abs());
            reached.push(j);
        }
        for &k in &idx.ret_in[n] {
            let j = idx.ret_from[k];
            if hr[j].is_some() {
                return;
            }
            let q = st.q_r[k];
            hr[j] = Some(hr[n].expect("queued") + h.return_pipes[k].friction * q * q.abs());
        }
        for j in reached {
            queue.push(j);
        }
    }
    let (Some(hs), Some(hr)): (Option<Vec<f64>>, Option<Vec<f64>>) =
        (hs.into_iter().collect(), hr.into_iter().collect())
    else {
        return;
    };
    for (li, load) in h.loads.iter().enumerate() {
        let n = idx.load_node[li];
        if hs[n] - hr[n] < load.min_head_drop.min(st.h_s[n] - st.h_r[n]) {
            return;
        }
    }
    st.h_s = hs;
    st.h_r = hr;
}

/// Physics-informed reference: load flows from a design temperature drop,
/// pipe flows by subtree sums, temperatures propagated exactly along the
/// tree, heads from the datum with just enough supply head for every load.
pub fn warm_start(s: &Scenario, idx: &Index) -> ReferencePoint {
    let h = &s.heat;
    let nm = Names { s, idx };
    let c = h.heat_capacity;
    let nodes = idx.heat_nodes.len();
    let mut v = ReferencePoint::default();
    // topological order of the supply tree from the CHPs
    let mut order: Vec<usize> = idx.chp_node.clone();
    let mut seen = vec![false; nodes];
    for &n in &order {
        seen[n] = true;
    }
    let mut i = 0;
    while i < order.len() {
        let n = order[i];
        for &k in &idx.sup_out[n] {
            let j = idx.sup_to[k];
            if !seen[j] {
                seen[j] = true;
                order.push(j);
            }
        }
        i += 1;
    }
    for n in 0..nodes {
        if !seen[n] {
            order.push(n);
        }
    }
    // return pipe feeding into each node's return side from node j
    let ret_of = |from: usize, to: usize| (0..h.return_pipes.len()).find(|&k| idx.ret_from[k] == from && idx.ret_to[k] == to);

    for t in 0..s.slots() {
        let tau0 = h.ambient[t];
        let mut qrs = vec![0.0; nodes];
        let mut ts = vec![0.0; nodes];
        let mut tr = vec![0.0; nodes];
        let mut qs = vec![0.0; h.supply_pipes.len()];
        let mut qr = vec![0.0; h.return_pipes.len()];
        let mut tso = vec![0.0; h.supply_pipes.len()];
        let mut tro = vec![0.0; h.return_pipes.len()];
        let mut drop = vec![40.0_f64; nodes];
        for pass in 0..6 {
            for (li, load) in h.loads.iter().enumerate() {
                let n = idx.load_node[li];
                let dt = drop[n].max(5.0);
                let mut q = load.demand[t] / (c * dt);
                if load.demand[t] <= 0.0 && pass > 0 {
                    // nothing extracted: pick the feeder flow whose losses
                    // bring the supply down into the return window
                    q = idle_flow(h, idx, n, &ts, tau0, 0.75 * load.return_temp_max + 0.25 * load.return_temp_min);
                }
                qrs[n] = -q.clamp(Q_MIN, load.max_flow);
            }
            // subtree flows, leaves first
            let mut sub = vec![0.0; nodes];
            for &n in order.iter().rev() {
                let own = if qrs[n] < 0.0 { -qrs[n] } else { 0.0 };
                let below: f64 = idx.sup_out[n].iter().map(|&k| sub[idx.sup_to[k]]).sum();
                sub[n] = own + below;
                for &k in &idx.sup_out[n] {
                    qs[k] = sub[idx.sup_to[k]].max(Q_MIN);
                    if let Some(kr) = ret_of(idx.sup_to[k], n) {
                        qr[kr] = qs[k];
                    }
                }
            }
            for (ci, chp) in h.chps.iter().enumerate() {
                let n = idx.chp_node[ci];
                qrs[n] = sub[n].min(chp.max_flow);
                ts[n] = 0.5 * (chp.supply_temp_min + chp.supply_temp_max);
            }
            // supply temperatures downstream
            for &n in &order {
                if !idx.sup_in[n].is_empty() {
                    let (mut m, mut f) = (0.0, 0.0);
                    for &k in &idx.sup_in[n] {
                        m += qs[k] * tso[k];
                        f += qs[k];
                    }
                    ts[n] = m / f;
                }
                for &k in &idx.sup_out[n] {
                    tso[k] = (ts[n] - tau0) * (-h.supply_pipes[k].xi / qs[k]).exp() + tau0;
                }
            }
            // return temperatures upstream
            for &n in order.iter().rev() {
                if idx.ret_in[n].is_empty() {
                    tr[n] = match idx.heat_role[n] {
                        HeatRole::Load(li) if h.loads[li].demand[t] <= 0.0 => {
                            ts[n].clamp(h.loads[li].return_temp_min, h.loads[li].return_temp_max)
                        }
                        HeatRole::Load(li) => 0.5 * (h.loads[li].return_temp_min + h.loads[li].return_temp_max),
                        _ => ts[n],
                    };
                } else {
                    let (mut m, mut f) = (0.0, 0.0);
                    for &k in &idx.ret_in[n] {
                        m += qr[k] * tro[k];
                        f += qr[k];
                    }
                    tr[n] = m / f;
                }
                for &k in &idx.ret_out[n] {
                    tro[k] = (tr[n] - tau0) * (-h.return_pipes[k].xi / qr[k]).exp() + tau0;
                }
            }
            for n in 0..nodes {
                drop[n] = ts[n] - tr[n];
            }
        }
        // heads: return side rises away from the CHP, supply side falls
        let mut hr = vec![0.0; nodes];
        let mut loss_s = vec![0.0; nodes];
        for &n in &order {
            for &k in &idx.sup_out[n] {
                let j = idx.sup_to[k];
                loss_s[j] = loss_s[n] + h.supply_pipes[k].friction * qs[k] * qs[k];
                if let Some(kr) = ret_of(j, n) {
                    hr[j] = hr[n] + h.return_pipes[kr].friction * qr[kr] * qr[kr];
                }
            }
            if let HeatRole::Chp(_) = idx.heat_role[n] {
                hr[n] = 0.0;
            }
        }
        let mut need: f64 = 0.0;
        for (li, load) in h.loads.iter().enumerate() {
            let n = idx.load_node[li];
            need = need.max(load.min_head_drop + loss_s[n] + hr[n]);
        }
        let hs: Vec<f64> = (0..nodes).map(|n| h.datum_head + need - loss_s[n]).collect();
        for x in hr.iter_mut() {
            *x += h.datum_head;
        }
        for n in 0..nodes {
            v.set(nm.node("qrs", n, t), qrs[n]);
            v.set(nm.node("ts", n, t), ts[n]);
            v.set(nm.node("tr", n, t), tr[n]);
            v.set(nm.node("hs", n, t), hs[n]);
            v.set(nm.node("hr", n, t), hr[n]);
        }
        for k in 0..h.supply_pipes.len() {
            v.set(nm.qs(k, t), qs[k]);
            v.set(nm.tso(k, t), tso[k]);
            v.set(var_name("y", &h.supply_pipes[k].id, t), clamp_y((-h.supply_pipes[k].xi / qs[k]).exp()));
        }
        for k in 0..h.return_pipes.len() {
            v.set(nm.qr(k, t), qr[k]);
            v.set(nm.tro(k, t), tro[k]);
            v.set(var_name("y", &h.return_pipes[k].id, t), clamp_y((-h.return_pipes[k].xi / qr[k]).exp()));
        }
        let rho_g = h.density * h.gravity;
        for (ci, chp) in h.chps.iter().enumerate() {
            let n = idx.chp_node[ci];
            let heat = c * qrs[n] * (ts[n] - tr[n]);
            v.set(nm.chp("H", ci, t), heat / MW);
            v.set(nm.chp("eh", ci, t), rho_g / chp.pump.efficiency * (hs[n] - hr[n]) * qrs[n] / MW);
        }
    }
    v
}
