//! Decomposed scheduling: the power subproblem (OPF-C) coordinates the water
//! (OWF-C) and heat (OHF-C) subproblems, each solved by an inner CCP loop.
//!
//! The outer loop is a proximal best response. Water and heat see the power
//! network through nodal prices read from the last OPF-C solve plus a
//! proximal pull towards the last served request. Their coupling rows carry
//! the multipliers μ and values G* that make up the [`DualBundle`].

pub mod heat;
pub mod power;
pub mod water;

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conic::{self, Affine, ConicError, ConicProgram, SolveOptions, SolveResult, Status};
use crate::convexify::{ConvexifyError, ReferencePoint};
use crate::model::{validate_scenario, Index, LoadError, Scenario, ValidationReport};
use crate::physics::{eval_all_residuals, total_cost, CoupleState, PhysicsError, ResidualReport, Solution};

/// Watts per megawatt; subproblems carry power in MW.
pub const MW: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Inner CCP stop: relative subproblem objective change.
    pub eps_inner: f64,
    /// Outer stop: relative total-cost change and coupling consensus.
    pub eps_outer: f64,
    pub max_inner: usize,
    pub max_outer: usize,
    /// Price per unit of elastic slack on CCP rows.
    pub slack_penalty: f64,
    /// Total slack below which an inner iterate counts as feasible.
    pub slack_tol: f64,
    /// Slack above which the initialization is reported as failed.
    pub init_slack_tol: f64,
    /// Weight ε_W on Σ F·W that keeps the Darcy-Weisbach relaxation tight.
    pub darcy_weight: f64,
    /// Proximal weight ρ in $/pu² per slot; `None` picks one from prices and
    /// feeder resistance.
    pub proximal: Option<f64>,
    /// Use the native exponential cone for ln y ≥ z (tangent cuts otherwise).
    pub native_exp: bool,
    /// Max relative residual per family for a certified solution.
    pub certify_tol: f64,
    /// 0 silent, 1 per outer iteration, 2 per inner iteration (stderr).
    pub verbosity: u8,
    pub conic: SolveOptions,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            eps_inner: 1e-5,
            eps_outer: 1e-4,
            max_inner: 30,
            max_outer: 50,
            slack_penalty: 1e4,
            slack_tol: 1e-7,
            init_slack_tol: 1e-6,
            darcy_weight: 1e-3,
            proximal: None,
            native_exp: true,
            certify_tol: 1e-3,
            verbosity: 0,
            conic: SolveOptions::default(),
        }
    }
}

impl SolverOptions {
    pub fn check(&self) -> Result<(), SchedError> {
        let bad = |m: &str| Err(SchedError::Options(m.to_string()));
        if !(self.eps_inner > 0.0 && self.eps_outer > 0.0) {
            return bad("tolerances must be positive");
        }
        if self.max_inner < 1 || self.max_outer < 1 {
            return bad("iteration caps must be at least 1");
        }
        if !(self.slack_penalty > 0.0) {
            return bad("slack penalty must be positive");
        }
        if let Some(r) = self.proximal {
            if !(r >= 0.0 && r.is_finite()) {
                return bad("proximal weight must be finite and nonnegative");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SchedError {
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error("scenario failed validation: {0:?}")]
    Invalid(ValidationReport),
    #[error("bad options: {0}")]
    Options(String),
    #[error(transparent)]
    Conic(#[from] ConicError),
    #[error(transparent)]
    Convexify(#[from] ConvexifyError),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error("{stage} is infeasible: {diagnostics}")]
    Infeasible { stage: String, diagnostics: String },
    #[error("{stage}: solver failed ({diagnostics})")]
    Numerical { stage: String, diagnostics: String },
    #[error("initialization left slack {slack:.3e} after {iterations} CCP iterations ({detail})")]
    InitFailure { slack: f64, iterations: usize, detail: String },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// What the power side tells the water and heat subproblems.
#[derive(Debug, Clone)]
pub struct Coordination {
    /// Hold the coupling draws at `star` instead of pricing them.
    pub fixed: bool,
    pub rho: f64,
    /// $/pu per slot, `[slot][bus]`.
    pub price_p: Vec<Vec<f64>>,
    pub price_q: Vec<Vec<f64>>,
}

impl Coordination {
    /// Every bus priced at the grid tariff, no proximal term.
    pub fn grid(s: &Scenario) -> Coordination {
        let n = s.power.nodes.len();
        let h = s.horizon.slot_hours();
        let price_p = (0..s.slots()).map(|t| vec![s.prices.electricity[t] * s.power.s_base_va * h; n]).collect();
        Coordination { fixed: false, rho: 0.0, price_p, price_q: vec![vec![0.0; n]; s.slots()] }
    }

    pub fn fixed(s: &Scenario) -> Coordination {
        Coordination { fixed: true, ..Coordination::grid(s) }
    }
}

/// A coupling row of a subproblem: its tag, the convex part G as an
/// expression, and the OPF-side map D (pu variable, coefficient).
#[derive(Debug, Clone)]
pub struct CouplingMeta {
    pub tag: String,
    pub g: Affine,
    pub d: Vec<(String, f64)>,
}

/// A built subproblem with its slack and coupling bookkeeping.
#[derive(Debug, Clone)]
pub struct Built {
    pub program: ConicProgram,
    pub slacks: Vec<String>,
    pub coupling: Vec<CouplingMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingDual {
    pub tag: String,
    pub mu: f64,
    pub g: f64,
    pub d: Vec<(String, f64)>,
}

/// μ*, G* and D of the coupling rows plus the request OPF-C must serve.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DualBundle {
    pub water: Vec<CouplingDual>,
    pub heat: Vec<CouplingDual>,
    pub request: Vec<CoupleState>,
    /// Outer iteration whose inner iterates produced this bundle.
    pub stamp: usize,
}

impl DualBundle {
    /// Zero duals with the given request.
    pub fn idle(request: Vec<CoupleState>) -> DualBundle {
        DualBundle { request, ..DualBundle::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub m: usize,
    pub n_w: usize,
    pub n_h: usize,
    pub obj_water: f64,
    pub obj_heat: f64,
    pub obj_power: f64,
    /// True total operating cost of the assembled solution, $.
    pub total: f64,
    /// ‖request_m − request_{m−1}‖∞, pu.
    pub coupling_change: f64,
    pub rho: f64,
    pub backtracks: usize,
    pub slack_water: f64,
    pub slack_heat: f64,
    /// Stage of the inner iterates that built the bundle given to OPF-C.
    pub bundle_stamp: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub timing: Option<StageTiming>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub water_s: f64,
    pub heat_s: f64,
    pub power_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn push(&mut self, r: TraceRecord) {
        debug_assert!(self.records.last().map_or(true, |p| p.m < r.m));
        self.records.push(r);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.total).collect()
    }

    /// One JSON object per record. Wall times are dropped unless asked for,
    /// so the output is reproducible.
    pub fn to_jsonl(&self, with_timing: bool) -> String {
        let mut out = String::new();
        for r in &self.records {
            let mut r = r.clone();
            if !with_timing {
                r.timing = None;
            }
            out.push_str(&serde_json::to_string(&r).expect("trace record serializes"));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub solution: Solution,
    pub trace: Trace,
    pub converged: bool,
    pub certified: bool,
    pub residuals: ResidualReport,
    pub objective: f64,
    pub bundle: DualBundle,
}

/// A subproblem solvable by the inner CCP loop.
pub trait Subproblem: Sync {
    fn name(&self) -> &'static str;
    fn warm_start(&self, opts: &SolverOptions) -> Result<ReferencePoint, SchedError>;
    fn build(
        &self,
        star: &[CoupleState],
        reference: &ReferencePoint,
        coord: &Coordination,
        opts: &SolverOptions,
    ) -> Result<Built, SchedError>;
    /// Maps an extrapolated reference back into the domain `build` accepts.
    fn project(&self, _reference: &mut ReferencePoint) {}
}

pub struct WaterSub<'a> {
    pub s: &'a Scenario,
    pub idx: &'a Index,
}

impl Subproblem for WaterSub<'_> {
    fn name(&self) -> &'static str {
        "OWF-C"
    }
    fn warm_start(&self, opts: &SolverOptions) -> Result<ReferencePoint, SchedError> {
        water::warm_start(self.s, self.idx, opts)
    }
    fn build(&self, star: &[CoupleState], r: &ReferencePoint, c: &Coordination, o: &SolverOptions) -> Result<Built, SchedError> {
        water::build_owf_c(self.s, self.idx, star, r, c, o, true)
    }
}

pub struct HeatSub<'a> {
    pub s: &'a Scenario,
    pub idx: &'a Index,
}

impl Subproblem for HeatSub<'_> {
    fn name(&self) -> &'static str {
        "OHF-C"
    }
    fn warm_start(&self, _opts: &SolverOptions) -> Result<ReferencePoint, SchedError> {
        Ok(heat::warm_start(self.s, self.idx))
    }
    fn project(&self, reference: &mut ReferencePoint) {
        heat::project(reference);
    }
    fn build(&self, star: &[CoupleState], r: &ReferencePoint, c: &Coordination, o: &SolverOptions) -> Result<Built, SchedError> {
        heat::build_ohf_c(self.s, self.idx, star, r, c, o)
    }
}

/// Result of one inner CCP run.
#[derive(Debug, Clone)]
pub struct InnerResult {
    pub values: ReferencePoint,
    pub objective: f64,
    /// Objective after every CCP iteration.
    pub history: Vec<f64>,
    pub iterations: usize,
    pub slack: f64,
    pub duals: Vec<CouplingDual>,
    pub converged: bool,
    pub elapsed_s: f64,
}

pub(crate) fn solve_checked(p: &ConicProgram, opts: &SolverOptions, stage: &str) -> Result<SolveResult, SchedError> {
    let r = conic::solve(p, &opts.conic)?;
    match r.status {
        Status::Optimal => Ok(r),
        Status::Infeasible => Err(SchedError::Infeasible { stage: stage.to_string(), diagnostics: r.diagnostics }),
        Status::Unbounded | Status::NumericalFailure => {
            Err(SchedError::Numerical { stage: stage.to_string(), diagnostics: r.diagnostics })
        }
    }
}

pub(crate) fn values_of(r: &SolveResult) -> ReferencePoint {
    let mut v = ReferencePoint::default();
    for (name, &i) in &r.var_index {
        v.set(name.clone(), r.primal[i]);
    }
    v
}

/// CCP on one subproblem from `ref0`: solve, move the reference to the
/// solution, repeat until the objective settles with no slack left. The
/// slack penalty is fixed at `opts.slack_penalty`, so the objective sequence
/// is non-increasing.
pub fn inner_ccp(
    sub: &dyn Subproblem,
    star: &[CoupleState],
    coord: &Coordination,
    ref0: &ReferencePoint,
    opts: &SolverOptions,
) -> Result<InnerResult, SchedError> {
    ccp_loop(sub, star, coord, ref0, opts, false)
}

/// Weight of the operating cost relative to the slack during the
/// feasibility phase.
const FEASIBILITY_COST_WEIGHT: f64 = 1e-6;

/// Largest extrapolation factor applied to the last CCP step.
const MAX_EXTRAPOLATION: f64 = 32.0;

fn shrink(beta: f64) -> f64 {
    if beta >= 4.0 {
        beta / 4.0
    } else {
        0.0
    }
}

fn extrapolate(cur: &ReferencePoint, prev: &ReferencePoint, beta: f64) -> ReferencePoint {
    let mut out = cur.clone();
    for (k, v) in &cur.values {
        if let Some(p) = prev.get(k) {
            out.set(k.clone(), v + beta * (v - p));
        }
    }
    out
}

/// The CCP iteration. The reference is pushed ahead along the last accepted
/// step by a factor that doubles while steps keep lowering the objective. A
/// step that raises it is discarded and retried with a smaller push, so
/// accepted objectives never increase.
///
/// With `feasibility` the objective is the total slack plus the operating
/// cost at a tiny weight, and the loop stops at the first slack-free iterate.
fn ccp_loop(
    sub: &dyn Subproblem,
    star: &[CoupleState],
    coord: &Coordination,
    ref0: &ReferencePoint,
    opts: &SolverOptions,
    feasibility: bool,
) -> Result<InnerResult, SchedError> {
    let start = Instant::now();
    let mut current = ref0.clone();
    let mut previous: Option<ReferencePoint> = None;
    let mut beta = 0.0;
    let mut history: Vec<f64> = Vec::new();
    let mut out = None;
    let mut local = opts.clone();
    if feasibility {
        local.slack_penalty = 1.0 / FEASIBILITY_COST_WEIGHT;
    }
    for it in 1..=opts.max_inner {
        let pushed = beta > 0.0 && previous.is_some() && !history.is_empty();
        let reference = match (&previous, pushed) {
            (Some(p), true) => {
                let mut r = extrapolate(&current, p, beta);
                sub.project(&mut r);
                r
            }
            _ => current.clone(),
        };
        let t0 = Instant::now();
        let mut built = sub.build(star, &reference, coord, &local)?;
        let t_build = t0.elapsed().as_secs_f64();
        if feasibility {
            built.program.objective.scale(FEASIBILITY_COST_WEIGHT);
        }
        let r = match solve_checked(&built.program, &local, sub.name()) {
            Ok(r) => r,
            Err(_) if pushed => {
                beta = shrink(beta);
                continue;
            }
            Err(e) => return Err(e),
        };
        if pushed {
            let last = *history.last().expect("pushed steps follow a capped step");
            if r.objective > last + 1e-9 * last.abs().max(1.0) {
                beta = shrink(beta);
                continue;
            }
        }
        let vals = values_of(&r);
        let at = |n: &str| vals.get(n).unwrap_or(0.0);
        let slack = built.slacks.iter().map(|s| at(s)).fold(0.0, f64::max);
        let duals = built
            .coupling
            .iter()
            .map(|c| CouplingDual { tag: c.tag.clone(), mu: r.dual(&c.tag).unwrap_or(0.0), g: c.g.eval(&at), d: c.d.clone() })
            .collect();
        let settled = history.last().map_or(false, |&p| (r.objective - p).abs() <= opts.eps_inner * p.abs().max(1.0));
        let converged = (settled || feasibility || built.slacks.is_empty()) && slack <= opts.slack_tol;
        history.push(r.objective);
        if opts.verbosity >= 2 {
            eprintln!("  {} it {it}: obj {:.6} slack {:.3e} push {beta} build {t_build:.3}s total {:.3}s iters {}", sub.name(), r.objective, slack, t0.elapsed().as_secs_f64(), r.iterations);
        }
        let mut next = current.clone();
        for (k, v) in vals.values {
            next.set(k, v);
        }
        previous = Some(std::mem::replace(&mut current, next));
        out = Some((r.objective, it, slack, duals, converged));
        if converged {
            break;
        }
        beta = (2.0 * beta).clamp(1.0, MAX_EXTRAPOLATION);
    }
    let (objective, iterations, slack, duals, converged) = out.ok_or_else(|| SchedError::Numerical {
        stage: sub.name().to_string(),
        diagnostics: "no CCP iterate accepted".into(),
    })?;
    Ok(InnerResult {
        values: current,
        objective,
        history,
        iterations,
        slack,
        duals,
        converged,
        elapsed_s: start.elapsed().as_secs_f64(),
    })
}

#[allow(clippy::too_many_arguments)]
fn run_pair(
    wsub: &WaterSub,
    hsub: &HeatSub,
    star: &[CoupleState],
    coord: &Coordination,
    wref: &ReferencePoint,
    href: &ReferencePoint,
    opts: &SolverOptions,
    feasibility: bool,
) -> Result<(InnerResult, InnerResult), SchedError> {
    let (w, h) = std::thread::scope(|sc| {
        let hw = sc.spawn(|| ccp_loop(wsub, star, coord, wref, opts, feasibility));
        let h = ccp_loop(hsub, star, coord, href, opts, feasibility);
        (hw.join().expect("water thread"), h)
    });
    Ok((w?, h?))
}

/// Step 0: CCP on the slack-augmented water and heat subproblems from the
/// physics-informed warm starts, each sector buying and selling power at the
/// grid tariff. The objective is dominated by the total slack. Fails when
/// slack remains.
pub fn find_initial_feasible(s: &Scenario, opts: &SolverOptions) -> Result<(InnerResult, InnerResult), SchedError> {
    let idx = s.index()?;
    let (wsub, hsub) = (WaterSub { s, idx: &idx }, HeatSub { s, idx: &idx });
    let star = Solution::zeros(s, &idx).couple;
    let wref = wsub.warm_start(opts)?;
    let href = hsub.warm_start(opts)?;
    let (w, h) = run_pair(&wsub, &hsub, &star, &Coordination::grid(s), &wref, &href, opts, true)?;
    for (r, name) in [(&w, "water"), (&h, "heat")] {
        if r.slack > opts.init_slack_tol {
            let worst: Vec<String> = r
                .values
                .values
                .iter()
                .filter(|(k, v)| (k.ends_with(".s51") || k.ends_with(".s52") || k.ends_with(".tan")) && **v > opts.slack_tol)
                .map(|(k, v)| format!("{k}={v:.3e}"))
                .take(8)
                .collect();
            return Err(SchedError::InitFailure {
                slack: r.slack,
                iterations: r.iterations,
                detail: format!("{name}: {}", worst.join(", ")),
            });
        }
    }
    Ok((w, h))
}

fn request_of(s: &Scenario, idx: &Index, w: &InnerResult, h: &InnerResult) -> Vec<CoupleState> {
    let (_, draws) = water::extract(s, idx, &w.values);
    let (_, mut couple) = heat::extract(s, idx, &h.values);
    for (c, d) in couple.iter_mut().zip(draws) {
        c.p_wpump = d;
    }
    couple
}

fn assemble_solution(s: &Scenario, idx: &Index, r: &SolveResult, w: &InnerResult, h: &InnerResult) -> Solution {
    let (water, _) = water::extract(s, idx, &w.values);
    let (heat, _) = heat::extract(s, idx, &h.values);
    Solution { power: power::extract(s, r), water, heat, couple: request_of(s, idx, w, h) }
}

fn request_distance(a: &[CoupleState], b: &[CoupleState], sb: f64) -> f64 {
    let mut d: f64 = 0.0;
    for (x, y) in a.iter().zip(b) {
        for (u, v) in [(&x.p_gen, &y.p_gen), (&x.q_gen, &y.q_gen), (&x.p_hpump, &y.p_hpump), (&x.p_wpump, &y.p_wpump)] {
            for (p, q) in u.iter().zip(v.iter()) {
                d = d.max((p - q).abs() / sb);
            }
        }
    }
    d
}

fn request_norm(a: &[CoupleState], sb: f64) -> f64 {
    a.iter()
        .flat_map(|c| c.p_gen.iter().chain(&c.q_gen).chain(&c.p_hpump).chain(&c.p_wpump))
        .fold(0.0, |m, v| m.max(v.abs() / sb))
}

/// Proximal weight bounding the curvature of the power-side cost in a
/// coupling draw: 2·λ·R along the feeder path plus the steepest DER
/// quadratic cost.
pub fn auto_rho(s: &Scenario, idx: &Index) -> f64 {
    let h = s.horizon.slot_hours();
    let lam = s.prices.electricity.iter().fold(0.0, |m: f64, &v| m.max(v)) * s.power.s_base_va * h;
    let path_r = |mut bus: usize| {
        let mut r = 0.0;
        while let Some(l) = idx.power_parent[bus] {
            r += s.power.lines[l].r;
            bus = idx.power_from[l];
        }
        r
    };
    let r_max = idx.pump_bus.iter().chain(&idx.chp_bus).map(|&b| path_r(b)).fold(0.0, f64::max);
    let cq = s.power.ders.iter().map(|d| d.cost_quadratic).fold(0.0, f64::max);
    (2.0 * lam * r_max + 2.0 * cq).max(1e-3 * lam)
}

struct Stage {
    w: InnerResult,
    h: InnerResult,
    bundle: DualBundle,
    opf: SolveResult,
    solution: Solution,
    total: f64,
    power_s: f64,
}

fn power_stage(s: &Scenario, idx: &Index, w: InnerResult, h: InnerResult, stamp: usize, opts: &SolverOptions) -> Result<Stage, SchedError> {
    let t0 = Instant::now();
    let bundle = DualBundle { water: w.duals.clone(), heat: h.duals.clone(), request: request_of(s, idx, &w, &h), stamp };
    let prog = power::build_opf_c(s, &bundle)?;
    let opf = solve_checked(&prog, opts, "OPF-C")?;
    let solution = assemble_solution(s, idx, &opf, &w, &h);
    let total = total_cost(s, &solution)?;
    Ok(Stage { w, h, bundle, opf, solution, total, power_s: t0.elapsed().as_secs_f64() })
}

fn precheck(s: &Scenario, opts: &SolverOptions) -> Result<Index, SchedError> {
    opts.check()?;
    let report = validate_scenario(s);
    if !report.is_clean() {
        return Err(SchedError::Invalid(report));
    }
    Ok(s.index()?)
}

fn finish(s: &Scenario, st: Stage, trace: Trace, converged: bool, opts: &SolverOptions) -> Result<Outcome, SchedError> {
    let residuals = eval_all_residuals(s, &st.solution)?;
    let certified = residuals.passes(opts.certify_tol);
    Ok(Outcome { objective: st.total, solution: st.solution, trace, converged, certified, residuals, bundle: st.bundle })
}

fn record(m: usize, st: &Stage, change: f64, rho: f64, backtracks: usize) -> TraceRecord {
    TraceRecord {
        m,
        n_w: st.w.iterations,
        n_h: st.h.iterations,
        obj_water: st.w.objective,
        obj_heat: st.h.objective,
        obj_power: st.opf.objective,
        total: st.total,
        coupling_change: change,
        rho,
        backtracks,
        slack_water: st.w.slack,
        slack_heat: st.h.slack,
        bundle_stamp: st.bundle.stamp,
        timing: Some(StageTiming { water_s: st.w.elapsed_s, heat_s: st.h.elapsed_s, power_s: st.power_s }),
    }
}

/// Continues `inner` under fixed coordination for up to `rounds` more
/// inner runs, until it reports convergence.
fn settle(
    sub: &dyn Subproblem,
    star: &[CoupleState],
    coord: &Coordination,
    mut inner: InnerResult,
    rounds: usize,
    opts: &SolverOptions,
) -> Result<InnerResult, SchedError> {
    let mut history = std::mem::take(&mut inner.history);
    let mut iterations = inner.iterations;
    let mut elapsed = inner.elapsed_s;
    // the first round always runs: `inner` may come from the feasibility phase
    for round in 0..rounds {
        if round > 0 && inner.converged {
            break;
        }
        inner = inner_ccp(sub, star, coord, &inner.values, opts)?;
        history.extend_from_slice(&inner.history);
        iterations += inner.iterations;
        elapsed += inner.elapsed_s;
    }
    inner.history = history;
    inner.iterations = iterations;
    inner.elapsed_s = elapsed;
    Ok(inner)
}

/// Stage 1: each sector on its own at the grid tariff, solved to inner
/// convergence from the initialization. This is the separate baseline and
/// the starting point of the coordinated iterations.
fn grid_stage(s: &Scenario, idx: &Index, opts: &SolverOptions) -> Result<Stage, SchedError> {
    let (wsub, hsub) = (WaterSub { s, idx }, HeatSub { s, idx });
    let (w, h) = find_initial_feasible(s, opts)?;
    let star = Solution::zeros(s, idx).couple;
    let coord = Coordination::grid(s);
    let rounds = opts.max_outer;
    let (w, h) = std::thread::scope(|sc| {
        let hw = sc.spawn(|| settle(&wsub, &star, &coord, w, rounds, opts));
        let h = settle(&hsub, &star, &coord, h, rounds, opts);
        (hw.join().expect("water thread"), h)
    });
    power_stage(s, idx, w?, h?, 1, opts)
}

/// Joint schedule by the decomposed algorithm.
pub fn solve_opwhf(s: &Scenario, opts: &SolverOptions) -> Result<Outcome, SchedError> {
    let idx = precheck(s, opts)?;
    let (wsub, hsub) = (WaterSub { s, idx: &idx }, HeatSub { s, idx: &idx });
    let sb = s.power.s_base_va;
    let mut cur = grid_stage(s, &idx, opts)?;
    let mut trace = Trace::default();
    trace.push(record(1, &cur, 0.0, 0.0, 0));
    if opts.verbosity >= 1 {
        eprintln!("outer 1: total {:.6}", cur.total);
    }
    if s.is_decoupled() {
        return finish(s, cur, trace, true, opts);
    }
    let mut rho = opts.proximal.unwrap_or_else(|| auto_rho(s, &idx));
    let mut converged = false;
    for m in 2..=opts.max_outer {
        let (pp, pq) = power::nodal_prices(s, &idx, &cur.opf);
        let star = cur.bundle.request.clone();
        let mut backtracks = 0;
        let next = loop {
            let coord = Coordination { fixed: false, rho, price_p: pp.clone(), price_q: pq.clone() };
            let (w, h) = run_pair(&wsub, &hsub, &star, &coord, &cur.w.values, &cur.h.values, opts, false)?;
            let feasible = w.slack <= opts.init_slack_tol && h.slack <= opts.init_slack_tol;
            let cand = power_stage(s, &idx, w, h, m, opts)?;
            if feasible && cand.total <= cur.total + 1e-9 * cur.total.abs().max(1.0) {
                break Some(cand);
            }
            backtracks += 1;
            if backtracks > 12 {
                break None;
            }
            rho = if rho > 0.0 { rho * 4.0 } else { 1.0 };
        };
        let Some(next) = next else {
            // no descent step left: the current point is a fixed point of the map
            converged = true;
            break;
        };
        let change = request_distance(&next.bundle.request, &cur.bundle.request, sb);
        let rel = (cur.total - next.total).abs() / cur.total.abs().max(1.0);
        let scale = request_norm(&next.bundle.request, sb).max(1.0);
        trace.push(record(m, &next, change, rho, backtracks));
        if opts.verbosity >= 1 {
            eprintln!("outer {m}: total {:.6} change {change:.3e} rho {rho:.3e} backtracks {backtracks}", next.total);
        }
        cur = next;
        if rel <= opts.eps_outer && change <= opts.eps_outer * scale {
            converged = true;
            break;
        }
    }
    finish(s, cur, trace, converged, opts)
}

/// Each sector alone: water and heat trade power with the grid at the tariff
/// with no feedback from the feeder, then the power network serves the
/// resulting draws and injections.
pub fn solve_separate(s: &Scenario, opts: &SolverOptions) -> Result<Outcome, SchedError> {
    let idx = precheck(s, opts)?;
    let st = grid_stage(s, &idx, opts)?;
    let mut trace = Trace::default();
    trace.push(record(1, &st, 0.0, 0.0, 0));
    finish(s, st, trace, true, opts)
}
