//! Conic program container and the interior-point adapter.
//!
//! Rows are written over named variables. Duals follow `L = f + μᵀ(g − b)`:
//! a `≤` row and a `≥` row (read as `−g ≤ −b`) both report μ ≥ 0. Equality
//! rows report the signed multiplier of `g − b`.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Whether the adapter solves exponential-cone rows natively.
pub const EXP_CONE_SUPPORTED: bool = true;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub terms: Vec<(String, f64)>,
    pub constant: f64,
}

impl Affine {
    pub fn var(name: impl Into<String>) -> Affine {
        Affine { terms: vec![(name.into(), 1.0)], constant: 0.0 }
    }

    pub fn term(name: impl Into<String>, coef: f64) -> Affine {
        Affine { terms: vec![(name.into(), coef)], constant: 0.0 }
    }

    pub fn constant(c: f64) -> Affine {
        Affine { terms: Vec::new(), constant: c }
    }

    pub fn add_term(mut self, name: impl Into<String>, coef: f64) -> Affine {
        self.terms.push((name.into(), coef));
        self
    }

    pub fn plus(mut self, other: &Affine) -> Affine {
        self.terms.extend(other.terms.iter().cloned());
        self.constant += other.constant;
        self
    }

    pub fn plus_const(mut self, c: f64) -> Affine {
        self.constant += c;
        self
    }

    pub fn scaled(mut self, k: f64) -> Affine {
        for t in &mut self.terms {
            t.1 *= k;
        }
        self.constant *= k;
        self
    }

    pub fn eval(&self, value: &dyn Fn(&str) -> f64) -> f64 {
        self.constant + self.terms.iter().map(|(n, c)| c * value(n)).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

/// `expr (sense) rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRow {
    pub tag: String,
    pub expr: Affine,
    pub sense: Sense,
    pub rhs: f64,
}

/// `‖tail‖₂ ≤ head`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocRow {
    pub tag: String,
    pub head: Affine,
    pub tail: Vec<Affine>,
}

/// `(x, y, z)` in the exponential cone: `y·exp(x/y) ≤ z`, `y > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpRow {
    pub tag: String,
    pub x: Affine,
    pub y: Affine,
    pub z: Affine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarDecl {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

impl VarDecl {
    pub fn free(name: impl Into<String>) -> VarDecl {
        VarDecl { name: name.into(), lo: f64::NEG_INFINITY, hi: f64::INFINITY }
    }

    pub fn bounded(name: impl Into<String>, lo: f64, hi: f64) -> VarDecl {
        VarDecl { name: name.into(), lo, hi }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstraintBlock {
    pub tag: String,
    pub vars: Vec<VarDecl>,
    pub linear: Vec<LinearRow>,
    pub soc: Vec<SocRow>,
    pub exp: Vec<ExpRow>,
    /// Elastic slack variables, to be penalized by the caller.
    #[serde(default)]
    pub slacks: Vec<String>,
}

impl ConstraintBlock {
    pub fn new(tag: impl Into<String>) -> ConstraintBlock {
        ConstraintBlock { tag: tag.into(), ..Default::default() }
    }

    pub fn var(&mut self, decl: VarDecl) {
        self.vars.push(decl);
    }

    pub fn row(&mut self, suffix: &str, expr: Affine, sense: Sense, rhs: f64) {
        let tag = format!("{}/{}", self.tag, suffix);
        self.linear.push(LinearRow { tag, expr, sense, rhs });
    }

    pub fn cone(&mut self, suffix: &str, head: Affine, tail: Vec<Affine>) {
        let tag = format!("{}/{}", self.tag, suffix);
        self.soc.push(SocRow { tag, head, tail });
    }

    /// `a² ≤ b·c` with `b, c ≥ 0`, as `‖(2a, b − c)‖ ≤ b + c`.
    pub fn rotated(&mut self, suffix: &str, a: Vec<Affine>, b: Affine, c: Affine) {
        let mut tail: Vec<Affine> = a.into_iter().map(|x| x.scaled(2.0)).collect();
        tail.push(b.clone().plus(&c.clone().scaled(-1.0)));
        self.cone(suffix, b.plus(&c), tail);
    }

    /// `½‖a‖² ≤ w`, as `‖(2a, 2w − 1)‖ ≤ 2w + 1` after scaling.
    pub fn half_square_le(&mut self, suffix: &str, a: Vec<Affine>, w: Affine) {
        // ‖a‖² ≤ 2w  ⇔  ‖(2a, 2w − 1)‖ ≤ 2w + 1
        let mut tail: Vec<Affine> = a.into_iter().map(|x| x.scaled(2.0)).collect();
        tail.push(w.clone().scaled(2.0).plus_const(-1.0));
        self.cone(suffix, w.scaled(2.0).plus_const(1.0), tail);
    }

    pub fn exp_cone(&mut self, suffix: &str, x: Affine, y: Affine, z: Affine) {
        let tag = format!("{}/{}", self.tag, suffix);
        self.exp.push(ExpRow { tag, x, y, z });
    }

    pub fn extend(&mut self, other: ConstraintBlock) {
        self.vars.extend(other.vars);
        self.linear.extend(other.linear);
        self.soc.extend(other.soc);
        self.exp.extend(other.exp);
        self.slacks.extend(other.slacks);
    }

    /// Checks every row at a point. Returns the largest violation.
    pub fn max_violation(&self, value: &dyn Fn(&str) -> f64) -> f64 {
        let mut worst = 0f64;
        for r in &self.linear {
            let g = r.expr.eval(value) - r.rhs;
            let v = match r.sense {
                Sense::Le => g.max(0.0),
                Sense::Ge => (-g).max(0.0),
                Sense::Eq => g.abs(),
            };
            worst = worst.max(v);
        }
        for r in &self.soc {
            let n = r.tail.iter().map(|a| a.eval(value).powi(2)).sum::<f64>().sqrt();
            worst = worst.max(n - r.head.eval(value));
        }
        for r in &self.exp {
            let (x, y, z) = (r.x.eval(value), r.y.eval(value), r.z.eval(value));
            let v = if y > 0.0 { y * (x / y).exp() - z } else if x <= 0.0 && z >= 0.0 { 0.0 } else { f64::INFINITY };
            worst = worst.max(v);
        }
        worst
    }
}

/// Convex objective: linear part plus `Σ coef·x_i·x_j`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub linear: Affine,
    pub quad: Vec<(String, String, f64)>,
}

impl Objective {
    pub fn add_linear(&mut self, name: impl Into<String>, coef: f64) {
        self.linear.terms.push((name.into(), coef));
    }

    pub fn add_constant(&mut self, c: f64) {
        self.linear.constant += c;
    }

    /// Adds `weight·(a)²`.
    pub fn add_square(&mut self, a: &Affine, weight: f64) {
        for (i, (ni, ci)) in a.terms.iter().enumerate() {
            self.quad.push((ni.clone(), ni.clone(), weight * ci * ci));
            for (nj, cj) in a.terms.iter().skip(i + 1) {
                self.quad.push((ni.clone(), nj.clone(), 2.0 * weight * ci * cj));
            }
            self.linear.terms.push((ni.clone(), 2.0 * weight * ci * a.constant));
        }
        self.linear.constant += weight * a.constant * a.constant;
    }

    /// Multiplies every coefficient by `k`.
    pub fn scale(&mut self, k: f64) {
        self.linear = std::mem::take(&mut self.linear).scaled(k);
        for q in &mut self.quad {
            q.2 *= k;
        }
    }

    pub fn eval(&self, value: &dyn Fn(&str) -> f64) -> f64 {
        self.linear.eval(value) + self.quad.iter().map(|(i, j, c)| c * value(i) * value(j)).sum::<f64>()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConicError {
    #[error("duplicate tag {0}")]
    DuplicateTag(String),
    #[error("conflicting bounds for variable {0}")]
    BoundConflict(String),
    #[error("undeclared variable {var} referenced by {tag}")]
    Dangling { var: String, tag: String },
    #[error("solver setup failed: {0}")]
    Setup(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowRef {
    Linear(usize),
    Soc(usize),
    Exp(usize),
}

#[derive(Debug, Clone, Default)]
pub struct ConicProgram {
    pub vars: Vec<VarDecl>,
    pub var_index: HashMap<String, usize>,
    pub objective: Objective,
    pub linear: Vec<LinearRow>,
    pub soc: Vec<SocRow>,
    pub exp: Vec<ExpRow>,
    pub tags: BTreeMap<String, RowRef>,
}

impl ConicProgram {
    pub fn supports_exp_cone(&self) -> bool {
        EXP_CONE_SUPPORTED
    }

    pub fn declare(&mut self, d: &VarDecl) -> Result<usize, ConicError> {
        if let Some(&k) = self.var_index.get(&d.name) {
            let old = &self.vars[k];
            if old.lo != d.lo || old.hi != d.hi {
                return Err(ConicError::BoundConflict(d.name.clone()));
            }
            return Ok(k);
        }
        if d.lo > d.hi {
            return Err(ConicError::BoundConflict(d.name.clone()));
        }
        self.vars.push(d.clone());
        self.var_index.insert(d.name.clone(), self.vars.len() - 1);
        Ok(self.vars.len() - 1)
    }

    fn add_tag(&mut self, tag: &str, r: RowRef) -> Result<(), ConicError> {
        if self.tags.insert(tag.to_string(), r).is_some() {
            return Err(ConicError::DuplicateTag(tag.to_string()));
        }
        Ok(())
    }

    pub fn add_block(&mut self, b: ConstraintBlock) -> Result<(), ConicError> {
        for d in &b.vars {
            self.declare(d)?;
        }
        for r in b.linear {
            self.add_tag(&r.tag, RowRef::Linear(self.linear.len()))?;
            self.linear.push(r);
        }
        for r in b.soc {
            self.add_tag(&r.tag, RowRef::Soc(self.soc.len()))?;
            self.soc.push(r);
        }
        for r in b.exp {
            self.add_tag(&r.tag, RowRef::Exp(self.exp.len()))?;
            self.exp.push(r);
        }
        Ok(())
    }

    /// Confirms every referenced variable is declared.
    pub fn check_references(&self) -> Result<(), ConicError> {
        let check = |a: &Affine, tag: &str| -> Result<(), ConicError> {
            for (n, _) in &a.terms {
                if !self.var_index.contains_key(n) {
                    return Err(ConicError::Dangling { var: n.clone(), tag: tag.to_string() });
                }
            }
            Ok(())
        };
        for r in &self.linear {
            check(&r.expr, &r.tag)?;
        }
        for r in &self.soc {
            check(&r.head, &r.tag)?;
            for a in &r.tail {
                check(a, &r.tag)?;
            }
        }
        for r in &self.exp {
            check(&r.x, &r.tag)?;
            check(&r.y, &r.tag)?;
            check(&r.z, &r.tag)?;
        }
        check(&self.objective.linear, "objective")?;
        for (i, j, _) in &self.objective.quad {
            for n in [i, j] {
                if !self.var_index.contains_key(n) {
                    return Err(ConicError::Dangling { var: n.clone(), tag: "objective".into() });
                }
            }
        }
        Ok(())
    }

    pub fn var_count(&self) -> usize {
        self.vars.len()
    }

    /// Tags starting with `prefix`, in order.
    pub fn tags_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a String> + 'a {
        self.tags.range(prefix.to_string()..).map(|(k, _)| k).take_while(move |k| k.starts_with(prefix))
    }

    fn standard_form(&self) -> StandardForm {
        let n = self.vars.len();
        let col = |name: &str| self.var_index[name];
        let mut sf = StandardForm { n, q: vec![0.0; n], ..Default::default() };
        sf.obj_const = self.objective.linear.constant;
        for (name, c) in &self.objective.linear.terms {
            sf.q[col(name)] += c;
        }
        for (a, b, c) in &self.objective.quad {
            let (i, j) = (col(a), col(b));
            if i == j {
                sf.p.push((i, i, 2.0 * c));
            } else {
                sf.p.push((i.min(j), i.max(j), *c));
            }
        }
        let push_row = |sf: &mut StandardForm, a: &Affine, sign: f64, rhs: f64| {
            let r = sf.m;
            for (name, c) in &a.terms {
                sf.a.push((r, col(name), sign * c));
            }
            sf.b.push(sign * (rhs - a.constant));
            sf.m += 1;
        };
        // equalities
        let mut zeros = 0;
        for (k, r) in self.linear.iter().enumerate() {
            if r.sense == Sense::Eq {
                push_row(&mut sf, &r.expr, 1.0, r.rhs);
                sf.row_of.push((RowRef::Linear(k), 1.0));
                zeros += 1;
            }
        }
        if zeros > 0 {
            sf.cones.push(SupportedConeT::ZeroConeT(zeros));
        }
        let mut nonneg = 0;
        for (k, r) in self.linear.iter().enumerate() {
            match r.sense {
                Sense::Le => push_row(&mut sf, &r.expr, 1.0, r.rhs),
                Sense::Ge => push_row(&mut sf, &r.expr, -1.0, r.rhs),
                Sense::Eq => continue,
            }
            sf.row_of.push((RowRef::Linear(k), 1.0));
            nonneg += 1;
        }
        for (k, v) in self.vars.iter().enumerate() {
            if v.lo.is_finite() {
                // −x ≤ −lo
                sf.a.push((sf.m, k, -1.0));
                sf.b.push(-v.lo);
                sf.m += 1;
                nonneg += 1;
            }
            if v.hi.is_finite() {
                sf.a.push((sf.m, k, 1.0));
                sf.b.push(v.hi);
                sf.m += 1;
                nonneg += 1;
            }
        }
        if nonneg > 0 {
            sf.cones.push(SupportedConeT::NonnegativeConeT(nonneg));
        }
        for r in &self.soc {
            // s = b − A x = affine
            push_row(&mut sf, &r.head, -1.0, 0.0);
            for t in &r.tail {
                push_row(&mut sf, t, -1.0, 0.0);
            }
            sf.cones.push(SupportedConeT::SecondOrderConeT(1 + r.tail.len()));
        }
        for r in &self.exp {
            push_row(&mut sf, &r.x, -1.0, 0.0);
            push_row(&mut sf, &r.y, -1.0, 0.0);
            push_row(&mut sf, &r.z, -1.0, 0.0);
            sf.cones.push(SupportedConeT::ExponentialConeT());
        }
        sf
    }

    /// Row-major triplet dump of the standard form `min ½xᵀPx + qᵀx` s.t.
    /// `Ax + s = b`, `s ∈ K`. Lines: `var j name lo hi`, `q j v`, `P i j v`,
    /// `A i j v`, `b i v`, `K kind dim`, in that order.
    pub fn dump_triplets(&self) -> String {
        let sf = self.standard_form();
        let mut out = String::new();
        let _ = writeln!(out, "# n {} m {} const {:e}", sf.n, sf.m, sf.obj_const);
        for (j, v) in self.vars.iter().enumerate() {
            let _ = writeln!(out, "var {j} {} {:e} {:e}", v.name, v.lo, v.hi);
        }
        for (j, v) in sf.q.iter().enumerate() {
            if *v != 0.0 {
                let _ = writeln!(out, "q {j} {v:e}");
            }
        }
        let mut p = sf.p.clone();
        p.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        for (i, j, v) in p {
            let _ = writeln!(out, "P {i} {j} {v:e}");
        }
        let mut a = sf.a.clone();
        a.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
        for (i, j, v) in a {
            let _ = writeln!(out, "A {i} {j} {v:e}");
        }
        for (i, v) in sf.b.iter().enumerate() {
            let _ = writeln!(out, "b {i} {v:e}");
        }
        for k in &sf.cones {
            let (kind, dim) = match k {
                SupportedConeT::ZeroConeT(d) => ("zero", *d),
                SupportedConeT::NonnegativeConeT(d) => ("nonneg", *d),
                SupportedConeT::SecondOrderConeT(d) => ("soc", *d),
                SupportedConeT::ExponentialConeT() => ("exp", 3),
                _ => ("other", 0),
            };
            let _ = writeln!(out, "K {kind} {dim}");
        }
        out
    }
}

#[derive(Default)]
struct StandardForm {
    n: usize,
    m: usize,
    q: Vec<f64>,
    obj_const: f64,
    p: Vec<(usize, usize, f64)>,
    a: Vec<(usize, usize, f64)>,
    b: Vec<f64>,
    cones: Vec<SupportedConeT<f64>>,
    /// Linear rows in order of appearance, with the sign applied.
    row_of: Vec<(RowRef, f64)>,
}

/// Merges blocks into one program.
pub fn assemble(blocks: Vec<ConstraintBlock>, objective: Objective) -> Result<ConicProgram, ConicError> {
    let mut p = ConicProgram::default();
    for b in blocks {
        p.add_block(b)?;
    }
    p.objective = objective;
    p.check_references()?;
    Ok(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: u32,
    pub verbose: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { tol: 1e-8, max_iter: 200, verbose: false }
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub status: Status,
    pub objective: f64,
    pub primal: Vec<f64>,
    pub var_index: HashMap<String, usize>,
    /// Linear-row multipliers by tag.
    pub duals: BTreeMap<String, f64>,
    /// Cone-row multipliers by tag.
    pub cone_duals: BTreeMap<String, Vec<f64>>,
    pub diagnostics: String,
    pub iterations: u32,
}

impl SolveResult {
    pub fn value(&self, name: &str) -> f64 {
        self.var_index.get(name).map(|&k| self.primal[k]).unwrap_or(f64::NAN)
    }

    pub fn try_value(&self, name: &str) -> Option<f64> {
        self.var_index.get(name).map(|&k| self.primal[k])
    }

    pub fn dual(&self, tag: &str) -> Option<f64> {
        self.duals.get(tag).copied()
    }

    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }
}

/// Residual and gap level at which a stalled solve still counts as optimal.
const STALL_ACCEPT: f64 = 1e-6;
const STALL_RETRIES: i32 = 2;

pub fn solve(p: &ConicProgram, opts: &SolveOptions) -> Result<SolveResult, ConicError> {
    p.check_references()?;
    let sf = p.standard_form();
    let n = sf.n;
    if n == 0 {
        return Ok(SolveResult {
            status: Status::Optimal,
            objective: sf.obj_const,
            primal: Vec::new(),
            var_index: p.var_index.clone(),
            duals: p.linear.iter().map(|r| (r.tag.clone(), 0.0)).collect(),
            cone_duals: BTreeMap::new(),
            diagnostics: "empty program".into(),
            iterations: 0,
        });
    }
    let (pi, pj, pv) = split(&sf.p);
    let pm = CscMatrix::new_from_triplets(n, n, pi, pj, pv);
    let (ai, aj, av) = split(&sf.a);
    let am = CscMatrix::new_from_triplets(sf.m, n, ai, aj, av);
    // a stalled first attempt is retried with stronger regularization and
    // more equilibration
    let mut attempt = 0;
    let (solver, status) = loop {
        let mut settings = DefaultSettings {
            tol_feas: opts.tol,
            tol_gap_abs: opts.tol,
            tol_gap_rel: opts.tol,
            max_iter: opts.max_iter,
            verbose: opts.verbose,
            presolve_enable: false,
            ..Default::default()
        };
        if attempt > 0 {
            settings.static_regularization_constant = 1e-7 * 10f64.powi(attempt);
            settings.equilibrate_max_iter = 50;
            settings.iterative_refinement_max_iter = 50;
            settings.iterative_refinement_reltol = 1e-14;
            settings.max_step_fraction = 0.95;
        }
        let mut solver = DefaultSolver::new(&pm, &sf.q, &am, &sf.b, &sf.cones, settings)
            .map_err(|e| ConicError::Setup(format!("{e:?}")))?;
        solver.solve();
        let sol = &solver.solution;
        let status = match sol.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => Status::Optimal,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => Status::Infeasible,
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => Status::Unbounded,
            // stalled close to the optimum: accept when residuals and gap are small
            SolverStatus::InsufficientProgress | SolverStatus::MaxIterations
                if sol.r_prim <= STALL_ACCEPT && sol.r_dual <= STALL_ACCEPT && solver.info.gap_rel <= STALL_ACCEPT =>
            {
                Status::Optimal
            }
            _ => Status::NumericalFailure,
        };
        attempt += 1;
        if status != Status::NumericalFailure || attempt > STALL_RETRIES {
            break (solver, status);
        }
    };
    let sol = &solver.solution;
    let mut duals = BTreeMap::new();
    for (row, (r, _)) in sf.row_of.iter().enumerate() {
        // equalities come first, then inequalities in declaration order
        if let RowRef::Linear(k) = r {
            duals.insert(p.linear[*k].tag.clone(), sol.z[row]);
        }
    }
    let mut cone_duals = BTreeMap::new();
    let mut row = sf.m - p.soc.iter().map(|r| 1 + r.tail.len()).sum::<usize>() - 3 * p.exp.len();
    for r in &p.soc {
        let d = 1 + r.tail.len();
        cone_duals.insert(r.tag.clone(), sol.z[row..row + d].to_vec());
        row += d;
    }
    for r in &p.exp {
        cone_duals.insert(r.tag.clone(), sol.z[row..row + 3].to_vec());
        row += 3;
    }
    // the solver may miss a bound by its tolerance; fixed variables come back exact
    let primal: Vec<f64> = sol.x.iter().zip(&p.vars).map(|(&x, d)| x.clamp(d.lo, d.hi)).collect();
    let objective = p.objective.eval(&|name: &str| primal[p.var_index[name]]);
    Ok(SolveResult {
        status,
        objective,
        primal,
        var_index: p.var_index.clone(),
        duals,
        cone_duals,
        diagnostics: format!(
            "status {:?}, iterations {}, r_prim {:.3e}, r_dual {:.3e}, gap {:.3e}",
            sol.status, sol.iterations, sol.r_prim, sol.r_dual, solver.info.gap_rel
        ),
        iterations: sol.iterations,
    })
}

fn split(t: &[(usize, usize, f64)]) -> (Vec<usize>, Vec<usize>, Vec<f64>) {
    let mut i = Vec::with_capacity(t.len());
    let mut j = Vec::with_capacity(t.len());
    let mut v = Vec::with_capacity(t.len());
    for &(a, b, c) in t {
        i.push(a);
        j.push(b);
        v.push(c);
    }
    (i, j, v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_var(lo: f64, hi: f64) -> ConstraintBlock {
        let mut b = ConstraintBlock::new("b");
        b.var(VarDecl::bounded("x", lo, hi));
        b
    }

    #[test]
    fn lp_dual_of_lower_bound_row() {
        let mut b = ConstraintBlock::new("lp");
        b.var(VarDecl::free("x"));
        b.row("ge3", Affine::var("x"), Sense::Ge, 3.0);
        let mut obj = Objective::default();
        obj.add_linear("x", 1.0);
        let p = assemble(vec![b], obj).unwrap();
        let r = solve(&p, &SolveOptions::default()).unwrap();
        assert_eq!(r.status, Status::Optimal);
        assert!((r.value("x") - 3.0).abs() < 1e-7);
        assert!((r.dual("lp/ge3").unwrap() - 1.0).abs() < 1e-7);
        assert!((r.objective - 3.0).abs() < 1e-7);
    }

    #[test]
    fn infeasible_box() {
        let mut b = ConstraintBlock::new("inf");
        b.var(VarDecl::free("x"));
        b.row("lo", Affine::var("x"), Sense::Ge, 1.0);
        b.row("hi", Affine::var("x"), Sense::Le, 0.0);
        let p = assemble(vec![b], Objective::default()).unwrap();
        assert_eq!(solve(&p, &SolveOptions::default()).unwrap().status, Status::Infeasible);
    }

    #[test]
    fn soc_boundary_of_rank_one_instance() {
        // minimize l s.t. 25·l ≥ 3² + 4²
        let mut b = ConstraintBlock::new("soc");
        b.var(VarDecl::bounded("l", 0.0, f64::INFINITY));
        b.rotated("r", vec![Affine::constant(3.0), Affine::constant(4.0)], Affine::constant(25.0), Affine::var("l"));
        let mut obj = Objective::default();
        obj.add_linear("l", 1.0);
        let r = solve(&assemble(vec![b], obj).unwrap(), &SolveOptions::default()).unwrap();
        assert_eq!(r.status, Status::Optimal);
        assert!((r.value("l") - 1.0).abs() < 1e-6);
    }

    #[test]
    fn exp_cone_orientation() {
        // ln(y) ≥ z with y ≤ 2: maximizing z gives ln 2
        let mut b = ConstraintBlock::new("e");
        b.var(VarDecl::bounded("y", 0.0, 2.0));
        b.var(VarDecl::free("z"));
        b.exp_cone("log", Affine::var("z"), Affine::constant(1.0), Affine::var("y"));
        let mut obj = Objective::default();
        obj.add_linear("z", -1.0);
        let r = solve(&assemble(vec![b], obj).unwrap(), &SolveOptions::default()).unwrap();
        assert_eq!(r.status, Status::Optimal);
        assert!((r.value("z") - 2f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn quadratic_objective() {
        // minimize (x − 2)² → x = 2
        let mut obj = Objective::default();
        obj.add_square(&Affine::var("x").plus_const(-2.0), 1.0);
        let mut b = ConstraintBlock::new("q");
        b.var(VarDecl::free("x"));
        let r = solve(&assemble(vec![b], obj).unwrap(), &SolveOptions::default()).unwrap();
        assert!((r.value("x") - 2.0).abs() < 1e-6);
        assert!(r.objective.abs() < 1e-8);
    }

    #[test]
    fn empty_program_is_optimal_at_zero() {
        let p = assemble(vec![], Objective::default()).unwrap();
        let r = solve(&p, &SolveOptions::default()).unwrap();
        assert_eq!(r.status, Status::Optimal);
        assert_eq!(r.objective, 0.0);
    }

    #[test]
    fn conflicting_bounds_rejected() {
        let mut a = one_var(0.0, 1.0);
        a.tag = "a".into();
        let mut b = one_var(0.0, 2.0);
        b.tag = "b".into();
        assert_eq!(assemble(vec![a, b], Objective::default()).unwrap_err(), ConicError::BoundConflict("x".into()));
    }

    #[test]
    fn duplicate_tag_rejected() {
        let mut a = one_var(0.0, 1.0);
        a.row("r", Affine::var("x"), Sense::Le, 1.0);
        a.row("r", Affine::var("x"), Sense::Le, 2.0);
        assert!(matches!(assemble(vec![a], Objective::default()), Err(ConicError::DuplicateTag(_))));
    }

    #[test]
    fn dangling_reference_rejected() {
        let mut a = one_var(0.0, 1.0);
        a.row("r", Affine::var("y"), Sense::Le, 1.0);
        assert!(matches!(assemble(vec![a], Objective::default()), Err(ConicError::Dangling { .. })));
    }

    #[test]
    fn triplet_dump_is_row_major() {
        let mut b = ConstraintBlock::new("d");
        b.var(VarDecl::free("x"));
        b.var(VarDecl::free("y"));
        b.row("r", Affine::var("y").add_term("x", 2.0), Sense::Le, 1.0);
        let p = assemble(vec![b], Objective::default()).unwrap();
        let dump = p.dump_triplets();
        let a: Vec<&str> = dump.lines().filter(|l| l.starts_with("A ")).collect();
        assert_eq!(a, vec!["A 0 0 2e0", "A 0 1 1e0"]);
        assert!(dump.contains("K nonneg 1"));
    }
}
