//! Convex blocks for the nonconvex constraint families.
//!
//! SOC relaxations are exact descriptions of a larger set. The CCP blocks are
//! inner approximations parameterized by a reference point; they are exact at
//! the reference.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conic::{Affine, ConstraintBlock, Sense, VarDecl};
use crate::model::{Line, PumpCurve};

/// Number of tangents in the outer approximation of `ln y ≥ z`.
pub const LOG_TANGENTS: usize = 16;
/// Flow floor used to bound `y = exp(−ξ/q)` away from zero.
pub const Q_MIN: f64 = 1e-4;

#[derive(Debug, Error, PartialEq)]
pub enum ConvexifyError {
    #[error("reference {0} is not finite")]
    Nonfinite(String),
    #[error("reference y = {0} outside (0, 1)")]
    YOutOfRange(f64),
    #[error("reference flow {0} must be positive")]
    Flow(f64),
}

/// Variable name for `kind` of element `id` at `slot`.
pub fn var_name(kind: &str, id: &str, slot: usize) -> String {
    format!("{kind}[{id},{slot}]")
}

/// Reference values by variable name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReferencePoint {
    pub values: BTreeMap<String, f64>,
}

impl ReferencePoint {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }

    pub fn set(&mut self, name: impl Into<String>, v: f64) {
        self.values.insert(name.into(), v);
    }

    /// Rejects nonfinite entries and `y` entries outside (0, 1].
    pub fn check(&self) -> Result<(), ConvexifyError> {
        for (k, v) in &self.values {
            if !v.is_finite() {
                return Err(ConvexifyError::Nonfinite(k.clone()));
            }
            if k.starts_with("y[") && !(*v > 0.0 && *v <= 1.0) {
                return Err(ConvexifyError::YOutOfRange(*v));
            }
        }
        Ok(())
    }
}

/// `v_i·ℓ_ij ≥ P_ij² + Q_ij²` for `line` at `slot`.
pub fn relax_rank1(line: &Line, slot: usize) -> ConstraintBlock {
    let mut b = ConstraintBlock::new(format!("rank1.{}.{slot}", line.id));
    let p = Affine::var(var_name("P", &line.id, slot));
    let q = Affine::var(var_name("Q", &line.id, slot));
    let l = Affine::var(var_name("l", &line.id, slot));
    let v = Affine::var(var_name("v", &line.from, slot));
    b.rotated("soc", vec![p, q], v, l);
    b
}

/// `h_i − h_j = F·W`, `q² ≤ W`, `W² ≤ γ·q` with fresh `W`, `γ`.
///
/// `tag` names the pipe, `q`, `h_from`, `h_to` are existing variables and
/// `q_max` bounds the flow (used to close `W` and `γ`).
pub fn relax_darcy_weisbach(
    tag: &str,
    slot: usize,
    friction: f64,
    q: &str,
    h_from: &str,
    h_to: &str,
    q_max: f64,
) -> ConstraintBlock {
    let mut b = ConstraintBlock::new(format!("darcy.{tag}.{slot}"));
    let w = var_name("W", tag, slot);
    let g = var_name("gamma", tag, slot);
    let w_max = q_max * q_max;
    b.var(VarDecl::bounded(w.clone(), 0.0, w_max));
    b.var(VarDecl::bounded(g.clone(), 0.0, q_max * w_max));
    b.row(
        "loss",
        Affine::var(h_from).add_term(h_to, -1.0).add_term(w.clone(), -friction),
        Sense::Eq,
        0.0,
    );
    b.rotated("q2", vec![Affine::var(q)], Affine::var(w.clone()), Affine::constant(1.0));
    b.rotated("w2", vec![Affine::var(w)], Affine::var(g), Affine::var(q));
    b
}

/// `0 ≤ Δh ≤ −A q² + B q + C`, kept convex as written.
pub fn pump_head_window(tag: &str, q: Affine, dh: Affine, curve: &PumpCurve) -> ConstraintBlock {
    let mut b = ConstraintBlock::new(format!("pumpwin.{tag}"));
    b.row("floor", dh.clone(), Sense::Ge, 0.0);
    // ½q² ≤ (C + Bq − Δh)/(2A)
    let w = q.clone().scaled(curve.b).plus(&dh.scaled(-1.0)).plus_const(curve.c).scaled(0.5 / curve.a);
    b.half_square_le("curve", vec![q], w);
    b
}

/// The convexified pair for `z = x·y` over named scalars.
pub fn ccp_bilinear(z_name: &str, x_name: &str, y_name: &str, x_ref: f64, y_ref: f64) -> ConstraintBlock {
    ccp_bilinear_affine(
        &format!("ccp.{z_name}"),
        Affine::var(z_name),
        Affine::var(x_name),
        Affine::var(y_name),
        x_ref,
        y_ref,
        None,
    )
}

/// The convexified pair for `z = x·y` over affine expressions:
///
/// `½(x+y)² − lin_ref[½(x²+y²)] ≤ z` and `½(x²+y²) − lin_ref[½(x+y)²] ≤ −z`.
///
/// With `elastic = Some(prefix)` each row gets its own nonnegative slack
/// `prefix.s51` / `prefix.s52`, listed in the block's `slacks`.
pub fn ccp_bilinear_affine(
    tag: &str,
    z: Affine,
    x: Affine,
    y: Affine,
    x_ref: f64,
    y_ref: f64,
    elastic: Option<&str>,
) -> ConstraintBlock {
    let mut b = ConstraintBlock::new(tag.to_string());
    let (s1, s2) = match elastic {
        Some(p) => {
            let (a, c) = (format!("{p}.s51"), format!("{p}.s52"));
            b.var(VarDecl::bounded(a.clone(), 0.0, f64::INFINITY));
            b.var(VarDecl::bounded(c.clone(), 0.0, f64::INFINITY));
            b.slacks.push(a.clone());
            b.slacks.push(c.clone());
            (Some(a), Some(c))
        }
        None => (None, None),
    };
    // z + x°x + y°y − ½(x°² + y°²) ≥ ½(x+y)²
    let mut w1 = z
        .clone()
        .plus(&x.clone().scaled(x_ref))
        .plus(&y.clone().scaled(y_ref))
        .plus_const(-0.5 * (x_ref * x_ref + y_ref * y_ref));
    if let Some(s) = &s1 {
        w1 = w1.add_term(s.clone(), 1.0);
    }
    b.half_square_le("51", vec![x.clone().plus(&y)], w1);
    // −z + (x°+y°)(x+y) − ½(x°+y°)² ≥ ½(x² + y²)
    let sum = x_ref + y_ref;
    let mut w2 = z
        .scaled(-1.0)
        .plus(&x.clone().scaled(sum))
        .plus(&y.clone().scaled(sum))
        .plus_const(-0.5 * sum * sum);
    if let Some(s) = &s2 {
        w2 = w2.add_term(s.clone(), 1.0);
    }
    b.half_square_le("52", vec![x, y], w2);
    b
}

/// Elastic convexified pair for `z = x·y` written as linear rows over
/// epigraph auxiliaries, so each row has a scalar multiplier:
///
/// `u51 ≥ ½(x+y)²`, `u51 − lin51 − z − s51 ≤ 0` and
/// `u52 ≥ ½(x²+y²)`, `u52 − lin52 + z − s52 ≤ 0`.
///
/// The linear rows are tagged `{tag}/51` and `{tag}/52`. Returns the block and
/// the convex parts `G51 = u51 − lin51`, `G52 = u52 − lin52` as expressions.
pub fn ccp_bilinear_epigraph(
    tag: &str,
    z: Affine,
    x: Affine,
    y: Affine,
    x_ref: f64,
    y_ref: f64,
) -> (ConstraintBlock, [Affine; 2]) {
    let mut b = ConstraintBlock::new(tag.to_string());
    let u1 = format!("{tag}.u51");
    let u2 = format!("{tag}.u52");
    let s1 = format!("{tag}.s51");
    let s2 = format!("{tag}.s52");
    b.var(VarDecl::free(u1.clone()));
    b.var(VarDecl::free(u2.clone()));
    for s in [&s1, &s2] {
        b.var(VarDecl::bounded(s.clone(), 0.0, f64::INFINITY));
        b.slacks.push(s.clone());
    }
    b.half_square_le("epi51", vec![x.clone().plus(&y)], Affine::var(u1.clone()));
    b.half_square_le("epi52", vec![x.clone(), y.clone()], Affine::var(u2.clone()));
    let lin1 = x.clone().scaled(x_ref).plus(&y.clone().scaled(y_ref)).plus_const(-0.5 * (x_ref * x_ref + y_ref * y_ref));
    let sum = x_ref + y_ref;
    let lin2 = x.scaled(sum).plus(&y.scaled(sum)).plus_const(-0.5 * sum * sum);
    let g1 = Affine::var(u1).plus(&lin1.scaled(-1.0));
    let g2 = Affine::var(u2).plus(&lin2.scaled(-1.0));
    b.row("51", g1.clone().plus(&z.clone().scaled(-1.0)).add_term(s1, -1.0), Sense::Le, 0.0);
    b.row("52", g2.clone().plus(&z).add_term(s2, -1.0), Sense::Le, 0.0);
    (b, [g1, g2])
}

/// Names used by one propagation block.
#[derive(Debug, Clone)]
pub struct PropagationVars {
    pub tau_in: String,
    pub tau_out: String,
    pub q: String,
    /// Auxiliary `y = exp(−ξ/q)`.
    pub y: String,
    /// Auxiliary `z = ln y`.
    pub z: String,
}

impl PropagationVars {
    pub fn for_pipe(pipe: &str, slot: usize, tau_in: String, tau_out: String, q: String) -> PropagationVars {
        PropagationVars { tau_in, tau_out, q, y: var_name("y", pipe, slot), z: var_name("zlog", pipe, slot) }
    }
}

/// Scales applied to the bilinear factors before convexification.
#[derive(Debug, Clone, Copy)]
pub struct PropagationScale {
    pub tau: f64,
    pub q: f64,
}

impl Default for PropagationScale {
    fn default() -> Self {
        PropagationScale { tau: 1.0, q: 1.0 }
    }
}

/// Reformulated temperature propagation at a reference `(τ°, q°, y°)`:
///
/// `τ_in·y = τ_out − τ0 + τ0·y`, `q·z = −ξ`, `ln y ≥ z` and the tangent row
/// `ln y° + (y − y°)/y° ≤ z`.
#[allow(clippy::too_many_arguments)]
pub fn ccp_exponential(
    pipe: &str,
    slot: usize,
    v: &PropagationVars,
    tau0: f64,
    xi: f64,
    refs: (f64, f64, f64),
    native_exp: bool,
    elastic: bool,
    scale: PropagationScale,
) -> Result<ConstraintBlock, ConvexifyError> {
    let (tau_ref, q_ref, y_ref) = refs;
    for (k, x) in [("tau", tau_ref), ("q", q_ref), ("y", y_ref)] {
        if !x.is_finite() {
            return Err(ConvexifyError::Nonfinite(k.into()));
        }
    }
    if !(y_ref > 0.0 && y_ref < 1.0) {
        return Err(ConvexifyError::YOutOfRange(y_ref));
    }
    if !(q_ref > 0.0) {
        return Err(ConvexifyError::Flow(q_ref));
    }
    let tag = format!("prop.{pipe}.{slot}");
    let mut b = ConstraintBlock::new(tag.clone());
    let y_min = (-xi / Q_MIN).exp();
    b.var(VarDecl::bounded(v.y.clone(), y_min, 1.0));
    b.var(VarDecl::bounded(v.z.clone(), y_min.ln(), 0.0));
    let el = |s: &str| if elastic { Some(format!("{tag}.{s}")) } else { None };

    // (τ_in/σ_τ)·y = (τ_out − τ0 + τ0·y)/σ_τ
    let zt = Affine::var(v.tau_out.clone()).add_term(v.y.clone(), tau0).plus_const(-tau0).scaled(1.0 / scale.tau);
    b.extend(ccp_bilinear_affine(
        &format!("{tag}.ty"),
        zt,
        Affine::term(v.tau_in.clone(), 1.0 / scale.tau),
        Affine::var(v.y.clone()),
        tau_ref / scale.tau,
        y_ref,
        el("ty").as_deref(),
    ));
    // (q/σ_q)·z = −ξ/σ_q
    b.extend(ccp_bilinear_affine(
        &format!("{tag}.qz"),
        Affine::constant(-xi / scale.q),
        Affine::term(v.q.clone(), 1.0 / scale.q),
        Affine::var(v.z.clone()),
        q_ref / scale.q,
        y_ref.ln(),
        el("qz").as_deref(),
    ));
    // ln y ≥ z
    if native_exp {
        b.exp_cone("log", Affine::var(v.z.clone()), Affine::constant(1.0), Affine::var(v.y.clone()));
    } else {
        for (k, yk) in log_tangent_points(y_min).into_iter().enumerate() {
            // z ≤ ln y_k + (y − y_k)/y_k
            b.row(
                &format!("log{k}"),
                Affine::var(v.z.clone()).add_term(v.y.clone(), -1.0 / yk),
                Sense::Le,
                yk.ln() - 1.0,
            );
        }
    }
    // ln y° + (y − y°)/y° ≤ z
    let mut lin = Affine::term(v.y.clone(), 1.0 / y_ref).add_term(v.z.clone(), -1.0);
    if let Some(s) = el("tan") {
        b.var(VarDecl::bounded(s.clone(), 0.0, f64::INFINITY));
        b.slacks.push(s.clone());
        lin = lin.add_term(s, -1.0);
    }
    b.row("tan", lin, Sense::Le, 1.0 - y_ref.ln());
    Ok(b)
}

/// Tangent points for the outer approximation, geometric on `[y_min, 1]`.
pub fn log_tangent_points(y_min: f64) -> Vec<f64> {
    let lo = y_min.max(1e-12).ln();
    (0..LOG_TANGENTS).map(|k| (lo * (1.0 - k as f64 / (LOG_TANGENTS - 1) as f64)).exp()).collect()
}

/// Distance between the tightest `z` the convex row admits at `(x, y)` and
/// the bilinear value `x·y`. Equals `½((x−x°)² + (y−y°)²)`.
pub fn linearization_gap(x_ref: f64, y_ref: f64, x: f64, y: f64) -> f64 {
    // closed form of lower(x, y) − x·y, exact at the reference
    0.5 * ((x - x_ref).powi(2) + (y - y_ref).powi(2))
}

/// Bounds on `z` admitted by the two rows at `(x, y)`: `(lower, upper)`.
pub fn ccp_band(x_ref: f64, y_ref: f64, x: f64, y: f64) -> (f64, f64) {
    let lower = 0.5 * (x + y).powi(2) - x_ref * x - y_ref * y + 0.5 * (x_ref * x_ref + y_ref * y_ref);
    let s = x_ref + y_ref;
    let upper = s * (x + y) - 0.5 * s * s - 0.5 * (x * x + y * y);
    (lower, upper)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn at(vals: &[(&str, f64)]) -> impl Fn(&str) -> f64 {
        let m: HashMap<String, f64> = vals.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        move |n: &str| m[n]
    }

    fn line() -> Line {
        Line { id: "L1".into(), from: "A".into(), to: "B".into(), r: 0.01, x: 0.02 }
    }

    fn rank1_point(v: f64, l: f64, p: f64, q: f64) -> f64 {
        relax_rank1(&line(), 0).max_violation(&at(&[("v[A,0]", v), ("l[L1,0]", l), ("P[L1,0]", p), ("Q[L1,0]", q)]))
    }

    #[test]
    fn rank1_admits_boundary_and_interior() {
        assert!(rank1_point(25.0, 1.0, 3.0, 4.0) < 1e-12);
        assert!(rank1_point(25.0, 2.0, 3.0, 4.0) < 1e-12);
        assert!(rank1_point(25.0, 0.5, 3.0, 4.0) > 1e-3);
    }

    fn darcy(q: f64, w: f64, dh: f64, gamma: f64) -> f64 {
        relax_darcy_weisbach("p", 0, 100.0, "q", "hi", "hj", 0.1).max_violation(&at(&[
            ("q", q),
            ("hi", dh),
            ("hj", 0.0),
            ("W[p,0]", w),
            ("gamma[p,0]", gamma),
        ]))
    }

    #[test]
    fn darcy_admits_boundary() {
        // W² ≤ γq with γ = W²/q
        assert!(darcy(0.05, 0.0025, 0.25, 0.0025f64.powi(2) / 0.05) < 1e-12);
    }

    #[test]
    fn darcy_admits_slack_and_rejects_wrong_loss() {
        assert!(darcy(0.05, 0.003, 0.3, 0.001) < 1e-12);
        assert!(darcy(0.05, 0.0025, 0.3, 0.001) > 1e-3);
        assert!(darcy(0.05, 0.002, 0.2, 0.001) > 1e-6);
    }

    #[test]
    fn darcy_no_flow() {
        assert!(darcy(0.0, 0.0, 0.0, 0.0) < 1e-12);
        assert!(darcy(0.0, -0.001, -0.1, 0.0) > 0.0);
    }

    #[test]
    fn bilinear_exact_at_reference() {
        let b = ccp_bilinear("z", "x", "y", 2.0, 3.0);
        assert!(b.max_violation(&at(&[("x", 2.0), ("y", 3.0), ("z", 6.0)])) < 1e-9);
    }

    #[test]
    fn bilinear_rejects_low_z() {
        let b = ccp_bilinear("z", "x", "y", 2.0, 3.0);
        let v = b.max_violation(&at(&[("x", 2.0), ("y", 3.0), ("z", 5.0)]));
        assert!(v > 1e-3);
    }

    #[test]
    fn bilinear_at_origin_forces_zero() {
        let (lo, hi) = ccp_band(0.0, 0.0, 0.0, 0.0);
        assert_eq!((lo, hi), (0.0, 0.0));
        let (lo, hi) = ccp_band(0.0, 0.0, 0.1, 0.0);
        assert!(lo > hi);
    }

    #[test]
    fn gap_examples() {
        assert_eq!(linearization_gap(2.0, 3.0, 2.0, 3.0), 0.0);
        let g = linearization_gap(2.0, 3.0, 2.1, 3.1);
        assert!((g - 0.01).abs() < 1e-12);
        assert!((linearization_gap(0.0, 0.0, 1.0, 1.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exponential_rows_tight_at_reference() {
        let v = PropagationVars::for_pipe("s", 0, "ti".into(), "to".into(), "q".into());
        let (tau, q, xi, tau0): (f64, f64, f64, f64) = (90.0, 0.02, 0.002, 10.0);
        let y: f64 = (-xi / q).exp();
        let tout = (tau - tau0) * y + tau0;
        for native in [true, false] {
            let b = ccp_exponential("s", 0, &v, tau0, xi, (tau, q, y), native, false, PropagationScale::default())
                .unwrap();
            let viol =
                b.max_violation(&at(&[("ti", tau), ("to", tout), ("q", q), ("y[s,0]", y), ("zlog[s,0]", y.ln())]));
            assert!(viol < 1e-9, "native={native} viol={viol}");
        }
    }

    #[test]
    fn tangent_row_form() {
        // y° = e^{-1}: −1 + e(y − e^{-1}) ≤ z  ⇔  e·y − z ≤ 1 + (−1) + 1
        let v = PropagationVars::for_pipe("s", 0, "ti".into(), "to".into(), "q".into());
        let yr = (-1f64).exp();
        let b = ccp_exponential("s", 0, &v, 10.0, 0.02, (80.0, 0.02, yr), true, false, PropagationScale::default())
            .unwrap();
        let tan = b.linear.iter().find(|r| r.tag.ends_with("/tan")).unwrap();
        let cy = tan.expr.terms.iter().find(|t| t.0 == "y[s,0]").unwrap().1;
        assert!((cy - 1f64.exp()).abs() < 1e-12);
        assert!((tan.rhs - 2.0).abs() < 1e-12);
    }

    #[test]
    fn exponential_rejects_bad_reference() {
        let v = PropagationVars::for_pipe("s", 0, "ti".into(), "to".into(), "q".into());
        let r = ccp_exponential("s", 0, &v, 10.0, 0.02, (80.0, 0.02, 1.0), true, false, PropagationScale::default());
        assert_eq!(r.unwrap_err(), ConvexifyError::YOutOfRange(1.0));
    }

    #[test]
    fn unit_point_on_log_row() {
        // y = 1, z = 0 satisfies ln y ≥ z with equality
        let mut b = ConstraintBlock::new("u");
        b.exp_cone("log", Affine::var("z"), Affine::constant(1.0), Affine::var("y"));
        assert!(b.max_violation(&at(&[("y", 1.0), ("z", 0.0)])).abs() < 1e-15);
    }

    #[test]
    fn blocks_are_deterministic() {
        let a = serde_json::to_string(&relax_darcy_weisbach("p", 3, 10.0, "q", "a", "b", 0.2)).unwrap();
        let b = serde_json::to_string(&relax_darcy_weisbach("p", 3, 10.0, "q", "a", "b", 0.2)).unwrap();
        assert_eq!(a, b);
    }
}
