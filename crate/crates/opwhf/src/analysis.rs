//! Post-hoc studies: heating control-mode sensitivity, three-point
//! uncertainty propagation and the joint/separate cost breakdown.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Scenario;
use crate::physics::{self, PhysicsError, Solution};
use crate::scheduler::{solve_opwhf, solve_separate, SchedError, SolverOptions};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("flow must be positive, got {0}")]
    NonpositiveFlow(f64),
    #[error("invalid query: {0}")]
    Query(String),
    #[error("invalid uncertainty spec: {0}")]
    Spec(String),
    #[error("solve failed for {input} at {point}: {message}")]
    Solve { input: String, point: String, message: String },
    #[error(transparent)]
    Scheduler(#[from] SchedError),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
}

/// One pipe segment as seen by the energy-loss sensitivity study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityQuery {
    /// Water mass, kg.
    pub mass: f64,
    /// Friction factor, s²/m⁵.
    pub friction: f64,
    /// Thermal constant, m³/s.
    pub xi: f64,
    pub tau: f64,
    pub tau0: f64,
    /// J/(kg·K).
    pub heat_capacity: f64,
    pub gravity: f64,
    pub q_lo: f64,
    pub q_hi: f64,
    /// Relative half-width of the `xi` band over which the derivative
    /// envelopes are taken.
    pub band: f64,
}

impl Default for SensitivityQuery {
    /// One kilogram of supply water at 80 °C over 10 °C ground, flows of
    /// 0.2 to 1 m³/s.
    fn default() -> Self {
        SensitivityQuery {
            mass: 1.0,
            friction: 1.0,
            xi: 1.5e-4,
            tau: 80.0,
            tau0: 10.0,
            heat_capacity: 4182.0,
            gravity: 9.81,
            q_lo: 0.2,
            q_hi: 1.0,
            band: 0.1,
        }
    }
}

impl SensitivityQuery {
    pub fn check(&self) -> Result<(), AnalysisError> {
        let bad = |m: &str| Err(AnalysisError::Query(m.to_string()));
        let all = [self.mass, self.friction, self.xi, self.tau, self.tau0, self.heat_capacity, self.gravity, self.q_lo, self.q_hi, self.band];
        if all.iter().any(|v| !v.is_finite()) {
            return bad("nonfinite field");
        }
        if !(self.q_lo > 0.0) {
            return bad("q_lo must be positive");
        }
        if self.q_hi < self.q_lo {
            return bad("q_hi below q_lo");
        }
        if !(self.friction > 0.0) {
            return bad("friction must be positive");
        }
        if !(0.0..1.0).contains(&self.band) {
            return bad("band must lie in [0, 1)");
        }
        if self.mass <= 0.0 || self.heat_capacity <= 0.0 || self.gravity <= 0.0 || self.xi < 0.0 {
            return bad("mass, heat capacity, gravity must be positive and xi nonnegative");
        }
        Ok(())
    }

    fn thermal(&self) -> f64 {
        self.heat_capacity * self.mass * (self.tau - self.tau0)
    }

    /// Thermal part of `∂E/∂q` at a given `xi`.
    fn dq_thermal(&self, q: f64, xi: f64) -> f64 {
        self.thermal() * (-xi / q).exp() * xi / (q * q)
    }

    fn dtau(&self, q: f64, xi: f64) -> f64 {
        self.heat_capacity * self.mass * (-xi / q).exp()
    }

    /// Range of (thermal `∂E/∂q`, `∂E/∂τ`) over the `xi` band. The thermal
    /// term `ξ e^{−ξ/q}` peaks at `ξ = q`, `∂E/∂τ` falls with `ξ`, so the
    /// band ends plus that peak give the exact envelope.
    fn envelopes(&self, q: f64) -> ((f64, f64), (f64, f64)) {
        let (lo, hi) = (self.xi * (1.0 - self.band), self.xi * (1.0 + self.band));
        let (a, b) = (self.dq_thermal(q, lo), self.dq_thermal(q, hi));
        let mut th_hi = a.max(b);
        if lo < q && q < hi {
            th_hi = th_hi.max(self.dq_thermal(q, q));
        }
        ((a.min(b), th_hi), (self.dtau(q, hi), self.dtau(q, lo)))
    }

    fn hydraulic(&self, q: f64) -> f64 {
        2.0 * self.mass * self.gravity * self.friction * q
    }

    /// `∂E/∂q` below its worst case minus the highest `∂E/∂τ`: positive
    /// where flow control wins for every member of the band.
    fn margin_hi(&self, q: f64) -> f64 {
        let ((th_lo, _), (_, t_hi)) = self.envelopes(q);
        self.hydraulic(q) + th_lo - t_hi
    }

    /// Highest `∂E/∂q` minus the lowest `∂E/∂τ`: negative where
    /// temperature control wins for every member of the band.
    fn margin_lo(&self, q: f64) -> f64 {
        let ((_, th_hi), (t_lo, _)) = self.envelopes(q);
        self.hydraulic(q) + th_hi - t_lo
    }

    fn scan(&self) -> Vec<f64> {
        let n = SCAN_POINTS;
        (0..n).map(|i| self.q_lo + (self.q_hi - self.q_lo) * i as f64 / (n - 1) as f64).collect()
    }
}

const SCAN_POINTS: usize = 257;
/// Bisection tolerance on the intersection flows, m³/s.
pub const INTERSECTION_TOL: f64 = 1e-6;

/// `E = m g F q² + C m (τ − τ0) e^{−ξ/q}`, J.
pub fn pipe_energy_loss(qy: &SensitivityQuery, q: f64) -> Result<f64, AnalysisError> {
    if !(q > 0.0) {
        return Err(AnalysisError::NonpositiveFlow(q));
    }
    Ok(qy.mass * qy.gravity * qy.friction * q * q + qy.thermal() * (-qy.xi / q).exp())
}

/// `(∂E/∂q, ∂E/∂τ)` at the nominal `xi`.
pub fn loss_sensitivities(qy: &SensitivityQuery, q: f64) -> Result<(f64, f64), AnalysisError> {
    if !(q > 0.0) {
        return Err(AnalysisError::NonpositiveFlow(q));
    }
    Ok((qy.hydraulic(q) + qy.dq_thermal(q, qy.xi), qy.dtau(q, qy.xi)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControlMode {
    FlowRate,
    Temperature,
    Mixed,
}

impl ControlMode {
    pub fn label(&self) -> &'static str {
        match self {
            ControlMode::FlowRate => "FlowRate",
            ControlMode::Temperature => "Temperature",
            ControlMode::Mixed => "Mixed",
        }
    }
}

/// Flows where the `∂E/∂q` curve meets the upper (1) and lower (2) edge of
/// the `∂E/∂τ` band.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Intersections {
    pub first: Option<f64>,
    pub second: Option<f64>,
}

fn first_root(f: impl Fn(f64) -> f64, grid: &[f64]) -> Option<f64> {
    let mut prev = (grid[0], f(grid[0]));
    if prev.1 == 0.0 {
        return Some(prev.0);
    }
    for &q in &grid[1..] {
        let v = f(q);
        if v == 0.0 {
            return Some(q);
        }
        if v.signum() != prev.1.signum() {
            let (mut a, mut b, fa) = (prev.0, q, prev.1);
            while b - a > INTERSECTION_TOL {
                let m = 0.5 * (a + b);
                if f(m).signum() == fa.signum() {
                    a = m;
                } else {
                    b = m;
                }
            }
            return Some(0.5 * (a + b));
        }
        prev = (q, v);
    }
    None
}

/// Mode verdict over the query's flow range. FlowRate when flow control
/// wins across the whole range and band, Temperature when temperature
/// control does, Mixed otherwise.
pub fn classify_control_mode(qy: &SensitivityQuery) -> Result<(ControlMode, Intersections), AnalysisError> {
    qy.check()?;
    let grid = qy.scan();
    let cross = Intersections {
        first: first_root(|q| qy.margin_hi(q), &grid),
        second: first_root(|q| qy.margin_lo(q), &grid),
    };
    let mode = if grid.iter().all(|&q| qy.margin_hi(q) >= 0.0) {
        ControlMode::FlowRate
    } else if grid.iter().all(|&q| qy.margin_lo(q) <= 0.0) {
        ControlMode::Temperature
    } else {
        ControlMode::Mixed
    };
    Ok((mode, cross))
}

/// Friction factors bounding the Mixed region: below the first the query is
/// Temperature, at or above the second it is FlowRate. Evaluated on the same
/// flow grid as [`classify_control_mode`], so the verdicts agree.
pub fn critical_frictions(qy: &SensitivityQuery) -> Result<(f64, f64), AnalysisError> {
    qy.check()?;
    let unit = 2.0 * qy.mass * qy.gravity;
    let mut f_temp = f64::INFINITY;
    let mut f_flow = f64::NEG_INFINITY;
    for q in qy.scan() {
        let ((th_lo, th_hi), (t_lo, t_hi)) = qy.envelopes(q);
        f_temp = f_temp.min((t_lo - th_hi) / (unit * q));
        f_flow = f_flow.max((t_hi - th_lo) / (unit * q));
    }
    Ok((f_temp, f_flow))
}

/// `F = k · length / diameter⁵`, the Darcy-Weisbach scaling at a fixed
/// friction coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryLaw {
    pub k: f64,
}

impl Default for GeometryLaw {
    /// Places the onset of flow control for the default query near a
    /// 150 m pipe of 0.6 m diameter.
    fn default() -> Self {
        GeometryLaw { k: 0.42 }
    }
}

impl GeometryLaw {
    pub fn friction(&self, length: f64, diameter: f64) -> f64 {
        self.k * length / diameter.powi(5)
    }
}

/// Axis-aligned box over (length, diameter), metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub length: (f64, f64),
    pub diameter: (f64, f64),
}

impl Default for ParamBox {
    fn default() -> Self {
        ParamBox { length: (20.0, 400.0), diameter: (0.2, 1.2) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModePoint {
    pub length: f64,
    pub diameter: f64,
    pub friction: f64,
    pub mode: ControlMode,
    pub intersections: Intersections,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlModeMap {
    pub lengths: Vec<f64>,
    pub diameters: Vec<f64>,
    /// Row-major: all diameters for the first length, then the next.
    pub points: Vec<ModePoint>,
    /// (Temperature below, FlowRate at or above), s²/m⁵.
    pub critical: (f64, f64),
    pub law: GeometryLaw,
}

impl ControlModeMap {
    pub fn at(&self, i_len: usize, i_dia: usize) -> &ModePoint {
        &self.points[i_len * self.diameters.len() + i_dia]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("length_m,diameter_m,friction,mode,intersection1,intersection2,f_temperature,f_flowrate\n");
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for p in &self.points {
            let _ = writeln!(
                out,
                "{},{},{:.6e},{},{},{},{:.6e},{:.6e}",
                p.length,
                p.diameter,
                p.friction,
                p.mode.label(),
                opt(p.intersections.first),
                opt(p.intersections.second),
                self.critical.0,
                self.critical.1
            );
        }
        out
    }
}

fn axis(range: (f64, f64), n: usize) -> Vec<f64> {
    (0..n).map(|i| range.0 + (range.1 - range.0) * i as f64 / (n - 1) as f64).collect()
}

/// Classifies every grid point of `bx`, `resolution` points per axis.
pub fn control_mode_map(
    base: &SensitivityQuery,
    bx: &ParamBox,
    law: &GeometryLaw,
    resolution: usize,
) -> Result<ControlModeMap, AnalysisError> {
    if resolution < 2 {
        return Err(AnalysisError::Query("resolution must be at least 2".into()));
    }
    if !(bx.length.0 > 0.0 && bx.length.1 >= bx.length.0 && bx.diameter.0 > 0.0 && bx.diameter.1 >= bx.diameter.0) {
        return Err(AnalysisError::Query("empty or nonpositive parameter box".into()));
    }
    let lengths = axis(bx.length, resolution);
    let diameters = axis(bx.diameter, resolution);
    let mut points = Vec::with_capacity(resolution * resolution);
    for &length in &lengths {
        for &diameter in &diameters {
            let friction = law.friction(length, diameter);
            let (mode, intersections) = classify_control_mode(&SensitivityQuery { friction, ..*base })?;
            points.push(ModePoint { length, diameter, friction, mode, intersections });
        }
    }
    let critical = critical_frictions(base)?;
    Ok(ControlModeMap { lengths, diameters, points, critical, law: *law })
}

/// Relative standard deviations, as fractions of the expected value.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UncertaintySpec {
    /// Output of zero-marginal-cost DERs.
    pub sigma_pv: f64,
    /// Electric loads, active and reactive.
    pub sigma_p: f64,
    /// Water demands.
    pub sigma_w: f64,
    /// Heat demands.
    pub sigma_h: f64,
}

impl UncertaintySpec {
    pub fn uniform(sigma: f64) -> UncertaintySpec {
        UncertaintySpec { sigma_pv: sigma, sigma_p: sigma, sigma_w: sigma, sigma_h: sigma }
    }

    pub fn scaled(&self, k: f64) -> UncertaintySpec {
        UncertaintySpec { sigma_pv: self.sigma_pv * k, sigma_p: self.sigma_p * k, sigma_w: self.sigma_w * k, sigma_h: self.sigma_h * k }
    }

    pub fn check(&self) -> Result<(), AnalysisError> {
        for (name, v) in self.named() {
            if !(0.0..=0.5).contains(&v) {
                return Err(AnalysisError::Spec(format!("{name} = {v} outside [0, 0.5]")));
            }
        }
        Ok(())
    }

    fn named(&self) -> [(&'static str, f64); 4] {
        [("solar", self.sigma_pv), ("electric", self.sigma_p), ("water", self.sigma_w), ("heat", self.sigma_h)]
    }
}

/// Mean and relative standard deviation from the three-point scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std: f64,
    pub relative_std: f64,
}

/// Three-point estimate over independent multiplicative factors with mean
/// one and relative deviations `sigmas`. Each factor is evaluated at
/// `1 ± √3σ` with weight 1/6, the all-mean point carries the remaining
/// weight. Factors with σ = 0 are not evaluated.
pub fn three_point_factors<F>(sigmas: &[f64], f: F) -> Result<Estimate, AnalysisError>
where
    F: Fn(&[f64]) -> Result<f64, String> + Sync,
{
    let n = sigmas.len();
    let ones = vec![1.0; n];
    let f0 = f(&ones).map_err(|message| AnalysisError::Solve { input: "all".into(), point: "mean".into(), message })?;
    let active: Vec<usize> = (0..n).filter(|&i| sigmas[i] != 0.0).collect();
    if active.is_empty() {
        return Ok(Estimate { mean: f0, std: 0.0, relative_std: 0.0 });
    }
    let shifts = [3f64.sqrt(), -(3f64.sqrt())];
    let jobs: Vec<(usize, f64)> = active.iter().flat_map(|&i| shifts.iter().map(move |&s| (i, s))).collect();
    let results: Vec<Result<f64, String>> = std::thread::scope(|sc| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|&(i, s)| {
                let f = &f;
                let mut x = ones.clone();
                x[i] = 1.0 + s * sigmas[i];
                sc.spawn(move || f(&x))
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap_or_else(|_| Err("evaluation panicked".into()))).collect()
    });
    // moments of f − f0 keep the σ = 0 limit exact
    let (mut m1, mut m2) = (0.0, 0.0);
    for (&(i, s), r) in jobs.iter().zip(results) {
        let v = r.map_err(|message| AnalysisError::Solve {
            input: format!("factor {i}"),
            point: format!("1{:+.6}", s * sigmas[i]),
            message,
        })?;
        let d = v - f0;
        m1 += d / 6.0;
        m2 += d * d / 6.0;
    }
    let var = (m2 - m1 * m1).max(0.0);
    let mean = f0 + m1;
    let std = var.sqrt();
    Ok(Estimate { mean, std, relative_std: if mean != 0.0 { std / mean.abs() } else { 0.0 } })
}

/// `s` with the four uncertain inputs scaled by `x = [pv, electric, water, heat]`.
pub fn perturb(s: &Scenario, x: &[f64; 4]) -> Scenario {
    let mut out = s.clone();
    for der in &mut out.power.ders {
        if der.cost_linear == 0.0 && der.cost_quadratic == 0.0 {
            for v in der.p_max.iter_mut() {
                *v *= x[0];
            }
            for v in der.p_min.iter_mut() {
                *v *= x[0];
            }
        }
    }
    for node in &mut out.power.nodes {
        for v in node.p_load.iter_mut().chain(node.q_load.iter_mut()) {
            *v *= x[1];
        }
    }
    for j in &mut out.water.junctions {
        for v in j.demand.iter_mut() {
            *v *= x[2];
        }
    }
    for l in &mut out.heat.loads {
        for v in l.demand.iter_mut() {
            *v *= x[3];
        }
    }
    out
}

/// Relative spread of the objective returned by `solve` under `u`.
pub fn three_point_estimate<F>(s: &Scenario, u: &UncertaintySpec, solve: F) -> Result<Estimate, AnalysisError>
where
    F: Fn(&Scenario) -> Result<f64, String> + Sync,
{
    u.check()?;
    let named = u.named();
    let sigmas: Vec<f64> = named.iter().map(|(_, v)| *v).collect();
    three_point_factors(&sigmas, |x| solve(&perturb(s, &[x[0], x[1], x[2], x[3]]))).map_err(|e| match e {
        AnalysisError::Solve { input, point, message } => {
            let input = input
                .strip_prefix("factor ")
                .and_then(|i| i.parse::<usize>().ok())
                .map(|i| named[i].0.to_string())
                .unwrap_or(input);
            AnalysisError::Solve { input, point, message }
        }
        other => other,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub power: f64,
    pub water: f64,
    pub heating: f64,
    pub total: f64,
}

/// Attribution of a solution's cost. Water carries its water payment and
/// pump electricity, heating carries CHP cost plus pump electricity minus
/// the electricity it sells, power is the rest. Electricity moving between
/// sectors is valued at the grid price of the slot.
pub fn cost_row(s: &Scenario, x: &Solution) -> Result<CostRow, AnalysisError> {
    let costs = physics::slot_costs(s, x)?;
    let hours = s.horizon.slot_hours();
    let (mut water, mut heating) = (0.0, 0.0);
    for (t, c) in costs.iter().enumerate() {
        let price = s.prices.electricity[t] * hours;
        let cp = &x.couple[t];
        water += c.water + price * cp.p_wpump.iter().sum::<f64>();
        heating += c.chp + price * (cp.p_hpump.iter().sum::<f64>() - cp.p_gen.iter().sum::<f64>());
    }
    let total: f64 = costs.iter().map(|c| c.total()).sum();
    Ok(CostRow { power: total - water - heating, water, heating, total })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub separate: CostRow,
    pub joint: CostRow,
    pub separate_certified: bool,
    pub joint_certified: bool,
}

impl CostBreakdown {
    /// One row per cost item, columns separate and joint.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("item,separate,joint\n");
        let rows = [
            ("power", self.separate.power, self.joint.power),
            ("water", self.separate.water, self.joint.water),
            ("heating", self.separate.heating, self.joint.heating),
            ("total", self.separate.total, self.joint.total),
        ];
        for (name, a, b) in rows {
            let _ = writeln!(out, "{name},{a:.6},{b:.6}");
        }
        out
    }
}

pub fn compare_joint_separate(s: &Scenario, opts: &SolverOptions) -> Result<CostBreakdown, AnalysisError> {
    let sep = solve_separate(s, opts)?;
    let joint = solve_opwhf(s, opts)?;
    Ok(CostBreakdown {
        separate: cost_row(s, &sep.solution)?,
        joint: cost_row(s, &joint.solution)?,
        separate_certified: sep.certified,
        joint_certified: joint.certified,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pure_hydraulic() -> SensitivityQuery {
        SensitivityQuery { mass: 1.0, gravity: 9.81, friction: 1.0, tau: 10.0, tau0: 10.0, ..Default::default() }
    }

    #[test]
    fn hydraulic_loss_by_hand() {
        assert!((pipe_energy_loss(&pure_hydraulic(), 1.0).unwrap() - 9.81).abs() < 1e-12);
    }

    #[test]
    fn thermal_term_saturates_at_high_flow() {
        let qy = SensitivityQuery { friction: 1e-30, ..Default::default() };
        let e = pipe_energy_loss(&qy, 1e9).unwrap();
        assert!((e - qy.heat_capacity * qy.mass * (qy.tau - qy.tau0)).abs() < 1e-6 * e);
    }

    #[test]
    fn nonpositive_flow_rejected() {
        assert!(matches!(pipe_energy_loss(&pure_hydraulic(), 0.0), Err(AnalysisError::NonpositiveFlow(_))));
        assert!(matches!(loss_sensitivities(&pure_hydraulic(), -1.0), Err(AnalysisError::NonpositiveFlow(_))));
    }

    #[test]
    fn temperature_derivative_at_xi_equal_q() {
        let qy = SensitivityQuery { mass: 1.0, heat_capacity: 1.0, xi: 0.5, ..Default::default() };
        let (_, dt) = loss_sensitivities(&qy, 0.5).unwrap();
        assert!((dt - (-1f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn flow_derivative_vanishes_without_friction_or_gradient() {
        let qy = SensitivityQuery { friction: 0.0, tau: 10.0, tau0: 10.0, ..Default::default() };
        assert_eq!(loss_sensitivities(&qy, 0.3).unwrap().0, 0.0);
    }

    #[test]
    fn frictionless_pipe_is_temperature_controlled() {
        let qy = SensitivityQuery { friction: 1e-9, ..Default::default() };
        assert_eq!(classify_control_mode(&qy).unwrap().0, ControlMode::Temperature);
    }

    #[test]
    fn rough_pipe_is_flow_controlled() {
        let (_, f_flow) = critical_frictions(&SensitivityQuery::default()).unwrap();
        let qy = SensitivityQuery { friction: 2.0 * f_flow, ..Default::default() };
        assert_eq!(classify_control_mode(&qy).unwrap().0, ControlMode::FlowRate);
    }

    #[test]
    fn crossing_mid_range_is_mixed_with_two_intersections() {
        let (lo, hi) = critical_frictions(&SensitivityQuery::default()).unwrap();
        let qy = SensitivityQuery { friction: 0.5 * (lo + hi), ..Default::default() };
        let (mode, cross) = classify_control_mode(&qy).unwrap();
        assert_eq!(mode, ControlMode::Mixed);
        let (a, b) = (cross.first.unwrap(), cross.second.unwrap());
        assert!(qy.q_lo < a && a < qy.q_hi && qy.q_lo < b && b < qy.q_hi);
        assert!(qy.margin_hi(a).abs() < 1e-3 * qy.dtau(a, qy.xi));
    }

    #[test]
    fn bad_queries_rejected() {
        for qy in [
            SensitivityQuery { q_lo: 0.0, ..Default::default() },
            SensitivityQuery { q_hi: 0.1, ..Default::default() },
            SensitivityQuery { friction: -1.0, ..Default::default() },
            SensitivityQuery { band: 1.0, ..Default::default() },
        ] {
            assert!(classify_control_mode(&qy).is_err());
        }
    }

    #[test]
    fn map_corners() {
        let m = control_mode_map(&SensitivityQuery::default(), &ParamBox::default(), &GeometryLaw::default(), 2).unwrap();
        // (short, wide) and (long, thin)
        assert_eq!(m.at(0, 1).mode, ControlMode::Temperature);
        assert_eq!(m.at(1, 0).mode, ControlMode::FlowRate);
        assert!(control_mode_map(&SensitivityQuery::default(), &ParamBox::default(), &GeometryLaw::default(), 1).is_err());
    }

    #[test]
    fn named_geometry_points() {
        let classify = |l: f64, d: f64| {
            let friction = GeometryLaw::default().friction(l, d);
            classify_control_mode(&SensitivityQuery { friction, ..Default::default() }).unwrap().0
        };
        assert_eq!(classify(20.0, 1.0), ControlMode::Temperature);
        assert_eq!(classify(300.0, 0.3), ControlMode::FlowRate);
    }

    #[test]
    fn zero_spread_is_exactly_zero() {
        let e = three_point_factors(&[0.0, 0.0], |x| Ok(3.0 * x[0] + x[1] * x[1])).unwrap();
        assert_eq!(e.relative_std, 0.0);
        assert_eq!(e.mean, 4.0);
    }

    #[test]
    fn failing_point_is_named() {
        let err = three_point_factors(&[0.1], |x| if x[0] > 1.0 { Err("boom".into()) } else { Ok(1.0) }).unwrap_err();
        match err {
            AnalysisError::Solve { input, message, .. } => {
                assert_eq!(input, "factor 0");
                assert_eq!(message, "boom");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn spec_bounds() {
        assert!(UncertaintySpec::uniform(0.6).check().is_err());
        assert!(UncertaintySpec::uniform(-0.1).check().is_err());
        assert!(UncertaintySpec::uniform(0.5).check().is_ok());
    }

    #[test]
    fn breakdown_csv_layout() {
        let row = CostRow { power: 1.0, water: 2.0, heating: 3.0, total: 6.0 };
        let b = CostBreakdown { separate: row, joint: row, separate_certified: true, joint_certified: true };
        let csv = b.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "item,separate,joint");
        assert_eq!(lines[4], "total,6.000000,6.000000");
    }
}
