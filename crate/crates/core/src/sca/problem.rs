//! Convex subproblems with three row shapes (affine ≤ 0, affine = 0 and
//! ln(affine) ≥ affine), solved as conic programs by Clarabel.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};

/// Constraint family tags, used for census checks and residual reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    C1,
    C2,
    C3,
    C5,
    C6,
    C8,
    C9,
    C10a,
    C10b,
    C11,
    C12,
    C13,
    C14,
    C15a,
    C15b,
    C16a,
    C16b,
    C17a,
    C17b,
    C17c,
    C17d,
    C18a,
    C18b,
    C18c,
    Bound,
    Restoration,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Σ cᵢ xᵢ + constant.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl Affine {
    pub fn constant(c: f64) -> Self {
        Self { terms: Vec::new(), constant: c }
    }

    pub fn var(i: usize) -> Self {
        Self { terms: vec![(i, 1.0)], constant: 0.0 }
    }

    pub fn add(&mut self, i: usize, c: f64) -> &mut Self {
        if c != 0.0 {
            self.terms.push((i, c));
        }
        self
    }

    pub fn with(mut self, i: usize, c: f64) -> Self {
        self.add(i, c);
        self
    }

    pub fn plus(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|&(i, c)| c * x[i]).sum::<f64>() + self.constant
    }

    pub fn scaled(mut self, s: f64) -> Self {
        self.terms.iter_mut().for_each(|t| t.1 *= s);
        self.constant *= s;
        self
    }

    fn scale(&self) -> f64 {
        self.terms.iter().map(|t| t.1.abs()).fold(self.constant.abs(), f64::max).max(1.0)
    }

    /// Merges duplicate indices and drops coefficients that are negligible
    /// against the row scale.
    fn cleaned(&self) -> Self {
        let mut terms = self.terms.clone();
        terms.sort_by_key(|t| t.0);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(terms.len());
        for (i, c) in terms {
            match merged.last_mut() {
                Some(last) if last.0 == i => last.1 += c,
                _ => merged.push((i, c)),
            }
        }
        let tiny = 1e-13 * merged.iter().map(|t| t.1.abs()).fold(self.constant.abs(), f64::max);
        merged.retain(|t| t.1.abs() > tiny && t.1 != 0.0);
        Self { terms: merged, constant: self.constant }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    /// expr ≤ 0
    Le(Affine),
    /// expr = 0
    Eq(Affine),
    /// ln(arg) ≥ bound
    LogGe { arg: Affine, bound: Affine },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub family: Family,
    pub shape: Shape,
}

impl Constraint {
    /// Positive part of the violation at `x`.
    pub fn violation(&self, x: &[f64]) -> f64 {
        match &self.shape {
            Shape::Le(e) => e.eval(x).max(0.0),
            Shape::Eq(e) => e.eval(x).abs(),
            Shape::LogGe { arg, bound } => {
                let a = arg.eval(x);
                if a <= 0.0 {
                    f64::INFINITY
                } else {
                    (bound.eval(x) - a.ln()).max(0.0)
                }
            }
        }
    }

    fn scale(&self) -> f64 {
        match &self.shape {
            Shape::Le(e) | Shape::Eq(e) => e.scale(),
            Shape::LogGe { bound, .. } => bound.scale(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VarKind {
    Omega,
    Power,
    SatPower,
    Queue,
    Rate,
    Eta,
    Zeta,
    Slack,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarInfo {
    pub kind: VarKind,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

/// Minimise `objective` over the variables subject to `constraints` and
/// the variable bounds.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvexSubproblem {
    pub vars: Vec<VarInfo>,
    pub objective: Affine,
    pub constraints: Vec<Constraint>,
}

impl ConvexSubproblem {
    pub fn add_var(&mut self, kind: VarKind, lower: Option<f64>, upper: Option<f64>) -> usize {
        self.vars.push(VarInfo { kind, lower, upper });
        self.vars.len() - 1
    }

    pub fn le(&mut self, family: Family, expr: Affine) {
        self.constraints.push(Constraint { family, shape: Shape::Le(expr) });
    }

    pub fn eq(&mut self, family: Family, expr: Affine) {
        self.constraints.push(Constraint { family, shape: Shape::Eq(expr) });
    }

    pub fn log_ge(&mut self, family: Family, arg: Affine, bound: Affine) {
        self.constraints.push(Constraint { family, shape: Shape::LogGe { arg, bound } });
    }

    pub fn n_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn count(&self, family: Family) -> usize {
        self.constraints.iter().filter(|c| c.family == family).count()
    }

    pub fn count_vars(&self, kind: VarKind) -> usize {
        self.vars.iter().filter(|v| v.kind == kind).count()
    }

    /// Largest relative violation over rows and bounds at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let rows = self.constraints.iter().map(|c| c.violation(x) / c.scale());
        let bounds = self.vars.iter().zip(x).map(|(v, &xi)| {
            let lo = v.lower.map_or(0.0, |l| (l - xi).max(0.0) / l.abs().max(1.0));
            let hi = v.upper.map_or(0.0, |u| (xi - u).max(0.0) / u.abs().max(1.0));
            lo.max(hi)
        });
        rows.chain(bounds).fold(0.0, f64::max)
    }

    /// Family of the most violated row at `x`, if any row is violated.
    pub fn worst_family(&self, x: &[f64]) -> Option<(Family, f64)> {
        self.constraints
            .iter()
            .map(|c| (c.family, c.violation(x) / c.scale()))
            .filter(|c| c.1 > 0.0)
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }

    pub fn objective_at(&self, x: &[f64]) -> f64 {
        self.objective.eval(x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub feas: f64,
    pub kkt: f64,
    pub max_iter: u32,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { feas: 1e-6, kkt: 1e-5, max_iter: 200 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Solved,
    /// Solved to reduced accuracy.
    Inaccurate,
    /// Hard rows were relaxed with penalised slacks to recover a point.
    Restored,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub status: SolveStatus,
    pub iterations: u32,
    pub max_violation: f64,
    pub kkt_residual: f64,
}

/// Penalty per unit of elastic slack in the restoration phase.
const RESTORATION_PENALTY: f64 = 1e6;

/// Solves `problem`; an infeasible instance is retried once with every
/// inequality row relaxed by a penalised slack.
pub fn solve_convex(problem: &ConvexSubproblem, tol: &Tolerances) -> Result<Solution> {
    match solve_raw(problem, tol) {
        Ok(s) => Ok(s),
        Err(RawFailure::Infeasible) => {
            let relaxed = elastic(problem);
            match solve_raw(&relaxed, tol) {
                Ok(mut s) => {
                    s.x.truncate(problem.n_vars());
                    s.objective = problem.objective_at(&s.x);
                    s.max_violation = problem.max_violation(&s.x);
                    s.status = SolveStatus::Restored;
                    Ok(s)
                }
                Err(e) => Err(Error::Solver(format!("restoration failed: {e}"))),
            }
        }
        Err(e) => Err(Error::Solver(e.to_string())),
    }
}

#[derive(Debug)]
enum RawFailure {
    Infeasible,
    Unbounded,
    Other(String),
}

impl fmt::Display for RawFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RawFailure::Infeasible => write!(f, "primal infeasible"),
            RawFailure::Unbounded => write!(f, "unbounded"),
            RawFailure::Other(s) => write!(f, "{s}"),
        }
    }
}

fn elastic(problem: &ConvexSubproblem) -> ConvexSubproblem {
    let mut p = problem.clone();
    let rows = std::mem::take(&mut p.constraints);
    for c in rows {
        match c.shape {
            Shape::Le(e) => {
                let s = p.add_var(VarKind::Slack, Some(0.0), None);
                p.objective.add(s, RESTORATION_PENALTY);
                p.le(c.family, e.with(s, -1.0));
            }
            Shape::LogGe { arg, bound } => {
                let s = p.add_var(VarKind::Slack, Some(0.0), None);
                p.objective.add(s, RESTORATION_PENALTY);
                p.log_ge(c.family, arg, bound.with(s, -1.0));
            }
            eq @ Shape::Eq(_) => p.constraints.push(Constraint { family: c.family, shape: eq }),
        }
    }
    p
}

struct Rows {
    i: Vec<usize>,
    j: Vec<usize>,
    v: Vec<f64>,
    b: Vec<f64>,
}

impl Rows {
    /// Appends the row `−expr.terms · x + s = expr.constant`, i.e. s = expr(x)
    /// read with the sign convention A x + s = b.
    fn push_neg(&mut self, e: &Affine) {
        let r = self.b.len();
        for &(j, c) in &e.terms {
            self.i.push(r);
            self.j.push(j);
            self.v.push(-c);
        }
        self.b.push(e.constant);
    }
}

fn solve_raw(problem: &ConvexSubproblem, tol: &Tolerances) -> std::result::Result<Solution, RawFailure> {
    let n = problem.n_vars();
    let mut zero: Vec<Affine> = Vec::new();
    let mut nonneg: Vec<Affine> = Vec::new();
    let mut expo: Vec<(Affine, Affine)> = Vec::new();
    for c in &problem.constraints {
        match &c.shape {
            Shape::Le(e) => {
                let e = e.cleaned();
                if e.terms.is_empty() {
                    if e.constant > tol.feas * e.scale() {
                        return Err(RawFailure::Infeasible);
                    }
                } else {
                    // s = −expr ≥ 0
                    nonneg.push(e.scaled(-1.0));
                }
            }
            Shape::Eq(e) => {
                let e = e.cleaned();
                if e.terms.is_empty() {
                    if e.constant.abs() > tol.feas * e.scale() {
                        return Err(RawFailure::Infeasible);
                    }
                } else {
                    zero.push(e.scaled(-1.0));
                }
            }
            Shape::LogGe { arg, bound } => {
                let (arg, bound) = (arg.cleaned(), bound.cleaned());
                if arg.terms.is_empty() {
                    if arg.constant <= 0.0 {
                        return Err(RawFailure::Infeasible);
                    }
                    // bound ≤ ln(constant)
                    let e = bound.plus(-arg.constant.ln());
                    if e.terms.is_empty() {
                        if e.constant > tol.feas * e.scale() {
                            return Err(RawFailure::Infeasible);
                        }
                    } else {
                        nonneg.push(e.scaled(-1.0));
                    }
                } else {
                    expo.push((bound, arg));
                }
            }
        }
    }
    for (j, v) in problem.vars.iter().enumerate() {
        if let Some(l) = v.lower {
            nonneg.push(Affine::var(j).plus(-l));
        }
        if let Some(u) = v.upper {
            nonneg.push(Affine::constant(u).with(j, -1.0));
        }
    }

    let mut rows = Rows { i: Vec::new(), j: Vec::new(), v: Vec::new(), b: Vec::new() };
    let mut cones = Vec::new();
    // slack s = expr(x) means A = −terms, b = constant
    for e in &zero {
        rows.push_neg(e);
    }
    if !zero.is_empty() {
        cones.push(SupportedConeT::ZeroConeT(zero.len()));
    }
    for e in &nonneg {
        rows.push_neg(e);
    }
    if !nonneg.is_empty() {
        cones.push(SupportedConeT::NonnegativeConeT(nonneg.len()));
    }
    for (bound, arg) in &expo {
        rows.push_neg(bound);
        rows.push_neg(&Affine::constant(1.0));
        rows.push_neg(arg);
        cones.push(SupportedConeT::ExponentialConeT());
    }
    let m = rows.b.len();
    let a = CscMatrix::new_from_triplets(m, n, rows.i, rows.j, rows.v);
    let p = CscMatrix::zeros((n, n));
    let mut q = vec![0.0; n];
    for &(j, c) in &problem.objective.cleaned().terms {
        q[j] += c;
    }
    let mut last = None;
    for (attempt, variant) in VARIANTS.iter().enumerate() {
        let mut builder = DefaultSettingsBuilder::default();
        let settings = variant(&mut builder)
            .verbose(false)
            .max_iter(tol.max_iter)
            .tol_feas(tol.feas.min(1e-8))
            .tol_gap_abs(1e-7)
            .tol_gap_rel(1e-7)
            .build()
            .map_err(|e| RawFailure::Other(format!("{e:?}")))?;
        let mut solver = DefaultSolver::new(&p, &q, &a, &rows.b, &cones, settings)
            .map_err(|e| RawFailure::Other(format!("{e:?}")))?;
        solver.solve();
        match read_solution(problem, &solver.solution, tol) {
            Err(RawFailure::Other(e)) => {
                log::debug!("conic solve attempt {attempt} failed: {e}");
                last = Some(RawFailure::Other(e));
            }
            r => return r,
        }
    }
    Err(last.expect("at least one solver variant"))
}

type Variant = fn(&mut DefaultSettingsBuilder<f64>) -> &mut DefaultSettingsBuilder<f64>;

/// Settings tried in turn when a solve stalls short of an accurate point.
const VARIANTS: [Variant; 4] = [
    |b| b,
    |b| b.equilibrate_enable(false),
    |b| b.static_regularization_constant(1e-7),
    |b| b.max_step_fraction(0.9),
];

fn read_solution(
    problem: &ConvexSubproblem,
    sol: &clarabel::solver::DefaultSolution<f64>,
    tol: &Tolerances,
) -> std::result::Result<Solution, RawFailure> {
    let status = match sol.status {
        SolverStatus::Solved => SolveStatus::Solved,
        SolverStatus::AlmostSolved | SolverStatus::MaxIterations | SolverStatus::InsufficientProgress => {
            SolveStatus::Inaccurate
        }
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            return Err(RawFailure::Infeasible)
        }
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => return Err(RawFailure::Unbounded),
        s => return Err(RawFailure::Other(format!("solver stopped with {s:?}"))),
    };
    let x = sol.x.clone();
    if x.iter().any(|v| !v.is_finite()) {
        return Err(RawFailure::Other("non-finite iterate".into()));
    }
    let max_violation = problem.max_violation(&x);
    if status == SolveStatus::Inaccurate && max_violation > 1e3 * tol.feas {
        let worst = problem.worst_family(&x).map_or("bounds".to_string(), |(f, _)| f.to_string());
        return Err(RawFailure::Other(format!(
            "inaccurate point ({:?}), violation {max_violation:.3e} in {worst}",
            sol.status
        )));
    }
    Ok(Solution {
        objective: problem.objective_at(&x),
        status,
        iterations: sol.iterations,
        max_violation,
        kkt_residual: sol.r_dual.max(sol.r_prim),
        x,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn lp_sanity() {
        let mut p = ConvexSubproblem::default();
        let q = p.add_var(VarKind::Queue, None, None);
        p.objective = Affine::var(q);
        p.le(Family::C15a, Affine::constant(3.0).with(q, -1.0));
        let s = solve_convex(&p, &Tolerances::default()).unwrap();
        assert!((s.x[q] - 3.0).abs() < 1e-6);
        assert_eq!(s.status, SolveStatus::Solved);
    }

    #[test]
    fn single_link_uses_full_power() {
        let (h_over_noise, p_max) = (40.0, 2.0);
        let mut p = ConvexSubproblem::default();
        let pw = p.add_var(VarKind::Power, Some(0.0), Some(p_max));
        let r = p.add_var(VarKind::Rate, None, None);
        p.objective = Affine::var(r).scaled(-1.0);
        p.log_ge(Family::C18c, Affine::constant(1.0).with(pw, h_over_noise), Affine::var(r));
        let s = solve_convex(&p, &Tolerances::default()).unwrap();
        assert!((s.x[pw] - p_max).abs() < 1e-5);
        assert!((s.x[r] - (1.0 + h_over_noise * p_max).ln()).abs() < 1e-6);
    }

    #[test]
    fn infeasible_rows_go_through_restoration() {
        let mut p = ConvexSubproblem::default();
        let x = p.add_var(VarKind::Power, Some(0.0), Some(1.0));
        p.objective = Affine::var(x);
        p.le(Family::C11, Affine::constant(2.0).with(x, -1.0));
        let s = solve_convex(&p, &Tolerances::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Restored);
        assert!((s.x[x] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn constant_rows_are_checked() {
        let mut p = ConvexSubproblem::default();
        let x = p.add_var(VarKind::Power, Some(0.0), Some(1.0));
        p.objective = Affine::var(x);
        p.le(Family::C5, Affine::constant(-0.5));
        p.log_ge(Family::C10a, Affine::constant(2.0), Affine::constant(0.5));
        let s = solve_convex(&p, &Tolerances::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Solved);
        p.log_ge(Family::C10a, Affine::constant(2.0), Affine::constant(0.8));
        assert_eq!(solve_convex(&p, &Tolerances::default()).unwrap().status, SolveStatus::Restored);
    }

    /// Two parallel channels sharing one budget, checked against a dense
    /// grid over the two powers.
    #[test]
    fn matches_grid_search_on_random_instances() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let a: f64 = rng.random_range(0.5..50.0);
            let b: f64 = rng.random_range(0.5..50.0);
            let wa: f64 = rng.random_range(0.5..2.0);
            let budget: f64 = rng.random_range(0.2..2.0);
            let mut p = ConvexSubproblem::default();
            let x = p.add_var(VarKind::Power, Some(0.0), None);
            let y = p.add_var(VarKind::Power, Some(0.0), None);
            let rx = p.add_var(VarKind::Rate, None, None);
            let ry = p.add_var(VarKind::Rate, None, None);
            p.objective = Affine::default().with(rx, -wa).with(ry, -1.0);
            p.log_ge(Family::C18c, Affine::constant(1.0).with(x, a), Affine::var(rx));
            p.log_ge(Family::C18c, Affine::constant(1.0).with(y, b), Affine::var(ry));
            p.le(Family::C12, Affine::constant(-budget).with(x, 1.0).with(y, 1.0));
            let s = solve_convex(&p, &Tolerances::default()).unwrap();

            let n = 1000;
            let mut best = f64::INFINITY;
            for i in 0..=n {
                for j in 0..=n - i {
                    let (px, py) = (budget * i as f64 / n as f64, budget * j as f64 / n as f64);
                    best = best.min(-wa * (1.0 + a * px).ln() - (1.0 + b * py).ln());
                }
            }
            assert!(s.objective <= best + 1e-6 * best.abs().max(1.0));
            assert!(((s.objective - best) / best).abs() < 1e-3, "{} vs {}", s.objective, best);
        }
    }
}
