//! LMI certificates of exponential decay for the four closed loops, checked
//! through a pluggable SDP backend.
//!
//! A problem is a list of named matrix variables (symmetric cone-constrained
//! or free) and affine symmetric matrix constraints. Builders transcribe
//! each certificate family's block tables; [`check_feasible`] hands the
//! problem to a backend and then *re-verifies every constraint by
//! eigendecomposition* before issuing a [`Certificate`] — solver status is
//! never trusted alone.

mod families;
mod lyapunov;
mod sdpa;

#[cfg(feature = "solver")]
mod backend;

pub use families::{
    build_lemma1, build_lemma2, build_prop1, build_prop3, build_synthesis, synthesis_gain_from,
};
pub use lyapunov::evaluate_v;
pub use sdpa::{export_sdpa, parse_sdpa, sdpa_string, SdpaData};

#[cfg(feature = "solver")]
pub use backend::ClarabelBackend;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::model::DelayProfile;

/// Certificate family tags. The names double as CLI/config tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Sampled loop with actuation-delay uncertainty (`mu_max >= 0`):
    /// certifies the full delay range including the predictor residual.
    Lemma1,
    /// Sampled loop with exact actuation delay (`mu_max = 0`): conditions
    /// independent of the transport delays, which the predictor cancels.
    Prop1,
    /// Continuous measurements, switching trigger, uncertain actuation
    /// delay (`mu_max >= 0`).
    Lemma2,
    /// Continuous measurements, switching trigger, exact actuation delay
    /// (`mu_max = 0`): delay-free certificate.
    Prop3,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Family::Lemma1 => "lemma1",
            Family::Prop1 => "prop1",
            Family::Lemma2 => "lemma2",
            Family::Prop3 => "prop3",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lemma1" => Ok(Family::Lemma1),
            "prop1" => Ok(Family::Prop1),
            "lemma2" => Ok(Family::Lemma2),
            "prop3" => Ok(Family::Prop3),
            other => Err(Error::InvalidParam(format!(
                "unknown family '{other}' (expected lemma1|prop1|lemma2|prop3)"
            ))),
        }
    }
}

/// Scenario parameters a problem was built for; carried into certificates
/// so trajectory-side evaluation can reconstruct the functional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemMeta {
    pub alpha: f64,
    pub sigma: f64,
    pub r0: f64,
    pub r1: f64,
    pub eta_max: f64,
    pub mu_max: f64,
    /// Sampling interval (sampled families) or waiting time (switching
    /// families).
    pub h: f64,
}

impl ProblemMeta {
    pub fn profile(&self) -> Result<DelayProfile> {
        DelayProfile::new(self.r0, self.r1, self.eta_max, self.mu_max, self.h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    /// Symmetric, constrained `X ⪰ 0`.
    SymPsd,
    /// Symmetric, constrained `X ⪰ shift I` (strict feasibility).
    SymPsdStrict,
    /// Unconstrained rectangular.
    Free,
}

#[derive(Debug, Clone)]
pub struct VarDecl {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub kind: VarKind,
    offset: usize,
}

impl VarDecl {
    pub fn n_params(&self) -> usize {
        match self.kind {
            VarKind::Free => self.rows * self.cols,
            _ => self.rows * (self.rows + 1) / 2,
        }
    }

    /// Basis matrix of local parameter `p` (upper triangle, column-major;
    /// off-diagonal entries set both mirror positions).
    fn basis(&self, p: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.rows, self.cols);
        match self.kind {
            VarKind::Free => {
                out[(p % self.rows, p / self.rows)] = 1.0;
            }
            _ => {
                let (i, j) = sym_index(p);
                out[(i, j)] = 1.0;
                out[(j, i)] = 1.0;
            }
        }
        out
    }

    fn decode(&self, x: &[f64]) -> DMatrix<f64> {
        let vals = &x[self.offset..self.offset + self.n_params()];
        let mut out = DMatrix::zeros(self.rows, self.cols);
        match self.kind {
            VarKind::Free => {
                for (p, v) in vals.iter().enumerate() {
                    out[(p % self.rows, p / self.rows)] = *v;
                }
            }
            _ => {
                for (p, v) in vals.iter().enumerate() {
                    let (i, j) = sym_index(p);
                    out[(i, j)] = *v;
                    out[(j, i)] = *v;
                }
            }
        }
        out
    }
}

/// Inverse of column-major upper-triangle enumeration: parameter `p` maps
/// to entry `(i, j)` with `i <= j`.
fn sym_index(p: usize) -> (usize, usize) {
    let mut j = 0usize;
    let mut acc = 0usize;
    loop {
        if acc + j + 1 > p {
            return (p - acc, j);
        }
        acc += j + 1;
        j += 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(usize);

/// One summand of a block expression: `coeff * L * X{^T} * R`.
#[derive(Debug, Clone)]
pub struct Term {
    coeff: f64,
    left: Option<DMatrix<f64>>,
    var: VarId,
    transposed: bool,
    right: Option<DMatrix<f64>>,
}

impl Term {
    pub fn var(v: VarId) -> Self {
        Self { coeff: 1.0, left: None, var: v, transposed: false, right: None }
    }

    pub fn scaled(mut self, c: f64) -> Self {
        self.coeff *= c;
        self
    }

    /// Use the transposed variable.
    pub fn t(mut self) -> Self {
        self.transposed = !self.transposed;
        self
    }

    pub fn left(mut self, l: &DMatrix<f64>) -> Self {
        self.left = Some(l.clone());
        self
    }

    pub fn right(mut self, r: &DMatrix<f64>) -> Self {
        self.right = Some(r.clone());
        self
    }

    fn eval_with(&self, value: &DMatrix<f64>) -> DMatrix<f64> {
        let mut m = if self.transposed { value.transpose() } else { value.clone() };
        if let Some(l) = &self.left {
            m = l * m;
        }
        if let Some(r) = &self.right {
            m = m * r;
        }
        m * self.coeff
    }
}

/// Affine matrix expression for one block: sum of terms plus an optional
/// constant.
#[derive(Debug, Clone, Default)]
pub struct BlockExpr {
    pub(crate) terms: Vec<Term>,
    pub(crate) constant: Option<DMatrix<f64>>,
}

impl BlockExpr {
    pub fn terms(terms: Vec<Term>) -> Self {
        Self { terms, constant: None }
    }

    pub fn constant(c: DMatrix<f64>) -> Self {
        Self { terms: Vec::new(), constant: Some(c) }
    }

    pub fn with_constant(mut self, c: DMatrix<f64>) -> Self {
        self.constant = Some(c);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    /// Expression required negative semidefinite.
    Nsd,
    /// Expression required positive semidefinite.
    Psd,
}

/// A symmetric block-matrix inequality. Off-diagonal blocks are given for
/// `i < j` only; the mirror position holds the transpose by construction.
#[derive(Debug, Clone)]
pub struct Constraint {
    pub name: String,
    pub sense: Sense,
    block_dims: Vec<usize>,
    offsets: Vec<usize>,
    pub dim: usize,
    blocks: Vec<(usize, usize, BlockExpr)>,
}

impl Constraint {
    pub fn new(name: impl Into<String>, sense: Sense, block_dims: Vec<usize>) -> Self {
        let mut offsets = Vec::with_capacity(block_dims.len());
        let mut acc = 0;
        for d in &block_dims {
            offsets.push(acc);
            acc += d;
        }
        Self { name: name.into(), sense, block_dims, offsets, dim: acc, blocks: Vec::new() }
    }

    /// Sets block `(i, j)`, `i <= j`.
    pub fn block(&mut self, i: usize, j: usize, expr: BlockExpr) {
        assert!(i <= j, "only upper-triangle blocks are stored");
        assert!(j < self.block_dims.len());
        self.blocks.push((i, j, expr));
    }
}

/// An LMI feasibility problem over named matrix variables.
#[derive(Debug, Clone)]
pub struct LmiProblem {
    pub family: Family,
    pub meta: ProblemMeta,
    vars: Vec<VarDecl>,
    constraints: Vec<Constraint>,
    /// True when every constraint is linear-homogeneous in the variables
    /// (the analysis families). The feasible set is then a cone, and the
    /// strict shift can be taken as 1 at solve time without changing
    /// feasibility.
    pub homogeneous: bool,
    /// Margin required of strict variables in a verified certificate.
    pub strictness: f64,
}

impl LmiProblem {
    pub fn new(family: Family, meta: ProblemMeta, homogeneous: bool) -> Self {
        Self { family, meta, vars: Vec::new(), constraints: Vec::new(), homogeneous, strictness: 1e-6 }
    }

    pub fn sym_var(&mut self, name: &str, n: usize, strict: bool) -> VarId {
        let offset = self.n_params();
        self.vars.push(VarDecl {
            name: name.into(),
            rows: n,
            cols: n,
            kind: if strict { VarKind::SymPsdStrict } else { VarKind::SymPsd },
            offset,
        });
        VarId(self.vars.len() - 1)
    }

    pub fn free_var(&mut self, name: &str, rows: usize, cols: usize) -> VarId {
        let offset = self.n_params();
        self.vars.push(VarDecl { name: name.into(), rows, cols, kind: VarKind::Free, offset });
        VarId(self.vars.len() - 1)
    }

    pub fn push_constraint(&mut self, c: Constraint) {
        self.constraints.push(c);
    }

    /// Appends the cone constraints of the symmetric variables
    /// (`X ⪰ 0`, or `X - shift I ⪰ 0` for strict ones). Builders call this
    /// once, last.
    pub fn finalize(&mut self) {
        let shift = self.strict_shift();
        for (idx, v) in self.vars.clone().iter().enumerate() {
            let expr = match v.kind {
                VarKind::SymPsd => BlockExpr::terms(vec![Term::var(VarId(idx))]),
                VarKind::SymPsdStrict => BlockExpr::terms(vec![Term::var(VarId(idx))])
                    .with_constant(DMatrix::identity(v.rows, v.rows) * -shift),
                VarKind::Free => continue,
            };
            let mut c = Constraint::new(format!("{} >= 0", v.name), Sense::Psd, vec![v.rows]);
            c.block(0, 0, expr);
            self.constraints.push(c);
        }
    }

    /// Solve-time shift for strict variables. Analysis problems are
    /// homogeneous, so `X ⪰ I` is feasibility-equivalent to `X ≻ 0` and
    /// keeps the returned solution at unit scale.
    pub fn strict_shift(&self) -> f64 {
        if self.homogeneous {
            1.0
        } else {
            self.strictness
        }
    }

    pub fn n_params(&self) -> usize {
        self.vars.last().map_or(0, |v| v.offset + v.n_params())
    }

    pub fn vars(&self) -> &[VarDecl] {
        &self.vars
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn var_matrix(&self, name: &str, x: &[f64]) -> Option<DMatrix<f64>> {
        self.vars.iter().find(|v| v.name == name).map(|v| v.decode(x))
    }

    /// Objective coefficients: minimize the total trace of the cone
    /// variables. Bounded below on the cone, it anchors the solution scale
    /// without affecting feasibility.
    pub fn objective(&self) -> Vec<f64> {
        let mut q = vec![0.0; self.n_params()];
        for v in &self.vars {
            if v.kind == VarKind::Free {
                continue;
            }
            for j in 0..v.rows {
                // local parameter index of diagonal entry (j, j)
                let p = j * (j + 1) / 2 + j;
                q[v.offset + p] = 1.0;
            }
        }
        q
    }

    /// Evaluates constraint `c` at parameter vector `x`; the result is
    /// exactly symmetric.
    pub fn eval_constraint(&self, c: &Constraint, x: &[f64]) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(c.dim, c.dim);
        for (bi, bj, expr) in &c.blocks {
            let mut val = DMatrix::zeros(c.block_dims[*bi], c.block_dims[*bj]);
            if let Some(k) = &expr.constant {
                val += k;
            }
            for term in &expr.terms {
                let decl = &self.vars[term.var.0];
                val += term.eval_with(&decl.decode(x));
            }
            place(&mut out, c.offsets[*bi], c.offsets[*bj], &val, *bi == *bj);
        }
        symmetrize(out)
    }

    /// Affine decomposition of a constraint: `E(x) = c0 + Σ x_p coeffs[p]`.
    /// Only parameters with nonzero coefficients appear.
    pub fn constraint_data(&self, c: &Constraint) -> ConstraintData {
        let mut c0 = DMatrix::zeros(c.dim, c.dim);
        let mut coeffs: BTreeMap<usize, DMatrix<f64>> = BTreeMap::new();
        for (bi, bj, expr) in &c.blocks {
            let (oi, oj) = (c.offsets[*bi], c.offsets[*bj]);
            let diag = bi == bj;
            if let Some(k) = &expr.constant {
                place(&mut c0, oi, oj, k, diag);
            }
            for term in &expr.terms {
                let decl = &self.vars[term.var.0];
                for p in 0..decl.n_params() {
                    let contrib = term.eval_with(&decl.basis(p));
                    if contrib.iter().all(|v| *v == 0.0) {
                        continue;
                    }
                    let entry = coeffs
                        .entry(decl.offset + p)
                        .or_insert_with(|| DMatrix::zeros(c.dim, c.dim));
                    place(entry, oi, oj, &contrib, diag);
                }
            }
        }
        let c0 = symmetrize(c0);
        let coeffs = coeffs.into_iter().map(|(p, m)| (p, symmetrize(m))).collect();
        ConstraintData { c0, coeffs }
    }
}

fn place(out: &mut DMatrix<f64>, oi: usize, oj: usize, val: &DMatrix<f64>, diag: bool) {
    let mut view = out.view_mut((oi, oj), (val.nrows(), val.ncols()));
    view += val;
    if !diag {
        let vt = val.transpose();
        let mut mirror = out.view_mut((oj, oi), (vt.nrows(), vt.ncols()));
        mirror += &vt;
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let mt = m.transpose();
    (m + mt) * 0.5
}

#[derive(Debug, Clone)]
pub struct ConstraintData {
    pub c0: DMatrix<f64>,
    pub coeffs: Vec<(usize, DMatrix<f64>)>,
}

/// Margin of one verified constraint: distance into the feasible side
/// (`-λ_max` for ⪯ 0 constraints, `λ_min` for ⪰ 0), and the scale it was
/// judged against.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstraintMargin {
    pub name: String,
    pub margin: f64,
    pub scale: f64,
}

/// A solver-independent record of a verified feasible point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Certificate {
    pub family: Family,
    pub meta: ProblemMeta,
    /// Variable values, row-major.
    pub values: BTreeMap<String, Vec<Vec<f64>>>,
    pub margins: Vec<ConstraintMargin>,
    /// Largest violation over all constraints (should be <= tolerance).
    pub max_violation: f64,
}

impl Certificate {
    pub fn matrix(&self, name: &str) -> Option<DMatrix<f64>> {
        self.values.get(name).map(|rows| {
            let r = rows.len();
            let c = rows.first().map_or(0, |row| row.len());
            DMatrix::from_row_iterator(r, c, rows.iter().flatten().copied())
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendStatus {
    Feasible,
    Infeasible,
    Unknown,
}

#[derive(Debug, Clone)]
pub struct BackendSolution {
    pub status: BackendStatus,
    pub x: Vec<f64>,
    pub detail: String,
}

/// Contract for SDP backends: hand back a candidate point or an
/// infeasibility verdict. Returned values are always re-verified here; a
/// backend is never trusted alone.
pub trait SdpBackend {
    fn solve(&self, problem: &LmiProblem) -> Result<BackendSolution>;
    fn name(&self) -> &str;
}

#[derive(Debug, Clone)]
pub enum Feasibility {
    Feasible(Box<Certificate>),
    Infeasible,
    /// Solver failed, gave up, or its answer did not survive re-checking.
    Unknown(String),
}

impl Feasibility {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Feasibility::Feasible(_))
    }

    pub fn certificate(self) -> Option<Certificate> {
        match self {
            Feasibility::Feasible(c) => Some(*c),
            _ => None,
        }
    }
}

/// Eigenvalue tolerance of the independent re-check, relative to
/// `max(1, ||E||)` per constraint.
pub const VERIFY_TOL: f64 = 1e-7;

/// Solves `problem` on `backend` and independently verifies the result.
pub fn check_feasible(problem: &LmiProblem, backend: &dyn SdpBackend) -> Feasibility {
    match backend.solve(problem) {
        Err(e) => Feasibility::Unknown(format!("{} failed: {e}", backend.name())),
        Ok(sol) => match sol.status {
            BackendStatus::Infeasible => Feasibility::Infeasible,
            BackendStatus::Unknown => Feasibility::Unknown(sol.detail),
            BackendStatus::Feasible => match verify_solution(problem, &sol.x) {
                Ok(cert) => Feasibility::Feasible(Box::new(cert)),
                Err(msg) => {
                    Feasibility::Unknown(format!("{} answer failed re-check: {msg}", backend.name()))
                }
            },
        },
    }
}

/// Re-checks every constraint of `problem` at point `x` by symmetric
/// eigendecomposition and assembles a [`Certificate`].
pub fn verify_solution(problem: &LmiProblem, x: &[f64]) -> std::result::Result<Certificate, String> {
    if x.len() != problem.n_params() {
        return Err(format!("solution length {} != {}", x.len(), problem.n_params()));
    }
    let mut margins = Vec::with_capacity(problem.constraints.len());
    let mut max_violation = 0.0f64;
    for c in &problem.constraints {
        let e = problem.eval_constraint(c, x);
        let eigs = e.symmetric_eigenvalues();
        let lam_min = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
        let lam_max = eigs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let scale = lam_min.abs().max(lam_max.abs()).max(1.0);
        let margin = match c.sense {
            Sense::Nsd => -lam_max,
            Sense::Psd => lam_min,
        };
        max_violation = max_violation.max(-margin);
        if margin < -VERIFY_TOL * scale {
            return Err(format!(
                "constraint '{}' violated: margin {margin:.3e} at scale {scale:.3e}",
                c.name
            ));
        }
        margins.push(ConstraintMargin { name: c.name.clone(), margin, scale });
    }
    let values = problem
        .vars
        .iter()
        .map(|v| {
            let m = v.decode(x);
            let rows =
                (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect();
            (v.name.clone(), rows)
        })
        .collect();
    Ok(Certificate {
        family: problem.family,
        meta: problem.meta,
        values,
        margins,
        max_violation: max_violation.max(0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn meta() -> ProblemMeta {
        ProblemMeta { alpha: 0.1, sigma: 0.0, r0: 0.0, r1: 0.0, eta_max: 0.0, mu_max: 0.0, h: 0.1 }
    }

    #[test]
    fn sym_index_enumeration() {
        // column-major upper triangle: (0,0), (0,1), (1,1), (0,2), (1,2), (2,2)
        let expect = [(0, 0), (0, 1), (1, 1), (0, 2), (1, 2), (2, 2)];
        for (p, e) in expect.iter().enumerate() {
            assert_eq!(sym_index(p), *e);
        }
    }

    #[test]
    fn eval_matches_decomposition() {
        let mut p = LmiProblem::new(Family::Prop3, meta(), true);
        let a = dmatrix![0.0, 1.0; -2.0, -3.0];
        let pv = p.sym_var("P", 2, true);
        let p2 = p.free_var("P2", 2, 2);
        let mut c = Constraint::new("test", Sense::Nsd, vec![2, 2]);
        c.block(
            0,
            0,
            BlockExpr::terms(vec![
                Term::var(pv).scaled(2.0),
                Term::var(p2).t().right(&a),
                Term::var(p2).left(&a.transpose()),
            ]),
        );
        c.block(0, 1, BlockExpr::terms(vec![Term::var(pv), Term::var(p2).t().scaled(-1.0)]));
        c.block(1, 1, BlockExpr::terms(vec![Term::var(p2).scaled(-1.0), Term::var(p2).t().scaled(-1.0)]));
        p.push_constraint(c);
        p.finalize();

        let nx = p.n_params();
        assert_eq!(nx, 3 + 4);
        let mut rng = crate::simulator::rng::SplitMix64::new(5);
        let x: Vec<f64> = (0..nx).map(|_| rng.next_f64() * 2.0 - 1.0).collect();

        for c in p.constraints() {
            let e = p.eval_constraint(c, &x);
            // exactly symmetric by construction
            assert_eq!((&e - e.transpose()).abs().max(), 0.0);
            // affine decomposition reproduces the evaluation
            let data = p.constraint_data(c);
            let mut rebuilt = data.c0.clone();
            for (pidx, m) in &data.coeffs {
                rebuilt += m * x[*pidx];
            }
            assert!((&e - &rebuilt).abs().max() < 1e-14);
        }
    }

    #[test]
    fn verify_rejects_violations() {
        let mut p = LmiProblem::new(Family::Prop3, meta(), true);
        let v = p.sym_var("P", 1, false);
        let mut c = Constraint::new("neg", Sense::Nsd, vec![1]);
        c.block(0, 0, BlockExpr::terms(vec![Term::var(v)]));
        p.push_constraint(c);
        p.finalize();
        // P = 1: violates P <= 0 but satisfies P >= 0
        assert!(verify_solution(&p, &[1.0]).is_err());
        // P = 0: both hold with zero margin
        let cert = verify_solution(&p, &[0.0]).unwrap();
        assert_eq!(cert.max_violation, 0.0);
    }

    #[test]
    fn certificate_json_round_trip() {
        let mut p = LmiProblem::new(Family::Prop3, meta(), true);
        let v = p.sym_var("P", 2, false);
        let mut c = Constraint::new("psd", Sense::Psd, vec![2]);
        c.block(0, 0, BlockExpr::terms(vec![Term::var(v)]));
        p.push_constraint(c);
        p.finalize();
        let cert = verify_solution(&p, &[1.0, 0.1, 2.0]).unwrap();
        let back = Certificate::from_json(&cert.to_json()).unwrap();
        assert_eq!(back.matrix("P"), cert.matrix("P"));
        assert_eq!(back.matrix("P").unwrap(), dmatrix![1.0, 0.1; 0.1, 2.0]);
    }
}
