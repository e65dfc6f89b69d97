//! Interior-point SDP backend built on Clarabel.
//!
//! Each matrix inequality becomes one PSD-triangle cone block of the conic
//! program `min qᵀx  s.t.  Ax + s = b, s ∈ K`: for a constraint
//! `E(x) = C0 + Σ x_p C_p ⪰ 0` (sign-flipped for ⪯ 0), the slack is
//! `s = svec(E(x))`, so `b = svec(C0)` and `A[:, p] = -svec(C_p)`. The
//! objective is the total trace of the cone variables, which anchors the
//! scale of the (conic, otherwise scale-free) analysis problems.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use nalgebra::DMatrix;

use crate::error::{Error, Result};

use super::{BackendSolution, BackendStatus, LmiProblem, SdpBackend, Sense};

#[derive(Debug, Clone)]
pub struct ClarabelBackend {
    pub verbose: bool,
    pub max_iter: u32,
}

impl Default for ClarabelBackend {
    fn default() -> Self {
        Self { verbose: false, max_iter: 200 }
    }
}

fn svec(m: &DMatrix<f64>) -> Vec<f64> {
    let d = m.nrows();
    let mut out = Vec::with_capacity(d * (d + 1) / 2);
    let sqrt2 = std::f64::consts::SQRT_2;
    for col in 0..d {
        for row in 0..=col {
            if row == col {
                out.push(m[(row, col)]);
            } else {
                out.push(m[(row, col)] * sqrt2);
            }
        }
    }
    out
}

impl SdpBackend for ClarabelBackend {
    fn name(&self) -> &str {
        "clarabel"
    }

    fn solve(&self, problem: &LmiProblem) -> Result<BackendSolution> {
        let nx = problem.n_params();
        if problem.constraints().is_empty() {
            return Err(Error::Backend("problem has no constraints".into()));
        }

        let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
        let mut b: Vec<f64> = Vec::new();
        // triplet columns: per parameter, (global row, value)
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nx];
        let mut row_offset = 0usize;

        for c in problem.constraints() {
            let data = problem.constraint_data(c);
            let sign = match c.sense {
                Sense::Psd => 1.0,
                Sense::Nsd => -1.0,
            };
            let c0 = svec(&data.c0);
            b.extend(c0.iter().map(|v| sign * v));
            for (p, m) in &data.coeffs {
                for (local, v) in svec(m).into_iter().enumerate() {
                    if v != 0.0 {
                        cols[*p].push((row_offset + local, -sign * v));
                    }
                }
            }
            cones.push(SupportedConeT::PSDTriangleConeT(c.dim));
            row_offset += c.dim * (c.dim + 1) / 2;
        }

        let mut colptr = Vec::with_capacity(nx + 1);
        let mut rowval = Vec::new();
        let mut nzval = Vec::new();
        colptr.push(0);
        for col in &cols {
            // rows were appended constraint by constraint, already ascending
            rowval.extend(col.iter().map(|(r, _)| *r));
            nzval.extend(col.iter().map(|(_, v)| *v));
            colptr.push(rowval.len());
        }
        let a = CscMatrix::new(row_offset, nx, colptr, rowval, nzval);
        let p = CscMatrix::<f64>::zeros((nx, nx));
        let q = problem.objective();

        let settings = DefaultSettingsBuilder::default()
            .verbose(self.verbose)
            .max_iter(self.max_iter)
            .build()
            .map_err(|e| Error::Backend(format!("settings: {e}")))?;
        let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings)
            .map_err(|e| Error::Backend(format!("setup: {e:?}")))?;
        solver.solve();

        let status = match solver.solution.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => BackendStatus::Feasible,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                BackendStatus::Infeasible
            }
            _ => BackendStatus::Unknown,
        };
        Ok(BackendSolution {
            status,
            x: solver.solution.x.clone(),
            detail: format!("{:?}", solver.solution.status),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lmi::{
        check_feasible, BlockExpr, Constraint, Family, Feasibility, ProblemMeta, Term,
    };

    fn meta() -> ProblemMeta {
        ProblemMeta { alpha: 0.1, sigma: 0.0, r0: 0.0, r1: 0.0, eta_max: 0.0, mu_max: 0.0, h: 0.5 }
    }

    #[test]
    fn scalar_lyapunov_feasible() {
        // stable scalar plant x' = -x: find p > 0 with -2p <= 0; trivially
        // feasible with a strict margin.
        let mut pr = LmiProblem::new(Family::Prop3, meta(), true);
        let p = pr.sym_var("P", 1, true);
        let mut c = Constraint::new("lyap", Sense::Nsd, vec![1]);
        c.block(0, 0, BlockExpr::terms(vec![Term::var(p).scaled(-2.0)]));
        pr.push_constraint(c);
        pr.finalize();
        let backend = ClarabelBackend::default();
        match check_feasible(&pr, &backend) {
            Feasibility::Feasible(cert) => {
                let pval = cert.matrix("P").unwrap()[(0, 0)];
                assert!(pval >= 1.0 - 1e-6, "strict shift should hold, got {pval}");
            }
            other => panic!("expected feasible, got {other:?}"),
        }
    }

    #[test]
    fn trivially_infeasible_detected() {
        // constant constraint 1 <= 0 with an unrelated variable
        let mut pr = LmiProblem::new(Family::Prop3, meta(), true);
        let _p = pr.sym_var("P", 1, false);
        let mut c = Constraint::new("bad", Sense::Nsd, vec![1]);
        c.block(0, 0, BlockExpr::constant(nalgebra::dmatrix![1.0]));
        pr.push_constraint(c);
        pr.finalize();
        let backend = ClarabelBackend::default();
        assert!(matches!(check_feasible(&pr, &backend), Feasibility::Infeasible));
    }

    #[test]
    fn unstable_scalar_lyapunov_infeasible() {
        // x' = +x: need p > 0 with 2p <= 0, impossible
        let mut pr = LmiProblem::new(Family::Prop3, meta(), true);
        let p = pr.sym_var("P", 1, true);
        let mut c = Constraint::new("lyap", Sense::Nsd, vec![1]);
        c.block(0, 0, BlockExpr::terms(vec![Term::var(p).scaled(2.0)]));
        pr.push_constraint(c);
        pr.finalize();
        let backend = ClarabelBackend::default();
        assert!(matches!(check_feasible(&pr, &backend), Feasibility::Infeasible));
    }

    #[test]
    fn matrix_lyapunov_feasible_and_verified() {
        // A = [[0,1],[-2,-3]] Hurwitz: AᵀP + PA + Q ⪯ 0 with P ≻ 0 for
        // some Q = I scaling folded in via 2αP.
        let a = nalgebra::dmatrix![0.0, 1.0; -2.0, -3.0];
        let mut pr = LmiProblem::new(Family::Prop3, meta(), true);
        let p = pr.sym_var("P", 2, true);
        let mut c = Constraint::new("lyap", Sense::Nsd, vec![2]);
        c.block(
            0,
            0,
            BlockExpr::terms(vec![
                Term::var(p).right(&a),
                Term::var(p).left(&a.transpose()),
                Term::var(p).scaled(0.2),
            ]),
        );
        pr.push_constraint(c);
        pr.finalize();
        let backend = ClarabelBackend::default();
        let feas = check_feasible(&pr, &backend);
        let cert = match feas {
            Feasibility::Feasible(c) => c,
            other => panic!("expected feasible, got {other:?}"),
        };
        assert!(cert.max_violation <= 1e-7);
        // margins recorded for both the inequality and the variable cone
        assert_eq!(cert.margins.len(), 2);
    }
}
