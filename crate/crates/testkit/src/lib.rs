//! Reference solutions computed independently of the library: a generic
//! interior-point conic solver for the projection problems, the textbook
//! affine projection formula, and a fine grid scan for the scalar problem.

extern crate openblas_src;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettingsBuilder, DefaultSolver, IPSolver, SupportedConeT};
pub use clarabel::solver::SolverStatus;
use nalgebra::{DMatrix, DVector};

/// Column-major index of (i, j), i ≤ j, in the packed upper triangle.
fn tri(i: usize, j: usize) -> usize {
    j * (j + 1) / 2 + i
}

fn unpack(x: &[f64], n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| if i <= j { x[tri(i, j)] } else { x[tri(j, i)] })
}

#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub omega: DMatrix<f64>,
    pub mu: f64,
    /// ‖Ω − target‖_F at the solver's optimum.
    pub distance: f64,
}

/// Solves min ‖Ω − target‖_F² over μI ⪯ Ω ⪯ κμI, μ ≥ 0, optionally with the
/// pattern constraints Ω_11 = 1 and Ω_1j = Ω_jj.
fn solve(target: &DMatrix<f64>, kappa: f64, pattern: bool) -> Result<ConicSolution, SolverStatus> {
    let n = target.nrows();
    let nt = n * (n + 1) / 2;
    let mu = nt;
    let nvar = nt + 1;

    let mut p_rows = Vec::new();
    let mut p_cols = Vec::new();
    let mut p_vals = Vec::new();
    let mut q = vec![0.0; nvar];
    for j in 0..n {
        for i in 0..=j {
            let w = if i == j { 1.0 } else { 2.0 };
            let v = tri(i, j);
            p_rows.push(v);
            p_cols.push(v);
            p_vals.push(2.0 * w);
            q[v] = -2.0 * w * target[(i, j)];
        }
    }
    let p = CscMatrix::new_from_triplets(nvar, nvar, p_rows, p_cols, p_vals);

    let (mut ai, mut aj, mut av, mut b) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut row = 0;
    let mut cones = Vec::new();
    if pattern {
        ai.push(row);
        aj.push(tri(0, 0));
        av.push(1.0);
        b.push(1.0);
        row += 1;
        for j in 1..n {
            ai.extend([row, row]);
            aj.extend([tri(0, j), tri(j, j)]);
            av.extend([1.0, -1.0]);
            b.push(0.0);
            row += 1;
        }
        cones.push(SupportedConeT::ZeroConeT(n));
    }
    // s = svec(Ω − μI) and s = svec(κμI − Ω), off-diagonals scaled by √2.
    for (sign, mu_coef) in [(-1.0, 1.0), (1.0, -kappa)] {
        for j in 0..n {
            for i in 0..=j {
                let scale = if i == j { 1.0 } else { std::f64::consts::SQRT_2 };
                ai.push(row);
                aj.push(tri(i, j));
                av.push(sign * scale);
                if i == j {
                    ai.push(row);
                    aj.push(mu);
                    av.push(mu_coef);
                }
                b.push(0.0);
                row += 1;
            }
        }
        cones.push(SupportedConeT::PSDTriangleConeT(n));
    }
    ai.push(row);
    aj.push(mu);
    av.push(-1.0);
    b.push(0.0);
    row += 1;
    cones.push(SupportedConeT::NonnegativeConeT(1));
    let a = CscMatrix::new_from_triplets(row, nvar, ai, aj, av);

    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .tol_gap_abs(1e-11)
        .tol_gap_rel(1e-11)
        .tol_feas(1e-11)
        .max_iter(400)
        .build()
        .expect("valid settings");
    let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings).expect("well-formed problem");
    solver.solve();
    let status = solver.solution.status;
    if !matches!(status, SolverStatus::Solved | SolverStatus::AlmostSolved) {
        return Err(status);
    }
    let omega = unpack(&solver.solution.x, n);
    let distance = (&omega - target).norm();
    Ok(ConicSolution {
        omega,
        mu: solver.solution.x[mu],
        distance,
    })
}

/// Frobenius projection of `m` onto {X : μI ⪯ X ⪯ κμI, μ ≥ 0}.
pub fn cone_projection(m: &DMatrix<f64>, kappa: f64) -> ConicSolution {
    solve(m, kappa, false).unwrap_or_else(|status| panic!("reference solver failed: {status:?}"))
}

/// Frobenius projection of h(s) onto the intersection of the bordered
/// pattern set and the condition-bounded cone, for an N×N matrix `s`.
pub fn bordered_projection(s: &DMatrix<f64>, kappa: f64) -> ConicSolution {
    try_bordered_projection(s, kappa).unwrap_or_else(|status| panic!("reference solver failed: {status:?}"))
}

/// As [`bordered_projection`], reporting the solver status instead of
/// panicking when no solution is found (e.g. an infeasible κ).
pub fn try_bordered_projection(s: &DMatrix<f64>, kappa: f64) -> Result<ConicSolution, SolverStatus> {
    solve(&bordered(s), kappa, true)
}

/// h(s) = [[1, diag(s)'], [diag(s), s]].
pub fn bordered(s: &DMatrix<f64>) -> DMatrix<f64> {
    let n = s.nrows();
    DMatrix::from_fn(n + 1, n + 1, |i, j| match (i, j) {
        (0, 0) => 1.0,
        (0, j) => s[(j - 1, j - 1)],
        (i, 0) => s[(i - 1, i - 1)],
        (i, j) => s[(i - 1, j - 1)],
    })
}

/// Projection onto {X : ⟨A_k, X⟩ = b_k} via vec(M) + A'(AA')⁻¹(b − A vec M)
/// with A_1 = e_1e_1', b_1 = 1 and A_j = e_je_j' − ½(e_1e_j' + e_je_1'), b_j = 0.
pub fn affine_projection(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let mut a = DMatrix::zeros(n, n * n);
    let at = |i: usize, j: usize| j * n + i;
    a[(0, at(0, 0))] = 1.0;
    for j in 1..n {
        a[(j, at(j, j))] = 1.0;
        a[(j, at(0, j))] = -0.5;
        a[(j, at(j, 0))] = -0.5;
    }
    let mut b = DVector::zeros(n);
    b[0] = 1.0;
    let vm = DVector::from_column_slice(m.as_slice());
    let gram = &a * a.transpose();
    let rhs = b - &a * &vm;
    let y = gram.lu().solve(&rhs).expect("constraints are independent");
    let out = vm + a.transpose() * y;
    DMatrix::from_column_slice(n, n, out.as_slice())
}

/// π(μ) = Σ (μ − l)₊² + (l − κμ)₊².
pub fn pi(l: &[f64], kappa: f64, mu: f64) -> f64 {
    l.iter()
        .map(|&li| (mu - li).max(0.0).powi(2) + (li - kappa * mu).max(0.0).powi(2))
        .sum()
}

/// Minimizers of π over the grid {0, step, 2·step, …} up to max(l). Returns
/// the first and last grid points attaining the minimum. π is convex, so its
/// forward differences are nondecreasing along the grid and both ends can be
/// located by bisection instead of a full sweep.
pub fn pi_grid_scan(l: &[f64], kappa: f64, step: f64) -> (f64, f64) {
    let top = l.iter().cloned().fold(0.0f64, f64::max);
    let last = (top / step).ceil() as usize + 1;
    let at = |i: usize| pi(l, kappa, i as f64 * step);
    let diff = |i: usize| at(i + 1) - at(i);
    // first index with diff(i) >= 0
    let first = {
        let (mut lo, mut hi) = (0usize, last);
        while lo < hi {
            let mid = (lo + hi) / 2;
            if diff(mid) >= 0.0 {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        lo
    };
    // first index with diff(i) > 0, i.e. the end of any flat stretch
    let end = {
        let (mut lo, mut hi) = (first, last);
        while lo < hi {
            let mid = (lo + hi) / 2;
            if diff(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        lo
    };
    (first as f64 * step, end as f64 * step)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cone_projection_of_diagonal() {
        let sol = cone_projection(&DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0])), 2.0);
        assert!((sol.omega[(0, 0)] - 3.6).abs() < 1e-6);
        assert!((sol.omega[(1, 1)] - 1.8).abs() < 1e-6);
        assert!((sol.mu - 1.8).abs() < 1e-6);
    }

    #[test]
    fn affine_formula_hand_case() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 0.2]);
        let p = affine_projection(&m);
        let want = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 0.4]);
        assert!((p - want).amax() < 1e-12);
    }

    #[test]
    fn grid_scan_hand_cases() {
        let (a, b) = pi_grid_scan(&[4.0, 1.0], 2.0, 1e-6);
        assert!((a - 1.8).abs() <= 1e-6 && (b - 1.8).abs() <= 1e-6);
        let (a, b) = pi_grid_scan(&[2.0, 1.0], 3.0, 1e-6);
        assert!((a - 2.0 / 3.0).abs() <= 1e-6 && (b - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn bordered_feasible_input_is_fixed() {
        let s = DMatrix::from_row_slice(2, 2, &[0.5, 0.25, 0.25, 0.5]);
        let sol = bordered_projection(&s, 100.0);
        assert!(sol.distance < 1e-6);
    }

    #[test]
    fn infeasible_bound_is_reported() {
        let s = DMatrix::from_element(1, 1, 0.5);
        assert!(try_bordered_projection(&s, 3.0).is_err());
    }
}
