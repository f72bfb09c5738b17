//! Dirichlet solver for the maximal graph system in divergence form:
//! damped Newton steps on the exact gradient of the discrete volume,
//! driven from the trivial solution to the target boundary data by a
//! homotopy in the boundary scale.
//!
//! The linearization is the discrete Jacobi operator: the Hessian of the
//! discrete volume, symmetric by construction and negative definite at
//! accepted states, so each Newton correction is a conjugate-gradient
//! solve on its negation. Step damping watches the spacelike margin, not
//! just the residual: the hard failure mode of this system is tangent
//! planes drifting toward null directions, and the margin floor is what
//! rules it out.

use serde::{Deserialize, Serialize};

use crate::boundary::{acausality_margin, extend_to_interior, BoundaryData};
use crate::element::{self, Coeff};
use crate::error::{Error, Result};
use crate::grid::{self, GraphField};
use crate::linalg::{self, CsrMatrix};
use crate::lorentz;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum JacobianMode {
    #[default]
    Analytic,
    FiniteDifferenceCheck,
}

/// Solver knobs. Defaults are sized for grids up to 129^2 in double
/// precision.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// residual infinity-norm target
    pub newton_tol: f64,
    pub max_newton_iters: usize,
    pub homotopy_steps_init: usize,
    pub step_halving_limit: usize,
    /// accepted steps must keep min margin >= this fraction of the
    /// margin at the Newton start point
    pub spacelike_slack_delta: f64,
    /// relative tolerance of the inner conjugate-gradient solves
    pub linear_tol: f64,
    pub jacobian_mode: JacobianMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            newton_tol: 1e-10,
            max_newton_iters: 50,
            homotopy_steps_init: 10,
            step_halving_limit: 8,
            spacelike_slack_delta: 0.05,
            linear_tol: 1e-12,
            jacobian_mode: JacobianMode::Analytic,
        }
    }
}

/// Accepted solver state.
#[derive(Debug, Clone)]
pub struct SolveState {
    /// homotopy parameter in [0, 1]
    pub t: f64,
    pub u: GraphField,
    pub residual_inf: f64,
    /// worst spacelike margin over quadrature points
    pub min_margin: f64,
    pub newton_iters_used: usize,
}

/// One homotopy step, emitted as a JSON line by the CLI.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProgressRecord {
    pub t: f64,
    pub residual_inf: f64,
    pub min_margin: f64,
    pub iters: usize,
}

/// Divergence-form residual: the pointwise gradient of the discrete
/// volume over the lumped node volumes. Interior entries approximate
/// div(g^{-1} sqrt(det g) grad u); boundary rows are pinned to zero.
pub fn residual_div(u: &GraphField) -> Result<Vec<f64>> {
    let mut r = element::flux_divergence(u, &Coeff::MetricVolume)?;
    for node in u.grid.boundary_nodes().collect::<Vec<_>>() {
        for t in 0..u.m {
            r[node * u.m + t] = 0.0;
        }
    }
    Ok(r)
}

/// Non-divergence residual sum_ij g^{ij} d_i d_j u at interior nodes,
/// from node-stencil Hessians. Kept as a cross-check of the solved
/// divergence form, never solved itself. Nodes without a full stencil
/// (the shared disk center) report zero.
pub fn residual_nondiv(u: &GraphField) -> Result<Vec<f64>> {
    let grid = &u.grid;
    let m = u.m;
    let mut out = vec![0.0; grid.n_nodes * m];
    for &node in &grid.interior_nodes {
        let j = grid::gradient_at(u, node);
        let metric = lorentz::induced_metric(&j);
        if !metric.is_spacelike() {
            return Err(Error::NonSpacelike {
                node,
                margin: metric.min_eig,
            });
        }
        let ginv = metric.g_inv.as_ref().unwrap();
        if let Some(hess) = grid::hessian_at(u, node) {
            for t in 0..m {
                let mut s = 0.0;
                for i in 0..grid.dim {
                    for k in 0..grid.dim {
                        s += ginv[(i, k)] * hess[t][(i, k)];
                    }
                }
                out[node * m + t] = s;
            }
        }
    }
    Ok(out)
}

/// Divergence of the coefficient columns sum_i d_i (g^{ij} sqrt(det g)),
/// one value per node per spatial index j. Vanishes identically in the
/// continuum for spacelike graphs; discretely it decays at second order
/// at solved states. Nodes without a full stencil report zero.
pub fn conservation_identity_residual(u: &GraphField) -> Result<Vec<f64>> {
    let grid = &u.grid;
    let n = grid.dim;
    // coefficient tensor at every node
    let mut coeff = vec![0.0; grid.n_nodes * n * n];
    for node in 0..grid.n_nodes {
        let j = grid::gradient_at(u, node);
        let metric = lorentz::induced_metric(&j);
        if !metric.is_spacelike() {
            return Err(Error::NonSpacelike {
                node,
                margin: metric.min_eig,
            });
        }
        let a = metric.det_g.unwrap().sqrt();
        let ginv = metric.g_inv.as_ref().unwrap();
        for i in 0..n {
            for k in 0..n {
                coeff[(node * n + i) * n + k] = a * ginv[(i, k)];
            }
        }
    }
    let mut out = vec![0.0; grid.n_nodes * n];
    let mut column = vec![0.0; grid.n_nodes * n];
    for jcol in 0..n {
        for node in 0..grid.n_nodes {
            for i in 0..n {
                column[node * n + i] = coeff[(node * n + i) * n + jcol];
            }
        }
        for &node in &grid.interior_nodes {
            if let Some(d) = grid::divergence_at(grid, &column, node) {
                out[node * n + jcol] = d;
            }
        }
    }
    Ok(out)
}

/// The discrete Jacobi operator at a state: the Hessian of the discrete
/// volume on interior degrees of freedom, with the lumped volumes that
/// turn it into a pointwise operator and define the inner product.
pub struct JacobiOperator {
    pub hessian: CsrMatrix,
    /// lumped volume per interior dof
    pub dof_volume: Vec<f64>,
    pub m: usize,
}

impl JacobiOperator {
    pub fn ndof(&self) -> usize {
        self.hessian.n
    }

    /// L w = (1/V) H w, the pointwise linearized operator.
    pub fn apply(&self, w: &[f64]) -> Vec<f64> {
        let mut out = self.hessian.matvec(w);
        for (o, v) in out.iter_mut().zip(&self.dof_volume) {
            *o /= v;
        }
        out
    }

    /// Volume-weighted inner product <a, b> = sum V a b, the discrete L2
    /// pairing in which the operator is self-adjoint.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .zip(&self.dof_volume)
            .map(|((x, y), v)| x * y * v)
            .sum()
    }

    /// <L w, w> / <w, w>; negative at accepted states.
    pub fn rayleigh(&self, w: &[f64]) -> f64 {
        let hw = self.hessian.matvec(w);
        linalg::dot(w, &hw) / self.inner(w, w)
    }
}

/// Assemble the Jacobi operator at a spacelike state.
pub fn assemble_jacobi(u: &GraphField) -> Result<JacobiOperator> {
    let hessian = element::volume_hessian(u)?;
    let grid = &u.grid;
    let mut dof_volume = vec![0.0; grid.n_interior() * u.m];
    for (rank, &node) in grid.interior_nodes.iter().enumerate() {
        for t in 0..u.m {
            dof_volume[rank * u.m + t] = grid.node_volume[node];
        }
    }
    Ok(JacobiOperator {
        hessian,
        dof_volume,
        m: u.m,
    })
}

/// Cross-check the analytic Hessian against finite differences of the
/// volume gradient on a sample of columns. Errors when any sampled entry
/// disagrees beyond 1e-6 relative.
fn check_jacobian_fd(u: &GraphField, hessian: &CsrMatrix) -> Result<()> {
    let grid = &u.grid;
    let m = u.m;
    let ndof = grid.n_interior() * m;
    let stride = (ndof / 200).max(1);
    let mut probe = u.clone();
    let eps = 1e-6;
    for dof in (0..ndof).step_by(stride) {
        let rank = dof / m;
        let t = dof % m;
        let node = grid.interior_nodes[rank];
        let old = probe.values[node * m + t];
        probe.values[node * m + t] = old + eps;
        let up = element::volume_gradient(&probe)?;
        probe.values[node * m + t] = old - eps;
        let dn = element::volume_gradient(&probe)?;
        probe.values[node * m + t] = old;
        for (rank2, &node2) in grid.interior_nodes.iter().enumerate() {
            for s in 0..m {
                let fd = (up[node2 * m + s] - dn[node2 * m + s]) / (2.0 * eps);
                let an = hessian.get(rank2 * m + s, dof);
                let scale = 1.0 + an.abs().max(fd.abs());
                if (fd - an).abs() > 1e-6 * scale {
                    return Err(Error::invalid(format!(
                        "jacobian check failed at dof ({rank2},{s}) x ({rank},{t}): analytic {an:.9e} vs fd {fd:.9e}"
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Outcome of a Newton run.
#[derive(Debug)]
pub struct NewtonOutcome {
    pub u: GraphField,
    pub residual_inf: f64,
    pub min_margin: f64,
    pub iters: usize,
}

fn interior_residual_inf(u: &GraphField, vgrad: &[f64]) -> f64 {
    let grid = &u.grid;
    let mut worst = 0.0f64;
    for &node in &grid.interior_nodes {
        let v = grid.node_volume[node];
        for t in 0..u.m {
            worst = worst.max((vgrad[node * u.m + t] / v).abs());
        }
    }
    worst
}

/// Damped Newton iteration on the divergence-form residual at fixed
/// boundary data. The step is halved until the updated field keeps its
/// minimum spacelike margin above `spacelike_slack_delta` times the
/// margin of the starting iterate.
pub fn newton_solve(
    u0: &GraphField,
    boundary: &BoundaryData,
    cfg: &SolverConfig,
) -> Result<NewtonOutcome> {
    let grid = u0.grid.clone();
    let m = u0.m;
    if boundary.m != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: boundary.m,
            context: "boundary component count",
        });
    }
    for node in grid.boundary_nodes().collect::<Vec<_>>() {
        for t in 0..m {
            let diff = (u0.values[node * m + t] - boundary.value(node)[t]).abs();
            if diff > 1e-12 {
                return Err(Error::invalid(format!(
                    "initial iterate does not match the boundary data at node {node} (|diff| = {diff:.3e})"
                )));
            }
        }
    }
    let (margin0, worst_node) = element::min_margin(u0);
    if margin0 <= 0.0 {
        return Err(Error::NonSpacelike {
            node: worst_node,
            margin: margin0,
        });
    }
    let floor = cfg.spacelike_slack_delta * margin0;

    let mut u = u0.clone();
    let mut margin = margin0;
    for iter in 0..=cfg.max_newton_iters {
        let vgrad = element::volume_gradient(&u)?;
        let res_inf = interior_residual_inf(&u, &vgrad);
        if res_inf <= cfg.newton_tol {
            return Ok(NewtonOutcome {
                u,
                residual_inf: res_inf,
                min_margin: margin,
                iters: iter,
            });
        }
        if iter == cfg.max_newton_iters {
            return Err(Error::Nonconvergence {
                last_t: f64::NAN,
                residual_inf: res_inf,
                detail: format!("newton iteration limit {} reached", cfg.max_newton_iters),
            });
        }
        let hessian = element::volume_hessian(&u)?;
        if cfg.jacobian_mode == JacobianMode::FiniteDifferenceCheck && iter == 0 {
            check_jacobian_fd(&u, &hessian)?;
        }
        // solve (-H) delta = grad V on the interior dofs
        let ndof = grid.n_interior() * m;
        let mut rhs = vec![0.0; ndof];
        for (rank, &node) in grid.interior_nodes.iter().enumerate() {
            for t in 0..m {
                rhs[rank * m + t] = vgrad[node * m + t];
            }
        }
        let mut neg = hessian;
        for v in neg.values.iter_mut() {
            *v = -*v;
        }
        let delta = linalg::cg_solve(&neg, &rhs, cfg.linear_tol, 40 * ndof + 400)?;

        // spacelike-margin line search
        let mut alpha = 1.0f64;
        let mut accepted = false;
        for _ in 0..=cfg.step_halving_limit {
            let mut trial = u.clone();
            for (rank, &node) in grid.interior_nodes.iter().enumerate() {
                for t in 0..m {
                    trial.values[node * m + t] += alpha * delta[rank * m + t];
                }
            }
            let (trial_margin, _) = element::min_margin(&trial);
            if trial_margin >= floor {
                u = trial;
                margin = trial_margin;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Err(Error::Nonconvergence {
                last_t: f64::NAN,
                residual_inf: res_inf,
                detail: format!(
                    "step halving limit {} exhausted against the margin floor {floor:.3e}",
                    cfg.step_halving_limit
                ),
            });
        }
    }
    unreachable!()
}

/// Continuity-method solve: walk the boundary scale t from 0 (the trivial
/// solution) to 1, Newton-correcting the previous solution at each step
/// and halving the step on failure. The warm start adds the scaled
/// harmonic extension of the data, then re-pins the boundary rows so the
/// boundary values at parameter t are bit-exactly t * phi.
pub fn continuity_solve(
    boundary: &BoundaryData,
    cfg: &SolverConfig,
) -> Result<(SolveState, Vec<ProgressRecord>)> {
    let grid = boundary.grid.clone();
    let m = boundary.m;
    let mu0 = acausality_margin(boundary);
    if mu0 <= 0.0 {
        return Err(Error::Acausal { mu0 });
    }
    let extension = extend_to_interior(boundary)?;

    let mut u = GraphField::zeros(grid.clone(), m);
    let mut t = 0.0f64;
    let mut dt = 1.0 / cfg.homotopy_steps_init.max(1) as f64;
    let mut halvings = 0usize;
    let mut progress = Vec::new();
    let mut last = SolveState {
        t: 0.0,
        u: u.clone(),
        residual_inf: 0.0,
        min_margin: element::min_margin(&u).0,
        newton_iters_used: 0,
    };

    while t < 1.0 {
        let t_next = (t + dt).min(1.0);
        let scaled = boundary.scaled(t_next);
        // warm start: previous solution plus the step increment of the
        // harmonic extension, boundary rows re-pinned bit-exactly
        let mut trial = u.clone();
        let step = t_next - t;
        for &node in &grid.interior_nodes {
            for c in 0..m {
                trial.values[node * m + c] += step * extension.values[node * m + c];
            }
        }
        for node in grid.boundary_nodes().collect::<Vec<_>>() {
            for c in 0..m {
                trial.values[node * m + c] = scaled.value(node)[c];
            }
        }
        match newton_solve(&trial, &scaled, cfg) {
            Ok(out) => {
                u = out.u.clone();
                t = t_next;
                progress.push(ProgressRecord {
                    t,
                    residual_inf: out.residual_inf,
                    min_margin: out.min_margin,
                    iters: out.iters,
                });
                last = SolveState {
                    t,
                    u: out.u,
                    residual_inf: out.residual_inf,
                    min_margin: out.min_margin,
                    newton_iters_used: out.iters,
                };
            }
            Err(Error::LinearSolve { .. })
            | Err(Error::Nonconvergence { .. })
            | Err(Error::NonSpacelike { .. }) => {
                halvings += 1;
                if halvings > cfg.step_halving_limit {
                    return Err(Error::Nonconvergence {
                        last_t: t,
                        residual_inf: last.residual_inf,
                        detail: format!(
                            "homotopy step halving limit {} exhausted",
                            cfg.step_halving_limit
                        ),
                    });
                }
                dt *= 0.5;
            }
            Err(e) => return Err(e),
        }
    }
    Ok((last, progress))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, DomainSpec};
    use std::sync::Arc;

    fn unit_box(counts: &[usize]) -> Arc<crate::grid::StructuredGrid> {
        let bounds = vec![[0.0, 1.0]; counts.len()];
        Arc::new(
            build_grid(&DomainSpec::CartesianBox {
                bounds,
                counts: counts.to_vec(),
            })
            .unwrap(),
        )
    }

    fn affine_data(
        grid: Arc<crate::grid::StructuredGrid>,
        a: [[f64; 2]; 2],
    ) -> BoundaryData {
        BoundaryData::from_fn(
            grid,
            2,
            Arc::new(move |x| {
                vec![
                    a[0][0] * x[0] + a[0][1] * x[1],
                    a[1][0] * x[0] + a[1][1] * x[1],
                ]
            }),
        )
        .unwrap()
    }

    #[test]
    fn residuals_vanish_on_affine_and_zero_fields() {
        let g = unit_box(&[9, 9]);
        let affine = GraphField::from_fn(g.clone(), 2, |x| {
            vec![0.4 * x[0] - 0.1 * x[1], 0.2 * x[0] + 0.3 * x[1]]
        });
        for r in [
            residual_div(&affine).unwrap(),
            residual_nondiv(&affine).unwrap(),
        ] {
            for v in &r {
                assert!(v.abs() < 1e-12, "residual {v}");
            }
        }
        let cons = conservation_identity_residual(&affine).unwrap();
        for v in &cons {
            assert!(v.abs() < 1e-12, "conservation residual {v}");
        }
        let zero = GraphField::zeros(g, 2);
        for v in residual_div(&zero).unwrap() {
            assert!(v.abs() < 1e-14);
        }
    }

    #[test]
    fn jacobi_operator_is_laplacian_like_at_zero() {
        let g = unit_box(&[7, 7]);
        let zero = GraphField::zeros(g.clone(), 2);
        let jac = assemble_jacobi(&zero).unwrap();
        assert!(jac.hessian.asymmetry() < 1e-15);
        // components decouple at u == 0: entries pairing different
        // components vanish
        let m = 2;
        for rank in 0..g.n_interior() {
            let row = rank * m;
            assert_eq!(jac.hessian.get(row, row + 1), 0.0);
        }
        // rayleigh quotients negative
        let ndof = jac.ndof();
        for seed in 0..5u64 {
            let w: Vec<f64> = (0..ndof)
                .map(|i| (((i as u64 + 1) * (seed + 3) * 2654435761) % 1000) as f64 / 500.0 - 1.0)
                .collect();
            assert!(jac.rayleigh(&w) < 0.0);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences_in_check_mode() {
        let g = unit_box(&[5, 5]);
        let data = affine_data(g.clone(), [[0.3, 0.1], [-0.1, 0.2]]);
        let mut u = extend_to_interior(&data).unwrap();
        // bend the field a little so the check runs away from the trivial state
        for &node in &g.interior_nodes {
            let x = g.coords(node);
            u.values[node * 2] += 0.05 * (3.0 * x[0]).sin() * x[1] * (1.0 - x[1]);
        }
        let cfg = SolverConfig {
            jacobian_mode: JacobianMode::FiniteDifferenceCheck,
            max_newton_iters: 3,
            newton_tol: 1e-30, // force at least one iteration with the check
            ..Default::default()
        };
        // the run may or may not converge in 3 iters; the check must not fail
        match newton_solve(&u, &data, &cfg) {
            Ok(_) => {}
            Err(Error::Nonconvergence { .. }) => {}
            Err(e) => panic!("jacobian check failed: {e}"),
        }
    }

    #[test]
    fn newton_accepts_exact_affine_solution_immediately() {
        let g = unit_box(&[9, 9]);
        let a = [[0.5, 0.1], [0.0, 0.3]];
        let data = affine_data(g.clone(), a);
        let u0 = GraphField::from_fn(g, 2, |x| {
            vec![
                a[0][0] * x[0] + a[0][1] * x[1],
                a[1][0] * x[0] + a[1][1] * x[1],
            ]
        });
        let out = newton_solve(&u0, &data, &SolverConfig::default()).unwrap();
        assert_eq!(out.iters, 0);
        assert!(out.residual_inf < 1e-12);
    }

    #[test]
    fn continuity_solve_affine_is_exact_along_the_path() {
        let g = unit_box(&[9, 9]);
        let a = [[0.5, 0.2], [-0.1, 0.4]];
        let data = affine_data(g.clone(), a);
        let (state, progress) = continuity_solve(&data, &SolverConfig::default()).unwrap();
        assert_eq!(state.t, 1.0);
        // every homotopy step lands exactly on the affine solution, so no
        // Newton corrections are spent anywhere along the path
        for rec in &progress {
            assert_eq!(rec.iters, 0, "homotopy step at t = {} needed corrections", rec.t);
        }
        let exact = GraphField::from_fn(g, 2, |x| {
            vec![
                a[0][0] * x[0] + a[0][1] * x[1],
                a[1][0] * x[0] + a[1][1] * x[1],
            ]
        });
        assert!(state.u.sup_diff(&exact) < 1e-10);
        assert!(state.min_margin > 0.0);
    }

    #[test]
    fn continuity_solve_constant_data_single_step() {
        let g = unit_box(&[7, 7]);
        let data = BoundaryData::from_fn(g.clone(), 1, Arc::new(|_| vec![0.8])).unwrap();
        let cfg = SolverConfig {
            homotopy_steps_init: 1,
            ..Default::default()
        };
        let (state, progress) = continuity_solve(&data, &cfg).unwrap();
        assert_eq!(progress.len(), 1);
        for node in 0..g.n_nodes {
            assert!((state.u.value(node)[0] - 0.8).abs() < 1e-10);
        }
    }

    #[test]
    fn causal_data_is_rejected_with_margin() {
        let g = unit_box(&[7, 7]);
        let data = BoundaryData::from_fn(g, 1, Arc::new(|x| vec![1.2 * x[0]])).unwrap();
        match continuity_solve(&data, &SolverConfig::default()) {
            Err(Error::Acausal { mu0 }) => assert!(mu0 <= 0.0),
            other => panic!("expected acausality rejection, got {other:?}"),
        }
    }

    #[test]
    fn sinusoidal_solve_reaches_tight_residual_with_gradient_bound() {
        let g = unit_box(&[17, 17]);
        let amp = 0.6 / (2.0 * std::f64::consts::PI);
        let data = BoundaryData::from_fn(
            g.clone(),
            2,
            Arc::new(move |x| {
                vec![
                    amp * (2.0 * std::f64::consts::PI * x[0]).sin(),
                    amp * (2.0 * std::f64::consts::PI * x[1]).sin(),
                ]
            }),
        )
        .unwrap();
        let (state, _) = continuity_solve(&data, &SolverConfig::default()).unwrap();
        assert!(state.residual_inf <= 1e-10);
        assert!(state.min_margin > 0.0);
        // a priori gradient bound sigma_max(Du) < 1 at every node
        for node in 0..g.n_nodes {
            let j = grid::gradient_at(&state.u, node);
            assert!(j.sigma_max() < 1.0);
        }
        // non-divergence residual is small at the solved state
        let nd = residual_nondiv(&state.u).unwrap();
        let sup = nd.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        assert!(sup < 0.2, "non-divergence residual {sup}");
    }

    #[test]
    fn annulus_catenoid_profile_close_to_closed_form() {
        let g = Arc::new(
            build_grid(&DomainSpec::PolarAnnulus {
                r0: 1.0,
                r1: 2.0,
                counts: [17, 96],
            })
            .unwrap(),
        );
        let data = BoundaryData::from_fn(
            g.clone(),
            1,
            Arc::new(|x: &[f64]| {
                let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
                vec![r.asinh()]
            }),
        )
        .unwrap();
        let (state, _) = continuity_solve(&data, &SolverConfig::default()).unwrap();
        let mut worst = 0.0f64;
        for node in 0..g.n_nodes {
            let x = g.coords(node);
            let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
            worst = worst.max((state.u.value(node)[0] - r.asinh()).abs());
        }
        assert!(worst < 2e-3, "sup error vs closed form {worst}");
    }
}
