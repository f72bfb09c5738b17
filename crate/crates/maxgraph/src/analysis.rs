//! Numerical certification of the structural properties of solved states:
//! volume and its first two variations, maximality and uniqueness probes,
//! gradient/ellipticity bounds, and the Gauss-equation Ricci check.
//!
//! Everything here is read-only on the solved state. The volume, the
//! solver residual, and the Jacobi operator all come from one discrete
//! functional, so criticality and second-variation identities hold to
//! solver precision rather than discretization order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::boundary::{extend_to_interior, BoundaryData};
use crate::element;
use crate::error::{Error, Result};
use crate::grid::{self, GraphField, GridKind, StructuredGrid};
use crate::linalg;
use crate::lorentz;
use crate::solver::{self, SolveState, SolverConfig};

/// An interior perturbation: a vector field vanishing identically on the
/// boundary nodes.
#[derive(Debug, Clone)]
pub struct PerturbationField {
    pub m: usize,
    /// flat [node * m + component], exactly zero at boundary nodes
    pub w: Vec<f64>,
}

impl PerturbationField {
    pub fn new(grid: &StructuredGrid, m: usize, mut w: Vec<f64>) -> Result<Self> {
        if w.len() != grid.n_nodes * m {
            return Err(Error::DimensionMismatch {
                expected: grid.n_nodes * m,
                got: w.len(),
                context: "perturbation length",
            });
        }
        for node in grid.boundary_nodes().collect::<Vec<_>>() {
            for t in 0..m {
                w[node * m + t] = 0.0;
            }
        }
        Ok(PerturbationField { m, w })
    }

    pub fn sup_norm(&self) -> f64 {
        self.w.iter().fold(0.0f64, |a, b| a.max(b.abs()))
    }

    pub fn scaled(&self, s: f64) -> PerturbationField {
        PerturbationField {
            m: self.m,
            w: self.w.iter().map(|v| s * v).collect(),
        }
    }
}

fn shifted(u: &GraphField, w: &PerturbationField, s: f64) -> GraphField {
    let mut out = u.clone();
    for (v, dw) in out.values.iter_mut().zip(&w.w) {
        *v += s * dw;
    }
    out
}

/// Discrete volume of the graph.
pub fn volume(u: &GraphField) -> Result<f64> {
    element::volume(u)
}

/// First variation of volume in the direction w: the exact directional
/// derivative of the discrete volume, so it vanishes to solver tolerance
/// at solved states.
pub fn first_variation(u: &GraphField, w: &PerturbationField) -> Result<f64> {
    let grad = element::volume_gradient(u)?;
    Ok(grad.iter().zip(&w.w).map(|(g, v)| g * v).sum())
}

/// Second variation <L w, w>: the exact second directional derivative of
/// the discrete volume; negative for nonzero w at solved states.
pub fn second_variation(u: &GraphField, w: &PerturbationField) -> Result<f64> {
    let jac = solver::assemble_jacobi(u)?;
    let grid = &u.grid;
    let m = u.m;
    let mut wi = vec![0.0; grid.n_interior() * m];
    for (rank, &node) in grid.interior_nodes.iter().enumerate() {
        for t in 0..m {
            wi[rank * m + t] = w.w[node * m + t];
        }
    }
    let hw = jac.hessian.matvec(&wi);
    Ok(linalg::dot(&wi, &hw))
}

/// Random low-frequency perturbation: trigonometric modes under a
/// boundary-vanishing bump, so variational sign checks are not polluted
/// by grid-frequency noise.
pub fn random_perturbation(
    grid: &StructuredGrid,
    m: usize,
    rng: &mut ChaCha8Rng,
) -> PerturbationField {
    let mut w = vec![0.0; grid.n_nodes * m];
    match &grid.kind {
        GridKind::Box { bounds, .. } => {
            // coefficients for modes sin(k pi xi) per axis, k in {1, 2}
            let n = grid.dim;
            let mut coefs = Vec::new();
            for _ in 0..m {
                let modes = 1usize << n; // k-choices per axis
                let c: Vec<f64> = (0..modes).map(|_| rng.gen_range(-1.0..1.0)).collect();
                coefs.push(c);
            }
            for node in 0..grid.n_nodes {
                let x = grid.coords(node);
                for (t, c) in coefs.iter().enumerate() {
                    let mut val = 0.0;
                    for (mode, ck) in c.iter().enumerate() {
                        let mut prod = *ck;
                        for k in 0..n {
                            let xi = (x[k] - bounds[k][0]) / (bounds[k][1] - bounds[k][0]);
                            let kk = 1 + ((mode >> k) & 1);
                            prod *= (kk as f64 * std::f64::consts::PI * xi).sin();
                        }
                        val += prod;
                    }
                    w[node * m + t] = val;
                }
            }
        }
        GridKind::Polar { r0, r1, disk, .. } => {
            let per_comp: Vec<Vec<(usize, f64, f64)>> = (0..m)
                .map(|_| {
                    (0..3)
                        .map(|k| {
                            (
                                k,
                                rng.gen_range(-1.0..1.0),
                                rng.gen_range(0.0..std::f64::consts::TAU),
                            )
                        })
                        .collect()
                })
                .collect();
            for node in 0..grid.n_nodes {
                let x = grid.coords(node);
                let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
                let theta = x[1].atan2(x[0]);
                let bump = if *disk {
                    1.0 - (r / r1) * (r / r1)
                } else {
                    (std::f64::consts::PI * (r - r0) / (r1 - r0)).sin()
                };
                for (t, comp) in per_comp.iter().enumerate() {
                    let mut val = 0.0;
                    for &(k, a, phase) in comp {
                        val += a * (k as f64 * theta + phase).cos();
                    }
                    w[node * m + t] = bump * val;
                }
            }
        }
    }
    PerturbationField::new(grid, m, w).expect("sized by construction")
}

/// Outcome of the volume maximality probe.
#[derive(Debug, Clone, Serialize)]
pub struct MaximalityReport {
    pub trials: usize,
    pub skipped: usize,
    pub violations: usize,
    /// max over trials of volume(u + w) - volume(u); negative when
    /// every perturbation strictly decreased volume
    pub max_violation: f64,
}

/// Try `trials` random spacelike zero-boundary perturbations; each must
/// not increase the discrete volume beyond 1e-12 slack. Perturbations are
/// halved until the perturbed field keeps half the margin of the state;
/// trials that cannot be scaled are skipped and counted.
pub fn volume_maximality_probe(
    u: &GraphField,
    trials: usize,
    seed: u64,
) -> Result<MaximalityReport> {
    let base_volume = volume(u)?;
    let (margin0, _) = element::min_margin(u);
    if margin0 <= 0.0 {
        return Err(Error::NonSpacelike {
            node: 0,
            margin: margin0,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = MaximalityReport {
        trials,
        skipped: 0,
        violations: 0,
        max_violation: f64::NEG_INFINITY,
    };
    for _ in 0..trials {
        let mut w = random_perturbation(&u.grid, u.m, &mut rng);
        let sup = w.sup_norm();
        if sup == 0.0 {
            report.skipped += 1;
            continue;
        }
        // normalize to a size comparable with the state, then halve the
        // scale until half the margin survives
        w = w.scaled(0.3 * (1.0 + margin0) / sup);
        let mut scale_ok = false;
        for _ in 0..40 {
            let probe = shifted(u, &w, 1.0);
            let (mw, _) = element::min_margin(&probe);
            if mw >= 0.5 * margin0 {
                scale_ok = true;
                break;
            }
            w = w.scaled(0.5);
        }
        if !scale_ok {
            report.skipped += 1;
            continue;
        }
        let vol = volume(&shifted(u, &w, 1.0))?;
        let delta = vol - base_volume;
        report.max_violation = report.max_violation.max(delta);
        if delta > 1e-12 {
            report.violations += 1;
        }
    }
    Ok(report)
}

/// Outcome of the multi-route uniqueness probe.
#[derive(Debug, Clone, Serialize)]
pub struct UniquenessReport {
    pub routes: Vec<String>,
    /// pairwise sup-norm differences, upper-triangle order
    pub pairwise_sup: Vec<f64>,
    pub max_pairwise_sup: f64,
}

/// Solve the same Dirichlet problem along distinct routes (two homotopy
/// schedules and a direct Newton run from the harmonic extension) and
/// report pairwise sup-norm differences; agreement is the empirical
/// certificate of uniqueness.
pub fn uniqueness_probe(boundary: &BoundaryData, cfg: &SolverConfig) -> Result<UniquenessReport> {
    let mut fields: Vec<(String, GraphField)> = Vec::new();
    let (state_a, _) = solver::continuity_solve(boundary, cfg)?;
    fields.push((
        format!("homotopy_{}_steps", cfg.homotopy_steps_init),
        state_a.u,
    ));

    let mut cfg_b = cfg.clone();
    cfg_b.homotopy_steps_init = cfg.homotopy_steps_init * 3 + 1;
    let (state_b, _) = solver::continuity_solve(boundary, &cfg_b)?;
    fields.push((
        format!("homotopy_{}_steps", cfg_b.homotopy_steps_init),
        state_b.u,
    ));

    let ext = extend_to_interior(boundary)?;
    let direct = solver::newton_solve(&ext, boundary, cfg)?;
    fields.push(("newton_from_harmonic_extension".into(), direct.u));

    let mut pairwise = Vec::new();
    let mut max_pairwise = 0.0f64;
    for i in 0..fields.len() {
        for j in i + 1..fields.len() {
            let d = fields[i].1.sup_diff(&fields[j].1);
            pairwise.push(d);
            max_pairwise = max_pairwise.max(d);
        }
    }
    Ok(UniquenessReport {
        routes: fields.into_iter().map(|(n, _)| n).collect(),
        pairwise_sup: pairwise,
        max_pairwise_sup: max_pairwise,
    })
}

/// Flat diagnostics record serialized by the CLI.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct DiagnosticsReport {
    pub volume: f64,
    pub residual_inf: f64,
    /// worst operator norm of Du over all nodes
    pub sigma_max_Du: f64,
    /// boundary gradient margin: 1 - sigma_max(Du) over boundary nodes
    pub mu: f64,
    pub sum_gii_max: f64,
    /// n / (mu (2 - mu))
    pub ellipticity_bound: f64,
    pub interior_energy_max: f64,
    pub boundary_energy_max: f64,
    pub ricci_min_eig: f64,
    pub second_variation_max_rayleigh: f64,
}

/// Gradient bound, uniform ellipticity, and maximum-principle diagnostics
/// at a solved state, completed with the Ricci floor and the worst
/// Rayleigh quotient over random probes.
pub fn gradient_ellipticity_report(
    u: &GraphField,
    trials: usize,
    seed: u64,
) -> Result<DiagnosticsReport> {
    let grid = &u.grid;
    let n = grid.dim;
    let m = u.m;
    let mut sigma_all = 0.0f64;
    let mut sigma_boundary = 0.0f64;
    let mut sum_gii_max = 0.0f64;
    let mut interior_energy_max = f64::NEG_INFINITY;
    let mut boundary_energy_max = f64::NEG_INFINITY;
    for node in 0..grid.n_nodes {
        let j = grid::gradient_at(u, node);
        let metric = lorentz::induced_metric(&j);
        if !metric.is_spacelike() {
            return Err(Error::NonSpacelike {
                node,
                margin: metric.min_eig,
            });
        }
        let sigma = j.sigma_max();
        sigma_all = sigma_all.max(sigma);
        let ginv = metric.g_inv.as_ref().unwrap();
        let mut gii = 0.0;
        for i in 0..n {
            gii += ginv[(i, i)];
        }
        sum_gii_max = sum_gii_max.max(gii);
        // graph energy sum_ij g^{ij} d_i u . d_j u = sum_i g^{ii} - n
        let mut energy = 0.0;
        for i in 0..n {
            for k in 0..n {
                let mut dd = 0.0;
                for t in 0..m {
                    dd += j.j[(i, t)] * j.j[(k, t)];
                }
                energy += ginv[(i, k)] * dd;
            }
        }
        if grid.is_boundary[node] {
            sigma_boundary = sigma_boundary.max(sigma);
            boundary_energy_max = boundary_energy_max.max(energy);
        } else {
            interior_energy_max = interior_energy_max.max(energy);
        }
    }
    let mu = 1.0 - sigma_boundary;
    let residual = solver::residual_div(u)?;
    let residual_inf = residual.iter().fold(0.0f64, |a, b| a.max(b.abs()));

    // worst Rayleigh quotient over random interior probes
    let jac = solver::assemble_jacobi(u)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_rayleigh = f64::NEG_INFINITY;
    for _ in 0..trials.max(1) {
        let w = random_perturbation(grid, m, &mut rng);
        let mut wi = vec![0.0; grid.n_interior() * m];
        for (rank, &node) in grid.interior_nodes.iter().enumerate() {
            for t in 0..m {
                wi[rank * m + t] = w.w[node * m + t];
            }
        }
        if wi.iter().all(|v| *v == 0.0) {
            continue;
        }
        max_rayleigh = max_rayleigh.max(jac.rayleigh(&wi));
    }

    Ok(DiagnosticsReport {
        volume: volume(u)?,
        residual_inf,
        sigma_max_Du: sigma_all,
        mu,
        sum_gii_max,
        ellipticity_bound: n as f64 / (mu * (2.0 - mu)),
        interior_energy_max,
        boundary_energy_max,
        ricci_min_eig: ricci_check(u, f64::INFINITY)?,
        second_variation_max_rayleigh: max_rayleigh,
    })
}

/// Minimum Ricci eigenvalue over sampled interior nodes, via the Gauss
/// equation: the second fundamental form is read off discrete Hessians
/// projected to the normal bundle, and
/// Ric(X, Y) = -sum_j <A(X, e_j), A(Y, e_j)> in an orthonormal tangent
/// frame (the mean-curvature term is dropped: the state is maximal to
/// solver tolerance). Requires residual_inf <= max_residual.
pub fn ricci_check(u: &GraphField, max_residual: f64) -> Result<f64> {
    let grid = &u.grid;
    let n = grid.dim;
    let m = u.m;
    if max_residual.is_finite() {
        let res = solver::residual_div(u)?;
        let res_inf = res.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        if res_inf > max_residual {
            return Err(Error::invalid(format!(
                "ricci_check needs an approximately maximal state: residual {res_inf:.3e} > {max_residual:.3e}"
            )));
        }
    }
    // deterministic sample of interior nodes with full Hessian stencils
    let candidates: Vec<usize> = grid
        .interior_nodes
        .iter()
        .copied()
        .filter(|&node| grid::hessian_at(u, node).is_some())
        .collect();
    let stride = (candidates.len() / 2048).max(1);
    let mut min_eig = f64::INFINITY;
    for &node in candidates.iter().step_by(stride) {
        let jm = grid::gradient_at(u, node);
        let metric = lorentz::induced_metric(&jm);
        if !metric.is_spacelike() {
            return Err(Error::NonSpacelike {
                node,
                margin: metric.min_eig,
            });
        }
        let frame = linalg::sym_inv_sqrt(&metric.g).ok_or(Error::NonSpacelike {
            node,
            margin: metric.min_eig,
        })?;
        let hess = grid::hessian_at(u, node).expect("filtered");
        let j = &jm.j;

        // ambient Hessian vectors W_ik have zero spatial part and temporal
        // part (d_i d_k u^1 .. d_i d_k u^m); tangential coefficients against
        // the orthonormal frame e_a = sum_l frame[l][a] (e_l, J_l) are
        // <W, e_a> = -sum_l frame[l][a] (W . J_l)
        let coef = |wvec: &[f64], a: usize| -> f64 {
            let mut s = 0.0;
            for l in 0..n {
                let mut dot = 0.0;
                for t in 0..m {
                    dot += wvec[t] * j[(l, t)];
                }
                s -= frame[(l, a)] * dot;
            }
            s
        };
        // normal projections of W_ik, stored as (spatial, temporal) parts
        let mut a_perp_x = vec![0.0; n * n * n];
        let mut a_perp_y = vec![0.0; n * n * m];
        let mut wvec = vec![0.0; m];
        for i in 0..n {
            for k in 0..n {
                for t in 0..m {
                    wvec[t] = hess[t][(i, k)];
                }
                // subtract the tangential part sum_a coef_a e_a
                let mut cx = vec![0.0; n];
                let mut cy = vec![0.0; m];
                for a in 0..n {
                    let c = coef(&wvec, a);
                    for l in 0..n {
                        cx[l] += c * frame[(l, a)];
                    }
                    for t in 0..m {
                        let mut jt = 0.0;
                        for l in 0..n {
                            jt += frame[(l, a)] * j[(l, t)];
                        }
                        cy[t] += c * jt;
                    }
                }
                for l in 0..n {
                    a_perp_x[(i * n + k) * n + l] = -cx[l];
                }
                for t in 0..m {
                    a_perp_y[(i * n + k) * m + t] = wvec[t] - cy[t];
                }
            }
        }
        // transform to the orthonormal frame:
        // A_hat(a,b) = sum_ik F_ia F_kb A_perp(i,k)
        let mut ahat_x = vec![0.0; n * n * n];
        let mut ahat_y = vec![0.0; n * n * m];
        for a in 0..n {
            for b in 0..n {
                for i in 0..n {
                    for k in 0..n {
                        let f = frame[(i, a)] * frame[(k, b)];
                        for l in 0..n {
                            ahat_x[(a * n + b) * n + l] += f * a_perp_x[(i * n + k) * n + l];
                        }
                        for t in 0..m {
                            ahat_y[(a * n + b) * m + t] += f * a_perp_y[(i * n + k) * m + t];
                        }
                    }
                }
            }
        }
        // Ric(a,b) = -sum_c <A(a,c), A(b,c)>
        let mut ric = linalg::DMat::zeros(n, n);
        for a in 0..n {
            for b in 0..n {
                let mut s = 0.0;
                for c in 0..n {
                    let mut inner = 0.0;
                    for l in 0..n {
                        inner += ahat_x[(a * n + c) * n + l] * ahat_x[(b * n + c) * n + l];
                    }
                    for t in 0..m {
                        inner -= ahat_y[(a * n + c) * m + t] * ahat_y[(b * n + c) * m + t];
                    }
                    s -= inner;
                }
                ric[(a, b)] = s;
            }
        }
        min_eig = min_eig.min(linalg::sym_min_eig(&ric));
    }
    Ok(min_eig)
}

/// Sup norm of a flat vector, shared by probe assertions.
pub fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, b| a.max(b.abs()))
}

/// A solved state bundled with its boundary data for the probe runner.
pub struct SolvedCase {
    pub state: SolveState,
    pub boundary: BoundaryData,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, DomainSpec};
    use std::sync::Arc;

    fn unit_box(counts: &[usize]) -> Arc<StructuredGrid> {
        let bounds = vec![[0.0, 1.0]; counts.len()];
        Arc::new(
            build_grid(&DomainSpec::CartesianBox {
                bounds,
                counts: counts.to_vec(),
            })
            .unwrap(),
        )
    }

    #[test]
    fn volume_examples() {
        let g = unit_box(&[9, 9]);
        let zero = GraphField::zeros(g, 2);
        assert!((volume(&zero).unwrap() - 1.0).abs() < 1e-14);

        // 1d interval, u = 0.6 x: volume = sqrt(1 - 0.36) = 0.8
        let g1 = unit_box(&[33]);
        let f = GraphField::from_fn(g1, 1, |x| vec![0.6 * x[0]]);
        assert!((volume(&f).unwrap() - 0.8).abs() < 1e-13);
    }

    #[test]
    fn volume_bounded_by_domain_measure() {
        let g = unit_box(&[9, 9]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut tested = 0;
        while tested < 10 {
            let mut w = random_perturbation(&g, 2, &mut rng).scaled(0.1);
            let mut f = GraphField {
                grid: g.clone(),
                m: 2,
                values: w.w.clone(),
            };
            // halve until the random field is spacelike
            while element::min_margin(&f).0 <= 0.0 {
                w = w.scaled(0.5);
                f.values.copy_from_slice(&w.w);
            }
            let v = volume(&f).unwrap();
            assert!(v <= 1.0 + 1e-15);
            if w.sup_norm() > 1e-8 {
                assert!(v < 1.0);
                tested += 1;
            }
        }
    }

    #[test]
    fn first_variation_zero_at_flat_state_and_matches_fd() {
        let g = unit_box(&[9, 9]);
        let zero = GraphField::zeros(g.clone(), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = random_perturbation(&g, 1, &mut rng).scaled(0.1);
        assert_eq!(first_variation(&zero, &w).unwrap(), 0.0);

        // bent state: directional derivative against central differences
        let u = GraphField::from_fn(g.clone(), 1, |x| {
            vec![0.25 * (2.0 * x[0]).sin() * (1.5 * x[1]).cos()]
        });
        let fv = first_variation(&u, &w).unwrap();
        let eps = 1e-5;
        let fd = (volume(&shifted(&u, &w, eps)).unwrap()
            - volume(&shifted(&u, &w, -eps)).unwrap())
            / (2.0 * eps);
        assert!(
            (fv - fd).abs() <= 1e-7 * fv.abs().max(fd.abs()).max(1e-3),
            "analytic {fv} vs fd {fd}"
        );
    }

    #[test]
    fn second_variation_matches_fd_and_zero_probe() {
        let g = unit_box(&[9, 9]);
        let u = GraphField::from_fn(g.clone(), 2, |x| {
            vec![0.2 * (x[0] * 2.0).sin() * x[1], 0.1 * x[0] + 0.15 * x[1]]
        });
        let zero_w = PerturbationField::new(&g, 2, vec![0.0; g.n_nodes * 2]).unwrap();
        assert_eq!(second_variation(&u, &zero_w).unwrap(), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = random_perturbation(&g, 2, &mut rng).scaled(0.15);
        let sv = second_variation(&u, &w).unwrap();
        let eps = 1e-4;
        let fd = (volume(&shifted(&u, &w, eps)).unwrap() - 2.0 * volume(&u).unwrap()
            + volume(&shifted(&u, &w, -eps)).unwrap())
            / (eps * eps);
        assert!(
            (sv - fd).abs() <= 1e-5 * sv.abs().max(fd.abs()),
            "analytic {sv} vs fd {fd}"
        );
        assert!(sv < 0.0);
    }

    #[test]
    fn maximality_probe_accepts_affine_state() {
        let g = unit_box(&[9, 9]);
        let u = GraphField::from_fn(g, 2, |x| vec![0.4 * x[0], 0.3 * x[1]]);
        let rep = volume_maximality_probe(&u, 25, 42).unwrap();
        assert_eq!(rep.violations, 0, "max violation {}", rep.max_violation);
        assert!(rep.max_violation <= 1e-12);
        assert!(rep.skipped < rep.trials);
    }

    #[test]
    fn maximality_probe_strict_decrease_at_zero_state() {
        let g = unit_box(&[9, 9]);
        let u = GraphField::zeros(g, 1);
        let rep = volume_maximality_probe(&u, 10, 3).unwrap();
        assert_eq!(rep.violations, 0);
        assert!(
            rep.max_violation < 0.0,
            "perturbations must strictly decrease volume"
        );
    }

    #[test]
    fn uniqueness_probe_affine_routes_agree() {
        let g = unit_box(&[9, 9]);
        let data = BoundaryData::from_fn(
            g,
            2,
            Arc::new(|x| vec![0.35 * x[0] + 0.1 * x[1], -0.2 * x[0] + 0.25 * x[1]]),
        )
        .unwrap();
        let rep = uniqueness_probe(&data, &SolverConfig::default()).unwrap();
        assert_eq!(rep.routes.len(), 3);
        assert!(
            rep.max_pairwise_sup < 1e-11,
            "affine routes differ by {}",
            rep.max_pairwise_sup
        );
    }

    #[test]
    fn ellipticity_hand_example() {
        // n = 1, m = 1, u = 0.6 x: sum g^ii = 1/0.64, mu = 0.4 and the
        // bound n/(mu(2-mu)) = 1.5625 holds with equality
        let g = unit_box(&[17]);
        let u = GraphField::from_fn(g, 1, |x| vec![0.6 * x[0]]);
        let rep = gradient_ellipticity_report(&u, 8, 11).unwrap();
        assert!((rep.sigma_max_Du - 0.6).abs() < 1e-12);
        assert!((rep.mu - 0.4).abs() < 1e-12);
        assert!((rep.sum_gii_max - 1.5625).abs() < 1e-10);
        assert!((rep.ellipticity_bound - 1.5625).abs() < 1e-10);
        assert!(rep.sum_gii_max <= rep.ellipticity_bound + 1e-8);
        assert!((rep.interior_energy_max - rep.boundary_energy_max).abs() < 1e-10);
        assert!(rep.second_variation_max_rayleigh < 0.0);
    }

    #[test]
    fn flat_state_report_attains_trivial_bound() {
        let g = unit_box(&[9, 9]);
        let u = GraphField::zeros(g, 1);
        let rep = gradient_ellipticity_report(&u, 4, 1).unwrap();
        assert_eq!(rep.sigma_max_Du, 0.0);
        assert_eq!(rep.mu, 1.0);
        assert!((rep.sum_gii_max - 2.0).abs() < 1e-13);
        assert!((rep.ellipticity_bound - 2.0).abs() < 1e-13);
        assert_eq!(rep.ricci_min_eig, 0.0);
    }

    #[test]
    fn ricci_vanishes_on_affine_graphs() {
        let g = unit_box(&[9, 9]);
        let u = GraphField::from_fn(g, 2, |x| vec![0.3 * x[0] + 0.2 * x[1], 0.1 * x[1]]);
        let r = ricci_check(&u, f64::INFINITY).unwrap();
        assert!(r.abs() < 1e-11, "affine ricci {r}");
    }

    #[test]
    fn ricci_rejects_unconverged_states() {
        let g = unit_box(&[9, 9]);
        let u = GraphField::from_fn(g, 1, |x| {
            vec![0.4 * (3.0 * x[0]).sin() * (2.0 * x[1]).cos()]
        });
        assert!(ricci_check(&u, 1e-10).is_err());
    }
}
