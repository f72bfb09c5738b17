//! Isoparametric multilinear elements with tensor-product two-point Gauss
//! quadrature, and the assembly kernels built on them.
//!
//! The discrete volume functional is
//!
//! ```text
//!   V_h(u) = sum over cells, quad points  w_q * sqrt(det g(J_q)),
//!   g(J) = I - J J^T,  J_q = gradient of the multilinear interpolant
//! ```
//!
//! and the solver residual and Jacobi operator are its exact gradient and
//! Hessian with respect to the interior node values. Deriving all three
//! from one functional is what makes the Jacobi operator symmetric to
//! machine precision and the solved states exact critical points of the
//! same volume the diagnostics integrate. Fields affine in the ambient
//! coordinates are exactly critical on every grid kind: the quadrature
//! integrates the hat-function gradients exactly, so the gradient of V_h
//! telescopes to a boundary integral of compactly supported hats.

use crate::error::{Error, Result};
use crate::grid::{GraphField, StructuredGrid};
use crate::linalg::{self, CsrMatrix, DMat};
use crate::lorentz::GradientMatrix;

/// Coefficient tensor used by the generic divergence operator.
pub enum Coeff<'a> {
    /// identity tensor: plain Laplacian
    Identity,
    /// sqrt(det g) g^{-1} from the field's own gradient (the graph operator)
    MetricVolume,
    /// arbitrary per-quad-point tensor of the position and local gradient
    Custom(&'a dyn Fn(&[f64], &GradientMatrix) -> DMat),
}

/// Reference-cell quadrature data, fixed per dimension.
struct RefQuad {
    corners: usize,
    /// per point: weight on the reference cell
    weights: Vec<f64>,
    /// per point: basis values, flat [point * corners + corner]
    phi: Vec<f64>,
    /// per point: reference gradients, flat [(point * corners + corner) * dim + axis]
    dphi: Vec<f64>,
}

fn ref_quad(dim: usize) -> RefQuad {
    let corners = 1usize << dim;
    let points = corners; // two Gauss points per axis
    let offset = 0.5 / 3.0f64.sqrt();
    let coords = [0.5 - offset, 0.5 + offset];
    let mut weights = vec![0.0; points];
    let mut phi = vec![0.0; points * corners];
    let mut dphi = vec![0.0; points * corners * dim];
    for pt in 0..points {
        let xi: Vec<f64> = (0..dim).map(|k| coords[(pt >> k) & 1]).collect();
        weights[pt] = 0.5f64.powi(dim as i32);
        for c in 0..corners {
            let mut val = 1.0;
            for k in 0..dim {
                let s = if (c >> k) & 1 == 1 { xi[k] } else { 1.0 - xi[k] };
                val *= s;
            }
            phi[pt * corners + c] = val;
            for a in 0..dim {
                let mut d = if (c >> a) & 1 == 1 { 1.0 } else { -1.0 };
                for k in 0..dim {
                    if k == a {
                        continue;
                    }
                    let s = if (c >> k) & 1 == 1 { xi[k] } else { 1.0 - xi[k] };
                    d *= s;
                }
                dphi[(pt * corners + c) * dim + a] = d;
            }
        }
    }
    RefQuad {
        corners,
        weights,
        phi,
        dphi,
    }
}

/// Everything a kernel needs at one quadrature point.
pub struct QuadPoint<'a> {
    /// Gauss weight times the Jacobian determinant of the cell map
    pub weight: f64,
    /// Cartesian position
    pub position: &'a [f64],
    /// basis values per corner
    pub phi: &'a [f64],
    /// Cartesian hat gradients, flat [corner * dim + axis]
    pub grad_phi: &'a [f64],
}

/// Visit every quadrature point of every cell. The callback receives the
/// cell index, its corner node ids, and the point data.
pub fn for_each_quad_point(
    grid: &StructuredGrid,
    mut visit: impl FnMut(usize, &[usize], &QuadPoint),
) {
    let rq = ref_quad(grid.dim);
    let n = grid.dim;
    let corners = rq.corners;
    let mut jac = DMat::zeros(n, n);
    let mut pos = vec![0.0; n];
    let mut grad = vec![0.0; corners * n];
    for cell in 0..grid.n_cells {
        let ids = grid.cell_corners(cell);
        for pt in 0..corners {
            // geometry jacobian d x / d xi
            for v in jac.data.iter_mut() {
                *v = 0.0;
            }
            for a in pos.iter_mut() {
                *a = 0.0;
            }
            for (c, &node) in ids.iter().enumerate() {
                let x = grid.coords(node);
                let p = rq.phi[pt * corners + c];
                let d = &rq.dphi[(pt * corners + c) * n..(pt * corners + c + 1) * n];
                for i in 0..n {
                    pos[i] += p * x[i];
                    for k in 0..n {
                        jac[(i, k)] += x[i] * d[k];
                    }
                }
            }
            let det = linalg::det(&jac);
            debug_assert!(det > 0.0, "cell {cell} has non-positive jacobian {det}");
            let inv = linalg::inverse(&jac).expect("invertible cell map");
            for (c, g) in grad.chunks_mut(n).enumerate() {
                let d = &rq.dphi[(pt * corners + c) * n..(pt * corners + c + 1) * n];
                for i in 0..n {
                    // grad_x phi = Jac^{-T} grad_xi phi
                    let mut s = 0.0;
                    for k in 0..n {
                        s += inv[(k, i)] * d[k];
                    }
                    g[i] = s;
                }
            }
            let qp = QuadPoint {
                weight: rq.weights[pt] * det,
                position: &pos,
                phi: &rq.phi[pt * corners..(pt + 1) * corners],
                grad_phi: &grad,
            };
            visit(cell, ids, &qp);
        }
    }
}

/// Lumped node volumes: the integral of each node's hat function. They sum
/// to the (polygonal) domain volume exactly.
pub fn node_volumes(grid: &StructuredGrid) -> Vec<f64> {
    let mut vol = vec![0.0; grid.n_nodes];
    for_each_quad_point(grid, |_, ids, qp| {
        for (c, &node) in ids.iter().enumerate() {
            vol[node] += qp.weight * qp.phi[c];
        }
    });
    vol
}

/// Gradient of the multilinear interpolant at a quadrature point.
fn local_gradient(field: &GraphField, ids: &[usize], qp: &QuadPoint) -> DMat {
    let n = field.grid.dim;
    let m = field.m;
    let mut j = DMat::zeros(n, m);
    for (c, &node) in ids.iter().enumerate() {
        let u = field.value(node);
        let g = &qp.grad_phi[c * n..(c + 1) * n];
        for i in 0..n {
            for t in 0..m {
                j[(i, t)] += g[i] * u[t];
            }
        }
    }
    j
}

fn gram_of(j: &DMat) -> DMat {
    let n = j.rows;
    let m = j.cols;
    let mut g = DMat::identity(n);
    for i in 0..n {
        for k in 0..n {
            let mut s = 0.0;
            for t in 0..m {
                s += j[(i, t)] * j[(k, t)];
            }
            g[(i, k)] -= s;
        }
    }
    g
}

fn nearest_corner(ids: &[usize], qp: &QuadPoint) -> usize {
    let mut best = ids[0];
    let mut best_phi = qp.phi[0];
    for (c, &node) in ids.iter().enumerate().skip(1) {
        if qp.phi[c] > best_phi {
            best_phi = qp.phi[c];
            best = node;
        }
    }
    best
}

/// Minimum spacelike margin over all quadrature points, with the node
/// nearest the worst point. Never errors: the margin may be negative.
pub fn min_margin(field: &GraphField) -> (f64, usize) {
    let mut worst = f64::INFINITY;
    let mut worst_node = 0;
    for_each_quad_point(&field.grid, |_, ids, qp| {
        let j = local_gradient(field, ids, qp);
        let g = gram_of(&j);
        let me = linalg::sym_min_eig(&g);
        if me < worst {
            worst = me;
            worst_node = nearest_corner(ids, qp);
        }
    });
    (worst, worst_node)
}

/// Discrete volume of the graph: quadrature of sqrt(det g).
pub fn volume(field: &GraphField) -> Result<f64> {
    let mut total = 0.0;
    let mut bad: Option<(usize, f64)> = None;
    for_each_quad_point(&field.grid, |_, ids, qp| {
        if bad.is_some() {
            return;
        }
        let j = local_gradient(field, ids, qp);
        let g = gram_of(&j);
        let me = linalg::sym_min_eig(&g);
        if me <= 0.0 {
            bad = Some((nearest_corner(ids, qp), me));
            return;
        }
        total += qp.weight * linalg::det(&g).sqrt();
    });
    if let Some((node, margin)) = bad {
        return Err(Error::NonSpacelike { node, margin });
    }
    Ok(total)
}

/// Gradient of the discrete volume with respect to every node value,
/// flat [node * m + component]. Zero at affine fields.
pub fn volume_gradient(field: &GraphField) -> Result<Vec<f64>> {
    let n = field.grid.dim;
    let m = field.m;
    let mut grad = vec![0.0; field.grid.n_nodes * m];
    let mut bad: Option<(usize, f64)> = None;
    for_each_quad_point(&field.grid, |_, ids, qp| {
        if bad.is_some() {
            return;
        }
        let j = local_gradient(field, ids, qp);
        let g = gram_of(&j);
        let me = linalg::sym_min_eig(&g);
        if me <= 0.0 {
            bad = Some((nearest_corner(ids, qp), me));
            return;
        }
        let a = linalg::det(&g).sqrt();
        let b = linalg::inverse(&g).expect("spacelike gram is invertible");
        // d sqrt(det g)/dJ = -a * B J
        let p = b.matmul(&j);
        for (c, &node) in ids.iter().enumerate() {
            let gp = &qp.grad_phi[c * n..(c + 1) * n];
            for t in 0..m {
                let mut s = 0.0;
                for i in 0..n {
                    s += p[(i, t)] * gp[i];
                }
                grad[node * m + t] -= qp.weight * a * s;
            }
        }
    });
    if let Some((node, margin)) = bad {
        return Err(Error::NonSpacelike { node, margin });
    }
    Ok(grad)
}

/// Generic divergence of coeff * grad u in the weak form, scaled by the
/// lumped node volumes so the result is a pointwise divergence estimate:
///
/// ```text
///   out[p] = -(1/V_p) sum_q w_q (C_q grad u^t)_i d_i phi_p
/// ```
///
/// Values are produced at every node; interior values approximate the
/// divergence, boundary values hold the complementary flux so that
/// `sum over all nodes V_p * out[p] = 0` exactly (discrete conservation).
pub fn flux_divergence(field: &GraphField, coeff: &Coeff) -> Result<Vec<f64>> {
    let n = field.grid.dim;
    let m = field.m;
    let mut acc = vec![0.0; field.grid.n_nodes * m];
    let mut bad: Option<(usize, f64)> = None;
    for_each_quad_point(&field.grid, |_, ids, qp| {
        if bad.is_some() {
            return;
        }
        let j = local_gradient(field, ids, qp);
        let c_mat;
        let c: &DMat = match coeff {
            Coeff::Identity => {
                c_mat = DMat::identity(n);
                &c_mat
            }
            Coeff::MetricVolume => {
                let g = gram_of(&j);
                let me = linalg::sym_min_eig(&g);
                if me <= 0.0 {
                    bad = Some((nearest_corner(ids, qp), me));
                    return;
                }
                let a = linalg::det(&g).sqrt();
                let mut b = linalg::inverse(&g).expect("spacelike gram is invertible");
                for v in b.data.iter_mut() {
                    *v *= a;
                }
                c_mat = b;
                &c_mat
            }
            Coeff::Custom(f) => {
                c_mat = f(qp.position, &GradientMatrix { j: j.clone() });
                &c_mat
            }
        };
        // flux = C grad u^t at this point
        for (cc, &node) in ids.iter().enumerate() {
            let gp = &qp.grad_phi[cc * n..(cc + 1) * n];
            for t in 0..m {
                let mut s = 0.0;
                for i in 0..n {
                    let mut flux_i = 0.0;
                    for k in 0..n {
                        flux_i += c[(i, k)] * j[(k, t)];
                    }
                    s += flux_i * gp[i];
                }
                acc[node * m + t] -= qp.weight * s;
            }
        }
    });
    if let Some((node, margin)) = bad {
        return Err(Error::NonSpacelike { node, margin });
    }
    for node in 0..field.grid.n_nodes {
        let v = field.grid.node_volume[node];
        for t in 0..m {
            acc[node * m + t] /= v;
        }
    }
    Ok(acc)
}

/// Exact Hessian of the discrete volume restricted to the interior degrees
/// of freedom (dof = interior rank * m + component). Symmetric by
/// construction; negative definite at spacelike critical points.
pub fn volume_hessian(field: &GraphField) -> Result<CsrMatrix> {
    let grid = &field.grid;
    let n = grid.dim;
    let m = field.m;
    let ndof = grid.n_interior() * m;
    let corners = grid.corners_per_cell();
    let mut triplets: Vec<(usize, usize, f64)> =
        Vec::with_capacity(grid.n_cells * corners * corners * m * m);
    let mut bad: Option<(usize, f64)> = None;

    for_each_quad_point(grid, |_, ids, qp| {
        if bad.is_some() {
            return;
        }
        let j = local_gradient(field, ids, qp);
        let g = gram_of(&j);
        let me = linalg::sym_min_eig(&g);
        if me <= 0.0 {
            bad = Some((nearest_corner(ids, qp), me));
            return;
        }
        let a = linalg::det(&g).sqrt();
        let b = linalg::inverse(&g).expect("spacelike gram is invertible");
        let p = b.matmul(&j); // n x m
        // mm[t][s] = (J^T B J)_{ts}, symmetrized storage
        let mut mm = DMat::zeros(m, m);
        for t in 0..m {
            for s in t..m {
                let mut v = 0.0;
                for i in 0..n {
                    v += j[(i, t)] * p[(i, s)];
                }
                mm[(t, s)] = v;
                mm[(s, t)] = v;
            }
        }
        // per-corner data: D_c = B G_c and PG[c][t] = G_c . P_t
        let nc = ids.len();
        let mut d = vec![0.0; nc * n];
        let mut pg = vec![0.0; nc * m];
        for c in 0..nc {
            let gp = &qp.grad_phi[c * n..(c + 1) * n];
            for i in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += b[(i, k)] * gp[k];
                }
                d[c * n + i] = s;
            }
            for t in 0..m {
                let mut s = 0.0;
                for i in 0..n {
                    s += gp[i] * p[(i, t)];
                }
                pg[c * m + t] = s;
            }
        }
        // S_pq = G_p . B G_q, mirrored so the assembly is symmetric bitwise
        let mut smat = vec![0.0; nc * nc];
        for cp in 0..nc {
            let gp = &qp.grad_phi[cp * n..(cp + 1) * n];
            for cq in cp..nc {
                let mut s = 0.0;
                for i in 0..n {
                    s += gp[i] * d[cq * n + i];
                }
                smat[cp * nc + cq] = s;
                smat[cq * nc + cp] = s;
            }
        }
        let w = qp.weight;
        for (cp, &pnode) in ids.iter().enumerate() {
            let prank = grid.interior_rank[pnode];
            if prank == usize::MAX {
                continue;
            }
            for (cq, &qnode) in ids.iter().enumerate() {
                let qrank = grid.interior_rank[qnode];
                if qrank == usize::MAX {
                    continue;
                }
                let spq = smat[cp * nc + cq];
                for t in 0..m {
                    for s in 0..m {
                        let delta = if t == s { 1.0 } else { 0.0 };
                        let val = -w
                            * a
                            * (spq * (mm[(t, s)] + delta) + pg[cp * m + s] * pg[cq * m + t]
                                - pg[cq * m + s] * pg[cp * m + t]);
                        triplets.push((prank * m + t, qrank * m + s, val));
                    }
                }
            }
        }
    });
    if let Some((node, margin)) = bad {
        return Err(Error::NonSpacelike { node, margin });
    }
    Ok(CsrMatrix::from_triplets(ndof, &mut triplets))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, DomainSpec, GraphField};
    use std::sync::Arc;

    fn unit_box(counts: &[usize]) -> Arc<StructuredGrid> {
        let bounds = vec![[0.0, 1.0]; counts.len()];
        Arc::new(build_grid(&DomainSpec::CartesianBox { bounds, counts: counts.to_vec() }).unwrap())
    }

    fn annulus(r0: f64, r1: f64, nr: usize, nt: usize) -> Arc<StructuredGrid> {
        Arc::new(build_grid(&DomainSpec::PolarAnnulus { r0, r1, counts: [nr, nt] }).unwrap())
    }

    #[test]
    fn node_volumes_partition_the_box() {
        let g = unit_box(&[5, 5]);
        let total: f64 = g.node_volume.iter().sum();
        assert!((total - 1.0).abs() < 1e-14);
        let h2 = 0.25 * 0.25;
        let interior = g.box_node(&[2, 2]);
        assert!((g.node_volume[interior] - h2).abs() < 1e-14);
        let corner = g.box_node(&[0, 0]);
        assert!((g.node_volume[corner] - 0.25 * h2).abs() < 1e-14);
    }

    #[test]
    fn node_volumes_cover_polygonal_annulus() {
        let nt = 64;
        let g = annulus(1.0, 2.0, 9, nt);
        let total: f64 = g.node_volume.iter().sum();
        // inscribed polygonal rings: area = sum over cells of the trapezoid areas
        let poly_area = |r: f64| 0.5 * nt as f64 * r * r * (2.0 * std::f64::consts::PI / nt as f64).sin();
        let expected = poly_area(2.0) - poly_area(1.0);
        assert!((total - expected).abs() < 1e-12, "{total} vs {expected}");
    }

    #[test]
    fn volume_of_flat_graph_is_domain_measure() {
        let g = unit_box(&[9, 9]);
        let f = GraphField::zeros(g, 2);
        assert!((volume(&f).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn volume_gradient_vanishes_on_affine_fields() {
        // box in 2d, two components
        let g = unit_box(&[7, 7]);
        let f = GraphField::from_fn(g.clone(), 2, |x| {
            vec![0.3 * x[0] - 0.2 * x[1], 0.25 * x[0] + 0.1 * x[1]]
        });
        let grad = volume_gradient(&f).unwrap();
        for &node in &g.interior_nodes {
            for t in 0..2 {
                assert!(
                    grad[node * 2 + t].abs() < 1e-13,
                    "residual {} at node {node}",
                    grad[node * 2 + t]
                );
            }
        }
        // annulus and disk
        for grid in [annulus(1.0, 2.0, 7, 20), annulus(0.0, 1.0, 6, 16)] {
            let f = GraphField::from_fn(grid.clone(), 1, |x| vec![0.4 * x[0] + 0.3 * x[1]]);
            let grad = volume_gradient(&f).unwrap();
            for &node in &grid.interior_nodes {
                assert!(
                    grad[node].abs() < 1e-13,
                    "polar residual {} at node {node}",
                    grad[node]
                );
            }
        }
    }

    #[test]
    fn flux_divergence_is_zero_for_affine_and_conservative() {
        let g = unit_box(&[9, 9]);
        let f = GraphField::from_fn(g.clone(), 1, |x| vec![0.5 * x[0] + 0.2 * x[1]]);
        let div = flux_divergence(&f, &Coeff::MetricVolume).unwrap();
        for &node in &g.interior_nodes {
            assert!(div[node].abs() < 1e-12);
        }
        // conservation: volume-weighted sum over all nodes is exactly zero
        let smooth = GraphField::from_fn(g.clone(), 1, |x| {
            vec![0.3 * (2.0 * x[0]).sin() * (x[1]).cos()]
        });
        let div = flux_divergence(&smooth, &Coeff::MetricVolume).unwrap();
        let total: f64 = (0..g.n_nodes).map(|p| g.node_volume[p] * div[p]).sum();
        assert!(total.abs() < 1e-11, "net flux {total}");
    }

    #[test]
    fn identity_coeff_matches_laplacian_on_quadratic() {
        // u = x^2 + y^2 has Laplacian 4 everywhere; the weak-form estimate
        // reproduces it exactly in the interior of a uniform box
        let g = unit_box(&[9, 9]);
        let f = GraphField::from_fn(g.clone(), 1, |x| vec![x[0] * x[0] + x[1] * x[1]]);
        let div = flux_divergence(&f, &Coeff::Identity).unwrap();
        for &node in &g.interior_nodes {
            assert!((div[node] - 4.0).abs() < 1e-11, "lap = {}", div[node]);
        }
    }

    #[test]
    fn hessian_matches_finite_difference_gradient() {
        let g = unit_box(&[5, 5]);
        let mut f = GraphField::from_fn(g.clone(), 2, |x| {
            vec![
                0.2 * (3.0 * x[0]).sin() * x[1],
                0.15 * x[0] * x[0] - 0.1 * x[1],
            ]
        });
        let h = volume_hessian(&f).unwrap();
        assert!(h.asymmetry() < 1e-15);
        let m = 2;
        let eps = 1e-6;
        let base = volume_gradient(&f).unwrap();
        for (rank, &node) in g.interior_nodes.iter().enumerate() {
            for t in 0..m {
                let dof = rank * m + t;
                let old = f.values[node * m + t];
                f.values[node * m + t] = old + eps;
                let up = volume_gradient(&f).unwrap();
                f.values[node * m + t] = old - eps;
                let dn = volume_gradient(&f).unwrap();
                f.values[node * m + t] = old;
                for (rank2, &node2) in g.interior_nodes.iter().enumerate() {
                    for s in 0..m {
                        let fd = (up[node2 * m + s] - dn[node2 * m + s]) / (2.0 * eps);
                        let an = h.get(rank2 * m + s, dof);
                        assert!(
                            (fd - an).abs() < 1e-6 * (1.0 + an.abs()),
                            "H[{rank2},{s}][{rank},{t}] analytic {an} vs fd {fd}"
                        );
                    }
                }
            }
        }
        let _ = base;
    }

    #[test]
    fn hessian_at_zero_is_negative_definite_laplacian() {
        let g = unit_box(&[5, 5]);
        let f = GraphField::zeros(g.clone(), 1);
        let h = volume_hessian(&f).unwrap();
        // quadratic form negative for random-ish probe
        let ndof = g.n_interior();
        let w: Vec<f64> = (0..ndof).map(|i| ((i * 7 + 3) % 11) as f64 - 5.0).collect();
        let hw = h.matvec(&w);
        let q: f64 = w.iter().zip(&hw).map(|(a, b)| a * b).sum();
        assert!(q < 0.0);
    }

    #[test]
    fn min_margin_flags_steep_fields() {
        let g = unit_box(&[5, 5]);
        let f = GraphField::from_fn(g.clone(), 1, |x| vec![0.9 * x[0]]);
        let (margin, _) = min_margin(&f);
        assert!((margin - (1.0 - 0.81)).abs() < 1e-12);
        let steep = GraphField::from_fn(g, 1, |x| vec![1.5 * x[0]]);
        let (margin, _) = min_margin(&steep);
        assert!(margin < 0.0);
        assert!(volume(&steep).is_err());
    }
}
