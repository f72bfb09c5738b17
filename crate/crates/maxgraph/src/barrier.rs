//! Rotationally symmetric comparison hypersurfaces: the profile family
//! f_{K,Lambda}, its shape operator spectrum, sublevel-set containment,
//! the comparison-principle check against a solved graph, and the
//! boundary barrier fit used for gradient estimates.
//!
//! A barrier is the hypersurface { |y - eta| = f(|x - xi|) } lying inside
//! the spacelike cone of its apex (xi, eta). The profile solves
//!
//! ```text
//!   (n-1) f' / (r sqrt(1-f'^2)) + f'' / (1-f'^2)^{3/2} = Lambda,
//! ```
//!
//! which integrates to f'/sqrt(1-f'^2) = Lambda r / n + K r^{1-n}.

use std::sync::Arc;

use crate::boundary::{acausality_margin, BoundaryData};
use crate::error::{Error, Result};
use crate::grid::{GraphField, GridKind, StructuredGrid};
use crate::lorentz::SpacetimeVector;
use crate::quadrature;

/// Parameters of one comparison hypersurface.
#[derive(Debug, Clone)]
pub struct BarrierParams {
    /// ambient spatial dimension n of the rotation group acting on x
    pub n: usize,
    pub k: f64,
    pub lambda: f64,
    /// spatial apex
    pub xi: Vec<f64>,
    /// temporal apex
    pub eta: Vec<f64>,
    /// admissible radius (nK/|Lambda|)^{1/n}, infinite when Lambda = 0
    pub r_max: f64,
}

impl BarrierParams {
    pub fn new(n: usize, k: f64, lambda: f64, xi: Vec<f64>, eta: Vec<f64>) -> Result<Self> {
        if n < 1 {
            return Err(Error::invalid("barrier needs n >= 1"));
        }
        if !(k > 0.0) {
            return Err(Error::invalid(format!("barrier needs K > 0, got {k}")));
        }
        if !(lambda <= 0.0) {
            return Err(Error::invalid(format!(
                "barrier needs Lambda <= 0, got {lambda}"
            )));
        }
        let r_max = if lambda < 0.0 {
            (n as f64 * k / lambda.abs()).powf(1.0 / n as f64)
        } else {
            f64::INFINITY
        };
        Ok(BarrierParams {
            n,
            k,
            lambda,
            xi,
            eta,
            r_max,
        })
    }

    /// numerator K + Lambda r^n / n of the slope ratio
    fn p_of(&self, r: f64) -> f64 {
        self.k + self.lambda * r.powi(self.n as i32) / self.n as f64
    }

    /// sqrt(r^{2n-2} + P^2)
    fn d_of(&self, r: f64) -> f64 {
        let p = self.p_of(r);
        (r.powi(2 * self.n as i32 - 2) + p * p).sqrt()
    }
}

/// Principal values of the barrier shape operator quadratic form on
/// Lorentz-unit directions. c1 acts on directions tangent to the spatial
/// sphere (multiplicity n-1), c2 on the timelike sphere (multiplicity
/// m-1), c3 on the profile direction.
#[derive(Debug, Clone, Copy)]
pub struct ShapeSpectrum {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

/// Profile height f_{K,Lambda}(r) by adaptive quadrature of the closed
/// slope form, to 1e-12 absolute.
pub fn f_eval(p: &BarrierParams, r: f64) -> Result<f64> {
    if !(0.0..p.r_max).contains(&r) {
        return Err(Error::invalid(format!(
            "radius {r} outside admissible range [0, {})",
            p.r_max
        )));
    }
    if r == 0.0 {
        return Ok(0.0);
    }
    let pc = p.clone();
    Ok(quadrature::integrate(
        &move |t| {
            if t == 0.0 && pc.n >= 2 {
                return 1.0;
            }
            pc.p_of(t) / pc.d_of(t)
        },
        0.0,
        r,
        1e-12,
    ))
}

/// Profile slope f'(r) in closed form; strictly inside (0, 1) on the
/// admissible range.
pub fn f_prime(p: &BarrierParams, r: f64) -> Result<f64> {
    if !(r > 0.0 && r < p.r_max) {
        return Err(Error::invalid(format!(
            "radius {r} outside admissible range (0, {})",
            p.r_max
        )));
    }
    Ok(p.p_of(r) / p.d_of(r))
}

/// Analytic second derivative of the profile.
pub fn f_second(p: &BarrierParams, r: f64) -> Result<f64> {
    if !(r > 0.0 && r < p.r_max) {
        return Err(Error::invalid(format!(
            "radius {r} outside admissible range (0, {})",
            p.r_max
        )));
    }
    let n = p.n as f64;
    let pv = p.p_of(r);
    let d = p.d_of(r);
    Ok(r.powi(2 * p.n as i32 - 3) * (p.lambda * r.powi(p.n as i32) - (n - 1.0) * pv) / d.powi(3))
}

/// The three principal values at radius r. Internally uses the
/// cancellation-free form sqrt(1 - f'^2) = r^{n-1}/D.
pub fn shape_spectrum(p: &BarrierParams, r: f64) -> Result<ShapeSpectrum> {
    if !(r > 0.0 && r < p.r_max) {
        return Err(Error::invalid(format!(
            "radius {r} outside admissible range (0, {})",
            p.r_max
        )));
    }
    let n = p.n as f64;
    let pv = p.p_of(r);
    let d = p.d_of(r);
    let f = f_eval(p, r)?;
    // X1 = f' / (r sqrt(1-f'^2)) = P / r^n
    let x1 = pv / r.powi(p.n as i32);
    // X2 = 1 / (f sqrt(1-f'^2)) = D / (f r^{n-1})
    let x2 = d / (f * r.powi(p.n as i32 - 1));
    // X3 = f'' / (1-f'^2)^{3/2} = (Lambda r^n - (n-1) P) / r^n
    let x3 = (p.lambda * r.powi(p.n as i32) - (n - 1.0) * pv) / r.powi(p.n as i32);
    Ok(ShapeSpectrum {
        c1: -x1,
        c2: -x2,
        c3: -x3,
    })
}

/// A point of the barrier at radius r: spatial offset along the first
/// axis, temporal offset along theta_dir (unit m-vector).
pub fn surface_point(p: &BarrierParams, r: f64, theta_dir: &[f64]) -> Result<SpacetimeVector> {
    let f = f_eval(p, r)?;
    let mut x = p.xi.clone();
    x[0] += r;
    let y: Vec<f64> = p
        .eta
        .iter()
        .zip(theta_dir)
        .map(|(e, t)| e + f * t)
        .collect();
    Ok(SpacetimeVector::new(x, y))
}

/// The timelike unit normal at the canonical point with radius r (spatial
/// radial direction e1 of the x factor, temporal direction e1 of y).
fn canonical_normal(p: &BarrierParams, r: f64, m: usize) -> Result<SpacetimeVector> {
    let fp = f_prime(p, r)?;
    let s = (1.0 - fp * fp).sqrt();
    let mut x = vec![0.0; p.n];
    x[0] = fp / s;
    let mut y = vec![0.0; m];
    y[0] = 1.0 / s;
    Ok(SpacetimeVector::new(x, y))
}

/// Shape operator applied to a tangent vector at the canonical point.
fn shape_apply(
    p: &BarrierParams,
    r: f64,
    spec: &ShapeSpectrum,
    v: &SpacetimeVector,
) -> SpacetimeVector {
    let fp = f_prime(p, r).expect("admissible radius");
    let alpha = v.x[0]; // component along the radial direction
    let mut sx = vec![0.0; v.x.len()];
    let mut sy = vec![0.0; v.y.len()];
    // spatial-sphere part, eigenvalue X1 = -c1
    for k in 1..v.x.len() {
        sx[k] = (-spec.c1) * v.x[k];
    }
    // timelike-sphere part, eigenvalue X2 = -c2
    for k in 1..v.y.len() {
        sy[k] = (-spec.c2) * v.y[k];
    }
    // profile direction alpha (rhat, f' what), eigenvalue X3 = -c3
    sx[0] = (-spec.c3) * alpha;
    sy[0] = (-spec.c3) * alpha * fp;
    SpacetimeVector::new(sx, sy)
}

/// Mean curvature of the barrier over a spacelike n-plane in its tangent
/// space at the canonical point of radius r. The basis is orthonormalized
/// internally by Gram-Schmidt under the ambient Lorentzian inner product.
pub fn mean_curvature_over_plane(
    p: &BarrierParams,
    r: f64,
    basis: &[SpacetimeVector],
) -> Result<f64> {
    if basis.len() != p.n {
        return Err(Error::invalid(format!(
            "plane basis must have n = {} vectors, got {}",
            p.n,
            basis.len()
        )));
    }
    let m = basis[0].y.len();
    let normal = canonical_normal(p, r, m)?;
    let spec = shape_spectrum(p, r)?;
    for (i, v) in basis.iter().enumerate() {
        let inner = crate::lorentz::lorentz_inner(v, &normal)?;
        if inner.abs() > 1e-10 * v.euclidean_norm_sq().sqrt().max(1.0) {
            return Err(Error::invalid(format!(
                "basis vector {i} is not tangent to the barrier (<v, n> = {inner:.3e})"
            )));
        }
    }
    // Lorentz Gram-Schmidt; every intermediate vector must stay spacelike
    let mut ortho: Vec<SpacetimeVector> = Vec::with_capacity(p.n);
    for (i, v) in basis.iter().enumerate() {
        let mut w = v.clone();
        for e in &ortho {
            let c = crate::lorentz::lorentz_inner(&w, e)?;
            w = w.sub(&e.scale(c));
        }
        let norm2 = crate::lorentz::lorentz_inner(&w, &w)?;
        if norm2 <= 1e-12 * w.euclidean_norm_sq().max(1e-300) {
            return Err(Error::invalid(format!(
                "basis vector {i} does not span a spacelike direction (norm^2 = {norm2:.3e})"
            )));
        }
        ortho.push(w.scale(1.0 / norm2.sqrt()));
    }
    let mut h = 0.0;
    for e in &ortho {
        let se = shape_apply(p, r, &spec, e);
        h -= crate::lorentz::lorentz_inner(e, &se)?;
    }
    Ok(h)
}

/// Sublevel-set membership: |q_y - eta| <= f(|q_x - xi|) + 1e-12.
pub fn contains(p: &BarrierParams, q: &SpacetimeVector) -> Result<bool> {
    let r = dist(&q.x, &p.xi);
    if r >= p.r_max {
        return Err(Error::invalid(format!(
            "point radius {r} outside admissible range (r_max = {})",
            p.r_max
        )));
    }
    let w = dist(&q.y, &p.eta);
    Ok(w <= f_eval(p, r)? + 1e-12)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Result of checking a graph against a barrier sublevel set.
#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub boundary_contained: bool,
    pub interior_contained: bool,
    /// max over nodes of |u - eta| - f(|x - xi|); negative = strictly inside
    pub worst_violation: f64,
    pub worst_node: usize,
}

/// Check the comparison-principle containment of a graph field: the
/// barrier lemma predicts boundary containment implies interior
/// containment for maximal graphs.
pub fn comparison_check(u: &GraphField, p: &BarrierParams) -> Result<ComparisonReport> {
    let grid = &u.grid;
    let mut report = ComparisonReport {
        boundary_contained: true,
        interior_contained: true,
        worst_violation: f64::NEG_INFINITY,
        worst_node: 0,
    };
    for node in 0..grid.n_nodes {
        let x = grid.coords(node);
        let r = dist(x, &p.xi);
        if r >= p.r_max {
            return Err(Error::invalid(format!(
                "node {node} has radius {r} >= r_max = {}",
                p.r_max
            )));
        }
        let w = dist(u.value(node), &p.eta);
        let violation = w - f_eval(p, r)?;
        if violation > report.worst_violation {
            report.worst_violation = violation;
            report.worst_node = node;
        }
        if violation > 1e-12 {
            if grid.is_boundary[node] {
                report.boundary_contained = false;
            } else {
                report.interior_contained = false;
            }
        }
    }
    Ok(report)
}

/// Output of the boundary barrier fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: BarrierParams,
    /// tangential slope |D'(phi . theta)| at the anchor
    pub a: f64,
    /// fitted frame slope
    pub b: f64,
    /// first-order tangency defect |D'(w^2) - D'(f^2)| at the anchor
    pub tangency_residual: f64,
}

/// Fit a barrier at a boundary node so that the squared height and squared
/// profile agree to first order along the boundary: apex placed at
/// xi = x0 + eps (-b tau - nu)/sqrt(1+b^2), eta = phi(x0) - f(eps) theta,
/// K = 1/eps, with b solving f'(eps) b / sqrt(1+b^2) = a by bisection.
pub fn fit_boundary_barrier(
    x0: usize,
    theta: &[f64],
    eps: f64,
    lambda: f64,
    data: &BoundaryData,
    grid: &Arc<StructuredGrid>,
) -> Result<FitResult> {
    let n = grid.dim;
    let m = data.m;
    if theta.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: theta.len(),
            context: "temporal direction theta",
        });
    }
    let tnorm = theta.iter().map(|t| t * t).sum::<f64>().sqrt();
    if (tnorm - 1.0).abs() > 1e-10 {
        return Err(Error::invalid("theta must be a unit vector"));
    }
    if !(eps > 0.0) {
        return Err(Error::invalid("eps must be positive"));
    }
    if !(lambda < 0.0) {
        return Err(Error::invalid("fit requires Lambda < 0"));
    }
    let mu0 = acausality_margin(data);
    if mu0 <= 0.0 {
        return Err(Error::Acausal { mu0 });
    }
    let normal = grid
        .inward_normal(x0)
        .ok_or_else(|| Error::invalid(format!("node {x0} has no defined inward normal")))?;

    // tangential derivative of phi . theta at x0
    let tangents = boundary_tangents(grid, x0)?;
    let phi_theta = |x: &[f64]| -> Result<f64> {
        let v = eval_boundary(data, grid, x)?;
        Ok(v.iter().zip(theta).map(|(a, b)| a * b).sum())
    };
    let mut grad_t = Vec::with_capacity(tangents.len());
    for tau in &tangents {
        grad_t.push(tangential_derivative(grid, x0, tau, &phi_theta)?);
    }
    let a: f64 = grad_t.iter().map(|g| g * g).sum::<f64>().sqrt();

    // align tau1 with the tangential gradient; any tangent works when a = 0
    let mut tau1 = tangents[0].clone();
    if a > 1e-14 {
        for i in 0..n {
            tau1[i] = 0.0;
            for (k, tau) in tangents.iter().enumerate() {
                tau1[i] += grad_t[k] / a * tau[i];
            }
        }
    }

    // probe profile with K = 1/eps for the slope at radius eps
    let k = 1.0 / eps;
    let probe = BarrierParams::new(n, k, lambda, vec![0.0; n], vec![0.0; m])?;
    if eps >= probe.r_max {
        return Err(Error::invalid(format!(
            "eps = {eps} is outside the admissible range of the probe barrier (r_max = {})",
            probe.r_max
        )));
    }
    let fp_eps = f_prime(&probe, eps)?;
    if a >= fp_eps {
        return Err(Error::InfeasibleFit {
            a,
            fprime_eps: fp_eps,
        });
    }
    // solve f'(eps) b / sqrt(1 + b^2) = a on [0, inf) by bisection
    let target = |b: f64| fp_eps * b / (b * b + 1.0).sqrt() - a;
    let b = if a == 0.0 {
        0.0
    } else {
        let mut hi = 1.0f64;
        while target(hi) < 0.0 {
            hi *= 2.0;
            if hi > 1e12 {
                return Err(Error::InfeasibleFit {
                    a,
                    fprime_eps: fp_eps,
                });
            }
        }
        let mut lo = 0.0f64;
        while hi - lo > 1e-12 {
            let mid = 0.5 * (lo + hi);
            if target(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };

    let x0_coords = grid.coords(x0).to_vec();
    let scale = 1.0 / (1.0 + b * b).sqrt();
    let xi: Vec<f64> = (0..n)
        .map(|i| x0_coords[i] + eps * scale * (-b * tau1[i] - normal[i]))
        .collect();
    let f_eps = f_eval(&probe, eps)?;
    let phi0 = data.value(x0);
    let eta: Vec<f64> = (0..m).map(|t| phi0[t] - f_eps * theta[t]).collect();
    let params = BarrierParams::new(n, k, lambda, xi, eta)?;

    // first-order tangency defect along the boundary
    let mut defect_sq = 0.0;
    for tau in &tangents {
        let w2 = tangential_derivative(grid, x0, tau, &|x| {
            let v = eval_boundary(data, grid, x)?;
            Ok(v.iter()
                .zip(&params.eta)
                .map(|(ui, ei)| (ui - ei) * (ui - ei))
                .sum())
        })?;
        let f2 = tangential_derivative(grid, x0, tau, &|x| {
            let r = dist(x, &params.xi);
            let f = f_eval(&params, r)?;
            Ok(f * f)
        })?;
        defect_sq += (w2 - f2) * (w2 - f2);
    }
    Ok(FitResult {
        params,
        a,
        b,
        tangency_residual: defect_sq.sqrt(),
    })
}

/// Unit tangent directions of the boundary at a node with defined normal.
fn boundary_tangents(grid: &StructuredGrid, node: usize) -> Result<Vec<Vec<f64>>> {
    let n = grid.dim;
    match &grid.kind {
        GridKind::Box { counts, .. } => {
            let idx = grid.box_indices(node);
            let mut normal_axis = None;
            for k in 0..n {
                if idx[k] == 0 || idx[k] == counts[k] - 1 {
                    if normal_axis.is_some() {
                        return Err(Error::invalid(format!(
                            "node {node} sits on a corner; no defined normal"
                        )));
                    }
                    normal_axis = Some(k);
                }
            }
            let normal_axis =
                normal_axis.ok_or_else(|| Error::invalid(format!("node {node} is interior")))?;
            let mut tangents = Vec::new();
            for k in 0..n {
                if k == normal_axis {
                    continue;
                }
                let mut t = vec![0.0; n];
                t[k] = 1.0;
                tangents.push(t);
            }
            Ok(tangents)
        }
        GridKind::Polar { dtheta, .. } => {
            let (_, it) = grid.polar_indices(node);
            let theta = it as f64 * dtheta;
            Ok(vec![vec![-theta.sin(), theta.cos()]])
        }
    }
}

/// Central-difference derivative of a scalar function along the boundary
/// through a node, stepping on the analytic boundary curve.
fn tangential_derivative(
    grid: &StructuredGrid,
    node: usize,
    tau: &[f64],
    f: &dyn Fn(&[f64]) -> Result<f64>,
) -> Result<f64> {
    let step = 1e-6;
    let x0 = grid.coords(node);
    match &grid.kind {
        GridKind::Box { .. } => {
            let plus: Vec<f64> = x0.iter().zip(tau).map(|(x, t)| x + step * t).collect();
            let minus: Vec<f64> = x0.iter().zip(tau).map(|(x, t)| x - step * t).collect();
            Ok((f(&plus)? - f(&minus)?) / (2.0 * step))
        }
        GridKind::Polar { .. } => {
            // walk along the circle of radius |x0|
            let r = (x0[0] * x0[0] + x0[1] * x0[1]).sqrt();
            let theta0 = x0[1].atan2(x0[0]);
            let orient = if -theta0.sin() * tau[0] + theta0.cos() * tau[1] >= 0.0 {
                1.0
            } else {
                -1.0
            };
            let dth = orient * step / r;
            let plus = [r * (theta0 + dth).cos(), r * (theta0 + dth).sin()];
            let minus = [r * (theta0 - dth).cos(), r * (theta0 - dth).sin()];
            Ok((f(&plus)? - f(&minus)?) / (2.0 * step))
        }
    }
}

/// Evaluate boundary data at an arbitrary boundary position, preferring the
/// analytic form and falling back to the nearest sampled node.
fn eval_boundary(data: &BoundaryData, grid: &StructuredGrid, x: &[f64]) -> Result<Vec<f64>> {
    if let Some(f) = &data.analytic {
        return Ok(f(x));
    }
    let mut best = usize::MAX;
    let mut best_d = f64::INFINITY;
    for node in grid.boundary_nodes() {
        let d = dist(grid.coords(node), x);
        if d < best_d {
            best_d = d;
            best = node;
        }
    }
    if best == usize::MAX {
        return Err(Error::invalid("no boundary nodes"));
    }
    Ok(data.value(best).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, DomainSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(n: usize, m: usize, k: f64, lambda: f64) -> BarrierParams {
        BarrierParams::new(n, k, lambda, vec![0.0; n], vec![0.0; m]).unwrap()
    }

    #[test]
    fn profile_anchors() {
        let p = params(2, 1, 1.0, 0.0);
        assert_eq!(f_eval(&p, 0.0).unwrap(), 0.0);
        // closed form K asinh(r/K) for n = 2, Lambda = 0
        let f1 = f_eval(&p, 1.0).unwrap();
        assert!((f1 - 1.0f64.asinh()).abs() < 1e-11, "f(1) = {f1}");
        assert!((f1 - 0.8813735870).abs() < 1e-9);
        let fp = f_prime(&p, 1.0).unwrap();
        assert!((fp - 1.0 / 2.0f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn closed_form_match_on_wide_range() {
        for &k in &[0.5, 1.0, 2.0] {
            let p = params(2, 1, k, 0.0);
            for i in 1..=100 {
                let r = 10.0 * k * i as f64 / 100.0;
                let f = f_eval(&p, r).unwrap();
                let exact = k * (r / k).asinh();
                assert!((f - exact).abs() < 1e-10, "K={k} r={r}: {f} vs {exact}");
            }
        }
    }

    #[test]
    fn slope_vanishes_at_admissible_edge() {
        let p = params(2, 1, 1.0, -1.0);
        assert!((p.r_max - 2.0f64.sqrt()).abs() < 1e-14);
        let fp = f_prime(&p, p.r_max * (1.0 - 1e-9)).unwrap();
        assert!(fp < 1e-6, "f' near r_max = {fp}");
        assert!(f_prime(&p, p.r_max).is_err());
    }

    #[test]
    fn slope_tends_to_one_at_apex() {
        let p = params(2, 1, 1.0, -0.5);
        let fp = f_prime(&p, 1e-8).unwrap();
        assert!((fp - 1.0).abs() < 1e-7, "f'(0+) = {fp}");
    }

    #[test]
    fn profile_range_and_ode_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..40 {
            let n = if rng.gen_bool(0.5) { 2 } else { 3 };
            let k = rng.gen_range(0.3..3.0);
            let lambda = -rng.gen_range(0.0..2.0);
            let p = params(n, 1, k, lambda);
            let r_hi = if p.r_max.is_finite() {
                p.r_max * 0.98
            } else {
                8.0 * k
            };
            for i in 1..=25 {
                let r = r_hi * i as f64 / 25.0;
                let f = f_eval(&p, r).unwrap();
                let fp = f_prime(&p, r).unwrap();
                assert!(fp > 0.0 && fp < 1.0, "f' = {fp}");
                assert!(f > 0.0 && f < r, "0 < f < r violated: f({r}) = {f}");
                // ODE residual with the public derivatives; small radii are
                // excluded because 1 - f'^2 cancels as f' -> 1 at the apex
                if r > 0.2 * r_hi {
                    let fpp = f_second(&p, r).unwrap();
                    let s = (1.0 - fp * fp).sqrt();
                    let res = (n as f64 - 1.0) * fp / (r * s) + fpp / (s * s * s) - lambda;
                    assert!(res.abs() < 1e-9, "ODE residual {res} at r = {r}");
                }
            }
        }
    }

    #[test]
    fn f_second_matches_difference_quotient() {
        let p = params(3, 1, 1.3, -0.7);
        for &r in &[0.3, 0.8, 1.1] {
            let h = 1e-6;
            let fd = (f_prime(&p, r + h).unwrap() - f_prime(&p, r - h).unwrap()) / (2.0 * h);
            let an = f_second(&p, r).unwrap();
            assert!((fd - an).abs() < 1e-7, "r={r}: fd {fd} vs analytic {an}");
        }
    }

    #[test]
    fn monotone_family_in_k() {
        let lambda = -0.4;
        let p1 = params(2, 1, 1.0, lambda);
        let p2 = params(2, 1, 1.8, lambda);
        for i in 1..=30 {
            let r = p1.r_max * 0.95 * i as f64 / 30.0;
            let f1 = f_eval(&p1, r).unwrap();
            let f2 = f_eval(&p2, r).unwrap();
            assert!(f2 > f1, "family not monotone at r = {r}");
        }
    }

    #[test]
    fn spectrum_ordering_and_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let n = 2 + rng.gen_range(0..2) as usize;
            let k = rng.gen_range(0.4..2.5);
            let lambda = -rng.gen_range(0.01..2.0);
            let p = params(n, 2, k, lambda);
            let r = rng.gen_range(0.02..0.98) * p.r_max;
            let s = shape_spectrum(&p, r).unwrap();
            // proof chain: X2 > X1 > 0 >= Lambda > X3
            assert!(-s.c2 > -s.c1, "X2 <= X1");
            assert!(-s.c1 > 0.0);
            assert!(lambda > -s.c3, "Lambda <= X3");
            // trace identity (n-1) X1 + X3 = Lambda
            let trace = (n as f64 - 1.0) * (-s.c1) + (-s.c3);
            assert!((trace - lambda).abs() < 1e-10 * (1.0 + lambda.abs()));
        }
    }

    fn slice_basis(p: &BarrierParams, r: f64, m: usize) -> Vec<SpacetimeVector> {
        let n = p.n;
        let fp = f_prime(p, r).unwrap();
        let s = (1.0 - fp * fp).sqrt();
        let mut basis = Vec::new();
        for k in 1..n {
            let mut x = vec![0.0; n];
            x[k] = 1.0;
            basis.push(SpacetimeVector::new(x, vec![0.0; m]));
        }
        let mut x = vec![0.0; n];
        x[0] = 1.0 / s;
        let mut y = vec![0.0; m];
        y[0] = fp / s;
        basis.push(SpacetimeVector::new(x, y));
        basis
    }

    #[test]
    fn slice_plane_attains_equality() {
        for (n, m, lambda) in [(2, 2, -0.8), (3, 2, -0.5), (2, 1, 0.0), (3, 3, -1.5)] {
            let p = params(n, m, 1.0, lambda);
            let r = if p.r_max.is_finite() {
                0.5 * p.r_max
            } else {
                0.7
            };
            let basis = slice_basis(&p, r, m);
            let h = mean_curvature_over_plane(&p, r, &basis).unwrap();
            assert!(
                (h - (-lambda)).abs() < 1e-10,
                "H = {h}, -Lambda = {}",
                -lambda
            );
        }
    }

    #[test]
    fn random_planes_respect_lower_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut tested = 0;
        while tested < 300 {
            let n = 2 + rng.gen_range(0..2) as usize;
            let m = 1 + rng.gen_range(0..3) as usize;
            let k = rng.gen_range(0.5..2.0);
            let lambda = -rng.gen_range(0.0..2.0);
            let p = params(n, m, k, lambda);
            let r = rng.gen_range(0.05..0.95)
                * if p.r_max.is_finite() { p.r_max } else { 5.0 * k };
            let fp = f_prime(&p, r).unwrap();
            let mut basis = slice_basis(&p, r, m);
            // random tangent mixing, including timelike-sphere directions
            for v in basis.iter_mut() {
                let a: Vec<f64> = (0..n).map(|_| 0.35 * rng.gen_range(-1.0..1.0)).collect();
                let mut b: Vec<f64> = (0..m).map(|_| 0.35 * rng.gen_range(-1.0..1.0)).collect();
                // enforce tangency: b . what = f' (a . rhat)
                b[0] = fp * a[0];
                for i in 0..n {
                    v.x[i] += a[i];
                }
                for t in 0..m {
                    v.y[t] += b[t];
                }
            }
            match mean_curvature_over_plane(&p, r, &basis) {
                Ok(h) => {
                    assert!(
                        h >= -lambda - 1e-8,
                        "H = {h} below bound {} (n={n}, m={m})",
                        -lambda
                    );
                    tested += 1;
                }
                Err(_) => continue, // mixing left the spacelike cone; resample
            }
        }
    }

    #[test]
    fn containment_examples() {
        let p = params(2, 1, 1.0, -0.25);
        let apex = SpacetimeVector::new(p.xi.clone(), p.eta.clone());
        assert!(contains(&p, &apex).unwrap());
        // light cone point with w = r lies outside (f < r)
        let cone = SpacetimeVector::new(vec![1.0, 0.0], vec![1.0]);
        assert!(!contains(&p, &cone).unwrap());
        // a point on the surface itself is inside within tolerance
        let on = surface_point(&p, 0.9, &[1.0]).unwrap();
        assert!(contains(&p, &on).unwrap());
        // out-of-range radius
        let far = SpacetimeVector::new(vec![p.r_max + 1.0, 0.0], vec![0.0]);
        assert!(contains(&p, &far).is_err());
    }

    #[test]
    fn comparison_check_flags_shifted_apex() {
        let g = Arc::new(
            build_grid(&DomainSpec::PolarAnnulus {
                r0: 1.0,
                r1: 2.0,
                counts: [5, 16],
            })
            .unwrap(),
        );
        let u = GraphField::zeros(g.clone(), 1);
        // generous barrier centered in the hole contains the zero graph
        let p = BarrierParams::new(2, 6.0, -0.1, vec![0.0, 0.0], vec![-0.5]).unwrap();
        let rep = comparison_check(&u, &p).unwrap();
        assert!(rep.boundary_contained && rep.interior_contained);
        // shifting eta far in the temporal direction breaks containment
        let p_bad = BarrierParams::new(2, 6.0, -0.1, vec![0.0, 0.0], vec![-40.0]).unwrap();
        let rep = comparison_check(&u, &p_bad).unwrap();
        assert!(!rep.boundary_contained);
        assert!(rep.worst_violation > 0.0);
    }

    fn box_grid_9() -> Arc<StructuredGrid> {
        Arc::new(
            build_grid(&DomainSpec::CartesianBox {
                bounds: vec![[0.0, 1.0], [0.0, 1.0]],
                counts: vec![9, 9],
            })
            .unwrap(),
        )
    }

    #[test]
    fn fit_constant_data_gives_b_zero() {
        let g = box_grid_9();
        let data = BoundaryData::from_fn(g.clone(), 1, Arc::new(|_| vec![0.3])).unwrap();
        let x0 = g.box_node(&[4, 0]);
        let fit = fit_boundary_barrier(x0, &[1.0], 1e-2, -1.0, &data, &g).unwrap();
        assert_eq!(fit.b, 0.0);
        // apex along the outward normal: x0 = (0.5, 0), inward normal +e2
        assert!((fit.params.xi[0] - 0.5).abs() < 1e-12);
        assert!((fit.params.xi[1] + 1e-2).abs() < 1e-14);
        assert!(fit.tangency_residual < 1e-10);
    }

    #[test]
    fn fit_sinusoidal_tangency_residual_small() {
        let g = box_grid_9();
        let data = BoundaryData::from_fn(
            g.clone(),
            2,
            Arc::new(|x| {
                vec![
                    0.10 * (2.0 * std::f64::consts::PI * x[0]).sin(),
                    0.08 * (2.0 * std::f64::consts::PI * x[1]).sin(),
                ]
            }),
        )
        .unwrap();
        let x0 = g.box_node(&[3, 0]);
        let theta = [0.6, 0.8];
        let fit = fit_boundary_barrier(x0, &theta, 1e-2, -1.0, &data, &g).unwrap();
        assert!(
            fit.tangency_residual <= 1e-8,
            "tangency residual {}",
            fit.tangency_residual
        );
        assert!(fit.b.is_finite() && fit.b >= 0.0);
    }

    #[test]
    fn fit_bisection_matches_closed_form() {
        let g = box_grid_9();
        let data = BoundaryData::from_fn(g.clone(), 1, Arc::new(|x| vec![0.4 * x[0]])).unwrap();
        let x0 = g.box_node(&[4, 0]);
        let eps = 5e-3;
        let fit = fit_boundary_barrier(x0, &[1.0], eps, -0.5, &data, &g).unwrap();
        // closed form: b = c / sqrt(1 - c^2) with c = a / f'(eps)
        let probe = BarrierParams::new(2, 1.0 / eps, -0.5, vec![0.0; 2], vec![0.0]).unwrap();
        let c = fit.a / f_prime(&probe, eps).unwrap();
        let b_exact = c / (1.0 - c * c).sqrt();
        assert!((fit.b - b_exact).abs() < 1e-9, "b {} vs {}", fit.b, b_exact);
        assert!((fit.a - 0.4).abs() < 1e-9);
    }

    #[test]
    fn fit_rejects_infeasible_eps() {
        let g = box_grid_9();
        // acausal but steep data; a large eps makes f'(eps) small
        let data = BoundaryData::from_fn(g.clone(), 1, Arc::new(|x| vec![0.9 * x[0]])).unwrap();
        let x0 = g.box_node(&[4, 0]);
        let r = fit_boundary_barrier(x0, &[1.0], 1.4, -1.0, &data, &g);
        match r {
            Err(Error::InfeasibleFit { .. }) | Err(Error::InvalidArgument(_)) => {}
            other => panic!("expected infeasible fit, got {other:?}"),
        }
    }

    #[test]
    fn fit_on_annulus_boundary() {
        let g = Arc::new(
            build_grid(&DomainSpec::PolarAnnulus {
                r0: 1.0,
                r1: 2.0,
                counts: [9, 32],
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
        let node = g.polar_node(8, 5); // outer circle
        let fit = fit_boundary_barrier(node, &[1.0], 1e-2, -1.0, &data, &g).unwrap();
        assert!(
            fit.tangency_residual < 1e-7,
            "residual {}",
            fit.tangency_residual
        );
    }
}
