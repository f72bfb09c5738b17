//! Boundary data: representation, discrete acausality measurement, and
//! harmonic extension into the interior.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::element::{self, Coeff};
use crate::error::{Error, Result};
use crate::grid::{GraphField, GridKind, StructuredGrid};
use crate::linalg;

/// Analytic boundary map, shared so probes can re-evaluate off-grid.
pub type AnalyticMap = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Prescribed boundary values phi on the boundary nodes of a grid, with an
/// optional analytic form and an estimated C^2 size (report-only).
#[derive(Clone)]
pub struct BoundaryData {
    pub grid: Arc<StructuredGrid>,
    pub m: usize,
    /// flat [node * m + component]; meaningful at boundary nodes only
    pub samples: Vec<f64>,
    pub analytic: Option<AnalyticMap>,
    pub c2_bound_kappa: f64,
}

impl std::fmt::Debug for BoundaryData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BoundaryData")
            .field("m", &self.m)
            .field("analytic", &self.analytic.is_some())
            .field("c2_bound_kappa", &self.c2_bound_kappa)
            .finish()
    }
}

impl BoundaryData {
    pub fn from_fn(grid: Arc<StructuredGrid>, m: usize, f: AnalyticMap) -> Result<Self> {
        let mut samples = vec![0.0; grid.n_nodes * m];
        for node in grid.boundary_nodes().collect::<Vec<_>>() {
            let vals = f(grid.coords(node));
            if vals.len() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    got: vals.len(),
                    context: "boundary map output",
                });
            }
            samples[node * m..(node + 1) * m].copy_from_slice(&vals);
        }
        let mut data = BoundaryData {
            grid,
            m,
            samples,
            analytic: Some(f),
            c2_bound_kappa: 0.0,
        };
        data.c2_bound_kappa = data.estimate_kappa();
        Ok(data)
    }

    pub fn from_samples(grid: Arc<StructuredGrid>, m: usize, samples: Vec<f64>) -> Result<Self> {
        if samples.len() != grid.n_nodes * m {
            return Err(Error::DimensionMismatch {
                expected: grid.n_nodes * m,
                got: samples.len(),
                context: "boundary samples",
            });
        }
        let mut data = BoundaryData {
            grid,
            m,
            samples,
            analytic: None,
            c2_bound_kappa: 0.0,
        };
        data.c2_bound_kappa = data.estimate_kappa();
        Ok(data)
    }

    pub fn value(&self, node: usize) -> &[f64] {
        &self.samples[node * self.m..(node + 1) * self.m]
    }

    /// Boundary data scaled by the homotopy parameter: samples are t * phi,
    /// evaluated fresh so the scaling is bit-exact.
    pub fn scaled(&self, t: f64) -> BoundaryData {
        let samples = self.samples.iter().map(|v| t * v).collect();
        BoundaryData {
            grid: self.grid.clone(),
            m: self.m,
            samples,
            analytic: None,
            c2_bound_kappa: t.abs() * self.c2_bound_kappa,
        }
    }

    /// sup over the boundary of |phi| + |phi'| + |phi''| by divided
    /// differences along the boundary parametrization (n = 2 grids; other
    /// dimensions fall back to the value part).
    fn estimate_kappa(&self) -> f64 {
        let m = self.m;
        let vec_norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let mut sup_val = 0.0f64;
        for node in self.grid.boundary_nodes() {
            sup_val = sup_val.max(vec_norm(self.value(node)));
        }
        if self.grid.dim != 2 {
            return sup_val;
        }
        let mut sup_d1 = 0.0f64;
        let mut sup_d2 = 0.0f64;
        for curve in self.grid.boundary_curves() {
            let nodes = &curve.nodes;
            let len = nodes.len();
            if len < 3 || curve.step <= 0.0 {
                continue;
            }
            let range: Box<dyn Iterator<Item = usize>> = if curve.closed {
                Box::new(0..len)
            } else {
                Box::new(1..len - 1)
            };
            for i in range {
                let prev = self.value(nodes[(i + len - 1) % len]);
                let cur = self.value(nodes[i]);
                let next = self.value(nodes[(i + 1) % len]);
                let mut d1 = vec![0.0; m];
                let mut d2 = vec![0.0; m];
                for t in 0..m {
                    d1[t] = (next[t] - prev[t]) / (2.0 * curve.step);
                    d2[t] = (next[t] - 2.0 * cur[t] + prev[t]) / (curve.step * curve.step);
                }
                sup_d1 = sup_d1.max(vec_norm(&d1));
                sup_d2 = sup_d2.max(vec_norm(&d2));
            }
        }
        sup_val + sup_d1 + sup_d2
    }
}

/// Discrete acausality margin: 1 minus the largest Lipschitz ratio of phi
/// over all distinct boundary node pairs (brute force). Positive means the
/// sampled data is acausal; non-positive values are returned, not errors.
pub fn acausality_margin(data: &BoundaryData) -> f64 {
    let grid = &data.grid;
    let nodes: Vec<usize> = grid.boundary_nodes().collect();
    assert!(nodes.len() >= 2, "need at least two boundary nodes");
    let m = data.m;
    let dim = grid.dim;
    let mut worst = 0.0f64;
    for (a, &p) in nodes.iter().enumerate() {
        let xp = grid.coords(p);
        let fp = data.value(p);
        for &q in nodes.iter().skip(a + 1) {
            let xq = grid.coords(q);
            let fq = data.value(q);
            let mut dx = 0.0;
            for k in 0..dim {
                let d = xp[k] - xq[k];
                dx += d * d;
            }
            let mut df = 0.0;
            for t in 0..m {
                let d = fp[t] - fq[t];
                df += d * d;
            }
            if dx > 0.0 {
                worst = worst.max((df / dx).sqrt());
            }
        }
    }
    1.0 - worst
}

/// Componentwise discrete-harmonic extension of the boundary data: solves
/// the Laplace equation per component with Dirichlet values phi.
pub fn extend_to_interior(data: &BoundaryData) -> Result<GraphField> {
    let grid = data.grid.clone();
    let m = data.m;
    // start from zero interior, prescribed boundary
    let mut field = GraphField::zeros(grid.clone(), m);
    for node in grid.boundary_nodes() {
        let vals = data.value(node).to_vec();
        field.set_value(node, &vals);
    }
    let ndof = grid.n_interior() * m;
    if ndof == 0 {
        return Ok(field);
    }
    // stiffness: K = -(volume Hessian at the zero field), the plain
    // Laplacian decoupled over components
    let zero = GraphField::zeros(grid.clone(), m);
    let h = element::volume_hessian(&zero)?;
    let stiffness_neg = h; // negative definite
    // right-hand side from the boundary coupling
    let div0 = element::flux_divergence(&field, &Coeff::Identity)?;
    let mut rhs = vec![0.0; ndof];
    for (rank, &node) in grid.interior_nodes.iter().enumerate() {
        for t in 0..m {
            rhs[rank * m + t] = grid.node_volume[node] * div0[node * m + t];
        }
    }
    // solve (-H) delta = rhs
    let mut neg = stiffness_neg;
    for v in neg.values.iter_mut() {
        *v = -*v;
    }
    let delta = linalg::cg_solve(&neg, &rhs, 1e-13, 20 * ndof + 200)?;
    for (rank, &node) in grid.interior_nodes.iter().enumerate() {
        for t in 0..m {
            field.values[node * m + t] += delta[rank * m + t];
        }
    }
    Ok(field)
}

/// Named boundary presets accepted by run configs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case")]
pub enum BoundaryPreset {
    /// phi identically equal to a constant vector
    Constant { value: Vec<f64> },
    /// phi(x) = A x with an m x n matrix A
    Affine { matrix: Vec<Vec<f64>> },
    /// component t is amplitude[t] * sin(2 pi frequency[t] * x_axis),
    /// cycling the driving axis with the component index
    Sinusoidal {
        amplitude: Vec<f64>,
        frequency: Vec<f64>,
    },
    /// first component K asinh(|x| / K), the rotationally symmetric
    /// maximal profile; remaining components zero
    CatenoidTrace { k: f64 },
}

impl BoundaryPreset {
    /// Construct the analytic map for a given signature.
    pub fn build(&self, grid: Arc<StructuredGrid>, n: usize, m: usize) -> Result<BoundaryData> {
        if grid.dim != n {
            return Err(Error::Config(format!(
                "grid dimension {} does not match signature n = {n}",
                grid.dim
            )));
        }
        let map: AnalyticMap = match self {
            BoundaryPreset::Constant { value } => {
                if value.len() != m {
                    return Err(Error::Config(format!(
                        "constant preset has {} components, signature m = {m}",
                        value.len()
                    )));
                }
                let v = value.clone();
                Arc::new(move |_x: &[f64]| v.clone())
            }
            BoundaryPreset::Affine { matrix } => {
                if matrix.len() != m || matrix.iter().any(|row| row.len() != n) {
                    return Err(Error::Config(format!(
                        "affine preset matrix must be {m} x {n}"
                    )));
                }
                let a = matrix.clone();
                Arc::new(move |x: &[f64]| {
                    a.iter()
                        .map(|row| row.iter().zip(x).map(|(c, xi)| c * xi).sum())
                        .collect()
                })
            }
            BoundaryPreset::Sinusoidal { amplitude, frequency } => {
                if amplitude.len() != m || frequency.len() != m {
                    return Err(Error::Config(format!(
                        "sinusoidal preset needs {m} amplitudes and frequencies"
                    )));
                }
                let amp = amplitude.clone();
                let freq = frequency.clone();
                Arc::new(move |x: &[f64]| {
                    (0..amp.len())
                        .map(|t| {
                            let axis = t % x.len();
                            amp[t] * (2.0 * std::f64::consts::PI * freq[t] * x[axis]).sin()
                        })
                        .collect()
                })
            }
            BoundaryPreset::CatenoidTrace { k } => {
                if *k <= 0.0 {
                    return Err(Error::Config("catenoid_trace needs k > 0".into()));
                }
                let k = *k;
                Arc::new(move |x: &[f64]| {
                    let r = x.iter().map(|a| a * a).sum::<f64>().sqrt();
                    let mut v = vec![0.0; m];
                    v[0] = k * (r / k).asinh();
                    v
                })
            }
        };
        BoundaryData::from_fn(grid, m, map)
    }
}

/// Maximum graph energy of a field restricted to boundary nodes; helper
/// shared by diagnostics (not part of the acausality logic).
pub fn is_polar(grid: &StructuredGrid) -> bool {
    matches!(grid.kind, GridKind::Polar { .. })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, gradient_at, DomainSpec};

    fn unit_box(counts: &[usize]) -> Arc<StructuredGrid> {
        let bounds = vec![[0.0, 1.0]; counts.len()];
        Arc::new(build_grid(&DomainSpec::CartesianBox { bounds, counts: counts.to_vec() }).unwrap())
    }

    #[test]
    fn margin_examples() {
        let g = unit_box(&[9, 9]);
        let constant = BoundaryData::from_fn(g.clone(), 2, Arc::new(|_| vec![1.0, -0.5])).unwrap();
        assert!((acausality_margin(&constant) - 1.0).abs() < 1e-15);

        let half = BoundaryData::from_fn(g.clone(), 1, Arc::new(|x| vec![0.5 * x[0]])).unwrap();
        assert!((acausality_margin(&half) - 0.5).abs() < 1e-12);

        let causal = BoundaryData::from_fn(g, 1, Arc::new(|x| vec![x[0]])).unwrap();
        assert!(acausality_margin(&causal).abs() < 1e-12);
    }

    #[test]
    fn margin_invariances() {
        let g = unit_box(&[7, 7]);
        let base = BoundaryData::from_fn(
            g.clone(),
            2,
            Arc::new(|x| vec![0.2 * x[0] + 0.1 * x[1], 0.15 * (3.0 * x[0]).sin()]),
        )
        .unwrap();
        let mu = acausality_margin(&base);

        // adding a constant vector
        let shifted = BoundaryData::from_fn(
            g.clone(),
            2,
            Arc::new(|x| vec![0.2 * x[0] + 0.1 * x[1] + 5.0, 0.15 * (3.0 * x[0]).sin() - 2.0]),
        )
        .unwrap();
        assert!((acausality_margin(&shifted) - mu).abs() < 1e-13);

        // rotating the target R^m
        let angle = 0.7f64;
        let (s, c) = angle.sin_cos();
        let rotated = BoundaryData::from_fn(
            g.clone(),
            2,
            Arc::new(move |x| {
                let a = 0.2 * x[0] + 0.1 * x[1];
                let b = 0.15 * (3.0 * x[0]).sin();
                vec![c * a - s * b, s * a + c * b]
            }),
        )
        .unwrap();
        assert!((acausality_margin(&rotated) - mu).abs() < 1e-13);

        // homotopy scaling: mu0(t phi) = 1 - t (1 - mu0(phi))
        for t in [0.25, 0.5, 0.75] {
            let scaled = base.scaled(t);
            let expect = 1.0 - t * (1.0 - mu);
            assert!((acausality_margin(&scaled) - expect).abs() < 1e-13);
        }
    }

    #[test]
    fn harmonic_extension_constant_and_affine() {
        let g = unit_box(&[9, 9]);
        let constant = BoundaryData::from_fn(g.clone(), 1, Arc::new(|_| vec![2.5])).unwrap();
        let u = extend_to_interior(&constant).unwrap();
        for node in 0..g.n_nodes {
            assert!((u.value(node)[0] - 2.5).abs() < 1e-10);
        }

        let affine =
            BoundaryData::from_fn(g.clone(), 2, Arc::new(|x| vec![0.3 * x[0] - 0.2 * x[1], x[1]]))
                .unwrap();
        let u = extend_to_interior(&affine).unwrap();
        for node in 0..g.n_nodes {
            let x = g.coords(node);
            assert!((u.value(node)[0] - (0.3 * x[0] - 0.2 * x[1])).abs() < 1e-10);
            assert!((u.value(node)[1] - x[1]).abs() < 1e-10);
        }
    }

    #[test]
    fn harmonic_extension_maximum_principle() {
        let g = unit_box(&[11, 11]);
        let data = BoundaryData::from_fn(g.clone(), 1, Arc::new(|x| vec![x[0] * x[0]])).unwrap();
        let u = extend_to_interior(&data).unwrap();
        let bmax = g
            .boundary_nodes()
            .map(|p| u.value(p)[0])
            .fold(f64::NEG_INFINITY, f64::max);
        let bmin = g
            .boundary_nodes()
            .map(|p| u.value(p)[0])
            .fold(f64::INFINITY, f64::min);
        for &node in &g.interior_nodes {
            let v = u.value(node)[0];
            assert!(v <= bmax + 1e-10 && v >= bmin - 1e-10, "value {v} escapes [{bmin}, {bmax}]");
        }
    }

    #[test]
    fn catenoid_trace_preset_is_spacelike_on_annulus() {
        let g = Arc::new(
            build_grid(&DomainSpec::PolarAnnulus { r0: 1.0, r1: 2.0, counts: [9, 32] }).unwrap(),
        );
        let data = BoundaryPreset::CatenoidTrace { k: 1.0 }
            .build(g.clone(), 2, 1)
            .unwrap();
        assert!(acausality_margin(&data) > 0.0);
        let u = extend_to_interior(&data).unwrap();
        for &node in &g.interior_nodes {
            let jm = gradient_at(&u, node);
            assert!(crate::lorentz::spacelike_margin(&jm) > 0.0);
        }
    }

    #[test]
    fn kappa_estimate_matches_affine_slope() {
        let g = unit_box(&[17, 17]);
        let data = BoundaryData::from_fn(g, 1, Arc::new(|x| vec![0.5 * x[0]])).unwrap();
        // |phi| sup = 0.5, |phi'| sup along boundary = 0.5, second derivative 0
        assert!((data.c2_bound_kappa - 1.0).abs() < 1e-10);
    }
}
