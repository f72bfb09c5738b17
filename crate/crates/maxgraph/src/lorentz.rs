//! Split-signature bilinear algebra: inner products, causal classification,
//! induced metrics of graph tangent planes, and spacelike margins.
//!
//! Everything here is pointwise and pure; the grid and solver modules call
//! these on every node and quadrature point.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, DMat};

/// Ambient signature (n, m): n spatial dimensions, m temporal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signature {
    pub n: usize,
    pub m: usize,
}

impl Signature {
    pub fn new(n: usize, m: usize) -> Result<Self> {
        if n < 1 || m < 1 {
            return Err(Error::invalid(format!(
                "signature requires n >= 1 and m >= 1, got ({n}, {m})"
            )));
        }
        Ok(Signature { n, m })
    }
}

/// A point or vector of R^{n,m} split into spatial and temporal parts.
#[derive(Debug, Clone, PartialEq)]
pub struct SpacetimeVector {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl SpacetimeVector {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        SpacetimeVector { x, y }
    }

    pub fn zeros(sig: Signature) -> Self {
        SpacetimeVector {
            x: vec![0.0; sig.n],
            y: vec![0.0; sig.m],
        }
    }

    pub fn signature(&self) -> (usize, usize) {
        (self.x.len(), self.y.len())
    }

    /// Euclidean norm squared of both parts, used for scale-aware null tests.
    pub fn euclidean_norm_sq(&self) -> f64 {
        self.x.iter().map(|a| a * a).sum::<f64>() + self.y.iter().map(|a| a * a).sum::<f64>()
    }

    pub fn scale(&self, s: f64) -> SpacetimeVector {
        SpacetimeVector {
            x: self.x.iter().map(|a| a * s).collect(),
            y: self.y.iter().map(|a| a * s).collect(),
        }
    }

    pub fn add(&self, other: &SpacetimeVector) -> SpacetimeVector {
        SpacetimeVector {
            x: self.x.iter().zip(&other.x).map(|(a, b)| a + b).collect(),
            y: self.y.iter().zip(&other.y).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &SpacetimeVector) -> SpacetimeVector {
        SpacetimeVector {
            x: self.x.iter().zip(&other.x).map(|(a, b)| a - b).collect(),
            y: self.y.iter().zip(&other.y).map(|(a, b)| a - b).collect(),
        }
    }
}

/// Causal class of a vector by the sign of its self inner product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CausalClass {
    Spacelike,
    Null,
    Timelike,
}

/// x . x' - y . y', the signature-(n, m) bilinear form.
pub fn lorentz_inner(v: &SpacetimeVector, w: &SpacetimeVector) -> Result<f64> {
    if v.signature() != w.signature() {
        return Err(Error::DimensionMismatch {
            expected: v.x.len() + v.y.len(),
            got: w.x.len() + w.y.len(),
            context: "lorentz_inner signature",
        });
    }
    let sx: f64 = v.x.iter().zip(&w.x).map(|(a, b)| a * b).sum();
    let sy: f64 = v.y.iter().zip(&w.y).map(|(a, b)| a * b).sum();
    Ok(sx - sy)
}

/// Classify a vector as spacelike, null, or timelike. The null band is
/// 1e-14 relative to the Euclidean size of the vector.
pub fn causal_class(v: &SpacetimeVector) -> CausalClass {
    let q = lorentz_inner(v, v).expect("self inner product");
    let scale = v.euclidean_norm_sq();
    if q.abs() <= 1e-14 * scale {
        CausalClass::Null
    } else if q > 0.0 {
        CausalClass::Spacelike
    } else {
        CausalClass::Timelike
    }
}

/// Slope matrix of a graph element: entry (i, theta) is the derivative of
/// component theta along spatial axis i.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMatrix {
    /// n x m, row i = derivatives of all components along axis i
    pub j: DMat,
}

impl GradientMatrix {
    pub fn zeros(sig: Signature) -> Self {
        GradientMatrix {
            j: DMat::zeros(sig.n, sig.m),
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        GradientMatrix {
            j: DMat::from_rows(rows),
        }
    }

    pub fn n(&self) -> usize {
        self.j.rows
    }

    pub fn m(&self) -> usize {
        self.j.cols
    }

    /// I - J J^T, the Gram matrix of the graph tangent plane.
    pub fn gram(&self) -> DMat {
        let n = self.n();
        let mut g = DMat::identity(n);
        for i in 0..n {
            for k in 0..n {
                let mut s = 0.0;
                for t in 0..self.m() {
                    s += self.j[(i, t)] * self.j[(k, t)];
                }
                g[(i, k)] -= s;
            }
        }
        g
    }

    /// Largest singular value of the slope matrix.
    pub fn sigma_max(&self) -> f64 {
        let n = self.n();
        let mut jjt = DMat::zeros(n, n);
        for i in 0..n {
            for k in 0..n {
                let mut s = 0.0;
                for t in 0..self.m() {
                    s += self.j[(i, t)] * self.j[(k, t)];
                }
                jjt[(i, k)] = s;
            }
        }
        linalg::sym_max_eig(&jjt).max(0.0).sqrt()
    }
}

/// Induced metric data at one graph element.
///
/// `g_inv` and `det_g` are populated only when the element is spacelike
/// (`min_eig > 0`); a non-spacelike element is a valid classification
/// outcome reported through `min_eig`, not an error.
#[derive(Debug, Clone)]
pub struct MetricTensor {
    pub g: DMat,
    pub g_inv: Option<DMat>,
    pub det_g: Option<f64>,
    pub min_eig: f64,
}

impl MetricTensor {
    pub fn is_spacelike(&self) -> bool {
        self.min_eig > 0.0
    }
}

/// Induced metric g = I - J J^T of a graph element, with inverse and
/// determinant when spacelike.
pub fn induced_metric(j: &GradientMatrix) -> MetricTensor {
    let g = j.gram();
    let min_eig = linalg::sym_min_eig(&g);
    if min_eig > 0.0 {
        let det_g = linalg::det(&g);
        let g_inv = linalg::inverse(&g);
        MetricTensor {
            g,
            g_inv,
            det_g: Some(det_g),
            min_eig,
        }
    } else {
        MetricTensor {
            g,
            g_inv: None,
            det_g: None,
            min_eig,
        }
    }
}

/// 1 - sigma_max(J)^2: positive iff the graph element is spacelike.
/// Equals the smallest eigenvalue of the induced metric.
pub fn spacelike_margin(j: &GradientMatrix) -> f64 {
    let s = j.sigma_max();
    1.0 - s * s
}
