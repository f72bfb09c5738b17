//! Structured discretizations of the domain: Cartesian boxes in any
//! dimension and polar annuli/disks in the plane, plus vector-valued
//! fields on them and the node-stencil calculus (gradients, Hessians,
//! divergences) every diagnostic consumes.
//!
//! Polar stencils carry trigonometric correction factors so that fields
//! affine in the ambient coordinates differentiate exactly, matching the
//! behaviour of plain central differences on a box.

use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::element;
use crate::error::{Error, Result};
use crate::linalg::DMat;
use crate::lorentz::GradientMatrix;

/// Analytic description of the domain, as given in configs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DomainSpec {
    CartesianBox {
        /// per-axis intervals [a_i, b_i]
        bounds: Vec<[f64; 2]>,
        /// nodes per axis, each >= 3
        counts: Vec<usize>,
    },
    PolarAnnulus {
        /// inner radius; 0 means a disk with a single shared center node
        r0: f64,
        r1: f64,
        /// [radial nodes, angular nodes]
        counts: [usize; 2],
    },
}

/// Per-kind grid data.
#[derive(Debug, Clone)]
pub enum GridKind {
    Box {
        bounds: Vec<[f64; 2]>,
        counts: Vec<usize>,
        spacing: Vec<f64>,
    },
    Polar {
        r0: f64,
        r1: f64,
        nr: usize,
        ntheta: usize,
        dr: f64,
        dtheta: f64,
        /// r0 == 0: single shared center node
        disk: bool,
        /// dtheta / sin(dtheta): makes central angular differences exact on
        /// ambient-affine fields
        grad_correction: f64,
        /// (dtheta/2)^2 / sin^2(dtheta/2): same for second differences
        hess_correction: f64,
    },
}

/// A structured grid: node coordinates, boundary classification, cell
/// connectivity and lumped node volumes.
#[derive(Debug)]
pub struct StructuredGrid {
    pub kind: GridKind,
    /// spatial dimension n
    pub dim: usize,
    /// flat [node * dim + axis], Cartesian embedding
    pub node_coords: Vec<f64>,
    pub is_boundary: Vec<bool>,
    /// exact Euclidean distance to the analytic boundary
    pub dist_to_boundary: Vec<f64>,
    /// flat [cell * 2^dim + corner], tensor corner order (bit k set = high
    /// side along axis k)
    pub cells: Vec<usize>,
    pub n_nodes: usize,
    pub n_cells: usize,
    /// interior node ids in ascending order
    pub interior_nodes: Vec<usize>,
    /// node -> rank among interior nodes, usize::MAX for boundary nodes
    pub interior_rank: Vec<usize>,
    /// lumped volume of each node (integral of its hat function)
    pub node_volume: Vec<f64>,
}

impl StructuredGrid {
    pub fn corners_per_cell(&self) -> usize {
        1 << self.dim
    }

    pub fn cell_corners(&self, cell: usize) -> &[usize] {
        let k = self.corners_per_cell();
        &self.cells[cell * k..(cell + 1) * k]
    }

    pub fn coords(&self, node: usize) -> &[f64] {
        &self.node_coords[node * self.dim..(node + 1) * self.dim]
    }

    pub fn boundary_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_nodes).filter(|&p| self.is_boundary[p])
    }

    pub fn n_interior(&self) -> usize {
        self.interior_nodes.len()
    }

    /// Polar node decomposition (ring index, angular index). The disk
    /// center is (0, 0).
    pub fn polar_indices(&self, node: usize) -> (usize, usize) {
        match &self.kind {
            GridKind::Polar { ntheta, disk, .. } => {
                if *disk {
                    if node == 0 {
                        (0, 0)
                    } else {
                        ((node - 1) / ntheta + 1, (node - 1) % ntheta)
                    }
                } else {
                    (node / ntheta, node % ntheta)
                }
            }
            _ => panic!("polar_indices on a box grid"),
        }
    }

    pub fn polar_node(&self, ir: usize, it: usize) -> usize {
        match &self.kind {
            GridKind::Polar { ntheta, disk, .. } => {
                if *disk {
                    if ir == 0 {
                        0
                    } else {
                        1 + (ir - 1) * ntheta + (it % ntheta)
                    }
                } else {
                    ir * ntheta + (it % ntheta)
                }
            }
            _ => panic!("polar_node on a box grid"),
        }
    }

    /// Multi-index of a box node, axis 0 fastest.
    pub fn box_indices(&self, node: usize) -> Vec<usize> {
        match &self.kind {
            GridKind::Box { counts, .. } => {
                let mut rest = node;
                counts
                    .iter()
                    .map(|&c| {
                        let i = rest % c;
                        rest /= c;
                        i
                    })
                    .collect()
            }
            _ => panic!("box_indices on a polar grid"),
        }
    }

    pub fn box_node(&self, idx: &[usize]) -> usize {
        match &self.kind {
            GridKind::Box { counts, .. } => {
                let mut node = 0;
                for k in (0..idx.len()).rev() {
                    node = node * counts[k] + idx[k];
                }
                node
            }
            _ => panic!("box_node on a polar grid"),
        }
    }

    /// Inward unit normal at a boundary node, when uniquely defined
    /// (box corners and edges shared by several faces return None).
    pub fn inward_normal(&self, node: usize) -> Option<Vec<f64>> {
        if !self.is_boundary[node] {
            return None;
        }
        match &self.kind {
            GridKind::Box { counts, .. } => {
                let idx = self.box_indices(node);
                let mut normal = vec![0.0; self.dim];
                let mut hits = 0;
                for k in 0..self.dim {
                    if idx[k] == 0 {
                        normal[k] = 1.0;
                        hits += 1;
                    } else if idx[k] == counts[k] - 1 {
                        normal[k] = -1.0;
                        hits += 1;
                    }
                }
                if hits == 1 {
                    Some(normal)
                } else {
                    None
                }
            }
            GridKind::Polar { nr, disk, .. } => {
                let (ir, it) = self.polar_indices(node);
                let theta = self.node_theta(it);
                let er = [theta.cos(), theta.sin()];
                if ir == nr - 1 {
                    Some(vec![-er[0], -er[1]])
                } else if ir == 0 && !disk {
                    Some(vec![er[0], er[1]])
                } else {
                    None
                }
            }
        }
    }

    fn node_theta(&self, it: usize) -> f64 {
        match &self.kind {
            GridKind::Polar { dtheta, .. } => it as f64 * dtheta,
            _ => unreachable!(),
        }
    }

    /// Closed or open chains of boundary nodes, consecutive along the
    /// boundary, with the arclength step between neighbours. Only defined
    /// for n = 2.
    pub fn boundary_curves(&self) -> Vec<BoundaryCurve> {
        match &self.kind {
            GridKind::Box { counts, .. } => {
                assert_eq!(self.dim, 2, "boundary_curves requires n = 2");
                let (cx, cy) = (counts[0], counts[1]);
                let hx = self.spacing_along(0);
                let hy = self.spacing_along(1);
                let bottom: Vec<usize> = (0..cx).map(|i| self.box_node(&[i, 0])).collect();
                let top: Vec<usize> = (0..cx).map(|i| self.box_node(&[i, cy - 1])).collect();
                let left: Vec<usize> = (0..cy).map(|j| self.box_node(&[0, j])).collect();
                let right: Vec<usize> = (0..cy).map(|j| self.box_node(&[cx - 1, j])).collect();
                vec![
                    BoundaryCurve { nodes: bottom, step: hx, closed: false },
                    BoundaryCurve { nodes: top, step: hx, closed: false },
                    BoundaryCurve { nodes: left, step: hy, closed: false },
                    BoundaryCurve { nodes: right, step: hy, closed: false },
                ]
            }
            GridKind::Polar { r0, r1, nr, ntheta, dtheta, disk, .. } => {
                let mut curves = Vec::new();
                if !disk {
                    let inner: Vec<usize> = (0..*ntheta).map(|it| self.polar_node(0, it)).collect();
                    curves.push(BoundaryCurve { nodes: inner, step: r0 * dtheta, closed: true });
                }
                let outer: Vec<usize> = (0..*ntheta).map(|it| self.polar_node(nr - 1, it)).collect();
                curves.push(BoundaryCurve { nodes: outer, step: r1 * dtheta, closed: true });
                curves
            }
        }
    }

    fn spacing_along(&self, axis: usize) -> f64 {
        match &self.kind {
            GridKind::Box { spacing, .. } => spacing[axis],
            _ => unreachable!(),
        }
    }
}

/// A consecutive run of boundary nodes with uniform arclength step.
#[derive(Debug, Clone)]
pub struct BoundaryCurve {
    pub nodes: Vec<usize>,
    pub step: f64,
    pub closed: bool,
}

/// Build a grid from the analytic domain description.
pub fn build_grid(spec: &DomainSpec) -> Result<StructuredGrid> {
    match spec {
        DomainSpec::CartesianBox { bounds, counts } => build_box(bounds, counts),
        DomainSpec::PolarAnnulus { r0, r1, counts } => build_polar(*r0, *r1, counts[0], counts[1]),
    }
}

fn build_box(bounds: &[[f64; 2]], counts: &[usize]) -> Result<StructuredGrid> {
    let dim = bounds.len();
    if dim == 0 || dim != counts.len() {
        return Err(Error::invalid("box bounds/counts dimension mismatch"));
    }
    for (k, b) in bounds.iter().enumerate() {
        if !(b[1] > b[0]) {
            return Err(Error::invalid(format!(
                "degenerate bounds along axis {k}: [{}, {}]",
                b[0], b[1]
            )));
        }
        if counts[k] < 3 {
            return Err(Error::invalid(format!(
                "need at least 3 nodes per axis, got {} along axis {k}",
                counts[k]
            )));
        }
    }
    let spacing: Vec<f64> = (0..dim)
        .map(|k| (bounds[k][1] - bounds[k][0]) / (counts[k] - 1) as f64)
        .collect();
    let n_nodes: usize = counts.iter().product();

    let mut node_coords = vec![0.0; n_nodes * dim];
    let mut is_boundary = vec![false; n_nodes];
    let mut dist = vec![0.0; n_nodes];
    for node in 0..n_nodes {
        let mut rest = node;
        let mut d = f64::INFINITY;
        let mut on_bdry = false;
        for k in 0..dim {
            let i = rest % counts[k];
            rest /= counts[k];
            let x = bounds[k][0] + i as f64 * spacing[k];
            node_coords[node * dim + k] = x;
            if i == 0 || i == counts[k] - 1 {
                on_bdry = true;
            }
            d = d.min((x - bounds[k][0]).min(bounds[k][1] - x));
        }
        is_boundary[node] = on_bdry;
        dist[node] = if on_bdry { 0.0 } else { d };
    }

    // tensor cells
    let cell_counts: Vec<usize> = counts.iter().map(|&c| c - 1).collect();
    let n_cells: usize = cell_counts.iter().product();
    let corners = 1usize << dim;
    let mut cells = vec![0usize; n_cells * corners];
    for cell in 0..n_cells {
        let mut rest = cell;
        let mut base_idx = vec![0usize; dim];
        for k in 0..dim {
            base_idx[k] = rest % cell_counts[k];
            rest /= cell_counts[k];
        }
        for mask in 0..corners {
            let mut node = 0usize;
            for k in (0..dim).rev() {
                let i = base_idx[k] + ((mask >> k) & 1);
                node = node * counts[k] + i;
            }
            cells[cell * corners + mask] = node;
        }
    }

    finish_grid(
        GridKind::Box {
            bounds: bounds.to_vec(),
            counts: counts.to_vec(),
            spacing,
        },
        dim,
        node_coords,
        is_boundary,
        dist,
        cells,
        n_nodes,
        n_cells,
    )
}

fn build_polar(r0: f64, r1: f64, nr: usize, ntheta: usize) -> Result<StructuredGrid> {
    if !(r1 > r0) || r0 < 0.0 {
        return Err(Error::invalid(format!(
            "polar grid needs r1 > r0 >= 0, got r0 = {r0}, r1 = {r1}"
        )));
    }
    if nr < 3 || ntheta < 3 {
        return Err(Error::invalid(format!(
            "need at least 3 nodes per axis, got nr = {nr}, ntheta = {ntheta}"
        )));
    }
    let disk = r0 == 0.0;
    let dr = (r1 - r0) / (nr - 1) as f64;
    let dtheta = 2.0 * std::f64::consts::PI / ntheta as f64;
    let grad_correction = dtheta / dtheta.sin();
    let half = 0.5 * dtheta;
    let hess_correction = (half / half.sin()).powi(2);

    let n_nodes = if disk { 1 + (nr - 1) * ntheta } else { nr * ntheta };
    let mut node_coords = vec![0.0; n_nodes * 2];
    let mut is_boundary = vec![false; n_nodes];
    let mut dist = vec![0.0; n_nodes];

    let node_of = |ir: usize, it: usize| -> usize {
        if disk {
            if ir == 0 { 0 } else { 1 + (ir - 1) * ntheta + (it % ntheta) }
        } else {
            ir * ntheta + (it % ntheta)
        }
    };

    for ir in 0..nr {
        let r = r0 + ir as f64 * dr;
        let its = if disk && ir == 0 { 1 } else { ntheta };
        for it in 0..its {
            let node = node_of(ir, it);
            let th = it as f64 * dtheta;
            node_coords[node * 2] = r * th.cos();
            node_coords[node * 2 + 1] = r * th.sin();
            let on_bdry = ir == nr - 1 || (!disk && ir == 0);
            is_boundary[node] = on_bdry;
            dist[node] = if on_bdry {
                0.0
            } else if disk {
                r1 - r
            } else {
                (r - r0).min(r1 - r)
            };
        }
    }

    // cells: rings (nr - 1) x ntheta, periodic in theta; the disk's inner
    // ring uses degenerate quads with two corners at the shared center
    let n_cells = (nr - 1) * ntheta;
    let mut cells = vec![0usize; n_cells * 4];
    for ir in 0..nr - 1 {
        for it in 0..ntheta {
            let cell = ir * ntheta + it;
            // tensor corner order: bit 0 = radial high side, bit 1 = angular high side
            cells[cell * 4] = node_of(ir, it);
            cells[cell * 4 + 1] = node_of(ir + 1, it);
            cells[cell * 4 + 2] = node_of(ir, it + 1);
            cells[cell * 4 + 3] = node_of(ir + 1, it + 1);
        }
    }

    finish_grid(
        GridKind::Polar {
            r0,
            r1,
            nr,
            ntheta,
            dr,
            dtheta,
            disk,
            grad_correction,
            hess_correction,
        },
        2,
        node_coords,
        is_boundary,
        dist,
        cells,
        n_nodes,
        n_cells,
    )
}

#[allow(clippy::too_many_arguments)]
fn finish_grid(
    kind: GridKind,
    dim: usize,
    node_coords: Vec<f64>,
    is_boundary: Vec<bool>,
    dist_to_boundary: Vec<f64>,
    cells: Vec<usize>,
    n_nodes: usize,
    n_cells: usize,
) -> Result<StructuredGrid> {
    let mut interior_nodes = Vec::new();
    let mut interior_rank = vec![usize::MAX; n_nodes];
    for node in 0..n_nodes {
        if !is_boundary[node] {
            interior_rank[node] = interior_nodes.len();
            interior_nodes.push(node);
        }
    }
    let mut grid = StructuredGrid {
        kind,
        dim,
        node_coords,
        is_boundary,
        dist_to_boundary,
        cells,
        n_nodes,
        n_cells,
        interior_nodes,
        interior_rank,
        node_volume: Vec::new(),
    };
    grid.node_volume = element::node_volumes(&grid);
    Ok(grid)
}

/// A discretized map u: domain -> R^m with values at every node.
#[derive(Debug, Clone)]
pub struct GraphField {
    pub grid: Arc<StructuredGrid>,
    pub m: usize,
    /// flat [node * m + component]
    pub values: Vec<f64>,
}

impl GraphField {
    pub fn zeros(grid: Arc<StructuredGrid>, m: usize) -> Self {
        let values = vec![0.0; grid.n_nodes * m];
        GraphField { grid, m, values }
    }

    pub fn from_fn(grid: Arc<StructuredGrid>, m: usize, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        let mut field = GraphField::zeros(grid, m);
        for node in 0..field.grid.n_nodes {
            let vals = f(field.grid.coords(node));
            assert_eq!(vals.len(), m);
            field.values[node * m..(node + 1) * m].copy_from_slice(&vals);
        }
        field
    }

    #[inline]
    pub fn value(&self, node: usize) -> &[f64] {
        &self.values[node * self.m..(node + 1) * self.m]
    }

    pub fn set_value(&mut self, node: usize, vals: &[f64]) {
        self.values[node * self.m..(node + 1) * self.m].copy_from_slice(vals);
    }

    pub fn sup_diff(&self, other: &GraphField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn assert_finite(&self) -> Result<()> {
        for (k, v) in self.values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::invalid(format!(
                    "non-finite field value at node {}",
                    k / self.m
                )));
            }
        }
        Ok(())
    }
}

/// First-order node stencil in grid coordinates, before any chart
/// conversion: returns d/d(axis) of every component at `node`, using
/// central differences where both neighbours exist and second-order
/// one-sided differences at boundary rows.
fn axis_derivative_box(field: &GraphField, idx: &[usize], axis: usize) -> Vec<f64> {
    let grid = &field.grid;
    let (counts, spacing) = match &grid.kind {
        GridKind::Box { counts, spacing, .. } => (counts, spacing),
        _ => unreachable!(),
    };
    let m = field.m;
    let h = spacing[axis];
    let c = counts[axis];
    let i = idx[axis];
    let mut shifted = idx.to_vec();
    let mut out = vec![0.0; m];
    if i > 0 && i + 1 < c {
        shifted[axis] = i + 1;
        let up = field.value(grid.box_node(&shifted));
        shifted[axis] = i - 1;
        let dn = field.value(grid.box_node(&shifted));
        for t in 0..m {
            out[t] = (up[t] - dn[t]) / (2.0 * h);
        }
    } else if i == 0 {
        let f0 = field.value(grid.box_node(idx));
        shifted[axis] = 1;
        let f1 = field.value(grid.box_node(&shifted));
        shifted[axis] = 2;
        let f2 = field.value(grid.box_node(&shifted));
        for t in 0..m {
            out[t] = (-3.0 * f0[t] + 4.0 * f1[t] - f2[t]) / (2.0 * h);
        }
    } else {
        let f0 = field.value(grid.box_node(idx));
        shifted[axis] = c - 2;
        let f1 = field.value(grid.box_node(&shifted));
        shifted[axis] = c - 3;
        let f2 = field.value(grid.box_node(&shifted));
        for t in 0..m {
            out[t] = (3.0 * f0[t] - 4.0 * f1[t] + f2[t]) / (2.0 * h);
        }
    }
    out
}

/// Radial derivative on a polar grid (central interior, one-sided at the
/// radial extremes).
fn radial_derivative(field: &GraphField, ir: usize, it: usize) -> Vec<f64> {
    let grid = &field.grid;
    let (nr, dr) = match &grid.kind {
        GridKind::Polar { nr, dr, .. } => (*nr, *dr),
        _ => unreachable!(),
    };
    let m = field.m;
    let mut out = vec![0.0; m];
    if ir > 0 && ir + 1 < nr {
        let up = field.value(grid.polar_node(ir + 1, it));
        let dn = field.value(grid.polar_node(ir - 1, it));
        for t in 0..m {
            out[t] = (up[t] - dn[t]) / (2.0 * dr);
        }
    } else if ir == 0 {
        let f0 = field.value(grid.polar_node(0, it));
        let f1 = field.value(grid.polar_node(1, it));
        let f2 = field.value(grid.polar_node(2, it));
        for t in 0..m {
            out[t] = (-3.0 * f0[t] + 4.0 * f1[t] - f2[t]) / (2.0 * dr);
        }
    } else {
        let f0 = field.value(grid.polar_node(ir, it));
        let f1 = field.value(grid.polar_node(ir - 1, it));
        let f2 = field.value(grid.polar_node(ir - 2, it));
        for t in 0..m {
            out[t] = (3.0 * f0[t] - 4.0 * f1[t] + f2[t]) / (2.0 * dr);
        }
    }
    out
}

/// Corrected angular derivative d/dtheta at a polar node.
fn angular_derivative(field: &GraphField, ir: usize, it: usize) -> Vec<f64> {
    let grid = &field.grid;
    let (ntheta, dtheta, corr) = match &grid.kind {
        GridKind::Polar { ntheta, dtheta, grad_correction, .. } => {
            (*ntheta, *dtheta, *grad_correction)
        }
        _ => unreachable!(),
    };
    let m = field.m;
    let up = field.value(grid.polar_node(ir, (it + 1) % ntheta));
    let dn = field.value(grid.polar_node(ir, (it + ntheta - 1) % ntheta));
    let mut out = vec![0.0; m];
    for t in 0..m {
        out[t] = (up[t] - dn[t]) / (2.0 * dtheta) * corr;
    }
    out
}

/// Discrete gradient of the field at a node, in ambient Cartesian
/// components. Exact on fields affine in the ambient coordinates.
pub fn gradient_at(field: &GraphField, node: usize) -> GradientMatrix {
    let grid = &field.grid;
    let m = field.m;
    match &grid.kind {
        GridKind::Box { .. } => {
            let idx = grid.box_indices(node);
            let mut rows = Vec::with_capacity(grid.dim);
            for axis in 0..grid.dim {
                rows.push(axis_derivative_box(field, &idx, axis));
            }
            GradientMatrix::from_rows(&rows)
        }
        GridKind::Polar { nr, ntheta, dr, dtheta, disk, .. } => {
            let (ir, it) = grid.polar_indices(node);
            if *disk && ir == 0 {
                // shared center node: combine second-order one-sided radial
                // derivatives along every ray
                let mut gx = vec![0.0; m];
                let mut gy = vec![0.0; m];
                for jt in 0..*ntheta {
                    let f0 = field.value(node);
                    let f1 = field.value(grid.polar_node(1, jt));
                    let f2 = field.value(grid.polar_node(2, jt));
                    let th = jt as f64 * dtheta;
                    let (s, c) = th.sin_cos();
                    for t in 0..m {
                        let d = (-3.0 * f0[t] + 4.0 * f1[t] - f2[t]) / (2.0 * dr);
                        gx[t] += d * c;
                        gy[t] += d * s;
                    }
                }
                let scale = 2.0 / *ntheta as f64;
                for t in 0..m {
                    gx[t] *= scale;
                    gy[t] *= scale;
                }
                return GradientMatrix::from_rows(&[gx, gy]);
            }
            let _ = nr;
            let r = (r_of(grid, ir)).max(f64::MIN_POSITIVE);
            let du_dr = radial_derivative(field, ir, it);
            let du_dth = angular_derivative(field, ir, it);
            let th = it as f64 * dtheta;
            let (s, c) = th.sin_cos();
            let mut gx = vec![0.0; m];
            let mut gy = vec![0.0; m];
            for t in 0..m {
                gx[t] = du_dr[t] * c - du_dth[t] * s / r;
                gy[t] = du_dr[t] * s + du_dth[t] * c / r;
            }
            GradientMatrix::from_rows(&[gx, gy])
        }
    }
}

fn r_of(grid: &StructuredGrid, ir: usize) -> f64 {
    match &grid.kind {
        GridKind::Polar { r0, dr, .. } => r0 + ir as f64 * dr,
        _ => unreachable!(),
    }
}

/// Discrete ambient-coordinate Hessian of every component at an interior
/// node. Returns one n x n matrix per component. The disk center is not
/// supported (callers sample around it).
pub fn hessian_at(field: &GraphField, node: usize) -> Option<Vec<DMat>> {
    let grid = &field.grid;
    let m = field.m;
    let n = grid.dim;
    match &grid.kind {
        GridKind::Box { counts, spacing, .. } => {
            let idx = grid.box_indices(node);
            for k in 0..n {
                if idx[k] == 0 || idx[k] + 1 >= counts[k] {
                    return None;
                }
            }
            let mut out = vec![DMat::zeros(n, n); m];
            let mut shifted = idx.clone();
            for a in 0..n {
                // pure second difference
                shifted.copy_from_slice(&idx);
                shifted[a] = idx[a] + 1;
                let up = field.value(grid.box_node(&shifted));
                shifted[a] = idx[a] - 1;
                let dn = field.value(grid.box_node(&shifted));
                let f0 = field.value(node);
                for t in 0..m {
                    out[t][(a, a)] = (up[t] - 2.0 * f0[t] + dn[t]) / (spacing[a] * spacing[a]);
                }
                for b in a + 1..n {
                    shifted.copy_from_slice(&idx);
                    shifted[a] = idx[a] + 1;
                    shifted[b] = idx[b] + 1;
                    let pp = field.value(grid.box_node(&shifted));
                    shifted[b] = idx[b] - 1;
                    let pm = field.value(grid.box_node(&shifted));
                    shifted[a] = idx[a] - 1;
                    let mm = field.value(grid.box_node(&shifted));
                    shifted[b] = idx[b] + 1;
                    let mp = field.value(grid.box_node(&shifted));
                    for t in 0..m {
                        let v = (pp[t] - pm[t] - mp[t] + mm[t]) / (4.0 * spacing[a] * spacing[b]);
                        out[t][(a, b)] = v;
                        out[t][(b, a)] = v;
                    }
                }
            }
            Some(out)
        }
        GridKind::Polar { nr, ntheta, dr, dtheta, disk, hess_correction, .. } => {
            let (ir, it) = grid.polar_indices(node);
            if (*disk && ir <= 0) || ir == 0 || ir + 1 >= *nr {
                return None;
            }
            let r = r_of(grid, ir);
            let th = it as f64 * dtheta;
            let (s, c) = th.sin_cos();
            let er = [c, s];
            let et = [-s, c];

            let f0 = field.value(node);
            let fr_up = field.value(grid.polar_node(ir + 1, it));
            let fr_dn = field.value(grid.polar_node(ir - 1, it));
            let ft_up = field.value(grid.polar_node(ir, (it + 1) % ntheta));
            let ft_dn = field.value(grid.polar_node(ir, (it + ntheta - 1) % ntheta));

            let du_dr = radial_derivative(field, ir, it);
            let du_dth = angular_derivative(field, ir, it);
            // d/dr of the corrected angular derivative; the angular
            // derivative of the shared disk center is identically zero
            let dth_up = angular_derivative(field, ir + 1, it);
            let dth_dn = if *disk && ir == 1 {
                vec![0.0; m]
            } else {
                angular_derivative(field, ir - 1, it)
            };

            let mut out = vec![DMat::zeros(2, 2); m];
            for t in 0..m {
                let u_rr = (fr_up[t] - 2.0 * f0[t] + fr_dn[t]) / (dr * dr);
                let u_tt =
                    (ft_up[t] - 2.0 * f0[t] + ft_dn[t]) / (dtheta * dtheta) * hess_correction;
                let u_rt = (dth_up[t] - dth_dn[t]) / (2.0 * dr);
                for i in 0..2 {
                    for j in 0..2 {
                        out[t][(i, j)] = u_rr * er[i] * er[j]
                            + (u_rt / r) * (er[i] * et[j] + et[i] * er[j])
                            + (u_tt / (r * r)) * et[i] * et[j]
                            + (du_dr[t] / r) * et[i] * et[j]
                            - (du_dth[t] / (r * r)) * (et[i] * er[j] + er[i] * et[j]);
                    }
                }
            }
            Some(out)
        }
    }
}

/// Discrete divergence of a node-sampled Cartesian vector field (one
/// n-vector per node), at an interior node. Central differences with the
/// polar correction factors; the disk center is skipped.
pub fn divergence_at(grid: &StructuredGrid, vectors: &[f64], node: usize) -> Option<f64> {
    let n = grid.dim;
    match &grid.kind {
        GridKind::Box { counts, spacing, .. } => {
            let idx = grid.box_indices(node);
            let mut div = 0.0;
            let mut shifted = idx.clone();
            for a in 0..n {
                if idx[a] == 0 || idx[a] + 1 >= counts[a] {
                    return None;
                }
                shifted.copy_from_slice(&idx);
                shifted[a] = idx[a] + 1;
                let up = vectors[grid.box_node(&shifted) * n + a];
                shifted[a] = idx[a] - 1;
                let dn = vectors[grid.box_node(&shifted) * n + a];
                div += (up - dn) / (2.0 * spacing[a]);
            }
            Some(div)
        }
        GridKind::Polar { nr, ntheta, dr, dtheta, disk, grad_correction, .. } => {
            let (ir, it) = grid.polar_indices(node);
            if ir == 0 || ir + 1 >= *nr || (*disk && ir == 0) {
                return None;
            }
            let r = r_of(grid, ir);
            // div V = (1/r) d(r V_r)/dr + (1/r) d(V_theta)/dtheta
            let radial_comp = |jr: usize, jt: usize| -> f64 {
                let p = grid.polar_node(jr, jt);
                let rr = r_of(grid, jr);
                let tt = (jt % ntheta) as f64 * dtheta;
                let (s, c) = tt.sin_cos();
                rr * (vectors[p * 2] * c + vectors[p * 2 + 1] * s)
            };
            let angular_comp = |jt: usize| -> f64 {
                let p = grid.polar_node(ir, jt % ntheta);
                let tt = (jt % ntheta) as f64 * dtheta;
                let (s, c) = tt.sin_cos();
                -vectors[p * 2] * s + vectors[p * 2 + 1] * c
            };
            let d_rvr = (radial_comp(ir + 1, it) - radial_comp(ir - 1, it)) / (2.0 * dr);
            let d_vth = (angular_comp(it + 1) - angular_comp(it + ntheta - 1)) / (2.0 * dtheta)
                * grad_correction;
            Some(d_rvr / r + d_vth / r)
        }
    }
}

/// Write a field as CSV: one row per node, columns x1..xn, u1..um, and
/// additionally r, theta on polar grids. Full double precision.
pub fn write_field_csv<W: Write>(field: &GraphField, out: &mut W) -> Result<()> {
    let grid = &field.grid;
    let n = grid.dim;
    let polar = matches!(grid.kind, GridKind::Polar { .. });
    let mut header: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    header.extend((1..=field.m).map(|t| format!("u{t}")));
    if polar {
        header.push("r".into());
        header.push("theta".into());
    }
    writeln!(out, "{}", header.join(","))?;
    for node in 0..grid.n_nodes {
        let mut cols: Vec<String> = grid
            .coords(node)
            .iter()
            .map(|v| format!("{v:.16e}"))
            .collect();
        cols.extend(field.value(node).iter().map(|v| format!("{v:.16e}")));
        if polar {
            let (ir, it) = grid.polar_indices(node);
            let r = r_of(grid, ir);
            let theta = match &grid.kind {
                GridKind::Polar { dtheta, .. } => it as f64 * dtheta,
                _ => unreachable!(),
            };
            cols.push(format!("{r:.16e}"));
            cols.push(format!("{theta:.16e}"));
        }
        writeln!(out, "{}", cols.join(","))?;
    }
    Ok(())
}

/// Read a field previously written by `write_field_csv` back onto a grid.
pub fn read_field_csv<R: BufRead>(grid: Arc<StructuredGrid>, m: usize, input: R) -> Result<GraphField> {
    let n = grid.dim;
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::invalid("empty CSV"))??;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < n + m {
        return Err(Error::invalid(format!(
            "CSV has {} columns, expected at least {}",
            cols.len(),
            n + m
        )));
    }
    let mut field = GraphField::zeros(grid.clone(), m);
    let mut node = 0usize;
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if node >= grid.n_nodes {
            return Err(Error::invalid("CSV has more rows than grid nodes"));
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::invalid(format!("bad CSV number: {e}")))?;
        if vals.len() < n + m {
            return Err(Error::invalid("short CSV row"));
        }
        for (k, &x) in vals[..n].iter().enumerate() {
            let expected = grid.coords(node)[k];
            if (x - expected).abs() > 1e-9 * (1.0 + expected.abs()) {
                return Err(Error::invalid(format!(
                    "CSV row {node} coordinates do not match the grid"
                )));
            }
        }
        for t in 0..m {
            field.values[node * m + t] = vals[n + t];
        }
        node += 1;
    }
    if node != grid.n_nodes {
        return Err(Error::invalid(format!(
            "CSV has {node} rows, grid has {} nodes",
            grid.n_nodes
        )));
    }
    Ok(field)
}
