//! One-dimensional modal expansion basis on [-1, 1] and its tensor-product
//! extension to the standard quadrilateral.
//!
//! The velocity (and geometry) basis is the boundary/interior decomposed
//! modal set: two linear vertex modes plus interior "bubble" modes built
//! from (1,1)-Jacobi polynomials. Pressure uses a tensor product of Legendre
//! polynomials two orders lower, which keeps the constant as a single mode.
//!
//! Two-dimensional mode index convention: `mode_index(p, q) = q * (P + 1) + p`
//! where `p` runs along xi1 and `q` along xi2. Quadrature points are laid out
//! the same way: `qi = k2 * Q + k1`.

use faer::prelude::Solve;
use faer::Mat;

use crate::error::{Result, SwellError};

const XI_TOL: f64 = 1e-12;

/// Jacobi polynomial `P_p^{(alpha, beta)}(xi)` by the three-term recurrence.
pub fn jacobi_poly(p: usize, alpha: f64, beta: f64, xi: f64) -> Result<f64> {
    if alpha <= -1.0 || beta <= -1.0 {
        return Err(SwellError::InvalidArgument(format!(
            "Jacobi indices must exceed -1 (alpha={alpha}, beta={beta})"
        )));
    }
    if !(xi.abs() <= 1.0 + XI_TOL) {
        return Err(SwellError::OutOfRange {
            what: "xi",
            value: xi,
            range: "[-1, 1]".into(),
        });
    }
    Ok(jacobi_unchecked(p, alpha, beta, xi))
}

pub(crate) fn jacobi_unchecked(p: usize, alpha: f64, beta: f64, xi: f64) -> f64 {
    if p == 0 {
        return 1.0;
    }
    let ab = alpha + beta;
    let mut prev = 1.0;
    let mut cur = 0.5 * (alpha - beta + (ab + 2.0) * xi);
    for n in 1..p {
        let n = n as f64;
        let a1 = 2.0 * (n + 1.0) * (n + ab + 1.0) * (2.0 * n + ab);
        let a2 = (2.0 * n + ab + 1.0) * (alpha * alpha - beta * beta);
        let a3 = (2.0 * n + ab) * (2.0 * n + ab + 1.0) * (2.0 * n + ab + 2.0);
        let a4 = 2.0 * (n + alpha) * (n + beta) * (2.0 * n + ab + 2.0);
        let next = ((a2 + a3 * xi) * cur - a4 * prev) / a1;
        prev = cur;
        cur = next;
    }
    cur
}

/// d/dxi of `P_p^{(alpha, beta)}`.
pub(crate) fn jacobi_deriv(p: usize, alpha: f64, beta: f64, xi: f64) -> f64 {
    if p == 0 {
        return 0.0;
    }
    0.5 * (p as f64 + alpha + beta + 1.0) * jacobi_unchecked(p - 1, alpha + 1.0, beta + 1.0, xi)
}

fn check_mode(p: usize, order: usize) -> Result<()> {
    if p > order {
        return Err(SwellError::OutOfRange {
            what: "mode index",
            value: p as f64,
            range: format!("0..={order}"),
        });
    }
    Ok(())
}

/// Modal basis function `phi_p` of an order-`order` expansion at `xi`.
pub fn eval_modal_basis(p: usize, order: usize, xi: f64) -> Result<f64> {
    check_mode(p, order)?;
    Ok(modal(p, order, xi))
}

fn modal(p: usize, order: usize, xi: f64) -> f64 {
    if p == 0 {
        0.5 * (1.0 - xi)
    } else if p == order {
        0.5 * (1.0 + xi)
    } else {
        0.25 * (1.0 - xi) * (1.0 + xi) * jacobi_unchecked(p - 1, 1.0, 1.0, xi)
    }
}

/// Derivative of `phi_p` with respect to xi.
pub fn eval_modal_deriv(p: usize, order: usize, xi: f64) -> Result<f64> {
    check_mode(p, order)?;
    Ok(modal_deriv(p, order, xi))
}

fn modal_deriv(p: usize, order: usize, xi: f64) -> f64 {
    if p == 0 {
        -0.5
    } else if p == order {
        0.5
    } else {
        let j = jacobi_unchecked(p - 1, 1.0, 1.0, xi);
        let dj = jacobi_deriv(p - 1, 1.0, 1.0, xi);
        -0.5 * xi * j + 0.25 * (1.0 - xi * xi) * dj
    }
}

/// Gauss-Lobatto-Legendre rule with `npts` points (endpoints included).
pub fn make_quadrature(npts: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if npts < 2 {
        return Err(SwellError::InvalidArgument(format!(
            "Lobatto rule needs at least 2 points, got {npts}"
        )));
    }
    let n = npts - 1;
    let mut pts = vec![0.0; npts];
    pts[0] = -1.0;
    pts[n] = 1.0;
    // interior nodes are the roots of P'_n, i.e. of P_{n-1}^{(1,1)}
    for i in 1..n {
        let mut x = -(std::f64::consts::PI * i as f64 / n as f64).cos();
        for _ in 0..100 {
            let f = jacobi_unchecked(n - 1, 1.0, 1.0, x);
            let df = jacobi_deriv(n - 1, 1.0, 1.0, x);
            let dx = f / df;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        pts[i] = x;
    }
    // symmetrize to remove round-off asymmetry
    for i in 0..npts / 2 {
        let a = 0.5 * (pts[n - i] - pts[i]);
        pts[i] = -a;
        pts[n - i] = a;
    }
    if npts % 2 == 1 {
        pts[n / 2] = 0.0;
    }
    let scale = 2.0 / (n as f64 * (n as f64 + 1.0));
    let wts = pts
        .iter()
        .map(|&x| {
            let l = jacobi_unchecked(n, 0.0, 0.0, x);
            scale / (l * l)
        })
        .collect();
    Ok((pts, wts))
}

/// Modal basis of order P with its Lobatto quadrature tables.
#[derive(Debug, Clone)]
pub struct StdBasis {
    pub order: usize,
    pub quad_points: Vec<f64>,
    pub quad_weights: Vec<f64>,
    /// `basis_at_quad[p][k] = phi_p(xi_k)`
    pub basis_at_quad: Vec<Vec<f64>>,
    /// `deriv_at_quad[p][k] = phi_p'(xi_k)`
    pub deriv_at_quad: Vec<Vec<f64>>,
}

impl StdBasis {
    /// Basis of order `order` with the default rule of `order + 2` points.
    pub fn new(order: usize) -> Result<Self> {
        Self::with_quadrature(order, order + 2)
    }

    pub fn with_quadrature(order: usize, npts: usize) -> Result<Self> {
        if order < 1 {
            return Err(SwellError::InvalidArgument(format!(
                "expansion order must be at least 1, got {order}"
            )));
        }
        let (quad_points, quad_weights) = make_quadrature(npts)?;
        let basis_at_quad = (0..=order)
            .map(|p| quad_points.iter().map(|&x| modal(p, order, x)).collect())
            .collect();
        let deriv_at_quad = (0..=order)
            .map(|p| quad_points.iter().map(|&x| modal_deriv(p, order, x)).collect())
            .collect();
        Ok(Self {
            order,
            quad_points,
            quad_weights,
            basis_at_quad,
            deriv_at_quad,
        })
    }

    pub fn nmodes(&self) -> usize {
        self.order + 1
    }

    pub fn nquad(&self) -> usize {
        self.quad_points.len()
    }

    pub fn eval(&self, p: usize, xi: f64) -> f64 {
        modal(p, self.order, xi)
    }

    pub fn deriv(&self, p: usize, xi: f64) -> f64 {
        modal_deriv(p, self.order, xi)
    }

    /// Values of all modes at `xi`.
    pub fn eval_all(&self, xi: f64) -> Vec<f64> {
        (0..=self.order).map(|p| modal(p, self.order, xi)).collect()
    }

    pub fn deriv_all(&self, xi: f64) -> Vec<f64> {
        (0..=self.order).map(|p| modal_deriv(p, self.order, xi)).collect()
    }

    pub fn mode_index(&self, p: usize, q: usize) -> usize {
        q * (self.order + 1) + p
    }

    /// Coefficients of the bubble modes `1..P-1` that interpolate `values`
    /// (given at the `P + 1` Lobatto nodes of an edge) after the linear
    /// vertex part has been removed. Returns the full `P + 1` coefficient
    /// vector with the vertex values in slots 0 and P.
    pub fn interpolate_edge(&self, nodes: &[f64], values: &[f64]) -> Vec<f64> {
        let p = self.order;
        debug_assert_eq!(nodes.len(), p + 1);
        let mut coeffs = vec![0.0; p + 1];
        coeffs[0] = values[0];
        coeffs[p] = values[p];
        if p < 2 {
            return coeffs;
        }
        let m = p - 1;
        let mut a = Mat::<f64>::zeros(m, m);
        let mut rhs = Mat::<f64>::zeros(m, 1);
        for (row, k) in (1..p).enumerate() {
            let x = nodes[k];
            for (col, mode) in (1..p).enumerate() {
                a[(row, col)] = modal(mode, p, x);
            }
            rhs[(row, 0)] = values[k] - values[0] * modal(0, p, x) - values[p] * modal(p, p, x);
        }
        let sol = a.partial_piv_lu().solve(&rhs);
        for (row, mode) in (1..p).enumerate() {
            coeffs[mode] = sol[(row, 0)];
        }
        coeffs
    }
}

/// Evaluates `sum_pq coeffs[mode_index(p,q)] phi_p(xi1) phi_q(xi2)`.
pub fn tensor_eval(basis: &StdBasis, coeffs: &[f64], xi1: f64, xi2: f64) -> Result<f64> {
    let n = basis.nmodes();
    if coeffs.len() != n * n {
        return Err(SwellError::DimensionMismatch {
            expected: n * n,
            got: coeffs.len(),
        });
    }
    let b1 = basis.eval_all(xi1);
    let b2 = basis.eval_all(xi2);
    Ok(tensor_contract(coeffs, &b1, &b2))
}

pub(crate) fn tensor_contract(coeffs: &[f64], b1: &[f64], b2: &[f64]) -> f64 {
    let n = b1.len();
    let mut s = 0.0;
    for (q, &bq) in b2.iter().enumerate() {
        let row = &coeffs[q * n..(q + 1) * n];
        let inner: f64 = row.iter().zip(b1).map(|(c, b)| c * b).sum();
        s += inner * bq;
    }
    s
}

/// Legendre tensor basis of order `order` used for the discontinuous pressure.
#[derive(Debug, Clone)]
pub struct PressureBasis {
    pub order: usize,
}

impl PressureBasis {
    pub fn nmodes_1d(&self) -> usize {
        self.order + 1
    }

    pub fn nmodes(&self) -> usize {
        (self.order + 1) * (self.order + 1)
    }

    pub fn eval_all(&self, xi: f64) -> Vec<f64> {
        (0..=self.order)
            .map(|i| jacobi_unchecked(i, 0.0, 0.0, xi))
            .collect()
    }

    pub fn eval(&self, coeffs: &[f64], xi1: f64, xi2: f64) -> f64 {
        tensor_contract(coeffs, &self.eval_all(xi1), &self.eval_all(xi2))
    }
}

/// Tensor-product tables at the 2D quadrature points, cached per (P, Q).
#[derive(Debug, Clone)]
pub struct ElementTables {
    pub basis: StdBasis,
    pub pressure: PressureBasis,
    /// `values[(qi, m)] = phi_m(xi_qi)`, shape `Q^2 x (P+1)^2`
    pub values: Mat<f64>,
    pub d_xi1: Mat<f64>,
    pub d_xi2: Mat<f64>,
    /// pressure modes at quadrature points, shape `Q^2 x (P-1)^2`
    pub p_values: Mat<f64>,
    /// tensor weights `w_k1 * w_k2`
    pub weights: Vec<f64>,
    /// tensor mode indices split into boundary (vertices, then edges) and interior
    pub boundary_modes: Vec<usize>,
    pub interior_modes: Vec<usize>,
}

impl ElementTables {
    pub fn new(order: usize) -> Result<Self> {
        if order < 2 {
            return Err(SwellError::InvalidArgument(format!(
                "velocity order must be at least 2, got {order}"
            )));
        }
        let basis = StdBasis::new(order)?;
        let pressure = PressureBasis { order: order - 2 };
        let n = order + 1;
        let nq = basis.nquad();
        let mut values = Mat::<f64>::zeros(nq * nq, n * n);
        let mut d_xi1 = Mat::<f64>::zeros(nq * nq, n * n);
        let mut d_xi2 = Mat::<f64>::zeros(nq * nq, n * n);
        let mut weights = vec![0.0; nq * nq];
        for k2 in 0..nq {
            for k1 in 0..nq {
                let qi = k2 * nq + k1;
                weights[qi] = basis.quad_weights[k1] * basis.quad_weights[k2];
                for q in 0..n {
                    for p in 0..n {
                        let m = q * n + p;
                        let b1 = basis.basis_at_quad[p][k1];
                        let b2 = basis.basis_at_quad[q][k2];
                        values[(qi, m)] = b1 * b2;
                        d_xi1[(qi, m)] = basis.deriv_at_quad[p][k1] * b2;
                        d_xi2[(qi, m)] = b1 * basis.deriv_at_quad[q][k2];
                    }
                }
            }
        }
        let np = pressure.nmodes_1d();
        let mut p_values = Mat::<f64>::zeros(nq * nq, np * np);
        let leg: Vec<Vec<f64>> = basis
            .quad_points
            .iter()
            .map(|&x| pressure.eval_all(x))
            .collect();
        for k2 in 0..nq {
            for k1 in 0..nq {
                let qi = k2 * nq + k1;
                for j in 0..np {
                    for i in 0..np {
                        p_values[(qi, j * np + i)] = leg[k1][i] * leg[k2][j];
                    }
                }
            }
        }
        let (boundary_modes, interior_modes) = split_modes(order);
        Ok(Self {
            basis,
            pressure,
            values,
            d_xi1,
            d_xi2,
            p_values,
            weights,
            boundary_modes,
            interior_modes,
        })
    }

    pub fn order(&self) -> usize {
        self.basis.order
    }

    pub fn nmodes(&self) -> usize {
        self.values.ncols()
    }

    pub fn npressure(&self) -> usize {
        self.p_values.ncols()
    }

    pub fn nquad(&self) -> usize {
        self.weights.len()
    }
}

/// Local edge numbering: 0 bottom (xi2=-1), 1 right (xi1=1), 2 top (xi2=1),
/// 3 left (xi1=-1). Returns the tensor mode of vertex `v` (counter-clockwise
/// from (-1,-1)).
pub fn vertex_mode(order: usize, v: usize) -> usize {
    let n = order + 1;
    match v {
        0 => 0,
        1 => order,
        2 => order * n + order,
        3 => order * n,
        _ => panic!("vertex index {v} out of range"),
    }
}

/// Tensor mode of the `k`-th bubble (k = 1..P-1) on local edge `e`, counted
/// along the edge's local parameter direction (xi1 for bottom/top, xi2 for
/// left/right).
pub fn edge_mode(order: usize, e: usize, k: usize) -> usize {
    let n = order + 1;
    match e {
        0 => k,
        1 => k * n + order,
        2 => order * n + k,
        3 => k * n,
        _ => panic!("edge index {e} out of range"),
    }
}

fn split_modes(order: usize) -> (Vec<usize>, Vec<usize>) {
    let mut boundary: Vec<usize> = (0..4).map(|v| vertex_mode(order, v)).collect();
    for e in 0..4 {
        for k in 1..order {
            boundary.push(edge_mode(order, e, k));
        }
    }
    let n = order + 1;
    let mut interior = Vec::new();
    for q in 1..order {
        for p in 1..order {
            interior.push(q * n + p);
        }
    }
    (boundary, interior)
}
