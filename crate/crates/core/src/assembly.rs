//! Elemental operators and the global (statically condensed) linear solve.
//!
//! Matrices are stored test-by-trial: entry `[j][i]` pairs test function `j`
//! with trial function `i`, so the element system reads `A x = b`.

use std::fmt::Write as _;

use faer::prelude::Solve;
use faer::Mat;

use crate::basis::ElementTables;
use crate::error::{Result, SwellError};
use crate::mesh::{edge_reference_point, jacobian_tables, map_jacobian, map_to_physical, EdgeTag, Metric, Point, QuadElement};
use crate::parallel;
use crate::spline::SurfaceSpline;

/// Physical gradients of every mode at the volume quadrature points.
#[derive(Debug, Clone)]
pub struct ElementOps {
    pub metric: Metric,
    pub gx: Mat<f64>,
    pub gy: Mat<f64>,
    /// quadrature weight times Jacobian determinant
    pub wdet: Vec<f64>,
}

pub fn element_ops(tables: &ElementTables, elem: &QuadElement) -> Result<ElementOps> {
    let metric = jacobian_tables(tables, elem)?;
    let (nq, nm) = (tables.nquad(), tables.nmodes());
    let mut gx = Mat::<f64>::zeros(nq, nm);
    let mut gy = Mat::<f64>::zeros(nq, nm);
    for m in 0..nm {
        for qi in 0..nq {
            let d1 = tables.d_xi1[(qi, m)];
            let d2 = tables.d_xi2[(qi, m)];
            gx[(qi, m)] = metric.rx[qi] * d1 + metric.sx[qi] * d2;
            gy[(qi, m)] = metric.ry[qi] * d1 + metric.sy[qi] * d2;
        }
    }
    let wdet = metric.det.iter().zip(&tables.weights).map(|(d, w)| d * w).collect();
    Ok(ElementOps { metric, gx, gy, wdet })
}

/// `a^T diag(w) b`
pub fn weighted_gram(a: &Mat<f64>, w: &[f64], b: &Mat<f64>) -> Mat<f64> {
    let mut wb = b.clone();
    for j in 0..wb.ncols() {
        for (i, &wi) in w.iter().enumerate() {
            wb[(i, j)] *= wi;
        }
    }
    a.transpose() * &wb
}

fn scaled_rows(a: &Mat<f64>, s: &[f64]) -> Mat<f64> {
    let mut out = a.clone();
    for j in 0..out.ncols() {
        for (i, &si) in s.iter().enumerate() {
            out[(i, j)] *= si;
        }
    }
    out
}

/// `(Re / dt) (phi_i, phi_j)` on the current element, one velocity component.
pub fn elem_mass(tables: &ElementTables, ops: &ElementOps, re: f64, dt: f64) -> Result<Mat<f64>> {
    if !(dt > 0.0) {
        return Err(SwellError::OutOfRange {
            what: "dt",
            value: dt,
            range: "(0, inf)".into(),
        });
    }
    if !(re >= 0.0) {
        return Err(SwellError::OutOfRange {
            what: "Re",
            value: re,
            range: "[0, inf)".into(),
        });
    }
    let mut m = weighted_gram(&tables.values, &ops.wdet, &tables.values);
    let s = re / dt;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            m[(i, j)] *= s;
        }
    }
    Ok(m)
}

/// Scalar stiffness `(grad phi_i, grad phi_j)`.
pub fn elem_laplace(ops: &ElementOps) -> Mat<f64> {
    let mut l = weighted_gram(&ops.gx, &ops.wdet, &ops.gx);
    l += weighted_gram(&ops.gy, &ops.wdet, &ops.gy);
    l
}

/// Values and physical gradients of every mode at the Lobatto points of one
/// element edge.
#[derive(Debug, Clone)]
pub struct EdgeQuadrature {
    pub points: Vec<Point>,
    pub values: Vec<Vec<f64>>,
    pub gx: Vec<Vec<f64>>,
    pub gy: Vec<Vec<f64>>,
    /// quadrature weight times arc-length element
    pub wds: Vec<f64>,
    pub normals: Vec<[f64; 2]>,
}

pub fn edge_quadrature(tables: &ElementTables, elem: &QuadElement, edge: usize) -> EdgeQuadrature {
    let basis = &tables.basis;
    let n = basis.nmodes();
    let nq = basis.nquad();
    let mut out = EdgeQuadrature {
        points: Vec::with_capacity(nq),
        values: Vec::with_capacity(nq),
        gx: Vec::with_capacity(nq),
        gy: Vec::with_capacity(nq),
        wds: Vec::with_capacity(nq),
        normals: Vec::with_capacity(nq),
    };
    for (k, &t) in basis.quad_points.iter().enumerate() {
        let (a, b) = edge_reference_point(edge, t);
        let j = map_jacobian(tables, elem, a, b);
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        let col = if edge == 0 || edge == 2 { 0 } else { 1 };
        let tan = [j[0][col], j[1][col]];
        let len = tan[0].hypot(tan[1]);
        // bottom/right run counter-clockwise, top/left clockwise
        let normal = if edge <= 1 {
            [tan[1] / len, -tan[0] / len]
        } else {
            [-tan[1] / len, tan[0] / len]
        };
        let b1 = basis.eval_all(a);
        let b2 = basis.eval_all(b);
        let d1 = basis.deriv_all(a);
        let d2 = basis.deriv_all(b);
        let (rx, ry) = (j[1][1] / det, -j[0][1] / det);
        let (sx, sy) = (-j[1][0] / det, j[0][0] / det);
        let mut v = vec![0.0; n * n];
        let mut gx = vec![0.0; n * n];
        let mut gy = vec![0.0; n * n];
        for q in 0..n {
            for p in 0..n {
                let m = q * n + p;
                v[m] = b1[p] * b2[q];
                let x1 = d1[p] * b2[q];
                let x2 = b1[p] * d2[q];
                gx[m] = rx * x1 + sx * x2;
                gy[m] = ry * x1 + sy * x2;
            }
        }
        out.points.push(map_to_physical(tables, elem, a, b));
        out.values.push(v);
        out.gx.push(gx);
        out.gy.push(gy);
        out.wds.push(basis.quad_weights[k] * len);
        out.normals.push(normal);
    }
    out
}

/// Vector viscous operator in deformation-rate form, shape `2n x 2n`
/// (x-component block first). Edges listed in `open_edges` add the
/// viscous traction term `-<(grad phi + grad phi^T) . n, phi>` so that the
/// boundary carries zero pressure but no other constraint.
pub fn elem_viscous(tables: &ElementTables, elem: &QuadElement, ops: &ElementOps, open_edges: &[usize]) -> Mat<f64> {
    let n = tables.nmodes();
    let xx = weighted_gram(&ops.gx, &ops.wdet, &ops.gx);
    let yy = weighted_gram(&ops.gy, &ops.wdet, &ops.gy);
    let xy = weighted_gram(&ops.gy, &ops.wdet, &ops.gx);
    let mut k = Mat::<f64>::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            k[(j, i)] = 2.0 * xx[(j, i)] + yy[(j, i)];
            k[(n + j, n + i)] = xx[(j, i)] + 2.0 * yy[(j, i)];
            // test x / trial y: d_x phi_i d_y phi_j
            k[(j, n + i)] = xy[(j, i)];
            k[(n + j, i)] = xy[(i, j)];
        }
    }
    for &e in open_edges {
        let eq = edge_quadrature(tables, elem, e);
        for (k_pt, &wds) in eq.wds.iter().enumerate() {
            let [nx, ny] = eq.normals[k_pt];
            let (v, gx, gy) = (&eq.values[k_pt], &eq.gx[k_pt], &eq.gy[k_pt]);
            for i in 0..n {
                let dn = gx[i] * nx + gy[i] * ny;
                let (dx, dy) = (gx[i], gy[i]);
                if dn == 0.0 && dx == 0.0 && dy == 0.0 {
                    continue;
                }
                for j in 0..n {
                    let phij = v[j] * wds;
                    if phij == 0.0 {
                        continue;
                    }
                    // a = test component, b = trial component
                    k[(j, i)] -= (dn + nx * dx) * phij;
                    k[(j, n + i)] -= ny * dx * phij;
                    k[(n + j, i)] -= nx * dy * phij;
                    k[(n + j, n + i)] -= (dn + ny * dy) * phij;
                }
            }
        }
    }
    k
}

/// Scalar convection `((c . grad) phi_i, phi_j)` with the advecting
/// velocity `c = u* - w` given at the volume quadrature points.
pub fn elem_convection(tables: &ElementTables, ops: &ElementOps, adv: &[[f64; 2]]) -> Result<Mat<f64>> {
    if adv.len() != tables.nquad() {
        return Err(SwellError::DimensionMismatch {
            expected: tables.nquad(),
            got: adv.len(),
        });
    }
    let cx: Vec<f64> = adv.iter().map(|c| c[0]).collect();
    let cy: Vec<f64> = adv.iter().map(|c| c[1]).collect();
    let mut c = scaled_rows(&ops.gx, &cx);
    c += scaled_rows(&ops.gy, &cy);
    Ok(weighted_gram(&tables.values, &ops.wdet, &c))
}

/// Divergence coupling `(d_x phi_i, psi_j)` and `(d_y phi_i, psi_j)`,
/// each `n_p x n`.
pub fn elem_divergence(tables: &ElementTables, ops: &ElementOps) -> (Mat<f64>, Mat<f64>) {
    (
        weighted_gram(&tables.p_values, &ops.wdet, &ops.gx),
        weighted_gram(&tables.p_values, &ops.wdet, &ops.gy),
    )
}

/// Robin term `(1/B_sl) <u, phi>` on the element's wall edges, added to the
/// x-momentum block (`n x n`).
pub fn slip_boundary_matrix(tables: &ElementTables, elem: &QuadElement, b_sl: f64) -> Result<Mat<f64>> {
    if !(b_sl > 0.0) {
        return Err(SwellError::OutOfRange {
            what: "B_sl",
            value: b_sl,
            range: "(0, inf)".into(),
        });
    }
    let n = tables.nmodes();
    let mut a = Mat::<f64>::zeros(n, n);
    for e in (0..4).filter(|&e| elem.edge_tags[e] == EdgeTag::Wall) {
        let eq = edge_quadrature(tables, elem, e);
        for (k, &wds) in eq.wds.iter().enumerate() {
            let v = &eq.values[k];
            for i in 0..n {
                if v[i] == 0.0 {
                    continue;
                }
                for j in 0..n {
                    a[(j, i)] += v[i] * v[j] * wds / b_sl;
                }
            }
        }
    }
    Ok(a)
}

/// Surface-tension load `<sigma kappa_S n_S, phi>` on free-surface edges,
/// with signed curvature so that a bulge is pulled back toward the fluid;
/// returns `[x block; y block]`, length `2n`.
pub fn free_surface_load(tables: &ElementTables, elem: &QuadElement, spline: &SurfaceSpline, sigma: f64) -> Result<Vec<f64>> {
    let n = tables.nmodes();
    let mut b = vec![0.0; 2 * n];
    if sigma == 0.0 {
        return Ok(b);
    }
    for e in (0..4).filter(|&e| elem.edge_tags[e] == EdgeTag::FreeSurface) {
        let eq = edge_quadrature(tables, elem, e);
        for (k, &wds) in eq.wds.iter().enumerate() {
            let x = eq.points[k][0];
            let kappa = spline.signed_curvature_at(x)?;
            let nrm = spline.normal_at(x)?;
            for j in 0..n {
                let s = sigma * kappa * eq.values[k][j] * wds;
                b[j] += s * nrm[0];
                b[n + j] += s * nrm[1];
            }
        }
    }
    Ok(b)
}

/// Where an element-local unknown lives in the global problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DofRef {
    /// global unknown; local value = `sign * global value`
    Global { index: usize, sign: f64 },
    /// element-private unknown, eliminated by static condensation
    Local,
}

/// One element's contribution in its local numbering.
#[derive(Debug, Clone)]
pub struct ElementSystem {
    pub matrix: Mat<f64>,
    pub rhs: Vec<f64>,
    pub dofs: Vec<DofRef>,
}

/// Assembled system over the free (non-Dirichlet) global unknowns.
#[derive(Debug, Clone)]
pub struct GlobalSystem {
    pub matrix: Mat<f64>,
    pub rhs: Vec<f64>,
    /// free index -> global index
    pub free: Vec<usize>,
    /// global index -> free index
    pub free_index: Vec<Option<usize>>,
    /// prescribed values (None for free unknowns)
    pub dirichlet: Vec<Option<f64>>,
}

impl GlobalSystem {
    fn new(dirichlet: &[Option<f64>]) -> Self {
        let mut free = Vec::new();
        let mut free_index = vec![None; dirichlet.len()];
        for (g, d) in dirichlet.iter().enumerate() {
            if d.is_none() {
                free_index[g] = Some(free.len());
                free.push(g);
            }
        }
        let nf = free.len();
        GlobalSystem {
            matrix: Mat::zeros(nf, nf),
            rhs: vec![0.0; nf],
            free,
            free_index,
            dirichlet: dirichlet.to_vec(),
        }
    }

    /// Scatter-adds a local matrix/vector whose rows map to `globals`
    /// (global index, sign); Dirichlet columns are lifted to the right-hand side.
    fn scatter(&mut self, globals: &[(usize, f64)], mat: &Mat<f64>, rhs: &[f64]) {
        for (r, &(gr, sr)) in globals.iter().enumerate() {
            let Some(fr) = self.free_index[gr] else { continue };
            self.rhs[fr] += sr * rhs[r];
            for (c, &(gc, sc)) in globals.iter().enumerate() {
                let a = sr * sc * mat[(r, c)];
                match (self.free_index[gc], self.dirichlet[gc]) {
                    (Some(fc), _) => self.matrix[(fr, fc)] += a,
                    (None, Some(val)) => self.rhs[fr] -= a * val,
                    (None, None) => unreachable!(),
                }
            }
        }
    }

    pub fn n_free(&self) -> usize {
        self.free.len()
    }

    /// Direct LU solve; returns the full global vector with Dirichlet values.
    pub fn solve(&self) -> Result<Vec<f64>> {
        let mut x: Vec<f64> = self.dirichlet.iter().map(|d| d.unwrap_or(0.0)).collect();
        if self.free.is_empty() {
            return Ok(x);
        }
        let b = Mat::<f64>::from_fn(self.rhs.len(), 1, |i, _| self.rhs[i]);
        let sol = self.matrix.partial_piv_lu().solve(&b);
        for (f, &g) in self.free.iter().enumerate() {
            let v = sol[(f, 0)];
            if !v.is_finite() {
                return Err(SwellError::Singular("global system"));
            }
            x[g] = v;
        }
        Ok(x)
    }

    /// Coordinate-format dump (`row col value`, free numbering).
    pub fn to_coo(&self) -> String {
        let mut s = format!("# {} x {}\n", self.n_free(), self.n_free());
        for j in 0..self.matrix.ncols() {
            for i in 0..self.matrix.nrows() {
                let v = self.matrix[(i, j)];
                if v != 0.0 {
                    let _ = writeln!(s, "{i} {j} {v:.17e}");
                }
            }
        }
        s
    }
}

fn global_refs(dofs: &[DofRef]) -> Vec<(usize, f64)> {
    dofs.iter()
        .map(|d| match *d {
            DofRef::Global { index, sign } => (index, sign),
            DofRef::Local => panic!("local dof in a non-condensed assembly"),
        })
        .collect()
}

/// Assembles elements whose dofs are all global.
pub fn assemble_global(elements: &[ElementSystem], dirichlet: &[Option<f64>]) -> Result<GlobalSystem> {
    let mut sys = GlobalSystem::new(dirichlet);
    for el in elements {
        if el.dofs.contains(&DofRef::Local) {
            return Err(SwellError::InvalidArgument(
                "assemble_global requires fully global dof maps".into(),
            ));
        }
        sys.scatter(&global_refs(&el.dofs), &el.matrix, &el.rhs);
    }
    Ok(sys)
}

/// Data to recover an element's private unknowns after the global solve:
/// `x_L = particular - coupling * x_G`.
#[derive(Debug, Clone)]
pub struct ElementRecovery {
    global_pos: Vec<usize>,
    local_pos: Vec<usize>,
    globals: Vec<(usize, f64)>,
    coupling: Mat<f64>,
    particular: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct CondensedSystem {
    pub global: GlobalSystem,
    pub recovery: Vec<ElementRecovery>,
}

/// Solution in element-local numbering plus the global vector.
#[derive(Debug, Clone)]
pub struct Solution {
    pub global: Vec<f64>,
    pub local: Vec<Vec<f64>>,
}

fn condense_element(el: &ElementSystem) -> Result<(Mat<f64>, Vec<f64>, ElementRecovery)> {
    let gpos: Vec<usize> = (0..el.dofs.len()).filter(|&i| el.dofs[i] != DofRef::Local).collect();
    let lpos: Vec<usize> = (0..el.dofs.len()).filter(|&i| el.dofs[i] == DofRef::Local).collect();
    let (ng, nl) = (gpos.len(), lpos.len());
    let a = &el.matrix;
    let globals: Vec<(usize, f64)> = global_refs(&gpos.iter().map(|&i| el.dofs[i]).collect::<Vec<_>>());
    if nl == 0 {
        let s = Mat::from_fn(ng, ng, |r, c| a[(gpos[r], gpos[c])]);
        let g = gpos.iter().map(|&i| el.rhs[i]).collect();
        let rec = ElementRecovery {
            global_pos: gpos,
            local_pos: lpos,
            globals,
            coupling: Mat::zeros(0, ng),
            particular: Vec::new(),
        };
        return Ok((s, g, rec));
    }
    let all = Mat::from_fn(nl, nl, |r, c| a[(lpos[r], lpos[c])]);
    // right-hand sides [A_LG | f_L]
    let rhs = Mat::from_fn(nl, ng + 1, |r, c| {
        if c < ng {
            a[(lpos[r], gpos[c])]
        } else {
            el.rhs[lpos[r]]
        }
    });
    let x = all.partial_piv_lu().solve(&rhs);
    if (0..nl).any(|r| !x[(r, ng)].is_finite()) {
        return Err(SwellError::Singular("element interior block"));
    }
    let agl = Mat::from_fn(ng, nl, |r, c| a[(gpos[r], lpos[c])]);
    let prod = &agl * &x;
    let s = Mat::from_fn(ng, ng, |r, c| a[(gpos[r], gpos[c])] - prod[(r, c)]);
    let g = (0..ng).map(|r| el.rhs[gpos[r]] - prod[(r, ng)]).collect();
    let coupling = Mat::from_fn(nl, ng, |r, c| x[(r, c)]);
    let particular = (0..nl).map(|r| x[(r, ng)]).collect();
    Ok((
        s,
        g,
        ElementRecovery {
            global_pos: gpos,
            local_pos: lpos,
            globals,
            coupling,
            particular,
        },
    ))
}

/// Eliminates every `DofRef::Local` unknown element by element through its
/// Schur complement and assembles the reduced global system.
pub fn static_condense(elements: &[ElementSystem], dirichlet: &[Option<f64>]) -> Result<CondensedSystem> {
    let parts = parallel::try_map_indexed(elements.len(), |e| condense_element(&elements[e]))?;
    let mut global = GlobalSystem::new(dirichlet);
    let mut recovery = Vec::with_capacity(parts.len());
    // fixed element order keeps the scatter deterministic
    for (s, g, rec) in parts {
        global.scatter(&rec.globals, &s, &g);
        recovery.push(rec);
    }
    Ok(CondensedSystem { global, recovery })
}

impl CondensedSystem {
    pub fn solve(&self) -> Result<Solution> {
        let global = self.global.solve()?;
        let local = self
            .recovery
            .iter()
            .map(|rec| {
                let ng = rec.global_pos.len();
                let xg: Vec<f64> = rec.globals.iter().map(|&(g, s)| s * global[g]).collect();
                let mut out = vec![0.0; ng + rec.local_pos.len()];
                for (k, &p) in rec.global_pos.iter().enumerate() {
                    out[p] = xg[k];
                }
                for (r, &p) in rec.local_pos.iter().enumerate() {
                    let mut v = rec.particular[r];
                    for c in 0..ng {
                        v -= rec.coupling[(r, c)] * xg[c];
                    }
                    out[p] = v;
                }
                out
            })
            .collect();
        Ok(Solution { global, local })
    }
}

/// Reference path: promotes every local unknown to its own global index
/// and solves the full system directly.
pub fn direct_solve(elements: &[ElementSystem], dirichlet: &[Option<f64>]) -> Result<Solution> {
    let mut dir = dirichlet.to_vec();
    let mut promoted = Vec::with_capacity(elements.len());
    for el in elements {
        let mut e = el.clone();
        for d in e.dofs.iter_mut() {
            if *d == DofRef::Local {
                *d = DofRef::Global {
                    index: dir.len(),
                    sign: 1.0,
                };
                dir.push(None);
            }
        }
        promoted.push(e);
    }
    let sys = assemble_global(&promoted, &dir)?;
    let x = sys.solve()?;
    let local = promoted
        .iter()
        .map(|e| global_refs(&e.dofs).iter().map(|&(g, s)| s * x[g]).collect())
        .collect();
    Ok(Solution {
        global: x[..dirichlet.len()].to_vec(),
        local,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_channel_mesh, Mesh};

    fn ops_of(m: &Mesh, e: usize) -> ElementOps {
        element_ops(&m.tables, &m.elements[e]).unwrap()
    }

    /// Coefficients of a polynomial field sampled through the geometry
    /// interpolation (exact for polynomials of degree <= P on straight quads).
    fn project(m: &Mesh, e: usize, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let t = &m.tables;
        let el = &m.elements[e];
        let nodes = &m.geometry_nodes;
        let n = t.basis.nmodes();
        // collocation at the tensor Lobatto grid
        let mut a = Mat::<f64>::zeros(n * n, n * n);
        let mut b = Mat::<f64>::zeros(n * n, 1);
        for k2 in 0..n {
            for k1 in 0..n {
                let r = k2 * n + k1;
                let p = map_to_physical(t, el, nodes[k1], nodes[k2]);
                b[(r, 0)] = f(p[0], p[1]);
                for q in 0..n {
                    for pp in 0..n {
                        a[(r, q * n + pp)] = t.basis.eval(pp, nodes[k1]) * t.basis.eval(q, nodes[k2]);
                    }
                }
            }
        }
        let x = a.partial_piv_lu().solve(&b);
        (0..n * n).map(|i| x[(i, 0)]).collect()
    }

    fn quad_form(a: &Mat<f64>, x: &[f64], y: &[f64]) -> f64 {
        let mut s = 0.0;
        for j in 0..a.nrows() {
            for i in 0..a.ncols() {
                s += y[j] * a[(j, i)] * x[i];
            }
        }
        s
    }

    fn apply(a: &Mat<f64>, x: &[f64]) -> Vec<f64> {
        (0..a.nrows())
            .map(|j| (0..a.ncols()).map(|i| a[(j, i)] * x[i]).sum())
            .collect()
    }

    #[test]
    fn mass_matches_dense_quadrature_oracle() {
        let m = build_channel_mesh(&[0.0, 1.0], &[0.0, 1.0], 2).unwrap();
        let ops = ops_of(&m, 0);
        let mass = elem_mass(&m.tables, &ops, 1.0, 1.0).unwrap();
        // oracle: 12-point Gauss-Lobatto tensor rule on phi_i phi_j, det J = 1/4
        let (pts, wts) = crate::basis::make_quadrature(12).unwrap();
        let b = &m.tables.basis;
        let n = 3;
        for i in 0..n * n {
            for j in 0..n * n {
                let mut s = 0.0;
                for (a, wa) in pts.iter().zip(&wts) {
                    for (c, wc) in pts.iter().zip(&wts) {
                        let fi = b.eval(i % n, *a) * b.eval(i / n, *c);
                        let fj = b.eval(j % n, *a) * b.eval(j / n, *c);
                        s += wa * wc * fi * fj * 0.25;
                    }
                }
                assert!((mass[(j, i)] - s).abs() < 1e-12);
            }
        }
        assert!(elem_mass(&m.tables, &ops, 0.0, 1.0).unwrap().norm_max() == 0.0);
        let m2 = elem_mass(&m.tables, &ops, 2.0, 1.0).unwrap();
        assert!((&m2 - &mass * faer::Scale(2.0)).norm_max() < 1e-15);
        assert!(elem_mass(&m.tables, &ops, 1.0, 0.0).is_err());
    }

    #[test]
    fn viscous_kills_rigid_motions() {
        let verts = vec![[0.0, 0.0], [2.0, 0.2], [2.3, 1.4], [-0.1, 1.0]];
        let tags = [EdgeTag::Interior; 4];
        let m = Mesh::from_cells(verts, &[([0, 1, 2, 3], tags)], 4).unwrap();
        let ops = ops_of(&m, 0);
        let k = elem_viscous(&m.tables, &m.elements[0], &ops, &[]);
        let n = m.tables.nmodes();
        let one = project(&m, 0, |_, _| 1.0);
        let zero = vec![0.0; n];
        let trans: Vec<f64> = one.iter().chain(&zero).copied().collect();
        assert!(apply(&k, &trans).iter().all(|v| v.abs() < 1e-12));
        let rx = project(&m, 0, |_, y| -y);
        let ry = project(&m, 0, |x, _| x);
        let rot: Vec<f64> = rx.iter().chain(&ry).copied().collect();
        assert!(quad_form(&k, &rot, &rot).abs() < 1e-10);
        // symmetric without open edges
        assert!((&k - k.transpose()).norm_max() < 1e-12);
    }

    #[test]
    fn convection_oracles() {
        let m = build_channel_mesh(&[0.0, 2.0], &[0.0, 1.0], 3).unwrap();
        let ops = ops_of(&m, 0);
        let nq = m.tables.nquad();
        let zero = elem_convection(&m.tables, &ops, &vec![[0.0, 0.0]; nq]).unwrap();
        assert_eq!(zero.norm_max(), 0.0);
        let c = [0.7, -0.3];
        let b = elem_convection(&m.tables, &ops, &vec![c; nq]).unwrap();
        // (c . grad f, g) for f = x^2 y, g = x + y over [0,2]x[0,1]
        let f = project(&m, 0, |x, y| x * x * y);
        let g = project(&m, 0, |x, y| x + y);
        // c.grad f = 0.7*2xy - 0.3 x^2 ; integrate against x + y
        // int int (1.4 x y - 0.3 x^2)(x + y) dy dx
        let exact = {
            // closed form pieces over [0,2]x[0,1]
            let i_x2y = 8.0 / 3.0 * 0.5; // x^2 y
            let i_xy2 = 2.0 * (1.0 / 3.0); // x y^2
            let i_x3 = 4.0; // x^3
            let i_x2y_b = 8.0 / 3.0 * 0.5; // x^2 y
            1.4 * (i_x2y + i_xy2) - 0.3 * (i_x3 + i_x2y_b)
        };
        assert!((quad_form(&b, &f, &g) - exact).abs() < 1e-12);
        assert!(elem_convection(&m.tables, &ops, &[[0.0, 0.0]]).is_err());
    }

    #[test]
    fn divergence_oracles() {
        let m = build_channel_mesh(&[0.0, 1.5], &[0.0, 1.0], 4).unwrap();
        let ops = ops_of(&m, 0);
        let (dx, dy) = elem_divergence(&m.tables, &ops);
        let apply_div = |u: &[f64], v: &[f64]| -> Vec<f64> {
            let a = apply(&dx, u);
            let b = apply(&dy, v);
            a.iter().zip(&b).map(|(p, q)| p + q).collect()
        };
        let c = project(&m, 0, |_, _| 1.0);
        assert!(apply_div(&c, &c).iter().all(|v| v.abs() < 1e-12));
        let ux = project(&m, 0, |x, _| x);
        let uy = project(&m, 0, |_, y| -y);
        assert!(apply_div(&ux, &uy).iter().all(|v| v.abs() < 1e-12));
        let vy = project(&m, 0, |_, y| y);
        let r = apply_div(&ux, &vy);
        // 2 * (psi_j, 1): only the constant Legendre mode survives, area 1.5
        assert!((r[0] - 3.0).abs() < 1e-12);
        assert!(r[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn slip_matrix_oracles() {
        let m = build_channel_mesh(&[0.0, 2.5], &[0.0, 1.0], 3).unwrap();
        let el = &m.elements[0];
        let a = slip_boundary_matrix(&m.tables, el, 0.1).unwrap();
        let one = project(&m, 0, |_, _| 1.0);
        assert!((quad_form(&a, &one, &one) - 2.5 / 0.1).abs() < 1e-10);
        let big = slip_boundary_matrix(&m.tables, el, 1e6).unwrap();
        assert!(big.norm_max() < 1e-5);
        assert!(slip_boundary_matrix(&m.tables, el, 0.0).is_err());
        let mut no_wall = el.clone();
        no_wall.edge_tags[2] = EdgeTag::Interior;
        assert_eq!(slip_boundary_matrix(&m.tables, &no_wall, 0.1).unwrap().norm_max(), 0.0);
    }

    #[test]
    fn free_surface_load_oracles() {
        use crate::spline::fit_spline;
        let layout = crate::mesh::StructuredLayout {
            x_breaks: vec![-0.5, 0.5],
            y_breaks: vec![0.0, 1.0],
            top_tags: vec![EdgeTag::FreeSurface],
            left_tag: EdgeTag::Interior,
            right_tag: EdgeTag::Interior,
            bottom_tag: EdgeTag::Interior,
        };
        let mut m = Mesh::structured(&layout, 8).unwrap();
        let flat: Vec<(f64, f64)> = m.surface.iter().map(|p| (p[0], p[1])).collect();
        let s = fit_spline(&flat).unwrap();
        let el = &m.elements[0];
        assert!(free_surface_load(&m.tables, el, &s, 0.0).unwrap().iter().all(|&v| v == 0.0));
        assert!(free_surface_load(&m.tables, el, &s, 3.0).unwrap().iter().all(|&v| v.abs() < 1e-14));
        // arc of the circle of radius R centred at (0, c)
        let rad = 2.0;
        let centre = 1.0 - rad;
        for p in m.surface.iter_mut() {
            p[1] = centre + (rad * rad - p[0] * p[0]).sqrt();
        }
        m.rebuild_mappings().unwrap();
        let arc: Vec<(f64, f64)> = m.surface.iter().map(|p| (p[0], p[1])).collect();
        let s = fit_spline(&arc).unwrap();
        let el = &m.elements[0];
        let b = free_surface_load(&m.tables, el, &s, 1.0).unwrap();
        let n = m.tables.nmodes();
        // pairing with the constant field gives the resultant
        // -sigma/R * int n ds = -(0, chord)/R
        let fx: f64 = b[..n].iter().zip(&project(&m, 0, |_, _| 1.0)).map(|(a, c)| a * c).sum();
        let fy: f64 = b[n..].iter().zip(&project(&m, 0, |_, _| 1.0)).map(|(a, c)| a * c).sum();
        assert!(fx.abs() < 1e-6);
        assert!((fy + 1.0 / rad).abs() < 1e-3, "fy = {fy}");
    }

    fn random_spd_element(seed: u64, dofs: Vec<DofRef>) -> ElementSystem {
        let n = dofs.len();
        use rand::{rngs::StdRng, Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(seed);
        let mut rnd = move || rng.random_range(-0.5..0.5);
        let r = Mat::<f64>::from_fn(n, n, |_, _| rnd());
        let mut a = r.transpose() * &r;
        for i in 0..n {
            a[(i, i)] += n as f64;
        }
        let rhs = (0..n).map(|_| rnd()).collect();
        ElementSystem { matrix: a, rhs, dofs }
    }

    #[test]
    fn condensation_equals_direct_solve() {
        // two elements sharing globals 1..3, each with three private unknowns
        let g = |i: usize, s: f64| DofRef::Global { index: i, sign: s };
        let e0 = random_spd_element(1, vec![g(0, 1.0), g(1, 1.0), g(2, -1.0), g(3, 1.0), DofRef::Local, DofRef::Local, DofRef::Local]);
        let e1 = random_spd_element(2, vec![DofRef::Local, g(1, 1.0), g(2, 1.0), g(3, 1.0), g(4, 1.0), DofRef::Local, DofRef::Local]);
        let dir = vec![Some(0.3), None, None, None, None];
        let els = vec![e0, e1];
        let c = static_condense(&els, &dir).unwrap();
        assert_eq!(c.global.n_free(), 4);
        let a = c.solve().unwrap();
        let b = direct_solve(&els, &dir).unwrap();
        for (x, y) in a.global.iter().zip(&b.global) {
            assert!((x - y).abs() < 1e-10);
        }
        for (la, lb) in a.local.iter().zip(&b.local) {
            for (x, y) in la.iter().zip(lb) {
                assert!((x - y).abs() < 1e-10);
            }
        }
        // symmetric inputs stay symmetric after condensation
        assert!((&c.global.matrix - c.global.matrix.transpose()).norm_max() < 1e-12);
        assert!(c.global.to_coo().lines().count() > 1);
    }
}
