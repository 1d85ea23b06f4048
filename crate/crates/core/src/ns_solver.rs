//! ALE Navier-Stokes time stepping to steady state.
//!
//! Each element carries `[u (n), v (n), p (n_p)]` locally. Boundary velocity
//! modes and the element-constant pressure mode are global; interior
//! velocity modes and the remaining pressure modes are condensed out.

use std::fmt::Write as _;

use faer::Mat;
use log::{debug, info};

use crate::assembly::{
    elem_convection, elem_divergence, elem_mass, elem_viscous, element_ops, free_surface_load, slip_boundary_matrix,
    static_condense, DofRef, ElementSystem,
};
use crate::basis::make_quadrature;
use crate::error::{Result, SwellError};
use crate::mesh::{build_dieswell_mesh, map_to_physical, EdgeTag, Mesh, MeshPreset, Point};
use crate::mesh_motion::{
    displace_surface, edge_coefficients, element_mesh_velocity, kinematic_surface_velocity, pinned_surface_nodes,
    scatter_field, solve_mesh_velocity, update_coordinates, AleHistory,
};
use crate::parallel;
use crate::spline::{fit_spline, SurfaceSpline};

/// Abort threshold for any coefficient magnitude.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub re: f64,
    /// 0 = no-slip
    pub b_sl: f64,
    pub sigma: f64,
    pub order: usize,
    pub dt: f64,
    pub l1: f64,
    pub l2: f64,
    pub h: f64,
    pub steady_tol: f64,
    pub max_steps: usize,
    /// settle the free surface with Newton before the confirming ALE steps
    pub accelerate: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            re: 0.0,
            b_sl: 0.0,
            sigma: 0.0,
            order: 10,
            dt: 5e-3,
            l1: 10.0,
            l2: 10.0,
            h: 1.0,
            steady_tol: 1e-6,
            max_steps: 200_000,
            accelerate: true,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [("dt", self.dt), ("steady_tol", self.steady_tol), ("L1", self.l1), ("L2", self.l2), ("H", self.h)];
        for (what, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(SwellError::OutOfRange {
                    what,
                    value: v,
                    range: "(0, inf)".into(),
                });
            }
        }
        for (what, v) in [("Re", self.re), ("B_sl", self.b_sl)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(SwellError::OutOfRange {
                    what,
                    value: v,
                    range: "[0, inf)".into(),
                });
            }
        }
        if !self.sigma.is_finite() {
            return Err(SwellError::InvalidArgument("sigma must be finite".into()));
        }
        if self.order < 2 {
            return Err(SwellError::OutOfRange {
                what: "P",
                value: self.order as f64,
                range: "[2, inf)".into(),
            });
        }
        Ok(())
    }

    pub fn build_mesh(&self) -> Result<Mesh> {
        self.validate()?;
        build_dieswell_mesh(self.l1, self.l2, self.h, MeshPreset::Default, self.order)
    }
}

/// Inflow velocity at height `y` (in units of the half-height).
pub fn inflow_profile(y: f64, b_sl: f64) -> (f64, f64) {
    let u = if b_sl > 0.0 {
        3.0 * (1.0 - y * y + 2.0 * b_sl) / (2.0 * (1.0 + 3.0 * b_sl))
    } else {
        1.5 * (1.0 - y * y)
    };
    (u, 0.0)
}

/// Treatment of the edges tagged as free surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurfaceCondition {
    /// traction-free (plus surface tension), moving
    Free,
    /// rigid shear-free lid: v = 0, zero tangential traction
    ShearFreeLid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    /// global velocity coefficients per component
    pub velocity: [Vec<f64>; 2],
    /// element pressure coefficients, `n_p` per element
    pub pressure: Vec<f64>,
    /// global mesh-velocity coefficients per component
    pub mesh_velocity: [Vec<f64>; 2],
    pub t: f64,
}

impl FieldState {
    pub fn zeros(mesh: &Mesh) -> Self {
        let n = mesh.n_velocity();
        FieldState {
            velocity: [vec![0.0; n], vec![0.0; n]],
            pressure: vec![0.0; mesh.elements.len() * mesh.tables.npressure()],
            mesh_velocity: [vec![0.0; n], vec![0.0; n]],
            t: 0.0,
        }
    }

    /// Nodal interpolation of the given fields at the Lobatto points of each
    /// element (velocity) and of the pressure space.
    pub fn interpolate(
        mesh: &Mesh,
        u: impl Fn(f64, f64) -> f64,
        v: impl Fn(f64, f64) -> f64,
        p: impl Fn(f64, f64) -> f64,
    ) -> Result<Self> {
        let mut s = FieldState::zeros(mesh);
        let t = &mesh.tables;
        let nodes = &mesh.geometry_nodes;
        let n1 = t.basis.nmodes();
        let a = Mat::<f64>::from_fn(n1, n1, |k, m| t.basis.eval(m, nodes[k]));
        let np1 = t.pressure.nmodes_1d();
        let pnodes = if np1 >= 2 { make_quadrature(np1)?.0 } else { vec![0.0] };
        let ap = Mat::<f64>::from_fn(np1, np1, |k, m| t.pressure.eval_all(pnodes[k])[m]);
        for (e, el) in mesh.elements.iter().enumerate() {
            for (c, f) in [&u as &dyn Fn(f64, f64) -> f64, &v].iter().enumerate() {
                let vals = Mat::<f64>::from_fn(n1, n1, |k1, k2| {
                    let x = map_to_physical(t, el, nodes[k1], nodes[k2]);
                    f(x[0], x[1])
                });
                let coeffs = tensor_collocate(&a, &vals);
                for (m, &(g, sg)) in mesh.numbering.element_maps[e].iter().enumerate() {
                    s.velocity[c][g] = sg * coeffs[m];
                }
            }
            let vals = Mat::<f64>::from_fn(np1, np1, |k1, k2| {
                let x = map_to_physical(t, el, pnodes[k1], pnodes[k2]);
                p(x[0], x[1])
            });
            let coeffs = tensor_collocate(&ap, &vals);
            let np = np1 * np1;
            s.pressure[e * np..(e + 1) * np].copy_from_slice(&coeffs);
        }
        Ok(s)
    }

    pub fn element_pressure<'a>(&'a self, mesh: &Mesh, el: usize) -> &'a [f64] {
        let np = mesh.tables.npressure();
        &self.pressure[el * np..(el + 1) * np]
    }

    pub fn max_abs(&self) -> f64 {
        self.velocity
            .iter()
            .chain(&self.mesh_velocity)
            .chain(std::iter::once(&self.pressure))
            .flat_map(|v| v.iter())
            .fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Largest coefficient change across velocity, pressure and mesh velocity.
    pub fn max_change(&self, other: &FieldState) -> f64 {
        let pairs = self
            .velocity
            .iter()
            .zip(&other.velocity)
            .chain(self.mesh_velocity.iter().zip(&other.mesh_velocity))
            .chain(std::iter::once((&self.pressure, &other.pressure)));
        pairs
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }
}

/// Solves `A C A^T = F` for the tensor coefficients `C` (row index = xi2 mode).
fn tensor_collocate(a: &Mat<f64>, vals: &Mat<f64>) -> Vec<f64> {
    use faer::prelude::Solve;
    // vals[(k1, k2)] = sum_{p,q} A[k1][p] C[p][q] A[k2][q]
    let lu = a.partial_piv_lu();
    let y = lu.solve(vals); // A^{-1} vals
    let c = lu.solve(y.transpose().to_owned()); // (A^{-1} (A^{-1} vals)^T) = C^T
    let n = a.nrows();
    let mut out = vec![0.0; n * n];
    for q in 0..n {
        for p in 0..n {
            out[q * n + p] = c[(q, p)];
        }
    }
    out
}

/// Dirichlet data for the fluid unknowns, indexed like the global system
/// (`u` boundary modes, `v` boundary modes, element pressures).
pub fn fluid_dirichlet(mesh: &Mesh, cfg: &SimConfig, surface: SurfaceCondition) -> Result<Vec<Option<f64>>> {
    let nb = mesh.numbering.n_boundary;
    let mut dir = vec![None; 2 * nb + mesh.elements.len()];
    let set = |dir: &mut Vec<Option<f64>>, idx: usize, val: f64| -> Result<()> {
        match dir[idx] {
            Some(old) if (old - val).abs() > 1e-12 * (1.0 + old.abs()) => Err(SwellError::InconsistentDirichlet {
                dof: idx,
                first: old,
                second: val,
            }),
            _ => {
                dir[idx] = Some(val);
                Ok(())
            }
        }
    };
    let t = &mesh.tables;
    for (e, el) in mesh.elements.iter().enumerate() {
        for edge in 0..4 {
            let tag = el.edge_tags[edge];
            let (fix_u, fix_v) = match tag {
                EdgeTag::Inflow => (true, true),
                EdgeTag::Wall => (cfg.b_sl == 0.0, true),
                EdgeTag::Symmetry => (false, true),
                EdgeTag::FreeSurface => (false, surface == SurfaceCondition::ShearFreeLid),
                _ => (false, false),
            };
            if !fix_u && !fix_v {
                continue;
            }
            let pts: Vec<Point> = mesh
                .geometry_nodes
                .iter()
                .map(|&s| {
                    let (a, b) = crate::mesh::edge_reference_point(edge, s);
                    map_to_physical(t, el, a, b)
                })
                .collect();
            let (uv, vv): (Vec<f64>, Vec<f64>) = pts
                .iter()
                .map(|p| {
                    if tag == EdgeTag::Inflow {
                        inflow_profile(p[1] / cfg.h, cfg.b_sl)
                    } else {
                        (0.0, 0.0)
                    }
                })
                .unzip();
            if fix_u {
                for (g, val) in edge_coefficients(mesh, e, edge, &uv) {
                    set(&mut dir, g, val)?;
                }
            }
            if fix_v {
                for (g, val) in edge_coefficients(mesh, e, edge, &vv) {
                    set(&mut dir, nb + g, val)?;
                }
            }
        }
    }
    Ok(dir)
}

/// Per-step inputs to the fluid element systems.
pub struct FluidInputs<'a> {
    pub cfg: &'a SimConfig,
    /// velocity carried into the inertial term (`None` = steady problem)
    pub previous: Option<&'a [Vec<f64>; 2]>,
    /// linearization velocity `u*`
    pub advecting: &'a [Vec<f64>; 2],
    /// element-local mesh velocity, if the mesh moves
    pub mesh_velocity: Option<&'a [[Vec<f64>; 2]]>,
    pub spline: Option<&'a SurfaceSpline>,
}

fn apply_mat(a: &Mat<f64>, x: &[f64]) -> Vec<f64> {
    (0..a.nrows())
        .map(|j| (0..a.ncols()).map(|i| a[(j, i)] * x[i]).sum())
        .collect()
}

/// Builds the element saddle-point system `[H, -D^T; -D, 0]`.
pub fn fluid_element_system(mesh: &Mesh, e: usize, inp: &FluidInputs) -> Result<ElementSystem> {
    let t = &mesh.tables;
    let el = &mesh.elements[e];
    let cfg = inp.cfg;
    let (n, np, nq) = (t.nmodes(), t.npressure(), t.nquad());
    let nb = mesh.numbering.n_boundary;
    let ops = element_ops(t, el)?;
    let open: Vec<usize> = (0..4).filter(|&k| el.edge_tags[k] == EdgeTag::Outflow).collect();
    let mut h = elem_viscous(t, el, &ops, &open);

    let mut scalar = Mat::<f64>::zeros(n, n);
    if cfg.re > 0.0 {
        let u = mesh.numbering.gather(e, &inp.advecting[0]);
        let v = mesh.numbering.gather(e, &inp.advecting[1]);
        let mut cu = apply_mat(&t.values, &u);
        let mut cv = apply_mat(&t.values, &v);
        if let Some(w) = inp.mesh_velocity {
            let wx = apply_mat(&t.values, &w[e][0]);
            let wy = apply_mat(&t.values, &w[e][1]);
            for q in 0..nq {
                cu[q] -= wx[q];
                cv[q] -= wy[q];
            }
        }
        let adv: Vec<[f64; 2]> = cu.into_iter().zip(cv).map(|(a, b)| [a, b]).collect();
        scalar += elem_convection(t, &ops, &adv)? * faer::Scale(cfg.re);
    }
    let mass = if inp.previous.is_some() && cfg.re > 0.0 {
        let m = elem_mass(t, &ops, cfg.re, cfg.dt)?;
        scalar += &m;
        Some(m)
    } else {
        None
    };
    let slip = if cfg.b_sl > 0.0 && el.edge_tags.contains(&EdgeTag::Wall) {
        Some(slip_boundary_matrix(t, el, cfg.b_sl)?)
    } else {
        None
    };
    for j in 0..n {
        for i in 0..n {
            h[(j, i)] += scalar[(j, i)];
            h[(n + j, n + i)] += scalar[(j, i)];
        }
    }
    if let Some(s) = &slip {
        for j in 0..n {
            for i in 0..n {
                h[(j, i)] += s[(j, i)];
            }
        }
    }
    let (dx, dy) = elem_divergence(t, &ops);
    let size = 2 * n + np;
    let mut a = Mat::<f64>::zeros(size, size);
    for j in 0..2 * n {
        for i in 0..2 * n {
            a[(j, i)] = h[(j, i)];
        }
    }
    for k in 0..np {
        for i in 0..n {
            a[(2 * n + k, i)] = -dx[(k, i)];
            a[(2 * n + k, n + i)] = -dy[(k, i)];
            a[(i, 2 * n + k)] = -dx[(k, i)];
            a[(n + i, 2 * n + k)] = -dy[(k, i)];
        }
    }

    let mut rhs = vec![0.0; size];
    if let (Some(m), Some(prev)) = (&mass, inp.previous) {
        for c in 0..2 {
            let loc = mesh.numbering.gather(e, &prev[c]);
            for (j, val) in apply_mat(m, &loc).into_iter().enumerate() {
                rhs[c * n + j] += val;
            }
        }
    }
    if let Some(spline) = inp.spline {
        if cfg.sigma != 0.0 && el.edge_tags.contains(&EdgeTag::FreeSurface) {
            let b = free_surface_load(t, el, spline, cfg.sigma)?;
            for (r, val) in rhs.iter_mut().zip(b) {
                *r += val;
            }
        }
    }

    let mut dofs = Vec::with_capacity(size);
    for c in 0..2 {
        for &(g, s) in &mesh.numbering.element_maps[e] {
            dofs.push(if g < nb {
                DofRef::Global {
                    index: c * nb + g,
                    sign: s,
                }
            } else {
                DofRef::Local
            });
        }
    }
    dofs.push(DofRef::Global {
        index: 2 * nb + e,
        sign: 1.0,
    });
    dofs.extend(std::iter::repeat_n(DofRef::Local, np - 1));
    Ok(ElementSystem { matrix: a, rhs, dofs })
}

/// Assembles, condenses and solves one linearized fluid problem.
pub fn solve_fluid(mesh: &Mesh, inp: &FluidInputs, dirichlet: &[Option<f64>]) -> Result<([Vec<f64>; 2], Vec<f64>)> {
    let systems = parallel::try_map_indexed(mesh.elements.len(), |e| fluid_element_system(mesh, e, inp))?;
    let sol = static_condense(&systems, dirichlet)?.solve()?;
    let nb = mesh.numbering.n_boundary;
    let nt = mesh.numbering.n_total;
    let (n, np) = (mesh.tables.nmodes(), mesh.tables.npressure());
    let mut vel = [vec![0.0; nt], vec![0.0; nt]];
    for c in 0..2 {
        vel[c][..nb].copy_from_slice(&sol.global[c * nb..(c + 1) * nb]);
    }
    let mut pressure = vec![0.0; mesh.elements.len() * np];
    for (e, local) in sol.local.iter().enumerate() {
        for (m, &(g, s)) in mesh.numbering.element_maps[e].iter().enumerate() {
            if g >= nb {
                vel[0][g] = s * local[m];
                vel[1][g] = s * local[n + m];
            }
        }
        pressure[e * np..(e + 1) * np].copy_from_slice(&local[2 * n..]);
    }
    Ok((vel, pressure))
}

/// Picard tolerance and iteration cap for steady fixed-domain solves.
pub const PICARD_TOL: f64 = 1e-12;
pub const PICARD_MAX_ITER: usize = 300;

/// Steady solve on a fixed domain, Picard-iterating the convective term
/// from `start`. Errors if the iteration does not settle.
pub fn steady_fluid(
    mesh: &Mesh,
    cfg: &SimConfig,
    dirichlet: &[Option<f64>],
    start: FieldState,
    spline: Option<&SurfaceSpline>,
) -> Result<FieldState> {
    let mut state = start;
    let max_iter = if cfg.re > 0.0 { PICARD_MAX_ITER } else { 1 };
    let mut change = f64::INFINITY;
    for it in 0..max_iter {
        let inp = FluidInputs {
            cfg,
            previous: None,
            advecting: &state.velocity,
            mesh_velocity: None,
            spline,
        };
        let (vel, p) = solve_fluid(mesh, &inp, dirichlet)?;
        let mut next = state.clone();
        next.velocity = vel;
        next.pressure = p;
        change = next.max_change(&state);
        state = next;
        debug!("picard iteration {it}: change {change:.3e}");
        if change < PICARD_TOL || !(change < DIVERGENCE_LIMIT) {
            break;
        }
    }
    if cfg.re > 0.0 && !(change < PICARD_TOL * 1e3) {
        return Err(SwellError::Diverged {
            step: max_iter,
            value: change,
        });
    }
    for c in 0..2 {
        state.mesh_velocity[c].iter_mut().for_each(|w| *w = 0.0);
    }
    Ok(state)
}

/// Fixed-domain steady solve with Picard iteration on the convective term.
pub fn solve_steady_fixed(mesh: &Mesh, cfg: &SimConfig, surface: SurfaceCondition) -> Result<FieldState> {
    cfg.validate()?;
    let dir = fluid_dirichlet(mesh, cfg, surface)?;
    steady_fluid(mesh, cfg, &dir, FieldState::zeros(mesh), None)
}

/// Stick-slip problem: the free surface replaced by a flat shear-free lid.
pub fn solve_stick_slip(mesh: &Mesh, cfg: &SimConfig) -> Result<FieldState> {
    solve_steady_fixed(mesh, cfg, SurfaceCondition::ShearFreeLid)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyOutcome {
    /// ALE steps taken
    pub steps: usize,
    pub converged: bool,
    pub last_change: f64,
    /// Newton iterations on the surface heights (0 if not used)
    pub newton_iterations: usize,
}

/// Result of settling the free surface with Newton.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOutcome {
    pub iterations: usize,
    pub jacobians: usize,
    /// max kinematic residual `|w_y|` over the free surface nodes
    pub residual: f64,
    pub converged: bool,
}

/// Newton controls for the surface settle.
pub const NEWTON_TOL: f64 = 1e-9;
pub const NEWTON_MAX_ITER: usize = 60;
const NEWTON_FD_STEP: f64 = 1e-6;
/// largest height update per Newton iteration, in units of H
const NEWTON_MAX_UPDATE: f64 = 0.05;
const NEWTON_BACKTRACKS: usize = 10;
/// pseudo-time step the continuation falls back to when a Newton step fails
const NEWTON_PSEUDO_DT: f64 = 1.0;
const NEWTON_MAX_PSEUDO_DT: f64 = 1e12;
const NEWTON_GROWTH: f64 = 1.5;

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m: f64, x| m.max(x.abs()))
}

/// A running ALE simulation: mesh, fields and multistep history.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub cfg: SimConfig,
    pub mesh: Mesh,
    pub state: FieldState,
    pub history: AleHistory,
    pub steps: usize,
    /// Dirichlet data; fixed because boundary edges with data never move
    dirichlet: Vec<Option<f64>>,
    surface: SurfaceCondition,
}

impl Simulation {
    pub fn new(cfg: SimConfig, mesh: Mesh, state: FieldState) -> Result<Self> {
        Self::with_surface(cfg, mesh, state, SurfaceCondition::Free)
    }

    pub fn with_surface(cfg: SimConfig, mesh: Mesh, state: FieldState, surface: SurfaceCondition) -> Result<Self> {
        cfg.validate()?;
        if cfg.order != mesh.order {
            return Err(SwellError::InvalidArgument(format!(
                "config order {} does not match mesh order {}",
                cfg.order, mesh.order
            )));
        }
        let dirichlet = fluid_dirichlet(&mesh, &cfg, surface)?;
        Ok(Simulation {
            cfg,
            mesh,
            state,
            history: AleHistory::default(),
            steps: 0,
            dirichlet,
            surface,
        })
    }

    /// Changes the Reynolds number (or other physical parameters) while
    /// keeping mesh, fields and history.
    pub fn set_config(&mut self, cfg: SimConfig) -> Result<()> {
        cfg.validate()?;
        if cfg.order != self.mesh.order {
            return Err(SwellError::InvalidArgument("polynomial order cannot change mid-run".into()));
        }
        self.dirichlet = fluid_dirichlet(&self.mesh, &cfg, self.surface)?;
        self.cfg = cfg;
        Ok(())
    }

    pub fn spline(&self) -> Result<Option<SurfaceSpline>> {
        if self.mesh.surface.len() < 4 || self.surface != SurfaceCondition::Free {
            return Ok(None);
        }
        let pts: Vec<(f64, f64)> = self.mesh.surface.iter().map(|p| (p[0], p[1])).collect();
        fit_spline(&pts).map(Some)
    }

    /// One step: move the mesh, then solve the linearized fluid problem on
    /// the new geometry. Returns the largest coefficient change.
    pub fn step(&mut self) -> Result<f64> {
        let dt = self.cfg.dt;
        let mut w_local = None;
        let mut w_global = [vec![0.0; self.mesh.n_velocity()], vec![0.0; self.mesh.n_velocity()]];
        let mut spline = None;
        if let Some(s) = self.spline()? {
            let mv = solve_mesh_velocity(&self.mesh, &self.state.velocity, &s)?;
            let old_geom: Vec<Vec<Point>> = self.mesh.elements.iter().map(|e| e.geom_coeffs.clone()).collect();
            let moved = mv.moved_points(&self.mesh);
            update_coordinates(&mut self.mesh, &moved, &mut self.history, dt)?;
            let local = element_mesh_velocity(&self.mesh, &old_geom, dt);
            w_global = scatter_field(&self.mesh, &local);
            w_local = Some(local);
            if self.cfg.sigma != 0.0 {
                spline = self.spline()?;
            }
        }
        let inp = FluidInputs {
            cfg: &self.cfg,
            previous: Some(&self.state.velocity),
            advecting: &self.state.velocity,
            mesh_velocity: w_local.as_deref(),
            spline: spline.as_ref(),
        };
        let (vel, p) = solve_fluid(&self.mesh, &inp, &self.dirichlet)?;
        let next = FieldState {
            velocity: vel,
            pressure: p,
            mesh_velocity: w_global,
            t: self.state.t + dt,
        };
        let change = next.max_change(&self.state);
        let peak = next.max_abs();
        self.steps += 1;
        if !(peak <= DIVERGENCE_LIMIT) {
            return Err(SwellError::Diverged {
                step: self.steps,
                value: peak,
            });
        }
        self.state = next;
        Ok(change)
    }

    /// Steady fluid on `mesh` (frozen) warm-started from `start`, and the
    /// kinematic residual `w_y` at the free surface nodes.
    fn surface_residual(&self, mesh: &Mesh, start: &FieldState, free: &[usize]) -> Result<(Vec<f64>, FieldState)> {
        let pts: Vec<(f64, f64)> = mesh.surface.iter().map(|p| (p[0], p[1])).collect();
        let spline = fit_spline(&pts)?;
        let load = (self.cfg.sigma != 0.0).then_some(&spline);
        let state = steady_fluid(mesh, &self.cfg, &self.dirichlet, start.clone(), load)?;
        let w = kinematic_surface_velocity(mesh, &state.velocity, &spline)?;
        Ok((free.iter().map(|&k| w[k][1]).collect(), state))
    }

    fn surface_jacobian(&self, base: &[f64], start: &FieldState, free: &[usize]) -> Result<Mat<f64>> {
        let n = free.len();
        let ns = self.mesh.surface.len();
        let cols = parallel::try_map_indexed(n, |j| {
            let mut mesh = self.mesh.clone();
            let mut dy = vec![0.0; ns];
            dy[free[j]] = NEWTON_FD_STEP * self.cfg.h;
            displace_surface(&mut mesh, &dy)?;
            let (r, _) = self.surface_residual(&mesh, start, free)?;
            Ok::<_, SwellError>(r)
        })?;
        Ok(Mat::from_fn(n, n, |i, j| (cols[j][i] - base[i]) / (NEWTON_FD_STEP * self.cfg.h)))
    }

    /// Drives the kinematic residual on the free surface to zero by
    /// pseudo-transient continuation on the surface heights, solving
    /// `(I/tau - J) dh = R` with a finite-difference Jacobian that is reused
    /// while convergence stays fast. Each residual is a steady fluid solve on
    /// the frozen geometry. On success the mesh and
    /// fields hold the settled state, mesh velocity and history are reset.
    /// On failure everything is left as it was.
    pub fn settle_surface(&mut self) -> Result<NewtonOutcome> {
        use faer::prelude::Solve;
        if self.spline()?.is_none() {
            return Err(SwellError::InvalidArgument("no free surface to settle".into()));
        }
        let pinned = pinned_surface_nodes(&self.mesh);
        let free: Vec<usize> = (0..pinned.len()).filter(|&k| !pinned[k]).collect();
        let saved_mesh = self.mesh.clone();
        let mut out = NewtonOutcome {
            iterations: 0,
            jacobians: 0,
            residual: f64::INFINITY,
            converged: false,
        };
        let result = (|| -> Result<FieldState> {
            let (mut r, mut state) = self.surface_residual(&self.mesh, &self.state, &free)?;
            let mut merit = l2(&r);
            let mut jac: Option<Mat<f64>> = None;
            let mut fresh = false;
            let mut tau = NEWTON_PSEUDO_DT;
            let n = free.len();
            loop {
                out.residual = max_abs(&r);
                let worst = (0..r.len()).max_by(|&a, &b| r[a].abs().total_cmp(&r[b].abs())).unwrap_or(0);
                info!(
                    "newton {}: kinematic residual {:.3e} at x = {:.4} (tau {tau:.2e})",
                    out.iterations,
                    out.residual,
                    self.mesh.surface[free[worst]][0]
                );
                if out.residual < NEWTON_TOL {
                    out.converged = true;
                    return Ok(state);
                }
                if out.iterations >= NEWTON_MAX_ITER {
                    return Ok(state);
                }
                if jac.is_none() {
                    jac = Some(self.surface_jacobian(&r, &state, &free)?);
                    out.jacobians += 1;
                    fresh = true;
                }
                let j = jac.as_ref().expect("jacobian present");
                let mut accepted = None;
                for _ in 0..NEWTON_BACKTRACKS {
                    // implicit pseudo-time step of h_t = R(h)
                    let a = Mat::from_fn(n, n, |i, k| if i == k { 1.0 / tau } else { 0.0 } - j[(i, k)]);
                    let rhs = Mat::from_fn(n, 1, |i, _| r[i]);
                    let delta = a.partial_piv_lu().solve(&rhs);
                    let biggest = (0..n).fold(0.0, |m: f64, i| m.max(delta[(i, 0)].abs()));
                    let scale = (NEWTON_MAX_UPDATE * self.cfg.h / biggest).min(1.0);
                    let mut trial = self.mesh.clone();
                    let mut dy = vec![0.0; trial.surface.len()];
                    for (i, &k) in free.iter().enumerate() {
                        dy[k] = scale * delta[(i, 0)];
                    }
                    match displace_surface(&mut trial, &dy).and_then(|_| self.surface_residual(&trial, &state, &free)) {
                        Ok((rt, st)) => {
                            let mt = l2(&rt);
                            // continuation steps follow the relaxation, along which the
                            // residual norm need not decrease monotonically
                            let allowed = if tau < NEWTON_MAX_PSEUDO_DT { NEWTON_GROWTH * merit } else { merit };
                            if mt < allowed {
                                accepted = Some((trial, rt, st, mt));
                                break;
                            }
                            debug!("newton trial tau {tau:.2e}: merit {mt:.3e} vs {merit:.3e}");
                        }
                        Err(e) => debug!("newton trial tau {tau:.2e} rejected: {e}"),
                    }
                    tau = if tau >= NEWTON_PSEUDO_DT { NEWTON_PSEUDO_DT } else { 0.25 * tau };
                }
                match accepted {
                    Some((mesh, rt, st, mt)) => {
                        tau = (tau * merit / mt).min(NEWTON_MAX_PSEUDO_DT);
                        // keep the Jacobian while the iteration contracts well
                        if mt > 0.1 * merit {
                            jac = None;
                        }
                        self.mesh = mesh;
                        merit = mt;
                        r = rt;
                        state = st;
                        fresh = false;
                        out.iterations += 1;
                    }
                    None if !fresh => {
                        jac = None;
                        tau = NEWTON_MAX_PSEUDO_DT;
                    }
                    None => return Ok(state),
                }
            }
        })();
        match result {
            Ok(state) if out.converged => {
                self.state = FieldState { t: self.state.t, ..state };
                self.history = AleHistory::default();
                Ok(out)
            }
            Ok(_) => {
                self.mesh = saved_mesh;
                Ok(out)
            }
            Err(e) => {
                self.mesh = saved_mesh;
                Err(e)
            }
        }
    }

    /// Steps until the coefficient change drops below `steady_tol` or
    /// `max_steps` is reached. `on_step` sees (step, change). With
    /// `accelerate` set, the free surface is first settled with Newton and
    /// the ALE steps confirm the steady state; if Newton fails the plain
    /// ALE iteration runs from the original state.
    pub fn run_to_steady_with(&mut self, mut on_step: impl FnMut(usize, f64)) -> Result<SteadyOutcome> {
        let mut newton_iterations = 0;
        if self.cfg.accelerate && self.spline()?.is_some() {
            match self.settle_surface() {
                Ok(o) if o.converged => newton_iterations = o.iterations,
                Ok(o) => log::warn!("newton settle stopped at residual {:.3e}; continuing with ALE steps", o.residual),
                Err(e) => log::warn!("newton settle failed ({e}); continuing with ALE steps"),
            }
        }
        let mut last = f64::INFINITY;
        for k in 0..self.cfg.max_steps {
            last = self.step()?;
            log::debug!("step {}: change {last:.3e}", self.steps);
            on_step(self.steps, last);
            if last < self.cfg.steady_tol {
                info!("steady after {} steps (change {last:.3e})", k + 1);
                return Ok(SteadyOutcome {
                    steps: k + 1,
                    converged: true,
                    last_change: last,
                    newton_iterations,
                });
            }
        }
        Ok(SteadyOutcome {
            steps: self.cfg.max_steps,
            converged: false,
            last_change: last,
            newton_iterations,
        })
    }

    pub fn run_to_steady(&mut self) -> Result<SteadyOutcome> {
        self.run_to_steady_with(|_, _| {})
    }

    /// Versioned text checkpoint of time, geometry, fields and history.
    pub fn checkpoint(&self) -> String {
        let mut s = String::from(CHECKPOINT_HEADER);
        s.push('\n');
        let _ = writeln!(s, "t {:e}", self.state.t);
        let _ = writeln!(s, "steps {}", self.steps);
        let _ = writeln!(s, "order {}", self.mesh.order);
        let points = |s: &mut String, name: &str, v: &[Point]| {
            let _ = write!(s, "{name} {}", v.len());
            for p in v {
                let _ = write!(s, " {:e} {:e}", p[0], p[1]);
            }
            s.push('\n');
        };
        let scalars = |s: &mut String, name: &str, v: &[f64]| {
            let _ = write!(s, "{name} {}", v.len());
            for x in v {
                let _ = write!(s, " {x:e}");
            }
            s.push('\n');
        };
        points(&mut s, "vertices", &self.mesh.vertices);
        points(&mut s, "surface", &self.mesh.surface);
        scalars(&mut s, "u", &self.state.velocity[0]);
        scalars(&mut s, "v", &self.state.velocity[1]);
        scalars(&mut s, "p", &self.state.pressure);
        scalars(&mut s, "wx", &self.state.mesh_velocity[0]);
        scalars(&mut s, "wy", &self.state.mesh_velocity[1]);
        let _ = writeln!(s, "history {}", self.history.len());
        for level in &self.history.levels {
            points(&mut s, "level", level);
        }
        s
    }

    /// Restores a checkpoint written by [`Simulation::checkpoint`] onto a
    /// simulation built with the same configuration.
    pub fn restore(&mut self, text: &str) -> Result<()> {
        let bad = |m: &str| SwellError::Checkpoint(m.to_string());
        let mut lines = text.lines();
        if lines.next() != Some(CHECKPOINT_HEADER) {
            return Err(bad("missing or unsupported header"));
        }
        let mut field = |name: &str| -> Result<Vec<f64>> {
            let line = lines.next().ok_or_else(|| bad("truncated checkpoint"))?;
            let mut it = line.split_whitespace();
            if it.next() != Some(name) {
                return Err(SwellError::Checkpoint(format!("expected '{name}' record")));
            }
            it.map(|x| x.parse::<f64>().map_err(|e| SwellError::Checkpoint(format!("{name}: {e}"))))
                .collect()
        };
        let t = field("t")?[0];
        let steps = field("steps")?[0] as usize;
        let order = field("order")?[0] as usize;
        if order != self.mesh.order {
            return Err(bad("polynomial order differs from the running configuration"));
        }
        let as_points = |v: Vec<f64>, expected: usize| -> Result<Vec<Point>> {
            if v.first().map(|&n| n as usize) != Some(expected) || v.len() != 1 + 2 * expected {
                return Err(SwellError::Checkpoint("point record has wrong length".into()));
            }
            Ok(v[1..].chunks(2).map(|c| [c[0], c[1]]).collect())
        };
        let as_scalars = |v: Vec<f64>, expected: usize| -> Result<Vec<f64>> {
            if v.first().map(|&n| n as usize) != Some(expected) || v.len() != 1 + expected {
                return Err(SwellError::Checkpoint("scalar record has wrong length".into()));
            }
            Ok(v[1..].to_vec())
        };
        let nv = self.mesh.vertices.len();
        let ns = self.mesh.surface.len();
        let nt = self.mesh.n_velocity();
        let vertices = as_points(field("vertices")?, nv)?;
        let surface = as_points(field("surface")?, ns)?;
        let u = as_scalars(field("u")?, nt)?;
        let v = as_scalars(field("v")?, nt)?;
        let p = as_scalars(field("p")?, self.state.pressure.len())?;
        let wx = as_scalars(field("wx")?, nt)?;
        let wy = as_scalars(field("wy")?, nt)?;
        let nh = field("history")?[0] as usize;
        let mut history = AleHistory::default();
        let mut levels = Vec::new();
        for _ in 0..nh {
            levels.push(as_points(field("level")?, ns + nv)?);
        }
        for l in levels.into_iter().rev() {
            history.push(l);
        }
        self.mesh.vertices = vertices;
        self.mesh.surface = surface;
        self.mesh.rebuild_mappings()?;
        self.state = FieldState {
            velocity: [u, v],
            pressure: p,
            mesh_velocity: [wx, wy],
            t,
        };
        self.history = history;
        self.steps = steps;
        Ok(())
    }
}

pub const CHECKPOINT_HEADER: &str = "swellhp-checkpoint v1";
