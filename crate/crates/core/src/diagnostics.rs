//! Quantities of interest extracted from a (steady) solution: swelling
//! ratio, exit pressure correction, plug velocity, flow rates, pressure
//! extrema near the die lip and sampled profiles.

use std::fmt::Write as _;

use crate::basis::{make_quadrature, tensor_contract};
use crate::error::{Result, SwellError};
use crate::mesh::{invert_map, map_jacobian, map_to_physical, Mesh, Point};
use crate::ns_solver::{FieldState, SimConfig, Simulation};
use crate::spline::SurfaceSpline;

/// Vertical cuts (in units of H) used for the flow-rate checks; each is an
/// element break of the default mesh.
pub const FLOW_CUTS: [f64; 5] = [-3.0, -0.3, 0.3, 2.0, 5.0];

/// Largest mesh-velocity coefficient a state may carry and still count as
/// steady for the pressure diagnostics.
pub const STEADY_MESH_VELOCITY: f64 = 1e-6;

/// Nondimensional wall shear of the inflow profile, `|du/dy|` at the wall.
/// Equals 3 for the no-slip parabola.
pub fn wall_shear(b_sl: f64) -> f64 {
    3.0 / (1.0 + 3.0 * b_sl)
}

/// `S(L2) / H`.
pub fn swell_ratio(spline: &SurfaceSpline, l2: f64, h: f64) -> Result<f64> {
    Ok(spline.value(l2)? / h)
}

/// Velocity and pressure `[u, v, p]` at reference point `(xi1, xi2)` of
/// element `el`.
pub fn evaluate_at(mesh: &Mesh, state: &FieldState, el: usize, xi1: f64, xi2: f64) -> [f64; 3] {
    let t = &mesh.tables;
    let b1 = t.basis.eval_all(xi1);
    let b2 = t.basis.eval_all(xi2);
    let u = mesh.numbering.gather(el, &state.velocity[0]);
    let v = mesh.numbering.gather(el, &state.velocity[1]);
    [
        tensor_contract(&u, &b1, &b2),
        tensor_contract(&v, &b1, &b2),
        t.pressure.eval(state.element_pressure(mesh, el), xi1, xi2),
    ]
}

/// `[u, v, p]` at a physical point.
pub fn evaluate(mesh: &Mesh, state: &FieldState, x: Point) -> Result<[f64; 3]> {
    let (el, a, b) = mesh.locate(x)?;
    Ok(evaluate_at(mesh, state, el, a, b))
}

/// Physical velocity gradient `[[du/dx, du/dy], [dv/dx, dv/dy]]` at a
/// reference point.
pub fn velocity_gradient_at(mesh: &Mesh, state: &FieldState, el: usize, xi1: f64, xi2: f64) -> [[f64; 2]; 2] {
    let t = &mesh.tables;
    let (b1, b2) = (t.basis.eval_all(xi1), t.basis.eval_all(xi2));
    let (d1, d2) = (t.basis.deriv_all(xi1), t.basis.deriv_all(xi2));
    let j = map_jacobian(t, &mesh.elements[el], xi1, xi2);
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    let mut out = [[0.0; 2]; 2];
    for c in 0..2 {
        let f = mesh.numbering.gather(el, &state.velocity[c]);
        let g1 = tensor_contract(&f, &d1, &b2);
        let g2 = tensor_contract(&f, &b1, &d2);
        out[c][0] = (j[1][1] * g1 - j[1][0] * g2) / det;
        out[c][1] = (-j[0][1] * g1 + j[0][0] * g2) / det;
    }
    out
}

fn require_steady(state: &FieldState) -> Result<()> {
    let w = state.mesh_velocity.iter().flatten().fold(0.0, |m: f64, x| m.max(x.abs()));
    if w > STEADY_MESH_VELOCITY {
        return Err(SwellError::InvalidArgument(format!(
            "state is not steady (mesh velocity {w:.3e})"
        )));
    }
    Ok(())
}

/// `(dp - dp0) / (2 sigma_w)` with `dp = p(-L1, 0) - p(L2, 0)` and
/// `dp0 = sigma_w L1 / H`, the fully developed drop over the die.
pub fn exit_pressure_correction(mesh: &Mesh, state: &FieldState, cfg: &SimConfig) -> Result<f64> {
    require_steady(state)?;
    let p_in = evaluate(mesh, state, [-cfg.l1, 0.0])?[2];
    let p_out = evaluate(mesh, state, [cfg.l2, 0.0])?[2];
    let sw = wall_shear(cfg.b_sl);
    let dp0 = sw * cfg.l1 / cfg.h;
    Ok((p_in - p_out - dp0) / (2.0 * sw))
}

/// Centerline `u` at the outflow.
pub fn plug_velocity(mesh: &Mesh, state: &FieldState, cfg: &SimConfig) -> Result<f64> {
    Ok(evaluate(mesh, state, [cfg.l2, 0.0])?[0])
}

/// The elements of one mesh column containing the vertical line at `x`,
/// with the reference `xi1` where the line meets the bottom and top edges.
fn column_at(mesh: &Mesh, x: f64) -> Result<Vec<(usize, f64, f64)>> {
    let span = |el: usize| {
        let xs = mesh.elements[el].vertices.map(|v| mesh.vertices[v][0]);
        (xs.iter().copied().fold(f64::MAX, f64::min), xs.iter().copied().fold(f64::MIN, f64::max))
    };
    let tol = 1e-12 * (1.0 + x.abs());
    let first = (0..mesh.elements.len())
        .find(|&e| {
            let (lo, hi) = span(e);
            lo - tol <= x && x <= hi + tol
        })
        .ok_or(SwellError::PointOutsideMesh { x, y: 0.0 })?;
    let key = span(first);
    let mut col = Vec::new();
    for e in 0..mesh.elements.len() {
        let (lo, hi) = span(e);
        if (lo - key.0).abs() <= tol && (hi - key.1).abs() <= tol {
            let bottom = edge_param_at_x(mesh, e, -1.0, x)?;
            let top = edge_param_at_x(mesh, e, 1.0, x)?;
            col.push((e, bottom, top));
        }
    }
    col.sort_by(|a, b| {
        let ya = map_to_physical(&mesh.tables, &mesh.elements[a.0], a.1, -1.0)[1];
        let yb = map_to_physical(&mesh.tables, &mesh.elements[b.0], b.1, -1.0)[1];
        ya.total_cmp(&yb)
    });
    Ok(col)
}

/// `xi1` on the horizontal edge `xi2 = side` of element `el` where the
/// physical x equals `x`.
fn edge_param_at_x(mesh: &Mesh, el: usize, side: f64, x: f64) -> Result<f64> {
    let t = &mesh.tables;
    let elem = &mesh.elements[el];
    let mut s = 0.0;
    for _ in 0..50 {
        let r = map_to_physical(t, elem, s, side)[0] - x;
        let d = map_jacobian(t, elem, s, side)[0][0];
        if d == 0.0 {
            break;
        }
        let step = r / d;
        s = (s - step).clamp(-1.0, 1.0);
        if step.abs() < 1e-15 {
            break;
        }
    }
    let r = map_to_physical(t, elem, s, side)[0] - x;
    if r.abs() > 1e-10 * (1.0 + x.abs()) {
        return Err(SwellError::PointOutsideMesh { x, y: f64::NAN });
    }
    Ok(s)
}

/// Height of the upper boundary at `x`.
pub fn top_height(mesh: &Mesh, x: f64) -> Result<f64> {
    let col = column_at(mesh, x)?;
    let &(e, _, top) = col.last().expect("column is never empty");
    Ok(map_to_physical(&mesh.tables, &mesh.elements[e], top, 1.0)[1])
}

/// `int u dy` over the vertical line at `x`, from the symmetry line to the
/// upper boundary (half-channel flow rate).
pub fn flow_rate(mesh: &Mesh, state: &FieldState, x: f64) -> Result<f64> {
    let (pts, wts) = make_quadrature(3 * mesh.order + 8)?;
    let t = &mesh.tables;
    let mut q = 0.0;
    for (e, bottom, top) in column_at(mesh, x)? {
        let elem = &mesh.elements[e];
        let y0 = map_to_physical(t, elem, bottom, -1.0)[1];
        let y1 = map_to_physical(t, elem, top, 1.0)[1];
        let half = 0.5 * (y1 - y0);
        for (&s, &w) in pts.iter().zip(&wts) {
            let y = y0 + half * (s + 1.0);
            let (a, b) = invert_map(t, elem, [x, y])?;
            q += w * half * evaluate_at(mesh, state, e, a, b)[0];
        }
    }
    Ok(q)
}

/// Pressure extrema over the quadrature points of the elements that have
/// `lip` as a vertex.
pub fn pressure_extrema_near_lip(mesh: &Mesh, state: &FieldState, lip: Point) -> Result<(f64, f64)> {
    let els = mesh.elements_touching(lip, 1e-9);
    if els.is_empty() {
        return Err(SwellError::PointOutsideMesh { x: lip[0], y: lip[1] });
    }
    let t = &mesh.tables;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for e in els {
        let c = state.element_pressure(mesh, e);
        for q in 0..t.nquad() {
            let p: f64 = (0..c.len()).map(|m| t.p_values[(q, m)] * c[m]).sum();
            lo = lo.min(p);
            hi = hi.max(p);
        }
    }
    Ok((lo, hi))
}

/// Sampling paths for profile output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SamplePath {
    /// symmetry line `y = 0`, inflow to outflow
    Centerline,
    /// upper boundary from the lip to the outflow
    FreeSurface,
    /// die wall `y = H`, inflow to the lip
    Wall,
    /// vertical line at the given `x`, symmetry line to upper boundary
    CrossSection(f64),
}

impl SamplePath {
    pub fn name(&self) -> String {
        match self {
            SamplePath::Centerline => "centerline".into(),
            SamplePath::FreeSurface => "free_surface".into(),
            SamplePath::Wall => "wall".into(),
            SamplePath::CrossSection(x) => format!("cross_section_x{x}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSample {
    /// path coordinate: x for horizontal paths, y for cross-sections
    pub s: f64,
    pub x: f64,
    pub y: f64,
    pub u: f64,
    pub v: f64,
    pub p: f64,
}

/// Samples `[u, v, p]` at `n_points` equispaced positions along `path`.
/// Points on the upper boundary are evaluated on the boundary edge itself.
pub fn sample_path(mesh: &Mesh, state: &FieldState, cfg: &SimConfig, path: SamplePath, n_points: usize) -> Result<Vec<PathSample>> {
    if n_points < 2 {
        return Err(SwellError::InvalidArgument("a path needs at least two points".into()));
    }
    let lerp = |a: f64, b: f64, i: usize| a + (b - a) * i as f64 / (n_points - 1) as f64;
    let mut out = Vec::with_capacity(n_points);
    for i in 0..n_points {
        let sample = match path {
            SamplePath::Centerline => {
                let x = lerp(-cfg.l1, cfg.l2, i);
                point_sample(mesh, state, x, [x, 0.0])?
            }
            SamplePath::Wall => {
                let x = lerp(-cfg.l1, 0.0, i);
                upper_boundary_sample(mesh, state, x, x)?
            }
            SamplePath::FreeSurface => {
                let x = lerp(0.0, cfg.l2, i);
                upper_boundary_sample(mesh, state, x, x)?
            }
            SamplePath::CrossSection(x) => {
                let top = top_height(mesh, x)?;
                let y = lerp(0.0, top, i);
                if i + 1 == n_points {
                    upper_boundary_sample(mesh, state, x, y)?
                } else {
                    point_sample(mesh, state, y, [x, y])?
                }
            }
        };
        out.push(sample);
    }
    Ok(out)
}

fn point_sample(mesh: &Mesh, state: &FieldState, s: f64, x: Point) -> Result<PathSample> {
    let [u, v, p] = evaluate(mesh, state, x)?;
    Ok(PathSample { s, x: x[0], y: x[1], u, v, p })
}

/// Fields on the upper boundary (wall or free surface) at `x`; `s` is stored
/// as the path coordinate.
pub fn upper_boundary_sample(mesh: &Mesh, state: &FieldState, x: f64, s: f64) -> Result<PathSample> {
    let col = column_at(mesh, x)?;
    let &(e, _, top) = col.last().expect("column is never empty");
    let y = map_to_physical(&mesh.tables, &mesh.elements[e], top, 1.0)[1];
    let [u, v, p] = evaluate_at(mesh, state, e, top, 1.0);
    Ok(PathSample { s, x, y, u, v, p })
}

/// CSV with header `s,x,y,u,v,p`.
pub fn path_csv(samples: &[PathSample]) -> String {
    let mut s = String::from("s,x,y,u,v,p\n");
    for q in samples {
        let _ = writeln!(s, "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}", q.s, q.x, q.y, q.u, q.v, q.p);
    }
    s
}

/// One row of `swell_report.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SwellReport {
    pub re: f64,
    pub b_sl: f64,
    pub order: usize,
    pub chi_r: f64,
    pub h_f: f64,
    pub n_ex: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub u_plug: f64,
    pub steps: usize,
}

pub const REPORT_HEADER: &str = "Re,B_sl,P,chi_R,n_ex,p_min,p_max,u_plug,h_f,steps";

impl SwellReport {
    /// Evaluates every diagnostic on a steady simulation. Without a free
    /// surface (stick-slip) the upper boundary height at L2 is used.
    pub fn from_simulation(sim: &Simulation, steps: usize) -> Result<Self> {
        let cfg = &sim.cfg;
        let h_f = match sim.spline()? {
            Some(s) => s.value(cfg.l2)?,
            None => top_height(&sim.mesh, cfg.l2)?,
        };
        let (p_min, p_max) = pressure_extrema_near_lip(&sim.mesh, &sim.state, [0.0, cfg.h])?;
        Ok(SwellReport {
            re: cfg.re,
            b_sl: cfg.b_sl,
            order: cfg.order,
            chi_r: h_f / cfg.h,
            h_f,
            n_ex: exit_pressure_correction(&sim.mesh, &sim.state, cfg)?,
            p_min,
            p_max,
            u_plug: plug_velocity(&sim.mesh, &sim.state, cfg)?,
            steps,
        })
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.10},{:.10},{:.10e},{:.10e},{:.10},{:.10},{}",
            self.re, self.b_sl, self.order, self.chi_r, self.n_ex, self.p_min, self.p_max, self.u_plug, self.h_f, self.steps
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_channel_mesh;

    fn poiseuille(order: usize) -> (Mesh, FieldState, SimConfig) {
        let mesh = build_channel_mesh(&[-4.0, -1.5, 0.0], &[0.0, 0.6, 1.0], order).unwrap();
        let state = FieldState::interpolate(&mesh, |_, y| 1.5 * (1.0 - y * y), |_, _| 0.0, |x, _| -3.0 * x).unwrap();
        let cfg = SimConfig {
            order,
            l1: 4.0,
            l2: 0.0,
            ..SimConfig::default()
        };
        (mesh, state, cfg)
    }

    #[test]
    fn wall_shear_values() {
        assert_eq!(wall_shear(0.0), 3.0);
        assert!((wall_shear(0.1) - 3.0 / 1.3).abs() < 1e-15);
    }

    #[test]
    fn flat_surface_has_unit_swell() {
        let pts: Vec<(f64, f64)> = (0..11).map(|i| (i as f64, 1.0)).collect();
        let s = crate::spline::fit_spline(&pts).unwrap();
        assert_eq!(swell_ratio(&s, 10.0, 1.0).unwrap(), 1.0);
        assert!(swell_ratio(&s, 10.5, 1.0).is_err());
    }

    #[test]
    fn poiseuille_diagnostics() {
        let (mesh, state, cfg) = poiseuille(4);
        // p(-L1) - p(0) = 12 = sigma_w L1 / H
        assert!(exit_pressure_correction(&mesh, &state, &cfg).unwrap().abs() < 1e-10);
        for x in [-4.0, -2.7, -1.5, -0.2, 0.0] {
            assert!((flow_rate(&mesh, &state, x).unwrap() - 1.0).abs() < 1e-12);
            assert!((top_height(&mesh, x).unwrap() - 1.0).abs() < 1e-14);
        }
        let g = velocity_gradient_at(&mesh, &state, 0, 0.0, 1.0);
        // top of the bottom-left element is y = 0.6
        assert!((g[0][1] + 3.0 * 0.6).abs() < 1e-10);
        let samples = sample_path(&mesh, &state, &cfg, SamplePath::Centerline, 9).unwrap();
        for q in &samples {
            assert!((q.u - 1.5).abs() < 1e-12 && q.v.abs() < 1e-12);
            assert!((q.p + 3.0 * q.x).abs() < 1e-10);
        }
        let cs = sample_path(&mesh, &state, &cfg, SamplePath::CrossSection(-4.0), 11).unwrap();
        for q in &cs {
            assert!((q.u - 1.5 * (1.0 - q.y * q.y)).abs() < 1e-10);
        }
        let (lo, hi) = pressure_extrema_near_lip(&mesh, &state, [0.0, 1.0]).unwrap();
        // the lip element spans x in [-1.5, 0]: linear pressure peaks at the quadrature extremes
        assert!(lo >= -1e-10 && hi <= 4.5 + 1e-10 && hi > lo);
    }

    #[test]
    fn n_ex_ignores_pressure_offset() {
        let (mesh, mut state, cfg) = poiseuille(5);
        let a = exit_pressure_correction(&mesh, &state, &cfg).unwrap();
        let np = mesh.tables.npressure();
        for e in 0..mesh.elements.len() {
            state.pressure[e * np] += 7.25;
        }
        let b = exit_pressure_correction(&mesh, &state, &cfg).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn moving_state_is_rejected() {
        let (mesh, mut state, cfg) = poiseuille(3);
        state.mesh_velocity[1][0] = 1e-3;
        assert!(exit_pressure_correction(&mesh, &state, &cfg).is_err());
    }

    #[test]
    fn shared_edges_agree() {
        let (mesh, state, _) = poiseuille(6);
        // the vertical break x = -1.5 seen from both neighbours
        for y in [0.1, 0.35, 0.8] {
            let mut vals = Vec::new();
            for e in 0..mesh.elements.len() {
                if let Ok((a, b)) = invert_map(&mesh.tables, &mesh.elements[e], [-1.5, y]) {
                    if a.abs() <= 1.0 + 1e-12 && b.abs() <= 1.0 + 1e-12 {
                        vals.push(evaluate_at(&mesh, &state, e, a, b));
                    }
                }
            }
            assert_eq!(vals.len(), 2);
            for c in 0..2 {
                assert!((vals[0][c] - vals[1][c]).abs() < 1e-10);
            }
        }
    }
}
