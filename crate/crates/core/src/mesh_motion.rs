//! Harmonic mesh velocity, free-surface kinematics and the multistep
//! coordinate update.
//!
//! Moved points are the free-surface nodes followed by the mesh vertices.
//! Vertices on the surface follow their surface node, fixed vertices never
//! move, and every remaining vertex moves with the harmonic extension.

use std::collections::VecDeque;

use crate::assembly::{elem_laplace, element_ops, static_condense, DofRef, ElementSystem};
use crate::basis::{edge_mode, tensor_eval, vertex_mode};
use crate::error::{Result, SwellError};
use crate::mesh::{edge_reference_point, EdgeTag, Mesh, Point, EDGE_VERTICES};
use crate::parallel;
use crate::spline::SurfaceSpline;

/// Smallest admissible vertical normal component on the free surface.
pub const MIN_NORMAL_Y: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct MeshVelocity {
    /// kinematic velocity at each free-surface node
    pub surface: Vec<[f64; 2]>,
    /// harmonic velocity at each mesh vertex
    pub vertices: Vec<[f64; 2]>,
    /// global coefficients `[w_x, w_y]` of the harmonic extension
    pub field: [Vec<f64>; 2],
}

impl MeshVelocity {
    /// Point velocities in moved-point order (surface nodes, then vertices).
    /// Surface and fixed vertices get zero.
    pub fn moved_points(&self, mesh: &Mesh) -> Vec<[f64; 2]> {
        let mut out = self.surface.clone();
        for (v, w) in self.vertices.iter().enumerate() {
            if mesh.vertex_fixed[v] || mesh.vertex_surface_node[v].is_some() {
                out.push([0.0, 0.0]);
            } else {
                out.push(*w);
            }
        }
        out
    }
}

/// Past predicted velocities, most recent first (at most two kept).
#[derive(Debug, Clone, Default)]
pub struct AleHistory {
    pub levels: VecDeque<Vec<[f64; 2]>>,
}

impl AleHistory {
    pub fn push(&mut self, w: Vec<[f64; 2]>) {
        self.levels.push_front(w);
        self.levels.truncate(2);
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

/// (surface node, local parameter) pairs along a surface edge, in the
/// edge's local direction.
fn surface_edge_nodes(mesh: &Mesh, se: usize) -> Vec<(usize, f64)> {
    let s = &mesh.surface_edges[se];
    let el = &mesh.elements[s.element];
    let (a, b) = EDGE_VERTICES[s.local_edge];
    let forward = mesh.vertices[el.vertices[a]][0] <= mesh.vertices[el.vertices[b]][0];
    let p = mesh.order;
    (0..=p)
        .map(|k| {
            let idx = if forward { k } else { p - k };
            (s.first_node + idx, mesh.geometry_nodes[k])
        })
        .collect()
}

/// Fluid velocity `(u, v)` at every free-surface node.
pub fn surface_fluid_velocity(mesh: &Mesh, velocity: &[Vec<f64>; 2]) -> Result<Vec<[f64; 2]>> {
    let mut out = vec![[0.0, 0.0]; mesh.surface.len()];
    for se in 0..mesh.surface_edges.len() {
        let s = mesh.surface_edges[se];
        let u = mesh.numbering.gather(s.element, &velocity[0]);
        let v = mesh.numbering.gather(s.element, &velocity[1]);
        for (node, t) in surface_edge_nodes(mesh, se) {
            let (a, b) = edge_reference_point(s.local_edge, t);
            out[node] = [
                tensor_eval(&mesh.tables.basis, &u, a, b)?,
                tensor_eval(&mesh.tables.basis, &v, a, b)?,
            ];
        }
    }
    Ok(out)
}

/// Kinematic mesh velocity at the surface nodes: `w_x = 0`,
/// `w_y = v + u n_x / n_y`. Nodes on fixed vertices (the die lip) stay put.
pub fn kinematic_surface_velocity(mesh: &Mesh, velocity: &[Vec<f64>; 2], spline: &SurfaceSpline) -> Result<Vec<[f64; 2]>> {
    let uv = surface_fluid_velocity(mesh, velocity)?;
    let pinned = pinned_surface_nodes(mesh);
    let mut out = Vec::with_capacity(uv.len());
    for (k, (p, [u, v])) in mesh.surface.iter().zip(uv).enumerate() {
        if pinned[k] {
            out.push([0.0, 0.0]);
            continue;
        }
        let n = spline.normal_at(p[0])?;
        if n[1] < MIN_NORMAL_Y {
            return Err(SwellError::SurfaceFold(format!(
                "normal y-component {:.3e} at x = {:.6}",
                n[1], p[0]
            )));
        }
        out.push([0.0, v + u * n[0] / n[1]]);
    }
    Ok(out)
}

/// Solves the Laplace problem for one scalar with Dirichlet data on the
/// boundary modes (`None` = natural). Returns all global coefficients.
pub fn solve_harmonic(mesh: &Mesh, dirichlet: &[Option<f64>]) -> Result<Vec<f64>> {
    let nb = mesh.numbering.n_boundary;
    if dirichlet.len() != nb {
        return Err(SwellError::DimensionMismatch {
            expected: nb,
            got: dirichlet.len(),
        });
    }
    let tables = &mesh.tables;
    let systems = parallel::try_map_indexed(mesh.elements.len(), |e| {
        let ops = element_ops(tables, &mesh.elements[e])?;
        let dofs = mesh.numbering.element_maps[e]
            .iter()
            .map(|&(g, s)| {
                if g < nb {
                    DofRef::Global { index: g, sign: s }
                } else {
                    DofRef::Local
                }
            })
            .collect();
        Ok::<_, SwellError>(ElementSystem {
            matrix: elem_laplace(&ops),
            rhs: vec![0.0; tables.nmodes()],
            dofs,
        })
    })?;
    let sol = static_condense(&systems, dirichlet)?.solve()?;
    let mut out = vec![0.0; mesh.numbering.n_total];
    out[..nb].copy_from_slice(&sol.global);
    for (e, local) in sol.local.iter().enumerate() {
        for (m, &(g, s)) in mesh.numbering.element_maps[e].iter().enumerate() {
            if g >= nb {
                out[g] = s * local[m];
            }
        }
    }
    Ok(out)
}

/// Boundary-mode coefficients of a function given at the `P + 1` nodes of
/// local edge `edge` of element `el`, as (global index, value) pairs.
pub fn edge_coefficients(mesh: &Mesh, el: usize, edge: usize, values: &[f64]) -> Vec<(usize, f64)> {
    let p = mesh.order;
    let c = mesh.tables.basis.interpolate_edge(&mesh.geometry_nodes, values);
    let map = &mesh.numbering.element_maps[el];
    let (va, vb) = EDGE_VERTICES[edge];
    let mut out = vec![
        (map[vertex_mode(p, va)].0, c[0]),
        (map[vertex_mode(p, vb)].0, c[p]),
    ];
    for k in 1..p {
        let (g, s) = map[edge_mode(p, edge, k)];
        out.push((g, s * c[k]));
    }
    out
}

/// Harmonic extension of vertical surface data given at the surface nodes:
/// zero on inflow, wall and symmetry edges, natural on the outflow.
/// Returns all global coefficients.
pub fn surface_harmonic_extension(mesh: &Mesh, surface_values: &[f64]) -> Result<Vec<f64>> {
    if surface_values.len() != mesh.surface.len() {
        return Err(SwellError::DimensionMismatch {
            expected: mesh.surface.len(),
            got: surface_values.len(),
        });
    }
    let mut dir: Vec<Option<f64>> = vec![None; mesh.numbering.n_boundary];
    for se in 0..mesh.surface_edges.len() {
        let s = mesh.surface_edges[se];
        let vals: Vec<f64> = surface_edge_nodes(mesh, se).iter().map(|&(k, _)| surface_values[k]).collect();
        for (g, val) in edge_coefficients(mesh, s.element, s.local_edge, &vals) {
            dir[g] = Some(val);
        }
    }
    let zeros = vec![0.0; mesh.order + 1];
    for (e, el) in mesh.elements.iter().enumerate() {
        for edge in 0..4 {
            if matches!(el.edge_tags[edge], EdgeTag::Inflow | EdgeTag::Wall | EdgeTag::Symmetry) {
                for (g, _) in edge_coefficients(mesh, e, edge, &zeros) {
                    dir[g] = Some(0.0);
                }
            }
        }
    }
    solve_harmonic(mesh, &dir)
}

/// Harmonic mesh velocity with `w = 0` on inflow, wall and symmetry,
/// `w_x = 0` with natural `w_y` on the outflow, and the kinematic velocity
/// on the free surface.
pub fn solve_mesh_velocity(mesh: &Mesh, velocity: &[Vec<f64>; 2], spline: &SurfaceSpline) -> Result<MeshVelocity> {
    let surface = kinematic_surface_velocity(mesh, velocity, spline)?;
    let wy_surface: Vec<f64> = surface.iter().map(|w| w[1]).collect();
    let wy = surface_harmonic_extension(mesh, &wy_surface)?;
    let vertices = (0..mesh.vertices.len()).map(|v| [0.0, wy[v]]).collect();
    Ok(MeshVelocity {
        surface,
        vertices,
        field: [vec![0.0; mesh.numbering.n_total], wy],
    })
}

/// Moves the surface nodes vertically by `dy` and the free interior
/// vertices by its harmonic extension. The mesh is restored on tangling.
pub fn displace_surface(mesh: &mut Mesh, dy: &[f64]) -> Result<()> {
    let ext = surface_harmonic_extension(mesh, dy)?;
    let old_surface = mesh.surface.clone();
    let old_vertices = mesh.vertices.clone();
    for (p, d) in mesh.surface.iter_mut().zip(dy) {
        p[1] += d;
    }
    for v in 0..mesh.vertices.len() {
        if !mesh.vertex_fixed[v] {
            mesh.vertices[v][1] += match mesh.vertex_surface_node[v] {
                Some(k) => dy[k],
                None => ext[v],
            };
        }
    }
    if let Err(e) = mesh.rebuild_mappings() {
        mesh.surface = old_surface;
        mesh.vertices = old_vertices;
        mesh.rebuild_mappings()?;
        return Err(e);
    }
    Ok(())
}

/// Surface nodes held fixed (those on fixed vertices, i.e. the die lip).
pub fn pinned_surface_nodes(mesh: &Mesh) -> Vec<bool> {
    let mut pinned = vec![false; mesh.surface.len()];
    for (v, node) in mesh.vertex_surface_node.iter().enumerate() {
        if let Some(k) = node {
            pinned[*k] = mesh.vertex_fixed[v];
        }
    }
    pinned
}

/// Current moved-point coordinates (surface nodes, then vertices).
pub fn moved_coordinates(mesh: &Mesh) -> Vec<Point> {
    mesh.surface.iter().chain(&mesh.vertices).copied().collect()
}

/// Multistep velocity: Euler, then AB2, then AB3 in the predicted values.
pub fn multistep_velocity(w_tilde: &[[f64; 2]], history: &AleHistory) -> Vec<[f64; 2]> {
    let comb = |c0: f64, c1: f64, c2: f64| -> Vec<[f64; 2]> {
        w_tilde
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let mut out = [0.0; 2];
                for d in 0..2 {
                    out[d] = c0 * w[d];
                    if c1 != 0.0 {
                        out[d] += c1 * history.levels[0][i][d];
                    }
                    if c2 != 0.0 {
                        out[d] += c2 * history.levels[1][i][d];
                    }
                }
                out
            })
            .collect()
    };
    match history.len() {
        0 => w_tilde.to_vec(),
        1 => comb(1.5, -0.5, 0.0),
        _ => comb(23.0 / 12.0, -16.0 / 12.0, 5.0 / 12.0),
    }
}

/// Advances the surface nodes and free vertices by `dt` times the multistep
/// combination of `w_tilde` (moved-point order) and the history, then
/// rebuilds the element maps. On tangling the mesh is restored and the
/// error returned. Returns the applied point velocity.
pub fn update_coordinates(mesh: &mut Mesh, w_tilde: &[[f64; 2]], history: &mut AleHistory, dt: f64) -> Result<Vec<[f64; 2]>> {
    let ns = mesh.surface.len();
    let np = ns + mesh.vertices.len();
    if w_tilde.len() != np {
        return Err(SwellError::DimensionMismatch {
            expected: np,
            got: w_tilde.len(),
        });
    }
    if !(dt > 0.0) {
        return Err(SwellError::OutOfRange {
            what: "dt",
            value: dt,
            range: "(0, inf)".into(),
        });
    }
    let w = multistep_velocity(w_tilde, history);
    let old_surface = mesh.surface.clone();
    let old_vertices = mesh.vertices.clone();
    for (k, p) in mesh.surface.iter_mut().enumerate() {
        p[0] += dt * w[k][0];
        p[1] += dt * w[k][1];
    }
    for (v, p) in mesh.vertices.iter_mut().enumerate() {
        p[0] += dt * w[ns + v][0];
        p[1] += dt * w[ns + v][1];
    }
    if let Err(e) = mesh.rebuild_mappings() {
        mesh.surface = old_surface;
        mesh.vertices = old_vertices;
        mesh.rebuild_mappings()?;
        return Err(e);
    }
    history.push(w_tilde.to_vec());
    Ok(w)
}

/// Pointwise mesh velocity `(X_new - X_old) / dt`.
pub fn recover_mesh_velocity(x_new: &[Point], x_old: &[Point], dt: f64) -> Result<Vec<[f64; 2]>> {
    if !(dt > 0.0) {
        return Err(SwellError::OutOfRange {
            what: "dt",
            value: dt,
            range: "(0, inf)".into(),
        });
    }
    if x_new.len() != x_old.len() {
        return Err(SwellError::DimensionMismatch {
            expected: x_old.len(),
            got: x_new.len(),
        });
    }
    Ok(x_new
        .iter()
        .zip(x_old)
        .map(|(a, b)| [(a[0] - b[0]) / dt, (a[1] - b[1]) / dt])
        .collect())
}

/// Element-local mesh velocity coefficients from two geometries of the
/// same mesh: `(geom_new - geom_old) / dt`, per component.
pub fn element_mesh_velocity(new: &Mesh, old_geom: &[Vec<Point>], dt: f64) -> Vec<[Vec<f64>; 2]> {
    new.elements
        .iter()
        .zip(old_geom)
        .map(|(el, old)| {
            let wx = el.geom_coeffs.iter().zip(old).map(|(a, b)| (a[0] - b[0]) / dt).collect();
            let wy = el.geom_coeffs.iter().zip(old).map(|(a, b)| (a[1] - b[1]) / dt).collect();
            [wx, wy]
        })
        .collect()
}

/// Scatters element-local coefficients into the global numbering.
pub fn scatter_field(mesh: &Mesh, local: &[[Vec<f64>; 2]]) -> [Vec<f64>; 2] {
    let mut out = [vec![0.0; mesh.numbering.n_total], vec![0.0; mesh.numbering.n_total]];
    for (e, w) in local.iter().enumerate() {
        for (m, &(g, s)) in mesh.numbering.element_maps[e].iter().enumerate() {
            out[0][g] = s * w[0][m];
            out[1][g] = s * w[1][m];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_dieswell_mesh, MeshPreset, StructuredLayout};
    use crate::spline::fit_spline;

    fn flat_spline(mesh: &Mesh) -> SurfaceSpline {
        fit_spline(&mesh.surface.iter().map(|p| (p[0], p[1])).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn fluid_at_rest_gives_zero_mesh_velocity() {
        let m = build_dieswell_mesh(10.0, 10.0, 1.0, MeshPreset::Default, 4).unwrap();
        let z = [vec![0.0; m.n_velocity()], vec![0.0; m.n_velocity()]];
        let mv = solve_mesh_velocity(&m, &z, &flat_spline(&m)).unwrap();
        assert!(mv.field[1].iter().all(|&w| w.abs() < 1e-14));
        assert!(mv.surface.iter().all(|w| *w == [0.0, 0.0]));
    }

    #[test]
    fn tangential_flow_on_flat_surface_gives_zero() {
        let m = build_dieswell_mesh(10.0, 10.0, 1.0, MeshPreset::Default, 4).unwrap();
        // u = 1, v = 0 everywhere: u . n = 0 on the flat surface
        let mut u = vec![0.0; m.n_velocity()];
        u[..m.numbering.n_vertices].fill(1.0);
        let z = vec![0.0; m.n_velocity()];
        let mv = solve_mesh_velocity(&m, &[u, z], &flat_spline(&m)).unwrap();
        assert!(mv.field[1].iter().all(|&w| w.abs() < 1e-14));
    }

    #[test]
    fn harmonic_linear_profile_on_unit_square() {
        let layout = StructuredLayout {
            x_breaks: vec![0.0, 1.0],
            y_breaks: vec![0.0, 1.0],
            top_tags: vec![EdgeTag::Interior],
            left_tag: EdgeTag::Interior,
            right_tag: EdgeTag::Interior,
            bottom_tag: EdgeTag::Interior,
        };
        let m = Mesh::structured(&layout, 6).unwrap();
        let mut dir = vec![None; m.numbering.n_boundary];
        for (g, v) in edge_coefficients(&m, 0, 2, &[1.0; 7]) {
            dir[g] = Some(v);
        }
        for (g, v) in edge_coefficients(&m, 0, 0, &[0.0; 7]) {
            dir[g] = Some(v);
        }
        let w = solve_harmonic(&m, &dir).unwrap();
        let c = m.numbering.gather(0, &w);
        for &a in &[-0.9, -0.2, 0.4, 1.0] {
            for &b in &[-1.0, -0.5, 0.3, 0.8] {
                let val = tensor_eval(&m.tables.basis, &c, a, b).unwrap();
                assert!((val - 0.5 * (b + 1.0)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn ab3_identities() {
        let c = [[0.3, -1.2]; 3];
        let mut h = AleHistory::default();
        h.push(c.to_vec());
        h.push(c.to_vec());
        let w = multistep_velocity(&c, &h);
        for x in w {
            assert!((x[0] - 0.3).abs() < 1e-15 && (x[1] + 1.2).abs() < 1e-15);
        }
        let wt = [[1.0, 2.0]];
        let mut h = AleHistory::default();
        assert_eq!(multistep_velocity(&wt, &h), vec![[1.0, 2.0]]);
        h.push(vec![[-1.0, 4.0]]);
        assert_eq!(multistep_velocity(&wt, &h), vec![[2.0, 1.0]]);
        h.push(vec![[3.0, 0.0]]);
        let w = multistep_velocity(&wt, &h);
        assert!((w[0][0] - (23.0 - 48.0 - 5.0) / 12.0).abs() < 1e-14);
        assert!((w[0][1] - (46.0 + 20.0) / 12.0).abs() < 1e-14);
    }

    #[test]
    fn uniform_lift_and_round_trip() {
        let mut m = build_dieswell_mesh(10.0, 10.0, 1.0, MeshPreset::Default, 4).unwrap();
        let ns = m.surface.len();
        let dt = 5e-3;
        let mut wt = vec![[0.0, 0.0]; ns + m.vertices.len()];
        // lift every surface node except the pinned lip
        for w in wt.iter_mut().take(ns).skip(1) {
            *w = [0.0, 1.0];
        }
        let before = moved_coordinates(&m);
        let mut hist = AleHistory::default();
        let applied = update_coordinates(&mut m, &wt, &mut hist, dt).unwrap();
        let after = moved_coordinates(&m);
        let rec = recover_mesh_velocity(&after, &before, dt).unwrap();
        for k in 1..ns {
            assert!((m.surface[k][1] - before[k][1] - dt).abs() < 1e-15);
        }
        for (a, b) in rec.iter().zip(&applied).take(ns) {
            assert!((a[1] - b[1]).abs() < 1e-9);
        }
        // zero velocities leave everything in place
        let frozen = moved_coordinates(&m);
        let zero = vec![[0.0, 0.0]; wt.len()];
        let mut h0 = AleHistory::default();
        update_coordinates(&mut m, &zero, &mut h0, dt).unwrap();
        assert_eq!(moved_coordinates(&m), frozen);
        assert!(recover_mesh_velocity(&frozen, &frozen, 0.0).is_err());
    }

    #[test]
    fn tangling_restores_mesh() {
        let mut m = build_dieswell_mesh(10.0, 10.0, 1.0, MeshPreset::Default, 3).unwrap();
        let ns = m.surface.len();
        let mut wt = vec![[0.0, 0.0]; ns + m.vertices.len()];
        // drive one surface node through the floor
        wt[ns / 2] = [0.0, -1000.0];
        let before = moved_coordinates(&m);
        let err = update_coordinates(&mut m, &wt, &mut AleHistory::default(), 1.0);
        assert!(matches!(err, Err(SwellError::MeshTangled { .. })));
        assert_eq!(moved_coordinates(&m), before);
    }
}
