//! Quadrilateral spectral element mesh of the die-swell domain.
//!
//! Geometry is carried in the same modal basis as the velocity. Interior
//! edges stay straight, so only vertex modes are nonzero except on
//! free-surface edges, whose bubble coefficients interpolate the moving
//! surface nodes.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;

use crate::basis::{edge_mode, vertex_mode, ElementTables};
use crate::error::{Result, SwellError};

pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdgeTag {
    Inflow,
    Wall,
    Symmetry,
    Outflow,
    FreeSurface,
    Interior,
}

impl EdgeTag {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeTag::Inflow => "inflow",
            EdgeTag::Wall => "wall",
            EdgeTag::Symmetry => "symmetry",
            EdgeTag::Outflow => "outflow",
            EdgeTag::FreeSurface => "free_surface",
            EdgeTag::Interior => "interior",
        }
    }
}

/// Local vertex pair (start, end) of each local edge, in the direction of
/// the edge's local parameter.
pub const EDGE_VERTICES: [(usize, usize); 4] = [(0, 1), (1, 2), (3, 2), (0, 3)];

#[derive(Debug, Clone)]
pub struct QuadElement {
    pub element_id: usize,
    /// global vertex ids, counter-clockwise from (-1,-1)
    pub vertices: [usize; 4],
    pub edges: [usize; 4],
    /// true when the local edge direction is opposite to the global one
    pub edge_flip: [bool; 4],
    pub edge_tags: [EdgeTag; 4],
    /// modal geometry coefficients, `(P+1)^2` points
    pub geom_coeffs: Vec<Point>,
}

/// A free-surface edge and the slice of surface nodes it spans.
#[derive(Debug, Clone, Copy)]
pub struct SurfaceEdge {
    pub element: usize,
    pub local_edge: usize,
    /// index of the first of its `P + 1` nodes in `Mesh::surface`
    pub first_node: usize,
}

/// Global continuous numbering of the order-P velocity space.
#[derive(Debug, Clone)]
pub struct VelocityNumbering {
    pub n_vertices: usize,
    pub n_edges: usize,
    /// vertex + edge modes; these are the statically retained unknowns
    pub n_boundary: usize,
    pub n_total: usize,
    /// per element, per tensor mode: (global index, sign)
    pub element_maps: Vec<Vec<(usize, f64)>>,
}

impl VelocityNumbering {
    /// Gathers element-local coefficients from a global vector.
    pub fn gather(&self, element: usize, global: &[f64]) -> Vec<f64> {
        self.element_maps[element]
            .iter()
            .map(|&(g, s)| s * global[g])
            .collect()
    }

    pub fn is_boundary(&self, g: usize) -> bool {
        g < self.n_boundary
    }
}

/// Per-quadrature-point metric data of one element.
#[derive(Debug, Clone)]
pub struct Metric {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub det: Vec<f64>,
    /// d xi1/dx, d xi1/dy, d xi2/dx, d xi2/dy
    pub rx: Vec<f64>,
    pub ry: Vec<f64>,
    pub sx: Vec<f64>,
    pub sy: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub order: usize,
    pub tables: Arc<ElementTables>,
    pub elements: Vec<QuadElement>,
    pub vertices: Vec<Point>,
    pub surface: Vec<Point>,
    pub surface_edges: Vec<SurfaceEdge>,
    /// surface node index of each vertex that lies on the free surface
    pub vertex_surface_node: Vec<Option<usize>>,
    /// vertices with w = 0 (inflow, wall, symmetry)
    pub vertex_fixed: Vec<bool>,
    /// vertices with w_x = 0 only (outflow)
    pub vertex_outflow: Vec<bool>,
    pub numbering: VelocityNumbering,
    /// geometry at t0; never modified after construction
    reference_coords: Vec<Vec<Point>>,
    /// Lobatto nodes with `P + 1` points carrying the surface geometry
    pub geometry_nodes: Vec<f64>,
}

/// Structured layout of `nx * ny` quadrilaterals on a rectangle.
#[derive(Debug, Clone)]
pub struct StructuredLayout {
    pub x_breaks: Vec<f64>,
    pub y_breaks: Vec<f64>,
    /// tag of the top edge of each column
    pub top_tags: Vec<EdgeTag>,
    pub left_tag: EdgeTag,
    pub right_tag: EdgeTag,
    pub bottom_tag: EdgeTag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshPreset {
    /// 7 columns x 2 layers graded toward the die lip
    Default,
}

impl std::str::FromStr for MeshPreset {
    type Err = SwellError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" => Ok(MeshPreset::Default),
            other => Err(SwellError::Config(format!("unknown mesh preset '{other}'"))),
        }
    }
}

/// Builds the 14-element die-swell mesh of `[-l1, l2] x [0, h]`.
pub fn build_dieswell_mesh(l1: f64, l2: f64, h: f64, preset: MeshPreset, order: usize) -> Result<Mesh> {
    for (name, v) in [("L1", l1), ("L2", l2), ("H", h)] {
        if !(v > 0.0) {
            return Err(SwellError::OutOfRange {
                what: name,
                value: v,
                range: "(0, inf)".into(),
            });
        }
    }
    let MeshPreset::Default = preset;
    // breaks in units of H; clipped to the domain
    let die = [-3.0 * h, -0.3 * h];
    let jet = [0.3 * h, 2.0 * h, 5.0 * h];
    let mut x_breaks = vec![-l1];
    x_breaks.extend(die.iter().copied().filter(|&x| x > -l1 + 1e-9));
    x_breaks.push(0.0);
    x_breaks.extend(jet.iter().copied().filter(|&x| x < l2 - 1e-9));
    x_breaks.push(l2);
    let top_tags = x_breaks
        .windows(2)
        .map(|w| if w[1] <= 0.0 { EdgeTag::Wall } else { EdgeTag::FreeSurface })
        .collect();
    let layout = StructuredLayout {
        x_breaks,
        y_breaks: vec![0.0, 0.7 * h, h],
        top_tags,
        left_tag: EdgeTag::Inflow,
        right_tag: EdgeTag::Outflow,
        bottom_tag: EdgeTag::Symmetry,
    };
    Mesh::structured(&layout, order)
}

/// Straight channel `[x0, x1] x [0, h]` with walls on top.
pub fn build_channel_mesh(x_breaks: &[f64], y_breaks: &[f64], order: usize) -> Result<Mesh> {
    let layout = StructuredLayout {
        x_breaks: x_breaks.to_vec(),
        y_breaks: y_breaks.to_vec(),
        top_tags: vec![EdgeTag::Wall; x_breaks.len() - 1],
        left_tag: EdgeTag::Inflow,
        right_tag: EdgeTag::Outflow,
        bottom_tag: EdgeTag::Symmetry,
    };
    Mesh::structured(&layout, order)
}

impl Mesh {
    pub fn structured(layout: &StructuredLayout, order: usize) -> Result<Mesh> {
        let nx = layout.x_breaks.len().saturating_sub(1);
        let ny = layout.y_breaks.len().saturating_sub(1);
        if nx == 0 || ny == 0 || layout.top_tags.len() != nx {
            return Err(SwellError::InvalidArgument("malformed structured layout".into()));
        }
        for b in [&layout.x_breaks, &layout.y_breaks] {
            if b.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(SwellError::InvalidArgument("layout breaks must increase".into()));
            }
        }
        let vid = |i: usize, j: usize| j * (nx + 1) + i;
        let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                vertices.push([layout.x_breaks[i], layout.y_breaks[j]]);
            }
        }
        let mut cells = Vec::with_capacity(nx * ny);
        // column-major so that element ids grow downstream
        for i in 0..nx {
            for j in 0..ny {
                let verts = [vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)];
                let tags = [
                    if j == 0 { layout.bottom_tag } else { EdgeTag::Interior },
                    if i == nx - 1 { layout.right_tag } else { EdgeTag::Interior },
                    if j == ny - 1 { layout.top_tags[i] } else { EdgeTag::Interior },
                    if i == 0 { layout.left_tag } else { EdgeTag::Interior },
                ];
                cells.push((verts, tags));
            }
        }
        Mesh::from_cells(vertices, &cells, order)
    }

    /// Builds a mesh from vertex coordinates and (vertices, edge tags) cells.
    pub fn from_cells(vertices: Vec<Point>, cells: &[([usize; 4], [EdgeTag; 4])], order: usize) -> Result<Mesh> {
        let tables = Arc::new(ElementTables::new(order)?);
        let mut edge_ids: HashMap<(usize, usize), usize> = HashMap::new();
        let mut elements = Vec::with_capacity(cells.len());
        for (id, (verts, tags)) in cells.iter().enumerate() {
            let mut edges = [0; 4];
            let mut flip = [false; 4];
            for (e, &(a, b)) in EDGE_VERTICES.iter().enumerate() {
                let (ga, gb) = (verts[a], verts[b]);
                let key = (ga.min(gb), ga.max(gb));
                let next = edge_ids.len();
                edges[e] = *edge_ids.entry(key).or_insert(next);
                flip[e] = ga > gb;
            }
            elements.push(QuadElement {
                element_id: id,
                vertices: *verts,
                edges,
                edge_flip: flip,
                edge_tags: *tags,
                geom_coeffs: Vec::new(),
            });
        }
        let numbering = number_velocity_space(&elements, vertices.len(), edge_ids.len(), order);

        // vertex classification for mesh motion
        let nv = vertices.len();
        let mut vertex_fixed = vec![false; nv];
        let mut vertex_outflow = vec![false; nv];
        for el in &elements {
            for (e, &(a, b)) in EDGE_VERTICES.iter().enumerate() {
                match el.edge_tags[e] {
                    EdgeTag::Inflow | EdgeTag::Wall | EdgeTag::Symmetry => {
                        vertex_fixed[el.vertices[a]] = true;
                        vertex_fixed[el.vertices[b]] = true;
                    }
                    EdgeTag::Outflow => {
                        vertex_outflow[el.vertices[a]] = true;
                        vertex_outflow[el.vertices[b]] = true;
                    }
                    _ => {}
                }
            }
        }

        // free-surface chain, sorted along x
        let (geometry_nodes, _) = crate::basis::make_quadrature(order + 1)?;
        let mut fs: Vec<(usize, usize)> = elements
            .iter()
            .flat_map(|el| {
                (0..4)
                    .filter(|&e| el.edge_tags[e] == EdgeTag::FreeSurface)
                    .map(move |e| (el.element_id, e))
            })
            .collect();
        let start_x = |&(el, e): &(usize, usize)| {
            let (a, b) = EDGE_VERTICES[e];
            let ea = &elements[el];
            vertices[ea.vertices[a]][0].min(vertices[ea.vertices[b]][0])
        };
        fs.sort_by(|p, q| start_x(p).total_cmp(&start_x(q)));
        let mut surface: Vec<Point> = Vec::new();
        let mut surface_edges = Vec::new();
        let mut vertex_surface_node = vec![None; nv];
        for (k, &(el, e)) in fs.iter().enumerate() {
            let (a, b) = EDGE_VERTICES[e];
            let (va, vb) = (elements[el].vertices[a], elements[el].vertices[b]);
            let (left, right) = if vertices[va][0] <= vertices[vb][0] { (va, vb) } else { (vb, va) };
            if k > 0 && vertex_surface_node[left] != Some(surface.len() - 1) {
                return Err(SwellError::InvalidArgument("free-surface edges are not contiguous".into()));
            }
            let first = if k == 0 { 0 } else { surface.len() - 1 };
            if k == 0 {
                surface.push(vertices[left]);
                vertex_surface_node[left] = Some(0);
            }
            let (pa, pb) = (vertices[left], vertices[right]);
            for &t in &geometry_nodes[1..] {
                let s = 0.5 * (1.0 + t);
                surface.push([pa[0] + s * (pb[0] - pa[0]), pa[1] + s * (pb[1] - pa[1])]);
            }
            vertex_surface_node[right] = Some(surface.len() - 1);
            surface_edges.push(SurfaceEdge {
                element: el,
                local_edge: e,
                first_node: first,
            });
        }

        let mut mesh = Mesh {
            order,
            tables,
            elements,
            vertices,
            surface,
            surface_edges,
            vertex_surface_node,
            vertex_fixed,
            vertex_outflow,
            numbering,
            reference_coords: Vec::new(),
            geometry_nodes,
        };
        mesh.rebuild_mappings()?;
        mesh.reference_coords = mesh.elements.iter().map(|e| e.geom_coeffs.clone()).collect();
        Ok(mesh)
    }

    pub fn reference_coords(&self) -> &[Vec<Point>] {
        &self.reference_coords
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    /// Recomputes every element's modal geometry from the current vertex
    /// and surface-node positions, and checks for tangling.
    pub fn rebuild_mappings(&mut self) -> Result<()> {
        let order = self.order;
        let n = order + 1;
        // surface corner vertices follow the surface nodes
        for (v, node) in self.vertex_surface_node.iter().enumerate() {
            if let Some(k) = node {
                self.vertices[v] = self.surface[*k];
            }
        }
        for el in &mut self.elements {
            let mut g = vec![[0.0, 0.0]; n * n];
            for v in 0..4 {
                g[vertex_mode(order, v)] = self.vertices[el.vertices[v]];
            }
            el.geom_coeffs = g;
        }
        for se in &self.surface_edges {
            let el = &mut self.elements[se.element];
            let (a, b) = EDGE_VERTICES[se.local_edge];
            let forward = self.vertices[el.vertices[a]][0] <= self.vertices[el.vertices[b]][0];
            let nodes: Vec<Point> = (0..=order)
                .map(|k| {
                    let idx = if forward { k } else { order - k };
                    self.surface[se.first_node + idx]
                })
                .collect();
            for dim in 0..2 {
                let vals: Vec<f64> = nodes.iter().map(|p| p[dim]).collect();
                let c = self.tables.basis.interpolate_edge(&self.geometry_nodes, &vals);
                for k in 1..order {
                    el.geom_coeffs[edge_mode(order, se.local_edge, k)][dim] = c[k];
                }
            }
        }
        for el in &self.elements {
            jacobian_tables(&self.tables, el)?;
        }
        Ok(())
    }

    pub fn element_area(&self, el: usize) -> Result<f64> {
        let m = jacobian_tables(&self.tables, &self.elements[el])?;
        Ok(m.det.iter().zip(&self.tables.weights).map(|(d, w)| d * w).sum())
    }

    pub fn area(&self) -> Result<f64> {
        (0..self.elements.len()).map(|e| self.element_area(e)).sum()
    }

    /// Elements having `p` as one of their vertices.
    pub fn elements_touching(&self, p: Point, tol: f64) -> Vec<usize> {
        self.elements
            .iter()
            .filter(|el| {
                el.vertices.iter().any(|&v| {
                    let q = self.vertices[v];
                    (q[0] - p[0]).abs() < tol && (q[1] - p[1]).abs() < tol
                })
            })
            .map(|el| el.element_id)
            .collect()
    }

    /// Finds the element containing `x` and its reference coordinates.
    pub fn locate(&self, x: Point) -> Result<(usize, f64, f64)> {
        for el in &self.elements {
            // cheap bounding-box rejection
            let (mut lo, mut hi) = ([f64::MAX; 2], [f64::MIN; 2]);
            for &v in &el.vertices {
                for d in 0..2 {
                    lo[d] = lo[d].min(self.vertices[v][d]);
                    hi[d] = hi[d].max(self.vertices[v][d]);
                }
            }
            let pad = 0.25 * (hi[1] - lo[1]).max(hi[0] - lo[0]);
            if x[0] < lo[0] - pad || x[0] > hi[0] + pad || x[1] < lo[1] - pad || x[1] > hi[1] + pad {
                continue;
            }
            if let Ok((a, b)) = invert_map(&self.tables, el, x) {
                if a.abs() <= 1.0 + 1e-9 && b.abs() <= 1.0 + 1e-9 {
                    return Ok((el.element_id, a.clamp(-1.0, 1.0), b.clamp(-1.0, 1.0)));
                }
            }
        }
        Err(SwellError::PointOutsideMesh { x: x[0], y: x[1] })
    }

    /// Plain-text dump: `id x0 y0 x1 y1 x2 y2 x3 y3 tag0 tag1 tag2 tag3` per line.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# id x0 y0 x1 y1 x2 y2 x3 y3 bottom right top left\n");
        for el in &self.elements {
            let _ = write!(s, "{}", el.element_id);
            for &v in &el.vertices {
                let p = self.vertices[v];
                let _ = write!(s, " {:.12e} {:.12e}", p[0], p[1]);
            }
            for t in el.edge_tags {
                let _ = write!(s, " {}", t.as_str());
            }
            s.push('\n');
        }
        s
    }

    /// Total number of velocity-space scalar unknowns (per component).
    pub fn n_velocity(&self) -> usize {
        self.numbering.n_total
    }
}

fn number_velocity_space(elements: &[QuadElement], nv: usize, ne: usize, order: usize) -> VelocityNumbering {
    let n = order + 1;
    let nb = nv + ne * (order - 1);
    let ni = (order - 1) * (order - 1);
    let mut maps = Vec::with_capacity(elements.len());
    for (id, el) in elements.iter().enumerate() {
        let mut map = vec![(usize::MAX, 1.0); n * n];
        for v in 0..4 {
            map[vertex_mode(order, v)] = (el.vertices[v], 1.0);
        }
        for e in 0..4 {
            for k in 1..order {
                let sign = if el.edge_flip[e] && k % 2 == 0 { -1.0 } else { 1.0 };
                map[edge_mode(order, e, k)] = (nv + el.edges[e] * (order - 1) + (k - 1), sign);
            }
        }
        let mut idx = 0;
        for q in 1..order {
            for p in 1..order {
                map[q * n + p] = (nb + id * ni + idx, 1.0);
                idx += 1;
            }
        }
        maps.push(map);
    }
    VelocityNumbering {
        n_vertices: nv,
        n_edges: ne,
        n_boundary: nb,
        n_total: nb + elements.len() * ni,
        element_maps: maps,
    }
}

/// Reference coordinates of parameter `t` along local edge `edge`.
pub fn edge_reference_point(edge: usize, t: f64) -> (f64, f64) {
    match edge {
        0 => (t, -1.0),
        1 => (1.0, t),
        2 => (t, 1.0),
        3 => (-1.0, t),
        _ => panic!("edge index {edge} out of range"),
    }
}

/// Physical coordinates of reference point `(xi1, xi2)`.
pub fn map_to_physical(tables: &ElementTables, elem: &QuadElement, xi1: f64, xi2: f64) -> Point {
    let b1 = tables.basis.eval_all(xi1);
    let b2 = tables.basis.eval_all(xi2);
    let n = b1.len();
    let mut x = [0.0, 0.0];
    for q in 0..n {
        for p in 0..n {
            let w = b1[p] * b2[q];
            let c = elem.geom_coeffs[q * n + p];
            x[0] += w * c[0];
            x[1] += w * c[1];
        }
    }
    x
}

/// Jacobian `[[x_xi1, x_xi2], [y_xi1, y_xi2]]` at a reference point.
pub fn map_jacobian(tables: &ElementTables, elem: &QuadElement, xi1: f64, xi2: f64) -> [[f64; 2]; 2] {
    let b1 = tables.basis.eval_all(xi1);
    let b2 = tables.basis.eval_all(xi2);
    let d1 = tables.basis.deriv_all(xi1);
    let d2 = tables.basis.deriv_all(xi2);
    let n = b1.len();
    let mut j = [[0.0; 2]; 2];
    for q in 0..n {
        for p in 0..n {
            let c = elem.geom_coeffs[q * n + p];
            let w1 = d1[p] * b2[q];
            let w2 = b1[p] * d2[q];
            for d in 0..2 {
                j[d][0] += w1 * c[d];
                j[d][1] += w2 * c[d];
            }
        }
    }
    j
}

/// Newton inversion of the element map.
pub fn invert_map(tables: &ElementTables, elem: &QuadElement, x: Point) -> Result<(f64, f64)> {
    let (mut a, mut b) = (0.0, 0.0);
    let mut res = f64::INFINITY;
    for _ in 0..50 {
        let p = map_to_physical(tables, elem, a, b);
        let r = [x[0] - p[0], x[1] - p[1]];
        res = r[0].hypot(r[1]);
        if res < 1e-12 {
            return Ok((a, b));
        }
        let j = map_jacobian(tables, elem, a, b);
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if det.abs() < 1e-300 {
            break;
        }
        let da = (j[1][1] * r[0] - j[0][1] * r[1]) / det;
        let db = (-j[1][0] * r[0] + j[0][0] * r[1]) / det;
        // keep iterates in a neighbourhood of the element
        a = (a + da).clamp(-3.0, 3.0);
        b = (b + db).clamp(-3.0, 3.0);
    }
    if res < 1e-10 {
        return Ok((a, b));
    }
    Err(SwellError::InversionFailed {
        element: elem.element_id,
        residual: res,
    })
}

/// Metric terms at every volume quadrature point.
pub fn jacobian_tables(tables: &ElementTables, elem: &QuadElement) -> Result<Metric> {
    let nq = tables.nquad();
    let nm = tables.nmodes();
    let mut m = Metric {
        x: vec![0.0; nq],
        y: vec![0.0; nq],
        det: vec![0.0; nq],
        rx: vec![0.0; nq],
        ry: vec![0.0; nq],
        sx: vec![0.0; nq],
        sy: vec![0.0; nq],
    };
    // only nonzero geometry modes contribute
    let active: Vec<usize> = (0..nm)
        .filter(|&k| elem.geom_coeffs[k] != [0.0, 0.0])
        .collect();
    for qi in 0..nq {
        let (mut x, mut y, mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for &k in &active {
            let c = elem.geom_coeffs[k];
            let v = tables.values[(qi, k)];
            let d1 = tables.d_xi1[(qi, k)];
            let d2 = tables.d_xi2[(qi, k)];
            x += v * c[0];
            y += v * c[1];
            x1 += d1 * c[0];
            x2 += d2 * c[0];
            y1 += d1 * c[1];
            y2 += d2 * c[1];
        }
        let det = x1 * y2 - x2 * y1;
        if !(det > 0.0) {
            return Err(SwellError::MeshTangled {
                element: elem.element_id,
                det,
            });
        }
        m.x[qi] = x;
        m.y[qi] = y;
        m.det[qi] = det;
        m.rx[qi] = y2 / det;
        m.ry[qi] = -x2 / det;
        m.sx[qi] = -y1 / det;
        m.sy[qi] = x1 / det;
    }
    Ok(m)
}
