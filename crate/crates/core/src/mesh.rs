//! Unstructured polygonal meshes.
//!
//! Cells are convex or star-shaped polygons stored counter-clockwise. Every
//! edge has a left cell and either a right cell or a wall; the unit normal
//! points from left to right. Meshes can be ingested from a small text format
//! (`MESH2D nv nc`, vertex lines, then `k v1 .. vk` cell lines with 0-based
//! indices), generated as a structured rectangle triangulation, or refined
//! by uniform barycentric subdivision of triangles.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vertex {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone)]
pub struct Edge {
    pub vertices: [usize; 2],
    pub length: f64,
    /// Unit normal oriented from `left` to `right`.
    pub normal: [f64; 2],
    pub midpoint: [f64; 2],
    pub left: usize,
    /// `None` for a wall.
    pub right: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Cell {
    /// Vertex ids in counter-clockwise order.
    pub vertices: Vec<usize>,
    pub area: f64,
    pub centroid: [f64; 2],
    pub perimeter: f64,
    /// Edge ids in the same order as the polygon sides.
    pub edges: Vec<usize>,
    /// Adjacent cells, following the polygon sides counter-clockwise.
    pub neighbors: Vec<usize>,
}

impl Cell {
    /// Characteristic size `2 |P| / perimeter`.
    pub fn h(&self) -> f64 {
        2.0 * self.area / self.perimeter
    }
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub vertices: Vec<Vertex>,
    pub edges: Vec<Edge>,
    pub cells: Vec<Cell>,
    /// For refined meshes, the id of the coarse cell each cell came from.
    pub parent: Option<Vec<usize>>,
    bbox: [f64; 4],
}

fn polygon_area_centroid(pts: &[[f64; 2]]) -> (f64, [f64; 2]) {
    let k = pts.len();
    // shift to the first vertex to limit cancellation
    let o = pts[0];
    let mut a2 = 0.0;
    let mut cx = 0.0;
    let mut cy = 0.0;
    for i in 0..k {
        let p = [pts[i][0] - o[0], pts[i][1] - o[1]];
        let q = [pts[(i + 1) % k][0] - o[0], pts[(i + 1) % k][1] - o[1]];
        let cr = p[0] * q[1] - q[0] * p[1];
        a2 += cr;
        cx += (p[0] + q[0]) * cr;
        cy += (p[1] + q[1]) * cr;
    }
    let area = 0.5 * a2;
    if a2 == 0.0 {
        return (0.0, o);
    }
    (area, [o[0] + cx / (3.0 * a2), o[1] + cy / (3.0 * a2)])
}

/// Builds the full topology from vertex coordinates and cell polygons.
///
/// Clockwise polygons are reoriented. Fails on zero-area cells, out-of-range
/// indices, or edges shared by more than two cells / traversed twice in the
/// same direction.
pub fn build_mesh(vertices: Vec<Vertex>, cell_vertices: Vec<Vec<usize>>) -> Result<Mesh> {
    let nv = vertices.len();
    if cell_vertices.is_empty() {
        return Err(Error::Argument("mesh has no cells".into()));
    }
    for v in &vertices {
        if !v.x.is_finite() || !v.y.is_finite() {
            return Err(Error::Argument("non-finite vertex coordinate".into()));
        }
    }
    let mut bbox = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    for v in &vertices {
        bbox[0] = bbox[0].min(v.x);
        bbox[1] = bbox[1].min(v.y);
        bbox[2] = bbox[2].max(v.x);
        bbox[3] = bbox[3].max(v.y);
    }
    let scale = (bbox[2] - bbox[0]).max(bbox[3] - bbox[1]).max(f64::MIN_POSITIVE);

    let mut cells = Vec::with_capacity(cell_vertices.len());
    for (ci, mut vs) in cell_vertices.into_iter().enumerate() {
        if vs.len() < 3 {
            return Err(Error::Argument(format!("cell {ci} has {} vertices", vs.len())));
        }
        if let Some(&bad) = vs.iter().find(|&&v| v >= nv) {
            return Err(Error::Argument(format!("cell {ci} references vertex {bad} of {nv}")));
        }
        let pts: Vec<[f64; 2]> = vs.iter().map(|&v| [vertices[v].x, vertices[v].y]).collect();
        let (mut area, centroid) = polygon_area_centroid(&pts);
        if area.abs() <= 1e-14 * scale * scale || !area.is_finite() {
            return Err(Error::DegenerateCell { cell: ci, area });
        }
        if area < 0.0 {
            vs.reverse();
            area = -area;
        }
        let k = vs.len();
        let perimeter = (0..k)
            .map(|i| {
                let a = vertices[vs[i]];
                let b = vertices[vs[(i + 1) % k]];
                (b.x - a.x).hypot(b.y - a.y)
            })
            .sum();
        cells.push(Cell {
            vertices: vs,
            area,
            centroid,
            perimeter,
            edges: Vec::with_capacity(k),
            neighbors: Vec::new(),
        });
    }

    let mut edges: Vec<Edge> = Vec::new();
    // (min, max) -> edge id
    let mut lookup: HashMap<(usize, usize), usize> = HashMap::new();
    for ci in 0..cells.len() {
        let k = cells[ci].vertices.len();
        for s in 0..k {
            let a = cells[ci].vertices[s];
            let b = cells[ci].vertices[(s + 1) % k];
            if a == b {
                return Err(Error::Topology(format!("cell {ci} repeats vertex {a}")));
            }
            let key = (a.min(b), a.max(b));
            match lookup.get(&key) {
                None => {
                    let pa = vertices[a];
                    let pb = vertices[b];
                    let dx = pb.x - pa.x;
                    let dy = pb.y - pa.y;
                    let len = dx.hypot(dy);
                    let id = edges.len();
                    edges.push(Edge {
                        vertices: [a, b],
                        length: len,
                        normal: [dy / len, -dx / len],
                        midpoint: [0.5 * (pa.x + pb.x), 0.5 * (pa.y + pb.y)],
                        left: ci,
                        right: None,
                    });
                    lookup.insert(key, id);
                    cells[ci].edges.push(id);
                }
                Some(&id) => {
                    let e = &mut edges[id];
                    if e.right.is_some() {
                        return Err(Error::Topology(format!(
                            "edge ({a}, {b}) is shared by more than two cells"
                        )));
                    }
                    if e.vertices != [b, a] {
                        return Err(Error::Topology(format!(
                            "edge ({a}, {b}) is traversed twice in the same direction (cells {} and {ci})",
                            e.left
                        )));
                    }
                    if e.left == ci {
                        return Err(Error::Topology(format!("cell {ci} uses edge ({a}, {b}) twice")));
                    }
                    e.right = Some(ci);
                    cells[ci].edges.push(id);
                }
            }
        }
    }
    for ci in 0..cells.len() {
        let nb: Vec<usize> = cells[ci]
            .edges
            .iter()
            .filter_map(|&e| {
                let ed = &edges[e];
                match ed.right {
                    Some(r) if ed.left == ci => Some(r),
                    Some(_) => Some(ed.left),
                    None => None,
                }
            })
            .collect();
        cells[ci].neighbors = nb;
    }
    Ok(Mesh {
        vertices,
        edges,
        cells,
        parent: None,
        bbox,
    })
}

impl Mesh {
    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    /// Outward unit normal of edge `e` as seen from cell `c`.
    pub fn outward_normal(&self, c: usize, e: usize) -> [f64; 2] {
        let ed = &self.edges[e];
        if ed.left == c {
            ed.normal
        } else {
            [-ed.normal[0], -ed.normal[1]]
        }
    }

    /// Largest cell diameter.
    pub fn mesh_size(&self) -> f64 {
        let mut h: f64 = 0.0;
        for c in &self.cells {
            for (i, &a) in c.vertices.iter().enumerate() {
                for &b in &c.vertices[i + 1..] {
                    let pa = self.vertices[a];
                    let pb = self.vertices[b];
                    h = h.max((pb.x - pa.x).hypot(pb.y - pa.y));
                }
            }
        }
        h
    }

    pub fn total_area(&self) -> f64 {
        self.cells.iter().map(|c| c.area).sum()
    }

    /// Smallest id of a cell containing the point (boundary inclusive).
    pub fn locate_cell(&self, x: f64, y: f64) -> Option<usize> {
        let scale = (self.bbox[2] - self.bbox[0]).max(self.bbox[3] - self.bbox[1]);
        let tol = 1e-12 * scale.max(1.0);
        if x < self.bbox[0] - tol || x > self.bbox[2] + tol || y < self.bbox[1] - tol || y > self.bbox[3] + tol {
            return None;
        }
        (0..self.cells.len()).find(|&c| self.cell_contains(c, x, y, tol))
    }

    fn cell_contains(&self, c: usize, x: f64, y: f64, tol: f64) -> bool {
        let vs = &self.cells[c].vertices;
        let k = vs.len();
        let mut inside = false;
        for i in 0..k {
            let a = self.vertices[vs[i]];
            let b = self.vertices[vs[(i + 1) % k]];
            if point_segment_distance([x, y], [a.x, a.y], [b.x, b.y]) <= tol {
                return true;
            }
            if (a.y > y) != (b.y > y) {
                let xi = a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y);
                if x < xi {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// Serialises the mesh in the `MESH2D` text format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "MESH2D {} {}", self.vertices.len(), self.cells.len());
        for v in &self.vertices {
            let _ = writeln!(s, "{:?} {:?}", v.x, v.y);
        }
        for c in &self.cells {
            let _ = write!(s, "{}", c.vertices.len());
            for v in &c.vertices {
                let _ = write!(s, " {v}");
            }
            s.push('\n');
        }
        s
    }
}

/// Euclidean distance from `p` to the segment `[a, b]`.
pub fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = b[0] - a[0];
    let dy = b[1] - a[1];
    let l2 = dx * dx + dy * dy;
    let t = if l2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / l2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p[0] - a[0] - t * dx).hypot(p[1] - a[1] - t * dy)
}

/// Distance from `p` to an open polyline.
pub fn point_polyline_distance(p: [f64; 2], line: &[[f64; 2]]) -> f64 {
    match line.len() {
        0 => f64::INFINITY,
        1 => (p[0] - line[0][0]).hypot(p[1] - line[0][1]),
        _ => line
            .windows(2)
            .map(|w| point_segment_distance(p, w[0], w[1]))
            .fold(f64::INFINITY, f64::min),
    }
}

/// Structured triangulation of `[x0, x1] x [y0, y1]` with `nx * ny * 2` triangles.
pub fn rectangle_mesh(x0: f64, x1: f64, y0: f64, y1: f64, nx: usize, ny: usize) -> Result<Mesh> {
    if nx == 0 || ny == 0 || !(x1 > x0) || !(y1 > y0) {
        return Err(Error::Argument(format!(
            "invalid rectangle [{x0}, {x1}] x [{y0}, {y1}] with {nx} x {ny} cells"
        )));
    }
    let mut verts = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            verts.push(Vertex {
                x: x0 + (x1 - x0) * i as f64 / nx as f64,
                y: y0 + (y1 - y0) * j as f64 / ny as f64,
            });
        }
    }
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut cells = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            cells.push(vec![id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            cells.push(vec![id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    build_mesh(verts, cells)
}

/// Uniform barycentric subdivision of every triangle into `chi^2` triangles.
///
/// Vertices on shared edges are created once, so the result is conforming.
/// The returned mesh records the coarse parent of each fine cell.
pub fn refine_triangles(mesh: &Mesh, chi: usize) -> Result<Mesh> {
    if chi == 0 {
        return Err(Error::Argument("refinement factor must be at least 1".into()));
    }
    if let Some((ci, c)) = mesh.cells.iter().enumerate().find(|(_, c)| c.vertices.len() != 3) {
        return Err(Error::UnsupportedRefinement(format!(
            "cell {ci} has {} vertices, only triangles can be refined",
            c.vertices.len()
        )));
    }
    let mut verts = mesh.vertices.clone();
    let mut edge_pts: HashMap<(usize, usize, usize), usize> = HashMap::new();
    let mut cells = Vec::with_capacity(mesh.cells.len() * chi * chi);
    let mut parent = Vec::with_capacity(mesh.cells.len() * chi * chi);
    let n = chi;
    for (ci, cell) in mesh.cells.iter().enumerate() {
        let [a, b, c] = [cell.vertices[0], cell.vertices[1], cell.vertices[2]];
        let pa = mesh.vertices[a];
        let pb = mesh.vertices[b];
        let pc = mesh.vertices[c];
        // lattice point (i, j) = a + i/n (b - a) + j/n (c - a)
        let mut local = vec![usize::MAX; (n + 1) * (n + 1)];
        for j in 0..=n {
            for i in 0..=(n - j) {
                let k = n - i - j;
                let on_edge = |u: usize, v: usize, t: usize, verts: &mut Vec<Vertex>, map: &mut HashMap<_, _>| {
                    // point at t/n from u towards v, stored canonically from the smaller id
                    let (p, q, s) = if u < v { (u, v, t) } else { (v, u, n - t) };
                    *map.entry((p, q, s)).or_insert_with(|| {
                        let pp = mesh.vertices[p];
                        let pq = mesh.vertices[q];
                        let f = s as f64 / n as f64;
                        verts.push(Vertex {
                            x: pp.x + f * (pq.x - pp.x),
                            y: pp.y + f * (pq.y - pp.y),
                        });
                        verts.len() - 1
                    })
                };
                let vid = if i == 0 && j == 0 {
                    a
                } else if i == n {
                    b
                } else if j == n {
                    c
                } else if j == 0 {
                    on_edge(a, b, i, &mut verts, &mut edge_pts)
                } else if i == 0 {
                    on_edge(a, c, j, &mut verts, &mut edge_pts)
                } else if k == 0 {
                    on_edge(b, c, j, &mut verts, &mut edge_pts)
                } else {
                    let fi = i as f64 / n as f64;
                    let fj = j as f64 / n as f64;
                    verts.push(Vertex {
                        x: pa.x + fi * (pb.x - pa.x) + fj * (pc.x - pa.x),
                        y: pa.y + fi * (pb.y - pa.y) + fj * (pc.y - pa.y),
                    });
                    verts.len() - 1
                };
                local[j * (n + 1) + i] = vid;
            }
        }
        let at = |i: usize, j: usize| local[j * (n + 1) + i];
        for j in 0..n {
            for i in 0..(n - j) {
                cells.push(vec![at(i, j), at(i + 1, j), at(i, j + 1)]);
                parent.push(ci);
                if i + j + 2 <= n {
                    cells.push(vec![at(i + 1, j), at(i + 1, j + 1), at(i, j + 1)]);
                    parent.push(ci);
                }
            }
        }
    }
    let mut out = build_mesh(verts, cells)?;
    // compose with an existing parent map so ancestry always points to the original mesh
    out.parent = Some(match &mesh.parent {
        Some(p0) => parent.iter().map(|&p| p0[p]).collect(),
        None => parent,
    });
    Ok(out)
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty())
}

/// Parses the `MESH2D` format. `path` is only used in error messages.
pub fn parse_mesh(text: &str, path: &Path) -> Result<Mesh> {
    let mut lines = data_lines(text);
    let (hl, header) = lines
        .next()
        .ok_or_else(|| Error::ingest(path, 1, "empty mesh file"))?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 3 || toks[0] != "MESH2D" {
        return Err(Error::ingest(path, hl, "expected header `MESH2D <n_vertices> <n_cells>`"));
    }
    let nv: usize = toks[1]
        .parse()
        .map_err(|_| Error::ingest(path, hl, format!("bad vertex count `{}`", toks[1])))?;
    let nc: usize = toks[2]
        .parse()
        .map_err(|_| Error::ingest(path, hl, format!("bad cell count `{}`", toks[2])))?;
    let mut verts = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| Error::ingest(path, text.lines().count(), "unexpected end of file in vertex list"))?;
        let mut it = l.split_whitespace();
        let mut num = |what: &str| -> Result<f64> {
            let t = it.next().ok_or_else(|| Error::ingest(path, ln, format!("missing {what}")))?;
            t.parse::<f64>()
                .map_err(|_| Error::ingest(path, ln, format!("bad {what} `{t}`")))
        };
        let x = num("x coordinate")?;
        let y = num("y coordinate")?;
        verts.push(Vertex { x, y });
    }
    let mut cells = Vec::with_capacity(nc);
    for _ in 0..nc {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| Error::ingest(path, text.lines().count(), "unexpected end of file in cell list"))?;
        let ints: std::result::Result<Vec<usize>, _> = l.split_whitespace().map(str::parse::<usize>).collect();
        let ints = ints.map_err(|_| Error::ingest(path, ln, "cell line must hold non-negative integers"))?;
        if ints.is_empty() || ints[0] + 1 != ints.len() {
            return Err(Error::ingest(path, ln, "cell line must be `k v1 .. vk`"));
        }
        if let Some(&v) = ints[1..].iter().find(|&&v| v >= nv) {
            return Err(Error::ingest(path, ln, format!("vertex index {v} out of range")));
        }
        cells.push(ints[1..].to_vec());
    }
    if let Some((ln, _)) = lines.next() {
        return Err(Error::ingest(path, ln, "trailing data after cell list"));
    }
    build_mesh(verts, cells)
}

pub fn read_mesh(path: &Path) -> Result<Mesh> {
    parse_mesh(&read_text(path)?, path)
}

pub fn write_mesh(mesh: &Mesh, path: &Path) -> Result<()> {
    std::fs::write(path, mesh.to_text()).map_err(|e| Error::io(path, e))
}

/// Reads a polyline file with one `x y` pair per line.
pub fn read_polyline(path: &Path) -> Result<Vec<[f64; 2]>> {
    let text = read_text(path)?;
    let mut pts = Vec::new();
    for (ln, l) in data_lines(&text) {
        let v: Vec<&str> = l.split(|c: char| c.is_whitespace() || c == ',').filter(|s| !s.is_empty()).collect();
        if v.len() != 2 {
            return Err(Error::ingest(path, ln, "expected `x y`"));
        }
        let x = v[0].parse::<f64>().map_err(|_| Error::ingest(path, ln, format!("bad number `{}`", v[0])))?;
        let y = v[1].parse::<f64>().map_err(|_| Error::ingest(path, ln, format!("bad number `{}`", v[1])))?;
        pts.push([x, y]);
    }
    if pts.is_empty() {
        return Err(Error::ingest(path, 1, "polyline has no points"));
    }
    Ok(pts)
}

/// Boundary-inclusive point-in-polygon test for a closed polyline.
pub fn point_in_polygon(p: [f64; 2], poly: &[[f64; 2]]) -> bool {
    let k = poly.len();
    let mut inside = false;
    for i in 0..k {
        let a = poly[i];
        let b = poly[(i + 1) % k];
        if point_segment_distance(p, a, b) <= 1e-12 {
            return true;
        }
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let xi = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < xi {
                inside = !inside;
            }
        }
    }
    inside
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_square_quads() -> Mesh {
        let v = vec![
            Vertex { x: 0.0, y: 0.0 },
            Vertex { x: 1.0, y: 0.0 },
            Vertex { x: 2.0, y: 0.0 },
            Vertex { x: 0.0, y: 1.0 },
            Vertex { x: 1.0, y: 1.0 },
            Vertex { x: 2.0, y: 1.0 },
        ];
        build_mesh(v, vec![vec![0, 1, 4, 3], vec![1, 2, 5, 4]]).unwrap()
    }

    #[test]
    fn quad_pair_topology() {
        let m = unit_square_quads();
        assert_eq!(m.edges.len(), 7);
        assert_eq!(m.edges.iter().filter(|e| e.right.is_none()).count(), 6);
        let shared = m.edges.iter().find(|e| e.right.is_some()).unwrap();
        assert_eq!(shared.left, 0);
        assert_eq!(shared.right, Some(1));
        assert_eq!(shared.normal, [1.0, 0.0]);
        assert_eq!(m.cells[0].centroid, [0.5, 0.5]);
        assert_eq!(m.cells[1].neighbors, vec![0]);
        assert!((m.mesh_size() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn clockwise_cells_are_reoriented() {
        let v = vec![
            Vertex { x: 0.0, y: 0.0 },
            Vertex { x: 1.0, y: 0.0 },
            Vertex { x: 0.0, y: 1.0 },
        ];
        let m = build_mesh(v, vec![vec![0, 2, 1]]).unwrap();
        assert!((m.cells[0].area - 0.5).abs() < 1e-15);
        assert_eq!(m.cells[0].vertices, vec![1, 2, 0]);
    }

    #[test]
    fn degenerate_cell_rejected() {
        let v = vec![
            Vertex { x: 0.0, y: 0.0 },
            Vertex { x: 1.0, y: 0.0 },
            Vertex { x: 2.0, y: 0.0 },
        ];
        assert!(matches!(build_mesh(v, vec![vec![0, 1, 2]]), Err(Error::DegenerateCell { cell: 0, .. })));
    }

    #[test]
    fn overlapping_cells_rejected() {
        let v = vec![
            Vertex { x: 0.0, y: 0.0 },
            Vertex { x: 1.0, y: 0.0 },
            Vertex { x: 0.0, y: 1.0 },
            Vertex { x: 1.0, y: 1.0 },
        ];
        let r = build_mesh(v, vec![vec![0, 1, 2], vec![0, 1, 3]]);
        assert!(matches!(r, Err(Error::Topology(_))));
    }

    #[test]
    fn structured_rectangle_counts() {
        let m = rectangle_mesh(0.0, 1.0, 0.0, 1.0, 4, 4).unwrap();
        assert_eq!(m.n_cells(), 32);
        assert!((m.total_area() - 1.0).abs() < 1e-14);
        assert_eq!(m.edges.iter().filter(|e| e.right.is_none()).count(), 16);
    }

    #[test]
    fn closed_cells_have_zero_normal_sum() {
        let m = refine_triangles(&rectangle_mesh(-1.0, 1.0, -1.0, 1.0, 3, 3).unwrap(), 3).unwrap();
        for c in 0..m.n_cells() {
            let mut s = [0.0, 0.0];
            for &e in &m.cells[c].edges {
                let n = m.outward_normal(c, e);
                s[0] += m.edges[e].length * n[0];
                s[1] += m.edges[e].length * n[1];
            }
            assert!(s[0].abs() < 1e-14 && s[1].abs() < 1e-14);
        }
    }

    #[test]
    fn refine_by_one_keeps_mesh() {
        let m = rectangle_mesh(0.0, 2.0, 0.0, 1.0, 2, 3).unwrap();
        let r = refine_triangles(&m, 1).unwrap();
        assert_eq!(r.n_cells(), m.n_cells());
        assert_eq!(r.vertices.len(), m.vertices.len());
        for (a, b) in r.cells.iter().zip(&m.cells) {
            assert!((a.area - b.area).abs() < 1e-15);
        }
    }

    #[test]
    fn refine_is_conforming_and_tracks_parents() {
        let m = rectangle_mesh(0.0, 1.0, 0.0, 1.0, 2, 2).unwrap();
        let r = refine_triangles(&m, 4).unwrap();
        assert_eq!(r.n_cells(), m.n_cells() * 16);
        // Euler characteristic of a disc: V - E + F = 1
        let chi = r.vertices.len() as i64 - r.edges.len() as i64 + r.n_cells() as i64;
        assert_eq!(chi, 1);
        let parent = r.parent.as_ref().unwrap();
        let mut area = vec![0.0; m.n_cells()];
        for (c, &p) in parent.iter().enumerate() {
            area[p] += r.cells[c].area;
        }
        for (p, a) in area.iter().enumerate() {
            assert!((a - m.cells[p].area).abs() < 1e-15);
        }
    }

    #[test]
    fn refine_rejects_quads() {
        assert!(matches!(refine_triangles(&unit_square_quads(), 2), Err(Error::UnsupportedRefinement(_))));
    }

    #[test]
    fn locate_on_shared_edge_prefers_lowest_id() {
        let m = unit_square_quads();
        assert_eq!(m.locate_cell(1.0, 0.5), Some(0));
        assert_eq!(m.locate_cell(1.5, 0.5), Some(1));
        assert_eq!(m.locate_cell(2.0, 1.0), Some(1));
        assert_eq!(m.locate_cell(2.5, 0.5), None);
    }

    #[test]
    fn text_round_trip() {
        let m = rectangle_mesh(0.0, 1.0, 0.0, 3.0, 3, 2).unwrap();
        let p = parse_mesh(&m.to_text(), Path::new("mem")).unwrap();
        assert_eq!(p.n_cells(), m.n_cells());
        for (a, b) in p.vertices.iter().zip(&m.vertices) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn bad_mesh_line_reports_line_number() {
        let text = "MESH2D 3 1\n0 0\n1 0\n0 oops\n3 0 1 2\n";
        match parse_mesh(text, Path::new("m.txt")) {
            Err(Error::Ingestion { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
        let text = "MESH2D 3 1\n0 0\n1 0\n0 1\n3 0 1 7\n";
        assert!(matches!(parse_mesh(text, Path::new("m.txt")), Err(Error::Ingestion { line: 5, .. })));
    }

    proptest! {
        #[test]
        fn refinement_preserves_area_and_scales_h(chi in 1usize..6, nx in 1usize..4, ny in 1usize..4, w in 0.5f64..3.0) {
            let m = rectangle_mesh(0.0, w, 0.0, 1.0, nx, ny).unwrap();
            let r = refine_triangles(&m, chi).unwrap();
            prop_assert_eq!(r.n_cells(), m.n_cells() * chi * chi);
            let rel = (r.total_area() - m.total_area()).abs() / m.total_area();
            prop_assert!(rel <= 1e-12);
            let ratio = m.mesh_size() / r.mesh_size();
            prop_assert!((ratio - chi as f64).abs() <= 1e-9 * chi as f64);
        }

        #[test]
        fn every_edge_has_consistent_sides(n in 1usize..5, chi in 1usize..4) {
            let m = refine_triangles(&rectangle_mesh(0.0, 1.0, 0.0, 1.0, n, n).unwrap(), chi).unwrap();
            for e in &m.edges {
                prop_assert!(m.cells[e.left].edges.iter().any(|&x| std::ptr::eq(&m.edges[x], e)));
                if let Some(r) = e.right {
                    prop_assert!(r != e.left);
                    // normal points from left centroid towards right centroid
                    let cl = m.cells[e.left].centroid;
                    let cr = m.cells[r].centroid;
                    prop_assert!((cr[0] - cl[0]) * e.normal[0] + (cr[1] - cl[1]) * e.normal[1] > 0.0);
                }
            }
        }
    }
}
