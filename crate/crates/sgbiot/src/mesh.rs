//! Structured quadrilateral meshes on axis-aligned rectangles.
//!
//! A mesh at level `l` has uniform square elements of side `2^-(l-1)` in
//! model units. Displacement unknowns live on the biquadratic (Q2) node
//! lattice, pressure-like unknowns on the bilinear (Q1) lattice; both are
//! numbered lexicographically with x fastest.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Axis-aligned rectangular domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RectDomain {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl RectDomain {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<RectDomain> {
        if !(x_min < x_max) || !(y_min < y_max) {
            return Err(Error::Domain(format!(
                "need x_min < x_max and y_min < y_max, got [{x_min}, {x_max}] x [{y_min}, {y_max}]"
            )));
        }
        Ok(RectDomain {
            x_min,
            x_max,
            y_min,
            y_max,
        })
    }

    pub fn unit_square() -> RectDomain {
        RectDomain {
            x_min: 0.0,
            x_max: 1.0,
            y_min: 0.0,
            y_max: 1.0,
        }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }
}

/// One of the four sides of the rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeSide {
    Bottom,
    Right,
    Top,
    Left,
}

/// A segment of one boundary edge with endpoint inclusion rules.
///
/// The span is measured in the coordinate running along the edge (x for
/// bottom/top, y for left/right); an unbounded span covers the whole edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub edge: EdgeSide,
    pub start: f64,
    pub end: f64,
    pub include_start: bool,
    pub include_end: bool,
}

impl Segment {
    /// The whole edge, endpoints included.
    pub fn full(edge: EdgeSide) -> Segment {
        Segment {
            edge,
            start: f64::NEG_INFINITY,
            end: f64::INFINITY,
            include_start: true,
            include_end: true,
        }
    }

    pub fn span(edge: EdgeSide, start: f64, end: f64) -> Segment {
        Segment {
            edge,
            start,
            end,
            include_start: true,
            include_end: true,
        }
    }

    /// Point membership under the half-open endpoint rules.
    pub fn contains(&self, domain: &RectDomain, x: f64, y: f64, tol: f64) -> bool {
        let (on_edge, along) = match self.edge {
            EdgeSide::Bottom => ((y - domain.y_min).abs() <= tol, x),
            EdgeSide::Top => ((y - domain.y_max).abs() <= tol, x),
            EdgeSide::Left => ((x - domain.x_min).abs() <= tol, y),
            EdgeSide::Right => ((x - domain.x_max).abs() <= tol, y),
        };
        if !on_edge {
            return false;
        }
        let lo_ok = if self.include_start {
            along >= self.start - tol
        } else {
            along > self.start + tol
        };
        let hi_ok = if self.include_end {
            along <= self.end + tol
        } else {
            along < self.end - tol
        };
        lo_ok && hi_ok
    }
}

/// Constant traction applied on a set of boundary segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Traction {
    pub segments: Vec<Segment>,
    pub value: [f64; 2],
}

/// Boundary condition layout: essential sets for displacement and fluid
/// pressure plus an optional traction load.
///
/// The two essential sets are disjoint as point sets in the general model;
/// configurations may still constrain both fields at shared nodes (corner
/// nodes, or a pressure set covering the whole boundary).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundarySpec {
    pub u_dirichlet: Vec<Segment>,
    pub p_dirichlet: Vec<Segment>,
    pub traction: Option<Traction>,
}

impl BoundarySpec {
    pub fn new(u_dirichlet: Vec<Segment>, p_dirichlet: Vec<Segment>) -> BoundarySpec {
        BoundarySpec {
            u_dirichlet,
            p_dirichlet,
            traction: None,
        }
    }

    pub fn with_traction(mut self, traction: Traction) -> BoundarySpec {
        self.traction = Some(traction);
        self
    }

    /// No essential conditions anywhere (used by tests on free meshes).
    pub fn unconstrained() -> BoundarySpec {
        BoundarySpec {
            u_dirichlet: Vec::new(),
            p_dirichlet: Vec::new(),
            traction: None,
        }
    }
}

/// A rectangular lattice of nodes with uniform spacing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub nx_nodes: usize,
    pub ny_nodes: usize,
    pub x0: f64,
    pub y0: f64,
    pub hx: f64,
    pub hy: f64,
}

impl Grid {
    pub fn n_nodes(&self) -> usize {
        self.nx_nodes * self.ny_nodes
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx_nodes + ix
    }

    #[inline]
    pub fn node_xy(&self, node: usize) -> (f64, f64) {
        let ix = node % self.nx_nodes;
        let iy = node / self.nx_nodes;
        (self.x0 + ix as f64 * self.hx, self.y0 + iy as f64 * self.hy)
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        let ix = node % self.nx_nodes;
        let iy = node / self.nx_nodes;
        ix == 0 || iy == 0 || ix + 1 == self.nx_nodes || iy + 1 == self.ny_nodes
    }
}

/// Structured mesh with Q1 and Q2 node lattices.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub domain: RectDomain,
    pub level: u32,
    /// elements per direction
    pub nx: usize,
    pub ny_elem: usize,
    /// element side length (equal in both directions)
    pub h: f64,
    pub q1: Grid,
    pub q2: Grid,
}

impl Mesh {
    pub fn n_elements(&self) -> usize {
        self.nx * self.ny_elem
    }

    /// Q1 element connectivity, local nodes in tensor order (x fastest).
    pub fn q1_element_nodes(&self, ex: usize, ey: usize) -> [usize; 4] {
        let g = &self.q1;
        [
            g.index(ex, ey),
            g.index(ex + 1, ey),
            g.index(ex, ey + 1),
            g.index(ex + 1, ey + 1),
        ]
    }

    /// Q2 element connectivity, local nodes in tensor order (x fastest).
    pub fn q2_element_nodes(&self, ex: usize, ey: usize) -> [usize; 9] {
        let g = &self.q2;
        let (bx, by) = (2 * ex, 2 * ey);
        let mut out = [0usize; 9];
        for b in 0..3 {
            for a in 0..3 {
                out[b * 3 + a] = g.index(bx + a, by + b);
            }
        }
        out
    }

    /// Lower-left corner of element (ex, ey).
    pub fn element_origin(&self, ex: usize, ey: usize) -> (f64, f64) {
        (
            self.domain.x_min + ex as f64 * self.h,
            self.domain.y_min + ey as f64 * self.h,
        )
    }

    /// Geometric tolerance for point classification on this mesh.
    pub fn geom_tol(&self) -> f64 {
        1e-9 * self.domain.width().max(self.domain.height()).max(1.0)
    }
}

/// Builds a uniform mesh with element side `2^-(level-1)`.
pub fn build_mesh(domain: RectDomain, level: u32) -> Result<Mesh> {
    if level == 0 {
        return Err(Error::MeshSizing("level must be at least 1".into()));
    }
    let h = 0.5f64.powi(level as i32 - 1);
    let nx_f = domain.width() / h;
    let ny_f = domain.height() / h;
    let nx = nx_f.round() as usize;
    let ny_elem = ny_f.round() as usize;
    let tol = 1e-9;
    if nx == 0 || ny_elem == 0 || (nx_f - nx as f64).abs() > tol || (ny_f - ny_elem as f64).abs() > tol {
        return Err(Error::MeshSizing(format!(
            "domain sides ({} x {}) are not integer multiples of the level-{level} element size {h}",
            domain.width(),
            domain.height()
        )));
    }
    let q1 = Grid {
        nx_nodes: nx + 1,
        ny_nodes: ny_elem + 1,
        x0: domain.x_min,
        y0: domain.y_min,
        hx: h,
        hy: h,
    };
    let q2 = Grid {
        nx_nodes: 2 * nx + 1,
        ny_nodes: 2 * ny_elem + 1,
        x0: domain.x_min,
        y0: domain.y_min,
        hx: 0.5 * h,
        hy: 0.5 * h,
    };
    Ok(Mesh {
        domain,
        level,
        nx,
        ny_elem,
        h,
        q1,
        q2,
    })
}

/// Degree-of-freedom bookkeeping induced by a boundary specification.
///
/// `n_u` counts scalar Q2 basis functions free of displacement constraints,
/// `n_p` all Q1 basis functions, `n_0` Q1 basis functions free of pressure
/// constraints. Index maps are bijections between lattice nodes and the
/// compressed numbering of each free set.
#[derive(Debug, Clone)]
pub struct DofMaps {
    pub n_u: usize,
    pub n_p: usize,
    pub n_0: usize,
    /// per Q2 node: constrained by a u-Dirichlet segment
    pub q2_fixed: Vec<bool>,
    /// per Q1 node: constrained by a p-Dirichlet segment
    pub q1_fixed: Vec<bool>,
    /// Q2 node -> free index (usize::MAX if constrained)
    pub u_index: Vec<usize>,
    /// free index -> Q2 node
    pub u_node: Vec<usize>,
    /// Q1 node -> free index (usize::MAX if constrained)
    pub p0_index: Vec<usize>,
    /// free index -> Q1 node
    pub p0_node: Vec<usize>,
}

impl DofMaps {
    pub fn n_x(&self) -> usize {
        2 * self.n_u + 3 * self.n_p + self.n_0
    }
}

/// Classifies boundary nodes and builds the free-dof index maps.
pub fn classify_dofs(mesh: &Mesh, bc: &BoundarySpec) -> Result<DofMaps> {
    let tol = mesh.geom_tol();
    let in_any = |segs: &[Segment], x: f64, y: f64| {
        segs.iter().any(|s| s.contains(&mesh.domain, x, y, tol))
    };

    let q2n = mesh.q2.n_nodes();
    let mut q2_fixed = vec![false; q2n];
    for node in 0..q2n {
        if mesh.q2.is_boundary(node) {
            let (x, y) = mesh.q2.node_xy(node);
            q2_fixed[node] = in_any(&bc.u_dirichlet, x, y);
        }
    }
    let q1n = mesh.q1.n_nodes();
    let mut q1_fixed = vec![false; q1n];
    for node in 0..q1n {
        if mesh.q1.is_boundary(node) {
            let (x, y) = mesh.q1.node_xy(node);
            q1_fixed[node] = in_any(&bc.p_dirichlet, x, y);
        }
    }

    let mut u_index = vec![usize::MAX; q2n];
    let mut u_node = Vec::new();
    for node in 0..q2n {
        if !q2_fixed[node] {
            u_index[node] = u_node.len();
            u_node.push(node);
        }
    }
    let mut p0_index = vec![usize::MAX; q1n];
    let mut p0_node = Vec::new();
    for node in 0..q1n {
        if !q1_fixed[node] {
            p0_index[node] = p0_node.len();
            p0_node.push(node);
        }
    }

    Ok(DofMaps {
        n_u: u_node.len(),
        n_p: q1n,
        n_0: p0_node.len(),
        q2_fixed,
        q1_fixed,
        u_index,
        u_node,
        p0_index,
        p0_node,
    })
}
