//! Finite differences for `-Laplace y + beta(y) = f` in `{g < 0}` with
//! Dirichlet data, using Shortley-Weller stencils on a Cartesian grid.

mod field;
mod nonlinearity;
mod solve;
pub mod sparse;

use std::collections::VecDeque;
use std::sync::Arc;

use rayon::prelude::*;

pub use field::DiscreteField;
pub use nonlinearity::{KinkSlope, Nonlinearity};
pub use solve::{solve_semilinear, solve_state, SolveLog, SolveOptions};

use crate::error::{Error, Result};
use crate::geom::{self, Point};
use crate::shapefn::{HoldAll, ShapeFunction};
use sparse::Csr;

/// Uniform node grid over the hold-all box with `n` nodes per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub d: HoldAll,
    pub n: usize,
}

impl Grid {
    pub fn new(d: HoldAll, n: usize) -> Result<Self> {
        d.validate()?;
        if n < 16 {
            return Err(Error::InvalidArgument(format!(
                "grid needs at least 16 nodes per axis, got {n}"
            )));
        }
        Ok(Grid { d, n })
    }

    pub fn hx(&self) -> f64 {
        self.d.width() / (self.n - 1) as f64
    }

    pub fn hy(&self) -> f64 {
        self.d.height() / (self.n - 1) as f64
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.n + i
    }

    #[inline]
    pub fn ij(&self, k: usize) -> (usize, usize) {
        (k % self.n, k / self.n)
    }

    #[inline]
    pub fn node(&self, i: usize, j: usize) -> Point {
        [
            self.d.xmin + self.hx() * i as f64,
            self.d.ymin + self.hy() * j as f64,
        ]
    }

    /// Lower-left node of the cell containing `x` and the local coordinates in `[0, 1]`.
    pub fn cell_of(&self, x: Point) -> (usize, usize, f64, f64) {
        let fx = (x[0] - self.d.xmin) / self.hx();
        let fy = (x[1] - self.d.ymin) / self.hy();
        let i = (fx.floor().max(0.0) as usize).min(self.n - 2);
        let j = (fy.floor().max(0.0) as usize).min(self.n - 2);
        (i, j, fx - i as f64, fy - j as f64)
    }
}

/// Unit steps east, west, north, south.
pub const DIRS: [(isize, isize); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];

/// One arm of the five-point stencil at an inside node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Leg {
    /// The neighbouring node (grid index) is inside.
    Node(usize),
    /// The boundary cuts the arm at `theta * h` from the node, at `point`.
    Cut { theta: f64, point: Point },
}

/// Discretization of `{g < 0}` on a grid.
#[derive(Debug, Clone)]
pub struct DomainMask {
    pub grid: Grid,
    pub g: ShapeFunction,
    pub inside: Vec<bool>,
    /// Unknown number of each grid node, `usize::MAX` outside.
    pub unknown_of: Vec<usize>,
    /// Grid index of each unknown.
    pub nodes: Vec<usize>,
    pub legs: Vec<[Leg; 4]>,
    pub warnings: Vec<String>,
}

/// Minimum number of nodes a component must span in each direction.
pub const MIN_NODES_ACROSS: usize = 8;

/// Classifies the grid nodes against `{g < 0}` and locates the boundary
/// intercepts on every arm leaving the domain.
pub fn classify(g: &ShapeFunction, grid: &Grid) -> Result<DomainMask> {
    let n = grid.n;
    let vals: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let (i, j) = grid.ij(k);
            g.value(grid.node(i, j))
        })
        .collect();
    let inside: Vec<bool> = vals.iter().map(|v| *v < 0.0).collect();
    let mut unknown_of = vec![usize::MAX; grid.len()];
    let mut nodes = Vec::new();
    for (k, &ins) in inside.iter().enumerate() {
        if ins {
            let (i, j) = grid.ij(k);
            if i == 0 || j == 0 || i == n - 1 || j == n - 1 {
                return Err(Error::NotAdmissible(format!(
                    "g < 0 at the box boundary node {:?}",
                    grid.node(i, j)
                )));
            }
            unknown_of[k] = nodes.len();
            nodes.push(k);
        }
    }
    if nodes.is_empty() {
        return Err(Error::EmptyDomain);
    }
    check_resolution(grid, &inside)?;

    let per_node: Vec<([Leg; 4], Vec<String>)> = nodes
        .par_iter()
        .map(|&k| {
            let (i, j) = grid.ij(k);
            let p = grid.node(i, j);
            let mut warn = Vec::new();
            let legs = DIRS.map(|(di, dj)| {
                let (i2, j2) = ((i as isize + di) as usize, (j as isize + dj) as usize);
                let k2 = grid.idx(i2, j2);
                if inside[k2] {
                    return Leg::Node(k2);
                }
                let q = grid.node(i2, j2);
                let (theta, point, crossings) = intercept(g, p, q);
                if crossings > 1 {
                    warn.push(format!(
                        "{crossings} sign changes of g between {p:?} and {q:?}; using the one nearest the inside node"
                    ));
                }
                Leg::Cut { theta, point }
            });
            (legs, warn)
        })
        .collect();
    let mut legs = Vec::with_capacity(nodes.len());
    let mut warnings = Vec::new();
    for (l, w) in per_node {
        legs.push(l);
        warnings.extend(w);
    }
    Ok(DomainMask {
        grid: *grid,
        g: g.clone(),
        inside,
        unknown_of,
        nodes,
        legs,
        warnings,
    })
}

fn check_resolution(grid: &Grid, inside: &[bool]) -> Result<()> {
    let n = grid.n;
    let mut seen = vec![false; inside.len()];
    for start in 0..inside.len() {
        if !inside[start] || seen[start] {
            continue;
        }
        let (mut imin, mut imax, mut jmin, mut jmax) = (n, 0, n, 0);
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(k) = queue.pop_front() {
            let (i, j) = grid.ij(k);
            imin = imin.min(i);
            imax = imax.max(i);
            jmin = jmin.min(j);
            jmax = jmax.max(j);
            for (di, dj) in DIRS {
                let k2 = grid.idx((i as isize + di) as usize, (j as isize + dj) as usize);
                if inside[k2] && !seen[k2] {
                    seen[k2] = true;
                    queue.push_back(k2);
                }
            }
        }
        let across = (imax - imin + 1).min(jmax - jmin + 1);
        if across < MIN_NODES_ACROSS {
            return Err(Error::Unresolved { nodes: across });
        }
    }
    Ok(())
}

/// Boundary crossing on the arm from the inside node `p` to the outside node
/// `q`: fraction of the arm, the point, and the number of sign changes seen.
fn intercept(g: &ShapeFunction, p: Point, q: Point) -> (f64, Point, usize) {
    const PROBES: usize = 8;
    let at = |s: f64| geom::axpy(p, s, geom::sub(q, p));
    let mut crossings = 0;
    let mut first = None;
    let mut prev = g.value(p);
    for m in 1..=PROBES {
        let s = m as f64 / PROBES as f64;
        let v = g.value(at(s));
        if (v < 0.0) != (prev < 0.0) {
            crossings += 1;
            if first.is_none() {
                first = Some(((m - 1) as f64 / PROBES as f64, s));
            }
        }
        prev = v;
    }
    let (a, b) = first.unwrap_or((0.0, 1.0));
    let x = crate::tracer::bisect_segment(g, at(a), at(b));
    let theta = (geom::dist(x, p) / geom::dist(q, p)).clamp(f64::MIN_POSITIVE, 1.0);
    (theta, x, crossings.max(1))
}

/// Shortley-Weller discretization of `-Laplace` on the unknowns of a mask.
/// Rows are scaled so that every diagonal equals `2/hx^2 + 2/hy^2`.
#[derive(Debug, Clone)]
pub struct Operator {
    pub mask: Arc<DomainMask>,
    /// Scaled matrix `S A`.
    pub a: Csr,
    /// Row scale factors `S`.
    pub scale: Vec<f64>,
    /// Unscaled coefficient multiplying the boundary value on each cut arm.
    pub cut_coef: Vec<[f64; 4]>,
}

impl Operator {
    pub fn new(mask: Arc<DomainMask>) -> Self {
        let (hx, hy) = (mask.grid.hx(), mask.grid.hy());
        let regular = 2.0 / (hx * hx) + 2.0 / (hy * hy);
        let mut rows = Vec::with_capacity(mask.nodes.len());
        let mut scale = Vec::with_capacity(mask.nodes.len());
        let mut cut_coef = Vec::with_capacity(mask.nodes.len());
        for (u, legs) in mask.legs.iter().enumerate() {
            let arm = |d: usize, h: f64| match legs[d] {
                Leg::Node(_) => h,
                Leg::Cut { theta, .. } => theta * h,
            };
            let hs = [arm(0, hx), arm(1, hx), arm(2, hy), arm(3, hy)];
            let coef = [
                2.0 / (hs[0] * (hs[0] + hs[1])),
                2.0 / (hs[1] * (hs[0] + hs[1])),
                2.0 / (hs[2] * (hs[2] + hs[3])),
                2.0 / (hs[3] * (hs[2] + hs[3])),
            ];
            let diag = 2.0 / (hs[0] * hs[1]) + 2.0 / (hs[2] * hs[3]);
            let s = regular / diag;
            let mut row = vec![(u, s * diag)];
            let mut cc = [0.0; 4];
            for d in 0..4 {
                match legs[d] {
                    Leg::Node(k) => row.push((mask.unknown_of[k], -s * coef[d])),
                    Leg::Cut { .. } => cc[d] = coef[d],
                }
            }
            rows.push(row);
            scale.push(s);
            cut_coef.push(cc);
        }
        Operator {
            a: Csr::from_rows(rows),
            mask,
            scale,
            cut_coef,
        }
    }

    pub fn len(&self) -> usize {
        self.scale.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scale.is_empty()
    }

    /// Unscaled right-hand side `f + sum of cut coefficients * boundary values`.
    pub fn rhs(&self, f: &[f64], boundary: &[[f64; 4]]) -> Vec<f64> {
        (0..self.len())
            .map(|u| {
                f[u] + (0..4)
                    .map(|d| self.cut_coef[u][d] * boundary[u][d])
                    .sum::<f64>()
            })
            .collect()
    }
}
