use std::io::{self, Write};
use std::sync::Arc;

use nalgebra::{Matrix6, Vector6};

use super::{DomainMask, Grid, Leg};
use crate::geom::{self, Point};

/// Level-function magnitude below which a point counts as on the boundary.
pub const ON_BOUNDARY: f64 = 1e-9;

/// Nodal values on a grid, extended by zero outside the domain of the mask,
/// together with the Dirichlet values at the boundary intercepts.
#[derive(Debug, Clone)]
pub struct DiscreteField {
    pub mask: Arc<DomainMask>,
    /// One value per grid node; zero at outside nodes.
    pub values: Vec<f64>,
    /// Boundary value on each arm of each unknown (used on cut arms only).
    pub boundary: Vec<[f64; 4]>,
}

impl DiscreteField {
    pub fn from_unknowns(mask: Arc<DomainMask>, u: &[f64], boundary: Vec<[f64; 4]>) -> Self {
        let mut values = vec![0.0; mask.grid.len()];
        for (k, v) in mask.nodes.iter().zip(u) {
            values[*k] = *v;
        }
        DiscreteField {
            mask,
            values,
            boundary,
        }
    }

    pub fn zeros(mask: Arc<DomainMask>) -> Self {
        let m = mask.nodes.len();
        let values = vec![0.0; mask.grid.len()];
        DiscreteField {
            mask,
            values,
            boundary: vec![[0.0; 4]; m],
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.mask.grid
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.mask.grid.idx(i, j)]
    }

    pub fn unknowns(&self) -> Vec<f64> {
        self.mask.nodes.iter().map(|&k| self.values[k]).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// The same values viewed on all of the hold-all box; outside nodes already read zero.
    pub fn extend_zero(&self) -> DiscreteField {
        self.clone()
    }

    /// Value at an arbitrary point: zero where `g >= 0`, bicubic interpolation
    /// where the 4x4 stencil lies inside, and otherwise a weighted quadratic
    /// least-squares fit to nearby inside nodes and boundary values.
    pub fn sample(&self, x: Point) -> f64 {
        let grid = &self.mask.grid;
        if !grid.d.contains(x) || !(self.mask.g.value(x) < 0.0) {
            return 0.0;
        }
        let (i, j, s, t) = grid.cell_of(x);
        let n = grid.n;
        if i >= 1 && j >= 1 && i + 2 < n && j + 2 < n {
            let all_in =
                (0..4).all(|b| (0..4).all(|a| self.mask.inside[grid.idx(i + a - 1, j + b - 1)]));
            if all_in {
                let wx = geom::cubic_weights(s);
                let wy = geom::cubic_weights(t);
                let mut v = 0.0;
                for b in 0..4 {
                    for a in 0..4 {
                        v += wx[a] * wy[b] * self.values[grid.idx(i + a - 1, j + b - 1)];
                    }
                }
                return v;
            }
        }
        self.fit(x, i, j).0
    }

    /// Like [`sample`](Self::sample), but points on the domain's own
    /// boundary (`|g| <= ON_BOUNDARY`) take the one-sided fit, which
    /// honours the boundary values, instead of reading zero.
    pub fn sample_closure(&self, x: Point) -> f64 {
        let grid = &self.mask.grid;
        let gx = self.mask.g.value(x);
        if grid.d.contains(x) && (0.0..=ON_BOUNDARY).contains(&gx) {
            let (i, j, _, _) = grid.cell_of(x);
            return self.fit(x, i, j).0;
        }
        self.sample(x)
    }

    /// Weighted quadratic least-squares fit around `x`; returns the value and gradient.
    pub(crate) fn fit(&self, x: Point, i: usize, j: usize) -> (f64, Point) {
        let grid = &self.mask.grid;
        let (hx, hy) = (grid.hx(), grid.hy());
        let n = grid.n as isize;
        let mut pts: Vec<(Point, f64)> = Vec::new();
        for b in -2..=3 {
            for a in -2..=3 {
                let (ii, jj) = (i as isize + a, j as isize + b);
                if ii < 0 || jj < 0 || ii >= n || jj >= n {
                    continue;
                }
                let k = grid.idx(ii as usize, jj as usize);
                let u = self.mask.unknown_of[k];
                if u == usize::MAX {
                    continue;
                }
                pts.push((grid.node(ii as usize, jj as usize), self.values[k]));
                for (d, leg) in self.mask.legs[u].iter().enumerate() {
                    if let Leg::Cut { point, .. } = leg {
                        pts.push((*point, self.boundary[u][d]));
                    }
                }
            }
        }
        let mut m = Matrix6::<f64>::zeros();
        let mut rhs = Vector6::<f64>::zeros();
        let mut wsum = 0.0;
        let mut wval = 0.0;
        for (p, v) in &pts {
            let dx = (p[0] - x[0]) / hx;
            let dy = (p[1] - x[1]) / hy;
            let w = 1.0 / (0.01 + dx * dx + dy * dy);
            let phi = Vector6::new(1.0, dx, dy, dx * dx, dx * dy, dy * dy);
            m += w * phi * phi.transpose();
            rhs += w * v * phi;
            wsum += w;
            wval += w * v;
        }
        if pts.len() >= 6 {
            if let Some(c) = m.cholesky() {
                let c = c.solve(&rhs);
                if c.iter().all(|v| v.is_finite()) {
                    return (c[0], [c[1] / hx, c[2] / hy]);
                }
            }
        }
        (if wsum > 0.0 { wval / wsum } else { 0.0 }, [0.0, 0.0])
    }

    /// Writes `i, j, x1, x2, value, inside` rows for every grid node.
    pub fn write_csv<W: Write + ?Sized>(&self, out: &mut W) -> io::Result<()> {
        let grid = &self.mask.grid;
        writeln!(out, "i,j,x1,x2,value,inside")?;
        for j in 0..grid.n {
            for i in 0..grid.n {
                let k = grid.idx(i, j);
                let p = grid.node(i, j);
                writeln!(
                    out,
                    "{i},{j},{:.16e},{:.16e},{:.16e},{}",
                    p[0],
                    p[1],
                    self.values[k],
                    u8::from(self.mask.inside[k])
                )?;
            }
        }
        Ok(())
    }
}
