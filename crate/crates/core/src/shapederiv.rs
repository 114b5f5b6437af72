//! Boundary data `q = -grad y . W` and the derivative equation
//! `-Laplace q + beta'(y; q) = 0` on the state's domain.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fdpde::{
    solve_semilinear, DiscreteField, DomainMask, Leg, Nonlinearity, Operator, SolveLog,
    SolveOptions,
};
use crate::geom::{self, Point};
use crate::linsens::VelocityField;

/// Dirichlet data on the cut arms of a mask.
#[derive(Debug, Clone)]
pub struct BoundaryData {
    /// Value per unknown per arm (only cut arms are meaningful).
    pub values: Vec<[f64; 4]>,
    pub entries: Vec<BoundaryEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundaryEntry {
    pub unknown: usize,
    pub arm: usize,
    pub point: Point,
    pub value: f64,
    pub grad_y: Point,
    pub w: Point,
    /// Curve the velocity was interpolated from.
    pub component: usize,
    pub t: f64,
}

impl BoundaryData {
    /// Data given by a closed-form function of the boundary point.
    pub fn from_fn(mask: &DomainMask, f: impl Fn(Point) -> f64) -> Self {
        let mut values = vec![[0.0; 4]; mask.nodes.len()];
        let mut entries = Vec::new();
        for (u, legs) in mask.legs.iter().enumerate() {
            for (d, leg) in legs.iter().enumerate() {
                if let Leg::Cut { point, .. } = leg {
                    let v = f(*point);
                    values[u][d] = v;
                    entries.push(BoundaryEntry {
                        unknown: u,
                        arm: d,
                        point: *point,
                        value: v,
                        grad_y: [0.0; 2],
                        w: [0.0; 2],
                        component: 0,
                        t: 0.0,
                    });
                }
            }
        }
        BoundaryData { values, entries }
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0, |a, e| a.max(e.value.abs()))
    }
}

/// Below this `|n . e|` the axis difference is replaced by a local fit.
const MIN_ALIGNMENT: f64 = 0.2;

/// `grad y` at the intercept on arm `d` of unknown `u`, for a field with zero
/// boundary values: the one-sided quadratic derivative along the arm,
/// converted to the normal derivative.
pub fn boundary_gradient(y: &DiscreteField, u: usize, d: usize) -> Result<Point> {
    let mask = &y.mask;
    let grid = &mask.grid;
    let Leg::Cut { theta, point } = mask.legs[u][d] else {
        return Err(Error::InvalidArgument(
            "arm is not cut by the boundary".into(),
        ));
    };
    let gn = mask.g.grad(point);
    let nn = geom::norm(gn);
    if !(nn > 0.0) {
        return Err(Error::BoundaryStencil {
            x: point,
            message: "zero gradient of g".into(),
        });
    }
    let n = geom::scale(1.0 / nn, gn);
    let (di, dj) = crate::fdpde::DIRS[d];
    let e = [di as f64, dj as f64];
    let h = if d < 2 { grid.hx() } else { grid.hy() };
    let align = geom::dot(n, e);
    let k = mask.nodes[u];
    let opposite = [1, 0, 3, 2][d];
    if align.abs() >= MIN_ALIGNMENT {
        if let Leg::Node(kq) = mask.legs[u][opposite] {
            let (yb, yp, yq) = (y.boundary[u][d], y.values[k], y.values[kq]);
            let dl = (2.0 * theta + 1.0) / (theta * (theta + 1.0) * h) * yb
                - (theta + 1.0) / (theta * h) * yp
                + theta / ((1.0 + theta) * h) * yq;
            return Ok(geom::scale(dl / align, n));
        }
    }
    let (i, j, _, _) = grid.cell_of(point);
    let fit = y.fit(point, i, j).1;
    if fit == [0.0, 0.0] && y.values[k] != 0.0 {
        return Err(Error::BoundaryStencil {
            x: point,
            message: "not enough inside nodes for a one-sided difference".into(),
        });
    }
    Ok(geom::scale(geom::dot(fit, n), n))
}

/// `q_b = -grad y . W` at every intercept, with `W` taken from the nearest curve.
pub fn boundary_data(y: &DiscreteField, fields: &[VelocityField]) -> Result<BoundaryData> {
    if fields.is_empty() {
        return Err(Error::InvalidArgument("no velocity fields".into()));
    }
    let mask = &y.mask;
    let mut values = vec![[0.0; 4]; mask.nodes.len()];
    let mut entries = Vec::new();
    for (u, legs) in mask.legs.iter().enumerate() {
        for (d, leg) in legs.iter().enumerate() {
            let Leg::Cut { point, .. } = leg else {
                continue;
            };
            let grad_y = boundary_gradient(y, u, d)?;
            let v = fields
                .iter()
                .min_by(|a, b| {
                    let da = geom::dist_to_closed_polyline(*point, &a.curve.z);
                    let db = geom::dist_to_closed_polyline(*point, &b.curve.z);
                    da.total_cmp(&db)
                })
                .unwrap();
            let t = v.time_of(*point)?;
            let w = v.at_time(t);
            let value = -geom::dot(grad_y, w);
            values[u][d] = value;
            entries.push(BoundaryEntry {
                unknown: u,
                arm: d,
                point: *point,
                value,
                grad_y,
                w,
                component: v.component_id(),
                t,
            });
        }
    }
    Ok(BoundaryData { values, entries })
}

/// Solves `-Laplace q + beta'(y; q) = 0` with `q = bd` on the boundary.
pub fn solve_derivative(
    y: &DiscreteField,
    beta: &Nonlinearity,
    bd: &BoundaryData,
    opts: &SolveOptions,
) -> Result<(DiscreteField, SolveLog)> {
    beta.validate()?;
    let mask = y.mask.clone();
    let op = Operator::new(mask.clone());
    let m = op.len();
    let b = op.rhs(&vec![0.0; m], &bd.values);
    let yu = y.unknowns();
    let side = opts.kink_slope;
    let map = |i: usize, q: f64| (beta.dir(yu[i], q), beta.dir_slope(yu[i], q, side));
    let ymax = y.max_abs();
    let lip = |_: f64| beta.lipschitz_on(ymax);
    let (q, log) = solve_semilinear(&op, &b, &map, &lip, opts)?;
    Ok((
        DiscreteField::from_unknowns(mask, &q, bd.values.clone()),
        log,
    ))
}

/// The derivative field viewed on all of the hold-all box.
pub fn extend_zero(q: &DiscreteField) -> DiscreteField {
    q.extend_zero()
}
