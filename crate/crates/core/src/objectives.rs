//! Shape functionals, their directional derivatives and a finite-family
//! check of the primal necessary optimality condition.

use std::sync::Arc;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdpde::{classify, solve_state, DiscreteField, Grid, Nonlinearity, SolveOptions};
use crate::geom::{self, Point};
use crate::linsens::boundary_velocity;
use crate::shapederiv::{boundary_data, solve_derivative};
use crate::shapefn::{HoldAll, ShapeFunction};
use crate::tracer::{self, ComponentSearch, Curve, TraceOptions};
use crate::verify::integrate_inside;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weight {
    /// Arc length `dxi = |grad g| dt`.
    Dxi,
    /// Curve parameter `dt`.
    Dt,
}

/// Periodic trapezoid rule over the curve samples.
pub fn curve_integral_with(curve: &Curve, phi: &dyn Fn(Point) -> f64, weight: Weight) -> f64 {
    let g = curve.level_function();
    let sum: f64 = curve
        .z
        .iter()
        .map(|&z| match weight {
            Weight::Dxi => phi(z) * geom::norm(g.grad(z)),
            Weight::Dt => phi(z),
        })
        .sum();
    sum * curve.dt()
}

pub fn curve_integral(curve: &Curve, phi: &ShapeFunction, weight: Weight) -> f64 {
    curve_integral_with(curve, &|x| phi.value(x), weight)
}

/// Observation region `E`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum ObservationSet {
    Box {
        xmin: f64,
        xmax: f64,
        ymin: f64,
        ymax: f64,
    },
    Disk {
        center: Point,
        radius: f64,
    },
}

impl ObservationSet {
    /// Membership in the closed set.
    pub fn contains(&self, x: Point) -> bool {
        match *self {
            ObservationSet::Box {
                xmin,
                xmax,
                ymin,
                ymax,
            } => x[0] >= xmin && x[0] <= xmax && x[1] >= ymin && x[1] <= ymax,
            ObservationSet::Disk { center, radius } => geom::dist(x, center) <= radius,
        }
    }

    pub fn validate(&self, d: &HoldAll) -> Result<()> {
        let (lo, hi) = match *self {
            ObservationSet::Box {
                xmin,
                xmax,
                ymin,
                ymax,
            } => {
                if !(xmin < xmax && ymin < ymax) {
                    return Err(Error::ObservationSet);
                }
                ([xmin, ymin], [xmax, ymax])
            }
            ObservationSet::Disk { center, radius } => {
                if !(radius > 0.0) {
                    return Err(Error::ObservationSet);
                }
                (
                    [center[0] - radius, center[1] - radius],
                    [center[0] + radius, center[1] + radius],
                )
            }
        };
        if lo[0] > d.xmin && lo[1] > d.ymin && hi[0] < d.xmax && hi[1] < d.ymax {
            Ok(())
        } else {
            Err(Error::ObservationSet)
        }
    }

    /// Points covering the closed set: an `n x n` lattice of the bounding box
    /// restricted to the set, plus `4n` points on its boundary.
    pub fn samples(&self, n: usize) -> Vec<Point> {
        let n = n.max(2);
        let mut pts = Vec::new();
        let (lo, hi) = match *self {
            ObservationSet::Box {
                xmin,
                xmax,
                ymin,
                ymax,
            } => ([xmin, ymin], [xmax, ymax]),
            ObservationSet::Disk { center, radius } => {
                for k in 0..4 * n {
                    let a = std::f64::consts::TAU * k as f64 / (4 * n) as f64;
                    pts.push([center[0] + radius * a.cos(), center[1] + radius * a.sin()]);
                }
                (
                    [center[0] - radius, center[1] - radius],
                    [center[0] + radius, center[1] + radius],
                )
            }
        };
        for j in 0..n {
            for i in 0..n {
                let x = [
                    lo[0] + (hi[0] - lo[0]) * i as f64 / (n - 1) as f64,
                    lo[1] + (hi[1] - lo[1]) * j as f64 / (n - 1) as f64,
                ];
                if self.contains(x) {
                    pts.push(x);
                }
            }
        }
        pts
    }
}

/// Whether `g < 0` on the closed observation set, by dense sampling.
pub fn check_fe(g: &ShapeFunction, e: &ObservationSet) -> bool {
    e.samples(101).iter().all(|&x| g.value(x) < 0.0)
}

/// Pointwise integrand `J(x, y)` of a distributed objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrand {
    Zero,
    /// `(y - y_d)^2`
    Tracking,
    /// `max(0, y - y_d)`
    Relu,
    /// `|y - y_d|`
    Abs,
    /// `y - y_d`
    Linear,
}

impl Integrand {
    pub fn value(self, y: f64, yd: f64) -> f64 {
        let e = y - yd;
        match self {
            Integrand::Zero => 0.0,
            Integrand::Tracking => e * e,
            Integrand::Relu => e.max(0.0),
            Integrand::Abs => e.abs(),
            Integrand::Linear => e,
        }
    }

    /// Directional derivative in `y` along `q`.
    pub fn dir(self, y: f64, yd: f64, q: f64) -> f64 {
        let e = y - yd;
        match self {
            Integrand::Zero => 0.0,
            Integrand::Tracking => 2.0 * e * q,
            Integrand::Relu if e > 0.0 => q,
            Integrand::Relu if e < 0.0 => 0.0,
            Integrand::Relu => q.max(0.0),
            Integrand::Abs if e == 0.0 => q.abs(),
            Integrand::Abs => e.signum() * q,
            Integrand::Linear => q,
        }
    }
}

#[derive(Debug, Clone)]
pub enum ObjectiveSpec {
    /// `1/2 |y - y_d|^2_{H^2(E)} + 1/2 sum_k (y - y_d)^2(x_k)`.
    TrackingH2 {
        y_d: ShapeFunction,
        e: ObservationSet,
        points: Vec<Point>,
    },
    /// `int_{g < 0} J(y) + psi`.
    Distributed {
        integrand: Integrand,
        y_d: ShapeFunction,
        psi: ShapeFunction,
    },
}

impl ObjectiveSpec {
    pub fn validate(&self, d: &HoldAll) -> Result<()> {
        if let ObjectiveSpec::TrackingH2 { e, points, .. } = self {
            e.validate(d)?;
            if points.iter().any(|&p| !e.contains(p)) {
                return Err(Error::ObservationSet);
            }
        }
        Ok(())
    }

    /// Whether the derivative formula needs `q`.
    pub fn needs_derivative(&self) -> bool {
        !matches!(
            self,
            ObjectiveSpec::Distributed {
                integrand: Integrand::Zero,
                ..
            }
        )
    }
}

/// Nodes of `E` whose 3x3 stencil lies in `E`; errors unless every node
/// within two cells of those lies inside the domain.
fn observation_nodes(y: &DiscreteField, e: &ObservationSet) -> Result<Vec<usize>> {
    let grid = y.grid();
    let n = grid.n;
    let mut out = Vec::new();
    for j in 1..n - 1 {
        for i in 1..n - 1 {
            if !(0..3).all(|b| (0..3).all(|a| e.contains(grid.node(i + a - 1, j + b - 1)))) {
                continue;
            }
            if i < 2 || j < 2 || i + 2 >= n || j + 2 >= n {
                return Err(Error::ObservationSet);
            }
            for b in 0..5 {
                for a in 0..5 {
                    if !y.mask.inside[grid.idx(i + a - 2, j + b - 2)] {
                        return Err(Error::ObservationSet);
                    }
                }
            }
            out.push(grid.idx(i, j));
        }
    }
    if out.is_empty() {
        return Err(Error::ObservationSet);
    }
    Ok(out)
}

/// Value, first and second central differences at node `k`.
fn jet_at(grid: &Grid, v: &[f64], k: usize) -> [f64; 6] {
    let (i, j) = grid.ij(k);
    let (hx, hy) = (grid.hx(), grid.hy());
    let at = |a: isize, b: isize| v[grid.idx((i as isize + a) as usize, (j as isize + b) as usize)];
    [
        at(0, 0),
        (at(1, 0) - at(-1, 0)) / (2.0 * hx),
        (at(0, 1) - at(0, -1)) / (2.0 * hy),
        (at(1, 0) - 2.0 * at(0, 0) + at(-1, 0)) / (hx * hx),
        (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4.0 * hx * hy),
        (at(0, 1) - 2.0 * at(0, 0) + at(0, -1)) / (hy * hy),
    ]
}

/// Discrete `H^2(E)` inner product; the mixed second difference counts twice.
pub fn h2_inner(grid: &Grid, nodes: &[usize], u: &[f64], v: &[f64]) -> f64 {
    let w = [1.0, 1.0, 1.0, 1.0, 2.0, 1.0];
    let cell = grid.hx() * grid.hy();
    nodes
        .iter()
        .map(|&k| {
            let (a, b) = (jet_at(grid, u, k), jet_at(grid, v, k));
            (0..6).map(|m| w[m] * a[m] * b[m]).sum::<f64>()
        })
        .sum::<f64>()
        * cell
}

/// Bilinear interpolation of nodal values.
pub fn bilinear(grid: &Grid, v: &[f64], x: Point) -> f64 {
    let (i, j, s, t) = grid.cell_of(x);
    let at = |a, b| v[grid.idx(i + a, j + b)];
    (1.0 - s) * (1.0 - t) * at(0, 0)
        + s * (1.0 - t) * at(1, 0)
        + (1.0 - s) * t * at(0, 1)
        + s * t * at(1, 1)
}

fn nodal(grid: &Grid, f: &ShapeFunction) -> Vec<f64> {
    (0..grid.len())
        .map(|k| {
            let (i, j) = grid.ij(k);
            f.value(grid.node(i, j))
        })
        .collect()
}

/// `j(g)` for the state `y` on `{g < 0}`.
pub fn objective_value(spec: &ObjectiveSpec, g: &ShapeFunction, y: &DiscreteField) -> Result<f64> {
    let grid = y.grid();
    match spec {
        ObjectiveSpec::TrackingH2 { y_d, e, points } => {
            let nodes = observation_nodes(y, e)?;
            let yd = nodal(grid, y_d);
            let diff: Vec<f64> = y.values.iter().zip(&yd).map(|(a, b)| a - b).collect();
            let obs: f64 = points
                .iter()
                .map(|&p| (bilinear(grid, &y.values, p) - y_d.value(p)).powi(2))
                .sum();
            Ok(0.5 * h2_inner(grid, &nodes, &diff, &diff) + 0.5 * obs)
        }
        ObjectiveSpec::Distributed {
            integrand,
            y_d,
            psi,
        } => Ok(integrate_inside(g, grid, &|x| {
            integrand.value(y.sample(x), y_d.value(x)) + psi.value(x)
        })),
    }
}

/// `j'(g; h)` split into its volume and boundary parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DirDeriv {
    pub value: f64,
    pub volume: f64,
    pub boundary: f64,
    pub components: usize,
}

pub fn dirderiv_tracking(
    spec: &ObjectiveSpec,
    y: &DiscreteField,
    q: &DiscreteField,
) -> Result<DirDeriv> {
    let ObjectiveSpec::TrackingH2 { y_d, e, points } = spec else {
        return Err(Error::InvalidArgument("not a tracking objective".into()));
    };
    let grid = y.grid();
    let nodes = observation_nodes(y, e)?;
    let yd = nodal(grid, y_d);
    let diff: Vec<f64> = y.values.iter().zip(&yd).map(|(a, b)| a - b).collect();
    let obs: f64 = points
        .iter()
        .map(|&p| (bilinear(grid, &y.values, p) - y_d.value(p)) * bilinear(grid, &q.values, p))
        .sum();
    let value = h2_inner(grid, &nodes, &diff, &q.values) + obs;
    Ok(DirDeriv {
        value,
        volume: value,
        boundary: 0.0,
        components: 0,
    })
}

/// Volume term `int J'(y; q)` plus `-sum_c int_0^T (J(0) + psi) h dt` over the
/// boundary components. `q = None` stands for `J = 0`.
pub fn dirderiv_distributed(
    spec: &ObjectiveSpec,
    g: &ShapeFunction,
    h: &ShapeFunction,
    y: &DiscreteField,
    q: Option<&DiscreteField>,
    curves: &[Curve],
) -> Result<DirDeriv> {
    let ObjectiveSpec::Distributed {
        integrand,
        y_d,
        psi,
    } = spec
    else {
        return Err(Error::InvalidArgument("not a distributed objective".into()));
    };
    let volume = match (integrand, q) {
        (Integrand::Zero, _) => 0.0,
        (_, Some(q)) => integrate_inside(g, y.grid(), &|x| {
            integrand.dir(y.sample(x), y_d.value(x), q.sample(x))
        }),
        (_, None) => return Err(Error::InvalidArgument("the volume term needs q".into())),
    };
    let boundary: f64 = curves
        .iter()
        .map(|c| {
            -curve_integral_with(
                c,
                &|x| (integrand.value(0.0, y_d.value(x)) + psi.value(x)) * h.value(x),
                Weight::Dt,
            )
        })
        .sum();
    Ok(DirDeriv {
        value: volume + boundary,
        volume,
        boundary,
        components: curves.len(),
    })
}

/// A labelled direction `h`.
#[derive(Debug, Clone)]
pub struct Direction {
    pub label: String,
    pub h: ShapeFunction,
}

impl Direction {
    pub fn scaled(&self, s: f64) -> Direction {
        Direction {
            label: self.label.clone(),
            h: self.h.scaled(s),
        }
    }
}

/// `count` seeded directions, each a product over components of a shifted,
/// axis-scaled ellipse level function vanishing at a random sample of that
/// component. The ellipses are small against the curve, so each `h` is
/// positive on most of `{g = 0}`.
pub fn direction_family(curves: &[Curve], count: usize, seed: u64) -> Vec<Direction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|k| {
            let mut factors = Vec::new();
            for c in curves {
                let p = c.z[rng.random_range(0..c.len())];
                let scale = c.length() / std::f64::consts::TAU;
                let dist = scale * rng.random_range(0.05..0.3);
                let ang = rng.random_range(0.0..std::f64::consts::TAU);
                let center = [p[0] + dist * ang.cos(), p[1] + dist * ang.sin()];
                let (a, b) = (rng.random_range(0.7..1.3), rng.random_range(0.7..1.3));
                let r2 = ((p[0] - center[0]) / a).powi(2) + ((p[1] - center[1]) / b).powi(2);
                factors.push(format!(
                    "(((x1 - ({:.17e})) / {a:.17e})^2 + ((x2 - ({:.17e})) / {b:.17e})^2 - {r2:.17e})",
                    center[0], center[1]
                ));
            }
            let text = factors.join(" * ");
            let h = ShapeFunction::parse_labeled(&format!("h{k}"), &text).expect("generated direction parses");
            Direction { label: format!("h{k}"), h }
        })
        .collect()
}

/// Inputs shared by every state and derivative solve of a check.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub f: ShapeFunction,
    pub beta: Nonlinearity,
    pub grid: Grid,
    pub solve: SolveOptions,
    pub trace: TraceOptions,
    pub search: ComponentSearch,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DirectionRow {
    pub label: String,
    pub qualifying: bool,
    pub j_prime: Option<f64>,
    pub violation: bool,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimalityReport {
    pub j: f64,
    pub tolerance: f64,
    pub rows: Vec<DirectionRow>,
    pub min_j_prime: f64,
    pub violations: Vec<String>,
    pub components: usize,
    pub warnings: Vec<String>,
}

impl OptimalityReport {
    pub fn write_csv<W: std::io::Write + ?Sized>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "label,qualifying,j_prime,violation")?;
        for r in &self.rows {
            let jp = r.j_prime.map_or(String::new(), |v| format!("{v:.16e}"));
            writeln!(
                out,
                "{},{},{jp},{}",
                r.label,
                u8::from(r.qualifying),
                u8::from(r.violation)
            )?;
        }
        Ok(())
    }
}

/// Default violation threshold `1e-4 (1 + |j|)`.
pub fn default_tolerance(j: f64) -> f64 {
    1e-4 * (1.0 + j.abs())
}

/// Evaluates `j'(g*; h)` over a direction family and flags `j' < -tol`.
pub fn optimality_check(
    g_star: &ShapeFunction,
    spec: &ObjectiveSpec,
    family: &[Direction],
    pipe: &Pipeline,
    tol: Option<f64>,
) -> Result<OptimalityReport> {
    spec.validate(&pipe.grid.d)?;
    let mask = Arc::new(classify(g_star, &pipe.grid)?);
    let (y, log) = solve_state(mask, &pipe.f, &pipe.beta, &pipe.solve)?;
    let j = objective_value(spec, g_star, &y)?;
    let tolerance = tol.unwrap_or_else(|| default_tolerance(j));
    let curves = tracer::trace_components(g_star, &pipe.grid.d, &pipe.search, &pipe.trace)?;
    let mut warnings = log.warnings;
    if curves.len() > 1 {
        warnings.push(format!(
            "{} boundary components; boundary terms summed per component",
            curves.len()
        ));
    }

    let rows: Vec<Result<DirectionRow>> = family
        .par_iter()
        .map(|dir| {
            if !dir.h.is_smooth() {
                return Ok(skipped(dir, "direction is not C^2".into()));
            }
            if let Err(e) = tracer::pick_initial_points(&dir.h, &curves) {
                return Ok(skipped(dir, e.to_string()));
            }
            let q = if spec.needs_derivative() {
                let fields =
                    boundary_velocity(g_star, &dir.h, &pipe.grid.d, &pipe.search, &pipe.trace)?;
                let bd = boundary_data(&y, &fields)?;
                Some(solve_derivative(&y, &pipe.beta, &bd, &pipe.solve)?.0)
            } else {
                None
            };
            let d = match spec {
                ObjectiveSpec::TrackingH2 { .. } => {
                    dirderiv_tracking(spec, &y, q.as_ref().unwrap())?
                }
                ObjectiveSpec::Distributed { .. } => {
                    dirderiv_distributed(spec, g_star, &dir.h, &y, q.as_ref(), &curves)?
                }
            };
            Ok(DirectionRow {
                label: dir.label.clone(),
                qualifying: true,
                j_prime: Some(d.value),
                violation: d.value < -tolerance,
                note: None,
            })
        })
        .collect();
    let rows: Vec<DirectionRow> = rows.into_iter().collect::<Result<_>>()?;
    for r in rows.iter().filter(|r| !r.qualifying) {
        warnings.push(format!(
            "dropped {}: {}",
            r.label,
            r.note.as_deref().unwrap_or("")
        ));
    }
    let qualifying: Vec<&DirectionRow> = rows.iter().filter(|r| r.qualifying).collect();
    if qualifying.is_empty() {
        return Err(Error::NoDirections);
    }
    let min_j_prime = qualifying
        .iter()
        .filter_map(|r| r.j_prime)
        .fold(f64::INFINITY, f64::min);
    let violations = qualifying
        .iter()
        .filter(|r| r.violation)
        .map(|r| r.label.clone())
        .collect();
    Ok(OptimalityReport {
        j,
        tolerance,
        rows,
        min_j_prime,
        violations,
        components: curves.len(),
        warnings,
    })
}

fn skipped(dir: &Direction, note: String) -> DirectionRow {
    DirectionRow {
        label: dir.label.clone(),
        qualifying: false,
        j_prime: None,
        violation: false,
        note: Some(note),
    }
}
