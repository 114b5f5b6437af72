//! Difference quotients `q_lambda = (y_{g + lambda h} - y_g) / lambda` of the
//! zero-extended states, compared with the derivative `q`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fdpde::{
    classify, solve_state, DiscreteField, DomainMask, Grid, Leg, Nonlinearity, SolveOptions,
};
use crate::geom::{self, Point};
use crate::linsens::boundary_velocity;
use crate::shapederiv::{boundary_data, solve_derivative};
use crate::shapefn::{check_admissible, ShapeFunction};
use crate::tracer::{self, ComponentSearch, TraceOptions};

/// `Omega_g ∩ Omega_{g + lambda h}` on a grid with its boundary intercepts.
#[derive(Debug, Clone)]
pub struct CommonDomain {
    pub lambda: f64,
    /// Mask of `max(g, g + lambda h) < 0`.
    pub mask: Arc<DomainMask>,
    /// Intercepts on `{g = 0}`.
    pub gamma2: Vec<Point>,
    /// Intercepts on `{g + lambda h = 0}` inside `Omega_g`.
    pub varying: Vec<Point>,
}

impl CommonDomain {
    pub fn boundary(&self) -> impl Iterator<Item = &Point> {
        self.gamma2.iter().chain(&self.varying)
    }
}

pub fn common_domain(
    g: &ShapeFunction,
    h: &ShapeFunction,
    lambda: f64,
    grid: &Grid,
) -> Result<CommonDomain> {
    let gl = g.perturbed(lambda, h);
    let both = if lambda == 0.0 {
        g.clone()
    } else {
        g.max_with(&gl)
    };
    let mask = Arc::new(classify(&both, grid)?);
    let (mut gamma2, mut varying) = (Vec::new(), Vec::new());
    for legs in &mask.legs {
        for leg in legs {
            if let Leg::Cut { point, .. } = leg {
                if lambda == 0.0 || g.value(*point) >= gl.value(*point) {
                    gamma2.push(*point);
                } else {
                    varying.push(*point);
                }
            }
        }
    }
    Ok(CommonDomain {
        lambda,
        mask,
        gamma2,
        varying,
    })
}

/// Difference quotient of two zero-extended states.
#[derive(Debug, Clone)]
pub struct Quotient {
    pub lambda: f64,
    pub y: DiscreteField,
    pub y_lambda: DiscreteField,
}

impl Quotient {
    pub fn new(y: DiscreteField, y_lambda: DiscreteField, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) || y.mask.grid != y_lambda.mask.grid {
            return Err(Error::InvalidArgument(
                "quotient needs lambda > 0 and a common grid".into(),
            ));
        }
        Ok(Quotient {
            lambda,
            y,
            y_lambda,
        })
    }

    pub fn node(&self, k: usize) -> f64 {
        (self.y_lambda.values[k] - self.y.values[k]) / self.lambda
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.y.values.len()).map(|k| self.node(k)).collect()
    }

    pub fn sample(&self, x: Point) -> f64 {
        (self.y_lambda.sample(x) - self.y.sample(x)) / self.lambda
    }

    /// Quotient at a point of the closure of either domain.
    pub fn sample_closure(&self, x: Point) -> f64 {
        (self.y_lambda.sample_closure(x) - self.y.sample_closure(x)) / self.lambda
    }
}

/// Solves both states and forms the quotient.
#[allow(clippy::too_many_arguments)]
pub fn quotient(
    g: &ShapeFunction,
    h: &ShapeFunction,
    lambda: f64,
    f: &ShapeFunction,
    beta: &Nonlinearity,
    grid: &Grid,
    opts: &SolveOptions,
) -> Result<Quotient> {
    let solve = |g: &ShapeFunction| -> Result<DiscreteField> {
        let mask = Arc::new(classify(g, grid)?);
        Ok(solve_state(mask, f, beta, opts)?.0)
    };
    Quotient::new(solve(g)?, solve(&g.perturbed(lambda, h))?, lambda)
}

/// `m_lambda = sup |q_lambda - q|` over the boundary intercepts of the common domain.
pub fn boundary_sup(ql: &Quotient, q: &DiscreteField, cd: &CommonDomain) -> f64 {
    cd.boundary()
        .map(|&x| (ql.sample_closure(x) - q.sample_closure(x)).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    /// `Omega_g ∩ Omega_{g + lambda h}`.
    Common,
    /// `Omega_g \ Omega_{g + lambda h}`.
    Shrunk,
    /// `Omega_{g + lambda h} \ Omega_g`.
    Grown,
}

/// Integrals over the regions of the hold-all box cut out by two level functions.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct RegionIntegrals {
    pub common: f64,
    pub shrunk: f64,
    pub grown: f64,
}

impl RegionIntegrals {
    pub fn total(&self) -> f64 {
        self.common + self.shrunk + self.grown
    }

    fn add(&mut self, r: Region, v: f64) {
        match r {
            Region::Common => self.common += v,
            Region::Shrunk => self.shrunk += v,
            Region::Grown => self.grown += v,
        }
    }

    fn merge(mut self, o: RegionIntegrals) -> Self {
        self.common += o.common;
        self.shrunk += o.shrunk;
        self.grown += o.grown;
        self
    }
}

/// Sub-cell resolution used on cells near either boundary.
pub const CUT_CELL_SUBDIVISION: usize = 16;

/// Visits the quadrature points of the cells in grid row `j` with their
/// region and weight. Cells away from both boundaries use 2x2 Gauss points.
/// Cells within 1.5 diagonals of either boundary are split into `s x s`
/// subcells, each weighted by the exact area where the piecewise linear
/// interpolants of `g` and `gl` are negative and evaluated at its centre.
pub fn visit_cell_row(
    g: &ShapeFunction,
    gl: &ShapeFunction,
    grid: &Grid,
    j: usize,
    visit: &mut dyn FnMut(Region, Point, f64),
) {
    let (hx, hy) = (grid.hx(), grid.hy());
    let diag = hx.hypot(hy);
    let region = |x: Point| -> Option<Region> {
        match (g.value(x) < 0.0, gl.value(x) < 0.0) {
            (true, true) => Some(Region::Common),
            (true, false) => Some(Region::Shrunk),
            (false, true) => Some(Region::Grown),
            (false, false) => None,
        }
    };
    let far = |f: &ShapeFunction, x: Point| -> bool {
        let v = f.value(x);
        let gr = geom::norm(f.grad(x));
        v.abs() > 1.5 * diag * gr.max(1e-300) || (gr == 0.0 && v != 0.0)
    };
    let gauss = [0.5 - 0.5 / 3f64.sqrt(), 0.5 + 0.5 / 3f64.sqrt()];
    let s = CUT_CELL_SUBDIVISION;
    for i in 0..grid.n - 1 {
        let x0 = grid.node(i, j);
        let corners = [
            x0,
            [x0[0] + hx, x0[1]],
            [x0[0], x0[1] + hy],
            [x0[0] + hx, x0[1] + hy],
        ];
        let c = [x0[0] + 0.5 * hx, x0[1] + 0.5 * hy];
        let regs = corners.map(region);
        let uniform = regs.iter().all(|r| *r == regs[0]) && far(g, c) && far(gl, c);
        if uniform {
            let Some(r) = regs[0] else { continue };
            for a in gauss {
                for b in gauss {
                    visit(r, [x0[0] + a * hx, x0[1] + b * hy], 0.25 * hx * hy);
                }
            }
        } else {
            // Subcell corner values, then exact areas of the linear interpolants.
            let (sx, sy) = (hx / s as f64, hy / s as f64);
            let corner = |a: usize, b: usize| [x0[0] + a as f64 * sx, x0[1] + b as f64 * sy];
            let mut gv = vec![[0.0; 2]; (s + 1) * (s + 1)];
            for b in 0..=s {
                for a in 0..=s {
                    let p = corner(a, b);
                    gv[b * (s + 1) + a] = [g.value(p), gl.value(p)];
                }
            }
            // A strip only receives area in cells where some lattice point lies in it.
            let shrunk_here = gv.iter().any(|v| v[0] < 0.0 && v[1] >= 0.0);
            let grown_here = gv.iter().any(|v| v[0] >= 0.0 && v[1] < 0.0);
            let w = sx * sy;
            for b in 0..s {
                for a in 0..s {
                    let v = |k: usize| {
                        [
                            gv[b * (s + 1) + a][k],
                            gv[b * (s + 1) + a + 1][k],
                            gv[(b + 1) * (s + 1) + a + 1][k],
                            gv[(b + 1) * (s + 1) + a][k],
                        ]
                    };
                    let (fg, fl) = (square_fraction(v(0)), square_fraction(v(1)));
                    let x = [x0[0] + (a as f64 + 0.5) * sx, x0[1] + (b as f64 + 0.5) * sy];
                    // Maximal overlap: exact when the two regions are nested in the subcell.
                    let common = fg.min(fl);
                    let shrunk = if shrunk_here { fg - common } else { 0.0 };
                    let grown = if grown_here { fl - common } else { 0.0 };
                    let centre = region(x);
                    for (r, frac) in [
                        (Region::Common, common),
                        (Region::Shrunk, shrunk),
                        (Region::Grown, grown),
                    ] {
                        if frac > 0.0 {
                            // Evaluate at a point of the region: the centre, else a lattice corner.
                            let at = if centre == Some(r) {
                                x
                            } else {
                                [(a, b), (a + 1, b), (a + 1, b + 1), (a, b + 1)]
                                    .into_iter()
                                    .find(|&(ca, cb)| {
                                        lattice_region(gv[cb * (s + 1) + ca]) == Some(r)
                                    })
                                    .map_or(x, |(ca, cb)| corner(ca, cb))
                            };
                            visit(r, at, w * frac);
                        }
                    }
                }
            }
        }
    }
}

fn lattice_region(v: [f64; 2]) -> Option<Region> {
    match (v[0] < 0.0, v[1] < 0.0) {
        (true, true) => Some(Region::Common),
        (true, false) => Some(Region::Shrunk),
        (false, true) => Some(Region::Grown),
        (false, false) => None,
    }
}

/// Fraction of a triangle where the linear interpolant of the vertex values is negative.
fn triangle_fraction(v: [f64; 3]) -> f64 {
    let neg = v.iter().filter(|x| **x < 0.0).count();
    match neg {
        0 => 0.0,
        3 => 1.0,
        1 => {
            let i = v.iter().position(|x| *x < 0.0).unwrap();
            let (a, b, c) = (v[i], v[(i + 1) % 3], v[(i + 2) % 3]);
            a * a / ((a - b) * (a - c))
        }
        _ => {
            let i = v.iter().position(|x| *x >= 0.0).unwrap();
            let (p, b, c) = (v[i], v[(i + 1) % 3], v[(i + 2) % 3]);
            1.0 - p * p / ((p - b) * (p - c))
        }
    }
}

/// Fraction of a square (corners counter-clockwise) where the piecewise
/// linear interpolant on two triangles is negative.
fn square_fraction(c: [f64; 4]) -> f64 {
    0.5 * (triangle_fraction([c[0], c[1], c[2]]) + triangle_fraction([c[0], c[2], c[3]]))
}

/// Cell quadrature of `|phi|^r` for each `r` in `powers` and of the constant
/// 1 (the areas, last entry), split by region.
pub fn integrate_regions(
    g: &ShapeFunction,
    gl: &ShapeFunction,
    grid: &Grid,
    powers: &[f64],
    phi: &(dyn Fn(Point) -> f64 + Sync),
) -> Vec<RegionIntegrals> {
    let k = powers.len() + 1;
    (0..grid.n - 1)
        .into_par_iter()
        .map(|j| {
            let mut acc = vec![RegionIntegrals::default(); k];
            visit_cell_row(g, gl, grid, j, &mut |r, x, w| {
                let v = phi(x).abs();
                for (m, p) in powers.iter().enumerate() {
                    acc[m].add(r, w * v.powf(*p));
                }
                acc[k - 1].add(r, w);
            });
            acc
        })
        .collect::<Vec<_>>()
        .into_iter()
        // Sequential merge keeps the sums bitwise reproducible.
        .fold(vec![RegionIntegrals::default(); k], |a, b| {
            a.into_iter().zip(b).map(|(x, y)| x.merge(y)).collect()
        })
}

/// Signed cell quadrature of `phi` over `{g < 0}`.
pub fn integrate_inside(
    g: &ShapeFunction,
    grid: &Grid,
    phi: &(dyn Fn(Point) -> f64 + Sync),
) -> f64 {
    let rows: Vec<f64> = (0..grid.n - 1)
        .into_par_iter()
        .map(|j| {
            let mut acc = 0.0;
            visit_cell_row(g, g, grid, j, &mut |_, x, w| acc += w * phi(x));
            acc
        })
        .collect();
    rows.iter().sum()
}

/// `L^r` norms of `q_lambda - q` on the common domain, the whole box and the two strips.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormRow {
    pub r: f64,
    pub common: f64,
    pub total: f64,
    pub shrunk: f64,
    pub grown: f64,
}

/// Discrete `H^2` norm and seminorm of a nodal field on the nodes of `omega`
/// whose 5x5 neighbourhood lies in `omega`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct H2Norm {
    pub norm: f64,
    pub seminorm: f64,
    pub nodes: usize,
}

/// Discrete `H^2(omega)` norm of nodal values: value, central first
/// differences and second differences (mixed term counted twice).
pub fn discrete_h2(
    grid: &Grid,
    values: &[f64],
    omega: &ShapeFunction,
    admissible: &[&[bool]],
) -> Result<H2Norm> {
    let n = grid.n;
    let (hx, hy) = (grid.hx(), grid.hy());
    let in_omega: Vec<bool> = (0..grid.len())
        .map(|k| {
            let (i, j) = grid.ij(k);
            omega.value(grid.node(i, j)) < 0.0
        })
        .collect();
    for (k, &inside) in in_omega.iter().enumerate() {
        if inside && admissible.iter().any(|m| !m[k]) {
            let (i, j) = grid.ij(k);
            return Err(Error::InvalidArgument(format!(
                "omega is not compactly contained in the domains (node {:?})",
                grid.node(i, j)
            )));
        }
    }
    let (mut norm2, mut semi2, mut count) = (0.0, 0.0, 0);
    for j in 2..n - 2 {
        for i in 2..n - 2 {
            let interior = (0..5).all(|b| (0..5).all(|a| in_omega[grid.idx(i + a - 2, j + b - 2)]));
            if !interior {
                continue;
            }
            let v = |a: isize, b: isize| {
                values[grid.idx((i as isize + a) as usize, (j as isize + b) as usize)]
            };
            let dx = (v(1, 0) - v(-1, 0)) / (2.0 * hx);
            let dy = (v(0, 1) - v(0, -1)) / (2.0 * hy);
            let dxx = (v(1, 0) - 2.0 * v(0, 0) + v(-1, 0)) / (hx * hx);
            let dyy = (v(0, 1) - 2.0 * v(0, 0) + v(0, -1)) / (hy * hy);
            let dxy = (v(1, 1) - v(1, -1) - v(-1, 1) + v(-1, -1)) / (4.0 * hx * hy);
            let second = dxx * dxx + 2.0 * dxy * dxy + dyy * dyy;
            semi2 += second * hx * hy;
            norm2 += (v(0, 0).powi(2) + dx * dx + dy * dy + second) * hx * hy;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::InvalidArgument(
            "omega contains no interior nodes".into(),
        ));
    }
    Ok(H2Norm {
        norm: norm2.sqrt(),
        seminorm: semi2.sqrt(),
        nodes: count,
    })
}

/// Least-squares slope of `log(error)` against `log(lambda)`.
pub fn estimate_order(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.len() < 2 {
        return Err(Error::InvalidArgument("need at least two pairs".into()));
    }
    if pairs.iter().any(|(l, e)| !(*l > 0.0) || !(*e > 0.0)) {
        return Err(Error::InvalidArgument(
            "orders need positive lambdas and errors".into(),
        ));
    }
    let m = pairs.len() as f64;
    let xs: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
    let (xm, ym) = (xs.iter().sum::<f64>() / m, ys.iter().sum::<f64>() / m);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - xm).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("lambdas must differ".into()));
    }
    Ok(sxy / sxx)
}

/// Everything a difference-quotient study needs.
#[derive(Debug, Clone)]
pub struct StudyInput {
    pub g: ShapeFunction,
    pub h: ShapeFunction,
    pub f: ShapeFunction,
    pub beta: Nonlinearity,
    pub grid: Grid,
    /// Strictly decreasing positive step sizes.
    pub lambdas: Vec<f64>,
    pub r_list: Vec<f64>,
    /// Level function of the compact subset for the `H^2` comparison.
    pub omega: ShapeFunction,
    pub solve: SolveOptions,
    pub trace: TraceOptions,
    pub search: ComponentSearch,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyRow {
    pub lambda: f64,
    pub m_lambda: f64,
    pub norms: Vec<NormRow>,
    pub areas: RegionIntegrals,
    pub h2: H2Norm,
    pub sup_q_lambda: f64,
    pub max_y_lambda: f64,
    pub max_grad_y_lambda: f64,
    pub newton_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Slopes {
    pub r: f64,
    pub common: Option<f64>,
    pub total: Option<f64>,
    pub shrunk: Option<f64>,
    pub grown: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuotientStudy {
    pub rows: Vec<StudyRow>,
    pub slopes: Vec<Slopes>,
    pub m_slope: Option<f64>,
    pub h2_slope: Option<f64>,
    pub dropped: Vec<(f64, String)>,
    pub warnings: Vec<String>,
    pub max_q: f64,
    pub h2_nodes: usize,
}

/// Drops a `lambda` when `g + lambda h` is not admissible or its boundary
/// does not have one component near each component of `{g = 0}`.
fn validate_lambda(input: &StudyInput, curves: &[tracer::Curve], lambda: f64) -> Result<()> {
    let gl = input.g.perturbed(lambda, &input.h);
    check_admissible(&gl, &input.grid.d, 64)?.into_result()?;
    let cl = tracer::trace_components(&gl, &input.grid.d, &input.search, &input.trace)?;
    if cl.len() != curves.len() {
        return Err(Error::NotAdmissible(format!(
            "{} boundary components instead of {}",
            cl.len(),
            curves.len()
        )));
    }
    let mut eps = f64::INFINITY;
    for (a, ca) in curves.iter().enumerate() {
        for cb in &curves[a + 1..] {
            let d =
                ca.z.iter()
                    .map(|&x| geom::dist_to_closed_polyline(x, &cb.z))
                    .fold(f64::INFINITY, f64::min);
            eps = eps.min(0.5 * d);
        }
    }
    for c in &cl {
        let near = curves
            .iter()
            .filter(|c0| tracer::hausdorff(c, c0) < eps)
            .count();
        if eps.is_finite() && near != 1 {
            return Err(Error::NotAdmissible(format!(
                "perturbed boundary component {} is not unique",
                c.component_id
            )));
        }
    }
    Ok(())
}

/// Runs the full study: state, derivative, and one quotient per `lambda`.
pub fn run_study(input: &StudyInput) -> Result<QuotientStudy> {
    if input.lambdas.windows(2).any(|w| !(w[0] > w[1])) || input.lambdas.iter().any(|l| !(*l > 0.0))
    {
        return Err(Error::InvalidArgument(
            "lambda list must be strictly decreasing and positive".into(),
        ));
    }
    let mask = Arc::new(classify(&input.g, &input.grid)?);
    let (y, ylog) = solve_state(mask.clone(), &input.f, &input.beta, &input.solve)?;
    let fields = boundary_velocity(
        &input.g,
        &input.h,
        &input.grid.d,
        &input.search,
        &input.trace,
    )?;
    let bd = boundary_data(&y, &fields)?;
    let (q, _) = solve_derivative(&y, &input.beta, &bd, &input.solve)?;
    let curves: Vec<tracer::Curve> = fields.iter().map(|v| v.curve.clone()).collect();
    let mut warnings = ylog.warnings.clone();
    if curves.len() > 1 {
        warnings.push(format!("{} boundary components", curves.len()));
    }

    let results: Vec<(f64, Result<StudyRow>)> = input
        .lambdas
        .par_iter()
        .map(|&lambda| {
            let row = validate_lambda(input, &curves, lambda)
                .and_then(|_| study_row(input, &y, &q, lambda));
            (lambda, row)
        })
        .collect();
    let mut rows = Vec::new();
    let mut dropped = Vec::new();
    for (lambda, r) in results {
        match r {
            Ok(row) => rows.push(row),
            Err(e @ (Error::NotAdmissible(_) | Error::TooManyComponents { .. })) => {
                warnings.push(format!("dropped lambda = {lambda}: {e}"));
                dropped.push((lambda, e.to_string()));
            }
            Err(e) => return Err(e),
        }
    }
    let slope_of = |pick: &dyn Fn(&StudyRow) -> f64| -> Option<f64> {
        let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.lambda, pick(r))).collect();
        estimate_order(&pairs).ok()
    };
    let slopes = input
        .r_list
        .iter()
        .enumerate()
        .map(|(m, &r)| Slopes {
            r,
            common: slope_of(&|row| row.norms[m].common),
            total: slope_of(&|row| row.norms[m].total),
            shrunk: slope_of(&|row| row.norms[m].shrunk),
            grown: slope_of(&|row| row.norms[m].grown),
        })
        .collect();
    let h2_nodes = rows.first().map_or(0, |r| r.h2.nodes);
    Ok(QuotientStudy {
        m_slope: slope_of(&|r| r.m_lambda),
        h2_slope: slope_of(&|r| r.h2.norm),
        slopes,
        rows,
        dropped,
        warnings,
        max_q: q.max_abs(),
        h2_nodes,
    })
}

/// How a study is judged: decay rates, or decay alone (non-smooth data,
/// where convergence holds without a rate).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    #[default]
    Rate,
    Monotone,
}

/// One acceptance check; `pass = None` marks a vacuous check (empty strip).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Gate {
    pub name: String,
    pub value: Option<f64>,
    pub threshold: f64,
    pub pass: Option<bool>,
}

impl Gate {
    fn new(name: &str, value: Option<f64>, threshold: f64, pass: Option<bool>) -> Self {
        Gate {
            name: name.into(),
            value,
            threshold,
            pass,
        }
    }

    pub fn failed(&self) -> bool {
        self.pass == Some(false)
    }
}

pub const MIN_SLOPE: f64 = 0.9;
pub const MIN_M_REDUCTION: f64 = 10.0;

/// Whether `values` decreases from first to last with at most `noise` increasing steps.
pub fn decays(values: &[f64], noise: usize) -> bool {
    let ups = values.windows(2).filter(|w| w[1] > w[0]).count();
    values.len() >= 2 && ups <= noise && values[values.len() - 1] < values[0]
}

/// Acceptance checks of a study. Strip checks are vacuous when the strip has
/// zero area for every `lambda`.
pub fn gates(study: &QuotientStudy, mode: GateMode) -> Vec<Gate> {
    let col =
        |pick: &dyn Fn(&StudyRow) -> f64| -> Vec<f64> { study.rows.iter().map(pick).collect() };
    let r_index = |r: f64| {
        study
            .rows
            .first()
            .and_then(|row| row.norms.iter().position(|n| n.r == r))
    };
    let mut out = Vec::new();
    let slope = |i: usize, pick: &dyn Fn(&Slopes) -> Option<f64>| pick(&study.slopes[i]);
    let empty_shrunk = study.rows.iter().all(|r| r.areas.shrunk == 0.0);
    let empty_grown = study.rows.iter().all(|r| r.areas.grown == 0.0);
    match (r_index(2.0), r_index(1.0)) {
        (Some(i2), Some(i1)) => {
            let l2 = col(&|r| r.norms[i2].total);
            let s_in = col(&|r| r.norms[i1].shrunk);
            let s_out = col(&|r| r.norms[i1].grown);
            match mode {
                GateMode::Rate => {
                    let check = |v: Option<f64>| Some(v.is_some_and(|v| v >= MIN_SLOPE));
                    let l2s = slope(i2, &|s| s.total);
                    out.push(Gate::new("l2_total_slope", l2s, MIN_SLOPE, check(l2s)));
                    let a = slope(i1, &|s| s.shrunk);
                    out.push(Gate::new(
                        "l1_shrunk_strip_slope",
                        a,
                        MIN_SLOPE,
                        if empty_shrunk { None } else { check(a) },
                    ));
                    let b = slope(i1, &|s| s.grown);
                    out.push(Gate::new(
                        "l1_grown_strip_slope",
                        b,
                        MIN_SLOPE,
                        if empty_grown { None } else { check(b) },
                    ));
                }
                GateMode::Monotone => {
                    out.push(Gate::new(
                        "l2_total_decay",
                        slope(i2, &|s| s.total),
                        0.0,
                        Some(decays(&l2, 1)),
                    ));
                    out.push(Gate::new(
                        "l1_shrunk_strip_decay",
                        slope(i1, &|s| s.shrunk),
                        0.0,
                        if empty_shrunk {
                            None
                        } else {
                            Some(decays(&s_in, 1))
                        },
                    ));
                    out.push(Gate::new(
                        "l1_grown_strip_decay",
                        slope(i1, &|s| s.grown),
                        0.0,
                        if empty_grown {
                            None
                        } else {
                            Some(decays(&s_out, 1))
                        },
                    ));
                }
            }
        }
        _ => out.push(Gate::new("r_list_contains_1_and_2", None, 0.0, Some(false))),
    }
    let m = col(&|r| r.m_lambda);
    match mode {
        GateMode::Rate => {
            let ratio = match (m.first(), m.last()) {
                (Some(a), Some(b)) if *b > 0.0 => Some(a / b),
                _ => None,
            };
            out.push(Gate::new(
                "m_lambda_reduction",
                ratio,
                MIN_M_REDUCTION,
                Some(ratio.is_some_and(|r| r >= MIN_M_REDUCTION)),
            ));
        }
        GateMode::Monotone => out.push(Gate::new(
            "m_lambda_decay",
            study.m_slope,
            0.0,
            Some(decays(&m, 1)),
        )),
    }
    out.push(Gate::new(
        "h2_decay",
        study.h2_slope,
        0.0,
        Some(decays(&col(&|r| r.h2.norm), 1)),
    ));
    out
}

impl QuotientStudy {
    /// One row per `lambda`: `m_lambda`, the four norms per `r`, the `H^2` norms and areas.
    pub fn write_csv<W: std::io::Write + ?Sized>(&self, out: &mut W) -> std::io::Result<()> {
        write!(out, "lambda,m_lambda")?;
        if let Some(row) = self.rows.first() {
            for n in &row.norms {
                write!(out, ",common_l{0},total_l{0},shrunk_l{0},grown_l{0}", n.r)?;
            }
        }
        writeln!(
            out,
            ",h2_norm,h2_seminorm,area_common,area_shrunk,area_grown,sup_q_lambda"
        )?;
        for row in &self.rows {
            write!(out, "{:.16e},{:.16e}", row.lambda, row.m_lambda)?;
            for n in &row.norms {
                write!(
                    out,
                    ",{:.16e},{:.16e},{:.16e},{:.16e}",
                    n.common, n.total, n.shrunk, n.grown
                )?;
            }
            writeln!(
                out,
                ",{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                row.h2.norm,
                row.h2.seminorm,
                row.areas.common,
                row.areas.shrunk,
                row.areas.grown,
                row.sup_q_lambda
            )?;
        }
        Ok(())
    }
}

fn study_row(
    input: &StudyInput,
    y: &DiscreteField,
    q: &DiscreteField,
    lambda: f64,
) -> Result<StudyRow> {
    let gl = input.g.perturbed(lambda, &input.h);
    let mask_l = Arc::new(classify(&gl, &input.grid)?);
    let (y_l, log) = solve_state(mask_l.clone(), &input.f, &input.beta, &input.solve)?;
    let ql = Quotient::new(y.clone(), y_l, lambda)?;
    let cd = common_domain(&input.g, &input.h, lambda, &input.grid)?;
    let m_lambda = boundary_sup(&ql, q, &cd);
    let err = |x: Point| ql.sample(x) - q.sample(x);
    let ints = integrate_regions(&input.g, &gl, &input.grid, &input.r_list, &err);
    let norms = input
        .r_list
        .iter()
        .enumerate()
        .map(|(m, &r)| NormRow {
            r,
            common: ints[m].common.powf(1.0 / r),
            total: ints[m].total().powf(1.0 / r),
            shrunk: ints[m].shrunk.powf(1.0 / r),
            grown: ints[m].grown.powf(1.0 / r),
        })
        .collect();
    let e: Vec<f64> = (0..input.grid.len())
        .map(|k| ql.node(k) - q.values[k])
        .collect();
    let h2 = discrete_h2(
        &input.grid,
        &e,
        &input.omega,
        &[&y.mask.inside, &mask_l.inside],
    )?;
    let grid = &input.grid;
    let mut max_grad: f64 = 0.0;
    for k in 0..grid.len() {
        let (i, j) = grid.ij(k);
        if i + 1 < grid.n && j + 1 < grid.n {
            let v = ql.y_lambda.values[k];
            let gx = (ql.y_lambda.values[grid.idx(i + 1, j)] - v) / grid.hx();
            let gy = (ql.y_lambda.values[grid.idx(i, j + 1)] - v) / grid.hy();
            max_grad = max_grad.max(gx.hypot(gy));
        }
    }
    Ok(StudyRow {
        lambda,
        m_lambda,
        norms,
        areas: ints[input.r_list.len()],
        h2,
        sup_q_lambda: ql.values().iter().fold(0.0, |a, v| a.max(v.abs())),
        max_y_lambda: ql.y_lambda.max_abs(),
        max_grad_y_lambda: max_grad,
        newton_iterations: log.newton_iterations,
    })
}
