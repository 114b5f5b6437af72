//! The linearized Hamiltonian system along a traced curve and the boundary
//! velocity field `W(z(t)) = w(t)`.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geom::{self, Point};
use crate::shapefn::{check_admissible, HoldAll, ShapeFunction};
use crate::tracer::{self, ComponentSearch, Curve, TraceOptions};

/// Right-hand side of the linearized system at the curve point `z`.
#[inline]
pub fn linearized_rhs(g: &ShapeFunction, h: &ShapeFunction, z: Point, w: Point) -> Result<Point> {
    let gj = g.eval2(z)?;
    let hg = h.eval2(z)?.g;
    let [g11, g12, g22] = gj.h;
    Ok([
        -(g12 * w[0] + g22 * w[1]) - hg[1],
        (g11 * w[0] + g12 * w[1]) + hg[0],
    ])
}

/// Samples of `w` along one curve.
#[derive(Debug, Clone)]
pub struct VelocityField {
    pub curve: Curve,
    /// `w[i] = w(t_i)` for `i = 0..=n`; the last entry is `w(T)`.
    pub w: Vec<Point>,
}

/// Integrates the linearized system with classical RK4 on the sample grid of
/// `curve`, taking the half-step curve points from the trajectory itself.
pub fn solve_w(g: &ShapeFunction, h: &ShapeFunction, curve: &Curve) -> Result<VelocityField> {
    let n = curve.len();
    let dt = curve.dt();
    let mids: Vec<Point> = (0..n)
        .into_par_iter()
        .map(|i| curve.point_at(curve.t(i) + 0.5 * dt))
        .collect::<Result<_>>()?;
    let mut w = Vec::with_capacity(n + 1);
    let mut cur = [0.0, 0.0];
    w.push(cur);
    for i in 0..n {
        let (za, zm, zb) = (curve.z[i], mids[i], curve.z[(i + 1) % n]);
        let k1 = linearized_rhs(g, h, za, cur)?;
        let k2 = linearized_rhs(g, h, zm, geom::axpy(cur, 0.5 * dt, k1))?;
        let k3 = linearized_rhs(g, h, zm, geom::axpy(cur, 0.5 * dt, k2))?;
        let k4 = linearized_rhs(g, h, zb, geom::axpy(cur, dt, k3))?;
        for c in 0..2 {
            cur[c] += dt / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
        }
        w.push(cur);
    }
    Ok(VelocityField {
        curve: curve.clone(),
        w,
    })
}

/// Cross-check: integrates `(z, w)` jointly as a four-dimensional system
/// with `n` RK4 steps over one period starting at the curve's `x0`.
pub fn solve_w_coupled(
    g: &ShapeFunction,
    h: &ShapeFunction,
    curve: &Curve,
    n: usize,
) -> Result<Vec<Point>> {
    let dt = curve.period / n as f64;
    let rhs = |s: [f64; 4]| -> Result<[f64; 4]> {
        let z = [s[0], s[1]];
        let zp = tracer::hamiltonian(g, z)?;
        let wp = linearized_rhs(g, h, z, [s[2], s[3]])?;
        Ok([zp[0], zp[1], wp[0], wp[1]])
    };
    let add = |a: [f64; 4], s: f64, b: [f64; 4]| {
        [
            a[0] + s * b[0],
            a[1] + s * b[1],
            a[2] + s * b[2],
            a[3] + s * b[3],
        ]
    };
    let mut s = [curve.x0[0], curve.x0[1], 0.0, 0.0];
    let mut out = vec![[0.0, 0.0]];
    for _ in 0..n {
        let k1 = rhs(s)?;
        let k2 = rhs(add(s, 0.5 * dt, k1))?;
        let k3 = rhs(add(s, 0.5 * dt, k2))?;
        let k4 = rhs(add(s, dt, k3))?;
        for c in 0..4 {
            s[c] += dt / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
        }
        out.push([s[2], s[3]]);
    }
    Ok(out)
}

impl VelocityField {
    pub fn component_id(&self) -> usize {
        self.curve.component_id
    }

    /// `w(t)` for `t` in `[0, T]` by four-point interpolation of the samples.
    /// The stencil is never wrapped across `t = 0`, where `w` may jump.
    pub fn at_time(&self, t: f64) -> Point {
        let n = self.curve.len();
        let dt = self.curve.dt();
        let s = (t / dt).clamp(0.0, n as f64);
        let k = (s.floor() as usize).min(n - 1);
        let base = k.saturating_sub(1).min(n - 3);
        let wts = geom::cubic_weights(s - base as f64 - 1.0);
        let mut out = [0.0, 0.0];
        for (m, wt) in wts.iter().enumerate() {
            out = geom::axpy(out, *wt, self.w[base + m]);
        }
        out
    }

    /// Curve time of a point on (or very near) the curve, in `[0, T)`.
    pub fn time_of(&self, x: Point) -> Result<f64> {
        let c = &self.curve;
        let (i, _) =
            c.z.iter()
                .enumerate()
                .map(|(i, z)| (i, geom::dist(*z, x)))
                .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
        let g = c.level_function();
        let mut t = c.t(i);
        for _ in 0..3 {
            let z = c.point_at(t)?;
            let v = tracer::hamiltonian(g, z)?;
            t += geom::dot(geom::sub(x, z), v) / geom::dot(v, v);
        }
        let t = t.rem_euclid(c.period);
        // Points at the initial point itself take the value w(0).
        if t < 1e-12 * c.period || c.period - t < 1e-12 * c.period {
            return Ok(0.0);
        }
        Ok(t)
    }

    /// `W(x)` at a boundary point.
    pub fn at_point(&self, x: Point) -> Result<Point> {
        Ok(self.at_time(self.time_of(x)?))
    }

    pub fn residuals(&self, g: &ShapeFunction, h: &ShapeFunction) -> Vec<f64> {
        let n = self.curve.len();
        (0..=n)
            .map(|i| {
                let z = self.curve.z[i % n];
                (geom::dot(g.grad(z), self.w[i]) + h.value(z)).abs()
            })
            .collect()
    }

    /// Writes `t, z1, z2, w1, w2, residual` rows, including the closing row at `t = T`.
    pub fn write_csv<W: Write + ?Sized>(
        &self,
        g: &ShapeFunction,
        h: &ShapeFunction,
        out: &mut W,
    ) -> io::Result<()> {
        let n = self.curve.len();
        let res = self.residuals(g, h);
        writeln!(out, "# component,{}", self.component_id())?;
        writeln!(out, "# T,{:.16e}", self.curve.period)?;
        writeln!(out, "t,z1,z2,w1,w2,residual")?;
        for i in 0..=n {
            let z = self.curve.z[i % n];
            let t = if i == n {
                self.curve.period
            } else {
                self.curve.t(i)
            };
            writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                t, z[0], z[1], self.w[i][0], self.w[i][1], res[i]
            )?;
        }
        Ok(())
    }
}

/// `max |grad g . w + h|` over the samples of every field.
pub fn transversality_residual(
    g: &ShapeFunction,
    h: &ShapeFunction,
    fields: &[VelocityField],
) -> f64 {
    fields
        .iter()
        .flat_map(|v| v.residuals(g, h))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LipschitzReport {
    /// Largest `|W(x) - W(y)| / |x - y|` over sample pairs with `|x - y| <= delta_w`.
    pub l_w: f64,
    pub delta_w: f64,
    /// `max |w'(t)|` from the right-hand side.
    pub l_w_time: f64,
    /// `2 sqrt(2) l_w_time / min |grad g|`.
    pub bound: f64,
    /// `|w(T) - w(0)|`; pairs whose connecting arc crosses `t = 0` are excluded.
    pub seam_jump: f64,
}

/// Empirical Lipschitz constant of `W` on the samples of one curve. The
/// default radius is ten mean chord lengths.
pub fn lipschitz_estimate(
    g: &ShapeFunction,
    h: &ShapeFunction,
    v: &VelocityField,
    delta_w: Option<f64>,
) -> Result<LipschitzReport> {
    let c = &v.curve;
    let n = c.len();
    let mean_chord = (0..n)
        .map(|i| geom::dist(c.z[i], c.z[(i + 1) % n]))
        .sum::<f64>()
        / n as f64;
    let delta_w = delta_w.unwrap_or(10.0 * mean_chord);
    let l_w = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut best = 0.0_f64;
            for j in i + 1..n {
                if j - i > n / 2 {
                    break;
                }
                let d = geom::dist(c.z[i], c.z[j]);
                if d > 0.0 && d <= delta_w {
                    best = best.max(geom::dist(v.w[i], v.w[j]) / d);
                }
            }
            best
        })
        .reduce(|| 0.0, f64::max);
    let mut l_w_time = 0.0_f64;
    let mut min_grad = f64::INFINITY;
    for i in 0..=n {
        let z = c.z[i % n];
        l_w_time = l_w_time.max(geom::norm(linearized_rhs(g, h, z, v.w[i])?));
        min_grad = min_grad.min(geom::norm(g.grad(z)));
    }
    Ok(LipschitzReport {
        l_w,
        delta_w,
        l_w_time,
        bound: 2.0 * std::f64::consts::SQRT_2 * l_w_time / min_grad,
        seam_jump: geom::dist(v.w[n], v.w[0]),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlowRow {
    pub lambda: f64,
    /// `max |(g + lambda h)(z + lambda w)|`.
    pub residual: f64,
    /// `max dist(z + lambda w, {g + lambda h = 0})`; infinite when a projection fails.
    pub distance: f64,
}

/// Residual of the first-order flow step for a single `lambda`, with `w`
/// supplied explicitly so that a zero field can serve as a control.
pub fn flow_residual(
    g: &ShapeFunction,
    h: &ShapeFunction,
    z: &[Point],
    w: &[Point],
    lambda: f64,
) -> Result<FlowRow> {
    let gl = g.perturbed(lambda, h);
    let mut residual = 0.0_f64;
    let mut distance = 0.0_f64;
    for (zi, wi) in z.iter().zip(w) {
        let p = geom::axpy(*zi, lambda, *wi);
        residual = residual.max(gl.value(p).abs());
        if lambda != 0.0 {
            // Large steps can leave the basin of the projection; report no distance then.
            distance =
                distance.max(tracer::project(&gl, p).map_or(f64::INFINITY, |x| geom::dist(x, p)));
        }
    }
    Ok(FlowRow {
        lambda,
        residual,
        distance,
    })
}

/// Flow-step residuals over a list of `lambda`, after checking that each
/// perturbed function is admissible on `d`.
pub fn flow_consistency(
    g: &ShapeFunction,
    h: &ShapeFunction,
    fields: &[VelocityField],
    lambdas: &[f64],
    d: &HoldAll,
) -> Result<Vec<FlowRow>> {
    lambdas
        .par_iter()
        .map(|&lambda| {
            check_admissible(&g.perturbed(lambda, h), d, 64)?.into_result()?;
            let mut row = FlowRow {
                lambda,
                residual: 0.0,
                distance: 0.0,
            };
            for v in fields {
                let n = v.curve.len();
                let r = flow_residual(g, h, &v.curve.z, &v.w[..n], lambda)?;
                row.residual = row.residual.max(r.residual);
                row.distance = row.distance.max(r.distance);
            }
            Ok(row)
        })
        .collect()
}

/// `max_i |(z_lambda(t_i) - z(t_i)) / lambda - w(t_i)|` with `z_lambda`
/// traced for `g + lambda h` from the same initial point.
pub fn quotient_error(
    g: &ShapeFunction,
    h: &ShapeFunction,
    v: &VelocityField,
    lambda: f64,
    opts: &TraceOptions,
) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    let gl = g.perturbed(lambda, h);
    let cl = tracer::trace(&gl, v.curve.x0, opts)?;
    let n = v.curve.len();
    (0..=n)
        .into_par_iter()
        .map(|i| {
            let t = if i == n { v.curve.period } else { v.curve.t(i) };
            let zl = cl.point_at(t)?;
            let q = geom::scale(1.0 / lambda, geom::sub(zl, v.curve.z[i % n]));
            Ok(geom::dist(q, v.w[i]))
        })
        .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))
}

/// Traces every component of `{g = 0}`, restarts each from a zero of `h`
/// and solves for `w` along it.
pub fn boundary_velocity(
    g: &ShapeFunction,
    h: &ShapeFunction,
    d: &HoldAll,
    search: &ComponentSearch,
    opts: &TraceOptions,
) -> Result<Vec<VelocityField>> {
    let curves = tracer::trace_components(g, d, search, opts)?;
    let starts = tracer::pick_initial_points(h, &curves)?;
    starts
        .into_par_iter()
        .map(|(id, x0)| {
            let c = tracer::trace_component(g, x0, id, opts)?;
            solve_w(g, h, &c)
        })
        .collect()
}

/// Radius of the admissible neighbourhood for local optimality:
/// `R / (T exp(2 T L))`, with `T` the largest period and `L` the largest
/// Hessian row norm of `g` on an `n x n` sample of `d`.
pub fn local_opt_radius(
    g: &ShapeFunction,
    curves: &[Curve],
    r: f64,
    d: &HoldAll,
    n: usize,
) -> Result<f64> {
    if curves.is_empty() {
        return Err(Error::InvalidArgument("no curves".into()));
    }
    let t = curves.iter().map(|c| c.period).fold(0.0, f64::max);
    let mut l = 0.0_f64;
    for j in 0..n {
        for i in 0..n {
            let x = [
                d.xmin + d.width() * i as f64 / (n - 1) as f64,
                d.ymin + d.height() * j as f64 / (n - 1) as f64,
            ];
            let [h11, h12, h22] = g.eval2(x)?.h;
            l = l.max(h11.hypot(h12)).max(h12.hypot(h22));
        }
    }
    Ok(r / (t * (2.0 * t * l).exp()))
}
