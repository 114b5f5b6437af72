//! Tracing the components of `{g = 0}` as periodic trajectories of
//! `z' = (-d2 g(z), d1 g(z))`.

use std::io::{self, Write};

use crate::error::{Error, Result};
use crate::geom::{self, Point};
use crate::shapefn::{HoldAll, ShapeFunction};

/// The Hamiltonian vector field of `g` at `z`.
#[inline]
pub fn hamiltonian(g: &ShapeFunction, z: Point) -> Result<Point> {
    let j = g.eval2(z)?;
    Ok([-j.g[1], j.g[0]])
}

/// Newton iteration along `grad g` onto `{g = 0}`; converges to `|g| <= 1e-12`.
pub fn project(g: &ShapeFunction, x: Point) -> Result<Point> {
    const TOL: f64 = 1e-12;
    let start = x;
    let mut x = x;
    let mut v = g.value(x);
    for _ in 0..60 {
        if v.abs() <= TOL {
            return Ok(x);
        }
        let d = g.grad(x);
        let d2 = geom::dot(d, d);
        if !(d2 > 0.0) || !d2.is_finite() {
            break;
        }
        let step = v / d2;
        x = geom::axpy(x, -step, d);
        v = g.value(x);
        if (step * d2.sqrt()).abs() < 1e-15 * (1.0 + geom::norm(x)) && v.abs() <= 1e3 * TOL {
            return Ok(x);
        }
    }
    Err(Error::ProjectionFailed {
        start,
        residual: v.abs(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceOptions {
    /// Relative and absolute tolerance of the adaptive integrator.
    pub tol: f64,
    /// Arc length after which the search for the period gives up.
    pub max_arc: f64,
    /// Target arc spacing of the stored samples.
    pub sample_ds: f64,
    pub min_samples: usize,
    pub max_samples: usize,
    /// Largest tolerated `|g|` before reprojection.
    pub drift_tol: f64,
    /// Arc length of the first step; the exclusion ball is ten times this.
    pub initial_arc_step: f64,
}

impl Default for TraceOptions {
    fn default() -> Self {
        TraceOptions {
            tol: 1e-12,
            max_arc: 200.0,
            sample_ds: 5e-3,
            min_samples: 256,
            max_samples: 1 << 18,
            drift_tol: 1e-6,
            initial_arc_step: 1e-3,
        }
    }
}

const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_E: [f64; 7] = [
    35.0 / 384.0 - 5179.0 / 57600.0,
    0.0,
    500.0 / 1113.0 - 7571.0 / 16695.0,
    125.0 / 192.0 - 393.0 / 640.0,
    -2187.0 / 6784.0 + 92097.0 / 339200.0,
    11.0 / 84.0 - 187.0 / 2100.0,
    -1.0 / 40.0,
];

/// One Dormand-Prince step of an autonomous planar field. Returns the
/// fifth-order solution and the embedded error estimate.
pub(crate) fn dp_step<F>(f: &F, z: Point, h: f64) -> Result<(Point, Point)>
where
    F: Fn(Point) -> Result<Point>,
{
    let mut k = [[0.0; 2]; 7];
    k[0] = f(z)?;
    for s in 1..7 {
        let mut y = z;
        for (j, kj) in k.iter().enumerate().take(s) {
            y = geom::axpy(y, h * DP_A[s][j], *kj);
        }
        if s == 6 {
            k[6] = f(y)?;
            let mut err = [0.0; 2];
            for (j, kj) in k.iter().enumerate() {
                err = geom::axpy(err, h * DP_E[j], *kj);
            }
            return Ok((y, err));
        }
        k[s] = f(y)?;
    }
    unreachable!()
}

/// One traced component of `{g = 0}`, sampled uniformly in time.
#[derive(Debug, Clone)]
pub struct Curve {
    pub component_id: usize,
    pub period: f64,
    pub x0: Point,
    /// `z[i] = z(i * period / n)` for `i = 0..n`.
    pub z: Vec<Point>,
    /// `|z(T) - z(0)|` at the end of the sampling pass.
    pub closure_error: f64,
    g: ShapeFunction,
}

impl Curve {
    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.period / self.z.len() as f64
    }

    pub fn t(&self, i: usize) -> f64 {
        i as f64 * self.dt()
    }

    pub fn level_function(&self) -> &ShapeFunction {
        &self.g
    }

    /// Trajectory point at an arbitrary time (taken modulo the period).
    pub fn point_at(&self, t: f64) -> Result<Point> {
        let n = self.z.len();
        let dt = self.dt();
        let tm = t.rem_euclid(self.period);
        let k = ((tm / dt).round() as usize) % n;
        let mut tau = tm - k as f64 * dt;
        if tau > 0.5 * self.period {
            tau -= self.period;
        }
        if tau == 0.0 {
            return Ok(self.z[k]);
        }
        let f = |z: Point| hamiltonian(&self.g, z);
        let (y, _) = dp_step(&f, self.z[k], tau)?;
        project(&self.g, y)
    }

    /// `int_0^T |grad g(z(t))| dt` by the periodic trapezoidal rule.
    pub fn length(&self) -> f64 {
        self.z
            .iter()
            .map(|&z| geom::norm(self.g.grad(z)))
            .sum::<f64>()
            * self.dt()
    }

    /// Writes `t, z1, z2, |grad g|` rows preceded by header rows for `T` and `x0`.
    pub fn write_csv<W: Write + ?Sized>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "# component,{}", self.component_id)?;
        writeln!(out, "# T,{:.16e}", self.period)?;
        writeln!(out, "# x0,{:.16e},{:.16e}", self.x0[0], self.x0[1])?;
        writeln!(out, "t,z1,z2,grad_norm")?;
        for (i, z) in self.z.iter().enumerate() {
            writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e}",
                self.t(i),
                z[0],
                z[1],
                geom::norm(self.g.grad(*z))
            )?;
        }
        Ok(())
    }
}

/// Integrates the Hamiltonian system from `x0` until the first return and
/// samples one period uniformly in time.
pub fn trace(g: &ShapeFunction, x0: Point, opts: &TraceOptions) -> Result<Curve> {
    trace_component(g, x0, 0, opts)
}

pub fn trace_component(
    g: &ShapeFunction,
    x0: Point,
    component_id: usize,
    opts: &TraceOptions,
) -> Result<Curve> {
    let x0 = project(g, x0)?;
    let f = |z: Point| hamiltonian(g, z);
    let f0 = f(x0)?;
    let speed0 = geom::norm(f0);
    if !(speed0 > 0.0) {
        return Err(Error::ProjectionFailed {
            start: x0,
            residual: g.value(x0).abs(),
        });
    }
    let tau0 = geom::scale(1.0 / speed0, f0);
    let exclusion = 10.0 * opts.initial_arc_step;
    let accept = 1e-6_f64.max(1e3 * opts.tol);

    let mut z = x0;
    let mut t = 0.0;
    let mut h = opts.initial_arc_step / speed0;
    let mut arc = 0.0;
    let mut left_ball = false;
    let mut s_prev = 0.0;
    let period = loop {
        let speed = geom::norm(f(z)?);
        h = h.min(0.05 / speed.max(1e-300));
        let (y, e) = dp_step(&f, z, h)?;
        let scale = |a: f64| opts.tol * (1.0 + a.abs());
        let err = (e[0].abs() / scale(y[0])).max(e[1].abs() / scale(y[1]));
        if !err.is_finite() || err > 1.0 {
            h *= (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
            if h < 1e-14 * (1.0 + t) {
                return Err(Error::Drift {
                    drift: g.value(y).abs(),
                    tol: opts.drift_tol,
                });
            }
            continue;
        }
        let drift = g.value(y).abs();
        if drift > opts.drift_tol {
            return Err(Error::Drift {
                drift,
                tol: opts.drift_tol,
            });
        }
        let y = project(g, y)?;
        let s = geom::dot(geom::sub(y, x0), tau0);
        if left_ball && s_prev < 0.0 && s >= 0.0 {
            let fy = f(y)?;
            if geom::dot(fy, tau0) > 0.9 * geom::norm(fy) {
                let theta = crossing_time(&f, g, z, h, x0, tau0)?;
                let zc = project(g, dp_step(&f, z, theta)?.0)?;
                if geom::dist(zc, x0) <= accept {
                    break t + theta;
                }
            }
        }
        arc += geom::dist(y, z);
        if arc > opts.max_arc {
            return Err(Error::PeriodNotDetected {
                budget: opts.max_arc,
            });
        }
        if geom::dist(y, x0) > exclusion {
            left_ball = true;
        }
        s_prev = s;
        z = y;
        t += h;
        h *= (0.9 * err.max(1e-10).powf(-0.2)).min(5.0);
    };

    let length_est = arc + geom::dist(z, x0);
    let n =
        ((length_est / opts.sample_ds).ceil() as usize).clamp(opts.min_samples, opts.max_samples);
    let dt = period / n as f64;
    let substeps = ((dt * speed0 / opts.sample_ds).ceil() as usize).max(1);
    let mut samples = Vec::with_capacity(n);
    let mut z = x0;
    for _ in 0..n {
        samples.push(z);
        for _ in 0..substeps {
            z = project(g, dp_step(&f, z, dt / substeps as f64)?.0)?;
        }
    }
    Ok(Curve {
        component_id,
        period,
        x0,
        closure_error: geom::dist(z, x0),
        z: samples,
        g: g.clone(),
    })
}

/// Root of `s(theta) = (z(theta) - x0) . tau0` within a step of size `h`.
fn crossing_time<F>(
    f: &F,
    g: &ShapeFunction,
    z: Point,
    h: f64,
    x0: Point,
    tau0: Point,
) -> Result<f64>
where
    F: Fn(Point) -> Result<Point>,
{
    let s_at = |th: f64| -> Result<f64> {
        if th == 0.0 {
            return Ok(geom::dot(geom::sub(z, x0), tau0));
        }
        let y = project(g, dp_step(f, z, th)?.0)?;
        Ok(geom::dot(geom::sub(y, x0), tau0))
    };
    let (mut a, mut b) = (0.0, h);
    let (mut sa, mut sb) = (s_at(a)?, s_at(b)?);
    for _ in 0..200 {
        let m = if sb != sa {
            b - sb * (b - a) / (sb - sa)
        } else {
            0.5 * (a + b)
        };
        let m = if m <= a || m >= b { 0.5 * (a + b) } else { m };
        let sm = s_at(m)?;
        if sm == 0.0 || (b - a) < 1e-15 * (1.0 + h) {
            return Ok(m);
        }
        if sm < 0.0 {
            a = m;
            sa = sm;
        } else {
            b = m;
            sb = sm;
        }
        if sb.abs() < 1e-15 {
            return Ok(b);
        }
    }
    Ok(0.5 * (a + b))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComponentSearch {
    /// Grid nodes per axis used to look for sign changes.
    pub n: usize,
    pub max_components: usize,
}

impl Default for ComponentSearch {
    fn default() -> Self {
        ComponentSearch {
            n: 128,
            max_components: 16,
        }
    }
}

/// Locates and traces every component of `{g = 0}` met by a sign change
/// on the edges of an `n x n` grid over `d`.
pub fn trace_components(
    g: &ShapeFunction,
    d: &HoldAll,
    search: &ComponentSearch,
    opts: &TraceOptions,
) -> Result<Vec<Curve>> {
    if search.n < 2 {
        return Err(Error::InvalidArgument(
            "component search needs n >= 2".into(),
        ));
    }
    let n = search.n;
    let hx = d.width() / (n - 1) as f64;
    let hy = d.height() / (n - 1) as f64;
    let node = |i: usize, j: usize| [d.xmin + hx * i as f64, d.ymin + hy * j as f64];
    let vals: Vec<f64> = (0..n * n).map(|k| g.value(node(k % n, k / n))).collect();
    let near = 0.1 * hx.min(hy);
    let mut curves: Vec<Curve> = Vec::new();
    for j in 0..n {
        for i in 0..n {
            let a = vals[j * n + i];
            for (di, dj) in [(1, 0), (0, 1)] {
                let (i2, j2) = (i + di, j + dj);
                if i2 >= n || j2 >= n {
                    continue;
                }
                let b = vals[j2 * n + i2];
                if (a < 0.0) == (b < 0.0) {
                    continue;
                }
                let root = bisect_segment(g, node(i, j), node(i2, j2));
                let Ok(seed) = project(g, root) else { continue };
                if curves
                    .iter()
                    .any(|c| geom::dist_to_closed_polyline(seed, &c.z) <= near)
                {
                    continue;
                }
                if curves.len() == search.max_components {
                    return Err(Error::TooManyComponents {
                        max: search.max_components,
                    });
                }
                curves.push(trace_component(g, seed, curves.len(), opts)?);
            }
        }
    }
    Ok(curves)
}

/// One seed point per component of `{g = 0}`; empty when the grid sees no sign change.
pub fn find_components(
    g: &ShapeFunction,
    d: &HoldAll,
    search: &ComponentSearch,
    opts: &TraceOptions,
) -> Result<Vec<Point>> {
    Ok(trace_components(g, d, search, opts)?
        .into_iter()
        .map(|c| c.x0)
        .collect())
}

/// Bisection for a sign change of `g` on the segment `[a, b]`.
pub(crate) fn bisect_segment(g: &ShapeFunction, a: Point, b: Point) -> Point {
    let ga = g.value(a);
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let at = |s: f64| geom::axpy(a, s, geom::sub(b, a));
    for _ in 0..200 {
        let m = 0.5 * (lo + hi);
        let gm = g.value(at(m));
        if gm == 0.0 {
            return at(m);
        }
        if (gm < 0.0) == (ga < 0.0) {
            lo = m;
        } else {
            hi = m;
        }
        if hi - lo < 1e-17 {
            break;
        }
    }
    at(0.5 * (lo + hi))
}

/// Tolerance on `|h|` for accepting an initial point.
pub const INITIAL_POINT_TOL: f64 = 1e-10;

/// For each curve, a point where `h` vanishes: a transversal crossing if one
/// exists, otherwise a touching point.
pub fn pick_initial_points(h: &ShapeFunction, curves: &[Curve]) -> Result<Vec<(usize, Point)>> {
    curves
        .iter()
        .map(|c| Ok((c.component_id, initial_point(h, c)?)))
        .collect()
}

fn initial_point(h: &ShapeFunction, c: &Curve) -> Result<Point> {
    let n = c.len();
    let hv: Vec<f64> = c.z.iter().map(|&z| h.value(z)).collect();
    let tol = INITIAL_POINT_TOL;
    for i in 0..n {
        let (a, b) = (hv[i], hv[(i + 1) % n]);
        let prev = hv[(i + n - 1) % n];
        if a.abs() <= tol && prev.abs() > tol && b.abs() > tol && prev * b < 0.0 {
            return Ok(c.z[i]);
        }
        if a.abs() > tol && b.abs() > tol && a * b < 0.0 {
            return bisect_in_time(h, c, c.t(i), c.t(i) + c.dt(), a);
        }
    }
    if let Some(i) = hv.iter().position(|v| v.abs() <= tol) {
        return Ok(c.z[i]);
    }
    // Touching points: local minima of |h| refined through the zero of d/dt h(z(t)).
    let g = c.level_function();
    let dh = |t: f64| -> Result<f64> {
        let z = c.point_at(t)?;
        Ok(geom::dot(h.grad(z), hamiltonian(g, z)?))
    };
    let mut best: Option<(f64, Point)> = None;
    for i in 0..n {
        let (l, m, r) = (
            hv[(i + n - 1) % n].abs(),
            hv[i].abs(),
            hv[(i + 1) % n].abs(),
        );
        if !(m <= l && m <= r) {
            continue;
        }
        let (mut a, mut b) = (c.t(i) - c.dt(), c.t(i) + c.dt());
        let (mut da, db) = (dh(a)?, dh(b)?);
        if da * db > 0.0 {
            continue;
        }
        for _ in 0..100 {
            let mid = 0.5 * (a + b);
            let dm = dh(mid)?;
            if (dm < 0.0) == (da < 0.0) {
                a = mid;
                da = dm;
            } else {
                b = mid;
            }
            if b - a < 1e-15 * (1.0 + c.period) {
                break;
            }
        }
        let z = c.point_at(0.5 * (a + b))?;
        let v = h.value(z).abs();
        if v <= tol && best.is_none_or(|(bv, _)| v < bv) {
            best = Some((v, z));
        }
    }
    best.map(|(_, z)| z).ok_or(Error::NoIntersection {
        component: c.component_id,
    })
}

fn bisect_in_time(h: &ShapeFunction, c: &Curve, mut a: f64, mut b: f64, ha: f64) -> Result<Point> {
    let mut za = c.point_at(a)?;
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        let zm = c.point_at(m)?;
        let hm = h.value(zm);
        if hm == 0.0 {
            return Ok(zm);
        }
        if (hm < 0.0) == (ha < 0.0) {
            a = m;
            za = zm;
        } else {
            b = m;
        }
        if b - a < 1e-16 * (1.0 + c.period) {
            break;
        }
    }
    Ok(za)
}

/// Symmetric Hausdorff distance between the sample sets, with the inner
/// minimum taken over the closed polylines.
pub fn hausdorff(a: &Curve, b: &Curve) -> f64 {
    hausdorff_points(&a.z, &b.z)
}

pub fn hausdorff_points(a: &[Point], b: &[Point]) -> f64 {
    let one = |p: &[Point], q: &[Point]| {
        p.iter()
            .map(|&x| geom::dist_to_closed_polyline(x, q))
            .fold(0.0, f64::max)
    };
    one(a, b).max(one(b, a))
}

/// Hausdorff distance between two unions of curves.
pub fn hausdorff_sets(a: &[Curve], b: &[Curve]) -> f64 {
    let one = |p: &[Curve], q: &[Curve]| {
        p.iter()
            .flat_map(|c| c.z.iter())
            .map(|&x| {
                q.iter()
                    .map(|c| geom::dist_to_closed_polyline(x, &c.z))
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    };
    one(a, b).max(one(b, a))
}

/// Tolerance on `h` below which a sample counts as lying in the closed part.
pub const CLASSIFY_TOL: f64 = 1e-12;

/// Split of the sample indices of a curve by the sign of `h`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundaryPartition {
    /// Samples with `h > 0`: outside the closure of every perturbed domain.
    pub gamma1: Vec<usize>,
    /// Samples with `h <= 0`.
    pub gamma2: Vec<usize>,
}

pub fn classify_boundary(h: &ShapeFunction, curve: &Curve) -> BoundaryPartition {
    let (gamma2, gamma1) = (0..curve.len()).partition(|&i| h.value(curve.z[i]) <= CLASSIFY_TOL);
    BoundaryPartition { gamma1, gamma2 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sf(s: &str) -> ShapeFunction {
        ShapeFunction::parse_c2("g", s).unwrap()
    }

    #[test]
    fn circle_period_and_closure() {
        let c = trace(&sf("x1^2 + x2^2 - 1"), [1.0, 0.0], &TraceOptions::default()).unwrap();
        assert!((c.period - PI).abs() < 1e-8, "{}", c.period);
        assert!(c.closure_error < 1e-9);
        for (i, z) in c.z.iter().enumerate() {
            let t = c.t(i);
            assert!(geom::dist(*z, [(2.0 * t).cos(), (2.0 * t).sin()]) < 1e-9);
        }
        assert!((c.length() - 2.0 * PI).abs() < 1e-10);
    }

    #[test]
    fn projection_examples() {
        let g = sf("x1^2 + x2^2 - 1");
        let p = project(&g, [1.1, 0.0]).unwrap();
        assert!(geom::dist(p, [1.0, 0.0]) < 1e-12);
        assert_eq!(project(&g, [1.0, 0.0]).unwrap(), [1.0, 0.0]);
        assert!(matches!(
            project(&g, [0.0, 0.0]),
            Err(Error::ProjectionFailed { .. })
        ));
    }

    #[test]
    fn point_at_matches_closed_form() {
        let c = trace(&sf("x1^2 + x2^2 - 1"), [1.0, 0.0], &TraceOptions::default()).unwrap();
        for &t in &[0.1234, 1.0, 3.0, 4.5, -0.3] {
            let z = c.point_at(t).unwrap();
            assert!(geom::dist(z, [(2.0 * t).cos(), (2.0 * t).sin()]) < 1e-10);
        }
    }

    #[test]
    fn initial_point_cases() {
        let c = trace(&sf("x1^2 + x2^2 - 1"), [0.0, 1.0], &TraceOptions::default()).unwrap();
        let h = sf("(x1-0.25)^2 + x2^2 - 0.5625");
        let (_, x0) = pick_initial_points(&h, std::slice::from_ref(&c)).unwrap()[0];
        assert!(geom::dist(x0, [1.0, 0.0]) < 1e-5, "{x0:?}");
        assert!(h.value(x0).abs() <= INITIAL_POINT_TOL);
        let far = sf("x1^2 + x2^2 - 4");
        assert!(matches!(
            pick_initial_points(&far, std::slice::from_ref(&c)),
            Err(Error::NoIntersection { component: 0 })
        ));
        let same = sf("x1^2 + x2^2 - 1");
        let (_, x0) = pick_initial_points(&same, std::slice::from_ref(&c)).unwrap()[0];
        assert_eq!(x0, c.z[0]);
    }

    #[test]
    fn crossing_is_preferred() {
        let c = trace(&sf("x1^2 + x2^2 - 1"), [1.0, 0.0], &TraceOptions::default()).unwrap();
        let h = sf("x2 - 0.5");
        let (_, x0) = pick_initial_points(&h, std::slice::from_ref(&c)).unwrap()[0];
        assert!(h.value(x0).abs() < 1e-12);
        assert!((x0[0] - 0.75f64.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn classify_tangent_pair() {
        let c = trace(&sf("x1^2 + x2^2 - 1"), [1.0, 0.0], &TraceOptions::default()).unwrap();
        let p = classify_boundary(&sf("(x1-0.25)^2 + x2^2 - 0.5625"), &c);
        assert_eq!(p.gamma2, vec![0]);
        assert_eq!(p.gamma1.len(), c.len() - 1);
        let p = classify_boundary(&sf("x1^2 + x2^2 - 4"), &c);
        assert_eq!(p.gamma2.len(), c.len());
    }
}
