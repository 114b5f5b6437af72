use std::sync::Arc;

use serde::Serialize;

use super::sparse::{bicgstab, Ilu0};
use super::{DiscreteField, DomainMask, KinkSlope, Nonlinearity, Operator};
use crate::error::{Error, Result};
use crate::shapefn::ShapeFunction;

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    /// Stop when `|F|_inf <= rtol * |rhs|_inf` on the scaled system.
    pub rtol: f64,
    pub linear_rtol: f64,
    pub max_linear: usize,
    pub max_newton: usize,
    pub max_picard: usize,
    pub kink_slope: KinkSlope,
    /// Starting iterate on the unknowns; zero when absent.
    pub initial: Option<Vec<f64>>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            rtol: 1e-10,
            linear_rtol: 1e-13,
            max_linear: 20_000,
            max_newton: 60,
            max_picard: 5_000,
            kink_slope: KinkSlope::Right,
            initial: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveLog {
    /// `"newton"` or `"picard"`.
    pub method: String,
    pub newton_iterations: usize,
    pub picard_iterations: usize,
    pub linear_iterations: usize,
    /// `|F|_inf` of the scaled system after each iteration.
    pub history: Vec<f64>,
    pub residual: f64,
    /// `|-Laplace_h u + beta(u) - f|_inf` without row scaling.
    pub unscaled_residual: f64,
    pub kink_slope: KinkSlope,
    pub warnings: Vec<String>,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Solves `A u + m(u) = b` where `A` is the Shortley-Weller operator, `b`
/// the unscaled right-hand side and `m` acts nodewise: `map(unknown, u)`
/// returns the value and a generalized slope of the nodal map, and
/// `lipschitz(bound)` bounds that slope for `|u| <= bound`.
pub fn solve_semilinear(
    op: &Operator,
    b: &[f64],
    map: &(dyn Fn(usize, f64) -> (f64, f64) + Sync),
    lipschitz: &dyn Fn(f64) -> f64,
    opts: &SolveOptions,
) -> Result<(Vec<f64>, SolveLog)> {
    let m = op.len();
    let s = &op.scale;
    let sb: Vec<f64> = (0..m).map(|i| s[i] * b[i]).collect();
    let m0: Vec<f64> = (0..m).map(|i| s[i] * map(i, 0.0).0).collect();
    let reference = inf_norm(&sb).max(inf_norm(&m0));
    let tol = opts.rtol * reference;
    let residual = |u: &[f64]| -> Vec<f64> {
        let mut r = op.a.mul(u);
        for i in 0..m {
            r[i] += s[i] * (map(i, u[i]).0 - b[i]);
        }
        r
    };
    let mut log = SolveLog {
        method: "newton".into(),
        newton_iterations: 0,
        picard_iterations: 0,
        linear_iterations: 0,
        history: Vec::new(),
        residual: 0.0,
        unscaled_residual: 0.0,
        kink_slope: opts.kink_slope,
        warnings: Vec::new(),
    };
    let mut u = match &opts.initial {
        Some(u0) if u0.len() == m => u0.clone(),
        Some(_) => {
            return Err(Error::InvalidArgument(
                "initial iterate has the wrong length".into(),
            ))
        }
        None => vec![0.0; m],
    };
    let mut f = residual(&u);
    let mut fn_inf = inf_norm(&f);
    log.history.push(fn_inf);

    let finish = |u: Vec<f64>, f: &[f64], mut log: SolveLog| {
        log.residual = inf_norm(f);
        log.unscaled_residual = f
            .iter()
            .zip(s)
            .fold(0.0, |a, (r, si)| a.max((r / si).abs()));
        Ok((u, log))
    };
    if fn_inf <= tol {
        return finish(u, &f, log);
    }

    // Semismooth Newton with backtracking on |F|_2.
    let mut newton_ok = true;
    while log.newton_iterations < opts.max_newton {
        let slopes: Vec<f64> = (0..m).map(|i| s[i] * map(i, u[i]).1).collect();
        let jac = op.a.with_added_diagonal(&slopes);
        let pre = Ilu0::new(&jac);
        let rhs: Vec<f64> = f.iter().map(|v| -v).collect();
        let mut du = vec![0.0; m];
        match bicgstab(&jac, &rhs, &mut du, &pre, opts.linear_rtol, opts.max_linear) {
            Ok(it) => log.linear_iterations += it,
            Err(e) => {
                log.warnings
                    .push(format!("Newton linear solve failed: {e}"));
                newton_ok = false;
                break;
            }
        }
        log.newton_iterations += 1;
        let f2 = l2(&f);
        let mut step = 1.0;
        let accepted = loop {
            let trial: Vec<f64> = u.iter().zip(&du).map(|(a, d)| a + step * d).collect();
            let ft = residual(&trial);
            if l2(&ft) <= (1.0 - 1e-4 * step) * f2 || inf_norm(&ft) <= tol {
                break Some((trial, ft));
            }
            step *= 0.5;
            if step < 1e-6 {
                break None;
            }
        };
        let Some((un, fnew)) = accepted else {
            log.warnings.push("Newton line search stalled".into());
            newton_ok = false;
            break;
        };
        u = un;
        f = fnew;
        fn_inf = inf_norm(&f);
        log.history.push(fn_inf);
        if fn_inf <= tol {
            return finish(u, &f, log);
        }
    }
    if newton_ok {
        log.warnings
            .push(format!("Newton reached {} iterations", opts.max_newton));
    }

    // Picard fallback: (A + sigma) u_new = b - m(u) + sigma u.
    log.method = "picard".into();
    let bound = 2.0 * inf_norm(&u) + 1.0;
    let sigma = lipschitz(bound).max(0.0);
    let shifted =
        op.a.with_added_diagonal(&s.iter().map(|si| si * sigma).collect::<Vec<_>>());
    let pre = Ilu0::new(&shifted);
    while log.picard_iterations < opts.max_picard {
        let rhs: Vec<f64> = (0..m)
            .map(|i| s[i] * (b[i] - map(i, u[i]).0 + sigma * u[i]))
            .collect();
        let mut un = u.clone();
        log.linear_iterations += bicgstab(
            &shifted,
            &rhs,
            &mut un,
            &pre,
            opts.linear_rtol,
            opts.max_linear,
        )?;
        log.picard_iterations += 1;
        u = un;
        f = residual(&u);
        fn_inf = inf_norm(&f);
        log.history.push(fn_inf);
        if fn_inf <= tol {
            return finish(u, &f, log);
        }
        let h = &log.history;
        if h.len() > 20 && fn_inf >= 0.999 * h[h.len() - 11] {
            break;
        }
    }
    Err(Error::NonConvergence {
        what: "semilinear solve (Newton and Picard)".into(),
        history: log.history,
    })
}

/// Solves the state equation with zero Dirichlet data on the domain of `mask`.
pub fn solve_state(
    mask: Arc<DomainMask>,
    f: &ShapeFunction,
    beta: &Nonlinearity,
    opts: &SolveOptions,
) -> Result<(DiscreteField, SolveLog)> {
    beta.validate()?;
    let op = Operator::new(mask.clone());
    let grid = mask.grid;
    let fv: Vec<f64> = mask
        .nodes
        .iter()
        .map(|&k| {
            let (i, j) = grid.ij(k);
            f.value(grid.node(i, j))
        })
        .collect();
    if fv.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "f is not finite on the domain".into(),
        ));
    }
    let boundary = vec![[0.0; 4]; op.len()];
    let b = op.rhs(&fv, &boundary);
    let side = opts.kink_slope;
    let map = |_: usize, y: f64| (beta.eval(y), beta.slope(y, side));
    let lip = |m: f64| beta.lipschitz_on(m);
    let (u, mut log) = solve_semilinear(&op, &b, &map, &lip, opts)?;
    log.warnings.extend(mask.warnings.iter().cloned());
    Ok((DiscreteField::from_unknowns(mask, &u, boundary), log))
}
