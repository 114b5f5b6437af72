use std::sync::Arc;

use fva_core::fdpde::{classify, solve_state, Grid, Nonlinearity, SolveOptions};
use fva_core::shapefn::{HoldAll, ShapeFunction};

fn sf(s: &str) -> ShapeFunction {
    ShapeFunction::parse(s).unwrap()
}

fn max_error(n: usize, f: &str, exact: &dyn Fn(f64, f64) -> f64) -> f64 {
    let g = sf("x1^2 + x2^2 - 1");
    let grid = Grid::new(HoldAll::square(2.0), n).unwrap();
    let mask = Arc::new(classify(&g, &grid).unwrap());
    let (y, log) = solve_state(
        mask.clone(),
        &sf(f),
        &Nonlinearity::Relu { c: 0.0 },
        &SolveOptions::default(),
    )
    .unwrap();
    assert!(log.residual <= 1e-10 * 10.0);
    mask.nodes
        .iter()
        .map(|&k| {
            let (i, j) = grid.ij(k);
            let p = grid.node(i, j);
            (y.values[k] - exact(p[0], p[1])).abs()
        })
        .fold(0.0, f64::max)
}

#[test]
fn quadratic_state_is_reproduced() {
    let e = max_error(33, "4 + 1 - x1^2 - x2^2", &|x, y| 1.0 - x * x - y * y);
    assert!(e < 1e-10, "{e}");
}

#[test]
fn second_order_on_smooth_manufactured_state() {
    let exact = |x: f64, y: f64| (1.0 - x * x - y * y) * x.exp();
    let errs: Vec<f64> = [33, 65, 129]
        .iter()
        .map(|&n| max_error(n, "4*(1 + x1)*exp(x1)", &exact))
        .collect();
    let o1 = (errs[0] / errs[1]).log2();
    let o2 = (errs[1] / errs[2]).log2();
    eprintln!("{errs:?} {o1} {o2}");
    assert!(o1 > 1.7 && o2 > 1.7);
}
