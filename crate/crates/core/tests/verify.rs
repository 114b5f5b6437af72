use std::f64::consts::PI;
use std::sync::Arc;

use fva_core::fdpde::{classify, solve_state, DiscreteField, Grid, Nonlinearity, SolveOptions};
use fva_core::linsens::boundary_velocity;
use fva_core::shapederiv::{boundary_data, solve_derivative};
use fva_core::shapefn::{HoldAll, ShapeFunction};
use fva_core::tracer::{ComponentSearch, TraceOptions};
use fva_core::verify::{
    boundary_sup, common_domain, integrate_regions, quotient, run_study, Quotient, StudyInput,
};

fn sf(s: &str) -> ShapeFunction {
    ShapeFunction::parse(s).unwrap()
}

fn grid(n: usize) -> Grid {
    Grid::new(HoldAll::square(2.0), n).unwrap()
}

/// Area of the intersection of two disks with radii `a`, `b` and centre distance `d`.
fn lens_area(a: f64, b: f64, d: f64) -> f64 {
    let alpha = ((d * d + a * a - b * b) / (2.0 * d * a)).acos();
    let beta = ((d * d + b * b - a * a) / (2.0 * d * b)).acos();
    a * a * (alpha - alpha.sin() * alpha.cos()) + b * b * (beta - beta.sin() * beta.cos())
}

#[test]
fn lens_area_of_shifted_circles() {
    // g + lambda h = (x1 - 5 lambda)^2 + x2^2 - 1 - 25 lambda^2.
    let (g, h, lambda) = (sf("x1^2 + x2^2 - 1"), sf("-10*x1"), 0.05);
    let gr = grid(129);
    let cd = common_domain(&g, &h, lambda, &gr).unwrap();
    assert!(!cd.gamma2.is_empty() && !cd.varying.is_empty());
    for p in &cd.gamma2 {
        assert!(g.value(*p).abs() < 1e-9);
    }
    let gl = g.perturbed(lambda, &h);
    let areas = integrate_regions(&g, &gl, &gr, &[], &|_| 0.0)[0];
    let exact = lens_area(1.0, (1.0f64 + 0.0625).sqrt(), 0.25);
    assert!(
        (areas.common - exact).abs() < 0.01 * exact,
        "{} vs {exact}",
        areas.common
    );
    let ring = PI * 0.0625;
    assert!(
        (areas.grown - areas.shrunk - ring).abs() < 0.01,
        "{areas:?}"
    );
}

#[test]
fn common_domain_trivial_cases() {
    let g = sf("x1^2 + x2^2 - 1");
    let gr = grid(65);
    let base = classify(&g, &gr).unwrap();
    let zero = common_domain(&g, &sf("(x1-0.25)^2 + x2^2 - 0.5625"), 0.0, &gr).unwrap();
    assert_eq!(zero.mask.inside, base.inside);
    assert!(zero.varying.is_empty());
    // h < 0 on the whole circle: the common domain is Omega_g.
    let grow = common_domain(&g, &sf("x1^2 + x2^2 - 4"), 0.1, &gr).unwrap();
    assert_eq!(grow.mask.inside, base.inside);
    assert!(grow.varying.is_empty());
}

#[test]
fn quotient_of_rescaled_level_function_vanishes() {
    let g = sf("x1^2 + x2^2 - 1");
    let q = quotient(
        &g,
        &g,
        0.1,
        &sf("5 - x1^2 - x2^2"),
        &Nonlinearity::Relu { c: 0.0 },
        &grid(65),
        &SolveOptions::default(),
    )
    .unwrap();
    assert!(q.values().iter().all(|v| v.abs() < 1e-10));
}

#[test]
fn quotient_is_minus_state_outside_perturbed_domain() {
    let (g, h) = (sf("x1^2 + x2^2 - 1"), sf("(x1-0.25)^2 + x2^2 - 0.5625"));
    let lambda = 0.1;
    let gr = grid(65);
    let q = quotient(
        &g,
        &h,
        lambda,
        &sf("5 - x1^2 - x2^2"),
        &Nonlinearity::Relu { c: 0.0 },
        &gr,
        &SolveOptions::default(),
    )
    .unwrap();
    let gl = g.perturbed(lambda, &h);
    let mut seen = 0;
    for k in 0..gr.len() {
        let (i, j) = gr.ij(k);
        let x = gr.node(i, j);
        if g.value(x) < 0.0 && gl.value(x) >= 0.0 {
            assert_eq!(q.node(k), -q.y.values[k] / lambda);
            seen += 1;
        }
    }
    assert!(seen > 0);
}

#[test]
fn injected_derivative_gives_zero_boundary_sup() {
    let (g, h) = (sf("x1^2 + x2^2 - 1"), sf("(x1-0.25)^2 + x2^2 - 0.5625"));
    let gr = grid(65);
    let mask = Arc::new(classify(&g, &gr).unwrap());
    let beta = Nonlinearity::Relu { c: 0.0 };
    let opts = SolveOptions::default();
    let (y, _) = solve_state(mask.clone(), &sf("5 - x1^2 - x2^2"), &beta, &opts).unwrap();
    let v = boundary_velocity(
        &g,
        &h,
        &gr.d,
        &ComponentSearch::default(),
        &TraceOptions::default(),
    )
    .unwrap();
    let (q, _) = solve_derivative(&y, &beta, &boundary_data(&y, &v).unwrap(), &opts).unwrap();
    let lambda = 0.05;
    let shifted = DiscreteField {
        mask: mask.clone(),
        values: y
            .values
            .iter()
            .zip(&q.values)
            .map(|(a, b)| a + lambda * b)
            .collect(),
        boundary: y
            .boundary
            .iter()
            .zip(&q.boundary)
            .map(|(a, b)| std::array::from_fn(|d| a[d] + lambda * b[d]))
            .collect(),
    };
    let ql = Quotient::new(y, shifted, lambda).unwrap();
    let cd = common_domain(&g, &h, 0.0, &gr).unwrap();
    assert!(boundary_sup(&ql, &q, &cd) < 1e-9);
}

fn disk_study(n: usize) -> StudyInput {
    StudyInput {
        g: sf("x1^2 + x2^2 - 1"),
        h: sf("(x1-0.25)^2 + x2^2 - 0.5625"),
        f: sf("5 - x1^2 - x2^2"),
        beta: Nonlinearity::Relu { c: 0.0 },
        grid: grid(n),
        lambdas: vec![0.16, 0.08, 0.04, 0.02, 0.01],
        r_list: vec![1.0, 2.0, 4.0],
        omega: sf("x1^2 + x2^2 - 0.25"),
        solve: SolveOptions::default(),
        trace: TraceOptions::default(),
        search: ComponentSearch::default(),
    }
}

#[test]
fn disk_study_properties() {
    let s = run_study(&disk_study(65)).unwrap();
    assert_eq!(s.rows.len(), 5);
    assert!(s.dropped.is_empty());
    let first = s.rows.first().unwrap();
    let last = s.rows.last().unwrap();
    assert!(last.m_lambda < first.m_lambda);
    // sup |q_lambda| stays bounded across the sweep.
    let sups: Vec<f64> = s.rows.iter().map(|r| r.sup_q_lambda).collect();
    assert!(sups.iter().all(|v| *v < 2.0), "{sups:?}");
    for row in &s.rows {
        for n in &row.norms {
            assert!(n.common >= 0.0 && n.total >= 0.0 && n.shrunk >= 0.0 && n.grown == 0.0);
            let sum = n.common.powf(n.r) + n.shrunk.powf(n.r) + n.grown.powf(n.r);
            assert!((n.total.powf(n.r) - sum).abs() <= 1e-12 * sum.max(1e-300));
        }
        // Interior domination: the common-domain error follows m_lambda down.
        assert!(row.norms[1].common <= 2.0 * row.m_lambda);
    }
    let mut csv = Vec::new();
    s.write_csv(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 6);
}

#[test]
fn study_slopes_are_grid_independent() {
    let a = run_study(&disk_study(65)).unwrap();
    let b = run_study(&disk_study(129)).unwrap();
    for (sa, sb) in a.slopes.iter().zip(&b.slopes) {
        for (x, y) in [
            (sa.common, sb.common),
            (sa.total, sb.total),
            (sa.shrunk, sb.shrunk),
        ] {
            let (x, y) = (x.unwrap(), y.unwrap());
            assert!((x - y).abs() < 0.15, "r = {}: {x} vs {y}", sa.r);
        }
    }
}

#[test]
fn non_decreasing_lambda_list_is_rejected() {
    let mut input = disk_study(33);
    input.lambdas = vec![0.1, 0.2];
    assert!(run_study(&input).is_err());
}
