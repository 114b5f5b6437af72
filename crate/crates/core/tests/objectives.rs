use std::f64::consts::PI;
use std::sync::Arc;

use fva_core::fdpde::{classify, solve_state, DiscreteField, Grid, Nonlinearity, SolveOptions};
use fva_core::linsens::boundary_velocity;
use fva_core::objectives::{
    curve_integral, curve_integral_with, dirderiv_distributed, dirderiv_tracking, direction_family,
    objective_value, optimality_check, Direction, Integrand, ObjectiveSpec, ObservationSet,
    Pipeline, Weight,
};
use fva_core::shapederiv::{boundary_data, solve_derivative};
use fva_core::shapefn::{HoldAll, ShapeFunction};
use fva_core::tracer::{trace, trace_components, ComponentSearch, TraceOptions};
use fva_core::Error;

fn sf(s: &str) -> ShapeFunction {
    ShapeFunction::parse(s).unwrap()
}

const G: &str = "x1^2 + x2^2 - 1";
const H: &str = "(x1-0.25)^2 + x2^2 - 0.5625";

fn pipeline(n: usize) -> Pipeline {
    Pipeline {
        f: sf("5 - x1^2 - x2^2"),
        beta: Nonlinearity::Relu { c: 0.0 },
        grid: Grid::new(HoldAll::square(2.0), n).unwrap(),
        solve: SolveOptions::default(),
        trace: TraceOptions::default(),
        search: ComponentSearch::default(),
    }
}

fn state(g: &ShapeFunction, p: &Pipeline) -> DiscreteField {
    let mask = Arc::new(classify(g, &p.grid).unwrap());
    solve_state(mask, &p.f, &p.beta, &p.solve).unwrap().0
}

fn derivative(
    g: &ShapeFunction,
    h: &ShapeFunction,
    y: &DiscreteField,
    p: &Pipeline,
) -> DiscreteField {
    let v = boundary_velocity(g, h, &p.grid.d, &p.search, &p.trace).unwrap();
    solve_derivative(y, &p.beta, &boundary_data(y, &v).unwrap(), &p.solve)
        .unwrap()
        .0
}

#[test]
fn curve_integrals_on_the_unit_circle() {
    let g = sf(G);
    let c = trace(&g, [1.0, 0.0], &TraceOptions::default()).unwrap();
    assert!(
        (curve_integral(&c, &ShapeFunction::constant(1.0), Weight::Dxi) - 2.0 * PI).abs() < 1e-8
    );
    assert!((curve_integral(&c, &sf(H), Weight::Dt) - PI / 2.0).abs() < 1e-8);
    assert_eq!(
        curve_integral(&c, &ShapeFunction::constant(0.0), Weight::Dxi),
        0.0
    );
    let (phi, h) = (sf("x1 + 2*x2^2"), sf(H));
    let lhs = curve_integral_with(
        &c,
        &|x| phi.value(x) * h.value(x) / g.grad(x)[0].hypot(g.grad(x)[1]),
        Weight::Dxi,
    );
    let rhs = curve_integral_with(&c, &|x| phi.value(x) * h.value(x), Weight::Dt);
    assert!((lhs - rhs).abs() < 1e-8);
}

#[test]
fn distributed_values() {
    let p = pipeline(129);
    let g = sf(G);
    let y = state(&g, &p);
    let area = ObjectiveSpec::Distributed {
        integrand: Integrand::Zero,
        y_d: ShapeFunction::constant(0.0),
        psi: ShapeFunction::constant(1.0),
    };
    assert!((objective_value(&area, &g, &y).unwrap() - PI).abs() < 0.01 * PI);
    let mass = ObjectiveSpec::Distributed {
        integrand: Integrand::Linear,
        y_d: ShapeFunction::constant(0.0),
        psi: ShapeFunction::constant(0.0),
    };
    assert!((objective_value(&mass, &g, &y).unwrap() - PI / 2.0).abs() < 1e-3);
}

/// Area of the disk `{g + lambda h < 0}` for the circle pair.
fn perturbed_area(lambda: f64) -> f64 {
    let c = 0.25;
    let k = 1.0 + lambda;
    let center = lambda * c / k;
    PI * ((1.0 - lambda * (c * c - 0.5625)) / k + center * center)
}

#[test]
fn area_derivative_two_routes() {
    let p = pipeline(65);
    let (g, h) = (sf(G), sf(H));
    let y = state(&g, &p);
    let curves = trace_components(&g, &p.grid.d, &p.search, &p.trace).unwrap();
    let spec = ObjectiveSpec::Distributed {
        integrand: Integrand::Zero,
        y_d: ShapeFunction::constant(0.0),
        psi: ShapeFunction::constant(1.0),
    };
    let d = dirderiv_distributed(&spec, &g, &h, &y, None, &curves).unwrap();
    let t = 1e-5;
    let analytic = (perturbed_area(t) - perturbed_area(-t)) / (2.0 * t);
    assert!((d.value + PI / 2.0).abs() < 1e-3, "{}", d.value);
    assert!((analytic + 0.5 * PI).abs() < 1e-3, "{analytic}");
    assert!((d.value - analytic).abs() < 1e-3);
}

#[test]
fn zero_data_gives_zero_distributed_derivative() {
    let p = pipeline(65);
    let (g, h) = (sf(G), sf(H));
    let y = state(&g, &p);
    let q = DiscreteField::zeros(y.mask.clone());
    let curves = trace_components(&g, &p.grid.d, &p.search, &p.trace).unwrap();
    let spec = ObjectiveSpec::Distributed {
        integrand: Integrand::Linear,
        y_d: ShapeFunction::constant(0.0),
        psi: ShapeFunction::constant(0.0),
    };
    assert_eq!(
        dirderiv_distributed(&spec, &g, &h, &y, Some(&q), &curves)
            .unwrap()
            .value,
        0.0
    );
}

#[test]
fn mass_derivative_matches_finite_difference() {
    let p = pipeline(129);
    let (g, h) = (sf(G), sf(H));
    let y = state(&g, &p);
    let q = derivative(&g, &h, &y, &p);
    let curves = trace_components(&g, &p.grid.d, &p.search, &p.trace).unwrap();
    let spec = ObjectiveSpec::Distributed {
        integrand: Integrand::Linear,
        y_d: ShapeFunction::constant(0.0),
        psi: ShapeFunction::constant(0.0),
    };
    let d = dirderiv_distributed(&spec, &g, &h, &y, Some(&q), &curves).unwrap();
    let lambda = 1e-3;
    let gl = g.perturbed(lambda, &h);
    let fd = (objective_value(&spec, &gl, &state(&gl, &p)).unwrap()
        - objective_value(&spec, &g, &y).unwrap())
        / lambda;
    assert!((d.value - fd).abs() < 5e-3, "{} vs {fd}", d.value);
}

fn tracking(y_d: &str) -> ObjectiveSpec {
    ObjectiveSpec::TrackingH2 {
        y_d: sf(y_d),
        e: ObservationSet::Disk {
            center: [0.0, 0.0],
            radius: 0.3,
        },
        points: vec![[0.0, 0.0]],
    }
}

#[test]
fn tracking_vanishes_on_exact_data() {
    let p = pipeline(65);
    let (g, h) = (sf(G), sf(H));
    let y = state(&g, &p);
    // The discrete state reproduces 1 - r^2 exactly.
    let spec = tracking("1 - x1^2 - x2^2");
    assert!(objective_value(&spec, &g, &y).unwrap().abs() < 1e-18);
    let q = derivative(&g, &h, &y, &p);
    assert!(dirderiv_tracking(&spec, &y, &q).unwrap().value.abs() < 1e-9);
    let zero = DiscreteField::zeros(y.mask.clone());
    assert_eq!(
        dirderiv_tracking(&tracking("0"), &y, &zero).unwrap().value,
        0.0
    );
}

#[test]
fn tracking_derivative_matches_finite_difference() {
    let p = pipeline(129);
    let (g, h) = (sf(G), sf(H));
    let y = state(&g, &p);
    let q = derivative(&g, &h, &y, &p);
    let spec = tracking("0");
    let d = dirderiv_tracking(&spec, &y, &q).unwrap().value;
    let lambda = 1e-3;
    let gl = g.perturbed(lambda, &h);
    let fd = (objective_value(&spec, &gl, &state(&gl, &p)).unwrap()
        - objective_value(&spec, &g, &y).unwrap())
        / lambda;
    assert!((d - fd).abs() <= 1e-3f64.max(5.0 * lambda), "{d} vs {fd}");
}

#[test]
fn tracking_rejects_observation_set_near_boundary() {
    let p = pipeline(65);
    let g = sf(G);
    let y = state(&g, &p);
    let spec = ObjectiveSpec::TrackingH2 {
        y_d: sf("0"),
        e: ObservationSet::Disk {
            center: [0.0, 0.0],
            radius: 0.98,
        },
        points: vec![],
    };
    assert!(matches!(
        objective_value(&spec, &g, &y),
        Err(Error::ObservationSet)
    ));
}

fn family(g: &ShapeFunction, p: &Pipeline) -> Vec<Direction> {
    let curves = trace_components(g, &p.grid.d, &p.search, &p.trace).unwrap();
    direction_family(&curves, 8, 42)
}

#[test]
fn level_function_weight_has_no_violations() {
    let p = pipeline(65);
    let g = sf(G);
    let spec = ObjectiveSpec::Distributed {
        integrand: Integrand::Zero,
        y_d: sf("0"),
        psi: g.clone(),
    };
    let r = optimality_check(&g, &spec, &family(&g, &p), &p, None).unwrap();
    assert!(r.violations.is_empty());
    assert!(r
        .rows
        .iter()
        .all(|row| row.qualifying && row.j_prime.unwrap().abs() <= 1e-4));
}

#[test]
fn pure_area_is_flagged_and_verdict_is_scale_invariant() {
    let p = pipeline(65);
    let g = sf(G);
    let spec = ObjectiveSpec::Distributed {
        integrand: Integrand::Zero,
        y_d: sf("0"),
        psi: sf("1"),
    };
    let fam = family(&g, &p);
    let r = optimality_check(&g, &spec, &fam, &p, None).unwrap();
    assert!(!r.violations.is_empty());
    let doubled: Vec<Direction> = fam.iter().map(|d| d.scaled(2.0)).collect();
    let r2 = optimality_check(&g, &spec, &doubled, &p, Some(2.0 * r.tolerance)).unwrap();
    assert_eq!(r.violations, r2.violations);
    for (a, b) in r.rows.iter().zip(&r2.rows) {
        assert!((2.0 * a.j_prime.unwrap() - b.j_prime.unwrap()).abs() < 1e-10);
    }
}

#[test]
fn non_intersecting_family_is_an_error() {
    let p = pipeline(65);
    let g = sf(G);
    let spec = ObjectiveSpec::Distributed {
        integrand: Integrand::Zero,
        y_d: sf("0"),
        psi: sf("1"),
    };
    let fam = vec![Direction {
        label: "far".into(),
        h: sf("x1^2 + x2^2 + 1"),
    }];
    assert!(matches!(
        optimality_check(&g, &spec, &fam, &p, None),
        Err(Error::NoDirections)
    ));
}

#[test]
fn observation_set_stays_feasible_along_lambda() {
    let (g, h) = (sf(G), sf(H));
    let e = ObservationSet::Disk {
        center: [0.0, 0.0],
        radius: 0.3,
    };
    assert!(fva_core::objectives::check_fe(&g, &e));
    for lambda in [0.16, 0.08, 0.04, 0.02, 0.01] {
        assert!(fva_core::objectives::check_fe(&g.perturbed(lambda, &h), &e));
    }
}
