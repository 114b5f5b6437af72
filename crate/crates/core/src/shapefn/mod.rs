//! Closed-form scalar fields on the plane with exact first and second
//! derivatives, plus the sampled admissibility check for level functions.

mod expr;
mod jet;
mod parser;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use expr::{BinOp, Expr, Func};
pub use jet::Jet;
pub use parser::parse_expr;

use crate::error::{Error, Result};
use crate::geom::Point;

/// A parsed expression together with a label used in messages.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeFunction {
    expr: Arc<Expr>,
    label: String,
}

impl ShapeFunction {
    /// Parses an expression that may use min/max/abs.
    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_labeled("f", text)
    }

    pub fn parse_labeled(label: &str, text: &str) -> Result<Self> {
        Ok(Self::from_expr(label, parse_expr(text)?))
    }

    /// Parses a level function, which must be twice continuously
    /// differentiable and so may not use min/max/abs.
    pub fn parse_c2(label: &str, text: &str) -> Result<Self> {
        let f = Self::parse_labeled(label, text)?;
        if !f.is_smooth() {
            return Err(Error::NotSmooth {
                label: label.to_string(),
            });
        }
        Ok(f)
    }

    pub fn from_expr(label: &str, expr: Expr) -> Self {
        ShapeFunction {
            expr: Arc::new(expr),
            label: label.to_string(),
        }
    }

    pub fn constant(value: f64) -> Self {
        Self::from_expr("const", Expr::Const(value))
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn is_smooth(&self) -> bool {
        self.expr.is_smooth()
    }

    #[inline]
    pub fn value(&self, x: Point) -> f64 {
        self.expr.value(x)
    }

    /// Value, gradient and Hessian at `x`.
    pub fn eval2(&self, x: Point) -> Result<Jet> {
        self.expr.jet(x)
    }

    /// Gradient at `x`, falling back to central differences at kinks.
    pub fn grad(&self, x: Point) -> Point {
        match self.eval2(x) {
            Ok(j) => j.g,
            Err(_) => {
                let e = 1e-7;
                [
                    (self.value([x[0] + e, x[1]]) - self.value([x[0] - e, x[1]])) / (2.0 * e),
                    (self.value([x[0], x[1] + e]) - self.value([x[0], x[1] - e])) / (2.0 * e),
                ]
            }
        }
    }

    /// The level function `self + lambda * h`.
    pub fn perturbed(&self, lambda: f64, h: &ShapeFunction) -> ShapeFunction {
        if lambda == 0.0 {
            return self.clone();
        }
        let e = Expr::bin(
            BinOp::Add,
            (*self.expr).clone(),
            Expr::bin(BinOp::Mul, Expr::Const(lambda), (*h.expr).clone()),
        );
        Self::from_expr(&format!("{}+{lambda}*{}", self.label, h.label), e)
    }

    /// The function `s * self`.
    pub fn scaled(&self, s: f64) -> ShapeFunction {
        let e = Expr::bin(BinOp::Mul, Expr::Const(s), (*self.expr).clone());
        Self::from_expr(&self.label, e)
    }

    /// Pointwise maximum of two functions (not C², only used for masks).
    pub fn max_with(&self, other: &ShapeFunction) -> ShapeFunction {
        let e = Expr::bin(BinOp::Max, (*self.expr).clone(), (*other.expr).clone());
        Self::from_expr(&format!("max({},{})", self.label, other.label), e)
    }
}

impl fmt::Display for ShapeFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.expr.fmt(f)
    }
}

/// The hold-all box `D = [xmin, xmax] x [ymin, ymax]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoldAll {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
}

impl HoldAll {
    pub fn new(xmin: f64, xmax: f64, ymin: f64, ymax: f64) -> Result<Self> {
        let b = HoldAll {
            xmin,
            xmax,
            ymin,
            ymax,
        };
        b.validate()?;
        Ok(b)
    }

    /// The square `[-a, a]^2`.
    pub fn square(a: f64) -> Self {
        HoldAll {
            xmin: -a,
            xmax: a,
            ymin: -a,
            ymax: a,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.xmin, self.xmax, self.ymin, self.ymax]
            .iter()
            .all(|v| v.is_finite())
            && self.xmin < self.xmax
            && self.ymin < self.ymax;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "degenerate hold-all box {self:?}"
            )))
        }
    }

    pub fn contains(&self, x: Point) -> bool {
        x[0] >= self.xmin && x[0] <= self.xmax && x[1] >= self.ymin && x[1] <= self.ymax
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    /// Points `i * L / n` along each side, counter-clockwise from the lower left corner.
    pub fn boundary_samples(&self, n: usize) -> Vec<Point> {
        let (w, h) = (self.width(), self.height());
        let mut out = Vec::with_capacity(4 * n);
        for i in 0..n {
            out.push([self.xmin + w * i as f64 / n as f64, self.ymin]);
        }
        for i in 0..n {
            out.push([self.xmax, self.ymin + h * i as f64 / n as f64]);
        }
        for i in 0..n {
            out.push([self.xmax - w * i as f64 / n as f64, self.ymax]);
        }
        for i in 0..n {
            out.push([self.xmin, self.ymax - h * i as f64 / n as f64]);
        }
        out
    }
}

/// Sampled certificate for the admissible class of level functions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdmissibilityReport {
    pub in_f: bool,
    /// Sampled minimum of `|grad g| + |g|` over the grid.
    pub delta: f64,
    pub delta_at: Point,
    /// Minimum of `g` over the boundary samples.
    pub boundary_min: f64,
    pub boundary_min_at: Point,
    pub has_negative_point: bool,
    pub negative_point: Option<Point>,
}

/// Checks the admissibility conditions on an `n x n` node grid and `4n`
/// boundary samples.
pub fn check_admissible(g: &ShapeFunction, d: &HoldAll, n: usize) -> Result<AdmissibilityReport> {
    if n < 16 {
        return Err(Error::InvalidArgument(format!(
            "need at least 16 samples per axis, got {n}"
        )));
    }
    d.validate()?;
    let mut delta = f64::INFINITY;
    let mut delta_at = [d.xmin, d.ymin];
    let mut negative_point = None;
    let mut most_negative = 0.0;
    for j in 0..n {
        let y = d.ymin + d.height() * j as f64 / (n - 1) as f64;
        for i in 0..n {
            let x = [d.xmin + d.width() * i as f64 / (n - 1) as f64, y];
            let v = g.value(x);
            let m = crate::geom::norm(g.grad(x)) + v.abs();
            if m < delta {
                delta = m;
                delta_at = x;
            }
            if v < most_negative {
                most_negative = v;
                negative_point = Some(x);
            }
        }
    }
    let mut boundary_min = f64::INFINITY;
    let mut boundary_min_at = [d.xmin, d.ymin];
    for x in d.boundary_samples(n) {
        let v = g.value(x);
        if v < boundary_min {
            boundary_min = v;
            boundary_min_at = x;
        }
    }
    let has_negative_point = negative_point.is_some();
    Ok(AdmissibilityReport {
        in_f: delta > 0.0 && boundary_min > 0.0 && has_negative_point,
        delta,
        delta_at,
        boundary_min,
        boundary_min_at,
        has_negative_point,
        negative_point,
    })
}

impl AdmissibilityReport {
    /// Human-readable list of the failed conditions.
    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.delta > 0.0) {
            out.push(format!("|grad g| + |g| vanishes near {:?}", self.delta_at));
        }
        if !(self.boundary_min > 0.0) {
            out.push(format!(
                "g = {} <= 0 on the box boundary at {:?}",
                self.boundary_min, self.boundary_min_at
            ));
        }
        if !self.has_negative_point {
            out.push("g has no negative sample".to_string());
        }
        out
    }

    pub fn into_result(self) -> Result<Self> {
        if self.in_f {
            Ok(self)
        } else {
            Err(Error::NotAdmissible(self.failures().join("; ")))
        }
    }
}
