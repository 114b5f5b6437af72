use std::fmt;

use super::jet::Jet;
use crate::error::{Error, Result};
use crate::geom::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
    Abs,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Min,
    Max,
}

/// Expression tree over the coordinates `x1`, `x2`.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    /// Coordinate index: 0 for `x1`, 1 for `x2`.
    Var(usize),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
        Expr::Bin(op, Box::new(a), Box::new(b))
    }

    /// True when the expression contains no min/max/abs.
    pub fn is_smooth(&self) -> bool {
        match self {
            Expr::Const(_) | Expr::Var(_) => true,
            Expr::Neg(a) | Expr::Pow(a, _) => a.is_smooth(),
            Expr::Call(f, a) => *f != Func::Abs && a.is_smooth(),
            Expr::Bin(op, a, b) => {
                !matches!(op, BinOp::Min | BinOp::Max) && a.is_smooth() && b.is_smooth()
            }
        }
    }

    pub fn value(&self, x: Point) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => x[*i],
            Expr::Neg(a) => -a.value(x),
            Expr::Pow(a, n) => a.value(x).powi(*n),
            Expr::Call(f, a) => {
                let v = a.value(x);
                match f {
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                    Func::Exp => v.exp(),
                    Func::Sqrt => v.sqrt(),
                    Func::Abs => v.abs(),
                }
            }
            Expr::Bin(op, a, b) => {
                let (u, v) = (a.value(x), b.value(x));
                match op {
                    BinOp::Add => u + v,
                    BinOp::Sub => u - v,
                    BinOp::Mul => u * v,
                    BinOp::Div => u / v,
                    BinOp::Min => u.min(v),
                    BinOp::Max => u.max(v),
                }
            }
        }
    }

    /// Value with exact gradient and Hessian. Kinks of min/max/abs and the
    /// origin of sqrt are reported as non-smooth points.
    pub fn jet(&self, x: Point) -> Result<Jet> {
        Ok(match self {
            Expr::Const(c) => Jet::constant(*c),
            Expr::Var(i) => Jet::variable(x[*i], *i),
            Expr::Neg(a) => -a.jet(x)?,
            Expr::Pow(a, n) => a.jet(x)?.powi(*n),
            Expr::Call(f, a) => {
                let u = a.jet(x)?;
                match f {
                    Func::Sin => u.sin(),
                    Func::Cos => u.cos(),
                    Func::Exp => u.exp(),
                    Func::Sqrt => {
                        if u.v <= 0.0 {
                            return Err(Error::NonSmoothPoint { x });
                        }
                        u.sqrt()
                    }
                    Func::Abs => {
                        if u.v == 0.0 {
                            return Err(Error::NonSmoothPoint { x });
                        }
                        if u.v > 0.0 {
                            u
                        } else {
                            -u
                        }
                    }
                }
            }
            Expr::Bin(op, a, b) => {
                let (u, v) = (a.jet(x)?, b.jet(x)?);
                match op {
                    BinOp::Add => u + v,
                    BinOp::Sub => u - v,
                    BinOp::Mul => u * v,
                    BinOp::Div => u * v.recip(),
                    BinOp::Min | BinOp::Max => {
                        if u.v == v.v {
                            return Err(Error::NonSmoothPoint { x });
                        }
                        let pick_u = (u.v < v.v) == (*op == BinOp::Min);
                        if pick_u {
                            u
                        } else {
                            v
                        }
                    }
                }
            }
        })
    }
}

fn write_const(f: &mut fmt::Formatter<'_>, c: f64) -> fmt::Result {
    if c < 0.0 || (c == 0.0 && c.is_sign_negative()) {
        write!(f, "(-{:?})", -c)
    } else {
        write!(f, "{c:?}")
    }
}

/// Fully parenthesized form; `parse(print(e))` prints identically.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write_const(f, *c),
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Pow(a, n) => {
                if *n < 0 {
                    write!(f, "({a}^(-{}))", -(*n as i64))
                } else {
                    write!(f, "({a}^{n})")
                }
            }
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
            Expr::Bin(op, a, b) => match op {
                BinOp::Add => write!(f, "({a} + {b})"),
                BinOp::Sub => write!(f, "({a} - {b})"),
                BinOp::Mul => write!(f, "({a} * {b})"),
                BinOp::Div => write!(f, "({a} / {b})"),
                BinOp::Min => write!(f, "min({a}, {b})"),
                BinOp::Max => write!(f, "max({a}, {b})"),
            },
        }
    }
}
