use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which one-sided slope serves as the generalized derivative at a kink.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KinkSlope {
    Left,
    #[default]
    Right,
}

/// Monotone nondecreasing scalar maps `beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Nonlinearity {
    Zero,
    Linear {
        slope: f64,
    },
    /// `max(0, y - c)`.
    Relu {
        c: f64,
    },
    /// Continuous piecewise-linear map with `beta(0) = offset`, slope
    /// `slopes[k]` between `knots[k-1]` and `knots[k]`.
    Pwl {
        knots: Vec<f64>,
        slopes: Vec<f64>,
        offset: f64,
    },
    /// `y^3`.
    Cubic,
}

impl Nonlinearity {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        match self {
            Nonlinearity::Linear { slope } if !(*slope >= 0.0) => {
                bad("linear slope must be nonnegative")
            }
            Nonlinearity::Relu { c } if !c.is_finite() => bad("relu offset must be finite"),
            Nonlinearity::Pwl {
                knots,
                slopes,
                offset,
            } => {
                if slopes.len() != knots.len() + 1 {
                    return bad("pwl needs one more slope than knots");
                }
                if knots.windows(2).any(|w| !(w[0] < w[1])) {
                    return bad("pwl knots must be strictly increasing");
                }
                if slopes.iter().any(|s| !(*s >= 0.0)) || !offset.is_finite() {
                    return bad("pwl slopes must be nonnegative");
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, y: f64) -> f64 {
        match self {
            Nonlinearity::Zero => 0.0,
            Nonlinearity::Linear { slope } => slope * y,
            Nonlinearity::Relu { c } => (y - c).max(0.0),
            Nonlinearity::Pwl {
                knots,
                slopes,
                offset,
            } => {
                // Integrate the slope from 0 to y.
                let seg = |a: f64, b: f64| -> f64 {
                    let mut total = 0.0;
                    let mut lo = a;
                    for (k, &s) in slopes.iter().enumerate() {
                        let hi = if k < knots.len() { knots[k].min(b) } else { b };
                        if hi > lo {
                            total += s * (hi - lo);
                            lo = hi;
                        }
                    }
                    total
                };
                if y >= 0.0 {
                    offset + seg(0.0, y)
                } else {
                    offset - seg(y, 0.0)
                }
            }
            Nonlinearity::Cubic => y * y * y,
        }
    }

    /// Slopes immediately left and right of `y`.
    fn one_sided(&self, y: f64) -> (f64, f64) {
        match self {
            Nonlinearity::Zero => (0.0, 0.0),
            Nonlinearity::Linear { slope } => (*slope, *slope),
            Nonlinearity::Relu { c } => {
                if y > *c {
                    (1.0, 1.0)
                } else if y < *c {
                    (0.0, 0.0)
                } else {
                    (0.0, 1.0)
                }
            }
            Nonlinearity::Pwl { knots, slopes, .. } => {
                let right = slopes[knots.partition_point(|&k| k <= y)];
                let left = slopes[knots.partition_point(|&k| k < y)];
                (left, right)
            }
            Nonlinearity::Cubic => (3.0 * y * y, 3.0 * y * y),
        }
    }

    /// Directional derivative `beta'(y; d)`.
    pub fn dir(&self, y: f64, d: f64) -> f64 {
        let (l, r) = self.one_sided(y);
        if d >= 0.0 {
            r * d
        } else {
            l * d
        }
    }

    /// Generalized derivative of `beta` at `y` (a subdifferential slope).
    pub fn slope(&self, y: f64, side: KinkSlope) -> f64 {
        let (l, r) = self.one_sided(y);
        match side {
            KinkSlope::Left => l,
            KinkSlope::Right => r,
        }
    }

    /// Generalized derivative of `d -> beta'(y; d)` at `d`.
    pub fn dir_slope(&self, y: f64, d: f64, side: KinkSlope) -> f64 {
        let (l, r) = self.one_sided(y);
        if d > 0.0 {
            r
        } else if d < 0.0 {
            l
        } else {
            match side {
                KinkSlope::Left => l,
                KinkSlope::Right => r,
            }
        }
    }

    /// Lipschitz constant of `beta` on `[-m, m]`.
    pub fn lipschitz_on(&self, m: f64) -> f64 {
        match self {
            Nonlinearity::Zero => 0.0,
            Nonlinearity::Linear { slope } => *slope,
            Nonlinearity::Relu { .. } => 1.0,
            Nonlinearity::Pwl { slopes, .. } => slopes.iter().cloned().fold(0.0, f64::max),
            Nonlinearity::Cubic => 3.0 * m * m,
        }
    }

    /// True when `y` sits at a point where the one-sided slopes differ.
    pub fn is_kink(&self, y: f64) -> bool {
        let (l, r) = self.one_sided(y);
        l != r
    }
}
