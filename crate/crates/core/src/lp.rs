//! Seidel's randomized incremental algorithm for linear programs in one or two
//! variables.
//!
//! Variables are named `(u, x)` after their use in path parameterization, but
//! nothing here is specific to it. A row `(a, b, c)` means `a*u + b*x + c <= 0`.

use crate::error::{Error, Result};

/// Linear inequality `a*u + b*x + c <= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Row {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Row {
    pub const fn new(a: f64, b: f64, c: f64) -> Self {
        Self { a, b, c }
    }

    #[inline]
    pub fn eval(&self, u: f64, x: f64) -> f64 {
        self.a * u + self.b * x + self.c
    }
}

/// Linear objective `wu*u + wx*x` together with its sense.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub wu: f64,
    pub wx: f64,
    pub maximize: bool,
}

impl Objective {
    pub const fn maximize(wu: f64, wx: f64) -> Self {
        Self {
            wu,
            wx,
            maximize: true,
        }
    }
    pub const fn minimize(wu: f64, wx: f64) -> Self {
        Self {
            wu,
            wx,
            maximize: false,
        }
    }
    pub const MAX_U: Self = Self::maximize(1.0, 0.0);
    pub const MIN_U: Self = Self::minimize(1.0, 0.0);
    pub const MAX_X: Self = Self::maximize(0.0, 1.0);
    pub const MIN_X: Self = Self::minimize(0.0, 1.0);

    /// Direction that increases the quantity being optimized.
    fn ascent(&self) -> (f64, f64) {
        if self.maximize {
            (self.wu, self.wx)
        } else {
            (-self.wu, -self.wx)
        }
    }

    fn value(&self, u: f64, x: f64) -> f64 {
        self.wu * u + self.wx * x
    }
}

/// Axis-aligned box on `(u, x)`. Infinite sides are allowed; an optimum that
/// runs off an infinite side is reported as unbounded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub u: (f64, f64),
    pub x: (f64, f64),
}

impl Bounds {
    pub const UNBOUNDED: Self = Self {
        u: (f64::NEG_INFINITY, f64::INFINITY),
        x: (f64::NEG_INFINITY, f64::INFINITY),
    };

    pub const fn new(u: (f64, f64), x: (f64, f64)) -> Self {
        Self { u, x }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpSolution {
    pub value: f64,
    pub u: f64,
    pub x: f64,
}

const BIG: f64 = 1e9;
const FEAS_TOL: f64 = 1e-10;

fn finite_or(v: f64, big: f64) -> (f64, bool) {
    if v.is_finite() {
        (v, false)
    } else {
        (big.copysign(v), true)
    }
}

/// Solves a two-variable LP exactly (up to floating point) with Seidel's
/// algorithm. The constraint order is shuffled with a fixed-seed generator, so
/// results are reproducible.
pub fn solve_lp_2var(objective: Objective, rows: &[Row], bounds: Bounds) -> Result<LpSolution> {
    let (u_lo, u_lo_art) = finite_or(bounds.u.0, -BIG);
    let (u_hi, u_hi_art) = finite_or(bounds.u.1, BIG);
    let (x_lo, x_lo_art) = finite_or(bounds.x.0, -BIG);
    let (x_hi, x_hi_art) = finite_or(bounds.x.1, BIG);
    if u_lo > u_hi + FEAS_TOL || x_lo > x_hi + FEAS_TOL {
        return Err(Error::Infeasible);
    }

    // Normalize so the tolerance is a distance.
    let mut work: Vec<Row> = Vec::with_capacity(rows.len() + 4);
    for r in rows {
        let n = r.a.hypot(r.b);
        if n < 1e-14 {
            if r.c > FEAS_TOL {
                return Err(Error::Infeasible);
            }
            continue;
        }
        work.push(Row::new(r.a / n, r.b / n, r.c / n));
    }
    let n_rows = work.len();
    shuffle(&mut work);
    work.extend_from_slice(&[
        Row::new(-1.0, 0.0, u_lo),
        Row::new(1.0, 0.0, -u_hi),
        Row::new(0.0, -1.0, x_lo),
        Row::new(0.0, 1.0, -x_hi),
    ]);

    let (gu, gx) = objective.ascent();
    // Optimal box corner; zero-weight axes take the lower side.
    let mut u = if gu > 0.0 { u_hi } else { u_lo };
    let mut x = if gx > 0.0 { x_hi } else { x_lo };

    for k in 0..n_rows {
        let row = work[k];
        if row.eval(u, x) <= FEAS_TOL {
            continue;
        }
        // The new optimum lies on this row's boundary line.
        let (pu, px) = (-row.c * row.a, -row.c * row.b);
        let (du, dx) = (-row.b, row.a);
        let mut t_lo = f64::NEG_INFINITY;
        let mut t_hi = f64::INFINITY;
        let earlier = work[..k].iter().chain(&work[n_rows..]);
        for other in earlier {
            let alpha = other.a * du + other.b * dx;
            let beta = -(other.a * pu + other.b * px + other.c);
            if alpha.abs() < 1e-13 {
                if beta < -FEAS_TOL {
                    return Err(Error::Infeasible);
                }
            } else if alpha > 0.0 {
                t_hi = t_hi.min(beta / alpha);
            } else {
                t_lo = t_lo.max(beta / alpha);
            }
        }
        if t_lo > t_hi + FEAS_TOL {
            return Err(Error::Infeasible);
        }
        if t_lo > t_hi {
            let mid = 0.5 * (t_lo + t_hi);
            t_lo = mid;
            t_hi = mid;
        }
        let slope = gu * du + gx * dx;
        let t = if slope > 0.0 { t_hi } else { t_lo };
        u = pu + t * du;
        x = px + t * dx;
    }

    let at = |v: f64, side: f64| (v - side).abs() <= 1e-6 * BIG;
    let unbounded = (u_hi_art && gu > 0.0 && at(u, u_hi))
        || (u_lo_art && gu < 0.0 && at(u, u_lo))
        || (x_hi_art && gx > 0.0 && at(x, x_hi))
        || (x_lo_art && gx < 0.0 && at(x, x_lo));
    if unbounded {
        return Err(Error::Unbounded);
    }
    Ok(LpSolution {
        value: objective.value(u, x),
        u,
        x,
    })
}

/// One-variable LP: optimize `u` subject to `coef * u <= rhs` for every pair,
/// within `[lo, hi]`.
pub fn solve_lp_1var(maximize: bool, rows: &[(f64, f64)], lo: f64, hi: f64) -> Result<f64> {
    let mut t_lo = lo;
    let mut t_hi = hi;
    for &(coef, rhs) in rows {
        if coef.abs() < 1e-13 {
            if rhs < -FEAS_TOL {
                return Err(Error::Infeasible);
            }
        } else if coef > 0.0 {
            t_hi = t_hi.min(rhs / coef);
        } else {
            t_lo = t_lo.max(rhs / coef);
        }
    }
    if t_lo > t_hi + FEAS_TOL {
        return Err(Error::Infeasible);
    }
    let t = if maximize {
        t_hi.max(t_lo)
    } else {
        t_lo.min(t_hi)
    };
    if !t.is_finite() {
        return Err(Error::Unbounded);
    }
    Ok(t)
}

/// Fisher-Yates with a fixed-seed xorshift so solves are reproducible.
fn shuffle(rows: &mut [Row]) {
    let mut state: u64 = 0x9E37_79B9_7F4A_7C15 ^ rows.len() as u64;
    for i in (1..rows.len()).rev() {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        let j = (state % (i as u64 + 1)) as usize;
        rows.swap(i, j);
    }
}
