//! Loss functions `l_i(a)` with their convex conjugates `l_i^*(b)`.
//!
//! Margin losses (hinge, squared hinge, logistic) are written in the usual
//! classification form with labels `y_i in {-1, +1}`:
//!
//! | loss         | `l(a)`                  | `l^*(b)`                       | domain of `l^*`  |
//! |--------------|-------------------------|--------------------------------|------------------|
//! | quadratic    | `(a - y)^2 / 2`         | `b^2 / 2 + y b`                | all `b`          |
//! | hinge        | `max(0, 1 - y a)`       | `y b`                          | `y b in [-1, 0]` |
//! | squared hinge| `max(0, 1 - y a)^2`     | `y b + b^2 / 4`                | `y b <= 0`       |
//! | logistic     | `log(1 + exp(-y a))`    | `p ln p + (1-p) ln(1-p)`, `p = -y b` | `y b in [-1, 0]` |
//!
//! For `y = 1` these coincide with the `max{0, y - a}` style rows often quoted
//! for SVMs. The dual variable enters through `l^*(-alpha_i)`, so the feasible
//! set for `alpha_i` is `y alpha_i in [0, 1]` for hinge and logistic and
//! `y alpha_i >= 0` for squared hinge.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Slack allowed when deciding whether a dual argument lies in the conjugate
/// domain. Arguments within the slack are clamped onto the boundary.
pub const FEASIBILITY_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Loss {
    Quadratic,
    Hinge,
    SquaredHinge,
    Logistic,
}

/// Curvature and slope constants of a loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConstants {
    /// `l` is `1/gamma`-smooth, equivalently `l^*` is `gamma`-strongly convex.
    /// Zero for non-smooth losses.
    pub gamma: f64,
    /// Lipschitz constant of `l`, when the loss is used with the Lipschitz rate.
    pub lipschitz: Option<f64>,
}

impl Loss {
    pub const ALL: [Loss; 4] = [
        Loss::Quadratic,
        Loss::Hinge,
        Loss::SquaredHinge,
        Loss::Logistic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Loss::Quadratic => "quadratic",
            Loss::Hinge => "hinge",
            Loss::SquaredHinge => "sqhinge",
            Loss::Logistic => "logistic",
        }
    }

    pub fn constants(self) -> LossConstants {
        match self {
            Loss::Quadratic => LossConstants {
                gamma: 1.0,
                lipschitz: None,
            },
            Loss::Hinge => LossConstants {
                gamma: 0.0,
                lipschitz: Some(1.0),
            },
            Loss::SquaredHinge => LossConstants {
                gamma: 0.5,
                lipschitz: None,
            },
            // sup l'' = 1/4 at a = 0, hence 1/gamma = 1/4.
            Loss::Logistic => LossConstants {
                gamma: 4.0,
                lipschitz: None,
            },
        }
    }

    pub fn gamma(self) -> f64 {
        self.constants().gamma
    }

    pub fn is_smooth(self) -> bool {
        self.gamma() > 0.0
    }

    /// Whether labels must be exactly `+1` or `-1`.
    pub fn requires_binary_labels(self) -> bool {
        !matches!(self, Loss::Quadratic)
    }

    pub fn validate_labels(self, labels: &[f64]) -> Result<()> {
        if !self.requires_binary_labels() {
            return Ok(());
        }
        match labels.iter().position(|&y| y != 1.0 && y != -1.0) {
            Some(i) => Err(Error::InvalidArgument(format!(
                "{} loss needs labels in {{-1, +1}}, example {i} has label {}",
                self.name(),
                labels[i]
            ))),
            None => Ok(()),
        }
    }

    /// `l_i(a)`
    pub fn value(self, y: f64, a: f64) -> f64 {
        match self {
            Loss::Quadratic => 0.5 * (a - y) * (a - y),
            Loss::Hinge => (1.0 - y * a).max(0.0),
            Loss::SquaredHinge => {
                let m = (1.0 - y * a).max(0.0);
                m * m
            }
            Loss::Logistic => {
                let z = y * a;
                if z > 0.0 {
                    (-z).exp().ln_1p()
                } else {
                    -z + z.exp().ln_1p()
                }
            }
        }
    }

    /// The subdifferential `[lo, hi]` of `l_i` at `a`. A single point for
    /// differentiable losses.
    pub fn subdifferential(self, y: f64, a: f64) -> (f64, f64) {
        match self {
            Loss::Hinge => {
                let m = 1.0 - y * a;
                if m > 0.0 {
                    (-y, -y)
                } else if m < 0.0 {
                    (0.0, 0.0)
                } else {
                    ((-y).min(0.0), (-y).max(0.0))
                }
            }
            _ => {
                let g = self.derivative(y, a);
                (g, g)
            }
        }
    }

    /// A (sub)gradient of `l_i` at `a`.
    pub fn derivative(self, y: f64, a: f64) -> f64 {
        match self {
            Loss::Quadratic => a - y,
            Loss::Hinge => {
                if 1.0 - y * a > 0.0 {
                    -y
                } else {
                    0.0
                }
            }
            Loss::SquaredHinge => -2.0 * y * (1.0 - y * a).max(0.0),
            Loss::Logistic => -y / (1.0 + (y * a).exp()),
        }
    }

    /// Closed interval on which `l_i^*` is finite.
    pub fn conjugate_domain(self, y: f64) -> (f64, f64) {
        let inf = f64::INFINITY;
        match self {
            Loss::Quadratic => (-inf, inf),
            Loss::Hinge | Loss::Logistic => {
                if y > 0.0 {
                    (-1.0, 0.0)
                } else {
                    (0.0, 1.0)
                }
            }
            Loss::SquaredHinge => {
                if y > 0.0 {
                    (-inf, 0.0)
                } else {
                    (0.0, inf)
                }
            }
        }
    }

    /// Feasible interval for the dual variable `alpha_i`, i.e. `{a : -a in dom l^*}`.
    pub fn alpha_bounds(self, y: f64) -> (f64, f64) {
        let (lo, hi) = self.conjugate_domain(y);
        (-hi, -lo)
    }

    /// `l_i^*(b)`, or `None` when `b` is outside the domain.
    pub fn conjugate(self, y: f64, b: f64) -> Option<f64> {
        let (lo, hi) = self.conjugate_domain(y);
        if !(b >= lo - FEASIBILITY_TOL && b <= hi + FEASIBILITY_TOL) {
            return None;
        }
        let b = b.clamp(lo, hi);
        Some(match self {
            Loss::Quadratic => 0.5 * b * b + y * b,
            Loss::Hinge => y * b,
            Loss::SquaredHinge => y * b + 0.25 * b * b,
            Loss::Logistic => {
                let p = -y * b;
                xlogx(p) + xlogx(1.0 - p)
            }
        })
    }

    /// `l_i^*(b)` with a domain error outside the feasible set.
    pub fn conjugate_value(self, y: f64, b: f64) -> Result<f64> {
        self.conjugate(y, b).ok_or(Error::Domain {
            loss: self.name(),
            index: None,
            value: b,
        })
    }

    /// The dual term `l_i^*(-alpha)`.
    pub fn dual_term(self, y: f64, alpha: f64) -> Option<f64> {
        self.conjugate(y, -alpha)
    }

    /// Minimizes `quad/2 * beta^2 - lin * beta + weight * l^*(-beta)` over the
    /// feasible set of `beta`, with `quad >= 0` and `weight > 0`.
    ///
    /// Every separable step in the local solvers reduces to this problem: the
    /// exact coordinate maximization of the local objective and the proximal
    /// operator of the conjugate term. `current` breaks ties when the
    /// objective is flat (hinge loss with `quad = 0`).
    pub fn minimize_separable(self, y: f64, quad: f64, lin: f64, weight: f64, current: f64) -> f64 {
        debug_assert!(quad >= 0.0 && weight > 0.0);
        let (lo, hi) = self.alpha_bounds(y);
        match self {
            Loss::Quadratic => (lin + weight * y) / (quad + weight),
            Loss::Hinge => {
                let target = lin + weight * y;
                if quad > 0.0 {
                    (target / quad).clamp(lo, hi)
                } else if target > 0.0 {
                    hi
                } else if target < 0.0 {
                    lo
                } else {
                    current.clamp(lo, hi)
                }
            }
            Loss::SquaredHinge => ((lin + weight * y) / (quad + 0.5 * weight)).clamp(lo, hi),
            Loss::Logistic => {
                // In p = y beta in (0, 1) the stationarity condition is
                // quad p - lin y + weight logit(p) = 0, increasing in p.
                let ly = lin * y;
                let phi = |p: f64| quad * p - ly + weight * (p / (1.0 - p)).ln();
                let dphi = |p: f64| quad + weight / (p * (1.0 - p));
                y * solve_increasing_unit(phi, dphi)
            }
        }
    }
}

impl fmt::Display for Loss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Loss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quadratic" | "squared" | "ridge" => Ok(Loss::Quadratic),
            "hinge" | "svm" => Ok(Loss::Hinge),
            "sqhinge" | "squared-hinge" => Ok(Loss::SquaredHinge),
            "logistic" => Ok(Loss::Logistic),
            other => Err(Error::InvalidArgument(format!("unknown loss {other:?}"))),
        }
    }
}

/// `x ln x` with the convention `0 ln 0 = 0`.
fn xlogx(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// Root of a strictly increasing function on the open unit interval with
/// `phi(0+) = -inf` and `phi(1-) = +inf`. Safeguarded Newton: a Newton step is
/// taken when it stays inside the current bracket, otherwise bisection.
fn solve_increasing_unit(phi: impl Fn(f64) -> f64, dphi: impl Fn(f64) -> f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut p = 0.5;
    for _ in 0..200 {
        let f = phi(p);
        if f == 0.0 {
            return p;
        }
        if f > 0.0 {
            hi = p;
        } else {
            lo = p;
        }
        let newton = p - f / dphi(p);
        let next = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - p).abs() <= 1e-17 || hi - lo <= f64::EPSILON * hi.max(1e-300) {
            return next;
        }
        p = next;
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    const LABELS: [f64; 2] = [1.0, -1.0];

    fn grid(lo: f64, hi: f64, steps: usize) -> impl Iterator<Item = f64> {
        (0..=steps).map(move |s| lo + (hi - lo) * s as f64 / steps as f64)
    }

    fn labels_for(loss: Loss) -> Vec<f64> {
        if loss.requires_binary_labels() {
            LABELS.to_vec()
        } else {
            vec![1.0, -0.7, 2.5]
        }
    }

    /// Interior grid of the conjugate domain, truncated to a bounded window.
    fn dual_grid(loss: Loss, y: f64) -> Vec<f64> {
        let (lo, hi) = loss.conjugate_domain(y);
        grid(lo.max(-3.0), hi.min(3.0), 60).collect()
    }

    #[test]
    fn loss_values() {
        assert_eq!(Loss::Quadratic.value(1.0, 1.0), 0.0);
        assert_eq!(Loss::Hinge.value(1.0, 2.0), 0.0);
        assert_eq!(Loss::Hinge.value(1.0, 0.0), 1.0);
        assert!((Loss::Logistic.value(1.0, 0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(Loss::SquaredHinge.value(-1.0, 1.0), 4.0);
    }

    #[test]
    fn conjugate_values() {
        assert_eq!(Loss::Quadratic.conjugate_value(1.0, 0.0).unwrap(), 0.0);
        assert_eq!(Loss::Hinge.conjugate_value(1.0, -0.5).unwrap(), -0.5);
        assert_eq!(Loss::Logistic.conjugate_value(1.0, 0.0).unwrap(), 0.0);
        assert!(Loss::Logistic.conjugate_value(1.0, -1e-300).unwrap().abs() < 1e-290);
        assert!(matches!(
            Loss::Hinge.conjugate_value(1.0, 0.5),
            Err(Error::Domain { .. })
        ));
        assert!(Loss::Logistic.conjugate(-1.0, -0.1).is_none());
        assert!(Loss::SquaredHinge.conjugate(1.0, 0.1).is_none());
    }

    #[test]
    fn constants_table() {
        assert_eq!(Loss::Quadratic.gamma(), 1.0);
        assert_eq!(Loss::SquaredHinge.gamma(), 0.5);
        assert_eq!(Loss::Logistic.gamma(), 4.0);
        let hinge = Loss::Hinge.constants();
        assert_eq!((hinge.gamma, hinge.lipschitz), (0.0, Some(1.0)));
    }

    /// The largest second difference of `l` on a grid is `1/gamma`.
    #[test]
    fn gamma_matches_finite_difference_curvature() {
        let h = 1e-4;
        for loss in [Loss::Quadratic, Loss::Logistic, Loss::SquaredHinge] {
            for y in labels_for(loss) {
                let max_curv = grid(-6.0, 6.0, 2400)
                    .map(|a| {
                        (loss.value(y, a + h) - 2.0 * loss.value(y, a) + loss.value(y, a - h)) / (h * h)
                    })
                    .fold(0.0, f64::max);
                let gamma = loss.gamma();
                assert!(
                    (max_curv * gamma - 1.0).abs() < 1e-3,
                    "{loss} y={y}: curvature {max_curv}, gamma {gamma}"
                );
            }
        }
    }

    #[test]
    fn hinge_is_one_lipschitz() {
        let l = Loss::Hinge.constants().lipschitz.unwrap();
        for y in LABELS {
            for a in grid(-3.0, 3.0, 97) {
                for h in grid(-2.0, 2.0, 41) {
                    let lhs = (Loss::Hinge.value(y, a + h) - Loss::Hinge.value(y, a)).abs();
                    assert!(lhs <= l * h.abs() + 1e-15);
                }
            }
        }
    }

    #[test]
    fn smooth_losses_obey_upper_quadratic_bound() {
        for loss in [Loss::Quadratic, Loss::Logistic, Loss::SquaredHinge] {
            let gamma = loss.gamma();
            for y in labels_for(loss) {
                for a in grid(-4.0, 4.0, 81) {
                    for h in grid(-3.0, 3.0, 31) {
                        let gap = loss.value(y, a + h) - loss.value(y, a) - h * loss.derivative(y, a);
                        assert!(gap <= h * h / (2.0 * gamma) + 1e-12, "{loss} y={y} a={a} h={h}");
                        assert!(gap >= -1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn fenchel_young_with_equality_on_subgradients() {
        for loss in Loss::ALL {
            for y in labels_for(loss) {
                for a in grid(-3.0, 3.0, 61) {
                    for b in dual_grid(loss, y) {
                        let slack = loss.value(y, a) + loss.conjugate(y, b).unwrap() - a * b;
                        assert!(slack >= -1e-9, "{loss} y={y} a={a} b={b}");
                    }
                    let (lo, hi) = loss.subdifferential(y, a);
                    for b in [lo, 0.5 * (lo + hi), hi] {
                        let slack = loss.value(y, a) + loss.conjugate(y, b).unwrap() - a * b;
                        assert!(slack.abs() < 1e-9, "{loss} y={y} a={a} b={b}: {slack}");
                    }
                }
            }
        }
    }

    /// Brute-force `sup_a (a b - l(a))` over a dense grid.
    #[test]
    fn conjugates_match_grid_supremum() {
        for loss in Loss::ALL {
            for y in labels_for(loss) {
                for b in dual_grid(loss, y) {
                    let mut best = f64::NEG_INFINITY;
                    let mut arg = 0.0;
                    for a in grid(-40.0, 40.0, 80_000) {
                        let v = a * b - loss.value(y, a);
                        if v > best {
                            best = v;
                            arg = a;
                        }
                    }
                    // refine around the best grid point
                    for a in grid(arg - 1e-3, arg + 1e-3, 20_000) {
                        best = best.max(a * b - loss.value(y, a));
                    }
                    let closed = loss.conjugate(y, b).unwrap();
                    // The logistic sup is approached only as a -> inf at the
                    // domain ends; the grid truncation costs ~exp(-40).
                    assert!((best - closed).abs() < 1e-6, "{loss} y={y} b={b}: grid {best} vs {closed}");
                }
            }
        }
    }

    #[test]
    fn conjugates_are_gamma_strongly_convex() {
        for loss in [Loss::Quadratic, Loss::Logistic, Loss::SquaredHinge] {
            let gamma = loss.gamma();
            for y in labels_for(loss) {
                let pts = dual_grid(loss, y);
                for &b in &pts {
                    for &c in &pts {
                        let t = 0.3;
                        let m = t * b + (1.0 - t) * c;
                        let lhs = loss.conjugate(y, m).unwrap();
                        let rhs = t * loss.conjugate(y, b).unwrap()
                            + (1.0 - t) * loss.conjugate(y, c).unwrap()
                            - 0.5 * gamma * t * (1.0 - t) * (b - c) * (b - c);
                        assert!(lhs <= rhs + 1e-9, "{loss} y={y} b={b} c={c}");
                    }
                }
            }
        }
    }

    #[test]
    fn separable_minimizer_matches_grid_search() {
        for loss in Loss::ALL {
            for y in labels_for(loss) {
                for &(quad, lin, w) in &[(2.0, 0.3, 0.5), (0.5, -1.0, 0.1), (0.0, 0.2, 1.0), (10.0, 4.0, 0.01)] {
                    if loss == Loss::Hinge && quad == 0.0 {
                        continue;
                    }
                    let obj = |beta: f64| match loss.dual_term(y, beta) {
                        Some(r) => 0.5 * quad * beta * beta - lin * beta + w * r,
                        None => f64::INFINITY,
                    };
                    let beta = loss.minimize_separable(y, quad, lin, w, 0.0);
                    let (lo, hi) = loss.alpha_bounds(y);
                    let best = grid(lo.max(-20.0), hi.min(20.0), 200_000)
                        .map(obj)
                        .fold(f64::INFINITY, f64::min);
                    assert!(obj(beta) <= best + 1e-9, "{loss} y={y} q={quad} l={lin}");
                }
            }
        }
    }

    #[test]
    fn flat_hinge_step_goes_to_box_edge() {
        assert_eq!(Loss::Hinge.minimize_separable(1.0, 0.0, 0.5, 0.1, 0.3), 1.0);
        assert_eq!(Loss::Hinge.minimize_separable(-1.0, 0.0, -0.5, 0.1, -0.3), -1.0);
        assert_eq!(Loss::Hinge.minimize_separable(-1.0, 0.0, 0.5, 0.1, -0.3), 0.0);
        assert_eq!(Loss::Hinge.minimize_separable(1.0, 0.0, -0.1, 0.1, 0.3), 0.3);
    }

    #[test]
    fn label_validation() {
        assert!(Loss::Hinge.validate_labels(&[1.0, -1.0]).is_ok());
        assert!(Loss::Logistic.validate_labels(&[1.0, 0.0]).is_err());
        assert!(Loss::Quadratic.validate_labels(&[0.3]).is_ok());
    }
}
