//! Iteration-complexity bounds for the outer loop.
//!
//! All bounds are returned as real numbers; ceilings are applied only where
//! the bounds themselves contain them. `Theta = 1` makes every bound `+inf`.
//! For the Lipschitz case the minimal `T_0` and `t_0` satisfying the
//! inequalities are returned; any larger value is valid as well.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateInputs {
    pub lambda: f64,
    /// Smoothness constant `gamma` (losses are `1/gamma`-smooth).
    pub gamma: f64,
    pub n: usize,
    pub sigma_max: f64,
    /// `sum_k sigma_k |P_k|`
    pub sigma: f64,
    pub sigma_prime: f64,
    pub nu: f64,
    pub theta: f64,
    /// Lipschitz constant `L` of the losses.
    pub lipschitz: f64,
    pub epsilon_dual: f64,
    pub epsilon_gap: f64,
    /// `D(alpha*) - D(alpha^0)`, or an upper bound on it.
    pub initial_dual_suboptimality: f64,
}

/// `(T, T_0, t_0)` for Lipschitz losses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LipschitzRounds {
    pub total: f64,
    pub warmup: f64,
    pub t0: f64,
}

fn check_common(r: &RateInputs) -> Result<()> {
    if !(r.lambda > 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be positive, got {}", r.lambda)));
    }
    if r.n == 0 {
        return Err(Error::InvalidArgument("n must be positive".into()));
    }
    if !(r.nu > 0.0 && r.nu <= 1.0) {
        return Err(Error::InvalidArgument(format!("nu must lie in (0, 1], got {}", r.nu)));
    }
    if !(0.0..=1.0).contains(&r.theta) {
        return Err(Error::InvalidArgument(format!("theta must lie in [0, 1], got {}", r.theta)));
    }
    if !(r.sigma_prime > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma' must be positive, got {}", r.sigma_prime)));
    }
    Ok(())
}

fn check_smooth(r: &RateInputs) -> Result<()> {
    check_common(r)?;
    if !(r.gamma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "smooth bounds need gamma > 0, got {}",
            r.gamma
        )));
    }
    if !(r.sigma_max >= 0.0) {
        return Err(Error::InvalidArgument("sigma_max must be non-negative".into()));
    }
    Ok(())
}

/// `(lambda gamma n + sigma_max sigma') / (nu (1 - Theta) lambda gamma n)`.
pub fn smooth_factor(r: &RateInputs) -> Result<f64> {
    check_smooth(r)?;
    if r.theta >= 1.0 {
        return Ok(f64::INFINITY);
    }
    let lgn = r.lambda * r.gamma * r.n as f64;
    Ok((lgn + r.sigma_max * r.sigma_prime) / lgn / (r.nu * (1.0 - r.theta)))
}

/// Rounds after which the expected dual suboptimality is at most `epsilon_dual`.
/// Clamped at 0 when `epsilon_dual >= 1`.
pub fn smooth_rounds_dual(r: &RateInputs) -> Result<f64> {
    check_smooth(r)?;
    if !(r.epsilon_dual > 0.0) {
        return Err(Error::InvalidArgument("epsilon_dual must be positive".into()));
    }
    let factor = smooth_factor(r)?;
    if factor.is_infinite() {
        return Ok(f64::INFINITY);
    }
    Ok((factor * (1.0 / r.epsilon_dual).ln()).max(0.0))
}

/// Rounds after which the expected duality gap is at most `epsilon_gap`.
/// Clamped at 0 when `epsilon_gap` exceeds the leading factor.
pub fn smooth_rounds_gap(r: &RateInputs) -> Result<f64> {
    check_smooth(r)?;
    if !(r.epsilon_gap > 0.0) {
        return Err(Error::InvalidArgument("epsilon_gap must be positive".into()));
    }
    let factor = smooth_factor(r)?;
    if factor.is_infinite() {
        return Ok(f64::INFINITY);
    }
    Ok((factor * (factor / r.epsilon_gap).ln()).max(0.0))
}

/// Contraction factor of the expected dual suboptimality per round,
/// `1 - nu (1 - Theta) lambda gamma n / (lambda gamma n + sigma_max sigma')`.
pub fn geometric_decrease_factor(r: &RateInputs) -> Result<f64> {
    check_smooth(r)?;
    let lgn = r.lambda * r.gamma * r.n as f64;
    Ok(1.0 - r.nu * (1.0 - r.theta) * lgn / (lgn + r.sigma_max * r.sigma_prime))
}

/// `(T, T_0, t_0)` for `L`-Lipschitz losses; the gap guarantee holds at the
/// averaged iterate of [`averaged_iterate`].
pub fn lipschitz_rounds(r: &RateInputs) -> Result<LipschitzRounds> {
    check_common(r)?;
    if !(r.epsilon_gap > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "epsilon_gap must be positive, got {}",
            r.epsilon_gap
        )));
    }
    if !(r.lipschitz > 0.0) {
        return Err(Error::InvalidArgument("Lipschitz bounds need L > 0".into()));
    }
    if !(r.sigma > 0.0) {
        return Err(Error::InvalidArgument("sigma must be positive".into()));
    }
    if !(r.initial_dual_suboptimality >= 0.0) {
        return Err(Error::InvalidArgument(
            "initial dual suboptimality must be non-negative".into(),
        ));
    }
    if r.theta >= 1.0 {
        let inf = f64::INFINITY;
        return Ok(LipschitzRounds {
            total: inf,
            warmup: inf,
            t0: inf,
        });
    }
    let rate = 1.0 / (r.nu * (1.0 - r.theta));
    let n2 = (r.n as f64) * (r.n as f64);
    let l2ss = r.lipschitz * r.lipschitz * r.sigma * r.sigma_prime;
    let ratio = 2.0 * r.lambda * n2 * r.initial_dual_suboptimality / (4.0 * l2ss);
    let t0 = if ratio > 0.0 {
        (rate * ratio.ln()).ceil().max(0.0)
    } else {
        0.0
    };
    let warmup = t0 + (2.0 * rate * (8.0 * l2ss / (r.lambda * n2 * r.epsilon_gap) - 1.0)).max(0.0);
    let total = warmup + rate.ceil().max(4.0 * l2ss * rate / (r.lambda * n2 * r.epsilon_gap));
    Ok(LipschitzRounds {
        total,
        warmup,
        t0,
    })
}

/// Mean of the iterates `alpha^t` for `t = T_0 + 1 ..= T`, i.e.
/// `1/(T - T_0) * sum_t alpha^t` over a window of `T - T_0` iterates.
/// `history[t]` is `alpha^t`.
pub fn averaged_iterate(history: &[Vec<f64>], t0: usize, t: usize) -> Result<Vec<f64>> {
    if t <= t0 {
        return Err(Error::InvalidArgument(format!(
            "empty averaging window: T_0 = {t0}, T = {t}"
        )));
    }
    if history.len() <= t {
        return Err(Error::InvalidArgument(format!(
            "history holds {} iterates, window needs alpha^{t}",
            history.len()
        )));
    }
    let dim = history[t0 + 1].len();
    let mut avg = vec![0.0; dim];
    for alpha in &history[t0 + 1..=t] {
        if alpha.len() != dim {
            return Err(Error::InvalidArgument("iterates of different lengths".into()));
        }
        for (a, x) in avg.iter_mut().zip(alpha) {
            *a += x;
        }
    }
    let scale = 1.0 / (t - t0) as f64;
    avg.iter_mut().for_each(|a| *a *= scale);
    Ok(avg)
}

/// Smooth-gap bounds for adding (`nu = 1, sigma' = K`) and averaging
/// (`nu = 1/K, sigma' = 1`) on otherwise identical inputs.
pub fn adding_vs_averaging(r: &RateInputs, machines: usize) -> Result<(f64, f64)> {
    let k = machines as f64;
    let adding = smooth_rounds_gap(&RateInputs {
        nu: 1.0,
        sigma_prime: k,
        ..*r
    })?;
    let averaging = smooth_rounds_gap(&RateInputs {
        nu: 1.0 / k,
        sigma_prime: 1.0,
        ..*r
    })?;
    Ok((adding, averaging))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> RateInputs {
        RateInputs {
            lambda: 0.01,
            gamma: 1.0,
            n: 100,
            sigma_max: 1.0,
            sigma: 50.0,
            sigma_prime: 1.0,
            nu: 1.0,
            theta: 0.0,
            lipschitz: 1.0,
            epsilon_dual: 1e-3,
            epsilon_gap: 1e-3,
            initial_dual_suboptimality: 1.0,
        }
    }

    #[test]
    fn ratio_two_gives_twice_log() {
        // lambda gamma n = 1 = sigma_max sigma'
        let r = base();
        let t = smooth_rounds_dual(&r).unwrap();
        assert!((t - 2.0 * 1e3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn theta_one_is_infinite() {
        let r = RateInputs { theta: 1.0, ..base() };
        assert!(smooth_rounds_dual(&r).unwrap().is_infinite());
        assert!(smooth_rounds_gap(&r).unwrap().is_infinite());
        assert!(lipschitz_rounds(&r).unwrap().total.is_infinite());
    }

    #[test]
    fn gap_bound_boundary_is_zero() {
        let mut r = base();
        r.epsilon_gap = smooth_factor(&r).unwrap();
        assert_eq!(smooth_rounds_gap(&r).unwrap(), 0.0);
        r.epsilon_gap *= 10.0;
        assert_eq!(smooth_rounds_gap(&r).unwrap(), 0.0);
    }

    #[test]
    fn doubling_sigma_max_at_most_doubles() {
        let r = base();
        let a = smooth_rounds_dual(&r).unwrap();
        let b = smooth_rounds_dual(&RateInputs { sigma_max: 2.0, ..r }).unwrap();
        assert!(b >= a && b <= 2.0 * a);
    }

    #[test]
    fn bad_epsilon_rejected() {
        let r = RateInputs { epsilon_gap: 0.0, ..base() };
        assert!(matches!(lipschitz_rounds(&r), Err(Error::InvalidArgument(_))));
        assert!(smooth_rounds_gap(&r).is_err());
        let r = RateInputs { gamma: 0.0, ..base() };
        assert!(smooth_rounds_dual(&r).is_err());
    }

    #[test]
    fn lipschitz_hand_evaluated() {
        // rate = 1, L^2 sigma sigma' = 50, lambda n^2 = 100
        let r = RateInputs {
            initial_dual_suboptimality: 10.0,
            epsilon_gap: 0.5,
            ..base()
        };
        let out = lipschitz_rounds(&r).unwrap();
        // t0 = ceil(ln(2 * 100 * 10 / 200)) = ceil(ln 10) = 3
        assert_eq!(out.t0, 3.0);
        // T0 = 3 + 2 * (8 * 50 / 50 - 1) = 17
        assert_eq!(out.warmup, 17.0);
        // T = 17 + max(1, 4 * 50 / 50) = 21
        assert_eq!(out.total, 21.0);
    }

    #[test]
    fn halving_epsilon_doubles_dominant_term() {
        let r = RateInputs { epsilon_gap: 1e-2, ..base() };
        let a = lipschitz_rounds(&r).unwrap();
        let b = lipschitz_rounds(&RateInputs { epsilon_gap: 5e-3, ..r }).unwrap();
        assert!(b.total - b.warmup >= 2.0 * (a.total - a.warmup) - 1e-9);
    }

    #[test]
    fn adding_beats_averaging_lipschitz() {
        let k = 4.0;
        let r = RateInputs {
            initial_dual_suboptimality: 100.0,
            ..base()
        };
        let add = lipschitz_rounds(&RateInputs { nu: 1.0, sigma_prime: k, ..r }).unwrap();
        let avg = lipschitz_rounds(&RateInputs { nu: 1.0 / k, sigma_prime: 1.0, ..r }).unwrap();
        assert!(add.total <= avg.total);
    }

    #[test]
    fn averaged_iterate_examples() {
        let hist: Vec<Vec<f64>> = (0..6).map(|t| vec![t as f64, 0.0]).collect();
        assert_eq!(averaged_iterate(&hist, 2, 4).unwrap(), vec![3.5, 0.0]);
        assert_eq!(averaged_iterate(&hist, 4, 5).unwrap(), vec![5.0, 0.0]);
        let constant = vec![vec![2.0, -1.0]; 5];
        assert_eq!(averaged_iterate(&constant, 0, 4).unwrap(), vec![2.0, -1.0]);
        assert!(averaged_iterate(&hist, 3, 3).is_err());
        assert!(averaged_iterate(&hist, 3, 6).is_err());
    }
}
