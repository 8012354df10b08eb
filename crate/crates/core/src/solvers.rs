//! Local solvers that approximately maximize the subproblem `G_k`.
//!
//! All batch methods are written as minimizers of `F = -G_k`. Every solver
//! returns an update that does not decrease `G_k` below its value at `h = 0`;
//! if an inner method ends worse than the starting point the zero update is
//! returned instead.
//!
//! | solver | losses           | notes                                           |
//! |--------|------------------|-------------------------------------------------|
//! | `cd`   | all              | exact randomized coordinate steps, `H` updates  |
//! | `fista`| all              | prox of the separable conjugate term            |
//! | `gd`   | quadratic        | Armijo backtracking                             |
//! | `cg`   | quadratic        | Fletcher-Reeves, restart every `|P_k|` steps    |
//! | `lbfgs`| quadratic        | two-loop recursion, memory `m` (default `H`)    |
//! | `bb`   | quadratic        | BB1 step with monotone backtracking             |

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg;
use crate::losses::Loss;
use crate::subproblem::{sigma_k, SubproblemView};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SolverKind {
    Cd,
    Gd,
    Cg,
    Lbfgs,
    Bb,
    Fista,
}

impl SolverKind {
    pub const ALL: [SolverKind; 6] = [
        SolverKind::Cd,
        SolverKind::Gd,
        SolverKind::Cg,
        SolverKind::Lbfgs,
        SolverKind::Bb,
        SolverKind::Fista,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Cd => "cd",
            SolverKind::Gd => "gd",
            SolverKind::Cg => "cg",
            SolverKind::Lbfgs => "lbfgs",
            SolverKind::Bb => "bb",
            SolverKind::Fista => "fista",
        }
    }

    pub fn supports(self, loss: Loss) -> bool {
        match self {
            SolverKind::Cd | SolverKind::Fista => true,
            SolverKind::Gd | SolverKind::Cg | SolverKind::Lbfgs | SolverKind::Bb => {
                loss == Loss::Quadratic
            }
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cd" => Ok(SolverKind::Cd),
            "gd" => Ok(SolverKind::Gd),
            "cg" => Ok(SolverKind::Cg),
            "lbfgs" | "l-bfgs" => Ok(SolverKind::Lbfgs),
            "bb" => Ok(SolverKind::Bb),
            "fista" => Ok(SolverKind::Fista),
            other => Err(Error::InvalidArgument(format!("unknown solver {other:?}"))),
        }
    }
}

/// Backtracking parameters for the gradient-type solvers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineSearch {
    /// First trial step; `None` uses `2 / L` with `L` the curvature of `-G_k`.
    pub initial_step: Option<f64>,
    pub shrink: f64,
    pub sufficient_decrease: f64,
}

impl Default for LineSearch {
    fn default() -> Self {
        Self {
            initial_step: None,
            shrink: 0.5,
            sufficient_decrease: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub kind: SolverKind,
    /// Inner iteration budget `H`. For CD this counts single-coordinate updates.
    pub local_iters: usize,
    /// L-BFGS memory; defaults to `H`.
    pub memory: Option<usize>,
    pub line_search: LineSearch,
    pub seed: u64,
}

impl SolverConfig {
    pub fn new(kind: SolverKind, local_iters: usize) -> Self {
        Self {
            kind,
            local_iters,
            memory: None,
            line_search: LineSearch::default(),
            seed: 0,
        }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.local_iters == 0 {
            return Err(Error::Config("local iteration budget H must be at least 1".into()));
        }
        if self.memory == Some(0) {
            return Err(Error::Config("L-BFGS memory must be at least 1".into()));
        }
        let ls = &self.line_search;
        if !(ls.shrink > 0.0 && ls.shrink < 1.0) {
            return Err(Error::Config(format!("line-search shrink must lie in (0, 1), got {}", ls.shrink)));
        }
        if !(ls.sufficient_decrease > 0.0 && ls.sufficient_decrease < 0.5) {
            return Err(Error::Config(format!(
                "sufficient-decrease constant must lie in (0, 0.5), got {}",
                ls.sufficient_decrease
            )));
        }
        if ls.initial_step.is_some_and(|t| !(t > 0.0)) {
            return Err(Error::Config("initial step must be positive".into()));
        }
        Ok(())
    }

    /// Rejects solver/loss pairs where the subproblem is not smooth enough
    /// for the method.
    pub fn check_compatible(&self, loss: Loss) -> Result<()> {
        self.validate()?;
        if !self.kind.supports(loss) {
            return Err(Error::Config(format!(
                "solver {} needs a smooth subproblem and only supports quadratic loss, got {loss}",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn memory(&self) -> usize {
        self.memory.unwrap_or(self.local_iters)
    }
}

/// Proposed change of the local dual block and the matching change of the
/// shared vector, `Delta v = X_[k] h / (lambda n)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalUpdate {
    pub h: Vec<f64>,
    pub delta_v: Vec<f64>,
    pub iterations: usize,
}

/// A configured solver bound to one machine. Holds the per-machine random
/// stream and a cached curvature estimate of the shard.
#[derive(Clone, Debug)]
pub struct LocalSolver {
    config: SolverConfig,
    rng: ChaCha8Rng,
    shard_sigma: Option<f64>,
}

impl LocalSolver {
    pub fn new(config: SolverConfig, machine: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(machine as u64);
        Self {
            config,
            rng,
            shard_sigma: None,
        }
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    /// Approximately maximizes `G_k` with the configured method.
    pub fn solve(&mut self, view: &SubproblemView<'_>) -> Result<LocalUpdate> {
        self.config.check_compatible(view.loss())?;
        let m = view.size();
        let (mut h, iterations) = match self.config.kind {
            SolverKind::Cd => {
                let h = cd_run(view, self.config.local_iters, &mut self.rng);
                (h, self.config.local_iters)
            }
            SolverKind::Fista => {
                let l = self.smooth_lipschitz(view);
                fista(view, self.config.local_iters, l)
            }
            SolverKind::Gd => {
                let t0 = self.initial_step(view);
                gradient_descent(view, &self.config, t0)
            }
            SolverKind::Cg => conjugate_gradient(view, &self.config),
            SolverKind::Lbfgs => lbfgs(view, &self.config),
            SolverKind::Bb => {
                let t0 = self.initial_step(view);
                barzilai_borwein(view, &self.config, t0)
            }
        };
        let g0 = view.objective_or_neg_inf(&vec![0.0; m]);
        let gh = view.objective_or_neg_inf(&h);
        if !(gh >= g0) {
            h = vec![0.0; m];
        }
        let delta_v = view.delta_v(&h);
        Ok(LocalUpdate {
            h,
            delta_v,
            iterations,
        })
    }

    /// Lipschitz constant of the gradient of the smooth part of `-G_k`:
    /// `sigma'/(lambda n^2) * sigma_k`.
    fn smooth_lipschitz(&mut self, view: &SubproblemView<'_>) -> f64 {
        let s = *self
            .shard_sigma
            .get_or_insert_with(|| sigma_k(view.shard(), self.config.seed));
        (view.curvature() * s).max(f64::EPSILON)
    }

    fn initial_step(&mut self, view: &SubproblemView<'_>) -> f64 {
        match self.config.line_search.initial_step {
            Some(t) => t,
            None => 2.0 / (self.smooth_lipschitz(view) + 1.0 / view.n() as f64),
        }
    }
}

/// One exact coordinate step: the change `delta` of `h_i` that maximizes
/// `G_k` along coordinate `i`, given `xh = X_[k] h`.
///
/// The restriction of `G_k` to `h_i + delta` is
/// `-c delta - q ||x_i||^2 delta^2 / 2 - l_i^*(-(alpha_i + h_i + delta)) / n`
/// with `c = grad_i + q x_i^T X_[k] h` and `q = sigma'/(lambda n^2)`, solved in
/// closed form for quadratic, hinge and squared hinge, and by safeguarded
/// Newton for logistic.
pub fn cd_step(view: &SubproblemView<'_>, i: usize, h: &[f64], xh: &[f64]) -> f64 {
    let col = view.shard().column(i);
    let q = view.curvature();
    let c = view.grad_block()[i] + q * col.dot(xh);
    let quad = q * col.norm_sq();
    let a = view.alpha()[i] + h[i];
    let lin = quad * a - c;
    let beta = view
        .loss()
        .minimize_separable(view.label(i), quad, lin, 1.0 / view.n() as f64, a);
    beta - a
}

fn cd_run(view: &SubproblemView<'_>, iters: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let m = view.size();
    let mut h = vec![0.0; m];
    let mut xh = vec![0.0; view.shard().d()];
    for _ in 0..iters {
        let i = rng.gen_range(0..m);
        let delta = cd_step(view, i, &h, &xh);
        if delta != 0.0 {
            h[i] += delta;
            view.shard().column(i).axpy_into(delta, &mut xh);
        }
    }
    h
}

/// Cyclic coordinate ascent until the largest coordinate change in a sweep
/// falls below `tol` (or `max_sweeps` is hit). Used for near-exact reference
/// solutions of a subproblem.
pub fn cd_cyclic(view: &SubproblemView<'_>, tol: f64, max_sweeps: usize) -> Vec<f64> {
    let m = view.size();
    let mut h = vec![0.0; m];
    let mut xh = vec![0.0; view.shard().d()];
    for _ in 0..max_sweeps {
        let mut biggest = 0.0f64;
        for i in 0..m {
            let delta = cd_step(view, i, &h, &xh);
            if delta != 0.0 {
                h[i] += delta;
                view.shard().column(i).axpy_into(delta, &mut xh);
            }
            biggest = biggest.max(delta.abs());
        }
        if biggest <= tol {
            break;
        }
    }
    h
}

/// FISTA on `F(h) = S(h) + R_k(alpha + h)`, `S` the smooth part of `-G_k`.
/// Returns the best iterate seen.
fn fista(view: &SubproblemView<'_>, iters: usize, lipschitz: f64) -> (Vec<f64>, usize) {
    let m = view.size();
    let loss = view.loss();
    let inv_n = 1.0 / view.n() as f64;
    let step = 1.0 / lipschitz;
    let prox = |z: &[f64]| -> Vec<f64> {
        (0..m)
            .map(|i| {
                let a = view.alpha()[i];
                // argmin_beta (beta - (a + z_i))^2 / (2 step) + l^*(-beta) / n
                let beta = loss.minimize_separable(view.label(i), lipschitz, (a + z[i]) * lipschitz, inv_n, a);
                beta - a
            })
            .collect()
    };
    let mut h = vec![0.0; m];
    let mut best = h.clone();
    let mut best_val = view.objective_or_neg_inf(&h);
    let mut y = h.clone();
    let mut t = 1.0f64;
    for _ in 0..iters {
        // grad S(y) = -smooth_gradient(y)
        let g = view.smooth_gradient(&y);
        let z: Vec<f64> = y.iter().zip(&g).map(|(yi, gi)| yi + step * gi).collect();
        let next = prox(&z);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let momentum = (t - 1.0) / t_next;
        y = next
            .iter()
            .zip(&h)
            .map(|(a, b)| a + momentum * (a - b))
            .collect();
        h = next;
        t = t_next;
        let val = view.objective_or_neg_inf(&h);
        // improvements at rounding level are ignored
        if val > best_val + 1e-13 * (1.0 + best_val.abs()) {
            best_val = val;
            best.clone_from(&h);
        }
    }
    (best, iters)
}

/// `F = -G_k` for quadratic loss, where every term is smooth.
struct SmoothNegObjective<'v, 'a> {
    view: &'v SubproblemView<'a>,
}

impl SmoothNegObjective<'_, '_> {
    fn value(&self, h: &[f64]) -> f64 {
        -self.view.objective_or_neg_inf(h)
    }

    fn grad(&self, h: &[f64]) -> Vec<f64> {
        let inv_n = 1.0 / self.view.n() as f64;
        let sg = self.view.smooth_gradient(h);
        sg.iter()
            .enumerate()
            .map(|(i, g)| {
                let beta = self.view.alpha()[i] + h[i];
                -g + (beta - self.view.label(i)) * inv_n
            })
            .collect()
    }

    /// `d^T A d` for the quadratic form of `F`.
    fn curvature_along(&self, d: &[f64]) -> f64 {
        let xd = self.view.shard_mul(d);
        self.view.curvature() * linalg::norm_sq(&xd) + linalg::norm_sq(d) / self.view.n() as f64
    }
}

/// Armijo backtracking along `dir` from `h`. Returns the accepted step and the
/// new objective value, or `None` when no step gives sufficient decrease.
///
/// `F` is quadratic, so the decrease along `dir` is evaluated exactly as
/// `t slope + t^2 d^T A d / 2` rather than as a difference of objective values.
fn backtrack(
    obj: &SmoothNegObjective<'_, '_>,
    fh: f64,
    slope: f64,
    dir: &[f64],
    mut t: f64,
    ls: &LineSearch,
) -> Option<(f64, f64)> {
    if !(slope < 0.0) {
        return None;
    }
    let curv = obj.curvature_along(dir);
    for _ in 0..60 {
        let decrease = t * slope + 0.5 * t * t * curv;
        if decrease <= ls.sufficient_decrease * t * slope {
            return Some((t, fh + decrease));
        }
        t *= ls.shrink;
    }
    None
}

fn gradient_descent(view: &SubproblemView<'_>, cfg: &SolverConfig, t0: f64) -> (Vec<f64>, usize) {
    let obj = SmoothNegObjective { view };
    let mut h = vec![0.0; view.size()];
    let mut fh = obj.value(&h);
    let mut done = 0;
    for _ in 0..cfg.local_iters {
        let g = obj.grad(&h);
        let gg = linalg::norm_sq(&g);
        if gg == 0.0 {
            break;
        }
        let dir: Vec<f64> = g.iter().map(|x| -x).collect();
        match backtrack(&obj, fh, -gg, &dir, t0, &cfg.line_search) {
            Some((t, ft)) => {
                linalg::axpy(t, &dir, &mut h);
                fh = ft;
                done += 1;
            }
            None => break,
        }
    }
    (h, done)
}

fn conjugate_gradient(view: &SubproblemView<'_>, cfg: &SolverConfig) -> (Vec<f64>, usize) {
    let obj = SmoothNegObjective { view };
    let m = view.size();
    let mut h = vec![0.0; m];
    let mut fh = obj.value(&h);
    let mut g = obj.grad(&h);
    let mut dir: Vec<f64> = g.iter().map(|x| -x).collect();
    let mut since_restart = 0;
    let mut done = 0;
    for _ in 0..cfg.local_iters {
        let gg = linalg::norm_sq(&g);
        if gg == 0.0 {
            break;
        }
        let mut slope = linalg::dot(&g, &dir);
        if slope >= 0.0 || since_restart >= m {
            dir = g.iter().map(|x| -x).collect();
            slope = -gg;
            since_restart = 0;
        }
        let curv = obj.curvature_along(&dir);
        let exact = if curv > 0.0 { -slope / curv } else { 1.0 };
        let Some((t, ft)) = backtrack(&obj, fh, slope, &dir, exact, &cfg.line_search) else {
            break;
        };
        linalg::axpy(t, &dir, &mut h);
        fh = ft;
        let g_next = obj.grad(&h);
        let beta = linalg::norm_sq(&g_next) / gg;
        for (d, gn) in dir.iter_mut().zip(&g_next) {
            *d = -gn + beta * *d;
        }
        g = g_next;
        since_restart += 1;
        done += 1;
    }
    (h, done)
}

fn lbfgs(view: &SubproblemView<'_>, cfg: &SolverConfig) -> (Vec<f64>, usize) {
    let obj = SmoothNegObjective { view };
    let memory = cfg.memory();
    let mut h = vec![0.0; view.size()];
    let mut fh = obj.value(&h);
    let mut g = obj.grad(&h);
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(memory);
    let mut done = 0;
    for _ in 0..cfg.local_iters {
        let gg = linalg::norm_sq(&g);
        if gg == 0.0 {
            break;
        }
        let mut dir = two_loop(&g, &pairs);
        let mut slope = linalg::dot(&g, &dir);
        if !(slope < 0.0) {
            pairs.clear();
            dir = g.iter().map(|x| -x).collect();
            slope = -gg;
        }
        let t0 = if pairs.is_empty() {
            // scale the first steepest-descent step by the exact quadratic step
            let curv = obj.curvature_along(&dir);
            if curv > 0.0 {
                -slope / curv
            } else {
                1.0
            }
        } else {
            1.0
        };
        let Some((t, ft)) = backtrack(&obj, fh, slope, &dir, t0, &cfg.line_search) else {
            break;
        };
        let s: Vec<f64> = dir.iter().map(|d| t * d).collect();
        linalg::axpy(1.0, &s, &mut h);
        fh = ft;
        let g_next = obj.grad(&h);
        let y = linalg::sub(&g_next, &g);
        let sy = linalg::dot(&s, &y);
        if sy > 1e-12 {
            if pairs.len() == memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        g = g_next;
        done += 1;
    }
    (h, done)
}

/// Two-loop recursion: returns `-H g` for the implicit inverse Hessian `H`.
fn two_loop(g: &[f64], pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * linalg::dot(s, &q);
        linalg::axpy(-a, y, &mut q);
        alphas.push(a);
    }
    if let Some((s, y, _)) = pairs.back() {
        let scale = linalg::dot(s, y) / linalg::norm_sq(y);
        linalg::scale(scale, &mut q);
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
        let b = rho * linalg::dot(y, &q);
        linalg::axpy(a - b, s, &mut q);
    }
    linalg::scale(-1.0, &mut q);
    q
}

fn barzilai_borwein(view: &SubproblemView<'_>, cfg: &SolverConfig, t0: f64) -> (Vec<f64>, usize) {
    let obj = SmoothNegObjective { view };
    let mut h = vec![0.0; view.size()];
    let mut fh = obj.value(&h);
    let mut g = obj.grad(&h);
    let mut t = t0;
    let mut done = 0;
    for _ in 0..cfg.local_iters {
        let gg = linalg::norm_sq(&g);
        if gg == 0.0 {
            break;
        }
        let dir: Vec<f64> = g.iter().map(|x| -x).collect();
        let Some((step, ft)) = backtrack(&obj, fh, -gg, &dir, t, &cfg.line_search) else {
            break;
        };
        let s: Vec<f64> = dir.iter().map(|d| step * d).collect();
        linalg::axpy(1.0, &s, &mut h);
        fh = ft;
        let g_next = obj.grad(&h);
        let y = linalg::sub(&g_next, &g);
        let sy = linalg::dot(&s, &y);
        // BB1 quotient, or the fixed fallback step when curvature is not positive
        t = if sy > 0.0 { linalg::norm_sq(&s) / sy } else { t0 };
        g = g_next;
        done += 1;
    }
    (h, done)
}

/// A maximizer of `G_k` to high accuracy: a dense linear solve for quadratic
/// loss, cyclic coordinate ascent otherwise.
pub fn exact_local_solution(view: &SubproblemView<'_>) -> Vec<f64> {
    let m = view.size();
    if view.loss() == Loss::Quadratic {
        // (q X^T X + I/n) h = -grad_block - (alpha - y)/n
        let q = view.curvature();
        let inv_n = 1.0 / view.n() as f64;
        let mut a = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            let ci = view.shard().column(i);
            let mut dense = vec![0.0; view.shard().d()];
            ci.axpy_into(1.0, &mut dense);
            for j in i..m {
                let v = q * view.shard().column(j).dot(&dense);
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
            a[(i, i)] += inv_n;
        }
        let b = DVector::from_iterator(
            m,
            (0..m).map(|i| -view.grad_block()[i] - (view.alpha()[i] - view.label(i)) * inv_n),
        );
        if let Some(chol) = a.clone().cholesky() {
            let mut h: Vec<f64> = chol.solve(&b).iter().cloned().collect();
            // one step of iterative refinement
            let r = &b - &a * DVector::from_column_slice(&h);
            let dh = chol.solve(&r);
            for (x, d) in h.iter_mut().zip(dh.iter()) {
                *x += d;
            }
            return h;
        }
    }
    cd_cyclic(view, 1e-15, 200_000)
}

/// Relative local suboptimality
/// `(G_k(h*) - G_k(h)) / (G_k(h*) - G_k(0))`, `0` when `h = 0` is already optimal.
pub fn measure_theta(view: &SubproblemView<'_>, h: &[f64]) -> f64 {
    let star = exact_local_solution(view);
    let g_h = view.objective_or_neg_inf(h);
    let g0 = view.objective_or_neg_inf(&vec![0.0; view.size()]);
    let g_star = view.objective_or_neg_inf(&star).max(g_h).max(g0);
    let denom = g_star - g0;
    if denom < 1e-14 {
        return 0.0;
    }
    ((g_star - g_h) / denom).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;
    use crate::subproblem::Shard;
    use crate::verify::{random_feasible_alpha, InstanceGenerator};

    struct Fixture {
        shard: Shard,
        alpha: Vec<f64>,
        v: Vec<f64>,
        loss: Loss,
        lambda: f64,
        n: usize,
    }

    impl Fixture {
        fn new(loss: Loss, n: usize, seed: u64) -> Self {
            let inst = InstanceGenerator::new(n, 6, 2, loss, 0.05).seed(seed).generate();
            let p = &inst.problem;
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let alpha_full = random_feasible_alpha(p, &mut rng);
            let v = p.shared_vector(&alpha_full);
            Self {
                shard: Shard::extract(p.data(), &inst.partition, 0),
                alpha: inst.partition.gather(0, &alpha_full),
                v,
                loss,
                lambda: p.lambda(),
                n: p.n(),
            }
        }

        fn view(&self, sigma_prime: f64) -> SubproblemView<'_> {
            SubproblemView::new(
                &self.shard.data,
                &self.alpha,
                &self.v,
                self.loss,
                self.lambda,
                self.n,
                2,
                sigma_prime,
            )
        }
    }

    fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        let r = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..300 {
            let a = hi - r * (hi - lo);
            let b = lo + r * (hi - lo);
            if f(a) >= f(b) {
                hi = b;
            } else {
                lo = a;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn cd_step_matches_golden_section() {
        for loss in Loss::ALL {
            for seed in 0..5 {
                let fx = Fixture::new(loss, 10, seed);
                let view = fx.view(2.0);
                let m = view.size();
                let h: Vec<f64> = vec![0.0; m];
                let xh = view.shard_mul(&h);
                for i in 0..m {
                    let delta = cd_step(&view, i, &h, &xh);
                    let (lo, hi) = loss.alpha_bounds(view.label(i));
                    let a = view.alpha()[i];
                    let along = |t: f64| {
                        let mut e = h.clone();
                        e[i] = t;
                        view.objective_or_neg_inf(&e)
                    };
                    let oracle = golden_max(along, (lo - a).max(-50.0), (hi - a).min(50.0));
                    assert!(
                        along(delta) >= along(oracle) - 1e-12,
                        "{loss}: delta {delta} vs oracle {oracle}"
                    );
                    assert!((delta - oracle).abs() < 1e-6 || along(delta) - along(oracle) > -1e-14);
                }
            }
        }
    }

    #[test]
    fn cd_on_single_point_is_exact_after_one_step() {
        let ds = Dataset::from_dense_columns(&[vec![0.6, 0.8]], vec![0.7]).unwrap();
        let alpha = [0.1];
        let v = [0.2, -0.1];
        let view = SubproblemView::new(&ds, &alpha, &v, Loss::Quadratic, 0.3, 5, 1, 1.0);
        let mut solver = LocalSolver::new(SolverConfig::new(SolverKind::Cd, 1), 0);
        let up = solver.solve(&view).unwrap();
        // closed form of the 1-D maximization
        let q = 1.0 / (0.3 * 25.0);
        let g = view.grad_block()[0];
        let expect = (-g - (0.1 - 0.7) / 5.0) / (q * 1.0 + 1.0 / 5.0);
        assert!((up.h[0] - expect).abs() < 1e-13);
        assert!(measure_theta(&view, &up.h) < 1e-12);
    }

    #[test]
    fn cd_zero_column_uses_conjugate_term_only() {
        let ds = Dataset::from_columns(2, vec![vec![]], vec![0.5]).unwrap();
        let alpha = [0.0];
        let v = [1.0, 1.0];
        let view = SubproblemView::new(&ds, &alpha, &v, Loss::Quadratic, 0.3, 4, 1, 1.0);
        // G(delta) = -(1/4)(delta^2/2 - 0.5 delta): maximized at delta = y
        assert!((cd_step(&view, 0, &[0.0], &[0.0, 0.0]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn hinge_cd_stays_at_boundary_when_pushed_outward() {
        let ds = Dataset::from_dense_columns(&[vec![0.5]], vec![1.0]).unwrap();
        let alpha = [1.0];
        // negative v makes the linear term push alpha upward
        let v = [-10.0];
        let view = SubproblemView::new(&ds, &alpha, &v, Loss::Hinge, 0.1, 2, 1, 1.0);
        assert_eq!(cd_step(&view, 0, &[0.0], &[0.0]), 0.0);
    }

    #[test]
    fn long_cd_is_near_exact() {
        for loss in Loss::ALL {
            let fx = Fixture::new(loss, 10, 3);
            let view = fx.view(2.0);
            let mut solver = LocalSolver::new(SolverConfig::new(SolverKind::Cd, 10_000), 0);
            let up = solver.solve(&view).unwrap();
            assert!(measure_theta(&view, &up.h) <= 1e-6, "{loss}");
        }
    }

    #[test]
    fn theta_extremes() {
        let fx = Fixture::new(Loss::Quadratic, 12, 1);
        let view = fx.view(2.0);
        let star = exact_local_solution(&view);
        assert!(measure_theta(&view, &star) < 1e-12);
        assert!((measure_theta(&view, &vec![0.0; view.size()]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn every_solver_never_worsens() {
        for loss in Loss::ALL {
            for kind in SolverKind::ALL {
                if !kind.supports(loss) {
                    continue;
                }
                for seed in 0..4 {
                    let fx = Fixture::new(loss, 16, seed);
                    for sp in [1.0, 2.0] {
                        let view = fx.view(sp);
                        for h_budget in [1, 3, 20] {
                            let cfg = SolverConfig::new(kind, h_budget).seed(seed);
                            let up = LocalSolver::new(cfg, 0).solve(&view).unwrap();
                            let g0 = view.objective(&vec![0.0; view.size()]).unwrap();
                            let gh = view.objective(&up.h).unwrap();
                            assert!(gh - g0 >= -1e-12, "{kind} {loss}: {gh} < {g0}");
                            let dv = view.delta_v(&up.h);
                            assert!(linalg::max_abs_diff(&dv, &up.delta_v) <= 1e-10);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn batch_solvers_converge_on_quadratic() {
        let fx = Fixture::new(Loss::Quadratic, 20, 2);
        let view = fx.view(2.0);
        for (kind, h) in [
            (SolverKind::Gd, 2000),
            (SolverKind::Cg, 40),
            (SolverKind::Lbfgs, 60),
            (SolverKind::Bb, 500),
            (SolverKind::Fista, 2000),
        ] {
            let up = LocalSolver::new(SolverConfig::new(kind, h), 0).solve(&view).unwrap();
            let theta = measure_theta(&view, &up.h);
            assert!(theta < 1e-6, "{kind}: theta = {theta}");
        }
    }

    #[test]
    fn fista_keeps_hinge_iterates_in_box() {
        let fx = Fixture::new(Loss::Hinge, 16, 5);
        let view = fx.view(2.0);
        let up = LocalSolver::new(SolverConfig::new(SolverKind::Fista, 50), 0)
            .solve(&view)
            .unwrap();
        for (i, (&a, &h)) in view.alpha().iter().zip(&up.h).enumerate() {
            let (lo, hi) = Loss::Hinge.alpha_bounds(view.label(i));
            assert!(a + h >= lo - 1e-15 && a + h <= hi + 1e-15);
        }
    }

    #[test]
    fn batch_solver_on_hinge_is_a_config_error() {
        let fx = Fixture::new(Loss::Hinge, 8, 0);
        let view = fx.view(1.0);
        for kind in [SolverKind::Gd, SolverKind::Cg, SolverKind::Lbfgs, SolverKind::Bb] {
            let err = LocalSolver::new(SolverConfig::new(kind, 5), 0).solve(&view);
            assert!(matches!(err, Err(Error::Config(_))));
        }
        assert!(SolverConfig::new(SolverKind::Cd, 0).validate().is_err());
    }

    #[test]
    fn gd_is_monotone_in_budget() {
        let fx = Fixture::new(Loss::Quadratic, 16, 7);
        let view = fx.view(2.0);
        let mut prev = f64::NEG_INFINITY;
        for h in 1..30 {
            let up = LocalSolver::new(SolverConfig::new(SolverKind::Gd, h), 0).solve(&view).unwrap();
            let g = view.objective(&up.h).unwrap();
            assert!(g >= prev - 1e-15);
            prev = g;
        }
    }
}
