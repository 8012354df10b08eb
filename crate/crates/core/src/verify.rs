//! Brute-force oracles and a randomized property harness for small instances.
//!
//! The oracles here deliberately avoid the code paths they check: conjugates
//! are computed by grid search over the primal loss, the reference dual
//! optimum uses its own coordinate steps and objective evaluation, and the
//! adversarial direction for the block lower bound comes from a separate
//! dense eigen-solve.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, Partition, PartitionStrategy};
use crate::engine::{self, RunConfig, SigmaPrime};
use crate::error::{Error, Result};
use crate::linalg;
use crate::losses::Loss;
use crate::problem::{DualState, Problem};
use crate::solvers::{self, LocalSolver, SolverConfig, SolverKind};
use crate::subproblem::{self, Shard, SubproblemView};

/// Random sparse instances with known structure.
#[derive(Clone, Debug)]
pub struct InstanceGenerator {
    pub n: usize,
    pub d: usize,
    pub machines: usize,
    pub loss: Loss,
    pub lambda: f64,
    pub seed: u64,
    pub density: f64,
    pub strategy: PartitionStrategy,
    /// Weight of a direction shared by all examples, in `[0, 1)`.
    pub correlation: f64,
}

#[derive(Clone, Debug)]
pub struct Instance {
    pub problem: Problem,
    pub partition: Partition,
}

impl InstanceGenerator {
    pub fn new(n: usize, d: usize, machines: usize, loss: Loss, lambda: f64) -> Self {
        Self {
            n,
            d,
            machines,
            loss,
            lambda,
            seed: 0,
            density: 0.6,
            strategy: PartitionStrategy::Random,
            correlation: 0.0,
        }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn density(mut self, density: f64) -> Self {
        self.density = density;
        self
    }

    pub fn strategy(mut self, strategy: PartitionStrategy) -> Self {
        self.strategy = strategy;
        self
    }

    pub fn correlated(mut self, correlation: f64) -> Self {
        self.correlation = correlation;
        self
    }

    /// Normalized data with labels from a noisy linear model (signs for the
    /// margin losses).
    pub fn dataset(&self) -> Result<Dataset> {
        if self.n == 0 || self.d == 0 {
            return Err(Error::InvalidArgument("instance needs n, d >= 1".into()));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::InvalidArgument(format!("density must lie in (0, 1], got {}", self.density)));
        }
        if !(0.0..1.0).contains(&self.correlation) {
            return Err(Error::InvalidArgument("correlation must lie in [0, 1)".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let w: Vec<f64> = (0..self.d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut base: Vec<f64> = (0..self.d).map(|_| rng.gen_range(0.2..1.0)).collect();
        let nb = linalg::norm(&base);
        linalg::scale(1.0 / nb, &mut base);
        let rho = self.correlation;
        let mut columns = Vec::with_capacity(self.n);
        let mut labels = Vec::with_capacity(self.n);
        for _ in 0..self.n {
            let mut dense = vec![0.0; self.d];
            for x in dense.iter_mut() {
                if rng.gen_bool(self.density) {
                    *x = rng.gen_range(-1.0..1.0);
                }
            }
            if dense.iter().all(|&x| x == 0.0) {
                let j = rng.gen_range(0..self.d);
                dense[j] = rng.gen_range(0.1..1.0);
            }
            if rho > 0.0 {
                for (x, b) in dense.iter_mut().zip(&base) {
                    *x = rho * b + (1.0 - rho) * *x;
                }
            }
            let score = linalg::dot(&dense, &w) + 0.1 * rng.gen_range(-1.0..1.0);
            labels.push(if self.loss.requires_binary_labels() {
                if score >= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            } else {
                score
            });
            columns.push(
                dense
                    .into_iter()
                    .enumerate()
                    .filter(|(_, x)| *x != 0.0)
                    .collect::<Vec<_>>(),
            );
        }
        Ok(Dataset::from_columns(self.d, columns, labels)?.normalize())
    }

    pub fn try_generate(&self) -> Result<Instance> {
        let data = self.dataset()?;
        let partition = Partition::new(self.n, self.machines, self.strategy, self.seed)?;
        let problem = Problem::new(data, self.loss, self.lambda)?;
        Ok(Instance { problem, partition })
    }

    /// [`try_generate`](Self::try_generate), panicking on invalid settings.
    pub fn generate(&self) -> Instance {
        self.try_generate().expect("invalid instance generator settings")
    }
}

/// A random dual point inside the feasible set; about one coordinate in ten
/// sits exactly on a finite bound.
pub fn random_feasible_alpha(problem: &Problem, rng: &mut impl Rng) -> Vec<f64> {
    let loss = problem.loss();
    problem
        .data()
        .labels()
        .iter()
        .map(|&y| {
            let (lo, hi) = loss.alpha_bounds(y);
            match (lo.is_finite(), hi.is_finite()) {
                (true, true) => match rng.gen_range(0..20) {
                    0 => lo,
                    1 => hi,
                    _ => rng.gen_range(lo..=hi),
                },
                (true, false) => {
                    if rng.gen_range(0..10) == 0 {
                        lo
                    } else {
                        lo + rng.gen_range(0.0..2.0)
                    }
                }
                (false, true) => {
                    if rng.gen_range(0..10) == 0 {
                        hi
                    } else {
                        hi - rng.gen_range(0.0..2.0)
                    }
                }
                (false, false) => rng.gen_range(-2.0..2.0),
            }
        })
        .collect()
}

/// Central differences `(f(x + s e_i) - f(x - s e_i)) / 2s`.
pub fn finite_difference_grad(f: impl Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let up = f(&probe);
            probe[i] = x[i] - step;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// `sup_s { s b - l(s) }` by grid search over the primal loss with golden-
/// section refinement around the best grid point. The grid is widened until
/// the maximizer is interior or the value stops growing; if it keeps growing
/// the conjugate is reported as `+inf`.
pub fn oracle_conjugate(loss: Loss, y: f64, b: f64, resolution: usize) -> f64 {
    let resolution = resolution.max(11);
    let f = |s: f64| s * b - loss.value(y, s);
    let mut radius = 4.0 + 2.0 * b.abs() + y.abs();
    let mut previous: Option<f64> = None;
    for _ in 0..64 {
        let step = 2.0 * radius / (resolution - 1) as f64;
        let mut best = 0;
        let mut best_val = f64::NEG_INFINITY;
        for j in 0..resolution {
            let val = f(-radius + j as f64 * step);
            if val > best_val {
                best_val = val;
                best = j;
            }
        }
        let centre = -radius + best as f64 * step;
        let value = golden_max(&f, centre - step, centre + step).max(best_val);
        let interior = best > 0 && best + 1 < resolution;
        if interior {
            return value;
        }
        if let Some(p) = previous {
            if value - p <= 1e-12 * (1.0 + value.abs()) {
                return value;
            }
        }
        previous = Some(value);
        radius *= 2.0;
    }
    f64::INFINITY
}

fn golden_max(f: &impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - r * (hi - lo);
    let mut b = lo + r * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    for _ in 0..200 {
        if fa >= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - r * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + r * (hi - lo);
            fb = f(b);
        }
    }
    fa.max(fb)
}

/// Largest instance accepted by [`oracle_dense_dual_opt`].
pub const ORACLE_MAX_N: usize = 40;

#[derive(Clone, Debug, PartialEq)]
pub struct DualOptimum {
    pub alpha: Vec<f64>,
    pub dual: f64,
    /// Duality gap achieved at `alpha`.
    pub gap: f64,
    pub sweeps: usize,
    pub converged: bool,
}

/// `l^*(-beta)` in closed form, written out independently of [`Loss::conjugate`].
fn oracle_dual_term(loss: Loss, y: f64, beta: f64) -> f64 {
    let p = y * beta;
    match loss {
        Loss::Quadratic => 0.5 * beta * beta - y * beta,
        Loss::Hinge => -p,
        Loss::SquaredHinge => -p + 0.25 * beta * beta,
        Loss::Logistic => {
            let h = |x: f64| if x > 0.0 { x * x.ln() } else { 0.0 };
            h(p) + h(1.0 - p)
        }
    }
}

/// `argmin_beta l^*(-beta) + a/2 beta^2 + c beta` over the feasible set.
fn oracle_coordinate(loss: Loss, y: f64, a: f64, c: f64, current: f64) -> f64 {
    match loss {
        Loss::Quadratic => (y - c) / (1.0 + a),
        Loss::Hinge => {
            let (lo, hi) = (y.min(0.0), y.max(0.0));
            if a > 0.0 {
                ((y - c) / a).clamp(lo, hi)
            } else if c - y > 0.0 {
                lo
            } else if c - y < 0.0 {
                hi
            } else {
                current
            }
        }
        Loss::SquaredHinge => y * (y * (y - c) / (a + 0.5)).max(0.0),
        Loss::Logistic => {
            // p = y beta in (0, 1): ln(p / (1 - p)) + a p + c y = 0
            let (mut lo, mut hi) = (0.0f64, 1.0f64);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                let g = (mid / (1.0 - mid)).ln() + a * mid + c * y;
                if g > 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            y * 0.5 * (lo + hi)
        }
    }
}

fn oracle_objectives(problem: &Problem, alpha: &[f64]) -> (f64, f64, Vec<f64>) {
    let data = problem.data();
    let n = problem.n() as f64;
    let lambda = problem.lambda();
    let mut v = vec![0.0; problem.d()];
    for (i, col) in data.columns().enumerate() {
        for (&j, &x) in col.indices.iter().zip(col.values) {
            v[j] += x * alpha[i] / (lambda * n);
        }
    }
    let half_sq = 0.5 * v.iter().map(|x| x * x).sum::<f64>();
    let mut loss_sum = 0.0;
    let mut conj_sum = 0.0;
    for (i, col) in data.columns().enumerate() {
        let y = data.label(i);
        let margin: f64 = col.indices.iter().zip(col.values).map(|(&j, &x)| x * v[j]).sum();
        loss_sum += problem.loss().value(y, margin);
        conj_sum += oracle_dual_term(problem.loss(), y, alpha[i]);
    }
    let primal = loss_sum / n + lambda * half_sq;
    let dual = -conj_sum / n - lambda * half_sq;
    (primal, dual, v)
}

/// Reference dual optimum by cyclic exact coordinate ascent, run until the
/// duality gap is below `1e-13` and a full sweep no longer moves any
/// coordinate (or the sweep cap is hit, in which case the achieved gap is
/// reported and `converged` is `gap <= 1e-12`).
pub fn oracle_dense_dual_opt(problem: &Problem) -> Result<DualOptimum> {
    let n = problem.n();
    if n > ORACLE_MAX_N {
        return Err(Error::InvalidArgument(format!(
            "the dense dual oracle is limited to n <= {ORACLE_MAX_N}, got {n}"
        )));
    }
    const MAX_SWEEPS: usize = 2_000_000;
    let data = problem.data();
    let lambda = problem.lambda();
    let nf = n as f64;
    let loss = problem.loss();
    let mut alpha = vec![0.0; n];
    let norms: Vec<f64> = data.columns().map(|c| c.values.iter().map(|x| x * x).sum()).collect();
    let mut sweeps = 0;
    let mut last_move = f64::INFINITY;
    while sweeps < MAX_SWEEPS {
        let (primal, dual, mut v) = oracle_objectives(problem, &alpha);
        let scale = alpha.iter().fold(1.0f64, |m, a| m.max(a.abs()));
        if primal - dual <= 1e-13 && last_move <= 1e-15 * scale {
            break;
        }
        last_move = 0.0;
        for i in 0..n {
            let col = data.column(i);
            let xv: f64 = col.indices.iter().zip(col.values).map(|(&j, &x)| x * v[j]).sum();
            let a = norms[i] / (lambda * nf);
            let c = xv - a * alpha[i];
            let beta = oracle_coordinate(loss, data.label(i), a, c, alpha[i]);
            let delta = beta - alpha[i];
            if delta != 0.0 {
                for (&j, &x) in col.indices.iter().zip(col.values) {
                    v[j] += x * delta / (lambda * nf);
                }
                alpha[i] = beta;
            }
            last_move = last_move.max(delta.abs());
        }
        sweeps += 1;
    }
    let (primal, dual, _) = oracle_objectives(problem, &alpha);
    let gap = primal - dual;
    Ok(DualOptimum {
        alpha,
        dual,
        gap,
        sweeps,
        converged: gap <= 1e-12,
    })
}

/// Direction `h` maximizing `h^T X^T X h / h^T G h` (block-diagonal `G`),
/// from a dense Cholesky-whitened eigenproblem. Returns `None` when a
/// block Gram matrix is singular.
pub fn oracle_worst_direction(data: &Dataset, partition: &Partition) -> Option<Vec<f64>> {
    let n = data.n();
    let mut x = DMatrix::<f64>::zeros(data.d(), n);
    for (i, c) in data.columns().enumerate() {
        for (&j, &v) in c.indices.iter().zip(c.values) {
            x[(j, i)] = v;
        }
    }
    let full = x.transpose() * &x;
    let mut g = DMatrix::<f64>::zeros(n, n);
    for block in partition.blocks() {
        for &i in block {
            for &j in block {
                g[(i, j)] = full[(i, j)];
            }
        }
    }
    let ridge = 1e-10 * (0..n).map(|i| g[(i, i)]).fold(0.0, f64::max).max(1e-300);
    let chol = (g + DMatrix::identity(n, n) * ridge).cholesky()?;
    let l = chol.l();
    let l_inv = l.clone().try_inverse()?;
    let m = &l_inv * &full * l_inv.transpose();
    let eig = m.symmetric_eigen();
    let top = (0..n).max_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]))?;
    let u = eig.eigenvectors.column(top).into_owned();
    let h = l_inv.transpose() * u;
    Some(h.iter().cloned().collect())
}

/// Settings of [`property_suite`].
#[derive(Clone, Debug)]
pub struct SuiteOptions {
    pub seed: u64,
    pub trials: usize,
    /// Random `(alpha, h)` pairs per trial for the lower-bound check.
    pub pairs: usize,
    /// Negative control: run the lower-bound check with
    /// `sigma' = scale * sigma'_min` instead of `nu K`.
    pub sigma_prime_scale: Option<f64>,
    /// Where to write counterexamples (LIBSVM data plus a config file).
    pub dump_dir: Option<PathBuf>,
    pub threads: usize,
}

impl SuiteOptions {
    pub fn new(seed: u64, trials: usize) -> Self {
        Self {
            seed,
            trials,
            pairs: 20,
            sigma_prime_scale: None,
            dump_dir: None,
            threads: std::thread::available_parallelism().map_or(1, |p| p.get()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub trial: usize,
    pub check: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default)]
pub struct SuiteReport {
    pub outcomes: Vec<CheckOutcome>,
    pub dumps: Vec<PathBuf>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckOutcome> {
        self.outcomes.iter().filter(|o| !o.passed)
    }

    pub fn failed(&self, check: &str) -> bool {
        self.failures().any(|o| o.check == check)
    }

    /// One `PASS`/`FAIL` line per check name with counts, then one line per
    /// failure.
    pub fn summary(&self) -> String {
        let mut names: Vec<&'static str> = Vec::new();
        for o in &self.outcomes {
            if !names.contains(&o.check) {
                names.push(o.check);
            }
        }
        let mut out = String::new();
        for name in names {
            let all: Vec<_> = self.outcomes.iter().filter(|o| o.check == name).collect();
            let ok = all.iter().filter(|o| o.passed).count();
            let tag = if ok == all.len() { "PASS" } else { "FAIL" };
            let _ = writeln!(out, "{tag} {name} ({ok}/{})", all.len());
        }
        for f in self.failures() {
            let _ = writeln!(out, "  trial {} {}: {}", f.trial, f.check, f.detail);
        }
        out
    }
}

/// Parameters of one random trial, enough to replay it.
#[derive(Clone, Debug)]
struct TrialSpec {
    generator: InstanceGenerator,
    nu: f64,
}

fn trial_spec(seed: u64, trial: usize) -> TrialSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    let loss = Loss::ALL[trial % Loss::ALL.len()];
    let machines = rng.gen_range(2..=4);
    let n = rng.gen_range(2 * machines.max(3)..=ORACLE_MAX_N);
    let d = rng.gen_range(2..=10);
    let lambda = 10f64.powf(rng.gen_range(-2.5..0.0));
    let nu = if rng.gen_bool(0.5) { 1.0 } else { 1.0 / machines as f64 };
    let correlation = if rng.gen_bool(0.3) { 0.8 } else { 0.0 };
    let density = rng.gen_range(0.3..1.0);
    let generator = InstanceGenerator::new(n, d, machines, loss, lambda)
        .seed(rng.gen())
        .density(density)
        .correlated(correlation);
    TrialSpec { generator, nu }
}

struct Checker {
    trial: usize,
    outcomes: Vec<CheckOutcome>,
}

impl Checker {
    fn record(&mut self, check: &'static str, passed: bool, detail: impl FnOnce() -> String) {
        self.outcomes.push(CheckOutcome {
            trial: self.trial,
            check,
            passed,
            detail: if passed { String::new() } else { detail() },
        });
    }

    fn record_result(&mut self, check: &'static str, r: Result<(bool, String)>) {
        match r {
            Ok((passed, detail)) => self.record(check, passed, || detail),
            Err(e) => self.record(check, false, || format!("error: {e}")),
        }
    }
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn run_trial(opts: &SuiteOptions, trial: usize) -> (Vec<CheckOutcome>, Option<PathBuf>) {
    let spec = trial_spec(opts.seed, trial);
    let mut ck = Checker {
        trial,
        outcomes: Vec::new(),
    };
    let inst = match spec.generator.try_generate() {
        Ok(i) => i,
        Err(e) => {
            ck.record("instance", false, || e.to_string());
            return (ck.outcomes, None);
        }
    };
    let (p, part) = (&inst.problem, &inst.partition);
    let k = part.num_blocks();
    let nu = spec.nu;
    let safe = nu * k as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.generator.seed ^ 0x5eed);

    let sp_min = subproblem::sigma_prime_min(p.data(), part, nu);
    ck.record_result(
        "sigma_prime_safe",
        sp_min.as_ref().map(|&s| (s <= safe + 1e-8, format!("sigma'_min = {s} > nu K = {safe}"))).map_err(|e| Error::Config(e.to_string())),
    );

    let sigma_prime = match (opts.sigma_prime_scale, &sp_min) {
        (Some(scale), Ok(s)) => scale * s,
        _ => safe,
    };
    ck.record_result("lower_bound", check_lower_bound(p, part, nu, sigma_prime, opts.pairs, &mut rng));
    ck.record_result("coincidence", check_coincidence(p, part, safe, &mut rng));
    ck.record_result("gradients", check_gradients(p, part, safe, &mut rng));
    ck.record_result("weak_duality", check_weak_duality(p, &mut rng));
    ck.record_result("conjugate", check_conjugate(p.loss(), &mut rng));
    ck.record_result("solver_contract", check_solvers(p, part, safe, &mut rng));
    ck.record_result("engine", check_engine(p, part, nu, trial as u64));

    let failed = ck.outcomes.iter().any(|o| !o.passed);
    let dump = match (&opts.dump_dir, failed) {
        (Some(dir), true) => dump_counterexample(dir, trial, &spec, &inst, sigma_prime).ok(),
        _ => None,
    };
    (ck.outcomes, dump)
}

fn check_lower_bound(
    p: &Problem,
    part: &Partition,
    nu: f64,
    sigma_prime: f64,
    pairs: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(bool, String)> {
    let mut worst = f64::INFINITY;
    let mut candidates: Vec<(Vec<f64>, Vec<f64>)> = (0..pairs)
        .map(|_| {
            let a = random_feasible_alpha(p, rng);
            let b = random_feasible_alpha(p, rng);
            let h = linalg::sub(&b, &a);
            (a, h)
        })
        .collect();
    if let Some(dir) = oracle_worst_direction(p.data(), part) {
        // Start from the middle of the feasible set and scale the direction so
        // that alpha + h stays feasible.
        let loss = p.loss();
        let centre: Vec<f64> = p
            .data()
            .labels()
            .iter()
            .map(|&y| {
                let (lo, hi) = loss.alpha_bounds(y);
                match (lo.is_finite(), hi.is_finite()) {
                    (true, true) => 0.5 * (lo + hi),
                    (true, false) => lo + 1.0,
                    (false, true) => hi - 1.0,
                    (false, false) => 0.0,
                }
            })
            .collect();
        let peak = dir.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if peak > 0.0 {
            let h: Vec<f64> = dir.iter().map(|x| 0.49 * x / peak).collect();
            candidates.push((centre, h));
        }
    }
    for (alpha, h) in &candidates {
        let slack = subproblem::lower_bound_slack(p, part, nu, sigma_prime, alpha, h)?;
        worst = worst.min(slack);
    }
    Ok((worst >= -1e-9, format!("slack {worst:e} with sigma' = {sigma_prime}")))
}

fn check_coincidence(p: &Problem, part: &Partition, sigma_prime: f64, rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let shards = Shard::all(p.data(), part);
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let alpha = random_feasible_alpha(p, rng);
        let state = p.state(alpha.clone())?;
        let blocks: Vec<Vec<f64>> = (0..part.num_blocks()).map(|k| part.gather(k, &alpha)).collect();
        let views = subproblem::views_at(p, &shards, &blocks, &state, sigma_prime);
        let mut sum = 0.0;
        for v in &views {
            sum += v.objective(&vec![0.0; v.size()])?;
        }
        let dual = p.dual_value(&state)?;
        let (_, oracle_dual, _) = oracle_objectives(p, &alpha);
        worst = worst.max((sum - dual).abs()).max((dual - oracle_dual).abs());
    }
    Ok((worst <= 1e-9, format!("max deviation {worst:e}")))
}

fn check_gradients(p: &Problem, part: &Partition, sigma_prime: f64, rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let alpha = random_feasible_alpha(p, rng);
    let state = p.state(alpha.clone())?;
    let analytic = p.smooth_part_grad(&state.v);
    let fd = finite_difference_grad(|a| p.smooth_part(&p.shared_vector(a)), &alpha, 1e-5);
    let scale = analytic.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let err_full = linalg::max_abs_diff(&fd, &analytic) / scale;

    let k = rng.gen_range(0..part.num_blocks());
    let shard = Shard::extract(p.data(), part, k);
    let block = part.gather(k, &alpha);
    let view = SubproblemView::new(&shard.data, &block, &state.v, p.loss(), p.lambda(), p.n(), part.num_blocks(), sigma_prime);
    let h: Vec<f64> = (0..view.size()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let analytic = view.smooth_gradient(&h);
    let fd = finite_difference_grad(|x| view.smooth_value(x), &h, 1e-5);
    let scale = analytic.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let err_local = linalg::max_abs_diff(&fd, &analytic) / scale;
    Ok((
        err_full <= 1e-6 && err_local <= 1e-6,
        format!("relative errors: full {err_full:e}, local {err_local:e}"),
    ))
}

fn check_weak_duality(p: &Problem, rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let mut worst = f64::INFINITY;
    for _ in 0..5 {
        let state = p.state(random_feasible_alpha(p, rng))?;
        let gap = p.duality_gap(&state)?;
        let w = p.primal_from_dual(&state);
        let (primal, _, _) = oracle_objectives(p, &state.alpha);
        if !rel_close(p.primal_value(&w), primal, 1e-12) {
            return Ok((false, format!("primal {} vs oracle {primal}", p.primal_value(&w))));
        }
        worst = worst.min(gap);
    }
    Ok((worst >= -1e-10, format!("negative gap {worst:e}")))
}

fn check_conjugate(loss: Loss, rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    for _ in 0..4 {
        let y = if loss.requires_binary_labels() {
            if rng.gen_bool(0.5) {
                1.0
            } else {
                -1.0
            }
        } else {
            rng.gen_range(-2.0..2.0)
        };
        let (lo, hi) = loss.conjugate_domain(y);
        let b = rng.gen_range(lo.max(-3.0)..=hi.min(3.0));
        let closed = loss.conjugate_value(y, b)?;
        let oracle = oracle_conjugate(loss, y, b, 2001);
        if !((closed - oracle).abs() <= 1e-6) {
            return Ok((false, format!("y = {y}, b = {b}: closed form {closed} vs grid {oracle}")));
        }
    }
    Ok((true, String::new()))
}

fn check_solvers(p: &Problem, part: &Partition, sigma_prime: f64, rng: &mut ChaCha8Rng) -> Result<(bool, String)> {
    let alpha = random_feasible_alpha(p, rng);
    let state = p.state(alpha.clone())?;
    let k = rng.gen_range(0..part.num_blocks());
    let shard = Shard::extract(p.data(), part, k);
    let block = part.gather(k, &alpha);
    let view = SubproblemView::new(&shard.data, &block, &state.v, p.loss(), p.lambda(), p.n(), part.num_blocks(), sigma_prime);
    let g0 = view.objective(&vec![0.0; view.size()])?;
    for kind in SolverKind::ALL {
        if !kind.supports(p.loss()) {
            continue;
        }
        let budget = rng.gen_range(1..=2 * view.size());
        let cfg = SolverConfig::new(kind, budget).seed(rng.gen());
        let up = LocalSolver::new(cfg, k).solve(&view)?;
        let gh = match view.objective(&up.h) {
            Ok(g) => g,
            Err(e) => return Ok((false, format!("{kind}: infeasible update ({e})"))),
        };
        if gh - g0 < -1e-12 {
            return Ok((false, format!("{kind} with H = {budget}: G(h) = {gh} < G(0) = {g0}")));
        }
        let dv = view.delta_v(&up.h);
        if linalg::max_abs_diff(&dv, &up.delta_v) > 1e-10 {
            return Ok((false, format!("{kind}: delta_v inconsistent with h")));
        }
        let theta = solvers::measure_theta(&view, &up.h);
        if !(0.0..=1.0).contains(&theta) {
            return Ok((false, format!("{kind}: theta = {theta}")));
        }
    }
    Ok((true, String::new()))
}

fn check_engine(p: &Problem, part: &Partition, nu: f64, seed: u64) -> Result<(bool, String)> {
    let h = part.sizes().into_iter().max().unwrap_or(1);
    let mut cfg = RunConfig::new(part.num_blocks(), SolverConfig::new(SolverKind::Cd, h));
    cfg.nu = nu;
    cfg.sigma_prime = SigmaPrime::Auto;
    cfg.rounds = 4;
    cfg.seed = seed;
    cfg.keep_history = true;
    let rep = engine::run(p, part, &cfg)?;
    for st in rep.history.as_deref().unwrap_or_default() {
        let err = p.consistency_error(st);
        if err > 1e-8 {
            return Ok((false, format!("shared vector drifted by {err:e}")));
        }
    }
    for w in rep.metrics.windows(2) {
        if w[1].dual < w[0].dual - 1e-9 {
            return Ok((false, format!("dual decreased at round {}", w[1].round)));
        }
    }
    Ok((true, String::new()))
}

fn dump_counterexample(dir: &Path, trial: usize, spec: &TrialSpec, inst: &Instance, sigma_prime: f64) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let data_path = dir.join(format!("trial{trial}.libsvm"));
    inst.problem.data().write_libsvm(std::io::BufWriter::new(std::fs::File::create(&data_path)?))?;
    let g = &spec.generator;
    let cfg = format!(
        "data={}\nloss={}\nlambda={}\nmachines={}\nnu={}\nsigma_prime={}\npartition={}\npartition_seed={}\n",
        data_path.display(),
        g.loss,
        g.lambda,
        g.machines,
        spec.nu,
        sigma_prime,
        g.strategy,
        g.seed
    );
    let cfg_path = dir.join(format!("trial{trial}.cfg"));
    std::fs::write(&cfg_path, cfg)?;
    Ok(cfg_path)
}

/// Runs every module invariant over `trials` random small instances.
/// Failures are report content, not errors.
pub fn property_suite(opts: &SuiteOptions) -> SuiteReport {
    let threads = opts.threads.clamp(1, opts.trials.max(1));
    let mut results: Vec<Option<(Vec<CheckOutcome>, Option<PathBuf>)>> = (0..opts.trials).map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunks: Vec<Vec<usize>> = (0..threads)
            .map(|t| (t..opts.trials).step_by(threads).collect())
            .collect();
        let handles: Vec<_> = chunks
            .into_iter()
            .map(|idx| scope.spawn(move || idx.into_iter().map(|i| (i, run_trial(opts, i))).collect::<Vec<_>>()))
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("property trial panicked") {
                results[i] = Some(r);
            }
        }
    });
    let mut report = SuiteReport::default();
    for (outcomes, dump) in results.into_iter().flatten() {
        report.outcomes.extend(outcomes);
        report.dumps.extend(dump);
    }
    report
}

/// Convenience for tests: a consistent dual state at a random feasible point.
pub fn random_state(problem: &Problem, rng: &mut impl Rng) -> DualState {
    let alpha = random_feasible_alpha(problem, rng);
    let v = problem.shared_vector(&alpha);
    DualState { alpha, v }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conjugate_oracle_examples() {
        assert!((oracle_conjugate(Loss::Quadratic, 1.0, 1.0, 2001) - 1.5).abs() < 1e-9);
        assert!(oracle_conjugate(Loss::Hinge, 1.0, 0.5, 2001).is_infinite());
        assert!(oracle_conjugate(Loss::SquaredHinge, 1.0, 0.5, 2001).is_infinite());
        for loss in Loss::ALL {
            let (lo, hi) = loss.conjugate_domain(-1.0);
            let b = if lo.is_finite() && hi.is_finite() { 0.5 * (lo + hi) } else { 0.3 };
            assert!(oracle_conjugate(loss, -1.0, b, 2001).is_finite(), "{loss}");
        }
        // boundary point of the logistic domain: the sup is approached at infinity
        assert!(oracle_conjugate(Loss::Logistic, 1.0, -1.0, 2001).abs() < 1e-9);
        assert!(oracle_conjugate(Loss::Hinge, 1.0, 0.0, 2001).abs() < 1e-12);
    }

    #[test]
    fn fd_of_half_norm() {
        let g = finite_difference_grad(|x| 0.5 * linalg::norm_sq(x), &[1.0, 0.0, 0.0], 1e-5);
        assert!(linalg::max_abs_diff(&g, &[1.0, 0.0, 0.0]) < 1e-9);
    }

    #[test]
    fn dual_oracle_single_example() {
        let ds = Dataset::from_dense_columns(&[vec![0.6, 0.3]], vec![0.8]).unwrap();
        let lambda = 0.3;
        let p = Problem::new(ds, Loss::Quadratic, lambda).unwrap();
        let opt = oracle_dense_dual_opt(&p).unwrap();
        let expect = 0.8 / (1.0 + 0.45 / lambda);
        assert!((opt.alpha[0] - expect).abs() < 1e-10);
        assert!(opt.gap <= 1e-10 && opt.converged);
    }

    #[test]
    fn dual_oracle_certifies_and_respects_boxes() {
        for loss in Loss::ALL {
            let inst = InstanceGenerator::new(25, 6, 1, loss, 0.05).seed(3).generate();
            let opt = oracle_dense_dual_opt(&inst.problem).unwrap();
            assert!(opt.gap <= 1e-10, "{loss}: gap {}", opt.gap);
            let gap = inst.problem.duality_gap(&inst.problem.state(opt.alpha.clone()).unwrap()).unwrap();
            assert!(gap <= 1e-10, "{loss}: problem gap {gap}");
            for (i, &a) in opt.alpha.iter().enumerate() {
                let (lo, hi) = loss.alpha_bounds(inst.problem.data().label(i));
                assert!(a >= lo - 1e-15 && a <= hi + 1e-15);
            }
        }
        let big = InstanceGenerator::new(41, 3, 1, Loss::Quadratic, 0.1).generate();
        assert!(oracle_dense_dual_opt(&big.problem).is_err());
    }

    #[test]
    fn generator_invariants() {
        let inst = InstanceGenerator::new(50, 7, 3, Loss::Hinge, 0.1).seed(1).density(0.2).generate();
        let data = inst.problem.data();
        assert!(data.max_column_norm() <= 1.0 + 1e-12);
        assert!(data.labels().iter().all(|&y| y == 1.0 || y == -1.0));
        assert!(data.columns().all(|c| c.nnz() > 0));
        assert_eq!(inst.partition.num_blocks(), 3);
    }

    #[test]
    fn empty_suite_passes() {
        let rep = property_suite(&SuiteOptions::new(1, 0));
        assert!(rep.passed() && rep.outcomes.is_empty());
    }

    #[test]
    fn short_suite_passes() {
        let rep = property_suite(&SuiteOptions::new(7, 8));
        assert!(rep.passed(), "{}", rep.summary());
    }
}
