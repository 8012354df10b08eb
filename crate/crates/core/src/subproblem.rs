//! The data-local subproblem solved by machine `k` in every round, and the
//! spectral quantities that control how aggressively local updates may be
//! combined.
//!
//! Given the shared vector `v` and the local dual block `alpha_[k]`, machine
//! `k` maximizes over `h` (supported on its block `P_k`)
//!
//! ```text
//! G_k(h) = -lambda/K g^*(v) - <X_[k]^T grad g^*(v) / n, h>
//!          - lambda sigma'/2 ||X_[k] h / (lambda n)||^2 - R_k(alpha_[k] + h)
//! R_k(beta) = 1/n sum_{i in P_k} l_i^*(-beta_i)
//! ```
//!
//! At `h = 0` the subproblems sum to the dual objective `D(alpha)`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, Partition};
use crate::error::{Error, Result};
use crate::linalg;
use crate::losses::Loss;
use crate::problem::{DualState, Problem};

/// The examples of one machine, with the global index of each local column.
#[derive(Clone, Debug)]
pub struct Shard {
    pub data: Dataset,
    pub indices: Vec<usize>,
}

impl Shard {
    pub fn extract(data: &Dataset, partition: &Partition, k: usize) -> Self {
        let indices = partition.block(k).to_vec();
        Self {
            data: data.select(&indices),
            indices,
        }
    }

    pub fn all(data: &Dataset, partition: &Partition) -> Vec<Shard> {
        (0..partition.num_blocks())
            .map(|k| Self::extract(data, partition, k))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Everything machine `k` needs to evaluate and maximize `G_k` in one round.
#[derive(Clone, Debug)]
pub struct SubproblemView<'a> {
    shard: &'a Dataset,
    loss: Loss,
    lambda: f64,
    n: usize,
    machines: usize,
    sigma_prime: f64,
    alpha: &'a [f64],
    grad_block: Vec<f64>,
    f_share: f64,
}

impl<'a> SubproblemView<'a> {
    /// Builds the view from the shared vector `v`; precomputes
    /// `X_[k]^T grad g^*(v) / n`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        shard: &'a Dataset,
        alpha: &'a [f64],
        v: &[f64],
        loss: Loss,
        lambda: f64,
        n: usize,
        machines: usize,
        sigma_prime: f64,
    ) -> Self {
        assert_eq!(alpha.len(), shard.n(), "alpha block does not match shard");
        assert_eq!(v.len(), shard.d(), "shared vector does not match feature dimension");
        let inv_n = 1.0 / n as f64;
        // grad g^*(v) = v for the squared norm
        let grad_block = shard.columns().map(|c| c.dot(v) * inv_n).collect();
        let f_share = lambda / machines as f64 * 0.5 * linalg::norm_sq(v);
        Self {
            shard,
            loss,
            lambda,
            n,
            machines,
            sigma_prime,
            alpha,
            grad_block,
            f_share,
        }
    }

    pub fn size(&self) -> usize {
        self.alpha.len()
    }

    pub fn shard(&self) -> &Dataset {
        self.shard
    }

    pub fn loss(&self) -> Loss {
        self.loss
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn machines(&self) -> usize {
        self.machines
    }

    pub fn sigma_prime(&self) -> f64 {
        self.sigma_prime
    }

    pub fn alpha(&self) -> &[f64] {
        self.alpha
    }

    pub fn grad_block(&self) -> &[f64] {
        &self.grad_block
    }

    pub fn f_share(&self) -> f64 {
        self.f_share
    }

    pub fn label(&self, i: usize) -> f64 {
        self.shard.label(i)
    }

    /// `sigma' / (lambda n^2)`: the coefficient of `||X_[k] h||^2 / 2` in `-G_k`.
    pub fn curvature(&self) -> f64 {
        self.sigma_prime / (self.lambda * (self.n as f64).powi(2))
    }

    /// `X_[k] h`
    pub fn shard_mul(&self, h: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.shard.d()];
        for (i, &hi) in h.iter().enumerate() {
            if hi != 0.0 {
                self.shard.column(i).axpy_into(hi, &mut out);
            }
        }
        out
    }

    /// `Delta v = X_[k] h / (lambda n)`
    pub fn delta_v(&self, h: &[f64]) -> Vec<f64> {
        let mut dv = self.shard_mul(h);
        linalg::scale(1.0 / (self.lambda * self.n as f64), &mut dv);
        dv
    }

    /// `R_k(alpha_[k] + h)`, or `None` if the shifted block is infeasible.
    pub fn conjugate_term(&self, h: &[f64]) -> Option<f64> {
        let mut sum = 0.0;
        for (i, (&a, &hi)) in self.alpha.iter().zip(h).enumerate() {
            sum += self.loss.dual_term(self.label(i), a + hi)?;
        }
        Some(sum / self.n as f64)
    }

    /// The smooth part of `G_k`, given `xh = X_[k] h`.
    pub fn smooth_value_with(&self, h: &[f64], xh: &[f64]) -> f64 {
        -self.f_share - linalg::dot(&self.grad_block, h) - 0.5 * self.curvature() * linalg::norm_sq(xh)
    }

    pub fn smooth_value(&self, h: &[f64]) -> f64 {
        self.smooth_value_with(h, &self.shard_mul(h))
    }

    /// `G_k(h)`; a domain error when `alpha_[k] + h` is infeasible.
    pub fn objective(&self, h: &[f64]) -> Result<f64> {
        let xh = self.shard_mul(h);
        self.objective_with(h, &xh)
    }

    pub fn objective_with(&self, h: &[f64], xh: &[f64]) -> Result<f64> {
        let r = self.conjugate_term(h).ok_or_else(|| {
            let (i, value) = self
                .alpha
                .iter()
                .zip(h)
                .enumerate()
                .map(|(i, (a, hi))| (i, a + hi))
                .find(|&(i, b)| self.loss.dual_term(self.label(i), b).is_none())
                .expect("some coordinate is infeasible");
            Error::Domain {
                loss: self.loss.name(),
                index: Some(i),
                value,
            }
        })?;
        Ok(self.smooth_value_with(h, xh) - r)
    }

    /// `G_k(h)` with `-inf` for infeasible points.
    pub fn objective_or_neg_inf(&self, h: &[f64]) -> f64 {
        self.objective(h).unwrap_or(f64::NEG_INFINITY)
    }

    /// Gradient of the smooth part: `-grad_block - sigma'/(lambda n^2) X_[k]^T X_[k] h`.
    pub fn smooth_gradient(&self, h: &[f64]) -> Vec<f64> {
        let xh = self.shard_mul(h);
        self.smooth_gradient_with(&xh)
    }

    pub fn smooth_gradient_with(&self, xh: &[f64]) -> Vec<f64> {
        let q = self.curvature();
        self.shard
            .columns()
            .zip(&self.grad_block)
            .map(|(c, g)| -g - q * c.dot(xh))
            .collect()
    }
}

/// Builds the subproblem views of all machines at a common dual state.
pub fn views_at<'a>(
    problem: &Problem,
    shards: &'a [Shard],
    alpha_blocks: &'a [Vec<f64>],
    state: &DualState,
    sigma_prime: f64,
) -> Vec<SubproblemView<'a>> {
    shards
        .iter()
        .zip(alpha_blocks)
        .map(|(s, a)| {
            SubproblemView::new(
                &s.data,
                a,
                &state.v,
                problem.loss(),
                problem.lambda(),
                problem.n(),
                shards.len(),
                sigma_prime,
            )
        })
        .collect()
}

/// The always-safe subproblem parameter `sigma' = nu K`.
pub fn safe_sigma_prime(nu: f64, machines: usize) -> Result<f64> {
    if !(nu > 0.0 && nu <= 1.0) {
        return Err(Error::InvalidArgument(format!("nu must lie in (0, 1], got {nu}")));
    }
    if machines == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    Ok(nu * machines as f64)
}

/// Largest problem size accepted by [`sigma_prime_min`].
pub const SIGMA_PRIME_MIN_MAX_N: usize = 200;

/// `nu * max { h^T X^T X h : h^T G h <= 1 }` with `G` the block-diagonal part
/// of `X^T X` induced by the partition.
///
/// Computed densely: each diagonal block of `G` is eigendecomposed, the pencil
/// is reduced to the range of `G`, and the largest eigenvalue of the reduced
/// matrix is returned. Directions in the null space of `G` along which
/// `X^T X` does not vanish make the maximum unbounded; `+inf` is returned.
pub fn sigma_prime_min(data: &Dataset, partition: &Partition, nu: f64) -> Result<f64> {
    let n = data.n();
    if n > SIGMA_PRIME_MIN_MAX_N {
        return Err(Error::InvalidArgument(format!(
            "sigma'_min is a dense verification tool limited to n <= {SIGMA_PRIME_MIN_MAX_N}, got n = {n}"
        )));
    }
    if partition.n() != n {
        return Err(Error::InvalidArgument("partition does not match dataset".into()));
    }
    let x = dense_matrix(data);
    let scale = x.iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);
    // Columns of the reduced basis, one group per block: X_[k] q / sqrt(mu).
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for block in partition.blocks() {
        let xk = x.select_columns(block.iter());
        let gk = xk.transpose() * &xk;
        let eig = gk.symmetric_eigen();
        let mu_max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let tol = 1e-10 * mu_max.max(f64::MIN_POSITIVE);
        for (j, &mu) in eig.eigenvalues.iter().enumerate() {
            let q = eig.eigenvectors.column(j);
            let xq = &xk * q;
            if mu > tol {
                basis.push(xq / mu.sqrt());
            } else if xq.norm_squared() > 1e-10 * scale {
                return Ok(f64::INFINITY);
            }
        }
    }
    if basis.is_empty() {
        return Ok(0.0);
    }
    let u = DMatrix::from_columns(&basis);
    let reduced = u.transpose() * &u;
    let top = reduced
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(nu * top)
}

fn dense_matrix(data: &Dataset) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(data.d(), data.n());
    for (i, c) in data.columns().enumerate() {
        for (&j, &v) in c.indices.iter().zip(c.values) {
            x[(j, i)] = v;
        }
    }
    x
}

const POWER_TOL: f64 = 1e-10;
const POWER_STREAK: usize = 3;
const POWER_MAX_ITERS: usize = 100_000;

/// `sigma_k = max ||X_[k] a||^2 / ||a||^2`, the largest squared singular value
/// of the shard, by power iteration from a seeded random start.
///
/// Iterates on whichever Gram matrix (`X^T X` or `X X^T`) is smaller and stops
/// once the Rayleigh quotient changes by less than `1e-10` (relative) for three
/// consecutive iterations.
pub fn sigma_k(shard: &Dataset, seed: u64) -> f64 {
    if shard.nnz() == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let over_examples = shard.n() <= shard.d();
    let dim = if over_examples { shard.n() } else { shard.d() };
    let gram = |u: &[f64]| -> Vec<f64> {
        if over_examples {
            shard.tr_mul_vec(&shard.mul_vec(u))
        } else {
            shard.mul_vec(&shard.tr_mul_vec(u))
        }
    };
    let mut u: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let nrm = linalg::norm(&u);
    linalg::scale(1.0 / nrm, &mut u);
    let mut rq = 0.0;
    let mut streak = 0;
    for _ in 0..POWER_MAX_ITERS {
        let gu = gram(&u);
        let next = linalg::dot(&u, &gu);
        let nrm = linalg::norm(&gu);
        if nrm == 0.0 {
            // Start vector in the null space; the shard is non-zero so restart.
            u = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let nrm = linalg::norm(&u);
            linalg::scale(1.0 / nrm, &mut u);
            continue;
        }
        if (next - rq).abs() <= POWER_TOL * next.abs() {
            streak += 1;
            if streak >= POWER_STREAK {
                return next;
            }
        } else {
            streak = 0;
        }
        rq = next;
        u = gu;
        linalg::scale(1.0 / nrm, &mut u);
    }
    log::warn!("power iteration hit the iteration cap; sigma_k = {rq}");
    rq
}

/// Per-shard spectral quantities entering the convergence rates.
#[derive(Clone, Debug, PartialEq)]
pub struct TheoryParams {
    pub sigma_k: Vec<f64>,
    pub sigma_max: f64,
    /// `sum_k sigma_k |P_k|`
    pub sigma: f64,
    pub sigma_prime_min: Option<f64>,
}

impl TheoryParams {
    /// Computes `sigma_k` for every block; `sigma'_min` only when `nu` is given
    /// and the instance is small enough.
    pub fn compute(data: &Dataset, partition: &Partition, nu: Option<f64>, seed: u64) -> Self {
        let sigma_k: Vec<f64> = (0..partition.num_blocks())
            .map(|k| sigma_k(&data.select(partition.block(k)), seed.wrapping_add(k as u64)))
            .collect();
        let sigma_max = sigma_k.iter().cloned().fold(0.0, f64::max);
        let sigma = sigma_k
            .iter()
            .zip(partition.sizes())
            .map(|(s, len)| s * len as f64)
            .sum();
        let sigma_prime_min = nu.and_then(|nu| sigma_prime_min(data, partition, nu).ok());
        Self {
            sigma_k,
            sigma_max,
            sigma,
            sigma_prime_min,
        }
    }
}

/// `D(alpha + nu h) - [(1 - nu) D(alpha) + nu sum_k G_k(h_[k]; alpha)]`.
///
/// Non-negative whenever `sigma' >= sigma'_min`.
pub fn lower_bound_slack(
    problem: &Problem,
    partition: &Partition,
    nu: f64,
    sigma_prime: f64,
    alpha: &[f64],
    h: &[f64],
) -> Result<f64> {
    let state = problem.state(alpha.to_vec())?;
    let shards = Shard::all(problem.data(), partition);
    let alpha_blocks: Vec<Vec<f64>> = (0..partition.num_blocks())
        .map(|k| partition.gather(k, alpha))
        .collect();
    let views = views_at(problem, &shards, &alpha_blocks, &state, sigma_prime);
    let mut model = 0.0;
    for (k, view) in views.iter().enumerate() {
        model += view.objective(&partition.gather(k, h))?;
    }
    let stepped: Vec<f64> = alpha.iter().zip(h).map(|(a, hi)| a + nu * hi).collect();
    let lhs = problem.dual_value_at(&stepped)?;
    let rhs = (1.0 - nu) * problem.dual_value(&state)? + nu * model;
    Ok(lhs - rhs)
}

/// Whether the block-separable lower bound on `D` holds at `(alpha, h)`
/// within `1e-9`.
pub fn lower_bound_check(
    problem: &Problem,
    partition: &Partition,
    nu: f64,
    sigma_prime: f64,
    alpha: &[f64],
    h: &[f64],
) -> Result<bool> {
    Ok(lower_bound_slack(problem, partition, nu, sigma_prime, alpha, h)? >= -1e-9)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PartitionStrategy;
    use crate::verify::{random_feasible_alpha, InstanceGenerator};

    fn dense_top_eig(ds: &Dataset) -> f64 {
        let x = dense_matrix(ds);
        (x.transpose() * &x)
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .cloned()
            .fold(0.0, f64::max)
    }

    #[test]
    fn coincides_with_dual_at_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for loss in Loss::ALL {
            for k in 1..=4 {
                let inst = InstanceGenerator::new(13, 6, k, loss, 0.03).seed(k as u64).generate();
                let (p, part) = (&inst.problem, &inst.partition);
                let alpha = random_feasible_alpha(p, &mut rng);
                let state = p.state(alpha.clone()).unwrap();
                let shards = Shard::all(p.data(), part);
                let blocks: Vec<Vec<f64>> = (0..k).map(|b| part.gather(b, &alpha)).collect();
                let views = views_at(p, &shards, &blocks, &state, 2.0);
                let total: f64 = views
                    .iter()
                    .map(|v| v.objective(&vec![0.0; v.size()]).unwrap())
                    .sum();
                let d = p.dual_value(&state).unwrap();
                assert!((total - d).abs() < 1e-9, "{loss} K={k}: {total} vs {d}");
            }
        }
    }

    #[test]
    fn objective_matches_term_by_term() {
        let inst = InstanceGenerator::new(4, 3, 1, Loss::Quadratic, 0.5).seed(9).generate();
        let p = &inst.problem;
        let shard = Shard::extract(p.data(), &inst.partition, 0);
        let alpha = vec![0.2, -0.1, 0.4, 0.0];
        let local = inst.partition.gather(0, &alpha);
        let v = p.shared_vector(&alpha);
        let view = SubproblemView::new(&shard.data, &local, &v, Loss::Quadratic, 0.5, 4, 1, 1.5);
        let h = [0.3, -0.2, 0.1, 0.5];
        // brute force: -f(alpha) - <grad f, h> - (sigma'/(2 lambda n^2)) ||X h||^2 - R(alpha + h)
        let n = 4.0;
        let f = 0.5 * 0.5 * linalg::norm_sq(&v);
        let grad: Vec<f64> = shard.data.columns().map(|c| c.dot(&v) / n).collect();
        let xh = shard.data.mul_vec(&h);
        let r: f64 = (0..4)
            .map(|i| {
                let b = local[i] + h[i];
                0.5 * b * b - shard.data.label(i) * b
            })
            .sum::<f64>()
            / n;
        let expect = -f - linalg::dot(&grad, &h) - 1.5 / (2.0 * 0.5 * n * n) * linalg::norm_sq(&xh) - r;
        assert!((view.objective(&h).unwrap() - expect).abs() < 1e-14);
    }

    #[test]
    fn smooth_gradient_examples() {
        let ds = Dataset::from_dense_columns(&[vec![1.0, 0.0]], vec![1.0]).unwrap();
        let alpha = [0.0];
        let v = [0.3, 0.7];
        let view = SubproblemView::new(&ds, &alpha, &v, Loss::Quadratic, 0.25, 4, 2, 2.0);
        assert_eq!(view.smooth_gradient(&[0.0]), vec![-view.grad_block()[0]]);
        let expected = -view.grad_block()[0] - 2.0 / (0.25 * 16.0);
        assert!((view.smooth_gradient(&[1.0])[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn smooth_gradient_matches_finite_differences() {
        let inst = InstanceGenerator::new(10, 7, 2, Loss::Logistic, 0.1).seed(4).generate();
        let p = &inst.problem;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let alpha = random_feasible_alpha(p, &mut rng);
        let shard = Shard::extract(p.data(), &inst.partition, 1);
        let local = inst.partition.gather(1, &alpha);
        let v = p.shared_vector(&alpha);
        let view = SubproblemView::new(&shard.data, &local, &v, p.loss(), p.lambda(), p.n(), 2, 2.0);
        let h: Vec<f64> = (0..view.size()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fd = crate::verify::finite_difference_grad(|x| view.smooth_value(x), &h, 1e-5);
        for (a, b) in fd.iter().zip(view.smooth_gradient(&h)) {
            assert!((a - b).abs() <= 1e-6 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn infeasible_step_is_domain_error() {
        let ds = Dataset::from_dense_columns(&[vec![1.0]], vec![1.0]).unwrap();
        let alpha = [0.5];
        let view = SubproblemView::new(&ds, &alpha, &[0.0], Loss::Hinge, 1.0, 1, 1, 1.0);
        assert!(view.objective(&[0.4]).is_ok());
        assert!(matches!(view.objective(&[0.6]), Err(Error::Domain { .. })));
    }

    #[test]
    fn safe_sigma_prime_values() {
        assert_eq!(safe_sigma_prime(1.0, 4).unwrap(), 4.0);
        assert_eq!(safe_sigma_prime(0.25, 4).unwrap(), 1.0);
        assert_eq!(safe_sigma_prime(1.0, 1).unwrap(), 1.0);
        assert!(safe_sigma_prime(0.0, 4).is_err());
        assert!(safe_sigma_prime(1.5, 4).is_err());
    }

    #[test]
    fn sigma_k_examples() {
        let one = Dataset::from_dense_columns(&[vec![0.6, 0.0, 0.3]], vec![1.0]).unwrap();
        assert!((sigma_k(&one, 0) - 0.45).abs() < 1e-12);
        let ortho = Dataset::from_dense_columns(&[vec![1.0, 0.0], vec![0.0, 1.0]], vec![1.0, 1.0]).unwrap();
        assert!((sigma_k(&ortho, 0) - 1.0).abs() < 1e-12);
        let zero = Dataset::from_columns(3, vec![vec![], vec![]], vec![1.0, 1.0]).unwrap();
        assert_eq!(sigma_k(&zero, 0), 0.0);
    }

    #[test]
    fn sigma_k_matches_dense_eigensolve() {
        for seed in 0..20 {
            let n = 3 + seed as usize % 40;
            let inst = InstanceGenerator::new(n, 8 + seed as usize % 5, 1, Loss::Quadratic, 0.1)
                .density(0.5)
                .seed(seed)
                .generate();
            let ds = inst.problem.data();
            let dense = dense_top_eig(ds);
            let power = sigma_k(ds, seed);
            assert!((dense - power).abs() <= 1e-8 * dense.max(1.0), "{dense} vs {power}");
        }
    }

    #[test]
    fn sigma_prime_min_single_block_is_nu() {
        let inst = InstanceGenerator::new(9, 5, 1, Loss::Quadratic, 0.1).seed(3).generate();
        let v = sigma_prime_min(inst.problem.data(), &inst.partition, 0.7).unwrap();
        assert!((v - 0.7).abs() < 1e-10);
    }

    #[test]
    fn sigma_prime_min_orthogonal_shards_is_nu() {
        // Shard 0 lives on features {0,1}, shard 1 on {2,3}.
        let cols = vec![
            vec![0.5, 0.1, 0.0, 0.0],
            vec![0.2, -0.7, 0.0, 0.0],
            vec![0.0, 0.0, 0.3, 0.3],
            vec![0.0, 0.0, -0.1, 0.9],
            vec![0.0, 0.0, 0.4, 0.4],
        ];
        let ds = Dataset::from_dense_columns(&cols, vec![1.0; 5]).unwrap();
        let part = Partition::from_blocks(5, vec![vec![0, 1], vec![2, 3, 4]]).unwrap();
        for nu in [0.5, 1.0] {
            let v = sigma_prime_min(&ds, &part, nu).unwrap();
            assert!((v - nu).abs() < 1e-10, "{v}");
        }
    }

    #[test]
    fn sigma_prime_min_refuses_large_instances() {
        let inst = InstanceGenerator::new(201, 3, 2, Loss::Quadratic, 0.1).generate();
        assert!(sigma_prime_min(inst.problem.data(), &inst.partition, 1.0).is_err());
    }

    #[test]
    fn theory_params_arithmetic() {
        let inst = InstanceGenerator::new(30, 10, 3, Loss::Hinge, 0.1).seed(8).generate();
        let tp = TheoryParams::compute(inst.problem.data(), &inst.partition, Some(1.0), 0);
        let manual: f64 = (0..3)
            .map(|k| {
                let blk = inst.partition.block(k);
                dense_top_eig(&inst.problem.data().select(blk)) * blk.len() as f64
            })
            .sum();
        assert!((tp.sigma - manual).abs() < 1e-8 * manual);
        for (k, &s) in tp.sigma_k.iter().enumerate() {
            assert!(s > 0.0 && s <= inst.partition.block(k).len() as f64 + 1e-12);
        }
        assert!(tp.sigma_max <= *inst.partition.sizes().iter().max().unwrap() as f64);
        let spm = tp.sigma_prime_min.unwrap();
        assert!(spm >= 1.0 - 1e-10 && spm <= 3.0 + 1e-8);
    }

    #[test]
    fn lower_bound_at_zero_step_is_tight() {
        let inst = InstanceGenerator::new(12, 6, 3, Loss::Hinge, 0.05)
            .strategy(PartitionStrategy::RoundRobin)
            .generate();
        let p = &inst.problem;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let alpha = random_feasible_alpha(p, &mut rng);
        let slack = lower_bound_slack(p, &inst.partition, 1.0, 3.0, &alpha, &vec![0.0; 12]).unwrap();
        assert!(slack.abs() < 1e-12);
    }
}
