//! The outer loop: per-round local solves on every machine, reduce-all of the
//! shared-vector updates and `nu`-weighted aggregation.
//!
//! A run is driven by a coordinator that only ever sees `v` and the `Delta v_k`
//! vectors (plus the dual blocks on rounds where the duality gap is measured).
//! Two transports are provided: worker threads in this process, and worker
//! processes connected over TCP ([`tcp`]). Both share the worker logic and the
//! coordinator loop, and summation is always in ascending machine order, so a
//! run is bit-for-bit reproducible given the seed regardless of transport or
//! scheduling.

pub mod metrics;
pub mod tcp;

use std::fmt;
use std::sync::mpsc;
use std::sync::Arc;
use std::time::Instant;

use crate::data::{Dataset, Partition};
use crate::error::{Error, Result};
use crate::linalg;
use crate::losses::Loss;
use crate::problem::{DualState, Problem};
use crate::solvers::{LocalSolver, SolverConfig};
use crate::subproblem::{safe_sigma_prime, Shard, SubproblemView};

pub use metrics::{read_metrics_csv, write_metrics_csv, MetricsWriter, METRICS_HEADER};

/// Bytes of the fixed frame header: magic, round, machine id, payload length.
pub const FRAME_HEADER_BYTES: u64 = 4 + 4 + 4 + 8;

/// Default divergence guard: a drop of the dual objective larger than this
/// aborts the run.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SigmaPrime {
    /// `sigma' = nu K`
    Auto,
    Manual(f64),
}

impl SigmaPrime {
    pub fn resolve(self, nu: f64, machines: usize) -> Result<f64> {
        match self {
            SigmaPrime::Auto => safe_sigma_prime(nu, machines),
            SigmaPrime::Manual(s) if s > 0.0 && s.is_finite() => Ok(s),
            SigmaPrime::Manual(s) => Err(Error::Config(format!("sigma' must be positive, got {s}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Number of machines `K`; must match the partition.
    pub machines: usize,
    pub nu: f64,
    pub sigma_prime: SigmaPrime,
    /// Round budget `T`.
    pub rounds: usize,
    /// Stop once the duality gap is at most this value; `0` never stops early.
    pub gap_tol: f64,
    /// Measure the gap every this many rounds (and always after the last).
    pub gap_every: usize,
    pub solver: SolverConfig,
    /// Seeds the per-machine solver streams.
    pub seed: u64,
    /// Keep every iterate `(alpha^t, v^t)`; forces a measurement every round.
    pub keep_history: bool,
    /// Record wall-clock time in the metrics; `false` writes zeros.
    pub record_time: bool,
    pub divergence_threshold: f64,
}

impl RunConfig {
    pub fn new(machines: usize, solver: SolverConfig) -> Self {
        Self {
            machines,
            nu: 1.0,
            sigma_prime: SigmaPrime::Auto,
            rounds: 100,
            gap_tol: 0.0,
            gap_every: 1,
            solver,
            seed: 0,
            keep_history: false,
            record_time: true,
            divergence_threshold: DIVERGENCE_THRESHOLD,
        }
    }

    /// `nu = 1, sigma' = K`
    pub fn adding(mut self) -> Self {
        self.nu = 1.0;
        self.sigma_prime = SigmaPrime::Manual(self.machines as f64);
        self
    }

    /// `nu = 1/K, sigma' = 1`
    pub fn averaging(mut self) -> Self {
        self.nu = 1.0 / self.machines as f64;
        self.sigma_prime = SigmaPrime::Manual(1.0);
        self
    }

    pub fn validate(&self, loss: Loss, partition: &Partition) -> Result<f64> {
        if self.machines == 0 {
            return Err(Error::Config("K must be at least 1".into()));
        }
        if partition.num_blocks() != self.machines {
            return Err(Error::Config(format!(
                "partition has {} blocks but K = {}",
                partition.num_blocks(),
                self.machines
            )));
        }
        if !(self.nu > 0.0 && self.nu <= 1.0) {
            return Err(Error::Config(format!("nu must lie in (0, 1], got {}", self.nu)));
        }
        if !(self.gap_tol >= 0.0) {
            return Err(Error::Config(format!("gap tolerance must be >= 0, got {}", self.gap_tol)));
        }
        if self.gap_every == 0 {
            return Err(Error::Config("gap-every must be at least 1".into()));
        }
        if !(self.divergence_threshold > 0.0) {
            return Err(Error::Config("divergence threshold must be positive".into()));
        }
        self.solver.check_compatible(loss)?;
        self.sigma_prime.resolve(self.nu, self.machines)
    }

    /// Whether the dual blocks are shipped to the coordinator after round `t`.
    pub fn measure_after(&self, t: usize) -> bool {
        measure_due(t, self.rounds, self.gap_every, self.keep_history)
    }
}

pub(crate) fn measure_due(t: usize, rounds: usize, gap_every: usize, keep_history: bool) -> bool {
    keep_history || (t + 1) % gap_every == 0 || t + 1 == rounds
}

/// One measured round. Byte and iteration counts are cumulative.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    pub elapsed_ms: f64,
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
    /// Bytes sent by the busiest machine since the start of the run.
    pub bytes_per_machine: u64,
    /// Local solver iterations summed over machines and rounds.
    pub local_iters_total: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Termination {
    Converged { round: usize },
    MaxRounds,
    /// The dual objective dropped by more than the divergence threshold or
    /// became non-finite: `sigma'` is unsafe for this data.
    Diverged { round: usize },
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Termination::Converged { round } => write!(f, "converged at round {round}"),
            Termination::MaxRounds => f.write_str("round budget exhausted"),
            Termination::Diverged { round } => write!(f, "unsafe sigma' divergence at round {round}"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub state: DualState,
    pub metrics: Vec<RoundMetrics>,
    pub termination: Termination,
    pub sigma_prime: f64,
    pub rounds_run: usize,
    /// `history[t]` is the state after `t` rounds, when requested.
    pub history: Option<Vec<DualState>>,
}

impl RunReport {
    pub fn final_gap(&self) -> f64 {
        self.metrics.last().map_or(f64::NAN, |m| m.gap)
    }

    pub fn diverged(&self) -> bool {
        matches!(self.termination, Termination::Diverged { .. })
    }

    /// First measured round whose gap is at most `tol`.
    pub fn rounds_to_gap(&self, tol: f64) -> Option<usize> {
        self.metrics.iter().find(|m| m.gap <= tol).map(|m| m.round)
    }
}

/// `v + nu * sum_k Delta v_k`, summed in ascending `k`.
pub fn aggregate(v: &[f64], updates: &[Option<&[f64]>], nu: f64) -> Result<Vec<f64>> {
    let mut sum = vec![0.0; v.len()];
    for (k, up) in updates.iter().enumerate() {
        let up = up.ok_or_else(|| Error::Protocol(format!("missing update from machine {k}")))?;
        if up.len() != v.len() {
            return Err(Error::Protocol(format!(
                "update from machine {k} has length {}, expected {}",
                up.len(),
                v.len()
            )));
        }
        linalg::axpy(1.0, up, &mut sum);
    }
    let mut out = v.to_vec();
    linalg::axpy(nu, &sum, &mut out);
    Ok(out)
}

/// Per-run constants every worker needs.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct WorkerParams {
    pub loss: Loss,
    pub lambda: f64,
    pub n: usize,
    pub machines: usize,
    pub sigma_prime: f64,
    pub nu: f64,
    pub solver: SolverConfig,
}

/// The state owned by one machine: its shard, its dual block and its solver.
pub(crate) struct Worker {
    shard: Dataset,
    alpha: Vec<f64>,
    solver: LocalSolver,
    params: WorkerParams,
}

impl Worker {
    pub fn new(machine: usize, shard: Dataset, alpha: Vec<f64>, params: WorkerParams) -> Self {
        Self {
            shard,
            alpha,
            solver: LocalSolver::new(params.solver.clone(), machine),
            params,
        }
    }

    /// One round: solve the local subproblem at `v`, apply `alpha += nu h`
    /// and return `(Delta v_k, local iterations)`.
    pub fn step(&mut self, v: &[f64]) -> Result<(Vec<f64>, usize)> {
        let p = &self.params;
        let view = SubproblemView::new(
            &self.shard,
            &self.alpha,
            v,
            p.loss,
            p.lambda,
            p.n,
            p.machines,
            p.sigma_prime,
        );
        let update = self.solver.solve(&view)?;
        let nu = p.nu;
        linalg::axpy(nu, &update.h, &mut self.alpha);
        Ok((update.delta_v, update.iterations))
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }
}

pub(crate) struct Reply {
    pub delta_v: Vec<f64>,
    pub iterations: usize,
    pub alpha: Option<Vec<f64>>,
}

/// A set of `K` machines driven in lockstep by the coordinator.
pub(crate) trait Cluster {
    /// Runs round `t` at `v` on every machine; replies are in machine order.
    fn round(&mut self, t: usize, v: &[f64], ship_alpha: bool) -> Result<Vec<Reply>>;
    /// Ends the run and collects the final dual blocks.
    fn finish(&mut self) -> Result<Vec<Vec<f64>>>;
}

pub(crate) fn worker_params(problem: &Problem, config: &RunConfig, sigma_prime: f64) -> WorkerParams {
    WorkerParams {
        loss: problem.loss(),
        lambda: problem.lambda(),
        n: problem.n(),
        machines: config.machines,
        sigma_prime,
        nu: config.nu,
        solver: SolverConfig {
            seed: config.seed,
            ..config.solver.clone()
        },
    }
}

fn check_alpha0(problem: &Problem, alpha0: &Option<Vec<f64>>) -> Result<Vec<f64>> {
    match alpha0 {
        Some(a) => {
            if a.len() != problem.n() {
                return Err(Error::InvalidArgument(format!(
                    "initial alpha has length {}, expected {}",
                    a.len(),
                    problem.n()
                )));
            }
            problem.check_feasible(a)?;
            Ok(a.clone())
        }
        None => Ok(vec![0.0; problem.n()]),
    }
}

/// Coordinator loop shared by all transports.
pub(crate) fn drive(
    problem: &Problem,
    partition: &Partition,
    config: &RunConfig,
    sigma_prime: f64,
    alpha0: Vec<f64>,
    cluster: &mut dyn Cluster,
    on_round: &mut dyn FnMut(&RoundMetrics) -> Result<()>,
) -> Result<RunReport> {
    let start = Instant::now();
    let d = problem.d() as u64;
    let k_count = partition.num_blocks();
    let mut alpha = alpha0;
    let mut v = problem.shared_vector(&alpha);
    let mut bytes = vec![0u64; k_count];
    let mut iters_total = 0u64;
    let mut metrics = Vec::new();
    let mut history = config.keep_history.then(Vec::new);

    let elapsed = |start: &Instant| {
        if config.record_time {
            start.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        }
    };
    let measure = |alpha: &[f64], v: &[f64], round: usize, ms: f64, bytes: u64, iters: u64| -> RoundMetrics {
        let state = DualState {
            alpha: alpha.to_vec(),
            v: v.to_vec(),
        };
        let primal = problem.primal_value(&state.v);
        let dual = problem.dual_value_unchecked(&state);
        RoundMetrics {
            round,
            elapsed_ms: ms,
            primal,
            dual,
            gap: primal - dual,
            bytes_per_machine: bytes,
            local_iters_total: iters,
        }
    };

    let first = measure(&alpha, &v, 0, elapsed(&start), 0, 0);
    on_round(&first)?;
    let mut last_dual = first.dual;
    let stop_at = |gap: f64| config.gap_tol > 0.0 && gap <= config.gap_tol;
    let mut termination = if stop_at(first.gap) {
        Termination::Converged { round: 0 }
    } else {
        Termination::MaxRounds
    };
    metrics.push(first);
    if let Some(h) = history.as_mut() {
        h.push(DualState {
            alpha: alpha.clone(),
            v: v.clone(),
        });
    }

    let mut rounds_run = 0;
    if termination == Termination::MaxRounds {
        for t in 0..config.rounds {
            let ship = config.measure_after(t);
            let replies = cluster.round(t, &v, ship)?;
            if replies.len() != k_count {
                return Err(Error::Protocol(format!(
                    "expected {k_count} replies, got {}",
                    replies.len()
                )));
            }
            let updates: Vec<Option<&[f64]>> = replies.iter().map(|r| Some(r.delta_v.as_slice())).collect();
            v = aggregate(&v, &updates, config.nu)?;
            rounds_run = t + 1;
            for (k, r) in replies.iter().enumerate() {
                bytes[k] += FRAME_HEADER_BYTES + 8 * d;
                iters_total += r.iterations as u64;
                if let Some(block) = &r.alpha {
                    // dual block frame: iteration counter plus the block
                    bytes[k] += FRAME_HEADER_BYTES + 8 * (block.len() as u64 + 1);
                    if block.len() != partition.block(k).len() {
                        return Err(Error::Protocol(format!("dual block of machine {k} has wrong length")));
                    }
                    partition.scatter(k, block, &mut alpha);
                }
            }
            if v.iter().any(|x| !x.is_finite()) {
                termination = Termination::Diverged { round: t + 1 };
                break;
            }
            if !ship {
                continue;
            }
            let row = measure(
                &alpha,
                &v,
                t + 1,
                elapsed(&start),
                bytes.iter().copied().max().unwrap_or(0),
                iters_total,
            );
            on_round(&row)?;
            let dropped = last_dual - row.dual;
            let diverged = !row.dual.is_finite() || dropped > config.divergence_threshold;
            let converged = stop_at(row.gap);
            last_dual = row.dual;
            metrics.push(row);
            if let Some(h) = history.as_mut() {
                h.push(DualState {
                    alpha: alpha.clone(),
                    v: v.clone(),
                });
            }
            if diverged {
                termination = Termination::Diverged { round: t + 1 };
                break;
            }
            if converged {
                termination = Termination::Converged { round: t + 1 };
                break;
            }
        }
    }

    let blocks = cluster.finish()?;
    for (k, block) in blocks.iter().enumerate() {
        partition.scatter(k, block, &mut alpha);
    }
    Ok(RunReport {
        state: DualState { alpha, v },
        metrics,
        termination,
        sigma_prime,
        rounds_run,
        history,
    })
}

enum Command {
    Round { v: Arc<Vec<f64>>, ship_alpha: bool },
    Finish,
}

struct InProcCluster {
    links: Vec<(mpsc::Sender<Command>, mpsc::Receiver<Result<Reply>>)>,
}

impl InProcCluster {
    fn spawn<'scope>(scope: &'scope std::thread::Scope<'scope, '_>, workers: Vec<Worker>) -> Self {
        let links = workers
            .into_iter()
            .map(|mut worker| {
                let (cmd_tx, cmd_rx) = mpsc::channel::<Command>();
                let (rep_tx, rep_rx) = mpsc::channel::<Result<Reply>>();
                scope.spawn(move || {
                    while let Ok(cmd) = cmd_rx.recv() {
                        let reply = match cmd {
                            Command::Round { v, ship_alpha } => worker.step(&v).map(|(delta_v, iterations)| Reply {
                                delta_v,
                                iterations,
                                alpha: ship_alpha.then(|| worker.alpha().to_vec()),
                            }),
                            Command::Finish => {
                                let _ = rep_tx.send(Ok(Reply {
                                    delta_v: Vec::new(),
                                    iterations: 0,
                                    alpha: Some(worker.alpha().to_vec()),
                                }));
                                break;
                            }
                        };
                        if rep_tx.send(reply).is_err() {
                            break;
                        }
                    }
                });
                (cmd_tx, rep_rx)
            })
            .collect();
        Self { links }
    }

    fn broadcast(&self, make: impl Fn() -> Command) -> Result<()> {
        for (k, (tx, _)) in self.links.iter().enumerate() {
            tx.send(make())
                .map_err(|_| Error::Protocol(format!("machine {k} stopped unexpectedly")))?;
        }
        Ok(())
    }

    fn collect(&self) -> Result<Vec<Reply>> {
        self.links
            .iter()
            .enumerate()
            .map(|(k, (_, rx))| {
                rx.recv()
                    .map_err(|_| Error::Protocol(format!("machine {k} stopped unexpectedly")))?
            })
            .collect()
    }
}

impl Cluster for InProcCluster {
    fn round(&mut self, _t: usize, v: &[f64], ship_alpha: bool) -> Result<Vec<Reply>> {
        let shared = Arc::new(v.to_vec());
        self.broadcast(|| Command::Round {
            v: Arc::clone(&shared),
            ship_alpha,
        })?;
        self.collect()
    }

    fn finish(&mut self) -> Result<Vec<Vec<f64>>> {
        self.broadcast(|| Command::Finish)?;
        Ok(self
            .collect()?
            .into_iter()
            .map(|r| r.alpha.unwrap_or_default())
            .collect())
    }
}

/// Runs the outer loop with worker threads, starting from `alpha^0 = 0`.
pub fn run(problem: &Problem, partition: &Partition, config: &RunConfig) -> Result<RunReport> {
    run_observed(problem, partition, config, None, &mut |_| Ok(()))
}

/// [`run`] from a given feasible `alpha^0`, calling `on_round` for every
/// measured round as soon as it is available.
pub fn run_observed(
    problem: &Problem,
    partition: &Partition,
    config: &RunConfig,
    alpha0: Option<Vec<f64>>,
    on_round: &mut dyn FnMut(&RoundMetrics) -> Result<()>,
) -> Result<RunReport> {
    let sigma_prime = config.validate(problem.loss(), partition)?;
    if partition.n() != problem.n() {
        return Err(Error::Config("partition does not match the problem size".into()));
    }
    let alpha0 = check_alpha0(problem, &alpha0)?;
    let params = worker_params(problem, config, sigma_prime);
    let workers: Vec<Worker> = (0..config.machines)
        .map(|k| {
            let shard = Shard::extract(problem.data(), partition, k);
            Worker::new(k, shard.data, partition.gather(k, &alpha0), params.clone())
        })
        .collect();
    std::thread::scope(|scope| {
        let mut cluster = InProcCluster::spawn(scope, workers);
        drive(problem, partition, config, sigma_prime, alpha0, &mut cluster, on_round)
    })
}

/// Result of running the two formulations of the outer loop side by side.
#[derive(Clone, Debug, PartialEq)]
pub struct EquivalenceReport {
    pub rounds: usize,
    /// Largest per-round difference of the dual iterates.
    pub max_alpha_diff: f64,
    /// Largest per-round difference between the maintained `v` and
    /// `X alpha / (lambda n)` recomputed from scratch.
    pub max_v_diff: f64,
    pub matched: bool,
}

/// Runs the engine (shared vector maintained incrementally) and a reference
/// loop that keeps only `alpha` and recomputes `v` from scratch every round,
/// with identically seeded solvers, and compares the iterates at every round
/// to `1e-10`.
pub fn equivalence_check(problem: &Problem, partition: &Partition, config: &RunConfig) -> Result<EquivalenceReport> {
    let cfg = RunConfig {
        keep_history: true,
        gap_tol: 0.0,
        divergence_threshold: f64::INFINITY,
        ..config.clone()
    };
    let sigma_prime = cfg.validate(problem.loss(), partition)?;
    let engine = run(problem, partition, &cfg)?;
    let history = engine.history.as_ref().expect("history requested");

    let params = worker_params(problem, &cfg, sigma_prime);
    let shards = Shard::all(problem.data(), partition);
    let mut solvers: Vec<LocalSolver> = (0..cfg.machines)
        .map(|k| LocalSolver::new(params.solver.clone(), k))
        .collect();
    let mut alpha = vec![0.0; problem.n()];
    let mut max_alpha_diff = 0.0f64;
    let mut max_v_diff = 0.0f64;
    for (t, engine_state) in history.iter().enumerate().skip(1) {
        let v = problem.shared_vector(&alpha);
        let mut steps = Vec::with_capacity(cfg.machines);
        for (k, shard) in shards.iter().enumerate() {
            let block = partition.gather(k, &alpha);
            let view = SubproblemView::new(
                &shard.data,
                &block,
                &v,
                problem.loss(),
                problem.lambda(),
                problem.n(),
                cfg.machines,
                sigma_prime,
            );
            steps.push(solvers[k].solve(&view)?.h);
        }
        for (k, h) in steps.iter().enumerate() {
            for (&i, hi) in partition.block(k).iter().zip(h) {
                alpha[i] += cfg.nu * hi;
            }
        }
        max_alpha_diff = max_alpha_diff.max(linalg::max_abs_diff(&alpha, &engine_state.alpha));
        let recomputed = problem.shared_vector(&engine_state.alpha);
        max_v_diff = max_v_diff.max(linalg::max_abs_diff(&recomputed, &engine_state.v));
        log::trace!("equivalence round {t}: alpha diff {max_alpha_diff:e}");
    }
    let matched = max_alpha_diff <= 1e-10 && max_v_diff <= 1e-10;
    Ok(EquivalenceReport {
        rounds: history.len() - 1,
        max_alpha_diff,
        max_v_diff,
        matched,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PartitionStrategy;
    use crate::solvers::SolverKind;
    use crate::verify::{oracle_dense_dual_opt, InstanceGenerator};

    #[test]
    fn aggregate_examples() {
        let v = [1.0, 2.0, 3.0];
        let e1 = [1.0, 0.0, 0.0];
        let e2 = [0.0, 1.0, 0.0];
        let ups = [Some(&e1[..]), Some(&e2[..])];
        assert_eq!(aggregate(&v, &ups, 1.0).unwrap(), vec![2.0, 3.0, 3.0]);
        assert_eq!(aggregate(&v, &ups, 0.5).unwrap(), vec![1.5, 2.5, 3.0]);
        let zero = [0.0; 3];
        assert_eq!(aggregate(&v, &[Some(&zero[..]), Some(&zero[..])], 1.0).unwrap(), v.to_vec());
        assert!(matches!(aggregate(&v, &[Some(&e1[..]), None], 1.0), Err(Error::Protocol(_))));
    }

    #[test]
    fn zero_rounds_returns_initial_state() {
        let inst = InstanceGenerator::new(12, 5, 3, Loss::Hinge, 0.1).seed(1).generate();
        let mut cfg = RunConfig::new(3, SolverConfig::new(SolverKind::Cd, 5));
        cfg.rounds = 0;
        let rep = run(&inst.problem, &inst.partition, &cfg).unwrap();
        assert_eq!(rep.metrics.len(), 1);
        assert_eq!(rep.rounds_run, 0);
        assert!(rep.state.alpha.iter().all(|&a| a == 0.0));
        let gap0 = inst.problem.duality_gap(&inst.problem.zero_state()).unwrap();
        assert_eq!(rep.metrics[0].gap, gap0);
    }

    #[test]
    fn single_machine_exact_solves_converge_fast() {
        let inst = InstanceGenerator::new(8, 4, 1, Loss::Quadratic, 0.2).seed(2).generate();
        let mut cfg = RunConfig::new(1, SolverConfig::new(SolverKind::Cg, 50));
        cfg.rounds = 3;
        let rep = run(&inst.problem, &inst.partition, &cfg).unwrap();
        assert!(rep.final_gap() < 1e-10, "gap {}", rep.final_gap());
        let star = oracle_dense_dual_opt(&inst.problem).unwrap();
        let diff = linalg::max_abs_diff(&star.alpha, &rep.state.alpha);
        assert!(diff < 1e-8, "diff {diff:e} oracle gap {:e} sweeps {}", star.gap, star.sweeps);
    }

    #[test]
    fn state_stays_consistent_and_dual_ascends() {
        for loss in Loss::ALL {
            let inst = InstanceGenerator::new(40, 8, 4, loss, 0.01).seed(5).generate();
            let mut cfg = RunConfig::new(4, SolverConfig::new(SolverKind::Cd, 10));
            cfg.rounds = 15;
            cfg.keep_history = true;
            let rep = run(&inst.problem, &inst.partition, &cfg).unwrap();
            for st in rep.history.as_ref().unwrap() {
                assert!(inst.problem.consistency_error(st) <= 1e-8);
            }
            for w in rep.metrics.windows(2) {
                assert!(w[1].dual >= w[0].dual - 1e-9, "{loss}: dual decreased");
                assert!((w[1].gap - (w[1].primal - w[1].dual)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn deterministic_across_runs() {
        let inst = InstanceGenerator::new(30, 6, 3, Loss::Logistic, 0.05).seed(3).generate();
        let mut cfg = RunConfig::new(3, SolverConfig::new(SolverKind::Cd, 7));
        cfg.rounds = 6;
        cfg.seed = 11;
        let a = run(&inst.problem, &inst.partition, &cfg).unwrap();
        let b = run(&inst.problem, &inst.partition, &cfg).unwrap();
        assert_eq!(a.state, b.state);
    }

    #[test]
    fn gap_every_controls_rows_and_bytes() {
        let inst = InstanceGenerator::new(20, 5, 2, Loss::Quadratic, 0.1).seed(1).generate();
        let mut cfg = RunConfig::new(2, SolverConfig::new(SolverKind::Cd, 5));
        cfg.rounds = 7;
        cfg.gap_every = 3;
        let rep = run(&inst.problem, &inst.partition, &cfg).unwrap();
        let rounds: Vec<usize> = rep.metrics.iter().map(|m| m.round).collect();
        assert_eq!(rounds, vec![0, 3, 6, 7]);
        // 7 shared-vector frames plus 3 dual-block frames of 1 + 10 words
        assert_eq!(rep.metrics[3].bytes_per_machine, 7 * (20 + 8 * 5) + 3 * (20 + 8 * 11));
        assert_eq!(rep.metrics[3].local_iters_total, 7 * 2 * 5);
    }

    #[test]
    fn equivalence_holds_for_cd() {
        let inst = InstanceGenerator::new(15, 6, 3, Loss::SquaredHinge, 0.05)
            .seed(9)
            .strategy(PartitionStrategy::RoundRobin)
            .generate();
        let mut cfg = RunConfig::new(3, SolverConfig::new(SolverKind::Cd, 4));
        cfg.rounds = 5;
        let rep = equivalence_check(&inst.problem, &inst.partition, &cfg).unwrap();
        assert!(rep.matched, "{rep:?}");
        assert_eq!(rep.rounds, 5);
    }

    #[test]
    fn config_errors_surface_before_running() {
        let inst = InstanceGenerator::new(10, 4, 2, Loss::Hinge, 0.1).generate();
        let cfg = RunConfig::new(2, SolverConfig::new(SolverKind::Lbfgs, 5));
        assert!(matches!(run(&inst.problem, &inst.partition, &cfg), Err(Error::Config(_))));
        let cfg = RunConfig::new(3, SolverConfig::new(SolverKind::Cd, 5));
        assert!(matches!(run(&inst.problem, &inst.partition, &cfg), Err(Error::Config(_))));
        let mut cfg = RunConfig::new(2, SolverConfig::new(SolverKind::Cd, 5));
        cfg.nu = 1.5;
        assert!(run(&inst.problem, &inst.partition, &cfg).is_err());
    }

    #[test]
    fn tiny_sigma_prime_diverges() {
        let inst = InstanceGenerator::new(60, 10, 4, Loss::Quadratic, 1e-3)
            .seed(2)
            .correlated(0.95)
            .generate();
        let mut cfg = RunConfig::new(4, SolverConfig::new(SolverKind::Cd, 60));
        cfg.sigma_prime = SigmaPrime::Manual(0.05);
        cfg.rounds = 200;
        let rep = run(&inst.problem, &inst.partition, &cfg).unwrap();
        assert!(rep.diverged(), "{}", rep.termination);
    }
}
