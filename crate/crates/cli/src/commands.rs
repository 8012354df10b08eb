use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use cocoa::engine::{self, tcp, MetricsWriter};
use cocoa::rates::{self, RateInputs};
use cocoa::subproblem::TheoryParams;
use cocoa::verify::{property_suite, SuiteOptions};
use cocoa::{Partition, Problem, RunConfig, RunReport, SigmaPrime};

use crate::setup::{self, load_problem, read_data, run_config, shard_path};
use crate::{RatesArgs, ShardArgs, SweepHArgs, SweepSigmaArgs, TrainArgs, Transport, VerifyArgs};

/// Runs in process, or as a TCP coordinator when `listen` is set, streaming
/// metrics rows to `metrics` as they arrive.
fn execute(
    problem: &Problem,
    partition: &Partition,
    cfg: &RunConfig,
    metrics: Option<&Path>,
    listen: Option<&str>,
) -> Result<RunReport> {
    let mut writer = match metrics {
        Some(path) => {
            let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
            Some(MetricsWriter::new(BufWriter::new(file))?)
        }
        None => None,
    };
    let mut on_round = |row: &engine::RoundMetrics| -> cocoa::Result<()> {
        log::info!("round {} gap {:e}", row.round, row.gap);
        match writer.as_mut() {
            Some(w) => w.append(row),
            None => Ok(()),
        }
    };
    let report = match listen {
        None => engine::run_observed(problem, partition, cfg, None, &mut on_round)?,
        Some(addr) => {
            let listener = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
            println!("listening={}", listener.local_addr()?);
            std::io::stdout().flush()?;
            tcp::serve(&listener, problem, partition, cfg, None, &mut on_round)?
        }
    };
    Ok(report)
}

fn print_report(report: &RunReport) {
    let last = report.metrics.last();
    println!("termination={}", report.termination);
    println!("rounds={}", report.rounds_run);
    println!("sigma_prime={}", report.sigma_prime);
    if let Some(m) = last {
        println!("primal={}", m.primal);
        println!("dual={}", m.dual);
    }
    println!("final_gap={}", report.final_gap());
}

pub fn train(a: TrainArgs) -> Result<ExitCode> {
    if let Some(addr) = &a.connect {
        return worker(&a, addr);
    }
    let listen = match (a.transport, &a.listen) {
        (Transport::Tcp, None) => bail!("tcp transport needs --listen ADDR (coordinator) or --connect ADDR (worker)"),
        (Transport::Inproc, Some(_)) => bail!("--listen requires --transport tcp"),
        (_, l) => l.as_deref(),
    };
    let (problem, partition) = load_problem(&a.data, a.run.seed)?;
    let cfg = run_config(&a.run, &partition);
    let report = execute(&problem, &partition, &cfg, a.metrics.as_deref(), listen)?;
    print_report(&report);
    Ok(ExitCode::SUCCESS)
}

fn worker(a: &TrainArgs, addr: &str) -> Result<ExitCode> {
    if a.transport != Transport::Tcp {
        bail!("--connect requires --transport tcp");
    }
    let k = a.machine_id.ok_or_else(|| anyhow!("worker mode needs --machine-id"))?;
    let path = a.data.data.as_ref().ok_or_else(|| anyhow!("worker mode needs --data with this machine's shard"))?;
    let shard = read_data(path, a.data.features, a.data.normalize)?;
    let alpha = tcp::connect_and_work(addr, k, shard, Duration::from_secs(a.connect_timeout))?;
    println!("machine={k} examples={}", alpha.len());
    Ok(ExitCode::SUCCESS)
}

struct SweepRow {
    label: String,
    status: &'static str,
    rounds_to_target: Option<usize>,
    wall_ms: Option<f64>,
    final_gap: f64,
}

fn sweep_row(label: String, report: &RunReport, target: f64) -> SweepRow {
    let hit = report.metrics.iter().find(|m| m.gap <= target);
    let status = if report.diverged() {
        "diverged"
    } else if hit.is_some() {
        "converged"
    } else {
        "max-rounds"
    };
    SweepRow {
        label,
        status,
        rounds_to_target: hit.map(|m| m.round),
        wall_ms: hit.map(|m| m.elapsed_ms),
        final_gap: report.final_gap(),
    }
}

fn write_summary(path: &Path, key: &str, rows: &[SweepRow]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    writeln!(out, "{key},status,rounds_to_target,wall_ms,final_gap")?;
    for r in rows {
        let line = format!(
            "{},{},{},{},{}",
            r.label,
            r.status,
            r.rounds_to_target.map_or(String::new(), |x| x.to_string()),
            r.wall_ms.map_or(String::new(), |x| format!("{x:.3}")),
            r.final_gap
        );
        println!("{key}={} {}", r.label, &line[r.label.len() + 1..]);
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

fn target_config(mut cfg: RunConfig, target: f64) -> Result<RunConfig> {
    if !(target > 0.0) {
        bail!("--target-gap must be positive");
    }
    cfg.gap_tol = target;
    Ok(cfg)
}

pub fn sweep_h(a: SweepHArgs) -> Result<ExitCode> {
    let (problem, partition) = load_problem(&a.data, a.run.seed)?;
    std::fs::create_dir_all(&a.out_dir)?;
    let base = target_config(run_config(&a.run, &partition), a.target_gap)?;
    let mut rows = Vec::new();
    for &h in &a.h_values {
        let mut cfg = base.clone();
        cfg.solver.local_iters = h;
        let path = a.out_dir.join(format!("h{h}.csv"));
        let report = execute(&problem, &partition, &cfg, Some(&path), None)?;
        rows.push(sweep_row(h.to_string(), &report, a.target_gap));
    }
    write_summary(&a.out_dir.join("sweep_h_summary.csv"), "h", &rows)?;
    let mut sorted: Vec<(usize, Option<usize>)> =
        a.h_values.iter().copied().zip(rows.iter().map(|r| r.rounds_to_target)).collect();
    sorted.sort_by_key(|p| p.0);
    let monotone = sorted.windows(2).all(|w| match (w[0].1, w[1].1) {
        (Some(a), Some(b)) => b <= a,
        (None, _) => true,
        (Some(_), None) => false,
    });
    println!("rounds_monotone_in_h={monotone}");
    Ok(ExitCode::SUCCESS)
}

pub fn sweep_sigma(a: SweepSigmaArgs) -> Result<ExitCode> {
    let (problem, partition) = load_problem(&a.data, a.run.seed)?;
    std::fs::create_dir_all(&a.out_dir)?;
    let base = target_config(run_config(&a.run, &partition), a.target_gap)?;
    let mut rows = Vec::new();
    for &s in &a.sigma_values {
        if !(s > 0.0) {
            bail!("sigma' values must be positive, got {s}");
        }
        let mut cfg = base.clone();
        cfg.sigma_prime = SigmaPrime::Manual(s);
        let path = a.out_dir.join(format!("sigma{s}.csv"));
        let report = execute(&problem, &partition, &cfg, Some(&path), None)?;
        rows.push(sweep_row(s.to_string(), &report, a.target_gap));
    }
    println!("nu={} safe_sigma_prime={}", base.nu, base.nu * base.machines as f64);
    write_summary(&a.out_dir.join("sweep_sigma_summary.csv"), "sigma_prime", &rows)?;
    Ok(ExitCode::SUCCESS)
}

pub fn rates(a: RatesArgs) -> Result<ExitCode> {
    let constants = a.loss.map(|l| l.constants());
    let gamma = a.gamma.or(constants.map(|c| c.gamma)).unwrap_or(0.0);
    let lipschitz = a.lipschitz.or(constants.and_then(|c| c.lipschitz));
    let (n, sigma_max, sigma) = match &a.data {
        Some(path) => {
            let data = read_data(path, None, false)?;
            let partition = Partition::new(data.n(), a.machines, a.partition, a.seed)?;
            let t = TheoryParams::compute(&data, &partition, None, a.seed);
            (data.n(), t.sigma_max, t.sigma)
        }
        None => {
            let n = a.n.ok_or_else(|| anyhow!("--n is required without --data"))?;
            let sigma_max = a.sigma_max.ok_or_else(|| anyhow!("--sigma-max is required without --data"))?;
            // sigma_k <= |P_k| sigma_max, so sum_k sigma_k |P_k| <= n sigma_max
            (n, sigma_max, a.sigma.unwrap_or(n as f64 * sigma_max))
        }
    };
    let (nu, sp) = setup::aggregation(a.nu, a.sigma_prime, a.machines);
    let sigma_prime = sp.resolve(nu, a.machines)?;
    let r = RateInputs {
        lambda: a.lambda,
        gamma,
        n,
        sigma_max,
        sigma,
        sigma_prime,
        nu,
        theta: a.theta,
        lipschitz: lipschitz.unwrap_or(0.0),
        epsilon_dual: a.eps_dual,
        epsilon_gap: a.eps_gap,
        initial_dual_suboptimality: a.initial_dual_subopt,
    };
    println!("n={n}");
    println!("sigma_max={sigma_max}");
    println!("sigma={sigma}");
    println!("nu={nu}");
    println!("sigma_prime={sigma_prime}");
    println!("theta={}", a.theta);
    let mut printed = false;
    if gamma > 0.0 {
        println!("gamma={gamma}");
        println!("smooth_factor={}", rates::smooth_factor(&r)?);
        println!("geometric_decrease_factor={}", rates::geometric_decrease_factor(&r)?);
        println!("smooth_rounds_dual={}", rates::smooth_rounds_dual(&r)?);
        println!("smooth_rounds_gap={}", rates::smooth_rounds_gap(&r)?);
        let (add, avg) = rates::adding_vs_averaging(&r, a.machines)?;
        println!("adding_rounds_gap={add}");
        println!("averaging_rounds_gap={avg}");
        printed = true;
    }
    if let Some(l) = lipschitz {
        println!("lipschitz={l}");
        let t = rates::lipschitz_rounds(&r)?;
        println!("lipschitz_t0={}", t.t0);
        println!("lipschitz_warmup={}", t.warmup);
        println!("lipschitz_total={}", t.total);
        printed = true;
    }
    if !printed {
        bail!("no bound applies: give --loss, or --gamma and/or --lipschitz");
    }
    Ok(ExitCode::SUCCESS)
}

pub fn verify(a: VerifyArgs) -> Result<ExitCode> {
    let mut opts = SuiteOptions::new(a.seed, a.trials);
    opts.pairs = a.pairs;
    opts.sigma_prime_scale = a.sigma_prime_scale;
    opts.dump_dir = a.dump_dir;
    if let Some(t) = a.threads {
        opts.threads = t.max(1);
    }
    let report = property_suite(&opts);
    print!("{}", report.summary());
    for d in &report.dumps {
        println!("counterexample={}", d.display());
    }
    let passed = report.passed();
    println!("trials={} passed={passed}", a.trials);
    Ok(if passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

pub fn shard(a: ShardArgs) -> Result<ExitCode> {
    let data = read_data(&a.data, None, false)?;
    let partition = Partition::new(data.n(), a.machines, a.partition, a.seed)?;
    for k in 0..a.machines {
        let path = PathBuf::from(shard_path(&a.out, k));
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        let mut out = BufWriter::new(file);
        data.select(partition.block(k)).write_libsvm(&mut out)?;
        out.flush()?;
        println!("{}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}
