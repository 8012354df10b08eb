//! Turning flags into a problem, a partition and a run configuration.

use std::path::Path;

use anyhow::{bail, Context, Result};
use cocoa::data::read_libsvm_file;
use cocoa::solvers::LineSearch;
use cocoa::{Dataset, Partition, Problem, RunConfig, SigmaPrime, SolverConfig};

use crate::{DataArgs, NuArg, RunArgs, SigmaArg};

pub fn shard_path(base: &str, k: usize) -> String {
    format!("{base}.part{k}")
}

pub fn read_data(path: &Path, features: Option<usize>, normalize: bool) -> Result<Dataset> {
    let mut data = read_libsvm_file(path).with_context(|| format!("reading {}", path.display()))?;
    if let Some(d) = features {
        data = data.with_n_features(d)?;
    }
    Ok(if normalize { data.normalize() } else { data })
}

/// Concatenates `<base>.part0 .. <base>.part<K-1>`; machine `k` owns the
/// examples of its file, in order.
fn read_shards(base: &str, machines: usize, features: Option<usize>, normalize: bool) -> Result<(Dataset, Partition)> {
    let mut parts = Vec::with_capacity(machines);
    for k in 0..machines {
        let path = shard_path(base, k);
        parts.push(read_data(Path::new(&path), None, normalize)?);
    }
    let d = parts.iter().map(Dataset::d).max().unwrap_or(0).max(features.unwrap_or(0));
    let mut columns = Vec::new();
    let mut labels = Vec::new();
    let mut blocks = Vec::with_capacity(machines);
    for part in &parts {
        let start = columns.len();
        for (i, c) in part.columns().enumerate() {
            columns.push(c.indices.iter().copied().zip(c.values.iter().copied()).collect::<Vec<_>>());
            labels.push(part.label(i));
        }
        blocks.push((start..columns.len()).collect());
    }
    let n = columns.len();
    let data = Dataset::from_columns(d, columns, labels)?;
    Ok((data, Partition::from_blocks(n, blocks)?))
}

pub fn load_problem(args: &DataArgs, seed: u64) -> Result<(Problem, Partition)> {
    if args.machines == 0 {
        bail!("--machines must be at least 1");
    }
    let (data, partition) = match (&args.data, &args.shards) {
        (Some(path), None) => {
            let data = read_data(path, args.features, args.normalize)?;
            let seed = args.partition_seed.unwrap_or(seed);
            let partition = Partition::new(data.n(), args.machines, args.partition, seed)?;
            (data, partition)
        }
        (None, Some(base)) => read_shards(base, args.machines, args.features, args.normalize)?,
        _ => bail!("exactly one of --data and --shards is required"),
    };
    let problem = Problem::new(data, args.loss, args.lambda)?;
    Ok((problem, partition))
}

pub fn solver_config(run: &RunArgs, partition: &Partition) -> SolverConfig {
    let h = run
        .local_iters
        .unwrap_or_else(|| partition.sizes().into_iter().max().unwrap_or(1));
    let mut cfg = SolverConfig::new(run.solver, h);
    cfg.memory = run.memory;
    cfg.line_search = LineSearch {
        initial_step: run.initial_step,
        ..cfg.line_search
    };
    cfg
}

/// `(nu, sigma')` from the flags: `add` and `avg` fix both unless sigma' is
/// given explicitly.
pub fn aggregation(nu: NuArg, sigma: SigmaArg, machines: usize) -> (f64, SigmaPrime) {
    let k = machines as f64;
    let (nu, default) = match nu {
        NuArg::Add => (1.0, SigmaPrime::Manual(k)),
        NuArg::Avg => (1.0 / k, SigmaPrime::Manual(1.0)),
        NuArg::Value(v) => (v, SigmaPrime::Auto),
    };
    match sigma {
        SigmaArg::Auto => (nu, default),
        SigmaArg::Value(s) => (nu, SigmaPrime::Manual(s)),
    }
}

pub fn run_config(run: &RunArgs, partition: &Partition) -> RunConfig {
    let machines = partition.num_blocks();
    let (nu, sigma_prime) = aggregation(run.nu, run.sigma_prime, machines);
    let mut cfg = RunConfig::new(machines, solver_config(run, partition));
    cfg.nu = nu;
    cfg.sigma_prime = sigma_prime;
    cfg.rounds = run.rounds;
    cfg.gap_tol = run.gap_tol;
    cfg.gap_every = run.gap_every;
    cfg.seed = run.seed;
    cfg.record_time = !run.no_wallclock;
    cfg
}
