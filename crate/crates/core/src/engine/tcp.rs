//! TCP transport: one coordinator, `K` worker processes.
//!
//! All integers and floats are little-endian. Every message is a frame
//!
//! ```text
//! [u32 magic][u32 round][u32 machine-id][u64 payload-len][payload]
//! ```
//!
//! | magic        | direction            | payload                                   |
//! |--------------|----------------------|-------------------------------------------|
//! | `0xC0C0A000` | both                 | `d` x f64: `v^t` down, `Delta v_k` up     |
//! | `0xC0C0A001` | worker to coordinator| u64 local iterations so far, `alpha_[k]`  |
//! | `0xC0C0A002` | coordinator to worker| run setup (see [`Setup`])                 |
//! | `0xC0C0A003` | worker to coordinator| hello: u64 shard size, u64 local `d`      |
//! | `0xC0C0A0FF` | coordinator to worker| stop, empty                               |
//!
//! A session is: hello, setup, then per round `t` the coordinator sends `v^t`
//! and the worker answers with `Delta v_k`, followed by its dual block on
//! measured rounds. A stop is answered with the final dual block. Losing a
//! connection aborts the run with the round number.

use std::io::{self, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use super::{drive, worker_params, Cluster, Reply, RoundMetrics, RunConfig, RunReport, Worker, WorkerParams};
use crate::data::{Dataset, Partition};
use crate::error::{Error, Result};
use crate::losses::Loss;
use crate::problem::Problem;
use crate::solvers::{LineSearch, SolverConfig, SolverKind};
use crate::subproblem::Shard;

pub const MAGIC_VECTOR: u32 = 0xC0C0_A000;
pub const MAGIC_ALPHA: u32 = 0xC0C0_A001;
pub const MAGIC_SETUP: u32 = 0xC0C0_A002;
pub const MAGIC_HELLO: u32 = 0xC0C0_A003;
pub const MAGIC_STOP: u32 = 0xC0C0_A0FF;

const MAX_PAYLOAD: u64 = 1 << 36;

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub magic: u32,
    pub round: u32,
    pub machine: u32,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(magic: u32, round: u32, machine: u32, payload: Vec<u8>) -> Self {
        Self {
            magic,
            round,
            machine,
            payload,
        }
    }

    pub fn from_f64s(magic: u32, round: u32, machine: u32, data: &[f64]) -> Self {
        let mut payload = Vec::with_capacity(8 * data.len());
        for x in data {
            payload.extend_from_slice(&x.to_le_bytes());
        }
        Self::new(magic, round, machine, payload)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(20 + self.payload.len());
        buf.extend_from_slice(&self.magic.to_le_bytes());
        buf.extend_from_slice(&self.round.to_le_bytes());
        buf.extend_from_slice(&self.machine.to_le_bytes());
        buf.extend_from_slice(&(self.payload.len() as u64).to_le_bytes());
        buf.extend_from_slice(&self.payload);
        buf
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(&self.encode())?;
        w.flush()
    }

    pub fn read_from<R: Read>(r: &mut R) -> io::Result<Frame> {
        let mut header = [0u8; 20];
        r.read_exact(&mut header)?;
        let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
        let len = u64::from_le_bytes(header[12..20].try_into().unwrap());
        if len > MAX_PAYLOAD {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("frame payload of {len} bytes exceeds limit"),
            ));
        }
        let mut payload = vec![0u8; len as usize];
        r.read_exact(&mut payload)?;
        Ok(Frame::new(word(0), word(4), word(8), payload))
    }

    pub fn f64s(&self) -> Result<Vec<f64>> {
        if self.payload.len() % 8 != 0 {
            return Err(Error::Protocol(format!(
                "payload length {} is not a multiple of 8",
                self.payload.len()
            )));
        }
        Ok(self
            .payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn expect(&self, magic: u32, round: u32, machine: u32) -> Result<()> {
        if self.magic != magic {
            return Err(Error::Protocol(format!(
                "expected frame {magic:#010x}, got {:#010x}",
                self.magic
            )));
        }
        if self.round != round || self.machine != machine {
            return Err(Error::Protocol(format!(
                "frame for round {} machine {} where round {round} machine {machine} was expected",
                self.round, self.machine
            )));
        }
        Ok(())
    }
}

/// Little-endian word reader for structured payloads.
struct Words<'a> {
    bytes: &'a [u8],
}

impl Words<'_> {
    fn take(&mut self) -> Result<[u8; 8]> {
        if self.bytes.len() < 8 {
            return Err(Error::Protocol("truncated payload".into()));
        }
        let (head, rest) = self.bytes.split_at(8);
        self.bytes = rest;
        Ok(head.try_into().unwrap())
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    fn rest_f64(&mut self) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.bytes.len() / 8);
        while !self.bytes.is_empty() {
            out.push(self.f64()?);
        }
        Ok(out)
    }
}

/// Everything a worker needs besides its shard.
#[derive(Clone, Debug, PartialEq)]
pub struct Setup {
    pub n: u64,
    pub d: u64,
    pub machines: u64,
    pub loss: Loss,
    pub solver: SolverConfig,
    pub lambda: f64,
    pub nu: f64,
    pub sigma_prime: f64,
    pub rounds: u64,
    pub gap_every: u64,
    pub keep_history: bool,
    pub alpha: Vec<f64>,
}

impl Setup {
    pub fn encode(&self) -> Vec<u8> {
        let mut b = Vec::new();
        let mut u = |x: u64| b.extend_from_slice(&x.to_le_bytes());
        u(self.n);
        u(self.d);
        u(self.machines);
        u(Loss::ALL.iter().position(|&l| l == self.loss).unwrap() as u64);
        u(SolverKind::ALL.iter().position(|&k| k == self.solver.kind).unwrap() as u64);
        u(self.solver.local_iters as u64);
        u(self.solver.memory.unwrap_or(0) as u64);
        u(self.solver.seed);
        u(self.rounds);
        u(self.gap_every);
        u(self.keep_history as u64);
        let ls = &self.solver.line_search;
        for x in [
            self.lambda,
            self.nu,
            self.sigma_prime,
            ls.initial_step.unwrap_or(f64::NAN),
            ls.shrink,
            ls.sufficient_decrease,
        ]
        .iter()
        .chain(&self.alpha)
        {
            b.extend_from_slice(&x.to_le_bytes());
        }
        b
    }

    pub fn decode(payload: &[u8]) -> Result<Self> {
        let mut w = Words { bytes: payload };
        let n = w.u64()?;
        let d = w.u64()?;
        let machines = w.u64()?;
        let loss = *Loss::ALL
            .get(w.u64()? as usize)
            .ok_or_else(|| Error::Protocol("unknown loss code".into()))?;
        let kind = *SolverKind::ALL
            .get(w.u64()? as usize)
            .ok_or_else(|| Error::Protocol("unknown solver code".into()))?;
        let local_iters = w.u64()? as usize;
        let memory = match w.u64()? {
            0 => None,
            m => Some(m as usize),
        };
        let seed = w.u64()?;
        let rounds = w.u64()?;
        let gap_every = w.u64()?;
        let keep_history = w.u64()? != 0;
        let lambda = w.f64()?;
        let nu = w.f64()?;
        let sigma_prime = w.f64()?;
        let initial = w.f64()?;
        let shrink = w.f64()?;
        let sufficient_decrease = w.f64()?;
        let alpha = w.rest_f64()?;
        Ok(Self {
            n,
            d,
            machines,
            loss,
            solver: SolverConfig {
                kind,
                local_iters,
                memory,
                line_search: LineSearch {
                    initial_step: (!initial.is_nan()).then_some(initial),
                    shrink,
                    sufficient_decrease,
                },
                seed,
            },
            lambda,
            nu,
            sigma_prime,
            rounds,
            gap_every,
            keep_history,
            alpha,
        })
    }

    fn measure_after(&self, t: usize) -> bool {
        super::measure_due(t, self.rounds as usize, self.gap_every as usize, self.keep_history)
    }
}

fn transport(round: usize) -> impl Fn(io::Error) -> Error {
    move |source| Error::Transport {
        round: round as u32,
        source,
    }
}

struct TcpCluster {
    streams: Vec<TcpStream>,
    d: usize,
    iterations_seen: Vec<u64>,
    last_round: usize,
}

impl TcpCluster {
    fn read_alpha(&mut self, k: usize, round: u32) -> Result<(u64, Vec<f64>)> {
        let frame = Frame::read_from(&mut self.streams[k]).map_err(transport(round as usize))?;
        frame.expect(MAGIC_ALPHA, round, k as u32)?;
        let mut w = Words { bytes: &frame.payload };
        let iters = w.u64()?;
        Ok((iters, w.rest_f64()?))
    }
}

impl Cluster for TcpCluster {
    fn round(&mut self, t: usize, v: &[f64], ship_alpha: bool) -> Result<Vec<Reply>> {
        self.last_round = t;
        let round = t as u32;
        let down = Frame::from_f64s(MAGIC_VECTOR, round, 0, v);
        for (k, s) in self.streams.iter_mut().enumerate() {
            let mut f = down.clone();
            f.machine = k as u32;
            f.write_to(s).map_err(transport(t))?;
        }
        let mut replies = Vec::with_capacity(self.streams.len());
        for k in 0..self.streams.len() {
            let frame = Frame::read_from(&mut self.streams[k]).map_err(transport(t))?;
            frame.expect(MAGIC_VECTOR, round, k as u32)?;
            let delta_v = frame.f64s()?;
            if delta_v.len() != self.d {
                return Err(Error::Protocol(format!(
                    "machine {k} sent an update of length {}, expected {}",
                    delta_v.len(),
                    self.d
                )));
            }
            let (iterations, alpha) = if ship_alpha {
                let (cumulative, block) = self.read_alpha(k, round)?;
                let fresh = cumulative - self.iterations_seen[k];
                self.iterations_seen[k] = cumulative;
                (fresh as usize, Some(block))
            } else {
                (0, None)
            };
            replies.push(Reply {
                delta_v,
                iterations,
                alpha,
            });
        }
        Ok(replies)
    }

    fn finish(&mut self) -> Result<Vec<Vec<f64>>> {
        let round = self.last_round as u32;
        for (k, s) in self.streams.iter_mut().enumerate() {
            Frame::new(MAGIC_STOP, round, k as u32, Vec::new())
                .write_to(s)
                .map_err(transport(self.last_round))?;
        }
        (0..self.streams.len())
            .map(|k| self.read_alpha(k, round).map(|(_, a)| a))
            .collect()
    }
}

/// Coordinator: accepts `K` workers on `listener`, ships the run setup and
/// drives the outer loop. `problem` must hold the full dataset (the gap is
/// evaluated here).
pub fn serve(
    listener: &TcpListener,
    problem: &Problem,
    partition: &Partition,
    config: &RunConfig,
    alpha0: Option<Vec<f64>>,
    on_round: &mut dyn FnMut(&RoundMetrics) -> Result<()>,
) -> Result<RunReport> {
    let sigma_prime = config.validate(problem.loss(), partition)?;
    let alpha0 = super::check_alpha0(problem, &alpha0)?;
    let k_count = config.machines;
    let mut slots: Vec<Option<TcpStream>> = (0..k_count).map(|_| None).collect();
    let mut connected = 0;
    while connected < k_count {
        let (mut stream, peer) = listener.accept().map_err(transport(0))?;
        stream.set_nodelay(true).map_err(transport(0))?;
        let hello = Frame::read_from(&mut stream).map_err(transport(0))?;
        if hello.magic != MAGIC_HELLO {
            return Err(Error::Protocol(format!("{peer} did not start with a hello frame")));
        }
        let k = hello.machine as usize;
        if k >= k_count || slots[k].is_some() {
            return Err(Error::Protocol(format!("{peer} claims invalid or duplicate machine id {k}")));
        }
        let mut w = Words { bytes: &hello.payload };
        let (size, local_d) = (w.u64()? as usize, w.u64()? as usize);
        if size != partition.block(k).len() {
            return Err(Error::Protocol(format!(
                "machine {k} holds {size} examples, partition expects {}",
                partition.block(k).len()
            )));
        }
        if local_d > problem.d() {
            return Err(Error::Protocol(format!(
                "machine {k} has {local_d} features, problem has {}",
                problem.d()
            )));
        }
        log::info!("machine {k} connected from {peer}");
        slots[k] = Some(stream);
        connected += 1;
    }
    let mut streams: Vec<TcpStream> = slots.into_iter().map(|s| s.unwrap()).collect();
    let params = worker_params(problem, config, sigma_prime);
    for (k, s) in streams.iter_mut().enumerate() {
        let setup = Setup {
            n: problem.n() as u64,
            d: problem.d() as u64,
            machines: k_count as u64,
            loss: params.loss,
            solver: params.solver.clone(),
            lambda: params.lambda,
            nu: params.nu,
            sigma_prime,
            rounds: config.rounds as u64,
            gap_every: config.gap_every as u64,
            keep_history: config.keep_history,
            alpha: partition.gather(k, &alpha0),
        };
        Frame::new(MAGIC_SETUP, 0, k as u32, setup.encode())
            .write_to(s)
            .map_err(transport(0))?;
    }
    let mut cluster = TcpCluster {
        streams,
        d: problem.d(),
        iterations_seen: vec![0; k_count],
        last_round: 0,
    };
    drive(problem, partition, config, sigma_prime, alpha0, &mut cluster, on_round)
}

/// Worker session over an established connection. Returns the final dual
/// block.
pub fn work(mut stream: TcpStream, machine: usize, shard: Dataset) -> Result<Vec<f64>> {
    stream.set_nodelay(true).map_err(transport(0))?;
    let mut hello = Vec::with_capacity(16);
    hello.extend_from_slice(&(shard.n() as u64).to_le_bytes());
    hello.extend_from_slice(&(shard.d() as u64).to_le_bytes());
    Frame::new(MAGIC_HELLO, 0, machine as u32, hello)
        .write_to(&mut stream)
        .map_err(transport(0))?;
    let frame = Frame::read_from(&mut stream).map_err(transport(0))?;
    frame.expect(MAGIC_SETUP, 0, machine as u32)?;
    let setup = Setup::decode(&frame.payload)?;
    let d = setup.d as usize;
    if setup.alpha.len() != shard.n() {
        return Err(Error::Protocol("setup dual block does not match the shard".into()));
    }
    let shard = shard.with_n_features(d)?;
    let params = WorkerParams {
        loss: setup.loss,
        lambda: setup.lambda,
        n: setup.n as usize,
        machines: setup.machines as usize,
        sigma_prime: setup.sigma_prime,
        nu: setup.nu,
        solver: setup.solver.clone(),
    };
    params.solver.check_compatible(params.loss)?;
    let mut worker = Worker::new(machine, shard, setup.alpha.clone(), params);
    let mut iterations = 0u64;
    let alpha_frame = |round: u32, iterations: u64, alpha: &[f64]| {
        let mut payload = Vec::with_capacity(8 + 8 * alpha.len());
        payload.extend_from_slice(&iterations.to_le_bytes());
        for a in alpha {
            payload.extend_from_slice(&a.to_le_bytes());
        }
        Frame::new(MAGIC_ALPHA, round, machine as u32, payload)
    };
    loop {
        let frame = Frame::read_from(&mut stream).map_err(transport(0))?;
        let t = frame.round as usize;
        match frame.magic {
            MAGIC_VECTOR => {
                let v = frame.f64s()?;
                if v.len() != d {
                    return Err(Error::Protocol(format!("shared vector of length {}, expected {d}", v.len())));
                }
                let (delta_v, its) = worker.step(&v)?;
                iterations += its as u64;
                Frame::from_f64s(MAGIC_VECTOR, frame.round, machine as u32, &delta_v)
                    .write_to(&mut stream)
                    .map_err(transport(t))?;
                if setup.measure_after(t) {
                    alpha_frame(frame.round, iterations, worker.alpha())
                        .write_to(&mut stream)
                        .map_err(transport(t))?;
                }
            }
            MAGIC_STOP => {
                alpha_frame(frame.round, iterations, worker.alpha())
                    .write_to(&mut stream)
                    .map_err(transport(t))?;
                return Ok(worker.alpha().to_vec());
            }
            other => return Err(Error::Protocol(format!("unexpected frame {other:#010x}"))),
        }
    }
}

/// Connects to the coordinator, retrying until `patience` has elapsed, and
/// runs a worker session.
pub fn connect_and_work(addr: impl ToSocketAddrs, machine: usize, shard: Dataset, patience: Duration) -> Result<Vec<f64>> {
    let start = Instant::now();
    let stream = loop {
        match TcpStream::connect(&addr) {
            Ok(s) => break s,
            Err(e) if start.elapsed() < patience => {
                log::debug!("connect failed ({e}), retrying");
                std::thread::sleep(Duration::from_millis(50));
            }
            Err(e) => return Err(Error::Transport { round: 0, source: e }),
        }
    };
    work(stream, machine, shard)
}

/// Runs coordinator and `K` workers over loopback TCP inside this process.
pub fn run_loopback(problem: &Problem, partition: &Partition, config: &RunConfig) -> Result<RunReport> {
    config.validate(problem.loss(), partition)?;
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..config.machines)
            .map(|k| {
                let shard = Shard::extract(problem.data(), partition, k).data;
                scope.spawn(move || connect_and_work(addr, k, shard, Duration::from_secs(10)))
            })
            .collect();
        let report = serve(&listener, problem, partition, config, None, &mut |_| Ok(()));
        let mut worker_err = None;
        for h in handles {
            if let Err(e) = h.join().expect("worker thread panicked") {
                worker_err.get_or_insert(e);
            }
        }
        match (report, worker_err) {
            (Ok(r), None) => Ok(r),
            (Err(e), _) | (Ok(_), Some(e)) => Err(e),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::run;
    use crate::verify::InstanceGenerator;

    #[test]
    fn frame_layout() {
        let f = Frame::from_f64s(MAGIC_VECTOR, 3, 1, &[1.0, -2.5]);
        let bytes = f.encode();
        assert_eq!(bytes.len(), 20 + 16);
        assert_eq!(&bytes[0..4], &0xC0C0_A000u32.to_le_bytes());
        assert_eq!(&bytes[4..8], &3u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..20], &16u64.to_le_bytes());
        let back = Frame::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.f64s().unwrap(), vec![1.0, -2.5]);
    }

    #[test]
    fn truncated_frame_is_an_error() {
        let bytes = Frame::from_f64s(MAGIC_VECTOR, 0, 0, &[1.0]).encode();
        assert!(Frame::read_from(&mut &bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn setup_round_trip() {
        let mut solver = SolverConfig::new(SolverKind::Lbfgs, 7).seed(99);
        solver.memory = Some(3);
        solver.line_search.initial_step = Some(0.25);
        let s = Setup {
            n: 10,
            d: 4,
            machines: 2,
            loss: Loss::Quadratic,
            solver,
            lambda: 0.1,
            nu: 0.5,
            sigma_prime: 1.0,
            rounds: 9,
            gap_every: 2,
            keep_history: true,
            alpha: vec![0.5, -1.0, 2.0],
        };
        assert_eq!(Setup::decode(&s.encode()).unwrap(), s);
    }

    #[test]
    fn loopback_matches_inproc_bitwise() {
        for loss in [Loss::Quadratic, Loss::Hinge] {
            let inst = InstanceGenerator::new(24, 6, 3, loss, 0.05).seed(4).generate();
            let mut cfg = RunConfig::new(3, SolverConfig::new(crate::solvers::SolverKind::Cd, 6));
            cfg.rounds = 5;
            cfg.gap_every = 2;
            cfg.seed = 21;
            cfg.record_time = false;
            let a = run(&inst.problem, &inst.partition, &cfg).unwrap();
            let b = run_loopback(&inst.problem, &inst.partition, &cfg).unwrap();
            assert_eq!(a.state, b.state);
            assert_eq!(a.metrics, b.metrics);
        }
    }
}
