use std::io::Write;
use std::net::TcpListener;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{anyhow, Context as _};
use clap::{Args, Parser, Subcommand, ValueEnum};
use tor_cli::experiments::{self, Algorithm, OmegaConfig};
use tor_cli::report::{self, ComputeReport, Format, OmegaReport, RankSummary};
use tor_cli::CliError;
use tor_core::gbsgen::{self, InterferometerU, ModeOrdering, SqueezeSpec, PRNG_ID};
use tor_core::parallel::{WorkerPool, DEFAULT_CUTOFF, THREADS_ENV};
use tor_core::worksharing::{self, Cohort, SimConfig, TcpTransport, WorkerConfig};
use tor_core::{tormat, CholeskyPrecision, ComplexMatrix, EvalOptions, TorResult};

#[derive(Parser, Debug)]
#[command(name = "tor", version, about = "Exact Torontonian evaluation")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Debug)]
struct Global {
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads [default: available parallelism]
    #[arg(long, global = true, env = THREADS_ENV)]
    threads: Option<usize>,
    #[arg(long, global = true, default_value = "extended", value_parser = parse_precision)]
    precision: CholeskyPrecision,
    /// Tally floating-point operations.
    #[arg(long, global = true)]
    counting: bool,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Write data here instead of stdout.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
}

fn parse_precision(s: &str) -> Result<CholeskyPrecision, String> {
    s.parse()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum AlgorithmArg {
    Naive,
    Recursive,
}

impl From<AlgorithmArg> for Algorithm {
    fn from(a: AlgorithmArg) -> Self {
        match a {
            AlgorithmArg::Naive => Algorithm::Naive,
            AlgorithmArg::Recursive => Algorithm::Recursive,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Interferometer {
    Haar,
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum OrderingArg {
    Interleaved,
    Block,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Transport {
    Sim,
    Tcp,
}

#[derive(Args, Debug, Clone, Copy)]
struct WorkArgs {
    /// Items with at most 2^k addends are evaluated without splitting.
    #[arg(long, default_value_t = WorkerConfig::default().leaf_cutoff)]
    leaf_cutoff: usize,
    /// Pending items required before offloading to an idle rank.
    #[arg(long, default_value_t = WorkerConfig::default().min_pending)]
    min_pending: usize,
}

impl WorkArgs {
    fn config(self) -> WorkerConfig {
        WorkerConfig {
            leaf_cutoff: self.leaf_cutoff,
            min_pending: self.min_pending,
            ..WorkerConfig::default()
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evaluate the Torontonian of a TORMAT1 file.
    Compute {
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = AlgorithmArg::Recursive)]
        algorithm: AlgorithmArg,
        /// Task granularity exponent of the parallel evaluator.
        #[arg(long, default_value_t = DEFAULT_CUTOFF)]
        cutoff: usize,
    },
    /// Write a sampling matrix as a TORMAT1 file.
    Generate {
        /// Number of optical modes d (the matrix is 2d x 2d).
        #[arg(long)]
        modes: usize,
        /// Squeezing parameters: one value for all modes, or one per mode.
        #[arg(long, value_delimiter = ',', default_value = "0.5")]
        squeezing: Vec<f64>,
        #[arg(long, value_enum, default_value_t = Interferometer::Haar)]
        interferometer: Interferometer,
        #[arg(long, value_enum, default_value_t = OrderingArg::Interleaved)]
        ordering: OrderingArg,
        /// Emit a random valid matrix with this spectral radius instead.
        #[arg(long)]
        random_radius: Option<f64>,
    },
    /// Fit the complexity exponent from counted FLOs.
    FitOmega {
        #[arg(long, value_enum, default_value_t = AlgorithmArg::Recursive)]
        algorithm: AlgorithmArg,
        #[arg(long, default_value_t = 26)]
        n_min: usize,
        #[arg(long, default_value_t = 40)]
        n_max: usize,
        #[arg(long, default_value_t = 2)]
        trials: usize,
        /// Use the closed-form standard count above this N.
        #[arg(long)]
        closed_form_above: Option<usize>,
    },
    /// Time the parallel evaluator across thread counts.
    Scaling {
        #[arg(long, value_delimiter = ',', default_value = "24,28")]
        sizes: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
        thread_list: Vec<usize>,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long, default_value_t = DEFAULT_CUTOFF)]
        cutoff: usize,
    },
    /// Relative error of double Cholesky against extended precision.
    Fidelity {
        #[arg(long, value_delimiter = ',', default_value = "0.2,0.4,0.6,0.8,1.0")]
        squeezing: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "24")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        trials: usize,
    },
    /// Run one rank of a TCP cohort.
    Worker {
        input: PathBuf,
        #[arg(long)]
        rank: usize,
        /// File of `<rank> <host:port>` lines.
        #[arg(long, conflicts_with = "connect")]
        cohort: Option<PathBuf>,
        /// Address to listen on (defaults to the cohort entry).
        #[arg(long)]
        listen: Option<String>,
        /// Rank 0 address for address discovery.
        #[arg(long)]
        connect: Option<String>,
        /// Cohort size; required at rank 0 with address discovery.
        #[arg(long)]
        ranks: Option<usize>,
        #[arg(long, default_value_t = 60)]
        timeout_s: u64,
        #[command(flatten)]
        work: WorkArgs,
    },
    /// Run a whole cohort in this process and print the gathered result.
    Distribute {
        input: PathBuf,
        #[arg(long, default_value_t = 2)]
        ranks: usize,
        #[arg(long, value_enum, default_value_t = Transport::Sim)]
        transport: Transport,
        #[command(flatten)]
        work: WorkArgs,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn threads(g: &Global) -> usize {
    g.threads
        .filter(|&t| t > 0)
        .unwrap_or_else(tor_core::parallel::default_threads)
}

fn load(path: &PathBuf) -> Result<ComplexMatrix, CliError> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(tormat::load(&text)?)
}

fn emit(g: &Global, text: &str) -> Result<(), CliError> {
    let mut out = report::open_output(g.output.as_deref())?;
    out.write_all(text.as_bytes())?;
    out.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let g = &cli.global;
    let precision = g.precision;
    match cli.cmd {
        Command::Compute {
            input,
            algorithm,
            cutoff,
        } => {
            let a = load(&input)?;
            let algorithm = Algorithm::from(algorithm);
            let opts = algorithm.options(precision).with_counting(g.counting);
            let t = threads(g);
            let start = Instant::now();
            let r = match algorithm {
                Algorithm::Recursive if t > 1 => {
                    WorkerPool::new(t).evaluate(&a, opts, cutoff, false)?.0
                }
                _ => algorithm.evaluate(&a, opts)?,
            };
            let wall = start.elapsed().as_secs_f64();
            let rep = ComputeReport::new(
                &r,
                g.counting,
                wall,
                algorithm.name(),
                &precision.to_string(),
            );
            emit(g, &rep.render(g.format))
        }
        Command::Generate {
            modes,
            squeezing,
            interferometer,
            ordering,
            random_radius,
        } => {
            let mut comments = vec![format!("seed {}", g.seed), format!("prng {PRNG_ID}")];
            let a = if let Some(rho) = random_radius {
                if !(0.0..1.0).contains(&rho) {
                    return Err(CliError::Invalid(format!(
                        "spectral radius {rho} not in [0, 1)"
                    )));
                }
                comments.push(format!("random valid matrix, spectral radius {rho}"));
                gbsgen::random_valid_matrix(modes, rho, g.seed)
            } else {
                let r = match squeezing.len() {
                    1 => vec![squeezing[0]; modes],
                    n if n == modes => squeezing,
                    n => {
                        return Err(CliError::Invalid(format!(
                            "{n} squeezing values for {modes} modes"
                        )))
                    }
                };
                if r.iter().any(|x| !x.is_finite() || *x < 0.0) {
                    return Err(CliError::Invalid(
                        "squeezing must be finite and non-negative".into(),
                    ));
                }
                let u = match interferometer {
                    Interferometer::Haar => gbsgen::haar_unitary(modes, g.seed),
                    Interferometer::Identity => InterferometerU::identity(modes),
                };
                let list: Vec<String> = r.iter().map(|x| x.to_string()).collect();
                comments.push(format!("squeezing {}", list.join(",")));
                comments.push(format!("interferometer {interferometer:?}").to_lowercase());
                gbsgen::sampling_matrix(&SqueezeSpec { r, seed: g.seed }, &u)
            };
            let ordering = match ordering {
                OrderingArg::Interleaved => ModeOrdering::Interleaved,
                OrderingArg::Block => ModeOrdering::Block,
            };
            let m = gbsgen::reorder(&a, ModeOrdering::Interleaved, ordering)
                .map_err(|e| CliError::Invalid(e.to_string()))?;
            emit(g, &tormat::format(&m, ordering, &comments))
        }
        Command::FitOmega {
            algorithm,
            n_min,
            n_max,
            trials,
            closed_form_above,
        } => {
            let algorithm = Algorithm::from(algorithm);
            let cap = algorithm.options(precision).mode_cap;
            if n_min < 8 || n_min % 2 != 0 || n_max < n_min {
                return Err(CliError::Invalid(format!(
                    "bad size range {n_min}..={n_max}"
                )));
            }
            if n_max / 2 > cap && closed_form_above.is_none_or(|c| c >= n_max) {
                return Err(CliError::Cap(format!(
                    "N = {n_max} exceeds the cap of {cap} modes"
                )));
            }
            let cfg = OmegaConfig {
                algorithm,
                n_min,
                n_max,
                trials,
                seed: g.seed,
                closed_form_above,
            };
            let (points, fit) = experiments::run_fit_omega(&cfg)?;
            let rep = OmegaReport {
                algorithm: algorithm.name().to_string(),
                points,
                fit,
            };
            emit(g, &rep.render(g.format))
        }
        Command::Scaling {
            sizes,
            thread_list,
            repeats,
            cutoff,
        } => {
            let rep =
                experiments::run_scaling(&sizes, &thread_list, repeats, g.seed, precision, cutoff)?;
            emit(g, &rep.render(g.format))
        }
        Command::Fidelity {
            squeezing,
            sizes,
            trials,
        } => {
            if let Some(n) = sizes.iter().find(|&&n| n % 2 != 0) {
                return Err(CliError::Invalid(format!("size {n} is odd")));
            }
            let recs = experiments::run_fidelity(&squeezing, &sizes, trials, g.seed, threads(g))?;
            emit(g, &report::render_fidelity(&recs, g.format))
        }
        Command::Worker {
            input,
            rank,
            cohort,
            listen,
            connect,
            ranks,
            timeout_s,
            work,
        } => {
            let a = load(&input)?;
            let timeout = Duration::from_secs(timeout_s);
            let mut transport = if let Some(path) = cohort {
                let text = std::fs::read_to_string(&path)
                    .with_context(|| format!("reading {}", path.display()))?;
                let cohort = Cohort::parse(&text)?;
                let own = listen
                    .or_else(|| cohort.addrs.get(rank).cloned())
                    .ok_or_else(|| {
                        CliError::Invalid(format!(
                            "rank {rank} not in a cohort of {}",
                            cohort.ranks()
                        ))
                    })?;
                let listener = TcpListener::bind(&own).with_context(|| format!("binding {own}"))?;
                TcpTransport::establish(rank, &cohort, &listener, timeout)?
            } else {
                let own = listen.ok_or_else(|| anyhow!("--listen is required without --cohort"))?;
                let listener = TcpListener::bind(&own).with_context(|| format!("binding {own}"))?;
                match (rank, connect) {
                    (0, None) => {
                        let p = ranks.ok_or_else(|| anyhow!("rank 0 needs --ranks"))?;
                        TcpTransport::bootstrap_root(&listener, p, timeout)?
                    }
                    (0, Some(_)) => {
                        return Err(anyhow!("rank 0 listens, it does not connect").into())
                    }
                    (r, Some(root)) => TcpTransport::bootstrap_peer(r, &listener, &root, timeout)?,
                    (_, None) => return Err(anyhow!("--connect is required for rank > 0").into()),
                }
            };
            let opts = EvalOptions::recursive(precision).with_counting(g.counting);
            let start = Instant::now();
            let out =
                worksharing::run_rank_tcp(&a, &mut transport, opts, work.config(), threads(g))?;
            let wall = start.elapsed().as_secs_f64();
            match out.total {
                Some(total) => {
                    let mut rep = cohort_report(&total, g, wall);
                    rep.ranks.push(RankSummary::from(&out.report));
                    emit(g, &rep.render(g.format))
                }
                None => {
                    let r = out.report;
                    eprintln!(
                        "rank {} done: {} addends, {} items processed",
                        r.rank, r.addends, r.items_processed
                    );
                    Ok(())
                }
            }
        }
        Command::Distribute {
            input,
            ranks,
            transport,
            work,
        } => {
            let a = load(&input)?;
            let opts = EvalOptions::recursive(precision).with_counting(g.counting);
            let start = Instant::now();
            let out = match transport {
                Transport::Sim => worksharing::simulate(
                    &a,
                    ranks,
                    opts,
                    work.config(),
                    SimConfig::seeded(g.seed),
                )?,
                Transport::Tcp => {
                    let per_rank = (threads(g) / ranks.max(1)).max(1);
                    worksharing::run_local_tcp_cohort(&a, ranks, opts, work.config(), per_rank)?
                }
            };
            let wall = start.elapsed().as_secs_f64();
            let mut rep = cohort_report(&out.result, g, wall);
            rep.ranks = out.ranks.iter().map(RankSummary::from).collect();
            emit(g, &rep.render(g.format))
        }
    }
}

fn cohort_report(r: &TorResult, g: &Global, wall: f64) -> ComputeReport {
    ComputeReport::new(r, g.counting, wall, "worksharing", &g.precision.to_string())
}
