use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use tdoracle::network::{estimate_metric_params, reduce_out_degree, MetricParams, ParamSource, TdInstance, TimeWindow};
use tdoracle::query::{QueryEngine, StretchBudget};
use tdoracle::summaries::{build_oracle, OracleConfig, OracleSummaries, UpperMode};
use tdoracle::toolkit::bench::{bench, ladder_rhos, BenchConfig};
use tdoracle::toolkit::certify::certify;
use tdoracle::toolkit::generate::{generate, DelayProfile, GenSpec, Topology};
use tdoracle::toolkit::io::{parse_queries, AnswerRecord};
use tdoracle::toolkit::validate::{random_queries, validate_fca, validate_rqa, validate_summaries, ValidationReport, VertexSample};

#[derive(Parser)]
#[command(name = "tdoracle", version, about = "Time-dependent distance oracle for periodic FIFO networks")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TopologyArg {
    Grid,
    Sparse,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Constant,
    Bell,
    Mixed,
}

#[derive(Clone, Copy, ValueEnum)]
enum UpperArg {
    Apex,
    Lifted,
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum Format {
    Table,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic instance.
    Gen {
        #[arg(long)]
        n: usize,
        #[arg(long, value_enum, default_value = "grid")]
        topology: TopologyArg,
        /// Arcs per vertex for the sparse topology.
        #[arg(long, default_value_t = 3.0)]
        density: f64,
        #[arg(long, value_enum, default_value = "mixed")]
        profile: ProfileArg,
        #[arg(long, default_value_t = 0)]
        spoilers: usize,
        #[arg(long, default_value_t = 0.3)]
        td_fraction: f64,
        #[arg(long, default_value_t = -0.5, allow_hyphen_values = true)]
        min_slope: f64,
        #[arg(long, default_value_t = 0.5)]
        max_slope: f64,
        #[arg(long, default_value_t = 1.0)]
        amplitude: f64,
        #[arg(long, default_value_t = 1440.0)]
        period: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Replace every vertex of out-degree above 2 by a binary tree.
        #[arg(long)]
        reduce_degree: bool,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Slope and asymmetry constants, sampled or exact.
    Estimate {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.1)]
        epsilon: f64,
        /// Sampling window start and end within one period.
        #[arg(long, num_args = 2, value_names = ["START", "END"])]
        window: Option<Vec<f64>>,
        /// Exact all-pairs certification instead of sampling.
        #[arg(long)]
        certify: bool,
    },
    /// Build landmark summaries.
    Preprocess {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        rho: f64,
        #[arg(long, default_value_t = 0)]
        budget: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        lambda_max: Option<f64>,
        #[arg(long, default_value_t = 40)]
        max_depth: u32,
        #[arg(long)]
        keep_lower: bool,
        #[arg(long, value_enum, default_value = "lifted")]
        upper: UpperArg,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Answer a query batch.
    Query {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        summaries: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, default_value_t = 0)]
        budget: usize,
        /// Append reconstructed arc sequences.
        #[arg(long)]
        paths: bool,
    },
    /// Check summaries and query answers against exact searches.
    Validate {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        summaries: PathBuf,
        #[arg(long, default_value_t = 1000)]
        queries: usize,
        #[arg(long, default_value_t = 2)]
        budget: usize,
        #[arg(long, default_value_t = 50)]
        vertices: usize,
        #[arg(long, default_value_t = 64)]
        times: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Use exact constants; otherwise sampled estimates.
        #[arg(long)]
        certify: bool,
    },
    /// Sweep (rho, epsilon, r) and report costs.
    Bench {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long, value_delimiter = ',')]
        rho: Vec<f64>,
        /// Exponents a for rho = n^-a.
        #[arg(long, value_delimiter = ',')]
        ladder: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0.1")]
        epsilon: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        budget: Vec<usize>,
        #[arg(long, default_value_t = 1000)]
        queries: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
        /// Also write the CSV report here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn load_instance(path: &Path) -> Result<TdInstance> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    TdInstance::from_text(&text).with_context(|| format!("parsing {}", path.display()))
}

fn describe(p: &MetricParams) -> String {
    let source = match p.source {
        ParamSource::Certified => "certified".to_string(),
        ParamSource::Estimated { samples, used } => format!("estimated ({used} of {samples} samples connected; lower bounds)"),
        ParamSource::Given => "given".to_string(),
    };
    format!(
        "lambda_min {}\nlambda_max {}\nzeta {}\nepsilon {}\npsi {}\nsource {source}\n",
        p.lambda_min,
        p.lambda_max,
        p.zeta,
        p.epsilon,
        p.psi()
    )
}

fn run(cli: Cli) -> Result<bool> {
    let threads = cli.threads;
    if let Some(k) = threads {
        rayon::ThreadPoolBuilder::new().num_threads(k).build_global().context("configuring thread pool")?;
    }
    match cli.command {
        Command::Gen {
            n,
            topology,
            density,
            profile,
            spoilers,
            td_fraction,
            min_slope,
            max_slope,
            amplitude,
            period,
            seed,
            reduce_degree,
            output,
        } => {
            let topology = match topology {
                TopologyArg::Grid => Topology::Grid,
                TopologyArg::Sparse => Topology::RandomSparse { arcs_per_vertex: density },
            };
            let profile = match profile {
                ProfileArg::Constant => DelayProfile::Constant,
                ProfileArg::Bell => DelayProfile::ConcaveBell,
                ProfileArg::Mixed => DelayProfile::Mixed { spoilers },
            };
            let spec = GenSpec { td_fraction, min_slope, max_slope, amplitude, period, ..GenSpec::new(n, topology, profile, seed) };
            let mut g = generate(&spec)?;
            if reduce_degree {
                g = reduce_out_degree(&g).0;
            }
            fs::write(&output, g.to_text()).with_context(|| format!("writing {}", output.display()))?;
            let s = g.stats();
            eprintln!("n {} m {} K {} K* {} Kmax {} max-out-degree {}", s.n, s.m, s.breakpoints, s.spoilers, s.max_arc_breakpoints, s.max_out_degree);
        }
        Command::Estimate { instance, samples, seed, epsilon, window, certify: exact } => {
            let g = load_instance(&instance)?;
            let p = if exact {
                certify(&g)?.params(epsilon)
            } else {
                let w = match window.as_deref() {
                    Some([a, b]) => TimeWindow { start: *a, end: *b },
                    _ => TimeWindow::whole(g.period()),
                };
                estimate_metric_params(&g, samples, seed, w, epsilon)?
            };
            print!("{}", describe(&p));
        }
        Command::Preprocess { instance, epsilon, rho, budget, seed, lambda_max, max_depth, keep_lower, upper, output } => {
            let g = load_instance(&instance)?;
            let mut cfg = OracleConfig::new(epsilon, rho);
            cfg.budget = budget;
            cfg.seed = seed;
            cfg.lambda_max = lambda_max;
            cfg.max_depth = max_depth;
            cfg.keep_lower = keep_lower;
            cfg.threads = threads;
            cfg.upper = match upper {
                UpperArg::Apex => UpperMode::Apex,
                UpperArg::Lifted => UpperMode::Lifted,
            };
            let o = build_oracle(&g, &cfg)?;
            o.save(&output)?;
            let s = &o.stats;
            eprintln!(
                "landmarks {}{} probes {} upper-points {} space {} B concavity-flags {} unresolved {} time {:.3}s",
                s.landmarks,
                if s.promoted { " (promoted)" } else { "" },
                s.total_probes,
                s.total_upper_points,
                s.space_bytes,
                s.concavity_flags,
                s.unresolved,
                s.wall_time.as_secs_f64()
            );
        }
        Command::Query { instance, summaries, queries, budget, paths } => {
            let g = load_instance(&instance)?;
            let o = OracleSummaries::load(&summaries)?;
            let text = fs::read_to_string(&queries).with_context(|| format!("reading {}", queries.display()))?;
            let qs = parse_queries(&text)?;
            let mut e = QueryEngine::new(&g, &o);
            for q in qs {
                let a = e.rqa(q.origin, q.destination, q.departure, budget)?;
                let path = if paths && a.value.is_finite() { Some(e.reconstruct(&a)?.arcs) } else { None };
                println!("{}", AnswerRecord::from_answer(&a, path).to_line());
            }
        }
        Command::Validate { instance, summaries, queries, budget, vertices, times, seed, certify: exact } => {
            let g = load_instance(&instance)?;
            let o = OracleSummaries::load(&summaries)?;
            let params = if exact {
                certify(&g)?.params(o.epsilon)
            } else {
                estimate_metric_params(&g, 1000, seed, TimeWindow::whole(g.period()), o.epsilon)?
            };
            let qs = random_queries(&g, queries, seed);
            let mut report = ValidationReport::default();
            report.checks.push(validate_summaries(&g, &o, VertexSample::Random(vertices), times, seed));
            report.checks.push(validate_fca(&g, &o, &params, &qs));
            report.checks.extend(validate_rqa(&g, &o, &params, &qs, budget));
            print!("{}", report.to_text());
            let b = StretchBudget::from_budget(o.epsilon, params.psi(), budget)?;
            println!("psi {} sigma(r={}) {}", params.psi(), b.r, b.sigma);
            return Ok(report.passed());
        }
        Command::Bench { instance, rho, ladder, epsilon, budget, queries, seed, format, csv } => {
            let g = load_instance(&instance)?;
            let mut rhos = rho;
            rhos.extend(ladder_rhos(g.n(), &ladder));
            if rhos.is_empty() {
                bail!("give --rho or --ladder");
            }
            let cfg = BenchConfig { rhos, epsilons: epsilon, budgets: budget, queries, seed, params: None, threads };
            let report = bench(&g, &cfg)?;
            if let Some(path) = csv {
                fs::write(&path, report.to_csv()).with_context(|| format!("writing {}", path.display()))?;
            }
            match format {
                Format::Table => print!("{}", report.to_table()),
                Format::Csv => print!("{}", report.to_csv()),
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
