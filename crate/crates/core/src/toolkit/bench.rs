//! Parameter sweeps over (ρ, ε, r) with measured preprocessing and query costs.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::TddWorkspace;
use crate::network::{MetricParams, TdInstance};
use crate::query::{sigma_for_budget, Query, QueryEngine};
use crate::summaries::{build_oracle, LandmarkSet, OracleConfig, SummaryError};

pub const CSV_HEADER: &str = "# tdoracle-bench v1";

/// `ρ = n^{−a}` for each exponent `a`.
pub fn ladder_rhos(n: usize, exponents: &[f64]) -> Vec<f64> {
    exponents.iter().map(|a| (n as f64).powf(-a)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub rhos: Vec<f64>,
    pub epsilons: Vec<f64>,
    pub budgets: Vec<usize>,
    pub queries: usize,
    pub seed: u64,
    /// Constants for the stretch-ceiling column; omitted when absent.
    pub params: Option<MetricParams>,
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub rho: f64,
    /// `a` with `ρ = n^{−a}`.
    pub exponent: f64,
    pub epsilon: f64,
    pub budget: usize,
    pub landmarks: usize,
    pub preprocess_secs: f64,
    pub space_bytes: usize,
    pub upper_points: usize,
    pub max_probes: usize,
    pub mean_query_us: f64,
    pub p95_query_us: f64,
    pub mean_stretch: f64,
    pub max_stretch: f64,
    /// `1 + σ(r)` when constants are known.
    pub stretch_ceiling: Option<f64>,
    pub mean_ball: f64,
    pub mean_balls_grown: f64,
    /// `n^{2−a}`, the space shape.
    pub space_shape: f64,
    /// `n^{(r+1)a}`, the query-time shape.
    pub query_shape: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BenchReport {
    pub n: usize,
    pub rows: Vec<BenchRow>,
}

const COLUMNS: &[&str] = &[
    "rho",
    "a",
    "epsilon",
    "r",
    "landmarks",
    "preprocess_s",
    "space_bytes",
    "upper_points",
    "max_probes",
    "query_mean_us",
    "query_p95_us",
    "stretch_mean",
    "stretch_max",
    "stretch_ceiling",
    "ball_mean",
    "balls_grown_mean",
    "space_shape_n^(2-a)",
    "query_shape_n^((r+1)a)",
];

impl BenchRow {
    fn cells(&self) -> Vec<String> {
        vec![
            format!("{:.6}", self.rho),
            format!("{:.4}", self.exponent),
            self.epsilon.to_string(),
            self.budget.to_string(),
            self.landmarks.to_string(),
            format!("{:.3}", self.preprocess_secs),
            self.space_bytes.to_string(),
            self.upper_points.to_string(),
            self.max_probes.to_string(),
            format!("{:.2}", self.mean_query_us),
            format!("{:.2}", self.p95_query_us),
            format!("{:.6}", self.mean_stretch),
            format!("{:.6}", self.max_stretch),
            self.stretch_ceiling.map_or("-".into(), |c| format!("{c:.6}")),
            format!("{:.2}", self.mean_ball),
            format!("{:.2}", self.mean_balls_grown),
            format!("{:.1}", self.space_shape),
            format!("{:.1}", self.query_shape),
        ]
    }
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER} n={}\n{}\n", self.n, COLUMNS.join(","));
        for r in &self.rows {
            let _ = writeln!(out, "{}", r.cells().join(","));
        }
        out
    }

    pub fn to_table(&self) -> String {
        let rows: Vec<Vec<String>> = self.rows.iter().map(BenchRow::cells).collect();
        let widths: Vec<usize> = (0..COLUMNS.len())
            .map(|c| rows.iter().map(|r| r[c].len()).chain([COLUMNS[c].len()]).max().unwrap_or(0))
            .collect();
        let line = |cells: Vec<&str>| cells.iter().zip(&widths).map(|(s, w)| format!("{s:>w$}")).collect::<Vec<_>>().join("  ");
        let mut out = line(COLUMNS.to_vec());
        out.push('\n');
        for r in &rows {
            out.push_str(&line(r.iter().map(String::as_str).collect()));
            out.push('\n');
        }
        out
    }
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let i = ((sorted.len() - 1) as f64 * p).round() as usize;
    sorted[i]
}

fn random_queries(n: usize, period: f64, count: usize, seed: u64) -> Vec<Query> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| Query {
            origin: rng.gen_range(0..n as u32),
            destination: rng.gen_range(0..n as u32),
            departure: rng.gen_range(0.0..period),
        })
        .collect()
}

/// Runs the sweep. Queries are timed one by one on the calling thread so the
/// per-query times are comparable across rows.
pub fn bench(g: &TdInstance, config: &BenchConfig) -> Result<BenchReport, SummaryError> {
    let n = g.n();
    let queries = random_queries(n, g.period(), config.queries, config.seed);
    let mut ws = TddWorkspace::new(n);
    let exact: Vec<f64> = queries
        .iter()
        .map(|q| ws.one_to_all(g, q.origin, q.departure).travel_time(q.destination))
        .collect();
    let mut report = BenchReport { n, rows: Vec::new() };
    for &rho in &config.rhos {
        for &eps in &config.epsilons {
            let mut cfg = OracleConfig::new(eps, rho);
            cfg.seed = config.seed;
            cfg.threads = config.threads;
            let start = Instant::now();
            let oracle = build_oracle(g, &cfg)?;
            let preprocess_secs = start.elapsed().as_secs_f64();
            let exponent = if n > 1 { -rho.ln() / (n as f64).ln() } else { 0.0 };
            for &r in &config.budgets {
                let mut engine = QueryEngine::new(g, &oracle);
                let mut times = Vec::with_capacity(queries.len());
                let mut stretch_sum = 0.0;
                let mut stretch_n = 0usize;
                let mut max_stretch: f64 = 1.0;
                let mut ball_sum = 0usize;
                let mut grown_sum = 0usize;
                for (q, &ex) in queries.iter().zip(&exact) {
                    let t0 = Instant::now();
                    let a = engine.rqa(q.origin, q.destination, q.departure, r).expect("queries are in range");
                    times.push(t0.elapsed().as_secs_f64() * 1e6);
                    ball_sum += a.chain[0].ball_size;
                    grown_sum += a.balls_grown;
                    if ex > 0.0 && ex.is_finite() {
                        let s = a.value / ex;
                        stretch_sum += s;
                        stretch_n += 1;
                        max_stretch = max_stretch.max(s);
                    }
                }
                let mean_query_us = times.iter().sum::<f64>() / times.len().max(1) as f64;
                times.sort_by(f64::total_cmp);
                let count = queries.len().max(1) as f64;
                report.rows.push(BenchRow {
                    rho,
                    exponent,
                    epsilon: eps,
                    budget: r,
                    landmarks: oracle.landmarks.len(),
                    preprocess_secs,
                    space_bytes: oracle.stats.space_bytes,
                    upper_points: oracle.stats.total_upper_points,
                    max_probes: oracle.shards.iter().map(|s| s.stats.probes).max().unwrap_or(0),
                    mean_query_us,
                    p95_query_us: percentile(&times, 0.95),
                    mean_stretch: if stretch_n > 0 { stretch_sum / stretch_n as f64 } else { 1.0 },
                    max_stretch,
                    stretch_ceiling: config.params.map(|p| 1.0 + sigma_for_budget(eps, p.with_epsilon(eps).psi(), r)),
                    mean_ball: ball_sum as f64 / count,
                    mean_balls_grown: grown_sum as f64 / count,
                    space_shape: (n as f64).powf(2.0 - exponent),
                    query_shape: (n as f64).powf((r as f64 + 1.0) * exponent),
                });
            }
        }
    }
    Ok(report)
}

/// Sizes of landmark-closed balls from uniform random centers and departures.
pub fn ball_sizes(g: &TdInstance, landmarks: &LandmarkSet, count: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ws = TddWorkspace::new(g.n());
    (0..count)
        .map(|_| {
            let o = rng.gen_range(0..g.n() as u32);
            let t = rng.gen_range(0.0..g.period());
            ws.grow_ball(g, &landmarks.is_landmark, o, t, None).len()
        })
        .collect()
}

/// Total-variation distance between the empirical size distribution and the
/// geometric law `P(k) = (1−ρ)^{k−1} ρ`, `k >= 1`.
pub fn geometric_tv_distance(sizes: &[usize], rho: f64) -> f64 {
    if sizes.is_empty() {
        return 0.0;
    }
    let max = sizes.iter().copied().max().unwrap_or(0);
    let mut counts = vec![0usize; max + 1];
    for &s in sizes {
        counts[s] += 1;
    }
    let total = sizes.len() as f64;
    let mut tv = 0.0;
    let mut mass = 0.0;
    for (k, &c) in counts.iter().enumerate().skip(1) {
        let p = (1.0 - rho).powi(k as i32 - 1) * rho;
        mass += p;
        tv += (c as f64 / total - p).abs();
    }
    // empirical mass at size 0 never occurs; geometric tail beyond max
    tv += counts[0] as f64 / total + (1.0 - mass).max(0.0);
    0.5 * tv
}
