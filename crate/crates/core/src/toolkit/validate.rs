//! Executable checks of the summary and query guarantees against exact searches.

use std::fmt;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::engine::TddWorkspace;
use crate::network::{MetricParams, TdInstance};
use crate::query::{sigma_for_budget, Query, QueryEngine};
use crate::summaries::OracleSummaries;

/// Absolute slack on every upper-side comparison.
pub const SLACK: f64 = 1e-9;

/// A concrete counterexample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Witness {
    pub from: u32,
    pub to: u32,
    pub t: f64,
    pub exact: f64,
    pub got: f64,
}

impl fmt::Display for Witness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}): exact {} got {}", self.from, self.to, self.t, self.exact, self.got)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub checked: usize,
    pub violations: usize,
    /// Largest observed value over exact, among finite positive exact values.
    pub worst_ratio: f64,
    /// Ceiling the check enforces on that ratio, where one applies.
    pub ceiling: Option<f64>,
    pub witness: Option<Witness>,
}

impl CheckResult {
    fn new(name: impl Into<String>, ceiling: Option<f64>) -> Self {
        Self { name: name.into(), checked: 0, violations: 0, worst_ratio: 1.0, ceiling, witness: None }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    fn record(&mut self, ok: bool, w: Witness) {
        self.checked += 1;
        if w.exact > 0.0 && w.exact.is_finite() {
            self.worst_ratio = self.worst_ratio.max(w.got / w.exact);
        }
        if !ok {
            self.violations += 1;
            if self.witness.is_none() {
                self.witness = Some(w);
            }
        }
    }

    fn merge(mut self, other: CheckResult) -> Self {
        self.checked += other.checked;
        self.violations += other.violations;
        self.worst_ratio = self.worst_ratio.max(other.worst_ratio);
        self.witness = self.witness.or(other.witness);
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let status = if c.passed() { "PASS" } else { "FAIL" };
            let ceiling = c.ceiling.map_or(String::new(), |x| format!(" ceiling {x:.6}"));
            out.push_str(&format!("{status} {} checked {} violations {} worst {:.6}{ceiling}", c.name, c.checked, c.violations, c.worst_ratio));
            if let Some(w) = c.witness {
                out.push_str(&format!(" witness {w}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Which vertices the summary check covers per landmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VertexSample {
    All,
    Random(usize),
}

/// Sandwich check `exact <= Δ <= (1+ε)·exact + slack` at random departures and
/// at every stored breakpoint time of the covered vertices.
pub fn validate_summaries(g: &TdInstance, oracle: &OracleSummaries, vertices: VertexSample, times: usize, seed: u64) -> CheckResult {
    let eps = oracle.epsilon;
    oracle
        .shards
        .par_iter()
        .enumerate()
        .map(|(i, shard)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let n = g.n();
            let vs: Vec<u32> = match vertices {
                VertexSample::All => (0..n as u32).collect(),
                VertexSample::Random(k) => sample(&mut rng, n, k.min(n)).into_iter().map(|v| v as u32).collect(),
            };
            let mut ts: Vec<f64> = (0..times).map(|_| rng.gen_range(0.0..g.period())).collect();
            for &v in &vs {
                ts.extend(shard.upper_function(v).iter().map(|p| p.t));
            }
            ts.sort_by(f64::total_cmp);
            ts.dedup();
            let mut ws = TddWorkspace::new(n);
            let mut res = CheckResult::new("summary-sandwich", Some(1.0 + eps));
            for t in ts {
                let tree = ws.one_to_all(g, shard.landmark, t);
                for &v in &vs {
                    let exact = tree.travel_time(v);
                    let got = shard.lookup(v, t).value;
                    let ok = if exact.is_finite() { exact <= got + SLACK && got <= (1.0 + eps) * exact + SLACK } else { got.is_infinite() };
                    res.record(ok, Witness { from: shard.landmark, to: v, t, exact, got });
                }
            }
            res
        })
        .reduce(|| CheckResult::new("summary-sandwich", Some(1.0 + eps)), CheckResult::merge)
}

/// Uniform random queries with distinct endpoints.
pub fn random_queries(g: &TdInstance, count: usize, seed: u64) -> Vec<Query> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = g.n() as u32;
    (0..count)
        .map(|_| {
            let origin = rng.gen_range(0..n);
            let mut destination = rng.gen_range(0..n);
            while n > 1 && destination == origin {
                destination = rng.gen_range(0..n);
            }
            Query { origin, destination, departure: rng.gen_range(0.0..g.period()) }
        })
        .collect()
}

/// One-ball stretch: `exact <= answer <= (1+ε)·exact + ψ·R_o`.
pub fn validate_fca(g: &TdInstance, oracle: &OracleSummaries, params: &MetricParams, queries: &[Query]) -> CheckResult {
    let eps = oracle.epsilon;
    let psi = params.with_epsilon(eps).psi();
    let name = if params.is_certified() { "fca-stretch (certified)" } else { "fca-stretch (estimated)" };
    queries
        .par_iter()
        .map_init(
            || (QueryEngine::new(g, oracle), TddWorkspace::new(g.n())),
            |(e, ws), q| {
                let mut res = CheckResult::new(name, Some(1.0 + eps + psi));
                let exact = ws.one_to_all(g, q.origin, q.departure).travel_time(q.destination);
                let a = e.fca(q.origin, q.destination, q.departure).expect("queries are in range");
                let ok = if exact.is_finite() {
                    exact <= a.value + SLACK && a.value <= (1.0 + eps) * exact + psi * a.origin_radius + SLACK
                } else {
                    a.value.is_infinite()
                };
                res.record(ok, Witness { from: q.origin, to: q.destination, t: q.departure, exact, got: a.value });
                res
            },
        )
        .reduce(|| CheckResult::new(name, Some(1.0 + eps + psi)), CheckResult::merge)
}

/// Recursive stretch for budgets `0..=max_budget`: `answer(r) <= (1+σ(r))·exact`
/// and `answer(r+1) <= answer(r)`.
pub fn validate_rqa(g: &TdInstance, oracle: &OracleSummaries, params: &MetricParams, queries: &[Query], max_budget: usize) -> Vec<CheckResult> {
    let eps = oracle.epsilon;
    let psi = params.with_epsilon(eps).psi();
    let fresh = || {
        let mut v: Vec<CheckResult> = (0..=max_budget)
            .map(|r| CheckResult::new(format!("rqa-stretch r={r}"), Some(1.0 + sigma_for_budget(eps, psi, r))))
            .collect();
        v.push(CheckResult::new("rqa-monotone", None));
        v
    };
    queries
        .par_iter()
        .map_init(
            || (QueryEngine::new(g, oracle), TddWorkspace::new(g.n())),
            |(e, ws), q| {
                let mut res = fresh();
                let exact = ws.one_to_all(g, q.origin, q.departure).travel_time(q.destination);
                let mut prev = f64::INFINITY;
                for r in 0..=max_budget {
                    let a = e.rqa(q.origin, q.destination, q.departure, r).expect("queries are in range");
                    let ceiling = (1.0 + sigma_for_budget(eps, psi, r)) * exact + SLACK;
                    let ok = if exact.is_finite() { exact <= a.value + SLACK && a.value <= ceiling } else { a.value.is_infinite() };
                    let w = Witness { from: q.origin, to: q.destination, t: q.departure, exact, got: a.value };
                    res[r].record(ok, w);
                    res[max_budget + 1].record(a.value <= prev, w);
                    prev = a.value;
                }
                res
            },
        )
        .reduce(fresh, |a, b| a.into_iter().zip(b).map(|(x, y)| x.merge(y)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::summaries::{build_oracle, OracleConfig};
    use crate::toolkit::certify::certify;
    use crate::toolkit::generate::{generate, DelayProfile, GenSpec, Topology};

    fn small() -> TdInstance {
        let mut spec = GenSpec::new(36, Topology::Grid, DelayProfile::Mixed { spoilers: 3 }, 11);
        spec.td_fraction = 0.4;
        generate(&spec).unwrap()
    }

    #[test]
    fn fresh_oracle_passes() {
        let g = small();
        let o = build_oracle(&g, &OracleConfig::new(0.1, 0.2)).unwrap();
        let s = validate_summaries(&g, &o, VertexSample::All, 16, 1);
        assert!(s.passed(), "{s:?}");
        let params = certify(&g).unwrap().params(0.1);
        let qs = random_queries(&g, 200, 3);
        assert!(validate_fca(&g, &o, &params, &qs).passed());
        let r = validate_rqa(&g, &o, &params, &qs, 2);
        assert!(r.iter().all(CheckResult::passed), "{r:?}");
        let report = ValidationReport { checks: r };
        assert!(report.to_text().lines().all(|l| l.starts_with("PASS")));
    }

    #[test]
    fn corrupted_value_is_caught_with_witness() {
        let g = small();
        let mut o = build_oracle(&g, &OracleConfig::new(0.1, 0.2)).unwrap();
        let l = o.landmarks.ids[0];
        let v = (0..g.n() as u32).find(|&v| v != l).unwrap();
        let t = o.shard_mut(l).unwrap().scale_upper_value(v, 0, 2.0).unwrap();
        let s = validate_summaries(&g, &o, VertexSample::All, 0, 1);
        assert!(!s.passed());
        let w = s.witness.unwrap();
        assert_eq!((w.from, w.to, w.t), (l, v, t));
        assert!(w.got > 1.1 * w.exact);
    }
}
