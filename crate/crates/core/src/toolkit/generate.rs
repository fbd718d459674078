//! Synthetic FIFO instances with controlled shape.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::network::{ArcRecord, NetworkError, TdInstance};
use crate::pwl::{Breakpoint, FunctionKind, PwlError, PwlFunction};

/// Slack kept above the FIFO limit of −1.
pub const FIFO_MARGIN: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum GenError {
    #[error("slope range [{min}, {max}] invalid: need -1 + 1e-6 <= min < 0 < max")]
    InvalidSlopes { min: f64, max: f64 },
    #[error("need at least 2 vertices, got {0}")]
    TooSmall(usize),
    #[error("time-dependent fraction must lie in [0, 1], got {0}")]
    InvalidFraction(f64),
    #[error("invalid weights [{0}, {1}]")]
    InvalidWeights(f64, f64),
    #[error("arcs per vertex must be at least 2, got {0}")]
    InvalidDensity(f64),
    #[error("{0} spoilers requested but no time-dependent arc is available")]
    NoSpoilerCarrier(usize),
    #[error("invalid period {0}")]
    InvalidPeriod(f64),
    #[error(transparent)]
    Pwl(#[from] PwlError),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Topology {
    /// Row-major grid with bidirectional neighbour arcs.
    Grid,
    /// A bidirectional random ring plus uniform random arcs up to `c·n` arcs.
    RandomSparse { arcs_per_vertex: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DelayProfile {
    Constant,
    /// One concave hump per time-dependent arc.
    ConcaveBell,
    /// Humps with exactly `spoilers` interior slope increases instance-wide.
    Mixed { spoilers: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenSpec {
    pub n: usize,
    pub topology: Topology,
    pub profile: DelayProfile,
    /// Share of arcs carrying a time-dependent profile.
    pub td_fraction: f64,
    pub min_slope: f64,
    pub max_slope: f64,
    /// Peak-to-base ratio cap of a hump.
    pub amplitude: f64,
    pub min_weight: f64,
    pub max_weight: f64,
    pub period: f64,
    pub seed: u64,
}

impl GenSpec {
    pub fn new(n: usize, topology: Topology, profile: DelayProfile, seed: u64) -> Self {
        Self {
            n,
            topology,
            profile,
            td_fraction: 0.3,
            min_slope: -0.5,
            max_slope: 0.5,
            amplitude: 1.0,
            min_weight: 5.0,
            max_weight: 30.0,
            period: 1440.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), GenError> {
        if self.n < 2 {
            return Err(GenError::TooSmall(self.n));
        }
        if !(self.min_slope >= -1.0 + FIFO_MARGIN && self.min_slope < 0.0 && self.max_slope > 0.0 && self.max_slope.is_finite()) {
            return Err(GenError::InvalidSlopes { min: self.min_slope, max: self.max_slope });
        }
        if !(0.0..=1.0).contains(&self.td_fraction) {
            return Err(GenError::InvalidFraction(self.td_fraction));
        }
        if !(self.min_weight > 0.0 && self.max_weight >= self.min_weight && self.max_weight.is_finite()) {
            return Err(GenError::InvalidWeights(self.min_weight, self.max_weight));
        }
        if !(self.period.is_finite() && self.period > 0.0) {
            return Err(GenError::InvalidPeriod(self.period));
        }
        if let Topology::RandomSparse { arcs_per_vertex } = self.topology {
            if !(arcs_per_vertex >= 2.0) {
                return Err(GenError::InvalidDensity(arcs_per_vertex));
            }
        }
        Ok(())
    }
}

fn grid(n: usize) -> Vec<(u32, u32)> {
    let w = (n as f64).sqrt().ceil() as usize;
    let mut pairs = Vec::new();
    for v in 0..n {
        if (v + 1) % w != 0 && v + 1 < n {
            pairs.push((v as u32, v as u32 + 1));
            pairs.push((v as u32 + 1, v as u32));
        }
        if v + w < n {
            pairs.push((v as u32, (v + w) as u32));
            pairs.push(((v + w) as u32, v as u32));
        }
    }
    pairs
}

fn random_sparse(n: usize, c: f64, rng: &mut ChaCha8Rng) -> Vec<(u32, u32)> {
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.shuffle(rng);
    let mut seen = HashSet::new();
    let mut pairs = Vec::new();
    for i in 0..n {
        let (a, b) = (order[i], order[(i + 1) % n]);
        for p in [(a, b), (b, a)] {
            if a != b && seen.insert(p) {
                pairs.push(p);
            }
        }
    }
    let target = ((c * n as f64).round() as usize).min(n * (n - 1));
    while pairs.len() < target {
        let (a, b) = (rng.gen_range(0..n as u32), rng.gen_range(0..n as u32));
        if a != b && seen.insert((a, b)) {
            pairs.push((a, b));
        }
    }
    pairs
}

/// A periodic profile of `humps` up-down humps over a base weight. Up legs
/// and down legs alternate, so each hump after the first adds one interior
/// slope increase.
fn humps(spec: &GenSpec, base: f64, humps: usize, rng: &mut ChaCha8Rng) -> Result<PwlFunction, GenError> {
    let legs = 2 * humps;
    let period = spec.period;
    // cut times with a minimum separation of a tenth of the average leg
    let mut lengths: Vec<f64> = (0..legs).map(|_| rng.gen_range(0.1..1.0)).collect();
    let total: f64 = lengths.iter().sum();
    lengths.iter_mut().for_each(|l| *l *= period / total);
    let mut slopes: Vec<f64> = (0..legs)
        .map(|i| if i % 2 == 0 { rng.gen_range(0.2..1.0) } else { -rng.gen_range(0.2..1.0) })
        .collect();
    let rise: f64 = (0..legs).step_by(2).map(|i| slopes[i] * lengths[i]).sum();
    let fall: f64 = (1..legs).step_by(2).map(|i| -slopes[i] * lengths[i]).sum();
    for i in (0..legs).step_by(2) {
        slopes[i] *= fall / rise;
    }
    let up = slopes.iter().copied().fold(0.0, f64::max);
    let down = slopes.iter().copied().fold(0.0, f64::min);
    let mut scale = (spec.max_slope / up).min(spec.min_slope / down) * rng.gen_range(0.5..1.0);
    // cumulative profile, then cap the peak-to-trough height
    let mut values = Vec::with_capacity(legs);
    let mut acc = 0.0;
    for i in 0..legs {
        values.push(acc);
        acc += slopes[i] * lengths[i];
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if (hi - lo) * scale > spec.amplitude * base {
        scale = spec.amplitude * base / (hi - lo);
    }
    let mut t = 0.0;
    let mut points = Vec::with_capacity(legs);
    for i in 0..legs {
        points.push(Breakpoint::new(t, base + (values[i] - lo) * scale));
        t += lengths[i];
    }
    Ok(PwlFunction::new(period, points, FunctionKind::Delay)?)
}

/// Deterministic instance for `spec`; strictly FIFO with the requested
/// number of interior spoilers.
pub fn generate(spec: &GenSpec) -> Result<TdInstance, GenError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pairs = match spec.topology {
        Topology::Grid => grid(spec.n),
        Topology::RandomSparse { arcs_per_vertex } => random_sparse(spec.n, arcs_per_vertex, &mut rng),
    };
    let m = pairs.len();
    let weights: Vec<f64> = (0..m).map(|_| rng.gen_range(spec.min_weight..=spec.max_weight)).collect();
    let mut hump_count = vec![0usize; m];
    if spec.profile != DelayProfile::Constant {
        let mut ids: Vec<usize> = (0..m).collect();
        ids.shuffle(&mut rng);
        let mut k = (spec.td_fraction * m as f64).round() as usize;
        let spoilers = match spec.profile {
            DelayProfile::Mixed { spoilers } => spoilers,
            _ => 0,
        };
        if spoilers > 0 {
            if m == 0 {
                return Err(GenError::NoSpoilerCarrier(spoilers));
            }
            k = k.max(1);
        }
        let td = &ids[..k];
        for &a in td {
            hump_count[a] = 1;
        }
        // spread spoilers over the first carriers, one extra hump each
        let carriers = spoilers.min(k);
        for s in 0..spoilers {
            hump_count[td[s % carriers.max(1)]] += 1;
        }
    }
    let mut arcs = Vec::with_capacity(m);
    for (a, &(u, v)) in pairs.iter().enumerate() {
        let delay = if hump_count[a] == 0 {
            PwlFunction::from_pairs(spec.period, &[(0.0, weights[a]), (spec.period / 2.0, weights[a])], FunctionKind::Delay)?
        } else {
            humps(spec, weights[a], hump_count[a], &mut rng)?
        };
        arcs.push(ArcRecord::new(u, v, delay));
    }
    Ok(TdInstance::new(spec.n, spec.period, arcs)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pwl::split_concavity;

    #[test]
    fn constant_profile_counts() {
        let g = generate(&GenSpec::new(50, Topology::Grid, DelayProfile::Constant, 1)).unwrap();
        let s = g.stats();
        assert_eq!(s.breakpoints, 2 * g.m());
        assert_eq!(s.spoilers, 0);
        assert!(g.is_time_independent());
    }

    #[test]
    fn bell_profile_is_concave_inside_the_period() {
        let g = generate(&GenSpec::new(200, Topology::RandomSparse { arcs_per_vertex: 3.0 }, DelayProfile::ConcaveBell, 2)).unwrap();
        assert!((0..g.m() as u32).all(|a| split_concavity(g.delay(a)).is_empty()));
        assert!(!g.is_time_independent());
    }

    #[test]
    fn mixed_profile_has_requested_spoilers() {
        for k in [0, 1, 5, 20, 77] {
            let mut spec = GenSpec::new(100, Topology::Grid, DelayProfile::Mixed { spoilers: k }, 3);
            spec.td_fraction = 0.05;
            let g = generate(&spec).unwrap();
            let count: usize = (0..g.m() as u32).map(|a| split_concavity(g.delay(a)).len()).sum();
            assert_eq!(count, k);
        }
    }

    #[test]
    fn generated_arcs_are_strictly_fifo() {
        let mut spec = GenSpec::new(300, Topology::RandomSparse { arcs_per_vertex: 2.5 }, DelayProfile::Mixed { spoilers: 10 }, 4);
        spec.min_slope = -0.9;
        spec.max_slope = 2.0;
        spec.amplitude = 5.0;
        spec.td_fraction = 1.0;
        let g = generate(&spec).unwrap();
        for a in 0..g.m() as u32 {
            assert!(g.delay(a).min_slope() >= -1.0 + FIFO_MARGIN);
            assert!(g.delay(a).min_value() >= spec.min_weight - 1e-9);
        }
        assert!(g.is_strict_fifo());
    }

    #[test]
    fn deterministic_and_round_trips() {
        let spec = GenSpec::new(64, Topology::Grid, DelayProfile::Mixed { spoilers: 3 }, 9);
        let a = generate(&spec).unwrap().to_text();
        assert_eq!(a, generate(&spec).unwrap().to_text());
        assert_eq!(TdInstance::from_text(&a).unwrap().to_text(), a);
    }

    #[test]
    fn rejects_bad_specs() {
        let mut spec = GenSpec::new(10, Topology::Grid, DelayProfile::Constant, 0);
        spec.min_slope = -1.0;
        assert!(matches!(generate(&spec), Err(GenError::InvalidSlopes { .. })));
        assert!(matches!(generate(&GenSpec::new(1, Topology::Grid, DelayProfile::Constant, 0)), Err(GenError::TooSmall(1))));
    }
}
