//! Landmark preprocessing.
//!
//! For every landmark the departure-time axis is cut at the images of all
//! concavity-spoiling breakpoints, and each piece is bisected. One forward
//! search per bisection point samples the travel time, both one-sided slopes
//! and the tree parent of every vertex; each vertex keeps only the samples it
//! needs to meet its error target. The stored function per (landmark, vertex)
//! is an upper approximation within a factor `1 + ε` of the exact travel time.

use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::engine::TddWorkspace;
use crate::network::{estimate_metric_params, reverse_delays, NetworkError, ReverseNetwork, Spoiler, TdInstance, TimeWindow, NO_ARC};
use crate::pwl::{mae_estimate, MaeEstimate, TOLERANCE};

pub const NO_PARENT: u32 = u32::MAX;

const SHARD_HEADER: &str = "tdsummary v1";
const MANIFEST_HEADER: &str = "tdoracle-summaries v1";
const MANIFEST_FILE: &str = "manifest.txt";

/// Pairs whose worst-case gap is below this are treated as affine.
const AFFINE_GAP: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum SummaryError {
    #[error("epsilon must be positive and finite, got {0}")]
    InvalidEpsilon(f64),
    #[error("landmark probability must lie in (0, 1], got {0}")]
    InvalidRho(f64),
    #[error("maximum depth must be at least 1")]
    InvalidDepth,
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("vertex {0} out of range")]
    VertexOutOfRange(u32),
    #[error("vertex {0} is not a landmark")]
    NotALandmark(u32),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed summary file {path}, line {line}: {msg}")]
    Format { path: String, line: usize, msg: String },
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

/// How the upper approximation is formed from consecutive lower samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpperMode {
    /// Insert the intersection of the two tangent lines between each pair.
    Apex,
    /// Raise every lower sample by the larger worst-case gap of its two
    /// legs; no extra breakpoints. Samples whose removal keeps a longer chord
    /// within the error target are dropped first.
    Lifted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleConfig {
    pub epsilon: f64,
    pub rho: f64,
    /// Default recursion budget for queries.
    pub budget: usize,
    pub seed: u64,
    /// Hard cap on the bisection depth.
    pub max_depth: u32,
    /// Slope bound used for the depth bound; estimated when absent.
    pub lambda_max: Option<f64>,
    /// Samples drawn when estimating the slope bound.
    pub estimate_samples: usize,
    /// Keep the lower approximation alongside the upper one.
    pub keep_lower: bool,
    pub upper: UpperMode,
    /// Worker threads for the build; the global pool when absent.
    pub threads: Option<usize>,
}

impl OracleConfig {
    pub fn new(epsilon: f64, rho: f64) -> Self {
        Self {
            epsilon,
            rho,
            budget: 0,
            seed: 0,
            max_depth: 40,
            lambda_max: None,
            estimate_samples: 64,
            keep_lower: false,
            upper: UpperMode::Lifted,
            threads: None,
        }
    }

    pub fn validate(&self) -> Result<(), SummaryError> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(SummaryError::InvalidEpsilon(self.epsilon));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(SummaryError::InvalidRho(self.rho));
        }
        if self.max_depth == 0 {
            return Err(SummaryError::InvalidDepth);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LandmarkSet {
    /// Landmark ids in increasing order.
    pub ids: Vec<u32>,
    pub is_landmark: Vec<bool>,
    /// Set when sampling produced no landmark and one vertex was promoted.
    pub promoted: bool,
}

impl LandmarkSet {
    pub fn from_ids(n: usize, mut ids: Vec<u32>) -> Self {
        ids.sort_unstable();
        ids.dedup();
        let mut is_landmark = vec![false; n];
        for &l in &ids {
            is_landmark[l as usize] = true;
        }
        Self { ids, is_landmark, promoted: false }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, v: u32) -> bool {
        self.is_landmark.get(v as usize).copied().unwrap_or(false)
    }
}

/// Independent Bernoulli(ρ) choice per vertex. If nothing is chosen, one
/// uniformly random vertex is promoted.
pub fn select_landmarks(n: usize, rho: f64, seed: u64) -> LandmarkSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<u32> = (0..n as u32).filter(|_| rng.gen::<f64>() < rho).collect();
    let mut set = LandmarkSet::from_ids(n, ids);
    if set.is_empty() && n > 0 {
        let v = rng.gen_range(0..n) as u32;
        set = LandmarkSet::from_ids(n, vec![v]);
        set.promoted = true;
    }
    set
}

/// One projected spoiler: departing `landmark` at `departure` reaches the tail
/// of the spoiler arc exactly at `arrival` along a latest-departure path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageRecord {
    pub spoiler: Spoiler,
    pub landmark: u32,
    pub tail: u32,
    pub arrival: f64,
    pub departure: f64,
    /// `departure` reduced into `[0, T)`.
    pub image: f64,
}

#[derive(Debug, Clone)]
pub struct SpoilerProjection {
    /// Sorted, deduplicated image times per landmark, parallel to the landmark ids.
    pub images: Vec<Vec<f64>>,
    pub records: Vec<ImageRecord>,
}

fn reduce_time(t: f64, period: f64) -> f64 {
    let r = t.rem_euclid(period);
    if r >= period {
        0.0
    } else {
        r
    }
}

/// Projects every concavity-spoiling breakpoint back to each landmark by a
/// latest-departure search from the spoiler's tail and time.
pub fn project_spoilers(g: &TdInstance, rev: &ReverseNetwork, landmarks: &LandmarkSet) -> SpoilerProjection {
    let period = g.period();
    let spoilers = g.spoilers();
    let per_spoiler: Vec<Vec<ImageRecord>> = spoilers
        .par_iter()
        .map_init(
            || TddWorkspace::new(g.n()),
            |ws, sp| {
                let tail = g.tail(sp.arc);
                let ld = ws.latest_departure(g, rev, tail, sp.t);
                landmarks
                    .ids
                    .iter()
                    .filter_map(|&l| {
                        let tau = ld.departure[l as usize];
                        tau.is_finite().then(|| ImageRecord {
                            spoiler: *sp,
                            landmark: l,
                            tail,
                            arrival: sp.t,
                            departure: tau,
                            image: reduce_time(tau, period),
                        })
                    })
                    .collect()
            },
        )
        .collect();
    let records: Vec<ImageRecord> = per_spoiler.into_iter().flatten().collect();
    let slot: std::collections::HashMap<u32, usize> = landmarks.ids.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let mut images = vec![Vec::new(); landmarks.len()];
    for r in &records {
        images[slot[&r.landmark]].push(r.image);
    }
    for list in &mut images {
        list.sort_by(f64::total_cmp);
        list.dedup_by(|b, a| (*b - *a).abs() <= TOLERANCE);
        // an image just below T coincides with one at 0
        if list.len() > 1 && list[0] + period - list[list.len() - 1] <= TOLERANCE {
            list.pop();
        }
    }
    SpoilerProjection { images, records }
}

/// Everything a bisection probe records per vertex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    /// Exact travel time from the landmark.
    pub d: f64,
    /// Right derivative of the travel time.
    pub right: f64,
    /// Left derivative of the travel time.
    pub left: f64,
    pub parent: u32,
}

struct Probe {
    d: Vec<f64>,
    right: Vec<f64>,
    left: Vec<f64>,
    parent: Vec<u32>,
}

impl Probe {
    fn take(ws: &mut TddWorkspace, g: &TdInstance, l: u32, t: f64) -> Self {
        let s = ws.one_to_all_sloped(g, l, t);
        let n = g.n();
        let mut parent = vec![NO_PARENT; n];
        for v in 0..n {
            let a = s.tree.parent_arc[v];
            if a != NO_ARC {
                parent[v] = g.tail(a);
            }
        }
        Self {
            d: s.tree.arrival.iter().map(|a| a - t).collect(),
            right: s.right.iter().map(|r| r - 1.0).collect(),
            left: s.left.iter().map(|r| r - 1.0).collect(),
            parent,
        }
    }

    fn sample(&self, v: usize, t: f64) -> Sample {
        Sample {
            t,
            d: self.d[v],
            right: self.right[v],
            left: self.left[v],
            parent: self.parent[v],
        }
    }
}

/// Per-landmark build statistics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LandmarkStats {
    pub landmark: u32,
    pub subintervals: usize,
    /// Probes at subinterval boundaries.
    pub boundary_probes: usize,
    /// All forward probes, boundaries included.
    pub probes: usize,
    pub k_max: u32,
    pub max_depth: u32,
    pub lambda_used: f64,
    /// Midpoint samples found outside the tangent triangle or with a convex kink.
    pub concavity_flags: usize,
    /// Vertex-intervals still above the error target when the depth bound stopped them.
    pub unresolved: usize,
    pub lower_points: usize,
    pub upper_points: usize,
    /// Largest lower-sample count of one vertex over the whole period.
    pub max_lower_per_vertex: usize,
    /// Samples dropped because a longer chord was already certified.
    pub merged_points: usize,
}

/// Sampled breakpoints of one landmark for every vertex, in a flat layout.
#[derive(Debug, Clone, PartialEq)]
pub struct PointTable {
    /// `first[v * s + j]` is the index of the first point of vertex `v` in
    /// subinterval `j`; one trailing sentinel.
    first: Vec<u32>,
    t: Vec<f64>,
    value: Vec<f64>,
    parent: Vec<u32>,
}

impl PointTable {
    fn with_capacity(cells: usize) -> Self {
        Self {
            first: Vec::with_capacity(cells + 1),
            t: Vec::new(),
            value: Vec::new(),
            parent: Vec::new(),
        }
    }

    fn push(&mut self, t: f64, value: f64, parent: u32) {
        self.t.push(t);
        self.value.push(value);
        self.parent.push(parent);
    }

    fn mark(&mut self) {
        self.first.push(self.t.len() as u32);
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSummary {
    pub landmark: u32,
    pub period: f64,
    pub epsilon: f64,
    n: usize,
    boundaries: Vec<f64>,
    upper: PointTable,
    lower: Option<PointTable>,
    pub stats: LandmarkStats,
}

/// Result of a summary lookup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lookup {
    pub value: f64,
    /// Tree parent recorded for the leg, `None` at the landmark or if unreachable.
    pub parent: Option<u32>,
    pub subinterval: usize,
    pub leg: usize,
}

/// Search effort of lookups, for checking the constant-probe contract.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LookupStats {
    pub subinterval_searches: usize,
    pub leg_searches: usize,
}

/// A stored breakpoint of one (landmark, vertex) function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoredPoint {
    pub t: f64,
    pub value: f64,
    pub parent: u32,
}

impl LandmarkSummary {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn subintervals(&self) -> usize {
        self.boundaries.len()
    }

    fn range(table: &PointTable, s: usize, v: usize, j: usize) -> std::ops::Range<usize> {
        table.first[v * s + j] as usize..table.first[v * s + j + 1] as usize
    }

    fn points_in(table: &PointTable, r: std::ops::Range<usize>) -> Vec<StoredPoint> {
        r.map(|i| StoredPoint { t: table.t[i], value: table.value[i], parent: table.parent[i] }).collect()
    }

    /// Upper breakpoints of `v` inside subinterval `j`, starting with the
    /// boundary sample.
    pub fn upper_points(&self, v: u32, j: usize) -> Vec<StoredPoint> {
        Self::points_in(&self.upper, Self::range(&self.upper, self.subintervals(), v as usize, j))
    }

    pub fn lower_points(&self, v: u32, j: usize) -> Option<Vec<StoredPoint>> {
        self.lower
            .as_ref()
            .map(|tab| Self::points_in(tab, Self::range(tab, self.subintervals(), v as usize, j)))
    }

    /// All upper breakpoints of `v` over one period.
    pub fn upper_function(&self, v: u32) -> Vec<StoredPoint> {
        let s = self.subintervals();
        let v = v as usize;
        Self::points_in(&self.upper, self.upper.first[v * s] as usize..self.upper.first[(v + 1) * s] as usize)
    }

    pub fn is_reachable(&self, v: u32) -> bool {
        let s = self.subintervals();
        let v = v as usize;
        self.upper.first[(v + 1) * s] > self.upper.first[v * s]
    }

    /// Breakpoint count of `v` in subinterval `j`, both boundary samples included.
    pub fn upper_count(&self, v: u32, j: usize) -> usize {
        let r = Self::range(&self.upper, self.subintervals(), v as usize, j);
        if r.is_empty() {
            0
        } else {
            r.len() + 1
        }
    }

    pub fn lower_count(&self, v: u32, j: usize) -> Option<usize> {
        self.lower.as_ref().map(|tab| {
            let r = Self::range(tab, self.subintervals(), v as usize, j);
            if r.is_empty() {
                0
            } else {
                r.len() + 1
            }
        })
    }

    /// Interval `[start, end)` of subinterval `j`, with `end` possibly beyond `T`.
    pub fn subinterval(&self, j: usize) -> (f64, f64) {
        let s = self.subintervals();
        let end = if j + 1 < s { self.boundaries[j + 1] } else { self.boundaries[0] + self.period };
        (self.boundaries[j], end)
    }

    fn evaluate_table(&self, table: &PointTable, v: u32, t: f64, stats: &mut LookupStats) -> Lookup {
        let s = self.subintervals();
        let vi = v as usize;
        let all = table.first[vi * s] as usize..table.first[(vi + 1) * s] as usize;
        if all.is_empty() {
            return Lookup { value: f64::INFINITY, parent: None, subinterval: 0, leg: 0 };
        }
        let mut r = reduce_time(t, self.period);
        if r < self.boundaries[0] {
            r += self.period;
        }
        stats.subinterval_searches += 1;
        let j = self.boundaries.partition_point(|&b| b <= r).saturating_sub(1);
        let cell = Self::range(table, s, vi, j);
        stats.leg_searches += 1;
        let k = cell.start + table.t[cell.clone()].partition_point(|&x| x <= r).saturating_sub(1);
        let (t0, v0) = (table.t[k], table.value[k]);
        let (t1, v1) = if k + 1 < all.end {
            (table.t[k + 1], table.value[k + 1])
        } else {
            (table.t[all.start] + self.period, table.value[all.start])
        };
        let value = if r == t0 { v0 } else { v0 + (r - t0) * (v1 - v0) / (t1 - t0) };
        let p = table.parent[k];
        Lookup {
            value,
            parent: (p != NO_PARENT).then_some(p),
            subinterval: j,
            leg: k - cell.start,
        }
    }

    /// Upper approximation of the travel time from the landmark to `v` at departure `t`.
    pub fn lookup(&self, v: u32, t: f64) -> Lookup {
        self.evaluate_table(&self.upper, v, t, &mut LookupStats::default())
    }

    pub fn lookup_counted(&self, v: u32, t: f64, stats: &mut LookupStats) -> Lookup {
        self.evaluate_table(&self.upper, v, t, stats)
    }

    /// Lower approximation, if it was kept.
    pub fn lookup_lower(&self, v: u32, t: f64) -> Option<f64> {
        self.lower
            .as_ref()
            .map(|tab| self.evaluate_table(tab, v, t, &mut LookupStats::default()).value)
    }

    /// Bytes used by the stored upper approximation.
    pub fn space_bytes(&self) -> usize {
        let per_point = std::mem::size_of::<f64>() * 2 + std::mem::size_of::<u32>();
        self.upper.len() * per_point + self.upper.first.len() * 4 + self.boundaries.len() * 8
    }

    /// Multiplies one stored upper value; for fault-injection tests.
    pub fn scale_upper_value(&mut self, v: u32, index: usize, factor: f64) -> Option<f64> {
        let s = self.subintervals();
        let start = self.upper.first[v as usize * s] as usize;
        let end = self.upper.first[(v as usize + 1) * s] as usize;
        let i = start + index;
        if i >= end {
            return None;
        }
        self.upper.value[i] *= factor;
        Some(self.upper.t[i])
    }
}

/// Depth bound from the slope bound and the smallest positive sampled travel
/// time of each vertex, clamped to `[1, cap]`.
pub fn depth_bound(period: f64, lambda: f64, epsilon: f64, d_min: impl IntoIterator<Item = f64>, cap: u32) -> u32 {
    let mut k: i64 = 1;
    for d in d_min {
        if d > 1e-12 && d.is_finite() {
            let x = (period * (lambda + 1.0) / (epsilon * d)).log2().ceil() as i64 - 2;
            k = k.max(x);
        }
    }
    k.clamp(1, cap as i64) as u32
}

struct Bisector<'a> {
    g: &'a TdInstance,
    ws: TddWorkspace,
    landmark: u32,
    epsilon: f64,
    k_max: u32,
    /// Interior samples per vertex for the current subinterval.
    interior: Vec<Vec<Sample>>,
    stats: LandmarkStats,
}

impl Bisector<'_> {
    fn probe(&mut self, t: f64) -> Probe {
        self.stats.probes += 1;
        Probe::take(&mut self.ws, self.g, self.landmark, t)
    }

    fn run(&mut self, a: f64, b: f64, pa: &Probe, pb: &Probe, active: &[(u32, bool)], depth: u32) {
        self.stats.max_depth = self.stats.max_depth.max(depth);
        let mut still: Vec<u32> = Vec::new();
        let mut estimates: Vec<Option<MaeEstimate>> = Vec::new();
        for &(v, forced) in active {
            let vi = v as usize;
            let (da, db) = (pa.d[vi], pb.d[vi]);
            if !(da.is_finite() && db.is_finite()) {
                continue;
            }
            match mae_estimate(a, b, da, db, pa.right[vi], pb.left[vi]) {
                Ok(e) if !forced && e.mae <= self.epsilon * da.min(db) => {}
                Ok(e) => {
                    still.push(v);
                    estimates.push(Some(e));
                }
                Err(_) => {
                    self.stats.concavity_flags += 1;
                    still.push(v);
                    estimates.push(None);
                }
            }
        }
        if still.is_empty() {
            return;
        }
        if depth >= self.k_max {
            self.stats.unresolved += still.len();
            return;
        }
        let mid = 0.5 * (a + b);
        let pm = self.probe(mid);
        let mut next: Vec<(u32, bool)> = Vec::with_capacity(still.len());
        for (&v, e) in still.iter().zip(&estimates) {
            let vi = v as usize;
            let dm = pm.d[vi];
            let tol = 1e-9 * (1.0 + dm.abs());
            let kink = pm.right[vi] > pm.left[vi] + 1e-9;
            let outside = match e {
                Some(e) => {
                    let chord = pa.d[vi] + (mid - a) * (pb.d[vi] - pa.d[vi]) / (b - a);
                    dm > e.upper(pa.d[vi], pb.d[vi], mid) + tol || dm < chord - tol
                }
                None => false,
            };
            if kink || outside {
                self.stats.concavity_flags += 1;
            }
            next.push((v, kink || outside));
        }
        self.run(a, mid, pa, &pm, &next, depth + 1);
        for &v in &still {
            self.interior[v as usize].push(pm.sample(v as usize, mid));
        }
        self.run(mid, b, &pm, pb, &next, depth + 1);
    }
}

/// Worst-case gap of one leg; the lift that keeps a non-concave leg within
/// `1 + ε` if concavity failed there.
fn leg_gap(p: &Sample, q: &Sample, tq: f64, epsilon: f64) -> (f64, Option<MaeEstimate>) {
    match mae_estimate(p.t, tq, p.d, q.d, p.right, q.left) {
        Ok(e) => (e.mae, Some(e)),
        Err(_) => (epsilon * p.d.min(q.d), None),
    }
}

/// Certified gap between the chord from sample `i` to sample `j` and the true
/// travel time, from the tangent triangles of the legs in between. `None` if
/// the span cannot be certified concave.
fn span_gap(seq: &[&Sample], times: &[f64], legs: &[(f64, Option<MaeEstimate>)], i: usize, j: usize) -> Option<f64> {
    let len = seq.len();
    let (ti, di, dj) = (times[i], seq[i].d, seq[j % len].d);
    let slope = (dj - di) / (times[j] - ti);
    let chord = |t: f64| di + (t - ti) * slope;
    let mut gap: f64 = 0.0;
    for k in i..j {
        let e = legs[k].1?;
        if k > i {
            let p = seq[k];
            if p.right > p.left + 1e-9 || p.d < chord(times[k]) - 1e-9 * (1.0 + p.d) {
                return None;
            }
            gap = gap.max(p.d - chord(times[k]));
        }
        if !e.is_affine() {
            gap = gap.max(e.upper_at_m - chord(e.m));
        }
    }
    Some(gap)
}

/// Greedy left-to-right thinning of the samples `start..end` of one cell; the
/// sample at `end` (next cell or wrap) is the fixed right anchor. Returns the
/// kept indices with the certified gap of the leg each one starts.
fn coarsen(seq: &[&Sample], times: &[f64], legs: &[(f64, Option<MaeEstimate>)], start: usize, end: usize, epsilon: f64) -> Vec<(usize, f64)> {
    let len = seq.len();
    let mut out = Vec::new();
    let mut i = start;
    while i < end {
        let (mut j, mut gap) = (i + 1, legs[i].0);
        while j < end {
            match span_gap(seq, times, legs, i, j + 1) {
                Some(g) if g <= epsilon * seq[i].d.min(seq[(j + 1) % len].d) => {
                    j += 1;
                    gap = g;
                }
                _ => break,
            }
        }
        out.push((i, gap));
        i = j;
    }
    out
}

/// Builds the summaries of one landmark over the given subinterval boundaries.
fn build_landmark(g: &TdInstance, landmark: u32, boundaries: Vec<f64>, lambda_hint: f64, config: &OracleConfig) -> LandmarkSummary {
    let n = g.n();
    let period = g.period();
    let s = boundaries.len();
    let mut bis = Bisector {
        g,
        ws: TddWorkspace::new(n),
        landmark,
        epsilon: config.epsilon,
        k_max: 1,
        interior: vec![Vec::new(); n],
        stats: LandmarkStats { landmark, subintervals: s, ..Default::default() },
    };
    let probes: Vec<Probe> = boundaries.iter().map(|&b| bis.probe(b)).collect();
    bis.stats.boundary_probes = s;

    let mut lambda = lambda_hint;
    for p in &probes {
        for v in 0..n {
            if p.d[v].is_finite() {
                lambda = lambda.max(p.right[v]).max(p.left[v]);
            }
        }
    }
    let lambda = 2.0 * lambda.max(0.0);
    let d_min = (0..n).map(|v| probes.iter().map(|p| p.d[v]).filter(|d| *d > 1e-12).fold(f64::INFINITY, f64::min));
    bis.k_max = depth_bound(period, lambda, config.epsilon, d_min, config.max_depth);
    bis.stats.k_max = bis.k_max;
    bis.stats.lambda_used = lambda;

    // per vertex and subinterval: samples from the boundary up to, not including, the next boundary
    let mut cells: Vec<Vec<Vec<Sample>>> = vec![Vec::with_capacity(s); n];
    let all: Vec<(u32, bool)> = (0..n as u32).map(|v| (v, false)).collect();
    for j in 0..s {
        let (a, b) = (boundaries[j], if j + 1 < s { boundaries[j + 1] } else { boundaries[0] + period });
        let pa = &probes[j];
        let pb_shifted;
        let pb = if j + 1 < s {
            &probes[j + 1]
        } else {
            // same network one period later: identical travel times and slopes
            pb_shifted = Probe {
                d: probes[0].d.clone(),
                right: probes[0].right.clone(),
                left: probes[0].left.clone(),
                parent: probes[0].parent.clone(),
            };
            &pb_shifted
        };
        bis.run(a, b, pa, pb, &all, 0);
        for v in 0..n {
            let mut cell = Vec::with_capacity(1 + bis.interior[v].len());
            if pa.d[v].is_finite() {
                cell.push(pa.sample(v, a));
                cell.append(&mut bis.interior[v]);
            }
            bis.interior[v].clear();
            cells[v].push(cell);
        }
    }
    let mut stats = bis.stats;

    let mut upper = PointTable::with_capacity(n * s);
    let mut lower = config.keep_lower.then(|| PointTable::with_capacity(n * s));
    for vcells in &cells {
        let total: usize = vcells.iter().map(Vec::len).sum();
        stats.max_lower_per_vertex = stats.max_lower_per_vertex.max(total);
        // legs over the whole period, the last one wrapping to the first sample
        let seq: Vec<&Sample> = vcells.iter().flatten().collect();
        let len = seq.len();
        let times: Vec<f64> = seq.iter().map(|p| p.t).chain(seq.first().map(|p| p.t + period)).collect();
        let legs: Vec<(f64, Option<MaeEstimate>)> = (0..len).map(|i| leg_gap(seq[i], seq[(i + 1) % len], times[i + 1], config.epsilon)).collect();
        let kept: Vec<Vec<(usize, f64)>> = match config.upper {
            UpperMode::Lifted => {
                let mut start = 0;
                vcells
                    .iter()
                    .map(|cell| {
                        let k = coarsen(&seq, &times, &legs, start, start + cell.len(), config.epsilon);
                        start += cell.len();
                        k
                    })
                    .collect()
            }
            UpperMode::Apex => {
                let mut start = 0;
                vcells
                    .iter()
                    .map(|cell| {
                        let k = (start..start + cell.len()).map(|i| (i, legs[i].0)).collect();
                        start += cell.len();
                        k
                    })
                    .collect()
            }
        };
        let flat_gaps: Vec<f64> = kept.iter().flatten().map(|&(_, g)| g).collect();
        stats.lower_points += flat_gaps.len();
        stats.merged_points += total - flat_gaps.len();
        let mut k = 0;
        for cell in &kept {
            upper.mark();
            if let Some(low) = lower.as_mut() {
                low.mark();
            }
            for &(i, gap) in cell {
                let p = seq[i];
                match config.upper {
                    UpperMode::Lifted => {
                        let before = flat_gaps[(k + flat_gaps.len() - 1) % flat_gaps.len()];
                        upper.push(p.t, p.d + gap.max(before), p.parent);
                    }
                    UpperMode::Apex => {
                        upper.push(p.t, p.d, p.parent);
                        if let Some(e) = legs[i].1.filter(|e| e.mae > AFFINE_GAP * (1.0 + p.d) && e.m > e.t_s && e.m < e.t_f) {
                            upper.push(e.m, e.upper_at_m, p.parent);
                        }
                    }
                }
                if let Some(low) = lower.as_mut() {
                    low.push(p.t, p.d, p.parent);
                }
                k += 1;
            }
        }
    }
    upper.mark();
    if let Some(low) = lower.as_mut() {
        low.mark();
    }
    stats.upper_points = upper.len();
    LandmarkSummary {
        landmark,
        period,
        epsilon: config.epsilon,
        n,
        boundaries,
        upper,
        lower,
        stats,
    }
}

/// Summary statistics over all landmarks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PreprocessStats {
    pub landmarks: usize,
    pub promoted: bool,
    pub lambda_estimate: f64,
    pub total_probes: usize,
    pub total_upper_points: usize,
    pub total_lower_points: usize,
    pub space_bytes: usize,
    pub concavity_flags: usize,
    pub unresolved: usize,
    pub wall_time: Duration,
}

#[derive(Debug, Clone)]
pub struct OracleSummaries {
    pub n: usize,
    pub period: f64,
    pub epsilon: f64,
    pub landmarks: LandmarkSet,
    /// One shard per landmark, in landmark-id order.
    pub shards: Vec<LandmarkSummary>,
    slot: Vec<u32>,
    pub stats: PreprocessStats,
}

impl OracleSummaries {
    fn assemble(n: usize, period: f64, epsilon: f64, landmarks: LandmarkSet, shards: Vec<LandmarkSummary>, mut stats: PreprocessStats) -> Self {
        let mut slot = vec![u32::MAX; n];
        for (i, s) in shards.iter().enumerate() {
            slot[s.landmark as usize] = i as u32;
        }
        stats.landmarks = shards.len();
        stats.total_probes = shards.iter().map(|s| s.stats.probes).sum();
        stats.total_upper_points = shards.iter().map(|s| s.stats.upper_points).sum();
        stats.total_lower_points = shards.iter().map(|s| s.stats.lower_points).sum();
        stats.space_bytes = shards.iter().map(LandmarkSummary::space_bytes).sum();
        stats.concavity_flags = shards.iter().map(|s| s.stats.concavity_flags).sum();
        stats.unresolved = shards.iter().map(|s| s.stats.unresolved).sum();
        Self { n, period, epsilon, landmarks, shards, slot, stats }
    }

    pub fn shard(&self, landmark: u32) -> Option<&LandmarkSummary> {
        match self.slot.get(landmark as usize) {
            Some(&i) if i != u32::MAX => Some(&self.shards[i as usize]),
            _ => None,
        }
    }

    pub fn shard_mut(&mut self, landmark: u32) -> Option<&mut LandmarkSummary> {
        match self.slot.get(landmark as usize) {
            Some(&i) if i != u32::MAX => Some(&mut self.shards[i as usize]),
            _ => None,
        }
    }

    pub fn is_landmark(&self, v: u32) -> bool {
        self.landmarks.contains(v)
    }

    /// `Δ[ℓ, v](t)` with the parent of the active leg.
    pub fn query(&self, landmark: u32, v: u32, t: f64) -> Result<Lookup, SummaryError> {
        if v as usize >= self.n {
            return Err(SummaryError::VertexOutOfRange(v));
        }
        self.shard(landmark).map(|s| s.lookup(v, t)).ok_or(SummaryError::NotALandmark(landmark))
    }

    /// Writes one shard per landmark plus a manifest into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), SummaryError> {
        let io = |path: &Path| {
            let path = path.display().to_string();
            move |source| SummaryError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let mut m = String::new();
        let _ = writeln!(m, "{MANIFEST_HEADER}");
        let _ = writeln!(m, "vertices {}", self.n);
        let _ = writeln!(m, "period {}", self.period);
        let _ = writeln!(m, "epsilon {}", self.epsilon);
        let _ = writeln!(m, "promoted {}", self.landmarks.promoted);
        let _ = writeln!(m, "landmarks {}", self.shards.len());
        for s in &self.shards {
            let _ = writeln!(m, "{} {}", s.landmark, shard_name(s.landmark));
        }
        for s in &self.shards {
            let path = dir.join(shard_name(s.landmark));
            std::fs::write(&path, s.to_text()).map_err(io(&path))?;
        }
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, m).map_err(io(&path))
    }

    pub fn load(dir: &Path) -> Result<Self, SummaryError> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|source| SummaryError::Io { path: path.display().to_string(), source })?;
        let mut r = Reader::new(&text, path.display().to_string());
        r.expect_line(MANIFEST_HEADER)?;
        let n: usize = r.keyed("vertices")?;
        let period: f64 = r.keyed("period")?;
        let epsilon: f64 = r.keyed("epsilon")?;
        let promoted: bool = r.keyed("promoted")?;
        let count: usize = r.keyed("landmarks")?;
        let mut shards = Vec::with_capacity(count);
        let mut ids = Vec::with_capacity(count);
        for _ in 0..count {
            let f = r.fields()?;
            if f.len() != 2 {
                return Err(r.error("expected `landmark file`"));
            }
            let id: u32 = r.parse(f[0])?;
            let p = dir.join(f[1]);
            let t = std::fs::read_to_string(&p).map_err(|source| SummaryError::Io { path: p.display().to_string(), source })?;
            ids.push(id);
            shards.push(LandmarkSummary::from_text(&t, &p.display().to_string())?);
        }
        let mut landmarks = LandmarkSet::from_ids(n, ids);
        landmarks.promoted = promoted;
        Ok(Self::assemble(n, period, epsilon, landmarks, shards, PreprocessStats { promoted, ..Default::default() }))
    }
}

fn shard_name(landmark: u32) -> String {
    format!("landmark-{landmark}.tds")
}

fn fmt_parent(p: u32) -> String {
    if p == NO_PARENT {
        "-".into()
    } else {
        p.to_string()
    }
}

impl LandmarkSummary {
    /// Canonical text shard.
    pub fn to_text(&self) -> String {
        let s = self.subintervals();
        let mut out = String::new();
        let _ = writeln!(out, "{SHARD_HEADER}");
        let _ = writeln!(out, "landmark {}", self.landmark);
        let _ = writeln!(out, "period {}", self.period);
        let _ = writeln!(out, "epsilon {}", self.epsilon);
        let _ = writeln!(out, "vertices {}", self.n);
        let _ = writeln!(out, "subintervals {s}");
        let b: Vec<String> = self.boundaries.iter().map(f64::to_string).collect();
        let _ = writeln!(out, "boundaries {}", b.join(" "));
        let _ = writeln!(out, "lower {}", self.lower.is_some());
        let mut tables = vec![("u", &self.upper)];
        if let Some(low) = &self.lower {
            tables.push(("l", low));
        }
        for v in 0..self.n {
            for (tag, tab) in &tables {
                let start = tab.first[v * s];
                let end = tab.first[(v + 1) * s];
                let offs: Vec<String> = (0..s).map(|j| (tab.first[v * s + j] - start).to_string()).collect();
                let _ = writeln!(out, "{tag} {v} {} {}", end - start, offs.join(" "));
                for i in start as usize..end as usize {
                    let _ = writeln!(out, "{} {} {}", tab.t[i], tab.value[i], fmt_parent(tab.parent[i]));
                }
            }
        }
        out
    }

    pub fn from_text(text: &str, path: &str) -> Result<Self, SummaryError> {
        let mut r = Reader::new(text, path.to_string());
        r.expect_line(SHARD_HEADER)?;
        let landmark: u32 = r.keyed("landmark")?;
        let period: f64 = r.keyed("period")?;
        let epsilon: f64 = r.keyed("epsilon")?;
        let n: usize = r.keyed("vertices")?;
        let s: usize = r.keyed("subintervals")?;
        let f = r.fields()?;
        if f.first() != Some(&"boundaries") || f.len() != s + 1 {
            return Err(r.error("expected boundaries line"));
        }
        let boundaries = f[1..].iter().map(|x| r.parse(x)).collect::<Result<Vec<f64>, _>>()?;
        let has_lower: bool = r.keyed("lower")?;
        let mut upper = PointTable::with_capacity(n * s);
        let mut lower = has_lower.then(|| PointTable::with_capacity(n * s));
        for v in 0..n {
            let tags: &[&str] = if has_lower { &["u", "l"] } else { &["u"] };
            for tag in tags {
                let f = r.fields()?;
                if f.len() != 3 + s || f[0] != *tag || r.parse::<usize>(f[1])? != v {
                    return Err(r.error(&format!("expected `{tag} {v} count offsets`")));
                }
                let count: usize = r.parse(f[2])?;
                let offs = f[3..].iter().map(|x| r.parse(x)).collect::<Result<Vec<u32>, _>>()?;
                let tab = if *tag == "u" { &mut upper } else { lower.as_mut().expect("lower table present") };
                let base = tab.len() as u32;
                for o in offs {
                    tab.first.push(base + o);
                }
                for _ in 0..count {
                    let p = r.fields()?;
                    if p.len() != 3 {
                        return Err(r.error("expected `t value parent`"));
                    }
                    let parent = if p[2] == "-" { NO_PARENT } else { r.parse(p[2])? };
                    tab.push(r.parse(p[0])?, r.parse(p[1])?, parent);
                }
            }
        }
        upper.mark();
        if let Some(low) = lower.as_mut() {
            low.mark();
        }
        let stats = LandmarkStats {
            landmark,
            subintervals: s,
            upper_points: upper.len(),
            lower_points: lower.as_ref().map_or(0, PointTable::len),
            ..Default::default()
        };
        Ok(Self { landmark, period, epsilon, n, boundaries, upper, lower, stats })
    }
}

struct Reader<'a> {
    lines: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
    line: usize,
    path: String,
}

impl<'a> Reader<'a> {
    fn new(text: &'a str, path: String) -> Self {
        Self { lines: text.lines().enumerate().peekable(), line: 0, path }
    }

    fn error(&self, msg: &str) -> SummaryError {
        SummaryError::Format { path: self.path.clone(), line: self.line, msg: msg.to_string() }
    }

    fn next_line(&mut self) -> Result<&'a str, SummaryError> {
        let (i, l) = self.lines.next().ok_or_else(|| self.error("unexpected end of file"))?;
        self.line = i + 1;
        Ok(l)
    }

    fn fields(&mut self) -> Result<Vec<&'a str>, SummaryError> {
        Ok(self.next_line()?.split_whitespace().collect())
    }

    fn expect_line(&mut self, want: &str) -> Result<(), SummaryError> {
        if self.next_line()?.trim() != want {
            return Err(self.error(&format!("expected `{want}`")));
        }
        Ok(())
    }

    fn parse<T: std::str::FromStr>(&self, s: &str) -> Result<T, SummaryError> {
        s.parse().map_err(|_| self.error(&format!("cannot parse {s:?}")))
    }

    fn keyed<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, SummaryError> {
        let f = self.fields()?;
        if f.len() != 2 || f[0] != key {
            return Err(self.error(&format!("expected `{key} value`")));
        }
        self.parse(f[1])
    }
}

/// Selects landmarks, projects spoilers and bisects every landmark.
pub fn build_oracle(g: &TdInstance, config: &OracleConfig) -> Result<OracleSummaries, SummaryError> {
    config.validate()?;
    let landmarks = select_landmarks(g.n(), config.rho, config.seed);
    build_with_landmarks(g, config, landmarks)
}

/// As [`build_oracle`] with a given landmark set.
pub fn build_with_landmarks(g: &TdInstance, config: &OracleConfig, landmarks: LandmarkSet) -> Result<OracleSummaries, SummaryError> {
    config.validate()?;
    let start = Instant::now();
    let rev = reverse_delays(g)?;
    let projection = project_spoilers(g, &rev, &landmarks);
    let lambda_estimate = match config.lambda_max {
        Some(l) => l,
        None if g.is_time_independent() => 0.0,
        None => estimate_metric_params(g, config.estimate_samples, config.seed, TimeWindow::whole(g.period()), config.epsilon)
            .map(|p| p.lambda_max)
            .unwrap_or(0.0),
    };
    let work = |i: usize| {
        let mut b = projection.images[i].clone();
        if b.is_empty() {
            b.push(0.0);
        }
        build_landmark(g, landmarks.ids[i], b, lambda_estimate, config)
    };
    let shards: Vec<LandmarkSummary> = match config.threads {
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| SummaryError::ThreadPool(e.to_string()))?;
            pool.install(|| (0..landmarks.len()).into_par_iter().map(work).collect())
        }
        None => (0..landmarks.len()).into_par_iter().map(work).collect(),
    };
    let stats = PreprocessStats {
        promoted: landmarks.promoted,
        lambda_estimate,
        wall_time: start.elapsed(),
        ..Default::default()
    };
    Ok(OracleSummaries::assemble(g.n(), g.period(), config.epsilon, landmarks, shards, stats))
}
