//! Directed graphs with periodic piecewise-linear arc delays.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::engine::TddWorkspace;
use crate::pwl::{boundary_spoiler, split_concavity, Breakpoint, FunctionKind, PwlError, PwlFunction, TOLERANCE};

pub const NO_ARC: u32 = u32::MAX;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error(transparent)]
    Pwl(#[from] PwlError),
    #[error("arc {arc}: vertex {vertex} out of range for n = {n}")]
    VertexOutOfRange { arc: usize, vertex: u32, n: usize },
    #[error("arc {arc}: delay period {found} differs from instance period {expected}")]
    PeriodMismatch { arc: usize, expected: f64, found: f64 },
    #[error("arc {0}: delay function has the wrong kind")]
    NotDelay(usize),
    #[error("arc {arc}: delay value {value} is not positive")]
    NonPositiveDelay { arc: usize, value: f64 },
    #[error("arc {arc}: auxiliary arcs must have identically zero delay")]
    AuxiliaryNotZero { arc: usize },
    #[error("arc {arc}: delay slope {slope} is not above -1, reverse delay undefined")]
    NotStrictFifo { arc: usize, slope: f64 },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("no sampled pair was connected ({0} samples drawn)")]
    NoConnectedSamples(usize),
    #[error("invalid estimation window [{0}, {1})")]
    InvalidWindow(f64, f64),
}

/// One arc as supplied to [`TdInstance::new`].
#[derive(Debug, Clone)]
pub struct ArcRecord {
    pub tail: u32,
    pub head: u32,
    pub delay: PwlFunction,
    /// Zero-delay arc introduced by a graph transformation.
    pub auxiliary: bool,
}

impl ArcRecord {
    pub fn new(tail: u32, head: u32, delay: PwlFunction) -> Self {
        Self { tail, head, delay, auxiliary: false }
    }
}

/// A concavity-spoiling breakpoint: the delay of `arc` has a slope increase at
/// departure time `t` from the tail. `boundary` marks the period junction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spoiler {
    pub arc: u32,
    pub t: f64,
    pub boundary: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceStats {
    pub n: usize,
    pub m: usize,
    /// Total stored breakpoints over all arcs.
    pub breakpoints: usize,
    /// Interior concavity-spoiling breakpoints.
    pub spoilers: usize,
    /// Arcs whose delay has a slope increase at the period junction.
    pub boundary_spoilers: usize,
    pub max_arc_breakpoints: usize,
    pub max_out_degree: usize,
    pub auxiliary_arcs: usize,
    pub strict_fifo: bool,
}

#[derive(Debug, Clone)]
pub struct TdInstance {
    n: usize,
    period: f64,
    tails: Vec<u32>,
    heads: Vec<u32>,
    delays: Vec<PwlFunction>,
    auxiliary: Vec<bool>,
    first_out: Vec<u32>,
    out_ids: Vec<u32>,
    first_in: Vec<u32>,
    in_ids: Vec<u32>,
}

fn csr(n: usize, keys: &[u32]) -> (Vec<u32>, Vec<u32>) {
    let mut first = vec![0u32; n + 1];
    for &k in keys {
        first[k as usize + 1] += 1;
    }
    for i in 0..n {
        first[i + 1] += first[i];
    }
    let mut fill = first.clone();
    let mut ids = vec![0u32; keys.len()];
    for (a, &k) in keys.iter().enumerate() {
        ids[fill[k as usize] as usize] = a as u32;
        fill[k as usize] += 1;
    }
    (first, ids)
}

impl TdInstance {
    pub fn new(n: usize, period: f64, arcs: Vec<ArcRecord>) -> Result<Self, NetworkError> {
        if !(period.is_finite() && period > 0.0) {
            return Err(PwlError::InvalidPeriod(period).into());
        }
        let mut tails = Vec::with_capacity(arcs.len());
        let mut heads = Vec::with_capacity(arcs.len());
        let mut delays = Vec::with_capacity(arcs.len());
        let mut auxiliary = Vec::with_capacity(arcs.len());
        for (i, a) in arcs.into_iter().enumerate() {
            for v in [a.tail, a.head] {
                if v as usize >= n {
                    return Err(NetworkError::VertexOutOfRange { arc: i, vertex: v, n });
                }
            }
            if a.delay.kind() != FunctionKind::Delay {
                return Err(NetworkError::NotDelay(i));
            }
            if (a.delay.period() - period).abs() > TOLERANCE {
                return Err(NetworkError::PeriodMismatch { arc: i, expected: period, found: a.delay.period() });
            }
            if a.auxiliary {
                if !(a.delay.is_constant() && a.delay.points()[0].v == 0.0) {
                    return Err(NetworkError::AuxiliaryNotZero { arc: i });
                }
            } else if a.delay.min_value() <= 0.0 {
                return Err(NetworkError::NonPositiveDelay { arc: i, value: a.delay.min_value() });
            }
            tails.push(a.tail);
            heads.push(a.head);
            delays.push(a.delay);
            auxiliary.push(a.auxiliary);
        }
        let (first_out, out_ids) = csr(n, &tails);
        let (first_in, in_ids) = csr(n, &heads);
        Ok(Self {
            n,
            period,
            tails,
            heads,
            delays,
            auxiliary,
            first_out,
            out_ids,
            first_in,
            in_ids,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.tails.len()
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn tail(&self, arc: u32) -> u32 {
        self.tails[arc as usize]
    }

    pub fn head(&self, arc: u32) -> u32 {
        self.heads[arc as usize]
    }

    pub fn delay(&self, arc: u32) -> &PwlFunction {
        &self.delays[arc as usize]
    }

    pub fn is_auxiliary(&self, arc: u32) -> bool {
        self.auxiliary[arc as usize]
    }

    /// Arc ids leaving `v`, in input order.
    pub fn out_arcs(&self, v: u32) -> &[u32] {
        let v = v as usize;
        &self.out_ids[self.first_out[v] as usize..self.first_out[v + 1] as usize]
    }

    /// Arc ids entering `v`, in input order.
    pub fn in_arcs(&self, v: u32) -> &[u32] {
        let v = v as usize;
        &self.in_ids[self.first_in[v] as usize..self.first_in[v + 1] as usize]
    }

    pub fn out_degree(&self, v: u32) -> usize {
        self.out_arcs(v).len()
    }

    pub fn max_out_degree(&self) -> usize {
        (0..self.n as u32).map(|v| self.out_degree(v)).max().unwrap_or(0)
    }

    pub fn arc_record(&self, arc: u32) -> ArcRecord {
        ArcRecord {
            tail: self.tail(arc),
            head: self.head(arc),
            delay: self.delay(arc).clone(),
            auxiliary: self.is_auxiliary(arc),
        }
    }

    pub fn arc_records(&self) -> Vec<ArcRecord> {
        (0..self.m() as u32).map(|a| self.arc_record(a)).collect()
    }

    pub fn is_strict_fifo(&self) -> bool {
        self.delays.iter().all(PwlFunction::is_strict_fifo_delay)
    }

    /// Largest leg slope over all arc delays.
    pub fn max_arc_slope(&self) -> f64 {
        self.delays.iter().map(PwlFunction::max_slope).fold(0.0, f64::max)
    }

    pub fn is_time_independent(&self) -> bool {
        self.delays.iter().all(PwlFunction::is_constant)
    }

    /// All concavity-spoiling breakpoints including period-junction ones.
    pub fn spoilers(&self) -> Vec<Spoiler> {
        let mut out = Vec::new();
        for (a, f) in self.delays.iter().enumerate() {
            if boundary_spoiler(f) {
                out.push(Spoiler { arc: a as u32, t: 0.0, boundary: true });
            }
            for i in split_concavity(f) {
                out.push(Spoiler { arc: a as u32, t: f.points()[i].t, boundary: false });
            }
        }
        out
    }

    pub fn stats(&self) -> InstanceStats {
        InstanceStats {
            n: self.n,
            m: self.m(),
            breakpoints: self.delays.iter().map(PwlFunction::len).sum(),
            spoilers: self.delays.iter().map(|f| split_concavity(f).len()).sum(),
            boundary_spoilers: self.delays.iter().filter(|f| boundary_spoiler(f)).count(),
            max_arc_breakpoints: self.delays.iter().map(PwlFunction::len).max().unwrap_or(0),
            max_out_degree: self.max_out_degree(),
            auxiliary_arcs: self.auxiliary.iter().filter(|&&a| a).count(),
            strict_fifo: self.is_strict_fifo(),
        }
    }

    /// Text form: `n m T`, then per arc `tail head k` and `k` lines `t v`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} {} {}", self.n, self.m(), self.period);
        for a in 0..self.m() {
            let f = &self.delays[a];
            let _ = writeln!(s, "{} {} {}", self.tails[a], self.heads[a], f.len());
            for p in f.points() {
                let _ = writeln!(s, "{} {}", p.t, p.v);
            }
        }
        s
    }

    /// Parses the text form. Arcs whose delay is identically zero are marked
    /// auxiliary.
    pub fn from_text(text: &str) -> Result<Self, NetworkError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let mut next_fields = |want: usize, what: &str| -> Result<(usize, Vec<&str>), NetworkError> {
            let (line, l) = lines.next().ok_or(NetworkError::Parse { line: 0, msg: format!("unexpected end of input, expected {what}") })?;
            let fields: Vec<&str> = l.split_whitespace().collect();
            if fields.len() != want {
                return Err(NetworkError::Parse { line, msg: format!("expected {want} fields for {what}, got {}", fields.len()) });
            }
            Ok((line, fields))
        };
        fn num<T: std::str::FromStr>(line: usize, s: &str) -> Result<T, NetworkError>
        where
            T::Err: std::fmt::Display,
        {
            s.parse().map_err(|e: T::Err| NetworkError::Parse { line, msg: format!("{s:?}: {e}") })
        }
        let (line, h) = next_fields(3, "header `n m T`")?;
        let n: usize = num(line, h[0])?;
        let m: usize = num(line, h[1])?;
        let period: f64 = num(line, h[2])?;
        let mut arcs = Vec::with_capacity(m);
        for _ in 0..m {
            let (line, r) = next_fields(3, "arc record `tail head k`")?;
            let tail: u32 = num(line, r[0])?;
            let head: u32 = num(line, r[1])?;
            let k: usize = num(line, r[2])?;
            let mut pts = Vec::with_capacity(k);
            for _ in 0..k {
                let (line, p) = next_fields(2, "breakpoint `t v`")?;
                pts.push(Breakpoint::new(num(line, p[0])?, num(line, p[1])?));
            }
            let delay = PwlFunction::new(period, pts, FunctionKind::Delay).map_err(|e| NetworkError::Parse { line, msg: e.to_string() })?;
            let auxiliary = delay.is_constant() && delay.points()[0].v == 0.0;
            arcs.push(ArcRecord { tail, head, delay, auxiliary });
        }
        if lines.next().is_some() {
            return Err(NetworkError::Parse { line: 0, msg: "trailing data after the last arc".into() });
        }
        Self::new(n, period, arcs)
    }
}

/// Correspondence between vertices of an instance and of its degree-reduced form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VertexMap {
    /// Reduced id standing in for each original vertex.
    pub to_reduced: Vec<u32>,
    /// Original vertex represented by each reduced id, if any.
    pub to_original: Vec<Option<u32>>,
    pub added_vertices: usize,
    pub added_arcs: usize,
}

impl VertexMap {
    pub fn identity(n: usize) -> Self {
        Self {
            to_reduced: (0..n as u32).collect(),
            to_original: (0..n as u32).map(Some).collect(),
            added_vertices: 0,
            added_arcs: 0,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.added_vertices == 0
    }
}

/// Replaces every vertex of out-degree above two by a binary tree whose
/// leaves carry the original out-arcs. Tree arcs have zero delay and are
/// marked auxiliary; the tree root takes over the in-arcs. The original id
/// remains as an isolated vertex.
pub fn reduce_out_degree(g: &TdInstance) -> (TdInstance, VertexMap) {
    let n = g.n();
    let mut map = VertexMap::identity(n);
    if g.max_out_degree() <= 2 {
        return (g.clone(), map);
    }
    let zero = PwlFunction::constant(g.period(), 0.0, FunctionKind::Delay).expect("zero delay is valid");
    let mut next_id = n as u32;
    let mut arcs: Vec<ArcRecord> = Vec::with_capacity(g.m() * 2);
    let mut extra: Vec<ArcRecord> = Vec::new();
    // leaf-arc tails after substitution, indexed by original arc id
    let mut new_tail: Vec<u32> = g.tails.clone();
    for v in 0..n as u32 {
        let out = g.out_arcs(v);
        if out.len() <= 2 {
            continue;
        }
        // items of the current level: Ok(arc) for an original out-arc, Err(node) for a tree node
        let mut level: Vec<Result<u32, u32>> = out.iter().map(|&a| Ok(a)).collect();
        while level.len() > 1 {
            let mut up = Vec::with_capacity(level.len() / 2 + 1);
            let mut it = level.chunks(2);
            for pair in &mut it {
                if pair.len() == 2 {
                    let node = next_id;
                    next_id += 1;
                    map.to_original.push(None);
                    for child in pair {
                        match *child {
                            Ok(a) => new_tail[a as usize] = node,
                            Err(c) => extra.push(ArcRecord { tail: node, head: c, delay: zero.clone(), auxiliary: true }),
                        }
                    }
                    up.push(Err(node));
                } else {
                    up.push(pair[0]);
                }
            }
            level = up;
        }
        let root = match level[0] {
            Err(r) => r,
            Ok(_) => unreachable!("out-degree above two always yields a tree node"),
        };
        map.to_reduced[v as usize] = root;
        map.to_original[root as usize] = Some(v);
        map.to_original[v as usize] = None;
    }
    for a in 0..g.m() {
        let head = g.heads[a];
        arcs.push(ArcRecord {
            tail: new_tail[a],
            head: map.to_reduced[head as usize],
            delay: g.delays[a].clone(),
            auxiliary: g.auxiliary[a],
        });
    }
    map.added_vertices = next_id as usize - n;
    map.added_arcs = extra.len();
    arcs.extend(extra);
    let reduced = TdInstance::new(next_id as usize, g.period(), arcs).expect("reduction preserves validity");
    (reduced, map)
}

/// Per-arc reverse delays, measured as functions of the arrival time at the head.
#[derive(Debug, Clone)]
pub struct ReverseNetwork {
    delays: Vec<PwlFunction>,
}

impl ReverseNetwork {
    pub fn delay(&self, arc: u32) -> &PwlFunction {
        &self.delays[arc as usize]
    }

    pub fn len(&self) -> usize {
        self.delays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.delays.is_empty()
    }
}

/// Reverse delay of one strictly FIFO arc: `D̄(t_v) = t_v − Arr⁻¹(t_v)`.
pub fn reverse_delay(f: &PwlFunction) -> Result<PwlFunction, PwlError> {
    if f.kind() != FunctionKind::Delay {
        return Err(PwlError::ExpectedDelay);
    }
    let period = f.period();
    if !f.is_strict_fifo_delay() {
        return Err(PwlError::FifoViolation { leg: 0, slope: f.min_slope() });
    }
    let mut pts: Vec<Breakpoint> = f
        .points()
        .iter()
        .map(|p| {
            let mut a = (p.t + p.v).rem_euclid(period);
            if a >= period {
                a = 0.0;
            }
            Breakpoint::new(a, p.v)
        })
        .collect();
    pts.sort_by(|a, b| a.t.total_cmp(&b.t));
    pts.dedup_by(|b, a| (b.t - a.t).abs() <= 1e-12);
    PwlFunction::new(period, pts, FunctionKind::ReverseDelay)
}

pub fn reverse_delays(g: &TdInstance) -> Result<ReverseNetwork, NetworkError> {
    let delays = (0..g.m())
        .map(|a| {
            let f = &g.delays[a];
            reverse_delay(f).map_err(|_| NetworkError::NotStrictFifo { arc: a, slope: f.min_slope() })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ReverseNetwork { delays })
}

/// How the slope and asymmetry constants were obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamSource {
    /// Exact over all pairs and departure times.
    Certified,
    /// Sample-based lower bounds on the true constants.
    Estimated { samples: usize, used: usize },
    /// Supplied by the caller.
    Given,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricParams {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub zeta: f64,
    pub epsilon: f64,
    pub source: ParamSource,
}

impl MetricParams {
    pub fn new(lambda_min: f64, lambda_max: f64, zeta: f64, epsilon: f64) -> Self {
        Self {
            lambda_min,
            lambda_max,
            zeta,
            epsilon,
            source: ParamSource::Given,
        }
    }

    pub fn with_epsilon(self, epsilon: f64) -> Self {
        Self { epsilon, ..self }
    }

    /// Stretch constant of the one-ball query.
    pub fn psi(&self) -> f64 {
        let (l, z, e) = (self.lambda_max, self.zeta, self.epsilon);
        1.0 + l * (1.0 + e) * (1.0 + 2.0 * z + l * z) + (1.0 + e) * z
    }

    pub fn is_certified(&self) -> bool {
        self.source == ParamSource::Certified
    }
}

/// Departure-time window for sampling, `[start, end)` within one period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeWindow {
    pub start: f64,
    pub end: f64,
}

impl TimeWindow {
    pub fn whole(period: f64) -> Self {
        Self { start: 0.0, end: period }
    }
}

/// Sample-based estimates of the slope bounds and of the opposite-trip ratio.
///
/// Each sample draws `(o, d, t)`, runs exact searches from `o` at `t` and at
/// `t + h` and from `d` at `t`, records divided-difference slopes towards
/// every reached vertex and the ratio of the two opposite trips.
pub fn estimate_metric_params(
    g: &TdInstance,
    samples: usize,
    seed: u64,
    window: TimeWindow,
    epsilon: f64,
) -> Result<MetricParams, NetworkError> {
    if !(window.end > window.start) {
        return Err(NetworkError::InvalidWindow(window.start, window.end));
    }
    let n = g.n();
    if n == 0 || samples == 0 {
        return Err(NetworkError::NoConnectedSamples(samples));
    }
    let h = (window.end - window.start) / 64.0;
    #[derive(Clone, Copy)]
    struct Acc {
        lmin: f64,
        lmax: f64,
        zeta: f64,
        used: usize,
    }
    let zero = Acc { lmin: 0.0, lmax: 0.0, zeta: 1.0, used: 0 };
    let acc = (0..samples)
        .into_par_iter()
        .map_init(
            || TddWorkspace::new(n),
            |ws, i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                let o = rng.gen_range(0..n) as u32;
                let d = rng.gen_range(0..n) as u32;
                let t = rng.gen_range(window.start..window.end);
                let mut acc = zero;
                if o == d {
                    return acc;
                }
                let a = ws.one_to_all(g, o, t);
                let b = ws.one_to_all(g, o, t + h);
                let back = ws.one_to_all(g, d, t);
                let (dod, ddo) = (a.arrival[d as usize] - t, back.arrival[o as usize] - t);
                if !(dod.is_finite() && ddo.is_finite()) || dod <= 0.0 || ddo <= 0.0 {
                    return acc;
                }
                acc.used = 1;
                acc.zeta = (dod / ddo).max(ddo / dod);
                for v in 0..n {
                    let (x, y) = (a.arrival[v], b.arrival[v]);
                    if v as u32 == o || !x.is_finite() || !y.is_finite() {
                        continue;
                    }
                    let slope = ((y - t - h) - (x - t)) / h;
                    acc.lmax = acc.lmax.max(slope);
                    acc.lmin = acc.lmin.max(-slope);
                }
                acc
            },
        )
        .reduce(
            || zero,
            |x, y| Acc {
                lmin: x.lmin.max(y.lmin),
                lmax: x.lmax.max(y.lmax),
                zeta: x.zeta.max(y.zeta),
                used: x.used + y.used,
            },
        );
    if acc.used == 0 {
        return Err(NetworkError::NoConnectedSamples(samples));
    }
    Ok(MetricParams {
        lambda_min: acc.lmin.min(1.0),
        lambda_max: acc.lmax,
        zeta: acc.zeta,
        epsilon,
        source: ParamSource::Estimated { samples, used: acc.used },
    })
}
