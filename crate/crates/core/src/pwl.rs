//! Periodic continuous piecewise-linear functions.
//!
//! A [`PwlFunction`] stores its breakpoints over one period `[0, T)`. The leg
//! after the last breakpoint wraps around to the first breakpoint of the next
//! period. Arrival functions are quasi-periodic (`Arr(t + T) = Arr(t) + T`),
//! so they carry a per-period value shift of `T`; delay and summary functions
//! are strictly periodic.

use std::fmt::Write as _;

use thiserror::Error;

/// Absolute tolerance used for time and value comparisons.
pub const TOLERANCE: f64 = 1e-9;

/// Snap distance used when deciding on which side of a breakpoint a time lies
/// for one-sided slopes.
const SNAP: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PwlError {
    #[error("period must be positive and finite, got {0}")]
    InvalidPeriod(f64),
    #[error("a function needs at least one breakpoint")]
    Empty,
    #[error("breakpoint {index} at t={t} lies outside [0, {period})")]
    OutOfRange { index: usize, t: f64, period: f64 },
    #[error("breakpoint times must be strictly increasing (index {0})")]
    NotIncreasing(usize),
    #[error("non-finite breakpoint value at index {0}")]
    NonFinite(usize),
    #[error("negative delay value {value} at index {index}")]
    NegativeDelay { index: usize, value: f64 },
    #[error("delay slope {slope} below -1 on leg {leg} violates FIFO")]
    FifoViolation { leg: usize, slope: f64 },
    #[error("function is not non-decreasing (leg {leg} has slope {slope})")]
    NotMonotone { leg: usize, slope: f64 },
    #[error("expected an arrival function")]
    ExpectedArrival,
    #[error("expected a delay function")]
    ExpectedDelay,
    #[error("period mismatch: {0} vs {1}")]
    PeriodMismatch(f64, f64),
    #[error("function kinds differ")]
    KindMismatch,
    #[error("interval [{t_s}, {t_f}] is empty")]
    InvalidInterval { t_s: f64, t_f: f64 },
    #[error("segment is not concave: outgoing slope {slope_out} < incoming slope {slope_in}")]
    NonConcave { slope_out: f64, slope_in: f64 },
    #[error("slopes are inconsistent with the endpoint values (intersection at {m} outside [{t_s}, {t_f}])")]
    InconsistentSlopes { m: f64, t_s: f64, t_f: f64 },
    #[error("malformed function text: {0}")]
    Parse(String),
}

/// How the values of a function are to be read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FunctionKind {
    /// Travel time as a function of departure time; periodic.
    Delay,
    /// Arrival time as a function of departure time; shifts by one period per period.
    Arrival,
    /// Stored approximation of a shortest-travel-time function; periodic.
    Summary,
    /// Travel time as a function of the arrival time at the head; periodic,
    /// slopes below 1.
    ReverseDelay,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Breakpoint {
    pub t: f64,
    pub v: f64,
}

impl Breakpoint {
    pub fn new(t: f64, v: f64) -> Self {
        Self { t, v }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PwlFunction {
    period: f64,
    points: Vec<Breakpoint>,
    kind: FunctionKind,
}

/// Drops interior breakpoints whose neighbours are collinear with them. The
/// first and last stored breakpoints are kept.
fn prune_collinear(points: Vec<Breakpoint>) -> Vec<Breakpoint> {
    if points.len() < 3 {
        return points;
    }
    let mut out: Vec<Breakpoint> = Vec::with_capacity(points.len());
    for p in points {
        while out.len() >= 2 {
            let a = out[out.len() - 2];
            let b = out[out.len() - 1];
            let interp = a.v + (b.t - a.t) * (p.v - a.v) / (p.t - a.t);
            if (interp - b.v).abs() <= TOLERANCE {
                out.pop();
            } else {
                break;
            }
        }
        out.push(p);
    }
    out
}

impl PwlFunction {
    /// Builds a function from breakpoints over `[0, period)`.
    ///
    /// Delay functions are additionally checked for non-negative values and
    /// leg slopes of at least -1. Collinear interior breakpoints are pruned.
    pub fn new(period: f64, points: Vec<Breakpoint>, kind: FunctionKind) -> Result<Self, PwlError> {
        if !(period.is_finite() && period > 0.0) {
            return Err(PwlError::InvalidPeriod(period));
        }
        if points.is_empty() {
            return Err(PwlError::Empty);
        }
        for (i, p) in points.iter().enumerate() {
            if !p.t.is_finite() || p.t < 0.0 || p.t >= period {
                return Err(PwlError::OutOfRange { index: i, t: p.t, period });
            }
            if !p.v.is_finite() {
                return Err(PwlError::NonFinite(i));
            }
            if i > 0 && p.t <= points[i - 1].t {
                return Err(PwlError::NotIncreasing(i));
            }
        }
        let f = Self {
            period,
            points: prune_collinear(points),
            kind,
        };
        if kind == FunctionKind::Delay {
            for (i, p) in f.points.iter().enumerate() {
                if p.v < 0.0 {
                    return Err(PwlError::NegativeDelay { index: i, value: p.v });
                }
            }
            for leg in 0..f.points.len() {
                let s = f.leg_slope(leg);
                if s < -1.0 - TOLERANCE {
                    return Err(PwlError::FifoViolation { leg, slope: s });
                }
            }
        }
        if kind == FunctionKind::ReverseDelay {
            for (i, p) in f.points.iter().enumerate() {
                if p.v < 0.0 {
                    return Err(PwlError::NegativeDelay { index: i, value: p.v });
                }
            }
            for leg in 0..f.points.len() {
                let s = f.leg_slope(leg);
                if s >= 1.0 {
                    return Err(PwlError::FifoViolation { leg, slope: s });
                }
            }
        }
        Ok(f)
    }

    pub fn from_pairs(period: f64, pairs: &[(f64, f64)], kind: FunctionKind) -> Result<Self, PwlError> {
        Self::new(period, pairs.iter().map(|&(t, v)| Breakpoint::new(t, v)).collect(), kind)
    }

    pub fn constant(period: f64, value: f64, kind: FunctionKind) -> Result<Self, PwlError> {
        Self::new(period, vec![Breakpoint::new(0.0, value)], kind)
    }

    /// The identity arrival function `Arr(t) = t`.
    pub fn identity_arrival(period: f64) -> Result<Self, PwlError> {
        Self::constant(period, 0.0, FunctionKind::Arrival)
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn kind(&self) -> FunctionKind {
        self.kind
    }

    pub fn points(&self) -> &[Breakpoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_constant(&self) -> bool {
        self.kind != FunctionKind::Arrival && self.points.iter().all(|p| p.v == self.points[0].v)
    }

    /// Value added per period.
    fn shift(&self) -> f64 {
        match self.kind {
            FunctionKind::Arrival => self.period,
            _ => 0.0,
        }
    }

    /// Splits `t` into a period count and an offset in `[0, T)`.
    fn reduce(&self, t: f64) -> (f64, f64) {
        let mut k = (t / self.period).floor();
        let mut r = t - k * self.period;
        if r < 0.0 {
            r += self.period;
            k -= 1.0;
        }
        if r >= self.period {
            r -= self.period;
            k += 1.0;
        }
        (k, r)
    }

    /// End point of leg `i` (the breakpoint after it, unwrapped into the
    /// current period frame).
    fn leg_end(&self, i: usize) -> Breakpoint {
        if i + 1 < self.points.len() {
            self.points[i + 1]
        } else {
            let first = self.points[0];
            Breakpoint::new(first.t + self.period, first.v + self.shift())
        }
    }

    /// Slope of the leg starting at breakpoint `i`; the last leg is the wrap leg.
    pub fn leg_slope(&self, i: usize) -> f64 {
        let a = self.points[i];
        let b = self.leg_end(i);
        (b.v - a.v) / (b.t - a.t)
    }

    /// Index of the last breakpoint at or before offset `r`, or `None` when `r`
    /// precedes the first breakpoint (it then lies on the wrap leg).
    fn predecessor(&self, r: f64) -> Option<usize> {
        let idx = self.points.partition_point(|p| p.t <= r);
        idx.checked_sub(1)
    }

    fn base_eval(&self, r: f64) -> f64 {
        let n = self.points.len();
        if n == 1 {
            let p = self.points[0];
            return p.v + (r - p.t) * self.shift() / self.period;
        }
        let (a, b) = match self.predecessor(r) {
            Some(i) => (self.points[i], self.leg_end(i)),
            None => {
                let last = self.points[n - 1];
                (Breakpoint::new(last.t - self.period, last.v - self.shift()), self.points[0])
            }
        };
        if r == a.t {
            return a.v;
        }
        a.v + (r - a.t) * (b.v - a.v) / (b.t - a.t)
    }

    /// Evaluates the function at any real time via its periodic extension.
    pub fn evaluate(&self, t: f64) -> f64 {
        if self.points.len() == 1 && self.kind != FunctionKind::Arrival {
            return self.points[0].v;
        }
        let (k, r) = self.reduce(t);
        let base = self.base_eval(r);
        if k == 0.0 {
            base
        } else {
            base + k * self.shift()
        }
    }

    /// Index of the leg containing `t`, i.e. the leg evaluation uses.
    pub fn leg_at(&self, t: f64) -> usize {
        let (_, r) = self.reduce(t);
        self.predecessor(r).unwrap_or(self.points.len() - 1)
    }

    /// Right derivative at `t`. A breakpoint within the snap distance of `t`
    /// counts as lying at `t`.
    pub fn right_slope(&self, t: f64) -> f64 {
        let n = self.points.len();
        if n == 1 {
            return self.leg_slope(0);
        }
        let (_, r) = self.reduce(t);
        if r + SNAP >= self.period + self.points[0].t {
            return self.leg_slope(0);
        }
        let idx = self.points.partition_point(|p| p.t <= r + SNAP);
        match idx.checked_sub(1) {
            Some(i) => self.leg_slope(i),
            None => self.leg_slope(n - 1),
        }
    }

    /// Left derivative at `t`, with the same snapping rule as [`Self::right_slope`].
    pub fn left_slope(&self, t: f64) -> f64 {
        let n = self.points.len();
        if n == 1 {
            return self.leg_slope(0);
        }
        let (_, r) = self.reduce(t);
        let idx = self.points.partition_point(|p| p.t < r - SNAP);
        // left of the first breakpoint lies the wrap leg
        self.leg_slope(idx.checked_sub(1).unwrap_or(n - 1))
    }

    pub fn min_slope(&self) -> f64 {
        (0..self.points.len()).map(|i| self.leg_slope(i)).fold(f64::INFINITY, f64::min)
    }

    pub fn max_slope(&self) -> f64 {
        (0..self.points.len()).map(|i| self.leg_slope(i)).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.points.iter().map(|p| p.v).fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.points.iter().map(|p| p.v).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_non_decreasing(&self) -> bool {
        self.min_slope() >= -TOLERANCE
    }

    /// For delay functions: every leg slope strictly above -1.
    pub fn is_strict_fifo_delay(&self) -> bool {
        self.min_slope() > -1.0 + TOLERANCE
    }

    /// `Arr(t) = t + D(t)` for a delay function.
    pub fn arrival_from_delay(&self) -> Result<Self, PwlError> {
        if self.kind != FunctionKind::Delay {
            return Err(PwlError::ExpectedDelay);
        }
        let pts = self.points.iter().map(|p| Breakpoint::new(p.t, p.t + p.v)).collect();
        Self::new(self.period, pts, FunctionKind::Arrival)
    }

    /// `D(t) = Arr(t) - t` for an arrival function.
    pub fn delay_from_arrival(&self) -> Result<Self, PwlError> {
        if self.kind != FunctionKind::Arrival {
            return Err(PwlError::ExpectedArrival);
        }
        let pts = self.points.iter().map(|p| Breakpoint::new(p.t, p.v - p.t)).collect();
        Self::new(self.period, pts, FunctionKind::Delay)
    }

    /// Same breakpoints, different interpretation.
    pub fn with_kind(&self, kind: FunctionKind) -> Result<Self, PwlError> {
        Self::new(self.period, self.points.clone(), kind)
    }

    /// Canonical text form: `T k` followed by `k` lines `t v`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} {}", self.period, self.points.len());
        for p in &self.points {
            let _ = writeln!(s, "{} {}", p.t, p.v);
        }
        s
    }

    pub fn from_text(text: &str, kind: FunctionKind) -> Result<Self, PwlError> {
        let mut tokens = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or(""))
            .flat_map(str::split_whitespace);
        let mut next = |what: &str| {
            tokens
                .next()
                .ok_or_else(|| PwlError::Parse(format!("missing {what}")))
        };
        let period: f64 = next("period")?
            .parse()
            .map_err(|e| PwlError::Parse(format!("period: {e}")))?;
        let k: usize = next("count")?
            .parse()
            .map_err(|e| PwlError::Parse(format!("count: {e}")))?;
        let mut pts = Vec::with_capacity(k);
        for _ in 0..k {
            let t: f64 = next("t")?.parse().map_err(|e| PwlError::Parse(format!("t: {e}")))?;
            let v: f64 = next("v")?.parse().map_err(|e| PwlError::Parse(format!("v: {e}")))?;
            pts.push(Breakpoint::new(t, v));
        }
        Self::new(period, pts, kind)
    }
}

/// Indices of breakpoints at which the slope increases (concavity-spoiling
/// breakpoints). A breakpoint at time 0 sits on the period boundary and is
/// not reported; see [`boundary_spoiler`].
pub fn split_concavity(f: &PwlFunction) -> Vec<usize> {
    let n = f.points.len();
    if n < 2 {
        return Vec::new();
    }
    (0..n)
        .filter(|&i| f.points[i].t > 0.0)
        .filter(|&i| {
            let incoming = f.leg_slope(if i == 0 { n - 1 } else { i - 1 });
            let outgoing = f.leg_slope(i);
            outgoing > incoming + TOLERANCE
        })
        .collect()
}

/// Whether the function has a slope increase at the period boundary `t = 0`.
pub fn boundary_spoiler(f: &PwlFunction) -> bool {
    let n = f.points.len();
    n >= 2 && f.points[0].t == 0.0 && f.leg_slope(0) > f.leg_slope(n - 1) + TOLERANCE
}

fn check_same_frame(f: &PwlFunction, g: &PwlFunction) -> Result<(), PwlError> {
    if (f.period - g.period).abs() > TOLERANCE {
        return Err(PwlError::PeriodMismatch(f.period, g.period));
    }
    Ok(())
}

fn check_monotone(f: &PwlFunction) -> Result<(), PwlError> {
    for leg in 0..f.len() {
        let slope = f.leg_slope(leg);
        if slope < -TOLERANCE {
            return Err(PwlError::NotMonotone { leg, slope });
        }
    }
    Ok(())
}

/// Sorts and merges times closer than the tolerance, keeping them in `[0, T)`.
fn normalize_times(mut times: Vec<f64>, period: f64) -> Vec<f64> {
    for t in times.iter_mut() {
        if *t >= period - TOLERANCE || *t < 0.0 {
            *t = (*t).rem_euclid(period);
            if *t >= period - TOLERANCE {
                *t = 0.0;
            }
        }
    }
    times.sort_by(f64::total_cmp);
    times.dedup_by(|a, b| (*a - *b).abs() <= TOLERANCE);
    times
}

/// Smallest `t` in `[0, T]` with `f(t) = y`, for non-decreasing arrival `f`
/// and `y` in `[f(0), f(0) + T]`.
fn preimage(nodes: &[Breakpoint], y: f64) -> f64 {
    let idx = nodes.partition_point(|p| p.v < y);
    if idx == 0 {
        return nodes[0].t;
    }
    if idx >= nodes.len() {
        return nodes[nodes.len() - 1].t;
    }
    let a = nodes[idx - 1];
    let b = nodes[idx];
    if b.v - a.v <= 0.0 {
        return a.t;
    }
    (a.t + (y - a.v) * (b.t - a.t) / (b.v - a.v)).clamp(a.t, b.t)
}

/// Composition `h = g ∘ f` of two non-decreasing arrival functions.
///
/// The breakpoints of `h` are the breakpoints of `f` together with the
/// preimages under `f` of the breakpoints of `g` (and their period copies).
pub fn compose_arrival(g: &PwlFunction, f: &PwlFunction) -> Result<PwlFunction, PwlError> {
    if f.kind != FunctionKind::Arrival || g.kind != FunctionKind::Arrival {
        return Err(PwlError::ExpectedArrival);
    }
    check_same_frame(f, g)?;
    check_monotone(f)?;
    check_monotone(g)?;
    let period = f.period;

    // f restricted to [0, T] as an explicit node list
    let mut nodes = Vec::with_capacity(f.len() + 2);
    nodes.push(Breakpoint::new(0.0, f.evaluate(0.0)));
    nodes.extend(f.points.iter().copied().filter(|p| p.t > 0.0));
    nodes.push(Breakpoint::new(period, f.evaluate(0.0) + period));

    let lo = nodes[0].v;
    let hi = lo + period;
    let mut times: Vec<f64> = f.points.iter().map(|p| p.t).collect();
    for b in &g.points {
        let mut k = ((lo - b.t) / period).floor();
        loop {
            let y = b.t + k * period;
            if y >= hi - TOLERANCE {
                break;
            }
            if y >= lo - TOLERANCE {
                times.push(preimage(&nodes, y));
            }
            k += 1.0;
        }
    }
    let times = normalize_times(times, period);
    let pts = times
        .into_iter()
        .map(|t| Breakpoint::new(t, g.evaluate(f.evaluate(t))))
        .collect();
    PwlFunction::new(period, pts, FunctionKind::Arrival)
}

/// Result of [`pointwise_min`] along with the number of crossing points it
/// inserted.
#[derive(Debug, Clone)]
pub struct LowerEnvelope {
    pub function: PwlFunction,
    pub crossings: usize,
}

/// Exact lower envelope of two functions of the same period and kind.
pub fn pointwise_min(f: &PwlFunction, g: &PwlFunction) -> Result<PwlFunction, PwlError> {
    lower_envelope(f, g).map(|e| e.function)
}

pub fn lower_envelope(f: &PwlFunction, g: &PwlFunction) -> Result<LowerEnvelope, PwlError> {
    check_same_frame(f, g)?;
    if f.shift() != g.shift() {
        return Err(PwlError::KindMismatch);
    }
    let period = f.period;
    let base: Vec<f64> = normalize_times(
        f.points.iter().chain(g.points.iter()).map(|p| p.t).collect(),
        period,
    );
    let mut times = base.clone();
    let mut crossings = 0;
    for (i, &t0) in base.iter().enumerate() {
        let t1 = if i + 1 < base.len() { base[i + 1] } else { base[0] + period };
        let d0 = f.evaluate(t0) - g.evaluate(t0);
        let d1 = f.evaluate(t1) - g.evaluate(t1);
        if (d0 > TOLERANCE && d1 < -TOLERANCE) || (d0 < -TOLERANCE && d1 > TOLERANCE) {
            let tc = t0 + (t1 - t0) * d0 / (d0 - d1);
            times.push(tc);
            crossings += 1;
        }
    }
    let times = normalize_times(times, period);
    let pts = times
        .into_iter()
        .map(|t| Breakpoint::new(t, f.evaluate(t).min(g.evaluate(t))))
        .collect();
    Ok(LowerEnvelope {
        function: PwlFunction::new(period, pts, f.kind)?,
        crossings,
    })
}

/// Worst-case gap between the chord and the two-tangent upper bound of a
/// concave function on `[t_s, t_f]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaeEstimate {
    /// Abscissa where the two tangent lines intersect.
    pub m: f64,
    /// Value of the upper bound at `m`.
    pub upper_at_m: f64,
    pub mae: f64,
    pub t_s: f64,
    pub t_f: f64,
}

impl MaeEstimate {
    /// Whether the upper bound needs an interior breakpoint at all.
    pub fn is_affine(&self) -> bool {
        self.mae <= 0.0 || self.m <= self.t_s || self.m >= self.t_f
    }

    /// The tangent-triangle upper bound `min(y_s, y_f)` at `t`.
    pub fn upper(&self, d_s: f64, d_f: f64, t: f64) -> f64 {
        if self.is_affine() {
            return d_s + (t - self.t_s) * (d_f - d_s) / (self.t_f - self.t_s);
        }
        if t <= self.m {
            d_s + (t - self.t_s) * (self.upper_at_m - d_s) / (self.m - self.t_s)
        } else {
            self.upper_at_m + (t - self.m) * (d_f - self.upper_at_m) / (self.t_f - self.m)
        }
    }
}

/// Closed-form maximum absolute error between the chord through
/// `(t_s, d_s), (t_f, d_f)` and the tangent lines with slopes `slope_out`
/// (right derivative at `t_s`) and `slope_in` (left derivative at `t_f`).
pub fn mae_estimate(
    t_s: f64,
    t_f: f64,
    d_s: f64,
    d_f: f64,
    slope_out: f64,
    slope_in: f64,
) -> Result<MaeEstimate, PwlError> {
    if !(t_f > t_s) {
        return Err(PwlError::InvalidInterval { t_s, t_f });
    }
    let spread = slope_out - slope_in;
    if spread < -TOLERANCE {
        return Err(PwlError::NonConcave { slope_out, slope_in });
    }
    if spread <= 1e-12 {
        return Ok(MaeEstimate {
            m: t_s,
            upper_at_m: d_s,
            mae: 0.0,
            t_s,
            t_f,
        });
    }
    let len = t_f - t_s;
    // (m - t_s)(Λ⁺ - Λ⁻) = D(t_f) - D(t_s) - Λ⁻·L, the closed form shifted to t_s
    let offset = (d_f - d_s - slope_in * len) / spread;
    let slack = TOLERANCE * (1.0 + len);
    if offset < -slack || offset > len + slack {
        return Err(PwlError::InconsistentSlopes {
            m: t_s + offset,
            t_s,
            t_f,
        });
    }
    let offset = offset.clamp(0.0, len);
    let m = t_s + offset;
    let mae = (spread * offset * (len - offset) / len).max(0.0);
    Ok(MaeEstimate {
        m,
        upper_at_m: d_s + slope_out * offset,
        mae,
        t_s,
        t_f,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn delay(period: f64, pairs: &[(f64, f64)]) -> PwlFunction {
        PwlFunction::from_pairs(period, pairs, FunctionKind::Delay).unwrap()
    }

    /// Plain linear interpolation over an explicitly unrolled point list.
    fn oracle_eval(period: f64, pairs: &[(f64, f64)], shift: f64, t: f64) -> f64 {
        let k = (t / period).floor();
        let r = t - k * period;
        let mut unrolled = Vec::new();
        let (lt, lv) = pairs[pairs.len() - 1];
        unrolled.push((lt - period, lv - shift));
        unrolled.extend_from_slice(pairs);
        unrolled.push((pairs[0].0 + period, pairs[0].1 + shift));
        for w in unrolled.windows(2) {
            let (a, b) = (w[0], w[1]);
            if r >= a.0 && r <= b.0 {
                return a.1 + (r - a.0) / (b.0 - a.0) * (b.1 - a.1) + k * shift;
            }
        }
        unreachable!()
    }

    fn random_delay(rng: &mut ChaCha8Rng, period: f64, k: usize) -> Vec<(f64, f64)> {
        let mut ts: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..period)).collect();
        ts.sort_by(f64::total_cmp);
        ts.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
        // random leg slopes in [-0.4, 0.4], then a common drift removed so the
        // wrap leg closes the period; every slope stays within [-0.8, 0.8]
        let gaps: Vec<f64> = (0..ts.len())
            .map(|i| if i + 1 < ts.len() { ts[i + 1] - ts[i] } else { ts[0] + period - ts[i] })
            .collect();
        let slopes: Vec<f64> = gaps.iter().map(|_| rng.gen_range(-0.4..0.4)).collect();
        let drift = slopes.iter().zip(&gaps).map(|(s, g)| s * g).sum::<f64>() / period;
        let mut v = rng.gen_range(0.5..1.0) * period;
        let mut pts = Vec::new();
        for i in 0..ts.len() {
            pts.push((ts[i], v));
            v += (slopes[i] - drift) * gaps[i];
        }
        pts
    }

    #[test]
    fn constant_evaluates_everywhere() {
        let f = PwlFunction::constant(10.0, 5.0, FunctionKind::Delay).unwrap();
        assert_eq!(f.evaluate(123.4), 5.0);
        assert_eq!(f.evaluate(-7.0), 5.0);
    }

    #[test]
    fn unit_slope_example() {
        let f = PwlFunction::from_pairs(4.0, &[(0.0, 1.0), (3.0, 4.0)], FunctionKind::Summary).unwrap();
        assert_eq!(f.evaluate(2.0), 3.0);
        assert_eq!(f.evaluate(3.0), 4.0);
        assert_eq!(f.evaluate(0.0), 1.0);
    }

    #[test]
    fn evaluation_matches_interpolation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let pairs = random_delay(&mut rng, 100.0, 12);
            let f = delay(100.0, &pairs);
            for _ in 0..1000 {
                let t = rng.gen_range(-300.0..300.0);
                let want = oracle_eval(100.0, &pairs, 0.0, t);
                let got = f.evaluate(t);
                assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "{got} vs {want}");
            }
        }
    }

    #[test]
    fn arrival_evaluation_shifts_per_period() {
        let d = delay(10.0, &[(0.0, 2.0), (5.0, 4.0)]);
        let a = d.arrival_from_delay().unwrap();
        for &t in &[0.0, 2.5, 7.0, 13.0, -4.0] {
            assert!((a.evaluate(t) - (t + d.evaluate(t))).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_fifo_violations() {
        let err = PwlFunction::from_pairs(4.0, &[(0.0, 1.0), (3.0, 4.0)], FunctionKind::Delay).unwrap_err();
        assert!(matches!(err, PwlError::FifoViolation { .. }));
        assert!(PwlFunction::from_pairs(4.0, &[(0.0, -1.0)], FunctionKind::Delay).is_err());
    }

    #[test]
    fn rejects_malformed_breakpoints() {
        assert!(matches!(
            PwlFunction::from_pairs(4.0, &[(1.0, 1.0), (1.0, 2.0)], FunctionKind::Summary),
            Err(PwlError::NotIncreasing(1))
        ));
        assert!(matches!(
            PwlFunction::from_pairs(4.0, &[(4.0, 1.0)], FunctionKind::Summary),
            Err(PwlError::OutOfRange { .. })
        ));
        assert!(matches!(PwlFunction::new(0.0, vec![], FunctionKind::Summary), Err(PwlError::InvalidPeriod(_))));
        assert!(matches!(PwlFunction::new(1.0, vec![], FunctionKind::Summary), Err(PwlError::Empty)));
    }

    #[test]
    fn collinear_interior_points_are_pruned() {
        let f = delay(10.0, &[(0.0, 1.0), (1.0, 2.0), (2.0, 3.0), (6.0, 1.5)]);
        assert_eq!(f.len(), 3);
        assert_eq!(f.evaluate(1.0), 2.0);
    }

    #[test]
    fn identity_composition() {
        let id = PwlFunction::identity_arrival(8.0).unwrap();
        let g = delay(8.0, &[(0.0, 1.0), (2.0, 3.0), (5.0, 1.5)]).arrival_from_delay().unwrap();
        let h = compose_arrival(&g, &id).unwrap();
        for i in 0..200 {
            let t = i as f64 * 0.07;
            assert!((h.evaluate(t) - g.evaluate(t)).abs() < 1e-12);
        }
        let h2 = compose_arrival(&id, &g).unwrap();
        for i in 0..200 {
            let t = i as f64 * 0.07;
            assert!((h2.evaluate(t) - g.evaluate(t)).abs() < 1e-12);
        }
    }

    #[test]
    fn composition_example() {
        // D(t) = t + 1 on [0,3], returning to 1 at T = 8 with slope -0.6
        let f = delay(8.0, &[(0.0, 1.0), (3.0, 4.0)]).arrival_from_delay().unwrap();
        let g = PwlFunction::constant(8.0, 1.0, FunctionKind::Delay)
            .unwrap()
            .arrival_from_delay()
            .unwrap();
        let h = compose_arrival(&g, &f).unwrap();
        assert_eq!(h.evaluate(0.0), 2.0);
        assert_eq!(h.evaluate(3.0), 8.0);
        assert!((h.evaluate(1.5) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn composition_rejects_non_monotone() {
        let bad = PwlFunction::from_pairs(4.0, &[(0.0, 0.0), (2.0, -1.0)], FunctionKind::Arrival).unwrap();
        let id = PwlFunction::identity_arrival(4.0).unwrap();
        assert!(matches!(compose_arrival(&id, &bad), Err(PwlError::NotMonotone { .. })));
        assert!(matches!(compose_arrival(&bad, &id), Err(PwlError::NotMonotone { .. })));
        let d = PwlFunction::constant(4.0, 1.0, FunctionKind::Delay).unwrap();
        assert!(matches!(compose_arrival(&d, &id), Err(PwlError::ExpectedArrival)));
    }

    #[test]
    fn random_composition_matches_pointwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..30 {
            let f = delay(50.0, &random_delay(&mut rng, 50.0, 8)).arrival_from_delay().unwrap();
            let g = delay(50.0, &random_delay(&mut rng, 50.0, 8)).arrival_from_delay().unwrap();
            let h = compose_arrival(&g, &f).unwrap();
            assert!(h.is_non_decreasing());
            for i in 0..1000 {
                let t = i as f64 * 0.05;
                let want = g.evaluate(f.evaluate(t));
                assert!((h.evaluate(t) - want).abs() <= 1e-10 * want.abs().max(1.0));
            }
        }
    }

    #[test]
    fn min_is_idempotent() {
        let f = delay(10.0, &[(0.0, 1.0), (3.0, 3.0), (7.0, 2.0)]);
        assert_eq!(pointwise_min(&f, &f).unwrap(), f);
    }

    #[test]
    fn min_with_single_crossing() {
        let f = PwlFunction::constant(10.0, 3.0, FunctionKind::Delay).unwrap();
        let g = delay(10.0, &[(0.0, 2.0), (5.0, 4.5)]);
        let env = lower_envelope(&f, &g).unwrap();
        // g crosses 3 going up at t = 2 and coming down at 5 + 1.5/0.5 = 8
        assert_eq!(env.crossings, 2);
        assert!((env.function.evaluate(2.0) - 3.0).abs() < 1e-12);
        assert!((env.function.evaluate(8.0) - 3.0).abs() < 1e-12);
        let single = delay(10.0, &[(0.0, 2.0), (6.0, 4.0), (8.0, 2.5)]);
        let h = PwlFunction::constant(10.0, 3.0, FunctionKind::Delay).unwrap();
        let e2 = lower_envelope(&h, &single).unwrap();
        assert_eq!(e2.crossings, 2);
    }

    #[test]
    fn random_envelope_matches_grid_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..30 {
            let f = delay(40.0, &random_delay(&mut rng, 40.0, 7));
            let g = delay(40.0, &random_delay(&mut rng, 40.0, 7));
            let env = lower_envelope(&f, &g).unwrap();
            assert!(env.function.len() <= f.len() + g.len() + env.crossings);
            for i in 0..4000 {
                let t = i as f64 * 0.01;
                let want = f.evaluate(t).min(g.evaluate(t));
                assert!((env.function.evaluate(t) - want).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn mae_affine_is_zero() {
        let e = mae_estimate(0.0, 4.0, 1.0, 3.0, 0.5, 0.5).unwrap();
        assert_eq!(e.mae, 0.0);
        assert_eq!(e.m, 0.0);
        assert!(e.is_affine());
    }

    #[test]
    fn mae_worked_example() {
        let e = mae_estimate(0.0, 4.0, 10.0, 10.0, 1.0, -0.5).unwrap();
        assert!((e.m - 4.0 / 3.0).abs() < 1e-12);
        assert!((e.mae - 4.0 / 3.0).abs() < 1e-12);
        assert!((e.upper_at_m - (10.0 + 4.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn mae_rejects_convex_segments() {
        assert!(matches!(
            mae_estimate(0.0, 1.0, 1.0, 1.0, -0.5, 0.5),
            Err(PwlError::NonConcave { .. })
        ));
        assert!(matches!(
            mae_estimate(1.0, 1.0, 1.0, 1.0, 0.5, 0.0),
            Err(PwlError::InvalidInterval { .. })
        ));
    }

    #[test]
    fn mae_symmetric_case_is_tight() {
        // symmetric slopes put m at the midpoint; the quarter bound is attained
        let e = mae_estimate(2.0, 6.0, 5.0, 5.0, 0.5, -0.5).unwrap();
        assert!((e.m - 4.0).abs() < 1e-12);
        assert!((e.mae - 4.0 * 1.0 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn concavity_split_examples() {
        let bell = delay(24.0, &[(0.0, 10.0), (6.0, 13.0), (12.0, 14.0), (18.0, 12.5)]);
        assert!(split_concavity(&bell).is_empty());
        assert!(boundary_spoiler(&bell));
        // slopes 1, -0.5, 2, then the wrap leg
        let f = delay(10.0, &[(0.0, 1.0), (2.0, 3.0), (4.0, 2.0), (5.0, 4.0)]);
        assert_eq!(split_concavity(&f), vec![2]);
    }

    #[test]
    fn concavity_split_matches_slope_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let pairs = random_delay(&mut rng, 30.0, 9);
            let f = delay(30.0, &pairs);
            let pts = f.points();
            let n = pts.len();
            let mut want = Vec::new();
            for i in 0..n {
                if pts[i].t == 0.0 || n < 2 {
                    continue;
                }
                let prev = if i == 0 { n - 1 } else { i - 1 };
                let next_pt = if i + 1 < n { pts[i + 1] } else { Breakpoint::new(pts[0].t + 30.0, pts[0].v) };
                let prev_pt = if i == 0 { Breakpoint::new(pts[prev].t - 30.0, pts[prev].v) } else { pts[prev] };
                let s_in = (pts[i].v - prev_pt.v) / (pts[i].t - prev_pt.t);
                let s_out = (next_pt.v - pts[i].v) / (next_pt.t - pts[i].t);
                if s_out > s_in + TOLERANCE {
                    want.push(i);
                }
            }
            assert_eq!(split_concavity(&f), want);
        }
    }

    #[test]
    fn one_sided_slopes_snap_to_breakpoints() {
        let f = delay(10.0, &[(0.0, 1.0), (4.0, 3.0), (6.0, 2.0)]);
        assert_eq!(f.right_slope(4.0), -0.5);
        assert_eq!(f.left_slope(4.0), 0.5);
        assert_eq!(f.right_slope(4.0 - 1e-11), -0.5);
        assert_eq!(f.left_slope(4.0 + 1e-11), 0.5);
        assert_eq!(f.right_slope(10.0 - 1e-12), 0.5);
        assert!((f.left_slope(0.0) + 0.25).abs() < 1e-15);
        assert_eq!(f.right_slope(5.0), -0.5);
    }

    #[test]
    fn text_round_trip_is_exact() {
        let f = delay(86400.0, &[(0.0, 0.1 + 0.2), (1234.5678901234, 1.0 / 3.0), (50000.0, 2.0_f64.sqrt())]);
        let g = PwlFunction::from_text(&f.to_text(), FunctionKind::Delay).unwrap();
        assert_eq!(f, g);
    }

    proptest! {
        #[test]
        fn periodic_extension(seed in 0u64..1000, t in -1000.0f64..1000.0, k in -5i32..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = delay(37.0, &random_delay(&mut rng, 37.0, 6));
            let a = f.evaluate(t);
            let b = f.evaluate(t + k as f64 * 37.0);
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0) * (1.0 + k.abs() as f64));
        }

        #[test]
        fn composition_preserves_fifo(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = delay(20.0, &random_delay(&mut rng, 20.0, 6)).arrival_from_delay().unwrap();
            let g = delay(20.0, &random_delay(&mut rng, 20.0, 6)).arrival_from_delay().unwrap();
            let h = compose_arrival(&g, &f).unwrap();
            let mut prev = f64::NEG_INFINITY;
            for i in 0..10_000 {
                let v = h.evaluate(i as f64 * 0.002);
                prop_assert!(v >= prev - 1e-12);
                prev = v;
            }
        }

        #[test]
        fn arrival_monotone_iff_slopes_at_least_minus_one(s in -1.5f64..1.0) {
            // single leg of slope s from (0, 5); wrap leg must come back down
            let pairs = [(0.0, 5.0), (4.0, 5.0 + 4.0 * s)];
            if let Ok(f) = PwlFunction::from_pairs(20.0, &pairs, FunctionKind::Summary) {
                let arr = PwlFunction::new(20.0, f.points().iter().map(|p| Breakpoint::new(p.t, p.t + p.v)).collect(), FunctionKind::Arrival).unwrap();
                let all_ok = f.min_slope() >= -1.0 - TOLERANCE;
                prop_assert_eq!(arr.is_non_decreasing(), all_ok);
            }
        }

        #[test]
        fn mae_matches_dense_grid(
            len in 0.1f64..50.0,
            d_s in 1.0f64..100.0,
            s_out in -0.9f64..3.0,
            frac_in in 0.0f64..1.0,
            split in 0.0f64..1.0,
        ) {
            // construct consistent data: pick m inside, then D(t_f) from the two tangents
            let s_in = -0.95 + frac_in * (s_out + 0.95);
            let m_off = split * len;
            let apex = d_s + s_out * m_off;
            let d_f = apex + s_in * (len - m_off);
            let e = mae_estimate(0.0, len, d_s, d_f, s_out, s_in).unwrap();
            let steps = 20_000;
            let mut best = 0.0f64;
            for i in 0..=steps {
                let t = len * i as f64 / steps as f64;
                let ys = d_s + s_out * t;
                let yf = d_f + s_in * (t - len);
                let chord = d_s + (d_f - d_s) * t / len;
                best = best.max(ys.min(yf) - chord);
            }
            prop_assert!(e.mae + 1e-9 >= best);
            prop_assert!(e.mae - best <= (s_out - s_in) * len / steps as f64 + 1e-9);
            prop_assert!(e.mae <= len * (s_out - s_in) / 4.0 + 1e-9);
        }
    }
}
