//! Query algorithms over built summaries: the one-ball constant approximation,
//! the recursive algorithm with budget `r`, stretch arithmetic and path
//! reconstruction from the per-leg parents.

use std::collections::{HashMap, HashSet};

use rayon::prelude::*;
use thiserror::Error;

use crate::engine::{evaluate_path, BallResult, BallStop, Counters, TddWorkspace, TIE};
use crate::network::{TdInstance, NO_ARC};
use crate::summaries::OracleSummaries;

#[derive(Debug, Error, PartialEq)]
pub enum QueryError {
    #[error("vertex {0} out of range")]
    VertexOutOfRange(u32),
    #[error("stretch target {sigma} must exceed epsilon {epsilon}")]
    Unattainable { sigma: f64, epsilon: f64 },
    #[error("invalid stretch parameters: epsilon {epsilon}, psi {psi}")]
    InvalidParameters { epsilon: f64, psi: f64 },
    #[error("answer has no path to reconstruct")]
    NothingToReconstruct,
    #[error("no parent recorded for vertex {vertex}; partial path {partial:?}")]
    MissingParent { vertex: u32, partial: Vec<u32> },
    #[error("parent chain revisits vertex {vertex}; partial path {partial:?}")]
    Cycle { vertex: u32, partial: Vec<u32> },
    #[error("no arc {from} -> {to}; partial path {partial:?}")]
    NoArc { from: u32, to: u32, partial: Vec<u32> },
    #[error("ball replay from {vertex} did not reach {target}")]
    Replay { vertex: u32, target: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnswerKind {
    /// The ball around the origin contains the destination.
    Exact,
    /// The origin is a landmark.
    LandmarkHit,
    /// Via the landmark closing the ball of the last chain vertex.
    ViaLandmark,
    /// A guessed vertex is itself a landmark.
    GuessedLandmark,
    /// The destination was settled in the ball of a guessed vertex.
    GuessedDestination,
    Unreachable,
}

impl AnswerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AnswerKind::Exact => "exact",
            AnswerKind::LandmarkHit => "landmark-hit",
            AnswerKind::ViaLandmark => "via-landmark",
            AnswerKind::GuessedLandmark => "guessed-landmark",
            AnswerKind::GuessedDestination => "guessed-destination",
            AnswerKind::Unreachable => "unreachable",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            AnswerKind::Exact,
            AnswerKind::LandmarkHit,
            AnswerKind::ViaLandmark,
            AnswerKind::GuessedLandmark,
            AnswerKind::GuessedDestination,
            AnswerKind::Unreachable,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
    }

    /// Answers whose whole path comes from exact searches.
    pub fn is_exact_path(self) -> bool {
        matches!(self, AnswerKind::Exact | AnswerKind::GuessedDestination)
    }
}

/// One ball center on the chain of the winning candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainStep {
    pub vertex: u32,
    /// Departure time from `vertex`.
    pub time: f64,
    /// Radius of the ball grown here; zero if none was grown.
    pub radius: f64,
    pub ball_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryAnswer {
    pub origin: u32,
    pub destination: u32,
    pub departure: f64,
    pub value: f64,
    pub kind: AnswerKind,
    /// Centers `w_0 = o, w_1, …` of the winning candidate.
    pub chain: Vec<ChainStep>,
    /// Landmark whose summary completes the answer, with the departure time used.
    pub landmark: Option<(u32, f64)>,
    /// Radius of the ball around the origin.
    pub origin_radius: f64,
    pub balls_grown: usize,
    pub counters: Counters,
}

impl QueryAnswer {
    fn trivial(origin: u32, destination: u32, departure: f64, value: f64, kind: AnswerKind) -> Self {
        Self {
            origin,
            destination,
            departure,
            value,
            kind,
            chain: vec![ChainStep { vertex: origin, time: departure, radius: 0.0, ball_size: 0 }],
            landmark: None,
            origin_radius: 0.0,
            balls_grown: 0,
            counters: Counters::default(),
        }
    }

    pub fn depth(&self) -> usize {
        self.chain.len().saturating_sub(1)
    }

    pub fn ball_sizes(&self) -> Vec<usize> {
        self.chain.iter().map(|c| c.ball_size).collect()
    }
}

fn bump(x: f64) -> f64 {
    if x.is_finite() {
        f64::from_bits(if x >= 0.0 { x.to_bits() + 1 } else { x.to_bits() - 1 })
    } else {
        x
    }
}

/// Stretch guaranteed with budget `r`; `ε = 0` takes the limit `ψ/(r+1)`.
pub fn sigma_for_budget(epsilon: f64, psi: f64, r: usize) -> f64 {
    let k = (r + 1) as f64;
    if epsilon == 0.0 {
        return psi / k;
    }
    epsilon + epsilon / (k * (epsilon / psi).ln_1p()).exp_m1()
}

/// Smallest budget whose guaranteed stretch does not exceed `sigma`.
pub fn budget_for_stretch(epsilon: f64, psi: f64, sigma: f64) -> Result<usize, QueryError> {
    if !(epsilon >= 0.0 && psi > 0.0 && epsilon.is_finite() && psi.is_finite()) {
        return Err(QueryError::InvalidParameters { epsilon, psi });
    }
    let delta = sigma - epsilon;
    if !(delta > 0.0) {
        return Err(QueryError::Unattainable { sigma, epsilon });
    }
    let ratio = if epsilon == 0.0 { psi / delta } else { (epsilon / delta).ln_1p() / (epsilon / psi).ln_1p() };
    let mut r = (ratio.ceil() - 1.0).max(0.0) as usize;
    while sigma_for_budget(epsilon, psi, r) > sigma {
        r += 1;
    }
    while r > 0 && sigma_for_budget(epsilon, psi, r - 1) <= sigma {
        r -= 1;
    }
    Ok(r)
}

/// The σ/r pair of the recursive algorithm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StretchBudget {
    pub epsilon: f64,
    pub psi: f64,
    /// Guaranteed stretch beyond 1, rounded up.
    pub sigma: f64,
    pub r: usize,
}

impl StretchBudget {
    pub fn from_budget(epsilon: f64, psi: f64, r: usize) -> Result<Self, QueryError> {
        if !(epsilon >= 0.0 && psi > 0.0 && epsilon.is_finite() && psi.is_finite()) {
            return Err(QueryError::InvalidParameters { epsilon, psi });
        }
        Ok(Self { epsilon, psi, sigma: bump(sigma_for_budget(epsilon, psi, r)), r })
    }

    pub fn from_stretch(epsilon: f64, psi: f64, sigma: f64) -> Result<Self, QueryError> {
        let r = budget_for_stretch(epsilon, psi, sigma)?;
        Self::from_budget(epsilon, psi, r)
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    vertex: u32,
    time: f64,
    parent: u32,
    radius: f64,
    ball_size: usize,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    value: f64,
    kind: AnswerKind,
    node: u32,
    landmark: Option<(u32, f64)>,
}

/// Per-thread query state.
pub struct QueryEngine<'a> {
    g: &'a TdInstance,
    oracle: &'a OracleSummaries,
    ws: TddWorkspace,
    nodes: Vec<Node>,
    seen: HashMap<(u32, u64), usize>,
    best: Option<Candidate>,
    balls: usize,
    counters: Counters,
}

impl<'a> QueryEngine<'a> {
    pub fn new(g: &'a TdInstance, oracle: &'a OracleSummaries) -> Self {
        Self {
            g,
            oracle,
            ws: TddWorkspace::new(g.n()),
            nodes: Vec::new(),
            seen: HashMap::new(),
            best: None,
            balls: 0,
            counters: Counters::default(),
        }
    }

    fn check(&self, v: u32) -> Result<(), QueryError> {
        if (v as usize) < self.g.n() {
            Ok(())
        } else {
            Err(QueryError::VertexOutOfRange(v))
        }
    }

    fn delta(&self, landmark: u32, d: u32, t: f64) -> f64 {
        self.oracle.shard(landmark).map_or(f64::INFINITY, |s| s.lookup(d, t).value)
    }

    fn ball(&mut self, w: u32, t: f64, d: u32) -> BallResult {
        let b = self.ws.grow_ball(self.g, &self.oracle.landmarks.is_landmark, w, t, Some(d));
        self.balls += 1;
        self.counters += b.counters;
        b
    }

    /// One ball around the origin, then the summary of the landmark that closed it.
    pub fn fca(&mut self, o: u32, d: u32, t_o: f64) -> Result<QueryAnswer, QueryError> {
        self.check(o)?;
        self.check(d)?;
        if o == d {
            return Ok(QueryAnswer::trivial(o, d, t_o, 0.0, AnswerKind::Exact));
        }
        if self.oracle.is_landmark(o) {
            let mut a = QueryAnswer::trivial(o, d, t_o, self.delta(o, d, t_o), AnswerKind::LandmarkHit);
            a.landmark = Some((o, t_o));
            return Ok(a);
        }
        self.balls = 0;
        self.counters = Counters::default();
        let b = self.ball(o, t_o, d);
        let step = ChainStep { vertex: o, time: t_o, radius: b.radius, ball_size: b.len() };
        let (value, kind, landmark) = match b.found {
            BallStop::Destination(_) => (b.radius, AnswerKind::Exact, None),
            BallStop::Landmark(l) => {
                let tl = t_o + b.radius;
                (b.radius + self.delta(l, d, tl), AnswerKind::ViaLandmark, Some((l, tl)))
            }
            BallStop::Exhausted => (f64::INFINITY, AnswerKind::Unreachable, None),
        };
        Ok(QueryAnswer {
            origin: o,
            destination: d,
            departure: t_o,
            value,
            kind,
            chain: vec![step],
            landmark,
            origin_radius: b.radius,
            balls_grown: self.balls,
            counters: self.counters,
        })
    }

    fn offer(&mut self, c: Candidate) {
        if self.best.map_or(true, |b| c.value < b.value) {
            self.best = Some(c);
        }
    }

    fn bound(&self) -> f64 {
        self.best.map_or(f64::INFINITY, |b| b.value)
    }

    fn explore(&mut self, node: u32, d: u32, t_o: f64, left: usize) {
        let Node { vertex: w, time: t, .. } = self.nodes[node as usize];
        let b = self.ball(w, t, d);
        self.nodes[node as usize].radius = b.radius;
        self.nodes[node as usize].ball_size = b.len();
        let elapsed = t - t_o;
        match b.found {
            BallStop::Destination(_) => {
                let kind = if node == 0 { AnswerKind::Exact } else { AnswerKind::GuessedDestination };
                self.offer(Candidate { value: elapsed + b.radius, kind, node, landmark: None });
                return;
            }
            BallStop::Landmark(l) => {
                let tl = t + b.radius;
                let value = elapsed + b.radius + self.delta(l, d, tl);
                self.offer(Candidate { value, kind: AnswerKind::ViaLandmark, node, landmark: Some((l, tl)) });
            }
            BallStop::Exhausted => return,
        }
        if left == 0 {
            return;
        }
        let mut frontier: Vec<(u32, f64)> = b.boundary.iter().map(|l| (l.vertex, l.arrival)).collect();
        frontier.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));
        for (x, tx) in frontier {
            if tx - t_o >= self.bound() {
                // sorted by arrival: nothing later can improve
                break;
            }
            let key = (x, tx.to_bits());
            if self.seen.get(&key).is_some_and(|&had| had >= left - 1) {
                continue;
            }
            self.seen.insert(key, left - 1);
            let child = self.nodes.len() as u32;
            self.nodes.push(Node { vertex: x, time: tx, parent: node, radius: 0.0, ball_size: 0 });
            if self.oracle.is_landmark(x) {
                let value = tx - t_o + self.delta(x, d, tx);
                self.offer(Candidate { value, kind: AnswerKind::GuessedLandmark, node: child, landmark: Some((x, tx)) });
            } else {
                self.explore(child, d, t_o, left - 1);
            }
        }
    }

    /// Recursive query with budget `r`; `r = 0` is the one-ball answer.
    pub fn rqa(&mut self, o: u32, d: u32, t_o: f64, r: usize) -> Result<QueryAnswer, QueryError> {
        self.check(o)?;
        self.check(d)?;
        if o == d || self.oracle.is_landmark(o) {
            return self.fca(o, d, t_o);
        }
        self.nodes.clear();
        self.seen.clear();
        self.best = None;
        self.balls = 0;
        self.counters = Counters::default();
        self.nodes.push(Node { vertex: o, time: t_o, parent: u32::MAX, radius: 0.0, ball_size: 0 });
        self.explore(0, d, t_o, r);
        let origin_radius = self.nodes[0].radius;
        let Some(best) = self.best else {
            let mut a = QueryAnswer::trivial(o, d, t_o, f64::INFINITY, AnswerKind::Unreachable);
            a.chain[0].radius = origin_radius;
            a.chain[0].ball_size = self.nodes[0].ball_size;
            a.origin_radius = origin_radius;
            a.balls_grown = self.balls;
            a.counters = self.counters;
            return Ok(a);
        };
        let mut chain = Vec::new();
        let mut i = best.node;
        while i != u32::MAX {
            let n = self.nodes[i as usize];
            chain.push(ChainStep { vertex: n.vertex, time: n.time, radius: n.radius, ball_size: n.ball_size });
            i = n.parent;
        }
        chain.reverse();
        Ok(QueryAnswer {
            origin: o,
            destination: d,
            departure: t_o,
            value: best.value,
            kind: best.kind,
            chain,
            landmark: best.landmark,
            origin_radius,
            balls_grown: self.balls,
            counters: self.counters,
        })
    }

    /// Follows the exact shortest path as the guess at every level and records
    /// radii and candidate values; used to check the radii-growth properties.
    pub fn trace(&mut self, o: u32, d: u32, t_o: f64, r: usize) -> Result<Trace, QueryError> {
        self.check(o)?;
        self.check(d)?;
        let tree = self.ws.one_to_all(self.g, o, t_o);
        let exact = tree.travel_time(d);
        let mut trace = Trace { exact, radii: Vec::new(), candidates: Vec::new(), end: TraceEnd::BudgetExhausted };
        if !exact.is_finite() {
            trace.end = TraceEnd::Unreachable;
            return Ok(trace);
        }
        let path = tree.path_arcs(self.g, d).expect("reachable destination has a tree path");
        let mut sp = vec![o];
        sp.extend(path.iter().map(|&a| self.g.head(a)));
        if self.oracle.is_landmark(o) {
            trace.candidates.push(self.delta(o, d, t_o));
            trace.end = TraceEnd::Landmark;
            return Ok(trace);
        }
        let (mut w, mut t, mut pos) = (o, t_o, 0usize);
        for k in 0..=r {
            let b = self.ball(w, t, d);
            match b.found {
                BallStop::Destination(_) => {
                    trace.candidates.push(t - t_o + b.radius);
                    trace.end = TraceEnd::Destination;
                    return Ok(trace);
                }
                BallStop::Landmark(l) => {
                    trace.radii.push(b.radius);
                    trace.candidates.push(t - t_o + b.radius + self.delta(l, d, t + b.radius));
                }
                BallStop::Exhausted => unreachable!("destination is reachable"),
            }
            if k == r {
                break;
            }
            let inside: HashSet<u32> = b.settled.iter().map(|l| l.vertex).collect();
            let next = (pos + 1..sp.len()).find(|&i| !inside.contains(&sp[i])).expect("destination lies outside the ball");
            let Some(label) = b.boundary.iter().find(|l| l.vertex == sp[next]) else {
                // the exact path leaves through the stopping landmark, whose arcs were never relaxed
                debug_assert!(matches!(b.found, BallStop::Landmark(l) if l == sp[next - 1]));
                trace.end = TraceEnd::Landmark;
                return Ok(trace);
            };
            pos = next;
            w = sp[next];
            t = label.arrival;
            if self.oracle.is_landmark(w) {
                trace.candidates.push(t - t_o + self.delta(w, d, t));
                trace.end = TraceEnd::Landmark;
                return Ok(trace);
            }
        }
        Ok(trace)
    }

    /// Rebuilds an arc sequence for an answer and evaluates it forward.
    pub fn reconstruct(&mut self, answer: &QueryAnswer) -> Result<Reconstruction, QueryError> {
        if !answer.value.is_finite() {
            return Err(QueryError::NothingToReconstruct);
        }
        let g = self.g;
        let mut arcs = Vec::new();
        // exact prefix: replay the ball of each chain vertex and extract the path to the next one
        for pair in answer.chain.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let ball = self.ws.grow_ball(g, &self.oracle.landmarks.is_landmark, a.vertex, a.time, Some(answer.destination));
            arcs.extend(boundary_path(g, &ball, b.vertex).ok_or(QueryError::Replay { vertex: a.vertex, target: b.vertex })?);
        }
        let last = *answer.chain.last().expect("chain is never empty");
        let d = answer.destination;
        match answer.kind {
            AnswerKind::Exact | AnswerKind::GuessedDestination if last.vertex != d => {
                let ball = self.ws.grow_ball(g, &self.oracle.landmarks.is_landmark, last.vertex, last.time, Some(d));
                arcs.extend(ball.path_arcs(g, d).ok_or(QueryError::Replay { vertex: last.vertex, target: d })?);
            }
            AnswerKind::ViaLandmark => {
                let (l, _) = answer.landmark.expect("via-landmark answers name a landmark");
                let ball = self.ws.grow_ball(g, &self.oracle.landmarks.is_landmark, last.vertex, last.time, Some(d));
                arcs.extend(ball.path_arcs(g, l).ok_or(QueryError::Replay { vertex: last.vertex, target: l })?);
            }
            _ => {}
        }
        if let Some((l, tl)) = answer.landmark {
            let t_here = evaluate_path(g, &arcs, answer.departure);
            let suffix = self.suffix(l, d, tl, t_here, &arcs)?;
            arcs.extend(suffix);
        }
        let arrival = evaluate_path(g, &arcs, answer.departure);
        let travel_time = arrival - answer.departure;
        Ok(Reconstruction { arcs, travel_time, gap: travel_time - answer.value })
    }

    /// Walks parents back from `d` at landmark departure `tl`, then picks the
    /// fastest parallel arc for each hop at the forward time. The stored leg
    /// parent is kept when its summary estimate does not exceed `Δ[ℓ,v](tl)`;
    /// otherwise the in-neighbour with the smallest estimate is taken.
    fn suffix(&self, l: u32, d: u32, tl: f64, t_start: f64, prefix: &[u32]) -> Result<Vec<u32>, QueryError> {
        let g = self.g;
        let shard = self.oracle.shard(l).ok_or(QueryError::NothingToReconstruct)?;
        let at_landmark = |u: u32| if u == l { 0.0 } else { shard.lookup(u, tl).value };
        // travel time from l to v when entering v through arc a
        let estimate = |a: u32| {
            let du = at_landmark(g.tail(a));
            du + g.delay(a).evaluate(tl + du)
        };
        let mut walk = vec![d];
        let mut seen = HashSet::from([d]);
        let mut v = d;
        while v != l {
            let here = shard.lookup(v, tl);
            let stored = here.parent.filter(|&p| {
                !seen.contains(&p) && g.in_arcs(v).iter().any(|&a| g.tail(a) == p && estimate(a) <= here.value + TIE * (1.0 + here.value))
            });
            let p = match stored {
                Some(p) => p,
                None => {
                    let best = g
                        .in_arcs(v)
                        .iter()
                        .copied()
                        .filter(|&a| !seen.contains(&g.tail(a)) && at_landmark(g.tail(a)).is_finite())
                        .min_by(|&a, &b| estimate(a).total_cmp(&estimate(b)));
                    match best {
                        Some(a) => g.tail(a),
                        None if here.parent.is_some_and(|p| seen.contains(&p)) => {
                            return Err(QueryError::Cycle { vertex: here.parent.unwrap_or(v), partial: prefix.to_vec() });
                        }
                        None => return Err(QueryError::MissingParent { vertex: v, partial: prefix.to_vec() }),
                    }
                }
            };
            seen.insert(p);
            walk.push(p);
            v = p;
        }
        walk.reverse();
        let mut out = Vec::with_capacity(walk.len());
        let mut t = t_start;
        for hop in walk.windows(2) {
            let (p, v) = (hop[0], hop[1]);
            let best = g
                .out_arcs(p)
                .iter()
                .copied()
                .filter(|&a| g.head(a) == v)
                .min_by(|&a, &b| g.delay(a).evaluate(t).total_cmp(&g.delay(b).evaluate(t)));
            let Some(a) = best else {
                let mut partial = prefix.to_vec();
                partial.extend(&out);
                return Err(QueryError::NoArc { from: p, to: v, partial });
            };
            t += g.delay(a).evaluate(t);
            out.push(a);
        }
        Ok(out)
    }
}

/// Path from the ball center to a settled or boundary vertex.
fn boundary_path(g: &TdInstance, ball: &BallResult, v: u32) -> Option<Vec<u32>> {
    if let Some(p) = ball.path_arcs(g, v) {
        return Some(p);
    }
    let l = ball.boundary.iter().find(|l| l.vertex == v)?;
    if l.parent_arc == NO_ARC {
        return None;
    }
    let mut p = ball.path_arcs(g, g.tail(l.parent_arc))?;
    p.push(l.parent_arc);
    Some(p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub arcs: Vec<u32>,
    /// Forward-evaluated travel time of `arcs`.
    pub travel_time: f64,
    /// `travel_time − answer.value`.
    pub gap: f64,
}

impl Reconstruction {
    /// Whether consecutive arcs connect `o` to `d`.
    pub fn connects(&self, g: &TdInstance, o: u32, d: u32) -> bool {
        let mut at = o;
        for &a in &self.arcs {
            if g.tail(a) != at {
                return false;
            }
            at = g.head(a);
        }
        at == d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceEnd {
    Destination,
    Landmark,
    BudgetExhausted,
    Unreachable,
}

/// Radii and candidates along the exact shortest path.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub exact: f64,
    pub radii: Vec<f64>,
    pub candidates: Vec<f64>,
    pub end: TraceEnd,
}

impl Trace {
    pub fn best(&self) -> f64 {
        self.candidates.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// A query `o d t_o`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Query {
    pub origin: u32,
    pub destination: u32,
    pub departure: f64,
}

/// Answers a batch in parallel; results come back in input order.
pub fn answer_batch(g: &TdInstance, oracle: &OracleSummaries, queries: &[Query], budget: usize) -> Vec<Result<QueryAnswer, QueryError>> {
    queries
        .par_iter()
        .map_init(
            || QueryEngine::new(g, oracle),
            |e, q| e.rqa(q.origin, q.destination, q.departure, budget),
        )
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::ArcRecord;
    use crate::pwl::{FunctionKind, PwlFunction};
    use crate::summaries::{build_with_landmarks, LandmarkSet, OracleConfig};

    fn c(v: f64) -> PwlFunction {
        PwlFunction::constant(100.0, v, FunctionKind::Delay).unwrap()
    }

    /// Path 0 - 1 - 2 - 3 - 4 in both directions, unit delays; landmark at 4.
    fn line() -> (TdInstance, OracleSummaries) {
        let mut arcs = Vec::new();
        for v in 0..4u32 {
            arcs.push(ArcRecord::new(v, v + 1, c(1.0)));
            arcs.push(ArcRecord::new(v + 1, v, c(1.0)));
        }
        let g = TdInstance::new(5, 100.0, arcs).unwrap();
        let o = build_with_landmarks(&g, &OracleConfig::new(0.1, 1.0), LandmarkSet::from_ids(5, vec![2])).unwrap();
        (g, o)
    }

    #[test]
    fn sigma_examples() {
        let s = sigma_for_budget(0.1, 4.0, 1);
        assert!((s - 2.0753).abs() < 1e-4, "{s}");
        assert!((sigma_for_budget(0.1, 4.0, 0) - 4.1).abs() < 1e-12);
        for r in 0..30 {
            assert!(sigma_for_budget(0.1, 4.0, r + 1) < sigma_for_budget(0.1, 4.0, r));
            assert!(sigma_for_budget(0.1, 4.0, r) > 0.1);
        }
    }

    #[test]
    fn budget_round_trip() {
        for r in 0..=10 {
            let s = sigma_for_budget(0.1, 4.0, r);
            assert!(budget_for_stretch(0.1, 4.0, s).unwrap() <= r);
            let b = StretchBudget::from_budget(0.1, 4.0, r).unwrap();
            assert!(b.sigma >= s);
        }
        assert!(matches!(budget_for_stretch(0.1, 4.0, 0.1), Err(QueryError::Unattainable { .. })));
        // static undirected regime
        for t in 1..40 {
            let delta = 2.0 / (t as f64 + 1.0);
            assert!(budget_for_stretch(0.0, 2.0, delta).unwrap() <= t);
        }
    }

    #[test]
    fn fca_cases() {
        let (g, o) = line();
        let mut e = QueryEngine::new(&g, &o);
        let a = e.fca(3, 3, 5.0).unwrap();
        assert_eq!((a.value, a.kind), (0.0, AnswerKind::Exact));
        let a = e.fca(0, 1, 5.0).unwrap();
        assert_eq!((a.value, a.kind), (1.0, AnswerKind::Exact));
        let a = e.fca(0, 4, 5.0).unwrap();
        assert_eq!(a.kind, AnswerKind::ViaLandmark);
        assert!((a.value - 4.0).abs() < 1e-9);
        assert_eq!(a.origin_radius, 2.0);
        let a = e.fca(2, 0, 5.0).unwrap();
        assert_eq!(a.kind, AnswerKind::LandmarkHit);
        assert!(matches!(e.fca(9, 0, 0.0), Err(QueryError::VertexOutOfRange(9))));
    }

    #[test]
    fn rqa_zero_matches_fca() {
        let (g, o) = line();
        let mut e = QueryEngine::new(&g, &o);
        for s in 0..5 {
            for d in 0..5 {
                let f = e.fca(s, d, 3.0).unwrap();
                let r0 = e.rqa(s, d, 3.0, 0).unwrap();
                assert_eq!(f.value, r0.value);
                assert_eq!(f.kind, r0.kind);
                let r1 = e.rqa(s, d, 3.0, 1).unwrap();
                assert!(r1.value <= r0.value);
            }
        }
    }

    #[test]
    fn detour_via_landmark_is_repaired_by_guessing() {
        // 0 -> 1 -> 2 is short; landmark 3 hangs off 0 with a long way to 2
        let arcs = vec![
            ArcRecord::new(0, 1, c(2.0)),
            ArcRecord::new(1, 2, c(2.0)),
            ArcRecord::new(0, 3, c(1.0)),
            ArcRecord::new(3, 2, c(20.0)),
            ArcRecord::new(2, 0, c(1.0)),
        ];
        let g = TdInstance::new(4, 100.0, arcs).unwrap();
        let o = build_with_landmarks(&g, &OracleConfig::new(0.1, 1.0), LandmarkSet::from_ids(4, vec![3])).unwrap();
        let mut e = QueryEngine::new(&g, &o);
        let f = e.fca(0, 2, 0.0).unwrap();
        assert_eq!(f.kind, AnswerKind::ViaLandmark);
        assert!((f.value - 21.0).abs() < 1e-9);
        let r = e.rqa(0, 2, 0.0, 1).unwrap();
        assert_eq!(r.kind, AnswerKind::GuessedDestination);
        assert!((r.value - 4.0).abs() < 1e-9);
        assert_eq!(r.depth(), 1);
        let rec = e.reconstruct(&r).unwrap();
        assert!(rec.connects(&g, 0, 2));
        assert_eq!(rec.travel_time, r.value);
        let t = e.trace(0, 2, 0.0, 1).unwrap();
        assert_eq!(t.end, TraceEnd::Destination);
        assert!(r.value <= t.best());
    }

    #[test]
    fn reconstruct_via_landmark() {
        let (g, o) = line();
        let mut e = QueryEngine::new(&g, &o);
        let a = e.fca(0, 4, 1.0).unwrap();
        let rec = e.reconstruct(&a).unwrap();
        assert!(rec.connects(&g, 0, 4));
        assert!((rec.travel_time - 4.0).abs() < 1e-9);
        let a = e.fca(2, 0, 1.0).unwrap();
        let rec = e.reconstruct(&a).unwrap();
        assert!(rec.connects(&g, 2, 0));
    }

    #[test]
    fn unreachable_answer() {
        let arcs = vec![ArcRecord::new(0, 1, c(2.0))];
        let g = TdInstance::new(3, 100.0, arcs).unwrap();
        let o = build_with_landmarks(&g, &OracleConfig::new(0.1, 1.0), LandmarkSet::from_ids(3, vec![2])).unwrap();
        let mut e = QueryEngine::new(&g, &o);
        let a = e.rqa(0, 2, 0.0, 2).unwrap();
        assert_eq!(a.kind, AnswerKind::Unreachable);
        assert!(a.value.is_infinite());
        assert_eq!(e.reconstruct(&a), Err(QueryError::NothingToReconstruct));
    }

    #[test]
    fn kind_names_round_trip() {
        for k in [AnswerKind::Exact, AnswerKind::ViaLandmark, AnswerKind::Unreachable, AnswerKind::GuessedLandmark] {
            assert_eq!(AnswerKind::parse(k.as_str()), Some(k));
        }
    }
}
