//! Time-dependent Dijkstra: one-to-all runs, bounded balls and latest-departure
//! runs over reverse delays.
//!
//! All searches share a [`TddWorkspace`] whose per-vertex arrays are reset
//! lazily through a generation stamp, so a small ball costs time proportional
//! to the vertices it touches rather than to `n`.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use crate::network::{ReverseNetwork, TdInstance, NO_ARC};

/// Labels closer than this are treated as ties when merging one-sided slopes.
pub const TIE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    pub settled: usize,
    pub relaxed: usize,
    pub evaluations: usize,
    pub pushes: usize,
}

impl std::ops::AddAssign for Counters {
    fn add_assign(&mut self, o: Self) {
        self.settled += o.settled;
        self.relaxed += o.relaxed;
        self.evaluations += o.evaluations;
        self.pushes += o.pushes;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    key: f64,
    v: u32,
}

impl Eq for Entry {}

impl Ord for Entry {
    // BinaryHeap is a max-heap; reverse so the smallest (key, vertex) pops first
    fn cmp(&self, o: &Self) -> Ordering {
        o.key.total_cmp(&self.key).then_with(|| o.v.cmp(&self.v))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// A label of the search tree: arrival time and the arc it came through.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Label {
    pub vertex: u32,
    pub arrival: f64,
    pub parent_arc: u32,
}

/// Full result of a one-to-all run.
#[derive(Debug, Clone)]
pub struct TddTree {
    pub source: u32,
    pub departure: f64,
    /// Earliest arrival per vertex, `+∞` if unreachable.
    pub arrival: Vec<f64>,
    pub parent_arc: Vec<u32>,
    /// Vertices in settle order.
    pub order: Vec<u32>,
    pub counters: Counters,
}

impl TddTree {
    pub fn travel_time(&self, v: u32) -> f64 {
        self.arrival[v as usize] - self.departure
    }

    /// Arc sequence from the source to `v`, or `None` if unreachable.
    pub fn path_arcs(&self, g: &TdInstance, v: u32) -> Option<Vec<u32>> {
        if !self.arrival[v as usize].is_finite() {
            return None;
        }
        let mut arcs = Vec::new();
        let mut x = v;
        while x != self.source {
            let a = self.parent_arc[x as usize];
            arcs.push(a);
            x = g.tail(a);
        }
        arcs.reverse();
        Some(arcs)
    }
}

/// A one-to-all run that also carries the one-sided derivatives of every
/// arrival time with respect to the departure time.
#[derive(Debug, Clone)]
pub struct SlopedTree {
    pub tree: TddTree,
    /// Right derivative of the arrival time at each vertex.
    pub right: Vec<f64>,
    /// Left derivative of the arrival time at each vertex.
    pub left: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BallStop {
    Destination(u32),
    Landmark(u32),
    Exhausted,
}

#[derive(Debug, Clone)]
pub struct BallResult {
    pub center: u32,
    pub departure: f64,
    /// Settled labels in settle order; the stop vertex is last.
    pub settled: Vec<Label>,
    /// Reached but unsettled vertices with their tentative labels.
    pub boundary: Vec<Label>,
    pub found: BallStop,
    /// Travel time to the stop vertex, or to the last settled vertex if the
    /// search exhausted its component.
    pub radius: f64,
    pub counters: Counters,
}

impl BallResult {
    pub fn len(&self) -> usize {
        self.settled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.settled.is_empty()
    }

    pub fn label(&self, v: u32) -> Option<&Label> {
        self.settled.iter().find(|l| l.vertex == v)
    }

    /// Arc sequence from the center to a settled vertex.
    pub fn path_arcs(&self, g: &TdInstance, v: u32) -> Option<Vec<u32>> {
        let index: HashMap<u32, &Label> = self.settled.iter().map(|l| (l.vertex, l)).collect();
        let mut arcs = Vec::new();
        let mut x = v;
        while x != self.center {
            let a = index.get(&x)?.parent_arc;
            arcs.push(a);
            x = g.tail(a);
        }
        arcs.reverse();
        Some(arcs)
    }
}

/// Result of a latest-departure run towards a fixed target arrival.
#[derive(Debug, Clone)]
pub struct LatestDeparture {
    pub target: u32,
    pub arrival: f64,
    /// Latest departure per vertex, `−∞` if the target is unreachable from it.
    pub departure: Vec<f64>,
    /// First arc of a latest-departure path from each vertex.
    pub next_arc: Vec<u32>,
    pub counters: Counters,
}

/// Reusable per-run state.
#[derive(Debug, Clone)]
pub struct TddWorkspace {
    key: Vec<f64>,
    parent: Vec<u32>,
    right: Vec<f64>,
    left: Vec<f64>,
    reached: Vec<u32>,
    done: Vec<u32>,
    generation: u32,
    heap: BinaryHeap<Entry>,
    touched: Vec<u32>,
    order: Vec<u32>,
    counters: Counters,
}

enum Control {
    Continue,
    Stop,
}

impl TddWorkspace {
    pub fn new(n: usize) -> Self {
        Self {
            key: vec![f64::INFINITY; n],
            parent: vec![NO_ARC; n],
            right: vec![0.0; n],
            left: vec![0.0; n],
            reached: vec![0; n],
            done: vec![0; n],
            generation: 0,
            heap: BinaryHeap::new(),
            touched: Vec::new(),
            order: Vec::new(),
            counters: Counters::default(),
        }
    }

    fn begin(&mut self, n: usize) {
        if self.key.len() < n {
            *self = Self::new(n);
        }
        self.generation = self.generation.wrapping_add(1);
        if self.generation == 0 {
            self.reached.iter_mut().for_each(|s| *s = 0);
            self.done.iter_mut().for_each(|s| *s = 0);
            self.generation = 1;
        }
        self.heap.clear();
        self.touched.clear();
        self.order.clear();
        self.counters = Counters::default();
    }

    fn is_reached(&self, v: u32) -> bool {
        self.reached[v as usize] == self.generation
    }

    fn is_done(&self, v: u32) -> bool {
        self.done[v as usize] == self.generation
    }

    fn reach(&mut self, v: u32, key: f64, parent: u32) {
        let i = v as usize;
        if self.reached[i] != self.generation {
            self.reached[i] = self.generation;
            self.touched.push(v);
        }
        self.key[i] = key;
        self.parent[i] = parent;
        self.heap.push(Entry { key, v });
        self.counters.pushes += 1;
    }

    /// Forward label-setting from `(o, t)`. `visit` is called on every settled
    /// vertex and may stop the search.
    fn forward<F: FnMut(u32) -> Control>(&mut self, g: &TdInstance, o: u32, t: f64, slopes: bool, mut visit: F) {
        self.begin(g.n());
        self.reach(o, t, NO_ARC);
        if slopes {
            self.right[o as usize] = 1.0;
            self.left[o as usize] = 1.0;
        }
        while let Some(Entry { key, v }) = self.heap.pop() {
            if self.is_done(v) || key > self.key[v as usize] {
                continue;
            }
            self.done[v as usize] = self.generation;
            self.order.push(v);
            self.counters.settled += 1;
            if let Control::Stop = visit(v) {
                break;
            }
            for &a in g.out_arcs(v) {
                let w = g.head(a);
                if self.is_done(w) {
                    continue;
                }
                self.counters.relaxed += 1;
                self.counters.evaluations += 1;
                let f = g.delay(a);
                let arr = key + f.evaluate(key);
                if !self.is_reached(w) || arr < self.key[w as usize] - TIE {
                    self.reach(w, arr, a);
                    if slopes {
                        let (vi, wi) = (v as usize, w as usize);
                        self.right[wi] = (1.0 + f.right_slope(key)) * self.right[vi];
                        self.left[wi] = (1.0 + f.left_slope(key)) * self.left[vi];
                    }
                } else if arr <= self.key[w as usize] + TIE {
                    if slopes {
                        let (vi, wi) = (v as usize, w as usize);
                        let r = (1.0 + f.right_slope(key)) * self.right[vi];
                        let l = (1.0 + f.left_slope(key)) * self.left[vi];
                        self.right[wi] = self.right[wi].min(r);
                        self.left[wi] = self.left[wi].max(l);
                    }
                    if arr < self.key[w as usize] {
                        self.reach(w, arr, a);
                    }
                }
            }
        }
    }

    fn collect_tree(&self, g: &TdInstance, o: u32, t: f64) -> TddTree {
        let n = g.n();
        let mut arrival = vec![f64::INFINITY; n];
        let mut parent_arc = vec![NO_ARC; n];
        for &v in &self.order {
            arrival[v as usize] = self.key[v as usize];
            parent_arc[v as usize] = self.parent[v as usize];
        }
        TddTree {
            source: o,
            departure: t,
            arrival,
            parent_arc,
            order: self.order.clone(),
            counters: self.counters,
        }
    }

    /// Exact earliest arrivals from `(o, t)` to every vertex.
    pub fn one_to_all(&mut self, g: &TdInstance, o: u32, t: f64) -> TddTree {
        self.forward(g, o, t, false, |_| Control::Continue);
        self.collect_tree(g, o, t)
    }

    /// One-to-all run that also propagates one-sided arrival derivatives.
    pub fn one_to_all_sloped(&mut self, g: &TdInstance, o: u32, t: f64) -> SlopedTree {
        self.forward(g, o, t, true, |_| Control::Continue);
        let tree = self.collect_tree(g, o, t);
        let n = g.n();
        let mut right = vec![f64::NAN; n];
        let mut left = vec![f64::NAN; n];
        for &v in &tree.order {
            right[v as usize] = self.right[v as usize];
            left[v as usize] = self.left[v as usize];
        }
        SlopedTree { tree, right, left }
    }

    /// Grows the ball around `(o, t)` until `stop_at` or the first landmark is
    /// settled. The destination is checked before the landmark test.
    pub fn grow_ball(&mut self, g: &TdInstance, is_landmark: &[bool], o: u32, t: f64, stop_at: Option<u32>) -> BallResult {
        let mut found = BallStop::Exhausted;
        self.forward(g, o, t, false, |v| {
            if stop_at == Some(v) {
                found = BallStop::Destination(v);
                Control::Stop
            } else if is_landmark[v as usize] {
                found = BallStop::Landmark(v);
                Control::Stop
            } else {
                Control::Continue
            }
        });
        let label = |v: u32| Label {
            vertex: v,
            arrival: self.key[v as usize],
            parent_arc: self.parent[v as usize],
        };
        let settled: Vec<Label> = self.order.iter().map(|&v| label(v)).collect();
        let boundary: Vec<Label> = self.touched.iter().filter(|&&v| !self.is_done(v)).map(|&v| label(v)).collect();
        let radius = settled.last().map_or(0.0, |l| l.arrival - t);
        BallResult {
            center: o,
            departure: t,
            settled,
            boundary,
            found,
            radius,
            counters: self.counters,
        }
    }

    /// Latest departure from every vertex that still reaches `u` by `t_u`.
    ///
    /// Label-setting on negated time over in-arcs, using the reverse delays:
    /// the tail of `x → v` gets `τ_v − D̄(τ_v)`.
    pub fn latest_departure(&mut self, g: &TdInstance, rev: &ReverseNetwork, u: u32, t_u: f64) -> LatestDeparture {
        self.begin(g.n());
        self.reach(u, -t_u, NO_ARC);
        while let Some(Entry { key, v }) = self.heap.pop() {
            if self.is_done(v) || key > self.key[v as usize] {
                continue;
            }
            self.done[v as usize] = self.generation;
            self.order.push(v);
            self.counters.settled += 1;
            let tau_v = -key;
            for &a in g.in_arcs(v) {
                let x = g.tail(a);
                if self.is_done(x) {
                    continue;
                }
                self.counters.relaxed += 1;
                self.counters.evaluations += 1;
                let tau_x = tau_v - rev.delay(a).evaluate(tau_v);
                if !self.is_reached(x) || -tau_x < self.key[x as usize] {
                    self.reach(x, -tau_x, a);
                }
            }
        }
        let n = g.n();
        let mut departure = vec![f64::NEG_INFINITY; n];
        let mut next_arc = vec![NO_ARC; n];
        for &v in &self.order {
            departure[v as usize] = -self.key[v as usize];
            next_arc[v as usize] = self.parent[v as usize];
        }
        LatestDeparture {
            target: u,
            arrival: t_u,
            departure,
            next_arc,
            counters: self.counters,
        }
    }

    /// Counters of the most recent run.
    pub fn counters(&self) -> Counters {
        self.counters
    }
}

/// Forward evaluation of an arc sequence departing at `t`; returns the arrival.
pub fn evaluate_path(g: &TdInstance, arcs: &[u32], t: f64) -> f64 {
    arcs.iter().fold(t, |time, &a| time + g.delay(a).evaluate(time))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{reverse_delays, ArcRecord};
    use crate::pwl::{FunctionKind, PwlFunction};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn delay(period: f64, pairs: &[(f64, f64)]) -> PwlFunction {
        PwlFunction::from_pairs(period, pairs, FunctionKind::Delay).unwrap()
    }

    fn random_instance(rng: &mut ChaCha8Rng, n: usize, m: usize, period: f64) -> TdInstance {
        let mut arcs = Vec::new();
        for _ in 0..m {
            let u = rng.gen_range(0..n) as u32;
            let mut v = rng.gen_range(0..n) as u32;
            if v == u {
                v = (u + 1) % n as u32;
            }
            let base = rng.gen_range(1.0..10.0);
            let peak = rng.gen_range(0.1..0.9) * period;
            let amp = rng.gen_range(0.0..0.4) * base;
            let f = delay(period, &[(0.0, base), (peak, base + amp), ((peak + period) / 2.0, base + amp * 0.5)]);
            arcs.push(ArcRecord::new(u, v, f));
        }
        TdInstance::new(n, period, arcs).unwrap()
    }

    /// Earliest arrival over all simple paths, by exhaustive enumeration.
    fn brute_force(g: &TdInstance, o: u32, t: f64) -> Vec<f64> {
        fn go(g: &TdInstance, v: u32, time: f64, seen: &mut Vec<bool>, best: &mut Vec<f64>) {
            if time < best[v as usize] {
                best[v as usize] = time;
            }
            for &a in g.out_arcs(v) {
                let w = g.head(a);
                if !seen[w as usize] {
                    seen[w as usize] = true;
                    go(g, w, time + g.delay(a).evaluate(time), seen, best);
                    seen[w as usize] = false;
                }
            }
        }
        let mut best = vec![f64::INFINITY; g.n()];
        let mut seen = vec![false; g.n()];
        seen[o as usize] = true;
        go(g, o, t, &mut seen, &mut best);
        best
    }

    #[test]
    fn single_arc_example() {
        let g = TdInstance::new(2, 8.0, vec![ArcRecord::new(0, 1, delay(8.0, &[(0.0, 1.0), (3.0, 4.0)]))]).unwrap();
        let mut ws = TddWorkspace::new(2);
        let tree = ws.one_to_all(&g, 0, 0.0);
        assert_eq!(tree.arrival[1], 1.0);
        let rev = reverse_delays(&g).unwrap();
        let ld = ws.latest_departure(&g, &rev, 1, 7.0);
        assert!((ld.departure[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn matches_exhaustive_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..40 {
            let g = random_instance(&mut rng, 8, 20, 50.0);
            let mut ws = TddWorkspace::new(g.n());
            let o = rng.gen_range(0..8) as u32;
            let t = rng.gen_range(0.0..120.0);
            let tree = ws.one_to_all(&g, o, t);
            let want = brute_force(&g, o, t);
            for v in 0..8 {
                let (a, b) = (tree.arrival[v], want[v]);
                assert!(a == b || (a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn constant_delays_match_static_dijkstra() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 30;
        let mut arcs = Vec::new();
        let mut w = vec![vec![f64::INFINITY; n]; n];
        for _ in 0..120 {
            let u = rng.gen_range(0..n);
            let v = rng.gen_range(0..n);
            if u == v {
                continue;
            }
            let c: f64 = rng.gen_range(1.0..5.0);
            w[u][v] = w[u][v].min(c);
            arcs.push(ArcRecord::new(u as u32, v as u32, PwlFunction::constant(10.0, c, FunctionKind::Delay).unwrap()));
        }
        // Floyd-Warshall oracle
        for (i, row) in w.iter_mut().enumerate() {
            row[i] = 0.0;
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let via = w[i][k] + w[k][j];
                    if via < w[i][j] {
                        w[i][j] = via;
                    }
                }
            }
        }
        let g = TdInstance::new(n, 10.0, arcs).unwrap();
        let mut ws = TddWorkspace::new(n);
        for o in 0..n {
            let tree = ws.one_to_all(&g, o as u32, 3.7);
            for v in 0..n {
                let d = tree.travel_time(v as u32);
                assert!((d - w[o][v]).abs() < 1e-9 || d == w[o][v]);
            }
        }
    }

    #[test]
    fn ball_is_prefix_of_full_run() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = random_instance(&mut rng, 60, 240, 100.0);
        let mut ws = TddWorkspace::new(g.n());
        let is_landmark: Vec<bool> = (0..60).map(|_| rng.gen_bool(0.1)).collect();
        for o in 0..60u32 {
            let full = ws.one_to_all(&g, o, 10.0);
            let ball = ws.grow_ball(&g, &is_landmark, o, 10.0, Some(59));
            let k = ball.settled.len();
            let order: Vec<u32> = ball.settled.iter().map(|l| l.vertex).collect();
            assert_eq!(&full.order[..k], &order[..]);
            for l in &ball.settled {
                assert_eq!(l.arrival, full.arrival[l.vertex as usize]);
                assert!(l.arrival - 10.0 <= ball.radius + 1e-12);
            }
            match ball.found {
                BallStop::Destination(d) => assert_eq!(d, 59),
                BallStop::Landmark(l) => assert!(is_landmark[l as usize]),
                BallStop::Exhausted => assert_eq!(k, full.order.len()),
            }
        }
    }

    #[test]
    fn ball_at_landmark_is_trivial() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = random_instance(&mut rng, 10, 30, 100.0);
        let mut ws = TddWorkspace::new(10);
        let mut is_landmark = vec![false; 10];
        is_landmark[3] = true;
        let ball = ws.grow_ball(&g, &is_landmark, 3, 5.0, Some(7));
        assert_eq!(ball.settled.len(), 1);
        assert_eq!(ball.radius, 0.0);
        assert_eq!(ball.found, BallStop::Landmark(3));
    }

    #[test]
    fn sloped_run_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let g = random_instance(&mut rng, 20, 60, 100.0);
            let mut ws = TddWorkspace::new(g.n());
            let t = rng.gen_range(0.0..100.0);
            let s = ws.one_to_all_sloped(&g, 0, t);
            let h = 1e-6;
            let ahead = ws.one_to_all(&g, 0, t + h);
            let behind = ws.one_to_all(&g, 0, t - h);
            for v in 0..20 {
                if !s.tree.arrival[v].is_finite() {
                    continue;
                }
                let fr = (ahead.arrival[v] - s.tree.arrival[v]) / h;
                let fl = (s.tree.arrival[v] - behind.arrival[v]) / h;
                assert!((fr - s.right[v]).abs() < 1e-4, "right {fr} vs {}", s.right[v]);
                assert!((fl - s.left[v]).abs() < 1e-4, "left {fl} vs {}", s.left[v]);
            }
        }
    }

    #[test]
    fn latest_departure_is_tight() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let g = random_instance(&mut rng, 25, 80, 100.0);
            let rev = reverse_delays(&g).unwrap();
            let mut ws = TddWorkspace::new(g.n());
            let u = rng.gen_range(0..25) as u32;
            let t_u = rng.gen_range(0.0..100.0);
            let ld = ws.latest_departure(&g, &rev, u, t_u);
            for x in 0..25u32 {
                let tau = ld.departure[x as usize];
                if !tau.is_finite() {
                    continue;
                }
                let fw = ws.one_to_all(&g, x, tau);
                assert!((fw.arrival[u as usize] - t_u).abs() < 1e-9);
                let later = ws.one_to_all(&g, x, tau + 1e-3);
                assert!(later.arrival[u as usize] > t_u);
            }
        }
    }

    #[test]
    fn fifo_monotone_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let g = random_instance(&mut rng, 40, 150, 100.0);
        let mut ws = TddWorkspace::new(g.n());
        for _ in 0..20 {
            let t = rng.gen_range(0.0..100.0);
            let dt = rng.gen_range(0.0..20.0);
            let a = ws.one_to_all(&g, 0, t);
            let b = ws.one_to_all(&g, 0, t + dt);
            for v in 0..40 {
                assert!(a.arrival[v] <= b.arrival[v] + 1e-12 || !a.arrival[v].is_finite());
            }
        }
    }
}
