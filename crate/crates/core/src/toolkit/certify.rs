//! Exact slope and asymmetry constants from all-pairs travel-time profiles.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use thiserror::Error;

use crate::network::{MetricParams, ParamSource, TdInstance};
use crate::pwl::{compose_arrival, pointwise_min, FunctionKind, PwlError, PwlFunction, TOLERANCE};

#[derive(Debug, Error)]
pub enum CertifyError {
    #[error(transparent)]
    Pwl(#[from] PwlError),
    #[error("{from} reaches {to} but not the other way round")]
    NotStronglyConnected { from: u32, to: u32 },
}

/// Travel time `D[o, v](t)` for every `v`, as arrival functions of the
/// departure time from `o`. `None` if `v` is unreachable.
pub fn profile_search(g: &TdInstance, o: u32) -> Result<Vec<Option<PwlFunction>>, PwlError> {
    #[derive(PartialEq)]
    struct Item(f64, u32);
    impl Eq for Item {}
    impl Ord for Item {
        fn cmp(&self, other: &Self) -> Ordering {
            other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
        }
    }
    impl PartialOrd for Item {
        fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
            Some(self.cmp(other))
        }
    }

    let n = g.n();
    let period = g.period();
    let arc_arrival: Vec<PwlFunction> = (0..g.m() as u32).map(|a| g.delay(a).arrival_from_delay()).collect::<Result<_, _>>()?;
    let mut label: Vec<Option<PwlFunction>> = vec![None; n];
    let mut key = vec![f64::INFINITY; n];
    label[o as usize] = Some(PwlFunction::identity_arrival(period)?);
    key[o as usize] = 0.0;
    let mut heap = BinaryHeap::from([Item(0.0, o)]);
    while let Some(Item(k, v)) = heap.pop() {
        if k != key[v as usize] {
            continue;
        }
        // a label is re-queued whenever it improves; mark as processed
        key[v as usize] = f64::INFINITY;
        let f = label[v as usize].clone().expect("queued vertices are labelled");
        for &a in g.out_arcs(v) {
            let w = g.head(a) as usize;
            let cand = compose_arrival(&arc_arrival[a as usize], &f)?;
            let next = match &label[w] {
                None => Some(cand),
                Some(old) => improves(&cand, old).then(|| pointwise_min(old, &cand)).transpose()?,
            };
            if let Some(h) = next {
                let m = min_travel(&h);
                label[w] = Some(h);
                key[w] = m;
                heap.push(Item(m, w as u32));
            }
        }
    }
    Ok(label)
}

fn min_travel(arr: &PwlFunction) -> f64 {
    arr.points().iter().map(|p| p.v - p.t).fold(f64::INFINITY, f64::min)
}

/// Whether `cand` is below `old` somewhere; the difference is piecewise
/// linear, so checking the union of breakpoints suffices.
fn improves(cand: &PwlFunction, old: &PwlFunction) -> bool {
    cand.points().iter().chain(old.points()).any(|p| cand.evaluate(p.t) < old.evaluate(p.t) - TOLERANCE)
}

/// Travel-time function of an arrival profile.
pub fn travel_time_function(arr: &PwlFunction) -> Result<PwlFunction, PwlError> {
    let pairs: Vec<(f64, f64)> = arr.points().iter().map(|p| (p.t, p.v - p.t)).collect();
    PwlFunction::from_pairs(arr.period(), &pairs, FunctionKind::Summary)
}

/// Exact constants of a strongly connected instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub zeta: f64,
    /// Ordered pairs whose profile was computed.
    pub pairs: usize,
    pub max_profile_points: usize,
}

impl Certificate {
    pub fn params(&self, epsilon: f64) -> MetricParams {
        MetricParams {
            source: ParamSource::Certified,
            ..MetricParams::new(self.lambda_min, self.lambda_max, self.zeta, epsilon)
        }
    }
}

/// Λ_min, Λ_max as the extreme leg slopes of every profile and ζ as the
/// largest ratio of opposite trips; the ratio of two linear pieces is
/// monotone, so breakpoints of either direction cover all maxima.
pub fn certify(g: &TdInstance) -> Result<Certificate, CertifyError> {
    let n = g.n();
    let profiles: Vec<Vec<Option<PwlFunction>>> = (0..n as u32)
        .into_par_iter()
        .map(|o| {
            profile_search(g, o).and_then(|row| {
                row.into_iter()
                    .map(|f| f.map(|a| travel_time_function(&a)).transpose())
                    .collect::<Result<Vec<_>, _>>()
            })
        })
        .collect::<Result<_, _>>()?;
    let mut cert = Certificate { lambda_min: 0.0, lambda_max: 0.0, zeta: 1.0, pairs: 0, max_profile_points: 0 };
    for o in 0..n {
        for d in 0..n {
            if o == d {
                continue;
            }
            let (Some(f), Some(b)) = (&profiles[o][d], &profiles[d][o]) else {
                if profiles[o][d].is_some() || profiles[d][o].is_some() {
                    return Err(CertifyError::NotStronglyConnected { from: o as u32, to: d as u32 });
                }
                continue;
            };
            cert.pairs += 1;
            cert.max_profile_points = cert.max_profile_points.max(f.len());
            cert.lambda_max = cert.lambda_max.max(f.max_slope());
            cert.lambda_min = cert.lambda_min.max(-f.min_slope());
            for p in f.points().iter().chain(b.points()) {
                cert.zeta = cert.zeta.max(f.evaluate(p.t) / b.evaluate(p.t));
            }
        }
    }
    Ok(cert)
}
