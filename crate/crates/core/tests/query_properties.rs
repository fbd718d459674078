use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tdoracle::engine::TddWorkspace;
use tdoracle::network::TdInstance;
use tdoracle::query::{answer_batch, budget_for_stretch, sigma_for_budget, AnswerKind, Query, QueryEngine, QueryError, StretchBudget};
use tdoracle::summaries::{build_oracle, OracleConfig, OracleSummaries};
use tdoracle::toolkit::generate::{generate, DelayProfile, GenSpec, Topology};

fn setup(seed: u64) -> (TdInstance, OracleSummaries) {
    let mut spec = GenSpec::new(225, Topology::Grid, DelayProfile::Mixed { spoilers: 6 }, seed);
    spec.td_fraction = 0.4;
    let g = generate(&spec).unwrap();
    let o = build_oracle(&g, &OracleConfig::new(0.1, 0.04)).unwrap();
    (g, o)
}

#[test]
fn answers_are_upper_bounds_and_improve_with_budget() {
    let (g, o) = setup(1);
    let mut e = QueryEngine::new(&g, &o);
    let mut ws = TddWorkspace::new(g.n());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let (a, b, t) = (rng.gen_range(0..225u32), rng.gen_range(0..225u32), rng.gen_range(0.0..1440.0));
        let exact = ws.one_to_all(&g, a, t).travel_time(b);
        let mut prev = f64::INFINITY;
        for r in 0..4 {
            let ans = e.rqa(a, b, t, r).unwrap();
            assert!(ans.value >= exact - 1e-9);
            assert!(ans.value <= prev);
            assert!(ans.depth() <= r);
            if ans.kind == AnswerKind::Exact {
                assert!((ans.value - exact).abs() < 1e-9);
            }
            prev = ans.value;
        }
        assert_eq!(e.fca(a, b, t).unwrap().value, e.rqa(a, b, t, 0).unwrap().value);
    }
}

#[test]
fn trivial_and_landmark_origins_are_exact() {
    let (g, o) = setup(3);
    let mut e = QueryEngine::new(&g, &o);
    let same = e.rqa(7, 7, 300.0, 2).unwrap();
    assert_eq!(same.value, 0.0);
    let l = o.landmarks.ids[0];
    let d = (l + 11) % 225;
    let ans = e.fca(l, d, 500.0).unwrap();
    assert_eq!(ans.kind, AnswerKind::LandmarkHit);
    assert_eq!(ans.value, o.query(l, d, 500.0).unwrap().value);
}

#[test]
fn out_of_range_vertices_are_rejected() {
    let (g, o) = setup(4);
    let mut e = QueryEngine::new(&g, &o);
    assert!(matches!(e.fca(0, 9999, 0.0), Err(QueryError::VertexOutOfRange(_))));
    assert!(matches!(e.rqa(9999, 0, 0.0, 1), Err(QueryError::VertexOutOfRange(_))));
}

#[test]
fn batches_match_single_answers() {
    let (g, o) = setup(5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let qs: Vec<Query> = (0..100)
        .map(|_| Query { origin: rng.gen_range(0..225), destination: rng.gen_range(0..225), departure: rng.gen_range(0.0..1440.0) })
        .collect();
    let batch = answer_batch(&g, &o, &qs, 2);
    let mut e = QueryEngine::new(&g, &o);
    for (q, got) in qs.iter().zip(batch) {
        let want = e.rqa(q.origin, q.destination, q.departure, 2).unwrap();
        assert_eq!(got.unwrap().value.to_bits(), want.value.to_bits());
    }
}

#[test]
fn budget_and_stretch_are_inverse() {
    for (eps, psi) in [(0.1, 5.0), (0.01, 20.0), (0.5, 2.5)] {
        let mut prev = f64::INFINITY;
        for r in 0..30 {
            let s = sigma_for_budget(eps, psi, r);
            assert!(s < prev && s > eps);
            assert_eq!(budget_for_stretch(eps, psi, s).unwrap(), r);
            prev = s;
        }
        assert!((sigma_for_budget(eps, psi, 0) - (eps + psi)).abs() < 1e-9);
        let b = StretchBudget::from_stretch(eps, psi, 1.0).unwrap();
        assert!(sigma_for_budget(eps, psi, b.r) <= 1.0);
    }
    assert!(budget_for_stretch(0.1, 5.0, 0.05).is_err());
}

#[test]
fn reconstructed_paths_connect_and_stay_within_tolerance() {
    let (g, o) = setup(7);
    let mut e = QueryEngine::new(&g, &o);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut via = 0;
    while via < 100 {
        let (a, b, t) = (rng.gen_range(0..225u32), rng.gen_range(0..225u32), rng.gen_range(0.0..1440.0));
        let ans = e.rqa(a, b, t, 1).unwrap();
        if a == b || !(ans.kind == AnswerKind::ViaLandmark || ans.kind.is_exact_path()) {
            continue;
        }
        let rec = e.reconstruct(&ans).unwrap();
        assert!(rec.connects(&g, a, b));
        if ans.kind == AnswerKind::ViaLandmark {
            via += 1;
            assert!(rec.travel_time <= 1.1 * ans.value + 1e-6);
        } else {
            assert!(rec.gap.abs() < 1e-9);
        }
    }
}

#[test]
fn traces_bound_the_answer() {
    let (g, o) = setup(9);
    let mut e = QueryEngine::new(&g, &o);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..100 {
        let (a, b, t) = (rng.gen_range(0..225u32), rng.gen_range(0..225u32), rng.gen_range(0.0..1440.0));
        let trace = e.trace(a, b, t, 2).unwrap();
        let ans = e.rqa(a, b, t, 2).unwrap();
        assert!(ans.value <= trace.best() + 1e-9);
        assert!(trace.exact <= ans.value + 1e-9);
    }
}
