use cpfs_core::bounds::{relay_product, BoundParams};
use cpfs_core::dist::{FitnessDist, OffspringDist};
use cpfs_core::experiments::{
    count_good_vertices, expected_good_vertices, path_transmission_experiment, star_hitting_experiment,
    star_path_relay_experiment, star_persistence_experiment, ychain_experiment, PersistenceStart, RunSpec,
};
use cpfs_core::gadgets::path_trial;
use cpfs_core::rng::stream;
use cpfs_core::sim::{simulate, Horizon, ProcessParams, Variant};
use cpfs_core::stats::{wilson_interval, MeanAccumulator};
use cpfs_core::tree::{generate_tree, WeightedTree, ROOT};
use cpfs_core::ychain::{sample_frak_n, YChain, YStop};

fn consts() -> BoundParams {
    BoundParams::default()
}

#[test]
fn relay_matches_product() {
    let vectors: [&[f64]; 4] = [&[1.0; 4], &[9.0, 1.0, 9.0], &[2.0, 1.0, 1.5, 3.0, 1.0], &[1.0, 4.0]];
    for fitness in vectors {
        let p = path_transmission_experiment(1.0, fitness, &consts(), &RunSpec::new(5, 100_000)).unwrap();
        assert!(p.relay.contains(p.relay_exact), "{fitness:?}: {:?} vs {}", p.relay.ci, p.relay_exact);
    }
    assert!((relay_product(1.0, &[9.0, 1.0, 9.0]).unwrap() - 0.81).abs() < 1e-15);
}

#[test]
fn path_engine_and_graphical_simulator_agree() {
    // the general engine and the arrow-level path simulator estimate the
    // same P(v_r ∈ X_{2r})
    for (lambda, fitness) in [(1.0, vec![1.0; 4]), (0.5, vec![2.0, 1.0, 3.0])] {
        let r = fitness.len() - 1;
        let tree = WeightedTree::path(&fitness).unwrap();
        let params = ProcessParams::new(lambda, Variant::plain()).with_horizon(Horizon::time(2.0 * r as f64));
        let n = 50_000u64;
        let mut rng = stream(21, 0);
        let engine = (0..n)
            .filter(|_| simulate(&tree, &params, &[ROOT], &mut rng, None).unwrap().final_infected.contains(&r))
            .count() as f64;
        let mut rng = stream(22, 0);
        let direct = (0..n).filter(|_| path_trial(lambda, &fitness, &mut rng).unwrap().reached).count() as f64;
        let (a, b) = (engine / n as f64, direct / n as f64);
        let sd = (a * (1.0 - a) / n as f64 + b * (1.0 - b) / n as f64).sqrt();
        assert!((a - b).abs() < 2.576 * sd, "{a} vs {b}");
    }
}

#[test]
fn fast_relay_need_not_keep_the_endpoint() {
    // with r = 1 the arrow may land early and v_1 recover before time 2
    let p = path_transmission_experiment(0.1, &[1.0, 1.0], &consts(), &RunSpec::new(6, 20_000)).unwrap();
    assert!(p.containment_violations > 0);
    assert!(p.reached.point < p.relay_fast.point);
}

#[test]
fn burst_mean_is_reciprocal_rate() {
    let mut rng = stream(8, 0);
    let acc: MeanAccumulator = (0..1_000_000).map(|_| sample_frak_n(1.0, 2.0, &mut rng).unwrap() as f64).collect();
    let (lo, hi) = acc.interval(0.99);
    assert!(lo <= 0.5 && 0.5 <= hi, "({lo}, {hi})");
}

#[test]
fn balanced_ychain_has_zero_drift() {
    let r = ychain_experiment(1.0, 1.0, 3, 50.0, &RunSpec::new(9, 20_000)).unwrap();
    assert_eq!(r.level, 1);
    assert_eq!(r.drift.exact, 0.0);
    assert!(r.drift.ci.0 <= 0.0 && 0.0 <= r.drift.ci.1, "{:?}", r.drift);
    assert!(r.burst_mean.contains(r.burst_exact));
}

#[test]
fn ychain_drift_estimate_on_a_positive_chain() {
    // Y is reflected at L, so the pre-level drift needs a long way to L
    let r = ychain_experiment(0.05, 1.0, 400, 20.0, &RunSpec::new(10, 5_000)).unwrap();
    assert!(r.drift.ci.0 <= r.drift.exact && r.drift.exact <= r.drift.ci.1, "{:?}", r.drift);
}

#[test]
fn ychain_reaches_level_quickly_for_large_fitness() {
    let r = ychain_experiment(1.0, 32.0, 1000, 100.0, &RunSpec::new(12, 5_000)).unwrap();
    assert_eq!(r.level_time.censored, 0);
    assert!(r.level_time.ci.1 <= 4.0 / 32.0, "{:?}", r.level_time.ci);
    assert!(r.supermartingale.max_drift <= 1e-12);
}

#[test]
fn ychain_return_time_follows_first_visit_to_one() {
    let chain = YChain::new(1.0, 1.0, 3).unwrap();
    let mut rng = stream(13, 0);
    for _ in 0..200 {
        let run = chain.simulate(0, 30.0, YStop::Horizon, true, &mut rng).unwrap();
        let traj = run.trajectory.unwrap();
        let t1 = traj.iter().find(|p| p.1 >= 1).map(|p| p.0);
        let expect = t1.and_then(|t1| traj.iter().find(|p| p.0 > t1 && p.1 <= 0).map(|p| p.0));
        assert_eq!(run.r_zero, expect);
    }
}

#[test]
fn star_dies_first_rarely() {
    let s = star_hitting_experiment(1.0, 8.0, 512, &consts(), 1 << 24, &RunSpec::new(14, 10_000)).unwrap();
    assert!((s.extinction_bound.bound - 0.0625).abs() < 1e-12);
    assert!(s.extinction_bound.pass, "{:?}", s.dies_first.ci);
    assert!(!s.warn);
}

#[test]
fn star_small_regime_is_flagged() {
    let s = star_hitting_experiment(1.0, 1.0, 4, &consts(), 1 << 20, &RunSpec::new(15, 2_000)).unwrap();
    assert!(s.warn);
}

#[test]
fn doubling_fitness_helps_the_star() {
    let spec = RunSpec::new(16, 20_000);
    let a = star_hitting_experiment(1.0, 2.0, 64, &consts(), 1 << 24, &spec).unwrap();
    let b = star_hitting_experiment(1.0, 4.0, 64, &consts(), 1 << 24, &spec).unwrap();
    assert!(b.dies_first.point < a.dies_first.point);
    assert!(b.slow.point < a.slow.point);
}

#[test]
fn persistence_below_exact_bound() {
    let p = star_persistence_experiment(1.0, 4.0, 64, 0.1, PersistenceStart::Level, 1000.0, &consts(), &RunSpec::new(17, 1_000))
        .unwrap();
    assert_eq!(p.level, 29);
    assert!(p.persistence_bound.pass, "{:?} vs {}", p.failure.ci, p.persistence_bound.bound);
}

#[test]
fn persistence_start_decomposition() {
    let spec = RunSpec::new(18, 2_000);
    let from_level =
        star_persistence_experiment(1.0, 4.0, 64, 0.1, PersistenceStart::Level, 50.0, &consts(), &spec).unwrap();
    let from_centre =
        star_persistence_experiment(1.0, 4.0, 64, 0.1, PersistenceStart::CentreOnly, 50.0, &consts(), &spec).unwrap();
    let slow = star_hitting_experiment(1.0, 4.0, 64, &consts(), 1 << 24, &spec).unwrap().slow;
    assert!(from_level.failure.ci.0 <= from_centre.failure.ci.1 + slow.ci.1);
    let stressed = star_persistence_experiment(1.0, 4.0, 8, 0.49, PersistenceStart::Level, 5.0, &consts(), &spec).unwrap();
    assert!(stressed.warn);
}

#[test]
fn longer_relay_fails_more() {
    let spec = RunSpec::new(19, 2_000);
    let short = star_path_relay_experiment(1.0, 8.0, 64, 1, 2.0, &consts(), 1 << 24, &spec).unwrap();
    let long = star_path_relay_experiment(1.0, 8.0, 64, 5, 2.0, &consts(), 1 << 24, &spec).unwrap();
    assert!(short.failure.point < long.failure.point, "{} vs {}", short.failure.point, long.failure.point);
    let flat = star_path_relay_experiment(1.0, 1.0, 64, 3, 2.0, &consts(), 1 << 24, &spec).unwrap();
    assert!(flat.bound.vacuous && !flat.bound.pass);
}

#[test]
fn good_vertex_mean_matches_branching_identity() {
    let off = OffspringDist::poisson(2.0).unwrap();
    let fit = FitnessDist::pareto(2.0).unwrap();
    let mut rng = stream(20, 0);
    let n = 10_000;
    let acc: MeanAccumulator = (0..n)
        .map(|_| {
            let tree = generate_tree(&off, &fit, 6, 1 << 20, &mut rng).unwrap();
            count_good_vertices(&tree, 2.0, 3, 6).unwrap()[5] as f64
        })
        .collect();
    // E[J_5] = μ^5 P(ξ=3) P(F≥2): every generation-5 vertex is good
    // independently of how many there are
    let want = expected_good_vertices(&off, &fit, 2.0, 3, 5);
    let pmf3 = 8.0 * (-2.0f64).exp() / 6.0;
    assert!((want - 32.0 * pmf3 * 0.25).abs() < 1e-12);
    let (lo, hi) = acc.interval(0.99);
    assert!(lo <= want && want <= hi, "({lo}, {hi}) vs {want}");
}

#[test]
fn good_vertices_trivial_cases() {
    let off = OffspringDist::deterministic(2);
    let one = FitnessDist::constant(1.0).unwrap();
    let tree = generate_tree(&off, &one, 5, 1 << 10, &mut stream(1, 0)).unwrap();
    assert_eq!(count_good_vertices(&tree, 1.0, 2, 5).unwrap(), [1, 2, 4, 8, 16]);
    assert_eq!(count_good_vertices(&tree, 2.0, 2, 5).unwrap(), [0; 5]);
}

#[test]
fn wilson_examples() {
    assert_eq!(wilson_interval(0, 100, 0.95).unwrap().0, 0.0);
    assert_eq!(wilson_interval(100, 100, 0.95).unwrap().1, 1.0);
    let (lo, hi) = wilson_interval(50, 100, 0.95).unwrap();
    assert!((lo + hi - 1.0).abs() < 1e-12 && (hi - lo - 0.19).abs() < 0.005);
}
