use odrs_core::bench::{lb_adversary, monte_carlo_edge_probs, three_node_impossibility};
use odrs_core::instance::gen_uniform_star;
use odrs_core::odrs::{Algorithm, OdrsScheme};
use odrs_core::scaling::{optimize_params, ScalingParams, Variant};

fn odrs() -> OdrsScheme {
    OdrsScheme { algorithm: Algorithm::Odrs, params: optimize_params(Variant::Matching).params() }
}

#[test]
fn adversary_against_odrs() {
    let t0 = std::time::Instant::now();
    let r = lb_adversary(&odrs(), 30, 200_000, 1_000_000, 17).unwrap();
    eprintln!("{:?} in {:?}", (r.min_ratio, r.sigma, r.online_pair, r.offline_pair), t0.elapsed());
    assert!(r.min_ratio <= 0.843 + 3.0 * r.sigma);
}

#[test]
fn three_node_exact_and_sampled() {
    let r = three_node_impossibility(&odrs(), Some(1_000_000), 5).unwrap();
    assert!(r.exact && r.min_matched < 1.0 - 1e-6);
    for c in &r.choices {
        let (e, s, se) = (c.exact.unwrap(), c.sampled.unwrap(), c.se.unwrap());
        assert!((e - s).abs() <= 4.0 * se.max(1e-9), "{c:?}");
    }
}

#[test]
fn warmup_star_frequency() {
    let warm = OdrsScheme { algorithm: Algorithm::Warmup, params: ScalingParams::identity(Variant::Matching) };
    let inst = gen_uniform_star(10).unwrap();
    let r = monte_carlo_edge_probs(&warm, &inst, 1_000_000, 2).unwrap();
    let want = (1.0 - 0.9f64.powi(10)) / 10.0;
    for e in &r.edges {
        assert!((e.prob - want).abs() <= 0.0008, "{e:?}");
    }
}
