use odrs_core::apps::coloring::{edge_color_online, verify_coloring};
use odrs_core::apps::cover::cover_trials;
use odrs_core::instance::{gen_cover, gen_multigraph};
use odrs_core::odrs::Algorithm;
use odrs_core::scaling::{optimize_params, Variant};

#[test]
fn coloring_desk_scale() {
    let params = optimize_params(Variant::Matching).params();
    for seed in 0..3 {
        let g = gen_multigraph(50, 256, 6, seed).unwrap();
        let t0 = std::time::Instant::now();
        let col = edge_color_online(&g, 32, Algorithm::Odrs, &params, seed).unwrap();
        let rep = verify_coloring(&g, &col);
        eprintln!("seed {seed}: {} colors in {:?}", rep.colors_used, t0.elapsed());
        assert!(rep.valid);
        assert!(rep.colors_used as f64 <= 1.7 * 256.0);
    }
}

#[test]
fn cover_cost_near_alpha() {
    let cov = gen_cover(30, 40, 3, 2, 3, 8).unwrap();
    let t = cover_trials(&cov, 20_000, 5).unwrap();
    assert_eq!(t.violations, 0);
    assert!((t.cost_ratio - t.alpha).abs() <= 3.0 * t.ratio_se + 1e-9, "{t:?}");
}
