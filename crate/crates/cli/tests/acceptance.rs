//! End-to-end acceptance run: one pass/fail line per criterion.

use odrs_core::apps::coloring::{edge_color_online, verify_coloring};
use odrs_core::apps::cover::cover_trials;
use odrs_core::bench::{lb_adversary, lb_constant, three_node_impossibility};
use odrs_core::crs::{balance_ratio, build_selector, SupportDistribution};
use odrs_core::exact::{
    bid_count_law, cylinder_bound_n, find_positive_cylinder, max_pairwise_cov, max_pairwise_cov_dist, neg_cylinder_check,
    rounding_ratio_exact, JointBernoulli,
};
use odrs_core::instance::{gen_cover, gen_multigraph, gen_random, gen_random_b, gen_stochastic, gen_uniform_star};
use odrs_core::level_set::{exact_dist_offline, exact_dist_online, exact_dist_threshold, online_round, BitDistribution};
use odrs_core::odrs::{Algorithm, OdrsScheme};
use odrs_core::rng::{rng_from_seed, uniform, OdrsRng};
use odrs_core::scaling::{optimize_params, ScalingParams, Variant};
use odrs_core::stochastic::{build_lp, eval_vs_lp, exact_check, solve_lp};
use std::path::PathBuf;
use std::process::Command;
use std::time::Instant;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: String) -> Outcome {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn random_x(n: usize, rng: &mut OdrsRng) -> Vec<f64> {
    (0..n).map(|_| uniform(rng)).collect()
}

fn c1_c2(variant: Variant, alpha_min: f64, eps: f64, delta: f64) -> Outcome {
    let t0 = Instant::now();
    let o = optimize_params(variant);
    let secs = t0.elapsed().as_secs_f64();
    let msg = format!("alpha {:.5} eps {:.4} delta {:.4} in {secs:.2}s", o.alpha, o.eps, o.delta);
    ensure(o.alpha >= alpha_min && (o.eps - eps).abs() <= 0.003 && (o.delta - delta).abs() <= 0.003 && secs < 10.0, msg)
}

fn c3() -> Outcome {
    let t0 = Instant::now();
    let mut rng = rng_from_seed(3);
    let mut worst = 0.0f64;
    for k in 0..200 {
        let x = random_x(1 + k % 7, &mut rng);
        let on = exact_dist_online(&x).map_err(|e| e.to_string())?;
        let off = exact_dist_offline(&x).map_err(|e| e.to_string())?;
        worst = worst.max(on.total_variation(&off));
    }
    let secs = t0.elapsed().as_secs_f64();
    ensure(worst <= 1e-9 && secs < 60.0, format!("max TV {worst:.2e} in {secs:.2}s"))
}

fn prefix_ok(x: &[f64], bits: &[bool]) -> bool {
    let (mut s, mut c) = (0.0, 0.0);
    for (v, &b) in x.iter().zip(bits) {
        s += v;
        c += b as u8 as f64;
        if c < s.floor() - 1e-9 || c > s.ceil() + 1e-9 {
            return false;
        }
    }
    true
}

fn c4() -> Outcome {
    let mut rng = rng_from_seed(4);
    let (mut marg_err, mut q_err) = (0.0f64, 0.0f64);
    for k in 0..60 {
        let x = random_x(1 + k % 10, &mut rng);
        let d = exact_dist_online(&x).map_err(|e| e.to_string())?;
        for (m, v) in d.marginals().iter().zip(&x) {
            marg_err = marg_err.max((m - v).abs());
        }
        let mut s = 0.0;
        for t in 0..x.len() {
            s += x[t];
            if (s - s.round()).abs() > 1e-9 {
                let law = d.prefix_count_law(t + 1);
                let at_floor = law.get(&(s.floor() as u32)).copied().unwrap_or(0.0);
                q_err = q_err.max((at_floor - (s.floor() + 1.0 - s)).abs());
            }
        }
    }
    let x = random_x(10, &mut rng);
    let mut bad = 0usize;
    for _ in 0..1_000_000 {
        match online_round(&x, &mut rng) {
            Ok(bits) if prefix_ok(&x, &bits) => {}
            _ => bad += 1,
        }
    }
    ensure(
        marg_err <= 1e-12 && q_err <= 1e-12 && bad == 0,
        format!("marginal err {marg_err:.1e}, q_t err {q_err:.1e}, {bad} prefix failures in 10^6 runs"),
    )
}

fn na_worst(d: &BitDistribution<f64>) -> Result<f64, String> {
    let cov = max_pairwise_cov_dist(d).map_or(f64::NEG_INFINITY, |c| c.2);
    let cyl = neg_cylinder_check(d).map_err(|e| e.to_string())?;
    Ok(cov.max(cyl.max_ones_violation).max(cyl.max_zeros_violation))
}

fn c5() -> Outcome {
    let mut rng = rng_from_seed(5);
    let mut worst_ls = f64::NEG_INFINITY;
    for k in 0..100 {
        let x = random_x(2 + k % 5, &mut rng);
        worst_ls = worst_ls.max(na_worst(&exact_dist_online(&x).map_err(|e| e.to_string())?)?);
    }
    let params = optimize_params(Variant::Matching).params();
    let mut worst_bid = f64::NEG_INFINITY;
    for seed in 0..20 {
        let inst = gen_random(6, 6, 0.5, seed).map_err(|e| e.to_string())?;
        let nodes: Vec<usize> = (0..inst.n_offline).collect();
        for upto in 1..=inst.n_arrivals() {
            let d = bid_count_law(&inst, Algorithm::Odrs, &params, &nodes, upto).map_err(|e| e.to_string())?;
            worst_bid = worst_bid.max(na_worst(&d)?);
        }
    }
    let thr = exact_dist_threshold(&[0.5; 6]).map_err(|e| e.to_string())?;
    let thr_cov = max_pairwise_cov_dist(&thr).map_or(0.0, |c| c.2);
    ensure(
        worst_ls <= 1e-12 && worst_bid <= 1e-12 && thr_cov > 1e-12,
        format!("level-set worst {worst_ls:.1e}, bid-count worst {worst_bid:.1e}, threshold cov {thr_cov:.3} (must be > 0)"),
    )
}

fn c6() -> Outcome {
    let inst = gen_uniform_star(10).map_err(|e| e.to_string())?;
    let r = rounding_ratio_exact(&inst, Algorithm::Warmup, &ScalingParams::identity(Variant::Matching)).map_err(|e| e.to_string())?;
    let want = 1.0 - 0.9f64.powi(10);
    ensure((r - want).abs() <= 1e-9 && r >= 1.0 - (-1.0f64).exp(), format!("ratio {r:.12} vs {want:.12}"))
}

fn c7() -> Outcome {
    let pm = optimize_params(Variant::Matching).params();
    let pb = optimize_params(Variant::BMatching).params();
    let mut worst = f64::INFINITY;
    for seed in 0..50u64 {
        let n = 4 + (seed % 7) as usize;
        let t = 4 + (seed / 7 % 7) as usize;
        let inst = gen_random(n, t, 0.5, seed).map_err(|e| e.to_string())?;
        worst = worst.min(rounding_ratio_exact(&inst, Algorithm::Odrs, &pm).map_err(|e| e.to_string())?);
    }
    for n in 1..=10 {
        let inst = gen_uniform_star(n).map_err(|e| e.to_string())?;
        worst = worst.min(rounding_ratio_exact(&inst, Algorithm::Odrs, &pm).map_err(|e| e.to_string())?);
    }
    let mut worst_b = f64::INFINITY;
    for seed in 0..30u64 {
        let inst = gen_random_b(6, 6, 0.6, 3, seed).map_err(|e| e.to_string())?;
        worst_b = worst_b.min(rounding_ratio_exact(&inst, Algorithm::OdrsB, &pb).map_err(|e| e.to_string())?);
    }
    ensure(worst >= 0.652 - 1e-9 && worst_b >= 0.646, format!("min ratio {worst:.6}, b-matching {worst_b:.6}"))
}

fn c8() -> Outcome {
    let mut rng = rng_from_seed(8);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let k = 1 + case % 6;
        let n_atoms = 1 + (uniform(&mut rng) * 63.0) as usize;
        let atoms: Vec<(u64, f64)> =
            (0..n_atoms).map(|_| ((uniform(&mut rng) * (1u64 << k) as f64) as u64, 0.01 + uniform(&mut rng))).collect();
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        let atoms = atoms.into_iter().map(|(m, p)| (m, p / total)).collect();
        let d = SupportDistribution::new((0..k).collect(), atoms).map_err(|e| e.to_string())?;
        let v: Vec<f64> = (0..k).map(|_| 0.05 + uniform(&mut rng)).collect();
        let alpha = balance_ratio(&d, &v).map_err(|e| e.to_string())?;
        let rule = build_selector(&d, &v).map_err(|e| e.to_string())?;
        for (m, vi) in rule.selection_marginals(&d).iter().zip(&v) {
            worst = worst.max((m - alpha * vi).abs());
        }
    }
    ensure(worst <= 1e-9, format!("max |marginal - alpha v| {worst:.1e}"))
}

fn c9() -> Outcome {
    let (p, residual) = lb_constant();
    let want = 2.0 * 2f64.sqrt() - 2.0;
    let scheme = OdrsScheme { algorithm: Algorithm::Odrs, params: optimize_params(Variant::Matching).params() };
    let adv = lb_adversary(&scheme, 30, 200_000, 1_000_000, 9).map_err(|e| e.to_string())?;
    let three = three_node_impossibility(&scheme, None, 9).map_err(|e| e.to_string())?;
    ensure(
        residual.abs() <= 1e-12
            && (p - want).abs() <= 1e-12
            && adv.min_ratio <= 0.843 + 3.0 * adv.sigma
            && three.exact
            && three.min_matched < 1.0 - 1e-6,
        format!(
            "p {p:.15} residual {residual:.1e}; adversary ratio {:.4} (sigma {:.4}); three-node min {:.6}",
            adv.min_ratio, adv.sigma, three.min_matched
        ),
    )
}

/// Keeps the first `n` variables of a joint law.
fn low_mask(n: usize) -> u128 {
    if n >= 128 {
        u128::MAX
    } else {
        (1u128 << n) - 1
    }
}

fn restrict(j: &JointBernoulli, n: usize) -> Result<JointBernoulli, String> {
    let mask = low_mask(n);
    let atoms = j.atoms.iter().map(|&(m, p)| (m & mask, p)).collect();
    JointBernoulli::new(n, atoms, j.common_p).map_err(|e| e.to_string())
}

/// Rotations of dense random sets, so the common marginal is high enough for a
/// non-trivial r = 2 bound that fits in 128 variables.
fn dense_joint(n: usize, rng: &mut OdrsRng) -> Result<JointBernoulli, String> {
    let full = low_mask(n);
    let mut atoms = Vec::new();
    let bases = 3;
    for _ in 0..bases {
        let rho = 0.9 + 0.08 * uniform(rng);
        let base = (0..n).filter(|_| uniform(rng) < rho).fold(0u128, |m, i| m | 1 << i);
        for r in 0..n {
            let rot = if r == 0 { base } else { ((base << r) | (base >> (n - r))) & full };
            atoms.push((rot, 1.0 / (bases * n) as f64));
        }
    }
    let mut j = JointBernoulli::new(n, atoms, None).map_err(|e| e.to_string())?;
    j.common_p = Some(j.marginals()[0]);
    Ok(j)
}

fn c10() -> Outcome {
    let mut rng = rng_from_seed(10);
    for k in 0..1000 {
        let j = JointBernoulli::random_common(2 + k % 30, 1 + k % 7, &mut rng).map_err(|e| e.to_string())?;
        max_pairwise_cov(&j).map_err(|e| format!("joint {k}: {e}"))?;
    }
    let (eps1, eps2) = (0.1, 0.45);
    let mut nontrivial2 = 0;
    for k in 0..100 {
        let j = JointBernoulli::random_common(32, 2 + k % 6, &mut rng).map_err(|e| e.to_string())?;
        let n1 = cylinder_bound_n(1, j.common_p.unwrap_or(0.0), eps1);
        find_positive_cylinder(&restrict(&j, n1)?, 1, eps1).map_err(|e| format!("r=1 joint {k}: {e}"))?;
        let j = dense_joint(128, &mut rng)?;
        let p = j.common_p.unwrap_or(0.0);
        let n2 = cylinder_bound_n(2, p, eps2);
        if n2 > 128 {
            return Err(format!("r=2 bound {n2} exceeds 128 at p {p:.3}"));
        }
        if p.powi(4) > eps2 {
            nontrivial2 += 1;
        }
        find_positive_cylinder(&restrict(&j, n2)?, 2, eps2).map_err(|e| format!("r=2 joint {k}: {e}"))?;
    }
    ensure(nontrivial2 > 0, format!("1000 covariance floors hold; 100+100 cylinders found ({nontrivial2} non-trivial r=2)"))
}

fn c11() -> Outcome {
    let params = optimize_params(Variant::Matching).params();
    let (mut worst_low, mut worst_high) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut submult, mut free) = (f64::INFINITY, f64::INFINITY);
    for seed in 0..20u64 {
        let n = 4 + (seed % 5) as usize;
        let t = 4 + (seed / 5 % 5) as usize;
        let inst = gen_stochastic(n, t, 0.6, seed).map_err(|e| e.to_string())?;
        let ev = eval_vs_lp(&inst, &params, 1_000_000, seed).map_err(|e| e.to_string())?;
        let ci = if ev.lp_value > 0.0 { ev.ci95 / ev.lp_value } else { 0.0 };
        worst_low = worst_low.min(ev.ratio - (0.652 - 3.0 * ci));
        worst_high = worst_high.max(ev.ratio - (1.0 + 4.0 * ci));
        if let Some(x) = &ev.exact {
            submult = submult.min(x.submult_slack);
            free = free.min(x.free_slack);
        }
    }
    let mut rng = rng_from_seed(11);
    for seed in 0..5u64 {
        let inst = gen_stochastic(10, 8, 0.5, 100 + seed).map_err(|e| e.to_string())?;
        let sol = solve_lp(&build_lp(&inst).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let x = exact_check(&sol.apply(&inst), &params, &mut rng).map_err(|e| e.to_string())?;
        submult = submult.min(x.submult_slack);
        free = free.min(x.free_slack);
    }
    ensure(
        worst_low >= 0.0 && worst_high <= 0.0 && submult >= -1e-9 && free >= -1e-9,
        format!("lower slack {worst_low:.4}, upper excess {worst_high:.4}, submult slack {submult:.1e}, free slack {free:.1e}"),
    )
}

fn c12() -> Outcome {
    let params = optimize_params(Variant::Matching).params();
    let mut most = 0;
    for seed in 0..10 {
        let g = gen_multigraph(50, 256, 6, seed).map_err(|e| e.to_string())?;
        let col = edge_color_online(&g, 32, Algorithm::Odrs, &params, seed).map_err(|e| e.to_string())?;
        let rep = verify_coloring(&g, &col);
        if !rep.valid {
            return Err(format!("seed {seed}: improper coloring"));
        }
        most = most.max(rep.colors_used);
    }
    ensure(most as f64 <= 1.7 * 256.0, format!("proper on 10 seeds; at most {most} colors ({:.3} Delta)", most as f64 / 256.0))
}

fn c13() -> Outcome {
    let cov = gen_cover(30, 40, 3, 2, 3, 13).map_err(|e| e.to_string())?;
    let t = cover_trials(&cov, 100_000, 13).map_err(|e| e.to_string())?;
    ensure(
        t.violations == 0 && (t.alpha - 2.0).abs() < 1e-12 && (t.cost_ratio - t.alpha).abs() <= 0.02 * t.alpha,
        format!("{} violations; cost ratio {:.4} vs alpha {}", t.violations, t.cost_ratio, t.alpha),
    )
}

fn cli(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_odrs-lab")).args(args).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?} exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out.stdout)
}

fn c14() -> Outcome {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance_c14");
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let p = |f: &str| dir.join(f).to_string_lossy().into_owned();
    let (inst, mg, cov) = (p("inst.json"), p("mg.json"), p("cov.json"));
    cli(&["gen", "--family", "random", "--n", "6", "--t", "6", "--seed", "1", "--out", &inst])?;
    cli(&["gen", "--family", "multigraph", "--n", "20", "--delta", "64", "--k", "4", "--seed", "1", "--out", &mg])?;
    cli(&["gen", "--family", "cover", "--n", "12", "--m", "15", "--k", "3", "--seed", "1", "--out", &cov])?;
    let runs: Vec<Vec<&str>> = vec![
        vec!["gen", "--family", "stochastic", "--n", "6", "--t", "6", "--seed", "4"],
        vec!["round", &inst, "--alg", "odrs", "--n-runs", "20000", "--seed", "7"],
        vec!["round", &inst, "--alg", "warmup", "--n-runs", "20000", "--seed", "7", "--csv"],
        vec!["round", &inst, "--alg", "odrs", "--exact"],
        vec!["round", &inst, "--alg", "stochastic", "--n-runs", "20000", "--seed", "7"],
        vec!["optimize-params", "--variant", "matching"],
        vec!["lowerbound", "--n", "8", "--probe", "5000", "--eval", "5000", "--seed", "3", "--three-node-runs", "5000"],
        vec!["color", &mg, "--c", "8", "--seed", "2"],
        vec!["cover", &cov, "--seed", "2"],
        vec!["cover", &cov, "--trials", "500", "--seed", "2"],
    ];
    for args in &runs {
        let a = cli(args)?;
        let b = cli(args)?;
        if a != b || a.is_empty() {
            return Err(format!("{args:?}: outputs differ or are empty"));
        }
    }
    Ok(format!("{} commands byte-identical across two runs", runs.len()))
}

/// Goes to the raw stderr handle so the lines show even when test output is captured.
fn line(text: String) {
    use std::io::Write;
    let _ = writeln!(std::io::stderr(), "{text}");
}

#[test]
fn acceptance() {
    let criteria: Vec<(u32, &str, fn() -> Outcome)> = vec![
        (1, "parameter optimum, matching", || c1_c2(Variant::Matching, 0.6519, 0.0480, 0.0643)),
        (2, "parameter optimum, b-matching", || c1_c2(Variant::BMatching, 0.6459, 0.0347, 0.0425)),
        (3, "online/offline coupling", c3),
        (4, "level-set properties", c4),
        (5, "negative association consequences", c5),
        (6, "warm-up ratio on the star", c6),
        (7, "improved rounding ratio", c7),
        (8, "CRS exactness", c8),
        (9, "lower bounds", c9),
        (10, "correlation facts", c10),
        (11, "stochastic arrivals", c11),
        (12, "edge coloring", c12),
        (13, "multi-stage cover", c13),
        (14, "reproducibility", c14),
    ];
    let mut failed = Vec::new();
    for (id, name, f) in criteria {
        let t0 = Instant::now();
        let res = f();
        let secs = t0.elapsed().as_secs_f64();
        match &res {
            Ok(m) => line(format!("criterion {id:>2} PASS  {name}: {m} [{secs:.1}s]")),
            Err(m) => {
                line(format!("criterion {id:>2} FAIL  {name}: {m} [{secs:.1}s]"));
                failed.push(id);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
