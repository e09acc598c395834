//! Cross-module checks: the crisp solver, the classification, and the
//! endpoint system have to agree with each other wherever their domains
//! overlap, not just with their own unit fixtures.

use std::collections::BTreeMap;

use expr::{Environment, Expr};
use fuzzpde::bfs::{
    self, brute_force_endpoints, classify, classify_with, differentiability_check,
    endpoint_functions, sign_profile, EndpointFunctions, SamplingConfig, Verdict,
};
use fuzzpde::grid::GridFunction;
use fuzzpde::problem::{instantiate, peak_instance, uniform_corners, CornerChoice};
use fuzzpde::registry;
use fuzzpde::ss::{self, assemble_system, solve_all_levels, solve_ss, validity_region};
use fuzzpde::vim::{correction_step, solve_crisp, VimConfig};

fn sup_diff(a: &GridFunction, b: &GridFunction) -> f64 {
    a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn sample_with_alpha(
    spec: &fuzzpde::grid::GridSpec,
    e: &Expr,
    alpha: f64,
) -> GridFunction {
    let env = Environment::new().with("alpha", alpha);
    GridFunction::sample(spec, e, &env).unwrap()
}

#[test]
fn closed_forms_are_fixed_points_of_the_correction() {
    // On a fine grid the quadrature and stencil errors are negligible, so
    // one correction step must leave the closed-form solution in place.
    // The trigonometric profiles of entry 5 are not stencil-exact, which is
    // what sets the spatial resolution needed here.
    for id in [1u8, 4, 5] {
        let file = registry::load(id).unwrap();
        let p = file.problem;
        let g = file.oracle.unwrap().g.unwrap();
        let spec = p.grid_spec_with(2001, 201, None).unwrap();
        for inst in [
            peak_instance(&p).unwrap(),
            instantiate(&p, &uniform_corners(&p, CornerChoice::Lower), 0.3).unwrap(),
        ] {
            let u0 = GridFunction::sample(&spec, &g, inst.bindings()).unwrap();
            let u1 = correction_step(&u0, &inst).unwrap();
            let moved = sup_diff(&u0, &u1);
            assert!(moved < 5e-4, "entry {id}: closed form moved by {moved}");
        }
    }
}

#[test]
fn correction_deltas_shrink_factorially() {
    let p = registry::load(1).unwrap().problem;
    let inst = peak_instance(&p).unwrap();
    let result = solve_crisp(&inst, &VimConfig::default()).unwrap();
    assert!(result.converged);
    assert!(result.final_delta <= 1e-8, "{}", result.final_delta);
    // The correction series is Taylor-like: past the first couple of terms
    // each delta must drop by at least the next reciprocal index.
    for w in result.deltas.windows(2).skip(2) {
        assert!(
            w[1] < w[0],
            "deltas stopped decreasing: {} then {}",
            w[0],
            w[1]
        );
    }
}

#[test]
fn residuals_reach_grid_accuracy() {
    for id in [1u8, 4] {
        let file = registry::load(id).unwrap();
        let p = file.problem;
        let inst = peak_instance(&p).unwrap();
        let result = solve_crisp(&inst, &VimConfig::default()).unwrap();
        assert!(result.converged, "entry {id}");
        assert!(
            result.residual_sup < 1e-3,
            "entry {id}: residual {}",
            result.residual_sup
        );
    }
}

#[test]
fn alpha_one_seikkala_matches_the_crisp_solver() {
    let p = registry::load(2).unwrap().problem;
    let profile = bfs::coefficient_signs(&p).unwrap();
    let sys = assemble_system(&p, &profile).unwrap();
    let (u1, u2) = solve_ss(&sys, &p, 1.0).unwrap();
    let inst = peak_instance(&p).unwrap();
    let crisp = solve_crisp(&inst, &VimConfig::default()).unwrap();
    let d1 = sup_diff(&u1, &crisp.solution);
    let d2 = sup_diff(&u2, &crisp.solution);
    assert!(d1 < 1e-2 && d2 < 1e-2, "{d1} {d2}");
}

#[test]
fn seikkala_refinement_is_high_order() {
    let file = registry::load(2).unwrap();
    let base = file.problem;
    let profile = bfs::coefficient_signs(&base).unwrap();
    let g = file.oracle.unwrap().g.unwrap();

    let mut errs = Vec::new();
    for n in [51usize, 101] {
        let mut p = base.clone();
        p.domain.nt = n;
        p.domain.nx = n;
        let sys = assemble_system(&p, &profile).unwrap();
        let (u1, u2) = solve_ss(&sys, &p, 0.0).unwrap();
        let spec = p.grid_spec().unwrap();
        // At alpha = 0 the endpoints bind every parameter at 0.5 and 1.5.
        let mut lo = g.clone();
        let mut hi = g.clone();
        for name in ["c", "g", "k"] {
            lo = lo.substitute(name, &Expr::Const(0.5));
            hi = hi.substitute(name, &Expr::Const(1.5));
        }
        let want1 = GridFunction::sample(&spec, &lo.simplify(), &Environment::new()).unwrap();
        let want2 = GridFunction::sample(&spec, &hi.simplify(), &Environment::new()).unwrap();
        errs.push(sup_diff(&u1, &want1).max(sup_diff(&u2, &want2)));
    }
    assert!(
        errs[0] > errs[1] * 3.0,
        "halving the step should cut the endpoint error by at least 3x: {errs:?}"
    );
}

#[test]
fn two_dimensional_endpoint_system_matches_monotone_endpoints() {
    let file = registry::load(3).unwrap();
    let mut p = file.problem;
    p.domain.nt = 31;
    p.domain.nx = 31;
    p.domain.ny = Some(31);
    let g = file.oracle.unwrap().g.unwrap();

    let profile = sign_profile(&p, &g).unwrap();
    let ep = endpoint_functions(&p, &g, &profile).unwrap();
    let sys = assemble_system(&p, &profile).unwrap();
    assert_eq!(sys.coupling, ss::Coupling::Uncoupled);

    let (u1, u2) = solve_ss(&sys, &p, 0.4).unwrap();
    let spec = p.grid_spec().unwrap();
    let want1 = sample_with_alpha(&spec, &ep.z1, 0.4);
    let want2 = sample_with_alpha(&spec, &ep.z2, 0.4);
    let d1 = sup_diff(&u1, &want1);
    let d2 = sup_diff(&u2, &want2);
    assert!(d1 < 1e-3 && d2 < 1e-3, "{d1} {d2}");
}

#[test]
fn verdicts_are_stable_under_denser_sampling() {
    let dense = SamplingConfig::with_density(42, 21);
    for (id, want) in [(1u8, Verdict::Bfs), (4u8, Verdict::SsOnly)] {
        let file = registry::load(id).unwrap();
        let g = file.oracle.unwrap().g.unwrap();
        let default_report = classify(&file.problem, &g).unwrap();
        let dense_report = classify_with(&file.problem, &g, &dense).unwrap();
        assert_eq!(default_report.verdict, want, "entry {id}");
        assert_eq!(dense_report.verdict, want, "entry {id} (dense)");
    }
}

#[test]
fn perturbed_endpoints_register_in_the_residual() {
    let file = registry::load(1).unwrap();
    let p = file.problem;
    let g = file.oracle.unwrap().g.unwrap();
    let profile = sign_profile(&p, &g).unwrap();
    let ep = endpoint_functions(&p, &g, &profile).unwrap();
    let clean = bfs::bfs_residual(&ep, &p).unwrap();
    assert!(clean < 1e-12, "{clean}");

    // z1 + eps * t adds exactly eps to Gamma_1 and nothing else.
    let eps = 1e-3;
    let perturbed = EndpointFunctions {
        z1: Expr::Add(
            Box::new(ep.z1.clone()),
            Box::new(Expr::Mul(
                Box::new(Expr::Const(eps)),
                Box::new(expr::parse("t").unwrap()),
            )),
        ),
        ..ep
    };
    let residual = bfs::bfs_residual(&perturbed, &p).unwrap();
    assert!((residual - eps).abs() < 1e-9, "{residual}");
}

#[test]
fn endpoint_order_violations_at_the_core_are_caught() {
    // Gamma_1 = 1.2 and Gamma_2 = 1.0 are each monotone, but they fail to
    // meet in the right order at alpha = 1.
    let p = registry::load(1).unwrap().problem;
    let ep = EndpointFunctions {
        z1: expr::parse("-1.0*x^2*exp(-t)+1.2*t").unwrap(),
        z2: expr::parse("-1.0*x^2*exp(-t)+1.0*t").unwrap(),
        f1: expr::parse("1.2").unwrap(),
        f2: expr::parse("1.0").unwrap(),
        p1: expr::parse("0.5*x^2").unwrap(),
        p2: expr::parse("0.5*x^2").unwrap(),
        q1: None,
        q2: None,
    };
    let report = differentiability_check(&ep, &p).unwrap();
    assert!(report.lower_monotone.passed);
    assert!(report.upper_monotone.passed);
    assert!(!report.ordered_at_one.passed);
    let worst = report.ordered_at_one.worst.as_ref().unwrap();
    assert!((worst.value - 0.2).abs() < 1e-9, "gap {}", worst.value);
}

#[test]
fn example_four_invalid_boundary_tracks_the_analytic_root() {
    let file = registry::load(4).unwrap();
    let p = file.problem;
    let profile = bfs::coefficient_signs(&p).unwrap();
    let sys = assemble_system(&p, &profile).unwrap();
    let sol = solve_all_levels(&sys, &p).unwrap();
    let (_mask, region) = validity_region(&sol).unwrap();

    // Violations live at SMALL x here: writing the closed-form endpoints
    // u_i = c_i x^2 - (k_j/3) x^2 t^3 - 2 c_i g_i (0.5-x) t
    //       + (k_j g_i / 6)(0.5-x) t^4   (j the opposite index),
    // the binding condition is the upper endpoint's alpha-monotonicity,
    //   d u2 / d alpha = -(1/2 + t^3/6) x^2
    //                    + t (0.5 - x) [(g2 + c2) + (t^3/12)(g2 - k1)] <= 0,
    // whose worst (largest) root over the levels sits at alpha = 0, t = 1:
    // 16 x^2 + 74 x - 37 = 0, x ~ 0.4552. The anchored box keeps the full
    // time extent and starts x there.
    assert!(region.node_count > 0);
    assert!(
        (region.t_extent - 1.0).abs() < 1e-9,
        "t extent {}",
        region.t_extent
    );
    let (x_lo, x_hi) = region.x_range.unwrap();
    let root = (-74.0 + (74.0f64 * 74.0 + 4.0 * 16.0 * 37.0).sqrt()) / 32.0;
    assert!(
        (x_lo - root).abs() < 0.012,
        "box x start {x_lo} vs analytic root {root}"
    );
    assert!((x_hi - 0.5).abs() < 1e-12, "box x end {x_hi}");
}

#[test]
fn masks_agree_across_alpha_resolutions() {
    let file = registry::load(2).unwrap();
    let base = file.problem;
    let profile = bfs::coefficient_signs(&base).unwrap();
    let mut extents = Vec::new();
    for levels in [11usize, 21] {
        let mut p = base.clone();
        p.alpha_level_count = levels;
        let sys = assemble_system(&p, &profile).unwrap();
        let sol = solve_all_levels(&sys, &p).unwrap();
        let (_mask, region) = validity_region(&sol).unwrap();
        extents.push(region.t_extent);
    }
    let dt = base.grid_spec().unwrap().t.spacing();
    assert!(
        (extents[0] - extents[1]).abs() <= dt + 1e-9,
        "{extents:?}"
    );
}

#[test]
fn brute_force_hull_respects_alpha_nesting() {
    let file = registry::load(1).unwrap();
    let p = file.problem;
    let g = file.oracle.unwrap().g.unwrap();
    let point = (0.4, 1.2, None);
    let wide = brute_force_endpoints(&p, &g, 0.2, point, 15).unwrap();
    let mid = brute_force_endpoints(&p, &g, 0.6, point, 15).unwrap();
    let core = brute_force_endpoints(&p, &g, 0.9, point, 15).unwrap();
    assert!(wide.lo <= mid.lo && mid.hi <= wide.hi, "{wide:?} {mid:?}");
    assert!(mid.lo <= core.lo && core.hi <= mid.hi, "{mid:?} {core:?}");
}

#[test]
fn corner_instances_trace_the_brute_force_hull() {
    // Monotone problems attain the hull at parameter corners, so crisp
    // corner instances evaluated through the closed form must reproduce it.
    let file = registry::load(1).unwrap();
    let p = file.problem;
    let g = file.oracle.unwrap().g.unwrap();
    let alpha = 0.5;
    let hull = brute_force_endpoints(&p, &g, alpha, (0.5, 1.0, None), 9).unwrap();

    let mut best_lo = f64::INFINITY;
    let mut best_hi = f64::NEG_INFINITY;
    for bits in 0..8u32 {
        let mut corners = BTreeMap::new();
        for (i, name) in ["c", "g", "k"].iter().enumerate() {
            let choice = if bits >> i & 1 == 0 {
                CornerChoice::Lower
            } else {
                CornerChoice::Upper
            };
            corners.insert(name.to_string(), choice);
        }
        let inst = instantiate(&p, &corners, alpha).unwrap();
        let mut env = inst.bindings().clone();
        env.set("t", 0.5);
        env.set("x", 1.0);
        let v = g.evaluate(&env).unwrap();
        best_lo = best_lo.min(v);
        best_hi = best_hi.max(v);
    }
    assert!((best_lo - hull.lo).abs() < 1e-12, "{best_lo} vs {}", hull.lo);
    assert!((best_hi - hull.hi).abs() < 1e-12, "{best_hi} vs {}", hull.hi);
}
