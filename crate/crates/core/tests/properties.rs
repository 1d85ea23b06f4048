use proptest::prelude::*;
use swellhp::basis::{eval_modal_basis, jacobi_poly, make_quadrature, StdBasis};
use swellhp::cli::{parse_config, tokenize, RunMode};
use swellhp::mesh::build_channel_mesh;
use swellhp::ns_solver::FieldState;
use swellhp::diagnostics::{evaluate, flow_rate};
use swellhp::spline::fit_spline;

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &a| acc * x + a)
}

fn poly_integral(c: &[f64]) -> f64 {
    // over [-1, 1]: odd powers vanish
    c.iter()
        .enumerate()
        .filter(|(k, _)| k % 2 == 0)
        .map(|(k, a)| 2.0 * a / (k as f64 + 1.0))
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Lobatto rule with n points integrates degree 2n - 3 exactly.
    #[test]
    fn lobatto_exactness(n in 3usize..14, seed in proptest::collection::vec(-1.0f64..1.0, 26)) {
        let c = &seed[..2 * n - 2];
        let (x, w) = make_quadrature(n).unwrap();
        let q: f64 = x.iter().zip(&w).map(|(&x, &w)| w * poly(c, x)).sum();
        prop_assert!((q - poly_integral(c)).abs() < 1e-12);
    }

    // The two vertex modes are a partition of unity; interior modes vanish
    // at both ends.
    #[test]
    fn modal_basis_structure(order in 2usize..14, xi in -1.0f64..1.0) {
        let a = eval_modal_basis(0, order, xi).unwrap();
        let b = eval_modal_basis(order, order, xi).unwrap();
        prop_assert!((a + b - 1.0).abs() < 1e-14);
        for p in 1..order {
            prop_assert!(eval_modal_basis(p, order, -1.0).unwrap().abs() < 1e-14);
            prop_assert!(eval_modal_basis(p, order, 1.0).unwrap().abs() < 1e-14);
        }
    }

    // Jacobi three-term recurrence against the closed form at xi = 1.
    #[test]
    fn jacobi_endpoint(p in 0usize..12, alpha in 0.0f64..3.0, beta in 0.0f64..3.0) {
        // P_n^{(a,b)}(1) = binom(n + a, n)
        let mut expected = 1.0;
        for k in 1..=p {
            expected *= (k as f64 + alpha) / k as f64;
        }
        let got = jacobi_poly(p, alpha, beta, 1.0).unwrap();
        prop_assert!((got - expected).abs() <= 1e-11 * expected.abs().max(1.0));
    }

    // Edge interpolation through Lobatto nodes reproduces the nodal data.
    #[test]
    fn edge_interpolation_hits_nodes(order in 2usize..12, vals in proptest::collection::vec(-2.0f64..2.0, 13)) {
        let basis = StdBasis::new(order).unwrap();
        let (nodes, _) = make_quadrature(order + 1).unwrap();
        let v = &vals[..order + 1];
        let c = basis.interpolate_edge(&nodes, v);
        for (k, &x) in nodes.iter().enumerate() {
            let got: f64 = (0..=order).map(|p| c[p] * basis.eval(p, x)).sum();
            prop_assert!((got - v[k]).abs() < 1e-11);
        }
    }

    // A shifted surface has a shifted spline; the normal does not move.
    #[test]
    fn spline_shift_invariance(ys in proptest::collection::vec(0.5f64..1.5, 5..20), shift in -0.4f64..0.4, t in 0.0f64..1.0) {
        let pts: Vec<(f64, f64)> = ys.iter().enumerate().map(|(i, &y)| (i as f64 * 0.5, y)).collect();
        let moved: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (x, y + shift)).collect();
        let (a, b) = (fit_spline(&pts).unwrap(), fit_spline(&moved).unwrap());
        let x = t * pts.last().unwrap().0;
        prop_assert!((b.value(x).unwrap() - a.value(x).unwrap() - shift).abs() < 1e-12);
        let (na, nb) = (a.normal_at(x).unwrap(), b.normal_at(x).unwrap());
        prop_assert!((na[0] - nb[0]).abs() < 1e-12 && (na[1] - nb[1]).abs() < 1e-12);
    }

    // Settings written out as text parse back to the same plan.
    #[test]
    fn config_round_trip(re in 0.0f64..100.0, b in 0.0f64..1.0, p in 2usize..16, tol in 1e-9f64..1e-3, spaced in any::<bool>()) {
        let sep = if spaced { " = " } else { "=" };
        let text = format!("mode{sep}p_sweep\nre{sep}{re}\nb_sl{sep}{b}  p{sep}{p}\nsteady_tol{sep}{tol:e} # tolerance\n");
        let plan = parse_config(&tokenize(&text, "cfg").unwrap(), &[]).unwrap();
        prop_assert_eq!(plan.mode, RunMode::PSweep);
        prop_assert_eq!(plan.base.re, re);
        prop_assert_eq!(plan.base.b_sl, b);
        prop_assert_eq!(plan.base.order, p);
        prop_assert_eq!(plan.base.steady_tol, tol);
    }

    // Interpolated Poiseuille flow carries unit flux through every cut and
    // is continuous across element interfaces.
    #[test]
    fn channel_flux_and_continuity(order in 2usize..9, x in -4.0f64..0.0, y in 0.0f64..1.0) {
        let mesh = build_channel_mesh(&[-4.0, -1.5, 0.0], &[0.0, 0.6, 1.0], order).unwrap();
        let s = FieldState::interpolate(&mesh, |_, y| 1.5 * (1.0 - y * y), |_, _| 0.0, |x, _| -3.0 * x).unwrap();
        prop_assert!((flow_rate(&mesh, &s, x).unwrap() - 1.0).abs() < 1e-12);
        let lo = evaluate(&mesh, &s, [-1.5 - 1e-12, y]).unwrap();
        let hi = evaluate(&mesh, &s, [-1.5 + 1e-12, y]).unwrap();
        prop_assert!((lo[0] - hi[0]).abs() < 1e-9);
    }
}
