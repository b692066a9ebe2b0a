use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use robust_swipt::eh::*;
use robust_swipt::linalg::{quadratic_form, rank_ratio, real_embedding, ComplexVector, HermitianMatrix, C64};
use robust_swipt::network::*;
use robust_swipt::optimizer::{grid_search, select, tau_profile, AlgorithmConfig};
use robust_swipt::robust::*;

fn vector(parts: &[(f64, f64)]) -> ComplexVector {
    ComplexVector::new(parts.iter().map(|&(re, im)| C64::new(re, im)).collect()).unwrap()
}

/// `sum_i v_i v_i^†` over the given vectors: PSD by construction.
fn gram(vs: &[Vec<(f64, f64)>]) -> HermitianMatrix {
    let n = vs[0].len();
    let mut h = HermitianMatrix::zeros(n);
    for v in vs {
        h = h.add(&HermitianMatrix::outer(&vector(v))).unwrap();
    }
    h
}

fn complex_vec(n: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), n)
}

fn psd(n: usize, rank: usize) -> impl Strategy<Value = HermitianMatrix> {
    prop::collection::vec(complex_vec(n), rank).prop_map(|vs| gram(&vs))
}

fn indefinite(n: usize) -> impl Strategy<Value = HermitianMatrix> {
    (psd(n, 2), psd(n, 2)).prop_map(|(a, b)| a.sub(&b).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn embedding_preserves_min_eigenvalue(h in (1usize..=6).prop_flat_map(indefinite)) {
        let emb = real_embedding(&h);
        let ev = nalgebra::SymmetricEigen::new(emb).eigenvalues;
        let min = ev.iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert!((min - h.min_eigenvalue()).abs() <= 1e-10 * (1.0 + h.max_abs()));
    }

    #[test]
    fn outer_products_are_rank_one(v in (1usize..=6).prop_flat_map(complex_vec)) {
        let w = vector(&v);
        prop_assume!(w.norm() > 1e-3);
        prop_assert!(rank_ratio(&HermitianMatrix::outer(&w)).unwrap() < 1e-12);
    }

    #[test]
    fn logistic_round_trip(frac in 1e-6f64..(1.0 - 1e-6)) {
        let m = LogisticParams::default();
        let tau = frac * m.m;
        let back = psi(psi_inverse(tau, &m).unwrap(), &m);
        prop_assert!((back - tau).abs() <= 1e-9 * tau);
    }

    #[test]
    fn sensitivity_round_trip(frac in 1e-6f64..(1.0 - 1e-6)) {
        let m = SensitivityParams::default();
        let tau = frac * m.m;
        let back = theta(theta_inverse(tau, &m).unwrap(), &m);
        prop_assert!((back - tau).abs() <= 1e-9 * tau);
    }

    #[test]
    fn linearization_is_conservative(a in 1e-4f64..(1.0 - 1e-4), b in 1e-4f64..(1.0 - 1e-4)) {
        let m = LogisticParams::default();
        let (tau, tau_m) = (a * m.m, b * m.m);
        let gap = lambda_linearized(tau, tau_m, &m).unwrap() - psi_inverse(tau, &m).unwrap();
        prop_assert!(gap >= -1e-12);
    }

    #[test]
    fn transfer_curves_bounded_and_monotone(p in 0.0f64..0.1, dp in 0.0f64..0.01) {
        let l = LogisticParams::default();
        let s = SensitivityParams::default();
        let (q, m) = (p + dp, l.m);
        prop_assert!(psi(p, &l) > 0.0 && psi(p, &l) < m);
        prop_assert!(phi(p, &l) >= -1e-18 && phi(p, &l) <= m);
        prop_assert!(theta(p, &s) >= 0.0 && theta(p, &s) < s.m);
        prop_assert_eq!(theta(p, &s) == 0.0, p <= s.p0);
        prop_assert!(psi(q, &l) >= psi(p, &l));
        prop_assert!(phi(q, &l) >= phi(p, &l));
        prop_assert!(theta(q, &s) >= theta(p, &s));
        let omega = l.omega();
        prop_assert!((phi(p, &l) - (psi(p, &l) - m * omega) / (1.0 - omega)).abs() <= 1e-15);
    }

    #[test]
    fn worst_case_bounds_samples(
        (a, v) in (1usize..=4).prop_flat_map(|n| (indefinite(n), complex_vec(n))),
        xi in 0.0f64..0.5,
        seed in any::<u64>(),
    ) {
        let v = vector(&v);
        let est = ChannelEstimate::new(v.clone(), xi).unwrap();
        let hi = worst_case_quadratic(&a, &v, xi, Sense::Max).unwrap();
        let lo = worst_case_quadratic(&a, &v, xi, Sense::Min).unwrap();
        let tol = 1e-9 * (1.0 + a.max_abs());
        prop_assert!(hi.delta.norm() <= xi * (1.0 + 1e-9) + 1e-15);
        prop_assert!(lo.delta.norm() <= xi * (1.0 + 1e-9) + 1e-15);
        let at = |d: &ComplexVector| quadratic_form(&a, &v.add(d).unwrap()).unwrap();
        prop_assert!((at(&hi.delta) - hi.value).abs() <= tol);
        prop_assert!((at(&lo.delta) - lo.value).abs() <= tol);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in 0..50 {
            let d = perturb_with(&mut rng, &est, i % 2 == 0).sub(&v).unwrap();
            let q = at(&d);
            prop_assert!(q <= hi.value + tol && q >= lo.value - tol);
        }
    }

    #[test]
    fn perturbations_stay_in_ball(v in complex_vec(3), xi in 0.0f64..1.0, seed in any::<u64>(), boundary in any::<bool>()) {
        let est = ChannelEstimate::new(vector(&v), xi).unwrap();
        let d = sample_perturbation(&est, seed, boundary).sub(&est.mean).unwrap();
        prop_assert!(d.norm() <= xi * (1.0 + 1e-12) + 1e-15);
    }

    #[test]
    fn interference_lmi_is_sound(
        w in psd(3, 2),
        e in complex_vec(3),
        xi in 0.0f64..0.3,
        p_frac in 0.2f64..2.0,
    ) {
        let est = ChannelEstimate::new(vector(&e), xi).unwrap();
        let wc = worst_case_quadratic(&w, &est.mean, xi, Sense::Max).unwrap().value;
        let p_in = p_frac * wc.max(1e-6);
        let var = HermitianVar { offset: 0, dim: 3 };
        let mu = VarIndex(9);
        let block = lmi_interference(&est, p_in, var, mu);
        let mut x = vec![0.0; 10];
        var.pack(&w, &mut x);
        for m in (0..60).map(|i| 1e-3 * 1.3f64.powi(i)) {
            x[9] = m;
            if block.min_eigenvalue_at(&x) >= 0.0 {
                prop_assert!(wc <= p_in + 1e-9 * (1.0 + p_in), "certified but worst case {wc} > {p_in}");
            }
        }
    }

    #[test]
    fn eh_signal_lmi_is_sound(
        w in psd(3, 1),
        g in complex_vec(3),
        xi in 0.0f64..0.3,
        l_frac in 0.2f64..2.0,
    ) {
        let est = ChannelEstimate::new(vector(&g), xi).unwrap();
        let wc = worst_case_quadratic(&w, &est.mean, xi, Sense::Min).unwrap().value;
        let lambda = l_frac * wc.max(1e-6);
        let var = HermitianVar { offset: 0, dim: 3 };
        let block = lmi_eh_signal(&est, lambda, var, VarIndex(9), VarIndex(10));
        let mut x = vec![0.0; 11];
        var.pack(&w, &mut x);
        for v in (0..60).map(|i| 1e-3 * 1.3f64.powi(i)) {
            x[10] = v;
            if block.min_eigenvalue_at(&x) >= 0.0 {
                prop_assert!(wc >= lambda - 1e-9 * (1.0 + lambda), "certified but worst case {wc} < {lambda}");
            }
        }
    }

    #[test]
    fn pack_unpack_identity(h in (1usize..=5).prop_flat_map(indefinite), offset in 0usize..4) {
        let var = HermitianVar { offset, dim: h.dim() };
        let mut x = vec![0.0; offset + var.len()];
        var.pack(&h, &mut x);
        let back = var.unpack(&x);
        prop_assert!(back.sub(&h).unwrap().max_abs() <= 1e-15 * (1.0 + h.max_abs()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sampled_instances_are_valid(seed in any::<u64>(), pbs_dbm in -10.0f64..30.0) {
        let cfg = GenerationConfig { seed, pbs_power: dbm_to_watt(pbs_dbm), ..Default::default() };
        let inst = sample_instance(&cfg, Counts::default(), PowerLevels::default()).unwrap();
        inst.validate().unwrap();
        prop_assert!(inst.w_p.min_eigenvalue() >= -1e-12 * cfg.pbs_power);
        prop_assert!((inst.w_p.trace() - cfg.pbs_power).abs() <= 1e-10 * cfg.pbs_power);
    }
}

proptest! {
    // each case is a full grid search
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn solver_invariants_hold(seed in 0u64..10_000, gamma_db in -5.0f64..5.0, alpha in 0.05f64..0.95) {
        let cfg = GenerationConfig { seed, ..Default::default() };
        let inst = sample_instance(&cfg, Counts::default(), PowerLevels { gamma_db, ..Default::default() }).unwrap();
        let model = EhModel::Logistic(LogisticParams::default());
        let acfg = AlgorithmConfig { alpha, ..Default::default() };
        let r = grid_search(&inst, &acfg, &model).unwrap();
        prop_assume!(r.is_optimal());
        prop_assert!(r.trace_w <= inst.p_max * (1.0 + 1e-8));
        prop_assert!(r.rank_ratio <= 1e-5);
        let tau: f64 = r.tau_star.iter().sum();
        let obj = alpha * tau - (1.0 - alpha) * r.w.trace();
        prop_assert!((obj - r.objective).abs() <= 1e-8 * (1.0 + r.objective.abs()));
        let ww = HermitianMatrix::outer(&r.w_star);
        let obj_star = alpha * tau - (1.0 - alpha) * ww.trace();
        // relative to the terms: the two can cancel to near zero
        let scale = r.objective.abs().max(alpha * tau).max(1e-9);
        prop_assert!((obj_star - r.objective).abs() <= 1e-6 * scale,
            "obj {} star {} trace {} ratio {} eig {:?}", r.objective, obj_star, r.w.trace(), r.rank_ratio,
            robust_swipt::linalg::eig_hermitian(&r.w).eigenvalues);
        for s in r.objective_trace.windows(2) {
            prop_assert!(s[1] >= s[0] - 1e-8);
        }
        let report = validate_solution(&r.w, r.slacks.as_ref(), &inst, &r.thresholds, 100, seed).unwrap();
        prop_assert!(report.passed(), "{}", report.to_text());
    }

    #[test]
    fn selected_target_nondecreasing_in_alpha(seed in 0u64..10_000) {
        let cfg = GenerationConfig { seed, ..Default::default() };
        let inst = sample_instance(&cfg, Counts::default(), PowerLevels { gamma_db: 0.0, ..Default::default() }).unwrap();
        let model = EhModel::Logistic(LogisticParams::default());
        let acfg = AlgorithmConfig::default();
        let profile = tau_profile(&inst, &acfg, &model).unwrap();
        let mut last = f64::NEG_INFINITY;
        for alpha in [0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0] {
            let r = select(&inst, &acfg, &model, &profile, alpha).unwrap();
            prop_assume!(r.is_optimal());
            let s: f64 = r.tau_star.iter().sum();
            prop_assert!(s >= last, "alpha {alpha}: {s} < {last}");
            last = s;
        }
    }
}
