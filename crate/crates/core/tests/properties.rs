use nalgebra::DMatrix;
use proptest::prelude::*;
use sdr_core::admm::{group_shrink, solve_step_a, AdmmOptions, PenaltyParams};
use sdr_core::dataset::{Phenotype, PredictorMatrix};
use sdr_core::design::build_design;
use sdr_core::evaluation::{auc, chi2_table, metrics, stratified_folds, MetricBundle};
use sdr_core::scoring::{constraint_violation, init_theta};
use sdr_core::screening::{partition_features, rank_norms};
use sdr_core::sir::{generalized_eigen, principal_angle, sir_eigen, slice_mean_cov};

fn matrix(n: usize, p: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-3.0..3.0f64, n * p).prop_map(move |v| DMatrix::from_vec(n, p, v))
}

/// Labels in `0..h` with every level present.
fn labels(n: usize, h: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0..h, n).prop_map(move |mut v| {
        for (i, slot) in v.iter_mut().take(h).enumerate() {
            *slot = i;
        }
        v.into_iter().map(|l| l as f64).collect()
    })
}

fn centered(x: DMatrix<f64>) -> PredictorMatrix {
    PredictorMatrix::from_values(x).unwrap().center().unwrap()
}

fn covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.tr_mul(x) / x.nrows() as f64
}

proptest! {
    #[test]
    fn column_shift_does_not_change_centered_matrix(x in matrix(12, 3), shift in prop::collection::vec(-100.0..100.0f64, 3)) {
        let mut moved = x.clone();
        for (j, s) in shift.iter().enumerate() {
            moved.column_mut(j).add_scalar_mut(*s);
        }
        let a = centered(x);
        let b = centered(moved);
        prop_assert!((a.values() - b.values()).amax() < 1e-12);
        for col in a.values().column_iter() {
            prop_assert!(col.sum().abs() < 1e-10 * 12.0);
        }
    }

    #[test]
    fn design_matches_its_definition(y in labels(30, 4)) {
        let design = build_design(&Phenotype::discrete(y.clone()).unwrap(), 4).unwrap();
        let z = design.z();
        prop_assert!(z.column(0).iter().all(|&v| v == 1.0));
        prop_assert!((z.tr_mul(z) / 30.0 - design.d()).amax() < 1e-12);
        for k in 1..4 {
            prop_assert_eq!(z.column(k).sum(), y.iter().filter(|&&l| l == k as f64).count() as f64);
        }
        prop_assert!(design.d().clone().cholesky().is_some());
    }

    #[test]
    fn permuting_samples_leaves_d_unchanged(y in labels(20, 3), seed in 0u64..1000) {
        let mut order: Vec<usize> = (0..20).collect();
        let mut state = seed;
        for i in (1..20).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (state >> 33) as usize % (i + 1));
        }
        let permuted: Vec<f64> = order.iter().map(|&i| y[i]).collect();
        let a = build_design(&Phenotype::discrete(y).unwrap(), 3).unwrap();
        let b = build_design(&Phenotype::discrete(permuted).unwrap(), 3).unwrap();
        prop_assert!((a.d() - b.d()).amax() < 1e-12);
    }

    #[test]
    fn slice_covariance_is_psd_and_bounded(x in matrix(40, 4), y in labels(40, 3)) {
        let x = centered(x);
        let design = build_design(&Phenotype::discrete(y).unwrap(), 3).unwrap();
        let m = slice_mean_cov(&x, &design).unwrap();
        let eig = m.clone().symmetric_eigen();
        prop_assert!(eig.eigenvalues.min() >= -1e-8);
        let sigma = covariance(x.values());
        // whitened (z-scale) eigenvalues
        if let Ok((values, _)) = generalized_eigen(&m, &sigma) {
            prop_assert!(values.iter().all(|&v| v >= -1e-8 && v <= 1.0 + 1e-8));
            prop_assert!(values.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn subspace_is_affine_equivariant(x in matrix(60, 3), y in labels(60, 3), a in matrix(3, 3)) {
        let a = a + DMatrix::<f64>::identity(3, 3) * 4.0;
        prop_assume!(a.determinant().abs() > 0.5);
        let x = centered(x);
        let design = build_design(&Phenotype::discrete(y).unwrap(), 3).unwrap();
        let old = sir_eigen(&x, &design, 2);
        let new = sir_eigen(&centered(x.values() * &a), &design, 2);
        if let (Ok(old), Ok(new)) = (old, new) {
            prop_assume!(old.eigenvalues[1] > 1e-3 && old.eigenvalues[1] - old.eigenvalues[2] > 1e-3);
            prop_assert!(principal_angle(&(&a * new.basis()), &old.basis()).unwrap() < 1e-6);
        }
    }

    #[test]
    fn shrink_is_collinear_contracting_and_monotone(
        v in prop::collection::vec(-5.0..5.0f64, 1..5),
        lambda in 0.0..10.0f64, delta in 0.0..=1.0f64, r in 0.0..0.9f64, rho in 0.1..10.0f64,
    ) {
        let p = PenaltyParams::new(lambda, delta, r, rho).unwrap();
        let out = group_shrink(&v, &p);
        let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let no = out.iter().map(|a| a * a).sum::<f64>().sqrt();
        prop_assert!(no <= nv + 1e-12);
        if no > 0.0 {
            let cos = v.iter().zip(&out).map(|(a, b)| a * b).sum::<f64>() / (nv * no);
            prop_assert!((cos - 1.0).abs() < 1e-12);
        }
        let mut prev = f64::INFINITY;
        for step in 0..20 {
            let q = PenaltyParams { lambda: lambda * step as f64 / 4.0, ..p };
            let n = group_shrink(&v, &q).iter().map(|a| a * a).sum::<f64>().sqrt();
            prop_assert!(n <= prev + 1e-12);
            prev = n;
        }
    }

    #[test]
    fn step_a_rows_are_jointly_sparse(x in matrix(20, 5), theta in matrix(3, 2), lambda in 0.0..20.0f64) {
        let z = DMatrix::from_fn(20, 3, |i, j| if j == 0 || i % 3 == j { 1.0 } else { 0.0 });
        let st = solve_step_a(&x, &z, &theta, &PenaltyParams { lambda, ..Default::default() }, &AdmmOptions::default()).unwrap();
        prop_assert_eq!(st.beta.shape(), st.alpha.shape());
        prop_assert_eq!(st.u.shape(), st.alpha.shape());
        for row in st.alpha.row_iter() {
            let zeros = row.iter().filter(|&&v| v == 0.0).count();
            prop_assert!(zeros == 0 || zeros == row.len());
        }
    }

    #[test]
    fn initial_scores_satisfy_constraints(y in labels(50, 5), d in 1usize..5, seed in any::<u64>()) {
        let design = build_design(&Phenotype::discrete(y).unwrap(), 5).unwrap();
        let (theta, q) = init_theta(&design, d, seed).unwrap();
        prop_assert!(constraint_violation(&theta, design.d()) <= 1e-8);
        let e1_part = (q.column(0).transpose() * design.d() * &theta).amax();
        prop_assert!(e1_part <= 1e-8);
    }

    #[test]
    fn auc_ignores_monotone_transforms(scores in prop::collection::vec(-10.0..10.0f64, 8..40), seed in any::<u64>()) {
        let truth: Vec<bool> = (0..scores.len()).map(|i| i < 2 || (i >= 4 && (seed >> (i % 64)) & 1 == 1)).collect();
        prop_assume!(truth.iter().any(|&t| !t));
        let warped: Vec<f64> = scores.iter().map(|s| (s / 3.0).exp() * 7.0 - 2.0).collect();
        prop_assert_eq!(auc(&truth, &scores).unwrap(), auc(&truth, &warped).unwrap());
    }

    #[test]
    fn chi2_is_symmetric_in_case_and_control(case in prop::array::uniform3(0u64..60), control in prop::array::uniform3(0u64..60)) {
        prop_assume!(case.iter().sum::<u64>() > 0 && control.iter().sum::<u64>() > 0);
        let a = chi2_table(case, control);
        let b = chi2_table(control, case);
        prop_assert_eq!(a.0, b.0);
        prop_assert_eq!(a.1, b.1);
    }

    #[test]
    fn partitions_cover_in_order_and_balance(p in 1usize..5000, k in 1usize..50) {
        prop_assume!(k <= p);
        let parts = partition_features(p, k).unwrap();
        prop_assert_eq!(parts.len(), k);
        prop_assert_eq!(parts[0].start, 0);
        prop_assert_eq!(parts[k - 1].end, p);
        for w in parts.windows(2) {
            prop_assert_eq!(w[0].end, w[1].start);
            prop_assert!(w[0].len() >= w[1].len());
        }
        prop_assert!(parts[0].len() - parts[k - 1].len() <= 1);
    }

    #[test]
    fn ranking_is_sorted_with_index_ties(norms in prop::collection::vec(prop::sample::select(vec![0.0, 0.5, 1.0, 2.0]), 1..30), k in 1usize..40) {
        let r = rank_norms(&norms, k);
        prop_assert_eq!(r.kept.len(), k.min(norms.len()));
        for w in r.kept.windows(2) {
            let (a, b) = (w[0], w[1]);
            prop_assert!(norms[a] > norms[b] || (norms[a] == norms[b] && a < b));
        }
        prop_assert_eq!(r.no_signal, norms.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stratified_folds_are_balanced(n_case in 5usize..40, n_control in 5usize..40, folds in 2usize..6, seed in any::<u64>()) {
        let cases: Vec<bool> = (0..n_case + n_control).map(|i| i < n_case).collect();
        let f = stratified_folds(&cases, folds, seed).unwrap();
        let sizes: Vec<usize> = (0..folds).map(|k| f.iter().filter(|&&g| g == k).count()).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for k in 0..folds {
            prop_assert!((0..cases.len()).any(|i| f[i] == k && cases[i]));
            prop_assert!((0..cases.len()).any(|i| f[i] == k && !cases[i]));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn metric_identity_holds_for_any_confusion_matrix(tp in 0usize..500, fp in 0usize..500, tn in 0usize..500, fn_ in 0usize..500) {
        prop_assume!(tp + fn_ > 0 && tn + fp > 0);
        let m = MetricBundle::from_counts(tp, fp, tn, fn_).unwrap();
        prop_assert!(m.identity_gap() <= 1e-12);
        let correct = m.accuracy * m.n() as f64;
        prop_assert_eq!(correct.round() as usize, tp + tn);
        prop_assert!((correct - (tp + tn) as f64).abs() < 1e-9);
        for rate in [m.sensitivity, m.specificity, m.accuracy] {
            prop_assert!((0.0..=1.0).contains(&rate));
        }
    }

    #[test]
    fn computed_bundles_satisfy_identity(pairs in prop::collection::vec((any::<bool>(), any::<bool>(), -1.0..1.0f64), 4..60)) {
        let truth: Vec<bool> = pairs.iter().map(|p| p.0).collect();
        prop_assume!(truth.iter().any(|&t| t) && truth.iter().any(|&t| !t));
        let pred: Vec<bool> = pairs.iter().map(|p| p.1).collect();
        let scores: Vec<f64> = pairs.iter().map(|p| p.2).collect();
        let m = metrics(&truth, &pred, &scores).unwrap();
        prop_assert!(m.identity_gap() <= 1e-12);
        prop_assert_eq!(m.tp + m.fp + m.tn + m.fn_, truth.len());
    }
}
