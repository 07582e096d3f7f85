use sdr_core::dataset::*;
use sdr_core::design::build_design;

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn seeds_control_the_draw() {
    let spec = SyntheticSpec {
        n_samples: 50,
        n_features: 20,
        support: vec![(3, 1.0)],
        seed: 5,
        ..Default::default()
    };
    let a = simulate(&spec).unwrap();
    let b = simulate(&spec).unwrap();
    assert_eq!(a.x.values(), b.x.values());
    assert_eq!(a.y.labels(), b.y.labels());
    let c = simulate(&SyntheticSpec { seed: 6, ..spec }).unwrap();
    assert_ne!(a.x.values(), c.x.values());
}

#[test]
fn dosages_are_binomial_counts() {
    let c = simulate(&SyntheticSpec {
        n_samples: 3000,
        n_features: 10,
        seed: 2,
        ..Default::default()
    })
    .unwrap();
    for j in 0..10 {
        let col: Vec<f64> = c.x.values().column(j).iter().copied().collect();
        assert!(col.iter().all(|&v| v == 0.0 || v == 1.0 || v == 2.0));
        let q = c.allele_frequencies[j];
        assert!((0.1..=0.5).contains(&q));
        let mean = col.iter().sum::<f64>() / 3000.0;
        assert!(
            (mean - 2.0 * q).abs() < 0.06,
            "feature {j}: mean {mean}, 2q {}",
            2.0 * q
        );
    }
}

#[test]
fn null_labels_are_uncorrelated() {
    let c = simulate(&SyntheticSpec {
        n_samples: 2000,
        n_features: 30,
        seed: 3,
        ..Default::default()
    })
    .unwrap();
    let y = c.y.labels();
    for j in 0..30 {
        let col: Vec<f64> = c.x.values().column(j).iter().copied().collect();
        assert!(correlation(&col, y).abs() < 0.1);
    }
    let rate = y.iter().sum::<f64>() / 2000.0;
    assert!((rate - 0.5).abs() < 0.05);
}

#[test]
fn threshold_link_is_learnable_from_the_true_feature() {
    let spec = SyntheticSpec {
        n_samples: 500,
        n_features: 50,
        support: vec![(17, 3.0)],
        link: Link::Threshold,
        seed: 4,
        ..Default::default()
    };
    let c = simulate(&spec).unwrap();
    let x = c.x.values().column(17);
    let centre = 2.0 * c.allele_frequencies[17];
    let correct = (0..500)
        .filter(|&i| (x[i] > centre) == (c.y.labels()[i] == 1.0))
        .count();
    assert!(correct as f64 / 500.0 > 0.8, "{correct}/500");
}

#[test]
fn written_cohort_reloads_identically() {
    let dir = tempfile::tempdir().unwrap();
    let c = simulate(&SyntheticSpec {
        n_samples: 30,
        n_features: 8,
        support: vec![(1, 2.0)],
        seed: 7,
        ..Default::default()
    })
    .unwrap();
    let xp = dir.path().join("x.tsv");
    let yp = dir.path().join("y.tsv");
    write_predictors(&xp, &c.x).unwrap();
    write_phenotype(&yp, c.x.sample_ids(), c.y.labels()).unwrap();
    let x = load_predictors(&xp, Delimiter::from_path(&xp)).unwrap();
    assert_eq!(x.values(), c.x.values());
    assert_eq!(x.feature_ids(), c.x.feature_ids());
    let records = load_phenotype_records(&yp).unwrap();
    let y = align_phenotype(&x, &records, 10).unwrap();
    assert_eq!(y.labels(), c.y.labels());
    assert_eq!(y.kind(), PhenotypeKind::Binary);
    assert!(build_design(&y, 2).is_ok());
}
