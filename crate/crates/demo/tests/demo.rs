use rdl_demo::{cprd_terms_native, mismatch_native, rerank_native};

fn direct_terms(sims: &[f64], nv: usize, ni: usize, tau: f64, truncated: bool) -> Vec<f64> {
    let e = |s: f64| (s / tau).exp();
    let end = if truncated { nv + ni } else { sims.len() };
    (0..nv)
        .map(|j| {
            let den: f64 = sims[j..end].iter().map(|&s| e(s)).sum();
            -(e(sims[j]) / den).ln()
        })
        .collect()
}

#[test]
fn terms_match_direct_formula() {
    let sims = [0.7, 0.2, 0.5, -0.1, 0.3, 0.05, -0.6];
    for truncated in [false, true] {
        let got = cprd_terms_native(&sims, 3, 2, 0.1, truncated).unwrap();
        let want = direct_terms(&sims, 3, 2, 0.1, truncated);
        for (g, w) in got[1..].iter().zip(&want) {
            assert!((g - w).abs() < 1e-9, "{g} vs {w}");
        }
        let mean = want.iter().sum::<f64>() / 3.0;
        assert!((got[0] - mean).abs() < 1e-9);
    }
}

#[test]
fn easy_negatives_only_add_to_the_full_form() {
    let sims = [0.4, 0.3, 0.1, 0.0, 0.2];
    let full = cprd_terms_native(&sims, 2, 1, 0.2, false).unwrap()[0];
    let hat = cprd_terms_native(&sims, 2, 1, 0.2, true).unwrap()[0];
    assert!(hat < full);
    assert_eq!(cprd_terms_native(&sims, 0, 2, 0.2, false).unwrap(), vec![0.0]);
}

#[test]
fn bad_inputs_are_rejected() {
    assert!(cprd_terms_native(&[0.1, 0.2], 2, 1, 0.1, false).is_err());
    assert!(cprd_terms_native(&[1.5], 1, 0, 0.1, false).is_err());
    assert!(cprd_terms_native(&[0.5], 1, 0, 0.0, false).is_err());
    assert!(cprd_terms_native(&[0.5], 1, 0, 5.0, false).is_ok());
}

#[test]
fn calibrated_teacher_is_concentrated() {
    let m = mismatch_native(0, 0.8, 4000, 20).unwrap();
    assert!(m.concentration() > 0.8);
    assert!(m.extreme_mass() < 0.01);
    assert_eq!(m.csv().lines().count(), 21);
}

#[test]
fn rerank_rows_follow_ks() {
    let csv = rerank_native(1, "none", 0.75, 2, &[0, 4, 16]).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[0].starts_with("k_rerank,"));
    assert!(rows[3].starts_with("16,"));
    assert!(rerank_native(1, "bogus", 0.75, 1, &[0]).is_err());
}
