use interlace::green::{GreenTable, decay_band, green_value};
use interlace::lattice::{Dim, Site, srw_step};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

// g(0,x) from an independent adaptive-quadrature oracle over the scaled Bessel product.
const ORACLE: &[(&[i32], f64)] = &[
    (&[0, 0, 0], 1.5163860591517302),
    (&[1, 0, 0], 0.5163860591520604),
    (&[1, 1, 0], 0.3311486021268363),
    (&[1, 1, 1], 0.26147012638709544),
    (&[2, 0, 0], 0.2573358872552667),
    (&[3, 0, 0], 0.1652707810121486),
    (&[5, 3, 1], 0.08066881339389442),
    (&[10, 0, 0], 0.04786956928432124),
    (&[20, 10, 5], 0.02083872977625825),
    (&[40, 0, 0], 0.011938489722713443),
    (&[64, 64, 64], 0.0043071985721953153),
    (&[0, 0, 0, 0], 1.2394671218484816),
    (&[1, 0, 0, 0], 0.2394671218484816),
    (&[3, 2, 1, 0], 0.014491866026756893),
    (&[10, 0, 0, 0], 0.002047587108105944),
    (&[20, 20, 0, 0], 0.0002533037525581429),
    (&[0, 0, 0, 0, 0], 1.1563081248402307),
    (&[1, 0, 0, 0, 0], 0.1563081248402312),
    (&[4, 1, 1, 0, 0], 0.00181849046300391),
    (&[10, 0, 0, 0, 0], 0.00013002150608373546),
];

fn dim(d: usize) -> Dim {
    Dim::new(d).unwrap()
}

#[test]
fn direct_values_match_oracle() {
    for &(x, want) in ORACLE {
        let site = Site::new(x);
        let v = green_value(&site, dim(x.len()), 1e-10).unwrap();
        assert!((v - want).abs() < 1e-9, "{site}: {v} vs {want}");
    }
}

#[test]
fn coarse_tolerance_still_meets_its_bound() {
    for &(x, want) in ORACLE {
        let v = green_value(&Site::new(x), dim(x.len()), 1e-6).unwrap();
        assert!((v - want).abs() < 1e-6);
    }
}

#[test]
fn table_values_match_oracle() {
    let t3 = GreenTable::build(dim(3), 64, 1e-8).unwrap();
    let t4 = GreenTable::build(dim(4), 20, 1e-8).unwrap();
    let t5 = GreenTable::build(dim(5), 10, 1e-8).unwrap();
    for &(x, want) in ORACLE {
        let t = match x.len() {
            3 => &t3,
            4 => &t4,
            _ => &t5,
        };
        let v = t.value(&Site::new(x)).unwrap();
        assert!((v - want).abs() < 1e-9, "{x:?}: {v} vs {want}");
    }
}

#[test]
fn watson_constant() {
    let v = green_value(&Site::origin(3), dim(3), 1e-12).unwrap();
    assert!((v - 1.5163860591519780).abs() < 1e-10);
    assert!((v - 1.5163860).abs() < 1e-6);
}

#[test]
fn axis_neighbour_is_origin_minus_one() {
    for d in 3..=5 {
        let t = GreenTable::build(dim(d), 2, 1e-8).unwrap();
        let e1 = t.value(&Site::axis(d, 0, 1)).unwrap();
        assert!((e1 - (t.origin() - 1.0)).abs() < 2e-8);
        assert!(t.harmonic_residual_at_origin() < 2e-8);
    }
}

#[test]
fn harmonic_residual_radius_50() {
    let t = GreenTable::build(dim(3), 50, 1e-8).unwrap();
    assert!(t.harmonic_residual_at_origin() <= 2e-8);
    assert!(t.max_harmonic_defect() <= 2.0 * 7.0 * 1e-8);
}

#[test]
fn band_holds_in_four_dimensions() {
    let t = GreenTable::build(dim(4), 20, 1e-8).unwrap();
    assert!(t.band_violations().is_empty());
    assert!(t.max_harmonic_defect() <= 2.0 * 9.0 * 1e-8);
}

#[test]
fn decay_example_point() {
    let v = green_value(&Site::new(&[10, 0, 0]), dim(3), 1e-8).unwrap();
    assert!((0.2..=2.0).contains(&(v * 11.0)));
    let (lo, hi) = decay_band(dim(3));
    assert!(lo <= v * 11.0 && v * 11.0 <= hi);
}

#[test]
fn positive_and_decreasing_along_axes() {
    for d in 3..=5 {
        let t = GreenTable::build(dim(d), 12, 1e-8).unwrap();
        assert!(t.values().iter().all(|&v| v > 0.0));
        for axis in 0..d {
            let mut prev = f64::INFINITY;
            for k in 0..=12 {
                let v = t.value(&Site::axis(d, axis, k)).unwrap();
                assert!(v < prev);
                prev = v;
            }
        }
    }
}

/// Return frequency of walks run for `horizon` steps, corrected for returns after the
/// horizon with the local limit theorem; independent of the quadrature.
fn return_frequency(d: usize, walks: usize, horizon: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut returned = 0usize;
    for _ in 0..walks {
        let mut x = Site::origin(d);
        for _ in 0..horizon {
            x = srw_step(&x, &mut rng);
            if x.l1_norm() == 0 {
                returned += 1;
                break;
            }
        }
    }
    let p = returned as f64 / walks as f64;
    let se = (p * (1.0 - p) / walks as f64).sqrt();
    // Σ_{n>T} P[X_n=0] ≈ ∫_T^∞ (d/2πt)^{d/2} dt; first returns after T have mass ≈ that sum times (1−p)².
    let df = d as f64;
    let visits_after = (df / (2.0 * std::f64::consts::PI)).powf(df / 2.0) * (horizon as f64).powf(1.0 - df / 2.0) / (df / 2.0 - 1.0);
    let late = visits_after * (1.0 - p) * (1.0 - p);
    (p + late, se)
}

#[test]
fn return_frequency_matches_green_function() {
    let (p, se) = return_frequency(3, 100_000, 1_000, 11);
    assert!((p - 0.3405).abs() < 0.003, "p = {p}");
    let t = GreenTable::build(dim(3), 2, 1e-8).unwrap();
    let g = 1.0 / (1.0 - p);
    let g_se = se / (1.0 - p).powi(2);
    assert!((g - t.origin()).abs() <= 3.0 * g_se, "{g} ± {g_se} vs {}", t.origin());

    let (p4, se4) = return_frequency(4, 100_000, 400, 12);
    let t4 = GreenTable::build(dim(4), 2, 1e-8).unwrap();
    let g4 = 1.0 / (1.0 - p4);
    assert!((g4 - t4.origin()).abs() <= 3.0 * se4 / (1.0 - p4).powi(2));
}

#[test]
fn signed_permutations_share_a_cell() {
    let t = GreenTable::build(dim(3), 9, 1e-8).unwrap();
    let x = Site::new(&[4, -7, 2]);
    let cell = t.cell(&x).unwrap();
    for perm in interlace::lattice::SignedPerm::all(3) {
        assert_eq!(t.cell(&perm.apply(&x)), Some(cell));
    }
}
