use interlace::coarse::frame_sites;
use interlace::green::GreenTable;
use interlace::lattice::{BoxRegion, Dim, Site, srw_step};
use interlace::potential::{
    FiniteSet, HittingFunction, h_transform_step, h_transition_row, hitting_bounds, hitting_probability, sample_equilibrium_start,
    solve_equilibrium, solve_equilibrium_box,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;

// Capacities from an independent dense solve over mpmath Green values.
const CAP_SINGLE_D3: f64 = 0.6594626704491087;
const CAP_PAIR_D3: f64 = 0.983878115009204;
const CAP_PAIR3_D3: f64 = 1.189303282472956;
const CAP_BOX1_D3: f64 = 3.1562058438608345;
const CAP_BOX2_D3: f64 = 5.849583061407934;
const CAP_BOX1_D4: f64 = 14.180677768110185;
const CAP_FRAME4_D3: f64 = 11.281089925542723;
const FRAME4_SIZE: usize = 540;
const CAP_FRAME8_D3: f64 = 21.77805064956071;
const FRAME8_SIZE: usize = 1404;

fn t3() -> &'static GreenTable {
    static T: OnceLock<GreenTable> = OnceLock::new();
    T.get_or_init(|| GreenTable::build(Dim::new(3).unwrap(), 16, 1e-8).unwrap())
}

fn t4() -> &'static GreenTable {
    static T: OnceLock<GreenTable> = OnceLock::new();
    T.get_or_init(|| GreenTable::build(Dim::new(4).unwrap(), 10, 1e-8).unwrap())
}

fn table(d: usize) -> &'static GreenTable {
    if d == 3 { t3() } else { t4() }
}

fn set(sites: &[&[i32]]) -> FiniteSet {
    FiniteSet::new(sites.iter().map(|s| Site::new(s))).unwrap()
}

#[test]
fn capacity_goldens() {
    let gt = t3();
    let cases = [
        (set(&[&[0, 0, 0]]), CAP_SINGLE_D3),
        (set(&[&[0, 0, 0], &[1, 0, 0]]), CAP_PAIR_D3),
        (set(&[&[0, 0, 0], &[3, 0, 0]]), CAP_PAIR3_D3),
        (FiniteSet::from_box(&BoxRegion::centered(3, 1)), CAP_BOX1_D3),
        (FiniteSet::from_box(&BoxRegion::centered(3, 2)), CAP_BOX2_D3),
    ];
    for (k, want) in cases {
        let cap = solve_equilibrium(&k, gt).unwrap().capacity();
        assert!((cap - want).abs() < 1e-7, "{} sites: {cap} vs {want}", k.len());
    }
    let cap4 = solve_equilibrium_box(&BoxRegion::centered(4, 1), t4()).unwrap().capacity();
    assert!((cap4 - CAP_BOX1_D4).abs() < 1e-7);
}

#[test]
fn singleton_and_pair_closed_forms() {
    let gt = t3();
    let cap = solve_equilibrium(&FiniteSet::singleton(Site::origin(3)), gt).unwrap().capacity();
    assert!((cap - 1.0 / gt.origin()).abs() < 1e-12);
    assert!((cap - 0.659462).abs() < 1e-6);
    for x in [[1, 0, 0], [2, 1, 0], [3, 3, 3], [7, 0, 2]] {
        let x = Site::new(&x);
        let k = FiniteSet::new([Site::origin(3), x]).unwrap();
        let cap = solve_equilibrium(&k, gt).unwrap().capacity();
        assert!((cap - 2.0 / (gt.origin() + gt.value(&x).unwrap())).abs() < 1e-8);
    }
}

#[test]
fn frame_capacity_golden() {
    let frame = frame_sites(&Site::origin(3), 4, Dim::new(3).unwrap()).unwrap();
    assert_eq!(frame.len(), FRAME4_SIZE);
    let cap = solve_equilibrium(&FiniteSet::new(frame.sites).unwrap(), t3()).unwrap().capacity();
    assert!((cap - CAP_FRAME4_D3).abs() < 1e-7, "{cap}");
    let frame8 = frame_sites(&Site::origin(3), 8, Dim::new(3).unwrap()).unwrap();
    assert_eq!(frame8.len(), FRAME8_SIZE);
    let cap8 = solve_equilibrium(&FiniteSet::new(frame8.sites).unwrap(), t3()).unwrap().capacity();
    assert!((cap8 - CAP_FRAME8_D3).abs() < 1e-7, "{cap8}");
}

#[test]
fn hitting_function_values() {
    let gt = t3();
    let single = solve_equilibrium(&FiniteSet::singleton(Site::origin(3)), gt).unwrap();
    for x in [[0, 0, 0], [1, 0, 0], [4, -2, 1]] {
        let x = Site::new(&x);
        let h = hitting_probability(&x, &single, gt).unwrap();
        assert!((h - gt.value(&x).unwrap() / gt.origin()).abs() < 1e-12);
    }

    let big = GreenTable::build(Dim::new(3).unwrap(), 32, 1e-8).unwrap();
    let k = FiniteSet::from_box(&BoxRegion::centered(3, 1));
    let pd = solve_equilibrium(&k, &big).unwrap();
    for x in [[30, 0, 0], [29, 5, 3], [-30, -30, 30]] {
        let x = Site::new(&x);
        let h = hitting_probability(&x, &pd, &big).unwrap();
        let (lo, hi) = hitting_bounds(&x, &k, &big).unwrap();
        assert!(lo - 1e-8 <= h && h <= hi + 1e-8, "{lo} ≤ {h} ≤ {hi}");
        assert!(h > 0.0 && h < 1.0);
    }
    assert_eq!(hitting_probability(&Site::new(&[1, 1, 1]), &pd, &big).unwrap(), 1.0);
}

#[test]
fn h_transform_rows_are_stochastic_and_walks_arrive() {
    let gt = t3();
    let k = set(&[&[0, 0, 0], &[1, 0, 0]]);
    let pd = solve_equilibrium(&k, gt).unwrap();
    let mut hf = HittingFunction::new(&pd, gt);
    for x in [[2, 0, 0], [-3, 2, 1], [5, 0, 0], [0, 4, -4]] {
        let row = h_transition_row(&Site::new(&x), &mut hf).unwrap();
        let total: f64 = row.iter().map(|r| r.1).sum();
        assert!((total - 1.0).abs() < 1e-8, "{x:?}: {total}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let start = Site::new(&[6, 0, 0]);
    for _ in 0..300 {
        let mut x = start;
        while !k.contains(&x) {
            x = h_transform_step(&x, &mut hf, &mut rng).unwrap();
        }
    }
    assert!(hf.approximate_evaluations() > 0);
}

// First-entrance law from x on K = {0, e1}: solve g(x, z) = Σ_y μ(y) g(y, z) over z in K.
fn entrance_law(x: &Site, gt: &GreenTable) -> [f64; 2] {
    let e1 = Site::axis(3, 0, 1);
    let (g0, g1) = (gt.origin(), gt.value(&e1).unwrap());
    let (b0, b1) = (gt.value(x).unwrap(), gt.value(&(*x - e1)).unwrap());
    let det = g0 * g0 - g1 * g1;
    [(b0 * g0 - b1 * g1) / det, (b1 * g0 - b0 * g1) / det]
}

#[test]
fn conditioned_hits_match_rejection_sampling() {
    let gt = t3();
    let k = set(&[&[0, 0, 0], &[1, 0, 0]]);
    let pd = solve_equilibrium(&k, gt).unwrap();
    let mut hf = HittingFunction::new(&pd, gt);
    let start = Site::new(&[2, 0, 0]);
    let mu = entrance_law(&start, gt);
    let exact = mu[0] / (mu[0] + mu[1]);
    assert!((mu[0] + mu[1] - hitting_probability(&start, &pd, gt).unwrap()).abs() < 1e-10);
    let mut rng = ChaCha8Rng::seed_from_u64(4);

    let n = 600;
    let mut at_origin = 0usize;
    for _ in 0..n {
        let mut x = start;
        while !k.contains(&x) {
            x = h_transform_step(&x, &mut hf, &mut rng).unwrap();
        }
        at_origin += (x == Site::origin(3)) as usize;
    }
    let p = at_origin as f64 / n as f64;
    let se = (exact * (1.0 - exact) / n as f64).sqrt();
    assert!((p - exact).abs() <= 3.0 * se, "{p} vs {exact} ± {se}");

    let m = 20_000;
    let (mut hits, mut hits_origin) = (0usize, 0usize);
    for _ in 0..m {
        let mut x = start;
        while !k.contains(&x) && x.sup_norm() <= 100 {
            x = srw_step(&x, &mut rng);
        }
        if k.contains(&x) {
            hits += 1;
            hits_origin += (x == Site::origin(3)) as usize;
        }
    }
    let q = hits_origin as f64 / hits as f64;
    let se = (p * (1.0 - p) / n as f64 + q * (1.0 - q) / hits as f64).sqrt();
    assert!((p - q).abs() <= 3.0 * se, "{p} vs {q} ± {se}");
}

#[test]
fn equilibrium_starts_follow_normalized_measure() {
    let gt = t3();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let single = solve_equilibrium(&FiniteSet::singleton(Site::new(&[2, 2, 2])), gt).unwrap();
    assert!((0..100).all(|_| sample_equilibrium_start(&single, &mut rng) == Site::new(&[2, 2, 2])));

    let k = set(&[&[0, 0, 0], &[1, 0, 0], &[1, 1, 0], &[3, 0, 0]]);
    let pd = solve_equilibrium(&k, gt).unwrap();
    let n = 100_000;
    let mut counts = vec![0usize; pd.support().len()];
    for _ in 0..n {
        let x = sample_equilibrium_start(&pd, &mut rng);
        counts[pd.support().iter().position(|y| *y == x).unwrap()] += 1;
    }
    for (c, p) in counts.iter().zip(pd.normalized()) {
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((*c as f64 / n as f64 - p).abs() <= 3.0 * se);
    }
}

fn random_set(d: usize) -> impl Strategy<Value = FiniteSet> {
    prop::collection::vec(prop::collection::vec(-4i32..=4, d), 1..=64).prop_map(|pts| FiniteSet::new(pts.iter().map(|p| Site::new(p))).unwrap())
}

fn check_invariants(k: &FiniteSet) -> f64 {
    let gt = table(k.dim());
    let pd = solve_equilibrium(k, gt).unwrap();
    assert!(pd.full_residual(gt).unwrap() <= 1e-8);
    assert!(pd.eq_measure().iter().all(|&e| e >= 0.0));
    assert!((pd.normalized().iter().sum::<f64>() - 1.0).abs() <= 1e-10);
    assert!(pd.capacity() > 0.0);
    pd.capacity()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn solver_invariants_and_monotonicity(
        (k, z) in (3usize..=4).prop_flat_map(|d| (random_set(d), prop::collection::vec(-4i32..=4, d)))
    ) {
        let cap = check_invariants(&k);
        let cap2 = check_invariants(&k.with_site(Site::new(&z)).unwrap());
        prop_assert!(cap <= cap2 + 1e-10);
    }

    #[test]
    fn capacity_is_subadditive(a in random_set(3), b in random_set(3)) {
        let gt = t3();
        let ca = solve_equilibrium(&a, gt).unwrap().capacity();
        let cb = solve_equilibrium(&b, gt).unwrap().capacity();
        let cab = solve_equilibrium(&a.union(&b).unwrap(), gt).unwrap().capacity();
        prop_assert!(cab <= ca + cb + 1e-10);
        prop_assert!(cab + 1e-10 >= ca.max(cb));
    }
}
