use std::sync::Arc;

use interlace::green::GreenTable;
use interlace::lattice::{BoxRegion, Dim, Site};
use interlace::potential::FiniteSet;
use interlace::sampler::{OccupancyField, SamplerMethod, WindowSampler, sample_torus_vacant};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn table(d: usize, r: u32) -> Arc<GreenTable> {
    Arc::new(GreenTable::build(Dim::new(d).unwrap(), r, 1e-8).unwrap())
}

fn z(successes: usize, trials: usize, p: f64) -> f64 {
    let se = (p * (1.0 - p) / trials as f64).sqrt();
    (successes as f64 / trials as f64 - p) / se
}

#[test]
fn empty_trace_frequency_matches_capacity() {
    let gt = table(3, 8);
    let s = WindowSampler::new(BoxRegion::centered(3, 1), gt, SamplerMethod::default()).unwrap();
    let p = (-s.capacity()).exp();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let trials = 40_000;
    let mut empty = 0;
    let mut count = 0usize;
    for _ in 0..trials {
        let (trace, _) = s.sample_trace(1.0, &mut rng).unwrap();
        empty += trace.excursions.is_empty() as usize;
        count += trace.trajectory_count();
    }
    assert!(z(empty, trials, p).abs() <= 3.0);
    let mean = count as f64 / trials as f64;
    let se = (s.capacity() / trials as f64).sqrt();
    assert!((mean - s.capacity()).abs() <= 3.0 * se, "{mean} vs {}", s.capacity());
}

#[test]
fn inner_site_vacancy_uses_reentries() {
    // 0 sits two steps inside the window, so every visit requires a walk from the boundary.
    let gt = table(3, 10);
    let s = WindowSampler::new(BoxRegion::centered(3, 2), gt.clone(), SamplerMethod::default()).unwrap();
    let u = 1.0;
    let p = (-u / gt.origin()).exp();
    let pair = FiniteSet::new([Site::origin(3), Site::new(&[2, 0, 0])]).unwrap();
    let pd = interlace::potential::solve_equilibrium(&pair, &gt).unwrap();
    let p2 = (-u * pd.capacity()).exp();
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let trials = 40_000;
    let (mut vacant, mut both) = (0, 0);
    let mut sum = 0u64;
    let mut sum_sq = 0u64;
    for _ in 0..trials {
        let f = s.sample_field(u, &mut rng).unwrap();
        let l = f.get(&Site::origin(3)).unwrap() as u64;
        sum += l;
        sum_sq += l * l;
        vacant += (l == 0) as usize;
        both += (l == 0 && f.get(&Site::new(&[2, 0, 0])).unwrap() == 0) as usize;
    }
    assert!(z(vacant, trials, p).abs() <= 3.0, "z = {}", z(vacant, trials, p));
    assert!(z(both, trials, p2).abs() <= 3.0, "z = {}", z(both, trials, p2));
    let n = trials as f64;
    let mean = sum as f64 / n;
    let se = ((sum_sq as f64 / n - mean * mean) / n).sqrt();
    assert!((mean - u).abs() <= 3.0 * se, "{mean} ± {se}");
}

#[test]
fn field_is_reconstructed_from_excursions() {
    let gt = table(3, 10);
    let s = WindowSampler::new(BoxRegion::new(Site::new(&[3, 0, -1]), 2), gt, SamplerMethod::Exact { shell_offset: 2 }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    for _ in 0..50 {
        let (trace, field) = s.sample_trace(2.0, &mut rng).unwrap();
        assert_eq!(trace.field(), field);
        let window = *s.window();
        for e in &trace.excursions {
            assert!(window.on_inner_boundary(&e.entry()));
            assert!(window.on_inner_boundary(&e.exit()));
            assert!(e.path.windows(2).all(|w| w[0].is_adjacent(&w[1])));
            assert!(e.path.iter().all(|x| window.contains(x)));
        }
        assert!(trace.labels.windows(2).all(|w| w[0] <= w[1]));
        assert!(trace.labels.iter().all(|&l| (0.0..2.0).contains(&l)));
        for x in window.sites() {
            let visited = trace.excursions.iter().any(|e| e.path.contains(&x));
            assert_eq!(field.get(&x).unwrap() > 0, visited);
        }
    }
}

#[test]
fn thinned_fields_are_dominated() {
    let gt = table(3, 10);
    let s = WindowSampler::new(BoxRegion::centered(3, 2), gt, SamplerMethod::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for _ in 0..50 {
        let (trace, field) = s.sample_trace(1.5, &mut rng).unwrap();
        let mut prev: Option<OccupancyField> = None;
        for level in [0.1, 0.5, 1.0, 1.5] {
            let f = trace.thinned(level).field();
            if let Some(p) = &prev {
                assert!(p.dominated_by(&f));
            }
            prev = Some(f);
        }
        assert_eq!(prev.unwrap(), field);

        let coupled = s.sample_coupled_fields(&[1.0, 0.2, 0.6], &mut rng).unwrap();
        assert!(coupled[1].dominated_by(&coupled[2]));
        assert!(coupled[2].dominated_by(&coupled[0]));
    }
}

#[test]
fn same_seed_same_trace() {
    let gt = table(3, 10);
    let s = WindowSampler::new(BoxRegion::centered(3, 2), gt, SamplerMethod::default()).unwrap();
    let a = s.sample_trace(1.0, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    let b = s.sample_trace(1.0, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    assert_eq!(a, b);
    let mut out = Vec::new();
    a.0.write_jsonl(&mut out).unwrap();
    assert_eq!(out.iter().filter(|&&c| c == b'\n').count(), a.0.excursions.len());
}

#[test]
fn exact_and_truncated_sampling_agree() {
    let gt = table(4, 8);
    let window = BoxRegion::centered(4, 1);
    let exact = WindowSampler::new(window, gt.clone(), SamplerMethod::default()).unwrap();
    let trunc = WindowSampler::new(window, gt, SamplerMethod::Truncate { epsilon: 1e-3 }).unwrap();
    let corner = Site::new(&[1, 1, 0, 0]);
    let trials = 20_000;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut count = |s: &WindowSampler| (0..trials).filter(|_| s.sample_field(0.5, &mut rng).unwrap().get(&corner) == Some(0)).count();
    let a = count(&exact) as f64 / trials as f64;
    let b = count(&trunc) as f64 / trials as f64;
    let se = ((a * (1.0 - a) + b * (1.0 - b)) / trials as f64).sqrt();
    assert!((a - b).abs() <= 3.0 * se + 1e-3, "{a} vs {b}");
}

#[test]
fn single_walk_avoids_origin_with_escape_probability() {
    let gt = table(3, 12);
    let s = WindowSampler::new(BoxRegion::centered(3, 3), gt.clone(), SamplerMethod::default()).unwrap();
    let start = Site::new(&[2, 1, 0]);
    let p = 1.0 - gt.value(&start).unwrap() / gt.origin();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let trials = 20_000;
    let mut missed = 0;
    for _ in 0..trials {
        let f = s.sample_srw_vacant(&start, &mut rng).unwrap();
        assert_eq!(f.get(&start), Some(1));
        missed += (f.get(&Site::origin(3)) == Some(0)) as usize;
    }
    assert!(z(missed, trials, p).abs() <= 3.0);

    let outside = Site::new(&[6, 0, 0]);
    let p_out = 1.0 - gt.value(&outside).unwrap() / gt.origin();
    let mut missed = 0;
    for _ in 0..trials {
        missed += (s.sample_srw_vacant(&outside, &mut rng).unwrap().get(&Site::origin(3)) == Some(0)) as usize;
    }
    assert!(z(missed, trials, p_out).abs() <= 3.0);
}

#[test]
fn torus_vacancy_near_interlacement_limit() {
    let gt = table(3, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let trials = 8;
    let mean: f64 = (0..trials).map(|_| sample_torus_vacant(32, Dim::new(3).unwrap(), 1.0, &mut rng).unwrap().vacant_fraction()).sum::<f64>() / trials as f64;
    let want = (-1.0 / gt.origin()).exp();
    assert!((mean / want - 1.0).abs() <= 0.05, "{mean} vs {want}");
}
