use seedbank_core::diffusion::*;
use seedbank_core::markov::{replicate_map, RngStream};

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Asymptotic two-sample Kolmogorov–Smirnov p-value.
fn ks_p_value(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < n && j < m {
        let v = a[i].min(b[j]);
        while i < n && a[i] <= v {
            i += 1;
        }
        while j < m && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let ne = (n * m) as f64 / (n + m) as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    if lambda < 0.1 {
        return 1.0;
    }
    let p: f64 = (1..=100)
        .map(|k| {
            let k = k as f64;
            2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp()
        })
        .sum();
    p.clamp(0.0, 1.0)
}

#[test]
fn probability_of_any_jump() {
    let (k, y0) = (1.5, 0.6);
    let hits: Vec<f64> = replicate_map(11, 100_000, |_, rng| {
        let p = sample_limit_jump(JumpState::new(0, y0).unwrap(), k, 1e6, rng).unwrap();
        f64::from(p.jumps() > 0)
    });
    let (m, sd) = mean_sd(&hits);
    let exact = 1.0 - (-y0 / k).exp();
    assert!((m - exact).abs() <= 3.0 * sd, "{m} vs {exact}");
}

#[test]
fn limit_sampler_martingale() {
    let k = 1.0;
    let start = JumpState::new(0, 0.6).unwrap();
    let grid = [0.5, 2.0, 8.0];
    let values: Vec<Vec<f64>> = replicate_map(12, 100_000, |_, rng| {
        let p = sample_limit_jump(start, k, 8.0, rng).unwrap();
        grid.iter()
            .map(|&t| {
                let s = p.state_at(t);
                (k * f64::from(s.x()) + s.y()) / (k + 1.0)
            })
            .collect()
    });
    for (i, t) in grid.iter().enumerate() {
        let col: Vec<f64> = values.iter().map(|v| v[i]).collect();
        let (m, sd) = mean_sd(&col);
        assert!((m - 0.3).abs() <= 3.0 * sd, "t = {t}: {m}");
    }
}

#[test]
fn limit_sampler_x_is_binary() {
    for i in 0..100 {
        let p = sample_limit_jump(JumpState::new(1, 0.2).unwrap(), 2.0, 20.0, &mut RngStream::new(13, i).rng()).unwrap();
        for t in [0.0, 0.1, 1.0, 5.0, 19.9] {
            let s = p.state_at(t);
            assert!(s.x() <= 1 && (0.0..=1.0).contains(&s.y()));
        }
    }
}

#[test]
fn hybrid_without_noise_matches_exact_sampler() {
    let (k, horizon) = (1.0, 5.0);
    let start = JumpState::new(0, 0.8).unwrap();
    let censor = horizon + 1.0;
    let exact: Vec<f64> = replicate_map(14, 10_000, |_, rng| {
        let p = sample_limit_jump(start, k, horizon, rng).unwrap();
        let first = p.jump_times().next();
        first.unwrap_or(censor)
    });
    let cfg = EmConfig::new(1e-3, horizon, vec![horizon]).unwrap();
    let hybrid: Vec<f64> = replicate_map(15, 10_000, |_, rng| {
        let p = sample_two_island_limit(start, k, 0.0, &cfg, rng).unwrap();
        p.jump_times.first().copied().unwrap_or(censor)
    });
    let p = ks_p_value(exact, hybrid);
    assert!(p > 0.01, "KS p-value {p}");
}

#[test]
fn ks_detects_shifted_sample() {
    let a: Vec<f64> = (0..2000).map(|i| i as f64 / 2000.0).collect();
    let b: Vec<f64> = a.iter().map(|v| v + 0.1).collect();
    assert!(ks_p_value(a.clone(), b) < 1e-6);
    assert!(ks_p_value(a.clone(), a) > 0.99);
}

#[test]
fn thinning_acceptance_matches_hazard() {
    let cfg = EmConfig::new(1e-2, 2.0, vec![]).unwrap();
    let runs = replicate_map(16, 20_000, |_, rng| {
        sample_two_island_limit(JumpState::new(0, 0.5).unwrap(), 1.0, 1.0, &cfg, rng).unwrap()
    });
    let total_time = cfg.horizon() * runs.len() as f64;
    let accepted: u64 = runs.iter().map(|r| r.accepted).sum();
    let candidates: u64 = runs.iter().map(|r| r.candidates).sum();
    let hazard: f64 = runs.iter().map(|r| r.integrated_hazard).sum();
    // accepted − ∫hazard is a martingale with quadratic variation ∫hazard
    let rate = accepted as f64 / total_time;
    let avg_hazard = hazard / total_time;
    let sigma = hazard.sqrt() / total_time;
    assert!((rate - avg_hazard).abs() <= 3.0 * sigma, "{rate} vs {avg_hazard}");
    let per_time = candidates as f64 / total_time;
    assert!((per_time - 1.0).abs() <= 3.0 / total_time.sqrt());
}

#[test]
fn clamp_frequency_decreases_with_h() {
    let model = DiffusionModel::seedbank(1.0, 1.0).unwrap();
    let start = DiffusionState::new(0.5, 0.5).unwrap();
    let mut last = f64::INFINITY;
    for h in [1e-2, 5e-3, 2.5e-3] {
        let cfg = EmConfig::at_times(h, vec![2.0]).unwrap();
        let paths = simulate_em_replicates(&model, start, &cfg, 17, 2000);
        let clamps: u64 = paths.iter().map(|p| p.clamp_events).sum();
        let steps: u64 = paths.iter().map(|p| p.steps).sum();
        assert!(paths.iter().flat_map(|p| &p.states).all(|s| (0.0..=1.0).contains(&s.x) && (0.0..=1.0).contains(&s.y)));
        let freq = clamps as f64 / steps as f64;
        assert!(freq < last, "h = {h}: {freq}");
        last = freq;
    }
}

#[test]
fn rescaled_process_concentrates_on_boundary() {
    let start = DiffusionState::new(0.5, 0.5).unwrap();
    let near = |s: DiffusionState, delta: f64| s.x.min(1.0 - s.x) < delta;
    let ends = |c: f64, h: f64| -> Vec<DiffusionState> {
        replicate_map(18, 1000, |_, rng| {
            simulate_rescaled(c, 1.0, start, &[1.0], h, DEFAULT_STEP_BUDGET, rng).unwrap().states[0]
        })
    };
    let fraction = |v: &[DiffusionState], delta: f64| v.iter().filter(|s| near(**s, delta)).count() as f64 / v.len() as f64;

    let fine = ends(0.05, 1e-3);
    assert!(fraction(&fine, 0.45) > 0.95);
    let coarse = ends(0.2, 1e-3);
    assert!(fraction(&fine, 0.1) > fraction(&coarse, 0.1));
}

#[test]
fn rescaled_y_moves_slowly_at_small_times() {
    let start = DiffusionState::new(0.5, 0.3).unwrap();
    let t = 0.01;
    let ys: Vec<f64> = replicate_map(19, 2000, |_, rng| {
        simulate_rescaled(0.1, 1.0, start, &[t], 1e-3, DEFAULT_STEP_BUDGET, rng).unwrap().states[0].y
    });
    let (m, sd) = mean_sd(&ys);
    // |dY/dt| ≤ K on the rescaled clock
    assert!((m - 0.3).abs() <= 3.0 * sd + t);
}

#[test]
fn replicates_are_deterministic() {
    let model = DiffusionModel::two_island(0.5, 2.0, 0.5).unwrap();
    let cfg = EmConfig::at_times(1e-2, vec![0.5, 1.0]).unwrap();
    let start = DiffusionState::new(0.3, 0.6).unwrap();
    let a = simulate_em_replicates(&model, start, &cfg, 20, 50);
    let b = simulate_em_replicates(&model, start, &cfg, 20, 50);
    assert_eq!(a, b);
    let c = simulate_em_replicates(&model, start, &cfg, 21, 50);
    assert_ne!(a, c);
}
