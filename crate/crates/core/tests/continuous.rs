use steer_core::continuous::{
    corrupt_continuous, ddpm_step, posterior_step, two_stage_moments, two_stage_step, two_stage_variance_gap,
    ContinuousDenoiser, ContinuousState, GaussianMixture, GmmDenoiser,
};
use steer_core::rng::{Purpose, StreamRng, Streams};
use steer_core::{NoiseSchedule, ScheduleKind};

fn rng(k: u64) -> StreamRng {
    Streams::new(2024).derive(Purpose::Aux, k, 0, 0)
}

fn oracle_mixture() -> GaussianMixture {
    GaussianMixture::new(vec![0.3, 0.7], vec![vec![1.2], vec![-0.7]], vec![vec![0.25], vec![0.6]]).unwrap()
}

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0))
}

#[test]
fn posterior_mean_matches_quadrature() {
    let g = oracle_mixture();
    let mut checked = 0;
    for line in include_str!("data/gmm_quadrature.txt").lines().filter(|l| !l.starts_with('#')) {
        let v: Vec<f64> = line.split_whitespace().map(|s| s.parse().unwrap()).collect();
        let got = g.posterior_mean(&[v[1]], v[0])[0];
        assert!((got - v[2]).abs() < 1e-6, "ab {} x {}: {got} vs {}", v[0], v[1], v[2]);
        checked += 1;
    }
    assert_eq!(checked, 25);
}

#[test]
fn posterior_mean_agrees_with_binned_simulation() {
    let g = oracle_mixture();
    let s = NoiseSchedule::new(ScheduleKind::LinearAlphabar, 10).unwrap();
    let step = 5;
    let mut r = rng(1);
    for center in [-1.0, 0.0, 0.8] {
        let mut hits = Vec::new();
        while hits.len() < 20_000 {
            let x1 = g.sample(&mut r);
            let xt = corrupt_continuous(&x1, step, &s, &mut r).unwrap();
            if (xt.x[0] - center).abs() < 0.02 {
                hits.push(x1[0]);
            }
        }
        let (m, v) = mean_var(&hits);
        let se = (v / hits.len() as f64).sqrt();
        let exact = g.posterior_mean(&[center], s.alpha_bar(step))[0];
        // bin half-width contributes a small bias on top of sampling noise
        assert!((m - exact).abs() < 4.0 * se + 0.01, "center {center}: {m} vs {exact}");
    }
}

#[test]
fn corruption_moments() {
    let s = NoiseSchedule::new(ScheduleKind::Cosine, 20).unwrap();
    let mut r = rng(2);
    for step in [0, 7, 15] {
        let xs: Vec<f64> = (0..100_000).map(|_| corrupt_continuous(&[0.0], step, &s, &mut r).unwrap().x[0]).collect();
        let (m, v) = mean_var(&xs);
        let target = 1.0 - s.alpha_bar(step);
        assert!(m.abs() < 4.0 * (target / 1e5).sqrt(), "mean {m}");
        assert!((v / target - 1.0).abs() < 0.05, "var {v} vs {target}");
    }
    let a = corrupt_continuous(&[0.3, 0.4], 3, &s, &mut rng(3)).unwrap();
    let b = corrupt_continuous(&[0.3, 0.4], 3, &s, &mut rng(3)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn ddpm_and_posterior_step_moments() {
    let s = NoiseSchedule::new(ScheduleKind::Cosine, 20).unwrap();
    let den = GmmDenoiser::new(oracle_mixture(), s.clone());
    let state = ContinuousState::new(vec![0.4], 12);
    let c = s.coeffs(12).unwrap();
    let x1_hat = den.predict_x1(&state.x, 12)[0];
    let mut r = rng(4);
    let n = 100_000;

    let xs: Vec<f64> = (0..n).map(|_| ddpm_step(&state, &den, &s, &mut r).unwrap().x[0]).collect();
    let (m, v) = mean_var(&xs);
    let mean = c.c1 * 0.4 + c.c2 * x1_hat;
    assert!((m - mean).abs() < 4.0 * c.sigma / (n as f64).sqrt());
    assert!((v / (c.sigma * c.sigma) - 1.0).abs() < 0.05);

    let xs: Vec<f64> = (0..n).map(|_| posterior_step(&state, &[-0.5], &s, &mut r).unwrap().x[0]).collect();
    let (m, v) = mean_var(&xs);
    let mean = c.c1 * 0.4 - c.c2 * 0.5;
    assert!((m - mean).abs() < 4.0 * c.beta.sqrt() / (n as f64).sqrt());
    assert!((v / c.beta - 1.0).abs() < 0.05);

    // two-stage composite: same mean as the DDPM step
    let xs: Vec<f64> = (0..n).map(|_| two_stage_step(&state, &den, &s, &mut r).unwrap().x[0]).collect();
    let (m, v) = mean_var(&xs);
    let mean = c.c1 * 0.4 + c.c2 * x1_hat;
    assert!((m - mean).abs() < 4.0 * (v / n as f64).sqrt(), "{m} vs {mean}");
}

#[test]
fn two_stage_mean_identity_and_variance_gap() {
    for kind in [ScheduleKind::LinearAlphabar, ScheduleKind::Cosine] {
        let s = NoiseSchedule::new(kind, 100).unwrap();
        let den = GmmDenoiser::new(oracle_mixture(), s.clone());
        let mut worst_gap = 0.0f64;
        for i in 0..100 {
            let c = s.coeffs(i).unwrap();
            let x = [0.7 - 0.01 * i as f64];
            let u = den.predict_x1(&x, i);
            let (mean, var) = two_stage_moments(&x, &u, &c);
            let ddpm_mean = c.c1 * x[0] + c.c2 * u[0];
            assert!((mean[0] - ddpm_mean).abs() <= 1e-12 * (1.0 + ddpm_mean.abs()));
            let gap = two_stage_variance_gap(&c);
            assert!((var - c.sigma * c.sigma - gap).abs() < 1e-15);
            worst_gap = worst_gap.max(gap.abs());
        }
        println!("{kind:?} T=100: max |two-stage variance - sigma^2| = {worst_gap:.3e}");
    }
}
