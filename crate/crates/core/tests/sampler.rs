use ada_core::params::{
    sample_color, sample_corruption, sample_filter, sample_geom, AugmentStrength, GeomStep,
    MEAN_NOISE_SIGMA,
};
use ada_core::rng::CounterRng;

const DRAWS: u64 = 100_000;

fn within_binomial(count: u64, n: u64, prob: f64, k: f64) -> bool {
    let se = (prob * (1.0 - prob) / n as f64).sqrt();
    ((count as f64 / n as f64) - prob).abs() <= k * se.max(1e-12)
}

#[test]
fn geometric_gate_frequencies() {
    let p = AugmentStrength::new(0.4).unwrap();
    let p_rot = p.rotation_probability();
    let mut counts = [0u64; 8];
    let mut any_rotation = 0u64;
    for i in 0..DRAWS {
        let g = sample_geom(p, 32, 32, &mut CounterRng::new(7, i)).unwrap();
        let mut rotated = false;
        for step in &g.fired {
            let k = match step {
                GeomStep::XFlip { .. } => 0,
                GeomStep::Rotate90 { .. } => 1,
                GeomStep::IntTranslate { .. } => 2,
                GeomStep::IsoScale { .. } => 3,
                GeomStep::PreRotate { .. } => 4,
                GeomStep::AnisoScale { .. } => 5,
                GeomStep::PostRotate { .. } => 6,
                GeomStep::FracTranslate { .. } => 7,
            };
            counts[k] += 1;
            rotated |= matches!(step, GeomStep::PreRotate { .. } | GeomStep::PostRotate { .. });
        }
        any_rotation += u64::from(rotated);
    }
    for (k, &c) in counts.iter().enumerate() {
        let prob = if k == 4 || k == 6 { p_rot } else { p.get() };
        assert!(within_binomial(c, DRAWS, prob, 3.0), "step {k}: {c} of {DRAWS}, expected {prob}");
    }
    assert!(within_binomial(any_rotation, DRAWS, p.get(), 3.0), "any rotation: {any_rotation}");
}

#[test]
fn color_filter_corruption_gate_frequencies() {
    let p = AugmentStrength::new(0.3).unwrap();
    let mut color = [0u64; 5];
    let mut bands = [0u64; 4];
    let mut noise = 0u64;
    let mut cutout = 0u64;
    let mut sigma_sum = 0.0;
    let mut sigma_sq = 0.0;
    for i in 0..DRAWS {
        let mut rng = CounterRng::new(11, i);
        let c = sample_color(p, &mut rng).unwrap();
        for step in &c.fired {
            let k = match step {
                ada_core::params::ColorStep::Brightness { .. } => 0,
                ada_core::params::ColorStep::Contrast { .. } => 1,
                ada_core::params::ColorStep::LumaFlip { .. } => 2,
                ada_core::params::ColorStep::Hue { .. } => 3,
                ada_core::params::ColorStep::Saturation { .. } => 4,
            };
            color[k] += 1;
        }
        let f = sample_filter(p, &mut rng).unwrap();
        for (b, fired) in f.fired.iter().enumerate() {
            bands[b] += u64::from(*fired);
        }
        assert!(f.gains.iter().all(|g| *g > 0.0));
        let corr = sample_corruption(p, &mut rng).unwrap();
        if corr.cutout_center.is_some() {
            cutout += 1;
        }
        // sigma = |z| is zero with probability zero when the gate fires.
        if corr.noise_sigma > 0.0 {
            noise += 1;
            sigma_sum += corr.noise_sigma;
            sigma_sq += corr.noise_sigma * corr.noise_sigma;
        }
    }
    for (k, &c) in color.iter().chain(bands.iter()).enumerate() {
        assert!(within_binomial(c, DRAWS, 0.3, 3.0), "gate {k}: {c}");
    }
    assert!(within_binomial(noise, DRAWS, 0.3, 3.0));
    assert!(within_binomial(cutout, DRAWS, 0.3, 3.0));

    let n = noise as f64;
    let mean = sigma_sum / n;
    let se = ((sigma_sq / n - mean * mean) / n).sqrt();
    assert!((mean - MEAN_NOISE_SIGMA).abs() <= 3.0 * se, "mean sigma {mean} vs {MEAN_NOISE_SIGMA}");
}

#[test]
fn half_normal_mean_over_fired_draws() {
    // 1e5 fired draws at p = 1.
    let p = AugmentStrength::new(1.0).unwrap();
    let sig: Vec<f64> = (0..DRAWS)
        .map(|i| sample_corruption(p, &mut CounterRng::new(3, i)).unwrap().noise_sigma)
        .collect();
    let n = sig.len() as f64;
    let mean = sig.iter().sum::<f64>() / n;
    let var = sig.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let oracle = 0.1 * (2.0 / std::f64::consts::PI).sqrt();
    assert!((mean - oracle).abs() <= 3.0 * (var / n).sqrt(), "{mean} vs {oracle}");
}

#[test]
fn log_normal_scale_spread() {
    let p = AugmentStrength::new(1.0).unwrap();
    let mut logs = Vec::new();
    for i in 0..20_000 {
        let g = sample_geom(p, 16, 16, &mut CounterRng::new(5, i)).unwrap();
        for step in g.fired {
            if let GeomStep::IsoScale { s } = step {
                logs.push(s.log2());
            }
        }
    }
    let n = logs.len() as f64;
    let mean = logs.iter().sum::<f64>() / n;
    let sd = (logs.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!(mean.abs() < 0.01, "mean log2 scale {mean}");
    assert!((sd - 0.2).abs() < 0.005, "sd log2 scale {sd}");
}

#[test]
fn sampling_is_deterministic() {
    let p = AugmentStrength::new(0.7).unwrap();
    for i in 0..50 {
        let a = sample_geom(p, 20, 30, &mut CounterRng::new(1, i)).unwrap();
        let b = sample_geom(p, 20, 30, &mut CounterRng::new(1, i)).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn rotation_probability_at_half() {
    let p = AugmentStrength::new(0.5).unwrap();
    assert!((p.rotation_probability() - 0.292_893_218_813_452_5).abs() < 1e-15);
}
