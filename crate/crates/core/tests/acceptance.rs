//! One PASS/FAIL line per acceptance criterion. Exits non-zero if any fail.

use std::fs;
use std::process::Command;
use std::time::{Duration, Instant};

use ada_core::color::{apply_filter, bandpass_filters, build_amplification_filter};
use ada_core::controller::{
    heuristic_rv, simulate, ControllerState, LinearRtModel, OverfitStats,
};
use ada_core::gradcheck::{gradcheck, GradcheckOptions};
use ada_core::leakage::{
    build_group_operator, build_projection_mixture, coordinate_projection, cyclic_shift_action,
    dft_magnitudes, dft_zero_check, gated_uniform_mixture, null_space_witness, product_noise_cf,
    MarkovOperator, MixtureSpec, DEFAULT_TOL,
};
use ada_core::params::FilterGain;
use ada_core::pipeline::{augment, sample_record, Categories, PipelineConfig};
use ada_core::wavelet::{downsample2x2, upsample2x2, WaveletFilter};
use ada_core::ImageBatch;
use nalgebra::DMatrix;
use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize, h: usize, w: usize) -> ImageBatch {
    ImageBatch::new(Array4::from_shape_fn((n, 3, h, w), |_| rng.random_range(-1.0..1.0))).unwrap()
}

fn random_probs(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    let mut p: Vec<f64> = raw.iter().map(|v| v / total).collect();
    let rest: f64 = p[1..].iter().sum();
    p[0] = 1.0 - rest;
    p
}

fn identity_suite() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let img = random_batch(&mut rng, 8, 32, 32);
    let mut worst = 0.0f64;
    for cats in [Categories::default(), Categories::ALL] {
        let (out, _) = augment(&img, &PipelineConfig::new(0.0, cats, 5).unwrap(), 0).unwrap();
        worst = worst.max(out.max_abs_diff(&img));
    }
    for p in [0.5, 1.0] {
        let (out, _) = augment(&img, &PipelineConfig::new(p, Categories::NONE, 5).unwrap(), 0).unwrap();
        worst = worst.max(out.max_abs_diff(&img));
    }
    ensure(worst <= 1e-6, format!("max deviation {worst:e}"))?;
    let blit = Categories { blit: true, ..Categories::NONE };
    let (out, _) = augment(&img, &PipelineConfig::new(0.0, blit, 5).unwrap(), 0).unwrap();
    ensure(out == img, "blit-only p=0 not bit-exact")?;
    let t = start.elapsed();
    ensure(t < Duration::from_secs(10), format!("took {t:?}"))?;
    Ok(format!("max deviation {worst:e}, {t:.2?}"))
}

fn wavelet_suite() -> Check {
    let f = WaveletFilter::sym6();
    let h = f.taps();
    let sum: f64 = h.iter().sum();
    ensure((sum - 2f64.sqrt()).abs() <= 1e-10, format!("sum {sum}"))?;
    let mut ortho = 0.0f64;
    for k in 0..h.len() / 2 {
        let acc: f64 = (0..h.len() - 2 * k).map(|n| h[n] * h[n + 2 * k]).sum();
        let expect = if k == 0 { 1.0 } else { 0.0 };
        ortho = ortho.max((acc - expect).abs());
    }
    ensure(ortho <= 1e-10, format!("orthogonality error {ortho:e}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let img = random_batch(&mut rng, 1, 64, 64);
        let back = downsample2x2(&upsample2x2(&img, &f).unwrap(), &f).unwrap();
        worst = worst.max(back.max_abs_diff(&img));
    }
    ensure(worst <= 1e-6, format!("round trip error {worst:e}"))?;
    Ok(format!("orthogonality {ortho:.1e}, round trip {worst:.1e}"))
}

fn bandpass_partition() -> Check {
    let bank = WaveletFilter::sym2();
    let taps = build_amplification_filter(&FilterGain::UNITY, &bank).unwrap();
    let mid = taps.len() / 2;
    let err = taps
        .iter()
        .enumerate()
        .map(|(i, t)| (t - if i == mid { 1.0 } else { 0.0 }).abs())
        .fold(0.0, f64::max);
    ensure(err <= 1e-8, format!("combined filter differs from a delta by {err:e}"))?;
    // Independent sum of the four bands.
    let bands = bandpass_filters(&bank);
    let summed = (0..taps.len()).map(|i| bands.iter().map(|b| b[i]).sum::<f64>() - if i == mid { 1.0 } else { 0.0 });
    let err2 = summed.map(f64::abs).fold(0.0, f64::max);
    ensure(err2 <= 1e-8, format!("band sum error {err2:e}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let img = random_batch(&mut rng, 1, 16, 16);
    let err3 = apply_filter(&img, &taps).unwrap().max_abs_diff(&img);
    ensure(err3 <= 1e-8, format!("image filtering error {err3:e}"))?;
    Ok(format!("delta error {err:.1e}"))
}

fn gradient_suite() -> Check {
    let start = Instant::now();
    let mut parts = Vec::new();
    for p in [0.2, 0.5, 0.8, 1.0] {
        let r = gradcheck(&GradcheckOptions { p, samples: 100, height: 32, width: 32, seed: 11, ..Default::default() })
            .unwrap();
        ensure(r.passed(), format!("p={p}: max rel error {:e} at {:?}", r.max_rel_error, r.worst))?;
        parts.push(format!("p={p}:{:.1e}", r.max_rel_error));
    }
    let t = start.elapsed();
    ensure(t < Duration::from_secs(120), format!("took {t:?}"))?;
    Ok(format!("{} ({t:.2?})", parts.join(" ")))
}

fn controller_suite() -> Check {
    let mut c = ControllerState::default();
    for _ in 0..4 {
        c.update(&OverfitStats::train_only(vec![0.5; 64]), 64).unwrap();
    }
    ensure(c.p().get() == 0.000512, format!("delta {}", c.p().get()))?;

    let model = LinearRtModel { intercept: 0.9, slope: 1.0 };
    let p_star = model.fixed_point(0.6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let traj = simulate(&ControllerState::default(), &model, 16_000, 64, &mut rng).unwrap();
    let tail = &traj[traj.len() * 3 / 4..];
    let dev = tail.iter().map(|t| (t.p - p_star).abs()).fold(0.0, f64::max);
    ensure(dev <= 0.05, format!("tail deviation {dev} from p*={p_star}"))?;

    let mut fuzz = ControllerState::default();
    for _ in 0..20_000 {
        let n = rng.random_range(1..256);
        let scale = 10f64.powf(rng.random_range(-6.0..6.0));
        let d: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0) * scale).collect();
        fuzz.update(&OverfitStats::train_only(d), n).unwrap();
        let p = fuzz.p().get();
        ensure((0.0..=1.0).contains(&p), format!("p escaped to {p}"))?;
    }

    let at = |val: f64| {
        heuristic_rv(&OverfitStats { d_train: vec![2.0], d_generated: vec![-1.0], d_validation: Some(vec![val]) })
            .unwrap()
    };
    ensure(at(2.0) == 0.0 && at(-1.0) == 1.0, format!("rv endpoints {} {}", at(2.0), at(-1.0)))?;
    Ok(format!("p*={p_star}, tail deviation {dev:.3}"))
}

fn analyzer_suite() -> Check {
    let uniform = MixtureSpec::cyclic(vec![0.25; 4]).unwrap();
    let mags = dft_magnitudes(&uniform.probs, 4);
    let dev = mags.iter().zip([1.0, 0.0, 0.0, 0.0]).map(|(m, e)| (m - e).abs()).fold(0.0, f64::max);
    ensure(dev <= 1e-12, format!("uniform DFT {mags:?}"))?;
    ensure(!dft_zero_check(&uniform, DEFAULT_TOL).unwrap().invertible, "uniform Z4 reported invertible")?;

    let half = dft_zero_check(&MixtureSpec::cyclic(vec![0.5, 0.5, 0.0, 0.0]).unwrap(), DEFAULT_TOL).unwrap();
    ensure(!half.invertible && half.zero_frequencies.len() == 1, format!("zeros {:?}", half.zero_frequencies))?;

    for i in 0..10 {
        let p = i as f64 / 10.0;
        let c = dft_zero_check(&gated_uniform_mixture(4, p).unwrap(), DEFAULT_TOL).unwrap().condition;
        ensure((c - 1.0 / (1.0 - p)).abs() <= 1e-9, format!("gated p={p}: condition {c}"))?;
    }

    let id = MarkovOperator::identity(2);
    let flip = MarkovOperator::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
    let mix = (id.matrix() + flip.matrix()) * 0.5;
    ensure(mix == DMatrix::from_element(2, 2, 0.5), "flip mixture is not the all-halves matrix")?;
    ensure(!null_space_witness(&MarkovOperator::new(mix).unwrap(), DEFAULT_TOL).unwrap().invertible, "flip mixture invertible")?;

    let k = 32;
    let projections: Vec<DMatrix<f64>> = (0..4).map(|j| coordinate_projection(k, j * 8..j * 8 + 8)).collect();
    for p0 in [0.01, 0.2, 0.6] {
        let w = (1.0 - p0) / 4.0;
        let (_, v) = build_projection_mixture(p0, &projections, &[w; 4], DEFAULT_TOL).unwrap();
        ensure(v.invertible && v.min_measure >= p0 - 1e-12, format!("p0={p0}: sigma_min {}", v.min_measure))?;
    }

    let c0 = product_noise_cf(&[0.0, 0.0], 0.0).unwrap();
    let c1 = product_noise_cf(&[0.6, 0.8], 0.0).unwrap();
    ensure((c0 - 1.0).abs() <= 1e-12, format!("cf(0) = {c0}"))?;
    ensure((c1 - 0.5f64.sqrt()).abs() <= 1e-12, format!("cf(|w|=1) = {c1}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..1000 {
        let w = [rng.random_range(-1e3..1e3), rng.random_range(-1e3..1e3)];
        let v = product_noise_cf(&w, rng.random_range(0.0..1.0)).unwrap();
        ensure(v > 0.0, format!("cf({w:?}) = {v}"))?;
    }
    Ok("all reference cases reproduced".into())
}

fn circulant_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for n in [2, 4, 8, 16] {
        for _ in 0..50 {
            let spec = MixtureSpec::cyclic(random_probs(&mut rng, n)).unwrap();
            let op = build_group_operator(&spec, n, &cyclic_shift_action(n)).unwrap();
            let mut mags = dft_magnitudes(&spec.probs, n);
            mags.sort_by(|a, b| b.total_cmp(a));
            for (s, m) in op.singular_values().iter().zip(&mags) {
                worst = worst.max((s - m).abs());
            }
        }
    }
    ensure(worst <= 1e-9, format!("max difference {worst:e}"))?;
    Ok(format!("max difference {worst:.1e}"))
}

fn determinism() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let img = random_batch(&mut rng, 6, 24, 24);
    let cfg = PipelineConfig::new(0.9, Categories::ALL, 17).unwrap();
    let (whole, records) = augment(&img, &cfg, 100).unwrap();
    let (a, ra) = augment(&img.slice(0..2), &cfg, 100).unwrap();
    let (b, rb) = augment(&img.slice(2..6), &cfg, 102).unwrap();
    ensure(ImageBatch::concat(&[a, b]).unwrap() == whole, "batch split changed pixels")?;
    ensure([ra, rb].concat() == records, "batch split changed records")?;

    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.png");
    image::RgbImage::from_fn(32, 32, |x, y| image::Rgb([(x * 8) as u8, (y * 8) as u8, ((x + y) * 4) as u8]))
        .save(&input)
        .unwrap();
    let mut outputs = Vec::new();
    for run in 0..2 {
        let out_dir = dir.path().join(format!("run{run}"));
        let status = Command::new(env!("CARGO_BIN_EXE_ada"))
            .args(["apply", input.to_str().unwrap(), "--p", "1", "--categories", "all", "--seed", "7"])
            .arg("--out-dir")
            .arg(&out_dir)
            .output()
            .unwrap();
        ensure(status.status.success(), "ada apply failed")?;
        outputs.push((fs::read(out_dir.join("in.aug.png")).unwrap(), fs::read(out_dir.join("in.records.json")).unwrap()));
    }
    ensure(outputs[0] == outputs[1], "CLI re-run differs")?;
    Ok("batch split and CLI re-run identical".into())
}

fn clean_frequency() -> Check {
    let n = 100_000u64;
    let mut parts = Vec::new();
    for (cats, p) in [(Categories::default(), 0.05), (Categories::default(), 0.2), (Categories::ALL, 0.05)] {
        let cfg = PipelineConfig::new(p, cats, 31).unwrap();
        let clean = (0..n).filter(|&i| sample_record(&cfg, i, 32, 32).unwrap().is_clean()).count() as f64 / n as f64;
        let expect = (1.0 - p).powi(cats.gate_count() as i32);
        let se = (expect * (1.0 - expect) / n as f64).sqrt();
        let z = (clean - expect) / se;
        ensure(z.abs() <= 3.0, format!("k={} p={p}: {clean} vs {expect} ({z:.2} s.e.)", cats.gate_count()))?;
        parts.push(format!("k={} p={p}: {z:+.2} s.e.", cats.gate_count()));
    }
    Ok(parts.join(", "))
}

fn main() {
    let suites: [(&str, fn() -> Check); 9] = [
        ("identity suite", identity_suite),
        ("wavelet suite", wavelet_suite),
        ("bandpass partition of unity", bandpass_partition),
        ("gradient suite", gradient_suite),
        ("controller suite", controller_suite),
        ("analyzer suite", analyzer_suite),
        ("circulant equivalence", circulant_equivalence),
        ("determinism", determinism),
        ("clean-image frequency", clean_frequency),
    ];
    let mut failed = 0;
    for (name, check) in suites {
        match std::panic::catch_unwind(check) {
            Ok(Ok(detail)) => println!("PASS  {name}: {detail}"),
            Ok(Err(why)) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
            Err(_) => {
                failed += 1;
                println!("FAIL  {name}: panicked");
            }
        }
    }
    println!("{} of {} criteria passed", suites.len() - failed, suites.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
