// Scratch probe for the desk-scale pipeline (removed before release).
use blinky_bss::auxiva::{auxiva_run, select_channels};
use blinky_bss::blinkiva::{blinkiva_run, projection_back, JointConfig};
use blinky_bss::metrics::{bss_eval, pairwise_eval};
use blinky_bss::scene::{blinky_signals, mix, speech_shaped_noise, SceneConfig};
use blinky_bss::stft::{analyze, synthesize, TimeSignal};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let fs = 16_000u32;
    let duration = 8.0f64;
    let frame = 4096usize;
    let hop = 2048usize;
    let n_samples = (duration * fs as f64) as usize;
    let args: Vec<String> = std::env::args().collect();
    let n_mics: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2);
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);
    let n_iter: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(100);

    let t0 = std::time::Instant::now();
    let mut src_rng = ChaCha8Rng::seed_from_u64(1000 + seed);
    let mut data = Array2::<f64>::zeros((2, n_samples));
    for k in 0..2 {
        let s = speech_shaped_noise(n_samples, fs, &mut src_rng);
        for (t, &v) in s.iter().enumerate() {
            data[[k, t]] = v;
        }
    }
    let sources = TimeSignal::new(data, fs).unwrap();

    let mut cfg = SceneConfig::new(2, n_mics, 6);
    cfg.duration_s = duration;
    cfg.seed = seed;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = mix(&cfg, &sources, &mut rng).unwrap();
    println!("scene built in {:?}", t0.elapsed());

    let spec = analyze(&scene.mic_signals, frame, hop).unwrap();
    let blinky = blinky_signals(&scene.blinky_mics, frame, hop).unwrap();
    println!(
        "spec {}x{}x{}, blinky {}x{}",
        spec.n_bins(),
        spec.n_frames(),
        spec.n_channels(),
        blinky.nrows(),
        blinky.ncols()
    );

    // input SIR: the mic-0 mixture as the estimate for each source
    let mix_est = TimeSignal::new(
        Array2::from_shape_fn((2, scene.references.n_samples()), |(_, t)| {
            scene.mic_signals.data[[0, t]]
        }),
        fs,
    )
    .unwrap();
    let (_, input_sir) = pairwise_eval(&scene.references, &mix_est, 512).unwrap();
    println!(
        "input SIR: {:.2} {:.2}",
        input_sir[[0, 0]],
        input_sir[[1, 1]]
    );

    // blinkiva
    let t1 = std::time::Instant::now();
    let jcfg = JointConfig {
        n_iter,
        nmf_sub_iter: 20,
        coupling_rank: 2,
        seed,
        ..JointConfig::default()
    };
    let res = blinkiva_run(&spec, &blinky, &jcfg).unwrap();
    println!("blinkiva in {:?}, ip_dev {:.2e}", t1.elapsed(), res.ip_norm_dev);

    // diagnostic: correlation of fitted coupled variances with the true
    // per-source frame powers (from the dry scaled sources)
    {
        let dry_spec = analyze(&sources, frame, hop).unwrap();
        let true_power = dry_spec.frame_power(); // (K, N)
        let n = true_power.ncols().min(res.state.variances.ncols());
        for k in 0..2 {
            for k_true in 0..2 {
                let a: Vec<f64> = (0..n).map(|i| res.state.variances[[k, i]]).collect();
                let b: Vec<f64> = (0..n).map(|i| true_power[[k_true, i]]).collect();
                let ma = a.iter().sum::<f64>() / n as f64;
                let mb = b.iter().sum::<f64>() / n as f64;
                let mut num = 0.0;
                let mut da = 0.0;
                let mut db = 0.0;
                for i in 0..n {
                    num += (a[i] - ma) * (b[i] - mb);
                    da += (a[i] - ma).powi(2);
                    db += (b[i] - mb).powi(2);
                }
                print!("  corr(r{k}, true{k_true}) = {:+.3}", num / (da * db).sqrt());
            }
            println!();
        }
    }

    let trace = &res.state.cost_trace;
    let mut increases = 0usize;
    let mut max_rel = 0.0f64;
    for w in trace.windows(2) {
        if w[1] > w[0] {
            increases += 1;
            max_rel = max_rel.max((w[1] - w[0]) / w[0].abs());
        }
    }
    println!(
        "trace: {} steps, {} increases, max rel increase {:.2e}, J0 {:.4e} Jend {:.4e}",
        trace.len() - 1,
        increases,
        max_rel,
        trace[0],
        trace[trace.len() - 1]
    );

    let mut demixed = res.demixed.clone();
    projection_back(&mut demixed, &res.state.stack, 0, &[0, 1]).unwrap();
    let est = synthesize(&demixed).unwrap();
    let est_trim = TimeSignal::new(
        Array2::from_shape_fn((2, scene.references.n_samples()), |(k, t)| {
            est.data[[k, t]]
        }),
        fs,
    )
    .unwrap();
    let t2 = std::time::Instant::now();
    let report = bss_eval(&scene.references, &est_trim, 512).unwrap();
    println!("eval in {:?}", t2.elapsed());
    println!(
        "blinkiva SIR {:?} SDR {:?} perm {:?}",
        report.sir_db, report.sdr_db, report.permutation
    );

    // auxiva
    let t3 = std::time::Instant::now();
    let aux = auxiva_run(&spec, n_iter).unwrap();
    println!("auxiva in {:?}", t3.elapsed());
    let picked = select_channels(&aux.demixed, 2).unwrap();
    let mut demixed = aux.demixed.select_channels(&picked);
    projection_back(&mut demixed, &aux.stack, 0, &picked).unwrap();
    let est = synthesize(&demixed).unwrap();
    let est_trim = TimeSignal::new(
        Array2::from_shape_fn((2, scene.references.n_samples()), |(k, t)| {
            est.data[[k, t]]
        }),
        fs,
    )
    .unwrap();
    let report = bss_eval(&scene.references, &est_trim, 512).unwrap();
    println!(
        "auxiva   SIR {:?} SDR {:?} perm {:?}",
        report.sir_db, report.sdr_db, report.permutation
    );
    println!("total {:?}", t0.elapsed());
}
