use std::path::PathBuf;
use std::process::ExitCode;

use blinky_bss::auxiva::{auxiva_run, select_channels};
use blinky_bss::blinkiva::{blinkiva_run, projection_back, JointConfig};
use blinky_bss::scene::{blinky_signals, default_variances, mix, speech_shaped_noise, SceneConfig};
use blinky_bss::stft::{analyze, synthesize, TimeSignal};
use clap::{Args, Parser, Subcommand};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use blinky_bss_cli::error::{CliError, Result};
use blinky_bss_cli::harness::{
    run_experiment, summarize_records, summary_csv, write_outputs, Algo, ExperimentPlan,
    RunRecord, SeparateRunReport, REFERENCE_MIC,
};
use blinky_bss_cli::wav::{read_wav, write_wav};

/// Blind source separation with microphones and sound power sensors.
#[derive(Parser)]
#[command(name = "blinky-bss", version, about)]
struct Cli {
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene and write its signals to disk.
    Simulate(SimulateArgs),
    /// Separate a recorded mixture.
    Separate(SeparateArgs),
    /// Run a full benchmark sweep and write result tables.
    Bench(BenchArgs),
    /// Summarize a results table into per-condition statistics.
    Report(ReportArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scene configuration JSON (field names: n_sources, n_mics,
    /// n_blinkies, n_interferers, variances, snr_db, sinr_db, rir_length,
    /// rir_decay_ms, seed, duration_s).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    sources: Option<usize>,
    #[arg(long)]
    mics: Option<usize>,
    #[arg(long)]
    blinkies: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    duration: Option<f64>,
    /// Source WAV files (16 kHz); bundled speech-shaped noise when omitted.
    #[arg(long = "source-wav")]
    source_wavs: Vec<PathBuf>,
    #[arg(long, default_value_t = 16_000)]
    sample_rate: u32,
    #[arg(long, default_value_t = 4096)]
    frame: usize,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SeparateArgs {
    /// Microphone recordings: one multichannel WAV or several mono WAVs.
    #[arg(long = "mics", required = true, num_args = 1..)]
    mics: Vec<PathBuf>,
    /// Blinky power matrix as CSV, one row per sensor.
    #[arg(long)]
    blinky_csv: Option<PathBuf>,
    /// Blinky recordings as WAV files, one channel per sensor.
    #[arg(long = "blinky-wav")]
    blinky_wavs: Vec<PathBuf>,
    #[arg(long, default_value = "blinkiva")]
    algo: String,
    /// Number of sources to extract.
    #[arg(long, default_value_t = 2)]
    sources: usize,
    #[arg(long, default_value_t = 100)]
    iters: usize,
    #[arg(long, default_value_t = 20)]
    nmf_sub_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 16_000)]
    sample_rate: u32,
    #[arg(long, default_value_t = 4096)]
    frame: usize,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Include the demixing matrices and power model in the report.
    #[arg(long)]
    full_report: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// Experiment plan JSON; defaults cover the desk-scale comparison.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long)]
    mics: Option<Vec<usize>>,
    #[arg(long)]
    sources: Option<Vec<usize>>,
    #[arg(long)]
    blinkies: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    nmf_sub_iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    algo: Option<String>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// results.csv produced by `bench`.
    #[arg(long)]
    results: PathBuf,
    /// Output summary CSV path.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = if cli.threads == 0 {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    } else {
        cli.threads
    };
    if let Err(err) = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
    {
        eprintln!("error: {err}");
        return ExitCode::from(2);
    }
    let result = match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Separate(args) => separate(args),
        Command::Bench(args) => bench(args),
        Command::Report(args) => report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn load_scene_config(args: &SimulateArgs) -> Result<SceneConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            serde_json::from_str(&text).map_err(|e| CliError::io(path, e))?
        }
        None => SceneConfig::new(2, 2, 6),
    };
    if let Some(k) = args.sources {
        cfg.n_sources = k;
        cfg.source_variances = default_variances(k);
    }
    if let Some(m) = args.mics {
        cfg.n_mics = m;
    }
    if let Some(b) = args.blinkies {
        cfg.n_blinkies = b;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(duration) = args.duration {
        cfg.duration_s = duration;
    }
    Ok(cfg)
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let cfg = load_scene_config(&args)?;
    cfg.validate()?;
    let n_samples = (cfg.duration_s * args.sample_rate as f64).round() as usize;

    let mut data = Array2::<f64>::zeros((cfg.n_sources, n_samples));
    if args.source_wavs.is_empty() {
        for k in 0..cfg.n_sources {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(k as u64));
            let s = speech_shaped_noise(n_samples, args.sample_rate, &mut rng);
            for (t, &v) in s.iter().enumerate() {
                data[[k, t]] = v;
            }
        }
    } else {
        if args.source_wavs.len() < cfg.n_sources {
            return Err(CliError::Config(format!(
                "{} source WAVs for {} sources",
                args.source_wavs.len(),
                cfg.n_sources
            )));
        }
        for k in 0..cfg.n_sources {
            let wav = read_wav(&args.source_wavs[k], Some(args.sample_rate))?;
            if wav.n_samples() < n_samples {
                return Err(CliError::Config(format!(
                    "{}: too short, need {:.1} s",
                    args.source_wavs[k].display(),
                    cfg.duration_s
                )));
            }
            for t in 0..n_samples {
                data[[k, t]] = wav.data[[0, t]];
            }
        }
    }
    let sources = TimeSignal::new(data, args.sample_rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let scene = mix(&cfg, &sources, &mut rng)?;

    std::fs::create_dir_all(&args.out_dir).map_err(|e| CliError::io(&args.out_dir, e))?;
    write_wav(&args.out_dir.join("mics.wav"), &scene.mic_signals)?;
    write_wav(&args.out_dir.join("blinky_mics.wav"), &scene.blinky_mics)?;
    for k in 0..cfg.n_sources {
        let reference = TimeSignal::new(
            Array2::from_shape_fn((1, n_samples), |(_, t)| scene.references.data[[k, t]]),
            args.sample_rate,
        )?;
        write_wav(&args.out_dir.join(format!("ref_{}.wav", k + 1)), &reference)?;
    }

    let hop = args.frame / 2;
    let blinky = blinky_signals(&scene.blinky_mics, args.frame, hop)?;
    let csv_path = args.out_dir.join("blinky_power.csv");
    let mut csv = String::new();
    for b in 0..blinky.nrows() {
        let row: Vec<String> = (0..blinky.ncols())
            .map(|n| format!("{:.12e}", blinky[[b, n]]))
            .collect();
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    std::fs::write(&csv_path, csv).map_err(|e| CliError::io(&csv_path, e))?;

    let echo = serde_json::json!({
        "config": cfg,
        "sample_rate": args.sample_rate,
        "frame_size": args.frame,
        "hop": hop,
        "calibration": scene.calibration,
    });
    let json_path = args.out_dir.join("scene.json");
    std::fs::write(
        &json_path,
        serde_json::to_string_pretty(&echo).map_err(|e| CliError::Config(e.to_string()))?,
    )
    .map_err(|e| CliError::io(&json_path, e))?;
    println!(
        "wrote scene with {} mics, {} blinkies to {}",
        cfg.n_mics,
        cfg.n_blinkies,
        args.out_dir.display()
    );
    Ok(())
}

fn read_mics(paths: &[PathBuf], sample_rate: u32) -> Result<TimeSignal> {
    if paths.len() == 1 {
        return read_wav(&paths[0], Some(sample_rate));
    }
    let mut channels = Vec::new();
    for path in paths {
        let wav = read_wav(path, Some(sample_rate))?;
        for ch in 0..wav.n_channels() {
            channels.push(wav.channel(ch).to_vec());
        }
    }
    let n_samples = channels.iter().map(|c| c.len()).min().unwrap_or(0);
    if channels.iter().any(|c| c.len() != n_samples) {
        return Err(CliError::Config(
            "microphone recordings have different lengths".into(),
        ));
    }
    let data = Array2::from_shape_fn((channels.len(), n_samples), |(ch, t)| channels[ch][t]);
    TimeSignal::new(data, sample_rate).map_err(CliError::from)
}

fn read_blinky_csv(path: &PathBuf) -> Result<Array2<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| CliError::io(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| CliError::io(path, e))?;
        let row: std::result::Result<Vec<f64>, _> =
            record.iter().map(|v| v.trim().parse::<f64>()).collect();
        rows.push(row.map_err(|e| CliError::io(path, e))?);
    }
    if rows.is_empty() {
        return Err(CliError::Config(format!(
            "{}: empty blinky matrix",
            path.display()
        )));
    }
    let n_cols = rows[0].len();
    if rows.iter().any(|r| r.len() != n_cols) {
        return Err(CliError::Config(format!(
            "{}: ragged blinky matrix",
            path.display()
        )));
    }
    Ok(Array2::from_shape_fn((rows.len(), n_cols), |(b, n)| {
        rows[b][n]
    }))
}

fn separate(args: SeparateArgs) -> Result<()> {
    let algo: Algo = args.algo.parse()?;
    let mics = read_mics(&args.mics, args.sample_rate)?;
    let hop = args.frame / 2;
    let spec = analyze(&mics, args.frame, hop)?;
    let n_sources = args.sources;
    if n_sources == 0 || n_sources > mics.n_channels() {
        return Err(CliError::Config(format!(
            "cannot extract {n_sources} sources from {} channels",
            mics.n_channels()
        )));
    }

    let blinky = if let Some(path) = &args.blinky_csv {
        Some(read_blinky_csv(path)?)
    } else if !args.blinky_wavs.is_empty() {
        let blinky_mics = read_mics(&args.blinky_wavs, args.sample_rate)?;
        Some(blinky_signals(&blinky_mics, args.frame, hop)?)
    } else {
        None
    };

    let (demixed, trace, model) = match algo {
        Algo::Blinkiva => {
            let Some(blinky) = blinky else {
                return Err(CliError::Config(
                    "blinkiva needs blinky data; pass --blinky-csv or --blinky-wav, \
                     or fall back to --algo auxiva"
                        .into(),
                ));
            };
            if blinky.ncols() != spec.n_frames() {
                return Err(CliError::Config(format!(
                    "blinky matrix has {} frames but the mixture has {}",
                    blinky.ncols(),
                    spec.n_frames()
                )));
            }
            let cfg = JointConfig {
                n_iter: args.iters,
                nmf_sub_iter: args.nmf_sub_iters,
                coupling_rank: n_sources,
                seed: args.seed,
                ..JointConfig::default()
            };
            let res = blinkiva_run(&spec, &blinky, &cfg)?;
            let model = args.full_report.then(|| res.report());
            let mut demixed = res.demixed;
            let channels: Vec<usize> = (0..n_sources).collect();
            if args.iters > 0 {
                projection_back(&mut demixed, &res.state.stack, REFERENCE_MIC, &channels)?;
            }
            (demixed, res.state.cost_trace, model)
        }
        Algo::Auxiva => {
            let res = auxiva_run(&spec, args.iters)?;
            let picked = select_channels(&res.demixed, n_sources)?;
            let mut demixed = res.demixed.select_channels(&picked);
            if args.iters > 0 {
                projection_back(&mut demixed, &res.stack, REFERENCE_MIC, &picked)?;
            }
            (demixed, res.cost_trace, None)
        }
    };

    std::fs::create_dir_all(&args.out_dir).map_err(|e| CliError::io(&args.out_dir, e))?;
    let separated = synthesize(&demixed)?;
    let n_samples = mics.n_samples().min(separated.n_samples());
    for k in 0..n_sources {
        let mono = TimeSignal::new(
            Array2::from_shape_fn((1, n_samples), |(_, t)| separated.data[[k, t]]),
            args.sample_rate,
        )?;
        write_wav(&args.out_dir.join(format!("source_{}.wav", k + 1)), &mono)?;
    }
    let report = SeparateRunReport {
        algo,
        n_iter: args.iters,
        nmf_sub_iter: args.nmf_sub_iters,
        n_sources,
        frame_size: args.frame,
        hop,
        seed: args.seed,
        cost_trace: trace,
        model,
    };
    let report_path = args.out_dir.join("report.json");
    std::fs::write(
        &report_path,
        serde_json::to_string_pretty(&report).map_err(|e| CliError::Config(e.to_string()))?,
    )
    .map_err(|e| CliError::io(&report_path, e))?;
    println!(
        "wrote {} separated sources to {}",
        n_sources,
        args.out_dir.display()
    );
    Ok(())
}

fn bench(args: BenchArgs) -> Result<()> {
    let mut plan = match &args.config {
        Some(path) => ExperimentPlan::from_json_file(path)?,
        None => ExperimentPlan::default(),
    };
    if let Some(seeds) = args.seeds {
        plan.n_seeds = seeds;
    }
    if let Some(mics) = args.mics {
        plan.n_mics = mics;
    }
    if let Some(sources) = args.sources {
        plan.n_sources = sources;
    }
    if let Some(blinkies) = args.blinkies {
        plan.scene.n_blinkies = blinkies;
    }
    if let Some(iters) = args.iters {
        plan.n_iter = iters;
    }
    if let Some(nmf_sub) = args.nmf_sub_iters {
        plan.joint.nmf_sub_iter = nmf_sub;
    }
    if let Some(seed) = args.seed {
        plan.scene.seed = seed;
    }
    if let Some(algo) = args.algo {
        plan.algorithms = vec![algo.parse()?];
    }
    let out_dir = plan.out_dir.clone().unwrap_or_else(|| args.out_dir.clone());

    let outcome = run_experiment(&plan)?;
    for warning in &outcome.warnings {
        eprintln!("warning: {warning}");
    }
    write_outputs(&plan, &outcome, &out_dir)?;
    println!(
        "wrote {} result rows to {}",
        outcome.records.len(),
        out_dir.display()
    );
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let mut reader = csv::Reader::from_path(&args.results)
        .map_err(|e| CliError::io(&args.results, e))?;
    // reassemble RunRecords from rows (one row per source)
    let mut records: Vec<RunRecord> = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| CliError::io(&args.results, e))?;
        let parse_err = |e: String| CliError::Config(format!("{}: {e}", args.results.display()));
        let algo: Algo = row
            .get(0)
            .ok_or_else(|| parse_err("missing algo".into()))?
            .parse()?;
        let n_mics: usize = row.get(1).unwrap_or_default().parse().map_err(|_| {
            parse_err("bad n_mics".into())
        })?;
        let n_sources: usize = row.get(2).unwrap_or_default().parse().map_err(|_| {
            parse_err("bad n_sources".into())
        })?;
        let seed: u64 = row.get(3).unwrap_or_default().parse().map_err(|_| {
            parse_err("bad seed".into())
        })?;
        let source_index: usize = row.get(4).unwrap_or_default().parse().map_err(|_| {
            parse_err("bad source_index".into())
        })?;
        let sdr: f64 = row.get(5).unwrap_or_default().parse().map_err(|_| {
            parse_err("bad sdr_db".into())
        })?;
        let sir: f64 = row.get(6).unwrap_or_default().parse().map_err(|_| {
            parse_err("bad sir_db".into())
        })?;
        let existing = records.iter_mut().find(|r| {
            r.algo == algo && r.n_mics == n_mics && r.n_sources == n_sources && r.seed == seed
        });
        let record = match existing {
            Some(r) => r,
            None => {
                records.push(RunRecord {
                    algo,
                    n_mics,
                    n_sources,
                    seed,
                    sdr_db: vec![f64::NAN; n_sources],
                    sir_db: vec![f64::NAN; n_sources],
                    input_sir_db: vec![f64::NAN; n_sources],
                    cost_trace: Vec::new(),
                    ip_norm_dev: 0.0,
                });
                records.last_mut().unwrap()
            }
        };
        if source_index >= n_sources {
            return Err(parse_err(format!("source_index {source_index} out of range")));
        }
        record.sdr_db[source_index] = sdr;
        record.sir_db[source_index] = sir;
    }
    if records.is_empty() {
        return Err(CliError::Config(format!(
            "{}: no result rows",
            args.results.display()
        )));
    }
    let summaries = summarize_records(&records)?;
    std::fs::write(&args.out, summary_csv(&summaries)).map_err(|e| CliError::io(&args.out, e))?;
    println!("wrote summary to {}", args.out.display());
    Ok(())
}
