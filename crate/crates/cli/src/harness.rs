//! Experiment harness: scene synthesis, algorithm sweeps, evaluation, and
//! deterministic result tables.

use std::path::{Path, PathBuf};

use blinky_bss::auxiva::{auxiva_run, select_channels};
use blinky_bss::blinkiva::{blinkiva_run, projection_back, JointConfig, SeparationReport};
use blinky_bss::metrics::{bss_eval, pairwise_eval, summarize, EvalReport, SummaryStats};
use blinky_bss::scene::{blinky_signals, default_variances, mix, speech_shaped_noise, SceneConfig};
use blinky_bss::stft::{analyze, synthesize, Spectrogram, TimeSignal};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::wav::read_wav;

pub const REFERENCE_MIC: usize = 0;
/// The weak source of the default variance profile.
pub const WEAK_SOURCE: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Auxiva,
    Blinkiva,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::Auxiva => "auxiva",
            Algo::Blinkiva => "blinkiva",
        }
    }
}

impl std::str::FromStr for Algo {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auxiva" => Ok(Algo::Auxiva),
            "blinkiva" => Ok(Algo::Blinkiva),
            other => Err(CliError::Config(format!(
                "unknown algorithm '{other}', expected auxiva or blinkiva"
            ))),
        }
    }
}

/// Scene parameters shared by every grid point; source and microphone
/// counts come from the grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenePlan {
    pub n_blinkies: usize,
    pub n_interferers: usize,
    pub snr_db: f64,
    pub sinr_db: f64,
    pub rir_length: usize,
    pub rir_decay_ms: f64,
    pub duration_s: f64,
    pub seed: u64,
}

impl Default for ScenePlan {
    fn default() -> Self {
        ScenePlan {
            n_blinkies: 6,
            n_interferers: 10,
            snr_db: 60.0,
            sinr_db: 10.0,
            rir_length: 2048,
            rir_decay_ms: 150.0,
            duration_s: 15.0,
            seed: 0,
        }
    }
}

impl ScenePlan {
    pub fn config(&self, n_sources: usize, n_mics: usize, seed: u64) -> SceneConfig {
        SceneConfig {
            n_sources,
            n_mics,
            n_blinkies: self.n_blinkies,
            n_interferers: self.n_interferers,
            source_variances: default_variances(n_sources),
            snr_db: self.snr_db,
            sinr_db: self.sinr_db,
            rir_length: self.rir_length,
            rir_decay_ms: self.rir_decay_ms,
            seed,
            duration_s: self.duration_s,
        }
    }
}

/// Full sweep description: the grid, seeds, STFT geometry, and templates.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentPlan {
    pub n_sources: Vec<usize>,
    pub n_mics: Vec<usize>,
    pub algorithms: Vec<Algo>,
    pub n_seeds: u64,
    /// Source recordings; when empty, bundled speech-shaped noise is used.
    pub source_wavs: Vec<PathBuf>,
    pub sample_rate: u32,
    pub frame_size: usize,
    pub hop: usize,
    pub filter_len: usize,
    pub scene: ScenePlan,
    pub joint: JointConfig,
    pub n_iter: usize,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        ExperimentPlan {
            n_sources: vec![2],
            n_mics: vec![2, 3, 4],
            algorithms: vec![Algo::Auxiva, Algo::Blinkiva],
            n_seeds: 10,
            source_wavs: Vec::new(),
            sample_rate: 16_000,
            frame_size: 4096,
            hop: 2048,
            filter_len: 512,
            scene: ScenePlan::default(),
            joint: JointConfig::default(),
            n_iter: 100,
            out_dir: None,
        }
    }
}

impl ExperimentPlan {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sources.is_empty() || self.n_mics.is_empty() || self.algorithms.is_empty() {
            return Err(CliError::Config(
                "plan needs at least one source count, mic count, and algorithm".into(),
            ));
        }
        if self.n_seeds == 0 {
            return Err(CliError::Config("n_seeds must be >= 1".into()));
        }
        for path in &self.source_wavs {
            if !path.exists() {
                return Err(CliError::Config(format!(
                    "source WAV does not exist: {}",
                    path.display()
                )));
            }
        }
        Ok(())
    }
}

/// One algorithm run on one scene.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub algo: Algo,
    pub n_mics: usize,
    pub n_sources: usize,
    pub seed: u64,
    /// Per reference index (source 0 is the weak source).
    pub sdr_db: Vec<f64>,
    pub sir_db: Vec<f64>,
    /// SIR of the unprocessed reference microphone against each source.
    pub input_sir_db: Vec<f64>,
    pub cost_trace: Vec<f64>,
    pub ip_norm_dev: f64,
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub records: Vec<RunRecord>,
    pub warnings: Vec<String>,
}

fn source_seed(plan_seed: u64, seed: u64, source: usize) -> u64 {
    plan_seed
        .wrapping_add(seed.wrapping_mul(104_729))
        .wrapping_add(source as u64)
}

fn scene_seed(plan_seed: u64, seed: u64, n_sources: usize, n_mics: usize) -> u64 {
    plan_seed
        .wrapping_add(seed.wrapping_mul(1_000_003))
        .wrapping_add((n_mics as u64) << 17)
        .wrapping_add((n_sources as u64) << 33)
}

/// Load or synthesize the source recordings for one (grid point, seed).
fn build_sources(plan: &ExperimentPlan, n_sources: usize, seed: u64) -> Result<TimeSignal> {
    let n_samples = (plan.scene.duration_s * plan.sample_rate as f64).round() as usize;
    let mut data = Array2::<f64>::zeros((n_sources, n_samples));
    if plan.source_wavs.is_empty() {
        for k in 0..n_sources {
            let mut rng =
                ChaCha8Rng::seed_from_u64(source_seed(plan.scene.seed, seed, k));
            let s = speech_shaped_noise(n_samples, plan.sample_rate, &mut rng);
            for (t, &v) in s.iter().enumerate() {
                data[[k, t]] = v;
            }
        }
    } else {
        for k in 0..n_sources {
            let idx = (seed as usize + k) % plan.source_wavs.len();
            let wav = read_wav(&plan.source_wavs[idx], Some(plan.sample_rate))?;
            if wav.n_samples() < n_samples {
                return Err(CliError::Config(format!(
                    "{}: too short, need {:.1} s",
                    plan.source_wavs[idx].display(),
                    plan.scene.duration_s
                )));
            }
            for t in 0..n_samples {
                data[[k, t]] = wav.data[[0, t]];
            }
        }
    }
    TimeSignal::new(data, plan.sample_rate).map_err(CliError::from)
}

/// Synthesize the separated estimate back to the time domain and trim it to
/// the reference length.
fn estimate_signal(spec: &Spectrogram, n_samples: usize) -> Result<TimeSignal> {
    let full = synthesize(spec)?;
    let n_ch = full.n_channels();
    let data = Array2::from_shape_fn((n_ch, n_samples), |(ch, t)| {
        if t < full.n_samples() {
            full.data[[ch, t]]
        } else {
            0.0
        }
    });
    TimeSignal::new(data, full.sample_rate).map_err(CliError::from)
}

fn eval_with_weak_flag(
    references: &TimeSignal,
    estimates: &TimeSignal,
    filter_len: usize,
) -> Result<EvalReport> {
    let mut report = bss_eval(references, estimates, filter_len)?;
    report.weak_source = Some(WEAK_SOURCE);
    Ok(report)
}

/// Reorder a report's per-estimate values by reference index.
fn by_reference(report: &EvalReport, n_sources: usize) -> (Vec<f64>, Vec<f64>) {
    let mut sdr = vec![f64::NAN; n_sources];
    let mut sir = vec![f64::NAN; n_sources];
    for (j, &reference) in report.permutation.iter().enumerate() {
        sdr[reference] = report.sdr_db[j];
        sir[reference] = report.sir_db[j];
    }
    (sdr, sir)
}

/// Run one grid point and seed for every requested algorithm.
fn run_job(plan: &ExperimentPlan, n_sources: usize, n_mics: usize, seed: u64) -> Result<Vec<RunRecord>> {
    let sources = build_sources(plan, n_sources, seed)?;
    let cfg = plan
        .scene
        .config(n_sources, n_mics, scene_seed(plan.scene.seed, seed, n_sources, n_mics));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let scene = mix(&cfg, &sources, &mut rng)?;

    let spec = analyze(&scene.mic_signals, plan.frame_size, plan.hop)?;
    let n_samples = scene.references.n_samples();

    // unprocessed baseline: the reference microphone evaluated against
    // every source image
    let mix_est = TimeSignal::new(
        Array2::from_shape_fn((n_sources, n_samples), |(_, t)| {
            scene.mic_signals.data[[REFERENCE_MIC, t]]
        }),
        plan.sample_rate,
    )?;
    let (_, input_sir_mat) = pairwise_eval(&scene.references, &mix_est, plan.filter_len)?;
    let input_sir: Vec<f64> = (0..n_sources).map(|k| input_sir_mat[[k, k]]).collect();

    let mut records = Vec::new();
    for &algo in &plan.algorithms {
        let (estimates, cost_trace, ip_norm_dev) = match algo {
            Algo::Auxiva => {
                let res = auxiva_run(&spec, plan.n_iter)?;
                let picked = select_channels(&res.demixed, n_sources)?;
                let mut demixed = res.demixed.select_channels(&picked);
                if plan.n_iter > 0 {
                    projection_back(&mut demixed, &res.stack, REFERENCE_MIC, &picked)?;
                }
                (
                    estimate_signal(&demixed, n_samples)?,
                    res.cost_trace,
                    res.ip_norm_dev,
                )
            }
            Algo::Blinkiva => {
                let blinky = blinky_signals(&scene.blinky_mics, plan.frame_size, plan.hop)?;
                let joint = JointConfig {
                    coupling_rank: n_sources,
                    n_iter: plan.n_iter,
                    seed: cfg.seed,
                    ..plan.joint.clone()
                };
                let res = blinkiva_run(&spec, &blinky, &joint)?;
                let mut demixed = res.demixed;
                let channels: Vec<usize> = (0..n_sources).collect();
                if plan.n_iter > 0 {
                    projection_back(&mut demixed, &res.state.stack, REFERENCE_MIC, &channels)?;
                }
                (
                    estimate_signal(&demixed, n_samples)?,
                    res.state.cost_trace,
                    res.ip_norm_dev,
                )
            }
        };
        let report = eval_with_weak_flag(&scene.references, &estimates, plan.filter_len)?;
        let (sdr_db, sir_db) = by_reference(&report, n_sources);
        records.push(RunRecord {
            algo,
            n_mics,
            n_sources,
            seed,
            sdr_db,
            sir_db,
            input_sir_db: input_sir.clone(),
            cost_trace,
            ip_norm_dev,
        });
    }
    Ok(records)
}

/// Execute the full plan. Jobs run in parallel on the global thread pool;
/// results are sorted canonically so the output does not depend on
/// scheduling.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<ExperimentOutcome> {
    plan.validate()?;
    let mut jobs = Vec::new();
    let mut warnings = Vec::new();
    for &n_sources in &plan.n_sources {
        for &n_mics in &plan.n_mics {
            if n_mics < n_sources {
                warnings.push(format!(
                    "skipped infeasible grid point: {n_sources} sources, {n_mics} mics"
                ));
                continue;
            }
            for seed in 0..plan.n_seeds {
                jobs.push((n_sources, n_mics, seed));
            }
        }
    }
    let results: Vec<Result<Vec<RunRecord>>> = jobs
        .par_iter()
        .map(|&(k, m, seed)| run_job(plan, k, m, seed))
        .collect();
    let mut records = Vec::new();
    for result in results {
        records.extend(result?);
    }
    records.sort_by(|a, b| {
        (a.algo, a.n_mics, a.n_sources, a.seed).cmp(&(b.algo, b.n_mics, b.n_sources, b.seed))
    });
    Ok(ExperimentOutcome { records, warnings })
}

/// One results row per (run, source), with the exact column set
/// `algo,n_mics,n_sources,seed,source_index,sdr_db,sir_db`.
pub fn results_csv(records: &[RunRecord]) -> String {
    let mut out = String::from("algo,n_mics,n_sources,seed,source_index,sdr_db,sir_db\n");
    for r in records {
        for k in 0..r.n_sources {
            out.push_str(&format!(
                "{},{},{},{},{},{:.6},{:.6}\n",
                r.algo.name(),
                r.n_mics,
                r.n_sources,
                r.seed,
                k,
                r.sdr_db[k],
                r.sir_db[k]
            ));
        }
    }
    out
}

#[derive(Debug, Serialize)]
pub struct ConditionSummary {
    pub algo: Algo,
    pub n_mics: usize,
    pub n_sources: usize,
    pub sdr: SummaryStats,
    pub sir: SummaryStats,
    pub weak_sdr: SummaryStats,
    pub weak_sir: SummaryStats,
    pub sir_improvement_median: f64,
}

/// Group records by condition and summarize, overall and weak-source-only.
pub fn summarize_records(records: &[RunRecord]) -> Result<Vec<ConditionSummary>> {
    let mut keys: Vec<(Algo, usize, usize)> = records
        .iter()
        .map(|r| (r.algo, r.n_mics, r.n_sources))
        .collect();
    keys.sort();
    keys.dedup();
    let mut out = Vec::new();
    for (algo, n_mics, n_sources) in keys {
        let group: Vec<&RunRecord> = records
            .iter()
            .filter(|r| r.algo == algo && r.n_mics == n_mics && r.n_sources == n_sources)
            .collect();
        let mut sdr = Vec::new();
        let mut sir = Vec::new();
        let mut weak_sdr = Vec::new();
        let mut weak_sir = Vec::new();
        let mut improvement = Vec::new();
        for r in &group {
            for k in 0..r.n_sources {
                sdr.push(r.sdr_db[k]);
                sir.push(r.sir_db[k]);
                improvement.push(r.sir_db[k] - r.input_sir_db[k]);
                if k == WEAK_SOURCE {
                    weak_sdr.push(r.sdr_db[k]);
                    weak_sir.push(r.sir_db[k]);
                }
            }
        }
        out.push(ConditionSummary {
            algo,
            n_mics,
            n_sources,
            sdr: summarize(&sdr)?,
            sir: summarize(&sir)?,
            weak_sdr: summarize(&weak_sdr)?,
            weak_sir: summarize(&weak_sir)?,
            sir_improvement_median: summarize(&improvement)?.median,
        });
    }
    Ok(out)
}

/// Plot-ready summary table.
pub fn summary_csv(summaries: &[ConditionSummary]) -> String {
    let mut out =
        String::from("algo,n_mics,n_sources,subset,metric,median,q25,q75,count\n");
    for s in summaries {
        for (subset, metric, stats) in [
            ("all", "sdr", &s.sdr),
            ("all", "sir", &s.sir),
            ("weak", "sdr", &s.weak_sdr),
            ("weak", "sir", &s.weak_sir),
        ] {
            out.push_str(&format!(
                "{},{},{},{},{},{:.6},{:.6},{:.6},{}\n",
                s.algo.name(),
                s.n_mics,
                s.n_sources,
                subset,
                metric,
                stats.median,
                stats.q25,
                stats.q75,
                stats.count
            ));
        }
    }
    out
}

/// Self-describing JSON summary: the plan echo, warnings, per-condition
/// statistics, and per-run cost diagnostics.
pub fn summary_json(
    plan: &ExperimentPlan,
    outcome: &ExperimentOutcome,
) -> Result<serde_json::Value> {
    let summaries = summarize_records(&outcome.records)?;
    let runs: Vec<serde_json::Value> = outcome
        .records
        .iter()
        .map(|r| {
            serde_json::json!({
                "algo": r.algo.name(),
                "n_mics": r.n_mics,
                "n_sources": r.n_sources,
                "seed": r.seed,
                "sdr_db": r.sdr_db,
                "sir_db": r.sir_db,
                "input_sir_db": r.input_sir_db,
                "cost_initial": r.cost_trace.first(),
                "cost_final": r.cost_trace.last(),
                "ip_norm_dev": r.ip_norm_dev,
            })
        })
        .collect();
    Ok(serde_json::json!({
        "plan": serde_json::to_value(plan).map_err(|e| CliError::Config(e.to_string()))?,
        "warnings": outcome.warnings,
        "conditions": serde_json::to_value(&summaries)
            .map_err(|e| CliError::Config(e.to_string()))?,
        "runs": runs,
    }))
}

/// Write results.csv, summary.csv, and summary.json under `out_dir`.
pub fn write_outputs(
    plan: &ExperimentPlan,
    outcome: &ExperimentOutcome,
    out_dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let results_path = out_dir.join("results.csv");
    std::fs::write(&results_path, results_csv(&outcome.records))
        .map_err(|e| CliError::io(&results_path, e))?;
    let summaries = summarize_records(&outcome.records)?;
    let summary_path = out_dir.join("summary.csv");
    std::fs::write(&summary_path, summary_csv(&summaries))
        .map_err(|e| CliError::io(&summary_path, e))?;
    let json_path = out_dir.join("summary.json");
    let json = summary_json(plan, outcome)?;
    std::fs::write(
        &json_path,
        serde_json::to_string_pretty(&json).map_err(|e| CliError::Config(e.to_string()))?,
    )
    .map_err(|e| CliError::io(&json_path, e))?;
    Ok(())
}

/// Separation report written by the `separate` subcommand.
#[derive(Debug, Serialize)]
pub struct SeparateRunReport {
    pub algo: Algo,
    pub n_iter: usize,
    pub nmf_sub_iter: usize,
    pub n_sources: usize,
    pub frame_size: usize,
    pub hop: usize,
    pub seed: u64,
    pub cost_trace: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<SeparationReport>,
}
