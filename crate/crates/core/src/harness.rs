//! Experiment execution and artifact export behind the command-line tool.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::cost::{cost_report, CostInputs, Fraction};
use crate::data::encode_corpus;
use crate::error::{Error, Result};
use crate::fed::{
    run_training, verify_ledger, CommLedger, GrowthEvent, LedgerVerification, Mode, RoundReport,
};
use crate::model::{DynamicTransformer, PayloadMode};
use crate::rng::RNG_VERSION;

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "final_weights.fdtw";
pub const CORPUS_FILE: &str = "corpus.fdtc";
pub const COMPARISON_FILE: &str = "comparison.json";

pub const METRICS_HEADER: &str = "t,l_t,mean_train_loss,eval_loss,downlink_bytes,uplink_bytes,\
cum_bytes,exchanged_layers,block_bytes,cum_param_steps";

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParamSummary {
    pub per_enc_block: usize,
    pub per_dec_block: usize,
    pub fixed: usize,
    pub total: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub mode: Mode,
    pub seed: u64,
    pub rounds: u64,
    pub num_clients: usize,
    pub clients_per_round: usize,
    pub local_iters: u64,
    pub final_layers: usize,
    pub final_eval_loss: f64,
    pub final_train_loss: f64,
    pub first_eval_loss: f64,
    pub total_bytes: u64,
    pub total_block_bytes: u64,
    pub total_fixed_bytes: u64,
    pub cum_param_steps: u64,
    pub growth_rounds: Vec<u64>,
    pub growth_events: Vec<GrowthEvent>,
    pub layer_trace: Vec<usize>,
    pub params: ParamSummary,
    /// Exact check of the ledger against the closed-form totals; present
    /// when the run uses the uniform schedule.
    pub ledger_check: Option<LedgerVerification>,
    pub rng_version: String,
}

/// Everything a finished run produced, before anything touches disk.
pub struct RunResult {
    pub config: RunConfig,
    pub summary: RunSummary,
    pub reports: Vec<RoundReport>,
    pub ledger: CommLedger,
    pub model: DynamicTransformer,
    pub corpus: Vec<u8>,
}

/// Runs the configured experiment in memory.
pub fn execute(cfg: &RunConfig) -> Result<RunResult> {
    cfg.validate()?;
    let data = cfg.build_data()?;
    let corpus = encode_corpus(&data.corpus, cfg.model.frame_dim);
    let fed = &cfg.federated;
    let out = run_training(&cfg.model, fed, data.shards, data.test)?;

    let effective = fed.effective_model(&cfg.model);
    let pc = out.param_count;
    let ledger_check = if fed.growth_steps.is_none() {
        let inputs = CostInputs::new(
            fed.rounds,
            effective.growth_parts as u64,
            effective.target_layers as u64,
            pc.per_enc_block as u64,
            pc.per_dec_block as u64,
        )?;
        Some(verify_ledger(&out.ledger, &inputs, fed.mode)?)
    } else {
        None
    };
    let last = out.reports.last().expect("at least one round");
    let summary = RunSummary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        mode: fed.mode,
        seed: fed.seed,
        rounds: fed.rounds,
        num_clients: fed.num_clients,
        clients_per_round: fed.clients_per_round(),
        local_iters: fed.local_iters,
        final_layers: out.model.layers(),
        final_eval_loss: last.eval_loss,
        final_train_loss: last.mean_train_loss,
        first_eval_loss: out.reports[0].eval_loss,
        total_bytes: out.ledger.total_bytes(),
        total_block_bytes: out.ledger.total_block_bytes(),
        total_fixed_bytes: out.ledger.total_fixed_bytes(),
        cum_param_steps: last.cum_param_steps,
        growth_rounds: out.growth_events.iter().map(|e| e.round).collect(),
        growth_events: out.growth_events.clone(),
        layer_trace: out.reports.iter().map(|r| r.layers).collect(),
        params: ParamSummary {
            per_enc_block: pc.per_enc_block,
            per_dec_block: pc.per_dec_block,
            fixed: pc.fixed_params,
            total: pc.total(),
        },
        ledger_check,
        rng_version: RNG_VERSION.to_string(),
    };
    Ok(RunResult {
        config: cfg.clone(),
        summary,
        reports: out.reports,
        ledger: out.ledger,
        model: out.model,
        corpus,
    })
}

pub fn metrics_csv(reports: &[RoundReport]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in reports {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.round,
            r.layers,
            r.mean_train_loss,
            r.eval_loss,
            r.downlink_bytes,
            r.uplink_bytes,
            r.cum_bytes,
            r.exchanged_layers,
            r.block_bytes,
            r.cum_param_steps
        )
        .expect("write to string");
    }
    s
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

/// Git-style object hash over SHA-256: `sha256("blob <len>\0" ‖ content)`.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    let mut out = String::with_capacity(71);
    out.push_str("sha256:");
    for b in h.finalize() {
        write!(out, "{b:02x}").expect("write to string");
    }
    out
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, Serialize)]
pub struct ManifestFile {
    pub name: String,
    pub bytes: usize,
    pub hash: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub config: RunConfig,
    pub rng_version: String,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub files: Vec<ManifestFile>,
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

/// Writes the metrics CSV, summary, weights, corpus and manifest into `dir`.
pub fn write_run(result: &RunResult, dir: &Path, started_unix_ms: u128) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files: Vec<(&str, Vec<u8>)> = vec![
        (METRICS_FILE, metrics_csv(&result.reports).into_bytes()),
        (SUMMARY_FILE, to_json(&result.summary).into_bytes()),
        (WEIGHTS_FILE, result.model.serialize(PayloadMode::Full)),
        (CORPUS_FILE, result.corpus.clone()),
    ];
    let mut listed = Vec::with_capacity(files.len());
    for (name, bytes) in &files {
        write_file(&dir.join(name), bytes)?;
        listed.push(ManifestFile {
            name: name.to_string(),
            bytes: bytes.len(),
            hash: content_hash(bytes),
        });
    }
    let manifest = RunManifest {
        schema_version: SUMMARY_SCHEMA_VERSION,
        config: result.config.clone(),
        rng_version: RNG_VERSION.to_string(),
        started_unix_ms,
        finished_unix_ms: now_ms(),
        files: listed,
    };
    write_file(&dir.join(MANIFEST_FILE), to_json(&manifest).as_bytes())
}

/// `run <config> --out <dir>`.
pub fn cmd_run(config_path: &Path, out_dir: &Path) -> Result<RunSummary> {
    let started = now_ms();
    let cfg = RunConfig::load(config_path)?;
    let result = execute(&cfg)?;
    write_run(&result, out_dir, started)?;
    Ok(result.summary)
}

// ---- compare -----------------------------------------------------------

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Eval loss of the last round whose cumulative traffic is within `bytes`.
pub fn loss_at_bytes(reports: &[RoundReport], bytes: u64) -> Option<f64> {
    reports
        .iter()
        .take_while(|r| r.cum_bytes <= bytes)
        .last()
        .map(|r| r.eval_loss)
}

/// Cumulative traffic when eval loss first reaches `target`.
pub fn bytes_to_target(reports: &[RoundReport], target: f64) -> Option<u64> {
    reports
        .iter()
        .find(|r| r.eval_loss <= target)
        .map(|r| r.cum_bytes)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SlotSummary {
    pub config: String,
    pub mode: Mode,
    pub final_eval_loss: Vec<f64>,
    pub median_final_eval_loss: f64,
    pub total_bytes: Vec<u64>,
    pub cum_block_bytes: Vec<u64>,
    pub cum_param_steps: Vec<u64>,
    pub bytes_to_target: Vec<Option<u64>>,
    pub median_bytes_to_target: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EqualBytesPoint {
    pub bytes: u64,
    pub median_loss_a: f64,
    pub median_loss_b: f64,
}

/// Median eval loss of both slots at matched cumulative traffic, from half
/// of the smaller byte budget up to the full budget.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EqualBytes {
    pub budget: u64,
    pub points: Vec<EqualBytesPoint>,
    pub b_not_worse_everywhere: bool,
    pub a_not_worse_everywhere: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Comparison {
    pub schema_version: u32,
    pub seeds: Vec<u64>,
    pub a: SlotSummary,
    pub b: SlotSummary,
    /// Loss both slots are asked to reach: the worse of the two median
    /// final losses.
    pub target_loss: f64,
    /// Block bytes of `b` over block bytes of `a`, first seed.
    pub block_byte_ratio: Fraction,
    pub block_byte_ratio_value: f64,
    pub final_loss_ratio_b_over_a: f64,
    pub equal_bytes: EqualBytes,
    pub rng_version: String,
}

pub fn equal_bytes(a: &[Vec<RoundReport>], b: &[Vec<RoundReport>]) -> EqualBytes {
    let final_bytes = |runs: &[Vec<RoundReport>]| {
        runs.iter()
            .map(|r| r.last().map_or(0, |x| x.cum_bytes))
            .min()
            .unwrap_or(0)
    };
    let budget = final_bytes(a).min(final_bytes(b));
    let mut marks: Vec<u64> = a
        .iter()
        .chain(b)
        .flatten()
        .map(|r| r.cum_bytes)
        .filter(|&c| 2 * c >= budget && c <= budget)
        .collect();
    marks.sort_unstable();
    marks.dedup();
    let med = |runs: &[Vec<RoundReport>], bytes: u64| -> Option<f64> {
        let v: Option<Vec<f64>> = runs.iter().map(|r| loss_at_bytes(r, bytes)).collect();
        v.map(|v| median(&v))
    };
    let points: Vec<EqualBytesPoint> = marks
        .into_iter()
        .filter_map(|bytes| {
            Some(EqualBytesPoint {
                bytes,
                median_loss_a: med(a, bytes)?,
                median_loss_b: med(b, bytes)?,
            })
        })
        .collect();
    EqualBytes {
        budget,
        b_not_worse_everywhere: points.iter().all(|p| p.median_loss_b <= p.median_loss_a),
        a_not_worse_everywhere: points.iter().all(|p| p.median_loss_a <= p.median_loss_b),
        points,
    }
}

fn slot(path: &Path, cfg: &RunConfig, runs: &[RunResult], target: f64) -> SlotSummary {
    let finals: Vec<f64> = runs.iter().map(|r| r.summary.final_eval_loss).collect();
    let to_target: Vec<Option<u64>> = runs
        .iter()
        .map(|r| bytes_to_target(&r.reports, target))
        .collect();
    let reached: Option<Vec<f64>> = to_target.iter().map(|b| b.map(|b| b as f64)).collect();
    SlotSummary {
        config: path.display().to_string(),
        mode: cfg.federated.mode,
        median_final_eval_loss: median(&finals),
        final_eval_loss: finals,
        total_bytes: runs.iter().map(|r| r.summary.total_bytes).collect(),
        cum_block_bytes: runs.iter().map(|r| r.summary.total_block_bytes).collect(),
        cum_param_steps: runs.iter().map(|r| r.summary.cum_param_steps).collect(),
        bytes_to_target: to_target,
        median_bytes_to_target: reached.map(|v| median(&v)),
    }
}

/// Runs both configs once per seed (overriding `federated.seed`).
pub fn compare_configs(
    a: &RunConfig,
    b: &RunConfig,
    seeds: &[u64],
    out_dir: Option<&Path>,
) -> Result<(Vec<RunResult>, Vec<RunResult>)> {
    if !a.same_data(b) {
        return Err(Error::Config(
            "compared configs must share [task], [data], [split], vocab_size and frame_dim".into(),
        ));
    }
    if seeds.is_empty() {
        return Err(Error::Config("compare needs at least one seed".into()));
    }
    let mut runs = (Vec::new(), Vec::new());
    for (label, cfg, sink) in [("a", a, &mut runs.0), ("b", b, &mut runs.1)] {
        for &seed in seeds {
            let started = now_ms();
            let mut c = cfg.clone();
            c.federated.seed = seed;
            let r = execute(&c)?;
            if let Some(dir) = out_dir {
                write_run(&r, &dir.join(label).join(format!("seed-{seed}")), started)?;
            }
            sink.push(r);
        }
    }
    Ok(runs)
}

pub fn summarize_comparison(
    paths: (&Path, &Path),
    configs: (&RunConfig, &RunConfig),
    seeds: &[u64],
    runs: (&[RunResult], &[RunResult]),
) -> Comparison {
    let finals = |rs: &[RunResult]| {
        median(
            &rs.iter()
                .map(|r| r.summary.final_eval_loss)
                .collect::<Vec<_>>(),
        )
    };
    let (fa, fb) = (finals(runs.0), finals(runs.1));
    let target = fa.max(fb);
    let curves = |rs: &[RunResult]| rs.iter().map(|r| r.reports.clone()).collect::<Vec<_>>();
    let ratio = Fraction::new(
        u128::from(runs.1[0].summary.total_block_bytes),
        u128::from(runs.0[0].summary.total_block_bytes),
    );
    Comparison {
        schema_version: SUMMARY_SCHEMA_VERSION,
        seeds: seeds.to_vec(),
        a: slot(paths.0, configs.0, runs.0, target),
        b: slot(paths.1, configs.1, runs.1, target),
        target_loss: target,
        block_byte_ratio_value: ratio.to_f64(),
        block_byte_ratio: ratio,
        final_loss_ratio_b_over_a: fb / fa,
        equal_bytes: equal_bytes(&curves(runs.0), &curves(runs.1)),
        rng_version: RNG_VERSION.to_string(),
    }
}

/// `compare <a> <b> --seeds s1,s2,… --out <dir>`.
pub fn cmd_compare(
    a_path: &Path,
    b_path: &Path,
    seeds: &[u64],
    out_dir: &Path,
) -> Result<Comparison> {
    let a = RunConfig::load(a_path)?;
    let b = RunConfig::load(b_path)?;
    let (ra, rb) = compare_configs(&a, &b, seeds, Some(out_dir))?;
    let cmp = summarize_comparison((a_path, b_path), (&a, &b), seeds, (&ra, &rb));
    write_file(&out_dir.join(COMPARISON_FILE), to_json(&cmp).as_bytes())?;
    Ok(cmp)
}

// ---- cost / gradcheck ---------------------------------------------------

/// `cost --T --c --N --W1 --W2 [--json]`.
pub fn cmd_cost(inputs: &CostInputs, json: bool) -> Result<String> {
    inputs.validate()?;
    let report = cost_report(inputs);
    Ok(if json {
        to_json(&report)
    } else {
        report.to_string()
    })
}
