//! Stream verification and wall-clock benchmarking.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use conystrom_core::continual::{ContinualConfig, RefreshPolicy};
use conystrom_core::cost::{Variant, VariantCost};
use conystrom_core::landmarks::{kmeans_landmarks, LandmarkPair};
use conystrom_core::tensor::rel_frobenius_error;
use serde::{Deserialize, Serialize};

use crate::engine::{Engine, Window};
use crate::error::{CliError, CliResult};
use crate::matrix_csv::read_matrix;
use crate::stream::TokenStream;

pub const REPORT_HEADER: [&str; 5] = ["step", "rel_error", "flops_analytic", "wall_ns", "landmark_updated"];
const SNAPSHOT_FORMAT: u32 = 1;
const LANDMARK_SALT: u64 = 0x6c61_6e64_6d61_726b;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub variant: Variant,
    pub n: usize,
    pub d: usize,
    /// Landmarks; required exactly for Nystrom variants.
    pub m: Option<usize>,
    pub steps: usize,
    pub seed: u64,
    pub pinv_iters: usize,
    /// `None` rebuilds caches every `10 n` steps, `Some(0)` never.
    pub refresh_interval: Option<usize>,
    pub tol: f64,
    /// Matrix file used as both query and key landmarks of fixed-landmark variants.
    pub landmarks: Option<PathBuf>,
}

impl RunConfig {
    pub fn validate(&self) -> CliResult<()> {
        let usage = |msg: &str| Err(CliError::Usage(msg.into()));
        if self.n == 0 || self.d == 0 {
            return usage("--n and --d must be at least 1");
        }
        if self.steps == 0 {
            return usage("--steps must be at least 1");
        }
        if !(self.tol > 0.0) {
            return usage("--tol must be positive");
        }
        if self.pinv_iters == 0 {
            return usage("--pinv-iters must be at least 1");
        }
        match (self.variant.is_nystrom(), self.m) {
            (true, None) if self.landmarks.is_none() => usage("Nystrom variants need --m"),
            (true, Some(m)) if m == 0 || m > self.n => usage("--m must satisfy 1 <= m <= n"),
            (false, Some(_)) => usage("--m only applies to Nystrom variants"),
            _ => Ok(()),
        }
    }

    pub fn continual_config(&self) -> ContinualConfig {
        ContinualConfig {
            pinv_iters: self.pinv_iters,
            refresh: match self.refresh_interval {
                None => RefreshPolicy::default(),
                Some(0) => RefreshPolicy::Never,
                Some(k) => RefreshPolicy::Every(k),
            },
        }
    }

    fn uses_fixed_landmarks(&self) -> bool {
        matches!(self.variant, Variant::NyFix | Variant::CoNySiFix | Variant::CoNyReFix)
    }

    /// Fixed landmarks: from `--landmarks`, else k-means over a separate seeded token set.
    fn fixed_landmarks(&self) -> CliResult<Option<LandmarkPair>> {
        if !self.uses_fixed_landmarks() {
            return Ok(None);
        }
        if let Some(path) = &self.landmarks {
            let l = read_matrix(BufReader::new(File::open(path)?))?;
            if l.cols() != self.d {
                return Err(CliError::Usage(format!("landmark file has d={}, run uses d={}", l.cols(), self.d)));
            }
            if self.m.is_some_and(|m| m != l.rows()) {
                return Err(CliError::Usage(format!("landmark file has {} rows, --m is {:?}", l.rows(), self.m)));
            }
            return Ok(Some(LandmarkPair::new(l.clone(), l)?));
        }
        let m = self.landmark_count()?;
        let train = TokenStream::new(self.seed ^ LANDMARK_SALT, self.d).block(256.max(8 * m));
        let q = kmeans_landmarks(&train.q, m, self.seed, 100)?;
        let k = kmeans_landmarks(&train.k, m, self.seed.wrapping_add(1), 100)?;
        Ok(Some(LandmarkPair::new(q, k)?))
    }

    fn landmark_count(&self) -> CliResult<usize> {
        self.m.ok_or_else(|| CliError::Usage("Nystrom variants need --m".into()))
    }

    fn cost(&self, m: usize) -> CliResult<VariantCost> {
        let m = if self.variant.is_nystrom() { m } else { 0 };
        VariantCost::new(self.variant, self.n as u64, self.d as u64, m as u64)
            .map_err(|e| CliError::Usage(e.to_string()))
    }
}

/// One row of the per-step report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StreamReport {
    pub step: usize,
    pub rel_error: f64,
    pub flops_analytic: u64,
    pub wall_ns: u64,
    pub landmark_updated: bool,
}

/// Everything needed to resume a verification run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub format: u32,
    pub config: RunConfig,
    pub steps_done: usize,
    pub stream: TokenStream,
    pub window: Window,
    pub engine: Engine,
}

impl Snapshot {
    pub fn load(path: &Path) -> CliResult<Self> {
        let s: Snapshot = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if s.format != SNAPSHOT_FORMAT {
            return Err(CliError::Parse(format!("unsupported snapshot format {}", s.format)));
        }
        s.engine.validate()?;
        s.window.0.validate()?;
        if s.engine.variant() != s.config.variant || s.window.0.n() != s.config.n || s.window.0.d() != s.config.d {
            return Err(CliError::Parse("snapshot engine does not match its configuration".into()));
        }
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut w, self)?;
        w.flush()?;
        Ok(())
    }
}

fn fresh(config: &RunConfig) -> CliResult<Snapshot> {
    config.validate()?;
    let mut stream = TokenStream::new(config.seed, config.d);
    let window = stream.block(config.n);
    let landmarks = config.fixed_landmarks()?;
    let m = landmarks.as_ref().map(|l| l.m()).or(config.m).unwrap_or(0);
    let engine = Engine::init(config.variant, &window, m, landmarks, config.continual_config())?;
    let mut config = config.clone();
    if config.variant.is_nystrom() {
        config.m = Some(m);
    }
    Ok(Snapshot {
        format: SNAPSHOT_FORMAT,
        config,
        steps_done: 0,
        stream,
        window: Window(window),
        engine,
    })
}

/// Options of `verify` beyond the run configuration.
#[derive(Debug, Clone, Default)]
pub struct VerifyOptions {
    pub load_state: Option<PathBuf>,
    pub save_state: Option<PathBuf>,
}

/// Steps the variant and its oracle side by side, writing one report row per step.
///
/// A loaded snapshot supplies variant, sizes, seed and pinv settings; `steps` and
/// `tol` still come from `config`.
pub fn verify<W: Write>(config: &RunConfig, opts: &VerifyOptions, out: W) -> CliResult<Vec<StreamReport>> {
    let mut snap = match &opts.load_state {
        Some(path) => {
            let mut s = Snapshot::load(path)?;
            s.config.steps = config.steps;
            s.config.tol = config.tol;
            s.config.validate()?;
            s
        }
        None => fresh(config)?,
    };
    let cfg = snap.config.clone();
    let cost = cfg.cost(cfg.m.unwrap_or(0))?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_HEADER)?;
    let mut reports = Vec::with_capacity(cfg.steps);
    let mut first_failure = None;
    for _ in 0..cfg.steps {
        let step = snap.steps_done + 1;
        let token = snap.stream.block(1);
        let t0 = Instant::now();
        let out = snap.engine.step(&token, 0).map_err(|source| CliError::Step { step, source })?;
        let wall_ns = t0.elapsed().as_nanos() as u64;
        snap.window.push(&token, 0);
        snap.steps_done = step;
        let want = snap
            .engine
            .oracle(&snap.window.0, cfg.pinv_iters)
            .map_err(|source| CliError::Step { step, source })?;
        let rel_error = rel_frobenius_error(&out.output, &want)?;
        let report = StreamReport {
            step,
            rel_error,
            flops_analytic: snap.engine.flops_analytic(&cost, out.landmark_updated)?,
            wall_ns,
            landmark_updated: out.landmark_updated,
        };
        w.write_record([
            report.step.to_string(),
            format!("{:e}", report.rel_error),
            report.flops_analytic.to_string(),
            report.wall_ns.to_string(),
            report.landmark_updated.to_string(),
        ])?;
        if first_failure.is_none() && !(rel_error <= cfg.tol) {
            first_failure = Some((step, rel_error));
        }
        reports.push(report);
    }
    w.flush()?;
    if let Some(path) = &opts.save_state {
        snap.save(path)?;
    }
    match first_failure {
        Some((step, rel_error)) => Err(CliError::Verification {
            step,
            rel_error,
            tol: cfg.tol,
        }),
        None => Ok(reports),
    }
}

/// Steady-state timing summary for one window length.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub variant: Variant,
    pub n: usize,
    pub d: usize,
    pub m: usize,
    pub steps: usize,
    pub mean_ns: f64,
    pub p50_ns: u64,
    pub p95_ns: u64,
    /// Mean cost-model FLOPs over the measured steps.
    pub flops_analytic: f64,
}

fn percentile(sorted: &[u64], p: f64) -> u64 {
    let idx = ((sorted.len() as f64 * p).ceil() as usize).clamp(1, sorted.len()) - 1;
    sorted[idx]
}

/// Times `config.steps` steps after `warmup` discarded ones (default `n`) for each window length.
pub fn bench(config: &RunConfig, ns: &[usize], warmup: Option<usize>) -> CliResult<Vec<BenchRow>> {
    if ns.is_empty() {
        return Err(CliError::Usage("--n needs at least one window length".into()));
    }
    let mut rows = Vec::new();
    for &n in ns {
        let cfg = RunConfig { n, ..config.clone() };
        let mut snap = fresh(&cfg)?;
        let m = snap.config.m.unwrap_or(0);
        let cost = cfg.cost(m)?;
        let warm = warmup.unwrap_or(n);
        let tokens = snap.stream.block(warm + cfg.steps);
        for i in 0..warm {
            snap.engine.step(&tokens, i).map_err(|source| CliError::Step { step: i + 1, source })?;
        }
        let mut times = Vec::with_capacity(cfg.steps);
        let mut flops = 0.0;
        for i in warm..warm + cfg.steps {
            let t0 = Instant::now();
            let out = snap.engine.step(&tokens, i).map_err(|source| CliError::Step { step: i + 1, source })?;
            times.push(t0.elapsed().as_nanos() as u64);
            std::hint::black_box(&out.output);
            flops += snap.engine.flops_analytic(&cost, out.landmark_updated)? as f64;
        }
        let mean_ns = times.iter().sum::<u64>() as f64 / times.len() as f64;
        times.sort_unstable();
        rows.push(BenchRow {
            variant: cfg.variant,
            n,
            d: cfg.d,
            m,
            steps: cfg.steps,
            mean_ns,
            p50_ns: percentile(&times, 0.5),
            p95_ns: percentile(&times, 0.95),
            flops_analytic: flops / cfg.steps as f64,
        });
    }
    Ok(rows)
}

pub fn write_bench<W: Write>(rows: &[BenchRow], out: W) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["variant", "n", "d", "m", "steps", "mean_ns", "p50_ns", "p95_ns", "flops_analytic"])?;
    for r in rows {
        w.write_record([
            r.variant.to_string(),
            r.n.to_string(),
            r.d.to_string(),
            r.m.to_string(),
            r.steps.to_string(),
            format!("{:.1}", r.mean_ns),
            r.p50_ns.to_string(),
            r.p95_ns.to_string(),
            format!("{:.1}", r.flops_analytic),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Opens `path` for writing, or stdout when absent.
pub fn output(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}
