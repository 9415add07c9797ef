//! Batch runs behind the command-line front end.
//!
//! A run is one [`ExperimentConfig`]: a subcommand plus the lists of grid
//! sizes and SNRs to sweep. Every point becomes one output row (CSV or a
//! JSON array), written and flushed as soon as it is known. A failing point
//! is recorded in its row and the sweep carries on, unless `strict` is set.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::constraint::{is_admissible, BinaryArray, RllSpec};
use crate::error::{Error, Result};
use crate::exact::{brute_force_count, transfer_matrix_count, CountMethod, BRUTE_FORCE_LIMIT};
use crate::free_energy::{capacity_with_beliefs, shannon_bounds, CapacityOptions};
use crate::gbp::{GbpConfig, Schedule};
use crate::grid::build_factor_graph;
use crate::info_rate::{info_rate_sweep_with, AwgnChannel, InfoRateOptions};
use crate::region::{build_region_graph_with, plan_basic_regions, region_census, RegionGraphOptions};
use crate::sampler::draw_samples;
use crate::shape::GridShape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Capacity,
    Inforate,
    Count,
    Sample,
    Regions,
    Validate,
}

impl std::str::FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "capacity" => Command::Capacity,
            "inforate" => Command::Inforate,
            "count" => Command::Count,
            "sample" => Command::Sample,
            "regions" => Command::Regions,
            "validate" => Command::Validate,
            _ => return Err(Error::Parse(format!("unknown subcommand {s:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(Error::Parse(format!("unknown format {s:?}"))),
        }
    }
}

/// Process exit status of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success,
    ConfigError,
    PartialFailure,
    NonConverged,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        match self {
            ExitStatus::Success => 0,
            ExitStatus::ConfigError => 2,
            ExitStatus::PartialFailure => 3,
            ExitStatus::NonConverged => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub command: Command,
    pub constraint: String,
    /// Number of grid axes; the constraint string may give fewer pairs.
    pub dims: usize,
    pub sizes: Vec<GridShape>,
    pub snrs_db: Vec<f64>,
    pub samples: usize,
    pub gbp: GbpConfig,
    pub regions: RegionGraphOptions,
    pub seed: u64,
    /// Counting method; `None` picks brute force when the grid is small.
    pub method: Option<CountMethod>,
    /// Arrays to check (`validate`); `-` reads standard input.
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub format: Format,
    pub strict: bool,
    pub parallel: bool,
}

impl ExperimentConfig {
    pub fn new(command: Command, constraint: &str) -> Self {
        ExperimentConfig {
            command,
            constraint: constraint.to_string(),
            dims: 2,
            sizes: Vec::new(),
            snrs_db: Vec::new(),
            samples: 1000,
            gbp: GbpConfig::default(),
            regions: RegionGraphOptions::default(),
            seed: 0,
            method: None,
            input: None,
            out: None,
            format: Format::Csv,
            strict: false,
            parallel: false,
        }
    }

    pub fn spec(&self) -> Result<RllSpec> {
        RllSpec::parse(&self.constraint, self.dims)
    }

    /// Checks every precondition the computation relies on, so that a bad
    /// flag fails before any work starts.
    pub fn validate(&self) -> Result<()> {
        let spec = self.spec().map_err(|e| flag("--constraint", e))?;
        self.gbp.validate().map_err(|e| flag("GBP flags", e))?;
        if self.command == Command::Validate {
            if self.input.is_none() {
                return Err(Error::Parse("--input: validate needs an input file".into()));
            }
            return Ok(());
        }
        if self.sizes.is_empty() {
            return Err(Error::Parse("--size: no grid sizes given".into()));
        }
        let plan = plan_basic_regions(&spec);
        for shape in &self.sizes {
            spec.check_shape(shape).map_err(|e| flag("--size", e))?;
            let needs_plan = matches!(
                self.command,
                Command::Capacity | Command::Inforate | Command::Sample | Command::Regions
            );
            if needs_plan && plan.extents.iter().zip(shape.extents()).any(|(p, e)| p > e) {
                return Err(flag(
                    "--size",
                    Error::PlanLargerThanGrid {
                        plan: plan.extents.clone(),
                        grid: shape.extents().to_vec(),
                    },
                ));
            }
            if self.command == Command::Count {
                let method = self.method_for(shape);
                if method == CountMethod::BruteForce && shape.cell_count() > BRUTE_FORCE_LIMIT {
                    return Err(flag(
                        "--method",
                        Error::SizeGuard {
                            cells: shape.cell_count(),
                            limit: BRUTE_FORCE_LIMIT,
                        },
                    ));
                }
                if method == CountMethod::TransferMatrix && shape.ndim() != 2 {
                    return Err(Error::Parse(
                        "--method: the transfer matrix counts 2-D grids only".into(),
                    ));
                }
            }
        }
        match self.command {
            Command::Inforate => {
                if self.snrs_db.is_empty() {
                    return Err(Error::Parse("--snr: no SNR values given".into()));
                }
                for &snr in &self.snrs_db {
                    AwgnChannel::from_snr_db(snr).map_err(|e| flag("--snr", e))?;
                }
                if self.dims != 2 {
                    return Err(Error::Parse("--dims: information rates need a 2-D grid".into()));
                }
                if self.samples == 0 {
                    return Err(Error::Parse("--samples: must be positive".into()));
                }
            }
            Command::Sample if self.samples == 0 => {
                return Err(Error::Parse("--samples: must be positive".into()));
            }
            _ => {}
        }
        Ok(())
    }

    fn method_for(&self, shape: &GridShape) -> CountMethod {
        self.method.unwrap_or(if shape.cell_count() <= BRUTE_FORCE_LIMIT {
            CountMethod::BruteForce
        } else {
            CountMethod::TransferMatrix
        })
    }
}

fn flag(name: &str, e: Error) -> Error {
    match e {
        Error::Parse(msg) => Error::Parse(format!("{name}: {msg}")),
        e => Error::Parse(format!("{name}: {e}")),
    }
}

/// Parses a size list: comma-separated items, each a cube edge `m`, a range
/// of cube edges `a..b[:step]` (inclusive), or explicit extents `AxB[xC]`.
pub fn parse_sizes(text: &str, dims: usize) -> Result<Vec<GridShape>> {
    let bad = |item: &str| Error::Parse(format!("--size: cannot parse {item:?}"));
    let num = |s: &str, item: &str| s.trim().parse::<usize>().map_err(|_| bad(item));
    let mut out = Vec::new();
    for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if let Some((a, rest)) = item.split_once("..") {
            let (b, step) = match rest.split_once(':') {
                Some((b, s)) => (num(b, item)?, num(s, item)?),
                None => (num(rest, item)?, 1),
            };
            let a = num(a, item)?;
            if step == 0 || b < a {
                return Err(bad(item));
            }
            for m in (a..=b).step_by(step) {
                out.push(GridShape::cube(dims, m).map_err(|e| flag("--size", e))?);
            }
        } else if item.contains('x') {
            let extents = item
                .split('x')
                .map(|s| num(s, item))
                .collect::<Result<Vec<_>>>()?;
            out.push(GridShape::new(extents).map_err(|e| flag("--size", e))?);
        } else {
            out.push(GridShape::cube(dims, num(item, item)?).map_err(|e| flag("--size", e))?);
        }
    }
    if out.is_empty() {
        return Err(Error::Parse("--size: empty size list".into()));
    }
    Ok(out)
}

/// Parses an SNR list in dB: comma-separated values or ranges `a..b:step`
/// (inclusive of `b` when it lies on the grid).
pub fn parse_snrs(text: &str) -> Result<Vec<f64>> {
    let bad = |item: &str| Error::Parse(format!("--snr: cannot parse {item:?}"));
    let num = |s: &str, item: &str| {
        s.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| bad(item))
    };
    let mut out = Vec::new();
    for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        // A leading minus sign must not be taken for part of the `..`.
        match item.find("..") {
            Some(pos) => {
                let a = num(&item[..pos], item)?;
                let rest = &item[pos + 2..];
                let (b, step) = rest.split_once(':').ok_or_else(|| bad(item))?;
                let (b, step) = (num(b, item)?, num(step, item)?);
                if !(step > 0.0) || b < a {
                    return Err(bad(item));
                }
                let count = ((b - a) / step + 1e-9).floor() as usize + 1;
                out.extend((0..count).map(|i| a + i as f64 * step));
            }
            None => out.push(num(item, item)?),
        }
    }
    if out.is_empty() {
        return Err(Error::Parse("--snr: empty SNR list".into()));
    }
    Ok(out)
}

/// One row of a `capacity` sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityRow {
    pub m: usize,
    pub capacity_bits: Option<f64>,
    pub lower_bound: Option<f64>,
    pub upper_bound: Option<f64>,
    pub iterations: Option<usize>,
    pub residual: Option<f64>,
    pub seconds: f64,
    pub shape: String,
    pub converged: Option<bool>,
    pub consistency: Option<f64>,
    pub regions: Option<usize>,
    pub constraint: String,
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub schedule: Schedule,
    pub seed: u64,
    pub error: Option<String>,
}

/// One row of an `inforate` sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfoRateRow {
    pub snr_db: f64,
    pub rate_bits: Option<f64>,
    pub std_error: Option<f64>,
    pub h_y: Option<f64>,
    pub h_ygx: Option<f64>,
    #[serde(rename = "L")]
    pub samples: usize,
    pub seconds: f64,
    pub m: usize,
    pub shape: String,
    pub sigma2: f64,
    pub noiseless_capacity: Option<f64>,
    pub mean_iterations: Option<f64>,
    pub cold_restarts: Option<usize>,
    pub constraint: String,
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub schedule: Schedule,
    pub seed: u64,
    pub error: Option<String>,
}

/// One row of a `count` run; the count is a decimal string since it
/// quickly outgrows every fixed-width integer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountRow {
    pub m: usize,
    pub shape: String,
    pub method: CountMethod,
    pub count: Option<String>,
    pub log2: Option<f64>,
    pub bits_per_symbol: Option<f64>,
    pub seconds: f64,
    pub constraint: String,
    pub error: Option<String>,
}

/// One row of a `validate` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidateRow {
    pub index: usize,
    pub shape: String,
    pub admissible: Option<bool>,
    pub error: Option<String>,
}

/// Writes rows in the chosen format, flushing after each one.
struct RowWriter<'a> {
    format: Format,
    out: &'a mut dyn Write,
    rows: usize,
}

impl<'a> RowWriter<'a> {
    fn new(format: Format, out: &'a mut dyn Write) -> Self {
        RowWriter { format, out, rows: 0 }
    }

    fn write<T: Serialize>(&mut self, row: &T) -> Result<()> {
        match self.format {
            Format::Csv => {
                let mut w = csv::WriterBuilder::new()
                    .has_headers(self.rows == 0)
                    .from_writer(&mut *self.out);
                w.serialize(row)?;
                w.flush()?;
            }
            Format::Json => {
                self.out.write_all(if self.rows == 0 { b"[\n" } else { b",\n" })?;
                serde_json::to_writer(&mut *self.out, row)?;
            }
        }
        self.rows += 1;
        self.out.flush()?;
        Ok(())
    }

    fn finish(self) -> Result<()> {
        if self.format == Format::Json {
            self.out
                .write_all(if self.rows == 0 { b"[]\n" } else { b"\n]\n" })?;
        }
        self.out.flush()?;
        Ok(())
    }
}

/// How one point turned out, for the exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Ok,
    /// Reported with a non-convergence flag; not an error on its own.
    NotConverged,
    Failed,
    /// Failed because GBP did not converge.
    FailedToConverge,
}

impl Outcome {
    fn converged(self) -> bool {
        matches!(self, Outcome::Ok | Outcome::Failed)
    }

    fn failed(self) -> bool {
        matches!(self, Outcome::Failed | Outcome::FailedToConverge)
    }
}

/// Runs `cfg`, writing its table to `out`, and returns the exit status.
/// Diagnostics go to standard error.
pub fn run_experiment(cfg: &ExperimentConfig, out: &mut dyn Write) -> ExitStatus {
    if let Err(e) = cfg.validate() {
        eprintln!("error: {e}");
        return ExitStatus::ConfigError;
    }
    let spec = cfg.spec().expect("validated");
    let result = match cfg.command {
        Command::Capacity => run_capacity(cfg, &spec, out),
        Command::Inforate => run_inforate(cfg, &spec, out),
        Command::Count => run_count(cfg, &spec, out),
        Command::Sample => run_sample(cfg, &spec, out),
        Command::Regions => run_regions(cfg, &spec, out),
        Command::Validate => run_validate(cfg, &spec, out),
    };
    match result {
        Ok(outcomes) => {
            if cfg.strict && outcomes.iter().any(|o| !o.converged()) {
                ExitStatus::NonConverged
            } else if outcomes.iter().any(|o| o.failed()) {
                ExitStatus::PartialFailure
            } else {
                ExitStatus::Success
            }
        }
        Err(Error::Parse(msg)) => {
            eprintln!("error: {msg}");
            ExitStatus::ConfigError
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitStatus::PartialFailure
        }
    }
}

/// Computes `count` points, sequentially or on all cores, and hands each
/// result to `emit` in index order. `emit` returns false to stop early.
fn run_points<T, C, E>(count: usize, parallel: bool, compute: C, mut emit: E) -> Result<()>
where
    T: Send,
    C: Fn(usize) -> T + Sync,
    E: FnMut(usize, T) -> Result<bool>,
{
    let workers = if parallel {
        std::thread::available_parallelism().map_or(1, |n| n.get()).min(count)
    } else {
        1
    };
    if workers <= 1 {
        for i in 0..count {
            if !emit(i, compute(i))? {
                break;
            }
        }
        return Ok(());
    }
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel();
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, stop, compute) = (&next, &stop, &compute);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= count || stop.load(Ordering::SeqCst) {
                    break;
                }
                if tx.send((i, compute(i))).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let mut pending = BTreeMap::new();
        let mut due = 0;
        for (i, value) in rx {
            pending.insert(i, value);
            while let Some(value) = pending.remove(&due) {
                let keep_going = emit(due, value).inspect_err(|_| stop.store(true, Ordering::SeqCst))?;
                due += 1;
                if !keep_going {
                    stop.store(true, Ordering::SeqCst);
                    return Ok(());
                }
            }
        }
        Ok(())
    })
}

fn capacity_point(cfg: &ExperimentConfig, spec: &RllSpec, shape: &GridShape) -> (CapacityRow, Outcome) {
    let start = Instant::now();
    let options = CapacityOptions {
        gbp: cfg.gbp,
        regions: cfg.regions,
    };
    let mut row = CapacityRow {
        m: shape.extents()[0],
        capacity_bits: None,
        lower_bound: None,
        upper_bound: None,
        iterations: None,
        residual: None,
        seconds: 0.0,
        shape: shape.to_string(),
        converged: None,
        consistency: None,
        regions: None,
        constraint: cfg.constraint.clone(),
        damping: cfg.gbp.damping,
        tol: cfg.gbp.tolerance,
        max_iter: cfg.gbp.max_iterations,
        schedule: cfg.gbp.schedule,
        seed: cfg.seed,
        error: None,
    };
    let outcome = match capacity_with_beliefs(spec, shape, &options) {
        Ok((ce, _, _)) => {
            row.capacity_bits = Some(ce.capacity_bits_per_symbol);
            if let Ok(b) = shannon_bounds(&ce) {
                row.lower_bound = Some(b.lower);
                row.upper_bound = Some(b.upper);
            }
            row.iterations = Some(ce.report.iterations);
            row.residual = Some(ce.report.residual);
            row.converged = Some(ce.report.converged);
            row.consistency = Some(ce.report.consistency);
            row.regions = Some(ce.regions);
            if ce.report.converged {
                Outcome::Ok
            } else {
                Outcome::NotConverged
            }
        }
        Err(e) => {
            row.error = Some(e.to_string());
            Outcome::Failed
        }
    };
    row.seconds = start.elapsed().as_secs_f64();
    (row, outcome)
}

fn run_capacity(cfg: &ExperimentConfig, spec: &RllSpec, out: &mut dyn Write) -> Result<Vec<Outcome>> {
    let mut writer = RowWriter::new(cfg.format, out);
    let mut outcomes = Vec::new();
    run_points(
        cfg.sizes.len(),
        cfg.parallel,
        |i| capacity_point(cfg, spec, &cfg.sizes[i]),
        |_, (row, outcome)| {
            match (&row.capacity_bits, &row.error) {
                (Some(c), _) => eprintln!(
                    "capacity {} {}: {c:.6} bits/symbol, {} iterations, residual {:.2e}, {:.2} s",
                    cfg.constraint,
                    row.shape,
                    row.iterations.unwrap_or(0),
                    row.residual.unwrap_or(f64::NAN),
                    row.seconds
                ),
                (None, Some(e)) => eprintln!("capacity {} {}: failed: {e}", cfg.constraint, row.shape),
                _ => {}
            }
            if outcome == Outcome::NotConverged {
                eprintln!("warning: {} did not converge", row.shape);
            }
            writer.write(&row)?;
            outcomes.push(outcome);
            Ok(!(cfg.strict && outcome != Outcome::Ok))
        },
    )?;
    writer.finish()?;
    Ok(outcomes)
}

/// Rows for every SNR at one grid size, passed to `sink` as they finish.
fn inforate_size(
    cfg: &ExperimentConfig,
    spec: &RllSpec,
    shape: &GridShape,
    sink: &mut dyn FnMut(InfoRateRow, Outcome) -> bool,
) {
    let channels: Vec<AwgnChannel> = cfg
        .snrs_db
        .iter()
        .map(|&s| AwgnChannel::from_snr_db(s).expect("validated"))
        .collect();
    let options = InfoRateOptions {
        gbp: cfg.gbp,
        regions: cfg.regions,
    };
    let base = |channel: &AwgnChannel| InfoRateRow {
        snr_db: channel.snr_db,
        rate_bits: None,
        std_error: None,
        h_y: None,
        h_ygx: None,
        samples: cfg.samples,
        seconds: 0.0,
        m: shape.extents()[0],
        shape: shape.to_string(),
        sigma2: channel.sigma2,
        noiseless_capacity: None,
        mean_iterations: None,
        cold_restarts: None,
        constraint: cfg.constraint.clone(),
        damping: cfg.gbp.damping,
        tol: cfg.gbp.tolerance,
        max_iter: cfg.gbp.max_iterations,
        schedule: cfg.gbp.schedule,
        seed: cfg.seed,
        error: None,
    };
    let mut clock = Instant::now();
    let mut stopped = false;
    let result = info_rate_sweep_with(spec, shape, &channels, cfg.samples, cfg.seed, &options, |i, r| {
        if stopped {
            return;
        }
        let mut row = base(&channels[i]);
        let outcome = match r {
            Ok(est) => {
                row.rate_bits = Some(est.rate_bits_per_symbol);
                row.std_error = Some(est.std_error);
                row.h_y = Some(est.h_y_estimate);
                row.h_ygx = Some(est.h_y_given_x);
                row.samples = est.samples;
                row.noiseless_capacity = Some(est.noiseless_capacity_reference);
                row.mean_iterations = Some(est.mean_iterations);
                row.cold_restarts = Some(est.cold_restarts);
                Outcome::Ok
            }
            Err(e) => {
                let outcome = if is_non_convergence(&e) {
                    Outcome::FailedToConverge
                } else {
                    Outcome::Failed
                };
                row.error = Some(e.to_string());
                outcome
            }
        };
        row.seconds = clock.elapsed().as_secs_f64();
        clock = Instant::now();
        stopped = !sink(row, outcome);
    });
    if let Err(e) = result {
        // The noiseless run or the input draw failed: every SNR fails.
        let outcome = if is_non_convergence(&e) {
            Outcome::FailedToConverge
        } else {
            Outcome::Failed
        };
        for channel in &channels {
            let mut row = base(channel);
            row.error = Some(e.to_string());
            if !sink(row, outcome) {
                break;
            }
        }
    }
}

fn is_non_convergence(e: &Error) -> bool {
    match e {
        Error::NonConverged { .. } => true,
        Error::AtSample { source, .. } => is_non_convergence(source),
        _ => false,
    }
}

fn run_inforate(cfg: &ExperimentConfig, spec: &RllSpec, out: &mut dyn Write) -> Result<Vec<Outcome>> {
    let mut writer = RowWriter::new(cfg.format, out);
    let mut outcomes = Vec::new();
    let mut io_error = None;
    let mut emit = |row: InfoRateRow, outcome: Outcome| -> bool {
        match (&row.rate_bits, &row.error) {
            (Some(r), _) => eprintln!(
                "inforate {} {} snr {} dB: {r:.6} +- {:.6} bits/symbol, {:.2} s",
                cfg.constraint,
                row.shape,
                row.snr_db,
                row.std_error.unwrap_or(f64::NAN),
                row.seconds
            ),
            (None, Some(e)) => eprintln!(
                "inforate {} {} snr {} dB: failed: {e}",
                cfg.constraint, row.shape, row.snr_db
            ),
            _ => {}
        }
        if let Err(e) = writer.write(&row) {
            io_error = Some(e);
            return false;
        }
        outcomes.push(outcome);
        !(cfg.strict && outcome != Outcome::Ok)
    };
    if cfg.parallel && cfg.sizes.len() > 1 {
        run_points(
            cfg.sizes.len(),
            true,
            |i| {
                let mut rows = Vec::new();
                inforate_size(cfg, spec, &cfg.sizes[i], &mut |row, outcome| {
                    rows.push((row, outcome));
                    !(cfg.strict && outcome != Outcome::Ok)
                });
                rows
            },
            |_, rows| Ok(rows.into_iter().all(|(row, outcome)| emit(row, outcome))),
        )?;
    } else {
        for shape in &cfg.sizes {
            let mut keep_going = true;
            inforate_size(cfg, spec, shape, &mut |row, outcome| {
                keep_going = emit(row, outcome);
                keep_going
            });
            if !keep_going {
                break;
            }
        }
    }
    if let Some(e) = io_error {
        return Err(e);
    }
    writer.finish()?;
    Ok(outcomes)
}

fn run_count(cfg: &ExperimentConfig, spec: &RllSpec, out: &mut dyn Write) -> Result<Vec<Outcome>> {
    let mut writer = RowWriter::new(cfg.format, out);
    let mut outcomes = Vec::new();
    run_points(
        cfg.sizes.len(),
        cfg.parallel,
        |i| {
            let shape = &cfg.sizes[i];
            let method = cfg.method_for(shape);
            let start = Instant::now();
            let result = match method {
                CountMethod::BruteForce => brute_force_count(spec, shape),
                CountMethod::TransferMatrix => {
                    transfer_matrix_count(spec, shape.extents()[0], shape.extents()[1])
                }
            };
            let mut row = CountRow {
                m: shape.extents()[0],
                shape: shape.to_string(),
                method,
                count: None,
                log2: None,
                bits_per_symbol: None,
                seconds: 0.0,
                constraint: cfg.constraint.clone(),
                error: None,
            };
            let outcome = match result {
                Ok(c) => {
                    let log2 = c.log2();
                    row.count = Some(c.value.to_string());
                    row.log2 = Some(log2);
                    row.bits_per_symbol = Some(log2 / shape.cell_count() as f64);
                    Outcome::Ok
                }
                Err(e) => {
                    row.error = Some(e.to_string());
                    Outcome::Failed
                }
            };
            row.seconds = start.elapsed().as_secs_f64();
            (row, outcome)
        },
        |_, (row, outcome)| {
            if let Some(e) = &row.error {
                eprintln!("count {} {}: failed: {e}", cfg.constraint, row.shape);
            }
            writer.write(&row)?;
            outcomes.push(outcome);
            Ok(!(cfg.strict && outcome != Outcome::Ok))
        },
    )?;
    writer.finish()?;
    Ok(outcomes)
}

/// Separator between 3-D arrays in text form (blank lines separate layers).
const ARRAY_SEPARATOR: &str = "---";

fn run_sample(cfg: &ExperimentConfig, spec: &RllSpec, out: &mut dyn Write) -> Result<Vec<Outcome>> {
    let options = CapacityOptions {
        gbp: cfg.gbp,
        regions: cfg.regions,
    };
    let mut outcomes = Vec::new();
    let mut texts = Vec::new();
    let mut written = 0;
    for shape in &cfg.sizes {
        let result = capacity_with_beliefs(spec, shape, &options).and_then(|(ce, rg, bs)| {
            if !ce.report.converged {
                eprintln!("warning: {shape}: GBP did not converge, samples use the last iterate");
            }
            Ok((ce.report.converged, draw_samples(&rg, &bs, cfg.samples, cfg.seed)?))
        });
        let (converged, arrays) = match result {
            Ok(v) => v,
            Err(e) => {
                eprintln!("sample {shape}: failed: {e}");
                outcomes.push(Outcome::Failed);
                if cfg.strict {
                    break;
                }
                continue;
            }
        };
        eprintln!("sample {shape}: {} arrays", arrays.len());
        for a in &arrays {
            let text = a.to_text();
            match cfg.format {
                Format::Csv => {
                    if written > 0 {
                        out.write_all(separator(shape.ndim()).as_bytes())?;
                    }
                    out.write_all(text.as_bytes())?;
                    written += 1;
                }
                Format::Json => texts.push(text),
            }
        }
        out.flush()?;
        outcomes.push(if converged { Outcome::Ok } else { Outcome::NotConverged });
        if cfg.strict && !converged {
            break;
        }
    }
    if cfg.format == Format::Json {
        serde_json::to_writer_pretty(&mut *out, &texts)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(outcomes)
}

/// Text placed between consecutive arrays.
fn separator(ndim: usize) -> String {
    if ndim == 3 {
        format!("{ARRAY_SEPARATOR}\n")
    } else {
        "\n".to_string()
    }
}

/// Splits text holding several arrays: 2-D arrays are separated by blank
/// lines, 3-D arrays by a `---` line (their layers by blank lines).
pub fn split_arrays(text: &str, dims: usize) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    for line in text.lines() {
        let t = line.trim();
        let boundary = if dims == 3 { t == ARRAY_SEPARATOR } else { t.is_empty() };
        if boundary {
            if !current.trim().is_empty() {
                out.push(std::mem::take(&mut current));
            }
            current.clear();
        } else {
            current.push_str(line);
            current.push('\n');
        }
    }
    if !current.trim().is_empty() {
        out.push(current);
    }
    out
}

fn run_regions(cfg: &ExperimentConfig, spec: &RllSpec, out: &mut dyn Write) -> Result<Vec<Outcome>> {
    let mut censuses = Vec::new();
    let mut outcomes = Vec::new();
    for shape in &cfg.sizes {
        let result = build_factor_graph(shape, spec)
            .and_then(|g| build_region_graph_with(g, &plan_basic_regions(spec), cfg.regions));
        match result {
            Ok(rg) => {
                let census = region_census(&rg);
                eprintln!(
                    "regions {shape}: {} regions, {} edges, valid: {}",
                    census.regions, census.edges, census.valid
                );
                outcomes.push(if census.valid { Outcome::Ok } else { Outcome::Failed });
                censuses.push(census);
            }
            Err(e) => {
                eprintln!("regions {shape}: failed: {e}");
                outcomes.push(Outcome::Failed);
            }
        }
        if cfg.strict && outcomes.last() != Some(&Outcome::Ok) {
            break;
        }
    }
    serde_json::to_writer_pretty(&mut *out, &censuses)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(outcomes)
}

fn run_validate(cfg: &ExperimentConfig, spec: &RllSpec, out: &mut dyn Write) -> Result<Vec<Outcome>> {
    let path = cfg.input.as_ref().expect("validated");
    let text = if path.as_os_str() == "-" {
        std::io::read_to_string(std::io::stdin())?
    } else {
        std::fs::read_to_string(path)
            .map_err(|e| Error::Parse(format!("--input {}: {e}", path.display())))?
    };
    let mut writer = RowWriter::new(cfg.format, out);
    let mut outcomes = Vec::new();
    for (index, chunk) in split_arrays(&text, cfg.dims).iter().enumerate() {
        let mut row = ValidateRow {
            index,
            shape: String::new(),
            admissible: None,
            error: None,
        };
        let result = BinaryArray::parse_text(chunk).and_then(|a| {
            row.shape = a.shape().to_string();
            is_admissible(&a, spec)
        });
        match result {
            Ok(ok) => {
                row.admissible = Some(ok);
                outcomes.push(Outcome::Ok);
            }
            Err(e) => {
                eprintln!("array {index}: {e}");
                row.error = Some(e.to_string());
                outcomes.push(Outcome::Failed);
            }
        }
        writer.write(&row)?;
    }
    let bad = outcomes.len()
        - outcomes.iter().filter(|o| **o == Outcome::Ok).count();
    eprintln!("validate: {} arrays, {bad} unreadable", outcomes.len());
    writer.finish()?;
    Ok(outcomes)
}
